//! Eulerian solver for the kernel-discrepancy gradient flow on S² with the
//! arccosine kernel: latitude–longitude finite volumes, donor-cell upwind
//! fluxes, and longitude-convolution kernel sums.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{cumulative_sqrt_loss, LossCurve};
use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::par;

type V3 = [f64; 3];

fn dot3(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm3(a: &V3) -> f64 {
    dot3(a, a).sqrt()
}

fn angle(a: &V3, b: &V3) -> f64 {
    norm3(&cross3(a, b)).atan2(dot3(a, b))
}

fn spherical(colat: f64, lon: f64) -> V3 {
    let s = colat.sin();
    [s * lon.cos(), s * lon.sin(), colat.cos()]
}

/// Interface between cells `a` and `b`; `normal` is the unit tangent normal at
/// the edge midpoint pointing from `a` into `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub normal: V3,
}

/// Latitude–longitude tiling; cell `(i, j)` has index `i * n_lon + j` and
/// spans colatitudes `[iΔφ, (i+1)Δφ]`, longitudes `[jΔλ, (j+1)Δλ]`. Cells
/// in the polar rows are triangles meeting at the pole.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    n_lat: usize,
    n_lon: usize,
    centers: Vec<V3>,
    areas: Vec<f64>,
    edges: Vec<GridEdge>,
    adjacency: Vec<Vec<usize>>,
}

pub fn build_grid(n_lat: usize, n_lon: usize) -> Result<SphereGrid> {
    if n_lat < 4 || n_lon < 8 {
        return Err(invalid(format!("grid needs n_lat >= 4 and n_lon >= 8, got ({n_lat}, {n_lon})")));
    }
    let dphi = PI / n_lat as f64;
    let dlam = 2.0 * PI / n_lon as f64;
    let colat = |i: usize| i as f64 * dphi;
    let idx = |i: usize, j: usize| i * n_lon + j;
    let mut centers = Vec::with_capacity(n_lat * n_lon);
    let mut areas = Vec::with_capacity(n_lat * n_lon);
    for i in 0..n_lat {
        let (a, b) = (colat(i), colat(i + 1));
        // cos a - cos b without cancellation
        let band = 2.0 * (0.5 * (a + b)).sin() * (0.5 * (b - a)).sin();
        for j in 0..n_lon {
            centers.push(spherical(0.5 * (a + b), (j as f64 + 0.5) * dlam));
            areas.push(dlam * band);
        }
    }
    let mut edges = Vec::new();
    for i in 0..n_lat {
        for j in 0..n_lon {
            let lon = (j + 1) as f64 * dlam;
            edges.push(GridEdge {
                a: idx(i, j),
                b: idx(i, (j + 1) % n_lon),
                length: dphi,
                normal: [-lon.sin(), lon.cos(), 0.0],
            });
            if i + 1 < n_lat {
                let (phi, lam) = (colat(i + 1), (j as f64 + 0.5) * dlam);
                edges.push(GridEdge {
                    a: idx(i, j),
                    b: idx(i + 1, j),
                    length: dlam * phi.sin(),
                    normal: [phi.cos() * lam.cos(), phi.cos() * lam.sin(), -phi.sin()],
                });
            }
        }
    }
    let mut adjacency = vec![Vec::with_capacity(4); n_lat * n_lon];
    for (e, edge) in edges.iter().enumerate() {
        adjacency[edge.a].push(e);
        adjacency[edge.b].push(e);
    }
    Ok(SphereGrid { n_lat, n_lon, centers, areas, edges, adjacency })
}

impl SphereGrid {
    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[V3] {
        &self.centers
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn edges(&self) -> &[GridEdge] {
        &self.edges
    }

    /// `(neighbor, shared edge length)` for every edge of cell `c`.
    pub fn neighbors(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency[c].iter().map(move |&e| {
            let edge = &self.edges[e];
            (if edge.a == c { edge.b } else { edge.a }, edge.length)
        })
    }

    pub fn dphi(&self) -> f64 {
        PI / self.n_lat as f64
    }

    pub fn dlam(&self) -> f64 {
        2.0 * PI / self.n_lon as f64
    }

    /// Colatitude bounds of row `i`.
    pub fn row_bounds(&self, i: usize) -> (f64, f64) {
        (i as f64 * self.dphi(), (i + 1) as f64 * self.dphi())
    }

    /// Cell containing a (not necessarily unit) direction.
    pub fn cell_of(&self, x: &V3) -> Result<usize> {
        let r = norm3(x);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateProjection);
        }
        let colat = (x[2] / r).clamp(-1.0, 1.0).acos();
        let lon = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
        let i = ((colat / self.dphi()) as usize).min(self.n_lat - 1);
        let j = ((lon / self.dlam()) as usize).min(self.n_lon - 1);
        Ok(i * self.n_lon + j)
    }
}

/// Cell masses of a probability measure on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub n_lat: usize,
    pub n_lon: usize,
    pub masses: Vec<f64>,
}

impl DensityField {
    pub fn total(&self) -> f64 {
        par::pairwise_sum(&self.masses)
    }

    pub fn min(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn same_grid(&self, grid: &SphereGrid) -> bool {
        self.n_lat == grid.n_lat && self.n_lon == grid.n_lon && self.masses.len() == grid.len()
    }

    /// Mass per unit area.
    pub fn densities(&self, grid: &SphereGrid) -> Vec<f64> {
        self.masses.iter().zip(grid.areas()).map(|(m, a)| m / a).collect()
    }

    /// Unit mass-weighted mean direction (zero vector if the mean vanishes).
    pub fn mean_direction(&self, grid: &SphereGrid) -> V3 {
        let mut s = [0.0; 3];
        for (m, c) in self.masses.iter().zip(grid.centers()) {
            for p in 0..3 {
                s[p] += m * c[p];
            }
        }
        let n = norm3(&s);
        if n > 0.0 { [s[0] / n, s[1] / n, s[2] / n] } else { s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfComponent {
    pub mean: V3,
    pub kappa: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub direction: V3,
    pub weight: f64,
}

/// Density families on S².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    Uniform,
    VmfMixture { components: Vec<VmfComponent> },
    /// Uniform on `{z_min <= x₃ <= z_max}`.
    UniformBand { z_min: f64, z_max: f64 },
    PointMasses { points: Vec<PointMass> },
}

impl DensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            DensityKind::Uniform => "uniform",
            DensityKind::VmfMixture { .. } => "vmf_mixture",
            DensityKind::UniformBand { .. } => "uniform_band",
            DensityKind::PointMasses { .. } => "point_masses",
        }
    }
}

/// Normalized vMF density on S²: `κ / (4π sinh κ) exp(κ μ·x)`.
pub fn vmf_density(mean: &V3, kappa: f64, x: &V3) -> f64 {
    if kappa == 0.0 {
        return 1.0 / (4.0 * PI);
    }
    kappa / (2.0 * PI * -(-2.0 * kappa).exp_m1()) * (kappa * (dot3(mean, x) - 1.0)).exp()
}

const CELL_QUADRATURE: usize = 8;

/// Exact-to-quadrature-precision mass of one vMF in every cell, integrating
/// in `(cos φ, λ)` where the area element is flat.
pub fn vmf_cell_masses(grid: &SphereGrid, mean: &V3, kappa: f64) -> Vec<f64> {
    let gl = GaussLegendre::new(CELL_QUADRATURE.try_into().expect("nonzero order"));
    let nodes: Vec<(f64, f64)> = gl.iter().map(|(x, w)| (*x, *w)).collect();
    let n_lon = grid.n_lon;
    let dlam = grid.dlam();
    par::map_indices(grid.len(), |c| {
        let (i, j) = (c / n_lon, c % n_lon);
        let (a, b) = grid.row_bounds(i);
        let (u0, u1) = (b.cos(), a.cos());
        let (l0, l1) = (j as f64 * dlam, (j + 1) as f64 * dlam);
        let mut s = 0.0;
        for &(xu, wu) in &nodes {
            let u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * xu;
            let r = (1.0 - u * u).max(0.0).sqrt();
            for &(xl, wl) in &nodes {
                let lam = 0.5 * (l0 + l1) + 0.5 * (l1 - l0) * xl;
                s += wu * wl * vmf_density(mean, kappa, &[r * lam.cos(), r * lam.sin(), u]);
            }
        }
        s * 0.25 * (u1 - u0) * (l1 - l0)
    })
}

fn unit(v: &V3) -> Result<V3> {
    let n = norm3(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid("direction must be nonzero"));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

pub fn target_density(kind: &DensityKind, grid: &SphereGrid) -> Result<DensityField> {
    let mut masses = match kind {
        DensityKind::Uniform => grid.areas().to_vec(),
        DensityKind::VmfMixture { components } => {
            if components.is_empty() {
                return Err(invalid("empty vMF mixture"));
            }
            let mut out = vec![0.0; grid.len()];
            for comp in components {
                if !(comp.weight > 0.0) || !(comp.kappa >= 0.0) {
                    return Err(invalid("vMF components need positive weight and nonnegative kappa"));
                }
                let m = vmf_cell_masses(grid, &unit(&comp.mean)?, comp.kappa);
                out.iter_mut().zip(m).for_each(|(o, v)| *o += comp.weight * v);
            }
            out
        }
        DensityKind::UniformBand { z_min, z_max } => {
            if !(-1.0 <= *z_min && z_min < z_max && *z_max <= 1.0) {
                return Err(invalid("band needs -1 <= z_min < z_max <= 1"));
            }
            let dlam = grid.dlam();
            (0..grid.len())
                .map(|c| {
                    let (a, b) = grid.row_bounds(c / grid.n_lon);
                    let lo = b.cos().max(*z_min);
                    let hi = a.cos().min(*z_max);
                    dlam * (hi - lo).max(0.0)
                })
                .collect()
        }
        DensityKind::PointMasses { points } => {
            if points.is_empty() {
                return Err(invalid("empty point-mass list"));
            }
            let mut out = vec![0.0; grid.len()];
            for p in points {
                if !(p.weight > 0.0) {
                    return Err(invalid("point masses need positive weight"));
                }
                out[grid.cell_of(&p.direction)?] += p.weight;
            }
            out
        }
    };
    let total = par::pairwise_sum(&masses);
    if !(total > 0.0) {
        return Err(invalid("density has zero mass on the grid"));
    }
    masses.iter_mut().for_each(|m| *m /= total);
    Ok(DensityField { n_lat: grid.n_lat, n_lon: grid.n_lon, masses })
}

/// `K(θ) = (sin θ + (π − θ) cos θ) / 2π` on unit vectors.
fn arccos_unit(theta: f64) -> f64 {
    (theta.sin() + (PI - theta) * theta.cos()) / (2.0 * PI)
}

const CHANNELS: usize = 4;

/// Kernel sums over the grid in `O(n_lat² n_lon log n_lon)`: the kernel
/// between rows `i` and `i'` depends only on the longitude offset, so each
/// row pair is a circular correlation.
pub struct ArccosConvolver {
    n_lat: usize,
    n_lon: usize,
    /// `[(i * n_lat + i') * CHANNELS + ch][k]`, conjugated.
    spectra: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    sin_lon: Vec<f64>,
    cos_lon: Vec<f64>,
}

impl std::fmt::Debug for ArccosConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArccosConvolver").field("n_lat", &self.n_lat).field("n_lon", &self.n_lon).finish()
    }
}

/// Potential `ψ_c = Σ δm K(w_c, ·)` and unprojected drift `Σ δm k₀ w'`.
#[derive(Debug, Clone)]
pub struct KernelSums {
    pub potential: Vec<f64>,
    pub drift: Vec<V3>,
}

impl ArccosConvolver {
    pub fn new(grid: &SphereGrid) -> Self {
        let (n_lat, n_lon) = (grid.n_lat, grid.n_lon);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n_lon);
        let inv = planner.plan_fft_inverse(n_lon);
        let dlam = grid.dlam();
        let centers = grid.centers();
        let blocks: Vec<Vec<Complex<f64>>> = par::map_indices(n_lat * n_lat, |pair| {
            let (i, i2) = (pair / n_lat, pair % n_lat);
            let w = centers[i * n_lon];
            let (s2, c2) = {
                let (a, b) = grid.row_bounds(i2);
                let mid = 0.5 * (a + b);
                (mid.sin(), mid.cos())
            };
            let mut buf = vec![Complex::new(0.0, 0.0); CHANNELS * n_lon];
            for k in 0..n_lon {
                let theta = angle(&w, &centers[i2 * n_lon + k]);
                let k0 = (PI - theta) / (2.0 * PI);
                let dl = k as f64 * dlam;
                buf[k] = Complex::new(arccos_unit(theta), 0.0);
                buf[n_lon + k] = Complex::new(s2 * k0 * dl.cos(), 0.0);
                buf[2 * n_lon + k] = Complex::new(s2 * k0 * dl.sin(), 0.0);
                buf[3 * n_lon + k] = Complex::new(c2 * k0, 0.0);
            }
            for ch in buf.chunks_exact_mut(n_lon) {
                fwd.process(ch);
                ch.iter_mut().for_each(|z| *z = z.conj());
            }
            buf
        });
        let lon: Vec<f64> = (0..n_lon).map(|j| (j as f64 + 0.5) * dlam).collect();
        Self {
            n_lat,
            n_lon,
            spectra: blocks.concat(),
            fwd,
            inv,
            sin_lon: lon.iter().map(|l| l.sin()).collect(),
            cos_lon: lon.iter().map(|l| l.cos()).collect(),
        }
    }

    pub fn apply(&self, delta: &[f64]) -> KernelSums {
        let (n_lat, n_lon) = (self.n_lat, self.n_lon);
        let rows: Vec<Vec<Complex<f64>>> = par::map_indices(n_lat, |i2| {
            let mut r: Vec<Complex<f64>> = delta[i2 * n_lon..(i2 + 1) * n_lon].iter().map(|&x| Complex::new(x, 0.0)).collect();
            self.fwd.process(&mut r);
            r
        });
        let scale = 1.0 / n_lon as f64;
        let out: Vec<Vec<(f64, V3)>> = par::map_indices(n_lat, |i| {
            let mut acc = vec![Complex::new(0.0, 0.0); CHANNELS * n_lon];
            for (i2, x) in rows.iter().enumerate() {
                let base = (i * n_lat + i2) * CHANNELS * n_lon;
                let spec = &self.spectra[base..base + CHANNELS * n_lon];
                for (a, (s, xv)) in acc.iter_mut().zip(spec.iter().zip(x.iter().cycle())) {
                    *a += s * xv;
                }
            }
            for ch in acc.chunks_exact_mut(n_lon) {
                self.inv.process(ch);
            }
            (0..n_lon)
                .map(|j| {
                    let psi = acc[j].re * scale;
                    let (x, y, z) = (acc[n_lon + j].re * scale, acc[2 * n_lon + j].re * scale, acc[3 * n_lon + j].re * scale);
                    let (s, c) = (self.sin_lon[j], self.cos_lon[j]);
                    (psi, [x * c - y * s, x * s + y * c, z])
                })
                .collect()
        });
        let (potential, drift) = out.into_iter().flatten().unzip();
        KernelSums { potential, drift }
    }
}

/// Per-cell velocity, potential, and the discrepancy `L = Σ δm ψ`.
#[derive(Debug, Clone)]
pub struct GridVelocity {
    pub velocity: Vec<V3>,
    pub potential: Vec<f64>,
    pub loss: f64,
}

fn signed_difference(rho: &DensityField, rho_star: &DensityField, grid: &SphereGrid) -> Result<Vec<f64>> {
    if !rho.same_grid(grid) || !rho_star.same_grid(grid) {
        return Err(Error::GridMismatch);
    }
    Ok(rho.masses.iter().zip(&rho_star.masses).map(|(a, b)| a - b).collect())
}

fn assemble(grid: &SphereGrid, delta: &[f64], sums: KernelSums) -> GridVelocity {
    let velocity = grid
        .centers()
        .iter()
        .zip(&sums.drift)
        .map(|(w, v)| {
            let c = dot3(w, v);
            [c * w[0] - v[0], c * w[1] - v[1], c * w[2] - v[2]]
        })
        .collect();
    let terms: Vec<f64> = delta.iter().zip(&sums.potential).map(|(d, p)| d * p).collect();
    GridVelocity { velocity, loss: par::pairwise_sum(&terms), potential: sums.potential }
}

/// `ν(w) = P_w(Σ m*_c ∇K(w, w_c) − Σ m_c ∇K(w, w_c))` at every cell center.
pub fn grid_velocity(grid: &SphereGrid, conv: &ArccosConvolver, rho: &DensityField, rho_star: &DensityField) -> Result<GridVelocity> {
    let delta = signed_difference(rho, rho_star, grid)?;
    if conv.n_lat != grid.n_lat || conv.n_lon != grid.n_lon {
        return Err(Error::GridMismatch);
    }
    let sums = conv.apply(&delta);
    Ok(assemble(grid, &delta, sums))
}

/// Same as [`grid_velocity`] by the direct `O(C²)` double sum.
pub fn grid_velocity_direct(grid: &SphereGrid, rho: &DensityField, rho_star: &DensityField) -> Result<GridVelocity> {
    let delta = signed_difference(rho, rho_star, grid)?;
    let k = KernelSpec::ArccosRelu;
    let centers = grid.centers();
    let per_cell: Vec<(f64, V3)> = par::map_indices(grid.len(), |c| {
        let w = &centers[c];
        let (mut psi, mut g) = (0.0, [0.0; 3]);
        for (c2, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            psi += d * k.eval(w, &centers[c2]);
            let gr = k.grad(w, &centers[c2]);
            for p in 0..3 {
                g[p] += d * gr[p];
            }
        }
        (psi, g)
    });
    let (potential, drift) = per_cell.into_iter().unzip();
    Ok(assemble(grid, &delta, KernelSums { potential, drift }))
}

pub const DEFAULT_CFL: f64 = 0.5;

fn edge_normal_speed(edge: &GridEdge, velocity: &[V3]) -> f64 {
    let (va, vb) = (&velocity[edge.a], &velocity[edge.b]);
    0.5 * (dot3(va, &edge.normal) + dot3(vb, &edge.normal))
}

/// Largest `dt` with `dt · (outflow rate) <= cfl` in every cell.
pub fn admissible_dt(grid: &SphereGrid, velocity: &[V3], cfl: f64) -> f64 {
    let mut out_rate = vec![0.0; grid.len()];
    for edge in grid.edges() {
        let u = edge_normal_speed(edge, velocity);
        let donor = if u > 0.0 { edge.a } else { edge.b };
        out_rate[donor] += edge.length * u.abs();
    }
    let worst = out_rate.iter().zip(grid.areas()).map(|(r, a)| r / a).fold(0.0, f64::max);
    if worst > 0.0 { cfl / worst } else { f64::INFINITY }
}

/// Donor-cell update: each edge carries `dt · len · u_n · (m/A)_upwind`,
/// subtracted from one cell and added to the other.
pub fn upwind_step(grid: &SphereGrid, rho: &DensityField, velocity: &[V3], dt: f64, cfl: f64) -> Result<DensityField> {
    if !rho.same_grid(grid) || velocity.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let admissible = admissible_dt(grid, velocity, cfl);
    if dt > admissible * (1.0 + 1e-12) {
        return Err(Error::CflError { dt, admissible });
    }
    let areas = grid.areas();
    let flux: Vec<f64> = grid
        .edges()
        .iter()
        .map(|e| {
            let u = edge_normal_speed(e, velocity);
            let donor = if u > 0.0 { e.a } else { e.b };
            dt * e.length * u * rho.masses[donor] / areas[donor]
        })
        .collect();
    let mut masses = rho.masses.clone();
    par::for_each_row_mut(&mut masses, 1, |c, m| {
        for &e in &grid.adjacency[c] {
            let edge = &grid.edges[e];
            if edge.a == c {
                m[0] -= flux[e];
            } else {
                m[0] += flux[e];
            }
        }
    });
    Ok(DensityField { n_lat: rho.n_lat, n_lon: rho.n_lon, masses })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Adaptive { cfl: f64, dt_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub target: DensityKind,
    pub init: DensityKind,
    pub dt: DtPolicy,
    pub horizon: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Hard cap on the number of steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl EulerConfig {
    pub fn new(n_lat: usize, n_lon: usize, target: DensityKind, horizon: f64) -> Self {
        Self {
            n_lat,
            n_lon,
            target,
            init: DensityKind::Uniform,
            dt: DtPolicy::Adaptive { cfl: DEFAULT_CFL, dt_max: 1.0 },
            horizon,
            snapshot_times: Vec::new(),
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0) {
            return Err(invalid("horizon must be nonnegative"));
        }
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt > 0.0) => return Err(invalid("dt must be positive")),
            DtPolicy::Adaptive { cfl, dt_max } if !(cfl > 0.0 && cfl <= 1.0 && dt_max > 0.0) => {
                return Err(invalid("adaptive policy needs 0 < cfl <= 1 and dt_max > 0"))
            }
            _ => {}
        }
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("snapshot times must be sorted"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EulerSnapshot {
    pub t: f64,
    pub field: DensityField,
}

#[derive(Debug, Clone)]
pub struct EulerRun {
    /// Discrepancy after every step.
    pub curve: LossCurve,
    /// `R_t` on the same grid.
    pub r_curve: Vec<f64>,
    pub snapshots: Vec<EulerSnapshot>,
    pub target: DensityField,
    pub final_field: DensityField,
    pub steps: usize,
    /// Largest `|Σ m − 1|` seen.
    pub max_mass_drift: f64,
    pub min_mass: f64,
}

pub fn run_euler(cfg: &EulerConfig) -> Result<EulerRun> {
    cfg.validate()?;
    let grid = build_grid(cfg.n_lat, cfg.n_lon)?;
    let conv = ArccosConvolver::new(&grid);
    let target = target_density(&cfg.target, &grid)?;
    let mut rho = target_density(&cfg.init, &grid)?;
    run_euler_from(cfg, &grid, &conv, &target, &mut rho)
}

/// Runs on a prebuilt grid and convolver from an explicit initial field.
pub fn run_euler_from(
    cfg: &EulerConfig,
    grid: &SphereGrid,
    conv: &ArccosConvolver,
    target: &DensityField,
    rho: &mut DensityField,
) -> Result<EulerRun> {
    cfg.validate()?;
    let mut gv = grid_velocity(grid, conv, rho, target)?;
    let mut curve = LossCurve::default();
    curve.push(0.0, gv.loss);
    let mut snapshots = Vec::new();
    let mut next_snap = 0;
    let mut take_snaps = |t: f64, rho: &DensityField, snapshots: &mut Vec<EulerSnapshot>| {
        while next_snap < cfg.snapshot_times.len() && cfg.snapshot_times[next_snap] <= t + 1e-12 {
            snapshots.push(EulerSnapshot { t, field: rho.clone() });
            next_snap += 1;
        }
    };
    take_snaps(0.0, rho, &mut snapshots);
    let (mut t, mut steps) = (0.0, 0usize);
    let mut max_mass_drift = (rho.total() - 1.0).abs();
    let mut min_mass = rho.min();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    while cfg.horizon - t > 1e-12 * cfg.horizon.max(1.0) && steps < max_steps {
        let remaining = cfg.horizon - t;
        let (dt, cfl) = match cfg.dt {
            DtPolicy::Fixed { dt } => (dt.min(remaining), DEFAULT_CFL),
            DtPolicy::Adaptive { cfl, dt_max } => (admissible_dt(grid, &gv.velocity, cfl).min(dt_max).min(remaining), cfl),
        };
        *rho = upwind_step(grid, rho, &gv.velocity, dt, cfl)?;
        t = if dt == remaining { cfg.horizon } else { t + dt };
        steps += 1;
        gv = grid_velocity(grid, conv, rho, target)?;
        curve.push(t, gv.loss);
        max_mass_drift = max_mass_drift.max((rho.total() - 1.0).abs());
        min_mass = min_mass.min(rho.min());
        take_snaps(t, rho, &mut snapshots);
    }
    let r_curve = cumulative_sqrt_loss(&curve);
    Ok(EulerRun {
        curve,
        r_curve,
        snapshots,
        target: target.clone(),
        final_field: rho.clone(),
        steps,
        max_mass_drift,
        min_mass,
    })
}

const FIELD_MAGIC: &[u8; 4] = b"POCE";
const FIELD_VERSION: u32 = 1;

/// Binary field dump: magic `POCE`, version u32, n_lat u32, n_lon u32, t f64,
/// then the masses as f64, all little-endian.
pub fn write_field<W: Write>(mut out: W, field: &DensityField, t: f64) -> Result<()> {
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&FIELD_VERSION.to_le_bytes())?;
    out.write_all(&(field.n_lat as u32).to_le_bytes())?;
    out.write_all(&(field.n_lon as u32).to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for m in &field.masses {
        out.write_all(&m.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut input: R) -> Result<(f64, DensityField)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format("not a POCE field dump".into()));
    }
    let mut u = [0u8; 4];
    input.read_exact(&mut u)?;
    if u32::from_le_bytes(u) != FIELD_VERSION {
        return Err(Error::Format("unsupported field dump version".into()));
    }
    input.read_exact(&mut u)?;
    let n_lat = u32::from_le_bytes(u) as usize;
    input.read_exact(&mut u)?;
    let n_lon = u32::from_le_bytes(u) as usize;
    let mut f = [0u8; 8];
    input.read_exact(&mut f)?;
    let t = f64::from_le_bytes(f);
    let mut masses = Vec::with_capacity(n_lat * n_lon);
    for _ in 0..n_lat * n_lon {
        input.read_exact(&mut f)?;
        masses.push(f64::from_le_bytes(f));
    }
    Ok((t, DensityField { n_lat, n_lon, masses }))
}
