//! Sobolev single-index targets `f*(x) = F(arccos x₁)`, their ReLU
//! representation on the circle, and the matching data generators.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataSample;
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::rng::RngSpec;

pub const DEFAULT_K_MAX: usize = 512;
/// Coefficients smaller than this are stored as zero.
pub const COEFF_FLOOR: f64 = 1e-15;

/// `F(θ) = Σ_{k∈ℤ} f̂_k cos(kθ) = f̂₀ + 2 Σ_{k≥1} f̂_k cos(kθ)`; `f_hat[k]`
/// holds the symmetric coefficient `f̂_{±k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevTarget {
    pub gamma: f64,
    pub k_max: usize,
    pub f_hat: Vec<f64>,
    pub d: usize,
}

/// `f̂₀ = 1/2`, `f̂₁ = 1/4`, `f̂_k = ½ (k/√2)^{-(γ+2.5)}` for even `k ≥ 2`.
pub fn sobolev_coeff(gamma: f64, k: usize) -> f64 {
    match k {
        0 => 0.5,
        1 => 0.25,
        k if k % 2 == 0 => 0.5 * (k as f64 * FRAC_1_SQRT_2).powf(-(gamma + 2.5)),
        _ => 0.0,
    }
}

pub fn sobolev_coeffs(gamma: f64, k_max: usize) -> Result<SobolevTarget> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma must be positive"));
    }
    if k_max < 2 {
        return Err(invalid("k_max must be at least 2"));
    }
    let f_hat = (0..=k_max)
        .map(|k| {
            let c = sobolev_coeff(gamma, k);
            if c.abs() < COEFF_FLOOR { 0.0 } else { c }
        })
        .collect();
    Ok(SobolevTarget { gamma, k_max, f_hat, d: 2 })
}

impl SobolevTarget {
    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    /// `F(θ)`, truncated at `k_max`.
    pub fn eval_angle(&self, theta: f64) -> f64 {
        let tail: f64 = self.f_hat.iter().enumerate().skip(1).map(|(k, c)| c * (k as f64 * theta).cos()).sum();
        self.f_hat[0] + 2.0 * tail
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let x1 = *x.first().ok_or_else(|| Error::DomainError("empty input".into()))?;
        if !(x1.abs() <= 1.0) {
            return Err(Error::DomainError(format!("x1 = {x1} outside [-1, 1]")));
        }
        Ok(self.eval_angle(x1.acos()))
    }

    /// `2 Σ_{k > k_max} |f̂_k|`, bounding the truncation error uniformly.
    pub fn tail_bound(&self) -> f64 {
        let p = self.gamma + 2.5;
        let first = (self.k_max + 1).next_multiple_of(2).max(2);
        let cutoff = first + 200_000;
        let explicit: f64 = (first..cutoff).step_by(2).map(|k| sobolev_coeff(self.gamma, k)).sum();
        // ∫_{K-2}^∞ ½ (k/√2)^{-p} dk/2 over-bounds the remaining even terms
        let k0 = (cutoff - 2) as f64;
        let rest = 0.25 * 2f64.powf(p / 2.0) * k0.powf(1.0 - p) / (p - 1.0);
        2.0 * (explicit + rest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        if t.f_hat.len() != t.k_max + 1 {
            return Err(Error::Format("coefficient array length must be k_max + 1".into()));
        }
        Ok(t)
    }
}

/// `φ̂_k` of `φ(t) = ReLU(cos t)` in the complex convention, `k = 0..=k_max`.
pub fn relu_fourier_coeffs(k_max: usize) -> Vec<f64> {
    (0..=k_max)
        .map(|k| match k {
            0 => 1.0 / PI,
            1 => 0.25,
            k if k % 2 == 0 => {
                let m = (k / 2) as f64;
                let sign = if (k / 2) % 2 == 1 { 1.0 } else { -1.0 };
                sign / (PI * (4.0 * m * m - 1.0))
            }
            _ => 0.0,
        })
        .collect()
}

/// The signed measure `μ*` on `[0, 2π)` with `∫ ReLU(cos(θ-ω)) dμ*(ω) = F(θ)`,
/// stored by its real, symmetric coefficients `μ̂*_k = f̂_k / φ̂_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoStarS1 {
    pub gamma: f64,
    pub k_max: usize,
    pub mu_hat: Vec<f64>,
    /// Angular grid size used by [`RhoStarS1::represent`].
    pub quadrature_points: usize,
}

pub const DEFAULT_QUADRATURE_POINTS: usize = 4096;

pub fn rho_star_s1(target: &SobolevTarget) -> RhoStarS1 {
    let phi = relu_fourier_coeffs(target.k_max);
    let mu_hat = target
        .f_hat
        .iter()
        .zip(&phi)
        .map(|(f, p)| if *p != 0.0 { f / p } else { 0.0 })
        .collect();
    RhoStarS1 { gamma: target.gamma, k_max: target.k_max, mu_hat, quadrature_points: DEFAULT_QUADRATURE_POINTS }
}

impl RhoStarS1 {
    /// Density of `μ*` with respect to `dω`.
    pub fn density(&self, omega: f64) -> f64 {
        let tail: f64 = self.mu_hat.iter().enumerate().skip(1).map(|(k, c)| c * (k as f64 * omega).cos()).sum();
        (self.mu_hat[0] + 2.0 * tail) / (2.0 * PI)
    }

    pub fn total_mass(&self) -> f64 {
        self.mu_hat[0]
    }

    /// Truncated `Σ_{k∈ℤ} (1+k²)^γ |μ̂*_k|²`.
    pub fn sobolev_norm(&self) -> f64 {
        self.mu_hat
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = (1.0 + (k * k) as f64).powf(self.gamma) * c * c;
                if k == 0 { w } else { 2.0 * w }
            })
            .sum()
    }

    /// Density on the quadrature grid `ω_q = 2πq/N`.
    pub fn density_grid(&self) -> Vec<f64> {
        let n = self.quadrature_points;
        par::map_indices(n, |q| self.density(2.0 * PI * q as f64 / n as f64))
    }

    /// `∫ ReLU(cos(θ-ω)) dμ*(ω)` by the periodic trapezoid rule.
    pub fn represent(&self, theta: f64) -> f64 {
        self.represent_with(&self.density_grid(), theta)
    }

    pub fn represent_with(&self, grid: &[f64], theta: f64) -> f64 {
        let n = grid.len();
        let h = 2.0 * PI / n as f64;
        grid.iter()
            .enumerate()
            .map(|(q, p)| p * (theta - h * q as f64).cos().max(0.0))
            .sum::<f64>()
            * h
    }

    pub fn min_density(&self) -> f64 {
        self.density_grid().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// `n` evenly spaced points on the unit circle labelled by `target`.
pub fn data_circle(target: &SobolevTarget, n: usize) -> Result<DataSample> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let th = 2.0 * PI * i as f64 / n as f64;
        // exact axis points where the angle is a multiple of π/2
        let (c, s) = match (4 * i) % n {
            0 => [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][4 * i / n],
            _ => (th.cos(), th.sin()),
        };
        x.extend([c, s]);
        y.push(target.eval_angle(th));
    }
    DataSample::uniform(x, y, 2)
}

/// Uniform on `√(d-1) S^{d-1}` (normalized Gaussians), each coordinate then
/// clamped to `[-1, 1]`; labels use the clamped point.
pub fn data_sphere_clamped(target: &SobolevTarget, d: usize, n: usize, rng: RngSpec) -> Result<DataSample> {
    if d < 3 {
        return Err(invalid("clamped sphere data needs d >= 3"));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let radius = ((d - 1) as f64).sqrt();
    let rows: Vec<Vec<f64>> = par::map_indices(n, |i| {
        let mut r = rng.row_rng(i as u64);
        loop {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                return g.iter().map(|v| (radius * v / nrm).clamp(-1.0, 1.0)).collect();
            }
        }
    });
    let labels = rows.iter().map(|x| target.eval(x)).collect::<Result<Vec<f64>>>()?;
    DataSample::uniform(rows.concat(), labels, d)
}

/// Circle data for `d = 2`, clamped-sphere data otherwise.
pub fn benchmark_data(target: &SobolevTarget, d: usize, n: usize, rng: RngSpec) -> Result<DataSample> {
    if d == 2 {
        data_circle(target, n)
    } else {
        data_sphere_clamped(target, d, n, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_examples() {
        let t = sobolev_coeffs(1.0, 16).unwrap();
        assert_eq!(t.f_hat[0], 0.5);
        assert_eq!(t.f_hat[1], 0.25);
        assert!((t.f_hat[2] - 0.5 * 2f64.powf(-1.75)).abs() < 1e-16);
        assert_eq!(t.f_hat[3], 0.0);
        let t8 = sobolev_coeffs(8.0, 16).unwrap();
        assert!((t8.f_hat[2] / t8.f_hat[4] - 2f64.powf(10.5)).abs() < 1e-9);
        for k in (4..=16).step_by(2) {
            assert!(t8.f_hat[k].abs() <= t8.f_hat[k - 2].abs());
        }
        assert!(sobolev_coeffs(1.0, 1).is_err());
        assert!(sobolev_coeffs(0.0, 8).is_err());
    }

    #[test]
    fn floor_drops_tiny_coefficients() {
        let t = sobolev_coeffs(8.0, 512).unwrap();
        assert!(t.f_hat.iter().all(|c| *c == 0.0 || c.abs() >= COEFF_FLOOR));
        assert_eq!(t.f_hat[512], 0.0);
    }

    #[test]
    fn eval_examples() {
        let t = sobolev_coeffs(1.0, 64).unwrap();
        let at_one = t.f_hat[0] + 2.0 * t.f_hat[1..].iter().sum::<f64>();
        assert!((t.eval(&[1.0, 0.0]).unwrap() - at_one).abs() < 1e-14);
        let series: f64 = t.f_hat[0] + 2.0 * (1..=32).map(|m| if m % 2 == 1 { -t.f_hat[2 * m] } else { t.f_hat[2 * m] }).sum::<f64>();
        assert!((t.eval(&[0.0, 1.0]).unwrap() - series).abs() < 1e-14);
        let t3 = t.clone().with_dim(3);
        assert_eq!(t3.eval(&[0.3, 0.2, -0.5]).unwrap(), t3.eval(&[0.3, -0.9, 0.1]).unwrap());
        assert!(matches!(t.eval(&[1.0 + 1e-9, 0.0]), Err(Error::DomainError(_))));
    }

    #[test]
    fn relu_coefficients() {
        let phi = relu_fourier_coeffs(6);
        assert!((phi[0] - 0.3183098861837907).abs() < 1e-15);
        assert_eq!(phi[1], 0.25);
        assert!((phi[2] - 1.0 / (3.0 * PI)).abs() < 1e-16);
        assert!((phi[4] + 1.0 / (15.0 * PI)).abs() < 1e-16);
        assert_eq!(phi[3], 0.0);
    }

    #[test]
    fn rho_star_coefficients() {
        let rho = rho_star_s1(&sobolev_coeffs(2.0, 64).unwrap());
        assert!((rho.mu_hat[0] - PI / 2.0).abs() < 1e-15);
        assert!((rho.mu_hat[1] - 1.0).abs() < 1e-15);
        assert_eq!(rho.mu_hat[3], 0.0);
        assert!((rho.total_mass() - PI / 2.0).abs() < 1e-15);
        assert!(rho.sobolev_norm().is_finite());
    }

    #[test]
    fn representation_identity() {
        let t = sobolev_coeffs(4.0, 128).unwrap();
        let mut rho = rho_star_s1(&t);
        rho.quadrature_points = 2048;
        let grid = rho.density_grid();
        for i in 0..16 {
            let th = 0.37 + i as f64 * 0.39;
            assert!((rho.represent_with(&grid, th) - t.eval_angle(th)).abs() < 1e-3);
        }
    }

    #[test]
    fn tail_bound_is_small_and_positive() {
        let t = sobolev_coeffs(1.0, 512).unwrap();
        let b = t.tail_bound();
        assert!(b > 0.0 && b < 1e-4, "{b}");
        let t2 = sobolev_coeffs(1.0, 2).unwrap();
        let direct: f64 = 2.0 * (4..2_000_000).step_by(2).map(|k| sobolev_coeff(1.0, k)).sum::<f64>();
        assert!(t2.tail_bound() >= direct);
    }

    #[test]
    fn json_descriptor_round_trip() {
        let t = sobolev_coeffs(8.0, 32).unwrap();
        let back = SobolevTarget::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn circle_data() {
        let t = sobolev_coeffs(1.0, 32).unwrap();
        let d = data_circle(&t, 4).unwrap();
        assert_eq!(d.inputs(), &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        assert!((d.labels()[0] - t.eval(&[1.0, 0.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn clamped_sphere_data() {
        let t = sobolev_coeffs(2.0, 32).unwrap().with_dim(8);
        let d = data_sphere_clamped(&t, 8, 200, RngSpec::new(3, 1)).unwrap();
        assert!(d.inputs().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(d.inputs().iter().any(|v| v.abs() == 1.0));
        for i in 0..d.n() {
            assert_eq!(d.labels()[i], t.eval(d.input(i)).unwrap());
        }
        assert!(data_sphere_clamped(&t, 2, 10, RngSpec::new(3, 1)).is_err());
    }
}
