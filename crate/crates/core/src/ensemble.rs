//! Particle ensembles and their initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{invalid, Error, Result};
use crate::linalg::norm;
use crate::par;
use crate::rng::RngSpec;

/// `m` weight vectors in `R^d` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    weights: Vec<f64>,
    m: usize,
    domain: DomainSpec,
}

pub const UNIT_NORM_TOL: f64 = 1e-12;

impl Ensemble {
    pub fn new(weights: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        let d = domain.dim();
        if weights.is_empty() || weights.len() % d != 0 {
            return Err(invalid(format!(
                "ensemble needs a nonempty multiple of d = {d} coordinates, got {}",
                weights.len()
            )));
        }
        let m = weights.len() / d;
        let e = Self { weights, m, domain };
        if domain.is_sphere() {
            if let Some(i) = (0..m).find(|&i| (norm(e.row(i)) - 1.0).abs() > UNIT_NORM_TOL) {
                return Err(invalid(format!("sphere ensemble row {i} is not unit norm")));
            }
        }
        Ok(e)
    }

    /// Builds an ensemble, projecting every row onto the domain first.
    pub fn projected(mut weights: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        let d = domain.dim();
        if weights.is_empty() || weights.len() % d != 0 {
            return Err(invalid("ensemble needs a nonempty multiple of d coordinates"));
        }
        for row in weights.chunks_mut(d) {
            domain.project_in_place(row)?;
        }
        Self::new(weights, domain)
    }

    pub fn from_rows(rows: &[Vec<f64>], domain: DomainSpec) -> Result<Self> {
        let d = domain.dim();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        Self::new(rows.concat(), domain)
    }

    pub(crate) fn from_raw(weights: Vec<f64>, m: usize, domain: DomainSpec) -> Self {
        debug_assert_eq!(weights.len(), m * domain.dim());
        Self { weights, m, domain }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> DomainSpec {
        self.domain
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.weights[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.weights.chunks(self.d())
    }

    /// First `m` particles.
    pub fn head(&self, m: usize) -> Result<Ensemble> {
        if m == 0 || m > self.m {
            return Err(invalid(format!("cannot take {m} of {} particles", self.m)));
        }
        Ok(Self::from_raw(self.weights[..m * self.d()].to_vec(), m, self.domain))
    }

    pub fn max_norm(&self) -> f64 {
        self.rows().map(norm).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    UniformSphere,
    /// Isotropic Gaussian with per-coordinate std `scale`, rejected beyond
    /// radius `clip` (default `10 * scale`). Normalized on the sphere.
    Gaussian { scale: f64, clip: Option<f64> },
    /// Sphere: uniform on the cap of angular radius `radius` around `e_1`.
    /// Euclidean: uniform in the ball of radius `radius`.
    UniformCap { radius: f64 },
}

impl InitKind {
    pub fn gaussian(scale: f64) -> Self {
        InitKind::Gaussian { scale, clip: None }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn sample_row(domain: DomainSpec, init: InitKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = domain.dim();
    match init {
        InitKind::UniformSphere => unit_vec(rng, d),
        InitKind::Gaussian { scale, clip } => {
            let clip = clip.unwrap_or(10.0 * scale);
            loop {
                let mut v = gaussian_vec(rng, d);
                v.iter_mut().for_each(|x| *x *= scale);
                let n = norm(&v);
                if n <= clip && (!domain.is_sphere() || n > 1e-12) {
                    if domain.is_sphere() {
                        v.iter_mut().for_each(|x| *x /= n);
                    }
                    return v;
                }
            }
        }
        InitKind::UniformCap { radius } if domain.is_sphere() => {
            let radius = radius.min(std::f64::consts::PI);
            if d == 2 {
                let a = rng.random_range(-radius..=radius);
                return vec![a.cos(), a.sin()];
            }
            // cos of the polar angle has density ∝ (1 - t^2)^{(d-3)/2}
            let p = (d as f64 - 3.0) / 2.0;
            let lo = radius.cos();
            let peak = if lo <= 0.0 { 1.0 } else { (1.0 - lo * lo).powf(p) };
            let t = loop {
                let t = rng.random_range(lo..=1.0);
                let accept = if p == 0.0 { 1.0 } else { (1.0 - t * t).max(0.0).powf(p) / peak };
                if rng.random::<f64>() <= accept {
                    break t;
                }
            };
            let u = unit_vec(rng, d - 1);
            let s = (1.0 - t * t).max(0.0).sqrt();
            std::iter::once(t).chain(u.into_iter().map(|x| s * x)).collect()
        }
        InitKind::UniformCap { radius } => {
            let dir = unit_vec(rng, d);
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|x| r * x).collect()
        }
    }
}

/// Draws `m` i.i.d. particles from the initial law. Row `i` depends only on
/// `(rng, i)`, so the result does not depend on the worker count.
pub fn sample_init(domain: DomainSpec, m: usize, init: InitKind, rng: RngSpec) -> Result<Ensemble> {
    domain.validate()?;
    if m == 0 {
        return Err(invalid("ensemble size must be at least 1"));
    }
    match init {
        InitKind::UniformSphere if !domain.is_sphere() => {
            return Err(invalid("uniform_sphere initialization requires a sphere domain"))
        }
        InitKind::Gaussian { scale, clip } if !(scale > 0.0) || clip.is_some_and(|c| !(c > 0.0)) => {
            return Err(invalid("gaussian initialization needs positive scale and clip"))
        }
        InitKind::UniformCap { radius } if !(radius > 0.0) => {
            return Err(invalid("uniform_cap initialization needs a positive radius"))
        }
        _ => {}
    }
    let rows = par::map_indices(m, |i| sample_row(domain, init, &mut rng.row_rng(i as u64)));
    Ok(Ensemble::from_raw(rows.concat(), m, domain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn deterministic_and_unit_norm() {
        let dom = DomainSpec::sphere(3).unwrap();
        let a = sample_init(dom, 4, InitKind::UniformSphere, RngSpec::new(1, 0)).unwrap();
        let b = sample_init(dom, 4, InitKind::UniformSphere, RngSpec::new(1, 0)).unwrap();
        assert_eq!(a, b);
        let big = sample_init(DomainSpec::sphere(8).unwrap(), 10_000, InitKind::UniformSphere, RngSpec::new(2, 0))
            .unwrap();
        let mean_norm = big.rows().map(norm).sum::<f64>() / 10_000.0;
        assert!((mean_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_variance() {
        let dom = DomainSpec::euclidean(2).unwrap();
        let e = sample_init(dom, 100_000, InitKind::gaussian(1.0), RngSpec::new(3, 0)).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = e.rows().map(|r| r[c]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((0.99..=1.01).contains(&var), "coordinate {c}: variance {var}");
        }
    }

    #[test]
    fn gaussian_clip_respected() {
        let dom = DomainSpec::euclidean(3).unwrap();
        let init = InitKind::Gaussian { scale: 1.0, clip: Some(1.5) };
        let e = sample_init(dom, 2000, init, RngSpec::new(4, 0)).unwrap();
        assert!(e.max_norm() <= 1.5);
    }

    #[test]
    fn cap_stays_in_cap() {
        for d in [2, 3, 5] {
            let dom = DomainSpec::sphere(d).unwrap();
            let e = sample_init(dom, 500, InitKind::UniformCap { radius: 0.4 }, RngSpec::new(5, 0)).unwrap();
            let mut pole = vec![0.0; d];
            pole[0] = 1.0;
            assert!(e.rows().all(|r| dot(r, &pole) >= 0.4f64.cos() - 1e-12));
            assert!(e.rows().all(|r| (norm(r) - 1.0).abs() < 1e-12));
        }
        let ball = sample_init(DomainSpec::euclidean(3).unwrap(), 500, InitKind::UniformCap { radius: 2.0 }, RngSpec::new(5, 0))
            .unwrap();
        assert!(ball.max_norm() <= 2.0);
    }

    #[test]
    fn incompatible_init_rejected() {
        let dom = DomainSpec::euclidean(3).unwrap();
        assert!(sample_init(dom, 4, InitKind::UniformSphere, RngSpec::new(1, 0)).is_err());
        assert!(sample_init(dom, 0, InitKind::gaussian(1.0), RngSpec::new(1, 0)).is_err());
    }

    #[test]
    fn independent_of_worker_count() {
        let dom = DomainSpec::sphere(5).unwrap();
        let a = par::with_workers(1, || sample_init(dom, 3000, InitKind::UniformSphere, RngSpec::new(9, 0)).unwrap());
        let b = par::with_workers(4, || sample_init(dom, 3000, InitKind::UniformSphere, RngSpec::new(9, 0)).unwrap());
        assert_eq!(a.weights(), b.weights());
    }
}
