//! Parameter space geometry: `R^d` or the unit sphere `S^{d-1}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Euclidean { d: usize },
    Sphere { d: usize },
}

impl DomainSpec {
    pub fn euclidean(d: usize) -> Result<Self> {
        let dom = DomainSpec::Euclidean { d };
        dom.validate()?;
        Ok(dom)
    }

    pub fn sphere(d: usize) -> Result<Self> {
        let dom = DomainSpec::Sphere { d };
        dom.validate()?;
        Ok(dom)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DomainSpec::Euclidean { d } if d >= 1 => Ok(()),
            DomainSpec::Sphere { d } if d >= 2 => Ok(()),
            DomainSpec::Euclidean { .. } => Err(invalid("euclidean domain needs d >= 1")),
            DomainSpec::Sphere { .. } => Err(invalid("sphere domain needs d >= 2")),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            DomainSpec::Euclidean { d } | DomainSpec::Sphere { d } => d,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, DomainSpec::Sphere { .. })
    }

    /// Maps `w` onto the domain: identity on `R^d`, normalization on the sphere.
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = w.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, w: &mut [f64]) -> Result<()> {
        if self.is_sphere() {
            let n = norm(w);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateProjection);
            }
            w.iter_mut().for_each(|x| *x /= n);
        }
        Ok(())
    }

    /// Orthogonal projection of `v` onto the tangent space at `w`.
    /// On the sphere `w` must be unit norm.
    pub fn tangent_project(&self, w: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.tangent_project_in_place(w, &mut out);
        out
    }

    pub fn tangent_project_in_place(&self, w: &[f64], v: &mut [f64]) {
        if self.is_sphere() {
            let c = dot(w, v);
            v.iter_mut().zip(w).for_each(|(vi, wi)| *vi -= c * wi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let e = DomainSpec::euclidean(3).unwrap();
        assert_eq!(e.project(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let s = DomainSpec::sphere(2).unwrap();
        let p = s.project(&[3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(s.project(&[0.0, 0.0]), Err(Error::DegenerateProjection));
    }

    #[test]
    fn tangent_examples() {
        let e = DomainSpec::euclidean(2).unwrap();
        assert_eq!(e.tangent_project(&[0.3, 0.1], &[5.0, 7.0]), vec![5.0, 7.0]);
        let s = DomainSpec::sphere(2).unwrap();
        assert_eq!(s.tangent_project(&[1.0, 0.0], &[3.0, 4.0]), vec![0.0, 4.0]);
        let s3 = DomainSpec::sphere(3).unwrap();
        let w = s3.project(&[1.0, -2.0, 0.5]).unwrap();
        let r = s3.tangent_project(&w, &w);
        assert!(r.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn invalid_dimensions() {
        assert!(DomainSpec::sphere(1).is_err());
        assert!(DomainSpec::euclidean(0).is_err());
        assert!(DomainSpec::euclidean(1).is_ok());
    }
}
