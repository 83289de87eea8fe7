//! Network kernel `K(w, w')`, potential `F(w)`, kernel mean embeddings and the
//! two equivalent loss representations (L^2 function error and RKHS distance).

use std::f64::consts::PI;

use crate::activation::Activation;
use crate::data::DataSample;
use crate::ensemble::Ensemble;
use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dot, norm, Mat};
use crate::par;

#[derive(Debug, Clone, Copy)]
pub enum KernelSpec<'a> {
    /// `K(w, w') = sum_i a_i σ(w·x_i) σ(w'·x_i)`.
    Empirical { data: &'a DataSample, act: Activation },
    /// `E_x[ReLU(w·x) ReLU(w'·x)]` for standard Gaussian `x`.
    ArccosRelu,
}

/// Angle quantities for the arccos kernel; `None` when either vector is zero.
struct Angle {
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    theta: f64,
}

fn angle(w: &[f64], w2: &[f64]) -> Option<Angle> {
    let a = norm(w);
    let b = norm(w2);
    if a == 0.0 || b == 0.0 {
        return None;
    }
    let cos = (dot(w, w2) / (a * b)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    Some(Angle { a, b, cos, sin: (1.0 - cos * cos).max(0.0).sqrt(), theta })
}

/// Closed-form arccos kernel on unit vectors as a function of the angle.
#[inline]
pub fn arccos_profile(cos: f64) -> f64 {
    let c = cos.clamp(-1.0, 1.0);
    let theta = c.acos();
    ((1.0 - c * c).max(0.0).sqrt() + (PI - theta) * c) / (2.0 * PI)
}

impl<'a> KernelSpec<'a> {
    pub fn eval(&self, w: &[f64], w2: &[f64]) -> f64 {
        match *self {
            KernelSpec::Empirical { data, act } => {
                data.expect(|i| act.value(dot(w, data.input(i))) * act.value(dot(w2, data.input(i))))
            }
            KernelSpec::ArccosRelu => match angle(w, w2) {
                Some(g) => g.a * g.b / (2.0 * PI) * (g.sin + (PI - g.theta) * g.cos),
                None => 0.0,
            },
        }
    }

    /// `∇_w K(w, w')` (ambient, unprojected). The arccos kernel is not
    /// differentiable at `w = 0`; zero is returned there.
    pub fn grad(&self, w: &[f64], w2: &[f64]) -> Vec<f64> {
        let d = w.len();
        let mut out = vec![0.0; d];
        match *self {
            KernelSpec::Empirical { data, act } => {
                for i in 0..data.n() {
                    let x = data.input(i);
                    let c = data.weights()[i] * act.deriv(dot(w, x)) * act.value(dot(w2, x));
                    axpy(c, x, &mut out);
                }
            }
            KernelSpec::ArccosRelu => {
                if let Some(g) = angle(w, w2) {
                    axpy((PI - g.theta) / (2.0 * PI), w2, &mut out);
                    axpy(g.b / g.a * g.sin / (2.0 * PI), w, &mut out);
                }
            }
        }
        out
    }

    /// `∇_w ∇_{w'} K(w, w')`: entry `(p, q)` is `∂² K / ∂w_p ∂w'_q`.
    pub fn cross_grad(&self, w: &[f64], w2: &[f64]) -> Mat {
        let d = w.len();
        let mut out = Mat::zeros(d);
        match *self {
            KernelSpec::Empirical { data, act } => {
                for i in 0..data.n() {
                    let x = data.input(i);
                    let c = data.weights()[i] * act.deriv(dot(w, x)) * act.deriv(dot(w2, x));
                    out.add_outer(c, x, x);
                }
            }
            KernelSpec::ArccosRelu => {
                if let Some(g) = angle(w, w2) {
                    let wh: Vec<f64> = w.iter().map(|x| x / g.a).collect();
                    let w2h: Vec<f64> = w2.iter().map(|x| x / g.b).collect();
                    // e = (ŵ - cosθ ŵ') / sinθ, the unit direction of ŵ orthogonal to ŵ'
                    let e: Vec<f64> = if g.sin > 1e-12 {
                        wh.iter().zip(&w2h).map(|(p, q)| (p - g.cos * q) / g.sin).collect()
                    } else {
                        vec![0.0; d]
                    };
                    for p in 0..d {
                        out.set(p, p, PI - g.theta);
                    }
                    out.add_outer(1.0, &w2h, &e);
                    let tail: Vec<f64> = w2h.iter().zip(&e).map(|(q, ei)| g.sin * q - g.cos * ei).collect();
                    out.add_outer(1.0, &wh, &tail);
                    out.scale(1.0 / (2.0 * PI));
                }
            }
        }
        out
    }

    /// `∇_w ∇_w K(w, w')`. Needs `σ''` for the empirical kernel.
    pub fn hess(&self, w: &[f64], w2: &[f64]) -> Result<Mat> {
        let d = w.len();
        let mut out = Mat::zeros(d);
        match *self {
            KernelSpec::Empirical { data, act } => {
                for i in 0..data.n() {
                    let x = data.input(i);
                    let c = data.weights()[i] * act.second_deriv(dot(w, x))? * act.value(dot(w2, x));
                    out.add_outer(c, x, x);
                }
            }
            KernelSpec::ArccosRelu => {
                if let Some(g) = angle(w, w2) {
                    if g.sin > 1e-12 {
                        let wh: Vec<f64> = w.iter().map(|x| x / g.a).collect();
                        let f: Vec<f64> = w2
                            .iter()
                            .zip(&wh)
                            .map(|(q, p)| (q / g.b - g.cos * p) / g.sin)
                            .collect();
                        out = Mat::identity(d);
                        out.add_outer(1.0, &f, &f);
                        out.add_outer(-1.0, &wh, &wh);
                        out.scale(g.b / (2.0 * PI * g.a) * g.sin);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `F(w) = sum_i a_i y_i σ(w·x_i)`.
pub fn potential_eval(data: &DataSample, act: Activation, w: &[f64]) -> f64 {
    data.expect(|i| data.labels()[i] * act.value(dot(w, data.input(i))))
}

/// Point masses with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    points: Vec<f64>,
    masses: Vec<f64>,
    d: usize,
}

impl WeightedEnsemble {
    pub fn new(points: Vec<f64>, masses: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || masses.is_empty() || points.len() != masses.len() * d {
            return Err(invalid("weighted ensemble shape mismatch"));
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(invalid("masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { points, masses, d })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

impl From<&Ensemble> for WeightedEnsemble {
    fn from(e: &Ensemble) -> Self {
        let m = e.m();
        Self { points: e.weights().to_vec(), masses: vec![1.0 / m as f64; m], d: e.d() }
    }
}

/// `sum_{i,j} a_i b_j K(A_i, B_j)` with a fixed reduction tree.
pub fn cross_mean(k: &KernelSpec<'_>, a: &WeightedEnsemble, b: &WeightedEnsemble) -> f64 {
    par::sum_indices(a.len(), |i| {
        let p = a.point(i);
        let inner: f64 = (0..b.len()).map(|j| b.masses[j] * k.eval(p, b.point(j))).sum();
        a.masses[i] * inner
    })
}

/// `||m_A - m_B||_H^2 = E_AA K - 2 E_AB K + E_BB K`.
pub fn kernel_mean_embedding_pair_loss(
    k: &KernelSpec<'_>,
    a: &WeightedEnsemble,
    b: &WeightedEnsemble,
) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch { expected: a.d(), got: b.d() });
    }
    Ok(cross_mean(k, a, a) - 2.0 * cross_mean(k, a, b) + cross_mean(k, b, b))
}

/// `f_E(x_i) = (1/m) sum_j σ(w_j·x_i)` for every data point.
pub fn network_outputs(data: &DataSample, act: Activation, e: &Ensemble) -> Vec<f64> {
    crate::hot::forward(data.inputs(), e.weights(), e.d(), act)
}

/// `sum_i a_i (f(x_i) - g(x_i))^2` for precomputed outputs.
pub fn weighted_sq_error(data: &DataSample, f: &[f64], g: &[f64]) -> f64 {
    data.expect(|i| (f[i] - g[i]).powi(2))
}

/// `E_x (f_A(x) - f_B(x))^2`.
pub fn mse_function_error(data: &DataSample, act: Activation, a: &Ensemble, b: &Ensemble) -> Result<f64> {
    if a.d() != data.d() || b.d() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), got: a.d().max(b.d()) });
    }
    let fa = network_outputs(data, act, a);
    let fb = network_outputs(data, act, b);
    Ok(weighted_sq_error(data, &fa, &fb))
}

/// Excess loss `E(f_E - y)^2 - E(f* - y)^2`.
pub fn excess_loss(data: &DataSample, act: Activation, e: &Ensemble, fstar: &[f64]) -> Result<f64> {
    if fstar.len() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: fstar.len() });
    }
    let f = network_outputs(data, act, e);
    Ok(excess_loss_from_outputs(data, &f, fstar))
}

pub fn excess_loss_from_outputs(data: &DataSample, f: &[f64], fstar: &[f64]) -> f64 {
    let y = data.labels();
    data.expect(|i| (f[i] - y[i]).powi(2) - (fstar[i] - y[i]).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::ensemble::{sample_init, InitKind};
    use crate::rng::RngSpec;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DataSample {
        let mut rng = RngSpec::new(seed, 99).rng();
        let inputs = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DataSample::uniform(inputs, labels, d).unwrap()
    }

    fn rand_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn empirical_kernel_examples() {
        let data = DataSample::uniform(vec![1.0, 0.0], vec![2.0], 2).unwrap();
        let k = KernelSpec::Empirical { data: &data, act: Activation::Relu };
        assert_eq!(k.eval(&[2.0, 0.0], &[3.0, 0.0]), 6.0);
        assert_eq!(potential_eval(&data, Activation::Relu, &[3.0, 0.0]), 6.0);
        let zero = data.with_labels(vec![0.0]).unwrap();
        assert_eq!(potential_eval(&zero, Activation::Relu, &[0.4, -2.0]), 0.0);
        let two = DataSample::uniform(vec![1.0, 0.0, 0.0, 1.0], vec![1.0, -3.0], 2).unwrap();
        let w = [0.5, 2.0];
        assert_eq!(potential_eval(&two, Activation::Relu, &w), 0.5 * (1.0 * 0.5) + 0.5 * (-3.0 * 2.0));
    }

    #[test]
    fn arccos_closed_form_values() {
        let k = KernelSpec::ArccosRelu;
        assert!((k.eval(&[1.0, 0.0], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!((k.eval(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(k.eval(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn arccos_homogeneity_and_symmetry() {
        let mut rng = RngSpec::new(1, 1).rng();
        let k = KernelSpec::ArccosRelu;
        for _ in 0..100 {
            let w = rand_vec(&mut rng, 4);
            let v = rand_vec(&mut rng, 4);
            let (a, b) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
            let wa: Vec<f64> = w.iter().map(|x| a * x).collect();
            let vb: Vec<f64> = v.iter().map(|x| b * x).collect();
            let lhs = k.eval(&wa, &vb);
            let scale = a * b * norm(&w) * norm(&v);
            assert!((lhs - a * b * k.eval(&w, &v)).abs() <= 1e-14 * scale);
            assert_eq!(k.eval(&w, &v), k.eval(&v, &w));
        }
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
        let h = 1e-5 * (1.0 + norm(w));
        (0..w.len())
            .map(|p| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[p] += h;
                b[p] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&diff) / norm(b).max(1e-8)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let data = random_data(40, 3, 5);
        let smooth = KernelSpec::Empirical { data: &data, act: Activation::smoothed(0.5) };
        let mut rng = RngSpec::new(2, 2).rng();
        for k in [smooth, KernelSpec::ArccosRelu] {
            for _ in 0..20 {
                let w = rand_vec(&mut rng, 3);
                let v = rand_vec(&mut rng, 3);
                let g = k.grad(&w, &v);
                assert!(rel_err(&g, &fd_grad(|x| k.eval(x, &v), &w)) < 1e-5);
                let cross = k.cross_grad(&w, &v);
                let hess = k.hess(&w, &v).unwrap();
                for q in 0..3 {
                    // column q of the cross derivative = ∂/∂w'_q of ∇_w K
                    let col: Vec<f64> = (0..3).map(|p| cross.get(p, q)).collect();
                    let fd: Vec<f64> = {
                        let h = 1e-5 * (1.0 + norm(&v));
                        let mut a = v.clone();
                        let mut b = v.clone();
                        a[q] += h;
                        b[q] -= h;
                        let ga = k.grad(&w, &a);
                        let gb = k.grad(&w, &b);
                        ga.iter().zip(&gb).map(|(x, y)| (x - y) / (2.0 * h)).collect()
                    };
                    assert!(rel_err(&col, &fd) < 1e-5, "cross col {q}: {col:?} vs {fd:?}");
                    let hcol: Vec<f64> = (0..3).map(|p| hess.get(p, q)).collect();
                    let fdh: Vec<f64> = {
                        let h = 1e-5 * (1.0 + norm(&w));
                        let mut a = w.clone();
                        let mut b = w.clone();
                        a[q] += h;
                        b[q] -= h;
                        let ga = k.grad(&a, &v);
                        let gb = k.grad(&b, &v);
                        ga.iter().zip(&gb).map(|(x, y)| (x - y) / (2.0 * h)).collect()
                    };
                    assert!(rel_err(&hcol, &fdh) < 1e-5, "hess col {q}: {hcol:?} vs {fdh:?}");
                }
            }
        }
    }

    #[test]
    fn relu_hessian_unsupported() {
        let data = random_data(4, 2, 1);
        let k = KernelSpec::Empirical { data: &data, act: Activation::Relu };
        assert!(matches!(k.hess(&[1.0, 0.0], &[0.0, 1.0]), Err(Error::UnsupportedDerivative { .. })));
    }

    #[test]
    fn arccos_tangential_gradient_vanishes_on_diagonal() {
        let dom = DomainSpec::sphere(3).unwrap();
        let w = dom.project(&[0.3, -1.0, 0.7]).unwrap();
        let g = KernelSpec::ArccosRelu.grad(&w, &w);
        let t = dom.tangent_project(&w, &g);
        assert!(norm(&t) < 1e-15);
    }

    #[test]
    fn cross_grad_schwarz_symmetry() {
        let data = random_data(30, 3, 8);
        let mut rng = RngSpec::new(3, 3).rng();
        for k in [KernelSpec::Empirical { data: &data, act: Activation::smoothed(0.3) }, KernelSpec::ArccosRelu] {
            for _ in 0..20 {
                let w = rand_vec(&mut rng, 3);
                let v = rand_vec(&mut rng, 3);
                let a = k.cross_grad(&w, &v);
                let b = k.cross_grad(&v, &w).transpose();
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn embedding_loss_basics() {
        let data = random_data(16, 3, 4);
        let act = Activation::Relu;
        let k = KernelSpec::Empirical { data: &data, act };
        let dom = DomainSpec::euclidean(3).unwrap();
        let a = sample_init(dom, 5, InitKind::gaussian(1.0), RngSpec::new(1, 0)).unwrap();
        let wa = WeightedEnsemble::from(&a);
        assert!(kernel_mean_embedding_pair_loss(&k, &wa, &wa).unwrap().abs() < 1e-12);
        let p = [0.3, -0.2, 1.0];
        let q = [-0.5, 0.4, 0.9];
        let sp = WeightedEnsemble::new(p.to_vec(), vec![1.0], 3).unwrap();
        let sq = WeightedEnsemble::new(q.to_vec(), vec![1.0], 3).unwrap();
        let expect = k.eval(&p, &p) - 2.0 * k.eval(&p, &q) + k.eval(&q, &q);
        assert!((kernel_mean_embedding_pair_loss(&k, &sp, &sq).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn mse_examples() {
        let data = DataSample::uniform(vec![0.6, 0.8], vec![0.0], 2).unwrap();
        let dom = DomainSpec::euclidean(2).unwrap();
        let a = Ensemble::new(vec![1.0, 1.0], dom).unwrap();
        let b = Ensemble::new(vec![2.0, -0.5], dom).unwrap();
        let act = Activation::Relu;
        let expect = (act.value(1.4) - act.value(0.8)).powi(2);
        assert!((mse_function_error(&data, act, &a, &b).unwrap() - expect).abs() < 1e-15);
        assert_eq!(mse_function_error(&data, act, &a, &a).unwrap(), 0.0);
        let y = data.with_labels(vec![0.3]).unwrap();
        let l = excess_loss(&y, act, &a, &[0.3]).unwrap();
        assert!((l - (1.4 - 0.3f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn excess_loss_matches_function_error_against_realizing_ensemble() {
        let base = random_data(32, 3, 11);
        let act = Activation::smoothed(0.2);
        let dom = DomainSpec::euclidean(3).unwrap();
        let teacher = sample_init(dom, 7, InitKind::gaussian(1.0), RngSpec::new(5, 0)).unwrap();
        let data = base.with_labels(network_outputs(&base, act, &teacher)).unwrap();
        let student = sample_init(dom, 9, InitKind::gaussian(1.0), RngSpec::new(6, 0)).unwrap();
        let fstar = data.labels().to_vec();
        assert!(excess_loss(&data, act, &teacher, &fstar).unwrap().abs() < 1e-15);
        let l = excess_loss(&data, act, &student, &fstar).unwrap();
        let m = mse_function_error(&data, act, &student, &teacher).unwrap();
        assert!((l - m).abs() <= 1e-13 * m);
    }
}
