//! Linearized error dynamics around the reference characteristics: local
//! Hessian `D`, interaction Hessian `H` (through its feature factorization),
//! the source term `β`, the measured residual, and the constant-coefficient
//! toy ODE.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::DataSample;
use crate::domain::DomainSpec;
use crate::dynamics::{residual_weights, CoupledSnapshot};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::hot;
use crate::kernel::network_outputs;
use crate::linalg::{dot, norm, Mat};
use crate::par;

/// Everything needed to evaluate `D_t`, `H_t`, `β_t` at one time: the `m`
/// coupled reference characteristics and the reference network outputs.
#[derive(Debug, Clone)]
pub struct LinearizationContext<'a> {
    data: &'a DataSample,
    act: Activation,
    xi: Ensemble,
    /// `y - f_ref` weighted by the data weights.
    ref_coef: Vec<f64>,
    /// `a (f_ref - f_bar)`.
    source_coef: Vec<f64>,
}

impl<'a> LinearizationContext<'a> {
    /// `xi` are the first `m` reference rows; `ref_full` is the whole
    /// reference ensemble standing in for the mean-field measure.
    pub fn new(data: &'a DataSample, act: Activation, xi: &Ensemble, ref_full: &Ensemble) -> Result<Self> {
        let f_ref = network_outputs(data, act, ref_full);
        Self::from_outputs(data, act, xi, &f_ref)
    }

    pub fn from_outputs(data: &'a DataSample, act: Activation, xi: &Ensemble, ref_outputs: &[f64]) -> Result<Self> {
        if xi.d() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: xi.d() });
        }
        if ref_outputs.len() != data.n() {
            return Err(Error::DimensionMismatch { expected: data.n(), got: ref_outputs.len() });
        }
        let f_bar = network_outputs(data, act, xi);
        let source_coef = data
            .weights()
            .iter()
            .zip(ref_outputs.iter().zip(&f_bar))
            .map(|(a, (r, b))| a * (r - b))
            .collect();
        Ok(Self { data, act, xi: xi.clone(), ref_coef: residual_weights(data, ref_outputs), source_coef })
    }

    pub fn m(&self) -> usize {
        self.xi.m()
    }

    pub fn d(&self) -> usize {
        self.xi.d()
    }

    pub fn domain(&self) -> DomainSpec {
        self.xi.domain()
    }

    pub fn characteristics(&self) -> &Ensemble {
        &self.xi
    }

    fn check_delta(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.m() * self.d() {
            return Err(Error::DimensionMismatch { expected: self.m() * self.d(), got: delta.len() });
        }
        Ok(())
    }

    /// `g(ξ) = Σ a (y - f_ref) σ'(ξ·x) x`, the unprojected velocity.
    fn drift(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        hot::feature_sum(w, self.data.inputs(), &self.ref_coef, self.act, &mut g);
        g
    }

    /// `Σ a (y - f_ref) σ''(ξ·x) (x·v) x`.
    fn drift_jacobian_apply(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; w.len()];
        for (k, x) in self.data.inputs().chunks_exact(w.len()).enumerate() {
            let c = self.ref_coef[k] * self.act.second_deriv(dot(w, x))? * dot(x, v);
            out.iter_mut().zip(x).for_each(|(o, xi)| *o += c * xi);
        }
        Ok(out)
    }

    /// `D(i) v` without forming the matrix.
    pub fn local_hessian_apply(&self, i: usize, v: &[f64]) -> Result<Vec<f64>> {
        let w = self.xi.row(i);
        let domain = self.domain();
        let pv = domain.tangent_project(w, v);
        let mut jv = self.drift_jacobian_apply(w, &pv)?;
        if domain.is_sphere() {
            // ∇[P_ξ g] = P∇g - (ξ·g) I - ξ gᵀ
            let g = self.drift(w);
            domain.tangent_project_in_place(w, &mut jv);
            let (wg, gv) = (dot(w, &g), dot(&g, &pv));
            for p in 0..jv.len() {
                jv[p] -= wg * pv[p] + w[p] * gv;
            }
        }
        Ok(jv)
    }

    /// The `d × d` local Hessian `D(i) = ∇_ξ ν(ξ, ρ_ref) P_ξ` at `ξ = ξ_i`.
    pub fn local_hessian(&self, i: usize) -> Result<Mat> {
        let d = self.d();
        let mut out = Mat::zeros(d);
        let mut e = vec![0.0; d];
        for q in 0..d {
            e.iter_mut().enumerate().for_each(|(p, x)| *x = if p == q { 1.0 } else { 0.0 });
            let col = self.local_hessian_apply(i, &e)?;
            for (p, v) in col.into_iter().enumerate() {
                out.set(p, q, v);
            }
        }
        Ok(out)
    }

    pub fn local_hessian_op_norms(&self) -> Result<Vec<f64>> {
        if !self.act.has_second_derivative() {
            return Err(Error::UnsupportedDerivative { activation: self.act.name(), order: 2 });
        }
        par::map_indices(self.m(), |i| self.local_hessian(i).map(|h| h.op_norm()))
            .into_iter()
            .collect()
    }

    /// `u(x) = (1/m) Σ_j σ'(ξ_j·x) x·P_jΔ_j`, i.e. `VΔ` on the data.
    fn feature_apply(&self, delta: &[f64]) -> Vec<f64> {
        let (d, m) = (self.d(), self.m());
        let domain = self.domain();
        let projected: Vec<f64> = self
            .xi
            .rows()
            .zip(delta.chunks_exact(d))
            .flat_map(|(w, dl)| domain.tangent_project(w, dl))
            .collect();
        let xi = self.xi.weights();
        par::map_indices(self.data.n(), |k| {
            let x = self.data.input(k);
            let mut s = 0.0;
            for j in 0..m {
                let w = &xi[j * d..(j + 1) * d];
                s += self.act.deriv(dot(w, x)) * dot(x, &projected[j * d..(j + 1) * d]);
            }
            s / m as f64
        })
    }

    /// `ΔᵀHΔ = E_i E_j Δ_iᵀ H(i,j) Δ_j = Σ a u(x)²`, O(mnd).
    pub fn h_quadratic_form(&self, delta: &[f64]) -> Result<f64> {
        self.check_delta(delta)?;
        let u = self.feature_apply(delta);
        Ok(self.data.weights().iter().zip(&u).map(|(a, v)| a * v * v).sum())
    }

    /// `(HΔ)_i = E_j H(i,j) Δ_j = P_i Σ a σ'(ξ_i·x) x u(x)`.
    pub fn h_apply(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.check_delta(delta)?;
        let u = self.feature_apply(delta);
        let coef: Vec<f64> = self.data.weights().iter().zip(&u).map(|(a, v)| a * v).collect();
        Ok(self.project_feature_sums(&coef))
    }

    fn project_feature_sums(&self, coef: &[f64]) -> Vec<f64> {
        let d = self.d();
        let domain = self.domain();
        let mut out = vec![0.0; self.m() * d];
        par::for_each_row_mut(&mut out, d, |i, row| {
            let w = self.xi.row(i);
            hot::feature_sum(w, self.data.inputs(), coef, self.act, row);
            domain.tangent_project_in_place(w, row);
        });
        out
    }

    /// `β(i) = P_i Σ a σ'(ξ_i·x) x (f_ref(x) - f_bar(x))`: the velocity gap
    /// between the coupled empirical measure and the reference measure.
    pub fn beta_source(&self) -> Vec<f64> {
        self.project_feature_sums(&self.source_coef)
    }

    /// `D(i)Δ_i - (HΔ)_i + β(i)` for all rows.
    pub fn linearized_rhs(&self, delta: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        let h = self.h_apply(delta)?;
        let beta = self.beta_source();
        let local: Vec<Result<Vec<f64>>> =
            par::map_indices(self.m(), |i| self.local_hessian_apply(i, &delta[i * d..(i + 1) * d]));
        let mut out = Vec::with_capacity(delta.len());
        for (i, dv) in local.into_iter().enumerate() {
            let dv = dv?;
            for p in 0..d {
                out.push(dv[p] - h[i * d + p] + beta[i * d + p]);
            }
        }
        Ok(out)
    }
}

fn max_row_norm(v: &[f64], d: usize) -> f64 {
    v.chunks_exact(d).map(norm).fold(0.0, f64::max)
}

/// Measured linearization error at the middle of three equispaced snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub t: f64,
    /// `max_i ‖(Δ_{t+h} − Δ_{t−h})/2h − [DΔ − HΔ + β]_i‖`.
    pub residual: f64,
    /// `max_i ‖(Δ_{t+h} − Δ_{t−h})/2h‖`.
    pub derivative: f64,
}

impl ResidualReport {
    pub fn ratio(&self) -> f64 {
        self.residual / self.derivative
    }
}

/// `ctx` must be built at the middle snapshot.
pub fn linearized_residual(
    prev: &CoupledSnapshot,
    mid: &CoupledSnapshot,
    next: &CoupledSnapshot,
    ctx: &LinearizationContext<'_>,
) -> Result<ResidualReport> {
    let h = mid.t - prev.t;
    if !(h > 0.0) || ((next.t - mid.t) - h).abs() > 1e-9 * h {
        return Err(Error::SnapshotSpacing(format!(
            "snapshots at {}, {}, {} are not equispaced",
            prev.t, mid.t, next.t
        )));
    }
    let d = mid.d();
    let rhs = ctx.linearized_rhs(&mid.delta)?;
    let deriv: Vec<f64> = next.delta.iter().zip(&prev.delta).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<f64> = deriv.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    Ok(ResidualReport { t: mid.t, residual: max_row_norm(&diff, d), derivative: max_row_norm(&deriv, d) })
}

/// Per-snapshot operator summary, one JSONL record under `"operators"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDiagnostics {
    pub t: f64,
    pub d_op_norms: Vec<f64>,
    pub h_quadratic: f64,
    /// Row-major `m × d`.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub beta: Vec<f64>,
    pub beta_inf: f64,
    /// NaN until a residual has been measured at this time.
    pub residual_norm: f64,
    pub sqrt_loss: f64,
}

impl OperatorDiagnostics {
    pub fn compute(ctx: &LinearizationContext<'_>, snap: &CoupledSnapshot) -> Result<Self> {
        let beta = ctx.beta_source();
        Ok(Self {
            t: snap.t,
            d_op_norms: ctx.local_hessian_op_norms()?,
            h_quadratic: ctx.h_quadratic_form(&snap.delta)?,
            beta_inf: max_row_norm(&beta, ctx.d()),
            beta,
            residual_norm: f64::NAN,
            sqrt_loss: snap.loss_ref.max(0.0).sqrt(),
        })
    }

    pub fn max_d_norm(&self) -> f64 {
        self.d_op_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// `(t, ‖X_t‖, X_tᵀHX_t)` for `dX/dt = -HX + e`, `X_0 = 0`, `H = diag(λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyOdePoint {
    pub t: f64,
    pub norm: f64,
    pub h_quad: f64,
}

/// Closed-form mode coefficient `e (1 - e^{-λt}) / λ`, `e t` at `λ = 0`.
pub fn toy_mode(lambda: f64, e: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        e * t
    } else {
        -e * (-lambda * t).exp_m1() / lambda
    }
}

pub fn toy_ode(lambda: &[f64], e: &[f64], t_grid: &[f64]) -> Result<Vec<ToyOdePoint>> {
    if lambda.len() != e.len() {
        return Err(Error::DimensionMismatch { expected: lambda.len(), got: e.len() });
    }
    if lambda.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::DomainError("eigenvalues must be nonnegative".into()));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let (mut n2, mut q) = (0.0, 0.0);
            for (&l, &ei) in lambda.iter().zip(e) {
                let x = toy_mode(l, ei, t);
                n2 += x * x;
                q += l * x * x;
            }
            ToyOdePoint { t, norm: n2.sqrt(), h_quad: q }
        })
        .collect())
}

/// One-mode system where the fluctuation grows to `2M(1 - 1/e)` by time
/// `4M²/ε²` while its `H`-energy stays below `ε²`.
pub fn counterexample_system(eps: f64, big_m: f64) -> (Vec<f64>, Vec<f64>) {
    let lambda = eps * eps / (4.0 * big_m * big_m);
    (vec![lambda], vec![lambda.sqrt() * eps])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::velocity;
    use crate::ensemble::{sample_init, InitKind};
    use crate::kernel::KernelSpec;
    use crate::rng::RngSpec;
    use rand::Rng;

    fn data(n: usize, d: usize, seed: u64) -> DataSample {
        let mut rng = RngSpec::new(seed, 9).rng();
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DataSample::uniform(x, y, d).unwrap()
    }

    fn random_delta(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngSpec::new(seed, 7).rng();
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn setup(domain: DomainSpec, m: usize, m_ref: usize, n: usize, seed: u64) -> (DataSample, Ensemble, Ensemble) {
        let init = if domain.is_sphere() { InitKind::UniformSphere } else { InitKind::gaussian(1.0) };
        let full = sample_init(domain, m_ref, init, RngSpec::new(seed, 0)).unwrap();
        let xi = full.head(m).unwrap();
        (data(n, domain.dim(), seed), xi, full)
    }

    #[test]
    fn local_hessian_matches_finite_difference() {
        let act = Activation::smoothed(0.3);
        for domain in [DomainSpec::euclidean(3).unwrap(), DomainSpec::sphere(3).unwrap()] {
            let (data, xi, full) = setup(domain, 4, 12, 20, 5);
            let ctx = LinearizationContext::new(&data, act, &xi, &full).unwrap();
            for i in 0..4 {
                let dmat = ctx.local_hessian(i).unwrap();
                let w = xi.row(i);
                let v = domain.tangent_project(w, &random_delta(3, i as u64));
                let h = 1e-5;
                let shifted = |s: f64| -> Vec<f64> {
                    let p: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                    velocity(&p, &full, &data, act, domain).unwrap()
                };
                let (a, b) = (shifted(h), shifted(-h));
                let fd: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect();
                let an = dmat.matvec(&v);
                let err: f64 = norm(&fd.iter().zip(&an).map(|(x, y)| x - y).collect::<Vec<_>>());
                assert!(err < 1e-4 * norm(&an).max(1e-8), "{domain:?} {err} {}", norm(&an));
            }
        }
    }

    #[test]
    fn local_hessian_vanishes_at_zero_residual() {
        let domain = DomainSpec::euclidean(2).unwrap();
        let act = Activation::smoothed(0.1);
        let (base, xi, full) = setup(domain, 3, 9, 10, 1);
        let data = base.with_labels(network_outputs(&base, act, &full)).unwrap();
        let ctx = LinearizationContext::new(&data, act, &xi, &full).unwrap();
        assert!(ctx.local_hessian(0).unwrap().frobenius() < 1e-14);
    }

    #[test]
    fn relu_has_no_local_hessian() {
        let domain = DomainSpec::euclidean(2).unwrap();
        let (data, xi, full) = setup(domain, 3, 9, 10, 1);
        let ctx = LinearizationContext::new(&data, Activation::Relu, &xi, &full).unwrap();
        assert!(matches!(ctx.local_hessian(0), Err(Error::UnsupportedDerivative { .. })));
        assert!(ctx.local_hessian_op_norms().is_err());
    }

    fn dense_quadratic(ctx: &LinearizationContext<'_>, data: &DataSample, act: Activation, delta: &[f64]) -> f64 {
        let k = KernelSpec::Empirical { data, act };
        let (m, d) = (ctx.m(), ctx.d());
        let domain = ctx.domain();
        let xi = ctx.characteristics();
        let pd: Vec<Vec<f64>> = (0..m).map(|i| domain.tangent_project(xi.row(i), &delta[i * d..(i + 1) * d])).collect();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let hij = k.cross_grad(xi.row(i), xi.row(j));
                s += dot(&pd[i], &hij.matvec(&pd[j]));
            }
        }
        s / (m * m) as f64
    }

    #[test]
    fn v_form_matches_dense_operator() {
        for (domain, act) in [
            (DomainSpec::euclidean(3).unwrap(), Activation::smoothed(0.2)),
            (DomainSpec::sphere(3).unwrap(), Activation::Relu),
        ] {
            for seed in 0..5 {
                let (data, xi, full) = setup(domain, 8, 20, 16, seed);
                let ctx = LinearizationContext::new(&data, act, &xi, &full).unwrap();
                let delta = random_delta(24, seed);
                let v = ctx.h_quadratic_form(&delta).unwrap();
                let dense = dense_quadratic(&ctx, &data, act, &delta);
                assert!((v - dense).abs() <= 1e-10 * dense.abs(), "{v} vs {dense}");
                // the applied form is consistent with the quadratic form
                let applied = ctx.h_apply(&delta).unwrap();
                assert!((dot(&applied, &delta) / 8.0 - v).abs() <= 1e-10 * v);
            }
        }
    }

    #[test]
    fn h_quadratic_examples() {
        let domain = DomainSpec::euclidean(2).unwrap();
        let (data, xi, full) = setup(domain, 5, 10, 12, 2);
        let act = Activation::smoothed(0.1);
        let ctx = LinearizationContext::new(&data, act, &xi, &full).unwrap();
        assert_eq!(ctx.h_quadratic_form(&[0.0; 10]).unwrap(), 0.0);
        for s in 0..100 {
            assert!(ctx.h_quadratic_form(&random_delta(10, s)).unwrap() >= 0.0);
        }
        let one = DataSample::uniform(vec![0.3, -0.4], vec![1.0], 2).unwrap();
        let e = Ensemble::new(vec![0.5, 0.2], domain).unwrap();
        let ctx = LinearizationContext::new(&one, act, &e, &e).unwrap();
        let dl = [0.7, 1.1];
        let expect = (act.deriv(0.15 - 0.08) * (0.3 * 0.7 - 0.4 * 1.1)).powi(2);
        assert!((ctx.h_quadratic_form(&dl).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn beta_examples() {
        let domain = DomainSpec::euclidean(2).unwrap();
        let act = Activation::smoothed(0.2);
        let (data, xi, _) = setup(domain, 6, 6, 10, 3);
        let ctx = LinearizationContext::new(&data, act, &xi, &xi).unwrap();
        assert!(ctx.beta_source().iter().all(|&b| b == 0.0));

        // m = 1, m_ref = 2: β = ∇_w E_{ref} K(w, ·) gap, by hand via the kernel gradient
        let (data, _, full) = setup(domain, 1, 2, 10, 4);
        let xi = full.head(1).unwrap();
        let ctx = LinearizationContext::new(&data, act, &xi, &full).unwrap();
        let k = KernelSpec::Empirical { data: &data, act };
        let w = full.row(0);
        let g_bar = k.grad(w, full.row(0));
        let g_ref: Vec<f64> = k.grad(w, full.row(0)).iter().zip(k.grad(w, full.row(1))).map(|(a, b)| 0.5 * (a + b)).collect();
        let beta = ctx.beta_source();
        for p in 0..2 {
            assert!((beta[p] - (g_ref[p] - g_bar[p])).abs() < 1e-14);
        }
    }

    #[test]
    fn toy_ode_examples() {
        let (l, e) = counterexample_system(0.1, 10.0);
        let t_star = 4.0 * 100.0 / 0.01;
        let pt = toy_ode(&l, &e, &[t_star]).unwrap()[0];
        assert!((pt.norm - 20.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        assert!(pt.norm >= 10.0);
        let grid: Vec<f64> = (0..=10_000).map(|i| 10.0 * t_star * i as f64 / 10_000.0).collect();
        assert!(toy_ode(&l, &e, &grid).unwrap().iter().all(|p| p.h_quad <= 0.01 + 1e-12));
        assert!(toy_ode(&[1.0, 0.0], &[0.0, 0.0], &grid).unwrap().iter().all(|p| p.norm == 0.0));
        assert_eq!(toy_mode(0.0, 2.0, 3.0), 6.0);
        assert!(toy_ode(&[-1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn toy_ode_matches_explicit_euler() {
        let lambda = [0.5, 2.0, 0.0, 1e-3];
        let e = [1.0, -0.3, 0.2, 0.05];
        let dt = 1e-3 * (1.0f64 / 2.0).min(1.0);
        let steps = 5000;
        let mut x = [0.0; 4];
        for _ in 0..steps {
            for p in 0..4 {
                x[p] += dt * (-lambda[p] * x[p] + e[p]);
            }
        }
        let closed = toy_ode(&lambda, &e, &[dt * steps as f64]).unwrap()[0];
        let euler = norm(&x);
        assert!((closed.norm - euler).abs() < 1e-3 * closed.norm);
    }

    #[test]
    fn toy_energy_bound() {
        let mut rng = RngSpec::new(11, 0).rng();
        for _ in 0..50 {
            let l: Vec<f64> = (0..5).map(|_| rng.random_range(1e-3..3.0)).collect();
            let e: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bound: f64 = l.iter().zip(&e).map(|(a, b)| b * b / a).sum();
            let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
            assert!(toy_ode(&l, &e, &grid).unwrap().iter().all(|p| p.h_quad <= bound * (1.0 + 1e-12)));
        }
    }

    fn coupled_residual(m: usize, m_ref: usize) -> ResidualReport {
        use crate::dynamics::{run_coupled_with, FlowConfig};
        let n = 64;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            x.extend([th.cos(), th.sin()]);
            y.push(0.5 + 0.25 * th.cos() + 0.1 * (2.0 * th).cos());
        }
        let data = DataSample::uniform(x, y, 2).unwrap();
        let act = Activation::smoothed(0.1);
        let mut cfg = FlowConfig::new(data.clone(), DomainSpec::euclidean(2).unwrap(), act, InitKind::gaussian(1.0));
        cfg.m = m;
        cfg.m_ref = m_ref;
        cfg.eta = 0.05;
        cfg.eta_ref = 0.05;
        cfg.horizon = 2.1;
        cfg.snapshot_times = vec![1.95, 2.0, 2.05];
        let mut ctx_mid = None;
        let traj = run_coupled_with(&cfg, |s, c| {
            if (s.t - 2.0).abs() < 1e-9 {
                ctx_mid = Some(LinearizationContext::from_outputs(&data, act, &s.xi_ref, c.ref_outputs)?);
            }
            Ok(())
        })
        .unwrap();
        let s = &traj.snapshots;
        linearized_residual(&s[0], &s[1], &s[2], ctx_mid.as_ref().unwrap()).unwrap()
    }

    #[test]
    fn residual_vanishes_without_fluctuation() {
        let r = coupled_residual(32, 32);
        assert_eq!(r.residual, 0.0);
        let r = coupled_residual(32, 512);
        assert!(r.derivative > 0.0 && r.ratio() < 0.2, "{r:?}");
    }

    #[test]
    fn residual_rejects_uneven_spacing() {
        let (data, xi, full) = setup(DomainSpec::euclidean(2).unwrap(), 2, 4, 5, 0);
        let ctx = LinearizationContext::new(&data, Activation::smoothed(0.1), &xi, &full).unwrap();
        let snap = |t: f64| CoupledSnapshot {
            t,
            xi_ref: xi.clone(),
            xi_hat: xi.clone(),
            delta: vec![0.0; 4],
            loss_ref: 0.0,
            loss_hat: 0.0,
            max_particle_norm: 1.0,
        };
        let err = linearized_residual(&snap(0.0), &snap(1.0), &snap(3.0), &ctx).unwrap_err();
        assert!(matches!(err, Error::SnapshotSpacing(_)));
    }
}
