//! Fast oracle checks runnable from the command line.

use std::f64::consts::PI;

use gauss_quad::GaussLegendre;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::activation::Activation;
use crate::data::DataSample;
use crate::diagnostics::{power_law_fit, sqrt_loss_integral, LossCurve};
use crate::domain::DomainSpec;
use crate::dynamics::velocity;
use crate::ensemble::{sample_init, Ensemble, InitKind};
use crate::euler::{build_grid, grid_velocity, grid_velocity_direct, target_density, upwind_step, ArccosConvolver, DensityKind, VmfComponent};
use crate::kernel::{excess_loss, kernel_mean_embedding_pair_loss, mse_function_error, KernelSpec, WeightedEnsemble};
use crate::operators::{counterexample_system, toy_ode, LinearizationContext};
use crate::plot;
use crate::rng::RngSpec;
use crate::targets::{data_circle, relu_fourier_coeffs, rho_star_s1, sobolev_coeffs};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, total: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn gaussian_data(n: usize, d: usize, seed: u64) -> DataSample {
    let mut rng = RngSpec::new(seed, 9).rng();
    let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * d].max(0.0)).collect();
    DataSample::uniform(x, y, d).expect("valid sample")
}

fn kernel_suite() -> SuiteResult {
    let mut s = SuiteResult::new("kernel");
    let act = Activation::Relu;
    for k in 0..20u64 {
        let d = 2 + (k as usize % 4);
        let data = gaussian_data(64, d, k);
        let dom = DomainSpec::euclidean(d).expect("d >= 1");
        let a = sample_init(dom, 3 + k as usize, InitKind::gaussian(1.0), RngSpec::new(k, 0)).expect("init");
        let b = sample_init(dom, 17, InitKind::gaussian(1.0), RngSpec::new(k, 1)).expect("init");
        let l2 = mse_function_error(&data, act, &a, &b).expect("dims agree");
        let rkhs = kernel_mean_embedding_pair_loss(
            &KernelSpec::Empirical { data: &data, act },
            &WeightedEnsemble::from(&a),
            &WeightedEnsemble::from(&b),
        )
        .expect("dims agree");
        s.check((l2 - rkhs).abs() <= 1e-10 * l2.abs().max(1e-12), || format!("pair {k}: L2 {l2} vs RKHS {rkhs}"));
    }
    // E[ReLU(w·x)²] = |w|²/2 for Gaussian x
    let w = [0.6, -0.8, 2.0];
    let kk = KernelSpec::ArccosRelu.eval(&w, &w);
    s.check((kk - 0.5 * 5.0).abs() < 1e-12, || format!("arccos diagonal {kk}"));
    s
}

fn targets_suite() -> SuiteResult {
    let mut s = SuiteResult::new("targets");
    let gl = GaussLegendre::new(200.try_into().expect("nonzero"));
    let closed = relu_fourier_coeffs(20);
    for (k, &c) in closed.iter().enumerate() {
        let q: f64 = gl.integrate(-PI / 2.0, PI / 2.0, |t| t.cos() * (k as f64 * t).cos()) / (2.0 * PI);
        s.check((q - c).abs() < 1e-10, || format!("phi_hat[{k}]: {q} vs {c}"));
    }
    let target = sobolev_coeffs(8.0, 128).expect("valid target");
    let rho = rho_star_s1(&target);
    let worst = (0..64)
        .map(|j| {
            let th = 2.0 * PI * j as f64 / 64.0;
            (target.eval_angle(th) - rho.represent(th)).abs()
        })
        .fold(0.0, f64::max);
    s.check(worst < 1e-3, || format!("representation error {worst}"));
    s
}

fn dynamics_suite() -> SuiteResult {
    let mut s = SuiteResult::new("dynamics");
    let target = sobolev_coeffs(4.0, 32).expect("valid target");
    let data = data_circle(&target, 24).expect("n > 0");
    let dom = DomainSpec::euclidean(2).expect("d >= 1");
    let act = Activation::smoothed(0.3);
    let e = sample_init(dom, 5, InitKind::gaussian(1.0), RngSpec::new(4, 0)).expect("init");
    let fstar = data.labels().to_vec();
    let m = e.m() as f64;
    for j in 0..e.m() {
        let v = velocity(e.row(j), &e, &data, act, dom).expect("dims agree");
        for p in 0..2 {
            let h = 1e-5;
            let shift = |sgn: f64| {
                let mut w = e.weights().to_vec();
                w[j * 2 + p] += sgn * h;
                excess_loss(&data, act, &Ensemble::new(w, dom).expect("finite"), &fstar).expect("dims agree")
            };
            let expect = -m / 2.0 * (shift(1.0) - shift(-1.0)) / (2.0 * h);
            s.check((v[p] - expect).abs() <= 1e-5 * expect.abs().max(1e-3), || format!("velocity[{j},{p}] {} vs {expect}", v[p]));
        }
    }
    let sphere = DomainSpec::sphere(3).expect("d >= 2");
    let data3 = gaussian_data(40, 3, 5);
    let e3 = sample_init(sphere, 6, InitKind::UniformSphere, RngSpec::new(5, 0)).expect("init");
    for j in 0..6 {
        let v = velocity(e3.row(j), &e3, &data3, Activation::Relu, sphere).expect("dims agree");
        let radial: f64 = v.iter().zip(e3.row(j)).map(|(a, b)| a * b).sum();
        s.check(radial.abs() < 1e-12, || format!("sphere velocity {j} radial part {radial}"));
    }
    s
}

fn operators_suite() -> SuiteResult {
    let mut s = SuiteResult::new("operators");
    let (lambda, e) = counterexample_system(0.1, 10.0);
    let t_star = 4.0 * 100.0 / 0.01;
    let pts = toy_ode(&lambda, &e, &[t_star]).expect("valid system");
    let want = 20.0 * (1.0 - (-1.0f64).exp());
    s.check((pts[0].norm - want).abs() < 1e-6, || format!("toy norm {} vs {want}", pts[0].norm));
    let grid: Vec<f64> = (0..=2000).map(|k| 10.0 * t_star * k as f64 / 2000.0).collect();
    let peak = toy_ode(&lambda, &e, &grid).expect("valid system").iter().map(|p| p.h_quad).fold(0.0, f64::max);
    s.check(peak <= 0.01 + 1e-12, || format!("toy dissipation peak {peak}"));

    let data = gaussian_data(48, 3, 6);
    let dom = DomainSpec::euclidean(3).expect("d >= 1");
    let act = Activation::smoothed(0.2);
    let reference = sample_init(dom, 64, InitKind::gaussian(1.0), RngSpec::new(6, 0)).expect("init");
    let xi = reference.head(8).expect("m <= m_ref");
    let ctx = LinearizationContext::new(&data, act, &xi, &reference).expect("dims agree");
    let mut rng = RngSpec::new(6, 3).rng();
    for k in 0..10 {
        let delta: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
        let q = ctx.h_quadratic_form(&delta).expect("dims agree");
        s.check(q >= -1e-12, || format!("H not PSD on probe {k}: {q}"));
        let hv = ctx.h_apply(&delta).expect("dims agree");
        // the quadratic form averages over rows: E_i Δ_i·(HΔ)_i
        let q2 = hv.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>() / 8.0;
        s.check((q - q2).abs() <= 1e-10 * q.abs().max(1e-12), || format!("E_i Δ_i·(HΔ)_i {q2} vs quadratic form {q}"));
    }
    s
}

fn euler_suite() -> SuiteResult {
    let mut s = SuiteResult::new("euler");
    let grid = build_grid(8, 16).expect("valid grid");
    let conv = ArccosConvolver::new(&grid);
    let target = target_density(
        &DensityKind::VmfMixture { components: vec![VmfComponent { mean: [0.0, 0.0, 1.0], kappa: 3.0, weight: 1.0 }] },
        &grid,
    )
    .expect("valid target");
    let mut rho = target_density(&DensityKind::Uniform, &grid).expect("valid init");
    let fast = grid_velocity(&grid, &conv, &rho, &target).expect("same grid");
    let slow = grid_velocity_direct(&grid, &rho, &target).expect("same grid");
    let err = fast
        .velocity
        .iter()
        .zip(&slow.velocity)
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
        .fold(0.0, f64::max);
    s.check(err < 1e-12, || format!("FFT vs direct velocity differ by {err}"));
    s.check((fast.loss - slow.loss).abs() < 1e-12, || format!("loss {} vs {}", fast.loss, slow.loss));
    let mut prev = fast.loss;
    for k in 0..20 {
        let gv = grid_velocity(&grid, &conv, &rho, &target).expect("same grid");
        s.check(gv.loss <= prev + 1e-12, || format!("loss increased at step {k}"));
        prev = gv.loss;
        rho = upwind_step(&grid, &rho, &gv.velocity, 0.5, 1.0).unwrap_or(rho);
        let drift = (rho.total() - 1.0).abs();
        s.check(drift < 1e-13, || format!("mass drift {drift} at step {k}"));
    }
    s
}

fn diagnostics_suite() -> SuiteResult {
    let mut s = SuiteResult::new("diagnostics");
    let x = [1.0, 2.0, 4.0, 8.0, 16.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.75)).collect();
    let fit = power_law_fit(&x, &y).expect("positive inputs");
    s.check((fit.slope + 0.75).abs() < 1e-12 && fit.r2 > 1.0 - 1e-12, || format!("power-law slope {}", fit.slope));
    let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    let curve = LossCurve::new(t.clone(), vec![4.0; t.len()]).expect("valid curve");
    let r = sqrt_loss_integral(&curve, 10.0);
    s.check((r - 20.0).abs() < 1e-12, || format!("∫√4 over [0,10] = {r}"));
    let a = plot::loss_plot(&[("c".into(), curve.clone())], &[]).expect("plottable");
    let b = plot::loss_plot(&[("c".into(), curve)], &[]).expect("plottable");
    s.check(a == b, || "SVG output is not deterministic".into());
    s
}

/// Runs every suite; the caller decides how to report.
pub fn run_selftest() -> Vec<SuiteResult> {
    vec![kernel_suite(), targets_suite(), dynamics_suite(), operators_suite(), euler_suite(), diagnostics_suite()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for suite in run_selftest() {
            assert!(suite.ok(), "{}: {:?}", suite.name, suite.failures);
            assert!(suite.total > 0);
        }
    }
}
