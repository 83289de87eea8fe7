//! Velocity field, frozen-measure gradient-descent steps, and the coupled
//! finite-width / reference runner.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::activation::Activation;
use crate::data::DataSample;
use crate::diagnostics::LossCurve;
use crate::domain::DomainSpec;
use crate::ensemble::{sample_init, Ensemble, InitKind};
use crate::error::{invalid, Error, Result};
use crate::hot;
use crate::kernel::{excess_loss_from_outputs, network_outputs};
use crate::par;
use crate::rng::{streams, RngSpec};

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// `a_i (y_i - f(x_i))`, the per-point weights of the velocity sum.
pub fn residual_weights(data: &DataSample, outputs: &[f64]) -> Vec<f64> {
    data.weights()
        .iter()
        .zip(data.labels())
        .zip(outputs)
        .map(|((a, y), f)| a * (y - f))
        .collect()
}

/// `ν(w, ρ) = P_w (∇F(w) - E_ρ ∇_w K(w, ·))`, evaluated in the residual form
/// `P_w sum_i a_i (y_i - f_ρ(x_i)) σ'(w·x_i) x_i`.
///
/// This is the per-particle gradient of half the excess loss with the `1/m`
/// output averaging absorbed: `ν(w_j) = -(m/2) ∂L/∂w_j`.
pub fn velocity(
    w: &[f64],
    measure: &Ensemble,
    data: &DataSample,
    act: Activation,
    domain: DomainSpec,
) -> Result<Vec<f64>> {
    let d = domain.dim();
    if w.len() != d || measure.d() != d || data.d() != d {
        return Err(Error::DimensionMismatch { expected: d, got: w.len() });
    }
    let outputs = network_outputs(data, act, measure);
    let coef = residual_weights(data, &outputs);
    let mut v = vec![0.0; d];
    hot::feature_sum(w, data.inputs(), &coef, act, &mut v);
    domain.tangent_project_in_place(w, &mut v);
    Ok(v)
}

/// Particles evolving by projected gradient descent on one data sample.
/// `outputs` always holds `f` of the current state on `data`.
#[derive(Debug, Clone)]
pub struct ParticleSystem<'a> {
    ensemble: Ensemble,
    data: &'a DataSample,
    act: Activation,
    eta: f64,
    outputs: Vec<f64>,
    steps: usize,
}

impl<'a> ParticleSystem<'a> {
    pub fn new(ensemble: Ensemble, data: &'a DataSample, act: Activation, eta: f64) -> Result<Self> {
        if ensemble.d() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: ensemble.d() });
        }
        let outputs = network_outputs(data, act, &ensemble);
        Ok(Self { ensemble, data, act, eta, outputs, steps: 0 })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.eta
    }

    pub fn loss(&self, fstar: &[f64]) -> f64 {
        excess_loss_from_outputs(self.data, &self.outputs, fstar)
    }

    /// One step `w_i <- Proj(w_i + η ν(w_i, ρ_frozen))`; every particle sees
    /// the measure at the start of the step.
    pub fn step(&mut self) -> Result<()> {
        let coef = residual_weights(self.data, &self.outputs);
        let domain = self.ensemble.domain();
        let d = domain.dim();
        let (eta, act, inputs) = (self.eta, self.act, self.data.inputs());
        let degenerate = AtomicUsize::new(usize::MAX);
        par::for_each_row_mut(self.ensemble.weights_mut(), d, |j, w| {
            let mut v = [0.0; 16];
            let mut heap;
            let v: &mut [f64] = if d <= 16 {
                &mut v[..d]
            } else {
                heap = vec![0.0; d];
                &mut heap
            };
            hot::feature_sum(w, inputs, &coef, act, v);
            domain.tangent_project_in_place(w, v);
            w.iter_mut().zip(v.iter()).for_each(|(wi, vi)| *wi += eta * vi);
            if domain.project_in_place(w).is_err() {
                degenerate.fetch_min(j, Ordering::Relaxed);
            }
        });
        self.steps += 1;
        if degenerate.load(Ordering::Relaxed) != usize::MAX {
            return Err(Error::DegenerateProjection);
        }
        if let Some(i) = first_divergent_row(&self.ensemble) {
            return Err(Error::DivergedRun { t: self.time(), particle: i });
        }
        self.outputs = network_outputs(self.data, self.act, &self.ensemble);
        Ok(())
    }
}

fn first_divergent_row(e: &Ensemble) -> Option<usize> {
    e.rows()
        .position(|r| r.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_BOUND))
}

/// A single frozen-measure gradient-descent step.
pub fn gd_step(e: &Ensemble, data: &DataSample, act: Activation, eta: f64) -> Result<Ensemble> {
    let mut sys = ParticleSystem::new(e.clone(), data, act, eta)?;
    sys.step()?;
    Ok(sys.ensemble)
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Step size of the finite system.
    pub eta: f64,
    /// Step size of the reference system; `eta / eta_ref` must be an integer.
    pub eta_ref: f64,
    pub horizon: f64,
    pub m: usize,
    pub m_ref: usize,
    pub snapshot_times: Vec<f64>,
    pub domain: DomainSpec,
    pub activation: Activation,
    pub init: InitKind,
    pub seed: u64,
    /// Lipschitz proxy bounding the admissible step, `eta <= 0.1 / c_step`.
    pub c_step: f64,
    /// Data defining the reference (population proxy) flow.
    pub data: DataSample,
    /// `f*` at the inputs of `data`; defaults to the labels.
    pub fstar: Option<Vec<f64>>,
    /// Independent training sample for the finite system; shares `data` when `None`.
    pub finite_data: Option<DataSample>,
    pub finite_fstar: Option<Vec<f64>>,
}

impl FlowConfig {
    pub fn new(data: DataSample, domain: DomainSpec, activation: Activation, init: InitKind) -> Self {
        Self {
            eta: 0.1,
            eta_ref: 0.1,
            horizon: 1.0,
            m: 1,
            m_ref: 1,
            snapshot_times: vec![0.0],
            domain,
            activation,
            init,
            seed: 0,
            c_step: 1.0,
            data,
            fstar: None,
            finite_data: None,
            finite_fstar: None,
        }
    }

    pub fn fstar(&self) -> &[f64] {
        self.fstar.as_deref().unwrap_or(self.data.labels())
    }

    pub fn finite_data(&self) -> &DataSample {
        self.finite_data.as_ref().unwrap_or(&self.data)
    }

    pub fn finite_fstar(&self) -> &[f64] {
        match (&self.finite_fstar, &self.finite_data) {
            (Some(f), _) => f,
            (None, Some(d)) => d.labels(),
            (None, None) => self.fstar(),
        }
    }

    /// Reference sub-steps per finite step.
    pub fn ratio(&self) -> usize {
        (self.eta / self.eta_ref).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        (self.horizon / self.eta + 1e-9).floor() as usize
    }

    /// Snapshot times rounded down onto the finite step grid, deduplicated.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .snapshot_times
            .iter()
            .map(|t| (t / self.eta + 1e-9).floor() as usize)
            .collect();
        steps.dedup();
        steps
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if !(self.eta_ref > 0.0 && self.eta_ref <= self.eta) {
            return Err(invalid("need 0 < eta_ref <= eta"));
        }
        if !(self.c_step > 0.0) || self.eta > 0.1 / self.c_step * (1.0 + 1e-12) {
            return Err(invalid(format!("eta = {} exceeds 0.1 / c_step = {}", self.eta, 0.1 / self.c_step)));
        }
        let ratio = self.eta / self.eta_ref;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(invalid("eta must be an integer multiple of eta_ref"));
        }
        if !(self.horizon >= 0.0) {
            return Err(invalid("horizon must be nonnegative"));
        }
        if self.m == 0 || self.m > self.m_ref {
            return Err(invalid(format!("need 1 <= m <= m_ref, got m = {}, m_ref = {}", self.m, self.m_ref)));
        }
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("snapshot times must be sorted"));
        }
        if self.snapshot_times.iter().any(|&t| !(0.0..=self.horizon + 1e-9).contains(&t)) {
            return Err(invalid("snapshot times must lie in [0, horizon]"));
        }
        if self.data.d() != self.domain.dim() || self.finite_data().d() != self.domain.dim() {
            return Err(Error::DimensionMismatch { expected: self.domain.dim(), got: self.data.d() });
        }
        if self.fstar().len() != self.data.n() || self.finite_fstar().len() != self.finite_data().n() {
            return Err(invalid("f* values must match the data size"));
        }
        Ok(())
    }

    pub fn initial_reference(&self) -> Result<Ensemble> {
        sample_init(self.domain, self.m_ref, self.init, RngSpec::new(self.seed, streams::INIT))
    }
}

/// Both systems at one snapshot time.
#[derive(Debug, Clone)]
pub struct CoupledSnapshot {
    pub t: f64,
    /// `ξ_t(w_i)`: the first `m` reference particles.
    pub xi_ref: Ensemble,
    /// `ξ̂_t(w_i)`: the finite system.
    pub xi_hat: Ensemble,
    /// `Δ_t(i) = ξ̂_t(w_i) - ξ_t(w_i)`, row-major `m × d`.
    pub delta: Vec<f64>,
    /// Excess loss of the full reference ensemble.
    pub loss_ref: f64,
    /// Excess loss of the finite system, measured on the reference data.
    pub loss_hat: f64,
    /// Largest reference particle norm (proxy for the subgaussian norm κ_t).
    pub max_particle_norm: f64,
}

impl CoupledSnapshot {
    pub fn m(&self) -> usize {
        self.xi_hat.m()
    }

    pub fn d(&self) -> usize {
        self.xi_hat.d()
    }

    pub fn delta_row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.delta[i * d..(i + 1) * d]
    }
}

/// Extra state handed to snapshot observers.
pub struct SnapshotContext<'a> {
    pub reference: &'a Ensemble,
    /// `f_ref(x_i)` on the reference data.
    pub ref_outputs: &'a [f64],
    /// `f_hat(x_i)` on the reference data.
    pub hat_outputs: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub snapshots: Vec<CoupledSnapshot>,
    /// Reference excess loss after every reference step.
    pub ref_curve: LossCurve,
    /// Finite-system training loss after every finite step.
    pub hat_curve: LossCurve,
}

fn make_snapshot(
    cfg: &FlowConfig,
    t: f64,
    reference: &Ensemble,
    ref_outputs: &[f64],
    finite: &ParticleSystem<'_>,
) -> Result<(CoupledSnapshot, Vec<f64>)> {
    let xi_ref = reference.head(cfg.m)?;
    let xi_hat = finite.ensemble().clone();
    let delta: Vec<f64> = xi_hat.weights().iter().zip(xi_ref.weights()).map(|(a, b)| a - b).collect();
    let hat_outputs = if cfg.finite_data.is_some() {
        network_outputs(&cfg.data, cfg.activation, &xi_hat)
    } else {
        finite.outputs().to_vec()
    };
    let snap = CoupledSnapshot {
        t,
        loss_ref: excess_loss_from_outputs(&cfg.data, ref_outputs, cfg.fstar()),
        loss_hat: excess_loss_from_outputs(&cfg.data, &hat_outputs, cfg.fstar()),
        max_particle_norm: reference.max_norm(),
        xi_ref,
        xi_hat,
        delta,
    };
    Ok((snap, hat_outputs))
}

/// Runs the reference and finite systems side by side, calling `observer` at
/// every snapshot with access to the full reference ensemble. Snapshots are
/// not retained; returns the reference and finite loss curves.
pub fn run_coupled_streaming<F>(cfg: &FlowConfig, mut observer: F) -> Result<(LossCurve, LossCurve)>
where
    F: FnMut(CoupledSnapshot, &SnapshotContext<'_>) -> Result<()>,
{
    cfg.validate()?;
    let reference0 = cfg.initial_reference()?;
    let finite0 = reference0.head(cfg.m)?;
    let mut reference = ParticleSystem::new(reference0, &cfg.data, cfg.activation, cfg.eta_ref)?;
    let mut finite = ParticleSystem::new(finite0, cfg.finite_data(), cfg.activation, cfg.eta)?;

    let ratio = cfg.ratio();
    let total = cfg.total_steps();
    let snap_steps = cfg.snapshot_steps();
    let mut next_snap = 0;

    let mut ref_curve = LossCurve::default();
    let mut hat_curve = LossCurve::default();
    ref_curve.push(0.0, reference.loss(cfg.fstar()));
    hat_curve.push(0.0, finite.loss(cfg.finite_fstar()));

    for k in 0..=total {
        while next_snap < snap_steps.len() && snap_steps[next_snap] == k {
            let t = k as f64 * cfg.eta;
            let (snap, hat_outputs) = make_snapshot(cfg, t, reference.ensemble(), reference.outputs(), &finite)?;
            let ctx = SnapshotContext {
                reference: reference.ensemble(),
                ref_outputs: reference.outputs(),
                hat_outputs: &hat_outputs,
            };
            observer(snap, &ctx)?;
            next_snap += 1;
        }
        if k == total {
            break;
        }
        finite.step()?;
        hat_curve.push(finite.time(), finite.loss(cfg.finite_fstar()));
        for _ in 0..ratio {
            reference.step()?;
            ref_curve.push(reference.time(), reference.loss(cfg.fstar()));
        }
    }
    Ok((ref_curve, hat_curve))
}

/// Like [`run_coupled_streaming`], keeping every snapshot.
pub fn run_coupled_with<F>(cfg: &FlowConfig, mut observer: F) -> Result<CoupledTrajectory>
where
    F: FnMut(&CoupledSnapshot, &SnapshotContext<'_>) -> Result<()>,
{
    let mut snapshots = Vec::new();
    let (ref_curve, hat_curve) = run_coupled_streaming(cfg, |snap, ctx| {
        observer(&snap, ctx)?;
        snapshots.push(snap);
        Ok(())
    })?;
    Ok(CoupledTrajectory { snapshots, ref_curve, hat_curve })
}

pub fn run_coupled(cfg: &FlowConfig) -> Result<CoupledTrajectory> {
    run_coupled_with(cfg, |_, _| Ok(()))
}

/// Evolves only the `m_ref`-particle reference system and records its excess
/// loss at the snapshot times (every reference step when none are given).
pub fn run_reference_only(cfg: &FlowConfig) -> Result<LossCurve> {
    run_reference_final(cfg).map(|(curve, _)| curve)
}

/// [`run_reference_only`], also returning the final ensemble.
pub fn run_reference_final(cfg: &FlowConfig) -> Result<(LossCurve, Ensemble)> {
    let mut probe = cfg.clone();
    probe.m = probe.m.min(probe.m_ref);
    probe.validate()?;
    let mut sys = ParticleSystem::new(cfg.initial_reference()?, &cfg.data, cfg.activation, cfg.eta_ref)?;
    let total = (cfg.horizon / cfg.eta_ref + 1e-9).floor() as usize;
    let wanted: Option<Vec<usize>> = if cfg.snapshot_times.is_empty() {
        None
    } else {
        Some(cfg.snapshot_times.iter().map(|t| (t / cfg.eta_ref + 1e-9).floor() as usize).collect())
    };
    let mut curve = LossCurve::default();
    let mut next = 0;
    for k in 0..=total {
        let record = match &wanted {
            None => true,
            Some(w) => {
                let mut hit = false;
                while next < w.len() && w[next] == k {
                    hit = true;
                    next += 1;
                }
                hit
            }
        };
        if record {
            curve.push(k as f64 * cfg.eta_ref, sys.loss(cfg.fstar()));
        }
        if k < total {
            sys.step()?;
        }
    }
    Ok((curve, sys.ensemble))
}

const WEIGHTS_MAGIC: &[u8; 4] = b"POCW";
const WEIGHTS_VERSION: u32 = 1;

/// Raw weights dump: magic `POCW`, version u32, m u32, d u32, t f64, then
/// `m * d` row-major f64, all little-endian.
pub fn write_weights<W: Write>(mut out: W, e: &Ensemble, t: f64) -> Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(e.m() as u32).to_le_bytes())?;
    out.write_all(&(e.d() as u32).to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for x in e.weights() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump back as `(t, m, d, weights)`.
pub fn read_weights<R: Read>(mut input: R) -> Result<(f64, usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("not a POCW weights dump".into()));
    }
    let mut u = [0u8; 4];
    input.read_exact(&mut u)?;
    let version = u32::from_le_bytes(u);
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights dump version {version}")));
    }
    input.read_exact(&mut u)?;
    let m = u32::from_le_bytes(u) as usize;
    input.read_exact(&mut u)?;
    let d = u32::from_le_bytes(u) as usize;
    let mut f = [0u8; 8];
    input.read_exact(&mut f)?;
    let t = f64::from_le_bytes(f);
    let mut weights = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        input.read_exact(&mut f)?;
        weights.push(f64::from_le_bytes(f));
    }
    Ok((t, m, d, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::excess_loss;
    use crate::linalg::{dot, norm};

    fn circle_data(n: usize, labels: impl Fn(f64) -> f64) -> DataSample {
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            x.extend([th.cos(), th.sin()]);
            y.push(labels(th));
        }
        DataSample::uniform(x, y, 2).unwrap()
    }

    #[test]
    fn zero_residual_is_stationary() {
        let base = circle_data(16, |_| 0.0);
        let dom = DomainSpec::euclidean(2).unwrap();
        let e = sample_init(dom, 5, InitKind::gaussian(1.0), RngSpec::new(1, 0)).unwrap();
        let act = Activation::smoothed(0.2);
        let data = base.with_labels(network_outputs(&base, act, &e)).unwrap();
        let v = velocity(e.row(2), &e, &data, act, dom).unwrap();
        assert!(norm(&v) < 1e-15);
        let next = gd_step(&e, &data, act, 0.1).unwrap();
        for (a, b) in next.weights().iter().zip(e.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(gd_step(&e, &base, act, 0.0).unwrap(), e);
    }

    #[test]
    fn single_point_hand_case() {
        let data = DataSample::uniform(vec![0.6, 0.8], vec![2.0], 2).unwrap();
        let dom = DomainSpec::euclidean(2).unwrap();
        let measure = Ensemble::new(vec![1.0, 0.5], dom).unwrap();
        let w = [0.3, 0.2];
        let v = velocity(&w, &measure, &data, Activation::Relu, dom).unwrap();
        let r = 2.0 - (0.6 + 0.4);
        assert!((v[0] - r * 0.6).abs() < 1e-15 && (v[1] - r * 0.8).abs() < 1e-15);
    }

    #[test]
    fn velocity_is_scaled_negative_loss_gradient() {
        let data = circle_data(24, |th| (2.0 * th).cos().abs());
        let dom = DomainSpec::euclidean(2).unwrap();
        let act = Activation::smoothed(0.3);
        let e = sample_init(dom, 6, InitKind::gaussian(1.0), RngSpec::new(2, 0)).unwrap();
        let fstar = data.labels().to_vec();
        let m = e.m() as f64;
        for j in 0..e.m() {
            let v = velocity(e.row(j), &e, &data, act, dom).unwrap();
            for p in 0..2 {
                let h = 1e-5;
                let shift = |s: f64| {
                    let mut w = e.weights().to_vec();
                    w[j * 2 + p] += s;
                    excess_loss(&data, act, &Ensemble::new(w, dom).unwrap(), &fstar).unwrap()
                };
                let grad = (shift(h) - shift(-h)) / (2.0 * h);
                let expect = -m / 2.0 * grad;
                assert!((v[p] - expect).abs() <= 1e-5 * expect.abs().max(1e-3), "{} vs {}", v[p], expect);
            }
        }
    }

    #[test]
    fn sphere_velocity_is_tangent() {
        let data = circle_data(32, |th| th.sin().max(0.0));
        let dom = DomainSpec::sphere(2).unwrap();
        let e = sample_init(dom, 8, InitKind::UniformSphere, RngSpec::new(3, 0)).unwrap();
        for j in 0..8 {
            let v = velocity(e.row(j), &e, &data, Activation::Relu, dom).unwrap();
            assert!(dot(&v, e.row(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_step_is_first_order() {
        // one step of size η vs two of size η/2: gap scales as η²
        let data = circle_data(64, |th| 0.5 + 0.5 * th.cos());
        let dom = DomainSpec::euclidean(2).unwrap();
        let act = Activation::smoothed(0.2);
        let e = sample_init(dom, 32, InitKind::gaussian(1.0), RngSpec::new(4, 0)).unwrap();
        let gaps: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&eta| {
                let one = gd_step(&e, &data, act, eta).unwrap();
                let half = gd_step(&gd_step(&e, &data, act, eta / 2.0).unwrap(), &data, act, eta / 2.0).unwrap();
                let diff: Vec<f64> = one.weights().iter().zip(half.weights()).map(|(a, b)| a - b).collect();
                norm(&diff)
            })
            .collect();
        let slope = ((gaps[2] / gaps[0]).ln()) / ((0.025f64 / 0.1).ln());
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}, gaps {gaps:?}");
    }

    fn small_config(m: usize, m_ref: usize) -> FlowConfig {
        let data = circle_data(48, |th| 0.5 + 0.5 * th.cos() + 0.1 * (2.0 * th).cos());
        let mut cfg = FlowConfig::new(data, DomainSpec::euclidean(2).unwrap(), Activation::smoothed(0.1), InitKind::gaussian(1.0));
        cfg.m = m;
        cfg.m_ref = m_ref;
        cfg.horizon = 3.0;
        cfg.snapshot_times = vec![0.0, 1.0, 2.05, 3.0];
        cfg.seed = 17;
        cfg
    }

    #[test]
    fn coupled_run_invariants() {
        let cfg = small_config(16, 64);
        let traj = run_coupled(&cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 4);
        let s0 = &traj.snapshots[0];
        assert!(s0.delta.iter().all(|&x| x == 0.0));
        assert_eq!(s0.xi_hat, s0.xi_ref);
        assert!((traj.snapshots[2].t - 2.0).abs() < 1e-12);
        for s in &traj.snapshots {
            for ((d, a), b) in s.delta.iter().zip(s.xi_hat.weights()).zip(s.xi_ref.weights()) {
                assert_eq!(*d, a - b);
            }
        }
        assert!(traj.snapshots[3].delta.iter().any(|&x| x != 0.0));
        let l0 = traj.ref_curve.values[0];
        for c in [&traj.ref_curve, &traj.hat_curve] {
            assert!(c.values.windows(2).all(|w| w[1] <= w[0] + 1e-9 * l0));
        }
    }

    #[test]
    fn degenerate_width_keeps_delta_zero() {
        let cfg = small_config(32, 32);
        let traj = run_coupled(&cfg).unwrap();
        for s in &traj.snapshots {
            assert!(s.delta.iter().all(|&x| x == 0.0));
            assert_eq!(s.loss_ref, s.loss_hat);
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let cfg = small_config(8, 40);
        let a = par::with_workers(1, || run_coupled(&cfg).unwrap());
        let b = par::with_workers(3, || run_coupled(&cfg).unwrap());
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.xi_hat.weights(), y.xi_hat.weights());
            assert_eq!(x.xi_ref.weights(), y.xi_ref.weights());
            assert_eq!(x.loss_ref.to_bits(), y.loss_ref.to_bits());
        }
    }

    #[test]
    fn substeps_and_sphere_preservation() {
        let mut cfg = small_config(8, 32);
        cfg.domain = DomainSpec::sphere(2).unwrap();
        cfg.init = InitKind::UniformSphere;
        cfg.eta_ref = 0.05;
        let traj = run_coupled(&cfg).unwrap();
        assert_eq!(traj.ref_curve.times.len(), 2 * traj.hat_curve.times.len() - 1);
        for s in &traj.snapshots {
            for e in [&s.xi_hat, &s.xi_ref] {
                assert!(e.rows().all(|r| (norm(r) - 1.0).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(8, 4);
        assert!(cfg.validate().is_err());
        cfg.m_ref = 8;
        cfg.eta = 0.2;
        assert!(cfg.validate().is_err());
        cfg.eta = 0.1;
        cfg.eta_ref = 0.03;
        assert!(cfg.validate().is_err());
        cfg.eta_ref = 0.1;
        cfg.snapshot_times = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.snapshot_times = vec![0.0, 9.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = DataSample::uniform(vec![1.0, 0.0], vec![1e9], 2).unwrap();
        let dom = DomainSpec::euclidean(2).unwrap();
        let e = Ensemble::new(vec![1.0, 0.0, 0.5, 0.5], dom).unwrap();
        let err = gd_step(&e, &data, Activation::Relu, 0.1).unwrap_err();
        assert_eq!(err, Error::DivergedRun { t: 0.1, particle: 0 });
    }

    #[test]
    fn reference_only_matches_initial_loss() {
        let mut cfg = small_config(8, 64);
        cfg.snapshot_times = vec![];
        let curve = run_reference_only(&cfg).unwrap();
        let l0 = excess_loss(&cfg.data, cfg.activation, &cfg.initial_reference().unwrap(), cfg.fstar()).unwrap();
        assert_eq!(curve.values[0], l0);
        assert_eq!(curve.times.len(), 31);
        assert!(curve.values.windows(2).all(|w| w[1] <= w[0] + 1e-9 * l0));
    }

    #[test]
    fn weights_dump_layout() {
        let dom = DomainSpec::euclidean(3).unwrap();
        let e = sample_init(dom, 5, InitKind::gaussian(1.0), RngSpec::new(1, 0)).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &e, 2.5).unwrap();
        assert_eq!(&buf[..4], b"POCW");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 24 + 5 * 3 * 8);
        let (t, m, d, w) = read_weights(&buf[..]).unwrap();
        assert_eq!((t, m, d), (2.5, 5, 3));
        assert_eq!(w, e.weights());
        assert!(read_weights(&b"NOPE"[..]).is_err());
    }
}
