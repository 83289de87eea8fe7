//! Single runs: particle (coupled or reference-only), Eulerian, toy ODE.
//! Computation and persistence are separate so sweeps and tests can reuse
//! the in-memory outcomes.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ParticleSpec, ToyOdeSpec, TOOL_VERSION};
use crate::diagnostics::{
    cumulative_sqrt_loss, decay_exponent_fit, delta_norms, poc_error_from_outputs, sqrt_loss_integral, write_curves_csv,
    CurveRow, DeltaNorms, LossCurve, PocError,
};
use crate::dynamics::{run_coupled_streaming, run_reference_final, write_weights, CoupledSnapshot, FlowConfig};
use crate::ensemble::Ensemble;
use crate::error::{invalid, Error, Result};
use crate::euler::{build_grid, run_euler, write_field, EulerConfig, EulerRun};
use crate::kernel::network_outputs;
use crate::operators::{linearized_residual, toy_ode, LinearizationContext, OperatorDiagnostics, ResidualReport, ToyOdePoint};
use crate::plot;
use crate::rng::{streams, RngSpec};
use crate::targets::{benchmark_data, sobolev_coeffs};

/// Hash and version stamped into every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), tool_version: TOOL_VERSION.to_string() }
    }

    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.hash())
    }

    fn pairs(&self, seed: Option<u64>) -> Vec<(String, String)> {
        let mut v = vec![
            ("config_hash".to_string(), self.config_hash.clone()),
            ("tool_version".to_string(), self.tool_version.clone()),
        ];
        if let Some(s) = seed {
            v.push(("seed".to_string(), s.to_string()));
        }
        v
    }
}

fn borrow_pairs(p: &[(String, String)]) -> Vec<(&str, &str)> {
    p.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

/// `(R_T, R_{T/2}, (R_T − R_{T/2}) / R_T)`.
pub fn plateau(curve: &LossCurve) -> (f64, f64, f64) {
    let t = curve.t_max();
    let r = sqrt_loss_integral(curve, t);
    let half = sqrt_loss_integral(curve, t / 2.0);
    let frac = if r > 0.0 { (r - half) / r } else { 0.0 };
    (r, half, frac)
}

/// Builds the flow for one seed: Sobolev target, data, and step schedule.
pub fn particle_flow(spec: &ParticleSpec, seed: u64) -> Result<FlowConfig> {
    spec.validate()?;
    let target = sobolev_coeffs(spec.gamma, spec.k_max)?.with_dim(spec.d);
    let clean = benchmark_data(&target, spec.d, spec.n, RngSpec::new(seed, streams::DATA))?;
    let fstar = clean.labels().to_vec();
    let data = if spec.label_noise > 0.0 {
        clean.with_label_noise(spec.label_noise, RngSpec::new(seed, streams::NOISE))?
    } else {
        clean
    };
    let mut flow = FlowConfig::new(data, spec.domain_spec()?, spec.activation, spec.init);
    flow.fstar = Some(fstar);
    if spec.independent_data {
        if spec.d == 2 {
            return Err(invalid("independent_data needs random inputs (d >= 3)"));
        }
        let data_seed = RngSpec::new(seed, streams::DATA).derive_seed(1);
        let fin = benchmark_data(&target, spec.d, spec.n, RngSpec::new(data_seed, streams::DATA))?;
        flow.finite_fstar = Some(fin.labels().to_vec());
        flow.finite_data = Some(if spec.label_noise > 0.0 {
            fin.with_label_noise(spec.label_noise, RngSpec::new(data_seed, streams::NOISE))?
        } else {
            fin
        });
    }
    flow.eta = spec.eta;
    flow.eta_ref = spec.eta_ref();
    flow.horizon = spec.horizon;
    flow.m = if spec.coupled { spec.m } else { spec.m_ref() };
    flow.m_ref = spec.m_ref();
    flow.snapshot_times = spec.snapshot_times();
    flow.seed = seed;
    flow.c_step = spec.c_step;
    flow.validate()?;
    Ok(flow)
}

/// One JSONL line per snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub loss_ref: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_particle_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<DeltaNorms>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub poc: Option<PocError>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h_quad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operators: Option<OperatorDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<ResidualReport>,
}

impl SnapshotRecord {
    fn loss_only(t: f64, loss: f64) -> Self {
        Self {
            t,
            loss_ref: loss,
            loss_hat: None,
            max_particle_norm: None,
            delta: None,
            poc: None,
            h_quad: None,
            operators: None,
            residual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub gamma: f64,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub m_ref: usize,
    pub eta: f64,
    pub eta_ref: f64,
    pub horizon: f64,
    pub coupled: bool,
    pub activation: String,
    pub loss_0: f64,
    pub loss_final: f64,
    pub max_relative_increase: f64,
    pub r_final: f64,
    pub r_half: f64,
    pub plateau_fraction: f64,
    #[serde(default)]
    pub decay_slope: Option<f64>,
    #[serde(default)]
    pub decay_r2: Option<f64>,
    #[serde(default)]
    pub decay_burn_in: Option<f64>,
    #[serde(default)]
    pub super_polynomial: Option<bool>,
    /// `‖m_ρ̂ − m_ρref‖²` at `t = 0` and its max over snapshots.
    #[serde(default)]
    pub poc_total_0: Option<f64>,
    #[serde(default)]
    pub poc_max: Option<f64>,
    #[serde(default)]
    pub coupling_max: Option<f64>,
    #[serde(default)]
    pub beta_inf_0: Option<f64>,
    /// `max_i ‖D_t(i)‖ / √L_t`: max on `t ≤ T/4` and over the whole run.
    #[serde(default)]
    pub d_ratio_early: Option<f64>,
    #[serde(default)]
    pub d_ratio_max: Option<f64>,
    #[serde(default)]
    pub residuals: Vec<ResidualReport>,
    #[serde(default)]
    pub weight_dumps: Vec<String>,
}

pub struct ParticleOutcome {
    pub summary: ParticleSummary,
    pub records: Vec<SnapshotRecord>,
    pub rows: Vec<CurveRow>,
    /// Reference excess loss at every reference step.
    pub ref_curve: LossCurve,
    /// `(file name, t, ensemble)` to dump.
    pub dumps: Vec<(String, f64, Ensemble)>,
}

fn near(a: f64, b: f64, h: f64) -> bool {
    (a - b).abs() < 0.25 * h
}

/// Runs one particle experiment in memory.
pub fn run_particle(spec: &ParticleSpec, seed: u64, prov: &Provenance) -> Result<ParticleOutcome> {
    let flow = particle_flow(spec, seed)?;
    if spec.operators && !spec.activation.has_second_derivative() {
        return Err(invalid("operator diagnostics need a twice-differentiable activation (smoothed_relu)"));
    }
    let (mut records, ref_curve, dumps) = if spec.coupled { coupled(spec, &flow)? } else { reference_only(spec, &flow)? };

    let cum = cumulative_sqrt_loss(&ref_curve);
    let rows: Vec<CurveRow> = records
        .iter()
        .map(|r| {
            let mut row = CurveRow::loss_only(r.t, r.loss_ref, interp(&ref_curve.times, &cum, r.t));
            if let Some(dn) = r.delta {
                row.delta_l2 = dn.l2;
                row.delta_linf = dn.linf;
                row.delta_l4 = dn.l4;
            }
            if let Some(h) = r.h_quad {
                row.h_quad = h;
            }
            if let Some(p) = r.poc {
                row.poc_total = p.total;
                row.poc_coupling = p.coupling;
                row.poc_mc = p.monte_carlo;
            }
            row
        })
        .collect();

    for r in records.iter_mut() {
        if let (Some(op), Some(res)) = (r.operators.as_mut(), r.residual) {
            op.residual_norm = res.residual;
        }
    }
    let (r_final, r_half, frac) = plateau(&ref_curve);
    let fit = decay_exponent_fit(&ref_curve.thinned(stride_for(ref_curve.len())), 0.25).ok();
    let ops: Vec<&OperatorDiagnostics> = records.iter().filter_map(|r| r.operators.as_ref()).collect();
    let ratio = |o: &&OperatorDiagnostics| {
        if o.sqrt_loss > 0.0 {
            o.max_d_norm() / o.sqrt_loss
        } else {
            f64::INFINITY
        }
    };
    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    let residuals: Vec<ResidualReport> = records.iter().filter_map(|r| r.residual).collect();
    let summary = ParticleSummary {
        kind: "particle".into(),
        config_hash: prov.config_hash.clone(),
        tool_version: prov.tool_version.clone(),
        seed,
        gamma: spec.gamma,
        d: spec.d,
        n: spec.n,
        m: flow.m,
        m_ref: flow.m_ref,
        eta: flow.eta,
        eta_ref: flow.eta_ref,
        horizon: flow.horizon,
        coupled: spec.coupled,
        activation: spec.activation.name().into(),
        loss_0: ref_curve.values[0],
        loss_final: ref_curve.last().unwrap_or(f64::NAN),
        max_relative_increase: if ref_curve.len() > 1 { ref_curve.max_relative_increase() } else { 0.0 },
        r_final,
        r_half,
        plateau_fraction: frac,
        decay_slope: fit.as_ref().map(|f| f.slope),
        decay_r2: fit.as_ref().map(|f| f.r2),
        decay_burn_in: fit.as_ref().map(|f| f.burn_in),
        super_polynomial: fit.as_ref().map(|f| f.super_polynomial),
        poc_total_0: records.first().and_then(|r| r.poc).map(|p| p.total),
        poc_max: fmax(&mut records.iter().filter_map(|r| r.poc).map(|p| p.total)),
        coupling_max: fmax(&mut records.iter().filter_map(|r| r.poc).map(|p| p.coupling)),
        beta_inf_0: ops.first().map(|o| o.beta_inf),
        d_ratio_early: fmax(&mut ops.iter().filter(|o| o.t <= flow.horizon / 4.0 + 1e-9).map(ratio)),
        d_ratio_max: fmax(&mut ops.iter().map(ratio)),
        residuals,
        weight_dumps: dumps.iter().map(|d| d.0.clone()).collect(),
    };
    Ok(ParticleOutcome { summary, records, rows, ref_curve, dumps })
}

fn stride_for(len: usize) -> usize {
    (len / 2000).max(1)
}

fn interp(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|x| *x < t - 1e-12);
    if k < ts.len() && (ts[k] - t).abs() <= 1e-9 * t.abs().max(1.0) {
        return vs[k];
    }
    if k == 0 {
        return vs[0];
    }
    if k >= ts.len() {
        return vs[vs.len() - 1];
    }
    let f = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
    vs[k - 1] + f * (vs[k] - vs[k - 1])
}

type Dumps = Vec<(String, f64, Ensemble)>;

fn coupled(spec: &ParticleSpec, flow: &FlowConfig) -> Result<(Vec<SnapshotRecord>, LossCurve, Dumps)> {
    let mut records = Vec::new();
    let mut window: VecDeque<(CoupledSnapshot, Vec<f64>)> = VecDeque::new();
    let mut dumps: Dumps = Vec::new();
    let mut last: Option<CoupledSnapshot> = None;
    let want_residual = !spec.residual_times.is_empty();
    let h = flow.eta;
    let (ref_curve, _) = run_coupled_streaming(flow, |snap, ctx| {
        let f_bar = network_outputs(&flow.data, flow.activation, &snap.xi_ref);
        let lin = LinearizationContext::from_outputs(&flow.data, flow.activation, &snap.xi_ref, ctx.ref_outputs)?;
        let mut rec = SnapshotRecord {
            t: snap.t,
            loss_ref: snap.loss_ref,
            loss_hat: Some(snap.loss_hat),
            max_particle_norm: Some(snap.max_particle_norm),
            delta: Some(delta_norms(&snap)),
            poc: Some(poc_error_from_outputs(&flow.data, ctx.hat_outputs, &f_bar, ctx.ref_outputs)),
            h_quad: Some(lin.h_quadratic_form(&snap.delta)?),
            operators: None,
            residual: None,
        };
        if spec.operators {
            let mut op = OperatorDiagnostics::compute(&lin, &snap)?;
            op.beta.clear();
            rec.operators = Some(op);
        }
        if want_residual {
            if window.len() == 2 && near(window[1].0.t + h, snap.t, h) {
                let (prev, _) = &window[0];
                let (mid, mid_out) = &window[1];
                if spec.residual_times.iter().any(|&rt| near(rt, mid.t, h)) && near(prev.t + h, mid.t, h) {
                    let mid_ctx = LinearizationContext::from_outputs(&flow.data, flow.activation, &mid.xi_ref, mid_out)?;
                    let res = linearized_residual(prev, mid, &snap, &mid_ctx)?;
                    if let Some(r) = records.iter_mut().rev().find(|r: &&mut SnapshotRecord| near(r.t, mid.t, h)) {
                        r.residual = Some(res);
                    }
                }
            }
            window.push_back((snap.clone(), ctx.ref_outputs.to_vec()));
            if window.len() > 2 {
                window.pop_front();
            }
        }
        if spec.weights_dump && records.is_empty() {
            dumps.push((format!("weights_hat_t{}.pocw", fmt_t(snap.t)), snap.t, snap.xi_hat.clone()));
        }
        records.push(rec);
        if spec.weights_dump {
            last = Some(snap);
        }
        Ok(())
    })?;
    if let Some(s) = last {
        if s.t > 0.0 {
            dumps.push((format!("weights_hat_t{}.pocw", fmt_t(s.t)), s.t, s.xi_hat.clone()));
            dumps.push((format!("weights_ref_head_t{}.pocw", fmt_t(s.t)), s.t, s.xi_ref));
        }
    }
    Ok((records, ref_curve, dumps))
}

fn reference_only(spec: &ParticleSpec, flow: &FlowConfig) -> Result<(Vec<SnapshotRecord>, LossCurve, Dumps)> {
    let mut every = flow.clone();
    every.snapshot_times.clear();
    let (curve, ensemble) = run_reference_final(&every)?;
    let records: Vec<SnapshotRecord> = flow
        .snapshot_times
        .iter()
        .map(|&t| SnapshotRecord::loss_only(t, interp(&curve.times, &curve.values, t)))
        .collect();
    let mut dumps = Vec::new();
    if spec.weights_dump {
        dumps.push((format!("weights_ref_t{}.pocw", fmt_t(curve.t_max())), curve.t_max(), ensemble));
    }
    Ok((records, curve, dumps))
}

fn fmt_t(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, prov: &Provenance, seed: Option<u64>, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("config_hash".into(), prov.config_hash.clone().into());
        map.insert("tool_version".into(), prov.tool_version.clone().into());
        if let Some(s) = seed {
            map.insert("seed".into(), s.into());
        }
    }
    serde_json::to_writer(&mut *out, &v)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Creates `dir`, refusing to mix results from a different configuration
/// unless `force` is set.
pub fn prepare_dir(dir: &Path, prov: &Provenance, force: bool) -> Result<()> {
    let summary = dir.join("summary.json");
    if summary.exists() && !force {
        let text = fs::read_to_string(&summary)?;
        let existing: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
        let hash = existing.get("config_hash").and_then(|v| v.as_str()).unwrap_or("");
        if hash != prov.config_hash {
            return Err(invalid(format!(
                "{} holds results of another configuration; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_particle(dir: &Path, outcome: &ParticleOutcome, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let seed = outcome.summary.seed;
    let pairs = prov.pairs(Some(seed));
    let meta = borrow_pairs(&pairs);
    let mut written = Vec::new();

    let path = dir.join("curves.csv");
    let mut out = create(&path)?;
    write_curves_csv(&mut out, &meta, &outcome.rows)?;
    out.flush()?;
    written.push(path);

    let path = dir.join("run.jsonl");
    let mut out = create(&path)?;
    for r in &outcome.records {
        write_json_line(&mut out, prov, Some(seed), r)?;
    }
    out.flush()?;
    written.push(path);

    for (name, t, e) in &outcome.dumps {
        let path = dir.join(name);
        let mut out = create(&path)?;
        write_weights(&mut out, e, *t)?;
        out.flush()?;
        written.push(path);
    }

    let label = format!("gamma={} m={}", outcome.summary.gamma, outcome.summary.m);
    let curve = outcome.ref_curve.thinned(stride_for(outcome.ref_curve.len()));
    let svg = plot::loss_and_integral(&[(label, curve)], &meta)?;
    let path = dir.join("loss.svg");
    fs::write(&path, svg)?;
    written.push(path);

    let path = dir.join("summary.json");
    write_json(&path, &outcome.summary)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerSummary {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
    pub target: String,
    pub n_lat: usize,
    pub n_lon: usize,
    pub horizon: f64,
    pub steps: usize,
    pub loss_0: f64,
    pub loss_final: f64,
    pub loss_ratio: f64,
    /// Largest `L_{k+1} − L_k` over steps.
    pub max_step_increase: f64,
    pub r_final: f64,
    pub r_half: f64,
    pub plateau_fraction: f64,
    pub max_mass_drift: f64,
    pub min_mass: f64,
}

pub struct EulerOutcome {
    pub summary: EulerSummary,
    pub run: EulerRun,
}

pub fn run_euler_experiment(cfg: &EulerConfig, prov: &Provenance) -> Result<EulerOutcome> {
    let run = run_euler(cfg)?;
    let c = &run.curve;
    let (r_final, r_half, frac) = plateau(c);
    let max_step_increase = c.values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let summary = EulerSummary {
        kind: "euler".into(),
        config_hash: prov.config_hash.clone(),
        tool_version: prov.tool_version.clone(),
        target: cfg.target.name().into(),
        n_lat: cfg.n_lat,
        n_lon: cfg.n_lon,
        horizon: cfg.horizon,
        steps: run.steps,
        loss_0: c.values[0],
        loss_final: c.last().unwrap_or(f64::NAN),
        loss_ratio: c.last().unwrap_or(f64::NAN) / c.values[0],
        max_step_increase: if c.len() > 1 { max_step_increase } else { 0.0 },
        r_final,
        r_half,
        plateau_fraction: frac,
        max_mass_drift: run.max_mass_drift,
        min_mass: run.min_mass,
    };
    Ok(EulerOutcome { summary, run })
}

#[derive(Serialize)]
struct EulerRecord {
    t: f64,
    loss: f64,
    r: f64,
    mass: f64,
    min_mass: f64,
}

pub fn write_euler(dir: &Path, cfg: &EulerConfig, outcome: &EulerOutcome, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let pairs = prov.pairs(None);
    let meta = borrow_pairs(&pairs);
    let run = &outcome.run;
    let mut written = Vec::new();
    let stride = stride_for(run.curve.len());

    let rows: Vec<CurveRow> = (0..run.curve.len())
        .filter(|k| k % stride == 0 || *k + 1 == run.curve.len())
        .map(|k| CurveRow::loss_only(run.curve.times[k], run.curve.values[k], run.r_curve[k]))
        .collect();
    let path = dir.join("curves.csv");
    let mut out = create(&path)?;
    write_curves_csv(&mut out, &meta, &rows)?;
    out.flush()?;
    written.push(path);

    let path = dir.join("run.jsonl");
    let mut out = create(&path)?;
    for s in &run.snapshots {
        let rec = EulerRecord {
            t: s.t,
            loss: interp(&run.curve.times, &run.curve.values, s.t),
            r: interp(&run.curve.times, &run.r_curve, s.t),
            mass: s.field.total(),
            min_mass: s.field.min(),
        };
        write_json_line(&mut out, prov, None, &rec)?;
    }
    out.flush()?;
    written.push(path);

    let mut fields = vec![("density_target.poce".to_string(), 0.0, &run.target)];
    fields.push((format!("density_t{}.poce", fmt_t(run.curve.t_max())), run.curve.t_max(), &run.final_field));
    for s in &run.snapshots {
        fields.push((format!("density_t{}.poce", fmt_t(s.t)), s.t, &s.field));
    }
    fields.dedup_by(|a, b| a.0 == b.0);
    for (name, t, field) in fields {
        let path = dir.join(&name);
        if written.contains(&path) {
            continue;
        }
        let mut out = create(&path)?;
        write_field(&mut out, field, t)?;
        out.flush()?;
        written.push(path);
    }

    let grid = build_grid(cfg.n_lat, cfg.n_lon)?;
    let thin = run.curve.thinned(stride);
    let r_thin: Vec<f64> = (0..run.curve.len())
        .filter(|k| k % stride == 0 || *k + 1 == run.curve.len())
        .map(|k| run.r_curve[k])
        .collect();
    let thin_r = if r_thin.len() == thin.len() { r_thin } else { cumulative_sqrt_loss(&thin) };
    let svg = plot::triptych(&run.final_field, &run.final_field.densities(&grid), &thin, &thin_r, &meta)?;
    let path = dir.join("triptych.svg");
    fs::write(&path, svg)?;
    written.push(path);

    let path = dir.join("summary.json");
    write_json(&path, &outcome.summary)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOdeSummary {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
    pub t_max: f64,
    pub final_norm: f64,
    pub max_norm: f64,
    pub max_h_quad: f64,
}

pub fn run_toy(spec: &ToyOdeSpec, prov: &Provenance) -> Result<(ToyOdeSummary, Vec<ToyOdePoint>)> {
    spec.validate()?;
    let (lambda, e) = spec.system()?;
    let n = spec.n_points;
    let grid: Vec<f64> = (0..n).map(|k| spec.t_max * k as f64 / (n - 1) as f64).collect();
    let pts = toy_ode(&lambda, &e, &grid)?;
    let summary = ToyOdeSummary {
        kind: "toy_ode".into(),
        config_hash: prov.config_hash.clone(),
        tool_version: prov.tool_version.clone(),
        t_max: spec.t_max,
        final_norm: pts.last().map_or(0.0, |p| p.norm),
        max_norm: pts.iter().map(|p| p.norm).fold(0.0, f64::max),
        max_h_quad: pts.iter().map(|p| p.h_quad).fold(0.0, f64::max),
    };
    Ok((summary, pts))
}

pub fn write_toy(dir: &Path, summary: &ToyOdeSummary, pts: &[ToyOdePoint], prov: &Provenance) -> Result<Vec<PathBuf>> {
    let pairs = prov.pairs(None);
    let meta = borrow_pairs(&pairs);
    let path = dir.join("run.jsonl");
    let mut out = create(&path)?;
    for p in pts {
        write_json_line(&mut out, prov, None, p)?;
    }
    out.flush()?;
    let mut written = vec![path];
    let t: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let svg = plot::panels_svg(
        &[
            plot::Panel::new(
                plot::Axes::new("fluctuation norm", "t", "|X_t|", false, false),
                vec![plot::Series::new("|X_t|", t.clone(), pts.iter().map(|p| p.norm).collect())],
            ),
            plot::Panel::new(
                plot::Axes::new("dissipation", "t", "X_t'HX_t", false, false),
                vec![plot::Series::new("X'HX", t, pts.iter().map(|p| p.h_quad).collect())],
            ),
        ],
        &meta,
    )?;
    let path = dir.join("toy_ode.svg");
    fs::write(&path, svg)?;
    written.push(path);
    let path = dir.join("summary.json");
    write_json(&path, summary)?;
    written.push(path);
    Ok(written)
}
