use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use poclab::diagnostics::LossCurve;
use poclab::euler::{build_grid, read_field};
use poclab::harness::analyze::{analyze, discover, fit_cells, Input};
use poclab::harness::config::{ExperimentConfig, ExperimentKind, ToyOdeSpec};
use poclab::harness::run::{
    prepare_dir, run_euler_experiment, run_particle, run_toy, write_euler, write_json, write_particle, write_toy,
};
use poclab::harness::selftest::run_selftest;
use poclab::harness::sweep::run_sweep;
use poclab::harness::Provenance;
use poclab::{par, plot, Error};

#[derive(Parser)]
#[command(name = "poclab", version, about = "Coupled finite-width / mean-field experiments for shallow networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one particle experiment (per seed).
    RunParticle(RunArgs),
    /// Run the Eulerian solver on S².
    RunEuler(RunArgs),
    /// Fan a grid of particle runs out over the workers; resumable.
    Sweep(RunArgs),
    /// Integrate the diagonal toy fluctuation ODE.
    ToyOde(ToyArgs),
    /// Fit decay exponents or width scaling from finished runs.
    Analyze(ReadArgs),
    /// Render SVG figures from finished runs.
    Plot(ReadArgs),
    /// Run the built-in oracle checks.
    Selftest(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Worker threads (0 = all cores).
    #[arg(long, env = "POC_LAB_WORKERS")]
    workers: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use seeds 0..N instead of the configured list.
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Overwrite results of a different configuration.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ToyArgs {
    /// Optional; defaults to the ε = 0.1, M = 10 counterexample.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReadArgs {
    /// Run or sweep directories, or curves.csv files.
    #[arg(required = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Combine inputs produced by different configurations.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Common,
}

/// Exit code 1: bad input; 2: the computation itself failed.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::Format(_)
            | Error::DimensionMismatch { .. }
            | Error::DomainError(_)
            | Error::UnsupportedDerivative { .. }
            | Error::SnapshotSpacing(_) => 1,
            Error::DegenerateProjection
            | Error::DivergedRun { .. }
            | Error::CflError { .. }
            | Error::GridMismatch
            | Error::InsufficientData(_)
            | Error::Io(_) => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Res<()> {
    match cmd {
        Command::RunParticle(a) => with_config(a, ExperimentKind::Particle, particle),
        Command::RunEuler(a) => with_config(a, ExperimentKind::Euler, euler),
        Command::Sweep(a) => with_config(a, ExperimentKind::Sweep, sweep),
        Command::ToyOde(a) => toy(a),
        Command::Analyze(a) => in_pool(&a.common, None, || analyze_cmd(&a)),
        Command::Plot(a) => in_pool(&a.common, None, || plot_cmd(&a)),
        Command::Selftest(c) => in_pool(&c, None, || selftest(&c)),
    }
}

fn in_pool<T: Send>(common: &Common, cfg_workers: Option<usize>, f: impl FnOnce() -> Res<T> + Send) -> Res<T> {
    match common.workers.or(cfg_workers).unwrap_or(0) {
        0 => f(),
        n => par::with_workers(n, f),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    prov: Provenance,
    force: bool,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_config(path: &Path) -> Res<ExperimentConfig> {
    if !path.is_file() {
        return Err(usage(format!("config file {} not found", path.display())));
    }
    // any problem reading or validating the config is the caller's to fix
    ExperimentConfig::load(path).map_err(|e| usage(e.to_string()))
}

fn default_out(cfg: &ExperimentConfig, out: Option<PathBuf>, kind: &str) -> PathBuf {
    out.or_else(|| (!cfg.output_dir.as_os_str().is_empty()).then(|| cfg.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{kind}-{}", &cfg.hash()[..8])))
}

fn with_config(a: RunArgs, kind: ExperimentKind, body: fn(&Ctx) -> Res<()>) -> Res<()> {
    let mut cfg = load_config(&a.config)?;
    if cfg.kind != kind {
        return Err(usage(format!(
            "{} has kind = {:?}; use the matching subcommand",
            a.config.display(),
            cfg.kind
        )));
    }
    if let Some(n) = a.seeds {
        if n == 0 {
            return Err(usage("--seeds must be at least 1"));
        }
        cfg.seeds = (0..n).collect();
    }
    let label = format!("{kind:?}").to_lowercase();
    let out = default_out(&cfg, a.out, &label);
    let prov = Provenance::of(&cfg);
    let workers = cfg.workers;
    let ctx = Ctx { cfg, out, prov, force: a.force, quiet: a.common.quiet };
    in_pool(&a.common, Some(workers), || body(&ctx))
}

fn particle(ctx: &Ctx) -> Res<()> {
    let spec = ctx.cfg.particle.as_ref().ok_or_else(|| usage("missing [particle] table"))?;
    let multi = ctx.cfg.seeds.len() > 1;
    for &seed in &ctx.cfg.seeds {
        let dir = if multi { ctx.out.join(format!("seed_{seed}")) } else { ctx.out.clone() };
        prepare_dir(&dir, &ctx.prov, ctx.force)?;
        let start = Instant::now();
        let outcome = run_particle(spec, seed, &ctx.prov)?;
        write_particle(&dir, &outcome, &ctx.prov)?;
        let s = &outcome.summary;
        ctx.say(format!(
            "seed {seed}: L_0 = {:.4e}, L_T = {:.4e}, R_T = {:.4}, plateau {:.3}{} ({:.1}s) → {}",
            s.loss_0,
            s.loss_final,
            s.r_final,
            s.plateau_fraction,
            s.poc_total_0.map(|p| format!(", PoC_0 = {p:.3e}")).unwrap_or_default(),
            start.elapsed().as_secs_f64(),
            dir.display()
        ));
    }
    Ok(())
}

fn euler(ctx: &Ctx) -> Res<()> {
    let cfg = ctx.cfg.euler.as_ref().ok_or_else(|| usage("missing [euler] table"))?;
    prepare_dir(&ctx.out, &ctx.prov, ctx.force)?;
    let start = Instant::now();
    let outcome = run_euler_experiment(cfg, &ctx.prov)?;
    write_euler(&ctx.out, cfg, &outcome, &ctx.prov)?;
    let s = &outcome.summary;
    ctx.say(format!(
        "{}: {} steps, L_T/L_0 = {:.3e}, plateau {:.3}, mass drift {:.1e} ({:.1}s) → {}",
        s.target,
        s.steps,
        s.loss_ratio,
        s.plateau_fraction,
        s.max_mass_drift,
        start.elapsed().as_secs_f64(),
        ctx.out.display()
    ));
    Ok(())
}

fn sweep(ctx: &Ctx) -> Res<()> {
    prepare_dir(&ctx.out, &ctx.prov, ctx.force)?;
    let start = Instant::now();
    let report = run_sweep(&ctx.cfg, Some(&ctx.out), |c, resumed| {
        if !ctx.quiet {
            eprintln!(
                "cell {:>4} m={} γ={} η={} d={} seed={}{}",
                c.cell.index,
                c.cell.m,
                c.cell.gamma,
                c.cell.eta,
                c.cell.d,
                c.cell.seed,
                if resumed { " (done)" } else { "" }
            );
        }
    })?;
    let fits = fit_cells(&report.cells);
    let summary = serde_json::json!({
        "kind": "sweep",
        "config_hash": ctx.prov.config_hash,
        "tool_version": ctx.prov.tool_version,
        "cells": report.cells.len(),
        "fits": fits,
    });
    write_json(&ctx.out.join("summary.json"), &summary)?;
    ctx.say(format!(
        "{} cells ({} computed, {} resumed) in {:.1}s → {}",
        report.cells.len(),
        report.computed,
        report.resumed,
        start.elapsed().as_secs_f64(),
        ctx.out.display()
    ));
    for f in fits.iter().filter(|f| f.slope.is_finite()) {
        ctx.say(format!("  {} (γ={}, d={}): slope {:.3} ± {:.3}, r² {:.3}", f.metric, f.gamma, f.d, f.slope, f.slope_stderr, f.r2));
    }
    Ok(())
}

fn toy(a: ToyArgs) -> Res<()> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => {
            let t_star = 4.0 * 100.0 / 0.01;
            ExperimentConfig {
                kind: ExperimentKind::ToyOde,
                seeds: vec![0],
                output_dir: PathBuf::new(),
                workers: 0,
                particle: None,
                euler: None,
                sweep: None,
                toy_ode: Some(ToyOdeSpec {
                    eps: Some(0.1),
                    big_m: Some(10.0),
                    lambda: vec![],
                    e: vec![],
                    t_max: 10.0 * t_star,
                    n_points: 4001,
                }),
            }
        }
    };
    let spec = cfg.toy_ode.as_ref().ok_or_else(|| usage("config has no [toy_ode] table"))?;
    let out = default_out(&cfg, a.out, "toy_ode");
    let prov = Provenance::of(&cfg);
    prepare_dir(&out, &prov, a.force)?;
    let (summary, pts) = run_toy(spec, &prov)?;
    write_toy(&out, &summary, &pts, &prov)?;
    if !a.common.quiet {
        eprintln!(
            "max |X_t| = {:.6}, max X_tᵀHX_t = {:.6e}, |X_T| = {:.6} → {}",
            summary.max_norm,
            summary.max_h_quad,
            summary.final_norm,
            out.display()
        );
    }
    Ok(())
}

fn check_inputs(inputs: &[PathBuf]) -> Res<()> {
    for p in inputs {
        if !p.exists() {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn out_dir(a: &ReadArgs) -> PathBuf {
    a.out.clone().unwrap_or_else(|| {
        let p = &a.inputs[0];
        if p.is_file() {
            p.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            p.clone()
        }
    })
}

fn analyze_cmd(a: &ReadArgs) -> Res<()> {
    check_inputs(&a.inputs)?;
    let result = analyze(&a.inputs, a.force)?;
    let out = out_dir(a);
    fs::create_dir_all(&out)?;
    write_json(&out.join("analysis.json"), &result)?;
    // fits go to stdout even with --quiet
    for f in &result.scaling {
        if f.slope.is_finite() {
            println!(
                "scaling {} (gamma={}, eta={}, d={}): slope {:.4} ± {:.4}, r2 {:.4}, widths {:?}",
                f.metric, f.gamma, f.eta, f.d, f.slope, f.slope_stderr, f.r2, f.widths
            );
        }
    }
    for d in &result.decay {
        println!(
            "decay {}: slope {:.4}, r2 {:.4}, burn-in {}, plateau {:.4}{}",
            d.source,
            d.slope,
            d.r2,
            d.burn_in,
            d.plateau_fraction,
            if d.super_polynomial { ", super-polynomial" } else { "" }
        );
    }
    if !a.common.quiet {
        eprintln!("→ {}", out.join("analysis.json").display());
    }
    Ok(())
}

fn name_of(p: &Path) -> String {
    let dir = if p.ends_with("curves.csv") { p.parent().unwrap_or(p) } else { p };
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

fn plot_cmd(a: &ReadArgs) -> Res<()> {
    check_inputs(&a.inputs)?;
    let out = out_dir(a);
    fs::create_dir_all(&out)?;
    let mut hashes = std::collections::BTreeSet::new();
    let mut cells = Vec::new();
    let mut curves: Vec<(PathBuf, poclab::diagnostics::CurvesFile)> = Vec::new();
    for p in &a.inputs {
        for inp in discover(p)? {
            match inp {
                Input::Sweep(cs) => {
                    hashes.extend(cs.iter().map(|c| c.config_hash.clone()));
                    cells.extend(cs);
                }
                Input::Curves(path) => {
                    let f = poclab::diagnostics::read_curves_csv(std::io::BufReader::new(fs::File::open(&path)?))?;
                    hashes.insert(f.get("config_hash").unwrap_or("").to_string());
                    curves.push((path, f));
                }
            }
        }
    }
    if hashes.len() > 1 && !a.force {
        return Err(usage(format!(
            "inputs come from {} different configurations; pass --force to combine them",
            hashes.len()
        )));
    }
    let joined = hashes.into_iter().collect::<Vec<_>>().join(",");
    let meta = [("config_hash", joined.as_str()), ("tool_version", env!("CARGO_PKG_VERSION"))];
    let mut written = Vec::new();

    if !cells.is_empty() {
        for f in fit_cells(&cells) {
            let Some(fit) = &f.fit else { continue };
            let widths: Vec<f64> = f.widths.iter().map(|&m| m as f64).collect();
            let title = format!("{} (γ = {}, d = {})", f.metric, f.gamma, f.d);
            let svg = plot::scaling_plot(&title, &f.metric, &widths, &f.means, &f.stderr, fit, &meta)?;
            let path = out.join(format!("scaling_{}_g{}_d{}.svg", f.metric, f.gamma, f.d));
            fs::write(&path, svg)?;
            written.push(path);
        }
        // one curve per γ at the widest m, first seed
        let mut gammas: Vec<f64> = cells.iter().map(|c| c.cell.gamma).collect();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let by_gamma: Vec<(String, LossCurve)> = gammas
            .iter()
            .filter_map(|&g| {
                let pool: Vec<_> = cells.iter().filter(|c| c.cell.gamma == g && c.curve.len() > 1).collect();
                let m_max = pool.iter().map(|c| c.cell.m).max()?;
                let c = pool.iter().filter(|c| c.cell.m == m_max).min_by_key(|c| c.cell.seed)?;
                Some((format!("γ = {g}"), c.curve.clone()))
            })
            .collect();
        if !by_gamma.is_empty() {
            let path = out.join("loss_by_gamma.svg");
            fs::write(&path, plot::loss_and_integral(&by_gamma, &meta)?)?;
            written.push(path);
        }
    }
    if !curves.is_empty() {
        let labelled: Vec<(String, LossCurve)> =
            curves.iter().map(|(p, f)| Ok((name_of(p), f.loss_curve()?))).collect::<Result<_, Error>>()?;
        for (name, svg) in [("loss.svg", plot::loss_plot(&labelled, &meta)?), ("r_t.svg", plot::r_plot(&labelled, &meta)?)] {
            let path = out.join(name);
            fs::write(&path, svg)?;
            written.push(path);
        }
        for (p, f) in &curves {
            let dir = p.parent().unwrap_or(Path::new("."));
            if let Some(field) = latest_field(dir)? {
                let grid = build_grid(field.n_lat, field.n_lon)?;
                let curve = f.loss_curve()?;
                let r: Vec<f64> = f.rows.iter().map(|r| r.sqrt_loss_int).collect();
                let svg = plot::triptych(&field, &field.densities(&grid), &curve, &r, &meta)?;
                let path = out.join(format!("triptych_{}.svg", name_of(p)));
                fs::write(&path, svg)?;
                written.push(path);
            }
        }
    }
    if written.is_empty() {
        return Err(Error::InsufficientData("nothing to plot in the given inputs".into()).into());
    }
    if !a.common.quiet {
        for p in &written {
            eprintln!("→ {}", p.display());
        }
    }
    Ok(())
}

/// The `density_t*.poce` dump with the largest time, if any.
fn latest_field(dir: &Path) -> Res<Option<poclab::euler::DensityField>> {
    let mut best: Option<(f64, poclab::euler::DensityField)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !(name.starts_with("density_t") && name.ends_with(".poce")) {
            continue;
        }
        let (t, field) = read_field(std::io::BufReader::new(fs::File::open(&path)?))?;
        if best.as_ref().is_none_or(|(bt, _)| t > *bt) {
            best = Some((t, field));
        }
    }
    Ok(best.map(|b| b.1))
}

fn selftest(c: &Common) -> Res<()> {
    let suites = run_selftest();
    let mut failed = 0;
    for s in &suites {
        println!("{:<12} {}/{} passed", s.name, s.passed, s.total);
        if !c.quiet {
            for f in &s.failures {
                println!("    {f}");
            }
        }
        failed += s.total - s.passed;
    }
    if failed > 0 {
        return Err(Failure { code: 2, msg: format!("{failed} self-checks failed") });
    }
    Ok(())
}
