//! Fits over finished runs: width scaling across sweep cells, decay
//! exponents of single-run loss curves.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{load_cells, CellResult};
use crate::diagnostics::{decay_exponent_fit, mean_and_stderr, poc_scaling_fit, read_curves_csv, ScalingFit};
use crate::error::{invalid, Error, Result};
use crate::harness::run::plateau;

/// Per-cell scalars that can be fitted against `m`.
pub const METRICS: [&str; 4] = ["poc_total_0", "poc_max", "coupling_max", "beta_inf_0"];

pub fn cell_metric(c: &CellResult, metric: &str) -> Option<f64> {
    let s = &c.summary;
    match metric {
        "poc_total_0" => s.poc_total_0,
        "poc_max" => s.poc_max,
        "coupling_max" => s.coupling_max,
        "beta_inf_0" => s.beta_inf_0,
        _ => None,
    }
}

/// Scaling of one metric against `m` at fixed `(γ, η, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub metric: String,
    pub gamma: f64,
    pub eta: f64,
    pub d: usize,
    pub widths: Vec<usize>,
    pub means: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r2: f64,
    #[serde(skip)]
    pub fit: Option<ScalingFit>,
}

/// Groups cells by `(γ, η, d)` and fits each available metric against `m`.
pub fn fit_cells(cells: &[CellResult]) -> Vec<GroupFit> {
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for c in cells {
        let key = (c.cell.gamma, c.cell.eta, c.cell.d);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut fits = Vec::new();
    for (gamma, eta, d) in groups {
        let members: Vec<&CellResult> =
            cells.iter().filter(|c| (c.cell.gamma, c.cell.eta, c.cell.d) == (gamma, eta, d)).collect();
        let widths: BTreeSet<usize> = members.iter().map(|c| c.cell.m).collect();
        for metric in METRICS {
            let by_m: Vec<(usize, Vec<f64>)> = widths
                .iter()
                .map(|&m| {
                    let v = members.iter().filter(|c| c.cell.m == m).filter_map(|c| cell_metric(c, metric)).collect();
                    (m, v)
                })
                .filter(|(_, v): &(usize, Vec<f64>)| !v.is_empty())
                .collect();
            if by_m.len() < 2 {
                continue;
            }
            let (means, stderr): (Vec<f64>, Vec<f64>) = by_m.iter().map(|(_, v)| mean_and_stderr(v)).unzip();
            let fit = poc_scaling_fit(&by_m).ok();
            let (slope, slope_stderr, r2) = fit.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN), |f| (f.slope, f.slope_stderr, f.r2));
            fits.push(GroupFit {
                metric: metric.into(),
                gamma,
                eta,
                d,
                widths: by_m.iter().map(|(m, _)| *m).collect(),
                means,
                stderr,
                slope,
                slope_stderr,
                r2,
                fit,
            });
        }
    }
    fits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub source: String,
    pub slope: f64,
    pub r2: f64,
    pub burn_in: f64,
    pub super_polynomial: bool,
    pub r_final: f64,
    pub plateau_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub config_hashes: Vec<String>,
    pub scaling: Vec<GroupFit>,
    pub decay: Vec<DecaySummary>,
}

/// What a path holds.
pub enum Input {
    Sweep(Vec<CellResult>),
    Curves(PathBuf),
}

/// A directory with `cells/` is a sweep; a directory with `curves.csv` (or
/// the file itself) is a single run. Seed subdirectories are searched one
/// level deep.
pub fn discover(path: &Path) -> Result<Vec<Input>> {
    if path.is_file() {
        return Ok(vec![Input::Curves(path.to_path_buf())]);
    }
    if !path.is_dir() {
        return Err(Error::Io(format!("{} does not exist", path.display())));
    }
    if path.join("cells").is_dir() {
        return Ok(vec![Input::Sweep(load_cells(path)?)]);
    }
    if path.join("curves.csv").is_file() {
        return Ok(vec![Input::Curves(path.join("curves.csv"))]);
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("curves.csv").is_file())
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(Error::InsufficientData(format!("no curves.csv or cells/ under {}", path.display())));
    }
    Ok(subs.into_iter().map(|p| Input::Curves(p.join("curves.csv"))).collect())
}

pub fn analyze(paths: &[PathBuf], force: bool) -> Result<Analysis> {
    let mut inputs = Vec::new();
    for p in paths {
        inputs.extend(discover(p)?);
    }
    let mut out = Analysis::default();
    let mut hashes = BTreeSet::new();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for inp in inputs {
        match inp {
            Input::Sweep(cs) => {
                hashes.extend(cs.iter().map(|c| c.config_hash.clone()));
                cells.extend(cs);
            }
            Input::Curves(p) => {
                let file = read_curves_csv(BufReader::new(File::open(&p)?))
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                hashes.insert(file.get("config_hash").unwrap_or("").to_string());
                curves.push((p, file));
            }
        }
    }
    out.config_hashes = hashes.into_iter().collect();
    if out.config_hashes.len() > 1 && !force {
        return Err(invalid(format!(
            "inputs come from {} different configurations; pass --force to combine them",
            out.config_hashes.len()
        )));
    }
    out.scaling = fit_cells(&cells);
    for (p, file) in curves {
        let curve = file.loss_curve()?;
        let fit = decay_exponent_fit(&curve, 0.25)?;
        let (r, _, frac) = plateau(&curve);
        out.decay.push(DecaySummary {
            source: p.display().to_string(),
            slope: fit.slope,
            r2: fit.r2,
            burn_in: fit.burn_in,
            super_polynomial: fit.super_polynomial,
            r_final: r,
            plateau_fraction: frac,
        });
    }
    if out.scaling.is_empty() && out.decay.is_empty() {
        return Err(Error::InsufficientData("nothing to fit in the given inputs".into()));
    }
    Ok(out)
}
