//! Grid sweeps over `(d, η, γ, m) × seeds` with per-cell RNG streams and
//! file-level resume.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{hash_json, ExperimentConfig, ParticleSpec, TOOL_VERSION};
use super::run::{run_particle, Provenance, ParticleSummary};
use crate::diagnostics::LossCurve;
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::rng::{streams, RngSpec};

/// Points kept from each cell's loss curve.
const CURVE_POINTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub m: usize,
    pub gamma: f64,
    pub eta: f64,
    pub d: usize,
    pub seed: u64,
    /// Seed actually used by the run, derived from `seed` and the axis point.
    pub cell_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config_hash: String,
    pub cell_hash: String,
    pub tool_version: String,
    pub cell: SweepCell,
    pub summary: ParticleSummary,
    /// Thinned reference loss curve.
    pub curve: LossCurve,
}

/// Expands the sweep into cells, `m` varying fastest and seeds slowest.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<(SweepCell, ParticleSpec)>> {
    let base = cfg.particle.as_ref().ok_or_else(|| invalid("sweep needs a [particle] table"))?;
    let sw = cfg.sweep.as_ref().ok_or_else(|| invalid("sweep needs a [sweep] table"))?;
    let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
    let ds = if sw.d.is_empty() { vec![base.d] } else { sw.d.clone() };
    let ms = if sw.m.is_empty() { vec![base.m] } else { sw.m.clone() };
    let etas = or(&sw.eta, base.eta);
    let gammas = or(&sw.gamma, base.gamma);

    let mut points = Vec::new();
    for &d in &ds {
        for &eta in &etas {
            for &gamma in &gammas {
                for &m in &ms {
                    points.push((d, eta, gamma, m));
                }
            }
        }
    }
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for (p, &(d, eta, gamma, m)) in points.iter().enumerate() {
            let mut spec = base.clone();
            spec.d = d;
            spec.eta = eta;
            spec.gamma = gamma;
            spec.m = m;
            spec.validate()?;
            let cell_seed = RngSpec::new(seed, streams::SWEEP_BASE + p as u64).derive_seed(p as u64);
            let index = cells.len();
            cells.push((SweepCell { index, m, gamma, eta, d, seed, cell_seed }, spec));
        }
    }
    Ok(cells)
}

pub fn cell_hash(cell: &SweepCell, spec: &ParticleSpec) -> String {
    hash_json(&(cell, spec, TOOL_VERSION))
}

pub fn cell_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("cells").join(format!("cell_{index:05}.json"))
}

fn load_cell(path: &Path, want_hash: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.cell_hash == want_hash).then_some(cell)
}

pub fn run_cell(cell: &SweepCell, spec: &ParticleSpec, prov: &Provenance) -> Result<CellResult> {
    let outcome = run_particle(spec, cell.cell_seed, prov)?;
    let stride = outcome.ref_curve.len().div_ceil(CURVE_POINTS).max(1);
    Ok(CellResult {
        config_hash: prov.config_hash.clone(),
        cell_hash: cell_hash(cell, spec),
        tool_version: prov.tool_version.clone(),
        cell: cell.clone(),
        summary: outcome.summary,
        curve: outcome.ref_curve.thinned(stride),
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub resumed: usize,
    pub computed: usize,
}

/// Runs every cell not already present under `dir/cells` with a matching
/// hash. Cells run in parallel; each one writes its own file, so an
/// interrupted sweep picks up where it stopped.
pub fn run_sweep<F>(cfg: &ExperimentConfig, dir: Option<&Path>, progress: F) -> Result<SweepReport>
where
    F: Fn(&CellResult, bool) + Sync,
{
    let cells = sweep_cells(cfg)?;
    let prov = Provenance::of(cfg);
    if let Some(dir) = dir {
        fs::create_dir_all(dir.join("cells"))?;
    }
    let results: Vec<Result<(CellResult, bool)>> = par::map_indices(cells.len(), |k| {
        let (cell, spec) = &cells[k];
        let want = cell_hash(cell, spec);
        if let Some(dir) = dir {
            if let Some(done) = load_cell(&cell_path(dir, cell.index), &want) {
                progress(&done, true);
                return Ok((done, true));
            }
        }
        let res = run_cell(cell, spec, &prov)?;
        if let Some(dir) = dir {
            let path = cell_path(dir, cell.index);
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_string(&res)?)
                .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
            fs::rename(&tmp, &path)?;
        }
        progress(&res, false);
        Ok((res, false))
    });
    let mut report = SweepReport { cells: Vec::with_capacity(results.len()), resumed: 0, computed: 0 };
    for r in results {
        let (cell, resumed) = r?;
        if resumed {
            report.resumed += 1;
        } else {
            report.computed += 1;
        }
        report.cells.push(cell);
    }
    Ok(report)
}

/// Reads every `cells/*.json` under `dir`, in index order.
pub fn load_cells(dir: &Path) -> Result<Vec<CellResult>> {
    let cells_dir = dir.join("cells");
    let mut paths: Vec<PathBuf> = fs::read_dir(&cells_dir)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", cells_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}
