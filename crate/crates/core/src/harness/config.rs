//! Experiment configuration: TOML on disk, canonical JSON for hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::domain::DomainSpec;
use crate::ensemble::InitKind;
use crate::error::{invalid, Error, Result};
use crate::euler::EulerConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Particle,
    Euler,
    Sweep,
    ToyOde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Euclidean,
    Sphere,
}

/// One particle experiment: a Sobolev target, its data, and the coupled or
/// reference-only flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub gamma: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    /// Reference width; `ref_factor * m` when absent.
    #[serde(default)]
    pub m_ref: Option<usize>,
    #[serde(default = "default_ref_factor")]
    pub ref_factor: usize,
    pub eta: f64,
    #[serde(default)]
    pub eta_ref: Option<f64>,
    pub horizon: f64,
    /// Snapshot spacing; every finite step when absent.
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    #[serde(default = "default_domain")]
    pub domain: DomainKind,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_init")]
    pub init: InitKind,
    /// Evolve the finite system alongside the reference.
    #[serde(default = "yes")]
    pub coupled: bool,
    /// Independent training sample for the finite system.
    #[serde(default)]
    pub independent_data: bool,
    #[serde(default)]
    pub label_noise: f64,
    /// Operator diagnostics at every snapshot (needs a smoothed activation for `D`).
    #[serde(default)]
    pub operators: bool,
    /// Times at which to measure the linearization residual.
    #[serde(default)]
    pub residual_times: Vec<f64>,
    #[serde(default)]
    pub weights_dump: bool,
    #[serde(default = "default_c_step")]
    pub c_step: f64,
}

fn default_k_max() -> usize {
    crate::targets::DEFAULT_K_MAX
}
fn default_ref_factor() -> usize {
    16
}
fn default_domain() -> DomainKind {
    DomainKind::Euclidean
}
fn default_init() -> InitKind {
    InitKind::gaussian(1.0)
}
fn default_c_step() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ParticleSpec {
    pub fn m_ref(&self) -> usize {
        self.m_ref.unwrap_or(self.ref_factor * self.m)
    }

    pub fn eta_ref(&self) -> f64 {
        self.eta_ref.unwrap_or(self.eta)
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        match self.domain {
            DomainKind::Euclidean => DomainSpec::euclidean(self.d),
            DomainKind::Sphere => DomainSpec::sphere(self.d),
        }
    }

    /// Grid of snapshot times in `[0, horizon]`, with residual stencils added.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let every = self.snapshot_every.unwrap_or(self.eta);
        let k = (self.horizon / every + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=k).map(|i| i as f64 * every).collect();
        for &t in &self.residual_times {
            times.extend([t - self.eta, t, t + self.eta]);
        }
        // snap onto the step grid so duplicates collapse
        let mut steps: Vec<u64> = times
            .iter()
            .filter(|t| (-1e-9..=self.horizon + 1e-9).contains(*t))
            .map(|t| (t / self.eta + 1e-9).floor() as u64)
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps.into_iter().map(|s| s as f64 * self.eta).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(invalid("particle.gamma must be positive"));
        }
        if self.n == 0 || self.m == 0 {
            return Err(invalid("particle.n and particle.m must be positive"));
        }
        if !(self.horizon >= 0.0) || !(self.eta > 0.0) {
            return Err(invalid("particle.eta must be positive and horizon nonnegative"));
        }
        if let Some(s) = self.snapshot_every {
            if !(s > 0.0) {
                return Err(invalid("particle.snapshot_every must be positive"));
            }
        }
        if !(self.label_noise >= 0.0) {
            return Err(invalid("particle.label_noise must be nonnegative"));
        }
        for &t in &self.residual_times {
            if t - self.eta < -1e-12 || t + self.eta > self.horizon + 1e-12 {
                return Err(invalid(format!("residual time {t} needs a full stencil inside [0, horizon]")));
            }
        }
        self.domain_spec()?;
        if let Activation::SmoothedRelu { tau } = self.activation {
            if !(tau > 0.0) {
                return Err(invalid("smoothed_relu needs tau > 0"));
            }
        }
        Ok(())
    }
}

/// Cartesian product of particle experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub d: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() && self.gamma.is_empty() && self.eta.is_empty() && self.d.is_empty() {
            return Err(invalid("sweep needs at least one axis"));
        }
        Ok(())
    }
}

/// `dX/dt = -HX + e` with diagonal `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyOdeSpec {
    /// Build the one-mode counterexample from `(eps, big_m)` when set.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub big_m: Option<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub e: Vec<f64>,
    pub t_max: f64,
    pub n_points: usize,
}

impl ToyOdeSpec {
    pub fn system(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self.eps, self.big_m) {
            (Some(eps), Some(m)) => {
                if !(eps > 0.0 && m > 0.0) {
                    return Err(invalid("toy_ode.eps and toy_ode.big_m must be positive"));
                }
                Ok(crate::operators::counterexample_system(eps, m))
            }
            (None, None) => {
                if self.lambda.is_empty() || self.lambda.len() != self.e.len() {
                    return Err(invalid("toy_ode.lambda and toy_ode.e must be nonempty and equally long"));
                }
                Ok((self.lambda.clone(), self.e.clone()))
            }
            _ => Err(invalid("toy_ode.eps and toy_ode.big_m must be given together")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        if !(self.t_max > 0.0) || self.n_points < 2 {
            return Err(invalid("toy_ode needs t_max > 0 and n_points >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: PathBuf,
    /// 0 = all available cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub particle: Option<ParticleSpec>,
    #[serde(default)]
    pub euler: Option<EulerConfig>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub toy_ode: Option<ToyOdeSpec>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        let need = |present: bool, table: &str| {
            if present { Ok(()) } else { Err(invalid(format!("kind = {:?} needs a [{table}] table", self.kind))) }
        };
        match self.kind {
            ExperimentKind::Particle => need(self.particle.is_some(), "particle")?,
            ExperimentKind::Euler => need(self.euler.is_some(), "euler")?,
            ExperimentKind::Sweep => {
                need(self.particle.is_some(), "particle")?;
                need(self.sweep.is_some(), "sweep")?;
            }
            ExperimentKind::ToyOde => need(self.toy_ode.is_some(), "toy_ode")?,
        }
        if let Some(p) = &self.particle {
            p.validate()?;
        }
        if let Some(e) = &self.euler {
            e.validate()?;
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        if let Some(t) = &self.toy_ode {
            t.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring fields that do not change
    /// results (output location and worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        hash_json(&c)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARTICLE: &str = r#"
kind = "particle"
seeds = [1, 2]

[particle]
gamma = 8.0
d = 2
n = 64
m = 32
eta = 0.1
horizon = 2.0
snapshot_every = 0.5
activation = { kind = "smoothed_relu", tau = 0.1 }
residual_times = [1.0]
"#;

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_toml(PARTICLE).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let p = cfg.particle.as_ref().unwrap();
        assert_eq!(p.m_ref(), 512);
        assert_eq!(p.snapshot_times(), vec![0.0, 0.5, 0.9, 1.0, 1.1, 1.5, 2.0]);
    }

    #[test]
    fn hash_ignores_placement() {
        let a = ExperimentConfig::from_toml(PARTICLE).unwrap();
        let mut b = a.clone();
        b.workers = 7;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![3];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ExperimentConfig::from_toml("kind = \"particle\""), Err(Error::InvalidConfig(_))));
        assert!(matches!(ExperimentConfig::from_toml("kind = \"nope\""), Err(Error::Format(_))));
        let typo = PARTICLE.replace("horizon", "horizn");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let bad_res = PARTICLE.replace("residual_times = [1.0]", "residual_times = [2.0]");
        assert!(ExperimentConfig::from_toml(&bad_res).is_err());
    }

    #[test]
    fn toy_system_forms() {
        let t = ToyOdeSpec { eps: Some(0.1), big_m: Some(10.0), lambda: vec![], e: vec![], t_max: 1.0, n_points: 2 };
        assert_eq!(t.system().unwrap().0, vec![0.1 * 0.1 / 400.0]);
        let half = ToyOdeSpec { big_m: None, ..t.clone() };
        assert!(half.validate().is_err());
    }
}
