use std::fs;
use std::path::{Path, PathBuf};

use poclab::harness::{ExperimentConfig, ExperimentKind};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|e| e == "toml") {
            out.push(p);
        }
    }
}

#[test]
fn every_preset_loads_and_validates() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut paths = Vec::new();
    collect(&root, &mut paths);
    assert!(paths.len() >= 9, "found {paths:?}");
    for p in &paths {
        let cfg = ExperimentConfig::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        // round-trips through TOML with the same hash
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg.hash(), again.hash(), "{}", p.display());
        if cfg.kind == ExperimentKind::Euler {
            assert!(p.starts_with(root.join("euler_fig4")));
        }
    }
}
