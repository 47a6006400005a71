//! Experiment configuration for `connie run`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use connie::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Generate(GenerateSpec),
    File(PathBuf),
    /// Edges and weights both come from a pairwise interaction-count file.
    Interactions {
        path: PathBuf,
        xi: f64,
        phi: f64,
        #[serde(default)]
        nodes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    /// `er` or `pa`.
    pub model: String,
    pub nodes: usize,
    /// Edge count for `er`.
    #[serde(default)]
    pub edges: Option<usize>,
    /// Out-degree of each new node for `pa`.
    #[serde(default)]
    pub out_degree: Option<usize>,
}

/// One end-to-end experiment: network, cascades, optional noise, inference.
///
/// Exactly one of `rho` and `rho_grid` selects a single inference or a sweep.
/// With neither set the default grid is swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    /// Uniform reweighting in flag syntax, e.g. `uniform:0.05,1.0`.
    #[serde(default)]
    pub weights: Option<String>,
    /// Transmission model in flag syntax, e.g. `exp:1.0`.
    pub model: String,
    #[serde(default = "default_coverage")]
    pub coverage_target: f64,
    #[serde(default = "default_max_cascades")]
    pub max_cascades: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub rho_grid: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

pub fn default_coverage() -> f64 {
    0.99
}

pub fn default_max_cascades() -> usize {
    100_000
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.network {
            NetworkSource::File(p) | NetworkSource::Interactions { path: p, .. } => resolve(p),
            NetworkSource::Generate(_) => {}
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.rho.is_some() && self.rho_grid.is_some() {
            bail!("set at most one of rho and rho_grid");
        }
        match &self.network {
            NetworkSource::File(p) | NetworkSource::Interactions { path: p, .. } => {
                if !p.is_file() {
                    bail!("input file {} does not exist", p.display());
                }
            }
            NetworkSource::Generate(_) => {}
        }
        if !(self.sigma >= 0.0) {
            bail!("sigma must be >= 0");
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"network": {"generate": {"model": "er", "nodes": 4, "edges": 3}},
                "model": "exp:1", "seed": 1, "output_dir": "out"}"#,
        )
        .unwrap();
        assert_eq!(cfg.coverage_target, 0.99);
        assert_eq!(cfg.solver, SolverOptions::default());
        assert_eq!(cfg.weights, None);
        cfg.check().unwrap();
    }

    #[test]
    fn rejects_rho_and_grid() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"network": {"file": "net.tsv"}, "model": "exp:1", "seed": 1,
                "output_dir": "out", "rho": 1.0, "rho_grid": "0,1"}"#,
        )
        .unwrap();
        assert!(cfg.check().is_err());
    }
}
