//! Machine-readable run outputs: the metrics report and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use reservoir_core::env::EpisodeTrace;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NseEntry {
    pub model: String,
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyMetrics {
    pub policy: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted_return: f64,
    pub std_discounted_return: f64,
    /// Days on which the reservoir spilled at the crest, summed over episodes.
    pub flood_days: usize,
    pub spilled_bcm: f64,
    pub released_bcm: f64,
    pub max_level_m: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

impl PolicyMetrics {
    pub fn from_traces(policy: &str, traces: &[EpisodeTrace]) -> Self {
        let summaries: Vec<_> = traces.iter().map(EpisodeTrace::summary).collect();
        let und: Vec<f64> = summaries.iter().map(|s| s.undiscounted_return).collect();
        let dis: Vec<f64> = summaries.iter().map(|s| s.discounted_return).collect();
        let (mean_return, std_return) = mean_std(&und);
        let (mean_discounted_return, std_discounted_return) = mean_std(&dis);
        Self {
            policy: policy.into(),
            episodes: traces.len(),
            mean_return,
            std_return,
            mean_discounted_return,
            std_discounted_return,
            flood_days: summaries.iter().map(|s| s.overflow_days).sum(),
            spilled_bcm: summaries.iter().map(|s| s.spilled_total).sum(),
            released_bcm: summaries.iter().map(|s| s.released_total).sum(),
            max_level_m: summaries.iter().map(|s| s.max_level).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nse: Vec<NseEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyMetrics>,
}

impl MetricsReport {
    pub fn check_finite(&self) -> Result<()> {
        let vals = self.nse.iter().flat_map(|e| [e.train, e.test]).chain(self.policies.iter().flat_map(|p| {
            [p.mean_return, p.std_return, p.mean_discounted_return, p.std_discounted_return, p.spilled_bcm, p.released_bcm]
        }));
        for v in vals {
            anyhow::ensure!(v.is_finite(), "metrics contain a non-finite value");
        }
        Ok(())
    }
}

/// Everything needed to rerun a command. The timestamp lives only here.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            argv: std::env::args().collect(),
            seed,
            config,
            artifacts: BTreeMap::new(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, path: &Path) {
        self.artifacts.insert(name.into(), path.to_path_buf());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join("manifest.json");
        write_json(&p, self)?;
        Ok(p)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
