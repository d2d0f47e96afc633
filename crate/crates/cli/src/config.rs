//! Run configuration: one TOML file holding the flat simulator keys plus
//! tables for data, inflow model, training and evaluation.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reservoir_core::data::{self, DailyRecord, SyntheticConfig};
use reservoir_core::inflow::{filter_series, DlmSettings, FittedInflow, InflowModelKind};
use reservoir_core::policy::SchedulePolicy;
use reservoir_core::{SimParams, StageStorageCurve};
use reservoir_rl::LearnerConfig;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_VAR: &str = "REPO_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset CSV; synthetic data from `[synthetic]` when absent.
    pub path: Option<PathBuf>,
    pub train_end: i32,
    pub test_year: i32,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: None, train_end: 2018, test_year: 2019 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InflowSection {
    /// Model fitted when `--inflow` names a kind rather than a file.
    pub model: InflowModelKind,
    pub dlm: DlmSettings,
}

impl Default for InflowSection {
    fn default() -> Self {
        Self { model: InflowModelKind::Dlm, dlm: DlmSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub rainfall_scale: f64,
    /// Uniform range of initial levels for training episodes; the recorded
    /// level is used when absent.
    pub initial_level: Option<(f64, f64)>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { rainfall_scale: 100.0, initial_level: Some((330.0, 340.0)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub episodes: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { episodes: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSection,
    pub synthetic: SyntheticConfig,
    pub inflow: InflowSection,
    pub training: TrainingSection,
    pub learner: LearnerConfig,
    pub evaluation: EvaluationSection,
}

/// Simulator parameters and run options from one file.
#[derive(Debug, Clone, Default)]
pub struct Config {
    pub sim: SimParams,
    pub run: RunConfig,
}

#[derive(Debug, Serialize)]
pub struct ConfigSnapshot<'a> {
    pub sim: &'a SimParams,
    #[serde(flatten)]
    pub run: &'a RunConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let sim = SimParams::from_toml_str(&text).with_context(|| format!("simulator keys in {}", path.display()))?;
        let run: RunConfig = toml::from_str(&text).with_context(|| format!("run tables in {}", path.display()))?;
        Ok(Self { sim, run })
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(ConfigSnapshot { sim: &self.sim, run: &self.run }).expect("config serializes")
    }

    pub fn curve(&self) -> Result<StageStorageCurve> {
        let c = StageStorageCurve::new(StageStorageCurve::DEFAULT_SLOPE, StageStorageCurve::DEFAULT_INTERCEPT, self.sim.dam_cap)?;
        self.sim.validate(&c)?;
        Ok(c)
    }
}

/// A path as given, else relative to `REPO_DATA_DIR`.
pub fn resolve_data_path(p: &Path) -> Result<PathBuf> {
    if p.exists() {
        return Ok(p.to_path_buf());
    }
    if p.is_relative() {
        if let Some(root) = env::var_os(DATA_DIR_VAR) {
            let q = Path::new(&root).join(p);
            if q.exists() {
                return Ok(q);
            }
        }
    }
    bail!("dataset not found: {}", p.display())
}

/// Dataset from `--data`, the config, or the synthetic generator. Inflow is
/// derived from levels when the file has none.
pub fn load_dataset(cfg: &Config, data: Option<&Path>) -> Result<Vec<DailyRecord>> {
    let curve = cfg.curve()?;
    let path = data.map(Path::to_path_buf).or_else(|| cfg.run.data.path.clone());
    let records = match path {
        Some(p) => {
            let p = resolve_data_path(&p)?;
            data::load_csv(&p)?
        }
        None => data::synthesize(&cfg.run.synthetic, &curve, &cfg.sim)?,
    };
    if records.iter().any(|r| r.inflow_bcm.is_none()) {
        let derived = data::derive_inflow(&records, &curve, &SchedulePolicy::baseline(cfg.sim.a_max))?;
        // The first day has no predecessor; drop it when it stays empty.
        return Ok(derived.into_iter().skip_while(|r| r.inflow_bcm.is_none()).collect());
    }
    Ok(records)
}

pub fn parse_kind(s: &str) -> Option<InflowModelKind> {
    let norm = |t: &str| t.to_ascii_lowercase().replace('+', "plus").replace(['_', '-'], "");
    InflowModelKind::ALL.into_iter().find(|k| norm(k.tag()) == norm(s))
}

/// `replay`, a model JSON file, or a kind name fitted on `train`.
pub fn resolve_inflow(spec: &str, train: &[DailyRecord], k: usize, settings: &DlmSettings) -> Result<FittedInflow> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading inflow model {spec}"))?;
        let model = FittedInflow::from_json(&text).with_context(|| format!("parsing inflow model {spec}"))?;
        if model.k() != k {
            bail!("inflow model {spec} uses K={} but the simulator window is {k}", model.k());
        }
        return Ok(model);
    }
    match parse_kind(spec) {
        Some(kind) => Ok(FittedInflow::fit(kind, &data::rainfall(train), &data::inflow(train)?, k, settings)?),
        None => bail!("inflow model not found: {spec}"),
    }
}

/// One-step NSE of `kind` on the training span and on the test year, with
/// GLS parts fitted on the training span and DLM states filtered throughout.
pub fn nse_by_split(kind: InflowModelKind, train: &[DailyRecord], test: &[DailyRecord], k: usize, settings: &DlmSettings) -> Result<(f64, f64)> {
    let full: Vec<DailyRecord> = train.iter().chain(test).copied().collect();
    let (dates, rain, q) = (data::dates(&full), data::rainfall(&full), data::inflow(&full)?);
    let recs = match kind {
        InflowModelKind::Replay => filter_series(kind, &dates, &rain, &q, k, settings)?,
        _ => {
            let mut model = FittedInflow::initial(kind, &data::rainfall(train), &data::inflow(train)?, k, settings)?;
            reservoir_core::inflow::forecast_series(&mut model, &dates, &rain, &q, 0)?
        }
    };
    let n = train.len();
    Ok((reservoir_core::inflow::nse(&recs[..n])?, reservoir_core::inflow::nse(&recs[n..])?))
}
