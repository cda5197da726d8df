//! Run configuration: one TOML file with dotted keys, every field optional.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use transitnet_core::data::{DataError, Period, PeriodSpec, RidershipGrid, ServiceWindow, SynthConfig};
use transitnet_core::model::ModelConfig;
use transitnet_core::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Boarding records CSV; defaults to `<output_dir>/ridership.csv`.
    pub ridership: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Checkpoint to evaluate, forecast with, or fine-tune.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub interval_minutes: u32,
    pub service: ServiceWindow,
    pub self_loops: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { interval_minutes: 15, service: ServiceWindow::default(), self_loops: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodSection {
    /// Explicit periods; when empty, the last 7 days are `test`, the 3 days
    /// before them `validation`, and everything earlier `train`.
    pub list: Vec<Period>,
    pub train: String,
    pub validation: String,
    /// Periods scored by `evaluate`.
    pub evaluate: Vec<String>,
    /// Period whose rows `forecast` and `lag-curve` start from.
    pub forecast: String,
}

impl Default for PeriodSection {
    fn default() -> Self {
        Self {
            list: Vec::new(),
            train: "train".into(),
            validation: "validation".into(),
            evaluate: vec!["validation".into(), "test".into()],
            forecast: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    /// First target time; defaults to the first in-service slot of the
    /// forecast period.
    pub origin: Option<NaiveDateTime>,
    pub max_lag: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { horizon: 12, origin: None, max_lag: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
    pub max_iter: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { k: 5, max_iter: 300 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `synth.seed`, `model.seed` and `train.shuffle_seed`, and
    /// seeds clustering.
    pub seed: u64,
    pub paths: Paths,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub periods: PeriodSection,
    pub forecast: ForecastSection,
    pub cluster: ClusterSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Propagates the run seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.model.seed = seed;
        self.train.shuffle_seed = seed;
        self
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn in_output(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.output_dir().join(name))
    }

    pub fn ridership_path(&self) -> PathBuf {
        self.in_output(&self.paths.ridership, "ridership.csv")
    }

    pub fn stations_path(&self) -> PathBuf {
        self.in_output(&self.paths.stations, "stations.csv")
    }

    pub fn edges_path(&self) -> PathBuf {
        self.in_output(&self.paths.edges, "edges.csv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.in_output(&self.paths.checkpoint, "model.ckpt")
    }

    /// Hex SHA-256 of the configuration with every path removed.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.paths = Paths::default();
        let text = toml::to_string(&stripped).expect("configuration serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Explicit periods, or the default train/validation/test split of `grid`.
    pub fn period_spec(&self, grid: &RidershipGrid) -> anyhow::Result<PeriodSpec> {
        if !self.periods.list.is_empty() {
            return Ok(PeriodSpec::new(self.periods.list.clone())?);
        }
        let days = grid.days as i64;
        if days < 15 {
            bail!(DataError::Config(format!("the default periods need at least 15 days, got {}", grid.days)));
        }
        let day = |d: i64| grid.start_date + Duration::days(d);
        Ok(PeriodSpec::new(vec![
            Period::new("train", day(0), day(days - 11)),
            Period::new("validation", day(days - 10), day(days - 8)),
            Period::new("test", day(days - 7), day(days - 1)),
        ])?)
    }
}
