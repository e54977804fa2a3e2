//! Experiment configuration: one versioned JSON document per invocation.
//! Unknown keys are rejected; the resolved document, with every default
//! filled in, is written into each output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use previewflow::experiment::ConditionSource;
use previewflow::field::{read_checkpoint, Architecture, BoxBlur, ChannelAffine, Padding, ToyDataset, TrainConfig};
use previewflow::{BaselineKind, Field, PreviewConfig, VelocityField};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Fewest seeds the commutator study accepts.
pub use previewflow::study::MIN_SEEDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Train,
    Preview,
    Compare,
    Ablate,
    Stats,
}

/// Velocity field to sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A trained network; relative paths resolve against the config file.
    Checkpoint { path: PathBuf },
    /// `v(x) = A x + b` at every pixel.
    ChannelAffine { matrix: Vec<Vec<f32>>, bias: Vec<f32> },
    /// `gain * (3x3 box mean)` on each channel.
    Blur { gain: f32, padding: Padding },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Checkpoint {
            path: PathBuf::from("model.ckpt"),
        }
    }
}

/// Per-seed condition vectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSpec {
    /// The checkpoint's training distribution if it records one, otherwise
    /// an empty condition.
    #[default]
    Auto,
    Fixed(Vec<f32>),
    Dataset(ToyDataset),
}

/// Explicit seed list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Range { start: 0, count: 8 }
    }
}

impl SeedSpec {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }

    /// `"1,2,3"` or `"a..b"` (end exclusive).
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::usage(format!("cannot parse seed list '{s}' (expected '1,2,3' or 'a..b')"));
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b <= a {
                return Err(bad());
            }
            return Ok(SeedSpec::Range { start: a, count: b - a });
        }
        let list = s
            .split(',')
            .map(|v| v.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        Ok(SeedSpec::List(list))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: ToyDataset,
    /// Defaults to the toy architecture sized for the dataset.
    pub architecture: Option<Architecture>,
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: ToyDataset::default(),
            architecture: None,
            config: TrainConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn architecture(&self) -> Architecture {
        self.architecture
            .clone()
            .unwrap_or_else(|| Architecture::toy(self.dataset.d, self.dataset.cond_arity()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Selection,
    Cg,
    MAlpha,
    K,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Selection => "selection",
            Axis::Cg => "cg",
            Axis::MAlpha => "m-alpha",
            Axis::K => "k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub axis: Axis,
    pub m_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
    pub k_values: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            axis: Axis::Selection,
            m_values: vec![3, 4, 5, 6, 7],
            alpha_values: vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06],
            k_values: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StatsTest {
    Cg,
    Cosine,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub test: StatsTest,
    /// Largest `k` of the cosine trace `cos(v_D, v_{D+k})`.
    pub span: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            test: StatsTest::All,
            span: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: Option<u32>,
    /// When present, must name the subcommand being run.
    pub command: Option<CommandKind>,
    pub model: ModelSpec,
    /// `(h, w, d)` of the full-resolution grid; defaults to the
    /// checkpoint's dataset shape, else 16x16 with the field's channels.
    pub shape: Option<[usize; 3]>,
    pub condition: ConditionSpec,
    pub preview: PreviewConfig,
    pub baselines: Vec<BaselineKind>,
    pub seeds: SeedSpec,
    pub out: PathBuf,
    pub export_images: bool,
    pub jobs: usize,
    pub train: TrainSection,
    pub ablate: AblateSection,
    pub stats: StatsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: Some(SCHEMA_VERSION),
            command: None,
            model: ModelSpec::default(),
            shape: None,
            condition: ConditionSpec::Auto,
            preview: PreviewConfig::default(),
            baselines: vec![
                BaselineKind::ReducedNfe { steps: 20 },
                BaselineKind::DirectLr,
                BaselineKind::NaiveDown,
            ],
            seeds: SeedSpec::default(),
            out: PathBuf::from("previewflow-out"),
            export_images: false,
            jobs: 1,
            train: TrainSection::default(),
            ablate: AblateSection::default(),
            stats: StatsSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and checks the schema version. Relative checkpoint paths are
    /// made relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        match cfg.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(CliError::usage(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"))),
            None => return Err(CliError::usage("config lacks schema_version")),
        }
        if let ModelSpec::Checkpoint { path: p } = &mut cfg.model {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn check_command(&self, cmd: CommandKind) -> Result<(), CliError> {
        match self.command {
            Some(c) if c != cmd => Err(CliError::usage(format!(
                "config is for '{}' but '{}' was invoked",
                c.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default(),
                cmd.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
            ))),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.jobs == 0 {
            return Err(CliError::usage("jobs must be >= 1"));
        }
        let seeds = self.seeds.resolve();
        if seeds.is_empty() {
            return Err(CliError::usage("seed list is empty"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::usage("seed list has duplicates"));
        }
        Ok(())
    }
}

/// A field ready to sample, with its grid shape and condition source.
pub struct Model {
    pub field: Field,
    pub shape: (usize, usize, usize),
    pub condition: ConditionSource,
}

impl Model {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let (field, dataset) = match &cfg.model {
            ModelSpec::Checkpoint { path } => {
                if !path.exists() {
                    return Err(CliError::io(format!("checkpoint {} not found", path.display())));
                }
                let (header, net) = read_checkpoint(path)?;
                (Field::ToyNet(net), header.dataset)
            }
            ModelSpec::ChannelAffine { matrix, bias } => (Field::ChannelAffine(ChannelAffine::new(matrix.clone(), bias.clone())?), None),
            ModelSpec::Blur { gain, padding } => (Field::Blur(BoxBlur::new(*gain, *padding)), None),
        };
        let shape = match (cfg.shape, &dataset) {
            (Some([h, w, d]), _) => (h, w, d),
            (None, Some(ds)) => (ds.h, ds.w, ds.d),
            (None, None) => (16, 16, field.channels().unwrap_or(1)),
        };
        if let Some(c) = field.channels() {
            if c != shape.2 {
                return Err(CliError::usage(format!("model has {c} channels but the grid has {}", shape.2)));
            }
        }
        let condition = match &cfg.condition {
            ConditionSpec::Fixed(v) => ConditionSource::Fixed(v.clone()),
            ConditionSpec::Dataset(ds) => ConditionSource::Dataset(ds.clone()),
            ConditionSpec::Auto => match dataset {
                Some(ds) => ConditionSource::Dataset(ds),
                None => ConditionSource::Fixed(vec![0.0; field.cond_arity()]),
            },
        };
        let arity = match &condition {
            ConditionSource::Fixed(v) => v.len(),
            ConditionSource::Dataset(ds) => ds.cond_arity(),
        };
        if arity != field.cond_arity() {
            return Err(CliError::usage(format!(
                "condition has {arity} entries but the model takes {}",
                field.cond_arity()
            )));
        }
        cfg.preview.validate(shape.0, shape.1)?;
        Ok(Self { field, shape, condition })
    }
}
