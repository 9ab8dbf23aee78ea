//! Declarative pipeline spec: parsing, normalization and validation.
//!
//! A pipeline spec file is a single JSON object:
//!
//! ```json
//! {
//!   "models": [{ "name": "ad", "optimization_metric": "f1",
//!                "algorithms": ["dnn"], "dataset": "ad.json" }],
//!   "platform": { "kind": "cgra_grid",
//!                 "performance": { "throughput": 1, "latency": 500 },
//!                 "resources": { "rows": 16, "cols": 16 } },
//!   "schedule": "ad",
//!   "io": [],
//!   "search": { "budget": 50, "doe": 10, "seed": 0 }
//! }
//! ```

mod schedule;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schedule::{parse_schedule, ScheduleError, ScheduleExpr};
pub use validate::{validate_spec, DiagCode, Diagnostic, Severity};

pub const DEFAULT_BUDGET: usize = 50;
pub const DEFAULT_DOE: usize = 10;
pub const DEFAULT_SEED: u64 = 0;

/// Name reserved for raw packet features in io bindings.
pub const FEATURES_SOURCE: &str = "features";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    VMeasure,
}

impl Metric {
    pub fn supports(self, algorithm: Algorithm) -> bool {
        match self {
            Metric::F1 => matches!(algorithm, Algorithm::Dnn | Algorithm::Svm),
            Metric::VMeasure => algorithm == Algorithm::Kmeans,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::F1 => "f1",
            Metric::VMeasure => "v_measure",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dnn,
    Kmeans,
    Svm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Dnn, Algorithm::Kmeans, Algorithm::Svm];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dnn => "dnn",
            Algorithm::Kmeans => "kmeans",
            Algorithm::Svm => "svm",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dnn" => Ok(Algorithm::Dnn),
            "kmeans" => Ok(Algorithm::Kmeans),
            "svm" => Ok(Algorithm::Svm),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub optimization_metric: Metric,
    /// Empty means every algorithm compatible with the metric.
    #[serde(default, alias = "algorithm", skip_serializing_if = "Vec::is_empty")]
    pub algorithms: Vec<Algorithm>,
    /// Dataset descriptor path, relative to the directory of the pipeline file.
    pub dataset: String,
    /// Declared throughput requirement in Gpkt/s; defaults to the platform floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
}

impl ModelSpec {
    /// Algorithms this model may use, after applying the metric filter.
    pub fn candidate_algorithms(&self) -> Vec<Algorithm> {
        let listed: &[Algorithm] = if self.algorithms.is_empty() {
            &Algorithm::ALL
        } else {
            &self.algorithms
        };
        listed
            .iter()
            .copied()
            .filter(|a| self.optimization_metric.supports(*a))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformKind {
    CgraGrid,
    MatPipeline,
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlatformKind::CgraGrid => "cgra_grid",
            PlatformKind::MatPipeline => "mat_pipeline",
        })
    }
}

/// Resource section of a platform. Grid dimensions are counted per unit type:
/// a 16x16 grid provides 256 CUs and, separately, 256 MUs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlatformResources {
    Cgra(CgraResources),
    Mat(MatResources),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgraResources {
    pub cu_rows: u64,
    pub cu_cols: u64,
    pub mu_rows: u64,
    pub mu_cols: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanes_per_cu: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words_per_mu: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_ghz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatResources {
    pub num_mats: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_latency_ns: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlatformSpec {
    pub kind: PlatformKind,
    /// Gpkt/s
    pub throughput_floor: f64,
    /// ns
    pub latency_ceiling: f64,
    pub resources: PlatformResources,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum IoSource {
    Model {
        name: String,
        output: usize,
    },
    /// Raw packet feature passed straight through.
    Features {
        index: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IoBinding {
    pub source: IoSource,
    pub consumer: String,
    pub input: usize,
}

impl fmt::Display for IoBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            IoSource::Model { name, output } => write!(f, "{name}.{output}")?,
            IoSource::Features { index } => write!(f, "{FEATURES_SOURCE}.{index}")?,
        }
        write!(f, " -> {}.{}", self.consumer, self.input)
    }
}

impl FromStr for IoBinding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lhs, rhs) = s
            .split_once("->")
            .ok_or_else(|| format!("io binding `{s}` lacks `->`"))?;
        let endpoint = |part: &str| -> Result<(String, usize), String> {
            let part = part.trim();
            let (name, idx) = part
                .rsplit_once('.')
                .ok_or_else(|| format!("io endpoint `{part}` must be `name.index`"))?;
            let idx = idx
                .parse::<usize>()
                .map_err(|_| format!("io endpoint `{part}` has a non-integer index"))?;
            if name.is_empty() {
                return Err(format!("io endpoint `{part}` has an empty name"));
            }
            Ok((name.to_string(), idx))
        };
        let (src, out) = endpoint(lhs)?;
        let (consumer, input) = endpoint(rhs)?;
        let source = if src == FEATURES_SOURCE {
            IoSource::Features { index: out }
        } else {
            IoSource::Model { name: src, output: out }
        };
        Ok(IoBinding {
            source,
            consumer,
            input,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IoMapping {
    pub bindings: Vec<IoBinding>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_doe")]
    pub doe: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_doe() -> usize {
    DEFAULT_DOE
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            budget: DEFAULT_BUDGET,
            doe: DEFAULT_DOE,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSpec {
    pub models: Vec<ModelSpec>,
    pub platform: PlatformSpec,
    pub schedule: ScheduleExpr,
    pub io: IoMapping,
    pub search: SearchSettings,
}

impl PipelineSpec {
    pub fn model(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Declared throughput for a model, falling back to the platform floor.
    pub fn declared_throughput(&self, model: &ModelSpec) -> f64 {
        model.throughput.unwrap_or(self.platform.throughput_floor)
    }

    /// Canonical text form; parsing it yields an identical spec.
    pub fn to_text(&self) -> String {
        let raw = RawSpec {
            models: self.models.clone(),
            platform: RawPlatform {
                kind: self.platform.kind,
                performance: RawPerformance {
                    throughput: self.platform.throughput_floor,
                    latency: self.platform.latency_ceiling,
                },
                resources: RawResources::from(&self.platform.resources),
            },
            schedule: Some(self.schedule.to_string()),
            io: self.io.bindings.iter().map(|b| b.to_string()).collect(),
            search: self.search,
        };
        let mut text = serde_json::to_string_pretty(&raw).expect("spec serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Structure(String),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("invalid spec: {}", first_error(.0))]
    Invalid(Vec<Diagnostic>),
}

fn first_error(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.clone())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    models: Vec<ModelSpec>,
    platform: RawPlatform,
    #[serde(default)]
    schedule: Option<String>,
    #[serde(default)]
    io: Vec<String>,
    #[serde(default)]
    search: SearchSettings,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlatform {
    kind: PlatformKind,
    performance: RawPerformance,
    resources: RawResources,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerformance {
    throughput: f64,
    latency: f64,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResources {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cu_rows: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cu_cols: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_rows: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_cols: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lanes_per_cu: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    words_per_mu: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_mats: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage_latency_ns: Option<f64>,
}

impl From<&PlatformResources> for RawResources {
    fn from(res: &PlatformResources) -> Self {
        match res {
            PlatformResources::Cgra(c) => RawResources {
                cu_rows: Some(c.cu_rows),
                cu_cols: Some(c.cu_cols),
                mu_rows: Some(c.mu_rows),
                mu_cols: Some(c.mu_cols),
                lanes_per_cu: c.lanes_per_cu,
                words_per_mu: c.words_per_mu,
                clock_ghz: c.clock_ghz,
                ..Default::default()
            },
            PlatformResources::Mat(m) => RawResources {
                num_mats: Some(m.num_mats),
                line_rate: m.line_rate,
                stage_latency_ns: m.stage_latency_ns,
                ..Default::default()
            },
        }
    }
}

impl RawResources {
    fn into_resources(self, kind: PlatformKind) -> Result<PlatformResources, SpecError> {
        match kind {
            PlatformKind::CgraGrid => {
                if self.num_mats.is_some() || self.line_rate.is_some() || self.stage_latency_ns.is_some() {
                    return Err(SpecError::Structure(
                        "MAT resource keys are not valid for a cgra_grid platform".into(),
                    ));
                }
                let pick = |specific: Option<u64>, shared: Option<u64>, name: &str| {
                    specific
                        .or(shared)
                        .ok_or_else(|| SpecError::Structure(format!("cgra_grid resources missing `{name}`")))
                };
                Ok(PlatformResources::Cgra(CgraResources {
                    cu_rows: pick(self.cu_rows, self.rows, "rows")?,
                    cu_cols: pick(self.cu_cols, self.cols, "cols")?,
                    mu_rows: pick(self.mu_rows, self.rows, "rows")?,
                    mu_cols: pick(self.mu_cols, self.cols, "cols")?,
                    lanes_per_cu: self.lanes_per_cu,
                    words_per_mu: self.words_per_mu,
                    clock_ghz: self.clock_ghz,
                }))
            }
            PlatformKind::MatPipeline => {
                let grid_keys = [
                    self.rows,
                    self.cols,
                    self.cu_rows,
                    self.cu_cols,
                    self.mu_rows,
                    self.mu_cols,
                    self.lanes_per_cu,
                    self.words_per_mu,
                ];
                if grid_keys.iter().any(Option::is_some) || self.clock_ghz.is_some() {
                    return Err(SpecError::Structure(
                        "grid resource keys are not valid for a mat_pipeline platform".into(),
                    ));
                }
                let num_mats = self
                    .num_mats
                    .ok_or_else(|| SpecError::Structure("mat_pipeline resources missing `num_mats`".into()))?;
                Ok(PlatformResources::Mat(MatResources {
                    num_mats,
                    line_rate: self.line_rate,
                    stage_latency_ns: self.stage_latency_ns,
                }))
            }
        }
    }
}

/// Parses a spec without running validation. Syntax, unknown keys, unknown
/// enum values and schedule-grammar errors are still reported.
pub fn parse_spec_unvalidated(text: &str) -> Result<PipelineSpec, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| SpecError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let resources = raw.platform.resources.into_resources(raw.platform.kind)?;
    let platform = PlatformSpec {
        kind: raw.platform.kind,
        throughput_floor: raw.platform.performance.throughput,
        latency_ceiling: raw.platform.performance.latency,
        resources,
    };
    if raw.models.is_empty() {
        return Err(SpecError::Invalid(vec![Diagnostic::error(
            DiagCode::NoModels,
            "no models declared",
        )]));
    }
    let names: Vec<String> = raw.models.iter().map(|m| m.name.clone()).collect();
    let schedule = match raw.schedule {
        Some(text) => parse_schedule(&text, &names)?,
        None if names.len() == 1 => ScheduleExpr::Leaf(names[0].clone()),
        None => {
            return Err(SpecError::Structure(
                "`schedule` is required when more than one model is declared".into(),
            ))
        }
    };
    let bindings = raw
        .io
        .iter()
        .map(|s| s.parse::<IoBinding>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(SpecError::Structure)?;
    Ok(PipelineSpec {
        models: raw.models,
        platform,
        schedule,
        io: IoMapping { bindings },
        search: raw.search,
    })
}

/// Parses a standalone platform object (the `platform` section of a spec),
/// used as a target descriptor file.
pub fn parse_platform(text: &str) -> Result<PlatformSpec, SpecError> {
    let raw: RawPlatform = serde_json::from_str(text).map_err(|e| SpecError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let resources = raw.resources.into_resources(raw.kind)?;
    Ok(PlatformSpec {
        kind: raw.kind,
        throughput_floor: raw.performance.throughput,
        latency_ceiling: raw.performance.latency,
        resources,
    })
}

/// Parses and validates a spec. Any error-severity diagnostic fails the parse.
pub fn parse_spec(text: &str) -> Result<PipelineSpec, SpecError> {
    let spec = parse_spec_unvalidated(text)?;
    let diags = validate_spec(&spec);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(SpecError::Invalid(diags));
    }
    Ok(spec)
}
