//! Analytic resource, throughput and latency models for the two target kinds
//! (CGRA grid of compute/memory units, and a pipeline of match-action
//! tables), feasibility verdicts, and the SVM feature-dropping fitter.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::frontend::{Algorithm, PlatformKind, PlatformResources, PlatformSpec};
use crate::models::{train_svm, ModelError, SvmConfig, SvmModel};

pub const DEFAULT_LANES_PER_CU: u64 = 16;
pub const DEFAULT_WORDS_PER_MU: u64 = 64;
pub const DEFAULT_CLOCK_GHZ: f64 = 1.0;
pub const DEFAULT_LINE_RATE: f64 = 1.0;
pub const DEFAULT_STAGE_LATENCY_NS: f64 = 1.0;
/// Double-buffered intermediate store per layer.
pub const BUFFER_MUS_PER_LAYER: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("estimate is for a {found} target but the constraints describe a {expected} platform")]
    KindMismatch {
        expected: PlatformKind,
        found: PlatformKind,
    },
    #[error("{algorithm} has no cost model on {kind}")]
    Unsupported { algorithm: Algorithm, kind: PlatformKind },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("MAT budget must be at least 1")]
    NoBudget,
    #[error("cannot fit: {features} feature(s) still need {features} MATs but only {budget} are available")]
    CannotFit { features: usize, budget: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgraTarget {
    pub cu_rows: u64,
    pub cu_cols: u64,
    pub mu_rows: u64,
    pub mu_cols: u64,
    pub lanes_per_cu: u64,
    pub words_per_mu: u64,
    pub clock_ghz: f64,
}

impl CgraTarget {
    /// Square grid with default cost constants.
    pub fn grid(rows: u64, cols: u64) -> CgraTarget {
        CgraTarget {
            cu_rows: rows,
            cu_cols: cols,
            mu_rows: rows,
            mu_cols: cols,
            lanes_per_cu: DEFAULT_LANES_PER_CU,
            words_per_mu: DEFAULT_WORDS_PER_MU,
            clock_ghz: DEFAULT_CLOCK_GHZ,
        }
    }

    pub fn cu_capacity(&self) -> u64 {
        self.cu_rows * self.cu_cols
    }

    pub fn mu_capacity(&self) -> u64 {
        self.mu_rows * self.mu_cols
    }
}

impl Default for CgraTarget {
    fn default() -> Self {
        CgraTarget::grid(16, 16)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatTarget {
    pub num_mats: u64,
    /// Gpkt/s
    pub line_rate: f64,
    pub stage_latency_ns: f64,
}

impl MatTarget {
    pub fn new(num_mats: u64) -> MatTarget {
        MatTarget {
            num_mats,
            line_rate: DEFAULT_LINE_RATE,
            stage_latency_ns: DEFAULT_STAGE_LATENCY_NS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    #[serde(rename = "cgra_grid")]
    Cgra(CgraTarget),
    #[serde(rename = "mat_pipeline")]
    Mat(MatTarget),
}

impl Target {
    pub fn from_platform(platform: &PlatformSpec) -> Target {
        match &platform.resources {
            PlatformResources::Cgra(c) => Target::Cgra(CgraTarget {
                cu_rows: c.cu_rows,
                cu_cols: c.cu_cols,
                mu_rows: c.mu_rows,
                mu_cols: c.mu_cols,
                lanes_per_cu: c.lanes_per_cu.unwrap_or(DEFAULT_LANES_PER_CU),
                words_per_mu: c.words_per_mu.unwrap_or(DEFAULT_WORDS_PER_MU),
                clock_ghz: c.clock_ghz.unwrap_or(DEFAULT_CLOCK_GHZ),
            }),
            PlatformResources::Mat(m) => Target::Mat(MatTarget {
                num_mats: m.num_mats,
                line_rate: m.line_rate.unwrap_or(DEFAULT_LINE_RATE),
                stage_latency_ns: m.stage_latency_ns.unwrap_or(DEFAULT_STAGE_LATENCY_NS),
            }),
        }
    }

    pub fn kind(&self) -> PlatformKind {
        match self {
            Target::Cgra(_) => PlatformKind::CgraGrid,
            Target::Mat(_) => PlatformKind::MatPipeline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub kind: PlatformKind,
    /// CUs occupied on the grid (capped at capacity when multiplexed).
    pub cus: u64,
    /// CUs the unfolded design would need.
    pub cu_demand: u64,
    pub mus: u64,
    pub mats: u64,
    /// Time-multiplex factor m.
    pub multiplex: u64,
}

impl ResourceReport {
    pub fn zero(kind: PlatformKind) -> ResourceReport {
        ResourceReport {
            kind,
            cus: 0,
            cu_demand: 0,
            mus: 0,
            mats: 0,
            multiplex: 1,
        }
    }

    /// CUs + MUs, the combined grid footprint.
    pub fn grid_units(&self) -> u64 {
        self.cus + self.mus
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub throughput_gpps: f64,
    pub latency_ns: f64,
}

/// Performance constraints a model must meet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub throughput_floor: f64,
    pub latency_ceiling: f64,
}

impl From<&PlatformSpec> for Constraints {
    fn from(p: &PlatformSpec) -> Self {
        Constraints {
            throughput_floor: p.throughput_floor,
            latency_ceiling: p.latency_ceiling,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// Named slacks; negative means violated.
    pub slacks: IndexMap<String, f64>,
}

impl FeasibilityVerdict {
    pub fn from_slacks(slacks: IndexMap<String, f64>) -> FeasibilityVerdict {
        let feasible = slacks.values().all(|&s| s >= 0.0);
        FeasibilityVerdict { feasible, slacks }
    }

    /// A configuration that could not be built at all.
    pub fn unbuildable(reason: &str) -> FeasibilityVerdict {
        let mut slacks = IndexMap::new();
        slacks.insert(reason.to_string(), -1.0);
        FeasibilityVerdict {
            feasible: false,
            slacks,
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// Per-layer breakdown used by the grid estimate and by code generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub chunks: u64,
    pub cus: u64,
    pub weight_mus: u64,
    pub buffer_mus: u64,
    /// Cycles per packet through this layer before multiplexing.
    pub cycles: u64,
}

pub fn layer_cost(n_in: u64, n_out: u64, target: &CgraTarget) -> LayerCost {
    let chunks = ceil_div(n_in, target.lanes_per_cu);
    LayerCost {
        chunks,
        cus: n_out * chunks,
        weight_mus: ceil_div(n_in * n_out, target.words_per_mu),
        buffer_mus: BUFFER_MUS_PER_LAYER,
        cycles: chunks + ceil_log2(n_in.min(target.lanes_per_cu)) + 2,
    }
}

fn multiplex_for(cu_demand: u64, capacity: u64) -> u64 {
    if cu_demand > capacity {
        ceil_div(cu_demand, capacity.max(1))
    } else {
        1
    }
}

/// Grid estimate for an MLP given its layer widths `[n0, .., nL]`.
pub fn estimate_cgra_mlp(
    topology: &[usize],
    target: &CgraTarget,
) -> Result<(ResourceReport, PerfReport), BackendError> {
    if topology.len() < 2 {
        return Err(BackendError::Topology(
            "need at least an input and an output width".into(),
        ));
    }
    if topology.contains(&0) {
        return Err(BackendError::Topology(format!("zero width in {topology:?}")));
    }
    let mut cu_demand = 0;
    let mut mus = 0;
    let mut cycles = 0;
    for w in topology.windows(2) {
        let c = layer_cost(w[0] as u64, w[1] as u64, target);
        cu_demand += c.cus;
        mus += c.weight_mus + c.buffer_mus;
        cycles += c.cycles;
    }
    let capacity = target.cu_capacity();
    let m = multiplex_for(cu_demand, capacity);
    let res = ResourceReport {
        kind: PlatformKind::CgraGrid,
        cus: if m > 1 { capacity } else { cu_demand },
        cu_demand,
        mus,
        mats: 0,
        multiplex: m,
    };
    let perf = PerfReport {
        throughput_gpps: target.clock_ghz / m as f64,
        latency_ns: (cycles * m) as f64 / target.clock_ghz,
    };
    Ok((res, perf))
}

fn mat_estimate(mats: u64, target: &MatTarget) -> (ResourceReport, PerfReport) {
    let res = ResourceReport {
        mats,
        ..ResourceReport::zero(PlatformKind::MatPipeline)
    };
    let perf = PerfReport {
        throughput_gpps: target.line_rate,
        latency_ns: mats as f64 * target.stage_latency_ns,
    };
    (res, perf)
}

/// One table per cluster.
pub fn estimate_mat_kmeans(k: usize, target: &MatTarget) -> (ResourceReport, PerfReport) {
    mat_estimate(k as u64, target)
}

/// One table per feature; no separate decision table.
pub fn estimate_mat_svm(num_features: usize, target: &MatTarget) -> (ResourceReport, PerfReport) {
    mat_estimate(num_features as u64, target)
}

/// Shape of a model as far as the cost models are concerned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelShape {
    Mlp { topology: Vec<usize> },
    Kmeans { k: usize },
    Svm { features: usize },
}

impl ModelShape {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelShape::Mlp { .. } => Algorithm::Dnn,
            ModelShape::Kmeans { .. } => Algorithm::Kmeans,
            ModelShape::Svm { .. } => Algorithm::Svm,
        }
    }
}

/// Dispatches to the matching cost model. Neural networks only have a grid
/// model; k-means and SVM only have table models.
pub fn estimate(shape: &ModelShape, target: &Target) -> Result<(ResourceReport, PerfReport), BackendError> {
    match (shape, target) {
        (ModelShape::Mlp { topology }, Target::Cgra(t)) => estimate_cgra_mlp(topology, t),
        (ModelShape::Kmeans { k }, Target::Mat(t)) => Ok(estimate_mat_kmeans(*k, t)),
        (ModelShape::Svm { features }, Target::Mat(t)) => Ok(estimate_mat_svm(*features, t)),
        (s, t) => Err(BackendError::Unsupported {
            algorithm: s.algorithm(),
            kind: t.kind(),
        }),
    }
}

/// Slacks are capacity minus usage per pool, throughput minus floor, and
/// ceiling minus latency.
pub fn check_feasibility(
    res: &ResourceReport,
    perf: &PerfReport,
    target: &Target,
    constraints: &Constraints,
) -> Result<FeasibilityVerdict, BackendError> {
    if res.kind != target.kind() {
        return Err(BackendError::KindMismatch {
            expected: target.kind(),
            found: res.kind,
        });
    }
    let mut slacks = IndexMap::new();
    match target {
        Target::Cgra(t) => {
            slacks.insert("cus".to_string(), t.cu_capacity() as f64 - res.cus as f64);
            slacks.insert("mus".to_string(), t.mu_capacity() as f64 - res.mus as f64);
        }
        Target::Mat(t) => {
            slacks.insert("mats".to_string(), t.num_mats as f64 - res.mats as f64);
        }
    }
    slacks.insert(
        "throughput".to_string(),
        perf.throughput_gpps - constraints.throughput_floor,
    );
    slacks.insert("latency".to_string(), constraints.latency_ceiling - perf.latency_ns);
    Ok(FeasibilityVerdict::from_slacks(slacks))
}

/// Like [`check_feasibility`] with the platform's own constraints.
pub fn check_against_platform(
    res: &ResourceReport,
    perf: &PerfReport,
    platform: &PlatformSpec,
) -> Result<FeasibilityVerdict, BackendError> {
    if res.kind != platform.kind {
        return Err(BackendError::KindMismatch {
            expected: platform.kind,
            found: res.kind,
        });
    }
    check_feasibility(
        res,
        perf,
        &Target::from_platform(platform),
        &Constraints::from(platform),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDropFit {
    pub model: SvmModel,
    /// Surviving column indices into the original dataset, ascending.
    pub kept: Vec<usize>,
    /// Dropped column indices in drop order.
    pub dropped: Vec<usize>,
}

fn train_std(data: &Dataset, col: usize) -> f64 {
    let rows = data.train();
    let n = rows.len().max(1) as f64;
    let mean = rows.iter().map(|&i| data.row(i)[col]).sum::<f64>() / n;
    (rows.iter().map(|&i| (data.row(i)[col] - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Trains on the current feature set; while the table estimate exceeds the
/// budget, drops the feature with the smallest `|w_i| * std_i` and retrains.
pub fn fit_svm_by_feature_dropping(
    data: &Dataset,
    cfg: &SvmConfig,
    target: &MatTarget,
) -> Result<FeatureDropFit, BackendError> {
    if target.num_mats < 1 {
        return Err(BackendError::NoBudget);
    }
    if data.width() == 0 {
        return Err(BackendError::Topology("dataset has no features".into()));
    }
    let mut kept: Vec<usize> = (0..data.width()).collect();
    let mut dropped = Vec::new();
    loop {
        let view = data.select_features(&kept);
        let model = train_svm(cfg, &view)?;
        let (res, _) = estimate_mat_svm(kept.len(), target);
        if res.mats <= target.num_mats {
            return Ok(FeatureDropFit { model, kept, dropped });
        }
        if kept.len() == 1 {
            return Err(BackendError::CannotFit {
                features: 1,
                budget: target.num_mats,
            });
        }
        let weakest = (0..kept.len())
            .map(|j| (j, model.weights[j].abs() * train_std(&view, j)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        dropped.push(kept.remove(weakest));
    }
}
