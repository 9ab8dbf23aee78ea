//! Feasibility-constrained Bayesian optimization: a uniform design-of-
//! experiments phase, then iterations that fit a random-forest surrogate and
//! pick the candidate maximizing expected improvement times probability of
//! feasibility.

pub mod forest;
pub mod space;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::backends::{FeasibilityVerdict, PerfReport, ResourceReport};
use crate::frontend::{Algorithm, PlatformKind, SearchSettings};
use crate::seeded_rng;

pub use forest::{fit_forest, predict, Prediction, SurrogateForest};
pub use space::{
    build_design_space, dnn_hidden_widths, minimal_shape, prune_algorithms, sample_uniform, Configuration, DesignSpace,
    ParamKind, ParamValue, Parameter,
};

/// Candidates scored per acquisition step.
pub const POOL_SIZE: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("design space: {0}")]
    Space(String),
    #[error("{algorithm} is not supported on {kind}")]
    Unsupported { algorithm: Algorithm, kind: PlatformKind },
    #[error("no feasible algorithm for this platform and constraints")]
    NoFeasibleAlgorithm,
    #[error("surrogate: {0}")]
    Surrogate(String),
    #[error("search settings: need budget >= doe >= 1, got budget {budget}, doe {doe}")]
    Settings { budget: usize, doe: usize },
}

/// What an evaluator reports for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Held-out metric; absent when the model was not (or could not be) trained.
    pub objective: Option<f64>,
    pub resources: Option<ResourceReport>,
    pub perf: Option<PerfReport>,
    pub verdict: FeasibilityVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub configuration: Configuration,
    pub objective: Option<f64>,
    pub feasible: bool,
    pub resources: Option<ResourceReport>,
    pub perf: Option<PerfReport>,
    pub slacks: IndexMap<String, f64>,
}

impl Observation {
    /// Builds an observation from an evaluation. A feasible design whose
    /// training produced no objective is recorded with a failing `trained`
    /// slack so that feasibility still means "all slacks >= 0".
    pub fn from_evaluation(configuration: Configuration, eval: Evaluation) -> Observation {
        let mut slacks = eval.verdict.slacks;
        if eval.objective.is_none() && slacks.values().all(|&s| s >= 0.0) {
            slacks.insert("trained".into(), -1.0);
        }
        let feasible = slacks.values().all(|&s| s >= 0.0);
        Observation {
            configuration,
            objective: eval.objective,
            feasible,
            resources: eval.resources,
            perf: eval.perf,
            slacks,
        }
    }

    /// Evaluator failure: infeasible, no objective.
    pub fn failed(configuration: Configuration, reason: &str) -> Observation {
        Observation::from_evaluation(
            configuration,
            Evaluation {
                objective: None,
                resources: None,
                perf: None,
                verdict: FeasibilityVerdict::unbuildable(reason),
            },
        )
    }

    /// Observation carrying only an objective and a feasibility flag.
    pub fn bare(configuration: Configuration, objective: Option<f64>, feasible: bool) -> Observation {
        let mut slacks = IndexMap::new();
        slacks.insert("constraint".to_string(), if feasible { 0.0 } else { -1.0 });
        Observation {
            configuration,
            objective,
            feasible,
            resources: None,
            perf: None,
            slacks,
        }
    }

    fn usable(&self) -> Option<f64> {
        if self.feasible {
            self.objective
        } else {
            None
        }
    }
}

/// Expected improvement of `N(mean, variance)` over `best` when maximizing.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = mean - best;
    if sigma == 0.0 {
        return gap.max(0.0);
    }
    let n = Normal::standard();
    let z = gap / sigma;
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// Index of the largest score; ties go to the earliest.
fn first_argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub struct OptimizerState {
    pub history: Vec<Observation>,
    /// Index into `history` of the best feasible observation.
    pub best_feasible: Option<usize>,
    pub trace: RegretTrace,
    pub rng: crate::Rng,
}

impl OptimizerState {
    pub fn new(seed: u64) -> OptimizerState {
        OptimizerState {
            history: Vec::new(),
            best_feasible: None,
            trace: RegretTrace::default(),
            rng: seeded_rng(seed),
        }
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    pub fn best(&self) -> Option<&Observation> {
        self.best_feasible.map(|i| &self.history[i])
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best().and_then(|o| o.objective)
    }

    /// Appends an observation and its trace row. Strict improvement is
    /// required to replace the incumbent, so earlier points win ties.
    pub fn record(&mut self, obs: Observation) {
        if let Some(y) = obs.usable() {
            if self.best_value().is_none_or(|b| y > b) {
                self.best_feasible = Some(self.history.len());
            }
        }
        self.history.push(obs);
        let obs = self.history.last().expect("just pushed");
        self.trace
            .rows
            .push(TraceRow::new(self.history.len(), obs, self.best_value()));
    }
}

/// Chooses the next configuration. Without a fitted surrogate this is a
/// uniform draw. Otherwise a pool of uniform candidates is scored by
/// `EI * p_feasible` and the first maximizer wins. When the regression forest
/// or an incumbent is missing, `p_feasible` alone is used; when every score
/// is zero, plain EI (then pool order) decides, so the search never stalls.
pub fn suggest_next(
    state: &mut OptimizerState,
    space: &DesignSpace,
    forest: Option<&SurrogateForest>,
) -> Configuration {
    let Some(forest) = forest else {
        return space.sample(&mut state.rng);
    };
    let pool = sample_uniform(space, POOL_SIZE, &mut state.rng);
    let best = state.best_value();
    let preds: Vec<Prediction> = pool.iter().map(|x| predict(forest, space, x)).collect();
    let ei: Vec<f64> = preds
        .iter()
        .map(|p| match (p.mean, p.variance, best) {
            (Some(m), Some(v), Some(b)) => expected_improvement(m, v, b),
            _ => 0.0,
        })
        .collect();
    let informed = forest.regression.is_some() && best.is_some();
    let acq: Vec<f64> = preds
        .iter()
        .zip(&ei)
        .map(|(p, e)| if informed { e * p.p_feasible } else { p.p_feasible })
        .collect();
    let pick = if acq.iter().any(|&a| a > 0.0) {
        first_argmax(&acq)
    } else if ei.iter().any(|&e| e > 0.0) {
        first_argmax(&ei)
    } else {
        Some(0)
    };
    pool.into_iter().nth(pick.unwrap_or(0)).expect("pool is non-empty")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub history: Vec<Observation>,
    pub best_feasible: Option<usize>,
    pub trace: RegretTrace,
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&Observation> {
        self.best_feasible.map(|i| &self.history[i])
    }
}

/// Runs `settings.doe` uniform evaluations (concurrently, merged in sample
/// order) followed by `budget - doe` sequential surrogate-guided iterations.
/// Evaluator errors are recorded as infeasible observations.
pub fn run_search<F>(settings: &SearchSettings, space: &DesignSpace, evaluator: F) -> Result<SearchOutcome, SearchError>
where
    F: Fn(&Configuration) -> Result<Evaluation, String> + Sync,
{
    if settings.doe < 1 || settings.budget < settings.doe {
        return Err(SearchError::Settings {
            budget: settings.budget,
            doe: settings.doe,
        });
    }
    let evaluate = |x: Configuration| match evaluator(&x) {
        Ok(e) => Observation::from_evaluation(x, e),
        Err(reason) => Observation::failed(x, &reason),
    };
    let mut state = OptimizerState::new(settings.seed);
    let doe = sample_uniform(space, settings.doe, &mut state.rng);
    let observed: Vec<Observation> = doe.into_par_iter().map(evaluate).collect();
    for obs in observed {
        state.record(obs);
    }
    while state.iteration() < settings.budget {
        let forest = fit_forest(&state.history, space, &mut state.rng).ok();
        let x = suggest_next(&mut state, space, forest.as_ref());
        let obs = evaluate(x);
        state.record(obs);
    }
    Ok(SearchOutcome {
        history: state.history,
        best_feasible: state.best_feasible,
        trace: state.trace,
    })
}

pub const TRACE_HEADER: &str = "iteration,objective,feasible,best_so_far,cus,mus,mats,throughput_gpps,latency_ns";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: Option<f64>,
    pub feasible: bool,
    pub best_so_far: Option<f64>,
    pub cus: Option<u64>,
    pub mus: Option<u64>,
    pub mats: Option<u64>,
    pub throughput_gpps: Option<f64>,
    pub latency_ns: Option<f64>,
}

impl TraceRow {
    fn new(iteration: usize, obs: &Observation, best_so_far: Option<f64>) -> TraceRow {
        let res = obs.resources.as_ref();
        let grid = res.is_some_and(|r| r.kind == PlatformKind::CgraGrid);
        TraceRow {
            iteration,
            objective: obs.objective,
            feasible: obs.feasible,
            best_so_far,
            cus: res.filter(|_| grid).map(|r| r.cus),
            mus: res.filter(|_| grid).map(|r| r.mus),
            mats: res.filter(|_| !grid).map(|r| r.mats),
            throughput_gpps: obs.perf.map(|p| p.throughput_gpps),
            latency_ns: obs.perf.map(|p| p.latency_ns),
        }
    }
}

/// Per-iteration objective, feasibility and incumbent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
}

impl RegretTrace {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("trace rows serialize");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8");
        format!("{TRACE_HEADER}\n{body}")
    }

    pub fn from_csv(text: &str) -> Result<RegretTrace, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
        Ok(RegretTrace { rows })
    }

    /// True when `best_so_far`, once present, never decreases or disappears.
    pub fn is_monotone(&self) -> bool {
        let mut last: Option<f64> = None;
        for row in &self.rows {
            match (last, row.best_so_far) {
                (Some(_), None) => return false,
                (Some(a), Some(b)) if b < a => return false,
                _ => {}
            }
            last = row.best_so_far.or(last);
        }
        true
    }
}
