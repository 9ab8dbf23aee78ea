use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::{IoSource, PipelineSpec, PlatformResources, FEATURES_SOURCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagCode {
    NoModels,
    DuplicateModel,
    ReservedName,
    MetricAlgorithmMismatch,
    NoCandidateAlgorithm,
    EmptyDataset,
    NonPositiveConstraint,
    ZeroResource,
    ScheduleUndeclared,
    ScheduleDuplicate,
    ModelNotScheduled,
    IoUnknownModel,
    IoOrder,
    IoDoubleBinding,
    BudgetZero,
    DoeZero,
    DoeNotBelowBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagCode,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: DiagCode, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
        }
    }

    pub fn warning(code: DiagCode, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message: message.into(),
        }
    }
}

/// Checks every spec invariant. Returns an empty list for a clean spec.
pub fn validate_spec(spec: &PipelineSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if spec.models.is_empty() {
        out.push(Diagnostic::error(DiagCode::NoModels, "no models declared"));
    }

    let mut names = HashSet::new();
    for m in &spec.models {
        if !names.insert(m.name.as_str()) {
            out.push(Diagnostic::error(
                DiagCode::DuplicateModel,
                format!("model `{}` declared more than once", m.name),
            ));
        }
        if m.name == FEATURES_SOURCE {
            out.push(Diagnostic::error(
                DiagCode::ReservedName,
                format!("model name `{FEATURES_SOURCE}` is reserved"),
            ));
        }
        for alg in &m.algorithms {
            if !m.optimization_metric.supports(*alg) {
                out.push(Diagnostic::error(
                    DiagCode::MetricAlgorithmMismatch,
                    format!(
                        "model `{}`: metric {} cannot score algorithm {}",
                        m.name, m.optimization_metric, alg
                    ),
                ));
            }
        }
        if m.candidate_algorithms().is_empty() && m.algorithms.iter().all(|a| m.optimization_metric.supports(*a)) {
            out.push(Diagnostic::error(
                DiagCode::NoCandidateAlgorithm,
                format!("model `{}` has no algorithm compatible with its metric", m.name),
            ));
        }
        if m.dataset.trim().is_empty() {
            out.push(Diagnostic::error(
                DiagCode::EmptyDataset,
                format!("model `{}` has no dataset", m.name),
            ));
        }
        if let Some(t) = m.throughput {
            if !(t > 0.0) {
                out.push(Diagnostic::error(
                    DiagCode::NonPositiveConstraint,
                    format!("model `{}` throughput must be > 0", m.name),
                ));
            }
        }
    }

    let p = &spec.platform;
    if !(p.throughput_floor > 0.0) {
        out.push(Diagnostic::error(
            DiagCode::NonPositiveConstraint,
            "platform throughput must be > 0",
        ));
    }
    if !(p.latency_ceiling > 0.0) {
        out.push(Diagnostic::error(
            DiagCode::NonPositiveConstraint,
            "platform latency must be > 0",
        ));
    }
    let counts: Vec<(&str, u64)> = match &p.resources {
        PlatformResources::Cgra(c) => {
            let mut v = vec![
                ("cu_rows", c.cu_rows),
                ("cu_cols", c.cu_cols),
                ("mu_rows", c.mu_rows),
                ("mu_cols", c.mu_cols),
            ];
            v.extend(c.lanes_per_cu.map(|x| ("lanes_per_cu", x)));
            v.extend(c.words_per_mu.map(|x| ("words_per_mu", x)));
            if let Some(clock) = c.clock_ghz {
                if !(clock > 0.0) {
                    out.push(Diagnostic::error(DiagCode::ZeroResource, "clock_ghz must be > 0"));
                }
            }
            v
        }
        PlatformResources::Mat(m) => {
            for (key, val) in [("line_rate", m.line_rate), ("stage_latency_ns", m.stage_latency_ns)] {
                if let Some(v) = val {
                    if !(v > 0.0) {
                        out.push(Diagnostic::error(DiagCode::ZeroResource, format!("{key} must be > 0")));
                    }
                }
            }
            vec![("num_mats", m.num_mats)]
        }
    };
    if p.kind != kind_of(&p.resources) {
        out.push(Diagnostic::error(
            DiagCode::ZeroResource,
            "platform resources do not match platform kind",
        ));
    }
    for (key, v) in counts {
        if v < 1 {
            out.push(Diagnostic::error(
                DiagCode::ZeroResource,
                format!("resource `{key}` must be >= 1"),
            ));
        }
    }

    let leaves = spec.schedule.leaves();
    let mut seen = HashSet::new();
    for leaf in &leaves {
        if !names.contains(leaf) {
            out.push(Diagnostic::error(
                DiagCode::ScheduleUndeclared,
                format!("schedule names undeclared model `{leaf}`"),
            ));
        }
        if !seen.insert(*leaf) {
            out.push(Diagnostic::error(
                DiagCode::ScheduleDuplicate,
                format!("model `{leaf}` scheduled more than once"),
            ));
        }
    }
    for m in &spec.models {
        if !seen.contains(m.name.as_str()) {
            out.push(Diagnostic::warning(
                DiagCode::ModelNotScheduled,
                format!("model `{}` is not scheduled", m.name),
            ));
        }
    }

    let mut bound: HashMap<(&str, usize), usize> = HashMap::new();
    for b in &spec.io.bindings {
        if !names.contains(b.consumer.as_str()) {
            out.push(Diagnostic::error(
                DiagCode::IoUnknownModel,
                format!("io binding `{b}` names unknown consumer"),
            ));
            continue;
        }
        if let IoSource::Model { name, .. } = &b.source {
            if !names.contains(name.as_str()) {
                out.push(Diagnostic::error(
                    DiagCode::IoUnknownModel,
                    format!("io binding `{b}` names unknown producer"),
                ));
                continue;
            }
            if !spec.schedule.precedes(name, &b.consumer) {
                out.push(Diagnostic::error(
                    DiagCode::IoOrder,
                    format!("io binding `{b}`: producer does not precede consumer in the schedule"),
                ));
            }
        }
        *bound.entry((b.consumer.as_str(), b.input)).or_default() += 1;
    }
    let mut doubles: Vec<_> = bound.into_iter().filter(|(_, n)| *n > 1).collect();
    doubles.sort();
    for ((consumer, input), n) in doubles {
        out.push(Diagnostic::error(
            DiagCode::IoDoubleBinding,
            format!("input {consumer}.{input} is bound {n} times"),
        ));
    }

    let s = &spec.search;
    if s.budget == 0 {
        out.push(Diagnostic::error(DiagCode::BudgetZero, "search budget must be >= 1"));
    }
    if s.doe == 0 {
        out.push(Diagnostic::error(DiagCode::DoeZero, "doe sample count must be >= 1"));
    }
    if s.doe >= s.budget && s.budget > 0 {
        out.push(Diagnostic::error(
            DiagCode::DoeNotBelowBudget,
            format!("doe samples ({}) must be below the search budget ({})", s.doe, s.budget),
        ));
    }
    out
}

fn kind_of(res: &PlatformResources) -> super::PlatformKind {
    match res {
        PlatformResources::Cgra(_) => super::PlatformKind::CgraGrid,
        PlatformResources::Mat(_) => super::PlatformKind::MatPipeline,
    }
}
