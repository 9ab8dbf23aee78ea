//! Multi-model composition: throughput/latency propagation over the
//! schedule, resource aggregation, cross-model consistency, and fusion of
//! two neural models that share most of their features.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{FeasibilityVerdict, PerfReport, ResourceReport, Target};
use crate::data::{feature_overlap, Dataset};
use crate::frontend::{Algorithm, Metric, ModelSpec, PlatformSpec, ScheduleExpr};
use crate::models::mlp::{accumulate_gradients, argmax, sgd_step, trunk_forward};
use crate::models::{classification_score, Activation, Dense, MetricReport, MlpConfig, MlpModel, ModelError};
use crate::seeded_rng;

pub const DEFAULT_FUSION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("cannot aggregate reports for different target kinds")]
    MixedKinds,
    #[error("schedule names `{0}` but no rates were given for it")]
    MissingModel(String),
}

/// Operating rate of one model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRates {
    /// Declared throughput, Gpkt/s.
    pub throughput: f64,
    pub latency_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    /// Throughput each model must run at once its chains are taken into account.
    pub effective_throughput: IndexMap<String, f64>,
    /// Sum along `Seq`, max across `Par`.
    pub pipeline_latency_ns: f64,
    /// Models whose effective throughput fell below their declared value.
    pub flagged: Vec<String>,
}

fn subtree_min(e: &ScheduleExpr, rates: &IndexMap<String, ModelRates>) -> Result<f64, ComposeError> {
    match e {
        ScheduleExpr::Leaf(n) => rates
            .get(n)
            .map(|r| r.throughput)
            .ok_or_else(|| ComposeError::MissingModel(n.clone())),
        ScheduleExpr::Seq(a, b) | ScheduleExpr::Par(a, b) => Ok(subtree_min(a, rates)?.min(subtree_min(b, rates)?)),
    }
}

/// A `Seq` joins every model beneath it into one connected chain, so they all
/// run at that chain's slowest rate. `Par` siblings stay independent unless a
/// `Seq` above them joins them.
fn assign(
    e: &ScheduleExpr,
    rates: &IndexMap<String, ModelRates>,
    out: &mut IndexMap<String, f64>,
) -> Result<(), ComposeError> {
    match e {
        ScheduleExpr::Leaf(n) => {
            let own = rates
                .get(n)
                .ok_or_else(|| ComposeError::MissingModel(n.clone()))?
                .throughput;
            out.insert(n.clone(), own);
        }
        ScheduleExpr::Seq(..) => {
            let chain = subtree_min(e, rates)?;
            for n in e.leaves() {
                out.insert(n.to_string(), chain);
            }
        }
        ScheduleExpr::Par(a, b) => {
            assign(a, rates, out)?;
            assign(b, rates, out)?;
        }
    }
    Ok(())
}

fn latency(e: &ScheduleExpr, rates: &IndexMap<String, ModelRates>) -> Result<f64, ComposeError> {
    match e {
        ScheduleExpr::Leaf(n) => rates
            .get(n)
            .map(|r| r.latency_ns)
            .ok_or_else(|| ComposeError::MissingModel(n.clone())),
        ScheduleExpr::Seq(a, b) => Ok(latency(a, rates)? + latency(b, rates)?),
        ScheduleExpr::Par(a, b) => Ok(latency(a, rates)?.max(latency(b, rates)?)),
    }
}

/// Every model's effective throughput is the minimum declared throughput
/// over the connected part of the schedule DAG it belongs to. This is the
/// fixed point of "a model runs no faster than anything on a path through
/// it", so applying it twice changes nothing.
pub fn propagate_constraints(
    schedule: &ScheduleExpr,
    rates: &IndexMap<String, ModelRates>,
) -> Result<Propagation, ComposeError> {
    let mut effective = IndexMap::new();
    assign(schedule, rates, &mut effective)?;
    let flagged = effective
        .iter()
        .filter(|(n, &t)| t < rates[n.as_str()].throughput)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(Propagation {
        effective_throughput: effective,
        pipeline_latency_ns: latency(schedule, rates)?,
        flagged,
    })
}

/// Element-wise sum with no glue overhead; the time-multiplex factor is
/// recomputed from the summed CU demand.
pub fn aggregate_resources(parts: &[ResourceReport], target: &Target) -> Result<ResourceReport, ComposeError> {
    let kind = target.kind();
    if parts.iter().any(|p| p.kind != kind) {
        return Err(ComposeError::MixedKinds);
    }
    let mut total = ResourceReport::zero(kind);
    for p in parts {
        total.cu_demand += p.cu_demand;
        total.mus += p.mus;
        total.mats += p.mats;
    }
    total.cus = total.cu_demand;
    if let Target::Cgra(t) = target {
        let cap = t.cu_capacity();
        if total.cu_demand > cap {
            total.multiplex = total.cu_demand.div_ceil(cap.max(1));
            total.cus = cap;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedPart {
    pub resources: ResourceReport,
    pub perf: PerfReport,
    /// Throughput the model is required to sustain on its own.
    pub required_throughput: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedPipeline {
    #[serde(skip)]
    pub schedule: Option<ScheduleExpr>,
    pub parts: IndexMap<String, ComposedPart>,
    pub aggregate: ResourceReport,
    pub perf: PerfReport,
    pub propagation: Propagation,
    pub verdict: FeasibilityVerdict,
}

/// Propagates, aggregates and checks a set of per-model results.
pub fn compose(
    schedule: &ScheduleExpr,
    parts: IndexMap<String, ComposedPart>,
    platform: &PlatformSpec,
) -> Result<ComposedPipeline, ComposeError> {
    let rates: IndexMap<String, ModelRates> = parts
        .iter()
        .map(|(n, p)| {
            (
                n.clone(),
                ModelRates {
                    throughput: p.perf.throughput_gpps,
                    latency_ns: p.perf.latency_ns,
                },
            )
        })
        .collect();
    let propagation = propagate_constraints(schedule, &rates)?;
    let target = Target::from_platform(platform);
    let reports = schedule
        .leaves()
        .iter()
        .map(|n| {
            parts
                .get(*n)
                .map(|p| p.resources.clone())
                .ok_or_else(|| ComposeError::MissingModel(n.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate_resources(&reports, &target)?;
    let mut throughput = propagation
        .effective_throughput
        .values()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if let Target::Cgra(t) = &target {
        throughput = throughput.min(t.clock_ghz / aggregate.multiplex as f64);
    }
    let perf = PerfReport {
        throughput_gpps: throughput,
        latency_ns: propagation.pipeline_latency_ns,
    };
    let mut composed = ComposedPipeline {
        schedule: Some(schedule.clone()),
        parts,
        aggregate,
        perf,
        propagation,
        verdict: FeasibilityVerdict::from_slacks(IndexMap::new()),
    };
    composed.verdict = check_cross_model_consistency(&composed, platform);
    Ok(composed)
}

/// Infeasible iff aggregate resources exceed capacity, the pipeline misses
/// the platform's floor or ceiling, or some model's effective throughput is
/// below what it is required to sustain.
pub fn check_cross_model_consistency(composed: &ComposedPipeline, platform: &PlatformSpec) -> FeasibilityVerdict {
    let target = Target::from_platform(platform);
    let mut slacks = IndexMap::new();
    match &target {
        Target::Cgra(t) => {
            slacks.insert(
                "cus".to_string(),
                t.cu_capacity() as f64 - composed.aggregate.cus as f64,
            );
            slacks.insert(
                "mus".to_string(),
                t.mu_capacity() as f64 - composed.aggregate.mus as f64,
            );
        }
        Target::Mat(t) => {
            slacks.insert("mats".to_string(), t.num_mats as f64 - composed.aggregate.mats as f64);
        }
    }
    slacks.insert(
        "throughput".to_string(),
        composed.perf.throughput_gpps - platform.throughput_floor,
    );
    slacks.insert(
        "latency".to_string(),
        platform.latency_ceiling - composed.perf.latency_ns,
    );
    for (name, part) in &composed.parts {
        let eff = composed
            .propagation
            .effective_throughput
            .get(name)
            .copied()
            .unwrap_or(part.perf.throughput_gpps);
        slacks.insert(format!("{name}.throughput"), eff - part.required_throughput);
    }
    FeasibilityVerdict::from_slacks(slacks)
}

/// JSON mirror of the schedule tree with per-model figures at the leaves.
pub fn composition_json(composed: &ComposedPipeline) -> Value {
    fn walk(e: &ScheduleExpr, c: &ComposedPipeline) -> Value {
        match e {
            ScheduleExpr::Leaf(n) => {
                let part = &c.parts[n.as_str()];
                json!({
                    "model": n,
                    "effective_throughput_gpps": c.propagation.effective_throughput.get(n),
                    "resources": part.resources,
                    "perf": part.perf,
                })
            }
            ScheduleExpr::Seq(a, b) => json!({ "seq": [walk(a, c), walk(b, c)] }),
            ScheduleExpr::Par(a, b) => json!({ "par": [walk(a, c), walk(b, c)] }),
        }
    }
    let tree = composed.schedule.as_ref().map_or(Value::Null, |s| walk(s, composed));
    json!({
        "tree": tree,
        "aggregate": composed.aggregate,
        "perf": composed.perf,
        "flagged": composed.propagation.flagged,
        "verdict": composed.verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub models: (String, String),
    pub overlap: f64,
    /// Sorted, duplicate-free union of both feature sets.
    pub features: Vec<String>,
    /// Output head per task: (model name, class count).
    pub heads: Vec<(String, usize)>,
}

/// Plans a shared-trunk model for two dnn/F1 models whose datasets overlap
/// by at least `threshold` (Jaccard over feature names).
pub fn plan_fusion(a: (&ModelSpec, &Dataset), b: (&ModelSpec, &Dataset), threshold: f64) -> Option<FusionPlan> {
    let eligible =
        |m: &ModelSpec| m.optimization_metric == Metric::F1 && m.candidate_algorithms().contains(&Algorithm::Dnn);
    if !eligible(a.0) || !eligible(b.0) {
        return None;
    }
    let overlap = feature_overlap(a.1, b.1);
    if overlap < threshold {
        return None;
    }
    let mut features: Vec<String> = a.1.feature_names.iter().chain(&b.1.feature_names).cloned().collect();
    features.sort();
    features.dedup();
    Some(FusionPlan {
        models: (a.0.name.clone(), b.0.name.clone()),
        overlap,
        features,
        heads: vec![
            (a.0.name.clone(), a.1.num_classes()),
            (b.0.name.clone(), b.1.num_classes()),
        ],
    })
}

/// Shared trunk with one softmax head per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedMlp {
    pub features: Vec<String>,
    pub activation: Activation,
    pub trunk: Vec<Dense>,
    pub heads: Vec<Dense>,
}

impl FusedMlp {
    pub fn param_count(&self) -> usize {
        self.trunk.iter().chain(&self.heads).map(Dense::param_count).sum()
    }

    /// Layer widths with the heads stacked into one output layer.
    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.features.len()];
        t.extend(self.trunk.iter().map(|l| l.outputs));
        t.push(self.heads.iter().map(|h| h.outputs).sum());
        t
    }

    /// Equivalent single-output model whose output layer stacks the heads.
    pub fn to_mlp(&self) -> MlpModel {
        let inputs = self.heads[0].inputs;
        let outputs: usize = self.heads.iter().map(|h| h.outputs).sum();
        let mut stacked = Dense::zeros(inputs, outputs);
        stacked.weights = self.heads.iter().flat_map(|h| h.weights.iter().copied()).collect();
        stacked.bias = self.heads.iter().flat_map(|h| h.bias.iter().copied()).collect();
        MlpModel {
            activation: self.activation,
            hidden: self.trunk.clone(),
            output: stacked,
        }
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.outputs).collect()
    }

    /// Class for `task` given a row over the fused feature list.
    pub fn predict(&self, task: usize, row: &[f64]) -> usize {
        let a = trunk_forward(&self.trunk, self.activation, row);
        let mut out = Vec::new();
        self.heads[task].forward(&a, &mut out);
        argmax(&out)
    }
}

/// Row of `data` laid out over `features`, zero where the dataset lacks a column.
fn align(data: &Dataset, features: &[String]) -> Vec<Vec<f64>> {
    let map: Vec<Option<usize>> = features
        .iter()
        .map(|f| data.feature_names.iter().position(|g| g == f))
        .collect();
    data.rows()
        .map(|r| map.iter().map(|m| m.map_or(0.0, |c| r[c])).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedResult {
    pub model: FusedMlp,
    /// Test-split score per task.
    pub scores: Vec<MetricReport>,
}

/// Trains trunk and heads with strictly alternating batches (task 0, task 1,
/// ...); each batch updates the trunk and its own head only.
pub fn train_fused(plan: &FusionPlan, datasets: [&Dataset; 2], cfg: &MlpConfig) -> Result<FusedResult, ModelError> {
    cfg.validate()?;
    let aligned: Vec<Vec<Vec<f64>>> = datasets.iter().map(|d| align(d, &plan.features)).collect();
    let mut rng = seeded_rng(cfg.seed);
    let mut widths = vec![plan.features.len()];
    widths.extend(&cfg.neurons);
    let trunk: Vec<Dense> = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], &mut rng)).collect();
    let last = *widths.last().expect("non-empty");
    let heads: Vec<Dense> = plan
        .heads
        .iter()
        .map(|(_, c)| Dense::glorot(last, *c, &mut rng))
        .collect();
    let mut model = FusedMlp {
        features: plan.features.clone(),
        activation: cfg.activation,
        trunk,
        heads,
    };

    let mut shuffle_rng = seeded_rng(cfg.seed.wrapping_add(0x5eed));
    let mut orders: Vec<Vec<usize>> = datasets.iter().map(|d| d.train().to_vec()).collect();
    for epoch in 0..cfg.epochs {
        orders.iter_mut().for_each(|o| o.shuffle(&mut shuffle_rng));
        let batches: Vec<Vec<&[usize]>> = orders.iter().map(|o| o.chunks(cfg.batch_size).collect()).collect();
        let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
        for r in 0..rounds {
            for task in 0..2 {
                let Some(batch) = batches[task].get(r) else {
                    continue;
                };
                let mut trunk_g: Vec<Dense> = model.trunk.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
                let head = &model.heads[task];
                let mut head_g = Dense::zeros(head.inputs, head.outputs);
                let mut loss = 0.0;
                for &i in *batch {
                    let label = datasets[task].labels[i];
                    loss += accumulate_gradients(
                        &model.trunk,
                        head,
                        model.activation,
                        &aligned[task][i],
                        label,
                        &mut trunk_g,
                        &mut head_g,
                    );
                }
                if !loss.is_finite() {
                    return Err(ModelError::Diverged { epoch });
                }
                let lr = cfg.learning_rate / batch.len() as f64;
                for (l, g) in model.trunk.iter_mut().zip(&trunk_g) {
                    sgd_step(l, g, lr);
                }
                sgd_step(&mut model.heads[task], &head_g, lr);
            }
        }
    }
    let finite = model
        .trunk
        .iter()
        .chain(&model.heads)
        .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
    if !finite {
        return Err(ModelError::Diverged { epoch: cfg.epochs });
    }
    let mut scores = Vec::new();
    for task in 0..2 {
        let d = datasets[task];
        let preds: Vec<usize> = d
            .test()
            .iter()
            .map(|&i| model.predict(task, &aligned[task][i]))
            .collect();
        scores.push(classification_score(&preds, &d.labels_of(d.test()), d.num_classes())?);
    }
    Ok(FusedResult { model, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::CgraTarget;
    use crate::frontend::PlatformKind;

    fn rates(pairs: &[(&str, f64, f64)]) -> IndexMap<String, ModelRates> {
        pairs
            .iter()
            .map(|&(n, t, l)| {
                (
                    n.to_string(),
                    ModelRates {
                        throughput: t,
                        latency_ns: l,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn chain_takes_minimum() {
        let s = ScheduleExpr::seq(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b"));
        let p = propagate_constraints(&s, &rates(&[("a", 1.0, 1.0), ("b", 0.5, 1.0)])).unwrap();
        assert_eq!(p.effective_throughput["a"], 0.5);
        assert_eq!(p.effective_throughput["b"], 0.5);
        assert_eq!(p.flagged, vec!["a".to_string()]);
    }

    #[test]
    fn single_model_unchanged() {
        let p = propagate_constraints(&ScheduleExpr::leaf("m"), &rates(&[("m", 0.7, 4.0)])).unwrap();
        assert_eq!(p.effective_throughput["m"], 0.7);
        assert_eq!(p.pipeline_latency_ns, 4.0);
        assert!(p.flagged.is_empty());
    }

    #[test]
    fn par_then_seq_latency() {
        let s = ScheduleExpr::seq(
            ScheduleExpr::par(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b")),
            ScheduleExpr::leaf("c"),
        );
        let p = propagate_constraints(&s, &rates(&[("a", 1.0, 10.0), ("b", 1.0, 30.0), ("c", 1.0, 5.0)])).unwrap();
        assert_eq!(p.pipeline_latency_ns, 35.0);
    }

    #[test]
    fn parallel_branches_do_not_constrain_each_other() {
        let s = ScheduleExpr::par(
            ScheduleExpr::leaf("a"),
            ScheduleExpr::seq(ScheduleExpr::leaf("b"), ScheduleExpr::leaf("c")),
        );
        let p = propagate_constraints(&s, &rates(&[("a", 1.0, 1.0), ("b", 0.8, 1.0), ("c", 0.3, 1.0)])).unwrap();
        assert_eq!(p.effective_throughput["a"], 1.0);
        assert_eq!(p.effective_throughput["b"], 0.3);
        assert_eq!(p.effective_throughput["c"], 0.3);
    }

    #[test]
    fn shared_source_slows_its_other_branch() {
        // a feeds c at 0.3, so b only ever sees 0.3 from a
        let s = ScheduleExpr::seq(
            ScheduleExpr::leaf("a"),
            ScheduleExpr::par(ScheduleExpr::leaf("b"), ScheduleExpr::leaf("c")),
        );
        let p = propagate_constraints(&s, &rates(&[("a", 1.0, 1.0), ("b", 0.8, 1.0), ("c", 0.3, 1.0)])).unwrap();
        assert!(p.effective_throughput.values().all(|&t| t == 0.3));
    }

    #[test]
    fn aggregation() {
        let t = Target::Cgra(CgraTarget::default());
        let part = ResourceReport {
            kind: PlatformKind::CgraGrid,
            cus: 24,
            cu_demand: 24,
            mus: 24,
            mats: 0,
            multiplex: 1,
        };
        let agg = aggregate_resources(&vec![part.clone(); 4], &t).unwrap();
        assert_eq!((agg.cus, agg.mus, agg.multiplex), (96, 96, 1));
        let big = ResourceReport {
            cus: 200,
            cu_demand: 200,
            ..part
        };
        let agg = aggregate_resources(&[big.clone(), big], &t).unwrap();
        assert_eq!((agg.cus, agg.cu_demand, agg.multiplex), (256, 400, 2));
        assert_eq!(
            aggregate_resources(&[], &t).unwrap(),
            ResourceReport::zero(PlatformKind::CgraGrid)
        );
        let mat = ResourceReport::zero(PlatformKind::MatPipeline);
        assert_eq!(aggregate_resources(&[mat], &t), Err(ComposeError::MixedKinds));
    }
}
