//! End-to-end orchestration: load a spec and its datasets, search each model,
//! rebuild the winners, emit code, compose, and write or verify bundles.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{
    check_feasibility, estimate, estimate_cgra_mlp, estimate_mat_kmeans, fit_svm_by_feature_dropping, CgraTarget,
    Constraints, FeasibilityVerdict, ModelShape, PerfReport, ResourceReport, Target,
};
use crate::codegen::{emit_cgra_mlp, emit_mat_kmeans, emit_mat_svm, GeneratedArtifact, Interpreter, QFormat};
use crate::composer::{
    compose, composition_json, plan_fusion, train_fused, ComposedPart, FusedMlp, FusionPlan, DEFAULT_FUSION_THRESHOLD,
};
use crate::data::{DataError, Dataset, DatasetDescriptor};
use crate::frontend::{
    parse_spec, Algorithm, Metric, ModelSpec, PipelineSpec, PlatformSpec, SearchSettings, SpecError,
};
use crate::models::{
    classification_score, predict_mlp, train_kmeans, train_mlp, v_measure, Activation, KMeansConfig, MetricReport,
    MlpConfig, SvmConfig, TrainedModel,
};
use crate::search::{
    build_design_space, dnn_hidden_widths, prune_algorithms, run_search, Configuration, Evaluation, Observation,
    SearchOutcome,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Training epochs for every dnn candidate.
pub const DNN_EPOCHS: usize = 20;
pub const KMEANS_MAX_ITERS: usize = 100;
/// Fixed-point format of emitted programs.
pub const BUNDLE_FORMAT: QFormat = QFormat::Q8_8;

pub const REPORT_FILE: &str = "report.json";
pub const PROGRAM_FILE: &str = "program.txt";
pub const WEIGHTS_FILE: &str = "weights.q88";
pub const TRACE_FILE: &str = "regret.csv";
pub const BEST_FILE: &str = "best.json";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model {model}: {source}")]
    Data { model: String, source: DataError },
    #[error("{0}")]
    Usage(String),
    #[error("model {model}: {message}")]
    Build { model: String, message: String },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed bundle: {0}")]
    Bundle(String),
}

impl DriverError {
    /// 1 for a model that could not be rebuilt, 2 for usage, spec and input errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Build { .. } => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Command-line values that shadow the search settings of a pipeline file.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub doe: Option<usize>,
}

impl Overrides {
    fn to_json(self) -> Value {
        let mut m = serde_json::Map::new();
        if let Some(s) = self.seed {
            m.insert("seed".into(), json!(s));
        }
        if let Some(b) = self.budget {
            m.insert("budget".into(), json!(b));
        }
        if let Some(d) = self.doe {
            m.insert("doe".into(), json!(d));
        }
        Value::Object(m)
    }
}

/// One model's dataset together with the hashes of everything it was read from.
pub struct ModelInput {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub provenance: Value,
}

/// A parsed spec with overrides applied and every dataset loaded.
pub struct Job {
    pub spec_path: PathBuf,
    pub spec_sha256: String,
    pub spec: PipelineSpec,
    pub settings: SearchSettings,
    pub overrides: Overrides,
    pub inputs: Vec<ModelInput>,
}

impl Job {
    pub fn load(spec_path: &Path, overrides: Overrides) -> Result<Job, DriverError> {
        let bytes = fs::read(spec_path).map_err(io_err(spec_path))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| DriverError::Usage(format!("{} is not UTF-8", spec_path.display())))?;
        let spec = parse_spec(&text)?;
        let settings = SearchSettings {
            budget: overrides.budget.unwrap_or(spec.search.budget),
            doe: overrides.doe.unwrap_or(spec.search.doe),
            seed: overrides.seed.unwrap_or(spec.search.seed),
        };
        if settings.doe < 1 || settings.budget < settings.doe {
            return Err(DriverError::Usage(format!(
                "need budget >= doe >= 1, got budget {} and doe {}",
                settings.budget, settings.doe
            )));
        }
        let base = spec_path.parent().unwrap_or(Path::new("."));
        let inputs = spec
            .models
            .iter()
            .map(|m| load_model_input(m, base))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Job {
            spec_path: spec_path.to_path_buf(),
            spec_sha256: sha256_hex(&bytes),
            spec,
            settings,
            overrides,
            inputs,
        })
    }

    fn manifest_head(&self, command: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
        m.insert("command".into(), json!(command));
        m.insert(
            "spec".into(),
            json!({ "path": self.spec_path.display().to_string(), "sha256": self.spec_sha256 }),
        );
        m.insert("seed".into(), json!(self.settings.seed));
        m.insert("budget".into(), json!(self.settings.budget));
        m.insert("doe".into(), json!(self.settings.doe));
        m.insert("overrides".into(), self.overrides.to_json());
        m
    }
}

fn load_model_input(model: &ModelSpec, base: &Path) -> Result<ModelInput, DriverError> {
    let data_err = |source| DriverError::Data {
        model: model.name.clone(),
        source,
    };
    let desc_path = base.join(&model.dataset);
    let desc_bytes = fs::read(&desc_path).map_err(io_err(&desc_path))?;
    let desc = DatasetDescriptor::from_json(&String::from_utf8_lossy(&desc_bytes)).map_err(data_err)?;
    let desc_base = desc_path.parent().unwrap_or(Path::new("."));
    let mut files = serde_json::Map::new();
    for f in desc.input_files(desc_base) {
        let bytes = fs::read(&f).map_err(io_err(&f))?;
        let name = f
            .file_name()
            .map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned());
        files.insert(name, json!(sha256_hex(&bytes)));
    }
    let data = desc.load(desc_base).map_err(data_err)?;
    let provenance = json!({ "descriptor_sha256": sha256_hex(&desc_bytes), "files": files });
    Ok(ModelInput {
        spec: model.clone(),
        data,
        provenance,
    })
}

/// A configuration turned into a (possibly untrained) model with its
/// estimates. Training is skipped when the estimate is already infeasible.
#[derive(Clone, Debug)]
pub struct Built {
    pub algorithm: Algorithm,
    pub trained: Option<TrainedModel>,
    /// Dataset columns the model reads.
    pub kept: Vec<usize>,
    pub metric: Option<MetricReport>,
    pub resources: ResourceReport,
    pub perf: PerfReport,
    pub verdict: FeasibilityVerdict,
    pub artifact: Option<GeneratedArtifact>,
}

impl Built {
    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            objective: self.metric.as_ref().map(|m| m.value),
            resources: Some(self.resources.clone()),
            perf: Some(self.perf),
            verdict: self.verdict.clone(),
        }
    }
}

fn text_err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn verdict_for(
    res: &ResourceReport,
    perf: &PerfReport,
    target: &Target,
    c: &Constraints,
) -> Result<FeasibilityVerdict, String> {
    check_feasibility(res, perf, target, c).map_err(text_err)
}

/// Attaches a `codegen` slack: 0 when the model emits cleanly, -1 otherwise.
fn with_codegen(
    mut verdict: FeasibilityVerdict,
    emitted: &Result<GeneratedArtifact, crate::codegen::CodegenError>,
) -> FeasibilityVerdict {
    verdict
        .slacks
        .insert("codegen".into(), if emitted.is_ok() { 0.0 } else { -1.0 });
    FeasibilityVerdict::from_slacks(verdict.slacks)
}

fn score(metric: Metric, predictions: &[usize], data: &Dataset) -> Result<MetricReport, String> {
    let labels = data.labels_of(data.test());
    match metric {
        Metric::F1 => classification_score(predictions, &labels, data.num_classes()).map_err(text_err),
        Metric::VMeasure => v_measure(predictions, &labels).map_err(text_err),
    }
}

/// Builds one configuration of `algorithm` against `data` under `constraints`.
/// Training settings for a dnn configuration drawn from the design space.
pub fn mlp_config(x: &Configuration, seed: u64) -> Result<MlpConfig, String> {
    let widths = dnn_hidden_widths(x).map_err(text_err)?;
    let activation = match x.text("activation").map_err(text_err)? {
        "tanh" => Activation::Tanh,
        _ => Activation::Relu,
    };
    Ok(MlpConfig {
        hidden_layers: widths.len(),
        neurons: widths,
        activation,
        learning_rate: x.real("learning_rate").map_err(text_err)?,
        batch_size: x.integer("batch_size").map_err(text_err)? as usize,
        epochs: DNN_EPOCHS,
        seed,
    })
}

pub fn build(
    algorithm: Algorithm,
    x: &Configuration,
    metric: Metric,
    data: &Dataset,
    platform: &PlatformSpec,
    constraints: &Constraints,
    seed: u64,
) -> Result<Built, String> {
    let target = Target::from_platform(platform);
    let all: Vec<usize> = (0..data.width()).collect();
    match (algorithm, &target) {
        (Algorithm::Dnn, Target::Cgra(t)) => {
            let widths = dnn_hidden_widths(x).map_err(text_err)?;
            let mut topology = vec![data.width()];
            topology.extend(&widths);
            topology.push(data.num_classes());
            let (resources, perf) = estimate_cgra_mlp(&topology, t).map_err(text_err)?;
            let verdict = verdict_for(&resources, &perf, &target, constraints)?;
            if !verdict.feasible {
                return Ok(Built {
                    algorithm,
                    trained: None,
                    kept: all,
                    metric: None,
                    resources,
                    perf,
                    verdict,
                    artifact: None,
                });
            }
            let cfg = mlp_config(x, seed)?;
            let model = train_mlp(&cfg, data).map_err(text_err)?;
            let preds = data
                .test()
                .iter()
                .map(|&i| predict_mlp(&model, data.row(i)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(text_err)?;
            let metric = score(metric, &preds, data)?;
            let emitted = emit_cgra_mlp(&model, t, BUNDLE_FORMAT);
            let verdict = with_codegen(verdict, &emitted);
            Ok(Built {
                algorithm,
                trained: Some(TrainedModel::Mlp(model)),
                kept: all,
                metric: Some(metric),
                resources,
                perf,
                verdict,
                artifact: emitted.ok(),
            })
        }
        (Algorithm::Kmeans, Target::Mat(t)) => {
            let k = x.integer("k").map_err(text_err)?.max(1) as usize;
            let (resources, perf) = estimate_mat_kmeans(k, t);
            let verdict = verdict_for(&resources, &perf, &target, constraints)?;
            if !verdict.feasible {
                return Ok(Built {
                    algorithm,
                    trained: None,
                    kept: all,
                    metric: None,
                    resources,
                    perf,
                    verdict,
                    artifact: None,
                });
            }
            let model = train_kmeans(
                &KMeansConfig {
                    k,
                    max_iters: KMEANS_MAX_ITERS,
                    seed,
                },
                data,
            )
            .map_err(text_err)?;
            let preds: Vec<usize> = data.test().iter().map(|&i| model.assign(data.row(i))).collect();
            let metric = score(metric, &preds, data)?;
            let emitted = emit_mat_kmeans(&model, t, BUNDLE_FORMAT);
            let verdict = with_codegen(verdict, &emitted);
            Ok(Built {
                algorithm,
                trained: Some(TrainedModel::KMeans(model)),
                kept: all,
                metric: Some(metric),
                resources,
                perf,
                verdict,
                artifact: emitted.ok(),
            })
        }
        (Algorithm::Svm, Target::Mat(t)) => {
            let cfg = SvmConfig {
                learning_rate: x.real("learning_rate").map_err(text_err)?,
                epochs: x.integer("epochs").map_err(text_err)? as usize,
                regularization: x.real("regularization").map_err(text_err)?,
                seed,
            };
            let fit = fit_svm_by_feature_dropping(data, &cfg, t).map_err(text_err)?;
            let (resources, perf) = estimate(
                &ModelShape::Svm {
                    features: fit.kept.len(),
                },
                &target,
            )
            .map_err(text_err)?;
            let verdict = verdict_for(&resources, &perf, &target, constraints)?;
            let view = data.select_features(&fit.kept);
            let preds: Vec<usize> = view.test().iter().map(|&i| fit.model.predict(view.row(i))).collect();
            let metric = score(metric, &preds, data)?;
            let ranges = view.train_ranges();
            let emitted = emit_mat_svm(&fit.model, &fit.kept, &ranges, data.width(), t, BUNDLE_FORMAT);
            let verdict = with_codegen(verdict, &emitted);
            Ok(Built {
                algorithm,
                trained: Some(TrainedModel::Svm(fit.model)),
                kept: fit.kept,
                metric: Some(metric),
                resources,
                perf,
                verdict,
                artifact: emitted.ok(),
            })
        }
        (a, t) => Err(format!("{a} is not supported on {}", t.kind())),
    }
}

/// Float-model prediction for a dataset row.
pub fn predict_float(trained: &TrainedModel, kept: &[usize], row: &[f64]) -> Result<usize, String> {
    match trained {
        TrainedModel::Mlp(m) => predict_mlp(m, row).map_err(text_err),
        TrainedModel::KMeans(m) => Ok(m.assign(row)),
        TrainedModel::Svm(m) => {
            let sub: Vec<f64> = kept.iter().map(|&c| row[c]).collect();
            Ok(m.predict(&sub))
        }
    }
}

/// Fraction of test rows on which the emitted program and the float model agree.
pub fn fidelity(built: &Built, data: &Dataset) -> Result<f64, String> {
    let (Some(trained), Some(art)) = (&built.trained, &built.artifact) else {
        return Err("model was not built".into());
    };
    let interp = Interpreter::from_artifact(art).map_err(text_err)?;
    let rows = data.test();
    if rows.is_empty() {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for &i in rows {
        let row = data.row(i);
        if interp.classify(row).map_err(text_err)? == predict_float(trained, &built.kept, row)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / rows.len() as f64)
}

/// Result of searching one model across its surviving algorithms.
#[derive(Clone, Debug)]
pub struct ModelSearch {
    pub name: String,
    /// Algorithm whose search is reported (the winner, or the first tried).
    pub algorithm: Option<Algorithm>,
    pub outcome: Option<SearchOutcome>,
    /// Why no search ran, when pruning removed every algorithm.
    pub pruned: Option<String>,
}

impl ModelSearch {
    pub fn best(&self) -> Option<&Observation> {
        self.outcome.as_ref().and_then(SearchOutcome::best)
    }
}

/// Prunes, then searches every surviving algorithm with the same settings
/// and keeps the one with the best feasible objective.
pub fn search_model(
    input: &ModelInput,
    spec: &PipelineSpec,
    settings: &SearchSettings,
) -> Result<ModelSearch, DriverError> {
    let name = input.spec.name.clone();
    let constraints = Constraints {
        throughput_floor: spec.declared_throughput(&input.spec),
        latency_ceiling: spec.platform.latency_ceiling,
    };
    let mut platform = spec.platform.clone();
    platform.throughput_floor = constraints.throughput_floor;
    let survivors = match prune_algorithms(
        &input.spec.candidate_algorithms(),
        &platform,
        input.data.width(),
        input.data.num_classes(),
    ) {
        Ok(s) => s,
        Err(e) => {
            return Ok(ModelSearch {
                name,
                algorithm: None,
                outcome: None,
                pruned: Some(e.to_string()),
            })
        }
    };
    let mut chosen: Option<(Algorithm, SearchOutcome)> = None;
    for alg in survivors {
        let space = build_design_space(alg, &platform).map_err(|e| DriverError::Build {
            model: name.clone(),
            message: e.to_string(),
        })?;
        let evaluator = |x: &Configuration| {
            build(
                alg,
                x,
                input.spec.optimization_metric,
                &input.data,
                &platform,
                &constraints,
                settings.seed,
            )
            .map(|b| b.evaluation())
        };
        let outcome = run_search(settings, &space, evaluator).map_err(|e| DriverError::Usage(e.to_string()))?;
        let better = match &chosen {
            None => true,
            Some((_, cur)) => {
                let new = outcome.best().and_then(|o| o.objective);
                let old = cur.best().and_then(|o| o.objective);
                match (new, old) {
                    (Some(n), Some(o)) => n > o,
                    (Some(_), None) => true,
                    _ => false,
                }
            }
        };
        if better {
            chosen = Some((alg, outcome));
        }
    }
    let (alg, outcome) = chosen.expect("prune returns at least one algorithm");
    Ok(ModelSearch {
        name,
        algorithm: Some(alg),
        outcome: Some(outcome),
        pruned: None,
    })
}

pub fn search_all(job: &Job) -> Result<Vec<ModelSearch>, DriverError> {
    job.inputs
        .par_iter()
        .map(|input| search_model(input, &job.spec, &job.settings))
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DriverError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn mkdir(path: &Path) -> Result<(), DriverError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// A fused two-task network built from two searched dnn winners.
#[derive(Clone, Debug)]
pub struct FusedBuild {
    pub plan: FusionPlan,
    /// Model whose searched configuration became the shared trunk.
    pub trunk_from: String,
    pub model: FusedMlp,
    /// Test-split score per task, in plan order.
    pub scores: Vec<MetricReport>,
    pub resources: ResourceReport,
    pub perf: PerfReport,
    pub verdict: FeasibilityVerdict,
}

fn standalone_cost(input: &ModelInput, x: &Configuration, t: &CgraTarget) -> Result<u64, String> {
    let mut topology = vec![input.data.width()];
    topology.extend(dnn_hidden_widths(x).map_err(text_err)?);
    topology.push(input.data.num_classes());
    let (res, _) = estimate_cgra_mlp(&topology, t).map_err(text_err)?;
    Ok(res.cus + res.mus)
}

/// Fuses two dnn models that share enough features. The trunk reuses the
/// cheaper of the two searched configurations.
pub fn fuse_pair(
    a: (&ModelInput, &Configuration),
    b: (&ModelInput, &Configuration),
    platform: &PlatformSpec,
    seed: u64,
) -> Result<FusedBuild, String> {
    let target = Target::from_platform(platform);
    let Target::Cgra(t) = &target else {
        return Err("fusion needs a cgra target".into());
    };
    let plan = plan_fusion((&a.0.spec, &a.0.data), (&b.0.spec, &b.0.data), DEFAULT_FUSION_THRESHOLD)
        .ok_or_else(|| format!("`{}` and `{}` cannot be fused", a.0.spec.name, b.0.spec.name))?;
    let (ca, cb) = (standalone_cost(a.0, a.1, t)?, standalone_cost(b.0, b.1, t)?);
    let (trunk_from, x) = if cb < ca {
        (&b.0.spec.name, b.1)
    } else {
        (&a.0.spec.name, a.1)
    };
    let trained = train_fused(&plan, [&a.0.data, &b.0.data], &mlp_config(x, seed)?).map_err(text_err)?;
    let (resources, perf) = estimate_cgra_mlp(&trained.model.topology(), t).map_err(text_err)?;
    let constraints = Constraints {
        throughput_floor: platform.throughput_floor,
        latency_ceiling: platform.latency_ceiling,
    };
    let verdict = verdict_for(&resources, &perf, &target, &constraints)?;
    Ok(FusedBuild {
        plan,
        trunk_from: trunk_from.clone(),
        model: trained.model,
        scores: trained.scores,
        resources,
        perf,
        verdict,
    })
}

/// Hash of a report with its `integrity` field removed, over compact JSON.
pub fn integrity_hash(report: &Value) -> String {
    let mut v = report.clone();
    if let Value::Object(m) = &mut v {
        m.shift_remove("integrity");
    }
    sha256_hex(serde_json::to_string(&v).expect("json values serialize").as_bytes())
}

fn seal(mut report: serde_json::Map<String, Value>) -> Value {
    let hash = integrity_hash(&Value::Object(report.clone()));
    report.insert("integrity".into(), json!(hash));
    Value::Object(report)
}

fn best_json(search: &ModelSearch) -> Value {
    match search.best() {
        Some(o) => json!({
            "model": search.name,
            "algorithm": search.algorithm,
            "configuration": o.configuration,
            "objective": o.objective,
            "feasible": o.feasible,
            "resources": o.resources,
            "perf": o.perf,
            "slacks": o.slacks,
        }),
        None => {
            json!({ "model": search.name, "algorithm": search.algorithm, "best": null, "reason": search.pruned })
        }
    }
}

fn trace_csv(search: &ModelSearch) -> String {
    search
        .outcome
        .as_ref()
        .map(|o| o.trace.to_csv())
        .unwrap_or_else(|| format!("{}\n", crate::search::TRACE_HEADER))
}

/// What a command produced, for exit-status decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// Models without a feasible configuration.
    pub infeasible_models: Vec<String>,
    /// False when the composed pipeline violates a constraint.
    pub composition_feasible: bool,
    pub manifest: Value,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.infeasible_models.is_empty() && self.composition_feasible {
            0
        } else {
            1
        }
    }
}

/// Search only: writes `<model>/regret.csv`, `<model>/best.json` and a
/// top-level manifest.
pub fn run_search_only(job: &Job, out: &Path) -> Result<RunSummary, DriverError> {
    let searches = search_all(job)?;
    mkdir(out)?;
    let mut models = Vec::new();
    let mut files = serde_json::Map::new();
    let mut infeasible = Vec::new();
    for s in &searches {
        let dir = out.join(&s.name);
        mkdir(&dir)?;
        let trace = trace_csv(s);
        let best = pretty(&best_json(s));
        write(&dir.join(TRACE_FILE), trace.as_bytes())?;
        write(&dir.join(BEST_FILE), best.as_bytes())?;
        files.insert(format!("{}/{TRACE_FILE}", s.name), json!(sha256_hex(trace.as_bytes())));
        files.insert(format!("{}/{BEST_FILE}", s.name), json!(sha256_hex(best.as_bytes())));
        if s.best().is_none() {
            infeasible.push(s.name.clone());
        }
        models.push(json!({
            "name": s.name,
            "status": if s.best().is_some() { "feasible" } else { "infeasible" },
            "algorithm": s.algorithm,
            "configuration": s.best().map(|o| &o.configuration),
            "objective": s.best().and_then(|o| o.objective),
            "evaluations": s.outcome.as_ref().map_or(0, |o| o.history.len()),
        }));
    }
    let mut m = job.manifest_head("search");
    m.insert("models".into(), Value::Array(models));
    m.insert("files".into(), Value::Object(files));
    let manifest = seal(m);
    write(&out.join(REPORT_FILE), pretty(&manifest).as_bytes())?;
    Ok(RunSummary {
        infeasible_models: infeasible,
        composition_feasible: true,
        manifest,
    })
}

/// Full compile: search, rebuild the winners, emit code, compose and write
/// one bundle per model plus a composed top-level report.
pub fn run_compile(job: &Job, out: &Path) -> Result<RunSummary, DriverError> {
    let searches = search_all(job)?;
    mkdir(out)?;
    let mut models = Vec::new();
    let mut files = serde_json::Map::new();
    let mut infeasible = Vec::new();
    let mut parts: IndexMap<String, ComposedPart> = IndexMap::new();
    for (s, input) in searches.iter().zip(&job.inputs) {
        let dir = out.join(&s.name);
        mkdir(&dir)?;
        let trace = trace_csv(s);
        write(&dir.join(TRACE_FILE), trace.as_bytes())?;
        let (Some(best), Some(alg)) = (s.best(), s.algorithm) else {
            files.insert(format!("{}/{TRACE_FILE}", s.name), json!(sha256_hex(trace.as_bytes())));
            infeasible.push(s.name.clone());
            models
                .push(json!({ "name": s.name, "status": "infeasible", "algorithm": s.algorithm, "reason": s.pruned }));
            continue;
        };
        let required = job.spec.declared_throughput(&input.spec);
        let constraints = Constraints {
            throughput_floor: required,
            latency_ceiling: job.spec.platform.latency_ceiling,
        };
        let build_err = |message: String| DriverError::Build {
            model: s.name.clone(),
            message,
        };
        let built = build(
            alg,
            &best.configuration,
            input.spec.optimization_metric,
            &input.data,
            &job.spec.platform,
            &constraints,
            job.settings.seed,
        )
        .map_err(build_err)?;
        let art = built
            .artifact
            .clone()
            .ok_or_else(|| build_err("best configuration did not emit".into()))?;
        let agreement = fidelity(&built, &input.data).map_err(build_err)?;
        let program = art.program_text.as_bytes();
        let weights = art.weights_blob().map_err(|e| build_err(e.to_string()))?;
        write(&dir.join(PROGRAM_FILE), program)?;
        write(&dir.join(WEIGHTS_FILE), &weights)?;
        let features: Vec<&str> = built
            .kept
            .iter()
            .map(|&c| input.data.feature_names[c].as_str())
            .collect();
        let mut r = serde_json::Map::new();
        r.insert("schema_version".into(), json!(SCHEMA_VERSION));
        r.insert("model".into(), json!(s.name));
        r.insert("algorithm".into(), json!(alg));
        r.insert("configuration".into(), json!(best.configuration));
        r.insert("metric".into(), json!(built.metric));
        r.insert("features".into(), json!(features));
        r.insert("format".into(), json!(art.format.to_string()));
        r.insert("resources".into(), json!(built.resources));
        r.insert("perf".into(), json!(built.perf));
        r.insert("constraints".into(), json!(constraints));
        r.insert("verdict".into(), json!(built.verdict));
        r.insert(
            "fidelity".into(),
            json!({ "rows": input.data.test().len(), "agreement": agreement }),
        );
        r.insert(
            "search".into(),
            json!({
                "budget": job.settings.budget,
                "doe": job.settings.doe,
                "evaluations": s.outcome.as_ref().map_or(0, |o| o.history.len()),
                "feasible_evaluations": s.outcome.as_ref().map_or(0, |o| o.history.iter().filter(|h| h.feasible).count()),
            }),
        );
        r.insert(
            "provenance".into(),
            json!({
                "spec_sha256": job.spec_sha256,
                "seed": job.settings.seed,
                "configuration": best.configuration,
                "dataset": input.provenance,
            }),
        );
        r.insert(
            "files".into(),
            json!({
                PROGRAM_FILE: sha256_hex(program),
                WEIGHTS_FILE: sha256_hex(&weights),
                TRACE_FILE: sha256_hex(trace.as_bytes()),
            }),
        );
        let report = pretty(&seal(r));
        write(&dir.join(REPORT_FILE), report.as_bytes())?;
        files.insert(
            format!("{}/{REPORT_FILE}", s.name),
            json!(sha256_hex(report.as_bytes())),
        );
        parts.insert(
            s.name.clone(),
            ComposedPart {
                resources: built.resources.clone(),
                perf: built.perf,
                required_throughput: required,
            },
        );
        models.push(json!({
            "name": s.name,
            "status": "feasible",
            "algorithm": alg,
            "configuration": best.configuration,
            "metric": built.metric.as_ref().map(|m| m.value),
            "feasible": built.verdict.feasible,
        }));
    }
    let mut composition_feasible = true;
    let composition = if infeasible.is_empty() {
        let composed = compose(&job.spec.schedule, parts, &job.spec.platform).map_err(|e| DriverError::Build {
            model: "pipeline".into(),
            message: e.to_string(),
        })?;
        composition_feasible = composed.verdict.feasible;
        composition_json(&composed)
    } else {
        Value::Null
    };
    let mut m = job.manifest_head("compile");
    m.insert("models".into(), Value::Array(models));
    m.insert("composition".into(), composition);
    m.insert("fusion".into(), fusion_candidates(job));
    m.insert("files".into(), Value::Object(files));
    let manifest = seal(m);
    write(&out.join(REPORT_FILE), pretty(&manifest).as_bytes())?;
    Ok(RunSummary {
        infeasible_models: infeasible,
        composition_feasible,
        manifest,
    })
}

/// Model pairs whose datasets overlap enough to share a trunk.
fn fusion_candidates(job: &Job) -> Value {
    let mut out = Vec::new();
    for (i, a) in job.inputs.iter().enumerate() {
        for b in &job.inputs[i + 1..] {
            if let Some(plan) = plan_fusion((&a.spec, &a.data), (&b.spec, &b.data), DEFAULT_FUSION_THRESHOLD) {
                out.push(json!({ "models": plan.models, "overlap": plan.overlap }));
            }
        }
    }
    Value::Array(out)
}

/// Resources, performance and verdict of a shape on a platform, untrained.
pub fn estimate_report(platform: &PlatformSpec, shape: &ModelShape) -> Result<Value, DriverError> {
    let target = Target::from_platform(platform);
    let (res, perf) = estimate(shape, &target).map_err(|e| DriverError::Usage(e.to_string()))?;
    let verdict = check_feasibility(&res, &perf, &target, &Constraints::from(platform))
        .map_err(|e| DriverError::Usage(e.to_string()))?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "target": target,
        "shape": shape,
        "resources": res,
        "perf": perf,
        "verdict": verdict,
    }))
}

fn read_json(path: &Path) -> Result<Value, DriverError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DriverError::Bundle(format!("{}: {e}", path.display())))
}

/// Checks the report's own hash and the hashes of every file it lists,
/// recursing into per-model reports. Returns the parsed report.
pub fn verify_bundle(dir: &Path) -> Result<Value, DriverError> {
    let path = dir.join(REPORT_FILE);
    let report = read_json(&path)?;
    let recorded = report
        .get("integrity")
        .and_then(Value::as_str)
        .ok_or_else(|| DriverError::Bundle(format!("{} has no integrity field", path.display())))?;
    if integrity_hash(&report) != recorded {
        return Err(DriverError::Integrity(format!("{} was modified", path.display())));
    }
    if let Some(files) = report.get("files").and_then(Value::as_object) {
        for (name, hash) in files {
            let f = dir.join(name);
            let bytes = fs::read(&f).map_err(io_err(&f))?;
            if Some(sha256_hex(&bytes).as_str()) != hash.as_str() {
                return Err(DriverError::Integrity(format!(
                    "{} does not match its recorded hash",
                    f.display()
                )));
            }
        }
    }
    Ok(report)
}

fn fmt_num(v: &Value) -> String {
    match v.as_f64() {
        Some(f) if f.fract() == 0.0 && f.abs() < 1e15 => format!("{}", f as i64),
        Some(f) => format!("{f:.4}"),
        None => "-".into(),
    }
}

fn resources_line(res: &Value) -> String {
    match res.get("kind").and_then(Value::as_str) {
        Some("mat_pipeline") => format!("mats {}", fmt_num(&res["mats"])),
        _ => format!(
            "cus {} mus {} multiplex {}",
            fmt_num(&res["cus"]),
            fmt_num(&res["mus"]),
            fmt_num(&res["multiplex"])
        ),
    }
}

fn perf_line(perf: &Value) -> String {
    format!(
        "throughput {} Gpkt/s latency {} ns",
        fmt_num(&perf["throughput_gpps"]),
        fmt_num(&perf["latency_ns"])
    )
}

fn slack_table(verdict: &Value, out: &mut String) {
    if let Some(slacks) = verdict.get("slacks").and_then(Value::as_object) {
        for (k, v) in slacks {
            let ok = v.as_f64().is_some_and(|s| s >= 0.0);
            out.push_str(&format!(
                "    {k:<24} {:>12} {}\n",
                fmt_num(v),
                if ok { "ok" } else { "VIOLATED" }
            ));
        }
    }
}

fn render_model(r: &Value, out: &mut String) {
    out.push_str(&format!(
        "model {} ({}): {} {}\n",
        r["model"].as_str().unwrap_or("?"),
        r["algorithm"].as_str().unwrap_or("?"),
        r["metric"]["kind"].as_str().unwrap_or("metric"),
        fmt_num(&r["metric"]["value"]),
    ));
    out.push_str(&format!("  configuration: {}\n", r["configuration"]));
    out.push_str(&format!("  resources: {}\n", resources_line(&r["resources"])));
    out.push_str(&format!("  perf: {}\n", perf_line(&r["perf"])));
    out.push_str(&format!(
        "  constraints: throughput >= {} Gpkt/s, latency <= {} ns\n",
        fmt_num(&r["constraints"]["throughput_floor"]),
        fmt_num(&r["constraints"]["latency_ceiling"])
    ));
    out.push_str(&format!(
        "  fidelity: {} over {} rows ({})\n",
        fmt_num(&r["fidelity"]["agreement"]),
        fmt_num(&r["fidelity"]["rows"]),
        r["format"].as_str().unwrap_or("?")
    ));
    out.push_str("  slacks:\n");
    slack_table(&r["verdict"], out);
    out.push_str(&format!(
        "  provenance: seed {} spec sha256 {}\n",
        fmt_num(&r["provenance"]["seed"]),
        r["provenance"]["spec_sha256"].as_str().unwrap_or("?")
    ));
}

/// Verifies a bundle (top-level or per-model) and renders a summary.
pub fn render_report(dir: &Path) -> Result<String, DriverError> {
    let report = verify_bundle(dir)?;
    let mut out = String::new();
    if report.get("model").is_some() {
        render_model(&report, &mut out);
        return Ok(out);
    }
    out.push_str(&format!(
        "{} run: seed {} budget {} doe {}\nspec {} sha256 {}\n",
        report["command"].as_str().unwrap_or("?"),
        fmt_num(&report["seed"]),
        fmt_num(&report["budget"]),
        fmt_num(&report["doe"]),
        report["spec"]["path"].as_str().unwrap_or("?"),
        report["spec"]["sha256"].as_str().unwrap_or("?"),
    ));
    for m in report["models"].as_array().into_iter().flatten() {
        let name = m["name"].as_str().unwrap_or("?");
        if m["status"] != "feasible" {
            out.push_str(&format!("model {name}: no feasible configuration\n"));
            continue;
        }
        let sub = dir.join(name);
        if sub.join(REPORT_FILE).exists() {
            render_model(&verify_bundle(&sub)?, &mut out);
        } else {
            out.push_str(&format!(
                "model {name} ({}): objective {} configuration {}\n",
                m["algorithm"].as_str().unwrap_or("?"),
                fmt_num(&m["objective"]),
                m["configuration"]
            ));
        }
    }
    let c = &report["composition"];
    if c.is_object() {
        out.push_str(&format!(
            "aggregate: {} | {} | {}\n",
            resources_line(&c["aggregate"]),
            perf_line(&c["perf"]),
            if c["verdict"]["feasible"].as_bool() == Some(true) {
                "feasible"
            } else {
                "infeasible"
            }
        ));
        if let Some(flagged) = c["flagged"].as_array().filter(|f| !f.is_empty()) {
            let names: Vec<&str> = flagged.iter().filter_map(Value::as_str).collect();
            out.push_str(&format!("  throughput-limited: {}\n", names.join(", ")));
        }
        out.push_str("  slacks:\n");
        slack_table(&c["verdict"], &mut out);
    }
    Ok(out)
}
