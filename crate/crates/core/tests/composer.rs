use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use planeml::backends::{CgraTarget, MatTarget, ResourceReport, Target};
use planeml::composer::{
    aggregate_resources, check_cross_model_consistency, compose, plan_fusion, propagate_constraints, train_fused,
    ComposedPart, ModelRates,
};
use planeml::data::synth_blobs;
use planeml::frontend::{
    Algorithm, MatResources, Metric, ModelSpec, PlatformKind, PlatformResources, PlatformSpec, ScheduleExpr,
};
use planeml::models::{Activation, Dense, MlpConfig, MlpModel};
use planeml::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

fn random_schedule(names: &[String], rng: &mut planeml::Rng) -> ScheduleExpr {
    if names.len() == 1 {
        return ScheduleExpr::leaf(names[0].clone());
    }
    let cut = rng.random_range(1..names.len());
    let (l, r) = (random_schedule(&names[..cut], rng), random_schedule(&names[cut..], rng));
    if rng.random_bool(0.5) {
        ScheduleExpr::seq(l, r)
    } else {
        ScheduleExpr::par(l, r)
    }
}

fn leaves_of(e: &ScheduleExpr) -> Vec<String> {
    match e {
        ScheduleExpr::Leaf(n) => vec![n.clone()],
        ScheduleExpr::Seq(a, b) | ScheduleExpr::Par(a, b) => [leaves_of(a), leaves_of(b)].concat(),
    }
}

// Edges u -> v for every u on the left of a Seq and v on its right.
fn edges(e: &ScheduleExpr, out: &mut BTreeSet<(String, String)>) {
    match e {
        ScheduleExpr::Leaf(_) => {}
        ScheduleExpr::Seq(a, b) => {
            for u in leaves_of(a) {
                for v in leaves_of(b) {
                    out.insert((u.clone(), v));
                }
            }
            edges(a, out);
            edges(b, out);
        }
        ScheduleExpr::Par(a, b) => {
            edges(a, out);
            edges(b, out);
        }
    }
}

/// Every maximal source-to-sink path of the DAG, by exhaustive DFS.
fn all_paths(nodes: &[String], e: &BTreeSet<(String, String)>) -> Vec<Vec<String>> {
    let succ = |n: &str| {
        e.iter()
            .filter(|(u, _)| u == n)
            .map(|(_, v)| v.clone())
            .collect::<Vec<_>>()
    };
    let has_pred = |n: &str| e.iter().any(|(_, v)| v == n);
    let mut paths = Vec::new();
    fn dfs(path: &mut Vec<String>, succ: &dyn Fn(&str) -> Vec<String>, out: &mut Vec<Vec<String>>) {
        let next = succ(path.last().unwrap());
        if next.is_empty() {
            out.push(path.clone());
        }
        for n in next {
            path.push(n);
            dfs(path, succ, out);
            path.pop();
        }
    }
    for n in nodes.iter().filter(|n| !has_pred(n)) {
        dfs(&mut vec![n.clone()], &succ, &mut paths);
    }
    paths
}

fn oracle(schedule: &ScheduleExpr, rates: &IndexMap<String, ModelRates>) -> (BTreeMap<String, f64>, f64) {
    let nodes = leaves_of(schedule);
    let mut e = BTreeSet::new();
    edges(schedule, &mut e);
    let paths = all_paths(&nodes, &e);
    // A model runs no faster than anything sharing a path with it; repeat
    // until nothing moves, since a slowed model slows its other paths too.
    let mut eff: BTreeMap<String, f64> = nodes
        .iter()
        .map(|n| (n.clone(), rates[n.as_str()].throughput))
        .collect();
    loop {
        let mut changed = false;
        for p in &paths {
            let chain_min = p.iter().map(|n| eff[n]).fold(f64::INFINITY, f64::min);
            for n in p {
                if eff[n] > chain_min {
                    eff.insert(n.clone(), chain_min);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut longest: f64 = 0.0;
    for p in &paths {
        longest = longest.max(p.iter().map(|n| rates[n.as_str()].latency_ns).sum());
    }
    (eff, longest)
}

fn random_rates(names: &[String], rng: &mut planeml::Rng) -> IndexMap<String, ModelRates> {
    let menu = [0.25, 0.5, 1.0, 2.0];
    names
        .iter()
        .map(|n| {
            let t = if rng.random_bool(0.5) {
                menu[rng.random_range(0..4)]
            } else {
                rng.random_range(0.1..3.0)
            };
            (
                n.clone(),
                ModelRates {
                    throughput: t,
                    latency_ns: rng.random_range(1..100) as f64,
                },
            )
        })
        .collect()
}

#[test]
fn propagation_matches_brute_force_on_100_schedules() {
    let mut rng = seeded_rng(404);
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let names: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let schedule = random_schedule(&names, &mut rng);
        let rates = random_rates(&names, &mut rng);
        let got = propagate_constraints(&schedule, &rates).unwrap();
        let (want, longest) = oracle(&schedule, &rates);
        for (name, w) in &want {
            assert_eq!(
                got.effective_throughput[name.as_str()],
                *w,
                "case {case}: {name} in {schedule:?}"
            );
        }
        assert_eq!(got.pipeline_latency_ns, longest, "case {case}");
        for (name, r) in &rates {
            let flagged = got.flagged.contains(name);
            assert_eq!(flagged, want[name] < r.throughput, "case {case}: flag for {name}");
        }
    }
}

#[test]
fn chain_example_and_latency_example() {
    let rates: IndexMap<String, ModelRates> = [
        (
            "a".to_string(),
            ModelRates {
                throughput: 1.0,
                latency_ns: 10.0,
            },
        ),
        (
            "b".to_string(),
            ModelRates {
                throughput: 0.5,
                latency_ns: 30.0,
            },
        ),
        (
            "c".to_string(),
            ModelRates {
                throughput: 1.0,
                latency_ns: 5.0,
            },
        ),
    ]
    .into_iter()
    .collect();
    let chain = ScheduleExpr::seq(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b"));
    let p = propagate_constraints(&chain, &rates).unwrap();
    assert_eq!(p.effective_throughput["a"], 0.5);
    assert_eq!(p.effective_throughput["b"], 0.5);
    assert_eq!(p.flagged, vec!["a".to_string()]);

    let par_then = ScheduleExpr::seq(
        ScheduleExpr::par(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b")),
        ScheduleExpr::leaf("c"),
    );
    assert_eq!(
        propagate_constraints(&par_then, &rates).unwrap().pipeline_latency_ns,
        35.0
    );
}

fn cgra_report(cus: u64, mus: u64) -> ResourceReport {
    ResourceReport {
        kind: PlatformKind::CgraGrid,
        cus,
        cu_demand: cus,
        mus,
        mats: 0,
        multiplex: 1,
    }
}

#[test]
fn aggregation_examples() {
    let grid = Target::Cgra(CgraTarget::default());
    let four = vec![cgra_report(24, 24); 4];
    let agg = aggregate_resources(&four, &grid).unwrap();
    assert_eq!((agg.cus, agg.mus, agg.multiplex), (96, 96, 1));
    assert_eq!(
        aggregate_resources(&[], &grid).unwrap(),
        ResourceReport::zero(PlatformKind::CgraGrid)
    );
    let big = aggregate_resources(&[cgra_report(200, 10), cgra_report(200, 10)], &grid).unwrap();
    assert_eq!((big.cu_demand, big.cus, big.multiplex), (400, 256, 2));
    let mat = ResourceReport {
        kind: PlatformKind::MatPipeline,
        cus: 0,
        cu_demand: 0,
        mus: 0,
        mats: 3,
        multiplex: 1,
    };
    assert!(aggregate_resources(&[mat, cgra_report(1, 1)], &grid).is_err());
}

fn mat_platform(num_mats: u64) -> PlatformSpec {
    PlatformSpec {
        kind: PlatformKind::MatPipeline,
        throughput_floor: 1.0,
        latency_ceiling: 500.0,
        resources: PlatformResources::Mat(MatResources {
            num_mats,
            line_rate: None,
            stage_latency_ns: None,
        }),
    }
}

#[test]
fn six_tables_on_five_is_infeasible() {
    let part = |mats| ComposedPart {
        resources: ResourceReport {
            kind: PlatformKind::MatPipeline,
            cus: 0,
            cu_demand: 0,
            mus: 0,
            mats,
            multiplex: 1,
        },
        perf: planeml::backends::PerfReport {
            throughput_gpps: 1.0,
            latency_ns: mats as f64,
        },
        required_throughput: 1.0,
    };
    let sched = ScheduleExpr::par(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b"));
    let parts: IndexMap<String, ComposedPart> = [("a".to_string(), part(3)), ("b".to_string(), part(3))]
        .into_iter()
        .collect();
    let c = compose(&sched, parts.clone(), &mat_platform(5)).unwrap();
    assert!(!c.verdict.feasible);
    assert_eq!(c.verdict.slacks["mats"], -1.0);
    let ok = compose(&sched, parts, &mat_platform(6)).unwrap();
    assert!(ok.verdict.feasible);
    assert_eq!(check_cross_model_consistency(&ok, &mat_platform(6)), ok.verdict);
}

#[test]
fn slow_chain_under_floor_is_infeasible() {
    let part = |t: f64| ComposedPart {
        resources: ResourceReport {
            kind: PlatformKind::MatPipeline,
            cus: 0,
            cu_demand: 0,
            mus: 0,
            mats: 1,
            multiplex: 1,
        },
        perf: planeml::backends::PerfReport {
            throughput_gpps: t,
            latency_ns: 1.0,
        },
        required_throughput: 1.0,
    };
    let sched = ScheduleExpr::seq(ScheduleExpr::leaf("a"), ScheduleExpr::leaf("b"));
    let parts: IndexMap<String, ComposedPart> = [("a".to_string(), part(1.0)), ("b".to_string(), part(0.5))]
        .into_iter()
        .collect();
    let c = compose(&sched, parts, &mat_platform(5)).unwrap();
    assert!(!c.verdict.feasible);
    assert!(c.verdict.slacks["a.throughput"] < 0.0);
    let _ = MatTarget::new(1);
}

fn dnn_spec(name: &str) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        optimization_metric: Metric::F1,
        algorithms: vec![Algorithm::Dnn],
        dataset: format!("{name}.json"),
        throughput: None,
    }
}

#[test]
fn fusion_planning_examples() {
    let a = synth_blobs(2, 100, 4, 1.0, 1).unwrap();
    let b = synth_blobs(2, 100, 4, 1.0, 2).unwrap();
    let plan = plan_fusion((&dnn_spec("a"), &a), (&dnn_spec("b"), &b), 0.5).unwrap();
    assert_eq!(plan.overlap, 1.0);
    let swapped = plan_fusion((&dnn_spec("b"), &b), (&dnn_spec("a"), &a), 0.5).unwrap();
    assert_eq!(plan.features, swapped.features);
    assert_eq!(plan.overlap, swapped.overlap);

    // 5 shared of 9 total names
    let mut c = a.clone();
    c.feature_names = ["f0", "f1", "f2", "f3"].map(String::from).to_vec();
    let mut d = a.clone();
    d.feature_names = ["f0", "f1", "f2", "x3"].map(String::from).to_vec();
    let mut e = synth_blobs(2, 100, 7, 1.0, 3).unwrap();
    e.feature_names = ["f0", "f1", "f2", "f3", "g0", "g1", "g2"].map(String::from).to_vec();
    let mut f = synth_blobs(2, 100, 7, 1.0, 4).unwrap();
    f.feature_names = ["f0", "f1", "f2", "f3", "f4", "h0", "h1"].map(String::from).to_vec();
    assert!(plan_fusion((&dnn_spec("c"), &c), (&dnn_spec("d"), &d), 0.5).is_some()); // 3/5
    let p = plan_fusion((&dnn_spec("e"), &e), (&dnn_spec("f"), &f), 0.0).unwrap();
    assert_eq!(p.overlap, 4.0 / 10.0);
    let mut g = e.clone();
    g.feature_names = ["f0", "f1", "f2", "f3", "f4", "g0", "h0"].map(String::from).to_vec();
    let mut h = e.clone();
    h.feature_names = ["f0", "f1", "f2", "f3", "f4", "g1", "h1"].map(String::from).to_vec();
    let p = plan_fusion((&dnn_spec("g"), &g), (&dnn_spec("h"), &h), 0.5).unwrap();
    assert!((p.overlap - 5.0 / 9.0).abs() < 1e-15);
    assert_eq!(p.features.len(), 9);
    assert!(p.features.windows(2).all(|w| w[0] < w[1]));

    let mut disjoint = b.clone();
    disjoint.feature_names = ["z0", "z1", "z2", "z3"].map(String::from).to_vec();
    assert!(plan_fusion((&dnn_spec("a"), &a), (&dnn_spec("z"), &disjoint), 0.5).is_none());
    let mut km = dnn_spec("k");
    km.optimization_metric = Metric::VMeasure;
    km.algorithms = vec![Algorithm::Kmeans];
    assert!(plan_fusion((&dnn_spec("a"), &a), (&km, &b), 0.5).is_none());
}

fn cfg(seed: u64) -> MlpConfig {
    MlpConfig {
        hidden_layers: 1,
        neurons: vec![8],
        activation: Activation::Relu,
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 15,
        seed,
    }
}

#[test]
fn fused_param_count_is_below_two_standalone_models() {
    let a = synth_blobs(2, 300, 5, 1.0, 1).unwrap();
    let plan = plan_fusion((&dnn_spec("a"), &a), (&dnn_spec("b"), &a), 0.5).unwrap();
    let fused = train_fused(&plan, [&a, &a], &cfg(0)).unwrap().model;
    let standalone = MlpModel::init(&[5, 8, 2], Activation::Relu, 0).param_count();
    // shared trunk counted once: 5*8+8, plus two 8->2 heads
    let direct = (5 * 8 + 8) + 2 * (8 * 2 + 2);
    assert_eq!(fused.param_count(), direct);
    assert!(fused.param_count() < 2 * standalone);
    assert_eq!(fused.topology(), vec![5, 8, 4]);
    let _ = Dense::zeros(1, 1);
}

#[test]
fn identical_tasks_score_alike() {
    let a = synth_blobs(2, 600, 5, 1.5, 7).unwrap();
    let plan = plan_fusion((&dnn_spec("a"), &a), (&dnn_spec("b"), &a), 0.5).unwrap();
    let r = train_fused(&plan, [&a, &a], &cfg(3)).unwrap();
    assert!(
        (r.scores[0].value - r.scores[1].value).abs() <= 0.02,
        "{} vs {}",
        r.scores[0].value,
        r.scores[1].value
    );
}

proptest! {
    #[test]
    fn propagation_is_idempotent_and_bounded(seed in 0u64..10_000, n in 1usize..9) {
        let mut rng = seeded_rng(seed);
        let names: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let schedule = random_schedule(&names, &mut rng);
        let rates = random_rates(&names, &mut rng);
        let once = propagate_constraints(&schedule, &rates).unwrap();
        let fed: IndexMap<String, ModelRates> = rates
            .iter()
            .map(|(k, r)| (k.clone(), ModelRates { throughput: once.effective_throughput[k.as_str()], ..*r }))
            .collect();
        let twice = propagate_constraints(&schedule, &fed).unwrap();
        prop_assert_eq!(&once.effective_throughput, &twice.effective_throughput);
        for (k, r) in &rates {
            prop_assert!(once.effective_throughput[k.as_str()] <= r.throughput);
        }
    }

    #[test]
    fn aggregation_is_order_free(parts in prop::collection::vec((0u64..120, 0u64..120), 0..6), rot in 0usize..6) {
        let grid = Target::Cgra(CgraTarget::default());
        let reports: Vec<ResourceReport> = parts.iter().map(|&(c, m)| cgra_report(c, m)).collect();
        let mut rotated = reports.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        let a = aggregate_resources(&reports, &grid).unwrap();
        prop_assert_eq!(&a, &aggregate_resources(&rotated, &grid).unwrap());
        prop_assert_eq!(a.cu_demand, parts.iter().map(|p| p.0).sum::<u64>());
        prop_assert_eq!(a.mus, parts.iter().map(|p| p.1).sum::<u64>());
    }
}
