//! Random-forest surrogate: regression trees for the objective and
//! classification trees for feasibility.

use rand::Rng as _;

use super::space::DesignSpace;
use super::{Observation, SearchError};

pub const NUM_TREES: usize = 10;
pub const MIN_LEAF: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum SplitRule {
    /// Left iff `x[param] <= threshold`.
    Threshold(f64),
    /// Left iff the category index of `x[param]` is in the set.
    Subset(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        param: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    /// `samples` index the tree's training set (with bootstrap repeats).
    Leaf { samples: Vec<usize>, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn goes_left(rule: &SplitRule, v: f64) -> bool {
        match rule {
            SplitRule::Threshold(t) => v <= *t,
            SplitRule::Subset(set) => set.contains(&(v as usize)),
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    param,
                    rule,
                    left,
                    right,
                } => {
                    at = if Self::goes_left(rule, x[*param]) {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_of(x)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("leaf_of stops at a leaf"),
        }
    }

    /// Fits on `(xs[i], ys[i])` for the listed sample indices.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], samples: Vec<usize>, categorical: &[bool], kind: TreeKind) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        tree.grow(xs, ys, samples, categorical, kind);
        tree
    }

    fn grow(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        samples: Vec<usize>,
        categorical: &[bool],
        kind: TreeKind,
    ) -> usize {
        let id = self.nodes.len();
        let value = samples.iter().map(|&i| ys[i]).sum::<f64>() / samples.len().max(1) as f64;
        self.nodes.push(Node::Leaf {
            samples: Vec::new(),
            value,
        });
        match best_split(xs, ys, &samples, categorical, kind) {
            Some((param, rule)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&i| Self::goes_left(&rule, xs[i][param]));
                let left = self.grow(xs, ys, l, categorical, kind);
                let right = self.grow(xs, ys, r, categorical, kind);
                self.nodes[id] = Node::Split {
                    param,
                    rule,
                    left,
                    right,
                };
            }
            None => self.nodes[id] = Node::Leaf { samples, value },
        }
        id
    }
}

/// Sum of squared deviations (regression) or size-weighted Gini impurity
/// (classification) of a sample group.
fn impurity(ys: &[f64], idx: &[usize], kind: TreeKind) -> f64 {
    let n = idx.len() as f64;
    if idx.is_empty() {
        return 0.0;
    }
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    match kind {
        TreeKind::Regression => idx.iter().map(|&i| (ys[i] - mean).powi(2)).sum(),
        TreeKind::Classification => n * 2.0 * mean * (1.0 - mean),
    }
}

fn best_split(
    xs: &[Vec<f64>],
    ys: &[f64],
    samples: &[usize],
    categorical: &[bool],
    kind: TreeKind,
) -> Option<(usize, SplitRule)> {
    if samples.len() < 2 * MIN_LEAF {
        return None;
    }
    let parent = impurity(ys, samples, kind);
    if parent <= 1e-12 {
        return None;
    }
    let mut best: Option<(f64, usize, SplitRule)> = None;
    let mut consider = |param: usize, rule: SplitRule| {
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| Tree::goes_left(&rule, xs[i][param]));
        if l.len() < MIN_LEAF || r.len() < MIN_LEAF {
            return;
        }
        let score = impurity(ys, &l, kind) + impurity(ys, &r, kind);
        if score < parent - 1e-12 && best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, param, rule));
        }
    };
    for (param, &is_cat) in categorical.iter().enumerate() {
        if is_cat {
            // order present categories by mean target, then try each prefix
            let mut cats: Vec<usize> = samples.iter().map(|&i| xs[i][param] as usize).collect();
            cats.sort_unstable();
            cats.dedup();
            let mean_of = |c: usize| {
                let v: Vec<f64> = samples
                    .iter()
                    .filter(|&&i| xs[i][param] as usize == c)
                    .map(|&i| ys[i])
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            let mut ranked: Vec<(f64, usize)> = cats.iter().map(|&c| (mean_of(c), c)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for cut in 1..ranked.len() {
                let mut subset: Vec<usize> = ranked[..cut].iter().map(|r| r.1).collect();
                subset.sort_unstable();
                consider(param, SplitRule::Subset(subset));
            }
        } else {
            let mut vals: Vec<f64> = samples.iter().map(|&i| xs[i][param]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                consider(param, SplitRule::Threshold(0.5 * (w[0] + w[1])));
            }
        }
    }
    best.map(|(_, p, r)| (p, r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateForest {
    /// Absent when no feasible observation exists yet.
    pub regression: Option<Vec<Tree>>,
    /// Absent when no infeasible observation exists yet.
    pub feasibility: Option<Vec<Tree>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub p_feasible: f64,
}

fn bootstrap(n: usize, rng: &mut crate::Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn fit_trees(xs: &[Vec<f64>], ys: &[f64], categorical: &[bool], kind: TreeKind, rng: &mut crate::Rng) -> Vec<Tree> {
    (0..NUM_TREES)
        .map(|_| Tree::fit(xs, ys, bootstrap(xs.len(), rng), categorical, kind))
        .collect()
}

/// Fits both forests on the history. Observations without an objective only
/// feed the feasibility forest.
pub fn fit_forest(
    history: &[Observation],
    space: &DesignSpace,
    rng: &mut crate::Rng,
) -> Result<SurrogateForest, SearchError> {
    if history.len() < 2 {
        return Err(SearchError::Surrogate(format!(
            "need at least 2 observations, have {}",
            history.len()
        )));
    }
    let categorical: Vec<bool> = space.params.iter().map(|p| p.is_categorical()).collect();
    let encoded: Vec<Vec<f64>> = history.iter().map(|o| space.encode(&o.configuration)).collect();

    let regression = if history.iter().any(|o| o.feasible && o.objective.is_some()) {
        let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = history
            .iter()
            .zip(&encoded)
            .filter_map(|(o, x)| o.objective.map(|y| (x.clone(), y)))
            .collect();
        Some(fit_trees(&xs, &ys, &categorical, TreeKind::Regression, rng))
    } else {
        None
    };
    let feasibility = if history.iter().any(|o| !o.feasible) {
        let ys: Vec<f64> = history.iter().map(|o| if o.feasible { 1.0 } else { 0.0 }).collect();
        Some(fit_trees(&encoded, &ys, &categorical, TreeKind::Classification, rng))
    } else {
        None
    };
    Ok(SurrogateForest {
        regression,
        feasibility,
    })
}

/// Mean and population variance of a set of values.
/// Identical values give exactly that value and zero variance.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0))
}

impl SurrogateForest {
    pub fn predict_encoded(&self, x: &[f64]) -> Prediction {
        let (mean, variance) = match &self.regression {
            Some(trees) => {
                let preds: Vec<f64> = trees.iter().map(|t| t.predict(x)).collect();
                let (m, v) = mean_variance(&preds);
                (Some(m), Some(v))
            }
            None => (None, None),
        };
        let p_feasible = match &self.feasibility {
            Some(trees) => trees.iter().filter(|t| t.predict(x) >= 0.5).count() as f64 / trees.len() as f64,
            None => 1.0,
        };
        Prediction {
            mean,
            variance,
            p_feasible,
        }
    }
}

pub fn predict(forest: &SurrogateForest, space: &DesignSpace, x: &super::Configuration) -> Prediction {
    forest.predict_encoded(&space.encode(x))
}
