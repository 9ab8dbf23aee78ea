use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1,
    MacroF1,
    VMeasure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// 2TP / (2TP + FP + FN), 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCounts {
    Confusion(Confusion),
    PerClass(Vec<Confusion>),
    /// `table[class][cluster]`
    Contingency(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    pub counts: MetricCounts,
}

impl MetricReport {
    /// Recomputes the value from the stored counts.
    pub fn recompute(&self) -> f64 {
        match &self.counts {
            MetricCounts::Confusion(c) => c.f1(),
            MetricCounts::PerClass(cs) => {
                if cs.is_empty() {
                    0.0
                } else {
                    cs.iter().map(Confusion::f1).sum::<f64>() / cs.len() as f64
                }
            }
            MetricCounts::Contingency(t) => v_measure_from_table(t),
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), ModelError> {
    if a != b {
        return Err(ModelError::Shape(format!("{a} predictions for {b} labels")));
    }
    Ok(())
}

fn confusion_for(predictions: &[usize], labels: &[usize], positive: usize) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == positive, y == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Binary F1 with class 1 as the positive class.
pub fn f1_score(predictions: &[usize], labels: &[usize]) -> Result<MetricReport, ModelError> {
    check_lengths(predictions.len(), labels.len())?;
    if labels.iter().chain(predictions).any(|&l| l > 1) {
        return Err(ModelError::Data("f1_score expects binary labels".into()));
    }
    let c = confusion_for(predictions, labels, 1);
    Ok(MetricReport {
        kind: MetricKind::F1,
        value: c.f1(),
        counts: MetricCounts::Confusion(c),
    })
}

/// Unweighted mean of per-class one-vs-rest F1 scores.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricReport, ModelError> {
    check_lengths(predictions.len(), labels.len())?;
    let per: Vec<Confusion> = (0..num_classes)
        .map(|c| confusion_for(predictions, labels, c))
        .collect();
    let report = MetricReport {
        kind: MetricKind::MacroF1,
        value: 0.0,
        counts: MetricCounts::PerClass(per),
    };
    Ok(MetricReport {
        value: report.recompute(),
        ..report
    })
}

/// Binary F1 for two classes, macro F1 otherwise.
pub fn classification_score(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricReport, ModelError> {
    if num_classes <= 2 {
        f1_score(predictions, labels)
    } else {
        macro_f1(predictions, labels, num_classes)
    }
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

fn v_measure_from_table(table: &[Vec<usize>]) -> f64 {
    let n: usize = table.iter().flatten().sum();
    if n == 0 {
        return 1.0;
    }
    let total = n as f64;
    let clusters = table.first().map_or(0, Vec::len);
    let class_sizes: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cluster_sizes: Vec<usize> = (0..clusters).map(|k| table.iter().map(|r| r[k]).sum()).collect();

    let h_c = entropy(class_sizes.iter().copied(), total);
    let h_k = entropy(cluster_sizes.iter().copied(), total);
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (c, row) in table.iter().enumerate() {
        for (k, &nck) in row.iter().enumerate() {
            if nck == 0 {
                continue;
            }
            let joint = nck as f64 / total;
            h_c_given_k -= joint * (nck as f64 / cluster_sizes[k] as f64).ln();
            h_k_given_c -= joint * (nck as f64 / class_sizes[c] as f64).ln();
        }
    }
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    if homogeneity + completeness == 0.0 {
        0.0
    } else {
        (2.0 * homogeneity * completeness / (homogeneity + completeness)).clamp(0.0, 1.0)
    }
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure(clusters: &[usize], labels: &[usize]) -> Result<MetricReport, ModelError> {
    check_lengths(clusters.len(), labels.len())?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n_clusters = clusters.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; n_clusters]; n_classes];
    for (&k, &c) in clusters.iter().zip(labels) {
        table[c][k] += 1;
    }
    let value = v_measure_from_table(&table);
    Ok(MetricReport {
        kind: MetricKind::VMeasure,
        value,
        counts: MetricCounts::Contingency(table),
    })
}
