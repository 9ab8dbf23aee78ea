//! Match-action table programs for k-means and linear SVM models.
//!
//! Inputs are quantized to the program's fixed-point format and matched
//! against inclusive raw-integer ranges.

use std::fmt::Write as _;

use super::cgra::{malformed, num, range};
use super::fixed::QFormat;
use super::{Backend, CodegenError, GeneratedArtifact};
use crate::backends::{estimate_mat_kmeans, estimate_mat_svm, MatTarget};
use crate::models::{KMeansModel, SvmModel};

/// Value buckets per SVM feature table.
pub const SVM_BUCKETS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatModel {
    Kmeans,
    Svm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Cluster(usize),
    /// Raw fixed-point partial score.
    Score(i64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    /// One inclusive raw range per key of the table.
    pub ranges: Vec<(i64, i64)>,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub keys: Vec<usize>,
    pub entries: Vec<Entry>,
}

impl Table {
    fn lookup(&self, raw: &[i64]) -> Option<Action> {
        self.entries
            .iter()
            .find(|e| {
                e.ranges
                    .iter()
                    .zip(&self.keys)
                    .all(|(&(lo, hi), &k)| (lo..=hi).contains(&raw[k]))
            })
            .map(|e| e.action)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatProgram {
    pub model: MatModel,
    pub format: QFormat,
    pub inputs: usize,
    pub tables: Vec<Table>,
    /// k-means: cluster for inputs no table matches.
    pub default: Option<usize>,
    /// SVM: raw bias added to the summed scores.
    pub bias: i64,
}

/// Per-centroid axis-aligned boxes. Each other centroid is separated from
/// `c` along the feature where the two differ most; on that feature the box
/// stops at the midpoint toward the nearest such neighbor on each side.
pub fn kmeans_boxes(centroids: &[Vec<f64>]) -> Vec<Vec<(f64, f64)>> {
    let d = centroids.first().map_or(0, Vec::len);
    centroids
        .iter()
        .enumerate()
        .map(|(c, me)| {
            let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); d];
            for (o, other) in centroids.iter().enumerate() {
                if o == c {
                    continue;
                }
                let mut axis = 0;
                for j in 1..d {
                    if (me[j] - other[j]).abs() > (me[axis] - other[axis]).abs() {
                        axis = j;
                    }
                }
                let mid = 0.5 * (me[axis] + other[axis]);
                if other[axis] > me[axis] {
                    bounds[axis].1 = bounds[axis].1.min(mid);
                } else if other[axis] < me[axis] {
                    bounds[axis].0 = bounds[axis].0.max(mid);
                }
            }
            bounds
        })
        .collect()
}

/// Raw inclusive range for the half-open real interval `[lo, hi)`.
fn raw_range(lo: f64, hi: f64, q: QFormat) -> (i64, i64) {
    let a = if lo.is_finite() { q.quantize(lo) } else { q.min_raw() };
    let b = if hi.is_finite() {
        q.quantize(hi) - 1
    } else {
        q.max_raw()
    };
    (a, b)
}

pub fn emit_mat_kmeans(
    model: &KMeansModel,
    target: &MatTarget,
    format: QFormat,
) -> Result<GeneratedArtifact, CodegenError> {
    let k = model.k();
    let d = model.dims();
    if k == 0 || d == 0 {
        return Err(CodegenError::Unsupported(
            "k-means model needs k >= 1 and d >= 1".into(),
        ));
    }
    for a in 0..k {
        if (0..a).any(|b| model.centroids[a] == model.centroids[b]) {
            return Err(CodegenError::DuplicateCentroids);
        }
    }
    let boxes = kmeans_boxes(&model.centroids);
    let log_volume = |b: &Vec<(f64, f64)>| -> f64 {
        let (lo, hi) = (format.min_value(), format.max_value());
        b.iter().map(|&(a, z)| (z.min(hi) - a.max(lo)).max(0.0).ln()).sum()
    };
    let mut default = 0;
    for c in 1..k {
        if log_volume(&boxes[c]) > log_volume(&boxes[default]) {
            default = c;
        }
    }
    let mut tables = Vec::new();
    for (c, b) in boxes.iter().enumerate() {
        let ranges: Vec<(i64, i64)> = b.iter().map(|&(lo, hi)| raw_range(lo, hi, format)).collect();
        let entries = if ranges.iter().all(|(a, z)| a <= z) {
            vec![Entry {
                ranges,
                action: Action::Cluster(c),
            }]
        } else {
            vec![]
        };
        tables.push(Table {
            keys: (0..d).collect(),
            entries,
        });
    }
    let program = MatProgram {
        model: MatModel::Kmeans,
        format,
        inputs: d,
        tables,
        default: Some(default),
        bias: 0,
    };
    let (resources, perf) = estimate_mat_kmeans(k, target);
    Ok(GeneratedArtifact {
        backend: Backend::Mat,
        format,
        program_text: program.to_text(),
        weights: vec![],
        resources,
        perf,
    })
}

/// Bucket edges for one feature: `SVM_BUCKETS` equal slices of `[lo, hi]`.
fn bucket_edges(lo: f64, hi: f64) -> Vec<f64> {
    (0..=SVM_BUCKETS)
        .map(|b| lo + (hi - lo) * b as f64 / SVM_BUCKETS as f64)
        .collect()
}

/// `kept[i]` is the input column of `model.weights[i]`; `ranges[i]` is that
/// column's train-split value range. Edge buckets extend to the format's
/// limits; each bucket scores `w_i` times its midpoint.
pub fn emit_mat_svm(
    model: &SvmModel,
    kept: &[usize],
    ranges: &[(f64, f64)],
    inputs: usize,
    target: &MatTarget,
    format: QFormat,
) -> Result<GeneratedArtifact, CodegenError> {
    if model.weights.len() != kept.len() || kept.len() != ranges.len() || kept.iter().any(|&k| k >= inputs) {
        return Err(CodegenError::Unsupported(
            "svm weights, kept columns and ranges disagree".into(),
        ));
    }
    let mut tables = Vec::new();
    for ((&w, &col), &(lo, hi)) in model.weights.iter().zip(kept).zip(ranges) {
        let mut entries = Vec::new();
        if hi > lo {
            let edges = bucket_edges(lo, hi);
            for b in 0..SVM_BUCKETS {
                let mid = 0.5 * (edges[b] + edges[b + 1]);
                let start = if b == 0 { f64::NEG_INFINITY } else { edges[b] };
                let end = if b + 1 == SVM_BUCKETS {
                    f64::INFINITY
                } else {
                    edges[b + 1]
                };
                let (a, z) = raw_range(start, end, format);
                if a <= z {
                    entries.push(Entry {
                        ranges: vec![(a, z)],
                        action: Action::Score(format.quantize(w * mid)),
                    });
                }
            }
        } else {
            let (a, z) = raw_range(f64::NEG_INFINITY, f64::INFINITY, format);
            entries.push(Entry {
                ranges: vec![(a, z)],
                action: Action::Score(format.quantize(w * lo)),
            });
        }
        tables.push(Table {
            keys: vec![col],
            entries,
        });
    }
    let program = MatProgram {
        model: MatModel::Svm,
        format,
        inputs,
        tables,
        default: None,
        bias: format.quantize(model.bias),
    };
    let (resources, perf) = estimate_mat_svm(kept.len(), target);
    Ok(GeneratedArtifact {
        backend: Backend::Mat,
        format,
        program_text: program.to_text(),
        weights: vec![],
        resources,
        perf,
    })
}

impl MatProgram {
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "# generated match-action program");
        let _ = writeln!(t, "program mat v1");
        let _ = writeln!(
            t,
            "model {}",
            if self.model == MatModel::Kmeans {
                "kmeans"
            } else {
                "svm"
            }
        );
        let _ = writeln!(t, "format {}", self.format);
        let _ = writeln!(t, "input {}", self.inputs);
        for (i, table) in self.tables.iter().enumerate() {
            let keys: Vec<String> = table.keys.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(t, "table {i} keys {}", keys.join(" "));
            for e in &table.entries {
                let ranges: Vec<String> = e.ranges.iter().map(|(a, z)| format!("{a}..{z}")).collect();
                let action = match e.action {
                    Action::Cluster(c) => format!("cluster {c}"),
                    Action::Score(s) => format!("score {s}"),
                };
                let _ = writeln!(t, "  entry {} -> {action}", ranges.join(" "));
            }
            let _ = writeln!(t, "end");
        }
        match self.model {
            MatModel::Kmeans => {
                let _ = writeln!(t, "default cluster {}", self.default.unwrap_or(0));
            }
            MatModel::Svm => {
                let _ = writeln!(t, "bias {}", self.bias);
                let _ = writeln!(t, "threshold 0");
            }
        }
        t
    }

    pub fn parse(text: &str) -> Result<MatProgram, CodegenError> {
        let lines: Vec<(usize, Vec<&str>)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                (
                    i + 1,
                    l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>(),
                )
            })
            .filter(|(_, t)| !t.is_empty())
            .collect();
        let mut it = lines.into_iter().peekable();
        let mut next = |want: &str| -> Result<(usize, Vec<&str>), CodegenError> {
            let (line, t) = it
                .next()
                .ok_or_else(|| malformed(0, format!("expected `{want}`, program ended")))?;
            if t[0] != want {
                return Err(malformed(line, format!("expected `{want}`, found `{}`", t[0])));
            }
            Ok((line, t))
        };
        let (line, t) = next("program")?;
        if t[1..] != ["mat", "v1"] {
            return Err(malformed(line, "expected `program mat v1`".into()));
        }
        let (line, t) = next("model")?;
        let model = match t.get(1) {
            Some(&"kmeans") => MatModel::Kmeans,
            Some(&"svm") => MatModel::Svm,
            _ => return Err(malformed(line, "model must be kmeans or svm".into())),
        };
        let (line, t) = next("format")?;
        let format: QFormat = t
            .get(1)
            .ok_or_else(|| malformed(line, "missing format".into()))?
            .parse()
            .map_err(|m| malformed(line, m))?;
        let (line, t) = next("input")?;
        let inputs: usize = num(line, t.get(1))?;

        let mut tables = Vec::new();
        let mut default = None;
        let mut bias = 0;
        let mut threshold_seen = false;
        let mut current: Option<Table> = None;
        for (line, t) in it {
            match t[0] {
                "table" => {
                    if current.is_some() {
                        return Err(malformed(line, "table inside table".into()));
                    }
                    let idx: usize = num(line, t.get(1))?;
                    if idx != tables.len() || t.get(2) != Some(&"keys") {
                        return Err(malformed(line, "expected `table <next index> keys ...`".into()));
                    }
                    let keys = t[3..]
                        .iter()
                        .map(|k| num::<usize>(line, Some(k)))
                        .collect::<Result<Vec<_>, _>>()?;
                    if keys.is_empty() || keys.iter().any(|&k| k >= inputs) {
                        return Err(malformed(line, "table keys must name input columns".into()));
                    }
                    current = Some(Table { keys, entries: vec![] });
                }
                "entry" => {
                    let table = current
                        .as_mut()
                        .ok_or_else(|| malformed(line, "entry outside table".into()))?;
                    let n = table.keys.len();
                    if t.len() != n + 4 || t[n + 1] != "->" {
                        return Err(malformed(line, format!("entry needs {n} range(s), `->` and an action")));
                    }
                    let ranges = (0..n)
                        .map(|i| range(line, t.get(i + 1)))
                        .collect::<Result<Vec<_>, _>>()?;
                    if ranges.iter().any(|(a, z)| a > z) {
                        return Err(malformed(line, "empty range".into()));
                    }
                    let action = match (t[n + 2], model) {
                        ("cluster", MatModel::Kmeans) => Action::Cluster(num(line, t.get(n + 3))?),
                        ("score", MatModel::Svm) => Action::Score(num(line, t.get(n + 3))?),
                        (a, _) => return Err(malformed(line, format!("action `{a}` not valid here"))),
                    };
                    if n == 1
                        && table
                            .entries
                            .iter()
                            .any(|e| e.ranges[0].0 <= ranges[0].1 && ranges[0].0 <= e.ranges[0].1)
                    {
                        return Err(malformed(line, "overlapping ranges in one table".into()));
                    }
                    table.entries.push(Entry { ranges, action });
                }
                "end" => tables.push(
                    current
                        .take()
                        .ok_or_else(|| malformed(line, "`end` outside table".into()))?,
                ),
                "default" if model == MatModel::Kmeans && t.get(1) == Some(&"cluster") => {
                    default = Some(num(line, t.get(2))?)
                }
                "bias" if model == MatModel::Svm => bias = num(line, t.get(1))?,
                "threshold" if model == MatModel::Svm => {
                    if num::<i64>(line, t.get(1))? != 0 {
                        return Err(malformed(line, "only threshold 0 is supported".into()));
                    }
                    threshold_seen = true;
                }
                other => return Err(malformed(line, format!("unexpected `{other}`"))),
            }
        }
        if current.is_some() {
            return Err(malformed(0, "unterminated table".into()));
        }
        if tables.is_empty() {
            return Err(CodegenError::NoTables);
        }
        match model {
            MatModel::Kmeans if default.is_none() => return Err(malformed(0, "missing `default cluster`".into())),
            MatModel::Svm if !threshold_seen => return Err(malformed(0, "missing `threshold 0`".into())),
            _ => {}
        }
        Ok(MatProgram {
            model,
            format,
            inputs,
            tables,
            default,
            bias,
        })
    }

    pub fn classify(&self, row: &[f64]) -> Result<usize, CodegenError> {
        if row.len() != self.inputs {
            return Err(CodegenError::Width {
                expected: self.inputs,
                found: row.len(),
            });
        }
        let q = self.format;
        let raw: Vec<i64> = row.iter().map(|&x| q.quantize(x)).collect();
        match self.model {
            MatModel::Kmeans => {
                for table in &self.tables {
                    if let Some(Action::Cluster(c)) = table.lookup(&raw) {
                        return Ok(c);
                    }
                }
                Ok(self.default.unwrap_or(0))
            }
            MatModel::Svm => {
                let mut score = self.bias;
                for table in &self.tables {
                    if let Some(Action::Score(s)) = table.lookup(&raw) {
                        score = q.add(score, s);
                    }
                }
                Ok((score >= 0) as usize)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn km(centroids: Vec<Vec<f64>>) -> KMeansModel {
        KMeansModel {
            centroids,
            wcss_trace: vec![],
        }
    }

    fn run(art: &GeneratedArtifact, row: &[f64]) -> usize {
        MatProgram::parse(&art.program_text).unwrap().classify(row).unwrap()
    }

    #[test]
    fn single_cluster_takes_everything() {
        let art = emit_mat_kmeans(&km(vec![vec![3.0, -1.0]]), &MatTarget::new(4), QFormat::Q8_8).unwrap();
        for row in [[0.0, 0.0], [-500.0, 90.0], [127.0, -128.0]] {
            assert_eq!(run(&art, &row), 0);
        }
        assert_eq!(art.resources.mats, 1);
    }

    #[test]
    fn two_clusters_split_at_zero() {
        let art = emit_mat_kmeans(&km(vec![vec![-1.0], vec![1.0]]), &MatTarget::new(4), QFormat::Q8_8).unwrap();
        assert_eq!(run(&art, &[-0.5]), 0);
        assert_eq!(run(&art, &[-3.0]), 0);
        assert_eq!(run(&art, &[0.5]), 1);
        assert_eq!(run(&art, &[0.0]), 1);
        assert_eq!(run(&art, &[1e6]), 1);
    }

    #[test]
    fn duplicate_centroids_rejected() {
        let r = emit_mat_kmeans(&km(vec![vec![1.0], vec![1.0]]), &MatTarget::new(4), QFormat::Q8_8);
        assert_eq!(r, Err(CodegenError::DuplicateCentroids));
    }

    #[test]
    fn svm_sign_rule() {
        let m = SvmModel {
            weights: vec![1.0],
            bias: 0.0,
        };
        let art = emit_mat_svm(&m, &[0], &[(-2.0, 2.0)], 1, &MatTarget::new(4), QFormat::Q8_8).unwrap();
        assert_eq!(run(&art, &[1.5]), 1);
        assert_eq!(run(&art, &[0.4]), 1);
        assert_eq!(run(&art, &[-0.4]), 0);
        assert_eq!(run(&art, &[-40.0]), 0);
    }

    #[test]
    fn svm_bucket_midpoint_score() {
        // range [0, 8] in 16 buckets of 0.5: [0.5, 1.0) is bucket 1
        let m = SvmModel {
            weights: vec![2.0],
            bias: 0.0,
        };
        let art = emit_mat_svm(&m, &[0], &[(0.0, 8.0)], 1, &MatTarget::new(4), QFormat::Q8_8).unwrap();
        let prog = MatProgram::parse(&art.program_text).unwrap();
        let raw = QFormat::Q8_8.quantize(0.7);
        let Some(Action::Score(s)) = prog.tables[0].lookup(&[raw]) else {
            panic!("no match")
        };
        assert_eq!(s, QFormat::Q8_8.quantize(1.5));
        assert_eq!(s, 384);
    }

    #[test]
    fn svm_tables_key_on_kept_columns() {
        let m = SvmModel {
            weights: vec![-1.0],
            bias: 0.25,
        };
        let art = emit_mat_svm(&m, &[2], &[(-1.0, 1.0)], 3, &MatTarget::new(4), QFormat::Q8_8).unwrap();
        assert_eq!(art.resources.mats, 1);
        assert_eq!(run(&art, &[9.0, 9.0, -0.9]), 1);
        assert_eq!(run(&art, &[-9.0, -9.0, 0.9]), 0);
    }

    #[test]
    fn malformed_mat_programs() {
        assert!(matches!(
            MatProgram::parse("program mat v1\nmodel svm\nformat q8.8\ninput 1\nbias 0\nthreshold 0\n"),
            Err(CodegenError::NoTables)
        ));
        assert!(MatProgram::parse("program mat v1\nmodel svm\n").is_err());
        let overlapping = "program mat v1\nmodel svm\nformat q8.8\ninput 1\ntable 0 keys 0\n  entry 0..10 -> score 1\n  entry 5..20 -> score 1\nend\nbias 0\nthreshold 0\n";
        assert!(MatProgram::parse(overlapping).is_err());
    }
}
