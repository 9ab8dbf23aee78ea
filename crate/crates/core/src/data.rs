//! Labeled datasets: CSV ingestion, preprocessing, splitting and synthetic
//! blob generation.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeded_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: row {row}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: label `{value}` is not a declared class")]
    UnknownLabel { path: PathBuf, row: usize, value: String },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("invalid dataset descriptor: {0}")]
    Descriptor(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    features: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset from row-major features and checks every invariant.
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self, DataError> {
        let width = feature_names.len();
        if width == 0 {
            return Err(DataError::Invalid("no feature columns".into()));
        }
        if features.len() != width * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        let n = labels.len();
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.test) {
            if i >= n || seen[i] {
                return Err(DataError::Invalid("split is not a partition of the rows".into()));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(DataError::Invalid("split does not cover every row".into()));
        }
        Ok(Dataset {
            feature_names,
            features,
            labels,
            class_names,
            split,
        })
    }

    pub fn from_rows(
        feature_names: Vec<String>,
        rows: &[Vec<f64>],
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self, DataError> {
        let width = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(DataError::Invalid(format!(
                "row of width {} in a dataset of width {width}",
                r.len()
            )));
        }
        let flat = rows.iter().flatten().copied().collect();
        Dataset::new(feature_names, flat, labels, class_names, split)
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.width())
    }

    pub fn train(&self) -> &[usize] {
        &self.split.train
    }

    pub fn test(&self) -> &[usize] {
        &self.split.test
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Copy restricted to the given feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Dataset {
        let names = columns.iter().map(|&c| self.feature_names[c].clone()).collect();
        let features = self.rows().flat_map(|r| columns.iter().map(move |&c| r[c])).collect();
        Dataset {
            feature_names: names,
            features,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        }
    }

    /// Copy with a fresh seeded split.
    pub fn resplit(&self, test_fraction: f64, seed: u64) -> Dataset {
        let mut out = self.clone();
        out.split = random_split(self.len(), test_fraction, seed);
        out
    }

    /// Per-column (min, max) over the train split.
    pub fn train_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.width())
            .map(|c| {
                self.split
                    .train
                    .iter()
                    .map(|&i| self.row(i)[c])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }

    fn apply_columnwise(&mut self, f: impl Fn(usize, f64) -> f64) {
        let w = self.width();
        for row in self.features.chunks_exact_mut(w) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(c, *v);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    None,
    Minmax,
    #[default]
    Zscore,
}

/// Normalization statistics fitted on a train split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mode: Normalize,
    /// (offset, scale) per column; scale 0 marks a constant column.
    pub params: Vec<(f64, f64)>,
}

impl Normalizer {
    pub fn fit(data: &Dataset, mode: Normalize) -> Normalizer {
        let train = data.train();
        let params = (0..data.width())
            .map(|c| {
                let col: Vec<f64> = train.iter().map(|&i| data.row(i)[c]).collect();
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                if col.is_empty() || lo == hi {
                    return (if col.is_empty() { 0.0 } else { lo }, 0.0);
                }
                match mode {
                    Normalize::None => (0.0, 1.0),
                    Normalize::Minmax => (lo, hi - lo),
                    Normalize::Zscore => {
                        let n = col.len() as f64;
                        let mean = col.iter().sum::<f64>() / n;
                        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        (mean, var.sqrt())
                    }
                }
            })
            .collect();
        Normalizer { mode, params }
    }

    pub fn apply(&self, data: &mut Dataset) {
        if self.mode == Normalize::None {
            return;
        }
        data.apply_columnwise(|c, v| {
            let (offset, scale) = self.params[c];
            if scale == 0.0 {
                0.0
            } else {
                (v - offset) / scale
            }
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarize {
    /// Listed classes map to 1, everything else to 0.
    Positive(Vec<String>),
    /// Listed classes map to 0, everything else to 1.
    Negative(Vec<String>),
}

impl Binarize {
    fn is_positive(&self, label: &str) -> bool {
        match self {
            Binarize::Positive(set) => set.iter().any(|s| s == label),
            Binarize::Negative(set) => !set.iter().any(|s| s == label),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub normalize: Normalize,
    pub binarize: Option<Binarize>,
    pub test_fraction: f64,
    pub shuffle_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            normalize: Normalize::Zscore,
            binarize: None,
            test_fraction: 0.2,
            shuffle_seed: 0,
        }
    }
}

/// Which CSV columns play which role.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub label: String,
    /// Feature columns in order; `None` means every non-label column.
    pub features: Option<Vec<String>>,
    /// Columns integer-coded by order of first appearance.
    pub categorical: Vec<String>,
    /// Declared label values; labels outside this set are errors.
    pub classes: Option<Vec<String>>,
    /// Column names for header-less files.
    pub header: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Dataset descriptor file: either a CSV source (optionally with a separate
/// published test file) or a synthetic blob generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categorical: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarize: Option<Binarize>,
    #[serde(default)]
    pub normalize: Normalize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobsConfig>,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetDescriptor {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Descriptor(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            normalize: self.normalize,
            binarize: self.binarize.clone(),
            test_fraction: self.test_fraction,
            shuffle_seed: self.seed,
        }
    }

    /// Every file the descriptor reads, resolved against `base`.
    pub fn input_files(&self, base: &Path) -> Vec<PathBuf> {
        self.csv.iter().chain(&self.test_csv).map(|p| base.join(p)).collect()
    }

    /// Loads the described dataset; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset, DataError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DataError::Descriptor(format!(
                "test_fraction {} not in (0,1)",
                self.test_fraction
            )));
        }
        match (&self.blobs, &self.csv) {
            (Some(_), Some(_)) => Err(DataError::Descriptor("give either `csv` or `blobs`, not both".into())),
            (None, None) => Err(DataError::Descriptor("one of `csv` or `blobs` is required".into())),
            (Some(b), None) => {
                let mut data = synth_blobs(b.k, b.n, b.d, b.spread, b.seed)?.resplit(self.test_fraction, self.seed);
                if let Some(bin) = &self.binarize {
                    let mapped: Vec<usize> = data
                        .labels
                        .iter()
                        .map(|&l| bin.is_positive(&data.class_names[l]) as usize)
                        .collect();
                    data.labels = mapped;
                    data.class_names = vec!["0".into(), "1".into()];
                }
                Normalizer::fit(&data, self.normalize).apply(&mut data);
                Ok(data)
            }
            (None, Some(csv)) => {
                let label = self
                    .label
                    .clone()
                    .ok_or_else(|| DataError::Descriptor("`label` column is required".into()))?;
                let roles = ColumnRoles {
                    label,
                    features: self.features.clone(),
                    categorical: self.categorical.clone(),
                    classes: self.classes.clone(),
                    header: self.columns.clone(),
                };
                let train = base.join(csv);
                match &self.test_csv {
                    None => load_csv(&train, &roles, &self.preprocess()),
                    Some(test) => load_csv_pair(&train, &base.join(test), &roles, &self.preprocess()),
                }
            }
        }
    }
}

/// Seeded shuffle split; the test side gets round(n * fraction) rows,
/// clamped so both sides are nonempty when n >= 2.
pub fn random_split(n: usize, test_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    if n >= 2 {
        n_test = n_test.clamp(1, n - 1);
    } else {
        n_test = 0;
    }
    let test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    Split { train, test }
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path, header: Option<&[String]>) -> Result<CsvTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header.is_none())
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(source) => DataError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                _ => unreachable!(),
            },
            _ => DataError::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
    let header = match header {
        Some(h) => h.to_vec(),
        None => reader
            .headers()
            .map_err(|source| DataError::Csv {
                path: path.to_path_buf(),
                source,
            })?
            .iter()
            .map(str::to_string)
            .collect(),
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { header, rows })
}

/// Decodes raw CSV tables into one dataset; rows of all tables are
/// concatenated in order and categorical codes are shared across tables.
fn decode_tables(
    tables: &[(PathBuf, CsvTable)],
    roles: &ColumnRoles,
    pre: &PreprocessConfig,
) -> Result<(Vec<String>, Vec<f64>, Vec<usize>, Vec<String>), DataError> {
    let header = &tables[0].1.header;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_col = col(&roles.label)?;
    let feature_names: Vec<String> = match &roles.features {
        Some(f) => f.clone(),
        None => header.iter().filter(|h| **h != roles.label).cloned().collect(),
    };
    let feature_cols = feature_names.iter().map(|f| col(f)).collect::<Result<Vec<_>, _>>()?;
    for c in &roles.categorical {
        col(c)?;
    }
    let categorical: Vec<bool> = feature_names.iter().map(|f| roles.categorical.contains(f)).collect();
    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_cols.len()];

    let mut class_names: Vec<String> = roles.classes.clone().unwrap_or_default();
    let mut features = Vec::new();
    let mut raw_labels: Vec<usize> = Vec::new();
    for (path, table) in tables {
        if table.header != *header {
            return Err(DataError::Invalid(format!(
                "{}: header differs from the first file",
                path.display()
            )));
        }
        for (r, row) in table.rows.iter().enumerate() {
            let line = r + 1;
            if row.len() != header.len() {
                return Err(DataError::Invalid(format!(
                    "{}: row {line} has {} cells, expected {}",
                    path.display(),
                    row.len(),
                    header.len()
                )));
            }
            for (j, &c) in feature_cols.iter().enumerate() {
                let cell = &row[c];
                let v = if categorical[j] {
                    let next = codes[j].len();
                    *codes[j].entry(cell.clone()).or_insert(next) as f64
                } else {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| DataError::NonNumeric {
                            path: path.clone(),
                            row: line,
                            column: feature_names[j].clone(),
                            value: cell.clone(),
                        })?
                };
                features.push(v);
            }
            let value = &row[label_col];
            let idx = match class_names.iter().position(|c| c == value) {
                Some(i) => i,
                None if roles.classes.is_some() => {
                    return Err(DataError::UnknownLabel {
                        path: path.clone(),
                        row: line,
                        value: value.clone(),
                    })
                }
                None => {
                    class_names.push(value.clone());
                    class_names.len() - 1
                }
            };
            raw_labels.push(idx);
        }
    }
    let (labels, class_names) = match &pre.binarize {
        Some(bin) => {
            let labels = raw_labels
                .iter()
                .map(|&l| bin.is_positive(&class_names[l]) as usize)
                .collect();
            (labels, vec!["0".to_string(), "1".to_string()])
        }
        None => (raw_labels, class_names),
    };
    Ok((feature_names, features, labels, class_names))
}

/// Loads one CSV file, splits it with a seeded shuffle and normalizes with
/// statistics from the train split.
pub fn load_csv(path: &Path, roles: &ColumnRoles, pre: &PreprocessConfig) -> Result<Dataset, DataError> {
    check_fraction(pre)?;
    let table = read_table(path, roles.header.as_deref())?;
    let tables = [(path.to_path_buf(), table)];
    let (names, features, labels, classes) = decode_tables(&tables, roles, pre)?;
    let split = random_split(labels.len(), pre.test_fraction, pre.shuffle_seed);
    finish(names, features, labels, classes, split, pre)
}

/// Loads a published train/test pair; the split follows the files.
pub fn load_csv_pair(
    train: &Path,
    test: &Path,
    roles: &ColumnRoles,
    pre: &PreprocessConfig,
) -> Result<Dataset, DataError> {
    let tables = [
        (train.to_path_buf(), read_table(train, roles.header.as_deref())?),
        (test.to_path_buf(), read_table(test, roles.header.as_deref())?),
    ];
    let n_train = tables[0].1.rows.len();
    let (names, features, labels, classes) = decode_tables(&tables, roles, pre)?;
    let split = Split {
        train: (0..n_train).collect(),
        test: (n_train..labels.len()).collect(),
    };
    finish(names, features, labels, classes, split, pre)
}

fn check_fraction(pre: &PreprocessConfig) -> Result<(), DataError> {
    if pre.test_fraction > 0.0 && pre.test_fraction < 1.0 {
        Ok(())
    } else {
        Err(DataError::Descriptor(format!(
            "test_fraction {} not in (0,1)",
            pre.test_fraction
        )))
    }
}

fn finish(
    names: Vec<String>,
    features: Vec<f64>,
    labels: Vec<usize>,
    classes: Vec<String>,
    split: Split,
    pre: &PreprocessConfig,
) -> Result<Dataset, DataError> {
    let mut data = Dataset::new(names, features, labels, classes, split)?;
    Normalizer::fit(&data, pre.normalize).apply(&mut data);
    Ok(data)
}

/// `k` isotropic Gaussian clusters in `d` dimensions. Row `i` belongs to
/// cluster `i % k`; the split is a seeded 80/20 shuffle.
pub fn synth_blobs(k: usize, n: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset, DataError> {
    if k < 1 || n < k || d < 1 {
        return Err(DataError::Invalid(format!(
            "synth_blobs needs k >= 1, n >= k, d >= 1 (got k={k}, n={n}, d={d})"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(DataError::Invalid(format!("spread {spread} must be finite and >= 0")));
    }
    let mut rng = seeded_rng(seed);
    const BOX: f64 = 10.0;
    const MIN_SEPARATION: f64 = 4.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..200 {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-BOX..BOX)).collect();
            let gap = centers
                .iter()
                .map(|o| dist2(o, &c).sqrt())
                .fold(f64::INFINITY, f64::min);
            if gap >= MIN_SEPARATION {
                best = Some((gap, c));
                break;
            }
            if best.as_ref().is_none_or(|(g, _)| gap > *g) && gap > 0.0 {
                best = Some((gap, c));
            }
        }
        let (_, c) = best.expect("a nonzero-gap center is always found");
        centers.push(c);
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for &mu in &centers[c] {
            features.push(mu + spread * noise.sample(&mut rng));
        }
        labels.push(c);
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    let classes = (0..k).map(|c| c.to_string()).collect();
    Dataset::new(names, features, labels, classes, random_split(n, 0.2, seed))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Jaccard similarity of the two feature-name sets.
pub fn feature_overlap(a: &Dataset, b: &Dataset) -> f64 {
    name_overlap(&a.feature_names, &b.feature_names)
}

pub fn name_overlap(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let b: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}
