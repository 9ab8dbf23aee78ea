//! Lloyd's k-means with k-means++ seeding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Dataset;
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    /// `k` rows of `d` coordinates.
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    #[serde(default)]
    pub wcss_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dims(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, row: &[f64]) -> usize {
        nearest(&self.centroids, row).0
    }

    pub fn param_count(&self) -> usize {
        self.k() * self.dims()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, row);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, rng: &mut crate::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Index of the point farthest from its assigned centroid, skipping `taken`.
fn farthest_point(points: &[&[f64]], assign: &[usize], centroids: &[Vec<f64>], taken: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if taken.contains(&i) {
            continue;
        }
        let d = dist2(p, &centroids[assign[i]]);
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Fits on the train split. Empty or duplicated clusters are reseeded to the
/// point farthest from its centroid so that exactly `k` distinct centroids
/// come out.
pub fn train_kmeans(cfg: &KMeansConfig, data: &Dataset) -> Result<KMeansModel, ModelError> {
    let points: Vec<&[f64]> = data.train().iter().map(|&i| data.row(i)).collect();
    if cfg.k == 0 {
        return Err(ModelError::Config("k must be >= 1".into()));
    }
    if cfg.k > points.len() {
        return Err(ModelError::Config(format!(
            "k = {} exceeds {} train rows",
            cfg.k,
            points.len()
        )));
    }
    let d = data.width();
    let mut rng = seeded_rng(cfg.seed);
    let mut centroids = plus_plus_seeds(&points, cfg.k, &mut rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut trace = Vec::new();

    for _ in 0..cfg.max_iters.max(1) {
        let mut wcss = 0.0;
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (c, dd) = nearest(&centroids, p);
                wcss += dd;
                c
            })
            .collect();
        trace.push(wcss);
        if next == assign {
            break;
        }
        assign = next;

        let mut sums = vec![vec![0.0; d]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..cfg.k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut taken = Vec::new();
        for c in 0..cfg.k {
            let duplicate = (0..c).any(|o| centroids[o] == centroids[c]);
            if counts[c] == 0 || duplicate {
                let i = farthest_point(&points, &assign, &centroids, &taken)
                    .ok_or_else(|| ModelError::Data("not enough distinct points to reseed a cluster".into()))?;
                taken.push(i);
                centroids[c] = points[i].to_vec();
            }
        }
    }
    for c in 0..cfg.k {
        if (0..c).any(|o| centroids[o] == centroids[c]) {
            return Err(ModelError::Data(format!(
                "k = {} exceeds the number of distinct train points",
                cfg.k
            )));
        }
    }
    if centroids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::Diverged { epoch: 0 });
    }
    Ok(KMeansModel {
        centroids,
        wcss_trace: trace,
    })
}
