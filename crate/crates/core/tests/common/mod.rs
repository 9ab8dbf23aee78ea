#![allow(dead_code)]

use planeml::data::{random_split, Dataset};
use planeml::seeded_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Rows with standard-normal features labelled by the sign of `coef · x`.
pub fn linear_data(coef: &[f64], n: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = coef.iter().map(|_| noise.sample(&mut rng)).collect();
        let s: f64 = row.iter().zip(coef).map(|(x, c)| x * c).sum();
        labels.push((s >= 0.0) as usize);
        rows.push(row);
    }
    let names = (0..coef.len()).map(|j| format!("f{j}")).collect();
    Dataset::from_rows(
        names,
        &rows,
        labels,
        vec!["0".into(), "1".into()],
        random_split(n, 0.2, seed),
    )
    .unwrap()
}

/// Feature 0 is ±2 plus small noise and decides the label; the rest is noise.
pub fn first_feature_separates(d: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_range(0..2usize);
        let mut row = vec![if label == 1 { 2.0 } else { -2.0 } + 0.3 * noise.sample(&mut rng)];
        row.extend((1..d).map(|_| noise.sample(&mut rng)));
        rows.push(row);
        labels.push(label);
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    Dataset::from_rows(
        names,
        &rows,
        labels,
        vec!["0".into(), "1".into()],
        random_split(n, 0.2, seed),
    )
    .unwrap()
}
