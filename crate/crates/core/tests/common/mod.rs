#![allow(dead_code)]

use mmpca_core::kframe::angle_count;
use mmpca_core::{Dataset, GivensAngles, MaskedMatrix, ModelParams, View, ViewGraph};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn graph(dims: &[usize], links: Vec<(usize, usize)>) -> ViewGraph {
    let views = dims
        .iter()
        .enumerate()
        .map(|(i, &dim)| View {
            name: format!("v{i}"),
            dim,
        })
        .collect();
    ViewGraph::new(views, links).unwrap()
}

pub fn single(x: DMatrix<f64>) -> Dataset<f64> {
    let g = graph(&[x.nrows(), x.ncols()], vec![(0, 1)]);
    Dataset::new(g, vec![MaskedMatrix::fully_observed(x).unwrap()]).unwrap()
}

/// Random view graph touching every view, with random masked Gaussian data.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_v: usize, max_p: usize, min_p: usize, missing: f64) -> Dataset<f64> {
    let dims: Vec<usize> = (0..n_v).map(|_| rng.random_range(min_p..=max_p)).collect();
    let mut pairs: Vec<(usize, usize)> = (0..n_v)
        .flat_map(|i| (0..n_v).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    let mut links = Vec::new();
    let mut touched = vec![false; n_v];
    for &(i, j) in &pairs {
        let dup = links.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
        if dup {
            continue;
        }
        if !touched[i] || !touched[j] || rng.random_bool(0.3) {
            links.push((i, j));
            touched[i] = true;
            touched[j] = true;
        }
    }
    let g = graph(&dims, links.clone());
    let mats = links
        .iter()
        .map(|&(i, j)| {
            let values = gaussian(rng, dims[i], dims[j]);
            let mut observed = DMatrix::from_fn(dims[i], dims[j], |_, _| !rng.random_bool(missing));
            observed[(0, 0)] = true;
            MaskedMatrix::new(values, observed).unwrap()
        })
        .collect();
    Dataset::new(g, mats).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, dims: &[usize], k: usize) -> ModelParams<f64> {
    let xi = dims
        .iter()
        .map(|&p| {
            let a = (0..angle_count(p, k)).map(|_| rng.random_range(-3.0..3.0)).collect();
            GivensAngles::from_vec(p, k, a).unwrap()
        })
        .collect();
    let d = dims
        .iter()
        .map(|_| DVector::from_fn(k, |_, _| rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }))
        .collect();
    ModelParams::new(k, xi, d).unwrap()
}

/// Rank-`k` SVD truncation error `Σ_{c>k} σ_c²`.
pub fn eckart_young(x: &DMatrix<f64>, k: usize) -> f64 {
    let mut s: Vec<f64> = x.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.iter().skip(k).map(|v| v * v).sum()
}
