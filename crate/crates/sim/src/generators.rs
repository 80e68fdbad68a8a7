//! Synthetic data for the three benchmark studies.

use crate::SimError;
use mmpca_core::{Dataset, MaskedMatrix, View, ViewGraph};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

fn dataset(views: Vec<View>, links: Vec<(usize, usize)>, matrices: &[DMatrix<f64>]) -> Dataset<f64> {
    let graph = ViewGraph::new(views, links).expect("generator graphs are valid");
    let mats = matrices
        .iter()
        .map(|x| MaskedMatrix::fully_observed(x.clone()).expect("generated values are finite"))
        .collect();
    Dataset::new(graph, mats).expect("generated shapes match the graph")
}

fn view(name: &str, dim: usize) -> View {
    View {
        name: name.to_string(),
        dim,
    }
}

/// Noise multiplier giving `‖signal‖_F / ‖c·noise‖_F = snr` exactly.
fn noise_scale(signal: &DMatrix<f64>, noise: &DMatrix<f64>, snr: f64) -> f64 {
    signal.norm() / (snr * noise.norm())
}

fn check_snr(snr: f64) -> Result<(), SimError> {
    if snr.is_finite() && snr > 0.0 {
        Ok(())
    } else {
        Err(SimError::Invalid(format!("signal-to-noise ratio must be positive, got {snr}")))
    }
}

/// Generated data with its noiseless signal and added noise, per matrix.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset<f64>,
    pub signal: Vec<DMatrix<f64>>,
    pub noise: Vec<DMatrix<f64>>,
}

/// Four 10×10 cohort matrices over a shared feature view. Cohorts 1 and 2
/// share one feature direction, cohorts 3 and 4 another.
#[derive(Clone, Debug)]
pub struct Sim1 {
    pub data: Generated,
    /// 2×5 indicator of which views each true component touches.
    pub truth: DMatrix<f64>,
    pub noise_scale: Vec<f64>,
}

pub const SIM1_SIZE: usize = 10;

pub fn gen_sim1(snr: f64, seed: u64) -> Result<Sim1, SimError> {
    check_snr(snr)?;
    let n = SIM1_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let va = unit_gaussian(&mut rng, n);
    let vb = unit_gaussian(&mut rng, n);
    let mut signal = Vec::with_capacity(4);
    let mut noise = Vec::with_capacity(4);
    let mut scales = Vec::with_capacity(4);
    for i in 0..4 {
        let u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = if i < 2 { &va } else { &vb };
        let s = &u * v.transpose();
        let e = gaussian(&mut rng, n, n);
        let c = noise_scale(&s, &e, snr);
        noise.push(e * c);
        signal.push(s);
        scales.push(c);
    }
    let matrices: Vec<DMatrix<f64>> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let views = vec![
        view("cohort1", n),
        view("cohort2", n),
        view("cohort3", n),
        view("cohort4", n),
        view("features", n),
    ];
    let links = vec![(0, 4), (1, 4), (2, 4), (3, 4)];
    Ok(Sim1 {
        data: Generated {
            dataset: dataset(views, links, &matrices),
            signal,
            noise,
        },
        truth: DMatrix::from_row_slice(2, 5, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        noise_scale: scales,
    })
}

/// Three cohorts of `p` observations over `n` features. Each observation
/// lies along the shared direction `v4` or along its cohort's own direction;
/// the three own directions meet at pairwise angles of π/3.
#[derive(Clone, Debug)]
pub struct Sim2 {
    pub data: Generated,
    /// `v1, v2, v3` (individual) and `v4` (joint), unit vectors in `R^n`.
    pub directions: [DVector<f64>; 4],
    /// Top right singular vector of the stacked noise.
    pub noise_direction: DVector<f64>,
    pub joint_rows: usize,
}

pub const SIM2_NOISE_SD: f64 = 0.05;

/// Number of joint rows: `p · p_joint` rounded half away from zero.
pub fn joint_row_count(p: usize, p_joint: f64) -> usize {
    (p as f64 * p_joint).round() as usize
}

/// Three unit vectors with pairwise inner product 1/2, as `Q · G^{1/2}` for
/// a random orthonormal `Q`.
fn equiangular_triple(rng: &mut ChaCha8Rng, n: usize) -> [DVector<f64>; 3] {
    let q = gaussian(rng, n, 3).qr().q();
    let gram = DMatrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.5 });
    let eig = SymmetricEigen::new(gram);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
    let v = q * root;
    [0, 1, 2].map(|c| v.column(c).into_owned())
}

pub fn top_right_singular_vector(x: &DMatrix<f64>) -> DVector<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("right vectors requested");
    let best = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &s)| if s > b.1 { (i, s) } else { b })
        .0;
    vt.row(best).transpose()
}

/// Rows of all matrices stacked vertically.
pub fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

pub fn gen_sim2(n: usize, p: usize, p_joint: f64, seed: u64) -> Result<Sim2, SimError> {
    if !(0.0..=1.0).contains(&p_joint) {
        return Err(SimError::Invalid(format!("joint proportion must lie in [0, 1], got {p_joint}")));
    }
    if n < 3 || p == 0 {
        return Err(SimError::Invalid(format!("need n ≥ 3 and p ≥ 1, got n = {n}, p = {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [v1, v2, v3] = equiangular_triple(&mut rng, n);
    let v4 = unit_gaussian(&mut rng, n);
    let joint = joint_row_count(p, p_joint);
    let normal = Normal::new(0.0, SIM2_NOISE_SD).expect("valid deviation");
    let mut signal = Vec::with_capacity(3);
    let mut noise = Vec::with_capacity(3);
    for own in [&v1, &v2, &v3] {
        let mut s = DMatrix::zeros(p, n);
        for r in 0..p {
            let dir = if r < p - joint { own } else { &v4 };
            let w: f64 = rng.sample(StandardNormal);
            s.row_mut(r).copy_from(&(dir.transpose() * w));
        }
        let e = DMatrix::from_fn(p, n, |_, _| normal.sample(&mut rng));
        signal.push(s);
        noise.push(e);
    }
    let noise_direction = top_right_singular_vector(&stack_rows(&noise));
    let matrices: Vec<DMatrix<f64>> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let views = vec![
        view("cohort1", p),
        view("cohort2", p),
        view("cohort3", p),
        view("features", n),
    ];
    Ok(Sim2 {
        data: Generated {
            dataset: dataset(views, vec![(0, 3), (1, 3), (2, 3)], &matrices),
            signal,
            noise,
        },
        directions: [v1, v2, v3, v4],
        noise_direction,
        joint_rows: joint,
    })
}

/// One 30×30 matrix holding two components, each the outer product of 0/1
/// loadings with three ones.
#[derive(Clone, Debug)]
pub struct Sim3 {
    pub data: Generated,
    /// Row-view loadings, 30×2.
    pub u: DMatrix<f64>,
    /// Column-view loadings, 30×2.
    pub v: DMatrix<f64>,
}

pub const SIM3_SIZE: usize = 30;
pub const SIM3_ONES: usize = 3;

fn sparse_columns(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols);
    for c in 0..cols {
        for r in sample(rng, n, SIM3_ONES) {
            m[(r, c)] = 1.0;
        }
    }
    m
}

pub fn gen_sim3(snr: f64, seed: u64) -> Result<Sim3, SimError> {
    check_snr(snr)?;
    let n = SIM3_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = sparse_columns(&mut rng, n, 2);
    let v = sparse_columns(&mut rng, n, 2);
    let s = &u * v.transpose();
    let e = gaussian(&mut rng, n, n);
    let e = &e * noise_scale(&s, &e, snr);
    let x = &s + &e;
    Ok(Sim3 {
        data: Generated {
            dataset: dataset(vec![view("rows", n), view("columns", n)], vec![(0, 1)], &[x]),
            signal: vec![s],
            noise: vec![e],
        },
        u,
        v,
    })
}

/// Ground truth in a serializable form, for audit dumps.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "study")]
pub enum TruthDump {
    #[serde(rename = "1")]
    Sim1 { pattern: Vec<Vec<f64>>, noise_scale: Vec<f64> },
    #[serde(rename = "2")]
    Sim2 {
        directions: Vec<Vec<f64>>,
        noise_direction: Vec<f64>,
        joint_rows: usize,
    },
    #[serde(rename = "3")]
    Sim3 { u: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cols_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

impl Sim1 {
    pub fn truth_dump(&self) -> TruthDump {
        TruthDump::Sim1 {
            pattern: rows_of(&self.truth),
            noise_scale: self.noise_scale.clone(),
        }
    }
}

impl Sim2 {
    pub fn truth_dump(&self) -> TruthDump {
        TruthDump::Sim2 {
            directions: self.directions.iter().map(|d| d.iter().copied().collect()).collect(),
            noise_direction: self.noise_direction.iter().copied().collect(),
            joint_rows: self.joint_rows,
        }
    }
}

impl Sim3 {
    pub fn truth_dump(&self) -> TruthDump {
        TruthDump::Sim3 {
            u: cols_of(&self.u),
            v: cols_of(&self.v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim1_hits_snr_exactly() {
        let s = gen_sim1(2.0, 1).unwrap();
        for (sig, e) in s.data.signal.iter().zip(&s.data.noise) {
            assert!((sig.norm() / e.norm() - 2.0).abs() < 1e-12);
        }
        assert_eq!(s.data.dataset.n_matrices(), 4);
    }

    #[test]
    fn sim1_shared_row_spaces() {
        let s = gen_sim1(1.0, 2).unwrap();
        let r = |m: &DMatrix<f64>| m.row(0).transpose().normalize();
        assert!((r(&s.data.signal[0]).dot(&r(&s.data.signal[1])).abs() - 1.0).abs() < 1e-12);
        assert!((r(&s.data.signal[2]).dot(&r(&s.data.signal[3])).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(gen_sim1(1.0, 5).unwrap().data.dataset, gen_sim1(1.0, 5).unwrap().data.dataset);
        assert_eq!(gen_sim2(10, 40, 0.5, 5).unwrap().data.dataset, gen_sim2(10, 40, 0.5, 5).unwrap().data.dataset);
        assert_eq!(gen_sim3(1.0, 5).unwrap().data.dataset, gen_sim3(1.0, 5).unwrap().data.dataset);
    }

    #[test]
    fn sim2_directions_are_equiangular() {
        let s = gen_sim2(100, 25, 0.5, 3).unwrap();
        let d = &s.directions;
        for i in 0..3 {
            assert!((d[i].norm() - 1.0).abs() < 1e-12);
            for j in 0..i {
                let angle = d[i].dot(&d[j]).clamp(-1.0, 1.0).acos();
                assert!((angle - std::f64::consts::FRAC_PI_3).abs() < 1e-10);
            }
        }
        assert!((d[3].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sim2_joint_rows() {
        assert_eq!(joint_row_count(25, 0.5), 13);
        assert_eq!(gen_sim2(10, 40, 0.0, 1).unwrap().joint_rows, 0);
        assert_eq!(gen_sim2(10, 40, 1.0, 1).unwrap().joint_rows, 40);
        let s = gen_sim2(10, 40, 0.5, 1).unwrap();
        let v4 = &s.directions[3];
        for sig in &s.data.signal {
            for r in 20..40 {
                let row = sig.row(r).transpose();
                assert!((row.dot(v4).abs() - row.norm()).abs() < 1e-12);
            }
        }
        assert!(gen_sim2(10, 40, 1.5, 1).is_err());
    }

    #[test]
    fn sim3_structure() {
        let s = gen_sim3(3.0, 4).unwrap();
        for c in 0..2 {
            assert_eq!(s.u.column(c).sum(), 3.0);
            assert_eq!(s.v.column(c).sum(), 3.0);
        }
        let sv = s.data.signal[0].clone().singular_values();
        assert!(sv.iter().filter(|&&x| x > 1e-10).count() <= 2);
        assert!((s.data.signal[0].norm() / s.data.noise[0].norm() - 3.0).abs() < 1e-12);
        assert!(gen_sim3(0.0, 1).is_err());
    }
}
