use mmpca_core::kframe::{angle_count, angle_pairs};
use mmpca_core::{build_kframe, invert_kframe, GivensAngles, KFrame};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `R_1 ⋯ R_m I_pk` with every rotation formed as a full p×p matrix.
fn dense_oracle(p: usize, k: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut prod = DMatrix::<f64>::identity(p, p);
    for ((a, b), &t) in angle_pairs(p, k).zip(angles) {
        let mut r = DMatrix::<f64>::identity(p, p);
        r[(b, b)] = t.cos();
        r[(b, a)] = -t.sin();
        r[(a, b)] = t.sin();
        r[(a, a)] = t.cos();
        prod *= r;
    }
    prod.columns(0, k).into_owned()
}

fn random_frame(rng: &mut ChaCha8Rng, p: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = g.qr().q();
    if k == p && q.determinant() < 0.0 {
        q.column_mut(k - 1).neg_mut();
    }
    q
}

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn forward_map_matches_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in 1..=8 {
        for k in 1..=p {
            let angles: Vec<f64> = (0..angle_count(p, k))
                .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                .collect();
            let xi = GivensAngles::from_vec(p, k, angles.clone()).unwrap();
            let v = build_kframe(&xi);
            assert!(max_diff(v.matrix(), &dense_oracle(p, k, &angles)) <= 1e-12, "p={p} k={k}");
        }
    }
}

#[test]
fn parameter_count_formula() {
    for p in 1..12 {
        for k in 1..=p {
            assert_eq!(angle_count(p, k), p * k - k * (k + 1) / 2);
            assert_eq!(angle_pairs(p, k).count(), angle_count(p, k));
        }
    }
}

#[test]
fn square_reflection_cannot_be_inverted() {
    let mut m = DMatrix::<f64>::identity(3, 3);
    m[(2, 2)] = -1.0;
    let v = KFrame::new(m).unwrap();
    assert!(invert_kframe(&v).is_err());
}

#[test]
fn single_precision_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = random_frame(&mut rng, 6, 3).map(|x| x as f32);
    let v = KFrame::new(q).unwrap();
    let xi = invert_kframe(&v).unwrap();
    let back = build_kframe(&xi);
    assert!((back.matrix() - v.matrix()).abs().max() < 1e-4);
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=12).prop_flat_map(|p| (Just(p), 1..=p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn built_frames_are_orthonormal((p, k) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = (0..angle_count(p, k)).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v = build_kframe(&GivensAngles::from_vec(p, k, angles).unwrap());
        let gram = v.matrix().transpose() * v.matrix();
        prop_assert!(max_diff(&gram, &DMatrix::identity(k, k)) <= 1e-10);
    }

    #[test]
    fn invert_then_build_round_trips((p, k) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_frame(&mut rng, p, k);
        let v = KFrame::new(q.clone()).unwrap();
        let xi = invert_kframe(&v).unwrap();
        prop_assert_eq!(xi.len(), angle_count(p, k));
        prop_assert!(max_diff(build_kframe(&xi).matrix(), &q) <= 1e-8);
    }

    #[test]
    fn build_then_invert_reproduces_frame((p, k) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = (0..angle_count(p, k)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v = build_kframe(&GivensAngles::from_vec(p, k, angles).unwrap());
        let again = build_kframe(&invert_kframe(&v).unwrap());
        prop_assert!(max_diff(again.matrix(), v.matrix()) <= 1e-8);
    }
}
