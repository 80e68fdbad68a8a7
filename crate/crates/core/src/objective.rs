//! The penalized loss: masked reconstruction error plus four penalties.
//!
//! ```text
//! L = Σ_(i,j)∈S ‖M_ij ⊙ (X_ij − V_i D_i D_j V_jᵀ)‖²_F
//!   + λ1 Σ_i ‖D_i‖₁
//!   + λ2 Σ_c √(Σ_i (D_i)²_cc)
//!   + λ3/n_v Σ_i ‖V_i D_i‖₁
//!   + λ4/n_v Σ_i Σ_rows ‖(V_i D_i)_r·‖₂
//! ```
//!
//! The absolute values inside the ℓ1 terms are replaced by
//! [`smooth_abs`], and the λ's are multiplied by `c^{3/2}` where `c` is the
//! mean Frobenius norm of the data (see [`scale_lambda`]).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kframe::{angle_count, build_kframe, GivensAngles, KFrame};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Work (in matrix elements) above which per-matrix and per-view evaluation
/// is spread over the rayon pool.
pub(crate) const PARALLEL_THRESHOLD: usize = 200_000;

/// Angles and scale diagonals for every view at a common working rank.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    k: usize,
    xi: Vec<GivensAngles<T>>,
    d: Vec<DVector<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(k: usize, xi: Vec<GivensAngles<T>>, d: Vec<DVector<T>>) -> Result<Self> {
        if xi.len() != d.len() || xi.is_empty() {
            return Err(Error::Dimension(format!(
                "{} angle blocks but {} diagonals",
                xi.len(),
                d.len()
            )));
        }
        for (i, (x, di)) in xi.iter().zip(&d).enumerate() {
            if x.k() != k || di.len() != k {
                return Err(Error::Dimension(format!(
                    "view {i} has rank {} / diagonal length {}, expected {k}",
                    x.k(),
                    di.len()
                )));
            }
            if di.iter().any(|v| !v.is_finite_value()) {
                return Err(Error::Parameter(format!("diagonal of view {i} is not finite")));
            }
        }
        Ok(Self { k, xi, d })
    }

    /// All angles zero and all diagonals zero.
    pub fn zeros(dims: &[usize], k: usize) -> Result<Self> {
        let xi = dims
            .iter()
            .map(|&p| GivensAngles::zeros(p, k))
            .collect::<Result<Vec<_>>>()?;
        let d = dims.iter().map(|_| DVector::zeros(k)).collect();
        Self::new(k, xi, d)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_views(&self) -> usize {
        self.xi.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.xi.iter().map(|x| x.p()).collect()
    }

    pub fn xi(&self, view: usize) -> &GivensAngles<T> {
        &self.xi[view]
    }

    pub fn xi_mut(&mut self, view: usize) -> &mut GivensAngles<T> {
        &mut self.xi[view]
    }

    pub fn d(&self, view: usize) -> &DVector<T> {
        &self.d[view]
    }

    pub fn d_mut(&mut self, view: usize) -> &mut DVector<T> {
        &mut self.d[view]
    }

    /// Number of free parameters: `n_v·k + Σ_i (p_i·k − k(k+1)/2)`.
    pub fn count_for(dims: &[usize], k: usize) -> usize {
        dims.len() * k + dims.iter().map(|&p| angle_count(p, k)).sum::<usize>()
    }

    pub fn parameter_count(&self) -> usize {
        Self::count_for(&self.dims(), self.k)
    }

    /// Flat layout: the angle blocks of views `0..n_v` (canonical order each),
    /// followed by the diagonals of views `0..n_v`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for x in &self.xi {
            out.extend_from_slice(x.as_slice());
        }
        for di in &self.d {
            out.extend(di.iter().copied());
        }
        out
    }

    pub fn from_flat(dims: &[usize], k: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != Self::count_for(dims, k) {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                Self::count_for(dims, k)
            )));
        }
        let mut offset = 0;
        let mut xi = Vec::with_capacity(dims.len());
        for &p in dims {
            let m = angle_count(p, k);
            xi.push(GivensAngles::from_vec(p, k, flat[offset..offset + m].to_vec())?);
            offset += m;
        }
        let d = dims
            .iter()
            .enumerate()
            .map(|(i, _)| DVector::from_column_slice(&flat[offset + i * k..offset + (i + 1) * k]))
            .collect();
        Self::new(k, xi, d)
    }

    /// Offset of view `i`'s angle block in the flat layout.
    pub fn angle_offset(dims: &[usize], k: usize, view: usize) -> usize {
        dims[..view].iter().map(|&p| angle_count(p, k)).sum()
    }

    /// Offset of view `i`'s diagonal in the flat layout.
    pub fn diagonal_offset(dims: &[usize], k: usize, view: usize) -> usize {
        Self::angle_offset(dims, k, dims.len()) + view * k
    }

    pub fn frames(&self) -> Vec<KFrame<T>> {
        self.xi.iter().map(build_kframe).collect()
    }

    /// The k×n_v matrix whose column `i` is the diagonal of `D_i`.
    pub fn augmented_d(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.k, self.d.len(), |c, i| self.d[i][c])
    }
}

/// Penalty weights and the ℓ1 smoothing width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties<T> {
    pub lambda: [T; 4],
    pub tau: T,
}

pub const DEFAULT_TAU: f64 = 1e-5;

impl<T: Scalar> Penalties<T> {
    pub fn new(lambda: [T; 4]) -> Self {
        Self {
            lambda,
            tau: T::lit(DEFAULT_TAU),
        }
    }

    pub fn none() -> Self {
        Self::new([T::zero(); 4])
    }

    pub fn with_tau(mut self, tau: T) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) {
            return Err(Error::Parameter(format!("smoothing width must be positive, got {}", self.tau)));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l >= T::zero()) || !l.is_finite_value()) {
            return Err(Error::Parameter(format!("penalty weight {l} must be finite and nonnegative")));
        }
        Ok(())
    }
}

/// Smooth stand-in for `|x|`: `x·tanh(x/τ)`.
#[inline]
pub fn smooth_abs<T: Scalar>(x: T, tau: T) -> T {
    x * (x / tau).tanh()
}

/// Derivative of [`smooth_abs`]: `tanh(x/τ) + (x/τ)·sech²(x/τ)`.
#[inline]
pub fn smooth_abs_derivative<T: Scalar>(x: T, tau: T) -> T {
    let u = x / tau;
    let t = u.tanh();
    t + u * (T::one() - t * t)
}

/// Penalty weights multiplied by `c^{3/2}`, `c` the mean Frobenius norm of
/// the matrices, so that λ does not depend on the scale of the data.
pub fn scale_lambda<T: Scalar>(lambda: [T; 4], dataset: &Dataset<T>) -> [T; 4] {
    let c = dataset.mean_frobenius();
    let factor = c * c.sqrt();
    lambda.map(|l| l * factor)
}

/// `V_i · diag(d_i ∘ d_j) · V_jᵀ`.
pub fn reconstruct<T: Scalar>(
    v_i: &DMatrix<T>,
    d_i: &DVector<T>,
    d_j: &DVector<T>,
    v_j: &DMatrix<T>,
) -> DMatrix<T> {
    let mut left = v_i.clone();
    for c in 0..left.ncols() {
        let w = d_i[c] * d_j[c];
        left.column_mut(c).scale_mut(w);
    }
    left * v_j.transpose()
}

/// Masked residual `M ⊙ (X − X̂)` of every matrix.
pub(crate) fn residuals<T: Scalar>(
    dataset: &Dataset<T>,
    params: &ModelParams<T>,
    frames: &[KFrame<T>],
) -> Vec<DMatrix<T>> {
    let one = |(m, &(i, j)): (usize, &(usize, usize))| {
        let x = dataset.matrix(m);
        let fit = reconstruct(frames[i].matrix(), params.d(i), params.d(j), frames[j].matrix());
        let mut e = x.values() - fit;
        for (v, &o) in e.iter_mut().zip(x.observed().iter()) {
            if !o {
                *v = T::zero();
            }
        }
        e
    };
    let links = dataset.graph().links();
    let work: usize = dataset.matrices().iter().map(|x| x.nrows() * x.ncols()).sum();
    if work * params.k() >= PARALLEL_THRESHOLD {
        links.par_iter().enumerate().map(one).collect()
    } else {
        links.iter().enumerate().map(one).collect()
    }
}

fn sum_sq<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

/// Σ over matrices of the masked squared Frobenius error.
pub fn reconstruction_loss<T: Scalar>(dataset: &Dataset<T>, params: &ModelParams<T>) -> T {
    let frames = params.frames();
    residuals(dataset, params, &frames)
        .iter()
        .fold(T::zero(), |acc, e| acc + sum_sq(e))
}

/// The unweighted penalties `[P1, P2, P3, P4]`, with the `1/n_v` factor of
/// P3 and P4 included.
pub fn penalty_terms<T: Scalar>(params: &ModelParams<T>, tau: T) -> [T; 4] {
    penalty_terms_with(params, &params.frames(), tau)
}

pub(crate) fn penalty_terms_with<T: Scalar>(params: &ModelParams<T>, frames: &[KFrame<T>], tau: T) -> [T; 4] {
    let n_v = params.n_views();
    let k = params.k();
    let mut p1 = T::zero();
    for i in 0..n_v {
        for &x in params.d(i).iter() {
            p1 += smooth_abs(x, tau);
        }
    }
    let mut p2 = T::zero();
    for c in 0..k {
        let ss = (0..n_v).fold(T::zero(), |acc, i| acc + params.d(i)[c] * params.d(i)[c]);
        p2 += ss.sqrt();
    }
    let mut p3 = T::zero();
    let mut p4 = T::zero();
    for (i, frame) in frames.iter().enumerate() {
        let v = frame.matrix();
        let d = params.d(i);
        for r in 0..v.nrows() {
            let mut row_sq = T::zero();
            for c in 0..k {
                let y = v[(r, c)] * d[c];
                p3 += smooth_abs(y, tau);
                row_sq += y * y;
            }
            p4 += row_sq.sqrt();
        }
    }
    let inv = T::one() / T::from_count(n_v);
    [p1, p2, p3 * inv, p4 * inv]
}

/// Loss and penalties of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms<T> {
    pub loss: T,
    /// Unweighted P1..P4.
    pub penalties: [T; 4],
    /// Loss plus the scaled-λ weighted penalties.
    pub total: T,
}

/// Objective evaluator bound to a dataset, a rank and penalty settings.
#[derive(Clone, Debug)]
pub struct Objective<'a, T: Scalar> {
    dataset: &'a Dataset<T>,
    k: usize,
    dims: Vec<usize>,
    penalties: Penalties<T>,
    scaled_lambda: [T; 4],
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn new(dataset: &'a Dataset<T>, k: usize, penalties: Penalties<T>) -> Result<Self> {
        penalties.validate()?;
        let dims = dataset.graph().dims();
        if k == 0 || dims.iter().any(|&p| p < k) {
            return Err(Error::Dimension(format!(
                "rank {k} must be between 1 and the smallest view dimension {}",
                dims.iter().min().copied().unwrap_or(0)
            )));
        }
        Ok(Self {
            dataset,
            k,
            scaled_lambda: scale_lambda(penalties.lambda, dataset),
            dims,
            penalties,
        })
    }

    /// Evaluator whose λ is used as given, without the data-scale factor.
    pub fn with_unscaled_lambda(dataset: &'a Dataset<T>, k: usize, penalties: Penalties<T>) -> Result<Self> {
        let mut obj = Self::new(dataset, k, penalties)?;
        obj.scaled_lambda = penalties.lambda;
        Ok(obj)
    }

    pub fn dataset(&self) -> &'a Dataset<T> {
        self.dataset
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn penalties(&self) -> &Penalties<T> {
        &self.penalties
    }

    /// λ after the data-scale factor.
    pub fn scaled_lambda(&self) -> [T; 4] {
        self.scaled_lambda
    }

    pub fn parameter_count(&self) -> usize {
        ModelParams::<T>::count_for(&self.dims, self.k)
    }

    pub fn terms(&self, params: &ModelParams<T>) -> ObjectiveTerms<T> {
        let frames = params.frames();
        let loss = residuals(self.dataset, params, &frames)
            .iter()
            .fold(T::zero(), |acc, e| acc + sum_sq(e));
        let penalties = penalty_terms_with(params, &frames, self.penalties.tau);
        let total = penalties
            .iter()
            .zip(&self.scaled_lambda)
            .fold(loss, |acc, (&p, &l)| if l == T::zero() { acc } else { acc + l * p });
        ObjectiveTerms {
            loss,
            penalties,
            total,
        }
    }

    pub fn value(&self, params: &ModelParams<T>) -> T {
        self.terms(params).total
    }

    pub fn params_from_flat(&self, flat: &[T]) -> Result<ModelParams<T>> {
        ModelParams::from_flat(&self.dims, self.k, flat)
    }
}

/// Loss plus λ-weighted penalties, with λ rescaled to the data.
pub fn objective_value<T: Scalar>(
    dataset: &Dataset<T>,
    params: &ModelParams<T>,
    penalties: &Penalties<T>,
) -> Result<T> {
    Ok(Objective::new(dataset, params.k(), *penalties)?.value(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MaskedMatrix, View, ViewGraph};

    fn one_matrix(x: DMatrix<f64>) -> Dataset<f64> {
        let g = ViewGraph::new(
            vec![
                View { name: "r".into(), dim: x.nrows() },
                View { name: "c".into(), dim: x.ncols() },
            ],
            vec![(0, 1)],
        )
        .unwrap();
        Dataset::new(g, vec![MaskedMatrix::fully_observed(x).unwrap()]).unwrap()
    }

    #[test]
    fn smooth_abs_values() {
        assert_eq!(smooth_abs(0.0, 1e-3), 0.0);
        let tau = 0.01;
        assert!((smooth_abs(5.0f64, tau) - 5.0).abs() < tau);
        assert!((smooth_abs(tau, tau) - tau * 1f64.tanh()).abs() < 1e-15);
        assert!((smooth_abs(tau, tau) / tau - 0.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn smooth_abs_derivative_matches_difference_quotient() {
        let tau = 0.3;
        for &x in &[-1.0f64, -0.2, 0.0, 0.05, 0.7] {
            let h = 1e-6;
            let fd = (smooth_abs(x + h, tau) - smooth_abs(x - h, tau)) / (2.0 * h);
            assert!((fd - smooth_abs_derivative(x, tau)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_diagonals_give_data_norm_and_no_penalty() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let ds = one_matrix(x.clone());
        let params = ModelParams::zeros(&[2, 3], 2).unwrap();
        assert!((reconstruction_loss(&ds, &params) - x.norm_squared()).abs() < 1e-12);
        assert_eq!(penalty_terms(&params, 1e-3), [0.0; 4]);
        let pen = Penalties::new([1.0, 1.0, 1.0, 1.0]);
        assert!((objective_value(&ds, &params, &pen).unwrap() - x.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_penalties_single_view() {
        // n_v = 1, k = 1, D = (2), V = e_1 in R^3.
        let xi = vec![GivensAngles::zeros(3, 1).unwrap()];
        let params = ModelParams::new(1, xi, vec![DVector::from_element(1, 2.0)]).unwrap();
        let tau = 1e-3;
        let p: [f64; 4] = penalty_terms(&params, tau);
        assert!((p[0] - 2.0).abs() <= tau);
        assert_eq!(p[1], 2.0);
        assert!((p[2] - 2.0).abs() <= tau);
        assert_eq!(p[3], 2.0);
    }

    #[test]
    fn group_penalty_of_unit_rows() {
        // Augmented D with rows (1,0,0) and (0,1,0).
        let xi = (0..3).map(|_| GivensAngles::zeros(2, 2).unwrap()).collect();
        let d = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        ];
        let params = ModelParams::new(2, xi, d).unwrap();
        assert_eq!(penalty_terms(&params, 1e-3)[1], 2.0);
    }

    #[test]
    fn lambda_scaling_factor() {
        let ds = one_matrix(DMatrix::from_element(1, 1, 1.0));
        assert_eq!(scale_lambda([1.0, 2.0, 3.0, 4.0], &ds), [1.0, 2.0, 3.0, 4.0]);

        let g = ViewGraph::new(
            vec![
                View { name: "a".into(), dim: 1 },
                View { name: "b".into(), dim: 1 },
                View { name: "c".into(), dim: 1 },
            ],
            vec![(0, 1), (2, 1)],
        )
        .unwrap();
        let ds = Dataset::new(
            g,
            vec![
                MaskedMatrix::fully_observed(DMatrix::from_element(1, 1, 4.0)).unwrap(),
                MaskedMatrix::fully_observed(DMatrix::from_element(1, 1, -16.0)).unwrap(),
            ],
        )
        .unwrap();
        let s = scale_lambda([1.0, 0.0, 0.0, 0.0], &ds);
        assert!((s[0] - 10f64.powf(1.5)).abs() < 1e-12);
        assert!((s[0] - 31.622_776_601_683_79).abs() < 1e-9);
    }

    #[test]
    fn flat_layout_round_trips() {
        let dims = [4, 3, 5];
        let k = 2;
        let n = ModelParams::<f64>::count_for(&dims, k);
        assert_eq!(n, 3 * 2 + (8 - 3) + (6 - 3) + (10 - 3));
        let flat: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let params = ModelParams::from_flat(&dims, k, &flat).unwrap();
        assert_eq!(params.to_flat(), flat);
        assert_eq!(params.d(1)[0], flat[ModelParams::<f64>::diagonal_offset(&dims, k, 1)]);
        assert_eq!(params.xi(2).as_slice()[0], flat[ModelParams::<f64>::angle_offset(&dims, k, 2)]);
        assert!(ModelParams::from_flat(&dims, k, &flat[1..]).is_err());
    }

    #[test]
    fn rank_must_fit_every_view() {
        let ds = one_matrix(DMatrix::from_element(2, 3, 1.0));
        assert!(Objective::new(&ds, 3, Penalties::none()).is_err());
        assert!(Objective::new(&ds, 2, Penalties::none()).is_ok());
        assert!(Objective::new(&ds, 1, Penalties::none().with_tau(0.0)).is_err());
    }
}
