//! Analytic gradient of the objective with respect to every angle and every
//! diagonal element.
//!
//! The gradient with respect to the entries of `V_i` is formed first (`G_i`,
//! p_i×k). Each angle derivative is then `⟨A_tᵀ G_i, R'_t B_t⟩`, where
//! `A_t R_t B_t = V_i` splits the rotation product around factor `t`. A single
//! sweep over the canonical factor order updates `A_tᵀ G_i` and `B_t` with one
//! rank-2 row rotation each, so a whole view costs O(m·k).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kframe::{givens_derivative, rotate_rows, rotate_rows_transposed, GivensAngles, KFrame};
use crate::objective::{residuals, ModelParams, Objective, Penalties, PARALLEL_THRESHOLD};
use crate::objective::{penalty_terms_with, smooth_abs_derivative};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Derivative factor `1/‖g‖` of a group norm from its squared norm, with the
/// zero subgradient for an all-zero group.
fn inverse_norm<T: Scalar>(ss: T) -> T {
    if ss > T::zero() {
        T::one() / ss.sqrt()
    } else {
        T::zero()
    }
}

/// Dense split `V = A · R(θ) · B` of a frame around one rotation factor.
#[derive(Clone, Debug)]
pub struct FactorSplit<T: Scalar> {
    /// Product of the factors before the split, p×p.
    pub prefix: DMatrix<T>,
    /// The rotation itself, p×p.
    pub rotation: DMatrix<T>,
    /// Derivative of the rotation with respect to its angle, p×p.
    pub derivative: DMatrix<T>,
    /// Product of the factors after the split applied to `I_{pk}`, p×k.
    pub suffix: DMatrix<T>,
}

/// Builds the [`FactorSplit`] of `V(ξ)` around angle `(a, b)`.
pub fn factor_split<T: Scalar>(xi: &GivensAngles<T>, a: usize, b: usize) -> Result<FactorSplit<T>> {
    let (p, k) = (xi.p(), xi.k());
    let t = xi
        .index_of(a, b)
        .ok_or_else(|| Error::Index(format!("({a},{b}) is not a stored angle for p={p}, k={k}")))?;
    let pairs: Vec<_> = xi.pairs().collect();
    let angles = xi.as_slice();

    let mut prefix = DMatrix::identity(p, p);
    for s in (0..t).rev() {
        let (pa, pb) = pairs[s];
        rotate_rows(&mut prefix, pa, pb, angles[s].cos(), angles[s].sin());
    }
    let mut suffix = DMatrix::identity(p, k);
    for s in (t + 1..pairs.len()).rev() {
        let (pa, pb) = pairs[s];
        rotate_rows(&mut suffix, pa, pb, angles[s].cos(), angles[s].sin());
    }
    let mut rotation = DMatrix::identity(p, p);
    rotate_rows(&mut rotation, a, b, angles[t].cos(), angles[t].sin());
    Ok(FactorSplit {
        prefix,
        rotation,
        derivative: givens_derivative(angles[t], a, b, p)?,
        suffix,
    })
}

/// Gradient of the objective with respect to the entries of `V_i` and the
/// diagonal of `D_i`.
fn view_gradient<T: Scalar>(
    obj: &Objective<'_, T>,
    params: &ModelParams<T>,
    frames: &[KFrame<T>],
    residuals: &[DMatrix<T>],
    i: usize,
) -> (DMatrix<T>, DVector<T>) {
    let k = params.k();
    let v = frames[i].matrix();
    let d = params.d(i);
    let p = v.nrows();
    let two = T::lit(2.0);
    let mut g = DMatrix::zeros(p, k);
    let mut gd = DVector::zeros(k);

    for (m, &(row_view, col_view)) in obj.dataset().graph().links().iter().enumerate() {
        let (other, ev) = if row_view == i {
            (col_view, &residuals[m] * frames[col_view].matrix())
        } else if col_view == i {
            (row_view, residuals[m].transpose() * frames[row_view].matrix())
        } else {
            continue;
        };
        let d_other = params.d(other);
        for c in 0..k {
            let w = d[c] * d_other[c];
            let mut diag = T::zero();
            for r in 0..p {
                g[(r, c)] -= two * w * ev[(r, c)];
                diag += v[(r, c)] * ev[(r, c)];
            }
            gd[c] -= two * d_other[c] * diag;
        }
    }

    let lambda = obj.scaled_lambda();
    let tau = obj.penalties().tau;
    let n_v = T::from_count(params.n_views());

    if lambda[0] != T::zero() {
        for c in 0..k {
            gd[c] += lambda[0] * smooth_abs_derivative(d[c], tau);
        }
    }
    if lambda[1] != T::zero() {
        for c in 0..k {
            let ss = (0..params.n_views()).fold(T::zero(), |acc, j| acc + params.d(j)[c] * params.d(j)[c]);
            gd[c] += lambda[1] * d[c] * inverse_norm(ss);
        }
    }
    if lambda[2] != T::zero() {
        let w = lambda[2] / n_v;
        for c in 0..k {
            for r in 0..p {
                let s = w * smooth_abs_derivative(v[(r, c)] * d[c], tau);
                g[(r, c)] += s * d[c];
                gd[c] += s * v[(r, c)];
            }
        }
    }
    if lambda[3] != T::zero() {
        let w = lambda[3] / n_v;
        for r in 0..p {
            let ss = (0..k).fold(T::zero(), |acc, c| {
                let y = v[(r, c)] * d[c];
                acc + y * y
            });
            let inv = w * inverse_norm(ss);
            for c in 0..k {
                let u = v[(r, c)] * d[c] * inv;
                g[(r, c)] += u * d[c];
                gd[c] += u * v[(r, c)];
            }
        }
    }
    (g, gd)
}

/// Chains a frame gradient `G = ∂L/∂V` through the rotation product, giving
/// `∂L/∂θ` for every angle in canonical order.
pub fn angle_gradient<T: Scalar>(xi: &GivensAngles<T>, frame: &DMatrix<T>, frame_grad: &DMatrix<T>) -> Vec<T> {
    let pairs: Vec<_> = xi.pairs().collect();
    let angles = xi.as_slice();
    let m = pairs.len();
    let mut out = Vec::with_capacity(m);
    if m == 0 {
        return out;
    }
    let trig: Vec<(T, T)> = angles.iter().map(|t| (t.cos(), t.sin())).collect();
    let k = frame.ncols();
    // h = A_tᵀ G, suffix = B_t.
    let mut h = frame_grad.clone();
    let mut suffix = frame.clone();
    let (a0, b0) = pairs[0];
    rotate_rows_transposed(&mut suffix, a0, b0, trig[0].0, trig[0].1);
    for t in 0..m {
        let (a, b) = pairs[t];
        let (c, s) = trig[t];
        let mut acc = T::zero();
        for col in 0..k {
            let (xb, xa) = (suffix[(b, col)], suffix[(a, col)]);
            let db = -s * xb - c * xa;
            let da = c * xb - s * xa;
            acc += h[(b, col)] * db + h[(a, col)] * da;
        }
        out.push(acc);
        rotate_rows_transposed(&mut h, a, b, c, s);
        if t + 1 < m {
            let (na, nb) = pairs[t + 1];
            rotate_rows_transposed(&mut suffix, na, nb, trig[t + 1].0, trig[t + 1].1);
        }
    }
    out
}

impl<T: Scalar> Objective<'_, T> {
    /// Objective value and flat gradient (layout of [`ModelParams::to_flat`]).
    pub fn value_and_gradient(&self, params: &ModelParams<T>) -> (T, Vec<T>) {
        let frames = params.frames();
        let res = residuals(self.dataset(), params, &frames);
        let loss = res
            .iter()
            .fold(T::zero(), |acc, e| acc + e.iter().fold(T::zero(), |s, &x| s + x * x));
        let pen = penalty_terms_with(params, &frames, self.penalties().tau);
        let value = pen
            .iter()
            .zip(&self.scaled_lambda())
            .fold(loss, |acc, (&p, &l)| if l == T::zero() { acc } else { acc + l * p });
        (value, self.gradient_from(params, &frames, &res))
    }

    pub fn gradient(&self, params: &ModelParams<T>) -> Vec<T> {
        let frames = params.frames();
        let res = residuals(self.dataset(), params, &frames);
        self.gradient_from(params, &frames, &res)
    }

    fn gradient_from(&self, params: &ModelParams<T>, frames: &[KFrame<T>], res: &[DMatrix<T>]) -> Vec<T> {
        let n_v = params.n_views();
        let block = |i: usize| {
            let (g, gd) = view_gradient(self, params, frames, res, i);
            (angle_gradient(params.xi(i), frames[i].matrix(), &g), gd)
        };
        let work: usize = self.dims().iter().map(|&p| p * p).sum::<usize>() * params.k();
        let blocks: Vec<(Vec<T>, DVector<T>)> = if work >= PARALLEL_THRESHOLD {
            (0..n_v).into_par_iter().map(block).collect()
        } else {
            (0..n_v).map(block).collect()
        };
        let mut out = Vec::with_capacity(params.parameter_count());
        for (angles, _) in &blocks {
            out.extend_from_slice(angles);
        }
        for (_, gd) in &blocks {
            out.extend(gd.iter().copied());
        }
        out
    }
}

/// `∂L/∂(ξ_i)_{ab}` evaluated through the dense factor split. This is the
/// direct trace form and is independent of the sweep used by
/// [`full_gradient`].
pub fn grad_xi<T: Scalar>(
    dataset: &Dataset<T>,
    params: &ModelParams<T>,
    penalties: &Penalties<T>,
    view: usize,
    a: usize,
    b: usize,
) -> Result<T> {
    if view >= params.n_views() {
        return Err(Error::Index(format!("view {view} out of range")));
    }
    let obj = Objective::new(dataset, params.k(), *penalties)?;
    let frames = params.frames();
    let res = residuals(dataset, params, &frames);
    let (g, _) = view_gradient(&obj, params, &frames, &res, view);
    let split = factor_split(params.xi(view), a, b)?;
    let lhs = split.prefix.transpose() * g;
    let rhs = split.derivative * split.suffix;
    Ok(lhs.component_mul(&rhs).sum())
}

/// `∂L/∂diag(D_i)`.
pub fn grad_d<T: Scalar>(
    dataset: &Dataset<T>,
    params: &ModelParams<T>,
    penalties: &Penalties<T>,
    view: usize,
) -> Result<DVector<T>> {
    if view >= params.n_views() {
        return Err(Error::Index(format!("view {view} out of range")));
    }
    let obj = Objective::new(dataset, params.k(), *penalties)?;
    let frames = params.frames();
    let res = residuals(dataset, params, &frames);
    Ok(view_gradient(&obj, params, &frames, &res, view).1)
}

/// Gradient over all parameters in the flat layout of
/// [`ModelParams::to_flat`]. Per-view blocks are computed independently.
pub fn full_gradient<T: Scalar>(
    dataset: &Dataset<T>,
    params: &ModelParams<T>,
    penalties: &Penalties<T>,
) -> Result<Vec<T>> {
    Ok(Objective::new(dataset, params.k(), *penalties)?.gradient(params))
}

/// Reassembles `A · R · B` of a split; equals `V(ξ)`.
pub fn recombine<T: Scalar>(split: &FactorSplit<T>) -> DMatrix<T> {
    &split.prefix * &split.rotation * &split.suffix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MaskedMatrix, View, ViewGraph};
    use crate::kframe::build_kframe;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> (Dataset<f64>, ModelParams<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ViewGraph::new(
            vec![View { name: "a".into(), dim: 4 }, View { name: "b".into(), dim: 3 }],
            vec![(0, 1)],
        )
        .unwrap();
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let mask = DMatrix::from_fn(4, 3, |r, c| (r + c) % 5 != 0);
        let ds = Dataset::new(g, vec![MaskedMatrix::new(x, mask).unwrap()]).unwrap();
        let dims = [4, 3];
        let n = ModelParams::<f64>::count_for(&dims, 2);
        let flat: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        (ds, ModelParams::from_flat(&dims, 2, &flat).unwrap())
    }

    #[test]
    fn factor_split_recombines_to_frame() {
        let (_, params) = toy(3);
        let xi = params.xi(0);
        let v = build_kframe(xi);
        for (a, b) in xi.pairs() {
            let split = factor_split(xi, a, b).unwrap();
            let diff = (recombine(&split) - v.matrix()).abs().max();
            assert!(diff < 1e-12, "split ({a},{b}) off by {diff}");
        }
        assert!(factor_split(xi, 0, 1).is_err());
    }

    #[test]
    fn sweep_matches_dense_trace_form() {
        let (ds, params) = toy(11);
        let pen = Penalties::new([0.3, 0.2, 0.4, 0.1]).with_tau(0.05);
        let flat = full_gradient(&ds, &params, &pen).unwrap();
        for view in 0..2 {
            let off = ModelParams::<f64>::angle_offset(&params.dims(), 2, view);
            for (t, (a, b)) in params.xi(view).pairs().enumerate() {
                let direct = grad_xi(&ds, &params, &pen, view, a, b).unwrap();
                assert!((direct - flat[off + t]).abs() < 1e-10 * (1.0 + direct.abs()));
            }
            let gd = grad_d(&ds, &params, &pen, view).unwrap();
            let off = ModelParams::<f64>::diagonal_offset(&params.dims(), 2, view);
            for c in 0..2 {
                assert_eq!(gd[c], flat[off + c]);
            }
        }
    }

    #[test]
    fn zero_diagonals_make_angles_irrelevant() {
        let (ds, mut params) = toy(5);
        for i in 0..2 {
            params.d_mut(i).fill(0.0);
        }
        let g = full_gradient(&ds, &params, &Penalties::none()).unwrap();
        let n_angles = params.parameter_count() - 2 * 2;
        assert!(g[..n_angles].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn group_penalty_gradient_by_hand() {
        // Only λ2 active; d rows (3, 4) across two views for component 0.
        let g = ViewGraph::new(
            vec![View { name: "a".into(), dim: 2 }, View { name: "b".into(), dim: 2 }],
            vec![(0, 1)],
        )
        .unwrap();
        let ds = Dataset::new(g, vec![MaskedMatrix::fully_observed(DMatrix::identity(2, 2)).unwrap()]).unwrap();
        let mut params = ModelParams::zeros(&[2, 2], 1).unwrap();
        params.d_mut(0)[0] = 3.0;
        params.d_mut(1)[0] = 4.0;
        // c = mean Frobenius norm = √2, so the factor is 2^{3/4}.
        let pen = Penalties::new([0.0, 1.0, 0.0, 0.0]);
        let factor = 2f64.powf(0.75);
        let with = grad_d(&ds, &params, &pen, 0).unwrap()[0];
        let without = grad_d(&ds, &params, &Penalties::none(), 0).unwrap()[0];
        assert!(((with - without) / factor - 0.6).abs() < 1e-10);
        let with = grad_d(&ds, &params, &pen, 1).unwrap()[0];
        let without = grad_d(&ds, &params, &Penalties::none(), 1).unwrap()[0];
        assert!(((with - without) / factor - 0.8).abs() < 1e-10);
    }
}
