//! Starting values that treat every component as globally joint.
//!
//! Loadings come from the SVD of each view's concatenated data, the scale
//! diagonals from a sign-then-magnitude fit to `diag(V_iᵀ X_ij V_j)`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kframe::{invert_kframe, orthogonal_complement, KFrame};
use crate::objective::{ModelParams, PARALLEL_THRESHOLD};
use crate::optimizer::{minimize, FnProblem, OptimizerConfig};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// All matrices touching `view`, oriented with the view's items as rows and
/// placed side by side. Missing entries are zero.
pub fn concatenate_view<T: Scalar>(dataset: &Dataset<T>, view: usize) -> DMatrix<T> {
    let p = dataset.graph().dim(view);
    let blocks: Vec<DMatrix<T>> = dataset
        .graph()
        .links()
        .iter()
        .zip(dataset.matrices())
        .filter_map(|(&(r, c), m)| {
            if r == view {
                Some(m.values().clone())
            } else if c == view {
                Some(m.values().transpose())
            } else {
                None
            }
        })
        .collect();
    let width = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(p, width);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(&b);
        at += b.ncols();
    }
    out
}

/// Top-`k` left singular vectors of `x`, padded with an orthonormal
/// completion when fewer than `k` singular values are nonzero.
pub fn leading_left_vectors<T: Scalar>(x: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let p = x.nrows();
    let (u, sv) = if x.ncols() == 0 {
        (DMatrix::zeros(p, 0), DVector::zeros(0))
    } else {
        let svd = x.clone().svd(true, false);
        (svd.u.expect("left vectors requested"), svd.singular_values)
    };
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));
    let top = sv.iter().fold(T::zero(), |m, &s| m.max(s));
    let cutoff = top * T::default_epsilon() * T::from_count(p.max(x.ncols()).max(1));
    let rank = order.iter().take(k).filter(|&&i| sv[i] > cutoff).count();
    let mut out = DMatrix::zeros(p, k);
    for (col, &i) in order.iter().take(rank).enumerate() {
        let mut v = u.column(i).into_owned();
        // Largest entry positive, for a reproducible sign.
        let pivot = v.iter().fold(T::zero(), |m, &e| if e.abs() > m.abs() { e } else { m });
        if pivot < T::zero() {
            v.neg_mut();
        }
        out.set_column(col, &v);
    }
    if rank < k {
        log::warn!("only {rank} of {k} singular values are nonzero; padding loadings with an arbitrary completion");
        let head = KFrame::from_matrix_unchecked(out.columns(0, rank).into_owned());
        let pad = orthogonal_complement(&head);
        out.columns_mut(rank, k - rank).copy_from(&pad.columns(0, k - rank));
    }
    out
}

/// Initial loadings per view. Square frames are made proper rotations by
/// flipping their last column if needed.
pub fn initial_loadings<T: Scalar>(dataset: &Dataset<T>, k: usize) -> Result<Vec<KFrame<T>>> {
    check_rank(dataset, k)?;
    let one = |i: usize| {
        let mut v = leading_left_vectors(&concatenate_view(dataset, i), k);
        if v.nrows() == k && v.clone().determinant() < T::zero() {
            v.column_mut(k - 1).neg_mut();
        }
        KFrame::from_matrix_unchecked(v)
    };
    let work: usize = dataset.matrices().iter().map(|m| m.nrows() * m.ncols()).sum();
    let n_v = dataset.n_views();
    Ok(if work >= PARALLEL_THRESHOLD {
        (0..n_v).into_par_iter().map(one).collect()
    } else {
        (0..n_v).map(one).collect()
    })
}

fn check_rank<T: Scalar>(dataset: &Dataset<T>, k: usize) -> Result<()> {
    let smallest = dataset.graph().dims().into_iter().min().unwrap_or(0);
    if k == 0 || k > smallest {
        return Err(Error::Dimension(format!(
            "rank {k} must be between 1 and the smallest view dimension {smallest}"
        )));
    }
    Ok(())
}

/// `diag(V_iᵀ X_ij V_j)` for every link, in link order.
pub fn cross_diagonals<T: Scalar>(dataset: &Dataset<T>, frames: &[KFrame<T>]) -> Vec<DVector<T>> {
    dataset
        .graph()
        .links()
        .iter()
        .zip(dataset.matrices())
        .map(|(&(i, j), m)| {
            let vi = frames[i].matrix();
            let xv = m.values() * frames[j].matrix();
            DVector::from_fn(vi.ncols(), |c, _| vi.column(c).dot(&xv.column(c)))
        })
        .collect()
}

/// `Σ_links Σ_c (d_i[c] d_j[c] − Λ_ij[c])²`.
pub fn diagonal_fit_error<T: Scalar>(links: &[(usize, usize)], lambda: &[DVector<T>], d: &[DVector<T>]) -> T {
    links
        .iter()
        .zip(lambda)
        .fold(T::zero(), |acc, (&(i, j), l)| {
            l.iter().enumerate().fold(acc, |s, (c, &lv)| {
                let e = d[i][c] * d[j][c] - lv;
                s + e * e
            })
        })
}

/// Magnitudes `sqrt(mean_j |Λ_ij[c]|)` per view and component.
fn starting_magnitudes<T: Scalar>(n_v: usize, k: usize, links: &[(usize, usize)], lambda: &[DVector<T>]) -> Vec<DVector<T>> {
    let mut sum = vec![DVector::<T>::zeros(k); n_v];
    let mut count = vec![0usize; n_v];
    for (&(i, j), l) in links.iter().zip(lambda) {
        for v in [i, j] {
            sum[v] += l.abs();
            count[v] += 1;
        }
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, n)| s.map(|x| (x / T::from_count(n.max(1))).sqrt()))
        .collect()
}

/// Greedy signs: components in order, views in index order, each sign
/// chosen to minimize the error of the links touching that view with the
/// other signs held fixed. Ties keep the positive sign.
fn greedy_signs<T: Scalar>(links: &[(usize, usize)], lambda: &[DVector<T>], magnitudes: &[DVector<T>]) -> Vec<DVector<T>> {
    let mut d = magnitudes.to_vec();
    let k = magnitudes.first().map_or(0, |m| m.len());
    for c in 0..k {
        for view in 0..d.len() {
            let local = |d: &[DVector<T>]| {
                links
                    .iter()
                    .zip(lambda)
                    .filter(|(&(i, j), _)| i == view || j == view)
                    .fold(T::zero(), |s, (&(i, j), l)| {
                        let e = d[i][c] * d[j][c] - l[c];
                        s + e * e
                    })
            };
            let plus = local(&d);
            d[view][c] = -d[view][c];
            let minus = local(&d);
            if minus >= plus {
                d[view][c] = -d[view][c];
            }
        }
    }
    d
}

/// Least-squares fit of the diagonals to `Λ` starting from `start`.
fn fit_magnitudes<T: Scalar>(
    links: &[(usize, usize)],
    lambda: &[DVector<T>],
    start: &[DVector<T>],
    config: &OptimizerConfig,
) -> Result<Vec<DVector<T>>> {
    let n_v = start.len();
    let k = start.first().map_or(0, |s| s.len());
    let unflatten = |x: &[T]| -> Vec<DVector<T>> {
        (0..n_v).map(|i| DVector::from_column_slice(&x[i * k..(i + 1) * k])).collect()
    };
    let f = |x: &[T]| diagonal_fit_error(links, lambda, &unflatten(x));
    let g = |x: &[T]| {
        let d = unflatten(x);
        let mut grad = vec![T::zero(); n_v * k];
        for (&(i, j), l) in links.iter().zip(lambda) {
            for c in 0..k {
                let e = T::lit(2.0) * (d[i][c] * d[j][c] - l[c]);
                grad[i * k + c] += e * d[j][c];
                grad[j * k + c] += e * d[i][c];
            }
        }
        grad
    };
    let x0: Vec<T> = start.iter().flat_map(|s| s.iter().copied()).collect();
    let (x, _) = minimize(&FnProblem::new(n_v * k, f, g), &x0, config)?;
    Ok(unflatten(&x))
}

/// Scale diagonals fitted to `Λ`: greedy signs then a continuous magnitude
/// fit. The all-positive start is fitted too and the better result kept.
pub fn fit_diagonals<T: Scalar>(
    n_v: usize,
    k: usize,
    links: &[(usize, usize)],
    lambda: &[DVector<T>],
    config: &OptimizerConfig,
) -> Result<Vec<DVector<T>>> {
    let mags = starting_magnitudes(n_v, k, links, lambda);
    let signed = greedy_signs(links, lambda, &mags);
    let greedy = fit_magnitudes(links, lambda, &signed, config)?;
    let positive = fit_magnitudes(links, lambda, &mags, config)?;
    let eg = diagonal_fit_error(links, lambda, &greedy);
    let ep = diagonal_fit_error(links, lambda, &positive);
    Ok(if ep < eg { positive } else { greedy })
}

/// Starting parameters assuming all `k` components are shared by every
/// view.
pub fn init_global<T: Scalar>(dataset: &Dataset<T>, k: usize) -> Result<ModelParams<T>> {
    let frames = initial_loadings(dataset, k)?;
    let lambda = cross_diagonals(dataset, &frames);
    let config = OptimizerConfig {
        gradient_tolerance: 1e-10,
        objective_tolerance: 1e-14,
        ..OptimizerConfig::default()
    };
    let d = fit_diagonals(dataset.n_views(), k, dataset.graph().links(), &lambda, &config)?;
    let xi = frames.iter().map(invert_kframe).collect::<Result<Vec<_>>>()?;
    ModelParams::new(k, xi, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MaskedMatrix, View, ViewGraph};
    use crate::kframe::build_kframe;
    use crate::objective::reconstruction_loss;

    fn dataset(mats: Vec<DMatrix<f64>>, dims: &[usize], links: Vec<(usize, usize)>) -> Dataset<f64> {
        let views = dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| View {
                name: format!("v{i}"),
                dim,
            })
            .collect();
        let g = ViewGraph::new(views, links).unwrap();
        Dataset::new(g, mats.into_iter().map(|m| MaskedMatrix::fully_observed(m).unwrap()).collect()).unwrap()
    }

    #[test]
    fn concatenation_orients_each_block() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let ds = dataset(vec![a.clone(), b.clone()], &[2, 3, 4], vec![(0, 1), (2, 0)]);
        let c = concatenate_view(&ds, 0);
        assert_eq!(c.shape(), (2, 7));
        assert_eq!(c.columns(0, 3), a);
        assert_eq!(c.columns(3, 4), b.transpose());
    }

    #[test]
    fn rank_one_matrix_is_fitted_at_initialization() {
        let u = DVector::from_vec(vec![0.6, 0.0, -0.8]);
        let v = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let x = &u * v.transpose() * 3.0;
        let ds = dataset(vec![x], &[3, 4], vec![(0, 1)]);
        let p = init_global(&ds, 1).unwrap();
        let d0 = p.d(0)[0];
        let d1 = p.d(1)[0];
        assert!(((d0 * d1).abs() - 3.0).abs() < 1e-8, "{d0} {d1}");
        assert!(reconstruction_loss(&ds, &p) < 1e-8);
        let v0 = build_kframe(p.xi(0));
        assert!((v0.matrix().column(0).dot(&u).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_data_is_padded() {
        let ds = dataset(vec![DMatrix::zeros(3, 3)], &[3, 3], vec![(0, 1)]);
        let frames = initial_loadings(&ds, 2).unwrap();
        for f in frames {
            assert!(f.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn square_frames_are_proper_rotations() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        let ds = dataset(vec![x], &[2, 2], vec![(0, 1)]);
        let p = init_global(&ds, 2).unwrap();
        assert!(reconstruction_loss(&ds, &p) < 1e-8);
    }

    #[test]
    fn greedy_signs_resolve_negative_products() {
        // Three views in a triangle with one negative link.
        let links = vec![(0, 1), (1, 2), (0, 2)];
        let lambda = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![-1.0]),
        ];
        let cfg = OptimizerConfig::default();
        let d = fit_diagonals(3, 1, &links, &lambda, &cfg).unwrap();
        assert!(diagonal_fit_error(&links, &lambda, &d) < 1e-10);
    }

    #[test]
    fn rank_above_smallest_view_is_rejected() {
        let ds = dataset(vec![DMatrix::zeros(2, 3)], &[2, 3], vec![(0, 1)]);
        assert!(init_global(&ds, 3).is_err());
    }
}
