//! Interpretation of a fitted model: the augmented D matrix, explained
//! variation, effective rank, sign bi-clustering and imputation.

use crate::data::{Dataset, NormalizationRecord, ViewGraph};
use crate::error::{Error, Result};
use crate::kframe::KFrame;
use crate::objective::{reconstruct, ModelParams};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default magnitude below which D and V·D entries count as exact zeros.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-4;

/// A fitted model with near-zeros snapped to exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution<T: Scalar> {
    graph: ViewGraph,
    params: ModelParams<T>,
    loadings: Vec<KFrame<T>>,
    scaled_loadings: Vec<DMatrix<T>>,
    augmented_d: DMatrix<T>,
    matrix_norms_sq: Vec<T>,
    zero_threshold: T,
    normalization: Option<NormalizationRecord<T>>,
}

fn snap<T: Scalar>(x: T, threshold: T) -> T {
    if x.abs() < threshold {
        T::zero()
    } else {
        x
    }
}

impl<T: Scalar> Solution<T> {
    /// Snaps `params` against `dataset`. Squared norms for R² use observed
    /// entries only.
    pub fn new(dataset: &Dataset<T>, params: ModelParams<T>, zero_threshold: T) -> Result<Self> {
        let norms = dataset.matrices().iter().map(|m| m.frobenius_sq()).collect();
        Self::from_parts(dataset.graph().clone(), params, norms, zero_threshold)
    }

    /// Rebuilds a solution without the raw data.
    pub fn from_parts(
        graph: ViewGraph,
        params: ModelParams<T>,
        matrix_norms_sq: Vec<T>,
        zero_threshold: T,
    ) -> Result<Self> {
        if params.dims() != graph.dims() {
            return Err(Error::Dimension("parameters do not match the view graph".into()));
        }
        if matrix_norms_sq.len() != graph.n_matrices() {
            return Err(Error::Dimension(format!(
                "{} matrix norms for {} matrices",
                matrix_norms_sq.len(),
                graph.n_matrices()
            )));
        }
        if !(zero_threshold >= T::zero()) {
            return Err(Error::Parameter("zero threshold must be nonnegative".into()));
        }
        let mut params = params;
        for i in 0..params.n_views() {
            params.d_mut(i).apply(|x| *x = snap(*x, zero_threshold));
        }
        let loadings = params.frames();
        let scaled_loadings = loadings
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut vd = v.matrix().clone();
                for c in 0..params.k() {
                    let dc = params.d(i)[c];
                    vd.column_mut(c).apply(|x| *x = snap(*x * dc, zero_threshold));
                }
                vd
            })
            .collect();
        let augmented_d = params.augmented_d();
        Ok(Self {
            graph,
            params,
            loadings,
            scaled_loadings,
            augmented_d,
            matrix_norms_sq,
            zero_threshold,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, record: NormalizationRecord<T>) -> Self {
        self.normalization = Some(record);
        self
    }

    pub fn graph(&self) -> &ViewGraph {
        &self.graph
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn loadings(&self) -> &[KFrame<T>] {
        &self.loadings
    }

    /// Snapped `V_i D_i` per view.
    pub fn scaled_loadings(&self) -> &[DMatrix<T>] {
        &self.scaled_loadings
    }

    /// The k×n_v matrix whose column `i` is `diag(D_i)`.
    pub fn augmented_d(&self) -> &DMatrix<T> {
        &self.augmented_d
    }

    pub fn matrix_norms_sq(&self) -> &[T] {
        &self.matrix_norms_sq
    }

    pub fn zero_threshold(&self) -> T {
        self.zero_threshold
    }

    pub fn normalization(&self) -> Option<&NormalizationRecord<T>> {
        self.normalization.as_ref()
    }

    /// Nonzero rows of 𝒟.
    pub fn active_components(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&c| self.augmented_d.row(c).iter().any(|&x| x != T::zero()))
            .collect()
    }

    /// Components nonzero in both views of matrix `m`.
    pub fn matrix_components(&self, m: usize) -> Vec<usize> {
        let (i, j) = self.graph.links()[m];
        (0..self.k())
            .filter(|&c| self.augmented_d[(c, i)] * self.augmented_d[(c, j)] != T::zero())
            .collect()
    }

    /// `Σ_(i,j)∈S 𝒟²_ci 𝒟²_cj` for each component.
    pub fn component_importance(&self) -> Vec<T> {
        (0..self.k())
            .map(|c| {
                self.graph.links().iter().fold(T::zero(), |s, &(i, j)| {
                    let w = self.augmented_d[(c, i)] * self.augmented_d[(c, j)];
                    s + w * w
                })
            })
            .collect()
    }

    /// Components sorted by decreasing importance, ties by index.
    pub fn component_order(&self) -> Vec<usize> {
        let imp = self.component_importance();
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| imp[b].partial_cmp(&imp[a]).unwrap_or(std::cmp::Ordering::Equal));
        order
    }
}

/// Number of rows of 𝒟 with a nonzero entry.
pub fn effective_rank<T: Scalar>(solution: &Solution<T>) -> usize {
    solution.active_components().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2<T> {
    pub per_component: Vec<T>,
    pub total: T,
}

/// Explained variation of matrix `m`, per component and in total.
pub fn r2_matrix<T: Scalar>(solution: &Solution<T>, m: usize) -> Result<R2<T>> {
    let (i, j) = *solution
        .graph
        .links()
        .get(m)
        .ok_or_else(|| Error::Index(format!("matrix {m} does not exist")))?;
    let norm = solution.matrix_norms_sq[m];
    if !(norm > T::zero()) {
        return Err(Error::Parameter(format!("matrix {m} has zero norm")));
    }
    let d = &solution.augmented_d;
    let per_component: Vec<T> = (0..solution.k())
        .map(|c| {
            let w = d[(c, i)] * d[(c, j)];
            w * w / norm
        })
        .collect();
    let total = per_component.iter().fold(T::zero(), |s, &x| s + x);
    Ok(R2 { per_component, total })
}

/// Share of the variation of `target` explained by the components active in
/// `source`.
pub fn directed_r2<T: Scalar>(solution: &Solution<T>, target: usize, source: usize) -> Result<T> {
    if source >= solution.graph.n_matrices() {
        return Err(Error::Index(format!("matrix {source} does not exist")));
    }
    let r2 = r2_matrix(solution, target)?;
    Ok(solution
        .matrix_components(source)
        .into_iter()
        .fold(T::zero(), |s, c| s + r2.per_component[c]))
}

/// Directed R² for every ordered pair, `table[target][source]`. Matrices
/// with zero norm get zero rows.
pub fn directed_r2_table<T: Scalar>(solution: &Solution<T>) -> DMatrix<T> {
    let n = solution.graph.n_matrices();
    DMatrix::from_fn(n, n, |t, s| directed_r2(solution, t, s).unwrap_or(T::zero()))
}

/// `X̂_ij = V_i D_i D_j V_jᵀ` in the normalized scale. The pair need not be
/// observed.
pub fn impute<T: Scalar>(solution: &Solution<T>, row_view: usize, col_view: usize) -> Result<DMatrix<T>> {
    let n_v = solution.params.n_views();
    for v in [row_view, col_view] {
        if v >= n_v {
            return Err(Error::Index(format!("view {v} does not exist ({n_v} views)")));
        }
    }
    let p = &solution.params;
    Ok(reconstruct(
        solution.loadings[row_view].matrix(),
        p.d(row_view),
        p.d(col_view),
        solution.loadings[col_view].matrix(),
    ))
}

/// [`impute`] mapped back to the input scale. Observed pairs undo their own
/// centering and scaling; other pairs only the global rescale.
pub fn impute_denormalized<T: Scalar>(
    solution: &Solution<T>,
    row_view: usize,
    col_view: usize,
    record: &NormalizationRecord<T>,
) -> Result<DMatrix<T>> {
    let y = impute(solution, row_view, col_view)?;
    let g = &solution.graph;
    if let Some(m) = g.link_index(row_view, col_view) {
        Ok(record.denormalize_block(m, &y))
    } else if let Some(m) = g.link_index(col_view, row_view) {
        Ok(record.denormalize_block(m, &y.transpose()).transpose())
    } else {
        Ok(y / record.global_scale)
    }
}

/// Sign of a loading entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn of<T: Scalar>(x: T) -> Self {
        if x > T::zero() {
            Sign::Positive
        } else if x < T::zero() {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Zero => '0',
            Sign::Negative => '-',
        }
    }
}

/// Sign partition of one view's items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewClusters {
    pub view: usize,
    /// `labels[item][t]`: sign of the item on the `t`-th ordered component.
    pub labels: Vec<Vec<Sign>>,
    /// Items ordered so that equal sign paths are contiguous.
    pub order: Vec<usize>,
    /// `cluster_ids[t][item]`: cluster of the item after `t + 1` splits.
    pub cluster_ids: Vec<Vec<usize>>,
}

impl ViewClusters {
    pub fn cluster_count(&self, depth: usize) -> usize {
        self.cluster_ids[depth - 1].iter().max().map_or(0, |&m| m + 1)
    }

    /// Members of each cluster at `depth`, clusters in tree order.
    pub fn clusters(&self, depth: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count(depth)];
        for &item in &self.order {
            out[self.cluster_ids[depth - 1][item]].push(item);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bicluster {
    pub depth: usize,
    /// Component used at each level, most important first.
    pub components: Vec<usize>,
    pub views: Vec<ViewClusters>,
}

/// Ternary sign trees for `views`, splitting on the `depth` most important
/// components.
pub fn bicluster<T: Scalar>(solution: &Solution<T>, views: &[usize], depth: usize) -> Result<Bicluster> {
    let available = effective_rank(solution);
    if depth > available {
        return Err(Error::Depth {
            requested: depth,
            available,
        });
    }
    let n_v = solution.params.n_views();
    let components: Vec<usize> = solution.component_order().into_iter().take(depth).collect();
    let views = views
        .iter()
        .map(|&view| {
            if view >= n_v {
                return Err(Error::Index(format!("view {view} does not exist ({n_v} views)")));
            }
            let vd = &solution.scaled_loadings[view];
            let labels: Vec<Vec<Sign>> = (0..vd.nrows())
                .map(|r| components.iter().map(|&c| Sign::of(vd[(r, c)])).collect())
                .collect();
            let mut order: Vec<usize> = (0..vd.nrows()).collect();
            order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
            let cluster_ids = (1..=depth)
                .map(|t| {
                    let mut ids = vec![0; labels.len()];
                    let mut next = 0;
                    let mut prev: Option<&[Sign]> = None;
                    for &item in &order {
                        let path = &labels[item][..t];
                        if prev.is_some_and(|p| p != path) {
                            next += 1;
                        }
                        ids[item] = next;
                        prev = Some(path);
                    }
                    ids
                })
                .collect();
            Ok(ViewClusters {
                view,
                labels,
                order,
                cluster_ids,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Bicluster {
        depth,
        components,
        views,
    })
}

/// Scaled loadings of a single view as items × k.
pub fn view_scores<T: Scalar>(solution: &Solution<T>, view: usize) -> Option<&DMatrix<T>> {
    solution.scaled_loadings.get(view)
}

/// Column `i` of 𝒟.
pub fn view_diagonal<T: Scalar>(solution: &Solution<T>, view: usize) -> Option<DVector<T>> {
    (view < solution.params.n_views()).then(|| solution.augmented_d.column(view).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MaskedMatrix, View};
    use crate::kframe::{GivensAngles, KFrame};

    fn graph(dims: &[usize], links: Vec<(usize, usize)>) -> ViewGraph {
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

    fn params(dims: &[usize], d: &[&[f64]]) -> ModelParams<f64> {
        let k = d[0].len();
        let xi = dims.iter().map(|&p| GivensAngles::zeros(p, k).unwrap()).collect();
        ModelParams::new(k, xi, d.iter().map(|x| DVector::from_row_slice(x)).collect()).unwrap()
    }

    #[test]
    fn snapping_and_effective_rank() {
        let g = graph(&[3, 3], vec![(0, 1)]);
        let p = params(&[3, 3], &[&[1.0, 5e-5, 0.0], &[2.0, 1.0, 0.0]]);
        let s = Solution::from_parts(g, p, vec![4.0], 1e-4).unwrap();
        assert_eq!(s.augmented_d()[(1, 0)], 0.0);
        assert_eq!(effective_rank(&s), 2);
        assert_eq!(s.matrix_components(0), vec![0]);
    }

    #[test]
    fn r2_on_exact_fit_is_one() {
        let g = graph(&[2, 2], vec![(0, 1)]);
        let p = params(&[2, 2], &[&[2.0, 1.0], &[1.5, 1.0]]);
        let x = impute(&Solution::from_parts(g.clone(), p.clone(), vec![1.0], 0.0).unwrap(), 0, 1).unwrap();
        let ds = Dataset::new(g, vec![MaskedMatrix::fully_observed(x).unwrap()]).unwrap();
        let s = Solution::new(&ds, p, 1e-4).unwrap();
        let r2 = r2_matrix(&s, 0).unwrap();
        assert!((r2.total - 1.0).abs() < 1e-12);
        assert!((r2.per_component[0] - 9.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn directed_r2_counts_shared_components_only() {
        // Views 0,1,2,3; matrices (0,3), (1,3), (2,3).
        // Component 0 is shared by matrices 0 and 1, component 1 only in 2.
        let g = graph(&[2, 2, 2, 2], vec![(0, 3), (1, 3), (2, 3)]);
        let p = params(
            &[2, 2, 2, 2],
            &[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]],
        );
        let s = Solution::from_parts(g, p, vec![2.0, 8.0, 4.0], 0.0).unwrap();
        assert_eq!(directed_r2(&s, 0, 1).unwrap(), 0.5);
        assert_eq!(directed_r2(&s, 0, 2).unwrap(), 0.0);
        assert_eq!(directed_r2(&s, 2, 2).unwrap(), r2_matrix(&s, 2).unwrap().total);
        let t = directed_r2_table(&s);
        assert_eq!(t[(1, 0)], 0.5);
    }

    #[test]
    fn zero_norm_matrix_is_an_error() {
        let g = graph(&[2, 2], vec![(0, 1)]);
        let s = Solution::from_parts(g, params(&[2, 2], &[&[1.0], &[1.0]]), vec![0.0], 0.0).unwrap();
        assert!(r2_matrix(&s, 0).is_err());
    }

    #[test]
    fn bicluster_by_sign() {
        let g = graph(&[5, 2], vec![(0, 1)]);
        let col = DVector::from_vec(vec![0.5, 0.5, 0.0, -0.5, -0.5]);
        let v = KFrame::new(DMatrix::from_column_slice(5, 1, col.as_slice())).unwrap();
        let xi0 = crate::kframe::invert_kframe(&v).unwrap();
        let xi1 = GivensAngles::zeros(2, 1).unwrap();
        let p = ModelParams::new(1, vec![xi0, xi1], vec![DVector::from_element(1, 1.0); 2]).unwrap();
        let s = Solution::from_parts(g, p, vec![1.0], 1e-4).unwrap();
        let b = bicluster(&s, &[0], 1).unwrap();
        assert_eq!(b.views[0].clusters(1), vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert!(matches!(bicluster(&s, &[0], 2), Err(Error::Depth { .. })));
    }

    #[test]
    fn impute_zero_solution_and_unknown_view() {
        let g = graph(&[2, 3], vec![(0, 1)]);
        let s = Solution::from_parts(g, params(&[2, 3], &[&[0.0], &[0.0]]), vec![1.0], 0.0).unwrap();
        assert_eq!(impute(&s, 0, 1).unwrap(), DMatrix::zeros(2, 3));
        assert!(impute(&s, 0, 2).is_err());
    }
}
