//! Augmented multi-view data: views, the matrices linking them, missingness
//! masks, normalization and element hold-out.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A set of rows or columns shared across matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub name: String,
    pub dim: usize,
}

/// Views and the ordered pairs `(row_view, col_view)` for which a matrix
/// exists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewGraph {
    views: Vec<View>,
    links: Vec<(usize, usize)>,
}

impl ViewGraph {
    pub fn new(views: Vec<View>, links: Vec<(usize, usize)>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Graph("no views".into()));
        }
        if let Some(v) = views.iter().find(|v| v.dim == 0) {
            return Err(Error::Graph(format!("view '{}' has dimension 0", v.name)));
        }
        if links.is_empty() {
            return Err(Error::Graph("no matrices".into()));
        }
        let n_v = views.len();
        for (m, &(i, j)) in links.iter().enumerate() {
            if i >= n_v || j >= n_v {
                return Err(Error::Graph(format!(
                    "matrix {m} references view ({i},{j}) but only {n_v} views exist"
                )));
            }
            if i == j {
                return Err(Error::Graph(format!("matrix {m} links view {i} to itself")));
            }
            if links[..m].contains(&(i, j)) {
                return Err(Error::Graph(format!("pair ({i},{j}) appears twice")));
            }
        }
        for (v, view) in views.iter().enumerate() {
            if !links.iter().any(|&(i, j)| i == v || j == v) {
                return Err(Error::Graph(format!(
                    "view '{}' is not touched by any matrix",
                    view.name
                )));
            }
        }
        let graph = Self { views, links };
        if graph.components() > 1 {
            log::warn!(
                "view graph has {} connected components; they are fitted jointly but share no information",
                graph.components()
            );
        }
        Ok(graph)
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_matrices(&self) -> usize {
        self.links.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.dim).collect()
    }

    pub fn dim(&self, view: usize) -> usize {
        self.views[view].dim
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    pub fn link_index(&self, row_view: usize, col_view: usize) -> Option<usize> {
        self.links.iter().position(|&l| l == (row_view, col_view))
    }

    /// Number of connected components of the graph whose edges are the links.
    pub fn components(&self) -> usize {
        let n = self.views.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.links {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
            }
        }
        (0..n).filter(|&x| find(&mut parent, x) == x).count()
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }
}

/// One data block `X_ij` with its observation mask. Missing entries hold 0 in
/// `values` and are ignored everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMatrix<T: Scalar> {
    values: DMatrix<T>,
    observed: DMatrix<bool>,
}

impl<T: Scalar> MaskedMatrix<T> {
    pub fn new(values: DMatrix<T>, observed: DMatrix<bool>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::Dimension(format!(
                "values {:?} and mask {:?} differ in shape",
                values.shape(),
                observed.shape()
            )));
        }
        let mut values = values;
        for (x, &o) in values.iter_mut().zip(observed.iter()) {
            if !o {
                *x = T::zero();
            } else if !x.is_finite_value() {
                return Err(Error::Parameter("observed value is not finite".into()));
            }
        }
        Ok(Self { values, observed })
    }

    pub fn fully_observed(values: DMatrix<T>) -> Result<Self> {
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, observed)
    }

    /// Builds a matrix from optional entries, `None` marking a missing value.
    pub fn from_options(rows: usize, cols: usize, entries: &[Option<T>]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        let values = DMatrix::from_fn(rows, cols, |r, c| entries[r * cols + c].unwrap_or(T::zero()));
        let observed = DMatrix::from_fn(rows, cols, |r, c| entries[r * cols + c].is_some());
        Self::new(values, observed)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.observed[(r, c)]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        self.observed[(r, c)].then(|| self.values[(r, c)])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Squared Frobenius norm over observed entries.
    pub fn frobenius_sq(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &x| acc + x * x)
    }

    pub fn frobenius(&self) -> T {
        self.frobenius_sq().sqrt()
    }

    /// Largest singular value of the zero-filled matrix.
    pub fn max_singular_value(&self) -> T {
        self.values
            .clone()
            .singular_values()
            .iter()
            .fold(T::zero(), |acc, &s| acc.max(s))
    }

    /// `self` with every observed value multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            values: &self.values * s,
            observed: self.observed.clone(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.transpose(),
            observed: self.observed.transpose(),
        }
    }
}

/// A view graph together with one masked matrix per link.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Scalar> {
    graph: ViewGraph,
    matrices: Vec<MaskedMatrix<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(graph: ViewGraph, matrices: Vec<MaskedMatrix<T>>) -> Result<Self> {
        if matrices.len() != graph.n_matrices() {
            return Err(Error::Dimension(format!(
                "{} links but {} matrices",
                graph.n_matrices(),
                matrices.len()
            )));
        }
        for (m, (x, &(i, j))) in matrices.iter().zip(graph.links()).enumerate() {
            let want = (graph.dim(i), graph.dim(j));
            if x.values().shape() != want {
                return Err(Error::Dimension(format!(
                    "matrix {m} ({} x {}) is {:?}, expected {want:?}",
                    graph.views()[i].name,
                    graph.views()[j].name,
                    x.values().shape()
                )));
            }
            if x.observed_count() == 0 {
                return Err(Error::NoObserved { matrix: m });
            }
        }
        Ok(Self { graph, matrices })
    }

    pub fn graph(&self) -> &ViewGraph {
        &self.graph
    }

    pub fn matrices(&self) -> &[MaskedMatrix<T>] {
        &self.matrices
    }

    pub fn matrix(&self, m: usize) -> &MaskedMatrix<T> {
        &self.matrices[m]
    }

    pub fn n_views(&self) -> usize {
        self.graph.n_views()
    }

    pub fn n_matrices(&self) -> usize {
        self.matrices.len()
    }

    /// Mean Frobenius norm over the matrices (observed entries only).
    pub fn mean_frobenius(&self) -> T {
        let total = self
            .matrices
            .iter()
            .fold(T::zero(), |acc, x| acc + x.frobenius());
        total / T::from_count(self.matrices.len())
    }

    /// Sum of squared observed values over all matrices.
    pub fn total_sq(&self) -> T {
        self.matrices
            .iter()
            .fold(T::zero(), |acc, x| acc + x.frobenius_sq())
    }

    pub fn with_matrices(&self, matrices: Vec<MaskedMatrix<T>>) -> Result<Self> {
        Self::new(self.graph.clone(), matrices)
    }
}

/// Matrix-wise relative scaling applied before the global rescale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixScaling {
    #[default]
    None,
    /// Every matrix gets Frobenius norm 1.
    EqualFrobenius,
    /// Squared Frobenius norm proportional to the number of elements.
    FrobeniusByElements,
    /// Squared Frobenius norm proportional to the number of rows.
    FrobeniusByRows,
    /// Squared Frobenius norm proportional to the number of columns.
    FrobeniusByColumns,
    /// Every matrix gets largest singular value 1.
    EqualFirstComponent,
    /// Largest singular value proportional to the number of rows.
    FirstComponentByRows,
}

/// Per-matrix centering switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Centering {
    pub rows: bool,
    pub cols: bool,
}

impl Default for Centering {
    fn default() -> Self {
        Self {
            rows: true,
            cols: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    /// Centering for each matrix, in link order. A single entry applies to all.
    pub centering: Vec<Centering>,
    pub scaling: MatrixScaling,
    /// Target for the largest singular value across all matrices.
    pub max_singular_value: f64,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            centering: vec![Centering::default()],
            scaling: MatrixScaling::None,
            max_singular_value: std::f64::consts::PI * std::f64::consts::PI,
        }
    }
}

impl NormalizationPolicy {
    /// Only the global singular value rescale, no centering.
    pub fn rescale_only() -> Self {
        Self {
            centering: vec![Centering {
                rows: false,
                cols: false,
            }],
            ..Self::default()
        }
    }

    fn centering_for(&self, m: usize) -> Centering {
        match self.centering.len() {
            0 => Centering {
                rows: false,
                cols: false,
            },
            1 => self.centering[0],
            _ => self.centering.get(m).copied().unwrap_or(self.centering[0]),
        }
    }
}

/// How one matrix was transformed: `y = global · scale · (x − row_mean − col_mean)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalization<T> {
    pub row_means: Vec<T>,
    pub col_means: Vec<T>,
    pub scale: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord<T> {
    pub global_scale: T,
    pub matrices: Vec<MatrixNormalization<T>>,
}

impl<T: Scalar> NormalizationRecord<T> {
    pub fn identity(dataset: &Dataset<T>) -> Self {
        Self {
            global_scale: T::one(),
            matrices: dataset
                .matrices()
                .iter()
                .map(|x| MatrixNormalization {
                    row_means: vec![T::zero(); x.nrows()],
                    col_means: vec![T::zero(); x.ncols()],
                    scale: T::one(),
                })
                .collect(),
        }
    }

    /// Maps a normalized-scale block of matrix `m` back to the input scale.
    pub fn denormalize_block(&self, m: usize, y: &DMatrix<T>) -> DMatrix<T> {
        let rec = &self.matrices[m];
        let factor = self.global_scale * rec.scale;
        DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| {
            y[(r, c)] / factor + rec.row_means[r] + rec.col_means[c]
        })
    }

    /// Inverse of [`normalize`] on every observed element.
    pub fn denormalize(&self, normalized: &Dataset<T>) -> Result<Dataset<T>> {
        let matrices = normalized
            .matrices()
            .iter()
            .enumerate()
            .map(|(m, x)| MaskedMatrix::new(self.denormalize_block(m, x.values()), x.observed().clone()))
            .collect::<Result<Vec<_>>>()?;
        normalized.with_matrices(matrices)
    }
}

fn observed_means<T: Scalar>(
    x: &DMatrix<T>,
    observed: &DMatrix<bool>,
    by_rows: bool,
    matrix: usize,
) -> Result<Vec<T>> {
    let n = if by_rows { x.nrows() } else { x.ncols() };
    (0..n)
        .map(|idx| {
            let (sum, count) = if by_rows {
                (0..x.ncols())
                    .filter(|&c| observed[(idx, c)])
                    .fold((T::zero(), 0usize), |(s, n), c| (s + x[(idx, c)], n + 1))
            } else {
                (0..x.nrows())
                    .filter(|&r| observed[(r, idx)])
                    .fold((T::zero(), 0usize), |(s, n), r| (s + x[(r, idx)], n + 1))
            };
            if count == 0 {
                Err(Error::EmptyLine {
                    matrix,
                    axis: if by_rows { "row" } else { "column" },
                    index: idx,
                })
            } else {
                Ok(sum / T::from_count(count))
            }
        })
        .collect()
}

/// Centers, scales matrix-wise and finally rescales all data so the largest
/// singular value over all matrices equals the policy target (π² by default).
pub fn normalize<T: Scalar>(
    dataset: &Dataset<T>,
    policy: &NormalizationPolicy,
) -> Result<(Dataset<T>, NormalizationRecord<T>)> {
    let mut centered = Vec::with_capacity(dataset.n_matrices());
    let mut records = Vec::with_capacity(dataset.n_matrices());
    for (m, x) in dataset.matrices().iter().enumerate() {
        let centering = policy.centering_for(m);
        let mut values = x.values().clone();
        let observed = x.observed();
        let row_means = if centering.rows {
            observed_means(&values, observed, true, m)?
        } else {
            vec![T::zero(); values.nrows()]
        };
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                values[(r, c)] -= row_means[r];
            }
        }
        let col_means = if centering.cols {
            observed_means(&values, observed, false, m)?
        } else {
            vec![T::zero(); values.ncols()]
        };
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                values[(r, c)] -= col_means[c];
            }
        }
        let centered_matrix = MaskedMatrix::new(values, observed.clone())?;
        let scale = relative_scale(&centered_matrix, policy.scaling);
        centered.push(centered_matrix.scaled(scale));
        records.push(MatrixNormalization {
            row_means,
            col_means,
            scale,
        });
    }
    let largest = centered
        .iter()
        .fold(T::zero(), |acc, x| acc.max(x.max_singular_value()));
    let global_scale = if largest > T::zero() {
        T::lit(policy.max_singular_value) / largest
    } else {
        T::one()
    };
    let matrices = centered.iter().map(|x| x.scaled(global_scale)).collect();
    Ok((
        dataset.with_matrices(matrices)?,
        NormalizationRecord {
            global_scale,
            matrices: records,
        },
    ))
}

fn relative_scale<T: Scalar>(x: &MaskedMatrix<T>, scaling: MatrixScaling) -> T {
    let safe_div = |target: T, current: T| {
        if current > T::zero() {
            target / current
        } else {
            T::one()
        }
    };
    let count = |n: usize| T::from_count(n).sqrt();
    match scaling {
        MatrixScaling::None => T::one(),
        MatrixScaling::EqualFrobenius => safe_div(T::one(), x.frobenius()),
        MatrixScaling::FrobeniusByElements => safe_div(count(x.nrows() * x.ncols()), x.frobenius()),
        MatrixScaling::FrobeniusByRows => safe_div(count(x.nrows()), x.frobenius()),
        MatrixScaling::FrobeniusByColumns => safe_div(count(x.ncols()), x.frobenius()),
        MatrixScaling::EqualFirstComponent => safe_div(T::one(), x.max_singular_value()),
        MatrixScaling::FirstComponentByRows => {
            safe_div(T::from_count(x.nrows()), x.max_singular_value())
        }
    }
}

/// Observed elements withheld for validation: `(matrix, row, col)` triples in
/// matrix, row-major order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub elements: Vec<(usize, usize, usize)>,
}

impl Holdout {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

const HOLDOUT_RETRIES: usize = 100;

/// Assigns every observed element to the test set independently with
/// probability `probability` and returns the training copy, in which test
/// elements are marked missing. A matrix whose draw would leave it with no
/// observed element is redrawn.
pub fn holdout_split<T: Scalar>(
    dataset: &Dataset<T>,
    probability: f64,
    seed: u64,
) -> Result<(Dataset<T>, Holdout)> {
    if !(0.0..1.0).contains(&probability) {
        return Err(Error::Parameter(format!(
            "hold-out probability must lie in [0, 1), got {probability}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrices = Vec::with_capacity(dataset.n_matrices());
    let mut holdout = Holdout::default();
    for (m, x) in dataset.matrices().iter().enumerate() {
        let mut attempt = 0;
        loop {
            let mut observed = x.observed().clone();
            let mut picked = Vec::new();
            for r in 0..x.nrows() {
                for c in 0..x.ncols() {
                    if x.is_observed(r, c) && probability > 0.0 && rng.random_bool(probability) {
                        observed[(r, c)] = false;
                        picked.push((m, r, c));
                    }
                }
            }
            if picked.len() < x.observed_count() {
                matrices.push(MaskedMatrix::new(x.values().clone(), observed)?);
                holdout.elements.extend(picked);
                break;
            }
            attempt += 1;
            if attempt >= HOLDOUT_RETRIES {
                return Err(Error::NoObserved { matrix: m });
            }
        }
    }
    Ok((dataset.with_matrices(matrices)?, holdout))
}
