//! k-frames (p×k matrices with orthonormal columns) parametrized by Givens
//! rotation angles.
//!
//! A frame is built as `R_1 R_2 ⋯ R_m I_{pk}` where `I_{pk}` holds the first
//! `k` columns of the p-dimensional identity and each factor is a plane
//! rotation `R_(a,b)(θ)` acting on coordinates `b < a`:
//!
//! ```text
//! R[b,b] = cos θ   R[b,a] = -sin θ
//! R[a,b] = sin θ   R[a,a] =  cos θ
//! ```
//!
//! Factor order is canonical everywhere in this crate: the column index `b`
//! runs outer over `0..k`, the row index `a` runs inner over `b+1..p`, and the
//! product is written left to right in that order. Evaluation applies the
//! factors right to left onto `I_{pk}`, one rank-2 row update each, so no
//! p×p matrix is ever formed. All indices are 0-based.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Angles of one k-frame, stored in canonical factor order.
#[derive(Clone, Debug, PartialEq)]
pub struct GivensAngles<T> {
    p: usize,
    k: usize,
    angles: Vec<T>,
}

/// Number of free angles of a p-dimensional k-frame: `pk - k(k+1)/2`.
pub fn angle_count(p: usize, k: usize) -> usize {
    p * k - k * (k + 1) / 2
}

/// Angle index pairs `(a, b)` in canonical factor order.
pub fn angle_pairs(p: usize, k: usize) -> impl Iterator<Item = (usize, usize)> + Clone {
    (0..k).flat_map(move |b| (b + 1..p).map(move |a| (a, b)))
}

fn check_shape(p: usize, k: usize) -> Result<()> {
    if p == 0 || k == 0 || k > p {
        return Err(Error::Dimension(format!(
            "k-frame needs 1 <= k <= p, got p={p}, k={k}"
        )));
    }
    Ok(())
}

impl<T: Scalar> GivensAngles<T> {
    pub fn zeros(p: usize, k: usize) -> Result<Self> {
        check_shape(p, k)?;
        Ok(Self {
            p,
            k,
            angles: vec![T::zero(); angle_count(p, k)],
        })
    }

    pub fn from_vec(p: usize, k: usize, angles: Vec<T>) -> Result<Self> {
        check_shape(p, k)?;
        if angles.len() != angle_count(p, k) {
            return Err(Error::Dimension(format!(
                "expected {} angles for p={p}, k={k}, got {}",
                angle_count(p, k),
                angles.len()
            )));
        }
        if let Some(pos) = angles.iter().position(|x| !x.is_finite_value()) {
            return Err(Error::Parameter(format!("angle {pos} is not finite")));
        }
        Ok(Self { p, k, angles })
    }

    /// Reads the strictly lower triangular part of a p×k angle layout.
    pub fn from_lower_matrix(layout: &DMatrix<T>) -> Result<Self> {
        let (p, k) = layout.shape();
        check_shape(p, k)?;
        let angles = angle_pairs(p, k).map(|(a, b)| layout[(a, b)]).collect();
        Self::from_vec(p, k, angles)
    }

    /// p×k layout with the angles below the diagonal and zeros elsewhere.
    pub fn to_lower_matrix(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.p, self.k);
        for ((a, b), &x) in angle_pairs(self.p, self.k).zip(&self.angles) {
            out[(a, b)] = x;
        }
        out
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.angles
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.angles
    }

    pub fn into_vec(self) -> Vec<T> {
        self.angles
    }

    /// Position of angle `(a, b)` in the canonical order, if it is stored.
    pub fn index_of(&self, a: usize, b: usize) -> Option<usize> {
        if b >= self.k || a <= b || a >= self.p {
            return None;
        }
        // Columns before b contribute (p-1) + (p-2) + ... + (p-b) angles.
        let before = b * self.p - b * (b + 1) / 2;
        Some(before + (a - b - 1))
    }

    pub fn get(&self, a: usize, b: usize) -> Option<T> {
        self.index_of(a, b).map(|i| self.angles[i])
    }

    pub fn set(&mut self, a: usize, b: usize, value: T) -> Result<()> {
        let i = self
            .index_of(a, b)
            .ok_or_else(|| Error::Index(format!("({a},{b}) is not a stored angle")))?;
        self.angles[i] = value;
        Ok(())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + Clone {
        angle_pairs(self.p, self.k)
    }

    /// Copy with every angle wrapped to `(-π, π]`, for display only.
    pub fn wrapped(&self) -> Self {
        let two_pi = T::two_pi();
        let angles = self
            .angles
            .iter()
            .map(|&x| {
                let mut y = x - two_pi * (x / two_pi).round();
                if y <= -T::pi() {
                    y += two_pi;
                } else if y > T::pi() {
                    y -= two_pi;
                }
                y
            })
            .collect();
        Self {
            p: self.p,
            k: self.k,
            angles,
        }
    }
}

/// Orthonormality tolerance appropriate for the scalar's precision.
pub fn orthonormality_tolerance<T: Scalar>() -> T {
    T::lit(1e-10).max(T::default_epsilon() * T::lit(1e3))
}

/// Element-wise round-trip tolerance used by [`invert_kframe`].
pub fn roundtrip_tolerance<T: Scalar>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(1e4))
}

/// A p×k matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct KFrame<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> KFrame<T> {
    /// Wraps `matrix`, checking that its columns are orthonormal.
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        let (p, k) = matrix.shape();
        if k > p || p == 0 {
            return Err(Error::Dimension(format!(
                "a k-frame needs k <= p, got {p}x{k}"
            )));
        }
        let frame = Self { matrix };
        let err = frame.orthonormality_error();
        if err > orthonormality_tolerance::<T>() {
            return Err(Error::Parameter(format!(
                "columns are not orthonormal (max |V'V - I| = {err})"
            )));
        }
        Ok(frame)
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<T>) -> Self {
        Self { matrix }
    }

    /// The first `k` columns of the p-dimensional identity.
    pub fn identity(p: usize, k: usize) -> Result<Self> {
        check_shape(p, k)?;
        Ok(Self {
            matrix: DMatrix::identity(p, k),
        })
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// `max |V'V - I|` over all elements.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.matrix.transpose() * &self.matrix;
        let k = gram.nrows();
        let mut worst = T::zero();
        for j in 0..k {
            for i in 0..k {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Left-multiplies rows `b` and `a` of `m` by the plane rotation `R_(a,b)`
/// with the given cosine and sine.
#[inline]
pub fn rotate_rows<T: Scalar>(m: &mut DMatrix<T>, a: usize, b: usize, cos: T, sin: T) {
    for col in 0..m.ncols() {
        let xb = m[(b, col)];
        let xa = m[(a, col)];
        m[(b, col)] = cos * xb - sin * xa;
        m[(a, col)] = sin * xb + cos * xa;
    }
}

/// Left-multiplies rows `b` and `a` of `m` by `R_(a,b)^T`.
#[inline]
pub fn rotate_rows_transposed<T: Scalar>(m: &mut DMatrix<T>, a: usize, b: usize, cos: T, sin: T) {
    rotate_rows(m, a, b, cos, -sin);
}

/// Evaluates `V(ξ) = R_1 ⋯ R_m I_{pk}`.
pub fn build_kframe<T: Scalar>(xi: &GivensAngles<T>) -> KFrame<T> {
    let mut v = DMatrix::identity(xi.p(), xi.k());
    let pairs: Vec<_> = xi.pairs().collect();
    for (&(a, b), &theta) in pairs.iter().zip(xi.as_slice()).rev() {
        rotate_rows(&mut v, a, b, theta.cos(), theta.sin());
    }
    KFrame::from_matrix_unchecked(v)
}

/// Dense p×p derivative of `R_(a,b)(θ)` with respect to θ. Only rows and
/// columns `a` and `b` are nonzero.
pub fn givens_derivative<T: Scalar>(theta: T, a: usize, b: usize, p: usize) -> Result<DMatrix<T>> {
    if b >= a || a >= p {
        return Err(Error::Index(format!(
            "rotation plane ({a},{b}) invalid for dimension {p}"
        )));
    }
    let (s, c) = theta.sin_cos();
    let mut d = DMatrix::zeros(p, p);
    d[(b, b)] = -s;
    d[(b, a)] = -c;
    d[(a, b)] = c;
    d[(a, a)] = -s;
    Ok(d)
}

/// An orthonormal basis of the orthogonal complement of `v`, as a
/// p×(p−k) matrix. Built by Gram–Schmidt (two passes) on the standard basis,
/// taking the candidate with the largest residual at each step.
pub fn orthogonal_complement<T: Scalar>(v: &KFrame<T>) -> DMatrix<T> {
    let p = v.p();
    let k = v.k();
    let mut basis: Vec<DVector<T>> = (0..k).map(|j| v.matrix().column(j).into_owned()).collect();
    let mut out = DMatrix::zeros(p, p - k);
    for col in 0..(p - k) {
        let mut best: Option<(T, DVector<T>)> = None;
        for e in 0..p {
            let mut r = DVector::zeros(p);
            r[e] = T::one();
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&r);
                    r.axpy(-proj, q, T::one());
                }
            }
            let norm = r.norm();
            if best.as_ref().is_none_or(|(n, _)| norm > *n) {
                best = Some((norm, r));
            }
        }
        let (norm, r) = best.expect("p > k leaves a candidate");
        let q = r / norm;
        out.set_column(col, &q);
        basis.push(q);
    }
    out
}

/// Decomposes the leading `cols` columns of an orthogonal `u` by sequential
/// Givens annihilation in canonical order. Returns the angles and the
/// annihilated remainder.
fn annihilate<T: Scalar>(u: &DMatrix<T>, cols: usize) -> (Vec<T>, DMatrix<T>) {
    let p = u.nrows();
    let mut w = u.clone();
    let mut angles = Vec::with_capacity(angle_count(p, cols));
    for (a, b) in angle_pairs(p, cols) {
        let theta = w[(a, b)].atan2(w[(b, b)]);
        rotate_rows_transposed(&mut w, a, b, theta.cos(), theta.sin());
        angles.push(theta);
    }
    (angles, w)
}

fn max_abs_diff<T: Scalar>(x: &DMatrix<T>, y: &DMatrix<T>) -> T {
    x.iter()
        .zip(y.iter())
        .fold(T::zero(), |acc, (&p, &q)| acc.max((p - q).abs()))
}

/// Recovers angles `ξ` with `build_kframe(ξ) = v`.
///
/// The frame is completed to a square orthogonal matrix `[v | v⊥]` and that
/// matrix is decomposed into plane rotations. A rotation decomposition exists
/// only when the completion has determinant +1, so a second completion with
/// the sign of the last complement column flipped is also tried. The first
/// candidate whose leading `k` angles rebuild `v` is returned. When `k = p`
/// there is no complement and frames with determinant −1 cannot be
/// represented.
pub fn invert_kframe<T: Scalar>(v: &KFrame<T>) -> Result<GivensAngles<T>> {
    let (p, k) = (v.p(), v.k());
    let complement = orthogonal_complement(v);
    let mut candidates = vec![complement.clone()];
    if p > k {
        let mut flipped = complement;
        let last = p - k - 1;
        flipped.column_mut(last).neg_mut();
        candidates.push(flipped);
    }
    let tol = roundtrip_tolerance::<T>();
    let mut best_err = None;
    for comp in candidates {
        let mut u = DMatrix::zeros(p, p);
        u.columns_mut(0, k).copy_from(v.matrix());
        u.columns_mut(k, p - k).copy_from(&comp);
        let (mut angles, remainder) = annihilate(&u, p.saturating_sub(1));
        // A proper rotation reduces to the identity.
        if max_abs_diff(&remainder, &DMatrix::identity(p, p)) > tol {
            continue;
        }
        angles.truncate(angle_count(p, k));
        let xi = GivensAngles::from_vec(p, k, angles)?;
        let err = max_abs_diff(build_kframe(&xi).matrix(), v.matrix());
        if err <= tol {
            return Ok(xi);
        }
        best_err = Some(err);
    }
    Err(Error::Inversion(match best_err {
        Some(e) => format!("best round-trip error {e} exceeds tolerance"),
        None => "no completion is a proper rotation (k = p with determinant -1?)".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_angles_give_leading_identity_columns() {
        let xi = GivensAngles::<f64>::zeros(4, 2).unwrap();
        assert_eq!(xi.len(), 4 * 2 - 3);
        assert_eq!(build_kframe(&xi).matrix(), &DMatrix::<f64>::identity(4, 2));
    }

    #[test]
    fn single_plane_rotation() {
        let theta = 0.7;
        let xi = GivensAngles::from_vec(2, 1, vec![theta]).unwrap();
        let v = build_kframe(&xi);
        assert!(close(v.matrix()[(0, 0)], theta.cos(), 1e-15));
        assert!(close(v.matrix()[(1, 0)], theta.sin(), 1e-15));
    }

    #[test]
    fn derivative_at_known_angles() {
        let d0 = givens_derivative(0.0f64, 1, 0, 2).unwrap();
        assert_eq!(d0, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let d1 = givens_derivative(std::f64::consts::FRAC_PI_2, 1, 0, 2).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(max_abs_diff(&d1, &expect) < 1e-15);
    }

    #[test]
    fn derivative_rejects_bad_planes() {
        assert!(givens_derivative(0.1f64, 0, 1, 3).is_err());
        assert!(givens_derivative(0.1f64, 3, 1, 3).is_err());
        assert!(givens_derivative(0.1f64, 1, 1, 3).is_err());
    }

    #[test]
    fn index_layout_is_canonical() {
        let xi = GivensAngles::<f64>::zeros(5, 3).unwrap();
        let pairs: Vec<_> = xi.pairs().collect();
        for (i, &(a, b)) in pairs.iter().enumerate() {
            assert_eq!(xi.index_of(a, b), Some(i));
        }
        assert_eq!(pairs[0], (1, 0));
        assert_eq!(pairs[4], (2, 1));
        assert_eq!(xi.index_of(0, 0), None);
        assert_eq!(xi.index_of(4, 3), None);
    }

    #[test]
    fn lower_matrix_layout_round_trips() {
        let xi = GivensAngles::from_vec(4, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let layout = xi.to_lower_matrix();
        assert_eq!(layout[(0, 0)], 0.0);
        assert_eq!(layout[(3, 1)], 0.5);
        assert_eq!(GivensAngles::from_lower_matrix(&layout).unwrap(), xi);
    }

    #[test]
    fn rejects_wrong_lengths_and_nan() {
        assert!(GivensAngles::from_vec(3, 2, vec![0.0; 2]).is_err());
        assert!(GivensAngles::from_vec(3, 1, vec![0.0, f64::NAN]).is_err());
        assert!(GivensAngles::<f64>::zeros(2, 3).is_err());
    }

    #[test]
    fn wrapping_stays_in_half_open_interval() {
        let pi = std::f64::consts::PI;
        let xi = GivensAngles::from_vec(3, 1, vec![3.0 * pi, -7.5]).unwrap();
        let w = xi.wrapped();
        for (&orig, &x) in xi.as_slice().iter().zip(w.as_slice()) {
            assert!(x > -pi && x <= pi);
            assert!(close(orig.sin(), x.sin(), 1e-12) && close(orig.cos(), x.cos(), 1e-12));
        }
    }

    #[test]
    fn complement_of_e1_in_plane() {
        let v = KFrame::new(DMatrix::<f64>::identity(2, 1)).unwrap();
        let c = orthogonal_complement(&v);
        assert_eq!(c.shape(), (2, 1));
        assert!(close(c[(0, 0)], 0.0, 1e-15) && close(c[(1, 0)].abs(), 1.0, 1e-15));
    }

    #[test]
    fn complement_of_leading_columns_spans_the_rest() {
        let v = KFrame::new(DMatrix::<f64>::identity(4, 2)).unwrap();
        let c = orthogonal_complement(&v);
        assert!(c.rows(0, 2).iter().all(|x| x.abs() < 1e-15));
        let gram = c.transpose() * &c;
        assert!(max_abs_diff(&gram, &DMatrix::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn invert_identity_frame() {
        let v = KFrame::<f64>::identity(5, 3).unwrap();
        let xi = invert_kframe(&v).unwrap();
        assert!(xi.as_slice().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn invert_plane_rotation_column() {
        let v = KFrame::new(DMatrix::from_column_slice(2, 1, &[0.3f64.cos(), 0.3f64.sin()])).unwrap();
        let xi = invert_kframe(&v).unwrap();
        assert!(close(xi.as_slice()[0], 0.3, 1e-10));
    }

    #[test]
    fn square_reflection_is_not_representable() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(2, 2)] = -1.0;
        let v = KFrame::new(m).unwrap();
        assert!(matches!(invert_kframe(&v), Err(Error::Inversion(_))));
    }

    #[test]
    fn non_orthonormal_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0f64, 1.0]);
        assert!(KFrame::new(m).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let xi = GivensAngles::from_vec(4, 2, vec![0.3f32, -1.1, 2.0, 0.4, 0.9]).unwrap();
        let v = build_kframe(&xi);
        assert!(v.orthonormality_error() < 1e-5);
        let back = invert_kframe(&v).unwrap();
        assert!(max_abs_diff(build_kframe(&back).matrix(), v.matrix()) < 1e-4);
    }
}
