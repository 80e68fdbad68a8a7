//! Quasi-Newton minimization over the flat parameter vector.
//!
//! Dense BFGS is used for small problems and limited-memory BFGS above a size
//! threshold. Steps are chosen by a line search enforcing the strong Wolfe
//! conditions, so every accepted step decreases the objective.

use crate::error::{Error, Result};
use crate::objective::{ModelParams, Objective};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Function with gradient, evaluated at a flat point.
pub trait Problem<T: Scalar> {
    fn dimension(&self) -> usize;

    fn value_gradient(&self, x: &[T]) -> (T, Vec<T>);

    fn value(&self, x: &[T]) -> T {
        self.value_gradient(x).0
    }
}

/// Adapter turning a pair of closures into a [`Problem`].
pub struct FnProblem<F, G> {
    dimension: usize,
    f: F,
    g: G,
}

impl<F, G> FnProblem<F, G> {
    pub fn new(dimension: usize, f: F, g: G) -> Self {
        Self { dimension, f, g }
    }
}

impl<T, F, G> Problem<T> for FnProblem<F, G>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn value_gradient(&self, x: &[T]) -> (T, Vec<T>) {
        ((self.f)(x), (self.g)(x))
    }

    fn value(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

impl<T: Scalar> Problem<T> for Objective<'_, T> {
    fn dimension(&self) -> usize {
        self.parameter_count()
    }

    fn value_gradient(&self, x: &[T]) -> (T, Vec<T>) {
        match self.params_from_flat(x) {
            Ok(p) => self.value_and_gradient(&p),
            Err(_) => (T::lit(f64::NAN), vec![T::lit(f64::NAN); x.len()]),
        }
    }

    fn value(&self, x: &[T]) -> T {
        match self.params_from_flat(x) {
            Ok(p) => Objective::value(self, &p),
            Err(_) => T::lit(f64::NAN),
        }
    }
}

/// Inverse-Hessian representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    /// Dense matrix up to `threshold` parameters, limited memory with
    /// `history` pairs above.
    Auto { threshold: usize, history: usize },
    Full,
    Limited { history: usize },
}

impl Default for Memory {
    fn default() -> Self {
        Memory::Auto {
            threshold: 5000,
            history: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when the largest gradient component is at most this.
    pub gradient_tolerance: f64,
    /// Stop when the relative decrease of an accepted step is at most this.
    pub objective_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
    pub memory: Memory,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: 1e-6,
            objective_tolerance: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            memory: Memory::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.gradient_tolerance >= 0.0) || !(self.objective_tolerance >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("line-search constants must satisfy 0 < c1 < c2 < 1");
        }
        if self.max_line_search == 0 {
            return bad("line search needs at least one trial");
        }
        match self.memory {
            Memory::Auto { history: 0, .. } | Memory::Limited { history: 0 } => {
                bad("limited-memory history must be at least 1")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Objective,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub limited_memory: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    /// Largest absolute gradient component at each iterate.
    pub gradient_norms: Vec<f64>,
}

impl OptimizerReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Objective)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|x| x.is_finite_value())
}

fn step_to<T: Scalar>(x: &[T], p: &[T], alpha: T) -> Vec<T> {
    x.iter().zip(p).map(|(&xi, &pi)| xi + alpha * pi).collect()
}

enum InverseHessian<T: Scalar> {
    Dense(DenseInverse<T>),
    Limited {
        history: usize,
        pairs: VecDeque<(Vec<T>, Vec<T>, T)>,
    },
}

/// Dense BFGS inverse Hessian. `product` caches `(g, H g)` for the latest
/// gradient so each iteration streams the matrix twice: once for `H g_new`
/// and once for the rank-two update.
struct DenseInverse<T: Scalar> {
    h: DMatrix<T>,
    scaled: bool,
    product: Option<(Vec<T>, DVector<T>)>,
}

impl<T: Scalar> InverseHessian<T> {
    fn new(n: usize, memory: Memory) -> Self {
        let limited = match memory {
            Memory::Auto { threshold, history } if n > threshold => Some(history),
            Memory::Limited { history } => Some(history),
            _ => None,
        };
        match limited {
            Some(history) => InverseHessian::Limited {
                history,
                pairs: VecDeque::with_capacity(history),
            },
            None => InverseHessian::Dense(DenseInverse {
                h: DMatrix::identity(n, n),
                scaled: false,
                product: None,
            }),
        }
    }

    fn is_limited(&self) -> bool {
        matches!(self, InverseHessian::Limited { .. })
    }

    fn reset(&mut self) {
        match self {
            InverseHessian::Dense(d) => {
                d.h.fill_with_identity();
                d.scaled = false;
                d.product = None;
            }
            InverseHessian::Limited { pairs, .. } => pairs.clear(),
        }
    }

    fn direction(&mut self, g: &[T]) -> Vec<T> {
        match self {
            InverseHessian::Dense(d) => {
                let hg = match &d.product {
                    Some((cached, hg)) if cached.as_slice() == g => hg.clone(),
                    _ => {
                        let hg = d.apply(g);
                        d.product = Some((g.to_vec(), hg.clone()));
                        hg
                    }
                };
                hg.iter().map(|&v| -v).collect()
            }
            InverseHessian::Limited { pairs, .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = *rho * dot(s, &q);
                    for (qi, &yi) in q.iter_mut().zip(y) {
                        *qi -= a * yi;
                    }
                    alphas.push(a);
                }
                if let Some((s, y, _)) = pairs.back() {
                    let gamma = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = *rho * dot(y, &q);
                    for (qi, &si) in q.iter_mut().zip(s) {
                        *qi += (a - b) * si;
                    }
                }
                q.into_iter().map(|v| -v).collect()
            }
        }
    }

    /// Folds in the step `s` and gradient change `y = g_new − g_old`.
    fn update(&mut self, s: Vec<T>, y: Vec<T>, g_new: &[T]) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > T::default_epsilon() * yy.sqrt() * dot(&s, &s).sqrt()) || !sy.is_finite_value() {
            return;
        }
        let rho = T::one() / sy;
        match self {
            InverseHessian::Dense(d) => d.update(s, y, g_new, sy, yy, rho),
            InverseHessian::Limited { history, pairs } => {
                if pairs.len() == *history {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

impl<T: Scalar> DenseInverse<T> {
    fn apply(&self, v: &[T]) -> DVector<T> {
        &self.h * DVector::from_column_slice(v)
    }

    fn update(&mut self, s: Vec<T>, y: Vec<T>, g_new: &[T], sy: T, yy: T, rho: T) {
        let sv = DVector::from_vec(s);
        let yv = DVector::from_vec(y);
        let g = DVector::from_column_slice(g_new);
        // H g_new and H y under the matrix before this update.
        let (hg, hy) = if !self.scaled {
            let gamma = sy / yy;
            self.h.fill_with_identity();
            self.h *= gamma;
            self.scaled = true;
            (&g * gamma, &yv * gamma)
        } else {
            let hg = self.apply(g_new);
            let hy = match &self.product {
                Some((old, hg_old)) if old.len() == g_new.len() => &hg - hg_old,
                _ => self.apply(yv.as_slice()),
            };
            (hg, hy)
        };
        let yhy = yv.dot(&hy);
        let b = rho * rho * yhy + rho;
        // H − ρ(Hy sᵀ + s yᵀH) + b s sᵀ, one column at a time so the matrix
        // is streamed once.
        for (j, mut col) in self.h.column_iter_mut().enumerate() {
            col.axpy(-rho * sv[j], &hy, T::one());
            col.axpy(b * sv[j] - rho * hy[j], &sv, T::one());
        }
        let sg = sv.dot(&g);
        let hyg = hy.dot(&g);
        let mut hg_new = hg;
        hg_new.axpy(-rho * sg, &hy, T::one());
        hg_new.axpy(b * sg - rho * hyg, &sv, T::one());
        self.product = Some((g_new.to_vec(), hg_new));
    }
}

struct Trial<T> {
    alpha: T,
    x: Vec<T>,
    f: T,
    g: Vec<T>,
}

struct LineSearch<'a, T: Scalar, P: Problem<T>> {
    problem: &'a P,
    x: &'a [T],
    p: &'a [T],
    f0: T,
    d0: T,
    c1: T,
    c2: T,
    budget: usize,
    evaluations: usize,
}

impl<T: Scalar, P: Problem<T>> LineSearch<'_, T, P> {
    fn eval(&mut self, alpha: T) -> Trial<T> {
        self.evaluations += 1;
        let x = step_to(self.x, self.p, alpha);
        let (f, g) = self.problem.value_gradient(&x);
        Trial { alpha, x, f, g }
    }

    fn finite(t: &Trial<T>) -> bool {
        t.f.is_finite_value() && all_finite(&t.g)
    }

    fn armijo(&self, t: &Trial<T>) -> bool {
        t.f <= self.f0 + self.c1 * t.alpha * self.d0
    }

    fn curvature(&self, t: &Trial<T>) -> bool {
        dot(&t.g, self.p).abs() <= -self.c2 * self.d0
    }

    /// Strong Wolfe search. Falls back to the best sufficient-decrease point
    /// found when the budget runs out.
    fn run(&mut self, alpha0: T) -> Option<Trial<T>> {
        let two = T::lit(2.0);
        let mut prev: Option<Trial<T>> = None;
        let mut alpha = alpha0;
        while self.evaluations < self.budget {
            let t = self.eval(alpha);
            if !Self::finite(&t) {
                let lo = prev.as_ref().map_or(T::zero(), |p| p.alpha);
                alpha = (lo + alpha) / two;
                continue;
            }
            let prev_f = prev.as_ref().map_or(self.f0, |p| p.f);
            if !self.armijo(&t) || (prev.is_some() && t.f >= prev_f) {
                return self.zoom(prev, t);
            }
            let dt = dot(&t.g, self.p);
            if dt.abs() <= -self.c2 * self.d0 {
                return Some(t);
            }
            if dt >= T::zero() {
                return self.zoom(Some(t), prev.unwrap_or_else(|| self.origin()));
            }
            alpha *= two;
            prev = Some(t);
        }
        prev
    }

    fn origin(&self) -> Trial<T> {
        Trial {
            alpha: T::zero(),
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
        }
    }

    fn slope(&self, t: &Trial<T>) -> T {
        if t.alpha == T::zero() {
            self.d0
        } else {
            dot(&t.g, self.p)
        }
    }

    /// `lo` satisfies sufficient decrease (or is the origin) and has the
    /// lowest value seen; the minimizer lies between `lo` and `hi`.
    fn zoom(&mut self, lo: Option<Trial<T>>, mut hi: Trial<T>) -> Option<Trial<T>> {
        let mut lo = lo.unwrap_or_else(|| self.origin());
        let tenth = T::lit(0.1);
        while self.evaluations < self.budget {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = (b - a).abs();
            if width <= T::default_epsilon() * a.abs().max(b.abs()) {
                break;
            }
            let mut alpha = cubic_min(a, lo.f, self.slope(&lo), b, hi.f, self.slope(&hi));
            let (l, u) = if a < b { (a, b) } else { (b, a) };
            if !alpha.is_finite_value() || alpha < l + tenth * width || alpha > u - tenth * width {
                alpha = (a + b) / T::lit(2.0);
            }
            let t = self.eval(alpha);
            if !Self::finite(&t) || !self.armijo(&t) || t.f >= lo.f {
                hi = t;
                continue;
            }
            let dt = dot(&t.g, self.p);
            if self.curvature(&t) {
                return Some(t);
            }
            if dt * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = t;
        }
        if lo.alpha > T::zero() {
            Some(lo)
        } else {
            None
        }
    }
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min<T: Scalar>(a: T, fa: T, da: T, b: T, fb: T, db: T) -> T {
    let three = T::lit(3.0);
    let d1 = da + db - three * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < T::zero() {
        return T::lit(f64::NAN);
    }
    let sign = if b >= a { T::one() } else { -T::one() };
    let d2 = sign * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + T::lit(2.0) * d2)
}

/// Minimizes `problem` from `x0`.
///
/// Line-search failure is not an error: the best iterate is returned with
/// [`Termination::LineSearchFailed`]. Non-finite values at an iterate abort.
pub fn minimize<T: Scalar, P: Problem<T>>(
    problem: &P,
    x0: &[T],
    config: &OptimizerConfig,
) -> Result<(Vec<T>, OptimizerReport)> {
    config.validate()?;
    let n = problem.dimension();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "start vector has length {}, problem has {n} parameters",
            x0.len()
        )));
    }
    if !all_finite(x0) {
        return Err(Error::NonFinite {
            what: "starting point",
            iteration: 0,
        });
    }
    let (mut f, mut g) = problem.value_gradient(x0);
    if !f.is_finite_value() {
        return Err(Error::NonFinite {
            what: "objective",
            iteration: 0,
        });
    }
    if !all_finite(&g) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration: 0,
        });
    }
    let mut x = x0.to_vec();
    let mut hinv = InverseHessian::new(n, config.memory);
    let gtol = T::lit(config.gradient_tolerance);
    let ftol = T::lit(config.objective_tolerance);
    let mut report = OptimizerReport {
        initial_objective: f.as_f64(),
        final_objective: f.as_f64(),
        iterations: 0,
        evaluations: 1,
        termination: Termination::MaxIterations,
        limited_memory: hinv.is_limited(),
        objective_trace: vec![f.as_f64()],
        gradient_norms: vec![inf_norm(&g).as_f64()],
    };
    let mut fresh = true;
    let mut termination = if inf_norm(&g) <= gtol {
        Some(Termination::Gradient)
    } else {
        None
    };
    while termination.is_none() && report.iterations < config.max_iterations {
        let mut p = hinv.direction(&g);
        let mut d0 = dot(&g, &p);
        if !(d0 < T::zero()) {
            hinv.reset();
            fresh = true;
            p = g.iter().map(|&v| -v).collect();
            d0 = dot(&g, &p);
        }
        let alpha0 = if fresh {
            T::one().min(T::one() / dot(&g, &g).sqrt())
        } else {
            T::one()
        };
        let mut ls = LineSearch {
            problem,
            x: &x,
            p: &p,
            f0: f,
            d0,
            c1: T::lit(config.c1),
            c2: T::lit(config.c2),
            budget: config.max_line_search,
            evaluations: 0,
        };
        let found = ls.run(alpha0);
        report.evaluations += ls.evaluations;
        let Some(t) = found else {
            if fresh {
                termination = Some(Termination::LineSearchFailed);
                break;
            }
            log::debug!("line search failed at iteration {}; resetting curvature", report.iterations);
            hinv.reset();
            fresh = true;
            continue;
        };
        report.iterations += 1;
        if !t.f.is_finite_value() || !all_finite(&t.g) {
            return Err(Error::NonFinite {
                what: "objective",
                iteration: report.iterations,
            });
        }
        let s: Vec<T> = t.x.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = t.g.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let decrease = f - t.f;
        let scale = f.abs().max(t.f.abs()).max(T::min_value().unwrap_or(T::zero()));
        x = t.x;
        f = t.f;
        hinv.update(s, y, &t.g);
        g = t.g;
        fresh = false;
        let gn = inf_norm(&g);
        report.objective_trace.push(f.as_f64());
        report.gradient_norms.push(gn.as_f64());
        if gn <= gtol {
            termination = Some(Termination::Gradient);
        } else if decrease <= ftol * scale {
            termination = Some(Termination::Objective);
        }
    }
    report.termination = termination.unwrap_or(Termination::MaxIterations);
    report.final_objective = f.as_f64();
    Ok((x, report))
}

/// Minimizes `objective` starting from `start`.
pub fn fit<T: Scalar>(
    objective: &Objective<'_, T>,
    start: &ModelParams<T>,
    config: &OptimizerConfig,
) -> Result<(ModelParams<T>, OptimizerReport)> {
    if start.k() != objective.k() || start.dims() != objective.dims() {
        return Err(Error::Dimension(
            "starting parameters do not match the objective's views and rank".into(),
        ));
    }
    let (x, report) = minimize(objective, &start.to_flat(), config)?;
    let params = objective.params_from_flat(&x)?;
    log::debug!(
        "fit finished after {} iterations ({:?}), objective {:.6e}",
        report.iterations,
        report.termination,
        report.final_objective
    );
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere() -> FnProblem<impl Fn(&[f64]) -> f64, impl Fn(&[f64]) -> Vec<f64>> {
        FnProblem::new(
            2,
            |x: &[f64]| x.iter().map(|v| v * v).sum(),
            |x: &[f64]| x.iter().map(|v| 2.0 * v).collect(),
        )
    }

    #[test]
    fn quadratic_converges_quickly() {
        let (x, rep) = minimize(&sphere(), &[1.0, 1.0], &OptimizerConfig::default()).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-8), "{x:?}");
        assert!(rep.iterations <= 20);
        assert_eq!(rep.termination, Termination::Gradient);
    }

    #[test]
    fn start_at_minimum_takes_no_steps() {
        let (x, rep) = minimize(&sphere(), &[0.0, 0.0], &OptimizerConfig::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn limited_memory_on_quadratic() {
        let cfg = OptimizerConfig {
            memory: Memory::Limited { history: 3 },
            ..Default::default()
        };
        let (x, rep) = minimize(&sphere(), &[3.0, -2.0], &cfg).unwrap();
        assert!(rep.limited_memory);
        assert!(x.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let err = minimize(&sphere(), &[f64::NAN, 0.0], &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        let bad = FnProblem::new(1, |_: &[f64]| f64::INFINITY, |_: &[f64]| vec![0.0]);
        assert!(minimize(&bad, &[0.0], &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn wrong_length_and_bad_config() {
        assert!(minimize(&sphere(), &[1.0], &OptimizerConfig::default()).is_err());
        let cfg = OptimizerConfig {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(&sphere(), &[1.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn cubic_interpolation_recovers_cubic_minimizer() {
        // f(t) = (t - 1)^2 has its minimum at 1.
        let f = |t: f64| (t - 1.0) * (t - 1.0);
        let d = |t: f64| 2.0 * (t - 1.0);
        let m = cubic_min(0.0, f(0.0), d(0.0), 3.0, f(3.0), d(3.0));
        assert!((m - 1.0).abs() < 1e-12);
    }
}
