//! Problem families: Huber robust least squares (smoothed by an epigraph
//! reformulation), ridge-regularized logistic regression, and quadratics.

use std::any::Any;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetry_defect;
use crate::model::{LocalSubproblem, SmoothModel};

pub const HUBER_FAMILY: &str = "huber-rls";
pub const LOGISTIC_FAMILY: &str = "logreg";
pub const QUADRATIC_FAMILY: &str = "quadratic";

/// Huber penalty: `u^2` inside `[-M, M]`, `M (2|u| - M)` outside.
pub fn huber_value(u: f64, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "Huber threshold must be positive, got {threshold}"
        )));
    }
    Ok(huber(u, threshold))
}

fn huber(u: f64, m: f64) -> f64 {
    if u.abs() <= m {
        u * u
    } else {
        m * (2.0 * u.abs() - m)
    }
}

fn huber_slope(u: f64, m: f64) -> f64 {
    2.0 * u.clamp(-m, m)
}

/// `log(1 + e^z)` without overflow or premature underflow.
pub fn log1pexp(z: f64) -> f64 {
    if z > 35.0 {
        z + (-z).exp()
    } else if z < -35.0 {
        z.exp()
    } else if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Huber robust least squares

#[derive(Clone, Debug, PartialEq)]
pub struct HuberData {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub threshold: f64,
}

impl HuberData {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, threshold: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid(
                "Huber data needs at least one row and one feature",
            ));
        }
        if a.nrows() != y.len() {
            return Err(Error::dim(format!(
                "A has {} rows but Y has length {}",
                a.nrows(),
                y.len()
            )));
        }
        if !(threshold > 0.0) {
            return Err(Error::invalid(format!(
                "Huber threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self { a, y, threshold })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// `sum_j phi_M(A_j x - Y_j)`.
    pub fn loss(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.y)
            .iter()
            .map(|r| huber(*r, self.threshold))
            .sum()
    }

    pub fn loss_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let slopes = (&self.a * x - &self.y).map(|r| huber_slope(r, self.threshold));
        self.a.transpose() * slopes
    }
}

/// Epigraph form of the Huber loss over `w = [x; u; v]`:
///
/// ```txt
///     minimize   ||u||^2 + 2M 1^T v
///     subject to  A x - Y - u - v <= 0     (a)
///                -A x + Y - u - v <= 0     (b)
///                -u <= 0                   (c)
///                 u - M <= 0               (d)
///                -v <= 0                   (e)
/// ```
#[derive(Debug)]
pub struct HuberEpigraph {
    data: HuberData,
}

impl HuberEpigraph {
    pub fn data(&self) -> &HuberData {
        &self.data
    }

    fn rows(&self) -> usize {
        self.data.rows()
    }

    fn p(&self) -> usize {
        self.data.a.ncols()
    }
}

impl SmoothModel for HuberEpigraph {
    fn family(&self) -> &'static str {
        HUBER_FAMILY
    }

    fn global_dim(&self) -> usize {
        self.p()
    }

    fn local_dim(&self) -> usize {
        2 * self.rows()
    }

    fn inequality_count(&self) -> usize {
        5 * self.rows()
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        let (p, n) = (self.p(), self.rows());
        let u = w.rows(p, n);
        let v = w.rows(p + n, n);
        u.norm_squared() + 2.0 * self.data.threshold * v.sum()
    }

    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let (p, n) = (self.p(), self.rows());
        let mut g = DVector::zeros(p + 2 * n);
        g.rows_mut(p, n).copy_from(&(w.rows(p, n) * 2.0));
        g.rows_mut(p + n, n).fill(2.0 * self.data.threshold);
        g
    }

    fn objective_hessian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        let (p, n) = (self.p(), self.rows());
        let mut h = DMatrix::zeros(p + 2 * n, p + 2 * n);
        for j in 0..n {
            h[(p + j, p + j)] = 2.0;
        }
        h
    }

    fn constraints(&self, w: &DVector<f64>) -> DVector<f64> {
        let (p, n) = (self.p(), self.rows());
        let m = self.data.threshold;
        let residual = &self.data.a * w.rows(0, p) - &self.data.y;
        let u = w.rows(p, n);
        let v = w.rows(p + n, n);
        let mut g = DVector::zeros(5 * n);
        for j in 0..n {
            g[j] = residual[j] - u[j] - v[j];
            g[n + j] = -residual[j] - u[j] - v[j];
            g[2 * n + j] = -u[j];
            g[3 * n + j] = u[j] - m;
            g[4 * n + j] = -v[j];
        }
        g
    }

    fn constraint_jacobian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        let (p, n) = (self.p(), self.rows());
        let mut jac = DMatrix::zeros(5 * n, p + 2 * n);
        for j in 0..n {
            for k in 0..p {
                jac[(j, k)] = self.data.a[(j, k)];
                jac[(n + j, k)] = -self.data.a[(j, k)];
            }
            jac[(j, p + j)] = -1.0;
            jac[(j, p + n + j)] = -1.0;
            jac[(n + j, p + j)] = -1.0;
            jac[(n + j, p + n + j)] = -1.0;
            jac[(2 * n + j, p + j)] = -1.0;
            jac[(3 * n + j, p + j)] = 1.0;
            jac[(4 * n + j, p + n + j)] = -1.0;
        }
        jac
    }

    fn weighted_constraint_hessian(&self, w: &DVector<f64>, _z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(w.len(), w.len())
    }

    /// `u = M/2` and `v = |A x - Y| + 1`, so blocks (a), (b) and (e) have
    /// slack at least 1 and blocks (c), (d) have slack `M/2`.
    fn feasible_extension(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.rows();
        let residual = &self.data.a * x - &self.data.y;
        let mut t = DVector::zeros(2 * n);
        for j in 0..n {
            t[j] = 0.5 * self.data.threshold;
            t[n + j] = residual[j].abs() + 1.0;
        }
        Some(t)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub fn huber_epigraph_subproblem(data: HuberData) -> LocalSubproblem {
    LocalSubproblem::unconstrained(Arc::new(HuberEpigraph { data }))
}

// ---------------------------------------------------------------------------
// logistic regression

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticData {
    pub phi: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub rho: f64,
    /// Total agent count; each agent carries `rho / N` of the ridge penalty.
    pub agents: usize,
}

impl LogisticData {
    pub fn new(phi: DMatrix<f64>, labels: DVector<f64>, rho: f64, agents: usize) -> Result<Self> {
        if phi.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "Phi has {} rows but Y has length {}",
                phi.nrows(),
                labels.len()
            )));
        }
        if let Some((j, y)) = labels
            .iter()
            .enumerate()
            .find(|(_, y)| **y != 0.0 && **y != 1.0)
        {
            return Err(Error::invalid(format!("label {j} is {y}, expected 0 or 1")));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid(format!(
                "regularization weight must be positive, got {rho}"
            )));
        }
        if agents == 0 {
            return Err(Error::invalid("agent count must be positive"));
        }
        Ok(Self {
            phi,
            labels,
            rho,
            agents,
        })
    }

    fn ridge(&self) -> f64 {
        self.rho / self.agents as f64
    }

    /// Negative log-likelihood plus `(rho / N) ||x||^2`.
    pub fn loss(&self, x: &DVector<f64>) -> f64 {
        let scores = &self.phi * x;
        let nll: f64 = scores
            .iter()
            .zip(self.labels.iter())
            .map(|(s, y)| log1pexp(*s) - y * s)
            .sum();
        nll + self.ridge() * x.norm_squared()
    }

    pub fn loss_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let scores = &self.phi * x;
        let err = DVector::from_fn(scores.len(), |j, _| sigmoid(scores[j]) - self.labels[j]);
        self.phi.transpose() * err + x * (2.0 * self.ridge())
    }

    pub fn loss_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let scores = &self.phi * x;
        let p = self.phi.ncols();
        let mut weighted = self.phi.clone();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            let s = sigmoid(scores[j]);
            row *= s * (1.0 - s);
        }
        let mut h = self.phi.transpose() * weighted;
        for k in 0..p {
            h[(k, k)] += 2.0 * self.ridge();
        }
        h
    }
}

#[derive(Debug)]
pub struct LogisticModel {
    data: LogisticData,
}

impl LogisticModel {
    pub fn data(&self) -> &LogisticData {
        &self.data
    }
}

impl SmoothModel for LogisticModel {
    fn family(&self) -> &'static str {
        LOGISTIC_FAMILY
    }
    fn global_dim(&self) -> usize {
        self.data.phi.ncols()
    }
    fn local_dim(&self) -> usize {
        0
    }
    fn inequality_count(&self) -> usize {
        0
    }
    fn objective(&self, w: &DVector<f64>) -> f64 {
        self.data.loss(w)
    }
    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.data.loss_gradient(w)
    }
    fn objective_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        self.data.loss_hessian(w)
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub fn logistic_subproblem(data: LogisticData) -> LocalSubproblem {
    LocalSubproblem::unconstrained(Arc::new(LogisticModel { data }))
}

// ---------------------------------------------------------------------------
// quadratic

/// `0.5 x^T P x + q^T x`.
#[derive(Debug)]
pub struct QuadraticModel {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl QuadraticModel {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }
}

impl SmoothModel for QuadraticModel {
    fn family(&self) -> &'static str {
        QUADRATIC_FAMILY
    }
    fn global_dim(&self) -> usize {
        self.linear.len()
    }
    fn local_dim(&self) -> usize {
        0
    }
    fn inequality_count(&self) -> usize {
        0
    }
    fn objective(&self, w: &DVector<f64>) -> f64 {
        self.value(w)
    }
    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.gradient(w)
    }
    fn objective_hessian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        self.hessian.clone()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub fn quadratic_subproblem(
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
) -> Result<LocalSubproblem> {
    if hessian.shape() != (linear.len(), linear.len()) || linear.is_empty() {
        return Err(Error::dim(format!(
            "P has shape {:?} but q has length {}",
            hessian.shape(),
            linear.len()
        )));
    }
    let scale = crate::linalg::max_abs(&hessian).max(1.0);
    if symmetry_defect(&hessian) > 1e-12 * scale {
        return Err(Error::invalid("quadratic Hessian P must be symmetric"));
    }
    Ok(LocalSubproblem::unconstrained(Arc::new(QuadraticModel {
        hessian,
        linear,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_subproblem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    /// Exact minimum over `0 <= u <= M, v >= 0, u + v >= |r|` of `u^2 + M v`.
    /// For fixed `u` the best `v` is `max(0, |r| - u)`, leaving a convex
    /// one-dimensional problem solved by ternary search.
    fn epigraph_min(r: f64, m: f64) -> f64 {
        let cost = |u: f64| u * u + 2.0 * m * (r.abs() - u).max(0.0);
        let (mut lo, mut hi) = (0.0, m);
        for _ in 0..200 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if cost(a) <= cost(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        cost(0.5 * (lo + hi))
    }

    #[test]
    fn huber_value_examples() {
        assert_eq!(huber_value(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(huber_value(0.5, 1.0).unwrap(), 0.25);
        assert_eq!(huber_value(2.0, 1.0).unwrap(), 3.0);
        assert_eq!(huber_value(-2.0, 1.0).unwrap(), 3.0);
        assert!(huber_value(1.0, 0.0).is_err());
    }

    #[test]
    fn huber_is_continuously_differentiable_at_threshold() {
        let m = 1.3;
        let below = huber(m - 1e-9, m);
        let above = huber(m + 1e-9, m);
        assert!((below - above).abs() < 1e-8);
        assert!((huber_slope(m - 1e-12, m) - huber_slope(m + 1e-12, m)).abs() < 1e-10);
    }

    #[test]
    fn epigraph_minimum_reproduces_huber_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 3, 2);
        let y = DVector::from_fn(3, |_, _| 4.0 * rng.random::<f64>() - 2.0);
        let data = HuberData::new(a.clone(), y.clone(), 1.0).unwrap();
        for trial in 0..5 {
            let x = DVector::from_fn(2, |_, _| {
                3.0 * rng.random::<f64>() - 1.5 + trial as f64 * 0.3
            });
            let residual = &a * &x - &y;
            let oracle: f64 = residual.iter().map(|r| epigraph_min(*r, 1.0)).sum();
            assert!(
                (oracle - data.loss(&x)).abs() < 1e-8,
                "{oracle} vs {}",
                data.loss(&x)
            );
        }
    }

    #[test]
    fn epigraph_zero_residual_point() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let y = &a * &x;
        let sp = huber_epigraph_subproblem(HuberData::new(a, y, 1.0).unwrap());
        let slack = 0.05;
        let w = DVector::from_vec(vec![0.3, -0.2, slack, slack, slack, slack]);
        let h = sp.model().objective(&w);
        assert!((h - (2.0 * slack * slack + 4.0 * slack)).abs() < 1e-15);
        assert!(sp.model().constraints(&w).iter().all(|g| *g < 0.0));
    }

    #[test]
    fn epigraph_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 20, 10);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let sp = huber_epigraph_subproblem(HuberData::new(a, y, 1.0).unwrap());
        assert_eq!((sp.p(), sp.d(), sp.m(), sp.u()), (10, 40, 100, 0));
    }

    #[test]
    fn epigraph_initializer_is_strictly_feasible_with_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &m in &[0.3, 1.0, 4.0] {
            let a = random_matrix(&mut rng, 6, 3);
            let y = DVector::from_fn(6, |_, _| 10.0 * rng.random::<f64>());
            let sp = huber_epigraph_subproblem(HuberData::new(a, y, m).unwrap());
            let x = DVector::from_fn(3, |_, _| rng.random::<f64>());
            let t = sp.model().feasible_extension(&x).unwrap();
            let w = crate::linalg::stack(&[&x, &t]);
            let worst = sp.model().constraints(&w).max();
            assert!(worst <= -(1.0f64.min(m / 2.0)) + 1e-12, "M = {m}: {worst}");
        }
    }

    #[test]
    fn huber_epigraph_derivatives_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 4, 3);
        let y = DVector::from_fn(4, |_, _| rng.random::<f64>());
        let sp = huber_epigraph_subproblem(HuberData::new(a, y, 1.0).unwrap());
        let x = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let w = crate::linalg::stack(&[&x, &sp.model().feasible_extension(&x).unwrap()]);
        assert!(validate_subproblem(&sp, &[w]).unwrap().passed());
    }

    #[test]
    fn log1pexp_examples() {
        assert!((log1pexp(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(log1pexp(1000.0), 1000.0);
        let tiny = log1pexp(-40.0);
        // log(1 + e^-40) = e^-40 - e^-80/2 + ...; e^-80 is below f64 resolution here
        assert!(tiny > 0.0);
        assert!(((tiny - (-40.0f64).exp()) / (-40.0f64).exp()).abs() < 1e-15);
        for z in [-30.0, -1.0, 0.5, 20.0, 34.9, 35.1] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!(
                (log1pexp(z) - naive).abs() <= 1e-14 * naive.max(1.0),
                "z = {z}"
            );
        }
    }

    #[test]
    fn logistic_at_origin_is_log_two() {
        let data = LogisticData::new(
            DMatrix::from_row_slice(1, 3, &[0.4, -2.0, 7.0]),
            DVector::from_vec(vec![1.0]),
            1.0,
            1,
        )
        .unwrap();
        let sp = logistic_subproblem(data);
        assert!((sp.model().objective(&DVector::zeros(3)) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_rejects_non_binary_labels() {
        let res = LogisticData::new(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 0.5]),
            1.0,
            1,
        );
        assert!(matches!(res, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn logistic_hessian_dominates_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let phi = DMatrix::from_fn(8, 4, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let labels = DVector::from_fn(8, |j, _| (j % 2) as f64);
        let data = LogisticData::new(phi, labels, 1.0, 10).unwrap();
        for _ in 0..5 {
            let x = DVector::from_fn(4, |_, _| 6.0 * rng.random::<f64>() - 3.0);
            let eig = data.loss_hessian(&x).symmetric_eigen();
            assert!(eig.eigenvalues.min() >= 2.0 * 1.0 / 10.0 - 1e-12);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = DMatrix::from_fn(10, 5, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let labels = DVector::from_fn(10, |j, _| ((j * 7) % 3 == 0) as u8 as f64);
        let sp = logistic_subproblem(LogisticData::new(phi, labels, 1.0, 3).unwrap());
        let points: Vec<_> = (0..4)
            .map(|_| DVector::from_fn(5, |_, _| 4.0 * rng.random::<f64>() - 2.0))
            .collect();
        let report = validate_subproblem(&sp, &points).unwrap();
        assert!(
            report.gradient_mismatch <= 1e-5 && report.passed(),
            "{report:?}"
        );
    }

    #[test]
    fn quadratic_rejects_asymmetric() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            quadratic_subproblem(p, DVector::zeros(2)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn quadratic_identity_minimizer_is_zero() {
        let sp = quadratic_subproblem(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let g = sp.model().objective_gradient(&DVector::zeros(3));
        assert_eq!(g.norm(), 0.0);
    }
}
