//! Local subproblems, the relaxed consensus problem and the suboptimality
//! bounds that relate the relaxed solution to the exact consensus optimum.
//!
//! Each agent `i` owns a smooth reformulated subproblem over `w = [x_i; t_i]`:
//!
//! ```txt
//!     minimize   h_i(x_i, t_i)
//!     subject to G_i(x_i, t_i) <= 0,  A_i [x_i; t_i] = b_i,  ||x - x_i||^2 <= eps^2
//! ```
//!
//! The ball constraint is implicit here; it is added by the interior-point
//! layer for every agent.

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, max_abs, symmetry_defect};

/// Derivative evaluators for one agent's smooth cost and inequality map.
///
/// Implementations must be free of interior mutability so that different
/// agents can evaluate concurrently.
pub trait SmoothModel: Send + Sync + fmt::Debug {
    /// Short family name as used in problem-spec files.
    fn family(&self) -> &'static str;

    /// Global dimension `p`.
    fn global_dim(&self) -> usize;

    /// Extra local variables `d_i`.
    fn local_dim(&self) -> usize;

    /// Number of inequalities `m_i` (the ball constraint is not counted).
    fn inequality_count(&self) -> usize;

    fn objective(&self, w: &DVector<f64>) -> f64;
    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    fn objective_hessian(&self, w: &DVector<f64>) -> DMatrix<f64>;

    fn constraints(&self, w: &DVector<f64>) -> DVector<f64> {
        let _ = w;
        DVector::zeros(0)
    }

    /// `m_i x (p + d_i)` Jacobian; row `j` is the gradient of `G_j`.
    fn constraint_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, w.len())
    }

    fn constraint_hessian(&self, j: usize, w: &DVector<f64>) -> DMatrix<f64> {
        let _ = j;
        DMatrix::zeros(w.len(), w.len())
    }

    /// `sum_j z_j * Hess G_j(w)`.
    fn weighted_constraint_hessian(&self, w: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(w.len(), w.len());
        for (j, zj) in z.iter().enumerate() {
            acc += self.constraint_hessian(j, w) * *zj;
        }
        acc
    }

    /// Local variables `t` such that `G([x; t]) < 0` strictly, if the family
    /// knows how to build them.
    fn feasible_extension(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let t = DVector::zeros(self.local_dim());
        if self.inequality_count() == 0 {
            return Some(t);
        }
        let w = crate::linalg::stack(&[x, &t]);
        self.constraints(&w).iter().all(|g| *g < 0.0).then_some(t)
    }

    fn as_any(&self) -> &dyn Any;
}

/// One agent's subproblem: smooth evaluators plus the equality pair `(A_i, b_i)`.
#[derive(Clone, Debug)]
pub struct LocalSubproblem {
    model: Arc<dyn SmoothModel>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

impl LocalSubproblem {
    pub fn new(
        model: Arc<dyn SmoothModel>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = model.global_dim() + model.local_dim();
        if model.global_dim() == 0 {
            return Err(Error::invalid("global dimension must be positive"));
        }
        if eq_matrix.nrows() != eq_rhs.len() {
            return Err(Error::dim(format!(
                "equality matrix has {} rows but rhs has length {}",
                eq_matrix.nrows(),
                eq_rhs.len()
            )));
        }
        if eq_matrix.nrows() > 0 && eq_matrix.ncols() != n {
            return Err(Error::dim(format!(
                "equality matrix has {} columns, expected p + d = {n}",
                eq_matrix.ncols()
            )));
        }
        let eq_matrix = if eq_matrix.nrows() == 0 {
            DMatrix::zeros(0, n)
        } else {
            eq_matrix
        };
        Ok(Self {
            model,
            eq_matrix,
            eq_rhs,
        })
    }

    pub fn unconstrained(model: Arc<dyn SmoothModel>) -> Self {
        let n = model.global_dim() + model.local_dim();
        Self {
            model,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn model(&self) -> &dyn SmoothModel {
        self.model.as_ref()
    }

    /// Same model with the equality pair replaced.
    pub fn with_equalities(&self, eq_matrix: DMatrix<f64>, eq_rhs: DVector<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.model), eq_matrix, eq_rhs)
    }

    pub fn family(&self) -> &'static str {
        self.model.family()
    }

    pub fn p(&self) -> usize {
        self.model.global_dim()
    }

    pub fn d(&self) -> usize {
        self.model.local_dim()
    }

    pub fn m(&self) -> usize {
        self.model.inequality_count()
    }

    pub fn u(&self) -> usize {
        self.eq_matrix.nrows()
    }

    /// Local primal dimension `p + d_i`.
    pub fn n(&self) -> usize {
        self.p() + self.d()
    }

    pub fn eq_matrix(&self) -> &DMatrix<f64> {
        &self.eq_matrix
    }

    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }
}

/// The relaxed consensus problem: `N` subproblems whose copies `x_i` must lie
/// within `epsilon` of the shared `x`.
#[derive(Clone, Debug)]
pub struct RelaxedProblem {
    subproblems: Vec<LocalSubproblem>,
    epsilon: f64,
    p: usize,
    total_ineq: usize,
}

impl RelaxedProblem {
    pub fn subproblems(&self) -> &[LocalSubproblem] {
        &self.subproblems
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn agent_count(&self) -> usize {
        self.subproblems.len()
    }

    /// `N + sum_i m_i`: every agent's inequalities plus one ball constraint each.
    pub fn total_ineq_count(&self) -> usize {
        self.total_ineq
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        assemble_relaxed_problem(self.subproblems.clone(), epsilon)
    }
}

pub fn assemble_relaxed_problem(
    subproblems: Vec<LocalSubproblem>,
    epsilon: f64,
) -> Result<RelaxedProblem> {
    if subproblems.is_empty() {
        return Err(Error::invalid(
            "relaxed problem needs at least one subproblem",
        ));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!(
            "relaxation radius must be positive, got {epsilon}"
        )));
    }
    let p = subproblems[0].p();
    if let Some((i, sp)) = subproblems.iter().enumerate().find(|(_, sp)| sp.p() != p) {
        return Err(Error::dim(format!(
            "subproblem {i} has p = {}, expected {p}",
            sp.p()
        )));
    }
    let total_ineq = subproblems.len() + subproblems.iter().map(|sp| sp.m()).sum::<usize>();
    Ok(RelaxedProblem {
        subproblems,
        epsilon,
        p,
        total_ineq,
    })
}

/// Inputs to the suboptimality bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputs {
    /// Per-agent Lipschitz constants `L_i`.
    pub lipschitz: Vec<f64>,
    /// Strong-convexity modulus of the averaged cost, when known.
    pub convexity_modulus: Option<f64>,
    pub epsilon: f64,
}

impl BoundInputs {
    pub fn new(lipschitz: Vec<f64>, epsilon: f64) -> Self {
        Self {
            lipschitz,
            convexity_modulus: None,
            epsilon,
        }
    }

    pub fn with_modulus(mut self, modulus: f64) -> Self {
        self.convexity_modulus = Some(modulus);
        self
    }

    pub fn agent_count(&self) -> usize {
        self.lipschitz.len()
    }

    fn total_lipschitz(&self) -> Result<f64> {
        if self.lipschitz.is_empty() {
            return Err(Error::invalid(
                "at least one Lipschitz constant is required",
            ));
        }
        if let Some(l) = self
            .lipschitz
            .iter()
            .find(|l| !(**l > 0.0) || !l.is_finite())
        {
            return Err(Error::invalid(format!(
                "Lipschitz constants must be positive, got {l}"
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(self.lipschitz.iter().sum())
    }
}

/// Bound on the averaged-objective gap of the relaxed solution: `eps * L / N`.
pub fn suboptimality_bound(inputs: &BoundInputs) -> Result<f64> {
    let l = inputs.total_lipschitz()?;
    Ok(inputs.epsilon * l / inputs.agent_count() as f64)
}

/// Bound on `||x_rel - x*||^2`: `2 eps L / (N m)` for an `m`-strongly convex
/// averaged cost.
pub fn distance_bound(inputs: &BoundInputs) -> Result<f64> {
    let l = inputs.total_lipschitz()?;
    let modulus = match inputs.convexity_modulus {
        Some(m) if m > 0.0 && m.is_finite() => m,
        Some(m) => {
            return Err(Error::invalid(format!(
                "convexity modulus must be positive, got {m}"
            )))
        }
        None => return Err(Error::invalid("distance bound needs a convexity modulus")),
    };
    Ok(2.0 * inputs.epsilon * l / (inputs.agent_count() as f64 * modulus))
}

/// Relaxation radius guaranteeing an averaged-objective gap of at most `eps_tol`.
pub fn epsilon_for_tolerance(total_lipschitz: f64, agents: usize, eps_tol: f64) -> Result<f64> {
    if !(total_lipschitz > 0.0) || agents == 0 || !(eps_tol > 0.0) {
        return Err(Error::invalid(format!(
            "need L > 0, N >= 1, tolerance > 0 (got L = {total_lipschitz}, N = {agents}, tol = {eps_tol})"
        )));
    }
    Ok(agents as f64 * eps_tol / total_lipschitz)
}

/// Upper estimate of `max ||grad f||` over the box `[lo, hi]`.
///
/// All box vertices are evaluated when `p <= 12` (exact for gradient norms
/// that are convex in `x`, such as affine gradients), followed by `samples`
/// uniformly drawn interior points. Otherwise this is an estimate, not a
/// certificate.
pub fn box_gradient_bound<F>(
    grad: F,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let p = lo.len();
    let mut best = 0.0_f64;
    if p <= 12 {
        for mask in 0..(1usize << p) {
            let corner =
                DVector::from_fn(p, |k, _| if mask & (1 << k) != 0 { hi[k] } else { lo[k] });
            best = best.max(grad(&corner).norm());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let point = DVector::from_fn(p, |k, _| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>());
        best = best.max(grad(&point).norm());
    }
    best
}

// ---------------------------------------------------------------------------
// derivative validation

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const HESSIAN_TOLERANCE: f64 = 1e-4;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub points: usize,
    /// Worst relative gradient mismatch over the objective and every inequality.
    pub gradient_mismatch: f64,
    /// Worst relative Hessian mismatch.
    pub hessian_mismatch: f64,
    /// Worst `|H - H^T|` entry.
    pub symmetry_defect: f64,
    pub dimension_errors: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.dimension_errors.is_empty()
            && self.gradient_mismatch <= GRADIENT_TOLERANCE
            && self.hessian_mismatch <= HESSIAN_TOLERANCE
            && self.symmetry_defect <= SYMMETRY_TOLERANCE
    }
}

fn fd_step(coord: f64) -> f64 {
    f64::EPSILON.cbrt() * coord.abs().max(1.0)
}

fn central_gradient(f: &dyn Fn(&DVector<f64>) -> f64, w: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(w.len());
    let mut probe = w.clone();
    for k in 0..w.len() {
        let h = fd_step(w[k]);
        probe[k] = w[k] + h;
        let up = f(&probe);
        probe[k] = w[k] - h;
        let down = f(&probe);
        probe[k] = w[k];
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

fn central_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let rows = f(w).len();
    let mut jac = DMatrix::zeros(rows, w.len());
    let mut probe = w.clone();
    for k in 0..w.len() {
        let h = fd_step(w[k]);
        probe[k] = w[k] + h;
        let up = f(&probe);
        probe[k] = w[k] - h;
        let down = f(&probe);
        probe[k] = w[k];
        jac.set_column(k, &((up - down) / (2.0 * h)));
    }
    jac
}

fn rel_vec(analytic: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    inf_norm(&(analytic - reference)) / inf_norm(reference).max(1.0)
}

fn rel_mat(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    max_abs(&(analytic - reference)) / max_abs(reference).max(1.0)
}

/// Compares analytic derivatives against central finite differences at each
/// trial point. Every trial point must be strictly feasible for `G`.
pub fn validate_subproblem(
    sp: &LocalSubproblem,
    trial_points: &[DVector<f64>],
) -> Result<ValidationReport> {
    let model = sp.model();
    let n = sp.n();
    let m = sp.m();
    let mut report = ValidationReport {
        points: trial_points.len(),
        ..Default::default()
    };

    for w in trial_points {
        if w.len() != n {
            return Err(Error::dim(format!(
                "trial point has length {}, expected {n}",
                w.len()
            )));
        }
        let g = model.constraints(w);
        if g.len() != m {
            report
                .dimension_errors
                .push(format!("G returned {} components, declared {m}", g.len()));
            continue;
        }
        if let Some((component, value)) = g.iter().copied().enumerate().find(|(_, v)| !(*v < 0.0)) {
            return Err(Error::RejectedPoint { component, value });
        }

        let grad = model.objective_gradient(w);
        let hess = model.objective_hessian(w);
        let jac = model.constraint_jacobian(w);
        if grad.len() != n {
            report
                .dimension_errors
                .push(format!("gradient has length {}, expected {n}", grad.len()));
        }
        if hess.shape() != (n, n) {
            report.dimension_errors.push(format!(
                "Hessian has shape {:?}, expected ({n}, {n})",
                hess.shape()
            ));
        }
        if jac.shape() != (m, n) {
            report.dimension_errors.push(format!(
                "Jacobian has shape {:?}, expected ({m}, {n})",
                jac.shape()
            ));
        }
        if !report.dimension_errors.is_empty() {
            continue;
        }

        let fd_grad = central_gradient(&|y| model.objective(y), w);
        report.gradient_mismatch = report.gradient_mismatch.max(rel_vec(&grad, &fd_grad));
        let fd_hess = central_jacobian(&|y| model.objective_gradient(y), w);
        report.hessian_mismatch = report.hessian_mismatch.max(rel_mat(&hess, &fd_hess));
        report.symmetry_defect = report.symmetry_defect.max(symmetry_defect(&hess));

        if m > 0 {
            let fd_jac = central_jacobian(&|y| model.constraints(y), w);
            report.gradient_mismatch = report.gradient_mismatch.max(rel_mat(&jac, &fd_jac));
            for j in 0..m {
                let hj = model.constraint_hessian(j, w);
                if hj.shape() != (n, n) {
                    report
                        .dimension_errors
                        .push(format!("Hessian of G_{j} has shape {:?}", hj.shape()));
                    continue;
                }
                let fd_hj =
                    central_jacobian(&|y| model.constraint_jacobian(y).row(j).transpose(), w);
                report.hessian_mismatch = report.hessian_mismatch.max(rel_mat(&hj, &fd_hj));
                report.symmetry_defect = report.symmetry_defect.max(symmetry_defect(&hj));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reformulations::quadratic_subproblem;

    #[derive(Debug)]
    struct HalfNorm {
        p: usize,
        gradient_scale: f64,
    }

    impl SmoothModel for HalfNorm {
        fn family(&self) -> &'static str {
            "test"
        }
        fn global_dim(&self) -> usize {
            self.p
        }
        fn local_dim(&self) -> usize {
            0
        }
        fn inequality_count(&self) -> usize {
            0
        }
        fn objective(&self, w: &DVector<f64>) -> f64 {
            0.5 * w.norm_squared()
        }
        fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
            w * self.gradient_scale
        }
        fn objective_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(w.len(), w.len())
        }
        fn as_any(&self) -> &dyn Any {
            self
        }
    }

    fn quad(p: usize, value: f64) -> LocalSubproblem {
        quadratic_subproblem(DMatrix::identity(p, p) * value, DVector::zeros(p)).unwrap()
    }

    #[test]
    fn suboptimality_examples() {
        assert_eq!(
            suboptimality_bound(&BoundInputs::new(vec![1.0; 3], 0.0)).unwrap(),
            0.0
        );
        assert_eq!(
            suboptimality_bound(&BoundInputs::new(vec![2.0], 0.5)).unwrap(),
            1.0
        );
        let b = suboptimality_bound(&BoundInputs::new(vec![1.0, 3.0], 0.1)).unwrap();
        assert!((b - 0.2).abs() < 1e-15);
        assert!(suboptimality_bound(&BoundInputs::new(vec![1.0, 0.0], 0.1)).is_err());
        assert!(suboptimality_bound(&BoundInputs::new(vec![-1.0], 0.1)).is_err());
    }

    #[test]
    fn distance_examples() {
        let zero = BoundInputs::new(vec![3.0, 4.0], 0.0).with_modulus(1.0);
        assert_eq!(distance_bound(&zero).unwrap(), 0.0);
        let one = BoundInputs::new(vec![1.0], 1.0).with_modulus(2.0);
        assert_eq!(distance_bound(&one).unwrap(), 1.0);
        let two = BoundInputs::new(vec![2.0, 2.0], 0.5).with_modulus(1.0);
        assert_eq!(distance_bound(&two).unwrap(), 2.0);
        assert!(distance_bound(&BoundInputs::new(vec![1.0], 1.0)).is_err());
        assert!(distance_bound(&BoundInputs::new(vec![1.0], 1.0).with_modulus(0.0)).is_err());
    }

    #[test]
    fn epsilon_for_tolerance_examples() {
        assert_eq!(epsilon_for_tolerance(1.0, 1, 1e-3).unwrap(), 1e-3);
        assert_eq!(epsilon_for_tolerance(10.0, 10, 1e-3).unwrap(), 1e-3);
        assert!((epsilon_for_tolerance(4.0, 2, 0.01).unwrap() - 0.005).abs() < 1e-18);
        assert!(epsilon_for_tolerance(0.0, 2, 0.01).is_err());
        assert!(epsilon_for_tolerance(1.0, 0, 0.01).is_err());
        assert!(epsilon_for_tolerance(1.0, 2, -0.01).is_err());
    }

    #[test]
    fn assemble_counts_ball_constraints() {
        let one = assemble_relaxed_problem(vec![quad(3, 1.0)], 0.1).unwrap();
        assert_eq!(one.total_ineq_count(), 1);
        assert_eq!(one.p(), 3);
    }

    #[test]
    fn assemble_rejects_bad_inputs() {
        assert!(matches!(
            assemble_relaxed_problem(vec![quad(2, 1.0), quad(3, 1.0)], 0.1),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            assemble_relaxed_problem(vec![quad(2, 1.0)], 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            assemble_relaxed_problem(vec![], 0.1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn validation_passes_for_half_norm() {
        let sp = LocalSubproblem::unconstrained(Arc::new(HalfNorm {
            p: 4,
            gradient_scale: 1.0,
        }));
        let points: Vec<_> = (0..3)
            .map(|k| DVector::from_fn(4, |i, _| (i + k) as f64 - 1.5))
            .collect();
        let report = validate_subproblem(&sp, &points).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.gradient_mismatch < 1e-8);
    }

    #[test]
    fn validation_catches_scaled_gradient() {
        let sp = LocalSubproblem::unconstrained(Arc::new(HalfNorm {
            p: 3,
            gradient_scale: 2.0,
        }));
        let report = validate_subproblem(&sp, &[DVector::from_vec(vec![3.0, -2.0, 1.0])]).unwrap();
        assert!(!report.passed());
        assert!(
            (report.gradient_mismatch - 1.0).abs() < 1e-6,
            "{}",
            report.gradient_mismatch
        );
    }

    #[test]
    fn box_bound_is_exact_for_affine_gradient() {
        // ||x|| over [-1, 2]^2 peaks at the (2, 2) corner
        let lo = DVector::from_vec(vec![-1.0, -1.0]);
        let hi = DVector::from_vec(vec![2.0, 2.0]);
        let b = box_gradient_bound(|x| x.clone(), &lo, &hi, 50, 1);
        assert!((b - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bounds_are_linear_in_epsilon() {
        let base = BoundInputs::new(vec![1.5, 2.5, 0.7], 1e-3);
        let mut scaled = base.clone();
        scaled.epsilon = 1e-2;
        let ratio = suboptimality_bound(&scaled).unwrap() / suboptimality_bound(&base).unwrap();
        assert!((ratio - 10.0).abs() < 1e-12);
    }
}
