use consensus_ipm::config::SolverConfig;
use consensus_ipm::experiment::{random_huber, random_logistic, random_quadratic};
use consensus_ipm::model::{distance_bound, suboptimality_bound, validate_subproblem, BoundInputs};
use consensus_ipm::msgpass::{reduce, run_dpda, ReduceMessage, TransportKind};
use consensus_ipm::oracle::{unrelaxed_optimum, unrelaxed_value};
use consensus_ipm::reformulations::{
    huber_epigraph_subproblem, huber_value, logistic_subproblem, HuberData, LogisticData,
};
use consensus_ipm::verify::tight_config;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn small_config() -> ProptestConfig {
    ProptestConfig {
        cases: 12,
        ..ProptestConfig::default()
    }
}

proptest! {
    #[test]
    fn suboptimality_bound_is_linear(l in prop::collection::vec(0.1f64..10.0, 1..6), eps in 0.0f64..1.0, k in 0.1f64..5.0) {
        let base = suboptimality_bound(&BoundInputs::new(l.clone(), eps)).unwrap();
        let scaled_eps = suboptimality_bound(&BoundInputs::new(l.clone(), eps * k)).unwrap();
        prop_assert!((scaled_eps - k * base).abs() <= 1e-12 * (1.0 + scaled_eps));
        let mut bumped = l.clone();
        bumped[0] += k;
        let with_bump = suboptimality_bound(&BoundInputs::new(bumped, eps)).unwrap();
        prop_assert!((with_bump - base - eps * k / l.len() as f64).abs() <= 1e-12 * (1.0 + with_bump));
        prop_assert_eq!(base == 0.0, eps == 0.0);
    }

    #[test]
    fn distance_bound_scales_inversely_with_modulus(l in prop::collection::vec(0.1f64..10.0, 1..6), eps in 0.01f64..1.0, m in 0.1f64..5.0) {
        let a = distance_bound(&BoundInputs::new(l.clone(), eps).with_modulus(m)).unwrap();
        let b = distance_bound(&BoundInputs::new(l, eps).with_modulus(2.0 * m)).unwrap();
        prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a);
    }

    #[test]
    fn huber_is_convex_with_two_lipschitz_slope(a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..1.0, m in 0.1f64..3.0) {
        let mid = huber_value(t * a + (1.0 - t) * b, m).unwrap();
        prop_assert!(mid <= t * huber_value(a, m).unwrap() + (1.0 - t) * huber_value(b, m).unwrap() + 1e-12);
        let slope = |u: f64| 2.0 * u.clamp(-m, m);
        prop_assert!((slope(a) - slope(b)).abs() <= 2.0 * (a - b).abs() + 1e-12);
    }

    #[test]
    fn huber_epigraph_attains_the_loss(seed in 0u64..1000, m in 0.2f64..3.0, x in prop::collection::vec(-3.0f64..3.0, 2)) {
        let xv = DVector::from_vec(x);
        let a = DMatrix::from_fn(6, 2, |i, j| ((seed as usize + 3 * i + j) % 7) as f64 / 7.0);
        let y = DVector::from_fn(6, |i, _| ((seed as usize + i) % 5) as f64 - 2.0);
        let hd = HuberData::new(a.clone(), y.clone(), m).unwrap();
        let loss = hd.loss(&xv);
        let sp = huber_epigraph_subproblem(hd);
        let r = &a * &xv - &y;
        let u = r.map(|v| v.abs().min(m));
        let v = r.map(|v| (v.abs() - m).max(0.0));
        let w = DVector::from_iterator(2 + 12, xv.iter().copied().chain(u.iter().copied()).chain(v.iter().copied()));
        prop_assert!((sp.model().objective(&w) - loss).abs() <= 1e-8 * (1.0 + loss));
        prop_assert!(sp.model().constraints(&w).iter().all(|g| *g <= 1e-12));
        // any other feasible (u, v) costs at least as much
        let u2 = u.map(|v| 0.5 * v);
        let v2 = DVector::from_fn(6, |j, _| r[j].abs() - u2[j]);
        let w2 = DVector::from_iterator(14, xv.iter().copied().chain(u2.iter().copied()).chain(v2.iter().copied()));
        prop_assert!(sp.model().objective(&w2) >= loss - 1e-9);
    }

    #[test]
    fn logistic_hessian_has_the_ridge_modulus(seed in 0u64..1000, rho in 0.1f64..5.0, agents in 1usize..12, x in prop::collection::vec(-4.0f64..4.0, 3)) {
        let phi = DMatrix::from_fn(5, 3, |i, j| (((seed as usize) * 31 + 7 * i + 3 * j) % 11) as f64 / 5.0 - 1.0);
        let y = DVector::from_fn(5, |i, _| ((seed as usize + i) % 2) as f64);
        let data = LogisticData::new(phi, y, rho, agents).unwrap();
        let h = data.loss_hessian(&DVector::from_vec(x));
        let min = SymmetricEigen::new(h).eigenvalues.min();
        prop_assert!(min >= 2.0 * rho / agents as f64 - 1e-10);
    }

    #[test]
    fn reductions_ignore_grouping(values in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let lists: Vec<Vec<ReduceMessage>> = values.iter().map(|v| vec![
            ReduceMessage::SumScalar(*v), ReduceMessage::MinScalar(*v), ReduceMessage::MaxScalar(*v), ReduceMessage::FlagAnd(*v > -500.0),
        ]).collect();
        let out = reduce(&lists).unwrap();
        let sum = values.iter().fold(0.0, |a, v| a + v);
        prop_assert_eq!(out[0].scalar().unwrap(), sum);
        prop_assert_eq!(out[1].scalar().unwrap(), values.iter().copied().fold(f64::INFINITY, f64::min));
        prop_assert_eq!(out[2].scalar().unwrap(), values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        prop_assert_eq!(out[3].flag().unwrap(), values.iter().all(|v| *v > -500.0));
    }
}

proptest! {
    #![proptest_config(small_config())]

    #[test]
    fn generated_subproblems_pass_derivative_validation(seed in 0u64..10_000) {
        for prob in [random_huber(2, 3, 4, 0.1, seed).unwrap(), random_logistic(2, 3, 6, 0.1, seed).unwrap(), random_quadratic(2, 3, 0.1, seed).unwrap()] {
            for sp in prob.subproblems() {
                let x = DVector::from_fn(3, |k, _| ((seed as usize + k) % 5) as f64 * 0.3 - 0.6);
                let t = sp.model().feasible_extension(&x).unwrap();
                let w = DVector::from_iterator(sp.n(), x.iter().chain(t.iter()).copied());
                let report = validate_subproblem(sp, &[w]).unwrap();
                prop_assert!(report.passed(), "{} {:?}", sp.family(), report);
            }
        }
    }

    #[test]
    fn relaxed_value_is_below_unrelaxed_and_monotone(seed in 0u64..10_000) {
        let prob = random_quadratic(3, 2, 1e-2, seed).unwrap();
        let x_star = unrelaxed_optimum(&prob).unwrap();
        let exact = unrelaxed_value(&prob, &x_star).unwrap();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-1] {
            let p = prob.with_epsilon(eps).unwrap();
            let (sol, _) = run_dpda(&p, &tight_config(), TransportKind::Sequential).unwrap();
            let value: f64 = p.subproblems().iter().zip(&sol.agents).map(|(sp, s)| sp.model().objective(&s.primal())).sum();
            prop_assert!(value <= exact + 1e-9, "{value} > {exact}");
            prop_assert!(value <= last + 1e-10);
            last = value;
        }
    }

    #[test]
    fn logistic_solve_is_deterministic(seed in 0u64..10_000) {
        let prob = random_logistic(3, 2, 6, 1e-3, seed).unwrap();
        let cfg = SolverConfig::default();
        let (a, ta) = run_dpda(&prob, &cfg, TransportKind::Sequential).unwrap();
        let (b, tb) = run_dpda(&prob, &cfg, TransportKind::Queue).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert!(ta.same_numbers(&tb));
    }
}

#[test]
fn logistic_subproblem_rejects_bad_labels() {
    let phi = DMatrix::zeros(2, 2);
    assert!(
        LogisticData::new(phi, DVector::from_vec(vec![0.0, 2.0]), 1.0, 1)
            .map(logistic_subproblem)
            .is_err()
    );
}
