use consensus_ipm::config::SolverConfig;
use consensus_ipm::experiment::{random_huber, random_logistic, random_quadratic};
use consensus_ipm::model::{distance_bound, BoundInputs, RelaxedProblem};
use consensus_ipm::msgpass::{
    leaf_agents, run_dpda, run_dpda_with, QueueTransport, SequentialTransport, Status, Transport,
    TransportKind,
};
use consensus_ipm::oracle::{agent_gradient, centralized_pdipm_solve, unrelaxed_optimum};
use consensus_ipm::pdipm::InitStrategy;
use consensus_ipm::verify::{
    quadratic_modulus, raw_data_records, rounds_per_iteration, scalar_round_bound,
};
use nalgebra::DVector;

fn families(seed: u64) -> Vec<(&'static str, RelaxedProblem)> {
    vec![
        ("quadratic", random_quadratic(3, 3, 1e-3, seed).unwrap()),
        ("huber", random_huber(3, 3, 8, 1e-3, seed).unwrap()),
        ("logistic", random_logistic(3, 3, 10, 1e-3, seed).unwrap()),
    ]
}

#[test]
fn distributed_and_centralized_solvers_agree() {
    let cfg = SolverConfig::default();
    for seed in 0..4 {
        for (name, prob) in families(seed) {
            let (a, ta) = run_dpda(&prob, &cfg, TransportKind::Sequential).unwrap();
            let (b, tb) = centralized_pdipm_solve(&prob, &cfg).unwrap();
            assert_eq!(a.status, Status::Converged, "{name} seed {seed}");
            assert_eq!(
                (a.status, a.iterations),
                (b.status, b.iterations),
                "{name} seed {seed}"
            );
            let dx = (&a.x - &b.x).norm() / b.x.norm().max(1.0);
            assert!(dx <= 1e-8, "{name} seed {seed}: {dx:e}");
            for (r, s) in ta.rows.iter().zip(&tb.rows) {
                assert_eq!(r.trials, s.trials, "{name} seed {seed} iteration {}", r.k);
                assert!(
                    (r.residual_after - s.residual_after).abs() <= 1e-8 * s.residual_after.max(1.0)
                );
            }
        }
    }
}

#[test]
fn quadratic_solution_respects_the_distance_bound() {
    let prob = random_quadratic(3, 3, 1e-3, 8).unwrap();
    let (sol, _) = run_dpda(&prob, &SolverConfig::default(), TransportKind::Queue).unwrap();
    assert_eq!(sol.status, Status::Converged);
    let x_star = unrelaxed_optimum(&prob).unwrap();
    // L_i from gradient norms on a box around both points
    let lo = sol.x.inf(&x_star).add_scalar(-2e-3);
    let hi = sol.x.sup(&x_star).add_scalar(2e-3);
    let lips = prob
        .subproblems()
        .iter()
        .map(|sp| {
            consensus_ipm::model::box_gradient_bound(
                |x| agent_gradient(sp, x).unwrap(),
                &lo,
                &hi,
                0,
                0,
            )
        })
        .collect();
    let bound = distance_bound(
        &BoundInputs::new(lips, 1e-3).with_modulus(quadratic_modulus(&prob).unwrap()),
    )
    .unwrap();
    assert!((&sol.x - &x_star).norm_squared() <= bound);
}

#[test]
fn every_agent_reports_the_broadcast_x() {
    let prob = random_huber(4, 3, 6, 1e-3, 2).unwrap();
    let (sol, trace) = run_dpda(&prob, &SolverConfig::default(), TransportKind::Queue).unwrap();
    assert_eq!(sol.status, Status::Converged);
    assert!(!trace.rows.is_empty());
    assert!(sol.reported_x.iter().all(|x| x == &sol.x));
}

#[test]
fn queue_and_sequential_transports_are_identical() {
    let cfg = SolverConfig::default();
    for (name, prob) in families(5) {
        let mut seq = SequentialTransport::new(leaf_agents(&prob, &cfg));
        let mut queue = QueueTransport::spawn(leaf_agents(&prob, &cfg));
        let (a, ta) = run_dpda_with(&prob, &cfg, &mut seq, None).unwrap();
        let (b, tb) = run_dpda_with(&prob, &cfg, &mut queue, None).unwrap();
        assert!(ta.same_numbers(&tb), "{name}");
        assert_eq!(a.x, b.x);
        assert_eq!(seq.log(), queue.log(), "{name}");
    }
}

#[test]
fn iterates_stay_strictly_feasible_and_residuals_fall() {
    let cfg = SolverConfig::default();
    for (name, prob) in families(6) {
        let (_, trace) = run_dpda(&prob, &cfg, TransportKind::Sequential).unwrap();
        for (k, r) in trace.rows.iter().enumerate() {
            assert_eq!(r.k, k + 1);
            assert!(
                r.max_constraint < 0.0 && r.min_dual > 0.0,
                "{name} iteration {}",
                r.k
            );
            assert!(r.eta_hat > 0.0 && r.delta > 0.0);
            assert!(
                r.residual_after <= (1.0 - cfg.alpha_ls * r.alpha) * r.residual_before,
                "{name} iteration {}",
                r.k
            );
        }
    }
}

#[test]
fn rounds_match_the_documented_bound() {
    let cfg = SolverConfig::default();
    for (name, prob) in families(7) {
        let mut t = SequentialTransport::new(leaf_agents(&prob, &cfg));
        let (sol, trace) = run_dpda_with(&prob, &cfg, &mut t, None).unwrap();
        let rounds = rounds_per_iteration(t.log());
        assert_eq!(rounds.len(), sol.iterations, "{name}");
        for (r, row) in rounds.iter().zip(&trace.rows) {
            assert_eq!(r.vector, 2);
            assert_eq!(row.vector_rounds, 2);
            assert_eq!(r.trials, row.trials);
            assert!(r.scalar <= scalar_round_bound(r.trials), "{name}: {r:?}");
            assert!(
                row.scalar_rounds <= scalar_round_bound(row.trials),
                "{name}: {row:?}"
            );
        }
    }
}

#[test]
fn no_message_has_a_raw_data_shape() {
    // 8 rows per agent against p = 3, so data blocks could not hide behind a legal shape
    let cfg = SolverConfig::default();
    for (name, prob) in families(8) {
        let mut t = SequentialTransport::new(leaf_agents(&prob, &cfg));
        run_dpda_with(&prob, &cfg, &mut t, None).unwrap();
        let bad = raw_data_records(t.log(), prob.p());
        assert!(bad.is_empty(), "{name}: {:?}", bad.first());
        assert!(t
            .log()
            .records
            .iter()
            .all(|r| (r.rows, r.cols) != (8, 3) && (r.rows, r.cols) != (10, 3)));
    }
}

#[test]
fn zero_iterations_is_max_iter() {
    let prob = random_quadratic(2, 2, 1e-2, 1).unwrap();
    let cfg = SolverConfig {
        max_iter: 0,
        ..SolverConfig::default()
    };
    for (status, iterations) in [
        run_dpda(&prob, &cfg, TransportKind::Sequential)
            .map(|(s, _)| (s.status, s.iterations))
            .unwrap(),
        centralized_pdipm_solve(&prob, &cfg)
            .map(|(s, _)| (s.status, s.iterations))
            .unwrap(),
    ] {
        assert_eq!((status, iterations), (Status::MaxIter, 0));
    }
}

#[test]
fn unit_start_is_still_selectable() {
    let prob = random_huber(2, 2, 5, 1e-2, 3).unwrap();
    let cfg = SolverConfig {
        init: InitStrategy::Unit,
        ..SolverConfig::default()
    };
    let (a, _) = run_dpda(&prob, &cfg, TransportKind::Sequential).unwrap();
    let (b, _) = centralized_pdipm_solve(&prob, &cfg).unwrap();
    assert_eq!(a.status, Status::Converged);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn start_point_is_user_selectable() {
    let prob = random_logistic(2, 2, 6, 1e-2, 4).unwrap();
    let cfg = SolverConfig::default();
    let mut t = SequentialTransport::new(leaf_agents(&prob, &cfg));
    let (sol, _) = run_dpda_with(
        &prob,
        &cfg,
        &mut t,
        Some(DVector::from_vec(vec![0.3, -0.2])),
    )
    .unwrap();
    assert_eq!(sol.status, Status::Converged);
}
