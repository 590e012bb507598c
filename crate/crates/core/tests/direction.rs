use consensus_ipm::experiment::{random_huber, random_iterate, random_logistic, random_quadratic};
use consensus_ipm::model::RelaxedProblem;
use consensus_ipm::msgpass::distributed_direction;
use consensus_ipm::oracle::{
    dense_kkt_direction, kkt_residual, unreduced_direction, unreduced_system,
};
use consensus_ipm::pdipm::{AgentState, Direction, Iterate, KktOptions};
use consensus_ipm::verify::{direction_exactness, DIRECTION_TOLERANCE};
use nalgebra::{DMatrix, DVector};

fn instances() -> Vec<(&'static str, RelaxedProblem)> {
    vec![
        ("quadratic", random_quadratic(3, 2, 0.05, 11).unwrap()),
        ("huber", random_huber(3, 2, 5, 0.05, 12).unwrap()),
        ("logistic", random_logistic(3, 2, 6, 0.05, 13).unwrap()),
    ]
}

/// Variables in the unreduced layout: per agent `[x_i, t_i, v_i, z_i, lambda_i]`, then `x`.
fn pack(it: &Iterate) -> DVector<f64> {
    let mut out = Vec::new();
    for s in &it.agents {
        out.extend(s.x.iter());
        out.extend(s.t.iter());
        out.extend(s.v.iter());
        out.extend(s.z.iter());
        out.push(s.lambda);
    }
    out.extend(it.x.iter());
    DVector::from_vec(out)
}

fn unpack(template: &Iterate, v: &DVector<f64>) -> Iterate {
    let mut at = 0;
    let mut take = |len: usize| {
        let part = v.rows(at, len).into_owned();
        at += len;
        part
    };
    let agents = template
        .agents
        .iter()
        .map(|s| AgentState {
            x: take(s.x.len()),
            t: take(s.t.len()),
            v: take(s.v.len()),
            z: take(s.z.len()),
            lambda: take(1)[0],
        })
        .collect();
    let x = take(template.x.len());
    Iterate {
        x,
        agents,
        delta: template.delta,
        k: template.k,
    }
}

#[test]
fn distributed_direction_matches_both_oracles() {
    for (name, prob) in instances() {
        for seed in 0..4 {
            let it = random_iterate(&prob, seed).unwrap();
            let dist = distributed_direction(&prob, &it, KktOptions::default()).unwrap();
            let dense = dense_kkt_direction(&prob, &it).unwrap();
            let full = unreduced_direction(&prob, &it).unwrap();
            let a = dist.relative_difference(&dense);
            let b = dist.relative_difference(&full);
            assert!(
                a <= DIRECTION_TOLERANCE && b <= DIRECTION_TOLERANCE,
                "{name} seed {seed}: {a:e} {b:e}"
            );
        }
    }
}

#[test]
fn unreduced_matrix_is_the_residual_jacobian() {
    for (name, prob) in instances() {
        let it = random_iterate(&prob, 5).unwrap();
        let sys = unreduced_system(&prob, &it).unwrap();
        let base = pack(&it);
        let mut fd = DMatrix::zeros(base.len(), base.len());
        for k in 0..base.len() {
            let h = 1e-6 * base[k].abs().max(1.0);
            let mut up = base.clone();
            up[k] += h;
            let mut down = base.clone();
            down[k] -= h;
            let col = (kkt_residual(&prob, &unpack(&it, &up))
                - kkt_residual(&prob, &unpack(&it, &down)))
                / (2.0 * h);
            fd.set_column(k, &col);
        }
        let err = (&sys.matrix - &fd).abs().max() / fd.abs().max().max(1.0);
        assert!(err < 1e-6, "{name}: Jacobian mismatch {err:e}");
        let r = kkt_residual(&prob, &it);
        assert!(
            (&sys.rhs + &r).abs().max() <= 1e-12 * r.abs().max().max(1.0),
            "{name}: rhs is not -r"
        );
    }
}

#[test]
fn distributed_direction_solves_the_full_newton_system() {
    for (name, prob) in instances() {
        let it = random_iterate(&prob, 9).unwrap();
        let d = distributed_direction(&prob, &it, KktOptions::default()).unwrap();
        let sys = unreduced_system(&prob, &it).unwrap();
        let mut step = Vec::new();
        for a in &d.agents {
            step.extend(a.dx.iter());
            step.extend(a.dt.iter());
            step.extend(a.dv.iter());
            step.extend(a.dz.iter());
            step.push(a.dlambda);
        }
        step.extend(d.dx.iter());
        let residual = &sys.matrix * DVector::from_vec(step) - &sys.rhs;
        let scale = sys.rhs.norm().max(1.0);
        assert!(
            residual.norm() <= 1e-8 * scale,
            "{name}: {:e}",
            residual.norm() / scale
        );
    }
}

#[test]
fn short_newton_step_scales_the_residual() {
    // first order: r(it + a d) = (1 - a) r(it)
    let prob = random_quadratic(2, 3, 0.1, 21).unwrap();
    let it = random_iterate(&prob, 3).unwrap();
    let d: Direction = dense_kkt_direction(&prob, &it).unwrap();
    let small = it.stepped(&d, 1e-7);
    let predicted = kkt_residual(&prob, &it) * (1.0 - 1e-7);
    let actual = kkt_residual(&prob, &small);
    assert!((actual - &predicted).norm() <= 1e-6 * predicted.norm());
}

#[test]
fn exactness_holds_across_sizes() {
    let cases = direction_exactness(42, 1).unwrap();
    assert!(cases.len() >= 15);
    for c in &cases {
        assert!(c.relative_difference <= DIRECTION_TOLERANCE, "{c:?}");
    }
}
