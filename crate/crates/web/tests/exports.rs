use consensus_ipm_web::{epsilon_sweep_value, quadratic_consensus_value, robust_ls_value};

#[test]
fn consensus_copies_stay_in_the_ball() {
    let r = quadratic_consensus_value(5, 0.05, 1).unwrap();
    assert_eq!(r["status"], "converged");
    let x: Vec<f64> = serde_json::from_value(r["x"].clone()).unwrap();
    let copies: Vec<Vec<f64>> = serde_json::from_value(r["copies"].clone()).unwrap();
    assert_eq!(copies.len(), 5);
    for c in &copies {
        let d = ((c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2)).sqrt();
        assert!(d < 0.05);
    }
    assert_eq!(r["agent_optima"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_gap_stays_under_the_bound() {
    let r = epsilon_sweep_value(4, 2).unwrap();
    let points = r["points"].as_array().unwrap();
    assert_eq!(points.len(), 9);
    for p in points {
        assert!(p["gap"].as_f64().unwrap() <= p["gap_bound"].as_f64().unwrap() + 1e-9);
    }
}

#[test]
fn robust_ls_reports_the_requested_conditioning() {
    let r = robust_ls_value(7, 56.92, 1e-3).unwrap();
    assert_eq!(r["status"], "converged");
    assert!((r["condition_number"].as_f64().unwrap() - 56.92).abs() < 1e-8);
    assert!(r["relative_error"].as_f64().unwrap() < 1e-2);
}

#[test]
fn bad_arguments_are_errors() {
    assert!(quadratic_consensus_value(0, 0.1, 1).is_err());
    assert!(robust_ls_value(1, 1.0, -1.0).is_err());
}
