use ergodic_ia_demo::{dof_curves_json, noiseless_check_json, sum_rate_curve_json};
use serde_json::Value;

#[test]
fn curves_start_at_three_users() {
    let v: Value = serde_json::from_str(&dof_curves_json(50).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 48);
    assert_eq!(rows[0]["k"], 3);
    assert_eq!(rows[0]["proposed"], 1.2);
    assert_eq!(rows[0]["retro_csit"], 1.125);
    assert_eq!(rows[0]["proposed_exact"], "6/5");
    assert_eq!(rows[47]["proposed_exact"], "25/13");
    assert!(dof_curves_json(2).is_err());
    assert!(dof_curves_json(10_000).is_err());
}

#[test]
fn rate_curve_slope_near_formula() {
    let v: Value = serde_json::from_str(&sum_rate_curve_json("delayed_csit", 3, 40.0, 60.0, 3, 2000, 1).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
    let slope = v["slope"].as_f64().unwrap();
    assert!((slope / 1.2 - 1.0).abs() < 0.05, "{slope}");
    assert_eq!(v["formula"], 1.2);
}

#[test]
fn noiseless_check_is_exact() {
    for scheme in ["baseline", "delayed_csit", "delayed_time_index", "delayed_output_fb"] {
        let v: Value = serde_json::from_str(&noiseless_check_json(scheme, 5, 100, 3).unwrap()).unwrap();
        assert_eq!(v["exact"], true, "{scheme}: {v}");
        assert_eq!(v["episodes"], 100);
    }
    let v: Value = serde_json::from_str(&noiseless_check_json("delayed_output_fb", 4, 10, 0).unwrap()).unwrap();
    assert_eq!(v["ledger"], "8/6");
}

#[test]
fn bad_inputs_rejected() {
    assert!(noiseless_check_json("formulas", 3, 10, 0).is_err());
    assert!(noiseless_check_json("baseline", 9, 10, 0).is_err());
    assert!(sum_rate_curve_json("baseline", 3, 40.0, 30.0, 3, 10, 0).is_err());
    assert!(sum_rate_curve_json("baseline", 3, 30.0, 40.0, 1, 10, 0).is_err());
}
