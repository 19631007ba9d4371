use serde_json::Value;
use storelight_wasm::{diagnostics_json, optimize_json, run_cycle_json};

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn default_cycle_returns_three_traces() {
    let v = parse(&run_cycle_json("").unwrap());
    let eta = v["efficiency"].as_f64().unwrap();
    assert!(eta > 0.0 && eta < 1.0);
    for key in ["input", "leakage", "output"] {
        assert_eq!(v[key]["abs"].as_array().unwrap().len(), 401, "{key}");
    }
    assert_eq!(v["output"]["t0"].as_f64().unwrap(), 0.0);
}

#[test]
fn optimization_improves_on_the_trial() {
    let v = parse(&optimize_json(r#"{"d": 5.0, "omega": 1.3, "max_iters": 8}"#).unwrap());
    let eff: Vec<f64> = v["efficiencies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(eff.len() >= 2 && eff.len() <= 8);
    assert!(eff[eff.len() - 1] > eff[0]);
    assert_eq!(v["iterations"].as_array().unwrap().len(), eff.len());
}

#[test]
fn bad_inputs_are_reported() {
    assert!(run_cycle_json("{\"d\": -1}")
        .unwrap_err()
        .contains("optical depth"));
    assert!(run_cycle_json("{\"depth\": 3}")
        .unwrap_err()
        .contains("bad config"));
    assert!(diagnostics_json(9.0, 1.0, 0.0).is_err());
}

#[test]
fn diagnostics_match_closed_forms() {
    let v = parse(&diagnostics_json(9.0, 3.0, 2.0).unwrap());
    assert!((v["vg_over_l"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["delta_omega_eit"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((v["bandwidth_ratio"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
}
