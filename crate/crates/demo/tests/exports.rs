use margsynth_demo::{calibrate_json, convergence_json, selection_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn calibration_splits_budget() {
    let v = parse(calibrate_json(1.0, 1e-6, 5, 20));
    let parts = ["one_way_rho", "select_rho", "publish_rho"].map(|k| v[k].as_f64().unwrap());
    assert_eq!(parts[0] + parts[1] + parts[2], v["rho"].as_f64().unwrap());
    assert!(v["indif_sigma"].as_f64().unwrap() > v["one_way_sigma"].as_f64().unwrap());
    assert!(calibrate_json(-1.0, 1e-6, 5, 20).is_err());
    assert!(calibrate_json(1.0, 1e-6, 1, 20).is_err());
}

#[test]
fn more_budget_selects_more() {
    let low = parse(selection_json(0.05, 3));
    let high = parse(selection_json(8.0, 3));
    assert_eq!(high["scores"].as_array().unwrap().len(), 15);
    let count = |v: &Value| v["chosen"].as_array().unwrap().len();
    assert!(count(&high) >= count(&low));
    assert!(count(&high) > 0);
    assert_eq!(selection_json(1.0, 9), selection_json(1.0, 9));
}

#[test]
fn convergence_curves() {
    let v = parse(convergence_json(15, 1.0, 2));
    for key in ["gum", "mcf"] {
        let c: Vec<f64> = v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(c.len(), 16);
        assert!(c[15] < c[0]);
    }
    assert!(convergence_json(10, 0.0, 2).is_err());
}
