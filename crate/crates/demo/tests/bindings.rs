use ldkrr_demo::{key_quantities_json, rate_curves_json, saturation_gap_json, spectrum_json};
use serde_json::Value;

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn curves_cover_both_methods() {
    let v = parse(&rate_curves_json(1.5, 4.0, "generic").unwrap());
    let krr = v["krr"].as_array().unwrap();
    let minimax = v["minimax"].as_array().unwrap();
    assert!(krr.len() >= 400 && minimax.len() >= 400);
    let at_two = krr.iter().find(|p| p["gamma"] == 2.0).unwrap();
    assert_eq!(at_two["d_exponent"], -1.5);
    assert_eq!(at_two["lambda_exponent"], 0.75);
    for (k, m) in krr.iter().zip(minimax) {
        if k["gamma"] == m["gamma"] {
            assert!(k["d_exponent"].as_f64() >= m["d_exponent"].as_f64());
        }
    }
}

#[test]
fn curve_inputs_are_checked() {
    assert!(rate_curves_json(1.0, 4.0, "rbf").is_err());
    assert!(rate_curves_json(1.0, -1.0, "ntk").is_err());
    assert!(rate_curves_json(-1.0, 3.0, "ntk").is_err());
}

#[test]
fn gap_is_zero_for_rough_targets() {
    let v = parse(&saturation_gap_json(0.8, 1.5, "generic").unwrap());
    assert_eq!(v["gap"], 0.0);
    let v = parse(&saturation_gap_json(2.0, 2.0, "generic").unwrap());
    assert!(v["gap"].as_f64().unwrap() > 0.0);
}

#[test]
fn spectrum_of_linear_kernel() {
    let v = parse(&spectrum_json("poly:[0,1]", 3, 1).unwrap());
    assert_eq!(v["mu"], serde_json::json!([0.0, 0.25]));
    assert!(spectrum_json("exp", 1, 4).is_err());
    let ntk = parse(&spectrum_json("ntk-relu2", 8, 6).unwrap());
    assert_eq!(ntk["mu"].as_array().unwrap().len(), 7);
}

#[test]
fn quantities_decrease_along_lambda() {
    let v = parse(&key_quantities_json("exp", 20, 1.0, 1.5, 0.0, 2.0, 9).unwrap());
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 9);
    for w in rows.windows(2) {
        let (a, b) = (&w[0]["quantities"], &w[1]["quantities"]);
        assert!(b["n1"].as_f64() >= a["n1"].as_f64());
        assert!(b["m2"].as_f64() <= a["m2"].as_f64());
    }
    assert!(key_quantities_json("exp", 20, 1.0, 1.5, 1.0, 1.0, 9).is_err());
}
