use pwa_mrac_wasm::{barrier_curve_json, certify_json, simulate_json};
use serde_json::Value;

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn certify_defaults_and_overrides() {
    let v = parse(&certify_json(""));
    assert_eq!(v["passed"], true);
    let v = parse(&certify_json(r#"{"h": 0.3}"#));
    assert_eq!(v["passed"], false);
    let v = parse(&certify_json(r#"{"hh": 0.3}"#));
    assert!(v["error"].as_str().unwrap().contains("unknown field"));
}

#[test]
fn simulate_returns_decimated_columns() {
    let v = parse(&simulate_json(r#"{"t_end": 30, "max_points": 301}"#));
    assert!(v.get("error").is_none(), "{v}");
    let t = v["t"].as_array().unwrap();
    assert_eq!(t.len(), 301);
    assert_eq!(v["events"].as_array().unwrap().len(), 1);
    let (e, eps) = (v["e_norm"].as_array().unwrap(), v["eps"].as_array().unwrap());
    assert!(e.iter().zip(eps).all(|(a, b)| a.as_f64() < b.as_f64()));
    assert_eq!(v["summary"]["monitors_passed"], true);
}

#[test]
fn robust_law_runs_in_the_demo() {
    let v = parse(&simulate_json(r#"{"law": "robust", "t_end": 20, "seed": 3}"#));
    assert!(v["failure"].is_null(), "{}", v["failure"]);
    assert_eq!(v["certified"], true);
}

#[test]
fn barrier_curve_changes_sign_at_zeta() {
    let v = parse(&barrier_curve_json(2.0, 1.0, 500));
    let zeta = v["zeta"].as_f64().unwrap();
    assert!(v["zeta_lower"].as_f64().unwrap() < zeta);
    let z = v["z"].as_array().unwrap();
    let ind = v["indicator"].as_array().unwrap();
    for (z, i) in z.iter().zip(ind) {
        let (z, i) = (z.as_f64().unwrap(), i.as_f64().unwrap());
        if (z - zeta).abs() > 1e-9 {
            assert_eq!(i > 0.0, z > zeta);
        }
    }
    assert!(parse(&barrier_curve_json(1.0, 2.0, 10))["error"].is_string());
}
