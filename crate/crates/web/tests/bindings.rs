use serde_json::Value;

use dipolar_web::{default_config_text, evaluate, scenario_list};

fn run(config: &str) -> Value {
    serde_json::from_str(&evaluate(config).unwrap()).unwrap()
}

#[test]
fn lists_every_scenario() {
    let names: Vec<String> = serde_json::from_str(&scenario_list()).unwrap();
    assert_eq!(names.len(), 7);
    for n in &names {
        assert!(default_config_text(n).unwrap().starts_with(&format!("scenario = {n}\n")));
    }
}

#[test]
fn stark_curves_are_column_major() {
    let v = run("scenario = stark_spectrum\nsweep = field:0:4:5\n");
    assert_eq!(v["rows"]["ok"], 5);
    let t = &v["tables"]["stark"];
    let e = t["E_b"].as_array().unwrap();
    assert_eq!(e.len(), t["energy"].as_array().unwrap().len());
    assert_eq!(e.len() % 5, 0);
    assert_eq!(t["energy"][1], 2.0);
}

#[test]
fn pmi_curve_matches_cli_defaults() {
    let v = run("scenario = pmi_two_molecule\nepsilon = 0.05\nsweep = omega0:0.5:0.6:4\n");
    let pts = &v["tables"]["points"];
    assert_eq!(pts["omega0"].as_array().unwrap().len(), 4);
    assert!(pts["v_pm_over_eps2"].as_array().unwrap().iter().all(|x| x.is_f64()));
    let opt = v["json"]["optimum"].as_array().unwrap();
    assert_eq!(opt.len(), 2);
    // the enhanced PMI flips sign with the detuning
    assert!(opt.iter().all(|o| (o["pmi"].as_f64().unwrap() * o["sign"].as_f64().unwrap()) < 0.0));
}

#[test]
fn errors_are_json() {
    let e = evaluate("scenario = gate_map\nepsilon = 3\n").unwrap_err();
    let v: Value = serde_json::from_str(&e).unwrap();
    assert_eq!(v["kind"], "invalid_parameter");
    assert!(default_config_text("nope").is_err());
}
