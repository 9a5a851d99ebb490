//! End-to-end runs of the `treeval` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeval")).args(args).output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn scratch(name: &str, contents: &str) -> String {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

#[test]
fn value_report_has_the_expected_sections() {
    let (tree, cash, fam) = (data("binomial.json"), data("cash.json"), data("entropic.json"));
    let out = run(&["value", "--tree", &tree, "--cash", &cash, "--family", &fam]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    for key in ["command", "inputs", "results", "residuals", "timing"] {
        assert!(r.get(key).is_some(), "missing `{key}`");
    }
    assert_eq!(r["command"]["verb"], "value");
    assert_eq!(r["inputs"]["files"].as_array().unwrap().len(), 3);
    assert_eq!(r["inputs"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn unreadable_input_exits_with_two() {
    let out = run(&["value", "--tree", &data("binomial.json"), "--cash", "/nonexistent.json", "--family", &data("entropic.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("treeval value:"));
}

#[test]
fn malformed_descriptor_exits_with_two() {
    let bad = scratch("bad_family.json", r#"{"family": "entropic", "gamma": 1.0, "beta": 2.0}"#);
    let out = run(&["value", "--tree", &data("binomial.json"), "--cash", &data("cash.json"), "--family", &bad]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_verb_exits_with_two() {
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
}

#[test]
fn iteration_cap_exits_with_three() {
    let out = run(&["dual", "--tree", &data("binomial.json"), "--family", &data("ui_crra.json"), "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no convergence"));
}

#[test]
fn axiom_failure_exits_with_four_and_carries_a_witness() {
    let out = run(&["check", "--family", &data("ui_crra.json"), "--trials", "50", "--seed", "1", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(4));
    let r = report(&out);
    let failed: Vec<&Value> = r["results"]["axioms"]["outcomes"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|o| o["passed"] == false)
        .collect();
    assert!(!failed.is_empty());
    for o in failed {
        assert!(o["witness"]["cash"].as_array().is_some_and(|c| !c.is_empty()));
    }
}

#[test]
fn passing_check_exits_with_zero() {
    let out = run(&["check", "--family", &data("entropic.json"), "--trials", "100", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["results"]["axioms"]["passed"], true);
}

#[test]
fn infinite_dual_is_written_as_a_string() {
    let dens = scratch("far_density.json", r#"{"0":0.01,"u":0.01,"uu":0.9,"ud":0.02,"d":0.02,"du":0.02,"dd":0.02}"#);
    let out = run(&["dual", "--tree", &data("binomial.json"), "--family", &data("worst.json"), "--density", &dens]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["results"]["dual_value"], "inf");
}

#[test]
fn reports_are_deterministic() {
    let args = ["counterexample", "--seed", "11", "--trials", "500"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn emitted_cash_maps_round_trip() {
    let (tree, cash) = (data("binomial.json"), data("cash.json"));
    let fams = [data("entropic.json"), data("entropic_averse.json")];
    let out = run(&["share", "--tree", &tree, "--cash", &cash, &fams[0], &fams[1]]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    for (i, member) in r["results"]["allocation"].as_array().unwrap().iter().enumerate() {
        let path = scratch(&format!("share_{i}.json"), &member["cash"].to_string());
        let v = report(&run(&["value", "--tree", &tree, "--cash", &path, "--family", &fams[i]]));
        let root = &v["results"]["values"]["0"];
        assert_eq!(root.as_f64(), member["value"].as_f64(), "member {i}");
    }
}

#[test]
fn state_prices_reproduce_the_asset() {
    let out = run(&["spd", "--tree", &data("binomial.json"), "--prices", &data("prices.json")]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!(r["residuals"]["round_trip"].as_f64().unwrap() < 1e-12);
    assert!(r["residuals"]["asset_pricing"].as_f64().unwrap() < 1e-12);
}

#[test]
fn hedging_never_lowers_the_value() {
    let out = run(&["hedge", "--tree", &data("binomial.json"), "--cash", &data("cash.json"), "--family", &data("entropic.json")]);
    assert_eq!(out.status.code(), Some(0));
    let res = &report(&out)["results"];
    assert!(res["value"].as_f64().unwrap() >= res["without_market"].as_f64().unwrap() - 1e-12);
    assert!(res["access_value"].as_f64().unwrap() >= -1e-12);
}
