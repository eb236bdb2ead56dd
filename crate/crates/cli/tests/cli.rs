//! End-to-end checks of the `lw-lab` binary: exit codes, wire formats, and
//! byte-reproducible suite outputs.

use std::fs;
use std::process::Command;

fn lw_lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lw-lab"))
}

#[test]
fn gen_verify_round_trip_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let instance = dir.path().join("t.json");
    let profile = dir.path().join("tp.json");
    let out = lw_lab()
        .args([
            "gen",
            "--family",
            "tightness",
            "--epsilon",
            "0.1",
            "--out-instance",
            instance.to_str().unwrap(),
            "--out-profile",
            profile.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "gen failed: {}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["claimed_opt"], serde_json::json!(19.9));

    let verify = lw_lab()
        .args([
            "verify",
            "--instance",
            instance.to_str().unwrap(),
            "--profile",
            profile.to_str().unwrap(),
            "--mechanism",
            "second",
            "--ties",
            "lex",
        ])
        .output()
        .unwrap();
    assert_eq!(verify.status.code(), Some(0), "{}", String::from_utf8_lossy(&verify.stderr));
    let verdict: serde_json::Value = serde_json::from_slice(&verify.stdout).unwrap();
    assert_eq!(verdict["is_equilibrium"], serde_json::json!(true));

    // the same bids are no equilibrium under uniform ties on this instance?
    // use an all-zero profile instead: exit code 1
    let zeros = dir.path().join("zeros.json");
    fs::write(&zeros, r#"{"bids": [[[0.0],[0.0]],[[0.0],[0.0]]]}"#).unwrap();
    let verify = lw_lab()
        .args([
            "verify",
            "--instance",
            instance.to_str().unwrap(),
            "--profile",
            zeros.to_str().unwrap(),
            "--mechanism",
            "second",
            "--ties",
            "lex",
        ])
        .output()
        .unwrap();
    assert_eq!(verify.status.code(), Some(1));

    // a parse failure is exit code 2
    let verify = lw_lab()
        .args([
            "verify",
            "--instance",
            "/nonexistent.json",
            "--profile",
            profile.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(verify.status.code(), Some(2));
}

#[test]
fn opt_llp_and_audit_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let instance = dir.path().join("t.json");
    let profile = dir.path().join("tp.json");
    lw_lab()
        .args([
            "gen",
            "--family",
            "tightness",
            "--out-instance",
            instance.to_str().unwrap(),
            "--out-profile",
            profile.to_str().unwrap(),
        ])
        .output()
        .unwrap();

    let opt = lw_lab().args(["opt", "--instance", instance.to_str().unwrap()]).output().unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&opt.stdout).unwrap();
    assert!((doc["value"].as_f64().unwrap() - 19.9).abs() < 1e-9);
    assert_eq!(doc["allocation"][0][0], serde_json::json!(0));

    let llp = lw_lab().args(["llp", "--instance", instance.to_str().unwrap()]).output().unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&llp.stdout).unwrap();
    assert!((doc["objective"].as_f64().unwrap() - 19.9).abs() < 1e-6);

    let audit = lw_lab()
        .args([
            "audit",
            "--instance",
            instance.to_str().unwrap(),
            "--profile",
            profile.to_str().unwrap(),
            "--mechanism",
            "second",
            "--alpha",
            "2.26",
            "--gamma",
            "7.16",
        ])
        .output()
        .unwrap();
    assert_eq!(audit.status.code(), Some(0));
    let checks: serde_json::Value = serde_json::from_slice(&audit.stdout).unwrap();
    assert!(checks.as_array().unwrap().iter().all(|c| c["holds"] == serde_json::json!(true)));
}

#[test]
fn house_demand_profiles_parse() {
    let dir = tempfile::tempdir().unwrap();
    let instance = dir.path().join("r.json");
    let profile = dir.path().join("rp.json");
    lw_lab()
        .args([
            "gen",
            "--family",
            "rand-tiebreak-shares",
            "--n",
            "4",
            "--h",
            "2",
            "--out-instance",
            instance.to_str().unwrap(),
            "--out-profile",
            profile.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let verify = lw_lab()
        .args([
            "verify",
            "--instance",
            instance.to_str().unwrap(),
            "--profile",
            profile.to_str().unwrap(),
            "--mechanism",
            "house",
            "--ties",
            "uniform:0",
        ])
        .output()
        .unwrap();
    assert_eq!(verify.status.code(), Some(0), "{}", String::from_utf8_lossy(&verify.stderr));
}

fn strip_wall_ms(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            if line.starts_with('#') || line.starts_with("id,") {
                line.to_string()
            } else {
                match line.rsplit_once(',') {
                    Some((rest, _wall)) => rest.to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn suite_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("suite.json");
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    let config = |out: &std::path::Path| {
        serde_json::json!({
            "instances": [
                {"type": "family", "family": "tightness", "epsilon": 0.1},
                {"type": "family", "family": "rand-tiebreak", "n": 4},
                {"type": "random", "count": 3, "spec": {
                    "n": 2, "m": 2, "value_range": [0.0, 1.0],
                    "budget_range": [0.2, 1.0], "valuation": "additive"
                }}
            ],
            "mechanism": "first",
            "ties": "lex",
            "seed": 11,
            "modes": ["verify", "lpoa", "brd"],
            "output": out.to_str().unwrap(),
        })
    };
    for out in [&out_a, &out_b] {
        fs::write(&config_path, config(out).to_string()).unwrap();
        let run = lw_lab()
            .args(["suite", "--config", config_path.to_str().unwrap()])
            .output()
            .unwrap();
        // random instances have no profile: verify rows record errors
        assert_eq!(run.status.code(), Some(1), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let csv_a = fs::read_to_string(out_a.with_extension("csv")).unwrap();
    let csv_b = fs::read_to_string(out_b.with_extension("csv")).unwrap();
    assert_eq!(strip_wall_ms(&csv_a), strip_wall_ms(&csv_b));
    assert!(csv_a.starts_with("# manifest:"));

    // certified rows verified true with the expected ratios
    let lines: Vec<&str> = csv_a.lines().collect();
    let tightness_lpoa = lines
        .iter()
        .find(|l| l.starts_with("tightness-0.1,lpoa"))
        .expect("tightness lpoa row");
    assert!(tightness_lpoa.contains("1.990000000"), "{tightness_lpoa}");
    let rand_row = lines
        .iter()
        .find(|l| l.starts_with("rand-tiebreak-4,lpoa"))
        .expect("rand-tiebreak lpoa row");
    assert!(rand_row.contains("4.000000000"), "{rand_row}");

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["manifest"]["seed"], serde_json::json!(11));
    assert!(json["rows"].as_array().unwrap().len() >= 15);
}

#[test]
fn suite_of_certified_families_verifies_with_claimed_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("families.json");
    let out = dir.path().join("families");
    let config = serde_json::json!({
        "instances": [
            {"type": "family", "family": "tightness", "epsilon": 0.1},
            {"type": "family", "family": "tightness-first", "epsilon": 0.1},
            {"type": "family", "family": "rand-tiebreak", "n": 4},
            {"type": "family", "family": "mixed", "n": 5},
            {"type": "family", "family": "rand-tiebreak-shares", "n": 6, "h": 2},
            {"type": "family", "family": "mixed-shares", "n": 7, "h": 2}
        ],
        "modes": ["verify", "lpoa"],
        "seed": 1,
        "output": out.to_str().unwrap(),
    });
    fs::write(&config_path, config.to_string()).unwrap();
    let run = lw_lab()
        .args(["suite", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(out.with_extension("csv")).unwrap();
    let expect = [
        ("tightness-0.1,lpoa", "1.990000000"),
        ("tightness-first-0.1,lpoa", "1.990000000"),
        ("rand-tiebreak-4,lpoa", "4.000000000"),
        ("mixed-5,lpoa", "2.500000000"),
        ("rand-tiebreak-shares-6-2,lpoa", "3.000000000"),
        ("mixed-shares-7-2,lpoa", "1.750000000"),
    ];
    for (prefix, ratio) in expect {
        let row = csv
            .lines()
            .find(|l| l.starts_with(prefix))
            .unwrap_or_else(|| panic!("missing row {prefix}"));
        assert!(row.contains(ratio), "{row}");
        assert!(row.contains("true"), "{row}");
    }
    for line in csv.lines().filter(|l| l.contains(",verify,")) {
        assert!(line.contains("true"), "verdict not true: {line}");
    }
}

#[test]
fn brd_subcommand_reports_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let instance = dir.path().join("np.json");
    lw_lab()
        .args([
            "gen",
            "--family",
            "no-pne",
            "--m",
            "3",
            "--out-instance",
            instance.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let brd = lw_lab()
        .args([
            "brd",
            "--instance",
            instance.to_str().unwrap(),
            "--mechanism",
            "first",
            "--ties",
            "lex",
            "--max-rounds",
            "60",
        ])
        .output()
        .unwrap();
    assert_eq!(brd.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&brd.stdout).unwrap();
    assert_eq!(doc["converged"], serde_json::json!(false));
    assert_eq!(doc["cycle_detected"], serde_json::json!(true));
}
