use dyadic::lab::LEMMAS;
use dyadic::weights::WeightSequence;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dyadic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadic")).args(args).output().expect("binary runs")
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/shallow_water.cfg")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bony_campaign_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dyadic(&["campaign", "bony", "--grid", "128", "--trials", "50", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("bony.json"));
    for key in ["lemma", "params", "trials", "max_ratio", "scale_drift", "verdict"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["trials"], 50);
    assert!(report["max_ratio"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn solve_emits_manifest_and_tables_deterministically() {
    let cfg = config();
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let o = dyadic(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut files = Vec::new();
        for name in ["manifest.json", "norms_a.csv", "norms_u.csv", "hypotheses.csv", "a_0000.bin", "u_0020.bin"] {
            files.push(std::fs::read(dir.path().join(name)).unwrap_or_else(|_| panic!("{name} missing")));
        }
        let m = read_json(&dir.path().join("manifest.json"));
        assert_eq!(m["kind"], "cns");
        assert!(m["mass_drift"].as_f64().unwrap() < 1e-8);
        bytes.push(files);
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn weights_table_matches_omega() {
    let o = dyadic(&["weights", "--c", "1", "--kmax", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,t,e,omega"));
    let w = WeightSequence::parabolic(1.0).unwrap();
    let mut rows = 0;
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        let k: i32 = v[0].parse().unwrap();
        let t: f64 = v[1].parse().unwrap();
        let om: f64 = v[3].parse().unwrap();
        assert_eq!(om, w.omega(k, t).unwrap(), "k = {k}, t = {t}");
        rows += 1;
    }
    assert_eq!(rows, 22 * 5);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = dyadic(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn hypothesis_violation_names_condition() {
    let o = dyadic(&["product", "--s1", "-1", "--s2", "-1", "--trials", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s1 + s2 > N max(0, 2/p - 1)"));
}

#[test]
fn solve_without_config_is_a_usage_error() {
    assert_eq!(dyadic(&["solve"]).status.code(), Some(2));
}

#[test]
fn list_covers_registry() {
    let o = dyadic(&["campaign", "--list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let ids: Vec<&str> = text.lines().filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(ids, LEMMAS.iter().map(|(id, _)| *id).collect::<Vec<_>>());
}

#[test]
fn tight_drift_bound_fails_verdict() {
    let o = dyadic(&["product", "--trials", "3", "--drift-bound", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn partition_check_passes() {
    let o = dyadic(&["partition-check", "--trials", "5", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_reconstruction_error"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn uniqueness_reports_bounded_growth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let o = dyadic(&["uniqueness", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("uniqueness.json"));
    let g = v["report"]["growth_factor"].as_f64().unwrap();
    assert!(g.is_finite() && g < 10.0);
}
