use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use ks_para_cli::{run_all, Study};
use sha2::{Digest, Sha256};

fn csv_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        if entry.extension().is_some_and(|e| e == "csv") {
            let bytes = std::fs::read(&entry).unwrap();
            let rel = entry.strip_prefix(dir).unwrap().display().to_string();
            out.insert(rel, Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect::<String>());
        }
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn reruns_give_byte_identical_csvs() {
    let studies = [Study::ConstantCounterterm, Study::Identities, Study::ProductRule];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_all(&studies, a.path(), 7).unwrap().pass());
    assert!(run_all(&studies, b.path(), 7).unwrap().pass());
    let (ha, hb) = (csv_hashes(a.path()), csv_hashes(b.path()));
    assert_eq!(ha.len(), 4, "{ha:?}");
    assert_eq!(ha, hb);
    let summary = std::fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("study,criterion,status,detail\n"));
    assert_eq!(summary.lines().count(), 4);
}

fn ks_para() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ks-para"))
}

#[test]
fn binary_runs_product_rule_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let status = ks_para().args(["product-rule", "--N", "8", "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    assert!(dir.path().join("product_rule.csv").exists());
    assert!(dir.path().join("product-rule.manifest.json").exists());

    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"n": 4, "t_end": 0.01, "steps": 3, "sigma": "const:1"}"#).unwrap();
    let out = dir.path().join("det");
    let status = ks_para()
        .args(["deterministic", "--config"])
        .arg(&config)
        .args(["--steps", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("deterministic.manifest.json")).unwrap()).unwrap();
    // the flag overrides the config, which overrides the default
    assert_eq!(manifest["parameters"]["config"]["steps"], 5);
    assert_eq!(manifest["parameters"]["config"]["n"], 4);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let norms = std::fs::read_to_string(out.join("norms.csv")).unwrap();
    assert_eq!(norms.lines().count(), 1 + 6);

    let report = ks_para().arg("besov").arg(out.join("rho_deterministic.ksf")).output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("holder_-1.05"));
}

#[test]
fn invalid_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = ks_para()
        .args(["simulate", "--N", "4", "--delta", "0.125", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1/delta <= N"));
    let out = ks_para().args(["run-all", "--studies", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_study_list_from_config_gives_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("empty.json");
    let out = dir.path().join("bundle");
    std::fs::write(&config, format!(r#"{{"studies": [], "out": {:?}}}"#, out.display().to_string())).unwrap();
    let o = ks_para().args(["run-all", "--config"]).arg(&config).output().unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
}
