use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kgmol");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn kgmol(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("KGMOL_SEED").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let o = kgmol(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for sub in ["parse", "validate-kg", "kge-train", "detect-moieties", "augment", "pretrain", "probe", "export"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(kgmol(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kgmol(&["augment", "--mode", "nope", "--molecules", "x"]).status.code(), Some(1));
}

#[test]
fn parse_emits_one_json_line_per_molecule() {
    let o = kgmol(&["parse", "--molecules", s(&data("corpus.smi"))]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 20);
    assert!(lines.iter().all(|v| v["signature"].is_string() && v["graph"].is_object()));
}

#[test]
fn parse_reports_bad_smiles() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.smi");
    fs::write(&p, "C1CC\tbroken\n").unwrap();
    let o = kgmol(&["parse", "--molecules", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_input_file_exits_one() {
    let o = kgmol(&["parse", "--molecules", "/definitely/not/here.smi"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_kg_flags_unknown_relations() {
    let o = kgmol(&["validate-kg", "--triples", s(&data("sample_element_kg.tsv"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("kg.tsv");
    fs::write(&p, "Gas\tisStateOf\tCl\nGas\tisstateof\tO\n").unwrap();
    let o = kgmol(&["validate-kg", "--triples", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("isstateof"));
}

#[test]
fn detect_moieties_prints_records() {
    let o = kgmol(&["detect-moieties", "--molecules", s(&data("corpus.smi"))]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("ring(benzene, r0, [0,1,2,3,4,5], 6, aromatic)"));
    assert!(text.contains("fused(naphthalene"));
    assert!(text.contains("functional_group(ethanol"));
    let o = kgmol(&["detect-moieties", "--format", "json", "--molecules", s(&data("corpus.smi"))]);
    assert_eq!(stdout(&o).lines().count(), 20);
}

#[test]
fn augment_json_and_dot() {
    let o = kgmol(&["augment", "--mode", "element-kg", "--molecules", s(&data("corpus.smi"))]);
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["nodes"].is_array());
    }
    let o = kgmol(&["augment", "--mode", "fg-kg", "--format", "dot", "--molecules", s(&data("corpus.smi"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("kind=fused"));
}

#[test]
fn parallel_output_matches_serial() {
    let corpus = data("corpus.smi");
    let args = ["augment", "--mode", "fg-kg", "--compose-augmentations", "--molecules", s(&corpus)];
    let serial = kgmol(&args);
    let mut par: Vec<&str> = vec!["--jobs", "4"];
    par.extend(args);
    assert_eq!(serial.stdout, kgmol(&par).stdout);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# augment settings\nmode = fg-kg\nformat = dot\n").unwrap();
    let a = kgmol(&["--config", s(&cfg), "augment", "--molecules", s(&data("corpus.smi"))]);
    let b = kgmol(&["augment", "--mode", "fg-kg", "--format", "dot", "--molecules", s(&data("corpus.smi"))]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn kge_train_is_deterministic() {
    let args = ["kge-train", "--dim", "8", "--steps", "200"];
    let a = kgmol(&args);
    let b = kgmol(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = Command::new(BIN).args(args).env("KGMOL_SEED", "9").output().unwrap();
    assert_ne!(a.stdout, other.stdout);
    let explicit = kgmol(&["kge-train", "--dim", "8", "--steps", "200", "--seed", "9"]);
    assert_eq!(other.stdout, explicit.stdout);
}

#[test]
fn pretrain_probe_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.json");
    let o = kgmol(&["kge-train", "--dim", "8", "--steps", "300", "--out", s(&emb)]);
    assert!(o.status.success());

    let run = |out: &Path, log: &Path| {
        kgmol(&[
            "pretrain",
            "--molecules",
            s(&data("two_family.smi")),
            "--embeddings",
            s(&emb),
            "--epochs",
            "2",
            "--hidden",
            "8",
            "--layers",
            "1",
            "--projection-dim",
            "4",
            "--out",
            s(out),
            "--log",
            s(log),
        ])
    };
    let (m1, m2) = (dir.path().join("m1.json"), dir.path().join("m2.json"));
    let log = dir.path().join("log.csv");
    let o = run(&m1, &log);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run(&m2, &log).status.success());
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);

    let o = kgmol(&["probe", "--model", s(&m1), "--molecules", s(&data("two_family.smi"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["accuracy"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["checksum_before"], v["checksum_after"]);

    let o = kgmol(&["export", "--model", s(&m1), "--component", "kmpnn"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let names: Vec<&String> = v["params"].as_object().unwrap().keys().collect();
    assert!(!names.is_empty());
    assert!(names.iter().all(|n| !n.starts_with("plain") && !n.starts_with("head")));
}

#[test]
fn probe_without_model_exits_one() {
    let o = kgmol(&["probe", "--model", "/no/such/model.json", "--molecules", s(&data("two_family.smi"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn probe_needs_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let o = kgmol(&[
        "pretrain", "--molecules", s(&data("corpus.smi")), "--epochs", "1", "--hidden", "8", "--layers", "1",
        "--projection-dim", "4", "--out", s(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mols = dir.path().join("one.smi");
    fs::write(&mols, "CCO\ta\tx\nCCCO\tb\tx\nCCCCO\tc\tx\nCO\td\tx\nCCCCCO\te\tx\n").unwrap();
    let o = kgmol(&["probe", "--model", s(&model), "--molecules", s(&mols)]);
    assert_eq!(o.status.code(), Some(1));
}
