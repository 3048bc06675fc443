use std::path::Path;
use std::process::Command;

use sqlaug_cli::commands::{self, DomainSet};
use sqlaug_cli::config::RunConfig;
use sqlaug_cli::manifest::Manifest;
use sqlaug_core::toy::ToyConfig;

/// A toy run small enough for a unit-test budget.
fn tiny(dir: &Path) -> RunConfig {
    let mut cfg = commands::write_toy(
        dir,
        &ToyConfig {
            pairs_per_domain: 20,
            zipf: 2.0,
            seed: 5,
        },
    )
    .unwrap();
    cfg.sampler.train.epochs = 2;
    cfg.generator.train.epochs = 1;
    cfg.parser.train.epochs = 2;
    cfg.synthesis.s1 = 4;
    cfg.synthesis.s2 = 2;
    cfg.synthesis.generator_beam = 4;
    cfg.student.sweep = vec![(0.3, 0.1), (0.0, 0.0)];
    cfg.save(&dir.join("config.toml")).unwrap();
    RunConfig::load(&dir.join("config.toml")).unwrap()
}

fn manifest(cfg: &RunConfig, rel: &str) -> Manifest {
    Manifest::load(&cfg.output_dir().join(rel)).unwrap()
}

#[test]
fn full_run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let runs: Vec<RunConfig> = [a.path(), b.path()].iter().map(|d| tiny(d)).collect();
    for cfg in &runs {
        commands::train_components(cfg).unwrap();
        commands::synthesize(cfg, DomainSet::TrainDev).unwrap();
        commands::train_student(cfg, None).unwrap();
    }
    for rel in [
        "components/manifest.json",
        "augmented/train+dev.manifest.json",
        "student/manifest.json",
    ] {
        let (x, y) = (manifest(&runs[0], rel), manifest(&runs[1], rel));
        assert!(!x.outputs.is_empty());
        assert_eq!(x, y, "{rel}");
    }
}

#[test]
fn modes_restrict_domains_and_attrition_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    commands::train_components(&cfg).unwrap();
    let data = commands::Data::load(&cfg).unwrap();
    let ids = |v: &[sqlaug_core::schema::SchemaGraph]| v.iter().map(|s| s.db_id.clone()).collect::<Vec<_>>();
    for (set, expected) in [
        (DomainSet::Train, ids(&data.train_domains)),
        (DomainSet::Dev, ids(&data.dev_domains)),
    ] {
        let (file, report) = commands::synthesize(&cfg, set).unwrap();
        let got: Vec<_> = report.attrition.iter().map(|a| a.db_id.clone()).collect();
        assert_eq!(got, expected);
        assert!(file.examples.iter().all(|e| expected.contains(&e.db_id)));
        for a in &report.attrition {
            assert!(a.after_beam >= a.after_pred && a.after_pred >= a.after_dedup && a.after_dedup >= a.after_no_para);
        }
        assert!(cfg.output_dir().join(format!("augmented/{}.json", set.name())).exists());
    }
    assert_eq!(data.dev_domains.len(), 1);
}

#[test]
fn changed_components_config_is_a_checkpoint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    commands::train_components(&cfg).unwrap();
    cfg.parser.train.epochs += 1;
    let e = commands::synthesize(&cfg, DomainSet::Train).unwrap_err();
    assert!(format!("{e:#}").contains("checkpoint mismatch"), "{e:#}");
    // Synthesis settings are not part of the components.
    cfg.parser.train.epochs -= 1;
    cfg.synthesis.s1 += 1;
    commands::synthesize(&cfg, DomainSet::Train).unwrap();
}

#[test]
fn zero_weight_student_reports_against_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.student.sweep = vec![(0.0, 0.0)];
    commands::train_components(&cfg).unwrap();
    commands::synthesize(&cfg, DomainSet::TrainDev).unwrap();
    let report = commands::train_student(&cfg, None).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].student, report.teacher);
    assert_eq!(report.rows[0].delta_points, 0.0);
    let teacher = std::fs::read(cfg.output_dir().join("components/parser.json")).unwrap();
    let student = std::fs::read(cfg.output_dir().join("student/a0-0/parser.json")).unwrap();
    assert_eq!(teacher, student);
}

#[test]
fn analyze_reports_bad_inputs_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = dir.path().join("stats");
    let report = commands::analyze(&cfg.schemas_path(), &[cfg.train_path(), bad, cfg.dev_path()], Some(&out)).unwrap();
    assert_eq!(report.datasets.len(), 2);
    assert_eq!(report.errors.len(), 1);
    assert!(report.table().contains("| train | dev |"));
    assert!(out.join("stats.csv").exists());
}

#[test]
fn binary_rejects_missing_inputs_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    std::fs::remove_file(cfg.train_path()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sqlaug"))
        .args(["train-components", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error: config: train path"), "{stderr}");
    assert!(!cfg.output_dir().exists());
}

#[test]
fn binary_writes_toy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sqlaug"))
        .args(["toy", "--pairs-per-domain", "10"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let cfg = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    cfg.validate().unwrap();
}
