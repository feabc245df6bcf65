use std::path::Path;

use local_dsm_cli::checkpoint::Checkpoint;
use local_dsm_cli::config::ExperimentConfig;
use local_dsm_cli::output::{read_metrics, CSV_HEADER, METRICS_CSV, METRICS_JSONL};
use local_dsm_cli::presets::{self, PRESETS};
use local_dsm_cli::run::{load_run_config, run_diag, run_eval, run_sample, run_train};
use local_dsm_cli::resolve_config;

fn small(name: &str, extra: &[&str]) -> ExperimentConfig {
    let mut sets: Vec<String> = [
        "train.batch=16",
        "train.steps=4",
        "train.checkpoint_every=2",
        "model.hidden=[8,8]",
        "eval.mmd_every=0",
        "eval.sample_count=24",
        "eval.reference_count=24",
        "eval.reverse_steps=10",
        "eval.elbo_count=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    sets.extend(extra.iter().map(|s| s.to_string()));
    presets::preset(name).unwrap().with_overrides(&sets).unwrap()
}

fn losses(dir: &Path) -> Vec<(u64, f64)> {
    read_metrics(&dir.join(METRICS_JSONL))
        .unwrap()
        .into_iter()
        .filter(|r| r.name == "loss")
        .map(|r| (r.step, r.value))
        .collect()
}

#[test]
fn presets_validate_and_roundtrip_through_json() {
    for name in PRESETS {
        let cfg = presets::preset(name).unwrap();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
    assert!(presets::preset("cifar10").is_err());
}

#[test]
fn overrides_set_nested_fields_and_reject_unknown_ones() {
    let cfg = small("checkerboard", &["train.lr=0.003", "schedule.lambda=0.02", "objective.kind=ism_elbo"]);
    assert_eq!(cfg.train.lr, 0.003);
    assert_eq!(cfg.schedule.lambda, 0.02);
    assert_eq!(cfg.model.hidden, vec![8, 8]);
    let base = presets::checkerboard();
    assert!(base.with_overrides(&["train.no_such_field=1".into()]).is_err());
    assert!(base.with_overrides(&["train.lr".into()]).is_err());
    assert!(base.with_overrides(&["objective.kind=not_an_objective".into()]).is_err());
}

#[test]
fn hash_ignores_step_count_only() {
    let a = small("checkerboard", &[]);
    let b = small("checkerboard", &["train.steps=40"]);
    let c = small("checkerboard", &["train.seed=1"]);
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn resolve_config_prefers_file_and_requires_a_source() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, small("ips", &[]).to_json_pretty()).unwrap();
    let cfg = resolve_config(Some(&path), Some("checkerboard"), &["train.seed=3".into()]).unwrap();
    assert_eq!(cfg.process.dim(), 10);
    assert_eq!(cfg.train.seed, 3);
    assert!(resolve_config(None, None, &[]).is_err());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(small("active_swimmer", &[]), dir.path(), None).unwrap();
    let first = dir.path().join(Checkpoint::file_name(4));
    let ck = Checkpoint::load(&first).unwrap();
    assert_eq!(ck, out.checkpoint);
    let second = dir.path().join("again.json");
    ck.save(&second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(ck.arrays.iter().map(|a| a.values.len()).sum::<usize>(), out.model.num_params());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    run_train(small("checkerboard", &["train.steps=6"]), &full, None).unwrap();
    run_train(small("checkerboard", &[]), &part, None).unwrap();
    let resumed = run_train(
        small("checkerboard", &["train.steps=6"]),
        &part,
        Some(&part.join(Checkpoint::file_name(4))),
    )
    .unwrap();
    assert_eq!(losses(&full), losses(&part));
    let a = std::fs::read(full.join(Checkpoint::file_name(6))).unwrap();
    let b = std::fs::read(part.join(Checkpoint::file_name(6))).unwrap();
    assert_eq!(a, b);
    assert_eq!(resumed.steps, 6);
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    run_train(small("checkerboard", &[]), dir.path(), None).unwrap();
    let other = small("checkerboard", &["train.steps=6", "schedule.lambda=0.02"]);
    let err = run_train(other, &dir.path().join("x"), Some(&dir.path().join(Checkpoint::file_name(4))));
    assert!(err.is_err());
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(small("ips", &["train.steps=0", "eval.mmd_every=1"]), dir.path(), None).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(out.checkpoint.step, 0);
    assert!(dir.path().join(Checkpoint::file_name(0)).exists());
    assert!(read_metrics(&dir.path().join(METRICS_JSONL)).unwrap().is_empty());
}

#[test]
fn metrics_carry_provenance_and_mirror_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("checkerboard", &["eval.mmd_every=2"]);
    let hash = cfg.hash();
    run_train(cfg, dir.path(), None).unwrap();
    let recs = read_metrics(&dir.path().join(METRICS_JSONL)).unwrap();
    for r in &recs {
        assert_eq!(r.meta["config_hash"], serde_json::json!(hash));
        assert_eq!(r.meta["seed"], serde_json::json!(0));
        assert!(r.wall_seconds.is_none());
    }
    let names: Vec<&str> = recs.iter().map(|r| r.name.as_str()).collect();
    for want in ["loss", "mmd2", "elbo", "bpd"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), recs.len());
    let stored = load_run_config(&dir.path().join("config.json")).unwrap();
    assert_eq!(stored.hash(), hash);
}

#[test]
fn sample_eval_and_diag_commands_produce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("active_swimmer", &["eval.t_grid=[1.0,2.0]"]);
    run_train(cfg.clone(), dir.path(), None).unwrap();
    let ck = dir.path().join(Checkpoint::file_name(4));
    let samples = run_sample(cfg.clone(), &ck, dir.path()).unwrap();
    let text = std::fs::read_to_string(&samples).unwrap();
    assert_eq!(text.lines().next(), Some("t,dim0,dim1"));
    assert_eq!(text.lines().count(), 1 + 2 * 24);
    let name = samples.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("samples_pf_ode_step00000004_seed0_"), "{name}");
    let evals = run_eval(cfg.clone(), &ck, dir.path()).unwrap();
    assert_eq!(evals.iter().filter(|r| r.name == "mmd2").count(), 2);
    let diag_cfg = cfg
        .with_overrides(&["diag.inputs=20".into(), "diag.t_grid=[1.0]".into(), "diag.kl_inputs=10".into()])
        .unwrap();
    let diag = run_diag(diag_cfg, &dir.path().join("diag")).unwrap();
    assert!(diag.iter().any(|r| r.name == "mean_error"));
}

#[test]
fn parameter_average_is_checkpointed_and_optional() {
    let dir = tempfile::tempdir().unwrap();
    let with = run_train(small("checkerboard", &[]), &dir.path().join("a"), None).unwrap();
    let ema = with.checkpoint.ema.as_ref().expect("presets keep an average");
    assert_eq!(ema.as_slice(), with.eval_model.params());
    assert_ne!(with.eval_model.params(), with.model.params());
    let without = run_train(small("checkerboard", &["train.ema_decay=null"]), &dir.path().join("b"), None).unwrap();
    assert!(without.checkpoint.ema.is_none());
    assert_eq!(without.eval_model.params(), without.model.params());
    assert!(small("checkerboard", &["train.ema_decay=1.0"]).validate().is_err());
}
