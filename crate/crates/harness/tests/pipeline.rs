//! Library-level harness contracts: tasks, training, checkpoints, probe, ablation.

use lpcsm::ablate::ablate;
use lpcsm::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointError};
use lpcsm::config::{RunConfig, TrainSettings};
use lpcsm::probe::{probe_delayed_identifier, ProbeSpec};
use lpcsm::tasks::{SyntheticTask, TaskConfig, TaskKind};
use lpcsm::train::{initial_params, train, CsvLog, CSV_HEADER};
use lpcsm_core::optim::SgdConfig;
use lpcsm_core::ModelConfig;

fn run() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            vocab_size: 12,
            width: 8,
            layers: 2,
            window: 6,
            heads: 2,
            chunk_size: 4,
            max_seq_len: 32,
            ..ModelConfig::default()
        },
        task: TaskConfig {
            kind: TaskKind::KeyRecall,
            seq_len: 20,
            key_len: 3,
            distractor_len: 5,
            corpus: None,
        },
        optimizer: SgdConfig { lr: 0.05, ..SgdConfig::default() },
        train: TrainSettings { batch_size: 3, final_window: 4 },
        ..RunConfig::default()
    }
}

#[test]
fn batches_regenerate_from_seed() {
    let task = SyntheticTask {
        kind: TaskKind::Copy,
        vocab_size: 16,
        seq_len: 10,
        key_len: 4,
        distractor_len: 0,
        seed: 7,
    };
    assert_eq!(task.make_batch(4).unwrap(), task.make_batch(4).unwrap());
    let other = SyntheticTask { seed: 8, ..task };
    assert_ne!(task.make_batch(4).unwrap(), other.make_batch(4).unwrap());

    let recall = SyntheticTask { kind: TaskKind::KeyRecall, distractor_len: 0, key_len: 3, ..task };
    let s = &recall.make_batch(1).unwrap()[0];
    // header, key, trigger, key
    assert_eq!(&s.inputs[2..], &[13, s.inputs[3], s.inputs[4], s.inputs[5], 14, s.inputs[3], s.inputs[4], s.inputs[5]]);
}

#[test]
fn metrics_log_is_reproducible() {
    let cfg = run();
    let log = |seed| {
        let mut buf = Vec::new();
        let mut csv = CsvLog::new(&mut buf).unwrap();
        train(&cfg, 5, seed, None, |m| {
            let mut m = *m;
            m.tokens_per_second = 0.0;
            csv.row(&m).unwrap();
            Ok(())
        })
        .unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = log(1);
    assert_eq!(a, log(1));
    assert_ne!(a, log(2));
    assert!(a.starts_with(CSV_HEADER));
    assert_eq!(a.lines().count(), 6);
}

#[test]
fn checkpoint_files() {
    let cfg = run();
    let out = train(&cfg, 3, 2, None, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&out.store, &cfg.model, &path).unwrap();
    let (store, model) = load_checkpoint(&path).unwrap();
    assert_eq!(store, out.store);
    assert_eq!(model, cfg.model);

    let mut wider = cfg.model.clone();
    wider.width = 12;
    assert!(matches!(load_checkpoint_for(&path, &wider), Err(CheckpointError::ConfigMismatch { .. })));
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent")),
        Err(CheckpointError::Io { .. })
    ));

    let zero = train(&cfg, 0, 2, None, |_| Ok(())).unwrap();
    assert_eq!(zero.store, initial_params(&cfg, 2).unwrap());
}

#[test]
fn probe_contract() {
    let cfg = run();
    let store = initial_params(&cfg, 0).unwrap();
    let spec = ProbeSpec { prompts: 3, prompt_len: 30, distractor_len: 12, key_len: 4, seed: 1 };
    let a = probe_delayed_identifier(&store, &cfg.model, &spec).unwrap();
    assert_eq!(a, probe_delayed_identifier(&store, &cfg.model, &spec).unwrap());
    assert!(a.key_ce >= 0.0);
    let ln_v = (cfg.model.vocab_size as f64).ln();
    assert!((a.key_ce - ln_v).abs() <= 0.1 * ln_v, "{} vs {ln_v}", a.key_ce);
    assert_eq!(a.fingerprint.len(), 64);

    assert!(probe_delayed_identifier(&store, &cfg.model, &ProbeSpec { key_len: 0, ..spec }).is_err());
    assert!(probe_delayed_identifier(&store, &cfg.model, &ProbeSpec { prompt_len: 33, ..spec }).is_err());
    let mut other = cfg.model.clone();
    other.alpha_n = 0.25;
    assert_ne!(a.fingerprint, lpcsm::probe::fingerprint(&other));
}

#[test]
fn ablation_tables() {
    let cfg = run();
    let only_full = ablate(&cfg, &[], 3, 4).unwrap();
    assert_eq!(only_full.rows.len(), 1);
    assert_eq!(only_full.rows[0].delta_pct, 0.0);

    let table = ablate(&cfg, &lpcsm::ablate::all_toggles(), 3, 4).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert_eq!(table.rows[0].final_lm, only_full.rows[0].final_lm);
    assert!(table.rows.iter().all(|r| r.final_lm.is_finite()));
    assert_eq!(table.to_string().lines().count(), 7);

    assert!(ablate(&cfg, &["bogus"], 1, 0).is_err());
}

#[test]
fn zero_gain_matches_disabled_transport_in_training() {
    let mut zero = run();
    zero.model.alpha_n = 0.0;
    let mut off = run();
    off.model.toggles.ont = false;
    let a = ablate(&zero, &[], 20, 6).unwrap();
    let b = ablate(&off, &[], 20, 6).unwrap();
    assert_eq!(a.rows[0].final_lm.to_bits(), b.rows[0].final_lm.to_bits());
    assert_eq!(a.rows[0].final_ratio.to_bits(), b.rows[0].final_ratio.to_bits());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["copy.toml", "key-recall.toml"] {
        let cfg = RunConfig::load(&dir.join(name)).unwrap();
        assert_eq!(cfg.model.vocab_size, 32, "{name}");
    }
}
