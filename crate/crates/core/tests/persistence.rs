use std::path::Path;

use fastadv::checkpoint::{self, Manifest};
use fastadv::config::ExperimentConfig;
use fastadv::data::{encode_idx, load_idx, parse_idx_images};
use fastadv::model::{ModelParams, ModelSpec};
use fastadv::records::{read_jsonl, RecordWriter, RECORDS_CSV};
use fastadv::trainer::RunRecord;
use fastadv::Error;
use proptest::prelude::*;

fn spec() -> ModelSpec {
    ModelSpec::new(7, vec![5, 4], 3).unwrap()
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut p = ModelParams::<f64>::init(&spec(), 3);
    p.weight_mut(0).data_mut()[0] = f64::MIN_POSITIVE / 3.0;
    p.bias_mut(1).data_mut()[2] = -0.0;
    checkpoint::save(&p, &path).unwrap();
    let q: ModelParams<f64> = checkpoint::load(&path).unwrap();
    let bits = |m: &ModelParams<f64>| m.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&p), bits(&q));
    assert_eq!(std::fs::read(&path).unwrap(), checkpoint::encode(&q));

    let p32: ModelParams<f32> = p.cast();
    checkpoint::save(&p32, &path).unwrap();
    let q32: ModelParams<f32> = checkpoint::load(&path).unwrap();
    assert_eq!(p32, q32);
}

#[test]
fn corrupt_and_foreign_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let bytes = checkpoint::encode(&ModelParams::<f64>::init(&spec(), 0));

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    std::fs::write(&path, &flipped).unwrap();
    let err = checkpoint::load::<f64>(&path).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");

    let mut versioned = bytes.clone();
    versioned[8] = 9;
    std::fs::write(&path, &versioned).unwrap();
    let err = checkpoint::load::<f64>(&path).unwrap_err();
    assert!(err.to_string().contains("version 9"), "{err}");

    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(matches!(checkpoint::load::<f64>(&path), Err(Error::Format { .. })));
    std::fs::write(&path, b"not a checkpoint at all, just some text").unwrap();
    assert!(checkpoint::load::<f64>(&path).unwrap_err().to_string().contains("magic"));

    std::fs::write(&path, &bytes).unwrap();
    let other = ModelSpec::new(7, vec![5], 3).unwrap();
    assert!(matches!(checkpoint::load_expecting::<f64>(&path, &other), Err(Error::SpecMismatch(_))));
}

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = Manifest {
        seed: 4,
        epoch: 12,
        config_hash: checkpoint::hex_digest(b"[run]\n"),
        averaged: true,
        spec: spec(),
        precision: "f64".into(),
    };
    checkpoint::save_manifest(&m, &path).unwrap();
    assert_eq!(checkpoint::load_manifest(&path).unwrap(), m);
    assert_eq!(m.config_hash.len(), 64);
}

#[test]
fn idx_files_load_and_truncation_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 4) as u8).collect();
    let (img, lab) = encode_idx(4, 5, &pixels, &[2, 0, 1]);
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, &img).unwrap();
    std::fs::write(&lp, &lab).unwrap();
    let d = load_idx(&ip, &lp).unwrap();
    assert_eq!((d.len(), d.dim(), d.classes()), (3, 20, 3));
    assert_eq!(d.features().data()[1], 4.0 / 255.0);
    assert_eq!(d.labels(), &[2, 0, 1]);

    match parse_idx_images(&img[..img.len() - 1], Path::new("x")) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, img.len() as u64 - 1),
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut bad = img.clone();
    bad[3] = 0x01;
    assert!(parse_idx_images(&bad, Path::new("x")).unwrap_err().to_string().contains("magic"));
}

fn record(epoch: usize) -> RunRecord {
    RunRecord {
        epoch,
        lr: 0.1,
        train_clean_acc: 0.5,
        train_robust_acc: 1.0 / 3.0,
        delta_ratio_mean: 0.75,
        eval_clean_acc: 0.9,
        eval_attack: "pgd10".into(),
        eval_robust_acc: 0.4,
        ce_loss: 0.7,
        reg_loss: 0.01,
        wa_updates_applied: 3,
        wa_updates_skipped: 1,
        wall_seconds: 0.0,
    }
}

#[test]
fn records_mirror_csv_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = RecordWriter::create(dir.path()).unwrap();
    for e in 1..=3 {
        w.append(&record(e)).unwrap();
    }
    let csv = std::fs::read_to_string(dir.path().join(RECORDS_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], RunRecord::CSV_COLUMNS.join(","));
    assert!(lines.iter().all(|l| l.split(',').count() == RunRecord::CSV_COLUMNS.len()));
    let back = read_jsonl(&dir.path().join("records.jsonl")).unwrap();
    assert_eq!(back, (1..=3).map(record).collect::<Vec<_>>());
}

#[test]
fn config_errors_carry_line_numbers() {
    let err = ExperimentConfig::parse("[train]\nepochs = 3\n\n[wa]\nkind = ema\ntua = 0.9\n").unwrap_err();
    assert!(matches!(err, Error::Config { line: 6, .. }), "{err}");
    let err = ExperimentConfig::parse("[train]\nepochs = three\n").unwrap_err();
    assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    let err = ExperimentConfig::parse("[train]\nepochs = 3\nepochs = 4\n").unwrap_err();
    assert!(err.to_string().contains("duplicate"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn resolved_config_round_trips(
        eps_num in 1u32..32,
        seed in any::<u64>(),
        lambda in 0.0..40.0f64,
        tau in 0.5..0.9999f64,
        epochs in 1usize..50,
        init in prop::sample::select(vec!["zero", "normal_half", "uniform_full", "bernoulli_half", "atta_prior", "pgi_momentum"]),
        wa in prop::sample::select(vec!["none", "ema", "auto_ema"]),
        cyclic in any::<bool>(),
    ) {
        let mut text = format!(
            "[run]\nseed = {seed}\n[attack]\nepsilon = {eps_num}/255\ninit = {init}\n[regularizer]\nlambda = {lambda}\n[train]\nepochs = {epochs}\n"
        );
        if cyclic {
            text.push_str("lr_schedule = cyclic\n");
        } else if epochs > 1 {
            text.push_str(&format!("milestones = {}\n", epochs - 1));
        }
        text.push_str(&format!("[wa]\nkind = {wa}\n"));
        if wa != "none" {
            text.push_str(&format!("tau = {tau}\n"));
        }
        let c = ExperimentConfig::parse(&text).unwrap();
        let again = ExperimentConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_text(), c.to_text());
    }
}
