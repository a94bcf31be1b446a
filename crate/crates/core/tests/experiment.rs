use std::path::Path;
use std::process::Command;

use headbias::data::{ClassSplit, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use headbias::experiment::*;
use headbias::model::{read_head, Checkpoint};
use headbias::unlearning::{bias_shift, Method, MethodParams};
use headbias::Error;

/// A small blobs task so the runner tests stay quick.
fn small_config(dir: &Path, methods: &[Method]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(4, &[1, 3], methods).unwrap();
    cfg.dataset = DatasetSpec::Blobs(BlobSpec {
        classes: 5,
        per_class: 40,
        dim: 6,
        separation: 6.0,
    });
    cfg.model.hidden = vec![8];
    cfg.train.epochs = 5;
    for m in &mut cfg.methods {
        m.params = match m.params.clone() {
            MethodParams::FineTune { .. } => MethodParams::FineTune { epochs: 2 },
            MethodParams::Retrain { .. } => MethodParams::Retrain { epochs: 2 },
            other => other,
        };
    }
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn report_has_reference_rows_and_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[Method::BiasShift, Method::TsBgrm, Method::LbHr]);
    let report = run_experiment(&cfg, Execution::Sequential).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["original", "retrain", "biasshift", "ts-bgrm", "lb-hr"]);
    assert!(report.rows.iter().all(|r| r.status == RowStatus::Ok));
    assert_eq!(report.row("retrain").unwrap().result.as_ref().unwrap().rtr, Some(100.0));
    assert!(report.row("original").unwrap().result.as_ref().unwrap().rtr.is_none());
    assert!(report.row("biasshift").unwrap().result.as_ref().unwrap().rtr.is_some());

    for f in [CSV_FILE, JSON_FILE] {
        assert!(dir.path().join(f).exists());
    }
    let ckpts = dir.path().join("checkpoints");
    for f in [
        "original.ckpt",
        "retrain.ckpt",
        "01-biasshift.ckpt",
        "02-ts-bgrm.ckpt",
        "03-lb-hr.ckpt",
    ] {
        assert!(ckpts.join(f).exists(), "{f}");
    }
    let audit = audit_checkpoint(ckpts.join("01-biasshift.ckpt"), &[1, 3]).unwrap();
    assert!(audit.report.leakage_exact_match);
    assert_eq!(audit.verdict, Verdict::ShortcutSuspected);
}

#[test]
fn csv_and_json_carry_identical_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[Method::BiasShift, Method::FineTune]);
    let report = run_experiment(&cfg, Execution::Sequential).unwrap();
    let csv_rows = read_csv(dir.path().join(CSV_FILE)).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(JSON_FILE)).unwrap()).unwrap();
    let json_rows = json["rows"].as_array().unwrap();
    assert_eq!(csv_rows.len(), json_rows.len());
    assert_eq!(csv_rows.len(), report.rows.len());
    for (c, j) in csv_rows.iter().zip(json_rows) {
        let r = &j["result"];
        assert_eq!(c.method, j["method"].as_str().unwrap());
        assert_eq!(c.retain_acc, r["retain_acc"].as_f64());
        assert_eq!(c.forget_acc, r["forget_acc"].as_f64());
        assert_eq!(c.time_s, r["elapsed_seconds"].as_f64());
        assert_eq!(c.rtr, r["rtr"].as_f64());
        assert_eq!(c.bsc, r["bias"]["bsc"].as_f64());
        assert_eq!(c.mbg, r["bias"]["mbg"].as_f64());
        assert_eq!(c.mbs, r["bias"]["mbs"].as_f64());
        assert_eq!(c.leak_match, r["bias"]["leakage_exact_match"].as_bool());
        assert_eq!(c.suspected, r["bias_dominated_suspected"].as_bool());
    }
    for (c, row) in csv_rows.iter().zip(&report.rows) {
        assert_eq!(c, &row.csv_row());
    }
}

#[test]
fn runs_are_deterministic_and_parallel_blanks_timing() {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let methods = [Method::FineTune, Method::BiasShift, Method::TsBgm];
    let a = run_experiment(&small_config(a_dir.path(), &methods), Execution::Sequential).unwrap();
    let b = run_experiment(&small_config(b_dir.path(), &methods), Execution::Parallel).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let (rx, ry) = (x.result.as_ref().unwrap(), y.result.as_ref().unwrap());
        assert_eq!(rx.retain_acc.to_bits(), ry.retain_acc.to_bits());
        assert_eq!(rx.forget_acc.to_bits(), ry.forget_acc.to_bits());
        assert_eq!(rx.bias, ry.bias);
    }
    for row in &b.rows[2..] {
        let r = row.result.as_ref().unwrap();
        assert!(r.elapsed_seconds.is_none() && r.rtr.is_none());
    }
    assert_eq!(b.execution, "parallel");
    let bytes = |d: &Path| std::fs::read(d.join("checkpoints/01-ft.ckpt")).unwrap();
    assert_eq!(bytes(a_dir.path()), bytes(b_dir.path()));
}

#[test]
fn failing_method_becomes_a_failed_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &[Method::NegGradPlus, Method::BiasShift]);
    cfg.methods[0].params = MethodParams::NegGradPlus {
        epochs: 50,
        retention_weight: 0.0,
    };
    cfg.methods[0].eta = f64::MAX;
    let report = run_experiment(&cfg, Execution::Sequential).unwrap();
    let failed = report.row("neggrad+").unwrap();
    assert_eq!(failed.status, RowStatus::Failed);
    assert!(failed.result.is_none());
    assert!(failed.error.as_ref().unwrap().contains("numeric"));
    assert_eq!(report.row("biasshift").unwrap().status, RowStatus::Ok);
    let csv_rows = read_csv(dir.path().join(CSV_FILE)).unwrap();
    assert_eq!(csv_rows[2].status, RowStatus::Failed);
    assert_eq!(csv_rows[2].retain_acc, None);
}

#[test]
fn bad_config_aborts_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &[Method::FineTune]);
    cfg.forgotten = vec![7];
    assert!(matches!(
        run_experiment(&cfg, Execution::Sequential),
        Err(Error::Config(_))
    ));
    assert!(!dir.path().join(CSV_FILE).exists());
}

#[test]
fn dump_bias_round_trips_the_head() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[]);
    let p = prepare(&cfg).unwrap();
    let shifted = bias_shift(&p.origin, &p.split, 20.0).unwrap().model;
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(shifted.clone(), [1, 3]).save(&path).unwrap();
    let rows = dump_bias(&path, None).unwrap();
    assert_eq!(rows.len(), 5);
    for (r, b) in rows.iter().zip(&shifted.head.bias) {
        assert_eq!(r.bias.to_bits(), b.to_bits());
    }
    let max_v = rows.iter().filter(|r| r.in_v).map(|r| r.bias).fold(f64::MIN, f64::max);
    let min_r = rows.iter().filter(|r| !r.in_v).map(|r| r.bias).fold(f64::MAX, f64::min);
    assert!(max_v < min_r);
    let overridden = dump_bias(&path, Some(&[0])).unwrap();
    assert_eq!(overridden.iter().filter(|r| r.in_v).count(), 1);
    assert!(dump_bias(&path, Some(&[9])).is_err());
}

#[test]
fn original_model_bias_scores_sit_near_fifty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::desk(0, &[2, 5, 7], &[]).unwrap()
    };
    let p = prepare(&cfg).unwrap();
    let path = dir.path().join("o.ckpt");
    Checkpoint::new(p.origin.clone(), [2, 5, 7]).save(&path).unwrap();
    let a = audit_checkpoint(&path, &[2, 5, 7]).unwrap();
    assert!((40.0..=60.0).contains(&a.report.mbg), "{}", a.report.mbg);
    assert!((40.0..=60.0).contains(&a.report.mbs), "{}", a.report.mbs);
    assert_eq!(a.report.bias_vector, read_head(&path).unwrap().head.bias);
}

#[test]
fn audit_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let e = audit_checkpoint(&missing, &[0]).unwrap_err();
    assert!(e.to_string().contains("nope.ckpt"));
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"HBCK\x01\x00").unwrap();
    assert!(matches!(
        audit_checkpoint(&bad, &[0]),
        Err(Error::Format { offset: Some(_), .. })
    ));
}

#[test]
fn sweep_traces_the_bias_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &[]);
    cfg.sweep = SweepSpec {
        start: -5.0,
        stop: 40.0,
        step: 5.0,
    };
    let points = sweep_beta(&cfg).unwrap();
    assert_eq!(points.len(), 10);
    assert_eq!(points.last().unwrap().forget_acc, 0.0);
    for w in points.windows(2) {
        assert!(w[1].forget_acc <= w[0].forget_acc);
        assert!(w[1].retain_acc >= w[0].retain_acc);
    }
}

fn write_idx(dir: &Path, name: &str, images: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [images.len() as u32, 2, 2] {
        img.extend_from_slice(&d.to_be_bytes());
    }
    for i in images {
        img.extend_from_slice(i);
    }
    let mut lab = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    let (ip, lp) = (dir.join(format!("{name}-images")), dir.join(format!("{name}-labels")));
    std::fs::write(&ip, img).unwrap();
    std::fs::write(&lp, lab).unwrap();
    (ip, lp)
}

#[test]
fn cli_runs_an_idx_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<[u8; 4]> = (0..30)
        .map(|i| {
            let mut px = [0u8; 4];
            px[i % 3] = 255;
            px[3] = (i * 7 % 50) as u8;
            px
        })
        .collect();
    let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
    write_idx(dir.path(), "train", &images, &labels);
    write_idx(dir.path(), "test", &images, &labels);
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        r#"
seed = 1
forgotten = [2]
[dataset]
kind = "idx"
train_images = "train-images"
train_labels = "train-labels"
test_images = "test-images"
test_labels = "test-labels"
[model]
hidden = [4]
[train]
epochs = 30
eta = 0.5
batch_size = 5
[[method]]
name = "biasshift"
[sweep]
start = 0.0
stop = 2.0
step = 1.0
"#,
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_headbias");
    let out = dir.path().join("out");
    let run = Command::new(exe)
        .args(["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("biasshift"));
    let rows = read_csv(out.join(CSV_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].forget_acc, Some(0.0));

    let ckpt = out.join("checkpoints/01-biasshift.ckpt");
    let audit = Command::new(exe)
        .args(["audit", ckpt.to_str().unwrap(), "--forgotten", "2"])
        .output()
        .unwrap();
    assert!(audit.status.success());
    assert!(String::from_utf8_lossy(&audit.stdout).contains("verdict"));

    let dump = Command::new(exe)
        .args(["dump-bias", ckpt.to_str().unwrap()])
        .output()
        .unwrap();
    let text = String::from_utf8(dump.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("class,bias,in_v"));
    assert!(text.lines().nth(3).unwrap().ends_with(",true"));

    let sweep = Command::new(exe)
        .args(["sweep-beta", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(sweep.status.success());
    assert_eq!(String::from_utf8(sweep.stdout).unwrap().lines().count(), 4);

    let missing = Command::new(exe)
        .args([
            "audit",
            dir.path().join("none.ckpt").to_str().unwrap(),
            "--forgotten",
            "0",
        ])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("none.ckpt"));
}

#[test]
fn split_mismatch_in_idx_data_is_reported() {
    // A forgotten class that the IDX labels never reach.
    let dir = tempfile::tempdir().unwrap();
    let (ti, tl) = write_idx(dir.path(), "a", &[[0, 0, 0, 0], [255, 0, 0, 0]], &[0, 1]);
    let mut cfg = ExperimentConfig::desk(0, &[1], &[]).unwrap();
    cfg.forgotten = vec![4];
    cfg.dataset = DatasetSpec::Idx(IdxSpec {
        train_images: ti.clone(),
        train_labels: tl.clone(),
        test_images: ti,
        test_labels: tl,
    });
    assert!(matches!(prepare(&cfg), Err(Error::Split(_))));
    let _ = ClassSplit::new(2, [1]).unwrap();
}
