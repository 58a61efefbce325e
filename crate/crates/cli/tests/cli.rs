use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsnet_core::ensemble::{write_emb1, EmbeddingTable};
use tsnet_core::imgproc::{save_grayscale, RasterImage};
use tsnet_core::metrics::read_report_json;
use tsnet_core::rng::SplitMix64;

fn tsnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Bright block whose horizontal position encodes the class.
fn class_image(class: usize, rng: &mut SplitMix64) -> RasterImage {
    let x0 = class * 5 + rng.below(2);
    RasterImage::from_fn(16, 16, |x, y| {
        let on = x >= x0 && x < x0 + 5 && (3..13).contains(&y);
        let base = if on { 200.0 } else { 30.0 };
        (base + 6.0 * rng.normal()).round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}

/// Writes `per_class` images per class and a manifest; returns the manifest path.
fn dataset(dir: &Path, name: &str, per_class: usize, seed: u64) -> PathBuf {
    let mut rng = SplitMix64::new(seed);
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut csv = String::from("id,path,label,patient_id\n");
    for i in 0..per_class {
        for c in 0..3 {
            let id = format!("{name}{c}_{i}");
            save_grayscale(&class_image(c, &mut rng), dir.join(format!("img/{id}.png"))).unwrap();
            csv += &format!("{id},img/{id}.png,class{c},{name}p{c}_{}\n", i / 2);
        }
    }
    let path = dir.join(format!("{name}.csv"));
    fs::write(&path, csv).unwrap();
    path
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

const FAST: &str = r#"
seed = 5
[train]
learning_rate = 0.001
epochs = 3
batch_size = 8
[data]
classes = ["class0", "class1", "class2"]
train_triplets = 24
val_triplets = 9
"#;

#[test]
fn preprocess_skips_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir_all(&input).unwrap();
    let mut rng = SplitMix64::new(1);
    for i in 0..3 {
        let img = RasterImage::from_fn(40, 40, |x, y| {
            let d = ((x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt();
            if d < 12.0 { 180 + rng.below(40) as u8 } else { rng.below(20) as u8 }
        })
        .unwrap();
        save_grayscale(&img, input.join(format!("img{i}.png"))).unwrap();
    }
    fs::write(input.join("broken.png"), b"not an image").unwrap();

    let run = |out: &Path| tsnet(&["preprocess", "--input", s(&input), "--out", s(out)]);
    let out1 = dir.path().join("out1");
    let o = run(&out1);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let log = fs::read_to_string(out1.join("preprocess_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("id,crop_x,crop_y,crop_width,crop_height,alpha,beta,warnings\n"));
    let skipped = fs::read_to_string(out1.join("preprocess_skipped.csv")).unwrap();
    assert_eq!(skipped.lines().count(), 2);
    assert!(skipped.contains("broken"));
    assert_eq!(fs::read_dir(out1.join("images")).unwrap().count(), 3);

    let out2 = dir.path().join("out2");
    run(&out2);
    for i in 0..3 {
        let name = format!("images/img{i}.png");
        assert_eq!(fs::read(out1.join(&name)).unwrap(), fs::read(out2.join(&name)).unwrap());
    }
    assert!(fs::read_to_string(out1.join("run_manifest.json")).unwrap().contains("\"seed\": 0"));
}

#[test]
fn preprocess_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty");
    fs::create_dir_all(&input).unwrap();
    let out = dir.path().join("out");
    let o = tsnet(&["preprocess", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("preprocess_log.csv")).unwrap().lines().count(), 1);
}

#[test]
fn config_errors_exit_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nlr = 0.1\n");
    let o = tsnet(&["--config", s(&cfg), "params"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lr"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "[train]\nplateau_factor = 1.5\n");
    let o = tsnet(&["--config", s(&cfg), "params"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("plateau_factor"), "{}", stderr(&o));

    let o = tsnet(&["split", "--manifest", s(&dir.path().join("missing.csv")), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&tsnet(&["no-such-command"])), 2);
}

#[test]
fn split_and_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), "all", 6, 1);
    let out = dir.path().join("out");
    let o = tsnet(&["split", "--manifest", s(&m), "--test-fraction", "0.25", "--folds", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let patients = |f: &str| -> std::collections::BTreeSet<String> {
        fs::read_to_string(out.join(f)).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
    };
    assert!(patients("train.csv").is_disjoint(&patients("test.csv")));
    assert!(patients("folds/fold_0_train.csv").is_disjoint(&patients("folds/fold_0_validation.csv")));

    let o = tsnet(&["triplets", "--manifest", s(&m), "--count", "10", "--out", s(&out), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = fs::read_to_string(out.join("triplets.csv")).unwrap();
    assert_eq!(t.lines().count(), 11);
    assert!(t.starts_with("anchor_id,positive_id,negative_id\n"));
}

fn train_setup(dir: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let m = dataset(dir, "train", 4, 11);
    let cfg = write_config(dir, &format!("{FAST}{extra}\n[paths]\nmanifest = \"train.csv\"\nsupport_manifest = \"train.csv\"\n"));
    (m, cfg)
}

#[test]
fn train_with_zero_learning_rate_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = train_setup(dir.path(), "");
    let out = dir.path().join("out");
    let o = tsnet(&["--config", s(&cfg), "--out", s(&out), "train", "--learning-rate", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hist = fs::read_to_string(out.join("history.csv")).unwrap();
    let rows: Vec<Vec<String>> = hist.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[1], rows[0][1]);
        assert_eq!(r[2], rows[0][2]);
        assert_eq!(r[3], "0");
    }
}

#[test]
fn train_is_reproducible_and_predict_matches_support() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = train_setup(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tsnet(&["--config", s(&cfg), "--out", s(out), "train"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["model.ckpt", "train_summary.json", "train_triplets.csv", "validation_triplets.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let query = dir.path().join("img/train1_2.png");
    let o = tsnet(&["--config", s(&cfg), "--out", s(&a), "predict", "--image", s(&query)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pred = fs::read_to_string(a.join("predictions.csv")).unwrap();
    let row: Vec<&str> = pred.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "train1_2");
    assert_eq!(row[1], "");
    assert_eq!(row[2], "class1");
    assert!((row[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-6, "{}", row[3]);
    assert_eq!(row[4], "train1_2");

    let test_m = dataset(dir.path(), "test", 3, 99);
    let cfg_eval = write_config(
        dir.path(),
        &format!("{FAST}\n[paths]\nsupport_manifest = \"train.csv\"\ntest_manifest = \"{}\"\ncheckpoint = \"a/model.ckpt\"\n", s(&test_m)),
    );
    let out = dir.path().join("eval");
    let o = tsnet(&["--config", s(&cfg_eval), "--out", s(&out), "evaluate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_report_json(&out.join("metrics.json")).unwrap();
    assert_eq!(report.total, 9);
    for f in ["predictions.csv", "confusion.csv", "per_class.csv", "averages.csv", "roc.csv", "pr.csv", "run_manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn evaluate_hand_built_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let truth = ["a", "a", "a", "b", "b", "c", "c", "c"];
    let pred = ["a", "b", "a", "b", "b", "c", "a", "c"];
    let mut csv = String::from("sample_id,true_label,pred_label,similarity,nearest_support_id\n");
    for (i, (t, p)) in truth.iter().zip(&pred).enumerate() {
        csv += &format!("q{i},{t},{p},0.5,s{i}\n");
    }
    let path = dir.path().join("preds.csv");
    fs::write(&path, csv).unwrap();
    let out = dir.path().join("out");
    let o = tsnet(&["evaluate", "--predictions", s(&path), "--classes", "a,b,c", "--format", "json", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_report_json(&out.join("metrics.json")).unwrap();
    assert_eq!(r.confusion, vec![vec![2, 1, 0], vec![0, 2, 0], vec![1, 0, 2]]);
    assert_eq!(r.accuracy.value, 6.0 / 8.0);
    // class a: tp 2, fp 1, fn 1; b: tp 2, fp 1, fn 0; c: tp 2, fp 0, fn 1.
    let prec = [2.0 / 3.0, 2.0 / 3.0, 1.0];
    let rec = [2.0 / 3.0, 1.0, 2.0 / 3.0];
    for c in 0..3 {
        assert_eq!(r.per_class[c].precision.value, prec[c]);
        assert_eq!(r.per_class[c].recall.value, rec[c]);
    }
    assert!((r.macro_avg.precision.value - prec.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert_eq!(r.micro.f1.value, r.accuracy.value);
    assert!(!r.auc_macro.defined);
}

#[test]
fn crossval_two_folds() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), "train", 10, 21);
    let cfg = write_config(
        dir.path(),
        &format!("{FAST}patient_aware = false\n[paths]\nmanifest = \"train.csv\"\n"),
    );
    let out = dir.path().join("cv");
    let o = tsnet(&["--config", s(&cfg), "--out", s(&out), "crossval", "--folds", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("crossval.json")).unwrap()).unwrap();
    assert_eq!(v["folds"].as_array().unwrap().len(), 2);
    let accs: Vec<f64> = v["folds"].as_array().unwrap().iter().map(|f| f["accuracy"].as_f64().unwrap()).collect();
    let mean = v["summary"]["accuracy"]["mean"].as_f64().unwrap();
    assert!((mean - (accs[0] + accs[1]) / 2.0).abs() < 1e-12);
    assert!(out.join("fold_1/history.csv").exists());
}

#[test]
fn params_and_embedding_verification() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = String::new();
    for (i, w) in [2048usize, 1024, 1024, 1280, 1280, 2048].iter().enumerate() {
        let t = EmbeddingTable::zeros(*w, &["x"]).unwrap();
        let p = dir.path().join(format!("b{i}.emb"));
        write_emb1(&t, &p, &format!("backbone{i}"), "none").unwrap();
        cfg += &format!("[[branches]]\nkind = \"external_embedding\"\npath = \"b{i}.emb\"\nfeature_width = {w}\n");
    }
    let cfg = write_config(dir.path(), &cfg);
    let o = tsnet(&["--config", s(&cfg), "params"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trainable"], 6_032_896);
    assert_eq!(v["fusion_parameters"], 1_573_376);
    assert_eq!(v["branches"][0]["name"], "backbone0");

    let emb = dir.path().join("b1.emb");
    assert_eq!(code(&tsnet(&["verify-emb", s(&emb)])), 0);
    let mut bytes = fs::read(&emb).unwrap();
    bytes[40] ^= 0x10;
    fs::write(&emb, bytes).unwrap();
    let o = tsnet(&["verify-emb", s(&emb)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}
