//! End-to-end runs of the `dehaze` binary on tiny synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dehaze_core::{read_image, write_image, Domain, Image};

fn dehaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dehaze"))
        .args(args)
        .env("DEHAZE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Smooth colorful test picture on the unit scale.
fn picture(h: usize, w: usize, phase: f64) -> Image {
    Image::from_fn(h, w, Domain::Unit, |c, y, x| {
        let v = (0.11 * y as f64 + 0.07 * x as f64 + phase + c as f64 * 1.3).sin();
        0.5 + 0.4 * v
    })
    .unwrap()
}

fn write_clear_dir(dir: &Path, sizes: &[(usize, usize)]) {
    fs::create_dir_all(dir).unwrap();
    for (i, &(h, w)) in sizes.iter().enumerate() {
        write_image(&dir.join(format!("img{i}.png")), &picture(h, w, i as f64)).unwrap();
    }
}

const TINY_CONFIG: &str = r#"
output_dir = "run"

[data]
train_manifest = "data/manifest.tsv"
val_manifest = "data/manifest.tsv"

[model]
depth = 3
width_divisor = 16

[train]
max_epochs = 1
pretrain_size = [32, 32]
seed = 5
"#;

/// Synthesized data plus a tiny config in `root`; returns the config path.
fn tiny_project(root: &Path) -> PathBuf {
    let clear = root.join("clear_src");
    write_clear_dir(&clear, &[(40, 40), (33, 47), (52, 36)]);
    ok(dehaze(&["synthesize", "--clear", s(&clear), "--out", s(&root.join("data")), "--seed", "1"]));
    let config = root.join("run.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    config
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&dehaze(&["--help"])), 0);
    assert_eq!(code(&dehaze(&["--version"])), 0);
    assert_eq!(code(&dehaze(&["no-such-command"])), 1);
    assert_eq!(code(&dehaze(&["dehaze", "--input", "x"])), 1);
}

#[test]
fn default_config_is_valid_toml() {
    let out = ok(dehaze(&["config"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, &text).unwrap();
    assert!(text.contains("learning_rate = 0.0002"));
    assert!(text.contains("d_update_period = 4"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = dehaze(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn zero_scattering_leaves_images_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let clear = dir.path().join("clear");
    write_clear_dir(&clear, &[(20, 30), (17, 13)]);
    let out = dir.path().join("syn");
    ok(dehaze(&[
        "synthesize", "--clear", s(&clear), "--out", s(&out), "--beta", "0", "0", "--seed", "3",
    ]));
    for i in 0..2 {
        let name = format!("img{i}.png");
        let src = read_image(&clear.join(&name)).unwrap();
        let haze = read_image(&out.join("haze").join(&name)).unwrap();
        let copy = read_image(&out.join("clear").join(&name)).unwrap();
        assert_eq!(haze, src);
        assert_eq!(copy, src);
    }
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 2);

    // Scoring the hazy inputs against the clear images gives a perfect report.
    let report = dir.path().join("report");
    let text = ok(dehaze(&[
        "evaluate", "--identity", "--manifest", s(&out.join("manifest.tsv")), "--out", s(&report),
    ]))
    .stdout;
    let text = String::from_utf8(text).unwrap();
    assert!(text.contains("infinite PSNR"), "{text}");
    let tsv = fs::read_to_string(report.join("metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[3], "inf");
        assert_eq!(cols[4].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn synthesis_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let clear = dir.path().join("clear");
    write_clear_dir(&clear, &[(16, 16), (16, 16)]);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(dehaze(&["synthesize", "--clear", s(&clear), "--out", s(&out), "--seed", seed]));
        fs::read(out.join("haze").join("img1.png")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn manifest_pairs_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    let (haze, clear) = (dir.path().join("h"), dir.path().join("c"));
    write_clear_dir(&haze, &[(8, 8), (8, 8), (8, 8)]);
    write_clear_dir(&clear, &[(8, 8), (8, 8)]);
    let out = dir.path().join("lists").join("m.tsv");
    ok(dehaze(&["manifest", "--haze", s(&haze), "--clear", s(&clear), "--out", s(&out)]));
    let text = fs::read_to_string(&out).unwrap();
    let ids: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["img0", "img1"]);
}

#[test]
fn train_dehaze_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_project(dir.path());
    ok(dehaze(&["train", "--config", s(&config)]));
    let run = dir.path().join("run");
    for f in ["last.ckpt", "pretrain-epoch0001.ckpt", "iff-epoch0001.ckpt", "train.json", "config.toml", "psnr.svg"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    // One epoch of pretraining and one of IFF over three pairs.
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!((first["height"].as_u64(), first["width"].as_u64()), (Some(32), Some(32)));
    let val = fs::read_to_string(run.join("val_metrics.tsv")).unwrap();
    assert_eq!(val.lines().count(), 3);

    // Native-size inference on odd sizes, one bad file in the batch.
    let inputs = dir.path().join("inputs");
    write_clear_dir(&inputs, &[(367, 541), (19, 24)]);
    fs::write(inputs.join("broken.png"), b"not a png").unwrap();
    let outdir = dir.path().join("out");
    let ckpt = run.join("last.ckpt");
    let res = dehaze(&["dehaze", "--checkpoint", s(&ckpt), "--input", s(&inputs), "--out", s(&outdir)]);
    assert_eq!(code(&res), 2);
    assert_eq!(read_image(&outdir.join("img0.png")).unwrap().dims(), (367, 541));
    assert_eq!(read_image(&outdir.join("img1.png")).unwrap().dims(), (19, 24));
    assert!(!outdir.join("broken.png").exists());

    // Same seed, same bytes.
    let again = dir.path().join("again");
    ok(dehaze(&["dehaze", "--checkpoint", s(&ckpt), "--input", s(&inputs.join("img0.png")), "--out", s(&again)]));
    assert_eq!(fs::read(again.join("img0.png")).unwrap(), fs::read(outdir.join("img0.png")).unwrap());

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(outdir.join("dehaze.json")).unwrap()).unwrap();
    let train_meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("train.json")).unwrap()).unwrap();
    assert_eq!(meta["model_config_hash"], train_meta["model_config_hash"]);
    assert_eq!(meta["seed"], 0);
    assert_eq!(train_meta["seed"], 5);
    assert_eq!(train_meta["config_hash"].as_str().unwrap().len(), 64);

    let map = dir.path().join("maps").join("m.png");
    ok(dehaze(&["hazemap", "--checkpoint", s(&ckpt), "--input", s(&inputs.join("img0.png")), "--out", s(&map)]));
    assert_eq!(read_image(&map).unwrap().dims(), (367, 541));

    let report = dir.path().join("series");
    ok(dehaze(&[
        "evaluate", "--checkpoint", s(&run), "--manifest", s(&dir.path().join("data/manifest.tsv")), "--out", s(&report),
    ]));
    let table = fs::read_to_string(report.join("epoch_metrics.tsv")).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["pretrain-epoch0001", "iff-epoch0001"]);
    assert!(report.join("psnr.svg").is_file() && report.join("ssim.svg").is_file());

    let single = dir.path().join("single");
    ok(dehaze(&[
        "evaluate", "--checkpoint", s(&ckpt), "--manifest", s(&dir.path().join("data/manifest.tsv")), "--out", s(&single),
    ]));
    assert_eq!(fs::read_to_string(single.join("metrics.tsv")).unwrap().lines().count(), 4);
    assert!(single.join("evaluate.json").is_file());

    // Reports regenerate bitwise from the same checkpoint.
    let twice = dir.path().join("single2");
    ok(dehaze(&[
        "evaluate", "--checkpoint", s(&ckpt), "--manifest", s(&dir.path().join("data/manifest.tsv")), "--out", s(&twice),
    ]));
    for f in ["metrics.tsv", "summary.txt", "metrics.json"] {
        assert_eq!(fs::read(single.join(f)).unwrap(), fs::read(twice.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn small_epoch_fits_the_smoke_budget() {
    let dir = tempfile::tempdir().unwrap();
    let clear = dir.path().join("clear_src");
    write_clear_dir(&clear, &[(64, 64); 8]);
    ok(dehaze(&["synthesize", "--clear", s(&clear), "--out", s(&dir.path().join("data")), "--seed", "2"]));
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "output_dir = \"run\"\n[data]\ntrain_manifest = \"data/manifest.tsv\"\n[model]\nwidth_divisor = 8\n\
         [train]\nmax_epochs = 1\npretrain_size = [64, 64]\niff_enabled = false\n",
    )
    .unwrap();
    let start = std::time::Instant::now();
    ok(dehaze(&["train", "--config", s(&config)]));
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "one epoch took {elapsed:?}");
    let log = fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 8);
}

#[test]
fn multi_scale_is_selected_by_config() {
    let dir = tempfile::tempdir().unwrap();
    let clear = dir.path().join("clear_src");
    write_clear_dir(&clear, &[(100, 104), (98, 97)]);
    ok(dehaze(&["synthesize", "--clear", s(&clear), "--out", s(&dir.path().join("data")), "--seed", "4"]));
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "output_dir = \"run\"\n[data]\ntrain_manifest = \"data/manifest.tsv\"\n\
         [model]\narchitecture = \"multi\"\nwidth_divisor = 16\n\
         [train]\nmax_epochs = 1\npretrain_size = [97, 97]\niff_enabled = false\n",
    )
    .unwrap();
    ok(dehaze(&["train", "--config", s(&config)]));
    let ckpt = dir.path().join("run/last.ckpt");
    let inputs = dir.path().join("data/haze");
    let out = dir.path().join("out");
    ok(dehaze(&["dehaze", "--checkpoint", s(&ckpt), "--input", s(&inputs), "--out", s(&out)]));
    assert_eq!(read_image(&out.join("img0.png")).unwrap().dims(), (100, 104));
    let map = dir.path().join("map.png");
    ok(dehaze(&["hazemap", "--checkpoint", s(&ckpt), "--input", s(&inputs.join("img1.png")), "--out", s(&map)]));
    assert_eq!(read_image(&map).unwrap().dims(), (98, 97));
}

#[test]
fn interrupted_training_resumes_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_project(dir.path());
    ok(dehaze(&["train", "--config", s(&config)]));
    let full = fs::read(dir.path().join("run/last.ckpt")).unwrap();
    let full_log = fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();

    fs::remove_dir_all(dir.path().join("run")).unwrap();
    ok(dehaze(&["train", "--config", s(&config), "--max-steps", "4"]));
    let partial = dir.path().join("partial.ckpt");
    fs::rename(dir.path().join("run/last.ckpt"), &partial).unwrap();
    ok(dehaze(&["train", "--config", s(&config), "--resume", s(&partial)]));
    assert_eq!(fs::read(dir.path().join("run/last.ckpt")).unwrap(), full);

    let strip = |text: &str| -> Vec<serde_json::Value> {
        text.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time");
                v
            })
            .collect()
    };
    let resumed_log = fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    assert_eq!(strip(&resumed_log), strip(&full_log));
}

#[test]
fn bad_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    write_image(&img, &picture(8, 8, 0.0)).unwrap();
    let out = s(&dir.path().join("o")).to_string();

    let missing = dehaze(&["dehaze", "--checkpoint", "/nonexistent.ckpt", "--input", s(&img), "--out", &out]);
    assert_eq!(code(&missing), 2);

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, vec![7u8; 4096]).unwrap();
    let corrupt = dehaze(&["dehaze", "--checkpoint", s(&junk), "--input", s(&img), "--out", &out]);
    assert_eq!(code(&corrupt), 2);
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("checkpoint"));
}

#[test]
fn finetune_refuses_a_checkpoint_of_another_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_project(dir.path());
    ok(dehaze(&["train", "--config", s(&config), "--max-steps", "1"]));
    let other = dir.path().join("other.toml");
    fs::write(&other, TINY_CONFIG.replace("depth = 3", "depth = 4")).unwrap();
    let out = dehaze(&["finetune", "--config", s(&other), "--checkpoint", s(&dir.path().join("run/last.ckpt"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config hash"));

    ok(dehaze(&["finetune", "--config", s(&config), "--checkpoint", s(&dir.path().join("run/last.ckpt"))]));
    let log = fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["phase"], "iff");
}
