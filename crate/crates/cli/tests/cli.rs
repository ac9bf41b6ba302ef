mod common;

use std::process::Command;

use affordance_core::data::imageio;

fn affordance(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_affordance")).args(args).output().unwrap()
}

#[test]
fn unknown_flag_exits_1() {
    let out = affordance(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    assert_eq!(affordance(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = affordance(&[
        "predict",
        "--checkpoint",
        "/no/such/model.ckpt",
        "--image",
        "x.png",
        "--prompt",
        "hold",
        "--out",
        dir.path().join("o.png").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/model.ckpt"));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "output_dir = \"o\"\n[train]\nbatch_size = 0\n[synthetic]\n").unwrap();
    let out = affordance(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn predict_writes_a_16_bit_map_of_the_image_size() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = common::tiny_checkpoint(dir.path());
    let img = dir.path().join("in.png");
    std::fs::write(&img, common::test_png(37, 53)).unwrap();
    let heat = dir.path().join("heat.png");
    let overlay = dir.path().join("overlay.png");
    let out = affordance(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        img.to_str().unwrap(),
        "--prompt",
        "sit on",
        "--out",
        heat.to_str().unwrap(),
        "--overlay",
        overlay.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&heat).unwrap();
    // IHDR bit depth and colour type: 16-bit grayscale.
    assert_eq!((bytes[24], bytes[25]), (16, 0));
    let (map, full) = imageio::read_gray(&heat).unwrap();
    assert_eq!(map.dim(), (37, 53));
    assert_eq!(full, 65535.0);
    assert_eq!(imageio::read_rgb(&overlay).unwrap().dim(), (37, 53, 3));
}

#[test]
fn synth_then_eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = common::tiny_checkpoint(dir.path());
    let data = dir.path().join("data");
    assert!(affordance(&["synth", "affordance", "--out", data.to_str().unwrap(), "--count", "3"]).status.success());
    let report = dir.path().join("r.json");
    let out = affordance(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        data.join("manifest.jsonl").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = affordance_core::metrics::MetricReport::load(&report).unwrap();
    assert_eq!(r.n_samples, 3);
}

#[test]
fn ablate_trains_missing_subsets_and_tabulates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(affordance(&["synth", "affordance", "--out", data.to_str().unwrap(), "--count", "2"]).status.success());
    let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/train.toml");
    let table = dir.path().join("ablation.json");
    let out = affordance(&[
        "ablate",
        "--config",
        golden,
        "--override",
        &format!("output_dir={}", dir.path().join("run").display()),
        "--override",
        "train.max_steps=2",
        "--manifest",
        data.join("manifest.jsonl").to_str().unwrap(),
        "--levels",
        "1",
        "--levels",
        "1,2,3",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("| levels | KLD | SIM | NSS |"), "{stdout}");
    assert!(dir.path().join("run/ablation-l1/final.ckpt").exists());
    assert!(dir.path().join("run/ablation-l123/final.ckpt").exists());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&table).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}
