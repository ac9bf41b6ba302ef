use std::path::Path;

use affordance_core::data::{self, imageio, synthetic};
use affordance_core::Error;
use ndarray::Array2;

fn write_manifest(dir: &Path, name: &str, lines: &[String]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

#[test]
fn referring_manifests_concatenate() {
    let dir = tempfile::tempdir().unwrap();
    let a = synthetic::write_referring_dataset(&dir.path().join("a"), 0, 3, 32).unwrap();
    let b = synthetic::write_referring_dataset(&dir.path().join("b"), 1, 5, 32).unwrap();
    let one = data::load_referring_manifest(&a).unwrap();
    let both = data::load_referring_manifests(&[a, b]).unwrap();
    assert_eq!(one.len(), 3);
    assert_eq!(both.len(), 8);
    let loaded = both[4].load(64).unwrap();
    assert_eq!(loaded.image.dim(), (64, 64, 3));
    assert_eq!(loaded.mask.dim(), (64, 64));
    assert!(loaded.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(loaded.mask.sum() > 0.0);
}

#[test]
fn ids_default_to_file_stem_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(
        dir.path(),
        "refs.jsonl",
        &[
            r#"{"image": "i.png", "text": "a cup", "mask": "m.png"}"#.into(),
            String::new(),
            r#"{"image": "i.png", "text": "a cup", "mask": "m.png", "id": "x"}"#.into(),
        ],
    );
    let s = data::load_referring_manifest(&p).unwrap();
    assert_eq!(s[0].id, "refs-000001");
    assert_eq!(s[1].id, "x");
    assert_eq!(s[0].image_path, dir.path().join("i.png"));
}

#[test]
fn malformed_manifest_lines_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(dir.path(), "bad.jsonl", &[r#"{"image": "i.png"}"#.into()]);
    match data::load_affordance_manifest(&p) {
        Err(Error::DataValidation { sample, .. }) => assert!(sample.ends_with(":1"), "{sample}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn non_binary_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img = ndarray::Array3::from_elem((4, 4, 3), 0.5);
    imageio::write_bytes(&dir.path().join("i.png"), &imageio::encode_rgb8(&img).unwrap()).unwrap();
    let mut mask = Array2::zeros((4, 4));
    mask[[1, 1]] = 128.0 / 255.0;
    imageio::write_bytes(&dir.path().join("m.png"), &imageio::encode_gray8(&mask).unwrap()).unwrap();
    let p = write_manifest(
        dir.path(),
        "m.jsonl",
        &[r#"{"image": "i.png", "text": "a cup", "mask": "m.png", "id": "s1"}"#.into()],
    );
    let s = data::load_referring_manifest(&p).unwrap();
    match s[0].load(32) {
        Err(Error::DataValidation { sample, reason }) => {
            assert_eq!(sample, "s1");
            assert!(reason.contains("128"), "{reason}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn heatmaps_are_normalized_and_empty_ones_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic::write_affordance_dataset(dir.path(), 3, 4, 48).unwrap();
    for s in data::load_affordance_manifest(&m).unwrap() {
        let l = s.load(64).unwrap();
        assert!((l.heatmap.sum() - 1.0).abs() <= 1e-6);
        assert_eq!(l.heatmap.dim(), (48, 48));
        assert!(!l.was_normalized);
    }
    imageio::write_bytes(
        &dir.path().join("heatmaps/0000.png"),
        &imageio::encode_gray16(&Array2::zeros((48, 48))).unwrap(),
    )
    .unwrap();
    let s = data::load_affordance_manifest(&m).unwrap();
    assert!(matches!(s[0].load(64), Err(Error::DataValidation { .. })));
}

#[test]
fn missing_image_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(
        dir.path(),
        "m.jsonl",
        &[r#"{"image": "nope.png", "action": "hold", "heatmap": "h.png"}"#.into()],
    );
    let e = data::load_affordance_manifest(&p).unwrap()[0].load(32).unwrap_err();
    assert!(e.is_validation());
    assert!(e.to_string().contains("nope.png"), "{e}");
}
