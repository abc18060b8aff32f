use std::fs;

use carbseg::checkpoint::{read_checkpoint, write_checkpoint};
use carbseg::dtn1::{read_features, read_tensor, write_tensor, Tensor};
use carbseg::labels::{read_label_map, write_label_map, write_label_map_dtn1};
use carbseg::provider::FileProvider;
use carbseg::stats_csv::{write_stats, COOCCURRENCE_FILE};
use carbseg::Error;
use carbseg_core::head::LinearSegHead;
use carbseg_core::maskgen::{CropSpec, FeatureChannel, FeatureProvider};
use carbseg_core::rng::CounterRng;
use carbseg_core::stats::{compute_stats, ImageLabelSet};
use carbseg_core::{ClassCatalog, LabelMap};
use proptest::prelude::*;

#[test]
fn label_map_round_trip_seed_7() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = CounterRng::new(7);
    let data = (0..64 * 64).map(|_| if r.bernoulli(0.1) { 255 } else { r.below(19) as u8 }).collect();
    let m = LabelMap::new(64, 64, data).unwrap();
    let p = dir.path().join("m.pgm");
    write_label_map(&p, &m).unwrap();
    let bytes = fs::read(&p).unwrap();
    let back = read_label_map(&p, Some(19)).unwrap();
    assert_eq!(back, m);
    write_label_map(&p, &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), bytes);
    let q = dir.path().join("m.dtn1");
    write_label_map_dtn1(&q, &m).unwrap();
    assert_eq!(read_label_map(&q, Some(19)).unwrap(), m);
}

#[test]
fn out_of_range_label_names_the_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.pgm");
    let mut bytes = b"P5\n3 2\n255\n".to_vec();
    bytes.extend_from_slice(&[0, 1, 2, 3, 200, 5]);
    fs::write(&p, bytes).unwrap();
    let err = read_label_map(&p, Some(19)).unwrap_err();
    assert!(matches!(err, Error::Invalid { .. }));
    let msg = err.to_string();
    assert!(msg.contains("200") && msg.contains("(1, 1)"), "{msg}");
    assert_eq!(err.exit_code(), 1);
    assert_eq!(read_label_map(dir.path().join("nope.pgm"), None).unwrap_err().exit_code(), 2);
}

#[test]
fn tensor_round_trip_seed_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = CounterRng::new(3);
    let t = Tensor::new(8, 8, 16, (0..8 * 8 * 16).map(|_| r.normal() as f32).collect()).unwrap();
    let p = dir.path().join("t.dtn1");
    write_tensor(&p, &t).unwrap();
    let bytes = fs::read(&p).unwrap();
    assert_eq!(bytes.len(), 16 + 4 * 1024);
    let back = read_tensor(&p).unwrap();
    assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    write_tensor(&p, &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), bytes);
    let f = read_features(&p).unwrap();
    assert_eq!((f.height(), f.width(), f.dim()), (8, 8, 16));
}

#[test]
fn truncated_tensor_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.dtn1");
    let mut bytes = carbseg::dtn1::encode(&Tensor::new(2, 2, 3, vec![1.0; 12]).unwrap());
    bytes.truncate(bytes.len() - 4);
    fs::write(&p, bytes).unwrap();
    assert!(read_tensor(&p).unwrap_err().to_string().contains("length mismatch"));
}

proptest! {
    #[test]
    fn tensor_bytes_round_trip(rows in 1usize..5, cols in 1usize..5, depth in 1usize..5, seed in any::<u64>()) {
        let mut r = CounterRng::new(seed);
        let t = Tensor::new(rows, cols, depth, (0..rows * cols * depth).map(|_| (r.normal() * 1e3) as f32).collect()).unwrap();
        let b = carbseg::dtn1::encode(&t);
        prop_assert_eq!(carbseg::dtn1::decode(&b).unwrap(), t);
    }

    #[test]
    fn graymap_bytes_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut r = CounterRng::new(seed);
        let m = LabelMap::new(w, h, (0..w * h).map(|_| r.below(256) as u8).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_label_map(&p, &m).unwrap();
        prop_assert_eq!(read_label_map(&p, None).unwrap(), m);
    }
}

#[test]
fn stats_csv_formatting_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let set = |id: &str, cs: &[usize]| ImageLabelSet { image_id: id.into(), present: cs.iter().copied().collect() };
    let st = compute_stats(&[set("1", &[0, 1]), set("2", &[0]), set("3", &[0, 1])], 3).unwrap();
    let cat = ClassCatalog::generic(3).unwrap();
    let files = write_stats(dir.path(), &st, &cat).unwrap();
    let co = fs::read_to_string(dir.path().join(COOCCURRENCE_FILE)).unwrap();
    let lines: Vec<&str> = co.lines().collect();
    assert_eq!(lines[0], "class,class0,class1,class2");
    assert_eq!(lines[1], "class0,1.000000,0.666667,0.000000");
    assert_eq!(lines[3], "class2,0.000000,0.000000,0.000000");
    assert!(!co.contains("NaN"));
    let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    write_stats(dir.path(), &st, &cat).unwrap();
    let after: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let head = LinearSegHead::new(2, 3, vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.5], Some(vec![0.125, -0.5]), 0.75).unwrap();
    write_checkpoint(dir.path(), &head, 42).unwrap();
    let (back, it) = read_checkpoint(dir.path()).unwrap();
    assert_eq!(back, head);
    assert_eq!(it, 42);
    let nobias = LinearSegHead::new(2, 3, vec![0.0; 6], None, 1.0).unwrap();
    write_checkpoint(dir.path(), &nobias, 1).unwrap();
    assert_eq!(read_checkpoint(dir.path()).unwrap().0, nobias);
}

#[test]
fn file_provider_layout_and_missing_views() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s1");
    fs::create_dir_all(&scene).unwrap();
    write_tensor(scene.join("global.dtn1"), &Tensor::new(4, 6, 2, vec![1.0; 48]).unwrap()).unwrap();
    let spec = CropSpec { x0: 8, y0: 0, crop_w: 32, crop_h: 32, resize_ratio: 1.5 };
    assert_eq!(spec.file_stem(), "8_0_32_32_1500");
    write_tensor(scene.join("8_0_32_32_1500.dtn1"), &Tensor::new(3, 3, 2, vec![0.5; 18]).unwrap()).unwrap();
    let p = FileProvider::open(dir.path(), 16).unwrap();
    assert_eq!(p.scene_count(), 1);
    assert_eq!(p.frame_size(0).unwrap(), (96, 64));
    assert_eq!(p.local_views(0).unwrap(), vec![spec]);
    let f = p.features(0, Some(&spec), FeatureChannel::PseudoLabel).unwrap();
    assert_eq!((f.height(), f.width()), (3, 3));
    let other = CropSpec { x0: 0, ..spec };
    match p.features(0, Some(&other), FeatureChannel::PseudoLabel) {
        Err(carbseg_core::Error::MissingView { scene, view }) => {
            assert_eq!(scene, "s1");
            assert_eq!(view, "0_0_32_32_1500");
        }
        other => panic!("unexpected {other:?}"),
    }
}
