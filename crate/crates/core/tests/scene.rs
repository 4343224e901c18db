use attrex::model::{macro_f1, train, ModelGraph, TrainConfig};
use attrex::scene::{
    default_signatures, generate_dataset, generate_scene, generate_single_class_scene,
    load_dataset, save_dataset, RegionShape, SceneConfig,
};
use attrex::Error;
use proptest::prelude::*;
use std::collections::HashSet;

fn check_masks(scene: &attrex::scene::Scene) {
    let masks = scene.masks();
    let plane = scene.height * scene.width;
    for p in 0..plane {
        let owners = masks.iter().filter(|m| m.data()[p] == 1.0).count();
        assert_eq!(owners, 1, "pixel {p}");
    }
    for (c, m) in masks.iter().enumerate() {
        assert_eq!(scene.labels[c], m.sum() > 0.0);
    }
}

#[test]
fn noiseless_single_region_is_constant() {
    let cfg = SceneConfig { noise_std: 0.0, ..Default::default() };
    let s = generate_single_class_scene(&cfg, 4).unwrap();
    let c = s.labels.iter().position(|&l| l).unwrap();
    let sig = &cfg.signatures()[c].mean;
    for ch in 0..3 {
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(s.image.at3(ch, i, j), sig[ch] as f32 as f64);
            }
        }
    }
    assert_eq!(s.mask(c).sum(), 4096.0);
}

#[test]
fn same_seed_same_scene() {
    let cfg = SceneConfig::default();
    assert_eq!(generate_scene(&cfg, 17).unwrap(), generate_scene(&cfg, 17).unwrap());
    assert_ne!(generate_scene(&cfg, 17).unwrap().image, generate_scene(&cfg, 18).unwrap().image);
}

#[test]
fn region_means_follow_signatures() {
    let cfg = SceneConfig { noise_std: 0.05, ..Default::default() };
    let sigs = cfg.signatures();
    for seed in 0..20 {
        let s = generate_scene(&cfg, seed).unwrap();
        for c in 0..cfg.num_classes {
            let n = s.mask_area(c);
            if n == 0 {
                continue;
            }
            for ch in 0..3 {
                let mean = (0..4096)
                    .filter(|&p| usize::from(s.class_map[p]) == c)
                    .map(|p| s.image.data()[ch * 4096 + p])
                    .sum::<f64>()
                    / n as f64;
                // Four standard errors, with clamping bias allowance near the signature.
                let tol = 4.0 * 0.05 / (n as f64).sqrt() + 1e-6;
                assert!((mean - sigs[c].mean[ch]).abs() <= tol, "seed {seed} class {c}: {mean}");
            }
        }
    }
}

#[test]
fn masks_exclusive_and_exhaustive() {
    for shape in [RegionShape::Rectangle, RegionShape::Blob] {
        let cfg = SceneConfig { region_shape: shape, ..Default::default() };
        for s in generate_dataset(&cfg, 60, 3).unwrap().scenes {
            check_masks(&s);
        }
    }
}

#[test]
fn dataset_rules() {
    assert!(matches!(
        generate_dataset(&SceneConfig::default(), 0, 1),
        Err(Error::InvalidArgument(_))
    ));
    let ds = generate_dataset(&SceneConfig::default(), 1000, 0).unwrap();
    for c in 0..5 {
        let freq = ds.scenes.iter().filter(|s| s.labels[c]).count();
        assert!(freq >= 50, "class {c} in {freq} scenes");
    }
    let single: Vec<_> = ds.scenes.iter().filter(|s| s.is_single_class()).collect();
    assert!(single.len() >= 200);
    for (k, s) in ds.scenes.iter().enumerate() {
        assert_eq!(s.id, k as u64);
        if k % 5 == 4 {
            let c = s.labels.iter().position(|&l| l).unwrap();
            assert_eq!(s.mask(c).sum(), 4096.0);
        }
    }
}

#[test]
fn disjoint_seed_ranges_give_distinct_images() {
    let cfg = SceneConfig::default();
    let a = generate_dataset(&cfg, 100, 0).unwrap();
    let b = generate_dataset(&cfg, 100, 100).unwrap();
    let seen: HashSet<Vec<u64>> = a
        .scenes
        .iter()
        .map(|s| s.image.data().iter().map(|v| v.to_bits()).collect())
        .collect();
    for s in &b.scenes {
        let key: Vec<u64> = s.image.data().iter().map(|v| v.to_bits()).collect();
        assert!(!seen.contains(&key));
    }
}

#[test]
fn signature_separation_is_enforced() {
    let sigs = default_signatures(5, 3);
    let cfg = SceneConfig { noise_std: 0.2, signatures: sigs, ..Default::default() };
    assert!(generate_scene(&cfg, 0).is_err());
    assert!(generate_scene(&SceneConfig { num_classes: 1, ..Default::default() }, 0).is_err());
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SceneConfig::default(), 12, 5).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn missing_sample_is_corrupt_manifest() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&generate_dataset(&SceneConfig::default(), 3, 0).unwrap(), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("sample_000001.bin")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::CorruptManifest { .. })));
    assert!(matches!(
        load_dataset(&dir.path().join("nowhere")),
        Err(Error::CorruptManifest { .. })
    ));
}

#[test]
fn flipped_byte_is_checksum_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&generate_dataset(&SceneConfig::default(), 3, 0).unwrap(), dir.path()).unwrap();
    let path = dir.path().join("sample_000002.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[100] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::ChecksumMismatch { .. })));
}

#[test]
fn tiny_cnn_learns_default_scenes() {
    let cfg = SceneConfig::default();
    let train_set = generate_dataset(&cfg, 2000, 0).unwrap();
    let held_out = generate_dataset(&cfg, 500, 1_000_000).unwrap();
    let model = ModelGraph::tiny_cnn([3, 64, 64], 5, 1).unwrap();
    let tc = TrainConfig { epochs: 4, ..Default::default() };
    let (model, _) = train(&model, &train_set.images(), &train_set.labels(), &tc).unwrap();
    let predicted: Vec<Vec<bool>> = held_out
        .scenes
        .iter()
        .map(|s| model.predict_multilabel(&s.image).unwrap().labels)
        .collect();
    let f1 = macro_f1(&predicted, &held_out.labels());
    assert!(f1 >= 0.9, "macro-F1 {f1}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_scene_has_valid_masks(seed in any::<u64>(), h in 8usize..40, w in 8usize..40, l in 2usize..8) {
        let cfg = SceneConfig { height: h, width: w, num_classes: l, ..Default::default() };
        let s = generate_scene(&cfg, seed).unwrap();
        check_masks(&s);
        prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
