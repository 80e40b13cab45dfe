//! Files written by one stage read back unchanged by the next.

use lidseg::classifier::{load_dataset_dir, train, Class, NetworkSpec, StageSpec, TrainConfig};
use lidseg::io::{read_float_map, read_gray, read_mask};
use lidseg::nn::{load_checkpoint, save_checkpoint};
use lidseg::pipeline::{compute_maps, write_bundle, PipelineConfig};
use lidseg::synth::{build_dataset, write_dataset, DatasetConfig, SceneSampler};

fn small_dataset(seed: u64) -> lidseg::synth::Dataset {
    let cfg = DatasetConfig {
        scenes: 1,
        window: 32,
        stride: 32,
        sampler: SceneSampler {
            width: 192,
            height: 192,
            sites: 8,
            radius_max: 10.0,
            stray: 3,
            ..Default::default()
        },
        seed,
        ..Default::default()
    };
    build_dataset(&cfg).unwrap()
}

fn small_spec() -> NetworkSpec {
    NetworkSpec {
        input: [1, 32, 32],
        stages: vec![StageSpec { convs: 1, width: 4 }, StageSpec { convs: 1, width: 4 }],
        hidden: vec![8],
    }
}

#[test]
fn dataset_written_then_loaded() {
    let dataset = small_dataset(3);
    assert!(dataset.crops.iter().any(|c| c.label == Class::Damage));
    assert!(dataset.crops.iter().any(|c| c.label == Class::Background));
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &dataset, &serde_json::json!({"seed": 3})).unwrap();

    let loaded = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), dataset.crops.len());
    // Loader order is damage first, then background, each by name; the
    // crops are sorted by name overall.
    let mut expected: Vec<_> = dataset.crops.iter().collect();
    expected.sort_by_key(|c| (c.label != Class::Damage, c.name.clone()));
    for (s, c) in loaded.iter().zip(&expected) {
        assert_eq!(s.label, c.label);
        // 8-bit storage: every value is already a multiple of 1/255.
        assert_eq!(s.image, c.image, "{}", c.name);
        let mask = read_mask(&dir.path().join("masks").join(c.label.dir_name()).join(format!("{}.png", c.name))).unwrap();
        assert_eq!(mask, c.mask);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["crops"], dataset.crops.len());
}

#[test]
fn checkpoint_and_bundle_round_trip() {
    let samples = small_dataset(5).samples();
    let spec = small_spec();
    let cfg = TrainConfig { epochs: 1, lr: 0.01, batch_size: 8, seed: 2, ..Default::default() };
    let mut net = train(&samples, &spec, &cfg).unwrap().network;

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &net, &serde_json::json!({"network": spec})).unwrap();
    let (mut back, extra) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(back.flat_params(), net.flat_params());
    assert_eq!(serde_json::from_value::<NetworkSpec>(extra["network"].clone()).unwrap(), spec);

    let pcfg = PipelineConfig {
        fusion: lidseg::fusion::FusionConfig { stages: vec![1, 2], ..Default::default() },
        ..Default::default()
    };
    let image = &samples[0].image;
    let a = compute_maps(&mut net, &spec, image, &pcfg).unwrap();
    let b = compute_maps(&mut back, &spec, image, &pcfg).unwrap();
    assert_eq!(a, b);

    let out = dir.path().join("bundle");
    write_bundle(&out, &a).unwrap();
    let f = &a.fusion;
    assert_eq!(read_float_map(&out.join("m_fusion.fmap")).unwrap(), f.m_fusion);
    assert_eq!(read_float_map(&out.join("m_multi.fmap")).unwrap(), f.m_multi);
    assert_eq!(read_float_map(&out.join("stage2_cgcam.fmap")).unwrap(), f.stage_maps[1]);
    assert_eq!(read_mask(&out.join("mask.png")).unwrap(), f.mask);
    assert_eq!(read_gray(&out.join("image.png")).unwrap().dims(), image.dims());
}
