use std::collections::BTreeSet;
use std::fs;

use drivelab::affordance::{decode, NormalizationRanges};
use drivelab::dataset::{generate_dataset, load_frame, split_episodes, DatasetConfig, DatasetManifest, DEFAULT_RATIOS};
use drivelab::raster::channel_means;
use drivelab::world::{demo_world_file, World};

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        episodes: 8,
        seed,
        duration_s: 3.0,
        ..Default::default()
    }
}

#[test]
fn same_seed_writes_identical_datasets() {
    let world = World::from_file(&demo_world_file(1)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(&world, &small_config(3), a.path()).unwrap();
    let mb = generate_dataset(&world, &small_config(3), b.path()).unwrap();
    assert_eq!(ma, mb);
    for name in ["manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    assert_eq!(DatasetManifest::read(&a.path().join("manifest.json")).unwrap(), ma);
    for rec in &ma.train.records {
        assert_eq!(load_frame(a.path(), rec).unwrap(), load_frame(b.path(), rec).unwrap());
    }
}

#[test]
fn splits_are_disjoint_and_means_come_from_train() {
    let world = World::from_file(&demo_world_file(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&world, &small_config(9), dir.path()).unwrap();
    let mut seen = BTreeSet::new();
    for i in 0..3 {
        for &e in &m.split(i).episodes {
            assert!(seen.insert(e), "episode {e} in two splits");
        }
        for rec in &m.split(i).records {
            assert!(m.split(i).episodes.contains(&rec.episode));
        }
    }
    let train: Vec<_> = m.train.records.iter().map(|r| load_frame(dir.path(), r).unwrap()).collect();
    let means = channel_means(&train).unwrap();
    for c in 0..3 {
        assert!((means[c] - m.channel_means[c]).abs() < 1e-9);
    }
    if !m.val.records.is_empty() {
        let val: Vec<_> = m.val.records.iter().map(|r| load_frame(dir.path(), r).unwrap()).collect();
        assert_ne!(channel_means(&val).unwrap(), m.channel_means);
    }
}

#[test]
fn labels_decode_back_to_raw_values() {
    let world = World::from_file(&demo_world_file(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&world, &small_config(2), dir.path()).unwrap();
    let r = NormalizationRanges::default();
    assert!(m.total_frames() > 0);
    for i in 0..3 {
        for rec in &m.split(i).records {
            let back = decode(&rec.encoded.0, &r);
            for (x, y) in back.0.iter().zip(rec.raw.0.iter()) {
                match (x, y) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                    (None, None) => {}
                    _ => panic!("activity changed through the codec"),
                }
            }
        }
    }
}

#[test]
fn episode_split_counts_follow_the_rounding_rule() {
    let ids: Vec<usize> = (0..1000).collect();
    let [train, val, test] = split_episodes(&ids, &DEFAULT_RATIOS, 1).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (725, 137, 138));
    assert_eq!(split_episodes(&ids, &DEFAULT_RATIOS, 1).unwrap()[0], train);
}
