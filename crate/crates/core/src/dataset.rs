//! Labeled frame datasets: cleaning, episode-level splits, channel means
//! and on-disk layout (manifest JSON, per-split JSON lines, P6 frames).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{encode, Affordance, AffordanceVector, EncodedAffordances, NormalizationRanges};
use crate::raster::{self, CameraRig, Frame};
use crate::rng;
use crate::sim::{self, EpisodeConfig, GroundTruth, Snapshot};
use crate::world::World;

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_RATIOS: [f64; 3] = [0.725, 0.1375, 0.1375];
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("training split has no frames")]
    EmptyTrain,
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
}

/// A sampled snapshot before cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub episode: usize,
    pub episode_seed: u64,
    pub tick: u64,
    pub sim_time: f64,
    pub time_of_day: f64,
    pub segment: Option<usize>,
    pub affordances: Option<AffordanceVector>,
    pub off_road: bool,
    pub collided: bool,
}

impl RawRecord {
    pub fn from_snapshot(episode: usize, episode_seed: u64, s: &Snapshot) -> Self {
        RawRecord {
            episode,
            episode_seed,
            tick: s.tick,
            sim_time: s.sim_time,
            time_of_day: s.time_of_day,
            segment: s.ego_lane.map(|p| p.segment),
            affordances: s.affordances,
            off_road: s.off_road,
            collided: s.collided,
        }
    }
}

/// An image and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    /// Path of the P6 file, relative to the dataset directory.
    pub frame: String,
    pub episode: usize,
    pub episode_seed: u64,
    pub tick: u64,
    pub sim_time: f64,
    pub time_of_day: f64,
    pub segment: usize,
    pub raw: AffordanceVector,
    pub encoded: EncodedAffordances,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub episode: usize,
    pub tick: u64,
    pub reason: String,
}

pub fn frame_path(episode: usize, tick: u64) -> String {
    format!("frames/e{episode:05}_{tick:04}.ppm")
}

fn check_label(a: &AffordanceVector, r: &NormalizationRanges) -> Result<(), String> {
    for var in Affordance::ALL {
        let Some(x) = a.get(var) else { continue };
        if !x.is_finite() {
            return Err("non-finite label".into());
        }
        let (lo, hi) = r.range(var);
        let out_of_range = if var.is_car() { x < lo } else { x < lo || x > hi };
        if out_of_range {
            return Err(format!("encode precondition: {var} = {x} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

/// Cars beyond the encodable range are inactive labels.
fn visible(mut a: AffordanceVector, r: &NormalizationRanges) -> AffordanceVector {
    for var in Affordance::ALL.into_iter().filter(|v| v.is_car()) {
        if a.get(var).is_some_and(|d| d > r.car.1) {
            a.set(var, None);
        }
    }
    a
}

/// Keeps records with an on-road, collision-free ego and encodable labels.
pub fn clean(records: Vec<RawRecord>, ranges: &NormalizationRanges) -> (Vec<LabeledFrame>, Vec<Rejected>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for rec in records {
        let verdict = match (rec.affordances, rec.segment) {
            (Some(a), Some(seg)) if !rec.off_road => check_label(&a, ranges).and_then(|_| {
                if rec.collided {
                    return Err("collision".to_string());
                }
                encode(&a, ranges)
                    .map(|e| (visible(a, ranges), seg, e))
                    .map_err(|e| format!("encode failure: {e}"))
            }),
            _ => Err("off-road ego".into()),
        };
        match verdict {
            Ok((raw, segment, encoded)) => kept.push(LabeledFrame {
                frame: frame_path(rec.episode, rec.tick),
                episode: rec.episode,
                episode_seed: rec.episode_seed,
                tick: rec.tick,
                sim_time: rec.sim_time,
                time_of_day: rec.time_of_day,
                segment,
                raw,
                encoded,
            }),
            Err(reason) => rejected.push(Rejected {
                episode: rec.episode,
                tick: rec.tick,
                reason,
            }),
        }
    }
    (kept, rejected)
}

pub fn validate_ratios(ratios: &[f64; 3]) -> Result<(), DatasetError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Seeded shuffle of episode ids, then train and val take the floor of
/// their share and test takes the remainder.
pub fn split_episodes(episodes: &[usize], ratios: &[f64; 3], seed: u64) -> Result<[Vec<usize>; 3], DatasetError> {
    validate_ratios(ratios)?;
    let mut ids = episodes.to_vec();
    ids.shuffle(&mut rng::seeded(seed));
    let n = ids.len() as f64;
    let n_train = (n * ratios[0] + 1e-9).floor() as usize;
    let n_val = ((n * ratios[1] + 1e-9).floor() as usize).min(ids.len() - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok([ids, val, test])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub traffic_density: f64,
    pub ratios: [f64; 3],
    pub ranges: NormalizationRanges,
    pub rig: CameraRig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            episodes: 100,
            seed: 0,
            duration_s: 10.0,
            traffic_density: EpisodeConfig::default().traffic_density,
            ratios: DEFAULT_RATIOS,
            ranges: NormalizationRanges::default(),
            rig: CameraRig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        validate_ratios(&self.ratios)?;
        if !self.ranges.validate() {
            return Err(DatasetError::Config("normalization ranges must satisfy lo < hi".into()));
        }
        self.rig.validate().map_err(DatasetError::Config)?;
        Ok(())
    }

    pub fn episode_config(&self, episode: usize) -> EpisodeConfig {
        EpisodeConfig {
            seed: rng::derive_seed(self.seed, episode as u64),
            duration_s: self.duration_s,
            traffic_density: self.traffic_density,
            ..EpisodeConfig::default()
        }
    }
}

/// One simulated episode: cleaned records with their rendered frames.
#[derive(Debug, Clone)]
pub struct EpisodeFrames {
    pub episode: usize,
    pub kept: Vec<(LabeledFrame, Frame)>,
    pub rejected: Vec<Rejected>,
}

pub fn simulate_episode(world: &World, cfg: &DatasetConfig, episode: usize) -> Result<EpisodeFrames, DatasetError> {
    let ecfg = cfg.episode_config(episode);
    let trace = sim::run_episode(world, &ecfg, &mut GroundTruth)?;
    let raw = trace
        .snapshots
        .iter()
        .map(|s| RawRecord::from_snapshot(episode, ecfg.seed, s))
        .collect();
    let (kept, rejected) = clean(raw, &cfg.ranges);
    let kept = kept
        .into_iter()
        .map(|rec| {
            let frame = raster::render(world, &trace.snapshots[rec.tick as usize], &cfg.rig);
            (rec, frame)
        })
        .collect();
    Ok(EpisodeFrames {
        episode,
        kept,
        rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecords {
    pub episodes: Vec<usize>,
    pub records: Vec<LabeledFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    /// Per-channel RGB mean over the training frames.
    pub channel_means: [f64; 3],
    pub focal_px: f64,
    pub train: SplitRecords,
    pub val: SplitRecords,
    pub test: SplitRecords,
    pub rejected: Vec<Rejected>,
}

impl DatasetManifest {
    pub fn split(&self, index: usize) -> &SplitRecords {
        match index {
            0 => &self.train,
            1 => &self.val,
            _ => &self.test,
        }
    }

    pub fn split_by_name(&self, name: &str) -> Option<&SplitRecords> {
        SPLIT_NAMES.iter().position(|&n| n == name).map(|i| self.split(i))
    }

    pub fn total_frames(&self) -> usize {
        (0..3).map(|i| self.split(i).records.len()).sum()
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn pixel_sums(frames: &[&Frame]) -> ([u64; 3], u64) {
    let mut sum = [0u64; 3];
    let mut count = 0;
    for f in frames {
        for px in f.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        count += (f.width * f.height) as u64;
    }
    (sum, count)
}

fn assemble(cfg: &DatasetConfig, episodes: &[EpisodeFrames]) -> Result<DatasetManifest, DatasetError> {
    let ids: Vec<usize> = episodes.iter().map(|e| e.episode).collect();
    let splits = split_episodes(&ids, &cfg.ratios, cfg.seed)?;
    let by_id = |id: usize| episodes.iter().find(|e| e.episode == id).expect("episode ids come from the list");

    let mut sum = [0u64; 3];
    let mut count = 0u64;
    for &id in &splits[0] {
        let frames: Vec<&Frame> = by_id(id).kept.iter().map(|(_, f)| f).collect();
        let (s, c) = pixel_sums(&frames);
        for k in 0..3 {
            sum[k] += s[k];
        }
        count += c;
    }
    if count == 0 {
        return Err(DatasetError::EmptyTrain);
    }
    let channel_means = sum.map(|s| s as f64 / count as f64);

    let records = |ids: &Vec<usize>| {
        let mut ids = ids.clone();
        ids.sort_unstable();
        let records = ids
            .iter()
            .flat_map(|&id| by_id(id).kept.iter().map(|(r, _)| r.clone()))
            .collect();
        SplitRecords { episodes: ids, records }
    };
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        channel_means,
        focal_px: cfg.rig.focal(),
        train: records(&splits[0]),
        val: records(&splits[1]),
        test: records(&splits[2]),
        rejected: episodes.iter().flat_map(|e| e.rejected.iter().cloned()).collect(),
    })
}

/// Simulates `cfg.episodes` episodes and writes the dataset under `out`.
pub fn generate_dataset(world: &World, cfg: &DatasetConfig, out: &Path) -> Result<DatasetManifest, DatasetError> {
    cfg.validate()?;
    fs::create_dir_all(out.join("frames"))?;
    let episodes: Vec<EpisodeFrames> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let ep = simulate_episode(world, cfg, i)?;
            for (rec, frame) in &ep.kept {
                fs::write(out.join(&rec.frame), frame.to_ppm())?;
            }
            Ok(ep)
        })
        .collect::<Result<_, DatasetError>>()?;
    let manifest = assemble(cfg, &episodes)?;
    for (i, name) in SPLIT_NAMES.iter().enumerate() {
        let mut lines = String::new();
        for rec in &manifest.split(i).records {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        fs::write(out.join(format!("{name}.jsonl")), lines)?;
    }
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads the frame of a record from a dataset directory.
pub fn load_frame(dir: &Path, rec: &LabeledFrame) -> Result<Frame, DatasetError> {
    let path: PathBuf = dir.join(&rec.frame);
    Ok(Frame::from_ppm(&fs::read(path)?)?)
}

/// A dataset held in memory at reduced resolution.
#[derive(Debug, Clone)]
pub struct MemoryDataset {
    pub manifest: DatasetManifest,
    /// Frames per split, aligned with the manifest records.
    pub frames: [Vec<Frame>; 3],
}

/// Runs episodes in order until `target_frames` clean frames exist (the
/// last episode is truncated), splits by episode and keeps frames
/// downsampled by `factor`. Channel means are taken over the downsampled
/// training frames.
pub fn generate_in_memory(
    world: &World,
    cfg: &DatasetConfig,
    target_frames: usize,
    factor: usize,
) -> Result<MemoryDataset, DatasetError> {
    cfg.validate()?;
    let mut episodes: Vec<EpisodeFrames> = Vec::new();
    let mut have = 0;
    let batch = rayon::current_num_threads().max(4);
    let mut next = 0;
    while have < target_frames {
        let chunk: Vec<EpisodeFrames> = (next..next + batch)
            .into_par_iter()
            .map(|i| {
                let mut ep = simulate_episode(world, cfg, i)?;
                ep.kept = ep.kept.into_iter().map(|(r, f)| (r, f.downsample(factor))).collect();
                Ok(ep)
            })
            .collect::<Result<_, DatasetError>>()?;
        next += batch;
        for mut ep in chunk {
            if have >= target_frames {
                break;
            }
            ep.kept.truncate(target_frames - have);
            have += ep.kept.len();
            if !ep.kept.is_empty() {
                episodes.push(ep);
            }
        }
        if next > 100 * target_frames.max(1) {
            return Err(DatasetError::Config("episodes yield no clean frames".into()));
        }
    }
    let manifest = assemble(&DatasetConfig { episodes: episodes.len(), ..cfg.clone() }, &episodes)?;
    let frames = [0, 1, 2].map(|i| {
        manifest
            .split(i)
            .records
            .iter()
            .map(|r| {
                let ep = episodes.iter().find(|e| e.episode == r.episode).expect("split from these episodes");
                ep.kept.iter().find(|(k, _)| k.tick == r.tick).expect("record present").1.clone()
            })
            .collect()
    });
    Ok(MemoryDataset { manifest, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::decode;

    fn record(i: usize, a: Option<AffordanceVector>) -> RawRecord {
        RawRecord {
            episode: i / 41,
            episode_seed: 0,
            tick: (i % 41) as u64,
            sim_time: 0.25 * (i % 41) as f64,
            time_of_day: 100.0,
            segment: Some(0),
            affordances: a,
            off_road: false,
            collided: false,
        }
    }

    fn valid() -> AffordanceVector {
        AffordanceVector([Some(1.5), None, Some(30.0), None, None, Some(1.9), Some(1.8), Some(5.5)])
    }

    #[test]
    fn all_valid_batch_is_kept() {
        let recs: Vec<_> = (0..50).map(|i| record(i, Some(valid()))).collect();
        let (kept, rejected) = clean(recs, &NormalizationRanges::default());
        assert_eq!(kept.len(), 50);
        assert!(rejected.is_empty());
    }

    #[test]
    fn nan_angle_is_rejected() {
        let mut a = valid();
        a.set(Affordance::Angle, Some(f64::NAN));
        let (kept, rejected) = clean(vec![record(0, Some(a))], &NormalizationRanges::default());
        assert!(kept.is_empty());
        assert_eq!(rejected[0].reason, "non-finite label");
    }

    #[test]
    fn injected_fault_rate_is_recovered() {
        let mut recs: Vec<_> = (0..1000).map(|i| record(i, Some(valid()))).collect();
        let mut faults = 0;
        for i in (0..1000).step_by(29).take(34) {
            match faults % 4 {
                0 => recs[i].off_road = true,
                1 => recs[i].collided = true,
                2 => recs[i].affordances.as_mut().unwrap().0[0] = Some(f64::INFINITY),
                _ => recs[i].affordances.as_mut().unwrap().0[5] = Some(-2.0),
            }
            faults += 1;
        }
        let (kept, rejected) = clean(recs, &NormalizationRanges::default());
        assert_eq!(rejected.len(), 34);
        assert_eq!(kept.len(), 966);
        assert!((rejected.len() as f64 / 1000.0 - 0.034).abs() < 1e-15);
    }

    #[test]
    fn thousand_episode_split_counts() {
        let ids: Vec<usize> = (0..1000).collect();
        let [train, val, test] = split_episodes(&ids, &DEFAULT_RATIOS, 11).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (725, 137, 138));
        let mut all: Vec<_> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(split_episodes(&ids, &DEFAULT_RATIOS, 11).unwrap()[1], val);
        assert!(split_episodes(&ids, &[0.5, 0.5, 0.5], 1).is_err());
    }

    #[test]
    fn small_dataset_on_disk() {
        let world = World::from_file(&crate::world::demo_world_file(2)).unwrap();
        let cfg = DatasetConfig {
            episodes: 6,
            seed: 4,
            duration_s: 2.0,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&world, &cfg, dir.path()).unwrap();
        assert_eq!(
            m.train.episodes.len() + m.val.episodes.len() + m.test.episodes.len(),
            6
        );
        let back = DatasetManifest::read(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
        for i in 0..3 {
            for rec in &m.split(i).records {
                assert!(m.split(i).episodes.contains(&rec.episode));
                let frame = load_frame(dir.path(), rec).unwrap();
                assert_eq!(frame.data.len(), 210 * 280 * 3);
                let dec = decode(&rec.encoded.0, &m.config.ranges);
                for v in Affordance::ALL {
                    match (dec.get(v), rec.raw.get(v)) {
                        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                        (None, None) => {}
                        other => panic!("{v}: {other:?}"),
                    }
                }
            }
        }
        let lines = fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), m.train.records.len());
    }
}
