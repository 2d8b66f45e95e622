//! Implementations of the command line verbs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drivelab::affordance::{decode, Affordance, AffordanceVector, NormalizationRanges};
use drivelab::control::ControllerGains;
use drivelab::dataset::{generate_dataset, load_frame, DatasetConfig, DatasetManifest};
use drivelab::ingest::GeoBBox;
use drivelab::learn::{evaluate, format_mse_table, predict_all, train, EvalReport, InputTransform, Model, RegressorSpec, TrainConfig, TrainSet, Workspace};
use drivelab::raster::{channel_means, render, CameraRig, Frame};
use drivelab::road::DEFAULT_LANE_WIDTH;
use drivelab::scenario::{builtin_scenarios, run_sweep, GridAxis, ScenarioFile, SweepReport};
use drivelab::sim::{run_episode, EpisodeConfig, GroundTruth, Perception, Scene, Trace};
use drivelab::world::{ingest as ingest_map, World, WorldFile};

/// Parses `lat,lon,lat,lon` (south-west corner, then north-east corner).
pub fn parse_bbox(text: &str) -> Result<GeoBBox> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad coordinate `{s}` in bbox")))
        .collect::<Result<_>>()?;
    let [a, b, c, d] = v[..] else {
        bail!("bbox needs four numbers lat,lon,lat,lon, got {}", v.len());
    };
    Ok(GeoBBox::new(a, b, c, d)?)
}

pub fn ingest(map: &Path, bbox: &str, seed: u64, out: &Path) -> Result<String> {
    let bytes = fs::read(map).with_context(|| format!("reading {}", map.display()))?;
    let result = ingest_map(&bytes, parse_bbox(bbox)?, seed, DEFAULT_LANE_WIDTH)?;
    result.world.write(out)?;
    Ok(format!(
        "{} roads, {} buildings, {} rejected features, {} unknown features skipped -> {}",
        result.world.roads.len(),
        result.world.buildings.len(),
        result.rejections.len(),
        result.skipped_unknown,
        out.display()
    ))
}

fn load_world(path: &Path) -> Result<World> {
    let file = WorldFile::read(path).with_context(|| format!("reading world {}", path.display()))?;
    Ok(World::from_file(&file)?)
}

pub fn generate(world: &Path, episodes: usize, seed: u64, duration_s: f64, out: &Path) -> Result<DatasetManifest> {
    let world = load_world(world)?;
    let cfg = DatasetConfig {
        episodes,
        seed,
        duration_s,
        ..Default::default()
    };
    Ok(generate_dataset(&world, &cfg, out)?)
}

/// Frames of one split, downsampled by `factor`, with their encoded labels.
fn load_split(dir: &Path, manifest: &DatasetManifest, split: &str, factor: usize) -> Result<(Vec<Frame>, Vec<[f64; 8]>)> {
    let records = manifest.split_by_name(split).with_context(|| format!("no split `{split}`"))?;
    let mut frames = Vec::with_capacity(records.records.len());
    let mut targets = Vec::with_capacity(records.records.len());
    for rec in &records.records {
        frames.push(load_frame(dir, rec)?.downsample(factor));
        targets.push(rec.encoded.0);
    }
    Ok((frames, targets))
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub seed: u64,
    pub factor: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Trains from a dataset directory, writing a checkpoint per epoch, the
/// loss history and the validation MSE table under `out`.
pub fn train_model(args: &TrainArgs, log: &mut dyn FnMut(&str)) -> Result<PathBuf> {
    let manifest = DatasetManifest::read(&args.dataset.join("manifest.json"))?;
    let (frames, targets) = load_split(&args.dataset, &manifest, "train", args.factor)?;
    let (val_frames, val_targets) = load_split(&args.dataset, &manifest, "val", args.factor)?;
    let first = frames.first().context("training split is empty")?;
    let spec = RegressorSpec {
        height: first.height,
        width: first.width,
        ..Default::default()
    };
    let transform = InputTransform {
        means: channel_means(&frames)?,
        ..Default::default()
    };
    let mut model = Model::new(spec, transform, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        ..Default::default()
    };
    let set = TrainSet { frames: &frames, targets };
    let val_set = TrainSet {
        frames: &val_frames,
        targets: val_targets,
    };
    let ranges = manifest.config.ranges;
    let val = (!val_set.is_empty()).then_some((&val_set, &ranges));
    let out = args.out.clone();
    let history = train(&mut model, &set, val, &cfg, &mut |m, stats| {
        log(&format!("epoch {:>3}  train loss {:.6}", stats.epoch, stats.train_loss));
        m.save(&out.join(format!("epoch-{:03}.ckpt", stats.epoch)), stats.epoch)
    })?;
    let last = args.out.join("model.ckpt");
    model.save(&last, args.epochs)?;
    fs::write(args.out.join("history.json"), serde_json::to_string_pretty(&history)?)?;
    fs::write(args.out.join("val_mse.txt"), format_mse_table(&history, false))?;
    Ok(last)
}

/// Per-variable table: MSE (normalized and physical) and inactive detection.
pub fn format_eval(report: &EvalReport) -> String {
    let mut out = format!(
        "{:<9} {:>7} {:>10} {:>12} {:>10} {:>8}\n",
        "variable", "active", "mse", "mse_phys", "precision", "recall"
    );
    for var in Affordance::ALL {
        let v = &report.variables[var.index()];
        let d = &report.inactive[var.index()];
        let _ = writeln!(
            out,
            "{:<9} {:>7} {:>10.5} {:>12.5} {:>10.3} {:>8.3}",
            var.name(),
            v.active,
            v.mse,
            v.mse_physical,
            d.precision,
            d.recall
        );
    }
    out
}

pub fn eval_model(dataset: &Path, model: &Path, split: &str, out: Option<&Path>) -> Result<EvalReport> {
    let manifest = DatasetManifest::read(&dataset.join("manifest.json"))?;
    let (model, _) = Model::load(model)?;
    let factor = manifest.config.rig.width / model.spec.width;
    let (frames, targets) = load_split(dataset, &manifest, split, factor.max(1))?;
    model.check_frames(&frames)?;
    let pred = predict_all(&model, &frames);
    let report = evaluate(&pred, &targets, &manifest.config.ranges)?;
    if let Some(out) = out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Affordances read off the ego camera by a trained model.
pub struct LearnedPerception {
    model: Model,
    rig: CameraRig,
    factor: usize,
    ranges: NormalizationRanges,
    ws: Workspace,
    buf: Vec<f64>,
}

impl LearnedPerception {
    pub fn new(model: Model, rig: CameraRig, ranges: NormalizationRanges) -> Result<Self> {
        let factor = rig.width / model.spec.width;
        if factor == 0 || rig.height / factor != model.spec.height {
            bail!(
                "model input {}x{} does not divide the {}x{} camera",
                model.spec.width,
                model.spec.height,
                rig.width,
                rig.height
            );
        }
        let ws = model.workspace();
        let buf = vec![0.0; model.spec.input_len()];
        Ok(LearnedPerception { model, rig, factor, ranges, ws, buf })
    }
}

impl Perception for LearnedPerception {
    fn perceive(&mut self, scene: &Scene, world: &World, _ego: usize) -> Option<AffordanceVector> {
        let frame = render(world, &scene.snapshot(world, 0), &self.rig).downsample(self.factor);
        let out = self.model.predict(&frame, &mut self.ws, &mut self.buf);
        Some(decode(&out, &self.ranges))
    }
}

pub fn read_gains(path: &Path) -> Result<ControllerGains> {
    let gains: ControllerGains = serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing gains {}", path.display()))?;
    gains.validate().map_err(anyhow::Error::msg)?;
    Ok(gains)
}

pub struct DriveArgs {
    pub world: PathBuf,
    pub seed: u64,
    pub duration_s: f64,
    pub gains: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
}

/// Runs one closed-loop episode and writes its trace as JSON lines.
pub fn drive(args: &DriveArgs) -> Result<Trace> {
    let world = load_world(&args.world)?;
    let mut cfg = EpisodeConfig {
        seed: args.seed,
        duration_s: args.duration_s,
        ..Default::default()
    };
    if let Some(path) = &args.gains {
        cfg.ego_gains = read_gains(path)?;
    }
    let trace = match &args.model {
        None => run_episode(&world, &cfg, &mut GroundTruth)?,
        Some(path) => {
            let (model, _) = Model::load(path)?;
            let mut perception = LearnedPerception::new(model, CameraRig::default(), NormalizationRanges::default())?;
            run_episode(&world, &cfg, &mut perception)?
        }
    };
    fs::write(&args.out, trace.to_jsonl())?;
    Ok(trace)
}

/// A built-in scenario id or a path to a scenario file.
pub fn resolve_scenario(name: &str) -> Result<ScenarioFile> {
    if let Some(f) = builtin_scenarios().into_iter().find(|f| f.id == name) {
        return Ok(f);
    }
    let text = fs::read_to_string(name).with_context(|| format!("`{name}` is neither a built-in scenario nor a readable file"))?;
    let file = ScenarioFile::from_json(&text)?;
    file.validate()?;
    Ok(file)
}

/// Runs a sweep and writes `<out>.json` and `<out>.csv`.
pub fn sweep(scenario: &str, params: &[String], seed: u64, out: &Path) -> Result<SweepReport> {
    let file = resolve_scenario(scenario)?;
    let grid = params.iter().map(|p| GridAxis::parse(p)).collect::<Result<Vec<_>, _>>()?;
    let report = run_sweep(&file, &grid, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out.with_extension("json"), report.to_json())?;
    fs::write(out.with_extension("csv"), report.to_csv())?;
    Ok(report)
}
