use std::path::Path;
use std::process::{Command, Output};

use drivelab::dataset::DatasetManifest;
use drivelab::learn::{EpochStats, Model};
use drivelab::scenario::SweepReport;
use drivelab::sim::Snapshot;
use drivelab::world::{demo_map_geojson, demo_world_file, WorldFile};

const DEMO_BBOX: &str = "29.60,-82.40,29.64,-82.34";

fn drivelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivelab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = drivelab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn shipped_demo_map_matches_the_generator() {
    let shipped = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo_map.geojson")).unwrap();
    assert_eq!(shipped.trim_end(), demo_map_geojson().trim_end());
}

#[test]
fn full_pipeline_from_map_to_closed_loop() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.geojson");
    std::fs::write(&map, demo_map_geojson()).unwrap();
    let world = dir.path().join("world.json");
    let msg = ok(&["ingest", "--map", p(&map), "--bbox", DEMO_BBOX, "--seed", "3", "--out", p(&world)]);
    assert!(msg.contains("5 roads"), "{msg}");
    assert_eq!(WorldFile::read(&world).unwrap(), demo_world_file(3));

    let data = dir.path().join("data");
    let args = ["generate-dataset", "--world", p(&world), "--episodes", "6", "--seed", "2", "--duration", "3", "--out", p(&data)];
    ok(&args);
    let manifest = DatasetManifest::read(&data.join("manifest.json")).unwrap();
    assert!(manifest.train.records.len() > 10);

    let models = dir.path().join("models");
    let log = ok(&["train", "--dataset", p(&data), "--out", p(&models), "--epochs", "2", "--seed", "1"]);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let history: Vec<EpochStats> = serde_json::from_str(&std::fs::read_to_string(models.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.len(), 3);
    assert!(history[2].train_loss < history[0].train_loss);
    for k in 0..=2 {
        assert_eq!(Model::load(&models.join(format!("epoch-{k:03}.ckpt"))).unwrap().1, k);
    }
    let ckpt = models.join("model.ckpt");

    let report = dir.path().join("eval.json");
    let table = ok(&["eval", "--dataset", p(&data), "--model", p(&ckpt), "--split", "train", "--out", p(&report)]);
    assert_eq!(table.lines().count(), 9);
    assert!(table.lines().nth(1).unwrap().starts_with("angle"));
    assert!(report.exists());

    let trace = dir.path().join("trace.jsonl");
    ok(&["drive", "--world", p(&world), "--seed", "4", "--duration", "5", "--out", p(&trace)]);
    let snaps: Vec<Snapshot> = std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!snaps.is_empty() && snaps.len() <= 21);
    assert!(snaps.iter().enumerate().all(|(k, s)| s.sim_time == k as f64 * 0.25));

    let gains = dir.path().join("gains.json");
    std::fs::write(&gains, serde_json::to_string(&drivelab::control::ControllerGains { v0: 15.0, ..Default::default() }).unwrap()).unwrap();
    let tuned = dir.path().join("tuned.jsonl");
    ok(&["drive", "--world", p(&world), "--seed", "4", "--duration", "1", "--gains", p(&gains), "--out", p(&tuned)]);
    let learned = dir.path().join("learned.jsonl");
    let args = ["drive", "--world", p(&world), "--seed", "4", "--duration", "1", "--gains", p(&gains), "--model", p(&ckpt), "--out", p(&learned)];
    ok(&args);
    let first = |path: &Path| -> Snapshot { serde_json::from_str(std::fs::read_to_string(path).unwrap().lines().next().unwrap()).unwrap() };
    assert_eq!(first(&learned), first(&tuned));
    assert_eq!(std::fs::read_to_string(&learned).unwrap().lines().count(), 5);
}

#[test]
fn sweep_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("truck");
    let csv = ok(&["sweep", "--scenario", "truck_turn_crash", "--param", "truck_speed=10:14:2", "--seed", "5", "--out", p(&out)]);
    assert_eq!(csv.lines().count(), 4);
    let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.seed, 5);
    assert_eq!(std::fs::read_to_string(out.with_extension("csv")).unwrap(), csv);

    let file = dir.path().join("custom.json");
    let mut custom = drivelab::scenario::truck_turn_crash();
    custom.id = "custom".into();
    std::fs::write(&file, custom.to_json()).unwrap();
    let again = dir.path().join("again");
    ok(&["sweep", "--scenario", p(&file), "--param", "truck_speed=10:14:2", "--seed", "5", "--out", p(&again)]);
    let other: SweepReport = serde_json::from_str(&std::fs::read_to_string(again.with_extension("json")).unwrap()).unwrap();
    assert_eq!(other.rows, report.rows);
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = drivelab(&["sweep", "--scenario", "truck_turn_crash", "--param", "truck_speed=20:40:5", "--out", p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("maximum 30"));

    let map = dir.path().join("map.geojson");
    std::fs::write(&map, demo_map_geojson()).unwrap();
    let out = drivelab(&["ingest", "--map", p(&map), "--bbox", "29.6,-82.4,29.64", "--out", p(&dir.path().join("w.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("four numbers"));
}
