use std::collections::BTreeMap;

use drivelab::geom::Vec3;
use drivelab::scenario::{
    expand_grid, pedestrian_crossing, run_scenario, run_sweep, truck_turn_crash, visibility, GridAxis, Motion, OccluderBox, ScenarioFile, Value,
};
use drivelab::sim::{Actor, ActorKind, Driver, Pose};

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn controller_brakes_for_the_pedestrian() {
    let file = pedestrian_crossing();
    let run = run_scenario(&file, &BTreeMap::new(), 0).unwrap();
    assert!(!run.row.collision, "min distance {}", run.row.min_distance);
    assert!(run.row.first_visibility_time.is_some());
    let ego_speeds: Vec<f64> = run.trace.snapshots.iter().map(|s| s.ego_state().unwrap().speed).collect();
    let slowest = ego_speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(slowest < 0.5 * ego_speeds[0], "{slowest}");
}

#[test]
fn a_driver_that_never_brakes_hits_the_pedestrian() {
    let mut file = pedestrian_crossing();
    let Motion::Lane { arrival, heading_deg, speed, .. } = file.ego.motion.clone() else {
        panic!("pedestrian scenario ego is a lane driver");
    };
    file.ego.motion = Motion::Constant {
        position: None,
        arrival,
        heading_deg,
        speed,
    };
    let run = run_scenario(&file, &BTreeMap::new(), 0).unwrap();
    assert!(run.row.collision);
    let contact = run.row.contact_time.unwrap();
    // the pedestrian enters the lane at 3 s and the ego reaches the line 2 s later
    assert!(contact > 3.0 && contact < 5.5, "{contact}");
}

#[test]
fn parked_off_road_truck_is_never_hit() {
    let mut file = truck_turn_crash();
    file.actors[0].motion = Motion::Constant {
        position: Some([Value::Num(40.0), Value::Num(60.0)]),
        arrival: None,
        heading_deg: Value::Num(90.0),
        speed: Value::param("truck_speed"),
    };
    let grid = [
        GridAxis::parse("truck_speed=0").unwrap(),
        GridAxis::parse("ego_speed=0:40:5").unwrap(),
    ];
    let report = run_sweep(&file, &grid, 0).unwrap();
    assert_eq!(report.rows.len(), 9);
    assert!(report.rows.iter().all(|r| !r.collision && r.contact_time.is_none() && r.stoppable));
}

#[test]
fn sweep_report_shapes() {
    let file = truck_turn_crash();
    let grid = [GridAxis::parse("truck_speed=10:12:1").unwrap(), GridAxis::parse("ego_speed=25:29:2").unwrap()];
    assert_eq!(expand_grid(&file, &grid).unwrap().len(), 9);
    let report = run_sweep(&file, &grid, 3).unwrap();
    assert_eq!(report.rows.len(), 9);
    assert!(report.rows.iter().enumerate().all(|(i, r)| r.index == i));
    assert_eq!(report.to_csv().lines().count(), 10);
    let again = run_sweep(&file, &grid, 3).unwrap();
    assert_eq!(report.to_json(), again.to_json());

    let err = run_sweep(&file, &[GridAxis::parse("truck_speed=20:40:5").unwrap()], 0).unwrap_err();
    assert!(err.to_string().contains("30"), "{err}");
}

#[test]
fn never_visible_targets_are_not_stoppable() {
    let mut file = truck_turn_crash();
    file.occluders.push(OccluderBox::axis_aligned([-1200.0, -20.0, 0.0], [1200.0, -15.0, 50.0]));
    file.occluders.push(OccluderBox::axis_aligned([-1200.0, 1.9, 0.0], [1200.0, 12.1, 50.0]));
    let run = run_scenario(&file, &params(&[("truck_speed", 15.0)]), 0).unwrap();
    assert!(run.row.collision);
    // the truck enters the ego road only moments before contact
    if run.row.first_visibility_time.is_none() {
        assert!(!run.row.stoppable);
    }
}

#[test]
fn scenario_files_round_trip_and_validate() {
    for file in [pedestrian_crossing(), truck_turn_crash()] {
        let text = file.to_json();
        let back = ScenarioFile::from_json(&text).unwrap();
        assert_eq!(back, file);
        assert!(back.validate().is_ok());
    }
    let mut broken: serde_json::Value = serde_json::from_str(&truck_turn_crash().to_json()).unwrap();
    broken["ego"]["motion"]["type"] = "teleport".into();
    assert!(ScenarioFile::from_json(&broken.to_string()).is_err());
    let err = truck_turn_crash().resolve_params(&params(&[("ego_speed", -1.0)])).unwrap_err();
    assert!(err.to_string().contains("minimum 0"), "{err}");
}

#[test]
fn growing_occluders_never_raise_visibility() {
    let target = Actor::new(1, ActorKind::Truck, Pose { x: 40.0, y: 8.0, heading: 2.0 }, 0.0, [0; 3], Driver::Constant).state();
    let eye = Vec3::new(0.0, 0.0, 1.2);
    for axis in 0..3 {
        let mut last = 1.0;
        for k in 0..=20 {
            let g = 0.4 * k as f64;
            let mut min = [18.0, 2.0, 0.0];
            let mut max = [19.0, 4.0, 1.0];
            match axis {
                0 => min[1] -= g,
                1 => max[1] += g,
                _ => max[2] += g,
            }
            let f = visibility(eye, &target, &[OccluderBox::axis_aligned(min, max)]);
            assert!(f <= last + 1e-12, "axis {axis} step {k}: {f} > {last}");
            last = f;
        }
    }
}
