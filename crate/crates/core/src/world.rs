//! The world file: local frame, roads with derived lane tables, extruded
//! buildings and the seed they were drawn with. `World` is its loaded,
//! queryable form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Polyline, Vec2};
use crate::ingest::{self, GeoBBox, LocalFrame, MapError, Rejection};
use crate::road::{Direction, RoadError, RoadNetwork, RoadSegment, DEFAULT_LANE_WIDTH, MIN_POINT_SPACING};

pub const WORLD_FILE_VERSION: u32 = 1;
pub const TWO_WAY_SPLIT_RULE: &str = "odd lane counts give the extra lane to the forward (digitization) direction";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error("world file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("world file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported world file version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneTable {
    pub lanes: usize,
    pub markings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldRoad {
    pub centerline: Polyline,
    pub lanes: u8,
    pub oneway: bool,
    pub forward: LaneTable,
    pub backward: LaneTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldBuilding {
    /// Base polygon in local meters, counterclockwise or clockwise.
    pub footprint: Vec<[f64; 2]>,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub version: u32,
    pub seed: u64,
    pub bbox: Option<GeoBBox>,
    pub frame: LocalFrame,
    pub lane_width: f64,
    pub two_way_split: String,
    pub roads: Vec<WorldRoad>,
    pub buildings: Vec<WorldBuilding>,
}

impl WorldFile {
    pub fn read(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        let file: WorldFile = serde_json::from_str(&text)?;
        if file.version != WORLD_FILE_VERSION {
            return Err(WorldError::Version(file.version));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Outcome of turning a map document into a world file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub world: WorldFile,
    pub rejections: Vec<Rejection>,
    pub skipped_unknown: usize,
}

fn dedupe(points: Vec<Vec2>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().map_or(true, |q| (p - q).norm() >= MIN_POINT_SPACING) {
            out.push(p);
        }
    }
    out
}

/// Parses a map, keeps the features inside `bbox`, projects them about the
/// box center and draws building heights from `seed`.
pub fn ingest(map: &[u8], bbox: GeoBBox, seed: u64, lane_width: f64) -> Result<Ingested, WorldError> {
    bbox.validate()?;
    let parsed = ingest::parse_map(map)?;
    let frame = LocalFrame::centered_on(&bbox);
    let mut rejections = parsed.rejections;

    let mut roads = Vec::new();
    for (i, raw) in parsed.roads.iter().enumerate() {
        if !raw.points.iter().all(|&(lat, lon)| bbox.contains(lat, lon)) {
            rejections.push(Rejection {
                feature: i,
                reason: "road leaves the bounding box".into(),
            });
            continue;
        }
        let pts: Result<Vec<Vec2>, _> = raw.points.iter().map(|&(lat, lon)| frame.to_local(lat, lon)).collect();
        let pts = dedupe(pts?);
        if pts.len() < 2 {
            rejections.push(Rejection {
                feature: i,
                reason: "road collapses to a single point".into(),
            });
            continue;
        }
        let seg = RoadSegment::new(roads.len(), Polyline::new(pts), raw.lanes, raw.oneway, lane_width)?;
        let table = |dir| LaneTable {
            lanes: seg.lanes_in(dir),
            markings: seg.marking_offsets(dir),
        };
        roads.push(WorldRoad {
            forward: table(Direction::Forward),
            backward: table(Direction::Backward),
            centerline: seg.centerline,
            lanes: raw.lanes,
            oneway: raw.oneway,
        });
    }

    let inside: Vec<_> = parsed
        .footprints
        .into_iter()
        .filter(|f| f.points.iter().all(|&(lat, lon)| bbox.contains(lat, lon)))
        .collect();
    let (raw_buildings, degenerate) = ingest::extrude_buildings(&inside, seed);
    rejections.extend(degenerate);
    let mut buildings = Vec::with_capacity(raw_buildings.len());
    for b in raw_buildings {
        let footprint: Result<Vec<[f64; 2]>, MapError> = b
            .footprint
            .points
            .iter()
            .map(|&(lat, lon)| frame.to_local(lat, lon).map(|p| [p.x, p.y]))
            .collect();
        buildings.push(WorldBuilding {
            footprint: footprint?,
            height_m: b.height_m,
        });
    }

    Ok(Ingested {
        world: WorldFile {
            version: WORLD_FILE_VERSION,
            seed,
            bbox: Some(bbox),
            frame,
            lane_width,
            two_way_split: TWO_WAY_SPLIT_RULE.into(),
            roads,
            buildings,
        },
        rejections,
        skipped_unknown: parsed.skipped_unknown,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub footprint: Vec<Vec2>,
    pub height_m: f64,
}

/// Static part of the environment: roads and buildings.
#[derive(Debug, Clone)]
pub struct World {
    pub network: RoadNetwork,
    pub buildings: Vec<Building>,
    pub lane_width: f64,
}

impl World {
    pub fn from_file(file: &WorldFile) -> Result<Self, WorldError> {
        let segments: Result<Vec<_>, _> = file
            .roads
            .iter()
            .enumerate()
            .map(|(i, r)| RoadSegment::new(i, r.centerline.clone(), r.lanes, r.oneway, file.lane_width))
            .collect();
        Ok(World {
            network: RoadNetwork::new(segments?),
            buildings: file
                .buildings
                .iter()
                .map(|b| Building {
                    footprint: b.footprint.iter().map(|&[x, y]| Vec2::new(x, y)).collect(),
                    height_m: b.height_m,
                })
                .collect(),
            lane_width: file.lane_width,
        })
    }

    /// A world with roads only, for tests and scripted scenarios.
    pub fn from_network(network: RoadNetwork) -> Self {
        let lane_width = network
            .segments()
            .first()
            .map_or(DEFAULT_LANE_WIDTH, |s| s.lane_width);
        World {
            network,
            buildings: Vec::new(),
            lane_width,
        }
    }
}

pub const DEMO_BBOX: GeoBBox = GeoBBox {
    lat_min: 29.60,
    lon_min: -82.40,
    lat_max: 29.64,
    lon_max: -82.34,
};

/// A small highway map in the accepted GeoJSON subset: five roads covering
/// every lane count and both one-way and two-way layouts, plus roadside
/// building footprints.
pub fn demo_map_geojson() -> String {
    let frame = LocalFrame::centered_on(&DEMO_BBOX);
    let geo = |p: Vec2| frame.to_geo(p);
    let mut roads = Vec::new();
    let specs: [(f64, u8, bool, f64); 5] = [
        (-1200.0, 3, true, 0.0),
        (-700.0, 2, true, 25.0),
        (-200.0, 4, false, 0.0),
        (300.0, 5, true, -30.0),
        (800.0, 2, false, 15.0),
    ];
    for &(y0, lanes, oneway, bend) in &specs {
        // 2.4 km long, gently bending by `bend` meters over its length
        let pts: Vec<(f64, f64)> = (0..=48)
            .map(|k| {
                let x = -1200.0 + 50.0 * k as f64;
                let y = y0 + bend * (std::f64::consts::PI * k as f64 / 48.0).sin();
                geo(Vec2::new(x, y))
            })
            .collect();
        roads.push(ingest::RawRoad { points: pts, lanes, oneway });
    }
    let mut footprints = Vec::new();
    for &(y0, lanes, _, bend) in &specs {
        let clear = lanes as f64 * DEFAULT_LANE_WIDTH + 12.0 + bend.abs();
        for k in 0..12 {
            let x = -1100.0 + 190.0 * k as f64 + 13.0 * (k % 3) as f64;
            for side in [-1.0, 1.0] {
                let y = y0 + side * (clear + 8.0 * ((k + 1) % 2) as f64);
                let (w, d) = (14.0 + 3.0 * (k % 4) as f64, 10.0 + 2.0 * (k % 3) as f64);
                let near = y;
                let far = y + side * d;
                let corners = [
                    Vec2::new(x, near),
                    Vec2::new(x + w, near),
                    Vec2::new(x + w, far),
                    Vec2::new(x, far),
                ];
                footprints.push(ingest::Footprint {
                    points: corners.iter().map(|&c| geo(c)).collect(),
                });
            }
        }
    }
    ingest::to_geojson(&roads, &footprints)
}

/// The demo map ingested with `seed`.
pub fn demo_world_file(seed: u64) -> WorldFile {
    ingest(demo_map_geojson().as_bytes(), DEMO_BBOX, seed, DEFAULT_LANE_WIDTH)
        .expect("demo map is valid")
        .world
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_map_ingests_cleanly() {
        let out = ingest(demo_map_geojson().as_bytes(), DEMO_BBOX, 3, DEFAULT_LANE_WIDTH).unwrap();
        assert!(out.rejections.is_empty(), "{:?}", out.rejections);
        assert_eq!(out.world.roads.len(), 5);
        assert_eq!(out.world.buildings.len(), 120);
        let world = World::from_file(&out.world).unwrap();
        assert_eq!(world.network.segments().len(), 5);
        assert!(world
            .buildings
            .iter()
            .all(|b| (5.0..=15.0).contains(&b.height_m)));
    }

    #[test]
    fn lane_tables_are_recorded() {
        let file = demo_world_file(1);
        let two_way = &file.roads[2];
        assert!(!two_way.oneway);
        assert_eq!(two_way.forward.lanes, 2);
        assert_eq!(two_way.backward.lanes, 2);
        assert_eq!(file.roads[4].forward.lanes, 1);
        assert_eq!(file.roads[0].forward.markings.len(), 4);
        assert_eq!(file.roads[0].backward.lanes, 0);
    }

    #[test]
    fn world_file_roundtrips() {
        let file = demo_world_file(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        file.write(&path).unwrap();
        assert_eq!(WorldFile::read(&path).unwrap(), file);
    }
}
