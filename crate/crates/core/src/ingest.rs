//! Map ingestion: a GeoJSON subset of roads and building footprints, an
//! equirectangular local frame, and seeded building extrusion.
//!
//! Accepted document shape:
//!
//! ```json
//! {"type": "FeatureCollection", "features": [
//!   {"type": "Feature",
//!    "geometry": {"type": "LineString", "coordinates": [[lon, lat], ...]},
//!    "properties": {"kind": "road", "lanes": 3, "oneway": true}},
//!   {"type": "Feature",
//!    "geometry": {"type": "Polygon", "coordinates": [[[lon, lat], ...]]},
//!    "properties": {"kind": "building"}}
//! ]}
//! ```
//!
//! The projection is equirectangular about the bounding-box center with
//! `111320 * cos(lat0)` meters per degree of longitude. It is only accepted
//! within one degree of the origin.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geom::{is_simple_polygon, polygon_area, Vec2};
use crate::rng;

pub const METERS_PER_DEG_LAT: f64 = 111_320.0;
/// Half-width of the equirectangular validity window, degrees.
pub const VALIDITY_WINDOW_DEG: f64 = 1.0;
pub const MIN_BUILDING_HEIGHT: f64 = 5.0;
pub const MAX_BUILDING_HEIGHT: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("point ({lat}, {lon}) is outside the projection window around ({origin_lat}, {origin_lon})")]
    Range {
        lat: f64,
        lon: f64,
        origin_lat: f64,
        origin_lon: f64,
    },
    #[error("invalid bounding box: {0}")]
    BBox(String),
}

/// Latitude/longitude window in WGS84 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBBox {
    pub lat_min: f64,
    pub lon_min: f64,
    pub lat_max: f64,
    pub lon_max: f64,
}

impl GeoBBox {
    pub fn new(lat_min: f64, lon_min: f64, lat_max: f64, lon_max: f64) -> Result<Self, MapError> {
        let b = GeoBBox {
            lat_min,
            lon_min,
            lat_max,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let vals = [self.lat_min, self.lon_min, self.lat_max, self.lon_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(MapError::BBox("non-finite coordinate".into()));
        }
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(MapError::BBox("min must be below max".into()));
        }
        if self.lat_min.abs() > 85.0 || self.lat_max.abs() > 85.0 {
            return Err(MapError::BBox("|lat| must not exceed 85".into()));
        }
        if self.lat_max - self.lat_min > 2.0 * VALIDITY_WINDOW_DEG
            || self.lon_max - self.lon_min > 2.0 * VALIDITY_WINDOW_DEG
        {
            return Err(MapError::BBox("box exceeds the projection window".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lat_min + self.lat_max),
            0.5 * (self.lon_min + self.lon_max),
        )
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

/// Parses `lat_min,lon_min,lat_max,lon_max`.
impl FromStr for GeoBBox {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Ok(v) if v.len() == 4 => GeoBBox::new(v[0], v[1], v[2], v[3]),
            _ => Err(MapError::BBox(format!("expected lat,lon,lat,lon, got {s:?}"))),
        }
    }
}

/// Road polyline as read from the map, `(lat, lon)` degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRoad {
    pub points: Vec<(f64, f64)>,
    pub lanes: u8,
    pub oneway: bool,
}

/// Building base polygon without its closing vertex, `(lat, lon)` degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBuilding {
    pub footprint: Footprint,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub feature: usize,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "feature {}: {}", self.feature, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedMap {
    pub roads: Vec<RawRoad>,
    pub footprints: Vec<Footprint>,
    pub rejections: Vec<Rejection>,
    /// Features whose `kind` is neither road nor building.
    pub skipped_unknown: usize,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn read_position(v: &Value) -> Option<(f64, f64)> {
    let arr = v.as_array()?;
    if arr.len() < 2 {
        return None;
    }
    let lon = arr[0].as_f64()?;
    let lat = arr[1].as_f64()?;
    (lat.is_finite() && lon.is_finite()).then_some((lat, lon))
}

fn read_positions(v: &Value) -> Option<Vec<(f64, f64)>> {
    v.as_array()?.iter().map(read_position).collect()
}

fn parse_road(geometry: &Value, props: &Value) -> Result<RawRoad, String> {
    if geometry.get("type").and_then(Value::as_str) != Some("LineString") {
        return Err("road geometry must be a LineString".into());
    }
    let points = geometry
        .get("coordinates")
        .and_then(read_positions)
        .ok_or("road coordinates malformed")?;
    if points.len() < 2 {
        return Err(format!("road needs at least 2 points, has {}", points.len()));
    }
    let lanes = props
        .get("lanes")
        .and_then(Value::as_i64)
        .ok_or("road lanes missing or not an integer")?;
    if !(2..=5).contains(&lanes) {
        return Err(format!("lanes = {lanes} outside 2..=5"));
    }
    let oneway = match props.get("oneway") {
        None => false,
        Some(v) => v.as_bool().ok_or("road oneway must be a boolean")?,
    };
    Ok(RawRoad {
        points,
        lanes: lanes as u8,
        oneway,
    })
}

fn parse_building(geometry: &Value) -> Result<Footprint, String> {
    if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
        return Err("building geometry must be a Polygon".into());
    }
    let mut ring = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .and_then(|rings| rings.first())
        .and_then(read_positions)
        .ok_or("building coordinates malformed")?;
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(format!("building footprint needs 3 vertices, has {}", ring.len()));
    }
    let pts: Vec<Vec2> = ring.iter().map(|&(lat, lon)| Vec2::new(lon, lat)).collect();
    if !is_simple_polygon(&pts) {
        return Err("building footprint self-intersects".into());
    }
    Ok(Footprint { points: ring })
}

/// Classifies every feature of a GeoJSON feature collection. Malformed
/// documents fail as a whole; bad features are rejected one by one.
pub fn parse_map(bytes: &[u8]) -> Result<ParsedMap, MapError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MapError::Parse {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let doc: Value = serde_json::from_str(text).map_err(|e| MapError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(MapError::Parse {
            offset: 0,
            message: "top level must be a FeatureCollection".into(),
        });
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| MapError::Parse {
            offset: 0,
            message: "missing features array".into(),
        })?;

    let mut out = ParsedMap::default();
    let null = Value::Null;
    for (i, feature) in features.iter().enumerate() {
        let props = feature.get("properties").unwrap_or(&null);
        let geometry = feature.get("geometry").unwrap_or(&null);
        let reject = |reason: String| Rejection { feature: i, reason };
        match props.get("kind").and_then(Value::as_str) {
            Some("road") => match parse_road(geometry, props) {
                Ok(road) => out.roads.push(road),
                Err(reason) => out.rejections.push(reject(reason)),
            },
            Some("building") => match parse_building(geometry) {
                Ok(fp) => out.footprints.push(fp),
                Err(reason) => out.rejections.push(reject(reason)),
            },
            _ => out.skipped_unknown += 1,
        }
    }
    Ok(out)
}

/// Writes accepted features back out in the same GeoJSON subset.
pub fn to_geojson(roads: &[RawRoad], footprints: &[Footprint]) -> String {
    let pos = |&(lat, lon): &(f64, f64)| json!([lon, lat]);
    let mut features = Vec::with_capacity(roads.len() + footprints.len());
    for r in roads {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": r.points.iter().map(pos).collect::<Vec<_>>()},
            "properties": {"kind": "road", "lanes": r.lanes, "oneway": r.oneway},
        }));
    }
    for f in footprints {
        let mut ring: Vec<Value> = f.points.iter().map(pos).collect();
        ring.push(pos(&f.points[0]));
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"kind": "building"},
        }));
    }
    serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("json values always serialize")
}

/// Equirectangular tangent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub meters_per_deg_lat: f64,
    pub meters_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin_lat: f64, origin_lon: f64) -> Self {
        LocalFrame {
            origin_lat,
            origin_lon,
            meters_per_deg_lat: METERS_PER_DEG_LAT,
            meters_per_deg_lon: METERS_PER_DEG_LAT * origin_lat.to_radians().cos(),
        }
    }

    pub fn centered_on(bbox: &GeoBBox) -> Self {
        let (lat, lon) = bbox.center();
        LocalFrame::new(lat, lon)
    }

    /// `(lat, lon)` to meters east/north of the origin.
    pub fn to_local(&self, lat: f64, lon: f64) -> Result<Vec2, MapError> {
        if !((lat - self.origin_lat).abs() <= VALIDITY_WINDOW_DEG
            && (lon - self.origin_lon).abs() <= VALIDITY_WINDOW_DEG)
        {
            return Err(MapError::Range {
                lat,
                lon,
                origin_lat: self.origin_lat,
                origin_lon: self.origin_lon,
            });
        }
        Ok(Vec2::new(
            (lon - self.origin_lon) * self.meters_per_deg_lon,
            (lat - self.origin_lat) * self.meters_per_deg_lat,
        ))
    }

    /// Inverse of [`LocalFrame::to_local`], returns `(lat, lon)`.
    pub fn to_geo(&self, p: Vec2) -> (f64, f64) {
        (
            self.origin_lat + p.y / self.meters_per_deg_lat,
            self.origin_lon + p.x / self.meters_per_deg_lon,
        )
    }
}

fn footprint_area_m2(fp: &Footprint) -> f64 {
    let (lat0, lon0) = fp.points[0];
    let frame = LocalFrame::new(lat0, lon0);
    let pts: Vec<Vec2> = fp
        .points
        .iter()
        .map(|&(lat, lon)| {
            Vec2::new(
                (lon - lon0) * frame.meters_per_deg_lon,
                (lat - lat0) * frame.meters_per_deg_lat,
            )
        })
        .collect();
    polygon_area(&pts)
}

/// Assigns each footprint an i.i.d. uniform height on [5, 15) m. One draw is
/// consumed per input footprint, rejected ones included, so a footprint's
/// height depends only on (seed, index).
pub fn extrude_buildings(footprints: &[Footprint], seed: u64) -> (Vec<RawBuilding>, Vec<Rejection>) {
    let mut rng = rng::seeded(seed);
    let mut buildings = Vec::with_capacity(footprints.len());
    let mut rejected = Vec::new();
    for (i, fp) in footprints.iter().enumerate() {
        let height_m = rng::uniform(&mut rng, MIN_BUILDING_HEIGHT, MAX_BUILDING_HEIGHT);
        let area = footprint_area_m2(fp);
        if fp.points.len() < 3 || !(area >= 1.0) {
            rejected.push(Rejection {
                feature: i,
                reason: format!("degenerate footprint, area {area:.3} m^2"),
            });
            continue;
        }
        buildings.push(RawBuilding {
            footprint: fp.clone(),
            height_m,
        });
    }
    (buildings, rejected)
}
