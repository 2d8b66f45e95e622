//! Corner-case scenarios: scripted actors, parameter sweeps, line-of-sight
//! queries against box occluders and time-to-collision analysis.
//!
//! Scenario files are versioned JSON. Any number in an actor script may be
//! replaced by `{"param": "name"}`, resolved against the declared
//! parameters when a run is built.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{cross, heading_vec, right_of, Polyline, Vec2, Vec3};
use crate::road::{RoadNetwork, RoadSegment, DEFAULT_LANE_WIDTH};
use crate::sim::{
    rect_contact, Actor, Rect, ActorKind, ActorState, Driver, EpisodeEnd, GroundTruth, LaneDriver, PathFollower, Pose, Scene,
    Snapshot, Trace, SNAPSHOT_EVERY, STEPS_PER_SECOND, STEP_DT,
};
use crate::control::ControllerGains;
use crate::world::{Building, World};

pub const SCENARIO_VERSION: u32 = 1;
/// Fixed stratified pattern: 8 x 8 cells over the target silhouette.
pub const VISIBILITY_SAMPLES: usize = 64;
const SAMPLE_GRID: usize = 8;
const BISECTION_STEPS: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{name}` = {value} is below its minimum {min}")]
    BelowMin { name: String, value: f64, min: f64 },
    #[error("parameter `{name}` = {value} exceeds its maximum {max}")]
    AboveMax { name: String, value: f64, max: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("scenario format: {0}")]
    Format(String),
}

/// Earliest t >= 0 at which discs of combined radius `r` touch, given the
/// relative position `dp` (b - a) and relative velocity `dv` (vb - va).
pub fn disc_contact_time(dp: Vec2, dv: Vec2, r: f64) -> Option<f64> {
    let c = dp.norm_squared() - r * r;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = dv.norm_squared();
    let b = 2.0 * dp.dot(&dv);
    if a == 0.0 || b >= 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b - disc.sqrt());
    Some(c / q)
}

/// Constant-velocity time to contact of the actors' bounding discs.
pub fn time_to_collision(a: &ActorState, b: &ActorState) -> Option<f64> {
    disc_contact_time(
        b.pose.position() - a.pose.position(),
        b.velocity() - a.velocity(),
        a.bounding_radius() + b.bounding_radius(),
    )
}

/// Box with vertical sides, rotated about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Rotation about the vertical axis, degrees counterclockwise.
    #[serde(default)]
    pub heading_deg: f64,
}

impl OccluderBox {
    pub fn axis_aligned(min: [f64; 3], max: [f64; 3]) -> Self {
        OccluderBox {
            center: [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])],
            half_extents: [0.5 * (max[0] - min[0]), 0.5 * (max[1] - min[1]), 0.5 * (max[2] - min[2])],
            heading_deg: 0.0,
        }
    }

    /// Whether the open segment from `a` to `b` passes through the box.
    pub fn blocks(&self, a: Vec3, b: Vec3) -> bool {
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        let local = |p: Vec3| {
            let d = p - Vec3::new(self.center[0], self.center[1], self.center[2]);
            Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
        };
        let (p, q) = (local(a), local(b));
        let dir = q - p;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let h = self.half_extents[k];
            if dir[k].abs() < 1e-15 {
                if p[k].abs() > h {
                    return false;
                }
                continue;
            }
            let mut ta = (-h - p[k]) / dir[k];
            let mut tb = (h - p[k]) / dir[k];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }

    /// Footprint corners, counterclockwise.
    pub fn footprint(&self) -> Vec<Vec2> {
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        let [hx, hy, _] = self.half_extents;
        [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            .iter()
            .map(|&(x, y)| Vec2::new(self.center[0] + c * x - s * y, self.center[1] + s * x + c * y))
            .collect()
    }
}

/// The part of a target's surface facing an eye, parameterized by azimuth
/// across the silhouette (u) and height (v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Silhouette {
    eye: Vec2,
    rect: Rect,
    center_dir: Vec2,
    theta_min: f64,
    theta_max: f64,
    height: f64,
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

impl Silhouette {
    pub fn of(eye: Vec3, target: &ActorState) -> Silhouette {
        let eye2 = Vec2::new(eye.x, eye.y);
        let rect = target.footprint();
        let to_center = rect.center - eye2;
        let center_dir = if to_center.norm() > 1e-9 {
            to_center.normalize()
        } else {
            Vec2::new(1.0, 0.0)
        };
        let (mut theta_min, mut theta_max) = (0.0f64, 0.0f64);
        for c in rect.corners() {
            let d = c - eye2;
            let theta = cross(center_dir, d).atan2(center_dir.dot(&d));
            theta_min = theta_min.min(theta);
            theta_max = theta_max.max(theta);
        }
        Silhouette {
            eye: eye2,
            rect,
            center_dir,
            theta_min,
            theta_max,
            height: 2.0 * target.half_extents[2],
        }
    }

    /// Surface point at azimuth fraction `u` and height fraction `v`, both
    /// in [0, 1]: the first hit of the horizontal ray from the eye.
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        let dir = rotate(self.center_dir, self.theta_min + u * (self.theta_max - self.theta_min));
        let p = first_hit(self.eye, dir, &self.rect).unwrap_or(self.rect.center);
        Vec3::new(p.x, p.y, v * self.height)
    }

    /// Cell centers of the fixed 8 x 8 pattern.
    pub fn samples(&self) -> Vec<Vec3> {
        let n = SAMPLE_GRID as f64;
        let mut out = Vec::with_capacity(VISIBILITY_SAMPLES);
        for j in 0..SAMPLE_GRID {
            for i in 0..SAMPLE_GRID {
                out.push(self.point((i as f64 + 0.5) / n, (j as f64 + 0.5) / n));
            }
        }
        out
    }
}

/// Entry point of a 2-D ray into a rectangle.
fn first_hit(origin: Vec2, dir: Vec2, rect: &Rect) -> Option<Vec2> {
    let [ax, ay] = rect.axes();
    let rel = origin - rect.center;
    let (p, d) = ([rel.dot(&ax), rel.dot(&ay)], [dir.dot(&ax), dir.dot(&ay)]);
    let half = [rect.half_length, rect.half_width];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..2 {
        if d[k].abs() < 1e-15 {
            if p[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((-half[k] - p[k]) / d[k], (half[k] - p[k]) / d[k]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1 + 1e-9).then(|| origin + dir * t0)
}

pub fn ray_visible(eye: Vec3, point: Vec3, occluders: &[OccluderBox]) -> bool {
    !occluders.iter().any(|o| o.blocks(eye, point))
}

/// Fraction of the 64 sample rays from `eye` to the target that no
/// occluder intersects.
pub fn visibility(eye: Vec3, target: &ActorState, occluders: &[OccluderBox]) -> f64 {
    let samples = Silhouette::of(eye, target).samples();
    let clear = samples.iter().filter(|&&p| ray_visible(eye, p, occluders)).count();
    clear as f64 / samples.len() as f64
}

/// A literal number or a reference to a declared parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Param { param: String },
    Sum { sum: Vec<Value> },
    Product { product: Vec<Value> },
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl Value {
    pub fn param(name: &str) -> Self {
        Value::Param { param: name.into() }
    }

    pub fn resolve(&self, params: &BTreeMap<String, f64>) -> Result<f64, ScenarioError> {
        match self {
            Value::Num(v) => Ok(*v),
            Value::Param { param } => params.get(param).copied().ok_or_else(|| ScenarioError::UnknownParam(param.clone())),
            Value::Sum { sum } => sum.iter().try_fold(0.0, |acc, v| Ok(acc + v.resolve(params)?)),
            Value::Product { product } => product.iter().try_fold(1.0, |acc, v| Ok(acc * v.resolve(params)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub default: f64,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub centerline: Vec<[f64; 2]>,
    pub lanes: u8,
    pub oneway: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// The path point (projected onto the path) to reach...
    pub point: [Value; 2],
    /// ...at this simulation time.
    pub time: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// Straight line at constant speed. Give either a start position or
    /// an arrival, from which the start is back-computed.
    Constant {
        #[serde(default)]
        position: Option<[Value; 2]>,
        #[serde(default)]
        arrival: Option<Arrival>,
        heading_deg: Value,
        speed: Value,
    },
    /// Affordance controller with ground-truth perception; placed like
    /// `constant`, assuming it holds its initial speed.
    Lane {
        #[serde(default)]
        position: Option<[Value; 2]>,
        #[serde(default)]
        arrival: Option<Arrival>,
        heading_deg: Value,
        speed: Value,
        /// Desired speed of the controller.
        v0: Value,
    },
    /// Scripted path at constant speed, optionally timed to pass a point
    /// at a given time.
    Path {
        points: Vec<[Value; 2]>,
        speed: Value,
        #[serde(default)]
        arrival: Option<Arrival>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: u32,
    pub kind: ActorKind,
    pub color: [Value; 3],
    pub motion: Motion,
}

/// Box fixed to an actor; offsets are (forward, right, up) in its frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachedBox {
    pub offset: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSpec {
    pub name: String,
    /// Actor carrying the eye.
    pub actor: u32,
    /// Eye position (forward, right, up) in the actor frame.
    pub eye: [f64; 3],
    /// Actor being looked for.
    pub target: u32,
    /// Vehicle-fixed occluders such as windshield pillars.
    #[serde(default)]
    pub attached: Vec<AttachedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSpec {
    pub decel: Value,
    pub reaction_time: Value,
}

impl Default for StoppingSpec {
    fn default() -> Self {
        StoppingSpec {
            decel: Value::Num(6.0),
            reaction_time: Value::Num(1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    #[serde(default)]
    pub roads: Vec<RoadSpec>,
    /// Static occluders; those resting on the ground are also drawn.
    #[serde(default)]
    pub occluders: Vec<OccluderBox>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    /// The ego vehicle; its id is always 0.
    pub ego: ActorSpec,
    pub actors: Vec<ActorSpec>,
    /// Actor whose contact with the ego is analysed.
    pub target: u32,
    #[serde(default)]
    pub viewpoints: Vec<ViewpointSpec>,
    pub duration_s: Value,
    #[serde(default)]
    pub stopping: StoppingSpec,
    #[serde(default = "default_time_of_day")]
    pub start_time_of_day: f64,
    /// Minimum visible fraction that counts as seen.
    #[serde(default)]
    pub visibility_threshold: f64,
}

fn default_lane_width() -> f64 {
    DEFAULT_LANE_WIDTH
}

fn default_time_of_day() -> f64 {
    43_200.0
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files serialize")
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn defaults(&self) -> BTreeMap<String, f64> {
        self.params.iter().map(|p| (p.name.clone(), p.default)).collect()
    }

    /// Defaults overridden by `overrides`, each checked against its
    /// declared range.
    pub fn resolve_params(&self, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, ScenarioError> {
        let mut out = self.defaults();
        for (name, &value) in overrides {
            let spec = self.param(name).ok_or_else(|| ScenarioError::UnknownParam(name.clone()))?;
            check_bounds(spec, value)?;
            out.insert(name.clone(), value);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        for p in &self.params {
            if !(p.min.is_finite() && p.max.is_finite() && p.min <= p.max) {
                return invalid(format!("parameter `{}` has an empty range", p.name));
            }
            if !(p.step > 0.0) {
                return invalid(format!("parameter `{}` needs a positive step", p.name));
            }
            check_bounds(p, p.default)?;
        }
        let mut ids = vec![0u32];
        for a in &self.actors {
            if ids.contains(&a.id) {
                return invalid(format!("actor id {} is used twice", a.id));
            }
            ids.push(a.id);
        }
        if self.ego.id != 0 {
            return invalid("the ego must have id 0".into());
        }
        if !ids.contains(&self.target) || self.target == 0 {
            return invalid(format!("target actor {} is not defined", self.target));
        }
        for v in &self.viewpoints {
            if !ids.contains(&v.actor) || !ids.contains(&v.target) || v.actor == v.target {
                return invalid(format!("viewpoint `{}` references undefined actors", v.name));
            }
        }
        let defaults = self.defaults();
        self.duration_s.resolve(&defaults)?;
        self.stopping.decel.resolve(&defaults)?;
        self.stopping.reaction_time.resolve(&defaults)?;
        self.build(&defaults).map(|_| ())
    }

    /// Instantiates the world and scene for a full parameter assignment.
    pub fn build(&self, params: &BTreeMap<String, f64>) -> Result<(World, Scene), ScenarioError> {
        let mut segments = Vec::with_capacity(self.roads.len());
        for (i, r) in self.roads.iter().enumerate() {
            let line = Polyline::new(r.centerline.iter().map(|&[x, y]| Vec2::new(x, y)).collect());
            segments.push(
                RoadSegment::new(i, line, r.lanes, r.oneway, self.lane_width)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
            );
        }
        let mut world = World::from_network(RoadNetwork::new(segments));
        world.lane_width = self.lane_width;
        world.buildings = self
            .occluders
            .iter()
            .filter(|o| (o.center[2] - o.half_extents[2]).abs() < 1e-9)
            .map(|o| Building {
                footprint: o.footprint(),
                height_m: 2.0 * o.half_extents[2],
            })
            .collect();

        let mut actors = vec![build_actor(&self.ego, params)?];
        for spec in &self.actors {
            actors.push(build_actor(spec, params)?);
        }
        Ok((world, Scene::new(actors, Some(0), self.start_time_of_day)))
    }
}

fn check_bounds(spec: &ParamSpec, value: f64) -> Result<(), ScenarioError> {
    if !(value >= spec.min) {
        return Err(ScenarioError::BelowMin {
            name: spec.name.clone(),
            value,
            min: spec.min,
        });
    }
    if value > spec.max {
        return Err(ScenarioError::AboveMax {
            name: spec.name.clone(),
            value,
            max: spec.max,
        });
    }
    Ok(())
}

fn point(v: &[Value; 2], params: &BTreeMap<String, f64>) -> Result<Vec2, ScenarioError> {
    Ok(Vec2::new(v[0].resolve(params)?, v[1].resolve(params)?))
}

fn build_actor(spec: &ActorSpec, params: &BTreeMap<String, f64>) -> Result<Actor, ScenarioError> {
    let mut color = [0u8; 3];
    for (c, v) in color.iter_mut().zip(&spec.color) {
        *c = v.resolve(params)?.round().clamp(0.0, 255.0) as u8;
    }
    let speed_of = |v: &Value| -> Result<f64, ScenarioError> {
        let s = v.resolve(params)?;
        if !(s.is_finite() && s >= 0.0) {
            return Err(ScenarioError::Invalid(format!("actor {} has speed {s}", spec.id)));
        }
        Ok(s)
    };
    let start = |position: &Option<[Value; 2]>, arrival: &Option<Arrival>, heading: f64, speed: f64| {
        match (position, arrival) {
            (Some(p), None) => point(p, params),
            (None, Some(a)) => Ok(point(&a.point, params)? - heading_vec(heading) * (speed * a.time.resolve(params)?)),
            _ => Err(ScenarioError::Invalid(format!(
                "actor {} needs exactly one of position and arrival",
                spec.id
            ))),
        }
    };
    let actor = match &spec.motion {
        Motion::Constant {
            position,
            arrival,
            heading_deg,
            speed,
        } => {
            let heading = heading_deg.resolve(params)?.to_radians();
            let v = speed_of(speed)?;
            let p = start(position, arrival, heading, v)?;
            let pose = Pose { x: p.x, y: p.y, heading };
            Actor::new(spec.id, spec.kind, pose, v, color, Driver::Constant)
        }
        Motion::Lane {
            position,
            arrival,
            heading_deg,
            speed,
            v0,
        } => {
            let heading = heading_deg.resolve(params)?.to_radians();
            let v = speed_of(speed)?;
            let p = start(position, arrival, heading, v)?;
            let pose = Pose { x: p.x, y: p.y, heading };
            let gains = ControllerGains {
                v0: speed_of(v0)?.max(0.1),
                ..ControllerGains::default()
            };
            Actor::new(
                spec.id,
                spec.kind,
                pose,
                v,
                color,
                Driver::Lane(LaneDriver::new(gains, false)),
            )
        }
        Motion::Path { points, speed, arrival } => {
            let mut pts = points.iter().map(|p| point(p, params)).collect::<Result<Vec<_>, _>>()?;
            if pts.len() < 2 || pts.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-6) {
                return Err(ScenarioError::Invalid(format!("actor {} needs a path of distinct points", spec.id)));
            }
            let v = speed_of(speed)?;
            let mut path = Polyline::new(pts.clone());
            let mut s0 = 0.0;
            if let Some(arr) = arrival {
                let s_arrive = path.project(point(&arr.point, params)?).s;
                s0 = s_arrive - v * arr.time.resolve(params)?;
                if s0 < 0.0 {
                    let dir = (pts[1] - pts[0]).normalize();
                    pts[0] -= dir * (-s0);
                    path = Polyline::new(pts);
                    s0 = 0.0;
                }
            }
            let mut actor = Actor::on_path(
                spec.id,
                spec.kind,
                color,
                PathFollower {
                    path,
                    speed: v,
                    start_time: 0.0,
                    s: s0,
                },
            );
            actor.speed = v;
            actor
        }
    };
    Ok(actor)
}

/// Per-viewpoint outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewResult {
    pub name: String,
    pub first_visibility_time: Option<f64>,
    pub ttc_at_first_visibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub params: BTreeMap<String, f64>,
    pub collision: bool,
    pub contact_time: Option<f64>,
    /// Smallest center distance between ego and target.
    pub min_distance: f64,
    /// Sum of the bounding radii; contact implies `min_distance` below it.
    pub contact_threshold: f64,
    /// First moment the ego's view of the target reaches the threshold.
    pub first_visibility_time: Option<f64>,
    pub ttc_at_first_visibility: Option<f64>,
    /// Ego travel between first visibility and contact.
    pub distance_at_first_visibility: Option<f64>,
    pub visible_to_contact: Option<f64>,
    /// Reaction plus braking distance at the ego speed when first seen.
    pub required_distance: f64,
    pub stoppable: bool,
    pub views: Vec<ViewResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSeries {
    pub name: String,
    /// One entry per snapshot.
    pub visible_fraction: Vec<f64>,
}

/// Everything one run of a scenario produces.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub row: SweepRow,
    pub trace: Trace,
    pub visibility: Vec<ViewSeries>,
    pub world: World,
}

fn attached_boxes(view: &ViewpointSpec, carrier: &ActorState) -> Vec<OccluderBox> {
    let f = heading_vec(carrier.pose.heading);
    let r = right_of(f);
    view.attached
        .iter()
        .map(|b| {
            let c = carrier.pose.position() + f * b.offset[0] + r * b.offset[1];
            OccluderBox {
                center: [c.x, c.y, b.offset[2]],
                half_extents: b.half_extents,
                heading_deg: carrier.pose.heading.to_degrees() + b.heading_deg,
            }
        })
        .collect()
}

fn eye_of(view: &ViewpointSpec, carrier: &ActorState) -> Vec3 {
    let f = heading_vec(carrier.pose.heading);
    let p = carrier.pose.position() + f * view.eye[0] + right_of(f) * view.eye[1];
    Vec3::new(p.x, p.y, view.eye[2])
}

fn view_fraction(view: &ViewpointSpec, occluders: &[OccluderBox], carrier: &ActorState, target: &ActorState) -> f64 {
    let mut boxes = occluders.to_vec();
    boxes.extend(attached_boxes(view, carrier));
    visibility(eye_of(view, carrier), target, &boxes)
}

/// States of every actor at each 50 ms step.
struct History {
    steps: Vec<Vec<ActorState>>,
}

impl History {
    fn state(&self, step: usize, id: u32) -> Option<ActorState> {
        self.steps[step].iter().find(|a| a.id == id).copied()
    }

    /// States of two actors at fractional time between `step - 1` and `step`.
    fn between(&self, step: usize, f: f64, a: u32, b: u32) -> Option<(ActorState, ActorState)> {
        let lerp = |id| -> Option<ActorState> { Some(self.state(step - 1, id)?.lerp(&self.state(step, id)?, f)) };
        Some((lerp(a)?, lerp(b)?))
    }

    /// First time a predicate on the pair becomes true, refined between
    /// steps by bisection.
    fn first_time(&self, a: u32, b: u32, pred: &dyn Fn(&ActorState, &ActorState) -> bool) -> Option<f64> {
        for k in 0..self.steps.len() {
            let (Some(sa), Some(sb)) = (self.state(k, a), self.state(k, b)) else { continue };
            if !pred(&sa, &sb) {
                continue;
            }
            if k == 0 || self.state(k - 1, a).is_none() || self.state(k - 1, b).is_none() {
                return Some(k as f64 * STEP_DT);
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                let (ma, mb) = self.between(k, mid, a, b).expect("both present at k-1 and k");
                if pred(&ma, &mb) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some((k as f64 - 1.0 + hi) * STEP_DT);
        }
        None
    }

    fn at_time(&self, t: f64, id: u32) -> Option<ActorState> {
        let x = t / STEP_DT;
        let k = (x.ceil() as usize).min(self.steps.len() - 1);
        if k == 0 || (k as f64 - x).abs() < 1e-12 {
            return self.state(k, id);
        }
        Some(self.state(k - 1, id)?.lerp(&self.state(k, id)?, x - (k - 1) as f64))
    }
}

/// Runs one scenario instance for a full parameter assignment.
pub fn run_scenario(file: &ScenarioFile, params: &BTreeMap<String, f64>, index: usize) -> Result<ScenarioRun, ScenarioError> {
    let params = file.resolve_params(params)?;
    let (world, mut scene) = file.build(&params)?;
    let duration = file.duration_s.resolve(&params)?;
    if !(duration > 0.0 && duration <= 600.0) {
        return Err(ScenarioError::Invalid(format!("duration {duration} outside (0, 600] s")));
    }
    let decel = file.stopping.decel.resolve(&params)?;
    let reaction = file.stopping.reaction_time.resolve(&params)?;
    if !(decel > 0.0 && reaction >= 0.0) {
        return Err(ScenarioError::Invalid("stopping needs decel > 0 and reaction time >= 0".into()));
    }

    let total = (duration * STEPS_PER_SECOND as f64).round() as usize;
    let mut steps = Vec::with_capacity(total + 1);
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut perception = GroundTruth;
    for step in 0..=total {
        steps.push(scene.actors.iter().map(Actor::state).collect::<Vec<_>>());
        if step as u64 % SNAPSHOT_EVERY == 0 {
            snapshots.push(scene.snapshot(&world, step as u64 / SNAPSHOT_EVERY));
        }
        if step < total {
            scene.step(&world, &mut perception);
        }
    }
    let history = History { steps };

    let target = file.target;
    let contact = |a: &ActorState, b: &ActorState| rect_contact(&a.footprint(), &b.footprint()).colliding;
    let contact_time = history.first_time(0, target, &contact);

    let mut min_distance = f64::INFINITY;
    let mut contact_threshold = 0.0;
    for k in 0..history.steps.len() {
        if let (Some(a), Some(b)) = (history.state(k, 0), history.state(k, target)) {
            min_distance = min_distance.min((a.pose.position() - b.pose.position()).norm());
            contact_threshold = a.bounding_radius() + b.bounding_radius();
        }
    }

    let threshold = file.visibility_threshold;
    let mut views = Vec::new();
    let mut series = Vec::new();
    for view in &file.viewpoints {
        let seen = |carrier: &ActorState, tgt: &ActorState| view_fraction(view, &file.occluders, carrier, tgt) > threshold;
        let first = history.first_time(view.actor, view.target, &seen);
        let ttc = first.and_then(|t| {
            let a = history.at_time(t, view.actor)?;
            let b = history.at_time(t, view.target)?;
            time_to_collision(&a, &b)
        });
        views.push(ViewResult {
            name: view.name.clone(),
            first_visibility_time: first,
            ttc_at_first_visibility: ttc,
        });
        let fractions = snapshots
            .iter()
            .map(|s| {
                let find = |id: u32| s.actors.iter().find(|a| a.id == id);
                match (find(view.actor), find(view.target)) {
                    (Some(c), Some(t)) => view_fraction(view, &file.occluders, c, t),
                    _ => 0.0,
                }
            })
            .collect();
        series.push(ViewSeries {
            name: view.name.clone(),
            visible_fraction: fractions,
        });
    }

    let ego_view = file.viewpoints.iter().position(|v| v.actor == 0 && v.target == target);
    let (first_vis, ttc_vis) = match ego_view {
        Some(i) => (views[i].first_visibility_time, views[i].ttc_at_first_visibility),
        None => (Some(0.0), history.at_time(0.0, target).and_then(|b| time_to_collision(&history.steps[0][0], &b))),
    };
    let ego_at = |t: f64| history.at_time(t, 0).expect("the ego is never removed");
    let v_seen = ego_at(first_vis.unwrap_or(0.0)).speed;
    let required_distance = v_seen * v_seen / (2.0 * decel) + v_seen * reaction;
    let distance_at_first_visibility = match (first_vis, contact_time) {
        (Some(tv), Some(tc)) if tv <= tc => Some((ego_at(tc).pose.position() - ego_at(tv).pose.position()).norm()),
        _ => None,
    };
    let stoppable = match (contact_time, distance_at_first_visibility) {
        (None, _) => true,
        (Some(_), Some(d)) => d > required_distance,
        (Some(_), None) => false,
    };
    let visible_to_contact = match (first_vis, contact_time) {
        (Some(tv), Some(tc)) if tv <= tc => Some(tc - tv),
        _ => None,
    };

    let collisions = scene.collisions.clone();
    Ok(ScenarioRun {
        row: SweepRow {
            index,
            params,
            collision: contact_time.is_some(),
            contact_time,
            min_distance,
            contact_threshold,
            first_visibility_time: first_vis,
            ttc_at_first_visibility: ttc_vis,
            distance_at_first_visibility,
            visible_to_contact,
            required_distance,
            stoppable,
            views,
        },
        trace: Trace {
            seed: 0,
            snapshots,
            collisions,
            end: EpisodeEnd::Completed,
        },
        visibility: series,
        world,
    })
}

/// One swept parameter: `min:max:step`, inclusive of both ends when the
/// step divides the span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.min + k as f64 * self.step).collect()
    }

    /// Parses `name=min:max:step` or `name=value`.
    pub fn parse(text: &str) -> Result<GridAxis, ScenarioError> {
        let bad = || ScenarioError::Sweep(format!("expected name=min:max:step, got `{text}`"));
        let (name, range) = text.split_once('=').ok_or_else(bad)?;
        let nums: Vec<f64> = range
            .split(':')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let axis = match nums[..] {
            [v] => GridAxis { name: name.trim().into(), min: v, max: v, step: 1.0 },
            [a, b, s] => GridAxis { name: name.trim().into(), min: a, max: b, step: s },
            _ => return Err(bad()),
        };
        Ok(axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub version: u32,
    pub seed: u64,
    pub grid: Vec<GridAxis>,
    pub rows: Vec<SweepRow>,
}

/// Validates a grid against the scenario's declared ranges and expands it
/// into parameter assignments (first axis outermost).
pub fn expand_grid(file: &ScenarioFile, grid: &[GridAxis]) -> Result<Vec<BTreeMap<String, f64>>, ScenarioError> {
    let mut points = vec![BTreeMap::new()];
    for axis in grid {
        let spec = file.param(&axis.name).ok_or_else(|| ScenarioError::UnknownParam(axis.name.clone()))?;
        if !(axis.step > 0.0) || !(axis.min <= axis.max) {
            return Err(ScenarioError::Sweep(format!("axis `{}` is empty", axis.name)));
        }
        check_bounds(spec, axis.min)?;
        check_bounds(spec, axis.max)?;
        let values = axis.values();
        if values.len() > 10_000 {
            return Err(ScenarioError::Sweep(format!("axis `{}` has too many values", axis.name)));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(axis.name.clone(), v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Runs every grid point; rows are ordered by grid index.
pub fn run_sweep(file: &ScenarioFile, grid: &[GridAxis], seed: u64) -> Result<SweepReport, ScenarioError> {
    file.validate()?;
    let points = expand_grid(file, grid)?;
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_scenario(file, p, i).map(|r| r.row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport {
        scenario: file.id.clone(),
        version: file.version,
        seed,
        grid: grid.to_vec(),
        rows,
    })
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<String> = self.rows.first().map(|r| r.params.keys().cloned().collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut header: Vec<String> = vec!["index".into()];
        header.extend(names.iter().cloned());
        header.extend(
            [
                "collision",
                "contact_time",
                "min_distance",
                "first_visibility_time",
                "ttc_at_first_visibility",
                "distance_at_first_visibility",
                "required_distance",
                "stoppable",
            ]
            .map(String::from),
        );
        w.write_record(&header).expect("in-memory csv");
        for row in &self.rows {
            let mut rec = vec![row.index.to_string()];
            rec.extend(names.iter().map(|n| row.params[n].to_string()));
            rec.extend([
                row.collision.to_string(),
                opt(row.contact_time),
                row.min_distance.to_string(),
                opt(row.first_visibility_time),
                opt(row.ttc_at_first_visibility),
                opt(row.distance_at_first_visibility),
                row.required_distance.to_string(),
                row.stoppable.to_string(),
            ]);
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

fn num(v: f64) -> Value {
    Value::Num(v)
}

fn xy(x: f64, y: f64) -> [Value; 2] {
    [num(x), num(y)]
}

fn gray(level: Value) -> [Value; 3] {
    [level.clone(), level.clone(), level]
}

fn param(name: &str, min: f64, max: f64, step: f64, default: f64, unit: &str, description: &str) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        min,
        max,
        step,
        default,
        unit: unit.into(),
        description: description.into(),
    }
}

fn stopping_params() -> Vec<ParamSpec> {
    vec![
        param("decel", 1.0, 12.0, 0.5, 6.0, "m/s^2", "braking deceleration for the stoppability check"),
        param("reaction_time", 0.0, 5.0, 0.1, 1.5, "s", "driver reaction time for the stoppability check"),
    ]
}

/// A pedestrian steps into the ego lane when the ego is `ttc` seconds from
/// the crossing line; the ego runs the affordance controller.
pub fn pedestrian_crossing() -> ScenarioFile {
    let w = DEFAULT_LANE_WIDTH;
    let crossing_x = 150.0;
    let mut params = vec![
        param("ego_speed", 5.0, 30.0, 1.0, 15.0, "m/s", "initial and desired ego speed"),
        param("pedestrian_speed", 0.5, 3.0, 0.1, 1.5, "m/s", "walking speed"),
        param("ttc", 0.5, 6.0, 0.1, 2.0, "s", "ego time to the crossing line when the pedestrian enters the lane"),
        param("enter_time", 0.0, 8.0, 0.25, 3.0, "s", "time the pedestrian enters the ego lane"),
    ];
    params.extend(stopping_params());
    ScenarioFile {
        version: SCENARIO_VERSION,
        id: "pedestrian_crossing".into(),
        description: "Pedestrian crossing in front of the ego on a straight two-lane one-way road".into(),
        lane_width: w,
        roads: vec![RoadSpec {
            centerline: vec![[-300.0, 0.0], [600.0, 0.0]],
            lanes: 2,
            oneway: true,
        }],
        occluders: Vec::new(),
        params,
        ego: ActorSpec {
            id: 0,
            kind: ActorKind::Car,
            color: gray(num(250.0)),
            motion: Motion::Lane {
                position: None,
                arrival: Some(Arrival {
                    point: xy(crossing_x, -0.5 * w),
                    time: Value::Sum {
                        sum: vec![Value::param("enter_time"), Value::param("ttc")],
                    },
                }),
                heading_deg: num(0.0),
                speed: Value::param("ego_speed"),
                v0: Value::param("ego_speed"),
            },
        },
        actors: vec![ActorSpec {
            id: 1,
            kind: ActorKind::Pedestrian,
            color: [num(220.0), num(60.0), num(40.0)],
            motion: Motion::Path {
                points: vec![xy(crossing_x, -3.0 * w), xy(crossing_x, 3.0 * w)],
                speed: Value::param("pedestrian_speed"),
                arrival: Some(Arrival {
                    point: xy(crossing_x, -w),
                    time: Value::param("enter_time"),
                }),
            },
        }],
        target: 1,
        viewpoints: vec![ViewpointSpec {
            name: "ego_driver".into(),
            actor: 0,
            eye: [0.3, -0.4, 1.2],
            target: 1,
            attached: Vec::new(),
        }],
        duration_s: num(12.0),
        stopping: StoppingSpec {
            decel: Value::param("decel"),
            reaction_time: Value::param("reaction_time"),
        },
        start_time_of_day: 43_200.0,
        visibility_threshold: 0.0,
    }
}

/// A truck turns left across a divided highway in front of the ego. A band
/// of trees in the median hides the westbound lanes except at the
/// crossover gap. Both vehicles are timed to reach the conflict point in
/// the ego lane at `conflict_time`.
pub fn truck_turn_crash() -> ScenarioFile {
    let w = DEFAULT_LANE_WIDTH;
    let east_center = -w;
    let ego_lane = -1.5 * w;
    let (median_lo, median_hi) = (2.0, 12.0);
    let west_center = median_hi + w;
    let truck_lane = median_hi + 0.5 * w;
    let (gap_lo, gap_hi) = (-10.0, 20.0);
    let radius = truck_lane - median_lo;
    let far_east = 900.0;

    let mut path = vec![xy(radius + far_east, truck_lane), xy(radius, truck_lane)];
    let n_arc = 24;
    for k in 1..n_arc {
        let a = std::f64::consts::FRAC_PI_2 * (1.0 + k as f64 / n_arc as f64);
        path.push(xy(radius + radius * a.cos(), median_lo + radius * a.sin()));
    }
    path.push(xy(0.0, median_lo));
    path.push(xy(0.0, -80.0));

    let mut params = vec![
        param("truck_speed", 0.0, 30.0, 1.0, 15.0, "m/s", "truck speed along its turning path"),
        param("ego_speed", 0.0, 40.0, 1.0, 29.0, "m/s", "constant ego speed"),
        param("conflict_time", 4.0, 20.0, 0.5, 10.0, "s", "time both vehicles reach the conflict point"),
        param("truck_shade", 0.0, 255.0, 1.0, 235.0, "", "gray level of the truck body"),
    ];
    params.extend(stopping_params());
    let conflict = Arrival {
        point: xy(0.0, ego_lane),
        time: Value::param("conflict_time"),
    };
    ScenarioFile {
        version: SCENARIO_VERSION,
        id: "truck_turn_crash".into(),
        description: "Truck turning left across a divided highway through a gap in a tree-lined median".into(),
        lane_width: w,
        roads: vec![
            RoadSpec {
                centerline: vec![[-1200.0, east_center], [600.0, east_center]],
                lanes: 2,
                oneway: true,
            },
            RoadSpec {
                centerline: vec![[1200.0, west_center], [-600.0, west_center]],
                lanes: 2,
                oneway: true,
            },
        ],
        occluders: vec![
            OccluderBox::axis_aligned([-1200.0, median_lo, 0.0], [gap_lo, median_hi, 5.0]),
            OccluderBox::axis_aligned([gap_hi, median_lo, 0.0], [1200.0, median_hi, 5.0]),
        ],
        params,
        ego: ActorSpec {
            id: 0,
            kind: ActorKind::Car,
            color: gray(num(60.0)),
            motion: Motion::Constant {
                position: None,
                arrival: Some(conflict.clone()),
                heading_deg: num(0.0),
                speed: Value::param("ego_speed"),
            },
        },
        actors: vec![ActorSpec {
            id: 1,
            kind: ActorKind::Truck,
            color: gray(Value::param("truck_shade")),
            motion: Motion::Path {
                points: path,
                speed: Value::param("truck_speed"),
                arrival: Some(conflict),
            },
        }],
        target: 1,
        viewpoints: vec![
            ViewpointSpec {
                name: "ego_driver".into(),
                actor: 0,
                eye: [0.3, -0.4, 1.2],
                target: 1,
                attached: Vec::new(),
            },
            ViewpointSpec {
                name: "truck_driver".into(),
                actor: 1,
                eye: [6.6, -0.6, 2.4],
                target: 0,
                attached: vec![
                    AttachedBox {
                        offset: [7.3, 1.15, 2.4],
                        half_extents: [0.08, 0.08, 0.6],
                        heading_deg: 0.0,
                    },
                    AttachedBox {
                        offset: [7.3, -1.15, 2.4],
                        half_extents: [0.08, 0.08, 0.6],
                        heading_deg: 0.0,
                    },
                ],
            },
        ],
        duration_s: Value::Sum {
            sum: vec![Value::param("conflict_time"), num(3.0)],
        },
        stopping: StoppingSpec {
            decel: Value::param("decel"),
            reaction_time: Value::param("reaction_time"),
        },
        start_time_of_day: 15.0 * 3600.0 + 40.0 * 60.0,
        visibility_threshold: 0.0,
    }
}

pub fn builtin_scenarios() -> Vec<ScenarioFile> {
    vec![pedestrian_crossing(), truck_turn_crash()]
}

/// The default truck-speed grid of the turning-truck sweep.
pub fn truck_speed_grid() -> GridAxis {
    GridAxis {
        name: "truck_speed".into(),
        min: 5.0,
        max: 25.0,
        step: 1.0,
    }
}
