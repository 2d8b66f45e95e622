//! Fixed-step world simulation.
//!
//! The world advances in 50 ms steps. Cars and trucks integrate a kinematic
//! bicycle model; scripted actors (pedestrians, turning trucks) move along
//! polylines at a set speed. Snapshots are taken every fifth step (250 ms),
//! and the time-of-day clock runs 30 times faster than simulation time.
//! Everything is a pure function of the initial scene, so two runs from the
//! same seed produce bit-identical traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{affordances_at, AffordanceVector, DEFAULT_D_MAX};
use crate::control::{self, ControllerGains, LaneDecision};
use crate::geom::{heading_vec, wrap_pi, Polyline, Vec2};
use crate::rng::{self, SimRng};
use crate::road::{Direction, LanePose};
use crate::world::World;

pub const STEPS_PER_SECOND: u64 = 20;
pub const STEP_DT: f64 = 1.0 / STEPS_PER_SECOND as f64;
/// Steps between snapshots: 5 x 50 ms = 250 ms.
pub const SNAPSHOT_EVERY: u64 = 5;
pub const SAMPLE_INTERVAL: f64 = SNAPSHOT_EVERY as f64 / STEPS_PER_SECOND as f64;
pub const TIME_SCALE: f64 = 30.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("world has no road to spawn on")]
    NoRoad,
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Car,
    Truck,
    Pedestrian,
}

impl ActorKind {
    /// Half length, half width, half height in meters.
    pub fn default_half_extents(self) -> [f64; 3] {
        match self {
            ActorKind::Car => [2.25, 0.9, 0.75],
            ActorKind::Truck => [8.0, 1.3, 2.0],
            ActorKind::Pedestrian => [0.25, 0.25, 0.9],
        }
    }

    pub fn wheelbase(self) -> f64 {
        match self {
            ActorKind::Car => 2.7,
            ActorKind::Truck => 6.0,
            ActorKind::Pedestrian => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Scripted motion along a polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFollower {
    pub path: Polyline,
    pub speed: f64,
    /// Simulation time at which motion starts.
    pub start_time: f64,
    /// Current arc length along `path`.
    pub s: f64,
}

/// Affordance-driven driving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneDriver {
    pub gains: ControllerGains,
    pub lane_changes: bool,
    prev_car_m: Option<f64>,
    prev_offset: Option<f64>,
    maneuver: Option<LaneDecision>,
}

impl LaneDriver {
    pub fn new(gains: ControllerGains, lane_changes: bool) -> Self {
        LaneDriver {
            gains,
            lane_changes,
            prev_car_m: None,
            prev_offset: None,
            maneuver: None,
        }
    }

    /// Steering and acceleration for one step. Closing speed is estimated
    /// from successive car_M readings.
    pub fn command(&mut self, a: &AffordanceVector, speed: f64, lane_width: f64) -> control::ControlOutput {
        let closing = match (self.prev_car_m, a.car_m()) {
            (Some(prev), Some(now)) => Some((prev - now) / STEP_DT),
            _ => None,
        };
        self.prev_car_m = a.car_m();

        let offset = control::lane_offset(a);
        if let (Some(m), Some(prev), Some(now)) = (self.maneuver, self.prev_offset, offset) {
            // crossing a marking makes the offset jump by about one lane width
            let done = match m {
                LaneDecision::ShiftLeft => now - prev > 0.5 * lane_width,
                LaneDecision::ShiftRight => prev - now > 0.5 * lane_width,
                LaneDecision::Keep => true,
            };
            if done {
                self.maneuver = None;
            }
        }
        self.prev_offset = offset;
        if self.lane_changes && self.maneuver.is_none() {
            match control::lane_change_decision(a, &self.gains) {
                LaneDecision::Keep => {}
                m => self.maneuver = Some(m),
            }
        }

        let mut steer_input = *a;
        if let (Some(m), Some(l), Some(r)) = (self.maneuver, a.lane_l(), a.lane_r()) {
            // aim at the neighbouring lane center
            let (l, r) = match m {
                LaneDecision::ShiftLeft => (l + lane_width, r - lane_width),
                LaneDecision::ShiftRight => (l - lane_width, r + lane_width),
                LaneDecision::Keep => (l, r),
            };
            steer_input.set(crate::affordance::Affordance::LaneL, Some(l));
            steer_input.set(crate::affordance::Affordance::LaneR, Some(r));
        }
        control::ControlOutput {
            steering: control::steer(&steer_input, &self.gains),
            accel: control::speed_control(a, speed, closing, &self.gains),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Driver {
    /// Keeps speed and heading.
    Constant,
    Path(PathFollower),
    Lane(LaneDriver),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub kind: ActorKind,
    pub pose: Pose,
    pub speed: f64,
    pub half_extents: [f64; 3],
    pub color: [u8; 3],
    pub driver: Driver,
}

impl Actor {
    pub fn new(id: u32, kind: ActorKind, pose: Pose, speed: f64, color: [u8; 3], driver: Driver) -> Self {
        Actor {
            id,
            kind,
            pose,
            speed,
            half_extents: kind.default_half_extents(),
            color,
            driver,
        }
    }

    /// A path follower placed at arc length `s` of its path.
    pub fn on_path(id: u32, kind: ActorKind, color: [u8; 3], follower: PathFollower) -> Self {
        let pose = path_pose(&follower.path, follower.s);
        Actor::new(id, kind, pose, 0.0, color, Driver::Path(follower))
    }

    pub fn state(&self) -> ActorState {
        ActorState {
            id: self.id,
            kind: self.kind,
            pose: self.pose,
            speed: self.speed,
            half_extents: self.half_extents,
            color: self.color,
        }
    }
}

fn path_pose(path: &Polyline, s: f64) -> Pose {
    let p = path.point_at(s);
    let t = path.tangent_at(s);
    Pose {
        x: p.x,
        y: p.y,
        heading: t.y.atan2(t.x),
    }
}

/// Serializable view of an actor without its driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub id: u32,
    pub kind: ActorKind,
    pub pose: Pose,
    pub speed: f64,
    pub half_extents: [f64; 3],
    pub color: [u8; 3],
}

impl ActorState {
    pub fn velocity(&self) -> Vec2 {
        heading_vec(self.pose.heading) * self.speed
    }

    pub fn footprint(&self) -> Rect {
        Rect {
            center: self.pose.position(),
            heading: self.pose.heading,
            half_length: self.half_extents[0],
            half_width: self.half_extents[1],
        }
    }

    /// Radius of the disc bounding the footprint.
    pub fn bounding_radius(&self) -> f64 {
        self.half_extents[0].hypot(self.half_extents[1])
    }

    /// Linear interpolation between two states of the same actor.
    pub fn lerp(&self, next: &ActorState, f: f64) -> ActorState {
        let mut out = *self;
        out.pose.x = self.pose.x + (next.pose.x - self.pose.x) * f;
        out.pose.y = self.pose.y + (next.pose.y - self.pose.y) * f;
        out.pose.heading = self.pose.heading + wrap_pi(next.pose.heading - self.pose.heading) * f;
        out.speed = self.speed + (next.speed - self.speed) * f;
        out
    }
}

/// Oriented rectangle footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Rect {
    pub fn axes(&self) -> [Vec2; 2] {
        let f = heading_vec(self.heading);
        [f, Vec2::new(-f.y, f.x)]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [f, l] = self.axes();
        let (a, b) = (f * self.half_length, l * self.half_width);
        let c = self.center;
        [c + a + b, c - a + b, c - a - b, c + a - b]
    }

    fn radius_along(&self, u: Vec2) -> f64 {
        let [f, l] = self.axes();
        self.half_length * f.dot(&u).abs() + self.half_width * l.dot(&u).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub colliding: bool,
    /// Smallest overlap over the separating-axis candidates: positive depth
    /// when overlapping, minus the separation otherwise.
    pub penetration: f64,
}

/// Separating-axis test on two oriented rectangles. Touching counts as
/// contact.
pub fn rect_contact(a: &Rect, b: &Rect) -> Contact {
    let d = b.center - a.center;
    let mut penetration = f64::INFINITY;
    for u in a.axes().into_iter().chain(b.axes()) {
        let overlap = a.radius_along(u) + b.radius_along(u) - d.dot(&u).abs();
        penetration = penetration.min(overlap);
    }
    Contact {
        colliding: penetration >= 0.0,
        penetration,
    }
}

pub fn detect_collision(a: &ActorState, b: &ActorState) -> Contact {
    rect_contact(&a.footprint(), &b.footprint())
}

/// Simulation and time-of-day clock. Time is derived from the step count,
/// so snapshot times are exact multiples of 0.25 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub steps: u64,
    /// Time of day at simulation time zero, seconds.
    pub start_time_of_day: f64,
}

impl SimClock {
    pub fn new(start_time_of_day: f64) -> Self {
        SimClock {
            steps: 0,
            start_time_of_day: start_time_of_day.rem_euclid(SECONDS_PER_DAY),
        }
    }

    pub fn sim_time(&self) -> f64 {
        self.steps as f64 / STEPS_PER_SECOND as f64
    }

    pub fn time_of_day(&self) -> f64 {
        (self.start_time_of_day + TIME_SCALE * self.sim_time()).rem_euclid(SECONDS_PER_DAY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub a: u32,
    pub b: u32,
    pub penetration: f64,
}

/// Source of the affordances the ego's controller sees.
pub trait Perception {
    fn perceive(&mut self, scene: &Scene, world: &World, ego: usize) -> Option<AffordanceVector>;
}

/// Exact affordances from world state.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Perception for GroundTruth {
    fn perceive(&mut self, scene: &Scene, world: &World, ego: usize) -> Option<AffordanceVector> {
        scene.ground_truth(world, ego).map(|(_, a)| a)
    }
}

/// Dynamic state of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub actors: Vec<Actor>,
    pub ego: Option<u32>,
    pub clock: SimClock,
    pub collisions: Vec<CollisionEvent>,
    /// Actors removed for leaving their road.
    pub retired: Vec<u32>,
}

impl Scene {
    pub fn new(actors: Vec<Actor>, ego: Option<u32>, start_time_of_day: f64) -> Self {
        Scene {
            actors,
            ego,
            clock: SimClock::new(start_time_of_day),
            collisions: Vec::new(),
            retired: Vec::new(),
        }
    }

    pub fn actor_index(&self, id: u32) -> Option<usize> {
        self.actors.iter().position(|a| a.id == id)
    }

    pub fn ego_index(&self) -> Option<usize> {
        self.ego.and_then(|id| self.actor_index(id))
    }

    /// Centers of every actor other than `skip`.
    pub fn obstacles(&self, skip: usize) -> Vec<Vec2> {
        self.actors
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, a)| a.pose.position())
            .collect()
    }

    /// Lane pose and exact affordances of actor `index`, or `None` off-road.
    pub fn ground_truth(&self, world: &World, index: usize) -> Option<(LanePose, AffordanceVector)> {
        let actor = &self.actors[index];
        let pose = world
            .network
            .locate(actor.pose.position(), actor.pose.heading)
            .ok()?;
        let a = affordances_at(
            &world.network,
            &pose,
            actor.pose.heading,
            &self.obstacles(index),
            DEFAULT_D_MAX,
        );
        Some((pose, a))
    }

    pub fn ego_collided(&self) -> bool {
        self.ego
            .map_or(false, |e| self.collisions.iter().any(|c| c.a == e || c.b == e))
    }

    /// Advances one fixed step: controls are computed from the current state
    /// for every actor, then all actors integrate.
    pub fn step(&mut self, world: &World, perception: &mut dyn Perception) {
        let dt = STEP_DT;
        let now = self.clock.sim_time();
        let ego_index = self.ego_index();

        let mut commands = Vec::with_capacity(self.actors.len());
        let mut leaving = Vec::new();
        for i in 0..self.actors.len() {
            let cmd = match &self.actors[i].driver {
                Driver::Lane(_) => {
                    let seen = if Some(i) == ego_index {
                        perception.perceive(self, world, i)
                    } else {
                        match self.ground_truth(world, i) {
                            Some((pose, a)) => {
                                let seg = world.network.segment(pose.segment);
                                if pose.s > seg.length() - 1.0 {
                                    leaving.push(i);
                                }
                                Some(a)
                            }
                            None => {
                                leaving.push(i);
                                None
                            }
                        }
                    };
                    seen
                }
                _ => None,
            };
            commands.push(cmd);
        }

        for (actor, seen) in self.actors.iter_mut().zip(commands) {
            match &mut actor.driver {
                Driver::Constant => {
                    let v = heading_vec(actor.pose.heading) * actor.speed * dt;
                    actor.pose.x += v.x;
                    actor.pose.y += v.y;
                }
                Driver::Path(f) => {
                    if now + 1e-9 >= f.start_time {
                        actor.speed = f.speed;
                        f.s = (f.s + f.speed * dt).min(f.path.length());
                        if f.s >= f.path.length() {
                            actor.speed = 0.0;
                        }
                    } else {
                        actor.speed = 0.0;
                    }
                    actor.pose = path_pose(&f.path, f.s);
                }
                Driver::Lane(d) => {
                    let out = match seen {
                        Some(a) => d.command(&a, actor.speed, world.lane_width),
                        None => control::ControlOutput {
                            steering: 0.0,
                            accel: control::MIN_ACCEL,
                        },
                    };
                    let v = actor.speed;
                    let h = actor.pose.heading;
                    actor.pose.x += v * h.cos() * dt;
                    actor.pose.y += v * h.sin() * dt;
                    actor.pose.heading = wrap_pi(h - v / actor.kind.wheelbase() * out.steering.tan() * dt);
                    actor.speed = (v + out.accel * dt).max(0.0);
                }
            }
        }
        self.clock.steps += 1;

        for &i in leaving.iter().rev() {
            let removed = self.actors.remove(i);
            self.retired.push(removed.id);
        }
        self.record_collisions();
    }

    fn record_collisions(&mut self) {
        let time = self.clock.sim_time();
        let states: Vec<ActorState> = self.actors.iter().map(Actor::state).collect();
        for i in 0..states.len() {
            for j in (i + 1)..states.len() {
                let (a, b) = (&states[i], &states[j]);
                let reach = a.bounding_radius() + b.bounding_radius();
                if (a.pose.position() - b.pose.position()).norm_squared() > reach * reach {
                    continue;
                }
                let contact = detect_collision(a, b);
                if !contact.colliding {
                    continue;
                }
                let (lo, hi) = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                if !self.collisions.iter().any(|c| c.a == lo && c.b == hi) {
                    self.collisions.push(CollisionEvent {
                        time,
                        a: lo,
                        b: hi,
                        penetration: contact.penetration,
                    });
                }
            }
        }
    }

    pub fn snapshot(&self, world: &World, tick: u64) -> Snapshot {
        let ego_truth = self.ego_index().and_then(|i| self.ground_truth(world, i));
        Snapshot {
            tick,
            sim_time: self.clock.sim_time(),
            time_of_day: self.clock.time_of_day(),
            ego: self.ego,
            actors: self.actors.iter().map(Actor::state).collect(),
            ego_lane: ego_truth.map(|(p, _)| p),
            affordances: ego_truth.map(|(_, a)| a),
            off_road: self.ego.is_some() && ego_truth.is_none(),
            collided: self.ego_collided(),
        }
    }
}

/// World state at one sample tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Sample index; `sim_time == tick * 0.25`.
    pub tick: u64,
    pub sim_time: f64,
    pub time_of_day: f64,
    pub ego: Option<u32>,
    pub actors: Vec<ActorState>,
    pub ego_lane: Option<LanePose>,
    /// Exact affordances of the ego.
    pub affordances: Option<AffordanceVector>,
    pub off_road: bool,
    /// The ego has collided at or before this tick.
    pub collided: bool,
}

impl Snapshot {
    pub fn ego_state(&self) -> Option<&ActorState> {
        let id = self.ego?;
        self.actors.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnPolicy {
    /// Uniform lateral jitter around the lane center, +/- meters.
    pub lateral_jitter: f64,
    /// Uniform heading jitter, +/- degrees.
    pub heading_jitter_deg: f64,
    pub ego_speed: (f64, f64),
    pub traffic_speed: (f64, f64),
    /// Traffic is placed this far behind and ahead of the ego.
    pub traffic_window: (f64, f64),
    /// Minimum center spacing between spawned vehicles in one lane.
    pub min_spacing: f64,
}

impl Default for SpawnPolicy {
    fn default() -> Self {
        SpawnPolicy {
            lateral_jitter: 0.8,
            heading_jitter_deg: 4.0,
            ego_speed: (15.0, 28.0),
            traffic_speed: (18.0, 30.0),
            traffic_window: (100.0, 500.0),
            min_spacing: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub sample_interval_s: f64,
    /// Vehicles per km per lane.
    pub traffic_density: f64,
    pub spawn: SpawnPolicy,
    pub ego_gains: ControllerGains,
    pub traffic_gains: ControllerGains,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            seed: 0,
            duration_s: 10.0,
            sample_interval_s: SAMPLE_INTERVAL,
            traffic_density: 15.0,
            spawn: SpawnPolicy::default(),
            ego_gains: ControllerGains::default(),
            traffic_gains: ControllerGains::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if (self.sample_interval_s - SAMPLE_INTERVAL).abs() > 1e-12 {
            return bad("sample interval is fixed at 0.25 s");
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be finite and nonnegative");
        }
        if !(self.traffic_density >= 0.0) {
            return bad("traffic density must be nonnegative");
        }
        self.ego_gains.validate().map_err(SimError::Config)?;
        self.traffic_gains.validate().map_err(SimError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Completed,
    /// Ego left the road network or reached a segment end.
    LeftRoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    pub collisions: Vec<CollisionEvent>,
    pub end: EpisodeEnd,
}

impl Trace {
    /// One JSON object per snapshot, newline terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.snapshots {
            out.push_str(&serde_json::to_string(s).expect("snapshots serialize"));
            out.push('\n');
        }
        out
    }
}

const CAR_COLORS: [[u8; 3]; 6] = [
    [200, 30, 30],
    [30, 60, 190],
    [230, 230, 230],
    [40, 40, 40],
    [200, 160, 30],
    [60, 140, 70],
];

pub const EGO_ID: u32 = 0;

/// Seeds the ego on a random lane of a random road (weighted by length),
/// fills its surroundings with traffic and draws the starting time of day
/// uniformly over 24 h.
pub fn spawn_scene(world: &World, cfg: &EpisodeConfig, rng: &mut SimRng) -> Result<Scene, SimError> {
    let net = &world.network;
    let mut options = Vec::new();
    for seg in net.segments() {
        for dir in [Direction::Forward, Direction::Backward] {
            if seg.lanes_in(dir) > 0 {
                options.push((seg.id, dir, seg.length()));
            }
        }
    }
    if options.is_empty() {
        return Err(SimError::NoRoad);
    }
    let tod = rng::uniform(rng, 0.0, SECONDS_PER_DAY);

    let total: f64 = options.iter().map(|o| o.2).sum();
    let mut pick = rng::uniform(rng, 0.0, total);
    let mut chosen = options[options.len() - 1];
    for &o in &options {
        if pick < o.2 {
            chosen = o;
            break;
        }
        pick -= o.2;
    }
    let (segment, dir, length) = chosen;
    let seg = net.segment(segment);
    let sp = &cfg.spawn;
    let travel = cfg.duration_s * sp.ego_speed.1 + 50.0;
    let s_hi = (length - travel).max(length * 0.5);
    let s_lo = sp.traffic_window.0.min(s_hi * 0.5);
    let s = rng::uniform(rng, s_lo, s_hi);
    let lanes = seg.lanes_in(dir);
    let lane = (rng::uniform(rng, 0.0, lanes as f64) as usize).min(lanes - 1);
    let lateral = rng::uniform(rng, -sp.lateral_jitter, sp.lateral_jitter);
    let dh = rng::uniform(rng, -sp.heading_jitter_deg, sp.heading_jitter_deg).to_radians();
    let speed = rng::uniform(rng, sp.ego_speed.0, sp.ego_speed.1);
    let (p, h) = net
        .place(segment, dir, lane, s, lateral)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let ego = Actor::new(
        EGO_ID,
        ActorKind::Car,
        Pose {
            x: p.x,
            y: p.y,
            heading: wrap_pi(h + dh),
        },
        speed,
        [250, 250, 250],
        Driver::Lane(LaneDriver::new(cfg.ego_gains, false)),
    );
    let mut actors = vec![ego];

    // traffic in every lane of the ego's road, both directions
    let mut next_id = 1;
    for tdir in [Direction::Forward, Direction::Backward] {
        let tl = seg.lanes_in(tdir);
        let own = tdir == dir;
        // window expressed in this direction's arc length
        let center = if own { s } else { length - s };
        let (back, ahead) = if own {
            (sp.traffic_window.0, sp.traffic_window.1)
        } else {
            (sp.traffic_window.1, sp.traffic_window.0)
        };
        let lo = (center - back).max(1.0);
        let hi = (center + ahead).min(length - 1.0);
        if hi <= lo {
            continue;
        }
        for l in 0..tl {
            let count = (cfg.traffic_density * (hi - lo) / 1000.0).round() as usize;
            let mut spots: Vec<f64> = (0..count).map(|_| rng::uniform(rng, lo, hi)).collect();
            spots.sort_by(f64::total_cmp);
            let mut last = f64::NEG_INFINITY;
            for ts in spots {
                let too_close_to_ego = own && l == lane && (ts - s).abs() < 20.0;
                if ts - last < sp.min_spacing || too_close_to_ego {
                    continue;
                }
                last = ts;
                let v0 = rng::uniform(rng, sp.traffic_speed.0, sp.traffic_speed.1);
                let v = v0 * rng::uniform(rng, 0.7, 1.0);
                let color = CAR_COLORS[(rng::uniform(rng, 0.0, CAR_COLORS.len() as f64) as usize).min(CAR_COLORS.len() - 1)];
                let (tp, th) = net
                    .place(segment, tdir, l, ts, 0.0)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                let gains = ControllerGains {
                    v0,
                    ..cfg.traffic_gains
                };
                actors.push(Actor::new(
                    next_id,
                    ActorKind::Car,
                    Pose {
                        x: tp.x,
                        y: tp.y,
                        heading: th,
                    },
                    v,
                    color,
                    Driver::Lane(LaneDriver::new(gains, false)),
                ));
                next_id += 1;
            }
        }
    }
    Ok(Scene::new(actors, Some(EGO_ID), tod))
}

/// Runs a scene forward, sampling every 250 ms including t = 0. Stops early
/// when the ego leaves the road.
pub fn run_scene(
    world: &World,
    mut scene: Scene,
    duration_s: f64,
    perception: &mut dyn Perception,
    seed: u64,
) -> Trace {
    let total_steps = (duration_s * STEPS_PER_SECOND as f64).round() as u64;
    let mut snapshots = Vec::new();
    let mut end = EpisodeEnd::Completed;
    for step in 0..=total_steps {
        let ego_left = scene.ego_index().map_or(false, |i| match scene.ground_truth(world, i) {
            None => true,
            Some((pose, _)) => pose.s > world.network.segment(pose.segment).length() - 1.0,
        });
        if step % SNAPSHOT_EVERY == 0 {
            snapshots.push(scene.snapshot(world, step / SNAPSHOT_EVERY));
        }
        if ego_left {
            end = EpisodeEnd::LeftRoad;
            break;
        }
        if step == total_steps {
            break;
        }
        scene.step(world, perception);
    }
    Trace {
        seed,
        snapshots,
        collisions: scene.collisions,
        end,
    }
}

/// One seeded spawn-drive-sample run.
pub fn run_episode(world: &World, cfg: &EpisodeConfig, perception: &mut dyn Perception) -> Result<Trace, SimError> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let scene = spawn_scene(world, cfg, &mut rng)?;
    Ok(run_scene(world, scene, cfg.duration_s, perception, cfg.seed))
}
