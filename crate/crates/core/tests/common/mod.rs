#![allow(dead_code)]

use drivelab::affordance::{Affordance, AffordanceVector, DEFAULT_D_MAX};
use drivelab::geom::{Polyline, Vec2, Vec3};
use drivelab::learn::{ConvSpec, InputTransform, Model, RegressorSpec, OUTPUTS};
use drivelab::rng::{self, SimRng};
use drivelab::road::{RoadNetwork, RoadSegment};
use drivelab::scenario::OccluderBox;
use drivelab::sim::ActorState;
use rand::Rng;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// A straight road with an ego and point obstacles, plus everything the
/// brute-force oracle needs in plain numbers.
pub struct AffordanceScene {
    pub net: RoadNetwork,
    pub ego: Vec2,
    pub heading: f64,
    pub obstacles: Vec<Vec2>,
    start: Vec2,
    end: Vec2,
    lanes: usize,
    oneway: bool,
    lane_width: f64,
}

fn u(r: &mut SimRng, lo: f64, hi: f64) -> f64 {
    rng::uniform(r, lo, hi)
}

pub fn random_affordance_scene(r: &mut SimRng) -> AffordanceScene {
    let lanes = r.gen_range(2..=5usize);
    let oneway = r.gen_bool(0.5);
    let lane_width = u(r, 2.5, 4.5);
    let theta = u(r, -std::f64::consts::PI, std::f64::consts::PI);
    let dir = Vec2::new(theta.cos(), theta.sin());
    let start = Vec2::new(u(r, -500.0, 500.0), u(r, -500.0, 500.0));
    let length = u(r, 150.0, 400.0);
    let end = start + dir * length;
    let seg = RoadSegment::new(0, Polyline::new(vec![start, end]), lanes as u8, oneway, lane_width).unwrap();
    let net = RoadNetwork::new(vec![seg]);

    let backward = !oneway && r.gen_bool(0.5);
    let (o, d) = travel_frame(start, end, backward);
    let markings = oracle_markings(lanes, oneway, lane_width, backward);
    let n = markings.len() - 1;
    let right = Vec2::new(d.y, -d.x);

    let lateral = loop {
        let x = u(r, markings[0] + 0.01, markings[n] - 0.01);
        if markings.iter().all(|m| (m - x).abs() > 1e-4) {
            break x;
        }
    };
    let s = u(r, 0.2 * length, 0.8 * length);
    let ego = o + d * s + right * lateral;
    let travel_heading = d.y.atan2(d.x);
    let heading = travel_heading + u(r, -80.0, 80.0).to_radians();

    let count = r.gen_range(0..=12usize);
    let width = lanes as f64 * lane_width;
    let obstacles = (0..count)
        .map(|_| loop {
            let os = u(r, 0.0, length);
            let ol = u(r, -0.5 * width - 2.0, 0.5 * width + 2.0);
            let p = o + d * os + right * ol;
            let off = lateral_of(o, d, p);
            if markings.iter().all(|m| (m - off).abs() > 1e-4) && ((os - s).abs() > 1e-4) {
                break p;
            }
        })
        .collect();
    AffordanceScene {
        net,
        ego,
        heading,
        obstacles,
        start,
        end,
        lanes,
        oneway,
        lane_width,
    }
}

fn travel_frame(start: Vec2, end: Vec2, backward: bool) -> (Vec2, Vec2) {
    if backward {
        (end, (start - end).normalize())
    } else {
        (start, (end - start).normalize())
    }
}

fn oracle_markings(lanes: usize, oneway: bool, w: f64, backward: bool) -> Vec<f64> {
    if oneway {
        (0..=lanes).map(|k| (k as f64 - lanes as f64 / 2.0) * w).collect()
    } else {
        let n = if backward { lanes / 2 } else { lanes - lanes / 2 };
        (0..=n).map(|k| k as f64 * w).collect()
    }
}

fn lateral_of(o: Vec2, d: Vec2, p: Vec2) -> f64 {
    let q = p - o;
    q.x * d.y - q.y * d.x
}

/// Distance from `p` to a marking line by dense sampling along the line,
/// refined by golden-section search around the best sample.
fn sampled_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let len = (b - a).norm();
    let at = |t: f64| (a + (b - a) * (t / len) - p).norm();
    let step = 0.25;
    let n = (len / step).ceil() as usize;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=n {
        let t = (i as f64 * step).min(len);
        let dist = at(t);
        if dist < best.1 {
            best = (t, dist);
        }
    }
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(len));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if at(m1) < at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    at(0.5 * (lo + hi))
}

/// Independent affordances: marking distances by sampling each marking
/// line, lanes by side tests, cars by scanning every obstacle.
pub fn brute_force_affordances(sc: &AffordanceScene) -> AffordanceVector {
    let fwd = (sc.end - sc.start).normalize();
    let backward = !sc.oneway && (sc.heading.cos() * fwd.x + sc.heading.sin() * fwd.y) <= 0.0;
    let (o, d) = travel_frame(sc.start, sc.end, backward);
    let length = (sc.end - sc.start).norm();
    let right = Vec2::new(d.y, -d.x);
    let markings = oracle_markings(sc.lanes, sc.oneway, sc.lane_width, backward);
    let n = markings.len() - 1;

    let line = |m: f64| (o + right * m, o + d * length + right * m);
    let lat = lateral_of(o, d, sc.ego);
    let left: Vec<usize> = (0..=n).filter(|&k| markings[k] <= lat).collect();
    let lane = left.last().copied().unwrap_or(0).min(n - 1);
    let dist = |k: usize| {
        let (a, b) = line(markings[k]);
        sampled_distance(sc.ego, a, b)
    };

    let mut out = AffordanceVector::default();
    let road = d.y.atan2(d.x).to_degrees();
    let mut angle = (sc.heading.to_degrees() - road) % 360.0;
    if angle > 180.0 {
        angle -= 360.0;
    } else if angle <= -180.0 {
        angle += 360.0;
    }
    out.set(Affordance::Angle, Some(angle));
    out.set(Affordance::LaneL, Some(dist(lane)));
    out.set(Affordance::LaneR, Some(dist(lane + 1)));
    if lane >= 1 {
        out.set(Affordance::LaneLL, Some(dist(lane - 1)));
    }
    if lane + 2 <= n {
        out.set(Affordance::LaneRR, Some(dist(lane + 2)));
    }

    let ego_s = (sc.ego - o).dot(&d);
    let slots = [Affordance::CarL, Affordance::CarM, Affordance::CarR];
    for p in &sc.obstacles {
        let off = lateral_of(o, d, *p);
        let gap = (p - o).dot(&d) - ego_s;
        if !(gap > 0.0 && gap <= DEFAULT_D_MAX) {
            continue;
        }
        let Some(k) = (0..n).find(|&k| markings[k] <= off && off < markings[k + 1]) else {
            continue;
        };
        let rel = k as isize - lane as isize;
        if !(-1..=1).contains(&rel) {
            continue;
        }
        let slot = slots[(rel + 1) as usize];
        if out.get(slot).map_or(true, |g| gap < g) {
            out.set(slot, Some(gap));
        }
    }
    out
}

/// First time the discs touch by stepping at `dt`, or `None` within `horizon`.
pub fn stepped_contact_time(a: &ActorState, b: &ActorState, dt: f64, horizon: f64) -> Option<f64> {
    let r = a.bounding_radius() + b.bounding_radius();
    let dp = b.pose.position() - a.pose.position();
    let dv = b.velocity() - a.velocity();
    let steps = (horizon / dt) as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let x = dp.x + dv.x * t;
        let y = dp.y + dv.y * t;
        if x * x + y * y <= r * r {
            return Some(t);
        }
    }
    None
}

fn segment_hits_box(eye: Vec3, p: Vec3, b: &OccluderBox) -> bool {
    let (s, c) = b.heading_deg.to_radians().sin_cos();
    let to_local = |q: Vec3| {
        let x = q.x - b.center[0];
        let y = q.y - b.center[1];
        [c * x + s * y, -s * x + c * y, q.z - b.center[2]]
    };
    let (a, q) = (to_local(eye), to_local(p));
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        let dk = q[k] - a[k];
        let h = b.half_extents[k];
        if dk == 0.0 {
            if a[k].abs() > h {
                return false;
            }
            continue;
        }
        let (x, y) = ((-h - a[k]) / dk, (h - a[k]) / dk);
        t0 = t0.max(x.min(y));
        t1 = t1.min(x.max(y));
    }
    t0 < t1
}

/// Point on the eye-facing surface of the target's box at azimuth fraction
/// `fu` and height fraction `fv`, from segment-edge intersections.
fn dense_surface_point(eye: Vec3, target: &ActorState, fu: f64, fv: f64) -> Vec3 {
    let (hl, hw, hz) = (target.half_extents[0], target.half_extents[1], target.half_extents[2]);
    let (s, c) = target.pose.heading.sin_cos();
    let center = Vec2::new(target.pose.x, target.pose.y);
    let corners: Vec<Vec2> = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .iter()
        .map(|&(x, y)| center + Vec2::new(c * x - s * y, s * x + c * y))
        .collect();
    let e = Vec2::new(eye.x, eye.y);
    let base = (center - e).normalize();
    let rel = |p: Vec2| {
        let q = p - e;
        (base.x * q.y - base.y * q.x).atan2(base.dot(&q))
    };
    let lo = corners.iter().map(|&p| rel(p)).fold(0.0, f64::min);
    let hi = corners.iter().map(|&p| rel(p)).fold(0.0, f64::max);
    let ang = lo + fu * (hi - lo);
    let dir = Vec2::new(base.x * ang.cos() - base.y * ang.sin(), base.x * ang.sin() + base.y * ang.cos());
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (p, q) = (corners[i], corners[(i + 1) % 4]);
        let edge = q - p;
        let denom = dir.x * edge.y - dir.y * edge.x;
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = p - e;
        let t = (w.x * edge.y - w.y * edge.x) / denom;
        let v = (w.x * dir.y - w.y * dir.x) / denom;
        if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&v) {
            best = best.min(t);
        }
    }
    let hit = e + dir * best;
    Vec3::new(hit.x, hit.y, fv * 2.0 * hz)
}

/// Visible fraction from `n` uniformly random rays over the target surface.
pub fn dense_visibility(eye: Vec3, target: &ActorState, occluders: &[OccluderBox], n: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut clear = 0usize;
    for _ in 0..n {
        let p = dense_surface_point(eye, target, r.gen(), r.gen());
        if !occluders.iter().any(|b| segment_hits_box(eye, p, b)) {
            clear += 1;
        }
    }
    clear as f64 / n as f64
}

/// Mean squared error by explicit double loop.
pub fn naive_loss(pred: &[[f64; OUTPUTS]], target: &[[f64; OUTPUTS]]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        for k in 0..OUTPUTS {
            let d = pred[i][k] - target[i][k];
            total += d * d;
            count += 1;
        }
    }
    total / count as f64
}

/// 193-parameter network for gradient checks.
pub fn toy_spec() -> RegressorSpec {
    RegressorSpec {
        channels: 1,
        height: 6,
        width: 5,
        convs: vec![ConvSpec {
            filters: 2,
            kernel: 3,
            stride: 1,
        }],
        hidden: vec![5],
    }
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the single-sample loss for a random model, input and target.
pub fn gradient_check(seed: u64) -> f64 {
    let spec = toy_spec();
    let model = Model::new(spec.clone(), InputTransform::default(), seed).unwrap();
    let mut r = rng::seeded(seed ^ 0x9e37_79b9);
    let input: Vec<f64> = (0..spec.input_len()).map(|_| u(&mut r, -2.0, 2.0)).collect();
    let target: [f64; OUTPUTS] = std::array::from_fn(|_| if r.gen_bool(0.25) { 1.1 } else { u(&mut r, -0.9, 0.9) });

    let loss_of = |m: &Model| {
        let mut ws = m.workspace();
        let p = m.forward(&input, &mut ws);
        naive_loss(&[p], &[target])
    };
    let mut ws = model.workspace();
    let p = model.forward(&input, &mut ws);
    let d: [f64; OUTPUTS] = std::array::from_fn(|k| 2.0 * (p[k] - target[k]) / OUTPUTS as f64);
    let mut grad = vec![0.0; model.params.len()];
    model.backward(&d, &mut ws, &mut grad);

    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for i in 0..model.params.len() {
        let base = model.params[i];
        probe.params[i] = base + h;
        let up = loss_of(&probe);
        probe.params[i] = base - h;
        let down = loss_of(&probe);
        probe.params[i] = base;
        let numeric = (up - down) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
    }
    worst
}
