use drivelab::geom::{Polyline, Vec2};
use drivelab::rng;
use drivelab::road::{Direction, RoadNetwork, RoadSegment};

fn random_polyline(r: &mut rng::SimRng) -> Polyline {
    let mut p = Vec2::new(0.0, 0.0);
    let mut heading = rng::uniform(r, -3.0, 3.0);
    let mut pts = vec![p];
    for _ in 0..rng::uniform(r, 2.0, 6.0) as usize {
        heading += rng::uniform(r, -0.5, 0.5);
        p += Vec2::new(heading.cos(), heading.sin()) * rng::uniform(r, 40.0, 120.0);
        pts.push(p);
    }
    Polyline::new(pts)
}

/// Nearest point by scanning a densified copy of the polyline, refined on
/// the best piece; returns (arc length, signed offset, right positive).
fn dense_nearest(pts: &[Vec2], q: Vec2) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut s0 = 0.0;
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        let dir = (w[1] - w[0]) / len;
        let n = (len / 0.05) as usize + 1;
        for i in 0..=n {
            let t = len * i as f64 / n as f64;
            let d = (w[0] + dir * t - q).norm();
            if d < best.0 {
                best = (d, s0 + t, 0.0);
            }
        }
        s0 += len;
    }
    let mut s0 = 0.0;
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        if best.1 >= s0 - 1e-9 && best.1 <= s0 + len + 1e-9 {
            let dir = (w[1] - w[0]) / len;
            let t = (q - w[0]).dot(&dir).clamp(0.0, len);
            let foot = w[0] + dir * t;
            let rel = q - foot;
            let side = rel.x * dir.y - rel.y * dir.x;
            return (s0 + t, side.signum() * rel.norm());
        }
        s0 += len;
    }
    unreachable!()
}

#[test]
fn locate_recovers_lateral_offsets() {
    let mut r = rng::seeded(4);
    let mut checked = 0;
    while checked < 1000 {
        let line = random_polyline(&mut r);
        let seg = RoadSegment::new(0, line.clone(), 3, true, 3.7).unwrap();
        let net = RoadNetwork::new(vec![seg]);
        let s = rng::uniform(&mut r, 5.0, line.length() - 5.0);
        let lateral = rng::uniform(&mut r, -5.0, 5.0);
        let t = line.tangent_at(s);
        let p = line.point_at(s) + Vec2::new(t.y, -t.x) * lateral;
        let (os, offset) = dense_nearest(line.points(), p);
        // skip points equidistant from two pieces near a bend
        if (os - s).abs() > 1e-6 {
            continue;
        }
        let pose = net.locate(p, t.y.atan2(t.x)).unwrap();
        assert!((pose.offset - offset).abs() < 1e-6, "{} vs {offset}", pose.offset);
        assert!((pose.offset - lateral).abs() < 1e-6);
        assert!((pose.s - s).abs() < 1e-6);
        checked += 1;
    }
}

#[test]
fn tangents_match_finite_differences() {
    let mut r = rng::seeded(5);
    for _ in 0..200 {
        let line = random_polyline(&mut r);
        let seg = RoadSegment::new(0, line.clone(), 2, true, 3.7).unwrap();
        let net = RoadNetwork::new(vec![seg]);
        for _ in 0..10 {
            let s = rng::uniform(&mut r, 1.0, line.length() - 1.0);
            let pose = net.pose_on(0, Direction::Forward, line.point_at(s));
            let h = 1e-4;
            let fd = (line.point_at(s + h) - line.point_at(s - h)).normalize();
            // finite differences straddling a vertex are not a tangent
            let cum: Vec<f64> = line.points().windows(2).scan(0.0, |acc, w| {
                *acc += (w[1] - w[0]).norm();
                Some(*acc)
            }).collect();
            if cum.iter().any(|&c| (c - s).abs() < 2.0 * h) {
                continue;
            }
            let err = (pose.tangent.x * fd.y - pose.tangent.y * fd.x).abs().asin();
            assert!(err < 1e-6 && pose.tangent.dot(&fd) > 0.0, "{err}");
            let ahead = net.next_node_direction(&pose, 0.0);
            assert!((ahead - pose.tangent).norm() < 1e-12);
        }
    }
}

#[test]
fn arc_length_increases_along_travel() {
    let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0), Vec2::new(150.0, 50.0)]);
    let seg = RoadSegment::new(0, line.clone(), 4, false, 3.5).unwrap();
    let net = RoadNetwork::new(vec![seg]);
    for dir in [Direction::Forward, Direction::Backward] {
        let travel = net.segment(0).travel_line(dir).clone();
        let mut last = -1.0;
        for i in 0..=100 {
            let s = travel.length() * i as f64 / 100.0;
            let right = Vec2::new(travel.tangent_at(s).y, -travel.tangent_at(s).x);
            let pose = net.pose_on(0, dir, travel.point_at(s) + right * 1.75);
            assert!(pose.s > last - 1e-9);
            assert_eq!(pose.lane_index, 0);
            last = pose.s;
        }
    }
}
