//! Lane model over road centerlines: marking offsets, nearest-road lookup
//! and arc-length queries.
//!
//! Offsets are measured from the road centerline, positive to the right of
//! the travel direction. On two-way roads traffic keeps right and each
//! direction owns the half of the road on its right; with an odd lane count
//! the extra lane goes to the digitization (forward) direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{heading_vec, right_of, Polyline, Vec2};

pub const DEFAULT_LANE_WIDTH: f64 = 3.7;
/// Farthest a position may sit from every centerline and still be on-road.
pub const MAX_ROAD_DISTANCE: f64 = 30.0;
pub const MIN_POINT_SPACING: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RoadError {
    #[error("position is {distance:.2} m from the nearest road (limit {MAX_ROAD_DISTANCE} m)")]
    OffRoad { distance: f64 },
    #[error("invalid segment {id}: {reason}")]
    InvalidSegment { id: usize, reason: String },
    #[error("segment {segment} has no lanes in the {direction:?} direction")]
    NoLanes { segment: usize, direction: Direction },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Along the digitization order of the centerline.
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: usize,
    pub centerline: Polyline,
    pub lanes: u8,
    pub oneway: bool,
    pub lane_width: f64,
    reversed: Option<Polyline>,
}

impl RoadSegment {
    pub fn new(
        id: usize,
        centerline: Polyline,
        lanes: u8,
        oneway: bool,
        lane_width: f64,
    ) -> Result<Self, RoadError> {
        let invalid = |reason: String| RoadError::InvalidSegment { id, reason };
        if centerline.points().len() < 2 {
            return Err(invalid("centerline needs 2 points".into()));
        }
        if centerline.min_spacing() < MIN_POINT_SPACING {
            return Err(invalid(format!(
                "consecutive points closer than {MIN_POINT_SPACING} m"
            )));
        }
        if !(2..=5).contains(&lanes) {
            return Err(invalid(format!("lanes = {lanes} outside 2..=5")));
        }
        if !(2.5..=4.5).contains(&lane_width) {
            return Err(invalid(format!("lane width {lane_width} outside [2.5, 4.5]")));
        }
        let reversed = Some(centerline.reversed());
        Ok(RoadSegment {
            id,
            centerline,
            lanes,
            oneway,
            lane_width,
            reversed,
        })
    }

    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    /// Lanes available to traffic moving in `dir`.
    pub fn lanes_in(&self, dir: Direction) -> usize {
        let n = self.lanes as usize;
        match (self.oneway, dir) {
            (true, Direction::Forward) => n,
            (true, Direction::Backward) => 0,
            (false, Direction::Forward) => n.div_ceil(2),
            (false, Direction::Backward) => n / 2,
        }
    }

    /// Centerline in the order traffic in `dir` traverses it.
    pub fn travel_line(&self, dir: Direction) -> &Polyline {
        match dir {
            Direction::Forward => &self.centerline,
            Direction::Backward => self
                .reversed
                .as_ref()
                .expect("segments are built through RoadSegment::new"),
        }
    }

    /// Lane marking offsets for traffic in `dir`, left to right.
    pub fn marking_offsets(&self, dir: Direction) -> Vec<f64> {
        let w = self.lane_width;
        let n = self.lanes_in(dir);
        if self.oneway {
            let half = n as f64 / 2.0;
            (0..=n).map(|k| (k as f64 - half) * w).collect()
        } else {
            (0..=n).map(|k| k as f64 * w).collect()
        }
    }

    /// Arc length and signed offset of `p` in the travel frame of `dir`.
    pub fn project(&self, dir: Direction, p: Vec2) -> (f64, f64, f64) {
        let proj = self.centerline.project(p);
        match dir {
            Direction::Forward => (proj.s, proj.offset, proj.distance),
            Direction::Backward => (self.length() - proj.s, -proj.offset, proj.distance),
        }
    }
}

/// Where a vehicle sits in the lane model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePose {
    pub segment: usize,
    pub direction: Direction,
    /// 0 is the leftmost lane of the travel direction.
    pub lane_index: usize,
    /// Arc length along the travel direction.
    pub s: f64,
    /// Signed distance from the road centerline, positive to the right.
    pub offset: f64,
    /// Signed distance from the center of `lane_index`, positive to the right.
    pub lateral: f64,
    /// Unit travel direction at `s`.
    pub tangent: Vec2,
}

/// Index of the lane containing `offset`; a point exactly on a marking
/// belongs to the lane on its right. Points beyond the outer markings map to
/// the edge lanes.
pub fn lane_for_offset(markings: &[f64], offset: f64) -> usize {
    let lanes = markings.len() - 1;
    let k = markings.partition_point(|&m| m <= offset);
    k.saturating_sub(1).min(lanes - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
}

impl RoadNetwork {
    /// Segment ids are reassigned to their index in `segments`.
    pub fn new(mut segments: Vec<RoadSegment>) -> Self {
        for (i, s) in segments.iter_mut().enumerate() {
            s.id = i;
        }
        RoadNetwork { segments }
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: usize) -> &RoadSegment {
        &self.segments[id]
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Nearest segment within [`MAX_ROAD_DISTANCE`], with the travel
    /// direction picked by heading alignment on two-way roads.
    pub fn locate(&self, position: Vec2, heading: f64) -> Result<LanePose, RoadError> {
        let mut best: Option<(usize, f64)> = None;
        for seg in &self.segments {
            let d = seg.centerline.project(position).distance;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((seg.id, d));
            }
        }
        let (id, distance) = best.ok_or(RoadError::OffRoad {
            distance: f64::INFINITY,
        })?;
        if distance > MAX_ROAD_DISTANCE {
            return Err(RoadError::OffRoad { distance });
        }
        let seg = &self.segments[id];
        let dir = if seg.oneway {
            Direction::Forward
        } else {
            let proj = seg.centerline.project(position);
            let t = seg.centerline.piece_direction(proj.piece);
            if heading_vec(heading).dot(&t) > 0.0 {
                Direction::Forward
            } else {
                Direction::Backward
            }
        };
        Ok(self.pose_on(id, dir, position))
    }

    /// Lane pose of `position` on a given segment and direction.
    pub fn pose_on(&self, segment: usize, dir: Direction, position: Vec2) -> LanePose {
        let seg = &self.segments[segment];
        let (s, offset, _) = seg.project(dir, position);
        let markings = seg.marking_offsets(dir);
        let lane_index = lane_for_offset(&markings, offset);
        let center = 0.5 * (markings[lane_index] + markings[lane_index + 1]);
        LanePose {
            segment,
            direction: dir,
            lane_index,
            s,
            offset,
            lateral: offset - center,
            tangent: seg.travel_line(dir).tangent_at(s),
        }
    }

    /// World position and heading for a lane-relative placement.
    pub fn place(
        &self,
        segment: usize,
        dir: Direction,
        lane_index: usize,
        s: f64,
        lateral: f64,
    ) -> Result<(Vec2, f64), RoadError> {
        let seg = &self.segments[segment];
        let markings = seg.marking_offsets(dir);
        if lane_index + 1 >= markings.len() {
            return Err(RoadError::NoLanes {
                segment,
                direction: dir,
            });
        }
        let offset = 0.5 * (markings[lane_index] + markings[lane_index + 1]) + lateral;
        let line = seg.travel_line(dir);
        let t = line.tangent_at(s);
        let p = line.point_at(s) + right_of(t) * offset;
        Ok((p, t.y.atan2(t.x)))
    }

    /// Travel direction `lookahead` meters further along the lane, clamped
    /// to the segment end.
    pub fn next_node_direction(&self, pose: &LanePose, lookahead: f64) -> Vec2 {
        let seg = &self.segments[pose.segment];
        let line = seg.travel_line(pose.direction);
        line.tangent_at((pose.s + lookahead).min(line.length()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(lanes: u8, oneway: bool) -> RoadNetwork {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)]);
        RoadNetwork::new(vec![RoadSegment::new(0, line, lanes, oneway, 3.7).unwrap()])
    }

    #[test]
    fn one_way_three_lane_offsets() {
        let net = straight(3, true);
        let m = net.segment(0).marking_offsets(Direction::Forward);
        let expect = [-5.55, -1.85, 1.85, 5.55];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn one_way_two_lane_symmetric() {
        let m = straight(2, true).segment(0).marking_offsets(Direction::Forward);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0], -m[2]);
        assert_eq!(m[1], 0.0);
    }

    #[test]
    fn two_way_split_stays_on_own_side() {
        let net = straight(4, false);
        for dir in [Direction::Forward, Direction::Backward] {
            let m = net.segment(0).marking_offsets(dir);
            assert_eq!(m.len(), 3);
            assert!(m.iter().all(|&o| o >= 0.0));
        }
        let odd = straight(5, false);
        assert_eq!(odd.segment(0).lanes_in(Direction::Forward), 3);
        assert_eq!(odd.segment(0).lanes_in(Direction::Backward), 2);
    }

    #[test]
    fn centerline_point_maps_to_middle_lane() {
        let net = straight(3, true);
        let pose = net.locate(Vec2::new(50.0, 0.0), 0.0).unwrap();
        assert_eq!(pose.lane_index, 1);
        assert_eq!(pose.lateral, 0.0);
        assert_eq!(pose.s, 50.0);
    }

    #[test]
    fn boundary_goes_to_right_lane() {
        let net = straight(3, true);
        // heading +x, so right of travel is -y
        let pose = net.locate(Vec2::new(50.0, -1.85), 0.0).unwrap();
        assert_eq!(pose.offset, 1.85);
        assert_eq!(pose.lane_index, 2);
    }

    #[test]
    fn heading_selects_direction_on_two_way_road() {
        let net = straight(4, false);
        let pose = net
            .locate(Vec2::new(50.0, 5.55), std::f64::consts::PI)
            .unwrap();
        assert_eq!(pose.direction, Direction::Backward);
        assert_eq!(pose.lane_index, 1);
        assert!((pose.s - 150.0).abs() < 1e-12);
    }

    #[test]
    fn far_point_is_off_road() {
        let net = straight(3, true);
        assert!(matches!(
            net.locate(Vec2::new(50.0, 40.0), 0.0),
            Err(RoadError::OffRoad { .. })
        ));
    }

    #[test]
    fn straight_segment_tangent_is_constant() {
        let net = straight(3, true);
        let pose = net.locate(Vec2::new(10.0, 1.0), 0.0).unwrap();
        for look in [1.0, 50.0, 500.0] {
            assert_eq!(net.next_node_direction(&pose, look), Vec2::new(1.0, 0.0));
        }
    }

    #[test]
    fn quarter_arc_rotates_tangent() {
        // lead-in east, quarter arc of radius 50 turning left, lead-out north
        let r = 50.0;
        let mut pts = vec![Vec2::new(-20.0, 0.0)];
        for k in 0..=36 {
            let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::FRAC_PI_2 / 36.0;
            pts.push(Vec2::new(r * a.cos(), r + r * a.sin()));
        }
        pts.push(Vec2::new(r, r + 20.0));
        let line = Polyline::new(pts);
        let net = RoadNetwork::new(vec![RoadSegment::new(0, line, 3, true, 3.7).unwrap()]);
        let pose = net.locate(Vec2::new(0.0, 0.0), 0.0).unwrap();
        assert!((pose.s - 20.0).abs() < 1e-12);
        let arc_len = net.segment(0).length() - 40.0;
        let dir = net.next_node_direction(&pose, arc_len + 1e-6);
        assert!((dir - Vec2::new(0.0, 1.0)).norm() < 1e-12);
        let lead_in = net.locate(Vec2::new(-10.0, 0.0), 0.0).unwrap();
        assert_eq!(net.next_node_direction(&lead_in, 5.0), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn invalid_segments_rejected() {
        let tight = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.2, 0.0)]);
        assert!(RoadSegment::new(0, tight, 3, true, 3.7).is_err());
        let ok = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)]);
        assert!(RoadSegment::new(0, ok.clone(), 3, true, 5.0).is_err());
        assert!(RoadSegment::new(0, ok, 6, true, 3.7).is_err());
    }
}
