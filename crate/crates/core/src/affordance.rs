//! The eight direct-perception affordances: exact computation from world
//! state and the bounded encoding used as regression targets.
//!
//! Conventions: `angle` is the ego heading minus the road tangent, degrees,
//! counterclockwise positive, wrapped to (-180, 180]. Lane distances are
//! nonnegative perpendicular distances to markings. Car distances are
//! center-to-center arc-length gaps along the ego's road.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_deg, Vec2};
use crate::road::{lane_for_offset, LanePose, RoadError, RoadNetwork};

/// Active range for car distances, meters.
pub const DEFAULT_D_MAX: f64 = 60.0;
/// Encoded value of every inactive entry.
pub const INACTIVE_CODE: f64 = 1.1;
/// Decoded values strictly above this are inactive.
pub const INACTIVE_THRESHOLD: f64 = 0.99;
/// Active values are mapped onto [-ACTIVE_BOUND, ACTIVE_BOUND].
pub const ACTIVE_BOUND: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Affordance {
    #[serde(rename = "angle")]
    Angle,
    #[serde(rename = "car_L")]
    CarL,
    #[serde(rename = "car_M")]
    CarM,
    #[serde(rename = "car_R")]
    CarR,
    #[serde(rename = "lane_LL")]
    LaneLL,
    #[serde(rename = "lane_L")]
    LaneL,
    #[serde(rename = "lane_R")]
    LaneR,
    #[serde(rename = "lane_RR")]
    LaneRR,
}

impl Affordance {
    /// Column order used everywhere a vector of eight is stored.
    pub const ALL: [Affordance; 8] = [
        Affordance::Angle,
        Affordance::CarL,
        Affordance::CarM,
        Affordance::CarR,
        Affordance::LaneLL,
        Affordance::LaneL,
        Affordance::LaneR,
        Affordance::LaneRR,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Affordance::Angle => "angle",
            Affordance::CarL => "car_L",
            Affordance::CarM => "car_M",
            Affordance::CarR => "car_R",
            Affordance::LaneLL => "lane_LL",
            Affordance::LaneL => "lane_L",
            Affordance::LaneR => "lane_R",
            Affordance::LaneRR => "lane_RR",
        }
    }

    pub fn is_car(self) -> bool {
        matches!(self, Affordance::CarL | Affordance::CarM | Affordance::CarR)
    }

    pub fn is_lane(self) -> bool {
        matches!(
            self,
            Affordance::LaneLL | Affordance::LaneL | Affordance::LaneR | Affordance::LaneRR
        )
    }
}

impl fmt::Display for Affordance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Eight affordances; `None` marks an inactive entry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "NamedAffordances", into = "NamedAffordances")]
pub struct AffordanceVector(pub [Option<f64>; 8]);

#[derive(Serialize, Deserialize)]
struct NamedAffordances {
    angle: Option<f64>,
    #[serde(rename = "car_L")]
    car_l: Option<f64>,
    #[serde(rename = "car_M")]
    car_m: Option<f64>,
    #[serde(rename = "car_R")]
    car_r: Option<f64>,
    #[serde(rename = "lane_LL")]
    lane_ll: Option<f64>,
    #[serde(rename = "lane_L")]
    lane_l: Option<f64>,
    #[serde(rename = "lane_R")]
    lane_r: Option<f64>,
    #[serde(rename = "lane_RR")]
    lane_rr: Option<f64>,
}

impl From<NamedAffordances> for AffordanceVector {
    fn from(n: NamedAffordances) -> Self {
        AffordanceVector([
            n.angle, n.car_l, n.car_m, n.car_r, n.lane_ll, n.lane_l, n.lane_r, n.lane_rr,
        ])
    }
}

impl From<AffordanceVector> for NamedAffordances {
    fn from(a: AffordanceVector) -> Self {
        let [angle, car_l, car_m, car_r, lane_ll, lane_l, lane_r, lane_rr] = a.0;
        NamedAffordances {
            angle,
            car_l,
            car_m,
            car_r,
            lane_ll,
            lane_l,
            lane_r,
            lane_rr,
        }
    }
}

impl AffordanceVector {
    pub fn get(&self, a: Affordance) -> Option<f64> {
        self.0[a.index()]
    }

    pub fn set(&mut self, a: Affordance, v: Option<f64>) {
        self.0[a.index()] = v;
    }

    pub fn is_active(&self, a: Affordance) -> bool {
        self.0[a.index()].is_some()
    }

    pub fn active_mask(&self) -> [bool; 8] {
        self.0.map(|v| v.is_some())
    }

    pub fn angle(&self) -> Option<f64> {
        self.get(Affordance::Angle)
    }
    pub fn car_m(&self) -> Option<f64> {
        self.get(Affordance::CarM)
    }
    pub fn lane_l(&self) -> Option<f64> {
        self.get(Affordance::LaneL)
    }
    pub fn lane_r(&self) -> Option<f64> {
        self.get(Affordance::LaneR)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AffordanceError {
    #[error("ego is off-road: {0}")]
    OffRoad(#[from] RoadError),
    #[error("non-finite value for {0}")]
    NonFinite(Affordance),
}

/// Affordances of an ego at `position`/`heading` among point obstacles
/// (other vehicle centers). Obstacles count for a lane when their offset
/// lies between that lane's markings and their arc-length gap ahead of the
/// ego is in (0, d_max].
pub fn compute_affordances(
    net: &RoadNetwork,
    position: Vec2,
    heading: f64,
    obstacles: &[Vec2],
    d_max: f64,
) -> Result<AffordanceVector, AffordanceError> {
    let pose = net.locate(position, heading)?;
    Ok(affordances_at(net, &pose, heading, obstacles, d_max))
}

/// As [`compute_affordances`] for an already located ego.
pub fn affordances_at(
    net: &RoadNetwork,
    pose: &LanePose,
    heading: f64,
    obstacles: &[Vec2],
    d_max: f64,
) -> AffordanceVector {
    let seg = net.segment(pose.segment);
    let markings = seg.marking_offsets(pose.direction);
    let lanes = markings.len() - 1;
    let i = pose.lane_index;
    let o = pose.offset;

    let road_heading = pose.tangent.y.atan2(pose.tangent.x);
    let angle = wrap_deg(heading.to_degrees() - road_heading.to_degrees());

    let mut out = AffordanceVector::default();
    out.set(Affordance::Angle, Some(angle));
    out.set(Affordance::LaneL, Some((o - markings[i]).abs()));
    out.set(Affordance::LaneR, Some((markings[i + 1] - o).abs()));
    if i >= 1 {
        out.set(Affordance::LaneLL, Some((o - markings[i - 1]).abs()));
    }
    if i + 2 <= lanes {
        out.set(Affordance::LaneRR, Some((markings[i + 2] - o).abs()));
    }

    let mut nearest = [None::<f64>; 3];
    for &p in obstacles {
        let (s, offset, _) = seg.project(pose.direction, p);
        let gap = s - pose.s;
        if !(gap > 0.0 && gap <= d_max) {
            continue;
        }
        if offset < markings[0] || offset > markings[lanes] {
            continue;
        }
        let j = lane_for_offset(&markings, offset) as isize - i as isize;
        if (-1..=1).contains(&j) {
            let slot = &mut nearest[(j + 1) as usize];
            if slot.map_or(true, |g| gap < g) {
                *slot = Some(gap);
            }
        }
    }
    out.set(Affordance::CarL, nearest[0]);
    out.set(Affordance::CarM, nearest[1]);
    out.set(Affordance::CarR, nearest[2]);
    out
}

/// Physical range mapped onto [-0.9, 0.9], per affordance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRanges {
    pub angle: (f64, f64),
    pub car: (f64, f64),
    pub lane_near: (f64, f64),
    pub lane_far: (f64, f64),
}

impl Default for NormalizationRanges {
    fn default() -> Self {
        NormalizationRanges {
            angle: (-90.0, 90.0),
            car: (0.0, DEFAULT_D_MAX),
            lane_near: (0.0, 5.55),
            lane_far: (0.0, 9.25),
        }
    }
}

impl NormalizationRanges {
    pub fn range(&self, a: Affordance) -> (f64, f64) {
        match a {
            Affordance::Angle => self.angle,
            Affordance::CarL | Affordance::CarM | Affordance::CarR => self.car,
            Affordance::LaneL | Affordance::LaneR => self.lane_near,
            Affordance::LaneLL | Affordance::LaneRR => self.lane_far,
        }
    }

    pub fn validate(&self) -> bool {
        [self.angle, self.car, self.lane_near, self.lane_far]
            .iter()
            .all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi)
    }

    /// Affine map of an in-range value onto [-0.9, 0.9].
    pub fn scale(&self, a: Affordance, x: f64) -> f64 {
        let (lo, hi) = self.range(a);
        -ACTIVE_BOUND + 2.0 * ACTIVE_BOUND * (x - lo) / (hi - lo)
    }

    /// Inverse of [`NormalizationRanges::scale`].
    pub fn unscale(&self, a: Affordance, y: f64) -> f64 {
        let (lo, hi) = self.range(a);
        lo + (y + ACTIVE_BOUND) * (hi - lo) / (2.0 * ACTIVE_BOUND)
    }
}

/// Regression targets: active entries in [-0.9, 0.9], inactive exactly 1.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedAffordances(pub [f64; 8]);

/// Angle and lane distances are clamped into range; car distances above the
/// range become inactive.
pub fn encode(a: &AffordanceVector, r: &NormalizationRanges) -> Result<EncodedAffordances, AffordanceError> {
    let mut out = [INACTIVE_CODE; 8];
    for var in Affordance::ALL {
        let Some(x) = a.get(var) else { continue };
        if !x.is_finite() {
            return Err(AffordanceError::NonFinite(var));
        }
        let (lo, hi) = r.range(var);
        if var.is_car() && x > hi {
            continue;
        }
        out[var.index()] = r.scale(var, x.clamp(lo, hi));
    }
    Ok(EncodedAffordances(out))
}

/// Values above [`INACTIVE_THRESHOLD`] decode as inactive; everything else
/// goes through the inverse affine map.
pub fn decode(e: &[f64; 8], r: &NormalizationRanges) -> AffordanceVector {
    let mut out = AffordanceVector::default();
    for var in Affordance::ALL {
        let y = e[var.index()];
        if y > INACTIVE_THRESHOLD {
            continue;
        }
        out.set(var, Some(r.unscale(var, y)));
    }
    out
}
