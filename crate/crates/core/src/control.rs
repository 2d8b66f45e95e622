//! Explicit controller driven by affordances: proportional lane keeping,
//! intelligent-driver-model gap keeping and a lane-change gate.
//!
//! Steering is in radians, positive clockwise (to the right).

use serde::{Deserialize, Serialize};

use crate::affordance::{Affordance, AffordanceVector};

pub const MAX_STEER: f64 = 0.5;
pub const MIN_ACCEL: f64 = -6.0;
pub const MAX_ACCEL: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Steering per radian of heading error.
    pub k_angle: f64,
    /// Steering per meter of offset from lane center.
    pub k_offset: f64,
    /// Desired speed, m/s.
    pub v0: f64,
    /// Time headway, s.
    pub headway: f64,
    pub a_max: f64,
    pub b_comfort: f64,
    /// Jam distance, bumper to bumper, m.
    pub s_min: f64,
    /// Converts center gaps into bumper gaps.
    pub vehicle_length: f64,
    /// A lead car closer than this (center gap) triggers a lane-change check.
    pub lane_change_gap: f64,
    /// Target lane must be empty or have its car farther than this.
    pub lane_clear_gap: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            k_angle: 0.3,
            k_offset: 0.01,
            v0: 30.0,
            headway: 1.5,
            a_max: 1.0,
            b_comfort: 1.5,
            s_min: 2.0,
            vehicle_length: 4.5,
            lane_change_gap: 20.0,
            lane_clear_gap: 30.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("k_angle", self.k_angle),
            ("k_offset", self.k_offset),
            ("v0", self.v0),
            ("headway", self.headway),
            ("a_max", self.a_max),
            ("b_comfort", self.b_comfort),
            ("s_min", self.s_min),
            ("vehicle_length", self.vehicle_length),
            ("lane_change_gap", self.lane_change_gap),
            ("lane_clear_gap", self.lane_clear_gap),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, v)) => Err(format!("gain {name} = {v} must be positive")),
            None => Ok(()),
        }
    }

    /// Bumper gap at which a follower holds speed `v` behind an equal-speed
    /// leader.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        (self.s_min + v * self.headway) / (1.0 - (v / self.v0).powi(4)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub steering: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Keep,
    ShiftLeft,
    ShiftRight,
}

/// Offset from lane center, positive to the right.
pub fn lane_offset(a: &AffordanceVector) -> Option<f64> {
    Some(0.5 * (a.lane_l()? - a.lane_r()?))
}

/// Zero when angle or either adjacent lane distance is inactive.
pub fn steer(a: &AffordanceVector, g: &ControllerGains) -> f64 {
    let (Some(angle), Some(e)) = (a.angle(), lane_offset(a)) else {
        return 0.0;
    };
    (g.k_angle * angle.to_radians() - g.k_offset * e).clamp(-MAX_STEER, MAX_STEER)
}

/// IDM acceleration. `closing_speed` is own speed minus lead speed; it is
/// only used when car_M is active.
pub fn speed_control(a: &AffordanceVector, v: f64, closing_speed: Option<f64>, g: &ControllerGains) -> f64 {
    let free = 1.0 - (v / g.v0).powi(4);
    let interaction = match a.car_m() {
        Some(gap) => {
            let s = (gap - g.vehicle_length).max(1e-3);
            let dv = closing_speed.unwrap_or(0.0);
            let dynamic = v * g.headway + v * dv / (2.0 * (g.a_max * g.b_comfort).sqrt());
            let s_star = g.s_min + dynamic.max(0.0);
            (s_star / s).powi(2)
        }
        None => 0.0,
    };
    (g.a_max * (free - interaction)).clamp(MIN_ACCEL, MAX_ACCEL)
}

pub fn lane_change_decision(a: &AffordanceVector, g: &ControllerGains) -> LaneDecision {
    match a.car_m() {
        Some(gap) if gap < g.lane_change_gap => {}
        _ => return LaneDecision::Keep,
    }
    let open = |lane: Affordance, car: Affordance| {
        a.is_active(lane) && a.get(car).map_or(true, |c| c > g.lane_clear_gap)
    };
    if open(Affordance::LaneLL, Affordance::CarL) {
        LaneDecision::ShiftLeft
    } else if open(Affordance::LaneRR, Affordance::CarR) {
        LaneDecision::ShiftRight
    } else {
        LaneDecision::Keep
    }
}

pub fn control(a: &AffordanceVector, v: f64, closing_speed: Option<f64>, g: &ControllerGains) -> ControlOutput {
    ControlOutput {
        steering: steer(a, g),
        accel: speed_control(a, v, closing_speed, g),
    }
}
