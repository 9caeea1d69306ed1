//! Mechanism layer: per-lane interaction rollouts.
//!
//! For each lane the nearest vehicle ahead of the ego is selected as that
//! lane's potential-impact vehicle. The ego is then rolled forward under
//! the Intelligent Driver Model against each lead (held at constant
//! speed), producing one terminal state per lane. The terminal set anchors
//! the trajectory optimizer's lane targets and its warm start.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimConfig, TrafficSnapshot, VehicleState};

#[derive(Debug, Error)]
pub enum IdmError {
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("non-finite input")]
    NonFinite,
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Safe time headway T, seconds.
    pub safe_time_headway: f64,
    /// Maximum acceleration a_max, m/s^2.
    pub max_accel: f64,
    /// Acceleration exponent delta.
    pub accel_exponent: f64,
    /// Desired (comfortable) deceleration b, m/s^2.
    pub desired_decel: f64,
    /// Minimum gap distance s0, meters.
    pub min_gap: f64,
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            safe_time_headway: 1.0,
            max_accel: 3.0,
            accel_exponent: 10.0,
            desired_decel: 1.7,
            min_gap: 20.0,
            desired_speed: 12.0,
        }
    }
}

/// Lane geometry plus observation range; the map information the
/// interaction model needs.
#[derive(Debug, Clone, Copy)]
pub struct MapInfo {
    pub lane_count: usize,
    pub lane_width: f64,
    /// Longitudinal observation range; also the gap assigned to the
    /// virtual lead of an empty lane, meters.
    pub observation_range: f64,
}

impl MapInfo {
    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    pub fn lane_of(&self, lat: f64) -> usize {
        let idx = (lat / self.lane_width).round();
        idx.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }
}

impl From<&SimConfig> for MapInfo {
    fn from(c: &SimConfig) -> Self {
        Self {
            lane_count: c.lane_count,
            lane_width: c.lane_width,
            observation_range: c.spawn_range,
        }
    }
}

/// Per-lane nearest vehicles ahead of the ego. `None` marks an empty lane
/// (callers substitute the virtual lead where one is needed).
#[derive(Debug, Clone)]
pub struct ImpactSet {
    pub per_lane: Vec<Option<VehicleState>>,
}

impl ImpactSet {
    pub fn lane_count(&self) -> usize {
        self.per_lane.len()
    }

    /// Lead of `lane`, virtual when the lane is empty: a phantom vehicle
    /// at the observation range, lane-centered, heading 0, moving at the
    /// desired speed. Returns (state, is_virtual).
    pub fn lead_or_virtual(
        &self,
        lane: usize,
        ego: &VehicleState,
        map: &MapInfo,
        params: &IdmParams,
    ) -> (VehicleState, bool) {
        match self.per_lane[lane] {
            Some(v) => (v, false),
            None => (
                VehicleState::new(
                    ego.lon + map.observation_range,
                    map.lane_center(lane),
                    0.0,
                    params.desired_speed,
                ),
                true,
            ),
        }
    }
}

/// Terminal state of one lane's rollout: predicted gap to the lead after
/// the horizon, the lead's lateral offset, and the lead's heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalState {
    pub gap_ahead: f64,
    pub lat: f64,
    pub heading: f64,
}

/// One terminal state per lane, in left-to-right lane order.
#[derive(Debug, Clone)]
pub struct TerminalSet {
    pub entries: Vec<TerminalState>,
}

/// Select each lane's nearest vehicle ahead of the ego. Vehicles behind
/// the ego are excluded; a vehicle exactly alongside (`lon == ego.lon`)
/// still counts as ahead.
pub fn select_impact_vehicles(snapshot: &TrafficSnapshot, map: &MapInfo) -> ImpactSet {
    let mut per_lane: Vec<Option<VehicleState>> = vec![None; map.lane_count];
    for v in &snapshot.traffic {
        if v.lon < snapshot.ego.lon {
            continue;
        }
        let lane = map.lane_of(v.lat);
        match per_lane[lane] {
            Some(cur) if cur.lon <= v.lon => {}
            _ => per_lane[lane] = Some(*v),
        }
    }
    ImpactSet { per_lane }
}

/// IDM acceleration for the ego following a lead at `gap` meters.
///
/// `closing_speed` is `v_ego - v_lead` (positive while closing in, which
/// enlarges the desired gap). The output is clamped to
/// `[-2 * desired_decel, max_accel]`.
pub fn idm_accel(
    ego_speed: f64,
    closing_speed: f64,
    gap: f64,
    params: &IdmParams,
) -> Result<f64, IdmError> {
    if !(ego_speed.is_finite() && closing_speed.is_finite() && gap.is_finite()) {
        return Err(IdmError::NonFinite);
    }
    if gap <= 0.0 {
        return Err(IdmError::NonPositiveGap(gap));
    }
    let v = ego_speed;
    let s_star = params.min_gap
        + (v * params.safe_time_headway
            + v * closing_speed / (2.0 * (params.max_accel * params.desired_decel).sqrt()))
        .max(0.0);
    let a = params.max_accel
        * (1.0 - (v / params.desired_speed).powf(params.accel_exponent) - (s_star / gap).powi(2));
    Ok(a.clamp(-2.0 * params.desired_decel, params.max_accel))
}

/// Minimum gap fed into the IDM during rollouts. A vehicle exactly
/// alongside in another lane yields a zero selection gap, which the model
/// cannot accept; flooring it keeps the recurrence total and produces
/// maximal braking there.
const ROLLOUT_GAP_FLOOR: f64 = 0.1;

/// Distance the ego covers in an unobstructed rollout: following the
/// virtual lead (observation range ahead, desired speed) for `horizon`
/// steps. The free-flow reach used to cap terminal targets.
pub fn free_flow_reach(ego_speed: f64, map: &MapInfo, params: &IdmParams, horizon: usize, dt: f64) -> f64 {
    let mut gap = map.observation_range;
    let mut v = ego_speed;
    for _ in 0..horizon {
        let a = idm_accel(v, v - params.desired_speed, gap.max(ROLLOUT_GAP_FLOOR), params)
            .expect("virtual rollout inputs are finite");
        let v_next = (v + a * dt).max(0.0);
        gap += (params.desired_speed - v) * dt;
        v = v_next;
    }
    (map.observation_range + params.desired_speed * horizon as f64 * dt - gap).max(0.0)
}

/// Roll the ego forward under the IDM against each lane's lead for
/// `horizon` steps of `dt` seconds, leads held at constant speed.
///
/// Per step: `a = IDM(v_e, v_e - v_lead, gap)`, then `v_e += a * dt` and
/// `gap += (v_lead - v_e_old) * dt`. The returned gap is the value after
/// the final update; ego speed is floored at zero throughout.
pub fn rollout_terminal_states(
    snapshot: &TrafficSnapshot,
    map: &MapInfo,
    params: &IdmParams,
    horizon: usize,
    dt: f64,
) -> Result<TerminalSet, IdmError> {
    let impact = select_impact_vehicles(snapshot, map);
    let mut entries = Vec::with_capacity(map.lane_count);
    for lane in 0..map.lane_count {
        let (lead, _) = impact.lead_or_virtual(lane, &snapshot.ego, map, params);
        let mut gap = (lead.lon - snapshot.ego.lon).max(ROLLOUT_GAP_FLOOR);
        let mut v_e = snapshot.ego.speed;
        for _ in 0..horizon {
            let a = idm_accel(v_e, v_e - lead.speed, gap.max(ROLLOUT_GAP_FLOOR), params)?;
            let v_next = (v_e + a * dt).max(0.0);
            gap += (lead.speed - v_e) * dt;
            v_e = v_next;
        }
        entries.push(TerminalState {
            gap_ahead: gap,
            lat: lead.lat,
            heading: lead.heading,
        });
    }
    Ok(TerminalSet { entries })
}
