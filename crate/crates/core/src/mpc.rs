//! Receding-horizon constrained trajectory optimization.
//!
//! Decision variables are the control-horizon action pairs; states follow
//! by single shooting through the kinematic bicycle model, with actions
//! past the control horizon held at the last value. The cost pulls the
//! horizon-end pose toward per-lane targets weighted by the driving
//! tendency, penalizes obstacle proximity, control effort, and control
//! increments. Four constraint families are enforced: shooting dynamics
//! (satisfied by construction and re-verified), control-increment boxes,
//! two-circle collision clearance against every predicted obstacle, and a
//! following-distance bound against the current lane's lead. Collision
//! clearance is evaluated between the two-circle centers of the ego and
//! each obstacle (minimum over the four cross pairs), the same geometry
//! the simulator's collision test uses, so a feasible plan is clear under
//! that test at every predicted state.
//!
//! The solver is an augmented-Lagrangian outer loop around an L-BFGS
//! inner descent with analytic adjoint gradients. An infeasible or failed
//! solve is always replaced by a straight-line braking fallback, so the
//! planner as a whole is total.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idm::{rollout_terminal_states, select_impact_vehicles, IdmParams, MapInfo, TerminalSet};
use crate::sim::{safety_radius, step_kinematics, Action, SimConfig, TrafficSnapshot, VehicleState};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("tendency factor {0} outside [-1, 1]")]
    TendencyOutOfRange(f64),
    #[error("horizon mismatch: {0}")]
    HorizonMismatch(&'static str),
}

/// Solver and cost configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Prediction horizon N_p, steps.
    pub prediction_horizon: usize,
    /// Control horizon N_c, steps. Actions beyond it are move-blocked.
    pub control_horizon: usize,
    /// Stage discount; fixed to 1, the concrete cost carries no discount.
    pub discount: f64,
    /// Control effort weight R_u.
    pub control_weight: f64,
    /// Control increment weight R_du.
    pub increment_weight: f64,
    /// Obstacle proximity weight R.
    pub proximity_weight: f64,
    /// Speed increment limit per step, m/s.
    pub dv_limit: f64,
    /// Steer increment limit per step, rad.
    pub dsteer_limit: f64,
    /// Following distance d_s behind the current lane's lead, meters.
    pub follow_distance: f64,
    /// Two-circle safety radius R, meters.
    pub safety_radius: f64,
    /// Margin slack added to the strict collision inequality, m^2.
    pub collision_margin: f64,
    pub kkt_tolerance: f64,
    pub max_iterations: usize,
    /// Plant parameters mirrored from the simulator.
    pub dt: f64,
    pub wheelbase: f64,
    pub speed_cap: f64,
    pub steer_cap: f64,
    pub vehicle_length: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 30,
            control_horizon: 15,
            discount: 1.0,
            control_weight: 0.01,
            increment_weight: 0.2,
            proximity_weight: 10.0,
            dv_limit: 3.0,
            dsteer_limit: 0.388,
            follow_distance: 5.0,
            safety_radius: safety_radius(5.0, 2.0),
            collision_margin: 1e-3,
            kkt_tolerance: 1e-6,
            max_iterations: 100,
            dt: 0.1,
            wheelbase: 2.9,
            speed_cap: 15.0,
            steer_cap: 0.6,
            vehicle_length: 5.0,
        }
    }
}

impl MpcConfig {
    pub fn from_sim(sim: &SimConfig) -> Self {
        Self {
            dt: sim.dt,
            wheelbase: sim.wheelbase,
            speed_cap: sim.max_command_speed,
            steer_cap: sim.max_steer,
            safety_radius: safety_radius(sim.vehicle_length, sim.vehicle_width),
            vehicle_length: sim.vehicle_length,
            ..Self::default()
        }
    }

    /// Center-to-center following distance the cost aims for: the
    /// constraint bound plus one body length, which keeps the two-circle
    /// test clear with margin (the constraint itself allows `d_s`).
    pub fn target_follow_distance(&self) -> f64 {
        self.follow_distance + self.vehicle_length
    }
}

/// Normalized per-lane target weights, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneTargetWeights {
    pub weights: Vec<f64>,
}

/// A pose on the road: longitudinal, lateral, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub lon: f64,
    pub lat: f64,
    pub heading: f64,
}

/// Map the tendency factor to lane-target weights.
///
/// `epsilon` sweeps a continuous lane coordinate `u = (eps+1)/2 * (m-1)`
/// from the leftmost lane (-1) to the rightmost (+1); each lane gets the
/// triangular kernel weight `max(0, 1 - |u - j|)`, normalized to sum one.
pub fn tendency_to_weights(epsilon: f64, lane_count: usize) -> Result<LaneTargetWeights, MpcError> {
    if !(-1.0..=1.0).contains(&epsilon) {
        return Err(MpcError::TendencyOutOfRange(epsilon));
    }
    let m = lane_count.max(1);
    let u = (epsilon + 1.0) / 2.0 * (m as f64 - 1.0);
    let mut weights: Vec<f64> = (0..m).map(|j| (1.0 - (u - j as f64).abs()).max(0.0)).collect();
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        for w in &mut weights {
            *w /= sum;
        }
    } else {
        weights[0] = 1.0;
    }
    Ok(LaneTargetWeights { weights })
}

/// Constant-velocity, constant-heading extrapolation of every observed
/// traffic vehicle over the prediction horizon. Returns one pose sequence
/// of exactly `horizon` entries per vehicle.
pub fn predict_obstacles(snapshot: &TrafficSnapshot, horizon: usize, dt: f64) -> Vec<Vec<Pose>> {
    snapshot
        .traffic
        .iter()
        .map(|v| {
            (1..=horizon)
                .map(|i| {
                    let t = i as f64 * dt;
                    Pose {
                        lon: v.lon + v.speed * v.heading.cos() * t,
                        lat: v.lat + v.speed * v.heading.sin() * t,
                        heading: v.heading,
                    }
                })
                .collect()
        })
        .collect()
}

/// Sizes of the four constraint families of a built problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCounts {
    pub dynamics: usize,
    pub increments: usize,
    pub collision: usize,
    pub following: usize,
}

/// Predicted motion of one obstacle over the horizon.
#[derive(Debug, Clone)]
pub struct ObstacleTrack {
    /// Vehicle centers at steps 1..=N_p (proximity cost).
    pub centers: Vec<(f64, f64)>,
    /// Two-circle centers at steps 1..=N_p (collision clearance). The
    /// circle layout matches the simulator's collision test, so a
    /// feasible plan is clear under that test at every predicted state.
    pub circles: Vec<[(f64, f64); 2]>,
}

/// The assembled nonlinear program.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub initial: Pose,
    pub initial_speed: f64,
    /// Previously applied action; base for the first increment.
    pub prev_action: Action,
    /// Per-lane terminal pose targets.
    pub targets: Vec<Pose>,
    /// Per-lane target weights, normalized.
    pub weights: Vec<f64>,
    pub obstacles: Vec<ObstacleTrack>,
    /// Predicted lon of the current lane's lead at steps 1..=N_p, minus
    /// which the following constraint is inactive.
    pub lead_lon: Option<Vec<f64>>,
    pub config: MpcConfig,
}

/// Result of one solve.
#[derive(Debug, Clone)]
pub struct NlpSolution {
    /// Exactly N_c action pairs; held at the last value beyond N_c.
    pub actions: Vec<Action>,
    /// Predicted poses at steps 1..=N_p.
    pub predicted_states: Vec<Pose>,
    pub cost: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub fallback_used: bool,
}

/// Convert per-lane terminal rollouts into absolute pose targets.
///
/// An occupied lane's target sits one following margin behind the lead's
/// predicted position (`gap_now + v_lead * N_p * dt - target_follow`),
/// clamped between zero and the free-flow reach. An empty lane converts
/// its virtual-lead rollout, which lands exactly at the free-flow reach.
/// Lateral target is the lane center, heading target zero.
pub fn terminal_pose_targets(
    snapshot: &TrafficSnapshot,
    terminal_set: &TerminalSet,
    map: &MapInfo,
    idm: &IdmParams,
    config: &MpcConfig,
) -> Vec<Pose> {
    let horizon = config.prediction_horizon;
    let dt = config.dt;
    let impact = select_impact_vehicles(snapshot, map);
    let free_reach = crate::idm::free_flow_reach(snapshot.ego.speed, map, idm, horizon, dt);
    (0..map.lane_count)
        .map(|lane| {
            let (lead, is_virtual) = impact.lead_or_virtual(lane, &snapshot.ego, map, idm);
            let displacement = if is_virtual {
                (map.observation_range + idm.desired_speed * horizon as f64 * dt
                    - terminal_set.entries[lane].gap_ahead)
                    .max(0.0)
            } else {
                let gap_now = (lead.lon - snapshot.ego.lon).max(0.0);
                let lead_advance = lead.speed * lead.heading.cos() * horizon as f64 * dt;
                (gap_now + lead_advance - config.target_follow_distance()).clamp(0.0, free_reach)
            };
            Pose {
                lon: snapshot.ego.lon + displacement,
                lat: map.lane_center(lane),
                heading: 0.0,
            }
        })
        .collect()
}

/// Pose target for a lane treated as free: the ego's free-flow reach in
/// that lane.
pub fn free_lane_target(
    ego: &VehicleState,
    lane: usize,
    map: &MapInfo,
    idm: &IdmParams,
    horizon: usize,
    dt: f64,
) -> Pose {
    Pose {
        lon: ego.lon + crate::idm::free_flow_reach(ego.speed, map, idm, horizon, dt),
        lat: map.lane_center(lane),
        heading: 0.0,
    }
}

/// Assemble the program from explicit pose targets.
pub fn build_problem_from_targets(
    snapshot: &TrafficSnapshot,
    targets: Vec<Pose>,
    weights: &LaneTargetWeights,
    obstacles: &[Vec<Pose>],
    config: &MpcConfig,
    map: &MapInfo,
    prev_action: Action,
) -> Result<NlpProblem, MpcError> {
    if targets.len() != weights.weights.len() {
        return Err(MpcError::HorizonMismatch("targets vs weights"));
    }
    let np = config.prediction_horizon;
    for path in obstacles {
        if path.len() != np {
            return Err(MpcError::HorizonMismatch("obstacle path length vs prediction horizon"));
        }
    }
    let ego = snapshot.ego;
    let ego_lane = map.lane_of(ego.lat);
    let impact = select_impact_vehicles(snapshot, map);
    let lead_lon = impact.per_lane[ego_lane].map(|lead| {
        (1..=np)
            .map(|i| lead.lon + lead.speed * lead.heading.cos() * i as f64 * config.dt)
            .collect()
    });
    let off = config.vehicle_length / 4.0;
    Ok(NlpProblem {
        initial: Pose {
            lon: ego.lon,
            lat: ego.lat,
            heading: ego.heading,
        },
        initial_speed: ego.speed,
        prev_action,
        targets,
        weights: weights.weights.clone(),
        obstacles: obstacles
            .iter()
            .map(|path| ObstacleTrack {
                centers: path.iter().map(|p| (p.lon, p.lat)).collect(),
                circles: path
                    .iter()
                    .map(|p| {
                        let (dx, dy) = (off * p.heading.cos(), off * p.heading.sin());
                        [(p.lon + dx, p.lat + dy), (p.lon - dx, p.lat - dy)]
                    })
                    .collect(),
            })
            .collect(),
        lead_lon,
        config: config.clone(),
    })
}

/// Assemble the program with targets derived from the terminal set.
pub fn build_problem(
    snapshot: &TrafficSnapshot,
    terminal_set: &TerminalSet,
    weights: &LaneTargetWeights,
    obstacles: &[Vec<Pose>],
    config: &MpcConfig,
    map: &MapInfo,
    idm: &IdmParams,
    prev_action: Action,
) -> Result<NlpProblem, MpcError> {
    if terminal_set.entries.len() != map.lane_count {
        return Err(MpcError::HorizonMismatch("terminal set vs lane count"));
    }
    let targets = terminal_pose_targets(snapshot, terminal_set, map, idm, config);
    build_problem_from_targets(snapshot, targets, weights, obstacles, config, map, prev_action)
}

const HEADING_CAP: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;
const PROXIMITY_FLOOR: f64 = 1e-6;

struct Rollout {
    /// Poses at steps 0..=N_p.
    poses: Vec<[f64; 3]>,
    /// Effective (clamped) controls used at steps 0..N_p-1.
    v_eff: Vec<f64>,
    d_eff: Vec<f64>,
    /// Clamp indicator derivatives.
    v_active: Vec<f64>,
    d_active: Vec<f64>,
    h_active: Vec<f64>,
}

impl NlpProblem {
    fn nc(&self) -> usize {
        self.config.control_horizon
    }

    fn np(&self) -> usize {
        self.config.prediction_horizon
    }

    fn blk(&self, i: usize) -> usize {
        i.min(self.nc() - 1)
    }

    pub fn constraint_counts(&self) -> ConstraintCounts {
        ConstraintCounts {
            dynamics: self.nc() - 1,
            increments: self.np(),
            collision: self.np() * self.obstacles.len(),
            following: if self.lead_lon.is_some() { self.np() } else { 0 },
        }
    }

    fn rollout(&self, z: &[f64]) -> Rollout {
        let np = self.np();
        let cfg = &self.config;
        let mut poses = Vec::with_capacity(np + 1);
        poses.push([self.initial.lon, self.initial.lat, self.initial.heading]);
        let mut v_eff = Vec::with_capacity(np);
        let mut d_eff = Vec::with_capacity(np);
        let mut v_active = Vec::with_capacity(np);
        let mut d_active = Vec::with_capacity(np);
        let mut h_active = Vec::with_capacity(np);
        for i in 0..np {
            let a = self.blk(i);
            let v_raw = z[2 * a];
            let d_raw = z[2 * a + 1];
            let v = v_raw.clamp(0.0, cfg.speed_cap);
            let d = d_raw.clamp(-cfg.steer_cap, cfg.steer_cap);
            // gates are closed at the bounds so a warm start sitting
            // exactly on a clamp (a braked-to-zero speed) still sees the
            // interior gradient and can climb out
            v_active.push(if (0.0..=cfg.speed_cap).contains(&v_raw) { 1.0 } else { 0.0 });
            d_active.push(if d_raw.abs() <= cfg.steer_cap { 1.0 } else { 0.0 });
            let [x, y, phi] = *poses.last().unwrap();
            let (c, s) = (phi.cos(), phi.sin());
            let phi_next_raw = phi + v * d.tan() / cfg.wheelbase * cfg.dt;
            h_active.push(if phi_next_raw.abs() <= HEADING_CAP { 1.0 } else { 0.0 });
            poses.push([
                x + v * c * cfg.dt,
                y + v * s * cfg.dt,
                phi_next_raw.clamp(-HEADING_CAP, HEADING_CAP),
            ]);
            v_eff.push(v);
            d_eff.push(d);
        }
        Rollout {
            poses,
            v_eff,
            d_eff,
            v_active,
            d_active,
            h_active,
        }
    }

    /// Plain objective (no constraint terms).
    pub fn cost(&self, z: &[f64]) -> f64 {
        let ro = self.rollout(z);
        self.cost_of_rollout(&ro, z)
    }

    fn cost_of_rollout(&self, ro: &Rollout, z: &[f64]) -> f64 {
        let cfg = &self.config;
        let np = self.np();
        let nc = self.nc();
        let mut j = 0.0;
        let end = ro.poses[np];
        for (t, w) in self.targets.iter().zip(&self.weights) {
            let dx = end[0] - t.lon;
            let dy = end[1] - t.lat;
            let dp = end[2] - t.heading;
            j += w * (dx * dx + dy * dy + dp * dp);
        }
        for track in &self.obstacles {
            for (i, &(ox, oy)) in track.centers.iter().enumerate() {
                let p = ro.poses[i + 1];
                let d2 = ((p[0] - ox).powi(2) + (p[1] - oy).powi(2)).max(PROXIMITY_FLOOR);
                j += cfg.proximity_weight / d2;
            }
        }
        // control effort is charged per prediction step through the
        // move-blocked action, otherwise the held tail action would buy
        // displacement at a fraction of the effort cost
        for i in 0..np {
            let a = self.blk(i);
            let v = z[2 * a];
            let d = z[2 * a + 1];
            j += cfg.control_weight * (v * v + d * d);
        }
        let mut prev = [self.prev_action.speed, self.prev_action.steer];
        for i in 0..nc {
            let v = z[2 * i];
            let d = z[2 * i + 1];
            let dv = v - prev[0];
            let dd = d - prev[1];
            j += cfg.increment_weight * (dv * dv + dd * dd);
            prev = [v, d];
        }
        j
    }

    /// Signed constraint values, `g <= 0` feasible. Layout:
    /// increments (4 per control step), collision (per obstacle per step),
    /// following (per step).
    fn constraints(&self, ro: &Rollout, z: &[f64], out: &mut Vec<f64>) {
        let cfg = &self.config;
        out.clear();
        let mut prev = [self.prev_action.speed, self.prev_action.steer];
        for i in 0..self.nc() {
            let dv = z[2 * i] - prev[0];
            let dd = z[2 * i + 1] - prev[1];
            out.push(dv - cfg.dv_limit);
            out.push(-dv - cfg.dv_limit);
            out.push(dd - cfg.dsteer_limit);
            out.push(-dd - cfg.dsteer_limit);
            prev = [z[2 * i], z[2 * i + 1]];
        }
        let clearance = 4.0 * cfg.safety_radius * cfg.safety_radius + cfg.collision_margin;
        let off = cfg.vehicle_length / 4.0;
        for track in &self.obstacles {
            for (i, circ) in track.circles.iter().enumerate() {
                let p = ro.poses[i + 1];
                let (c, si) = (p[2].cos(), p[2].sin());
                let mut min_d2 = f64::INFINITY;
                for sign in [1.0, -1.0] {
                    let ex = p[0] + sign * off * c;
                    let ey = p[1] + sign * off * si;
                    for &(ox, oy) in circ {
                        let d2 = (ex - ox) * (ex - ox) + (ey - oy) * (ey - oy);
                        min_d2 = min_d2.min(d2);
                    }
                }
                out.push(clearance - min_d2);
            }
        }
        if let Some(lead) = &self.lead_lon {
            for (i, &ll) in lead.iter().enumerate() {
                out.push(ro.poses[i + 1][0] - ll + cfg.follow_distance);
            }
        }
    }

    fn max_violation(&self, z: &[f64]) -> f64 {
        let ro = self.rollout(z);
        let mut g = Vec::new();
        self.constraints(&ro, z, &mut g);
        g.iter().cloned().fold(0.0, f64::max)
    }

    /// Augmented-Lagrangian value and gradient. `lambda` is laid out as in
    /// `constraints`. Gradients flow through the rollout by adjoint.
    fn al_eval(&self, z: &[f64], lambda: &[f64], mu: f64, grad: &mut [f64]) -> f64 {
        let cfg = &self.config;
        let np = self.np();
        let nc = self.nc();
        let dt = cfg.dt;
        let ro = self.rollout(z);
        grad.iter_mut().for_each(|g| *g = 0.0);

        let mut value = self.cost_of_rollout(&ro, z);

        // per-state adjoint seeds
        let mut seed = vec![[0.0f64; 3]; np + 1];
        let end = ro.poses[np];
        for (t, w) in self.targets.iter().zip(&self.weights) {
            seed[np][0] += 2.0 * w * (end[0] - t.lon);
            seed[np][1] += 2.0 * w * (end[1] - t.lat);
            seed[np][2] += 2.0 * w * (end[2] - t.heading);
        }
        for track in &self.obstacles {
            for (i, &(ox, oy)) in track.centers.iter().enumerate() {
                let p = ro.poses[i + 1];
                let dx = p[0] - ox;
                let dy = p[1] - oy;
                let d2 = (dx * dx + dy * dy).max(PROXIMITY_FLOOR);
                if d2 > PROXIMITY_FLOOR {
                    let k = -cfg.proximity_weight / (d2 * d2);
                    seed[i + 1][0] += k * 2.0 * dx;
                    seed[i + 1][1] += k * 2.0 * dy;
                }
            }
        }

        // augmented-Lagrangian terms; multiplier layout mirrors constraints()
        let mut li = 0usize;
        let al = |g: f64, lam: f64| -> (f64, f64) {
            let t = lam + mu * g;
            if t > 0.0 {
                ((t * t - lam * lam) / (2.0 * mu), t)
            } else {
                (-lam * lam / (2.0 * mu), 0.0)
            }
        };

        let mut prev = [self.prev_action.speed, self.prev_action.steer];
        for i in 0..nc {
            let v = z[2 * i];
            let d = z[2 * i + 1];
            let dv = v - prev[0];
            let dd = d - prev[1];
            let rows = [(dv - cfg.dv_limit, 1.0, 0), (-dv - cfg.dv_limit, -1.0, 0), (dd - cfg.dsteer_limit, 1.0, 1), (-dd - cfg.dsteer_limit, -1.0, 1)];
            for (g, sign, comp) in rows {
                let (val, force) = al(g, lambda[li]);
                li += 1;
                value += val;
                if force != 0.0 {
                    let fg = force * sign;
                    grad[2 * i + comp] += fg;
                    if i > 0 {
                        grad[2 * (i - 1) + comp] -= fg;
                    }
                }
            }
            prev = [v, d];
        }

        let clearance = 4.0 * cfg.safety_radius * cfg.safety_radius + cfg.collision_margin;
        let off = cfg.vehicle_length / 4.0;
        for track in &self.obstacles {
            for (i, circ) in track.circles.iter().enumerate() {
                let p = ro.poses[i + 1];
                let (c, si) = (p[2].cos(), p[2].sin());
                let mut best = (f64::INFINITY, 1.0, (0.0, 0.0));
                for sign in [1.0, -1.0] {
                    let ex = p[0] + sign * off * c;
                    let ey = p[1] + sign * off * si;
                    for &(ox, oy) in circ {
                        let d2 = (ex - ox) * (ex - ox) + (ey - oy) * (ey - oy);
                        if d2 < best.0 {
                            best = (d2, sign, (ox, oy));
                        }
                    }
                }
                let g = clearance - best.0;
                let (val, force) = al(g, lambda[li]);
                li += 1;
                value += val;
                if force != 0.0 {
                    let (_, sign, (ox, oy)) = best;
                    let ex = p[0] + sign * off * c;
                    let ey = p[1] + sign * off * si;
                    let dx = ex - ox;
                    let dy = ey - oy;
                    seed[i + 1][0] += force * (-2.0 * dx);
                    seed[i + 1][1] += force * (-2.0 * dy);
                    seed[i + 1][2] += force * (-2.0 * (dx * (-sign * off * si) + dy * (sign * off * c)));
                }
            }
        }
        if let Some(lead) = &self.lead_lon {
            for (i, &ll) in lead.iter().enumerate() {
                let g = ro.poses[i + 1][0] - ll + cfg.follow_distance;
                let (val, force) = al(g, lambda[li]);
                li += 1;
                value += val;
                seed[i + 1][0] += force;
            }
        }

        // control-effort and increment gradients
        for i in 0..np {
            let a = self.blk(i);
            grad[2 * a] += 2.0 * cfg.control_weight * z[2 * a];
            grad[2 * a + 1] += 2.0 * cfg.control_weight * z[2 * a + 1];
        }
        let mut prev = [self.prev_action.speed, self.prev_action.steer];
        for i in 0..nc {
            let v = z[2 * i];
            let d = z[2 * i + 1];
            let dv = v - prev[0];
            let dd = d - prev[1];
            grad[2 * i] += 2.0 * cfg.increment_weight * dv;
            grad[2 * i + 1] += 2.0 * cfg.increment_weight * dd;
            if i > 0 {
                grad[2 * (i - 1)] -= 2.0 * cfg.increment_weight * dv;
                grad[2 * (i - 1) + 1] -= 2.0 * cfg.increment_weight * dd;
            }
            prev = [v, d];
        }

        // adjoint sweep through the shooting rollout
        let mut p = [0.0f64; 3];
        for i in (0..np).rev() {
            p[0] += seed[i + 1][0];
            p[1] += seed[i + 1][1];
            p[2] += seed[i + 1][2];
            let a = self.blk(i);
            let phi = ro.poses[i][2];
            let (c, s) = (phi.cos(), phi.sin());
            let v = ro.v_eff[i];
            let d = ro.d_eff[i];
            let tan_d = d.tan();
            let sec2 = 1.0 + tan_d * tan_d;
            let h_act = ro.h_active[i];
            grad[2 * a] += ro.v_active[i]
                * dt
                * (c * p[0] + s * p[1] + h_act * tan_d / cfg.wheelbase * p[2]);
            grad[2 * a + 1] += ro.d_active[i] * h_act * v * sec2 / cfg.wheelbase * dt * p[2];
            let p_phi = h_act * p[2] + (-v * s * dt) * p[0] + (v * c * dt) * p[1];
            p = [p[0], p[1], p_phi];
        }

        value
    }

    fn lambda_len(&self) -> usize {
        4 * self.nc() + self.np() * self.obstacles.len() + if self.lead_lon.is_some() { self.np() } else { 0 }
    }
}

/// L-BFGS with Armijo backtracking. Returns (final value, iterations).
fn lbfgs<F>(mut f: F, x: &mut [f64], max_iters: usize, gtol: f64) -> (f64, usize)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    if !fx.is_finite() {
        return (fx, 0);
    }
    let mem = 10;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut iters = 0;
    while iters < max_iters {
        let ginf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ginf <= gtol {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &q);
            alpha[i] = a;
            axpy(&mut q, -a, &y_hist[i]);
        }
        let gamma = if k > 0 {
            let sy = 1.0 / rho_hist[k - 1];
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        } else {
            1.0
        };
        for v in &mut q {
            *v *= gamma;
        }
        for i in 0..k {
            let b = rho_hist[i] * dot(&y_hist[i], &q);
            axpy(&mut q, alpha[i] - b, &s_hist[i]);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut gd = dot(&g, &dir);
        if gd >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            gd = -dot(&g, &g);
        }

        // backtracking line search
        let mut t = if k == 0 { (1.0 / ginf).min(1.0) } else { 1.0 };
        let x0 = x.to_vec();
        let mut g_new = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x[i] = x0[i] + t * dir[i];
            }
            let f_new = f(x, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * gd {
                let s: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if s_hist.len() == mem {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    rho_hist.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                fx = f_new;
                g.copy_from_slice(&g_new);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iters += 1;
        if !accepted {
            x.copy_from_slice(&x0);
            break;
        }
    }
    (fx, iters)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Pick the warm-start lane: maximal weight, ties broken toward the lane
/// nearest the ego's current one, then leftmost.
fn warm_start_lane(weights: &[f64], ego_lane: usize) -> usize {
    let mut best = 0usize;
    for j in 1..weights.len() {
        let better = weights[j] > weights[best] + 1e-12;
        let tie = (weights[j] - weights[best]).abs() <= 1e-12;
        let closer = (j as i64 - ego_lane as i64).abs() < (best as i64 - ego_lane as i64).abs();
        if better || (tie && closer) {
            best = j;
        }
    }
    best
}

/// Initial action sequence for the solver.
///
/// With a previous solution, shift it one step and repeat the tail.
/// Otherwise steer proportionally toward the heaviest lane target at
/// constant current speed.
pub fn warm_start(problem: &NlpProblem, previous: Option<&NlpSolution>) -> Vec<Action> {
    let nc = problem.config.control_horizon;
    if let Some(prev) = previous {
        if prev.actions.len() == nc {
            let mut out: Vec<Action> = prev.actions[1..].to_vec();
            out.push(*prev.actions.last().unwrap());
            return out;
        }
    }
    let map_lane = |lat: f64| -> usize {
        let m = problem.weights.len().max(1);
        // lane width recovered from adjacent target spacing when possible
        let width = if problem.targets.len() >= 2 {
            (problem.targets[1].lat - problem.targets[0].lat).abs().max(1e-9)
        } else {
            3.5
        };
        ((lat / width).round().max(0.0) as usize).min(m - 1)
    };
    let ego_lane = map_lane(problem.initial.lat);
    let j = warm_start_lane(&problem.weights, ego_lane);
    let target = problem.targets[j];
    let lat_err = target.lat - problem.initial.lat;
    let desired_heading = (lat_err / 20.0).clamp(-0.3, 0.3);
    let steer = ((desired_heading - problem.initial.heading) * 0.5).clamp(-0.3, 0.3);
    (0..nc)
        .map(|_| Action::new(problem.initial_speed, steer))
        .collect()
}

/// Brake in a straight line at the maximal speed decrement. Always
/// respects the increment limits.
pub fn fallback_brake(current_speed: f64, config: &MpcConfig) -> Vec<Action> {
    (1..=config.control_horizon)
        .map(|k| Action::new((current_speed - config.dv_limit * k as f64).max(0.0), 0.0))
        .collect()
}

/// Solve the program from the given initialization.
///
/// Augmented-Lagrangian outer loop around L-BFGS; terminates when the
/// maximal constraint violation and the gradient norm both fall under the
/// KKT tolerance or the iteration budget runs out. Never panics: failed
/// arithmetic surfaces as `feasible = false`.
pub fn solve(problem: &NlpProblem, init: &[Action], config: &MpcConfig) -> NlpSolution {
    let nc = config.control_horizon;
    assert_eq!(init.len(), nc, "init must have control-horizon length");
    let mut z: Vec<f64> = init.iter().flat_map(|a| [a.speed, a.steer]).collect();

    let mut lambda = vec![0.0; problem.lambda_len()];
    let mut mu = 10.0;
    let tol = config.kkt_tolerance;
    let budget = config.max_iterations;
    let mut used = 0usize;
    let mut grad = vec![0.0; z.len()];
    let mut ginf = f64::INFINITY;
    let mut prev_viol = f64::INFINITY;

    for _outer in 0..12 {
        if used >= budget {
            break;
        }
        let (_fx, it) = lbfgs(
            |x, g| problem.al_eval(x, &lambda, mu, g),
            &mut z,
            budget - used,
            tol,
        );
        used += it;
        let val = problem.al_eval(&z, &lambda, mu, &mut grad);
        ginf = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let viol = problem.max_violation(&z);
        if !val.is_finite() || z.iter().any(|v| !v.is_finite()) {
            break;
        }
        if viol <= tol && ginf <= tol {
            break;
        }
        // multiplier update, then stiffen if progress stalled
        let ro = problem.rollout(&z);
        let mut g = Vec::new();
        problem.constraints(&ro, &z, &mut g);
        for (l, gi) in lambda.iter_mut().zip(&g) {
            *l = (*l + mu * gi).max(0.0);
        }
        if viol > 0.25 * prev_viol {
            mu = (mu * 10.0).min(1e9);
        }
        prev_viol = viol;
        if it == 0 {
            break;
        }
    }

    let finite = z.iter().all(|v| v.is_finite());
    let viol = if finite { problem.max_violation(&z) } else { f64::INFINITY };
    let actions: Vec<Action> = if finite {
        (0..nc).map(|i| Action::new(z[2 * i], z[2 * i + 1])).collect()
    } else {
        init.to_vec()
    };
    let zz: Vec<f64> = actions.iter().flat_map(|a| [a.speed, a.steer]).collect();
    let ro = problem.rollout(&zz);
    NlpSolution {
        predicted_states: ro.poses[1..].iter().map(|p| Pose { lon: p[0], lat: p[1], heading: p[2] }).collect(),
        cost: problem.cost(&zz),
        feasible: viol <= tol,
        iterations: used,
        kkt_residual: if finite { viol.max(ginf) } else { f64::INFINITY },
        fallback_used: false,
        actions,
    }
}

/// Per-family constraint violations of an action sequence, re-evaluated
/// independently of the solver (states re-rolled through the simulator's
/// own integrator).
#[derive(Debug, Clone, Copy)]
pub struct ConstraintReport {
    pub dynamics: f64,
    pub increments: f64,
    pub collision: f64,
    pub following: f64,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.dynamics.max(self.increments).max(self.collision).max(self.following)
    }
}

/// Re-verify a solution against the four constraint families.
pub fn verify_solution(problem: &NlpProblem, solution: &NlpSolution) -> ConstraintReport {
    let cfg = &problem.config;
    let np = cfg.prediction_horizon;
    let nc = cfg.control_horizon;

    // re-roll states through the simulator integrator
    let mut state = VehicleState::new(
        problem.initial.lon,
        problem.initial.lat,
        problem.initial.heading,
        problem.initial_speed,
    );
    let mut rolled = Vec::with_capacity(np);
    for i in 0..np {
        let a = solution.actions[i.min(nc - 1)];
        let clamped = Action::new(
            a.speed.clamp(0.0, cfg.speed_cap),
            a.steer.clamp(-cfg.steer_cap, cfg.steer_cap),
        );
        state = step_kinematics(&state, clamped, cfg.dt, cfg.wheelbase)
            .expect("finite actions roll out finitely");
        rolled.push(state);
    }

    let dynamics = rolled
        .iter()
        .zip(&solution.predicted_states)
        .map(|(s, p)| {
            (s.lon - p.lon)
                .abs()
                .max((s.lat - p.lat).abs())
                .max((s.heading - p.heading).abs())
        })
        .fold(0.0f64, f64::max);

    let mut increments = 0.0f64;
    let mut prev = problem.prev_action;
    for a in &solution.actions {
        increments = increments
            .max((a.speed - prev.speed).abs() - cfg.dv_limit)
            .max((a.steer - prev.steer).abs() - cfg.dsteer_limit);
        prev = *a;
    }

    let clearance = 4.0 * cfg.safety_radius * cfg.safety_radius + cfg.collision_margin;
    let off = cfg.vehicle_length / 4.0;
    let mut collision = 0.0f64;
    for track in &problem.obstacles {
        for (i, circ) in track.circles.iter().enumerate() {
            let (c, si) = (rolled[i].heading.cos(), rolled[i].heading.sin());
            let mut min_d2 = f64::INFINITY;
            for sign in [1.0, -1.0] {
                let ex = rolled[i].lon + sign * off * c;
                let ey = rolled[i].lat + sign * off * si;
                for &(ox, oy) in circ {
                    min_d2 = min_d2.min((ex - ox) * (ex - ox) + (ey - oy) * (ey - oy));
                }
            }
            collision = collision.max(clearance - min_d2);
        }
    }

    let mut following = 0.0f64;
    if let Some(lead) = &problem.lead_lon {
        for (i, &ll) in lead.iter().enumerate() {
            following = following.max(rolled[i].lon - ll + cfg.follow_distance);
        }
    }

    ConstraintReport {
        dynamics,
        increments: increments.max(0.0),
        collision: collision.max(0.0),
        following: following.max(0.0),
    }
}

/// Stateful receding-horizon planner: keeps the previous solution for the
/// shifted warm start and the previously applied action for increment
/// bases. One `plan` call per environment step; only the first action of
/// the returned solution is meant to be applied.
#[derive(Debug, Clone)]
pub struct Planner {
    pub config: MpcConfig,
    pub map: MapInfo,
    pub idm: IdmParams,
    previous: Option<NlpSolution>,
    prev_action: Option<Action>,
}

impl Planner {
    pub fn new(config: MpcConfig, map: MapInfo, idm: IdmParams) -> Self {
        Self {
            config,
            map,
            idm,
            previous: None,
            prev_action: None,
        }
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.prev_action = None;
    }

    /// Full pipeline: impact selection, terminal rollout, tendency
    /// weighting, problem build, warm start, solve. An infeasible solve
    /// retries from alternative initializations, then falls back to the
    /// shifted previous plan when that still certifies against today's
    /// predictions, and only then to straight-line braking. The returned
    /// action is always finite.
    pub fn plan(&mut self, snapshot: &TrafficSnapshot, epsilon: f64) -> (Action, NlpSolution) {
        let eps = epsilon.clamp(-1.0, 1.0);
        let weights = tendency_to_weights(eps, self.map.lane_count).expect("clamped epsilon");
        self.plan_with_weights(snapshot, &weights, None)
    }

    /// As `plan`, with explicit weights and optional target overrides
    /// (used by the fixed-lane baseline).
    pub fn plan_with_weights(
        &mut self,
        snapshot: &TrafficSnapshot,
        weights: &LaneTargetWeights,
        target_override: Option<(usize, Pose)>,
    ) -> (Action, NlpSolution) {
        let cfg = self.config.clone();
        let prev_action = self
            .prev_action
            .unwrap_or_else(|| Action::new(snapshot.ego.speed, 0.0));

        let built = rollout_terminal_states(snapshot, &self.map, &self.idm, cfg.prediction_horizon, cfg.dt)
            .ok()
            .and_then(|terminal| {
                let mut targets = terminal_pose_targets(snapshot, &terminal, &self.map, &self.idm, &cfg);
                if let Some((lane, pose)) = target_override {
                    targets[lane] = pose;
                }
                let obstacles = predict_obstacles(snapshot, cfg.prediction_horizon, cfg.dt);
                build_problem_from_targets(snapshot, targets, weights, &obstacles, &cfg, &self.map, prev_action)
                    .ok()
            });

        let solution = match built {
            Some(problem) => {
                let init = warm_start(&problem, self.previous.as_ref());
                let mut sol = solve(&problem, &init, &cfg);
                if !sol.feasible {
                    // a poisoned warm start must not doom a solvable step:
                    // retry from the braking sequence, then from the cold
                    // proportional-steer initialization
                    let mut total_iters = sol.iterations;
                    let mut alternates = vec![fallback_brake(snapshot.ego.speed, &cfg)];
                    if self.previous.is_some() {
                        alternates.push(warm_start(&problem, None));
                    }
                    for alt in alternates {
                        let retry = solve(&problem, &alt, &cfg);
                        total_iters += retry.iterations;
                        if retry.feasible {
                            sol = retry;
                            break;
                        }
                    }
                    sol.iterations = total_iters;
                }
                if sol.feasible {
                    sol
                } else {
                    let actions = fallback_brake(snapshot.ego.speed, &cfg);
                    let z: Vec<f64> = actions.iter().flat_map(|a| [a.speed, a.steer]).collect();
                    let ro = problem.rollout(&z);
                    NlpSolution {
                        predicted_states: ro.poses[1..]
                            .iter()
                            .map(|p| Pose { lon: p[0], lat: p[1], heading: p[2] })
                            .collect(),
                        cost: problem.cost(&z),
                        feasible: false,
                        iterations: sol.iterations,
                        kkt_residual: sol.kkt_residual,
                        fallback_used: true,
                        actions,
                    }
                }
            }
            None => {
                let actions = fallback_brake(snapshot.ego.speed, &cfg);
                NlpSolution {
                    predicted_states: Vec::new(),
                    cost: f64::NAN,
                    feasible: false,
                    iterations: 0,
                    kkt_residual: f64::INFINITY,
                    fallback_used: true,
                    actions,
                }
            }
        };

        let applied = solution.actions[0];
        self.prev_action = Some(applied);
        self.previous = Some(solution.clone());
        (applied, solution)
    }
}

/// Flat `key = value` dump of the planner configuration, used to assert
/// baseline parity: two pipelines share constraints iff their dumps agree
/// on every non-`tendency_` key.
pub fn config_dump(config: &MpcConfig, tendency_mode: &str) -> String {
    let mut lines = vec![
        format!("collision_margin = {}", config.collision_margin),
        format!("control_horizon = {}", config.control_horizon),
        format!("control_weight = {}", config.control_weight),
        format!("discount = {}", config.discount),
        format!("dsteer_limit = {}", config.dsteer_limit),
        format!("dt = {}", config.dt),
        format!("dv_limit = {}", config.dv_limit),
        format!("follow_distance = {}", config.follow_distance),
        format!("increment_weight = {}", config.increment_weight),
        format!("kkt_tolerance = {}", config.kkt_tolerance),
        format!("max_iterations = {}", config.max_iterations),
        format!("prediction_horizon = {}", config.prediction_horizon),
        format!("proximity_weight = {}", config.proximity_weight),
        format!("safety_radius = {}", config.safety_radius),
        format!("speed_cap = {}", config.speed_cap),
        format!("steer_cap = {}", config.steer_cap),
        format!("tendency_mode = {}", tendency_mode),
        format!("wheelbase = {}", config.wheelbase),
    ];
    lines.sort();
    lines.join("\n")
}
