//! Deterministic multi-lane highway world.
//!
//! Straight road, Frenet-style coordinates: `lon` runs along the road,
//! `lat` across it. Lane 0 is the leftmost lane and its center sits at
//! `lat = 0`; lane `j` is centered at `j * lane_width`. Traffic vehicles
//! are non-reactive constant-speed agents except for scripted lane-change
//! ramps; the ego is driven by a policy through `(commanded speed, front
//! wheel angle)` actions applied to a kinematic bicycle model.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("cannot place {requested} vehicles with min gap {min_gap} m in {lanes} lanes over {range} m")]
    SpawnDensity {
        requested: usize,
        min_gap: f64,
        lanes: usize,
        range: f64,
    },
    #[error("policy failed: {0}")]
    Policy(String),
}

/// Pose and speed of one vehicle in the road-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal arc position along the road, meters.
    pub lon: f64,
    /// Lateral offset, meters. Lane 0 center is 0, growing to the right.
    pub lat: f64,
    /// Heading relative to the road axis, radians. Always in (-pi/2, pi/2).
    pub heading: f64,
    /// Speed, m/s, never negative.
    pub speed: f64,
}

impl VehicleState {
    pub fn new(lon: f64, lat: f64, heading: f64, speed: f64) -> Self {
        Self {
            lon,
            lat,
            heading,
            speed,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }
}

/// Ego control input: commanded speed and front wheel angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub speed: f64,
    pub steer: f64,
}

impl Action {
    pub fn new(speed: f64, steer: f64) -> Self {
        Self { speed, steer }
    }

    pub fn is_finite(&self) -> bool {
        self.speed.is_finite() && self.steer.is_finite()
    }
}

/// World parameters. Defaults reproduce the three-lane expressway setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of lanes, m.
    pub lane_count: usize,
    /// Lane width, meters.
    pub lane_width: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Episode wall limit, seconds. Must be an integer multiple of `dt`.
    pub episode_limit: f64,
    /// Traffic spawn / observation range ahead of the ego, meters.
    pub spawn_range: f64,
    /// Traffic speed interval [min, max], m/s.
    pub traffic_speed_range: (f64, f64),
    /// Wheelbase of the kinematic bicycle, meters.
    pub wheelbase: f64,
    /// Vehicle body length, meters.
    pub vehicle_length: f64,
    /// Vehicle body width, meters.
    pub vehicle_width: f64,
    /// Master seed for traffic generation.
    pub seed: u64,
    /// Number of traffic vehicles spawned per episode.
    pub traffic_count: usize,
    /// Minimum same-lane spawn gap, meters.
    pub spawn_min_gap: f64,
    /// Route length; crossing it completes the episode, meters.
    pub route_length: f64,
    /// Ego speed at episode start, m/s.
    pub ego_start_speed: f64,
    /// Physical cap on commanded speed, m/s.
    pub max_command_speed: f64,
    /// Physical cap on front wheel angle, radians.
    pub max_steer: f64,
    /// A lane counts as blocked when its nearest obstacle ahead is within
    /// this center distance, meters. Used by the safe-stop completion rule.
    pub blocked_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 3.5,
            dt: 0.1,
            episode_limit: 80.0,
            spawn_range: 180.0,
            traffic_speed_range: (6.0, 12.0),
            wheelbase: 2.9,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            seed: 0,
            traffic_count: 8,
            spawn_min_gap: 20.0,
            route_length: 300.0,
            ego_start_speed: 10.0,
            max_command_speed: 15.0,
            max_steer: 0.6,
            blocked_gap: 11.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.dt <= 0.0 {
            return Err(SimError::InvalidParameter("dt must be positive"));
        }
        let steps = self.episode_limit / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(SimError::InvalidParameter("episode_limit must be an integer number of steps"));
        }
        if self.traffic_speed_range.0 > self.traffic_speed_range.1 {
            return Err(SimError::InvalidParameter("traffic speed range min > max"));
        }
        if self.lane_count == 0 {
            return Err(SimError::InvalidParameter("lane_count must be >= 1"));
        }
        Ok(())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    /// Nearest lane index for a lateral offset, clamped to the road.
    pub fn lane_of(&self, lat: f64) -> usize {
        let idx = (lat / self.lane_width).round();
        idx.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    pub fn lat_min(&self) -> f64 {
        -self.lane_width / 2.0
    }

    pub fn lat_max(&self) -> f64 {
        (self.lane_count as f64 - 0.5) * self.lane_width
    }

    pub fn step_limit(&self) -> usize {
        (self.episode_limit / self.dt).round() as usize
    }
}

/// Ego plus every traffic vehicle inside the observation window,
/// sorted by lane then by longitudinal position.
#[derive(Debug, Clone)]
pub struct TrafficSnapshot {
    pub ego: VehicleState,
    pub traffic: Vec<VehicleState>,
    /// Stable world ids, parallel to `traffic`.
    pub ids: Vec<usize>,
}

/// Forward-Euler step of the kinematic bicycle model.
///
/// The commanded speed is held over the whole step:
/// `lon += v cos(phi) dt`, `lat += v sin(phi) dt`,
/// `phi += v tan(delta_f) / L dt`.
pub fn step_kinematics(
    state: &VehicleState,
    action: Action,
    dt: f64,
    wheelbase: f64,
) -> Result<VehicleState, SimError> {
    if !state.is_finite() {
        return Err(SimError::NonFinite("state"));
    }
    if !action.is_finite() {
        return Err(SimError::NonFinite("action"));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(SimError::InvalidParameter("dt must be positive"));
    }
    if wheelbase <= 0.0 {
        return Err(SimError::InvalidParameter("wheelbase must be positive"));
    }
    if action.steer.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(SimError::InvalidParameter("front wheel angle must be inside (-pi/2, pi/2)"));
    }
    let v = action.speed.max(0.0);
    let lon = state.lon + v * state.heading.cos() * dt;
    let lat = state.lat + v * state.heading.sin() * dt;
    let heading = state.heading + v * action.steer.tan() / wheelbase * dt;
    let cap = std::f64::consts::FRAC_PI_2 - 1e-6;
    Ok(VehicleState {
        lon,
        lat,
        heading: heading.clamp(-cap, cap),
        speed: v,
    })
}

/// Spawn constant-speed traffic ahead of the ego (ego sits at lon 0).
///
/// Vehicles are lane-centered with `heading = 0`, longitudinal positions
/// uniform in `[spawn_min_gap, spawn_range]`, speeds uniform in the
/// configured range. Same-lane center gaps (ego included) stay at or
/// above `spawn_min_gap`; placement fails if the requested count cannot
/// satisfy that.
pub fn spawn_traffic(rng: &mut ChaCha12Rng, config: &SimConfig) -> Result<Vec<VehicleState>, SimError> {
    let mut placed: Vec<VehicleState> = Vec::with_capacity(config.traffic_count);
    let (vmin, vmax) = config.traffic_speed_range;
    let ego_lane = config.lane_of(config.lane_center((config.lane_count - 1) / 2));
    for _ in 0..config.traffic_count {
        let mut ok = false;
        for _attempt in 0..200 {
            let lane = rng.random_range(0..config.lane_count);
            let lon = rng.random_range(config.spawn_min_gap..=config.spawn_range);
            let gap_ok = placed
                .iter()
                .filter(|v| config.lane_of(v.lat) == lane)
                .all(|v| (v.lon - lon).abs() >= config.spawn_min_gap)
                && (lane != ego_lane || lon >= config.spawn_min_gap);
            if gap_ok {
                let speed = if vmax > vmin {
                    rng.random_range(vmin..=vmax)
                } else {
                    vmin
                };
                placed.push(VehicleState::new(lon, config.lane_center(lane), 0.0, speed));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SimError::SpawnDensity {
                requested: config.traffic_count,
                min_gap: config.spawn_min_gap,
                lanes: config.lane_count,
                range: config.spawn_range - config.spawn_min_gap,
            });
        }
    }
    Ok(placed)
}

/// Advance constant-speed traffic by one step: `lon += v dt`.
pub fn advance_traffic(traffic: &mut [VehicleState], dt: f64) {
    for v in traffic.iter_mut() {
        v.lon += v.speed * dt;
    }
}

/// Two-circle collision test between two vehicle rectangles.
///
/// Each body is covered by two circles of radius `R` with
/// `R^2 = (length/4)^2 + (width/2)^2`, centered `length/4` ahead of and
/// behind the body center along its heading. Collision iff any of the
/// four cross-pair center distances drops below `2R`. The circles cover
/// the rectangle exactly through the corners, so the test is conservative:
/// rectangle overlap always implies circle overlap.
pub fn check_collision(a: &VehicleState, b: &VehicleState, length: f64, width: f64) -> bool {
    let r2 = (length / 4.0) * (length / 4.0) + (width / 2.0) * (width / 2.0);
    let four_r2 = 4.0 * r2;
    let off = length / 4.0;
    let centers = |s: &VehicleState| {
        let (dx, dy) = (off * s.heading.cos(), off * s.heading.sin());
        [(s.lon + dx, s.lat + dy), (s.lon - dx, s.lat - dy)]
    };
    let ca = centers(a);
    let cb = centers(b);
    for (ax, ay) in ca {
        for (bx, by) in cb {
            let d2 = (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
            if d2 < four_r2 {
                return true;
            }
        }
    }
    false
}

/// Safety radius of the two-circle model for the configured body size.
pub fn safety_radius(length: f64, width: f64) -> f64 {
    ((length / 4.0).powi(2) + (width / 2.0).powi(2)).sqrt()
}

/// Scripted lane-change ramp for one traffic vehicle: its lateral offset
/// moves linearly from its position at `time` to the target lane center
/// over `duration` seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedEvent {
    /// Index into the spawn order of the traffic list.
    pub vehicle: usize,
    /// Activation time, seconds.
    pub time: f64,
    pub target_lane: usize,
    pub duration: f64,
}

#[derive(Debug, Clone)]
struct ActiveRamp {
    vehicle: usize,
    start_time: f64,
    from_lat: f64,
    to_lat: f64,
    duration: f64,
}

/// The full mutable world: ego, traffic, scripted events, clock.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub ego: VehicleState,
    pub traffic: Vec<VehicleState>,
    pub time: f64,
    pub steps: usize,
    events: Vec<ScriptedEvent>,
    ramps: Vec<ActiveRamp>,
}

impl World {
    /// Build a world with freshly spawned traffic plus optional fixed
    /// obstacles (speed 0) and scripted events.
    pub fn new(
        config: SimConfig,
        rng: &mut ChaCha12Rng,
        static_obstacles: &[(f64, f64)],
        events: Vec<ScriptedEvent>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let mut traffic = spawn_traffic(rng, &config)?;
        for &(lon, lat) in static_obstacles {
            traffic.push(VehicleState::new(lon, lat, 0.0, 0.0));
        }
        let ego_lane = (config.lane_count - 1) / 2;
        let ego = VehicleState::new(0.0, config.lane_center(ego_lane), 0.0, config.ego_start_speed);
        Ok(Self {
            config,
            ego,
            traffic,
            time: 0.0,
            steps: 0,
            events,
            ramps: Vec::new(),
        })
    }

    /// Observation snapshot: ego plus all traffic within the window,
    /// sorted by lane then lon then id. Ordering is stable across calls.
    pub fn snapshot(&self) -> TrafficSnapshot {
        let mut indexed: Vec<(usize, VehicleState)> = self
            .traffic
            .iter()
            .enumerate()
            .filter(|(_, v)| (v.lon - self.ego.lon).abs() <= self.config.spawn_range)
            .map(|(i, v)| (i, *v))
            .collect();
        indexed.sort_by(|(ia, a), (ib, b)| {
            let la = self.config.lane_of(a.lat);
            let lb = self.config.lane_of(b.lat);
            la.cmp(&lb)
                .then(a.lon.partial_cmp(&b.lon).unwrap_or(std::cmp::Ordering::Equal))
                .then(ia.cmp(ib))
        });
        TrafficSnapshot {
            ego: self.ego,
            traffic: indexed.iter().map(|(_, v)| *v).collect(),
            ids: indexed.iter().map(|(i, _)| *i).collect(),
        }
    }

    /// Apply one ego action and move the world forward by `dt`.
    /// The action is clamped to the physical limits before use.
    /// Returns true if the ego now collides with any traffic vehicle.
    pub fn step(&mut self, action: Action) -> Result<bool, SimError> {
        if !action.is_finite() {
            return Err(SimError::NonFinite("action"));
        }
        let clamped = Action::new(
            action.speed.clamp(0.0, self.config.max_command_speed),
            action.steer.clamp(-self.config.max_steer, self.config.max_steer),
        );
        self.ego = step_kinematics(&self.ego, clamped, self.config.dt, self.config.wheelbase)?;
        // road shoulders act as walls
        self.ego.lat = self.ego.lat.clamp(self.config.lat_min(), self.config.lat_max());

        advance_traffic(&mut self.traffic, self.config.dt);
        self.time += self.config.dt;
        self.steps += 1;
        self.apply_events();

        let collided = self.traffic.iter().any(|v| {
            check_collision(&self.ego, v, self.config.vehicle_length, self.config.vehicle_width)
        });
        Ok(collided)
    }

    fn apply_events(&mut self) {
        let events = std::mem::take(&mut self.events);
        let (due, pending): (Vec<_>, Vec<_>) = events.into_iter().partition(|e| self.time >= e.time);
        self.events = pending;
        for e in due {
            if e.vehicle < self.traffic.len() && e.duration > 0.0 {
                self.ramps.push(ActiveRamp {
                    vehicle: e.vehicle,
                    start_time: self.time,
                    from_lat: self.traffic[e.vehicle].lat,
                    to_lat: self.config.lane_center(e.target_lane),
                    duration: e.duration,
                });
            }
        }
        for r in &self.ramps {
            let frac = ((self.time - r.start_time) / r.duration).clamp(0.0, 1.0);
            self.traffic[r.vehicle].lat = r.from_lat + frac * (r.to_lat - r.from_lat);
        }
        self.ramps.retain(|r| self.time - r.start_time < r.duration);
    }

    /// True when every lane has an obstacle ahead of the ego within
    /// `blocked_gap` meters (center to center).
    pub fn fully_blocked(&self) -> bool {
        (0..self.config.lane_count).all(|lane| {
            self.traffic.iter().any(|v| {
                self.config.lane_of(v.lat) == lane
                    && v.lon > self.ego.lon
                    && v.lon - self.ego.lon <= self.config.blocked_gap
            })
        })
    }
}

/// Per-step solver diagnostics carried into the trajectory log.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SolverDiag {
    pub feasible: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub fallback_used: bool,
}

/// One decision from a driving policy.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Action,
    /// Tendency factor behind the action, when the policy has one.
    pub epsilon: Option<f64>,
    pub diag: Option<SolverDiag>,
}

/// A driving policy: snapshot in, decision out. Stateful across a single
/// episode; `begin_episode` resets that state.
pub trait Policy {
    fn begin_episode(&mut self) {}
    fn act(&mut self, snapshot: &TrafficSnapshot) -> Result<Decision, String>;
}

/// One row of the trajectory log.
#[derive(Debug, Clone)]
pub struct TrajRow {
    pub t: f64,
    /// 0 is the ego; traffic vehicles get their world index + 1.
    pub veh_id: usize,
    pub state: VehicleState,
    pub action: Option<Action>,
    pub diag: Option<SolverDiag>,
}

/// Outcome of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub steps: usize,
    pub collided: bool,
    pub completed: bool,
    pub avg_speed: f64,
    pub return_sum: f64,
    pub trajectory: Vec<TrajRow>,
}

/// Reward hook evaluated after every step; receives the post-step
/// snapshot and the decision that produced it.
pub type RewardFn<'a> = dyn Fn(&TrafficSnapshot, &Decision) -> f64 + 'a;

/// Run one episode under `policy` until collision, completion, or the
/// time limit. Collision is checked after every step against every
/// traffic vehicle. A halt with every lane blocked ahead counts as
/// completion (a safe stop).
pub fn run_episode(
    policy: &mut dyn Policy,
    config: &SimConfig,
    rng: &mut ChaCha12Rng,
    static_obstacles: &[(f64, f64)],
    events: Vec<ScriptedEvent>,
    reward: Option<&RewardFn>,
) -> Result<EpisodeResult, SimError> {
    let mut world = World::new(config.clone(), rng, static_obstacles, events)?;
    policy.begin_episode();

    let mut trajectory = Vec::new();
    let mut speed_sum = 0.0;
    let mut return_sum = 0.0;
    let mut collided = false;
    let mut completed = false;
    let mut halted_steps = 0usize;

    let step_limit = config.step_limit();
    while world.steps < step_limit {
        let snap = world.snapshot();
        let decision = policy.act(&snap).map_err(SimError::Policy)?;
        if !decision.action.is_finite() {
            return Err(SimError::NonFinite("policy action"));
        }

        trajectory.push(TrajRow {
            t: world.time,
            veh_id: 0,
            state: world.ego,
            action: Some(decision.action),
            diag: decision.diag,
        });
        for (i, v) in world.traffic.iter().enumerate() {
            trajectory.push(TrajRow {
                t: world.time,
                veh_id: i + 1,
                state: *v,
                action: None,
                diag: None,
            });
        }

        let hit = world.step(decision.action)?;
        speed_sum += world.ego.speed;
        if let Some(r) = reward {
            return_sum += r(&world.snapshot(), &decision);
        }
        if hit {
            collided = true;
            break;
        }
        if world.ego.lon >= config.route_length {
            completed = true;
            break;
        }
        if world.ego.speed < 0.1 && world.fully_blocked() {
            halted_steps += 1;
            if halted_steps >= 10 {
                completed = true;
                break;
            }
        } else {
            halted_steps = 0;
        }
    }

    let steps = world.steps;
    Ok(EpisodeResult {
        steps,
        collided,
        completed,
        avg_speed: if steps > 0 { speed_sum / steps as f64 } else { 0.0 },
        return_sum,
        trajectory,
    })
}
