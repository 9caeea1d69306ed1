//! Interactive browser demo of the tendency-guided planner.
//!
//! One seeded highway world runs in the page. A slider sets the driving
//! tendency in `[-1, 1]`; each animation tick plans through the full
//! constrained optimizer pipeline, applies the first action, and hands a
//! JSON scene frame to the canvas renderer. An optional autopilot
//! replaces the slider with a free-direction heuristic so the scene can
//! drive itself.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use tendrive_core::idm::{select_impact_vehicles, IdmParams, MapInfo};
use tendrive_core::mpc::{tendency_to_weights, MpcConfig, Planner};
use tendrive_core::sac::{free_direction, FreeDirection, RewardCoeffs};
use tendrive_core::sim::{SimConfig, World};

#[derive(Serialize)]
struct VehicleFrame {
    lon: f64,
    lat: f64,
    heading: f64,
    speed: f64,
}

#[derive(Serialize)]
struct TargetFrame {
    lon: f64,
    lat: f64,
    weight: f64,
}

#[derive(Serialize)]
struct SceneFrame {
    time: f64,
    epsilon: f64,
    lane_count: usize,
    lane_width: f64,
    route_length: f64,
    ego: VehicleFrame,
    traffic: Vec<VehicleFrame>,
    plan: Vec<[f64; 2]>,
    targets: Vec<TargetFrame>,
    weights: Vec<f64>,
    feasible: bool,
    fallback: bool,
    collided: bool,
    completed: bool,
}

fn vehicle_frame(v: &tendrive_core::sim::VehicleState) -> VehicleFrame {
    VehicleFrame {
        lon: v.lon,
        lat: v.lat,
        heading: v.heading,
        speed: v.speed,
    }
}

/// The demo world: simulator plus planner behind a seeded reset.
#[wasm_bindgen]
pub struct DemoWorld {
    world: World,
    planner: Planner,
    map: MapInfo,
    idm: IdmParams,
    coeffs: RewardCoeffs,
    collided: bool,
    last: Option<SceneFrame>,
}

#[wasm_bindgen]
impl DemoWorld {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, traffic_count: usize) -> DemoWorld {
        let config = SimConfig {
            seed,
            traffic_count,
            ..SimConfig::default()
        };
        let map = MapInfo::from(&config);
        let idm = IdmParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let world = World::new(config.clone(), &mut rng, &[], vec![]).expect("demo world spawns");
        DemoWorld {
            planner: Planner::new(MpcConfig::from_sim(&config), map, idm.clone()),
            world,
            map,
            idm,
            coeffs: RewardCoeffs::default(),
            collided: false,
            last: None,
        }
    }

    /// Plan with the given tendency, apply the first action, advance one
    /// step, and return the scene as JSON.
    pub fn step(&mut self, epsilon: f64) -> String {
        let eps = epsilon.clamp(-1.0, 1.0);
        if self.collided || self.world.ego.lon >= self.world.config.route_length {
            return self.render(eps, None);
        }
        let snap = self.world.snapshot();
        let (action, solution) = self.planner.plan(&snap, eps);
        self.collided = self.world.step(action).unwrap_or(true);
        self.render(eps, Some(solution))
    }

    /// Scene without advancing, for the initial paint.
    pub fn scene(&mut self, epsilon: f64) -> String {
        self.render(epsilon.clamp(-1.0, 1.0), None)
    }

    /// Heuristic tendency from the free-direction rule, used as the
    /// demo's autopilot: lean toward the more open side.
    pub fn auto_epsilon(&self) -> f64 {
        let snap = self.world.snapshot();
        let impact = select_impact_vehicles(&snap, &self.map);
        match free_direction(&impact, &snap.ego, &self.coeffs, &self.map, &self.idm) {
            FreeDirection::Left => -0.8,
            FreeDirection::Right => 0.8,
            FreeDirection::Tie => 0.0,
        }
    }

    /// Lane weights induced by a tendency value (for the bar display).
    pub fn weights(&self, epsilon: f64) -> Vec<f64> {
        tendency_to_weights(epsilon.clamp(-1.0, 1.0), self.map.lane_count)
            .map(|w| w.weights)
            .unwrap_or_default()
    }

    fn render(&mut self, epsilon: f64, solution: Option<tendrive_core::mpc::NlpSolution>) -> String {
        let config = &self.world.config;
        let weights = self.weights(epsilon);
        let snap = self.world.snapshot();
        let impact = select_impact_vehicles(&snap, &self.map);
        let horizon = self.planner.config.prediction_horizon;
        let dt = self.planner.config.dt;
        let targets: Vec<TargetFrame> = match tendrive_core::idm::rollout_terminal_states(
            &snap, &self.map, &self.idm, horizon, dt,
        ) {
            Ok(terminal) => tendrive_core::mpc::terminal_pose_targets(
                &snap, &terminal, &self.map, &self.idm, &self.planner.config,
            )
            .iter()
            .zip(&weights)
            .map(|(p, w)| TargetFrame {
                lon: p.lon,
                lat: p.lat,
                weight: *w,
            })
            .collect(),
            Err(_) => Vec::new(),
        };
        let _ = impact;
        let frame = SceneFrame {
            time: self.world.time,
            epsilon,
            lane_count: config.lane_count,
            lane_width: config.lane_width,
            route_length: config.route_length,
            ego: vehicle_frame(&self.world.ego),
            traffic: self.world.traffic.iter().map(vehicle_frame).collect(),
            plan: solution
                .as_ref()
                .map(|s| s.predicted_states.iter().map(|p| [p.lon, p.lat]).collect())
                .or_else(|| {
                    self.last
                        .as_ref()
                        .map(|f| f.plan.clone())
                })
                .unwrap_or_default(),
            targets,
            weights,
            feasible: solution.as_ref().map(|s| s.feasible).unwrap_or(true),
            fallback: solution.as_ref().map(|s| s.fallback_used).unwrap_or(false),
            collided: self.collided,
            completed: self.world.ego.lon >= config.route_length,
        };
        let json = serde_json::to_string(&frame).expect("frame serializes");
        self.last = Some(frame);
        json
    }
}
