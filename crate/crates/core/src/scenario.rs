//! On-disk scenario configuration.
//!
//! Plain TOML with flat world keys, optional fixed obstacles, scripted
//! lane-change events, and an `[idm]` table for the car-following
//! parameters. Builders produce the two canonical experiment setups: a
//! static slalom (optionally with a fully blocked route end) and a dense
//! dynamic flow with a scripted cut-in.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idm::IdmParams;
use crate::sim::{spawn_traffic, ScriptedEvent, SimConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StaticObstacle {
    pub lon: f64,
    pub lat: f64,
}

/// Scenario file schema. Every field has a default, so partial files work.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub lane_count: usize,
    pub lane_width: f64,
    pub dt: f64,
    pub episode_limit: f64,
    pub spawn_range: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
    pub traffic_count: usize,
    pub route_length: f64,
    pub ego_start_speed: f64,
    pub static_obstacles: Vec<StaticObstacle>,
    pub scripted_events: Vec<ScriptedEvent>,
    pub idm: IdmParams,
}

impl Default for Scenario {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            lane_count: sim.lane_count,
            lane_width: sim.lane_width,
            dt: sim.dt,
            episode_limit: sim.episode_limit,
            spawn_range: sim.spawn_range,
            speed_min: sim.traffic_speed_range.0,
            speed_max: sim.traffic_speed_range.1,
            seed: sim.seed,
            traffic_count: sim.traffic_count,
            route_length: sim.route_length,
            ego_start_speed: sim.ego_start_speed,
            static_obstacles: Vec::new(),
            scripted_events: Vec::new(),
            idm: IdmParams::default(),
        }
    }
}

impl Scenario {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            lane_count: self.lane_count,
            lane_width: self.lane_width,
            dt: self.dt,
            episode_limit: self.episode_limit,
            spawn_range: self.spawn_range,
            traffic_speed_range: (self.speed_min, self.speed_max),
            seed: self.seed,
            traffic_count: self.traffic_count,
            route_length: self.route_length,
            ego_start_speed: self.ego_start_speed,
            ..SimConfig::default()
        }
    }

    pub fn obstacle_tuples(&self) -> Vec<(f64, f64)> {
        self.static_obstacles.iter().map(|o| (o.lon, o.lat)).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_toml()?).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Static slalom: three staggered obstacles force two avoidance maneuvers.
/// With `blocked_end` a wall across every lane sits before the route end,
/// so the only correct outcome is a safe stop.
pub fn static_scenario(blocked_end: bool, seed: u64) -> Scenario {
    let mut s = Scenario {
        traffic_count: 0,
        seed,
        ..Scenario::default()
    };
    s.static_obstacles = vec![
        StaticObstacle { lon: 70.0, lat: 3.5 },
        StaticObstacle { lon: 120.0, lat: 0.0 },
        StaticObstacle { lon: 170.0, lat: 7.0 },
        StaticObstacle { lon: 210.0, lat: 3.5 },
    ];
    if blocked_end {
        for lane in 0..s.lane_count {
            s.static_obstacles.push(StaticObstacle {
                lon: 260.0,
                lat: lane as f64 * s.lane_width,
            });
        }
    }
    s
}

/// Dense dynamic flow with a scripted cut-in at t = 5.6 s: the first
/// spawned left-lane vehicle ramps one lane to the right over two
/// seconds. The event target is resolved against the seeded spawn so the
/// file replays identically.
pub fn dynamic_scenario(seed: u64) -> Scenario {
    let mut s = Scenario {
        seed,
        ..Scenario::default()
    };
    let sim = s.to_sim_config();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    if let Ok(traffic) = spawn_traffic(&mut rng, &sim) {
        if let Some((idx, _)) = traffic
            .iter()
            .enumerate()
            .find(|(_, v)| sim.lane_of(v.lat) == 0)
        {
            s.scripted_events.push(ScriptedEvent {
                vehicle: idx,
                time: 5.6,
                target_lane: 1,
                duration: 2.0,
            });
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_toml() {
        let s = static_scenario(true, 9);
        let text = s.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back.static_obstacles, s.static_obstacles);
        assert_eq!(back.seed, 9);
        assert_eq!(back.traffic_count, 0);
        assert_eq!(back.idm.min_gap, 20.0);
    }

    #[test]
    fn partial_files_use_defaults() {
        let s = Scenario::from_toml("lane_count = 2\nseed = 5\n[idm]\ndesired_speed = 10.0\n").unwrap();
        assert_eq!(s.lane_count, 2);
        assert_eq!(s.seed, 5);
        assert_eq!(s.idm.desired_speed, 10.0);
        assert_eq!(s.idm.max_accel, 3.0);
        assert_eq!(s.dt, 0.1);
    }

    #[test]
    fn dynamic_scenario_cut_in_targets_a_left_lane_vehicle() {
        let s = dynamic_scenario(1);
        assert_eq!(s.scripted_events.len(), 1);
        let e = &s.scripted_events[0];
        assert_eq!(e.time, 5.6);
        assert_eq!(e.duration, 2.0);
        let sim = s.to_sim_config();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let traffic = spawn_traffic(&mut rng, &sim).unwrap();
        assert_eq!(sim.lane_of(traffic[e.vehicle].lat), 0);
    }

    #[test]
    fn blocked_variant_adds_full_wall() {
        let open = static_scenario(false, 0);
        let blocked = static_scenario(true, 0);
        assert_eq!(blocked.static_obstacles.len(), open.static_obstacles.len() + 3);
    }
}
