//! Evaluation drivers, aggregate metrics, and plot-ready exports.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::idm::{select_impact_vehicles, IdmParams, MapInfo};
use crate::mpc::{MpcConfig, Planner};
use crate::nn::Mlp;
use crate::sac::{build_policy_state, RewardCoeffs};
use crate::scenario::Scenario;
use crate::sim::{
    run_episode, Decision, EpisodeResult, Policy, SimConfig, SolverDiag, TrafficSnapshot,
};

/// Aggregate outcome of a batch of evaluation episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub runs: usize,
    pub collision_rate: f64,
    pub avg_speed_mean: f64,
    pub avg_speed_std: f64,
    pub completion_rate: f64,
}

/// Run `runs` seeded episodes of `scenario` under policies produced by
/// `make_policy` and aggregate the outcomes. Episode seeds derive from
/// the master seed, so identical inputs give identical summaries.
pub fn eval_policy(
    make_policy: &mut dyn FnMut() -> Box<dyn Policy>,
    scenario: &Scenario,
    runs: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeResult>), crate::sim::SimError> {
    use rand::SeedableRng;
    assert!(runs >= 1);
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let config = scenario.to_sim_config();
    let obstacles = scenario.obstacle_tuples();
    let mut results = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut rng = ChaCha12Rng::seed_from_u64(master.random());
        let mut policy = make_policy();
        let res = run_episode(
            policy.as_mut(),
            &config,
            &mut rng,
            &obstacles,
            scenario.scripted_events.clone(),
            None,
        )?;
        results.push(res);
    }
    Ok((summarize(&results), results))
}

pub fn summarize(results: &[EpisodeResult]) -> EvalSummary {
    let runs = results.len();
    let collided = results.iter().filter(|r| r.collided).count();
    let completed = results.iter().filter(|r| r.completed).count();
    let speeds: Vec<f64> = results.iter().map(|r| r.avg_speed).collect();
    let mean = speeds.iter().sum::<f64>() / runs as f64;
    let var = if runs > 1 {
        speeds.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (runs - 1) as f64
    } else {
        0.0
    };
    EvalSummary {
        runs,
        collision_rate: collided as f64 / runs as f64,
        avg_speed_mean: mean,
        avg_speed_std: var.sqrt(),
        completion_rate: completed as f64 / runs as f64,
    }
}

/// The proposed stack frozen for evaluation: deterministic tendency
/// (squashed mean) feeding the safety-constrained planner.
pub struct TendencyMpcPolicy {
    pub policy_net: Mlp,
    pub planner: Planner,
    pub coeffs: RewardCoeffs,
    pub idm: IdmParams,
    pub map: MapInfo,
    /// Fixed tendency override; bypasses the network when set.
    pub fixed_epsilon: Option<f64>,
}

impl TendencyMpcPolicy {
    pub fn new(policy_net: Mlp, sim: &SimConfig, mpc: MpcConfig, idm: IdmParams, coeffs: RewardCoeffs) -> Self {
        let map = MapInfo::from(sim);
        Self {
            policy_net,
            planner: Planner::new(mpc, map, idm.clone()),
            coeffs,
            idm,
            map,
            fixed_epsilon: None,
        }
    }
}

impl Policy for TendencyMpcPolicy {
    fn begin_episode(&mut self) {
        self.planner.reset();
    }

    fn act(&mut self, snapshot: &TrafficSnapshot) -> Result<Decision, String> {
        let impact = select_impact_vehicles(snapshot, &self.map);
        let state = build_policy_state(&impact, &snapshot.ego, &self.coeffs, &self.map, &self.idm);
        let epsilon = match self.fixed_epsilon {
            Some(e) => e,
            None => {
                let (out, _) = self.policy_net.forward(&state.features).map_err(|e| e.to_string())?;
                out[0].tanh()
            }
        };
        let (action, solution) = self.planner.plan(snapshot, epsilon);
        Ok(Decision {
            action,
            epsilon: Some(epsilon),
            diag: Some(SolverDiag {
                feasible: solution.feasible,
                iterations: solution.iterations,
                kkt_residual: solution.kkt_residual,
                fallback_used: solution.fallback_used,
            }),
        })
    }
}

// --- CSV exports --------------------------------------------------------

pub const TRAJECTORY_HEADER: &str =
    "t,veh_id,lon,lat,heading,speed,action_v,action_delta,feasible,iterations,kkt_residual,fallback_used";

pub const TRAINING_LOG_HEADER: &str =
    "step,episode,return,r_s,r_n,r_dt,epsilon,alpha,critic_loss,policy_loss,fallback_used,collision";

/// Trajectory log of one episode. Traffic rows leave the action and
/// solver-diagnostic columns empty.
pub fn trajectory_csv(result: &EpisodeResult) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for row in &result.trajectory {
        let (av, ad) = match row.action {
            Some(a) => (a.speed.to_string(), a.steer.to_string()),
            None => (String::new(), String::new()),
        };
        let (fe, it, kkt, fb) = match row.diag {
            Some(d) => (
                d.feasible.to_string(),
                d.iterations.to_string(),
                d.kkt_residual.to_string(),
                d.fallback_used.to_string(),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.t,
            row.veh_id,
            row.state.lon,
            row.state.lat,
            row.state.heading,
            row.state.speed,
            av,
            ad,
            fe,
            it,
            kkt,
            fb
        ));
    }
    out
}

pub fn training_log_csv(rows: &[crate::sac::TrainLogRow]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.episode,
            r.episode_return,
            r.r_s,
            r.r_n,
            r.r_dt,
            r.epsilon,
            r.alpha,
            r.critic_loss,
            r.policy_loss,
            r.fallback_used,
            r.collision
        ));
    }
    out
}

/// Summary metrics of a training run, serialized as `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub steps: usize,
    pub episodes: usize,
    pub collisions: usize,
    pub fallbacks: usize,
    pub mean_return_last_20: f64,
}

pub fn train_metrics(out: &crate::sac::TrainOutput, steps: usize) -> TrainMetrics {
    let tail: Vec<f64> = out.episode_returns.iter().rev().take(20).copied().collect();
    let mean_tail = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    TrainMetrics {
        steps,
        episodes: out.episode_returns.len(),
        collisions: out.collisions,
        fallbacks: out.fallbacks,
        mean_return_last_20: mean_tail,
    }
}

/// Moving average with window `w`; shorter prefixes average what exists.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        let n = (i + 1).min(w);
        out.push(sum / n as f64);
    }
    out
}

/// Per-episode learning curve for one run:
/// `episode,return,moving_avg` with a window-20 moving average.
pub fn learning_curve_csv(returns: &[f64], window: usize) -> String {
    let ma = moving_average(returns, window);
    let mut out = String::from("episode,return,moving_avg\n");
    for (i, (r, m)) in returns.iter().zip(&ma).enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, r, m));
    }
    out
}

/// Across-seed learning curve: rows are aligned by episode index up to the
/// shortest run; mean and sample standard deviation per column.
pub fn learning_curve_multi_csv(runs: &[Vec<f64>], window: usize) -> String {
    assert!(!runs.is_empty());
    let mas: Vec<Vec<f64>> = runs.iter().map(|r| moving_average(r, window)).collect();
    let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    let mut out = String::from("episode,return_mean,return_std,moving_avg_mean,moving_avg_std\n");
    let stats = |vals: Vec<f64>| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    for i in 0..len {
        let (rm, rs) = stats(runs.iter().map(|r| r[i]).collect());
        let (mm, ms) = stats(mas.iter().map(|m| m[i]).collect());
        out.push_str(&format!("{},{},{},{},{}\n", i + 1, rm, rs, mm, ms));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Action;

    struct Crash;
    impl Policy for Crash {
        fn act(&mut self, s: &TrafficSnapshot) -> Result<Decision, String> {
            // full speed straight ahead
            let _ = s;
            Ok(Decision {
                action: Action::new(15.0, 0.0),
                epsilon: None,
                diag: None,
            })
        }
    }

    #[test]
    fn all_collide_stub_rates() {
        let mut scenario = Scenario::default();
        scenario.traffic_count = 0;
        scenario.static_obstacles.push(crate::scenario::StaticObstacle { lon: 50.0, lat: 3.5 });
        let mut make = || Box::new(Crash) as Box<dyn Policy>;
        let (summary, _) = eval_policy(&mut make, &scenario, 5, 3).unwrap();
        assert_eq!(summary.collision_rate, 1.0);
        assert_eq!(summary.completion_rate, 0.0);
        // rate * runs is integral
        assert_eq!((summary.collision_rate * 5.0).fract(), 0.0);
    }

    #[test]
    fn identical_seeds_identical_summaries() {
        let scenario = Scenario::default();
        let mut make = || Box::new(Crash) as Box<dyn Policy>;
        let (a, _) = eval_policy(&mut make, &scenario, 4, 11).unwrap();
        let (b, _) = eval_policy(&mut make, &scenario, 4, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn csv_headers_are_stable() {
        assert_eq!(
            TRAJECTORY_HEADER,
            "t,veh_id,lon,lat,heading,speed,action_v,action_delta,feasible,iterations,kkt_residual,fallback_used"
        );
        assert_eq!(
            TRAINING_LOG_HEADER,
            "step,episode,return,r_s,r_n,r_dt,epsilon,alpha,critic_loss,policy_loss,fallback_used,collision"
        );
    }

    #[test]
    fn moving_average_boundary() {
        let vals = vec![1.0, 2.0, 3.0];
        // window larger than data: prefix averages
        let ma = moving_average(&vals, 20);
        assert_eq!(ma, vec![1.0, 1.5, 2.0]);
        let ma2 = moving_average(&vals, 2);
        assert_eq!(ma2, vec![1.0, 1.5, 2.5]);
    }

    #[test]
    fn single_episode_curve_has_one_row() {
        let csv = learning_curve_csv(&[42.0], 20);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "1,42,42");
    }

    #[test]
    fn multi_seed_curve_has_mean_std_columns() {
        let runs = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0], vec![3.0, 6.0, 9.0]];
        let csv = learning_curve_multi_csv(&runs, 20);
        let mut lines = csv.trim().lines();
        assert_eq!(
            lines.next().unwrap(),
            "episode,return_mean,return_std,moving_avg_mean,moving_avg_std"
        );
        // aligned to the shortest run
        assert_eq!(lines.count(), 2);
        assert!(csv.contains("return_std"));
    }
}
