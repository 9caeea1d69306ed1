//! Comparison baselines.
//!
//! `BaselineMpcPolicy` runs the same constrained optimizer with the lane
//! weighting pinned to the middle lane and a speed-maximizing terminal
//! target there; constraints are identical to the proposed stack.
//!
//! The RL baseline is a plain maximum-entropy actor-critic over a
//! two-dimensional action `(lateral endpoint offset, longitudinal
//! acceleration)`. A quintic lateral polynomial over a fixed three-second
//! horizon plus a constant-acceleration speed profile is re-fit every
//! step and tracked by a proportional-derivative steering law and a
//! proportional speed law. No hard constraints: collisions end the
//! episode with a penalty, which is the point of the comparison.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::idm::{select_impact_vehicles, IdmParams, MapInfo};
use crate::mpc::{free_lane_target, LaneTargetWeights, MpcConfig, Planner};
use crate::nn::{gaussian_head_sample, init_params, AdamState, Head, Mlp, MlpSpec, ScalarAdam};
use crate::sac::{build_policy_state, LearnerConfig, RewardCoeffs, SacError};
use crate::sim::{Action, Decision, Policy, SimConfig, SolverDiag, TrafficSnapshot, VehicleState, World};

/// The fixed-middle-lane optimizer baseline.
pub struct BaselineMpcPolicy {
    planner: Planner,
    map: MapInfo,
    idm: IdmParams,
    middle: usize,
    weights: LaneTargetWeights,
}

impl BaselineMpcPolicy {
    pub fn new(sim: &SimConfig, mpc: MpcConfig, idm: IdmParams) -> Self {
        let map = MapInfo::from(sim);
        let middle = (map.lane_count - 1) / 2;
        let mut w = vec![0.0; map.lane_count];
        w[middle] = 1.0;
        Self {
            planner: Planner::new(mpc, map, idm.clone()),
            map,
            idm,
            middle,
            weights: LaneTargetWeights { weights: w },
        }
    }
}

impl Policy for BaselineMpcPolicy {
    fn begin_episode(&mut self) {
        self.planner.reset();
    }

    fn act(&mut self, snapshot: &TrafficSnapshot) -> Result<Decision, String> {
        let target = free_lane_target(
            &snapshot.ego,
            self.middle,
            &self.map,
            &self.idm,
            self.planner.config.prediction_horizon,
            self.planner.config.dt,
        );
        let (action, solution) =
            self.planner
                .plan_with_weights(snapshot, &self.weights, Some((self.middle, target)));
        Ok(Decision {
            action,
            epsilon: None,
            diag: Some(SolverDiag {
                feasible: solution.feasible,
                iterations: solution.iterations,
                kkt_residual: solution.kkt_residual,
                fallback_used: solution.fallback_used,
            }),
        })
    }
}

/// Quintic polynomial `x(t) = a0 + a1 t + ... + a5 t^5` fit to position,
/// velocity, and acceleration at both ends.
#[derive(Debug, Clone, Copy)]
pub struct Quintic {
    pub c: [f64; 6],
}

impl Quintic {
    pub fn fit(start: (f64, f64, f64), end: (f64, f64, f64), t_end: f64) -> Self {
        let (x0, v0, a0) = start;
        let (xe, ve, ae) = end;
        let t = t_end;
        // residuals after the free coefficients
        let b = [
            xe - x0 - v0 * t - 0.5 * a0 * t * t,
            ve - v0 - a0 * t,
            ae - a0,
        ];
        let mut m = [
            [t.powi(3), t.powi(4), t.powi(5), b[0]],
            [3.0 * t * t, 4.0 * t.powi(3), 5.0 * t.powi(4), b[1]],
            [6.0 * t, 12.0 * t * t, 20.0 * t.powi(3), b[2]],
        ];
        // gaussian elimination with partial pivoting on the 3x3 block
        for col in 0..3 {
            let piv = (col..3)
                .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            for row in (col + 1)..3 {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut sol = [0.0; 3];
        for row in (0..3).rev() {
            let mut acc = m[row][3];
            for k in (row + 1)..3 {
                acc -= m[row][k] * sol[k];
            }
            sol[row] = acc / m[row][row];
        }
        Self {
            c: [x0, v0, 0.5 * a0, sol[0], sol[1], sol[2]],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (1..6).rev().fold(0.0, |acc, i| acc * t + i as f64 * self.c[i])
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        (2..6).rev().fold(0.0, |acc, i| acc * t + (i * (i - 1)) as f64 * self.c[i])
    }
}

/// Tracker and reward configuration for the RL baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineRlConfig {
    /// Lateral plan horizon, seconds.
    pub horizon: f64,
    /// Bound on the lateral endpoint offset, meters.
    pub lat_limit: f64,
    /// Bound on the commanded acceleration, m/s^2.
    pub accel_limit: f64,
    pub kp_lat: f64,
    pub kd_lat: f64,
    pub kp_lon: f64,
    pub speed_weight: f64,
    pub accel_weight: f64,
    pub lat_weight: f64,
    pub collision_penalty: f64,
}

impl Default for BaselineRlConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            lat_limit: 3.5,
            accel_limit: 3.0,
            kp_lat: 0.8,
            kd_lat: 0.3,
            kp_lon: 1.0,
            speed_weight: 1.0,
            accel_weight: 0.02,
            lat_weight: 0.05,
            collision_penalty: 50.0,
        }
    }
}

/// Comparison agent's action: lateral endpoint offset and longitudinal
/// acceleration, already scaled to physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineRlAction {
    pub lat_end_offset: f64,
    pub accel: f64,
}

/// Lookahead at which the tracking error is evaluated, seconds.
const TRACK_LOOKAHEAD: f64 = 0.5;

/// One tracking step: re-fit the quintic from the current state to the
/// commanded endpoint and emit the next (speed, steer) pair.
///
/// Because the polynomial is re-fit through the current state every step,
/// the instantaneous error is zero by construction; the controller
/// therefore acts on the predicted error half a second ahead, which keeps
/// a damping term on the lateral rate.
pub fn track_step(
    ego: &VehicleState,
    act: BaselineRlAction,
    cfg: &BaselineRlConfig,
    dt: f64,
    steer_cap: f64,
) -> Action {
    let lat_rate = ego.speed * ego.heading.sin();
    let q = Quintic::fit(
        (ego.lat, lat_rate, 0.0),
        (ego.lat + act.lat_end_offset, 0.0, 0.0),
        cfg.horizon,
    );
    let t_la = TRACK_LOOKAHEAD.min(cfg.horizon);
    let err = q.eval(t_la) - (ego.lat + lat_rate * t_la);
    let err_rate = q.deriv(t_la) - lat_rate;
    let steer = (cfg.kp_lat * err + cfg.kd_lat * err_rate).clamp(-steer_cap, steer_cap);
    let v_des = ego.speed + act.accel * dt;
    let speed = (ego.speed + cfg.kp_lon * (v_des - ego.speed)).max(0.0);
    Action::new(speed, steer)
}

fn observe(
    snapshot: &TrafficSnapshot,
    coeffs: &RewardCoeffs,
    map: &MapInfo,
    idm: &IdmParams,
) -> Vec<f64> {
    let impact = select_impact_vehicles(snapshot, map);
    let mut obs = build_policy_state(&impact, &snapshot.ego, coeffs, map, idm).features;
    obs.push((snapshot.ego.speed / coeffs.v_max).clamp(0.0, 1.0));
    let span = (map.lane_count as f64) * map.lane_width;
    obs.push(((snapshot.ego.lat + map.lane_width / 2.0) / span).clamp(0.0, 1.0));
    obs
}

// --- two-dimensional actor-critic --------------------------------------

struct VecTransition {
    obs: Vec<f64>,
    action: [f64; 2],
    reward: f64,
    next: Vec<f64>,
    done: bool,
}

/// Actor-critic over the squashed 2-d action, built from the same MLP kit
/// as the tendency learner.
#[derive(Clone)]
pub struct BaselineRlAgent {
    pub policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    log_alpha: f64,
    alpha_opt: ScalarAdam,
    learner: LearnerConfig,
}

impl BaselineRlAgent {
    pub fn new(obs_dim: usize, learner: LearnerConfig, rng: &mut ChaCha12Rng) -> Self {
        let mut policy_sizes = vec![obs_dim];
        policy_sizes.extend(&learner.hidden_sizes);
        policy_sizes.push(4);
        let mut critic_sizes = vec![obs_dim + 2];
        critic_sizes.extend(&learner.hidden_sizes);
        critic_sizes.push(1);
        let policy = init_params(&MlpSpec::new(policy_sizes, Head::Gaussian), rng);
        let q1 = init_params(&MlpSpec::new(critic_sizes.clone(), Head::Identity), rng);
        let q2 = init_params(&MlpSpec::new(critic_sizes, Head::Identity), rng);
        Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy_opt: AdamState::new(learner.policy_lr, policy.param_count()),
            q1_opt: AdamState::new(learner.critic_lr, q1.param_count()),
            q2_opt: AdamState::new(learner.critic_lr, q2.param_count()),
            policy,
            q1,
            q2,
            log_alpha: 0.0,
            alpha_opt: ScalarAdam::new(learner.temperature_lr),
            learner,
        }
    }

    fn sample(&self, obs: &[f64], rng: &mut ChaCha12Rng) -> [f64; 2] {
        let (out, _) = self.policy.forward(obs).expect("finite observation");
        let mut a = [0.0; 2];
        for (k, slot) in a.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(rng);
            *slot = gaussian_head_sample(out[k], out[2 + k], noise).epsilon;
        }
        a
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> [f64; 2] {
        let (out, _) = self.policy.forward(obs).expect("finite observation");
        [out[0].tanh(), out[1].tanh()]
    }

    fn update(&mut self, batch: &[&VecTransition], rng: &mut ChaCha12Rng) -> Result<(f64, f64), SacError> {
        use ndarray::Array2;
        let b = batch.len();
        let obs_dim = batch[0].obs.len();
        let gamma = self.learner.discount;
        let alpha = self.log_alpha.exp();

        let pack = |get: &dyn Fn(&VecTransition) -> &Vec<f64>| {
            let mut m = Array2::zeros((b, obs_dim));
            for (i, t) in batch.iter().enumerate() {
                for (j, v) in get(t).iter().enumerate() {
                    m[[i, j]] = *v;
                }
            }
            m
        };
        let with_actions = |s: &Array2<f64>, acts: &[[f64; 2]]| {
            let mut m = Array2::zeros((b, obs_dim + 2));
            for i in 0..b {
                for j in 0..obs_dim {
                    m[[i, j]] = s[[i, j]];
                }
                m[[i, obs_dim]] = acts[i][0];
                m[[i, obs_dim + 1]] = acts[i][1];
            }
            m
        };

        // critic targets from freshly sampled next actions
        let s_next = pack(&|t| &t.next);
        let (head_next, _) = self.policy.forward_batch(&s_next);
        let mut next_actions = vec![[0.0; 2]; b];
        let mut next_logp = vec![0.0; b];
        for i in 0..b {
            for k in 0..2 {
                let noise: f64 = StandardNormal.sample(rng);
                let s = gaussian_head_sample(head_next[[i, k]], head_next[[i, 2 + k]], noise);
                next_actions[i][k] = s.epsilon;
                next_logp[i] += s.log_density;
            }
        }
        let target_in = with_actions(&s_next, &next_actions);
        let (t1, _) = self.q1_target.forward_batch(&target_in);
        let (t2, _) = self.q2_target.forward_batch(&target_in);
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v = t1[[i, 0]].min(t2[[i, 0]]) - alpha * next_logp[i];
                t.reward + gamma * if t.done { 0.0 } else { 1.0 } * v
            })
            .collect();

        let s = pack(&|t| &t.obs);
        let actions: Vec<[f64; 2]> = batch.iter().map(|t| t.action).collect();
        let q_in = with_actions(&s, &actions);
        let (q1v, c1) = self.q1.forward_batch(&q_in);
        let (q2v, c2) = self.q2.forward_batch(&q_in);
        let mut og1 = Array2::zeros((b, 1));
        let mut og2 = Array2::zeros((b, 1));
        let mut closs = 0.0;
        for i in 0..b {
            let e1 = q1v[[i, 0]] - targets[i];
            let e2 = q2v[[i, 0]] - targets[i];
            closs += 0.5 * (e1 * e1 + e2 * e2) / b as f64;
            og1[[i, 0]] = e1 / b as f64;
            og2[[i, 0]] = e2 / b as f64;
        }
        let (g1, _) = self.q1.backward_batch(&c1, &og1);
        let (g2, _) = self.q2.backward_batch(&c2, &og2);
        self.q1_opt.update(&mut self.q1, &g1)?;
        self.q2_opt.update(&mut self.q2, &g2)?;

        // reparameterized policy update
        let (head, pcache) = self.policy.forward_batch(&s);
        let mut samples = Vec::with_capacity(b * 2);
        let mut new_actions = vec![[0.0; 2]; b];
        let mut logp = vec![0.0; b];
        for i in 0..b {
            for k in 0..2 {
                let noise: f64 = StandardNormal.sample(rng);
                let smp = gaussian_head_sample(head[[i, k]], head[[i, 2 + k]], noise);
                new_actions[i][k] = smp.epsilon;
                logp[i] += smp.log_density;
                samples.push(smp);
            }
        }
        let pi_in = with_actions(&s, &new_actions);
        let (p1, pc1) = self.q1.forward_batch(&pi_in);
        let (p2, pc2) = self.q2.forward_batch(&pi_in);
        let mut pick1 = Array2::zeros((b, 1));
        let mut pick2 = Array2::zeros((b, 1));
        let mut ploss = 0.0;
        for i in 0..b {
            let qmin = p1[[i, 0]].min(p2[[i, 0]]);
            ploss += (alpha * logp[i] - qmin) / b as f64;
            if p1[[i, 0]] <= p2[[i, 0]] {
                pick1[[i, 0]] = 1.0 / b as f64;
            } else {
                pick2[[i, 0]] = 1.0 / b as f64;
            }
        }
        let (_, ig1) = self.q1.backward_batch(&pc1, &pick1);
        let (_, ig2) = self.q2.backward_batch(&pc2, &pick2);
        let mut head_grad = Array2::zeros((b, 4));
        for i in 0..b {
            for k in 0..2 {
                let smp = samples[2 * i + k];
                let dq = ig1[[i, obs_dim + k]] + ig2[[i, obs_dim + k]];
                let dloss_deps = -dq;
                head_grad[[i, k]] = alpha / b as f64 * smp.dlogp_dmu + dloss_deps * smp.deps_dmu;
                head_grad[[i, 2 + k]] =
                    alpha / b as f64 * smp.dlogp_dlogstd + dloss_deps * smp.deps_dlogstd;
            }
        }
        let (pg, _) = self.policy.backward_batch(&pcache, &head_grad);
        self.policy_opt.update(&mut self.policy, &pg)?;

        // temperature (target entropy: one unit per action dimension)
        let mean_logp: f64 = logp.iter().sum::<f64>() / b as f64;
        let grad = -(mean_logp + 2.0 * self.learner.target_entropy);
        self.alpha_opt.update(&mut self.log_alpha, grad);

        let tau = self.learner.target_smoothing;
        for (tgt, src) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)] {
            for (tl, sl) in tgt.layers.iter_mut().zip(&src.layers) {
                tl.w.zip_mut_with(&sl.w, |t, &s| *t = tau * s + (1.0 - tau) * *t);
                tl.b.zip_mut_with(&sl.b, |t, &s| *t = tau * s + (1.0 - tau) * *t);
            }
        }
        Ok((closs, ploss))
    }
}

/// Outcome of a baseline training run.
pub struct BaselineRlOutput {
    pub agent: BaselineRlAgent,
    pub episode_returns: Vec<f64>,
    pub collisions: usize,
    pub steps: usize,
}

/// Train the comparison agent in the same world. Collisions terminate the
/// episode with a penalty instead of aborting the run.
pub fn train_baseline_rl(
    sim: &SimConfig,
    idm: &IdmParams,
    coeffs: &RewardCoeffs,
    cfg: &BaselineRlConfig,
    learner: LearnerConfig,
    seed: u64,
) -> Result<BaselineRlOutput, SacError> {
    use rand::SeedableRng;
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut noise_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut batch_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut init_rng = ChaCha12Rng::seed_from_u64(master.random());

    let map = MapInfo::from(sim);
    let obs_dim = 2 * sim.lane_count + 2;
    let mut agent = BaselineRlAgent::new(obs_dim, learner.clone(), &mut init_rng);
    let mut buffer: Vec<VecTransition> = Vec::with_capacity(learner.replay_capacity);
    let mut buf_head = 0usize;

    let mut world = World::new(sim.clone(), &mut env_rng, &[], vec![])?;
    let step_limit = sim.step_limit();
    let mut episode_steps = 0usize;
    let mut episode_return = 0.0;
    let mut episode_returns = Vec::new();
    let mut collisions = 0usize;

    for step in 1..=learner.total_steps {
        let snap = world.snapshot();
        let obs = observe(&snap, coeffs, &map, idm);
        let u = agent.sample(&obs, &mut noise_rng);
        let act = BaselineRlAction {
            lat_end_offset: u[0] * cfg.lat_limit,
            accel: u[1] * cfg.accel_limit,
        };
        let cmd = track_step(&snap.ego, act, cfg, sim.dt, sim.max_steer);
        let collided = world.step(cmd)?;

        let post = world.snapshot();
        let mut reward = post.ego.speed / coeffs.v_max * cfg.speed_weight
            - cfg.accel_weight * act.accel * act.accel
            - cfg.lat_weight * act.lat_end_offset * act.lat_end_offset;
        if collided {
            reward -= cfg.collision_penalty;
            collisions += 1;
        }
        episode_return += reward;
        episode_steps += 1;

        let done = collided
            || world.ego.lon >= sim.route_length
            || episode_steps >= step_limit
            || (world.ego.speed < 0.1 && world.fully_blocked());

        let t = VecTransition {
            obs,
            action: u,
            reward,
            next: observe(&post, coeffs, &map, idm),
            done,
        };
        if buffer.len() < learner.replay_capacity {
            buffer.push(t);
        } else {
            buffer[buf_head] = t;
            buf_head = (buf_head + 1) % learner.replay_capacity;
        }

        if step >= learner.warmup_steps && buffer.len() >= learner.batch_size {
            let batch: Vec<&VecTransition> = (0..learner.batch_size)
                .map(|_| &buffer[batch_rng.random_range(0..buffer.len())])
                .collect();
            let (closs, ploss) = agent.update(&batch, &mut noise_rng)?;
            if !(closs.is_finite() && ploss.is_finite()) {
                return Err(SacError::NonFiniteLoss { step });
            }
        }

        if done {
            episode_returns.push(episode_return);
            episode_return = 0.0;
            episode_steps = 0;
            world = World::new(sim.clone(), &mut env_rng, &[], vec![])?;
        }
    }

    Ok(BaselineRlOutput {
        agent,
        episode_returns,
        collisions,
        steps: learner.total_steps,
    })
}

/// Frozen comparison agent for evaluation episodes.
pub struct BaselineRlPolicy {
    pub agent: BaselineRlAgent,
    pub cfg: BaselineRlConfig,
    pub coeffs: RewardCoeffs,
    pub idm: IdmParams,
    pub map: MapInfo,
    pub dt: f64,
    pub steer_cap: f64,
}

impl BaselineRlPolicy {
    pub fn new(agent: BaselineRlAgent, sim: &SimConfig, cfg: BaselineRlConfig, idm: IdmParams, coeffs: RewardCoeffs) -> Self {
        Self {
            agent,
            cfg,
            coeffs,
            idm,
            map: MapInfo::from(sim),
            dt: sim.dt,
            steer_cap: sim.max_steer,
        }
    }
}

impl Policy for BaselineRlPolicy {
    fn act(&mut self, snapshot: &TrafficSnapshot) -> Result<Decision, String> {
        let obs = observe(snapshot, &self.coeffs, &self.map, &self.idm);
        let u = self.agent.act_deterministic(&obs);
        let act = BaselineRlAction {
            lat_end_offset: u[0] * self.cfg.lat_limit,
            accel: u[1] * self.cfg.accel_limit,
        };
        Ok(Decision {
            action: track_step(&snapshot.ego, act, &self.cfg, self.dt, self.steer_cap),
            epsilon: None,
            diag: None,
        })
    }
}
