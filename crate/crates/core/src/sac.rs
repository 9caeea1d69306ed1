//! Maximum-entropy actor-critic training of the driving tendency.
//!
//! The policy state pairs a normalized gap and lateral offset per lane
//! (virtual leads fill empty lanes). A Gaussian tendency head squashed to
//! `(-1, 1)` feeds the planner's lane-target weighting; twin critics with
//! soft-updated targets estimate its value; the entropy temperature is
//! auto-tuned against a target entropy. Training runs one environment
//! step per iteration with the planner in the loop and asserts that the
//! whole run stays collision-free.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idm::{select_impact_vehicles, IdmParams, ImpactSet, MapInfo};
use crate::mpc::{MpcConfig, Planner};
use crate::nn::{
    gaussian_head_sample, init_params, read_adam, read_mlp, write_adam, write_mlp, AdamState,
    Head, Mlp, MlpSpec, NnError, ScalarAdam,
};
use crate::sim::{SimConfig, TrafficSnapshot, VehicleState, World};

#[derive(Debug, Error)]
pub enum SacError {
    #[error("collision during training at step {step} (episode {episode}): {detail}")]
    Collision {
        step: usize,
        episode: usize,
        detail: String,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite transition in batch")]
    NonFiniteBatch,
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Learned lateral preference, strictly inside (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TendencyFactor {
    pub value: f64,
}

impl TendencyFactor {
    pub fn new(value: f64) -> Result<Self, SacError> {
        if !(value.is_finite() && value > -1.0 && value < 1.0) {
            return Err(SacError::NonFiniteBatch);
        }
        Ok(Self { value })
    }
}

/// Per-lane (normalized gap, normalized lateral offset) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    /// `[D_1, L_1, ..., D_m, L_m]`, every entry in [0, 1].
    pub features: Vec<f64>,
}

/// Reward shaping coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardCoeffs {
    /// Speed reward factor rho_s.
    pub speed_factor: f64,
    /// Proximity penalty factor rho_n (negative).
    pub proximity_factor: f64,
    /// Tendency reward factor rho_dt.
    pub tendency_factor: f64,
    /// Speed normalization v_max, m/s.
    pub v_max: f64,
    /// Gap normalization d_max, meters.
    pub d_max: f64,
}

impl Default for RewardCoeffs {
    fn default() -> Self {
        Self {
            speed_factor: 1.3,
            proximity_factor: -0.08,
            tendency_factor: 20.0,
            v_max: 15.0,
            d_max: 180.0,
        }
    }
}

/// One replay record.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: PolicyState,
    pub action: f64,
    pub reward: f64,
    pub next_state: PolicyState,
    pub done: bool,
}

impl Transition {
    fn is_finite(&self) -> bool {
        self.action.is_finite()
            && self.reward.is_finite()
            && self.state.features.iter().all(|v| v.is_finite())
            && self.next_state.features.iter().all(|v| v.is_finite())
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self {
            data: Vec::with_capacity(capacity),
            capacity,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut ChaCha12Rng) -> Vec<&'a Transition> {
        assert!(batch_size <= self.data.len(), "batch larger than buffer fill");
        (0..batch_size)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect()
    }
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub discount: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub temperature_lr: f64,
    pub target_smoothing: f64,
    pub target_entropy: f64,
    pub update_every: usize,
    pub warmup_steps: usize,
    pub replay_capacity: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            batch_size: 256,
            total_steps: 10_000,
            critic_lr: 3e-4,
            policy_lr: 3e-4,
            temperature_lr: 3e-4,
            target_smoothing: 0.005,
            target_entropy: -1.0,
            update_every: 1,
            warmup_steps: 500,
            replay_capacity: 10_000,
            hidden_sizes: vec![256, 256],
        }
    }
}

/// Normalized policy state from the impact set.
///
/// `D_j = min(gap_j / d_max, 1)` with the virtual-lead gap for empty
/// lanes; `L_j = (clamp(lat_j - lat_ego, -3, 3) + 3) / 6`.
pub fn build_policy_state(
    impact: &ImpactSet,
    ego: &VehicleState,
    coeffs: &RewardCoeffs,
    map: &MapInfo,
    idm: &IdmParams,
) -> PolicyState {
    let mut features = Vec::with_capacity(2 * impact.lane_count());
    for lane in 0..impact.lane_count() {
        let (lead, _) = impact.lead_or_virtual(lane, ego, map, idm);
        let gap = (lead.lon - ego.lon).max(0.0);
        let d = (gap / coeffs.d_max).min(1.0);
        let l = (lead.lat - ego.lat).clamp(-3.0, 3.0);
        features.push(d);
        features.push((l + 3.0) / 6.0);
    }
    PolicyState { features }
}

/// Which side of the ego's lane is more open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeDirection {
    Left,
    Right,
    Tie,
}

/// Compare the best normalized gap among lanes strictly left of the ego's
/// lane against lanes strictly right of it. A side with no lanes
/// degenerates to the current lane's own openness (continuing straight is
/// the only way to keep leaning that way from an edge lane); exact ties
/// take the zero-reward branch.
pub fn free_direction(
    impact: &ImpactSet,
    ego: &VehicleState,
    coeffs: &RewardCoeffs,
    map: &MapInfo,
    idm: &IdmParams,
) -> FreeDirection {
    let ego_lane = map.lane_of(ego.lat);
    let d_of = |lane: usize| {
        let (lead, _) = impact.lead_or_virtual(lane, ego, map, idm);
        ((lead.lon - ego.lon).max(0.0) / coeffs.d_max).min(1.0)
    };
    let side = |lanes: std::ops::Range<usize>| lanes.map(d_of).fold(None, |acc: Option<f64>, d| {
        Some(acc.map_or(d, |a| a.max(d)))
    });
    let current = d_of(ego_lane);
    let left = side(0..ego_lane).unwrap_or(current);
    let right = side((ego_lane + 1)..map.lane_count).unwrap_or(current);
    if left > right {
        FreeDirection::Left
    } else if right > left {
        FreeDirection::Right
    } else {
        FreeDirection::Tie
    }
}

/// Reward components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_s: f64,
    pub r_n: f64,
    pub r_dt: f64,
    pub total: f64,
}

/// Squared separations below this floor are clamped to avoid the 1/d^2
/// proximity penalty blowing up at zero separation (floor = 0.1 m).
const SEPARATION_FLOOR_SQ: f64 = 0.01;

/// Step reward: speed term plus proximity penalty over the real impact
/// vehicles plus the tendency term steering toward the freer side.
pub fn compute_reward(
    snapshot: &TrafficSnapshot,
    impact: &ImpactSet,
    epsilon: f64,
    coeffs: &RewardCoeffs,
    map: &MapInfo,
    idm: &IdmParams,
) -> RewardBreakdown {
    let ego = &snapshot.ego;
    let r_s = ego.speed * coeffs.speed_factor / coeffs.v_max;

    let mut r_n = 0.0;
    for entry in impact.per_lane.iter().flatten() {
        let d_lat = entry.lat - ego.lat;
        let d_lon = entry.lon - ego.lon;
        let denom = (d_lat * d_lat + d_lon * d_lon).max(SEPARATION_FLOOR_SQ);
        r_n += coeffs.proximity_factor / denom;
    }

    let r_dt = match free_direction(impact, ego, coeffs, map, idm) {
        FreeDirection::Left => -coeffs.tendency_factor * epsilon + 10.0,
        FreeDirection::Right => coeffs.tendency_factor * epsilon - 10.0,
        FreeDirection::Tie => 0.0,
    };

    RewardBreakdown {
        r_s,
        r_n,
        r_dt,
        total: r_s + r_n + r_dt,
    }
}

/// Gaussian tendency policy plus twin critics with soft-updated targets
/// and an auto-tuned entropy temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub lane_count: usize,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub policy_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub log_alpha: f64,
    pub alpha_opt: ScalarAdam,
    pub config: LearnerConfig,
}

/// Losses and diagnostics of one gradient update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

pub struct CriticLossOut {
    pub loss1: f64,
    pub loss2: f64,
    pub grads1: Mlp,
    pub grads2: Mlp,
    /// Bootstrap targets, one per batch row.
    pub targets: Vec<f64>,
}

fn batch_features(batch: &[&Transition], next: bool) -> Array2<f64> {
    let dim = batch[0].state.features.len();
    let mut out = Array2::zeros((batch.len(), dim));
    for (i, t) in batch.iter().enumerate() {
        let src = if next { &t.next_state.features } else { &t.state.features };
        for (j, v) in src.iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    out
}

fn with_action(states: &Array2<f64>, actions: &[f64]) -> Array2<f64> {
    let (b, d) = states.dim();
    let mut out = Array2::zeros((b, d + 1));
    for i in 0..b {
        for j in 0..d {
            out[[i, j]] = states[[i, j]];
        }
        out[[i, d]] = actions[i];
    }
    out
}

/// Twin-critic regression loss against the soft bootstrap target
/// `y = r + gamma (1 - done) (min(Q'_1, Q'_2)(s', e') - alpha log pi(e'|s'))`
/// with `e'` freshly sampled through the given noise. Gradients exclude
/// the target branch.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    batch: &[&Transition],
    q1: &Mlp,
    q2: &Mlp,
    q1_target: &Mlp,
    q2_target: &Mlp,
    policy: &Mlp,
    alpha: f64,
    gamma: f64,
    noise: &[f64],
) -> Result<CriticLossOut, SacError> {
    if batch.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    if batch.iter().any(|t| !t.is_finite()) {
        return Err(SacError::NonFiniteBatch);
    }
    let b = batch.len();
    assert_eq!(noise.len(), b);

    // fresh next action from the current policy
    let s_next = batch_features(batch, true);
    let (head_out, _) = policy.forward_batch(&s_next);
    let mut next_actions = Vec::with_capacity(b);
    let mut next_logp = Vec::with_capacity(b);
    for i in 0..b {
        let sample = gaussian_head_sample(head_out[[i, 0]], head_out[[i, 1]], noise[i]);
        next_actions.push(sample.epsilon);
        next_logp.push(sample.log_density);
    }

    let target_in = with_action(&s_next, &next_actions);
    let (t1, _) = q1_target.forward_batch(&target_in);
    let (t2, _) = q2_target.forward_batch(&target_in);

    let mut targets = Vec::with_capacity(b);
    for (i, t) in batch.iter().enumerate() {
        let v_next = t1[[i, 0]].min(t2[[i, 0]]) - alpha * next_logp[i];
        let mask = if t.done { 0.0 } else { 1.0 };
        targets.push(t.reward + gamma * mask * v_next);
    }

    // regression of both critics on (s, a)
    let s = batch_features(batch, false);
    let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
    let q_in = with_action(&s, &actions);
    let (q1v, c1) = q1.forward_batch(&q_in);
    let (q2v, c2) = q2.forward_batch(&q_in);

    let mut loss1 = 0.0;
    let mut loss2 = 0.0;
    let mut og1 = Array2::zeros((b, 1));
    let mut og2 = Array2::zeros((b, 1));
    for i in 0..b {
        let e1 = q1v[[i, 0]] - targets[i];
        let e2 = q2v[[i, 0]] - targets[i];
        loss1 += 0.5 * e1 * e1;
        loss2 += 0.5 * e2 * e2;
        og1[[i, 0]] = e1 / b as f64;
        og2[[i, 0]] = e2 / b as f64;
    }
    loss1 /= b as f64;
    loss2 /= b as f64;

    let (grads1, _) = q1.backward_batch(&c1, &og1);
    let (grads2, _) = q2.backward_batch(&c2, &og2);
    Ok(CriticLossOut {
        loss1,
        loss2,
        grads1,
        grads2,
        targets,
    })
}

pub struct PolicyLossOut {
    pub loss: f64,
    pub grads: Mlp,
    pub mean_log_prob: f64,
}

/// Reparameterized policy objective
/// `mean(alpha log pi(e|s) - min(Q_1, Q_2)(s, e))`; gradients flow through
/// the squashed sample into the critics' action input (critic weights are
/// not updated here).
pub fn policy_loss(
    batch: &[&Transition],
    q1: &Mlp,
    q2: &Mlp,
    policy: &Mlp,
    alpha: f64,
    noise: &[f64],
) -> Result<PolicyLossOut, SacError> {
    if batch.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    if batch.iter().any(|t| !t.is_finite()) {
        return Err(SacError::NonFiniteBatch);
    }
    let b = batch.len();
    assert_eq!(noise.len(), b);

    let s = batch_features(batch, false);
    let (head_out, policy_cache) = policy.forward_batch(&s);
    let samples: Vec<_> = (0..b)
        .map(|i| gaussian_head_sample(head_out[[i, 0]], head_out[[i, 1]], noise[i]))
        .collect();
    let actions: Vec<f64> = samples.iter().map(|s| s.epsilon).collect();

    let q_in = with_action(&s, &actions);
    let (q1v, c1) = q1.forward_batch(&q_in);
    let (q2v, c2) = q2.forward_batch(&q_in);

    let mut loss = 0.0;
    let mut mean_logp = 0.0;
    let mut pick1 = Array2::zeros((b, 1));
    let mut pick2 = Array2::zeros((b, 1));
    for i in 0..b {
        let qmin = q1v[[i, 0]].min(q2v[[i, 0]]);
        loss += alpha * samples[i].log_density - qmin;
        mean_logp += samples[i].log_density;
        if q1v[[i, 0]] <= q2v[[i, 0]] {
            pick1[[i, 0]] = 1.0 / b as f64;
        } else {
            pick2[[i, 0]] = 1.0 / b as f64;
        }
    }
    loss /= b as f64;
    mean_logp /= b as f64;

    // dQmin/d(input) rows for the selected critic of each sample
    let (_, in_grad1) = q1.backward_batch(&c1, &pick1);
    let (_, in_grad2) = q2.backward_batch(&c2, &pick2);
    let act_dim = q_in.dim().1 - 1;

    let mut head_grad = Array2::zeros((b, 2));
    for (i, sample) in samples.iter().enumerate() {
        // d loss / d epsilon_i = -(dQmin/d eps)(i); the 1/b is inside picks
        let dq_deps = in_grad1[[i, act_dim]] + in_grad2[[i, act_dim]];
        let dloss_deps = -dq_deps;
        head_grad[[i, 0]] = alpha / b as f64 * sample.dlogp_dmu + dloss_deps * sample.deps_dmu;
        head_grad[[i, 1]] =
            alpha / b as f64 * sample.dlogp_dlogstd + dloss_deps * sample.deps_dlogstd;
    }
    let (grads, _) = policy.backward_batch(&policy_cache, &head_grad);
    Ok(PolicyLossOut {
        loss,
        grads,
        mean_log_prob: mean_logp,
    })
}

/// Gradient step on `log alpha` for the constraint
/// `mean(log pi) = -target_entropy`: too-deterministic policies push the
/// temperature up, too-random ones pull it down.
pub fn temperature_update(
    mean_log_prob: f64,
    log_alpha: &mut f64,
    opt: &mut ScalarAdam,
    target_entropy: f64,
) {
    let grad = -(mean_log_prob + target_entropy);
    opt.update(log_alpha, grad);
}

fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        tl.w.zip_mut_with(&sl.w, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        tl.b.zip_mut_with(&sl.b, |t, &s| *t = tau * s + (1.0 - tau) * *t);
    }
}

impl SacAgent {
    pub fn new(lane_count: usize, config: LearnerConfig, rng: &mut ChaCha12Rng) -> Self {
        let state_dim = 2 * lane_count;
        let mut policy_sizes = vec![state_dim];
        policy_sizes.extend(&config.hidden_sizes);
        policy_sizes.push(2);
        let mut critic_sizes = vec![state_dim + 1];
        critic_sizes.extend(&config.hidden_sizes);
        critic_sizes.push(1);

        let policy = init_params(&MlpSpec::new(policy_sizes, Head::Gaussian), rng);
        let q1 = init_params(&MlpSpec::new(critic_sizes.clone(), Head::Identity), rng);
        let q2 = init_params(&MlpSpec::new(critic_sizes, Head::Identity), rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let policy_opt = AdamState::new(config.policy_lr, policy.param_count());
        let q1_opt = AdamState::new(config.critic_lr, q1.param_count());
        let q2_opt = AdamState::new(config.critic_lr, q2.param_count());
        let alpha_opt = ScalarAdam::new(config.temperature_lr);
        Self {
            lane_count,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_opt,
            q1_opt,
            q2_opt,
            log_alpha: 0.0,
            alpha_opt,
            config,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Stochastic action for training.
    pub fn act(&self, state: &PolicyState, rng: &mut ChaCha12Rng) -> TendencyFactor {
        let (out, _) = self
            .policy
            .forward(&state.features)
            .expect("policy state is finite by construction");
        let noise: f64 = StandardNormal.sample(rng);
        TendencyFactor {
            value: gaussian_head_sample(out[0], out[1], noise).epsilon,
        }
    }

    /// Deterministic action for evaluation: squashed mean.
    pub fn act_deterministic(&self, state: &PolicyState) -> TendencyFactor {
        let (out, _) = self
            .policy
            .forward(&state.features)
            .expect("policy state is finite by construction");
        TendencyFactor {
            value: out[0].tanh(),
        }
    }

    /// One full gradient update: both critics, the policy, the
    /// temperature, then the soft target update.
    pub fn update(&mut self, batch: &[&Transition], rng: &mut ChaCha12Rng) -> Result<UpdateStats, SacError> {
        let b = batch.len();
        let critic_noise: Vec<f64> = (0..b).map(|_| StandardNormal.sample(rng)).collect();
        let policy_noise: Vec<f64> = (0..b).map(|_| StandardNormal.sample(rng)).collect();

        let alpha = self.alpha();
        let c = critic_loss(
            batch,
            &self.q1,
            &self.q2,
            &self.q1_target,
            &self.q2_target,
            &self.policy,
            alpha,
            self.config.discount,
            &critic_noise,
        )?;
        self.q1_opt.update(&mut self.q1, &c.grads1)?;
        self.q2_opt.update(&mut self.q2, &c.grads2)?;

        let p = policy_loss(batch, &self.q1, &self.q2, &self.policy, alpha, &policy_noise)?;
        self.policy_opt.update(&mut self.policy, &p.grads)?;

        temperature_update(
            p.mean_log_prob,
            &mut self.log_alpha,
            &mut self.alpha_opt,
            self.config.target_entropy,
        );

        soft_update(&mut self.q1_target, &self.q1, self.config.target_smoothing);
        soft_update(&mut self.q2_target, &self.q2, self.config.target_smoothing);

        Ok(UpdateStats {
            critic_loss: c.loss1 + c.loss2,
            policy_loss: p.loss,
            alpha: self.alpha(),
            mean_log_prob: p.mean_log_prob,
        })
    }

    pub fn save_checkpoint(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sac-checkpoint v1 lanes {}\n", self.lane_count));
        write_mlp(&mut out, &self.policy);
        write_mlp(&mut out, &self.q1);
        write_mlp(&mut out, &self.q2);
        write_mlp(&mut out, &self.q1_target);
        write_mlp(&mut out, &self.q2_target);
        write_adam(&mut out, &self.policy_opt);
        write_adam(&mut out, &self.q1_opt);
        write_adam(&mut out, &self.q2_opt);
        out.push_str(&format!("{:016x}\n", self.log_alpha.to_bits()));
        out.push_str(&format!(
            "alpha-adam {} {:016x} {:016x} {:016x}\n",
            self.alpha_opt.step,
            self.alpha_opt.lr.to_bits(),
            self.alpha_opt.m.to_bits(),
            self.alpha_opt.v.to_bits()
        ));
        out
    }

    pub fn load_checkpoint(text: &str, config: LearnerConfig) -> Result<Self, SacError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NnError::Checkpoint("empty checkpoint".into()))?;
        let lane_count: usize = header
            .trim()
            .strip_prefix("sac-checkpoint v1 lanes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| NnError::Checkpoint("bad header".into()))?;
        let policy = read_mlp(&mut lines)?;
        let q1 = read_mlp(&mut lines)?;
        let q2 = read_mlp(&mut lines)?;
        let q1_target = read_mlp(&mut lines)?;
        let q2_target = read_mlp(&mut lines)?;
        let policy_opt = read_adam(&mut lines)?;
        let q1_opt = read_adam(&mut lines)?;
        let q2_opt = read_adam(&mut lines)?;
        let log_alpha_line = lines
            .next()
            .ok_or_else(|| NnError::Checkpoint("missing log_alpha".into()))?;
        let log_alpha = f64::from_bits(
            u64::from_str_radix(log_alpha_line.trim(), 16)
                .map_err(|e| NnError::Checkpoint(format!("bad log_alpha: {e}")))?,
        );
        let alpha_line = lines
            .next()
            .ok_or_else(|| NnError::Checkpoint("missing alpha adam".into()))?;
        let toks: Vec<&str> = alpha_line.trim().split_whitespace().collect();
        if toks.len() != 5 || toks[0] != "alpha-adam" {
            return Err(NnError::Checkpoint("bad alpha adam line".into()).into());
        }
        let parse_bits = |s: &str| -> Result<f64, SacError> {
            Ok(f64::from_bits(u64::from_str_radix(s, 16).map_err(|e| {
                NnError::Checkpoint(format!("bad bits: {e}"))
            })?))
        };
        let mut alpha_opt = ScalarAdam::new(parse_bits(toks[2])?);
        alpha_opt.step = toks[1]
            .parse()
            .map_err(|_| NnError::Checkpoint("bad alpha step".into()))?;
        alpha_opt.m = parse_bits(toks[3])?;
        alpha_opt.v = parse_bits(toks[4])?;
        Ok(Self {
            lane_count,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_opt,
            q1_opt,
            q2_opt,
            log_alpha,
            alpha_opt,
            config,
        })
    }
}

/// One row of the step-level training log.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: usize,
    pub episode: usize,
    pub episode_return: f64,
    pub r_s: f64,
    pub r_n: f64,
    pub r_dt: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub fallback_used: bool,
    pub collision: bool,
}

/// Everything a training run produces.
pub struct TrainOutput {
    pub rows: Vec<TrainLogRow>,
    /// Return of each completed episode.
    pub episode_returns: Vec<f64>,
    /// Global step at which each episode ended.
    pub episode_end_steps: Vec<usize>,
    pub agent: SacAgent,
    pub collisions: usize,
    pub fallbacks: usize,
}

/// All the configuration a training run needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub sim: SimConfig,
    pub mpc: MpcConfig,
    pub idm: IdmParams,
    pub coeffs: RewardCoeffs,
    pub learner: LearnerConfig,
}

impl TrainConfig {
    pub fn from_sim(sim: SimConfig) -> Self {
        Self {
            mpc: MpcConfig::from_sim(&sim),
            sim,
            idm: IdmParams::default(),
            coeffs: RewardCoeffs::default(),
            learner: LearnerConfig::default(),
        }
    }
}

/// Run the step-level training loop: sample a tendency, plan through the
/// optimizer, step the world, store the transition, and after warm-up
/// perform one gradient update per environment step. Any collision or
/// non-finite loss aborts the run with diagnostics.
pub fn train(config: &TrainConfig, seed: u64) -> Result<TrainOutput, SacError> {
    use rand::SeedableRng;
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut noise_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut batch_rng = ChaCha12Rng::seed_from_u64(master.random());
    let mut init_rng = ChaCha12Rng::seed_from_u64(master.random());

    let map = MapInfo::from(&config.sim);
    let mut agent = SacAgent::new(config.sim.lane_count, config.learner.clone(), &mut init_rng);
    let mut buffer = ReplayBuffer::new(config.learner.replay_capacity.max(config.learner.batch_size));
    let mut planner = Planner::new(config.mpc.clone(), map, config.idm.clone());

    let mut world = World::new(config.sim.clone(), &mut env_rng, &[], vec![])?;
    let mut episode = 1usize;
    let mut episode_steps = 0usize;
    let mut episode_return = 0.0;
    let step_limit = config.sim.step_limit();

    let mut rows = Vec::with_capacity(config.learner.total_steps);
    let mut episode_returns = Vec::new();
    let mut episode_end_steps = Vec::new();
    let collisions = 0usize;
    let mut fallbacks = 0usize;

    for step in 1..=config.learner.total_steps {
        let snap = world.snapshot();
        let impact = select_impact_vehicles(&snap, &map);
        let state = build_policy_state(&impact, &snap.ego, &config.coeffs, &map, &config.idm);
        let eps = agent.act(&state, &mut noise_rng).value;
        let (action, solution) = planner.plan(&snap, eps);
        if solution.fallback_used {
            fallbacks += 1;
        }

        let collided = world.step(action)?;
        if collided {
            let hit: Vec<String> = world
                .traffic
                .iter()
                .enumerate()
                .filter(|(_, v)| {
                    crate::sim::check_collision(&world.ego, v, config.sim.vehicle_length, config.sim.vehicle_width)
                })
                .map(|(i, v)| format!("vehicle {i} at {v:?}"))
                .collect();
            return Err(SacError::Collision {
                step,
                episode,
                detail: format!(
                    "ego {:?} after action ({:.3}, {:.4}) eps {:.3} feasible {} fallback {} vs {}",
                    world.ego,
                    action.speed,
                    action.steer,
                    eps,
                    solution.feasible,
                    solution.fallback_used,
                    hit.join("; ")
                ),
            });
        }

        let post = world.snapshot();
        let post_impact = select_impact_vehicles(&post, &map);
        let reward = compute_reward(&post, &post_impact, eps, &config.coeffs, &map, &config.idm);
        let next_state = build_policy_state(&post_impact, &post.ego, &config.coeffs, &map, &config.idm);
        episode_return += reward.total;
        episode_steps += 1;

        let done = world.ego.lon >= config.sim.route_length
            || episode_steps >= step_limit
            || (world.ego.speed < 0.1 && world.fully_blocked());

        buffer.push(Transition {
            state,
            action: eps,
            reward: reward.total,
            next_state,
            done,
        });

        let mut stats = None;
        if step >= config.learner.warmup_steps
            && buffer.len() >= config.learner.batch_size
            && step % config.learner.update_every == 0
        {
            let batch = buffer.sample(config.learner.batch_size, &mut batch_rng);
            let s = agent.update(&batch, &mut noise_rng)?;
            if !(s.critic_loss.is_finite() && s.policy_loss.is_finite()) {
                return Err(SacError::NonFiniteLoss { step });
            }
            stats = Some(s);
        }

        rows.push(TrainLogRow {
            step,
            episode,
            episode_return,
            r_s: reward.r_s,
            r_n: reward.r_n,
            r_dt: reward.r_dt,
            epsilon: eps,
            alpha: agent.alpha(),
            critic_loss: stats.map_or(0.0, |s| s.critic_loss),
            policy_loss: stats.map_or(0.0, |s| s.policy_loss),
            fallback_used: solution.fallback_used,
            collision: collided,
        });

        if done {
            episode_returns.push(episode_return);
            episode_end_steps.push(step);
            episode += 1;
            episode_steps = 0;
            episode_return = 0.0;
            world = World::new(config.sim.clone(), &mut env_rng, &[], vec![])?;
            planner.reset();
        }
    }

    Ok(TrainOutput {
        rows,
        episode_returns,
        episode_end_steps,
        agent,
        collisions,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn map3() -> MapInfo {
        MapInfo {
            lane_count: 3,
            lane_width: 3.5,
            observation_range: 180.0,
        }
    }

    fn snap(ego: VehicleState, traffic: Vec<VehicleState>) -> TrafficSnapshot {
        let ids = (0..traffic.len()).collect();
        TrafficSnapshot { ego, traffic, ids }
    }

    fn impact_of(s: &TrafficSnapshot) -> ImpactSet {
        select_impact_vehicles(s, &map3())
    }

    #[test]
    fn policy_state_normalization() {
        let coeffs = RewardCoeffs::default();
        let idm = IdmParams::default();
        let ego = VehicleState::new(0.0, 3.5, 0.0, 10.0);

        // saturated gap and centered lateral
        let s = snap(ego, vec![VehicleState::new(180.0, 3.5, 0.0, 8.0)]);
        let ps = build_policy_state(&impact_of(&s), &ego, &coeffs, &map3(), &idm);
        assert_relative_eq!(ps.features[2], 1.0); // D for lane 1
        assert_relative_eq!(ps.features[3], 0.5); // L for lane 1 (l = 0)

        // half gap, far-left offset clamps to zero
        let ego2 = VehicleState::new(0.0, 7.0, 0.0, 10.0);
        let s2 = snap(ego2, vec![VehicleState::new(90.0, 0.5, 0.0, 8.0)]);
        let ps2 = build_policy_state(&impact_of(&s2), &ego2, &coeffs, &map3(), &idm);
        assert_relative_eq!(ps2.features[0], 0.5); // 90 / 180
        assert_relative_eq!(ps2.features[1], 0.0); // l = -6.5 clamps to -3
        assert!(ps2.features.iter().all(|&f| (0.0..=1.0).contains(&f)));
        assert_eq!(ps2.features.len(), 6);
    }

    #[test]
    fn reward_speed_term_at_vmax() {
        let coeffs = RewardCoeffs::default();
        let idm = IdmParams::default();
        let ego = VehicleState::new(0.0, 3.5, 0.0, 15.0);
        let s = snap(ego, vec![]);
        let r = compute_reward(&s, &impact_of(&s), 0.0, &coeffs, &map3(), &idm);
        assert_eq!(r.r_s, 1.3);
        // empty road: both sides saturate, tie
        assert_eq!(r.r_dt, 0.0);
        assert_eq!(r.r_n, 0.0);
        assert_eq!(r.total, r.r_s + r.r_n + r.r_dt);
    }

    #[test]
    fn reward_proximity_hand_case() {
        let coeffs = RewardCoeffs::default();
        let idm = IdmParams::default();
        // ego in lane 0; one real impact vehicle 4 m ahead, 3 m to the side
        let ego = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let s = snap(ego, vec![VehicleState::new(4.0, 3.0, 0.0, 8.0)]);
        let r = compute_reward(&s, &impact_of(&s), 0.0, &coeffs, &map3(), &idm);
        assert_eq!(r.r_n, -0.08 / 25.0);
        assert_eq!(r.r_n, -0.0032);
    }

    #[test]
    fn reward_tendency_left_free() {
        let coeffs = RewardCoeffs::default();
        let idm = IdmParams::default();
        // ego in the rightmost lane with a close lead; the left side is open
        let ego = VehicleState::new(0.0, 7.0, 0.0, 10.0);
        let s = snap(ego, vec![VehicleState::new(25.0, 7.0, 0.0, 6.0)]);
        let r = compute_reward(&s, &impact_of(&s), -1.0, &coeffs, &map3(), &idm);
        assert_eq!(r.r_dt, 30.0);
    }

    #[test]
    fn free_direction_rules() {
        let coeffs = RewardCoeffs::default();
        let idm = IdmParams::default();
        let map = map3();
        // ego leftmost and blocked ahead: the only open side is right
        let ego = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let s = snap(ego, vec![VehicleState::new(30.0, 0.0, 0.0, 8.0)]);
        assert_eq!(
            free_direction(&impact_of(&s), &ego, &coeffs, &map, &idm),
            FreeDirection::Right
        );
        // ego leftmost in a free lane with slower traffic to the right:
        // the missing left side degenerates to the current lane, which is
        // just as open as the virtual right, so keeping left wins
        let s_keep = snap(ego, vec![VehicleState::new(30.0, 3.5, 0.0, 8.0)]);
        assert_eq!(
            free_direction(&impact_of(&s_keep), &ego, &coeffs, &map, &idm),
            FreeDirection::Tie
        );
        let s_keep2 = snap(
            ego,
            vec![
                VehicleState::new(30.0, 3.5, 0.0, 8.0),
                VehicleState::new(40.0, 7.0, 0.0, 8.0),
            ],
        );
        assert_eq!(
            free_direction(&impact_of(&s_keep2), &ego, &coeffs, &map, &idm),
            FreeDirection::Left
        );
        // center with both sides saturated: tie
        let ego_c = VehicleState::new(0.0, 3.5, 0.0, 10.0);
        let s_c = snap(ego_c, vec![]);
        assert_eq!(
            free_direction(&impact_of(&s_c), &ego_c, &coeffs, &map, &idm),
            FreeDirection::Tie
        );
        // left blocked close, right open
        let s_lr = snap(
            ego_c,
            vec![VehicleState::new(15.0, 0.0, 0.0, 8.0)],
        );
        assert_eq!(
            free_direction(&impact_of(&s_lr), &ego_c, &coeffs, &map, &idm),
            FreeDirection::Right
        );
    }

    fn constant_transition(m: usize, reward: f64, done: bool) -> Transition {
        Transition {
            state: PolicyState {
                features: vec![0.5; 2 * m],
            },
            action: 0.2,
            reward,
            next_state: PolicyState {
                features: vec![0.4; 2 * m],
            },
            done,
        }
    }

    fn constant_output_net(input: usize, bias: f64) -> Mlp {
        let spec = MlpSpec::new(vec![input, 1], Head::Identity);
        let mut net = init_params(&spec, &mut rng(0)).zeros_like();
        net.layers[0].b[0] = bias;
        net
    }

    #[test]
    fn critic_target_terminal_and_min_rule() {
        let m = 1;
        let policy = init_params(&MlpSpec::new(vec![2 * m, 2], Head::Gaussian), &mut rng(1)).zeros_like();
        let q1 = constant_output_net(2 * m + 1, 0.5);
        let q2 = constant_output_net(2 * m + 1, 0.7);
        let t1 = constant_output_net(2 * m + 1, 2.0);
        let t2 = constant_output_net(2 * m + 1, 3.0);

        // terminal: y = r
        let done = constant_transition(m, 1.5, true);
        let batch = vec![&done];
        let out = critic_loss(&batch, &q1, &q2, &t1, &t2, &policy, 0.0, 0.99, &[0.3]).unwrap();
        assert_relative_eq!(out.targets[0], 1.5);
        assert_relative_eq!(out.loss1, 0.5 * (0.5 - 1.5f64) * (0.5 - 1.5f64));

        // bootstrapped: min(2, 3) = 2 feeds the target (alpha = 0)
        let live = constant_transition(m, 1.0, false);
        let batch = vec![&live];
        let out = critic_loss(&batch, &q1, &q2, &t1, &t2, &policy, 0.0, 0.99, &[0.0]).unwrap();
        assert_relative_eq!(out.targets[0], 1.0 + 0.99 * 2.0);
        // the min rule keeps the target at or below both bootstraps
        assert!(out.targets[0] <= 1.0 + 0.99 * 2.0 + 1e-12);
        assert!(out.targets[0] <= 1.0 + 0.99 * 3.0 + 1e-12);
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let m = 1;
        let mut r = rng(3);
        for _case in 0..4 {
            let policy = init_params(&MlpSpec::new(vec![2 * m, 6, 2], Head::Gaussian), &mut r);
            let mut q1 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let q2 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let t1 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let t2 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let trans: Vec<Transition> = (0..4)
                .map(|i| {
                    let mut t = constant_transition(m, r.random_range(-1.0..1.0), i == 0);
                    t.state.features = (0..2 * m).map(|_| r.random_range(0.0..1.0)).collect();
                    t.next_state.features = (0..2 * m).map(|_| r.random_range(0.0..1.0)).collect();
                    t.action = r.random_range(-0.9..0.9);
                    t
                })
                .collect();
            let batch: Vec<&Transition> = trans.iter().collect();
            let noise: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();

            let out = critic_loss(&batch, &q1, &q2, &t1, &t2, &policy, 0.3, 0.99, &noise).unwrap();
            let analytic = out.grads1.to_flat();
            let mut flat = q1.to_flat();
            let h = 1e-5;
            for i in (0..flat.len()).step_by(7) {
                let orig = flat[i];
                flat[i] = orig + h;
                q1.set_from_flat(&flat);
                let lp = critic_loss(&batch, &q1, &q2, &t1, &t2, &policy, 0.3, 0.99, &noise)
                    .unwrap()
                    .loss1;
                flat[i] = orig - h;
                q1.set_from_flat(&flat);
                let lm = critic_loss(&batch, &q1, &q2, &t1, &t2, &policy, 0.3, 0.99, &noise)
                    .unwrap()
                    .loss1;
                flat[i] = orig;
                q1.set_from_flat(&flat);
                let fd = (lp - lm) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1.0);
                assert!(
                    (analytic[i] - fd).abs() / denom < 1e-4,
                    "param {i}: {} vs {}",
                    analytic[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn flat_critics_and_zero_alpha_give_zero_policy_gradient() {
        let m = 1;
        let policy = init_params(&MlpSpec::new(vec![2 * m, 4, 2], Head::Gaussian), &mut rng(2));
        let q1 = constant_output_net(2 * m + 1, 1.0);
        let q2 = constant_output_net(2 * m + 1, 2.0);
        let t = constant_transition(m, 0.0, false);
        let batch = vec![&t];
        let out = policy_loss(&batch, &q1, &q2, &policy, 0.0, &[0.4]).unwrap();
        assert!(out.grads.to_flat().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn policy_gradient_pushes_mean_toward_critic_peak() {
        let m = 1;
        // critic Q(s, e) = -|e - 0.3| built from two rectifier units
        let spec = MlpSpec::new(vec![2 * m + 1, 2, 1], Head::Identity);
        let mut q = init_params(&spec, &mut rng(0)).zeros_like();
        q.layers[0].w[[0, 2 * m]] = 1.0;
        q.layers[0].b[0] = -0.3;
        q.layers[0].w[[1, 2 * m]] = -1.0;
        q.layers[0].b[1] = 0.3;
        q.layers[1].w[[0, 0]] = -1.0;
        q.layers[1].w[[0, 1]] = -1.0;

        // policy currently outputs tanh(mu) = 0 < 0.3, tiny sigma
        let pspec = MlpSpec::new(vec![2 * m, 2], Head::Gaussian);
        let mut policy = init_params(&pspec, &mut rng(0)).zeros_like();
        policy.layers[0].b[1] = -5.0; // log sigma
        let t = constant_transition(m, 0.0, false);
        let batch = vec![&t];
        let out = policy_loss(&batch, &q, &q, &policy, 0.0, &[0.0]).unwrap();
        // gradient on the mean bias must be negative so a descent step
        // raises mu toward 0.3
        let mu_bias_grad = out.grads.layers[0].b[0];
        assert!(mu_bias_grad < 0.0, "grad {mu_bias_grad}");
    }

    #[test]
    fn policy_gradients_match_finite_differences() {
        let m = 1;
        let mut r = rng(7);
        for _case in 0..4 {
            let mut policy = init_params(&MlpSpec::new(vec![2 * m, 6, 2], Head::Gaussian), &mut r);
            let q1 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let q2 = init_params(&MlpSpec::new(vec![2 * m + 1, 6, 1], Head::Identity), &mut r);
            let trans: Vec<Transition> = (0..4)
                .map(|_| {
                    let mut t = constant_transition(m, 0.0, false);
                    t.state.features = (0..2 * m).map(|_| r.random_range(0.0..1.0)).collect();
                    t
                })
                .collect();
            let batch: Vec<&Transition> = trans.iter().collect();
            let noise: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();
            let alpha = 0.3;

            let out = policy_loss(&batch, &q1, &q2, &policy, alpha, &noise).unwrap();
            let analytic = out.grads.to_flat();
            let mut flat = policy.to_flat();
            let h = 1e-5;
            for i in (0..flat.len()).step_by(5) {
                let orig = flat[i];
                flat[i] = orig + h;
                policy.set_from_flat(&flat);
                let lp = policy_loss(&batch, &q1, &q2, &policy, alpha, &noise).unwrap().loss;
                flat[i] = orig - h;
                policy.set_from_flat(&flat);
                let lm = policy_loss(&batch, &q1, &q2, &policy, alpha, &noise).unwrap().loss;
                flat[i] = orig;
                policy.set_from_flat(&flat);
                let fd = (lp - lm) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1.0);
                assert!(
                    (analytic[i] - fd).abs() / denom < 1e-4,
                    "param {i}: {} vs {}",
                    analytic[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn temperature_moves_with_entropy_mismatch() {
        // satisfied constraint: no movement direction preference
        let mut log_alpha = 0.0;
        let mut opt = ScalarAdam::new(1e-2);
        temperature_update(1.0, &mut log_alpha, &mut opt, -1.0);
        assert_eq!(log_alpha, 0.0);

        // too deterministic (high log prob): alpha grows
        let mut log_alpha = 0.0;
        let mut opt = ScalarAdam::new(1e-2);
        temperature_update(2.0, &mut log_alpha, &mut opt, -1.0);
        assert!(log_alpha > 0.0);

        // too random: alpha shrinks
        let mut log_alpha = 0.0;
        let mut opt = ScalarAdam::new(1e-2);
        temperature_update(-5.0, &mut log_alpha, &mut opt, -1.0);
        assert!(log_alpha < 0.0);
    }

    #[test]
    fn replay_sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            let mut t = constant_transition(1, i as f64, false);
            t.action = i as f64 / 200.0;
            buf.push(t);
        }
        let mut counts = vec![0usize; 100];
        let mut r = rng(12);
        let draws = 100_000;
        for _ in 0..draws / 100 {
            for t in buf.sample(100, &mut r) {
                counts[(t.action * 200.0).round() as usize] += 1;
            }
        }
        let expected = draws as f64 / 100.0;
        let sigma = (draws as f64 * 0.01 * 0.99).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 5.0 * sigma,
                "item {i}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(constant_transition(1, i as f64, false));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.data.iter().map(|t| t.reward).collect();
        assert!(rewards.contains(&4.0));
        assert!(!rewards.contains(&0.0));
    }

    #[test]
    fn soft_update_blends_targets() {
        let spec = MlpSpec::new(vec![2, 3, 1], Head::Identity);
        let source = init_params(&spec, &mut rng(1));
        let mut target = init_params(&spec, &mut rng(2));
        let before = target.to_flat();
        soft_update(&mut target, &source, 0.1);
        let after = target.to_flat();
        for ((b, a), s) in before.iter().zip(&after).zip(source.to_flat()) {
            assert_relative_eq!(*a, 0.1 * s + 0.9 * b, epsilon = 1e-12);
        }
    }

    fn smoke_config() -> TrainConfig {
        let sim = SimConfig {
            traffic_count: 4,
            episode_limit: 20.0,
            ..SimConfig::default()
        };
        let mut c = TrainConfig::from_sim(sim);
        c.learner.total_steps = 120;
        c.learner.warmup_steps = 20;
        c.learner.batch_size = 16;
        c.learner.hidden_sizes = vec![16];
        c
    }

    #[test]
    fn zero_steps_trains_nothing() {
        let mut c = smoke_config();
        c.learner.total_steps = 0;
        let out = train(&c, 1).unwrap();
        assert!(out.rows.is_empty());
        assert!(out.episode_returns.is_empty());
    }

    #[test]
    fn seeded_smoke_runs_are_bit_identical_and_finite() {
        let c = smoke_config();
        let a = train(&c, 7).unwrap();
        let b = train(&c, 7).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.epsilon.to_bits(), rb.epsilon.to_bits());
            assert_eq!(ra.critic_loss.to_bits(), rb.critic_loss.to_bits());
            assert_eq!(ra.policy_loss.to_bits(), rb.policy_loss.to_bits());
            assert_eq!(ra.episode_return.to_bits(), rb.episode_return.to_bits());
            assert!(ra.critic_loss.is_finite());
            assert!(ra.policy_loss.is_finite());
        }
        assert_eq!(a.collisions, 0);
        // reward decomposition holds on every row
        for r in &a.rows {
            assert!(r.r_s.is_finite() && r.r_n.is_finite() && r.r_dt.is_finite());
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_behaviour() {
        let c = smoke_config();
        let out = train(&c, 3).unwrap();
        let text = out.agent.save_checkpoint();
        let loaded = SacAgent::load_checkpoint(&text, c.learner.clone()).unwrap();
        let state = PolicyState {
            features: vec![0.3, 0.5, 0.9, 0.5, 0.1, 0.5],
        };
        let a = out.agent.act_deterministic(&state).value;
        let b = loaded.act_deterministic(&state).value;
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(out.agent.log_alpha.to_bits(), loaded.log_alpha.to_bits());
    }
}
