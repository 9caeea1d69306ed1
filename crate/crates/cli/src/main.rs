//! `tendrive` command-line front end.
//!
//! Subcommands cover the full experiment surface: training the tendency
//! network inside the safety-constrained planner, evaluating frozen
//! checkpoints, running the two comparison baselines, and generating the
//! canonical static / dynamic scenario files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tendrive_core::baseline::{train_baseline_rl, BaselineMpcPolicy, BaselineRlConfig, BaselineRlPolicy};
use tendrive_core::eval::{
    eval_policy, learning_curve_csv, train_metrics, trajectory_csv, training_log_csv, EvalSummary,
    TendencyMpcPolicy,
};
use tendrive_core::mpc::MpcConfig;
use tendrive_core::sac::{train, LearnerConfig, RewardCoeffs, SacAgent, TrainConfig};
use tendrive_core::scenario::{dynamic_scenario, static_scenario, Scenario};
use tendrive_core::sim::Policy;

#[derive(Parser)]
#[command(name = "tendrive", version, about = "Tendency-guided safe highway driving stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the driving-tendency network inside the constrained planner.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Environment steps.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
    },
    /// Evaluate a trained checkpoint over seeded episodes.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        runs: usize,
    },
    /// Evaluate the fixed-middle-lane optimizer baseline.
    BaselineMpc {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 30)]
        runs: usize,
    },
    /// Train and evaluate the unconstrained RL comparison agent.
    BaselineRl {
        #[command(flatten)]
        common: CommonArgs,
        /// Training budget in environment steps.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 30)]
        runs: usize,
    },
    /// Write the static-obstacle scenario file.
    ScenarioStatic {
        #[command(flatten)]
        common: CommonArgs,
        /// Also wall off the route end so the only safe outcome is a stop.
        #[arg(long)]
        blocked: bool,
    },
    /// Write the dynamic traffic-flow scenario file with the scripted cut-in.
    ScenarioDynamic {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario> {
    let mut scenario = match &common.config {
        Some(path) => Scenario::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Scenario::default(),
    };
    if common.config.is_none() {
        scenario.seed = common.seed;
    }
    Ok(scenario)
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(common: &CommonArgs, steps: usize) -> Result<()> {
    let scenario = load_scenario(common)?;
    ensure_out(&common.out)?;
    let mut config = TrainConfig::from_sim(scenario.to_sim_config());
    config.idm = scenario.idm.clone();
    config.learner.total_steps = steps;

    let out = train(&config, common.seed).map_err(|e| anyhow::anyhow!("training aborted: {e}"))?;
    eprintln!(
        "trained {} steps, {} episodes, {} collisions, {} fallbacks",
        steps,
        out.episode_returns.len(),
        out.collisions,
        out.fallbacks
    );

    write(&common.out, "training_log.csv", &training_log_csv(&out.rows))?;
    write(
        &common.out,
        "learning_curve.csv",
        &learning_curve_csv(&out.episode_returns, 20),
    )?;
    write(&common.out, "checkpoint.txt", &out.agent.save_checkpoint())?;

    let metrics = train_metrics(&out, steps);
    write(&common.out, "metrics.json", &serde_json::to_string_pretty(&metrics)?)?;
    Ok(())
}

fn write_eval_outputs(
    dir: &Path,
    summary: &EvalSummary,
    episodes: &[tendrive_core::sim::EpisodeResult],
) -> Result<()> {
    write(dir, "metrics.json", &serde_json::to_string_pretty(summary)?)?;
    if let Some(first) = episodes.first() {
        write(dir, "trajectory.csv", &trajectory_csv(first))?;
    }
    Ok(())
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path, runs: usize) -> Result<()> {
    let scenario = load_scenario(common)?;
    ensure_out(&common.out)?;
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("reading {}", checkpoint.display()))?;
    let agent = SacAgent::load_checkpoint(&text, LearnerConfig::default())
        .map_err(|e| anyhow::anyhow!("loading checkpoint: {e}"))?;
    if agent.lane_count != scenario.lane_count {
        bail!(
            "checkpoint was trained for {} lanes, scenario has {}",
            agent.lane_count,
            scenario.lane_count
        );
    }
    let sim = scenario.to_sim_config();
    let idm = scenario.idm.clone();
    let policy_net = agent.policy.clone();
    let mut make = || {
        Box::new(TendencyMpcPolicy::new(
            policy_net.clone(),
            &sim,
            MpcConfig::from_sim(&sim),
            idm.clone(),
            RewardCoeffs::default(),
        )) as Box<dyn Policy>
    };
    let (summary, episodes) = eval_policy(&mut make, &scenario, runs, common.seed)?;
    eprintln!(
        "eval: collision {:.3} completion {:.3} speed {:.2} +- {:.2}",
        summary.collision_rate, summary.completion_rate, summary.avg_speed_mean, summary.avg_speed_std
    );
    write_eval_outputs(&common.out, &summary, &episodes)
}

fn cmd_baseline_mpc(common: &CommonArgs, runs: usize) -> Result<()> {
    let scenario = load_scenario(common)?;
    ensure_out(&common.out)?;
    let sim = scenario.to_sim_config();
    let idm = scenario.idm.clone();
    let mut make = || {
        Box::new(BaselineMpcPolicy::new(&sim, MpcConfig::from_sim(&sim), idm.clone())) as Box<dyn Policy>
    };
    let (summary, episodes) = eval_policy(&mut make, &scenario, runs, common.seed)?;
    eprintln!(
        "baseline-mpc: collision {:.3} completion {:.3} speed {:.2} +- {:.2}",
        summary.collision_rate, summary.completion_rate, summary.avg_speed_mean, summary.avg_speed_std
    );
    write_eval_outputs(&common.out, &summary, &episodes)
}

fn cmd_baseline_rl(common: &CommonArgs, steps: usize, runs: usize) -> Result<()> {
    let scenario = load_scenario(common)?;
    ensure_out(&common.out)?;
    let sim = scenario.to_sim_config();
    let idm = scenario.idm.clone();
    let coeffs = RewardCoeffs::default();
    let rl_cfg = BaselineRlConfig::default();
    let learner = LearnerConfig {
        total_steps: steps,
        ..LearnerConfig::default()
    };
    let trained = train_baseline_rl(&sim, &idm, &coeffs, &rl_cfg, learner, common.seed)
        .map_err(|e| anyhow::anyhow!("baseline training failed: {e}"))?;
    eprintln!(
        "baseline-rl trained {} steps, {} episodes, {} training collisions",
        trained.steps,
        trained.episode_returns.len(),
        trained.collisions
    );
    write(
        &common.out,
        "learning_curve.csv",
        &learning_curve_csv(&trained.episode_returns, 20),
    )?;

    let agent = trained.agent;
    let mut make = || {
        Box::new(BaselineRlPolicy::new(
            agent.clone(),
            &sim,
            rl_cfg.clone(),
            idm.clone(),
            coeffs.clone(),
        )) as Box<dyn Policy>
    };
    let (summary, episodes) = eval_policy(&mut make, &scenario, runs, common.seed)?;
    eprintln!(
        "baseline-rl: collision {:.3} completion {:.3} speed {:.2} +- {:.2}",
        summary.collision_rate, summary.completion_rate, summary.avg_speed_mean, summary.avg_speed_std
    );
    write_eval_outputs(&common.out, &summary, &episodes)
}

fn cmd_scenario(common: &CommonArgs, scenario: Scenario, name: &str) -> Result<()> {
    ensure_out(&common.out)?;
    let text = scenario
        .to_toml()
        .map_err(|e| anyhow::anyhow!("serializing scenario: {e}"))?;
    write(&common.out, name, &text)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, steps } => cmd_train(common, *steps),
        Command::Eval {
            common,
            checkpoint,
            runs,
        } => cmd_eval(common, checkpoint, *runs),
        Command::BaselineMpc { common, runs } => cmd_baseline_mpc(common, *runs),
        Command::BaselineRl { common, steps, runs } => cmd_baseline_rl(common, *steps, *runs),
        Command::ScenarioStatic { common, blocked } => cmd_scenario(
            common,
            static_scenario(*blocked, common.seed),
            "scenario.toml",
        ),
        Command::ScenarioDynamic { common } => {
            cmd_scenario(common, dynamic_scenario(common.seed), "scenario.toml")
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
