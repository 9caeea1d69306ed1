// temporary: dissect eval performance of tendency sources
use tendrive_core::eval::{eval_policy, TendencyMpcPolicy};
use tendrive_core::idm::{select_impact_vehicles, IdmParams, MapInfo};
use tendrive_core::mpc::MpcConfig;
use tendrive_core::nn::Mlp;
use tendrive_core::sac::{build_policy_state, free_direction, FreeDirection, LearnerConfig, RewardCoeffs, SacAgent};
use tendrive_core::scenario::Scenario;
use tendrive_core::sim::{Decision, Policy, SolverDiag, TrafficSnapshot};

struct Heuristic {
    inner: TendencyMpcPolicy,
}
impl Policy for Heuristic {
    fn begin_episode(&mut self) {
        self.inner.begin_episode();
    }
    fn act(&mut self, s: &TrafficSnapshot) -> Result<Decision, String> {
        let impact = select_impact_vehicles(s, &self.inner.map);
        let eps = match free_direction(&impact, &s.ego, &self.inner.coeffs, &self.inner.map, &self.inner.idm) {
            FreeDirection::Left => -1.0,
            FreeDirection::Right => 1.0,
            FreeDirection::Tie => 0.0,
        };
        self.inner.fixed_epsilon = Some(eps);
        self.inner.act(s)
    }
}

fn main() {
    let scenario = Scenario::default();
    let sim = scenario.to_sim_config();
    let text = std::fs::read_to_string("/tmp/full_train_s1/checkpoint.txt").unwrap();
    let agent = SacAgent::load_checkpoint(&text, LearnerConfig::default()).unwrap();
    let net: Mlp = agent.policy.clone();

    let build = |fixed: Option<f64>, net: Option<Mlp>| {
        let mut p = TendencyMpcPolicy::new(
            net.unwrap_or_else(|| agent.policy.clone()),
            &sim,
            MpcConfig::from_sim(&sim),
            IdmParams::default(),
            RewardCoeffs::default(),
        );
        p.fixed_epsilon = fixed;
        p
    };

    for (name, fixed) in [("trained", None), ("eps=0", Some(0.0)), ("eps=-1", Some(-1.0))] {
        let mut make = || Box::new(build(fixed, Some(net.clone()))) as Box<dyn Policy>;
        let (s, _) = eval_policy(&mut make, &scenario, 30, 777).unwrap();
        println!(
            "{name:8} collision {:.3} completion {:.3} speed {:.2} +- {:.2}",
            s.collision_rate, s.completion_rate, s.avg_speed_mean, s.avg_speed_std
        );
    }
    let mut make = || {
        Box::new(Heuristic {
            inner: build(None, Some(net.clone())),
        }) as Box<dyn Policy>
    };
    let (s, _) = eval_policy(&mut make, &scenario, 30, 777).unwrap();
    println!(
        "heuristic collision {:.3} completion {:.3} speed {:.2} +- {:.2}",
        s.collision_rate, s.completion_rate, s.avg_speed_mean, s.avg_speed_std
    );
}
