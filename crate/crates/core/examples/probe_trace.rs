// temporary: trace one episode per tendency source
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tendrive_core::eval::TendencyMpcPolicy;
use tendrive_core::idm::{select_impact_vehicles, IdmParams, MapInfo};
use tendrive_core::mpc::MpcConfig;
use tendrive_core::sac::{free_direction, FreeDirection, LearnerConfig, RewardCoeffs, SacAgent};
use tendrive_core::scenario::Scenario;
use tendrive_core::sim::{Policy, World};

fn main() {
    let scenario = Scenario::default();
    let sim = scenario.to_sim_config();
    let text = std::fs::read_to_string("/tmp/full_train_s1/checkpoint.txt").unwrap();
    let agent = SacAgent::load_checkpoint(&text, LearnerConfig::default()).unwrap();
    let map = MapInfo::from(&sim);
    let idm = IdmParams::default();
    let coeffs = RewardCoeffs::default();

    for mode in ["trained", "fixed0", "heuristic"] {
        let mut policy = TendencyMpcPolicy::new(
            agent.policy.clone(),
            &sim,
            MpcConfig::from_sim(&sim),
            idm.clone(),
            coeffs.clone(),
        );
        let mut rng = ChaCha12Rng::seed_from_u64(4242);
        let mut world = World::new(sim.clone(), &mut rng, &[], vec![]).unwrap();
        policy.begin_episode();
        let mut lane_changes = 0usize;
        let mut last_lane = map.lane_of(world.ego.lat);
        let mut speed_sum = 0.0;
        let mut steps = 0;
        let mut trace = String::new();
        while world.steps < sim.step_limit() && world.ego.lon < sim.route_length {
            let snap = world.snapshot();
            match mode {
                "fixed0" => policy.fixed_epsilon = Some(0.0),
                "heuristic" => {
                    let impact = select_impact_vehicles(&snap, &map);
                    policy.fixed_epsilon = Some(match free_direction(&impact, &snap.ego, &coeffs, &map, &idm) {
                        FreeDirection::Left => -1.0,
                        FreeDirection::Right => 1.0,
                        FreeDirection::Tie => 0.0,
                    });
                }
                _ => policy.fixed_epsilon = None,
            }
            let d = policy.act(&snap).unwrap();
            if world.step(d.action).unwrap() {
                trace.push_str(" COLLIDED");
                break;
            }
            let lane = map.lane_of(world.ego.lat);
            if lane != last_lane {
                lane_changes += 1;
                last_lane = lane;
            }
            speed_sum += world.ego.speed;
            steps += 1;
            if steps % 30 == 0 {
                trace.push_str(&format!(
                    " [{:.0}s l{} v{:.1} e{:+.1}]",
                    world.time, lane, world.ego.speed, d.epsilon.unwrap_or(9.9)
                ));
            }
        }
        println!(
            "{mode:9} steps {steps:4} avg_v {:.2} lane_changes {lane_changes}\n  {trace}",
            speed_sum / steps as f64
        );
    }
}
