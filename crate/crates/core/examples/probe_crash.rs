// temporary: find and dissect collided heuristic episodes
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tendrive_core::eval::TendencyMpcPolicy;
use tendrive_core::idm::{select_impact_vehicles, IdmParams, MapInfo};
use tendrive_core::mpc::MpcConfig;
use tendrive_core::sac::{free_direction, FreeDirection, LearnerConfig, RewardCoeffs, SacAgent};
use tendrive_core::scenario::Scenario;
use tendrive_core::sim::{check_collision, Policy, World};

fn main() {
    let scenario = Scenario::default();
    let sim = scenario.to_sim_config();
    let text = std::fs::read_to_string("/tmp/full_train_s1/checkpoint.txt").unwrap();
    let agent = SacAgent::load_checkpoint(&text, LearnerConfig::default()).unwrap();
    let map = MapInfo::from(&sim);
    let idm = IdmParams::default();
    let coeffs = RewardCoeffs::default();

    let mut master = ChaCha12Rng::seed_from_u64(777);
    for run in 0..30 {
        let env_seed: u64 = master.random();
        let mut rng = ChaCha12Rng::seed_from_u64(env_seed);
        let mut world = World::new(sim.clone(), &mut rng, &[], vec![]).unwrap();
        let mut policy = TendencyMpcPolicy::new(
            agent.policy.clone(),
            &sim,
            MpcConfig::from_sim(&sim),
            idm.clone(),
            coeffs.clone(),
        );
        policy.begin_episode();
        let mut history: Vec<String> = Vec::new();
        while world.steps < sim.step_limit() && world.ego.lon < sim.route_length {
            let snap = world.snapshot();
            let impact = select_impact_vehicles(&snap, &map);
            policy.fixed_epsilon = Some(match free_direction(&impact, &snap.ego, &coeffs, &map, &idm) {
                FreeDirection::Left => -1.0,
                FreeDirection::Right => 1.0,
                FreeDirection::Tie => 0.0,
            });
            let d = policy.act(&snap).unwrap();
            let diag = d.diag.unwrap();
            history.push(format!(
                "t {:5.1} ego ({:7.2},{:5.2},{:6.3},{:5.2}) eps {:+.0} act ({:5.2},{:+.3}) feas {} fb {}",
                world.time, snap.ego.lon, snap.ego.lat, snap.ego.heading, snap.ego.speed,
                policy.fixed_epsilon.unwrap(), d.action.speed, d.action.steer, diag.feasible, diag.fallback_used
            ));
            if world.step(d.action).unwrap() {
                println!("=== run {run} COLLIDED at t {:.1}", world.time);
                for line in history.iter().rev().take(14).rev() {
                    println!("  {line}");
                }
                for (i, v) in world.traffic.iter().enumerate() {
                    if check_collision(&world.ego, v, sim.vehicle_length, sim.vehicle_width) {
                        println!("  hit veh[{i}] at lon {:.2} lat {:.2} v {:.2} (ego lon {:.2} lat {:.2} hd {:.3})",
                            v.lon, v.lat, v.speed, world.ego.lon, world.ego.lat, world.ego.heading);
                    }
                }
                break;
            }
        }
    }
}
