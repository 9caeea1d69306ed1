// temporary: inspect the trained head on hand-built states
use tendrive_core::sac::{LearnerConfig, SacAgent};

fn main() {
    let text = std::fs::read_to_string("/tmp/full_train_s1/checkpoint.txt").unwrap();
    let agent = SacAgent::load_checkpoint(&text, LearnerConfig::default()).unwrap();
    let cases = [
        ("ego c, left free, right blocked ", vec![1.0, 0.0, 0.2, 0.5, 0.15, 1.0]),
        ("ego c, right free, left blocked ", vec![0.15, 0.0, 0.2, 0.5, 1.0, 1.0]),
        ("ego c, lead slow, both sides free", vec![1.0, 0.0, 0.1, 0.5, 1.0, 1.0]),
        ("ego c, all free                  ", vec![1.0, 0.0, 1.0, 0.5, 1.0, 1.0]),
        ("ego left, right slow             ", vec![1.0, 0.5, 0.2, 1.0, 1.0, 1.0]),
        ("ego right, left slow             ", vec![1.0, 0.0, 0.2, 0.0, 1.0, 0.5]),
    ];
    for (name, f) in cases {
        let (out, _) = agent.policy.forward(&f).unwrap();
        println!("{name} mu {:7.3} tanh(mu) {:6.3} logstd {:6.2}", out[0], out[0].tanh(), out[1]);
    }
}
