//! DQN on a toy corridor: a single weed six cells east of the start on a
//! 7x7 field with a one-cell view. The shortest route is six East moves.

use uav_search::dqn::{greedy_action, training_loop, TrainConfig};
use uav_search::env::{Action, Corner, Env, EnvConfig, Observation};
use uav_search::field::{Field, FieldConfig, Weed};
use uav_search::nn::{QNetwork, QNetworkSpec};
use uav_search::rng::{streams, RngStream};
use uav_search::sensing::{generate_prior_map, DetectionModel, PriorModel};
use uav_search::Result;

fn corridor_cfg() -> EnvConfig {
    EnvConfig {
        field: FieldConfig { m: 7, ..FieldConfig::default() },
        detection: DetectionModel::PERFECT,
        prior: PriorModel::perfect(7),
        fov: 1,
        g_global: 1,
        b_init: 30.0,
        b_step: 1.0,
        ..EnvConfig::default()
    }
}

fn corridor(cfg: &EnvConfig, seed: u64) -> Result<(Env, Observation)> {
    let field = Field { m: 7, weeds: vec![Weed { x: 6.5, y: 0.5, cluster: 0 }] };
    let prior = generate_prior_map(&field, &cfg.prior, &mut RngStream::new(seed, streams::PRIOR))?;
    Env::from_parts(cfg, field, prior, Corner::TopLeft, RngStream::new(seed, streams::DETECTION))
}

#[test]
fn learns_shortest_path_to_the_weed() {
    let cfg = corridor_cfg();
    let spec = QNetworkSpec::build([3, 1, 1], [3, 13, 13], &[], &[(8, 3)], &[32, 32], cfg.n_actions());
    let net = QNetwork::new(spec).unwrap();
    let train = TrainConfig {
        alpha: 1e-3,
        n_batch: 32,
        n_steps: 20_000,
        n_buffer: 5_000,
        n_val: 1,
        val_interval: 500,
        n_envs: 2,
        train_freq: 1,
        ..TrainConfig::default()
    };
    let factory = |s: u64| corridor(&cfg, s);
    let out = training_loop(&net, &factory, &train, 3, &mut |_| {}).unwrap();

    let (mut env, mut obs) = corridor(&cfg, 0).unwrap();
    assert_eq!(env.state().drone, (0, 0));
    let mut moves = Vec::new();
    while !env.state().done() && moves.len() < 30 {
        let q = net.forward(&out.best, &obs.net_input()).unwrap();
        let a = Action::from_index(greedy_action(&q)).unwrap();
        moves.push(a);
        obs = env.step(a).unwrap().obs;
    }
    assert_eq!(env.state().found_fraction(), 1.0, "greedy path {moves:?}");
    assert_eq!(moves, vec![Action::East; 6]);
}
