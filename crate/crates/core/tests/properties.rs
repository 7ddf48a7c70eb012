use proptest::prelude::*;

use uav_search::config::parse_config;
use uav_search::dqn::{greedy_action, soft_update, softmax_probs, ReplayBuffer, Transition};
use uav_search::env::{Action, Env, EnvConfig, Observation, StoppingCriterion};
use uav_search::grid::{avg_pool, nearest_upsample, GridMap};
use uav_search::nn::NetworkParams;
use uav_search::rng::RngStream;
use uav_search::sensing::DetectionModel;
use uav_search::stats::{spearman, welch_t_test};

fn desk_env() -> EnvConfig {
    parse_config(&["desk-scale".into()], None, &[]).unwrap().env
}

fn empty_obs() -> Observation {
    Observation { local: vec![], global: vec![], budget: 1.0 }
}

fn sample(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

fn brute_global(env: &Env) -> Vec<f32> {
    let cfg = env.config();
    let m = cfg.m() as isize;
    let k = cfg.g_global;
    let side = 2 * m - 1;
    let g = cfg.global_size();
    let st = env.state();
    let (dr, dc) = (st.drone.0 as isize, st.drone.1 as isize);
    let value = |layer: usize, cr: isize, cc: isize| -> f32 {
        let (r, c) = (cr - (m - 1) + dr, cc - (m - 1) + dc);
        let inside = r >= 0 && c >= 0 && r < m && c < m;
        match (layer, inside) {
            (0, true) => 0.0,
            (0, false) => 1.0,
            (_, false) => 0.0,
            (1, true) => st.detected_memory.get(r as usize, c as usize),
            (_, true) => st.prior_map.get(r as usize, c as usize),
        }
    };
    let mut out = Vec::new();
    for layer in 0..3 {
        for oi in 0..g {
            for oj in 0..g {
                let mut acc = 0.0f64;
                for di in 0..k {
                    for dj in 0..k {
                        let cr = ((oi * k + di) as isize).min(side - 1);
                        let cc = ((oj * k + dj) as isize).min(side - 1);
                        acc += value(layer, cr, cc) as f64;
                    }
                }
                out.push((acc / (k * k) as f64) as f32);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn welch_is_antisymmetric(a in sample(2..30), b in sample(2..30)) {
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        if !ab.degenerate {
            prop_assert!((ab.t + ba.t).abs() <= 1e-9 * (1.0 + ab.t.abs()));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }

    #[test]
    fn welch_is_scale_and_shift_invariant(a in sample(3..20), b in sample(3..20), s in 0.01f64..100.0, c in -1e3f64..1e3) {
        let base = welch_t_test(&a, &b).unwrap();
        let tr = |xs: &[f64]| xs.iter().map(|x| s * x + c).collect::<Vec<_>>();
        let moved = welch_t_test(&tr(&a), &tr(&b)).unwrap();
        if !base.degenerate && base.t.abs() < 1e6 {
            prop_assert!((base.t - moved.t).abs() <= 1e-6 * (1.0 + base.t.abs()));
            prop_assert!((base.p - moved.p).abs() <= 1e-6);
        }
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in sample(3..40), ys in sample(3..40)) {
        let n = xs.len().min(ys.len());
        let (x, y) = (&xs[..n], &ys[..n]);
        if let Ok(r) = spearman(x, y) {
            let ex: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let r2 = spearman(&ex, y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn softmax_is_a_distribution(q in prop::collection::vec(-1e3f64..1e3, 1..8), lambda in 0.01f64..10.0) {
        let p = softmax_probs(&q, lambda);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..q.len() {
            for j in 0..q.len() {
                if q[i] > q[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn greedy_action_survives_monotone_transform(q in prop::collection::vec(-1e3f64..1e3, 1..8), a in 0.1f64..10.0, b in -100.0f64..100.0) {
        let moved: Vec<f64> = q.iter().map(|v| a * v + b).collect();
        let i = greedy_action(&q);
        prop_assert_eq!(i, greedy_action(&moved));
        prop_assert!(q.iter().all(|&v| v <= q[i]));
        prop_assert!(q[..i].iter().all(|&v| v < q[i]));
    }

    #[test]
    fn soft_update_contracts(t in prop::collection::vec(-5.0f64..5.0, 1..50), seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let mut rng = RngStream::new(seed, 0);
        let p: Vec<f64> = t.iter().map(|_| rng.next_normal(0.0, 3.0).unwrap()).collect();
        let policy = NetworkParams { values: p.clone() };
        let mut target = NetworkParams { values: t.clone() };
        soft_update(&mut target, &policy, tau).unwrap();
        for i in 0..t.len() {
            let before = (t[i] - p[i]).abs();
            let after = (target.values[i] - p[i]).abs();
            prop_assert!((after - (1.0 - tau) * before).abs() < 1e-9);
        }
    }

    #[test]
    fn replay_keeps_latest(cap in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for i in 0..pushes {
            buf.push(Transition {
                state: empty_obs(),
                action: Action::North,
                reward: i as f32,
                next_state: empty_obs(),
                terminal: false,
            });
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let kept: Vec<f32> = buf.iter().map(|t| t.reward).collect();
        let expect: Vec<f32> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f32).collect();
        prop_assert_eq!(kept, expect);
    }

    #[test]
    fn pooling_preserves_upsampled_maps(w in 1usize..8, h in 1usize..8, k in 1usize..4, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let vals: Vec<f32> = (0..w * h).map(|_| rng.next_uniform() as f32).collect();
        let map = GridMap::from_vec(w, h, vals).unwrap();
        let up = nearest_upsample(&map, w * k, h * k).unwrap();
        let back = avg_pool(&up, k).unwrap();
        for (a, b) in back.values().iter().zip(map.values()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rng_sampling_stays_in_range(seed in any::<u64>(), n in 1usize..200, k in 0usize..200) {
        let mut rng = RngStream::new(seed, 3);
        let k = k.min(n);
        let picks = rng.sample_distinct(n, k);
        prop_assert_eq!(picks.len(), k);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(picks.iter().all(|&i| i < n));
        prop_assert!(rng.next_below(n) < n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rewards_decompose_and_drone_stays_inside(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 1..160), moderate in any::<bool>()) {
        let mut cfg = desk_env();
        cfg.stopping = StoppingCriterion::Never;
        if moderate {
            cfg.detection = DetectionModel::level("moderate").unwrap();
        }
        let (mut env, _) = Env::reset(&cfg, seed).unwrap();
        let m = cfg.m();
        let mut total = 0.0;
        for a in actions {
            if env.state().done() {
                break;
            }
            let res = env.step(Action::MOVES[a]).unwrap();
            total += res.reward;
            let (r, c) = env.state().drone;
            prop_assert!(r < m && c < m);
            prop_assert!((0.0..=1.0).contains(&res.obs.budget));
        }
        let st = env.state();
        let rw = &cfg.rewards;
        let crashed = st.done_reason.is_some() as usize as f64;
        let expect = rw.step * st.steps as f64
            + rw.detection * (st.total_found - st.initial_found) as f64
            + rw.no_fly_zone * st.boundary_hits as f64
            + rw.crash * crashed;
        prop_assert!((total - expect).abs() < 1e-9, "{} vs {}", total, expect);
        prop_assert!(st.total_found <= st.n_weeds());
    }

    #[test]
    fn global_encoding_matches_brute_force(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 0..40), g in 1usize..5) {
        let mut cfg = desk_env();
        cfg.g_global = g;
        cfg.stopping = StoppingCriterion::Never;
        cfg.prior = uav_search::sensing::PriorModel::level("moderate").unwrap();
        cfg.prior.resolution = 4;
        let (mut env, _) = Env::reset(&cfg, seed).unwrap();
        for a in actions {
            env.step(Action::MOVES[a]).unwrap();
        }
        let fast = env.encode_global();
        let slow = brute_global(&env);
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
