mod common;

use boom_core::approximator::{clip_global_norm, ema_update_in_place, init_params, l2_norm, MlpSpec};
use boom_core::envs::{make_env, PendulumSwingup, PointMassReach};
use boom_core::planner::softmax_weights;
use boom_core::policy::{
    bootstrapped_policy_loss, soft_q_weights, AlignMetric, AlignmentConfig, PolicyInputs,
};
use boom_core::replay::{ReplayBuffer, Transition};
use boom_core::world_model::{BinSpec, BinTransform};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn transform() -> impl Strategy<Value = BinTransform> {
    prop_oneof![Just(BinTransform::Linear), Just(BinTransform::SymLog)]
}

fn exact_logits(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&x| if x > 0.0 { x.ln() } else { -1e9 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn two_hot_has_unit_mass_on_adjacent_bins(
        t in transform(),
        bins in 2usize..120,
        lo in -12.0f64..0.0,
        width in 0.5f64..20.0,
        v in -1e4f64..1e4,
    ) {
        let spec = BinSpec::new(bins, lo, lo + width, t).unwrap();
        let p = spec.two_hot_encode(v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let support: Vec<usize> = (0..bins).filter(|&k| p[k] > 0.0).collect();
        prop_assert!(!support.is_empty() && support.len() <= 2);
        if support.len() == 2 {
            prop_assert_eq!(support[1], support[0] + 1);
        }
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn two_hot_roundtrips_inside_range(t in transform(), frac in 0.0f64..=1.0) {
        let spec = BinSpec::new(101, -10.0, 10.0, t).unwrap();
        let v = t.inverse(spec.v_min + frac * (spec.v_max - spec.v_min));
        let back = spec.decode(&exact_logits(&spec.two_hot_encode(v)));
        prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0), "v {} back {}", v, back);
    }

    #[test]
    fn soft_q_weights_normalised_shift_invariant_equivariant(
        q in prop::collection::vec(-50.0f64..50.0, 1..40),
        shift in -1e3f64..1e3,
        tau in 0.05f64..20.0,
        rot in 0usize..40,
    ) {
        let w = soft_q_weights(&q, tau);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = q.iter().map(|x| x + shift).collect();
        for (a, b) in w.iter().zip(soft_q_weights(&shifted, tau)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let r = rot % q.len();
        let mut rq = q.clone();
        rq.rotate_left(r);
        let mut rw = w.clone();
        rw.rotate_left(r);
        for (a, b) in rw.iter().zip(soft_q_weights(&rq, tau)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn soft_q_weights_approach_argmax(q in prop::collection::vec(-5.0f64..5.0, 2..20)) {
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let second = q.iter().cloned().filter(|&x| x < best).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(best - second > 1e-3 && q.iter().filter(|&&x| x == best).count() == 1);
        let w = soft_q_weights(&q, 1e-6);
        for (x, wi) in q.iter().zip(&w) {
            let expect = if *x == best { 1.0 } else { 0.0 };
            prop_assert!((wi - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn elite_softmax_sums_to_one_and_ignores_shifts(
        g in prop::collection::vec(-100.0f64..100.0, 1..64),
        shift in -1e4f64..1e4,
        temp in 0.1f64..10.0,
    ) {
        let w = softmax_weights(&g, temp);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let s: Vec<f64> = g.iter().map(|x| x + shift).collect();
        for (a, b) in w.iter().zip(softmax_weights(&s, temp)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn clipped_norm_never_exceeds_limit(
        g in prop::collection::vec(-1e6f64..1e6, 0..50),
        clip in 1e-3f64..100.0,
    ) {
        let c = clip_global_norm(&g, clip);
        prop_assert!(l2_norm(&c) <= clip + 1e-12);
        if l2_norm(&g) <= clip {
            prop_assert_eq!(c, g);
        }
    }

    #[test]
    fn ema_contracts_by_one_minus_rate(rate in 0.0f64..=1.0, n in 1usize..8, seed in 0u64..1000) {
        let spec = MlpSpec::new(3, vec![4], 2);
        let online = init_params(&spec, seed);
        let mut target = init_params(&spec, seed + 1);
        let d0: Vec<f64> = target.values.iter().zip(&online.values).map(|(t, o)| t - o).collect();
        for _ in 0..n {
            ema_update_in_place(&mut target, &online, rate).unwrap();
        }
        let d: Vec<f64> = target.values.iter().zip(&online.values).map(|(t, o)| t - o).collect();
        let expect = l2_norm(&d0) * (1.0 - rate).powi(n as i32);
        prop_assert!((l2_norm(&d) - expect).abs() <= 1e-12 * (1.0 + l2_norm(&d0)));
    }

    #[test]
    fn buffer_respects_capacity_and_episode_boundaries(
        lengths in prop::collection::vec(1usize..30, 1..20),
        capacity in 5usize..200,
        horizon in 0usize..4,
        seed in 0u64..1000,
    ) {
        let mut buf = ReplayBuffer::new(capacity);
        for (ep, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                buf.push(Transition {
                    obs: vec![ep as f64, t as f64],
                    action: vec![0.0],
                    reward: 0.0,
                    next_obs: vec![ep as f64, t as f64 + 1.0],
                    done: t + 1 == len,
                    plan_mean: vec![0.0],
                    plan_std: vec![1.0],
                });
                prop_assert!(buf.len() <= capacity);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match buf.sample_sequences(64, horizon, &mut rng) {
            Ok(batch) => {
                for i in 0..64 {
                    let ep = batch.obs[0][[i, 0]];
                    let t0 = batch.obs[0][[i, 1]];
                    for (k, o) in batch.obs.iter().enumerate() {
                        prop_assert_eq!(o[[i, 0]], ep);
                        prop_assert_eq!(o[[i, 1]], t0 + k as f64);
                    }
                }
                let mut again = ChaCha8Rng::seed_from_u64(seed);
                let b2 = buf.sample_sequences(64, horizon, &mut again).unwrap();
                prop_assert_eq!(batch.origins, b2.origins);
            }
            Err(_) => prop_assert_eq!(buf.num_valid_starts(horizon), 0),
        }
    }

    #[test]
    fn env_dynamics_are_deterministic(
        name in prop_oneof![Just("pointmass"), Just("pendulum")],
        seed in 0u64..10_000,
        actions in prop::collection::vec(-3.0f64..3.0, 2..40),
    ) {
        let mut a = make_env(name).unwrap();
        let mut b = make_env(name).unwrap();
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        for chunk in actions.chunks(a.action_dim()) {
            let mut act = chunk.to_vec();
            act.resize(a.action_dim(), 0.0);
            let (ra, rb) = (a.step(&act).unwrap(), b.step(&act).unwrap());
            prop_assert_eq!(&ra, &rb);
            prop_assert!((0.0..=1.0).contains(&ra.reward));
            prop_assert!(ra.observation.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn two_hot_mass_over_many_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in [BinTransform::Linear, BinTransform::SymLog] {
        let spec = BinSpec::new(101, -10.0, 10.0, t).unwrap();
        for _ in 0..100_000 {
            let v = rng.random_range(-1e5..1e5) * rng.random::<f64>().powi(6);
            let p = spec.two_hot_encode(v);
            let nz: Vec<usize> = (0..101).filter(|&k| p[k] > 0.0).collect();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(nz.len() == 1 || (nz.len() == 2 && nz[1] == nz[0] + 1));
        }
    }
}

#[test]
fn rewards_stay_in_unit_interval_under_random_rollouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pm = PointMassReach::new();
    let mut pd = PendulumSwingup::new();
    use boom_core::envs::Env;
    for ep in 0..2500u64 {
        let envs: [&mut dyn Env; 2] = [&mut pm, &mut pd];
        for env in envs {
            env.reset(ep);
            loop {
                let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let r = env.step(&a).unwrap();
                assert!((0.0..=1.0).contains(&r.reward), "{} reward {}", env.name(), r.reward);
                if r.done {
                    break;
                }
            }
        }
    }
}

#[test]
fn zero_lambda_is_max_q_only_bit_for_bit() {
    for seed in 0..5 {
        let model = tiny_model(seed);
        let policy = tiny_policy(seed + 1);
        let batch = random_batch(4, 2, 3, 2, seed + 2);
        let inputs = PolicyInputs::from_batch(&model, &batch).unwrap();
        let mut cfg = AlignmentConfig::new(2);
        cfg.lambda_align = 0.0;
        let run = |cfg: &AlignmentConfig| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 9);
            bootstrapped_policy_loss(&policy, &model, &inputs, cfg, 1.3, &mut rng).unwrap()
        };
        let l = run(&cfg);
        assert_eq!(l.loss, l.max_q - cfg.entropy_coeff * l.entropy);
        cfg.entropy_coeff = 0.0;
        let l = run(&cfg);
        assert_eq!(l.loss.to_bits(), l.max_q.to_bits());
    }
}

#[test]
fn lambda_enters_linearly_with_frozen_q() {
    for metric in [AlignMetric::ForwardKL, AlignMetric::ReverseKLSurrogate] {
        let mut model = tiny_model(4);
        for q in model.params.q_ensemble.iter_mut() {
            q.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let policy = tiny_policy(5);
        let batch = random_batch(4, 2, 3, 2, 6);
        let inputs = PolicyInputs::from_batch(&model, &batch).unwrap();
        let run = |lambda: f64| {
            let mut cfg = AlignmentConfig::new(2);
            cfg.metric = metric;
            cfg.lambda_align = lambda;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            bootstrapped_policy_loss(&policy, &model, &inputs, &cfg, 1.0, &mut rng).unwrap()
        };
        let base = run(0.0);
        for lambda in [0.1, 1.0, 10.0] {
            let l = run(lambda);
            assert_eq!(l.max_q, base.max_q);
            let diff = l.loss - base.loss;
            assert!(
                (diff - lambda * l.alignment).abs() <= 1e-12 * (1.0 + diff.abs()),
                "{metric:?} lambda {lambda}: {diff} vs {}",
                lambda * l.alignment
            );
        }
    }
}
