use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lyaq_core::nn::DenseNet;
use lyaq_core::sac::{Batch, ReplayBuffer, SacAgent, SacConfig, SampleMode, Transition};
use lyaq_core::{StateVector, SystemConfig};

fn small_sac() -> SacConfig {
    SacConfig { hidden: vec![16, 16], batch_size: 4, buffer_capacity: 64, reward_scale: Some(1.0), ..SacConfig::desk() }
}

fn agent(sac: SacConfig, seed: u64) -> SacAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SacAgent::new(&SystemConfig::reference(), sac, &mut rng).unwrap()
}

fn constant_net(widths: &[usize], value: f64) -> DenseNet {
    let mut net = DenseNet::zeros(widths);
    net.layers.last_mut().unwrap().bias.fill(value);
    net
}

fn transition(a: &SacAgent, reward: f64) -> Transition {
    let k = a.action_dim();
    Transition {
        state: vec![0.5; a.state_dim()],
        action: vec![2.0 / k as f64; k],
        reward,
        next_state: vec![0.25; a.state_dim()],
    }
}

#[test]
fn target_uses_the_smaller_critic() {
    let sac = SacConfig { discount: 0.5, entropy_weight: 0.0, ..small_sac() };
    let mut a = agent(sac, 1);
    let widths = a.target1.widths();
    a.target1 = constant_net(&widths, 3.0);
    a.target2 = constant_net(&widths, 5.0);
    let t = transition(&a, 0.0);
    let batch = Batch::from_transitions([&t, &t]);
    let eps = Array2::zeros((2, a.action_dim()));
    let y = a.critic_targets(&batch, &eps);
    for v in y.iter() {
        assert!((v - 1.5).abs() < 1e-12, "{v}");
    }
    a.target1 = constant_net(&widths, 7.0);
    let y = a.critic_targets(&batch, &eps);
    assert!((y[0] - 2.5).abs() < 1e-12);
}

#[test]
fn critic_fits_a_fixed_reward() {
    let sac = SacConfig { discount: 0.0, entropy_weight: 0.0, learning_rate: 1e-3, ..small_sac() };
    let mut a = agent(sac, 2);
    let t = transition(&a, 1.0);
    let batch = Batch::from_transitions([&t, &t, &t, &t]);
    let state = StateVector::from_slice(3, &a.scaler.denormalize(&t.state).unwrap()).unwrap();
    let action = lyaq_core::Action::from_flat(&t.action).unwrap();
    let gap = |a: &SacAgent| {
        let (q1, q2) = a.critic_value(&state, &action).unwrap();
        (q1 - 1.0).abs().max((q2 - 1.0).abs())
    };
    let before = gap(&a);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        a.update_on_batch(&batch, &mut rng).unwrap();
    }
    let after = gap(&a);
    assert!(after < before && after < 1e-2, "{before} -> {after}");
}

#[test]
fn checkpoint_rejects_other_versions() {
    let a = agent(small_sac(), 4);
    let json = a.to_checkpoint_json(None).unwrap().replacen("\"version\":1", "\"version\":2", 1);
    assert!(SacAgent::from_checkpoint_json(&json).is_err());
}

#[test]
fn checkpoint_file_round_trip_keeps_buffer_meta() {
    let a = agent(small_sac(), 5);
    let mut buf = ReplayBuffer::new(8, a.state_dim(), a.action_dim());
    for r in 0..11 {
        buf.push(transition(&a, r as f64)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.json");
    a.save(&path, Some(&buf)).unwrap();
    let (b, meta) = SacAgent::load(&path).unwrap();
    assert_eq!(a, b);
    assert_eq!(meta.unwrap(), buf.meta());
}

#[test]
fn update_needs_a_full_batch() {
    let mut a = agent(small_sac(), 6);
    let mut buf = ReplayBuffer::new(8, a.state_dim(), a.action_dim());
    buf.push(transition(&a, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(a.update(&buf, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_outputs_are_simplices(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 16)) {
        let a = agent(small_sac(), seed % 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [SampleMode::Stochastic, SampleMode::Deterministic] {
            let p = a.policy_normalized(&x, mode, &mut rng).unwrap();
            for half in [&p.alpha, &p.beta] {
                prop_assert_eq!(half.len(), 4);
                prop_assert!(half.iter().all(|v| *v >= 0.0 && *v <= 1.0));
                prop_assert!((half.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            prop_assert!(p.log_prob.is_finite());
        }
    }

    #[test]
    fn buffer_keeps_the_latest_items(cap in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(cap, 1, 1);
        for i in 0..pushes {
            let v = i as f64;
            buf.push(Transition { state: vec![v], action: vec![v], reward: v, next_state: vec![v] }).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let mut held: Vec<f64> = (0..buf.len()).map(|i| buf.get(i).unwrap().reward).collect();
        held.sort_by(f64::total_cmp);
        let want: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(held, want);
    }

    #[test]
    fn scaler_round_trips(raw in prop::collection::vec(0.0f64..1e8, 16)) {
        let s = lyaq_core::sac::StateScaler::new(&SystemConfig::reference());
        let back = s.denormalize(&s.normalize(&raw).unwrap()).unwrap();
        for (a, b) in raw.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
