use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lyaq_core::env::{
    cloud_cost, cloud_cost_bound, compute_departure, compute_offload, edge_cost, edge_cost_bound, queue_update,
    slot_dynamics, Action,
};
use lyaq_core::{EdgeCloudEnv, SystemConfig};

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn action3() -> impl Strategy<Value = Action> {
    (prop::collection::vec(0.01f64..1.0, 4), prop::collection::vec(0.01f64..1.0, 4))
        .prop_map(|(a, b)| Action::new(simplex(a), simplex(b)).unwrap())
}

proptest! {
    #[test]
    fn slot_dynamics_respects_caps(
        action in action3(),
        qa in prop::collection::vec(0.0f64..5e7, 3),
    ) {
        let cfg = SystemConfig::reference();
        let d = slot_dynamics(&qa, &action, &cfg);
        let b = compute_departure(&action, &cfg);
        let o = compute_offload(&qa, &action, &cfg);
        prop_assert_eq!(&d.offloads, &o);
        for i in 0..3 {
            prop_assert!(o[i] >= 0.0);
            prop_assert!(o[i] <= action.beta[i] * cfg.bandwidth + 1e-6);
            prop_assert!(o[i] <= qa[i] + 1e-6);
            prop_assert!(d.queue_after[i] >= 0.0);
            prop_assert!((d.queue_after[i] - (qa[i] - b[i]).max(0.0)).abs() <= 1e-6 * qa[i].max(1.0));
            prop_assert!(d.actual_cpu_use[i] <= action.alpha[i] + 1e-12);
        }
        prop_assert!(d.edge_cost <= edge_cost_bound(&cfg) * (1.0 + 1e-12));
        prop_assert!(d.cloud_cost <= cloud_cost_bound(&cfg) * (1.0 + 1e-12));
        prop_assert_eq!(d.edge_cost, edge_cost(&action, &cfg));
        prop_assert_eq!(d.cloud_cost, cloud_cost(&o, &cfg));
    }

    #[test]
    fn queue_update_is_clamped_difference(
        q in prop::collection::vec(0.0f64..1e6, 1..5),
        seed in any::<u64>(),
    ) {
        let n = q.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1e6)).collect();
        let b: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..2e6)).collect();
        let next = queue_update(&q, &a, &b);
        for i in 0..n {
            prop_assert_eq!(next[i], (q[i] + a[i] - b[i]).max(0.0));
        }
    }

    #[test]
    fn episodes_keep_queues_nonnegative(seed in 0u64..50, action in action3()) {
        let mut cfg = SystemConfig::reference();
        cfg.episode_length = 40;
        let mut env = EdgeCloudEnv::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = env.reset(&mut rng).unwrap();
        prop_assert_eq!(s0.to_vec().len(), 16);
        for _ in 0..40 {
            let out = env.step(&action, &mut rng).unwrap();
            prop_assert!(out.queue_after.as_slice().iter().all(|q| *q >= 0.0));
            prop_assert!(out.next_state.actual_cpu_use.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}

#[test]
fn stepping_rejects_wrong_dimension() {
    let cfg = SystemConfig::reference();
    let mut env = EdgeCloudEnv::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng).unwrap();
    assert!(env.step(&Action::uniform(2), &mut rng).is_err());
}
