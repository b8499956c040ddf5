use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use snn_mia::attack::{dropout_confidence, rmia, DropoutSpec};
use snn_mia::dataset::plan_splits_for_len;
use snn_mia::network::{confidence, mlp, SpikingNetwork};
use snn_mia::snn::{constant_encode, NeuronConfig};
use snn_mia::{Model, Tensor};

fn tensor(rows: usize, cols: usize, values: &[f32]) -> Tensor {
    Tensor::new(vec![rows, cols], values[..rows * cols].to_vec()).unwrap()
}

fn network(seed: u64, inputs: usize, hidden: &[usize], latency: usize, threshold: f32) -> SpikingNetwork {
    let neuron = NeuronConfig {
        threshold,
        ..NeuronConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpikingNetwork::new(mlp(inputs, hidden, 3).unwrap(), latency, neuron, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_equals_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6,
                                 values in prop::collection::vec(-4.0f32..4.0, 72)) {
        let a = tensor(m, k, &values);
        let b = tensor(k, n, &values[36..]);
        let c = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                prop_assert_eq!(c.data()[i * n + j].to_bits(), acc.to_bits());
            }
        }
    }

    #[test]
    fn hidden_spikes_are_binary(seed in any::<u64>(), latency in 1usize..5, threshold in 0.1f32..2.0,
                                x in prop::collection::vec(-3.0f32..3.0, 8)) {
        let net = network(seed, 4, &[6, 5], latency, threshold);
        let enc = constant_encode(&tensor(2, 4, &x), latency).unwrap();
        let mut seen = 0;
        net.forward_traced(&enc, |_, _, s| {
            seen += 1;
            assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }).unwrap();
        prop_assert_eq!(seen, 2 * latency);
    }

    #[test]
    fn snn_forward_is_bit_deterministic(seed in any::<u64>(), latency in 1usize..5,
                                        x in prop::collection::vec(-3.0f32..3.0, 12)) {
        let a = network(seed, 4, &[7], latency, 1.0);
        let b = network(seed, 4, &[7], latency, 1.0);
        let enc = constant_encode(&tensor(3, 4, &x), latency).unwrap();
        let la = a.forward(&enc).unwrap();
        let lb = b.forward(&enc).unwrap();
        prop_assert!(la.data().iter().zip(lb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_rate_dropout_is_plain_confidence(seed in any::<u64>(), n in 1usize..6, label in 0usize..3,
                                             x in prop::collection::vec(-3.0f32..3.0, 4)) {
        let model = Model::Snn(network(seed, 4, &[6], 2, 0.5));
        let row = tensor(1, 4, &x);
        let spec = DropoutSpec { p: 0.0, n, seed };
        let plain = confidence(&model, &row, label).unwrap();
        let dropped = dropout_confidence(&model, &x, label, 0, &spec).unwrap();
        prop_assert_eq!(plain.to_bits(), dropped.to_bits());
    }

    #[test]
    fn plans_are_pure_functions(half in 1usize..50, n in 1usize..5, seed in any::<u64>()) {
        prop_assert_eq!(
            plan_splits_for_len(2 * half, n, seed).unwrap(),
            plan_splits_for_len(2 * half, n, seed).unwrap()
        );
    }

    #[test]
    fn pool_gives_n_in_and_n_out_confidences(half in 1usize..30, n in 1usize..5, seed in any::<u64>()) {
        let plan = plan_splits_for_len(2 * half, n, seed).unwrap();
        for row in plan.membership() {
            prop_assert_eq!(row.iter().filter(|&&m| m).count(), n);
            prop_assert_eq!(row.iter().filter(|&&m| !m).count(), n);
        }
        let members = plan.target_membership().iter().filter(|&&m| m).count();
        prop_assert_eq!(2 * members, plan.len());
    }

    #[test]
    fn rmia_is_target_over_mean_reference(target in 0.01f64..1.0,
                                          refs in prop::collection::vec(0.01f64..1.0, 2..10)) {
        let bits: Vec<bool> = (0..refs.len()).map(|j| j % 2 == 0).collect();
        let score = rmia(&[target], std::slice::from_ref(&refs), Some(&[bits])).unwrap()[0];
        let mean = refs.iter().sum::<f64>() / refs.len() as f64;
        prop_assert!((score - target / mean).abs() <= 1e-12 * score.max(1.0));
    }
}
