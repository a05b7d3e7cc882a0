use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdnode::gradcheck::check_mlp;
use tdnode::mlp::{forward, init_glorot, init_glorot_with, MlpParameters};

#[test]
fn gradients_match_differences_at_100_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut p = init_glorot_with(&mut rng, &[2, 5, 5, 1], false).unwrap();
        for l in 0..2 {
            for b in p.bias_mut(l).unwrap() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let z = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
        let g = [rng.random_range(-1.0..1.0)];
        for (_, err) in check_mlp(&p, &z, &g, 1e-6).unwrap() {
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn output_bias_variant_is_differentiated_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = init_glorot_with(&mut rng, &[2, 5, 5, 1], true).unwrap();
    p.bias_mut(2).unwrap()[0] = 0.3;
    let found = check_mlp(&p, &[0.7, 1.1], &[1.0], 1e-6).unwrap();
    assert!(found.iter().any(|(n, _)| n == "b3"));
    assert!(found.iter().all(|(_, e)| *e < 1e-6), "{found:?}");
}

fn output_bound(p: &MlpParameters) -> f64 {
    p.weight(p.layers() - 1).iter().map(|w| w.abs()).sum()
}

proptest! {
    #[test]
    fn forward_is_pure_and_bounded(seed in 0u64..500, a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = init_glorot(seed, &[2, 5, 5, 1]).unwrap();
        let (y1, _) = forward(&p, &[a, b]).unwrap();
        let (y2, _) = forward(&p, &[a, b]).unwrap();
        prop_assert_eq!(y1[0].to_bits(), y2[0].to_bits());
        prop_assert!(y1[0].abs() <= output_bound(&p) + 1e-12);
    }
}
