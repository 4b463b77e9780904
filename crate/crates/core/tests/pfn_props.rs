use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthlab::pfn::{self, PfnConfig, PfnError, PfnForecaster, PfnModel, TrainConfig, TrainingMeta};
use synthlab::prior::PriorConfig;
use synthlab::Forecaster;

fn tiny() -> PfnModel {
    let cfg = PfnConfig { max_history: 64, head_width: 24, ..PfnConfig::small(1, 2, 8) };
    PfnModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Predictions are affine-equivariant: inputs are min-max scaled before
    /// the network and outputs mapped back.
    #[test]
    fn prediction_commutes_with_affine_maps(h in prop::collection::vec(-5.0f64..5.0, 3..64), a in 0.1f64..10.0, b in -50.0f64..50.0) {
        let m = tiny();
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi - lo > 1e-3);
        let base = m.predict(&h, 24).unwrap();
        let moved: Vec<f64> = h.iter().map(|v| a * v + b).collect();
        for (x, y) in base.iter().zip(m.predict(&moved, 24).unwrap()) {
            prop_assert!((a * x + b - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn horizon_prefixes_agree(h in prop::collection::vec(0.0f64..1.0, 2..64), k in 1usize..24) {
        let m = tiny();
        prop_assert_eq!(&m.predict(&h, 24).unwrap()[..k], &m.predict(&h, k).unwrap()[..]);
    }
}

#[test]
fn limits_are_errors() {
    let m = tiny();
    assert!(matches!(m.predict(&[1.0, 2.0], 25), Err(PfnError::HorizonOverflow { .. })));
    assert!(m.predict(&[], 4).is_err());
    // long histories keep their most recent look-back points
    let long: Vec<f64> = (0..200).map(|t| (t as f64 * 0.2).sin()).collect();
    let f = PfnForecaster::new(m.clone());
    assert_eq!(f.forecast(&long, 8).unwrap(), f.forecast(&long[200 - f.look_back()..], 8).unwrap());
    assert!(m.clone().with_look_back(65).is_err());
    assert_eq!(m.with_look_back(32).unwrap().look_back(), 32);
}

#[test]
fn checkpoint_file_round_trip() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta = TrainingMeta { seed: 3, steps: 0, final_loss: 0.0, n_samples: 0, epochs: 0, batch_size: 1, base_lr: 0.001 };
    pfn::save(&m, Some(&meta), &path).unwrap();
    let back = pfn::load(&path).unwrap();
    assert_eq!(back.model.params().num_scalars(), m.params().num_scalars());
    assert_eq!(back.meta.as_ref().map(|x| x.seed), Some(3));
    let h = [0.1, 0.5, 0.3, 0.9];
    assert_eq!(back.model.predict(&h, 24).unwrap(), m.predict(&h, 24).unwrap());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    assert!(pfn::load_from(bytes.as_slice()).is_err());
}

#[test]
fn short_training_lowers_loss() {
    let mut m = tiny();
    let prior = PriorConfig { max_history: 64, period_range: (8, 40), target_length: 24, ..PriorConfig::default() };
    let tc = TrainConfig { n_samples: 512, batch_size: 32, epochs: 3, seed: 1, validation_samples: 32, ..TrainConfig::default() };
    let r = pfn::train(&mut m, &prior, &tc).unwrap();
    assert!(r.final_loss < r.initial_loss, "{r:?}");
    assert!(r.final_validation_mse.is_finite());
}
