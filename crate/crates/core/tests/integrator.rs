use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidloc::data::VideoSample;
use vidloc::integrate::{Classifier, Integrator, IntegratorKind};
use vidloc::locator::{run_episode, Mode};
use vidloc::model::{Model, ModelConfig};
use vidloc::nn::TransformerConfig;
use vidloc::spatial::{SpatialEncoder, PASSTHROUGH_FLOPS_PER_FRAME};
use vidloc::{ParamStore, Tape, Tensor};

// ---- spatial encoder --------------------------------------------------------

#[test]
fn passthrough_is_identity_and_counts() {
    let enc = SpatialEncoder::passthrough(3, PASSTHROUGH_FLOPS_PER_FRAME);
    let mut tape = Tape::standalone();
    let e = enc.encode_frame(&mut tape, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(tape.value(e), &[1.0, 2.0, 3.0]);
    assert_eq!(enc.frames(), 1);
    assert!(enc.encode_frame(&mut tape, &[1.0]).is_err());
    assert_eq!(enc.frames(), 1, "rejected frames are not charged");
    for _ in 0..4 {
        enc.encode_frame(&mut tape, &[0.0; 3]).unwrap();
    }
    assert_eq!(enc.frames(), 5);
    assert_eq!(enc.declared_cost(), 4.54e9);
}

#[test]
fn mlp_embedder_cost_and_zero_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let enc = SpatialEncoder::mlp(&mut store, "s", 64, 512, 1024, &mut rng).unwrap();
    assert_eq!(enc.declared_cost(), 1_114_112.0);

    let mut store = ParamStore::new();
    let enc = SpatialEncoder::mlp(&mut store, "s", 4, 5, 3, &mut rng).unwrap();
    let last = enc.params()[2..].to_vec();
    store.get_mut(last[0]).values_mut().fill(0.0);
    store.get_mut(last[1]).values_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    let mut tape = Tape::inference(&store);
    let e = enc.encode_frame(&mut tape, &[0.3, -0.2, 0.9, 1.0]).unwrap();
    assert_eq!(tape.value(e), &[0.5, -1.0, 2.0]);
    let again = enc.encode_frame(&mut tape, &[0.3, -0.2, 0.9, 1.0]).unwrap();
    assert_eq!(tape.value(e), tape.value(again));
}

// ---- integrator -------------------------------------------------------------

fn units(tape: &mut Tape, rows: &[&[f64]]) -> Vec<vidloc::Var> {
    rows.iter().map(|r| tape.constant_vec(r.to_vec())).collect()
}

#[test]
fn pooling_examples() {
    let mean = Integrator::pooling(IntegratorKind::MeanPool, 2, 2);
    let max = Integrator::pooling(IntegratorKind::MaxPool, 2, 2);
    let mut tape = Tape::standalone();
    let u = units(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
    let m = mean.integrate(&mut tape, &u).unwrap();
    assert_eq!(tape.value(m), &[0.5, 0.5]);
    let x = max.integrate(&mut tape, &u).unwrap();
    assert_eq!(tape.value(x), &[1.0, 1.0]);
    let bad = units(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0, 2.0]]);
    assert!(mean.integrate(&mut tape, &bad).is_err());
}

fn transformer(store: &mut ParamStore, in_dim: usize, n: usize, positions: bool, rng: &mut ChaCha8Rng) -> Integrator {
    Integrator::transformer(
        store,
        "i",
        in_dim,
        n,
        TransformerConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 12,
            max_positions: if positions { n } else { 0 },
        },
        rng,
    )
    .unwrap()
}

#[test]
fn every_kind_has_fixed_output_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let kinds = [
        Integrator::pooling(IntegratorKind::MeanPool, 6, 3),
        Integrator::pooling(IntegratorKind::MaxPool, 6, 3),
        Integrator::forward_mlp(&mut store, "f", 6, 3, 10, &mut rng).unwrap(),
        transformer(&mut store, 6, 3, true, &mut rng),
    ];
    for intg in &kinds {
        let mut tape = Tape::inference(&store);
        let u: Vec<_> = (0..3)
            .map(|_| tape.constant_vec((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let g = intg.integrate(&mut tape, &u).unwrap();
        assert_eq!(tape.shape(g), [intg.out_dim]);
    }
}

#[test]
fn single_unit_transformer_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let intg = transformer(&mut store, 5, 1, true, &mut rng);
    let mut tape = Tape::inference(&store);
    let u = units(&mut tape, &[&[0.1, 0.2, 0.3, 0.4, 0.5]]);
    let g = intg.integrate(&mut tape, &u).unwrap();
    assert_eq!(tape.shape(g), [8]);
    assert!(tape.value(g).iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooling_is_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6), seed in 0u64..100) {
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for kind in [IntegratorKind::MeanPool, IntegratorKind::MaxPool] {
            let intg = Integrator::pooling(kind, 4, rows.len());
            let mut tape = Tape::standalone();
            let a: Vec<_> = rows.iter().map(|r| tape.constant_vec(r.clone())).collect();
            let b: Vec<_> = perm.iter().map(|&i| tape.constant_vec(rows[i].clone())).collect();
            let ga = intg.integrate(&mut tape, &a).unwrap();
            let gb = intg.integrate(&mut tape, &b).unwrap();
            if kind == IntegratorKind::MaxPool {
                prop_assert_eq!(tape.value(ga), tape.value(gb));
            } else {
                // mean is a reordered float sum: equal to rounding
                for (x, y) in tape.value(ga).iter().zip(tape.value(gb)) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn classify_is_a_distribution(g in prop::collection::vec(-50.0f64..50.0, 6), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cls = Classifier::new(&mut store, "c", 6, 5, &mut rng).unwrap();
        let mut tape = Tape::inference(&store);
        let gv = tape.constant_vec(g);
        let z = cls.logits(&mut tape, gv).unwrap();
        let logits = tape.value(z).to_vec();
        let p = cls.classify(&mut tape, gv).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(vidloc::locator::argmax(&p), vidloc::locator::argmax(&logits));
    }
}

#[test]
fn zero_head_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let cls = Classifier::new(&mut store, "c", 3, 4, &mut rng).unwrap();
    for id in cls.params() {
        store.get_mut(id).values_mut().fill(0.0);
    }
    let mut tape = Tape::inference(&store);
    let g = tape.constant_vec(vec![1.0, -2.0, 3.0]);
    assert_eq!(cls.classify(&mut tape, g).unwrap(), vec![0.25; 4]);
    let bad = tape.constant_vec(vec![1.0]);
    assert!(cls.classify(&mut tape, bad).is_err());
}

#[test]
fn intermediate_prediction_at_end_equals_final() {
    let cfg = ModelConfig {
        frame_dim: 4,
        classes: 3,
        lstm_hidden: 6,
        transformer_layers: 1,
        transformer_heads: 2,
        transformer_dim: 8,
        transformer_ff: 8,
        policy_layers: 2,
        policy_width: 8,
        critic_layers: 2,
        critic_width: 8,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let model = Model::new(cfg.clone(), seed).unwrap();
        let data = (0..40 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let video = VideoSample::new(Tensor::matrix(40, 4, data).unwrap(), 2, 3).unwrap();
        let mut tape = Tape::inference(&model.store);
        let ep = run_episode(&model, &mut tape, &video, Mode::Sample, &mut rng, Some(2)).unwrap();
        let last = ep.rounds.last().map(|r| r.p_gt).or(ep.p0_gt).unwrap();
        let fin = model.predict(&mut tape, &ep.units).unwrap()[2];
        assert_eq!(last.to_bits(), fin.to_bits());
        let again = model.predict(&mut tape, &ep.units).unwrap()[2];
        assert_eq!(fin.to_bits(), again.to_bits());
    }
}
