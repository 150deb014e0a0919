mod common;

use std::collections::HashMap;
use std::sync::OnceLock;

use clsprobe::encoder::{
    forward, pair_input, record_forward, ActivationTrace, EncoderConfig, EncoderWeights,
};
use clsprobe::finetune::{finetune, init_head, FineTuneConfig, FineTunedModel, Head};
use clsprobe::numerics::{sgd_step, Gradients, Matrix, Tape, CLIP_NORM};
use clsprobe::probe::{
    enumerate_or_sample_subsets, layer_sweep, masked_head_inference, maxpool_position,
    sweep_subsets, weight_masked_inference, DimensionSubset, Prober, SampleMode,
};
use clsprobe::tasks::{generate_task, Label, TaskDataset, TaskSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frozen_small() -> &'static (EncoderWeights, TaskDataset, FineTunedModel) {
    static M: OnceLock<(EncoderWeights, TaskDataset, FineTunedModel)> = OnceLock::new();
    M.get_or_init(|| common::small_model(true, 7))
}

fn with_head(model: &FineTunedModel, head: Head) -> FineTunedModel {
    FineTunedModel {
        head,
        ..model.clone()
    }
}

fn vector_and_subset(d: usize) -> impl Strategy<Value = (Vec<f64>, DimensionSubset)> {
    (
        prop::collection::vec(-5.0f64..5.0, d),
        prop::collection::vec(any::<bool>(), d),
    )
        .prop_map(|(v, keep)| {
            let idx = keep
                .iter()
                .enumerate()
                .filter(|(_, &k)| k)
                .map(|(i, _)| i)
                .collect();
            (v, DimensionSubset::new(idx).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn input_and_weight_masking_agree((v, subset) in vector_and_subset(8), seed in 0u64..50) {
        let (_, _, base) = frozen_small();
        for depth in [1, 2] {
            let model = with_head(base, init_head(8, 2, depth, seed).unwrap());
            let a = masked_head_inference(&model, &v, &subset);
            let b = weight_masked_inference(&model, &v, &subset);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let full = DimensionSubset::full(8);
            prop_assert_eq!(masked_head_inference(&model, &v, &full), model.head.forward_vec(&v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sampling_is_seeded_distinct_and_sorted(
        (d, k) in (2usize..40).prop_flat_map(|d| (Just(d), 1..=d.min(3))),
        frac in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let pop = clsprobe::probe::population(d, k).unwrap();
        let count = ((pop as f64 * frac) as u64).max(1);
        let a = enumerate_or_sample_subsets(d, k, SampleMode::Count(count), seed).unwrap();
        let b = enumerate_or_sample_subsets(d, k, SampleMode::Count(count), seed).unwrap();
        prop_assert_eq!(&a.subsets, &b.subsets);
        prop_assert_eq!(a.subsets.len() as u64, count);
        let mut sorted = a.subsets.clone();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), a.subsets.len());
        for s in &a.subsets {
            prop_assert_eq!(s.len(), k);
            prop_assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.indices().iter().all(|&i| i < d));
        }
    }

    #[test]
    fn maxpool_choice_ignores_positive_scale(
        (len, data) in (2usize..12).prop_flat_map(|l| (Just(l), prop::collection::vec(-3.0f64..3.0, l * 6))),
        pad in 0usize..4,
        c in 0.01f64..100.0,
    ) {
        let real = len.saturating_sub(pad).max(1);
        let mask: Vec<bool> = (0..len).map(|i| i < real).collect();
        let m = Matrix::from_vec(len, 6, data).unwrap();
        let trace = ActivationTrace::new(vec![m.clone(), m.clone()], mask.clone()).unwrap();
        let scaled = ActivationTrace::new(vec![m.scale(c), m.scale(c)], mask).unwrap();
        prop_assert_eq!(maxpool_position(&trace).unwrap(), maxpool_position(&scaled).unwrap());
    }
}

fn pair_subsets(d: usize) -> Vec<DimensionSubset> {
    enumerate_or_sample_subsets(d, 2, SampleMode::Exhaustive, 0)
        .unwrap()
        .subsets
}

#[test]
fn ranking_ignores_test_labels() {
    let (_, task, model) = frozen_small();
    let flipped = task.with_test_labels(|ex| match ex.label {
        Label::Class(c) => Label::Class(1 - c),
        other => other,
    });
    let subsets = pair_subsets(8);
    let a = sweep_subsets(&Prober::new(model, task).unwrap(), &subsets, 2).unwrap();
    let b = sweep_subsets(&Prober::new(model, &flipped).unwrap(), &subsets, 2).unwrap();
    let order = |r: &clsprobe::probe::ProbeReport| {
        r.entries
            .iter()
            .map(|e| (e.subset.clone(), e.valid))
            .collect::<Vec<_>>()
    };
    assert_eq!(order(&a), order(&b));
    assert_ne!(a.baseline, b.baseline);
}

#[test]
fn final_level_of_layer_sweep_is_the_plain_sweep() {
    let (_, task, model) = frozen_small();
    let prober = Prober::new(model, task).unwrap();
    let subsets = pair_subsets(8);
    let layers = layer_sweep(&prober, &subsets, subsets.len()).unwrap();
    let last = layers.last().unwrap();
    assert_eq!(last.level, prober.final_level());
    assert_eq!(
        last.report,
        sweep_subsets(&prober, &subsets, prober.final_level()).unwrap()
    );
}

#[test]
fn half_sample_finds_the_top_region() {
    for seed in [1u64, 2, 3] {
        let enc = EncoderWeights::init(&EncoderConfig {
            seed,
            ..EncoderConfig::default()
        })
        .unwrap();
        let task = generate_task(&TaskSpec::new(
            "t",
            "any_of:5:9".parse().unwrap(),
            1000,
            seed,
        ))
        .unwrap();
        let cfg = FineTuneConfig {
            freeze_encoder: true,
            seed,
            ..FineTuneConfig::default()
        };
        let model = finetune(&enc, &task, &cfg).unwrap();
        let prober = Prober::new(&model, &task).unwrap();
        let all = sweep_subsets(&prober, &pair_subsets(32), 4).unwrap();
        let cutoff = all.entries[(all.entries.len() as f64 * 0.05).ceil() as usize - 1].valid;
        let half = enumerate_or_sample_subsets(32, 2, SampleMode::Rate(0.5), seed).unwrap();
        let sampled = sweep_subsets(&prober, &half.subsets, 4).unwrap();
        let top = sampled.top().unwrap();
        assert!(
            top.valid.rank_cmp(&cutoff).is_ge(),
            "seed {seed}: sample top {} below exhaustive 5% cutoff {}",
            top.valid,
            cutoff
        );
    }
}

#[test]
fn frozen_encoder_is_untouched() {
    let (enc, _, model) = frozen_small();
    let kept = model.encoder().unwrap();
    for (a, b) in enc.params().iter().zip(kept.params()) {
        assert_eq!(a.name, b.name);
        assert!(a
            .value
            .as_slice()
            .iter()
            .zip(b.value.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn training_is_deterministic_and_ignores_test_labels() {
    let enc = EncoderWeights::init(&common::small_config(3)).unwrap();
    let task = common::small_task("any_of:5:9", 200, 3);
    let test_labels: Vec<Label> = task.test.iter().map(|&i| task.examples[i].label).collect();
    let rotated: HashMap<u32, Label> = task
        .test
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            (
                task.examples[i].id,
                test_labels[(k + 1) % test_labels.len()],
            )
        })
        .collect();
    let permuted = task.with_test_labels(|ex| rotated[&ex.id]);
    assert_ne!(permuted, task);
    let cfg = FineTuneConfig {
        max_epochs: 3,
        seed: 3,
        ..FineTuneConfig::default()
    };
    let a = finetune(&enc, &task, &cfg).unwrap();
    let b = finetune(&enc, &task, &cfg).unwrap();
    let c = finetune(&enc, &permuted, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.best_epoch, c.best_epoch);
    assert_eq!(a, c);
}

struct Batch {
    inputs: Vec<(Vec<u32>, Vec<u8>)>,
    targets: Vec<usize>,
}

fn batch_loss(enc: &EncoderWeights, head: &Head, batch: &Batch) -> (f64, Gradients) {
    let mut tape = Tape::new();
    let mut rows = Vec::new();
    for (t, s) in &batch.inputs {
        let levels = record_forward(&mut tape, enc, t, s, true, None).unwrap();
        rows.push(tape.gather_rows(*levels.last().unwrap(), &[0]).unwrap());
    }
    let pooled = tape.concat_rows(&rows).unwrap();
    let logits = head.record(&mut tape, pooled).unwrap();
    let loss = tape.cross_entropy(logits, &batch.targets).unwrap();
    let value = tape.value(loss).get(0, 0);
    (value, tape.backward(loss).unwrap())
}

#[test]
fn small_steps_never_raise_batch_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100u64 {
        let enc = EncoderWeights::init(&common::small_config(case)).unwrap();
        let head = init_head(8, 2, 1, case).unwrap();
        let inputs = (0..4)
            .map(|_| {
                let a: Vec<u32> = (0..rng.random_range(1..5))
                    .map(|_| rng.random_range(4..32))
                    .collect();
                let b: Vec<u32> = (0..rng.random_range(1..5))
                    .map(|_| rng.random_range(4..32))
                    .collect();
                pair_input(&a, &b)
            })
            .collect();
        let batch = Batch {
            inputs,
            targets: (0..4).map(|_| rng.random_range(0..2)).collect(),
        };
        let (before, grads) = batch_loss(&enc, &head, &batch);
        let mut lr = 0.1;
        let mut ok = false;
        for _ in 0..=20 {
            let mut e = enc.clone();
            let mut h = head.clone();
            sgd_step(&mut [e.params_mut(), h.params_mut()], &grads, lr, CLIP_NORM).unwrap();
            if batch_loss(&e, &h, &batch).0 <= before {
                ok = true;
                break;
            }
            lr /= 2.0;
        }
        assert!(ok, "case {case}: loss {before} rose for every step size");
    }
}

#[test]
fn inference_mode_ignores_dropout_seed() {
    let (_, task, model) = frozen_small();
    let enc = model.encoder().unwrap();
    let ex = &task.examples[0];
    let a = forward(enc, &ex.tokens, &ex.segments, false, 1).unwrap();
    let b = forward(enc, &ex.tokens, &ex.segments, false, 99).unwrap();
    assert_eq!(a.levels(), b.levels());
}
