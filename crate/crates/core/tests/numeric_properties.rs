mod common;

use clsprobe::encoder::{
    forward, pretrain_mlm, single_input, EncoderWeights, PretrainOptions, PAD,
};
use clsprobe::numerics::Matrix;
use clsprobe::tasks::bigram_corpus;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize, range: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-range..range, r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_rows_are_distributions(m in matrix(6, 10, 50.0)) {
        let s = m.softmax_rows();
        for r in 0..s.rows() {
            let row = s.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardises_rows(
        (rows, cols, data) in (1usize..5, 2usize..12)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-10.0f64..10.0, r * c)))
    ) {
        let m = Matrix::from_vec(rows, cols, data).unwrap();
        let var = |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64
        };
        prop_assume!((0..rows).all(|r| var(m.row(r)) >= 0.1));
        let out = m.layer_norm_rows(&vec![1.0; cols], &vec![0.0; cols], 1e-5).unwrap();
        for r in 0..rows {
            let row = out.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var(row) - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn identity_products_are_exact(m in matrix(8, 8, 1e3)) {
        let i = Matrix::identity(m.cols());
        prop_assert_eq!(m.matmul(&i).unwrap().matmul(&i).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trailing_padding_leaves_cls_unchanged(
        content in prop::collection::vec(4u32..32, 1..8),
        pad in 1usize..6,
        seed in 0u64..1000,
    ) {
        let w = EncoderWeights::init(&common::small_config(seed)).unwrap();
        let (tokens, segments) = single_input(&content);
        let base = forward(&w, &tokens, &segments, false, 0).unwrap();
        let mut padded_t = tokens.clone();
        let mut padded_s = segments.clone();
        padded_t.extend(std::iter::repeat_n(PAD, pad));
        padded_s.extend(std::iter::repeat_n(0, pad));
        let padded = forward(&w, &padded_t, &padded_s, false, 0).unwrap();
        prop_assert_eq!(base.n_levels(), w.config().n_layers + 1);
        prop_assert_eq!(padded.n_levels(), base.n_levels());
        for level in 0..base.n_levels() {
            let a = base.level(level).unwrap().row(0);
            let b = padded.level(level).unwrap().row(0);
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn inference_is_pure(content in prop::collection::vec(4u32..32, 1..10), seed in 0u64..1000) {
        let w = EncoderWeights::init(&common::small_config(seed)).unwrap();
        let (tokens, segments) = single_input(&content);
        let a = forward(&w, &tokens, &segments, false, 1).unwrap();
        let b = forward(&w, &tokens, &segments, false, 2).unwrap();
        prop_assert_eq!(a.levels(), b.levels());
    }
}

#[test]
fn pretraining_lowers_loss_for_every_seed() {
    for seed in [1u64, 2, 3] {
        let cfg = common::small_config(seed);
        let mut w = EncoderWeights::init(&cfg).unwrap();
        let corpus = bigram_corpus(cfg.vocab_size, 400, (4, 12), seed).unwrap();
        let opts = PretrainOptions {
            steps: 600,
            seed,
            ..PretrainOptions::default()
        };
        let losses = pretrain_mlm(&mut w, &corpus, &opts).unwrap();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let first = mean(&losses[..100]);
        let last = mean(&losses[losses.len() - 100..]);
        assert!(
            last < first,
            "seed {seed}: first {first:.4}, last {last:.4}"
        );
    }
}
