use clsprobe::tasks::{
    accuracy, generate_task, matthews, pearson, split_indices, Label, RuleLabel, Score, SignalRule,
    TaskSpec,
};
use proptest::prelude::*;

fn accuracy_oracle(p: &[u32], g: &[u32]) -> f64 {
    let mut hits = 0usize;
    for i in 0..g.len() {
        if p[i] == g[i] {
            hits += 1;
        }
    }
    hits as f64 / g.len() as f64
}

/// Mean product of z-scores.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let z = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
        v.iter().map(|a| (a - m) / sd).collect::<Vec<_>>()
    };
    z(x).iter().zip(z(y)).map(|(a, b)| a * b).sum::<f64>() / n
}

/// Correlation of the two indicator vectors, from a 2x2 confusion table.
fn matthews_oracle(p: &[u32], g: &[u32]) -> f64 {
    let mut table = [[0f64; 2]; 2];
    for (&a, &b) in p.iter().zip(g) {
        table[a as usize][b as usize] += 1.0;
    }
    let n = p.len() as f64;
    let p1 = (table[1][0] + table[1][1]) / n;
    let g1 = (table[0][1] + table[1][1]) / n;
    let cov = table[1][1] / n - p1 * g1;
    let var = p1 * (1.0 - p1) * g1 * (1.0 - g1);
    if var == 0.0 {
        0.0
    } else {
        cov / var.sqrt()
    }
}

fn classes(n: usize, k: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..k, n)
}

fn labelled_pair(k: u32) -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (1usize..60).prop_flat_map(move |n| (classes(n, k), classes(n, k)))
}

fn spread_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn accuracy_matches_oracle((p, g) in labelled_pair(3)) {
        prop_assert!((accuracy(&p, &g).unwrap() - accuracy_oracle(&p, &g)).abs() <= 1e-12);
    }

    #[test]
    fn pearson_matches_oracle((x, y) in spread_pair()) {
        prop_assume!(spread(&x) > 1e-3 && spread(&y) > 1e-3);
        let got = pearson(&x, &y).unwrap().value().unwrap();
        prop_assert!((got - pearson_oracle(&x, &y)).abs() <= 1e-12);
    }

    #[test]
    fn matthews_matches_oracle((p, g) in labelled_pair(2)) {
        prop_assert!((matthews(&p, &g).unwrap() - matthews_oracle(&p, &g)).abs() <= 1e-12);
    }

    #[test]
    fn matthews_is_symmetric((p, g) in labelled_pair(2)) {
        prop_assert_eq!(matthews(&p, &g).unwrap(), matthews(&g, &p).unwrap());
    }

    #[test]
    fn pearson_is_affine_invariant((x, y) in spread_pair(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        prop_assume!(spread(&x) > 1e-3 && spread(&y) > 1e-3);
        let base = pearson(&x, &y).unwrap().value().unwrap();
        let tx: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ty: Vec<f64> = y.iter().map(|v| a * v - b).collect();
        prop_assert!((pearson(&tx, &y).unwrap().value().unwrap() - base).abs() <= 1e-9);
        prop_assert!((pearson(&x, &ty).unwrap().value().unwrap() - base).abs() <= 1e-9);
    }

    #[test]
    fn splits_partition_and_reproduce(n in 10usize..500, seed in any::<u64>()) {
        let (tr, va, te) = split_indices(n, seed);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, seed), (tr, va, te));
    }
}

#[test]
fn degenerate_metric_inputs() {
    assert_eq!(matthews(&[1, 1, 1], &[0, 1, 0]).unwrap(), 0.0);
    assert_eq!(matthews(&[0, 1, 0], &[0, 0, 0]).unwrap(), 0.0);
    assert_eq!(
        pearson(&[3.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
        Score::UNDEFINED
    );
    assert_eq!(
        pearson(&[1.0, 2.0, 3.0], &[0.5; 3]).unwrap(),
        Score::UNDEFINED
    );
}

#[test]
fn noiseless_labels_follow_their_rule() {
    let rules = [
        "presence:5",
        "any_of:5:9",
        "both_of:5:9",
        "count_of:5:9",
        "shared_token",
        "cross_presence:5:9",
        "paired_presence:5:9",
        "density:5",
        "overlap",
    ];
    for text in rules {
        let rule: SignalRule = text.parse().unwrap();
        for seed in [1u64, 2] {
            let task = generate_task(&TaskSpec::new(text, rule.clone(), 300, seed)).unwrap();
            for ex in &task.examples {
                let expected = match rule.evaluate(&ex.tokens, &ex.segments) {
                    RuleLabel::Class(c) => Label::Class(c),
                    RuleLabel::Scalar(v) => Label::Scalar(v),
                };
                assert_eq!(ex.label, expected, "{text} seed {seed} example {}", ex.id);
            }
        }
    }
}
