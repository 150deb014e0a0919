//! Structured pretraining corpus.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::FIRST_CONTENT;
use crate::error::{Error, Result};

/// Sequences over the content vocabulary in which every token has two
/// fixed successors: `next = succ[prev][coin]`. The successor table is a
/// function of `seed`, so masked tokens are predictable from neighbours.
pub fn bigram_corpus(
    vocab_size: usize,
    n_sequences: usize,
    len: (usize, usize),
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    let first = FIRST_CONTENT as usize;
    if vocab_size <= first + 1 {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} has no content tokens"
        )));
    }
    if len.0 == 0 || len.0 > len.1 {
        return Err(Error::Config(format!(
            "invalid length range {}..={}",
            len.0, len.1
        )));
    }
    let n_content = vocab_size - first;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let successors: Vec<[usize; 2]> = (0..n_content)
        .map(|_| {
            [
                rng.random_range(0..n_content),
                rng.random_range(0..n_content),
            ]
        })
        .collect();
    Ok((0..n_sequences)
        .map(|_| {
            let l = rng.random_range(len.0..=len.1);
            let mut cur = rng.random_range(0..n_content);
            let mut seq = Vec::with_capacity(l);
            for _ in 0..l {
                seq.push((cur + first) as u32);
                cur = successors[cur][rng.random_range(0..2)];
            }
            seq
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = bigram_corpus(64, 50, (4, 10), 1).unwrap();
        assert_eq!(a, bigram_corpus(64, 50, (4, 10), 1).unwrap());
        assert!(a.iter().all(|s| (4..=10).contains(&s.len())));
        assert!(a.iter().flatten().all(|&t| (4..64).contains(&t)));
    }

    #[test]
    fn each_token_has_at_most_two_successors() {
        let c = bigram_corpus(20, 400, (8, 8), 3).unwrap();
        let mut seen = vec![std::collections::BTreeSet::new(); 20];
        for s in &c {
            for w in s.windows(2) {
                seen[w[0] as usize].insert(w[1]);
            }
        }
        assert!(seen.iter().all(|s| s.len() <= 2));
    }
}
