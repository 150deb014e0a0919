//! Dimension subsets and their enumeration or uniform sampling.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Strictly increasing list of hidden-dimension indices. May be empty.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimensionSubset(Vec<usize>);

impl DimensionSubset {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "subset {indices:?} is not strictly increasing"
            )));
        }
        Ok(Self(indices))
    }

    /// Sorts the indices; duplicates are rejected.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn full(d_model: usize) -> Self {
        Self((0..d_model).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.0.binary_search(&dim).is_ok()
    }

    pub fn without(&self, dim: usize) -> Self {
        Self(self.0.iter().copied().filter(|&d| d != dim).collect())
    }

    pub fn check_within(&self, d_model: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= d_model => Err(Error::Index {
                index: last,
                limit: d_model,
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DimensionSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for DimensionSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Self::empty());
        }
        let dims = s
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Validation(format!("bad dimension {p:?} in subset {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }
}

/// How many subsets of size `k` to take.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    Exhaustive,
    /// Fraction of the population, rounded to the nearest count.
    Rate(f64),
    Count(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetSample {
    pub d_model: usize,
    pub k: usize,
    pub population: u64,
    pub mode: SampleMode,
    pub seed: u64,
    /// Lexicographically sorted, all distinct.
    pub subsets: Vec<DimensionSubset>,
}

/// Number of `k`-subsets of `n` items; errors if it does not fit in a u64.
pub fn binomial(n: usize, k: usize) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return Err(Error::Sampling(format!("C({n},{k}) overflows")));
        }
    }
    Ok(acc as u64)
}

/// Size of the subset population for `d_model` dimensions taken `k` at a time.
pub fn population(d_model: usize, k: usize) -> Result<u64> {
    if k > d_model {
        return Err(Error::Sampling(format!("k={k} exceeds d_model={d_model}")));
    }
    binomial(d_model, k)
}

/// The subset at position `rank` in the lexicographic order of all
/// `k`-subsets of `0..n`.
pub fn unrank(n: usize, k: usize, mut rank: u64) -> Result<DimensionSubset> {
    if rank >= binomial(n, k)? {
        return Err(Error::Sampling(format!("rank {rank} outside C({n},{k})")));
    }
    let mut out = Vec::with_capacity(k);
    let mut x = 0;
    for i in 0..k {
        loop {
            let with_x = binomial(n - x - 1, k - i - 1)?;
            if rank < with_x {
                break;
            }
            rank -= with_x;
            x += 1;
        }
        out.push(x);
        x += 1;
    }
    Ok(DimensionSubset(out))
}

fn exhaustive(n: usize, k: usize) -> Vec<DimensionSubset> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(DimensionSubset(cur.clone()));
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Every `k`-subset in lexicographic order, or a seeded uniform sample
/// without replacement (returned in lexicographic order).
pub fn enumerate_or_sample_subsets(
    d_model: usize,
    k: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<SubsetSample> {
    let pop = population(d_model, k)?;
    let count = match mode {
        SampleMode::Exhaustive => pop,
        SampleMode::Rate(r) => {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Sampling(format!("rate {r} outside (0, 1]")));
            }
            (r * pop as f64).round() as u64
        }
        SampleMode::Count(c) => {
            if c > pop {
                return Err(Error::Sampling(format!(
                    "{c} subsets requested but only C({d_model},{k})={pop} exist"
                )));
            }
            c
        }
    };
    let subsets = if count == pop {
        if pop > usize::MAX as u64 {
            return Err(Error::Sampling(format!(
                "population {pop} too large to enumerate"
            )));
        }
        exhaustive(d_model, k)
    } else {
        if pop > u32::MAX as u64 {
            return Err(Error::Sampling(format!(
                "population {pop} too large to sample"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ranks = rand::seq::index::sample(&mut rng, pop as usize, count as usize).into_vec();
        ranks.sort_unstable();
        ranks
            .into_iter()
            .map(|r| unrank(d_model, k, r as u64))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SubsetSample {
        d_model,
        k,
        population: pop,
        mode,
        seed,
        subsets,
    })
}
