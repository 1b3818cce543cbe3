use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Random,
    Scaffold,
}

impl std::str::FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "scaffold" => Ok(Self::Scaffold),
            other => Err(format!("unknown split kind '{other}' (expected random or scaffold)")),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Scaffold => "scaffold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), TrainError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TrainError::InvalidRatios(parts));
        }
        Ok(())
    }

    /// Floor-based sizes for val and test; train takes the remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let val = (self.val * n as f64 + 1e-9).floor() as usize;
        let test = (self.test * n as f64 + 1e-9).floor() as usize;
        [n - val - test, val, test]
    }
}

/// Sorted index lists of a three-way partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(skip, default = "default_kind")]
    pub kind: SplitKind,
    #[serde(skip)]
    pub seed: u64,
}

fn default_kind() -> SplitKind {
    SplitKind::Random
}

impl SplitAssignment {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Val or test came out empty.
    pub fn is_degenerate(&self) -> bool {
        self.val.is_empty() || self.test.is_empty()
    }

    /// Subset label per index: 0 train, 1 val, 2 test.
    pub fn labels(&self, n: usize) -> Vec<Option<u8>> {
        let mut out = vec![None; n];
        for (tag, list) in [&self.train, &self.val, &self.test].into_iter().enumerate() {
            for &i in list {
                if i < n {
                    out[i] = Some(tag as u8);
                }
            }
        }
        out
    }
}

pub fn random_split(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, TrainError> {
    ratios.validate()?;
    if n < MIN_SPLIT_SIZE {
        return Err(TrainError::DatasetTooSmall { n, min: MIN_SPLIT_SIZE });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = ratios.sizes(n);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment { train, val, test, kind: SplitKind::Random, seed })
}

/// Groups molecules by scaffold key, then assigns whole groups, largest
/// first (ties by key), to the subset furthest below its target size. The
/// result does not depend on `seed`; it is recorded for bookkeeping only.
pub fn scaffold_split<S: AsRef<str>>(keys: &[S], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, TrainError> {
    ratios.validate()?;
    let n = keys.len();
    if n < MIN_SPLIT_SIZE {
        return Err(TrainError::DatasetTooSmall { n, min: MIN_SPLIT_SIZE });
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.as_ref()).or_default().push(i);
    }
    let mut groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));

    let targets = ratios.sizes(n);
    let mut subsets: [Vec<usize>; 3] = Default::default();
    for (_, members) in groups {
        let deficit = |s: usize| targets[s] as i64 - subsets[s].len() as i64;
        let mut best = 0;
        for s in 1..3 {
            if deficit(s) > deficit(best) {
                best = s;
            }
        }
        subsets[best].extend(members);
    }
    for s in &mut subsets {
        s.sort_unstable();
    }
    let [train, val, test] = subsets;
    let out = SplitAssignment { train, val, test, kind: SplitKind::Scaffold, seed };
    if out.is_degenerate() {
        warn!("degenerate scaffold split: sizes {:?}", out.sizes());
    }
    Ok(out)
}
