use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Label};

/// Train/validation/test proportions plus the seed that drives the shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
}

fn default_stratified() -> bool {
    true
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
            stratified: true,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        let in_range = fr.iter().all(|f| f.is_finite() && (0.0..=1.0).contains(f));
        if !in_range || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadFractions {
                train: self.train_fraction,
                val: self.val_fraction,
                test: self.test_fraction,
            });
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Quotas for one group of `n` items: (val, test). Train takes the rest.
fn quotas(n: usize, spec: &SplitSpec) -> (usize, usize) {
    let val = round_half_up(spec.val_fraction * n as f64).min(n);
    let test = round_half_up(spec.test_fraction * n as f64).min(n - val);
    (val, test)
}

/// Partitions a corpus into (train, validation, test).
///
/// Under stratification each class is shuffled and cut separately, so every
/// partition's class counts are the rounded per-class quotas. Records keep
/// their file order inside each partition.
pub fn stratified_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let groups: Vec<Vec<usize>> = if spec.stratified {
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            (0..corpus.len()).partition(|&i| corpus.records[i].label == Label::Climate);
        if !corpus.is_empty() && (pos.is_empty() || neg.is_empty()) {
            let only = if pos.is_empty() { Label::Other } else { Label::Climate };
            return Err(CorpusError::SingleClass(only.as_u8()));
        }
        vec![neg, pos]
    } else {
        vec![(0..corpus.len()).collect()]
    };

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        group.shuffle(&mut rng);
        let (n_val, n_test) = quotas(group.len(), spec);
        val.extend_from_slice(&group[..n_val]);
        test.extend_from_slice(&group[n_val..n_val + n_test]);
        train.extend_from_slice(&group[n_val + n_test..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }

    let name = corpus.name();
    Ok((
        corpus.subset(format!("{name}/train"), &train),
        corpus.subset(format!("{name}/val"), &val),
        corpus.subset(format!("{name}/test"), &test),
    ))
}
