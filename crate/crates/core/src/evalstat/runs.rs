//! Repeated holdout: n independent train/evaluate runs, each with its own
//! seed driving the split, initialisation, batch order and dropout.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetricKind, Metrics, StatError};
use crate::pipeline::{run_once, LoadedData, PipelineConfig, PipelineError};

/// Metrics of n runs in seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSample {
    pub name: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metrics>,
    /// Runs that failed; only populated in partial mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

impl RunSample {
    pub fn new(name: impl Into<String>, seeds: Vec<u64>, metrics: Vec<Metrics>) -> Result<Self, StatError> {
        let s = Self {
            name: name.into(),
            n: seeds.len(),
            seeds,
            metrics,
            failures: Vec::new(),
        };
        s.check()?;
        Ok(s)
    }

    pub fn values(&self, metric: MetricKind) -> Vec<f64> {
        self.metrics.iter().map(|m| m.get(metric)).collect()
    }

    pub fn check(&self) -> Result<(), StatError> {
        if self.n != self.metrics.len() || self.n != self.seeds.len() {
            return Err(StatError::Sample(format!(
                "n = {} but {} seeds and {} metric records",
                self.n,
                self.seeds.len(),
                self.metrics.len()
            )));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(StatError::Sample("seeds are not distinct".into()));
        }
        for (i, m) in self.metrics.iter().enumerate() {
            for k in MetricKind::ALL {
                let v = m.get(k);
                if !(0.0..=1.0).contains(&v) {
                    return Err(StatError::Sample(format!("run {i}: {k} = {v} is outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, StatError> {
        let s: Self = serde_json::from_str(text).map_err(|e| StatError::Sample(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run sample serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| StatError::Sample(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// `n` distinct seeds drawn from a stream keyed by `master`.
pub fn derive_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = rng.next_u64();
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub single_thread: bool,
    /// Keep completed runs when some fail instead of returning the first
    /// error.
    pub partial: bool,
}

/// Runs the pipeline once per seed and collects held-out metrics in seed
/// order. Seeds come from `seeds` when given, otherwise from
/// `cfg.eval.seed`.
pub fn repeated_runs(
    cfg: &PipelineConfig,
    n: usize,
    seeds: Option<&[u64]>,
    opts: RunOptions,
) -> Result<RunSample, PipelineError> {
    if n == 0 {
        return Err(StatError::Sample("n must be at least 1".into()).into());
    }
    let seeds = match seeds {
        Some(s) if s.len() != n => {
            return Err(StatError::Sample(format!("{} seeds supplied for {n} runs", s.len())).into())
        }
        Some(s) => s.to_vec(),
        None => derive_seeds(cfg.eval.seed, n),
    };
    if seeds.iter().collect::<BTreeSet<_>>().len() != n {
        return Err(StatError::Sample("seeds are not distinct".into()).into());
    }
    let data = LoadedData::load(cfg)?;
    let run = |seed: u64| run_once(cfg, &data, seed).map(|o| o.held_out().metrics.clone());

    let workers = if opts.single_thread {
        1
    } else {
        std::thread::available_parallelism().map_or(1, |p| p.get()).min(n)
    };
    let results: Vec<Result<Metrics, PipelineError>> = if workers <= 1 {
        seeds.iter().map(|&s| run(s)).collect()
    } else {
        let slots: Vec<Mutex<Option<Result<Metrics, PipelineError>>>> =
            seeds.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= seeds.len() {
                        break;
                    }
                    let r = run(seeds[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    };

    let mut kept_seeds = Vec::with_capacity(n);
    let mut metrics = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (seed, r) in seeds.into_iter().zip(results) {
        match r {
            Ok(m) => {
                kept_seeds.push(seed);
                metrics.push(m);
            }
            Err(e) if opts.partial => failures.push(RunFailure {
                seed,
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(RunSample {
        name: cfg.name.clone(),
        n: kept_seeds.len(),
        seeds: kept_seeds,
        metrics,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstat::{metrics as score, summarize, ConfusionMatrix};

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seeds(42, 25);
        assert_eq!(a.len(), 25);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 25);
        assert_eq!(a, derive_seeds(42, 25));
        assert_eq!(&derive_seeds(42, 30)[..25], &a[..]);
        assert_ne!(a, derive_seeds(43, 25));
    }

    fn m(tp: u64, tn: u64) -> Metrics {
        score(&ConfusionMatrix {
            tp,
            fp: 10 - tn,
            fn_: 10 - tp,
            tn,
        })
        .unwrap()
    }

    #[test]
    fn sample_json_roundtrip_and_checks() {
        let s = RunSample::new("bert", vec![3, 1, 2], vec![m(8, 9), m(9, 9), m(7, 10)]).unwrap();
        let back = RunSample::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert!(RunSample::new("x", vec![1, 1], vec![m(1, 1), m(2, 2)]).is_err());
        let mut bad = s.clone();
        bad.n = 4;
        assert!(RunSample::from_json(&bad.to_json()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn json_roundtrip(runs in proptest::collection::vec((0u64..=10, 0u64..=10, proptest::num::u64::ANY), 1..12)) {
            let mut seen = BTreeSet::new();
            let runs: Vec<_> = runs.into_iter().filter(|r| seen.insert(r.2)).collect();
            let seeds = runs.iter().map(|r| r.2).collect();
            let metrics = runs.iter().map(|&(tp, tn, _)| m(tp, tn)).collect();
            let s = RunSample::new("p", seeds, metrics).unwrap();
            proptest::prop_assert_eq!(RunSample::from_json(&s.to_json()).unwrap(), s);
        }
    }

    #[test]
    fn single_run_sample_cannot_be_summarized() {
        let s = RunSample::new("one", vec![7], vec![m(5, 5)]).unwrap();
        assert_eq!(s.n, 1);
        assert!(matches!(
            summarize(&s, MetricKind::Accuracy),
            Err(StatError::TooFewRuns(1))
        ));
    }
}
