//! Size-based weighting of training sources.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(1.2 + size_mib / 1024)`.
pub fn mixture_weight(size_mib: f64) -> Result<f64> {
    if !(size_mib >= 0.0) || !size_mib.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dataset size must be a finite non-negative number, got {size_mib}"
        )));
    }
    Ok((1.2 + size_mib / 1024.0).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub name: String,
    pub size_mib: f64,
    weight: f64,
}

impl DatasetSource {
    pub fn new(name: impl Into<String>, size_mib: f64) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            size_mib,
            weight: mixture_weight(size_mib)?,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Draws `n` source indices with probability proportional to their weights.
pub fn sample_mixture(sources: &[DatasetSource], n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = MixtureSampler::new(sources)?;
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

/// Reusable weighted sampler over a fixed source list.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    dist: WeightedIndex<f64>,
}

impl MixtureSampler {
    pub fn new(sources: &[DatasetSource]) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidArgument("no mixture sources".into()));
        }
        let dist = WeightedIndex::new(sources.iter().map(DatasetSource::weight))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// (name, compressed MiB, published weight)
    const TABLE: [(&str, f64, f64); 6] = [
        ("TriviaQA", 30.4, 0.21),
        ("Synthetic-100k", 59.5, 0.23),
        ("MSMARCO", 73.5, 0.24),
        ("CodeSearchNet", 294.0, 0.40),
        ("Miracl", 1035.9, 0.79),
        ("S2ORC", 10829.3, 2.47),
    ];

    #[test]
    fn reproduces_published_weights() {
        for (name, size, weight) in TABLE {
            let w = mixture_weight(size).unwrap();
            assert!((w - weight).abs() <= 0.005, "{name}: {w} vs {weight}");
        }
        assert_abs_diff_eq!(mixture_weight(0.0).unwrap(), 0.18232155, epsilon = 1e-8);
    }

    #[test]
    fn rejects_negative_size() {
        assert!(mixture_weight(-1.0).is_err());
        assert!(mixture_weight(f64::NAN).is_err());
        assert!(DatasetSource::new("x", -0.5).is_err());
    }

    #[test]
    fn weight_is_monotone() {
        let mut prev = mixture_weight(0.0).unwrap();
        for i in 1..200 {
            let w = mixture_weight(i as f64 * 37.5).unwrap();
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn single_source_always_zero() {
        let s = [DatasetSource::new("only", 10.0).unwrap()];
        assert_eq!(sample_mixture(&s, 5, 1).unwrap(), vec![0; 5]);
        assert!(sample_mixture(&[], 5, 1).is_err());
    }

    #[test]
    fn equal_sources_split_evenly() {
        let s = [
            DatasetSource::new("a", 100.0).unwrap(),
            DatasetSource::new("b", 100.0).unwrap(),
        ];
        let draws = sample_mixture(&s, 100_000, 7).unwrap();
        let freq = draws.iter().filter(|&&i| i == 0).count() as f64 / draws.len() as f64;
        assert!((freq - 0.5).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn table_mixture_frequencies() {
        let sources: Vec<_> = TABLE
            .iter()
            .map(|(n, s, _)| DatasetSource::new(*n, *s).unwrap())
            .collect();
        let draws = sample_mixture(&sources, 1_000_000, 42).unwrap();
        let s2orc = draws.iter().filter(|&&i| i == 5).count() as f64 / draws.len() as f64;
        let published: f64 = TABLE.iter().map(|t| t.2).sum();
        assert_abs_diff_eq!(published, 4.34, epsilon = 1e-9);
        assert!((s2orc - 2.47 / 4.34).abs() <= 0.01, "{s2orc}");
    }

    #[test]
    fn deterministic_for_seed() {
        let sources: Vec<_> = TABLE
            .iter()
            .map(|(n, s, _)| DatasetSource::new(*n, *s).unwrap())
            .collect();
        assert_eq!(
            sample_mixture(&sources, 1000, 3).unwrap(),
            sample_mixture(&sources, 1000, 3).unwrap()
        );
    }
}
