//! Synthetic label noise: uniform flip transition matrices for discrete
//! labels, whole-vector outlier replacement for continuous labels, and
//! majority voting over several noisy label sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-stochastic-in-columns corruption model: `prob(j, i)` is the
/// probability of recording class `j` when the true class is `i`, so every
/// column sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    classes: usize,
    /// Row-major `classes x classes`.
    probs: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 || probs.len() != classes * classes {
            return Err(Error::InvalidInput(format!(
                "transition matrix needs K >= 2 and K*K entries, got K={classes}, {} entries",
                probs.len()
            )));
        }
        let t = TransitionMatrix { classes, probs };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidInput(
                "transition matrix has negative entries".into(),
            ));
        }
        for i in 0..self.classes {
            let col: f64 = (0..self.classes).map(|j| self.prob(j, i)).sum();
            if (col - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "transition matrix column {i} sums to {col}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `P(recorded = j | true = i)`.
    pub fn prob(&self, j: usize, i: usize) -> f64 {
        self.probs[j * self.classes + i]
    }

    /// Row-major entries, `t[j][i]` at `j * K + i`.
    pub fn entries(&self) -> &[f64] {
        &self.probs
    }

    /// The transpose as a row-major `(K, K)` buffer, i.e. `out[i][j] = t[j][i]`.
    /// Multiplying prediction rows by this maps clean class probabilities to
    /// noisy-label probabilities.
    pub fn transposed_entries(&self) -> Vec<f64> {
        let k = self.classes;
        let mut out = vec![0.0; k * k];
        for j in 0..k {
            for i in 0..k {
                out[i * k + j] = self.prob(j, i);
            }
        }
        out
    }
}

/// Uniform-flip matrix: diagonal `1 - rate`, off-diagonal `rate / (K - 1)`.
pub fn uniform_flip_matrix(classes: usize, rate: f64) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!(
            "uniform_flip_matrix needs K >= 2, got {classes}"
        )));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "flip rate must be in [0, 1), got {rate}"
        )));
    }
    let off = rate / (classes - 1) as f64;
    let mut probs = vec![off; classes * classes];
    for c in 0..classes {
        probs[c * classes + c] = 1.0 - rate;
    }
    TransitionMatrix::new(classes, probs)
}

/// Independently resample each label from the transition column of its true
/// class. Returns the noisy labels and the realized flip mask.
pub fn corrupt_discrete<R: Rng>(
    clean: &[usize],
    matrix: &TransitionMatrix,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let k = matrix.classes();
    let mut noisy = Vec::with_capacity(clean.len());
    let mut flipped = Vec::with_capacity(clean.len());
    for &c in clean {
        if c >= k {
            return Err(Error::InvalidInput(format!(
                "label {c} out of range for {k} classes"
            )));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut drawn = k - 1;
        for j in 0..k {
            acc += matrix.prob(j, c);
            if u < acc {
                drawn = j;
                break;
            }
        }
        noisy.push(drawn);
        flipped.push(drawn != c);
    }
    Ok((noisy, flipped))
}

/// With probability `rate` per sample, replace the whole `d`-vector by a
/// uniform draw from `[-1, 1]^d`. Returns noisy values and the outlier mask.
pub fn corrupt_continuous<R: Rng>(
    clean: &[f64],
    dim: usize,
    rate: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "outlier rate must be in [0, 1), got {rate}"
        )));
    }
    if dim == 0 || clean.len() % dim != 0 {
        return Err(Error::InvalidInput(format!(
            "continuous labels of length {} are not rows of dimension {dim}",
            clean.len()
        )));
    }
    let n = clean.len() / dim;
    let mut noisy = clean.to_vec();
    let mut mask = vec![false; n];
    for (i, replaced) in mask.iter_mut().enumerate() {
        if rng.random::<f64>() < rate {
            *replaced = true;
            for v in &mut noisy[i * dim..(i + 1) * dim] {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
    }
    Ok((noisy, mask))
}

/// Per-sample most frequent label over the given sets; ties are broken
/// uniformly at random with the experiment generator.
pub fn majority_vote<R: Rng>(label_sets: &[Vec<usize>], rng: &mut R) -> Result<Vec<usize>> {
    let first = label_sets
        .first()
        .ok_or_else(|| Error::InvalidInput("majority_vote over no label sets".into()))?;
    if label_sets.iter().any(|s| s.len() != first.len()) {
        return Err(Error::InvalidInput(
            "majority_vote label sets differ in length".into(),
        ));
    }
    let max_label = label_sets
        .iter()
        .flat_map(|s| s.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let mut counts = vec![0usize; max_label + 1];
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        counts.fill(0);
        for set in label_sets {
            counts[set[i]] += 1;
        }
        let best = *counts.iter().max().unwrap();
        let winners: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == best)
            .map(|(l, _)| l)
            .collect();
        let pick = if winners.len() == 1 {
            winners[0]
        } else {
            winners[rng.random_range(0..winners.len())]
        };
        out.push(pick);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn zero_rate_matrix_is_identity() {
        let t = uniform_flip_matrix(4, 0.0).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                assert_eq!(t.prob(j, i), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn twenty_percent_flip_matrix_entries() {
        let t = uniform_flip_matrix(10, 0.2).unwrap();
        for j in 0..10 {
            for i in 0..10 {
                let expect = if i == j { 0.8 } else { 0.2 / 9.0 };
                assert!((t.prob(j, i) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn binary_matrix_closed_form() {
        let t = uniform_flip_matrix(2, 0.4).unwrap();
        assert_eq!(t.entries(), &[0.6, 0.4, 0.4, 0.6]);
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(uniform_flip_matrix(4, 1.0).is_err());
        assert!(uniform_flip_matrix(1, 0.2).is_err());
    }

    #[test]
    fn identity_matrix_preserves_labels() {
        let t = uniform_flip_matrix(5, 0.0).unwrap();
        let clean: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let mut rng = stream_rng(1, "noise");
        let (noisy, flipped) = corrupt_discrete(&clean, &t, &mut rng).unwrap();
        assert_eq!(noisy, clean);
        assert!(flipped.iter().all(|f| !f));
    }

    #[test]
    fn realized_flip_rate_concentrates() {
        let t = uniform_flip_matrix(10, 0.3).unwrap();
        let clean: Vec<usize> = (0..100_000).map(|i| i % 10).collect();
        let mut rng = stream_rng(2, "noise");
        let (_, flipped) = corrupt_discrete(&clean, &t, &mut rng).unwrap();
        let rate = flipped.iter().filter(|f| **f).count() as f64 / flipped.len() as f64;
        assert!((rate - 0.3).abs() <= 0.01, "realized rate {rate}");
    }

    #[test]
    fn flips_are_uniform_over_wrong_classes() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let k = 10;
        let t = uniform_flip_matrix(k, 0.3).unwrap();
        let clean: Vec<usize> = vec![3; 100_000];
        let mut rng = stream_rng(3, "noise");
        let (noisy, flipped) = corrupt_discrete(&clean, &t, &mut rng).unwrap();
        let mut counts = vec![0usize; k];
        for (n, f) in noisy.iter().zip(&flipped) {
            if *f {
                counts[*n] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let expected = total as f64 / (k - 1) as f64;
        let stat: f64 = counts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != 3)
            .map(|(_, c)| (*c as f64 - expected).powi(2) / expected)
            .sum();
        let dist = ChiSquared::new((k - 2) as f64).unwrap();
        let p = 1.0 - dist.cdf(stat);
        assert!(p > 0.01, "chi-square stat {stat}, p {p}");
    }

    #[test]
    fn empirical_transition_frequencies_converge() {
        let k = 4;
        let t = uniform_flip_matrix(k, 0.25).unwrap();
        let mut rng = stream_rng(4, "noise");
        for i in 0..k {
            let clean = vec![i; 100_000];
            let (noisy, _) = corrupt_discrete(&clean, &t, &mut rng).unwrap();
            let mut counts = vec![0usize; k];
            for n in &noisy {
                counts[*n] += 1;
            }
            for (j, c) in counts.iter().enumerate() {
                let emp = *c as f64 / 100_000.0;
                assert!(
                    (emp - t.prob(j, i)).abs() <= 0.01,
                    "empirical t[{j}][{i}] = {emp}"
                );
            }
        }
    }

    #[test]
    fn continuous_zero_rate_is_identity() {
        let clean: Vec<f64> = (0..200).map(|i| (i as f64 / 100.0) - 1.0).collect();
        let mut rng = stream_rng(5, "noise");
        let (noisy, mask) = corrupt_continuous(&clean, 2, 0.0, &mut rng).unwrap();
        assert_eq!(noisy, clean);
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn continuous_full_replacement_is_uniform() {
        let n = 100_000;
        let clean = vec![0.9; n * 2];
        let mut rng = stream_rng(6, "noise");
        let (noisy, mask) = corrupt_continuous(&clean, 2, 0.999_999_999, &mut rng).unwrap();
        assert!(mask.iter().all(|m| *m));
        for dim in 0..2 {
            let mean: f64 =
                noisy.iter().skip(dim).step_by(2).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 0.02, "dim {dim} mean {mean}");
        }
    }

    #[test]
    fn continuous_replacement_fraction_concentrates() {
        let n = 100_000;
        let clean = vec![0.5; n * 3];
        let mut rng = stream_rng(7, "noise");
        let (_, mask) = corrupt_continuous(&clean, 3, 0.4, &mut rng).unwrap();
        let rate = mask.iter().filter(|m| **m).count() as f64 / n as f64;
        assert!((rate - 0.4).abs() <= 0.01, "replacement rate {rate}");
    }

    #[test]
    fn majority_vote_basic_cases() {
        let mut rng = stream_rng(8, "vote");
        let sets = vec![vec![1, 5], vec![1, 5], vec![2, 5]];
        assert_eq!(majority_vote(&sets, &mut rng).unwrap(), vec![1, 5]);
        assert!(majority_vote(&[], &mut rng).is_err());
    }

    #[test]
    fn majority_vote_is_permutation_invariant() {
        let mut rng_a = stream_rng(9, "vote");
        let mut rng_b = stream_rng(9, "vote");
        let a = vec![1, 2, 3, 0, 1];
        let b = vec![1, 3, 3, 1, 2];
        let c = vec![2, 2, 0, 1, 1];
        let v1 = majority_vote(&[a.clone(), b.clone(), c.clone()], &mut rng_a).unwrap();
        let v2 = majority_vote(&[c, a, b], &mut rng_b).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn majority_vote_reduces_noise_rate() {
        // Three independent 40% uniform-flip sets over 10 classes: voting
        // must yield strictly fewer wrong labels than any single set.
        let k = 10;
        let n = 100_000;
        let t = uniform_flip_matrix(k, 0.4).unwrap();
        let clean: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut rng = stream_rng(10, "noise");
        let sets: Vec<Vec<usize>> = (0..3)
            .map(|_| corrupt_discrete(&clean, &t, &mut rng).unwrap().0)
            .collect();
        let mut vote_rng = stream_rng(10, "vote");
        let voted = majority_vote(&sets, &mut vote_rng).unwrap();
        let vote_noise =
            voted.iter().zip(&clean).filter(|(v, c)| v != c).count() as f64 / n as f64;
        assert!(vote_noise < 0.4, "vote noise {vote_noise}");
    }

    #[test]
    fn corruption_is_reproducible() {
        let t = uniform_flip_matrix(6, 0.3).unwrap();
        let clean: Vec<usize> = (0..1000).map(|i| i % 6).collect();
        let mut r1 = stream_rng(11, "noise");
        let mut r2 = stream_rng(11, "noise");
        assert_eq!(
            corrupt_discrete(&clean, &t, &mut r1).unwrap(),
            corrupt_discrete(&clean, &t, &mut r2).unwrap()
        );
    }
}
