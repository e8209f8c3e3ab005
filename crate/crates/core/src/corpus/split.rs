use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

/// Development/test and train/validation proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Fraction of the corpus used for development (train + validation).
    pub dev_fraction: f64,
    /// Fraction of the development part held out for validation.
    pub val_fraction_of_dev: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            dev_fraction: 0.9,
            val_fraction_of_dev: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Split sizes by largest-remainder rounding of the three quotas; ties go to
/// the earlier part (train, then validation, then test).
pub(crate) fn split_sizes(n: usize, spec: &SplitSpec) -> [usize; 3] {
    let n_f = n as f64;
    let dev = n_f * spec.dev_fraction;
    let val = dev * spec.val_fraction_of_dev;
    let quotas = [dev - val, val, n_f - dev];
    // Snap away floating-point noise so e.g. 9.999999999999998 counts as 10.
    let snap = |q: f64| (q * 1e9).round() / 1e9;
    let mut sizes = [0usize; 3];
    let mut rema = [0f64; 3];
    for i in 0..3 {
        let q = snap(quotas[i]).max(0.0);
        sizes[i] = q.floor() as usize;
        rema[i] = q - q.floor();
    }
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rema[b].partial_cmp(&rema[a]).unwrap().then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Shuffle with the split seed, then slice into train | validation | test.
///
/// The validation part may only be empty when its fraction is exactly zero.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Split> {
    if corpus.is_empty() {
        return Err(Error::Split("corpus is empty".into()));
    }
    if !(spec.dev_fraction > 0.0 && spec.dev_fraction <= 1.0) {
        return Err(Error::Split(format!(
            "dev_fraction must be in (0, 1], got {}",
            spec.dev_fraction
        )));
    }
    if !(spec.val_fraction_of_dev >= 0.0 && spec.val_fraction_of_dev < 1.0) {
        return Err(Error::Split(format!(
            "val_fraction_of_dev must be in [0, 1), got {}",
            spec.val_fraction_of_dev
        )));
    }
    let [n_train, n_val, n_test] = split_sizes(corpus.len(), spec);
    if n_train == 0 {
        return Err(Error::Split("training split would be empty".into()));
    }
    if n_test == 0 {
        return Err(Error::Split("test split would be empty".into()));
    }
    if n_val == 0 && spec.val_fraction_of_dev > 0.0 {
        return Err(Error::Split("validation split would be empty".into()));
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |idx: &[usize]| {
        corpus.with_documents(idx.iter().map(|&i| corpus.documents[i].clone()).collect())
    };
    Ok(Split {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dev: f64, val: f64) -> SplitSpec {
        SplitSpec {
            dev_fraction: dev,
            val_fraction_of_dev: val,
            seed: 1,
        }
    }

    #[test]
    fn largest_remainder_sizes() {
        // quotas 76.5 / 13.5 / 10: one leftover seat, tie broken towards train.
        assert_eq!(split_sizes(100, &spec(0.9, 0.15)), [77, 13, 10]);
        assert_eq!(split_sizes(2000, &spec(0.9, 0.15)), [1530, 270, 200]);
        assert_eq!(split_sizes(10, &spec(0.5, 0.0)), [5, 0, 5]);
        assert_eq!(split_sizes(7, &spec(0.9, 0.15)), [5, 1, 1]);
    }

    #[test]
    fn sizes_always_sum_to_n() {
        for n in 1..200 {
            for dev in [0.1, 0.33, 0.5, 0.9, 1.0] {
                for val in [0.0, 0.15, 0.5, 0.99] {
                    let s = split_sizes(n, &spec(dev, val));
                    assert_eq!(s.iter().sum::<usize>(), n, "n={n} dev={dev} val={val}");
                }
            }
        }
    }
}
