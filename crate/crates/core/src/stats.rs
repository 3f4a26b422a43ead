//! Mask-aware sample moments and autocorrelation.
//!
//! Every statistic skips masked entries. Lagged products use pairwise
//! deletion: a pair `(i, i + lag)` contributes only if both ends are valid,
//! and nothing is imputed. Normalization is by the count (population form)
//! so that the lag-0 autocorrelation is exactly one.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no valid entries")]
    NoValidData,
    #[error("need at least {needed} valid entries, found {found}")]
    NotEnoughValidData { needed: usize, found: usize },
    #[error("need at least 2 valid pairs at lag {lag}, found {found}")]
    NotEnoughValidPairs { lag: usize, found: usize },
    #[error("series has zero variance; autocorrelation undefined")]
    ZeroVariance,
    #[error("lag must be at least 1")]
    ZeroLag,
}

/// Borrowed view of a real sequence with its validity mask.
#[derive(Debug, Clone, Copy)]
pub struct Masked<'a, T> {
    values: &'a [T],
    valid: &'a [bool],
}

impl<'a, T: Scalar> Masked<'a, T> {
    /// # Panics
    /// If `values` and `valid` differ in length.
    pub fn new(values: &'a [T], valid: &'a [bool]) -> Self {
        assert_eq!(values.len(), valid.len(), "values and mask must be aligned");
        Self { values, valid }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<T> {
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn values(&self) -> &'a [T] {
        self.values
    }

    pub fn mask(&self) -> &'a [bool] {
        self.valid
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = T> + 'a {
        self.values
            .iter()
            .zip(self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&ok| ok).count()
    }

    /// Restrict the view to `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Masked<'a, T> {
        Masked {
            values: &self.values[range.clone()],
            valid: &self.valid[range],
        }
    }
}

/// One autocorrelation estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcfEstimate<T> {
    pub lag: usize,
    pub rho: T,
    pub pair_count: usize,
}

pub fn mean<T: Scalar>(x: Masked<'_, T>) -> Result<T, StatsError> {
    let (sum, n) = x
        .iter_valid()
        .fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(StatsError::NoValidData);
    }
    Ok(sum / T::from_count(n))
}

/// Population variance (divide by the valid count).
pub fn variance<T: Scalar>(x: Masked<'_, T>) -> Result<T, StatsError> {
    let n = x.valid_count();
    if n < 2 {
        return Err(StatsError::NotEnoughValidData { needed: 2, found: n });
    }
    let mu = mean(x)?;
    let ss: T = x.iter_valid().map(|v| (v - mu) * (v - mu)).sum();
    Ok((ss / T::from_count(n)).max(T::zero()))
}

/// Sample autocorrelation at `lag` with pairwise deletion.
///
/// The mean and variance come from all valid entries; the lagged sum runs
/// over pairs whose two ends are both valid and is divided by the pair
/// count. Estimates are clamped to `[-1, 1]`.
pub fn acf<T: Scalar>(x: Masked<'_, T>, lag: usize) -> Result<AcfEstimate<T>, StatsError> {
    if lag == 0 {
        return Err(StatsError::ZeroLag);
    }
    let mu = mean(x)?;
    let var = variance(x)?;
    acf_with_moments(x, lag, mu, var)
}

pub(crate) fn acf_with_moments<T: Scalar>(
    x: Masked<'_, T>,
    lag: usize,
    mu: T,
    var: T,
) -> Result<AcfEstimate<T>, StatsError> {
    if lag == 0 {
        return Err(StatsError::ZeroLag);
    }
    let n = x.len();
    let mut sum = T::zero();
    let mut pairs = 0usize;
    for i in 0..n.saturating_sub(lag) {
        if let (Some(a), Some(b)) = (x.get(i), x.get(i + lag)) {
            sum = sum + (a - mu) * (b - mu);
            pairs += 1;
        }
    }
    if pairs < 2 {
        return Err(StatsError::NotEnoughValidPairs { lag, found: pairs });
    }
    if var <= T::zero() {
        return Err(StatsError::ZeroVariance);
    }
    let rho = sum / (T::from_count(pairs) * var);
    Ok(AcfEstimate {
        lag,
        rho: rho.max(-T::one()).min(T::one()),
        pair_count: pairs,
    })
}
