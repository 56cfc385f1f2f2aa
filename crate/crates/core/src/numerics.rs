//! Compensated floating-point accumulation.

use crate::scalar::Scalar;

/// Kahan compensated accumulator.
///
/// Used wherever a reduction feeds a reproducibility-sensitive value (kernel
/// sums, creation rates, cumulative distributions). Summation order is fixed
/// by the caller; the compensation keeps the result independent of the
/// magnitude drift of the running sum.
#[derive(Debug, Clone, Copy)]
pub struct KahanSum<S: Scalar> {
    sum: S,
    comp: S,
}

impl<S: Scalar> Default for KahanSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> KahanSum<S> {
    pub fn new() -> Self {
        Self { sum: S::zero(), comp: S::zero() }
    }

    #[inline]
    pub fn add(&mut self, value: S) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum
    }

    pub fn sum_iter<I: IntoIterator<Item = S>>(iter: I) -> S {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc.value()
    }
}
