// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small numeric kernels shared across modules.

/// Correctly rounded floating-point sum.
///
/// Shewchuk's exact-partials algorithm (the one behind Python's
/// `math.fsum`): the running total is kept as a list of non-overlapping
/// partials whose exact sum equals the exact sum of the inputs so far. The
/// result is the exact sum rounded once, so it does not depend on input
/// order.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Fold another accumulator in; exact, so merge order does not matter.
    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        self.special += other.special;
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction when the discarded tail is exactly half
        // an ulp and the next partial pushes it over.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Correctly rounded sum of an iterator.
pub fn fsum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = ExactSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Shannon entropy in nats of integer counts, with `0 ln 0 = 0`.
///
/// Returns `None` when every count is zero.
pub fn entropy_from_counts(counts: &[u32]) -> Option<f64> {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return None;
    }
    let n = total as f64;
    let h = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = f64::from(c) / n;
            p * p.ln()
        })
        .sum::<f64>();
    // -0.0 for degenerate distributions reads oddly in logs.
    Some(if h <= 0.0 { 0.0 } else { h })
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy_from_probs(probs: &[f64]) -> f64 {
    let h = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    if h <= 0.0 {
        0.0
    } else {
        h
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
