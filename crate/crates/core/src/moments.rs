//! Streaming mean and variance.

use serde::Serialize;

/// Welford accumulator; `merge` uses the Chan et al. update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }

    /// Sample variance with `count - 1` in the denominator.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_err(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Pairwise reduction whose tree depends only on the number of items, so
/// the result is the same however the items were produced.
pub fn merge_tree(items: &[Moments]) -> Moments {
    match items.len() {
        0 => Moments::default(),
        1 => items[0],
        len => {
            let (left, right) = items.split_at(len / 2);
            merge_tree(left).merge(&merge_tree(right))
        }
    }
}
