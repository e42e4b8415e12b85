//! Negative samplers: uniform, popularity-weighted, dynamic hard negatives
//! (DNS), and the pieces of the diffusion path (hardest-candidate selection
//! and scheduled mixup).

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Cnsdiff,
    Random,
    Popularity,
    Dns,
}

/// Item catalogue with popularity weights for drawing negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativePool {
    num_items: usize,
    popularity: Vec<f64>,
    cumulative: Vec<f64>,
}

const REJECTION_TRIES: usize = 64;

impl NegativePool {
    pub fn new(popularity: &[usize]) -> Self {
        let popularity: Vec<f64> = popularity.iter().map(|&p| p as f64).collect();
        let mut acc = 0.0;
        let cumulative = popularity
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            num_items: popularity.len(),
            popularity,
            cumulative,
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    fn check(&self, positives: &[usize]) -> Result<()> {
        if positives.len() >= self.num_items {
            return Err(Error::NoNegativeAvailable(self.num_items));
        }
        Ok(())
    }

    fn complement<'a>(&'a self, positives: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
        (0..self.num_items).filter(move |v| positives.binary_search(v).is_err())
    }

    /// Uniform over items not in `positives` (sorted, deduplicated).
    pub fn uniform<R: Rng>(&self, positives: &[usize], rng: &mut R) -> Result<usize> {
        self.check(positives)?;
        for _ in 0..REJECTION_TRIES {
            let v = rng.random_range(0..self.num_items);
            if positives.binary_search(&v).is_err() {
                return Ok(v);
            }
        }
        let free = self.num_items - positives.len();
        let k = rng.random_range(0..free);
        Ok(self
            .complement(positives)
            .nth(k)
            .expect("complement has `free` items"))
    }

    /// Proportional to popularity over items not in `positives`; uniform when
    /// every remaining item has zero popularity.
    pub fn popular<R: Rng>(&self, positives: &[usize], rng: &mut R) -> Result<usize> {
        self.check(positives)?;
        let total = self.cumulative.last().copied().unwrap_or(0.0);
        if total > 0.0 {
            for _ in 0..REJECTION_TRIES {
                let x = rng.random::<f64>() * total;
                let v = self
                    .cumulative
                    .partition_point(|&c| c <= x)
                    .min(self.num_items - 1);
                if self.popularity[v] > 0.0 && positives.binary_search(&v).is_err() {
                    return Ok(v);
                }
            }
        }
        let free_weight: f64 = self.complement(positives).map(|v| self.popularity[v]).sum();
        if free_weight <= 0.0 {
            return self.uniform(positives, rng);
        }
        let mut x = rng.random::<f64>() * free_weight;
        let mut last = 0;
        for v in self.complement(positives) {
            if self.popularity[v] > 0.0 {
                last = v;
                if x < self.popularity[v] {
                    return Ok(v);
                }
                x -= self.popularity[v];
            }
        }
        Ok(last)
    }

    /// DNS candidates: `n_cand` uniform draws with replacement, or the whole
    /// complement when it has at most `n_cand` items.
    pub fn dns_candidates<R: Rng>(
        &self,
        positives: &[usize],
        n_cand: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        self.check(positives)?;
        if n_cand == 0 {
            return Err(invalid("dns needs at least one candidate"));
        }
        if self.num_items - positives.len() <= n_cand {
            return Ok(self.complement(positives).collect());
        }
        (0..n_cand).map(|_| self.uniform(positives, rng)).collect()
    }

    /// Highest-scoring `m` distinct DNS candidates, best first; equal scores
    /// favour the lower item index.
    pub fn dns_top<R: Rng>(
        &self,
        positives: &[usize],
        n_cand: usize,
        m: usize,
        score: impl Fn(usize) -> f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let mut cands = self.dns_candidates(positives, n_cand, rng)?;
        cands.sort_unstable();
        cands.dedup();
        let mut scored: Vec<(f64, usize)> = cands.into_iter().map(|v| (score(v), v)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(m.max(1)).map(|(_, v)| v).collect())
    }
}

/// One negative item for a baseline sampler. `score` is only used by DNS.
pub fn baseline_sample<R: Rng>(
    kind: SamplerKind,
    pool: &NegativePool,
    positives: &[usize],
    n_cand: usize,
    score: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<usize> {
    match kind {
        SamplerKind::Random | SamplerKind::Cnsdiff => pool.uniform(positives, rng),
        SamplerKind::Popularity => pool.popular(positives, rng),
        SamplerKind::Dns => Ok(pool.dns_top(positives, n_cand, 1, score, rng)?[0]),
    }
}

/// Index of the candidate with the largest inner product with `z_u`; ties go
/// to the smallest step `t`.
pub fn select_hardest(z_u: &[f64], candidates: &[(usize, Vec<f64>)]) -> Result<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (k, (t, h)) in candidates.iter().enumerate() {
        let s = math::dot(z_u, h);
        let better = match best {
            None => true,
            Some((_, bs, bt)) => s > bs || (s == bs && *t < bt),
        };
        if better {
            best = Some((k, s, *t));
        }
    }
    best.map(|b| b.0).ok_or(Error::EmptyCandidates)
}

/// Linear curriculum between two (random, generated) mixup weight pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSchedule {
    pub initial: [f64; 2],
    pub last: [f64; 2],
    pub total_epochs: usize,
}

impl MixSchedule {
    pub fn new(initial: [f64; 2], last: [f64; 2], total_epochs: usize) -> Result<Self> {
        for pair in [initial, last] {
            if pair.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || pair[0] + pair[1] <= 0.0 {
                return Err(invalid(
                    "mix weights must be nonnegative with a positive sum",
                ));
            }
        }
        Ok(Self {
            initial,
            last,
            total_epochs,
        })
    }

    fn normalized(pair: [f64; 2]) -> [f64; 2] {
        let s = pair[0] + pair[1];
        [pair[0] / s, pair[1] / s]
    }

    /// `(alpha, beta)` summing to one; epochs past the end hold the final pair.
    pub fn weights_at(&self, epoch: usize) -> (f64, f64) {
        let a = Self::normalized(self.initial);
        let b = Self::normalized(self.last);
        if self.total_epochs == 0 {
            return (a[0], a[1]);
        }
        if epoch >= self.total_epochs {
            return (b[0], b[1]);
        }
        let f = epoch as f64 / self.total_epochs as f64;
        let alpha = a[0] + f * (b[0] - a[0]);
        (alpha, 1.0 - alpha)
    }
}

pub fn mix_weights_at(schedule: &MixSchedule, epoch: usize) -> (f64, f64) {
    schedule.weights_at(epoch)
}

/// `alpha * e_r + beta * e_h`.
pub fn mix_negative(e_r: &[f64], e_h: &[f64], weights: (f64, f64)) -> Vec<f64> {
    e_r.iter()
        .zip(e_h)
        .map(|(r, h)| weights.0 * r + weights.1 * h)
        .collect()
}
