use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Interaction};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{self, Stream};

/// Parameters of the confounded generator.
///
/// An interaction (u, v) is observed iff u truly prefers v and v is exposed
/// to u under an environment drawn for that pair. Exposure `phi(v, e)` is
/// stored item-major: `exposure[v * num_envs + e]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_envs: usize,
    pub exposure: Vec<f64>,
    /// Distribution the per-pair environment is drawn from.
    pub env_weights: Vec<f64>,
    pub preference_rank: usize,
    /// Fraction of items each user truly prefers (top of the planted scores).
    pub preference_density: f64,
    /// Intended false-negative rate per environment, for reference.
    pub target_fnr: Vec<f64>,
    /// Timestamp span of one environment; env e covers `[e*span, (e+1)*span)`.
    #[serde(default = "default_span")]
    pub env_time_span: i64,
    pub seed: u64,
}

fn default_span() -> i64 {
    1_000_000
}

/// The planted truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub num_users: usize,
    pub num_items: usize,
    /// Planted user-item affinity, row-major `M x N`.
    pub scores: Vec<f64>,
    /// True preference `Y_uv`, row-major `M x N`.
    pub preferred: Vec<bool>,
    /// Environment under which each item is most exposed.
    pub item_env_affinity: Vec<usize>,
    /// Preferred pairs whose drawn environment was `e`.
    pub preferred_per_env: Vec<usize>,
    /// Preferred-but-unexposed pairs over preferred pairs, per environment.
    pub realized_fnr: Vec<f64>,
    /// `1 - mean phi(v, e)` over the preferred pairs assigned to `e`.
    pub expected_fnr: Vec<f64>,
    /// Environment of each emitted interaction, aligned with the dataset.
    pub interaction_envs: Vec<usize>,
}

impl GroundTruth {
    pub fn is_preferred(&self, user: usize, item: usize) -> bool {
        self.preferred[user * self.num_items + item]
    }
}

impl SyntheticSpec {
    /// Popularity-confounded preset: items are exposed along a power law of a
    /// random popularity rank, with the power-law exponent varying across
    /// environments from `skew.0` (env 0) to `skew.1` (last env), and floored
    /// at `floor`. Environments are drawn uniformly.
    pub fn confounded(
        num_users: usize,
        num_items: usize,
        num_envs: usize,
        skew: (f64, f64),
        floor: f64,
        preference_density: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rng::stream(seed, Stream::Synthetic, 1);
        let mut rank: Vec<usize> = (0..num_items).collect();
        rand::seq::SliceRandom::shuffle(rank.as_mut_slice(), &mut rng);
        let mut exposure = vec![0.0; num_items * num_envs];
        for v in 0..num_items {
            for e in 0..num_envs {
                let frac = if num_envs > 1 {
                    e as f64 / (num_envs - 1) as f64
                } else {
                    0.0
                };
                let s = skew.0 + (skew.1 - skew.0) * frac;
                let base = math::pow((rank[v] + 1) as f64, -s);
                exposure[v * num_envs + e] =
                    (floor + (1.0 - floor) * base).clamp(f64::MIN_POSITIVE, 1.0);
            }
        }
        let target_fnr = (0..num_envs)
            .map(|e| {
                1.0 - (0..num_items)
                    .map(|v| exposure[v * num_envs + e])
                    .sum::<f64>()
                    / num_items as f64
            })
            .collect();
        Self {
            num_users,
            num_items,
            num_envs,
            exposure,
            env_weights: vec![1.0; num_envs],
            preference_rank: 8,
            preference_density,
            target_fnr,
            env_time_span: default_span(),
            seed,
        }
    }

    /// Same exposure `phi` for every item and environment.
    pub fn uniform_exposure(
        num_users: usize,
        num_items: usize,
        num_envs: usize,
        phi: f64,
        density: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_users,
            num_items,
            num_envs,
            exposure: vec![phi; num_items * num_envs],
            env_weights: vec![1.0; num_envs],
            preference_rank: 8,
            preference_density: density,
            target_fnr: vec![1.0 - phi; num_envs],
            env_time_span: default_span(),
            seed,
        }
    }

    pub fn phi(&self, item: usize, env: usize) -> f64 {
        self.exposure[item * self.num_envs + env]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0
            || self.num_items == 0
            || self.num_envs == 0
            || self.preference_rank == 0
        {
            return Err(invalid("synthetic counts must be positive"));
        }
        if self.exposure.len() != self.num_items * self.num_envs {
            return Err(invalid("exposure must have num_items * num_envs entries"));
        }
        if self.exposure.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(invalid("exposure probabilities must lie in (0, 1]"));
        }
        if self.target_fnr.len() != self.num_envs
            || self.target_fnr.iter().any(|&t| !(0.0..1.0).contains(&t))
        {
            return Err(invalid(
                "target_fnr must have one value in [0, 1) per environment",
            ));
        }
        if self.env_weights.len() != self.num_envs
            || self
                .env_weights
                .iter()
                .any(|&w| !(w >= 0.0 && w.is_finite()))
            || self.env_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(invalid(
                "env_weights must be non-negative with positive sum",
            ));
        }
        if !(self.preference_density > 0.0 && self.preference_density <= 1.0) {
            return Err(invalid("preference_density must lie in (0, 1]"));
        }
        if self.env_time_span <= 0 {
            return Err(invalid("env_time_span must be positive"));
        }
        Ok(())
    }
}

fn draw_env<R: Rng>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut x = rng.random::<f64>() * total;
    for (e, &w) in weights.iter().enumerate() {
        if x < w {
            return e;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generate a confounded dataset together with the truth that produced it.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (m, n, ne, r) = (
        spec.num_users,
        spec.num_items,
        spec.num_envs,
        spec.preference_rank,
    );
    let mut rng = rng::stream(spec.seed, Stream::Synthetic, 0);

    let mut user_f = vec![0.0; m * r];
    let mut item_f = vec![0.0; n * r];
    rng::fill_gaussian(&mut rng, &mut user_f);
    rng::fill_gaussian(&mut rng, &mut item_f);
    let scale = 1.0 / math::sqrt(r as f64);
    let mut scores = vec![0.0; m * n];
    for u in 0..m {
        for v in 0..n {
            scores[u * n + v] =
                scale * math::dot(&user_f[u * r..(u + 1) * r], &item_f[v * r..(v + 1) * r]);
        }
    }

    let keep = (math::ceil(spec.preference_density * n as f64 - 1e-9) as usize).clamp(1, n);
    let mut preferred = vec![false; m * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for u in 0..m {
        order.clear();
        order.extend(0..n);
        let row = &scores[u * n..(u + 1) * n];
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &v in &order[..keep] {
            preferred[u * n + v] = true;
        }
    }

    let total_w: f64 = spec.env_weights.iter().sum();
    let mut preferred_per_env = vec![0usize; ne];
    let mut unexposed_per_env = vec![0usize; ne];
    let mut phi_sum = vec![0.0; ne];
    let mut interactions = Vec::new();
    let mut interaction_envs = Vec::new();
    for u in 0..m {
        for v in 0..n {
            if !preferred[u * n + v] {
                continue;
            }
            let e = draw_env(&spec.env_weights, total_w, &mut rng);
            let phi = spec.phi(v, e);
            preferred_per_env[e] += 1;
            phi_sum[e] += phi;
            let exposed = rng.random::<f64>() < phi;
            let offset = rng.random_range(0..spec.env_time_span);
            if exposed {
                interactions.push(Interaction {
                    user: u,
                    item: v,
                    timestamp: e as i64 * spec.env_time_span + offset,
                    rating: 1.0,
                });
                interaction_envs.push(e);
            } else {
                unexposed_per_env[e] += 1;
            }
        }
    }
    if interactions.is_empty() {
        return Err(Error::DegenerateSynthetic);
    }

    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let realized_fnr = (0..ne)
        .map(|e| ratio(unexposed_per_env[e] as f64, preferred_per_env[e]))
        .collect();
    let expected_fnr = (0..ne)
        .map(|e| {
            if preferred_per_env[e] == 0 {
                0.0
            } else {
                1.0 - phi_sum[e] / preferred_per_env[e] as f64
            }
        })
        .collect();
    let item_env_affinity = (0..n)
        .map(|v| math::argmax((0..ne).map(|e| spec.phi(v, e))).unwrap_or(0))
        .collect();

    let dataset = Dataset::with_numeric_ids(m, n, interactions)?;
    let truth = GroundTruth {
        num_users: m,
        num_items: n,
        scores,
        preferred,
        item_env_affinity,
        preferred_per_env,
        realized_fnr,
        expected_fnr,
        interaction_envs,
    };
    Ok((dataset, truth))
}
