//! Environment proxies, the variational posterior `q(e | x_t)` and the
//! causal regularizer: the negative variational bound
//! `sum_t E_q[-log p(x_{t-1} | x_t, e)] + KL(q(. | x_t) || p0)`.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{popularity_buckets, Dataset};
use crate::diffusion::{DenoiserCache, DenoiserNet, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvMode {
    /// Equal-count buckets of items ranked by training popularity.
    #[default]
    Popularity,
    /// Equal-count buckets of training interactions ordered by time.
    Timestamp,
    /// Externally supplied per-interaction labels.
    Given,
}

/// Environment assignment plus the posterior head `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModel {
    pub num_envs: usize,
    pub dim: usize,
    /// Prior `p0` over environments.
    pub prior: Vec<f64>,
    /// Environment of every dataset interaction.
    pub interaction_env: Vec<usize>,
    /// Majority environment of each item over training interactions.
    pub item_env: Vec<usize>,
    /// `num_envs x dim`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradients of the posterior head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros(num_envs: usize, dim: usize) -> Self {
        Self {
            w: vec![0.0; num_envs * dim],
            b: vec![0.0; num_envs],
        }
    }
}

/// Assign environments and estimate the prior from the training interactions.
pub fn assign_envs(
    dataset: &Dataset,
    train: &[usize],
    mode: EnvMode,
    num_envs: usize,
    labels: Option<&[usize]>,
    uniform_prior: bool,
    dim: usize,
) -> Result<EnvModel> {
    if num_envs == 0 {
        return Err(invalid("num_envs must be at least 1"));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows = dataset.interactions();
    let interaction_env = match mode {
        EnvMode::Popularity => {
            let mut pop = vec![0usize; dataset.num_items()];
            for &i in train {
                pop[rows[i].item] += 1;
            }
            let buckets = popularity_buckets(&pop, num_envs)?;
            rows.iter().map(|r| buckets[r.item]).collect()
        }
        EnvMode::Timestamp => {
            let mut order = train.to_vec();
            order.sort_by_key(|&i| (rows[i].timestamp, i));
            let n = order.len();
            let mut env = vec![usize::MAX; rows.len()];
            for (rank, &i) in order.iter().enumerate() {
                env[i] = rank * num_envs / n;
            }
            // boundaries for interactions outside train: first timestamp of each bucket
            let mut bounds = Vec::with_capacity(num_envs);
            for e in 1..num_envs {
                if let Some(&i) = order.get(e * n / num_envs) {
                    bounds.push(rows[i].timestamp);
                }
            }
            for (i, slot) in env.iter_mut().enumerate() {
                if *slot == usize::MAX {
                    *slot = bounds
                        .iter()
                        .filter(|&&b| b <= rows[i].timestamp)
                        .count()
                        .min(num_envs - 1);
                }
            }
            env
        }
        EnvMode::Given => {
            let labels = labels.ok_or(Error::MissingEnvLabels)?;
            if labels.len() != rows.len() {
                return Err(invalid("env label count does not match interaction count"));
            }
            if let Some(&bad) = labels.iter().find(|&&e| e >= num_envs) {
                return Err(invalid(alloc::format!(
                    "env label {bad} out of range for {num_envs} envs"
                )));
            }
            labels.to_vec()
        }
    };

    let mut counts = vec![0usize; num_envs];
    let mut per_item = vec![vec![0usize; num_envs]; dataset.num_items()];
    for &i in train {
        counts[interaction_env[i]] += 1;
        per_item[rows[i].item][interaction_env[i]] += 1;
    }
    let prior = if uniform_prior {
        vec![1.0 / num_envs as f64; num_envs]
    } else {
        counts
            .iter()
            .map(|&c| c as f64 / train.len() as f64)
            .collect()
    };
    let item_env = per_item
        .iter()
        .map(|c| math::argmax(c.iter().map(|&x| x as f64)).unwrap_or(0))
        .collect();
    Ok(EnvModel {
        num_envs,
        dim,
        prior,
        interaction_env,
        item_env,
        w: vec![0.0; num_envs * dim],
        b: vec![0.0; num_envs],
    })
}

impl EnvModel {
    /// Model with a given prior and a zero head; no interaction assignment.
    pub fn with_prior(prior: Vec<f64>, dim: usize) -> Result<Self> {
        let s: f64 = prior.iter().sum();
        if prior.is_empty()
            || prior.iter().any(|&p| p.is_nan() || p < 0.0)
            || (s - 1.0).abs() > 1e-9
        {
            return Err(invalid("prior must be a probability vector"));
        }
        let n = prior.len();
        Ok(Self {
            num_envs: n,
            dim,
            prior,
            interaction_env: Vec::new(),
            item_env: Vec::new(),
            w: vec![0.0; n * dim],
            b: vec![0.0; n],
        })
    }

    pub fn init_head<R: Rng>(&mut self, std: f64, rng: &mut R) {
        self.w
            .iter_mut()
            .for_each(|w| *w = std * rng::gaussian(rng));
        self.b.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (e, o) in out.iter_mut().enumerate() {
            *o = self.b[e] + math::dot(&self.w[e * self.dim..(e + 1) * self.dim], x);
        }
    }

    /// `q(e | x) = softmax(W x + b)`.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.num_envs];
        self.logits(x, &mut logits);
        let mut q = vec![0.0; self.num_envs];
        math::softmax(&logits, &mut q);
        q
    }

    /// Accumulate head gradients for upstream `dL/dq` at input `x`.
    pub fn posterior_backward(&self, x: &[f64], q: &[f64], d_q: &[f64], grads: &mut HeadGrads) {
        let mean: f64 = q.iter().zip(d_q).map(|(a, g)| a * g).sum();
        for e in 0..self.num_envs {
            let dl = q[e] * (d_q[e] - mean);
            grads.b[e] += dl;
            math::axpy(dl, x, &mut grads.w[e * self.dim..(e + 1) * self.dim]);
        }
    }
}

fn clamped_ln(p: f64) -> f64 {
    math::ln(p.clamp(PROB_FLOOR, 1.0))
}

/// `KL(q || p)` with both sides clamped to `[1e-12, 1]` inside the logs.
pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&a, &b)| a * (clamped_ln(a) - clamped_ln(b)))
        .sum()
}

/// One transition `(x_t, x_{t-1}, t)` of a reverse chain; treated as data.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalPair {
    pub x_t: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CausalTerms {
    /// Expected negative transition log-likelihood, constants dropped.
    pub nll: f64,
    pub kl: f64,
}

impl CausalTerms {
    pub fn total(&self) -> f64 {
        self.nll + self.kl
    }
}

struct PairEval {
    q: Vec<f64>,
    nll: Vec<f64>,
    mu: Vec<Vec<f64>>,
    caches: Vec<DenoiserCache>,
}

fn eval_pair(
    pair: &CausalPair,
    env: &EnvModel,
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
) -> PairEval {
    let t = pair.t;
    let d = pair.x_t.len();
    let (beta, c, inv) = (
        schedule.beta(t),
        schedule.eps_coef(t),
        1.0 / math::sqrt(schedule.alpha(t)),
    );
    let q = env.posterior(&pair.x_t);
    let mut nll = Vec::with_capacity(env.num_envs);
    let mut mu = Vec::with_capacity(env.num_envs);
    let mut caches = Vec::with_capacity(env.num_envs);
    let mut eps = vec![0.0; d];
    for e in 0..env.num_envs {
        let mut cache = DenoiserCache::default();
        net.forward(&pair.x_t, t, e, &mut cache, &mut eps);
        let m: Vec<f64> = pair
            .x_t
            .iter()
            .zip(&eps)
            .map(|(x, h)| inv * (x - c * h))
            .collect();
        let sq: f64 = pair
            .x_prev
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        nll.push(sq / (2.0 * beta));
        mu.push(m);
        caches.push(cache);
    }
    PairEval { q, nll, mu, caches }
}

/// Per-pair posterior means `q_bar` when the global KL variant is used.
fn mean_posterior(evals: &[PairEval], num_envs: usize) -> Vec<f64> {
    let mut qbar = vec![0.0; num_envs];
    for ev in evals {
        math::axpy(1.0 / evals.len() as f64, &ev.q, &mut qbar);
    }
    qbar
}

/// Sum over pairs of the negative bound. With `global_kl`, the per-pair KL
/// terms are replaced by `P * KL(q_bar || p0)` with `q_bar` the mean posterior.
pub fn causal_regularizer(
    pairs: &[CausalPair],
    env: &EnvModel,
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    global_kl: bool,
) -> CausalTerms {
    let evals: Vec<PairEval> = pairs
        .iter()
        .map(|p| eval_pair(p, env, net, schedule))
        .collect();
    terms(&evals, env, global_kl)
}

fn terms(evals: &[PairEval], env: &EnvModel, global_kl: bool) -> CausalTerms {
    let mut out = CausalTerms::default();
    for ev in evals {
        out.nll += ev.q.iter().zip(&ev.nll).map(|(q, n)| q * n).sum::<f64>();
        if !global_kl {
            out.kl += kl(&ev.q, &env.prior);
        }
    }
    if global_kl && !evals.is_empty() {
        out.kl = evals.len() as f64 * kl(&mean_posterior(evals, env.num_envs), &env.prior);
    }
    out
}

/// [`causal_regularizer`] with gradients scaled by `weight` accumulated into
/// the head and denoiser gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn causal_regularizer_grad(
    pairs: &[CausalPair],
    env: &EnvModel,
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    global_kl: bool,
    weight: f64,
    head_grads: &mut HeadGrads,
    net_grads: &mut DenoiserNet,
) -> CausalTerms {
    let evals: Vec<PairEval> = pairs
        .iter()
        .map(|p| eval_pair(p, env, net, schedule))
        .collect();
    let out = terms(&evals, env, global_kl);
    let qbar = global_kl.then(|| mean_posterior(&evals, env.num_envs));
    let log_prior: Vec<f64> = env.prior.iter().map(|&p| clamped_ln(p)).collect();
    for (pair, ev) in pairs.iter().zip(&evals) {
        let t = pair.t;
        let (beta, c, inv) = (
            schedule.beta(t),
            schedule.eps_coef(t),
            1.0 / math::sqrt(schedule.alpha(t)),
        );
        let src = qbar.as_deref().unwrap_or(&ev.q);
        let d_q: Vec<f64> = (0..env.num_envs)
            .map(|e| {
                let live = if src[e] >= PROB_FLOOR { 1.0 } else { 0.0 };
                weight * (ev.nll[e] + clamped_ln(src[e]) - log_prior[e] + live)
            })
            .collect();
        env.posterior_backward(&pair.x_t, &ev.q, &d_q, head_grads);
        for e in 0..env.num_envs {
            let scale = weight * ev.q[e] / beta * (-c * inv);
            let d_eps: Vec<f64> = ev.mu[e]
                .iter()
                .zip(&pair.x_prev)
                .map(|(m, x)| scale * (m - x))
                .collect();
            net.backward(&ev.caches[e], &d_eps, net_grads);
        }
    }
    out
}
