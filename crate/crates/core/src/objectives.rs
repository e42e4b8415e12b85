//! Loss terms and their analytic gradients.
//!
//! The total objective over a batch of `B` examples is
//! `bpr + lambda2 * (sampling + lambda1 * causal) + lambda3 * contrastive`,
//! each term a mean over the batch. Everything the sampler produced for the
//! batch (generated candidates, the hardest candidate, reconstructions,
//! reverse-chain pairs and diffusion draws) enters as data; gradients flow to
//! the embedding tables through propagation, to the denoiser, and to the
//! posterior head.

use alloc::vec;
use alloc::vec::Vec;

use crate::causal::{causal_regularizer_grad, CausalPair, EnvModel, HeadGrads};
use crate::diffusion::{sampling_loss_grad, DenoiserNet, NoiseSchedule};
use crate::encoder::{propagate, propagate_backward, EmbeddingState, NormGraph};
use crate::error::{Error, Result};
use crate::math;

/// `softplus(-(s_pos - s_neg)) = -ln sigmoid(s_pos - s_neg)`.
pub fn bpr_loss(s_pos: f64, s_neg: f64) -> f64 {
    math::softplus(s_neg - s_pos)
}

/// `dL/ds_pos`; `dL/ds_neg` is its negation.
pub fn bpr_grad(s_pos: f64, s_neg: f64) -> f64 {
    -math::sigmoid(s_neg - s_pos)
}

pub fn mean_bpr(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(p, n)| bpr_loss(p, n)).sum::<f64>() / pairs.len() as f64
}

fn contrastive_logits(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> Vec<f64> {
    core::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|x| math::dot(anchor, x) / temperature)
        .collect()
}

fn log_softmax_at0(logits: &[f64]) -> (f64, Vec<f64>) {
    let mut p = vec![0.0; logits.len()];
    math::softmax(logits, &mut p);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + math::ln(logits.iter().map(|l| math::exp(l - m)).sum::<f64>());
    (lse - logits[0], p)
}

/// InfoNCE with one positive: `-ln(exp(a.p/tau) / (exp(a.p/tau) + sum_k exp(a.n_k/tau)))`.
pub fn contrastive_loss(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> f64 {
    log_softmax_at0(&contrastive_logits(
        anchor,
        positive,
        negatives,
        temperature,
    ))
    .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrads {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn contrastive_grad(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> ContrastiveGrads {
    let (loss, p) = log_softmax_at0(&contrastive_logits(
        anchor,
        positive,
        negatives,
        temperature,
    ));
    let g: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| (pj - if j == 0 { 1.0 } else { 0.0 }) / temperature)
        .collect();
    let mut d_anchor = vec![0.0; anchor.len()];
    math::axpy(g[0], positive, &mut d_anchor);
    for (k, n) in negatives.iter().enumerate() {
        math::axpy(g[k + 1], n, &mut d_anchor);
    }
    let scaled = |s: f64| anchor.iter().map(|a| s * a).collect::<Vec<f64>>();
    ContrastiveGrads {
        loss,
        anchor: d_anchor,
        positive: scaled(g[0]),
        negatives: (0..negatives.len()).map(|k| scaled(g[k + 1])).collect(),
    }
}

/// Per-term batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub sampling: f64,
    pub causal: f64,
    /// `sampling + lambda1 * causal`.
    pub neg_sampling: f64,
    pub contrastive: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub temperature: f64,
}

/// Weights and switches of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub temperature: f64,
    pub global_kl: bool,
    pub layers: usize,
}

/// Sampler outputs for one example on the diffusion path.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionExtras {
    pub env: usize,
    /// Hardest generated candidate `e_h`.
    pub hard: Vec<f64>,
    /// Reconstruction from the smallest selected step, the contrastive positive.
    pub recon: Vec<f64>,
    /// Step and noise for the noise-prediction loss on the positive item.
    pub t: usize,
    pub eps: Vec<f64>,
    pub pairs: Vec<CausalPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub user: usize,
    pub pos: usize,
    /// Sampled negative item (the random negative `e_r` on the diffusion path).
    pub neg: usize,
    pub extras: Option<DiffusionExtras>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub epoch: usize,
    pub index: usize,
    /// Mixup weights `(alpha, beta)` for the diffusion path.
    pub mix: (f64, f64),
    pub examples: Vec<Example>,
}

/// Every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embeddings: EmbeddingState,
    pub denoiser: DenoiserNet,
    pub env: EnvModel,
}

/// Gradients shaped like [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub embeddings: EmbeddingState,
    pub denoiser: DenoiserNet,
    pub head: HeadGrads,
}

pub const TENSOR_COUNT: usize = 11;

impl Params {
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("embedding.users", self.embeddings.users.as_slice()),
            ("embedding.items", &self.embeddings.items),
        ];
        out.extend(self.denoiser.tensors());
        out.push(("posterior.w", &self.env.w));
        out.push(("posterior.b", &self.env.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("embedding.users", self.embeddings.users.as_mut_slice()),
            ("embedding.items", self.embeddings.items.as_mut_slice()),
        ];
        out.extend(self.denoiser.tensors_mut());
        out.push(("posterior.w", &mut self.env.w));
        out.push(("posterior.b", &mut self.env.b));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        let e = &params.embeddings;
        Self {
            embeddings: EmbeddingState::zeros(e.num_users, e.num_items, e.dim),
            denoiser: DenoiserNet::zeros(params.denoiser.shape),
            head: HeadGrads::zeros(params.env.num_envs, params.env.dim),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("embedding.users", self.embeddings.users.as_slice()),
            ("embedding.items", &self.embeddings.items),
        ];
        out.extend(self.denoiser.tensors());
        out.push(("posterior.w", &self.head.w));
        out.push(("posterior.b", &self.head.b));
        out
    }
}

/// Loss and exact gradients of the implemented forward computation, with the
/// batch held fixed.
pub fn total_loss_and_grads(
    params: &Params,
    graph: &NormGraph,
    schedule: &NoiseSchedule,
    batch: &PreparedBatch,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Grads)> {
    let z = propagate(&params.embeddings, graph, cfg.layers);
    let d = z.dim;
    let b = batch.examples.len().max(1) as f64;
    let w = 1.0 / b;
    let mut dz = EmbeddingState::zeros(z.num_users, z.num_items, d);
    let mut grads = Grads::zeros_like(params);
    let mut out = LossBreakdown {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        lambda3: cfg.lambda3,
        temperature: cfg.temperature,
        ..Default::default()
    };
    let mut pairs: Vec<CausalPair> = Vec::new();

    for ex in &batch.examples {
        let zu = z.user(ex.user);
        let zp = z.item(ex.pos);
        let zr = z.item(ex.neg);
        let (alpha, beta) = if ex.extras.is_some() {
            batch.mix
        } else {
            (1.0, 0.0)
        };
        let mixed: Vec<f64> = match &ex.extras {
            Some(x) => zr
                .iter()
                .zip(&x.hard)
                .map(|(r, h)| alpha * r + beta * h)
                .collect(),
            None => zr.to_vec(),
        };

        let (s_pos, s_neg) = (math::dot(zu, zp), math::dot(zu, &mixed));
        out.bpr += w * bpr_loss(s_pos, s_neg);
        let g = w * bpr_grad(s_pos, s_neg);
        // d/dz_u = g (z_p - e~); d/dz_p = g z_u; d/de~ = -g z_u
        let mut d_mixed = vec![0.0; d];
        math::axpy(-g, zu, &mut d_mixed);
        {
            let du = dz.user_mut(ex.user);
            math::axpy(g, zp, du);
            math::axpy(-g, &mixed, du);
        }
        math::axpy(g, zu, dz.item_mut(ex.pos));

        if let Some(x) = &ex.extras {
            let (loss, dz0) = sampling_loss_grad(
                zp,
                x.t,
                &x.eps,
                &params.denoiser,
                x.env,
                schedule,
                w * cfg.lambda2,
                &mut grads.denoiser,
            );
            out.sampling += w * loss;
            math::axpy(1.0, &dz0, dz.item_mut(ex.pos));

            let cg = contrastive_grad(zp, &x.recon, &[&mixed, zr], cfg.temperature);
            out.contrastive += w * cg.loss;
            let s = w * cfg.lambda3;
            math::axpy(s, &cg.anchor, dz.item_mut(ex.pos));
            math::axpy(s, &cg.negatives[0], &mut d_mixed);
            math::axpy(s, &cg.negatives[1], dz.item_mut(ex.neg));
            pairs.extend(x.pairs.iter().cloned());
        }
        math::axpy(alpha, &d_mixed, dz.item_mut(ex.neg));
    }

    if !pairs.is_empty() {
        let terms = causal_regularizer_grad(
            &pairs,
            &params.env,
            &params.denoiser,
            schedule,
            cfg.global_kl,
            w * cfg.lambda2 * cfg.lambda1,
            &mut grads.head,
            &mut grads.denoiser,
        );
        out.causal = w * terms.total();
    }
    out.neg_sampling = out.sampling + cfg.lambda1 * out.causal;
    out.total = out.bpr + cfg.lambda2 * out.neg_sampling + cfg.lambda3 * out.contrastive;
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: batch.epoch,
            batch: batch.index,
            bpr: out.bpr,
            sampling: out.sampling,
            causal: out.causal,
            contrastive: out.contrastive,
        });
    }
    grads.embeddings = propagate_backward(&dz, graph, cfg.layers);
    Ok((out, grads))
}

/// Loss only; same value as [`total_loss_and_grads`].
pub fn total_loss(
    params: &Params,
    graph: &NormGraph,
    schedule: &NoiseSchedule,
    batch: &PreparedBatch,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    total_loss_and_grads(params, graph, schedule, batch, cfg).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss(0.3, 0.3) - core::f64::consts::LN_2).abs() < 1e-15);
        // ln(1 + e^-2)
        assert!((bpr_loss(2.0, 0.0) - 0.126_928_011_042_972_6).abs() < 1e-15);
        assert!((bpr_loss(0.0, 50.0) - 50.0).abs() < 1e-6);
        assert!(bpr_loss(0.0, 1e4).is_finite() && bpr_loss(1e4, 0.0).is_finite());
        assert_eq!(mean_bpr(&[(1.0, 1.0), (1.0, 1.0)]), bpr_loss(1.0, 1.0));
    }

    #[test]
    fn contrastive_examples() {
        let a = [1.0, 2.0];
        let v = contrastive_loss(&a, &[0.5, 0.5], &[&[0.5, 0.5]], 0.2);
        assert!((v - core::f64::consts::LN_2).abs() < 1e-12);
        let v = contrastive_loss(&[1.0], &[100.0], &[&[0.0]], 1.0);
        assert!(v < 1e-6);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(5, crate::rng::Stream::Init, 0);
        let mut vecs = vec![vec![0.0; 8]; 5];
        vecs.iter_mut()
            .for_each(|v| crate::rng::fill_gaussian(&mut rng, v));
        let f = |v: &[Vec<f64>]| contrastive_loss(&v[0], &v[1], &[&v[2], &v[3], &v[4]], 0.7);
        let g = contrastive_grad(&vecs[0], &vecs[1], &[&vecs[2], &vecs[3], &vecs[4]], 0.7);
        let analytic = [
            &g.anchor,
            &g.positive,
            &g.negatives[0],
            &g.negatives[1],
            &g.negatives[2],
        ];
        let h = 1e-6;
        for (which, ga) in analytic.iter().enumerate() {
            for k in 0..8 {
                let (mut p, mut m) = (vecs.clone(), vecs.clone());
                p[which][k] += h;
                m[which][k] -= h;
                let n = (f(&p) - f(&m)) / (2.0 * h);
                let err = (ga[k] - n).abs();
                assert!(
                    err <= 1e-6 || err / n.abs().max(ga[k].abs()) < 1e-4,
                    "{which}/{k}: {} vs {n}",
                    ga[k]
                );
            }
        }
    }
}
