//! Full-model finite-difference check of [`total_loss_and_grads`] on a tiny
//! instance, with the sampled batch held fixed.

use alloc::string::String;
use alloc::vec::Vec;
use serde::Serialize;

use crate::corpus::{Dataset, Interaction, ShiftKind, SplitBundle};
use crate::error::Result;
use crate::objectives::{total_loss, total_loss_and_grads, Params};
use crate::rng::{self, Stream};
use crate::trainer::{prepare_batch, Model, TrainConfig};

/// Pass threshold on the relative error.
pub const REL_TOL: f64 = 1e-4;
/// Entries whose absolute error is at most this pass regardless.
pub const ABS_FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.failures == 0)
    }

    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }
}

/// Configuration of the tiny instance: `d = 8`, `|E| = 2`, `T = 4` with
/// candidates at steps 2, 3, 4, and unit loss weights so every term counts.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 64,
        lr: 1e-2,
        dim: 8,
        layers: 2,
        steps: 4,
        beta_start: 0.05,
        beta_end: 0.3,
        step_start: 2,
        stride: Some(1),
        hidden: 6,
        time_dim: 4,
        env_dim: 3,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: 1.0,
        temperature: 0.5,
        mix_initial: [4.0, 6.0],
        mix_final: [4.0, 6.0],
        num_envs: 2,
        causal_pairs: 2,
        init_std: 0.5,
        eval_every: 1,
        ..TrainConfig::default()
    }
}

/// Four users, six items, every interaction in train.
pub fn tiny_data() -> Result<(Dataset, SplitBundle)> {
    let edges = [
        (0, 0),
        (0, 1),
        (0, 3),
        (1, 1),
        (1, 2),
        (2, 2),
        (2, 4),
        (2, 5),
        (3, 0),
        (3, 5),
        (3, 4),
        (1, 3),
    ];
    let rows: Vec<Interaction> = edges
        .iter()
        .enumerate()
        .map(|(k, &(user, item))| Interaction {
            user,
            item,
            timestamp: k as i64,
            rating: 1.0,
        })
        .collect();
    let n = rows.len();
    let ds = Dataset::with_numeric_ids(4, 6, rows)?;
    let split = SplitBundle {
        shift_kind: ShiftKind::None,
        seed: 0,
        ratios: [1, 0, 0],
        ood_fraction: 0.0,
        train: (0..n).collect(),
        val: Vec::new(),
        test_iid: Vec::new(),
        test_ood: Vec::new(),
        external: Vec::new(),
        short_users: 0,
    };
    Ok((ds, split))
}

/// Build the tiny model with non-degenerate posterior head weights.
pub fn tiny_model(config: TrainConfig) -> Result<Model> {
    let (ds, split) = tiny_data()?;
    let mut model = Model::new(&ds, &split, config, None)?;
    let mut r = rng::stream(model.config.seed, Stream::Init, 99);
    model.params.env.init_head(0.5, &mut r);
    for b in &mut model.params.env.b {
        *b = rng::gaussian(&mut r);
    }
    Ok(model)
}

pub fn run_gradcheck(config: TrainConfig) -> Result<GradcheckReport> {
    let model = tiny_model(config)?;
    let z = model.propagated();
    let (batch, _) = prepare_batch(&model, &z, &model.examples, 1, 0)?;
    let cfg = model.config.loss_config();
    let (breakdown, grads) =
        total_loss_and_grads(&model.params, &model.graph, &model.schedule, &batch, &cfg)?;
    let f =
        |p: &Params| total_loss(p, &model.graph, &model.schedule, &batch, &cfg).map(|b| b.total);
    let analytic = grads.tensors();
    let mut tensors = Vec::new();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let mut check = TensorCheck {
            name: (*name).into(),
            entries: g.len(),
            max_rel: 0.0,
            max_abs: 0.0,
            failures: 0,
        };
        for k in 0..g.len() {
            let mut plus = model.params.clone();
            let mut minus = model.params.clone();
            plus.tensors_mut()[ti].1[k] += STEP;
            minus.tensors_mut()[ti].1[k] -= STEP;
            let numeric = (f(&plus)? - f(&minus)?) / (2.0 * STEP);
            let abs = (g[k] - numeric).abs();
            check.max_abs = check.max_abs.max(abs);
            let scale = g[k].abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            check.max_rel = check.max_rel.max(rel);
            if abs > ABS_FLOOR && rel >= REL_TOL {
                check.failures += 1;
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        tensors,
        loss: breakdown.total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_instance_shapes() {
        let m = tiny_model(tiny_config()).unwrap();
        assert_eq!(m.stepset.steps(), &[2, 3, 4]);
        assert_eq!(m.params.embeddings.num_users, 4);
        assert_eq!(m.params.embeddings.num_items, 6);
        assert_eq!(m.params.env.num_envs, 2);
    }

    #[test]
    fn full_model_gradients_match() {
        let report = run_gradcheck(tiny_config()).unwrap();
        assert_eq!(report.tensors.len(), crate::objectives::TENSOR_COUNT);
        assert!(report.passed(), "{report:#?}");
        assert!(report.loss.is_finite() && report.loss > 0.0);
    }
}
