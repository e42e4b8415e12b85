//! The training loop: per batch, propagate embeddings, draw negatives
//! (diffusion candidates, hardest selection and mixup on the CNSDiff path),
//! evaluate the joint loss and take one optimizer step.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{assign_envs, CausalPair, EnvMode, EnvModel};
use crate::corpus::{Dataset, SplitBundle};
use crate::diffusion::{
    candidates_from, reverse_trajectory, DenoiserNet, DenoiserShape, NoiseSchedule, StepSet,
};
use crate::encoder::{build_graph, propagate, EmbeddingState, NormGraph};
use crate::error::{invalid, Result};
use crate::eval::{self, MetricBlock};
use crate::math;
use crate::objectives::{
    total_loss_and_grads, DiffusionExtras, Example, LossBreakdown, LossConfig, Params,
    PreparedBatch,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{self, Stream};
use crate::sampler::{
    baseline_sample, mix_negative, select_hardest, MixSchedule, NegativePool, SamplerKind,
};

fn d_epochs() -> usize {
    200
}
fn d_batch() -> usize {
    1024
}
fn d_lr() -> f64 {
    1e-3
}
fn d_dim() -> usize {
    64
}
fn d_layers() -> usize {
    3
}
fn d_steps() -> usize {
    20
}
fn d_beta_start() -> f64 {
    1e-4
}
fn d_beta_end() -> f64 {
    0.02
}
fn d_one() -> usize {
    1
}
fn d_hidden() -> usize {
    64
}
fn d_time_dim() -> usize {
    16
}
fn d_env_dim() -> usize {
    8
}
fn d_lambda() -> f64 {
    1e-3
}
fn d_temperature() -> f64 {
    0.2
}
fn d_mix_initial() -> [f64; 2] {
    [2.0, 8.0]
}
fn d_mix_final() -> [f64; 2] {
    [9.0, 1.0]
}
fn d_dns() -> usize {
    32
}
fn d_envs() -> usize {
    4
}
fn d_init_std() -> f64 {
    0.01
}
fn d_eval_every() -> usize {
    5
}
fn d_fhns_threshold() -> f64 {
    0.99
}

/// Run configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Embedding dimension `d`.
    #[serde(default = "d_dim")]
    pub dim: usize,
    /// Propagation layers `K`.
    #[serde(default = "d_layers")]
    pub layers: usize,
    /// Diffusion steps `T`.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_beta_start")]
    pub beta_start: f64,
    #[serde(default = "d_beta_end")]
    pub beta_end: f64,
    /// First recorded step `t0`.
    #[serde(default = "d_one")]
    pub step_start: usize,
    /// Step stride `s`; `ceil(T / 5)` when absent.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_time_dim")]
    pub time_dim: usize,
    #[serde(default = "d_env_dim")]
    pub env_dim: usize,
    #[serde(default = "d_lambda")]
    pub lambda1: f64,
    #[serde(default = "d_lambda")]
    pub lambda2: f64,
    #[serde(default = "d_lambda")]
    pub lambda3: f64,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_mix_initial")]
    pub mix_initial: [f64; 2],
    #[serde(default = "d_mix_final")]
    pub mix_final: [f64; 2],
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "d_dns")]
    pub dns_candidates: usize,
    #[serde(default = "d_envs")]
    pub num_envs: usize,
    #[serde(default)]
    pub env_mode: EnvMode,
    #[serde(default)]
    pub uniform_prior: bool,
    #[serde(default)]
    pub global_kl: bool,
    /// Reverse-chain transitions per example fed to the causal term.
    #[serde(default = "d_one")]
    pub causal_pairs: usize,
    #[serde(default = "d_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Leading epochs that update only the denoiser.
    #[serde(default)]
    pub warmup_epochs: usize,
    /// Cosine threshold `tau_sim` for false hard negatives.
    #[serde(default = "d_fhns_threshold")]
    pub fhns_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr: d_lr(),
            optimizer: OptimizerKind::Adam,
            dim: d_dim(),
            layers: d_layers(),
            steps: d_steps(),
            beta_start: d_beta_start(),
            beta_end: d_beta_end(),
            step_start: 1,
            stride: None,
            hidden: d_hidden(),
            time_dim: d_time_dim(),
            env_dim: d_env_dim(),
            lambda1: d_lambda(),
            lambda2: d_lambda(),
            lambda3: d_lambda(),
            temperature: d_temperature(),
            mix_initial: d_mix_initial(),
            mix_final: d_mix_final(),
            sampler: SamplerKind::Cnsdiff,
            dns_candidates: d_dns(),
            num_envs: d_envs(),
            env_mode: EnvMode::Popularity,
            uniform_prior: false,
            global_kl: false,
            causal_pairs: 1,
            init_std: d_init_std(),
            seed: 0,
            eval_every: d_eval_every(),
            warmup_epochs: 0,
            fhns_threshold: d_fhns_threshold(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("steps", self.steps),
            ("step_start", self.step_start),
            ("hidden", self.hidden),
            ("time_dim", self.time_dim),
            ("env_dim", self.env_dim),
            ("dns_candidates", self.dns_candidates),
            ("num_envs", self.num_envs),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(alloc::format!("{name} must be at least 1")));
            }
        }
        if self.stride == Some(0) {
            return Err(invalid("stride must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be finite and nonnegative"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(alloc::format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature must be positive"));
        }
        if !(self.fhns_threshold > 0.0 && self.fhns_threshold <= 1.0) {
            return Err(invalid("fhns_threshold must lie in (0, 1]"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(invalid("init_std must be finite and nonnegative"));
        }
        self.schedule()?;
        self.stepset()?;
        self.mix_schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn stepset(&self) -> Result<StepSet> {
        match self.stride {
            Some(s) => StepSet::new(self.step_start, s, self.steps),
            None => StepSet::new(self.step_start, self.steps.div_ceil(5).max(1), self.steps),
        }
    }

    pub fn mix_schedule(&self) -> Result<MixSchedule> {
        MixSchedule::new(
            self.mix_initial,
            self.mix_final,
            self.epochs.saturating_sub(1),
        )
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            temperature: self.temperature,
            global_kl: self.global_kl,
            layers: self.layers,
        }
    }

    pub fn denoiser_shape(&self) -> DenoiserShape {
        DenoiserShape {
            dim: self.dim,
            hidden: self.hidden,
            time_dim: self.time_dim,
            env_dim: self.env_dim,
            num_envs: self.num_envs,
        }
    }
}

/// Monotonic seconds, supplied by the host.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Per-user item sets used by evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSets {
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
    pub test_iid: Vec<Vec<usize>>,
    pub test_ood: Vec<Vec<usize>>,
    /// `test_iid` union `test_ood`, the reference set for false hard negatives.
    pub test_all: Vec<Vec<usize>>,
}

impl EvalSets {
    pub fn new(dataset: &Dataset, split: &SplitBundle) -> Self {
        let test_iid = split.user_items(dataset, &split.test_iid);
        let test_ood = split.user_items(dataset, &split.test_ood);
        let test_all = eval::union_sorted(&test_iid, &test_ood);
        Self {
            train: split.user_items(dataset, &split.train),
            val: split.user_items(dataset, &split.val),
            test_iid,
            test_ood,
            test_all,
        }
    }
}

/// A training example: user, positive item and its environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainExample {
    pub user: usize,
    pub item: usize,
    pub env: usize,
}

/// Everything needed to train and evaluate one configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub params: Params,
    pub graph: NormGraph,
    pub schedule: NoiseSchedule,
    pub stepset: StepSet,
    pub mix: MixSchedule,
    pub pool: NegativePool,
    pub optimizer: Optimizer,
    pub examples: Vec<TrainExample>,
    pub sets: EvalSets,
}

impl Model {
    /// `env_labels` are per dataset interaction and only needed for
    /// `env_mode = given`.
    pub fn new(
        dataset: &Dataset,
        split: &SplitBundle,
        config: TrainConfig,
        env_labels: Option<&[usize]>,
    ) -> Result<Self> {
        config.validate()?;
        let graph = build_graph(dataset, split)?;
        let mut env = assign_envs(
            dataset,
            &split.train,
            config.env_mode,
            config.num_envs,
            env_labels,
            config.uniform_prior,
            config.dim,
        )?;
        let seed = config.seed;
        let embeddings = EmbeddingState::random(
            dataset.num_users(),
            dataset.num_items(),
            config.dim,
            config.init_std,
            &mut rng::stream(seed, Stream::Init, 0),
        );
        let denoiser = DenoiserNet::random(
            config.denoiser_shape(),
            &mut rng::stream(seed, Stream::Init, 1),
        );
        env.init_head(0.01, &mut rng::stream(seed, Stream::Init, 2));
        let examples = split
            .train
            .iter()
            .map(|&i| {
                let r = &dataset.interactions()[i];
                TrainExample {
                    user: r.user,
                    item: r.item,
                    env: env.interaction_env[i],
                }
            })
            .collect();
        let mut train_pop = vec![0usize; dataset.num_items()];
        for &i in &split.train {
            train_pop[dataset.interactions()[i].item] += 1;
        }
        Ok(Self {
            schedule: config.schedule()?,
            stepset: config.stepset()?,
            mix: config.mix_schedule()?,
            pool: NegativePool::new(&train_pop),
            optimizer: Optimizer::new(config.optimizer, config.lr),
            params: Params {
                embeddings,
                denoiser,
                env,
            },
            graph,
            examples,
            sets: EvalSets::new(dataset, split),
            config,
        })
    }

    pub fn propagated(&self) -> EmbeddingState {
        propagate(&self.params.embeddings, &self.graph, self.config.layers)
    }

    pub fn evaluate(&self, ground_truth: &[Vec<usize>]) -> MetricBlock {
        eval::rank_metrics(&self.propagated(), ground_truth, &self.sets.train)
    }

    /// Mixup weights for a 1-based training epoch.
    pub fn mix_at(&self, epoch: usize) -> (f64, f64) {
        self.mix.weights_at(epoch.saturating_sub(1))
    }
}

/// One sampled negative and whether it is a false hard negative.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeRecord {
    pub user: usize,
    /// The sampled item (the random negative on the diffusion path).
    pub item: usize,
    pub false_hard: bool,
}

fn pick_pair<R: Rng>(traj: &crate::diffusion::Trajectory, rng: &mut R) -> CausalPair {
    let n = traj.states.len() - 1;
    let k = rng.random_range(0..n);
    CausalPair {
        x_t: traj.states[k].clone(),
        x_prev: traj.states[k + 1].clone(),
        t: traj.t_max - k,
    }
}

/// Draw negatives for a batch of examples against propagated embeddings `z`.
pub fn prepare_batch(
    model: &Model,
    z: &EmbeddingState,
    batch: &[TrainExample],
    epoch: usize,
    index: usize,
) -> Result<(PreparedBatch, Vec<NegativeRecord>)> {
    let cfg = &model.config;
    let stream_index = ((epoch as u64) << 32) | index as u64;
    let mut srng = rng::stream(cfg.seed, Stream::Sampler, stream_index);
    let mut drng = rng::stream(cfg.seed, Stream::DiffusionNoise, stream_index);
    let mix = model.mix_at(epoch);
    let mut examples = Vec::with_capacity(batch.len());
    let mut records = Vec::with_capacity(batch.len());
    let d = cfg.dim;
    for ex in batch {
        let positives = &model.sets.train[ex.user];
        let zu = z.user(ex.user);
        let neg = baseline_sample(
            cfg.sampler,
            &model.pool,
            positives,
            cfg.dns_candidates,
            |v| math::dot(zu, z.item(v)),
            &mut srng,
        )?;
        let (extras, negative) = if cfg.sampler == SamplerKind::Cnsdiff {
            let traj = reverse_trajectory(
                z.item(ex.item),
                &model.stepset,
                &model.params.denoiser,
                ex.env,
                &model.schedule,
                &mut drng,
                true,
            );
            let cands = candidates_from(&traj, &model.stepset);
            let hard = cands[select_hardest(zu, &cands)?].1.clone();
            let recon = cands[0].1.clone();
            let t = drng.random_range(1..=cfg.steps);
            let mut eps = vec![0.0; d];
            rng::fill_gaussian(&mut drng, &mut eps);
            let pairs = (0..cfg.causal_pairs)
                .map(|_| pick_pair(&traj, &mut drng))
                .collect();
            let mixed = mix_negative(z.item(neg), &hard, mix);
            (
                Some(DiffusionExtras {
                    env: ex.env,
                    hard,
                    recon,
                    t,
                    eps,
                    pairs,
                }),
                mixed,
            )
        } else {
            (None, z.item(neg).to_vec())
        };
        let false_hard = eval::is_false_hard(
            &negative,
            &model.sets.test_all[ex.user],
            z,
            cfg.fhns_threshold,
        );
        records.push(NegativeRecord {
            user: ex.user,
            item: neg,
            false_hard,
        });
        examples.push(Example {
            user: ex.user,
            pos: ex.item,
            neg,
            extras,
        });
    }
    Ok((
        PreparedBatch {
            epoch,
            index,
            mix,
            examples,
        },
        records,
    ))
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Example-weighted mean of the batch breakdowns; absent at epoch 0.
    pub loss: Option<LossBreakdown>,
    /// Validation metrics on evaluated epochs.
    pub val: Option<MetricBlock>,
    pub fhns_ratio: Option<f64>,
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip)]
    pub sampling_seconds: f64,
}

/// Result of one pass over the training interactions.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub record: EpochRecord,
    pub negatives: Vec<NegativeRecord>,
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    acc.bpr += w * b.bpr;
    acc.sampling += w * b.sampling;
    acc.causal += w * b.causal;
    acc.neg_sampling += w * b.neg_sampling;
    acc.contrastive += w * b.contrastive;
    acc.total += w * b.total;
    acc.lambda1 = b.lambda1;
    acc.lambda2 = b.lambda2;
    acc.lambda3 = b.lambda3;
    acc.temperature = b.temperature;
}

/// One shuffled pass over the training interactions (`epoch` is 1-based).
pub fn train_epoch(model: &mut Model, epoch: usize, clock: &dyn Clock) -> Result<EpochOutcome> {
    let start = clock.now();
    let mut order = model.examples.clone();
    order.shuffle(&mut rng::stream(
        model.config.seed,
        Stream::Shuffle,
        epoch as u64,
    ));
    let loss_cfg = model.config.loss_config();
    let warmup = epoch <= model.config.warmup_epochs;
    let mut sum = LossBreakdown::default();
    let mut negatives = Vec::with_capacity(order.len());
    let mut sampling_seconds = 0.0;
    let n = order.len() as f64;
    for (index, chunk) in order.chunks(model.config.batch_size).enumerate() {
        let z = model.propagated();
        let t0 = clock.now();
        let (batch, records) = prepare_batch(model, &z, chunk, epoch, index)?;
        sampling_seconds += clock.now() - t0;
        negatives.extend(records);
        let (breakdown, mut grads) = total_loss_and_grads(
            &model.params,
            &model.graph,
            &model.schedule,
            &batch,
            &loss_cfg,
        )?;
        accumulate(&mut sum, &breakdown, chunk.len() as f64 / n);
        if warmup {
            grads.embeddings.users.iter_mut().for_each(|g| *g = 0.0);
            grads.embeddings.items.iter_mut().for_each(|g| *g = 0.0);
            grads.head.w.iter_mut().for_each(|g| *g = 0.0);
            grads.head.b.iter_mut().for_each(|g| *g = 0.0);
        }
        let grad_views = grads.tensors();
        let grad_slices: Vec<&[f64]> = grad_views.iter().map(|t| t.1).collect();
        let mut param_views = model.params.tensors_mut();
        let mut param_slices: Vec<&mut [f64]> = param_views.iter_mut().map(|t| &mut *t.1).collect();
        model.optimizer.step(&mut param_slices, &grad_slices);
    }
    let flagged = negatives.iter().filter(|r| r.false_hard).count();
    let fhns_ratio = (!negatives.is_empty()).then(|| flagged as f64 / negatives.len() as f64);
    let record = EpochRecord {
        epoch,
        loss: Some(sum),
        val: None,
        fhns_ratio,
        seconds: clock.now() - start,
        sampling_seconds,
    };
    Ok(EpochOutcome { record, negatives })
}

/// Negatives drawn for every training example at the current parameters,
/// without updating anything. Examples are visited in storage order with
/// `epoch`'s mixup weights.
pub fn sampling_pass(model: &Model, epoch: usize) -> Result<Vec<NegativeRecord>> {
    let z = model.propagated();
    let mut out = Vec::with_capacity(model.examples.len());
    for (index, chunk) in model.examples.chunks(model.config.batch_size).enumerate() {
        out.extend(prepare_batch(model, &z, chunk, epoch, index)?.1);
    }
    Ok(out)
}

/// Whether `epoch` gets a validation pass.
pub fn is_eval_epoch(epoch: usize, eval_every: usize, epochs: usize) -> bool {
    epoch == 0 || epoch == epochs || epoch.is_multiple_of(eval_every)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalBlock {
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: MetricBlock,
    pub test: Vec<FinalBlock>,
    #[serde(default)]
    pub fingerprint: String,
}

impl RunReport {
    pub fn evaluated(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|r| r.val.is_some())
    }

    pub fn final_block(&self, split: &str) -> Option<&MetricBlock> {
        self.test
            .iter()
            .find(|b| b.split == split)
            .map(|b| &b.metrics)
    }
}

/// Round every parameter to `f32`, the checkpoint precision.
pub fn quantize(params: &mut Params) {
    for (_, t) in params.tensors_mut() {
        t.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}

/// Events surfaced by [`fit`].
#[derive(Debug)]
pub enum FitEvent<'a> {
    Epoch(&'a EpochOutcome),
    Evaluated { epoch: usize, model: &'a Model },
}

/// Train for `config.epochs`, validating at epoch 0, every `eval_every`
/// epochs and the last epoch; final test metrics use the best-validation
/// parameters (Recall@20, earliest epoch on ties) at checkpoint precision.
pub fn fit(
    model: &mut Model,
    clock: &dyn Clock,
    observer: &mut dyn FnMut(FitEvent<'_>),
) -> Result<(RunReport, Params)> {
    let epochs = model.config.epochs;
    let eval_every = model.config.eval_every;
    let val = model.evaluate(&model.sets.val);
    let mut records = vec![EpochRecord {
        epoch: 0,
        val: Some(val),
        ..Default::default()
    }];
    observer(FitEvent::Evaluated { epoch: 0, model });
    let mut best = (0usize, val, model.params.clone());
    for epoch in 1..=epochs {
        let mut outcome = train_epoch(model, epoch, clock)?;
        if is_eval_epoch(epoch, eval_every, epochs) {
            let v = model.evaluate(&model.sets.val);
            outcome.record.val = Some(v);
            if v.recall_20 > best.1.recall_20 {
                best = (epoch, v, model.params.clone());
            }
        }
        observer(FitEvent::Epoch(&outcome));
        if outcome.record.val.is_some() {
            observer(FitEvent::Evaluated { epoch, model });
        }
        records.push(outcome.record);
    }
    let (best_epoch, best_val, mut params) = best;
    quantize(&mut params);
    let z = propagate(&params.embeddings, &model.graph, model.config.layers);
    let test = vec![
        FinalBlock {
            split: "iid".into(),
            metrics: eval::rank_metrics(&z, &model.sets.test_iid, &model.sets.train),
        },
        FinalBlock {
            split: "ood".into(),
            metrics: eval::rank_metrics(&z, &model.sets.test_ood, &model.sets.train),
        },
    ];
    let report = RunReport {
        config: model.config.clone(),
        epochs: records,
        best_epoch,
        best_val,
        test,
        fingerprint: String::new(),
    };
    Ok((report, params))
}

/// Environment model of a trained [`Model`], for export.
pub fn env_model(model: &Model) -> &EnvModel {
    &model.params.env
}
