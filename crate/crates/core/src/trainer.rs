//! Finetuning loop: decoupled-weight-decay adaptive optimizer with bias
//! correction, linear annealing (warmup optional, default zero), gradient
//! accumulation, and fixed-epoch runs.
//!
//! A run is fully determined by (seed, config, data): batches reshuffle per
//! epoch from the seed, losses are mean-reduced, and the log is reproducible
//! bit for bit on the toy backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{plan_batches, CorpusError, Instance, TokenInstance};
use crate::encoder::{EncoderBackend, EncoderError, TokenizedInput, ToyBackend};
use crate::metrics::{conll_f1, macro_f1, MetricsError};
use crate::tasks::{
    align_labels, positive_probability, predict_tags, TagVocab, TaskError, TaskHeadSpec, TaskKind,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("total_steps must be > 0")]
    ZeroTotalSteps,
    #[error("step {step} outside schedule of {total} steps")]
    BadStep { step: usize, total: usize },
    #[error("non-finite gradient in {param}")]
    NonFiniteGrad { param: String },
    #[error("non-finite loss at optimizer step {step}")]
    NonFiniteLoss { step: usize },
    #[error("gradient length {got} does not match {expected} parameters")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("nothing accumulated")]
    EmptyAccumulation,
    #[error("task {task} incompatible with backend {backend:?} capabilities")]
    Incompatible { task: TaskKind, backend: String },
    #[error("token task needs a tag vocabulary")]
    MissingTagVocab,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Hyperparameters for one finetuning run. Defaults follow the document
/// classification recipe for base-size models; everything is overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-5,
            batch_size: 36,
            grad_accum_steps: 1,
            epochs: 1,
            warmup_steps: 0,
            weight_decay: 0.01,
            seed: 42,
            max_len: 150,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.grad_accum_steps < 1 {
            return Err(TrainError::BadConfig(
                "grad_accum_steps must be >= 1".into(),
            ));
        }
        if self.max_len < 2 {
            return Err(TrainError::BadConfig("max_len must be >= 2".into()));
        }
        Ok(())
    }

    /// Effective batch size seen by one optimizer step.
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }
}

/// Per-step telemetry of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step_loss: Vec<f64>,
    pub step_lr: Vec<f64>,
    /// One entry per epoch when a validation set is supplied: macro F1 in
    /// [0, 1] for the binary tasks, span F1 percentage for the token task.
    pub epoch_val_metric: Vec<f64>,
}

impl TrainLog {
    pub fn write_step_csv(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let mut out = String::from("step,loss,lr\n");
        for (i, (loss, lr)) in self.step_loss.iter().zip(&self.step_lr).enumerate() {
            out.push_str(&format!("{i},{loss},{lr}\n"));
        }
        std::fs::write(path, out)
    }

    pub fn write_epoch_csv(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let mut out = String::from("epoch,val_metric\n");
        for (i, m) in self.epoch_val_metric.iter().enumerate() {
            out.push_str(&format!("{i},{m}\n"));
        }
        std::fs::write(path, out)
    }
}

/// Linear annealing factor in [0, 1]: rises over `warmup_steps` (none by
/// default), then decays linearly to exactly 0 at `total_steps`.
pub fn lr_factor(step: usize, total_steps: usize, warmup_steps: usize) -> Result<f64, TrainError> {
    if total_steps == 0 {
        return Err(TrainError::ZeroTotalSteps);
    }
    if step > total_steps {
        return Err(TrainError::BadStep {
            step,
            total: total_steps,
        });
    }
    if warmup_steps > 0 && step < warmup_steps {
        return Ok(step as f64 / warmup_steps as f64);
    }
    if total_steps <= warmup_steps {
        return Ok(0.0);
    }
    Ok((total_steps - step) as f64 / (total_steps - warmup_steps) as f64)
}

/// Maps a flat parameter index back to a named tensor slot for error
/// messages.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    segments: Vec<(String, usize)>,
}

impl ParamLayout {
    pub fn new(segments: Vec<(String, usize)>) -> Self {
        Self { segments }
    }

    pub fn total(&self) -> usize {
        self.segments.iter().map(|(_, n)| n).sum()
    }

    pub fn name_at(&self, mut idx: usize) -> String {
        for (name, len) in &self.segments {
            if idx < *len {
                return format!("{name}[{idx}]");
            }
            idx -= len;
        }
        format!("param[{idx}]")
    }
}

/// Adaptive-moment optimizer with decoupled weight decay: the decay term
/// multiplies the parameters directly instead of entering the gradients.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    state: Option<AdamState>,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            state: None,
        }
    }
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update in place. `grads` must be the gradient of the
    /// mean-reduced loss over the effective batch.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        layout: &ParamLayout,
    ) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::ShapeMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        let state = self.state.get_or_insert_with(|| AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        });
        if state.m.len() != params.len() {
            return Err(TrainError::ShapeMismatch {
                expected: state.m.len(),
                got: params.len(),
            });
        }
        for (i, &g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGrad {
                    param: layout.name_at(i),
                });
            }
        }

        state.step += 1;
        let bias1 = 1.0 - self.beta1.powi(state.step);
        let bias2 = 1.0 - self.beta2.powi(state.step);
        for i in 0..params.len() {
            let g = grads[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = state.m[i] / bias1;
            let v_hat = state.v[i] / bias2;
            params[i] -= lr * weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Weighted running sum of micro-batch gradients; finishing yields the
/// gradient of the mean-reduced loss over everything added, so one big
/// batch and several micro-batches produce the same update.
#[derive(Debug, Clone, Default)]
pub struct GradAccumulator {
    grad_sum: Vec<f64>,
    loss_sum: f64,
    units: f64,
    micro_batches: usize,
}

impl GradAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one micro-batch's summed loss and summed gradients over `units`
    /// loss terms.
    pub fn add(&mut self, grad_sum: &[f64], loss_sum: f64, units: f64) -> Result<(), TrainError> {
        if self.grad_sum.is_empty() {
            self.grad_sum = vec![0.0; grad_sum.len()];
        }
        if self.grad_sum.len() != grad_sum.len() {
            return Err(TrainError::ShapeMismatch {
                expected: self.grad_sum.len(),
                got: grad_sum.len(),
            });
        }
        for (acc, g) in self.grad_sum.iter_mut().zip(grad_sum) {
            *acc += g;
        }
        self.loss_sum += loss_sum;
        self.units += units;
        self.micro_batches += 1;
        Ok(())
    }

    pub fn micro_batches(&self) -> usize {
        self.micro_batches
    }

    /// Mean gradients and mean loss, or `None` when nothing supervised was
    /// accumulated.
    pub fn finish(self) -> Option<(Vec<f64>, f64)> {
        if self.units == 0.0 {
            return None;
        }
        let mean: Vec<f64> = self.grad_sum.iter().map(|g| g / self.units).collect();
        Some((mean, self.loss_sum / self.units))
    }
}

/// Average k per-micro-batch gradient sets into one update direction.
pub fn accumulate(sets: &[Vec<f64>]) -> Result<Vec<f64>, TrainError> {
    let first = sets.first().ok_or(TrainError::EmptyAccumulation)?;
    let mut mean = vec![0.0; first.len()];
    for set in sets {
        if set.len() != first.len() {
            return Err(TrainError::ShapeMismatch {
                expected: first.len(),
                got: set.len(),
            });
        }
        for (m, g) in mean.iter_mut().zip(set) {
            *m += g;
        }
    }
    let k = sets.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    Ok(mean)
}

/// One batch of prepared training examples.
pub enum PreparedBatch<'a> {
    Binary(&'a [(TokenizedInput, u8)]),
    Token(&'a [(TokenizedInput, Vec<i64>)]),
}

/// What the training loop needs from a backend beyond encoding: flat
/// parameter access and batch gradients.
pub trait TrainableBackend: EncoderBackend {
    fn layout(&self) -> ParamLayout;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
    /// Returns `(loss_sum, grad_of_the_sum, units)` for one micro-batch.
    fn loss_grad(&self, batch: &PreparedBatch) -> Result<(f64, Vec<f64>, f64), TrainError>;
}

impl TrainableBackend for ToyBackend {
    fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.param_segments())
    }

    fn params(&self) -> Vec<f64> {
        self.params_flat()
    }

    fn set_params(&mut self, flat: &[f64]) {
        self.set_params_flat(flat);
    }

    fn loss_grad(&self, batch: &PreparedBatch) -> Result<(f64, Vec<f64>, f64), TrainError> {
        match batch {
            PreparedBatch::Binary(b) => {
                let (loss, grads, units) = self.loss_grad_binary(b)?;
                Ok((loss, grads.to_flat(), units))
            }
            PreparedBatch::Token(b) => {
                let (loss, grads, units) = self.loss_grad_token(b)?;
                Ok((loss, grads.to_flat(), units))
            }
        }
    }
}

/// Tokenized training data for one task.
pub enum TaskData {
    Binary(Vec<(TokenizedInput, u8)>),
    Token {
        examples: Vec<(TokenizedInput, Vec<i64>)>,
        instances: Vec<TokenInstance>,
    },
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Binary(v) => v.len(),
            TaskData::Token { examples, .. } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tokenize and label-align raw instances for a head.
pub fn prepare_task_data(
    backend: &dyn EncoderBackend,
    head: &TaskHeadSpec,
    tag_vocab: Option<&TagVocab>,
    instances: &[Instance],
    max_len: usize,
) -> Result<TaskData, TrainError> {
    match head.kind {
        TaskKind::Document | TaskKind::Sentence => {
            let mut out = Vec::with_capacity(instances.len());
            for inst in instances {
                let text = inst.text().ok_or_else(|| TaskError::WrongKind {
                    id: inst.id().to_string(),
                    got: inst.kind().to_string(),
                    expected: head.kind.to_string(),
                })?;
                let label = inst.label().ok_or_else(|| TaskError::Unlabeled {
                    id: inst.id().to_string(),
                })?;
                out.push((backend.tokenize(&text, max_len)?, label));
            }
            Ok(TaskData::Binary(out))
        }
        TaskKind::Token => {
            let vocab = tag_vocab.ok_or(TrainError::MissingTagVocab)?;
            let mut examples = Vec::with_capacity(instances.len());
            let mut kept = Vec::with_capacity(instances.len());
            for inst in instances {
                let token_inst = inst.as_token().ok_or_else(|| TaskError::WrongKind {
                    id: inst.id().to_string(),
                    got: inst.kind().to_string(),
                    expected: "token".to_string(),
                })?;
                let tok = backend.tokenize_words(&token_inst.words, max_len)?;
                let targets = align_labels(token_inst, &tok, vocab, head.ignore_index)?;
                examples.push((tok, targets));
                kept.push(token_inst.clone());
            }
            Ok(TaskData::Token {
                examples,
                instances: kept,
            })
        }
    }
}

fn check_capability<B: EncoderBackend + ?Sized>(
    backend: &B,
    head: &TaskHeadSpec,
) -> Result<(), TrainError> {
    let spec = backend.spec();
    let ok = match head.kind {
        TaskKind::Document | TaskKind::Sentence => spec.doc_head,
        TaskKind::Token => spec.token_head,
    };
    if ok {
        Ok(())
    } else {
        Err(TrainError::Incompatible {
            task: head.kind,
            backend: spec.name.clone(),
        })
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn eval_binary(
    backend: &dyn EncoderBackend,
    data: &[(TokenizedInput, u8)],
) -> Result<f64, TrainError> {
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for (tok, label) in data {
        let out = backend.encode(std::slice::from_ref(tok))?;
        let p = positive_probability(out[0].doc_logits.expect("doc head checked"));
        preds.push(u8::from(p >= 0.5));
        golds.push(*label);
    }
    Ok(macro_f1(&preds, &golds)?)
}

fn eval_token(
    backend: &dyn EncoderBackend,
    instances: &[TokenInstance],
    vocab: &TagVocab,
    max_len: usize,
) -> Result<f64, TrainError> {
    let mut preds = Vec::with_capacity(instances.len());
    let mut golds = Vec::with_capacity(instances.len());
    let mut ids = Vec::with_capacity(instances.len());
    for inst in instances {
        preds.push(predict_tags(backend, inst, vocab, max_len)?);
        golds.push(inst.tags.clone());
        ids.push(inst.id.clone());
    }
    Ok(conll_f1(&preds, &golds, Some(&ids))?.f1)
}

/// Run exactly `config.epochs` epochs of finetuning. The epoch count is the
/// stopping rule: pick it up front and record it in the config. Returns the
/// telemetry; the backend is trained in place.
pub fn train<B: TrainableBackend>(
    backend: &mut B,
    head: &TaskHeadSpec,
    tag_vocab: Option<&TagVocab>,
    data: &[Instance],
    val: Option<&[Instance]>,
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    check_capability(backend, head)?;

    let prepared = prepare_task_data(backend, head, tag_vocab, data, config.max_len)?;
    let prepared_val = val
        .map(|v| prepare_task_data(backend, head, tag_vocab, v, config.max_len))
        .transpose()?;

    let n = prepared.len();
    let micro_per_epoch = n.div_ceil(config.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(config.grad_accum_steps);
    let total_steps = steps_per_epoch * config.epochs;

    let mut optimizer = AdamW::new();
    let layout = backend.layout();
    let mut log = TrainLog::default();
    let mut step_idx = 0usize;

    for epoch in 0..config.epochs {
        let plan = plan_batches(n, config.batch_size, epoch_seed(config.seed, epoch), true)?;
        let mut acc = GradAccumulator::new();
        let num_micro = plan.len();
        for (k, batch_idxs) in plan.into_iter().enumerate() {
            let (loss_sum, grad_sum, units) = match &prepared {
                TaskData::Binary(v) => {
                    let batch: Vec<(TokenizedInput, u8)> =
                        batch_idxs.iter().map(|&i| v[i].clone()).collect();
                    backend.loss_grad(&PreparedBatch::Binary(&batch))?
                }
                TaskData::Token { examples, .. } => {
                    let batch: Vec<(TokenizedInput, Vec<i64>)> =
                        batch_idxs.iter().map(|&i| examples[i].clone()).collect();
                    backend.loss_grad(&PreparedBatch::Token(&batch))?
                }
            };
            if !loss_sum.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: step_idx });
            }
            acc.add(&grad_sum, loss_sum, units)?;

            let window_full = acc.micro_batches() == config.grad_accum_steps;
            let epoch_done = k + 1 == num_micro;
            if window_full || epoch_done {
                // an all-ignored window has no loss terms and is skipped
                if let Some((mean_grads, mean_loss)) = std::mem::take(&mut acc).finish() {
                    let factor = lr_factor(step_idx, total_steps, config.warmup_steps)?;
                    let lr = config.learning_rate * factor;
                    let mut params = backend.params();
                    optimizer.step(&mut params, &mean_grads, lr, config.weight_decay, &layout)?;
                    backend.set_params(&params);
                    log.step_loss.push(mean_loss);
                    log.step_lr.push(lr);
                    step_idx += 1;
                }
            }
        }

        if let Some(val_data) = &prepared_val {
            let metric = match val_data {
                TaskData::Binary(v) => eval_binary(backend, v)?,
                TaskData::Token { instances, .. } => {
                    let vocab = tag_vocab.ok_or(TrainError::MissingTagVocab)?;
                    eval_token(backend, instances, vocab, config.max_len)?
                }
            };
            log.epoch_val_metric.push(metric);
        }
    }

    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::encoder::EncoderBackendSpec;

    #[test]
    fn lr_factor_linear_no_warmup() {
        assert_eq!(lr_factor(0, 10, 0).unwrap(), 1.0);
        assert_eq!(lr_factor(5, 10, 0).unwrap(), 0.5);
        assert_eq!(lr_factor(10, 10, 0).unwrap(), 0.0);
    }

    #[test]
    fn lr_factor_with_warmup() {
        assert_eq!(lr_factor(0, 10, 4).unwrap(), 0.0);
        assert_eq!(lr_factor(2, 10, 4).unwrap(), 0.5);
        assert_eq!(lr_factor(4, 10, 4).unwrap(), 1.0);
        assert_eq!(lr_factor(7, 10, 4).unwrap(), 0.5);
        assert_eq!(lr_factor(10, 10, 4).unwrap(), 0.0);
    }

    #[test]
    fn lr_factor_zero_total_rejected() {
        assert!(matches!(
            lr_factor(0, 0, 0),
            Err(TrainError::ZeroTotalSteps)
        ));
    }

    fn scalar_layout() -> ParamLayout {
        ParamLayout::new(vec![("w".into(), 1)])
    }

    #[test]
    fn optimizer_zero_grad_zero_decay_is_fixed_point() {
        let mut opt = AdamW::new();
        let mut p = vec![1.25];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0], 0.1, 0.0, &scalar_layout())
                .unwrap();
        }
        assert_eq!(p[0], 1.25);
    }

    #[test]
    fn optimizer_pure_decay_shrinks() {
        let mut opt = AdamW::new();
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.0], 0.1, 0.01, &scalar_layout())
            .unwrap();
        assert!((p[0] - 0.999).abs() < 1e-15);
        opt.step(&mut p, &[0.0], 0.1, 0.01, &scalar_layout())
            .unwrap();
        assert!((p[0] - 0.999 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn optimizer_matches_hand_iterated_scalar() {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (lr, g) = (0.1f64, 0.5f64);

        let mut opt = AdamW::new();
        let mut p = vec![1.0];
        for _ in 0..3 {
            opt.step(&mut p, &[g], lr, 0.0, &scalar_layout()).unwrap();
        }

        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((p[0] - theta).abs() < 1e-10, "{} vs {theta}", p[0]);
    }

    #[test]
    fn optimizer_names_non_finite_gradient() {
        let mut opt = AdamW::new();
        let layout = ParamLayout::new(vec![("embed".into(), 2), ("mix_w".into(), 2)]);
        let mut p = vec![0.0; 4];
        let err = opt
            .step(&mut p, &[0.0, 0.0, f64::NAN, 0.0], 0.1, 0.0, &layout)
            .unwrap_err();
        assert!(err.to_string().contains("mix_w[0]"), "{err}");
    }

    #[test]
    fn accumulate_identity_and_mean() {
        let g = vec![1.0, -2.0, 3.0];
        assert_eq!(accumulate(std::slice::from_ref(&g)).unwrap(), g);
        assert_eq!(accumulate(&[g.clone(), g.clone(), g.clone()]).unwrap(), g);
        let mixed = accumulate(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(mixed, vec![2.0, 1.0]);
    }

    #[test]
    fn accumulate_rejects_mismatched_shapes() {
        assert!(accumulate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn doc(id: usize, lang: &str, text: &str, label: u8) -> Instance {
        Instance::Document(Document {
            id: format!("d{id}"),
            lang: lang.into(),
            text: text.into(),
            label: Some(label),
        })
    }

    fn small_corpus() -> Vec<Instance> {
        let mut out = Vec::new();
        for i in 0..30 {
            let (text, label) = if i % 2 == 0 {
                ("protest march rally downtown crowd banners", 1)
            } else {
                ("market weather report quarterly earnings calm", 0)
            };
            out.push(doc(i, if i % 4 < 2 { "en" } else { "es" }, text, label));
        }
        out
    }

    fn toy() -> ToyBackend {
        ToyBackend::new(&EncoderBackendSpec::toy(16, 512), 2, 7).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let mut backend = toy();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let head = TaskHeadSpec::binary(TaskKind::Document);
        let err = train(&mut backend, &head, None, &small_corpus(), None, &config).unwrap_err();
        assert!(matches!(err, TrainError::BadConfig(_)));
    }

    #[test]
    fn training_is_deterministic() {
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let head = TaskHeadSpec::binary(TaskKind::Document);
        let corpus = small_corpus();

        let mut b1 = toy();
        let log1 = train(&mut b1, &head, None, &corpus, Some(&corpus), &config).unwrap();
        let mut b2 = toy();
        let log2 = train(&mut b2, &head, None, &corpus, Some(&corpus), &config).unwrap();

        assert_eq!(log1, log2);
        assert_eq!(b1.params_flat(), b2.params_flat());
    }

    #[test]
    fn loss_descends_on_separable_data() {
        let config = TrainConfig {
            learning_rate: 0.02,
            batch_size: 8,
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let head = TaskHeadSpec::binary(TaskKind::Document);
        let mut backend = toy();
        let log = train(&mut backend, &head, None, &small_corpus(), None, &config).unwrap();
        let steps_per_epoch = log.step_loss.len() / 3;
        let first: f64 =
            log.step_loss[..steps_per_epoch].iter().sum::<f64>() / steps_per_epoch as f64;
        let last: f64 = log.step_loss[log.step_loss.len() - steps_per_epoch..]
            .iter()
            .sum::<f64>()
            / steps_per_epoch as f64;
        assert!(last < first, "no descent: first {first}, last {last}");
    }

    #[test]
    fn accumulation_matches_single_batch() {
        let corpus = small_corpus();
        let head = TaskHeadSpec::binary(TaskKind::Document);

        let run = |batch_size: usize, accum: usize| -> Vec<f64> {
            let mut backend = toy();
            let config = TrainConfig {
                learning_rate: 0.01,
                batch_size,
                grad_accum_steps: accum,
                epochs: 1,
                seed: 11,
                ..TrainConfig::default()
            };
            // one optimizer step: take the first 6 docs only
            train(&mut backend, &head, None, &corpus[..6], None, &config).unwrap();
            backend.params_flat()
        };

        let whole = run(6, 1);
        let split = run(2, 3);
        let max_rel = whole
            .iter()
            .zip(&split)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
            .fold(0.0, f64::max);
        assert!(max_rel < 1e-6, "max relative diff {max_rel}");
    }
}
