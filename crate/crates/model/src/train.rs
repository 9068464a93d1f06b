//! Teacher-forced training with Adam, a triangular learning-rate schedule
//! and checkpoint selection by development TER.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use apeorder_core::edit::apply_in_place;
use apeorder_core::metrics::{corpus_ter, TerOptions};
use apeorder_core::reorder::derive_seed;
use apeorder_core::{min_edit_script, shuffled_trace, Trace};

use crate::decode::{decode, DecodeOptions};
use crate::error::ModelError;
use crate::input::ModelInput;
use crate::network::{loss_and_grad, Dropout, Target};
use crate::params::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// The learning rate reaches 0 here and training ends.
    pub max_steps: usize,
    /// Decoupled decay on encoder weights.
    pub weight_decay: f64,
    pub dropout: f64,
    /// Applies to the token distribution only.
    pub label_smoothing: f64,
    pub tokens_per_batch: usize,
    pub checkpoint_interval: usize,
    pub max_actions: usize,
    pub seed: u64,
    pub init_std: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Draw a fresh random order for every training trace each epoch.
    pub resample_per_epoch: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 5e-5,
            warmup_steps: 5000,
            max_steps: 50_000,
            weight_decay: 1e-4,
            dropout: 0.1,
            label_smoothing: 0.1,
            tokens_per_batch: 512,
            checkpoint_interval: 10_000,
            max_actions: 50,
            seed: 0,
            init_std: 0.02,
            grad_clip: 1.0,
            resample_per_epoch: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(what.to_owned()));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.warmup_steps < 1 || self.max_steps < 1 || self.checkpoint_interval < 1 {
            return bad("warmup_steps, max_steps and checkpoint_interval must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.label_smoothing) {
            return bad("dropout must be in [0, 1) and label_smoothing in [0, 1]");
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.init_std <= 0.0 {
            return bad("weight_decay and grad_clip must be non-negative, init_std positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and adam_eps positive");
        }
        if self.tokens_per_batch == 0 || self.max_actions == 0 {
            return bad("tokens_per_batch and max_actions must be positive");
        }
        Ok(())
    }
}

/// Learning rate used for update `step` (1-based): linear warmup to the
/// peak, then linear decay to 0 at `max_steps`.
pub fn lr_at(config: &TrainConfig, step: usize) -> f64 {
    let warmup = config.warmup_steps as f64;
    let s = step as f64;
    if step <= config.warmup_steps {
        config.peak_lr * s / warmup
    } else if config.max_steps <= config.warmup_steps {
        0.0
    } else {
        let left = (config.max_steps.saturating_sub(step)) as f64;
        config.peak_lr * left / (config.max_steps - config.warmup_steps) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub dev_ter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub step: usize,
    pub dev_ter: Option<f64>,
    pub train_config: TrainConfig,
    pub model: Model,
}

const CHECKPOINT_FORMAT: &str = "apeorder-checkpoint/1";

impl Checkpoint {
    pub fn new(step: usize, dev_ter: Option<f64>, train_config: TrainConfig, model: Model) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.to_owned(), step, dev_ter, train_config, model }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let c: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Config(format!("unsupported checkpoint format `{}`", c.format)));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest development TER, or the final parameters without a dev set.
    pub best: Model,
    pub best_step: usize,
    pub best_dev_ter: Option<f64>,
    pub last: Model,
    pub log: Vec<LogRow>,
}

struct Pair {
    example: usize,
    input: ModelInput,
    target: Target,
}

fn teacher_forced(model: &Model, index: usize, ex: &TrainExample, trace: &Trace, pairs: &mut Vec<Pair>) -> Result<(), ModelError> {
    let trace = Trace::terminated(trace.edits().to_vec());
    let mut state = ex.mt.clone();
    for action in trace.actions() {
        let input = ModelInput::new(&model.vocab, &ex.src, &state, model.config.max_len)?;
        let target = Target::from_action(&model.vocab, &input, action)
            .map_err(|e| ModelError::Trace { id: ex.id.clone(), message: e.to_string() })?;
        pairs.push(Pair { example: index, input, target });
        if !action.is_stop() {
            apply_in_place(&mut state, action).map_err(|e| ModelError::Trace { id: ex.id.clone(), message: e.to_string() })?;
        }
    }
    if state != ex.pe {
        return Err(ModelError::Trace { id: ex.id.clone(), message: "trace does not produce pe".into() });
    }
    Ok(())
}

fn build_pairs(model: &Model, examples: &[TrainExample], traces: impl Fn(usize, &TrainExample) -> Trace) -> Result<Vec<Pair>, ModelError> {
    let mut pairs = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        teacher_forced(model, i, ex, &traces(i, ex), &mut pairs)?;
    }
    Ok(pairs)
}

/// Corpus TER of greedy decodes against the post-edits.
pub fn dev_ter(model: &Model, dev: &[TrainExample], max_actions: usize) -> Result<f64, ModelError> {
    let opts = DecodeOptions { max_actions, nth_on_revisit: false };
    let mut hyps = Vec::with_capacity(dev.len());
    for ex in dev {
        hyps.push(decode(model, &ex.src, &ex.mt, opts)?.final_tokens);
    }
    let refs: Vec<Vec<String>> = dev.iter().map(|e| e.pe.clone()).collect();
    corpus_ter(&hyps, &refs, TerOptions::default()).map_err(|e| ModelError::Config(e.to_string()))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
}

impl Adam {
    fn new(model: &Model) -> Self {
        let n = model.num_params();
        let mut decay = vec![false; n];
        for t in &model.layout().tensors {
            if t.decay {
                decay[t.range()].fill(true);
            }
        }
        Adam { m: vec![0.0; n], v: vec![0.0; n], decay }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, step: usize, c: &TrainConfig) {
        let bc1 = 1.0 - c.beta1.powi(step as i32);
        let bc2 = 1.0 - c.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mut delta = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + c.adam_eps);
            if self.decay[i] {
                delta += c.weight_decay * params[i];
            }
            params[i] -= lr * delta;
        }
    }
}

/// Trains `model` in place of a copy and returns the selected parameters.
///
/// Batches are filled with teacher-forced states until their input lengths
/// reach `tokens_per_batch`; the batch loss is the mean over its states.
/// `on_checkpoint` sees every checkpoint as it is taken.
pub fn train(
    model: Model,
    examples: &[TrainExample],
    dev: &[TrainExample],
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<(), ModelError>,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ModelError::Config("no training examples".into()));
    }
    let mut model = model;
    let mut pairs = build_pairs(&model, examples, |_, ex| ex.trace.clone())?;
    let mut adam = Adam::new(&model);
    let mut grad = vec![0.0; model.num_params()];
    let mut log = Vec::with_capacity(config.max_steps);
    let mut best: Option<(Model, usize, Option<f64>)> = None;

    let mut step = 0;
    let mut epoch = 0u64;
    'epochs: loop {
        if epoch > 0 && config.resample_per_epoch {
            let epoch_seed = derive_seed(config.seed, epoch);
            pairs = build_pairs(&model, examples, |i, ex| {
                shuffled_trace(&min_edit_script(&ex.mt, &ex.pe), derive_seed(epoch_seed, i as u64))
            })?;
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ 0x5eed, epoch)));
        let mut cursor = 0;
        while cursor < order.len() {
            let mut batch = Vec::new();
            let mut tokens = 0;
            while cursor < order.len() && (batch.is_empty() || tokens < config.tokens_per_batch) {
                let p = &pairs[order[cursor]];
                tokens += p.input.len();
                batch.push(order[cursor]);
                cursor += 1;
            }
            step += 1;
            grad.fill(0.0);
            let mut total = 0.0;
            let step_seed = derive_seed(config.seed, step as u64);
            for (k, &pi) in batch.iter().enumerate() {
                let pair = &pairs[pi];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, k as u64));
                let dropout = (config.dropout > 0.0).then_some(Dropout { rate: config.dropout, rng: &mut rng });
                let l = loss_and_grad(&model, &pair.input, pair.target, config.label_smoothing, dropout, &mut grad)?;
                if !l.is_finite() {
                    return Err(ModelError::NonFinite { step, id: examples[pair.example].id.clone() });
                }
                total += l;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if config.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    let f = config.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= f);
                }
            }
            let lr = lr_at(config, step);
            adam.update(&mut model.params, &grad, lr, step, config);

            let mut row = LogRow { step, lr, loss: total * scale, dev_ter: None };
            if step % config.checkpoint_interval == 0 || step == config.max_steps {
                let ter = if dev.is_empty() { None } else { Some(dev_ter(&model, dev, config.max_actions)?) };
                row.dev_ter = ter;
                on_checkpoint(&Checkpoint::new(step, ter, config.clone(), model.clone()))?;
                let better = match (&best, ter) {
                    (None, _) | (_, None) => true,
                    (Some((_, _, Some(b))), Some(t)) => t < *b,
                    (Some((_, _, None)), Some(_)) => true,
                };
                if better {
                    best = Some((model.clone(), step, ter));
                }
            }
            log.push(row);
            if step >= config.max_steps {
                break 'epochs;
            }
        }
        epoch += 1;
    }
    let (best, best_step, best_dev_ter) = best.expect("the last step is always a checkpoint");
    Ok(TrainOutcome { best, best_step, best_dev_ter, last: model, log })
}
