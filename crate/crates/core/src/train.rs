//! The three-phase search: quantization-aware warmup at the maximum
//! precision, alternating gate/weight search epochs, and fine-tuning of the
//! discretized network.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::write_atomic;
use crate::autograd::Var;
use crate::cost::{self, CostLut, RegMode};
use crate::data::{DataSplits, Dataset};
use crate::error::{Error, Result};
use crate::gates::{anneal, PrecisionAssignment, ANNEAL_RATE, TAU_INIT};
use crate::model::{Architecture, ForwardPass, Model, ParamSlot, Precision, SearchSpace, Trainable};
use crate::optim::{Adam, AdamHyper, Sgd};
use crate::quant::CLIP_FLOOR;
use crate::tensor::Tensor;

/// Task loss of the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    #[default]
    CrossEntropy,
    /// Mean squared error against one-hot targets.
    Mse,
}

fn d_epochs_wu() -> usize {
    20
}
fn d_epochs_ft() -> usize {
    10
}
fn d_search() -> usize {
    100
}
fn d_batch() -> usize {
    32
}
fn d_lr_w() -> f64 {
    0.01
}
fn d_lr_theta() -> f64 {
    0.01
}
fn d_lr_clip() -> f64 {
    0.001
}
fn d_momentum() -> f64 {
    0.9
}
fn d_patience() -> usize {
    10
}
fn d_split() -> f64 {
    0.2
}
fn d_clip() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs_wu")]
    pub epochs_wu: usize,
    #[serde(default = "d_epochs_ft")]
    pub epochs_ft: usize,
    /// Upper bound on search epochs; early stopping usually ends the search first.
    #[serde(default = "d_search")]
    pub max_search_epochs: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub reg_mode: RegMode,
    #[serde(default)]
    pub task_loss: TaskLoss,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_lr_w")]
    pub lr_w: f64,
    #[serde(default = "d_lr_theta")]
    pub lr_theta: f64,
    #[serde(default = "d_lr_clip")]
    pub lr_clip: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    /// Fraction of each search epoch's batches that update the gates.
    #[serde(default = "d_split")]
    pub split: f64,
    #[serde(default = "d_clip")]
    pub clip_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_wu: d_epochs_wu(),
            epochs_ft: d_epochs_ft(),
            max_search_epochs: d_search(),
            lambda: 0.0,
            reg_mode: RegMode::Size,
            task_loss: TaskLoss::CrossEntropy,
            batch: d_batch(),
            lr_w: d_lr_w(),
            lr_theta: d_lr_theta(),
            lr_clip: d_lr_clip(),
            momentum: d_momentum(),
            seed: 0,
            patience: d_patience(),
            split: d_split(),
            clip_init: d_clip(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite value >= 0");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie strictly between 0 and 1");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        for (name, v) in [
            ("lr_w", self.lr_w),
            ("lr_theta", self.lr_theta),
            ("lr_clip", self.lr_clip),
            ("clip_init", self.clip_init),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Loss of one step. `total` is always `task + lambda * reg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(task: f64, reg: f64, lambda: f64) -> Self {
        Self {
            task,
            reg,
            total: task + lambda * reg,
        }
    }
}

/// One row of the search training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub reg: f64,
    pub total: f64,
    pub val_score: f64,
    /// Temperature used during the epoch.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub lambda: f64,
    pub assignment: PrecisionAssignment,
    /// Validation accuracy of the final discretized model.
    pub score: f64,
    pub test_score: f64,
    pub size_bits: u64,
    pub energy_uj: Option<f64>,
    pub search_epochs: usize,
    pub final_tau: f64,
    pub curves: Vec<EpochRecord>,
    pub model: Model,
}

/// Training phase of a batch update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Gate,
    Weight,
    Finetune,
}

/// Hooks called around every parameter update.
pub trait Observer {
    fn before_batch(&mut self, _phase: Phase, _model: &Model) {}
    fn after_batch(&mut self, _phase: Phase, _model: &Model, _loss: &LossBreakdown) {}
    /// Called after each search epoch with the temperature for the next one.
    fn search_epoch_end(&mut self, _record: &EpochRecord, _next_tau: f64) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// True once the best validation loss is `patience` or more epochs old.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    let Some(best) = history
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if v >= b => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return false;
    };
    history.len() - 1 - best >= patience
}

/// Number of gate batches in an epoch of `n` batches.
pub fn gate_batch_count(n: usize, split: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * split).round() as usize).clamp(1, n - 1)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

fn task_loss_var(pass: &mut ForwardPass, labels: &[usize], loss: TaskLoss) -> Result<Var> {
    match loss {
        TaskLoss::CrossEntropy => pass.graph.cross_entropy(pass.output, labels),
        TaskLoss::Mse => {
            let classes = pass.graph.value(pass.output).shape()[1];
            let mut target = vec![0.0; labels.len() * classes];
            for (i, &y) in labels.iter().enumerate() {
                target[i * classes + y] = 1.0;
            }
            pass.graph.mse(pass.output, &target)
        }
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Optimizer state of the weight side: SGD for weights/biases and for clips.
struct WeightOpt {
    w: Sgd,
    clip: Sgd,
}

impl WeightOpt {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            w: Sgd::new(cfg.lr_w, cfg.momentum),
            clip: Sgd::new(cfg.lr_clip, cfg.momentum),
        }
    }
}

fn apply_weight_grads(model: &mut Model, pass: &ForwardPass, grads: &crate::autograd::Gradients, opt: &mut WeightOpt) {
    for (slot, var) in pass.slots() {
        if slot.is_gate() {
            continue;
        }
        let Some(g) = grads.get(var) else { continue };
        let values = model.slot_values_mut(slot).expect("slot exists");
        match slot {
            ParamSlot::Clip(_) => {
                opt.clip.step(slot, values, g);
                values[0] = values[0].max(CLIP_FLOOR);
            }
            _ => opt.w.step(slot, values, g),
        }
    }
}

/// One weight-side update on the task loss only.
fn weight_step(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    precision: Precision<'_>,
    loss: TaskLoss,
    opt: &mut WeightOpt,
) -> Result<f64> {
    let mut pass = model.forward(x, precision, Trainable::WEIGHTS)?;
    let l = task_loss_var(&mut pass, labels, loss)?;
    let value = check_finite(pass.graph.value(l).item()?, "task loss")?;
    let grads = pass.graph.backward(l)?;
    apply_weight_grads(model, &pass, &grads, opt);
    Ok(value)
}

/// One gate update on `task + lambda * reg`.
fn gate_step(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    tau: f64,
    cfg: &TrainConfig,
    lut: Option<&CostLut>,
    adam: &mut Adam,
) -> Result<LossBreakdown> {
    let mut pass = model.forward(x, Precision::Search { tau }, Trainable::GATES)?;
    let task = task_loss_var(&mut pass, labels, cfg.task_loss)?;
    let reg = cost::regularizer_var(&mut pass, model, cfg.reg_mode, tau, lut)?;
    let (loss_var, reg_value) = match reg {
        Some(r) => {
            let scaled = pass.graph.scale(r, cfg.lambda)?;
            (pass.graph.add(task, scaled)?, pass.graph.value(r).item()?)
        }
        None => (task, 0.0),
    };
    let breakdown = LossBreakdown::new(pass.graph.value(task).item()?, reg_value, cfg.lambda);
    check_finite(breakdown.total, "search loss")?;
    let grads = pass.graph.backward(loss_var)?;
    for (slot, var) in pass.slots() {
        if !slot.is_gate() {
            continue;
        }
        if let Some(g) = grads.get(var) {
            adam.step(slot, model.slot_values_mut(slot).expect("slot exists"), g);
        }
    }
    Ok(breakdown)
}

/// Mean task loss and accuracy of `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset, precision: Precision<'_>, loss: TaskLoss) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(512) {
        let (x, labels) = data.gather(chunk);
        let mut pass = model.forward(&x, precision, Trainable::NONE)?;
        let l = task_loss_var(&mut pass, &labels, loss)?;
        total_loss += pass.graph.value(l).item()? * chunk.len() as f64;
        let out = pass.graph.value(pass.output);
        let c = out.shape()[1];
        for (row, &y) in out.data().chunks(c).zip(&labels) {
            if crate::gates::argmax_lowest(row) == y {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((check_finite(total_loss / n, "validation loss")?, correct as f64 / n))
}

fn warmup_precision(model: &Model) -> u8 {
    model.space.act_set.max().max(model.space.weight_set.max())
}

/// Quantization-aware training with every tensor at the maximum precision.
/// Only weights, biases and clips change. Returns the mean loss of each epoch.
pub fn warmup(model: &mut Model, train: &Dataset, cfg: &TrainConfig, obs: &mut dyn Observer) -> Result<Vec<f64>> {
    cfg.validate()?;
    let bits = warmup_precision(model);
    let mut rng = rng_for(cfg.seed, 1);
    let mut opt = WeightOpt::new(cfg);
    let mut losses = Vec::with_capacity(cfg.epochs_wu);
    for epoch in 0..cfg.epochs_wu {
        let mut sum = 0.0;
        let batches = shuffled_batches(train.len(), cfg.batch, &mut rng);
        for b in &batches {
            let (x, labels) = train.gather(b);
            obs.before_batch(Phase::Warmup, model);
            let l = weight_step(model, &x, &labels, Precision::Uniform(bits), cfg.task_loss, &mut opt)?;
            obs.after_batch(Phase::Warmup, model, &LossBreakdown::new(l, 0.0, 0.0));
            sum += l;
        }
        let mean = sum / batches.len().max(1) as f64;
        debug!("warmup epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Optimizer state carried across search epochs.
pub struct SearchState {
    pub tau: f64,
    pub epoch: usize,
    adam: Adam,
    opt: WeightOpt,
    rng: ChaCha8Rng,
}

impl SearchState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            tau: TAU_INIT,
            epoch: 0,
            adam: Adam::new(AdamHyper {
                lr: cfg.lr_theta,
                ..AdamHyper::default()
            }),
            opt: WeightOpt::new(cfg),
            rng: rng_for(cfg.seed, 2),
        }
    }
}

/// Statistics of one search epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub gate_batches: usize,
    pub weight_batches: usize,
    pub mean_task_loss: f64,
    /// Temperature used during the epoch.
    pub tau: f64,
}

/// One search epoch: the first `split` of the freshly shuffled batches update
/// the gates on `task + lambda * reg`, the rest update the weights and clips
/// on the task loss. The temperature is annealed once at the end.
pub fn search_epoch(
    model: &mut Model,
    state: &mut SearchState,
    train: &Dataset,
    cfg: &TrainConfig,
    lut: Option<&CostLut>,
    obs: &mut dyn Observer,
) -> Result<EpochStats> {
    let tau = state.tau;
    let batches = shuffled_batches(train.len(), cfg.batch, &mut state.rng);
    let n_gate = gate_batch_count(batches.len(), cfg.split);
    let mut sum = 0.0;
    for (i, b) in batches.iter().enumerate() {
        let (x, labels) = train.gather(b);
        if i < n_gate {
            obs.before_batch(Phase::Gate, model);
            let l = gate_step(model, &x, &labels, tau, cfg, lut, &mut state.adam)?;
            obs.after_batch(Phase::Gate, model, &l);
            sum += l.task;
        } else {
            obs.before_batch(Phase::Weight, model);
            let l = weight_step(
                model,
                &x,
                &labels,
                Precision::Search { tau },
                cfg.task_loss,
                &mut state.opt,
            )?;
            obs.after_batch(Phase::Weight, model, &LossBreakdown::new(l, 0.0, 0.0));
            sum += l;
        }
    }
    state.tau = anneal(tau, ANNEAL_RATE);
    state.epoch += 1;
    Ok(EpochStats {
        gate_batches: n_gate,
        weight_batches: batches.len() - n_gate,
        mean_task_loss: sum / batches.len().max(1) as f64,
        tau,
    })
}

/// Trains only weights and clips of the discretized network.
pub fn finetune(
    model: &mut Model,
    assignment: &PrecisionAssignment,
    train: &Dataset,
    cfg: &TrainConfig,
    obs: &mut dyn Observer,
) -> Result<()> {
    assignment.validate(&model.space.act_set, &model.space.weight_set)?;
    let mut rng = rng_for(cfg.seed, 3);
    let mut opt = WeightOpt::new(cfg);
    for _ in 0..cfg.epochs_ft {
        for b in shuffled_batches(train.len(), cfg.batch, &mut rng) {
            let (x, labels) = train.gather(&b);
            obs.before_batch(Phase::Finetune, model);
            let l = weight_step(
                model,
                &x,
                &labels,
                Precision::Discrete(assignment),
                cfg.task_loss,
                &mut opt,
            )?;
            obs.after_batch(Phase::Finetune, model, &LossBreakdown::new(l, 0.0, 0.0));
        }
    }
    Ok(())
}

/// Search and fine-tuning starting from a warmed-up model.
pub fn run_search(
    warm: &Model,
    splits: &DataSplits,
    cfg: &TrainConfig,
    lut: Option<&CostLut>,
    obs: &mut dyn Observer,
) -> Result<SearchResult> {
    cfg.validate()?;
    if cfg.reg_mode == RegMode::Energy {
        lut.ok_or_else(|| Error::Config("energy mode requires a LUT".into()))?
            .validate(&warm.space.act_set, &warm.space.weight_set)?;
    }
    let mut model = warm.clone();
    let geoms = model.arch.quant_geometries()?;
    let mut state = SearchState::new(cfg);
    let mut curves = Vec::new();
    let mut history = Vec::new();
    while state.epoch < cfg.max_search_epochs {
        let stats = search_epoch(&mut model, &mut state, &splits.train, cfg, lut, obs)?;
        let (val_loss, val_acc) = evaluate(
            &model,
            &splits.val,
            Precision::Search { tau: stats.tau },
            cfg.task_loss,
        )?;
        let reg = cost::total_reg(
            &geoms,
            &model.gate_state(stats.tau),
            cfg.reg_mode,
            lut,
            &model.space.act_set,
            &model.space.weight_set,
        )?;
        let lb = LossBreakdown::new(stats.mean_task_loss, reg, cfg.lambda);
        let record = EpochRecord {
            epoch: state.epoch - 1,
            task_loss: lb.task,
            reg: lb.reg,
            total: lb.total,
            val_score: val_acc,
            tau: stats.tau,
        };
        obs.search_epoch_end(&record, state.tau);
        curves.push(record);
        history.push(val_loss);
        if !splits.val.is_empty() && early_stop(&history, cfg.patience) {
            debug!("early stop after {} search epochs", state.epoch);
            break;
        }
    }
    let assignment = model.discretize(state.tau)?;
    finetune(&mut model, &assignment, &splits.train, cfg, obs)?;
    let (_, score) = evaluate(&model, &splits.val, Precision::Discrete(&assignment), cfg.task_loss)?;
    let (_, test_score) = evaluate(&model, &splits.test, Precision::Discrete(&assignment), cfg.task_loss)?;
    let size_bits = cost::exact_model_size(&geoms, &assignment)?;
    let energy_uj = match lut {
        Some(l) => Some(cost::exact_model_energy(&geoms, &assignment, l, &model.space.weight_set)?),
        None => None,
    };
    info!(
        "lambda {}: score {score:.4}, size {size_bits} bits, {} search epochs",
        cfg.lambda, state.epoch
    );
    Ok(SearchResult {
        lambda: cfg.lambda,
        assignment,
        score,
        test_score,
        size_bits,
        energy_uj,
        search_epochs: state.epoch,
        final_tau: state.tau,
        curves,
        model,
    })
}

/// Training curve as CSV with header `epoch,task_loss,reg,total,val_score,tau`.
pub fn curves_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "task_loss", "reg", "total", "val_score", "tau"])?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.task_loss.to_string(),
            r.reg.to_string(),
            r.total.to_string(),
            r.val_score.to_string(),
            r.tau.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Model,
}

const CHECKPOINT_FORMAT: &str = "chanmix-model";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a model as JSON; floats are printed in shortest round-trip form.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    write_atomic(path, serde_json::to_string(&ck)?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    ck.model.arch.infer_shapes()?;
    Ok(ck.model)
}

/// Cache key of a warmup run: everything that influences its result.
pub fn warmup_key(arch: &Architecture, space: &SearchSpace, dataset_key: &str, cfg: &TrainConfig) -> Result<String> {
    let parts = serde_json::json!({
        "arch": arch,
        "space": space,
        "dataset": dataset_key,
        "seed": cfg.seed,
        "epochs_wu": cfg.epochs_wu,
        "batch": cfg.batch,
        "lr_w": cfg.lr_w,
        "lr_clip": cfg.lr_clip,
        "momentum": cfg.momentum,
        "clip_init": cfg.clip_init,
        "task_loss": cfg.task_loss,
    });
    let digest = Sha256::digest(serde_json::to_vec(&parts)?);
    Ok(hex::encode(&digest[..12]))
}

/// Initializes and warms up a model, reusing a cached checkpoint from
/// `cache_dir` when one with the same key exists.
pub fn prepare_warmup(
    arch: &Architecture,
    space: &SearchSpace,
    train: &Dataset,
    dataset_key: &str,
    cfg: &TrainConfig,
    cache_dir: Option<&Path>,
) -> Result<Model> {
    let path: Option<PathBuf> = match cache_dir {
        Some(d) => Some(d.join(format!("warmup-{}.json", warmup_key(arch, space, dataset_key, cfg)?))),
        None => None,
    };
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        info!("reusing warmup checkpoint {}", p.display());
        return load_checkpoint(p);
    }
    let mut model = Model::init(arch.clone(), space.clone(), cfg.clip_init, cfg.seed)?;
    warmup(&mut model, train, cfg, &mut NoObserver)?;
    if let Some(p) = &path {
        save_checkpoint(&model, p)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs;

    #[test]
    fn early_stop_rules() {
        assert!(!early_stop(&[], 3));
        assert!(!early_stop(&[5.0, 4.0, 3.0, 2.0, 1.0], 1));
        assert!(early_stop(&[1.0; 4], 3));
        assert!(!early_stop(&[1.0; 3], 3));
        assert!(early_stop(&[3.0, 1.0, 2.0, 2.0], 2));
    }

    #[test]
    fn gate_batch_split() {
        assert_eq!(gate_batch_count(10, 0.2), 2);
        assert_eq!(gate_batch_count(2, 0.2), 1);
        assert_eq!(gate_batch_count(1, 0.2), 1);
        assert_eq!(gate_batch_count(5, 0.99), 4);
    }

    #[test]
    fn loss_breakdown_is_exact() {
        let l = LossBreakdown::new(0.3, 1234.5, 1e-4);
        assert_eq!(l.total, 0.3 + 1e-4 * 1234.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            split: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_warmup_epochs_leave_weights() {
        let arch = Architecture::mlp(&[2, 4, 2]);
        let mut m = Model::init(arch, SearchSpace::default(), 6.0, 1).unwrap();
        let before = m.clone();
        let data = blobs(20, 0.5, 1).unwrap();
        let cfg = TrainConfig {
            epochs_wu: 0,
            ..TrainConfig::default()
        };
        warmup(&mut m, &data, &cfg, &mut NoObserver).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let arch = Architecture::mlp(&[2, 5, 3]);
        let mut m = Model::init(arch, SearchSpace::default(), 6.0, 7).unwrap();
        m.params.layers[0].clip = 0.1 + 0.2;
        m.params.layers[1].gamma.as_mut().unwrap().data_mut()[0] = 1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        let bits = |m: &Model| -> Vec<u64> {
            let mut v: Vec<u64> = m.weight_snapshot().iter().map(|x| x.to_bits()).collect();
            v.extend(m.gate_snapshot().iter().map(|x| x.to_bits()));
            v
        };
        assert_eq!(bits(&m), bits(&back));
    }

    #[test]
    fn curves_csv_header() {
        let csv = curves_csv(&[EpochRecord {
            epoch: 0,
            task_loss: 0.5,
            reg: 2.0,
            total: 0.7,
            val_score: 0.9,
            tau: 5.0,
        }])
        .unwrap();
        assert!(csv.starts_with("epoch,task_loss,reg,total,val_score,tau\n0,0.5,2,0.7,0.9,5\n"));
    }
}
