//! Deterministic desk-scale training harness.
//!
//! The recipe shape: AdamW with decoupled weight decay (biases and norm
//! affines exempt), linear warmup into cosine decay, label smoothing, and
//! per-block stochastic depth. Every stochastic stream is seeded and
//! positionable, batch order is fixed by a seeded shuffle, and gradients are
//! reduced in parameter-store order, so a run is a pure function of its
//! configuration. Checkpoints capture weights, optimizer moments and stream
//! positions; resuming from epoch k replays the uninterrupted run exactly.

pub mod data;
pub mod optim;

use crate::backbone::{CoreKind, Model, VariantConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{labels, Stream, StreamState};
use crate::shift::{Connection, ForwardMode, Padding, ShiftConfig};
use crate::tensor::tape::Tape;
use crate::tensor::{Real, Tensor};
use std::time::Instant;

pub use data::{hflip, synth_dataset, Dataset, DatasetSpec};
pub use optim::{adamw_step, lr_schedule, AdamState, AdamWHyper};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" | "narrow" => Ok(Precision::F32),
            "f64" | "wide" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: VariantConfig,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub smoothing: f64,
    pub seed: u64,
    pub precision: Precision,
    pub hflip: bool,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl TrainConfig {
    /// The toy recipe: C=16 blocks {1,1,2,1} on the 4-class 32x32 set.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            variant: VariantConfig::toy(4),
            dataset: DatasetSpec::default(),
            epochs: 30,
            warmup_epochs: 3,
            base_lr: 1e-3,
            min_lr: 0.0,
            weight_decay: 0.05,
            batch_size: 32,
            smoothing: 0.1,
            seed,
            precision: Precision::F32,
            hflip: false,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1)", self.smoothing)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.variant.num_classes != self.dataset.classes {
            return Err(Error::Config(format!(
                "model has {} classes but the dataset has {}",
                self.variant.num_classes, self.dataset.classes
            )));
        }
        Ok(())
    }

    fn steps_per_epoch(&self) -> u64 {
        (self.dataset.samples as u64).div_ceil(self.batch_size as u64)
    }

    fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.epochs as u64
    }

    fn warmup_steps(&self) -> u64 {
        self.steps_per_epoch() * self.warmup_epochs as u64
    }
}

/// One metrics record per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub wallclock_seconds: f64,
}

impl EpochRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.wallclock_seconds
        )
    }

    /// Equality of the deterministic fields (everything but wallclock).
    pub fn same_results(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.lr == other.lr
            && self.train_loss == other.train_loss
            && self.train_acc == other.train_acc
    }
}

pub fn metrics_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,train_acc,wallclock_seconds\n");
    for r in records {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub opt: AdamState<T>,
    /// Records for the epochs this call actually ran.
    pub metrics: Vec<EpochRecord>,
    /// State captured after the last epoch ran.
    pub checkpoint: Checkpoint,
}

/// Train the full schedule from scratch.
pub fn train<T: Real>(cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_until(cfg, cfg.epochs)
}

/// Train from scratch but stop (and checkpoint) after `stop_epoch` epochs of
/// the full schedule. The learning-rate horizon stays `cfg.epochs`.
pub fn train_until<T: Real>(cfg: &TrainConfig, stop_epoch: usize) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if stop_epoch == 0 || stop_epoch > cfg.epochs {
        return Err(Error::Config(format!(
            "stop epoch {stop_epoch} outside 1..={}",
            cfg.epochs
        )));
    }
    let dataset = synth_dataset::<T>(&cfg.dataset)?;
    let mut model = Model::<T>::with_seed(cfg.variant.clone(), cfg.seed)?;
    let mut opt = AdamState::new(&model.store);
    let mut droppath = Stream::new(cfg.seed, labels::DROP_PATH);
    let mut shuffle = Stream::new(cfg.seed, labels::SHUFFLE);
    run_epochs(cfg, &dataset, &mut model, &mut opt, &mut droppath, &mut shuffle, 0, stop_epoch)
}

/// Continue a checkpointed run to the end of the schedule; the records
/// produced are identical to the tail of the uninterrupted run.
pub fn resume<T: Real>(cfg: &TrainConfig, ck: &Checkpoint) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let dataset = synth_dataset::<T>(&cfg.dataset)?;
    let (mut model, mut opt, mut droppath, mut shuffle, epochs_done) = restore_state::<T>(cfg, ck)?;
    if epochs_done >= cfg.epochs {
        return Err(Error::Config(format!(
            "checkpoint already covers {epochs_done} of {} epochs",
            cfg.epochs
        )));
    }
    run_epochs(cfg, &dataset, &mut model, &mut opt, &mut droppath, &mut shuffle, epochs_done, cfg.epochs)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs<T: Real>(
    cfg: &TrainConfig,
    dataset: &Dataset<T>,
    model: &mut Model<T>,
    opt: &mut AdamState<T>,
    droppath: &mut Stream,
    shuffle: &mut Stream,
    start_epoch: usize,
    end_epoch: usize,
) -> Result<TrainOutcome<T>> {
    let hp = AdamWHyper { betas: cfg.betas, eps: cfg.eps, weight_decay: cfg.weight_decay };
    let eps_t = T::from_f64(cfg.smoothing);
    let n = dataset.len();
    let mut metrics = Vec::new();

    for epoch in start_epoch..end_epoch {
        let t0 = Instant::now();
        let perm = shuffle.permutation(n);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut last_lr = 0.0;
        for batch_idx in perm.chunks(cfg.batch_size) {
            let lr = lr_schedule(opt.step, cfg.total_steps(), cfg.warmup_steps(), cfg.base_lr, cfg.min_lr)?;
            last_lr = lr;
            let (mut images, targets) = dataset.batch(batch_idx);
            if cfg.hflip && shuffle.uniform() < 0.5 {
                images = hflip(&images);
            }

            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let iv = tape.leaf(&images);
            let step_result = (|| -> Result<(T, Tensor<T>)> {
                let logits = model.forward(&mut tape, &bind, iv, &mut ForwardMode::Train(droppath))?;
                let loss = tape.smoothed_cross_entropy(logits, &targets, eps_t)?;
                let loss_val = tape.value(loss).item();
                let logits_val = tape.value(logits).clone();
                tape.backward(loss)?;
                Ok((loss_val, logits_val))
            })();
            let (loss_val, logits_val) = match step_result {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss { step: opt.step, lr, grad_norm: f64::NAN })
                }
                Err(e) => return Err(e),
            };
            let grads = match model.store.gradients(&tape, &bind) {
                Ok(g) => g,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss { step: opt.step, lr, grad_norm: f64::INFINITY })
                }
                Err(e) => return Err(e),
            };
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss { step: opt.step, lr, grad_norm: grad_norm(&grads) });
            }
            adamw_step(&mut model.store, &grads, opt, lr, &hp)?;

            loss_sum += loss_val.wide() * batch_idx.len() as f64;
            correct += count_correct(&logits_val, &targets);
        }
        metrics.push(EpochRecord {
            epoch: epoch + 1,
            lr: last_lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            wallclock_seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let checkpoint = make_checkpoint(cfg, model, opt, droppath, shuffle, end_epoch);
    let model = std::mem::replace(model, Model::with_seed(cfg.variant.clone(), cfg.seed)?);
    let opt = std::mem::replace(opt, AdamState { m: Vec::new(), v: Vec::new(), step: 0 });
    Ok(TrainOutcome { model, opt, metrics, checkpoint })
}

fn grad_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.wide() * v.wide())
        .sum::<f64>()
        .sqrt()
}

/// Correct predictions under first-maximum argmax.
pub fn count_correct<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> usize {
    let k = logits.dims()[1];
    targets
        .iter()
        .enumerate()
        .filter(|&(bi, &t)| {
            let row = &logits.data()[bi * k..(bi + 1) * k];
            let mut best = 0;
            for (ci, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = ci;
                }
            }
            best == t
        })
        .count()
}

/// Eval-mode accuracy over a dataset.
pub fn evaluate<T: Real>(model: &Model<T>, dataset: &Dataset<T>, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, targets) = dataset.batch(chunk);
        let logits = model.forward_eval(&images)?;
        correct += count_correct(&logits, &targets);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

// ---------------------------------------------------------------------------
// checkpoint wiring
// ---------------------------------------------------------------------------

fn padding_code(p: Padding) -> f64 {
    match p {
        Padding::Zero => 0.0,
        Padding::Circular => 1.0,
        Padding::Reflect => 2.0,
        Padding::Replicate => 3.0,
    }
}

fn padding_from_code(c: f64) -> Result<Padding> {
    match c as i64 {
        0 => Ok(Padding::Zero),
        1 => Ok(Padding::Circular),
        2 => Ok(Padding::Reflect),
        3 => Ok(Padding::Replicate),
        other => Err(Error::Checkpoint(format!("bad padding code {other}"))),
    }
}

fn core_code(c: CoreKind) -> f64 {
    match c {
        CoreKind::AxialShift => 0.0,
        CoreKind::GlobalMlp => 1.0,
        CoreKind::AxialMlp => 2.0,
        CoreKind::WindowMlp => 3.0,
    }
}

fn core_from_code(c: f64) -> Result<CoreKind> {
    match c as i64 {
        0 => Ok(CoreKind::AxialShift),
        1 => Ok(CoreKind::GlobalMlp),
        2 => Ok(CoreKind::AxialMlp),
        3 => Ok(CoreKind::WindowMlp),
        other => Err(Error::Checkpoint(format!("bad core code {other}"))),
    }
}

fn encode_variant(v: &VariantConfig) -> Tensor<f64> {
    let vals = vec![
        v.patch_size as f64,
        v.channels as f64,
        v.blocks[0] as f64,
        v.blocks[1] as f64,
        v.blocks[2] as f64,
        v.blocks[3] as f64,
        v.mlp_ratio as f64,
        v.shift.s_h as f64,
        v.shift.s_v as f64,
        v.shift.dilation as f64,
        padding_code(v.shift.padding),
        if v.connection == Connection::Serial { 1.0 } else { 0.0 },
        v.num_classes as f64,
        v.drop_path_max,
        v.in_channels as f64,
        core_code(v.core),
    ];
    Tensor::from_vec(vec![vals.len()], vals).expect("fixed length")
}

/// Decode a model configuration stored in a checkpoint.
pub fn decode_variant(t: &Tensor<f64>) -> Result<VariantConfig> {
    let d = t.data();
    if d.len() != 16 {
        return Err(Error::Checkpoint(format!("variant vector has {} fields, expected 16", d.len())));
    }
    Ok(VariantConfig {
        name: "custom".into(),
        patch_size: d[0] as usize,
        channels: d[1] as usize,
        blocks: [d[2] as usize, d[3] as usize, d[4] as usize, d[5] as usize],
        mlp_ratio: d[6] as usize,
        shift: ShiftConfig::new(d[7] as usize, d[8] as usize, d[9] as usize, padding_from_code(d[10])?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?,
        connection: if d[11] == 1.0 { Connection::Serial } else { Connection::Parallel },
        num_classes: d[12] as usize,
        drop_path_max: d[13],
        in_channels: d[14] as usize,
        core: core_from_code(d[15])?,
    })
}

fn push_stream(ck: &mut Checkpoint, prefix: &str, s: &Stream) {
    let st = s.state();
    ck.push_u64(format!("{prefix}.seed"), st.seed);
    ck.push_u64(format!("{prefix}.label"), st.label);
    ck.push_u128(format!("{prefix}.pos"), st.word_pos);
}

fn get_stream(ck: &Checkpoint, prefix: &str) -> Result<Stream> {
    Ok(Stream::restore(StreamState {
        seed: ck.get_u64(&format!("{prefix}.seed"))?,
        label: ck.get_u64(&format!("{prefix}.label"))?,
        word_pos: ck.get_u128(&format!("{prefix}.pos"))?,
    }))
}

/// Capture the full training state into the checkpoint container.
pub fn make_checkpoint<T: Real>(
    cfg: &TrainConfig,
    model: &Model<T>,
    opt: &AdamState<T>,
    droppath: &Stream,
    shuffle: &Stream,
    epochs_done: usize,
) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.entries
        .push(("cfg.variant".into(), crate::checkpoint::AnyTensor::F64(encode_variant(&cfg.variant))));
    for e in model.store.entries() {
        ck.push(format!("model.{}", e.name), e.tensor.clone());
    }
    for (e, m) in model.store.entries().iter().zip(&opt.m) {
        ck.push(format!("opt.m.{}", e.name), m.clone());
    }
    for (e, v) in model.store.entries().iter().zip(&opt.v) {
        ck.push(format!("opt.v.{}", e.name), v.clone());
    }
    ck.push_u64("state.step", opt.step);
    ck.push_u64("state.epoch", epochs_done as u64);
    push_stream(&mut ck, "rng.droppath", droppath);
    push_stream(&mut ck, "rng.shuffle", shuffle);
    ck
}

type Restored<T> = (Model<T>, AdamState<T>, Stream, Stream, usize);

fn restore_state<T: Real>(cfg: &TrainConfig, ck: &Checkpoint) -> Result<Restored<T>> {
    let stored = ck
        .get("cfg.variant")
        .ok_or_else(|| Error::Checkpoint("missing cfg.variant".into()))?
        .as_f64();
    let stored_cfg = decode_variant(&stored)?;
    let mut expect = cfg.variant.clone();
    expect.name = "custom".into();
    if stored_cfg != expect {
        return Err(Error::Checkpoint(
            "checkpoint was written by a different model configuration".into(),
        ));
    }
    let mut model = Model::<T>::with_seed(cfg.variant.clone(), cfg.seed)?;
    let mut opt = AdamState::new(&model.store);
    load_model_params(&mut model, ck)?;
    for (i, e) in model.store.entries().iter().enumerate() {
        let m = ck
            .get(&format!("opt.m.{}", e.name))
            .ok_or_else(|| Error::Checkpoint(format!("missing first moment for {}", e.name)))?;
        let v = ck
            .get(&format!("opt.v.{}", e.name))
            .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {}", e.name)))?;
        opt.m[i] = cast_into::<T>(m, e.tensor.dims())?;
        opt.v[i] = cast_into::<T>(v, e.tensor.dims())?;
    }
    opt.step = ck.get_u64("state.step")?;
    let epoch = ck.get_u64("state.epoch")? as usize;
    let droppath = get_stream(ck, "rng.droppath")?;
    let shuffle = get_stream(ck, "rng.shuffle")?;
    Ok((model, opt, droppath, shuffle, epoch))
}

fn cast_into<T: Real>(t: &crate::checkpoint::AnyTensor, dims: &[usize]) -> Result<Tensor<T>> {
    if t.dims() != dims {
        return Err(Error::Checkpoint(format!(
            "tensor dims {:?} do not match model {:?}",
            t.dims(),
            dims
        )));
    }
    if t.dtype_code() != T::DTYPE_CODE {
        return Err(Error::Checkpoint(format!(
            "dtype code {} does not match requested precision {}",
            t.dtype_code(),
            T::DTYPE_CODE
        )));
    }
    Ok(match t {
        crate::checkpoint::AnyTensor::F32(x) => x.cast::<T>(),
        crate::checkpoint::AnyTensor::F64(x) => x.cast::<T>(),
    })
}

/// Overwrite a model's parameters from `model.*` checkpoint entries.
pub fn load_model_params<T: Real>(model: &mut Model<T>, ck: &Checkpoint) -> Result<()> {
    let names: Vec<String> = model.store.entries().iter().map(|e| e.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        let t = ck
            .get(&format!("model.{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let dims = model.store.entries()[i].tensor.dims().to_vec();
        let mut restored = cast_into::<T>(t, &dims)?;
        restored.set_requires_grad(true);
        *model.store.tensor_mut(crate::params::ParamId(i)) = restored;
    }
    Ok(())
}

/// Rebuild a model (of the stored precision) from a checkpoint alone.
pub fn model_from_checkpoint<T: Real>(ck: &Checkpoint) -> Result<Model<T>> {
    let stored = ck
        .get("cfg.variant")
        .ok_or_else(|| Error::Checkpoint("missing cfg.variant".into()))?
        .as_f64();
    let cfg = decode_variant(&stored)?;
    let mut model = Model::<T>::with_seed(cfg, 0)?;
    load_model_params(&mut model, ck)?;
    Ok(model)
}
