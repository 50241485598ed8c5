//! Multi-task training with per-batch coil-configuration sampling, the L1
//! objective, and checkpoint persistence.
//!
//! Checkpoint directory layout: `checkpoint.json` (configs, epoch, RNG state
//! and a tensor registry of name, shape, dtype, byte offset) plus
//! `weights.bin` (little-endian f32 in registry order).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, ModelConfig};
use crate::coil_sim::{ComplexImage, DatasetManifest, MultiCoilKspace, Sample, SensitivitySet};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamState};
use crate::operators::zero_filled_recon;
use crate::task_codec::{embed_task, sample_config, EmbeddedTask, TaskVector};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Training protocol: task-conditioned joint training, task-invariant joint
/// training (all-ones conditioning), or one model for a fixed coil count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Hypercoil,
    Cctim,
    Cctsm(usize),
}

impl Protocol {
    /// Hypernetwork input for a sampled configuration.
    pub fn conditioning(&self, task: &TaskVector) -> Result<EmbeddedTask> {
        match self {
            Protocol::Hypercoil => embed_task(task),
            Protocol::Cctim | Protocol::Cctsm(_) => Ok(EmbeddedTask::all_ones()),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypercoil" => Ok(Protocol::Hypercoil),
            "cctim" => Ok(Protocol::Cctim),
            _ => {
                let k = s
                    .strip_prefix("cctsm:")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown protocol '{s}' (hypercoil, cctim, cctsm:<k>)")))?;
                Ok(Protocol::Cctsm(k))
            }
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::Hypercoil => f.write_str("hypercoil"),
            Protocol::Cctim => f.write_str("cctim"),
            Protocol::Cctsm(k) => write!(f, "cctsm:{k}"),
        }
    }
}

impl Serialize for Protocol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub protocol: Protocol,
    /// Coil counts drawn uniformly per batch; `cctsm:<k>` overrides it with `[k]`.
    pub task_pool: Vec<usize>,
    pub loss: LossKind,
    /// Use only the first `n` samples of the dataset when set.
    pub max_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            lr: 1e-3,
            seed: 0,
            protocol: Protocol::Hypercoil,
            task_pool: vec![5, 7, 9],
            loss: LossKind::L1,
            max_samples: None,
        }
    }
}

impl TrainConfig {
    /// Coil counts actually sampled under the protocol.
    pub fn effective_pool(&self) -> Vec<usize> {
        match self.protocol {
            Protocol::Cctsm(k) => vec![k],
            _ => self.task_pool.clone(),
        }
    }

    pub fn validate(&self, n_coils: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        let pool = self.effective_pool();
        if pool.is_empty() {
            return Err(Error::invalid("task_pool is empty"));
        }
        if let Some(&k) = pool.iter().find(|&&k| k == 0 || k > n_coils) {
            return Err(Error::invalid(format!(
                "task pool entry {k} incompatible with {n_coils}-coil dataset"
            )));
        }
        Ok(())
    }
}

/// Mean absolute error over the real and imaginary channels.
pub fn compute_loss(pred: &ComplexImage, target: &ComplexImage) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let total: f64 = pred
        .data
        .iter()
        .zip(target.data.iter())
        .map(|(p, t)| (p.re - t.re).abs() + (p.im - t.im).abs())
        .sum();
    Ok(total / (2 * pred.data.len()) as f64)
}

/// Gradient of [`compute_loss`] w.r.t. the prediction.
pub fn loss_gradient(pred: &ComplexImage, target: &ComplexImage) -> Array2<Complex64> {
    let n = (2 * pred.data.len()) as f64;
    let sign = |d: f64| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    let mut g = Array2::zeros(pred.shape());
    ndarray::Zip::from(&mut g)
        .and(&pred.data)
        .and(&target.data)
        .for_each(|g, p, t| *g = Complex64::new(sign(p.re - t.re), sign(p.im - t.im)) / n);
    g
}

/// A sample restricted to a coil configuration and scaled so the
/// zero-filled image peaks at 1.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub kspace: MultiCoilKspace,
    pub sens: SensitivitySet,
    pub target: ComplexImage,
    pub scale: f64,
}

pub fn prepare_sample(sample: &Sample, task: &TaskVector) -> Result<PreparedSample> {
    if task.n_coils() != sample.sens.n_coils() {
        return Err(Error::invalid(format!(
            "task covers {} coils, sample has {}",
            task.n_coils(),
            sample.sens.n_coils()
        )));
    }
    let mut kspace = sample.kspace.clone();
    for (j, mut coil) in kspace.data.outer_iter_mut().enumerate() {
        if !task.is_active(j) {
            coil.fill(Complex64::new(0.0, 0.0));
        }
    }
    let m0 = zero_filled_recon(&kspace, &sample.sens, task)?;
    let peak = m0.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    kspace.data.mapv_inplace(|v| v / scale);
    Ok(PreparedSample {
        kspace,
        sens: sample.sens.clone(),
        target: ComplexImage {
            data: sample.image.data.mapv(|v| v / scale),
        },
        scale,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::invalid("malformed RNG state");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    rng: RngState,
    tensors: Vec<TensorRecord>,
}

/// Trained parameters with the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CascadeModel,
    pub train: TrainConfig,
    pub epoch: usize,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn protocol(&self) -> Protocol {
        self.train.protocol
    }

    /// Freshly initialised model as training would start it.
    pub fn untrained(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        Ok(Self {
            model: CascadeModel::new(model, train.seed)?,
            train: train.clone(),
            epoch: 0,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(train.seed)),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = &self.model.params;
        let tensors = params
            .infos()
            .iter()
            .map(|i| TensorRecord {
                name: i.name.clone(),
                shape: i.shape.clone(),
                dtype: "f32".into(),
                offset: i.offset * 4,
            })
            .collect();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            model: self.model.config().clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            tensors,
        };
        let json_path = dir.join("checkpoint.json");
        let text = serde_json::to_string_pretty(&header).expect("checkpoint header serializes");
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

        let mut bytes = Vec::with_capacity(params.len() * 4);
        for v in params.flat() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let bin_path = dir.join("weights.bin");
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("checkpoint.json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: CheckpointHeader =
            serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::format(&json_path, format!("unsupported version {}", header.version)));
        }
        let mut model = CascadeModel::layout(&header.model)?;
        let infos = model.params.infos().to_vec();
        if infos.len() != header.tensors.len() {
            return Err(Error::format(
                &json_path,
                format!("registry lists {} tensors, model expects {}", header.tensors.len(), infos.len()),
            ));
        }
        for (info, rec) in infos.iter().zip(&header.tensors) {
            if info.name != rec.name || info.shape != rec.shape || info.offset * 4 != rec.offset || rec.dtype != "f32" {
                return Err(Error::format(
                    &json_path,
                    format!("tensor '{}' does not match the model layout", rec.name),
                ));
            }
        }
        let bin_path = dir.join("weights.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let expected = model.params.len() * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                &bin_path,
                format!("size mismatch: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        for (dst, c) in model.params.flat_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
        header.rng.restore()?;
        Ok(Self {
            model,
            train: header.train,
            epoch: header.epoch,
            rng: header.rng,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Configuration sampled for every optimizer step.
    pub tasks: Vec<TaskVector>,
}

/// Where training writes artifacts; `verbose` prints per-epoch losses to
/// stderr.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    pub verbose: bool,
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,step,loss,lr,wall_time\n");
    for r in rows {
        text.push_str(&format!("{},{},{:.9e},{},{:.3}\n", r.epoch, r.step, r.loss, r.lr, r.wall_time));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Optimises the L1 reconstruction loss over `data`, drawing a coil count
/// from the task pool and a random configuration for every batch.
pub fn train(data: &DatasetManifest, model_cfg: &ModelConfig, cfg: &TrainConfig, output: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate(data.n_coils)?;
    model_cfg.validate()?;
    model_cfg.denoiser.check_shape(data.shape[0], data.shape[1])?;
    let n = cfg.max_samples.map_or(data.len(), |m| m.min(data.len()));
    if n == 0 {
        return Err(Error::invalid("dataset has no samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CascadeModel::new(model_cfg, cfg.seed)?;
    let adam = Adam {
        lr: cfg.lr,
        ..Adam::default()
    };
    let mut state = AdamState::new(model.params.len());
    let pool = cfg.effective_pool();
    let frozen = if model_cfg.learn_penalties { Vec::new() } else { model.penalty_indices() };

    let start = Instant::now();
    let mut log = Vec::new();
    let mut tasks = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let k = pool[rng.gen_range(0..pool.len())];
            let task = sample_config(data.n_coils, k, &mut rng)?;
            let embedding = cfg.protocol.conditioning(&task)?;
            let mut grads = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = data.load_sample(idx)?;
                let prep = prepare_sample(&sample, &task)?;
                let (pred, cache) = model.forward(&prep.kspace, &prep.sens, &task, &embedding)?;
                let loss = compute_loss(&pred, &prep.target)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss at step {step}")));
                }
                batch_loss += loss;
                let g = loss_gradient(&pred, &prep.target);
                model.backward(&cache, &g, &prep.kspace, &prep.sens, &task, &mut grads)?;
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            for &i in &frozen {
                grads[i] = 0.0;
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at step {step}")));
            }
            adam.step(&mut state, model.params.flat_mut(), &grads);
            model.params.round_to_f32();
            if model.params.flat().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("parameters diverged at step {step}")));
            }
            for k in 0..model_cfg.cascades {
                model.penalties(k).validate().map_err(|_| Error::Numerical(format!("penalties diverged at step {step}")))?;
            }
            log.push(LogRow {
                epoch,
                step,
                loss: batch_loss * inv,
                lr: cfg.lr,
                wall_time: start.elapsed().as_secs_f64(),
            });
            tasks.push(task);
            step += 1;
        }
        if output.verbose {
            let rows = &log[log.len() - order.len().div_ceil(cfg.batch_size)..];
            let mean = rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
            eprintln!("epoch {epoch}/{}: mean loss {mean:.5} ({:.1}s)", cfg.epochs, start.elapsed().as_secs_f64());
        }
        if let Some(dir) = &output.dir {
            let ckpt = Checkpoint {
                model: model.clone(),
                train: cfg.clone(),
                epoch,
                rng: RngState::capture(&rng),
            };
            ckpt.save(dir)?;
            write_log(&dir.join("train_log.csv"), &log)?;
        }
    }
    let checkpoint = Checkpoint {
        model,
        train: cfg.clone(),
        epoch: cfg.epochs,
        rng: RngState::capture(&rng),
    };
    Ok(TrainOutcome { checkpoint, log, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn img(values: &[(f64, f64)], h: usize, w: usize) -> ComplexImage {
        ComplexImage::new(Array2::from_shape_vec((h, w), values.iter().map(|&(r, i)| Complex64::new(r, i)).collect()).unwrap())
            .unwrap()
    }

    #[test]
    fn loss_of_identical_images_is_zero() {
        let a = img(&[(0.1, 0.2), (0.3, -0.4), (1.0, 0.0), (0.0, 0.5)], 2, 2);
        assert_eq!(compute_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_real_offset() {
        let a = img(&[(0.1, 0.2), (0.3, -0.4), (1.0, 0.0), (0.0, 0.5)], 2, 2);
        let mut b = a.clone();
        b.data.mapv_inplace(|v| v + Complex64::new(0.1, 0.0));
        assert!((compute_loss(&b, &a).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gen = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let a = ComplexImage::new(Array2::from_shape_simple_fn((7, 5), &mut gen)).unwrap();
        let b = ComplexImage::new(Array2::from_shape_simple_fn((7, 5), &mut gen)).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for (p, t) in a.data.iter().zip(b.data.iter()) {
            sum += (p.re - t.re).abs();
            sum += (p.im - t.im).abs();
            count += 2;
        }
        assert!((compute_loss(&a, &b).unwrap() - sum / count as f64).abs() < 1e-7);
    }

    #[test]
    fn loss_shape_mismatch() {
        let a = ComplexImage::zeros(2, 2);
        let b = ComplexImage::zeros(2, 3);
        assert!(compute_loss(&a, &b).is_err());
    }

    #[test]
    fn protocol_strings() {
        for p in [Protocol::Hypercoil, Protocol::Cctim, Protocol::Cctsm(9)] {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
        assert!("cctsm".parse::<Protocol>().is_err());
        assert!("joint".parse::<Protocol>().is_err());
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let _: u64 = rng.gen();
        let st = RngState::capture(&rng);
        let mut back = st.restore().unwrap();
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }

    #[test]
    fn pool_validation() {
        let cfg = TrainConfig {
            task_pool: vec![5, 13],
            ..TrainConfig::default()
        };
        assert!(cfg.validate(12).is_err());
        let cfg = TrainConfig {
            protocol: Protocol::Cctsm(7),
            task_pool: vec![],
            ..TrainConfig::default()
        };
        assert!(cfg.validate(12).is_ok());
        assert_eq!(cfg.effective_pool(), vec![7]);
    }
}
