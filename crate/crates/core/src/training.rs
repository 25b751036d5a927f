//! Deterministic (p, k) training loop with Adam, step-decay learning rate,
//! checkpoints and a line-delimited metrics log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gaitkit_tensor::{BnMode, Tape, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneConfig, Model, NamedTensor};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::gaitdata::{Dataset, SilhouetteSequence, SplitName, NORM_HEIGHT, NORM_WIDTH};
use crate::losses::{combined, LossConfig};
use crate::simo::SimoConfig;

pub const CHECKPOINT_FORMAT: &str = "gaitkit-checkpoint/1";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.gkpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Subjects per batch.
    pub p: usize,
    /// Sequences per subject.
    pub k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { p: 8, k: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub lr_low: f64,
    /// First iteration that uses `lr_low`.
    pub decay_at: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_low: 1e-5,
            decay_at: 70_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, iter: u64) -> f64 {
        if iter < self.decay_at {
            self.lr
        } else {
            self.lr_low
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub total_iters: u64,
    /// Checkpoint interval in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub frames_per_sample: usize,
    pub data_root: Option<PathBuf>,
    pub sampler: SamplerConfig,
    pub optimizer: OptimizerConfig,
    pub backbone: BackboneConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_iters: 80_000,
            checkpoint_every: 10_000,
            frames_per_sample: 30,
            data_root: None,
            sampler: SamplerConfig::default(),
            optimizer: OptimizerConfig::default(),
            backbone: BackboneConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small full-model configuration (SiMo plus FeMo on stages 1 and 2)
    /// sized for single-machine CPU runs on the synthetic presets.
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            total_iters: 2000,
            checkpoint_every: 0,
            frames_per_sample: 16,
            data_root: None,
            sampler: SamplerConfig { p: 4, k: 2 },
            optimizer: OptimizerConfig {
                lr: 1e-2,
                lr_low: 1e-3,
                decay_at: 1500,
                ..OptimizerConfig::default()
            },
            backbone: BackboneConfig {
                stage_channels: vec![4, 8, 8],
                femo_enabled: vec![false, true, true],
                simo: SimoConfig {
                    motion_channels: 4,
                    ..SimoConfig::default()
                },
                num_parts: 4,
                embedding_dim: 16,
                input_pool: 4,
                ..BackboneConfig::default()
            },
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.p < 2 || s.k < 2 {
            return Err(Error::Config(format!("sampler needs p >= 2 and k >= 2, got p={} k={}", s.p, s.k)));
        }
        if self.total_iters < self.optimizer.decay_at {
            return Err(Error::Config(format!(
                "total_iters {} is below the decay iteration {}",
                self.total_iters, self.optimizer.decay_at
            )));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(o.lr_low > 0.0) || !(o.eps > 0.0) {
            return Err(Error::Config("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        self.backbone.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        if self.frames_per_sample < self.backbone.min_frames() {
            return Err(Error::Config(format!(
                "frames_per_sample {} is below the backbone minimum {}",
                self.frames_per_sample,
                self.backbone.min_frames()
            )));
        }
        Ok(())
    }

    /// SHA-256 over the settings that shape the training trajectory.
    /// Run length, checkpoint cadence, data location and evaluation
    /// settings are excluded so a run can be extended or re-evaluated.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.total_iters = 0;
        c.checkpoint_every = 0;
        c.data_root = None;
        c.eval = EvalConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Normalised training-split sequences with class labels in split order.
pub struct TrainData {
    pub subjects: Vec<String>,
    pub seqs: Vec<SilhouetteSequence>,
    /// Dataset entry index of each sequence.
    pub entries: Vec<usize>,
    pub labels: Vec<usize>,
    pub by_class: Vec<Vec<usize>>,
}

impl TrainData {
    pub fn load(data: &Dataset) -> Result<Self> {
        let subjects = data.index.subjects(SplitName::Train).to_vec();
        let entries = data.index.entries_in(SplitName::Train);
        let seqs = entries.par_iter().map(|&e| data.load(e)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = seqs
            .iter()
            .map(|s| {
                subjects
                    .iter()
                    .position(|x| *x == s.meta.subject_id)
                    .expect("train entries belong to train subjects")
            })
            .collect();
        let mut by_class = vec![Vec::new(); subjects.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Input(format!("training subject {} has no sequences", subjects[c])));
        }
        Ok(Self {
            subjects,
            seqs,
            entries,
            labels,
            by_class,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.subjects.len()
    }
}

/// One assembled batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[p·k, 1, frames, 64, 44]`
    pub input: Tensor,
    pub labels: Vec<usize>,
    /// Index into [`TrainData::seqs`] of each item.
    pub items: Vec<usize>,
    /// First frame of each crop.
    pub starts: Vec<usize>,
}

/// Frame indices of a `frames`-long window starting at `start`, cycling
/// through the sequence when it is shorter than the window.
pub fn crop_indices(len: usize, start: usize, frames: usize) -> Vec<usize> {
    (0..frames).map(|i| (start + i) % len).collect()
}

/// Draws `p` distinct subjects and `k` sequences of each (with replacement
/// only when a subject has fewer than `k`), then a random contiguous crop
/// of `frames` frames per sequence.
pub fn sample_batch<R: Rng>(data: &TrainData, p: usize, k: usize, frames: usize, rng: &mut R) -> Result<Batch> {
    let nc = data.num_classes();
    if p > nc {
        return Err(Error::Config(format!("sampler p = {p} exceeds the {nc} training subjects")));
    }
    if frames == 0 {
        return Err(Error::Config("frames_per_sample must be positive".into()));
    }
    let mut labels = Vec::with_capacity(p * k);
    let mut items = Vec::with_capacity(p * k);
    let mut starts = Vec::with_capacity(p * k);
    for class in index::sample(rng, nc, p).into_iter() {
        let pool = &data.by_class[class];
        let picks: Vec<usize> = if pool.len() >= k {
            index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        };
        for item in picks {
            let len = data.seqs[item].len();
            let start = if len > frames { rng.gen_range(0..=len - frames) } else { 0 };
            labels.push(class);
            items.push(item);
            starts.push(start);
        }
    }
    let plane = NORM_HEIGHT * NORM_WIDTH;
    let mut buf = vec![0.0; items.len() * frames * plane];
    buf.par_chunks_mut(frames * plane).enumerate().for_each(|(slot, out)| {
        let seq = &data.seqs[items[slot]];
        for (t, src) in crop_indices(seq.len(), starts[slot], frames).into_iter().enumerate() {
            for (o, &v) in out[t * plane..(t + 1) * plane].iter_mut().zip(seq.frame(src)) {
                *o = v as f64;
            }
        }
    });
    let input = Tensor::new(vec![items.len(), 1, frames, NORM_HEIGHT, NORM_WIDTH], buf)?;
    Ok(Batch {
        input,
        labels,
        items,
        starts,
    })
}

/// Adam with bias correction, in the PyTorch update form.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[NamedTensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [NamedTensor], grads: &[Vec<f64>], lr: f64, cfg: &OptimizerConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let step_size = lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + cfg.eps;
                *w -= step_size * *m / denom;
            }
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    /// Zero-based iteration.
    pub iter: u64,
    pub total: f64,
    pub triplet: f64,
    pub ce: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, in decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        let seed: [u8; 32] = unhex(&self.seed)?.try_into().ok()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed iterations.
    pub iteration: u64,
    pub model: Model,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricRecord>,
    /// Training subjects in label order.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub num_classes: usize,
    pub classes: Vec<String>,
    pub iteration: u64,
    pub adam_step: u64,
    pub rng: RngState,
    pub history: Vec<MetricRecord>,
    pub tensors: Vec<String>,
}

fn sampling_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl TrainState {
    /// Freshly initialised state for `classes` training subjects.
    pub fn new(cfg: &ExperimentConfig, classes: Vec<String>) -> Result<Self> {
        let model = Model::new(&cfg.backbone, classes.len(), &mut init_rng(cfg.seed))?;
        let adam = Adam::new(&model.params);
        Ok(Self {
            iteration: 0,
            model,
            adam,
            rng: sampling_rng(cfg.seed),
            history: Vec::new(),
            classes,
        })
    }

    pub fn manifest(&self, cfg: &ExperimentConfig) -> Manifest {
        let mut config = cfg.clone();
        config.data_root = None;
        Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            config_digest: cfg.digest(),
            config,
            num_classes: self.model.num_classes,
            classes: self.classes.clone(),
            iteration: self.iteration,
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
            tensors: self.tensors().into_iter().map(|(n, _)| n).collect(),
        }
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.named_tensors();
        for (kind, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (p, mom) in self.model.params.iter().zip(moments) {
                let t = Tensor::new(p.value.shape().to_vec(), mom.clone()).expect("moment matches parameter shape");
                out.push((format!("adam.{kind}.{}", p.name), t));
            }
        }
        out
    }

    pub fn to_bytes(&self, cfg: &ExperimentConfig) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest(cfg)).expect("manifest serialises");
        checkpoint::encode(&manifest, &self.tensors())
    }

    pub fn save(&self, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest(cfg)).expect("manifest serialises");
        checkpoint::write_file(path, &manifest, &self.tensors())
    }

    /// Reads a checkpoint and rebuilds the state and the configuration
    /// that produced it.
    pub fn load(path: &Path) -> Result<(Manifest, TrainState)> {
        let (raw, tensors) = checkpoint::read_file(path)?;
        let bad = |msg: String| Error::CheckpointContent {
            path: path.to_path_buf(),
            msg,
        };
        let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported manifest format {:?}", manifest.format)));
        }
        if manifest.config.digest() != manifest.config_digest {
            return Err(bad("manifest digest does not match its configuration".into()));
        }
        let names: Vec<&String> = tensors.iter().map(|(n, _)| n).collect();
        if names.len() != manifest.tensors.len() || names.iter().zip(&manifest.tensors).any(|(a, b)| *a != b) {
            return Err(bad("tensor list differs from the manifest".into()));
        }
        if manifest.classes.len() != manifest.num_classes {
            return Err(bad("class list length differs from num_classes".into()));
        }
        let mut model = Model::new(&manifest.config.backbone, manifest.num_classes, &mut init_rng(0))
            .map_err(|e| bad(format!("configuration: {e}")))?;
        let lookup = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
        model.load_named(lookup).map_err(|e| bad(e.to_string()))?;
        let mut adam = Adam::new(&model.params);
        adam.step = manifest.adam_step;
        for (kind, moments) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            for (p, mom) in model.params.iter().zip(moments.iter_mut()) {
                let name = format!("adam.{kind}.{}", p.name);
                let t = lookup(&name).ok_or_else(|| bad(format!("missing {name}")))?;
                if t.numel() != mom.len() {
                    return Err(bad(format!("{name} has {} values, expected {}", t.numel(), mom.len())));
                }
                mom.copy_from_slice(t.data());
            }
        }
        let rng = manifest.rng.restore().ok_or_else(|| bad("unreadable rng state".into()))?;
        if manifest.history.len() as u64 != manifest.iteration {
            return Err(bad("metric history length differs from the iteration count".into()));
        }
        let state = TrainState {
            iteration: manifest.iteration,
            model,
            adam,
            rng,
            history: manifest.history.clone(),
            classes: manifest.classes.clone(),
        };
        Ok((manifest, state))
    }

    /// Runs one optimisation step and returns its metrics.
    pub fn step(&mut self, cfg: &ExperimentConfig, data: &TrainData) -> Result<MetricRecord> {
        let iter = self.iteration;
        let lr = cfg.optimizer.lr_at(iter);
        let batch = sample_batch(data, cfg.sampler.p, cfg.sampler.k, cfg.frames_per_sample, &mut self.rng)?;
        let tape = Tape::new();
        let vars = self.model.bind(&tape, true);
        let out = self.model.forward(&tape, &vars, &batch.input, BnMode::Train)?;
        let terms = combined(out.parts, out.logits, &batch.labels, &cfg.loss)?;
        let total = terms.total.item();
        let offending = || batch.items.iter().map(|&i| data.entries[i]).collect::<Vec<_>>();
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                entries: offending(),
            });
        }
        let grads = tape.backward(terms.total)?;
        let grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(&self.model.params)
            .map(|(v, p)| grads.get(*v).map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec))
            .collect();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                entries: offending(),
            });
        }
        if let Some(stats) = &out.bn_stats {
            self.model.update_bn(stats);
        }
        self.adam.update(&mut self.model.params, &grads, lr, &cfg.optimizer);
        for p in &mut self.model.params {
            if p.name == "head.gem.p" {
                let v = &mut p.value.data_mut()[0];
                *v = v.max(1.0);
            }
        }
        let rec = MetricRecord {
            iter,
            total,
            triplet: terms.triplet.item(),
            ce: terms.ce.item(),
            lr,
        };
        self.iteration += 1;
        self.history.push(rec.clone());
        Ok(rec)
    }
}

fn metric_line(rec: &MetricRecord) -> String {
    let mut s = serde_json::to_string(rec).expect("record serialises");
    s.push('\n');
    s
}

/// Trains until `cfg.total_iters`, from scratch or from `resume`. With an
/// output directory, writes `metrics.jsonl`, `timing.jsonl`, periodic
/// `ckpt-NNNNNN.gkpt` files and `final.gkpt`.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, out_dir: Option<&Path>, resume: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    let td = TrainData::load(data)?;
    let mut state = match resume {
        Some(path) => {
            let (manifest, state) = TrainState::load(path)?;
            let expected = cfg.digest();
            if manifest.config_digest != expected {
                return Err(Error::ConfigMismatch {
                    expected,
                    found: manifest.config_digest,
                });
            }
            if state.classes != td.subjects {
                return Err(Error::Input(format!(
                    "checkpoint {} was trained on subjects {:?}, the dataset has {:?}",
                    path.display(),
                    state.classes,
                    td.subjects
                )));
            }
            state
        }
        None => TrainState::new(cfg, td.subjects.clone())?,
    };
    let mut logs = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let metrics_path = dir.join(METRICS_FILE);
            let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
            for rec in &state.history {
                metrics
                    .write_all(metric_line(rec).as_bytes())
                    .map_err(|e| Error::io(&metrics_path, e))?;
            }
            let timing_path = dir.join(TIMING_FILE);
            let timing = OpenOptions::new()
                .create(true)
                .append(resume.is_some())
                .write(true)
                .truncate(resume.is_none())
                .open(&timing_path)
                .map_err(|e| Error::io(&timing_path, e))?;
            Some((dir, metrics_path, metrics, timing_path, BufWriter::new(timing)))
        }
        None => None,
    };
    log::info!(
        "training {} parameters for {} classes, iterations {}..{}",
        state.model.param_count(),
        state.model.num_classes,
        state.iteration,
        cfg.total_iters
    );
    while state.iteration < cfg.total_iters {
        let t0 = Instant::now();
        let rec = state.step(cfg, &td)?;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        if rec.iter % 100 == 0 {
            log::info!(
                "iter {} loss {:.5} (triplet {:.5}, ce {:.5}) lr {}",
                rec.iter,
                rec.total,
                rec.triplet,
                rec.ce,
                rec.lr
            );
        }
        if let Some((dir, mp, metrics, tp, timing)) = &mut logs {
            metrics.write_all(metric_line(&rec).as_bytes()).map_err(|e| Error::io(&*mp, e))?;
            writeln!(timing, "{{\"iter\":{},\"wall_ms\":{wall_ms:.3}}}", rec.iter).map_err(|e| Error::io(&*tp, e))?;
            if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
                metrics.flush().map_err(|e| Error::io(&*mp, e))?;
                state.save(cfg, &dir.join(format!("ckpt-{:06}.gkpt", state.iteration)))?;
            }
        }
    }
    if let Some((dir, mp, mut metrics, tp, mut timing)) = logs {
        metrics.flush().map_err(|e| Error::io(&mp, e))?;
        timing.flush().map_err(|e| Error::io(&tp, e))?;
        state.save(cfg, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(state)
}
