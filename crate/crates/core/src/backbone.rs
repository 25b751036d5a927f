//! Configurable 3-D convolutional gait backbone.
//!
//! ```text
//! input [N,1,K,64,44] ─ avg-pool(q) ─ [FeMo] ─ conv3d ─ lrelu ─┬─ concat ─ maxpool2 ─ stage 1 ─ maxpool2 ─ stages 2.. ─┐
//!        └─ SiMo: masks → aggregate → avg-pool(q) → conv3d → lrelu ─┘                                                  │
//!   ┌──────────────────────────────────────────────────────────────────────────────────────────────────────────────────┘
//!   └─ temporal max ─ horizontal strips ─ GeM ─ per-strip FC (embedding) ─ BN ─ per-strip classifier (logits)
//! ```
//!
//! Each stage after the first is `[FeMo] → conv3d → lrelu`.

use gaitkit_tensor::{BatchStats, BnMode, Padding, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::femo::{femo_block, identity_plus_noise, FemoVars};
use crate::gaitdata::{NORM_HEIGHT, NORM_WIDTH};
use crate::simo::{extract_motion_feature, fuse, motion_sequence, SimoConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    /// FeMo before the convolution of each stage.
    pub femo_enabled: Vec<bool>,
    /// Separate forward/backward difference kernels instead of one shared.
    pub femo_per_direction: bool,
    pub simo_enabled: bool,
    pub simo: SimoConfig,
    pub num_parts: usize,
    pub embedding_dim: usize,
    /// Classifier width; 0 means "number of training subjects".
    pub num_classes: usize,
    /// Average-pooling factor applied to the 64×44 input before the first
    /// convolution. Motion masks are still computed at full resolution.
    pub input_pool: usize,
    pub temporal_kernel: usize,
    pub leaky_slope: f64,
    pub gem_p_init: f64,
    pub gem_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Standard deviation of the off-centre entries of the FeMo kernels
    /// at initialisation.
    pub femo_init_std: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![32, 128, 256, 256],
            femo_enabled: vec![false, true, true, true],
            femo_per_direction: false,
            simo_enabled: true,
            simo: SimoConfig::default(),
            num_parts: 16,
            embedding_dim: 64,
            num_classes: 0,
            input_pool: 1,
            temporal_kernel: 3,
            leaky_slope: 0.01,
            gem_p_init: 6.5,
            gem_eps: 1e-6,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            femo_init_std: 0.01,
        }
    }
}

impl BackboneConfig {
    pub fn femo_any(&self) -> bool {
        self.femo_enabled.iter().any(|&b| b)
    }

    /// Spatial extent entering the head.
    pub fn final_hw(&self) -> (usize, usize) {
        let q = self.input_pool.max(1);
        let (mut h, mut w) = (NORM_HEIGHT / q, NORM_WIDTH / q);
        for _ in 0..self.stage_channels.len().min(2) {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    /// Channel count after each stage (stage 0 includes the motion branch).
    pub fn stage_outputs(&self) -> Vec<usize> {
        let mut out = self.stage_channels.clone();
        if self.simo_enabled {
            out[0] += self.simo.motion_channels;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return fail("stage_channels must be a non-empty list of positive counts".into());
        }
        if self.femo_enabled.len() != self.stage_channels.len() {
            return fail(format!(
                "femo_enabled has {} flags for {} stages",
                self.femo_enabled.len(),
                self.stage_channels.len()
            ));
        }
        if self.simo_enabled {
            self.simo.validate()?;
        }
        if self.input_pool == 0 || NORM_HEIGHT / self.input_pool < 4 || NORM_WIDTH / self.input_pool < 4 {
            return fail(format!("input_pool {} leaves no usable resolution", self.input_pool));
        }
        if self.temporal_kernel % 2 == 0 {
            return fail(format!("temporal_kernel must be odd, got {}", self.temporal_kernel));
        }
        let (fh, fw) = self.final_hw();
        if fh == 0 || fw == 0 {
            return fail("feature map vanishes before the head".into());
        }
        if self.num_parts == 0 || fh % self.num_parts != 0 {
            return fail(format!("num_parts {} must divide the final feature height {fh}", self.num_parts));
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if !(self.gem_p_init >= 1.0) || !(self.gem_eps > 0.0) {
            return fail("gem_p_init must be >= 1 and gem_eps > 0".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        if !(self.leaky_slope >= 0.0) || !(self.femo_init_std >= 0.0) {
            return fail("leaky_slope and femo_init_std must be non-negative".into());
        }
        Ok(())
    }

    /// Shortest input sequence the configuration accepts.
    pub fn min_frames(&self) -> usize {
        let mut k = 1;
        if self.simo_enabled {
            k = k.max(2 * self.simo.clip_len);
        }
        if self.femo_any() {
            k = k.max(2);
        }
        k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug)]
struct FemoSlots {
    diff: usize,
    diff_backward: Option<usize>,
    out_weight: usize,
    out_bias: usize,
}

#[derive(Clone, Debug)]
struct StageSlots {
    femo: Option<FemoSlots>,
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    stages: Vec<StageSlots>,
    simo: Option<(usize, usize)>,
    gem_p: usize,
    fc: usize,
    bn_gamma: usize,
    bn_beta: usize,
    classifier: usize,
}

/// Model parameters plus the BN running statistics.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: BackboneConfig,
    pub num_classes: usize,
    pub params: Vec<NamedTensor>,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    layout: Layout,
}

/// Output of one forward pass.
pub struct Embedding<'t> {
    /// `[N, parts, D]` metric embeddings (before BN).
    pub parts: Var<'t>,
    /// `[N, parts, classes]`
    pub logits: Var<'t>,
    /// Batch statistics of the BN layer in train mode.
    pub bn_stats: Option<BatchStats>,
}

struct Builder<'a, R: Rng> {
    params: Vec<NamedTensor>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(NamedTensor {
            name,
            value: value.with_requires_grad(true),
        });
        self.params.len() - 1
    }

    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let d = Normal::new(0.0, std).expect("finite std");
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| d.sample(rng))
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, kt: usize) -> (usize, usize) {
        let fan_in = (cin * kt * 9) as f64;
        let w = self.normal(vec![cout, cin, kt, 3, 3], (2.0 / fan_in).sqrt());
        let wi = self.push(format!("{prefix}.weight"), w);
        let bi = self.push(format!("{prefix}.bias"), Tensor::zeros(vec![cout]));
        (wi, bi)
    }

    fn femo(&mut self, prefix: &str, c: usize, std: f64, per_direction: bool) -> FemoSlots {
        let diff = identity_plus_noise(c, std, self.rng);
        let diff = self.push(format!("{prefix}.diff.weight"), diff);
        let diff_backward = per_direction.then(|| {
            let k = identity_plus_noise(c, std, self.rng);
            self.push(format!("{prefix}.diff_backward.weight"), k)
        });
        // out conv starts at the identity over (channel, t, h, w)
        let mut out = self.normal(vec![c, c, 3, 3, 3], std);
        for o in 0..c {
            out.data_mut()[(o * c + o) * 27 + 13] = 1.0;
        }
        let out_weight = self.push(format!("{prefix}.out.weight"), out);
        let out_bias = self.push(format!("{prefix}.out.bias"), Tensor::zeros(vec![c]));
        FemoSlots {
            diff,
            diff_backward,
            out_weight,
            out_bias,
        }
    }
}

fn leaky<'t>(x: Var<'t>, slope: f64) -> Var<'t> {
    x.leaky_relu(slope)
}

impl Model {
    /// Freshly initialised model for `num_classes` identities.
    pub fn new<R: Rng>(cfg: &BackboneConfig, num_classes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if cfg.num_classes != 0 && cfg.num_classes != num_classes {
            return Err(Error::Config(format!(
                "backbone.num_classes = {} but the training split has {num_classes} subjects",
                cfg.num_classes
            )));
        }
        let mut b = Builder {
            params: Vec::new(),
            rng,
        };
        let kt = cfg.temporal_kernel;
        let mut stages = Vec::new();
        let mut simo = None;
        let mut cin = 1;
        for (i, &cout) in cfg.stage_channels.iter().enumerate() {
            let femo = cfg.femo_enabled[i]
                .then(|| b.femo(&format!("stage{i}.femo"), cin, cfg.femo_init_std, cfg.femo_per_direction));
            let (weight, bias) = b.conv(&format!("stage{i}.conv"), cin, cout, kt);
            stages.push(StageSlots { femo, weight, bias });
            cin = cout;
            if i == 0 && cfg.simo_enabled {
                simo = Some(b.conv("simo.conv", 1, cfg.simo.motion_channels, 3));
                cin += cfg.simo.motion_channels;
            }
        }
        let (p, d) = (cfg.num_parts, cfg.embedding_dim);
        let gem_p = b.push("head.gem.p".into(), Tensor::scalar(cfg.gem_p_init));
        let fc = b.normal(vec![p, cin, d], (1.0 / cin as f64).sqrt());
        let fc = b.push("head.fc.weight".into(), fc);
        let bn_gamma = b.push("head.bn.gamma".into(), Tensor::full(vec![p * d], 1.0));
        let bn_beta = b.push("head.bn.beta".into(), Tensor::zeros(vec![p * d]));
        let cls = b.normal(vec![p, d, num_classes], (1.0 / d as f64).sqrt());
        let classifier = b.push("head.classifier.weight".into(), cls);
        Ok(Self {
            cfg: cfg.clone(),
            num_classes,
            params: b.params,
            bn_running_mean: vec![0.0; p * d],
            bn_running_var: vec![1.0; p * d],
            layout: Layout {
                stages,
                simo,
                gem_p,
                fc,
                bn_gamma,
                bn_beta,
                classifier,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers the parameters on `tape`, as gradient leaves when
    /// `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| if trainable { tape.leaf(&p.value) } else { tape.constant(&p.value) })
            .collect()
    }

    /// Forward pass over `[N, 1, K, 64, 44]` silhouettes.
    pub fn forward<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], input: &Tensor, mode: BnMode) -> Result<Embedding<'t>> {
        let cfg = &self.cfg;
        let s = input.shape();
        if s.len() != 5 || s[1] != 1 || s[3] != NORM_HEIGHT || s[4] != NORM_WIDTH {
            return Err(Error::Input(format!(
                "backbone input must be [N, 1, K, {NORM_HEIGHT}, {NORM_WIDTH}], got {s:?}"
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Input(format!("{} parameter handles for {} parameters", vars.len(), self.params.len())));
        }
        let (n, k) = (s[0], s[2]);
        if k < cfg.min_frames() {
            return Err(Error::Input(format!("sequence of {k} frames is shorter than the minimum {}", cfg.min_frames())));
        }
        let x = tape.constant(input);
        let q = cfg.input_pool;
        let mut h = if q > 1 { x.avg_pool2d(q)? } else { x };
        let slope = cfg.leaky_slope;
        let lay = &self.layout;

        for (i, st) in lay.stages.iter().enumerate() {
            if let Some(f) = &st.femo {
                let fv = FemoVars {
                    diff: vars[f.diff],
                    diff_backward: f.diff_backward.map(|j| vars[j]),
                    out_weight: vars[f.out_weight],
                    out_bias: Some(vars[f.out_bias]),
                };
                h = femo_block(h, &fv)?;
            }
            h = leaky(h.conv3d(vars[st.weight], Some(vars[st.bias]), Padding::Same)?, slope);
            if i == 0 {
                if let Some((mw, mb)) = lay.simo {
                    let sil = x.reshape(&[n, k, NORM_HEIGHT, NORM_WIDTH])?;
                    let mut agg = motion_sequence(sil, &cfg.simo)?.aggregated;
                    if q > 1 {
                        agg = agg.avg_pool2d(q)?;
                    }
                    let m = extract_motion_feature(agg, vars[mw], Some(vars[mb]), slope)?;
                    h = fuse(h, m)?;
                }
            }
            if i < 2 {
                h = h.max_pool2d(2)?;
            }
        }

        let pooled = temporal_max_pool(h)?; // [N, C, Hf, Wf]
        let ps = pooled.shape();
        let (c, hf, wf) = (ps[1], ps[2], ps[3]);
        let (p, d) = (cfg.num_parts, cfg.embedding_dim);
        let strips = pooled.reshape(&[n, c, p, hf / p * wf])?;
        let g = strips.gem_pool(vars[lay.gem_p], cfg.gem_eps)?; // [N, C, P]
        let per_part = g.permute(&[2, 0, 1])?.bmm(vars[lay.fc])?; // [P, N, D]
        let parts = per_part.permute(&[1, 0, 2])?;
        let (bn, bn_stats) = parts.reshape(&[n, p * d])?.batch_norm(
            vars[lay.bn_gamma],
            vars[lay.bn_beta],
            &self.bn_running_mean,
            &self.bn_running_var,
            cfg.bn_eps,
            mode,
        )?;
        let logits = bn
            .reshape(&[n, p, d])?
            .permute(&[1, 0, 2])?
            .bmm(vars[lay.classifier])?
            .permute(&[1, 0, 2])?;
        Ok(Embedding {
            parts,
            logits,
            bn_stats,
        })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_bn(&mut self, stats: &BatchStats) {
        let m = self.cfg.bn_momentum;
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, &b) in self.bn_running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.bn_running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
    }

    /// Embeddings of a batch in eval mode, flattened to `[N, P·D]`.
    pub fn embed(&self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let e = self.forward(&tape, &vars, input, BnMode::Eval)?;
        let n = input.shape()[0];
        let v = e.parts.value();
        let per = v.len() / n;
        Ok(v.chunks(per).map(<[f64]>::to_vec).collect())
    }

    /// Parameters plus the BN buffers, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        let len = self.bn_running_mean.len();
        out.push((
            "head.bn.running_mean".into(),
            Tensor::new(vec![len], self.bn_running_mean.clone()).expect("non-empty"),
        ));
        out.push((
            "head.bn.running_var".into(),
            Tensor::new(vec![len], self.bn_running_var.clone()).expect("non-empty"),
        ));
        out
    }

    /// Overwrites parameters and buffers from named tensors, checking that
    /// every name and shape matches this model's layout.
    pub fn load_named(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor>) -> Result<()> {
        for p in &mut self.params {
            let t = lookup(&p.name).ok_or_else(|| Error::Input(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Input(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.with_requires_grad(true);
        }
        for (name, buf) in [
            ("head.bn.running_mean", &mut self.bn_running_mean),
            ("head.bn.running_var", &mut self.bn_running_var),
        ] {
            let t = lookup(name).ok_or_else(|| Error::Input(format!("missing buffer {name}")))?;
            if t.numel() != buf.len() {
                return Err(Error::Input(format!("buffer {name} has {} values, expected {}", t.numel(), buf.len())));
            }
            buf.copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// Max over the time axis of `[C, T, H, W]` (or `[N, C, T, H, W]`).
pub fn temporal_max_pool<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let r = x.rank();
    if r != 4 && r != 5 {
        return Err(Error::Input(format!("temporal_max_pool expects rank 4 or 5, got {r}")));
    }
    Ok(x.max(&[r - 3], false)?)
}

/// Splits `[C, H, W]` into `parts` contiguous horizontal strips, top to
/// bottom: `[parts, C, (H/parts)·W]`.
pub fn horizontal_parts<'t>(x: Var<'t>, parts: usize) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 3 || parts == 0 || s[1] % parts != 0 {
        return Err(Error::Input(format!("cannot split {s:?} into {parts} horizontal parts")));
    }
    Ok(x.reshape(&[s[0], parts, s[1] / parts * s[2]])?.permute(&[1, 0, 2])?)
}
