//! Procedural stick-figure walker.
//!
//! A treadmill walker in 3-D (x forward, y down, z lateral) with sinusoidal
//! hip, knee and shoulder angles is projected orthographically for each
//! view angle, with a small view-dependent shear, and rasterised with thick
//! strokes into a binary canvas.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{DatasetIndex, IndexEntry, Split};
use super::{save_sequence, Condition, SequenceMeta, SilhouetteSequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
}

/// Ranges of the per-subject latent parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitRanges {
    /// Leg length in canvas pixels; the rest of the body scales with it.
    pub limb_length: Range,
    pub torso_width: Range,
    /// Cycles per frame.
    pub stride_freq: Range,
    /// Phase of the arm swing relative to the opposite leg, radians.
    pub phase_offset: Range,
    /// Shoulder swing amplitude, radians.
    pub arm_swing: Range,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagConfig {
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoatConfig {
    /// Extra half-width added to the torso stroke, pixels.
    pub dilation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionCount {
    pub condition: Condition,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    /// The last `test_subjects` subjects form the test split.
    pub test_subjects: usize,
    pub views: Vec<u16>,
    pub conditions: Vec<ConditionCount>,
    pub frames_per_seq: usize,
    /// Clip length used downstream; sequences must hold at least two clips.
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub gait: GaitRanges,
    pub bag: BagConfig,
    pub coat: CoatConfig,
}

impl Default for SynthConfig {
    /// CASIA-B-shaped layout at toy size: 6 NM, 2 BG, 2 CL instances per view.
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 10,
            test_subjects: 4,
            views: vec![0, 36, 72, 108, 144, 180],
            conditions: vec![
                ConditionCount {
                    condition: Condition::NM,
                    count: 6,
                },
                ConditionCount {
                    condition: Condition::BG,
                    count: 2,
                },
                ConditionCount {
                    condition: Condition::CL,
                    count: 2,
                },
            ],
            frames_per_seq: 30,
            clip_len: 4,
            height: 96,
            width: 64,
            gait: GaitRanges {
                limb_length: Range::new(34.0, 40.0),
                torso_width: Range::new(9.0, 14.0),
                stride_freq: Range::new(0.04, 0.09),
                phase_offset: Range::new(-1.0, 1.0),
                arm_swing: Range::new(0.3, 0.6),
            },
            bag: BagConfig { radius: 6.0 },
            coat: CoatConfig { dilation: 3.0 },
        }
    }
}

impl SynthConfig {
    /// Identical bodies; subjects differ only in stride frequency and
    /// arm/leg phase. 8 subjects × 4 views × {NM, CL}, 30 frames.
    pub fn motion_dominant(seed: u64) -> Self {
        Self {
            seed,
            n_subjects: 8,
            test_subjects: 0,
            views: vec![36, 72, 108, 144],
            conditions: vec![
                ConditionCount {
                    condition: Condition::NM,
                    count: 1,
                },
                ConditionCount {
                    condition: Condition::CL,
                    count: 1,
                },
            ],
            frames_per_seq: 30,
            gait: GaitRanges {
                limb_length: Range::fixed(37.0),
                torso_width: Range::fixed(11.0),
                stride_freq: Range::new(0.04, 0.1),
                phase_offset: Range::new(-1.2, 1.2),
                arm_swing: Range::fixed(0.45),
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 {
            return fail("n_subjects must be positive".into());
        }
        if self.test_subjects >= self.n_subjects {
            return fail(format!(
                "test_subjects ({}) must leave at least one training subject out of {}",
                self.test_subjects, self.n_subjects
            ));
        }
        if self.views.is_empty() || self.views.iter().any(|&v| v >= 360) {
            return fail(format!("views must be a non-empty list of degrees in [0, 360), got {:?}", self.views));
        }
        let mut views = self.views.clone();
        views.sort_unstable();
        views.dedup();
        if views.len() != self.views.len() {
            return fail("views contain duplicates".into());
        }
        if self.conditions.is_empty() || self.conditions.iter().any(|c| c.count == 0) {
            return fail("conditions must be non-empty with positive counts".into());
        }
        if self.clip_len < 2 {
            return fail(format!("clip_len must be >= 2, got {}", self.clip_len));
        }
        if self.frames_per_seq < 2 * self.clip_len {
            return fail(format!(
                "frames_per_seq ({}) must be at least twice clip_len ({})",
                self.frames_per_seq, self.clip_len
            ));
        }
        if self.height < 16 || self.width < 16 {
            return fail(format!("canvas {}×{} is too small", self.height, self.width));
        }
        let g = &self.gait;
        for (name, r) in [
            ("limb_length", g.limb_length),
            ("torso_width", g.torso_width),
            ("stride_freq", g.stride_freq),
            ("phase_offset", g.phase_offset),
            ("arm_swing", g.arm_swing),
        ] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return fail(format!("range {name} = [{}, {}] is invalid", r.lo, r.hi));
            }
        }
        if g.stride_freq.lo <= 0.0 {
            return fail("stride frequency must be > 0".into());
        }
        if g.limb_length.lo <= 4.0 || g.torso_width.lo <= 0.0 {
            return fail("limb_length must exceed 4 px and torso_width must be positive".into());
        }
        if self.bag.radius < 0.0 || self.coat.dilation < 0.0 {
            return fail("occluder sizes must be non-negative".into());
        }
        Ok(())
    }

    /// Parses a TOML document; omitted top-level keys take their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("synthetic config serialises")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    pub limb_length: f64,
    pub torso_width: f64,
    pub stride_freq: f64,
    pub phase_offset: f64,
    pub arm_swing: f64,
}

/// Draws per-subject parameters. Each parameter is stratified: the range
/// is cut into `n` equal cells, subjects get a random permutation of the
/// cells and a jittered point in the middle half of their cell, so no two
/// subjects are closer than half a cell in any varying parameter.
pub fn sample_subjects<R: Rng>(n: usize, ranges: &GaitRanges, rng: &mut R) -> Vec<WalkerParams> {
    let mut column = |r: Range| -> Vec<f64> {
        let mut cells: Vec<usize> = (0..n).collect();
        cells.shuffle(rng);
        cells
            .into_iter()
            .map(|c| {
                let u: f64 = rng.gen_range(0.25..0.75);
                r.lo + (r.hi - r.lo) * (c as f64 + u) / n as f64
            })
            .collect()
    };
    let limb = column(ranges.limb_length);
    let torso = column(ranges.torso_width);
    let freq = column(ranges.stride_freq);
    let phase = column(ranges.phase_offset);
    let arm = column(ranges.arm_swing);
    (0..n)
        .map(|i| WalkerParams {
            limb_length: limb[i],
            torso_width: torso[i],
            stride_freq: freq[i],
            phase_offset: phase[i],
            arm_swing: arm[i],
        })
        .collect()
}

#[derive(Clone, Copy)]
struct P3 {
    x: f64,
    y: f64,
    z: f64,
}

impl P3 {
    fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    fn step(self, len: f64, angle: f64) -> Self {
        Self::new(self.x + len * angle.sin(), self.y + len * angle.cos(), self.z)
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn fill_where(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, inside: impl Fn(f64, f64) -> bool) {
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
        let (c0, c1) = (clamp(x0.floor(), self.w), clamp(x1.ceil() + 1.0, self.w));
        let (r0, r1) = (clamp(y0.floor(), self.h), clamp(y1.ceil() + 1.0, self.h));
        for r in r0..r1 {
            for c in c0..c1 {
                if inside(c as f64 + 0.5, r as f64 + 0.5) {
                    self.px[r * self.w + c] = 1;
                }
            }
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), thickness: f64) {
        let rad = thickness / 2.0;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        self.fill_where(
            a.0.min(b.0) - rad,
            a.0.max(b.0) + rad,
            a.1.min(b.1) - rad,
            a.1.max(b.1) + rad,
            |x, y| {
                let t = if len2 > 0.0 {
                    (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (a.0 + t * dx - x, a.1 + t * dy - y);
                ex * ex + ey * ey <= rad * rad
            },
        );
    }

    fn disc(&mut self, c: (f64, f64), radius: f64) {
        self.fill_where(c.0 - radius, c.0 + radius, c.1 - radius, c.1 + radius, |x, y| {
            (x - c.0).powi(2) + (y - c.1).powi(2) <= radius * radius
        });
    }
}

struct Occluders<'a> {
    condition: Condition,
    bag: &'a BagConfig,
    coat: &'a CoatConfig,
}

fn render_frame(p: &WalkerParams, view_deg: u16, occ: &Occluders<'_>, phase: f64, canvas: &mut Canvas) {
    let l = p.limb_length;
    let (thigh, shin) = (0.5 * l, 0.5 * l);
    let torso_len = 0.75 * l;
    let (upper_arm, forearm) = (0.42 * l, 0.42 * l);
    let head_r = 0.14 * l;
    let leg_w = (0.12 * l).max(2.0);
    let arm_w = (0.09 * l).max(2.0);

    let theta = (view_deg as f64).to_radians();
    let (st, ct) = (theta.sin(), theta.cos());
    let shear = 0.06 * ct;
    let ground = canvas.h as f64 - 3.0;
    let hip_y = ground - 0.97 * l + 0.03 * l * (2.0 * phase).cos();
    let cx = canvas.w as f64 / 2.0;
    let project = |q: P3| -> (f64, f64) { (cx + q.x * st + q.z * ct + shear * q.y, hip_y + q.y) };

    let hip = P3::new(0.0, 0.0, 0.0);
    let lean = 0.05 * l;
    let shoulder = P3::new(lean, -torso_len, 0.0);

    for side in [1.0, -1.0] {
        let psi = if side > 0.0 { phase } else { phase + PI };
        // legs
        let th = 0.42 * psi.sin();
        let knee_flex = 0.6 * psi.cos().max(0.0);
        let h = P3::new(0.0, 0.0, side * 0.3 * p.torso_width);
        let knee = h.step(thigh, th);
        let ankle = knee.step(shin, th - knee_flex);
        canvas.segment(project(h), project(knee), leg_w);
        canvas.segment(project(knee), project(ankle), leg_w);
        // arms swing against the leg on the same side
        let psi_a = psi + PI + p.phase_offset;
        let ta = p.arm_swing * psi_a.sin();
        let s = P3::new(shoulder.x, shoulder.y, side * 0.5 * p.torso_width);
        let elbow = s.step(upper_arm, ta);
        let wrist = elbow.step(forearm, ta + 0.35 + 0.25 * psi_a.sin().max(0.0));
        canvas.segment(project(s), project(elbow), arm_w);
        canvas.segment(project(elbow), project(wrist), arm_w);
        if side < 0.0 && occ.condition == Condition::BG && occ.bag.radius > 0.0 {
            let r = occ.bag.radius;
            let bag = P3::new(wrist.x, wrist.y + 0.6 * r, wrist.z - 0.8 * r);
            canvas.disc(project(bag), r);
        }
    }

    let chest_depth = 0.55 * p.torso_width;
    let mut torso_w = (p.torso_width * ct.abs() + chest_depth * st.abs()).max(3.0);
    let mut torso_bottom = hip;
    if occ.condition == Condition::CL {
        torso_w += 2.0 * occ.coat.dilation;
        torso_bottom = P3::new(0.0, 0.3 * l, 0.0);
    }
    canvas.segment(project(torso_bottom), project(shoulder), torso_w);
    let head = P3::new(lean + 0.02 * l, -torso_len - 0.08 * l - head_r, 0.0);
    canvas.disc(project(head), head_r);
}

/// Renders `frames` frames of one walker, starting at `start_phase`
/// radians into the gait cycle.
#[allow(clippy::too_many_arguments)]
pub fn render_sequence(
    meta: SequenceMeta,
    params: &WalkerParams,
    bag: &BagConfig,
    coat: &CoatConfig,
    start_phase: f64,
    frames: usize,
    height: usize,
    width: usize,
) -> SilhouetteSequence {
    let occ = Occluders {
        condition: meta.condition,
        bag,
        coat,
    };
    let mut data = Vec::with_capacity(frames * height * width);
    for t in 0..frames {
        let mut canvas = Canvas {
            h: height,
            w: width,
            px: vec![0; height * width],
        };
        let phase = start_phase + TAU * params.stride_freq * t as f64;
        render_frame(params, meta.view_deg, &occ, phase, &mut canvas);
        data.extend_from_slice(&canvas.px);
    }
    SilhouetteSequence::new(meta, frames, height, width, data).expect("canvas is binary and sized")
}

/// Renders the whole corpus under `root` and writes `index.json` last.
pub fn generate_synthetic(cfg: &SynthConfig, root: &Path) -> Result<DatasetIndex> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subjects = sample_subjects(cfg.n_subjects, &cfg.gait, &mut rng);
    let ids: Vec<String> = (1..=cfg.n_subjects).map(|i| format!("s{i:03}")).collect();

    let mut jobs = Vec::new();
    for (sid, params) in ids.iter().zip(&subjects) {
        for cc in &cfg.conditions {
            for no in 1..=cc.count {
                for &view in &cfg.views {
                    let start: f64 = rng.gen_range(0.0..TAU);
                    jobs.push((SequenceMeta::new(sid.clone(), cc.condition, no, view), *params, start));
                }
            }
        }
    }

    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let entries = jobs
        .par_iter()
        .map(|(meta, params, start)| {
            let seq = render_sequence(
                meta.clone(),
                params,
                &cfg.bag,
                &cfg.coat,
                *start,
                cfg.frames_per_seq,
                cfg.height,
                cfg.width,
            );
            let rel = meta.rel_path();
            save_sequence(&seq, &root.join(&rel))?;
            Ok(IndexEntry::new(meta.clone(), seq.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_train = cfg.n_subjects - cfg.test_subjects;
    let index = DatasetIndex::new(
        entries,
        Split {
            train: ids[..n_train].to_vec(),
            test: ids[n_train..].to_vec(),
        },
    )?;
    index.save(&root.join("index.json"))?;
    Ok(index)
}
