//! Small datasets and configurations shared by the integration tests.

use std::path::Path;

use gaitkit::evaluation::{EvalConfig, ProbeSet, Selector};
use gaitkit::gaitdata::{generate_synthetic, Condition, ConditionCount, Dataset, SplitName, SynthConfig};
use gaitkit::training::ExperimentConfig;

/// Evaluation on the training subjects: NM-01 gallery, CL-01 probes.
pub fn train_split_eval() -> EvalConfig {
    EvalConfig {
        split: SplitName::Train,
        gallery: Selector::new(Condition::NM, &[1]),
        probes: vec![ProbeSet::new("CL", Condition::CL, &[1])],
        ..EvalConfig::default()
    }
}

/// `n_subjects` subjects (half of them test) × 2 views × NM×2 + CL×1,
/// 12 frames on a 48×32 canvas.
pub fn tiny_synth(seed: u64, n_subjects: usize) -> SynthConfig {
    SynthConfig {
        seed,
        n_subjects,
        test_subjects: n_subjects / 2,
        views: vec![0, 90],
        conditions: vec![
            ConditionCount {
                condition: Condition::NM,
                count: 2,
            },
            ConditionCount {
                condition: Condition::CL,
                count: 1,
            },
        ],
        frames_per_seq: 12,
        height: 48,
        width: 32,
        ..SynthConfig::default()
    }
}

pub fn tiny_dataset(dir: &Path, seed: u64, n_subjects: usize) -> Dataset {
    generate_synthetic(&tiny_synth(seed, n_subjects), dir).unwrap();
    Dataset::open(dir).unwrap()
}

/// Fast configuration for plumbing tests.
pub fn tiny_config(seed: u64, iters: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy(seed);
    cfg.total_iters = iters;
    cfg.optimizer.decay_at = iters;
    cfg.sampler.p = 2;
    cfg.sampler.k = 2;
    cfg.frames_per_sample = 8;
    cfg.backbone.stage_channels = vec![2, 4, 4];
    cfg.backbone.simo.motion_channels = 2;
    cfg.backbone.num_parts = 2;
    cfg.backbone.embedding_dim = 4;
    cfg.eval = EvalConfig {
        gallery: Selector::new(Condition::NM, &[1]),
        probes: vec![
            ProbeSet::new("NM", Condition::NM, &[2]),
            ProbeSet::new("CL", Condition::CL, &[1]),
        ],
        ..EvalConfig::default()
    };
    cfg
}
