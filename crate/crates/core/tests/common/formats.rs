//! Round-trip and corruption checks for the on-disk formats.

use std::fs;
use std::path::Path;

use gaitkit::checkpoint::{self, CheckpointError};
use gaitkit::gaitdata::{decode_gseq, encode_gseq, load_sequence, save_sequence, GseqError, SequenceMeta, SilhouetteSequence};
use gaitkit::gaitdata::Condition;
use gaitkit::training::{ExperimentConfig, TrainState};
use gaitkit::Error;
use gaitkit_tensor::codec::{self, CodecError};
use gaitkit_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub fn random_sequence(rng: &mut ChaCha8Rng, meta: SequenceMeta) -> SilhouetteSequence {
    let (k, h, w) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..9));
    let frames = (0..k * h * w).map(|_| rng.gen_bool(0.4) as u8).collect();
    SilhouetteSequence::new(meta, k, h, w, frames).unwrap()
}

/// GSEQ: file → sequence → file is byte-identical; corrupt headers map to
/// the matching error variants.
pub fn gseq_round_trip(dir: &Path) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    for i in 0..20u16 {
        let meta = SequenceMeta::new(format!("s{:03}", i + 1), Condition::ALL[i as usize % 3], 1 + u32::from(i % 4), i * 18);
        let seq = random_sequence(&mut rng, meta.clone());
        let path = dir.join(meta.rel_path());
        save_sequence(&seq, &path).map_err(|e| e.to_string())?;
        let first = fs::read(&path).map_err(|e| e.to_string())?;
        let back = load_sequence(&path).map_err(|e| e.to_string())?;
        ensure(back == seq, "decoded sequence differs")?;
        ensure(encode_gseq(&back) == first, "re-encoded bytes differ")?;
    }
    let meta = SequenceMeta::new("s001", Condition::NM, 1, 0);
    let good = encode_gseq(&random_sequence(&mut rng, meta.clone()));
    let mut bad = good.clone();
    bad[1] = b'X';
    ensure(matches!(decode_gseq(&bad, meta.clone()), Err(GseqError::BadMagic(_))), "bad magic accepted")?;
    let mut bad = good.clone();
    bad[4] = 2;
    ensure(
        matches!(decode_gseq(&bad, meta.clone()), Err(GseqError::UnsupportedVersion(2))),
        "bad version accepted",
    )?;
    ensure(
        matches!(decode_gseq(&good[..10], meta.clone()), Err(GseqError::Truncated { .. })),
        "truncated header accepted",
    )?;
    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&0u32.to_le_bytes());
    ensure(matches!(decode_gseq(&bad, meta.clone()), Err(GseqError::ZeroExtent { .. })), "zero extent accepted")?;
    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&1000u32.to_le_bytes());
    ensure(matches!(decode_gseq(&bad, meta.clone()), Err(GseqError::Truncated { .. })), "short payload accepted")?;
    let mut bad = good.clone();
    *bad.last_mut().unwrap() = 7;
    ensure(matches!(decode_gseq(&bad, meta.clone()), Err(GseqError::BadPixel { value: 7, .. })), "bad pixel accepted")?;
    let path = dir.join("corrupt.gseq");
    fs::write(&path, b"NOPE").map_err(|e| e.to_string())?;
    ensure(
        matches!(gaitkit::gaitdata::read_sequence(&path, meta), Err(Error::Gseq { .. })),
        "file-level error is not structured",
    )
}

/// Checkpoint container: a saved training state loads and re-saves to
/// identical bytes; corrupt headers and bodies are rejected.
pub fn checkpoint_round_trip(dir: &Path, cfg: &ExperimentConfig, state: &TrainState) -> Result<(), String> {
    let path = dir.join("state.gkpt");
    state.save(cfg, &path).map_err(|e| e.to_string())?;
    let first = fs::read(&path).map_err(|e| e.to_string())?;
    let (manifest, back) = TrainState::load(&path).map_err(|e| e.to_string())?;
    let mut cfg2 = manifest.config.clone();
    cfg2.data_root = cfg.data_root.clone();
    ensure(back.to_bytes(&cfg2) == first, "re-saved checkpoint differs")?;
    for (a, b) in state.model.params.iter().zip(&back.model.params) {
        ensure(a.value.data() == b.value.data(), format!("parameter {} differs", a.name))?;
    }
    ensure(state.adam == back.adam, "Adam moments differ")?;
    ensure(state.history == back.history, "history differs")?;

    let corrupt = |mutate: &dyn Fn(&mut Vec<u8>)| {
        let mut b = first.clone();
        mutate(&mut b);
        checkpoint::decode(&b)
    };
    ensure(matches!(corrupt(&|b| b[0] = b'X'), Err(CheckpointError::BadMagic(_))), "bad magic accepted")?;
    ensure(
        matches!(corrupt(&|b| b[4..8].copy_from_slice(&7u32.to_le_bytes())), Err(CheckpointError::UnsupportedVersion(7))),
        "bad version accepted",
    )?;
    ensure(
        matches!(corrupt(&|b| { let m = b.len() / 3; b[m] ^= 0x40 }), Err(CheckpointError::Checksum)),
        "flipped body byte accepted",
    )?;
    ensure(matches!(corrupt(&|b| b.truncate(40)), Err(CheckpointError::Checksum | CheckpointError::Truncated(_))), "truncation accepted")?;
    let bad_path = dir.join("bad.gkpt");
    fs::write(&bad_path, &first[..first.len() - 1]).map_err(|e| e.to_string())?;
    ensure(matches!(TrainState::load(&bad_path), Err(Error::Checkpoint { .. })), "file-level error is not structured")?;

    // the tensor records inside use the GTSR codec
    let t = Tensor::from_fn(vec![2, 3, 4], |i| (i as f64).sin());
    let bytes = codec::encode(&t);
    ensure(codec::decode(&bytes).map_err(|e| e.to_string())? == t, "GTSR round trip")?;
    ensure(codec::encode(&codec::decode(&bytes).unwrap()) == bytes, "GTSR bytes differ")?;
    let mut bad = bytes.clone();
    bad[0] = b'Q';
    ensure(matches!(codec::decode(&bad), Err(CodecError::BadMagic(_))), "GTSR bad magic accepted")
}
