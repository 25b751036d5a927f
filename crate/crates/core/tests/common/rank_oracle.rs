//! Exhaustive rank-1 oracle: every probe sorts its whole effective gallery.

use std::collections::BTreeMap;

use gaitkit::evaluation::{nearest_gallery, rank1, EmbeddingRow, RankReport};
use gaitkit::gaitdata::{Condition, SequenceMeta};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct OracleReport {
    /// (view, condition) -> (hits, ranked)
    pub cells: BTreeMap<(u16, usize), (usize, usize)>,
    pub skipped: usize,
    pub predictions: Vec<Vec<Option<usize>>>,
}

pub fn oracle(gallery: &[EmbeddingRow], sets: &[(String, Vec<EmbeddingRow>)], exclude: bool) -> OracleReport {
    let mut cells = BTreeMap::new();
    let mut skipped = 0;
    let mut predictions = Vec::new();
    for (c, (_, probes)) in sets.iter().enumerate() {
        let mut preds = Vec::new();
        for p in probes {
            let mut ranked: Vec<(f64, usize)> = gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| !(exclude && g.meta.view_deg == p.meta.view_deg))
                .map(|(i, g)| {
                    let d2: f64 = g.vector.iter().zip(&p.vector).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2.sqrt(), i)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let cell = cells.entry((p.meta.view_deg, c)).or_insert((0, 0));
            match ranked.first() {
                None => {
                    skipped += 1;
                    preds.push(None);
                }
                Some(&(_, i)) => {
                    cell.1 += 1;
                    if gallery[i].meta.subject_id == p.meta.subject_id {
                        cell.0 += 1;
                    }
                    preds.push(Some(i));
                }
            }
        }
        predictions.push(preds);
    }
    OracleReport {
        cells,
        skipped,
        predictions,
    }
}

/// Compares a report with the oracle cell by cell.
pub fn agrees(report: &RankReport, o: &OracleReport) -> Result<(), String> {
    if report.skipped != o.skipped {
        return Err(format!("skipped {} vs oracle {}", report.skipped, o.skipped));
    }
    for (vi, &v) in report.views.iter().enumerate() {
        for c in 0..report.conditions.len() {
            let (h, n) = o.cells.get(&(v, c)).copied().unwrap_or((0, 0));
            let acc = (n > 0).then(|| 100.0 * h as f64 / n as f64);
            if report.hits[vi][c] != h || report.probes[vi][c] != n || report.accuracy[vi][c] != acc {
                return Err(format!(
                    "cell ({v}, {c}): {}/{} vs oracle {h}/{n}",
                    report.hits[vi][c], report.probes[vi][c]
                ));
            }
        }
    }
    let cond_means: Vec<Option<f64>> = (0..report.conditions.len())
        .map(|c| {
            let v: Vec<f64> = o
                .cells
                .iter()
                .filter(|((_, cc), (_, n))| *cc == c && *n > 0)
                .map(|(_, (h, n))| 100.0 * *h as f64 / *n as f64)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let present: Vec<f64> = cond_means.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    if report.condition_means != cond_means || report.mean != mean {
        return Err(format!("means {:?}/{:?} vs oracle {cond_means:?}/{mean:?}", report.condition_means, report.mean));
    }
    Ok(())
}

pub fn row(subject: usize, cond: Condition, view: u16, vector: Vec<f64>) -> EmbeddingRow {
    EmbeddingRow {
        entry: 0,
        meta: SequenceMeta::new(format!("s{subject:03}"), cond, 1, view),
        vector,
    }
}

/// Random instance of at most 30 embeddings on a coarse integer grid, so
/// exact distance ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<EmbeddingRow>, Vec<(String, Vec<EmbeddingRow>)>) {
    let views: Vec<u16> = [0u16, 36, 72, 108][..rng.gen_range(1..=4)].to_vec();
    let subjects = rng.gen_range(2..=5);
    let dim = rng.gen_range(1..=3);
    let vec_of = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect::<Vec<f64>>();
    let total = rng.gen_range(4..=30);
    let n_gallery = rng.gen_range(1..total);
    let gallery = (0..n_gallery)
        .map(|_| {
            let v = vec_of(rng);
            row(rng.gen_range(0..subjects), Condition::NM, views[rng.gen_range(0..views.len())], v)
        })
        .collect();
    let mut sets = vec![("NM".to_string(), Vec::new()), ("CL".to_string(), Vec::new())];
    for _ in n_gallery..total {
        let c = rng.gen_range(0..2);
        let cond = if c == 0 { Condition::NM } else { Condition::CL };
        let v = vec_of(rng);
        let r = row(rng.gen_range(0..subjects), cond, views[rng.gen_range(0..views.len())], v);
        sets[c].1.push(r);
    }
    (gallery, sets)
}

pub fn check_random_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (gallery, sets) = random_instance(rng);
    let exclude = rng.gen_bool(0.75);
    let report = rank1(&gallery, &sets, exclude);
    let o = oracle(&gallery, &sets, exclude);
    for ((_, probes), preds) in sets.iter().zip(&o.predictions) {
        for (p, want) in probes.iter().zip(preds) {
            let got = nearest_gallery(&gallery, p, exclude);
            if got != *want {
                return Err(format!("nearest gallery {got:?} vs oracle {want:?}"));
            }
        }
    }
    agrees(&report, &o)
}
