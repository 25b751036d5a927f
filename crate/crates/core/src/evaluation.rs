//! Cross-view rank-1 evaluation, excluding identical-view gallery entries,
//! and the SiMo/FeMo ablation driver.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use gaitkit_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::gaitdata::{Condition, Dataset, SequenceMeta, SplitName, NORM_HEIGHT, NORM_WIDTH};
use crate::training::{train, ExperimentConfig};

pub const REPORT_FORMAT: &str = "gaitkit-rank1/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    pub condition: Condition,
    /// Instance numbers to include; empty selects all.
    #[serde(default)]
    pub seq_nos: Vec<u32>,
}

impl Selector {
    pub fn new(condition: Condition, seq_nos: &[u32]) -> Self {
        Self {
            condition,
            seq_nos: seq_nos.to_vec(),
        }
    }

    pub fn matches(&self, meta: &SequenceMeta) -> bool {
        meta.condition == self.condition && (self.seq_nos.is_empty() || self.seq_nos.contains(&meta.seq_no))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub name: String,
    pub condition: Condition,
    #[serde(default)]
    pub seq_nos: Vec<u32>,
}

impl ProbeSet {
    pub fn new(name: &str, condition: Condition, seq_nos: &[u32]) -> Self {
        Self {
            name: name.to_string(),
            condition,
            seq_nos: seq_nos.to_vec(),
        }
    }

    fn selector(&self) -> Selector {
        Selector::new(self.condition, &self.seq_nos)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitName,
    pub gallery: Selector,
    pub probes: Vec<ProbeSet>,
    pub exclude_identical_view: bool,
    /// L2-normalise the concatenated part embeddings before ranking.
    pub normalize: bool,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    /// CASIA-B layout: NM 1–4 gallery; NM 5–6, BG 1–2, CL 1–2 probes.
    fn default() -> Self {
        Self {
            split: SplitName::Test,
            gallery: Selector::new(Condition::NM, &[1, 2, 3, 4]),
            probes: vec![
                ProbeSet::new("NM", Condition::NM, &[5, 6]),
                ProbeSet::new("BG", Condition::BG, &[1, 2]),
                ProbeSet::new("CL", Condition::CL, &[1, 2]),
            ],
            exclude_identical_view: true,
            normalize: false,
            batch_size: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::Config("eval.probes must list at least one probe set".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        let names: BTreeSet<&str> = self.probes.iter().map(|p| p.name.as_str()).collect();
        if names.len() != self.probes.len() {
            return Err(Error::Config("eval.probes names must be unique".into()));
        }
        Ok(())
    }
}

/// One sequence's flattened embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub entry: usize,
    pub meta: SequenceMeta,
    pub vector: Vec<f64>,
}

/// Eval-mode embeddings of whole (uncropped) sequences, batching runs of
/// consecutive equal-length sequences up to `batch_size`.
pub fn embed_all(model: &Model, data: &Dataset, entries: &[usize], batch_size: usize) -> Result<Vec<EmbeddingRow>> {
    let seqs = entries.iter().map(|&e| data.load(e)).collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
    for i in 0..seqs.len() {
        match groups.last_mut() {
            Some(g) if g.len() < batch_size.max(1) && seqs[g.start].len() == seqs[i].len() => g.end = i + 1,
            _ => groups.push(i..i + 1),
        }
    }
    let batches = groups
        .par_iter()
        .map(|g| {
            let k = seqs[g.start].len();
            let mut data = Vec::with_capacity(g.len() * k * NORM_HEIGHT * NORM_WIDTH);
            for s in &seqs[g.clone()] {
                data.extend(s.frames().iter().map(|&v| v as f64));
            }
            let input = Tensor::new(vec![g.len(), 1, k, NORM_HEIGHT, NORM_WIDTH], data)?;
            model.embed(&input)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(batches
        .into_iter()
        .flatten()
        .zip(entries.iter().zip(&seqs))
        .map(|(vector, (&entry, seq))| EmbeddingRow {
            entry,
            meta: seq.meta.clone(),
            vector,
        })
        .collect())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index of the nearest gallery row, skipping rows with the probe's view
/// when `exclude_identical_view`. Ties go to the lowest index.
pub fn nearest_gallery(gallery: &[EmbeddingRow], probe: &EmbeddingRow, exclude_identical_view: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gallery.iter().enumerate() {
        if exclude_identical_view && g.meta.view_deg == probe.meta.view_deg {
            continue;
        }
        let d = euclidean(&g.vector, &probe.vector);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub format: String,
    pub exclude_identical_view: bool,
    /// Probe views, ascending.
    pub views: Vec<u16>,
    /// Probe set names, in protocol order.
    pub conditions: Vec<String>,
    /// `[view][condition]` correct matches.
    pub hits: Vec<Vec<usize>>,
    /// `[view][condition]` ranked probes (skipped probes excluded).
    pub probes: Vec<Vec<usize>>,
    /// `[view][condition]` percentage, `None` for cells without probes.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Mean over the included cells of each condition.
    pub condition_means: Vec<Option<f64>>,
    /// Mean of the condition means.
    pub mean: Option<f64>,
    /// Probes with an empty effective gallery.
    pub skipped: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rank-1 accuracy of each named probe set against `gallery`.
pub fn rank1(gallery: &[EmbeddingRow], probe_sets: &[(String, Vec<EmbeddingRow>)], exclude_identical_view: bool) -> RankReport {
    let views: Vec<u16> = probe_sets
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.meta.view_deg))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let nc = probe_sets.len();
    let mut hits = vec![vec![0usize; nc]; views.len()];
    let mut counts = vec![vec![0usize; nc]; views.len()];
    let mut skipped = 0;
    for (c, (_, rows)) in probe_sets.iter().enumerate() {
        let results: Vec<Option<bool>> = rows
            .par_iter()
            .map(|p| nearest_gallery(gallery, p, exclude_identical_view).map(|g| gallery[g].meta.subject_id == p.meta.subject_id))
            .collect();
        for (p, r) in rows.iter().zip(results) {
            let v = views.binary_search(&p.meta.view_deg).expect("view collected above");
            match r {
                None => skipped += 1,
                Some(hit) => {
                    counts[v][c] += 1;
                    hits[v][c] += hit as usize;
                }
            }
        }
    }
    let accuracy: Vec<Vec<Option<f64>>> = hits
        .iter()
        .zip(&counts)
        .map(|(h, n)| {
            h.iter()
                .zip(n)
                .map(|(&h, &n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
                .collect()
        })
        .collect();
    let condition_means: Vec<Option<f64>> = (0..nc).map(|c| mean_of(accuracy.iter().map(|row| row[c]))).collect();
    let mean = mean_of(condition_means.iter().copied());
    RankReport {
        format: REPORT_FORMAT.to_string(),
        exclude_identical_view,
        views,
        conditions: probe_sets.iter().map(|(n, _)| n.clone()).collect(),
        hits,
        probes: counts,
        accuracy,
        condition_means,
        mean,
        skipped,
    }
}

impl RankReport {
    /// Fixed-layout table: one row per probe condition, one column per
    /// probe view, then the row mean.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>7}", "-"), |x| format!("{x:>7.1}"));
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "Probe");
        for v in &self.views {
            let _ = write!(s, "{v:>7}");
        }
        let _ = writeln!(s, "{:>7}", "Mean");
        for (c, name) in self.conditions.iter().enumerate() {
            let _ = write!(s, "{name:<8}");
            for row in &self.accuracy {
                s.push_str(&cell(row[c]));
            }
            s.push_str(&cell(self.condition_means[c]));
            s.push('\n');
        }
        let _ = writeln!(s, "{:<8}{}", "Overall", cell(self.mean).trim_start());
        if self.skipped > 0 {
            let _ = writeln!(s, "skipped probes: {}", self.skipped);
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

fn l2_normalize(rows: &mut [EmbeddingRow]) {
    for r in rows {
        let n = r.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            r.vector.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Embeds the configured split and ranks every probe set.
pub fn evaluate(model: &Model, data: &Dataset, cfg: &EvalConfig) -> Result<RankReport> {
    cfg.validate()?;
    let pool = data.index.entries_in(cfg.split);
    let meta = |e: usize| &data.index.entries[e].meta;
    let gallery_ids: Vec<usize> = pool.iter().copied().filter(|&e| cfg.gallery.matches(meta(e))).collect();
    if gallery_ids.is_empty() {
        return Err(Error::Input(format!("no gallery sequences match {:?} in the {:?} split", cfg.gallery, cfg.split)));
    }
    let mut wanted: BTreeSet<usize> = gallery_ids.iter().copied().collect();
    let mut probe_ids = Vec::new();
    for ps in &cfg.probes {
        let sel = ps.selector();
        let ids: Vec<usize> = pool.iter().copied().filter(|&e| sel.matches(meta(e))).collect();
        if let Some(&e) = ids.iter().find(|e| gallery_ids.contains(e)) {
            return Err(Error::Config(format!(
                "probe set {} overlaps the gallery at {}",
                ps.name,
                meta(e)
            )));
        }
        wanted.extend(ids.iter().copied());
        probe_ids.push(ids);
    }
    let wanted: Vec<usize> = wanted.into_iter().collect();
    let mut rows = embed_all(model, data, &wanted, cfg.batch_size)?;
    if cfg.normalize {
        l2_normalize(&mut rows);
    }
    let pick = |ids: &[usize]| -> Vec<EmbeddingRow> {
        ids.iter()
            .map(|e| rows[wanted.binary_search(e).expect("embedded")].clone())
            .collect()
    };
    let gallery = pick(&gallery_ids);
    let sets: Vec<(String, Vec<EmbeddingRow>)> = cfg
        .probes
        .iter()
        .zip(&probe_ids)
        .map(|(ps, ids)| (ps.name.clone(), pick(ids)))
        .collect();
    Ok(rank1(&gallery, &sets, cfg.exclude_identical_view))
}

/// The four SiMo/FeMo combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Simo,
    Femo,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Plain, Variant::Simo, Variant::Femo, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Simo => "simo",
            Variant::Femo => "femo",
            Variant::Full => "full",
        }
    }

    pub fn uses_simo(self) -> bool {
        matches!(self, Variant::Simo | Variant::Full)
    }

    pub fn uses_femo(self) -> bool {
        matches!(self, Variant::Femo | Variant::Full)
    }

    /// `base` with SiMo and FeMo switched for this variant. FeMo placement
    /// follows the base flags, or every stage after the first when the base
    /// has none enabled.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        let b = &mut cfg.backbone;
        b.simo_enabled = self.uses_simo();
        let placement: Vec<bool> = if base.backbone.femo_any() {
            base.backbone.femo_enabled.clone()
        } else {
            (0..b.stage_channels.len()).map(|i| i > 0).collect()
        };
        b.femo_enabled = if self.uses_femo() {
            placement
        } else {
            vec![false; b.stage_channels.len()]
        };
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub config_digest: String,
    /// Overall mean rank-1 of each seed, in seed order.
    pub per_seed: Vec<f64>,
    /// Per-condition means averaged over seeds.
    pub condition_means: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub conditions: Vec<String>,
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn get(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "Variant");
        for c in &self.conditions {
            let _ = write!(s, "{c:>8}");
        }
        let _ = writeln!(s, "{:>8}", "Mean");
        for r in &self.variants {
            let _ = write!(s, "{:<8}", r.variant.name());
            for m in &r.condition_means {
                let _ = write!(s, "{m:>8.1}");
            }
            let _ = writeln!(s, "{:>8.1}", r.mean);
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Trains and evaluates each variant once per seed on identical data.
/// Per-run artefacts go under `out_dir/<variant>/seed-<n>` when given.
pub fn ablation_run(
    base: &ExperimentConfig,
    data: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    let mut results = Vec::new();
    let mut conditions = Vec::new();
    for &v in variants {
        let mut per_seed = Vec::new();
        let mut cond_sum: Vec<f64> = Vec::new();
        let vcfg = v.apply(base);
        for &seed in seeds {
            let mut cfg = vcfg.clone();
            cfg.seed = seed;
            let dir = out_dir.map(|d| d.join(v.name()).join(format!("seed-{seed}")));
            let state = train(&cfg, data, dir.as_deref(), None)?;
            let report = evaluate(&state.model, data, &cfg.eval)?;
            log::info!("ablation {} seed {seed}: mean rank-1 {:?}", v.name(), report.mean);
            conditions = report.conditions.clone();
            let means: Vec<f64> = report.condition_means.iter().map(|m| m.unwrap_or(0.0)).collect();
            if cond_sum.is_empty() {
                cond_sum = vec![0.0; means.len()];
            }
            cond_sum.iter_mut().zip(&means).for_each(|(a, b)| *a += b);
            per_seed.push(report.mean.unwrap_or(0.0));
        }
        let n = seeds.len() as f64;
        results.push(VariantResult {
            variant: v,
            config_digest: vcfg.digest(),
            mean: per_seed.iter().sum::<f64>() / n,
            per_seed,
            condition_means: cond_sum.iter().map(|s| s / n).collect(),
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        conditions,
        variants: results,
    })
}
