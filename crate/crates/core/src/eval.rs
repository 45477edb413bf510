//! Verification and identification metrics, and score histograms.
//!
//! All threshold comparisons are inclusive: a pair is accepted when `score >= threshold`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dao::{combine, CalibrationConfig, DensityEstimator, ScoreColumn, ScoreTable};
use crate::embedding::similarity;
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;

/// Genuine and impostor scores from one score column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl LabeledScores {
    pub fn from_pairs(scores: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let mut out = LabeledScores::default();
        for (s, genuine) in scores {
            if genuine {
                out.genuine.push(s);
            } else {
                out.impostor.push(s);
            }
        }
        out
    }

    pub fn from_table(table: &ScoreTable, column: ScoreColumn) -> Self {
        Self::from_pairs(table.column(column))
    }

    fn check(&self) -> Result<()> {
        if self.impostor.is_empty() {
            return Err(Error::NoImpostors);
        }
        if self.genuine.is_empty() {
            return Err(Error::NoGenuine);
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| s.is_nan()) {
            return Err(Error::invalid("scores", "NaN score"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// One ROC point per distinct score, thresholds descending.
pub fn roc_curve(scores: &LabeledScores) -> Result<Vec<RocPoint>> {
    scores.check()?;
    let mut all: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (ng, ni) = (scores.genuine.len() as f64, scores.impostor.len() as f64);
    let mut points = Vec::new();
    let (mut g, mut i) = (0usize, 0usize);
    let mut at = 0;
    while at < all.len() {
        let t = all[at].0;
        while at < all.len() && all[at].0 == t {
            if all[at].1 {
                g += 1;
            } else {
                i += 1;
            }
            at += 1;
        }
        points.push(RocPoint {
            threshold: t,
            far: i as f64 / ni,
            tar: g as f64 / ng,
        });
    }
    Ok(points)
}

/// Trapezoidal area under an ROC curve, anchored at `(0, 0)`.
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut area = 0.0;
    let (mut far, mut tar) = (0.0, 0.0);
    for p in points {
        area += (p.far - far) * (p.tar + tar) / 2.0;
        far = p.far;
        tar = p.tar;
    }
    area
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
    /// False-accept rate actually reached at `threshold`.
    pub far: f64,
    /// Set when the target is finer than one impostor, or no observed threshold meets it;
    /// the reported point is then the strictest threshold available.
    pub resolution_limited: bool,
}

/// For each target, the lowest observed score whose impostor acceptance is within target.
pub fn tar_at_far(scores: &LabeledScores, far_targets: &[f64]) -> Result<Vec<TarAtFar>> {
    let roc = roc_curve(scores)?;
    let min_far = 1.0 / scores.impostor.len() as f64;
    far_targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target < 1.0) {
                return Err(Error::invalid("far", format!("targets must lie in (0, 1), got {target}")));
            }
            // `roc` is ordered by threshold descending, so far is non-decreasing along it.
            let reachable = roc.partition_point(|p| p.far <= target);
            let (point, unmet) = match reachable {
                0 => (roc[0], true),
                n => (roc[n - 1], false),
            };
            Ok(TarAtFar {
                far_target: target,
                tar: point.tar,
                threshold: point.threshold,
                far: point.far,
                resolution_limited: unmet || target < min_far,
            })
        })
        .collect()
}

/// Pluggable pair scorer for identification. The per-embedding context is computed once.
pub trait PairScorer: Sync {
    type Context: Send + Sync;
    fn context(&self, e: &[f64]) -> Result<Self::Context>;
    fn score(&self, a: &[f64], ca: &Self::Context, b: &[f64], cb: &Self::Context) -> f64;
}

/// Plain cosine similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineScorer;

impl PairScorer for CosineScorer {
    type Context = ();

    fn context(&self, _: &[f64]) -> Result<()> {
        Ok(())
    }

    fn score(&self, a: &[f64], _: &(), b: &[f64], _: &()) -> f64 {
        similarity(a, b)
    }
}

/// Calibrated score with densities from any estimator (anchor index or SSR model).
pub struct DaoScorer<'a, E: DensityEstimator + ?Sized> {
    pub estimator: &'a E,
    pub cfg: CalibrationConfig,
}

impl<E: DensityEstimator + ?Sized> PairScorer for DaoScorer<'_, E> {
    type Context = f64;

    fn context(&self, e: &[f64]) -> Result<f64> {
        self.estimator.density(e, &self.cfg)
    }

    fn score(&self, a: &[f64], ca: &f64, b: &[f64], cb: &f64) -> f64 {
        combine(similarity(a, b), *ca, *cb, &self.cfg).value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAccuracy {
    pub rank: usize,
    pub accuracy: f64,
}

/// Closed-set identification against `{mate} ∪ distractors`.
///
/// Probe `i` is matched with `mates` row `i`. Its rank is one plus the number of
/// distractors scoring strictly above the mate.
pub fn rank_k_identification<S: PairScorer>(
    probes: &EmbeddingStore,
    mates: &EmbeddingStore,
    distractors: &EmbeddingStore,
    scorer: &S,
    ranks: &[usize],
) -> Result<Vec<RankAccuracy>> {
    if probes.is_empty() || mates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if probes.len() != mates.len() {
        return Err(Error::invalid(
            "mates",
            format!("{} mates for {} probes", mates.len(), probes.len()),
        ));
    }
    for s in [mates, distractors] {
        if s.dim() != probes.dim() {
            return Err(Error::DimensionMismatch {
                expected: probes.dim(),
                found: s.dim(),
            });
        }
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks", "ranks start at 1"));
    }
    let distractor_ctx = distractors
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| scorer.context(r))
        .collect::<Result<Vec<_>>>()?;
    let probe_ranks = (0..probes.len())
        .into_par_iter()
        .map(|i| {
            let p = probes.row(i);
            let pc = scorer.context(p)?;
            let m = mates.row(i);
            let mate_score = scorer.score(p, &pc, m, &scorer.context(m)?);
            let above = distractors
                .rows()
                .zip(&distractor_ctx)
                .filter(|(d, dc)| scorer.score(p, &pc, d, dc) > mate_score)
                .count();
            Ok(above + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = probe_ranks.len() as f64;
    Ok(ranks
        .iter()
        .map(|&rank| RankAccuracy {
            rank,
            accuracy: probe_ranks.iter().filter(|&&r| r <= rank).count() as f64 / n,
        })
        .collect())
}

/// First and second sample of every label with at least two samples, in label order of
/// first appearance: probes and their gallery mates for identification.
pub fn mate_split(store: &EmbeddingStore) -> Result<(EmbeddingStore, EmbeddingStore)> {
    let labels = store
        .labels()
        .ok_or_else(|| Error::invalid("probe-db", "identification needs a labeled store"))?;
    let mut first: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut seen_pair = std::collections::HashSet::new();
    for (i, &l) in labels.iter().enumerate() {
        match first.get(&l) {
            None => {
                first.insert(l, i);
            }
            Some(&p) => {
                if seen_pair.insert(l) {
                    pairs.push((p, i));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    pairs.sort_unstable();
    let probes: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mates: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok((store.select(&probes), store.select(&mates)))
}

/// Pearson correlation; `None` if either side is constant or lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Fractional ranks (1-based), ties get their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut at = 0;
    while at < order.len() {
        let mut end = at + 1;
        while end < order.len() && v[order[end]] == v[order[at]] {
            end += 1;
        }
        let r = (at + end + 1) as f64 / 2.0;
        for &i in &order[at..end] {
            out[i] = r;
        }
        at = end;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    GenuineImpostor,
    Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_count: usize,
    pub min: f64,
    pub max: f64,
    pub split_by: SplitBy,
}

impl HistogramSpec {
    /// Range spanning the data exactly.
    pub fn covering<'a>(values: impl IntoIterator<Item = &'a f64>, bin_count: usize, split_by: SplitBy) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            (min, max) = (0.0, 1.0);
        } else if min == max {
            (min, max) = (min - 0.5, max + 0.5);
        }
        HistogramSpec {
            bin_count,
            min,
            max,
            split_by,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bin_count == 0 {
            return Err(Error::invalid("bins", "at least one bin is required"));
        }
        if !(self.min < self.max) {
            return Err(Error::invalid("range", "min must be below max"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.max - self.min) / self.bin_count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: HistogramSpec,
    /// Per split: name and one count per bin.
    pub splits: Vec<(String, Vec<u64>)>,
    /// Values outside the range, counted into the edge bins.
    pub clipped: u64,
    /// Overlap coefficient between the first two splits' normalized densities.
    pub overlap: f64,
}

/// Bin each named group of scores. Overlap is `sum_bins min(p1, p2)` over the first two
/// groups' per-bin probability mass, i.e. the integral of the smaller density.
pub fn histogram(groups: &[(String, Vec<f64>)], spec: HistogramSpec) -> Result<Histogram> {
    spec.validate()?;
    let width = spec.bin_width();
    let mut clipped = 0;
    let splits: Vec<(String, Vec<u64>)> = groups
        .iter()
        .map(|(name, values)| {
            let mut counts = vec![0u64; spec.bin_count];
            for &v in values {
                if v < spec.min || v > spec.max {
                    clipped += 1;
                }
                let b = ((v - spec.min) / width).floor();
                let b = if b.is_nan() { 0.0 } else { b.clamp(0.0, (spec.bin_count - 1) as f64) };
                counts[b as usize] += 1;
            }
            (name.clone(), counts)
        })
        .collect();
    let overlap = match splits.as_slice() {
        [(_, a), (_, b), ..] => {
            let (na, nb) = (a.iter().sum::<u64>(), b.iter().sum::<u64>());
            if na == 0 || nb == 0 {
                0.0
            } else {
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| (x as f64 / na as f64).min(y as f64 / nb as f64))
                    .sum()
            }
        }
        _ => 0.0,
    };
    Ok(Histogram {
        spec,
        splits,
        clipped,
        overlap,
    })
}

/// `[("genuine", ..), ("impostor", ..)]` groups from one score column.
pub fn genuine_impostor_groups(table: &ScoreTable, column: ScoreColumn) -> Vec<(String, Vec<f64>)> {
    let s = LabeledScores::from_table(table, column);
    vec![("genuine".into(), s.genuine), ("impostor".into(), s.impostor)]
}

/// Scores grouped by the domain both sides of a pair come from; mixed pairs go to `"cross"`.
/// Probe and gallery indices are looked up in the same `domains` slice.
pub fn domain_groups(
    table: &ScoreTable,
    column: ScoreColumn,
    domains: &[u16],
    names: &[String],
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut groups: Vec<(String, Vec<f64>)> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
    groups.push(("cross".into(), Vec::new()));
    let cross = groups.len() - 1;
    for (row, (r, (v, _))) in table.rows.iter().zip(table.column(column)).enumerate() {
        let (a, b) = match (domains.get(r.probe_index), domains.get(r.gallery_index)) {
            (Some(&a), Some(&b)) => (a as usize, b as usize),
            _ => {
                return Err(Error::PairOutOfRange {
                    row,
                    side: "domain",
                    index: r.probe_index.max(r.gallery_index),
                    len: domains.len(),
                })
            }
        };
        if a >= names.len() || b >= names.len() {
            return Err(Error::invalid("domains", format!("domain tag {} has no name", a.max(b))));
        }
        groups[if a == b { a } else { cross }].1.push(v);
    }
    Ok(groups)
}

impl Histogram {
    /// CSV with header `bin_low,bin_high,split,count`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_low", "bin_high", "split", "count"])?;
        let width = self.spec.bin_width();
        for (name, counts) in &self.splits {
            for (i, c) in counts.iter().enumerate() {
                let lo = self.spec.min + width * i as f64;
                let hi = if i + 1 == counts.len() { self.spec.max } else { self.spec.min + width * (i + 1) as f64 };
                w.write_record([lo.to_string(), hi.to_string(), name.clone(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Bin count used when none is given.
pub const DEFAULT_BINS: usize = 50;

/// TAR at one FAR target plus the genuine/impostor overlap of one score column, with the
/// histogram range spanning that column's scores.
pub fn verification_summary(
    table: &ScoreTable,
    column: ScoreColumn,
    far_target: f64,
    bins: usize,
) -> Result<(TarAtFar, f64)> {
    let scores = LabeledScores::from_table(table, column);
    let tar = tar_at_far(&scores, &[far_target])?[0];
    let spec = HistogramSpec::covering(
        scores.genuine.iter().chain(&scores.impostor),
        bins,
        SplitBy::GenuineImpostor,
    );
    let groups = vec![("genuine".to_string(), scores.genuine), ("impostor".to_string(), scores.impostor)];
    Ok((tar, histogram(&groups, spec)?.overlap))
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub column: ScoreColumn,
    pub tar_at_far: Vec<TarAtFar>,
    pub overlap: f64,
    pub rank_k: Option<Vec<RankAccuracy>>,
}

impl EvalSummary {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

pub fn write_tar_csv(rows: &[TarAtFar], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
