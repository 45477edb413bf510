//! The discrepancy alignment operator and the reference-based verification pipeline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_slices, Embedding};
use crate::error::{Error, Result};
use crate::index::{AnchorIndex, SupportSet, DEFAULT_EXCLUDE_THRESHOLD};
use crate::pairs::{parse_flag, PairList};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `exp(tau * cos) * (F1 + F2)`.
    Raw,
    /// Natural log of the raw score.
    Log,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "log" => Ok(ScoreMode::Log),
            other => Err(Error::invalid("score-mode", format!("expected raw or log, found {other:?}"))),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Raw => "raw",
            ScoreMode::Log => "log",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Support set size.
    pub k: usize,
    /// Temperature applied to every similarity.
    pub tau: f64,
    pub score_mode: ScoreMode,
    /// Anchors at or above this similarity to the query are treated as self-matches and skipped.
    pub exclude_threshold: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            k: 10,
            tau: 1.0,
            score_mode: ScoreMode::Log,
            exclude_threshold: DEFAULT_EXCLUDE_THRESHOLD,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", format!("must be positive and finite, got {}", self.tau)));
        }
        if self.exclude_threshold.is_nan() {
            return Err(Error::invalid("exclude-threshold", "must be a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedScore {
    pub value: f64,
    /// `exp(tau * cos)`.
    pub pair_term: f64,
    pub density_1: f64,
    pub density_2: f64,
}

/// `1 / sum_i exp(tau * s_i)`: small when the neighborhood is crowded.
pub fn density(support: &SupportSet, tau: f64) -> Result<f64> {
    density_of(support.sims(), tau)
}

pub(crate) fn density_of(sims: &[f64], tau: f64) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(1.0 / sims.iter().map(|s| (tau * s).exp()).sum::<f64>())
}

/// Combine a pair similarity with the two density terms.
///
/// The densities are added smaller-first so the result does not depend on operand order.
pub fn combine(cos: f64, density_1: f64, density_2: f64, cfg: &CalibrationConfig) -> CalibratedScore {
    let (lo, hi) = if density_1 <= density_2 {
        (density_1, density_2)
    } else {
        (density_2, density_1)
    };
    let mass = lo + hi;
    let pair_term = (cfg.tau * cos).exp();
    let value = match cfg.score_mode {
        ScoreMode::Raw => pair_term * mass,
        ScoreMode::Log => cfg.tau * cos + mass.ln(),
    };
    CalibratedScore {
        value,
        pair_term,
        density_1,
        density_2,
    }
}

/// Calibrated score of a pair given both support sets.
pub fn dao_score(
    f1: &Embedding,
    f2: &Embedding,
    s1: &SupportSet,
    s2: &SupportSet,
    cfg: &CalibrationConfig,
) -> Result<CalibratedScore> {
    let cos = cosine_slices(f1.as_slice(), f2.as_slice())?;
    let d1 = density(s1, cfg.tau)?;
    let d2 = density(s2, cfg.tau)?;
    Ok(combine(cos, d1, d2, cfg))
}

/// Anything that can produce the density term for a single embedding.
pub trait DensityEstimator: Sync {
    fn dim(&self) -> usize;
    fn density(&self, e: &[f64], cfg: &CalibrationConfig) -> Result<f64>;
}

impl DensityEstimator for AnchorIndex {
    fn dim(&self) -> usize {
        AnchorIndex::dim(self)
    }

    fn density(&self, e: &[f64], cfg: &CalibrationConfig) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let support = self.support_set_slice(e, cfg.k, cfg.exclude_threshold)?;
        density(&support, cfg.tau)
    }
}

/// Score one pair against an anchor index: search both support sets, then combine.
pub fn verify_pair(
    i1: &Embedding,
    i2: &Embedding,
    index: &AnchorIndex,
    cfg: &CalibrationConfig,
) -> Result<CalibratedScore> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let s1 = index.support_set(i1, cfg.k, cfg.exclude_threshold)?;
    let s2 = index.support_set(i2, cfg.k, cfg.exclude_threshold)?;
    dao_score(i1, i2, &s1, &s2, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub probe_index: usize,
    pub gallery_index: usize,
    #[serde(serialize_with = "ser_flag", deserialize_with = "de_flag")]
    pub is_genuine: bool,
    pub cosine: f64,
    pub calibrated: f64,
}

fn ser_flag<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(*v as u8)
}

fn de_flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let raw = String::deserialize(d)?;
    parse_flag(&raw).ok_or_else(|| serde::de::Error::custom(format!("bad flag {raw:?}")))
}

/// One row per pair, in pair-list order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Which score column of a [`ScoreTable`] to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreColumn {
    Cosine,
    Calibrated,
}

impl FromStr for ScoreColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScoreColumn::Cosine),
            "calibrated" => Ok(ScoreColumn::Calibrated),
            other => Err(Error::invalid("column", format!("expected cosine or calibrated, found {other:?}"))),
        }
    }
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, column: ScoreColumn) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.rows.iter().map(move |r| {
            let v = match column {
                ScoreColumn::Cosine => r.cosine,
                ScoreColumn::Calibrated => r.calibrated,
            };
            (v, r.is_genuine)
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        w.write_record(["probe_index", "gallery_index", "is_genuine", "cosine", "calibrated"])?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = crate::io::read_file(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        Ok(ScoreTable { rows })
    }
}

/// Score every pair, computing each distinct embedding's density only once.
pub fn calibrate_pairlist(
    probes: &EmbeddingStore,
    gallery: &EmbeddingStore,
    pairs: &PairList,
    estimator: &dyn DensityEstimator,
    cfg: &CalibrationConfig,
) -> Result<ScoreTable> {
    prepare(probes, gallery, pairs, estimator, cfg)?;
    let probe_density = densities_for(probes, pairs.entries.iter().map(|p| p.probe), estimator, cfg)?;
    let gallery_density = densities_for(gallery, pairs.entries.iter().map(|p| p.gallery), estimator, cfg)?;
    let rows = pairs
        .entries
        .par_iter()
        .map(|p| {
            let a = probes.row(p.probe);
            let b = gallery.row(p.gallery);
            let cos = cosine_slices(a, b)?;
            let score = combine(cos, probe_density[&p.probe], gallery_density[&p.gallery], cfg);
            Ok(ScoreRow {
                probe_index: p.probe,
                gallery_index: p.gallery,
                is_genuine: p.genuine,
                cosine: cos,
                calibrated: score.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}

/// Reference path for [`calibrate_pairlist`]: every pair recomputes both densities.
pub fn calibrate_pairlist_uncached(
    probes: &EmbeddingStore,
    gallery: &EmbeddingStore,
    pairs: &PairList,
    estimator: &dyn DensityEstimator,
    cfg: &CalibrationConfig,
) -> Result<ScoreTable> {
    prepare(probes, gallery, pairs, estimator, cfg)?;
    let rows = pairs
        .entries
        .iter()
        .map(|p| {
            let a = probes.row(p.probe);
            let b = gallery.row(p.gallery);
            let cos = cosine_slices(a, b)?;
            let score = combine(cos, estimator.density(a, cfg)?, estimator.density(b, cfg)?, cfg);
            Ok(ScoreRow {
                probe_index: p.probe,
                gallery_index: p.gallery,
                is_genuine: p.genuine,
                cosine: cos,
                calibrated: score.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}

fn prepare(
    probes: &EmbeddingStore,
    gallery: &EmbeddingStore,
    pairs: &PairList,
    estimator: &dyn DensityEstimator,
    cfg: &CalibrationConfig,
) -> Result<()> {
    cfg.validate()?;
    pairs.validate(probes.len(), gallery.len())?;
    for store in [probes, gallery] {
        if store.dim() != estimator.dim() {
            return Err(Error::DimensionMismatch {
                expected: estimator.dim(),
                found: store.dim(),
            });
        }
    }
    Ok(())
}

fn densities_for(
    store: &EmbeddingStore,
    rows: impl Iterator<Item = usize>,
    estimator: &dyn DensityEstimator,
    cfg: &CalibrationConfig,
) -> Result<HashMap<usize, f64>> {
    let mut unique: Vec<usize> = rows.collect();
    unique.sort_unstable();
    unique.dedup();
    let values = unique
        .par_iter()
        .map(|&i| estimator.density(store.row(i), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(unique.into_iter().zip(values).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::embedding::normalize;
    use crate::pairs::Pair;

    fn support(sims: &[f64]) -> SupportSet {
        SupportSet::new(sims.to_vec()).unwrap()
    }

    fn raw_cfg() -> CalibrationConfig {
        CalibrationConfig {
            score_mode: ScoreMode::Raw,
            ..Default::default()
        }
    }

    #[test]
    fn density_examples() {
        assert!((density(&support(&[0.0; 10]), 1.0).unwrap() - 0.1).abs() < 1e-15);
        let d = density(&support(&[0.8, 0.5]), 1.0).unwrap();
        // 1 / (e^0.8 + e^0.5)
        assert!((d - 0.258_113_661_023_872_4).abs() < 1e-15, "{d}");
        let near_zero_tau = density(&support(&[0.9, 0.3, -0.2]), 1e-9).unwrap();
        assert!((near_zero_tau - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn density_rejects_empty() {
        assert!(matches!(density(&support(&[]), 1.0), Err(Error::EmptySupport)));
    }

    #[test]
    fn dao_examples() {
        let e1 = normalize(&[1.0, 0.0]).unwrap();
        let e2 = normalize(&[0.0, 1.0]).unwrap();
        let zeros = support(&[0.0; 10]);
        let s = dao_score(&e1, &e2, &zeros, &zeros, &raw_cfg()).unwrap();
        assert!((s.value - 0.2).abs() < 1e-15);

        // cos = 0.6 between (1, 0) and (0.6, 0.8).
        let f2 = normalize(&[0.6, 0.8]).unwrap();
        let s = dao_score(&e1, &f2, &support(&[0.8, 0.5]), &support(&[0.2, 0.1]), &raw_cfg()).unwrap();
        // e^0.6 * (1/(e^0.8+e^0.5) + 1/(e^0.2+e^0.1))
        assert!((s.value - 1.253_490_672_017_950_2).abs() < 1e-12, "{}", s.value);
        assert!((s.density_2 - 0.429_816_605_514_899_6).abs() < 1e-12);
    }

    #[test]
    fn verify_pair_rejects_empty_index() {
        let e = normalize(&[1.0, 0.0]).unwrap();
        let index = AnchorIndex::build(EmbeddingStore::new(2, false).unwrap(), false).unwrap();
        assert!(matches!(verify_pair(&e, &e, &index, &raw_cfg()), Err(Error::EmptyIndex)));
    }

    #[test]
    fn verify_pair_identical_inputs() {
        let anchors: Vec<Embedding> = [[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]
            .iter()
            .map(|v| normalize(v).unwrap())
            .collect();
        let index = AnchorIndex::build(EmbeddingStore::from_embeddings(3, &anchors, None).unwrap(), false).unwrap();
        let e = normalize(&[1.0, 2.0, 3.0]).unwrap();
        let cfg = CalibrationConfig { k: 2, ..raw_cfg() };
        let s = verify_pair(&e, &e, &index, &cfg).unwrap();
        let d = density(&index.support_set(&e, 2, cfg.exclude_threshold).unwrap(), 1.0).unwrap();
        assert!((s.value - std::f64::consts::E * 2.0 * d).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(CalibrationConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(CalibrationConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(CalibrationConfig::default().validate().is_ok());
        assert_eq!("log".parse::<ScoreMode>().unwrap(), ScoreMode::Log);
        assert!("exp".parse::<ScoreMode>().is_err());
    }

    #[test]
    fn empty_and_duplicated_pairlists() {
        let rows: Vec<Embedding> = (0..6).map(|i| normalize(&[1.0, i as f64, 0.5]).unwrap()).collect();
        let store = EmbeddingStore::from_embeddings(3, &rows, None).unwrap();
        let index = AnchorIndex::build(store.clone(), false).unwrap();
        let cfg = CalibrationConfig { k: 2, ..Default::default() };
        let t = calibrate_pairlist(&store, &store, &PairList::default(), &index, &cfg).unwrap();
        assert!(t.is_empty());

        let p = Pair { probe: 1, gallery: 4, genuine: false };
        let t = calibrate_pairlist(&store, &store, &PairList::new(vec![p, p]), &index, &cfg).unwrap();
        assert_eq!(t.rows[0], t.rows[1]);

        let bad = PairList::new(vec![p, Pair { probe: 9, gallery: 0, genuine: true }]);
        let err = calibrate_pairlist(&store, &store, &bad, &index, &cfg).unwrap_err();
        assert!(matches!(err, Error::PairOutOfRange { row: 1, side: "probe", .. }));
    }

    #[test]
    fn score_table_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let table = ScoreTable {
            rows: vec![ScoreRow {
                probe_index: 3,
                gallery_index: 5,
                is_genuine: true,
                cosine: 0.123_456_789_012_345_67,
                calibrated: -1.5e-3,
            }],
        };
        table.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("probe_index,gallery_index,is_genuine,cosine,calibrated\n3,5,1,"));
        assert_eq!(ScoreTable::load(&path).unwrap(), table);
    }

    fn sims_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 1..20).prop_map(|mut v| {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        })
    }

    proptest! {
        #[test]
        fn swap_is_bit_exact(
            a in prop::collection::vec(-1.0f64..1.0, 8),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            s1 in sims_strategy(),
            s2 in sims_strategy(),
            tau in 0.1f64..8.0,
            log in any::<bool>(),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let (f1, f2) = (normalize(&a).unwrap(), normalize(&b).unwrap());
            let cfg = CalibrationConfig { tau, score_mode: if log { ScoreMode::Log } else { ScoreMode::Raw }, ..Default::default() };
            let x = dao_score(&f1, &f2, &support(&s1), &support(&s2), &cfg).unwrap();
            let y = dao_score(&f2, &f1, &support(&s2), &support(&s1), &cfg).unwrap();
            prop_assert_eq!(x.value.to_bits(), y.value.to_bits());
        }

        #[test]
        fn increasing_in_pair_similarity(c1 in -1.0f64..1.0, dc in 1e-6f64..1.0, d1 in 1e-3f64..1.0, d2 in 1e-3f64..1.0) {
            let c2 = (c1 + dc).min(1.0);
            prop_assume!(c2 > c1);
            for mode in [ScoreMode::Raw, ScoreMode::Log] {
                let cfg = CalibrationConfig { score_mode: mode, ..Default::default() };
                prop_assert!(combine(c2, d1, d2, &cfg).value > combine(c1, d1, d2, &cfg).value);
            }
        }

        #[test]
        fn denser_support_lowers_score(s in sims_strategy(), pick in any::<prop::sample::Index>(), bump in 1e-3f64..0.5, tau in 0.1f64..4.0) {
            let i = pick.index(s.len());
            let mut denser = s.clone();
            denser[i] = (denser[i] + bump).min(1.0);
            prop_assume!(denser[i] > s[i]);
            let other = [0.1, 0.0];
            let cfg = CalibrationConfig { tau, score_mode: ScoreMode::Raw, ..Default::default() };
            let before = combine(0.3, density_of(&s, tau).unwrap(), density_of(&other, tau).unwrap(), &cfg);
            let after = combine(0.3, density_of(&denser, tau).unwrap(), density_of(&other, tau).unwrap(), &cfg);
            prop_assert!(after.value < before.value);
        }

        #[test]
        fn log_mode_is_log_of_raw(cos in -1.0f64..1.0, s1 in sims_strategy(), s2 in sims_strategy(), tau in 0.1f64..8.0) {
            let raw = CalibrationConfig { tau, score_mode: ScoreMode::Raw, ..Default::default() };
            let log = CalibrationConfig { score_mode: ScoreMode::Log, ..raw };
            let (d1, d2) = (density_of(&s1, tau).unwrap(), density_of(&s2, tau).unwrap());
            let r = combine(cos, d1, d2, &raw).value;
            let l = combine(cos, d1, d2, &log).value;
            prop_assert!(r > 0.0);
            prop_assert!((l - r.ln()).abs() <= 1e-12 * l.abs().max(1.0));
        }

        #[test]
        fn tiny_tau_density_is_inverse_k(s in sims_strategy()) {
            let d = density_of(&s, 1e-9).unwrap();
            let k = s.len() as f64;
            prop_assert!((d - 1.0 / k).abs() <= 1e-6);
        }
    }
}
