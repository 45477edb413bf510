//! One-parameter ablations over a fixed probe set, pair list and anchor store.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dao::{calibrate_pairlist, combine, density, CalibrationConfig, ScoreColumn, ScoreRow, ScoreTable};
use crate::embedding::cosine_slices;
use crate::error::{Error, Result};
use crate::eval::verification_summary;
use crate::index::{AnchorIndex, SupportSet};
use crate::pairs::PairList;
use crate::rng::stream;
use crate::store::EmbeddingStore;

pub const SWEEP_FAR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    Tau,
    AnchorSize,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParam::K),
            "tau" => Ok(SweepParam::Tau),
            "anchor_size" | "anchor-size" => Ok(SweepParam::AnchorSize),
            other => Err(Error::invalid("param", format!("expected k, tau or anchor_size, found {other:?}"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "k",
            SweepParam::Tau => "tau",
            SweepParam::AnchorSize => "anchor_size",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub tar_at_far: f64,
    pub overlap: f64,
}

pub struct SweepInput<'a> {
    pub probes: &'a EmbeddingStore,
    pub gallery: &'a EmbeddingStore,
    pub pairs: &'a PairList,
    pub anchors: &'a EmbeddingStore,
}

fn whole(v: f64, name: &'static str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(name, format!("sweep values must be positive integers, found {v}")))
    }
}

/// Evaluate the calibrated column once per value of `param`, everything else fixed.
/// Anchor subsets for `AnchorSize` are seeded draws without replacement.
pub fn sweep(
    input: &SweepInput,
    base: &CalibrationConfig,
    param: SweepParam,
    values: &[f64],
    seed: u64,
    bins: usize,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::invalid("values", "at least one value is required"));
    }
    base.validate()?;
    let configs: Vec<CalibrationConfig> = values
        .iter()
        .map(|&v| {
            let mut c = *base;
            match param {
                SweepParam::K => c.k = whole(v, "values")?,
                SweepParam::Tau => c.tau = v,
                SweepParam::AnchorSize => {
                    whole(v, "values")?;
                }
            }
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;

    let tables: Vec<ScoreTable> = match param {
        SweepParam::K | SweepParam::Tau => {
            let k_max = configs.iter().map(|c| c.k).max().unwrap();
            let index = AnchorIndex::build(input.anchors.clone(), true)?;
            let cache = SupportCache::new(input, &index, k_max, base.exclude_threshold)?;
            configs.iter().map(|c| cache.table(input, c)).collect::<Result<_>>()?
        }
        SweepParam::AnchorSize => {
            let mut order: Vec<usize> = (0..input.anchors.len()).collect();
            order.shuffle(&mut stream(seed, "sweep-anchors"));
            values
                .iter()
                .map(|&v| {
                    let n = whole(v, "values")?;
                    if n > order.len() {
                        return Err(Error::invalid(
                            "values",
                            format!("anchor size {n} exceeds the {} anchors available", order.len()),
                        ));
                    }
                    let mut pick = order[..n].to_vec();
                    pick.sort_unstable();
                    let index = AnchorIndex::build(input.anchors.select(&pick), true)?;
                    calibrate_pairlist(input.probes, input.gallery, input.pairs, &index, base)
                })
                .collect::<Result<_>>()?
        }
    };
    values
        .iter()
        .zip(&tables)
        .map(|(&value, t)| {
            let (tar, overlap) = verification_summary(t, ScoreColumn::Calibrated, SWEEP_FAR, bins)?;
            Ok(SweepPoint {
                value,
                tar_at_far: tar.tar,
                overlap,
            })
        })
        .collect()
}

/// Support similarities to depth `k_max` for every row the pair list touches. Any smaller
/// `k` is a prefix, since top-k lists are nested.
struct SupportCache {
    probe: HashMap<usize, Vec<f64>>,
    gallery: HashMap<usize, Vec<f64>>,
}

impl SupportCache {
    fn new(input: &SweepInput, index: &AnchorIndex, k_max: usize, excl: f64) -> Result<Self> {
        input.pairs.validate(input.probes.len(), input.gallery.len())?;
        for s in [input.probes, input.gallery] {
            if s.dim() != index.dim() {
                return Err(Error::DimensionMismatch {
                    expected: index.dim(),
                    found: s.dim(),
                });
            }
        }
        let fill = |store: &EmbeddingStore, rows: Vec<usize>| -> Result<HashMap<usize, Vec<f64>>> {
            let mut rows = rows;
            rows.sort_unstable();
            rows.dedup();
            let sims = rows
                .par_iter()
                .map(|&i| Ok(index.search(store.row(i), k_max, excl)?.into_iter().map(|n| n.sim).collect()))
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(rows.into_iter().zip(sims).collect())
        };
        Ok(SupportCache {
            probe: fill(input.probes, input.pairs.entries.iter().map(|p| p.probe).collect())?,
            gallery: fill(input.gallery, input.pairs.entries.iter().map(|p| p.gallery).collect())?,
        })
    }

    fn table(&self, input: &SweepInput, cfg: &CalibrationConfig) -> Result<ScoreTable> {
        let dens = |sims: &Vec<f64>| density(&SupportSet::new(sims[..cfg.k.min(sims.len())].to_vec())?, cfg.tau);
        let probe: HashMap<usize, f64> = self.probe.iter().map(|(&i, s)| Ok((i, dens(s)?))).collect::<Result<_>>()?;
        let gallery: HashMap<usize, f64> =
            self.gallery.iter().map(|(&i, s)| Ok((i, dens(s)?))).collect::<Result<_>>()?;
        let rows = input
            .pairs
            .entries
            .iter()
            .map(|p| {
                let cos = cosine_slices(input.probes.row(p.probe), input.gallery.row(p.gallery))?;
                Ok(ScoreRow {
                    probe_index: p.probe,
                    gallery_index: p.gallery,
                    is_genuine: p.genuine,
                    cosine: cos,
                    calibrated: combine(cos, probe[&p.probe], gallery[&p.gallery], cfg).value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ScoreTable { rows })
    }
}
