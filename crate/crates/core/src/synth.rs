//! Synthetic hypersphere datasets with controllable local inter-class density.
//!
//! Each domain has a direction on the sphere. Class centers are drawn around it with
//! `center_concentration` (large means tightly packed classes, i.e. a dense domain), and
//! samples are drawn around each center with `sample_concentration`.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{normalize, Embedding};
use crate::error::{Error, Result};
use crate::pairs::{Pair, PairList};
use crate::rng::{stream, StreamRng};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub n_classes: usize,
    pub center_concentration: f64,
    pub sample_concentration: f64,
    pub samples_per_class: usize,
    pub label_offset: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::invalid("n_classes", "must be positive"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::invalid("samples_per_class", "must be positive"));
        }
        if !(self.center_concentration > 0.0) || !(self.sample_concentration > 0.0) {
            return Err(Error::invalid("concentration", "must be positive"));
        }
        Ok(())
    }
}

/// A labeled store plus the domain each row was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub store: EmbeddingStore,
    pub domains: Vec<u16>,
}

/// A uniformly distributed unit vector.
pub fn uniform_direction(dim: usize, rng: &mut impl Rng) -> Embedding {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(e) = normalize(&raw) {
            return e;
        }
    }
}

/// `normalize(center * concentration + g)` with `g` standard normal.
pub fn sample_direction_near(center: &[f64], concentration: f64, rng: &mut impl Rng) -> Embedding {
    loop {
        let raw: Vec<f64> = center
            .iter()
            .map(|c| c * concentration + rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Ok(e) = normalize(&raw) {
            return e;
        }
    }
}

/// Draw one direction per domain, then generate every domain around its direction.
pub fn generate(specs: &[DomainSpec], dim: usize, seed: u64) -> Result<SynthDataset> {
    let directions = domain_directions(specs.len(), dim, seed);
    generate_around(specs, &directions, &mut stream(seed, "samples"))
}

pub fn domain_directions(n: usize, dim: usize, seed: u64) -> Vec<Embedding> {
    let mut rng = stream(seed, "domain-directions");
    (0..n).map(|_| uniform_direction(dim, &mut rng)).collect()
}

/// Generate classes and samples around fixed domain directions.
///
/// Rows are laid out domain by domain, class by class. Labels are
/// `label_offset + class_index` within each domain.
pub fn generate_around(specs: &[DomainSpec], directions: &[Embedding], rng: &mut StreamRng) -> Result<SynthDataset> {
    if specs.is_empty() {
        return Err(Error::invalid("specs", "at least one domain is required"));
    }
    if directions.len() != specs.len() {
        return Err(Error::invalid("directions", "one direction per domain is required"));
    }
    let dim = directions[0].dim();
    let mut store = EmbeddingStore::new(dim, true)?;
    let mut domains = Vec::new();
    for (d, (spec, dir)) in specs.iter().zip(directions).enumerate() {
        spec.validate()?;
        for class in 0..spec.n_classes {
            let center = sample_direction_near(dir.as_slice(), spec.center_concentration, rng);
            for _ in 0..spec.samples_per_class {
                let e = sample_direction_near(center.as_slice(), spec.sample_concentration, rng);
                store.push(&e, Some(spec.label_offset + class as u64))?;
                domains.push(d as u16);
            }
        }
    }
    Ok(SynthDataset { store, domains })
}

/// A verification pair list plus how far short of the request it fell.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub pairs: PairList,
    pub genuine_shortfall: usize,
    pub impostor_shortfall: usize,
}

/// Sample distinct unordered genuine and impostor pairs over a labeled store.
///
/// Pairs are emitted as `(lower row, higher row)`, genuine pairs first. When a request
/// exceeds the number of distinct pairs available, every available pair is returned and
/// the deficit is reported.
pub fn make_protocol(store: &EmbeddingStore, n_genuine: usize, n_impostor: usize, seed: u64) -> Result<Protocol> {
    let labels = store
        .labels()
        .ok_or_else(|| Error::Protocol("store has no identity labels".into()))?;
    let mut by_label: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let n = labels.len();
    let genuine_available: usize = by_label.values().map(|r| r.len() * (r.len().saturating_sub(1)) / 2).sum();
    let impostor_available = n * n.saturating_sub(1) / 2 - genuine_available;

    if n_genuine > 0 && genuine_available == 0 {
        return Err(Error::Protocol("no class has two or more samples".into()));
    }
    if n_impostor > 0 && impostor_available == 0 {
        return Err(Error::Protocol("fewer than two distinct identities".into()));
    }

    let mut entries = Vec::with_capacity(n_genuine + n_impostor);

    let mut rng = stream(seed, "protocol-genuine");
    let want = n_genuine.min(genuine_available);
    if want * 2 > genuine_available {
        let mut all: Vec<(usize, usize)> = by_label
            .values()
            .flat_map(|rows| {
                rows.iter()
                    .enumerate()
                    .flat_map(move |(a, &i)| rows[a + 1..].iter().map(move |&j| (i, j)))
            })
            .collect();
        all.shuffle(&mut rng);
        all.truncate(want);
        entries.extend(all.into_iter().map(|(i, j)| pair(i, j, true)));
    } else {
        // Drawing a row from multi-sample classes, then a partner from its class, is
        // uniform over unordered genuine pairs.
        let pool: Vec<usize> = by_label.values().filter(|r| r.len() > 1).flatten().copied().collect();
        let mut seen = HashSet::with_capacity(want);
        while seen.len() < want {
            let i = pool[rng.random_range(0..pool.len())];
            let class = &by_label[&labels[i]];
            let j = class[rng.random_range(0..class.len())];
            if i != j && seen.insert((i.min(j), i.max(j))) {
                entries.push(pair(i, j, true));
            }
        }
    }

    let mut rng = stream(seed, "protocol-impostor");
    let want_imp = n_impostor.min(impostor_available);
    if want_imp * 2 > impostor_available {
        let mut all = Vec::with_capacity(impostor_available);
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] != labels[j] {
                    all.push((i, j));
                }
            }
        }
        all.shuffle(&mut rng);
        all.truncate(want_imp);
        entries.extend(all.into_iter().map(|(i, j)| pair(i, j, false)));
    } else {
        let mut seen = HashSet::with_capacity(want_imp);
        while seen.len() < want_imp {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if labels[i] != labels[j] && seen.insert((i.min(j), i.max(j))) {
                entries.push(pair(i, j, false));
            }
        }
    }

    Ok(Protocol {
        pairs: PairList::new(entries),
        genuine_shortfall: n_genuine - want,
        impostor_shortfall: n_impostor - want_imp,
    })
}

fn pair(i: usize, j: usize, genuine: bool) -> Pair {
    Pair {
        probe: i.min(j),
        gallery: i.max(j),
        genuine,
    }
}
