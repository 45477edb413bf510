//! Named dataset presets in a `key = value` text format.
//!
//! ```text
//! name = fig2
//! dim = 128
//! domains = sparse, dense
//! sparse.n_classes = 500
//! sparse.center_concentration = 0.5
//! ...
//! ```
//!
//! A preset describes the evaluation set (probe store and pair protocol) plus the sizes
//! of the auxiliary draws: anchor set, SSR training set and identification distractors.
//! Auxiliary draws use fresh single-sample classes from the same domains, so they share
//! the evaluation set's geometry but none of its identities.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pairs::PairList;
use crate::rng::stream;
use crate::store::EmbeddingStore;
use crate::synth::{domain_directions, generate_around, make_protocol, DomainSpec, SynthDataset};

pub const FIG2: &str = include_str!("../presets/fig2.preset");

const TRAIN_LABEL_BASE: u64 = 1 << 32;
const ANCHOR_LABEL_BASE: u64 = 2 << 32;
const DISTRACTOR_LABEL_BASE: u64 = 3 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub dim: usize,
    pub domains: Vec<DomainSpec>,
    pub anchor_size: usize,
    pub train_size: usize,
    pub distractor_size: usize,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

/// Everything `gen` writes for one seed.
#[derive(Debug, Clone)]
pub struct PresetData {
    pub probe: SynthDataset,
    pub train: SynthDataset,
    pub anchors: SynthDataset,
    pub pairs: PairList,
    pub genuine_shortfall: usize,
    pub impostor_shortfall: usize,
}

impl Preset {
    pub fn builtin(name: &str) -> Option<Preset> {
        match name {
            "fig2" => Some(Preset::parse(FIG2, "builtin:fig2").expect("builtin preset parses")),
            _ => None,
        }
    }

    /// A builtin name, or else a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Preset> {
        if let Some(p) = Preset::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        let text = String::from_utf8(crate::io::read_file(path)?).map_err(|e| Error::Parse {
            path: name_or_path.to_string(),
            detail: e.to_string(),
        })?;
        Preset::parse(&text, name_or_path)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Preset> {
        let err = |detail: String| Error::Parse {
            path: origin.to_string(),
            detail,
        };
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key = value", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(err(format!("line {}: duplicate key {}", lineno + 1, k.trim())));
            }
        }
        let mut take = |key: &str| kv.remove(key).ok_or_else(|| err(format!("missing key {key}")));
        fn num<T: std::str::FromStr>(key: &str, v: String, origin: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                detail: format!("{key}: cannot parse {v:?}"),
            })
        }

        let name = take("name")?;
        let dim: usize = num("dim", take("dim")?, origin)?;
        let domain_names: Vec<String> = take("domains")?.split(',').map(|s| s.trim().to_string()).collect();
        let mut domains = Vec::new();
        let mut offset = 0u64;
        for dn in &domain_names {
            let key = |f: &str| format!("{dn}.{f}");
            let n_classes: usize = num(&key("n_classes"), take(&key("n_classes"))?, origin)?;
            let spec = DomainSpec {
                name: dn.clone(),
                n_classes,
                center_concentration: num(&key("center_concentration"), take(&key("center_concentration"))?, origin)?,
                sample_concentration: num(&key("sample_concentration"), take(&key("sample_concentration"))?, origin)?,
                samples_per_class: num(&key("samples_per_class"), take(&key("samples_per_class"))?, origin)?,
                label_offset: offset,
            };
            spec.validate().map_err(|e| err(e.to_string()))?;
            offset += n_classes as u64;
            domains.push(spec);
        }
        let preset = Preset {
            name,
            dim,
            domains,
            anchor_size: num("anchor_size", take("anchor_size")?, origin)?,
            train_size: num("train_size", take("train_size")?, origin)?,
            distractor_size: num("distractor_size", take("distractor_size")?, origin)?,
            n_genuine: num("n_genuine", take("n_genuine")?, origin)?,
            n_impostor: num("n_impostor", take("n_impostor")?, origin)?,
        };
        if let Some(k) = kv.keys().next() {
            return Err(err(format!("unknown key {k}")));
        }
        if preset.dim == 0 || preset.domains.is_empty() {
            return Err(err("dim and domains must be non-empty".into()));
        }
        Ok(preset)
    }

    pub fn generate(&self, seed: u64) -> Result<PresetData> {
        let directions = domain_directions(self.domains.len(), self.dim, seed);
        let probe = generate_around(&self.domains, &directions, &mut stream(seed, "probe"))?;
        let protocol = make_protocol(&probe.store, self.n_genuine, self.n_impostor, seed)?;
        Ok(PresetData {
            train: self.fresh_draw(seed, "train", self.train_size, TRAIN_LABEL_BASE)?,
            anchors: self.anchors(seed, self.anchor_size)?,
            probe,
            pairs: protocol.pairs,
            genuine_shortfall: protocol.genuine_shortfall,
            impostor_shortfall: protocol.impostor_shortfall,
        })
    }

    pub fn anchors(&self, seed: u64, count: usize) -> Result<SynthDataset> {
        self.fresh_draw(seed, "anchor", count, ANCHOR_LABEL_BASE)
    }

    pub fn distractors(&self, seed: u64, count: usize) -> Result<SynthDataset> {
        self.fresh_draw(seed, "distractor", count, DISTRACTOR_LABEL_BASE)
    }

    /// `count` single-sample classes from this preset's domains, split in proportion to
    /// each domain's class count (the last domain takes the rounding remainder).
    pub fn fresh_draw(&self, seed: u64, role: &str, count: usize, label_base: u64) -> Result<SynthDataset> {
        let directions = domain_directions(self.domains.len(), self.dim, seed);
        let total: usize = self.domains.iter().map(|d| d.n_classes).sum();
        let mut specs = Vec::new();
        let mut dirs = Vec::new();
        let mut tags = Vec::new();
        let mut assigned = 0;
        for (i, d) in self.domains.iter().enumerate() {
            let n = if i + 1 == self.domains.len() {
                count - assigned
            } else {
                count * d.n_classes / total
            };
            // Domains that receive no classes are left out of the draw.
            if n > 0 {
                specs.push(DomainSpec {
                    n_classes: n,
                    samples_per_class: 1,
                    label_offset: label_base + assigned as u64,
                    ..d.clone()
                });
                dirs.push(directions[i].clone());
                tags.push(i as u16);
            }
            assigned += n;
        }
        if specs.is_empty() {
            return Ok(SynthDataset {
                store: EmbeddingStore::new(self.dim, true)?,
                domains: Vec::new(),
            });
        }
        let mut ds = generate_around(&specs, &dirs, &mut stream(seed, role))?;
        for d in ds.domains.iter_mut() {
            *d = tags[*d as usize];
        }
        Ok(ds)
    }
}
