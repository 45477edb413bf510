//! Verification pair lists, stored as CSV with a `probe_index,gallery_index,is_genuine` header.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub probe: usize,
    pub gallery: usize,
    pub genuine: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairList {
    pub entries: Vec<Pair>,
}

#[derive(Deserialize)]
struct PairRecord {
    probe_index: usize,
    gallery_index: usize,
    is_genuine: String,
}

impl PairList {
    pub fn new(entries: Vec<Pair>) -> Self {
        PairList { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Check every index against the store sizes, naming the first offending row.
    pub fn validate(&self, probe_len: usize, gallery_len: usize) -> Result<()> {
        for (row, p) in self.entries.iter().enumerate() {
            if p.probe >= probe_len {
                return Err(Error::PairOutOfRange { row, side: "probe", index: p.probe, len: probe_len });
            }
            if p.gallery >= gallery_len {
                return Err(Error::PairOutOfRange { row, side: "gallery", index: p.gallery, len: gallery_len });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["probe_index", "gallery_index", "is_genuine"])?;
        for p in &self.entries {
            w.write_record([
                p.probe.to_string(),
                p.gallery.to_string(),
                if p.genuine { "1" } else { "0" }.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = crate::io::read_file(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["probe_index", "gallery_index", "is_genuine"] {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("unexpected header {:?}", headers),
            });
        }
        let mut entries = Vec::new();
        for (row, rec) in r.deserialize::<PairRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { path: path.display().to_string(), detail: e.to_string() })?;
            let genuine = parse_flag(&rec.is_genuine).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                detail: format!("row {row}: is_genuine must be 0/1/true/false, found {:?}", rec.is_genuine),
            })?;
            entries.push(Pair { probe: rec.probe_index, gallery: rec.gallery_index, genuine });
        }
        Ok(PairList { entries })
    }
}

pub(crate) fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}
