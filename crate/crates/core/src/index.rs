//! Anchor embedding index answering top-k maximum-cosine queries.
//!
//! Two search paths share one result contract:
//!
//! * an exhaustive scan over every anchor, and
//! * a pruned scan over a spherical k-means partition. Clusters are visited in order of
//!   centroid similarity; the closest tenth are always scanned, and any further cluster
//!   is skipped only when the angular bound `cos(max(0, θ(q,c) − r_c))` proves that none
//!   of its members can reach the current k-th best similarity. Skipping is therefore
//!   lossless and both paths return identical results, ties included.
//!
//! Ties are broken by lower anchor row. Anchor labels are never consulted.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::embedding::{dot, similarity, Embedding};
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;

pub const DEFAULT_EXCLUDE_THRESHOLD: f64 = 0.99999;
pub const INDEX_MAGIC: [u8; 4] = *b"IDAX";
pub const INDEX_VERSION: u32 = 1;

/// Spherical k-means iterations used when building the partition.
pub const KMEANS_ITERS: usize = 20;
/// Fraction of clusters always scanned before bound-based pruning starts.
pub const PROBE_FRACTION: f64 = 0.1;
/// The pruned path falls back to a full scan when the probed clusters hold fewer
/// than this many candidates per requested neighbor.
pub const MIN_POOL_PER_K: usize = 4;
// Slack on the pruning bound. Stored rows are f32-rounded, so their norms deviate from
// one by ~1e-7 and inner products can overshoot the exact spherical bound by that much.
const BOUND_SLACK: f64 = 1e-6;

/// Descending-sorted similarities between a query and its nearest anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    sims: Vec<f64>,
}

impl SupportSet {
    pub fn new(sims: Vec<f64>) -> Result<Self> {
        if sims.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::invalid("support set", "similarities must lie in [-1, 1]"));
        }
        if sims.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("support set", "similarities must be sorted descending"));
        }
        Ok(SupportSet { sims })
    }

    pub fn sims(&self) -> &[f64] {
        &self.sims
    }

    pub fn len(&self) -> usize {
        self.sims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sims.is_empty()
    }

    pub fn min(&self) -> Option<f64> {
        self.sims.last().copied()
    }
}

/// One search hit: an anchor row and its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sim: f64,
}

impl Eq for Neighbor {}

// Ordered so that "greater" means "worse": lower similarity, then higher row index.
// A max-heap of these keeps the current worst hit on top.
impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .partial_cmp(&self.sim)
            .expect("similarities are finite")
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(n);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if n < *worst {
                *worst = n;
            }
        }
    }

    fn kth_sim(&self) -> Option<f64> {
        (self.heap.len() == self.k).then(|| self.heap.peek().unwrap().sim)
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

/// Parameters of the k-means partition behind the pruned path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// `None` means `ceil(sqrt(count))`.
    pub n_clusters: Option<usize>,
    pub iters: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            n_clusters: None,
            iters: KMEANS_ITERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Partition {
    /// Centroids as stored (f32-representable), row-major.
    centroids: Vec<f64>,
    /// Unit-normalized copies used for ordering and bounds.
    unit_centroids: Vec<f64>,
    assignment: Vec<u32>,
    /// Member rows per cluster.
    members: Vec<Vec<u32>>,
    /// Largest angle between a cluster's unit centroid and any of its members.
    radius: Vec<f64>,
}

impl Partition {
    fn n_clusters(&self) -> usize {
        self.members.len()
    }

    fn from_parts(store: &EmbeddingStore, centroids: Vec<f64>, assignment: Vec<u32>) -> Result<Self> {
        let dim = store.dim();
        let n = centroids.len() / dim;
        let mut unit_centroids = Vec::with_capacity(centroids.len());
        for c in centroids.chunks_exact(dim) {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::HeaderMismatch {
                    what: "anchor index",
                    detail: "centroid with zero or non-finite norm".into(),
                });
            }
            unit_centroids.extend(c.iter().map(|v| v / norm));
        }
        let mut members = vec![Vec::new(); n];
        let mut radius = vec![0.0f64; n];
        for (row, &a) in assignment.iter().enumerate() {
            let a = a as usize;
            if a >= n {
                return Err(Error::HeaderMismatch {
                    what: "anchor index",
                    detail: format!("row {row} assigned to cluster {a} of {n}"),
                });
            }
            members[a].push(row as u32);
            let c = &unit_centroids[a * dim..(a + 1) * dim];
            let angle = similarity(c, store.row(row)).acos();
            radius[a] = radius[a].max(angle);
        }
        Ok(Partition {
            centroids,
            unit_centroids,
            assignment,
            members,
            radius,
        })
    }
}

/// Immutable anchor set plus optional partition for pruned search.
#[derive(Debug, Clone)]
pub struct AnchorIndex {
    store: EmbeddingStore,
    partition: Option<Partition>,
}

impl AnchorIndex {
    /// Build an index over `store`; `accel` adds the k-means partition.
    pub fn build(store: EmbeddingStore, accel: bool) -> Result<Self> {
        if accel {
            Self::build_accelerated(store, ClusterParams::default())
        } else {
            Ok(AnchorIndex {
                store,
                partition: None,
            })
        }
    }

    pub fn build_accelerated(store: EmbeddingStore, params: ClusterParams) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let n_clusters = params
            .n_clusters
            .unwrap_or_else(|| (store.len() as f64).sqrt().ceil() as usize)
            .clamp(1, store.len());
        let (centroids, assignment) = spherical_kmeans(&store, n_clusters, params.iters, params.seed);
        let partition = Partition::from_parts(&store, centroids, assignment)?;
        Ok(AnchorIndex {
            store,
            partition: Some(partition),
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn is_accelerated(&self) -> bool {
        self.partition.is_some()
    }

    pub fn n_clusters(&self) -> Option<usize> {
        self.partition.as_ref().map(Partition::n_clusters)
    }

    /// The top-`k` anchors with similarity strictly below `exclude_threshold`, best first.
    pub fn search(&self, query: &[f64], k: usize, exclude_threshold: f64) -> Result<Vec<Neighbor>> {
        self.check_query(query, k)?;
        Ok(match &self.partition {
            Some(p) => self.pruned_scan(p, query, k, exclude_threshold),
            None => self.exhaustive_scan(query, k, exclude_threshold),
        })
    }

    /// Same contract as [`search`](Self::search) but always scans every anchor.
    pub fn search_exhaustive(&self, query: &[f64], k: usize, exclude_threshold: f64) -> Result<Vec<Neighbor>> {
        self.check_query(query, k)?;
        Ok(self.exhaustive_scan(query, k, exclude_threshold))
    }

    pub fn support_set(&self, query: &Embedding, k: usize, exclude_threshold: f64) -> Result<SupportSet> {
        self.support_set_slice(query.as_slice(), k, exclude_threshold)
    }

    pub(crate) fn support_set_slice(&self, query: &[f64], k: usize, exclude_threshold: f64) -> Result<SupportSet> {
        let hits = self.search(query, k, exclude_threshold)?;
        Ok(SupportSet {
            sims: hits.into_iter().map(|n| n.sim).collect(),
        })
    }

    /// Support sets for many queries, in input order. Errors carry the query position.
    pub fn batch_support_sets(
        &self,
        queries: &[Embedding],
        k: usize,
        exclude_threshold: f64,
    ) -> Result<Vec<SupportSet>> {
        let slices: Vec<&[f64]> = queries.iter().map(Embedding::as_slice).collect();
        self.batch_support_sets_slices(&slices, k, exclude_threshold)
    }

    pub(crate) fn batch_support_sets_slices(
        &self,
        queries: &[&[f64]],
        k: usize,
        exclude_threshold: f64,
    ) -> Result<Vec<SupportSet>> {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                self.support_set_slice(q, k, exclude_threshold)
                    .map_err(|e| Error::Query {
                        index: i,
                        source: Box::new(e),
                    })
            })
            .collect()
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        Ok(())
    }

    fn exhaustive_scan(&self, query: &[f64], k: usize, exclude_threshold: f64) -> Vec<Neighbor> {
        let mut top = TopK::new(k);
        for (index, row) in self.store.rows().enumerate() {
            let sim = similarity(query, row);
            if sim < exclude_threshold {
                top.offer(Neighbor { index, sim });
            }
        }
        top.into_sorted()
    }

    fn pruned_scan(&self, p: &Partition, query: &[f64], k: usize, exclude_threshold: f64) -> Vec<Neighbor> {
        let dim = self.dim();
        let n = p.n_clusters();
        let mut order: Vec<(usize, f64)> = p
            .unit_centroids
            .chunks_exact(dim)
            .map(|c| dot(query, c).clamp(-1.0, 1.0))
            .enumerate()
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let n_probe = ((n as f64) * PROBE_FRACTION).ceil().max(1.0) as usize;
        let pool: usize = order[..n_probe].iter().map(|&(c, _)| p.members[c].len()).sum();
        if pool < MIN_POOL_PER_K * k {
            return self.exhaustive_scan(query, k, exclude_threshold);
        }

        let mut top = TopK::new(k);
        let scan = |c: usize, top: &mut TopK| {
            for &row in &p.members[c] {
                let index = row as usize;
                let sim = similarity(query, self.store.row(index));
                if sim < exclude_threshold {
                    top.offer(Neighbor { index, sim });
                }
            }
        };
        for &(c, _) in &order[..n_probe] {
            scan(c, &mut top);
        }
        for &(c, centroid_sim) in &order[n_probe..] {
            if let Some(kth) = top.kth_sim() {
                let gap = (centroid_sim.acos() - p.radius[c]).max(0.0);
                if gap.cos() + BOUND_SLACK < kth {
                    continue;
                }
            }
            scan(c, &mut top);
        }
        top.into_sorted()
    }

    /// Write the partition sidecar (`IDAX`). The anchor rows live in their own store file.
    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = self
            .partition
            .as_ref()
            .ok_or_else(|| Error::invalid("index", "no partition to save; build with acceleration"))?;
        std::fs::write(path, sidecar_bytes(p))?;
        Ok(())
    }

    /// Re-attach a saved partition to the store it was built from.
    pub fn with_sidecar(store: EmbeddingStore, path: impl AsRef<Path>) -> Result<Self> {
        let bytes = crate::io::read_file(path.as_ref())?;
        let partition = parse_sidecar(&store, &bytes)?;
        Ok(AnchorIndex {
            store,
            partition: Some(partition),
        })
    }
}

fn sidecar_bytes(p: &Partition) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + p.centroids.len() * 4 + p.assignment.len() * 4);
    out.extend_from_slice(&INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.n_clusters() as u32).to_le_bytes());
    for &c in &p.centroids {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    for &a in &p.assignment {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

fn parse_sidecar(store: &EmbeddingStore, bytes: &[u8]) -> Result<Partition> {
    const WHAT: &str = "anchor index";
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            what: WHAT,
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != INDEX_MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            expected: INDEX_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion { what: WHAT, version });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::HeaderMismatch {
            what: WHAT,
            detail: "zero clusters".into(),
        });
    }
    let dim = store.dim();
    let expected = 12 + n * dim * 4 + store.len() * 4;
    if bytes.len() != expected {
        let err_detail = format!(
            "sidecar is {} bytes; {n} clusters over a {}x{dim} store imply {expected}",
            bytes.len(),
            store.len()
        );
        return Err(if bytes.len() < expected {
            Error::Truncated {
                what: WHAT,
                expected,
                found: bytes.len(),
            }
        } else {
            Error::HeaderMismatch {
                what: WHAT,
                detail: err_detail,
            }
        });
    }
    let centroid_end = 12 + n * dim * 4;
    let centroids = bytes[12..centroid_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let assignment = bytes[centroid_end..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Partition::from_parts(store, centroids, assignment)
}

/// Spherical k-means: assign by maximum inner product, re-center on the normalized
/// member mean, keep the previous centroid for clusters that empty out.
/// Returned centroids are rounded to f32 so they persist exactly.
fn spherical_kmeans(store: &EmbeddingStore, n_clusters: usize, iters: usize, seed: u64) -> (Vec<f64>, Vec<u32>) {
    let dim = store.dim();
    let mut rng = crate::rng::stream(seed, "kmeans-init");
    let mut init: Vec<usize> = sample(&mut rng, store.len(), n_clusters).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<f64> = init.iter().flat_map(|&i| store.row(i).iter().copied()).collect();

    let assign = |centroids: &[f64]| -> Vec<u32> {
        store
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
                    let s = dot(row, centroid);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                best.0 as u32
            })
            .collect()
    };

    for _ in 0..iters {
        let assignment = assign(&centroids);
        let mut sums = vec![0.0f64; n_clusters * dim];
        for (row, &a) in store.rows().zip(&assignment) {
            let s = &mut sums[a as usize * dim..(a as usize + 1) * dim];
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for (c, sum) in sums.chunks_exact(dim).enumerate() {
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (dst, v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(sum) {
                    *dst = v / norm;
                }
            }
        }
    }
    for v in centroids.iter_mut() {
        *v = *v as f32 as f64;
    }
    let assignment = assign(&centroids);
    (centroids, assignment)
}
