//! Learned density estimation: a two-layer regression network mapping an embedding to
//! its density term, so inference needs no anchor search.
//!
//! `out = w2 . relu(W1^T f + b1) + b2`. With [`TargetSpace::Log`] the network regresses
//! `ln F` and the density is `exp(out)`; either way predictions are floored at
//! [`DENSITY_FLOOR`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::dao::{combine, CalibratedScore, CalibrationConfig, DensityEstimator};
use crate::embedding::{cosine_slices, Embedding};
use crate::error::{Error, Result};
use crate::index::AnchorIndex;
use crate::rng::stream;
use crate::store::EmbeddingStore;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DENSITY_FLOOR: f64 = 1e-9;
pub const MODEL_MAGIC: [u8; 4] = *b"IDAS";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSpace {
    Linear,
    Log,
}

impl TargetSpace {
    fn flag(self) -> u8 {
        match self {
            TargetSpace::Linear => 0,
            TargetSpace::Log => 1,
        }
    }

    /// Density to regression target.
    pub fn encode(self, density: f64) -> f64 {
        match self {
            TargetSpace::Linear => density,
            TargetSpace::Log => density.ln(),
        }
    }

    /// Network output to density, floored.
    pub fn decode(self, out: f64) -> f64 {
        let d = match self {
            TargetSpace::Linear => out,
            TargetSpace::Log => out.exp(),
        };
        // NaN-safe: a NaN output also lands on the floor.
        if d > DENSITY_FLOOR {
            d
        } else {
            DENSITY_FLOOR
        }
    }
}

/// Network parameters, or a gradient of the same shape. `w1` is `d x h` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SsrParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl SsrParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        SsrParams {
            w1: vec![0.0; d * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All values in declared order: W1, b1, W2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    fn for_each_mut(&mut self, other: &SsrParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, &b) in self.w1.iter_mut().zip(&other.w1) {
            f(a, b);
        }
        for (a, &b) in self.b1.iter_mut().zip(&other.b1) {
            f(a, b);
        }
        for (a, &b) in self.w2.iter_mut().zip(&other.w2) {
            f(a, b);
        }
        f(&mut self.b2, other.b2);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsrModel {
    d: usize,
    h: usize,
    pub target_space: TargetSpace,
    pub params: SsrParams,
}

/// One training example: an embedding and its target in the model's target space.
pub type Sample<'a> = (&'a [f64], f64);

impl SsrModel {
    pub fn zeros(d: usize, h: usize, target_space: TargetSpace) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::invalid("hidden", "model dimensions must be positive"));
        }
        Ok(SsrModel {
            d,
            h,
            target_space,
            params: SsrParams::zeros(d, h),
        })
    }

    /// Uniform in `+-1/sqrt(fan_in)` per layer, drawn from the `ssr-init` stream.
    pub fn init(d: usize, h: usize, target_space: TargetSpace, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(d, h, target_space)?;
        let mut rng = stream(seed, "ssr-init");
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (h as f64).sqrt();
        for w in m.params.w1.iter_mut().chain(m.params.b1.iter_mut()) {
            *w = rng.random_range(-a1..a1);
        }
        for w in m.params.w2.iter_mut() {
            *w = rng.random_range(-a2..a2);
        }
        m.params.b2 = rng.random_range(-a2..a2);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: f.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations for `f`, written into `z`.
    fn hidden_pre(&self, f: &[f64], z: &mut [f64]) {
        let h = self.h;
        z.copy_from_slice(&self.params.b1);
        for (i, &x) in f.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.params.w1[i * h..(i + 1) * h];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
    }

    fn output(&self, z: &[f64]) -> f64 {
        let mut acc = self.params.b2;
        for (&zj, &w) in z.iter().zip(&self.params.w2) {
            if zj > 0.0 {
                acc += zj * w;
            }
        }
        acc
    }

    /// Raw network output, in the model's target space.
    pub fn forward(&self, f: &[f64]) -> Result<f64> {
        self.check_dim(f)?;
        let mut z = vec![0.0; self.h];
        self.hidden_pre(f, &mut z);
        Ok(self.output(&z))
    }

    /// Predicted density term, never below [`DENSITY_FLOOR`].
    pub fn predict_density(&self, f: &[f64]) -> Result<f64> {
        Ok(self.target_space.decode(self.forward(f)?))
    }

    fn check_batch(&self, batch: &[Sample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batch.iter().try_for_each(|(f, _)| self.check_dim(f))
    }

    /// Mean squared error over the batch.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut z = vec![0.0; self.h];
        let mut total = 0.0;
        for &(f, y) in batch {
            self.hidden_pre(f, &mut z);
            let e = self.output(&z) - y;
            total += e * e;
        }
        Ok(total / batch.len() as f64)
    }

    /// Analytic gradient of [`SsrModel::loss`] with respect to every parameter.
    pub fn grad(&self, batch: &[Sample]) -> Result<SsrParams> {
        self.check_batch(batch)?;
        let mut g = SsrParams::zeros(self.d, self.h);
        self.accumulate_grad(batch, &mut g);
        Ok(g)
    }

    /// Gradient into `g` (overwritten); returns the batch loss.
    fn accumulate_grad(&self, batch: &[Sample], g: &mut SsrParams) -> f64 {
        let h = self.h;
        g.w1.fill(0.0);
        g.b1.fill(0.0);
        g.w2.fill(0.0);
        g.b2 = 0.0;
        let scale = 2.0 / batch.len() as f64;
        let mut z = vec![0.0; h];
        let mut dz = vec![0.0; h];
        let mut total = 0.0;
        for &(f, y) in batch {
            self.hidden_pre(f, &mut z);
            let e = self.output(&z) - y;
            total += e * e;
            let go = scale * e;
            g.b2 += go;
            for j in 0..h {
                if z[j] > 0.0 {
                    g.w2[j] += go * z[j];
                    dz[j] = go * self.params.w2[j];
                } else {
                    dz[j] = 0.0;
                }
            }
            for (b, &d) in g.b1.iter_mut().zip(&dz) {
                *b += d;
            }
            for (i, &x) in f.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut g.w1[i * h..(i + 1) * h];
                for (w, &d) in row.iter_mut().zip(&dz) {
                    *w += x * d;
                }
            }
        }
        total / batch.len() as f64
    }

    /// Round every parameter to `f32`, the precision of the model file.
    pub fn quantize(&mut self) {
        let p = &mut self.params;
        for v in p.w1.iter_mut().chain(p.b1.iter_mut()).chain(p.w2.iter_mut()) {
            *v = *v as f32 as f64;
        }
        p.b2 = p.b2 as f32 as f64;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.params.len() * 4);
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.h as u32).to_le_bytes());
        out.push(self.target_space.flag());
        for v in self.params.to_flat() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "ssr model";
        let truncated = |expected| Error::Truncated {
            what: WHAT,
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(HEADER_LEN));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                what: WHAT,
                expected: MODEL_MAGIC,
                found: magic,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion { what: WHAT, version });
        }
        let (d, h) = (u32_at(8) as usize, u32_at(12) as usize);
        let target_space = match bytes[16] {
            0 => TargetSpace::Linear,
            1 => TargetSpace::Log,
            other => {
                return Err(Error::HeaderMismatch {
                    what: WHAT,
                    detail: format!("target space flag must be 0 or 1, found {other}"),
                })
            }
        };
        let mut m = SsrModel::zeros(d, h, target_space).map_err(|_| Error::HeaderMismatch {
            what: WHAT,
            detail: "d and h must be positive".into(),
        })?;
        let expected = HEADER_LEN + m.params.len() * 4;
        if bytes.len() < expected {
            return Err(truncated(expected));
        }
        if bytes.len() > expected {
            return Err(Error::HeaderMismatch {
                what: WHAT,
                detail: format!("{} trailing bytes after parameters for d={d}, h={h}", bytes.len() - expected),
            });
        }
        let flat: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        m.params.set_flat(&flat);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&crate::io::read_file(path.as_ref())?)
    }
}

impl DensityEstimator for SsrModel {
    fn dim(&self) -> usize {
        self.d
    }

    /// The model was trained for one `(k, tau)`; `cfg` is not consulted.
    fn density(&self, e: &[f64], _cfg: &CalibrationConfig) -> Result<f64> {
        self.predict_density(e)
    }
}

/// Calibrated score with both densities predicted by `model`.
pub fn dao_score_learned(
    f1: &Embedding,
    f2: &Embedding,
    model: &SsrModel,
    cfg: &CalibrationConfig,
) -> Result<CalibratedScore> {
    let cos = cosine_slices(f1.as_slice(), f2.as_slice())?;
    let d1 = model.predict_density(f1.as_slice())?;
    let d2 = model.predict_density(f2.as_slice())?;
    Ok(combine(cos, d1, d2, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Fractions of `steps` at which the learning rate is multiplied by `decay_factor`.
    pub decay_at: Vec<f64>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub momentum: f64,
    pub seed: u64,
    pub target_space: TargetSpace,
    /// When non-zero, the full training-set loss is recorded every this many steps.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            learning_rate: 0.02,
            decay_at: vec![0.5, 2.0 / 3.0, 5.0 / 6.0],
            decay_factor: 0.1,
            batch_size: 100,
            steps: 6000,
            momentum: 0.9,
            seed: 0,
            target_space: TargetSpace::Log,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("lr", self.learning_rate)?;
        positive("decay-factor", self.decay_factor)?;
        if self.hidden == 0 {
            return Err(Error::invalid("hidden", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch-size", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if self.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("decay-at", "fractions must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let decays = self
            .decay_at
            .iter()
            .filter(|&&f| step as f64 >= f * self.steps as f64)
            .count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: SsrModel,
    /// Minibatch loss at every step, measured before that step's update.
    pub losses: Vec<f64>,
    /// Full training-set loss after every `checkpoint_every` steps.
    pub checkpoints: Vec<f64>,
}

/// Exact densities for every row of `dataset`, from the anchor index.
pub fn density_targets(dataset: &EmbeddingStore, index: &AnchorIndex, cfg: &CalibrationConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: dataset.dim(),
        });
    }
    dataset
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| DensityEstimator::density(index, r, cfg))
        .collect()
}

/// Fit a model to the anchor-search densities of `dataset`.
pub fn train(
    dataset: &EmbeddingStore,
    index: &AnchorIndex,
    cfg: &CalibrationConfig,
    tcfg: &TrainConfig,
) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let densities = density_targets(dataset, index, cfg)?;
    train_on_densities(dataset, &densities, tcfg)
}

/// Fit a model to given densities, one per row. Single-threaded and deterministic.
pub fn train_on_densities(dataset: &EmbeddingStore, densities: &[f64], tcfg: &TrainConfig) -> Result<Trained> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if densities.len() != dataset.len() {
        return Err(Error::invalid(
            "targets",
            format!("{} targets for {} embeddings", densities.len(), dataset.len()),
        ));
    }
    if densities.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::invalid("targets", "densities must be positive and finite"));
    }
    let targets: Vec<f64> = densities.iter().map(|&d| tcfg.target_space.encode(d)).collect();
    let mut model = SsrModel::init(dataset.dim(), tcfg.hidden, tcfg.target_space, tcfg.seed)?;
    // Start the output at the target mean so early steps shape the function, not the offset.
    model.params.b2 = targets.iter().sum::<f64>() / targets.len() as f64;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stream(tcfg.seed, "ssr-batches");
    let mut cursor = order.len();
    let mut grad = SsrParams::zeros(model.d, model.h);
    let mut velocity = SsrParams::zeros(model.d, model.h);
    let mut losses = Vec::with_capacity(tcfg.steps);
    let mut batch: Vec<Sample> = Vec::with_capacity(tcfg.batch_size);
    let mut checkpoints = Vec::new();
    let full: Vec<Sample> = if tcfg.checkpoint_every > 0 {
        (0..dataset.len()).map(|i| (dataset.row(i), targets[i])).collect()
    } else {
        Vec::new()
    };
    for step in 0..tcfg.steps {
        batch.clear();
        while batch.len() < tcfg.batch_size.min(dataset.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            batch.push((dataset.row(i), targets[i]));
            cursor += 1;
        }
        losses.push(model.accumulate_grad(&batch, &mut grad));
        let (lr, mu) = (tcfg.lr_at(step), tcfg.momentum);
        velocity.for_each_mut(&grad, |v, g| *v = mu * *v + g);
        model.params.for_each_mut(&velocity, |p, v| *p -= lr * v);
        if tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 {
            checkpoints.push(model.loss(&full)?);
        }
    }
    model.quantize();
    Ok(Trained {
        model,
        losses,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalize(v).unwrap().into_vec()
    }

    #[test]
    fn constant_model() {
        let mut m = SsrModel::zeros(4, 3, TargetSpace::Linear).unwrap();
        m.params.b2 = 0.7;
        assert_eq!(m.forward(&unit(&[1.0, 2.0, 3.0, 4.0])).unwrap(), 0.7);
        assert!(matches!(m.forward(&[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn forward_matches_scalar_reference() {
        // Reference evaluated independently in Python with the same literals.
        let mut m = SsrModel::zeros(4, 3, TargetSpace::Linear).unwrap();
        m.params.w1 = vec![0.5, -0.2, 0.1, 0.3, 0.8, -0.4, -0.6, 0.1, 0.9, 0.2, -0.3, 0.7];
        m.params.b1 = vec![0.05, -0.1, 0.0];
        m.params.w2 = vec![1.5, -0.5, 2.0];
        m.params.b2 = 0.25;
        let x = [0.5, -0.5, 0.5, 0.5];
        assert!((m.forward(&x).unwrap() - 2.35).abs() < 1e-14);
    }

    #[test]
    fn loss_examples() {
        let m = SsrModel::zeros(2, 2, TargetSpace::Linear).unwrap();
        let a = [0.6, 0.8];
        let b = [1.0, 0.0];
        assert_eq!(m.loss(&[(&a, 3.0), (&b, 3.0)]).unwrap(), 9.0);
        let mut c = m.clone();
        c.params.b2 = 1.0;
        // errors 1 - 2 and 1 - 4
        assert_eq!(c.loss(&[(&a, 2.0), (&b, 4.0)]).unwrap(), 5.0);
        assert_eq!(c.loss(&[(&a, 1.0)]).unwrap(), 0.0);
        assert!(matches!(c.loss(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(c.grad(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn gradient_vanishes_at_interpolation() {
        let m = SsrModel::init(5, 4, TargetSpace::Linear, 3).unwrap();
        let x = unit(&[1.0, -2.0, 0.5, 0.0, 3.0]);
        let y = m.forward(&x).unwrap();
        let g = m.grad(&[(&x, y)]).unwrap();
        assert!(g.to_flat().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn zero_inputs_give_zero_w1_gradient() {
        let m = SsrModel::init(4, 6, TargetSpace::Linear, 9).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0];
        let g = m.grad(&[(&x, 5.0)]).unwrap();
        for i in [0, 2, 3] {
            assert!(g.w1[i * 6..(i + 1) * 6].iter().all(|&v| v == 0.0));
        }
        assert_eq!(&g.w1[6..12], &g.b1[..]);
    }

    #[test]
    fn single_point_converges() {
        let x = unit(&[0.3, -0.1, 0.7, 0.2]);
        let store = EmbeddingStore::from_embeddings(4, &[normalize(&x).unwrap()], None).unwrap();
        let tcfg = TrainConfig {
            hidden: 8,
            steps: 500,
            target_space: TargetSpace::Linear,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let t = train_on_densities(&store, &[0.123], &tcfg).unwrap();
        assert!((t.model.forward(store.row(0)).unwrap() - 0.123).abs() < 1e-4);
    }

    #[test]
    fn lr_schedule() {
        let t = TrainConfig {
            steps: 600,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        assert_eq!(t.lr_at(0), 1.0);
        assert_eq!(t.lr_at(299), 1.0);
        assert!((t.lr_at(300) - 0.1).abs() < 1e-15);
        assert!((t.lr_at(400) - 0.01).abs() < 1e-15);
        assert!((t.lr_at(599) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn floor_applies() {
        let mut m = SsrModel::zeros(2, 2, TargetSpace::Linear).unwrap();
        m.params.b2 = -3.0;
        assert_eq!(m.predict_density(&[1.0, 0.0]).unwrap(), DENSITY_FLOOR);
        m.target_space = TargetSpace::Log;
        m.params.b2 = -1000.0;
        assert_eq!(m.predict_density(&[1.0, 0.0]).unwrap(), DENSITY_FLOOR);
    }

    #[test]
    fn learned_score_constant_model() {
        let mut m = SsrModel::zeros(2, 2, TargetSpace::Linear).unwrap();
        m.params.b2 = 0.2;
        let cfg = CalibrationConfig {
            score_mode: crate::dao::ScoreMode::Raw,
            ..CalibrationConfig::default()
        };
        let a = normalize(&[1.0, 0.0]).unwrap();
        let b = normalize(&[0.6, 0.8]).unwrap();
        let s = dao_score_learned(&a, &b, &m, &cfg).unwrap();
        assert!((s.value - 0.6f64.exp() * 0.4).abs() < 1e-15);
        assert_eq!(s.value, dao_score_learned(&b, &a, &m, &cfg).unwrap().value);
    }

    proptest::proptest! {
        #[test]
        fn learned_score_commutes(seed in 0u64..1000, a in proptest::collection::vec(-1.0f64..1.0, 6),
                                  b in proptest::collection::vec(-1.0f64..1.0, 6), tau in 0.1f64..8.0) {
            proptest::prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let m = SsrModel::init(6, 5, TargetSpace::Log, seed).unwrap();
            let (a, b) = (normalize(&a).unwrap(), normalize(&b).unwrap());
            for mode in [crate::dao::ScoreMode::Raw, crate::dao::ScoreMode::Log] {
                let cfg = CalibrationConfig { tau, score_mode: mode, ..CalibrationConfig::default() };
                let ab = dao_score_learned(&a, &b, &m, &cfg).unwrap().value;
                let ba = dao_score_learned(&b, &a, &m, &cfg).unwrap().value;
                proptest::prop_assert_eq!(ab.to_bits(), ba.to_bits());
            }
        }
    }

    #[test]
    fn bytes_round_trip_and_errors() {
        let mut m = SsrModel::init(6, 4, TargetSpace::Log, 1).unwrap();
        m.quantize();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + (6 * 4 + 4 + 4 + 1) * 4);
        assert_eq!(SsrModel::from_bytes(&bytes).unwrap(), m);
        assert!(matches!(SsrModel::from_bytes(&bytes[..20]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SsrModel::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(SsrModel::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
        let mut bad = bytes.clone();
        bad[16] = 2;
        assert!(matches!(SsrModel::from_bytes(&bad), Err(Error::HeaderMismatch { .. })));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(SsrModel::from_bytes(&bad), Err(Error::HeaderMismatch { .. })));
    }
}
