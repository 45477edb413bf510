use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use ida_core::dao::{calibrate_pairlist, CalibrationConfig, DensityEstimator, ScoreColumn, ScoreTable};
use ida_core::eval::{
    domain_groups, genuine_impostor_groups, histogram, mate_split, rank_k_identification, roc_curve, tar_at_far,
    write_tar_csv, CosineScorer, DaoScorer, EvalSummary, HistogramSpec, LabeledScores, RankAccuracy, SplitBy,
};
use ida_core::index::ClusterParams;
use ida_core::preset::Preset;
use ida_core::rng::stream;
use ida_core::ssr::{self, SsrModel, TargetSpace, TrainConfig};
use ida_core::sweep::{sweep as run_sweep, SweepInput, SweepParam, SWEEP_FAR};
use ida_core::{AnchorIndex, EmbeddingStore, Error, PairList, Result};

use super::manifest::{beside, Manifest};
use super::*;

fn load_store(m: &mut Manifest, path: &Path) -> Result<EmbeddingStore> {
    m.input(path)?;
    EmbeddingStore::load(path)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let mut m = Manifest::new("gen", a, Some(a.seed))?;
    let preset = match Preset::builtin(&a.preset) {
        Some(p) => p,
        None => {
            m.input(Path::new(&a.preset))?;
            Preset::resolve(&a.preset)?
        }
    };
    let data = preset.generate(a.seed)?;
    let distractors = preset.distractors(a.seed, preset.distractor_size)?;
    if data.genuine_shortfall > 0 || data.impostor_shortfall > 0 {
        eprintln!(
            "warning: pair list short by {} genuine and {} impostor pairs",
            data.genuine_shortfall, data.impostor_shortfall
        );
    }
    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    let stores = [
        ("train.idae", &data.train.store),
        ("probe.idae", &data.probe.store),
        ("anchor.idae", &data.anchors.store),
        ("distractor.idae", &distractors.store),
    ];
    for (name, store) in stores {
        let p = dir.join(name);
        m.guard(&p)?;
        store.save(&p)?;
        m.output(&p)?;
    }
    let pairs = dir.join("pairs.csv");
    m.guard(&pairs)?;
    data.pairs.save(&pairs)?;
    m.output(&pairs)?;

    let domains = dir.join("probe_domains.csv");
    m.guard(&domains)?;
    let mut w = csv::Writer::from_path(&domains)?;
    w.write_record(["index", "domain"])?;
    for (i, &d) in data.probe.domains.iter().enumerate() {
        w.write_record([i.to_string(), preset.domains[d as usize].name.clone()])?;
    }
    w.flush()?;
    drop(w);
    m.output(&domains)?;
    m.write(&dir.join("manifest.json"))
}

pub fn build_db(a: &BuildDbArgs) -> Result<()> {
    let mut m = Manifest::new("build-db", a, Some(a.seed))?;
    let store = load_store(&mut m, &a.anchor_db)?;
    if a.clusters == Some(0) {
        return Err(Error::InvalidParameter {
            name: "clusters",
            reason: "must be at least 1".into(),
        });
    }
    let index = AnchorIndex::build_accelerated(
        store,
        ClusterParams {
            n_clusters: a.clusters,
            seed: a.seed,
            ..ClusterParams::default()
        },
    )?;
    m.guard(&a.out)?;
    index.save_sidecar(&a.out)?;
    m.output(&a.out)?;
    m.write(&beside(&a.out))
}

/// Anchor index (from store plus optional sidecar) or SSR model, per the flags.
fn estimator(
    m: &mut Manifest,
    anchor_db: Option<&Path>,
    sidecar: Option<&Path>,
    exhaustive: bool,
    model: Option<&Path>,
) -> Result<Box<dyn DensityEstimator>> {
    if let Some(path) = model {
        m.input(path)?;
        return Ok(Box::new(SsrModel::load(path)?));
    }
    let anchors = load_store(m, anchor_db.expect("clap requires --anchor-db or --model"))?;
    Ok(Box::new(match sidecar {
        Some(s) => {
            m.input(s)?;
            AnchorIndex::with_sidecar(anchors, s)?
        }
        None => AnchorIndex::build(anchors, !exhaustive)?,
    }))
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let cfg = a.calibration.config()?;
    let mut m = Manifest::new("calibrate", a, None)?;
    let probes = load_store(&mut m, &a.probe_db)?;
    let gallery = match &a.gallery_db {
        Some(g) => load_store(&mut m, g)?,
        None => probes.clone(),
    };
    m.input(&a.pairs)?;
    let pairs = PairList::load(&a.pairs)?;
    let est = estimator(
        &mut m,
        a.anchor_db.as_deref(),
        a.index.as_deref(),
        a.exhaustive,
        a.model.as_deref(),
    )?;
    let table = calibrate_pairlist(&probes, &gallery, &pairs, est.as_ref(), &cfg)?;
    m.guard(&a.out)?;
    table.save(&a.out)?;
    m.output(&a.out)?;
    m.write(&beside(&a.out))
}

pub fn train_ssr(a: &TrainSsrArgs) -> Result<()> {
    let cfg = a.calibration.config()?;
    let tcfg = TrainConfig {
        hidden: a.hidden,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        steps: a.steps,
        momentum: a.momentum,
        seed: a.seed,
        target_space: match a.target_space {
            TargetArg::Linear => TargetSpace::Linear,
            TargetArg::Log => TargetSpace::Log,
        },
        ..TrainConfig::default()
    };
    tcfg.validate()?;
    let mut m = Manifest::new("train-ssr", a, Some(a.seed))?;
    let train = load_store(&mut m, &a.train_db)?;
    let anchors = load_store(&mut m, &a.anchor_db)?;
    let index = AnchorIndex::build(anchors, true)?;
    let trained = ssr::train(&train, &index, &cfg, &tcfg)?;
    m.guard(&a.out)?;
    trained.model.save(&a.out)?;
    m.output(&a.out)?;
    if let Some(log) = &a.loss_log {
        m.guard(log)?;
        let mut w = csv::Writer::from_path(log)?;
        w.write_record(["step", "loss"])?;
        for (i, l) in trained.losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        drop(w);
        m.output(log)?;
    }
    m.write(&beside(&a.out))
}

fn read_domains(path: &Path) -> Result<(Vec<u16>, Vec<String>)> {
    let parse = |detail: String| Error::Parse {
        path: path.display().to_string(),
        detail,
    };
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut tags = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let (Some(idx), Some(name)) = (rec.get(0), rec.get(1)) else {
            return Err(parse(format!("row {row}: expected index,domain")));
        };
        if idx.trim().parse::<usize>().ok() != Some(row) {
            return Err(parse(format!("row {row}: index {idx:?} out of sequence")));
        }
        let tag = match names.iter().position(|n| n == name) {
            Some(t) => t,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        tags.push(tag as u16);
    }
    Ok((tags, names))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.bins == 0 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: "must be at least 1".into(),
        });
    }
    if let Some(bad) = a.far.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::InvalidParameter {
            name: "far",
            reason: format!("targets must lie in (0, 1), got {bad}"),
        });
    }
    if let (Some(min), Some(max)) = (a.min, a.max) {
        if !(min < max) {
            return Err(Error::InvalidParameter {
                name: "min",
                reason: format!("must be below --max ({min} >= {max})"),
            });
        }
    }
    let mut m = Manifest::new("eval", a, None)?;
    m.input(&a.scores)?;
    let table = ScoreTable::load(&a.scores)?;
    let column = match a.column {
        ColumnArg::Cosine => ScoreColumn::Cosine,
        ColumnArg::Calibrated => ScoreColumn::Calibrated,
    };
    let scores = LabeledScores::from_table(&table, column);
    let tar = tar_at_far(&scores, &a.far)?;
    let roc = roc_curve(&scores)?;

    let all: Vec<f64> = scores.genuine.iter().chain(&scores.impostor).copied().collect();
    let range = |split_by| match (a.min, a.max) {
        (Some(min), Some(max)) => HistogramSpec {
            bin_count: a.bins,
            min,
            max,
            split_by,
        },
        _ => HistogramSpec::covering(&all, a.bins, split_by),
    };
    let gi = histogram(&genuine_impostor_groups(&table, column), range(SplitBy::GenuineImpostor))?;
    let hist = match a.split_by {
        SplitArg::GenuineImpostor => gi.clone(),
        SplitArg::Domain => {
            let path = a.domains.as_deref().expect("clap requires --domains");
            m.input(path)?;
            let (tags, names) = read_domains(path)?;
            histogram(&domain_groups(&table, column, &tags, &names)?, range(SplitBy::Domain))?
        }
    };
    if hist.clipped > 0 {
        eprintln!("warning: {} scores fall outside the histogram range", hist.clipped);
    }

    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    let tar_path = dir.join("tar_at_far.csv");
    m.guard(&tar_path)?;
    write_tar_csv(&tar, &tar_path)?;
    m.output(&tar_path)?;

    let roc_path = dir.join("roc.csv");
    m.guard(&roc_path)?;
    let mut w = csv::Writer::from_path(&roc_path)?;
    for p in &roc {
        w.serialize(p)?;
    }
    w.flush()?;
    drop(w);
    m.output(&roc_path)?;

    let hist_path = dir.join("histogram.csv");
    m.guard(&hist_path)?;
    hist.write_csv(&hist_path)?;
    m.output(&hist_path)?;

    let summary_path = dir.join("summary.json");
    m.guard(&summary_path)?;
    EvalSummary {
        column,
        tar_at_far: tar,
        overlap: gi.overlap,
        rank_k: None,
    }
    .write_json(&summary_path)?;
    m.output(&summary_path)?;
    m.write(&dir.join("manifest.json"))
}

#[derive(Serialize)]
struct RankReport {
    n_probes: usize,
    n_distractors: usize,
    rank_k: RankColumns,
}

#[derive(Serialize)]
struct RankColumns {
    cosine: Vec<RankAccuracy>,
    calibrated: Vec<RankAccuracy>,
}

pub fn identify(a: &IdentifyArgs) -> Result<()> {
    let cfg = a.calibration.config()?;
    if a.ranks.is_empty() || a.ranks.contains(&0) {
        return Err(Error::InvalidParameter {
            name: "ranks",
            reason: "ranks must be at least 1".into(),
        });
    }
    let mut m = Manifest::new("identify", a, Some(a.seed))?;
    let labeled = load_store(&mut m, &a.probe_db)?;
    let mut distractors = load_store(&mut m, &a.distractor_db)?;
    if let Some(n) = a.distractors {
        if n > distractors.len() {
            return Err(Error::InvalidParameter {
                name: "distractors",
                reason: format!("{n} requested but the store holds {}", distractors.len()),
            });
        }
        let mut order: Vec<usize> = (0..distractors.len()).collect();
        order.shuffle(&mut stream(a.seed, "identify-distractors"));
        let mut pick = order[..n].to_vec();
        pick.sort_unstable();
        distractors = distractors.select(&pick);
    }
    let est = estimator(&mut m, a.anchor_db.as_deref(), None, false, a.model.as_deref())?;
    let (probes, mates) = mate_split(&labeled)?;
    let cosine = rank_k_identification(&probes, &mates, &distractors, &CosineScorer, &a.ranks)?;
    let dao = DaoScorer {
        estimator: est.as_ref(),
        cfg,
    };
    let calibrated = rank_k_identification(&probes, &mates, &distractors, &dao, &a.ranks)?;
    let report = RankReport {
        n_probes: probes.len(),
        n_distractors: distractors.len(),
        rank_k: RankColumns { cosine, calibrated },
    };
    m.guard(&a.out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&a.out, text)?;
    m.output(&a.out)?;
    m.write(&beside(&a.out))
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let base: CalibrationConfig = a.calibration.config()?;
    let values = a
        .values
        .iter()
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| Error::InvalidParameter {
                name: "values",
                reason: format!("cannot parse {v:?} as a number"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if a.bins == 0 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: "must be at least 1".into(),
        });
    }
    let mut m = Manifest::new("sweep", a, Some(a.seed))?;
    let probes = load_store(&mut m, &a.probe_db)?;
    let gallery = match &a.gallery_db {
        Some(g) => load_store(&mut m, g)?,
        None => probes.clone(),
    };
    m.input(&a.pairs)?;
    let pairs = PairList::load(&a.pairs)?;
    let anchors = load_store(&mut m, &a.anchor_db)?;
    let param = match a.param {
        ParamArg::K => SweepParam::K,
        ParamArg::Tau => SweepParam::Tau,
        ParamArg::AnchorSize => SweepParam::AnchorSize,
    };
    let input = SweepInput {
        probes: &probes,
        gallery: &gallery,
        pairs: &pairs,
        anchors: &anchors,
    };
    let points = run_sweep(&input, &base, param, &values, a.seed, a.bins)?;

    m.guard(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["value".to_string(), format!("tar_at_far_{SWEEP_FAR:e}"), "overlap".to_string()])?;
    for (raw, p) in a.values.iter().zip(&points) {
        w.write_record([raw.trim().to_string(), p.tar_at_far.to_string(), p.overlap.to_string()])?;
    }
    w.flush()?;
    drop(w);
    m.output(&a.out)?;
    m.write(&beside(&a.out))
}
