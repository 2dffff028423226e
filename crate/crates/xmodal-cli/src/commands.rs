//! Subcommand implementations. Each takes the resolved config and the run
//! directory, writes its artifacts under the run directory, and prints a
//! short human-readable summary to stdout.

use std::path::{Path, PathBuf};

use xmodal_core::analyzer;
use xmodal_core::dataio::synthetic::{generate_corpus, materialize, CorpusSpec};
use xmodal_core::dataio::{load_manifest, write_manifest, ManifestEntry, Split, VideoSample};
use xmodal_core::error::{Error, Result};
use xmodal_core::evaluator::{
    self, build_protocol_splits, EvalReport, ProtocolKind, ProtocolSpec, LOO_HOLDOUTS,
};
use xmodal_core::model::TwoBranchModel;
use xmodal_core::selftest::run_selftest;
use xmodal_core::teachers::{cache_labels, CachedTeacher, MockTeacher, Teacher};
use xmodal_core::trainer::{TrainData, Trainer};

use crate::config::{CheckpointChoice, CliConfig};

fn data_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("data")
}

fn manifest_path(run_dir: &Path) -> PathBuf {
    data_dir(run_dir).join("manifest.tsv")
}

fn cross_manifest_path(run_dir: &Path) -> PathBuf {
    data_dir(run_dir).join("cross_manifest.tsv")
}

fn labels_dir(run_dir: &Path) -> PathBuf {
    data_dir(run_dir).join("labels")
}

/// Generate the synthetic corpora and the cached teacher labels.
pub fn preprocess(cfg: &CliConfig, run_dir: &Path) -> Result<()> {
    let data = data_dir(run_dir);
    std::fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;

    let loo = CorpusSpec::loo(
        cfg.corpus.n_real,
        cfg.corpus.n_per_fake,
        cfg.corpus.frames,
        cfg.corpus.seed,
    );
    let entries = generate_corpus(&loo)?;
    write_manifest(&manifest_path(run_dir), &entries)?;

    let cross = CorpusSpec::cross_dataset(
        cfg.corpus.cross_n_real,
        cfg.corpus.cross_n_per_fake,
        cfg.corpus.frames,
        cfg.corpus.seed.wrapping_add(1),
    );
    let cross_entries = generate_corpus(&cross)?;
    write_manifest(&cross_manifest_path(run_dir), &cross_entries)?;

    // Teacher labels for every sample of both corpora, cached so later
    // stages never need the teacher itself.
    let labels = labels_dir(run_dir);
    std::fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;
    let teacher = MockTeacher::new(cfg.corpus.seed);
    let cache = CachedTeacher::new(&labels);
    let mut cached = 0usize;
    for batch in [&entries, &cross_entries] {
        for sample in materialize(batch, cfg.corpus.frames)? {
            let dists = teacher.distributions(&sample)?;
            cache_labels(&cache.path_for(&sample.entry.sample_id), &dists)?;
            cached += 1;
        }
    }

    let count = |e: &[ManifestEntry], s: Split| e.iter().filter(|x| x.split == s).count();
    println!(
        "preprocess: {} leave-one-out samples (train {}, val {}, test {}), {} cross-dataset samples, {} label caches",
        entries.len(),
        count(&entries, Split::Train),
        count(&entries, Split::Val),
        count(&entries, Split::Test),
        cross_entries.len(),
        cached
    );
    Ok(())
}

fn load_manifest_or_hint(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::validation(
            "manifest",
            format!("{} not found — run `preprocess` first", path.display()),
        ));
    }
    load_manifest(path)
}

fn materialize_split(
    entries: &[ManifestEntry],
    split: Option<Split>,
    frames: usize,
) -> Result<Vec<VideoSample>> {
    let chosen: Vec<ManifestEntry> = entries
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .cloned()
        .collect();
    materialize(&chosen, frames)
}

/// Train (or resume) on the preprocessed corpus.
pub fn train(cfg: &CliConfig, run_dir: &Path) -> Result<()> {
    let entries = load_manifest_or_hint(&manifest_path(run_dir))?;
    let labels = labels_dir(run_dir);
    if !labels.is_dir() {
        return Err(Error::validation(
            "teacher cache",
            format!("{} not found — run `preprocess` first", labels.display()),
        ));
    }
    let frames = cfg.corpus.frames;
    let train_samples = materialize_split(&entries, Some(Split::Train), frames)?;
    let val_samples = materialize_split(&entries, Some(Split::Val), frames)?;
    let data = TrainData {
        train: train_samples,
        val: val_samples,
    };

    let last_ckpt = run_dir.join("checkpoints/last.ckpt");
    let mut trainer = if last_ckpt.exists() {
        log::info!("resuming from {}", last_ckpt.display());
        Trainer::from_checkpoint(&cfg.train, &last_ckpt)?
    } else {
        Trainer::new(&cfg.train)?
    };
    if trainer.epochs_done() >= cfg.train.epochs {
        println!(
            "train: nothing to do — checkpoint already at epoch {} of {}",
            trainer.epochs_done(),
            cfg.train.epochs
        );
        return Ok(());
    }

    let teacher = CachedTeacher::new(&labels);
    let (state, _) = trainer.train(&data, &teacher, run_dir)?;
    println!(
        "train: {} epochs, {} steps, best_val_auc={}, checkpoint {}",
        state.epoch,
        state.step,
        if state.best_val_auc.is_nan() {
            "na".to_string()
        } else {
            format!("{:.4}", state.best_val_auc)
        },
        state.checkpoint.display()
    );
    Ok(())
}

fn resolve_checkpoint(run_dir: &Path, choice: CheckpointChoice) -> Result<PathBuf> {
    let best = run_dir.join("checkpoints/best.ckpt");
    let last = run_dir.join("checkpoints/last.ckpt");
    let missing = |what: &str| {
        Error::validation(
            "checkpoint",
            format!("{what} not found under {} — run `train` first", run_dir.display()),
        )
    };
    match choice {
        CheckpointChoice::Best => best.exists().then_some(best).ok_or_else(|| missing("best.ckpt")),
        CheckpointChoice::Last => last.exists().then_some(last).ok_or_else(|| missing("last.ckpt")),
        CheckpointChoice::BestOrLast => {
            if best.exists() {
                Ok(best)
            } else if last.exists() {
                log::info!("best.ckpt absent; falling back to last.ckpt");
                Ok(last)
            } else {
                Err(missing("best.ckpt or last.ckpt"))
            }
        }
    }
}

fn load_model(run_dir: &Path, choice: CheckpointChoice) -> Result<TwoBranchModel> {
    let path = resolve_checkpoint(run_dir, choice)?;
    log::info!("loading checkpoint {}", path.display());
    let (model, meta, _) = TwoBranchModel::load_checkpoint(&path)?;
    log::info!(
        "checkpoint at epoch {}, step {}, seed {}",
        meta.epoch,
        meta.step,
        meta.seed
    );
    Ok(model)
}

fn run_one_protocol(
    model: &TwoBranchModel,
    spec: &ProtocolSpec,
    entries: &[ManifestEntry],
    cross: Option<&[ManifestEntry]>,
    frames: usize,
    out_dir: &Path,
) -> Result<EvalReport> {
    let splits = build_protocol_splits(spec, entries, cross)?;
    let test = materialize(&splits.test, frames)?;
    let (report, records) = evaluator::evaluate(model, spec, &test)?;
    let slug = spec
        .name()
        .to_lowercase()
        .replace(['[', ']'], "_")
        .replace('-', "_")
        .trim_end_matches('_')
        .to_string();
    evaluator::write_scores(&out_dir.join(format!("scores_{slug}.tsv")), &records)?;
    std::fs::write(
        out_dir.join(format!("report_{slug}.kv")),
        evaluator::report_to_kv(&report),
    )
    .map_err(|e| Error::io(out_dir, e))?;
    Ok(report)
}

/// Score a checkpoint under the configured generalization protocol.
pub fn evaluate(cfg: &CliConfig, run_dir: &Path) -> Result<()> {
    let model = load_model(run_dir, cfg.eval.checkpoint)?;
    let entries = load_manifest_or_hint(&manifest_path(run_dir))?;
    let out_dir = run_dir.join("eval");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let frames = cfg.corpus.frames;

    match cfg.eval.protocol {
        ProtocolKind::LeaveOneOut => {
            let holdouts: Vec<_> = match cfg.eval.holdout {
                Some(h) => vec![h],
                None => LOO_HOLDOUTS.to_vec(),
            };
            let mut avgs = Vec::new();
            for holdout in holdouts {
                let spec = ProtocolSpec::leave_one_out(holdout);
                let report = run_one_protocol(&model, &spec, &entries, None, frames, &out_dir)?;
                print!("{}", evaluator::render_table(&report));
                if let Some(avg) = report.avg() {
                    avgs.push(avg);
                }
            }
            if avgs.len() > 1 {
                let overall = avgs.iter().sum::<f64>() / avgs.len() as f64;
                println!("overall mean AUC across holdouts: {:.2}%", overall * 100.0);
            }
        }
        ProtocolKind::CrossDataset => {
            let cross_path = if cfg.eval.cross_manifest.is_empty() {
                cross_manifest_path(run_dir)
            } else {
                PathBuf::from(&cfg.eval.cross_manifest)
            };
            let cross = load_manifest_or_hint(&cross_path)?;
            let spec = ProtocolSpec::cross_dataset();
            let report =
                run_one_protocol(&model, &spec, &entries, Some(&cross), frames, &out_dir)?;
            print!("{}", evaluator::render_table(&report));
        }
    }
    println!("evaluate: artifacts in {}", out_dir.display());
    Ok(())
}

/// Export per-class sync-correlation distributions for a checkpoint.
pub fn analyze(cfg: &CliConfig, run_dir: &Path) -> Result<()> {
    let model = load_model(run_dir, cfg.analyze.checkpoint)?;
    let entries = load_manifest_or_hint(&manifest_path(run_dir))?;
    let samples = materialize_split(&entries, cfg.analyze.split, cfg.corpus.frames)?;
    if samples.is_empty() {
        return Err(Error::validation(
            "analyze.split",
            "selected split has no samples",
        ));
    }
    let map = analyzer::collect_correlations(&model, &samples, cfg.analyze.granularity)?;
    let out_dir = run_dir.join("analysis");
    let hists =
        analyzer::export_histograms(&map, cfg.analyze.granularity, cfg.analyze.bins, &out_dir)?;
    for (h, path) in &hists {
        println!(
            "analyze: {} ({} values, mean {:.4}, std {:.4}) -> {}",
            h.method.as_str(),
            h.total_count(),
            h.mean,
            h.std,
            path.display()
        );
    }
    match analyzer::class_separation(&map) {
        Some(sep) => println!("analyze: real-fake mean separation {sep:.4}"),
        None => println!("analyze: separation undefined (single class present)"),
    }
    Ok(())
}

/// Run the built-in oracle/invariant battery.
pub fn selftest() -> Result<()> {
    let report = run_selftest();
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::contract("selftest failed"))
    }
}
