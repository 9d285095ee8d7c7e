use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use capsad::capsnet::{
    load_checkpoint, save_checkpoint, train_with_progress, BatchProgress, CapsNetModel, TrainOptions,
};
use capsad::data::{decode_pgm, find_dataset, parse_idx_images, Split};
use capsad::eval::{
    normal_training_set, reconstruction_grid, report_text, roc_csv, run_experiment, scores_csv, ExperimentSpec,
};
use capsad::scoring::{find_scorer, NormalityScorer};
use capsad::tensor::Tensor;
use capsad::{Error, Result};

use crate::config::RunConfig;

const GRID_TILES: usize = 50;
const GRID_COLUMNS: usize = 10;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Creates `out`, refusing to reuse a non-empty directory unless `overwrite`.
fn prepare_out(out: &Path, overwrite: bool) -> Result<()> {
    let occupied = std::fs::read_dir(out).is_ok_and(|mut d| d.next().is_some());
    if occupied && !overwrite {
        return Err(Error::Config(format!(
            "output directory {} is not empty (use --overwrite to replace its files)",
            out.display()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

fn progress_printer() -> impl FnMut(BatchProgress) {
    let mut sum = 0.0;
    move |p: BatchProgress| {
        sum += p.mean_loss;
        if p.batch + 1 == p.batches {
            eprintln!("epoch {}: mean batch loss {:.6}", p.epoch + 1, sum / p.batches as f64);
            sum = 0.0;
        }
    }
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{l:.6}", e + 1);
    }
    out
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let source = find_dataset(&cfg.dataset)?;
    let anomalous: BTreeSet<usize> = cfg.anomalous.iter().copied().collect();
    if let Some(&c) = anomalous.iter().find(|&&c| c >= source.num_classes()) {
        return Err(Error::Config(format!(
            "anomalous class {c} outside 0..{}",
            source.num_classes()
        )));
    }
    prepare_out(&cfg.out, cfg.overwrite)?;
    let full = source.load(&cfg.data_root, Split::Train, cfg.seed)?;
    let (data, _) = normal_training_set(&full, &anomalous, cfg.cap, cfg.seed)?;
    let shape: [usize; 3] = data
        .sample_shape()
        .ok_or_else(|| Error::Contract("no training samples".into()))?
        .try_into()
        .map_err(|s| Error::Shape(format!("images must be [C, H, W], got {s:?}")))?;
    let mut model = CapsNetModel::new(cfg.arch.config(shape, data.num_classes), cfg.seed)?;
    let opts = TrainOptions::new(cfg.epochs, cfg.batch_size, cfg.seed);
    let log = train_with_progress(&mut model, &data, &opts, progress_printer())?;
    save_checkpoint(&model, &cfg.out.join("model.ckpt"))?;
    write(&cfg.out.join("loss.csv"), loss_csv(&log.epoch_losses))?;
    println!(
        "trained {} on {} images ({} classes) for {} epochs; final loss {}; wrote {}",
        cfg.dataset,
        data.len(),
        data.num_classes,
        cfg.epochs,
        log.epoch_losses
            .last()
            .map_or_else(|| "n/a".into(), |l| format!("{l:.6}")),
        cfg.out.display()
    );
    Ok(())
}

pub fn experiment(cfg: &RunConfig) -> Result<()> {
    let spec = ExperimentSpec {
        dataset: cfg.dataset.clone(),
        anomalous: cfg.anomalous.iter().copied().collect(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        train_cap: cfg.cap,
        scorers: cfg.scores.clone(),
        arch: cfg.arch,
    };
    spec.validate(find_dataset(&cfg.dataset)?.num_classes())?;
    prepare_out(&cfg.out, cfg.overwrite)?;
    let exp = run_experiment(&spec, &cfg.data_root, progress_printer())?;
    let report = &exp.report;

    save_checkpoint(&exp.model, &cfg.out.join("model.ckpt"))?;
    write(&cfg.out.join("loss.csv"), loss_csv(&report.epoch_losses))?;
    write(&cfg.out.join("report.txt"), report_text(report))?;
    write(&cfg.out.join("scores.csv"), scores_csv(report))?;
    for s in &report.series {
        write(&cfg.out.join(format!("roc_{}.csv", s.scorer)), roc_csv(&s.roc))?;
    }

    let anomalies: Vec<&Tensor> = exp
        .splits
        .test
        .images
        .iter()
        .zip(&report.is_anomaly)
        .filter(|(_, &a)| a)
        .map(|(t, _)| t)
        .take(GRID_TILES)
        .collect();
    let originals: Vec<Tensor> = anomalies.iter().map(|&t| t.clone()).collect();
    let recons = originals
        .iter()
        .map(|t| Ok(exp.model.infer(t)?.1))
        .collect::<Result<Vec<_>>>()?;
    write(
        &cfg.out.join("reconstructions.pgm"),
        reconstruction_grid(&originals, &recons, GRID_COLUMNS)?,
    )?;

    for s in &report.series {
        println!("auroc.{}={:.6}", s.scorer, s.auroc);
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Images named by `path`: a PGM file, an IDX image file (`path#index` per
/// image) or a directory of either.
fn collect_images(path: &Path, out: &mut Vec<(String, Result<Tensor>)>) {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = match std::fs::read_dir(path) {
            Ok(d) => d
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect(),
            Err(e) => {
                out.push((
                    path.display().to_string(),
                    Err(Error::Io {
                        path: path.to_path_buf(),
                        source: e,
                    }),
                ));
                return;
            }
        };
        entries.sort();
        for p in entries {
            collect_images(&p, out);
        }
        return;
    }
    let name = path.display().to_string();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            out.push((
                name,
                Err(Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                }),
            ));
            return;
        }
    };
    if bytes.starts_with(b"P5") {
        let img = decode_pgm(&bytes, &name);
        out.push((name, img));
    } else {
        match parse_idx_images(&bytes, &name) {
            Ok(images) => out.extend(
                images
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| (format!("{name}#{i}"), Ok(t))),
            ),
            Err(e) => out.push((name, Err(e))),
        }
    }
}

/// Prints `path,kind,score` per image. Failing images get an error line on
/// stderr; the first failure decides the returned error.
pub fn score(checkpoint: &Path, kinds: &[String], inputs: &[PathBuf]) -> Result<()> {
    let scorers = kinds
        .iter()
        .map(|k| find_scorer(k))
        .collect::<Result<Vec<&dyn NormalityScorer>>>()?;
    let model = load_checkpoint(checkpoint)?;
    let expected = model.config().input_shape();
    let mut images = Vec::new();
    for p in inputs {
        collect_images(p, &mut images);
    }
    let mut first_error = None;
    for (name, image) in images {
        let result = image.and_then(|t| {
            if t.shape() != expected {
                return Err(Error::Shape(format!(
                    "{name}: image {:?} does not match model input {expected:?}",
                    t.shape()
                )));
            }
            let (caps, recon) = model.infer(&t)?;
            scorers
                .iter()
                .map(|s| s.score(&caps, &t, &recon))
                .collect::<Result<Vec<_>>>()
        });
        match result {
            Ok(scores) => {
                for (s, v) in scorers.iter().zip(scores) {
                    println!("{name},{},{:.6}", s.id(), v.value);
                }
            }
            Err(e) => {
                eprintln!("error: {name}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}
