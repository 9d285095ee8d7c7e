//! Text and image artifacts of an experiment.

use std::fmt::Write;

use super::experiment::ScoreReport;
use super::roc::RocPoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `fpr,tpr` CSV with six decimals.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6}", p.fpr, p.tpr);
    }
    out
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One `key=value` pair per line.
pub fn report_text(report: &ScoreReport) -> String {
    let spec = &report.spec;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("dataset", spec.dataset.clone());
    kv("anomalous", join(&spec.anomalous));
    kv("normal", join(&report.normal_classes));
    kv("seed", spec.seed.to_string());
    kv("epochs", spec.epochs.to_string());
    kv("batch_size", spec.batch_size.to_string());
    kv(
        "train_cap",
        spec.train_cap.map_or_else(|| "none".into(), |c| c.to_string()),
    );
    kv("arch", spec.arch.id().into());
    kv("scores", spec.scorers.join(","));
    kv("train_size", report.train_size.to_string());
    kv("test_size", report.is_anomaly.len().to_string());
    kv(
        "test_anomalies",
        report.is_anomaly.iter().filter(|&&a| a).count().to_string(),
    );
    for s in &report.series {
        kv(&format!("auroc.{}", s.scorer), format!("{:.6}", s.auroc));
    }
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        kv(&format!("loss.epoch{}", e + 1), format!("{loss:.6}"));
    }
    kv("wall_seconds", format!("{:.1}", report.wall_seconds));
    out
}

/// Per-sample scores as CSV: `test_id,is_anomaly,<scorer>...`.
pub fn scores_csv(report: &ScoreReport) -> String {
    let mut out = format!("test_id,is_anomaly,{}\n", join(report.series.iter().map(|s| &s.scorer)));
    for (i, (&id, &a)) in report.test_ids.iter().zip(&report.is_anomaly).enumerate() {
        let _ = writeln!(
            out,
            "{id},{},{}",
            u8::from(a),
            join(report.series.iter().map(|s| format!("{:.6}", s.scores[i])))
        );
    }
    out
}

/// A binary PGM of `originals` tiled row-major `cols` wide, with the
/// matching `reconstructions` tiled the same way underneath.
pub fn reconstruction_grid(originals: &[Tensor], reconstructions: &[Tensor], cols: usize) -> Result<Vec<u8>> {
    if originals.is_empty() || originals.len() != reconstructions.len() || cols == 0 {
        return Err(Error::Contract(format!(
            "grid needs matching non-empty tiles, got {} originals and {} reconstructions",
            originals.len(),
            reconstructions.len()
        )));
    }
    let [1, th, tw] = *originals[0].shape() else {
        return Err(Error::Shape(format!(
            "grid tiles must be [1, H, W], got {:?}",
            originals[0].shape()
        )));
    };
    if let Some(bad) = originals.iter().chain(reconstructions).find(|t| t.len() != th * tw) {
        return Err(Error::Shape(format!("tile {:?} does not match {th}x{tw}", bad.shape())));
    }
    let n = originals.len();
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let (width, height) = (cols * tw, 2 * rows * th);
    let mut pixels = vec![0u8; width * height];
    for (block, tiles) in [originals, reconstructions].into_iter().enumerate() {
        for (k, tile) in tiles.iter().enumerate() {
            let top = (block * rows + k / cols) * th;
            let left = (k % cols) * tw;
            for y in 0..th {
                for x in 0..tw {
                    let v = tile.data()[y * tw + x].clamp(0.0, 1.0);
                    pixels[(top + y) * width + left + x] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
