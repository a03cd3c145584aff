//! Evaluation of augmentation quality, teacher confidence curves, and
//! classifier accuracy, with the CSV writers that report them.
//!
//! Every function here is a pure map from its inputs; nothing draws
//! randomness or mutates state.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;

use crate::augment::AugmentedCleanSet;
use crate::dataset::{NoiseKind, PartitionedDataset};
use crate::distill::{LabelMode, TeacherEnsemble};
use crate::error::{Error, Result};
use crate::learner::Classifier;

/// Selection quality for one class: how many noisy samples were assigned
/// to it and what fraction of those truly belong to it. An empty selection
/// has no defined precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRow {
    pub class_id: usize,
    pub selected_size: usize,
    pub precision: Option<f64>,
}

/// Per-class precision rows plus the pooled totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationReport {
    pub per_class: Vec<PrecisionRow>,
    pub overall_size: usize,
    pub overall_precision: Option<f64>,
}

/// Teacher accuracy restricted to samples whose max mean prediction
/// reaches `eta`, with the size of that covered subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub eta: f64,
    pub accuracy: Option<f64>,
    pub covered_size: usize,
}

/// One evaluated run for the long-format accuracy report.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub run_id: String,
    pub noise_kind: NoiseKind,
    pub noise_level_r: f64,
    pub clean_ratio_pi: f64,
    pub label_mode: LabelMode,
    pub accuracy: f64,
}

/// Score the selections against the hidden true labels: one row per class
/// plus pooled totals.
pub fn augmentation_report(aug: &AugmentedCleanSet, pd: &PartitionedDataset) -> AugmentationReport {
    let truth = pd.hidden_true_labels();
    let mut sizes = vec![0usize; aug.num_classes()];
    let mut correct = vec![0usize; aug.num_classes()];
    for s in aug.selected() {
        sizes[s.assigned_label] += 1;
        if truth[s.index] == s.assigned_label {
            correct[s.assigned_label] += 1;
        }
    }

    let per_class = sizes
        .iter()
        .zip(&correct)
        .enumerate()
        .map(|(class_id, (&size, &hits))| PrecisionRow {
            class_id,
            selected_size: size,
            precision: (size > 0).then(|| hits as f64 / size as f64),
        })
        .collect();
    let overall_size: usize = sizes.iter().sum();
    let overall_hits: usize = correct.iter().sum();

    AugmentationReport {
        per_class,
        overall_size,
        overall_precision: (overall_size > 0).then(|| overall_hits as f64 / overall_size as f64),
    }
}

/// Sweep the confidence threshold over an evaluation set: at each `eta`,
/// the teacher's argmax accuracy on the samples it is at least that sure
/// about. An empty covered set reports size 0 without an accuracy.
pub fn threshold_sweep(
    ens: &TeacherEnsemble,
    features: ArrayView2<f64>,
    labels: &[usize],
    etas: &[f64],
) -> Result<Vec<ThresholdRow>> {
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    let mean = ens.predict_batch(features);

    Ok(etas
        .iter()
        .map(|&eta| {
            let mut covered = 0usize;
            let mut hits = 0usize;
            for (row, &label) in mean.rows().into_iter().zip(labels) {
                let (argmax, max) = argmax_entry(row.iter().copied());
                if max >= eta {
                    covered += 1;
                    if argmax == label {
                        hits += 1;
                    }
                }
            }
            ThresholdRow {
                eta,
                accuracy: (covered > 0).then(|| hits as f64 / covered as f64),
                covered_size: covered,
            }
        })
        .collect())
}

/// Fraction of samples whose predicted class matches the label.
pub fn test_accuracy(
    clf: &Classifier,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(Error::InvalidInput(
            "accuracy needs at least one evaluation sample".into(),
        ));
    }
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    let probs = clf.predict_batch(features);
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax_entry(row.iter().copied()).0 == label)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// First index holding the maximum, matching the tie-break used for
/// one-hot targets.
fn argmax_entry(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Write per-class rows as `class_id,size,precision` with a final
/// `overall` row; an undefined precision leaves the field empty.
pub fn save_precision_csv(report: &AugmentationReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "class_id,size,precision")?;
        for row in &report.per_class {
            write!(w, "{},{},", row.class_id, row.selected_size)?;
            write_optional(&mut w, row.precision)?;
            writeln!(w)?;
        }
        write!(w, "overall,{},", report.overall_size)?;
        write_optional(&mut w, report.overall_precision)?;
        writeln!(w)?;
        w.flush()
    })();
    result.map_err(io_err)
}

/// Write sweep rows as `eta,accuracy,size`; an undefined accuracy leaves
/// the field empty.
pub fn save_threshold_csv(rows: &[ThresholdRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "eta,accuracy,size")?;
        for row in rows {
            write!(w, "{},", row.eta)?;
            write_optional(&mut w, row.accuracy)?;
            writeln!(w, ",{}", row.covered_size)?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}

/// Write evaluated runs as `run_id,noise_kind,r,pi,label_mode,accuracy`.
pub fn save_accuracy_csv(rows: &[AccuracyRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "run_id,noise_kind,r,pi,label_mode,accuracy")?;
        for row in rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.run_id,
                row.noise_kind,
                row.noise_level_r,
                row.clean_ratio_pi,
                row.label_mode,
                row.accuracy
            )?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}

fn write_optional<W: Write>(w: &mut W, value: Option<f64>) -> std::io::Result<()> {
    match value {
        Some(v) => write!(w, "{v}"),
        None => Ok(()),
    }
}
