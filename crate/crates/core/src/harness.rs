//! Experiment driver: builds datasets, runs the augment/distill pipeline
//! once per trial, evaluates student and baseline on held-out data, and
//! writes the report CSVs plus a manifest of the resolved configuration.
//!
//! Every report directory is a pure function of the configuration and the
//! base seed: trial `t` runs with seed `base_seed + t`, and each stage
//! derives its own stream from that via [`derive_seed`].

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::augment::{augment_clean_set, save_augmented_csv, AugmentOutcome};
use crate::config::{DatasetSource, ExperimentConfig};
use crate::dataset::{
    inject_noise, load_csv_dataset, make_synthetic_blobs, save_dataset_csv, save_partition_csv,
    split_clean_noisy, LabeledDataset, NoiseKind, PartitionedDataset,
};
use crate::distill::{
    generate_pseudo_labels, save_pseudo_label_csv, train_student, train_teacher_ensemble,
    DistillParams, PseudoLabel,
};
use crate::error::{Error, Result};
use crate::learner::{Classifier, ProbVector};
use crate::metrics::{
    augmentation_report, save_accuracy_csv, save_precision_csv, save_threshold_csv, test_accuracy,
    threshold_sweep, AccuracyRow, AugmentationReport, ThresholdRow,
};
use crate::rng::derive_seed;

/// Confidence cutoffs reported in every trial's `threshold.csv`.
pub const THRESHOLD_ETAS: [f64; 6] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Test accuracies of one model variant across all trials of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub per_trial: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 when there is a single trial.
    pub stddev: f64,
}

/// Outcome of [`run_experiment`]: where the reports went and how the
/// distilled student compared against the plain cross-entropy baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub student: VariantSummary,
    pub baseline: VariantSummary,
}

/// One sweep point: the axis value as given on the command line and the
/// experiment it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub report: ExperimentReport,
}

/// Outcome of [`run_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub out_dir: PathBuf,
    pub points: Vec<SweepPoint>,
}

fn summarize(per_trial: &[f64]) -> VariantSummary {
    let n = per_trial.len();
    let mean = per_trial.iter().sum::<f64>() / n as f64;
    let stddev = if n < 2 {
        0.0
    } else {
        let ss: f64 = per_trial.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    VariantSummary { per_trial: per_trial.to_vec(), mean, stddev }
}

/// Materialized dataset source: synthetic parameters are kept for per-trial
/// draws, CSV data is loaded once and cloned into each trial.
enum SourceData {
    Synthetic { classes: usize, per_class: usize, dim: usize, separation: f64, eval_per_class: usize },
    Csv { train: LabeledDataset, eval: Option<LabeledDataset> },
}

fn prepare_source(cfg: &ExperimentConfig) -> Result<SourceData> {
    match &cfg.source {
        DatasetSource::Synthetic { classes, per_class, dim, separation, eval_per_class } => {
            Ok(SourceData::Synthetic {
                classes: *classes,
                per_class: *per_class,
                dim: *dim,
                separation: *separation,
                eval_per_class: *eval_per_class,
            })
        }
        DatasetSource::Csv { train_path, eval_path, classes } => {
            let train =
                load_csv_dataset(train_path, *classes).map_err(Error::in_stage("dataset"))?;
            let eval = eval_path
                .as_ref()
                .map(|p| load_csv_dataset(p, *classes))
                .transpose()
                .map_err(Error::in_stage("dataset"))?;
            Ok(SourceData::Csv { train, eval })
        }
    }
}

fn train_set(data: &SourceData, trial_seed: u64) -> Result<LabeledDataset> {
    match data {
        SourceData::Synthetic { classes, per_class, dim, separation, .. } => {
            make_synthetic_blobs(
                *classes,
                *per_class,
                *dim,
                *separation,
                derive_seed(trial_seed, "data:train"),
            )
            .map_err(Error::in_stage("dataset"))
        }
        SourceData::Csv { train, .. } => Ok(train.clone()),
    }
}

fn eval_set(data: &SourceData, trial_seed: u64) -> Result<LabeledDataset> {
    match data {
        SourceData::Synthetic { classes, eval_per_class, dim, separation, .. } => {
            make_synthetic_blobs(
                *classes,
                *eval_per_class,
                *dim,
                *separation,
                derive_seed(trial_seed, "data:eval"),
            )
            .map_err(Error::in_stage("dataset"))
        }
        SourceData::Csv { eval: Some(ds), .. } => Ok(ds.clone()),
        SourceData::Csv { eval: None, .. } => Err(Error::invalid_param(
            "dataset.eval_csv_path",
            "evaluating a csv dataset requires an evaluation file",
        )),
    }
}

/// Student-architecture model trained with plain cross-entropy on the noisy
/// given labels. Shares the student's optimizer config and seed derivation,
/// so the only difference from the distilled student is the training targets.
fn train_baseline(
    pd: &PartitionedDataset,
    params: &DistillParams,
    seed: u64,
) -> Result<Classifier> {
    let given: Vec<(usize, PseudoLabel)> = pd
        .noisy_indices()
        .into_iter()
        .map(|i| {
            (
                i,
                PseudoLabel {
                    target: ProbVector::one_hot(pd.given_labels()[i], pd.num_classes()),
                    mode: params.label_mode,
                    teacher_confident: false,
                },
            )
        })
        .collect();
    train_student(pd, &given, params, seed)
}

struct TrialOutput {
    pd: PartitionedDataset,
    outcome: AugmentOutcome,
    pseudo: Vec<(usize, PseudoLabel)>,
    aug_report: AugmentationReport,
    thresholds: Vec<ThresholdRow>,
    student_accuracy: f64,
    baseline_accuracy: f64,
}

fn build_noisy_partition(
    cfg: &ExperimentConfig,
    data: &SourceData,
    trial_seed: u64,
) -> Result<PartitionedDataset> {
    let train = train_set(data, trial_seed)?;
    let pd = split_clean_noisy(train, cfg.pi_percent, derive_seed(trial_seed, "split"))
        .map_err(Error::in_stage("split"))?;
    inject_noise(&pd, &cfg.noise, derive_seed(trial_seed, "noise"))
        .map_err(Error::in_stage("noise"))
}

fn run_trial(cfg: &ExperimentConfig, data: &SourceData, trial_seed: u64) -> Result<TrialOutput> {
    let pd = build_noisy_partition(cfg, data, trial_seed)?;
    let eval = eval_set(data, trial_seed)?;

    let outcome = augment_clean_set(&pd, &cfg.pu, derive_seed(trial_seed, "augment"))
        .map_err(Error::in_stage("augment"))?;
    let aug_report = augmentation_report(&outcome.set, &pd);

    let distill_seed = derive_seed(trial_seed, "distill");
    let ensemble = train_teacher_ensemble(&outcome.set, &outcome.corrected, &cfg.distill, distill_seed)
        .map_err(Error::in_stage("teacher"))?;
    let pseudo = generate_pseudo_labels(&ensemble, &outcome.corrected, &cfg.distill)
        .map_err(Error::in_stage("pseudo-labels"))?;
    let student = train_student(&outcome.corrected, &pseudo, &cfg.distill, distill_seed)
        .map_err(Error::in_stage("student"))?;
    let baseline = train_baseline(&pd, &cfg.distill, distill_seed)
        .map_err(Error::in_stage("baseline"))?;

    let student_accuracy = test_accuracy(&student, eval.features(), eval.labels())
        .map_err(Error::in_stage("evaluate"))?;
    let baseline_accuracy = test_accuracy(&baseline, eval.features(), eval.labels())
        .map_err(Error::in_stage("evaluate"))?;
    let thresholds = threshold_sweep(&ensemble, eval.features(), eval.labels(), &THRESHOLD_ETAS)
        .map_err(Error::in_stage("evaluate"))?;

    Ok(TrialOutput {
        pd,
        outcome,
        pseudo,
        aug_report,
        thresholds,
        student_accuracy,
        baseline_accuracy,
    })
}

fn write_trial_reports(dir: &Path, out: &TrialOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let given = LabeledDataset::new(
        out.pd.features().to_owned(),
        out.pd.given_labels().to_vec(),
        out.pd.num_classes(),
    )?;
    save_dataset_csv(&given, &dir.join("dataset.csv"))?;
    save_partition_csv(&out.pd, &dir.join("partition.csv"))?;
    save_augmented_csv(&out.outcome.set, &dir.join("augmented.csv"))?;
    save_precision_csv(&out.aug_report, &dir.join("precision.csv"))?;
    save_threshold_csv(&out.thresholds, &dir.join("threshold.csv"))?;
    save_pseudo_label_csv(&out.pseudo, out.pd.num_classes(), &dir.join("pseudo_labels.csv"))?;
    Ok(())
}

fn accuracy_row(cfg: &ExperimentConfig, run_id: String, accuracy: f64) -> AccuracyRow {
    AccuracyRow {
        run_id,
        noise_kind: cfg.noise.kind,
        noise_level_r: cfg.noise.level_r,
        clean_ratio_pi: cfg.pi_percent,
        label_mode: cfg.distill.label_mode,
        accuracy,
    }
}

fn write_aggregate_csv(
    student: &VariantSummary,
    baseline: &VariantSummary,
    trials: usize,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "variant,trials,mean_accuracy,stddev_accuracy")?;
        for (name, summary) in [("student", student), ("baseline", baseline)] {
            writeln!(w, "{name},{trials},{},{}", summary.mean, summary.stddev)?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}

fn write_manifest(
    cfg: &ExperimentConfig,
    dir: &Path,
    sweep: Option<(&str, &[String])>,
) -> Result<()> {
    let mut lines = cfg.resolved_lines();
    if let Some((axis, values)) = sweep {
        lines.push(format!("sweep.axis = {axis}"));
        lines.push(format!("sweep.values = {}", values.join(",")));
    }
    let text = lines.join("\n") + "\n";
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text).map_err(Error::io(path))
}

/// Run `cfg.trials` full pipeline trials and write all reports under
/// `cfg.out_dir`: one `trial_NNN/` directory per trial with the dataset,
/// partition, augmentation, threshold, and pseudo-label CSVs, plus top-level
/// `accuracy.csv` (per-trial and mean/stddev rows), `aggregate.csv`, and
/// `manifest.txt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = prepare_source(cfg)?;
    if let SourceData::Csv { eval: None, .. } = &data {
        return Err(Error::invalid_param(
            "dataset.eval_csv_path",
            "running a csv experiment requires an evaluation file",
        ));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;

    let mut rows = Vec::with_capacity(2 * cfg.trials + 4);
    let mut student_acc = Vec::with_capacity(cfg.trials);
    let mut baseline_acc = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let trial_seed = cfg.base_seed.wrapping_add(t as u64);
        let out = run_trial(cfg, &data, trial_seed)?;
        write_trial_reports(&cfg.out_dir.join(format!("trial_{t:03}")), &out)
            .map_err(Error::in_stage("report"))?;
        rows.push(accuracy_row(cfg, format!("trial_{t:03}/student"), out.student_accuracy));
        rows.push(accuracy_row(cfg, format!("trial_{t:03}/baseline"), out.baseline_accuracy));
        student_acc.push(out.student_accuracy);
        baseline_acc.push(out.baseline_accuracy);
    }

    let student = summarize(&student_acc);
    let baseline = summarize(&baseline_acc);
    for (variant, summary) in [("student", &student), ("baseline", &baseline)] {
        rows.push(accuracy_row(cfg, format!("mean/{variant}"), summary.mean));
        rows.push(accuracy_row(cfg, format!("stddev/{variant}"), summary.stddev));
    }
    save_accuracy_csv(&rows, &cfg.out_dir.join("accuracy.csv"))
        .map_err(Error::in_stage("report"))?;
    write_aggregate_csv(&student, &baseline, cfg.trials, &cfg.out_dir.join("aggregate.csv"))
        .map_err(Error::in_stage("report"))?;
    write_manifest(cfg, &cfg.out_dir, None).map_err(Error::in_stage("report"))?;

    Ok(ExperimentReport { out_dir: cfg.out_dir.clone(), student, baseline })
}

/// Run only the data-cleaning front half (dataset, split, noise, augment)
/// with the first trial's seed and write `augmented.csv` and `manifest.txt`
/// to `cfg.out_dir`, exposing the augmentation step as a standalone tool.
pub fn run_augment_only(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let data = prepare_source(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;

    let pd = build_noisy_partition(cfg, &data, cfg.base_seed)?;
    let outcome = augment_clean_set(&pd, &cfg.pu, derive_seed(cfg.base_seed, "augment"))
        .map_err(Error::in_stage("augment"))?;
    save_augmented_csv(&outcome.set, &cfg.out_dir.join("augmented.csv"))
        .map_err(Error::in_stage("report"))?;
    write_manifest(cfg, &cfg.out_dir, None).map_err(Error::in_stage("report"))?;
    Ok(cfg.out_dir.clone())
}

/// Parameter that [`run_sweep`] can vary across sweep values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepAxis {
    NoiseLevel,
    CleanRatio,
    Eta,
    Lambda,
    LabelMode,
    Ablation,
}

impl SweepAxis {
    fn parse(axis: &str) -> Result<Self> {
        match axis {
            "r" => Ok(SweepAxis::NoiseLevel),
            "pi" => Ok(SweepAxis::CleanRatio),
            "eta" => Ok(SweepAxis::Eta),
            "lambda" => Ok(SweepAxis::Lambda),
            "label_mode" => Ok(SweepAxis::LabelMode),
            "ablation" => Ok(SweepAxis::Ablation),
            other => Err(Error::invalid_param(
                "sweep.axis",
                format!("unknown axis {other:?} (expected r, pi, eta, lambda, label_mode, or ablation)"),
            )),
        }
    }
}

fn parse_axis_number(value: &str, axis: &str) -> Result<f64> {
    value.trim().parse().map_err(|_| {
        Error::invalid_param(
            "sweep.values",
            format!("cannot parse {value:?} as a number for axis `{axis}`"),
        )
    })
}

/// Ablation variants keep only the named regularizers: the others are
/// zeroed on both the teacher and student training configs.
fn apply_ablation(cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
    let (mixup_on, entropy_on) = match value {
        "none" => (false, false),
        "mixup" => (true, false),
        "entropy" => (false, true),
        "mixup_entropy" => (true, true),
        other => {
            return Err(Error::invalid_param(
                "sweep.values",
                format!(
                    "unknown ablation variant {other:?} (expected none, mixup, entropy, or mixup_entropy)"
                ),
            ))
        }
    };
    for tc in [&mut cfg.distill.teacher_train_config, &mut cfg.distill.student_train_config] {
        if !mixup_on {
            tc.mixup_mu = 0.0;
        }
        if !entropy_on {
            tc.entropy_weight = 0.0;
        }
    }
    Ok(())
}

fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut point = cfg.clone();
    match axis {
        SweepAxis::NoiseLevel => point.noise.level_r = parse_axis_number(value, "r")?,
        SweepAxis::CleanRatio => point.pi_percent = parse_axis_number(value, "pi")?,
        SweepAxis::Eta => point.distill.confidence_eta = parse_axis_number(value, "eta")?,
        SweepAxis::Lambda => point.distill.lambda = parse_axis_number(value, "lambda")?,
        SweepAxis::LabelMode => point.distill.label_mode = value.trim().parse()?,
        SweepAxis::Ablation => apply_ablation(&mut point, value.trim())?,
    }
    Ok(point)
}

fn dir_token(value: &str) -> String {
    value
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect()
}

fn write_sweep_csv(
    axis: &str,
    rows: &[(String, NoiseKind, usize, ExperimentReport)],
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "axis,value,noise_kind,variant,trials,mean_accuracy,stddev_accuracy")?;
        for (value, kind, trials, report) in rows {
            for (variant, summary) in [("student", &report.student), ("baseline", &report.baseline)]
            {
                writeln!(
                    w,
                    "{axis},{value},{kind},{variant},{trials},{},{}",
                    summary.mean, summary.stddev
                )?;
            }
        }
        w.flush()
    })();
    result.map_err(io_err)
}

/// Run one experiment per axis value, each in its own `"{axis}_{value}"`
/// subdirectory of `cfg.out_dir`, and write a long-format `sweep.csv`
/// (one row per value and variant) suitable for plotting accuracy curves.
///
/// Sweepable axes: `r`, `pi`, `eta`, `lambda`, `label_mode`, and `ablation`
/// (values `none`, `mixup`, `entropy`, `mixup_entropy`).
pub fn run_sweep(cfg: &ExperimentConfig, axis: &str, values: &[String]) -> Result<SweepReport> {
    let axis_kind = SweepAxis::parse(axis)?;
    if values.is_empty() {
        return Err(Error::invalid_param("sweep.values", "need at least one value"));
    }
    let mut point_cfgs = Vec::with_capacity(values.len());
    for value in values {
        let mut point = apply_axis(cfg, axis_kind, value)?;
        point.out_dir = cfg.out_dir.join(format!("{axis}_{}", dir_token(value)));
        point.validate()?;
        point_cfgs.push(point);
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;

    let mut rows = Vec::with_capacity(values.len());
    let mut points = Vec::with_capacity(values.len());
    for (value, point_cfg) in values.iter().zip(&point_cfgs) {
        let report = run_experiment(point_cfg)?;
        rows.push((value.clone(), point_cfg.noise.kind, point_cfg.trials, report.clone()));
        points.push(SweepPoint { value: value.clone(), report });
    }
    write_sweep_csv(axis, &rows, &cfg.out_dir.join("sweep.csv"))
        .map_err(Error::in_stage("report"))?;
    write_manifest(cfg, &cfg.out_dir, Some((axis, values)))
        .map_err(Error::in_stage("report"))?;
    Ok(SweepReport { out_dir: cfg.out_dir.clone(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::LabelMode;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn summary_of_a_single_trial_has_zero_spread() {
        let s = summarize(&[0.8]);
        assert!(close(s.mean, 0.8));
        assert_eq!(s.stddev, 0.0);
    }

    #[test]
    fn summary_matches_hand_computed_mean_and_sample_stddev() {
        let s = summarize(&[0.8, 0.9, 1.0]);
        assert!(close(s.mean, 0.9));
        assert!(close(s.stddev, 0.1));
    }

    #[test]
    fn each_axis_overrides_its_own_field() {
        let cfg = ExperimentConfig::default();
        let r = apply_axis(&cfg, SweepAxis::NoiseLevel, "50").unwrap();
        assert!(close(r.noise.level_r, 50.0));
        assert!(close(r.pi_percent, cfg.pi_percent));

        let pi = apply_axis(&cfg, SweepAxis::CleanRatio, "20").unwrap();
        assert!(close(pi.pi_percent, 20.0));

        let eta = apply_axis(&cfg, SweepAxis::Eta, "0.7").unwrap();
        assert!(close(eta.distill.confidence_eta, 0.7));

        let lambda = apply_axis(&cfg, SweepAxis::Lambda, "0.25").unwrap();
        assert!(close(lambda.distill.lambda, 0.25));

        let mode = apply_axis(&cfg, SweepAxis::LabelMode, "hard").unwrap();
        assert_eq!(mode.distill.label_mode, LabelMode::Hard);
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let err = SweepAxis::parse("theta").unwrap_err();
        assert!(err.to_string().contains("sweep.axis"));
    }

    #[test]
    fn unparsable_numeric_value_is_rejected() {
        let cfg = ExperimentConfig::default();
        let err = apply_axis(&cfg, SweepAxis::NoiseLevel, "lots").unwrap_err();
        assert!(err.to_string().contains("lots"));
    }

    #[test]
    fn ablation_values_keep_only_the_named_regularizers() {
        let cfg = ExperimentConfig::default();
        let mu = cfg.distill.student_train_config.mixup_mu;
        let ew = cfg.distill.student_train_config.entropy_weight;
        assert!(mu > 0.0 && ew > 0.0);

        let expected = [
            ("none", 0.0, 0.0),
            ("mixup", mu, 0.0),
            ("entropy", 0.0, ew),
            ("mixup_entropy", mu, ew),
        ];
        for (value, want_mu, want_ew) in expected {
            let point = apply_axis(&cfg, SweepAxis::Ablation, value).unwrap();
            for tc in [&point.distill.teacher_train_config, &point.distill.student_train_config] {
                assert_eq!(tc.mixup_mu, want_mu, "mixup for {value}");
                assert_eq!(tc.entropy_weight, want_ew, "entropy for {value}");
            }
        }
    }

    #[test]
    fn unknown_ablation_value_is_rejected() {
        let cfg = ExperimentConfig::default();
        let err = apply_axis(&cfg, SweepAxis::Ablation, "dropout").unwrap_err();
        assert!(err.to_string().contains("dropout"));
    }

    #[test]
    fn directory_tokens_replace_awkward_characters() {
        assert_eq!(dir_token("0.5"), "0.5");
        assert_eq!(dir_token(" soft_bootstrap "), "soft_bootstrap");
        assert_eq!(dir_token("a/b c"), "a-b-c");
    }
}
