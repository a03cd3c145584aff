//! Experiment configuration: a flat `key = value` text format with `#`
//! comments and dotted keys, every key optional and backed by a default.
//!
//! `resolved_lines` renders the fully resolved settings back into the same
//! format, so a written manifest re-parses to an identical configuration.

use std::path::{Path, PathBuf};

use crate::augment::PuParams;
use crate::dataset::{NoiseKind, NoiseSpec};
use crate::distill::{DistillParams, LabelMode};
use crate::error::{Error, Result};
use crate::learner::{LrSchedule, TrainConfig};

/// Where the labeled samples come from: generated Gaussian blobs or CSV
/// files on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        eval_per_class: usize,
    },
    Csv {
        train_path: PathBuf,
        eval_path: Option<PathBuf>,
        classes: usize,
    },
}

impl DatasetSource {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSource::Synthetic { classes, .. } => *classes,
            DatasetSource::Csv { classes, .. } => *classes,
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub pi_percent: f64,
    pub noise: NoiseSpec,
    pub pu: PuParams,
    pub distill: DistillParams,
    pub trials: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

fn default_filter_config() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 32,
        lr_schedule: LrSchedule::with_steps(0.1, &[(40, 10.0)]),
        momentum: 0.9,
        weight_decay: 1e-4,
        mixup_mu: 0.0,
        entropy_weight: 0.0,
        hidden_units: 0,
        seed: 0,
    }
}

fn default_teacher_config() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 32,
        lr_schedule: LrSchedule::with_steps(0.1, &[(40, 10.0)]),
        momentum: 0.9,
        weight_decay: 1e-4,
        mixup_mu: 2.0,
        entropy_weight: 1.0,
        hidden_units: 0,
        seed: 0,
    }
}

fn default_student_config() -> TrainConfig {
    TrainConfig {
        epochs: 80,
        batch_size: 32,
        lr_schedule: LrSchedule::with_steps(0.1, &[(60, 10.0)]),
        momentum: 0.9,
        weight_decay: 1e-4,
        mixup_mu: 2.0,
        entropy_weight: 1.0,
        hidden_units: 32,
        seed: 0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DatasetSource::Synthetic {
                classes: 3,
                per_class: 500,
                dim: 8,
                separation: 6.0,
                eval_per_class: 200,
            },
            pi_percent: 10.0,
            noise: NoiseSpec::symmetric(30.0),
            pu: PuParams {
                iterations_k: 3,
                ensemble_n: 20,
                positive_threshold_alpha: 0.9,
                reliability_theta: 19,
                filter_train_config: default_filter_config(),
            },
            distill: DistillParams {
                teacher_count_nt: 5,
                confidence_eta: 0.9,
                lambda: 0.5,
                label_mode: LabelMode::SoftBootstrap,
                teacher_train_config: default_teacher_config(),
                student_train_config: default_student_config(),
            },
            trials: 1,
            base_seed: 1,
            out_dir: PathBuf::from("reports"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.source {
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                eval_per_class,
            } => {
                if *classes < 2 {
                    return Err(Error::invalid_param("dataset.classes", "must be at least 2"));
                }
                if *per_class < 1 || *eval_per_class < 1 {
                    return Err(Error::invalid_param(
                        "dataset.per_class",
                        "per-class sample counts must be at least 1",
                    ));
                }
                if *dim < 1 {
                    return Err(Error::invalid_param("dataset.dim", "must be at least 1"));
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(Error::invalid_param(
                        "dataset.separation",
                        "must be a finite value at or above 0",
                    ));
                }
            }
            DatasetSource::Csv { classes, .. } => {
                if *classes < 2 {
                    return Err(Error::invalid_param("dataset.classes", "must be at least 2"));
                }
            }
        }
        if !(self.pi_percent.is_finite() && 0.0 < self.pi_percent && self.pi_percent < 100.0) {
            return Err(Error::invalid_param("pi", "must lie strictly inside (0, 100)"));
        }
        self.noise.validate(self.source.num_classes())?;
        if self.noise.level_r > 100.0 - self.pi_percent {
            return Err(Error::invalid_param(
                "noise.r",
                format!("cannot exceed 100 - pi = {}", 100.0 - self.pi_percent),
            ));
        }
        if self.trials < 1 {
            return Err(Error::invalid_param("trials", "must be at least 1"));
        }
        self.pu.validate()?;
        self.distill.validate()
    }

    /// Every resolved setting as `key = value` lines in a fixed order,
    /// excluding the output directory. Parsing the joined lines yields this
    /// configuration back.
    pub fn resolved_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        match &self.source {
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                eval_per_class,
            } => {
                lines.push("dataset.source = synthetic".into());
                lines.push(format!("dataset.classes = {classes}"));
                lines.push(format!("dataset.per_class = {per_class}"));
                lines.push(format!("dataset.dim = {dim}"));
                lines.push(format!("dataset.separation = {separation}"));
                lines.push(format!("dataset.eval_per_class = {eval_per_class}"));
            }
            DatasetSource::Csv {
                train_path,
                eval_path,
                classes,
            } => {
                lines.push("dataset.source = csv".into());
                lines.push(format!("dataset.classes = {classes}"));
                lines.push(format!("dataset.csv_path = {}", train_path.display()));
                if let Some(eval) = eval_path {
                    lines.push(format!("dataset.eval_csv_path = {}", eval.display()));
                }
            }
        }
        lines.push(format!("pi = {}", self.pi_percent));
        lines.push(format!("noise.kind = {}", self.noise.kind));
        lines.push(format!("noise.r = {}", self.noise.level_r));
        if self.noise.kind == NoiseKind::Asymmetric {
            let pairs: Vec<String> = self
                .noise
                .pair_map
                .iter()
                .map(|(src, tgt)| format!("{src}:{tgt}"))
                .collect();
            lines.push(format!("noise.pairs = {}", pairs.join(",")));
        }
        lines.push(format!("pu.iterations_k = {}", self.pu.iterations_k));
        lines.push(format!("pu.ensemble_n = {}", self.pu.ensemble_n));
        lines.push(format!("pu.alpha = {}", self.pu.positive_threshold_alpha));
        lines.push(format!("pu.theta = {}", self.pu.reliability_theta));
        lines.push(format!("distill.teacher_count = {}", self.distill.teacher_count_nt));
        lines.push(format!("distill.eta = {}", self.distill.confidence_eta));
        lines.push(format!("distill.lambda = {}", self.distill.lambda));
        lines.push(format!("distill.label_mode = {}", self.distill.label_mode));
        push_train_lines(&mut lines, "filter", &self.pu.filter_train_config);
        push_train_lines(&mut lines, "teacher", &self.distill.teacher_train_config);
        push_train_lines(&mut lines, "student", &self.distill.student_train_config);
        lines.push(format!("trials = {}", self.trials));
        lines.push(format!("seed = {}", self.base_seed));
        lines
    }
}

fn push_train_lines(lines: &mut Vec<String>, role: &str, config: &TrainConfig) {
    lines.push(format!("{role}.epochs = {}", config.epochs));
    lines.push(format!("{role}.batch = {}", config.batch_size));
    lines.push(format!("{role}.hidden = {}", config.hidden_units));
    lines.push(format!("{role}.lr = {}", config.lr_schedule.initial));
    let steps = if config.lr_schedule.steps.is_empty() {
        "none".into()
    } else {
        config
            .lr_schedule
            .steps
            .iter()
            .map(|s| format!("{}:{}", s.epoch, s.divisor))
            .collect::<Vec<_>>()
            .join(",")
    };
    lines.push(format!("{role}.lr_steps = {steps}"));
    lines.push(format!("{role}.momentum = {}", config.momentum));
    lines.push(format!("{role}.wd = {}", config.weight_decay));
    lines.push(format!("{role}.mixup_mu = {}", config.mixup_mu));
    lines.push(format!("{role}.entropy_weight = {}", config.entropy_weight));
}

/// Read and resolve a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_config(&text, path)
}

/// Resolve configuration text against the defaults. `path` only labels
/// parse errors.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let mut raw = RawConfig::default();
    for (line_no, raw_line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format_error(path, line_no, "expected `key = value`"));
        };
        raw.set(key.trim(), value.trim())
            .map_err(|message| format_error(path, line_no, &message))?;
    }
    let config = raw.into_config()?;
    config.validate()?;
    Ok(config)
}

fn format_error(path: &Path, line: usize, message: &str) -> Error {
    Error::FileFormat {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Accumulates key overrides before the source variant and dependent
/// defaults are resolved.
struct RawConfig {
    config: ExperimentConfig,
    source_kind: String,
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    eval_per_class: usize,
    csv_path: Option<PathBuf>,
    eval_csv_path: Option<PathBuf>,
    theta: Option<usize>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            config: ExperimentConfig::default(),
            source_kind: "synthetic".into(),
            classes: 3,
            per_class: 500,
            dim: 8,
            separation: 6.0,
            eval_per_class: 200,
            csv_path: None,
            eval_csv_path: None,
            theta: None,
        }
    }
}

impl RawConfig {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let c = &mut self.config;
        match key {
            "dataset.source" => match value {
                "synthetic" | "csv" => self.source_kind = value.into(),
                other => return Err(format!("unknown dataset source {other:?}")),
            },
            "dataset.classes" => self.classes = parse(key, value)?,
            "dataset.per_class" => self.per_class = parse(key, value)?,
            "dataset.dim" => self.dim = parse(key, value)?,
            "dataset.separation" => self.separation = parse(key, value)?,
            "dataset.eval_per_class" => self.eval_per_class = parse(key, value)?,
            "dataset.csv_path" => self.csv_path = Some(PathBuf::from(value)),
            "dataset.eval_csv_path" => self.eval_csv_path = Some(PathBuf::from(value)),
            "pi" => c.pi_percent = parse(key, value)?,
            "noise.kind" => {
                c.noise.kind = value
                    .parse::<NoiseKind>()
                    .map_err(|e| e.to_string())?;
            }
            "noise.r" => c.noise.level_r = parse(key, value)?,
            "noise.pairs" => c.noise.pair_map = parse_pairs(value)?,
            "pu.iterations_k" => c.pu.iterations_k = parse(key, value)?,
            "pu.ensemble_n" => c.pu.ensemble_n = parse(key, value)?,
            "pu.alpha" => c.pu.positive_threshold_alpha = parse(key, value)?,
            "pu.theta" => self.theta = Some(parse(key, value)?),
            "distill.teacher_count" => c.distill.teacher_count_nt = parse(key, value)?,
            "distill.eta" => c.distill.confidence_eta = parse(key, value)?,
            "distill.lambda" => c.distill.lambda = parse(key, value)?,
            "distill.label_mode" => {
                c.distill.label_mode = value
                    .parse::<LabelMode>()
                    .map_err(|e| e.to_string())?;
            }
            "trials" => c.trials = parse(key, value)?,
            "seed" => c.base_seed = parse(key, value)?,
            "out" => c.out_dir = PathBuf::from(value),
            _ => {
                let train = if let Some(rest) = key.strip_prefix("filter.") {
                    Some((rest, &mut c.pu.filter_train_config))
                } else if let Some(rest) = key.strip_prefix("teacher.") {
                    Some((rest, &mut c.distill.teacher_train_config))
                } else if let Some(rest) = key.strip_prefix("student.") {
                    Some((rest, &mut c.distill.student_train_config))
                } else {
                    None
                };
                let Some((field, config)) = train else {
                    return Err(format!("unknown key {key:?}"));
                };
                set_train_field(config, key, field, value)?;
            }
        }
        Ok(())
    }

    fn into_config(self) -> Result<ExperimentConfig> {
        let mut config = self.config;
        config.source = match self.source_kind.as_str() {
            "synthetic" => DatasetSource::Synthetic {
                classes: self.classes,
                per_class: self.per_class,
                dim: self.dim,
                separation: self.separation,
                eval_per_class: self.eval_per_class,
            },
            _ => DatasetSource::Csv {
                train_path: self.csv_path.ok_or_else(|| {
                    Error::invalid_param(
                        "dataset.csv_path",
                        "required when dataset.source = csv",
                    )
                })?,
                eval_path: self.eval_csv_path,
                classes: self.classes,
            },
        };
        config.pu.reliability_theta = self
            .theta
            .unwrap_or_else(|| (0.95 * config.pu.ensemble_n as f64).ceil() as usize);
        Ok(config)
    }
}

fn set_train_field(
    config: &mut TrainConfig,
    key: &str,
    field: &str,
    value: &str,
) -> std::result::Result<(), String> {
    match field {
        "epochs" => config.epochs = parse(key, value)?,
        "batch" => config.batch_size = parse(key, value)?,
        "hidden" => config.hidden_units = parse(key, value)?,
        "lr" => config.lr_schedule.initial = parse(key, value)?,
        "lr_steps" => {
            config.lr_schedule = LrSchedule::with_steps(
                config.lr_schedule.initial,
                &parse_steps(value)?,
            );
        }
        "momentum" => config.momentum = parse(key, value)?,
        "wd" => config.weight_decay = parse(key, value)?,
        "mixup_mu" => config.mixup_mu = parse(key, value)?,
        "entropy_weight" => config.entropy_weight = parse(key, value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

/// `src:tgt` pairs separated by commas, e.g. `0:1,2:3`.
fn parse_pairs(value: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    value
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (src, tgt) = part
                .split_once(':')
                .ok_or_else(|| format!("pair {part:?} must look like src:tgt"))?;
            Ok((parse("noise.pairs", src.trim())?, parse("noise.pairs", tgt.trim())?))
        })
        .collect()
}

/// `epoch:divisor` steps separated by commas, or `none`.
fn parse_steps(value: &str) -> std::result::Result<Vec<(usize, f64)>, String> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (epoch, divisor) = part
                .split_once(':')
                .ok_or_else(|| format!("step {part:?} must look like epoch:divisor"))?;
            Ok((parse("lr_steps", epoch.trim())?, parse("lr_steps", divisor.trim())?))
        })
        .collect()
}
