//! Teacher-ensemble distillation over the augmented clean set.
//!
//! A small ensemble of multiclass teachers is bagged on balanced bootstrap
//! draws from the augmented set, every class contributing the same number
//! of samples. The averaged teacher prediction is blended with each noisy
//! sample's corrected given label into a per-sample training target, gated
//! by a confidence threshold: where the teacher is unsure the target falls
//! back to the given label unchanged. A single student then trains on the
//! trusted samples plus these targets.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::augment::AugmentedCleanSet;
use crate::dataset::PartitionedDataset;
use crate::error::{Error, Result};
use crate::learner::{one_hot_targets, train_classifier, Classifier, ProbVector, TrainConfig};
use crate::rng::{derive_seed, Rng};

/// How a noisy sample's training target combines the teacher prediction
/// with the corrected given label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Blend the full teacher distribution into the given label.
    SoftBootstrap,
    /// Blend a one-hot at the teacher's argmax into the given label.
    HardBootstrap,
    /// Replace the given label outright with the teacher's argmax.
    Hard,
}

impl LabelMode {
    pub const ALL: [LabelMode; 3] = [
        LabelMode::SoftBootstrap,
        LabelMode::HardBootstrap,
        LabelMode::Hard,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelMode::SoftBootstrap => "soft_bootstrap",
            LabelMode::HardBootstrap => "hard_bootstrap",
            LabelMode::Hard => "hard",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_bootstrap" => Ok(LabelMode::SoftBootstrap),
            "hard_bootstrap" => Ok(LabelMode::HardBootstrap),
            "hard" => Ok(LabelMode::Hard),
            other => Err(Error::invalid_param(
                "label_mode",
                format!("unknown mode {other:?}; expected soft_bootstrap, hard_bootstrap, or hard"),
            )),
        }
    }
}

/// Knobs for teacher training and pseudo-label generation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillParams {
    pub teacher_count_nt: usize,
    pub confidence_eta: f64,
    pub lambda: f64,
    pub label_mode: LabelMode,
    pub teacher_train_config: TrainConfig,
    pub student_train_config: TrainConfig,
}

impl DistillParams {
    /// `confidence_eta` may exceed 1: such a threshold is never met, so
    /// every target degrades to the corrected given label.
    pub fn validate(&self) -> Result<()> {
        if self.teacher_count_nt < 1 {
            return Err(Error::invalid_param(
                "distill.teacher_count",
                "must be at least 1",
            ));
        }
        if !(self.confidence_eta.is_finite() && self.confidence_eta >= 0.0) {
            return Err(Error::invalid_param(
                "distill.eta",
                "must be a finite value at or above 0",
            ));
        }
        if !(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda)) {
            return Err(Error::invalid_param("distill.lambda", "must lie in [0, 1]"));
        }
        self.teacher_train_config.validate()?;
        self.student_train_config.validate()
    }
}

/// Bagged multiclass teachers plus the per-class draw size they shared.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    members: Vec<Classifier>,
    bootstrap_per_class: usize,
}

impl TeacherEnsemble {
    pub fn members(&self) -> &[Classifier] {
        &self.members
    }

    /// Samples drawn per class for each member: the smallest class size in
    /// the augmented set.
    pub fn bootstrap_per_class(&self) -> usize {
        self.bootstrap_per_class
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    /// Arithmetic mean of the members' predicted distributions for one
    /// sample.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<ProbVector> {
        let mut sum = vec![0.0; self.num_classes()];
        for member in &self.members {
            let probs = member.predict_proba(x)?;
            for (acc, p) in sum.iter_mut().zip(probs.entries()) {
                *acc += p;
            }
        }
        let count = self.members.len() as f64;
        ProbVector::new(sum.into_iter().map(|v| v / count).collect())
    }

    /// Mean member prediction for every row of `x`.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut mean = Array2::<f64>::zeros((x.nrows(), self.num_classes()));
        for member in &self.members {
            mean += &member.predict_batch(x);
        }
        mean /= self.members.len() as f64;
        mean
    }
}

/// The balanced per-class draw size: the smallest augmented class. Errors
/// when some class ended up empty, naming it.
pub fn balanced_bootstrap_size(aug: &AugmentedCleanSet) -> Result<usize> {
    let mut smallest = usize::MAX;
    for class in 0..aug.num_classes() {
        let size = aug.class_size(class);
        if size == 0 {
            return Err(Error::InvalidInput(format!(
                "augmented clean set has no samples for class {class}"
            )));
        }
        smallest = smallest.min(size);
    }
    Ok(smallest)
}

/// Train the `N_t` teachers. Each member draws, with replacement, the same
/// number of samples from every class of the augmented set (selected
/// samples count under their assigned label) and trains a multiclass
/// classifier on the draw.
pub fn train_teacher_ensemble(
    aug: &AugmentedCleanSet,
    pd: &PartitionedDataset,
    params: &DistillParams,
    seed: u64,
) -> Result<TeacherEnsemble> {
    params.validate()?;
    let size = balanced_bootstrap_size(aug)?;
    let classes = aug.num_classes();
    let by_class: Vec<Vec<usize>> = (0..classes).map(|c| aug.members_of_class(c)).collect();

    let members: Vec<Classifier> = (0..params.teacher_count_nt)
        .into_par_iter()
        .map(|member| {
            let sample_seed = derive_seed(seed, &format!("teacher-sample:{member}"));
            let mut rng = Rng::new(sample_seed);
            let mut indices = Vec::with_capacity(classes * size);
            let mut labels = Vec::with_capacity(classes * size);
            for (class, pool) in by_class.iter().enumerate() {
                indices.extend(rng.sample_with_replacement(pool, size));
                labels.resize(indices.len(), class);
            }

            let mut features = Array2::<f64>::zeros((indices.len(), pd.dim()));
            for (row, &i) in indices.iter().enumerate() {
                features.row_mut(row).assign(&pd.features().row(i));
            }
            let targets = one_hot_targets(&labels, classes);

            let mut config = params.teacher_train_config.clone();
            config.seed = derive_seed(seed, &format!("teacher-train:{member}"));
            train_classifier(features.view(), &targets, &config)
        })
        .collect::<Result<_>>()?;

    Ok(TeacherEnsemble {
        members,
        bootstrap_per_class: size,
    })
}

/// A noisy sample's training target and how it was formed.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub target: ProbVector,
    pub mode: LabelMode,
    pub teacher_confident: bool,
}

/// Form one training target from the teacher's mean prediction and the
/// sample's corrected given label. A teacher below the confidence
/// threshold leaves the given label untouched in every mode.
pub fn gen_pseudo_label(
    teacher_out: &ProbVector,
    corrected_given: &ProbVector,
    params: &DistillParams,
) -> Result<PseudoLabel> {
    let confident = teacher_out.max_entry() >= params.confidence_eta;
    let target = if !confident {
        corrected_given.clone()
    } else {
        match params.label_mode {
            LabelMode::SoftBootstrap => teacher_out.blend(corrected_given, params.lambda)?,
            LabelMode::HardBootstrap => {
                let hard = ProbVector::one_hot(teacher_out.argmax(), teacher_out.len());
                hard.blend(corrected_given, params.lambda)?
            }
            LabelMode::Hard => ProbVector::one_hot(teacher_out.argmax(), teacher_out.len()),
        }
    };
    Ok(PseudoLabel {
        target,
        mode: params.label_mode,
        teacher_confident: confident,
    })
}

/// Generate targets for every noisy-pool sample, returned in ascending
/// index order. `pd` should carry corrected given labels, i.e. the
/// augmentation outcome's rewritten dataset.
pub fn generate_pseudo_labels(
    ens: &TeacherEnsemble,
    pd: &PartitionedDataset,
    params: &DistillParams,
) -> Result<Vec<(usize, PseudoLabel)>> {
    let noisy = pd.noisy_indices();
    let mut features = Array2::<f64>::zeros((noisy.len(), pd.dim()));
    for (row, &i) in noisy.iter().enumerate() {
        features.row_mut(row).assign(&pd.features().row(i));
    }
    let teacher_mean = ens.predict_batch(features.view());

    noisy
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let teacher_out = ProbVector::new(teacher_mean.row(row).to_vec())?;
            let given = ProbVector::one_hot(pd.given_labels()[i], pd.num_classes());
            Ok((i, gen_pseudo_label(&teacher_out, &given, params)?))
        })
        .collect()
}

/// Train the student on the whole dataset: trusted samples against their
/// given labels, noisy samples against their pseudo-label targets.
pub fn train_student(
    pd: &PartitionedDataset,
    pseudo_labels: &[(usize, PseudoLabel)],
    params: &DistillParams,
    seed: u64,
) -> Result<Classifier> {
    let noisy = pd.noisy_indices();
    if pseudo_labels.len() != noisy.len()
        || !pseudo_labels
            .iter()
            .zip(&noisy)
            .all(|((i, _), &j)| *i == j)
    {
        return Err(Error::InvalidInput(
            "pseudo-labels must cover exactly the noisy pool in index order".into(),
        ));
    }

    let mut targets: Vec<ProbVector> = pd
        .given_labels()
        .iter()
        .map(|&label| ProbVector::one_hot(label, pd.num_classes()))
        .collect();
    for (i, label) in pseudo_labels {
        targets[*i] = label.target.clone();
    }

    let mut config = params.student_train_config.clone();
    config.seed = derive_seed(seed, "student");
    train_classifier(pd.features(), &targets, &config)
}

/// Write targets as `index,mode,confident,target_0,...,target_{C-1}`.
pub fn save_pseudo_label_csv(
    labels: &[(usize, PseudoLabel)],
    num_classes: usize,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        write!(w, "index,mode,confident")?;
        for c in 0..num_classes {
            write!(w, ",target_{c}")?;
        }
        writeln!(w)?;
        for (i, label) in labels {
            write!(w, "{},{},{}", i, label.mode, label.teacher_confident)?;
            for v in label.target.entries() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}
