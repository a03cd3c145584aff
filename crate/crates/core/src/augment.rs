//! Clean-set augmentation by per-class positive-unlabeled filtering.
//!
//! For each class, a bagged ensemble of binary filters is trained with the
//! class's trusted samples (plus previously accepted noisy samples) as
//! positives and a balanced draw of unlabeled-pool and other-class clean
//! samples as negatives. A noisy sample joins the reliable positive set
//! when at least `θ` of the `N` members score it at or above `α`. The
//! reliable set feeds the next round's bootstraps, and after `K` rounds the
//! per-class selections are merged, cross-class conflicts resolved, and the
//! winners relabeled to their selecting class.
//!
//! The procedure reads given labels only on the clean subset, so its output
//! is invariant under any relabeling of the noisy pool.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::dataset::PartitionedDataset;
use crate::error::{Error, Result};
use crate::learner::{one_hot_targets, train_classifier, Classifier, TrainConfig};
use crate::rng::{derive_seed, Rng};

/// Knobs for the augmentation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PuParams {
    pub iterations_k: usize,
    pub ensemble_n: usize,
    pub positive_threshold_alpha: f64,
    pub reliability_theta: usize,
    pub filter_train_config: TrainConfig,
}

impl PuParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations_k < 1 {
            return Err(Error::invalid_param("pu.iterations_k", "must be at least 1"));
        }
        if self.ensemble_n < 1 {
            return Err(Error::invalid_param("pu.ensemble_n", "must be at least 1"));
        }
        let alpha = self.positive_threshold_alpha;
        if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
            return Err(Error::invalid_param(
                "pu.alpha",
                "must lie strictly inside (0, 1)",
            ));
        }
        if self.reliability_theta < 1 || self.reliability_theta > self.ensemble_n {
            return Err(Error::invalid_param(
                "pu.theta",
                format!("must lie in [1, {}]", self.ensemble_n),
            ));
        }
        self.filter_train_config.validate()
    }
}

/// Per-iteration bootstrap sizes: `m = min(|clean|, |reliable|)` positives
/// drawn from the reliable set, `m′ = ⌊(m + |clean|)/2⌋` negatives from
/// each of the two negative pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapSizes {
    pub m_k: usize,
    pub m_prime_k: usize,
}

pub fn compute_bootstrap_sizes(clean_count: usize, reliable_count: usize) -> BootstrapSizes {
    let m_k = clean_count.min(reliable_count);
    BootstrapSizes {
        m_k,
        m_prime_k: (m_k + clean_count) / 2,
    }
}

/// A noisy-pool sample accepted by one class's filter ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliableSample {
    pub index: usize,
    pub votes: usize,
    /// Positive probability averaged over all ensemble members.
    pub mean_score: f64,
}

/// A reliable sample after cross-class conflict resolution, carrying the
/// class it was relabeled to.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSample {
    pub index: usize,
    pub assigned_label: usize,
    pub votes: usize,
    pub mean_score: f64,
}

/// The grown trusted set: original clean indices per class plus the
/// conflict-free selections from the noisy pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCleanSet {
    num_classes: usize,
    clean_by_class: Vec<Vec<usize>>,
    selected: Vec<SelectedSample>,
}

impl AugmentedCleanSet {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn clean_indices_of_class(&self, class: usize) -> &[usize] {
        &self.clean_by_class[class]
    }

    /// Selections sorted by dataset index.
    pub fn selected(&self) -> &[SelectedSample] {
        &self.selected
    }

    pub fn selected_indices_of_class(&self, class: usize) -> Vec<usize> {
        self.selected
            .iter()
            .filter(|s| s.assigned_label == class)
            .map(|s| s.index)
            .collect()
    }

    /// All members of class `i`: clean indices plus selected noisy indices.
    pub fn members_of_class(&self, class: usize) -> Vec<usize> {
        let mut out = self.clean_by_class[class].clone();
        out.extend(self.selected_indices_of_class(class));
        out
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.clean_by_class[class].len()
            + self
                .selected
                .iter()
                .filter(|s| s.assigned_label == class)
                .count()
    }

    pub fn total_selected(&self) -> usize {
        self.selected.len()
    }

    /// Assemble a set from explicit parts; selections are re-sorted by
    /// dataset index. Used by in-crate tests to build controlled fixtures.
    #[cfg(test)]
    pub(crate) fn from_parts(
        num_classes: usize,
        clean_by_class: Vec<Vec<usize>>,
        mut selected: Vec<SelectedSample>,
    ) -> Self {
        assert_eq!(clean_by_class.len(), num_classes);
        assert!(selected.iter().all(|s| s.assigned_label < num_classes));
        selected.sort_by_key(|s| s.index);
        AugmentedCleanSet {
            num_classes,
            clean_by_class,
            selected,
        }
    }
}

/// Augmentation result: the grown set and the dataset with selected
/// samples' given labels rewritten to their assigned class.
#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub set: AugmentedCleanSet,
    pub corrected: PartitionedDataset,
}

fn gather_rows(features: ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), features.ncols()));
    for (row, &i) in indices.iter().enumerate() {
        out.row_mut(row).assign(&features.row(i));
    }
    out
}

/// Draw one member's bootstrap index sets: `m_k` extra positives from the
/// reliable set, `m′_k` negatives from the unlabeled pool minus the
/// reliable set, and `m′_k` negatives from other classes' clean samples.
/// A pool smaller than its request is drawn with replacement; an empty
/// pool yields an empty draw.
pub fn sample_filter_sets(
    class: usize,
    pd: &PartitionedDataset,
    reliable: &[usize],
    sizes: BootstrapSizes,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let draw = |pool: &[usize], k: usize, rng: &mut Rng| -> Vec<usize> {
        if k == 0 || pool.is_empty() {
            Vec::new()
        } else if pool.len() >= k {
            rng.sample_without_replacement(pool, k)
        } else {
            rng.sample_with_replacement(pool, k)
        }
    };

    let pos_extra = draw(reliable, sizes.m_k, &mut rng);

    let reliable_set: std::collections::HashSet<usize> = reliable.iter().copied().collect();
    let neg_noisy_pool: Vec<usize> = pd
        .noisy_indices()
        .into_iter()
        .filter(|i| !reliable_set.contains(i))
        .collect();
    let neg_noisy = draw(&neg_noisy_pool, sizes.m_prime_k, &mut rng);

    let neg_clean_pool: Vec<usize> = pd
        .clean_indices()
        .into_iter()
        .filter(|&i| pd.given_labels()[i] != class)
        .collect();
    let neg_clean = draw(&neg_clean_pool, sizes.m_prime_k, &mut rng);

    (pos_extra, neg_noisy, neg_clean)
}

/// Train the `N` binary filters for one class at one iteration. Member `n`
/// learns positives `D_c^(class) ∪ P′` against negatives `N′ ∪ N″`, each
/// member with its own derived seed for both sampling and training.
pub fn train_filter_ensemble(
    class: usize,
    pd: &PartitionedDataset,
    reliable: &[usize],
    params: &PuParams,
    iteration: usize,
    seed: u64,
) -> Result<Vec<Classifier>> {
    let clean = pd.clean_indices_of_class(class);
    if clean.is_empty() {
        return Err(Error::InvalidInput(format!(
            "class {class} has no clean samples"
        )));
    }
    let sizes = compute_bootstrap_sizes(clean.len(), reliable.len());

    (0..params.ensemble_n)
        .into_par_iter()
        .map(|member| {
            let sample_seed = derive_seed(seed, &format!("sample:{class}:{iteration}:{member}"));
            let (pos_extra, neg_noisy, neg_clean) =
                sample_filter_sets(class, pd, reliable, sizes, sample_seed);

            let mut indices = clean.clone();
            indices.extend(pos_extra);
            let pos_count = indices.len();
            indices.extend(neg_noisy);
            indices.extend(neg_clean);

            let features = gather_rows(pd.features(), &indices);
            let mut labels = vec![1usize; pos_count];
            labels.resize(indices.len(), 0);
            let targets = one_hot_targets(&labels, 2);

            let mut config = params.filter_train_config.clone();
            config.seed = derive_seed(seed, &format!("train:{class}:{iteration}:{member}"));
            train_classifier(features.view(), &targets, &config)
        })
        .collect()
}

/// Vote counting over a score table (`members × samples`): sample `j` is
/// reliable when at least `theta` members score it `≥ alpha`.
pub fn select_from_scores(
    noisy_indices: &[usize],
    scores: ArrayView2<f64>,
    alpha: f64,
    theta: usize,
) -> Vec<ReliableSample> {
    assert_eq!(scores.ncols(), noisy_indices.len(), "score table width");
    let members = scores.nrows();
    let mut out = Vec::new();
    for (j, &index) in noisy_indices.iter().enumerate() {
        let mut votes = 0;
        let mut sum = 0.0;
        for m in 0..members {
            let s = scores[(m, j)];
            if s >= alpha {
                votes += 1;
            }
            sum += s;
        }
        if votes >= theta {
            out.push(ReliableSample {
                index,
                votes,
                mean_score: sum / members as f64,
            });
        }
    }
    out
}

/// Apply the ensemble to the full noisy pool and keep the samples passing
/// the vote criterion. Recomputed from scratch every call; acceptance is
/// not monotone across iterations.
pub fn select_reliable_positives(
    ensemble: &[Classifier],
    pd: &PartitionedDataset,
    alpha: f64,
    theta: usize,
) -> Vec<ReliableSample> {
    let noisy = pd.noisy_indices();
    let features = gather_rows(pd.features(), &noisy);
    let scores = score_table(ensemble, features.view());
    select_from_scores(&noisy, scores.view(), alpha, theta)
}

fn score_table(ensemble: &[Classifier], features: ArrayView2<f64>) -> Array2<f64> {
    let mut scores = Array2::<f64>::zeros((ensemble.len(), features.nrows()));
    for (m, clf) in ensemble.iter().enumerate() {
        scores.row_mut(m).assign(&clf.positive_scores(features));
    }
    scores
}

/// Merge per-class reliable sets into one conflict-free selection. An index
/// claimed by several classes goes to the class with more votes, then the
/// higher mean score; exact ties drop the sample entirely.
pub fn resolve_conflicts(per_class: &[Vec<ReliableSample>]) -> Vec<SelectedSample> {
    let mut claims: std::collections::BTreeMap<usize, Vec<(usize, &ReliableSample)>> =
        std::collections::BTreeMap::new();
    for (class, samples) in per_class.iter().enumerate() {
        for s in samples {
            claims.entry(s.index).or_default().push((class, s));
        }
    }
    let mut out = Vec::new();
    for (index, claimants) in claims {
        let best = claimants
            .iter()
            .max_by(|(_, a), (_, b)| {
                (a.votes, a.mean_score)
                    .partial_cmp(&(b.votes, b.mean_score))
                    .expect("finite scores")
            })
            .expect("non-empty claimant list");
        let tied = claimants
            .iter()
            .filter(|(_, s)| s.votes == best.1.votes && s.mean_score == best.1.mean_score)
            .count();
        if tied == 1 {
            out.push(SelectedSample {
                index,
                assigned_label: best.0,
                votes: best.1.votes,
                mean_score: best.1.mean_score,
            });
        }
    }
    out
}

/// Grow the trusted set: per class, `K` rounds of ensemble training and
/// reliable-positive selection, then cross-class merging and relabeling.
/// Deterministic under `seed` regardless of worker count.
pub fn augment_clean_set(
    pd: &PartitionedDataset,
    params: &PuParams,
    seed: u64,
) -> Result<AugmentOutcome> {
    params.validate()?;
    let c = pd.num_classes();
    let clean_by_class: Vec<Vec<usize>> =
        (0..c).map(|class| pd.clean_indices_of_class(class)).collect();
    for (class, clean) in clean_by_class.iter().enumerate() {
        if clean.is_empty() {
            return Err(Error::InvalidInput(format!(
                "class {class} has no clean samples"
            )));
        }
    }

    let noisy = pd.noisy_indices();
    if noisy.is_empty() {
        let set = AugmentedCleanSet {
            num_classes: c,
            clean_by_class,
            selected: Vec::new(),
        };
        return Ok(AugmentOutcome {
            set,
            corrected: pd.clone(),
        });
    }
    let noisy_features = gather_rows(pd.features(), &noisy);

    let per_class: Vec<Vec<ReliableSample>> = (0..c)
        .into_par_iter()
        .map(|class| -> Result<Vec<ReliableSample>> {
            let mut reliable: Vec<ReliableSample> = Vec::new();
            for iteration in 1..=params.iterations_k {
                let indices: Vec<usize> = reliable.iter().map(|s| s.index).collect();
                let ensemble =
                    train_filter_ensemble(class, pd, &indices, params, iteration, seed)?;
                let scores = score_table(&ensemble, noisy_features.view());
                reliable = select_from_scores(
                    &noisy,
                    scores.view(),
                    params.positive_threshold_alpha,
                    params.reliability_theta,
                );
            }
            Ok(reliable)
        })
        .collect::<Result<Vec<_>>>()?;

    let selected = resolve_conflicts(&per_class);

    let mut given = pd.given_labels().to_vec();
    for s in &selected {
        given[s.index] = s.assigned_label;
    }
    let corrected = pd.with_given_labels(given)?;

    Ok(AugmentOutcome {
        set: AugmentedCleanSet {
            num_classes: c,
            clean_by_class,
            selected,
        },
        corrected,
    })
}

/// Write the selections as `index,assigned_label,votes,mean_score`, one
/// row per selected noisy sample, sorted by index.
pub fn save_augmented_csv(set: &AugmentedCleanSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "index,assigned_label,votes,mean_score")?;
        for s in set.selected() {
            writeln!(w, "{},{},{},{}", s.index, s.assigned_label, s.votes, s.mean_score)?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}
