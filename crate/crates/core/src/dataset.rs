//! Datasets, clean/noisy partitioning, and synthetic label-noise injection.
//!
//! A [`PartitionedDataset`] carries two label arrays: `given_labels`, which
//! the training pipeline sees and which noise injection corrupts, and the
//! hidden true labels, which only evaluation code may read. Clean samples
//! (the trusted subset) always keep `given = true`; noise touches only the
//! noisy remainder.
//!
//! Symmetric noise redraws the labels of a `100r/(100−π)%` slice of the
//! noisy pool uniformly over all classes, so the dataset-wide relabeled
//! fraction is `r%` and the actually-wrong fraction is `r·(C−1)/C %`.
//! Asymmetric noise flips the same per-class fraction along fixed
//! source→target pairs.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric" => Ok(NoiseKind::Asymmetric),
            other => Err(Error::invalid_param(
                "noise.kind",
                format!("unknown noise kind `{other}`"),
            )),
        }
    }
}

/// What to corrupt and how much, as a class-level percentage.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level_r: f64,
    /// source → target flips; asymmetric only.
    pub pair_map: Vec<(usize, usize)>,
}

impl NoiseSpec {
    pub fn symmetric(level_r: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            level_r,
            pair_map: Vec::new(),
        }
    }

    pub fn asymmetric(level_r: f64, pair_map: Vec<(usize, usize)>) -> Self {
        NoiseSpec {
            kind: NoiseKind::Asymmetric,
            level_r,
            pair_map,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.level_r.is_finite() && (0.0..=100.0).contains(&self.level_r)) {
            return Err(Error::invalid_param(
                "noise.level_r",
                "must lie in [0, 100]",
            ));
        }
        if self.kind == NoiseKind::Asymmetric {
            if self.pair_map.is_empty() {
                return Err(Error::invalid_param(
                    "noise.pair_map",
                    "asymmetric noise needs at least one source→target pair",
                ));
            }
            let mut seen = vec![false; num_classes];
            for &(src, tgt) in &self.pair_map {
                if src >= num_classes || tgt >= num_classes {
                    return Err(Error::invalid_param(
                        "noise.pair_map",
                        format!("pair ({src},{tgt}) names a class outside [0, {num_classes})"),
                    ));
                }
                if src == tgt {
                    return Err(Error::invalid_param(
                        "noise.pair_map",
                        format!("pair ({src},{tgt}) maps a class to itself"),
                    ));
                }
                if seen[src] {
                    return Err(Error::invalid_param(
                        "noise.pair_map",
                        format!("source class {src} appears twice"),
                    ));
                }
                seen[src] = true;
            }
        }
        Ok(())
    }
}

/// Dense feature matrix with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid_param("num_classes", "must be at least 2"));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one sample and one feature".into(),
            ));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Read a dataset from CSV: header `f0,...,f{dim-1},label`, one sample per
/// row. `line` in errors is 1-based and counts the header.
pub fn load_csv_dataset(path: &Path, num_classes: usize) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let reader = BufReader::new(file);
    let format_err = |line: usize, message: String| Error::FileFormat {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file".into()))?;
    let header = header.map_err(Error::io(path))?;
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.len() < 2 || columns[columns.len() - 1] != "label" {
        return Err(format_err(
            1,
            "header must list feature columns followed by `label`".into(),
        ));
    }
    let dim = columns.len() - 1;

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(Error::io(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(format_err(
                line_no,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        for field in &fields[..dim] {
            let value: f64 = field
                .parse()
                .map_err(|_| format_err(line_no, format!("bad feature value `{field}`")))?;
            if !value.is_finite() {
                return Err(format_err(
                    line_no,
                    format!("non-finite feature value `{field}`"),
                ));
            }
            rows.push(value);
        }
        let label: usize = fields[dim]
            .parse()
            .map_err(|_| format_err(line_no, format!("bad label `{}`", fields[dim])))?;
        if label >= num_classes {
            return Err(format_err(
                line_no,
                format!("label {label} outside [0, {num_classes})"),
            ));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(format_err(1, "no data rows".into()));
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, dim), rows).expect("row-major assembly");
    LabeledDataset::new(features, labels, num_classes)
}

/// Write a dataset as CSV with shortest round-trip float formatting, the
/// inverse of [`load_csv_dataset`].
pub fn save_dataset_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        for d in 0..ds.dim() {
            write!(w, "f{d},")?;
        }
        writeln!(w, "label")?;
        for (row, &label) in ds.features.rows().into_iter().zip(&ds.labels) {
            for v in row {
                write!(w, "{v},")?;
            }
            writeln!(w, "{label}")?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}

/// Isotropic unit-variance Gaussian clusters, one per class, grouped by
/// class in row order. Class `i` is centered on coordinate axis `i mod dim`
/// at distance `separation · (1 + i/dim)` from the origin, so all class
/// means are distinct whenever `separation > 0`.
pub fn make_synthetic_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::invalid_param("num_classes", "must be at least 2"));
    }
    if per_class < 1 {
        return Err(Error::invalid_param("per_class", "must be at least 1"));
    }
    if dim < 1 {
        return Err(Error::invalid_param("dim", "must be at least 1"));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::invalid_param("separation", "must be non-negative"));
    }
    let mut rng = Rng::new(seed);
    let n = num_classes * per_class;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let axis = class % dim;
        let radius = separation * (1 + class / dim) as f64;
        for row in class * per_class..(class + 1) * per_class {
            for d in 0..dim {
                let center = if d == axis { radius } else { 0.0 };
                features[(row, d)] = center + rng.normal();
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, num_classes)
}

/// A dataset split into a trusted clean subset and a noisy remainder, with
/// hidden ground truth for evaluation.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    base: LabeledDataset,
    given_labels: Vec<usize>,
    clean_mask: Vec<bool>,
    clean_ratio_pi: f64,
    noise_level_r: f64,
}

impl PartitionedDataset {
    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.base.features()
    }

    pub fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Ground-truth labels. Evaluation-only: the training pipeline must
    /// never branch on these, and nothing outside metrics/reporting should
    /// call this.
    pub fn hidden_true_labels(&self) -> &[usize] {
        self.base.labels()
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn clean_mask(&self) -> &[bool] {
        &self.clean_mask
    }

    pub fn is_clean(&self, index: usize) -> bool {
        self.clean_mask[index]
    }

    pub fn clean_ratio_pi(&self) -> f64 {
        self.clean_ratio_pi
    }

    pub fn noise_level_r(&self) -> f64 {
        self.noise_level_r
    }

    pub fn clean_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.clean_mask[i]).collect()
    }

    pub fn noisy_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.clean_mask[i]).collect()
    }

    /// Clean samples of one class, by (trusted) given label.
    pub fn clean_indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.clean_mask[i] && self.given_labels[i] == class)
            .collect()
    }

    /// Replace the given labels wholesale, preserving the partition.
    /// Rejects labels out of range and any clean sample whose new given
    /// label disagrees with its true label.
    pub fn with_given_labels(&self, given_labels: Vec<usize>) -> Result<PartitionedDataset> {
        if given_labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: given_labels.len(),
            });
        }
        let c = self.num_classes();
        for (i, &label) in given_labels.iter().enumerate() {
            if label >= c {
                return Err(Error::InvalidInput(format!(
                    "label {label} outside [0, {c}) at index {i}"
                )));
            }
            if self.clean_mask[i] && label != self.base.labels()[i] {
                return Err(Error::InvalidInput(format!(
                    "clean sample {i} cannot change its given label"
                )));
            }
        }
        Ok(PartitionedDataset {
            base: self.base.clone(),
            given_labels,
            clean_mask: self.clean_mask.clone(),
            clean_ratio_pi: self.clean_ratio_pi,
            noise_level_r: self.noise_level_r,
        })
    }
}

/// Hold out a class-balanced clean subset: per class, `⌊π%/C · n⌋` samples
/// chosen uniformly at random. Given labels start identical to true labels.
pub fn split_clean_noisy(
    ds: LabeledDataset,
    pi_percent: f64,
    seed: u64,
) -> Result<PartitionedDataset> {
    if !(pi_percent.is_finite() && (0.0..=100.0).contains(&pi_percent)) {
        return Err(Error::invalid_param("pi_percent", "must lie in [0, 100]"));
    }
    let n = ds.len();
    let c = ds.num_classes();
    let per_class = ((n as f64 * pi_percent) / (100.0 * c as f64)).floor() as usize;
    if per_class < 1 {
        return Err(Error::invalid_param(
            "pi_percent",
            format!("per-class clean quota ⌊{pi_percent}%/{c} × {n}⌋ is zero"),
        ));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &label) in ds.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut clean_mask = vec![false; n];
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::invalid_param(
                "pi_percent",
                format!(
                    "clean quota {per_class} exceeds class {class} size {}",
                    members.len()
                ),
            ));
        }
        for &i in &rng.sample_without_replacement(members, per_class) {
            clean_mask[i] = true;
        }
    }
    let given_labels = ds.labels().to_vec();
    Ok(PartitionedDataset {
        base: ds,
        given_labels,
        clean_mask,
        clean_ratio_pi: pi_percent,
        noise_level_r: 0.0,
    })
}

/// Corrupt given labels on the noisy subset according to `spec`, leaving
/// clean samples and true labels untouched. The corrupted fraction of each
/// targeted pool is `100r/(100−π)%`, which cancels the clean holdout so the
/// dataset-wide relabeled fraction equals `r%` (symmetric) or `r%` of the
/// source classes (asymmetric).
pub fn inject_noise(
    pd: &PartitionedDataset,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<PartitionedDataset> {
    spec.validate(pd.num_classes())?;
    let pi = pd.clean_ratio_pi();
    if spec.level_r > 100.0 - pi {
        return Err(Error::invalid_param(
            "noise.level_r",
            format!(
                "effective fraction 100·{}/(100−{pi})% exceeds 100%",
                spec.level_r
            ),
        ));
    }
    for &i in &pd.noisy_indices() {
        if pd.given_labels[i] != pd.base.labels()[i] {
            return Err(Error::InvalidInput(
                "noise already injected: noisy given labels differ from truth".into(),
            ));
        }
    }

    let c = pd.num_classes();
    let mut rng = Rng::new(seed);
    let mut given = pd.given_labels.clone();

    match spec.kind {
        NoiseKind::Symmetric => {
            let pool = pd.noisy_indices();
            let count = noise_quota(pool.len(), spec.level_r, pi);
            for &i in &rng.sample_without_replacement(&pool, count) {
                given[i] = rng.below(c);
            }
        }
        NoiseKind::Asymmetric => {
            // Membership comes from a pre-injection snapshot, so reciprocal
            // pairs (a→b, b→a) never chain flips.
            let snapshot = pd.given_labels.clone();
            for &(src, tgt) in &spec.pair_map {
                let pool: Vec<usize> = pd
                    .noisy_indices()
                    .into_iter()
                    .filter(|&i| snapshot[i] == src)
                    .collect();
                let count = noise_quota(pool.len(), spec.level_r, pi);
                for &i in &rng.sample_without_replacement(&pool, count) {
                    given[i] = tgt;
                }
            }
        }
    }

    Ok(PartitionedDataset {
        base: pd.base.clone(),
        given_labels: given,
        clean_mask: pd.clean_mask.clone(),
        clean_ratio_pi: pi,
        noise_level_r: spec.level_r,
    })
}

/// How many samples of a pool of `pool_size` get relabeled at class-level
/// noise `r` with a `π%` clean holdout: `⌊pool · r / (100 − π)⌋`.
/// Multiplying before dividing keeps exact fractions exact: a pool of
/// 45,000 at r = 30, π = 10 yields precisely 15,000, where dividing first
/// would round down to 14,999.
pub fn noise_quota(pool_size: usize, level_r: f64, pi_percent: f64) -> usize {
    ((pool_size as f64 * level_r) / (100.0 - pi_percent)).floor() as usize
}

/// Partition sidecar CSV: `index,clean,given_label,true_label`, one row per
/// sample. Dumps hidden truth; meant for offline analysis, not for feeding
/// back into training.
pub fn save_partition_csv(pd: &PartitionedDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io_err = Error::io(path);
    let result = (|| -> std::io::Result<()> {
        writeln!(w, "index,clean,given_label,true_label")?;
        for i in 0..pd.len() {
            writeln!(
                w,
                "{i},{},{},{}",
                pd.clean_mask[i] as u8,
                pd.given_labels[i],
                pd.base.labels()[i]
            )?;
        }
        w.flush()
    })();
    result.map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{one_hot_targets, train_classifier, LrSchedule, TrainConfig};
    use ndarray::array;

    fn oracle_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_schedule: LrSchedule::with_steps(0.05, &[(20, 10.0)]),
            momentum: 0.9,
            weight_decay: 1e-4,
            mixup_mu: 0.0,
            entropy_weight: 0.0,
            hidden_units: 0,
            seed,
        }
    }

    fn holdout_accuracy(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> f64 {
        let n = ds.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = Rng::new(seed);
        rng.shuffle(&mut order);
        let cut = (n as f64 * train_fraction) as usize;
        let (train_idx, test_idx) = order.split_at(cut);

        let gather = |idx: &[usize]| {
            let mut x = Array2::<f64>::zeros((idx.len(), ds.dim()));
            let mut y = Vec::with_capacity(idx.len());
            for (row, &i) in idx.iter().enumerate() {
                x.row_mut(row).assign(&ds.features().row(i));
                y.push(ds.labels()[i]);
            }
            (x, y)
        };
        let (x_train, y_train) = gather(train_idx);
        let (x_test, y_test) = gather(test_idx);
        let targets = one_hot_targets(&y_train, ds.num_classes());
        let clf = train_classifier(x_train.view(), &targets, &oracle_config(seed)).unwrap();
        let probs = clf.predict_batch(x_test.view());
        let correct = probs
            .rows()
            .into_iter()
            .zip(&y_test)
            .filter(|(row, &label)| {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                pred == label
            })
            .count();
        correct as f64 / y_test.len() as f64
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = Rng::new(51);
        let features = Array2::from_shape_fn((20, 5), |_| rng.normal() * 1e3);
        let labels: Vec<usize> = (0..20).map(|_| rng.below(4)).collect();
        let ds = LabeledDataset::new(features, labels, 4).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset_csv(&ds, &path).unwrap();
        let loaded = load_csv_dataset(&path, 4).unwrap();

        assert_eq!(loaded.labels(), ds.labels());
        for (a, b) in loaded.features().iter().zip(ds.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_load_parses_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "f0,f1,label\n1.5,2.0,0\n-1,0.25,1\n3,4,0\n0,0,1\n").unwrap();
        let ds = load_csv_dataset(&path, 2).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels(), &[0, 1, 0, 1]);
        assert_eq!(ds.features().row(1), array![-1.0, 0.25].view());
    }

    #[test]
    fn csv_load_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();

        let label_range = dir.path().join("range.csv");
        std::fs::write(&label_range, "f0,label\n0.5,1\n0.5,7\n").unwrap();
        match load_csv_dataset(&label_range, 3).unwrap_err() {
            Error::FileFormat { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains('7'), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }

        let bad_field_count = dir.path().join("fields.csv");
        std::fs::write(&bad_field_count, "f0,f1,label\n1,2,0\n1,2\n").unwrap();
        match load_csv_dataset(&bad_field_count, 2).unwrap_err() {
            Error::FileFormat { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }

        let non_finite = dir.path().join("nan.csv");
        std::fs::write(&non_finite, "f0,label\nNaN,0\n").unwrap();
        match load_csv_dataset(&non_finite, 2).unwrap_err() {
            Error::FileFormat { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("non-finite"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }

        let no_label_column = dir.path().join("header.csv");
        std::fs::write(&no_label_column, "f0,f1\n1,2\n").unwrap();
        match load_csv_dataset(&no_label_column, 2).unwrap_err() {
            Error::FileFormat { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn blobs_are_deterministic_under_seed() {
        let a = make_synthetic_blobs(3, 10, 4, 2.0, 9).unwrap();
        let b = make_synthetic_blobs(3, 10, 4, 2.0, 9).unwrap();
        for (u, v) in a.features().iter().zip(b.features().iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn zero_separation_blobs_are_indistinguishable() {
        let ds = make_synthetic_blobs(2, 500, 4, 0.0, 33).unwrap();
        let acc = holdout_accuracy(&ds, 0.8, 1);
        assert!((0.35..=0.65).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn well_separated_blobs_are_nearly_perfectly_classifiable() {
        let ds = make_synthetic_blobs(3, 1000, 8, 6.0, 17).unwrap();
        let acc = holdout_accuracy(&ds, 0.8, 2);
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn blob_means_are_distinct_across_many_classes() {
        // More classes than dimensions exercises the ring layout.
        let ds = make_synthetic_blobs(10, 200, 4, 6.0, 21).unwrap();
        assert_eq!(ds.len(), 2000);
        // Class 1 sits on axis 1; class 5 shares the axis at double radius.
        let mean_of = |class: usize| {
            let rows: Vec<usize> = (class * 200..(class + 1) * 200).collect();
            let mut mean = vec![0.0; 4];
            for &r in &rows {
                for d in 0..4 {
                    mean[d] += ds.features()[(r, d)] / 200.0;
                }
            }
            mean
        };
        let m1 = mean_of(1);
        let m5 = mean_of(5);
        assert!((m1[1] - 6.0).abs() < 0.5, "{m1:?}");
        assert!((m5[1] - 12.0).abs() < 0.5, "{m5:?}");
    }

    #[test]
    fn split_yields_balanced_clean_quota() {
        let ds = make_synthetic_blobs(10, 5000, 4, 3.0, 7).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 42).unwrap();
        assert_eq!(pd.clean_indices().len(), 5000);
        for class in 0..10 {
            assert_eq!(pd.clean_indices_of_class(class).len(), 500);
        }
        assert_eq!(pd.given_labels(), pd.hidden_true_labels());
    }

    #[test]
    fn split_seeds_move_the_selection_but_not_the_counts() {
        let ds = make_synthetic_blobs(4, 100, 3, 2.0, 5).unwrap();
        let a = split_clean_noisy(ds.clone(), 20.0, 1).unwrap();
        let b = split_clean_noisy(ds, 20.0, 2).unwrap();
        assert_ne!(a.clean_mask(), b.clean_mask());
        for class in 0..4 {
            assert_eq!(
                a.clean_indices_of_class(class).len(),
                b.clean_indices_of_class(class).len()
            );
        }
    }

    #[test]
    fn split_with_full_pi_leaves_no_noisy_pool() {
        let ds = make_synthetic_blobs(2, 50, 2, 1.0, 3).unwrap();
        let pd = split_clean_noisy(ds, 100.0, 1).unwrap();
        assert!(pd.noisy_indices().is_empty());
    }

    #[test]
    fn split_rejects_oversized_or_empty_quota() {
        // Unbalanced labels: class 1 has a single member, quota of 25 each.
        let features = Array2::from_shape_fn((100, 2), |(i, j)| (i + j) as f64);
        let mut labels = vec![0usize; 100];
        labels[0] = 1;
        let ds = LabeledDataset::new(features, labels, 2).unwrap();
        assert!(split_clean_noisy(ds.clone(), 50.0, 1).is_err());

        // Quota rounds to zero.
        let small = make_synthetic_blobs(10, 5, 2, 1.0, 1).unwrap();
        assert!(split_clean_noisy(small, 1.0, 1).is_err());
    }

    #[test]
    fn noise_quota_is_exact_on_round_fractions() {
        assert_eq!(noise_quota(45_000, 30.0, 10.0), 15_000);
        assert_eq!(noise_quota(45_000, 0.0, 10.0), 0);
        assert_eq!(noise_quota(45_000, 90.0, 10.0), 45_000);
        assert_eq!(noise_quota(950, 60.0, 5.0), 600);
    }

    #[test]
    fn symmetric_noise_wrong_fraction_tracks_the_binomial() {
        let ds = make_synthetic_blobs(10, 5000, 4, 3.0, 11).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 13).unwrap();
        let noisy = inject_noise(&pd, &NoiseSpec::symmetric(30.0), 17).unwrap();

        let wrong = noisy
            .noisy_indices()
            .into_iter()
            .filter(|&i| noisy.given_labels()[i] != pd.given_labels()[i])
            .count();
        // 15,000 redraws, each landing on a wrong label with probability
        // 9/10 (the redraw is uniform over all 10 classes).
        let expected = 15000.0 * 0.9;
        let sigma = (15000.0f64 * 0.9 * 0.1).sqrt();
        assert!(
            (wrong as f64 - expected).abs() <= 3.0 * sigma,
            "wrong-label count {wrong} vs expected {expected} ± {:.1}",
            3.0 * sigma
        );
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = make_synthetic_blobs(3, 100, 3, 2.0, 19).unwrap();
        let pd = split_clean_noisy(ds, 12.0, 23).unwrap();
        let noisy = inject_noise(&pd, &NoiseSpec::symmetric(0.0), 29).unwrap();
        assert_eq!(noisy.given_labels(), noisy.hidden_true_labels());
    }

    #[test]
    fn clean_samples_survive_every_noise_spec() {
        let ds = make_synthetic_blobs(4, 200, 3, 2.0, 31).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 37).unwrap();
        let specs = [
            NoiseSpec::symmetric(80.0),
            NoiseSpec::asymmetric(70.0, vec![(0, 1), (2, 3)]),
        ];
        for spec in &specs {
            for seed in 0..3 {
                let noisy = inject_noise(&pd, spec, seed).unwrap();
                for &i in &noisy.clean_indices() {
                    assert_eq!(noisy.given_labels()[i], noisy.hidden_true_labels()[i]);
                }
                assert_eq!(noisy.hidden_true_labels(), pd.hidden_true_labels());
            }
        }
    }

    #[test]
    fn asymmetric_noise_only_flips_along_pairs() {
        let ds = make_synthetic_blobs(4, 500, 3, 2.0, 41).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 43).unwrap();
        let pairs = vec![(0usize, 1usize), (2, 3)];
        let noisy = inject_noise(&pd, &NoiseSpec::asymmetric(70.0, pairs.clone()), 47).unwrap();

        let mut corrupted = 0;
        for i in 0..noisy.len() {
            let (t, g) = (noisy.hidden_true_labels()[i], noisy.given_labels()[i]);
            if t != g {
                corrupted += 1;
                assert!(pairs.contains(&(t, g)), "unexpected flip {t}→{g}");
            }
        }
        // Sources are half the classes, so the overall corrupted fraction
        // is 0.5·r% of the dataset, up to per-class flooring.
        let expected = 0.5 * 0.70 * noisy.len() as f64;
        assert!(
            (corrupted as f64 - expected).abs() <= 2.0,
            "corrupted {corrupted}, expected ≈{expected}"
        );
    }

    #[test]
    fn reciprocal_pairs_do_not_chain_flips() {
        let ds = make_synthetic_blobs(2, 300, 3, 2.0, 53).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 59).unwrap();
        let noisy = inject_noise(&pd, &NoiseSpec::asymmetric(40.0, vec![(0, 1), (1, 0)]), 61).unwrap();
        for i in 0..noisy.len() {
            let (t, g) = (noisy.hidden_true_labels()[i], noisy.given_labels()[i]);
            if t != g {
                assert!((t == 0 && g == 1) || (t == 1 && g == 0));
            }
        }
        // Roughly 40/90 of each class's noisy pool flipped.
        let wrong = (0..noisy.len())
            .filter(|&i| noisy.given_labels()[i] != noisy.hidden_true_labels()[i])
            .count();
        assert!(wrong > 150, "wrong {wrong}");
    }

    #[test]
    fn injection_is_pure_under_seed() {
        let ds = make_synthetic_blobs(3, 200, 3, 2.0, 67).unwrap();
        let pd = split_clean_noisy(ds, 9.0, 71).unwrap();
        let spec = NoiseSpec::symmetric(50.0);
        let a = inject_noise(&pd, &spec, 73).unwrap();
        let b = inject_noise(&pd, &spec, 73).unwrap();
        assert_eq!(a.given_labels(), b.given_labels());
        let c = inject_noise(&pd, &spec, 74).unwrap();
        assert_ne!(a.given_labels(), c.given_labels());
    }

    #[test]
    fn injection_rejects_impossible_fraction() {
        let ds = make_synthetic_blobs(2, 100, 2, 2.0, 79).unwrap();
        let pd = split_clean_noisy(ds, 10.0, 83).unwrap();
        assert!(inject_noise(&pd, &NoiseSpec::symmetric(95.0), 1).is_err());
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::symmetric(130.0).validate(4).is_err());
        assert!(NoiseSpec::asymmetric(30.0, vec![]).validate(4).is_err());
        assert!(NoiseSpec::asymmetric(30.0, vec![(0, 0)]).validate(4).is_err());
        assert!(NoiseSpec::asymmetric(30.0, vec![(0, 1), (0, 2)])
            .validate(4)
            .is_err());
        assert!(NoiseSpec::asymmetric(30.0, vec![(0, 5)]).validate(4).is_err());
        assert!(NoiseSpec::asymmetric(30.0, vec![(0, 1), (2, 3)])
            .validate(4)
            .is_ok());
    }

    #[test]
    fn with_given_labels_guards_the_clean_set() {
        let ds = make_synthetic_blobs(3, 50, 2, 2.0, 89).unwrap();
        let pd = split_clean_noisy(ds, 30.0, 97).unwrap();
        let clean = pd.clean_indices()[0];

        let mut tampered = pd.given_labels().to_vec();
        tampered[clean] = (tampered[clean] + 1) % 3;
        assert!(pd.with_given_labels(tampered).is_err());

        let noisy = pd.noisy_indices()[0];
        let mut rewritten = pd.given_labels().to_vec();
        rewritten[noisy] = (rewritten[noisy] + 1) % 3;
        let updated = pd.with_given_labels(rewritten.clone()).unwrap();
        assert_eq!(updated.given_labels(), rewritten.as_slice());
    }

    #[test]
    fn partition_csv_lists_every_sample() {
        let ds = make_synthetic_blobs(2, 10, 2, 2.0, 101).unwrap();
        let pd = split_clean_noisy(ds, 20.0, 103).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.csv");
        save_partition_csv(&pd, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,clean,given_label,true_label");
        assert_eq!(lines.len(), 21);
        assert!(lines[1].starts_with("0,"));
    }
}
