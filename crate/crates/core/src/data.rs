//! Gaussian-mixture datasets whose splits share one class-conditional law.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{argmax, ClassPrior};
use crate::error::{Error, Result};

/// Isotropic Gaussian class conditionals `N(means[k], sigmas[k]^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub k: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Per-class standard deviation.
    pub sigmas: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Result<Self> {
        let k = means.len();
        let dim = means.first().map_or(0, Vec::len);
        let spec = Self {
            k,
            dim,
            means,
            sigmas,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `k` means evenly spaced on a circle of `radius` in the first two coordinates.
    pub fn circle(k: usize, dim: usize, radius: f64, sigma: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("dim", "circle layout needs dim >= 2"));
        }
        let means = (0..k)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut m = vec![0.0; dim];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect();
        Self::new(means, vec![sigma; k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("mixture.k", "need at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("mixture.dim", "must be positive"));
        }
        if self.means.len() != self.k || self.means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::invalid(
                "mixture.means",
                format!("expected {} rows of length {}", self.k, self.dim),
            ));
        }
        if self.sigmas.len() != self.k || self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid(
                "mixture.sigmas",
                format!("expected {} positive values", self.k),
            ));
        }
        Ok(())
    }

    /// Log density of `x` under class `class`, including the normalizing constant.
    pub fn log_density(&self, class: usize, x: &[f64]) -> f64 {
        let s = self.sigmas[class];
        let sq: f64 = x
            .iter()
            .zip(&self.means[class])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        -0.5 * sq / (s * s)
            - self.dim as f64 * (s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Labeled,
    Unlabeled,
    Test,
}

impl SplitTag {
    fn stream(self) -> u64 {
        match self {
            SplitTag::Labeled => 1,
            SplitTag::Unlabeled => 2,
            SplitTag::Test => 3,
        }
    }
}

/// Row-major feature matrix with optional class labels.
///
/// Labels are stored as class indices; [`Dataset::one_hot`] expands them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<usize>>,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        k: usize,
        dim: usize,
        features: Vec<f64>,
        labels: Option<Vec<usize>>,
        split: SplitTag,
    ) -> Result<Self> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "features",
                format!("length {} is not a multiple of dim {dim}", features.len()),
            ));
        }
        let n = features.len() / dim;
        match (&labels, split) {
            (None, SplitTag::Labeled | SplitTag::Test) => {
                return Err(Error::invalid("labels", "labeled and test splits need labels"))
            }
            (Some(_), SplitTag::Unlabeled) => {
                return Err(Error::invalid("labels", "unlabeled split must not carry labels"))
            }
            (Some(l), _) if l.len() != n => {
                return Err(Error::invalid(
                    "labels",
                    format!("{} labels for {n} rows", l.len()),
                ))
            }
            (Some(l), _) => {
                if let Some(bad) = l.iter().find(|&&y| y >= k) {
                    return Err(Error::invalid("labels", format!("label {bad} outside [0, {k})")));
                }
            }
            (None, SplitTag::Unlabeled) => {}
        }
        Ok(Self {
            k,
            dim,
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn one_hot(&self, i: usize) -> Option<Vec<f64>> {
        self.labels.as_ref().map(|l| {
            let mut v = vec![0.0; self.k];
            v[l[i]] = 1.0;
            v
        })
    }

    pub fn class_counts(&self) -> Option<Vec<u64>> {
        self.labels.as_ref().map(|l| count_labels(l, self.k))
    }
}

pub(crate) fn count_labels(labels: &[usize], k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Ground-truth labels of an unlabeled split, kept apart from the features.
///
/// Only evaluation code should call [`SealedLabels::reveal`]; the trainer never sees them.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedLabels {
    k: usize,
    labels: Vec<usize>,
}

impl SealedLabels {
    pub fn new(k: usize, labels: Vec<usize>) -> Self {
        Self { k, labels }
    }

    pub fn reveal(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<u64> {
        count_labels(&self.labels, self.k)
    }

    pub fn prior(&self) -> Result<ClassPrior> {
        crate::distributions::prior_from_counts(&self.class_counts())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub dataset: Dataset,
    /// Present only for the unlabeled split.
    pub truth: Option<SealedLabels>,
}

/// Deterministic RNG for one split of one seed.
pub fn split_rng(seed: u64, split: SplitTag) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    rng
}

/// Draws `counts[k]` samples from each class conditional, rows in random order.
pub fn synthesize(
    spec: &MixtureSpec,
    counts: &[u64],
    split: SplitTag,
    seed: u64,
) -> Result<Synthesized> {
    spec.validate()?;
    if counts.len() != spec.k {
        return Err(Error::invalid(
            "counts",
            format!("expected {} entries, got {}", spec.k, counts.len()),
        ));
    }
    let mut rng = split_rng(seed, split);
    let total: u64 = counts.iter().sum();
    let mut features = Vec::with_capacity(total as usize * spec.dim);
    let mut labels = Vec::with_capacity(total as usize);
    for (class, &n) in counts.iter().enumerate() {
        let normal = Normal::new(0.0, spec.sigmas[class]).expect("sigma validated positive");
        for _ in 0..n {
            features.extend(spec.means[class].iter().map(|m| m + normal.sample(&mut rng)));
            labels.push(class);
        }
    }
    // Interleave classes so row order carries no label information.
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let features: Vec<f64> = order
        .iter()
        .flat_map(|&i| features[i * spec.dim..(i + 1) * spec.dim].iter().copied())
        .collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let (labels, truth) = match split {
        SplitTag::Unlabeled => (None, Some(SealedLabels::new(spec.k, labels))),
        _ => (Some(labels), None),
    };
    Ok(Synthesized {
        dataset: Dataset::new(spec.k, spec.dim, features, labels, split)?,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            sigma_weak: 0.05,
            sigma_strong: 0.5,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_weak >= 0.0) {
            return Err(Error::invalid("augmentation.sigma_weak", "must be >= 0"));
        }
        if !(self.sigma_strong >= self.sigma_weak) {
            return Err(Error::invalid(
                "augmentation.sigma_strong",
                "must be >= sigma_weak",
            ));
        }
        Ok(())
    }

    pub fn sigma(&self, strength: Strength) -> f64 {
        match strength {
            Strength::Weak => self.sigma_weak,
            Strength::Strong => self.sigma_strong,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

/// Adds isotropic Gaussian noise drawn from `rng`.
pub fn augment_with<R: Rng + ?Sized>(
    x: &[f64],
    spec: &AugmentationSpec,
    strength: Strength,
    rng: &mut R,
) -> Vec<f64> {
    let sigma = spec.sigma(strength);
    if sigma == 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    x.iter().map(|v| v + normal.sample(rng)).collect()
}

pub fn augment(x: &[f64], spec: &AugmentationSpec, strength: Strength, seed: u64) -> Vec<f64> {
    augment_with(x, spec, strength, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Subsamples every class down to the smallest class count.
pub fn balanced_resample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::invalid("dataset", "balanced resampling needs labels"))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid("dataset", format!("class {empty} has no samples")));
    }
    let per_class = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(per_class * ds.k * ds.dim);
    let mut out_labels = Vec::with_capacity(per_class * ds.k);
    for (class, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let mut keep = idx[..per_class].to_vec();
        keep.sort_unstable();
        for i in keep {
            features.extend_from_slice(ds.row(i));
            out_labels.push(class);
        }
    }
    Dataset::new(ds.k, ds.dim, features, Some(out_labels), ds.split)
}

/// Writes `f0,...,f{dim-1}[,label]`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header: Vec<String> = (0..ds.dim).map(|j| format!("f{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(wrap)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes sealed labels as a single `label` column.
pub fn write_truth_csv(truth: &SealedLabels, path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["label"]).map_err(wrap)?;
    for y in truth.reveal() {
        w.write_record([y.to_string()]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_csv`]. A trailing `label` column marks a labeled split,
/// tagged `split` (which must then be labeled or test); without it the split is unlabeled.
pub fn load_csv(path: &Path, k: usize, split: SplitTag) -> Result<Dataset> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let header = r
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let has_label = header.iter().next_back() == Some("label");
    let dim = header.len() - usize::from(has_label);
    for (j, name) in header.iter().take(dim).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("column {j} should be named f{j}, found {name:?}")));
        }
    }
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        for field in rec.iter().take(dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            features.push(v);
        }
        if has_label {
            let field = &rec[dim];
            let y: usize = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a class index: {field:?}")))?;
            if y >= k {
                return Err(parse_err(line, format!("label {y} outside [0, {k})")));
            }
            labels.push(y);
        }
    }
    let (labels, split) = if has_label {
        let split = if split == SplitTag::Unlabeled {
            SplitTag::Labeled
        } else {
            split
        };
        (Some(labels), split)
    } else {
        (None, SplitTag::Unlabeled)
    };
    Dataset::new(k, dim, features, labels, split)
}

/// Class index with the highest value; ties go to the lower index.
pub fn predict(scores: &[f64]) -> usize {
    argmax(scores)
}
