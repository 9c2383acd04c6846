//! Datasets, non-IID partitioning and label-noise injection.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::Tensor;

/// Features plus integer labels. After corruption `clean_labels` keeps the
/// original annotations so realised noise can be measured.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    clean_labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if n != labels.len() {
            return Err(Error::dim(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Validation("need at least 2 classes".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Validation(format!(
                "sample {i}: label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            clean_labels: None,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    /// Clean labels when known, otherwise the recorded ones.
    pub fn true_labels(&self) -> &[usize] {
        self.clean_labels.as_deref().unwrap_or(&self.labels)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Fraction of samples whose label differs from the clean label.
    pub fn flip_fraction(&self) -> f64 {
        match &self.clean_labels {
            None => 0.0,
            Some(clean) => {
                let flipped = clean
                    .iter()
                    .zip(&self.labels)
                    .filter(|(a, b)| a != b)
                    .count();
                flipped as f64 / self.len() as f64
            }
        }
    }

    /// Shuffles and splits off `fraction` of the samples (at least one, and
    /// leaving at least one). Returns `(rest, held_out)`.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::Config(format!(
                "split fraction must be in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::Config("cannot split a single-sample dataset".into()));
        }
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng(seed));
        let (h, r) = idx.split_at(held);
        Ok((self.subset(r), self.subset(h)))
    }
}

/// Gaussian class clusters: per-class means `~ N(0, spread²·I)` fixed by
/// the seed, unit within-class variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub mean_spread: f64,
    pub seed: u64,
}

pub const DEFAULT_MEAN_SPREAD: f64 = 1.0;

impl SyntheticSpec {
    pub fn new(num_classes: usize, dim: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_classes,
            dim,
            mean_spread: DEFAULT_MEAN_SPREAD,
            seed,
        }
    }

    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut r = rng(crate::seed::derive_seed(self.seed, &[0x6d65616e]));
        (0..self.num_classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.mean_spread * r.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Draws `n` samples; labels cycle through the classes so counts differ
    /// by at most one, then sample order is shuffled.
    pub fn sample(&self, n: usize) -> Result<LabeledDataset> {
        if self.num_classes < 2 || self.dim < 2 {
            return Err(Error::Config(
                "synthetic data needs num_classes >= 2 and dim >= 2".into(),
            ));
        }
        if n < self.num_classes {
            return Err(Error::Config(format!(
                "n = {n} is smaller than num_classes = {}",
                self.num_classes
            )));
        }
        if !(self.mean_spread > 0.0) {
            return Err(Error::Config("mean_spread must be > 0".into()));
        }
        let means = self.class_means();
        let mut r = rng(crate::seed::derive_seed(self.seed, &[n as u64]));
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        labels.shuffle(&mut r);
        let mut data = Vec::with_capacity(n * self.dim);
        for &y in &labels {
            for mu in &means[y] {
                data.push(mu + r.sample::<f64, _>(StandardNormal));
            }
        }
        LabeledDataset::new(
            Tensor::new(vec![n, self.dim], data)?,
            labels,
            self.num_classes,
        )
    }
}

pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    SyntheticSpec::new(num_classes, dim, seed).sample(n)
}

/// Disjoint, exhaustive assignment of parent-dataset indices to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub gamma: f64,
    pub seed: u64,
}

impl PartitionPlan {
    /// Per-client class proportions (rows sum to 1).
    pub fn class_proportions(&self, labels: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut c = vec![0.0; num_classes];
                for &i in idx {
                    c[labels[i]] += 1.0;
                }
                let n = idx.len().max(1) as f64;
                c.iter().map(|v| v / n).collect()
            })
            .collect()
    }

    /// Mean chi-square distance of client class proportions from uniform.
    pub fn skew(&self, labels: &[usize], num_classes: usize) -> f64 {
        let u = 1.0 / num_classes as f64;
        let props = self.class_proportions(labels, num_classes);
        props
            .iter()
            .map(|row| row.iter().map(|p| (p - u) * (p - u) / u).sum::<f64>())
            .sum::<f64>()
            / props.len() as f64
    }
}

const PARTITION_RETRIES: usize = 100;

fn sample_dirichlet<R: Rng>(gamma: f64, k: usize, r: &mut R) -> Vec<f64> {
    let g = Gamma::new(gamma, 1.0).expect("gamma validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| g.sample(r)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 && s.is_finite() {
            return draws.into_iter().map(|d| d / s).collect();
        }
    }
}

/// Integer counts summing to `total`, proportional to `props`; leftovers go
/// to the largest fractional parts (lowest index on ties).
pub fn largest_remainder(total: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits each class over clients with proportions drawn from `Dir(gamma)`.
///
/// If some client would end up with no samples the whole allocation is
/// redrawn from the continuing random stream, up to 100 times.
pub fn dirichlet_partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    gamma: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {num_clients}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    let mut r = rng(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(&mut r);
    }
    for _ in 0..PARTITION_RETRIES {
        let mut assignments = vec![Vec::new(); num_clients];
        for idx in &by_class {
            if idx.is_empty() {
                continue;
            }
            let props = sample_dirichlet(gamma, num_clients, &mut r);
            let counts = largest_remainder(idx.len(), &props);
            let mut start = 0;
            for (client, c) in counts.into_iter().enumerate() {
                assignments[client].extend_from_slice(&idx[start..start + c]);
                start += c;
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(PartitionPlan {
                assignments,
                gamma,
                seed,
            });
        }
    }
    Err(Error::Partition(format!(
        "could not give every one of {num_clients} clients a sample in {PARTITION_RETRIES} \
         attempts; use more samples or a larger gamma (got n = {}, gamma = {gamma})",
        dataset.len()
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipKind {
    Pair,
    Symmetric,
}

/// Row-stochastic `M[i][j] = P(observed = j | true = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTransitionMatrix {
    m: Vec<f64>,
    num_classes: usize,
    pub kind: FlipKind,
    pub mu: f64,
}

impl LabelTransitionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.num_classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.m[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

/// Symmetric flip spreads `mu` evenly over the other classes; pair flip
/// sends it all to the cyclic successor `(i + 1) mod C`.
pub fn build_transition_matrix(
    kind: FlipKind,
    mu: f64,
    num_classes: usize,
) -> Result<LabelTransitionMatrix> {
    if num_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Config(format!(
            "noise rate must be in [0, 1), got {mu}"
        )));
    }
    if kind == FlipKind::Pair && mu > 0.5 {
        return Err(Error::Config(format!(
            "pair flip needs mu <= 0.5 to keep the true class modal, got {mu}"
        )));
    }
    let c = num_classes;
    let mut m = vec![0.0; c * c];
    for i in 0..c {
        match kind {
            FlipKind::Symmetric => {
                let off = mu / (c - 1) as f64;
                for j in 0..c {
                    m[i * c + j] = off;
                }
            }
            FlipKind::Pair => m[i * c + (i + 1) % c] = mu,
        }
        m[i * c + i] = 1.0 - mu;
    }
    Ok(LabelTransitionMatrix {
        m,
        num_classes: c,
        kind,
        mu,
    })
}

/// Resamples every label from its transition row. Features are untouched
/// and the original labels are kept as `clean_labels`.
pub fn corrupt_labels(
    dataset: &LabeledDataset,
    matrix: &LabelTransitionMatrix,
    seed: u64,
) -> Result<LabeledDataset> {
    if matrix.num_classes() != dataset.num_classes() {
        return Err(Error::Config(format!(
            "transition matrix is {0}x{0} but dataset has {1} classes",
            matrix.num_classes(),
            dataset.num_classes()
        )));
    }
    let mut r = rng(seed);
    let clean = dataset.true_labels().to_vec();
    let labels = clean
        .iter()
        .map(|&y| {
            let u: f64 = r.gen();
            let row = matrix.row(y);
            let mut acc = 0.0;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    return j;
                }
            }
            // u landed in the rounding gap at the top of the row
            row.iter().rposition(|&p| p > 0.0).unwrap_or(y)
        })
        .collect();
    Ok(LabeledDataset {
        features: dataset.features.clone(),
        labels,
        clean_labels: Some(clean),
        num_classes: dataset.num_classes,
    })
}

/// Plain-text dataset: header `n d C`, then `n` rows of `d` reals and an
/// integer label.
pub fn format_dataset(dataset: &LabeledDataset) -> String {
    let (n, d) = (dataset.len(), dataset.dim());
    let mut out = String::with_capacity(n * d * 16);
    let _ = writeln!(out, "{n} {d} {}", dataset.num_classes());
    for i in 0..n {
        for v in dataset.features.row(i) {
            let _ = write!(out, "{v:.8e} ");
        }
        let _ = writeln!(out, "{}", dataset.labels[i]);
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header `n d C`".into(),
    })?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: hline,
            message: format!("bad header: {e}"),
        })?;
    let &[n, d, c] = nums.as_slice() else {
        return Err(Error::Parse {
            line: hline,
            message: format!("header needs 3 integers `n d C`, got {}", nums.len()),
        });
    };
    if n == 0 {
        return Err(Error::Validation("dataset has no samples".into()));
    }
    if d == 0 || c < 2 {
        return Err(Error::Parse {
            line: hline,
            message: "need d >= 1 and C >= 2".into(),
        });
    }
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (line, row) in lines {
        if labels.len() == n {
            return Err(Error::Parse {
                line,
                message: format!("more than the {n} declared rows"),
            });
        }
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", d + 1, fields.len()),
            });
        }
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value `{f}`"),
                });
            }
            data.push(v);
        }
        let y: usize = fields[d].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad label `{}`", fields[d]),
        })?;
        if y >= c {
            return Err(Error::Validation(format!(
                "line {line}: label {y} out of range for {c} classes"
            )));
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::Validation("empty data section".into()));
    }
    if labels.len() != n {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("header declares {n} rows, found {}", labels.len()),
        });
    }
    LabeledDataset::new(Tensor::new(vec![n, d], data)?, labels, c)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_dataset(dataset)).map_err(|e| Error::io(path, e))
}
