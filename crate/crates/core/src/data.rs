//! Datasets, CSV ingestion, synthetic data and Non-IID partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    /// Build a dataset, checking every invariant.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self { features, dim, labels, class_count })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.features[i * self.dim + j]).collect()
    }

    /// Same features, new labels. Labels must be in range.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), self.dim, labels, self.class_count)
    }

    /// Same labels, new features of the same shape.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Self::new(features, self.dim, self.labels.clone(), self.class_count)
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { features, dim: self.dim, labels, class_count: self.class_count }
    }

    /// Concatenate datasets sharing dimension and class count.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("no datasets to concatenate"))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::DimensionMismatch { expected: first.dim, found: p.dim });
            }
            if p.class_count != first.class_count {
                return Err(Error::LengthMismatch("class counts differ".into()));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Ok(Self { features, dim: first.dim, labels, class_count: first.class_count })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Per-column `(min, max)`. Empty datasets yield an empty vector.
    pub fn column_bounds(&self) -> Vec<(f64, f64)> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for row in self.features.chunks_exact(self.dim) {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bounds
    }

    /// Rescale every column to `[0, 1]` using `bounds`; constant columns map to 0.
    pub fn min_max_scaled(&self, bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: bounds.len() });
        }
        let mut features = self.features.clone();
        for row in features.chunks_exact_mut(self.dim) {
            for (v, &(lo, hi)) in row.iter_mut().zip(bounds) {
                let span = hi - lo;
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
        Ok(Self { features, ..self.clone() })
    }

    /// Write as CSV with header `f0,...,f{d-1},label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Gaussian blobs: `per_class` unit-variance samples around each class mean.
///
/// Means sit on a scaled simplex (pairwise distance exactly `separation`) when
/// `class_count <= dim`, otherwise on the first axis at spacing `separation`.
pub fn generate_blobs(class_count: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if class_count < 2 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs need class_count >= 2, per_class >= 1, dim >= 1 (got {class_count}, {per_class}, {dim})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation must be positive, got {separation}")));
    }
    let means: Vec<Vec<f64>> = (0..class_count)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if class_count <= dim {
                m[c] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = c as f64 * separation;
            }
            m
        })
        .collect();

    let mut rng = seed::rng_for(seed, &[seed::tag::DATA]);
    let n = class_count * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            for &mu in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(mu + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, dim, labels, class_count)
}

/// How a CSV column is addressed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// Numbers are indices, anything else is a header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < width => Ok(*i),
            ColumnRef::Index(i) => Err(Error::MissingColumn(format!("index {i} (file has {width} columns)"))),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|c| c.trim() == name))
                .ok_or_else(|| Error::MissingColumn(name.clone())),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub label_column: ColumnRef,
    pub group_column: Option<ColumnRef>,
    pub has_header: bool,
}

/// A parsed CSV file: the dataset plus optional per-row group ids.
#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub groups: Option<Vec<String>>,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LoadedCsv> {
    read_csv(File::open(path)?, opts)
}

/// Parse a dataset from CSV. Every non-label, non-group column is a feature.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header: Option<Vec<String>> = if opts.has_header {
        match records.next() {
            Some(rec) => Some(rec?.iter().map(str::to_string).collect()),
            None => return Err(Error::Empty("csv file has no header")),
        }
    } else {
        None
    };

    let mut width = header.as_ref().map(Vec::len);
    let mut label_idx = None;
    let mut group_idx = None;
    let mut feature_cols: Vec<usize> = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = opts.group_column.as_ref().map(|_| Vec::new());

    for (r, rec) in records.enumerate() {
        let row = r + 1;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let li = match label_idx {
            Some(i) => i,
            None => {
                let li = opts.label_column.resolve(header.as_deref(), w)?;
                let gi = match &opts.group_column {
                    Some(g) => Some(g.resolve(header.as_deref(), w)?),
                    None => None,
                };
                feature_cols = (0..w).filter(|&c| c != li && Some(c) != gi).collect();
                if feature_cols.is_empty() {
                    return Err(Error::MissingColumn("no feature columns".into()));
                }
                group_idx = gi;
                *label_idx.insert(li)
            }
        };
        let col_name = |c: usize| match &header {
            Some(h) => h[c].clone(),
            None => c.to_string(),
        };
        let cell = rec.get(li).unwrap_or_default().trim();
        let label: usize = cell.parse().map_err(|_| Error::Parse {
            row,
            column: col_name(li),
            message: format!("label {cell:?} is not a non-negative integer"),
        })?;
        labels.push(label);
        for &c in &feature_cols {
            let cell = rec.get(c).unwrap_or_default().trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: col_name(c),
                    message: format!("feature {cell:?} is not a finite number"),
                })?;
            features.push(v);
        }
        if let (Some(g), Some(gi)) = (groups.as_mut(), group_idx) {
            g.push(rec.get(gi).unwrap_or_default().trim().to_string());
        }
    }

    if labels.is_empty() {
        return Err(Error::Empty("csv file has no data rows"));
    }
    let class_count = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let dataset = Dataset::new(features, feature_cols.len(), labels, class_count)?;
    Ok(LoadedCsv { dataset, groups })
}

/// Parameters of a Dirichlet Non-IID split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub worker_count: usize,
    /// Dirichlet concentration; lower is more skewed.
    pub dirichlet_alpha: f64,
    /// Per-worker size factors are log-uniform in `[1/size_imbalance, size_imbalance]`.
    pub size_imbalance: f64,
    pub seed: u64,
}

impl PartitionSpec {
    fn validate(&self) -> Result<()> {
        if self.worker_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "worker_count must be at least 2, got {}",
                self.worker_count
            )));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        if !(self.size_imbalance > 0.0 && self.size_imbalance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "size_imbalance must be positive, got {}",
                self.size_imbalance
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` units by nonnegative `weights`.
/// Ties go to the lower index. All-zero weights are treated as uniform.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let uniform = !(sum > 0.0 && sum.is_finite());
    let quotas: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let share = if uniform { 1.0 / weights.len() as f64 } else { w / sum };
            share * total as f64
        })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn sample_dirichlet(alpha: f64, dims: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut p: Vec<f64> = (0..dims).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|v| *v /= sum);
    } else {
        // Every draw underflowed: all mass on one class.
        p.iter_mut().for_each(|v| *v = 0.0);
        p[rng.random_range(0..dims)] = 1.0;
    }
    p
}

/// Row indices assigned to each worker by [`partition_dirichlet`].
pub fn partition_dirichlet_indices(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n = ds.rows();
    let k = spec.worker_count;
    if n == 0 {
        return Err(Error::Empty("cannot partition an empty dataset"));
    }
    if k > n {
        return Err(Error::InfeasiblePartition(format!("{k} workers for {n} samples")));
    }
    let mut rng = seed::rng_for(spec.seed, &[seed::tag::PARTITION]);
    let c = ds.class_count();

    let spread = spec.size_imbalance.ln().abs();
    let size_factor: Vec<f64> = (0..k)
        .map(|_| if spread > 0.0 { rng.random_range(-spread..=spread).exp() } else { 1.0 })
        .collect();
    let proportions: Vec<Vec<f64>> = (0..k).map(|_| sample_dirichlet(spec.dirichlet_alpha, c, &mut rng)).collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in ds.labels().iter().enumerate() {
        pools[l].push(i);
    }
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut rng);
        let weights: Vec<f64> = (0..k).map(|w| size_factor[w] * proportions[w][class]).collect();
        let mut start = 0;
        for (w, cnt) in apportion(pool.len(), &weights).into_iter().enumerate() {
            parts[w].extend_from_slice(&pool[start..start + cnt]);
            start += cnt;
        }
    }

    // Every worker needs at least one row; k <= n guarantees a donor with >= 2.
    while let Some(empty) = parts.iter().position(Vec::is_empty) {
        let donor = (0..k)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("k >= 2");
        let row = parts[donor].pop().expect("donor has rows");
        parts[empty].push(row);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Split `ds` among `spec.worker_count` workers with Dirichlet class skew and
/// log-uniform size imbalance. Partitions are disjoint and nonempty.
pub fn partition_dirichlet(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    Ok(partition_dirichlet_indices(ds, spec)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

/// Row indices for [`partition_by_group`].
pub fn partition_by_group_indices(groups: &[String], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("worker count must be positive".into()));
    }
    let distinct: Vec<&str> = groups.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.len() < k {
        return Err(Error::InfeasiblePartition(format!(
            "{} distinct groups for {k} workers",
            distinct.len()
        )));
    }
    let mut chosen = distinct;
    let mut rng = seed::rng_for(seed, &[seed::tag::PARTITION]);
    chosen.shuffle(&mut rng);
    chosen.truncate(k);
    let slot: BTreeMap<&str, usize> = chosen.iter().enumerate().map(|(w, &g)| (g, w)).collect();
    let mut parts = vec![Vec::new(); k];
    for (i, g) in groups.iter().enumerate() {
        if let Some(&w) = slot.get(g.as_str()) {
            parts[w].push(i);
        }
    }
    Ok(parts)
}

/// Give each of `k` workers all rows of one distinct, randomly chosen group.
pub fn partition_by_group(ds: &Dataset, groups: &[String], k: usize, seed: u64) -> Result<Vec<Dataset>> {
    if groups.len() != ds.rows() {
        return Err(Error::LengthMismatch(format!(
            "{} group ids for {} rows",
            groups.len(),
            ds.rows()
        )));
    }
    Ok(partition_by_group_indices(groups, k, seed)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

/// Test row indices of a stratified split; the complement is the train set.
pub fn train_test_indices(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidFraction(test_fraction));
    }
    let n = ds.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rows to split, got {n}")));
    }
    let test_total = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count()];
    for (i, &l) in ds.labels().iter().enumerate() {
        pools[l].push(i);
    }
    let weights: Vec<f64> = pools.iter().map(|p| p.len() as f64).collect();
    let per_class = apportion(test_total, &weights);

    let mut rng = seed::rng_for(seed, &[seed::tag::SPLIT]);
    let mut is_test = vec![false; n];
    for (pool, take) in pools.iter_mut().zip(per_class) {
        pool.shuffle(&mut rng);
        for &i in &pool[..take.min(pool.len())] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((train, test))
}

/// Stratified train/test split, deterministic in `seed`. Returns `(train, test)`.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = train_test_indices(ds, test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}
