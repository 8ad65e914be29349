//! Data commitments and Data Credit.
//!
//! A commitment replaces every sample with the mean of its `m` nearest other
//! samples, so it follows the source distribution without containing any
//! source row. The server compares commitments dimension by dimension with
//! the 1-D Wasserstein distance and scores each worker by how typical its
//! divergence is among all workers.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

pub const DEFAULT_M: usize = 5;

/// Below this spread all workers receive the neutral credit 0.5.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Commitment {
    pub data: Dataset,
    pub m: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Most frequent label among `neighbors` (ordered nearest first); ties go to
/// the label whose first occurrence is nearest.
fn majority_label(neighbors: &[usize], ds: &Dataset) -> usize {
    let mut counts = vec![0usize; ds.class_count()];
    for &i in neighbors {
        counts[ds.label(i)] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    neighbors
        .iter()
        .map(|&i| ds.label(i))
        .find(|&l| counts[l] == best)
        .expect("neighbors nonempty")
}

pub fn build_commitment(ds: &Dataset, m: usize) -> Result<Commitment> {
    let n = ds.rows();
    if m < 2 || n <= m {
        return Err(Error::InvalidM { m, rows: n });
    }
    let d = ds.dim();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut others: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for k in 0..n {
        let pk = ds.row(k);
        others.clear();
        others.extend((0..n).filter(|&i| i != k).map(|i| (squared_distance(pk, ds.row(i)), i)));
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if others.len() > m {
            others.select_nth_unstable_by(m - 1, by_distance);
        }
        let nearest = &mut others[..m];
        nearest.sort_unstable_by(by_distance);
        let gamma: Vec<usize> = nearest.iter().map(|&(_, i)| i).collect();

        let mut centroid = vec![0.0; d];
        for &i in &gamma {
            for (c, v) in centroid.iter_mut().zip(ds.row(i)) {
                *c += v;
            }
        }
        features.extend(centroid.into_iter().map(|c| c / m as f64));
        labels.push(majority_label(&gamma, ds));
    }
    Ok(Commitment { data: Dataset::new(features, d, labels, ds.class_count())?, m })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Wasserstein-1 distance between two sorted samples, via the quantile
/// functions: each step covers the overlap of one quantile cell from each side.
fn wasserstein_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // Compare (i+1)/n with (j+1)/m exactly in integers.
        let lhs = (i + 1) * m;
        let rhs = (j + 1) * n;
        let next = if lhs <= rhs { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        total += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    total
}

/// Wasserstein-1 distance between two empirical distributions with uniform
/// weights. Exact for unequal sample sizes.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein distance needs two nonempty samples"));
    }
    Ok(wasserstein_sorted(&sorted(a), &sorted(b)))
}

/// Upper tail of the standard normal, `1 - Phi(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Mean per-dimension distance of each commitment from the pooled others.
    pub d: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation of `d`.
    pub sigma: f64,
    /// Data Credit per worker, in `(0, 1)`.
    pub dc: Vec<f64>,
}

/// Score commitments by their divergence from everyone else's pooled data.
pub fn divergences(commitments: &[Commitment]) -> Result<DivergenceReport> {
    let sets: Vec<&Dataset> = commitments.iter().map(|c| &c.data).collect();
    divergences_of(&sets)
}

/// [`divergences`] over bare datasets.
pub fn divergences_of(sets: &[&Dataset]) -> Result<DivergenceReport> {
    let k = sets.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 commitments, got {k}")));
    }
    let dim = sets[0].dim();
    for s in sets {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
        }
        if s.is_empty() {
            return Err(Error::Empty("commitment with no rows"));
        }
    }

    let mut d = vec![0.0; k];
    for j in 0..dim {
        let columns: Vec<Vec<f64>> = sets.iter().map(|s| s.column(j)).collect();
        for i in 0..k {
            let complement: Vec<f64> = columns
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != i)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            d[i] += wasserstein_sorted(&sorted(&columns[i]), &sorted(&complement));
        }
    }
    for v in &mut d {
        *v /= dim as f64;
    }

    let mu = d.iter().sum::<f64>() / k as f64;
    let sigma = (d.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / k as f64).sqrt();
    let dc = if sigma < SIGMA_FLOOR {
        vec![0.5; k]
    } else {
        d.iter().map(|&v| normal_sf((v - mu) / sigma)).collect()
    };
    Ok(DivergenceReport { d, mu, sigma, dc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_d(values: &[f64]) -> Dataset {
        Dataset::new(values.to_vec(), 1, vec![0; values.len()], 2).unwrap()
    }

    #[test]
    fn hand_run_commitment() {
        let c = build_commitment(&one_d(&[0.0, 1.0, 10.0]), 2).unwrap();
        assert_eq!(c.data.features(), &[5.5, 5.0, 0.5]);
        assert_eq!(c.m, 2);
    }

    #[test]
    fn identical_points_commit_to_themselves() {
        let c = build_commitment(&one_d(&[3.0; 6]), 2).unwrap();
        assert!(c.data.features().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn invalid_m() {
        let ds = one_d(&[0.0, 1.0, 2.0]);
        assert!(matches!(build_commitment(&ds, 1), Err(Error::InvalidM { .. })));
        assert!(matches!(build_commitment(&ds, 3), Err(Error::InvalidM { .. })));
    }

    #[test]
    fn majority_label_with_nearest_tie_break() {
        // Point 0 at the origin; neighbors 1 (label 1, nearest) and 2 (label 0).
        let ds = Dataset::new(vec![0.0, 1.0, 2.0, 3.0, 100.0], 1, vec![0, 1, 0, 1, 1], 2).unwrap();
        let c = build_commitment(&ds, 2).unwrap();
        assert_eq!(c.data.label(0), 1);
        // Point 4's neighbors are 3 (label 1) and 2 (label 0): nearest wins.
        assert_eq!(c.data.label(4), 1);
        // m = 3 for point 0: labels {1, 0, 1} -> majority 1.
        let c3 = build_commitment(&ds, 3).unwrap();
        assert_eq!(c3.data.label(0), 1);
    }

    #[test]
    fn wasserstein_small_cases() {
        assert_eq!(wasserstein_1d(&[1.0, 5.0, 2.0], &[5.0, 2.0, 1.0]).unwrap(), 0.0);
        assert!((wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn degenerate_divergence() {
        let c = build_commitment(&one_d(&[0.0, 1.0, 2.0, 4.0]), 2).unwrap();
        let rep = divergences(&[c.clone(), c.clone(), c]).unwrap();
        assert!(rep.d.iter().all(|&v| v == 0.0));
        assert_eq!(rep.sigma, 0.0);
        assert_eq!(rep.dc, vec![0.5; 3]);
    }

    #[test]
    fn shifted_commitment_gets_lowest_credit() {
        let mut rng = crate::seed::rng(1);
        let base: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let near = build_commitment(&one_d(&base), 3).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 25.0).collect();
        let far = build_commitment(&one_d(&shifted), 3).unwrap();
        let rep = divergences(&[near.clone(), far, near]).unwrap();
        assert!(rep.dc[1] < rep.dc[0] && rep.dc[1] < rep.dc[2]);
        assert!(rep.dc.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn divergence_dimension_mismatch() {
        let a = Dataset::new(vec![0.0; 4], 2, vec![0, 1], 2).unwrap();
        let b = Dataset::new(vec![0.0; 3], 1, vec![0, 1, 0], 2).unwrap();
        assert!(matches!(divergences_of(&[&a, &b]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn normal_sf_values() {
        assert_eq!(normal_sf(0.0), 0.5);
        assert!((normal_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((normal_sf(-2.0) - 0.977_249_868_051_820_8).abs() < 1e-12);
    }

    #[test]
    fn commitment_shape_and_privacy() {
        let mut rng = crate::seed::rng(7);
        let features: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::new(features, 3, (0..100).map(|i| i % 2).collect(), 2).unwrap();
        let c = build_commitment(&ds, 2).unwrap();
        assert_eq!((c.data.rows(), c.data.dim()), (ds.rows(), ds.dim()));
        for i in 0..c.data.rows() {
            for k in 0..ds.rows() {
                assert_ne!(c.data.row(i), ds.row(k));
            }
        }
    }
}
