//! Server-side aggregation rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commitment::Commitment;
use crate::model::{self, ParameterVector};
use crate::{Error, Result};

/// Added to the Training Credit denominator so equal loss deltas stay finite.
pub const TC_EPSILON: f64 = 1e-12;

/// Per-worker credits and the resulting aggregation weights for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreditReport {
    pub dc: Vec<f64>,
    pub tc: Vec<f64>,
    /// Loss decrease on each worker's own commitment. Empty when the report
    /// was built directly from credits by [`fedcom_weights`].
    pub loss_delta: Vec<f64>,
    pub score: Vec<f64>,
    pub flag: Vec<bool>,
    pub weight: Vec<f64>,
}

fn check_same_arch(updates: &[ParameterVector]) -> Result<()> {
    let first = updates.first().ok_or(Error::Empty("no updates to aggregate"))?;
    if updates.iter().any(|u| u.arch() != first.arch()) {
        return Err(Error::ArchMismatch);
    }
    Ok(())
}

/// `sum_i weights[i] * updates[i]`, accumulated in index order.
pub fn weighted_sum(updates: &[ParameterVector], weights: &[f64]) -> Result<ParameterVector> {
    check_same_arch(updates)?;
    if weights.len() != updates.len() {
        return Err(Error::LengthMismatch(format!("{} weights for {} updates", weights.len(), updates.len())));
    }
    let mut acc = vec![0.0; updates[0].len()];
    for (u, &w) in updates.iter().zip(weights) {
        if w != 0.0 {
            for (a, v) in acc.iter_mut().zip(u.values()) {
                *a += w * v;
            }
        }
    }
    updates[0].with_values(acc)
}

/// Size-weighted mean of the updates.
pub fn fed_average(updates: &[ParameterVector], sizes: &[usize]) -> Result<ParameterVector> {
    check_same_arch(updates)?;
    if sizes.len() != updates.len() {
        return Err(Error::LengthMismatch(format!("{} sizes for {} updates", sizes.len(), updates.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total).collect();
    weighted_sum(updates, &weights)
}

/// Krum-family parameters: the Byzantine bound `f` and an optional override
/// of the neighbor count (default `n - f - 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Krum {
    pub f: usize,
    pub neighbors: Option<usize>,
}

impl Krum {
    pub fn new(f: usize) -> Self {
        Self { f, neighbors: None }
    }

    fn neighbor_count(&self, n: usize) -> Result<usize> {
        if n < self.f + 2 {
            return Err(Error::TooFewUpdates { count: n, f: self.f });
        }
        let nn = self.neighbors.unwrap_or(n - self.f - 1);
        if nn == 0 || nn > n - 1 {
            return Err(Error::InvalidArgument(format!("neighbor count {nn} invalid for {n} updates")));
        }
        Ok(nn)
    }

    /// Sum of Euclidean distances from each update to its nearest neighbors.
    pub fn scores(&self, updates: &[ParameterVector]) -> Result<Vec<f64>> {
        check_same_arch(updates)?;
        let n = updates.len();
        let nn = self.neighbor_count(n)?;
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = updates[i].distance(&updates[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok((0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
                row.sort_unstable_by(f64::total_cmp);
                row[..nn].iter().sum()
            })
            .collect())
    }

    /// Indices ordered by ascending score, ties by index.
    fn ranking(&self, updates: &[ParameterVector]) -> Result<Vec<usize>> {
        let scores = self.scores(updates)?;
        let mut order: Vec<usize> = (0..updates.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Ok(order)
    }

    pub fn select(&self, updates: &[ParameterVector]) -> Result<usize> {
        Ok(self.ranking(updates)?[0])
    }

    /// The `n - f - 1` lowest-score indices, in ranking order.
    pub fn select_many(&self, updates: &[ParameterVector]) -> Result<Vec<usize>> {
        let mut order = self.ranking(updates)?;
        order.truncate(updates.len() - self.f - 1);
        Ok(order)
    }

    pub fn aggregate(&self, updates: &[ParameterVector]) -> Result<ParameterVector> {
        Ok(updates[self.select(updates)?].clone())
    }

    pub fn aggregate_many(&self, updates: &[ParameterVector], sizes: &[usize]) -> Result<ParameterVector> {
        if sizes.len() != updates.len() {
            return Err(Error::LengthMismatch(format!("{} sizes for {} updates", sizes.len(), updates.len())));
        }
        let chosen = self.select_many(updates)?;
        let picked: Vec<ParameterVector> = chosen.iter().map(|&i| updates[i].clone()).collect();
        let picked_sizes: Vec<usize> = chosen.iter().map(|&i| sizes[i]).collect();
        fed_average(&picked, &picked_sizes)
    }
}

pub fn krum_scores(updates: &[ParameterVector], f: usize) -> Result<Vec<f64>> {
    Krum::new(f).scores(updates)
}

/// The lowest-score update; ties go to the smallest worker index.
pub fn krum(updates: &[ParameterVector], f: usize) -> Result<ParameterVector> {
    Krum::new(f).aggregate(updates)
}

/// FedAverage over the `n - f - 1` lowest-score updates.
pub fn multi_krum(updates: &[ParameterVector], sizes: &[usize], f: usize) -> Result<ParameterVector> {
    Krum::new(f).aggregate_many(updates, sizes)
}

/// Training Credit from per-worker loss decreases.
///
/// Non-positive decreases get zero; otherwise the credit is the inverse of
/// the total distance to every positive decrease.
pub fn training_credits(loss_delta: &[f64]) -> Vec<f64> {
    loss_delta
        .iter()
        .map(|&li| {
            if li <= 0.0 {
                return 0.0;
            }
            let spread: f64 = loss_delta.iter().filter(|&&lj| lj > 0.0).map(|&lj| (li - lj).abs()).sum();
            1.0 / (TC_EPSILON + spread)
        })
        .collect()
}

/// Lower of the two middle values for even lengths.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Size-proportional weights among flagged workers; unflagged workers get 0.
pub fn gate_weights(flags: &[bool], sizes: &[usize]) -> Result<Vec<f64>> {
    if flags.len() != sizes.len() {
        return Err(Error::LengthMismatch(format!("{} flags for {} sizes", flags.len(), sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    let total: f64 = flags.iter().zip(sizes).filter(|(f, _)| **f).map(|(_, &s)| s as f64).sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument("no worker passed the median gate".into()));
    }
    Ok(flags
        .iter()
        .zip(sizes)
        .map(|(&f, &s)| if f { s as f64 / total } else { 0.0 })
        .collect())
}

/// Combine Data and Training Credit, gate at the lower median and weight the
/// surviving workers by dataset size.
pub fn fedcom_weights(dc: &[f64], tc: &[f64], sizes: &[usize]) -> Result<CreditReport> {
    if dc.len() != tc.len() || dc.len() != sizes.len() {
        return Err(Error::LengthMismatch(format!(
            "dc {}, tc {}, sizes {}",
            dc.len(),
            tc.len(),
            sizes.len()
        )));
    }
    let score: Vec<f64> = dc.iter().zip(tc).map(|(d, t)| d * t).collect();
    let median = lower_median(&score).ok_or(Error::Empty("no workers"))?;
    let flag: Vec<bool> = score.iter().map(|&s| s >= median).collect();
    let weight = gate_weights(&flag, sizes)?;
    Ok(CreditReport {
        dc: dc.to_vec(),
        tc: tc.to_vec(),
        loss_delta: Vec::new(),
        score,
        flag,
        weight,
    })
}

/// One FedCom round: validate each update on its worker's commitment, derive
/// Training Credit from the loss decrease, and aggregate with the gated weights.
pub fn fedcom_aggregate(
    global: &ParameterVector,
    updates: &[ParameterVector],
    sizes: &[usize],
    commitments: &[Commitment],
    dc: &[f64],
) -> Result<(ParameterVector, CreditReport)> {
    check_same_arch(updates)?;
    if commitments.len() != updates.len() {
        return Err(Error::LengthMismatch(format!(
            "{} commitments for {} updates",
            commitments.len(),
            updates.len()
        )));
    }
    if global.arch() != updates[0].arch() {
        return Err(Error::ArchMismatch);
    }
    let loss_delta: Vec<f64> = updates
        .par_iter()
        .zip(commitments)
        .map(|(u, c)| Ok(model::loss(global, &c.data)? - model::loss(u, &c.data)?))
        .collect::<Result<_>>()?;
    let tc = training_credits(&loss_delta);
    let mut report = fedcom_weights(dc, &tc, sizes)?;
    report.loss_delta = loss_delta;
    let aggregated = weighted_sum(updates, &report.weight)?;
    Ok((aggregated, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commitment::build_commitment;
    use crate::data::generate_blobs;
    use crate::model::{ModelArch, TrainConfig};

    // 2-D points embedded in a 4-parameter LR (d=1, C=2); the padding is zero.
    fn pt(x: f64, y: f64) -> ParameterVector {
        ParameterVector::new(ModelArch::lr(1, 2), vec![x, y, 0.0, 0.0]).unwrap()
    }

    fn xy(p: &ParameterVector) -> (f64, f64) {
        (p.values()[0], p.values()[1])
    }

    #[test]
    fn fed_average_cases() {
        let a = fed_average(&[pt(0.0, 0.0), pt(2.0, 4.0)], &[5, 5]).unwrap();
        assert_eq!(xy(&a), (1.0, 2.0));
        let b = fed_average(&[pt(0.0, 0.0), pt(4.0, 4.0)], &[1, 3]).unwrap();
        assert_eq!(xy(&b), (3.0, 3.0));
        let c = fed_average(&[pt(1.5, -2.0)], &[7]).unwrap();
        assert_eq!(xy(&c), (1.5, -2.0));
    }

    #[test]
    fn fed_average_errors() {
        assert!(matches!(fed_average(&[], &[]), Err(Error::Empty(_))));
        let other = ParameterVector::zeros(ModelArch::lr(2, 2));
        assert!(matches!(fed_average(&[pt(0.0, 0.0), other], &[1, 1]), Err(Error::ArchMismatch)));
    }

    fn four() -> Vec<ParameterVector> {
        vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(1.0, 0.0), pt(10.0, 10.0)]
    }

    #[test]
    fn krum_four_points() {
        let s = krum_scores(&four(), 1).unwrap();
        let r2 = 2f64.sqrt();
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!((s[1] - (1.0 + r2)).abs() < 1e-12);
        assert!((s[2] - (1.0 + r2)).abs() < 1e-12);
        assert!((s[3] - 2.0 * 181f64.sqrt()).abs() < 1e-12);
        assert_eq!(xy(&krum(&four(), 1).unwrap()), (0.0, 0.0));
        let mk = multi_krum(&four(), &[1, 1, 1, 1], 1).unwrap();
        assert_eq!(xy(&mk), (0.0, 0.5));
    }

    #[test]
    fn krum_identical_and_errors() {
        let same = vec![pt(1.0, 2.0); 5];
        assert!(krum_scores(&same, 1).unwrap().iter().all(|&s| s == 0.0));
        assert_eq!(Krum::new(1).select(&same).unwrap(), 0);
        assert_eq!(xy(&multi_krum(&same, &[1; 5], 2).unwrap()), (1.0, 2.0));
        assert!(matches!(krum_scores(&same[..3], 2), Err(Error::TooFewUpdates { .. })));
    }

    #[test]
    fn multi_krum_degenerates_to_krum() {
        let u = four();
        let k = Krum::new(2);
        assert_eq!(k.select_many(&u).unwrap(), vec![k.select(&u).unwrap()]);
    }

    #[test]
    fn krum_permutation_invariance() {
        let u = four();
        let perm = vec![u[3].clone(), u[2].clone(), u[0].clone(), u[1].clone()];
        assert_eq!(krum(&u, 1).unwrap(), krum(&perm, 1).unwrap());
    }

    #[test]
    fn training_credit_cases() {
        let tc = training_credits(&[0.5, 0.4, -0.1]);
        assert!((tc[0] - 10.0).abs() < 1e-6 && (tc[1] - 10.0).abs() < 1e-6);
        assert_eq!(tc[2], 0.0);
        let flat = training_credits(&[0.3, 0.3, 0.3]);
        assert!(flat.iter().all(|&t| t == 1.0 / TC_EPSILON));
        assert_eq!(training_credits(&[-1.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn fedcom_weight_cases() {
        let r = fedcom_weights(&[1.0; 4], &[4.0, 3.0, 2.0, 1.0], &[10; 4]).unwrap();
        assert_eq!(r.flag, vec![true, true, true, false]);
        for w in &r.weight[..3] {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(r.weight[3], 0.0);

        let w = gate_weights(&[true, true, false, false], &[100, 300, 50, 50]).unwrap();
        assert_eq!(w, vec![0.25, 0.75, 0.0, 0.0]);

        let eq = fedcom_weights(&[0.5; 3], &[2.0; 3], &[1, 2, 1]).unwrap();
        assert!(eq.flag.iter().all(|&f| f));
        assert_eq!(eq.weight, vec![0.25, 0.5, 0.25]);

        assert!(matches!(fedcom_weights(&[1.0], &[1.0, 2.0], &[1]), Err(Error::LengthMismatch(_))));
    }

    fn honest_setup() -> (ParameterVector, Vec<crate::data::Dataset>, Vec<Commitment>) {
        let ds = generate_blobs(2, 60, 2, 6.0, 1).unwrap();
        let parts = vec![ds.subset(&(0..40).collect::<Vec<_>>()), ds.subset(&(40..80).collect::<Vec<_>>()), ds.subset(&(80..120).collect::<Vec<_>>())];
        let commits = parts.iter().map(|p| build_commitment(p, 5).unwrap()).collect();
        (ParameterVector::zeros(ModelArch::lr(2, 2)), parts, commits)
    }

    #[test]
    fn fedcom_identical_honest_updates() {
        let (global, _parts, commits) = honest_setup();
        let cfg = TrainConfig { local_epochs: 2, learning_rate: 0.05, ..Default::default() };
        let common = model::train_local(&global, &commits[0].data, &cfg).unwrap();
        let updates = vec![common.clone(); 3];
        let (agg, rep) = fedcom_aggregate(&global, &updates, &[40, 40, 40], &commits, &[0.5; 3]).unwrap();
        for (a, b) in agg.values().iter().zip(common.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((rep.weight.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fedcom_rejects_reversed_update() {
        let (global, parts, commits) = honest_setup();
        let cfg = TrainConfig { local_epochs: 3, learning_rate: 0.05, ..Default::default() };
        let mut updates: Vec<ParameterVector> = parts.iter().map(|p| model::train_local(&global, p, &cfg).unwrap()).collect();
        updates[2] = updates[2].with_values(updates[2].values().iter().map(|v| -v).collect()).unwrap();
        let (_, rep) = fedcom_aggregate(&global, &updates, &[40, 40, 40], &commits, &[0.5; 3]).unwrap();
        assert!(rep.loss_delta[2] < 0.0);
        assert_eq!(rep.tc[2], 0.0);
        assert_eq!(rep.weight[2], 0.0);
    }

    #[test]
    fn fedcom_single_worker() {
        let (global, parts, commits) = honest_setup();
        let cfg = TrainConfig { learning_rate: 0.05, ..Default::default() };
        let u = model::train_local(&global, &parts[0], &cfg).unwrap();
        let (agg, rep) = fedcom_aggregate(&global, std::slice::from_ref(&u), &[40], &commits[..1], &[0.5]).unwrap();
        assert_eq!(rep.weight, vec![1.0]);
        assert_eq!(agg, u);
    }
}
