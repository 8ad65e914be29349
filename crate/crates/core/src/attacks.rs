//! Byzantine worker behaviors.
//!
//! Data poisoning (label flipping, surrogate-loss ascent) corrupts a worker's
//! local dataset and then trains honestly on it. Model poisoning (Gaussian
//! noise, the Krum attack) fabricates the submitted parameters directly.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregation::Krum;
use crate::commitment::{build_commitment, Commitment};
use crate::data::Dataset;
use crate::model::{self, ModelArch, ParameterVector};
use crate::seed;
use crate::{Error, Result};

/// Number of times the Krum attack halves lambda before giving up.
pub const MAX_HALVINGS: u32 = 30;
/// Collusion jitter, relative to lambda.
pub const JITTER_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    LabelFlip,
    BackGradient,
    Gaussian,
    KrumAttack,
}

impl AttackKind {
    pub fn poisons_data(self) -> bool {
        matches!(self, AttackKind::LabelFlip | AttackKind::BackGradient)
    }

    pub fn poisons_model(self) -> bool {
        matches!(self, AttackKind::Gaussian | AttackKind::KrumAttack)
    }
}

/// How a Byzantine worker builds its commitment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommitmentStrategy {
    /// Honest commitment: built from the poisoned local data.
    #[serde(rename = "hc")]
    Honest,
    /// Fake commitment: built from the clean local data.
    #[serde(rename = "fc")]
    Fake,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub byzantine_fraction: f64,
    pub commitment_strategy: CommitmentStrategy,
    pub gaussian_sigma: f64,
    pub poison_steps: usize,
    pub poison_step_size: f64,
    /// Local epochs the attacker spends training its ascent surrogate.
    pub surrogate_epochs: usize,
    pub lambda_max: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            byzantine_fraction: 0.0,
            commitment_strategy: CommitmentStrategy::Honest,
            gaussian_sigma: 1.0,
            poison_steps: 20,
            poison_step_size: 10.0,
            surrogate_epochs: 30,
            lambda_max: 1.0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.byzantine_fraction) {
            return Err(Error::config(
                "attack.fraction",
                format!("must lie in [0, 0.5), got {}", self.byzantine_fraction),
            ));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::config("attack.gaussian_sigma", "must be positive"));
        }
        if self.poison_steps == 0 {
            return Err(Error::config("attack.poison_steps", "must be at least 1"));
        }
        if !(self.poison_step_size >= 0.0 && self.poison_step_size.is_finite()) {
            return Err(Error::config("attack.poison_step_size", "must be nonnegative"));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::config("attack.lambda_max", "must be positive"));
        }
        Ok(())
    }

    /// Model-poisoning attackers have no data behind their models, so they
    /// always commit from clean data.
    pub fn effective_commitment(&self) -> CommitmentStrategy {
        if self.kind.poisons_model() {
            CommitmentStrategy::Fake
        } else {
            self.commitment_strategy
        }
    }
}

/// Rotate every label: `c -> (c + 1) mod C`.
pub fn label_flip(ds: &Dataset) -> Dataset {
    let c = ds.class_count();
    let labels = ds.labels().iter().map(|&l| (l + 1) % c).collect();
    ds.with_labels(labels).expect("rotated labels stay in range")
}

/// Push every sample uphill on the surrogate's loss, keeping its label, and
/// clamp to `bounds` after each step.
pub fn back_gradient_poison(ds: &Dataset, surrogate: &ParameterVector, steps: usize, step_size: f64, bounds: &[(f64, f64)]) -> Result<Dataset> {
    if steps == 0 {
        return Err(Error::InvalidArgument("back-gradient poisoning needs at least one step".into()));
    }
    if bounds.len() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), found: bounds.len() });
    }
    if surrogate.arch().input_dim != ds.dim() {
        return Err(Error::DimensionMismatch { expected: surrogate.arch().input_dim, found: ds.dim() });
    }
    let mut features = Vec::with_capacity(ds.features().len());
    for i in 0..ds.rows() {
        let mut x = ds.row(i).to_vec();
        for _ in 0..steps {
            let g = model::input_gradient(surrogate, &x, ds.label(i))?;
            for ((v, gv), &(lo, hi)) in x.iter_mut().zip(&g).zip(bounds) {
                *v = (*v + step_size * gv).clamp(lo, hi);
            }
        }
        features.extend(x);
    }
    ds.with_features(features)
}

/// A parameter vector of i.i.d. `Normal(0, sigma^2)` entries.
pub fn gaussian_model(arch: ModelArch, sigma: f64, seed: u64) -> Result<ParameterVector> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSigma(sigma));
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| Error::InvalidSigma(sigma))?;
    let mut rng = seed::rng_for(seed, &[seed::tag::ATTACK]);
    let values = (0..arch.parameter_count()).map(|_| normal.sample(&mut rng)).collect();
    ParameterVector::new(arch, values)
}

#[derive(Clone, Debug)]
pub struct KrumAttackOutcome {
    pub updates: Vec<ParameterVector>,
    pub lambda: f64,
    /// Whether Krum picked the crafted model at `lambda`.
    pub selected: bool,
}

/// Craft colluding models that Krum prefers but that point against the
/// benign update direction.
///
/// The crafted model is `global - lambda * sign(mean(benign) - global)`;
/// `lambda` halves from `lambda_max` until Krum, run over the attacker copies
/// followed by the benign updates, selects an attacker copy.
pub fn krum_attack(
    benign: &[ParameterVector],
    global: &ParameterVector,
    krum: Krum,
    n_attackers: usize,
    lambda_max: f64,
    seed: u64,
) -> Result<KrumAttackOutcome> {
    if benign.is_empty() {
        return Err(Error::Empty("krum attack needs benign updates"));
    }
    if n_attackers == 0 {
        return Err(Error::InvalidArgument("krum attack needs at least one attacker".into()));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let p = global.len();
    let inv = 1.0 / benign.len() as f64;
    let direction: Vec<f64> = (0..p)
        .map(|j| {
            let mean: f64 = benign.iter().map(|b| b.values()[j]).sum::<f64>() * inv;
            let diff = mean - global.values()[j];
            if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let craft = |lambda: f64| -> Result<ParameterVector> {
        global.with_values(global.values().iter().zip(&direction).map(|(g, s)| g - lambda * s).collect())
    };

    let mut lambda = lambda_max;
    let mut selected = false;
    for halving in 0..=MAX_HALVINGS {
        lambda = lambda_max / f64::from(1u32 << halving.min(31));
        let crafted = craft(lambda)?;
        let mut pool = vec![crafted; n_attackers];
        pool.extend_from_slice(benign);
        if krum.select(&pool)? < n_attackers {
            selected = true;
            break;
        }
    }

    let crafted = craft(lambda)?;
    let jitter = Normal::new(0.0, lambda * JITTER_SCALE).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let updates = (0..n_attackers)
        .map(|a| {
            let mut rng = seed::rng_for(seed, &[seed::tag::ATTACK, a as u64]);
            crafted.with_values(crafted.values().iter().map(|v| v + jitter.sample(&mut rng)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(KrumAttackOutcome { updates, lambda, selected })
}

/// Honest commitments come from the poisoned data, fake ones from clean data.
pub fn make_commitment(strategy: CommitmentStrategy, poisoned: &Dataset, clean: &Dataset, m: usize) -> Result<Commitment> {
    match strategy {
        CommitmentStrategy::Honest => build_commitment(poisoned, m),
        CommitmentStrategy::Fake => build_commitment(clean, m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::model::TrainConfig;

    #[test]
    fn rotation_rule() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0], 1, vec![1, 2, 9], 10).unwrap();
        let flipped = label_flip(&ds);
        assert_eq!(flipped.labels(), &[2, 3, 0]);
        assert_eq!(flipped.features(), ds.features());
    }

    #[test]
    fn rotation_cycles() {
        let ds = generate_blobs(2, 5, 2, 3.0, 0).unwrap();
        assert_eq!(label_flip(&label_flip(&ds)), ds);
        let ds5 = generate_blobs(5, 3, 2, 3.0, 0).unwrap();
        let mut cur = ds5.clone();
        for _ in 0..5 {
            cur = label_flip(&cur);
        }
        assert_eq!(cur, ds5);
    }

    fn surrogate(ds: &Dataset) -> ParameterVector {
        let cfg = TrainConfig { local_epochs: 5, learning_rate: 1e-2, ..Default::default() };
        let w0 = ParameterVector::zeros(ModelArch::lr(ds.dim(), ds.class_count()));
        model::train_local(&w0, ds, &cfg).unwrap()
    }

    #[test]
    fn back_gradient_zero_step_is_identity() {
        let ds = generate_blobs(3, 10, 2, 4.0, 1).unwrap();
        let w = surrogate(&ds);
        let out = back_gradient_poison(&ds, &w, 1, 0.0, &ds.column_bounds()).unwrap();
        assert_eq!(out, ds);
        assert!(back_gradient_poison(&ds, &w, 0, 1.0, &ds.column_bounds()).is_err());
    }

    #[test]
    fn back_gradient_raises_loss_and_keeps_labels_and_bounds() {
        let ds = generate_blobs(3, 30, 4, 4.0, 2).unwrap();
        let w = surrogate(&ds);
        let bounds = ds.column_bounds();
        let out = back_gradient_poison(&ds, &w, 20, 0.5, &bounds).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert!(model::loss(&w, &out).unwrap() >= model::loss(&w, &ds).unwrap());
        for i in 0..out.rows() {
            for (v, &(lo, hi)) in out.row(i).iter().zip(&bounds) {
                assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn gaussian_model_statistics() {
        let arch = ModelArch::lr(999, 10);
        let w = gaussian_model(arch, 1.0, 4).unwrap();
        let n = w.len() as f64;
        assert!(n >= 10_000.0);
        let mean = w.values().iter().sum::<f64>() / n;
        let std = (w.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 0.05 && (std - 1.0).abs() <= 0.05, "{mean} {std}");
        assert_eq!(w, gaussian_model(arch, 1.0, 4).unwrap());
        assert!(matches!(gaussian_model(arch, 0.0, 4), Err(Error::InvalidSigma(_))));
    }

    fn benign_cloud(n: usize, seed: u64) -> (ParameterVector, Vec<ParameterVector>) {
        let arch = ModelArch::lr(3, 2);
        let global = ParameterVector::zeros(arch);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let mut rng = seed::rng(seed);
        let benign = (0..n)
            .map(|_| {
                let v = (0..arch.parameter_count()).map(|j| 0.2 * j as f64 + normal.sample(&mut rng)).collect();
                ParameterVector::new(arch, v).unwrap()
            })
            .collect();
        (global, benign)
    }

    #[test]
    fn krum_attack_lambda_and_jitter() {
        let (global, benign) = benign_cloud(8, 3);
        let out = krum_attack(&benign, &global, Krum::new(2), 2, 4.0, 9).unwrap();
        assert!(out.lambda > 0.0 && out.lambda <= 4.0);
        assert_eq!(out.updates.len(), 2);
        let dist = out.updates[0].distance(&out.updates[1]);
        assert!(dist > 0.0);
        assert!(dist <= out.lambda * 1e-2 * (global.len() as f64).sqrt());
        if out.selected {
            let crafted = global.with_values(out.updates[0].values().to_vec()).unwrap();
            let mut pool = vec![crafted; 2];
            pool.extend(benign.iter().cloned());
            // The jittered copy should still win at this lambda.
            assert!(Krum::new(2).select(&pool).unwrap() < 2);
        }
    }

    #[test]
    fn krum_attack_points_against_benign_direction() {
        let (global, benign) = benign_cloud(8, 5);
        let out = krum_attack(&benign, &global, Krum::new(2), 1, 1.0, 0).unwrap();
        let mean: Vec<f64> = (0..global.len())
            .map(|j| benign.iter().map(|b| b.values()[j]).sum::<f64>() / 8.0)
            .collect();
        let dot: f64 = out.updates[0].values().iter().zip(&mean).map(|(a, b)| a * b).sum();
        assert!(dot < 0.0);
    }

    #[test]
    fn krum_attack_errors() {
        let (global, benign) = benign_cloud(4, 1);
        assert!(krum_attack(&[], &global, Krum::new(1), 1, 1.0, 0).is_err());
        assert!(krum_attack(&benign, &global, Krum::new(1), 0, 1.0, 0).is_err());
    }

    #[test]
    fn honest_commitment_of_flipped_data_shares_features() {
        let clean = generate_blobs(3, 20, 2, 4.0, 6).unwrap();
        let flipped = label_flip(&clean);
        let hc = make_commitment(CommitmentStrategy::Honest, &flipped, &clean, 5).unwrap();
        let base = make_commitment(CommitmentStrategy::Honest, &clean, &clean, 5).unwrap();
        assert_eq!(hc.data.features(), base.data.features());
        assert_ne!(hc.data.labels(), base.data.labels());
        let fc = make_commitment(CommitmentStrategy::Fake, &flipped, &clean, 5).unwrap();
        assert_eq!(fc, base);
    }

    #[test]
    fn honest_commitment_on_empty_data_fails() {
        let empty = Dataset::new(vec![], 2, vec![], 2).unwrap();
        let clean = generate_blobs(2, 10, 2, 4.0, 0).unwrap();
        assert!(make_commitment(CommitmentStrategy::Honest, &empty, &clean, 5).is_err());
    }

    #[test]
    fn model_attacks_force_fake_commitments() {
        let spec = AttackSpec { kind: AttackKind::Gaussian, ..Default::default() };
        assert_eq!(spec.effective_commitment(), CommitmentStrategy::Fake);
        let spec = AttackSpec { kind: AttackKind::LabelFlip, ..Default::default() };
        assert_eq!(spec.effective_commitment(), CommitmentStrategy::Honest);
    }
}
