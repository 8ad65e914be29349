//! The federated round loop.
//!
//! Workers are simulated in-process. Local training within a round runs in
//! parallel, but every reduction walks workers in index order, so a run is a
//! pure function of its configuration.

mod config;
mod report;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use config::{DatasetSource, FBound, Rule, RunConfig};
pub use report::{
    emit_csv, emit_summary_json, read_metrics_csv, read_metrics_from, write_outputs, MetricsRow, Summary, WorkerMetrics,
};

use crate::aggregation::{fed_average, fedcom_aggregate, CreditReport, Krum};
use crate::attacks::{self, AttackKind};
use crate::commitment::{build_commitment, divergences, Commitment, DivergenceReport};
use crate::data::{self, CsvOptions, Dataset, PartitionSpec};
use crate::model::{self, ParameterVector, TrainConfig};
use crate::seed::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub benign_accuracy: f64,
    pub poison_accuracy: Option<f64>,
    /// FedCom only.
    pub credits: Option<CreditReport>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: RunConfig,
    /// Sorted indices of the Byzantine workers.
    pub byzantine: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub divergence: Option<DivergenceReport>,
    pub commitments: Option<Vec<Commitment>>,
    pub rounds: Vec<RoundRecord>,
    pub final_model: ParameterVector,
    pub total_wall_time: f64,
}

impl RunReport {
    pub fn final_benign_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.benign_accuracy)
    }

    pub fn final_poison_accuracy(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.poison_accuracy)
    }
}

struct Setup {
    arch: model::ModelArch,
    clean: Vec<Dataset>,
    local: Vec<Dataset>,
    test: Dataset,
    poison_eval: Option<Dataset>,
    byzantine: Vec<bool>,
    global: ParameterVector,
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Option<Vec<String>>)> {
    match &cfg.dataset {
        DatasetSource::Blobs { classes, per_class, dim, separation } => {
            let seed = seed::derive(cfg.seed, &[tag::DATA]);
            Ok((data::generate_blobs(*classes, *per_class, *dim, *separation, seed)?, None))
        }
        DatasetSource::Csv { path, label_column, group_column, header } => {
            let opts = CsvOptions { label_column: label_column.clone(), group_column: group_column.clone(), has_header: *header };
            let loaded = data::load_csv(path, &opts)?;
            Ok((loaded.dataset, loaded.groups))
        }
    }
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let (full, groups) = load_dataset(cfg)?;
    let (train_idx, test_idx) = data::train_test_indices(&full, cfg.test_fraction, seed::derive(cfg.seed, &[tag::SPLIT]))?;
    let mut train = full.subset(&train_idx);
    let mut test = full.subset(&test_idx);
    if cfg.minmax_scale {
        let bounds = train.column_bounds();
        train = train.min_max_scaled(&bounds)?;
        test = test.min_max_scaled(&bounds)?;
    }

    let k = cfg.worker_count;
    let partition_seed = seed::derive(cfg.seed, &[tag::PARTITION]);
    let parts = match groups {
        Some(groups) => {
            let train_groups: Vec<String> = train_idx.iter().map(|&i| groups[i].clone()).collect();
            data::partition_by_group_indices(&train_groups, k, partition_seed)?
        }
        None => {
            let spec = PartitionSpec {
                worker_count: k,
                dirichlet_alpha: cfg.dirichlet_alpha,
                size_imbalance: cfg.size_imbalance,
                seed: partition_seed,
            };
            data::partition_dirichlet_indices(&train, &spec)?
        }
    };
    let clean: Vec<Dataset> = parts.iter().map(|idx| train.subset(idx)).collect();

    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(&mut seed::rng_for(cfg.seed, &[tag::BYZANTINE]));
    let mut byzantine = vec![false; k];
    for &w in &ids[..cfg.byzantine_count()] {
        byzantine[w] = true;
    }

    let arch = cfg.arch(train.dim(), train.class_count());
    arch.validate()?;
    let global = model::init_model(arch, seed::derive(cfg.seed, &[tag::INIT]))?;

    let attack = &cfg.attack;
    let bounds = train.column_bounds();
    let local: Vec<Dataset> = clean
        .iter()
        .enumerate()
        .map(|(w, ds)| {
            if !byzantine[w] {
                return Ok(ds.clone());
            }
            match attack.kind {
                AttackKind::LabelFlip => Ok(attacks::label_flip(ds)),
                AttackKind::BackGradient => {
                    let surrogate_cfg = TrainConfig {
                        local_epochs: attack.surrogate_epochs,
                        seed: seed::derive(cfg.seed, &[tag::SURROGATE, w as u64]),
                        ..cfg.train.clone()
                    };
                    let surrogate = model::train_local(&global, ds, &surrogate_cfg)?;
                    attacks::back_gradient_poison(ds, &surrogate, attack.poison_steps, attack.poison_step_size, &bounds)
                }
                _ => Ok(ds.clone()),
            }
        })
        .collect::<Result<_>>()?;

    let poison_eval = match attack.kind {
        AttackKind::LabelFlip if byzantine.contains(&true) => Some(attacks::label_flip(&test)),
        AttackKind::BackGradient if byzantine.contains(&true) => {
            let poisoned: Vec<&Dataset> = (0..k).filter(|&w| byzantine[w]).map(|w| &local[w]).collect();
            Some(Dataset::concat(&poisoned)?)
        }
        _ => None,
    };

    Ok(Setup { arch, clean, local, test, poison_eval, byzantine, global })
}

fn commitments(cfg: &RunConfig, s: &Setup) -> Result<Vec<Commitment>> {
    let strategy = cfg.attack.effective_commitment();
    (0..cfg.worker_count)
        .into_par_iter()
        .map(|w| {
            if s.byzantine[w] {
                attacks::make_commitment(strategy, &s.local[w], &s.clean[w], cfg.commitment_m)
            } else {
                build_commitment(&s.clean[w], cfg.commitment_m)
            }
        })
        .collect()
}

/// Run a full simulation. Pure in `cfg`: no files are touched.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let s = setup(cfg)?;
    let k = cfg.worker_count;
    let sizes: Vec<usize> = s.clean.iter().map(Dataset::rows).collect();

    let commitments = if cfg.rule == Rule::FedCom || cfg.dump_commitments {
        let c = commitments(cfg, &s)?;
        Some(c)
    } else {
        None
    };
    let divergence = match (&commitments, cfg.rule) {
        (Some(c), Rule::FedCom) => Some(divergences(c)?),
        _ => None,
    };

    let krum = Krum { f: cfg.resolved_f(), neighbors: cfg.krum_neighbors };
    let model_attack = cfg.attack.kind.poisons_model();
    let attackers: Vec<usize> = (0..k).filter(|&w| model_attack && s.byzantine[w]).collect();
    let trainers: Vec<usize> = (0..k).filter(|w| !attackers.contains(w)).collect();

    let mut global = s.global.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let round_start = Instant::now();
        let trained: Vec<ParameterVector> = trainers
            .par_iter()
            .map(|&w| {
                let train = TrainConfig { seed: seed::derive(cfg.seed, &[tag::TRAIN, round as u64, w as u64]), ..cfg.train.clone() };
                model::train_local(&global, &s.local[w], &train)
            })
            .collect::<Result<_>>()?;

        let mut updates: Vec<Option<ParameterVector>> = vec![None; k];
        for (&w, u) in trainers.iter().zip(&trained) {
            updates[w] = Some(u.clone());
        }
        if !attackers.is_empty() {
            match cfg.attack.kind {
                AttackKind::Gaussian => {
                    for &w in &attackers {
                        let seed = seed::derive(cfg.seed, &[tag::ATTACK, round as u64, w as u64]);
                        updates[w] = Some(attacks::gaussian_model(s.arch, cfg.attack.gaussian_sigma, seed)?);
                    }
                }
                AttackKind::KrumAttack => {
                    let seed = seed::derive(cfg.seed, &[tag::ATTACK, round as u64]);
                    let outcome = attacks::krum_attack(&trained, &global, krum, attackers.len(), cfg.attack.lambda_max, seed)?;
                    for (&w, u) in attackers.iter().zip(outcome.updates) {
                        updates[w] = Some(u);
                    }
                }
                _ => unreachable!("only model attacks replace updates"),
            }
        }
        let updates: Vec<ParameterVector> = updates.into_iter().map(|u| u.expect("every worker submitted")).collect();

        let (next, credits) = match cfg.rule {
            Rule::FedAvg => (fed_average(&updates, &sizes)?, None),
            Rule::Krum => (krum.aggregate(&updates)?, None),
            Rule::MultiKrum => (krum.aggregate_many(&updates, &sizes)?, None),
            Rule::FedCom => {
                let c = commitments.as_deref().expect("fedcom builds commitments");
                let dc = &divergence.as_ref().expect("fedcom computes divergences").dc;
                let (next, report) = fedcom_aggregate(&global, &updates, &sizes, c, dc)?;
                (next, Some(report))
            }
        };
        global = next;

        let benign_accuracy = model::accuracy(&global, &s.test)?;
        let poison_accuracy = s.poison_eval.as_ref().map(|p| model::accuracy(&global, p)).transpose()?;
        rounds.push(RoundRecord {
            round,
            benign_accuracy,
            poison_accuracy,
            credits,
            wall_time: round_start.elapsed().as_secs_f64(),
        });
    }

    Ok(RunReport {
        config: cfg.clone(),
        byzantine: (0..k).filter(|&w| s.byzantine[w]).collect(),
        sample_sizes: sizes,
        divergence,
        commitments,
        rounds,
        final_model: global,
        total_wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Run `cfg` and write its outputs into `out`.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let report = run(cfg)?;
    write_outputs(&report, out)?;
    Ok(report)
}

/// One run per Byzantine fraction, each in `out/fraction_<f>`.
pub fn sweep(cfg: &RunConfig, fractions: &[f64], out: &Path) -> Result<Vec<RunReport>> {
    if fractions.is_empty() {
        return Err(Error::config("fractions", "at least one fraction is required"));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let mut c = cfg.clone();
            c.attack.byzantine_fraction = fraction;
            c.validate()?;
            run_to_dir(&c, &out.join(format!("fraction_{fraction}")))
        })
        .collect()
}
