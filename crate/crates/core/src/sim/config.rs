//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackSpec, CommitmentStrategy};
use crate::data::ColumnRef;
use crate::model::{ModelArch, ModelKind, TrainConfig, DEFAULT_HIDDEN};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    FedAvg,
    Krum,
    MultiKrum,
    FedCom,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::FedAvg, Rule::Krum, Rule::MultiKrum, Rule::FedCom];

    pub fn name(self) -> &'static str {
        match self {
            Rule::FedAvg => "fedavg",
            Rule::Krum => "krum",
            Rule::MultiKrum => "multikrum",
            Rule::FedCom => "fedcom",
        }
    }
}

impl FromStr for Rule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown rule `{s}` (expected fedavg, krum, multikrum or fedcom)"))
    }
}

/// The Krum bound: a fixed number or the number of Byzantine workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FBound {
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label_column: ColumnRef,
        group_column: Option<ColumnRef>,
        header: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    pub worker_count: usize,
    pub rule: Rule,
    pub krum_f: FBound,
    pub krum_neighbors: Option<usize>,
    pub commitment_m: usize,
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub minmax_scale: bool,
    pub dirichlet_alpha: f64,
    pub size_imbalance: f64,
    pub model_kind: ModelKind,
    pub hidden_dim: usize,
    pub train: TrainConfig,
    pub attack: AttackSpec,
    pub out: Option<PathBuf>,
    pub dump_commitments: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 30,
            worker_count: 20,
            rule: Rule::FedCom,
            krum_f: FBound::Auto,
            krum_neighbors: None,
            commitment_m: crate::commitment::DEFAULT_M,
            dataset: DatasetSource::Blobs { classes: 3, per_class: 834, dim: 10, separation: 3.5 },
            test_fraction: 0.2,
            minmax_scale: false,
            dirichlet_alpha: 100.0,
            size_imbalance: 1.0,
            model_kind: ModelKind::Lr,
            hidden_dim: DEFAULT_HIDDEN,
            train: TrainConfig::default(),
            attack: AttackSpec::default(),
            out: None,
            dump_commitments: false,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::config(key, format!("invalid value `{raw}`: {e}")))
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{raw}`"))),
    }
}

fn optional<T: FromStr>(key: &str, raw: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if raw == "none" || raw == "auto" {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn attack_kind(key: &str, raw: &str) -> Result<AttackKind> {
    Ok(match raw {
        "none" => AttackKind::None,
        "label_flip" => AttackKind::LabelFlip,
        "back_gradient" => AttackKind::BackGradient,
        "gaussian" => AttackKind::Gaussian,
        "krum_attack" => AttackKind::KrumAttack,
        _ => {
            return Err(Error::config(
                key,
                format!("unknown attack `{raw}` (expected none, label_flip, back_gradient, gaussian or krum_attack)"),
            ))
        }
    })
}

fn attack_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::None => "none",
        AttackKind::LabelFlip => "label_flip",
        AttackKind::BackGradient => "back_gradient",
        AttackKind::Gaussian => "gaussian",
        AttackKind::KrumAttack => "krum_attack",
    }
}

#[derive(Default)]
struct Blobs {
    classes: Option<usize>,
    per_class: Option<usize>,
    dim: Option<usize>,
    separation: Option<f64>,
}

#[derive(Default)]
struct Csv {
    path: Option<PathBuf>,
    label_column: Option<ColumnRef>,
    group_column: Option<ColumnRef>,
    header: Option<bool>,
}

impl RunConfig {
    /// Parse the flat text format. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut source: Option<String> = None;
        let mut blobs = Blobs::default();
        let mut csv = Csv::default();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")));
            };
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "key given more than once"));
            }
            match key {
                "seed" => cfg.seed = value(key, raw)?,
                "rounds" => cfg.rounds = value(key, raw)?,
                "workers" => cfg.worker_count = value(key, raw)?,
                "rule" => cfg.rule = value(key, raw)?,
                "krum.f" => cfg.krum_f = optional::<usize>(key, raw)?.map_or(FBound::Auto, FBound::Fixed),
                "krum.neighbors" => cfg.krum_neighbors = optional(key, raw)?,
                "commitment.m" => cfg.commitment_m = value(key, raw)?,
                "dataset" => match raw {
                    "blobs" | "csv" => source = Some(raw.to_string()),
                    _ => return Err(Error::config(key, format!("expected blobs or csv, got `{raw}`"))),
                },
                "blobs.classes" => blobs.classes = Some(value(key, raw)?),
                "blobs.per_class" => blobs.per_class = Some(value(key, raw)?),
                "blobs.dim" => blobs.dim = Some(value(key, raw)?),
                "blobs.separation" => blobs.separation = Some(value(key, raw)?),
                "csv.path" => csv.path = Some(PathBuf::from(raw)),
                "csv.label_column" => csv.label_column = Some(ColumnRef::parse(raw)),
                "csv.group_column" => csv.group_column = (raw != "none").then(|| ColumnRef::parse(raw)),
                "csv.header" => csv.header = Some(boolean(key, raw)?),
                "data.test_fraction" => cfg.test_fraction = value(key, raw)?,
                "data.minmax_scale" => cfg.minmax_scale = boolean(key, raw)?,
                "partition.alpha" => cfg.dirichlet_alpha = value(key, raw)?,
                "partition.imbalance" => cfg.size_imbalance = value(key, raw)?,
                "model.kind" => {
                    cfg.model_kind = match raw {
                        "lr" => ModelKind::Lr,
                        "mlp" => ModelKind::Mlp,
                        _ => return Err(Error::config(key, format!("expected lr or mlp, got `{raw}`"))),
                    }
                }
                "model.hidden" => cfg.hidden_dim = value(key, raw)?,
                "train.epochs" => cfg.train.local_epochs = value(key, raw)?,
                "train.batch_size" => cfg.train.batch_size = value(key, raw)?,
                "train.lr" => cfg.train.learning_rate = value(key, raw)?,
                "attack.kind" => cfg.attack.kind = attack_kind(key, raw)?,
                "attack.fraction" => cfg.attack.byzantine_fraction = value(key, raw)?,
                "attack.commitment" => {
                    cfg.attack.commitment_strategy = match raw {
                        "hc" => CommitmentStrategy::Honest,
                        "fc" => CommitmentStrategy::Fake,
                        _ => return Err(Error::config(key, format!("expected hc or fc, got `{raw}`"))),
                    }
                }
                "attack.gaussian_sigma" => cfg.attack.gaussian_sigma = value(key, raw)?,
                "attack.poison_steps" => cfg.attack.poison_steps = value(key, raw)?,
                "attack.poison_step_size" => cfg.attack.poison_step_size = value(key, raw)?,
                "attack.surrogate_epochs" => cfg.attack.surrogate_epochs = value(key, raw)?,
                "attack.lambda_max" => cfg.attack.lambda_max = value(key, raw)?,
                "out" => cfg.out = Some(PathBuf::from(raw)),
                "dump_commitments" => cfg.dump_commitments = boolean(key, raw)?,
                _ => return Err(Error::config(key, "unknown key")),
            }
        }

        let is_csv = source.as_deref() == Some("csv");
        if is_csv {
            if let Some(k) = ["blobs.classes", "blobs.per_class", "blobs.dim", "blobs.separation"].iter().find(|k| seen.contains(**k)) {
                return Err(Error::config(*k, "blobs keys require dataset = blobs"));
            }
            cfg.dataset = DatasetSource::Csv {
                path: csv.path.ok_or_else(|| Error::config("csv.path", "required when dataset = csv"))?,
                label_column: csv.label_column.unwrap_or(ColumnRef::Name("label".into())),
                group_column: csv.group_column,
                header: csv.header.unwrap_or(true),
            };
        } else {
            if let Some(k) = ["csv.path", "csv.label_column", "csv.group_column", "csv.header"].iter().find(|k| seen.contains(**k)) {
                return Err(Error::config(*k, "csv keys require dataset = csv"));
            }
            let DatasetSource::Blobs { classes, per_class, dim, separation } = RunConfig::default().dataset else {
                unreachable!()
            };
            cfg.dataset = DatasetSource::Blobs {
                classes: blobs.classes.unwrap_or(classes),
                per_class: blobs.per_class.unwrap_or(per_class),
                dim: blobs.dim.unwrap_or(dim),
                separation: blobs.separation.unwrap_or(separation),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Render in the text format; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", &self.seed);
        kv("rounds", &self.rounds);
        kv("workers", &self.worker_count);
        kv("rule", &self.rule.name());
        match self.krum_f {
            FBound::Auto => kv("krum.f", &"auto"),
            FBound::Fixed(f) => kv("krum.f", &f),
        }
        if let Some(n) = self.krum_neighbors {
            kv("krum.neighbors", &n);
        }
        kv("commitment.m", &self.commitment_m);
        match &self.dataset {
            DatasetSource::Blobs { classes, per_class, dim, separation } => {
                kv("dataset", &"blobs");
                kv("blobs.classes", classes);
                kv("blobs.per_class", per_class);
                kv("blobs.dim", dim);
                kv("blobs.separation", &format!("{separation:?}"));
            }
            DatasetSource::Csv { path, label_column, group_column, header } => {
                kv("dataset", &"csv");
                kv("csv.path", &path.display());
                kv("csv.label_column", label_column);
                if let Some(g) = group_column {
                    kv("csv.group_column", g);
                }
                kv("csv.header", header);
            }
        }
        kv("data.test_fraction", &format!("{:?}", self.test_fraction));
        kv("data.minmax_scale", &self.minmax_scale);
        kv("partition.alpha", &format!("{:?}", self.dirichlet_alpha));
        kv("partition.imbalance", &format!("{:?}", self.size_imbalance));
        kv("model.kind", &if self.model_kind == ModelKind::Lr { "lr" } else { "mlp" });
        kv("model.hidden", &self.hidden_dim);
        kv("train.epochs", &self.train.local_epochs);
        kv("train.batch_size", &self.train.batch_size);
        kv("train.lr", &format!("{:?}", self.train.learning_rate));
        let a = &self.attack;
        kv("attack.kind", &attack_name(a.kind));
        kv("attack.fraction", &format!("{:?}", a.byzantine_fraction));
        kv("attack.commitment", &if a.commitment_strategy == CommitmentStrategy::Honest { "hc" } else { "fc" });
        kv("attack.gaussian_sigma", &format!("{:?}", a.gaussian_sigma));
        kv("attack.poison_steps", &a.poison_steps);
        kv("attack.poison_step_size", &format!("{:?}", a.poison_step_size));
        kv("attack.surrogate_epochs", &a.surrogate_epochs);
        kv("attack.lambda_max", &format!("{:?}", a.lambda_max));
        if let Some(out) = &self.out {
            kv("out", &out.display());
        }
        kv("dump_commitments", &self.dump_commitments);
        s
    }

    /// Number of Byzantine workers: `floor(k * fraction)`, zero without an attack.
    pub fn byzantine_count(&self) -> usize {
        if self.attack.kind == AttackKind::None {
            return 0;
        }
        (self.worker_count as f64 * self.attack.byzantine_fraction + 1e-9).floor() as usize
    }

    pub fn resolved_f(&self) -> usize {
        match self.krum_f {
            FBound::Auto => self.byzantine_count(),
            FBound::Fixed(f) => f,
        }
    }

    pub fn arch(&self, input_dim: usize, class_count: usize) -> ModelArch {
        match self.model_kind {
            ModelKind::Lr => ModelArch::lr(input_dim, class_count),
            ModelKind::Mlp => ModelArch::mlp(input_dim, self.hidden_dim, class_count),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.worker_count < 2 {
            return Err(Error::config("workers", "must be at least 2"));
        }
        if (self.rule == Rule::FedCom || self.dump_commitments) && self.commitment_m < 2 {
            return Err(Error::config("commitment.m", format!("must be at least 2, got {}", self.commitment_m)));
        }
        if matches!(self.rule, Rule::Krum | Rule::MultiKrum) || self.attack.kind == AttackKind::KrumAttack {
            let f = self.resolved_f();
            if self.worker_count < f + 2 {
                return Err(Error::config("krum.f", format!("{} workers cannot tolerate f={f}", self.worker_count)));
            }
            if let Some(nn) = self.krum_neighbors {
                if nn == 0 || nn >= self.worker_count {
                    return Err(Error::config("krum.neighbors", format!("must lie in [1, {}]", self.worker_count - 1)));
                }
            }
        }
        match &self.dataset {
            DatasetSource::Blobs { classes, per_class, dim, separation } => {
                if *classes < 2 {
                    return Err(Error::config("blobs.classes", "must be at least 2"));
                }
                if *per_class == 0 {
                    return Err(Error::config("blobs.per_class", "must be at least 1"));
                }
                if *dim == 0 {
                    return Err(Error::config("blobs.dim", "must be at least 1"));
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(Error::config("blobs.separation", "must be a nonnegative number"));
                }
            }
            DatasetSource::Csv { .. } => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must lie strictly between 0 and 1"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::config("partition.alpha", "must be positive"));
        }
        if !(self.size_imbalance >= 1.0 && self.size_imbalance.is_finite()) {
            return Err(Error::config("partition.imbalance", "must be at least 1"));
        }
        if self.model_kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::config("model.hidden", "must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        self.attack.validate()
    }
}
