//! Experiment configuration files.
//!
//! Configurations are TOML. Every key is optional; anything omitted takes the
//! default listed in the README. Unknown keys are rejected so that typos do
//! not silently fall back to defaults.

use std::path::PathBuf;

use fedpoison::attacks::AttackKind;
use fedpoison::{
    Activation, AggregationRule, AttackSpec, DataSource, LocalTraining, PartitionScheme, Rule, SimConfig, TrimPolicy,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("could not serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

/// The parameter varied across an experiment's runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    /// `m/n`; the fake client count becomes `round(v·n)`.
    FakeFraction,
    Lambda,
    Beta,
    /// Norm-clipping bound `M`; `inf` disables clipping.
    Clip,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "none" => Self::None,
            "fake_fraction" => Self::FakeFraction,
            "lambda" => Self::Lambda,
            "beta" => Self::Beta,
            "clip" => Self::Clip,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    /// Empty exactly when `axis` is [`SweepAxis::None`].
    pub values: Vec<f64>,
}

/// A fully resolved experiment: the base simulation plus repetition and
/// sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Base run. `master_seed` equals `seed_base`; repeat `i` uses
    /// `seed_base + i` and attacker seed `attack.attacker_seed + i`.
    pub sim: SimConfig,
    pub repeats: usize,
    pub seed_base: u64,
    pub sweep: Sweep,
    pub out_dir: PathBuf,
    /// Run `round(rounds / β)` rounds instead of `rounds`.
    pub scale_rounds_with_beta: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed_base: sim.master_seed,
            sim,
            repeats: 20,
            sweep: Sweep { axis: SweepAxis::None, values: Vec::new() },
            out_dir: PathBuf::from("results"),
            scale_rounds_with_beta: false,
        }
    }
}

impl ExperimentConfig {
    /// The points of the sweep; a single unnamed point without one.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        match self.sweep.axis {
            SweepAxis::None => vec![None],
            _ => self.sweep.values.iter().map(|&v| Some(v)).collect(),
        }
    }

    /// The simulation for one sweep point and repeat index.
    pub fn cell_config(&self, point: Option<f64>, repeat: usize) -> SimConfig {
        let mut sim = self.sim.clone();
        if let Some(v) = point {
            match self.sweep.axis {
                SweepAxis::None => {}
                SweepAxis::FakeFraction => sim.fake_clients = (v * sim.genuine_clients as f64).round() as usize,
                SweepAxis::Lambda => sim.attack.lambda = v,
                SweepAxis::Beta => sim.sample_rate = v,
                SweepAxis::Clip => sim.aggregation.clip_bound = v.is_finite().then_some(v),
            }
        }
        if self.scale_rounds_with_beta {
            sim.rounds = ((sim.rounds as f64 / sim.sample_rate).round() as usize).max(1);
        }
        sim.master_seed = self.seed_base.wrapping_add(repeat as u64);
        sim.attack.attacker_seed = self.sim.attack.attacker_seed.wrapping_add(repeat as u64);
        sim
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repeats == 0 {
            return Err(invalid("experiment.repeats", "must be at least 1"));
        }
        match (self.sweep.axis, self.sweep.values.is_empty()) {
            (SweepAxis::None, false) => return Err(invalid("sweep.values", "given without a sweep axis")),
            (axis, true) if axis != SweepAxis::None => return Err(invalid("sweep.values", "must not be empty")),
            _ => {}
        }
        for &v in &self.sweep.values {
            let ok = match self.sweep.axis {
                SweepAxis::None => true,
                SweepAxis::FakeFraction => v.is_finite() && v >= 0.0,
                SweepAxis::Lambda => v.is_finite() && v > 0.0,
                SweepAxis::Beta => v > 0.0 && v <= 1.0,
                SweepAxis::Clip => v > 0.0,
            };
            if !ok {
                return Err(invalid("sweep.values", format!("{v} is out of range for the chosen axis")));
            }
        }
        let sim = &self.sim;
        if sim.attack.kind != AttackKind::None && !(sim.attack.lambda > 0.0 && sim.attack.lambda.is_finite()) {
            return Err(invalid("attack.lambda", format!("must be positive and finite, got {}", sim.attack.lambda)));
        }
        if sim.attack.kind != AttackKind::None && sim.attack.attacker_seed == self.seed_base {
            return Err(invalid("attack.seed", "must differ from experiment.seed_base"));
        }
        if let Some(m) = sim.aggregation.clip_bound {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid("aggregation.clip", format!("must be positive, got {m}")));
            }
        }
        for point in self.sweep_points() {
            sim_key_check(&self.cell_config(point, 0))?;
        }
        Ok(())
    }

    /// Serializes the resolved configuration; [`parse_config`] reads it back
    /// to an equal value.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(&FileConfig::from_resolved(self))?)
    }
}

/// Maps the engine's validation error onto the configuration key that
/// caused it.
fn sim_key_check(sim: &SimConfig) -> Result<(), ConfigError> {
    let checks: [(&str, bool, &str); 8] = [
        ("simulation.genuine_clients", sim.genuine_clients >= 1, "must be at least 1"),
        ("simulation.sample_rate", sim.sample_rate > 0.0 && sim.sample_rate <= 1.0, "must lie in (0, 1]"),
        ("simulation.rounds", sim.rounds >= 1, "must be at least 1"),
        ("simulation.global_lr", sim.global_lr > 0.0 && sim.global_lr.is_finite(), "must be positive"),
        ("local.learning_rate", sim.local.learning_rate > 0.0 && sim.local.learning_rate.is_finite(), "must be positive"),
        ("local.batch_size", sim.local.batch_size >= 1, "must be at least 1"),
        ("simulation.eval_every", sim.eval_every != Some(0), "must be at least 1"),
        ("simulation.hidden_layers", sim.hidden_layers.iter().all(|&w| w >= 1), "widths must be at least 1"),
    ];
    for (key, ok, message) in checks {
        if !ok {
            return Err(invalid(key, message));
        }
    }
    if let PartitionScheme::NonIid { q } = sim.partition {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid("partition.q", format!("must lie in [0, 1], got {q}")));
        }
    }
    sim.validate().map_err(|e| invalid("simulation", e.to_string()))
}

// ---- file schema -------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    local: Option<LocalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack: Option<AttackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregation: Option<AggregationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<PartitionSection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed_base: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale_rounds_with_beta: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<SweepAxis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    genuine_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fake_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_layers: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationName>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ActivationName {
    Tanh,
    Relu,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AttackName {
    None,
    Random,
    History,
    Mpaf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<AttackName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RuleName {
    Fedavg,
    Median,
    TrimmedMean,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrimName {
    SelectedFakes,
    TotalFakes,
    Fixed,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trim: Option<TrimName>,
    /// Only read when `trim = "fixed"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    trim_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weighted_fedavg: Option<bool>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SourceName {
    Synthetic,
    Idx,
    Csv,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<SourceName>,
    // synthetic
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spread: Option<f64>,
    // synthetic and csv
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    // idx
    #[serde(skip_serializing_if = "Option::is_none")]
    train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_labels: Option<PathBuf>,
    // csv
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_column: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SchemeName {
    Noniid,
    Uniform,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<SchemeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
}

/// Parses and validates a TOML experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text)?;
    let config = file.resolve()?;
    config.validate()?;
    Ok(config)
}

/// Rejects keys that do not belong to the selected variant.
fn reject_extra(section: &str, present: &[(&str, bool)], owner: &str) -> Result<(), ConfigError> {
    match present.iter().find(|(_, p)| *p) {
        Some((key, _)) => Err(invalid(&format!("{section}.{key}"), format!("only applies to {owner}"))),
        None => Ok(()),
    }
}

fn required<T>(value: Option<T>, key: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| invalid(key, "is required for this data source"))
}

impl FileConfig {
    fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let mut out = ExperimentConfig::default();

        let exp = self.experiment.unwrap_or_default();
        out.repeats = exp.repeats.unwrap_or(out.repeats);
        out.seed_base = exp.seed_base.unwrap_or(out.seed_base);
        out.out_dir = exp.out_dir.unwrap_or(out.out_dir);
        out.scale_rounds_with_beta = exp.scale_rounds_with_beta.unwrap_or(false);

        let sweep = self.sweep.unwrap_or_default();
        out.sweep = Sweep { axis: sweep.axis.unwrap_or(SweepAxis::None), values: sweep.values.unwrap_or_default() };

        let sim = &mut out.sim;
        sim.master_seed = out.seed_base;
        let s = self.simulation.unwrap_or_default();
        sim.genuine_clients = s.genuine_clients.unwrap_or(sim.genuine_clients);
        sim.fake_clients = s.fake_clients.unwrap_or(sim.fake_clients);
        sim.sample_rate = s.sample_rate.unwrap_or(sim.sample_rate);
        sim.rounds = s.rounds.unwrap_or(sim.rounds);
        sim.global_lr = s.global_lr.unwrap_or(sim.global_lr);
        sim.eval_every = s.eval_every;
        sim.hidden_layers = s.hidden_layers.unwrap_or(sim.hidden_layers.clone());
        if let Some(a) = s.activation {
            sim.activation = match a {
                ActivationName::Tanh => Activation::Tanh,
                ActivationName::Relu => Activation::Relu,
            };
        }

        let l = self.local.unwrap_or_default();
        let d = LocalTraining::default();
        sim.local = LocalTraining {
            learning_rate: l.learning_rate.unwrap_or(d.learning_rate),
            batch_size: l.batch_size.unwrap_or(d.batch_size),
            epochs: l.epochs.unwrap_or(d.epochs),
        };

        let a = self.attack.unwrap_or_default();
        let d = AttackSpec::default();
        sim.attack = AttackSpec {
            kind: match a.kind.unwrap_or(AttackName::None) {
                AttackName::None => AttackKind::None,
                AttackName::Random => AttackKind::Random,
                AttackName::History => AttackKind::History,
                AttackName::Mpaf => AttackKind::Mpaf,
            },
            lambda: a.lambda.unwrap_or(d.lambda),
            attacker_seed: a.seed.unwrap_or(d.attacker_seed),
        };

        let g = self.aggregation.unwrap_or_default();
        let trim = match g.trim.unwrap_or(TrimName::SelectedFakes) {
            TrimName::SelectedFakes => TrimPolicy::SelectedFakes,
            TrimName::TotalFakes => TrimPolicy::TotalFakes,
            TrimName::Fixed => TrimPolicy::Fixed(g.trim_k.ok_or_else(|| invalid("aggregation.trim_k", "is required when trim = \"fixed\""))?),
        };
        if g.trim_k.is_some() && !matches!(trim, TrimPolicy::Fixed(_)) {
            return Err(invalid("aggregation.trim_k", "only applies when trim = \"fixed\""));
        }
        let rule = match g.rule.unwrap_or(RuleName::TrimmedMean) {
            RuleName::Fedavg => Rule::FedAvg,
            RuleName::Median => Rule::Median,
            RuleName::TrimmedMean => Rule::TrimmedMean(trim),
        };
        // An infinite bound means no clipping.
        let clip = g.clip.filter(|m| !(m.is_infinite() && *m > 0.0));
        sim.aggregation = AggregationRule { weighted_fedavg: g.weighted_fedavg.unwrap_or(false), ..AggregationRule::new(rule).with_clip(clip) };

        let d = self.data.unwrap_or_default();
        sim.data = match d.source.unwrap_or(SourceName::Synthetic) {
            SourceName::Synthetic => {
                reject_extra(
                    "data",
                    &[
                        ("train_images", d.train_images.is_some()),
                        ("train_labels", d.train_labels.is_some()),
                        ("test_images", d.test_images.is_some()),
                        ("test_labels", d.test_labels.is_some()),
                        ("path", d.path.is_some()),
                        ("label_column", d.label_column.is_some()),
                        ("test_fraction", d.test_fraction.is_some()),
                    ],
                    "source = \"idx\" or \"csv\"",
                )?;
                let DataSource::Synthetic { classes, dim, per_class, spread, seed } = DataSource::default() else {
                    unreachable!("default data source is synthetic")
                };
                DataSource::Synthetic {
                    classes: d.classes.unwrap_or(classes),
                    dim: d.dim.unwrap_or(dim),
                    per_class: d.per_class.unwrap_or(per_class),
                    spread: d.spread.unwrap_or(spread),
                    seed: d.seed.unwrap_or(seed),
                }
            }
            SourceName::Idx => {
                reject_extra(
                    "data",
                    &[
                        ("classes", d.classes.is_some()),
                        ("dim", d.dim.is_some()),
                        ("per_class", d.per_class.is_some()),
                        ("spread", d.spread.is_some()),
                        ("seed", d.seed.is_some()),
                        ("path", d.path.is_some()),
                        ("label_column", d.label_column.is_some()),
                        ("test_fraction", d.test_fraction.is_some()),
                    ],
                    "other data sources",
                )?;
                DataSource::Idx {
                    train_images: required(d.train_images, "data.train_images")?,
                    train_labels: required(d.train_labels, "data.train_labels")?,
                    test_images: required(d.test_images, "data.test_images")?,
                    test_labels: required(d.test_labels, "data.test_labels")?,
                }
            }
            SourceName::Csv => {
                reject_extra(
                    "data",
                    &[
                        ("classes", d.classes.is_some()),
                        ("dim", d.dim.is_some()),
                        ("per_class", d.per_class.is_some()),
                        ("spread", d.spread.is_some()),
                        ("train_images", d.train_images.is_some()),
                        ("train_labels", d.train_labels.is_some()),
                        ("test_images", d.test_images.is_some()),
                        ("test_labels", d.test_labels.is_some()),
                    ],
                    "other data sources",
                )?;
                let test_fraction = d.test_fraction.unwrap_or(0.2);
                if !(0.0..1.0).contains(&test_fraction) {
                    return Err(invalid("data.test_fraction", format!("must lie in [0, 1), got {test_fraction}")));
                }
                DataSource::Csv {
                    path: required(d.path, "data.path")?,
                    label_column: d.label_column.unwrap_or(0),
                    test_fraction,
                    seed: d.seed.unwrap_or(2021),
                }
            }
        };

        let p = self.partition.unwrap_or_default();
        sim.partition = match p.scheme.unwrap_or(SchemeName::Noniid) {
            SchemeName::Noniid => PartitionScheme::NonIid { q: p.q.unwrap_or(0.5) },
            SchemeName::Uniform => {
                if p.q.is_some() {
                    return Err(invalid("partition.q", "only applies to scheme = \"noniid\""));
                }
                PartitionScheme::Uniform
            }
        };
        Ok(out)
    }

    fn from_resolved(c: &ExperimentConfig) -> Self {
        let sim = &c.sim;
        let (rule, trim, trim_k) = match sim.aggregation.rule {
            Rule::FedAvg => (RuleName::Fedavg, None, None),
            Rule::Median => (RuleName::Median, None, None),
            Rule::TrimmedMean(TrimPolicy::SelectedFakes) => (RuleName::TrimmedMean, Some(TrimName::SelectedFakes), None),
            Rule::TrimmedMean(TrimPolicy::TotalFakes) => (RuleName::TrimmedMean, Some(TrimName::TotalFakes), None),
            Rule::TrimmedMean(TrimPolicy::Fixed(k)) => (RuleName::TrimmedMean, Some(TrimName::Fixed), Some(k)),
        };
        let data = match &sim.data {
            DataSource::Synthetic { classes, dim, per_class, spread, seed } => DataSection {
                source: Some(SourceName::Synthetic),
                classes: Some(*classes),
                dim: Some(*dim),
                per_class: Some(*per_class),
                spread: Some(*spread),
                seed: Some(*seed),
                ..Default::default()
            },
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => DataSection {
                source: Some(SourceName::Idx),
                train_images: Some(train_images.clone()),
                train_labels: Some(train_labels.clone()),
                test_images: Some(test_images.clone()),
                test_labels: Some(test_labels.clone()),
                ..Default::default()
            },
            DataSource::Csv { path, label_column, test_fraction, seed } => DataSection {
                source: Some(SourceName::Csv),
                path: Some(path.clone()),
                label_column: Some(*label_column),
                test_fraction: Some(*test_fraction),
                seed: Some(*seed),
                ..Default::default()
            },
        };
        let partition = match sim.partition {
            PartitionScheme::NonIid { q } => PartitionSection { scheme: Some(SchemeName::Noniid), q: Some(q) },
            PartitionScheme::Uniform => PartitionSection { scheme: Some(SchemeName::Uniform), q: None },
        };
        FileConfig {
            experiment: Some(ExperimentSection {
                repeats: Some(c.repeats),
                seed_base: Some(c.seed_base),
                out_dir: Some(c.out_dir.clone()),
                scale_rounds_with_beta: Some(c.scale_rounds_with_beta),
            }),
            sweep: Some(SweepSection {
                axis: Some(c.sweep.axis),
                values: (c.sweep.axis != SweepAxis::None).then(|| c.sweep.values.clone()),
            }),
            simulation: Some(SimulationSection {
                genuine_clients: Some(sim.genuine_clients),
                fake_clients: Some(sim.fake_clients),
                sample_rate: Some(sim.sample_rate),
                rounds: Some(sim.rounds),
                global_lr: Some(sim.global_lr),
                eval_every: sim.eval_every,
                hidden_layers: Some(sim.hidden_layers.clone()),
                activation: Some(match sim.activation {
                    Activation::Tanh => ActivationName::Tanh,
                    Activation::Relu => ActivationName::Relu,
                }),
            }),
            local: Some(LocalSection {
                learning_rate: Some(sim.local.learning_rate),
                batch_size: Some(sim.local.batch_size),
                epochs: Some(sim.local.epochs),
            }),
            attack: Some(AttackSection {
                kind: Some(match sim.attack.kind {
                    AttackKind::None => AttackName::None,
                    AttackKind::Random => AttackName::Random,
                    AttackKind::History => AttackName::History,
                    AttackKind::Mpaf => AttackName::Mpaf,
                }),
                lambda: Some(sim.attack.lambda),
                seed: Some(sim.attack.attacker_seed),
            }),
            aggregation: Some(AggregationSection {
                rule: Some(rule),
                trim,
                trim_k,
                clip: sim.aggregation.clip_bound,
                weighted_fedavg: Some(sim.aggregation.weighted_fedavg),
            }),
            data: Some(data),
            partition: Some(partition),
        }
    }
}
