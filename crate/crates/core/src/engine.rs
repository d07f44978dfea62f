//! The federated round loop.
//!
//! Each round the server samples clients from the combined pool of genuine
//! ids `0..n` and fake ids `n..n+m`, genuine clients train locally on their
//! shards, fake clients craft updates from the global model they receive,
//! and the server clips, aggregates and steps the global model.

use std::path::PathBuf;

use rand::seq::index;
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::{aggregate, apply_global, AggregationError, AggregationRule, ClientKind, ClientUpdate, Rule, TrimPolicy};
use crate::attacks::{AttackError, AttackKind, AttackSpec, Attacker};
use crate::data::{self, DataError, Dataset, PartitionPlan};
use crate::model::{evaluate, init_params, local_train, Activation, LocalTraining, MlpSpec, ModelError};
use crate::vectors::{derive_stream, l2_norm, ParamVector, RngStream, VectorError};

/// Actor ids for streams that do not belong to a client.
pub const SERVER_ACTOR: u64 = 0;
pub const SAMPLER_ACTOR: u64 = u64::MAX;
pub const PARTITION_ACTOR: u64 = u64::MAX - 1;
pub const DATA_ACTOR: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<EngineError>,
    },
    #[error("runs disagree on evaluated rounds: {0}")]
    CadenceMismatch(String),
}

impl EngineError {
    fn in_round(self, round: usize) -> Self {
        EngineError::Round { round, source: Box::new(self) }
    }
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian blobs; see [`data::gen_synthetic`].
    Synthetic { classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64 },
    /// IDX image and label files for both splits.
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
    /// One numeric CSV, split into train/test by a seeded shuffle.
    Csv { path: PathBuf, label_column: usize, test_fraction: f64, seed: u64 },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { classes: 10, dim: 20, per_class: 120, spread: 0.1, seed: 2021 }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset), EngineError> {
        match self {
            DataSource::Synthetic { classes, dim, per_class, spread, seed } => {
                Ok(data::gen_synthetic(*classes, *dim, *per_class, *spread, &mut derive_stream(*seed, -1, DATA_ACTOR))?)
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                let train = data::idx_dataset(&data::read_idx_file(train_images)?, &data::read_idx_file(train_labels)?)?;
                let test = data::idx_dataset(&data::read_idx_file(test_images)?, &data::read_idx_file(test_labels)?)?;
                let classes = train.num_classes().max(test.num_classes());
                let widen = |d: Dataset| Dataset::new(d.features().to_vec(), d.width(), d.labels().to_vec(), classes);
                Ok((widen(train)?, widen(test)?))
            }
            DataSource::Csv { path, label_column, test_fraction, seed } => {
                let all = data::load_dense_csv(path, *label_column)?;
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(EngineError::Config(format!("test_fraction {test_fraction} outside [0, 1)")));
                }
                let mut order: Vec<usize> = (0..all.len()).collect();
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut derive_stream(*seed, -1, DATA_ACTOR));
                let test_len = ((all.len() as f64 * test_fraction).round() as usize).clamp(1, all.len().saturating_sub(1).max(1));
                let (test_idx, train_idx) = order.split_at(test_len);
                Ok((all.subset(train_idx), all.subset(test_idx)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// Label skew with degree `q`.
    NonIid { q: f64 },
    Uniform,
}

/// Every knob of a single simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Genuine clients `n`.
    pub genuine_clients: usize,
    /// Fake clients `m`.
    pub fake_clients: usize,
    /// Per-round sample rate `β`.
    pub sample_rate: f64,
    /// Total rounds `T`.
    pub rounds: usize,
    /// Global learning rate `η`.
    pub global_lr: f64,
    pub attack: AttackSpec,
    pub aggregation: AggregationRule,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub data: DataSource,
    pub partition: PartitionScheme,
    pub local: LocalTraining,
    /// Rounds between evaluations; `None` means `max(1, T/100)`.
    pub eval_every: Option<usize>,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            genuine_clients: 100,
            fake_clients: 10,
            sample_rate: 1.0,
            rounds: 200,
            global_lr: 1.0,
            attack: AttackSpec::default(),
            aggregation: AggregationRule::new(Rule::TrimmedMean(TrimPolicy::SelectedFakes)),
            hidden_layers: vec![64],
            activation: Activation::Tanh,
            data: DataSource::default(),
            partition: PartitionScheme::NonIid { q: 0.5 },
            local: LocalTraining::default(),
            eval_every: None,
            master_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |msg: String| Err(EngineError::Config(msg));
        if self.genuine_clients == 0 {
            return fail("genuine_clients must be at least 1".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return fail(format!("sample_rate must lie in (0, 1], got {}", self.sample_rate));
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return fail(format!("global_lr must be positive, got {}", self.global_lr));
        }
        if self.eval_every == Some(0) {
            return fail("eval_every must be at least 1".into());
        }
        if self.hidden_layers.contains(&0) {
            return fail("hidden layer widths must be at least 1".into());
        }
        if !(self.local.learning_rate > 0.0 && self.local.learning_rate.is_finite()) {
            return fail(format!("local learning rate must be positive, got {}", self.local.learning_rate));
        }
        if self.local.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if let PartitionScheme::NonIid { q } = self.partition {
            if !(0.0..=1.0).contains(&q) {
                return fail(format!("q must lie in [0, 1], got {q}"));
            }
        }
        if self.attack.kind != AttackKind::None && self.attack.attacker_seed == self.master_seed {
            return fail("attacker_seed must differ from the master seed".into());
        }
        self.attack.validate()?;
        self.aggregation.validate()?;
        Ok(())
    }

    /// Fake clients that actually take part; an attack-free run has none.
    pub fn active_fake_clients(&self) -> usize {
        if self.attack.kind == AttackKind::None {
            0
        } else {
            self.fake_clients
        }
    }

    pub fn eval_interval(&self) -> usize {
        self.eval_every.unwrap_or((self.rounds / 100).max(1))
    }

    /// Fake clients per genuine client, `m/n`.
    pub fn fake_fraction(&self) -> f64 {
        self.fake_clients as f64 / self.genuine_clients as f64
    }
}

/// Telemetry for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based: the record describes the model after this many rounds.
    pub round: usize,
    pub selected: Vec<usize>,
    pub fake_selected: usize,
    /// Trim count `k` applied this round.
    pub trim: usize,
    /// ℓ2 norm of the aggregated update `g^t`.
    pub update_norm: f64,
    pub test_accuracy: Option<f64>,
    pub warnings: Vec<String>,
}

/// Sample count for a pool of `pool` clients at rate `beta`: `round(β·pool)`,
/// at least one.
pub fn sample_size(pool: usize, beta: f64) -> usize {
    ((beta * pool as f64).round() as usize).clamp(1, pool.max(1))
}

/// Uniform sample without replacement from `pool`, returned in ascending order.
pub fn sample_from_pool(pool: &[usize], beta: f64, stream: &mut RngStream) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let count = sample_size(pool.len(), beta);
    let mut picked: Vec<usize> = index::sample(stream, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Samples from genuine ids `0..n` and fake ids `n..n+m`.
pub fn sample_clients(n: usize, m: usize, beta: f64, stream: &mut RngStream) -> Vec<usize> {
    let pool: Vec<usize> = (0..n + m).collect();
    sample_from_pool(&pool, beta, stream)
}

/// Global model and attacker memory between rounds.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Rounds completed so far.
    pub round: usize,
    pub global: ParamVector,
    pub attacker: Attacker,
}

/// A configured run with its data loaded and partitioned.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    spec: MlpSpec,
    shards: Vec<Dataset>,
    test: Dataset,
    pool: Vec<usize>,
    claimed_examples: usize,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let (train, test) = config.data.load()?;
        Self::with_data(config, &train, test)
    }

    /// Builds a run over already-loaded data, skipping [`DataSource::load`].
    pub fn with_data(config: SimConfig, train: &Dataset, test: Dataset) -> Result<Self, EngineError> {
        config.validate()?;
        if train.width() != test.width() || train.num_classes() != test.num_classes() {
            return Err(EngineError::Config("train and test sets disagree on width or class count".into()));
        }
        if test.is_empty() {
            return Err(EngineError::Config("test set is empty".into()));
        }
        let mut widths = vec![train.width()];
        widths.extend(&config.hidden_layers);
        widths.push(train.num_classes());
        let spec = MlpSpec::new(widths, config.activation)?;

        let mut stream = derive_stream(config.master_seed, -1, PARTITION_ACTOR);
        let plan: PartitionPlan = match config.partition {
            PartitionScheme::NonIid { q } => data::partition_noniid(train, config.genuine_clients, q, &mut stream)?,
            PartitionScheme::Uniform => data::partition_uniform(train, config.genuine_clients, &mut stream)?,
        };
        let shards: Vec<Dataset> = plan.shards.iter().map(|idx| train.subset(idx)).collect();

        // Clients without data never get selected.
        let n = config.genuine_clients;
        let pool: Vec<usize> =
            (0..n).filter(|&c| !shards[c].is_empty()).chain(n..n + config.active_fake_clients()).collect();

        // Fake clients report the median genuine shard size to weighted FedAvg.
        let mut sizes: Vec<usize> = shards.iter().map(Dataset::len).collect();
        sizes.sort_unstable();
        let claimed_examples = sizes[sizes.len() / 2];

        Ok(Self { config, spec, shards, test, pool, claimed_examples })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn model_spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn initial_state(&self) -> Result<SimState, EngineError> {
        let global = init_params(&self.spec, &mut derive_stream(self.config.master_seed, -1, SERVER_ACTOR));
        let attacker = Attacker::new(self.config.attack, &self.spec)?;
        Ok(SimState { round: 0, global, attacker })
    }

    fn trim_for(&self, fake_selected: usize) -> usize {
        match self.config.aggregation.rule {
            Rule::TrimmedMean(TrimPolicy::SelectedFakes) => fake_selected,
            Rule::TrimmedMean(TrimPolicy::TotalFakes) => self.config.active_fake_clients(),
            Rule::TrimmedMean(TrimPolicy::Fixed(k)) => k,
            Rule::FedAvg | Rule::Median => 0,
        }
    }

    fn is_eval_round(&self, completed: usize) -> bool {
        completed % self.config.eval_interval() == 0 || completed == self.config.rounds
    }

    /// Runs round `state.round` and returns the next state with its record.
    pub fn run_round(&self, state: SimState) -> Result<(SimState, RoundRecord), EngineError> {
        let t = state.round;
        self.step(state).map_err(|e| e.in_round(t))
    }

    fn step(&self, state: SimState) -> Result<(SimState, RoundRecord), EngineError> {
        let SimState { round: t, global, mut attacker } = state;
        let cfg = &self.config;
        let n = cfg.genuine_clients;

        let selected = sample_from_pool(&self.pool, cfg.sample_rate, &mut derive_stream(cfg.master_seed, t as i64, SAMPLER_ACTOR));
        let (genuine, fakes): (Vec<usize>, Vec<usize>) = selected.iter().partition(|&&id| id < n);

        let mut updates: Vec<ClientUpdate> = genuine
            .par_iter()
            .map(|&id| {
                let shard = &self.shards[id];
                let mut stream = derive_stream(cfg.master_seed, t as i64, id as u64);
                let update = local_train(&self.spec, &global, &shard.batch(), &cfg.local, &mut stream)?;
                Ok(ClientUpdate { client_id: id, kind: ClientKind::Genuine, update, num_examples: shard.len() })
            })
            .collect::<Result<_, EngineError>>()?;

        if !fakes.is_empty() {
            attacker.observe(&global, t);
            for (id, update) in fakes.iter().zip(attacker.craft(&fakes, t)?) {
                updates.push(ClientUpdate { client_id: *id, kind: ClientKind::Fake, update, num_examples: self.claimed_examples });
            }
        }

        let trim = self.trim_for(fakes.len());
        let agg = aggregate(&cfg.aggregation, &updates, trim)?;
        let next = apply_global(&global, &agg.update, cfg.global_lr)?;

        let completed = t + 1;
        let test_accuracy = if self.is_eval_round(completed) {
            Some(evaluate(&self.spec, &next, &self.test.batch())?)
        } else {
            None
        };
        let record = RoundRecord {
            round: completed,
            selected,
            fake_selected: fakes.len(),
            trim: agg.trim,
            update_norm: l2_norm(&agg.update)?,
            test_accuracy,
            warnings: agg.warnings,
        };
        Ok((SimState { round: completed, global: next, attacker }, record))
    }

    /// All `T` rounds from a fresh global model.
    pub fn run(&self) -> Result<Vec<RoundRecord>, SimAbort> {
        self.run_with_final_model().map(|(records, _)| records)
    }

    /// Like [`Simulation::run`], also returning the final global model.
    pub fn run_with_final_model(&self) -> Result<(Vec<RoundRecord>, ParamVector), SimAbort> {
        let mut records = Vec::with_capacity(self.config.rounds);
        let mut state = match self.initial_state() {
            Ok(s) => s,
            Err(error) => return Err(SimAbort { records, error }),
        };
        while state.round < self.config.rounds {
            match self.run_round(state) {
                Ok((next, record)) => {
                    records.push(record);
                    state = next;
                }
                Err(error) => return Err(SimAbort { records, error }),
            }
        }
        Ok((records, state.global))
    }
}

/// A run that stopped early, with the records of the rounds that completed.
#[derive(Debug, Error)]
#[error("simulation aborted after {} rounds: {error}", records.len())]
pub struct SimAbort {
    pub records: Vec<RoundRecord>,
    #[source]
    pub error: EngineError,
}

impl SimAbort {
    /// Accuracy at the last evaluation before the abort.
    pub fn last_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_accuracy)
    }
}

/// Loads data and runs the whole simulation.
pub fn run_simulation(config: &SimConfig) -> Result<Vec<RoundRecord>, SimAbort> {
    let sim = Simulation::new(config.clone()).map_err(|error| SimAbort { records: Vec::new(), error })?;
    sim.run()
}

/// Mean and population standard deviation of test accuracy at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryPoint {
    pub round: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-round accuracy statistics across runs that share an evaluation cadence.
pub fn summarize(runs: &[Vec<RoundRecord>]) -> Result<Vec<SummaryPoint>, EngineError> {
    let evaluated = |run: &Vec<RoundRecord>| -> Vec<(usize, f64)> {
        run.iter().filter_map(|r| r.test_accuracy.map(|a| (r.round, a))).collect()
    };
    let series: Vec<Vec<(usize, f64)>> = runs.iter().map(evaluated).collect();
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    let rounds: Vec<usize> = first.iter().map(|p| p.0).collect();
    for (i, s) in series.iter().enumerate() {
        if s.iter().map(|p| p.0).ne(rounds.iter().copied()) {
            return Err(EngineError::CadenceMismatch(format!("run {i} evaluates different rounds than run 0")));
        }
    }
    let k = series.len() as f64;
    Ok(rounds
        .iter()
        .enumerate()
        .map(|(j, &round)| {
            let mean = series.iter().map(|s| s[j].1).sum::<f64>() / k;
            let var = series.iter().map(|s| (s[j].1 - mean).powi(2)).sum::<f64>() / k;
            SummaryPoint { round, mean, std: var.sqrt() }
        })
        .collect())
}

/// Final-round accuracy of a finished run.
pub fn final_accuracy(records: &[RoundRecord]) -> Option<f64> {
    records.last().and_then(|r| r.test_accuracy)
}
