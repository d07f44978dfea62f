//! Fake-client update crafting.
//!
//! The attacker only ever sees the global models delivered to its fake
//! clients. None of the functions here take genuine data, genuine updates,
//! the server learning rate, or the aggregation rule.

use thiserror::Error;

use crate::model::{init_params, MlpSpec};
use crate::vectors::{derive_stream, gaussian_vector, linear_combine, ParamVector, RngStream, VectorError};

/// Actor id for the attacker's base-model stream (round −1).
pub const BASE_MODEL_ACTOR: u64 = u64::MAX - 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("scaling factor lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    None,
    /// `−λ·ε` with `ε ~ N(0, I)` drawn per fake client.
    Random,
    /// `−λ·(w_t − w_{t−1})` from the two latest observed models.
    History,
    /// `λ·(w′ − w_t)` towards a fixed base model `w′`.
    Mpaf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub lambda: f64,
    /// Seeds the base model and the random attack's noise.
    pub attacker_seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self { kind: AttackKind::None, lambda: 1e6, attacker_seed: 0xA77A_C4E5 }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.kind != AttackKind::None && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(AttackError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

/// A freshly initialized model used as the MPAF target.
pub fn make_base_model(spec: &MlpSpec, attacker_seed: u64) -> ParamVector {
    init_params(spec, &mut derive_stream(attacker_seed, -1, BASE_MODEL_ACTOR))
}

pub fn craft_random(lambda: f64, dim: usize, stream: &mut RngStream) -> Result<ParamVector, AttackError> {
    Ok(gaussian_vector(stream, dim).scaled(-lambda)?)
}

pub fn craft_history(lambda: f64, current: &ParamVector, previous: &ParamVector) -> Result<ParamVector, AttackError> {
    Ok(linear_combine(-lambda, current, lambda, previous)?)
}

pub fn craft_mpaf(lambda: f64, base: &ParamVector, current: &ParamVector) -> Result<ParamVector, AttackError> {
    Ok(linear_combine(lambda, base, -lambda, current)?)
}

/// What the attacker has learned so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackerState {
    /// Latest observed global model and the round it was received in.
    pub latest: Option<(usize, ParamVector)>,
    /// The observation before `latest`.
    pub previous: Option<(usize, ParamVector)>,
    pub base_model: Option<ParamVector>,
}

/// Records a global model delivered to a fake client in `round`.
pub fn attacker_observe(state: &AttackerState, global: &ParamVector, round: usize) -> AttackerState {
    AttackerState {
        previous: state.latest.clone(),
        latest: Some((round, global.clone())),
        base_model: state.base_model.clone(),
    }
}

/// The attacker as driven by the engine: an [`AttackSpec`] plus its
/// accumulated [`AttackerState`].
#[derive(Debug, Clone)]
pub struct Attacker {
    spec: AttackSpec,
    state: AttackerState,
    dim: usize,
}

impl Attacker {
    pub fn new(spec: AttackSpec, model: &MlpSpec) -> Result<Self, AttackError> {
        spec.validate()?;
        let base_model = (spec.kind == AttackKind::Mpaf).then(|| make_base_model(model, spec.attacker_seed));
        Ok(Self { spec, state: AttackerState { base_model, ..Default::default() }, dim: model.param_count() })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn state(&self) -> &AttackerState {
        &self.state
    }

    pub fn observe(&mut self, global: &ParamVector, round: usize) {
        self.state = attacker_observe(&self.state, global, round);
    }

    /// One update per fake client in `fake_ids`, for the model most recently
    /// observed. Call [`Attacker::observe`] for the round first.
    pub fn craft(&self, fake_ids: &[usize], round: usize) -> Result<Vec<ParamVector>, AttackError> {
        let lambda = self.spec.lambda;
        let shared = match self.spec.kind {
            AttackKind::None => return Ok(Vec::new()),
            AttackKind::Random => {
                return fake_ids
                    .iter()
                    .map(|&id| craft_random(lambda, self.dim, &mut derive_stream(self.spec.attacker_seed, round as i64, id as u64)))
                    .collect();
            }
            AttackKind::History => match (&self.state.latest, &self.state.previous) {
                (Some((_, current)), Some((_, previous))) => craft_history(lambda, current, previous)?,
                // No earlier model to difference against yet.
                _ => ParamVector::zeros(self.dim),
            },
            AttackKind::Mpaf => {
                let base = self.state.base_model.as_ref().expect("base model is set for MPAF");
                match &self.state.latest {
                    Some((_, current)) => craft_mpaf(lambda, base, current)?,
                    None => ParamVector::zeros(self.dim),
                }
            }
        };
        Ok(vec![shared; fake_ids.len()])
    }
}
