//! Server-side aggregation: norm clipping, FedAvg, coordinate-wise Median
//! and Trimmed-mean, and the global model step `w ← w + η·g`.
//!
//! Every rule first orders the updates by client id, so the output never
//! depends on the order in which updates arrived.

use thiserror::Error;

use crate::vectors::{l2_norm, linear_combine, ParamVector, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("update from client {client_id} has dimension {actual}, expected {expected}")]
    Dimension { client_id: usize, expected: usize, actual: usize },
    #[error("clip bound must be positive and finite, got {0}")]
    InvalidClipBound(f64),
    #[error("global learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientKind {
    Genuine,
    Fake,
}

/// One client's submission for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub kind: ClientKind,
    pub update: ParamVector,
    /// Example count the client reports; only used by weighted FedAvg.
    pub num_examples: usize,
}

/// How Trimmed-mean picks `k` each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimPolicy {
    /// `k` = number of fake clients selected in the round.
    SelectedFakes,
    /// `k` = total number of fake clients `m`.
    TotalFakes,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    FedAvg,
    Median,
    TrimmedMean(TrimPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationRule {
    pub rule: Rule,
    /// Norm-clipping bound `M`; `None` disables clipping.
    pub clip_bound: Option<f64>,
    /// Weight FedAvg by reported example counts instead of averaging uniformly.
    pub weighted_fedavg: bool,
}

impl AggregationRule {
    pub fn new(rule: Rule) -> Self {
        Self { rule, clip_bound: None, weighted_fedavg: false }
    }

    pub fn with_clip(mut self, bound: Option<f64>) -> Self {
        self.clip_bound = bound;
        self
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        match self.clip_bound {
            Some(m) if !(m > 0.0 && m.is_finite()) => Err(AggregationError::InvalidClipBound(m)),
            _ => Ok(()),
        }
    }
}

/// `g / max(1, ‖g‖₂ / M)`. Updates already within the bound come back
/// bit-for-bit unchanged.
pub fn clip_update(g: &ParamVector, bound: f64) -> Result<ParamVector, AggregationError> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(AggregationError::InvalidClipBound(bound));
    }
    let factor = l2_norm(g)? / bound;
    if factor <= 1.0 {
        return Ok(g.clone());
    }
    Ok(ParamVector::new(g.as_slice().iter().map(|v| v / factor).collect())?)
}

fn sorted_by_client(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>, AggregationError> {
    let first = updates.first().ok_or(AggregationError::Empty)?;
    let dim = first.update.dim();
    if let Some(bad) = updates.iter().find(|u| u.update.dim() != dim) {
        return Err(AggregationError::Dimension { client_id: bad.client_id, expected: dim, actual: bad.update.dim() });
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    Ok(sorted)
}

/// Unweighted coordinate-wise mean.
pub fn agg_fedavg(updates: &[ClientUpdate]) -> Result<ParamVector, AggregationError> {
    let sorted = sorted_by_client(updates)?;
    let mut sum = vec![0.0; sorted[0].update.dim()];
    for u in &sorted {
        for (s, v) in sum.iter_mut().zip(u.update.as_slice()) {
            *s += v;
        }
    }
    let n = sorted.len() as f64;
    Ok(ParamVector::new(sum.into_iter().map(|s| s / n).collect())?)
}

/// Mean weighted by each client's reported example count. Falls back to the
/// unweighted mean when every count is zero.
pub fn agg_fedavg_weighted(updates: &[ClientUpdate]) -> Result<ParamVector, AggregationError> {
    let sorted = sorted_by_client(updates)?;
    let total: usize = sorted.iter().map(|u| u.num_examples).sum();
    if total == 0 {
        return agg_fedavg(updates);
    }
    let mut sum = vec![0.0; sorted[0].update.dim()];
    for u in &sorted {
        let w = u.num_examples as f64 / total as f64;
        for (s, v) in sum.iter_mut().zip(u.update.as_slice()) {
            *s += w * v;
        }
    }
    Ok(ParamVector::new(sum)?)
}

/// Applies `reduce` to the ascending-sorted values of every coordinate.
fn coordinate_wise(
    updates: &[ClientUpdate],
    reduce: impl Fn(&[f64]) -> f64,
) -> Result<ParamVector, AggregationError> {
    let sorted = sorted_by_client(updates)?;
    let dim = sorted[0].update.dim();
    let mut column = Vec::with_capacity(sorted.len());
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(sorted.iter().map(|u| u.update[j]));
        column.sort_unstable_by(f64::total_cmp);
        out.push(reduce(&column));
    }
    Ok(ParamVector::new(out)?)
}

fn median_of_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Mean of the sorted slice after dropping `k` values at each end.
fn trimmed_mean_of_sorted(values: &[f64], k: usize) -> f64 {
    let kept = &values[k..values.len() - k];
    if kept.first() == kept.last() {
        // All survivors are equal (sorted); avoid rounding in sum/len.
        return kept[0];
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Coordinate-wise median; even counts average the two central values.
pub fn agg_median(updates: &[ClientUpdate]) -> Result<ParamVector, AggregationError> {
    coordinate_wise(updates, median_of_sorted)
}

/// Coordinate-wise trimmed mean dropping the `k` largest and `k` smallest
/// values. When `2k ≥ count` nothing would survive, so the coordinate-wise
/// median is returned instead.
pub fn agg_trimmed_mean(updates: &[ClientUpdate], k: usize) -> Result<ParamVector, AggregationError> {
    if 2 * k >= updates.len() {
        return agg_median(updates);
    }
    coordinate_wise(updates, |values| trimmed_mean_of_sorted(values, k))
}

/// Result of one server aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub update: ParamVector,
    /// Trim count actually applied (0 for FedAvg and Median).
    pub trim: usize,
    pub warnings: Vec<String>,
}

/// Clips (when configured) and aggregates one round of updates. `trim` is
/// the Trimmed-mean `k` the caller resolved from the rule's policy.
pub fn aggregate(rule: &AggregationRule, updates: &[ClientUpdate], trim: usize) -> Result<Aggregate, AggregationError> {
    rule.validate()?;
    let clipped;
    let updates = match rule.clip_bound {
        Some(bound) => {
            clipped = updates
                .iter()
                .map(|u| Ok(ClientUpdate { update: clip_update(&u.update, bound)?, ..u.clone() }))
                .collect::<Result<Vec<_>, AggregationError>>()?;
            &clipped[..]
        }
        None => updates,
    };
    let mut warnings = Vec::new();
    let (update, trim) = match rule.rule {
        Rule::FedAvg if rule.weighted_fedavg => (agg_fedavg_weighted(updates)?, 0),
        Rule::FedAvg => (agg_fedavg(updates)?, 0),
        Rule::Median => (agg_median(updates)?, 0),
        Rule::TrimmedMean(_) => {
            if 2 * trim >= updates.len() {
                warnings.push(format!(
                    "trim k={trim} leaves nothing of {} updates; used coordinate-wise median",
                    updates.len()
                ));
            }
            (agg_trimmed_mean(updates, trim)?, trim)
        }
    };
    Ok(Aggregate { update, trim, warnings })
}

/// Global model step `w_{t+1} = w_t + η·g_t`.
pub fn apply_global(global: &ParamVector, update: &ParamVector, eta: f64) -> Result<ParamVector, AggregationError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AggregationError::InvalidLearningRate(eta));
    }
    Ok(linear_combine(1.0, global, eta, update)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn updates(values: &[&[f64]]) -> Vec<ClientUpdate> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| ClientUpdate { client_id: i, kind: ClientKind::Genuine, update: pv(v), num_examples: 1 })
            .collect()
    }

    #[test]
    fn clip_examples() {
        let g = pv(&[6.0, 8.0]);
        let c = clip_update(&g, 5.0).unwrap();
        assert_eq!(c, pv(&[3.0, 4.0]));
        assert_eq!(l2_norm(&c).unwrap(), 5.0);
        let small = pv(&[0.6, 0.8, 2.6832815729997477]);
        assert_eq!(clip_update(&small, 5.0).unwrap(), small);
        assert!(clip_update(&g, 0.0).is_err());
        assert!(clip_update(&g, f64::INFINITY).is_err());
    }

    #[test]
    fn no_clip_bound_is_identity() {
        let u = updates(&[&[100.0, -3.0], &[1.0, 1.0]]);
        let rule = AggregationRule::new(Rule::FedAvg);
        assert_eq!(aggregate(&rule, &u, 0).unwrap().update, agg_fedavg(&u).unwrap());
        let clipped = aggregate(&rule.with_clip(Some(1.0)), &u, 0).unwrap().update;
        assert!(l2_norm(&clipped).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(agg_fedavg(&updates(&[&[1.0, 3.0], &[3.0, 5.0]])).unwrap(), pv(&[2.0, 4.0]));
        assert_eq!(agg_fedavg(&updates(&[&[1.5, -2.0]])).unwrap(), pv(&[1.5, -2.0]));
        assert!(agg_fedavg(&updates(&[&[0.3, -9.1], &[-0.3, 9.1]])).unwrap().is_zero());
        assert_eq!(agg_fedavg(&[]), Err(AggregationError::Empty));
        assert!(matches!(agg_fedavg(&updates(&[&[1.0], &[1.0, 2.0]])), Err(AggregationError::Dimension { client_id: 1, .. })));
    }

    #[test]
    fn weighted_fedavg() {
        let mut u = updates(&[&[0.0], &[4.0]]);
        u[0].num_examples = 3;
        assert_eq!(agg_fedavg_weighted(&u).unwrap(), pv(&[1.0]));
        let rule = AggregationRule { weighted_fedavg: true, ..AggregationRule::new(Rule::FedAvg) };
        assert_eq!(aggregate(&rule, &u, 0).unwrap().update, pv(&[1.0]));
    }

    #[test]
    fn median_examples() {
        assert_eq!(agg_median(&updates(&[&[1.0], &[2.0], &[9.0]])).unwrap(), pv(&[2.0]));
        assert_eq!(agg_median(&updates(&[&[1.0], &[10.0], &[2.0], &[3.0]])).unwrap(), pv(&[2.5]));
        let same = [0.1, -7.3, 1e-9];
        assert_eq!(agg_median(&updates(&[&same, &same, &same, &same])).unwrap(), pv(&same));
        assert_eq!(agg_median(&[]), Err(AggregationError::Empty));
    }

    #[test]
    fn trimmed_mean_examples() {
        let u = updates(&[&[1.0], &[2.0], &[3.0], &[4.0], &[100.0]]);
        assert_eq!(agg_trimmed_mean(&u, 1).unwrap(), pv(&[3.0]));
        let v = updates(&[&[0.25, 3.0], &[1.0, -2.0], &[7.5, 0.0]]);
        assert_eq!(agg_trimmed_mean(&v, 0).unwrap(), agg_fedavg(&v).unwrap());
        assert_eq!(agg_trimmed_mean(&[], 0), Err(AggregationError::Empty));
    }

    #[test]
    fn oversized_trim_falls_back_to_median_with_warning() {
        let u = updates(&[&[1.0], &[2.0], &[50.0], &[3.0]]);
        assert_eq!(agg_trimmed_mean(&u, 2).unwrap(), agg_median(&u).unwrap());
        let rule = AggregationRule::new(Rule::TrimmedMean(TrimPolicy::SelectedFakes));
        let agg = aggregate(&rule, &u, 2).unwrap();
        assert_eq!(agg.update, pv(&[2.5]));
        assert_eq!(agg.warnings.len(), 1);
        assert!(aggregate(&rule, &u, 1).unwrap().warnings.is_empty());
    }

    #[test]
    fn apply_global_examples() {
        let w = pv(&[0.3, -1.0]);
        assert_eq!(apply_global(&w, &ParamVector::zeros(2), 1.0).unwrap(), w);
        assert_eq!(apply_global(&ParamVector::zeros(2), &pv(&[2.0, 4.0]), 0.5).unwrap(), pv(&[1.0, 2.0]));
        assert!(apply_global(&w, &w, 0.0).is_err());
        assert!(matches!(
            apply_global(&pv(&[1e308]), &pv(&[1e308]), 1.0),
            Err(AggregationError::Vector(VectorError::NonFinite { index: 0, .. }))
        ));
    }

    #[test]
    fn mpaf_step_lands_on_target() {
        let w = pv(&[0.1, -0.7, 3.25, 1e-3]);
        let target = pv(&[-0.4, 0.9, 3.0, 0.0]);
        for (eta, lambda) in [(1.0, 1.0), (0.5, 2.0), (0.01, 100.0)] {
            let g = linear_combine(lambda, &target, -lambda, &w).unwrap();
            let next = apply_global(&w, &g, eta).unwrap();
            for i in 0..w.dim() {
                assert!((next[i] - target[i]).abs() <= 1e-12);
            }
        }
    }

    fn arb_updates() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..9, 1usize..5).prop_flat_map(|(count, dim)| {
            prop::collection::vec(prop::collection::vec(-1e3f64..1e3, dim), count)
        })
    }

    fn to_updates(raw: &[Vec<f64>]) -> Vec<ClientUpdate> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| ClientUpdate { client_id: i * 7 % 11, kind: ClientKind::Genuine, update: pv(v), num_examples: 1 })
            .collect()
    }

    proptest! {
        #[test]
        fn permutation_invariant(raw in arb_updates(), rot in 0usize..9, k in 0usize..4) {
            let u = to_updates(&raw);
            let mut p = u.clone();
            p.rotate_left(rot % u.len());
            p.reverse();
            prop_assert_eq!(agg_fedavg(&u).unwrap(), agg_fedavg(&p).unwrap());
            prop_assert_eq!(agg_median(&u).unwrap(), agg_median(&p).unwrap());
            prop_assert_eq!(agg_trimmed_mean(&u, k).unwrap(), agg_trimmed_mean(&p, k).unwrap());
        }

        #[test]
        fn clip_is_idempotent(v in prop::collection::vec(-1e4f64..1e4, 1..30), bound in 1e-3f64..1e4) {
            let once = clip_update(&pv(&v), bound).unwrap();
            let twice = clip_update(&once, bound).unwrap();
            for i in 0..once.dim() {
                prop_assert!((once[i] - twice[i]).abs() <= 1e-12 * once[i].abs().max(1e-300));
            }
        }

        #[test]
        fn trimmed_mean_survives_extreme_fakes(
            u in prop::collection::vec(-10.0f64..10.0, 1..6),
            genuine in 1usize..10,
            fakes in prop::collection::vec((any::<bool>(), 1e3f64..1e9), 0..5),
        ) {
            let mut raw: Vec<Vec<f64>> = vec![u.clone(); genuine + fakes.len()];
            for (i, &(up, mag)) in fakes.iter().enumerate() {
                raw[genuine + i] = u.iter().map(|x| if up { x + mag } else { x - mag }).collect();
            }
            let k = fakes.len();
            prop_assume!(2 * k < raw.len());
            prop_assert_eq!(agg_trimmed_mean(&to_updates(&raw), k).unwrap(), pv(&u));
        }
    }
}
