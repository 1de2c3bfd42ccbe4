//! Budgeted item selection.
//!
//! [`select_cdal`] runs farthest-point (k-center) greedy over contextual distances.
//! [`select_entropy`] and [`select_random`] are the uncertainty and control baselines,
//! and [`brute_force_kcenter`] is the exact small-instance reference.

use std::collections::HashSet;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::prob::{self, ProbError};
use crate::records::PredictionRecord;
use crate::rng::{partial_shuffle, SplitMix64};
use crate::scalar::{cmp_scalar, Scalar};
use crate::signature::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcquisitionError {
    #[error("budget must be at least 1, got {0}")]
    BadBudget(usize),
    #[error("preselected id `{0}` is not in the pool")]
    UnknownId(String),
    #[error("exhaustive search over n={n}, budget={budget} is too large")]
    TooLarge { n: usize, budget: usize },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub const METHOD_CDAL: &str = "cdal";
pub const METHOD_ENTROPY: &str = "entropy";
pub const METHOD_RANDOM: &str = "random";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Diagnostics<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covering_radius: Option<T>,
    pub objective_trace: Vec<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct SelectionResult<T> {
    pub method: String,
    pub selected: Vec<String>,
    pub diagnostics: Diagnostics<T>,
}

fn check_budget(budget: usize) -> Result<(), AcquisitionError> {
    if budget == 0 {
        Err(AcquisitionError::BadBudget(budget))
    } else {
        Ok(())
    }
}

/// Index of the largest value among `candidates`; ties go to the lower index.
fn argmax_by_index<T: Scalar>(values: &[T], candidates: &[bool]) -> Option<usize> {
    values
        .par_iter()
        .enumerate()
        .filter(|&(i, _)| candidates[i])
        .map(|(i, &v)| (i, v))
        .reduce_with(|a, b| match cmp_scalar(a.1, b.1) {
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Equal => {
                if a.0 <= b.0 {
                    a
                } else {
                    b
                }
            }
        })
        .map(|(i, _)| i)
}

fn max_over<T: Scalar>(values: &[T], candidates: &[bool]) -> T {
    values
        .iter()
        .zip(candidates)
        .filter(|(_, &c)| c)
        .map(|(&v, _)| v)
        .fold(T::zero(), T::max)
}

/// Largest distance from a non-member to its nearest member of `centers`.
pub fn covering_radius<T: Scalar>(m: &DistanceMatrix<T>, centers: &[usize]) -> T {
    let members: HashSet<usize> = centers.iter().copied().collect();
    (0..m.len())
        .filter(|i| !members.contains(i))
        .map(|i| centers.iter().map(|&c| m.get(i, c)).fold(T::infinity(), T::min))
        .fold(T::zero(), T::max)
}

/// Farthest-point greedy selection of `budget` items.
///
/// Without preselected anchors the first pick is the item with the largest row sum.
/// Each later pick maximises the distance to the nearest already chosen or preselected
/// item. Preselected items anchor the distances but are never returned and do not
/// consume budget. `objective_trace[t]` is the covering radius after `t + 1` picks.
pub fn select_cdal<T: Scalar>(
    m: &DistanceMatrix<T>,
    budget: usize,
    preselected: &[String],
) -> Result<SelectionResult<T>, AcquisitionError> {
    check_budget(budget)?;
    let n = m.len();
    let mut candidate = vec![true; n];
    let mut min_dist = vec![T::infinity(); n];

    let mut anchors = Vec::with_capacity(preselected.len());
    for id in preselected {
        let idx = m
            .ids()
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| AcquisitionError::UnknownId(id.clone()))?;
        if candidate[idx] {
            candidate[idx] = false;
            anchors.push(idx);
        }
    }
    let update = |min_dist: &mut [T], center: usize| {
        min_dist
            .par_iter_mut()
            .zip(m.row(center).par_iter())
            .for_each(|(d, &x)| *d = d.min(x));
    };
    for &a in &anchors {
        update(&mut min_dist, a);
    }

    let pool = candidate.iter().filter(|&&c| c).count();
    let k = budget.min(pool);
    let mut selected = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    while selected.len() < k {
        let pick = if anchors.is_empty() && selected.is_empty() {
            let row_sums: Vec<T> = (0..n).into_par_iter().map(|i| m.row(i).iter().copied().sum()).collect();
            argmax_by_index(&row_sums, &candidate)
        } else {
            argmax_by_index(&min_dist, &candidate)
        }
        .expect("pool has an unselected candidate");
        candidate[pick] = false;
        selected.push(pick);
        update(&mut min_dist, pick);
        trace.push(max_over(&min_dist, &candidate));
    }
    let radius = trace.last().copied().unwrap_or_else(|| max_over(&min_dist, &candidate));
    let radius = if radius.is_finite() { radius } else { T::zero() };

    Ok(SelectionResult {
        method: METHOD_CDAL.into(),
        selected: selected.iter().map(|&i| m.ids()[i].clone()).collect(),
        diagnostics: Diagnostics {
            covering_radius: Some(radius),
            objective_trace: trace,
            seed: None,
        },
    })
}

/// Region-weight-averaged entropy of an item's predictions.
pub fn item_entropy<T: Scalar>(record: &PredictionRecord<T>, eps: T) -> Result<T, ProbError> {
    let mut weighted = T::zero();
    for region in &record.regions {
        weighted = weighted + region.weight * prob::entropy(&region.prob, eps)?.value();
    }
    Ok(weighted / record.total_weight())
}

/// Highest-entropy items first; ties keep input order.
pub fn select_entropy<T: Scalar>(
    records: &[PredictionRecord<T>],
    budget: usize,
    eps: T,
) -> Result<SelectionResult<T>, AcquisitionError> {
    check_budget(budget)?;
    let scores = records
        .par_iter()
        .map(|r| item_entropy(r, eps))
        .collect::<Result<Vec<T>, _>>()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| cmp_scalar(scores[b], scores[a]).then(a.cmp(&b)));
    order.truncate(budget);
    Ok(SelectionResult {
        method: METHOD_ENTROPY.into(),
        selected: order.iter().map(|&i| records[i].item_id.clone()).collect(),
        diagnostics: Diagnostics {
            covering_radius: None,
            objective_trace: order.iter().map(|&i| scores[i]).collect(),
            seed: None,
        },
    })
}

/// Uniform sample without replacement: splitmix64 feeding a partial Fisher–Yates shuffle.
pub fn select_random<T: Scalar>(
    ids: &[String],
    budget: usize,
    seed: u64,
) -> Result<SelectionResult<T>, AcquisitionError> {
    check_budget(budget)?;
    let mut rng = SplitMix64::new(seed);
    let picks = partial_shuffle(ids.len(), budget, &mut rng);
    Ok(SelectionResult {
        method: METHOD_RANDOM.into(),
        selected: picks.into_iter().map(|i| ids[i].clone()).collect(),
        diagnostics: Diagnostics {
            covering_radius: None,
            objective_trace: Vec::new(),
            seed: Some(seed),
        },
    })
}

/// Largest pool size the exhaustive k-center search accepts.
pub const BRUTE_FORCE_MAX_N: usize = 20;
/// Largest number of subsets the exhaustive k-center search enumerates.
pub const BRUTE_FORCE_MAX_SUBSETS: u64 = 1_000_000;

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    (0..k).fold(1u64, |acc, i| acc * (n as u64 - i) / (i + 1))
}

/// Exact minimum covering radius over all `budget`-subsets, with the lexicographically
/// smallest optimal subset as witness.
pub fn brute_force_kcenter<T: Scalar>(
    m: &DistanceMatrix<T>,
    budget: usize,
) -> Result<(T, Vec<usize>), AcquisitionError> {
    check_budget(budget)?;
    let n = m.len();
    if budget >= n {
        return Ok((T::zero(), (0..n).collect()));
    }
    if n > BRUTE_FORCE_MAX_N || binomial(n, budget) > BRUTE_FORCE_MAX_SUBSETS {
        return Err(AcquisitionError::TooLarge { n, budget });
    }
    let mut best: Option<(T, Vec<usize>)> = None;
    for subset in (0..n).combinations(budget) {
        let r = covering_radius(m, &subset);
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, subset));
        }
    }
    Ok(best.expect("at least one subset"))
}
