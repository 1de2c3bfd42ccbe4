//! Co-occurrence fairness repair driven by the coefficient of variation.
//!
//! For every class, the counts of that class across protected-attribute groups form a
//! vector; its CV measures how unevenly the class co-occurs with the groups. The
//! objective is the unweighted mean CV over classes with a positive total. Repair
//! greedily removes items (batch mode) or adds pool items (incremental mode) to lower
//! that objective.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::prob::coefficient_of_variation;
use crate::records::LabelRecord;
use crate::scalar::{cmp_scalar, Scalar};
use crate::signature::ContextSignature;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FairnessError {
    #[error("no label record carries a group")]
    NoGroupedItems,
    #[error("target size {target} outside 1..={available}")]
    BadTarget { target: usize, available: usize },
    #[error("budget must be at least 1, got {0}")]
    BadBudget(usize),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("item `{0}` appears more than once")]
    DuplicateItem(String),
    #[error("proxy repair needs a group table")]
    MissingGroupTable,
    #[error("signatures disagree on class count: {left} vs {right}")]
    ClassSpaceMismatch { left: usize, right: usize },
}

/// Class × group co-occurrence counts. Rows follow `classes`, columns follow `groups`;
/// both are sorted by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    classes: Vec<String>,
    groups: Vec<String>,
    counts: Vec<Vec<u64>>,
    /// Records skipped because they carry no group.
    pub ungrouped: usize,
}

impl CooccurrenceMatrix {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn count(&self, class: &str, group: &str) -> u64 {
        let (Ok(c), Ok(g)) = (
            self.classes.binary_search_by(|x| x.as_str().cmp(class)),
            self.groups.binary_search_by(|x| x.as_str().cmp(group)),
        ) else {
            return 0;
        };
        self.counts[c][g]
    }

    /// Counts of one class across all groups, in group order.
    pub fn row(&self, class: &str) -> Option<&[u64]> {
        let c = self.classes.binary_search_by(|x| x.as_str().cmp(class)).ok()?;
        Some(&self.counts[c])
    }

    pub fn to_map(&self) -> BTreeMap<String, BTreeMap<String, u64>> {
        self.classes
            .iter()
            .zip(&self.counts)
            .map(|(c, row)| {
                (
                    c.clone(),
                    self.groups.iter().cloned().zip(row.iter().copied()).collect(),
                )
            })
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Co-occurrence counts over grouped records; ungrouped records are counted and skipped.
pub fn cooccurrence(labels: &[LabelRecord]) -> Result<CooccurrenceMatrix, FairnessError> {
    let groups: BTreeSet<String> = labels.iter().filter_map(|r| r.group.clone()).collect();
    if groups.is_empty() {
        return Err(FairnessError::NoGroupedItems);
    }
    Ok(cooccurrence_with_groups(
        labels,
        &groups.into_iter().collect::<Vec<_>>(),
    ))
}

/// Co-occurrence counts with an explicit group universe, so groups with no remaining
/// items still appear as zero columns.
pub fn cooccurrence_with_groups(labels: &[LabelRecord], groups: &[String]) -> CooccurrenceMatrix {
    let mut groups = groups.to_vec();
    groups.sort();
    groups.dedup();
    let classes: Vec<String> = labels
        .iter()
        .filter(|r| r.group.is_some())
        .flat_map(|r| r.class_counts.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = vec![vec![0u64; groups.len()]; classes.len()];
    let mut ungrouped = 0;
    for record in labels {
        let Some(group) = &record.group else {
            ungrouped += 1;
            continue;
        };
        let Ok(g) = groups.binary_search(group) else {
            continue;
        };
        for (class, &n) in &record.class_counts {
            let c = classes.binary_search(class).expect("class collected above");
            counts[c][g] += n;
        }
    }
    if ungrouped > 0 {
        log::warn!("{ungrouped} label record(s) without a group ignored");
    }
    CooccurrenceMatrix {
        classes,
        groups,
        counts,
        ungrouped,
    }
}

fn row_cv<T: Scalar>(row: &[u64]) -> Option<T> {
    if row.iter().all(|&x| x == 0) {
        return None;
    }
    let values: Vec<T> = row.iter().map(|&x| T::from_count(x)).collect();
    Some(coefficient_of_variation(&values).expect("non-empty row"))
}

fn mean_of<T: Scalar>(cvs: impl Iterator<Item = T>) -> T {
    let (sum, n) = cvs.fold((T::zero(), 0u64), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_count(n)
    }
}

/// Mean CV across groups over classes with a positive total; 0 when there are none.
pub fn fairness_objective<T: Scalar>(m: &CooccurrenceMatrix) -> T {
    mean_of(m.counts.iter().filter_map(|row| row_cv::<T>(row)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RepairResult<T> {
    /// Surviving (removal) or final (addition) item ids.
    pub kept: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub removed: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub added: Option<Vec<String>>,
    /// Objective after each accepted move.
    pub objective_trace: Vec<T>,
    pub initial_objective: T,
    pub final_objective: T,
}

/// Grouped item with class counts resolved to indices.
struct Item {
    id: String,
    group: usize,
    entries: Vec<(usize, u64)>,
}

/// Running co-occurrence counts with cached per-class CVs.
struct RepairState<T> {
    counts: Vec<Vec<u64>>,
    cvs: Vec<Option<T>>,
}

impl<T: Scalar> RepairState<T> {
    fn new(classes: usize, groups: usize) -> Self {
        Self {
            counts: vec![vec![0; groups]; classes],
            cvs: vec![None; classes],
        }
    }

    fn objective(&self) -> T {
        mean_of(self.cvs.iter().flatten().copied())
    }

    /// Objective if `item` were added (`add = true`) or removed.
    fn objective_with(&self, item: &Item, add: bool) -> T {
        let mut touched = item.entries.iter().peekable();
        let mut sum = T::zero();
        let mut n = 0u64;
        let mut scratch = Vec::new();
        for (c, cached) in self.cvs.iter().enumerate() {
            let cv = match touched.peek() {
                Some(&&(tc, delta)) if tc == c => {
                    touched.next();
                    scratch.clear();
                    scratch.extend_from_slice(&self.counts[c]);
                    if add {
                        scratch[item.group] += delta;
                    } else {
                        scratch[item.group] -= delta;
                    }
                    row_cv::<T>(&scratch)
                }
                _ => *cached,
            };
            if let Some(v) = cv {
                sum = sum + v;
                n += 1;
            }
        }
        if n == 0 {
            T::zero()
        } else {
            sum / T::from_count(n)
        }
    }

    fn apply(&mut self, item: &Item, add: bool) {
        for &(c, delta) in &item.entries {
            if add {
                self.counts[c][item.group] += delta;
            } else {
                self.counts[c][item.group] -= delta;
            }
            self.cvs[c] = row_cv(&self.counts[c]);
        }
    }
}

/// Resolves grouped records against a shared class/group universe.
fn index_items(records: &[&LabelRecord], classes: &[String], groups: &[String]) -> Vec<Item> {
    records
        .iter()
        .map(|r| Item {
            id: r.item_id.clone(),
            group: groups
                .binary_search(r.group.as_ref().expect("grouped record"))
                .expect("group in universe"),
            entries: r
                .class_counts
                .iter()
                .filter(|(_, &n)| n > 0)
                .map(|(c, &n)| (classes.binary_search(c).expect("class in universe"), n))
                .collect(),
        })
        .collect()
}

fn universe(records: &[&LabelRecord]) -> (Vec<String>, Vec<String>) {
    let classes: BTreeSet<String> = records.iter().flat_map(|r| r.class_counts.keys().cloned()).collect();
    let groups: BTreeSet<String> = records.iter().filter_map(|r| r.group.clone()).collect();
    (classes.into_iter().collect(), groups.into_iter().collect())
}

fn grouped(labels: &[LabelRecord]) -> (Vec<&LabelRecord>, usize) {
    let kept: Vec<&LabelRecord> = labels.iter().filter(|r| r.group.is_some()).collect();
    let skipped = labels.len() - kept.len();
    if skipped > 0 {
        log::warn!("{skipped} label record(s) without a group left out of repair");
    }
    (kept, skipped)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), FairnessError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(FairnessError::DuplicateItem(id.to_string()));
        }
    }
    Ok(())
}

/// Picks the candidate with the smallest resulting objective, then the smallest id.
fn best_move<T: Scalar>(state: &RepairState<T>, items: &[Item], open: &[usize], add: bool) -> (usize, T) {
    let scored: Vec<(usize, T)> = open
        .par_iter()
        .map(|&i| (i, state.objective_with(&items[i], add)))
        .collect();
    scored
        .into_iter()
        .min_by(|a, b| cmp_scalar(a.1, b.1).then_with(|| items[a.0].id.cmp(&items[b.0].id)))
        .expect("non-empty candidate set")
}

/// Greedy removal down to `target_size` grouped items.
///
/// `kept` lists survivors in input order; `removed` lists items in removal order.
/// The group universe is fixed to the groups present in the input.
pub fn repair_remove<T: Scalar>(labels: &[LabelRecord], target_size: usize) -> Result<RepairResult<T>, FairnessError> {
    let (records, _) = grouped(labels);
    if records.is_empty() {
        return Err(FairnessError::NoGroupedItems);
    }
    check_unique(records.iter().map(|r| r.item_id.as_str()))?;
    if target_size == 0 || target_size > records.len() {
        return Err(FairnessError::BadTarget {
            target: target_size,
            available: records.len(),
        });
    }
    let (classes, groups) = universe(&records);
    let items = index_items(&records, &classes, &groups);
    let mut state = RepairState::<T>::new(classes.len(), groups.len());
    for item in &items {
        state.apply(item, true);
    }
    let initial = state.objective();

    let mut alive = vec![true; items.len()];
    let mut removed = Vec::new();
    let mut trace = Vec::new();
    for _ in target_size..items.len() {
        let open: Vec<usize> = (0..items.len()).filter(|&i| alive[i]).collect();
        let (pick, objective) = best_move(&state, &items, &open, false);
        state.apply(&items[pick], false);
        alive[pick] = false;
        removed.push(items[pick].id.clone());
        trace.push(objective);
    }
    Ok(RepairResult {
        kept: items
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(i, _)| i.id.clone())
            .collect(),
        removed: Some(removed),
        added: None,
        final_objective: trace.last().copied().unwrap_or(initial),
        initial_objective: initial,
        objective_trace: trace,
    })
}

/// Greedy addition of up to `budget` pool items to `current`.
///
/// `kept` is the current grouped items followed by the additions in selection order.
pub fn repair_add<T: Scalar>(
    current: &[LabelRecord],
    pool: &[LabelRecord],
    budget: usize,
) -> Result<RepairResult<T>, FairnessError> {
    if budget == 0 {
        return Err(FairnessError::BadBudget(budget));
    }
    if pool.is_empty() {
        return Err(FairnessError::EmptyPool);
    }
    let (cur, _) = grouped(current);
    let (cand, _) = grouped(pool);
    if cur.is_empty() && cand.is_empty() {
        return Err(FairnessError::NoGroupedItems);
    }
    check_unique(cur.iter().chain(&cand).map(|r| r.item_id.as_str()))?;
    let all: Vec<&LabelRecord> = cur.iter().chain(&cand).copied().collect();
    let (classes, groups) = universe(&all);
    let cur_items = index_items(&cur, &classes, &groups);
    let pool_items = index_items(&cand, &classes, &groups);

    let mut state = RepairState::<T>::new(classes.len(), groups.len());
    for item in &cur_items {
        state.apply(item, true);
    }
    let initial = state.objective();
    let mut open: Vec<usize> = (0..pool_items.len()).collect();
    let mut added = Vec::new();
    let mut trace = Vec::new();
    while added.len() < budget && !open.is_empty() {
        let (pick, objective) = best_move(&state, &pool_items, &open, true);
        state.apply(&pool_items[pick], true);
        open.retain(|&i| i != pick);
        added.push(pool_items[pick].id.clone());
        trace.push(objective);
    }
    Ok(RepairResult {
        kept: cur_items
            .iter()
            .map(|i| i.id.clone())
            .chain(added.iter().cloned())
            .collect(),
        removed: None,
        added: Some(added),
        final_objective: trace.last().copied().unwrap_or(initial),
        initial_objective: initial,
        objective_trace: trace,
    })
}

/// Class name used for pseudo-labelled class `index`.
pub fn proxy_class_name(index: usize) -> String {
    format!("c{index}")
}

/// Pseudo-label counts for a signature: regions assigned to each class.
pub fn proxy_labels<T: Scalar>(sig: &ContextSignature<T>, group: Option<String>) -> LabelRecord {
    LabelRecord::new(
        sig.item_id.clone(),
        sig.per_class
            .iter()
            .map(|(&c, m)| (proxy_class_name(c), m.regions as u64)),
        group,
    )
}

/// [`repair_add`] with argmax pseudo-labels standing in for ground-truth counts and
/// groups looked up in `groups`. Items missing from the table are treated as ungrouped.
pub fn repair_add_proxy<T: Scalar>(
    current: &[ContextSignature<T>],
    pool: &[ContextSignature<T>],
    budget: usize,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<RepairResult<T>, FairnessError> {
    let table = groups.ok_or(FairnessError::MissingGroupTable)?;
    let mut classes = current.iter().chain(pool).map(|s| s.num_classes);
    if let Some(first) = classes.next() {
        if let Some(other) = classes.find(|&c| c != first) {
            return Err(FairnessError::ClassSpaceMismatch {
                left: first,
                right: other,
            });
        }
    }
    let to_labels = |sigs: &[ContextSignature<T>]| -> Vec<LabelRecord> {
        sigs.iter()
            .map(|s| proxy_labels(s, table.get(&s.item_id).cloned()))
            .collect()
    };
    repair_add(&to_labels(current), &to_labels(pool), budget)
}
