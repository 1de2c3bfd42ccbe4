//! Synthetic datasets with planted context clusters and planted group bias.
//!
//! Each cluster owns a distinct set of two or three co-occurring classes. A region of
//! class `c` in that cluster predicts 0.7 on `c` and spreads 0.3 over the cluster's
//! other classes, then gets mixed with a flat Dirichlet draw of weight `noise`. Labels
//! count true region classes and draw each item's group with a skew toward a preferred
//! group whenever the item contains a biased class.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::proxy_class_name;
use crate::prob::ProbVector;
use crate::records::{LabelRecord, PredictionRecord, Region};
use crate::rng::{partial_shuffle, SplitMix64};
use crate::scalar::Scalar;

/// Probability kept on a region's own class before noise.
pub const OWN_CLASS_MASS: f64 = 0.7;

pub const GROUPS: [&str; 2] = ["g0", "g1"];

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid synthetic spec: {0}")]
pub struct BadSpec(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_items: usize,
    pub n_clusters: usize,
    pub num_classes: usize,
    pub regions_per_item: usize,
    /// Group skew in `[0, 1]` applied to items containing a biased class.
    pub bias: f64,
    /// Classes carrying the skew; the i-th one prefers group `i mod 2`.
    pub biased_classes: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_items: 120,
            n_clusters: 3,
            num_classes: 8,
            regions_per_item: 6,
            bias: 0.0,
            biased_classes: vec![0],
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn max_pattern(&self) -> usize {
        3.min(self.regions_per_item).min(self.num_classes)
    }

    pub fn validate(&self) -> Result<(), BadSpec> {
        let fail = |m: String| Err(BadSpec(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return fail(format!(
                "n_clusters {} must be in 1..={}",
                self.n_clusters, self.n_items
            ));
        }
        if self.regions_per_item < 2 {
            return fail(format!("regions_per_item {} < 2", self.regions_per_item));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return fail(format!("bias {} outside [0, 1]", self.bias));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail(format!("noise {} outside [0, 1]", self.noise));
        }
        if let Some(c) = self.biased_classes.iter().find(|&&c| c >= self.num_classes) {
            return fail(format!("biased class {c} >= num_classes {}", self.num_classes));
        }
        let available = all_patterns(self.num_classes, self.max_pattern()).len();
        if self.n_clusters > available {
            return fail(format!(
                "{} clusters need distinct class patterns but only {available} exist",
                self.n_clusters
            ));
        }
        Ok(())
    }
}

fn all_patterns(classes: usize, max_size: usize) -> Vec<Vec<usize>> {
    (2..=max_size).flat_map(|k| (0..classes).combinations(k)).collect()
}

/// Class patterns of each cluster, drawn without repetition.
///
/// Candidates are visited in shuffled order and each cluster takes the first unused
/// pattern whose classes are least used so far, so classes spread evenly over clusters.
pub fn cluster_patterns(spec: &SynthSpec, rng: &mut SplitMix64) -> Vec<Vec<usize>> {
    let all = all_patterns(spec.num_classes, spec.max_pattern());
    let mut order = partial_shuffle(all.len(), all.len(), rng);
    let mut usage = vec![0usize; spec.num_classes];
    let mut out = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let load = |i: usize| all[i].iter().map(|&c| usage[c]).max().unwrap_or(0);
        let pos = (0..order.len())
            .min_by_key(|&j| (load(order[j]), j))
            .expect("validated pattern count");
        let pattern = all[order.remove(pos)].clone();
        for &c in &pattern {
            usage[c] += 1;
        }
        out.push(pattern);
    }
    out
}

fn base_distribution(pattern: &[usize], own: usize, classes: usize) -> Vec<f64> {
    let mut p = vec![0.0; classes];
    let share = (1.0 - OWN_CLASS_MASS) / (pattern.len() - 1) as f64;
    for &c in pattern {
        p[c] = if c == own { OWN_CLASS_MASS } else { share };
    }
    p
}

fn flat_dirichlet(classes: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let draws: Vec<f64> = (0..classes).map(|_| -(1.0 - rng.unit_f64()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

pub fn cluster_tag(k: usize) -> String {
    format!("k{k}")
}

pub fn item_id(i: usize) -> String {
    format!("item-{i:05}")
}

/// Generates predictions and labels; identical specs give identical output.
pub fn gen_synth<T: Scalar>(spec: &SynthSpec) -> Result<(Vec<PredictionRecord<T>>, Vec<LabelRecord>), BadSpec> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let patterns = cluster_patterns(spec, &mut rng);
    let c = spec.num_classes;
    let mut predictions = Vec::with_capacity(spec.n_items);
    let mut labels = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let k = i % spec.n_clusters;
        let pattern = &patterns[k];
        let mut regions = Vec::with_capacity(spec.regions_per_item);
        let mut counts = vec![0u64; c];
        for r in 0..spec.regions_per_item {
            let own = pattern[r % pattern.len()];
            counts[own] += 1;
            let base = base_distribution(pattern, own, c);
            let u = flat_dirichlet(c, &mut rng);
            let probs: Vec<T> = base
                .iter()
                .zip(&u)
                .map(|(&b, &n)| T::lit((1.0 - spec.noise) * b + spec.noise * n))
                .collect();
            let weight = T::lit(1.0 + spec.noise * (rng.unit_f64() - 0.5));
            let prob = ProbVector::new(probs).map_err(|e| BadSpec(e.to_string()))?;
            regions.push(Region::new(weight, prob).map_err(BadSpec)?);
        }

        let preferred = spec
            .biased_classes
            .iter()
            .position(|b| pattern.contains(b))
            .map(|pos| pos % GROUPS.len());
        let draw = rng.unit_f64();
        let group = match preferred {
            Some(g) if draw < (1.0 + spec.bias) / 2.0 => g,
            Some(g) => 1 - g,
            None => usize::from(draw >= 0.5),
        };

        predictions.push(PredictionRecord {
            item_id: item_id(i),
            view_id: None,
            regions,
            cluster: Some(cluster_tag(k)),
        });
        labels.push(LabelRecord::new(
            item_id(i),
            counts
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(cls, &n)| (proxy_class_name(cls), n)),
            Some(GROUPS[group].to_string()),
        ));
    }
    Ok((predictions, labels))
}
