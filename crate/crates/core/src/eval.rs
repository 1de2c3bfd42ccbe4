//! Evaluation of selections against the synthetic ground truth.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::records::PredictionRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("record `{0}` carries no cluster tag")]
    MissingClusterTags(String),
    #[error("no records to evaluate against")]
    NoRecords,
    #[error("selected id `{0}` is not among the records")]
    UnknownId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub coverage: f64,
    pub clusters_covered: usize,
    pub clusters_total: usize,
}

/// Fraction of planted clusters hit by at least one selected item.
pub fn eval_cluster_coverage<T: Scalar>(
    selected: &[String],
    records: &[PredictionRecord<T>],
) -> Result<Coverage, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut tag_of = HashMap::new();
    for r in records {
        let tag = r
            .cluster
            .as_deref()
            .ok_or_else(|| EvalError::MissingClusterTags(r.item_id.clone()))?;
        tag_of.insert(r.item_id.as_str(), tag);
    }
    let total: BTreeSet<&str> = tag_of.values().copied().collect();
    let covered = selected
        .iter()
        .map(|id| {
            tag_of
                .get(id.as_str())
                .copied()
                .ok_or_else(|| EvalError::UnknownId(id.clone()))
        })
        .collect::<Result<BTreeSet<&str>, _>>()?;
    Ok(Coverage {
        coverage: covered.len() as f64 / total.len() as f64,
        clusters_covered: covered.len(),
        clusters_total: total.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::ProbVector;
    use crate::records::Region;

    fn recs(tags: &[Option<&str>]) -> Vec<PredictionRecord<f64>> {
        tags.iter()
            .enumerate()
            .map(|(i, t)| PredictionRecord {
                item_id: format!("i{i}"),
                view_id: None,
                cluster: t.map(String::from),
                regions: vec![Region::new(1.0, ProbVector::uniform(2).unwrap()).unwrap()],
            })
            .collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn coverage_examples() {
        let three = recs(&[Some("a"), Some("b"), Some("c")]);
        assert_eq!(
            eval_cluster_coverage(&ids(&["i0", "i1", "i2"]), &three)
                .unwrap()
                .coverage,
            1.0
        );
        assert_eq!(eval_cluster_coverage(&[], &three).unwrap().coverage, 0.0);
        let four = recs(&[Some("a"), Some("b"), Some("c"), Some("d"), Some("a")]);
        let c = eval_cluster_coverage(&ids(&["i0", "i4", "i2"]), &four).unwrap();
        assert_eq!(c.coverage, 0.5);
        assert_eq!((c.clusters_covered, c.clusters_total), (2, 4));
    }

    #[test]
    fn coverage_errors() {
        let untagged = recs(&[Some("a"), None]);
        assert!(matches!(
            eval_cluster_coverage(&[], &untagged),
            Err(EvalError::MissingClusterTags(_))
        ));
        assert_eq!(eval_cluster_coverage::<f64>(&[], &[]), Err(EvalError::NoRecords));
        let r = recs(&[Some("a")]);
        assert!(matches!(
            eval_cluster_coverage(&ids(&["zz"]), &r),
            Err(EvalError::UnknownId(_))
        ));
    }
}
