//! Hard-class scoring and region recommendation for active domain adaptation.
//!
//! A frame's classes are scored either against anchors built from the current training
//! set ([`score_anchor`]) or by prediction instability across augmented views
//! ([`score_augmentation`]). [`recommend`] then spends an annotation-weight budget on
//! the highest scoring (frame, class) pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::prob::{self, ProbError, ProbVector};
use crate::records::PredictionRecord;
use crate::scalar::{cmp_scalar, Scalar};
use crate::signature::{assign_class, build_signature_masked, ContextSignature, DistanceParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaError {
    #[error("anchors need at least one training signature")]
    EmptyTrainingSet,
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("augmentation scoring needs at least 2 views, got {0}")]
    SingleView(usize),
    #[error("views belong to different items: `{0}` and `{1}`")]
    ViewMismatch(String, String),
    #[error("class space mismatch: {left} vs {right} classes")]
    ClassSpaceMismatch { left: usize, right: usize },
    #[error("no hardness value for class {0}")]
    MissingHardness(usize),
    #[error("annotation budget must be positive: weight {weight}, per-frame max {per_frame_max}")]
    BadBudget { weight: f64, per_frame_max: usize },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Normalised entropy in `[0, 1]` of each class's regions in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHardness<T> {
    pub item_id: String,
    pub per_class: BTreeMap<usize, T>,
}

pub fn class_hardness<T: Scalar>(
    record: &PredictionRecord<T>,
    eps: T,
    mask: Option<&BTreeSet<usize>>,
) -> Result<ClassHardness<T>, AdaError> {
    let ln_c = T::from_count(record.num_classes() as u64).ln();
    let mut acc: BTreeMap<usize, (T, T)> = BTreeMap::new();
    for region in &record.regions {
        let class = assign_class(region);
        if mask.is_some_and(|m| m.contains(&class)) {
            continue;
        }
        let h = prob::entropy(&region.prob, eps)?.value();
        let e = acc.entry(class).or_insert((T::zero(), T::zero()));
        e.0 = e.0 + region.weight * h;
        e.1 = e.1 + region.weight;
    }
    Ok(ClassHardness {
        item_id: record.item_id.clone(),
        per_class: acc
            .into_iter()
            .map(|(c, (wh, w))| (c, (wh / w / ln_c).max(T::zero()).min(T::one())))
            .collect(),
    })
}

/// Summed region weight per pseudo-labelled class: the annotation-cost proxy.
pub fn class_weights<T: Scalar>(record: &PredictionRecord<T>, mask: Option<&BTreeSet<usize>>) -> BTreeMap<usize, T> {
    let mut out = BTreeMap::new();
    for region in &record.regions {
        let class = assign_class(region);
        if mask.is_some_and(|m| m.contains(&class)) {
            continue;
        }
        let w = out.entry(class).or_insert(T::zero());
        *w = *w + region.weight;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor<T> {
    pub mixture: ProbVector<T>,
    pub mass: T,
}

/// Per-class reference distributions of the current training set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<T> {
    pub num_classes: usize,
    pub per_class: BTreeMap<usize, Anchor<T>>,
}

/// Mass-weighted mean of every training item's class mixture.
pub fn build_anchors<T: Scalar>(training: &[ContextSignature<T>]) -> Result<AnchorSet<T>, AdaError> {
    let first = training.first().ok_or(AdaError::EmptyTrainingSet)?;
    let c = first.num_classes;
    let mut acc: BTreeMap<usize, (Vec<T>, T)> = BTreeMap::new();
    for sig in training {
        if sig.num_classes != c {
            return Err(AdaError::ClassSpaceMismatch {
                left: c,
                right: sig.num_classes,
            });
        }
        for (&class, m) in &sig.per_class {
            let (numer, mass) = acc.entry(class).or_insert_with(|| (vec![T::zero(); c], T::zero()));
            *mass = *mass + m.mass;
            for (a, &p) in numer.iter_mut().zip(m.mixture.as_slice()) {
                *a = *a + m.mass * p;
            }
        }
    }
    Ok(AnchorSet {
        num_classes: c,
        per_class: acc
            .into_iter()
            .map(|(class, (numer, mass))| {
                let mixture = ProbVector::from_trusted(numer.into_iter().map(|x| x / mass).collect());
                (class, Anchor { mixture, mass })
            })
            .collect(),
    })
}

/// `alpha·hardness + (1−alpha)·min(symKL(frame, anchor), d_max)/d_max` per frame class.
/// A class without an anchor takes the full distance term.
pub fn score_anchor<T: Scalar>(
    frame: &ContextSignature<T>,
    hardness: &ClassHardness<T>,
    anchors: &AnchorSet<T>,
    alpha: T,
    params: DistanceParams<T>,
) -> Result<BTreeMap<usize, T>, AdaError> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(AdaError::BadAlpha(alpha.as_f64()));
    }
    if frame.num_classes != anchors.num_classes {
        return Err(AdaError::ClassSpaceMismatch {
            left: frame.num_classes,
            right: anchors.num_classes,
        });
    }
    prob::check_eps(params.eps, frame.num_classes)?;
    let mut out = BTreeMap::new();
    for (&class, m) in &frame.per_class {
        let h = *hardness.per_class.get(&class).ok_or(AdaError::MissingHardness(class))?;
        let dist = match anchors.per_class.get(&class) {
            Some(anchor) => {
                let p = prob::smooth_slice(m.mixture.as_slice(), params.eps);
                let q = prob::smooth_slice(anchor.mixture.as_slice(), params.eps);
                prob::sym_kl_smoothed(&p, &q).min(params.d_max)
            }
            None => params.d_max,
        };
        let score = alpha * h + (T::one() - alpha) * (dist / params.d_max);
        out.insert(class, score.max(T::zero()).min(T::one()));
    }
    Ok(out)
}

/// Cross-view instability per class: mean pairwise JS / ln 2 between the views that
/// contain the class, or 1 when fewer than two views contain it.
///
/// Views are ordered by view index first, so the result does not depend on input order.
pub fn score_augmentation<T: Scalar>(
    views: &[PredictionRecord<T>],
    eps: T,
    mask: Option<&BTreeSet<usize>>,
) -> Result<BTreeMap<usize, T>, AdaError> {
    if views.len() < 2 {
        return Err(AdaError::SingleView(views.len()));
    }
    if let Some(other) = views.iter().find(|v| v.item_id != views[0].item_id) {
        return Err(AdaError::ViewMismatch(views[0].item_id.clone(), other.item_id.clone()));
    }
    let c = views[0].num_classes();
    if let Some(other) = views.iter().find(|v| v.num_classes() != c) {
        return Err(AdaError::ClassSpaceMismatch {
            left: c,
            right: other.num_classes(),
        });
    }
    prob::check_eps(eps, c)?;
    let mut ordered: Vec<&PredictionRecord<T>> = views.iter().collect();
    ordered.sort_by_key(|v| v.view());
    let sigs: Vec<ContextSignature<T>> = ordered.iter().map(|v| build_signature_masked(v, mask)).collect();

    let mut by_class: BTreeMap<usize, Vec<Vec<T>>> = BTreeMap::new();
    for sig in &sigs {
        for (&class, m) in &sig.per_class {
            by_class
                .entry(class)
                .or_default()
                .push(prob::smooth_slice(m.mixture.as_slice(), eps));
        }
    }
    let ln2 = T::lit(std::f64::consts::LN_2);
    Ok(by_class
        .into_iter()
        .map(|(class, mixtures)| {
            if mixtures.len() < 2 {
                return (class, T::one());
            }
            let mut total = T::zero();
            let mut pairs = 0u64;
            for i in 0..mixtures.len() {
                for j in (i + 1)..mixtures.len() {
                    total = total + prob::js_smoothed(&mixtures[i], &mixtures[j]);
                    pairs += 1;
                }
            }
            (class, (total / T::from_count(pairs) / ln2).min(T::one()))
        })
        .collect())
}

/// Annotation-cost estimate for an item seen through several views: the largest
/// per-view class weight.
pub fn view_class_weights<T: Scalar>(
    views: &[PredictionRecord<T>],
    mask: Option<&BTreeSet<usize>>,
) -> BTreeMap<usize, T> {
    let mut out: BTreeMap<usize, T> = BTreeMap::new();
    for view in views {
        for (class, w) in class_weights(view, mask) {
            let e = out.entry(class).or_insert(T::zero());
            *e = e.max(w);
        }
    }
    out
}

/// Per-class mean of whichever scores are available. Experimental.
pub fn combine_mean<T: Scalar>(a: &BTreeMap<usize, T>, b: &BTreeMap<usize, T>) -> BTreeMap<usize, T> {
    a.keys()
        .chain(b.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|c| {
            let v = match (a.get(&c), b.get(&c)) {
                (Some(&x), Some(&y)) => (x + y) * T::lit(0.5),
                (Some(&x), None) | (None, Some(&x)) => x,
                (None, None) => unreachable!(),
            };
            (c, v)
        })
        .collect()
}

/// Scored classes of one frame, each with its annotation-cost estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores<T> {
    pub item_id: String,
    pub classes: BTreeMap<usize, ClassScore<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore<T> {
    pub score: T,
    pub est_weight: T,
}

impl<T: Scalar> FrameScores<T> {
    /// Joins scores with weights; classes without a weight get weight 0.
    pub fn new(item_id: impl Into<String>, scores: &BTreeMap<usize, T>, weights: &BTreeMap<usize, T>) -> Self {
        Self {
            item_id: item_id.into(),
            classes: scores
                .iter()
                .map(|(&c, &score)| {
                    let est_weight = weights.get(&c).copied().unwrap_or(T::zero());
                    (c, ClassScore { score, est_weight })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RegionRecommendation<T> {
    pub item_id: String,
    #[serde(rename = "class")]
    pub class_index: usize,
    pub score: T,
    pub est_weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RecommendationSummary<T> {
    pub recommendations: usize,
    pub total_weight: T,
    pub budget_weight: T,
    pub frames_touched: usize,
}

pub fn summarize<T: Scalar>(recs: &[RegionRecommendation<T>], budget_weight: T) -> RecommendationSummary<T> {
    RecommendationSummary {
        recommendations: recs.len(),
        total_weight: recs.iter().map(|r| r.est_weight).sum(),
        budget_weight,
        frames_touched: recs.iter().map(|r| r.item_id.as_str()).collect::<BTreeSet<_>>().len(),
    }
}

/// Global greedy over (frame, class) pairs by descending score, then item id, then
/// class index. Pairs that would exceed the cumulative weight budget or the per-frame
/// class limit are skipped.
pub fn recommend<T: Scalar>(
    frames: &[FrameScores<T>],
    budget_weight: T,
    per_frame_max: usize,
) -> Result<Vec<RegionRecommendation<T>>, AdaError> {
    if !(budget_weight.is_finite() && budget_weight > T::zero()) || per_frame_max == 0 {
        return Err(AdaError::BadBudget {
            weight: budget_weight.as_f64(),
            per_frame_max,
        });
    }
    let mut pairs: Vec<(&str, usize, ClassScore<T>)> = frames
        .iter()
        .flat_map(|f| f.classes.iter().map(move |(&c, &s)| (f.item_id.as_str(), c, s)))
        .collect();
    pairs.sort_by(|a, b| {
        cmp_scalar(b.2.score, a.2.score)
            .then_with(|| a.0.cmp(b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut used = T::zero();
    let mut per_frame: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for (item, class, s) in pairs {
        let count = per_frame.entry(item).or_insert(0);
        if *count >= per_frame_max || used + s.est_weight > budget_weight {
            continue;
        }
        *count += 1;
        used = used + s.est_weight;
        out.push(RegionRecommendation {
            item_id: item.to_string(),
            class_index: class,
            score: s.score,
            est_weight: s.est_weight,
        });
    }
    Ok(out)
}
