//! Probability vectors and the entropy/divergence/dispersion kernels built on them.
//!
//! Every divergence is evaluated on smoothed inputs (see [`smooth`]), so results are
//! finite even for one-hot predictions. All magnitudes are in nats.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Tolerance on `|Σp − 1|` accepted for a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Default smoothing floor for divergences.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("probability vector needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("entry {index} is {value}, probabilities must be finite and non-negative")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1 within {SUM_TOLERANCE}")]
    BadSum { sum: f64 },
    #[error("smoothing eps {eps} outside (0, 1/{classes})")]
    BadEpsilon { eps: f64, classes: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
}

/// A class-probability distribution over `C ≥ 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, ProbError> {
        if values.len() < 2 {
            return Err(ProbError::TooFewClasses(values.len()));
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < T::zero() {
                return Err(ProbError::BadEntry {
                    index,
                    value: v.as_f64(),
                });
            }
        }
        let sum: T = values.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(SUM_TOLERANCE) {
            return Err(ProbError::BadSum { sum: sum.as_f64() });
        }
        Ok(Self(values))
    }

    /// Wraps values produced by an operation that preserves validity (convex mixtures,
    /// smoothing). Checked only in debug builds.
    pub(crate) fn from_trusted(values: Vec<T>) -> Self {
        debug_assert!(Self::new(values.clone()).is_ok(), "invalid trusted vector {values:?}");
        Self(values)
    }

    /// Uniform distribution over `classes` classes.
    pub fn uniform(classes: usize) -> Result<Self, ProbError> {
        if classes < 2 {
            return Err(ProbError::TooFewClasses(classes));
        }
        Ok(Self(vec![T::one() / T::from_count(classes as u64); classes]))
    }

    /// One-hot vector on `class`.
    pub fn one_hot(classes: usize, class: usize) -> Result<Self, ProbError> {
        if classes < 2 {
            return Err(ProbError::TooFewClasses(classes));
        }
        let mut v = vec![T::zero(); classes];
        v[class] = T::one();
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Largest entry.
    pub fn max_prob(&self) -> T {
        self.0[self.argmax()]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for ProbVector<T> {
    type Error = ProbError;
    fn try_from(values: Vec<T>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl<T> From<ProbVector<T>> for Vec<T> {
    fn from(p: ProbVector<T>) -> Self {
        p.0
    }
}

impl<T> AsRef<[T]> for ProbVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

pub(crate) fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Information quantity in natural-log units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nats<T>(pub T);

impl<T: Copy> Nats<T> {
    pub fn value(self) -> T {
        self.0
    }
}

impl<T: fmt::Display> fmt::Display for Nats<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nats", self.0)
    }
}

pub(crate) fn check_eps<T: Scalar>(eps: T, classes: usize) -> Result<(), ProbError> {
    let upper = T::one() / T::from_count(classes as u64);
    if eps.is_finite() && eps > T::zero() && eps < upper {
        Ok(())
    } else {
        Err(ProbError::BadEpsilon {
            eps: eps.as_f64(),
            classes,
        })
    }
}

/// Floors every entry at `eps` and rescales the rest so the vector sums to 1.
///
/// Clamping is repeated until no rescaled entry drops under the floor, so the result
/// satisfies `min ≥ eps` exactly. Vectors whose entries are all `≥ eps` are only
/// renormalized.
pub fn smooth<T: Scalar>(p: &ProbVector<T>, eps: T) -> Result<ProbVector<T>, ProbError> {
    check_eps(eps, p.len())?;
    Ok(ProbVector::from_trusted(smooth_slice(p.as_slice(), eps)))
}

pub(crate) fn smooth_slice<T: Scalar>(p: &[T], eps: T) -> Vec<T> {
    let mut pinned: Vec<bool> = p.iter().map(|&v| v < eps).collect();
    let mut scale;
    loop {
        let pinned_count = pinned.iter().filter(|&&b| b).count();
        let free_mass: T = p.iter().zip(&pinned).filter(|(_, &pin)| !pin).map(|(&v, _)| v).sum();
        scale = (T::one() - eps * T::from_count(pinned_count as u64)) / free_mass;
        let mut grew = false;
        for (&v, pin) in p.iter().zip(pinned.iter_mut()) {
            if !*pin && v * scale < eps {
                *pin = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    p.iter()
        .zip(&pinned)
        .map(|(&v, &pin)| if pin { eps } else { v * scale })
        .collect()
}

fn ln_classes<T: Scalar>(classes: usize) -> T {
    T::from_count(classes as u64).ln()
}

pub(crate) fn entropy_smoothed<T: Scalar>(p: &[T]) -> T {
    let h = -p.iter().map(|&v| v * v.ln()).sum::<T>();
    h.max(T::zero()).min(ln_classes(p.len()))
}

pub(crate) fn kl_smoothed<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum::<T>()
        .max(T::zero())
}

pub(crate) fn sym_kl_smoothed<T: Scalar>(p: &[T], q: &[T]) -> T {
    T::lit(0.5) * (kl_smoothed(p, q) + kl_smoothed(q, p))
}

pub(crate) fn js_smoothed<T: Scalar>(p: &[T], q: &[T]) -> T {
    let half = T::lit(0.5);
    let m: Vec<T> = p.iter().zip(q).map(|(&a, &b)| (a + b) * half).collect();
    let js = half * (kl_smoothed(p, &m) + kl_smoothed(q, &m));
    js.min(T::lit(std::f64::consts::LN_2))
}

fn smoothed_pair<T: Scalar>(p: &ProbVector<T>, q: &ProbVector<T>, eps: T) -> Result<(Vec<T>, Vec<T>), ProbError> {
    if p.len() != q.len() {
        return Err(ProbError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_eps(eps, p.len())?;
    Ok((smooth_slice(p.as_slice(), eps), smooth_slice(q.as_slice(), eps)))
}

/// Shannon entropy of `smooth(p, eps)`, in `[0, ln C]`.
pub fn entropy<T: Scalar>(p: &ProbVector<T>, eps: T) -> Result<Nats<T>, ProbError> {
    check_eps(eps, p.len())?;
    Ok(Nats(entropy_smoothed(&smooth_slice(p.as_slice(), eps))))
}

/// Entropy divided by `ln C`, in `[0, 1]`.
pub fn normalized_entropy<T: Scalar>(p: &ProbVector<T>, eps: T) -> Result<T, ProbError> {
    let h = entropy(p, eps)?.value();
    Ok((h / ln_classes(p.len())).min(T::one()))
}

/// Kullback–Leibler divergence `KL(p ‖ q)` on smoothed inputs.
pub fn kl<T: Scalar>(p: &ProbVector<T>, q: &ProbVector<T>, eps: T) -> Result<Nats<T>, ProbError> {
    let (p, q) = smoothed_pair(p, q, eps)?;
    Ok(Nats(kl_smoothed(&p, &q)))
}

/// `½ (KL(p‖q) + KL(q‖p))`.
pub fn sym_kl<T: Scalar>(p: &ProbVector<T>, q: &ProbVector<T>, eps: T) -> Result<Nats<T>, ProbError> {
    let (p, q) = smoothed_pair(p, q, eps)?;
    Ok(Nats(sym_kl_smoothed(&p, &q)))
}

/// Jensen–Shannon divergence, bounded by `ln 2`.
pub fn js<T: Scalar>(p: &ProbVector<T>, q: &ProbVector<T>, eps: T) -> Result<Nats<T>, ProbError> {
    let (p, q) = smoothed_pair(p, q, eps)?;
    Ok(Nats(js_smoothed(&p, &q)))
}

/// Population standard deviation over mean. An all-zero input has CV 0.
pub fn coefficient_of_variation<T: Scalar>(v: &[T]) -> Result<T, ProbError> {
    if v.is_empty() {
        return Err(ProbError::EmptyInput);
    }
    debug_assert!(v.iter().all(|&x| x >= T::zero()));
    let n = T::from_count(v.len() as u64);
    let mean = v.iter().copied().sum::<T>() / n;
    if mean == T::zero() {
        return Ok(T::zero());
    }
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    Ok(var.sqrt() / mean)
}
