//! Per-item context signatures and the contextual distance between items.
//!
//! Every region is pseudo-labelled with its argmax class. For each class the item's
//! regions of that class are pooled into a confidence-weighted mixture of their
//! probability vectors, which keeps the mass the model put on co-occurring classes.
//! Two items are compared class by class on the classes they share.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::prob::{self, ProbError, ProbVector, DEFAULT_EPS};
use crate::records::{PredictionRecord, Region};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignatureError {
    #[error("class space mismatch: {left} vs {right} classes")]
    ClassSpaceMismatch { left: usize, right: usize },
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("d_max must be positive and finite, got {0}")]
    BadDMax(f64),
    #[error("need at least one signature")]
    Empty,
    #[error("invalid distance matrix: {0}")]
    BadMatrix(String),
}

/// Smoothing floor and distance cap used by every contextual comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceParams<T> {
    pub eps: T,
    pub d_max: T,
}

impl<T: Scalar> DistanceParams<T> {
    /// `d_max` defaults to `ln(1/eps)`.
    pub fn new(eps: T, d_max: Option<T>) -> Result<Self, SignatureError> {
        if !(eps.is_finite() && eps > T::zero() && eps < T::one()) {
            return Err(ProbError::BadEpsilon {
                eps: eps.as_f64(),
                classes: 0,
            }
            .into());
        }
        let d_max = d_max.unwrap_or_else(|| default_d_max(eps));
        if !(d_max.is_finite() && d_max > T::zero()) {
            return Err(SignatureError::BadDMax(d_max.as_f64()));
        }
        Ok(Self { eps, d_max })
    }
}

impl<T: Scalar> Default for DistanceParams<T> {
    fn default() -> Self {
        let eps = T::lit(DEFAULT_EPS);
        Self {
            eps,
            d_max: default_d_max(eps),
        }
    }
}

pub fn default_d_max<T: Scalar>(eps: T) -> T {
    eps.recip().ln()
}

/// Pooled distribution of the regions assigned to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture<T> {
    pub mixture: ProbVector<T>,
    /// Summed confidence weight `Σ weight·max(prob)` of the contributing regions.
    pub mass: T,
    /// Number of contributing regions.
    pub regions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextSignature<T> {
    pub item_id: String,
    pub num_classes: usize,
    pub per_class: BTreeMap<usize, ClassMixture<T>>,
}

impl<T: Scalar> ContextSignature<T> {
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    pub fn total_mass(&self) -> T {
        self.per_class.values().map(|m| m.mass).sum()
    }
}

/// Pseudo-label of a region: argmax, ties to the lowest class index.
pub fn assign_class<T: Scalar>(region: &Region<T>) -> usize {
    region.prob.argmax()
}

/// Region weight scaled by its top probability.
pub fn confidence_weight<T: Scalar>(region: &Region<T>) -> T {
    region.weight * region.prob.max_prob()
}

pub fn build_signature<T: Scalar>(record: &PredictionRecord<T>) -> ContextSignature<T> {
    build_signature_masked(record, None)
}

/// Like [`build_signature`], dropping regions whose pseudo-label is in `mask`.
pub fn build_signature_masked<T: Scalar>(
    record: &PredictionRecord<T>,
    mask: Option<&BTreeSet<usize>>,
) -> ContextSignature<T> {
    let num_classes = record.num_classes();
    let mut groups: BTreeMap<usize, Vec<&Region<T>>> = BTreeMap::new();
    for region in &record.regions {
        let class = assign_class(region);
        if mask.is_some_and(|m| m.contains(&class)) {
            continue;
        }
        groups.entry(class).or_default().push(region);
    }
    let per_class = groups
        .into_iter()
        .map(|(class, regions)| {
            let mut numer = vec![T::zero(); num_classes];
            let mut mass = T::zero();
            for region in &regions {
                let w = confidence_weight(region);
                mass = mass + w;
                for (acc, &p) in numer.iter_mut().zip(region.prob.as_slice()) {
                    *acc = *acc + w * p;
                }
            }
            let mixture = numer.into_iter().map(|x| x / mass).collect();
            (
                class,
                ClassMixture {
                    mixture: ProbVector::from_trusted(mixture),
                    mass,
                    regions: regions.len(),
                },
            )
        })
        .collect();
    ContextSignature {
        item_id: record.item_id.clone(),
        num_classes,
        per_class,
    }
}

/// Signatures for many records, in input order.
pub fn build_signatures<T: Scalar>(
    records: &[PredictionRecord<T>],
    mask: Option<&BTreeSet<usize>>,
) -> Vec<ContextSignature<T>> {
    records.par_iter().map(|r| build_signature_masked(r, mask)).collect()
}

/// Signature with every class mixture already smoothed.
struct Prepared<T> {
    num_classes: usize,
    classes: Vec<(usize, Vec<T>)>,
}

fn prepare<T: Scalar>(sig: &ContextSignature<T>, eps: T) -> Result<Prepared<T>, SignatureError> {
    prob::check_eps(eps, sig.num_classes)?;
    Ok(Prepared {
        num_classes: sig.num_classes,
        classes: sig
            .per_class
            .iter()
            .map(|(&c, m)| (c, prob::smooth_slice(m.mixture.as_slice(), eps)))
            .collect(),
    })
}

fn prepared_distance<T: Scalar>(a: &Prepared<T>, b: &Prepared<T>, d_max: T) -> Result<T, SignatureError> {
    if a.num_classes != b.num_classes {
        return Err(SignatureError::ClassSpaceMismatch {
            left: a.num_classes,
            right: b.num_classes,
        });
    }
    let mut total = T::zero();
    let mut shared = 0u64;
    let (mut i, mut j) = (0, 0);
    while i < a.classes.len() && j < b.classes.len() {
        let (ca, ref pa) = a.classes[i];
        let (cb, ref pb) = b.classes[j];
        match ca.cmp(&cb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                total = total + prob::sym_kl_smoothed(pa, pb);
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if shared == 0 {
        return Ok(d_max);
    }
    Ok((total / T::from_count(shared)).min(d_max))
}

/// Mean symmetrised KL over the classes both items contain, capped at `d_max`;
/// exactly `d_max` when they share no class.
pub fn contextual_distance<T: Scalar>(
    a: &ContextSignature<T>,
    b: &ContextSignature<T>,
    params: DistanceParams<T>,
) -> Result<T, SignatureError> {
    if a.num_classes != b.num_classes {
        return Err(SignatureError::ClassSpaceMismatch {
            left: a.num_classes,
            right: b.num_classes,
        });
    }
    prepared_distance(&prepare(a, params.eps)?, &prepare(b, params.eps)?, params.d_max)
}

/// Dense symmetric pairwise distance matrix with item ids in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    ids: Vec<String>,
    data: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Builds a matrix from explicit rows, checking symmetry (1e-9), a zero diagonal and
    /// non-negative finite entries.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<T>>) -> Result<Self, SignatureError> {
        let n = ids.len();
        if n == 0 {
            return Err(SignatureError::Empty);
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(SignatureError::BadMatrix(format!("expected {n}x{n} rows")));
        }
        let tol = T::lit(1e-9);
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            if rows[i][i] != T::zero() {
                return Err(SignatureError::BadMatrix(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() || v < T::zero() {
                    return Err(SignatureError::BadMatrix(format!("entry ({i},{j}) = {v}")));
                }
                if (v - rows[j][i]).abs() > tol {
                    return Err(SignatureError::BadMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            ids,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.ids.len();
        &self.data[i * n..(i + 1) * n]
    }

    /// CSV with a header of item ids and 12 significant digits per entry.
    pub fn write_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(&self.ids).map_err(io::Error::other)?;
        for i in 0..self.len() {
            csv.write_record(self.row(i).iter().map(|v| format!("{v:.11e}")))
                .map_err(io::Error::other)?;
        }
        csv.flush()
    }
}

pub fn distance_matrix<T: Scalar>(
    signatures: &[ContextSignature<T>],
    params: DistanceParams<T>,
) -> Result<DistanceMatrix<T>, SignatureError> {
    if signatures.is_empty() {
        return Err(SignatureError::Empty);
    }
    let prepared = signatures
        .par_iter()
        .map(|s| prepare(s, params.eps))
        .collect::<Result<Vec<_>, _>>()?;
    let n = prepared.len();
    let upper = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| prepared_distance(&prepared[i], &prepared[j], params.d_max))
                .collect::<Result<Vec<T>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = vec![T::zero(); n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix {
        ids: signatures.iter().map(|s| s.item_id.clone()).collect(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn region(w: f64, p: &[f64]) -> Region<f64> {
        Region::new(w, ProbVector::new(p.to_vec()).unwrap()).unwrap()
    }

    fn record(id: &str, regions: Vec<Region<f64>>) -> PredictionRecord<f64> {
        PredictionRecord {
            item_id: id.into(),
            view_id: None,
            regions,
            cluster: None,
        }
    }

    fn sig(id: &str, classes: &[(usize, &[f64])]) -> ContextSignature<f64> {
        ContextSignature {
            item_id: id.into(),
            num_classes: classes[0].1.len(),
            per_class: classes
                .iter()
                .map(|&(c, p)| {
                    (
                        c,
                        ClassMixture {
                            mixture: ProbVector::new(p.to_vec()).unwrap(),
                            mass: 1.0,
                            regions: 1,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn assign_class_examples() {
        assert_eq!(assign_class(&region(1.0, &[0.2, 0.5, 0.3])), 1);
        assert_eq!(assign_class(&region(1.0, &[0.5, 0.5])), 0);
        assert_eq!(assign_class(&region(1.0, &[0.0, 0.0, 1.0])), 2);
    }

    #[test]
    fn mixture_is_confidence_weighted() {
        let s = build_signature(&record("a", vec![region(1.0, &[0.9, 0.1]), region(1.0, &[0.6, 0.4])]));
        assert_eq!(s.per_class.len(), 1);
        let m = &s.per_class[&0];
        assert_abs_diff_eq!(m.mixture.as_slice()[0], 0.78, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mixture.as_slice()[1], 0.22, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mass, 1.5, epsilon = 1e-12);
        assert_eq!(m.regions, 2);

        let s = build_signature(&record("b", vec![region(1.0, &[1.0, 0.0])]));
        assert_eq!(s.per_class[&0].mixture.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.per_class[&0].mass, 1.0);
    }

    #[test]
    fn split_classes_keep_their_own_regions() {
        let s = build_signature(&record("a", vec![region(2.0, &[0.8, 0.2]), region(1.0, &[0.3, 0.7])]));
        assert_eq!(s.classes().collect::<Vec<_>>(), vec![0, 1]);
        assert_abs_diff_eq!(s.per_class[&0].mixture.as_slice()[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s.per_class[&1].mixture.as_slice()[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn mask_drops_classes() {
        let rec = record("a", vec![region(2.0, &[0.8, 0.2]), region(1.0, &[0.3, 0.7])]);
        let mask = BTreeSet::from([0]);
        let s = build_signature_masked(&rec, Some(&mask));
        assert_eq!(s.classes().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn distance_examples() {
        let params = DistanceParams::default();
        let a = sig("a", &[(0, &[0.5, 0.5])]);
        let b = sig("b", &[(0, &[0.25, 0.75])]);
        let c = sig("c", &[(1, &[0.25, 0.75])]);
        assert_eq!(contextual_distance(&a, &a, params).unwrap(), 0.0);
        assert_abs_diff_eq!(contextual_distance(&a, &c, params).unwrap(), 13.815511, epsilon = 1e-6);
        assert_abs_diff_eq!(contextual_distance(&a, &b, params).unwrap(), 0.137327, epsilon = 1e-6);
        let d3 = sig("d", &[(0, &[0.2, 0.3, 0.5])]);
        assert!(matches!(
            contextual_distance(&a, &d3, params),
            Err(SignatureError::ClassSpaceMismatch { .. })
        ));
    }

    #[test]
    fn distance_is_capped() {
        let params = DistanceParams::new(1e-6, Some(0.1)).unwrap();
        let a = sig("a", &[(0, &[1.0, 0.0])]);
        let b = sig("b", &[(0, &[0.0, 1.0])]);
        assert_eq!(contextual_distance(&a, &b, params).unwrap(), 0.1);
    }

    #[test]
    fn params_validation() {
        assert!(DistanceParams::new(0.0, None).is_err());
        assert!(matches!(
            DistanceParams::new(1e-6, Some(-1.0)),
            Err(SignatureError::BadDMax(_))
        ));
        assert_abs_diff_eq!(
            DistanceParams::<f64>::new(1e-6, None).unwrap().d_max,
            13.815510557964274,
            epsilon = 1e-12
        );
    }

    #[test]
    fn matrix_examples() {
        let params = DistanceParams::default();
        let a = sig("a", &[(0, &[0.5, 0.5])]);
        let m = distance_matrix(std::slice::from_ref(&a), params).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0), 0.0);

        let dup = vec![a.clone(), a.clone(), a.clone()];
        let m = distance_matrix(&dup, params).unwrap();
        assert!((0..3).all(|i| (0..3).all(|j| m.get(i, j) == 0.0)));

        let sigs = vec![
            a,
            sig("b", &[(0, &[0.25, 0.75]), (1, &[0.4, 0.6])]),
            sig("c", &[(1, &[0.1, 0.9])]),
        ];
        let m = distance_matrix(&sigs, params).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let direct = contextual_distance(&sigs[i], &sigs[j], params).unwrap();
                assert_eq!(m.get(i, j), direct);
            }
        }
        assert!(distance_matrix::<f64>(&[], params).is_err());
    }

    #[test]
    fn monotone_in_shared_class_divergence() {
        let params = DistanceParams::default();
        let a = sig("a", &[(0, &[0.9, 0.1]), (1, &[0.3, 0.7])]);
        let mut last = -1.0;
        for q in [0.9, 0.8, 0.7, 0.6, 0.5] {
            let b = sig("b", &[(0, &[q, 1.0 - q]), (1, &[0.3, 0.7])]);
            let d = contextual_distance(&a, &b, params).unwrap();
            assert!(d > last, "{d} <= {last}");
            last = d;
        }
    }

    #[test]
    fn csv_export() {
        let params = DistanceParams::default();
        let sigs = vec![sig("a", &[(0, &[0.5, 0.5])]), sig("b", &[(1, &[0.5, 0.5])])];
        let mut out = Vec::new();
        distance_matrix(&sigs, params).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "a,b");
        assert_eq!(lines[1], "0.00000000000e0,1.38155105580e1");
    }

    #[test]
    fn from_rows_validates() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(DistanceMatrix::from_rows(ids.clone(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
        assert!(DistanceMatrix::from_rows(ids.clone(), vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(ids.clone(), vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(ids, vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
    }

    fn record_strategy() -> impl Strategy<Value = PredictionRecord<f64>> {
        let region = (0.1f64..5.0, proptest::collection::vec(0.0f64..1.0, 4))
            .prop_filter("mass", |(_, v)| v.iter().sum::<f64>() > 1e-2)
            .prop_map(|(w, v)| {
                let s: f64 = v.iter().sum();
                region(w, &v.iter().map(|x| x / s).collect::<Vec<_>>())
            });
        proptest::collection::vec(region, 1..8).prop_map(|r| record("x", r))
    }

    proptest! {
        #[test]
        fn mass_conservation(rec in record_strategy()) {
            let s = build_signature(&rec);
            let expected: f64 = rec.regions.iter().map(|r| r.weight * r.prob.max_prob()).sum();
            prop_assert!((s.total_mass() - expected).abs() < 1e-9);
        }

        #[test]
        fn region_order_irrelevant(rec in record_strategy(), seed in 0usize..100) {
            let mut shuffled = rec.clone();
            let len = shuffled.regions.len();
            shuffled.regions.rotate_left(seed % len);
            shuffled.regions.reverse();
            let (a, b) = (build_signature(&rec), build_signature(&shuffled));
            prop_assert_eq!(a.per_class.keys().collect::<Vec<_>>(), b.per_class.keys().collect::<Vec<_>>());
            for (c, m) in &a.per_class {
                let other = &b.per_class[c];
                prop_assert!((m.mass - other.mass).abs() < 1e-12);
                for (x, y) in m.mixture.as_slice().iter().zip(other.mixture.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn matrix_symmetric_zero_diagonal(recs in proptest::collection::vec(record_strategy(), 1..7)) {
            let sigs: Vec<_> = recs.iter().map(build_signature).collect();
            let params = DistanceParams::default();
            let m = distance_matrix(&sigs, params).unwrap();
            #[allow(clippy::needless_range_loop)]
            for i in 0..m.len() {
                prop_assert_eq!(m.get(i, i), 0.0);
                prop_assert_eq!(contextual_distance(&sigs[i], &sigs[i], params).unwrap(), 0.0);
                for j in 0..m.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j) >= 0.0 && m.get(i, j) <= params.d_max);
                }
            }
        }
    }
}
