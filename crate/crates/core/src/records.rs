//! Prediction and label records, and their JSON-lines encoding.
//!
//! Prediction line: `{"item_id": str, "view_id": int?, "cluster": str?, "regions": [{"w": float, "p": [float, ...]}]}`
//!
//! Label line: `{"item_id": str, "group": str?, "class_counts": {str: int, ...}}`
//!
//! Group side table line: `{"item_id": str, "group": str}`
//!
//! Lines are UTF-8 separated by `\n`; blank lines are skipped. Unknown keys are an error
//! unless [`ParseOptions::lenient`] is set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prob::{ProbError, ProbVector};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: invariant violation: {message}")]
    InvariantViolation { line: usize, message: String },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DataError {
    /// 1-based line number of the offending record, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::MalformedLine { line, .. }
            | Self::InvariantViolation { line, .. }
            | Self::DuplicateKey { line, .. } => Some(*line),
            Self::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Ignore unknown keys instead of rejecting them.
    pub lenient: bool,
    /// Expected class count; inferred from the first record when absent.
    pub num_classes: Option<usize>,
}

/// A weighted region carrying one class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Region<T> {
    pub weight: T,
    pub prob: ProbVector<T>,
}

impl<T: Scalar> Region<T> {
    pub fn new(weight: T, prob: ProbVector<T>) -> Result<Self, String> {
        if !(weight.is_finite() && weight > T::zero()) {
            return Err(format!("region weight {weight} must be positive"));
        }
        Ok(Self { weight, prob })
    }
}

/// One item (or one augmented view of an item) as a set of weighted regions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord<T> {
    pub item_id: String,
    pub view_id: Option<u32>,
    pub regions: Vec<Region<T>>,
    /// Ground-truth context tag written by the synthetic generator.
    pub cluster: Option<String>,
}

impl<T: Scalar> PredictionRecord<T> {
    pub fn num_classes(&self) -> usize {
        self.regions.first().map_or(0, |r| r.prob.len())
    }

    /// View index with the absent value read as the canonical view 0.
    pub fn view(&self) -> u32 {
        self.view_id.unwrap_or(0)
    }

    pub fn is_canonical(&self) -> bool {
        self.view() == 0
    }

    pub fn total_weight(&self) -> T {
        self.regions.iter().map(|r| r.weight).sum()
    }
}

/// Object counts per class name for one item, with its protected-attribute group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(deserialize_with = "unique_counts")]
    pub class_counts: BTreeMap<String, u64>,
}

fn unique_counts<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<String, u64>, D::Error> {
    struct Unique;
    impl<'de> serde::de::Visitor<'de> for Unique {
        type Value = BTreeMap<String, u64>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a map of class name to count")
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = map.next_entry::<String, u64>()? {
                if out.contains_key(&k) {
                    return Err(serde::de::Error::custom(format_args!("duplicate class `{k}`")));
                }
                out.insert(k, v);
            }
            Ok(out)
        }
    }
    d.deserialize_map(Unique)
}

impl LabelRecord {
    pub fn new(
        item_id: impl Into<String>,
        class_counts: impl IntoIterator<Item = (String, u64)>,
        group: Option<String>,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            group,
            class_counts: class_counts.into_iter().collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRegion {
    w: f64,
    p: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPrediction {
    item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    view_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cluster: Option<String>,
    regions: Vec<RawRegion>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGroup {
    item_id: String,
    group: String,
}

const PREDICTION_KEYS: &[&str] = &["item_id", "view_id", "cluster", "regions"];
const REGION_KEYS: &[&str] = &["w", "p"];
const LABEL_KEYS: &[&str] = &["item_id", "group", "class_counts"];
const GROUP_KEYS: &[&str] = &["item_id", "group"];

fn unknown_key(value: &Value, allowed: &[&str]) -> Option<String> {
    value
        .as_object()?
        .keys()
        .find(|k| !allowed.contains(&k.as_str()))
        .cloned()
}

/// Iterates non-blank lines as `(line_number, text)`, 1-based.
fn for_each_line<R, F>(reader: R, mut f: F) -> Result<(), DataError>
where
    R: BufRead,
    F: FnMut(usize, &str) -> Result<(), DataError>,
{
    for (idx, chunk) in reader.split(b'\n').enumerate() {
        let line = idx + 1;
        let bytes = chunk?;
        let text = std::str::from_utf8(&bytes).map_err(|e| DataError::MalformedLine {
            line,
            message: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        f(line, text)?;
    }
    Ok(())
}

fn decode<D: DeserializeOwned>(
    line: usize,
    text: &str,
    options: ParseOptions,
    check: impl Fn(&Value) -> Option<String>,
) -> Result<D, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DataError::MalformedLine {
        line,
        message: e.to_string(),
    })?;
    if !value.is_object() {
        return Err(DataError::MalformedLine {
            line,
            message: "expected a JSON object".into(),
        });
    }
    if !options.lenient {
        if let Some(key) = check(&value) {
            return Err(DataError::MalformedLine {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
    }
    // Decoding from the text again rejects repeated keys, which `Value` would collapse.
    serde_json::from_str(text).map_err(|e| DataError::MalformedLine {
        line,
        message: e.to_string(),
    })
}

fn convert_prediction<T: Scalar>(
    line: usize,
    raw: RawPrediction,
    classes: &mut Option<usize>,
) -> Result<PredictionRecord<T>, DataError> {
    let invariant = |message: String| DataError::InvariantViolation { line, message };
    if raw.regions.is_empty() {
        return Err(invariant("regions must be non-empty".into()));
    }
    let mut regions = Vec::with_capacity(raw.regions.len());
    for (ri, region) in raw.regions.into_iter().enumerate() {
        let expected = *classes.get_or_insert(region.p.len());
        if region.p.len() != expected {
            return Err(invariant(format!(
                "regions[{ri}].p has {} classes, dataset has {expected}",
                region.p.len()
            )));
        }
        let values = region
            .p
            .iter()
            .map(|&x| T::from_f64(x).ok_or_else(|| invariant(format!("regions[{ri}].p value {x} not representable"))))
            .collect::<Result<Vec<T>, _>>()?;
        let prob = ProbVector::new(values).map_err(|e: ProbError| invariant(format!("regions[{ri}].p: {e}")))?;
        let weight = T::from_f64(region.w).unwrap_or_else(T::nan);
        let region = Region::new(weight, prob).map_err(|e| invariant(format!("regions[{ri}].w: {e}")))?;
        regions.push(region);
    }
    Ok(PredictionRecord {
        item_id: raw.item_id,
        view_id: raw.view_id,
        regions,
        cluster: raw.cluster,
    })
}

/// Parses and validates a prediction stream; records keep file order.
pub fn parse_predictions<T: Scalar, R: BufRead>(
    reader: R,
    options: ParseOptions,
) -> Result<Vec<PredictionRecord<T>>, DataError> {
    let mut classes = options.num_classes;
    let mut seen: HashSet<(String, u32)> = HashSet::new();
    let mut records = Vec::new();
    for_each_line(reader, |line, text| {
        let raw: RawPrediction = decode(line, text, options, |v| {
            unknown_key(v, PREDICTION_KEYS).or_else(|| {
                v.get("regions")?
                    .as_array()?
                    .iter()
                    .find_map(|r| unknown_key(r, REGION_KEYS))
                    .map(|k| format!("regions[].{k}"))
            })
        })?;
        let record = convert_prediction(line, raw, &mut classes)?;
        if !seen.insert((record.item_id.clone(), record.view())) {
            return Err(DataError::DuplicateKey {
                line,
                key: format!("(item_id={}, view_id={})", record.item_id, record.view()),
            });
        }
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

/// Parses and validates a label stream.
pub fn parse_labels<R: BufRead>(reader: R, options: ParseOptions) -> Result<Vec<LabelRecord>, DataError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for_each_line(reader, |line, text| {
        let record: LabelRecord = decode(line, text, options, |v| unknown_key(v, LABEL_KEYS))?;
        if !record.class_counts.values().any(|&c| c > 0) {
            return Err(DataError::InvariantViolation {
                line,
                message: "class_counts needs at least one positive count".into(),
            });
        }
        if !seen.insert(record.item_id.clone()) {
            return Err(DataError::DuplicateKey {
                line,
                key: format!("item_id={}", record.item_id),
            });
        }
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

/// Class names across a label set, sorted.
pub fn class_vocabulary(labels: &[LabelRecord]) -> Vec<String> {
    labels
        .iter()
        .flat_map(|r| r.class_counts.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Parses the `item_id → group` side table used when labels are unavailable.
pub fn parse_groups<R: BufRead>(reader: R, options: ParseOptions) -> Result<BTreeMap<String, String>, DataError> {
    let mut table = BTreeMap::new();
    for_each_line(reader, |line, text| {
        let raw: RawGroup = decode(line, text, options, |v| unknown_key(v, GROUP_KEYS))?;
        if table.insert(raw.item_id.clone(), raw.group).is_some() {
            return Err(DataError::DuplicateKey {
                line,
                key: format!("item_id={}", raw.item_id),
            });
        }
        Ok(())
    })?;
    Ok(table)
}

/// Writes predictions one per line. Numbers use the shortest exact decimal form.
pub fn write_predictions<T: Scalar, W: Write>(mut writer: W, records: &[PredictionRecord<T>]) -> io::Result<()> {
    for record in records {
        let raw = RawPrediction {
            item_id: record.item_id.clone(),
            view_id: record.view_id,
            cluster: record.cluster.clone(),
            regions: record
                .regions
                .iter()
                .map(|r| RawRegion {
                    w: r.weight.as_f64(),
                    p: r.prob.as_slice().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(mut writer: W, records: &[LabelRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
