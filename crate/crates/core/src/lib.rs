//! Context-aware data curation over precomputed model predictions.
//!
//! The engine reads per-region class distributions and object labels and produces
//! three kinds of decisions:
//!
//! * [`acquisition`]: which unlabelled items to annotate next, chosen so the selected
//!   set covers diverse class co-occurrence contexts ([`signature`] builds the
//!   per-item context signatures and the pairwise contextual distance);
//! * [`fairness`]: which items to keep or add so that object classes co-occur evenly
//!   with every protected-attribute group;
//! * [`ada`]: which classes of a target-domain frame are worth annotating.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at the
//! crate root fix the scalar to `f64`.

pub mod acquisition;
pub mod ada;
pub mod eval;
pub mod fairness;
pub mod prob;
pub mod records;
pub mod rng;
pub mod scalar;
pub mod signature;
pub mod synth;

pub use scalar::Scalar;

pub type ProbVector = prob::ProbVector<f64>;
pub type Nats = prob::Nats<f64>;
pub type Region = records::Region<f64>;
pub type PredictionRecord = records::PredictionRecord<f64>;
pub type ContextSignature = signature::ContextSignature<f64>;
pub type ClassMixture = signature::ClassMixture<f64>;
pub type DistanceMatrix = signature::DistanceMatrix<f64>;
pub type DistanceParams = signature::DistanceParams<f64>;
pub type SelectionResult = acquisition::SelectionResult<f64>;
pub type RepairResult = fairness::RepairResult<f64>;
pub type ClassHardness = ada::ClassHardness<f64>;
pub type AnchorSet = ada::AnchorSet<f64>;
pub type FrameScores = ada::FrameScores<f64>;
pub type RegionRecommendation = ada::RegionRecommendation<f64>;

pub use fairness::CooccurrenceMatrix;
pub use records::{DataError, LabelRecord, ParseOptions};
pub use synth::SynthSpec;
