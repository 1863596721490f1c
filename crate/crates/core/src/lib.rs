//! Binary classification from positive and unlabelled data with
//! negativity-weighted risk correction.
//!
//! The crate is organised around the training pipeline:
//!
//! * [`data`] ingests review corpora, assigns label states and builds folds.
//! * [`negativity`] maps instance age to a negativity score and risk weight.
//! * [`losses`] holds the base margin losses and the five risk assemblies.
//! * [`model`] trains linear scorers by mini-batch subgradient descent.
//! * [`features`] extracts the hand-engineered review features.
//! * [`eval`] computes metrics, significance tests and report tables.
//! * [`synth`] and [`oracle`] generate synthetic PU data and check the risk
//!   rewrite on finite distributions.
//! * [`experiment`] wires everything into the `compare` protocol.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod negativity;
pub mod oracle;
pub mod synth;

mod numeric;

pub use data::{BinaryLabel, ClassPriors, Dataset, FoldSplit, LabelState, ReviewRecord};
pub use error::{Error, Result};
pub use losses::{BaseLoss, RiskAssembly, RiskSpec, RiskValue};
pub use matrix::FeatureMatrix;
pub use model::{LinearModel, TrainConfig};
pub use negativity::{ConfidenceScore, NegativityScore};
