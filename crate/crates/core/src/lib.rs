//! Quantum-probability models of multidimensional relevance judgements.
//!
//! A user's judgement state about a document lives in a two-dimensional
//! complex Hilbert space spanned by the Topicality outcomes. Understandability
//! and Reliability are measured in rotated bases, and sequential answers
//! follow Lüders collapse. The crate fits such models to judgement data,
//! quantifies violations of inclusion–exclusion, and compares the quantum
//! predictions with a Bayesian joint-distribution baseline.

pub mod classical;
pub mod cli;
pub mod correction;
pub mod data;
pub mod estimation;
pub mod hilbert;
pub mod measurement;
pub mod optimize;
pub mod simulate;
