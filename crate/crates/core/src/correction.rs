//! Inclusion–exclusion deltas, the quantum correction operator, and
//! conjunction/disjunction fallacy detectors.
//!
//! For events `A = U sU` and `B = R sR`, conditioned on `T+`,
//!
//! ```text
//! δ = P(A ∨ B) + P(A ∧ B) − P(A) − P(B)
//! ```
//!
//! is zero for any classical probability measure. In a 2D Hilbert space the
//! join of two distinct rays is the identity and their meet is zero, so the
//! operator analogue reduces to `D = I − Π_A − Π_B`, which also equals
//! `[Π_A, Π_B](Π_A − Π_B)⁻¹`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Event, Frequency, FrequencyTable, Group};
use crate::estimation::ModelParams;
use crate::hilbert::{CognitiveState, Dimension, HilbertError, Matrix2, Projector, Sign};
use crate::measurement::Question;

/// `|det(Π_A − Π_B)|` at or below which the difference counts as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Threshold on `|z|` for flagging a violation.
pub const Z_THRESHOLD: f64 = 1.96;

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("sample size for {0} is zero or unknown")]
    ZeroCount(&'static str),
    #[error("projectors coincide; their difference is singular")]
    SingularDifference,
    #[error("projector has rank {0}, expected 1")]
    NotRankOne(usize),
    #[error("missing frequencies: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("no conjunction/disjunction groups found")]
    NoPairGroups,
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// The four probabilities entering δ for one sign pair, with the size of the
/// group each was measured in (0 when unknown).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjDisjObservation {
    pub query_id: String,
    pub signs: (Sign, Sign),
    pub p_or: f64,
    pub p_and: f64,
    pub p_u: f64,
    pub p_r: f64,
    pub n_or: u64,
    pub n_and: u64,
    pub n_u: u64,
    pub n_r: u64,
}

impl ConjDisjObservation {
    /// `probs` and `counts` are ordered `[or, and, u, r]`.
    pub fn new(
        query_id: &str,
        signs: (Sign, Sign),
        probs: [f64; 4],
        counts: [u64; 4],
    ) -> Result<Self, CorrectionError> {
        for (name, value) in ["p_or", "p_and", "p_u", "p_r"].into_iter().zip(probs) {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorrectionError::InvalidProbability { name, value });
            }
        }
        let [p_or, p_and, p_u, p_r] = probs;
        let [n_or, n_and, n_u, n_r] = counts;
        Ok(ConjDisjObservation {
            query_id: query_id.to_string(),
            signs,
            p_or,
            p_and,
            p_u,
            p_r,
            n_or,
            n_and,
            n_u,
            n_r,
        })
    }

    /// Reads the four `T+` probabilities: the paired groups for `∨`/`∧`,
    /// `P(U sU|T+)` from TUR and `P(R sR|T+)` from TRU.
    pub fn from_table(
        table: &FrequencyTable,
        query_id: &str,
        signs: (Sign, Sign),
    ) -> Result<Self, CorrectionError> {
        let found = pair_frequencies(table, query_id, signs);
        let mut missing = Vec::new();
        let mut probs = [0.0; 4];
        let mut counts = [0; 4];
        for (i, (label, f)) in found.iter().enumerate() {
            match f.and_then(|f| f.p_hat().map(|p| (p, f.n().unwrap_or(0)))) {
                Some((p, n)) => {
                    probs[i] = p;
                    counts[i] = n;
                }
                None => missing.push(label.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(CorrectionError::Missing(missing));
        }
        ConjDisjObservation::new(query_id, signs, probs, counts)
    }
}

fn pair_frequencies(
    table: &FrequencyTable,
    query_id: &str,
    (su, sr): (Sign, Sign),
) -> [(String, Option<Frequency>); 4] {
    let t = Question::t(Sign::Plus);
    let entries = [
        (Group::Disj(su, sr), Event::Disjunction { u: su, r: sr, given: Sign::Plus }),
        (Group::Conj(su, sr), Event::Conjunction { u: su, r: sr, given: Sign::Plus }),
        (Group::Tur, Event::conditional(Question::u(su), &[t])),
        (Group::Tru, Event::conditional(Question::r(sr), &[t])),
    ];
    entries.map(|(g, e)| (format!("{g}:{e}"), table.get(query_id, g, &e).copied()))
}

/// `p_or + p_and − p_u − p_r`.
pub fn classical_delta(obs: &ConjDisjObservation) -> f64 {
    obs.p_or + obs.p_and - obs.p_u - obs.p_r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: f64,
    pub std_err: f64,
    /// Signed; infinite when `std_err = 0` and `delta ≠ 0`.
    pub z_score: f64,
    pub quantum_predicted_delta: Option<f64>,
    pub violation: bool,
}

/// Normal approximation over four independent group proportions.
pub fn delta_significance(obs: &ConjDisjObservation) -> Result<DeltaReport, CorrectionError> {
    let terms = [
        ("p_or", obs.p_or, obs.n_or),
        ("p_and", obs.p_and, obs.n_and),
        ("p_u", obs.p_u, obs.n_u),
        ("p_r", obs.p_r, obs.n_r),
    ];
    let mut var = 0.0;
    for (name, p, n) in terms {
        if n == 0 {
            return Err(CorrectionError::ZeroCount(name));
        }
        var += p * (1.0 - p) / n as f64;
    }
    let delta = classical_delta(obs);
    let std_err = var.sqrt();
    let z_score = if delta == 0.0 {
        0.0
    } else if std_err == 0.0 {
        f64::INFINITY.copysign(delta)
    } else {
        delta / std_err
    };
    Ok(DeltaReport {
        delta,
        std_err,
        z_score,
        quantum_predicted_delta: None,
        violation: z_score.abs() > Z_THRESHOLD,
    })
}

/// `[Π_U, Π_R](Π_U − Π_R)⁻¹` for two rank-1 projectors.
pub fn quantum_correction_operator(pu: &Projector, pr: &Projector) -> Result<Matrix2, CorrectionError> {
    for p in [pu, pr] {
        if p.rank() != 1 {
            return Err(CorrectionError::NotRankOne(p.rank()));
        }
    }
    let (a, b) = (pu.matrix(), pr.matrix());
    let inv = (*a - *b).inverse(SINGULAR_DET).ok_or(CorrectionError::SingularDifference)?;
    Ok(a.commutator(b) * inv)
}

/// `⟨T+|D|T+⟩` for `D` built from `Π(U sU)` and `Π(R sR)`.
pub fn quantum_predicted_delta(model: &ModelParams, (su, sr): (Sign, Sign)) -> Result<f64, CorrectionError> {
    let pu = model.basis(Dimension::Understandability).projector(su);
    let pr = model.basis(Dimension::Reliability).projector(sr);
    let d = quantum_correction_operator(&pu, &pr)?;
    Ok(d.expectation(&CognitiveState::T_PLUS).re)
}

/// Fallacy flags with signed margins; a positive margin is a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallacyFlags {
    pub vs_u: bool,
    pub vs_r: bool,
    pub margin_u: f64,
    pub margin_r: f64,
}

/// Flags `p_and > p_u` and `p_and > p_r`.
pub fn detect_conjunction_fallacy(p_and: f64, p_u: f64, p_r: f64) -> FallacyFlags {
    let (margin_u, margin_r) = (p_and - p_u, p_and - p_r);
    FallacyFlags { vs_u: margin_u > 0.0, vs_r: margin_r > 0.0, margin_u, margin_r }
}

/// Flags `p_or < p_u` and `p_or < p_r`.
pub fn detect_disjunction_fallacy(p_or: f64, p_u: f64, p_r: f64) -> FallacyFlags {
    let (margin_u, margin_r) = (p_u - p_or, p_r - p_or);
    FallacyFlags { vs_u: margin_u > 0.0, vs_r: margin_r > 0.0, margin_u, margin_r }
}

/// One-sided fallacy check that tolerates a missing marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialFallacy {
    pub margin_u: Option<f64>,
    pub margin_r: Option<f64>,
}

impl PartialFallacy {
    pub fn vs_u(&self) -> bool {
        self.margin_u.is_some_and(|m| m > 0.0)
    }

    pub fn vs_r(&self) -> bool {
        self.margin_r.is_some_and(|m| m > 0.0)
    }
}

/// Everything the delta report shows for one (query, sign pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub query_id: String,
    pub signs: (Sign, Sign),
    pub p_or: Option<f64>,
    pub p_and: Option<f64>,
    pub p_u: Option<f64>,
    pub p_r: Option<f64>,
    pub report: Option<DeltaReport>,
    pub conjunction: PartialFallacy,
    pub disjunction: PartialFallacy,
    /// Why `report` is absent, or why the quantum prediction is.
    pub notes: Vec<String>,
}

/// Builds a [`DeltaRow`] for every sign pair of every query that has at
/// least one paired group. Missing inputs are reported per row.
pub fn delta_rows(
    table: &FrequencyTable,
    model_for: impl Fn(&str) -> Option<ModelParams>,
) -> Result<Vec<DeltaRow>, CorrectionError> {
    let queries: Vec<String> = table
        .queries()
        .into_iter()
        .filter(|q| Group::ALL.iter().any(|g| !g.is_sequence() && table.has_group(q, *g)))
        .collect();
    if queries.is_empty() {
        return Err(CorrectionError::NoPairGroups);
    }
    let mut rows = Vec::new();
    for query in &queries {
        let model = model_for(query);
        for su in Sign::BOTH {
            for sr in Sign::BOTH {
                rows.push(delta_row(table, query, (su, sr), model.as_ref()));
            }
        }
    }
    Ok(rows)
}

fn delta_row(
    table: &FrequencyTable,
    query: &str,
    signs: (Sign, Sign),
    model: Option<&ModelParams>,
) -> DeltaRow {
    let found = pair_frequencies(table, query, signs);
    let [p_or, p_and, p_u, p_r] = found.each_ref().map(|(_, f)| f.and_then(|f| f.p_hat()));
    let margin = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let mut notes = Vec::new();
    let report = match ConjDisjObservation::from_table(table, query, signs)
        .and_then(|obs| delta_significance(&obs))
    {
        Ok(mut report) => {
            match model.map(|m| quantum_predicted_delta(m, signs)) {
                Some(Ok(d)) => report.quantum_predicted_delta = Some(d),
                Some(Err(e)) => notes.push(format!("quantum delta: {e}")),
                None => notes.push("quantum delta: no model".to_string()),
            }
            Some(report)
        }
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    DeltaRow {
        query_id: query.to_string(),
        signs,
        p_or,
        p_and,
        p_u,
        p_r,
        report,
        conjunction: PartialFallacy { margin_u: margin(p_and, p_u), margin_r: margin(p_and, p_r) },
        disjunction: PartialFallacy { margin_u: margin(p_u, p_or), margin_r: margin(p_r, p_or) },
        notes,
    }
}
