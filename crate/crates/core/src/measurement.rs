//! Sequential measurement under Lüders' rule.
//!
//! A measurement of dimension `D` on state `|ψ⟩` yields `D±` with probability
//! `|⟨D±|ψ⟩|²` and leaves the state in `|D±⟩`. Sequence probabilities are
//! products of squared overlaps along the collapse chain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::ModelParams;
use crate::hilbert::{transition_prob, CognitiveState, Dimension, HilbertError, Sign};

/// Slack allowed before a probability outside `[0, 1]` is treated as a bug.
pub const PROBABILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("question sequence is empty")]
    EmptySequence,
    #[error("question sequence has {0} questions, at most 3 are allowed")]
    TooLong(usize),
    #[error("dimension {0} appears more than once")]
    RepeatedDimension(Dimension),
    #[error("target dimension {0} is already in the conditioning sequence")]
    TargetInGiven(Dimension),
    #[error("conditioning sequence {0} has zero probability")]
    NullCondition(String),
    #[error("{0:?} is not a permutation of T, U, R")]
    NotPermutation(Vec<Dimension>),
    #[error("dimensions must differ for an order effect, got {0} twice")]
    SameDimension(Dimension),
    #[error("probability {0} lies outside [0, 1] beyond rounding slack")]
    Inconsistent(f64),
    #[error("invalid question {0:?}")]
    Parse(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Clamps rounding excursions of at most [`PROBABILITY_SLACK`] into `[0, 1]`.
pub fn clamp_probability(p: f64) -> Result<f64, MeasurementError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else if (-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) {
        Ok(p.clamp(0.0, 1.0))
    } else {
        Err(MeasurementError::Inconsistent(p))
    }
}

/// One yes/no question together with the answer it received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Question {
    pub dimension: Dimension,
    pub sign: Sign,
}

impl Question {
    pub const fn new(dimension: Dimension, sign: Sign) -> Self {
        Question { dimension, sign }
    }

    pub const fn t(sign: Sign) -> Self {
        Question::new(Dimension::Topicality, sign)
    }

    pub const fn u(sign: Sign) -> Self {
        Question::new(Dimension::Understandability, sign)
    }

    pub const fn r(sign: Sign) -> Self {
        Question::new(Dimension::Reliability, sign)
    }

    pub fn flip(self) -> Self {
        Question::new(self.dimension, self.sign.flip())
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.dimension, self.sign)
    }
}

impl FromStr for Question {
    type Err = MeasurementError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut chars = s.chars();
        let dim = chars.next().and_then(Dimension::from_letter);
        let sign = chars.as_str().parse::<Sign>().ok();
        match (dim, sign) {
            (Some(d), Some(sg)) => Ok(Question::new(d, sg)),
            _ => Err(MeasurementError::Parse(s.to_string())),
        }
    }
}

fn check_distinct(questions: &[Question]) -> Result<(), MeasurementError> {
    for (i, q) in questions.iter().enumerate() {
        if questions[..i].iter().any(|p| p.dimension == q.dimension) {
            return Err(MeasurementError::RepeatedDimension(q.dimension));
        }
    }
    Ok(())
}

/// An ordered list of 1–3 answered questions over distinct dimensions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuestionSequence(Vec<Question>);

impl QuestionSequence {
    pub fn new(questions: Vec<Question>) -> Result<Self, MeasurementError> {
        if questions.is_empty() {
            return Err(MeasurementError::EmptySequence);
        }
        if questions.len() > 3 {
            return Err(MeasurementError::TooLong(questions.len()));
        }
        check_distinct(&questions)?;
        Ok(QuestionSequence(questions))
    }

    pub fn questions(&self) -> &[Question] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for QuestionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|q| write!(f, "{q}"))
    }
}

impl FromStr for QuestionSequence {
    type Err = MeasurementError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.trim().replace('\u{2212}', "-").chars().collect();
        if !chars.len().is_multiple_of(2) {
            return Err(MeasurementError::Parse(s.to_string()));
        }
        let questions = chars
            .chunks(2)
            .map(|c| c.iter().collect::<String>().parse())
            .collect::<Result<Vec<Question>, _>>()?;
        QuestionSequence::new(questions)
    }
}

/// Probabilities of every outcome path of a question order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    entries: Vec<(QuestionSequence, f64)>,
}

impl OutcomeDistribution {
    pub fn entries(&self) -> &[(QuestionSequence, f64)] {
        &self.entries
    }

    /// Looks up a path by its label, e.g. `"T+U-R+"`.
    pub fn get(&self, label: &str) -> Option<f64> {
        let seq: QuestionSequence = label.parse().ok()?;
        self.entries.iter().find(|(s, _)| *s == seq).map(|(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

/// Probability of the answers in `questions` occurring in order, starting
/// from `initial`, together with the post-measurement state.
fn collapse_chain(
    initial: &CognitiveState,
    model: &ModelParams,
    questions: &[Question],
) -> (f64, CognitiveState) {
    questions.iter().fold((1.0, *initial), |(p, state), q| {
        let next = model.vector(*q);
        (p * transition_prob(&next, &state), next)
    })
}

/// Sequence probability from the model's prepared state `|S⟩`.
pub fn sequence_prob(model: &ModelParams, seq: &QuestionSequence) -> Result<f64, MeasurementError> {
    sequence_prob_from(&model.initial_state(), model, seq)
}

pub fn sequence_prob_from(
    initial: &CognitiveState,
    model: &ModelParams,
    seq: &QuestionSequence,
) -> Result<f64, MeasurementError> {
    clamp_probability(collapse_chain(initial, model, seq.questions()).0)
}

/// Lüders conditional `P_q(target | given)` from the model's prepared state.
pub fn luder_conditional(
    model: &ModelParams,
    target: Question,
    given: &[Question],
) -> Result<f64, MeasurementError> {
    luder_conditional_from(&model.initial_state(), model, target, given)
}

pub fn luder_conditional_from(
    initial: &CognitiveState,
    model: &ModelParams,
    target: Question,
    given: &[Question],
) -> Result<f64, MeasurementError> {
    check_distinct(given)?;
    if given.iter().any(|q| q.dimension == target.dimension) {
        return Err(MeasurementError::TargetInGiven(target.dimension));
    }
    let (p_given, state) = collapse_chain(initial, model, given);
    if p_given <= 0.0 {
        let label: String = given.iter().map(|q| q.to_string()).collect();
        return Err(MeasurementError::NullCondition(label));
    }
    clamp_probability(transition_prob(&model.vector(target), &state))
}

/// `P_q(R+ | U+, T+)` written out term by term.
pub fn cond_reliability_closed_form(u: f64, r: f64, theta: f64) -> Result<f64, MeasurementError> {
    for (name, value) in [("u", u), ("r", r)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(HilbertError::Domain { name, value }.into());
        }
    }
    let (su, sr) = (1.0 - u * u, 1.0 - r * r);
    let p = (u * r).powi(2) + su * sr + 2.0 * u * r * (su * sr).sqrt() * theta.cos();
    clamp_probability(p)
}

/// `P(A+ then B+) − P(B+ then A+)` starting from `|T+⟩`.
pub fn order_effect_gap(
    model: &ModelParams,
    dim_a: Dimension,
    dim_b: Dimension,
) -> Result<f64, MeasurementError> {
    if dim_a == dim_b {
        return Err(MeasurementError::SameDimension(dim_a));
    }
    let a = [Question::new(dim_a, Sign::Plus), Question::new(dim_b, Sign::Plus)];
    let b = [a[1], a[0]];
    let prepared = CognitiveState::T_PLUS;
    let p_ab = collapse_chain(&prepared, model, &a).0;
    let p_ba = collapse_chain(&prepared, model, &b).0;
    Ok(p_ab - p_ba)
}

/// All eight outcome paths for a full three-question order.
pub fn full_distribution(
    model: &ModelParams,
    order: &[Dimension],
) -> Result<OutcomeDistribution, MeasurementError> {
    let is_permutation =
        order.len() == 3 && Dimension::ALL.iter().all(|d| order.contains(d));
    if !is_permutation {
        return Err(MeasurementError::NotPermutation(order.to_vec()));
    }
    let initial = model.initial_state();
    let mut entries = Vec::with_capacity(8);
    for bits in 0..8u8 {
        let questions: Vec<Question> = order
            .iter()
            .enumerate()
            .map(|(i, d)| Question::new(*d, Sign::from_bool(bits & (4 >> i) == 0)))
            .collect();
        let p = clamp_probability(collapse_chain(&initial, model, &questions).0)?;
        entries.push((QuestionSequence(questions), p));
    }
    Ok(OutcomeDistribution { entries })
}
