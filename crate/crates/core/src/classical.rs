//! The Bayesian baseline: one joint distribution over `(T, U, R)` outcomes,
//! with every conditional read off it by the chain rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Event, Frequency, FrequencyTable, Group};
use crate::hilbert::{Dimension, Sign};
use crate::measurement::Question;

/// Tolerance on the total mass of a joint table.
pub const JOINT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("joint cell {label} = {value} is negative or not finite")]
    InvalidCell { label: String, value: f64 },
    #[error("joint table sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("joint table is missing cell {0}")]
    MissingCell(String),
    #[error("unknown joint cell label {0:?}")]
    UnknownCell(String),
    #[error("conditioning event {0} has probability zero")]
    NullCondition(String),
    #[error("incomplete data, missing: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("{0} is not a sequence group")]
    NotSequenceGroup(Group),
    #[error("smoothing must be finite and non-negative, got {0}")]
    InvalidSmoothing(f64),
}

fn idx(s: Sign) -> usize {
    usize::from(!s.is_plus())
}

fn cell_index(t: Sign, u: Sign, r: Sign) -> usize {
    idx(t) * 4 + idx(u) * 2 + idx(r)
}

fn cell_signs(i: usize) -> (Sign, Sign, Sign) {
    let s = |bit: usize| Sign::from_bool(i & bit == 0);
    (s(4), s(2), s(1))
}

fn cell_label(i: usize) -> String {
    let (t, u, r) = cell_signs(i);
    format!("T{t}U{u}R{r}")
}

/// Eight probabilities indexed by `(T, U, R)` signs. JSON form is an object
/// keyed `"T+U+R+"` … `"T-U-R-"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct JointTable {
    cells: [f64; 8],
}

impl TryFrom<BTreeMap<String, f64>> for JointTable {
    type Error = ClassicalError;
    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        let labels: Vec<String> = (0..8).map(cell_label).collect();
        if let Some(unknown) = map.keys().find(|k| !labels.contains(k)) {
            return Err(ClassicalError::UnknownCell(unknown.clone()));
        }
        let mut cells = [0.0; 8];
        for (i, label) in labels.iter().enumerate() {
            cells[i] = *map.get(label).ok_or_else(|| ClassicalError::MissingCell(label.clone()))?;
        }
        JointTable::new(cells)
    }
}

impl From<JointTable> for BTreeMap<String, f64> {
    fn from(j: JointTable) -> Self {
        (0..8).map(|i| (cell_label(i), j.cells[i])).collect()
    }
}

impl JointTable {
    /// Cells in `T+U+R+, T+U+R−, T+U−R+, …, T−U−R−` order.
    pub fn new(cells: [f64; 8]) -> Result<Self, ClassicalError> {
        for (i, &value) in cells.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ClassicalError::InvalidCell { label: cell_label(i), value });
            }
        }
        let total: f64 = cells.iter().sum();
        if (total - 1.0).abs() > JOINT_SUM_TOLERANCE {
            return Err(ClassicalError::NotNormalized(total));
        }
        Ok(JointTable { cells })
    }

    pub fn uniform() -> Self {
        JointTable { cells: [0.125; 8] }
    }

    pub fn cells(&self) -> &[f64; 8] {
        &self.cells
    }

    pub fn get(&self, t: Sign, u: Sign, r: Sign) -> f64 {
        self.cells[cell_index(t, u, r)]
    }

    /// Marginal probability that every question in `event` has its sign.
    pub fn prob(&self, event: &[Question]) -> f64 {
        (0..8)
            .filter(|&i| {
                let (t, u, r) = cell_signs(i);
                event.iter().all(|q| {
                    q.sign
                        == match q.dimension {
                            Dimension::Topicality => t,
                            Dimension::Understandability => u,
                            Dimension::Reliability => r,
                        }
                })
            })
            .map(|i| self.cells[i])
            .sum()
    }

    /// `P(U sU ∧ R sR | T ts)` and `P(U sU ∨ R sR | T ts)`.
    pub fn and_or(&self, su: Sign, sr: Sign, ts: Sign) -> Result<(f64, f64), ClassicalError> {
        let t = Question::t(ts);
        let p_and = bayes_conditional(self, &[Question::u(su), Question::r(sr)], &[t])?;
        let p_neither = bayes_conditional(self, &[Question::u(su.flip()), Question::r(sr.flip())], &[t])?;
        Ok((p_and, 1.0 - p_neither))
    }
}

/// `P(target | given)` from the joint; `target` may name several questions.
pub fn bayes_conditional(
    joint: &JointTable,
    target: &[Question],
    given: &[Question],
) -> Result<f64, ClassicalError> {
    let denom = joint.prob(given);
    if denom <= 0.0 {
        let label: Vec<String> = given.iter().map(|q| q.to_string()).collect();
        return Err(ClassicalError::NullCondition(label.join(",")));
    }
    let both: Vec<Question> = target.iter().chain(given).copied().collect();
    Ok(joint.prob(&both) / denom)
}

/// A joint built from one order's sequential data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub joint: JointTable,
    pub order: Group,
    /// Largest cell difference from the joint of the other order, when that
    /// order's data are complete.
    pub discrepancy: Option<f64>,
}

fn smoothed(f: &Frequency, alpha: f64) -> Option<f64> {
    match (f.k(), f.n(), f.p_hat()) {
        (Some(k), Some(n), _) => {
            let denom = n as f64 + 2.0 * alpha;
            (denom > 0.0).then(|| (k as f64 + alpha) / denom)
        }
        (None, Some(n), Some(p)) => {
            let n = n as f64;
            let denom = n + 2.0 * alpha;
            (denom > 0.0).then(|| (p * n + alpha) / denom)
        }
        (_, _, p) => p,
    }
}

/// Probability of `+` and `−` for a binary event, normalized to sum to one.
/// An empty stratum carries no mass downstream and splits evenly.
fn binary(
    table: &FrequencyTable,
    query: &str,
    group: Group,
    plus: Event,
    minus: Event,
    alpha: f64,
    missing: &mut Vec<String>,
) -> [f64; 2] {
    let mut get = |e: &Event| match table.get(query, group, e) {
        Some(f) => smoothed(f, alpha),
        None => {
            missing.push(format!("{group}:{e}"));
            Some(0.0)
        }
    };
    match (get(&plus), get(&minus)) {
        (Some(a), Some(b)) if a + b > 0.0 => [a / (a + b), b / (a + b)],
        _ => [0.5, 0.5],
    }
}

fn chain_joint(
    table: &FrequencyTable,
    query: &str,
    order: Group,
    alpha: f64,
) -> Result<JointTable, ClassicalError> {
    let [d1, d2] = order.order().ok_or(ClassicalError::NotSequenceGroup(order))?;
    let mut missing = Vec::new();
    let p_t = binary(
        table,
        query,
        order,
        Event::Topicality(Sign::Plus),
        Event::Topicality(Sign::Minus),
        alpha,
        &mut missing,
    );
    let mut cells = [0.0; 8];
    for ts in Sign::BOTH {
        let t = Question::t(ts);
        let p1 = binary(
            table,
            query,
            order,
            Event::conditional(Question::new(d1, Sign::Plus), &[t]),
            Event::conditional(Question::new(d1, Sign::Minus), &[t]),
            alpha,
            &mut missing,
        );
        for s1 in Sign::BOTH {
            let q1 = Question::new(d1, s1);
            let p2 = binary(
                table,
                query,
                order,
                Event::conditional(Question::new(d2, Sign::Plus), &[t, q1]),
                Event::conditional(Question::new(d2, Sign::Minus), &[t, q1]),
                alpha,
                &mut missing,
            );
            for s2 in Sign::BOTH {
                let (u, r) = if d1 == Dimension::Understandability { (s1, s2) } else { (s2, s1) };
                cells[cell_index(ts, u, r)] = p_t[idx(ts)] * p1[idx(s1)] * p2[idx(s2)];
            }
        }
    }
    if !missing.is_empty() {
        return Err(ClassicalError::Incomplete(missing));
    }
    let total: f64 = cells.iter().sum();
    JointTable::new(cells.map(|c| c / total))
}

/// Chain-multiplies the observed conditionals of `order` (TUR or TRU) into a
/// joint, using `(k + α)/(n + 2α)` for each proportion.
pub fn fit_joint_from_sequences(
    table: &FrequencyTable,
    query: &str,
    order: Group,
    smoothing: f64,
) -> Result<JointFit, ClassicalError> {
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(ClassicalError::InvalidSmoothing(smoothing));
    }
    let joint = chain_joint(table, query, order, smoothing)?;
    let other = match order {
        Group::Tur => Group::Tru,
        _ => Group::Tur,
    };
    let discrepancy = chain_joint(table, query, other, smoothing).ok().map(|o| {
        joint.cells.iter().zip(o.cells.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    });
    Ok(JointFit { joint, order, discrepancy })
}

/// Cross-order Bayes prediction of `P(target | given, T ts)`:
///
/// ```text
/// P(target | given, T) = P(given | target, T) · P(target | T) / P(given | T)
/// ```
///
/// The first two factors come from the group that asks `target` first, the
/// denominator from the group that asks `given` first.
pub fn bayes_cross_order(
    table: &FrequencyTable,
    query: &str,
    target: Question,
    given: Question,
    ts: Sign,
) -> Result<f64, ClassicalError> {
    let group_first = |d: Dimension| match d {
        Dimension::Understandability => Group::Tur,
        _ => Group::Tru,
    };
    let t = Question::t(ts);
    let (g_target, g_given) = (group_first(target.dimension), group_first(given.dimension));
    let lookups = [
        (g_target, Event::conditional(given, &[t, target])),
        (g_target, Event::conditional(target, &[t])),
        (g_given, Event::conditional(given, &[t])),
    ];
    let mut missing = Vec::new();
    let values: Vec<f64> = lookups
        .iter()
        .map(|(g, e)| match table.get(query, *g, e).and_then(|f| f.p_hat()) {
            Some(p) => p,
            None => {
                missing.push(format!("{g}:{e}"));
                f64::NAN
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(ClassicalError::Incomplete(missing));
    }
    if values[2] <= 0.0 {
        return Err(ClassicalError::NullCondition(format!("{given}|{t}")));
    }
    Ok(values[0] * values[1] / values[2])
}
