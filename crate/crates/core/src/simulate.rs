//! Seeded synthetic studies.
//!
//! Every agent owns a ChaCha8 stream selected by `(group, agent index)` under
//! the master seed, so output does not depend on thread scheduling and any
//! single agent can be regenerated in isolation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::JointTable;
use crate::data::{Event, Frequency, FrequencyTable, Group, JudgementRecord, QuestionTag};
use crate::estimation::{expected_sequence_table, ModelParams};
use crate::hilbert::{projector_of, transition_prob, CognitiveState, Dimension, Sign};
use crate::measurement::Question;

/// Internal order in which a quantum agent evaluates a paired question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InternalOrder {
    /// A fair coin per agent.
    Random,
    UThenR,
    RThenU,
}

/// How a quantum agent answers an AND/OR question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairedMechanism {
    /// Measure U and R one after the other and combine the two outcomes.
    Sequential(InternalOrder),
    /// Measure the join (OR) or meet (AND) subspace projector directly.
    QuantumLogic,
}

impl Default for PairedMechanism {
    fn default() -> Self {
        PairedMechanism::Sequential(InternalOrder::Random)
    }
}

impl fmt::Display for PairedMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairedMechanism::Sequential(InternalOrder::Random) => "sequential",
            PairedMechanism::Sequential(InternalOrder::UThenR) => "sequential-ur",
            PairedMechanism::Sequential(InternalOrder::RThenU) => "sequential-ru",
            PairedMechanism::QuantumLogic => "quantum-logic",
        })
    }
}

impl FromStr for PairedMechanism {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(PairedMechanism::Sequential(InternalOrder::Random)),
            "sequential-ur" => Ok(PairedMechanism::Sequential(InternalOrder::UThenR)),
            "sequential-ru" => Ok(PairedMechanism::Sequential(InternalOrder::RThenU)),
            "quantum-logic" => Ok(PairedMechanism::QuantumLogic),
            other => Err(format!(
                "unknown paired mechanism {other:?}, expected sequential, sequential-ur, sequential-ru or quantum-logic"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Agent {
    Quantum { model: ModelParams, mechanism: PairedMechanism },
    /// Samples one `(T, U, R)` triple and answers every question consistently
    /// with it; OR is `+` when at least one statement matches.
    Classical { joint: JointTable },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub query_id: String,
    /// Indexed like [`Group::ALL`].
    pub group_sizes: [usize; 10],
    pub agent: Agent,
    pub seed: u64,
}

impl Protocol {
    /// `n` agents in every group.
    pub fn uniform(query_id: &str, n: usize, agent: Agent, seed: u64) -> Self {
        Protocol { query_id: query_id.to_string(), group_sizes: [n; 10], agent, seed }
    }
}

/// The random stream of agent `index` in `group`.
pub fn agent_rng(seed: u64, group: Group, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group.index() as u64) << 40) | index as u64);
    rng
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> Sign {
    Sign::from_bool(rng.random::<f64>() < p)
}

/// Measures `q.dimension` in `state`, returning the outcome and the collapsed state.
fn measure(model: &ModelParams, state: &CognitiveState, dim: Dimension, rng: &mut ChaCha8Rng) -> (Sign, CognitiveState) {
    let plus = model.vector(Question::new(dim, Sign::Plus));
    let sign = bernoulli(rng, transition_prob(&plus, state));
    (sign, model.vector(Question::new(dim, sign)))
}

fn combine(mode: PairMode, u_match: bool, r_match: bool) -> Sign {
    Sign::from_bool(match mode {
        PairMode::And => u_match && r_match,
        PairMode::Or => u_match || r_match,
    })
}

/// Answer of a quantum agent in `state` to `U sU AND/OR R sR`.
pub fn quantum_conj_disj_response(
    model: &ModelParams,
    state: &CognitiveState,
    (su, sr): (Sign, Sign),
    mode: PairMode,
    mechanism: PairedMechanism,
    rng: &mut ChaCha8Rng,
) -> Sign {
    match mechanism {
        PairedMechanism::Sequential(order) => {
            let u_first = match order {
                InternalOrder::Random => rng.random::<bool>(),
                InternalOrder::UThenR => true,
                InternalOrder::RThenU => false,
            };
            let dims = if u_first {
                [Dimension::Understandability, Dimension::Reliability]
            } else {
                [Dimension::Reliability, Dimension::Understandability]
            };
            let (a, mid) = measure(model, state, dims[0], rng);
            let (b, _) = measure(model, &mid, dims[1], rng);
            let (u, r) = if u_first { (a, b) } else { (b, a) };
            combine(mode, u == su, r == sr)
        }
        PairedMechanism::QuantumLogic => {
            let vu = model.vector(Question::u(su));
            let vr = model.vector(Question::r(sr));
            if transition_prob(&vu, &vr) >= 1.0 - 1e-12 {
                // Coincident rays: join and meet are the ray itself.
                bernoulli(rng, projector_of(&vu).probability(state))
            } else {
                Sign::from_bool(mode == PairMode::Or)
            }
        }
    }
}

fn quantum_record(
    model: &ModelParams,
    mechanism: PairedMechanism,
    group: Group,
    rng: &mut ChaCha8Rng,
) -> (Sign, Vec<(QuestionTag, Sign)>) {
    let (t, state) = measure(model, &model.initial_state(), Dimension::Topicality, rng);
    let answers = match group {
        Group::Tur | Group::Tru => {
            let [d1, d2] = group.order().unwrap();
            let (a, mid) = measure(model, &state, d1, rng);
            let (b, _) = measure(model, &mid, d2, rng);
            let tag = |d: Dimension| if d == Dimension::Understandability { QuestionTag::U } else { QuestionTag::R };
            vec![(tag(d1), a), (tag(d2), b)]
        }
        Group::Conj(su, sr) => {
            vec![(QuestionTag::And, quantum_conj_disj_response(model, &state, (su, sr), PairMode::And, mechanism, rng))]
        }
        Group::Disj(su, sr) => {
            vec![(QuestionTag::Or, quantum_conj_disj_response(model, &state, (su, sr), PairMode::Or, mechanism, rng))]
        }
    };
    (t, answers)
}

fn classical_record(joint: &JointTable, group: Group, rng: &mut ChaCha8Rng) -> (Sign, Vec<(QuestionTag, Sign)>) {
    let x: f64 = rng.random();
    let cells = joint.cells();
    let mut acc = 0.0;
    // Falls through to the last non-empty cell on rounding.
    let mut chosen = cells.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, p) in cells.iter().enumerate() {
        acc += p;
        if x < acc {
            chosen = i;
            break;
        }
    }
    let sign = |bit: usize| Sign::from_bool(chosen & bit == 0);
    let (t, u, r) = (sign(4), sign(2), sign(1));
    let answers = match group {
        Group::Tur => vec![(QuestionTag::U, u), (QuestionTag::R, r)],
        Group::Tru => vec![(QuestionTag::R, r), (QuestionTag::U, u)],
        Group::Conj(su, sr) => vec![(QuestionTag::And, combine(PairMode::And, u == su, r == sr))],
        Group::Disj(su, sr) => vec![(QuestionTag::Or, combine(PairMode::Or, u == su, r == sr))],
    };
    (t, answers)
}

/// Generates every agent's record, ordered by group then agent index.
pub fn run_protocol(p: &Protocol) -> Vec<JudgementRecord> {
    let agents: Vec<(Group, usize)> = Group::ALL
        .iter()
        .flat_map(|&g| (0..p.group_sizes[g.index()]).map(move |i| (g, i)))
        .collect();
    agents
        .into_par_iter()
        .map(|(group, i)| {
            let mut rng = agent_rng(p.seed, group, i);
            let (t, answers) = match &p.agent {
                Agent::Quantum { model, mechanism } => quantum_record(model, *mechanism, group, &mut rng),
                Agent::Classical { joint } => classical_record(joint, group, &mut rng),
            };
            JudgementRecord::new(format!("{group}-{i:06}"), p.query_id.clone(), group, t, answers)
                .expect("answers follow the group layout")
        })
        .collect()
}

/// Probability that a quantum agent in `state` answers `+` to the paired question.
pub fn paired_probability(
    model: &ModelParams,
    state: &CognitiveState,
    (su, sr): (Sign, Sign),
    mode: PairMode,
    mechanism: PairedMechanism,
) -> f64 {
    let vu = model.vector(Question::u(su));
    let vr = model.vector(Question::r(sr));
    match mechanism {
        PairedMechanism::QuantumLogic => {
            if transition_prob(&vu, &vr) >= 1.0 - 1e-12 {
                transition_prob(&vu, state)
            } else if mode == PairMode::Or {
                1.0
            } else {
                0.0
            }
        }
        PairedMechanism::Sequential(order) => {
            let q = transition_prob(&vu, &vr);
            let (a, b) = (transition_prob(&vu, state), transition_prob(&vr, state));
            // The second measurement leaves the first outcome's ray, so a
            // mismatch there is rescued with probability 1 − q.
            let (p_ur, p_ru) = match mode {
                PairMode::And => (a * q, b * q),
                PairMode::Or => (a + (1.0 - a) * (1.0 - q), b + (1.0 - b) * (1.0 - q)),
            };
            match order {
                InternalOrder::Random => 0.5 * (p_ur + p_ru),
                InternalOrder::UThenR => p_ur,
                InternalOrder::RThenU => p_ru,
            }
        }
    }
}

/// Exact model frequencies for all ten groups, each with nominal size `n`.
pub fn expected_frequencies(model: &ModelParams, mechanism: PairedMechanism, query: &str, n: u64) -> FrequencyTable {
    let mut table = expected_sequence_table(model, query, n);
    let p_t = model.t() * model.t();
    for group in Group::ALL.into_iter().filter(|g| !g.is_sequence()) {
        let (Group::Conj(su, sr) | Group::Disj(su, sr)) = group else { unreachable!() };
        let mode = if matches!(group, Group::Conj(..)) { PairMode::And } else { PairMode::Or };
        table.insert(query, group, Event::Topicality(Sign::Plus), Frequency::Exact { p: p_t, n });
        table.insert(query, group, Event::Topicality(Sign::Minus), Frequency::Exact { p: 1.0 - p_t, n });
        for ts in Sign::BOTH {
            let state = model.vector(Question::t(ts));
            let p = paired_probability(model, &state, (su, sr), mode, mechanism);
            let event = match mode {
                PairMode::And => Event::Conjunction { u: su, r: sr, given: ts },
                PairMode::Or => Event::Disjunction { u: su, r: sr, given: ts },
            };
            table.insert(query, group, event, Frequency::Exact { p, n });
        }
    }
    table
}
