//! Monte-Carlo studies that check estimators and simulators against
//! analytic values.

use std::f64::consts::PI;

use qrel::classical::{bayes_conditional, fit_joint_from_sequences, JointTable};
use qrel::correction::{classical_delta, delta_significance, quantum_predicted_delta, ConjDisjObservation};
use qrel::data::{aggregate, Group, JudgementRecord};
use qrel::estimation::{bootstrap_ci, Fitter, ModelParams};
use qrel::hilbert::Sign;
use qrel::measurement::{sequence_prob_from, Question};
use qrel::simulate::{expected_frequencies, paired_probability, run_protocol, Agent, InternalOrder, PairMode, PairedMechanism, Protocol};
use rayon::prelude::*;

const SIGN_PAIRS: [(Sign, Sign); 4] =
    [(Sign::Plus, Sign::Plus), (Sign::Plus, Sign::Minus), (Sign::Minus, Sign::Plus), (Sign::Minus, Sign::Minus)];

fn sizes(groups: &[Group], n: usize) -> [usize; 10] {
    let mut s = [0; 10];
    for g in groups {
        s[g.index()] = n;
    }
    s
}

fn quantum(model: ModelParams) -> Agent {
    Agent::Quantum { model, mechanism: PairedMechanism::default() }
}

#[test]
fn classical_agents_rarely_show_significant_delta() {
    let joint = JointTable::new([0.2, 0.1, 0.15, 0.05, 0.1, 0.2, 0.05, 0.15]).unwrap();
    let outcomes: Vec<bool> = (0..100u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let table = aggregate(&run_protocol(&Protocol::uniform("q", 2000, Agent::Classical { joint }, seed))).unwrap();
            SIGN_PAIRS.map(|s| {
                let obs = ConjDisjObservation::from_table(&table, "q", s).unwrap();
                delta_significance(&obs).unwrap().z_score.abs() < 1.96
            })
        })
        .collect();
    let share = outcomes.iter().filter(|&&b| b).count() as f64 / outcomes.len() as f64;
    assert!(share >= 0.93, "{share}");
}

#[test]
fn compatible_measurements_give_zero_delta_under_every_mechanism() {
    // R+ coincides with U− at (u, r, θ) = (0.8, 0.6, π).
    let m = ModelParams::new(0.9, 0.8, 0.6, PI).unwrap();
    assert!((m.vector(Question::r(Sign::Plus)).inner(&m.vector(Question::u(Sign::Minus))).abs() - 1.0).abs() < 1e-12);
    for mechanism in [
        PairedMechanism::default(),
        PairedMechanism::Sequential(InternalOrder::UThenR),
        PairedMechanism::Sequential(InternalOrder::RThenU),
        PairedMechanism::QuantumLogic,
    ] {
        let table = expected_frequencies(&m, mechanism, "q", 2000);
        for signs in SIGN_PAIRS {
            let obs = ConjDisjObservation::from_table(&table, "q", signs).unwrap();
            assert!(classical_delta(&obs).abs() < 1e-12, "{mechanism} {signs:?}");
        }
    }
}

#[test]
fn sequential_mechanism_delta_formula() {
    // δ = (1 − a − b)(1 − q) with a = P(U sU|T+), b = P(R sR|T+), q = |⟨R sR|U sU⟩|².
    let m = ModelParams::new(0.7, 0.9, 0.4, 1.2).unwrap();
    let table = expected_frequencies(&m, PairedMechanism::default(), "q", 100);
    for (su, sr) in SIGN_PAIRS {
        let obs = ConjDisjObservation::from_table(&table, "q", (su, sr)).unwrap();
        let vu = m.vector(Question::u(su));
        let vr = m.vector(Question::r(sr));
        let (a, b) = (vu.amp_plus().norm_sqr(), vr.amp_plus().norm_sqr());
        let q = vu.inner(&vr).norm_sqr();
        assert!((classical_delta(&obs) - (1.0 - a - b) * (1.0 - q)).abs() < 1e-12);
        // The operator prediction keeps only the first factor.
        assert!((quantum_predicted_delta(&m, (su, sr)).unwrap() - (1.0 - a - b)).abs() < 1e-12);
    }
}

#[test]
fn paired_conjunction_frequency() {
    let m = ModelParams::new(1.0, 0.8, 0.6, PI / 2.0).unwrap();
    let g = Group::Conj(Sign::Plus, Sign::Plus);
    let p = Protocol { query_id: "q".into(), group_sizes: sizes(&[g], 100_000), agent: quantum(m), seed: 3 };
    let table = aggregate(&run_protocol(&p)).unwrap();
    let observed = table.get("q", g, &"U+^R+|T+".parse().unwrap()).unwrap().p_hat().unwrap();
    let s = m.initial_state();
    let expected = 0.5
        * (sequence_prob_from(&s, &m, &"U+R+".parse().unwrap()).unwrap()
            + sequence_prob_from(&s, &m, &"R+U+".parse().unwrap()).unwrap());
    let analytic = paired_probability(&m, &s, (Sign::Plus, Sign::Plus), PairMode::And, PairedMechanism::default());
    assert!((analytic - expected).abs() < 1e-12);
    assert!((observed - expected).abs() < 4.0 * (expected * (1.0 - expected) / 1e5).sqrt(), "{observed} vs {expected}");
}

#[test]
fn classical_joint_is_recovered() {
    let joint = JointTable::new([0.2, 0.1, 0.15, 0.05, 0.1, 0.2, 0.05, 0.15]).unwrap();
    let p = Protocol {
        query_id: "q".into(),
        group_sizes: sizes(&[Group::Tur, Group::Tru], 100_000),
        agent: Agent::Classical { joint },
        seed: 5,
    };
    let table = aggregate(&run_protocol(&p)).unwrap();
    for order in [Group::Tur, Group::Tru] {
        let fit = fit_joint_from_sequences(&table, "q", order, 0.0).unwrap();
        for (a, b) in fit.joint.cells().iter().zip(joint.cells()) {
            assert!((a - b).abs() < 0.01);
        }
        assert!(fit.discrepancy.unwrap() < 0.01);
    }
}

#[test]
fn quantum_order_effects_show_as_discrepancy() {
    let m = ModelParams::new(0.9, 0.9, 0.4, PI / 3.0).unwrap();
    let gap = qrel::measurement::order_effect_gap(&m, qrel::hilbert::Dimension::Understandability, qrel::hilbert::Dimension::Reliability).unwrap();
    assert!(gap.abs() > 0.1);
    let p = Protocol { query_id: "q".into(), group_sizes: sizes(&[Group::Tur, Group::Tru], 20_000), agent: quantum(m), seed: 6 };
    let table = aggregate(&run_protocol(&p)).unwrap();
    let fit = fit_joint_from_sequences(&table, "q", Group::Tur, 0.0).unwrap();
    assert!(fit.discrepancy.unwrap() > 0.05);
}

#[test]
fn destructive_interference_defeats_the_bayesian_joint() {
    let m = ModelParams::new(0.9, 0.5, 0.3, PI).unwrap();
    let p = Protocol { query_id: "q".into(), group_sizes: sizes(&[Group::Tur, Group::Tru], 100_000), agent: quantum(m), seed: 8 };
    let table = aggregate(&run_protocol(&p)).unwrap();
    // Joint from the opposite order, read back for the TUR conditional.
    let fit = fit_joint_from_sequences(&table, "q", Group::Tru, 0.0).unwrap();
    let t = Question::t(Sign::Plus);
    let bayes = bayes_conditional(&fit.joint, &[Question::r(Sign::Plus)], &[t, Question::u(Sign::Plus)]).unwrap();
    let quantum = qrel::measurement::luder_conditional(&m, Question::r(Sign::Plus), &[t, Question::u(Sign::Plus)]).unwrap();
    assert!((bayes - quantum).abs() > 0.1, "{bayes} vs {quantum}");
}

fn sequence_records(model: ModelParams, n: usize, seed: u64) -> Vec<JudgementRecord> {
    run_protocol(&Protocol { query_id: "q".into(), group_sizes: sizes(&[Group::Tur, Group::Tru], n), agent: quantum(model), seed })
}

#[test]
fn bootstrap_is_deterministic_and_degenerate_data_has_zero_width() {
    let m = ModelParams::new(0.9, 0.8, 0.6, 1.0).unwrap();
    let records = sequence_records(m, 300, 1);
    let a = bootstrap_ci(&records, "q", &Fitter::ClosedForm, 100, 42).unwrap();
    let b = bootstrap_ci(&records, "q", &Fitter::ClosedForm, 100, 42).unwrap();
    assert_eq!(a.ci, b.ci);
    let ci = a.ci.unwrap();
    for iv in [ci.t, ci.u, ci.r, ci.theta] {
        assert!(iv.lo <= iv.hi);
    }
    assert!(bootstrap_ci(&records, "q", &Fitter::ClosedForm, 99, 42).is_err());

    // Every participant gives the same answers, so resampling changes nothing.
    let identical: Vec<JudgementRecord> = records
        .iter()
        .map(|r| {
            let answers = match r.group {
                Group::Tur => vec![(qrel::data::QuestionTag::U, Sign::Plus), (qrel::data::QuestionTag::R, Sign::Plus)],
                _ => vec![(qrel::data::QuestionTag::R, Sign::Plus), (qrel::data::QuestionTag::U, Sign::Plus)],
            };
            JudgementRecord::new(r.participant_id.clone(), "q", r.group, Sign::Plus, answers).unwrap()
        })
        .collect();
    let fitter = Fitter::LeastSquares { init: None, options: Default::default() };
    let fit = bootstrap_ci(&identical, "q", &fitter, 100, 1).unwrap();
    let ci = fit.ci.unwrap();
    for iv in [ci.t, ci.u, ci.r, ci.theta] {
        assert_eq!(iv.width(), 0.0);
    }
}

#[test]
fn bootstrap_intervals_cover_true_u() {
    let truth = ModelParams::new(0.9, 0.8, 0.6, PI / 2.0).unwrap();
    let covered = (0..100u64)
        .into_par_iter()
        .filter(|&rep| {
            let records = sequence_records(truth, 2000, 1000 + rep);
            let fit = bootstrap_ci(&records, "q", &Fitter::ClosedForm, 1000, rep).unwrap();
            fit.ci.unwrap().u.contains(truth.u())
        })
        .count();
    assert!(covered >= 90, "{covered}/100");
}
