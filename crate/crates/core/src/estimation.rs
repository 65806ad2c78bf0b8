//! Recovering `(t, u, r, θ)` from observed frequencies.
//!
//! The closed-form route reads four probabilities and inverts the interference
//! expression for `cos θ`. The least-squares route fits every sequential
//! conditional of both orders at once, weighting each by its inverse binomial
//! variance. Only `cos θ` is identifiable from this design, so `θ` is always
//! reported in `[0, π]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{aggregate, DataError, Event, Frequency, FrequencyTable, Group, JudgementRecord};
use crate::hilbert::{
    make_initial_state, normalize_angle, reliability_basis, topicality_basis, transition_prob,
    understandability_basis, CognitiveState, Dimension, HilbertError, MeasurementBasis, Sign,
};
use crate::measurement::Question;
use crate::optimize::{minimize_bounded, NelderMeadOptions};

/// Added to the binomial variance in the weights so that `p̂ ∈ {0, 1}` stays finite.
pub const WEIGHT_EPSILON: f64 = 1e-6;

/// Smallest `2ur√((1−u²)(1−r²))` for which `cos θ` is considered recoverable.
const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("missing or empty frequencies: {}", .0.join(", "))]
    MissingFrequency(Vec<String>),
    #[error("theta is undefined: u = {u}, r = {r} leave no interference term (t = {t})")]
    Degenerate { t: f64, u: f64, r: f64 },
    #[error("need at least 4 observed probabilities with counts, found {0}")]
    InsufficientData(usize),
    #[error("no start converged within {evaluations} evaluations (best residual {best_residual})")]
    NonConvergence { evaluations: usize, best_residual: f64 },
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("replicate {0} kept producing empty strata after 100 redraws")]
    ResampleExhausted(usize),
    #[error("no records for query {0:?}")]
    UnknownQuery(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

impl EstimationError {
    fn is_data_gap(&self) -> bool {
        matches!(self, EstimationError::MissingFrequency(_) | EstimationError::InsufficientData(_))
    }
}

/// The four numbers that define one query–document model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    t: f64,
    u: f64,
    r: f64,
    theta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    t: f64,
    u: f64,
    r: f64,
    theta: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = HilbertError;
    fn try_from(p: RawParams) -> Result<Self, Self::Error> {
        ModelParams::new(p.t, p.u, p.r, p.theta)
    }
}

impl ModelParams {
    pub fn new(t: f64, u: f64, r: f64, theta: f64) -> Result<Self, HilbertError> {
        for (name, value) in [("t", t), ("u", u), ("r", r)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(HilbertError::Domain { name, value });
            }
        }
        if !theta.is_finite() {
            return Err(HilbertError::Domain { name: "theta", value: theta });
        }
        Ok(ModelParams { t, u, r, theta: normalize_angle(theta) })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The same model with `θ` folded into `[0, π]`.
    pub fn canonical(&self) -> Self {
        ModelParams { theta: self.theta.abs(), ..*self }
    }

    pub fn initial_state(&self) -> CognitiveState {
        make_initial_state(self.t).expect("t validated on construction")
    }

    pub fn basis(&self, dim: Dimension) -> MeasurementBasis {
        match dim {
            Dimension::Topicality => topicality_basis(),
            Dimension::Understandability => {
                understandability_basis(self.u).expect("u validated on construction")
            }
            Dimension::Reliability => {
                reliability_basis(self.r, self.theta).expect("r validated on construction")
            }
        }
    }

    pub fn vector(&self, q: Question) -> CognitiveState {
        self.basis(q.dimension).vector(q.sign)
    }

    fn from_box(x: &[f64; 4]) -> Self {
        ModelParams { t: x[0], u: x[1], r: x[2], theta: x[3] }
    }

    fn to_box(self) -> [f64; 4] {
        let c = self.canonical();
        [c.t, c.u, c.r, c.theta]
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={},u={},r={},theta={}", self.t, self.u, self.r, self.theta)
    }
}

/// Parses `pi`, `-pi`, `pi/2`, `3*pi/4` and plain numbers.
fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (num, den) = match body.split_once('/') {
        Some((a, b)) => (a, Some(b)),
        None => (body, None),
    };
    let factor = match num.strip_suffix("pi") {
        Some("") => 1.0,
        Some(k) => k
            .strip_suffix('*')
            .ok_or_else(|| format!("invalid angle {s:?}"))?
            .parse::<f64>()
            .map_err(|_| format!("invalid angle {s:?}"))?,
        None => return Err(format!("invalid angle {s:?}")),
    };
    let den = match den {
        Some(d) => d.parse::<f64>().map_err(|_| format!("invalid angle {s:?}"))?,
        None => 1.0,
    };
    let v = factor * PI / den;
    Ok(if neg { -v } else { v })
}

impl FromStr for ModelParams {
    type Err = String;
    /// `t=0.9,u=0.8,r=0.6,theta=pi/2`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut values: BTreeMap<&str, f64> = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let k = k.trim();
            if !["t", "u", "r", "theta"].contains(&k) {
                return Err(format!("unknown model parameter {k:?}"));
            }
            values.insert(k, parse_angle(v)?);
        }
        let get = |k: &str| values.get(k).copied().ok_or_else(|| format!("missing model parameter {k}"));
        ModelParams::new(get("t")?, get("u")?, get("r")?, get("theta")?).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    ClosedForm,
    Lsq,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::ClosedForm => "closed-form",
            FitMethod::Lsq => "lsq",
        })
    }
}

impl FromStr for FitMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed-form" => Ok(FitMethod::ClosedForm),
            "lsq" => Ok(FitMethod::Lsq),
            other => Err(format!("unknown fit method {other:?}, expected closed-form or lsq")),
        }
    }
}

/// Which parameters ended on a boundary of their domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampFlags {
    pub t: bool,
    pub u: bool,
    pub r: bool,
    pub theta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bootstrap percentile intervals, 2.5% to 97.5%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamIntervals {
    pub t: Interval,
    pub u: Interval,
    pub r: Interval,
    pub theta: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: FitMethod,
    pub params: ModelParams,
    /// Weighted RMS of model minus observed probabilities.
    pub residual: f64,
    pub clamped: ClampFlags,
    /// False when `u` or `r` sits at 0 or 1 and `θ` has no effect.
    pub theta_identified: bool,
    pub ci: Option<ParamIntervals>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
enum Predictor {
    TopicalityPlus,
    Transition { from: Question, to: Question },
}

#[derive(Debug, Clone, Copy)]
struct Observation {
    predictor: Predictor,
    p: f64,
    weight: f64,
}

impl Predictor {
    fn predict(&self, m: &ModelParams) -> f64 {
        match *self {
            Predictor::TopicalityPlus => m.t * m.t,
            Predictor::Transition { from, to } => transition_prob(&m.vector(to), &m.vector(from)),
        }
    }
}

fn weight(p: f64, n: u64) -> f64 {
    n as f64 / (p * (1.0 - p) + WEIGHT_EPSILON)
}

/// Every sequential probability with a usable sample size: pooled `P(T+)`
/// and the `+` outcome of each conditional in both orders and both
/// Topicality branches.
fn sequential_observations(table: &FrequencyTable, query: &str) -> Vec<Observation> {
    let mut obs = Vec::new();
    let t_plus = Event::Topicality(Sign::Plus);
    if let Some(f) = table.pooled(query, &t_plus) {
        if let (Some(p), Some(n)) = (f.p_hat(), f.n()) {
            obs.push(Observation { predictor: Predictor::TopicalityPlus, p, weight: weight(p, n) });
        }
    }
    for (key, f) in table.iter() {
        if key.query_id != query || !key.group.is_sequence() {
            continue;
        }
        let Event::Conditional { target, given } = &key.event else { continue };
        if target.sign != Sign::Plus {
            continue;
        }
        let (Some(p), Some(n), Some(from)) = (f.p_hat(), f.n(), given.last()) else { continue };
        if n == 0 {
            continue;
        }
        obs.push(Observation {
            predictor: Predictor::Transition { from: *from, to: *target },
            p,
            weight: weight(p, n),
        });
    }
    obs
}

fn weighted_sse(obs: &[Observation], m: &ModelParams) -> f64 {
    obs.iter().map(|o| o.weight * (o.predictor.predict(m) - o.p).powi(2)).sum()
}

fn weighted_rms(obs: &[Observation], m: &ModelParams) -> f64 {
    let total: f64 = obs.iter().map(|o| o.weight).sum();
    if total > 0.0 {
        (weighted_sse(obs, m) / total).sqrt()
    } else {
        0.0
    }
}

fn at_bound(x: f64, lo: f64, hi: f64) -> bool {
    (x - lo).abs() <= 1e-9 || (hi - x).abs() <= 1e-9
}

fn theta_identified(m: &ModelParams) -> bool {
    !at_bound(m.u, 0.0, 1.0) && !at_bound(m.r, 0.0, 1.0)
}

/// Weighted RMS residual of `model` against the sequential frequencies.
pub fn residual(table: &FrequencyTable, query: &str, model: &ModelParams) -> f64 {
    weighted_rms(&sequential_observations(table, query), model)
}

fn lookup(
    table: &FrequencyTable,
    query: &str,
    group: Option<Group>,
    event: &Event,
    missing: &mut Vec<String>,
) -> f64 {
    let found = match group {
        Some(g) => table.get(query, g, event).copied(),
        None => table.pooled(query, event),
    };
    match found.and_then(|f| f.p_hat()) {
        Some(p) => p,
        None => {
            let where_ = group.map_or_else(|| "any group".to_string(), |g| g.to_string());
            missing.push(format!("{query}/{where_}/{event}"));
            f64::NAN
        }
    }
}

/// Inverts the model from `P(T+)`, `P(U+|T+)` (TUR), `P(R+|T+)` (TRU) and
/// `P(R+|U+,T+)` (TUR).
pub fn closed_form_fit(table: &FrequencyTable, query: &str) -> Result<FitResult, EstimationError> {
    let t_plus = Question::t(Sign::Plus);
    let u_plus = Question::u(Sign::Plus);
    let r_plus = Question::r(Sign::Plus);
    let mut missing = Vec::new();
    let p_t = lookup(table, query, None, &Event::Topicality(Sign::Plus), &mut missing);
    let p_u = lookup(table, query, Some(Group::Tur), &Event::conditional(u_plus, &[t_plus]), &mut missing);
    let p_r = lookup(table, query, Some(Group::Tru), &Event::conditional(r_plus, &[t_plus]), &mut missing);
    let p_ru = lookup(
        table,
        query,
        Some(Group::Tur),
        &Event::conditional(r_plus, &[t_plus, u_plus]),
        &mut missing,
    );
    if !missing.is_empty() {
        return Err(EstimationError::MissingFrequency(missing));
    }

    let (t, u, r) = (p_t.sqrt(), p_u.sqrt(), p_r.sqrt());
    let (su, sr) = (1.0 - p_u, 1.0 - p_r);
    let denom = 2.0 * u * r * (su * sr).sqrt();
    if denom <= MIN_DENOMINATOR {
        return Err(EstimationError::Degenerate { t, u, r });
    }
    let cos_theta = (p_ru - p_u * p_r - su * sr) / denom;
    let clamped_theta = cos_theta.abs() > 1.0 + 1e-12;
    let theta = cos_theta.clamp(-1.0, 1.0).acos();
    let params = ModelParams::new(t, u, r, theta)?;
    let obs = sequential_observations(table, query);
    Ok(FitResult {
        method: FitMethod::ClosedForm,
        params,
        residual: weighted_rms(&obs, &params),
        clamped: ClampFlags { theta: clamped_theta, ..Default::default() },
        theta_identified: true,
        ci: None,
        evaluations: 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsqOptions {
    /// Jittered starts in addition to the supplied initial point.
    pub restarts: usize,
    /// Evaluation budget per start.
    pub max_evals: usize,
    pub seed: u64,
    /// Jitter half-width as a fraction of each parameter's range.
    pub jitter: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions { restarts: 8, max_evals: 10_000, seed: 0, jitter: 0.25 }
    }
}

const LOWER: [f64; 4] = [0.0, 0.0, 0.0, 0.0];
const UPPER: [f64; 4] = [1.0, 1.0, 1.0, PI];

/// Weighted least squares over all sequential probabilities of both orders,
/// from `init` plus `opts.restarts` jittered starts.
pub fn least_squares_fit(
    table: &FrequencyTable,
    query: &str,
    init: &ModelParams,
    opts: &LsqOptions,
) -> Result<FitResult, EstimationError> {
    let obs = sequential_observations(table, query);
    if obs.len() < 4 {
        return Err(EstimationError::InsufficientData(obs.len()));
    }
    let objective = |x: &[f64; 4]| weighted_sse(&obs, &ModelParams::from_box(x));
    let nm = NelderMeadOptions { max_evals: opts.max_evals, ..Default::default() };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x0 = init.to_box();
    let mut starts = vec![x0];
    for _ in 0..opts.restarts {
        let mut x = x0;
        for i in 0..4 {
            let half = opts.jitter * (UPPER[i] - LOWER[i]);
            x[i] = (x[i] + rng.random_range(-half..=half)).clamp(LOWER[i], UPPER[i]);
        }
        starts.push(x);
    }

    let mut evaluations = 0;
    let mut best: Option<([f64; 4], f64)> = None;
    let mut best_any = f64::INFINITY;
    for start in starts {
        let res = minimize_bounded(&objective, start, LOWER, UPPER, &nm);
        evaluations += res.evals;
        best_any = best_any.min(res.f);
        if res.converged && best.is_none_or(|(_, f)| res.f < f) {
            best = Some((res.x, res.f));
        }
    }
    let Some((x, _)) = best else {
        let total: f64 = obs.iter().map(|o| o.weight).sum();
        return Err(EstimationError::NonConvergence {
            evaluations,
            best_residual: (best_any / total).sqrt(),
        });
    };
    let params = ModelParams::new(x[0], x[1], x[2], x[3])?;
    Ok(FitResult {
        method: FitMethod::Lsq,
        params,
        residual: weighted_rms(&obs, &params),
        clamped: ClampFlags {
            t: at_bound(x[0], 0.0, 1.0),
            u: at_bound(x[1], 0.0, 1.0),
            r: at_bound(x[2], 0.0, 1.0),
            theta: at_bound(x[3], 0.0, PI),
        },
        theta_identified: theta_identified(&params),
        ci: None,
        evaluations,
    })
}

/// Starting point for least squares: the closed-form solution when it
/// exists, otherwise its `(t, u, r)` with `θ = π/2`, otherwise the centre.
pub fn default_init(table: &FrequencyTable, query: &str) -> ModelParams {
    match closed_form_fit(table, query) {
        Ok(fit) => fit.params,
        Err(EstimationError::Degenerate { t, u, r }) => {
            ModelParams::new(t, u, r, PI / 2.0).expect("square roots of probabilities")
        }
        Err(_) => ModelParams::new(0.5, 0.5, 0.5, PI / 2.0).unwrap(),
    }
}

#[derive(Debug, Clone)]
pub enum Fitter {
    ClosedForm,
    LeastSquares { init: Option<ModelParams>, options: LsqOptions },
}

impl Fitter {
    pub fn method(&self) -> FitMethod {
        match self {
            Fitter::ClosedForm => FitMethod::ClosedForm,
            Fitter::LeastSquares { .. } => FitMethod::Lsq,
        }
    }

    pub fn fit(&self, table: &FrequencyTable, query: &str) -> Result<FitResult, EstimationError> {
        match self {
            Fitter::ClosedForm => closed_form_fit(table, query),
            Fitter::LeastSquares { init, options } => {
                let init = init.unwrap_or_else(|| default_init(table, query));
                least_squares_fit(table, query, &init, options)
            }
        }
    }
}

/// Type-7 percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn interval(mut values: Vec<f64>) -> Interval {
    values.sort_by(f64::total_cmp);
    Interval { lo: percentile(&values, 0.025), hi: percentile(&values, 0.975) }
}

/// Fits `records` of one query and attaches percentile intervals from `b`
/// participant-level resamples drawn within each group. Replicate `i` uses
/// its own ChaCha stream `i` under `seed`.
pub fn bootstrap_ci(
    records: &[JudgementRecord],
    query: &str,
    fitter: &Fitter,
    b: usize,
    seed: u64,
) -> Result<FitResult, EstimationError> {
    if b < 100 {
        return Err(EstimationError::TooFewReplicates(b));
    }
    let mut groups: BTreeMap<Group, Vec<&JudgementRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.query_id == query) {
        groups.entry(r.group).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(EstimationError::UnknownQuery(query.to_string()));
    }
    let table = aggregate(groups.values().flatten().copied())?;
    let mut point = fitter.fit(&table, query)?;

    // Replicates start least squares from the point estimate.
    let replicate_fitter = match fitter {
        Fitter::ClosedForm => Fitter::ClosedForm,
        Fitter::LeastSquares { options, .. } => {
            Fitter::LeastSquares { init: Some(point.params), options: options.clone() }
        }
    };

    let fits: Vec<ModelParams> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sample: Vec<&JudgementRecord> = Vec::with_capacity(records.len());
            for _ in 0..=100 {
                sample.clear();
                for members in groups.values() {
                    let len = members.len();
                    sample.extend((0..len).map(|_| members[rng.random_range(0..len)]));
                }
                let table = aggregate(sample.iter().copied())?;
                match replicate_fitter.fit(&table, query) {
                    Ok(fit) => return Ok(fit.params),
                    Err(e) if e.is_data_gap() => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(EstimationError::ResampleExhausted(i))
        })
        .collect::<Result<_, _>>()?;

    let column = |f: fn(&ModelParams) -> f64| interval(fits.iter().map(f).collect());
    point.ci = Some(ParamIntervals {
        t: column(ModelParams::t),
        u: column(ModelParams::u),
        r: column(ModelParams::r),
        theta: column(ModelParams::theta),
    });
    Ok(point)
}

/// Model-implied frequencies for the two sequence groups, for noiseless
/// tests and for seeding fits. `n` is the nominal sample size per stratum.
pub fn expected_sequence_table(model: &ModelParams, query: &str, n: u64) -> FrequencyTable {
    let mut table = FrequencyTable::new();
    for group in [Group::Tur, Group::Tru] {
        let [d1, d2] = group.order().unwrap();
        let p_t = model.t * model.t;
        table.insert(query, group, Event::Topicality(Sign::Plus), Frequency::Exact { p: p_t, n });
        table.insert(query, group, Event::Topicality(Sign::Minus), Frequency::Exact { p: 1.0 - p_t, n });
        for ts in Sign::BOTH {
            let tq = Question::t(ts);
            for s1 in Sign::BOTH {
                let q1 = Question::new(d1, s1);
                let p1 = transition_prob(&model.vector(q1), &model.vector(tq));
                table.insert(query, group, Event::conditional(q1, &[tq]), Frequency::Exact { p: p1, n });
                for s2 in Sign::BOTH {
                    let q2 = Question::new(d2, s2);
                    let p2 = transition_prob(&model.vector(q2), &model.vector(q1));
                    table.insert(query, group, Event::conditional(q2, &[tq, q1]), Frequency::Exact { p: p2, n });
                }
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::cond_reliability_closed_form;
    use proptest::prelude::*;

    fn model(t: f64, u: f64, r: f64, theta: f64) -> ModelParams {
        ModelParams::new(t, u, r, theta).unwrap()
    }

    fn assert_params_close(a: &ModelParams, b: &ModelParams, tol: f64) {
        let diffs = [a.t - b.t, a.u - b.u, a.r - b.r, a.theta - b.theta];
        assert!(diffs.iter().all(|d| d.abs() <= tol), "{a} vs {b}");
    }

    #[test]
    fn parses_model_strings() {
        let m: ModelParams = "t=0.9, u=0.8, r=0.6, theta=pi/2".parse().unwrap();
        assert_eq!(m, model(0.9, 0.8, 0.6, PI / 2.0));
        let m: ModelParams = "theta=-3*pi/4,t=1,u=1,r=1".parse().unwrap();
        assert!((m.theta() + 0.75 * PI).abs() < 1e-15);
        assert!("t=1,u=1,r=1".parse::<ModelParams>().is_err());
        assert!("t=1,u=1,r=1,theta=0,x=2".parse::<ModelParams>().is_err());
        assert!("t=1.5,u=1,r=1,theta=0".parse::<ModelParams>().is_err());
    }

    #[test]
    fn model_json_is_validated() {
        let m: ModelParams = serde_json::from_str(r#"{"t":0.5,"u":0.5,"r":0.5,"theta":7.0}"#).unwrap();
        assert!((m.theta() - (7.0 - 2.0 * PI)).abs() < 1e-12);
        assert!(serde_json::from_str::<ModelParams>(r#"{"t":2,"u":0.5,"r":0.5,"theta":0}"#).is_err());
    }

    #[test]
    fn closed_form_exact_inversion() {
        let truth = model(0.6, 0.8, 0.6, PI / 2.0);
        let fit = closed_form_fit(&expected_sequence_table(&truth, "q", 1000), "q").unwrap();
        assert_params_close(&fit.params, &truth, 1e-12);
        assert_eq!(fit.clamped, ClampFlags::default());
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn closed_form_clamps_cosine() {
        // P(R+|U+,T+) = 1 with u = 0.8, r = 0.6: cos θ = (1 − 0.2304 − 0.2304) / 0.4608.
        let cos: f64 = (1.0 - 0.2304 - 0.2304) / 0.4608;
        assert!((cos - 1.1701388888888888).abs() < 1e-12);
        let mut table = expected_sequence_table(&model(0.6, 0.8, 0.6, 0.0), "q", 1000);
        table.insert(
            "q",
            Group::Tur,
            "R+|U+,T+".parse().unwrap(),
            Frequency::Exact { p: 1.0, n: 1000 },
        );
        let fit = closed_form_fit(&table, "q").unwrap();
        assert!(fit.clamped.theta);
        assert_eq!(fit.params.theta(), 0.0);
    }

    #[test]
    fn closed_form_degenerate_and_missing() {
        let table = expected_sequence_table(&model(0.6, 1.0, 0.6, 0.3), "q", 1000);
        assert!(matches!(closed_form_fit(&table, "q"), Err(EstimationError::Degenerate { .. })));
        let err = closed_form_fit(&FrequencyTable::new(), "q").unwrap_err();
        let EstimationError::MissingFrequency(list) = err else { panic!() };
        assert_eq!(list.len(), 4);
    }

    #[test]
    fn least_squares_recovers_noiseless_params() {
        let truth = model(0.9, 0.8, 0.6, 1.1);
        let table = expected_sequence_table(&truth, "q", 2000);
        let init = model(0.5, 0.5, 0.5, PI / 2.0);
        let fit = least_squares_fit(&table, "q", &init, &LsqOptions::default()).unwrap();
        assert!(fit.residual < 1e-6, "residual {}", fit.residual);
        assert_params_close(&fit.params, &truth, 1e-6);
        assert!(fit.theta_identified);
    }

    #[test]
    fn least_squares_not_worse_than_closed_form() {
        let truth = model(0.7, 0.45, 0.85, 2.2);
        let table = expected_sequence_table(&truth, "q", 500);
        let closed = closed_form_fit(&table, "q").unwrap();
        let lsq = least_squares_fit(&table, "q", &closed.params, &LsqOptions::default()).unwrap();
        assert!(lsq.residual <= closed.residual);
    }

    #[test]
    fn least_squares_from_corner_is_finite() {
        let table = expected_sequence_table(&model(0.8, 0.3, 0.7, 0.4), "q", 300);
        let corner = model(1.0, 1.0, 1.0, PI);
        match least_squares_fit(&table, "q", &corner, &LsqOptions::default()) {
            Ok(fit) => {
                let p = fit.params;
                assert!([p.t(), p.u(), p.r(), p.theta(), fit.residual].iter().all(|v| v.is_finite()));
            }
            Err(EstimationError::NonConvergence { best_residual, .. }) => assert!(best_residual.is_finite()),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn least_squares_needs_data() {
        let mut t = FrequencyTable::new();
        t.insert("q", Group::Tur, Event::Topicality(Sign::Plus), Frequency::Counted { k: 1, n: 2 });
        assert!(matches!(
            least_squares_fit(&t, "q", &model(0.5, 0.5, 0.5, 1.0), &LsqOptions::default()),
            Err(EstimationError::InsufficientData(1))
        ));
    }

    #[test]
    fn sign_of_theta_is_unidentifiable() {
        let a = expected_sequence_table(&model(0.7, 0.6, 0.3, 0.9), "q", 10);
        let b = expected_sequence_table(&model(0.7, 0.6, 0.3, -0.9), "q", 10);
        for ((_, fa), (_, fb)) in a.iter().zip(b.iter()) {
            assert!((fa.p_hat().unwrap() - fb.p_hat().unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.025), 2.5);
        assert_eq!(percentile(&v, 0.975), 97.5);
        assert_eq!(percentile(&[4.0], 0.5), 4.0);
    }

    proptest! {
        #[test]
        fn closed_form_round_trip(
            t in 0.05..=1.0f64, u in 0.05..0.95f64, r in 0.05..0.95f64, theta in 0.05..(PI - 0.05),
            negate in any::<bool>(),
        ) {
            let truth = model(t, u, r, if negate { -theta } else { theta });
            let table = expected_sequence_table(&truth, "q", 100);
            let fit = closed_form_fit(&table, "q").unwrap();
            prop_assert!(!fit.clamped.theta);
            let p = fit.params;
            prop_assert!((p.t() - t).abs() < 1e-12 && (p.u() - u).abs() < 1e-12 && (p.r() - r).abs() < 1e-12);
            prop_assert!((p.theta() - theta).abs() < 1e-10, "{} vs {}", p.theta(), theta);
            let direct = cond_reliability_closed_form(u, r, theta).unwrap();
            let refit = cond_reliability_closed_form(p.u(), p.r(), p.theta()).unwrap();
            prop_assert!((direct - refit).abs() < 1e-12);
        }
    }
}
