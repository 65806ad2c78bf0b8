//! Two-dimensional complex Hilbert space for relevance judgements.
//!
//! Everything is expressed in the Topicality basis: `|T+⟩ = (1, 0)` and
//! `|T−⟩ = (0, 1)`. Understandability and Reliability are rotated bases
//! parameterised by an overlap with `|T+⟩` and, for Reliability, a relative
//! phase.
//!
//! ```text
//! |S⟩  = t|T+⟩ + √(1−t²)|T−⟩
//! |U+⟩ = u|T+⟩ + √(1−u²)|T−⟩          |U−⟩ = √(1−u²)|T+⟩ − u|T−⟩
//! |R+⟩ = r|T+⟩ + √(1−r²)e^{iθ}|T−⟩    |R−⟩ = √(1−r²)e^{−iθ}|T+⟩ − r|T−⟩
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance applied to caller-supplied vectors.
pub const INPUT_TOLERANCE: f64 = 1e-9;
/// Tolerance that constructed states, bases and projectors must meet.
pub const OUTPUT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("{name} = {value} is outside [0, 1]")]
    Domain { name: &'static str, value: f64 },
    #[error("state is not normalized (squared norm {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },
    #[error("matrix is not a projector: {0}")]
    NotProjector(&'static str),
}

/// A complex probability amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexAmp {
    pub re: f64,
    pub im: f64,
}

impl ComplexAmp {
    pub const ZERO: ComplexAmp = ComplexAmp { re: 0.0, im: 0.0 };
    pub const ONE: ComplexAmp = ComplexAmp { re: 1.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        ComplexAmp { re, im }
    }

    pub const fn real(re: f64) -> Self {
        ComplexAmp { re, im: 0.0 }
    }

    pub fn from_polar(magnitude: f64, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        ComplexAmp::new(magnitude * c, magnitude * s)
    }

    pub fn conj(self) -> Self {
        ComplexAmp::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn scale(self, k: f64) -> Self {
        ComplexAmp::new(self.re * k, self.im * k)
    }

    pub fn inv(self) -> Self {
        let d = self.norm_sqr();
        ComplexAmp::new(self.re / d, -self.im / d)
    }

    pub fn dist(self, other: ComplexAmp) -> f64 {
        (self - other).abs()
    }
}

impl Add for ComplexAmp {
    type Output = ComplexAmp;
    fn add(self, o: ComplexAmp) -> ComplexAmp {
        ComplexAmp::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for ComplexAmp {
    type Output = ComplexAmp;
    fn sub(self, o: ComplexAmp) -> ComplexAmp {
        ComplexAmp::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for ComplexAmp {
    type Output = ComplexAmp;
    fn mul(self, o: ComplexAmp) -> ComplexAmp {
        ComplexAmp::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

impl Neg for ComplexAmp {
    type Output = ComplexAmp;
    fn neg(self) -> ComplexAmp {
        ComplexAmp::new(-self.re, -self.im)
    }
}

impl fmt::Display for ComplexAmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im >= 0.0 {
            write!(f, "{}+{}i", self.re, self.im)
        } else {
            write!(f, "{}{}i", self.re, self.im)
        }
    }
}

/// Outcome of a yes/no judgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn from_bool(positive: bool) -> Sign {
        if positive {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for Sign {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+" => Ok(Sign::Plus),
            // U+2212 is accepted on input, output is always ASCII.
            "-" | "\u{2212}" => Ok(Sign::Minus),
            other => Err(format!("invalid sign {other:?}, expected \"+\" or \"-\"")),
        }
    }
}

/// A relevance dimension, i.e. one of the three measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Topicality,
    Understandability,
    Reliability,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Topicality,
        Dimension::Understandability,
        Dimension::Reliability,
    ];

    pub fn letter(self) -> char {
        match self {
            Dimension::Topicality => 'T',
            Dimension::Understandability => 'U',
            Dimension::Reliability => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Dimension> {
        match c {
            'T' => Some(Dimension::Topicality),
            'U' => Some(Dimension::Understandability),
            'R' => Some(Dimension::Reliability),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Dimension::from_letter), chars.next()) {
            (Some(d), None) => Ok(d),
            _ => Err(format!("invalid dimension {s:?}, expected T, U or R")),
        }
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), HilbertError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(HilbertError::Domain { name, value })
    }
}

/// `√(1 − x²)` with the radicand floored at zero.
pub(crate) fn complement(x: f64) -> f64 {
    (1.0 - x * x).max(0.0).sqrt()
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A unit vector in the Topicality basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CognitiveState {
    amp_plus: ComplexAmp,
    amp_minus: ComplexAmp,
}

impl CognitiveState {
    /// Builds a state, rejecting vectors whose squared norm is off by more
    /// than [`INPUT_TOLERANCE`].
    pub fn new(amp_plus: ComplexAmp, amp_minus: ComplexAmp) -> Result<Self, HilbertError> {
        let norm_sqr = amp_plus.norm_sqr() + amp_minus.norm_sqr();
        if !norm_sqr.is_finite() || (norm_sqr - 1.0).abs() > INPUT_TOLERANCE {
            return Err(HilbertError::NotNormalized { norm_sqr });
        }
        Ok(CognitiveState { amp_plus, amp_minus })
    }

    /// Constructor for vectors that are unit-norm by construction.
    pub(crate) const fn from_parts(amp_plus: ComplexAmp, amp_minus: ComplexAmp) -> Self {
        CognitiveState { amp_plus, amp_minus }
    }

    pub fn from_real(plus: f64, minus: f64) -> Result<Self, HilbertError> {
        Self::new(ComplexAmp::real(plus), ComplexAmp::real(minus))
    }

    pub const T_PLUS: CognitiveState = CognitiveState::from_parts(ComplexAmp::ONE, ComplexAmp::ZERO);
    pub const T_MINUS: CognitiveState =
        CognitiveState::from_parts(ComplexAmp::ZERO, ComplexAmp::ONE);

    pub fn amp_plus(&self) -> ComplexAmp {
        self.amp_plus
    }

    pub fn amp_minus(&self) -> ComplexAmp {
        self.amp_minus
    }

    pub fn amplitude(&self, sign: Sign) -> ComplexAmp {
        match sign {
            Sign::Plus => self.amp_plus,
            Sign::Minus => self.amp_minus,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_plus.norm_sqr() + self.amp_minus.norm_sqr()
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &CognitiveState) -> ComplexAmp {
        self.amp_plus.conj() * other.amp_plus + self.amp_minus.conj() * other.amp_minus
    }
}

/// `|S⟩ = t|T+⟩ + √(1−t²)|T−⟩`.
pub fn make_initial_state(t: f64) -> Result<CognitiveState, HilbertError> {
    check_unit("t", t)?;
    Ok(CognitiveState::from_parts(
        ComplexAmp::real(t),
        ComplexAmp::real(complement(t)),
    ))
}

/// An orthonormal pair of outcome vectors for one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBasis {
    pub dimension: Dimension,
    pub plus_vec: CognitiveState,
    pub minus_vec: CognitiveState,
    /// Amplitude of `|T+⟩` in the plus vector.
    pub overlap: f64,
    /// Relative phase carried by the `|T−⟩` component of the plus vector.
    pub phase: f64,
}

impl MeasurementBasis {
    pub fn vector(&self, sign: Sign) -> CognitiveState {
        match sign {
            Sign::Plus => self.plus_vec,
            Sign::Minus => self.minus_vec,
        }
    }

    pub fn projector(&self, sign: Sign) -> Projector {
        projector_of(&self.vector(sign))
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        (self.plus_vec.norm_sqr() - 1.0).abs() <= tol
            && (self.minus_vec.norm_sqr() - 1.0).abs() <= tol
            && self.plus_vec.inner(&self.minus_vec).abs() <= tol
    }
}

pub fn topicality_basis() -> MeasurementBasis {
    MeasurementBasis {
        dimension: Dimension::Topicality,
        plus_vec: CognitiveState::T_PLUS,
        minus_vec: CognitiveState::T_MINUS,
        overlap: 1.0,
        phase: 0.0,
    }
}

pub fn understandability_basis(u: f64) -> Result<MeasurementBasis, HilbertError> {
    check_unit("u", u)?;
    let s = complement(u);
    Ok(MeasurementBasis {
        dimension: Dimension::Understandability,
        plus_vec: CognitiveState::from_parts(ComplexAmp::real(u), ComplexAmp::real(s)),
        minus_vec: CognitiveState::from_parts(ComplexAmp::real(s), ComplexAmp::real(-u)),
        overlap: u,
        phase: 0.0,
    })
}

pub fn reliability_basis(r: f64, theta: f64) -> Result<MeasurementBasis, HilbertError> {
    check_unit("r", r)?;
    let theta = normalize_angle(theta);
    let s = complement(r);
    Ok(MeasurementBasis {
        dimension: Dimension::Reliability,
        plus_vec: CognitiveState::from_parts(ComplexAmp::real(r), ComplexAmp::from_polar(s, theta)),
        minus_vec: CognitiveState::from_parts(
            ComplexAmp::from_polar(s, -theta),
            ComplexAmp::real(-r),
        ),
        overlap: r,
        phase: theta,
    })
}

/// A dense 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    pub m: [[ComplexAmp; 2]; 2],
}

impl Matrix2 {
    pub const fn new(m: [[ComplexAmp; 2]; 2]) -> Self {
        Matrix2 { m }
    }

    pub fn from_real(rows: [[f64; 2]; 2]) -> Self {
        Matrix2::new([
            [ComplexAmp::real(rows[0][0]), ComplexAmp::real(rows[0][1])],
            [ComplexAmp::real(rows[1][0]), ComplexAmp::real(rows[1][1])],
        ])
    }

    pub const fn identity() -> Self {
        Matrix2::new([
            [ComplexAmp::ONE, ComplexAmp::ZERO],
            [ComplexAmp::ZERO, ComplexAmp::ONE],
        ])
    }

    pub const fn zero() -> Self {
        Matrix2::new([[ComplexAmp::ZERO; 2]; 2])
    }

    /// `|a⟩⟨b|`.
    pub fn outer(a: &CognitiveState, b: &CognitiveState) -> Self {
        let ka = [a.amp_plus, a.amp_minus];
        let kb = [b.amp_plus.conj(), b.amp_minus.conj()];
        let mut m = [[ComplexAmp::ZERO; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = ka[i] * kb[j];
            }
        }
        Matrix2::new(m)
    }

    pub fn get(&self, i: usize, j: usize) -> ComplexAmp {
        self.m[i][j]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        Matrix2::new([
            [m[0][0].conj(), m[1][0].conj()],
            [m[0][1].conj(), m[1][1].conj()],
        ])
    }

    pub fn trace(&self) -> ComplexAmp {
        self.m[0][0] + self.m[1][1]
    }

    pub fn det(&self) -> ComplexAmp {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Inverse via the adjugate, or `None` when `|det| <= min_det`.
    pub fn inverse(&self, min_det: f64) -> Option<Self> {
        let det = self.det();
        if det.abs() <= min_det {
            return None;
        }
        let k = det.inv();
        let m = &self.m;
        Some(Matrix2::new([
            [m[1][1] * k, -(m[0][1] * k)],
            [-(m[1][0] * k), m[0][0] * k],
        ]))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|z| z.scale(k))
    }

    fn map(&self, f: impl Fn(ComplexAmp) -> ComplexAmp) -> Self {
        let m = &self.m;
        Matrix2::new([[f(m[0][0]), f(m[0][1])], [f(m[1][0]), f(m[1][1])]])
    }

    fn zip(&self, o: &Matrix2, f: impl Fn(ComplexAmp, ComplexAmp) -> ComplexAmp) -> Self {
        let (a, b) = (&self.m, &o.m);
        Matrix2::new([
            [f(a[0][0], b[0][0]), f(a[0][1], b[0][1])],
            [f(a[1][0], b[1][0]), f(a[1][1], b[1][1])],
        ])
    }

    pub fn commutator(&self, o: &Matrix2) -> Self {
        *self * *o - *o * *self
    }

    /// Largest elementwise modulus of `self − o`.
    pub fn max_abs_diff(&self, o: &Matrix2) -> f64 {
        let d = *self - *o;
        d.m.iter().flatten().map(|z| z.abs()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// `⟨v| M |v⟩`.
    pub fn expectation(&self, v: &CognitiveState) -> ComplexAmp {
        let mv = self.apply(v);
        v.amp_plus.conj() * mv[0] + v.amp_minus.conj() * mv[1]
    }

    pub fn apply(&self, v: &CognitiveState) -> [ComplexAmp; 2] {
        let m = &self.m;
        [
            m[0][0] * v.amp_plus + m[0][1] * v.amp_minus,
            m[1][0] * v.amp_plus + m[1][1] * v.amp_minus,
        ]
    }
}

impl Add for Matrix2 {
    type Output = Matrix2;
    fn add(self, o: Matrix2) -> Matrix2 {
        self.zip(&o, |a, b| a + b)
    }
}

impl Sub for Matrix2 {
    type Output = Matrix2;
    fn sub(self, o: Matrix2) -> Matrix2 {
        self.zip(&o, |a, b| a - b)
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;
    fn mul(self, o: Matrix2) -> Matrix2 {
        let (a, b) = (&self.m, &o.m);
        let mut m = [[ComplexAmp::ZERO; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Matrix2::new(m)
    }
}

/// A Hermitian idempotent operator representing an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projector {
    m: Matrix2,
}

impl Projector {
    pub fn identity() -> Self {
        Projector { m: Matrix2::identity() }
    }

    pub fn zero() -> Self {
        Projector { m: Matrix2::zero() }
    }

    /// Validates an arbitrary matrix at [`INPUT_TOLERANCE`].
    pub fn try_from_matrix(m: Matrix2) -> Result<Self, HilbertError> {
        if !m.is_hermitian(INPUT_TOLERANCE) {
            return Err(HilbertError::NotProjector("not Hermitian"));
        }
        if (m * m).max_abs_diff(&m) > INPUT_TOLERANCE {
            return Err(HilbertError::NotProjector("not idempotent"));
        }
        Ok(Projector { m })
    }

    pub fn matrix(&self) -> &Matrix2 {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// Dimension of the event subspace.
    pub fn rank(&self) -> usize {
        self.trace().round().clamp(0.0, 2.0) as usize
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.m.is_hermitian(tol)
    }

    pub fn is_idempotent(&self, tol: f64) -> bool {
        (self.m * self.m).max_abs_diff(&self.m) <= tol
    }

    /// Probability of the event in state `v`.
    pub fn probability(&self, v: &CognitiveState) -> f64 {
        self.m.expectation(v).re
    }
}

/// `|v⟩⟨v|`.
pub fn projector_of(v: &CognitiveState) -> Projector {
    Projector { m: Matrix2::outer(v, v) }
}

/// `|⟨a|b⟩|²`.
pub fn transition_prob(a: &CognitiveState, b: &CognitiveState) -> f64 {
    a.inner(b).norm_sqr()
}
