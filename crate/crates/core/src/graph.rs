//! Maximal monotone graphs `Ψ = ∂j` on the real line and their convex calculus:
//! resolvents, Yosida approximations, Moreau envelopes, Legendre conjugates and
//! Fenchel–Young gaps.
//!
//! Every graph is normalized so that `0 ∈ Ψ(0)`, `j(0) = 0` and `j ≥ 0`.
//! Multivalued points appear only at the breakpoints of a
//! [`PiecewiseAffine`] graph, where jumps are filled with the closed interval
//! `[Ψ(r−), Ψ(r+)]`; pointwise evaluation returns the element of least
//! absolute value (the minimal section `Ψ°`).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;

/// Magnitude at which exponential families saturate instead of overflowing.
pub const SATURATION: f64 = 1e300;

const EXP_CUTOFF: f64 = 690.0;
const QUAD_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("non-finite input {0}")]
    NonFiniteInput(f64),
    #[error("root bracket not established after {0} expansions")]
    NoConvergence(usize),
    #[error("adaptive quadrature failed on [0, {0}]")]
    QuadratureFailure(f64),
    #[error("potential is +inf at {0}: D(Ψ) is not the whole line")]
    DomainViolation(f64),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Yosida parameter together with the scalar solver controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub lambda: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Regularization {
    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_tolerance(lambda, 1e-12, 200)
    }

    pub fn with_tolerance(lambda: f64, solver_tol: f64, max_iter: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(GraphError::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if !(solver_tol > 0.0) {
            return Err(GraphError::InvalidParameter(format!(
                "solver_tol must be > 0, got {solver_tol}"
            )));
        }
        if max_iter == 0 {
            return Err(GraphError::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(Self { lambda, solver_tol, max_iter })
    }
}

/// A pointwise evaluation that may have hit the saturation guard.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub overflow: bool,
}

/// One affine branch `s ↦ offset + slope·s` of a piecewise graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch {
    pub offset: f64,
    pub slope: f64,
}

impl AffineBranch {
    fn eval(&self, s: f64) -> f64 {
        self.offset + self.slope * s
    }

    // ∫_a^b (offset + slope·t) dt
    fn integral(&self, a: f64, b: f64) -> f64 {
        self.offset * (b - a) + 0.5 * self.slope * (b * b - a * a)
    }
}

/// Monotone piecewise-affine function with finitely many jumps, filled into
/// a maximal monotone graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseAffine {
    breakpoints: Vec<f64>,
    branches: Vec<AffineBranch>,
}

impl PiecewiseAffine {
    /// `branches[i]` is active on `(breakpoints[i-1], breakpoints[i])`, so there
    /// must be exactly one more branch than breakpoints.
    pub fn new(breakpoints: Vec<f64>, branches: Vec<AffineBranch>) -> Result<Self> {
        if branches.len() != breakpoints.len() + 1 {
            return Err(GraphError::InvalidGraph(format!(
                "{} breakpoints need {} branches, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                branches.len()
            )));
        }
        if breakpoints.iter().any(|r| !r.is_finite())
            || branches.iter().any(|b| !b.offset.is_finite() || !b.slope.is_finite())
        {
            return Err(GraphError::InvalidGraph("non-finite piecewise data".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::InvalidGraph("breakpoints must be strictly increasing".into()));
        }
        if branches.iter().any(|b| b.slope < 0.0) {
            return Err(GraphError::InvalidGraph("branch slopes must be nonnegative".into()));
        }
        let graph = Self { breakpoints, branches };
        for i in 0..graph.breakpoints.len() {
            let (lo, hi) = graph.jump(i);
            if lo > hi {
                return Err(GraphError::InvalidGraph(format!(
                    "downward jump at r = {}: Ψ(r−) = {lo} > Ψ(r+) = {hi}",
                    graph.breakpoints[i]
                )));
            }
        }
        let (lo, hi) = graph.interval(0.0);
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(GraphError::InvalidGraph(format!(
                "0 must belong to Ψ(0), got [{lo}, {hi}]"
            )));
        }
        Ok(graph)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn branches(&self) -> &[AffineBranch] {
        &self.branches
    }

    fn jump(&self, i: usize) -> (f64, f64) {
        let r = self.breakpoints[i];
        (self.branches[i].eval(r), self.branches[i + 1].eval(r))
    }

    fn locate(&self, s: f64) -> Locus {
        let idx = self.breakpoints.partition_point(|&r| r < s);
        if idx < self.breakpoints.len() && self.breakpoints[idx] == s {
            Locus::Breakpoint(idx)
        } else {
            Locus::Piece(idx)
        }
    }

    fn interval(&self, s: f64) -> (f64, f64) {
        match self.locate(s) {
            Locus::Breakpoint(i) => self.jump(i),
            Locus::Piece(i) => {
                let v = self.branches[i].eval(s);
                (v, v)
            }
        }
    }

    fn resolvent(&self, lambda: f64, u: f64) -> f64 {
        for (i, &r) in self.breakpoints.iter().enumerate() {
            let (lo, hi) = self.jump(i);
            if u < r + lambda * lo {
                // u lies on the piece left of r.
                let b = self.branches[i];
                return (u - lambda * b.offset) / (1.0 + lambda * b.slope);
            }
            if u <= r + lambda * hi {
                return r;
            }
        }
        let b = self.branches[self.branches.len() - 1];
        (u - lambda * b.offset) / (1.0 + lambda * b.slope)
    }

    fn primitive(&self, y: f64) -> f64 {
        // ∫_0^y of the minimal section; the multivalued points are a null set.
        let (a, b, sign) = if y >= 0.0 { (0.0, y, 1.0) } else { (y, 0.0, -1.0) };
        let mut total = 0.0;
        let mut left = a;
        for (i, branch) in self.branches.iter().enumerate() {
            let right_edge = self.breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
            let left_edge = if i == 0 { f64::NEG_INFINITY } else { self.breakpoints[i - 1] };
            let lo = left.max(left_edge);
            let hi = b.min(right_edge);
            if hi > lo {
                total += branch.integral(lo, hi);
                left = hi;
            }
        }
        sign * total
    }

    /// Some `y` with `p ∈ Ψ(y)`, or `None` when `p` is outside the range.
    fn inverse(&self, p: f64) -> Option<f64> {
        for (i, &r) in self.breakpoints.iter().enumerate() {
            let (lo, hi) = self.jump(i);
            if p < lo {
                return piece_inverse(self.branches[i], p, self.piece_bounds(i));
            }
            if p <= hi {
                return Some(r);
            }
        }
        let last = self.branches.len() - 1;
        piece_inverse(self.branches[last], p, self.piece_bounds(last))
    }

    fn piece_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.breakpoints[i - 1] };
        let hi = self.breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    fn inverse_slope(&self, s: f64) -> f64 {
        match self.locate(s) {
            Locus::Breakpoint(_) => 0.0,
            Locus::Piece(i) => {
                let slope = self.branches[i].slope;
                if slope > 0.0 {
                    1.0 / slope
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn is_odd(&self) -> bool {
        let n = self.breakpoints.len();
        (0..n).all(|i| self.breakpoints[i] == -self.breakpoints[n - 1 - i])
            && (0..=n).all(|i| {
                let a = self.branches[i];
                let b = self.branches[n - i];
                a.slope == b.slope && a.offset == -b.offset
            })
    }
}

fn piece_inverse(branch: AffineBranch, p: f64, (lo, hi): (f64, f64)) -> Option<f64> {
    if branch.slope > 0.0 {
        let y = (p - branch.offset) / branch.slope;
        Some(y.clamp(lo, hi))
    } else if p == branch.offset {
        // Flat piece: every point of the piece is a preimage; pick a finite one.
        if lo.is_finite() {
            Some(lo)
        } else if hi.is_finite() {
            Some(hi)
        } else {
            Some(0.0)
        }
    } else {
        None
    }
}

enum Locus {
    Breakpoint(usize),
    Piece(usize),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied continuous nondecreasing map with an optional closed-form
/// potential.
#[derive(Clone)]
pub struct CustomGraph {
    name: String,
    psi: ScalarFn,
    potential: Option<ScalarFn>,
}

impl fmt::Debug for CustomGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomGraph")
            .field("name", &self.name)
            .field("closed_form_potential", &self.potential.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum GraphKind {
    /// `Ψ(s) = |s|^{r-1} s`
    PowerLaw { r: f64 },
    /// `Ψ(s) = sign(s) √|s|`
    FastDiffusion,
    /// `Ψ(s) = sign(s) (log(μ+|s|) − log μ)`
    Logarithmic { mu: f64 },
    /// `Ψ(s) = sign(s) (exp(a|s|^p) − 1)`
    ExponentialPower { a: f64, p: f64 },
    PiecewiseWithJumps(PiecewiseAffine),
    Custom(CustomGraph),
}

/// A maximal monotone graph with its normalized convex potential.
#[derive(Clone, Debug)]
pub struct MonotoneGraph {
    kind: GraphKind,
    potential_shift: f64,
}

impl MonotoneGraph {
    pub fn power_law(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(GraphError::InvalidGraph(format!("power law exponent must be > 0, got {r}")));
        }
        Ok(Self::from_kind(GraphKind::PowerLaw { r }))
    }

    pub fn linear() -> Self {
        Self::from_kind(GraphKind::PowerLaw { r: 1.0 })
    }

    pub fn fast_diffusion() -> Self {
        Self::from_kind(GraphKind::FastDiffusion)
    }

    pub fn logarithmic(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(GraphError::InvalidGraph(format!("mu must be > 0, got {mu}")));
        }
        Ok(Self::from_kind(GraphKind::Logarithmic { mu }))
    }

    pub fn exponential_power(a: f64, p: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(p >= 1.0 && p.is_finite()) {
            return Err(GraphError::InvalidGraph(format!(
                "exponential power needs a > 0 and p >= 1, got a = {a}, p = {p}"
            )));
        }
        Ok(Self::from_kind(GraphKind::ExponentialPower { a, p }))
    }

    pub fn piecewise(breakpoints: Vec<f64>, branches: Vec<AffineBranch>) -> Result<Self> {
        let pw = PiecewiseAffine::new(breakpoints, branches)?;
        Ok(Self::from_kind(GraphKind::PiecewiseWithJumps(pw)))
    }

    /// Heaviside graph: 0 on s<0, [0,1] at 0, 1 on s>0.
    pub fn step() -> Self {
        Self::piecewise(
            vec![0.0],
            vec![AffineBranch { offset: 0.0, slope: 0.0 }, AffineBranch { offset: 1.0, slope: 0.0 }],
        )
        .expect("step graph is valid")
    }

    /// Subdifferential of `|y|`.
    pub fn sign() -> Self {
        Self::piecewise(
            vec![0.0],
            vec![AffineBranch { offset: -1.0, slope: 0.0 }, AffineBranch { offset: 1.0, slope: 0.0 }],
        )
        .expect("sign graph is valid")
    }

    /// `Ψ(s) = s` for s<0 and `s + 1` for s>0, with `Ψ(0) = [0, 1]`.
    pub fn shifted_identity_jump() -> Self {
        Self::piecewise(
            vec![0.0],
            vec![AffineBranch { offset: 0.0, slope: 1.0 }, AffineBranch { offset: 1.0, slope: 1.0 }],
        )
        .expect("jump graph is valid")
    }

    /// Custom continuous nondecreasing `psi` with `psi(0) = 0`.
    pub fn custom<F>(name: impl Into<String>, psi: F, potential: Option<ScalarFn>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        let psi: ScalarFn = Arc::new(psi);
        let at_zero = psi(0.0);
        if at_zero != 0.0 {
            return Err(GraphError::InvalidGraph(format!("{name}: psi(0) = {at_zero}, expected 0")));
        }
        // Sampled monotonicity screen.
        let mut prev = f64::NEG_INFINITY;
        for i in -200..=200 {
            let s = f64::from(i) * 0.05;
            let v = psi(s);
            if v < prev {
                return Err(GraphError::InvalidGraph(format!("{name}: psi decreases near s = {s}")));
            }
            prev = v;
        }
        let shift = potential.as_ref().map(|j| j(0.0)).unwrap_or(0.0);
        Ok(Self {
            kind: GraphKind::Custom(CustomGraph { name, psi, potential }),
            potential_shift: shift,
        })
    }

    fn from_kind(kind: GraphKind) -> Self {
        Self { kind, potential_shift: 0.0 }
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            GraphKind::PowerLaw { r } => format!("power_law(r={r})"),
            GraphKind::FastDiffusion => "fast_diffusion".into(),
            GraphKind::Logarithmic { mu } => format!("logarithmic(mu={mu})"),
            GraphKind::ExponentialPower { a, p } => format!("exponential_power(a={a},p={p})"),
            GraphKind::PiecewiseWithJumps(pw) => {
                format!("piecewise({} jumps)", pw.breakpoints.len())
            }
            GraphKind::Custom(c) => format!("custom({})", c.name),
        }
    }

    /// True when `Ψ(−s) = −Ψ(s)`, which lets scalar solves work on `|u|`.
    pub fn is_odd(&self) -> bool {
        match &self.kind {
            GraphKind::PiecewiseWithJumps(pw) => pw.is_odd(),
            GraphKind::Custom(_) => false,
            _ => true,
        }
    }

    /// Built-in odd family evaluated on `s ≥ 0`.
    fn odd_branch(&self, s: f64) -> Evaluation {
        match self.kind {
            GraphKind::PowerLaw { r } => Evaluation { value: s.powf(r), overflow: false },
            GraphKind::FastDiffusion => Evaluation { value: s.sqrt(), overflow: false },
            GraphKind::Logarithmic { mu } => Evaluation { value: (s / mu).ln_1p(), overflow: false },
            GraphKind::ExponentialPower { a, p } => {
                let x = a * s.powf(p);
                if x > EXP_CUTOFF {
                    Evaluation { value: SATURATION, overflow: true }
                } else {
                    Evaluation { value: x.exp_m1(), overflow: false }
                }
            }
            _ => unreachable!("odd_branch called on a non-parametric family"),
        }
    }

    // Derivative of the odd branch at s ≥ 0 (may be +inf).
    fn odd_slope(&self, s: f64) -> f64 {
        match self.kind {
            GraphKind::PowerLaw { r } => {
                if r == 1.0 {
                    1.0
                } else if s == 0.0 {
                    if r < 1.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    r * s.powf(r - 1.0)
                }
            }
            GraphKind::FastDiffusion => {
                if s == 0.0 {
                    f64::INFINITY
                } else {
                    0.5 / s.sqrt()
                }
            }
            GraphKind::Logarithmic { mu } => 1.0 / (mu + s),
            GraphKind::ExponentialPower { a, p } => {
                let x = a * s.powf(p);
                if x > EXP_CUTOFF {
                    SATURATION
                } else if p == 1.0 {
                    a * x.exp()
                } else if s == 0.0 {
                    0.0
                } else {
                    a * p * s.powf(p - 1.0) * x.exp()
                }
            }
            _ => unreachable!(),
        }
    }

    /// Minimal section `Ψ°(s)` with the saturation flag.
    pub fn psi_checked(&self, s: f64) -> Evaluation {
        match &self.kind {
            GraphKind::PiecewiseWithJumps(pw) => {
                let (lo, hi) = pw.interval(s);
                Evaluation { value: least_abs(lo, hi), overflow: false }
            }
            GraphKind::Custom(c) => {
                let v = (c.psi)(s);
                if v.is_finite() {
                    Evaluation { value: v, overflow: false }
                } else {
                    Evaluation { value: v.signum() * SATURATION, overflow: true }
                }
            }
            _ => {
                let e = self.odd_branch(s.abs());
                Evaluation { value: s.signum() * e.value, overflow: e.overflow }
            }
        }
    }

    /// Minimal section `Ψ°(s)`.
    pub fn psi(&self, s: f64) -> f64 {
        let v = self.psi_checked(s).value;
        if s == 0.0 {
            0.0
        } else {
            v
        }
    }

    /// The closed interval `Ψ(s)`.
    pub fn value_interval(&self, s: f64) -> (f64, f64) {
        match &self.kind {
            GraphKind::PiecewiseWithJumps(pw) => pw.interval(s),
            _ => {
                let v = self.psi(s);
                (v, v)
            }
        }
    }

    /// Whether `p ∈ Ψ(s)` up to `tol`.
    pub fn contains(&self, s: f64, p: f64, tol: f64) -> bool {
        let (lo, hi) = self.value_interval(s);
        p >= lo - tol && p <= hi + tol
    }

    /// `1/Ψ'(v)` on single-valued branches, 0 where Ψ is vertical.
    fn inverse_slope(&self, v: f64) -> f64 {
        match &self.kind {
            GraphKind::PiecewiseWithJumps(pw) => pw.inverse_slope(v),
            GraphKind::Custom(c) => {
                let h = 1e-6 * v.abs().max(1.0);
                let d = ((c.psi)(v + h) - (c.psi)(v - h)) / (2.0 * h);
                if d > 0.0 {
                    1.0 / d
                } else {
                    f64::INFINITY
                }
            }
            _ => {
                let d = self.odd_slope(v.abs());
                if d.is_infinite() {
                    0.0
                } else if d > 0.0 {
                    1.0 / d
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `(1 + λΨ)^{-1} u`.
    pub fn resolvent(&self, reg: &Regularization, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(GraphError::NonFiniteInput(u));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let lambda = reg.lambda;
        match &self.kind {
            GraphKind::PowerLaw { r } if *r == 1.0 => Ok(u / (1.0 + lambda)),
            GraphKind::FastDiffusion => {
                // v + λ sign(v)√|v| = u  ⇒  √|v| = (−λ + √(λ² + 4|u|)) / 2
                let a = u.abs();
                let disc = (lambda * lambda + 4.0 * a).sqrt();
                // Stable form of (disc − λ)/2.
                let w = 2.0 * a / (disc + lambda);
                Ok(u.signum() * w * w)
            }
            GraphKind::PiecewiseWithJumps(pw) => Ok(pw.resolvent(lambda, u)),
            GraphKind::Custom(c) => custom_resolvent(&c.psi, reg, u),
            _ => {
                let a = u.abs();
                let v = rtsafe(|v| {
                    let e = self.odd_branch(v);
                    (v + lambda * e.value - a, 1.0 + lambda * self.odd_slope(v))
                }, 0.0, a, guess(a, lambda * self.odd_branch(a).value), reg.max_iter)?;
                Ok(u.signum() * v)
            }
        }
    }

    /// `Ψ_λ(u) = (u − (1+λΨ)^{-1}u) / λ`.
    pub fn yosida(&self, reg: &Regularization, u: f64) -> Result<f64> {
        let v = self.resolvent(reg, u)?;
        Ok((u - v) / reg.lambda)
    }

    /// `Ψ_λ(u)` together with its derivative (a generalized derivative at kinks),
    /// and the resolvent value.
    pub fn yosida_with_slope(&self, reg: &Regularization, u: f64) -> Result<YosidaPoint> {
        let v = self.resolvent(reg, u)?;
        let value = (u - v) / reg.lambda;
        let inv = self.inverse_slope(v);
        let slope = if inv.is_infinite() { 0.0 } else { 1.0 / (reg.lambda + inv) };
        Ok(YosidaPoint { resolvent: v, value, slope })
    }

    /// `j(y) = ∫_0^y Ψ°(r) dr` with the saturation flag.
    pub fn potential_checked(&self, y: f64) -> Result<Evaluation> {
        if !y.is_finite() {
            return Err(GraphError::NonFiniteInput(y));
        }
        if y == 0.0 {
            return Ok(Evaluation { value: 0.0, overflow: false });
        }
        let a = y.abs();
        let plain = |value: f64| Ok(Evaluation { value, overflow: false });
        match &self.kind {
            GraphKind::PowerLaw { r } => plain(a.powf(r + 1.0) / (r + 1.0)),
            GraphKind::FastDiffusion => plain(2.0 / 3.0 * a * a.sqrt()),
            GraphKind::Logarithmic { mu } => plain((mu + a) * (a / mu).ln_1p() - a),
            GraphKind::ExponentialPower { a: rate, p } => {
                let x = rate * a.powf(*p);
                if x > EXP_CUTOFF {
                    return Ok(Evaluation { value: SATURATION, overflow: true });
                }
                if *p == 1.0 {
                    if x < 1e-3 {
                        // Series of (e^x − 1 − x)/rate avoids cancellation.
                        plain(x * x / rate * (0.5 + x / 6.0 + x * x / 24.0 + x * x * x / 120.0))
                    } else {
                        plain(x.exp_m1() / rate - a)
                    }
                } else {
                    let rate = *rate;
                    let p = *p;
                    quadrature::integrate(|s| (rate * s.powf(p)).exp_m1(), 0.0, a, QUAD_TOL)
                        .map(|value| Evaluation { value, overflow: false })
                        .ok_or(GraphError::QuadratureFailure(y))
                }
            }
            GraphKind::PiecewiseWithJumps(pw) => plain(pw.primitive(y)),
            GraphKind::Custom(c) => {
                let value = match &c.potential {
                    Some(j) => j(y) - self.potential_shift,
                    None => {
                        let psi = &c.psi;
                        if !psi(y).is_finite() {
                            return Err(GraphError::DomainViolation(y));
                        }
                        quadrature::integrate(|s| psi(s), 0.0, y, QUAD_TOL)
                            .ok_or(GraphError::QuadratureFailure(y))?
                    }
                };
                if value.is_infinite() {
                    return Err(GraphError::DomainViolation(y));
                }
                plain(value)
            }
        }
    }

    pub fn potential(&self, y: f64) -> Result<f64> {
        self.potential_checked(y).map(|e| e.value)
    }

    /// Some `y` with `p ∈ Ψ(y)`; `None` when `p` lies outside the range of Ψ.
    pub fn inverse(&self, p: f64) -> Result<Option<f64>> {
        if !p.is_finite() {
            return Err(GraphError::NonFiniteInput(p));
        }
        if p == 0.0 {
            return Ok(Some(0.0));
        }
        let q = p.abs();
        let s = p.signum();
        let y = match &self.kind {
            GraphKind::PowerLaw { r } => q.powf(1.0 / r),
            GraphKind::FastDiffusion => q * q,
            GraphKind::Logarithmic { mu } => mu * q.exp_m1(),
            GraphKind::ExponentialPower { a, p: power } => (q.ln_1p() / a).powf(1.0 / power),
            GraphKind::PiecewiseWithJumps(pw) => return Ok(pw.inverse(p)),
            GraphKind::Custom(c) => return custom_inverse(&c.psi, p, 200).map(Some),
        };
        Ok(Some(s * y))
    }

    /// Legendre conjugate `j*(p) = sup_y (py − j(y))`; `+inf` outside `R(Ψ)`.
    pub fn conjugate(&self, p: f64) -> Result<f64> {
        if !p.is_finite() {
            return Err(GraphError::NonFiniteInput(p));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        let q = p.abs();
        match self.kind {
            GraphKind::PowerLaw { r } => return Ok(r / (r + 1.0) * q.powf((r + 1.0) / r)),
            GraphKind::FastDiffusion => return Ok(q * q * q / 3.0),
            GraphKind::Logarithmic { mu } => {
                // μ(e^q − 1 − q)
                let value = if q < 1e-3 {
                    mu * q * q * (0.5 + q / 6.0 + q * q / 24.0)
                } else {
                    mu * (q.exp_m1() - q)
                };
                return Ok(value);
            }
            GraphKind::ExponentialPower { a, p: power } if power == 1.0 => {
                // ((1+q) ln(1+q) − q) / a
                let l = q.ln_1p();
                let value = if q < 1e-3 {
                    q * q * (0.5 - q / 6.0 + q * q / 12.0) / a
                } else {
                    ((1.0 + q) * l - q) / a
                };
                return Ok(value);
            }
            _ => {}
        }
        match self.inverse(p)? {
            None => Ok(f64::INFINITY),
            Some(y) => {
                let value = p * y - self.potential(y)?;
                Ok(value.max(0.0))
            }
        }
    }

    /// Moreau envelope `j_λ(u) = j(J_λ u) + |u − J_λ u|² / 2λ`.
    pub fn moreau_envelope(&self, reg: &Regularization, u: f64) -> Result<f64> {
        let v = self.resolvent(reg, u)?;
        let d = u - v;
        Ok(self.potential(v)? + d * d / (2.0 * reg.lambda))
    }

    /// `j(y) + j*(p) − py`, nonnegative and zero exactly on the graph.
    pub fn fenchel_gap(&self, y: f64, p: f64) -> Result<f64> {
        let conj = self.conjugate(p)?;
        if conj.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(self.potential(y)? + conj - p * y)
    }

    /// Empirical growth and symmetry screen over a positive increasing grid.
    pub fn check_h3(&self, s_grid: &[f64]) -> Result<H3Report> {
        if s_grid.len() < 2 {
            return Err(GraphError::InvalidParameter("grid needs at least two points".into()));
        }
        if s_grid.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || s_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(GraphError::InvalidParameter(
                "grid must be positive and strictly increasing".into(),
            ));
        }
        let mut overflow = false;
        let mut pot = |y: f64| -> Result<f64> {
            let e = self.potential_checked(y)?;
            if e.value.is_infinite() {
                return Err(GraphError::DomainViolation(y));
            }
            overflow |= e.overflow;
            Ok(if e.overflow { f64::INFINITY } else { e.value })
        };
        let tail = &s_grid[s_grid.len() / 2..];
        let mut sup_ratio: f64 = 0.0;
        let mut j_pos = Vec::with_capacity(tail.len());
        let mut j_neg = Vec::with_capacity(tail.len());
        for &s in s_grid {
            // Every grid point must be in the effective domain.
            pot(s)?;
            pot(-s)?;
        }
        for &s in tail {
            let jp = pot(s)?;
            let jn = pot(-s)?;
            let ratio = if jp.is_infinite() && jn.is_infinite() {
                1.0
            } else if jp == 0.0 {
                f64::INFINITY
            } else {
                jn / jp
            };
            sup_ratio = sup_ratio.max(ratio);
            j_pos.push(jp / s);
            j_neg.push(jn / s);
        }
        let mut c_pos = Vec::with_capacity(tail.len());
        let mut c_neg = Vec::with_capacity(tail.len());
        for &s in tail {
            c_pos.push(self.conjugate(s)? / s);
            c_neg.push(self.conjugate(-s)? / s);
        }
        let surjective = increasing(&j_pos) && increasing(&j_neg);
        let full_domain = increasing(&c_pos) && increasing(&c_neg);
        Ok(H3Report { sup_ratio, surjective, full_domain, overflow })
    }
}

/// Result of [`MonotoneGraph::yosida_with_slope`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YosidaPoint {
    pub resolvent: f64,
    pub value: f64,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct H3Report {
    /// Empirical `sup j(−s)/j(s)` over the upper half of the grid.
    pub sup_ratio: f64,
    /// Superlinear growth of `j` (equivalent to `R(Ψ) = ℝ`).
    pub surjective: bool,
    /// Superlinear growth of `j*` (equivalent to `D(Ψ) = ℝ`).
    pub full_domain: bool,
    pub overflow: bool,
}

// Strictly increasing, with +inf treated as dominating.
fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0] || w[1].is_infinite())
}

fn least_abs(lo: f64, hi: f64) -> f64 {
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else if lo > 0.0 {
        lo
    } else {
        hi
    }
}

fn guess(a: f64, lambda_psi_a: f64) -> f64 {
    let g = a - lambda_psi_a;
    if g > 0.0 && g < a {
        g
    } else {
        0.5 * a
    }
}

/// Safeguarded Newton for an increasing `f` with `f(lo) ≤ 0 ≤ f(hi)`.
fn rtsafe<F>(f: F, mut lo: f64, mut hi: f64, x0: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (flo, _) = f(lo);
    if flo >= 0.0 {
        return Ok(lo);
    }
    let (fhi, _) = f(hi);
    if fhi <= 0.0 {
        return Ok(hi);
    }
    let mut x = x0.clamp(lo, hi);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let (mut fx, mut df) = f(x);
    for _ in 0..max_iter {
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton_ok = df.is_finite() && df > 0.0 && {
            let next = x - fx / df;
            next > lo && next < hi && (2.0 * fx).abs() <= (dx_old * df).abs()
        };
        dx_old = dx;
        if newton_ok {
            dx = fx / df;
            x -= dx;
        } else {
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        }
        if dx.abs() <= 2.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
            || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
        {
            return Ok(x);
        }
        let next = f(x);
        fx = next.0;
        df = next.1;
    }
    Ok(x)
}

/// Bisection with Illinois acceleration for an increasing `f` on a bracket.
fn bracketed_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, max_iter: usize) -> f64 {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    let mut side = 0i8;
    for _ in 0..max_iter.max(200) {
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let mut x = if flo.is_finite() && fhi.is_finite() && fhi != flo {
            (lo * fhi - hi * flo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (lo + hi)
}

fn custom_resolvent(psi: &ScalarFn, reg: &Regularization, u: f64) -> Result<f64> {
    let lambda = reg.lambda;
    let phi = |v: f64| v + lambda * psi(v) - u;
    let spread = lambda * psi(u).abs() + 1.0;
    let mut lo = u - spread;
    let mut hi = u + spread;
    let mut expansions = 0;
    while !(phi(lo) <= 0.0 && phi(hi) >= 0.0) {
        expansions += 1;
        if expansions > reg.max_iter {
            return Err(GraphError::NoConvergence(expansions));
        }
        let width = hi - lo;
        lo -= width;
        hi += width;
    }
    Ok(bracketed_root(phi, lo, hi, reg.max_iter))
}

fn custom_inverse(psi: &ScalarFn, p: f64, max_iter: usize) -> Result<f64> {
    let f = |y: f64| psi(y) - p;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while !(f(lo) <= 0.0 && f(hi) >= 0.0) {
        expansions += 1;
        if expansions > max_iter {
            return Err(GraphError::NoConvergence(expansions));
        }
        lo *= 2.0;
        hi *= 2.0;
    }
    Ok(bracketed_root(f, lo, hi, max_iter))
}

/// Declarative graph description used by experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphSpec {
    Linear,
    PowerLaw { r: f64 },
    FastDiffusion,
    Logarithmic { mu: f64 },
    ExponentialPower { a: f64, p: f64 },
    Piecewise { breakpoints: Vec<f64>, branches: Vec<AffineBranch> },
    Step,
    Sign,
}

impl GraphSpec {
    pub fn build(&self) -> Result<MonotoneGraph> {
        match self {
            GraphSpec::Linear => Ok(MonotoneGraph::linear()),
            GraphSpec::PowerLaw { r } => MonotoneGraph::power_law(*r),
            GraphSpec::FastDiffusion => Ok(MonotoneGraph::fast_diffusion()),
            GraphSpec::Logarithmic { mu } => MonotoneGraph::logarithmic(*mu),
            GraphSpec::ExponentialPower { a, p } => MonotoneGraph::exponential_power(*a, *p),
            GraphSpec::Piecewise { breakpoints, branches } => {
                MonotoneGraph::piecewise(breakpoints.clone(), branches.clone())
            }
            GraphSpec::Step => Ok(MonotoneGraph::step()),
            GraphSpec::Sign => Ok(MonotoneGraph::sign()),
        }
    }
}

/// One entry of the built-in family catalog.
#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub family: &'static str,
    pub psi: &'static str,
    pub potential: Option<&'static str>,
    pub h3: &'static str,
    pub note: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            family: "power_law",
            psi: "Ψ(s) = |s|^(r-1) s, r > 0",
            potential: Some("j(y) = |y|^(r+1) / (r+1)"),
            h3: "satisfied (even potential)",
            note: "r = 1 is the linear heat graph (`linear`); r > 1 porous medium; r < 1 fast diffusion",
        },
        CatalogEntry {
            family: "fast_diffusion",
            psi: "Ψ(s) = sign(s) √|s|",
            potential: Some("j(y) = (2/3)|y|^(3/2)"),
            h3: "satisfied (even potential)",
            note: "plasma fast diffusion",
        },
        CatalogEntry {
            family: "logarithmic",
            psi: "Ψ(s) = sign(s) (log(μ+|s|) − log μ), μ > 0",
            potential: Some("j(y) = (μ+|y|) log(1+|y|/μ) − |y|"),
            h3: "satisfied (even potential)",
            note: "logarithmic diffusion",
        },
        CatalogEntry {
            family: "exponential_power",
            psi: "Ψ(s) = sign(s) (exp(a|s|^p) − 1), a > 0, p >= 1",
            potential: Some("p = 1: j(y) = (exp(a|y|) − 1)/a − |y|; p > 1: adaptive quadrature"),
            h3: "satisfied (even potential, exponential growth allowed)",
            note: "values saturate at 1e300 with an overflow flag",
        },
        CatalogEntry {
            family: "piecewise",
            psi: "Ψ(s) = offset_i + slope_i s between breakpoints r_1 < … < r_N",
            potential: Some("j(y) = exact integral of the affine branches"),
            h3: "satisfied when the outer slopes are positive; bounded range otherwise",
            note: "jumps are filled: Ψ(r_i) = [Ψ(r_i−), Ψ(r_i+)]; `step` and `sign` are presets",
        },
        CatalogEntry {
            family: "custom",
            psi: "user-supplied continuous nondecreasing map with Ψ(0) = 0",
            potential: None,
            h3: "checked empirically with check_h3",
            note: "programmatic only; potential by adaptive quadrature unless supplied",
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(lambda: f64) -> Regularization {
        Regularization::new(lambda).unwrap()
    }

    fn builtins() -> Vec<MonotoneGraph> {
        vec![
            MonotoneGraph::linear(),
            MonotoneGraph::power_law(3.0).unwrap(),
            MonotoneGraph::power_law(0.4).unwrap(),
            MonotoneGraph::fast_diffusion(),
            MonotoneGraph::logarithmic(0.5).unwrap(),
            MonotoneGraph::exponential_power(1.0, 1.0).unwrap(),
            MonotoneGraph::exponential_power(0.5, 2.0).unwrap(),
            MonotoneGraph::step(),
            MonotoneGraph::sign(),
            MonotoneGraph::shifted_identity_jump(),
        ]
    }

    #[test]
    fn resolvent_examples() {
        let lin = MonotoneGraph::linear();
        assert_eq!(lin.resolvent(&reg(1.0), 2.0).unwrap(), 1.0);
        let cubic = MonotoneGraph::power_law(3.0).unwrap();
        assert!((cubic.resolvent(&reg(1.0), 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(MonotoneGraph::step().resolvent(&reg(1.0), 0.5).unwrap(), 0.0);
        for g in builtins() {
            assert_eq!(g.resolvent(&reg(0.3), 0.0).unwrap(), 0.0, "{}", g.name());
        }
    }

    #[test]
    fn resolvent_rejects_non_finite() {
        let g = MonotoneGraph::fast_diffusion();
        assert!(matches!(g.resolvent(&reg(1.0), f64::NAN), Err(GraphError::NonFiniteInput(_))));
    }

    #[test]
    fn yosida_examples() {
        assert_eq!(MonotoneGraph::linear().yosida(&reg(1.0), 2.0).unwrap(), 1.0);
        assert_eq!(MonotoneGraph::step().yosida(&reg(1.0), 0.5).unwrap(), 0.5);
    }

    #[test]
    fn potential_examples() {
        assert_eq!(MonotoneGraph::linear().potential(2.0).unwrap(), 2.0);
        for g in builtins() {
            assert_eq!(g.potential(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn conjugate_examples() {
        assert!((MonotoneGraph::linear().conjugate(3.0).unwrap() - 4.5).abs() < 1e-14);
        for g in builtins() {
            assert_eq!(g.conjugate(0.0).unwrap(), 0.0);
        }
        // Step graph has range [0, 1]; outside it the conjugate is +inf.
        assert!(MonotoneGraph::step().conjugate(1.5).unwrap().is_infinite());
        assert_eq!(MonotoneGraph::step().conjugate(0.4).unwrap(), 0.0);
    }

    #[test]
    fn fenchel_gap_examples() {
        let lin = MonotoneGraph::linear();
        assert!(lin.fenchel_gap(3.0, 3.0).unwrap().abs() < 1e-14);
        assert!((lin.fenchel_gap(1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(MonotoneGraph::step().fenchel_gap(0.0, 0.7).unwrap().abs() < 1e-15);
    }

    #[test]
    fn moreau_zero_and_sign() {
        for g in builtins() {
            assert_eq!(g.moreau_envelope(&reg(0.7), 0.0).unwrap(), 0.0);
        }
        let huber = MonotoneGraph::sign().moreau_envelope(&reg(1.0), 2.0).unwrap();
        assert!((huber - 1.5).abs() < 1e-15);
    }

    #[test]
    fn piecewise_validation() {
        let down = MonotoneGraph::piecewise(
            vec![0.0],
            vec![AffineBranch { offset: 1.0, slope: 0.0 }, AffineBranch { offset: 0.0, slope: 0.0 }],
        );
        assert!(matches!(down, Err(GraphError::InvalidGraph(_))));
        let no_zero = MonotoneGraph::piecewise(
            vec![1.0],
            vec![AffineBranch { offset: 0.5, slope: 1.0 }, AffineBranch { offset: 2.0, slope: 1.0 }],
        );
        assert!(matches!(no_zero, Err(GraphError::InvalidGraph(_))));
        let miscount = MonotoneGraph::piecewise(vec![0.0], vec![AffineBranch { offset: 0.0, slope: 1.0 }]);
        assert!(miscount.is_err());
    }

    #[test]
    fn minimal_section_at_jump() {
        let g = MonotoneGraph::piecewise(
            vec![1.0],
            vec![AffineBranch { offset: 0.0, slope: 1.0 }, AffineBranch { offset: 2.0, slope: 1.0 }],
        )
        .unwrap();
        assert_eq!(g.value_interval(1.0), (1.0, 3.0));
        assert_eq!(g.psi(1.0), 1.0);
        // u in [1 + λ, 1 + 3λ] is absorbed by the jump.
        assert_eq!(g.resolvent(&reg(0.5), 2.0).unwrap(), 1.0);
    }

    #[test]
    fn h3_examples() {
        let grid: Vec<f64> = (1..=40).map(|i| 25.0 * f64::from(i)).collect();
        let r = MonotoneGraph::power_law(2.0).unwrap().check_h3(&grid).unwrap();
        assert_eq!(r.sup_ratio, 1.0);
        assert!(r.surjective && r.full_domain);
        let r = MonotoneGraph::exponential_power(1.0, 1.0).unwrap().check_h3(&grid).unwrap();
        assert_eq!(r.sup_ratio, 1.0);
        assert!(r.overflow);
        let asym = MonotoneGraph::custom("asym", |s| if s >= 0.0 { s } else { 2.0 * s }, None).unwrap();
        let r = asym.check_h3(&grid).unwrap();
        assert!((r.sup_ratio - 2.0).abs() < 1e-9);
        let r = MonotoneGraph::sign().check_h3(&grid).unwrap();
        assert!(!r.surjective);
        assert!(r.full_domain);
    }

    #[test]
    fn h3_domain_violation() {
        let inf = std::sync::Arc::new(|y: f64| if y > 10.0 { f64::INFINITY } else { 0.5 * y * y });
        let g = MonotoneGraph::custom("barrier", |s| s, Some(inf)).unwrap();
        let grid: Vec<f64> = (1..=20).map(f64::from).collect();
        assert!(matches!(g.check_h3(&grid), Err(GraphError::DomainViolation(_))));
    }

    #[test]
    fn custom_resolvent_matches_closed_form() {
        let g = MonotoneGraph::custom("cube", |s| s * s * s, None).unwrap();
        let v = g.resolvent(&reg(1.0), 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        let j = g.potential(2.0).unwrap();
        assert!((j - 4.0).abs() < 1e-12);
        let c = g.conjugate(8.0).unwrap();
        assert!((c - 12.0).abs() < 1e-10);
    }

    #[test]
    fn yosida_slope_at_jump_is_inverse_lambda() {
        let p = MonotoneGraph::step().yosida_with_slope(&reg(0.25), 0.1).unwrap();
        assert_eq!(p.resolvent, 0.0);
        assert_eq!(p.slope, 4.0);
        let p = MonotoneGraph::fast_diffusion().yosida_with_slope(&reg(0.5), 0.0).unwrap();
        assert_eq!(p.slope, 2.0);
    }

    #[test]
    fn catalog_covers_families() {
        let c = catalog();
        assert!(c.len() >= 5);
        assert!(c.iter().filter(|e| e.family != "custom").all(|e| e.potential.is_some()));
        assert!(c.iter().any(|e| e.note.contains("filled")));
    }
}
