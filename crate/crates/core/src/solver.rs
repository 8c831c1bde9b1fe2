//! Drift-implicit Euler for the shifted random equation
//! `y' + A Ψ̃_λ(y + W_G) = 0`, `X = y + W_G`, with λ-continuation and the
//! Picard iteration for state-dependent noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::BandedMatrix;
use crate::graph::{GraphError, MonotoneGraph, Regularization};
use crate::noise::{self, HsTarget, NoiseError, NoiseKind, NoiseOperator, NoiseSpec, WienerPath};
use crate::spatial::{Field, Grid, OperatorError, SpatialOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("inner solve did not converge at step {step} (λ = {lambda}): H⁻¹ residual {residual:e}; try a smaller dt")]
    InnerNoConvergence { step: usize, lambda: f64, residual: f64 },
    #[error("λ schedule too coarse: Cauchy distance {current:e} at level {level} did not drop below {previous:e}")]
    ScheduleTooCoarse { level: usize, previous: f64, current: f64 },
    #[error("Picard iteration is not contracting (ratios {ratios:?}); increase alpha")]
    NoContraction { ratios: Vec<f64> },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { alpha: 1.0, tol: 1e-6, max_iter: 30 }
    }
}

fn default_snapshots() -> usize {
    65
}

fn default_true() -> bool {
    true
}

fn default_floor() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub lambda_schedule: Vec<f64>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Raise `ScheduleTooCoarse` when successive λ distances fail to shrink.
    #[serde(default = "default_true")]
    pub enforce_cauchy: bool,
    /// Relative size below which Cauchy distances count as converged.
    #[serde(default = "default_floor")]
    pub cauchy_floor: f64,
    /// Keep every time step (needed by the energy identity and Picard).
    #[serde(default = "default_true")]
    pub keep_steps: bool,
}

/// `λ_i = λ₀ 2^{-i}`, `i < levels`.
pub fn geometric_schedule(lambda0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|i| lambda0 * 0.5f64.powi(i as i32)).collect()
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            lambda_schedule: geometric_schedule(1.0, 8),
            inner_tol: 1e-11,
            inner_max_iter: 60,
            picard: PicardConfig::default(),
            snapshots: default_snapshots(),
            enforce_cauchy: true,
            cauchy_floor: default_floor(),
            keep_steps: true,
        }
    }

    pub fn with_schedule(mut self, schedule: Vec<f64>) -> Self {
        self.lambda_schedule = schedule;
        self
    }

    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        Ok((self.t_final / self.dt).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SolverError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return bad(format!("need dt <= T, got dt = {}, T = {}", self.dt, self.t_final));
        }
        let steps = (self.t_final / self.dt).round();
        if (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return bad(format!("T = {} is not a multiple of dt = {}", self.t_final, self.dt));
        }
        if self.lambda_schedule.is_empty() {
            return bad("lambda_schedule is empty".into());
        }
        if self.lambda_schedule.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lambda_schedule entries must be positive".into());
        }
        if self.lambda_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("lambda_schedule must be strictly decreasing".into());
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("inner_tol and inner_max_iter must be positive".into());
        }
        if self.snapshots < 2 {
            return bad("need at least two snapshots".into());
        }
        if !(self.picard.alpha > 0.0) || !(self.picard.tol > 0.0) || self.picard.max_iter == 0 {
            return bad("picard alpha, tol and max_iter must be positive".into());
        }
        Ok(())
    }
}

/// Step indices of the output snapshots: `round(i·steps/(m−1))`, or every step
/// when there are fewer steps than snapshots.
pub fn snapshot_steps(steps: usize, snapshots: usize) -> Vec<usize> {
    if steps < snapshots {
        return (0..=steps).collect();
    }
    let m = snapshots - 1;
    (0..=m).map(|i| ((i * steps) as f64 / m as f64).round() as usize).collect()
}

/// Noise coefficient over the time grid: one operator, or one per step
/// (left-point values `G(t_j)` on `[t_j, t_{j+1}]`).
#[derive(Clone, Debug)]
pub enum NoiseDriver {
    Constant(NoiseOperator),
    PerStep(Vec<NoiseOperator>),
}

impl NoiseDriver {
    fn at(&self, j: usize) -> &NoiseOperator {
        match self {
            NoiseDriver::Constant(g) => g,
            NoiseDriver::PerStep(v) => &v[j],
        }
    }
}

/// Per-step noise record kept alongside a path.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLedger {
    /// `W_G(t_n)` for `n = 0..=steps`.
    pub convolution: Vec<Vec<f64>>,
    /// `‖G(t_j)‖²_{L_HS(L², H)}` over the `K` driven modes, `j < steps`.
    pub hs_sq: Vec<f64>,
    pub modes: usize,
    pub delta: f64,
}

impl NoiseLedger {
    pub fn increment(&self, j: usize) -> Vec<f64> {
        self.convolution[j + 1].iter().zip(&self.convolution[j]).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub lambda: f64,
    pub newton_iterations: usize,
    pub max_residual: f64,
    /// `sup_n |X_λ(t_n) − X_{λ_prev}(t_n)|_{-1}` over snapshots.
    pub cauchy_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub levels: Vec<LevelReport>,
    /// `½|X(t_n)|²_{-1}` at the snapshots.
    pub energies: Vec<f64>,
    /// `max_n |X(t_n) + A Σ dt η̃ − x − W_G(t_n)|_{-1}`.
    pub balance_residual: f64,
    pub delta: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SolutionPath {
    pub grid: Grid,
    pub dt: f64,
    pub steps: usize,
    pub lambda: f64,
    pub initial: Vec<f64>,
    pub snapshot_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub selections: Vec<Field>,
    /// Every `X(t_n)` at the final λ, when kept.
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub noise: Option<NoiseLedger>,
    pub seed: Option<u64>,
    pub diagnostics: Diagnostics,
}

impl SolutionPath {
    pub fn terminal(&self) -> &Field {
        self.states.last().expect("nonempty path")
    }
}

/// Banded layout of `I + dt A D`.
fn stencil(grid: Grid) -> (usize, Vec<(usize, usize, f64)>) {
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut entries = Vec::new();
    if grid.dim == 1 {
        for i in 0..n {
            entries.push((i, i, 2.0 * inv_h2));
            if i > 0 {
                entries.push((i, i - 1, -inv_h2));
            }
            if i + 1 < n {
                entries.push((i, i + 1, -inv_h2));
            }
        }
        (1, entries)
    } else {
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                entries.push((idx, idx, 4.0 * inv_h2));
                if i > 0 {
                    entries.push((idx, idx - n, -inv_h2));
                }
                if i + 1 < n {
                    entries.push((idx, idx + n, -inv_h2));
                }
                if j > 0 {
                    entries.push((idx, idx - 1, -inv_h2));
                }
                if j + 1 < n {
                    entries.push((idx, idx + 1, -inv_h2));
                }
            }
        }
        (n, entries)
    }
}

/// Implicit-Euler stepper for one λ level.
pub struct Stepper<'a> {
    graph: &'a MonotoneGraph,
    op: &'a SpatialOperator,
    reg: Regularization,
    dt: f64,
    tol: f64,
    max_iter: usize,
    band: usize,
    entries: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(
        graph: &'a MonotoneGraph,
        op: &'a SpatialOperator,
        lambda: f64,
        dt: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let reg = Regularization::with_tolerance(lambda, 1e-14, 200)?;
        let (band, entries) = stencil(op.grid());
        Ok(Self { graph, op, reg, dt, tol, max_iter, band, entries })
    }

    pub fn lambda(&self) -> f64 {
        self.reg.lambda
    }

    /// `Ψ̃_λ(v)` and its slope at every grid point.
    fn shifted_yosida(&self, v: &[f64], slopes: Option<&mut Vec<f64>>) -> Result<Vec<f64>> {
        let lambda = self.reg.lambda;
        let mut out = Vec::with_capacity(v.len());
        match slopes {
            Some(s) => {
                s.clear();
                for &vi in v {
                    let p = self.graph.yosida_with_slope(&self.reg, vi)?;
                    out.push(p.value + lambda * vi);
                    s.push(p.slope + lambda);
                }
            }
            None => {
                for &vi in v {
                    out.push(self.graph.yosida(&self.reg, vi)? + lambda * vi);
                }
            }
        }
        Ok(out)
    }

    /// `F(u) = u + dt A Ψ̃_λ(u + W) − y_prev`.
    fn residual(&self, u: &[f64], w: &[f64], y_prev: &[f64], slopes: Option<&mut Vec<f64>>) -> Result<Vec<f64>> {
        let v: Vec<f64> = u.iter().zip(w).map(|(a, b)| a + b).collect();
        let eta = self.shifted_yosida(&v, slopes)?;
        let a_eta = self.op.apply_values(&eta);
        Ok(u.iter().zip(&a_eta).zip(y_prev).map(|((u, ae), y)| u + self.dt * ae - y).collect())
    }

    /// Solves `y + dt A Ψ̃_λ(y + W) = y_prev` by semismooth Newton on the
    /// convex potential whose `H⁻¹` gradient is the residual, with an exact
    /// line search when the full step fails to reduce it.
    pub fn step(&self, y_prev: &[f64], w_next: &[f64], guess: Option<&[f64]>, step: usize) -> Result<StepOutcome> {
        let n = y_prev.len();
        let mut u: Vec<f64> = guess.unwrap_or(y_prev).to_vec();
        let mut slopes = Vec::with_capacity(n);
        let mut f = self.residual(&u, w_next, y_prev, Some(&mut slopes))?;
        let mut r = self.op.norm_h_minus1_values(&f);
        let scale = 1.0 + self.op.norm_h_minus1_values(y_prev);
        let tol = self.tol * scale;
        for it in 0..self.max_iter {
            if r <= tol {
                return Ok(StepOutcome { y: u, iterations: it, residual: r });
            }
            let mut jac = BandedMatrix::zeros(n, self.band);
            for i in 0..n {
                jac.set(i, i, 1.0);
            }
            for &(i, j, a) in &self.entries {
                jac.add(i, j, self.dt * a * slopes[j]);
            }
            let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
            if jac.solve_in_place(&mut delta).is_none() {
                break;
            }
            let d0 = self.op.inner_h_minus1_values(&delta, &f);
            let trial = |t: f64, slopes: &mut Vec<f64>| -> Result<(Vec<f64>, Vec<f64>)> {
                let cand: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + t * b).collect();
                let fc = self.residual(&cand, w_next, y_prev, Some(slopes))?;
                Ok((cand, fc))
            };
            let (mut cand, mut fc) = trial(1.0, &mut slopes)?;
            let rc = self.op.norm_h_minus1_values(&fc);
            let d1 = self.op.inner_h_minus1_values(&delta, &fc);
            if !(rc <= 0.9 * r || d1 <= 0.0) && d0 < 0.0 {
                // Bisect the monotone directional derivative for the exact minimizer.
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let (c, fm) = trial(mid, &mut slopes)?;
                    if self.op.inner_h_minus1_values(&delta, &fm) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    cand = c;
                    fc = fm;
                    if hi - lo < 1e-10 {
                        break;
                    }
                }
            }
            u = cand;
            f = fc;
            r = self.op.norm_h_minus1_values(&f);
        }
        if r <= tol {
            return Ok(StepOutcome { y: u, iterations: self.max_iter, residual: r });
        }
        Err(SolverError::InnerNoConvergence { step, lambda: self.reg.lambda, residual: r })
    }
}

/// One implicit Euler step of the regularized shifted equation.
#[allow(clippy::too_many_arguments)]
pub fn step_regularized(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    lambda: f64,
    y_prev: &Field,
    w_next: &Field,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Field> {
    let stepper = Stepper::new(graph, op, lambda, dt, tol, max_iter)?;
    let out = stepper.step(y_prev.values(), w_next.values(), None, 0)?;
    Ok(Field::new(op.grid(), out.y)?)
}

/// Builds the noise ledger from a driver and a Wiener path.
pub fn noise_ledger(op: &SpatialOperator, driver: &NoiseDriver, modes: usize, wiener: &WienerPath, steps: usize) -> Result<NoiseLedger> {
    if wiener.steps != steps {
        return Err(SolverError::InvalidConfig(format!(
            "Wiener path has {} steps, solver needs {steps}",
            wiener.steps
        )));
    }
    if wiener.modes < modes {
        return Err(SolverError::InvalidConfig(format!(
            "Wiener path carries {} modes, noise needs {modes}",
            wiener.modes
        )));
    }
    let mut current = vec![0.0; op.len()];
    let mut convolution = Vec::with_capacity(steps + 1);
    convolution.push(current.clone());
    let mut hs_sq = Vec::with_capacity(steps);
    let mut delta: f64 = 0.0;
    let mut cached: Option<f64> = None;
    for j in 0..steps {
        let g = driver.at(j);
        let hs = match (driver, cached) {
            (NoiseDriver::Constant(_), Some(v)) => v,
            _ => {
                let v = g.hs_norm_sq(op, HsTarget::H, 1.0, modes);
                cached = Some(v);
                v
            }
        };
        hs_sq.push(hs);
        if !matches!(g, NoiseOperator::Zero) {
            let inc = g.increment(op, &wiener.increment(j)[..modes]);
            for (c, d) in current.iter_mut().zip(&inc) {
                *c += d;
            }
            delta = delta.max(current.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        convolution.push(current.clone());
    }
    Ok(NoiseLedger { convolution, hs_sq, modes, delta })
}

/// Solves the shifted equation along the whole λ schedule for a given noise
/// ledger and returns the smallest-λ path.
pub fn solve_with_ledger(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    x: &Field,
    ledger: NoiseLedger,
    cfg: &SolverConfig,
) -> Result<SolutionPath> {
    let steps = cfg.steps()?;
    if x.grid() != op.grid() {
        return Err(OperatorError::OperatorMismatch { expected: op.grid(), found: x.grid() }.into());
    }
    let snaps = snapshot_steps(steps, cfg.snapshots);
    let len = op.len();
    // Warm starts need the previous level's full path.
    let warm_ok = steps.saturating_mul(len) <= 1 << 22;
    let mut prev_full: Option<Vec<Vec<f64>>> = None;
    let mut prev_snaps: Option<Vec<Vec<f64>>> = None;
    let mut levels: Vec<LevelReport> = Vec::new();
    let mut final_full: Vec<Vec<f64>> = Vec::new();
    let mut final_snaps: Vec<Vec<f64>> = Vec::new();
    let mut final_eta_sum_balance = 0.0;
    let mut total_iters = 0;
    let w_scale = 1.0 + op.norm_h_minus1_values(x.values());

    for (li, &lambda) in cfg.lambda_schedule.iter().enumerate() {
        let stepper = Stepper::new(graph, op, lambda, cfg.dt, cfg.inner_tol, cfg.inner_max_iter)?;
        let last = li + 1 == cfg.lambda_schedule.len();
        let keep_full = warm_ok || (last && cfg.keep_steps);
        let mut y = x.values().to_vec();
        let mut full: Vec<Vec<f64>> = Vec::new();
        let mut snap_x: Vec<Vec<f64>> = Vec::with_capacity(snaps.len());
        if keep_full {
            full.push(x.values().to_vec());
        }
        snap_x.push(x.values().to_vec());
        let mut next_snap = 1;
        let mut iters = 0;
        let mut max_res: f64 = 0.0;
        let mut eta_sum = vec![0.0; len];
        let mut balance: f64 = 0.0;
        for n in 0..steps {
            let w = &ledger.convolution[n + 1];
            let guess = prev_full.as_ref().map(|p| {
                let xp = &p[n + 1];
                xp.iter().zip(w).map(|(a, b)| a - b).collect::<Vec<f64>>()
            });
            let out = stepper.step(&y, w, guess.as_deref(), n + 1)?;
            iters += out.iterations;
            max_res = max_res.max(out.residual);
            y = out.y;
            let xn: Vec<f64> = y.iter().zip(w).map(|(a, b)| a + b).collect();
            if last {
                let eta = stepper.shifted_yosida(&xn, None)?;
                for (s, e) in eta_sum.iter_mut().zip(&eta) {
                    *s += cfg.dt * e;
                }
            }
            if next_snap < snaps.len() && snaps[next_snap] == n + 1 {
                if last {
                    let a_sum = op.apply_values(&eta_sum);
                    let bal: Vec<f64> = xn
                        .iter()
                        .zip(&a_sum)
                        .zip(x.values())
                        .zip(w)
                        .map(|(((xv, a), x0), wv)| xv + a - x0 - wv)
                        .collect();
                    balance = balance.max(op.norm_h_minus1_values(&bal));
                }
                snap_x.push(xn.clone());
                next_snap += 1;
            }
            if keep_full {
                full.push(xn);
            }
        }
        total_iters += iters;
        let cauchy_distance = prev_snaps.as_ref().map(|p| {
            p.iter()
                .zip(&snap_x)
                .map(|(a, b)| {
                    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
                    op.norm_h_minus1_values(&d)
                })
                .fold(0.0, f64::max)
        });
        levels.push(LevelReport { lambda, newton_iterations: iters, max_residual: max_res, cauchy_distance });
        if cfg.enforce_cauchy && li >= 2 {
            let previous = levels[li - 1].cauchy_distance.unwrap_or(f64::INFINITY);
            let current = cauchy_distance.unwrap_or(0.0);
            let floor = cfg.cauchy_floor * w_scale;
            if current >= previous && previous > floor {
                return Err(SolverError::ScheduleTooCoarse { level: li, previous, current });
            }
        }
        prev_snaps = Some(snap_x.clone());
        if last {
            final_full = full;
            final_snaps = snap_x;
            final_eta_sum_balance = balance;
        } else {
            prev_full = if warm_ok { Some(full) } else { None };
        }
    }

    let lambda = *cfg.lambda_schedule.last().expect("nonempty schedule");
    let grid = op.grid();
    let reg = Regularization::with_tolerance(lambda, 1e-14, 200)?;
    let mut states = Vec::with_capacity(final_snaps.len());
    let mut selections = Vec::with_capacity(final_snaps.len());
    let mut energies = Vec::with_capacity(final_snaps.len());
    for s in final_snaps {
        let eta = s.iter().map(|&v| graph.yosida(&reg, v)).collect::<std::result::Result<Vec<_>, _>>()?;
        let e = op.norm_h_minus1_values(&s);
        energies.push(0.5 * e * e);
        states.push(Field::new(grid, s)?);
        selections.push(Field::new(grid, eta)?);
    }
    let diagnostics = Diagnostics {
        levels,
        energies,
        balance_residual: final_eta_sum_balance,
        delta: ledger.delta,
        newton_iterations: total_iters,
    };
    Ok(SolutionPath {
        grid,
        dt: cfg.dt,
        steps,
        lambda,
        initial: x.values().to_vec(),
        times: snaps.iter().map(|&n| n as f64 * cfg.dt).collect(),
        snapshot_steps: snaps,
        states,
        selections,
        trajectory: if cfg.keep_steps { Some(final_full) } else { None },
        noise: if cfg.keep_steps { Some(ledger) } else { None },
        seed: None,
        diagnostics,
    })
}

/// Additive-noise solve `Y = Y_G(t, x)` along the λ schedule.
pub fn solve_additive(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    x: &Field,
    spec: &NoiseSpec,
    wiener: &WienerPath,
    cfg: &SolverConfig,
) -> Result<SolutionPath> {
    spec.validate(op)?;
    let driver = NoiseDriver::Constant(spec.additive_operator()?);
    solve_driven(graph, op, x, &driver, spec.modes, wiener, cfg)
}

/// Solve with an arbitrary (predictable) noise coefficient sequence.
pub fn solve_driven(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    x: &Field,
    driver: &NoiseDriver,
    modes: usize,
    wiener: &WienerPath,
    cfg: &SolverConfig,
) -> Result<SolutionPath> {
    let steps = cfg.steps()?;
    let ledger = noise_ledger(op, driver, modes, wiener, steps)?;
    let mut path = solve_with_ledger(graph, op, x, ledger, cfg)?;
    path.seed = Some(wiener.seed);
    Ok(path)
}

/// Deterministic solve (`G ≡ 0`).
pub fn solve_deterministic(graph: &MonotoneGraph, op: &SpatialOperator, x: &Field, cfg: &SolverConfig) -> Result<SolutionPath> {
    let steps = cfg.steps()?;
    let ledger = NoiseLedger {
        convolution: vec![vec![0.0; op.len()]; steps + 1],
        hs_sq: vec![0.0; steps],
        modes: 0,
        delta: 0.0,
    };
    solve_with_ledger(graph, op, x, ledger, cfg)
}

/// η at the snapshots with the Fenchel gaps of the selection certificate.
#[derive(Clone, Debug)]
pub struct Selection {
    pub eta: Vec<Field>,
    /// `max fenchel_gap(z_λ, η)` with `z_λ = (1+λΨ)^{-1}X`.
    pub max_gap: f64,
    /// `max fenchel_gap(X, η)`, which is `O(λ)` rather than zero.
    pub max_gap_state: f64,
}

pub fn extract_selection(graph: &MonotoneGraph, lambda: f64, path: &SolutionPath) -> Result<Selection> {
    let reg = Regularization::with_tolerance(lambda, 1e-14, 200)?;
    let mut eta = Vec::with_capacity(path.states.len());
    let mut max_gap: f64 = 0.0;
    let mut max_gap_state: f64 = 0.0;
    for s in &path.states {
        let mut e = Vec::with_capacity(s.values().len());
        for &x in s.values() {
            let p = graph.yosida_with_slope(&reg, x)?;
            max_gap = max_gap.max(graph.fenchel_gap(p.resolvent, p.value)?);
            max_gap_state = max_gap_state.max(graph.fenchel_gap(x, p.value)?);
            e.push(p.value);
        }
        eta.push(Field::new(path.grid, e)?);
    }
    Ok(Selection { eta, max_gap, max_gap_state })
}

/// Result of [`picard_solve`].
#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub paths: Vec<SolutionPath>,
    /// `‖X^{(k+1)} − X^{(k)}‖_α`, `k = 0, 1, …`.
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub lipschitz: f64,
}

/// `sup_n (mean_p e^{−2α t_n} |a_p(t_n) − b_p(t_n)|²_{-1})^{1/2}` over every step.
pub fn alpha_distance(op: &SpatialOperator, alpha: f64, dt: f64, a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let steps = a[0].len();
    let paths = a.len() as f64;
    (0..steps)
        .map(|n| {
            let t = n as f64 * dt;
            let mean: f64 = a
                .iter()
                .zip(b)
                .map(|(pa, pb)| {
                    let d: Vec<f64> = pa[n].iter().zip(&pb[n]).map(|(u, v)| u - v).collect();
                    op.norm_h_minus1_values(&d).powi(2)
                })
                .sum::<f64>()
                / paths;
            ((-2.0 * alpha * t).exp() * mean).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Fixed-point iteration `X^{(k+1)} = Γ(X^{(k)})` for state-dependent noise,
/// with common Wiener paths across iterates. `X^{(0)}(t) = x`.
pub fn picard_solve(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    x: &Field,
    spec: &NoiseSpec,
    wieners: &[WienerPath],
    cfg: &SolverConfig,
) -> Result<PicardOutcome> {
    spec.validate(op)?;
    if !matches!(spec.kind, NoiseKind::Multiplicative { .. }) {
        return Err(NoiseError::WrongKind { expected: "multiplicative" }.into());
    }
    if wieners.is_empty() {
        return Err(SolverError::InvalidConfig("Picard needs at least one Wiener path".into()));
    }
    let lipschitz = spec.lipschitz_constant(op, HsTarget::H)?;
    let mut cfg = cfg.clone();
    cfg.keep_steps = true;
    let steps = cfg.steps()?;
    let alpha = cfg.picard.alpha;
    let initial: Vec<Vec<f64>> = vec![x.values().to_vec(); steps + 1];
    let mut current: Vec<Vec<Vec<f64>>> = vec![initial; wieners.len()];
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut paths: Vec<SolutionPath> = Vec::new();
    let mut converged = false;
    let mut above_one = 0;
    for _ in 0..cfg.picard.max_iter {
        let next: Vec<SolutionPath> = current
            .par_iter()
            .zip(wieners.par_iter())
            .map(|(traj, w)| {
                let ops = traj[..steps]
                    .iter()
                    .map(|xj| spec.apply_b(op, xj))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                solve_driven(graph, op, x, &NoiseDriver::PerStep(ops), spec.modes, w, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let next_traj: Vec<Vec<Vec<f64>>> =
            next.iter().map(|p| p.trajectory.clone().expect("kept steps")).collect();
        let d = alpha_distance(op, alpha, cfg.dt, &next_traj, &current);
        if let Some(&prev) = distances.last() {
            let ratio = if prev > 0.0 { d / prev } else { 0.0 };
            ratios.push(ratio);
            if ratio >= 1.0 {
                above_one += 1;
                if above_one >= 3 {
                    return Err(SolverError::NoContraction { ratios });
                }
            } else {
                above_one = 0;
            }
        }
        distances.push(d);
        current = next_traj;
        paths = next;
        if d <= cfg.picard.tol {
            converged = true;
            break;
        }
    }
    Ok(PicardOutcome { paths, distances, ratios, converged, lipschitz })
}

/// Wiener paths for an ensemble: member `i` uses `path_seed(base, i)`.
pub fn ensemble_wieners(modes: usize, dt: f64, steps: usize, base_seed: u64, count: usize) -> Result<Vec<WienerPath>> {
    (0..count)
        .map(|i| noise::sample_wiener(modes, dt, steps, noise::path_seed(base_seed, i)).map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1(op: &SpatialOperator) -> Field {
        op.eigenvector(0)
    }

    #[test]
    fn zero_data_stays_zero() {
        let op = SpatialOperator::new(1, 8).unwrap();
        let g = MonotoneGraph::power_law(2.0).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1);
        let p = solve_deterministic(&g, &op, &Field::zeros(op.grid()), &cfg).unwrap();
        assert!(p.states.iter().all(|s| s.max_abs() == 0.0));
        let sel = extract_selection(&g, p.lambda, &p).unwrap();
        assert_eq!(sel.max_gap, 0.0);
    }

    #[test]
    fn linear_one_step() {
        let op = SpatialOperator::new(1, 8).unwrap();
        let g = MonotoneGraph::linear();
        let lambda = 0.3;
        let dt = 0.01;
        let x = e1(&op);
        let w = Field::zeros(op.grid());
        let y = step_regularized(&g, &op, lambda, &x, &w, dt, 1e-13, 50).unwrap();
        let c = 1.0 / (1.0 + lambda) + lambda;
        let expected = x.scaled(1.0 / (1.0 + dt * c * op.eigenvalues()[0]));
        let diff = y.sub(&expected).unwrap();
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn snapshot_grid() {
        let s = snapshot_steps(1000, 65);
        assert_eq!(s.len(), 65);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 1000);
        assert_eq!(snapshot_steps(10, 65).len(), 11);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(0.1, 0.05);
        assert!(cfg.validate().is_err());
        cfg = SolverConfig::new(0.01, 1.0).with_schedule(vec![0.1, 0.2]);
        assert!(cfg.validate().is_err());
        cfg = SolverConfig::new(0.03, 1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn porous_medium_fine_step_reference() {
        let op = SpatialOperator::new(1, 16).unwrap();
        let g = MonotoneGraph::power_law(2.0).unwrap();
        let x = e1(&op);
        let horizon = 0.02;
        let run = |dt: f64| {
            let cfg = SolverConfig::new(dt, horizon).with_schedule(vec![0.1]);
            solve_deterministic(&g, &op, &x, &cfg).unwrap()
        };
        let coarse = run(1e-3);
        let fine = run(1e-5);
        let d = coarse.terminal().sub(fine.terminal()).unwrap();
        let rel = op.norm_h_minus1(&d).unwrap() / op.norm_h_minus1(fine.terminal()).unwrap();
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn fast_diffusion_nonnegative_and_decaying() {
        let op = SpatialOperator::new(1, 16).unwrap();
        let g = MonotoneGraph::fast_diffusion();
        let x = Field::from_fn(op.grid(), |s, _| (-(s - 0.5).powi(2) / 0.02).exp());
        let cfg = SolverConfig::new(1e-3, 0.05).with_schedule(geometric_schedule(0.1, 3));
        let p = solve_deterministic(&g, &op, &x, &cfg).unwrap();
        for s in &p.states {
            assert!(s.values().iter().all(|&v| v >= -1e-10));
        }
        let e = &p.diagnostics.energies;
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(p.diagnostics.balance_residual < 1e-8);
    }

    #[test]
    fn anchored_picard_converges_immediately() {
        let op = SpatialOperator::new(1, 8).unwrap();
        let g = MonotoneGraph::linear();
        let x = e1(&op);
        let mut spec = NoiseSpec::multiplicative(0.5, 0.05, 1.0, 1.0, 8);
        if let NoiseKind::Multiplicative { anchor, .. } = &mut spec.kind {
            *anchor = Some(vec![1.0; 8]);
        }
        let cfg = SolverConfig::new(0.01, 0.2).with_schedule(vec![0.01]);
        let w = ensemble_wieners(8, 0.01, 20, 3, 4).unwrap();
        let out = picard_solve(&g, &op, &x, &spec, &w, &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.distances.len(), 2);
        assert_eq!(out.distances[1], 0.0);
    }
}
