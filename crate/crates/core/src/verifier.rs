//! Pass/fail checks over solved paths and seeded ensembles.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MonotoneGraph, Regularization};
use crate::noise::{self, HsTarget, NoiseError, NoiseOperator, NoiseSpec};
use crate::solver::{self, SolutionPath, SolverConfig, SolverError};
use crate::spatial::{Field, SpatialOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error("path carries no per-step noise ledger (solve with keep_steps = true)")]
    MissingNoiseLedger,
    #[error("invalid check input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

pub type Result<T> = std::result::Result<T, VerifierError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub time: f64,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub sample_size: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    fn new(name: &str, tolerance: f64, sample_size: usize, seeds: Vec<u64>) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            measured: BTreeMap::new(),
            tolerance,
            sample_size,
            seeds,
            rows: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: f64) {
        self.measured.insert(key.to_string(), value);
    }

    /// `check,time,measured,bound` lines without header.
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| format!("{},{:e},{:e},{:e}", self.name, r.time, r.measured, r.bound))
            .collect()
    }

    pub fn summary_line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let values: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        format!("{status} {} [{}]", self.name, values.join(", "))
    }
}

/// Runs `f(index, seed)` over an ensemble; results come back in index order
/// whatever the thread count.
pub fn run_ensemble<T, F>(count: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    (0..count).into_par_iter().map(|i| f(i, noise::path_seed(base_seed, i))).collect()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u - v).collect()
}

/// Discrete energy-identity residuals of one path at its snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyResiduals {
    pub times: Vec<f64>,
    /// Residual with the scheme's own dissipation `Σ ½|ΔX − ΔW_G|²_{-1}`
    /// restored and the regularized selection `Ψ_λ(X) + λX`.
    pub corrected: Vec<f64>,
    /// Residual with `η = Ψ_λ(X)` and no dissipation term.
    pub raw: Vec<f64>,
    /// The dissipation term itself.
    pub defect: Vec<f64>,
}

/// Residual of `½|X(t)|² = ½|x|² − ∫(η, X) + Σ⟨X(t_{j-1}), ΔW_G⟩ + ½∫‖G‖²_{HS}`
/// with left-point stochastic sums, evaluated at every snapshot.
pub fn energy_residuals(path: &SolutionPath, op: &SpatialOperator, graph: &MonotoneGraph) -> Result<EnergyResiduals> {
    let traj = path.trajectory.as_ref().ok_or(VerifierError::MissingNoiseLedger)?;
    let ledger = path.noise.as_ref().ok_or(VerifierError::MissingNoiseLedger)?;
    let reg = Regularization::with_tolerance(path.lambda, 1e-14, 200)?;
    let lambda = path.lambda;
    let dt = path.dt;
    let half_sq = |v: &[f64]| 0.5 * op.norm_h_minus1_values(v).powi(2);
    let e0 = half_sq(&traj[0]);
    let (mut diss, mut diss_raw, mut stoch, mut ito, mut defect) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut out = EnergyResiduals {
        times: vec![0.0],
        corrected: vec![0.0],
        raw: vec![0.0],
        defect: vec![0.0],
    };
    let mut next = 1;
    for j in 1..=path.steps {
        let xj = &traj[j];
        let xp = &traj[j - 1];
        let dw = ledger.increment(j - 1);
        let mut pair = 0.0;
        let mut pair_raw = 0.0;
        for &v in xj {
            let eta = graph.yosida(&reg, v)?;
            pair += (eta + lambda * v) * v;
            pair_raw += eta * v;
        }
        let w = op.grid().weight();
        diss += dt * w * pair;
        diss_raw += dt * w * pair_raw;
        stoch += op.inner_h_minus1_values(xp, &dw);
        ito += 0.5 * dt * ledger.hs_sq[j - 1];
        let jump: Vec<f64> = xj.iter().zip(xp).zip(&dw).map(|((a, b), c)| a - b - c).collect();
        defect += half_sq(&jump);
        if next < path.snapshot_steps.len() && path.snapshot_steps[next] == j {
            let e = half_sq(xj) - e0;
            out.times.push(j as f64 * dt);
            out.corrected.push(e + diss - stoch - ito + defect);
            out.raw.push(e + diss_raw - stoch - ito);
            out.defect.push(defect);
            next += 1;
        }
    }
    Ok(out)
}

/// Settings shared by the ensemble checks.
#[derive(Clone, Debug)]
pub struct EnsembleSettings {
    pub paths: usize,
    pub base_seed: u64,
}

/// Ensemble energy-identity check: mean corrected residual within three
/// standard errors of zero at every snapshot and, when `refine` is set,
/// mean `sup_t |residual|` shrinking by at least 1.7 when dt is quartered
/// (common Wiener paths across resolutions).
pub fn check_energy_identity(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    x: &Field,
    spec: &NoiseSpec,
    cfg: &SolverConfig,
    ensemble: &EnsembleSettings,
    refine: bool,
) -> Result<CheckReport> {
    let steps = cfg.steps()?;
    let mut cfg = cfg.clone();
    cfg.keep_steps = true;
    let mut fine_cfg = cfg.clone();
    fine_cfg.dt = cfg.dt / 4.0;
    let per_path = run_ensemble(ensemble.paths, ensemble.base_seed, |_, seed| {
        let fine_w = noise::sample_wiener(spec.modes, fine_cfg.dt, steps * 4, seed)?;
        let w = fine_w.coarsen(4)?;
        let path = solver::solve_additive(graph, op, x, spec, &w, &cfg)?;
        let coarse = energy_residuals(&path, op, graph)?;
        drop(path);
        let fine = if refine {
            let fp = solver::solve_additive(graph, op, x, spec, &fine_w, &fine_cfg)?;
            Some(energy_residuals(&fp, op, graph)?)
        } else {
            None
        };
        Ok((coarse, fine))
    })?;
    let seeds: Vec<u64> = (0..ensemble.paths).map(|i| noise::path_seed(ensemble.base_seed, i)).collect();
    let mut report = CheckReport::new("energy_identity", 3.0, ensemble.paths, seeds);
    let times = per_path[0].0.times.clone();
    let floor = 1e-9 * (1.0 + op.norm_h_minus1_values(x.values()).powi(2));
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut max_raw: f64 = 0.0;
    let mut max_defect: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let col: Vec<f64> = per_path.iter().map(|(c, _)| c.corrected[i]).collect();
        let raw: Vec<f64> = per_path.iter().map(|(c, _)| c.raw[i]).collect();
        let def: Vec<f64> = per_path.iter().map(|(c, _)| c.defect[i]).collect();
        let (m, sd) = mean_sd(&col);
        let se = sd / (col.len() as f64).sqrt();
        let bound = 3.0 * se + floor;
        if m.abs() > bound {
            ok = false;
        }
        if se > 0.0 {
            worst_z = worst_z.max(m.abs() / se);
        }
        max_raw = max_raw.max(mean_sd(&raw).0.abs());
        max_defect = max_defect.max(mean_sd(&def).0);
        report.rows.push(CheckRow { time: t, measured: m, bound });
    }
    report.set("max_abs_mean_over_se", worst_z);
    report.set("max_abs_raw_mean", max_raw);
    report.set("max_dissipation_mean", max_defect);
    let magnitude = |pick: &dyn Fn(&(EnergyResiduals, Option<EnergyResiduals>)) -> f64| {
        per_path.iter().map(pick).sum::<f64>() / per_path.len() as f64
    };
    let sup = |r: &EnergyResiduals| r.corrected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let coarse_mag = magnitude(&|p| sup(&p.0));
    report.set("magnitude_coarse", coarse_mag);
    if refine {
        let fine_mag = magnitude(&|p| sup(p.1.as_ref().expect("refined")));
        report.set("magnitude_fine", fine_mag);
        let shrink = if fine_mag > 0.0 { coarse_mag / fine_mag } else if coarse_mag == 0.0 { f64::INFINITY } else { 0.0 };
        report.set("shrink_ratio", shrink);
        // Zero residual at both resolutions carries no scaling information.
        if !(shrink >= 1.7 || coarse_mag <= floor) {
            ok = false;
        }
    }
    report.passed = ok;
    Ok(report)
}

/// Smallest `N` with `j*(s) > slope·|s|` for `|s| > N` (`None` if none below 1e12).
pub fn tail_threshold(graph: &MonotoneGraph, slope: f64) -> Result<Option<f64>> {
    if slope <= 0.0 {
        return Ok(Some(0.0));
    }
    let mut n: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let below = |s: f64| -> Result<bool> {
            let c = graph.conjugate(sign * s)?;
            Ok(c <= slope * s)
        };
        // {j* ≤ slope·|s|} is an interval around 0 by convexity.
        let mut hi = 1.0;
        while below(hi)? {
            hi *= 2.0;
            if hi > 1e12 {
                return Ok(None);
            }
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if below(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        n = n.max(hi);
    }
    Ok(Some(n))
}

/// Discrete a priori bound along a regularized path:
/// `½|y(t_n)|² + Σ dt∫(j(z)+j*(η)) + λ⁻¹Σ dt∫(X−z)² ≤ |x|² + 2δN|Q_T| + λΣ dt∫W_G²`,
/// and the defect bound `Σ dt∫(X−z)² ≤ 2λ·RHS`.
pub fn check_apriori(path: &SolutionPath, graph: &MonotoneGraph, op: &SpatialOperator) -> Result<CheckReport> {
    let traj = path.trajectory.as_ref().ok_or(VerifierError::MissingNoiseLedger)?;
    let ledger = path.noise.as_ref().ok_or(VerifierError::MissingNoiseLedger)?;
    let lambda = path.lambda;
    let reg = Regularization::with_tolerance(lambda, 1e-14, 200)?;
    let dt = path.dt;
    let w = op.grid().weight();
    let q_t = path.steps as f64 * dt * w * op.len() as f64;
    let c = q_t + 1.0;
    let delta = ledger.delta;
    let mut overflow = 0usize;
    let mut max_eta: f64 = 0.0;
    let mut rows_raw = Vec::with_capacity(path.steps + 1);
    let x0 = op.norm_h_minus1_values(&traj[0]).powi(2);
    let (mut s_jj, mut s_def, mut s_w) = (0.0, 0.0, 0.0);
    rows_raw.push((0.0, 0.5 * x0, 0.0, 0.0, 0.0));
    for j in 1..=path.steps {
        let (mut jj, mut def, mut ww) = (0.0, 0.0, 0.0);
        for (&v, &wv) in traj[j].iter().zip(&ledger.convolution[j]) {
            let p = graph.yosida_with_slope(&reg, v)?;
            let jz = graph.potential_checked(p.resolvent)?;
            overflow += jz.overflow as usize;
            let conj = graph.conjugate(p.value)?;
            jj += jz.value + conj;
            def += (v - p.resolvent).powi(2);
            ww += wv * wv;
            max_eta = max_eta.max(p.value.abs());
        }
        s_jj += dt * w * jj;
        s_def += dt * w * def;
        s_w += dt * w * ww;
        let y = diff(&traj[j], &ledger.convolution[j]);
        let half_y = 0.5 * op.norm_h_minus1_values(&y).powi(2);
        rows_raw.push((j as f64 * dt, half_y + s_jj + s_def / lambda, s_def, s_w, half_y));
    }
    let n_tail = tail_threshold(graph, 2.0 * c * delta)?.unwrap_or(max_eta);
    let mut report = CheckReport::new("apriori", 1.05, 1, path.seed.into_iter().collect());
    let floor = 1e-14 * (1.0 + x0);
    let mut worst: f64 = 0.0;
    let mut worst_def: f64 = 0.0;
    let mut ok = overflow == 0;
    let mut idx = path.snapshot_steps.iter().peekable();
    for (j, &(t, lhs, def, sw, _)) in rows_raw.iter().enumerate() {
        let rhs = x0 + 2.0 * delta * n_tail * q_t + lambda * sw;
        if lhs > 1.05 * rhs + floor || def > 2.0 * lambda * rhs + floor {
            ok = false;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
            worst_def = worst_def.max(def / (2.0 * lambda * rhs));
        }
        if idx.peek() == Some(&&j) {
            idx.next();
            report.rows.push(CheckRow { time: t, measured: lhs, bound: rhs });
        }
    }
    let rhs_final = x0 + 2.0 * delta * n_tail * q_t + lambda * rows_raw.last().map(|r| r.3).unwrap_or(0.0);
    report.set("max_ratio", worst);
    report.set("max_defect_ratio", worst_def);
    report.set("tail_threshold", n_tail);
    report.set("delta", delta);
    report.set("c1", rhs_final / (1.0 + x0));
    report.set("overflow_count", overflow as f64);
    report.passed = ok;
    Ok(report)
}

/// Per-path outcome of a two-path run, at the snapshots.
struct TwoPathSample {
    raw: Vec<f64>,
    corrected: Vec<f64>,
}

/// `E|Y_{G₁}(t,x) − Y_{G₂}(t,y)|²_{-1} ≤ |x−y|²_{-1} + t‖G₁−G₂‖²_{HS(L²,H)}` with 5%
/// slack. The expectation is estimated with the Itô martingale terms of the
/// discrete expansion of `|ΔX|²` removed as a control variate; the plain
/// ensemble mean is reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn check_two_path_stability(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    g1: &NoiseSpec,
    g2: &NoiseSpec,
    x: &Field,
    y: &Field,
    cfg: &SolverConfig,
    ensemble: &EnsembleSettings,
) -> Result<CheckReport> {
    let op1 = g1.additive_operator()?;
    let op2 = g2.additive_operator()?;
    let modes = g1.modes.max(g2.modes);
    let coeffs = |g: &NoiseOperator| -> Vec<f64> {
        let mut v = vec![0.0; modes];
        if let NoiseOperator::Diagonal(c) = g {
            v[..c.len()].copy_from_slice(c);
        }
        v
    };
    let dg: Vec<f64> = coeffs(&op1).iter().zip(coeffs(&op2)).map(|(a, b)| a - b).collect();
    let dg_sq = NoiseOperator::Diagonal(dg).hs_norm_sq(op, HsTarget::H, 1.0, modes);
    let steps = cfg.steps()?;
    let mut cfg = cfg.clone();
    cfg.keep_steps = true;
    let dx0 = op.norm_h_minus1_values(&diff(x.values(), y.values())).powi(2);
    let samples = run_ensemble(ensemble.paths, ensemble.base_seed, |_, seed| {
        let w = noise::sample_wiener(modes, cfg.dt, steps, seed)?;
        let p1 = solver::solve_additive(graph, op, x, g1, &w, &cfg)?;
        let p2 = solver::solve_additive(graph, op, y, g2, &w, &cfg)?;
        let (t1, t2) = (p1.trajectory.as_ref().unwrap(), p2.trajectory.as_ref().unwrap());
        let (l1, l2) = (p1.noise.as_ref().unwrap(), p2.noise.as_ref().unwrap());
        let mut martingale = 0.0;
        let mut raw = vec![dx0];
        let mut corrected = vec![dx0];
        let mut next = 1;
        for j in 1..=steps {
            let prev = diff(&t1[j - 1], &t2[j - 1]);
            let dn = diff(&l1.increment(j - 1), &l2.increment(j - 1));
            martingale += 2.0 * op.inner_h_minus1_values(&prev, &dn) + op.norm_h_minus1_values(&dn).powi(2)
                - cfg.dt * dg_sq;
            if next < p1.snapshot_steps.len() && p1.snapshot_steps[next] == j {
                let d = op.norm_h_minus1_values(&diff(&t1[j], &t2[j])).powi(2);
                raw.push(d);
                corrected.push(d - martingale);
                next += 1;
            }
        }
        Ok(TwoPathSample { raw, corrected })
    })?;
    let seeds: Vec<u64> = (0..ensemble.paths).map(|i| noise::path_seed(ensemble.base_seed, i)).collect();
    let mut report = CheckReport::new("two_path_stability", 0.05, ensemble.paths, seeds);
    let snaps = solver::snapshot_steps(steps, cfg.snapshots);
    let floor = 1e-13 * (1.0 + dx0);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut worst_raw: f64 = 0.0;
    for (i, &s) in snaps.iter().enumerate() {
        let t = s as f64 * cfg.dt;
        let bound = dx0 + t * dg_sq;
        let cv = mean_sd(&samples.iter().map(|p| p.corrected[i]).collect::<Vec<_>>()).0;
        let raw = mean_sd(&samples.iter().map(|p| p.raw[i]).collect::<Vec<_>>()).0;
        if cv > 1.05 * bound + floor {
            ok = false;
        }
        if bound > 0.0 {
            worst = worst.max(cv / bound);
            worst_raw = worst_raw.max(raw / bound);
        }
        report.rows.push(CheckRow { time: t, measured: cv, bound });
    }
    report.set("max_ratio", worst);
    report.set("max_raw_ratio", worst_raw);
    report.set("initial_distance_sq", dx0);
    report.set("hs_difference_sq", dg_sq);
    report.passed = ok;
    Ok(report)
}

/// `sup_t E|X(t,x)−X(t,y)|²/|x−y|²` for each pair under multiplicative noise;
/// passes when the pair suprema agree within a factor 3 and no ratio exceeds
/// `1.1·e^{2L²t}`.
pub fn check_lipschitz_solution_map(
    graph: &MonotoneGraph,
    op: &SpatialOperator,
    spec: &NoiseSpec,
    pairs: &[(Field, Field)],
    cfg: &SolverConfig,
    ensemble: &EnsembleSettings,
) -> Result<CheckReport> {
    let steps = cfg.steps()?;
    let wieners = solver::ensemble_wieners(spec.modes, cfg.dt, steps, ensemble.base_seed, ensemble.paths)?;
    let seeds: Vec<u64> = wieners.iter().map(|w| w.seed).collect();
    let mut report = CheckReport::new("lipschitz_solution_map", 3.0, ensemble.paths, seeds);
    let lipschitz = spec.lipschitz_constant(op, HsTarget::H)?;
    let snaps = solver::snapshot_steps(steps, cfg.snapshots);
    let mut sups = Vec::new();
    let mut ok = true;
    for (k, (x, y)) in pairs.iter().enumerate() {
        let d0 = op.norm_h_minus1_values(&diff(x.values(), y.values())).powi(2);
        if d0 == 0.0 {
            continue;
        }
        let px = solver::picard_solve(graph, op, x, spec, &wieners, cfg)?;
        let py = solver::picard_solve(graph, op, y, spec, &wieners, cfg)?;
        let mut sup: f64 = 0.0;
        for (i, &s) in snaps.iter().enumerate() {
            let t = s as f64 * cfg.dt;
            let mean = px
                .paths
                .iter()
                .zip(&py.paths)
                .map(|(a, b)| op.norm_h_minus1_values(&diff(a.states[i].values(), b.states[i].values())).powi(2))
                .sum::<f64>()
                / px.paths.len() as f64;
            let ratio = mean / d0;
            let bound = 1.1 * (2.0 * lipschitz * lipschitz * t).exp();
            if ratio > bound {
                ok = false;
            }
            sup = sup.max(ratio);
            report.rows.push(CheckRow { time: t, measured: ratio, bound });
        }
        report.set(&format!("pair{k}_sup_ratio"), sup);
        sups.push(sup);
    }
    if let (Some(max), Some(min)) = (
        sups.iter().copied().reduce(f64::max),
        sups.iter().copied().reduce(f64::min),
    ) {
        let spread = if min > 0.0 { max / min } else { f64::INFINITY };
        report.set("pair_spread", spread);
        if spread > 3.0 {
            ok = false;
        }
    }
    report.set("lipschitz", lipschitz);
    report.passed = ok;
    Ok(report)
}

/// Integrals and pointwise gaps of the selection certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionIntegrals {
    pub j_state: f64,
    pub j_conjugate: f64,
    pub overflow: usize,
}

/// `Σ dt h^d Σ j(X)` and `Σ dt h^d Σ j*(η)` over the stored trajectory (snapshots
/// with a left-point rule otherwise).
pub fn selection_integrals(path: &SolutionPath, graph: &MonotoneGraph, op: &SpatialOperator) -> Result<SelectionIntegrals> {
    let reg = Regularization::with_tolerance(path.lambda, 1e-14, 200)?;
    let w = op.grid().weight();
    let mut out = SelectionIntegrals { j_state: 0.0, j_conjugate: 0.0, overflow: 0 };
    let mut accumulate = |states: &[f64], weight: f64| -> Result<()> {
        for &v in states {
            let j = graph.potential_checked(v)?;
            out.overflow += j.overflow as usize;
            out.j_state += weight * j.value;
            out.j_conjugate += weight * graph.conjugate(graph.yosida(&reg, v)?)?;
        }
        Ok(())
    };
    match &path.trajectory {
        Some(traj) => {
            for xj in &traj[1..] {
                accumulate(xj, path.dt * w)?;
            }
        }
        None => {
            for (k, s) in path.states.iter().enumerate().skip(1) {
                let span = path.times[k] - path.times[k - 1];
                accumulate(s.values(), span * w)?;
            }
        }
    }
    Ok(out)
}

/// Fenchel certificate `η ∈ Ψ(z_λ)`: max gap ≤ `10 λ (1 + max|X|)` and finite
/// integrals of `j(X)` and `j*(η)`.
pub fn check_selection(path: &SolutionPath, graph: &MonotoneGraph, op: &SpatialOperator) -> Result<CheckReport> {
    let sel = solver::extract_selection(graph, path.lambda, path)?;
    let max_x = path.states.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    let tol = 10.0 * path.lambda * (1.0 + max_x);
    let ints = selection_integrals(path, graph, op)?;
    let mut min_product = f64::INFINITY;
    for (s, e) in path.states.iter().zip(&sel.eta) {
        for (&xv, &ev) in s.values().iter().zip(e.values()) {
            if graph.fenchel_gap(xv, ev)? <= tol {
                min_product = min_product.min(xv * ev);
            }
        }
    }
    let mut report = CheckReport::new("selection", tol, 1, path.seed.into_iter().collect());
    report.set("max_gap", sel.max_gap);
    report.set("max_gap_state", sel.max_gap_state);
    report.set("j_state_integral", ints.j_state);
    report.set("j_conjugate_integral", ints.j_conjugate);
    report.set("overflow_count", ints.overflow as f64);
    report.set("min_product", if min_product.is_finite() { min_product } else { 0.0 });
    for (t, s) in path.times.iter().zip(&path.states) {
        let mut g: f64 = 0.0;
        let reg = Regularization::with_tolerance(path.lambda, 1e-14, 200)?;
        for &v in s.values() {
            let p = graph.yosida_with_slope(&reg, v)?;
            g = g.max(graph.fenchel_gap(p.resolvent, p.value)?);
        }
        report.rows.push(CheckRow { time: *t, measured: g, bound: tol });
    }
    report.passed = sel.max_gap <= tol
        && ints.j_state.is_finite()
        && ints.j_conjugate.is_finite()
        && ints.overflow == 0
        && min_product >= -tol;
    Ok(report)
}
