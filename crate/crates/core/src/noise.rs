//! Cylindrical Wiener noise in the Laplacian eigenbasis, diagonal
//! Hilbert–Schmidt diffusion operators, and the smoothed multiplicative
//! coefficient `B(X) = scale·(1+εA)^{-δ}X`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{Field, SpatialOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("Hilbert–Schmidt sum fails the tail test: last quarter carries {tail_fraction:.3} of the total")]
    Divergent { tail_fraction: f64 },
    #[error("noise smoothness gamma = {gamma} is too small: trace-class paths need the regime where γ>d/2 (here d/2 = {half_dim})")]
    GammaViolation { gamma: f64, half_dim: f64 },
    #[error("operation requires {expected} noise")]
    WrongKind { expected: &'static str },
    #[error("invalid noise parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, NoiseError>;

/// Space in which a Hilbert–Schmidt norm is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsTarget {
    /// `H = H^{-1}`.
    H,
    /// `D(A^γ)`.
    Smooth,
}

/// Named decay families for the diagonal coefficients `g_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModeProfile {
    Zero,
    /// `g_k = amplitude · μ_k^{-exponent}`
    EigenPower { amplitude: f64, exponent: f64 },
    /// `g_k = amplitude · k^{-exponent}` (1-based `k`)
    Algebraic { amplitude: f64, exponent: f64 },
    /// Single nonzero mode (0-based index).
    Single { mode: usize, value: f64 },
    Explicit { values: Vec<f64> },
}

impl ModeProfile {
    pub fn coefficients(&self, op: &SpatialOperator, modes: usize) -> Vec<f64> {
        let mu = op.eigenvalues();
        (0..modes)
            .map(|k| match self {
                ModeProfile::Zero => 0.0,
                ModeProfile::EigenPower { amplitude, exponent } => amplitude * mu[k].powf(-exponent),
                ModeProfile::Algebraic { amplitude, exponent } => {
                    amplitude * ((k + 1) as f64).powf(-exponent)
                }
                ModeProfile::Single { mode, value } => {
                    if k == *mode {
                        *value
                    } else {
                        0.0
                    }
                }
                ModeProfile::Explicit { values } => values.get(k).copied().unwrap_or(0.0),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `G e_k = g_k e_k`.
    Additive { coeffs: Vec<f64> },
    /// `B(X) h = σ(X) · h` with `σ(X) = scale (1+εA)^{-δ} X`, or the fixed
    /// smoothed `anchor` when present (B independent of X).
    Multiplicative {
        scale: f64,
        epsilon: f64,
        delta: f64,
        #[serde(default)]
        anchor: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub gamma: f64,
    /// Truncation `K` of the expansion `W = Σ_{k≤K} β_k e_k`.
    pub modes: usize,
}

/// The value of the diffusion coefficient at one time: an operator
/// `L²(𝒪) → L²(𝒪)` acting on the first `K` eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseOperator {
    Zero,
    Diagonal(Vec<f64>),
    Multiplier(Vec<f64>),
}

impl NoiseOperator {
    /// `Σ_k Δβ_k G e_k` as a grid field.
    pub fn increment(&self, op: &SpatialOperator, dbeta: &[f64]) -> Vec<f64> {
        match self {
            NoiseOperator::Zero => vec![0.0; op.len()],
            NoiseOperator::Diagonal(g) => {
                let mut c = vec![0.0; op.len()];
                for (k, (gk, db)) in g.iter().zip(dbeta).enumerate() {
                    c[k] = gk * db;
                }
                op.from_modes(&c)
            }
            NoiseOperator::Multiplier(sigma) => {
                let mut c = vec![0.0; op.len()];
                c[..dbeta.len()].copy_from_slice(dbeta);
                let white = op.from_modes(&c);
                white.iter().zip(sigma).map(|(w, s)| w * s).collect()
            }
        }
    }

    /// `‖G‖²_{L_HS(L², target)}` over the first `modes` basis vectors.
    pub fn hs_norm_sq(&self, op: &SpatialOperator, target: HsTarget, gamma: f64, modes: usize) -> f64 {
        let weight = |mu: f64| match target {
            HsTarget::H => 1.0 / mu,
            HsTarget::Smooth => mu.powf(2.0 * gamma),
        };
        match self {
            NoiseOperator::Zero => 0.0,
            NoiseOperator::Diagonal(g) => {
                g.iter().zip(op.eigenvalues()).map(|(gk, &mu)| gk * gk * weight(mu)).sum()
            }
            NoiseOperator::Multiplier(sigma) => {
                if modes >= op.len() {
                    let d = op.function_diagonal(weight);
                    sigma.iter().zip(&d).map(|(s, d)| s * s * d).sum()
                } else {
                    (0..modes)
                        .map(|k| {
                            let e = op.eigenvector(k);
                            let v: Vec<f64> = e.values().iter().zip(sigma).map(|(a, b)| a * b).collect();
                            let c = op.to_modes(&v);
                            c.iter().zip(op.eigenvalues()).map(|(a, &mu)| a * a * weight(mu)).sum::<f64>()
                        })
                        .sum()
                }
            }
        }
    }
}

impl NoiseSpec {
    pub fn additive(coeffs: Vec<f64>, gamma: f64) -> Self {
        let modes = coeffs.len();
        Self { kind: NoiseKind::Additive { coeffs }, gamma, modes }
    }

    pub fn multiplicative(scale: f64, epsilon: f64, delta: f64, gamma: f64, modes: usize) -> Self {
        Self { kind: NoiseKind::Multiplicative { scale, epsilon, delta, anchor: None }, gamma, modes }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self.kind, NoiseKind::Additive { .. })
    }

    pub fn validate(&self, op: &SpatialOperator) -> Result<()> {
        let half_dim = op.grid().dim as f64 / 2.0;
        if !(self.gamma > half_dim) {
            return Err(NoiseError::GammaViolation { gamma: self.gamma, half_dim });
        }
        if self.modes == 0 || self.modes > op.len() {
            return Err(NoiseError::InvalidParameter(format!(
                "truncation K = {} must lie in 1..={}",
                self.modes,
                op.len()
            )));
        }
        match &self.kind {
            NoiseKind::Additive { coeffs } => {
                if coeffs.len() != self.modes || coeffs.iter().any(|g| !g.is_finite()) {
                    return Err(NoiseError::InvalidParameter("need K finite coefficients".into()));
                }
            }
            NoiseKind::Multiplicative { scale, epsilon, delta, anchor } => {
                if !scale.is_finite() || !(*epsilon > 0.0) || !(*delta >= 0.0) {
                    return Err(NoiseError::InvalidParameter(
                        "multiplicative noise needs finite scale, epsilon > 0, delta >= 0".into(),
                    ));
                }
                if let Some(a) = anchor {
                    if a.len() != op.len() {
                        return Err(NoiseError::InvalidParameter("anchor length mismatch".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// The constant operator `G` of an additive spec.
    pub fn additive_operator(&self) -> Result<NoiseOperator> {
        match &self.kind {
            NoiseKind::Additive { coeffs } => {
                if coeffs.iter().all(|&g| g == 0.0) {
                    Ok(NoiseOperator::Zero)
                } else {
                    Ok(NoiseOperator::Diagonal(coeffs.clone()))
                }
            }
            _ => Err(NoiseError::WrongKind { expected: "additive" }),
        }
    }

    /// `‖G‖_{L_HS(L², target)}` with a Cauchy tail test on the partial sums.
    pub fn hs_norm(&self, op: &SpatialOperator, target: HsTarget) -> Result<f64> {
        let coeffs = match &self.kind {
            NoiseKind::Additive { coeffs } => coeffs,
            _ => return Err(NoiseError::WrongKind { expected: "additive" }),
        };
        let terms: Vec<f64> = coeffs
            .iter()
            .zip(op.eigenvalues())
            .map(|(g, &mu)| {
                let w = match target {
                    HsTarget::H => 1.0 / mu,
                    HsTarget::Smooth => mu.powf(2.0 * self.gamma),
                };
                g * g * w
            })
            .collect();
        let total: f64 = terms.iter().sum();
        let k = terms.len();
        if k >= 4 && total > 0.0 {
            let tail: f64 = terms[k - k / 4..].iter().sum();
            let tail_fraction = tail / total;
            if tail_fraction > 0.01 {
                return Err(NoiseError::Divergent { tail_fraction });
            }
        }
        Ok(total.sqrt())
    }

    fn smoothing_multipliers(&self, op: &SpatialOperator) -> Option<(f64, Vec<f64>)> {
        match &self.kind {
            NoiseKind::Multiplicative { scale, epsilon, delta, .. } => Some((
                *scale,
                op.eigenvalues().iter().map(|&mu| (1.0 + epsilon * mu).powf(-delta)).collect(),
            )),
            _ => None,
        }
    }

    /// `B(X)` as a pointwise multiplier `σ = scale (1+εA)^{-δ} X`.
    pub fn apply_b(&self, op: &SpatialOperator, x: &[f64]) -> Result<NoiseOperator> {
        let half_dim = op.grid().dim as f64 / 2.0;
        if !(self.gamma > half_dim) {
            return Err(NoiseError::GammaViolation { gamma: self.gamma, half_dim });
        }
        let anchor = match &self.kind {
            NoiseKind::Multiplicative { anchor, .. } => anchor.as_deref(),
            _ => return Err(NoiseError::WrongKind { expected: "multiplicative" }),
        };
        let (scale, mult) = self.smoothing_multipliers(op).expect("multiplicative");
        if scale == 0.0 {
            return Ok(NoiseOperator::Zero);
        }
        let source = anchor.unwrap_or(x);
        let mut c = op.to_modes(source);
        for (ck, m) in c.iter_mut().zip(&mult) {
            *ck *= scale * m;
        }
        let sigma = op.from_modes(&c);
        if sigma.iter().all(|&v| v == 0.0) {
            return Ok(NoiseOperator::Zero);
        }
        Ok(NoiseOperator::Multiplier(sigma))
    }

    /// Lipschitz constant of `X ↦ B(X)` from `H` into `L_HS(L², target)`,
    /// computed as the top generalized eigenvalue of the two quadratic forms.
    pub fn lipschitz_constant(&self, op: &SpatialOperator, target: HsTarget) -> Result<f64> {
        let (scale, epsilon, delta) = match &self.kind {
            NoiseKind::Multiplicative { anchor: Some(_), .. } => return Ok(0.0),
            NoiseKind::Multiplicative { scale, epsilon, delta, .. } => (*scale, *epsilon, *delta),
            _ => return Err(NoiseError::WrongKind { expected: "multiplicative" }),
        };
        if scale == 0.0 {
            return Ok(0.0);
        }
        let n = op.len();
        let w = op.grid().weight();
        let gamma = self.gamma;
        let weight = move |mu: f64| match target {
            HsTarget::H => 1.0 / mu,
            HsTarget::Smooth => mu.powf(2.0 * gamma),
        };
        // Kernel of the HS form: Q_ij = w · f(A)_ij · Σ_{k<K} e_k(i) e_k(j).
        let fa = op.dense_function(weight);
        let vecs: Vec<Vec<f64>> = (0..self.modes).map(|k| op.eigenvector(k).into_values()).collect();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let p: f64 = vecs.iter().map(|e| e[i] * e[j]).sum();
                q[(i, j)] = w * fa[(i, j)] * p;
            }
        }
        // Smoother composed with A^{1/2}: S = (1+εA)^{-δ} A^{1/2}.
        let s = op.dense_function(|m| (1.0 + epsilon * m).powf(-delta) * m.sqrt());
        let form = s.transpose() * q * &s;
        let sym = (&form + form.transpose()) * 0.5;
        let top = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(0.0, f64::max);
        Ok(scale.abs() * (top / w).sqrt())
    }
}

/// Increments `Δβ_k^n` of the first `K` Brownian motions on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    pub dt: f64,
    pub steps: usize,
    pub modes: usize,
    pub seed: u64,
    // Mode-major: increments[k * steps + n].
    increments: Vec<f64>,
}

/// Per-mode ChaCha streams keyed by `(seed, k)`; mode `k` is the same
/// Brownian motion whatever `K` is.
pub fn sample_wiener(modes: usize, dt: f64, steps: usize, seed: u64) -> Result<WienerPath> {
    if modes == 0 || steps == 0 || !(dt > 0.0) {
        return Err(NoiseError::InvalidParameter("need K, steps >= 1 and dt > 0".into()));
    }
    let sd = dt.sqrt();
    let mut increments = Vec::with_capacity(modes * steps);
    for k in 0..modes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            increments.push(sd * z);
        }
    }
    Ok(WienerPath { dt, steps, modes, seed, increments })
}

impl WienerPath {
    pub fn mode(&self, k: usize) -> &[f64] {
        &self.increments[k * self.steps..(k + 1) * self.steps]
    }

    /// `(Δβ_1^n, …, Δβ_K^n)` for step `n` (0-based, covering `[t_n, t_{n+1}]`).
    pub fn increment(&self, n: usize) -> Vec<f64> {
        (0..self.modes).map(|k| self.increments[k * self.steps + n]).collect()
    }

    /// Sums groups of `factor` consecutive increments (same Brownian path, coarser grid).
    pub fn coarsen(&self, factor: usize) -> Result<WienerPath> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(NoiseError::InvalidParameter(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = Vec::with_capacity(self.modes * steps);
        for k in 0..self.modes {
            for chunk in self.mode(k).chunks(factor) {
                increments.push(chunk.iter().sum());
            }
        }
        Ok(WienerPath { dt: self.dt * factor as f64, steps, modes: self.modes, seed: self.seed, increments })
    }

    /// Keeps only the first `modes` Brownian motions.
    pub fn truncate(&self, modes: usize) -> WienerPath {
        let modes = modes.min(self.modes);
        WienerPath {
            dt: self.dt,
            steps: self.steps,
            modes,
            seed: self.seed,
            increments: self.increments[..modes * self.steps].to_vec(),
        }
    }

    /// Mode-major CSV: one row per mode, `k,Δβ_k^1,…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,increments\n");
        for k in 0..self.modes {
            let row: Vec<String> = self.mode(k).iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&format!("{k},{}\n", row.join(",")));
        }
        out
    }
}

/// Stochastic convolution `W_G(t_n) = Σ_k g_k β_k(t_n) e_k` on every step.
#[derive(Clone, Debug)]
pub struct ConvolutionPath {
    pub values: Vec<Vec<f64>>,
    /// `δ = max_n |W_G(t_n)|_{L^∞}`.
    pub delta: f64,
}

pub fn convolution_path(spec: &NoiseSpec, op: &SpatialOperator, wiener: &WienerPath) -> Result<ConvolutionPath> {
    let g = spec.additive_operator()?;
    let mut current = vec![0.0; op.len()];
    let mut values = Vec::with_capacity(wiener.steps + 1);
    values.push(current.clone());
    let mut delta: f64 = 0.0;
    for n in 0..wiener.steps {
        let inc = g.increment(op, &wiener.increment(n)[..spec.modes.min(wiener.modes)]);
        for (c, d) in current.iter_mut().zip(&inc) {
            *c += d;
        }
        delta = delta.max(current.iter().fold(0.0, |m, v| m.max(v.abs())));
        values.push(current.clone());
    }
    Ok(ConvolutionPath { values, delta })
}

/// Convenience wrapper returning `W_G(t_n)` as fields.
pub fn convolution_fields(spec: &NoiseSpec, op: &SpatialOperator, wiener: &WienerPath) -> Result<Vec<Field>> {
    let path = convolution_path(spec, op, wiener)?;
    Ok(path
        .values
        .into_iter()
        .map(|v| Field::new(op.grid(), v).expect("finite convolution"))
        .collect())
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of ensemble member `index` derived from a base seed.
pub fn path_seed(base: u64, index: usize) -> u64 {
    mix64(base ^ mix64(index as u64 ^ 0xa076_1d64_78bd_642f))
}
