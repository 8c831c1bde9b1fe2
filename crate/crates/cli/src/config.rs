//! Declarative experiment configuration (JSON).

use std::path::PathBuf;

use monodiff::graph::GraphSpec;
use monodiff::noise::{ModeProfile, NoiseKind, NoiseSpec};
use monodiff::solver::{geometric_schedule, PicardConfig, SolverConfig};
use monodiff::spatial::{Field, SpatialOperator};
use monodiff::MonotoneGraph;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub spatial: SpatialFragment,
    #[serde(default)]
    pub initial: InitialFragment,
    #[serde(default)]
    pub noise: NoiseFragment,
    pub solver: SolverFragment,
    #[serde(default)]
    pub verifier: VerifierFragment,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialFragment {
    pub dim: usize,
    pub n: usize,
}

/// Initial datum on the interior grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialFragment {
    Zero,
    /// `amplitude · Π sin(mode·π·x_i)` (1-based mode).
    Sine { mode: usize, amplitude: f64 },
    /// Gaussian bump plus a constant offset.
    Bump {
        center: f64,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    Values { values: Vec<f64> },
}

impl Default for InitialFragment {
    fn default() -> Self {
        InitialFragment::Sine { mode: 1, amplitude: 1.0 }
    }
}

impl InitialFragment {
    pub fn build(&self, op: &SpatialOperator) -> Result<Field, CliError> {
        let grid = op.grid();
        let pi = std::f64::consts::PI;
        let two_d = grid.dim == 2;
        let field = match self {
            InitialFragment::Zero => Field::zeros(grid),
            InitialFragment::Sine { mode, amplitude } => {
                if *mode == 0 {
                    return Err(CliError::ConfigInvalid("initial sine mode is 1-based".into()));
                }
                let m = *mode as f64;
                Field::from_fn(grid, |x, y| {
                    let s = (m * pi * x).sin();
                    amplitude * if two_d { s * (m * pi * y).sin() } else { s }
                })
            }
            InitialFragment::Bump { center, width, amplitude, offset } => {
                if !(*width > 0.0) {
                    return Err(CliError::ConfigInvalid("bump width must be positive".into()));
                }
                Field::from_fn(grid, |x, y| {
                    let r2 = (x - center).powi(2) + if two_d { (y - center).powi(2) } else { 0.0 };
                    offset + amplitude * (-r2 / (2.0 * width * width)).exp()
                })
            }
            InitialFragment::Values { values } => Field::new(grid, values.clone())
                .map_err(|e| CliError::ConfigInvalid(format!("initial values: {e}")))?,
        };
        if field.values().iter().any(|v| !v.is_finite()) {
            return Err(CliError::ConfigInvalid("initial datum is not finite".into()));
        }
        Ok(field)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFragment {
    #[default]
    None,
    Additive {
        gamma: f64,
        #[serde(default)]
        modes: Option<usize>,
        profile: ModeProfile,
    },
    Multiplicative {
        gamma: f64,
        #[serde(default)]
        modes: Option<usize>,
        scale: f64,
        epsilon: f64,
        delta: f64,
    },
}

fn default_inner_tol() -> f64 {
    1e-11
}

fn default_inner_max_iter() -> usize {
    60
}

fn default_snapshots() -> usize {
    65
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFragment {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Explicit schedule; otherwise `lambda0 · 2^{-i}` for `levels` levels.
    #[serde(default)]
    pub lambda_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_max_iter")]
    pub inner_max_iter: usize,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_true")]
    pub enforce_cauchy: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Selection,
    Apriori,
    EnergyIdentity,
    TwoPathStability,
    Lipschitz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPathFragment {
    /// Second initial datum (defaults to the first).
    #[serde(default)]
    pub y: Option<InitialFragment>,
    /// 0-based mode receiving the coefficient perturbation of `G₂`.
    #[serde(default)]
    pub perturb_mode: usize,
    #[serde(default)]
    pub perturb_value: f64,
}

fn default_paths() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierFragment {
    #[serde(default)]
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also run the energy identity at dt/4.
    #[serde(default)]
    pub refine: bool,
    #[serde(default)]
    pub two_path: Option<TwoPathFragment>,
    /// Initial-data pairs for the Lipschitz check; three sine perturbations of
    /// the initial datum when absent.
    #[serde(default)]
    pub lipschitz_pairs: Option<Vec<(InitialFragment, InitialFragment)>>,
}

impl Default for VerifierFragment {
    fn default() -> Self {
        Self {
            checks: vec![CheckKind::Selection],
            paths: default_paths(),
            seed: 0,
            refine: false,
            two_path: None,
            lipschitz_pairs: None,
        }
    }
}

/// Noise choice after validation.
#[derive(Clone, Debug)]
pub enum NoiseChoice {
    None,
    Additive(NoiseSpec),
    Multiplicative(NoiseSpec),
}

/// Fully built and validated experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub graph: MonotoneGraph,
    pub op: SpatialOperator,
    pub x: Field,
    pub noise: NoiseChoice,
    pub solver: SolverConfig,
    pub seed: u64,
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::ConfigInvalid(e.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigInvalid(format!("config parse error: {e}")))
    }

    /// Validates every fragment and builds the experiment objects.
    pub fn build(&self, seed_override: Option<u64>) -> Result<Experiment, CliError> {
        let graph = self.graph.build().map_err(invalid)?;
        let op = SpatialOperator::new(self.spatial.dim, self.spatial.n).map_err(invalid)?;
        let x = self.initial.build(&op)?;
        let noise = match &self.noise {
            NoiseFragment::None => NoiseChoice::None,
            NoiseFragment::Additive { gamma, modes, profile } => {
                let k = modes.unwrap_or(op.len());
                if k == 0 || k > op.len() {
                    return Err(invalid(format!("noise modes must lie in 1..={}", op.len())));
                }
                let spec = NoiseSpec::additive(profile.coefficients(&op, k), *gamma);
                spec.validate(&op).map_err(invalid)?;
                NoiseChoice::Additive(spec)
            }
            NoiseFragment::Multiplicative { gamma, modes, scale, epsilon, delta } => {
                let k = modes.unwrap_or(op.len());
                let spec = NoiseSpec::multiplicative(*scale, *epsilon, *delta, *gamma, k);
                spec.validate(&op).map_err(invalid)?;
                NoiseChoice::Multiplicative(spec)
            }
        };
        let s = &self.solver;
        let schedule = match (&s.lambda_schedule, s.lambda0, s.levels) {
            (Some(v), None, None) => v.clone(),
            (None, l0, levels) => geometric_schedule(l0.unwrap_or(1.0), levels.unwrap_or(8)),
            _ => return Err(invalid("give either lambda_schedule or lambda0/levels, not both")),
        };
        let solver = SolverConfig {
            dt: s.dt,
            t_final: s.t_final,
            lambda_schedule: schedule,
            inner_tol: s.inner_tol,
            inner_max_iter: s.inner_max_iter,
            picard: s.picard.clone(),
            snapshots: s.snapshots,
            enforce_cauchy: s.enforce_cauchy,
            cauchy_floor: 1e-10,
            keep_steps: true,
        };
        solver.validate().map_err(invalid)?;
        let v = &self.verifier;
        if v.paths == 0 {
            return Err(invalid("verifier.paths must be positive"));
        }
        for check in &v.checks {
            match (check, &noise) {
                (CheckKind::EnergyIdentity | CheckKind::TwoPathStability, NoiseChoice::Multiplicative(_)) => {
                    return Err(invalid(format!("check {check:?} needs additive or no noise")));
                }
                (CheckKind::Lipschitz, NoiseChoice::Additive(_) | NoiseChoice::None) => {
                    return Err(invalid("the lipschitz check needs multiplicative noise"));
                }
                _ => {}
            }
        }
        if let Some(tp) = &v.two_path {
            if let Some(y) = &tp.y {
                y.build(&op)?;
            }
            let k = match &noise {
                NoiseChoice::Additive(spec) => spec.modes,
                _ => op.len(),
            };
            if tp.perturb_mode >= k {
                return Err(invalid(format!("two_path.perturb_mode must be below {k}")));
            }
        }
        if let Some(pairs) = &v.lipschitz_pairs {
            for (a, b) in pairs {
                a.build(&op)?;
                b.build(&op)?;
            }
        }
        Ok(Experiment {
            config: self.clone(),
            graph,
            op,
            x,
            noise,
            solver,
            seed: seed_override.unwrap_or(v.seed),
        })
    }
}

impl Experiment {
    /// Additive spec for `G₂` of the two-path check.
    pub fn perturbed_spec(&self, base: &NoiseSpec, tp: &TwoPathFragment) -> NoiseSpec {
        let mut spec = base.clone();
        if let NoiseKind::Additive { coeffs } = &mut spec.kind {
            coeffs[tp.perturb_mode] += tp.perturb_value;
        }
        spec
    }

    /// Zero-noise additive spec, used when the experiment has no noise.
    pub fn zero_spec(&self) -> NoiseSpec {
        NoiseSpec::additive(vec![0.0; self.op.len()], self.op.grid().dim as f64 / 2.0 + 1.0)
    }
}
