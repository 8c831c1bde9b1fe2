//! Running an experiment, writing its artifacts, and replaying a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use monodiff::noise::{path_seed, sample_wiener};
use monodiff::solver::{self, PicardOutcome, SolutionPath};
use monodiff::verifier::{self, CheckReport, EnsembleSettings};
use monodiff::Field;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CheckKind, Experiment, ExperimentConfig, NoiseChoice, TwoPathFragment};
use crate::CliError;

pub const STATES_FILE: &str = "states.csv";
pub const SELECTIONS_FILE: &str = "selections.csv";
pub const CHECKS_FILE: &str = "checks.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InventoryEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub checks: Vec<CheckReport>,
    pub inventory: Vec<InventoryEntry>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Computed {
    path: SolutionPath,
    picard: Option<PicardOutcome>,
    checks: Vec<CheckReport>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn unix_now() -> (u64, u128) {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    (d.as_secs(), d.as_nanos())
}

fn table(path: &SolutionPath, fields: &[Field]) -> String {
    let mut out = String::from("time");
    for i in 0..path.grid.len() {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (t, f) in path.times.iter().zip(fields) {
        let _ = write!(out, "{t:e}");
        for v in f.values() {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

fn checks_table(checks: &[CheckReport]) -> String {
    let mut out = String::from("check,time,measured,bound\n");
    for c in checks {
        for row in c.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

fn default_pairs(exp: &Experiment) -> Vec<(Field, Field)> {
    (0..3.min(exp.op.len()))
        .map(|k| {
            let e = exp.op.eigenvector(k);
            let e = e.scaled(0.1 / e.max_abs());
            (exp.x.clone(), exp.x.add(&e).expect("same grid"))
        })
        .collect()
}

fn compute(exp: &Experiment) -> Result<Computed, CliError> {
    let steps = exp.solver.steps()?;
    let v = &exp.config.verifier;
    let (path, picard) = match &exp.noise {
        NoiseChoice::None => (solver::solve_deterministic(&exp.graph, &exp.op, &exp.x, &exp.solver)?, None),
        NoiseChoice::Additive(spec) => {
            let w = sample_wiener(spec.modes, exp.solver.dt, steps, path_seed(exp.seed, 0))?;
            (solver::solve_additive(&exp.graph, &exp.op, &exp.x, spec, &w, &exp.solver)?, None)
        }
        NoiseChoice::Multiplicative(spec) => {
            let wieners = solver::ensemble_wieners(spec.modes, exp.solver.dt, steps, exp.seed, v.paths)?;
            let mut out = solver::picard_solve(&exp.graph, &exp.op, &exp.x, spec, &wieners, &exp.solver)?;
            if !out.converged {
                return Err(CliError::SolverFailure(format!(
                    "Picard iteration did not reach tol {:e} in {} iterations (distances {:?})",
                    exp.solver.picard.tol, exp.solver.picard.max_iter, out.distances
                )));
            }
            let first = out.paths.swap_remove(0);
            out.paths.clear();
            (first, Some(out))
        }
    };
    let ensemble = EnsembleSettings { paths: v.paths, base_seed: exp.seed };
    let mut checks = Vec::new();
    for kind in &v.checks {
        let report = match kind {
            CheckKind::Selection => verifier::check_selection(&path, &exp.graph, &exp.op)?,
            CheckKind::Apriori => verifier::check_apriori(&path, &exp.graph, &exp.op)?,
            CheckKind::EnergyIdentity => {
                let spec = match &exp.noise {
                    NoiseChoice::Additive(s) => s.clone(),
                    _ => exp.zero_spec(),
                };
                verifier::check_energy_identity(&exp.graph, &exp.op, &exp.x, &spec, &exp.solver, &ensemble, v.refine)?
            }
            CheckKind::TwoPathStability => {
                let base = match &exp.noise {
                    NoiseChoice::Additive(s) => s.clone(),
                    _ => exp.zero_spec(),
                };
                let tp = v.two_path.clone().unwrap_or(TwoPathFragment { y: None, perturb_mode: 0, perturb_value: 0.0 });
                let y = match &tp.y {
                    Some(frag) => frag.build(&exp.op)?,
                    None if v.two_path.is_none() => exp.x.scaled(0.5),
                    None => exp.x.clone(),
                };
                let g2 = exp.perturbed_spec(&base, &tp);
                verifier::check_two_path_stability(&exp.graph, &exp.op, &base, &g2, &exp.x, &y, &exp.solver, &ensemble)?
            }
            CheckKind::Lipschitz => {
                let NoiseChoice::Multiplicative(spec) = &exp.noise else {
                    return Err(CliError::ConfigInvalid("the lipschitz check needs multiplicative noise".into()));
                };
                let pairs = match &v.lipschitz_pairs {
                    Some(list) => list
                        .iter()
                        .map(|(a, b)| Ok((a.build(&exp.op)?, b.build(&exp.op)?)))
                        .collect::<Result<Vec<_>, CliError>>()?,
                    None => default_pairs(exp),
                };
                verifier::check_lipschitz_solution_map(&exp.graph, &exp.op, spec, &pairs, &exp.solver, &ensemble)?
            }
        };
        checks.push(report);
    }
    Ok(Computed { path, picard, checks })
}

fn check_summary(c: &CheckReport) -> Value {
    json!({
        "name": c.name,
        "passed": c.passed,
        "measured": c.measured,
        "tolerance": c.tolerance,
        "sample_size": c.sample_size,
        "seeds": c.seeds,
    })
}

fn picard_summary(p: &PicardOutcome, alpha: f64) -> Value {
    json!({
        "alpha": alpha,
        "iterations": p.distances.len(),
        "distances": p.distances,
        "ratios": p.ratios,
        "converged": p.converged,
        "lipschitz": p.lipschitz,
        "predicted_ratio_bound": p.lipschitz / (2.0 * alpha).sqrt(),
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<InventoryEntry, CliError> {
    fs::write(dir.join(name), text)?;
    Ok(InventoryEntry { file: name.to_string(), sha256: sha256_hex(text.as_bytes()), bytes: text.len() as u64 })
}

fn quarantine(out: &Path, staging: &Path, stamp: u64, err: &CliError) -> PathBuf {
    let mut target = out.join(format!("quarantine-{stamp}"));
    let mut k = 1;
    while target.exists() {
        target = out.join(format!("quarantine-{stamp}-{k}"));
        k += 1;
    }
    if fs::rename(staging, &target).is_err() {
        let _ = fs::create_dir_all(&target);
    }
    let _ = fs::write(target.join("error.txt"), format!("{err}\nexit code {}\n", err.exit_code()));
    target
}

/// Validates, computes and writes `states.csv`, `selections.csv`,
/// `checks.csv` and finally `manifest.json` into `out`. Failed checks still
/// produce the full artifact set.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<RunSummary, CliError> {
    let exp = config.build(seed)?;
    fs::create_dir_all(out)?;
    let (stamp, nanos) = unix_now();
    let staging = out.join(format!(".staging-{}-{nanos}", std::process::id()));
    fs::create_dir_all(&staging)?;
    let started = Instant::now();
    let result = compute(&exp).and_then(|c| stage(&exp, &c, &staging, started, stamp).map(|m| (c, m)));
    let (computed, (inventory, manifest_text)) = match result {
        Ok(v) => v,
        Err(e) => {
            quarantine(out, &staging, stamp, &e);
            return Err(e);
        }
    };
    for entry in &inventory {
        fs::rename(staging.join(&entry.file), out.join(&entry.file))?;
    }
    fs::write(staging.join(MANIFEST_FILE), manifest_text)?;
    fs::rename(staging.join(MANIFEST_FILE), out.join(MANIFEST_FILE))?;
    fs::remove_dir_all(&staging)?;
    Ok(RunSummary { manifest: out.join(MANIFEST_FILE), checks: computed.checks, inventory })
}

fn stage(
    exp: &Experiment,
    c: &Computed,
    staging: &Path,
    started: Instant,
    stamp: u64,
) -> Result<(Vec<InventoryEntry>, String), CliError> {
    let inventory = vec![
        write_file(staging, STATES_FILE, &table(&c.path, &c.path.states))?,
        write_file(staging, SELECTIONS_FILE, &table(&c.path, &c.path.selections))?,
        write_file(staging, CHECKS_FILE, &checks_table(&c.checks))?,
    ];
    let status = if c.checks.iter().all(|r| r.passed) { "passed" } else { "checks_failed" };
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": exp.config,
        "seeds": { "base": exp.seed, "primary_path": path_seed(exp.seed, 0) },
        "started_unix": stamp,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "workers": rayon::current_num_threads(),
        "grid": { "dim": exp.op.grid().dim, "n": exp.op.grid().n, "unknowns": exp.op.len() },
        "steps": c.path.steps,
        "lambda_final": c.path.lambda,
        "cauchy": c.path.diagnostics.levels,
        "diagnostics": c.path.diagnostics,
        "picard": c.picard.as_ref().map(|p| picard_summary(p, exp.solver.picard.alpha)),
        "checks": c.checks.iter().map(check_summary).collect::<Vec<_>>(),
        "inventory": inventory,
        "status": status,
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::SolverFailure(format!("manifest serialization: {e}")))?;
    Ok((inventory, text))
}

fn manifest_field<'a>(m: &'a Value, key: &str) -> Result<&'a Value, CliError> {
    m.get(key).ok_or_else(|| CliError::ReproMismatch(format!("manifest has no `{key}` field")))
}

fn parse_inventory(m: &Value) -> Result<Vec<(String, String)>, CliError> {
    let list = manifest_field(m, "inventory")?
        .as_array()
        .ok_or_else(|| CliError::ReproMismatch("inventory is not a list".into()))?;
    list.iter()
        .map(|e| match (e.get("file").and_then(Value::as_str), e.get("sha256").and_then(Value::as_str)) {
            (Some(f), Some(h)) => Ok((f.to_string(), h.to_string())),
            _ => Err(CliError::ReproMismatch(format!("malformed inventory entry {e}"))),
        })
        .collect()
}

/// Re-runs the manifest's config with its recorded base seed in a scratch
/// directory and compares every inventoried checksum.
pub fn replay(manifest_path: &Path) -> Result<Vec<InventoryEntry>, CliError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| CliError::ReproMismatch(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let manifest: Value =
        serde_json::from_str(&text).map_err(|e| CliError::ReproMismatch(format!("manifest parse error: {e}")))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let inventory = parse_inventory(&manifest)?;
    let missing: Vec<&str> =
        inventory.iter().filter(|(f, _)| !dir.join(f).is_file()).map(|(f, _)| f.as_str()).collect();
    if !missing.is_empty() {
        let present: Vec<&str> =
            inventory.iter().filter(|(f, _)| dir.join(f).is_file()).map(|(f, _)| f.as_str()).collect();
        return Err(CliError::ReproMismatch(format!(
            "inventory diff: missing {missing:?}, present {present:?}"
        )));
    }
    let mut diffs = Vec::new();
    for (file, hash) in &inventory {
        let actual = sha256_hex(&fs::read(dir.join(file))?);
        if &actual != hash {
            diffs.push(format!("{file}: manifest {hash}, on disk {actual}"));
        }
    }
    let config: ExperimentConfig = serde_json::from_value(manifest_field(&manifest, "config")?.clone())
        .map_err(|e| CliError::ReproMismatch(format!("manifest config: {e}")))?;
    let seed = manifest_field(&manifest, "seeds")?
        .get("base")
        .and_then(Value::as_u64)
        .ok_or_else(|| CliError::ReproMismatch("manifest has no seeds.base".into()))?;
    let scratch = tempfile::tempdir()?;
    let rerun = run_experiment(&config, scratch.path(), Some(seed))?.inventory;
    for (file, hash) in &inventory {
        match rerun.iter().find(|e| &e.file == file) {
            Some(e) if &e.sha256 == hash => {}
            Some(e) => diffs.push(format!("{file}: manifest {hash}, replay {}", e.sha256)),
            None => diffs.push(format!("{file}: not produced by replay")),
        }
    }
    if diffs.is_empty() {
        Ok(rerun)
    } else {
        Err(CliError::ReproMismatch(diffs.join("; ")))
    }
}

