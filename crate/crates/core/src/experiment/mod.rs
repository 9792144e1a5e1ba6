//! Configuration-driven runs: Hardy estimation, background construction,
//! perturbation evolution, diagnostics and artifact emission.

mod config;

pub use config::{ExperimentConfig, GridConfig, Scenario};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::{
    decay_report, multiplier_bound_violation, sample_pairs, write_rows, DecayReport, DecayThresholds, DiagnosticsRow,
    GenEnergyCheck, PsiMode, SplittingDiagnostics, SplittingMonitor, SplittingTotals, DIAGNOSTICS_COLUMNS,
};
use crate::error::{Error, Result};
use crate::function_spaces::{estimate_hardy_constant, HardyEstimate, SpaceNorm};
use crate::grid::GridSpec;
use crate::mild::{calderon_split, homogeneous_minus_one_data, picard_iterate, quadratic_times, MildTrajectory};
use crate::perturbation::{step_count, EnergyLedger, EvolutionState, EvolveOptions, Evolver};
use crate::spectral::checkpoint::Checkpoint;
use crate::spectral::{l2_norm_sq, random_divfree_field, SpectralVectorField};

/// Slices of the quadratic time grid carrying the mild solution.
pub const PICARD_SLICES: usize = 24;
pub const PICARD_MAX_ITERS: usize = 30;
pub const PICARD_TOL: f64 = 1e-10;
/// Spectrum exponent of the random perturbation data.
pub const W0_SPECTRUM: f64 = 2.0;
pub const GEN_ENERGY_PAIRS: usize = 10;
/// `K sup ||V||_X` target when searching the Calderon height.
pub const CALDERON_PRODUCT: f64 = 0.5;
pub const CALDERON_HALVINGS: usize = 16;
/// Energy tolerance relative to `||w0||^2`.
pub const ENERGY_TOL: f64 = 1e-6;
/// Relative slack allowed in the analytic bound checks.
pub const BOUND_REL_TOL: f64 = 1e-9;

const MILD_FILE: &str = "mild.ckpt";
const CHECKPOINT_DIR: &str = "checkpoints";
const W0_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub details: Vec<String>,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        Self { name: name.into(), passed: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(format!("[{}] {detail}", if ok { "pass" } else { "FAIL" }));
    }
}

/// Everything a run produced, also written to the output directory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub config: ExperimentConfig,
    pub k_hat: f64,
    pub k_sup_v: f64,
    pub calderon_height: Option<f64>,
    pub picard_increments: Vec<f64>,
    pub ledger: Option<EnergyLedger>,
    pub diagnostics: Option<SplittingDiagnostics>,
    pub decay: Option<DecayReport>,
    pub suites: Vec<SuiteResult>,
    /// Stage error that ended the run early, if any.
    pub failure: Option<String>,
    pub final_step: usize,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.suites.iter().all(|s| s.passed)
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn random_w0(grid: &GridSpec, seed: u64, rms: f64) -> Result<SpectralVectorField> {
    let f = random_divfree_field(grid, W0_SPECTRUM, seed ^ W0_STREAM)?;
    let now = (l2_norm_sq(&f) / grid.volume()).sqrt();
    Ok(f.scaled(rms / now))
}

struct Background {
    v: MildTrajectory,
    w0: SpectralVectorField,
    calderon_height: Option<f64>,
}

fn build_background(cfg: &ExperimentConfig, grid: &GridSpec, k_hat: f64) -> Result<Background> {
    let times = quadratic_times(cfg.t_max.max(cfg.dt), PICARD_SLICES);
    match cfg.scenario {
        Scenario::ZeroV => Ok(Background {
            v: MildTrajectory::zero(grid, cfg.space).with_k(k_hat),
            w0: random_w0(grid, cfg.seed, cfg.amplitude)?,
            calderon_height: None,
        }),
        Scenario::SmallStationaryV => {
            let v0 = homogeneous_minus_one_data(grid, cfg.amplitude, cfg.seed)?;
            Ok(Background {
                v: MildTrajectory::stationary(&v0, cfg.space)?.with_k(k_hat),
                w0: random_w0(grid, cfg.seed, 1.0)?,
                calderon_height: None,
            })
        }
        Scenario::SelfSimilarV => {
            let v0 = homogeneous_minus_one_data(grid, cfg.amplitude, cfg.seed)?;
            let v = picard_iterate(&v0, &times, PICARD_MAX_ITERS, PICARD_TOL, cfg.space)?.with_k(k_hat);
            Ok(Background { v, w0: random_w0(grid, cfg.seed, 1.0)?, calderon_height: None })
        }
        Scenario::CalderonSplit => {
            let u0 = homogeneous_minus_one_data(grid, cfg.amplitude, cfg.seed)?;
            let mut r = 1.0;
            let mut last = String::new();
            for _ in 0..=CALDERON_HALVINGS {
                let split = calderon_split(&u0, r)?;
                match picard_iterate(&split.v0, &times, PICARD_MAX_ITERS, PICARD_TOL, cfg.space) {
                    Ok(v) => {
                        let v = v.with_k(k_hat);
                        if v.smallness_product() <= CALDERON_PRODUCT {
                            return Ok(Background { v, w0: split.w0, calderon_height: Some(r) });
                        }
                        last = format!("K sup ||V|| = {} at R = {r}", v.smallness_product());
                    }
                    Err(e) => last = format!("R = {r}: {e}"),
                }
                r *= 0.5;
            }
            Err(Error::NotSmall(format!("no admissible truncation height found ({last})")))
        }
    }
}

fn write_mild(path: &Path, v: &MildTrajectory) -> Result<()> {
    let mut ck = Checkpoint::new(&v.grid);
    for (i, s) in v.slices.iter().enumerate() {
        ck.fields.push((format!("V.{i}"), s.clone()));
    }
    ck.arrays.push(("times".into(), v.times.clone()));
    ck.arrays.push(("increments".into(), v.increments.clone()));
    ck.arrays.push(("scalars".into(), vec![v.sup_norm, v.k_used, v.iterations as f64]));
    ck.metadata.insert("space".into(), v.space.to_string());
    ck.write(path)
}

fn read_mild(path: &Path) -> Result<MildTrajectory> {
    let ck = Checkpoint::read(path)?;
    let missing = |what: &str| Error::Checkpoint { path: path.into(), reason: format!("missing {what}") };
    let times = ck.array("times").ok_or_else(|| missing("times"))?.to_vec();
    let scalars = ck.array("scalars").ok_or_else(|| missing("scalars"))?;
    let space: SpaceNorm = ck.metadata.get("space").ok_or_else(|| missing("space"))?.parse()?;
    let slices = (0..times.len())
        .map(|i| ck.field(&format!("V.{i}")).cloned().ok_or_else(|| missing("slice")))
        .collect::<Result<Vec<_>>>()?;
    Ok(MildTrajectory {
        grid: ck.grid,
        times,
        slices,
        space,
        sup_norm: scalars[0],
        k_used: scalars[1],
        increments: ck.array("increments").ok_or_else(|| missing("increments"))?.to_vec(),
        iterations: scalars[2] as usize,
    })
}

fn flatten_checks(checks: &[GenEnergyCheck]) -> Vec<f64> {
    checks
        .iter()
        .flat_map(|c| {
            let mode = if c.mode == PsiMode::HeatKernelShifted { 0.0 } else { 1.0 };
            [mode, c.s, c.t, c.lhs, c.rhs, c.slack]
        })
        .collect()
}

fn unflatten_checks(v: &[f64]) -> Vec<GenEnergyCheck> {
    v.chunks_exact(6)
        .map(|c| GenEnergyCheck {
            mode: if c[0] == 0.0 { PsiMode::HeatKernelShifted } else { PsiMode::DeltaMinusPhi },
            s: c[1],
            t: c[2],
            lhs: c[3],
            rhs: c[4],
            slack: c[5],
        })
        .collect()
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    k_hat: f64,
    w0: &'a SpectralVectorField,
    prior_checks: Vec<GenEnergyCheck>,
}

impl RunContext<'_> {
    fn write_checkpoint(&self, state: &EvolutionState, monitor: &SplittingMonitor) -> Result<PathBuf> {
        let dir = self.dir.join(CHECKPOINT_DIR);
        ensure_dir(&dir)?;
        let path = dir.join(format!("step_{:08}.ckpt", state.step));
        let mut ck = Checkpoint::new(state.w.grid());
        ck.seed = Some(self.cfg.seed);
        ck.fields.push(("w".into(), state.w.clone()));
        ck.fields.push(("w0".into(), self.w0.clone()));
        let l = &state.ledger;
        ck.arrays.push(("ledger.t".into(), l.times.clone()));
        ck.arrays.push(("ledger.l2_sq".into(), l.l2_sq.clone()));
        ck.arrays.push(("ledger.grad_l2_sq".into(), l.grad_l2_sq.clone()));
        ck.arrays.push(("ledger.dissipation_cum".into(), l.dissipation_cum.clone()));
        ck.arrays.push(("ledger.k_sup_v".into(), vec![l.k_sup_v]));
        ck.arrays.push(("k_hat".into(), vec![self.k_hat]));
        ck.arrays.push(("diagnostics".into(), monitor.rows().iter().flat_map(|r| r.to_array()).collect()));
        ck.arrays.push(("totals".into(), monitor.totals().to_vec()));
        let mut checks = self.prior_checks.clone();
        checks.extend_from_slice(monitor.checks());
        ck.arrays.push(("gen_energy".into(), flatten_checks(&checks)));
        ck.arrays.push(("pending_pairs".into(), monitor.pending_pairs()));
        ck.metadata.insert("config".into(), self.cfg.to_toml_string()?);
        ck.metadata.insert("step".into(), state.step.to_string());
        ck.metadata.insert("mild_file".into(), format!("../{MILD_FILE}"));
        ck.write(&path)?;
        Ok(path)
    }
}

/// Evolves from `evolver` to `target`, checkpointing on the configured cadence
/// and always at the end. Returns the stage error, if any.
fn drive(
    ctx: &RunContext<'_>,
    evolver: &mut Evolver<'_>,
    monitor: &mut SplittingMonitor,
    target: usize,
) -> Result<Option<String>> {
    let every = ctx.cfg.checkpoint_every;
    let mut failure = None;
    loop {
        let here = evolver.state().step;
        let next = if every == 0 { target } else { ((here / every) + 1) * every }.min(target);
        if let Err(e) = evolver.advance(next, monitor, &mut |_| Ok(())) {
            failure = Some(e.to_string());
            break;
        }
        if every > 0 && next % every == 0 && next != target {
            ctx.write_checkpoint(evolver.state(), monitor)?;
        }
        if next >= target {
            break;
        }
    }
    ctx.write_checkpoint(evolver.state(), monitor)?;
    Ok(failure)
}

fn energy_suite(ledger: &EnergyLedger, final_w: &SpectralVectorField, admissible: bool) -> SuiteResult {
    let mut s = SuiteResult::new("energy_ledger");
    let tol = ENERGY_TOL * ledger.l2_sq[0];
    let (slack, i, j) = ledger.min_pair_slack();
    s.check(slack >= -tol, format!("min pair slack {slack:e} at (t={}, t={}), tol {tol:e}", ledger.times[i], ledger.times[j]));
    if admissible {
        let ex = ledger.dissipation_bound_excess();
        s.check(ex <= tol, format!("dissipation bound excess {ex:e}"));
    }
    let div = final_w.divergence_residual();
    s.check(div <= 1e-9, format!("final divergence residual {div:e}"));
    s
}

fn splitting_suite(d: &SplittingDiagnostics, grid: &GridSpec) -> SuiteResult {
    let mut s = SuiteResult::new("fourier_splitting");
    let w0 = d.totals.w0_l2_sq.sqrt();
    s.check(d.totals.weight_residual <= 1e-12, format!("max |E' - 2EG^2| / E' = {:e}", d.totals.weight_residual));
    let viol = multiplier_bound_violation(grid);
    s.check(viol <= 0.0, format!("multiplier bound violation {viol:e}"));
    let tri = d.triangle_margin();
    s.check(tri >= -1e-10 * w0.max(1.0), format!("triangle margin {tri:e}"));
    for b in &d.bound_checks {
        s.check(b.holds(BOUND_REL_TOL), format!("{}: {:e} <= {:e}", b.name, b.lhs, b.rhs));
    }
    let t_end = d.rows.last().map_or(0.0, |r| r.t);
    if d.budget_past_peak(0.5 * t_end) {
        s.check(d.budget_trend_holds(), "budget ratio at t_max below its value at t_max/2".into());
    } else if t_end > 0.0 {
        s.details.push("[skip] budget ratio still rising at t_max/2".into());
    }
    s
}

fn gen_energy_suite(checks: &[GenEnergyCheck], w0_l2_sq: f64) -> SuiteResult {
    let mut s = SuiteResult::new("generalized_energy");
    let tol = ENERGY_TOL * w0_l2_sq;
    for c in checks {
        s.check(c.slack >= -tol, format!("{} s={} t={}: slack {:e}", c.mode, c.s, c.t, c.slack));
    }
    s
}

fn format_report(o: &RunOutcome, hardy: Option<&HardyEstimate>, v: Option<&MildTrajectory>) -> String {
    let mut r = String::new();
    let c = &o.config;
    let _ = writeln!(r, "scenario {} in {} on N={} L={} dealias={}", c.scenario, c.space, c.grid.points_per_axis, c.grid.box_length, c.grid.dealias);
    let _ = writeln!(r, "t_max {} dt {} alpha {} seed {}", c.t_max, c.dt, c.alpha, c.seed);
    if let Some(h) = hardy {
        let _ = writeln!(r, "hardy: K_hat {:e} over {} trials ({} redrawn)", h.k_hat, h.trials, h.rejected);
    }
    if let Some(v) = v {
        let _ = writeln!(r, "background: sup ||V||_X {:e}, K sup ||V||_X {:e}, picard iterations {}", v.sup_norm, o.k_sup_v, v.iterations);
        if !v.increments.is_empty() {
            let _ = writeln!(r, "  picard increments {:?}", v.increments);
        }
    }
    if let Some(h) = o.calderon_height {
        let _ = writeln!(r, "calderon height R {h}");
    }
    if let Some(l) = &o.ledger {
        let (slack, i, j) = l.min_pair_slack();
        let _ = writeln!(r, "ledger: {} rows, ||w0||^2 {:e}, min pair slack {:e} at ({}, {})", l.len(), l.l2_sq[0], slack, l.times[i], l.times[j]);
    }
    if let Some(d) = &o.diagnostics {
        let _ = writeln!(r, "generalized energy checks:");
        for g in &d.gen_energy {
            let _ = writeln!(r, "  {:<20} s {:<10} t {:<10} lhs {:e} rhs {:e} slack {:e}", g.mode.to_string(), g.s, g.t, g.lhs, g.rhs, g.slack);
        }
        let _ = writeln!(r, "bound checks:");
        for b in &d.bound_checks {
            let _ = writeln!(r, "  {:<22} {:e} <= {:e}", b.name, b.lhs, b.rhs);
        }
    }
    if let Some(dec) = &o.decay {
        let _ = write!(r, "{dec}");
    }
    let _ = writeln!(r, "invariant suites:");
    for s in &o.suites {
        let _ = writeln!(r, "  {} {}", s.name, if s.passed { "PASS" } else { "FAIL" });
        for d in &s.details {
            let _ = writeln!(r, "    {d}");
        }
    }
    if let Some(f) = &o.failure {
        let _ = writeln!(r, "run stopped early: {f}");
    }
    let _ = writeln!(r, "overall {}", if o.passed() { "PASS" } else { "FAIL" });
    r
}

fn write_ledger_and_diagnostics(dir: &Path, ledger: &EnergyLedger, rows: &[DiagnosticsRow], checks: &[GenEnergyCheck]) -> Result<()> {
    ledger.write_csv_file(&dir.join("ledger.csv"))?;
    let path = dir.join("diagnostics.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_rows(rows, std::io::BufWriter::new(file))?;
    let path = dir.join("gen_energy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["mode", "s", "t", "lhs", "rhs", "slack"])?;
    for c in checks {
        w.write_record([c.mode.to_string(), format!("{:e}", c.s), format!("{:e}", c.t), format!("{:e}", c.lhs), format!("{:e}", c.rhs), format!("{:e}", c.slack)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn finish_evolution(
    outcome: &mut RunOutcome,
    dir: &Path,
    state: &EvolutionState,
    monitor: SplittingMonitor,
    prior_checks: Vec<GenEnergyCheck>,
    v: &MildTrajectory,
    grid: &GridSpec,
) -> Result<()> {
    let mut diag = monitor.finish();
    let mut checks = prior_checks;
    checks.append(&mut diag.gen_energy);
    diag.gen_energy = checks;
    write_ledger_and_diagnostics(dir, &state.ledger, &diag.rows, &diag.gen_energy)?;
    let admissible = v.is_zero() || v.admissible();
    outcome.suites.push(energy_suite(&state.ledger, &state.w, admissible));
    outcome.suites.push(gen_energy_suite(&diag.gen_energy, state.ledger.l2_sq[0]));
    outcome.suites.push(splitting_suite(&diag, grid));
    let decay = decay_report(&state.ledger, &diag, v, DecayThresholds::default())?;
    let mut s = SuiteResult::new("decay");
    let inc = decay.max_energy_increase;
    s.check(!(inc > ENERGY_TOL), format!("max increase of ||w||^2 between levels {inc:e} (relative)"));
    outcome.suites.push(s);
    outcome.decay = Some(decay);
    outcome.diagnostics = Some(diag);
    outcome.ledger = Some(state.ledger.clone());
    outcome.final_step = state.step;
    Ok(())
}

/// Runs one experiment. `output_override` replaces `output_dir`.
pub fn run(cfg: &ExperimentConfig, output_override: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let grid = cfg.grid_spec()?;
    let dir = output_override.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    ensure_dir(&dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml_string()?)?;
    let mut outcome = RunOutcome {
        output_dir: dir.clone(),
        config: cfg.clone(),
        k_hat: f64::NAN,
        k_sup_v: 0.0,
        calderon_height: None,
        picard_increments: Vec::new(),
        ledger: None,
        diagnostics: None,
        decay: None,
        suites: Vec::new(),
        failure: None,
        final_step: 0,
    };

    let hardy = estimate_hardy_constant(cfg.space, &grid, cfg.hardy_trials, cfg.seed)?;
    hardy.write_csv_file(&dir.join("hardy.csv"))?;
    outcome.k_hat = hardy.k_hat;
    let mut hs = SuiteResult::new("hardy");
    hs.check(hardy.k_hat.is_finite() && hardy.k_hat >= 0.0, format!("K_hat {:e}", hardy.k_hat));
    outcome.suites.push(hs);

    let bg = match build_background(cfg, &grid, hardy.k_hat) {
        Ok(bg) => bg,
        Err(e) => {
            if let Error::Diverged { history, .. } | Error::NotConverged { history, .. } = &e {
                outcome.picard_increments = history.clone();
            }
            let mut ms = SuiteResult::new("mild_solution");
            ms.check(false, e.to_string());
            outcome.suites.push(ms);
            outcome.failure = Some(e.to_string());
            write_text(&dir.join("report.txt"), &format_report(&outcome, Some(&hardy), None))?;
            return Ok(outcome);
        }
    };
    let v = bg.v;
    write_mild(&dir.join(MILD_FILE), &v)?;
    outcome.calderon_height = bg.calderon_height;
    outcome.picard_increments = v.increments.clone();
    outcome.k_sup_v = v.smallness_product();
    let mut ms = SuiteResult::new("mild_solution");
    if !v.is_zero() {
        let report = crate::mild::verify_standing_assumptions(&v, hardy.k_hat)?;
        ms.check(report.admissible, format!("K sup ||V||_X = {:e} < 1", report.product));
        ms.check(report.continuity_proxy.is_finite(), format!("weak continuity proxy {:e}", report.continuity_proxy));
    } else {
        ms.check(true, "V = 0".into());
    }
    outcome.suites.push(ms);

    let steps = step_count(cfg.t_max, cfg.dt);
    let pairs = sample_pairs(steps, GEN_ENERGY_PAIRS);
    let opts = EvolveOptions { store_every: 0, nonlinear: true, k_hat: hardy.k_hat, truncation: None };
    let mut evolver = Evolver::new(&bg.w0, &v, cfg.dt, opts)?;
    let mut monitor = SplittingMonitor::new(&grid, cfg.alpha, outcome.k_sup_v, cfg.dt, &pairs)?;
    let w0 = evolver.state().w.clone();
    let ctx = RunContext { cfg, dir: &dir, k_hat: hardy.k_hat, w0: &w0, prior_checks: Vec::new() };
    outcome.failure = drive(&ctx, &mut evolver, &mut monitor, steps)?;
    let state = evolver.into_state();
    finish_evolution(&mut outcome, &dir, &state, monitor, Vec::new(), &v, &grid)?;
    write_text(&dir.join("report.txt"), &format_report(&outcome, Some(&hardy), Some(&v)))?;
    Ok(outcome)
}

/// Continues a run from `checkpoint` for `extra_time`. Artifacts go to
/// `output_override` or to the run directory holding the checkpoint.
pub fn replay(checkpoint: &Path, extra_time: f64, output_override: Option<&Path>) -> Result<RunOutcome> {
    if !(extra_time >= 0.0) {
        return Err(Error::InvalidArgument(format!("extra time must be nonnegative, got {extra_time}")));
    }
    let ck = Checkpoint::read(checkpoint)?;
    let bad = |reason: String| Error::Checkpoint { path: checkpoint.into(), reason };
    let meta = |key: &str| ck.metadata.get(key).ok_or_else(|| bad(format!("missing metadata {key}")));
    let arr = |key: &str| ck.array(key).ok_or_else(|| bad(format!("missing array {key}")));
    let cfg = ExperimentConfig::from_toml_str(meta("config")?)?;
    let step: usize = meta("step")?.parse().map_err(|_| bad("bad step".into()))?;
    let ck_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let run_dir = ck_dir.parent().unwrap_or(Path::new(".")).to_path_buf();
    let v = read_mild(&ck_dir.join(meta("mild_file")?))?;
    let grid = ck.grid;
    if grid != v.grid {
        return Err(bad("background grid differs from the checkpoint grid".into()));
    }
    let w = ck.field("w").ok_or_else(|| bad("missing field w".into()))?.clone();
    let w0 = ck.field("w0").ok_or_else(|| bad("missing field w0".into()))?.clone();
    let k_sup_v = arr("ledger.k_sup_v")?[0];
    let k_hat = arr("k_hat")?[0];
    let ledger = EnergyLedger::restore(
        k_sup_v,
        arr("ledger.t")?.to_vec(),
        arr("ledger.l2_sq")?.to_vec(),
        arr("ledger.grad_l2_sq")?.to_vec(),
        arr("ledger.dissipation_cum")?.to_vec(),
        &w,
    )?;
    let flat = arr("diagnostics")?;
    if flat.len() % DIAGNOSTICS_COLUMNS.len() != 0 {
        return Err(bad("diagnostics array has a ragged length".into()));
    }
    let rows: Vec<DiagnosticsRow> = flat
        .chunks_exact(DIAGNOSTICS_COLUMNS.len())
        .map(|c| DiagnosticsRow::from_array(c.try_into().expect("chunk length")))
        .collect();
    let totals = SplittingTotals::from_slice(arr("totals")?)?;
    let prior_checks = unflatten_checks(arr("gen_energy")?);

    let dir = output_override.map(Path::to_path_buf).unwrap_or(run_dir.clone());
    ensure_dir(&dir)?;
    if dir != run_dir {
        for name in ["hardy.csv", MILD_FILE] {
            let from = run_dir.join(name);
            if from.exists() {
                std::fs::copy(&from, dir.join(name)).map_err(|e| Error::io(&from, e))?;
            }
        }
    }
    let mut cfg_out = cfg.clone();
    cfg_out.t_max = (step + step_count(extra_time, cfg.dt)) as f64 * cfg.dt;
    write_text(&dir.join("config.toml"), &cfg_out.to_toml_string()?)?;

    let extra = step_count(extra_time, cfg.dt);
    let target = step + extra;
    // pairs still open continue; fresh ones are only drawn past the planned horizon
    let planned = step_count(cfg.t_max, cfg.dt).max(step);
    let pairs: Vec<(usize, usize)> = if target > planned {
        sample_pairs(target - planned, GEN_ENERGY_PAIRS).into_iter().map(|(s, t)| (s + planned, t + planned)).collect()
    } else {
        Vec::new()
    };
    let opts = EvolveOptions { store_every: 0, nonlinear: true, k_hat, truncation: None };
    let state = EvolutionState { step, w, ledger };
    let mut evolver = Evolver::resume(state, &v, cfg.dt, opts)?;
    let mut monitor = SplittingMonitor::resume(&grid, cfg.alpha, k_sup_v, cfg.dt, &w0, rows, totals, &pairs)?;
    monitor.restore_pending(arr("pending_pairs")?)?;
    let mut outcome = RunOutcome {
        output_dir: dir.clone(),
        config: cfg_out.clone(),
        k_hat,
        k_sup_v,
        calderon_height: None,
        picard_increments: v.increments.clone(),
        ledger: None,
        diagnostics: None,
        decay: None,
        suites: Vec::new(),
        failure: None,
        final_step: step,
    };
    let ctx = RunContext { cfg: &cfg_out, dir: &dir, k_hat, w0: &w0, prior_checks: prior_checks.clone() };
    outcome.failure = drive(&ctx, &mut evolver, &mut monitor, target)?;
    let state = evolver.into_state();
    finish_evolution(&mut outcome, &dir, &state, monitor, prior_checks, &v, &grid)?;
    let mut meta_suite = SuiteResult::new("replay");
    meta_suite.check(true, format!("resumed at step {step}, continued to step {}", state.step));
    outcome.suites.push(meta_suite);
    write_text(&dir.join("report.txt"), &format_report(&outcome, None, Some(&v)))?;
    Ok(outcome)
}

/// Hardy estimation on its own, as for the `hardy` subcommand.
pub fn hardy(space: SpaceNorm, grid: &GridSpec, trials: usize, seed: u64) -> Result<HardyEstimate> {
    estimate_hardy_constant(space, grid, trials, seed)
}

/// Metadata keys of a checkpoint, for inspection.
pub fn checkpoint_summary(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(Checkpoint::read(path)?.metadata)
}
