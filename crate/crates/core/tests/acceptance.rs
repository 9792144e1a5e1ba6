//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nslab::diagnostics::{check_gen_energy, multiplier_bound_violation, PsiMode};
use nslab::experiment::{self, ExperimentConfig, GridConfig, RunOutcome, Scenario};
use nslab::function_spaces::{classical_hardy_ratio, estimate_hardy_constant, SpaceNorm};
use nslab::mild::{calderon_split, homogeneous_minus_one_data, picard_iterate, quadratic_times, MildTrajectory};
use nslab::perturbation::{evolve, GalerkinTruncation};
use nslab::spectral::*;
use nslab::trilinear::{b_form, self_interaction_residual};
use nslab::GridSpec;

const TOL: f64 = 1e-6;
/// Amplitude of the admissible self-similar background.
const SMALL_V: f64 = 0.05;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn big_box(n: usize) -> GridSpec {
    GridSpec::new(GridSpec::default_box().box_length(), n, 2.0 / 3.0).unwrap()
}

fn config(scenario: Scenario, amplitude: f64, n: usize, t_max: f64, dt: f64) -> ExperimentConfig {
    ExperimentConfig {
        scenario,
        space: SpaceNorm::WeightedLinfty,
        amplitude,
        seed: 11,
        t_max,
        dt,
        alpha: 3.0,
        hardy_trials: 4,
        output_dir: PathBuf::from("acceptance_out"),
        checkpoint_every: 0,
        grid: GridConfig::from(big_box(n)),
    }
}

fn dist(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
    l2_norm_sq(&a.sub(b).unwrap()).sqrt()
}

fn bump(grid: &GridSpec, width: f64) -> SpectralVectorField {
    PhysicalVectorField::from_centered_fn(grid, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let e = (-r2 / (2.0 * width * width)).exp();
        [e, -0.5 * e, 0.25 * e]
    })
    .to_spectral()
}

/// Runs shared by several criteria.
struct Runs {
    tmp: tempfile::TempDir,
    zero: Option<RunOutcome>,
    admissible: Option<RunOutcome>,
}

impl Runs {
    fn run(&self, name: &str, cfg: &ExperimentConfig) -> RunOutcome {
        experiment::run(cfg, Some(&self.tmp.path().join(name))).unwrap()
    }

    fn zero(&mut self) -> &RunOutcome {
        if self.zero.is_none() {
            self.zero = Some(self.run("zero_v", &config(Scenario::ZeroV, 1.0, 64, 20.0, 0.1)));
        }
        self.zero.as_ref().unwrap()
    }

    fn admissible(&mut self) -> &RunOutcome {
        if self.admissible.is_none() {
            self.admissible = Some(self.run("admissible", &config(Scenario::SelfSimilarV, SMALL_V, 64, 20.0, 0.1)));
        }
        self.admissible.as_ref().unwrap()
    }
}

fn trilinear_identities(_: &mut Runs) -> Verdict {
    let grid = big_box(32);
    let mut worst_self = 0.0f64;
    let mut worst_anti = 0.0f64;
    for i in 0..100u64 {
        let f = random_divfree_field(&grid, 1.8, 3 * i).unwrap();
        let g = random_divfree_field(&grid, 2.0, 3 * i + 1).unwrap();
        let h = random_divfree_field(&grid, 2.2, 3 * i + 2).unwrap();
        worst_anti = worst_anti.max(b_form(&f, &g, &h).unwrap().antisymmetry_residual);
        worst_self = worst_self.max(self_interaction_residual(&f, &h).unwrap());
    }
    verdict(
        worst_self <= 1e-10 && worst_anti <= 1e-10,
        format!("max |b(f,h,h)| {worst_self:.2e}, max |b(f,g,h)+b(f,h,g)| {worst_anti:.2e}"),
    )
}

fn hardy_constant(_: &mut Runs) -> Verdict {
    let est = estimate_hardy_constant(SpaceNorm::WeightedLinfty, &big_box(32), 200, 1).unwrap();
    let grid = big_box(64);
    let l = grid.box_length();
    let worst = (0..20)
        .map(|j| classical_hardy_ratio(&bump(&grid, l / 40.0 * (1.0 + 0.15 * j as f64))).unwrap())
        .fold(0.0, f64::max);
    verdict(est.k_hat <= 2.1 && worst <= 4.2, format!("K_hat {:.4e} over 200 trials, classical ratio max {worst:.4}", est.k_hat))
}

fn energy_inequality(runs: &mut Runs) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, o) in [("zero_V", runs.zero().clone()), ("self_similar_V", runs.admissible().clone())] {
        let l = o.ledger.as_ref().expect("ledger");
        let (slack, s, t) = l.min_pair_slack();
        let rel = slack / l.l2_sq[0];
        let product = o.k_sup_v;
        ok &= rel >= -TOL && product <= 0.5 && o.failure.is_none();
        notes.push(format!("{name}: K sup|V| {product:.3e}, min slack {rel:.2e} at ({}, {})", l.times[s], l.times[t]));
    }
    verdict(ok, notes.join("; "))
}

fn galerkin_bound(_: &mut Runs) -> Verdict {
    let grid = big_box(64);
    let v0 = homogeneous_minus_one_data(&grid, SMALL_V, 11).unwrap();
    let v = picard_iterate(&v0, &quadratic_times(4.0, 12), 30, 1e-10, SpaceNorm::WeightedLinfty).unwrap();
    let k_hat = estimate_hardy_constant(SpaceNorm::WeightedLinfty, &grid, 4, 11).unwrap().k_hat;
    let v = v.with_k(k_hat);
    let w0 = random_divfree_field(&grid, 2.0, 12).unwrap();
    let w0 = w0.scaled((grid.volume() / l2_norm_sq(&w0)).sqrt());
    let full = evolve(&w0, &v, 4.0, 0.1, None, k_hat).unwrap();
    let e0 = l2_norm_sq(&w0);
    let mut ok = true;
    let mut last = f64::INFINITY;
    let mut notes = Vec::new();
    for m in [4.0, 8.0, 16.0] {
        let tr = evolve(&w0, &v, 4.0, 0.1, Some(GalerkinTruncation::new(m, &grid).unwrap()), k_hat).unwrap();
        let l = &tr.ledger;
        // slack against ||w0||^2 rather than ||P_m w0||^2
        let slack = (0..l.len()).map(|i| l.slack_vs_t0(i) + e0 - l.l2_sq[0]).fold(f64::INFINITY, f64::min) / e0;
        let d = tr.snapshots.iter().zip(&full.snapshots).map(|(a, b)| dist(a, b)).fold(0.0, f64::max);
        ok &= slack >= -TOL && l.min_pair_slack().0 >= -TOL * e0 && d < last;
        last = d;
        notes.push(format!("m={m}: slack {slack:.2e}, distance {:.3e}", d / e0.sqrt()));
    }
    verdict(ok, notes.join("; "))
}

fn generalized_energy(runs: &mut Runs) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for o in [runs.zero().clone(), runs.admissible().clone()] {
        let d = o.diagnostics.as_ref().expect("diagnostics");
        let scale = d.totals.w0_l2_sq;
        let worst = d.worst_gen_energy_slack() / scale;
        let pairs = d.gen_energy.len() / 2;
        ok &= worst >= -TOL && pairs == experiment::GEN_ENERGY_PAIRS;
        notes.push(format!("{}: {pairs} pairs, min slack {worst:.2e}", o.config.scenario));
    }
    let grid = big_box(32);
    let v0 = homogeneous_minus_one_data(&grid, SMALL_V, 11).unwrap();
    let v = picard_iterate(&v0, &quadratic_times(4.0, 12), 30, 1e-10, SpaceNorm::WeightedLinfty).unwrap().with_k(1.0);
    let w0 = random_divfree_field(&grid, 2.0, 13).unwrap();
    let w0 = w0.scaled((grid.volume() / l2_norm_sq(&w0)).sqrt());
    let coarse = evolve(&w0, &v, 4.0, 0.1, None, 1.0).unwrap();
    let fine = evolve(&w0, &v, 4.0, 0.05, None, 1.0).unwrap();
    for mode in [PsiMode::HeatKernelShifted, PsiMode::DeltaMinusPhi] {
        let a = check_gen_energy(&coarse, &v, 3.0, mode, 0.0, 4.0).unwrap().slack.abs();
        let b = check_gen_energy(&fine, &v, 3.0, mode, 0.0, 4.0).unwrap().slack.abs();
        ok &= (3.0..=5.0).contains(&(a / b));
        notes.push(format!("{mode} halving ratio {:.3}", a / b));
    }
    verdict(ok, notes.join("; "))
}

fn fourier_splitting(runs: &mut Runs) -> Verdict {
    let o = runs.admissible();
    let d = o.diagnostics.as_ref().expect("diagnostics");
    let viol = multiplier_bound_violation(&big_box(64));
    let mut ok = d.totals.weight_residual <= 1e-14 && viol <= 0.0;
    let mut failed = Vec::new();
    for b in &d.bound_checks {
        if !b.holds(experiment::BOUND_REL_TOL) {
            ok = false;
            failed.push(b.name.clone());
        }
    }
    verdict(
        ok,
        format!(
            "weight residual {:.1e}, multiplier violation {viol:.2e}, {} bound checks, failing: {failed:?}",
            d.totals.weight_residual,
            d.bound_checks.len()
        ),
    )
}

fn decay(runs: &mut Runs) -> Verdict {
    let o = runs.run("decay", &config(Scenario::SelfSimilarV, SMALL_V, 64, 50.0, 0.1));
    let r = o.decay.as_ref().expect("decay report");
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.1 && c.0 != "v_l3_nonincreasing").map(|c| c.0.as_str()).collect();
    verdict(
        failed.is_empty() && o.failure.is_none(),
        format!(
            "final/initial {:.3}, max energy increase {:.1e}, low {:.1e}, high {:.1e} after t={}, exp rate {:.3e}, failing: {failed:?}",
            r.final_ratio, r.max_energy_increase, r.low_max_increase, r.high_max_increase, r.transient_end, r.exponential_rate
        ),
    )
}

fn calderon(_: &mut Runs) -> Verdict {
    let grid = big_box(32);
    let u0 = homogeneous_minus_one_data(&grid, 20.0, 2).unwrap();
    let mut last = f64::INFINITY;
    let mut ok = true;
    let mut worst = 0.0f64;
    for j in 0..=5 {
        let s = calderon_split(&u0, 0.5f64.powi(j)).unwrap();
        ok &= s.l3_of_smooth < last && s.l2_of_rough.is_finite();
        last = s.l3_of_smooth;
        worst = worst.max(s.reconstruction_error);
    }
    ok &= worst <= 1e-12;
    verdict(ok, format!("||V0(R)||_3 decreasing over R = 1..1/32, reconstruction error {worst:.2e}"))
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", "))
}

fn mild_contraction(_: &mut Runs) -> Verdict {
    let grid = big_box(32);
    let v0 = homogeneous_minus_one_data(&grid, 1e-3, 5).unwrap();
    let t = picard_iterate(&v0, &quadratic_times(10.0, 16), 5, 1e-10, SpaceNorm::WeightedLinfty).unwrap();
    let inc_ok = t.increments.windows(2).all(|w| w[1] < w[0]);
    let factors = t.contraction_factors();
    let run = |n| picard_iterate(&v0, &quadratic_times(10.0, n), 30, 1e-14, SpaceNorm::WeightedLinfty).unwrap();
    let (a, b, c) = (run(8), run(16), run(32));
    let gap = |x: &MildTrajectory, y: &MildTrajectory| {
        x.times
            .iter()
            .zip(&x.slices)
            .map(|(s, f)| dist(f, &y.slices[y.times.iter().position(|u| (u - s).abs() < 1e-12).unwrap()]))
            .fold(0.0, f64::max)
    };
    let ratio = gap(&a, &b) / gap(&b, &c);
    verdict(
        t.iterations <= 5 && inc_ok && factors.iter().all(|&f| f < 1.0) && (3.0..=5.0).contains(&ratio),
        format!("{} iterations, increments {}, factors {}, Duhamel ratio {ratio:.3}", t.iterations, sci(&t.increments), sci(&factors)),
    )
}

fn nslab(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nslab")).args(args).output().unwrap().status.success()
}

fn determinism(runs: &mut Runs) -> Verdict {
    let dir = runs.tmp.path().join("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let mut cfg = config(Scenario::SelfSimilarV, SMALL_V, 16, 2.0, 0.05);
    cfg.checkpoint_every = 20;
    let path = dir.join("c.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let out = |name: &str| dir.join(name);
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let mut ok = nslab(&["--serial", "run", &p(&path), "--output-dir", &p(&out("a"))])
        && nslab(&["--serial", "run", &p(&path), "--output-dir", &p(&out("b"))]);
    let mid = out("a").join("checkpoints").join("step_00000020.ckpt");
    ok &= nslab(&["--serial", "replay", &p(&mid), "--extra-time", "1.0", "--output-dir", &p(&out("c"))]);
    let mut differing = Vec::new();
    for name in ["ledger.csv", "diagnostics.csv", "gen_energy.csv", "hardy.csv"] {
        let a = std::fs::read(out("a").join(name)).ok();
        if a.is_none() || a != std::fs::read(out("b").join(name)).ok() {
            differing.push(format!("{name} (rerun)"));
        }
        if name != "hardy.csv" && a != std::fs::read(out("c").join(name)).ok() {
            differing.push(format!("{name} (replay)"));
        }
    }
    verdict(ok && differing.is_empty(), format!("rerun and replay from t=1 compared, differing: {differing:?}"))
}

fn main() {
    let criteria: [(&str, fn(&mut Runs) -> Verdict); 10] = [
        ("trilinear identities", trilinear_identities),
        ("Hardy constant", hardy_constant),
        ("strong energy inequality", energy_inequality),
        ("Galerkin uniform bound", galerkin_bound),
        ("generalized energy inequality", generalized_energy),
        ("Fourier splitting bookkeeping", fourier_splitting),
        ("decay", decay),
        ("Calderon split", calderon),
        ("mild-solution contraction", mild_contraction),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut runs = Runs { tmp: tempfile::tempdir().unwrap(), zero: None, admissible: None };
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&mut runs)))
            .unwrap_or_else(|e| verdict(false, format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        failures += usize::from(!v.passed);
        println!(
            "criterion {:>2} {:<31} {} ({:.1}s) {}",
            i + 1,
            name,
            if v.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
