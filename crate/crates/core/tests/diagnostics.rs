use nslab::diagnostics::*;
use nslab::function_spaces::SpaceNorm;
use nslab::mild::{homogeneous_minus_one_data, picard_iterate, quadratic_times, MildTrajectory};
use nslab::perturbation::evolve;
use nslab::spectral::*;
use nslab::GridSpec;
use proptest::prelude::*;

fn box16() -> GridSpec {
    GridSpec::new(GridSpec::default_box().box_length(), 16, 2.0 / 3.0).unwrap()
}

fn field(grid: &GridSpec, rms: f64, seed: u64) -> SpectralVectorField {
    let f = random_divfree_field(grid, 2.5, seed).unwrap();
    f.scaled(rms / (l2_norm_sq(&f) / grid.volume()).sqrt())
}

fn background(grid: &GridSpec) -> MildTrajectory {
    let v0 = homogeneous_minus_one_data(grid, 0.05, 4).unwrap();
    picard_iterate(&v0, &quadratic_times(4.0, 8), 30, 1e-12, SpaceNorm::WeightedLinfty).unwrap().with_k(1.0)
}

#[test]
fn split_masses_of_a_unit_mode() {
    let g = GridSpec::unit_torus(16).unwrap();
    let w = field(&g, 1.0, 3).scale_modes(|m| if g.mode(m) == [0, 0, 1] || g.mode(m) == [0, 0, -1] { 1.0 } else { 0.0 });
    let total = l2_norm_sq(&w);
    let (low, high) = split_masses(&w);
    assert!((low - (-2f64).exp() * total).abs() < 1e-14 * total);
    assert!((high - (1.0 - (-1f64).exp()).powi(2) * total).abs() < 1e-14 * total);
}

#[test]
fn weight_pair_identity() {
    // alpha = 3, t = 1: E = 8, E' = 12, G^2 = 3/4
    assert_eq!(weight_e(3.0, 1.0), 8.0);
    assert_eq!(weight_e_prime(3.0, 1.0), 12.0);
    assert!((cutoff_g(3.0, 1.0).powi(2) - 0.75).abs() < 1e-15);
    assert!(weight_identity_residual(3.0, 1.0) < 1e-15);
}

#[test]
fn closed_form_integrals() {
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let n = 2000;
        let h = (b - a) / n as f64;
        (0..=n).map(|i| f(a + i as f64 * h) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>() * h / 3.0
    };
    for alpha in [1.5, 2.0, 3.0] {
        let got = budget_integral(alpha, 0.5, 4.0);
        let num = simpson(&|t| (1.0 + t).powf(alpha - 3.0), 0.5, 4.0);
        assert!((got - num).abs() < 1e-10, "{alpha}");
        let got = weight_e_integral(alpha, 0.5, 4.0);
        let num = simpson(&|t| weight_e(alpha, t), 0.5, 4.0);
        assert!((got - num).abs() < 1e-10 * num);
    }
}

#[test]
fn heat_kernel_norms() {
    let g = |t: f64| move |r: f64| (4.0 * std::f64::consts::PI * t).powf(-1.5) * (-r * r / (4.0 * t)).exp();
    assert!((radial_lp_norm(g(1.0), 1.0, 40.0, 20_000) - 1.0).abs() < 1e-10);
    for (t, p) in [(1.0, 1.2), (2.0, 1.2), (0.5, 2.0)] {
        let exact = heat_kernel_lp(t, p);
        assert!((radial_lp_norm(g(t), p, 60.0, 40_000) / exact - 1.0).abs() < 1e-9);
    }
    let kn = kernel_norms();
    // the multiplier of eta is -1 at the origin and eta = g_2 - 2 g_1
    assert!(kn.eta_l1 >= 1.0 - 1e-9 && kn.eta_l1 <= 3.0);
    assert!(kn.eta_l65 <= heat_kernel_lp(2.0, 1.2) + 2.0 * heat_kernel_lp(1.0, 1.2));
    assert_eq!(kn.phiphi_l1, 1.0);
}

#[test]
fn multiplier_bounds_hold_on_every_grid() {
    for g in [GridSpec::unit_torus(16).unwrap(), box16(), GridSpec::new(0.5, 8, 2.0 / 3.0).unwrap()] {
        assert!(multiplier_bound_violation(&g) <= 0.0);
    }
}

#[test]
fn sampled_pairs_are_ordered_and_in_range() {
    for (steps, count) in [(100, 10), (7, 10), (1, 3), (1000, 1)] {
        let p = sample_pairs(steps, count);
        assert!(!p.is_empty() && p.len() <= count);
        assert!(p.iter().all(|&(s, t)| s < t && t <= steps));
    }
}

#[test]
fn monitor_agrees_with_offline_assembly() {
    let g = box16();
    let v = background(&g);
    let traj = evolve(&field(&g, 1.0, 6), &v, 2.0, 0.1, None, v.k_used).unwrap();
    let pairs = [(0, 20), (3, 11), (10, 19)];
    let d = run_splitting_analysis(&traj, &v, 3.0, v.k_used, &pairs).unwrap();
    assert_eq!(d.gen_energy.len(), 2 * pairs.len());
    for c in &d.gen_energy {
        let off = check_gen_energy(&traj, &v, 3.0, c.mode, c.s, c.t).unwrap();
        let scale = c.lhs.abs().max(c.rhs.abs());
        assert!((off.lhs - c.lhs).abs() <= 1e-10 * scale, "{c:?} vs {off:?}");
        assert!((off.rhs - c.rhs).abs() <= 1e-8 * scale, "{c:?} vs {off:?}");
    }
    assert!(check_gen_energy(&traj, &v, 3.0, PsiMode::DeltaMinusPhi, 1.0, 0.5).is_err());
}

#[test]
fn generalized_energy_slack_is_second_order() {
    let g = box16();
    let v = MildTrajectory::zero(&g, SpaceNorm::Lebesgue3);
    let w0 = field(&g, 1.0, 7);
    for mode in [PsiMode::HeatKernelShifted, PsiMode::DeltaMinusPhi] {
        let slack = |dt: f64| {
            let traj = evolve(&w0, &v, 2.0, dt, None, 0.0).unwrap();
            check_gen_energy(&traj, &v, 3.0, mode, 0.0, 2.0).unwrap().slack.abs()
        };
        let (a, b) = (slack(0.1), slack(0.05));
        assert!((3.0..=5.0).contains(&(a / b)), "{mode}: {a} {b}");
    }
}

#[test]
fn zero_perturbation_has_empty_diagnostics() {
    let g = box16();
    let v = background(&g);
    let traj = evolve(&SpectralVectorField::zeros(&g), &v, 1.0, 0.1, None, v.k_used).unwrap();
    let d = run_splitting_analysis(&traj, &v, 3.0, v.k_used, &sample_pairs(10, 4)).unwrap();
    let worst = d.rows.iter().map(|r| r.l2_sq.max(r.low_mass).max(r.high_mass)).fold(0.0, f64::max);
    assert!(worst < 1e-30, "{worst}");
    assert!(d.gen_energy.iter().all(|c| c.slack.abs() < 1e-30));
    for b in &d.bound_checks { assert!(b.holds(1e-9) || b.lhs < 1e-30, "{b:?}"); }
}

#[test]
fn bounds_hold_for_a_small_admissible_run() {
    let g = box16();
    let v = background(&g);
    let traj = evolve(&field(&g, 1.0, 8), &v, 4.0, 0.1, None, v.k_used).unwrap();
    let d = run_splitting_analysis(&traj, &v, 3.0, v.k_used, &sample_pairs(40, 5)).unwrap();
    for b in &d.bound_checks {
        assert!(b.holds(1e-9), "{b:?}");
    }
    assert!(d.triangle_margin() >= -1e-12 * d.totals.w0_l2_sq.sqrt());
    assert!(d.totals.weight_residual < 1e-14);
    let tail = SplittingDiagnostics::dissipation_tail(&traj.ledger);
    assert_eq!(*tail.last().unwrap(), 0.0);
    assert!(tail.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn diagnostics_csv_header() {
    let g = GridSpec::unit_torus(8).unwrap();
    let v = MildTrajectory::zero(&g, SpaceNorm::Lebesgue3);
    let traj = evolve(&field(&g, 1.0, 1), &v, 0.1, 0.05, None, 0.0).unwrap();
    let d = run_splitting_analysis(&traj, &v, 3.0, 0.0, &[]).unwrap();
    let mut out = Vec::new();
    d.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), DIAGNOSTICS_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 4);
    assert!(SplittingMonitor::new(&g, 3.0, 0.0, 0.05, &[(2, 2)]).is_err());
    assert!(SplittingMonitor::new(&g, 0.0, 0.0, 0.05, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_completeness(seed in 0u64..10_000, exp in 1.6f64..3.5) {
        let g = box16();
        let w = random_divfree_field(&g, exp, seed).unwrap();
        let (low, high) = split_masses(&w);
        let total = l2_norm_sq(&w);
        prop_assert!((low + high + 2.0 * split_cross(&w) - total).abs() < 1e-12 * total);
    }

    #[test]
    fn weight_identity_everywhere(alpha in 0.1f64..10.0, t in 0.0f64..1e4) {
        prop_assert!(weight_identity_residual(alpha, t) < 1e-13);
    }
}
