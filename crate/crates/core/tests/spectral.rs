use nslab::spectral::*;
use nslab::GridSpec;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec::unit_torus(16).unwrap()
}

fn rel_diff(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
    let d = l2_norm_sq(&a.sub(b).unwrap()).sqrt();
    d / l2_norm_sq(b).sqrt().max(f64::MIN_POSITIVE)
}

/// Hermitian field with arbitrary (not divergence-free) coefficients.
fn rough_field(grid: &GridSpec, seed: u64) -> SpectralVectorField {
    let phys = random_divfree_field(grid, 2.0, seed).unwrap().to_physical();
    let other = random_divfree_field(grid, 2.5, seed + 1).unwrap().to_physical();
    phys.map_points(|p, v| {
        let o = other.value(p);
        [v[0] * o[1], v[1] + o[0] * o[0], v[2] - o[2] * v[0]]
    })
    .to_spectral()
}

#[test]
fn single_mode_projection_by_hand() {
    let g = grid();
    let k = g.mode_index([1, 0, 0]).unwrap();
    let kc = g.conjugate_index(k);
    let one = Complex64::new(1.0, 0.0);
    let f = SpectralVectorField::from_fn(&g, |m| if m == k || m == kc { [one, one, Complex64::default()] } else { Default::default() });
    let p = leray_project(&f);
    assert_eq!(p.coeff(k), [Complex64::default(), one, Complex64::default()]);
}

#[test]
fn gradients_are_annihilated() {
    let g = grid();
    let f = SpectralVectorField::from_fn(&g, |m| {
        let xi = g.xi(m);
        let k = g.mode(m);
        let a = Complex64::new(((k[0] * 7 + k[1] * 3 + k[2]) as f64).sin(), 0.0) * Complex64::i();
        let a = if g.conjugate_index(m) < m { -a } else { a };
        [a * xi[0], a * xi[1], a * xi[2]]
    });
    let p = leray_project(&f);
    assert!(l2_norm_sq(&p).sqrt() < 1e-12 * l2_norm_sq(&f).sqrt().max(1.0));
}

#[test]
fn heat_semigroup_examples() {
    let g = grid();
    let f = random_divfree_field(&g, 2.0, 3).unwrap();
    assert_eq!(heat_semigroup(&f, 0.0).unwrap(), f);
    assert!(heat_semigroup(&f, -1.0).is_err());
    // unit torus: |xi| = 1 for k = (1, 0, 0)
    let k = g.mode_index([1, 0, 0]).unwrap();
    let single = f.scale_modes(|m| if m == k || m == g.conjugate_index(k) { 1.0 } else { 0.0 });
    let halved = heat_semigroup(&single, 2f64.ln()).unwrap();
    for d in 0..3 {
        assert!((halved.coeff(k)[d] - single.coeff(k)[d] * 0.5).norm() < 1e-15);
    }
    for t in [0.1, 1.0, 10.0] {
        let h = heat_semigroup(&f, t).unwrap();
        assert!(l2_norm_sq(&h) <= l2_norm_sq(&f));
        assert!(gradient_norm_sq(&h) <= gradient_norm_sq(&f));
    }
}

#[test]
fn gradient_norm_of_one_mode_pair() {
    // xi = 2 on the unit torus, amplitude 1 in one component on k and -k:
    // ||grad f||^2 = L^3 * |xi|^2 * (1 + 1)
    let g = grid();
    let k = g.mode_index([0, 2, 0]).unwrap();
    let one = Complex64::new(1.0, 0.0);
    let f = SpectralVectorField::from_fn(&g, |m| {
        if m == k || m == g.conjugate_index(k) {
            [one, Complex64::default(), Complex64::default()]
        } else {
            Default::default()
        }
    });
    let expected = g.volume() * 4.0 * 2.0;
    assert!((gradient_norm_sq(&f) - expected).abs() < 1e-12 * expected);
    assert_eq!(gradient_norm_sq(&SpectralVectorField::zeros(&g)), 0.0);
}

#[test]
fn plancherel_matches_grid_quadrature() {
    let g = GridSpec::new(7.0, 16, 2.0 / 3.0).unwrap();
    let f = random_divfree_field(&g, 2.0, 8).unwrap();
    let h = random_divfree_field(&g, 1.8, 9).unwrap();
    let spectral = l2_inner(&f, &h).unwrap();
    let (fp, hp) = (f.to_physical(), h.to_physical());
    let mut quad = 0.0;
    for p in 0..g.point_count() {
        let (a, b) = (fp.value(p), hp.value(p));
        quad += a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    }
    quad *= g.cell_volume();
    assert!((spectral - quad).abs() < 1e-10 * spectral.abs().max(l2_norm_sq(&f)));
}

#[test]
fn random_fields_are_seeded_and_steeper_spectra_are_smoother() {
    let g = grid();
    let a = random_divfree_field(&g, 2.0, 42).unwrap();
    let b = random_divfree_field(&g, 2.0, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.divergence_residual() < 1e-12);
    assert!(random_divfree_field(&g, 1.5, 1).is_err());
    let ratio = |f: &SpectralVectorField| gradient_norm_sq(f) / l2_norm_sq(f);
    let smooth = random_divfree_field(&g, 3.0, 42).unwrap();
    assert!(ratio(&smooth) < ratio(&a));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_idempotent(seed in 0u64..1000) {
        let g = grid();
        let p = leray_project(&rough_field(&g, seed));
        prop_assert!(rel_diff(&leray_project(&p), &p) < 1e-12);
        prop_assert!(p.divergence_residual() < 1e-12);
    }

    #[test]
    fn projection_is_self_adjoint_on_its_range(seed in 0u64..1000) {
        let g = grid();
        let f = rough_field(&g, seed);
        let h = random_divfree_field(&g, 2.0, seed + 17).unwrap();
        let a = l2_inner(&leray_project(&f), &h).unwrap();
        let b = l2_inner(&f, &h).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (l2_norm_sq(&f) * l2_norm_sq(&h)).sqrt());
    }

    #[test]
    fn heat_semigroup_law(seed in 0u64..1000, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let g = grid();
        let f = random_divfree_field(&g, 2.0, seed).unwrap();
        let once = heat_semigroup(&f, s + t).unwrap();
        let twice = heat_semigroup(&heat_semigroup(&f, s).unwrap(), t).unwrap();
        prop_assert!(l2_norm_sq(&once.sub(&twice).unwrap()).sqrt() < 1e-12 * l2_norm_sq(&f).sqrt());
    }

    #[test]
    fn physical_round_trip(seed in 0u64..1000) {
        let g = grid();
        let f = random_divfree_field(&g, 1.7, seed).unwrap();
        prop_assert!(rel_diff(&f.to_physical().to_spectral(), &f) < 1e-12);
        prop_assert!(f.hermitian_residual() < 1e-14);
    }

    #[test]
    fn divergence_free_fields_pass_through_projection(seed in 0u64..1000) {
        let g = grid();
        let f = random_divfree_field(&g, 2.0, seed).unwrap();
        prop_assert!(rel_diff(&leray_project(&f), &f) < 1e-12);
    }
}
