use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::field::SpectralVectorField;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Projection onto divergence-free fields, symbol `I - xi xi^T / |xi|^2`.
pub fn leray_project(f: &SpectralVectorField) -> SpectralVectorField {
    let grid = *f.grid();
    let mut out = f.clone();
    let comps = out.components_mut();
    for m in 0..grid.mode_count() {
        let xi = grid.xi(m);
        let xi_sq = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        if xi_sq == 0.0 {
            for c in comps.iter_mut() {
                c[m] = Complex64::default();
            }
            continue;
        }
        let dot = (comps[0][m] * xi[0] + comps[1][m] * xi[1] + comps[2][m] * xi[2]) / xi_sq;
        for d in 0..3 {
            comps[d][m] -= dot * xi[d];
        }
    }
    out.mark_divergence_free()
}

/// `e^{t Delta} f`.
pub fn heat_semigroup(f: &SpectralVectorField, t: f64) -> Result<SpectralVectorField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("heat semigroup needs t >= 0, got {t}")));
    }
    let grid = *f.grid();
    let df = f.is_divergence_free();
    let out = f.scale_modes(|m| (-t * grid.xi_sq(m)).exp());
    Ok(if df { out.mark_divergence_free() } else { out })
}

/// `||grad f||_2^2` over the box.
pub fn gradient_norm_sq(f: &SpectralVectorField) -> f64 {
    let grid = f.grid();
    let mut s = 0.0;
    for m in 0..grid.mode_count() {
        let c = f.coeff(m);
        s += grid.xi_sq(m) * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr());
    }
    s * grid.volume()
}

/// `int f . g dx` over the box.
pub fn l2_inner(f: &SpectralVectorField, g: &SpectralVectorField) -> Result<f64> {
    f.grid().ensure_same(g.grid())?;
    let mut s = Complex64::default();
    for d in 0..3 {
        for (a, b) in f.component(d).iter().zip(g.component(d).iter()) {
            s += a * b.conj();
        }
    }
    Ok(s.re * f.grid().volume())
}

pub fn l2_norm_sq(f: &SpectralVectorField) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        s += f.component(d).iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    s * f.grid().volume()
}

/// `sum_k w(k) |c_k|^2 L^3` for a real per-mode weight.
pub fn weighted_norm_sq(f: &SpectralVectorField, weight: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    for m in 0..f.grid().mode_count() {
        let c = f.coeff(m);
        let e = c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr();
        if e != 0.0 {
            s += weight(m) * e;
        }
    }
    s * f.grid().volume()
}

/// Sharp Fourier-ball projector keeping integer wavevectors with `|k| <= m`.
pub fn galerkin_ball(f: &SpectralVectorField, radius: f64) -> SpectralVectorField {
    let grid = *f.grid();
    let r_sq = radius * radius;
    let df = f.is_divergence_free();
    let out = f.scale_modes(|m| {
        let k = grid.mode(m);
        let k_sq = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k_sq <= r_sq {
            1.0
        } else {
            0.0
        }
    });
    if df {
        out.mark_divergence_free()
    } else {
        out
    }
}

/// Coefficients of `d f_j / d x_i` for all `i`, `j`: `out[i][j]`.
pub fn gradient_tensor(f: &SpectralVectorField) -> [[Vec<Complex64>; 3]; 3] {
    let grid = f.grid();
    let xis: Vec<[f64; 3]> = (0..grid.mode_count()).map(|m| grid.xi(m)).collect();
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            f.component(j)
                .iter()
                .zip(xis.iter())
                .map(|(c, xi)| c * Complex64::new(0.0, xi[i]))
                .collect()
        })
    })
}

pub fn curl(f: &SpectralVectorField) -> SpectralVectorField {
    let grid = *f.grid();
    SpectralVectorField::from_fn(&grid, |m| {
        let xi = grid.xi(m);
        let c = f.coeff(m);
        let i = Complex64::i();
        [
            i * (c[2] * xi[1] - c[1] * xi[2]),
            i * (c[0] * xi[2] - c[2] * xi[0]),
            i * (c[1] * xi[0] - c[0] * xi[1]),
        ]
    })
}

/// Random real divergence-free field with `|c_k| ~ (1 + |xi(k)|)^{-s}` and
/// uniformly distributed phases and polarisations. Deterministic in the seed.
pub fn random_divfree_field(grid: &GridSpec, spectrum_exponent: f64, seed: u64) -> Result<SpectralVectorField> {
    if !(spectrum_exponent > 1.5) || !spectrum_exponent.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spectrum exponent must exceed 3/2, got {spectrum_exponent}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = grid.mode_count();
    let mut comps = [vec![Complex64::default(); modes], vec![Complex64::default(); modes], vec![Complex64::default(); modes]];
    for m in 0..modes {
        let j = grid.conjugate_index(m);
        if j <= m {
            // the zero mode is its own partner and stays empty
            continue;
        }
        let xi = grid.xi(m);
        let norm_xi = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        let amplitude = (1.0 + norm_xi).powf(-spectrum_exponent);
        let (e1, e2) = orthonormal_pair(xi, norm_xi);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let p1: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let p2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let a1 = Complex64::from_polar(amplitude * theta.cos(), p1);
        let a2 = Complex64::from_polar(amplitude * theta.sin(), p2);
        for d in 0..3 {
            let c = a1 * e1[d] + a2 * e2[d];
            comps[d][m] = c;
            comps[d][j] = c.conj();
        }
    }
    let field = SpectralVectorField::from_components(grid, comps)?;
    Ok(leray_project(&field))
}

fn orthonormal_pair(xi: [f64; 3], norm_xi: f64) -> ([f64; 3], [f64; 3]) {
    let n = [xi[0] / norm_xi, xi[1] / norm_xi, xi[2] / norm_xi];
    let pick = if n[0].abs() < 0.6 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(n, pick));
    let e2 = cross(n, e1);
    (e1, e2)
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let r = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / r, a[1] / r, a[2] / r]
}
