//! The trilinear form `b(f, g, h) = int (f . grad) g . h dx`.
//!
//! Derivatives are taken in Fourier space and products formed on the grid.
//! With the 2/3 rule every triple product of retained modes is alias free,
//! so grid quadrature reproduces the continuum integral over the box and the
//! integration-by-parts identities hold to roundoff.

use crate::error::Result;
use crate::spectral::{fft, gradient_norm_sq, gradient_tensor, l2_norm_sq, PhysicalVectorField, SpectralVectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrilinearResult {
    pub value: f64,
    /// `|b(f,g,h) + b(f,h,g)|` over `2 ||f||_2 ||grad g||_2 ||grad h||_2`.
    pub antisymmetry_residual: f64,
    /// `b(f, h, g)`, computed for the residual.
    pub swapped_value: f64,
}

/// Physical samples of `d f_j / d x_i`, indexed `[i][j]`.
pub(crate) fn physical_gradient(f: &SpectralVectorField) -> [[Vec<f64>; 3]; 3] {
    let t = gradient_tensor(f);
    let flat: Vec<&[num_complex::Complex64]> = t.iter().flat_map(|row| row.iter().map(|c| c.as_slice())).collect();
    let mut out = fft::synthesize(f.grid(), &flat).into_iter();
    std::array::from_fn(|_| std::array::from_fn(|_| out.next().expect("nine components")))
}

/// Grid quadrature of `sum_ij f_i (d_i g_j) h_j`.
fn contract(f: &PhysicalVectorField, grad_g: &[[Vec<f64>; 3]; 3], h: &PhysicalVectorField) -> f64 {
    let grid = f.grid();
    let mut s = 0.0;
    for p in 0..grid.point_count() {
        let fv = f.value(p);
        let hv = h.value(p);
        let mut acc = 0.0;
        for i in 0..3 {
            let mut inner = 0.0;
            for j in 0..3 {
                inner += grad_g[i][j][p] * hv[j];
            }
            acc += fv[i] * inner;
        }
        s += acc;
    }
    s * grid.cell_volume()
}

/// `b(f, g, h)` together with the antisymmetry residual against `b(f, h, g)`.
pub fn b_form(f: &SpectralVectorField, g: &SpectralVectorField, h: &SpectralVectorField) -> Result<TrilinearResult> {
    f.grid().ensure_same(g.grid())?;
    f.grid().ensure_same(h.grid())?;
    let fp = f.to_physical();
    let gp = g.to_physical();
    let hp = h.to_physical();
    let dg = physical_gradient(g);
    let dh = physical_gradient(h);
    let value = contract(&fp, &dg, &hp);
    let swapped_value = contract(&fp, &dh, &gp);
    let scale = 2.0 * (l2_norm_sq(f) * gradient_norm_sq(g) * gradient_norm_sq(h)).sqrt();
    let antisymmetry_residual = if scale > 0.0 { (value + swapped_value).abs() / scale } else { 0.0 };
    Ok(TrilinearResult { value, antisymmetry_residual, swapped_value })
}

/// `b(f, g, h)` alone.
pub fn b_value(f: &SpectralVectorField, g: &SpectralVectorField, h: &SpectralVectorField) -> Result<f64> {
    f.grid().ensure_same(g.grid())?;
    f.grid().ensure_same(h.grid())?;
    Ok(contract(&f.to_physical(), &physical_gradient(g), &h.to_physical()))
}

/// `|b(f, h, h)|` over `||f||_2 ||grad h||_2^2`.
pub fn self_interaction_residual(f: &SpectralVectorField, h: &SpectralVectorField) -> Result<f64> {
    let v = b_value(f, h, h)?;
    let scale = l2_norm_sq(f).sqrt() * gradient_norm_sq(h);
    Ok(if scale > 0.0 { v.abs() / scale } else { 0.0 })
}

/// Retained-mode coefficients of `(f . grad) g`, unprojected, mean dropped.
pub fn advection(f: &SpectralVectorField, g: &SpectralVectorField) -> Result<SpectralVectorField> {
    f.grid().ensure_same(g.grid())?;
    let fp = f.to_physical();
    let dg = physical_gradient(g);
    let n = f.grid().point_count();
    let mut prod = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for p in 0..n {
        let fv = fp.value(p);
        for j in 0..3 {
            prod[j][p] = fv[0] * dg[0][j][p] + fv[1] * dg[1][j][p] + fv[2] * dg[2][j][p];
        }
    }
    Ok(PhysicalVectorField::new(f.grid(), prod)?.to_spectral())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::spectral::{l2_inner, random_divfree_field};

    #[test]
    fn identities_on_random_fields() {
        let grid = GridSpec::unit_torus(16).unwrap();
        let f = random_divfree_field(&grid, 2.0, 1).unwrap();
        let g = random_divfree_field(&grid, 2.0, 2).unwrap();
        let h = random_divfree_field(&grid, 2.0, 3).unwrap();
        let r = b_form(&f, &g, &h).unwrap();
        assert!(r.antisymmetry_residual < 1e-12, "{r:?}");
        assert!(self_interaction_residual(&f, &h).unwrap() < 1e-12);
        let via_fourier = l2_inner(&advection(&f, &g).unwrap(), &h).unwrap();
        assert!((via_fourier - r.value).abs() < 1e-10 * r.value.abs().max(1.0));
    }
}
