use num_complex::Complex64;

use super::fft;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Real, zero-mean vector field stored as Fourier coefficients on the
/// retained modes, one array per component.
///
/// Convention: `f(x) = sum_k c_k e^{i xi(k).x}` with `xi(k) = 2 pi k / L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVectorField {
    grid: GridSpec,
    coeffs: [Vec<Complex64>; 3],
    divergence_free: bool,
}

impl SpectralVectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let z = vec![Complex64::default(); grid.mode_count()];
        Self { grid: *grid, coeffs: [z.clone(), z.clone(), z], divergence_free: true }
    }

    /// Builds a field from per-mode values. The caller is responsible for
    /// Hermitian symmetry; the zero mode is discarded.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize) -> [Complex64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for m in 0..grid.mode_count() {
            let c = f(m);
            for d in 0..3 {
                out.coeffs[d][m] = c[d];
            }
        }
        out.clear_mean();
        out.divergence_free = false;
        out
    }

    pub fn from_components(grid: &GridSpec, coeffs: [Vec<Complex64>; 3]) -> Result<Self> {
        if coeffs.iter().any(|c| c.len() != grid.mode_count()) {
            return Err(Error::Inconsistent(format!(
                "expected {} coefficients per component",
                grid.mode_count()
            )));
        }
        let mut out = Self { grid: *grid, coeffs, divergence_free: false };
        out.clear_mean();
        Ok(out)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, d: usize) -> &[Complex64] {
        &self.coeffs[d]
    }

    pub fn components(&self) -> &[Vec<Complex64>; 3] {
        &self.coeffs
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Vec<Complex64>; 3] {
        self.divergence_free = false;
        &mut self.coeffs
    }

    pub fn coeff(&self, m: usize) -> [Complex64; 3] {
        [self.coeffs[0][m], self.coeffs[1][m], self.coeffs[2][m]]
    }

    /// Whether the field was produced by an operation that guarantees a
    /// divergence-free result.
    pub fn is_divergence_free(&self) -> bool {
        self.divergence_free
    }

    pub(crate) fn mark_divergence_free(mut self) -> Self {
        self.divergence_free = true;
        self
    }

    fn clear_mean(&mut self) {
        let z = self.grid.zero_mode();
        for c in &mut self.coeffs {
            c[z] = Complex64::default();
        }
    }

    /// Largest `|xi.c| / (|xi| |c|)` over nonzero modes.
    pub fn divergence_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in 0..self.grid.mode_count() {
            let xi = self.grid.xi(m);
            let c = self.coeff(m);
            let norm_c = (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt();
            let norm_xi = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if norm_c == 0.0 || norm_xi == 0.0 {
                continue;
            }
            let dot = c[0] * xi[0] + c[1] * xi[1] + c[2] * xi[2];
            worst = worst.max(dot.norm() / (norm_xi * norm_c));
        }
        worst
    }

    /// Largest `|c(-k) - conj c(k)|`, relative to the largest coefficient.
    pub fn hermitian_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for c in &self.coeffs {
            for m in 0..c.len() {
                scale = scale.max(c[m].norm());
                let j = self.grid.conjugate_index(m);
                worst = worst.max((c[j] - c[m].conj()).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|z| *z == Complex64::default()))
    }

    /// Applies a real per-mode multiplier `m(index)` to every component.
    pub fn scale_modes(&self, mut mult: impl FnMut(usize) -> f64) -> Self {
        let mut out = self.clone();
        for m in 0..self.grid.mode_count() {
            let s = mult(m);
            for d in 0..3 {
                out.coeffs[d][m] *= s;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            c.iter_mut().for_each(|z| *z *= s);
        }
        out
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let mut out = self.clone();
        for d in 0..3 {
            for (a, b) in out.coeffs[d].iter_mut().zip(other.coeffs[d].iter()) {
                *a += b * s;
            }
        }
        out.divergence_free = self.divergence_free && other.divergence_free;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `(1 - theta) self + theta other`.
    pub fn lerp(&self, other: &Self, theta: f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let mut out = self.clone();
        for d in 0..3 {
            for (a, b) in out.coeffs[d].iter_mut().zip(other.coeffs[d].iter()) {
                *a = *a * (1.0 - theta) + b * theta;
            }
        }
        out.divergence_free = self.divergence_free && other.divergence_free;
        Ok(out)
    }

    /// Same field viewed on a grid with a different dealiasing fraction and
    /// the same box and resolution. Modes outside the new band are dropped.
    pub fn regrid(&self, target: &GridSpec) -> Result<Self> {
        if target.box_length() != self.grid.box_length()
            || target.points_per_axis() != self.grid.points_per_axis()
        {
            return Err(Error::GridMismatch);
        }
        let mut out = Self::zeros(target);
        for m in 0..self.grid.mode_count() {
            if let Some(j) = target.mode_index(self.grid.mode(m)) {
                for d in 0..3 {
                    out.coeffs[d][j] = self.coeffs[d][m];
                }
            }
        }
        out.divergence_free = self.divergence_free;
        Ok(out)
    }

    pub fn to_physical(&self) -> PhysicalVectorField {
        let mut v = fft::synthesize(&self.grid, &[&self.coeffs[0], &self.coeffs[1], &self.coeffs[2]]);
        let c = v.pop().expect("three components");
        let b = v.pop().expect("three components");
        let a = v.pop().expect("three components");
        PhysicalVectorField { grid: self.grid, data: [a, b, c] }
    }
}

/// Real vector field sampled on the collocation grid, index `(i N + j) N + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalVectorField {
    grid: GridSpec,
    data: [Vec<f64>; 3],
}

impl PhysicalVectorField {
    pub fn new(grid: &GridSpec, data: [Vec<f64>; 3]) -> Result<Self> {
        if data.iter().any(|c| c.len() != grid.point_count()) {
            return Err(Error::Inconsistent(format!("expected {} samples per component", grid.point_count())));
        }
        Ok(Self { grid: *grid, data })
    }

    /// Samples `f` at the box-centred coordinate of each grid point.
    pub fn from_centered_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.point_count();
        let mut data = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for p in 0..n {
            let v = f(grid.centered_coordinate(p));
            for d in 0..3 {
                data[d][p] = v[d];
            }
        }
        Self { grid: *grid, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, d: usize) -> &[f64] {
        &self.data[d]
    }

    pub fn value(&self, point: usize) -> [f64; 3] {
        [self.data[0][point], self.data[1][point], self.data[2][point]]
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        (0..self.grid.point_count())
            .map(|p| {
                let [a, b, c] = self.value(p);
                (a * a + b * b + c * c).sqrt()
            })
            .collect()
    }

    /// Grid quadrature of `f . g`.
    pub fn dot_integral(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            s += self.data[d].iter().zip(other.data[d].iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        s * self.grid.cell_volume()
    }

    pub fn map_points(&self, f: impl Fn(usize, [f64; 3]) -> [f64; 3]) -> Self {
        let mut out = self.clone();
        for p in 0..self.grid.point_count() {
            let v = f(p, self.value(p));
            for d in 0..3 {
                out.data[d][p] = v[d];
            }
        }
        out
    }

    /// Retained-mode coefficients with the mean removed. No projection.
    pub fn to_spectral(&self) -> SpectralVectorField {
        let mut v = fft::analyze(&self.grid, &[&self.data[0], &self.data[1], &self.data[2]]);
        let c = v.pop().expect("three components");
        let b = v.pop().expect("three components");
        let a = v.pop().expect("three components");
        SpectralVectorField::from_components(&self.grid, [a, b, c]).expect("sizes match the grid")
    }
}

/// Real scalar field stored on the retained modes. Unlike vector fields the
/// mean is kept, since mollifiers have nonzero integral.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl ScalarField {
    pub fn from_fn(grid: &GridSpec, f: impl FnMut(usize) -> Complex64) -> Self {
        Self { grid: *grid, coeffs: (0..grid.mode_count()).map(f).collect() }
    }

    /// Scalar kernel whose convolution acts as the radial Fourier multiplier `f(|xi|)`.
    pub fn from_symbol(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let vol = grid.volume();
        Self::from_fn(grid, |m| Complex64::new(f(grid.xi_sq(m).sqrt()) / vol, 0.0))
    }

    pub fn from_samples(grid: &GridSpec, samples: &[f64]) -> Result<Self> {
        if samples.len() != grid.point_count() {
            return Err(Error::Inconsistent("sample count does not match grid".into()));
        }
        let mut v = fft::analyze(grid, &[samples]);
        Ok(Self { grid: *grid, coeffs: v.pop().expect("one output") })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn hermitian_residual(&self) -> f64 {
        let scale = self.coeffs.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (0..self.coeffs.len())
            .map(|m| (self.coeffs[self.grid.conjugate_index(m)] - self.coeffs[m].conj()).norm())
            .fold(0.0, f64::max);
        worst / scale
    }

    pub fn to_physical(&self) -> Vec<f64> {
        fft::synthesize(&self.grid, &[&self.coeffs]).pop().expect("one output")
    }

    /// Periodic convolution `(self * f)(x) = int self(x - y) f(y) dy`,
    /// diagonal in Fourier space.
    pub fn convolve(&self, f: &SpectralVectorField) -> Result<SpectralVectorField> {
        self.grid.ensure_same(f.grid())?;
        let vol = self.grid.volume();
        let mut out = f.clone();
        let df = f.is_divergence_free();
        for c in out.components_mut().iter_mut() {
            for (z, s) in c.iter_mut().zip(self.coeffs.iter()) {
                *z *= s * vol;
            }
        }
        Ok(if df { out.mark_divergence_free() } else { out })
    }

    /// `self * other` as periodic convolution.
    pub fn convolve_scalar(&self, other: &ScalarField) -> Result<ScalarField> {
        self.grid.ensure_same(other.grid())?;
        let vol = self.grid.volume();
        Ok(Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(other.coeffs.iter()).map(|(a, b)| a * b * vol).collect(),
        })
    }
}
