//! Periodic box discretisation.
//!
//! A [`GridSpec`] fixes the cube `[0, L)^3`, the number of collocation points
//! per axis and the set of retained Fourier modes. Fields only ever carry
//! coefficients for retained modes; everything outside the dealiasing cube is
//! implicitly zero.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default dealiasing fraction (the 2/3 rule).
pub const TWO_THIRDS: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    box_length: f64,
    points_per_axis: usize,
    dealias_fraction: f64,
    cutoff: usize,
}

impl GridSpec {
    pub fn new(box_length: f64, points_per_axis: usize, dealias_fraction: f64) -> Result<Self> {
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {box_length}")));
        }
        if points_per_axis < 8 || points_per_axis % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {points_per_axis}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let half = points_per_axis / 2;
        // The Nyquist plane has no Hermitian partner, so it is never retained.
        let cutoff = ((dealias_fraction * half as f64 + 1e-9).floor() as usize).min(half - 1);
        if cutoff == 0 {
            return Err(Error::InvalidGrid("dealiasing leaves no retained modes".into()));
        }
        Ok(Self { box_length, points_per_axis, dealias_fraction, cutoff })
    }

    /// `L = 2*pi*16`, `N = 64`, 2/3 rule.
    pub fn default_box() -> Self {
        Self::new(2.0 * PI * 16.0, 64, TWO_THIRDS).expect("default grid is valid")
    }

    /// `L = 2*pi`, 2/3 rule.
    pub fn unit_torus(points_per_axis: usize) -> Result<Self> {
        Self::new(2.0 * PI, points_per_axis, TWO_THIRDS)
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Largest retained `|k_i|`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Same box and resolution with a different dealiasing rule.
    pub fn with_dealias_fraction(&self, dealias_fraction: f64) -> Result<Self> {
        Self::new(self.box_length, self.points_per_axis, dealias_fraction)
    }

    pub fn modes_per_axis(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn mode_count(&self) -> usize {
        self.modes_per_axis().pow(3)
    }

    pub fn point_count(&self) -> usize {
        self.points_per_axis.pow(3)
    }

    /// `2*pi/L`, the spacing of the dual lattice.
    pub fn wavenumber_unit(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.points_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// `L^3`, the Plancherel factor between coefficient sums and `L^2` integrals.
    pub fn volume(&self) -> f64 {
        self.box_length.powi(3)
    }

    /// Index of the zero mode in compact storage.
    pub fn zero_mode(&self) -> usize {
        self.mode_index([0, 0, 0]).expect("zero mode is retained")
    }

    pub fn mode_index(&self, k: [i64; 3]) -> Option<usize> {
        let c = self.cutoff as i64;
        if k.iter().any(|&ki| ki.abs() > c) {
            return None;
        }
        let m = self.modes_per_axis();
        let idx = |ki: i64| (ki + c) as usize;
        Some((idx(k[0]) * m + idx(k[1])) * m + idx(k[2]))
    }

    pub fn mode(&self, index: usize) -> [i64; 3] {
        let m = self.modes_per_axis();
        let c = self.cutoff as i64;
        let k3 = (index % m) as i64 - c;
        let k2 = ((index / m) % m) as i64 - c;
        let k1 = (index / (m * m)) as i64 - c;
        [k1, k2, k3]
    }

    /// Compact index of `-k` for the mode stored at `index`.
    pub fn conjugate_index(&self, index: usize) -> usize {
        self.mode_count() - 1 - index
    }

    /// Physical wavevector `xi(k) = 2*pi*k/L`.
    pub fn xi(&self, index: usize) -> [f64; 3] {
        let u = self.wavenumber_unit();
        let k = self.mode(index);
        [u * k[0] as f64, u * k[1] as f64, u * k[2] as f64]
    }

    pub fn xi_sq(&self, index: usize) -> f64 {
        let [a, b, c] = self.xi(index);
        a * a + b * b + c * c
    }

    /// `|xi|^2` for every retained mode in storage order.
    pub fn xi_sq_table(&self) -> Vec<f64> {
        (0..self.mode_count()).map(|i| self.xi_sq(i)).collect()
    }

    /// Flat FFT-buffer offset of the mode stored at `index`.
    pub(crate) fn fft_offset(&self, index: usize) -> usize {
        let n = self.points_per_axis as i64;
        let k = self.mode(index);
        let wrap = |ki: i64| ki.rem_euclid(n) as usize;
        let n = self.points_per_axis;
        (wrap(k[0]) * n + wrap(k[1])) * n + wrap(k[2])
    }

    /// Box-centred coordinate of grid point `(i, j, l)`, in `[-L/2, L/2)^3`.
    pub fn centered_coordinate(&self, point: usize) -> [f64; 3] {
        let n = self.points_per_axis;
        let h = self.spacing();
        let l = point % n;
        let j = (point / n) % n;
        let i = point / (n * n);
        let c = |a: usize| {
            let a = a as i64;
            let a = if a >= (n / 2) as i64 { a - n as i64 } else { a };
            a as f64 * h
        };
        [c(i), c(j), c(l)]
    }

    /// Raw coordinate of grid point `(i, j, l)` in `[0, L)^3`.
    pub fn coordinate(&self, point: usize) -> [f64; 3] {
        let n = self.points_per_axis;
        let h = self.spacing();
        [(point / (n * n)) as f64 * h, ((point / n) % n) as f64 * h, (point % n) as f64 * h]
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}
