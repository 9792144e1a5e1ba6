//! Time stepping of the perturbation `w = u - V`,
//!
//! `w_t - Delta w + (w.grad) w + (w.grad) V + (V.grad) w + grad pi = 0`,
//!
//! by an integrating-factor midpoint rule, together with the energy ledger
//! that audits the strong energy inequality along the run.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mild::MildTrajectory;
use crate::quadrature::{fit_integral, trapezoid};
use crate::spectral::{fft, galerkin_ball, gradient_norm_sq, l2_inner, leray_project, SpectralVectorField};
use crate::trilinear::b_value;

/// CFL safety factor: `dt <= CFL * h / max(|w| + |V|)`.
pub const CFL: f64 = 0.5;

/// Sharp Fourier-ball projector `P_m` onto integer wavevectors `|k| <= m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinTruncation {
    m: f64,
}

impl GalerkinTruncation {
    pub fn new(m: f64, grid: &GridSpec) -> Result<Self> {
        if !(m >= 1.0 && m <= grid.cutoff() as f64) {
            return Err(Error::InvalidArgument(format!(
                "Galerkin radius must lie in [1, {}], got {m}",
                grid.cutoff()
            )));
        }
        Ok(Self { m })
    }

    pub fn radius(&self) -> f64 {
        self.m
    }

    pub fn apply(&self, f: &SpectralVectorField) -> SpectralVectorField {
        galerkin_ball(f, self.m)
    }
}

/// Symmetric tensor `T` sampled on the grid, components `00 01 02 11 12 22`.
fn projected_divergence(grid: &GridSpec, flux: [Vec<f64>; 6]) -> SpectralVectorField {
    let refs: Vec<&[f64]> = flux.iter().map(|c| c.as_slice()).collect();
    let t = fft::analyze(grid, &refs);
    let idx = |i: usize, j: usize| match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    };
    let div = SpectralVectorField::from_fn(grid, |m| {
        let xi = grid.xi(m);
        std::array::from_fn(|j| {
            let mut s = Complex64::default();
            for (i, &x) in xi.iter().enumerate() {
                s += t[idx(i, j)][m] * Complex64::new(0.0, x);
            }
            s
        })
    });
    leray_project(&div)
}

fn max_speed(grid: &GridSpec, w: &[Vec<f64>], v: Option<&[Vec<f64>]>) -> f64 {
    let mut best = 0.0f64;
    for p in 0..grid.point_count() {
        let mut s = (w[0][p] * w[0][p] + w[1][p] * w[1][p] + w[2][p] * w[2][p]).sqrt();
        if let Some(v) = v {
            s += (v[0][p] * v[0][p] + v[1][p] * v[1][p] + v[2][p] * v[2][p]).sqrt();
        }
        best = best.max(s);
    }
    best
}

/// `P div(v (x) v)`, the Duhamel forcing of the mild formulation.
pub fn navier_term(v: &SpectralVectorField) -> SpectralVectorField {
    let grid = *v.grid();
    let phys = fft::synthesize(&grid, &[v.component(0), v.component(1), v.component(2)]);
    let n = grid.point_count();
    let mut flux: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    for p in 0..n {
        let u = [phys[0][p], phys[1][p], phys[2][p]];
        flux[0][p] = u[0] * u[0];
        flux[1][p] = u[0] * u[1];
        flux[2][p] = u[0] * u[2];
        flux[3][p] = u[1] * u[1];
        flux[4][p] = u[1] * u[2];
        flux[5][p] = u[2] * u[2];
    }
    projected_divergence(&grid, flux)
}

/// `-P [(w.grad) w + (w.grad) V + (V.grad) w]`, evaluated in divergence form
/// as `-P div(w (x) w + w (x) V + V (x) w)`.
pub fn rhs(w: &SpectralVectorField, v: &SpectralVectorField) -> Result<SpectralVectorField> {
    Ok(rhs_with_speed(w, Some(v))?.0)
}

fn rhs_with_speed(w: &SpectralVectorField, v: Option<&SpectralVectorField>) -> Result<(SpectralVectorField, f64)> {
    let grid = *w.grid();
    let v = match v {
        Some(v) if !v.is_zero() => {
            grid.ensure_same(v.grid())?;
            Some(v)
        }
        _ => None,
    };
    let n = grid.point_count();
    let mut flux: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let speed;
    match v {
        None => {
            let a = fft::synthesize(&grid, &[w.component(0), w.component(1), w.component(2)]);
            for p in 0..n {
                let u = [a[0][p], a[1][p], a[2][p]];
                flux[0][p] = u[0] * u[0];
                flux[1][p] = u[0] * u[1];
                flux[2][p] = u[0] * u[2];
                flux[3][p] = u[1] * u[1];
                flux[4][p] = u[1] * u[2];
                flux[5][p] = u[2] * u[2];
            }
            speed = max_speed(&grid, &a, None);
        }
        Some(v) => {
            let a = fft::synthesize(
                &grid,
                &[w.component(0), w.component(1), w.component(2), v.component(0), v.component(1), v.component(2)],
            );
            let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
            for p in 0..n {
                let u = [a[0][p], a[1][p], a[2][p]];
                let b = [a[3][p], a[4][p], a[5][p]];
                for (c, &(i, j)) in pairs.iter().enumerate() {
                    flux[c][p] = u[i] * u[j] + u[i] * b[j] + b[i] * u[j];
                }
            }
            speed = max_speed(&grid, &a[..3], Some(&a[3..]));
        }
    }
    Ok((projected_divergence(&grid, flux).scaled(-1.0), speed))
}

/// The three advective pieces of the perturbation nonlinearity, unprojected
/// and on the retained modes.
#[derive(Debug, Clone)]
pub struct AdvectionTerms {
    /// `(w.grad) w`
    pub ww: SpectralVectorField,
    /// `(V.grad) w`
    pub vw: SpectralVectorField,
    /// `(w.grad) V`
    pub wv: SpectralVectorField,
    /// `max_x |w| + |V|`.
    pub max_speed: f64,
}

impl AdvectionTerms {
    pub fn zero(grid: &GridSpec) -> Self {
        let z = SpectralVectorField::zeros(grid);
        Self { ww: z.clone(), vw: z.clone(), wv: z, max_speed: 0.0 }
    }

    /// `-P [ww + vw + wv]`.
    pub fn rhs(&self) -> SpectralVectorField {
        let total = self.ww.add(&self.vw).and_then(|s| s.add(&self.wv)).expect("terms share a grid");
        leray_project(&total.scaled(-1.0))
    }
}

/// Advective-form evaluation of the three nonlinear pieces.
pub fn advection_terms(w: &SpectralVectorField, v: Option<&SpectralVectorField>) -> Result<AdvectionTerms> {
    let grid = *w.grid();
    let v = v.filter(|v| !v.is_zero());
    if let Some(v) = v {
        grid.ensure_same(v.grid())?;
    }
    let gw = crate::spectral::gradient_tensor(w);
    let mut inputs: Vec<&[Complex64]> = vec![w.component(0), w.component(1), w.component(2)];
    inputs.extend(gw.iter().flat_map(|row| row.iter().map(|c| c.as_slice())));
    let gv;
    if let Some(v) = v {
        gv = crate::spectral::gradient_tensor(v);
        inputs.extend([v.component(0), v.component(1), v.component(2)]);
        inputs.extend(gv.iter().flat_map(|row| row.iter().map(|c| c.as_slice())));
    }
    let phys = fft::synthesize(&grid, &inputs);
    let n = grid.point_count();
    let wp = &phys[0..3];
    let dw = |i: usize, j: usize| &phys[3 + 3 * i + j];
    let mut ww: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for p in 0..n {
        for j in 0..3 {
            ww[j][p] = wp[0][p] * dw(0, j)[p] + wp[1][p] * dw(1, j)[p] + wp[2][p] * dw(2, j)[p];
        }
    }
    match v {
        None => {
            let out = fft::analyze(&grid, &[&ww[0], &ww[1], &ww[2]]);
            let mut it = out.into_iter();
            let ww = SpectralVectorField::from_components(&grid, std::array::from_fn(|_| it.next().expect("3")))?;
            let z = SpectralVectorField::zeros(&grid);
            Ok(AdvectionTerms { ww, vw: z.clone(), wv: z, max_speed: max_speed(&grid, wp, None) })
        }
        Some(_) => {
            let vp = &phys[12..15];
            let dv = |i: usize, j: usize| &phys[15 + 3 * i + j];
            let mut vw: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
            let mut wv: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
            for p in 0..n {
                for j in 0..3 {
                    vw[j][p] = vp[0][p] * dw(0, j)[p] + vp[1][p] * dw(1, j)[p] + vp[2][p] * dw(2, j)[p];
                    wv[j][p] = wp[0][p] * dv(0, j)[p] + wp[1][p] * dv(1, j)[p] + wp[2][p] * dv(2, j)[p];
                }
            }
            let out = fft::analyze(&grid, &[&ww[0], &ww[1], &ww[2], &vw[0], &vw[1], &vw[2], &wv[0], &wv[1], &wv[2]]);
            let mut it = out.into_iter();
            let mut take = || SpectralVectorField::from_components(&grid, std::array::from_fn(|_| it.next().expect("9")));
            let ww = take()?;
            let vw = take()?;
            let wv = take()?;
            Ok(AdvectionTerms { ww, vw, wv, max_speed: max_speed(&grid, wp, Some(vp)) })
        }
    }
}

fn cfl_check(grid: &GridSpec, dt: f64, speed: f64) -> Result<()> {
    if speed > 0.0 {
        let admissible = CFL * grid.spacing() / speed;
        if dt > admissible {
            return Err(Error::Cfl { dt, admissible });
        }
    }
    Ok(())
}

fn step_with_k1(
    w: &SpectralVectorField,
    k1: &SpectralVectorField,
    v_half: Option<&SpectralVectorField>,
    dt: f64,
    xi_sq: &[f64],
    nonlinear: bool,
) -> Result<SpectralVectorField> {
    let half = |f: &SpectralVectorField| f.scale_modes(|m| (-0.5 * dt * xi_sq[m]).exp());
    let full = w.scale_modes(|m| (-dt * xi_sq[m]).exp());
    if !nonlinear {
        return Ok(leray_project(&full));
    }
    let w_half = half(&w.axpy(0.5 * dt, k1)?);
    let (k2, speed) = rhs_with_speed(&w_half, v_half)?;
    cfl_check(w.grid(), dt, speed)?;
    Ok(leray_project(&full.axpy(dt, &half(&k2))?))
}

/// One integrating-factor midpoint step:
/// `k1 = rhs(w, V(t))`, `w_half = e^{dt/2 Delta}(w + dt/2 k1)`,
/// `k2 = rhs(w_half, V(t + dt/2))`, `w_next = e^{dt Delta} w + dt e^{dt/2 Delta} k2`.
pub fn step(
    w: &SpectralVectorField,
    v_t: &SpectralVectorField,
    v_t_half: &SpectralVectorField,
    dt: f64,
) -> Result<SpectralVectorField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let (k1, speed) = rhs_with_speed(w, Some(v_t))?;
    cfl_check(w.grid(), dt, speed)?;
    step_with_k1(w, &k1, Some(v_t_half), dt, &w.grid().xi_sq_table(), true)
}

/// Per-mode energies `L^3 |c_k|^2`.
pub fn mode_energies(f: &SpectralVectorField) -> Vec<f64> {
    let vol = f.grid().volume();
    (0..f.grid().mode_count())
        .map(|m| {
            let c = f.coeff(m);
            vol * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr())
        })
        .collect()
}

/// Running record of `||w||^2`, `||grad w||^2` and `2 int ||grad w||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    pub l2_sq: Vec<f64>,
    pub grad_l2_sq: Vec<f64>,
    pub dissipation_cum: Vec<f64>,
    /// `K_hat sup_t ||V(t)||_X`.
    pub k_sup_v: f64,
    last_energies: Vec<f64>,
}

impl EnergyLedger {
    pub fn new(k_sup_v: f64) -> Self {
        Self {
            times: Vec::new(),
            l2_sq: Vec::new(),
            grad_l2_sq: Vec::new(),
            dissipation_cum: Vec::new(),
            k_sup_v,
            last_energies: Vec::new(),
        }
    }

    /// Rebuilds a ledger from stored columns and the field at the last row.
    pub fn restore(
        k_sup_v: f64,
        times: Vec<f64>,
        l2_sq: Vec<f64>,
        grad_l2_sq: Vec<f64>,
        dissipation_cum: Vec<f64>,
        last: &SpectralVectorField,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 || l2_sq.len() != n || grad_l2_sq.len() != n || dissipation_cum.len() != n {
            return Err(Error::Inconsistent("ledger columns differ in length".into()));
        }
        Ok(Self { times, l2_sq, grad_l2_sq, dissipation_cum, k_sup_v, last_energies: mode_energies(last) })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a row. The dissipation integral over the new interval is taken
    /// mode by mode with the decay-plus-constant rule, exact for heat decay.
    pub fn push(&mut self, t: f64, w: &SpectralVectorField) {
        let grid = w.grid();
        let energies = mode_energies(w);
        let l2: f64 = energies.iter().sum();
        let grad = gradient_norm_sq(w);
        let cum = match self.times.last() {
            None => 0.0,
            Some(&t0) => {
                let h = t - t0;
                let mut s = 0.0;
                for m in 0..grid.mode_count() {
                    let lambda = grid.xi_sq(m);
                    let (a, b) = (self.last_energies[m], energies[m]);
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    s += lambda * fit_integral(h, 2.0 * lambda, a, b);
                }
                self.dissipation_cum.last().copied().unwrap_or(0.0) + 2.0 * s
            }
        };
        self.times.push(t);
        self.l2_sq.push(l2);
        self.grad_l2_sq.push(grad);
        self.dissipation_cum.push(cum);
        self.last_energies = energies;
    }

    fn potential(&self, i: usize) -> f64 {
        self.l2_sq[i] + (1.0 - self.k_sup_v) * self.dissipation_cum[i]
    }

    /// `||w(0)||^2 - ||w(t_i)||^2 - 2 (1 - K sup ||V||) int_0^{t_i} ||grad w||^2`.
    pub fn slack_vs_t0(&self, i: usize) -> f64 {
        self.potential(0) - self.potential(i)
    }

    /// Smallest slack over all stored pairs `s < t`, with the pair indices.
    pub fn min_pair_slack(&self) -> (f64, usize, usize) {
        if self.len() < 2 {
            return (0.0, 0, 0);
        }
        let mut best = (f64::INFINITY, 0, 1);
        let mut min_f = self.potential(0);
        let mut arg = 0;
        for i in 1..self.len() {
            let f = self.potential(i);
            let slack = min_f - f;
            if slack < best.0 {
                best = (slack, arg, i);
            }
            if f < min_f {
                min_f = f;
                arg = i;
            }
        }
        best
    }

    /// Slack for one pair of row indices.
    pub fn pair_slack(&self, s: usize, t: usize) -> f64 {
        self.potential(s) - self.potential(t)
    }

    /// Largest excess of `int_0^t ||grad w||^2` over `||w0||^2 / (2 (1 - K sup ||V||))`.
    pub fn dissipation_bound_excess(&self) -> f64 {
        if self.is_empty() || self.k_sup_v >= 1.0 {
            return f64::INFINITY;
        }
        let bound = self.l2_sq[0] / (2.0 * (1.0 - self.k_sup_v));
        self.dissipation_cum.iter().map(|d| 0.5 * d - bound).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "l2_sq", "grad_l2_sq", "dissipation_cum", "slack_vs_t0", "K_sup_V"])?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:e}", self.times[i]),
                format!("{:e}", self.l2_sq[i]),
                format!("{:e}", self.grad_l2_sq[i]),
                format!("{:e}", self.dissipation_cum[i]),
                format!("{:e}", self.slack_vs_t0(i)),
                format!("{:e}", self.k_sup_v),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// One time level handed to observers: the field, the interpolated `V` and
/// the advective terms at that instant.
pub struct Level<'a> {
    pub index: usize,
    pub t: f64,
    pub w: &'a SpectralVectorField,
    pub v: &'a SpectralVectorField,
    pub terms: &'a AdvectionTerms,
}

pub trait LevelObserver {
    fn observe(&mut self, level: &Level<'_>) -> Result<()>;
}

impl LevelObserver for () {
    fn observe(&mut self, _: &Level<'_>) -> Result<()> {
        Ok(())
    }
}

impl<A: LevelObserver, B: LevelObserver> LevelObserver for (A, B) {
    fn observe(&mut self, level: &Level<'_>) -> Result<()> {
        self.0.observe(level)?;
        self.1.observe(level)
    }
}

impl<T: LevelObserver + ?Sized> LevelObserver for &mut T {
    fn observe(&mut self, level: &Level<'_>) -> Result<()> {
        (**self).observe(level)
    }
}

impl<T: LevelObserver> LevelObserver for Vec<T> {
    fn observe(&mut self, level: &Level<'_>) -> Result<()> {
        self.iter_mut().try_for_each(|o| o.observe(level))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Keep a snapshot every this many steps (0 keeps only the initial field).
    pub store_every: usize,
    /// Disable to integrate the heat equation alone.
    pub nonlinear: bool,
    pub k_hat: f64,
    pub truncation: Option<GalerkinTruncation>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { store_every: 1, nonlinear: true, k_hat: 0.0, truncation: None }
    }
}

/// Resumable integrator state.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub step: usize,
    pub w: SpectralVectorField,
    pub ledger: EnergyLedger,
}

#[derive(Debug, Clone)]
pub struct WTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<SpectralVectorField>,
    pub ledger: EnergyLedger,
    /// Set when the run stopped early; the data above covers the completed part.
    pub failure: Option<String>,
}

impl WTrajectory {
    pub fn final_field(&self) -> &SpectralVectorField {
        self.snapshots.last().expect("trajectory holds the initial field")
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * self.dt.max(1.0))
    }
}

/// Number of steps covering `[0, t]` at step `dt`.
pub fn step_count(t: f64, dt: f64) -> usize {
    let n = t / dt;
    let r = n.round();
    if (n - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

pub struct Evolver<'a> {
    v: &'a MildTrajectory,
    dt: f64,
    opts: EvolveOptions,
    xi_sq: Vec<f64>,
    state: EvolutionState,
    observed: bool,
}

impl<'a> Evolver<'a> {
    pub fn new(w0: &SpectralVectorField, v: &'a MildTrajectory, dt: f64, opts: EvolveOptions) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        w0.grid().ensure_same(&v.grid)?;
        let w0 = match opts.truncation {
            Some(tr) => tr.apply(&leray_project(w0)),
            None => leray_project(w0),
        };
        let mut ledger = EnergyLedger::new(opts.k_hat * v.sup_norm);
        ledger.push(0.0, &w0);
        Ok(Self { xi_sq: w0.grid().xi_sq_table(), v, dt, opts, state: EvolutionState { step: 0, w: w0, ledger }, observed: false })
    }

    pub fn resume(state: EvolutionState, v: &'a MildTrajectory, dt: f64, opts: EvolveOptions) -> Result<Self> {
        state.w.grid().ensure_same(&v.grid)?;
        if state.ledger.len() != state.step + 1 {
            return Err(Error::Inconsistent("ledger length does not match the step counter".into()));
        }
        Ok(Self { xi_sq: state.w.grid().xi_sq_table(), v, dt, opts, state, observed: false })
    }

    pub fn state(&self) -> &EvolutionState {
        &self.state
    }

    pub fn into_state(self) -> EvolutionState {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.state.step as f64 * self.dt
    }

    fn terms(&self, t: f64) -> Result<(SpectralVectorField, AdvectionTerms)> {
        let v = self.v.at(t);
        let terms = if self.opts.nonlinear {
            advection_terms(&self.state.w, if self.v.is_zero() { None } else { Some(&v) })?
        } else {
            AdvectionTerms::zero(self.state.w.grid())
        };
        Ok((v, terms))
    }

    /// Advances to step `target`, calling `observer` once at every level up to
    /// `target` inclusive and `on_step` after each step. Repeated calls
    /// continue without observing a level twice.
    pub fn advance(
        &mut self,
        target: usize,
        observer: &mut dyn LevelObserver,
        on_step: &mut dyn FnMut(&EvolutionState) -> Result<()>,
    ) -> Result<()> {
        loop {
            let t = self.time();
            if self.observed && self.state.step >= target {
                return Ok(());
            }
            let (v, terms) = self.terms(t)?;
            if !self.observed {
                observer.observe(&Level { index: self.state.step, t, w: &self.state.w, v: &v, terms: &terms })?;
                self.observed = true;
            }
            if self.state.step >= target {
                return Ok(());
            }
            cfl_check(self.state.w.grid(), self.dt, terms.max_speed)?;
            let k1 = terms.rhs();
            let v_half = self.v.at(t + 0.5 * self.dt);
            let v_half = if self.v.is_zero() { None } else { Some(&v_half) };
            let mut next = step_with_k1(&self.state.w, &k1, v_half, self.dt, &self.xi_sq, self.opts.nonlinear)?;
            if let Some(tr) = self.opts.truncation {
                next = tr.apply(&next);
            }
            let bad = next.components().iter().any(|c| c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()));
            if bad {
                return Err(Error::NonFinite(format!("field at step {}", self.state.step + 1)));
            }
            self.state.step += 1;
            self.state.ledger.push(self.state.step as f64 * self.dt, &next);
            self.state.w = next;
            self.observed = false;
            on_step(&self.state)?;
        }
    }
}

/// Runs `w0` to `t_max` against the background `v`, recording snapshots and
/// the energy ledger. A mid-run failure returns the completed part with
/// `failure` set.
pub fn evolve_observed(
    w0: &SpectralVectorField,
    v: &MildTrajectory,
    t_max: f64,
    dt: f64,
    opts: EvolveOptions,
    observer: &mut dyn LevelObserver,
) -> Result<WTrajectory> {
    let mut ev = Evolver::new(w0, v, dt, opts)?;
    let target = step_count(t_max, dt);
    let mut times = vec![0.0];
    let mut snapshots = vec![ev.state().w.clone()];
    let store_every = opts.store_every;
    let result = ev.advance(target, observer, &mut |s| {
        if store_every > 0 && (s.step % store_every == 0 || s.step == target) {
            times.push(s.step as f64 * dt);
            snapshots.push(s.w.clone());
        }
        Ok(())
    });
    let failure = result.err().map(|e| e.to_string());
    let state = ev.into_state();
    if times.last() != Some(&(state.step as f64 * dt)) {
        times.push(state.step as f64 * dt);
        snapshots.push(state.w.clone());
    }
    Ok(WTrajectory { dt, times, snapshots, ledger: state.ledger, failure })
}

/// [`evolve_observed`] without an observer; `trunc` selects the Galerkin system.
pub fn evolve(
    w0: &SpectralVectorField,
    v: &MildTrajectory,
    t_max: f64,
    dt: f64,
    trunc: Option<GalerkinTruncation>,
    k_hat: f64,
) -> Result<WTrajectory> {
    let opts = EvolveOptions { truncation: trunc, k_hat, ..EvolveOptions::default() };
    evolve_observed(w0, v, t_max, dt, opts, &mut ())
}

/// Test function in the weak formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeakTest {
    /// `phi(x, tau) = e^{-tau} psi(x)`.
    Decaying,
    /// `phi(x, tau) = psi(x)`.
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    /// `|LHS - RHS|` with the `V` term evaluated as `-<(w.grad) phi, V>`.
    pub residual: f64,
    /// Same with that term rewritten as `b(w, V, phi)`.
    pub rearranged: f64,
    /// `|<w(t), phi(t)>| + |<w(s), phi(s)>|`, a scale for the residual.
    pub scale: f64,
}

/// Residual of the weak formulation between stored times `s < t`, with
/// trapezoid time quadrature over the stored snapshots.
pub fn weak_residual(
    w_traj: &WTrajectory,
    v: &MildTrajectory,
    test_field: &SpectralVectorField,
    test: WeakTest,
    s: f64,
    t: f64,
) -> Result<WeakResidual> {
    let (is, it) = match (w_traj.index_of(s), w_traj.index_of(t)) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => return Err(Error::InvalidArgument(format!("times ({s}, {t}) are not stored snapshot times with s < t"))),
    };
    let psi = leray_project(test_field);
    let grid = *psi.grid();
    let decay = |tau: f64| match test {
        WeakTest::Decaying => (-tau).exp(),
        WeakTest::Steady => 1.0,
    };
    let dpsi_factor = match test {
        WeakTest::Decaying => -1.0,
        WeakTest::Steady => 0.0,
    };
    let mut integrand = Vec::with_capacity(it - is + 1);
    let mut integrand_re = Vec::with_capacity(it - is + 1);
    for i in is..=it {
        let tau = w_traj.times[i];
        let w = &w_traj.snapshots[i];
        let vt = v.at(tau);
        let phi = psi.scaled(decay(tau));
        let mut grad_pair = 0.0;
        for m in 0..grid.mode_count() {
            let (a, b) = (w.coeff(m), phi.coeff(m));
            let dot = a[0] * b[0].conj() + a[1] * b[1].conj() + a[2] * b[2].conj();
            grad_pair += grid.xi_sq(m) * dot.re;
        }
        grad_pair *= grid.volume();
        let nonlinear = b_value(w, w, &phi)?;
        let v_term = -b_value(w, &phi, &vt)?;
        let v_term_re = b_value(w, &vt, &phi)?;
        let transport = b_value(&vt, w, &phi)?;
        let time_term = dpsi_factor * l2_inner(w, &phi)?;
        integrand.push(grad_pair + nonlinear + v_term + transport - time_term);
        integrand_re.push(grad_pair + nonlinear + v_term_re + transport - time_term);
    }
    let integrate = |vals: &[f64]| -> f64 {
        (0..vals.len() - 1)
            .map(|k| trapezoid(w_traj.times[is + k + 1] - w_traj.times[is + k], vals[k], vals[k + 1]))
            .sum()
    };
    let lhs_end = l2_inner(&w_traj.snapshots[it], &psi.scaled(decay(t)))?;
    let lhs_start = l2_inner(&w_traj.snapshots[is], &psi.scaled(decay(s)))?;
    Ok(WeakResidual {
        residual: (lhs_end - lhs_start + integrate(&integrand)).abs(),
        rearranged: (lhs_end - lhs_start + integrate(&integrand_re)).abs(),
        scale: lhs_end.abs() + lhs_start.abs(),
    })
}
