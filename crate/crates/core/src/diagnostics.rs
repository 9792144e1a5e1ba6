//! Fourier-splitting bookkeeping and the generalized energy identity.
//!
//! The low/high split uses the multiplier `e^{-|xi|^2}`. The weight pair is
//! `E(t) = (1+t)^alpha`, `G(t) = sqrt(alpha / (2 (1+t)))`, for which
//! `E' = 2 E G^2`.
//!
//! Everything here is driven by per-mode arrays: the energies
//! `e_k = L^3 |w_k|^2` and the pairings `c_k = L^3 Re(A_k . conj w_k)` of the
//! advective terms with `w`. Any multiplier inner product `<A, M w>` is then
//! `sum_k M_k c_k`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mild::MildTrajectory;
use crate::perturbation::{mode_energies, EnergyLedger, Level, LevelObserver, WTrajectory};
use crate::quadrature::{fit_dissipative_weight, fit_weighted, trapezoid};
use crate::spectral::{gradient_norm_sq, l2_norm_sq, SpectralVectorField};
use crate::trilinear::b_value;

/// Constant in `||f||_6 <= S ||grad f||_2`. The sharp value is about 0.4273;
/// the bound checks use 1.
pub const SOBOLEV: f64 = 1.0;

pub fn weight_e(alpha: f64, t: f64) -> f64 {
    (1.0 + t).powf(alpha)
}

pub fn weight_e_prime(alpha: f64, t: f64) -> f64 {
    alpha * (1.0 + t).powf(alpha - 1.0)
}

pub fn cutoff_g(alpha: f64, t: f64) -> f64 {
    (alpha / (2.0 * (t + 1.0))).sqrt()
}

/// `E'(t) - 2 E(t) G(t)^2`, relative to `E'(t)`.
pub fn weight_identity_residual(alpha: f64, t: f64) -> f64 {
    let g = cutoff_g(alpha, t);
    let ep = weight_e_prime(alpha, t);
    (ep - 2.0 * weight_e(alpha, t) * g * g).abs() / ep
}

/// `int_s^t E(tau) d tau`.
pub fn weight_e_integral(alpha: f64, s: f64, t: f64) -> f64 {
    ((1.0 + t).powf(alpha + 1.0) - (1.0 + s).powf(alpha + 1.0)) / (alpha + 1.0)
}

/// `int_s^t (1+tau)^{alpha-3} d tau`.
pub fn budget_integral(alpha: f64, s: f64, t: f64) -> f64 {
    let p = alpha - 2.0;
    if p.abs() < 1e-12 {
        ((1.0 + t) / (1.0 + s)).ln()
    } else {
        ((1.0 + t).powf(p) - (1.0 + s).powf(p)) / p
    }
}

/// `(low, high)` masses `sum e^{-2|xi|^2} e_k` and `sum (1 - e^{-|xi|^2})^2 e_k`.
pub fn split_masses(w: &SpectralVectorField) -> (f64, f64) {
    let grid = w.grid();
    let e = mode_energies(w);
    let mut low = 0.0;
    let mut high = 0.0;
    for (m, &ek) in e.iter().enumerate() {
        let phi = (-grid.xi_sq(m)).exp();
        low += phi * phi * ek;
        high += (1.0 - phi) * (1.0 - phi) * ek;
    }
    (low, high)
}

/// `sum e^{-|xi|^2} (1 - e^{-|xi|^2}) e_k`; `low + high + 2 cross = ||w||^2`.
pub fn split_cross(w: &SpectralVectorField) -> f64 {
    let grid = w.grid();
    mode_energies(w)
        .iter()
        .enumerate()
        .map(|(m, &ek)| {
            let phi = (-grid.xi_sq(m)).exp();
            phi * (1.0 - phi) * ek
        })
        .sum()
}

/// Largest violation over the grid of `1 - e^{-|xi|^2} <= |xi|^2` and
/// `1 - e^{-|xi|^2} <= 1`; nonpositive when both hold.
pub fn multiplier_bound_violation(grid: &GridSpec) -> f64 {
    (0..grid.mode_count())
        .map(|m| {
            let lam = grid.xi_sq(m);
            let om = -(-lam).exp_m1();
            (om - lam).max(om - 1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Lebesgue norms of the convolution kernels that appear in the bounds.
/// `phi * phi` has multiplier `e^{-2|xi|^2}`; `eta` has multiplier
/// `e^{-2|xi|^2} - 2 e^{-|xi|^2}`, so `(1 - phi)^2 = 1 + eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelNorms {
    pub phiphi_l1: f64,
    pub phiphi_l65: f64,
    pub eta_l1: f64,
    pub eta_l65: f64,
}

/// Heat kernel with multiplier `e^{-t |xi|^2}`.
fn heat_kernel(t: f64, r: f64) -> f64 {
    (4.0 * std::f64::consts::PI * t).powf(-1.5) * (-r * r / (4.0 * t)).exp()
}

/// `(int_{R^3} |f(|x|)|^p dx)^{1/p}` by composite Simpson in the radius.
pub fn radial_lp_norm(f: impl Fn(f64) -> f64, p: f64, r_max: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = r_max / n as f64;
    let integrand = |r: f64| 4.0 * std::f64::consts::PI * r * r * f(r).abs().powf(p);
    let mut s = integrand(0.0) + integrand(r_max);
    for i in 1..n {
        s += integrand(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (s * h / 3.0).powf(1.0 / p)
}

/// Closed form `||g_t||_p = (4 pi t)^{-3/2 + 3/(2p)} p^{-3/(2p)}` for the heat kernel.
pub fn heat_kernel_lp(t: f64, p: f64) -> f64 {
    (4.0 * std::f64::consts::PI * t).powf(-1.5 + 1.5 / p) * p.powf(-1.5 / p)
}

pub fn kernel_norms() -> KernelNorms {
    static NORMS: OnceLock<KernelNorms> = OnceLock::new();
    *NORMS.get_or_init(|| {
        let eta = |r: f64| heat_kernel(2.0, r) - 2.0 * heat_kernel(1.0, r);
        KernelNorms {
            phiphi_l1: 1.0,
            phiphi_l65: heat_kernel_lp(2.0, 1.2),
            eta_l1: radial_lp_norm(eta, 1.0, 60.0, 200_000),
            eta_l65: radial_lp_norm(eta, 1.2, 60.0, 200_000),
        }
    })
}

/// Choice of `(E, psi)` in the generalized energy identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMode {
    /// `E = 1`, `psi(tau) * w = e^{(t - tau) Delta} phi * w`.
    HeatKernelShifted,
    /// `E = (1+tau)^alpha`, `psi = delta - phi`.
    DeltaMinusPhi,
}

impl fmt::Display for PsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HeatKernelShifted => "heat_kernel_shifted",
            Self::DeltaMinusPhi => "delta_minus_phi",
        })
    }
}

impl FromStr for PsiMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat_kernel_shifted" => Ok(Self::HeatKernelShifted),
            "delta_minus_phi" => Ok(Self::DeltaMinusPhi),
            _ => Err(Error::InvalidArgument(format!("unknown psi mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenEnergyCheck {
    pub mode: PsiMode,
    pub s: f64,
    pub t: f64,
    /// `E(t) ||psi(t) * w(t)||^2`.
    pub lhs: f64,
    /// `E(s) ||psi(s) * w(s)||^2 + int diag - 2 int E b`.
    pub rhs: f64,
    pub slack: f64,
}

impl GenEnergyCheck {
    fn new(mode: PsiMode, s: f64, t: f64, lhs: f64, rhs: f64) -> Self {
        Self { mode, s, t, lhs, rhs, slack: rhs - lhs }
    }
}

/// Per-mode multipliers on one grid.
struct Multipliers {
    lam: Vec<f64>,
    /// `e^{-2 lam}`
    phiphi: Vec<f64>,
    /// `(1 - e^{-lam})^2`
    om2: Vec<f64>,
    /// `e^{-2 lam} - 2 e^{-lam}`
    eta: Vec<f64>,
}

impl Multipliers {
    fn new(grid: &GridSpec) -> Self {
        let lam = grid.xi_sq_table();
        let phiphi = lam.iter().map(|l| (-2.0 * l).exp()).collect();
        let om2 = lam.iter().map(|l| (-l).exp_m1().powi(2)).collect();
        let eta = lam.iter().map(|l| (-2.0 * l).exp() - 2.0 * (-l).exp()).collect();
        Self { lam, phiphi, om2, eta }
    }

    /// `int_{t0}^{t1} sum_k (E' - 2 E lam_k) om2_k e_k`.
    fn diag_increment(&self, alpha: f64, t0: f64, t1: f64, prev: &[f64], cur: &[f64]) -> f64 {
        let h = t1 - t0;
        let (e0, e1) = (weight_e(alpha, t0), weight_e(alpha, t1));
        let int_e = weight_e_integral(alpha, t0, t1);
        (0..self.lam.len())
            .map(|m| self.om2[m] * fit_dissipative_weight(h, self.lam[m], prev[m], cur[m], e0, e1, int_e))
            .sum()
    }

    /// `int_{t0}^{t1} w(tau) ||grad w||^2` with `w` linear between `w0` and `w1`.
    fn grad_increment(&self, h: f64, prev: &[f64], cur: &[f64], w0: f64, w1: f64) -> f64 {
        (0..self.lam.len()).map(|m| self.lam[m] * fit_weighted(h, 2.0 * self.lam[m], prev[m], cur[m], w0, w1)).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `L^3 Re(A_k . conj w_k)` per mode.
fn pairing(a: &SpectralVectorField, w: &SpectralVectorField) -> Vec<f64> {
    let vol = w.grid().volume();
    (0..w.grid().mode_count())
        .map(|m| {
            let (x, y) = (a.coeff(m), w.coeff(m));
            vol * (x[0] * y[0].conj() + x[1] * y[1].conj() + x[2] * y[2].conj()).re
        })
        .collect()
}

/// One row of the diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub l2_sq: f64,
    pub low_mass: f64,
    pub high_mass: f64,
    pub g: f64,
    pub e: f64,
    /// Generalized energy slack with `psi = delta - phi` over the step ending here.
    pub gen_energy_slack: f64,
    pub i2_lhs: f64,
    pub i2_rhs: f64,
    pub i3_lhs: f64,
    pub i3_rhs: f64,
    pub i4_lhs: f64,
    pub i4_rhs: f64,
}

pub const DIAGNOSTICS_COLUMNS: [&str; 13] = [
    "t",
    "l2_sq",
    "low_mass",
    "high_mass",
    "G",
    "E",
    "gen_energy_slack",
    "I2_lhs",
    "I2_rhs",
    "I3_lhs",
    "I3_rhs",
    "I4_lhs",
    "I4_rhs",
];

impl DiagnosticsRow {
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.t,
            self.l2_sq,
            self.low_mass,
            self.high_mass,
            self.g,
            self.e,
            self.gen_energy_slack,
            self.i2_lhs,
            self.i2_rhs,
            self.i3_lhs,
            self.i3_rhs,
            self.i4_lhs,
            self.i4_rhs,
        ]
    }

    pub fn from_array(a: [f64; 13]) -> Self {
        Self {
            t: a[0],
            l2_sq: a[1],
            low_mass: a[2],
            high_mass: a[3],
            g: a[4],
            e: a[5],
            gen_energy_slack: a[6],
            i2_lhs: a[7],
            i2_rhs: a[8],
            i3_lhs: a[9],
            i3_rhs: a[10],
            i4_lhs: a[11],
            i4_rhs: a[12],
        }
    }
}

/// A named `lhs <= rhs` comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    /// `lhs <= rhs (1 + rel)`, with exact zeros compared exactly.
    pub fn holds(&self, rel: f64) -> bool {
        self.lhs <= self.rhs + rel * self.rhs.abs()
    }
}

/// Running integrals carried across levels; restorable from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplittingTotals {
    pub w0_l2_sq: f64,
    /// `int_0^t ||grad w||^2`
    pub grad_int: f64,
    /// `int_0^t E ||grad w||^2`
    pub e_grad_int: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    /// `max_t low(t) - low_bound(t)`
    pub low_excess: f64,
    /// `max_t E(t) high(t) - high_bound(t)`
    pub high_excess: f64,
    pub low_worst_ratio: f64,
    pub high_worst_ratio: f64,
    /// `max |E' - 2 E G^2| / E'` at observed times.
    pub weight_residual: f64,
    pub high_mass_0: f64,
}

impl SplittingTotals {
    pub const LEN: usize = 13;

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.w0_l2_sq,
            self.grad_int,
            self.e_grad_int,
            self.j1,
            self.j2,
            self.j3,
            self.j4,
            self.low_excess,
            self.high_excess,
            self.low_worst_ratio,
            self.high_worst_ratio,
            self.weight_residual,
            self.high_mass_0,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::LEN {
            return Err(Error::Inconsistent(format!("expected {} totals, found {}", Self::LEN, v.len())));
        }
        Ok(Self {
            w0_l2_sq: v[0],
            grad_int: v[1],
            e_grad_int: v[2],
            j1: v[3],
            j2: v[4],
            j3: v[5],
            j4: v[6],
            low_excess: v[7],
            high_excess: v[8],
            low_worst_ratio: v[9],
            high_worst_ratio: v[10],
            weight_residual: v[11],
            high_mass_0: v[12],
        })
    }
}

struct PrevLevel {
    t: f64,
    e: Vec<f64>,
    e_b_high: f64,
    high: f64,
    j_integrands: [f64; 3],
}

const PENDING_WIDTH: usize = 10;

struct PendingPair {
    s: usize,
    t: usize,
    low_start: f64,
    low_b: f64,
    low_prev: Option<(f64, f64)>,
    high_start: f64,
    high_diag: f64,
    high_b: f64,
}

/// Level observer that fills the diagnostics table, accumulates the bound
/// integrals and evaluates the generalized energy identity on chosen pairs.
pub struct SplittingMonitor {
    alpha: f64,
    k_sup_v: f64,
    dt: f64,
    mult: Multipliers,
    w0_energies: Vec<f64>,
    rows: Vec<DiagnosticsRow>,
    totals: SplittingTotals,
    prev: Option<PrevLevel>,
    pairs: Vec<PendingPair>,
    checks: Vec<GenEnergyCheck>,
    level_times: Vec<f64>,
}

impl SplittingMonitor {
    /// `pairs` are level indices `(s, t)` with `s < t`.
    /// Levels are at `t_n = n dt`.
    pub fn new(grid: &GridSpec, alpha: f64, k_sup_v: f64, dt: f64, pairs: &[(usize, usize)]) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if pairs.iter().any(|&(s, t)| s >= t) {
            return Err(Error::InvalidArgument("generalized energy pairs need s < t".into()));
        }
        Ok(Self {
            alpha,
            k_sup_v,
            dt,
            mult: Multipliers::new(grid),
            w0_energies: Vec::new(),
            rows: Vec::new(),
            totals: SplittingTotals::default(),
            prev: None,
            pairs: pairs
                .iter()
                .map(|&(s, t)| PendingPair {
                    s,
                    t,
                    low_start: 0.0,
                    low_b: 0.0,
                    low_prev: None,
                    high_start: 0.0,
                    high_diag: 0.0,
                    high_b: 0.0,
                })
                .collect(),
            checks: Vec::new(),
            level_times: Vec::new(),
        })
    }

    /// Continues from stored rows and totals. The next observed level must be
    /// the one the rows end at; it is used to rebuild the per-mode state only.
    pub fn resume(
        grid: &GridSpec,
        alpha: f64,
        k_sup_v: f64,
        dt: f64,
        w0: &SpectralVectorField,
        rows: Vec<DiagnosticsRow>,
        totals: SplittingTotals,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let mut m = Self::new(grid, alpha, k_sup_v, dt, pairs)?;
        m.w0_energies = mode_energies(w0);
        m.level_times = rows.iter().map(|r| r.t).collect();
        m.rows = rows;
        m.totals = totals;
        Ok(m)
    }

    pub fn rows(&self) -> &[DiagnosticsRow] {
        &self.rows
    }

    pub fn totals(&self) -> &SplittingTotals {
        &self.totals
    }

    pub fn checks(&self) -> &[GenEnergyCheck] {
        &self.checks
    }

    /// Accumulators of the pairs still open, flattened for checkpoints.
    pub fn pending_pairs(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .flat_map(|p| {
                let (has, tp, bp) = p.low_prev.map_or((0.0, 0.0, 0.0), |(t, b)| (1.0, t, b));
                [p.s as f64, p.t as f64, p.low_start, p.low_b, has, tp, bp, p.high_start, p.high_diag, p.high_b]
            })
            .collect()
    }

    /// Reopens pairs saved by [`Self::pending_pairs`].
    pub fn restore_pending(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() % PENDING_WIDTH != 0 {
            return Err(Error::Inconsistent("pending pair array has a ragged length".into()));
        }
        for c in flat.chunks_exact(PENDING_WIDTH) {
            self.pairs.push(PendingPair {
                s: c[0] as usize,
                t: c[1] as usize,
                low_start: c[2],
                low_b: c[3],
                low_prev: (c[4] != 0.0).then_some((c[5], c[6])),
                high_start: c[7],
                high_diag: c[8],
                high_b: c[9],
            });
        }
        Ok(())
    }

    fn observe_arrays(&mut self, index: usize, t: f64, e: Vec<f64>, c: [Vec<f64>; 3]) {
        let alpha = self.alpha;
        let mult = &self.mult;
        let kn = kernel_norms();
        let resuming = self.prev.is_none() && !self.rows.is_empty();
        if self.rows.is_empty() {
            self.w0_energies = e.clone();
            self.totals.w0_l2_sq = e.iter().sum();
            self.totals.low_excess = f64::NEG_INFINITY;
            self.totals.high_excess = f64::NEG_INFINITY;
        }
        let w0_norm = self.totals.w0_l2_sq.sqrt();
        let ee = weight_e(alpha, t);
        let l2: f64 = e.iter().sum();
        let grad = dot(&mult.lam, &e);
        let low = dot(&mult.phiphi, &e);
        let high = dot(&mult.om2, &e);
        let csum: Vec<f64> = (0..e.len()).map(|m| c[0][m] + c[1][m] + c[2][m]).collect();
        let e_b_high = ee * dot(&mult.om2, &csum);
        let j_integrands = [ee * dot(&mult.eta, &c[0]).abs(), ee * dot(&mult.eta, &c[1]).abs(), ee * dot(&mult.om2, &c[2]).abs()];

        let mut gen_slack = 0.0;
        let mut step_diag = 0.0;
        let mut step_b = 0.0;
        if let Some(p) = &self.prev {
            let h = t - p.t;
            step_diag = mult.diag_increment(alpha, p.t, t, &p.e, &e);
            step_b = trapezoid(h, p.e_b_high, e_b_high);
            let rhs = weight_e(alpha, p.t) * p.high + step_diag - 2.0 * step_b;
            gen_slack = rhs - ee * high;
            let tot = &mut self.totals;
            tot.grad_int += mult.grad_increment(h, &p.e, &e, 1.0, 1.0);
            tot.e_grad_int += mult.grad_increment(h, &p.e, &e, weight_e(alpha, p.t), ee);
            tot.j1 += step_diag;
            tot.j2 += trapezoid(h, p.j_integrands[0], j_integrands[0]);
            tot.j3 += trapezoid(h, p.j_integrands[1], j_integrands[1]);
            tot.j4 += trapezoid(h, p.j_integrands[2], j_integrands[2]);
        } else if !resuming {
            self.totals.high_mass_0 = high;
        }

        if !resuming {
            let tot = &mut self.totals;
            tot.weight_residual = tot.weight_residual.max(weight_identity_residual(alpha, t));
            let i1: f64 =
                (0..e.len()).map(|m| (-2.0 * t * mult.lam[m]).exp() * mult.phiphi[m] * self.w0_energies[m]).sum();
            let low_bound =
                i1 + 2.0 * (SOBOLEV * kn.phiphi_l65 * w0_norm + 2.0 * self.k_sup_v) * tot.grad_int;
            tot.low_excess = tot.low_excess.max(low - low_bound);
            if low_bound > 0.0 && t > 0.0 && tot.w0_l2_sq > 0.0 {
                tot.low_worst_ratio = tot.low_worst_ratio.max(low / low_bound);
            }
            let high_bound = tot.high_mass_0
                + 0.25 * alpha.powi(3) * tot.w0_l2_sq * budget_integral(alpha, 0.0, t)
                + 2.0
                    * (SOBOLEV * kn.eta_l65 * w0_norm
                        + self.k_sup_v * kn.eta_l1
                        + self.k_sup_v * (1.0 + kn.eta_l1))
                    * tot.e_grad_int;
            tot.high_excess = tot.high_excess.max(ee * high - high_bound);
            if high_bound > 0.0 && t > 0.0 && tot.w0_l2_sq > 0.0 {
                tot.high_worst_ratio = tot.high_worst_ratio.max(ee * high / high_bound);
            }
            self.rows.push(DiagnosticsRow {
                t,
                l2_sq: l2,
                low_mass: low,
                high_mass: high,
                g: cutoff_g(alpha, t),
                e: ee,
                gen_energy_slack: gen_slack,
                i2_lhs: dot(&mult.phiphi, &c[0]).abs(),
                i2_rhs: SOBOLEV * kn.phiphi_l65 * w0_norm * grad,
                i3_lhs: dot(&mult.phiphi, &c[1]).abs(),
                i3_rhs: self.k_sup_v * grad,
                i4_lhs: dot(&mult.phiphi, &c[2]).abs(),
                i4_rhs: self.k_sup_v * grad,
            });
            self.level_times.push(t);
        }

        for pair in self.pairs.iter_mut().filter(|p| p.s < index && index <= p.t) {
            pair.high_diag += step_diag;
            pair.high_b += step_b;
        }
        for pair in self.pairs.iter_mut() {
            if index < pair.s || index > pair.t {
                continue;
            }
            let t_end = pair.t as f64 * self.dt;
            let g: Vec<f64> = (0..e.len()).map(|m| (-2.0 * (t_end - t) * mult.lam[m]).exp() * mult.phiphi[m]).collect();
            let b = dot(&g, &csum);
            if index == pair.s {
                pair.low_start = dot(&g, &e);
                pair.high_start = ee * high;
            }
            if let Some((tp, bp)) = pair.low_prev {
                pair.low_b += trapezoid(t - tp, bp, b);
            }
            pair.low_prev = Some((t, b));
            if index == pair.t {
                let s_time = self.level_times.get(pair.s).copied().unwrap_or(f64::NAN);
                self.checks.push(GenEnergyCheck::new(
                    PsiMode::HeatKernelShifted,
                    s_time,
                    t,
                    low,
                    pair.low_start - 2.0 * pair.low_b,
                ));
                self.checks.push(GenEnergyCheck::new(
                    PsiMode::DeltaMinusPhi,
                    s_time,
                    t,
                    ee * high,
                    pair.high_start + pair.high_diag - 2.0 * pair.high_b,
                ));
            }
        }
        self.pairs.retain(|p| index < p.t);

        self.prev = Some(PrevLevel { t, e, e_b_high, high, j_integrands });
    }

    /// Summary of the run-level bound checks.
    pub fn bound_checks(&self) -> Vec<BoundCheck> {
        let kn = kernel_norms();
        let tot = &self.totals;
        let t = self.rows.last().map_or(0.0, |r| r.t);
        let w0 = tot.w0_l2_sq.sqrt();
        let mut out = Vec::new();
        let (mut i2, mut i3, mut i4) = ((0.0f64, 0.0f64), (0.0f64, 0.0f64), (0.0f64, 0.0f64));
        let worst = |acc: &mut (f64, f64), lhs: f64, rhs: f64| {
            if lhs - rhs > acc.0 - acc.1 || (acc.0 == 0.0 && acc.1 == 0.0) {
                *acc = (lhs, rhs);
            }
        };
        for r in &self.rows {
            worst(&mut i2, r.i2_lhs, r.i2_rhs);
            worst(&mut i3, r.i3_lhs, r.i3_rhs);
            worst(&mut i4, r.i4_lhs, r.i4_rhs);
        }
        out.push(BoundCheck { name: "I2".into(), lhs: i2.0, rhs: i2.1 });
        out.push(BoundCheck { name: "I3".into(), lhs: i3.0, rhs: i3.1 });
        out.push(BoundCheck { name: "I4".into(), lhs: i4.0, rhs: i4.1 });
        out.push(BoundCheck {
            name: "J1".into(),
            lhs: tot.j1,
            rhs: 0.25 * self.alpha.powi(3) * tot.w0_l2_sq * budget_integral(self.alpha, 0.0, t),
        });
        out.push(BoundCheck { name: "J2".into(), lhs: tot.j2, rhs: SOBOLEV * kn.eta_l65 * w0 * tot.e_grad_int });
        out.push(BoundCheck { name: "J3".into(), lhs: tot.j3, rhs: self.k_sup_v * kn.eta_l1 * tot.e_grad_int });
        out.push(BoundCheck { name: "J4".into(), lhs: tot.j4, rhs: self.k_sup_v * (1.0 + kn.eta_l1) * tot.e_grad_int });
        out.push(BoundCheck { name: "low_frequency_ratio".into(), lhs: tot.low_worst_ratio, rhs: 1.0 });
        out.push(BoundCheck { name: "high_frequency_ratio".into(), lhs: tot.high_worst_ratio, rhs: 1.0 });
        out
    }

    pub fn finish(self) -> SplittingDiagnostics {
        let bound_checks = self.bound_checks();
        SplittingDiagnostics {
            alpha: self.alpha,
            k_sup_v: self.k_sup_v,
            rows: self.rows,
            totals: self.totals,
            gen_energy: self.checks,
            bound_checks,
        }
    }
}

impl LevelObserver for SplittingMonitor {
    fn observe(&mut self, level: &Level<'_>) -> Result<()> {
        let e = mode_energies(level.w);
        let c = [pairing(&level.terms.ww, level.w), pairing(&level.terms.vw, level.w), pairing(&level.terms.wv, level.w)];
        self.observe_arrays(level.index, level.t, e, c);
        Ok(())
    }
}

/// Level indices of `count` pairs `(s, t)` spread over `levels` steps.
pub fn sample_pairs(steps: usize, count: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..count)
        .map(|j| {
            let s = j * steps / (2 * count);
            let t = (steps / 2 + (j + 1) * steps / (2 * count)).max(s + 1);
            (s, t.min(steps))
        })
        .filter(|(s, t)| s < t)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
pub struct SplittingDiagnostics {
    pub alpha: f64,
    pub k_sup_v: f64,
    pub rows: Vec<DiagnosticsRow>,
    pub totals: SplittingTotals,
    pub gen_energy: Vec<GenEnergyCheck>,
    pub bound_checks: Vec<BoundCheck>,
}

impl SplittingDiagnostics {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn low_mass(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.low_mass).collect()
    }

    pub fn high_mass(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.high_mass).collect()
    }

    /// Triangle inequality `sqrt(low) + sqrt(high) >= ||w||`, worst margin.
    pub fn triangle_margin(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.low_mass.sqrt() + r.high_mass.sqrt() - r.l2_sq.sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// `C int_0^t (1+tau)^{alpha-3} / E(t)` with `C = alpha^3 ||w0||^2 / 4`.
    pub fn budget_ratio(&self, t: f64) -> f64 {
        0.25 * self.alpha.powi(3) * self.totals.w0_l2_sq * budget_integral(self.alpha, 0.0, t) / weight_e(self.alpha, t)
    }

    /// Whether the budget ratio, which rises then falls, is already falling at `t`.
    pub fn budget_past_peak(&self, t: f64) -> bool {
        t > 0.0 && self.budget_ratio(t * (1.0 + 1e-6)) < self.budget_ratio(t)
    }

    /// The budget ratio at the final time is below its value at half time.
    pub fn budget_trend_holds(&self) -> bool {
        let t = self.rows.last().map_or(0.0, |r| r.t);
        t > 0.0 && self.budget_ratio(t) < self.budget_ratio(0.5 * t)
    }

    /// `int_{t_i}^{t_max} ||grad w||^2` from the ledger.
    pub fn dissipation_tail(ledger: &EnergyLedger) -> Vec<f64> {
        let last = ledger.dissipation_cum.last().copied().unwrap_or(0.0);
        ledger.dissipation_cum.iter().map(|d| 0.5 * (last - d)).collect()
    }

    pub fn worst_gen_energy_slack(&self) -> f64 {
        self.gen_energy.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_rows(&self.rows, out)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn write_rows(rows: &[DiagnosticsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DIAGNOSTICS_COLUMNS)?;
    for r in rows {
        w.write_record(r.to_array().iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Diagnostics over a stored trajectory (snapshots at every step).
pub fn run_splitting_analysis(
    w_traj: &WTrajectory,
    v: &MildTrajectory,
    alpha: f64,
    k_sup_v: f64,
    pairs: &[(usize, usize)],
) -> Result<SplittingDiagnostics> {
    let mut mon = SplittingMonitor::new(&v.grid, alpha, k_sup_v, w_traj.dt, pairs)?;
    for (i, (w, &t)) in w_traj.snapshots.iter().zip(&w_traj.times).enumerate() {
        let vt = v.at(t);
        let terms = crate::perturbation::advection_terms(w, if v.is_zero() { None } else { Some(&vt) })?;
        mon.observe(&Level { index: i, t, w, v: &vt, terms: &terms })?;
    }
    Ok(mon.finish())
}

/// The generalized energy identity between stored times `s < t`, assembled
/// independently of the monitor: trilinear terms through `b`, the diagonal
/// term by the decay-plus-constant rule, time integrals of `b` by trapezoid.
pub fn check_gen_energy(
    w_traj: &WTrajectory,
    v: &MildTrajectory,
    alpha: f64,
    psi_mode: PsiMode,
    s: f64,
    t: f64,
) -> Result<GenEnergyCheck> {
    let (is, it) = match (w_traj.index_of(s), w_traj.index_of(t)) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => return Err(Error::InvalidArgument(format!("({s}, {t}) is not a stored pair with s < t"))),
    };
    let grid = *w_traj.snapshots[is].grid();
    let mult = Multipliers::new(&grid);
    let (s, t) = (w_traj.times[is], w_traj.times[it]);
    let multiplier = |tau: f64| -> Vec<f64> {
        match psi_mode {
            PsiMode::HeatKernelShifted => {
                mult.lam.iter().zip(&mult.phiphi).map(|(l, p)| (-2.0 * (t - tau) * l).exp() * p).collect()
            }
            PsiMode::DeltaMinusPhi => mult.om2.clone(),
        }
    };
    let weight = |tau: f64| match psi_mode {
        PsiMode::HeatKernelShifted => 1.0,
        PsiMode::DeltaMinusPhi => weight_e(alpha, tau),
    };
    let mut b_vals = Vec::new();
    let mut diag = 0.0;
    let mut prev_e: Option<Vec<f64>> = None;
    for i in is..=it {
        let tau = w_traj.times[i];
        let w = &w_traj.snapshots[i];
        let vt = v.at(tau);
        let m = multiplier(tau);
        let h = w.scale_modes(|k| m[k]);
        let mut b = b_value(w, w, &h)?;
        if !v.is_zero() {
            b += b_value(&vt, w, &h)? + b_value(w, &vt, &h)?;
        }
        b_vals.push(weight(tau) * b);
        if psi_mode == PsiMode::DeltaMinusPhi {
            let e = mode_energies(w);
            if let Some(p) = &prev_e {
                diag += mult.diag_increment(alpha, w_traj.times[i - 1], tau, p, &e);
            }
            prev_e = Some(e);
        }
    }
    let b_int: f64 = (0..b_vals.len() - 1)
        .map(|k| trapezoid(w_traj.times[is + k + 1] - w_traj.times[is + k], b_vals[k], b_vals[k + 1]))
        .sum();
    let mass = |i: usize, tau: f64| dot(&multiplier(tau), &mode_energies(&w_traj.snapshots[i]));
    let lhs = weight(t) * mass(it, t);
    let rhs = weight(s) * mass(is, s) + diag - 2.0 * b_int;
    Ok(GenEnergyCheck::new(psi_mode, s, t, lhs, rhs))
}

/// `||w||_2` decay descriptors and `||V||_3` trend.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub w_l2: Vec<f64>,
    pub v_times: Vec<f64>,
    pub v_l3: Vec<f64>,
    /// `rate` in `||w|| ~ C e^{-rate t}` over the second half.
    pub exponential_rate: f64,
    pub exponential_rms: f64,
    /// `p` in `||w|| ~ C t^{-p}` over the second half.
    pub algebraic_exponent: f64,
    pub algebraic_rms: f64,
    pub final_ratio: f64,
    /// Largest increase of `||w||^2` between stored levels, relative to `||w0||^2`.
    pub max_energy_increase: f64,
    /// Largest relative increase of the low and high masses after the transient.
    pub low_max_increase: f64,
    pub high_max_increase: f64,
    pub transient_end: f64,
    pub v_l3_max_increase: f64,
    pub checks: Vec<(String, bool)>,
}

/// Least-squares slope and rms residual of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

fn max_relative_increase(vals: &[f64], from: usize) -> f64 {
    let scale = vals.get(from).copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    vals[from.min(vals.len())..].windows(2).map(|w| (w[1] - w[0]) / scale).fold(f64::NEG_INFINITY, f64::max)
}

/// Thresholds of the qualitative decay criteria.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayThresholds {
    pub final_ratio: f64,
    pub energy_tol: f64,
    pub transient_fraction: f64,
}

impl Default for DecayThresholds {
    fn default() -> Self {
        Self { final_ratio: 0.2, energy_tol: 1e-6, transient_fraction: 0.1 }
    }
}

pub fn decay_report(
    ledger: &EnergyLedger,
    splitting: &SplittingDiagnostics,
    v: &MildTrajectory,
    thresholds: DecayThresholds,
) -> Result<DecayReport> {
    let times = ledger.times.clone();
    let w_l2: Vec<f64> = ledger.l2_sq.iter().map(|e| e.sqrt()).collect();
    let w0 = w_l2.first().copied().unwrap_or(0.0);
    let half = times.len() / 2;
    let tail_t = &times[half..];
    let logs: Vec<f64> = w_l2[half..].iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let (rate, _, e_rms) = linear_fit(tail_t, &logs);
    let log_t: Vec<f64> = tail_t.iter().map(|t| t.max(f64::MIN_POSITIVE).ln()).collect();
    let (p, _, a_rms) = linear_fit(&log_t, &logs);
    let final_ratio = if w0 > 0.0 { w_l2.last().copied().unwrap_or(0.0) / w0 } else { 0.0 };
    let max_energy_increase = if w0 > 0.0 {
        ledger.l2_sq.windows(2).map(|w| (w[1] - w[0]) / (w0 * w0)).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let t_end = times.last().copied().unwrap_or(0.0);
    let transient_end = thresholds.transient_fraction * t_end;
    let rows = &splitting.rows;
    let start = rows.iter().position(|r| r.t >= transient_end).unwrap_or(0);
    let low: Vec<f64> = rows.iter().map(|r| r.low_mass).collect();
    let high: Vec<f64> = rows.iter().map(|r| r.high_mass).collect();
    let low_max_increase = max_relative_increase(&low, start);
    let high_max_increase = max_relative_increase(&high, start);
    let v_l3 = if v.is_zero() { vec![0.0; v.times.len()] } else { v.norm_series(crate::function_spaces::SpaceNorm::Lebesgue3)? };
    let v_l3_max_increase = max_relative_increase(&v_l3, 0);
    let tol = thresholds.energy_tol;
    let checks = vec![
        ("w_l2_nonincreasing".to_string(), !(max_energy_increase > tol)),
        ("final_over_initial".to_string(), final_ratio <= thresholds.final_ratio),
        ("low_mass_decreasing".to_string(), !(low_max_increase > tol)),
        ("high_mass_decreasing".to_string(), !(high_max_increase > tol)),
        ("v_l3_nonincreasing".to_string(), !(v_l3_max_increase > tol)),
    ];
    Ok(DecayReport {
        times,
        w_l2,
        v_times: v.times.clone(),
        v_l3,
        exponential_rate: -rate,
        exponential_rms: e_rms,
        algebraic_exponent: -p,
        algebraic_rms: a_rms,
        final_ratio,
        max_energy_increase,
        low_max_increase,
        high_max_increase,
        transient_end,
        v_l3_max_increase,
        checks,
    })
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

impl fmt::Display for DecayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "decay of ||w(t)||_2")?;
        writeln!(f, "  final / initial       {:.6e}", self.final_ratio)?;
        writeln!(f, "  exponential rate      {:.6e} (rms {:.3e}, second half)", self.exponential_rate, self.exponential_rms)?;
        writeln!(f, "  algebraic exponent    {:.6e} (rms {:.3e}, second half)", self.algebraic_exponent, self.algebraic_rms)?;
        writeln!(f, "  max energy increase   {:.3e} (relative to ||w0||^2)", self.max_energy_increase)?;
        writeln!(f, "  low mass increase     {:.3e} after t = {}", self.low_max_increase, self.transient_end)?;
        writeln!(f, "  high mass increase    {:.3e} after t = {}", self.high_max_increase, self.transient_end)?;
        writeln!(f, "  ||V||_3 max increase  {:.3e}", self.v_l3_max_increase)?;
        for (name, ok) in &self.checks {
            writeln!(f, "  {name:<22} {}", if *ok { "pass" } else { "FAIL" })?;
        }
        Ok(())
    }
}

/// `||grad w||^2` and `||w||^2` agree with the ledger columns.
pub fn ledger_matches(ledger: &EnergyLedger, i: usize, w: &SpectralVectorField) -> f64 {
    let a = (ledger.l2_sq[i] - l2_norm_sq(w)).abs() / ledger.l2_sq[i].max(f64::MIN_POSITIVE);
    let b = (ledger.grad_l2_sq[i] - gradient_norm_sq(w)).abs() / ledger.grad_l2_sq[i].max(f64::MIN_POSITIVE);
    a.max(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_pair_closed_form() {
        assert_eq!(weight_e_prime(3.0, 1.0), 12.0);
        let g = cutoff_g(3.0, 1.0);
        assert!((2.0 * weight_e(3.0, 1.0) * g * g - 12.0).abs() < 1e-12);
        assert!(weight_identity_residual(3.0, 1.0) < 1e-15);
    }

    #[test]
    fn kernel_norms_against_closed_forms() {
        let g2 = |r: f64| heat_kernel(2.0, r);
        assert!((radial_lp_norm(g2, 1.0, 60.0, 200_000) - 1.0).abs() < 1e-10);
        assert!((radial_lp_norm(g2, 1.2, 60.0, 200_000) - heat_kernel_lp(2.0, 1.2)).abs() < 1e-10);
        let closed = (8.0 * std::f64::consts::PI).powf(-0.25) * 1.2f64.powf(-1.25);
        assert!((heat_kernel_lp(2.0, 1.2) - closed).abs() < 1e-15);
        let k = kernel_norms();
        // |int eta| = 1 and the triangle inequality give 1 <= ||eta||_1 <= 3
        assert!(k.eta_l1 > 1.0 && k.eta_l1 < 3.0, "{k:?}");
        assert!(k.eta_l65 > 0.0);
    }

    #[test]
    fn budget_integral_cases() {
        assert!((budget_integral(3.0, 0.0, 5.0) - 5.0).abs() < 1e-12);
        assert!((budget_integral(2.0, 0.0, 1.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_sampling() {
        let p = sample_pairs(100, 10);
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|&(s, t)| s < t && t <= 100));
        assert_eq!(p.last().unwrap().1, 100);
    }
}
