//! Time quadrature for Fourier-mode energies.
//!
//! Over one step of length `h` a mode of wavenumber `|xi|^2 = lambda` carries
//! an energy modelled as `e(s) = a e^{-2 lambda s} + b`, fitted through the
//! endpoint values. Pure heat decay (`b = 0`) and a quasi-steady forced mode
//! (`a = 0`) are both reproduced exactly, and the weights stay bounded however
//! stiff the mode is.

/// `1 / (1 - e^{-x}) - 1/x`, increasing from `1/2` at `0` to `1` at infinity.
pub fn psi(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        0.5 + x / 12.0 - x * x * x / 720.0
    } else {
        1.0 / -(-x).exp_m1() - 1.0 / x
    }
}

/// `int_0^1 (1 - s) e^{mu s} ds`.
pub fn phi0(mu: f64) -> f64 {
    if mu.abs() < 1e-2 {
        let mu2 = mu * mu;
        0.5 + mu / 6.0 + mu2 / 24.0 + mu2 * mu / 120.0 + mu2 * mu2 / 720.0
    } else {
        (mu.exp_m1() - mu) / (mu * mu)
    }
}

/// `int_0^1 s e^{-x s} ds`.
pub fn chi(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        0.5 - x / 3.0 + x2 / 8.0 - x2 * x / 30.0 + x2 * x2 / 144.0
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

/// Coefficients of `e(s) = a e^{-rate s} + b` with `e(0) = e0`, `e(h) = e1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
}

pub fn decay_fit(h: f64, rate: f64, e0: f64, e1: f64) -> DecayFit {
    let x = rate * h;
    if x == 0.0 {
        return DecayFit { a: 0.0, b: 0.5 * (e0 + e1) };
    }
    let a = (e0 - e1) / -(-x).exp_m1();
    DecayFit { a, b: e0 - a }
}

/// `int_0^h e(s) ds` under the decay-plus-constant model.
pub fn fit_integral(h: f64, rate: f64, e0: f64, e1: f64) -> f64 {
    let w = psi(rate * h);
    h * ((1.0 - w) * e0 + w * e1)
}

/// `int_0^h w(s) e(s) ds` with `w` linear between `w0` and `w1`.
pub fn fit_weighted(h: f64, rate: f64, e0: f64, e1: f64, w0: f64, w1: f64) -> f64 {
    let x = rate * h;
    if x == 0.0 {
        return trapezoid(h, w0 * e0, w1 * e1);
    }
    let a = (e0 - e1) / -(-x).exp_m1();
    // e = e0 + a (e^{-x s} - 1), so the a-part integrates against
    // w0 (phi0(-x) - 1/2) + w1 (chi(x) - 1/2)
    let (d0, d1) = if x.abs() < 1e-2 {
        let x2 = x * x;
        (-x / 6.0 + x2 / 24.0 - x2 * x / 120.0 + x2 * x2 / 720.0, -x / 3.0 + x2 / 8.0 - x2 * x / 30.0 + x2 * x2 / 144.0)
    } else {
        (phi0(-x) - 0.5, chi(x) - 0.5)
    };
    h * (0.5 * e0 * (w0 + w1) + a * (w0 * d0 + w1 * d1))
}

/// `int_{t0}^{t1} (E'(s) - 2 lambda E(s)) e(s) ds` given `E(t0)`, `E(t1)` and
/// `int_{t0}^{t1} E`. The `e^{-2 lambda s}` part is an exact derivative.
pub fn fit_dissipative_weight(h: f64, lambda: f64, e0: f64, e1: f64, big_e0: f64, big_e1: f64, int_e: f64) -> f64 {
    let x = 2.0 * lambda * h;
    if x == 0.0 {
        return (big_e1 - big_e0) * 0.5 * (e0 + e1);
    }
    let a = (e0 - e1) / -(-x).exp_m1();
    a * (big_e1 * (-x).exp_m1() + 2.0 * lambda * int_e) + e0 * (big_e1 - big_e0 - 2.0 * lambda * int_e)
}

/// Plain trapezoid on one interval.
pub fn trapezoid(h: f64, a: f64, b: f64) -> f64 {
    0.5 * h * (a + b)
}
