//! Three-dimensional complex FFTs on the collocation grid.
//!
//! Real fields are transformed two at a time: the pair `(a, b)` travels as the
//! single complex signal `a + i b`. Inverse transforms only touch lines that
//! can carry retained modes, forward transforms only finish lines that feed
//! retained modes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

struct Plan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

fn plan(n: usize) -> Arc<Plan> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    let mut plans = PLANS.get_or_init(Default::default).lock().expect("fft plan cache poisoned");
    plans
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(n);
            let inverse = planner.plan_fft_inverse(n);
            let scratch_len =
                forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
            Arc::new(Plan { n, forward, inverse, scratch_len })
        })
        .clone()
}

#[derive(Clone, Copy)]
enum Prune {
    None,
    Outer,
    Middle,
    Both,
}

impl Plan {
    fn lines(&self, buf: &mut [Complex64], inverse: bool, cutoff: usize, prune: Prune) {
        let n = self.n;
        let fft = if inverse { &self.inverse } else { &self.forward };
        let in_band = |a: usize| a <= cutoff || a >= n - cutoff;
        let (outer, middle) = match prune {
            Prune::None => (false, false),
            Prune::Outer => (true, false),
            Prune::Middle => (false, true),
            Prune::Both => (true, true),
        };
        buf.par_chunks_mut(n * n).enumerate().for_each_init(
            || vec![Complex64::default(); self.scratch_len],
            |scratch, (a, plane)| {
                if outer && !in_band(a) {
                    return;
                }
                if middle {
                    let (low, rest) = plane.split_at_mut((cutoff + 1) * n);
                    fft.process_with_scratch(low, scratch);
                    let start = (n - cutoff) * n - (cutoff + 1) * n;
                    fft.process_with_scratch(&mut rest[start..], scratch);
                } else {
                    fft.process_with_scratch(plane, scratch);
                }
            },
        );
    }
}

/// Makes the leading axis contiguous: `out[(b n + c) n + a] = src[(a n + b) n + c]`.
fn rotate(src: &[Complex64], out: &mut [Complex64], n: usize) {
    const BLOCK: usize = 16;
    out.par_chunks_mut(n * n).enumerate().for_each(|(b, plane)| {
        for c0 in (0..n).step_by(BLOCK) {
            for a0 in (0..n).step_by(BLOCK) {
                for c in c0..(c0 + BLOCK).min(n) {
                    let row = &mut plane[c * n..(c + 1) * n];
                    for a in a0..(a0 + BLOCK).min(n) {
                        row[a] = src[(a * n + b) * n + c];
                    }
                }
            }
        }
    });
}

/// In-place inverse transform of a buffer whose nonzero entries are confined to
/// retained modes. Unnormalised: `out(x) = sum_k buf(k) e^{i xi.x}`.
fn inverse_band(buf: &mut Vec<Complex64>, grid: &GridSpec) {
    let n = grid.points_per_axis();
    let c = grid.cutoff();
    let p = plan(n);
    let mut tmp = vec![Complex64::default(); buf.len()];
    p.lines(buf, true, c, Prune::Both);
    rotate(buf, &mut tmp, n);
    p.lines(&mut tmp, true, c, Prune::Outer);
    rotate(&tmp, buf, n);
    p.lines(buf, true, c, Prune::None);
    rotate(buf, &mut tmp, n);
    std::mem::swap(buf, &mut tmp);
}

/// Forward transform, valid only at retained-mode offsets afterwards.
fn forward_band(buf: &mut Vec<Complex64>, grid: &GridSpec) {
    let n = grid.points_per_axis();
    let c = grid.cutoff();
    let p = plan(n);
    let mut tmp = vec![Complex64::default(); buf.len()];
    p.lines(buf, false, c, Prune::None);
    rotate(buf, &mut tmp, n);
    p.lines(&mut tmp, false, c, Prune::Middle);
    rotate(&tmp, buf, n);
    p.lines(buf, false, c, Prune::Both);
    rotate(buf, &mut tmp, n);
    std::mem::swap(buf, &mut tmp);
}

/// Full (unpruned) forward transform, normalised by `1/N^3`.
pub(crate) fn forward_full(buf: &mut Vec<Complex64>, n: usize) {
    let p = plan(n);
    let mut tmp = vec![Complex64::default(); buf.len()];
    p.lines(buf, false, 0, Prune::None);
    rotate(buf, &mut tmp, n);
    p.lines(&mut tmp, false, 0, Prune::None);
    rotate(&tmp, buf, n);
    p.lines(buf, false, 0, Prune::None);
    rotate(buf, &mut tmp, n);
    let scale = 1.0 / (n * n * n) as f64;
    tmp.par_iter_mut().for_each(|z| *z *= scale);
    std::mem::swap(buf, &mut tmp);
}

/// Full (unpruned) unnormalised inverse transform.
pub(crate) fn inverse_full(buf: &mut Vec<Complex64>, n: usize) {
    let p = plan(n);
    let mut tmp = vec![Complex64::default(); buf.len()];
    p.lines(buf, true, 0, Prune::None);
    rotate(buf, &mut tmp, n);
    p.lines(&mut tmp, true, 0, Prune::None);
    rotate(&tmp, buf, n);
    p.lines(buf, true, 0, Prune::None);
    rotate(buf, &mut tmp, n);
    std::mem::swap(buf, &mut tmp);
}

/// Evaluates real fields on the grid from compact Hermitian coefficient arrays.
pub(crate) fn synthesize(grid: &GridSpec, inputs: &[&[Complex64]]) -> Vec<Vec<f64>> {
    let offsets = offsets(grid);
    let total = grid.point_count();
    let mut out = Vec::with_capacity(inputs.len());
    for pair in inputs.chunks(2) {
        let mut buf = vec![Complex64::default(); total];
        let a = pair[0];
        match pair.get(1) {
            Some(b) => {
                for (m, &off) in offsets.iter().enumerate() {
                    buf[off] = a[m] + Complex64::i() * b[m];
                }
            }
            None => {
                for (m, &off) in offsets.iter().enumerate() {
                    buf[off] = a[m];
                }
            }
        }
        inverse_band(&mut buf, grid);
        out.push(buf.iter().map(|z| z.re).collect());
        if pair.len() == 2 {
            out.push(buf.iter().map(|z| z.im).collect());
        }
    }
    out
}

/// Retained-mode coefficients of real grid fields, mean included, exactly
/// Hermitian by construction.
pub(crate) fn analyze(grid: &GridSpec, inputs: &[&[f64]]) -> Vec<Vec<Complex64>> {
    let offsets = offsets(grid);
    let total = grid.point_count();
    let scale = 1.0 / total as f64;
    let modes = grid.mode_count();
    let mut out = Vec::with_capacity(inputs.len());
    for pair in inputs.chunks(2) {
        let mut buf: Vec<Complex64> = match pair.get(1) {
            Some(b) => pair[0].iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect(),
            None => pair[0].iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        };
        forward_band(&mut buf, grid);
        let z = |m: usize| buf[offsets[m]] * scale;
        let mut a = vec![Complex64::default(); modes];
        let mut b = vec![Complex64::default(); modes];
        for m in 0..modes {
            let zk = z(m);
            let zm = z(grid.conjugate_index(m)).conj();
            a[m] = (zk + zm) * 0.5;
            let d = zk - zm;
            b[m] = Complex64::new(0.5 * d.im, -0.5 * d.re);
        }
        out.push(a);
        if pair.len() == 2 {
            out.push(b);
        }
    }
    out
}

fn offsets(grid: &GridSpec) -> Vec<usize> {
    (0..grid.mode_count()).map(|m| grid.fft_offset(m)).collect()
}
