//! The six scale-invariant multiplier spaces and empirical Hardy constants.
//!
//! Spectral norms use the transform `f^(xi) = (2 pi)^{-3/2} int e^{-i x.xi} f dx`,
//! approximated on the box by `(2 pi)^{-3/2} L^3 c_k`. Physical norms use the
//! box-centred chart, with the origin at grid index 0.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mild::homogeneous_minus_one_data;
use crate::spectral::{
    fft, gradient_norm_sq, leray_project, random_divfree_field, PhysicalVectorField, SpectralVectorField,
};
use crate::trilinear::b_form;

/// Default center stride for the sampled Morrey supremum.
pub const MORREY_CENTER_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SpaceNorm {
    SobolevHalf,
    Lebesgue3,
    WeightedLinfty,
    LeJanSznitman,
    Marcinkiewicz3,
    Morrey3p { p: f64 },
}

impl SpaceNorm {
    pub const ALL_FIXED: [SpaceNorm; 5] = [
        SpaceNorm::SobolevHalf,
        SpaceNorm::Lebesgue3,
        SpaceNorm::WeightedLinfty,
        SpaceNorm::LeJanSznitman,
        SpaceNorm::Marcinkiewicz3,
    ];

    pub fn morrey(p: f64) -> Result<Self> {
        if p > 2.0 && p <= 3.0 {
            Ok(SpaceNorm::Morrey3p { p })
        } else {
            Err(Error::InvalidArgument(format!("Morrey exponent must lie in (2, 3], got {p}")))
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SpaceNorm::SobolevHalf => "sobolev_half",
            SpaceNorm::Lebesgue3 => "lebesgue3",
            SpaceNorm::WeightedLinfty => "weighted_linfty",
            SpaceNorm::LeJanSznitman => "le_jan_sznitman",
            SpaceNorm::Marcinkiewicz3 => "marcinkiewicz3",
            SpaceNorm::Morrey3p { .. } => "morrey3p",
        }
    }

    fn validate(self) -> Result<Self> {
        match self {
            SpaceNorm::Morrey3p { p } => SpaceNorm::morrey(p),
            other => Ok(other),
        }
    }
}

impl fmt::Display for SpaceNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceNorm::Morrey3p { p } => write!(f, "morrey3p:{p}"),
            other => f.write_str(other.tag()),
        }
    }
}

impl FromStr for SpaceNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (tag, param) = match s.split_once(':') {
            Some((t, p)) => (t, Some(p)),
            None => (s.as_str(), None),
        };
        let space = match tag {
            "sobolev_half" | "h12" => SpaceNorm::SobolevHalf,
            "lebesgue3" | "l3" => SpaceNorm::Lebesgue3,
            "weighted_linfty" | "weighted" => SpaceNorm::WeightedLinfty,
            "le_jan_sznitman" | "pm2" => SpaceNorm::LeJanSznitman,
            "marcinkiewicz3" | "weak_l3" => SpaceNorm::Marcinkiewicz3,
            "morrey3p" | "morrey" => {
                let p = param
                    .ok_or_else(|| Error::InvalidArgument("morrey3p needs an exponent, e.g. morrey3p:2.5".into()))?;
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad Morrey exponent {p:?}")))?;
                return SpaceNorm::morrey(p);
            }
            other => return Err(Error::InvalidArgument(format!("unknown space {other:?}"))),
        };
        if param.is_some() {
            return Err(Error::InvalidArgument(format!("space {tag} takes no parameter")));
        }
        Ok(space)
    }
}

impl TryFrom<String> for SpaceNorm {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SpaceNorm> for String {
    fn from(s: SpaceNorm) -> String {
        s.to_string()
    }
}

/// `(2 pi)^{-3/2} L^3`: box coefficients to continuum transform values.
pub fn transform_factor(grid: &GridSpec) -> f64 {
    grid.volume() / (2.0 * std::f64::consts::PI).powf(1.5)
}

/// Norm of a spectral field in the given space.
pub fn norm(f: &SpectralVectorField, space: SpaceNorm) -> Result<f64> {
    let space = space.validate()?;
    let grid = f.grid();
    match space {
        SpaceNorm::SobolevHalf => {
            let mut s = 0.0;
            for m in 0..grid.mode_count() {
                let c = f.coeff(m);
                s += grid.xi_sq(m).sqrt() * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr());
            }
            Ok((s * grid.volume()).sqrt())
        }
        SpaceNorm::LeJanSznitman => {
            let mut best = 0.0f64;
            for m in 0..grid.mode_count() {
                let c = f.coeff(m);
                let mag = (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt();
                best = best.max(grid.xi_sq(m) * mag);
            }
            Ok(best * transform_factor(grid))
        }
        physical => physical_norm(&f.to_physical(), physical),
    }
}

/// Norm of a grid-sampled field; only the physical-space norms apply.
pub fn physical_norm(f: &PhysicalVectorField, space: SpaceNorm) -> Result<f64> {
    let grid = f.grid();
    let mag = f.magnitude();
    match space.validate()? {
        SpaceNorm::Lebesgue3 => Ok((mag.iter().map(|a| a * a * a).sum::<f64>() * grid.cell_volume()).cbrt()),
        SpaceNorm::WeightedLinfty => Ok((0..grid.point_count())
            .map(|p| {
                let x = grid.centered_coordinate(p);
                (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() * mag[p]
            })
            .fold(0.0, f64::max)),
        SpaceNorm::Marcinkiewicz3 => Ok(weak_l3_level_sweep(&mag, grid.cell_volume())),
        SpaceNorm::Morrey3p { p } => Ok(morrey_sampled(grid, &mag, p, MORREY_CENTER_STRIDE)),
        other => Err(Error::InvalidArgument(format!("{other} is evaluated in Fourier space"))),
    }
}

/// `sup_lambda lambda |{|f| > lambda}|^{1/3}` from the distinct sample levels.
pub fn weak_l3_level_sweep(magnitudes: &[f64], cell_volume: f64) -> f64 {
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let total = sorted.len();
    let mut best = 0.0f64;
    let mut i = 0;
    while i < total {
        let level = sorted[i];
        // just below `level` the superlevel set holds every sample >= level
        let count = total - i;
        if level > 0.0 {
            best = best.max(level * (count as f64 * cell_volume).cbrt());
        }
        i += sorted[i..].partition_point(|&v| v == level);
    }
    best
}

/// `max_n a_(n) (n h^3)^{1/3}` over the decreasing rearrangement.
pub fn weak_l3_rearrangement(magnitudes: &[f64], cell_volume: f64) -> f64 {
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .enumerate()
        .map(|(i, &a)| a * ((i + 1) as f64 * cell_volume).cbrt())
        .fold(0.0, f64::max)
}

/// Sampled Morrey norm `sup R^{1-3/p} (int_{B_R(x)} |f|^p)^{1/p}` over dyadic
/// radii `h 2^j <= L/2` and centers on a lattice of the given stride.
pub fn morrey_sampled(grid: &GridSpec, magnitudes: &[f64], p: f64, stride: usize) -> f64 {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let stride = stride.max(1);
    let mut power: Vec<Complex64> = magnitudes.iter().map(|a| Complex64::new(a.powf(p), 0.0)).collect();
    fft::forward_full(&mut power, n);
    let mut best = 0.0f64;
    let mut radius = h;
    while radius <= 0.5 * grid.box_length() + 1e-12 {
        let mut ball: Vec<Complex64> = (0..grid.point_count())
            .map(|q| {
                let x = grid.centered_coordinate(q);
                let inside = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= radius * radius * (1.0 + 1e-12);
                Complex64::new(if inside { 1.0 } else { 0.0 }, 0.0)
            })
            .collect();
        fft::forward_full(&mut ball, n);
        // ball is symmetric, so correlation and convolution coincide
        let total = (n * n * n) as f64;
        let mut conv: Vec<Complex64> = power.iter().zip(ball.iter()).map(|(a, b)| a * b * total).collect();
        fft::inverse_full(&mut conv, n);
        let scale = radius.powf(1.0 - 3.0 / p);
        for i in (0..n).step_by(stride) {
            for j in (0..n).step_by(stride) {
                for l in (0..n).step_by(stride) {
                    let mass = conv[(i * n + j) * n + l].re.max(0.0) * grid.cell_volume();
                    best = best.max(scale * mass.powf(1.0 / p));
                }
            }
        }
        radius *= 2.0;
    }
    best
}

/// `(int_{x != 0} |g|^2 / |x|^2) / ||grad g||_2^2`.
pub fn classical_hardy_ratio(g: &SpectralVectorField) -> Result<f64> {
    let grad = gradient_norm_sq(g);
    if grad <= 0.0 {
        return Err(Error::DegenerateTrial("classical Hardy ratio needs a nonconstant field".into()));
    }
    let grid = g.grid();
    let phys = g.to_physical();
    let mut s = 0.0;
    for p in 0..grid.point_count() {
        let x = grid.centered_coordinate(p);
        let r_sq = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        if r_sq == 0.0 {
            continue;
        }
        let v = phys.value(p);
        s += (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / r_sq;
    }
    Ok(s * grid.cell_volume() / grad)
}

/// `|b(g, h, W)| / (||W||_X ||grad g||_2 ||grad h||_2)`.
pub fn b_against_multiplier(
    g: &SpectralVectorField,
    h: &SpectralVectorField,
    w: &SpectralVectorField,
    space: SpaceNorm,
) -> Result<f64> {
    Ok(multiplier_trial(g, h, w, space)?.ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyTrial {
    pub trial_index: usize,
    pub ratio: f64,
    pub norm_w: f64,
    pub grad_g: f64,
    pub grad_h: f64,
}

fn multiplier_trial(
    g: &SpectralVectorField,
    h: &SpectralVectorField,
    w: &SpectralVectorField,
    space: SpaceNorm,
) -> Result<HardyTrial> {
    let grad_g = gradient_norm_sq(g).sqrt();
    let grad_h = gradient_norm_sq(h).sqrt();
    let norm_w = norm(w, space)?;
    let denom = norm_w * grad_g * grad_h;
    if !(denom > 0.0) {
        return Err(Error::DegenerateTrial(format!(
            "zero denominator (||W||={norm_w:.3e}, ||grad g||={grad_g:.3e}, ||grad h||={grad_h:.3e})"
        )));
    }
    let b = b_form(g, h, w)?;
    let ratio = b.value.abs() / denom;
    if !ratio.is_finite() {
        return Err(Error::NonFinite("Hardy ratio".into()));
    }
    Ok(HardyTrial { trial_index: 0, ratio, norm_w, grad_g, grad_h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardyEstimate {
    pub space: SpaceNorm,
    pub trials: usize,
    pub k_hat: f64,
    pub samples: Vec<HardyTrial>,
    /// Draws rejected as degenerate and redrawn.
    pub rejected: usize,
}

impl HardyEstimate {
    pub fn ratio_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|t| t.ratio).collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial_index", "ratio", "norm_W", "grad_g", "grad_h"])?;
        for t in &self.samples {
            w.write_record([
                t.trial_index.to_string(),
                format!("{:e}", t.ratio),
                format!("{:e}", t.norm_w),
                format!("{:e}", t.grad_g),
                format!("{:e}", t.grad_h),
            ])?;
        }
        w.write_record([
            "# K_hat".to_string(),
            format!("{:e}", self.k_hat),
            format!("space={}", self.space),
            format!("trials={}", self.trials),
            format!("rejected={}", self.rejected),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Gaussian window `e^{-|x|^2 / (2 s^2)}` applied in physical space, then projected.
fn localize(f: &SpectralVectorField, width: f64) -> SpectralVectorField {
    let grid = *f.grid();
    let phys = f.to_physical().map_points(|p, v| {
        let x = grid.centered_coordinate(p);
        let w = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * width * width)).exp();
        [v[0] * w, v[1] * w, v[2] * w]
    });
    leray_project(&phys.to_spectral())
}

/// Draws one `(g, h, W)` triple. `g` and `h` are divergence-free and
/// concentrated at the origin so that singular multipliers are felt.
fn draw_triple(
    grid: &GridSpec,
    space: SpaceNorm,
    rng: &mut ChaCha8Rng,
) -> Result<(SpectralVectorField, SpectralVectorField, SpectralVectorField)> {
    let l = grid.box_length();
    let h = grid.spacing();
    let width_g = rng.gen_range(1.5 * h..0.12 * l);
    let width_h = rng.gen_range(1.5 * h..0.12 * l);
    let exp_g = rng.gen_range(1.6..3.0);
    let exp_h = rng.gen_range(1.6..3.0);
    let g = localize(&random_divfree_field(grid, exp_g, rng.gen())?, width_g);
    let hf = localize(&random_divfree_field(grid, exp_h, rng.gen())?, width_h);
    let amplitude = rng.gen_range(0.5..2.0);
    let w = match space {
        SpaceNorm::SobolevHalf | SpaceNorm::Lebesgue3 => {
            let width = rng.gen_range(2.0 * h..0.15 * l);
            localize(&random_divfree_field(grid, rng.gen_range(1.6..3.0), rng.gen())?, width).scaled(amplitude)
        }
        _ => homogeneous_minus_one_data(grid, amplitude, rng.gen())?,
    };
    Ok((g, hf, w))
}

const MAX_REDRAWS: usize = 16;

/// Empirical Hardy constant: the largest ratio
/// `|b(g, h, W)| / (||W||_X ||grad g||_2 ||grad h||_2)` over seeded trials.
pub fn estimate_hardy_constant(space: SpaceNorm, grid: &GridSpec, trials: usize, seed: u64) -> Result<HardyEstimate> {
    let space = space.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one Hardy trial is required".into()));
    }
    let outcomes: Vec<Result<(HardyTrial, usize)>> = (0..trials)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let mut rejected = 0;
            loop {
                let (g, h, w) = draw_triple(grid, space, &mut rng)?;
                match multiplier_trial(&g, &h, &w, space) {
                    Ok(mut t) => {
                        t.trial_index = index;
                        return Ok((t, rejected));
                    }
                    Err(Error::DegenerateTrial(_)) if rejected < MAX_REDRAWS => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(trials);
    let mut rejected = 0;
    for o in outcomes {
        let (t, r) = o?;
        samples.push(t);
        rejected += r;
    }
    let k_hat = samples.iter().map(|t| t.ratio).fold(0.0, f64::max);
    Ok(HardyEstimate { space, trials, k_hat, samples, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_space_tags() {
        assert_eq!("l3".parse::<SpaceNorm>().unwrap(), SpaceNorm::Lebesgue3);
        assert_eq!("morrey3p:2.5".parse::<SpaceNorm>().unwrap(), SpaceNorm::Morrey3p { p: 2.5 });
        assert!("morrey3p:2".parse::<SpaceNorm>().is_err());
        assert!("morrey3p".parse::<SpaceNorm>().is_err());
        assert!("weighted_linfty:3".parse::<SpaceNorm>().is_err());
        for s in SpaceNorm::ALL_FIXED {
            assert_eq!(s.to_string().parse::<SpaceNorm>().unwrap(), s);
        }
    }

    #[test]
    fn weak_l3_routes_agree_with_ties() {
        let samples = [3.0, 1.0, 3.0, 0.0, 2.0, 2.0, 2.0, 0.5];
        let a = weak_l3_level_sweep(&samples, 0.7);
        let b = weak_l3_rearrangement(&samples, 0.7);
        assert!((a - b).abs() < 1e-15);
        // level 3 with two samples beats level 2 with five
        assert!((a - 3.0 * (2.0f64 * 0.7).cbrt()).abs() < 1e-14);
        assert!(a > 2.0 * (5.0f64 * 0.7).cbrt());
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let grid = GridSpec::unit_torus(8).unwrap();
        let z = SpectralVectorField::zeros(&grid);
        for s in SpaceNorm::ALL_FIXED.into_iter().chain([SpaceNorm::Morrey3p { p: 2.5 }]) {
            assert_eq!(norm(&z, s).unwrap(), 0.0);
        }
    }
}
