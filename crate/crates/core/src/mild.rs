//! Small global mild solutions by Picard iteration on the Duhamel formula,
//! plus the initial data used to drive them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::function_spaces::{norm, SpaceNorm};
use crate::grid::GridSpec;
use crate::perturbation::navier_term;
use crate::spectral::{
    cross, l2_inner, l2_norm_sq, leray_project, random_divfree_field, PhysicalVectorField, SpectralVectorField,
};

/// Quadratic time grid `t_i = t_max (i/n)^2`, `i = 0..=n`.
pub fn quadratic_times(t_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_max * (i as f64 / n as f64).powi(2)).collect()
}

#[derive(Debug, Clone)]
pub struct MildTrajectory {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub slices: Vec<SpectralVectorField>,
    pub space: SpaceNorm,
    /// `max_i ||V(t_i)||_X`.
    pub sup_norm: f64,
    pub k_used: f64,
    /// Relative Picard increments `sup ||V^{n+1} - V^n|| / sup ||V^n||`, from
    /// the second iterate on.
    pub increments: Vec<f64>,
    pub iterations: usize,
}

impl MildTrajectory {
    /// `V == 0` for all time.
    pub fn zero(grid: &GridSpec, space: SpaceNorm) -> Self {
        Self {
            grid: *grid,
            times: vec![0.0],
            slices: vec![SpectralVectorField::zeros(grid)],
            space,
            sup_norm: 0.0,
            k_used: 0.0,
            increments: Vec::new(),
            iterations: 0,
        }
    }

    /// Time-independent `V(t) = V0`.
    pub fn stationary(v0: &SpectralVectorField, space: SpaceNorm) -> Result<Self> {
        let sup_norm = norm(v0, space)?;
        Ok(Self {
            grid: *v0.grid(),
            times: vec![0.0],
            slices: vec![leray_project(v0)],
            space,
            sup_norm,
            k_used: 0.0,
            increments: Vec::new(),
            iterations: 0,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.slices.iter().all(|s| s.is_zero())
    }

    /// Contraction factors: ratios of successive increments.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.increments.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// `K sup ||V||_X`.
    pub fn smallness_product(&self) -> f64 {
        self.k_used * self.sup_norm
    }

    /// Certified smallness `K sup ||V||_X < 1`.
    pub fn admissible(&self) -> bool {
        self.smallness_product() < 1.0
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k_used = k;
        self
    }

    /// Linear interpolation between stored slices; constant past the end.
    pub fn at(&self, t: f64) -> SpectralVectorField {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.slices[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.slices[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let theta = (t - t0) / (t1 - t0);
        if theta == 0.0 {
            return self.slices[i].clone();
        }
        self.slices[i].lerp(&self.slices[i + 1], theta).expect("slices share a grid")
    }

    /// `||V(t_i)||_X` for every slice.
    pub fn norm_series(&self, space: SpaceNorm) -> Result<Vec<f64>> {
        self.slices.iter().map(|s| norm(s, space)).collect()
    }
}

/// Picard iteration
/// `V^{n+1}(t) = e^{t Delta} V0 - int_0^t e^{(t-s) Delta} P div(V^n (x) V^n)(s) ds`
/// started from `V^0 = 0`, with the Duhamel integral by trapezoid over `times`.
pub fn picard_iterate(
    v0: &SpectralVectorField,
    times: &[f64],
    max_iters: usize,
    tol: f64,
    space: SpaceNorm,
) -> Result<MildTrajectory> {
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("Picard times must start at 0 and increase strictly".into()));
    }
    if !(tol > 0.0) || max_iters == 0 {
        return Err(Error::InvalidArgument("Picard needs tol > 0 and at least one iteration".into()));
    }
    let grid = *v0.grid();
    let v0 = leray_project(v0);
    let xi_sq = grid.xi_sq_table();
    let linear: Vec<SpectralVectorField> =
        times.iter().map(|&t| v0.scale_modes(|m| (-t * xi_sq[m]).exp())).collect();

    let mut current = linear.clone();
    let mut increments = Vec::new();
    let mut iterations = 1;
    let mut converged = current.iter().all(|s| s.is_zero());
    while !converged {
        if iterations >= max_iters {
            return Err(Error::NotConverged { iterations, history: increments });
        }
        let forcing: Vec<SpectralVectorField> = current.iter().map(navier_term).collect();
        let duhamel = trapezoid_duhamel(times, &forcing, &xi_sq);
        let next: Vec<SpectralVectorField> = linear
            .iter()
            .zip(duhamel.iter())
            .map(|(a, d)| leray_project(&a.sub(d).expect("same grid")))
            .collect();
        iterations += 1;
        let diff = next
            .iter()
            .zip(current.iter())
            .map(|(a, b)| l2_norm_sq(&a.sub(b).expect("same grid")).sqrt())
            .fold(0.0, f64::max);
        let size = current.iter().map(|s| l2_norm_sq(s).sqrt()).fold(0.0, f64::max);
        let inc = diff / size;
        if !inc.is_finite() {
            return Err(Error::Diverged { iterations, history: increments });
        }
        increments.push(inc);
        current = next;
        if let [.., a, b] = increments.as_slice() {
            if b >= a {
                return Err(Error::Diverged { iterations, history: increments });
            }
        }
        converged = inc < tol;
    }
    let sup_norm = current.iter().map(|s| norm(s, space)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    Ok(MildTrajectory {
        grid,
        times: times.to_vec(),
        slices: current,
        space,
        sup_norm,
        k_used: 0.0,
        increments,
        iterations,
    })
}

/// `D_i = int_0^{t_i} e^{(t_i - s) Delta} N(s) ds` by composite trapezoid,
/// accumulated recursively.
fn trapezoid_duhamel(times: &[f64], forcing: &[SpectralVectorField], xi_sq: &[f64]) -> Vec<SpectralVectorField> {
    let grid = *forcing[0].grid();
    let mut out = Vec::with_capacity(times.len());
    out.push(SpectralVectorField::zeros(&grid));
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        let carried = out[i - 1].axpy(0.5 * h, &forcing[i - 1]).expect("same grid");
        let decayed = carried.scale_modes(|m| (-h * xi_sq[m]).exp());
        out.push(decayed.axpy(0.5 * h, &forcing[i]).expect("same grid"));
    }
    out
}

/// Seeded tangential profile `sigma(w) = w x grad P(w)` with `P` a random
/// polynomial of degree two, normalised so that `max |sigma| = 1` on the sphere.
#[derive(Debug, Clone)]
pub struct TangentialProfile {
    a: [[f64; 3]; 3],
    b: [f64; 3],
    scale: f64,
}

impl TangentialProfile {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let v = rng.gen_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        let b = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let mut p = Self { a, b, scale: 1.0 };
        p.scale = 1.0 / p.sphere_max();
        p
    }

    pub fn eval(&self, w: [f64; 3]) -> [f64; 3] {
        let mut grad = self.b;
        for i in 0..3 {
            for j in 0..3 {
                grad[i] += 2.0 * self.a[i][j] * w[j];
            }
        }
        let s = cross(w, grad);
        [s[0] * self.scale, s[1] * self.scale, s[2] * self.scale]
    }

    /// Maximum of `|sigma|` over a fine latitude-longitude net.
    pub fn sphere_max(&self) -> f64 {
        let mut best = 0.0f64;
        let steps = 240;
        for i in 0..=steps {
            let theta = std::f64::consts::PI * i as f64 / steps as f64;
            for j in 0..2 * steps {
                let phi = std::f64::consts::PI * j as f64 / steps as f64;
                let w = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                let s = self.eval(w);
                best = best.max((s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt());
            }
        }
        best
    }
}

/// Fraction of the half-box over which the homogeneous profile is kept before
/// a smooth taper to zero.
const TAPER_START: f64 = 0.6;

fn taper(r: f64, half: f64) -> f64 {
    let a = TAPER_START * half;
    let b = 0.95 * half;
    if r <= a {
        1.0
    } else if r >= b {
        0.0
    } else {
        let s = (r - a) / (b - a);
        0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

/// `P` applied to `amplitude sigma(x/|x|) / |x|`, tapered near the box boundary
/// and set to zero at the origin sample.
pub fn homogeneous_minus_one_data(grid: &GridSpec, amplitude: f64, profile_seed: u64) -> Result<SpectralVectorField> {
    if !(amplitude > 0.0) {
        return Err(Error::InvalidArgument(format!("amplitude must be positive, got {amplitude}")));
    }
    let profile = TangentialProfile::seeded(profile_seed);
    let half = 0.5 * grid.box_length();
    let phys = PhysicalVectorField::from_centered_fn(grid, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == 0.0 {
            return [0.0; 3];
        }
        let s = profile.eval([x[0] / r, x[1] / r, x[2] / r]);
        let k = amplitude * taper(r, half) / r;
        [k * s[0], k * s[1], k * s[2]]
    });
    Ok(leray_project(&phys.to_spectral()))
}

#[derive(Debug, Clone)]
pub struct CalderonSplit {
    pub r: f64,
    pub v0: SpectralVectorField,
    pub w0: SpectralVectorField,
    pub l3_of_smooth: f64,
    pub l2_of_rough: f64,
    /// `||V0 + w0 - P u0||_2`.
    pub reconstruction_error: f64,
}

/// `u0 = u_{0,R} + u0^R` with `u_{0,R}` the magnitude clamp of `u0` at height
/// `R` (direction kept), followed by `P` on both parts.
pub fn calderon_split(u0: &SpectralVectorField, r: f64) -> Result<CalderonSplit> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation height must be positive, got {r}")));
    }
    let phys = u0.to_physical();
    let bounded = phys.map_points(|_, v| {
        let mag = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if mag <= r {
            v
        } else {
            let s = r / mag;
            [v[0] * s, v[1] * s, v[2] * s]
        }
    });
    let rough = phys.map_points(|p, v| {
        let b = bounded.value(p);
        [v[0] - b[0], v[1] - b[1], v[2] - b[2]]
    });
    let v0 = leray_project(&bounded.to_spectral());
    let w0 = leray_project(&rough.to_spectral());
    let pu0 = leray_project(u0);
    let reconstruction_error = l2_norm_sq(&v0.add(&w0)?.sub(&pu0)?).sqrt();
    Ok(CalderonSplit {
        r,
        l3_of_smooth: norm(&v0, SpaceNorm::Lebesgue3)?,
        l2_of_rough: l2_norm_sq(&w0).sqrt(),
        v0,
        w0,
        reconstruction_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandingReport {
    pub sup_norm: f64,
    pub product: f64,
    pub admissible: bool,
    /// `max_i max_k |<V(t_{i+1}) - V(t_i), phi_k>|` over the test battery.
    pub continuity_proxy: f64,
}

/// Smooth unit-norm divergence-free test fields, fixed once per grid.
pub fn test_battery(grid: &GridSpec) -> Vec<SpectralVectorField> {
    (0..8u64)
        .map(|s| {
            let f = random_divfree_field(grid, 4.0, 0x7e57_0000 + s).expect("exponent is valid");
            let n = l2_norm_sq(&f).sqrt();
            f.scaled(1.0 / n)
        })
        .collect()
}

pub fn verify_standing_assumptions(traj: &MildTrajectory, k_hat: f64) -> Result<StandingReport> {
    let battery = test_battery(&traj.grid);
    let mut proxy = 0.0f64;
    for w in traj.slices.windows(2) {
        let d = w[1].sub(&w[0])?;
        for phi in &battery {
            proxy = proxy.max(l2_inner(&d, phi)?.abs());
        }
    }
    let product = k_hat * traj.sup_norm;
    Ok(StandingReport { sup_norm: traj.sup_norm, product, admissible: product < 1.0, continuity_proxy: proxy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_is_a_fixed_point() {
        let grid = GridSpec::unit_torus(8).unwrap();
        let traj = picard_iterate(&SpectralVectorField::zeros(&grid), &quadratic_times(1.0, 4), 5, 1e-10, SpaceNorm::Lebesgue3)
            .unwrap();
        assert_eq!(traj.iterations, 1);
        assert!(traj.is_zero());
        assert!(traj.increments.is_empty());
    }

    #[test]
    fn profile_is_tangential_and_normalised() {
        let p = TangentialProfile::seeded(3);
        let w = [0.48, -0.6, 0.64];
        let s = p.eval(w);
        assert!((s[0] * w[0] + s[1] * w[1] + s[2] * w[2]).abs() < 1e-14);
        assert!((p.sphere_max() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn interpolation_hits_slices() {
        let grid = GridSpec::unit_torus(8).unwrap();
        let a = random_divfree_field(&grid, 2.0, 1).unwrap();
        let traj = MildTrajectory {
            grid,
            times: vec![0.0, 1.0],
            slices: vec![a.clone(), a.scaled(3.0)],
            space: SpaceNorm::Lebesgue3,
            sup_norm: 0.0,
            k_used: 0.0,
            increments: vec![],
            iterations: 1,
        };
        assert_eq!(traj.at(0.0), a);
        assert_eq!(traj.at(1.0), a.scaled(3.0));
        let mid = traj.at(0.5);
        assert!(l2_norm_sq(&mid.sub(&a.scaled(2.0)).unwrap()) < 1e-28);
    }
}
