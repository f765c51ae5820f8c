//! Direct Cartesian N-body integration, radial energy bookkeeping, effective
//! potentials, and the N-body scattering-angle equation.
//!
//! The scattering equation integrates the hyperangular sweep
//! `Phi = 2 \int_{rho_min}^{rho_max} b drho / (rho^2 sqrt(F))` with
//! `F(rho) = 1 - b^2/rho^2 - V(rho)/E`; the inverse-square-root endpoint is
//! removed by the substitution `rho = rho_min + u^2` before adaptive
//! quadrature. The velocity-Verlet integrator serves as the independent
//! Cartesian oracle for every hyperspherical quantity.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grandang::{self, decompose};
use crate::hypersphere::{self, fork_tree, HypersphericalTree};
use crate::jacobi::{
    self, from_jacobi, mass_unweight, mass_weight, to_jacobi, JacobiTree, MassWeightedVector,
    ParticleSystem,
};
use crate::numeric::g17;
use crate::quad::adaptive_gk15;
use crate::vec3::Vec3;

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// A radial profile with analytic derivative, usable both as a pair
/// interaction `f(r_ij)` and as a hyperradial potential `V(rho)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadialForm {
    Zero,
    /// `k / r` (repulsive for k > 0).
    Coulomb { k: f64 },
    /// `k r^2 / 2`.
    Spring { k: f64 },
    /// `c / r^2` (attractive for c < 0).
    InverseSquare { c: f64 },
    /// `4 eps ((sigma/r)^12 - (sigma/r)^6)`.
    LennardJones { epsilon: f64, sigma: f64 },
    /// `coeff * r^exponent`.
    Power { coeff: f64, exponent: f64 },
}

impl RadialForm {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            RadialForm::Zero => 0.0,
            RadialForm::Coulomb { k } => k / r,
            RadialForm::Spring { k } => 0.5 * k * r * r,
            RadialForm::InverseSquare { c } => c / (r * r),
            RadialForm::LennardJones { epsilon, sigma } => {
                let s6 = (sigma / r).powi(6);
                4.0 * epsilon * (s6 * s6 - s6)
            }
            RadialForm::Power { coeff, exponent } => coeff * r.powf(*exponent),
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match self {
            RadialForm::Zero => 0.0,
            RadialForm::Coulomb { k } => -k / (r * r),
            RadialForm::Spring { k } => k * r,
            RadialForm::InverseSquare { c } => -2.0 * c / (r * r * r),
            RadialForm::LennardJones { epsilon, sigma } => {
                let s6 = (sigma / r).powi(6);
                4.0 * epsilon * (-12.0 * s6 * s6 + 6.0 * s6) / r
            }
            RadialForm::Power { coeff, exponent } => coeff * exponent * r.powf(exponent - 1.0),
        }
    }
}

/// Sum of a pair potential over all particle pairs.
pub fn pairwise_energy(pair: &RadialForm, positions: &[Vec3]) -> f64 {
    let mut v = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            v += pair.value((positions[i] - positions[j]).norm());
        }
    }
    v
}

fn pair_forces(pair: &RadialForm, positions: &[Vec3]) -> (Vec<Vec3>, f64) {
    let n = positions.len();
    let mut forces = vec![Vec3::ZERO; n];
    let mut energy = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = positions[i] - positions[j];
            let r = d.norm();
            energy += pair.value(r);
            let f = pair.deriv(r) / r;
            forces[i] -= d * f;
            forces[j] += d * f;
        }
    }
    (forces, energy)
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Conserved-quantity and grand-angular-momentum readouts for one frame.
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    pub e_total: f64,
    /// Magnitude of the total momentum.
    pub p_cm: f64,
    /// Total 3D angular momentum about the origin.
    pub l_tot: Vec3,
    /// Hyperradius of the mass-weighted configuration.
    pub rho: f64,
    /// Grand angular momentum magnitude by the Lagrange-identity form.
    pub lambda_sq: f64,
    /// Angular-momentum decomposition total; NaN when the frame is degenerate.
    pub decomp_total: f64,
}

/// Time grid, per-step snapshots and diagnostics of one integration run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<ParticleSystem>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,E,Pcm,Ltot,rho,lambda_sq,decomp_total` plus
    /// per-particle position columns; floats at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.frames.first().map_or(0, |f| f.n());
        let mut header = String::from("t,E,Pcm,Ltot,rho,lambda_sq,decomp_total");
        for i in 1..=n {
            header.push_str(&format!(",x{i},y{i},z{i}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let d = &self.diagnostics[k];
            let mut row = format!(
                "{},{},{},{},{},{},{}",
                g17(self.times[k]),
                g17(d.e_total),
                g17(d.p_cm),
                g17(d.l_tot.norm()),
                g17(d.rho),
                g17(d.lambda_sq),
                g17(d.decomp_total)
            );
            for p in self.frames[k].positions() {
                row.push_str(&format!(",{},{},{}", g17(p.x()), g17(p.y()), g17(p.z())));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

fn frame_diagnostics(
    system: &ParticleSystem,
    pair: &RadialForm,
    jtree: &JacobiTree,
    ftree: &HypersphericalTree,
) -> StepDiagnostics {
    let e_total = system.kinetic_energy() + pairwise_energy(pair, system.positions());
    let p_cm = system.total_momentum().norm();
    let l_tot = system.total_angular_momentum();
    let (rho, lambda_sq, decomp_total) = match to_jacobi(system, jtree)
        .and_then(|coords| mass_weight(&coords, jtree, system.masses()))
    {
        Ok(mw) => {
            let rho = mw.hyperradius();
            let mom: Vec<f64> = mw.vel_vec.iter().map(|v| mw.mu * v).collect();
            let lam = grandang::lambda_sq_vectors(&mw.rho_vec, &mom);
            let total = hypersphere::from_cartesian_with_rates(ftree, &mw.rho_vec, &mw.vel_vec)
                .and_then(|state| decompose(ftree, &state, mw.mu))
                .map_or(f64::NAN, |d| d.total);
            (rho, lam, total)
        }
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };
    StepDiagnostics {
        e_total,
        p_cm,
        l_tot,
        rho,
        lambda_sq,
        decomp_total,
    }
}

/// Velocity-Verlet integration under a pairwise potential, with per-step
/// diagnostics computed over the caller-supplied Jacobi tree.
///
/// Non-finite forces or positions (particle collision under a singular
/// potential) halt the run; the error carries the trajectory up to the last
/// valid state.
pub fn integrate_nbody(
    system: &ParticleSystem,
    pair: &RadialForm,
    jtree: &JacobiTree,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if jtree.n_particles() != system.n() {
        return Err(Error::SizeMismatch(format!(
            "tree over {} particles, system has {}",
            jtree.n_particles(),
            system.n()
        )));
    }
    let ftree = fork_tree(jtree);
    let masses = system.masses().to_vec();
    let mut positions = system.positions().to_vec();
    let mut velocities = system.velocities().to_vec();

    let mut traj = Trajectory {
        times: vec![0.0],
        frames: vec![system.clone()],
        diagnostics: vec![frame_diagnostics(system, pair, jtree, &ftree)],
    };

    let halt = |traj: Trajectory, step: usize, message: String| Error::IntegrationHalted {
        step,
        message,
        partial: Box::new(traj),
    };

    let (mut accel, _) = pair_forces(pair, &positions);
    for i in 0..accel.len() {
        accel[i] = accel[i] / masses[i];
        if !accel[i].is_finite() {
            return Err(halt(traj, 0, format!("non-finite force on particle {}", i + 1)));
        }
    }

    for step in 0..steps {
        for i in 0..positions.len() {
            positions[i] += velocities[i] * dt + accel[i] * (0.5 * dt * dt);
            if !positions[i].is_finite() {
                return Err(halt(
                    traj,
                    step,
                    format!("non-finite position for particle {}", i + 1),
                ));
            }
        }
        let (forces, _) = pair_forces(pair, &positions);
        for i in 0..positions.len() {
            let new_accel = forces[i] / masses[i];
            if !new_accel.is_finite() {
                return Err(halt(
                    traj,
                    step,
                    format!("non-finite force on particle {}", i + 1),
                ));
            }
            velocities[i] += (accel[i] + new_accel) * (0.5 * dt);
            accel[i] = new_accel;
        }
        let frame = ParticleSystem::new(masses.clone(), positions.clone(), velocities.clone())?;
        traj.times.push((step + 1) as f64 * dt);
        traj.diagnostics
            .push(frame_diagnostics(&frame, pair, jtree, &ftree));
        traj.frames.push(frame);
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Radial energy and impact parameter
// ---------------------------------------------------------------------------

/// `E = mu rho_dot^2 / 2 + lambda_sq / (2 mu rho^2) + V(rho)`.
pub fn radial_energy(mu: f64, rho: f64, rho_dot: f64, lambda_sq: f64, v_at_rho: f64) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::InvalidInput(format!("negative hyperradius {rho}")));
    }
    let barrier = if rho == 0.0 {
        if lambda_sq > 0.0 {
            return Err(Error::SingularBarrier);
        }
        0.0
    } else {
        lambda_sq / (2.0 * mu * rho * rho)
    };
    Ok(0.5 * mu * rho_dot * rho_dot + barrier + v_at_rho)
}

/// Norm of the component of `rho0` perpendicular to `p0`. Satisfies
/// `lambda0_sq = b^2 |P0|^2` exactly in exact arithmetic.
pub fn impact_parameter(rho0: &[f64], p0: &[f64]) -> Result<f64> {
    if rho0.len() != p0.len() {
        return Err(Error::SizeMismatch(format!(
            "rho0 has dimension {}, p0 {}",
            rho0.len(),
            p0.len()
        )));
    }
    let p_norm_sq: f64 = p0.iter().map(|x| x * x).sum();
    if p_norm_sq == 0.0 {
        return Err(Error::InvalidInput("zero initial momentum".into()));
    }
    let dot: f64 = rho0.iter().zip(p0).map(|(a, b)| a * b).sum();
    let coeff = dot / p_norm_sq;
    let perp_sq: f64 = rho0
        .iter()
        .zip(p0)
        .map(|(r, p)| {
            let c = r - coeff * p;
            c * c
        })
        .sum();
    Ok(perp_sq.sqrt())
}

/// Initial grand angular momentum magnitude `2 mu E b^2`.
pub fn lambda0_sq(mu: f64, energy: f64, b: f64) -> f64 {
    2.0 * mu * energy * b * b
}

// ---------------------------------------------------------------------------
// Effective potential
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of the angle-averaged potential at one hyperradius.
#[derive(Clone, Copy, Debug)]
pub struct VeffEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub rejected: usize,
}

/// Draws a uniform direction on the unit sphere in `dim` dimensions by
/// normalizing a standard-normal vector.
fn unit_direction(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.iter().map(|x| x / norm).collect();
        }
    }
}

/// Positions of the physical particles for a mass-weighted configuration
/// `rho * direction` with the center of mass at the origin.
fn configuration_at(
    jtree: &JacobiTree,
    masses: &[f64],
    direction: &[f64],
    rho: f64,
) -> Result<Vec<Vec3>> {
    let mu = jacobi::nbody_reduced_mass(masses)?;
    let mw = MassWeightedVector {
        mu,
        rho_vec: direction.iter().map(|d| d * rho).collect(),
        vel_vec: vec![0.0; direction.len()],
    };
    let coords = mass_unweight(&mw, jtree, masses, Vec3::ZERO, Vec3::ZERO)?;
    Ok(from_jacobi(&coords, jtree, masses)?.positions().to_vec())
}

/// Averages the pairwise potential over uniformly distributed directions on
/// the `(3N-4)`-sphere at fixed `rho`. Deterministic for a fixed seed.
/// Singular samples (overlapping particles) are rejected and redrawn, capped
/// at `10 * n_samples` rejections.
pub fn effective_potential(
    pair: &RadialForm,
    jtree: &JacobiTree,
    masses: &[f64],
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<VeffEstimate> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!(
            "effective potential needs rho > 0, got {rho}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    let dim = 3 * jtree.n_nodes();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_samples);
    let mut rejected = 0usize;
    while values.len() < n_samples {
        let dir = unit_direction(&mut rng, dim);
        let positions = configuration_at(jtree, masses, &dir, rho)?;
        let v = pairwise_energy(pair, &positions);
        if v.is_finite() {
            values.push(v);
        } else {
            rejected += 1;
            if rejected > 10 * n_samples {
                return Err(Error::InvalidInput(format!(
                    "rejection cap exceeded at rho = {rho}: {rejected} singular samples"
                )));
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(VeffEstimate {
        mean,
        std_error,
        samples: values.len(),
        rejected,
    })
}

/// Radial profile of the effective potential. Grid points are independent
/// work items: item `i` uses RNG seed `seed + i` and results merge by index.
pub fn effective_potential_profile(
    pair: &RadialForm,
    jtree: &JacobiTree,
    masses: &[f64],
    rhos: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<Result<VeffEstimate>> {
    rhos.par_iter()
        .enumerate()
        .map(|(i, &rho)| {
            effective_potential(pair, jtree, masses, rho, n_samples, seed.wrapping_add(i as u64))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scattering
// ---------------------------------------------------------------------------

/// Radial potential seen by the hyperradial motion: either a closed form or
/// a Monte Carlo angle average of a pairwise interaction.
#[derive(Clone, Debug)]
pub enum ScatterPotential {
    Hyperradial(RadialForm),
    Averaged {
        pair: RadialForm,
        tree: JacobiTree,
        masses: Vec<f64>,
        n_samples: usize,
        seed: u64,
    },
}

/// One scattering problem: energy, impact parameter, potential, start/end
/// radius, and quadrature tolerance.
#[derive(Clone, Debug)]
pub struct ScatterSpec {
    pub mu: f64,
    pub energy: f64,
    pub b: f64,
    pub potential: ScatterPotential,
    pub rho_max: f64,
    /// Relative quadrature tolerance, default 1e-9.
    pub rel_tol: f64,
    /// Add the analytic free-motion tail `2 asin(b / rho_max)` so that the
    /// sweep refers to infinite asymptotes. Disable to compare against
    /// trajectories that start and end at `rho_max`.
    pub include_tail: bool,
}

impl ScatterSpec {
    pub fn new(mu: f64, energy: f64, b: f64, potential: ScatterPotential, rho_max: f64) -> Self {
        ScatterSpec {
            mu,
            energy,
            b,
            potential,
            rho_max,
            rel_tol: 1e-9,
            include_tail: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.energy > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "need mu > 0 and E > 0, got mu = {}, E = {}",
                self.mu, self.energy
            )));
        }
        if !(self.b >= 0.0) {
            return Err(Error::InvalidSpec(format!("negative impact parameter {}", self.b)));
        }
        if !(self.rho_max > self.b) {
            return Err(Error::InvalidSpec(format!(
                "need rho_max > b, got rho_max = {}, b = {}",
                self.rho_max, self.b
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidSpec(format!("bad tolerance {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Prepared radial evaluator. For averaged potentials the direction sample is
/// drawn once and reused at every radius (positions scale linearly with rho),
/// which makes `V_eff(rho)` smooth and quadrature-friendly.
enum PreparedPotential<'a> {
    Form(&'a RadialForm),
    Averaged {
        pair: &'a RadialForm,
        /// Pair distances of each sampled configuration at rho = 1.
        distances: Vec<Vec<f64>>,
    },
}

impl PreparedPotential<'_> {
    fn value(&self, rho: f64) -> f64 {
        match self {
            PreparedPotential::Form(f) => f.value(rho),
            PreparedPotential::Averaged { pair, distances } => {
                let sum: f64 = distances
                    .iter()
                    .map(|d| d.iter().map(|&r| pair.value(rho * r)).sum::<f64>())
                    .sum();
                sum / distances.len() as f64
            }
        }
    }
}

fn prepare_potential(potential: &ScatterPotential) -> Result<PreparedPotential<'_>> {
    match potential {
        ScatterPotential::Hyperradial(form) => Ok(PreparedPotential::Form(form)),
        ScatterPotential::Averaged {
            pair,
            tree,
            masses,
            n_samples,
            seed,
        } => {
            if *n_samples == 0 {
                return Err(Error::InvalidSpec("averaged potential needs n_samples >= 1".into()));
            }
            let dim = 3 * tree.n_nodes();
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let mut distances = Vec::with_capacity(*n_samples);
            let mut rejected = 0usize;
            while distances.len() < *n_samples {
                let dir = unit_direction(&mut rng, dim);
                let positions = configuration_at(tree, masses, &dir, 1.0)?;
                let mut dists = Vec::new();
                let mut ok = true;
                for i in 0..positions.len() {
                    for j in i + 1..positions.len() {
                        let r = (positions[i] - positions[j]).norm();
                        if r == 0.0 {
                            ok = false;
                        }
                        dists.push(r);
                    }
                }
                if ok {
                    distances.push(dists);
                } else {
                    rejected += 1;
                    if rejected > 10 * n_samples {
                        return Err(Error::InvalidSpec(
                            "rejection cap exceeded while sampling the averaged potential".into(),
                        ));
                    }
                }
            }
            Ok(PreparedPotential::Averaged { pair, distances })
        }
    }
}

/// Outcome of the turning-point search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TurningFlag {
    /// A simple largest root of `F` was bracketed and refined.
    Found,
    /// `F` stays positive down to the numeric floor (head-on or capture).
    NoTurningPoint,
    /// `F` touches zero tangentially (or dips below 1e-3 without crossing):
    /// the sweep integral diverges.
    Orbiting,
}

impl TurningFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            TurningFlag::Found => "found",
            TurningFlag::NoTurningPoint => "no_turning_point",
            TurningFlag::Orbiting => "orbiting",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TurningPoint {
    pub rho_min: f64,
    pub flag: TurningFlag,
}

/// Scan ratio for the outward-in bracketing grid.
const SCAN_RATIO: f64 = 0.99;
/// Relative bisection tolerance on the turning point. The sweep integrand
/// loses sqrt(delta) of arc for a turning-point error delta, so the root is
/// driven to machine precision (well past the nominal 1e-12 contract).
const ROOT_REL_TOL: f64 = 4.0 * f64::EPSILON;
/// `rho_min * dF/drho` below this marks a tangential (orbiting) root.
const ORBIT_SLOPE_TOL: f64 = 1e-6;
/// Minimum of a never-negative scan below this marks near-orbiting.
const ORBIT_DIP_TOL: f64 = 1e-3;

fn turning_point_of(f: &impl Fn(f64) -> f64, rho_max: f64) -> Result<TurningPoint> {
    let f_top = f(rho_max);
    if !(f_top > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "F(rho_max) = {f_top} must be positive at rho_max = {rho_max}"
        )));
    }
    let floor = rho_max * 1e-13;
    let mut prev = rho_max;
    let mut cur = rho_max * SCAN_RATIO;
    let mut min_f = f_top;
    while cur > floor {
        let fc = f(cur);
        if fc <= 0.0 {
            // Bisection on [cur, prev]; keep the positive end as hi.
            let (mut lo, mut hi) = (cur, prev);
            while hi - lo > ROOT_REL_TOL * hi {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let rho_min = 0.5 * (lo + hi);
            let h = 1e-7 * rho_min;
            let slope = (f(rho_min + h) - f(rho_min - h)) / (2.0 * h);
            let flag = if slope * rho_min < ORBIT_SLOPE_TOL {
                TurningFlag::Orbiting
            } else {
                TurningFlag::Found
            };
            return Ok(TurningPoint { rho_min, flag });
        }
        min_f = min_f.min(fc);
        prev = cur;
        cur *= SCAN_RATIO;
    }
    if min_f < ORBIT_DIP_TOL {
        Ok(TurningPoint {
            rho_min: prev,
            flag: TurningFlag::Orbiting,
        })
    } else {
        Ok(TurningPoint {
            rho_min: 0.0,
            flag: TurningFlag::NoTurningPoint,
        })
    }
}

/// Largest root of `F(rho) = 1 - b^2/rho^2 - V(rho)/E` in `(0, rho_max]`,
/// found by an outward-in geometric scan and bisection.
pub fn turning_point(spec: &ScatterSpec) -> Result<TurningPoint> {
    spec.validate()?;
    let potential = prepare_potential(&spec.potential)?;
    let f = make_f(spec, &potential);
    turning_point_of(&f, spec.rho_max)
}

fn make_f<'a>(spec: &'a ScatterSpec, potential: &'a PreparedPotential<'a>) -> impl Fn(f64) -> f64 + 'a {
    move |rho: f64| 1.0 - (spec.b / rho) * (spec.b / rho) - potential.value(rho) / spec.energy
}

/// Result of one hyperangular sweep. `phi` is infinite (and `chi` absent)
/// for capture and orbiting cases.
#[derive(Clone, Debug)]
pub struct ScatterResult {
    pub b: f64,
    pub rho_min: f64,
    /// Total hyperangular arc swept between the asymptotes (or between the
    /// finite radii when the tail correction is disabled).
    pub phi: f64,
    /// Two-body-convention deflection `pi - phi`, in `(-inf, pi]`.
    pub chi: Option<f64>,
    /// Bound `2 b / rho_max` on the sweep beyond the truncation radius.
    pub tail_bound: f64,
    pub flag: TurningFlag,
    pub evaluations: usize,
    /// Diagnostic samples of `dPhi/drho` on a geometric grid.
    pub integrand: Vec<(f64, f64)>,
}

impl ScatterResult {
    /// JSON document with floats at 17 significant digits; infinite or absent
    /// values serialize as null.
    pub fn to_json(&self) -> String {
        let opt = |v: Option<f64>| match v {
            Some(x) if x.is_finite() => g17(x),
            _ => "null".into(),
        };
        let mut samples = String::from("[");
        for (i, (rho, val)) in self.integrand.iter().enumerate() {
            if i > 0 {
                samples.push(',');
            }
            samples.push_str(&format!("[{},{}]", g17(*rho), g17(*val)));
        }
        samples.push(']');
        format!(
            "{{\"b\":{},\"rho_min\":{},\"phi\":{},\"chi\":{},\"tail_bound\":{},\"flag\":\"{}\",\"evaluations\":{},\"integrand\":{}}}",
            g17(self.b),
            g17(self.rho_min),
            opt(Some(self.phi)),
            opt(self.chi),
            g17(self.tail_bound),
            self.flag.as_str(),
            self.evaluations,
            samples
        )
    }
}

fn sweep_with(spec: &ScatterSpec, potential: &PreparedPotential<'_>) -> Result<ScatterResult> {
    spec.validate()?;
    let f = make_f(spec, potential);
    let tp = turning_point_of(&f, spec.rho_max)?;
    let tail_bound = 2.0 * spec.b / spec.rho_max;

    if spec.b == 0.0 {
        // Head-on: the integrand vanishes identically.
        let chi = (tp.flag == TurningFlag::Found).then_some(std::f64::consts::PI);
        return Ok(ScatterResult {
            b: 0.0,
            rho_min: tp.rho_min,
            phi: 0.0,
            chi,
            tail_bound,
            flag: tp.flag,
            evaluations: 0,
            integrand: Vec::new(),
        });
    }
    if tp.flag != TurningFlag::Found {
        return Ok(ScatterResult {
            b: spec.b,
            rho_min: tp.rho_min,
            phi: f64::INFINITY,
            chi: None,
            tail_bound,
            flag: tp.flag,
            evaluations: 0,
            integrand: Vec::new(),
        });
    }

    // One leg with rho = rho_min + u^2; the endpoint singularity becomes a
    // removable 0/0 that never gets evaluated at u = 0 exactly.
    let leg = leg_integral(&f, spec.b, tp.rho_min, spec.rho_max, spec.rel_tol)?;
    let mut phi = 2.0 * leg.value;
    if spec.include_tail {
        phi += 2.0 * (spec.b / spec.rho_max).min(1.0).asin();
    }

    let mut integrand = Vec::with_capacity(32);
    let ratio = (spec.rho_max / tp.rho_min).powf(1.0 / 31.0);
    for k in 0..32 {
        let rho = tp.rho_min * ratio.powi(k) * (1.0 + 1e-9);
        let fv = f(rho);
        if fv > 0.0 {
            integrand.push((rho, 2.0 * spec.b / (rho * rho * fv.sqrt())));
        }
    }

    Ok(ScatterResult {
        b: spec.b,
        rho_min: tp.rho_min,
        phi,
        chi: Some(std::f64::consts::PI - phi),
        tail_bound,
        flag: TurningFlag::Found,
        evaluations: leg.evaluations,
        integrand,
    })
}

struct Leg {
    value: f64,
    evaluations: usize,
}

fn leg_integral(
    f: &impl Fn(f64) -> f64,
    b: f64,
    rho_min: f64,
    rho_to: f64,
    rel_tol: f64,
) -> Result<Leg> {
    if rho_to <= rho_min {
        return Ok(Leg {
            value: 0.0,
            evaluations: 0,
        });
    }
    let span = (rho_to - rho_min).sqrt();
    let result = adaptive_gk15(
        |u| {
            let rho = rho_min + u * u;
            let fv = f(rho);
            if fv <= 0.0 {
                0.0
            } else {
                2.0 * b * u / (rho * rho * fv.sqrt())
            }
        },
        0.0,
        span,
        rel_tol,
        4000,
    )?;
    Ok(Leg {
        value: result.value,
        evaluations: result.evaluations,
    })
}

/// The sweep `Phi = 2 \int_{rho_min}^{rho_max} b drho / (rho^2 sqrt(F))`
/// (inbound plus outbound leg), with the free-motion tail added when the
/// spec requests asymptotic normalization.
pub fn hyperangular_sweep(spec: &ScatterSpec) -> Result<ScatterResult> {
    let potential = prepare_potential(&spec.potential)?;
    sweep_with(spec, &potential)
}

/// One-leg sweep from the turning point up to `rho_to`, without tail. Used to
/// compare against trajectory legs that end at a finite radius.
pub fn sweep_leg(spec: &ScatterSpec, rho_to: f64) -> Result<f64> {
    spec.validate()?;
    let potential = prepare_potential(&spec.potential)?;
    let f = make_f(spec, &potential);
    let tp = turning_point_of(&f, spec.rho_max)?;
    if tp.flag != TurningFlag::Found {
        return Err(Error::InvalidSpec(format!(
            "no finite sweep leg: {}",
            tp.flag.as_str()
        )));
    }
    Ok(leg_integral(&f, spec.b, tp.rho_min, rho_to, spec.rel_tol)?.value)
}

/// Deflection angle `chi = pi - Phi` in the two-body convention; negative
/// values indicate net attractive winding.
pub fn deflection_two_body(spec: &ScatterSpec) -> Result<f64> {
    let result = hyperangular_sweep(spec)?;
    match result.chi {
        Some(chi) => Ok(chi),
        None => Err(Error::InvalidSpec(format!(
            "no finite deflection: {}",
            result.flag.as_str()
        ))),
    }
}

/// Sweeps over a list of impact parameters. Items are independent and merge
/// by index; the averaged potential (if any) is sampled once and shared.
pub fn scatter_sweep(spec: &ScatterSpec, b_list: &[f64]) -> Vec<Result<ScatterResult>> {
    let potential = match prepare_potential(&spec.potential) {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return b_list
                .iter()
                .map(|_| Err(Error::InvalidSpec(msg.clone())))
                .collect();
        }
    };
    b_list
        .par_iter()
        .map(|&b| {
            let mut item = spec.clone();
            item.b = b;
            sweep_with(&item, &potential)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Second-order identity
// ---------------------------------------------------------------------------

/// Maximum residuals of the second-order radial equation along a sampled
/// monotone-rho segment.
#[derive(Clone, Copy, Debug)]
pub struct SecondOrderReport {
    /// max |rhohat . rhohat'' - rhs(rho)| over interior samples.
    pub max_rhs_residual: f64,
    /// max |rhohat . rhohat'' + rhohat' . rhohat'| (kinematic identity).
    pub max_identity_residual: f64,
    pub points: usize,
}

/// Finite-difference check on raw mass-weighted position vectors.
///
/// `rhs` is the analytic right-hand side `-b^2 / (rho^4 F(rho))`; pass a
/// closure returning 0 to check only the kinematic identity.
pub fn second_order_check_vectors(
    samples: &[Vec<f64>],
    rhs: &dyn Fn(f64) -> f64,
) -> Result<SecondOrderReport> {
    if samples.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::SizeMismatch("inconsistent sample dimensions".into()));
    }
    let rho: Vec<f64> = samples
        .iter()
        .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if rho.contains(&0.0) {
        return Err(Error::UndefinedState("sample at rho = 0".into()));
    }
    let increasing = rho[1] > rho[0];
    for w in rho.windows(2) {
        if (w[1] > w[0]) != increasing || w[1] == w[0] {
            return Err(Error::InvalidInput(
                "rho must be strictly monotone along the segment".into(),
            ));
        }
    }
    let unit: Vec<Vec<f64>> = samples
        .iter()
        .zip(&rho)
        .map(|(s, r)| s.iter().map(|x| x / r).collect())
        .collect();

    let mut max_rhs = 0.0_f64;
    let mut max_identity = 0.0_f64;
    for k in 1..samples.len() - 1 {
        let h1 = rho[k] - rho[k - 1];
        let h2 = rho[k + 1] - rho[k];
        let denom = h1 * h2 * (h1 + h2);
        let mut d1_dot_d1 = 0.0;
        let mut u_dot_d2 = 0.0;
        for ((&um, &u0), &up) in unit[k - 1].iter().zip(&unit[k]).zip(&unit[k + 1]) {
            let d1 = (h1 * h1 * up + (h2 * h2 - h1 * h1) * u0 - h2 * h2 * um) / denom;
            let d2 = 2.0 * (h1 * up - (h1 + h2) * u0 + h2 * um) / denom;
            d1_dot_d1 += d1 * d1;
            u_dot_d2 += u0 * d2;
        }
        max_identity = max_identity.max((u_dot_d2 + d1_dot_d1).abs());
        max_rhs = max_rhs.max((u_dot_d2 - rhs(rho[k])).abs());
    }
    Ok(SecondOrderReport {
        max_rhs_residual: max_rhs,
        max_identity_residual: max_identity,
        points: samples.len(),
    })
}

/// Converts trajectory frames to mass-weighted vectors and runs
/// [`second_order_check_vectors`] against the scattering-equation right-hand
/// side for the given `b`, `E` and hyperradial potential.
pub fn second_order_check(
    jtree: &JacobiTree,
    frames: &[ParticleSystem],
    b: f64,
    energy: f64,
    potential: &RadialForm,
) -> Result<SecondOrderReport> {
    let mut samples = Vec::with_capacity(frames.len());
    for frame in frames {
        let coords = to_jacobi(frame, jtree)?;
        let mw = mass_weight(&coords, jtree, frame.masses())?;
        samples.push(mw.rho_vec);
    }
    let rhs = move |rho: f64| {
        let f = 1.0 - (b / rho) * (b / rho) - potential.value(rho) / energy;
        -b * b / (rho.powi(4) * f)
    };
    second_order_check_vectors(&samples, &rhs)
}
