//! Grand angular momentum: tensor, magnitude, and the decomposition into
//! three-dimensional angular momenta.
//!
//! The tensor is `Λ = ρ ∧ P` with components `Λ_ij = ρ_i P_j - ρ_j P_i` and
//! magnitude `Λ² = ½ Σ Λ_ij²`. In hyperspherical form the magnitude separates
//! as `Λ² = μ² ρ⁴ (rhohat_dot · rhohat_dot)`.
//!
//! On a fork-built tree the magnitude splits into `2N - 3` three-dimensional
//! angular momenta: each spherical fork contributes
//! `L_i² = μ² ρ_i⁴ (θ̇_i² + φ̇_i² sin²θ_i)` and each joining angle contributes
//! the planar `L_γ² = μ² (ρ̇_R ρ_L - ρ_R ρ̇_L)²` of its branch norms, every
//! term scaled by `csc²`/`sec²` of the angles on its path to the root.

use crate::error::{Error, Result};
use crate::hypersphere::{HNode, HyperState, HypersphericalTree};
use crate::jacobi::{self, JacobiTree, ParticleSystem};
use crate::numeric::g17;
use crate::vec3::Vec3;

/// L_sq below this is treated as exactly zero when its scale factor is
/// singular; the product is then 0 by continuity.
const NEGLIGIBLE_L_SQ: f64 = 1e-300;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Antisymmetric grand angular momentum tensor in `D` dimensions.
///
/// Stores the generating vectors; entries `Λ_ij = ρ_i P_j - ρ_j P_i` are
/// produced on demand, so antisymmetry is exact by construction.
#[derive(Clone, Debug)]
pub struct LambdaTensor {
    rho: Vec<f64>,
    mom: Vec<f64>,
}

impl LambdaTensor {
    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rho[i] * self.mom[j] - self.rho[j] * self.mom[i]
    }

    /// Materializes the full row-major `D x D` matrix.
    pub fn matrix(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = self.entry(i, j);
            }
        }
        m
    }

    /// `½ Σ_ij Λ_ij²` summed entry by entry. The explicit O(D²) route, kept
    /// as the independent check against [`lambda_sq`].
    pub fn magnitude_sq_explicit(&self) -> f64 {
        let d = self.dim();
        let mut total = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                let e = self.entry(i, j);
                total += e * e;
            }
        }
        total
    }
}

/// Builds the tensor from a position and momentum vector of equal dimension.
pub fn lambda_tensor(rho_vec: &[f64], mom_vec: &[f64]) -> Result<LambdaTensor> {
    if rho_vec.len() != mom_vec.len() {
        return Err(Error::SizeMismatch(format!(
            "rho has dimension {}, momentum {}",
            rho_vec.len(),
            mom_vec.len()
        )));
    }
    Ok(LambdaTensor {
        rho: rho_vec.to_vec(),
        mom: mom_vec.to_vec(),
    })
}

/// Tensor magnitude via the Lagrange identity `|ρ|²|P|² - (ρ·P)²`; O(D).
pub fn lambda_sq(tensor: &LambdaTensor) -> f64 {
    lambda_sq_vectors(&tensor.rho, &tensor.mom)
}

/// Lagrange-identity magnitude directly from vectors, clamped at zero against
/// cancellation round-off.
pub fn lambda_sq_vectors(rho_vec: &[f64], mom_vec: &[f64]) -> f64 {
    let rr: f64 = rho_vec.iter().map(|x| x * x).sum();
    let pp: f64 = mom_vec.iter().map(|x| x * x).sum();
    let rp: f64 = rho_vec.iter().zip(mom_vec).map(|(a, b)| a * b).sum();
    (rr * pp - rp * rp).max(0.0)
}

/// Hyperspherical magnitude `μ² ρ⁴ (rhohat_dot · rhohat_dot)`, with the last
/// factor from [`crate::hypersphere::unit_speed_sq`].
pub fn lambda_sq_hyperspherical(mu: f64, rho: f64, unit_speed_sq: f64) -> f64 {
    mu * mu * rho.powi(4) * unit_speed_sq
}

// ---------------------------------------------------------------------------
// Three-dimensional pieces
// ---------------------------------------------------------------------------

/// Squared angular momentum of one spherical fork:
/// `μ² ρ_i⁴ (θ̇² + φ̇² sin²θ)`. Equals `|μ ρ⃗_i × ρ⃗̇_i|²` of the fork's
/// mass-weighted 3-vector.
pub fn fork_l_sq(mu: f64, rho_i: f64, theta_i: f64, theta_dot: f64, phi_dot: f64) -> f64 {
    let st = theta_i.sin();
    mu * mu * rho_i.powi(4) * (theta_dot * theta_dot + phi_dot * phi_dot * st * st)
}

/// Squared planar angular momentum of a joining node's branch norms:
/// `μ² (ρ̇_R ρ_L - ρ_R ρ̇_L)²`.
pub fn node_l_sq(mu: f64, rho_l: f64, rho_r: f64, rho_l_dot: f64, rho_r_dot: f64) -> f64 {
    let cross = rho_r_dot * rho_l - rho_r * rho_l_dot;
    mu * mu * cross * cross
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContributionKind {
    Fork,
    Node,
}

impl ContributionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContributionKind::Fork => "fork",
            ContributionKind::Node => "node",
        }
    }
}

/// One term of the decomposition: a non-negative squared angular momentum, a
/// `csc²`/`sec²` path scale, and their product. `scale` is `None` when the
/// path is singular but the term vanishes by continuity.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub kind: ContributionKind,
    pub label: String,
    pub l_sq: f64,
    pub scale: Option<f64>,
    pub product: f64,
}

/// All `2N - 3` contributions and their sum, which equals Λ².
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub contributions: Vec<Contribution>,
    pub total: f64,
}

impl Decomposition {
    /// JSON document with all floats at 17 significant digits. The caller
    /// supplies the independently computed tensor magnitude.
    pub fn to_json(&self, tensor_total: f64) -> String {
        let mut out = String::from("{\"contributions\":[");
        for (i, c) in self.contributions.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let scale = match c.scale {
                Some(s) => g17(s),
                None => "null".into(),
            };
            out.push_str(&format!(
                "{{\"kind\":\"{}\",\"label\":\"{}\",\"L_sq\":{},\"scale\":{},\"product\":{}}}",
                c.kind.as_str(),
                c.label,
                g17(c.l_sq),
                scale,
                g17(c.product)
            ));
        }
        out.push_str(&format!(
            "],\"total\":{},\"tensor_total\":{}}}",
            g17(self.total),
            g17(tensor_total)
        ));
        out
    }
}

/// Decomposes Λ² over a fork-built tree into its fork and node terms.
///
/// The state must carry rates. Walk order is node, right subtree, left
/// subtree, which reproduces the worked three-body ordering
/// `L_{2,1}² + L_1² csc²γ + L_2² sec²γ`.
pub fn decompose(
    ftree: &HypersphericalTree,
    state: &HyperState,
    mu: f64,
) -> Result<Decomposition> {
    let (rates, rho_dot) = match (&state.angle_rates, state.rho_dot) {
        (Some(r), Some(rd)) => (r.as_slice(), rd),
        _ => {
            return Err(Error::InvalidInput(
                "decompose needs a state with rates".into(),
            ))
        }
    };
    if state.angles.len() != ftree.angle_count() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} angles, state has {}",
            ftree.angle_count(),
            state.angles.len()
        )));
    }
    let forks = ftree.forks()?;
    let mut theta_to_number = vec![0usize; ftree.angle_count()];
    for fork in &forks {
        theta_to_number[fork.theta] = fork.number;
    }

    struct Walker<'a> {
        angles: &'a [f64],
        rates: &'a [f64],
        names: &'a [crate::hypersphere::AngleInfo],
        theta_to_number: &'a [usize],
        mu: f64,
        out: Vec<Contribution>,
    }

    impl Walker<'_> {
        fn scale_for(&self, path: &[(usize, bool)], l_sq: f64, label: &str) -> Result<(Option<f64>, f64)> {
            let mut scale = 1.0;
            let mut singular = false;
            for &(angle, from_right) in path {
                let f = if from_right {
                    self.angles[angle].sin()
                } else {
                    self.angles[angle].cos()
                };
                if f == 0.0 {
                    singular = true;
                } else {
                    scale /= f * f;
                }
            }
            if singular {
                if l_sq < NEGLIGIBLE_L_SQ {
                    return Ok((None, 0.0));
                }
                return Err(Error::DegenerateConfiguration(format!(
                    "singular scale on the path of {label} with L_sq = {l_sq}"
                )));
            }
            Ok((Some(scale), l_sq * scale))
        }

        fn walk(
            &mut self,
            node: &HNode,
            rho_sub: f64,
            rho_dot_sub: f64,
            path: &mut Vec<(usize, bool)>,
        ) -> Result<()> {
            let HNode::Node { angle, left, right } = node else {
                return Err(Error::InvalidInput(
                    "tree is not fork-built: bare leaf outside a spherical fork".into(),
                ));
            };
            let a = self.angles[*angle];
            let rate = self.rates[*angle];
            if self.theta_to_number[*angle] != 0 {
                // Spherical fork: theta with the phi node on its right.
                let HNode::Node { angle: phi, .. } = &**right else {
                    unreachable!("fork pattern validated by forks()");
                };
                let number = self.theta_to_number[*angle];
                let l_sq = fork_l_sq(self.mu, rho_sub, a, rate, self.rates[*phi]);
                let label = format!("L_{number}");
                let (scale, product) = self.scale_for(path, l_sq, &label)?;
                self.out.push(Contribution {
                    kind: ContributionKind::Fork,
                    label,
                    l_sq,
                    scale,
                    product,
                });
                return Ok(());
            }
            // Joining node: branch norms rho_L = rho cos γ, rho_R = rho sin γ.
            let (s, c) = a.sin_cos();
            let rho_l = rho_sub * c;
            let rho_r = rho_sub * s;
            let rho_l_dot = rho_dot_sub * c - rho_sub * rate * s;
            let rho_r_dot = rho_dot_sub * s + rho_sub * rate * c;
            let l_sq = node_l_sq(self.mu, rho_l, rho_r, rho_l_dot, rho_r_dot);
            let name = &self.names[*angle].name;
            let label = format!("L{}", name.strip_prefix('γ').unwrap_or(name));
            let (scale, product) = self.scale_for(path, l_sq, &label)?;
            self.out.push(Contribution {
                kind: ContributionKind::Node,
                label,
                l_sq,
                scale,
                product,
            });
            path.push((*angle, true));
            self.walk(right, rho_r, rho_r_dot, path)?;
            path.pop();
            path.push((*angle, false));
            self.walk(left, rho_l, rho_l_dot, path)?;
            path.pop();
            Ok(())
        }
    }

    let mut walker = Walker {
        angles: &state.angles,
        rates,
        names: ftree.angles(),
        theta_to_number: &theta_to_number,
        mu,
        out: Vec::with_capacity(2 * forks.len() - 1),
    };
    walker.walk(ftree.root(), state.rho, rho_dot, &mut Vec::new())?;
    let total = walker.out.iter().map(|c| c.product).sum();
    Ok(Decomposition {
        contributions: walker.out,
        total,
    })
}

/// The 3D angular momentum `μ_node ρ⃗ × ρ⃗̇` of one virtual body in
/// unweighted Jacobi coordinates. Its squared magnitude equals the
/// mass-weighted fork term of the same node.
pub fn unweighted_fork_l(
    system: &ParticleSystem,
    jtree: &JacobiTree,
    node: usize,
) -> Result<Vec3> {
    if node >= jtree.n_nodes() {
        return Err(Error::InvalidInput(format!(
            "node {node} out of range; tree has {} nodes",
            jtree.n_nodes()
        )));
    }
    let coords = jacobi::to_jacobi(system, jtree)?;
    let mu_node = jtree.node_masses(system.masses())?[node].mu;
    Ok(coords.rho[node].cross(&coords.rho_dot[node]) * mu_node)
}
