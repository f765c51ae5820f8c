//! Jacobi trees and transforms between lab-frame and mass-weighted Jacobi
//! coordinates.
//!
//! A Jacobi tree is a binary tree whose leaves are the physical particles and
//! whose internal nodes are virtual bodies. Each node joins the centers of
//! mass of its two leaf sets; the node vector points from the left set's
//! centroid to the right set's and carries the reduced mass
//! `mu = M_L M_R / (M_L + M_R)`. Rescaling every node vector by
//! `sqrt(mu_node / mu)`, with `mu` the N-body reduced mass, stacks the system
//! into a single `3N - 3`-dimensional vector whose kinetic energy has
//! single-mass form.
//!
//! Canonical node order is depth-first, left subtree before right, node after
//! its children (post-order). Within a node the Cartesian components are
//! stacked as (x, y, z).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Kahan;
use crate::vec3::Vec3;

// ---------------------------------------------------------------------------
// Particle systems
// ---------------------------------------------------------------------------

/// Masses, lab-frame positions and velocities of N physical bodies.
///
/// Serializes as `{"masses": [...], "positions": [[x,y,z], ...],
/// "velocities": [[x,y,z], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawSystem")]
pub struct ParticleSystem {
    masses: Vec<f64>,
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    masses: Vec<f64>,
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
}

impl TryFrom<RawSystem> for ParticleSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        ParticleSystem::new(raw.masses, raw.positions, raw.velocities)
    }
}

impl ParticleSystem {
    pub fn new(masses: Vec<f64>, positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 particles, got {}",
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "masses must be strictly positive and finite, got {m}"
            )));
        }
        if positions.len() != masses.len() || velocities.len() != masses.len() {
            return Err(Error::SizeMismatch(format!(
                "{} masses, {} positions, {} velocities",
                masses.len(),
                positions.len(),
                velocities.len()
            )));
        }
        Ok(ParticleSystem {
            masses,
            positions,
            velocities,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("system JSON: {e}")))
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = Kahan::default();
        for &m in &self.masses {
            acc.add(m);
        }
        acc.total()
    }

    pub fn center_of_mass(&self) -> Vec3 {
        mass_centroid(&self.masses, &self.positions, None).1
    }

    pub fn cm_velocity(&self) -> Vec3 {
        mass_centroid(&self.masses, &self.velocities, None).1
    }

    pub fn kinetic_energy(&self) -> f64 {
        let mut acc = Kahan::default();
        for (m, v) in self.masses.iter().zip(&self.velocities) {
            acc.add(0.5 * m * v.norm_sq());
        }
        acc.total()
    }

    pub fn total_momentum(&self) -> Vec3 {
        let mut p = Vec3::ZERO;
        for (m, v) in self.masses.iter().zip(&self.velocities) {
            p += *v * *m;
        }
        p
    }

    /// Total 3D angular momentum about the origin, `sum_i m_i r_i x v_i`.
    pub fn total_angular_momentum(&self) -> Vec3 {
        let mut l = Vec3::ZERO;
        for i in 0..self.n() {
            l += self.positions[i].cross(&self.velocities[i]) * self.masses[i];
        }
        l
    }
}

/// Compensated mass-weighted centroid over a leaf subset (all leaves if
/// `subset` is `None`). Returns the subset's total mass and centroid.
fn mass_centroid(masses: &[f64], vecs: &[Vec3], subset: Option<&[usize]>) -> (f64, Vec3) {
    let mut m_acc = Kahan::default();
    let mut c = [Kahan::default(), Kahan::default(), Kahan::default()];
    let mut fold = |i: usize| {
        m_acc.add(masses[i]);
        for k in 0..3 {
            c[k].add(masses[i] * vecs[i][k]);
        }
    };
    match subset {
        Some(idx) => idx.iter().for_each(|&i| fold(i)),
        None => (0..masses.len()).for_each(fold),
    }
    let m = m_acc.total();
    (m, Vec3::new(c[0].total() / m, c[1].total() / m, c[2].total() / m))
}

// ---------------------------------------------------------------------------
// Tree shapes
// ---------------------------------------------------------------------------

/// A bare binary tree over leaf indices. Jacobi trees interpret leaves as
/// 0-based particle indices; hyperspherical trees reuse the same shape with
/// leaves as 0-based component indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(usize),
    Branch(Box<TreeNode>, Box<TreeNode>),
}

impl TreeNode {
    pub fn branch(left: TreeNode, right: TreeNode) -> TreeNode {
        TreeNode::Branch(Box::new(left), Box::new(right))
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf(i) => out.push(*i),
            TreeNode::Branch(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    fn internal_count(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Branch(l, r) => 1 + l.internal_count() + r.internal_count(),
        }
    }
}

// ---------------------------------------------------------------------------
// Jacobi trees
// ---------------------------------------------------------------------------

/// Leaf sets of one internal node, in 0-based particle indices.
#[derive(Clone, Debug)]
pub struct NodeSpan {
    pub left_leaves: Vec<usize>,
    pub right_leaves: Vec<usize>,
}

impl NodeSpan {
    /// Paper-style node name: 1-based left leaves concatenated, comma,
    /// 1-based right leaves (e.g. `"12,34"`).
    pub fn label(&self) -> String {
        let side = |v: &[usize]| v.iter().map(|i| (i + 1).to_string()).collect::<String>();
        format!("{},{}", side(&self.left_leaves), side(&self.right_leaves))
    }
}

/// Masses attached to one internal node for a given mass vector.
#[derive(Clone, Copy, Debug)]
pub struct NodeMasses {
    pub m_left: f64,
    pub m_right: f64,
    /// Reduced mass `m_left * m_right / (m_left + m_right)`.
    pub mu: f64,
}

/// A binary tree over particle indices defining `N - 1` virtual bodies.
///
/// The tree itself is pure shape; node masses are derived from a mass vector
/// via [`JacobiTree::node_masses`].
#[derive(Clone, Debug)]
pub struct JacobiTree {
    root: TreeNode,
    n: usize,
    nodes: Vec<NodeSpan>,
}

impl JacobiTree {
    /// Validates that the shape's leaves are a permutation of `0..n` with
    /// `n >= 2` and builds the canonical (post-order) node table.
    pub fn from_shape(root: TreeNode) -> Result<Self> {
        let leaves = root.leaves();
        let n = leaves.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "a Jacobi tree needs at least 2 leaves, got {n}"
            )));
        }
        let mut seen = vec![false; n];
        for &leaf in &leaves {
            if leaf >= n {
                return Err(Error::InvalidInput(format!(
                    "leaf index {} out of range 1..={n}",
                    leaf + 1
                )));
            }
            if seen[leaf] {
                return Err(Error::InvalidInput(format!(
                    "duplicate leaf index {}",
                    leaf + 1
                )));
            }
            seen[leaf] = true;
        }
        let mut nodes = Vec::with_capacity(n - 1);
        collect_spans(&root, &mut nodes);
        Ok(JacobiTree { root, n, nodes })
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Internal nodes in canonical post-order.
    pub fn nodes(&self) -> &[NodeSpan] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Per-node side masses and reduced masses for a given mass vector.
    pub fn node_masses(&self, masses: &[f64]) -> Result<Vec<NodeMasses>> {
        if masses.len() != self.n {
            return Err(Error::SizeMismatch(format!(
                "tree has {} leaves, got {} masses",
                self.n,
                masses.len()
            )));
        }
        Ok(self
            .nodes
            .iter()
            .map(|span| {
                let m_left: f64 = span.left_leaves.iter().map(|&i| masses[i]).sum();
                let m_right: f64 = span.right_leaves.iter().map(|&i| masses[i]).sum();
                NodeMasses {
                    m_left,
                    m_right,
                    mu: m_left * m_right / (m_left + m_right),
                }
            })
            .collect())
    }

    /// S-expression form with 1-based leaf indices, e.g. `"((1 2) (3 4))"`.
    pub fn to_sexpr(&self) -> String {
        fn write(node: &TreeNode, out: &mut String) {
            match node {
                TreeNode::Leaf(i) => out.push_str(&(i + 1).to_string()),
                TreeNode::Branch(l, r) => {
                    out.push('(');
                    write(l, out);
                    out.push(' ');
                    write(r, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        write(&self.root, &mut out);
        out
    }
}

impl fmt::Display for JacobiTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexpr())
    }
}

fn collect_spans(node: &TreeNode, out: &mut Vec<NodeSpan>) {
    if let TreeNode::Branch(l, r) = node {
        collect_spans(l, out);
        collect_spans(r, out);
        out.push(NodeSpan {
            left_leaves: l.leaves(),
            right_leaves: r.leaves(),
        });
    }
}

// ---------------------------------------------------------------------------
// Coordinate bundles
// ---------------------------------------------------------------------------

/// Unweighted Jacobi coordinates: one relative vector per internal node in
/// canonical order, plus the center of mass.
#[derive(Clone, Debug)]
pub struct JacobiCoordinates {
    pub rho: Vec<Vec3>,
    pub rho_dot: Vec<Vec3>,
    pub r_cm: Vec3,
    pub v_cm: Vec3,
}

/// The stacked `3(N-1)`-dimensional mass-weighted vector and its velocity.
///
/// Component order: nodes in canonical order, (x, y, z) within each node.
#[derive(Clone, Debug)]
pub struct MassWeightedVector {
    /// N-body reduced mass.
    pub mu: f64,
    pub rho_vec: Vec<f64>,
    pub vel_vec: Vec<f64>,
}

impl MassWeightedVector {
    pub fn dim(&self) -> usize {
        self.rho_vec.len()
    }

    /// Hyperradius, the Euclidean norm of the position vector.
    pub fn hyperradius(&self) -> f64 {
        self.rho_vec.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// N-body reduced mass `(prod m_i / sum m_i)^(1/(N-1))`.
pub fn nbody_reduced_mass(masses: &[f64]) -> Result<f64> {
    if masses.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "reduced mass needs at least 2 masses, got {}",
            masses.len()
        )));
    }
    let mut log_prod = Kahan::default();
    let mut sum = Kahan::default();
    for &m in masses {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidInput(format!("non-positive mass {m}")));
        }
        log_prod.add(m.ln());
        sum.add(m);
    }
    let exponent = 1.0 / (masses.len() as f64 - 1.0);
    Ok(((log_prod.total() - sum.total().ln()) * exponent).exp())
}

/// The caterpillar tree `((...((1 2) 3)...) n)`: node `j` joins the center of
/// mass of particles `1..j` with particle `j + 1`.
pub fn sequential_tree(n: usize) -> Result<JacobiTree> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sequential tree needs n >= 2, got {n}"
        )));
    }
    let mut root = TreeNode::branch(TreeNode::Leaf(0), TreeNode::Leaf(1));
    for j in 2..n {
        root = TreeNode::branch(root, TreeNode::Leaf(j));
    }
    JacobiTree::from_shape(root)
}

/// Parses the tree grammar `tree := INT | '(' tree ' ' tree ')'` with 1-based
/// leaf indices and validates the leaf set against `n`.
pub fn parse_tree(text: &str, n: usize) -> Result<JacobiTree> {
    let mut parser = SexprParser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let root = parser.parse_node()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(Error::Parse {
            position: parser.pos,
            message: "trailing input after tree".into(),
        });
    }
    let leaves = root.leaves();
    if leaves.len() != n {
        return Err(Error::InvalidInput(format!(
            "tree has {} leaves, expected {n}",
            leaves.len()
        )));
    }
    JacobiTree::from_shape(root)
}

struct SexprParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl SexprParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn parse_node(&mut self) -> Result<TreeNode> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let left = self.parse_node()?;
                let right = self.parse_node()?;
                self.skip_ws();
                if self.bytes.get(self.pos) != Some(&b')') {
                    return Err(Error::Parse {
                        position: self.pos,
                        message: "expected ')'".into(),
                    });
                }
                self.pos += 1;
                Ok(TreeNode::branch(left, right))
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_digit())
                {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                let value: usize = text.parse().map_err(|_| Error::Parse {
                    position: start,
                    message: format!("leaf index '{text}' out of range"),
                })?;
                if value == 0 {
                    return Err(Error::Parse {
                        position: start,
                        message: "leaf indices are 1-based; 0 is not valid".into(),
                    });
                }
                Ok(TreeNode::Leaf(value - 1))
            }
            Some(c) => Err(Error::Parse {
                position: self.pos,
                message: format!("unexpected character '{}'", *c as char),
            }),
            None => Err(Error::Parse {
                position: self.pos,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

/// Lab frame to Jacobi coordinates: for each node in canonical order,
/// `rho = R_right - R_left` with `R` the mass-weighted centroid of each side.
/// Velocities go through the same linear map.
pub fn to_jacobi(system: &ParticleSystem, tree: &JacobiTree) -> Result<JacobiCoordinates> {
    if tree.n_particles() != system.n() {
        return Err(Error::SizeMismatch(format!(
            "tree over {} particles, system has {}",
            tree.n_particles(),
            system.n()
        )));
    }
    let mut rho = Vec::with_capacity(tree.n_nodes());
    let mut rho_dot = Vec::with_capacity(tree.n_nodes());
    for span in tree.nodes() {
        let (_, p_left) = mass_centroid(system.masses(), system.positions(), Some(&span.left_leaves));
        let (_, p_right) =
            mass_centroid(system.masses(), system.positions(), Some(&span.right_leaves));
        rho.push(p_right - p_left);
        let (_, v_left) =
            mass_centroid(system.masses(), system.velocities(), Some(&span.left_leaves));
        let (_, v_right) =
            mass_centroid(system.masses(), system.velocities(), Some(&span.right_leaves));
        rho_dot.push(v_right - v_left);
    }
    Ok(JacobiCoordinates {
        rho,
        rho_dot,
        r_cm: system.center_of_mass(),
        v_cm: system.cm_velocity(),
    })
}

/// Inverse of [`to_jacobi`]: rebuilds lab-frame positions and velocities by
/// splitting each node's centroid into its two sides.
pub fn from_jacobi(
    coords: &JacobiCoordinates,
    tree: &JacobiTree,
    masses: &[f64],
) -> Result<ParticleSystem> {
    if coords.rho.len() != tree.n_nodes() || coords.rho_dot.len() != tree.n_nodes() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} nodes, got {} rho / {} rho_dot vectors",
            tree.n_nodes(),
            coords.rho.len(),
            coords.rho_dot.len()
        )));
    }
    let node_masses = tree.node_masses(masses)?;
    let mut positions = vec![Vec3::ZERO; tree.n_particles()];
    let mut velocities = vec![Vec3::ZERO; tree.n_particles()];

    // At a node with centroid C: left centroid = C - (M_R / M) rho,
    // right centroid = C + (M_L / M) rho.
    #[allow(clippy::too_many_arguments)]
    fn place(
        node: &TreeNode,
        offset: usize,
        centroid_pos: Vec3,
        centroid_vel: Vec3,
        coords: &JacobiCoordinates,
        node_masses: &[NodeMasses],
        positions: &mut [Vec3],
        velocities: &mut [Vec3],
    ) {
        match node {
            TreeNode::Leaf(i) => {
                positions[*i] = centroid_pos;
                velocities[*i] = centroid_vel;
            }
            TreeNode::Branch(l, r) => {
                let nl = l.internal_count();
                let nr = r.internal_count();
                let idx = offset + nl + nr;
                let nm = node_masses[idx];
                let m_total = nm.m_left + nm.m_right;
                let wl = nm.m_right / m_total;
                let wr = nm.m_left / m_total;
                place(
                    l,
                    offset,
                    centroid_pos - coords.rho[idx] * wl,
                    centroid_vel - coords.rho_dot[idx] * wl,
                    coords,
                    node_masses,
                    positions,
                    velocities,
                );
                place(
                    r,
                    offset + nl,
                    centroid_pos + coords.rho[idx] * wr,
                    centroid_vel + coords.rho_dot[idx] * wr,
                    coords,
                    node_masses,
                    positions,
                    velocities,
                );
            }
        }
    }

    place(
        tree.root(),
        0,
        coords.r_cm,
        coords.v_cm,
        coords,
        &node_masses,
        &mut positions,
        &mut velocities,
    );
    ParticleSystem::new(masses.to_vec(), positions, velocities)
}

/// Scales each node vector by `sqrt(mu_node / mu)` and stacks them in
/// canonical order; the same scaling applies to velocities.
pub fn mass_weight(
    coords: &JacobiCoordinates,
    tree: &JacobiTree,
    masses: &[f64],
) -> Result<MassWeightedVector> {
    if coords.rho.len() != tree.n_nodes() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} nodes, got {} rho vectors",
            tree.n_nodes(),
            coords.rho.len()
        )));
    }
    let mu = nbody_reduced_mass(masses)?;
    let node_masses = tree.node_masses(masses)?;
    let dim = 3 * tree.n_nodes();
    let mut rho_vec = Vec::with_capacity(dim);
    let mut vel_vec = Vec::with_capacity(dim);
    for (k, nm) in node_masses.iter().enumerate() {
        let scale = (nm.mu / mu).sqrt();
        for c in 0..3 {
            rho_vec.push(scale * coords.rho[k][c]);
            vel_vec.push(scale * coords.rho_dot[k][c]);
        }
    }
    Ok(MassWeightedVector {
        mu,
        rho_vec,
        vel_vec,
    })
}

/// Inverse of [`mass_weight`]. The center-of-mass state is not part of the
/// mass-weighted vector, so the caller supplies it (zero for a pure relative
/// configuration).
pub fn mass_unweight(
    mw: &MassWeightedVector,
    tree: &JacobiTree,
    masses: &[f64],
    r_cm: Vec3,
    v_cm: Vec3,
) -> Result<JacobiCoordinates> {
    if mw.dim() != 3 * tree.n_nodes() || mw.vel_vec.len() != mw.dim() {
        return Err(Error::SizeMismatch(format!(
            "tree needs dimension {}, got {} / {}",
            3 * tree.n_nodes(),
            mw.dim(),
            mw.vel_vec.len()
        )));
    }
    let mu = nbody_reduced_mass(masses)?;
    let node_masses = tree.node_masses(masses)?;
    let mut rho = Vec::with_capacity(tree.n_nodes());
    let mut rho_dot = Vec::with_capacity(tree.n_nodes());
    for (k, nm) in node_masses.iter().enumerate() {
        let scale = (mu / nm.mu).sqrt();
        rho.push(Vec3::new(
            scale * mw.rho_vec[3 * k],
            scale * mw.rho_vec[3 * k + 1],
            scale * mw.rho_vec[3 * k + 2],
        ));
        rho_dot.push(Vec3::new(
            scale * mw.vel_vec[3 * k],
            scale * mw.vel_vec[3 * k + 1],
            scale * mw.vel_vec[3 * k + 2],
        ));
    }
    Ok(JacobiCoordinates {
        rho,
        rho_dot,
        r_cm,
        v_cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_system(rng: &mut StdRng, n: usize) -> ParticleSystem {
        let masses = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
        let rand_vec = |rng: &mut StdRng| {
            Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            )
        };
        let positions = (0..n).map(|_| rand_vec(rng)).collect();
        let velocities = (0..n).map(|_| rand_vec(rng)).collect();
        ParticleSystem::new(masses, positions, velocities).unwrap()
    }

    #[test]
    fn reduced_mass_examples() {
        assert_eq!(nbody_reduced_mass(&[1.0, 1.0]).unwrap(), 0.5);
        assert_relative_eq!(
            nbody_reduced_mass(&[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        // Independent arithmetic: (2*3*6 / (2+3+6))^(1/2) = sqrt(36/11).
        let oracle = (36.0_f64 / 11.0).sqrt();
        assert_relative_eq!(
            nbody_reduced_mass(&[2.0, 3.0, 6.0]).unwrap(),
            oracle,
            max_relative = 1e-14
        );
    }

    #[test]
    fn reduced_mass_rejects_bad_input() {
        assert!(nbody_reduced_mass(&[]).is_err());
        assert!(nbody_reduced_mass(&[1.0]).is_err());
        assert!(nbody_reduced_mass(&[1.0, -2.0]).is_err());
        assert!(nbody_reduced_mass(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn sequential_tree_shapes() {
        let t2 = sequential_tree(2).unwrap();
        assert_eq!(t2.to_sexpr(), "(1 2)");
        assert_eq!(t2.n_nodes(), 1);

        let t3 = sequential_tree(3).unwrap();
        assert_eq!(t3.to_sexpr(), "((1 2) 3)");
        let nm = t3.node_masses(&[1.0, 1.0, 1.0]).unwrap();
        // mu_{1,2} then mu_{12,3}.
        assert_eq!(nm[0].mu, 0.5);
        assert_relative_eq!(nm[1].mu, 2.0 / 3.0, max_relative = 1e-15);

        let t4 = sequential_tree(4).unwrap();
        assert_eq!(t4.to_sexpr(), "(((1 2) 3) 4)");

        assert!(sequential_tree(1).is_err());
    }

    #[test]
    fn parse_tree_accepts_valid_trees() {
        let t = parse_tree("((1 2) (3 4))", 4).unwrap();
        assert_eq!(t.to_sexpr(), "((1 2) (3 4))");
        assert_eq!(t.nodes()[0].label(), "1,2");
        assert_eq!(t.nodes()[1].label(), "3,4");
        assert_eq!(t.nodes()[2].label(), "12,34");

        let t2 = parse_tree("  ( 1   2 ) ", 2).unwrap();
        assert_eq!(t2.to_sexpr(), "(1 2)");
    }

    #[test]
    fn parse_tree_rejects_bad_trees() {
        let dup = parse_tree("((1 2) 2)", 3).unwrap_err();
        assert!(dup.to_string().contains("duplicate leaf index 2"), "{dup}");

        let syn = parse_tree("(1 (2", 3).unwrap_err();
        match syn {
            Error::Parse { position, .. } => assert_eq!(position, 5),
            other => panic!("expected parse error, got {other}"),
        }

        assert!(parse_tree("(1 3)", 2).is_err()); // out of range
        assert!(parse_tree("(1 2)", 3).is_err()); // missing leaf
        assert!(parse_tree("(1 2) 3", 3).is_err()); // trailing input
        assert!(parse_tree("5", 1).is_err()); // single leaf
    }

    #[test]
    fn to_jacobi_two_body() {
        let sys = ParticleSystem::new(
            vec![1.0, 1.0],
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)],
            vec![Vec3::ZERO, Vec3::ZERO],
        )
        .unwrap();
        let tree = sequential_tree(2).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        assert_eq!(coords.rho[0], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn to_jacobi_coincident_particles() {
        let p = Vec3::new(0.3, -1.0, 2.0);
        let sys = ParticleSystem::new(
            vec![1.0, 2.0, 3.0],
            vec![p, p, p],
            vec![Vec3::ZERO, Vec3::ZERO, Vec3::ZERO],
        )
        .unwrap();
        let tree = sequential_tree(3).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        for rho in &coords.rho {
            assert_eq!(*rho, Vec3::ZERO);
        }
    }

    #[test]
    fn to_jacobi_three_body_hand_centroids() {
        // R_12 = (1,0,0): rho_1 = (2,0,0), rho_2 = r_3 - R_12 = (0,3,0).
        let sys = ParticleSystem::new(
            vec![1.0, 1.0, 2.0],
            vec![
                Vec3::ZERO,
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(1.0, 3.0, 0.0),
            ],
            vec![Vec3::ZERO, Vec3::ZERO, Vec3::ZERO],
        )
        .unwrap();
        let tree = sequential_tree(3).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        assert_abs_diff_eq!(coords.rho[0].x(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(coords.rho[1].x(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(coords.rho[1].y(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn from_jacobi_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in 2..=6 {
            let sys = random_system(&mut rng, n);
            let tree = sequential_tree(n).unwrap();
            let coords = to_jacobi(&sys, &tree).unwrap();
            let back = from_jacobi(&coords, &tree, sys.masses()).unwrap();
            for i in 0..n {
                let dp = (back.positions()[i] - sys.positions()[i]).norm();
                let dv = (back.velocities()[i] - sys.velocities()[i]).norm();
                assert!(dp < 1e-12 * (1.0 + sys.positions()[i].norm()), "{dp}");
                assert!(dv < 1e-12 * (1.0 + sys.velocities()[i].norm()), "{dv}");
            }
        }
    }

    #[test]
    fn from_jacobi_zero_rhos_collapse_to_cm() {
        let tree = sequential_tree(3).unwrap();
        let c = Vec3::new(1.0, -2.0, 0.5);
        let coords = JacobiCoordinates {
            rho: vec![Vec3::ZERO; 2],
            rho_dot: vec![Vec3::ZERO; 2],
            r_cm: c,
            v_cm: Vec3::ZERO,
        };
        let sys = from_jacobi(&coords, &tree, &[1.0, 2.0, 3.0]).unwrap();
        for p in sys.positions() {
            assert_eq!(*p, c);
        }
    }

    #[test]
    fn from_jacobi_two_body_closed_form() {
        // Solving the two-body definition by hand:
        // r_1 = R_cm - (m_2/M) rho, r_2 = R_cm + (m_1/M) rho.
        let (m1, m2) = (2.0, 3.0);
        let rho = Vec3::new(1.0, -0.5, 2.0);
        let r_cm = Vec3::new(0.25, 0.5, -1.0);
        let tree = sequential_tree(2).unwrap();
        let coords = JacobiCoordinates {
            rho: vec![rho],
            rho_dot: vec![Vec3::ZERO],
            r_cm,
            v_cm: Vec3::ZERO,
        };
        let sys = from_jacobi(&coords, &tree, &[m1, m2]).unwrap();
        let m = m1 + m2;
        assert_abs_diff_eq!(
            (sys.positions()[0] - (r_cm - rho * (m2 / m))).norm(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            (sys.positions()[1] - (r_cm + rho * (m1 / m))).norm(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn mass_weight_unit_scale_for_equal_two_body() {
        // Equal unit masses: mu_node = mu = 1/2, scale factor exactly 1.
        let sys = ParticleSystem::new(
            vec![1.0, 1.0],
            vec![Vec3::ZERO, Vec3::new(1.0, 2.0, 3.0)],
            vec![Vec3::ZERO, Vec3::new(-1.0, 0.0, 1.0)],
        )
        .unwrap();
        let tree = sequential_tree(2).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        let mw = mass_weight(&coords, &tree, sys.masses()).unwrap();
        assert_eq!(mw.mu, 0.5);
        for c in 0..3 {
            assert_eq!(mw.rho_vec[c], coords.rho[0][c]);
            assert_eq!(mw.vel_vec[c], coords.rho_dot[0][c]);
        }
    }

    #[test]
    fn mass_weight_three_body_scalings() {
        // m = (1,1,2): mu = (2/4)^(1/2), node scalings sqrt(mu_12/mu) and
        // sqrt(mu_123/mu) with mu_12 = 1/2, mu_123 = 1.
        let masses = [1.0, 1.0, 2.0];
        let mu = nbody_reduced_mass(&masses).unwrap();
        assert_relative_eq!(mu, 0.5_f64.sqrt(), max_relative = 1e-14);
        let tree = sequential_tree(3).unwrap();
        let nm = tree.node_masses(&masses).unwrap();
        assert_eq!(nm[0].mu, 0.5);
        assert_eq!(nm[1].mu, 1.0);
        let coords = JacobiCoordinates {
            rho: vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            rho_dot: vec![Vec3::ZERO, Vec3::ZERO],
            r_cm: Vec3::ZERO,
            v_cm: Vec3::ZERO,
        };
        let mw = mass_weight(&coords, &tree, &masses).unwrap();
        assert_relative_eq!(mw.rho_vec[0], (0.5 / mu).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(mw.rho_vec[4], (1.0 / mu).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn kinetic_energy_identity() {
        // sum 1/2 m_i |v_i|^2 = 1/2 mu |vel_vec|^2 + 1/2 M |v_cm|^2.
        let mut rng = StdRng::seed_from_u64(42);
        for n in 2..=6 {
            let sys = random_system(&mut rng, n);
            let tree = sequential_tree(n).unwrap();
            let coords = to_jacobi(&sys, &tree).unwrap();
            let mw = mass_weight(&coords, &tree, sys.masses()).unwrap();
            let internal: f64 = 0.5 * mw.mu * mw.vel_vec.iter().map(|v| v * v).sum::<f64>();
            let cm = 0.5 * sys.total_mass() * sys.cm_velocity().norm_sq();
            let direct = sys.kinetic_energy();
            assert_relative_eq!(internal + cm, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn node_mass_weighted_speed_identity() {
        // sum_nodes mu_node |rho_dot_node|^2 = mu |vel_vec|^2.
        let mut rng = StdRng::seed_from_u64(7);
        let sys = random_system(&mut rng, 5);
        let tree = parse_tree("(((1 2) 3) (4 5))", 5).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        let nm = tree.node_masses(sys.masses()).unwrap();
        let lhs: f64 = nm
            .iter()
            .zip(&coords.rho_dot)
            .map(|(m, v)| m.mu * v.norm_sq())
            .sum();
        let mw = mass_weight(&coords, &tree, sys.masses()).unwrap();
        let rhs = mw.mu * mw.vel_vec.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn infinitely_massive_first_particle() {
        // With m_1 huge, rho_j approaches r_{j+1} - r_1 on the caterpillar tree.
        let mut rng = StdRng::seed_from_u64(3);
        let n = 4;
        let mut sys = random_system(&mut rng, n);
        sys.masses[0] = 1e12;
        let tree = sequential_tree(n).unwrap();
        let coords = to_jacobi(&sys, &tree).unwrap();
        for j in 0..n - 1 {
            let expected = sys.positions()[j + 1] - sys.positions()[0];
            let dev = (coords.rho[j] - expected).norm();
            assert!(dev <= 1e-9 * expected.norm().max(1.0), "node {j}: {dev}");
        }
    }

    #[test]
    fn node_mu_formula_holds() {
        let masses = [0.7, 1.3, 2.9, 0.11];
        let tree = parse_tree("((1 4) (2 3))", 4).unwrap();
        for nm in tree.node_masses(&masses).unwrap() {
            assert_eq!(nm.mu, nm.m_left * nm.m_right / (nm.m_left + nm.m_right));
        }
    }

    #[test]
    fn system_json_round_trip_and_validation() {
        let text = r#"{"masses":[1.0,2.0],"positions":[[0,0,0],[1,0,0]],"velocities":[[0,0,0],[0,1,0]]}"#;
        let sys = ParticleSystem::from_json(text).unwrap();
        assert_eq!(sys.n(), 2);
        let back = ParticleSystem::from_json(&serde_json::to_string(&sys).unwrap()).unwrap();
        assert_eq!(back.positions()[1], Vec3::new(1.0, 0.0, 0.0));

        let bad = r#"{"masses":[1.0,-2.0],"positions":[[0,0,0],[1,0,0]],"velocities":[[0,0,0],[0,1,0]]}"#;
        assert!(ParticleSystem::from_json(bad).is_err());
        let unknown = r#"{"masses":[1.0,1.0],"positions":[[0,0,0],[1,0,0]],"velocities":[[0,0,0],[0,1,0]],"extra":1}"#;
        assert!(ParticleSystem::from_json(unknown).is_err());
    }
}
