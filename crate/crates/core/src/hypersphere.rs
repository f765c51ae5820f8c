//! Hyperspherical trees over the mass-weighted configuration space.
//!
//! A binary tree with `D` leaves defines a hyperradius and `D - 1`
//! hyperangles. Each leaf maps to one Cartesian component; tracing from a leaf
//! to the root multiplies `cos(angle)` for every node entered from the left
//! branch and `sin(angle)` for every node entered from the right, and the
//! product times `rho` is that component's value.
//!
//! Angle ranges follow a three-way rule: full `[0, 2pi)` when neither branch
//! contains further nodes, polar `[0, pi]` when exactly one does, quadrant
//! `[0, pi/2]` when both do.
//!
//! The quadratic form for the unit-vector speed is readable from the tree:
//! `rhohat_dot . rhohat_dot = sum_i rate_i^2 (prod_j sin^2 alpha_ij)
//! (prod_k cos^2 beta_ik)`, where `alpha_ij` are the ancestors angle `i`
//! reaches from the right on its path to the root and `beta_ik` those reached
//! from the left.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::jacobi::{JacobiTree, TreeNode};

// ---------------------------------------------------------------------------
// Tree structure
// ---------------------------------------------------------------------------

/// Range class of a hyperangle, determined by which branches of its node
/// contain further nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeClass {
    /// `[0, 2pi)` — both branches are bare leaves.
    Full,
    /// `[0, pi]` — exactly one branch has further nodes.
    Polar,
    /// `[0, pi/2]` — both branches have further nodes.
    Quadrant,
}

impl fmt::Display for RangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeClass::Full => write!(f, "full [0, 2π)"),
            RangeClass::Polar => write!(f, "polar [0, π]"),
            RangeClass::Quadrant => write!(f, "quadrant [0, π/2]"),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum HNode {
    Leaf { comp: usize, label: String },
    Node { angle: usize, left: Box<HNode>, right: Box<HNode> },
}

/// Name, range class and concrete interval of one hyperangle.
#[derive(Clone, Debug)]
pub struct AngleInfo {
    pub name: String,
    pub range: RangeClass,
    /// Concrete interval produced by angle extraction. This matches the range
    /// class except for the mirrored polar orientation (bare leaf on the sine
    /// side), where extraction lands in `[-pi/2, pi/2]`.
    pub lo: f64,
    pub hi: f64,
}

/// Binary tree over the `D = 3N - 3` mass-weighted components defining the
/// hyperradius and `D - 1` hyperangles. Angles are indexed in canonical
/// post-order (left subtree, right subtree, node).
#[derive(Clone, Debug)]
pub struct HypersphericalTree {
    root: HNode,
    dim: usize,
    angles: Vec<AngleInfo>,
}

/// One spherical fork inside a fork-built tree: the polar/azimuthal angle ids
/// and the (x, y, z) component indices of the virtual body it describes.
#[derive(Clone, Copy, Debug)]
pub struct ForkView {
    /// 1-based fork number; fork 1 is the rightmost in the tree.
    pub number: usize,
    pub theta: usize,
    pub phi: usize,
    /// Component indices in (x, y, z) order.
    pub comps: [usize; 3],
}

/// Per-angle ancestor factors: `alpha` holds angle ids entered from the
/// right on the path to the root, `beta` those entered from the left.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AngleFactor {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
}

impl HypersphericalTree {
    /// Builds a tree from a bare shape whose leaves are 0-based component
    /// indices; they must form a permutation of `0..D` with `D >= 2`.
    /// Angles are auto-named `γ_1..γ_{D-1}` in canonical order.
    pub fn from_shape(shape: &TreeNode) -> Result<Self> {
        let leaves = shape.leaves();
        let dim = leaves.len();
        if dim < 2 {
            return Err(Error::InvalidInput(format!(
                "a hyperspherical tree needs at least 2 leaves, got {dim}"
            )));
        }
        let mut seen = vec![false; dim];
        for &c in &leaves {
            if c >= dim {
                return Err(Error::InvalidInput(format!(
                    "component index {c} out of range 0..{dim}"
                )));
            }
            if seen[c] {
                return Err(Error::InvalidInput(format!("duplicate component index {c}")));
            }
            seen[c] = true;
        }
        let mut next_angle = 0;
        let root = convert_shape(shape, &mut next_angle);
        let mut tree = HypersphericalTree {
            root,
            dim,
            angles: Vec::new(),
        };
        tree.angles = tree.derive_angle_info();
        for (i, info) in tree.angles.iter_mut().enumerate() {
            info.name = format!("γ_{}", i + 1);
        }
        Ok(tree)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn angle_count(&self) -> usize {
        self.dim - 1
    }

    /// Angle metadata in canonical order.
    pub fn angles(&self) -> &[AngleInfo] {
        &self.angles
    }

    pub(crate) fn root(&self) -> &HNode {
        &self.root
    }

    fn derive_angle_info(&self) -> Vec<AngleInfo> {
        let mut infos = vec![
            AngleInfo {
                name: String::new(),
                range: RangeClass::Full,
                lo: 0.0,
                hi: 2.0 * PI,
            };
            self.dim - 1
        ];
        fn walk(node: &HNode, infos: &mut [AngleInfo]) {
            if let HNode::Node { angle, left, right } = node {
                let left_bare = matches!(**left, HNode::Leaf { .. });
                let right_bare = matches!(**right, HNode::Leaf { .. });
                let (range, lo, hi) = match (left_bare, right_bare) {
                    (true, true) => (RangeClass::Full, 0.0, 2.0 * PI),
                    // Bare leaf on the cosine side carries the sign.
                    (true, false) => (RangeClass::Polar, 0.0, PI),
                    // Mirrored polar: the signed bare leaf sits on the sine
                    // side, so extraction lands in [-pi/2, pi/2].
                    (false, true) => (RangeClass::Polar, -0.5 * PI, 0.5 * PI),
                    (false, false) => (RangeClass::Quadrant, 0.0, 0.5 * PI),
                };
                infos[*angle] = AngleInfo {
                    name: String::new(),
                    range,
                    lo,
                    hi,
                };
                walk(left, infos);
                walk(right, infos);
            }
        }
        walk(&self.root, &mut infos);
        infos
    }

    /// The spherical forks of a fork-built tree, numbered right to left.
    /// Errors if any leaf is not part of a fork pattern.
    pub fn forks(&self) -> Result<Vec<ForkView>> {
        let mut forks = Vec::new();
        collect_forks(&self.root, &mut forks)?;
        // Right-to-left numbering: reverse of left-to-right discovery order.
        let count = forks.len();
        for (i, fork) in forks.iter_mut().enumerate() {
            fork.number = count - i;
        }
        forks.sort_by_key(|f| f.number);
        Ok(forks)
    }

    /// S-expression form with leaf labels, e.g. `"((r2z (r2x r2y)) (r1z (r1x r1y)))"`.
    pub fn to_sexpr(&self) -> String {
        fn write(node: &HNode, out: &mut String) {
            match node {
                HNode::Leaf { label, .. } => out.push_str(label),
                HNode::Node { left, right, .. } => {
                    out.push('(');
                    write(left, out);
                    out.push(' ');
                    write(right, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        write(&self.root, &mut out);
        out
    }
}

impl fmt::Display for HypersphericalTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexpr())
    }
}

fn convert_shape(shape: &TreeNode, next_angle: &mut usize) -> HNode {
    match shape {
        TreeNode::Leaf(c) => HNode::Leaf {
            comp: *c,
            label: format!("c{}", c + 1),
        },
        TreeNode::Branch(l, r) => {
            let left = convert_shape(l, next_angle);
            let right = convert_shape(r, next_angle);
            let angle = *next_angle;
            *next_angle += 1;
            HNode::Node {
                angle,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Left-to-right fork discovery. Accepts only nodes that are forks or joins
/// of fork-complete subtrees.
fn collect_forks(node: &HNode, out: &mut Vec<ForkView>) -> Result<()> {
    match node {
        HNode::Leaf { .. } => Err(Error::InvalidInput(
            "tree is not fork-built: bare leaf outside a spherical fork".into(),
        )),
        HNode::Node { angle, left, right } => {
            if let Some(fork) = match_fork(*angle, left, right) {
                out.push(fork);
                return Ok(());
            }
            collect_forks(left, out)?;
            collect_forks(right, out)
        }
    }
}

/// A spherical fork is theta over (z-leaf, phi over (x-leaf, y-leaf)).
fn match_fork(theta: usize, left: &HNode, right: &HNode) -> Option<ForkView> {
    let HNode::Leaf { comp: z, .. } = left else {
        return None;
    };
    let HNode::Node {
        angle: phi,
        left: xl,
        right: yl,
    } = right
    else {
        return None;
    };
    let (HNode::Leaf { comp: x, .. }, HNode::Leaf { comp: y, .. }) = (&**xl, &**yl) else {
        return None;
    };
    Some(ForkView {
        number: 0,
        theta,
        phi: *phi,
        comps: [*x, *y, *z],
    })
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Hyperradius, hyperangles, and (optionally) their time derivatives.
#[derive(Clone, Debug)]
pub struct HyperState {
    pub rho: f64,
    /// One value per angle, canonical order.
    pub angles: Vec<f64>,
    pub rho_dot: Option<f64>,
    pub angle_rates: Option<Vec<f64>>,
    /// Set per angle by [`from_cartesian`] when the combined sub-norm at that
    /// node vanished and the angle was defaulted to 0.
    pub degenerate: Vec<bool>,
}

impl HyperState {
    pub fn new(rho: f64, angles: Vec<f64>) -> Self {
        let n = angles.len();
        HyperState {
            rho,
            angles,
            rho_dot: None,
            angle_rates: None,
            degenerate: vec![false; n],
        }
    }

    pub fn with_rates(mut self, rho_dot: f64, angle_rates: Vec<f64>) -> Self {
        self.rho_dot = Some(rho_dot);
        self.angle_rates = Some(angle_rates);
        self
    }

    /// Checks dimensions, `rho >= 0`, and that each angle lies in its node's
    /// concrete interval (with a small slack for round-off).
    pub fn validate(&self, tree: &HypersphericalTree) -> Result<()> {
        if self.angles.len() != tree.angle_count() {
            return Err(Error::SizeMismatch(format!(
                "tree has {} angles, state has {}",
                tree.angle_count(),
                self.angles.len()
            )));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "hyperradius must be non-negative, got {}",
                self.rho
            )));
        }
        const SLACK: f64 = 1e-12;
        for (value, info) in self.angles.iter().zip(tree.angles()) {
            if !(info.lo - SLACK..=info.hi + SLACK).contains(value) {
                return Err(Error::InvalidInput(format!(
                    "angle {} = {value} outside {} interval [{}, {}]",
                    info.name, info.range, info.lo, info.hi
                )));
            }
        }
        if let Some(rates) = &self.angle_rates {
            if rates.len() != self.angles.len() {
                return Err(Error::SizeMismatch(format!(
                    "{} angles but {} rates",
                    self.angles.len(),
                    rates.len()
                )));
            }
        }
        Ok(())
    }

    fn rates(&self) -> Result<(&[f64], f64)> {
        match (&self.angle_rates, self.rho_dot) {
            (Some(r), Some(rd)) => Ok((r, rd)),
            _ => Err(Error::InvalidInput(
                "state carries no rates; call angle_rates_from_velocity first".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

/// Linear-chain tree extending plane polar / spherical coordinates to `D`
/// dimensions: the deepest angle is full-range, all others polar, and the
/// all-sines path ends at component 0.
pub fn caterpillar_hyper_tree(dim: usize) -> Result<HypersphericalTree> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!(
            "caterpillar tree needs dimension >= 2, got {dim}"
        )));
    }
    let mut shape = TreeNode::branch(TreeNode::Leaf(1), TreeNode::Leaf(0));
    for c in 2..dim {
        shape = TreeNode::branch(TreeNode::Leaf(c), shape);
    }
    HypersphericalTree::from_shape(&shape)
}

/// Builds the fork tree of a Jacobi tree: every virtual body gets a spherical
/// fork (theta polar, phi full) over its three mass-weighted components, and
/// the Jacobi tree's internal structure becomes the joining angles.
///
/// Placement follows the worked examples: with a single virtual child the
/// node's own fork takes the left branch and the child subtree the right;
/// with two virtual children the pair `(left-child, right-child)` takes the
/// left branch and the node's own fork the right.
pub fn fork_tree(jtree: &JacobiTree) -> HypersphericalTree {
    fn fork_shape(node_idx: usize) -> HNode {
        let base = 3 * node_idx;
        let body = node_idx + 1;
        HNode::Node {
            angle: usize::MAX,
            left: Box::new(HNode::Leaf {
                comp: base + 2,
                label: format!("r{body}z"),
            }),
            right: Box::new(HNode::Node {
                angle: usize::MAX,
                left: Box::new(HNode::Leaf {
                    comp: base,
                    label: format!("r{body}x"),
                }),
                right: Box::new(HNode::Leaf {
                    comp: base + 1,
                    label: format!("r{body}y"),
                }),
            }),
        }
    }

    fn join(left: HNode, right: HNode) -> HNode {
        HNode::Node {
            angle: usize::MAX,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    // Returns the built subtree for a Jacobi branch, or None for a leaf.
    fn build(node: &TreeNode, offset: usize) -> Option<HNode> {
        let TreeNode::Branch(l, r) = node else {
            return None;
        };
        let nl = internal_count(l);
        let nr = internal_count(r);
        let own = fork_shape(offset + nl + nr);
        let left_sub = build(l, offset);
        let right_sub = build(r, offset + nl);
        Some(match (left_sub, right_sub) {
            (None, None) => own,
            (Some(sub), None) | (None, Some(sub)) => join(own, sub),
            (Some(ls), Some(rs)) => join(join(ls, rs), own),
        })
    }

    fn internal_count(node: &TreeNode) -> usize {
        match node {
            TreeNode::Leaf(_) => 0,
            TreeNode::Branch(l, r) => 1 + internal_count(l) + internal_count(r),
        }
    }

    let mut root = build(jtree.root(), 0).expect("Jacobi tree has at least one internal node");
    let mut next = 0;
    assign_angles(&mut root, &mut next);

    let mut tree = HypersphericalTree {
        root,
        dim: 3 * jtree.n_nodes(),
        angles: Vec::new(),
    };
    tree.angles = tree.derive_angle_info();
    name_fork_angles(&mut tree);
    tree
}

fn assign_angles(node: &mut HNode, next: &mut usize) {
    if let HNode::Node { angle, left, right } = node {
        assign_angles(left, next);
        assign_angles(right, next);
        *angle = *next;
        *next += 1;
    }
}

/// Names fork angles `θ_i` / `φ_i` by fork number and joining angles
/// `γ_{<left forks>,<right forks>}` by the fork numbers under each branch.
fn name_fork_angles(tree: &mut HypersphericalTree) {
    let Ok(forks) = tree.forks() else {
        return;
    };
    for fork in &forks {
        tree.angles[fork.theta].name = format!("θ_{}", fork.number);
        tree.angles[fork.phi].name = format!("φ_{}", fork.number);
    }
    // Map each theta angle to its fork number for label construction.
    let mut theta_to_number = vec![0usize; tree.angle_count()];
    for fork in &forks {
        theta_to_number[fork.theta] = fork.number;
    }

    fn branch_forks(node: &HNode, theta_to_number: &[usize], out: &mut Vec<usize>) {
        if let HNode::Node { angle, left, right } = node {
            if theta_to_number[*angle] != 0 {
                out.push(theta_to_number[*angle]);
                return;
            }
            branch_forks(left, theta_to_number, out);
            branch_forks(right, theta_to_number, out);
        }
    }

    fn name_joins(node: &HNode, theta_to_number: &[usize], names: &mut [String]) {
        let HNode::Node { angle, left, right } = node else {
            return;
        };
        if theta_to_number[*angle] != 0 {
            return; // fork subtree, already named
        }
        let mut lf = Vec::new();
        let mut rf = Vec::new();
        branch_forks(left, theta_to_number, &mut lf);
        branch_forks(right, theta_to_number, &mut rf);
        let cat = |v: &[usize]| v.iter().map(|n| n.to_string()).collect::<String>();
        names[*angle] = format!("γ_{{{},{}}}", cat(&lf), cat(&rf));
        name_joins(left, theta_to_number, names);
        name_joins(right, theta_to_number, names);
    }

    let mut names: Vec<String> = tree.angles.iter().map(|a| a.name.clone()).collect();
    name_joins(&tree.root, &theta_to_number, &mut names);
    for (info, name) in tree.angles.iter_mut().zip(names) {
        info.name = name;
    }
}

// ---------------------------------------------------------------------------
// Coordinate maps
// ---------------------------------------------------------------------------

/// Evaluates the tree map: component `k` is `rho` times the product of path
/// factors from leaf `k` to the root.
pub fn to_cartesian(tree: &HypersphericalTree, state: &HyperState) -> Result<Vec<f64>> {
    if state.angles.len() != tree.angle_count() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} angles, state has {}",
            tree.angle_count(),
            state.angles.len()
        )));
    }
    let mut out = vec![0.0; tree.dim()];
    fn fill(node: &HNode, factor: f64, angles: &[f64], out: &mut [f64]) {
        match node {
            HNode::Leaf { comp, .. } => out[*comp] = factor,
            HNode::Node { angle, left, right } => {
                let a = angles[*angle];
                fill(left, factor * a.cos(), angles, out);
                fill(right, factor * a.sin(), angles, out);
            }
        }
    }
    fill(&tree.root, state.rho, &state.angles, &mut out);
    Ok(out)
}

/// Recovers `(rho, angles)` from a Cartesian vector. Total: a node whose
/// combined sub-norm vanishes gets angle 0 and a degenerate flag.
///
/// At each node the angle is the two-argument arctangent of (sine side,
/// cosine side), where a branch with further nodes contributes its
/// non-negative sub-norm and a bare leaf contributes its signed component.
pub fn from_cartesian(tree: &HypersphericalTree, v: &[f64]) -> Result<HyperState> {
    if v.len() != tree.dim() {
        return Err(Error::SizeMismatch(format!(
            "tree has dimension {}, vector has {}",
            tree.dim(),
            v.len()
        )));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite component {bad}")));
    }
    let mut angles = vec![0.0; tree.angle_count()];
    let mut degenerate = vec![false; tree.angle_count()];

    // Returns the signed value for a bare leaf, the sub-norm otherwise.
    fn recover(
        node: &HNode,
        v: &[f64],
        angles: &mut [f64],
        degenerate: &mut [bool],
        full: &[bool],
    ) -> f64 {
        match node {
            HNode::Leaf { comp, .. } => v[*comp],
            HNode::Node { angle, left, right } => {
                let c = recover(left, v, angles, degenerate, full);
                let s = recover(right, v, angles, degenerate, full);
                let mag = (c * c + s * s).sqrt();
                if mag == 0.0 {
                    degenerate[*angle] = true;
                } else {
                    let mut a = s.atan2(c);
                    if full[*angle] && a < 0.0 {
                        a += 2.0 * PI;
                    }
                    angles[*angle] = a;
                }
                mag
            }
        }
    }

    let full: Vec<bool> = tree
        .angles()
        .iter()
        .map(|i| i.range == RangeClass::Full)
        .collect();
    let rho = recover(&tree.root, v, &mut angles, &mut degenerate, &full);
    Ok(HyperState {
        rho,
        angles,
        rho_dot: None,
        angle_rates: None,
        degenerate,
    })
}

/// Recovers the radial speed and all angle rates from a Cartesian velocity by
/// differentiating the sub-norms down the tree; O(D), no Jacobian solve.
///
/// Errors when `rho = 0`, or when an angle sits at a degenerate point (zero
/// combined sub-norm) while the velocity within that subspace is nonzero.
pub fn angle_rates_from_velocity(
    tree: &HypersphericalTree,
    state: &HyperState,
    vel: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if vel.len() != tree.dim() {
        return Err(Error::SizeMismatch(format!(
            "tree has dimension {}, velocity has {}",
            tree.dim(),
            vel.len()
        )));
    }
    if state.rho <= 0.0 {
        return Err(Error::UndefinedState(
            "angle rates are undefined at rho = 0".into(),
        ));
    }
    let pos = to_cartesian(tree, state)?;
    let mut rates = vec![0.0; tree.angle_count()];

    // Returns (value, d/dt value): signed for bare leaves, sub-norm otherwise.
    fn walk(
        node: &HNode,
        pos: &[f64],
        vel: &[f64],
        rates: &mut [f64],
        names: &[AngleInfo],
    ) -> Result<(f64, f64)> {
        match node {
            HNode::Leaf { comp, .. } => Ok((pos[*comp], vel[*comp])),
            HNode::Node { angle, left, right } => {
                let (c, cd) = walk(left, pos, vel, rates, names)?;
                let (s, sd) = walk(right, pos, vel, rates, names)?;
                let mag_sq = c * c + s * s;
                if mag_sq == 0.0 {
                    if cd != 0.0 || sd != 0.0 {
                        return Err(Error::DegenerateAngle(format!(
                            "{} has zero sub-norm but nonzero transverse velocity",
                            names[*angle].name
                        )));
                    }
                    return Ok((0.0, 0.0));
                }
                let mag = mag_sq.sqrt();
                rates[*angle] = (sd * c - s * cd) / mag_sq;
                Ok((mag, (c * cd + s * sd) / mag))
            }
        }
    }

    let (_, rho_dot) = walk(&tree.root, &pos, vel, &mut rates, tree.angles())?;
    Ok((rho_dot, rates))
}

/// Convenience: `from_cartesian` plus rate recovery in one step.
pub fn from_cartesian_with_rates(
    tree: &HypersphericalTree,
    pos: &[f64],
    vel: &[f64],
) -> Result<HyperState> {
    let state = from_cartesian(tree, pos)?;
    let (rho_dot, rates) = angle_rates_from_velocity(tree, &state, vel)?;
    Ok(state.with_rates(rho_dot, rates))
}

/// Rebuilds the Cartesian velocity from `(rho_dot, angle rates)` by the chain
/// rule along each leaf path.
pub fn cartesian_velocity(tree: &HypersphericalTree, state: &HyperState) -> Result<Vec<f64>> {
    let (rates, rho_dot) = state.rates()?;
    if state.angles.len() != tree.angle_count() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} angles, state has {}",
            tree.angle_count(),
            state.angles.len()
        )));
    }
    let mut out = vec![0.0; tree.dim()];
    fn fill(
        node: &HNode,
        factor: f64,
        factor_dot: f64,
        angles: &[f64],
        rates: &[f64],
        out: &mut [f64],
    ) {
        match node {
            HNode::Leaf { comp, .. } => out[*comp] = factor_dot,
            HNode::Node { angle, left, right } => {
                let (s, c) = angles[*angle].sin_cos();
                let r = rates[*angle];
                fill(left, factor * c, factor_dot * c - factor * r * s, angles, rates, out);
                fill(right, factor * s, factor_dot * s + factor * r * c, angles, rates, out);
            }
        }
    }
    fill(&tree.root, state.rho, rho_dot, &state.angles, rates, &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tree-readable quadratic form for the unit-vector speed
// ---------------------------------------------------------------------------

/// For each angle, the ancestors reached from the right (`alpha`) and from
/// the left (`beta`) on its path to the root. Indexed by angle id.
pub fn path_factors(tree: &HypersphericalTree) -> Vec<AngleFactor> {
    let mut out = vec![AngleFactor::default(); tree.angle_count()];
    fn walk(node: &HNode, path: &mut Vec<(usize, bool)>, out: &mut [AngleFactor]) {
        if let HNode::Node { angle, left, right } = node {
            let mut factor = AngleFactor::default();
            // Nearest ancestor first, following the path up to the root.
            for &(ancestor, from_right) in path.iter().rev() {
                if from_right {
                    factor.alpha.push(ancestor);
                } else {
                    factor.beta.push(ancestor);
                }
            }
            out[*angle] = factor;
            path.push((*angle, false));
            walk(left, path, out);
            path.pop();
            path.push((*angle, true));
            walk(right, path, out);
            path.pop();
        }
    }
    walk(&tree.root, &mut Vec::new(), &mut out);
    out
}

/// The unit-vector speed squared `rhohat_dot . rhohat_dot`, summed directly
/// from the tree: `sum_i rate_i^2 (prod sin^2 alpha) (prod cos^2 beta)`.
pub fn unit_speed_sq(tree: &HypersphericalTree, state: &HyperState) -> Result<f64> {
    let (rates, _) = state.rates()?;
    if state.angles.len() != tree.angle_count() {
        return Err(Error::SizeMismatch(format!(
            "tree has {} angles, state has {}",
            tree.angle_count(),
            state.angles.len()
        )));
    }
    let factors = path_factors(tree);
    let mut total = 0.0;
    for (rate, factor) in rates.iter().zip(&factors) {
        let mut term = rate * rate;
        for &a in &factor.alpha {
            let s = state.angles[a].sin();
            term *= s * s;
        }
        for &b in &factor.beta {
            let c = state.angles[b].cos();
            term *= c * c;
        }
        total += term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobi::{parse_tree, sequential_tree};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_unit_state(rng: &mut StdRng, tree: &HypersphericalTree) -> Vec<f64> {
        (0..tree.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn caterpillar_range_classes() {
        let t2 = caterpillar_hyper_tree(2).unwrap();
        assert_eq!(t2.angles()[0].range, RangeClass::Full);

        let t3 = caterpillar_hyper_tree(3).unwrap();
        assert_eq!(t3.angles()[0].range, RangeClass::Full);
        assert_eq!(t3.angles()[1].range, RangeClass::Polar);

        let t6 = caterpillar_hyper_tree(6).unwrap();
        assert_eq!(t6.angles()[0].range, RangeClass::Full);
        for k in 1..5 {
            assert_eq!(t6.angles()[k].range, RangeClass::Polar, "γ_{}", k + 1);
        }
        assert!(caterpillar_hyper_tree(1).is_err());
    }

    #[test]
    fn caterpillar_matches_column_vector() {
        // D=6 caterpillar against the closed-form column: component 0 is the
        // all-sines product, component 5 is rho cos(γ5).
        let tree = caterpillar_hyper_tree(6).unwrap();
        let g = [0.3, 1.1, 0.7, 2.0, 2.5];
        let rho = 1.7;
        let v = to_cartesian(&tree, &HyperState::new(rho, g.to_vec())).unwrap();
        let sins: Vec<f64> = g.iter().map(|a| a.sin()).collect();
        assert_relative_eq!(v[0], rho * sins.iter().product::<f64>(), max_relative = 1e-14);
        assert_relative_eq!(
            v[1],
            rho * g[0].cos() * sins[1..].iter().product::<f64>(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            v[2],
            rho * g[1].cos() * sins[2..].iter().product::<f64>(),
            max_relative = 1e-14
        );
        assert_relative_eq!(v[5], rho * g[4].cos(), max_relative = 1e-14);
    }

    #[test]
    fn caterpillar_all_right_angles() {
        let tree = caterpillar_hyper_tree(6).unwrap();
        let state = HyperState::new(2.0, vec![std::f64::consts::FRAC_PI_2; 5]);
        let v = to_cartesian(&tree, &state).unwrap();
        assert_relative_eq!(v[0], 2.0, max_relative = 1e-14);
        for &c in &v[1..] {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_rho_maps_to_zero_vector() {
        let tree = caterpillar_hyper_tree(4).unwrap();
        let v = to_cartesian(&tree, &HyperState::new(0.0, vec![0.4, 0.5, 0.6])).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fork_tree_two_body_is_spherical() {
        let jt = sequential_tree(2).unwrap();
        let ft = fork_tree(&jt);
        assert_eq!(ft.dim(), 3);
        assert_eq!(ft.angle_count(), 2);
        assert_eq!(ft.angles()[0].name, "φ_1");
        assert_eq!(ft.angles()[0].range, RangeClass::Full);
        assert_eq!(ft.angles()[1].name, "θ_1");
        assert_eq!(ft.angles()[1].range, RangeClass::Polar);
        assert_eq!(ft.to_sexpr(), "(r1z (r1x r1y))");

        // z = rho cos θ, x = rho sin θ cos φ, y = rho sin θ sin φ.
        let (theta, phi, rho) = (1.1, 2.3, 0.7);
        let v = to_cartesian(&ft, &HyperState::new(rho, vec![phi, theta])).unwrap();
        assert_relative_eq!(v[2], rho * theta.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[0], rho * theta.sin() * phi.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[1], rho * theta.sin() * phi.sin(), max_relative = 1e-14);
    }

    #[test]
    fn fork_tree_three_body_matches_worked_example() {
        // N=3 caterpillar: root joins fork 2 (left) with fork 1 (right);
        // component order follows the block layout, body 1 = nodes[0].
        let jt = sequential_tree(3).unwrap();
        let ft = fork_tree(&jt);
        assert_eq!(ft.dim(), 6);
        let names: Vec<&str> = ft.angles().iter().map(|a| a.name.as_str()).collect();
        assert!(names.contains(&"γ_{2,1}"), "{names:?}");
        assert!(names.contains(&"θ_1") && names.contains(&"φ_1"));
        assert!(names.contains(&"θ_2") && names.contains(&"φ_2"));
        let root_angle = ft.angles().len() - 1; // post-order: root named last
        assert_eq!(ft.angles()[root_angle].name, "γ_{2,1}");
        assert_eq!(ft.angles()[root_angle].range, RangeClass::Quadrant);

        // Against the worked six-component column: block 1 components carry
        // sin γ, block 2 components carry cos γ.
        let (gamma, th1, ph1, th2, ph2) = (0.6, 1.2, 2.8, 0.9, 4.0);
        let forks = ft.forks().unwrap();
        let f1 = forks.iter().find(|f| f.number == 1).unwrap();
        let f2 = forks.iter().find(|f| f.number == 2).unwrap();
        assert_eq!(f1.comps, [0, 1, 2]);
        assert_eq!(f2.comps, [3, 4, 5]);
        let mut angles = vec![0.0; 5];
        angles[root_angle] = gamma;
        angles[f1.theta] = th1;
        angles[f1.phi] = ph1;
        angles[f2.theta] = th2;
        angles[f2.phi] = ph2;
        let rho = 1.3;
        let v = to_cartesian(&ft, &HyperState::new(rho, angles)).unwrap();
        let sg = gamma.sin();
        let cg = gamma.cos();
        assert_relative_eq!(v[2], rho * sg * th1.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[0], rho * sg * th1.sin() * ph1.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[1], rho * sg * th1.sin() * ph1.sin(), max_relative = 1e-14);
        assert_relative_eq!(v[5], rho * cg * th2.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[3], rho * cg * th2.sin() * ph2.cos(), max_relative = 1e-14);
        assert_relative_eq!(v[4], rho * cg * th2.sin() * ph2.sin(), max_relative = 1e-14);
    }

    #[test]
    fn fork_tree_four_body_balanced_labels() {
        let jt = parse_tree("((1 2) (3 4))", 4).unwrap();
        let ft = fork_tree(&jt);
        assert_eq!(ft.dim(), 9);
        let names: Vec<&str> = ft.angles().iter().map(|a| a.name.as_str()).collect();
        assert!(names.contains(&"γ_{32,1}"), "{names:?}");
        assert!(names.contains(&"γ_{3,2}"), "{names:?}");
        for i in 1..=3 {
            assert!(names.iter().any(|n| *n == format!("θ_{i}")));
            assert!(names.iter().any(|n| *n == format!("φ_{i}")));
        }
        // Both joining angles are quadrant-range.
        for info in ft.angles() {
            if info.name.starts_with('γ') {
                assert_eq!(info.range, RangeClass::Quadrant, "{}", info.name);
            }
        }
        // Fork 1 is the root's own fork, i.e. the last Jacobi node's block.
        let forks = ft.forks().unwrap();
        let f1 = forks.iter().find(|f| f.number == 1).unwrap();
        assert_eq!(f1.comps, [6, 7, 8]);
    }

    #[test]
    fn range_rule_on_generated_trees() {
        fn check(tree: &HypersphericalTree) {
            fn walk(node: &HNode, infos: &[AngleInfo]) {
                if let HNode::Node { angle, left, right } = node {
                    let ln = !matches!(**left, HNode::Leaf { .. });
                    let rn = !matches!(**right, HNode::Leaf { .. });
                    let expected = match (ln, rn) {
                        (false, false) => RangeClass::Full,
                        (true, true) => RangeClass::Quadrant,
                        _ => RangeClass::Polar,
                    };
                    assert_eq!(infos[*angle].range, expected);
                    walk(left, infos);
                    walk(right, infos);
                }
            }
            walk(tree.root(), tree.angles());
        }
        for d in 2..10 {
            check(&caterpillar_hyper_tree(d).unwrap());
        }
        for n in 2..6 {
            check(&fork_tree(&sequential_tree(n).unwrap()));
        }
        check(&fork_tree(&parse_tree("((1 2) (3 4))", 4).unwrap()));
    }

    #[test]
    fn from_cartesian_round_trip() {
        let mut rng = StdRng::seed_from_u64(5);
        let trees = vec![
            caterpillar_hyper_tree(6).unwrap(),
            fork_tree(&sequential_tree(3).unwrap()),
            fork_tree(&parse_tree("((1 2) (3 4))", 4).unwrap()),
        ];
        for tree in &trees {
            for _ in 0..50 {
                let v = random_unit_state(&mut rng, tree);
                let state = from_cartesian(tree, &v).unwrap();
                state.validate(tree).unwrap();
                let back = to_cartesian(tree, &state).unwrap();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for (a, b) in v.iter().zip(&back) {
                    assert!((a - b).abs() <= 1e-12 * norm, "{a} vs {b}");
                }
                assert_relative_eq!(state.rho, norm, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn from_cartesian_axis_and_zero() {
        let tree = caterpillar_hyper_tree(4).unwrap();
        let mut v = vec![0.0; 4];
        v[3] = 2.0; // the root's left leaf: all angles on its path are 0
        let state = from_cartesian(&tree, &v).unwrap();
        assert_eq!(state.rho, 2.0);
        assert_eq!(state.angles[2], 0.0);
        // The sub-norm below the top node vanished: deeper angles flagged.
        assert!(state.degenerate[0] && state.degenerate[1]);

        let zero = from_cartesian(&tree, &[0.0; 4]).unwrap();
        assert_eq!(zero.rho, 0.0);
        assert!(zero.angles.iter().all(|&a| a == 0.0));
        assert!(zero.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn rates_parallel_velocity() {
        let tree = caterpillar_hyper_tree(5).unwrap();
        let v = vec![0.3, -1.0, 0.5, 2.0, -0.2];
        let state = from_cartesian(&tree, &v).unwrap();
        let speed = 1.7;
        let norm = state.rho;
        let vel: Vec<f64> = v.iter().map(|x| x / norm * speed).collect();
        let (rho_dot, rates) = angle_rates_from_velocity(&tree, &state, &vel).unwrap();
        assert_relative_eq!(rho_dot, speed, max_relative = 1e-12);
        for r in rates {
            assert_abs_diff_eq!(r, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rates_match_planar_kinematics() {
        // D=2 oracle: angle = atan2(comp0, comp1), rate = (v0 c1 - x0 v1)/rho^2.
        let tree = caterpillar_hyper_tree(2).unwrap();
        let (x, y) = (0.8, -0.6);
        let (vx, vy) = (0.2, 0.9);
        let state = from_cartesian(&tree, &[x, y]).unwrap();
        let (rho_dot, rates) = angle_rates_from_velocity(&tree, &state, &[vx, vy]).unwrap();
        let r_sq = x * x + y * y;
        assert_relative_eq!(rho_dot, (x * vx + y * vy) / r_sq.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(rates[0], (vx * y - x * vy) / r_sq, max_relative = 1e-13);
    }

    #[test]
    fn rates_error_cases() {
        let tree = caterpillar_hyper_tree(3).unwrap();
        let zero_state = from_cartesian(&tree, &[0.0; 3]).unwrap();
        assert!(matches!(
            angle_rates_from_velocity(&tree, &zero_state, &[1.0, 0.0, 0.0]),
            Err(Error::UndefinedState(_))
        ));

        // Position on the polar axis, velocity transverse inside the
        // degenerate subspace: the deepest angle is undefined.
        let mut v = vec![0.0; 3];
        v[2] = 1.0;
        let state = from_cartesian(&tree, &v).unwrap();
        let err = angle_rates_from_velocity(&tree, &state, &[1.0, 0.0, 0.0]);
        assert!(matches!(err, Err(Error::DegenerateAngle(_))), "{err:?}");
    }

    #[test]
    fn rates_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(9);
        let tree = fork_tree(&sequential_tree(3).unwrap());
        for _ in 0..20 {
            let pos = random_unit_state(&mut rng, &tree);
            let vel = random_unit_state(&mut rng, &tree);
            let state = from_cartesian(&tree, &pos).unwrap();
            if state.degenerate.iter().any(|&d| d) {
                continue;
            }
            let (rho_dot, rates) = angle_rates_from_velocity(&tree, &state, &vel).unwrap();
            let h = 1e-6 * state.rho.max(1.0);
            let plus: Vec<f64> = pos.iter().zip(&vel).map(|(p, v)| p + h * v).collect();
            let minus: Vec<f64> = pos.iter().zip(&vel).map(|(p, v)| p - h * v).collect();
            let sp = from_cartesian(&tree, &plus).unwrap();
            let sm = from_cartesian(&tree, &minus).unwrap();
            assert_relative_eq!(rho_dot, (sp.rho - sm.rho) / (2.0 * h), max_relative = 1e-6);
            for ((rate, ap), am) in rates.iter().zip(&sp.angles).zip(&sm.angles) {
                let fd = (ap - am) / (2.0 * h);
                assert_abs_diff_eq!(*rate, fd, epsilon = 1e-6 * (1.0 + rate.abs()));
            }
        }
    }

    #[test]
    fn factors_for_known_trees() {
        // Single node: empty factor lists.
        let t2 = caterpillar_hyper_tree(2).unwrap();
        let f = path_factors(&t2);
        assert!(f[0].alpha.is_empty() && f[0].beta.is_empty());

        // D=6 caterpillar: the deepest angle reaches all others from the right.
        let t6 = caterpillar_hyper_tree(6).unwrap();
        let f = path_factors(&t6);
        assert_eq!(f[0].alpha, vec![1, 2, 3, 4]);
        assert!(f[0].beta.is_empty());

        // N=3 fork tree: θ_1 enters the root from the right, θ_2 from the left.
        let ft = fork_tree(&sequential_tree(3).unwrap());
        let forks = ft.forks().unwrap();
        let factors = path_factors(&ft);
        let root = ft.angle_count() - 1;
        let f1 = forks.iter().find(|f| f.number == 1).unwrap();
        let f2 = forks.iter().find(|f| f.number == 2).unwrap();
        assert_eq!(factors[f1.theta].alpha, vec![root]);
        assert!(factors[f1.theta].beta.is_empty());
        assert_eq!(factors[f2.theta].beta, vec![root]);
        assert!(factors[f2.theta].alpha.is_empty());
    }

    #[test]
    fn unit_speed_single_angle_and_zero_rates() {
        let tree = caterpillar_hyper_tree(2).unwrap();
        let state = HyperState::new(1.0, vec![0.7]).with_rates(0.0, vec![0.31]);
        assert_relative_eq!(
            unit_speed_sq(&tree, &state).unwrap(),
            0.31 * 0.31,
            max_relative = 1e-15
        );

        let still = HyperState::new(1.0, vec![0.7]).with_rates(0.5, vec![0.0]);
        assert_eq!(unit_speed_sq(&tree, &still).unwrap(), 0.0);
    }

    #[test]
    fn unit_speed_matches_finite_differences() {
        // Central-difference oracle on rhohat(t) along a straight line.
        let mut rng = StdRng::seed_from_u64(21);
        let trees = vec![
            caterpillar_hyper_tree(6).unwrap(),
            fork_tree(&sequential_tree(3).unwrap()),
        ];
        for tree in &trees {
            for _ in 0..20 {
                let pos = random_unit_state(&mut rng, tree);
                let vel = random_unit_state(&mut rng, tree);
                let state = match from_cartesian_with_rates(tree, &pos, &vel) {
                    Ok(s) => s,
                    Err(_) => continue,
                };
                let value = unit_speed_sq(tree, &state).unwrap();

                let rho = state.rho;
                let h = 1e-6 * rho.max(1.0);
                let unit = |t: f64| -> Vec<f64> {
                    let p: Vec<f64> = pos.iter().zip(&vel).map(|(p, v)| p + t * v).collect();
                    let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    p.iter().map(|x| x / n).collect()
                };
                let up = unit(h);
                let um = unit(-h);
                let fd_sq: f64 = up
                    .iter()
                    .zip(&um)
                    .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
                    .sum();
                assert_relative_eq!(value, fd_sq, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn velocity_decomposition_and_tree_independence() {
        let mut rng = StdRng::seed_from_u64(33);
        let cat = caterpillar_hyper_tree(6).unwrap();
        let fork = fork_tree(&sequential_tree(3).unwrap());
        for _ in 0..30 {
            let pos = random_unit_state(&mut rng, &cat);
            let vel = random_unit_state(&mut rng, &cat);
            let s1 = match from_cartesian_with_rates(&cat, &pos, &vel) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let s2 = from_cartesian_with_rates(&fork, &pos, &vel).unwrap();
            let t1 = unit_speed_sq(&cat, &s1).unwrap();
            let t2 = unit_speed_sq(&fork, &s2).unwrap();
            assert_relative_eq!(t1, t2, max_relative = 1e-10);

            let speed_sq: f64 = vel.iter().map(|v| v * v).sum();
            let decomposed = s1.rho_dot.unwrap().powi(2) + s1.rho * s1.rho * t1;
            assert_relative_eq!(speed_sq, decomposed, max_relative = 1e-10);
        }
    }

    #[test]
    fn angles_round_trip_through_cartesian() {
        // from_cartesian(to_cartesian(state)) recovers the angles for states
        // drawn inside the declared ranges.
        let mut rng = StdRng::seed_from_u64(77);
        let trees = vec![
            caterpillar_hyper_tree(5).unwrap(),
            fork_tree(&parse_tree("((1 2) (3 4))", 4).unwrap()),
        ];
        for tree in &trees {
            for _ in 0..30 {
                let angles: Vec<f64> = tree
                    .angles()
                    .iter()
                    .map(|info| rng.random_range(info.lo + 0.05..info.hi - 0.05))
                    .collect();
                let state = HyperState::new(rng.random_range(0.5..3.0), angles);
                let v = to_cartesian(tree, &state).unwrap();
                let back = from_cartesian(tree, &v).unwrap();
                assert_relative_eq!(back.rho, state.rho, max_relative = 1e-12);
                for (a, b) in state.angles.iter().zip(&back.angles) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn cartesian_velocity_inverts_rates() {
        let mut rng = StdRng::seed_from_u64(55);
        let tree = fork_tree(&parse_tree("((1 2) (3 4))", 4).unwrap());
        for _ in 0..20 {
            let pos = random_unit_state(&mut rng, &tree);
            let vel = random_unit_state(&mut rng, &tree);
            let state = match from_cartesian_with_rates(&tree, &pos, &vel) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let rebuilt = cartesian_velocity(&tree, &state).unwrap();
            let scale = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in vel.iter().zip(&rebuilt) {
                assert!((a - b).abs() <= 1e-10 * scale.max(1.0), "{a} vs {b}");
            }
        }
    }
}
