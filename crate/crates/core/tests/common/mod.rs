//! Helpers shared by the integration test suites.
#![allow(dead_code)] // each test binary uses a subset

use hypertree_core::jacobi::{parse_tree, JacobiTree, ParticleSystem};
use hypertree_core::vec3::Vec3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn rel_dev(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Stacked relative deviation |a - b| / |a| over whole vectors.
pub fn vec_rel_dev(reference: &[f64], candidate: &[f64]) -> f64 {
    let diff_sq: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let ref_sq: f64 = reference.iter().map(|a| a * a).sum();
    if ref_sq == 0.0 {
        diff_sq.sqrt()
    } else {
        (diff_sq / ref_sq).sqrt()
    }
}

pub fn random_vec3(rng: &mut ChaCha12Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    )
}

pub fn random_system(rng: &mut ChaCha12Rng, n: usize) -> ParticleSystem {
    let masses = (0..n).map(|_| rng.random_range(0.2..4.0)).collect();
    let positions = (0..n).map(|_| random_vec3(rng)).collect();
    let velocities = (0..n).map(|_| random_vec3(rng)).collect();
    ParticleSystem::new(masses, positions, velocities).unwrap()
}

fn balanced_sexpr(lo: usize, hi: usize) -> String {
    if lo == hi {
        return lo.to_string();
    }
    let mid = lo + (hi - lo).div_ceil(2);
    format!("({} {})", balanced_sexpr(lo, mid - 1), balanced_sexpr(mid, hi))
}

/// Balanced Jacobi tree over 1..=n by recursive halving.
pub fn balanced_tree(n: usize) -> JacobiTree {
    parse_tree(&balanced_sexpr(1, n), n).unwrap()
}

/// Random binary shape over a random permutation of 1..=n.
pub fn random_tree(rng: &mut ChaCha12Rng, n: usize) -> JacobiTree {
    fn build(leaves: &[usize], rng: &mut ChaCha12Rng) -> String {
        if leaves.len() == 1 {
            return leaves[0].to_string();
        }
        let split = rng.random_range(1..leaves.len());
        format!(
            "({} {})",
            build(&leaves[..split], rng),
            build(&leaves[split..], rng)
        )
    }
    let mut perm: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let text = build(&perm, rng);
    parse_tree(&text, n).unwrap()
}
