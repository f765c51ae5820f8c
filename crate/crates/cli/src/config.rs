//! JSON run configurations, schema-validated on load (unknown keys rejected).

use hypertree_core::dynamics::RadialForm;
use hypertree_core::jacobi::ParticleSystem;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub tree: String,
    pub masses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub system: ParticleSystem,
    pub tree: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub system: ParticleSystem,
    pub tree: String,
    /// Pairwise interaction applied to every particle pair.
    pub potential: RadialForm,
    pub integrator: IntegratorConfig,
}

/// A single impact parameter or a list.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum BSpec {
    One(f64),
    Many(Vec<f64>),
}

impl BSpec {
    pub fn to_list(&self) -> Vec<f64> {
        match self {
            BSpec::One(b) => vec![*b],
            BSpec::Many(bs) => bs.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScatterPotentialConfig {
    Hyperradial {
        form: RadialForm,
    },
    Averaged {
        pair: RadialForm,
        tree: String,
        masses: Vec<f64>,
        n_samples: usize,
    },
}

fn default_rel_tol() -> f64 {
    1e-9
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterConfig {
    pub mu: f64,
    pub energy: f64,
    pub b: BSpec,
    pub potential: ScatterPotentialConfig,
    pub rho_max: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_true")]
    pub include_tail: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize, Deserialize, Clone, Copy, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl RhoGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let n = self.count as f64 - 1.0;
        (0..self.count)
            .map(|i| match self.spacing {
                Spacing::Linear => self.min + (self.max - self.min) * i as f64 / n,
                Spacing::Log => self.min * (self.max / self.min).powf(i as f64 / n),
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VeffConfig {
    pub masses: Vec<f64>,
    pub tree: String,
    /// Pairwise interaction to average over the hypersphere.
    pub potential: RadialForm,
    pub rho: RhoGrid,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}
