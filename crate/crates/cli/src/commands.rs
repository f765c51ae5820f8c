//! Subcommand implementations: parse config, dispatch to the library, emit a
//! human report on stdout and the machine artifact to `--out` (or stdout).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use hypertree_core::dynamics::{
    effective_potential_profile, integrate_nbody, scatter_sweep, ScatterPotential, ScatterSpec,
    Trajectory,
};
use hypertree_core::grandang::{decompose, lambda_sq, lambda_tensor, lambda_sq_hyperspherical};
use hypertree_core::hypersphere::{fork_tree, from_cartesian_with_rates, path_factors, unit_speed_sq};
use hypertree_core::jacobi::{mass_weight, nbody_reduced_mass, parse_tree, to_jacobi};
use hypertree_core::Error as CoreError;

use crate::config::*;
use crate::Common;

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidInput(_)
            | CoreError::Parse { .. }
            | CoreError::SizeMismatch(_)
            | CoreError::InvalidSpec(_) => 2,
            CoreError::UndefinedState(_)
            | CoreError::DegenerateAngle(_)
            | CoreError::DegenerateConfiguration(_)
            | CoreError::SingularBarrier => 3,
            CoreError::IntegrationHalted { .. } => 4,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

fn g17(x: f64) -> String {
    format!("{:.16e}", x)
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

fn echo_config<T: Serialize>(config: &T) {
    let json = serde_json::to_string(config).expect("config serializes");
    println!("config: {json}");
}

fn emit(common: &Common, artifact: &str) -> CliResult {
    match &common.out {
        Some(path) => fs::write(path, artifact)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{artifact}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------

pub fn cmd_tree(common: &Common) -> CliResult {
    let config: TreeConfig = load_config(&common.config)?;
    echo_config(&config);

    let tree = parse_tree(&config.tree, config.masses.len())?;
    let node_masses = tree.node_masses(&config.masses)?;
    let mu = nbody_reduced_mass(&config.masses)?;

    println!("jacobi tree: {tree}");
    println!("particles: {}", tree.n_particles());
    println!("nbody reduced mass: μ = {mu}");
    println!("nodes (canonical order):");
    for (span, nm) in tree.nodes().iter().zip(&node_masses) {
        println!(
            "  μ_{{{}}} = {}  (M_L = {}, M_R = {})",
            span.label(),
            nm.mu,
            nm.m_left,
            nm.m_right
        );
    }

    let ftree = fork_tree(&tree);
    println!("hyperspherical tree: {ftree}");
    println!("angles (canonical order):");
    for info in ftree.angles() {
        println!("  {}  {}", info.name, info.range);
    }
    println!("path factors (scaling toward the root):");
    let factors = path_factors(&ftree);
    for (info, factor) in ftree.angles().iter().zip(&factors) {
        let names = |ids: &[usize]| {
            ids.iter()
                .map(|&i| ftree.angles()[i].name.clone())
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!(
            "  {}: sin² of {{{}}}, cos² of {{{}}}",
            info.name,
            names(&factor.alpha),
            names(&factor.beta)
        );
    }
    if common.verbose > 0 {
        println!("spherical forks (virtual body -> components):");
        for fork in ftree.forks().map_err(CliError::from)? {
            println!(
                "  fork {} -> components [{}, {}, {}]",
                fork.number, fork.comps[0], fork.comps[1], fork.comps[2]
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn cmd_decompose(common: &Common) -> CliResult {
    let config: DecomposeConfig = load_config(&common.config)?;
    echo_config(&config);

    let tree = parse_tree(&config.tree, config.system.n())?;
    let coords = to_jacobi(&config.system, &tree)?;
    let mw = mass_weight(&coords, &tree, config.system.masses())?;
    let momentum: Vec<f64> = mw.vel_vec.iter().map(|v| mw.mu * v).collect();
    let tensor_total = lambda_sq(&lambda_tensor(&mw.rho_vec, &momentum)?);

    let ftree = fork_tree(&tree);
    let state = from_cartesian_with_rates(&ftree, &mw.rho_vec, &mw.vel_vec)?;
    let hyper_total =
        lambda_sq_hyperspherical(mw.mu, state.rho, unit_speed_sq(&ftree, &state)?);
    let decomp = decompose(&ftree, &state, mw.mu)?;

    if common.verbose > 0 {
        println!("mu = {}", g17(mw.mu));
        println!("rho = {}", g17(state.rho));
    }

    println!("Λ² (tensor):         {}", g17(tensor_total));
    println!("Λ² (hyperspherical): {}", g17(hyper_total));
    println!("contributions:");
    for c in &decomp.contributions {
        let scale = match c.scale {
            Some(s) => g17(s),
            None => "singular (vanishing term)".into(),
        };
        println!(
            "  {:<4} {:<10} L² = {}  scale = {}  product = {}",
            c.kind.as_str(),
            c.label,
            g17(c.l_sq),
            scale,
            g17(c.product)
        );
    }
    println!("decomposition total: {}", g17(decomp.total));

    emit(common, &decomp.to_json(tensor_total))?;

    let dev = rel_dev(decomp.total, tensor_total);
    if dev > 1e-8 {
        return Err(CliError {
            code: 1,
            message: format!("decomposition total deviates from tensor value by {dev:.3e}"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn drift(series: impl Iterator<Item = f64> + Clone) -> f64 {
    let first = series.clone().next().unwrap_or(0.0);
    let last = series.clone().last().unwrap_or(0.0);
    rel_dev(first, last)
}

pub fn cmd_simulate(common: &Common) -> CliResult {
    let config: SimulateConfig = load_config(&common.config)?;
    echo_config(&config);

    let tree = parse_tree(&config.tree, config.system.n())?;
    let trajectory: Trajectory = integrate_nbody(
        &config.system,
        &config.potential,
        &tree,
        config.integrator.dt,
        config.integrator.steps,
    )?;

    let d = &trajectory.diagnostics;
    println!("steps: {}", trajectory.len() - 1);
    println!("energy drift (relative):    {:.3e}", drift(d.iter().map(|s| s.e_total)));
    println!(
        "momentum drift (absolute):  {:.3e}",
        d.iter().map(|s| s.p_cm).fold(0.0, f64::max) - d[0].p_cm
    );
    println!(
        "angular momentum drift:     {:.3e}",
        drift(d.iter().map(|s| s.l_tot.norm()))
    );
    println!("Λ² drift (relative):        {:.3e}", drift(d.iter().map(|s| s.lambda_sq)));
    if common.verbose > 0 {
        let first = &d[0];
        let last = d.last().unwrap();
        println!("initial: rho = {}, Λ² = {}", g17(first.rho), g17(first.lambda_sq));
        println!("final:   rho = {}, Λ² = {}", g17(last.rho), g17(last.lambda_sq));
    }

    emit(common, &trajectory.to_csv_string())
}

// ---------------------------------------------------------------------------

pub fn cmd_scatter(common: &Common) -> CliResult {
    let mut config: ScatterConfig = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    echo_config(&config);

    let potential = match &config.potential {
        ScatterPotentialConfig::Hyperradial { form } => ScatterPotential::Hyperradial(form.clone()),
        ScatterPotentialConfig::Averaged {
            pair,
            tree,
            masses,
            n_samples,
        } => ScatterPotential::Averaged {
            pair: pair.clone(),
            tree: parse_tree(tree, masses.len())?,
            masses: masses.clone(),
            n_samples: *n_samples,
            seed: config.seed,
        },
    };
    let spec = ScatterSpec {
        mu: config.mu,
        energy: config.energy,
        b: 0.0,
        potential,
        rho_max: config.rho_max,
        rel_tol: config.rel_tol,
        include_tail: config.include_tail,
    };
    let b_list = config.b.to_list();
    let results = scatter_sweep(&spec, &b_list);

    let mut json = String::from("{\"results\":[");
    for (i, result) in results.iter().enumerate() {
        let r = result.as_ref().map_err(|e| CliError::from(clone_core_error(e)))?;
        if i > 0 {
            json.push(',');
        }
        json.push_str(&r.to_json());
        let chi = r.chi.map_or("-".to_string(), |c| c.to_string());
        println!(
            "b = {}: rho_min = {}, Phi = {}, chi = {}, flag = {}",
            r.b, r.rho_min, r.phi, chi,
            r.flag.as_str()
        );
        if common.verbose > 0 {
            println!(
                "  integrand evaluations = {}, tail bound = {}",
                r.evaluations, r.tail_bound
            );
        }
    }
    json.push_str("]}");
    emit(common, &json)
}

/// Core errors are not Clone (one variant owns a trajectory); rebuild the
/// cheap variants for reporting.
fn clone_core_error(e: &CoreError) -> CoreError {
    CoreError::InvalidSpec(e.to_string())
}

// ---------------------------------------------------------------------------

pub fn cmd_veff(common: &Common) -> CliResult {
    let mut config: VeffConfig = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    echo_config(&config);

    let tree = parse_tree(&config.tree, config.masses.len())?;
    let rhos = config.rho.points();
    let estimates = effective_potential_profile(
        &config.potential,
        &tree,
        &config.masses,
        &rhos,
        config.n_samples,
        config.seed,
    );

    let mut csv = String::from("rho,V_eff,stderr\n");
    for (rho, estimate) in rhos.iter().zip(&estimates) {
        match estimate {
            Ok(est) => {
                if common.verbose > 0 {
                    println!("rho = {rho}: {} samples, {} rejected", est.samples, est.rejected);
                }
                csv.push_str(&format!("{},{},{}\n", g17(*rho), g17(est.mean), g17(est.std_error)));
            }
            Err(e) if e.to_string().contains("rejection cap") => {
                eprintln!("warning: rho = {rho}: {e}");
                csv.push_str(&format!("{},NaN,NaN\n", g17(*rho)));
            }
            Err(e) => return Err(CliError::from(clone_core_error(e))),
        }
    }
    println!("grid points: {}", rhos.len());
    emit(common, &csv)
}
