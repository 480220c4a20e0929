//! Browser bindings for three interactive views: collapse-exponent curves,
//! stochastic collapse paths on two sites, and cat-state amplification.
//!
//! The computations are plain functions returning serializable structs so
//! they can be tested natively; the exported wrappers hand JSON to the page.

use collapse_core::csl::{
    amplification_rate, cat_decoherence_rate, run_trajectory, CatStateSpec, CslDynamics, Unraveling,
    WhiteNoiseRealization,
};
use collapse_core::hilbert::{build_point_mass_density, ConfigurationBasis, CslParams, LatticeGrid, QuantumState};
use collapse_core::propagators::{omega_table, PropagatorSpec};
use collapse_core::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest request the page may make; keeps the tab responsive.
const MAX_POINTS: usize = 400;
const MAX_PATHS: usize = 64;
const MAX_STEPS: usize = 20_000;
const MAX_PARTICLES: usize = 12;

fn limit(name: &'static str, value: usize, max: usize) -> Result<()> {
    if value == 0 || value > max {
        return Err(collapse_core::Error::invalid(name, format!("must be in 1..={max}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaCurve {
    pub r: Vec<f64>,
    pub omega_infinity: Vec<f64>,
    pub omega_t: Vec<f64>,
}

/// Ω_∞ and the finite-horizon Ω_T on a log grid of separations.
pub fn omega_curve(
    boson_mass: f64,
    cutoff: f64,
    coupling: f64,
    r_min: f64,
    r_max: f64,
    points: usize,
    horizon: f64,
) -> Result<OmegaCurve> {
    limit("points", points, MAX_POINTS)?;
    let spec = PropagatorSpec::new(boson_mass, cutoff, coupling)?;
    let rows = omega_table(&spec, r_min, r_max, points, horizon)?;
    Ok(OmegaCurve {
        r: rows.iter().map(|x| x.r).collect(),
        omega_infinity: rows.iter().map(|x| x.omega_infinity).collect(),
        omega_t: rows.iter().map(|x| x.omega_t).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapsePaths {
    pub t: Vec<f64>,
    /// Probability of the first site along each normalized trajectory.
    pub paths: Vec<Vec<f64>>,
}

/// Normalized CSL trajectories of one particle on two distant sites.
pub fn collapse_paths(gamma: f64, p_first: f64, dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<CollapsePaths> {
    if !(0.0..=1.0).contains(&p_first) {
        return Err(collapse_core::Error::invalid("p_first", "must lie in [0, 1]"));
    }
    if !(dt > 0.0 && horizon > 0.0) {
        return Err(collapse_core::Error::invalid("dt", "dt and horizon must be positive"));
    }
    let steps = (horizon / dt).round() as usize;
    limit("steps", steps, MAX_STEPS)?;
    limit("n_paths", n_paths, MAX_PATHS)?;
    let grid = LatticeGrid::line(2, 1.0, dt, steps)?;
    let basis = ConfigurationBasis::single_particle(&[0, 1])?;
    let ops = build_point_mass_density(&grid, &[1.0], &basis)?;
    let dynamics = CslDynamics::new(&grid, ops, None, gamma)?;
    let psi0 = QuantumState::from_real(&[p_first.sqrt(), (1.0 - p_first).sqrt()])?;
    let mut t = Vec::new();
    let mut paths = Vec::with_capacity(n_paths);
    for k in 0..n_paths {
        let noise = WhiteNoiseRealization::draw(&dynamics, steps, seed, k as u64);
        let traj = run_trajectory(&dynamics, &psi0, Unraveling::Normalized, noise)?;
        if t.is_empty() {
            t = traj.times.clone();
        }
        paths.push(traj.states.iter().map(|s| s.amplitudes()[0].norm_sqr() / s.norm_sqr()).collect());
    }
    Ok(CollapsePaths { t, paths })
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplificationRow {
    pub n: usize,
    pub rate: f64,
    pub closed_form: f64,
    pub ratio: f64,
}

/// Fitted cat-state decoherence rate for 1..=n_max particles, relative to one.
pub fn amplification_ratios(gamma: f64, sigma: f64, separation_sites: usize, n_max: usize) -> Result<Vec<AmplificationRow>> {
    limit("n_max", n_max, MAX_PARTICLES)?;
    let sites = separation_sites + 11;
    let grid = LatticeGrid::line(sites, 1.0, 0.01, 1)?;
    let params = CslParams::new(gamma, sigma, vec![1.0])?;
    let (left, right) = (5, 5 + separation_sites);
    let mut rows = Vec::with_capacity(n_max);
    let mut base = f64::NAN;
    for n in 1..=n_max {
        let spec = CatStateSpec::new(n, left, right, &grid, sigma)?;
        let fit = amplification_rate(&spec, &params, &grid, 4.0, 41)?;
        if n == 1 {
            base = fit.rate;
        }
        rows.push(AmplificationRow {
            n,
            rate: fit.rate,
            closed_form: cat_decoherence_rate(&spec, &params, &grid)?,
            ratio: fit.rate / base,
        });
    }
    Ok(rows)
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = omegaCurve)]
pub fn omega_curve_js(
    boson_mass: f64,
    cutoff: f64,
    coupling: f64,
    r_min: f64,
    r_max: f64,
    points: usize,
    horizon: f64,
) -> std::result::Result<String, JsError> {
    to_js(omega_curve(boson_mass, cutoff, coupling, r_min, r_max, points, horizon))
}

#[wasm_bindgen(js_name = collapsePaths)]
pub fn collapse_paths_js(
    gamma: f64,
    p_first: f64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(collapse_paths(gamma, p_first, dt, horizon, n_paths, seed))
}

#[wasm_bindgen(js_name = amplificationRatios)]
pub fn amplification_ratios_js(
    gamma: f64,
    sigma: f64,
    separation_sites: usize,
    n_max: usize,
) -> std::result::Result<String, JsError> {
    to_js(amplification_ratios(gamma, sigma, separation_sites, n_max))
}
