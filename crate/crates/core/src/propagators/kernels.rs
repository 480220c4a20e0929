use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::quadrature::{MomentumIntegral, Phase, Spatial};
use super::PropagatorSpec;
use crate::error::{Error, Result};

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn spatial_for(r: f64) -> Spatial {
    if r > 0.0 {
        Spatial::Sin(r)
    } else {
        Spatial::Momentum
    }
}

fn check(r: f64, dt: f64) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", format!("must be >= 0, got {r}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    Ok(())
}

/// `∫_{cell i} dτ ∫_{cell j} ds D(τ − s, r)` for time cells of width `dt`
/// and `lag = i − j`.
pub fn cell_kernel(spec: &PropagatorSpec, r: f64, lag: i64, dt: f64) -> Result<C64> {
    spec.validate()?;
    check(r, dt)?;
    let delta = lag as f64 * dt;
    // e^{−iωΔ} (2 − e^{iωdt} − e^{−iωdt}) / ω²
    let time = [
        Phase::real(2.0, -delta, 2),
        Phase::real(-1.0, -delta + dt, 2),
        Phase::real(-1.0, -delta - dt, 2),
    ];
    let masses = spec.pv_masses();
    let v = MomentumIntegral {
        masses: &masses,
        spatial: spatial_for(r),
        time: &time,
    }
    .evaluate(&spec.quadrature)?;
    Ok(v / (4.0 * PI * PI))
}

/// Time-ordered same-cell kernel `∫₀^{dt} dτ ∫₀^τ ds D(τ − s, r)`.
pub fn ordered_cell_kernel(spec: &PropagatorSpec, r: f64, dt: f64) -> Result<C64> {
    spec.validate()?;
    check(r, dt)?;
    // ∫₀^{dt}∫₀^τ e^{−iω(τ−s)} = (1 − e^{−iωdt})/ω² − i dt/ω
    let time = [
        Phase::real(1.0, 0.0, 2),
        Phase::real(-1.0, -dt, 2),
        Phase::new(C64::new(0.0, -dt), 0.0, 1),
    ];
    let masses = spec.pv_masses();
    let v = MomentumIntegral {
        masses: &masses,
        spatial: spatial_for(r),
        time: &time,
    }
    .evaluate(&spec.quadrature)?;
    Ok(v / (4.0 * PI * PI))
}

/// Spatial sites crossed with uniform time cells.
///
/// Flattened index `cell · n_sites + site`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeLattice {
    pub sites: Vec<[f64; 3]>,
    pub dt: f64,
    pub n_cells: usize,
}

impl SpacetimeLattice {
    pub fn new(sites: Vec<[f64; 3]>, dt: f64, n_cells: usize) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::invalid("sites", "no sites"));
        }
        if n_cells == 0 {
            return Err(Error::invalid("n_cells", "need at least one time cell"));
        }
        check(0.0, dt)?;
        Ok(Self { sites, dt, n_cells })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn dim(&self) -> usize {
        self.sites.len() * self.n_cells
    }

    pub fn index(&self, cell: usize, site: usize) -> usize {
        cell * self.sites.len() + site
    }

    pub fn cell_of(&self, index: usize) -> usize {
        index / self.sites.len()
    }

    pub fn site_of(&self, index: usize) -> usize {
        index % self.sites.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_cells as f64
    }
}

/// Cell-integrated kernel on a spacetime lattice together with its
/// time-ordered part.
///
/// `ordered(a, b)` equals `full(a, b)` when `a` lies in a later cell, zero in
/// an earlier one, and the ordered same-cell integral otherwise. The same-cell
/// real part is pinned to `full/2` so that `ordered + ordered^†` reproduces
/// `full` exactly, which is what makes the influence phase trace preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeKernels {
    pub lattice: SpacetimeLattice,
    pub full: DMatrix<C64>,
    pub ordered: DMatrix<C64>,
}

impl LatticeKernels {
    pub fn build(spec: &PropagatorSpec, lattice: &SpacetimeLattice) -> Result<Self> {
        spec.validate()?;
        let ns = lattice.n_sites();
        let nc = lattice.n_cells;
        let dt = lattice.dt;
        // distinct separations, matched to 1e-12 relative
        let mut radii: Vec<f64> = Vec::new();
        let mut site_r = vec![vec![0usize; ns]; ns];
        for a in 0..ns {
            for b in 0..ns {
                let r = distance(&lattice.sites[a], &lattice.sites[b]);
                let k = match radii.iter().position(|&q| (q - r).abs() <= 1e-12 * r.max(1e-300)) {
                    Some(k) => k,
                    None => {
                        radii.push(r);
                        radii.len() - 1
                    }
                };
                site_r[a][b] = k;
            }
        }
        let lags = 2 * nc - 1;
        let mut by_lag = vec![vec![C64::new(0.0, 0.0); lags]; radii.len()];
        let mut same_cell = vec![C64::new(0.0, 0.0); radii.len()];
        for (k, &r) in radii.iter().enumerate() {
            for lag in 0..nc as i64 {
                let v = cell_kernel(spec, r, lag, dt)?;
                by_lag[k][(lag + nc as i64 - 1) as usize] = v;
                // D(−Δt, r) = D(Δt, r)*
                by_lag[k][(nc as i64 - 1 - lag) as usize] = v.conj();
            }
            let full0 = by_lag[k][nc - 1].re;
            let o = ordered_cell_kernel(spec, r, dt)?;
            same_cell[k] = C64::new(0.5 * full0, o.im);
        }
        let dim = lattice.dim();
        let mut full = DMatrix::zeros(dim, dim);
        let mut ordered = DMatrix::zeros(dim, dim);
        for ca in 0..nc {
            for cb in 0..nc {
                let lag = ca as i64 - cb as i64;
                for sa in 0..ns {
                    for sb in 0..ns {
                        let k = site_r[sa][sb];
                        let (i, j) = (lattice.index(ca, sa), lattice.index(cb, sb));
                        let v = by_lag[k][(lag + nc as i64 - 1) as usize];
                        full[(i, j)] = v;
                        ordered[(i, j)] = match ca.cmp(&cb) {
                            std::cmp::Ordering::Greater => v,
                            std::cmp::Ordering::Equal => same_cell[k],
                            std::cmp::Ordering::Less => C64::new(0.0, 0.0),
                        };
                    }
                }
            }
        }
        Ok(Self {
            lattice: lattice.clone(),
            full,
            ordered,
        })
    }
}
