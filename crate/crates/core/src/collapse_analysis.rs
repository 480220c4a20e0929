//! Collapse strength of the non-Markovian model: closed-form single-particle
//! states, the two-point metric `Δ_t(x, y) = |ψ̃_t(x)||ψ̃_t(y)|`, amplification
//! with particle number and the transient plateau of the exponent.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_field::FieldSample;
use crate::hilbert::{ConfigurationBasis, DensityMatrix, QuantumState, C64};
use crate::nonmarkov::{influence_phase_apply, FieldUnraveling, InfluencePhase};
use crate::parallel::try_map_indices;
use crate::propagators::{omega_from_quadrature, omega_infinity, LatticeKernels, PropagatorSpec, SpacetimeLattice};
use crate::stats::{weighted_line_fit, weighted_proportional_fit, Estimate, LineFit};

/// Linear state after `n_cells` cells for a given field, from the explicit
/// solution `ψ_α · exp(−i dt Σ J_α ξ − J_α O J_α)`.
///
/// Needs point couplings, a circular field and no free Hamiltonian; the last
/// is implied by taking only a phase.
pub fn closed_form_state(
    xi: &FieldSample,
    psi0: &QuantumState,
    phase: &InfluencePhase,
    n_cells: usize,
) -> Result<QuantumState> {
    if !phase.is_circular() {
        return Err(Error::UnsupportedRegime("explicit solution assumes S = 0".into()));
    }
    if psi0.dim() != phase.dim() {
        return Err(Error::DimensionMismatch {
            expected: phase.dim(),
            got: psi0.dim(),
        });
    }
    if n_cells > phase.n_cells() {
        return Err(Error::invalid("n_cells", "beyond the kernel window"));
    }
    let n = n_cells * phase.n_sites();
    if xi.values.len() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: xi.values.len(),
        });
    }
    let o = phase.kernels().ordered.view((0, 0), (n, n));
    let dt = phase.dt();
    let amps: Vec<C64> = (0..phase.dim())
        .map(|alpha| {
            let j = phase.sources(alpha, n_cells).map(|v| C64::new(v, 0.0));
            let drive: C64 = (0..n).map(|k| j[k] * xi.values[k]).sum::<C64>() * dt;
            let damping = j.dot(&(o * &j));
            psi0.amplitudes()[alpha] * (C64::new(0.0, -1.0) * drive - damping).exp()
        })
        .collect();
    QuantumState::from_vec(amps)
}

/// Monte-Carlo and closed-form collapse metric at one `(r, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetricResult {
    pub r: f64,
    pub t: f64,
    pub delta_0: f64,
    pub delta_mc: Estimate,
    pub delta_analytic: f64,
    pub omega: f64,
}

impl CollapseMetricResult {
    pub fn z_score(&self) -> f64 {
        let dev = (self.delta_mc.mean - self.delta_analytic).abs();
        if dev <= 1e-14 * self.delta_analytic.abs() {
            0.0
        } else {
            dev / self.delta_mc.se
        }
    }

    pub fn within(&self, n_se: f64) -> bool {
        self.z_score() < n_se
    }
}

fn two_point_phase(spec: &PropagatorSpec, r: f64, t: f64) -> Result<InfluencePhase> {
    let lattice = SpacetimeLattice::new(vec![[0.0; 3], [r, 0.0, 0.0]], t, 1)?;
    let kernels = LatticeKernels::build(spec, &lattice)?;
    let basis = ConfigurationBasis::single_particle(&[0, 1])?;
    InfluencePhase::point_couplings(kernels, None, &basis, spec.coupling)
}

/// `E_t[Δ_t]` for a particle in a superposition of two points `r` apart.
///
/// The whole window `[0, t]` is one time cell, so the field is a pair of
/// complex Gaussians with covariance `G_t`. Under the cooked measure the
/// Girsanov weight cancels the normalization, leaving the plain mean of
/// `|ψ_t(x)||ψ_t(y)|` over the prior.
pub fn delta_metric_mc(
    spec: &PropagatorSpec,
    psi0: &QuantumState,
    r: f64,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CollapseMetricResult> {
    if psi0.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: psi0.dim(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", "must be >= 0"));
    }
    let psi0 = psi0.normalized()?;
    let p = psi0.probabilities();
    let delta_0 = (p[0] * p[1]).sqrt();
    if t == 0.0 {
        return Ok(CollapseMetricResult {
            r,
            t,
            delta_0,
            delta_mc: Estimate {
                mean: delta_0,
                se: 0.0,
                n: n_samples,
            },
            delta_analytic: delta_0,
            omega: 0.0,
        });
    }
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two samples"));
    }
    let phase = two_point_phase(spec, r, t)?;
    let unraveling = FieldUnraveling::new(phase, None)?;
    let values = try_map_indices(n_samples, |i| {
        let xi = unraveling.sample_field(seed, i as u64);
        let psi = closed_form_state(&xi, &psi0, unraveling.phase(), 1)?;
        let a = psi.amplitudes();
        Ok(a[0].norm() * a[1].norm())
    })?;
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateEnsemble("all samples vanished".into()));
    }
    let omega = omega_from_quadrature(spec, r, t)?;
    Ok(CollapseMetricResult {
        r,
        t,
        delta_0,
        delta_mc: Estimate::from_samples(&values),
        delta_analytic: omega.exp() * delta_0,
        omega,
    })
}

/// Two clusters of N particles: one peak at the origin, the other
/// `peak_separation` away along x, particles `intra_spacing` apart inside a
/// peak (along y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationGeometry {
    pub peak_separation: f64,
    pub intra_spacing: f64,
    pub horizon: f64,
    pub n_cells: usize,
}

impl AmplificationGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_separation > 0.0 && self.peak_separation.is_finite()) {
            return Err(Error::invalid("peak_separation", "must be > 0"));
        }
        if !(self.intra_spacing > 0.0 && self.intra_spacing.is_finite()) {
            return Err(Error::invalid("intra_spacing", "must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be > 0"));
        }
        if self.n_cells == 0 {
            return Err(Error::invalid("n_cells", "must be >= 1"));
        }
        Ok(())
    }

    /// Both the peaks and the particles within a peak are farther apart than
    /// the field's Compton length.
    pub fn in_regime(&self, boson_mass: f64) -> bool {
        let l = 1.0 / boson_mass;
        self.peak_separation > l && self.intra_spacing > l
    }

    fn sites(&self, n: usize) -> Vec<[f64; 3]> {
        let left = (0..n).map(|i| [0.0, i as f64 * self.intra_spacing, 0.0]);
        let right = (0..n).map(|i| [self.peak_separation, i as f64 * self.intra_spacing, 0.0]);
        left.chain(right).collect()
    }
}

/// Coherence-decay exponents of N-particle cat states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationScan {
    pub n_values: Vec<usize>,
    /// `ln(|ρ_LR(T)| / |ρ_LR(0)|)` at the horizon.
    pub exponents: Vec<f64>,
    /// Fitted exponent ratio against N = 1 over the time series.
    pub ratios: Vec<f64>,
    pub fit_r_squared: Vec<f64>,
    pub peak_separation: f64,
    pub intra_spacing: f64,
    pub in_regime: bool,
    /// `2 Ω_T(d)`: the single-particle exponent from the momentum quadrature.
    pub single_particle_exponent: f64,
}

impl AmplificationScan {
    /// Slope of `ln ratio` against `ln N`.
    pub fn scaling_exponent(&self) -> LineFit {
        let xs: Vec<f64> = self.n_values.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = self.ratios.iter().map(|r| r.ln()).collect();
        weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()])
    }
}

/// Smallest coherence kept in the decay fit.
pub const COHERENCE_FLOOR: f64 = 1e-6;

fn exponent_series(spec: &PropagatorSpec, n: usize, geometry: &AmplificationGeometry) -> Result<Vec<f64>> {
    let dt = geometry.horizon / geometry.n_cells as f64;
    let lattice = SpacetimeLattice::new(geometry.sites(n), dt, geometry.n_cells)?;
    let kernels = LatticeKernels::build(spec, &lattice)?;
    let basis = ConfigurationBasis::cat((0..n).collect(), (n..2 * n).collect())?;
    let phase = InfluencePhase::point_couplings(kernels, None, &basis, spec.coupling)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rho0 = DensityMatrix::pure(&QuantumState::from_real(&[h, h])?)?;
    (1..=geometry.n_cells)
        .map(|c| {
            let rho = influence_phase_apply(&phase, &rho0, c)?;
            Ok((rho.get(0, 1).norm() / 0.5).ln())
        })
        .collect()
}

/// For every N builds `(|L…L⟩ + |R…R⟩)/√2`, evolves it exactly and fits its
/// log-coherence series against the N = 1 series.
pub fn amplification_scan(
    spec: &PropagatorSpec,
    n_values: &[usize],
    geometry: &AmplificationGeometry,
) -> Result<AmplificationScan> {
    spec.validate()?;
    geometry.validate()?;
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::invalid("n_values", "need particle counts >= 1"));
    }
    let base = exponent_series(spec, 1, geometry)?;
    let mut exponents = Vec::with_capacity(n_values.len());
    let mut ratios = Vec::with_capacity(n_values.len());
    let mut r2 = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let series = if n == 1 { base.clone() } else { exponent_series(spec, n, geometry)? };
        let floor = COHERENCE_FLOOR.ln() - 0.5f64.ln();
        let (xs, ys): (Vec<f64>, Vec<f64>) = base
            .iter()
            .zip(&series)
            .filter(|(_, &e)| e > floor)
            .map(|(&b, &e)| (b, e))
            .unzip();
        let fit = weighted_proportional_fit(&xs, &ys, &vec![1.0; xs.len()]);
        if xs.is_empty() || !(fit.r_squared >= 0.99) {
            return Err(Error::FitFailure {
                r_squared: fit.r_squared,
                data: base.iter().copied().zip(series.iter().copied()).collect(),
            });
        }
        exponents.push(*series.last().expect("n_cells >= 1"));
        ratios.push(fit.slope);
        r2.push(fit.r_squared);
    }
    Ok(AmplificationScan {
        n_values: n_values.to_vec(),
        exponents,
        ratios,
        fit_r_squared: r2,
        peak_separation: geometry.peak_separation,
        intra_spacing: geometry.intra_spacing,
        in_regime: geometry.in_regime(spec.boson_mass),
        single_particle_exponent: 2.0 * omega_from_quadrature(spec, geometry.peak_separation, geometry.horizon)?,
    })
}

/// Large-separation plateau `−g² ln(Λ/m_b) / (2π)²`.
pub fn plateau_value(spec: &PropagatorSpec) -> f64 {
    -spec.coupling.powi(2) * (spec.cutoff / spec.boson_mass).ln() / (4.0 * PI * PI)
}

/// Ω_T at one separation over a list of horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub r: f64,
    pub omega_infinity: f64,
    pub horizons: Vec<f64>,
    pub omega_t: Vec<f64>,
}

impl PlateauRow {
    /// Relative distance of the longest-horizon value from Ω_∞.
    pub fn convergence_error(&self) -> f64 {
        let last = *self.omega_t.last().expect("nonempty");
        (last - self.omega_infinity).abs() / self.omega_infinity.abs()
    }

    /// Ω_T never increases with T.
    pub fn is_monotone(&self) -> bool {
        self.omega_t.windows(2).all(|w| w[1] <= w[0])
    }

    /// Ω_T never drops below Ω_∞.
    pub fn bounded_below(&self) -> bool {
        self.omega_t.iter().all(|&w| w >= self.omega_infinity)
    }
}

/// Transience of the collapse exponent and its cutoff dependence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub rows: Vec<PlateauRow>,
    pub plateau: f64,
    /// Plateau change when Λ is doubled.
    pub deepening: f64,
    /// `−g² ln 2 / (2π)²`.
    pub expected_deepening: f64,
}

impl PlateauReport {
    /// Largest relative spread of Ω_∞ among rows with `r ≥ r_far`.
    pub fn far_field_spread(&self, r_far: f64) -> f64 {
        let far: Vec<f64> = self.rows.iter().filter(|r| r.r >= r_far).map(|r| r.omega_infinity).collect();
        if far.len() < 2 {
            return 0.0;
        }
        let hi = far.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = far.iter().cloned().fold(f64::INFINITY, f64::min);
        (hi - lo) / lo.abs()
    }

    /// Every row converges to a finite negative plateau within `rel`.
    pub fn converges(&self, rel: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.omega_infinity < 0.0 && r.omega_infinity.is_finite() && r.convergence_error() <= rel)
    }
}

pub fn transient_plateau_check(spec: &PropagatorSpec, r_list: &[f64], horizons: &[f64]) -> Result<PlateauReport> {
    spec.validate()?;
    if horizons.is_empty() || r_list.is_empty() {
        return Err(Error::invalid("horizons", "need at least one separation and one horizon"));
    }
    let rows = r_list
        .iter()
        .map(|&r| {
            Ok(PlateauRow {
                r,
                omega_infinity: omega_infinity(spec, r)?,
                horizons: horizons.to_vec(),
                omega_t: horizons
                    .iter()
                    .map(|&t| omega_from_quadrature(spec, r, t))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doubled = PropagatorSpec::new(spec.boson_mass, 2.0 * spec.cutoff, spec.coupling)?;
    Ok(PlateauReport {
        rows,
        plateau: plateau_value(spec),
        deepening: plateau_value(&doubled) - plateau_value(spec),
        expected_deepening: -spec.coupling.powi(2) * 2f64.ln() / (4.0 * PI * PI),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagators::g_finite;

    fn spec(g: f64) -> PropagatorSpec {
        PropagatorSpec::new(1.0, 10.0, g).unwrap()
    }

    fn plus() -> QuantumState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        QuantumState::from_real(&[h, h]).unwrap()
    }

    fn lattice_phase(g: f64, cells: usize) -> InfluencePhase {
        let lat = SpacetimeLattice::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], 0.5, cells).unwrap();
        let k = LatticeKernels::build(&spec(1.0), &lat).unwrap();
        let basis = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        InfluencePhase::point_couplings(k, None, &basis, g).unwrap()
    }

    #[test]
    fn closed_form_without_coupling_is_identity() {
        let p = lattice_phase(0.0, 4);
        let u = FieldUnraveling::new(p.clone(), None).unwrap();
        let xi = u.sample_field(1, 0);
        let psi = closed_form_state(&xi, &plus(), &p, 4).unwrap();
        assert_eq!(psi.amplitudes(), plus().amplitudes());
    }

    #[test]
    fn closed_form_without_noise_is_self_damping() {
        let p = lattice_phase(1.2, 6);
        let zero = FieldSample {
            values: vec![C64::new(0.0, 0.0); 12],
            seed: 0,
            index: 0,
        };
        let psi = closed_form_state(&zero, &plus(), &p, 6).unwrap();
        // |ψ(x)| = |ψ₀(x)| exp(−g² G_T(0)/2)
        let want = std::f64::consts::FRAC_1_SQRT_2 * (-0.72 * g_finite(&spec(1.0), 0.0, 3.0).unwrap()).exp();
        assert!((psi.amplitudes()[0].norm() - want).abs() < 1e-8 * want);
    }

    #[test]
    fn closed_form_agrees_with_conditional_history() {
        let p = lattice_phase(1.0, 5);
        let u = FieldUnraveling::new(p.clone(), None).unwrap();
        for i in 0..20 {
            let xi = u.sample_field(4, i);
            let a = closed_form_state(&xi, &plus(), &p, 5).unwrap();
            let b = u.conditional_history(&plus(), &xi).unwrap().pop().unwrap();
            assert!((a.amplitudes() - b.amplitudes()).norm() < 1e-12 * a.norm());
        }
    }

    #[test]
    fn delta_metric_at_time_zero_is_exact() {
        let r = delta_metric_mc(&spec(1.0), &plus(), 2.0, 0.0, 10, 1).unwrap();
        assert_eq!(r.delta_mc.mean, r.delta_analytic);
        assert!((r.delta_0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coincident_points_do_not_collapse() {
        let r = delta_metric_mc(&spec(1.0), &plus(), 0.0, 3.0, 4000, 2).unwrap();
        assert_eq!(r.omega, 0.0);
        assert!(r.within(3.0), "{r:?}");
    }

    #[test]
    fn plateau_deepens_by_log_two() {
        let rep = transient_plateau_check(&spec(1.0), &[10.0], &[50.0]).unwrap();
        assert!((rep.deepening - rep.expected_deepening).abs() < 1e-15);
    }

    #[test]
    fn weak_coupling_does_not_suppress() {
        let rep = transient_plateau_check(&spec(1e-4), &[10.0], &[50.0]).unwrap();
        assert!(rep.rows[0].omega_infinity.exp() > 1.0 - 1e-8);
        assert!(rep.rows[0].omega_t[0].exp() > 1.0 - 1e-8);
    }
}
