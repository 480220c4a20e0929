use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::bessel::bessel_k0;
use super::quadrature::{MomentumIntegral, Phase, Spatial};
use super::PropagatorSpec;
use crate::error::{Error, Result};

/// A spacetime point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: [f64; 3],
}

impl Event {
    pub fn new(t: f64, x: [f64; 3]) -> Self {
        Self { t, x }
    }
}

fn four_pi_sq() -> f64 {
    4.0 * PI * PI
}

/// Unregularized Wightman function `D^m(x, y)` of a single mass.
///
/// Undefined at coincident points and on the light cone.
pub fn vacuum_propagator(spec: &PropagatorSpec, x: &Event, y: &Event, mass: f64) -> Result<C64> {
    spec.quadrature.validate()?;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::invalid("mass", format!("must be > 0, got {mass}")));
    }
    let dt = x.t - y.t;
    let r = super::kernels::distance(&x.x, &y.x);
    if r == 0.0 && dt == 0.0 {
        return Err(Error::Domain("propagator is singular at coincident points".into()));
    }
    if (r - dt.abs()).abs() <= 1e-12 * r.max(dt.abs()) {
        return Err(Error::Domain("propagator is singular on the light cone".into()));
    }
    let masses = [(mass, 1.0)];
    let time = [Phase::real(1.0, -dt, 0)];
    let spatial = if r > 0.0 { Spatial::Sin(r) } else { Spatial::Momentum };
    let v = MomentumIntegral {
        masses: &masses,
        spatial,
        time: &time,
    }
    .evaluate(&spec.quadrature)?;
    Ok(v / four_pi_sq())
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("separation must be > 0, got {r}")))
    }
}

/// Infinite-time integral of a single-mass propagator, `2K₀(m r)/(2π)²`.
pub fn g_infinity(r: f64, mass: f64) -> Result<f64> {
    check_r(r)?;
    if !(mass > 0.0) {
        return Err(Error::invalid("mass", format!("must be > 0, got {mass}")));
    }
    Ok(2.0 * bessel_k0(mass * r)? / four_pi_sq())
}

/// Pauli–Villars difference `G^{m_b} − G^{Λ}`, finite also at `r = 0`.
pub fn pv_g_infinity(spec: &PropagatorSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if r == 0.0 {
        return Ok(2.0 * (spec.cutoff / spec.boson_mass).ln() / four_pi_sq());
    }
    Ok(g_infinity(r, spec.boson_mass)? - g_infinity(r, spec.cutoff)?)
}

/// Asymptotic collapse exponent
/// `Ω_∞(r) = g²/(2π)² [K₀(m_b r) − K₀(Λ r) − ln(Λ/m_b)]`.
pub fn omega_infinity(spec: &PropagatorSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    check_r(r)?;
    let (m, l) = (spec.boson_mass, spec.cutoff);
    let bracket = bessel_k0(m * r)? - bessel_k0(l * r)? - (l / m).ln();
    Ok(spec.coupling.powi(2) / four_pi_sq() * bracket)
}

/// PV-regularized `G_T(r) = ∫₀^T∫₀^T D((τ,x),(s,y)) dτ ds`.
pub fn g_finite(spec: &PropagatorSpec, r: f64, horizon: f64) -> Result<f64> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("separation must be >= 0, got {r}")));
    }
    let masses = spec.pv_masses();
    // |∫₀^T e^{−iωτ} dτ|² = (2 − e^{iωT} − e^{−iωT}) / ω²
    let time = [
        Phase::real(2.0, 0.0, 2),
        Phase::real(-1.0, horizon, 2),
        Phase::real(-1.0, -horizon, 2),
    ];
    let spatial = if r > 0.0 { Spatial::Sin(r) } else { Spatial::Momentum };
    let v = MomentumIntegral {
        masses: &masses,
        spatial,
        time: &time,
    }
    .evaluate(&spec.quadrature)?;
    Ok(v.re / four_pi_sq())
}

/// Finite-horizon exponent `Ω_T(r) = (g²/2)[G_T(r) − G_T(0)]`.
///
/// The double time integral is done analytically under the momentum
/// integral, which leaves a single absolutely convergent radial integral
/// `g²/(4π²) ∫ [p(sinc(pr) − 1)]_{PV} (1 − cos ωT)/ω² dω`.
pub fn omega_from_quadrature(spec: &PropagatorSpec, r: f64, horizon: f64) -> Result<f64> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("separation must be >= 0, got {r}")));
    }
    if spec.coupling == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    let masses = spec.pv_masses();
    let time = [
        Phase::real(1.0, 0.0, 2),
        Phase::real(-0.5, horizon, 2),
        Phase::real(-0.5, -horizon, 2),
    ];
    let v = MomentumIntegral {
        masses: &masses,
        spatial: Spatial::SincMinusOne(r),
        time: &time,
    }
    .evaluate(&spec.quadrature)?;
    Ok(spec.coupling.powi(2) * v.re / four_pi_sq())
}

/// One line of an Ω table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaRow {
    pub r: f64,
    pub omega_infinity: f64,
    pub omega_t: f64,
    /// PV-regularized `G_∞(r)`.
    pub g: f64,
}

/// Ω_∞, Ω_T and G on `points` geometrically spaced separations.
pub fn omega_table(
    spec: &PropagatorSpec,
    r_min: f64,
    r_max: f64,
    points: usize,
    horizon: f64,
) -> Result<Vec<OmegaRow>> {
    check_r(r_min)?;
    if !(r_max >= r_min && r_max.is_finite()) {
        return Err(Error::invalid("r_max", "must be >= r_min"));
    }
    if points == 0 {
        return Err(Error::invalid("points", "need at least one point"));
    }
    let ratio = if points > 1 {
        (r_max / r_min).powf(1.0 / (points - 1) as f64)
    } else {
        1.0
    };
    crate::parallel::try_map_indices(points, |i| {
        let r = if i + 1 == points { r_max } else { r_min * ratio.powi(i as i32) };
        Ok(OmegaRow {
            r,
            omega_infinity: omega_infinity(spec, r)?,
            omega_t: omega_from_quadrature(spec, r, horizon)?,
            g: pv_g_infinity(spec, r)?,
        })
    })
}
