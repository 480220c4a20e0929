//! Pauli–Villars regularized scalar propagators and the collapse exponents
//! derived from them.
//!
//! The regularized Wightman function is `D = D^{m_b} − D^{Λ}` with
//!
//! ```text
//!   D^m(Δt, r) = ∫ d³p e^{−iωΔt + ip·Δx} / (2(2π)³ ω),   ω = √(p² + m²).
//! ```

mod bessel;
mod kernels;
mod omega;
mod quadrature;

pub use bessel::{bessel_k0, bessel_k1};
pub use kernels::{cell_kernel, ordered_cell_kernel, LatticeKernels, SpacetimeLattice};
pub use omega::{
    g_finite, g_infinity, omega_from_quadrature, omega_infinity, omega_table, pv_g_infinity,
    vacuum_propagator, Event, OmegaRow,
};
pub use quadrature::QuadratureSettings;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boson mass, Pauli–Villars cutoff, coupling and quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSpec {
    pub boson_mass: f64,
    pub cutoff: f64,
    pub coupling: f64,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
}

impl PropagatorSpec {
    pub fn new(boson_mass: f64, cutoff: f64, coupling: f64) -> Result<Self> {
        let s = Self {
            boson_mass,
            cutoff,
            coupling,
            quadrature: QuadratureSettings::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boson_mass > 0.0 && self.boson_mass.is_finite()) {
            return Err(Error::invalid("boson_mass", format!("must be > 0, got {}", self.boson_mass)));
        }
        if !(self.cutoff > self.boson_mass && self.cutoff.is_finite()) {
            return Err(Error::invalid(
                "cutoff",
                format!("must exceed the boson mass, got {}", self.cutoff),
            ));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::invalid("coupling", format!("must be >= 0, got {}", self.coupling)));
        }
        self.quadrature.validate()
    }

    pub(crate) fn pv_masses(&self) -> [(f64, f64); 2] {
        [(self.boson_mass, 1.0), (self.cutoff, -1.0)]
    }
}
