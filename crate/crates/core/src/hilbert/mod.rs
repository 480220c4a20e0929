//! Finite-dimensional quantum mechanics on a spatial lattice.
//!
//! Everything here is dense: configuration spaces are small enough (a few
//! thousand states at most) that sparse storage would only add bookkeeping.
//! Units are ħ = c = 1 throughout.

mod lattice;
mod lindblad;
mod operators;
mod state;

pub use lattice::{ConfigurationBasis, LatticeGrid};
pub use lindblad::{evolve_lindblad, LindbladGenerator, LindbladOptions};
pub use operators::{
    build_density_operators, build_mass_density, build_point_mass_density, hopping_hamiltonian, CslParams, LatticeOperator,
    OperatorKind,
};
pub use state::{hermitian_eigenvalues, trace_distance, DensityMatrix, QuantumState};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    if n != m.ncols() {
        return false;
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for i in 0..n {
        for j in i..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}
