use nalgebra::SymmetricEigen;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{is_hermitian, CMatrix, CVector, LatticeOperator, C64};
use crate::error::{Error, Result};

/// Amplitude vector over configuration space with a cached squared norm.
///
/// The linear stochastic equations do not preserve the norm, so the cache is
/// the Girsanov weight of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: CVector,
    norm_sqr: f64,
}

impl QuantumState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("amplitudes", "empty state"));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("amplitudes", "non-finite amplitude"));
        }
        Ok(Self::from_raw(amplitudes))
    }

    pub fn from_vec(amplitudes: Vec<C64>) -> Result<Self> {
        Self::new(CVector::from_vec(amplitudes))
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::from_vec(amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::invalid("index", format!("{index} outside dimension {dim}")));
        }
        let mut v = CVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Ok(Self::from_raw(v))
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        let norm_sqr = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        Self {
            amplitudes,
            norm_sqr,
        }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.norm_sqr
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.norm_sqr.is_finite()
    }

    /// Unit-norm copy; fails if the state has vanished.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.norm_sqr > 0.0) || !self.norm_sqr.is_finite() {
            return Err(Error::DegenerateTrajectory { step: 0 });
        }
        Ok(Self::from_raw(self.amplitudes.unscale(self.norm())))
    }

    /// `|ψ(i)|²` for every basis state, not normalized.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Normalized expectation `⟨ψ|O|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, op: &LatticeOperator) -> f64 {
        let raw = match op.diagonal() {
            Some(d) => self
                .amplitudes
                .iter()
                .zip(d)
                .map(|(z, m)| z.norm_sqr() * m)
                .sum::<f64>(),
            None => self.amplitudes.dotc(&op.apply(&self.amplitudes)).re,
        };
        raw / self.norm_sqr
    }

    /// Unnormalized projector `|ψ⟩⟨ψ|`.
    pub fn outer(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// Relative drift of the cached norm against a recomputation.
    pub fn norm_cache_error(&self) -> f64 {
        let fresh: f64 = self.amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if fresh == 0.0 {
            self.norm_sqr.abs()
        } else {
            (self.norm_sqr - fresh).abs() / fresh
        }
    }
}

/// Hermitian, positive matrix over configuration space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    /// Checks squareness and Hermiticity; trace and positivity are reported by
    /// [`DensityMatrix::trace`] and [`DensityMatrix::min_eigenvalue`] since
    /// Monte-Carlo estimates only satisfy them statistically.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(Error::invalid("entries", "empty density matrix"));
        }
        if !is_hermitian(&entries, 1e-12) {
            return Err(Error::invalid("entries", "density matrix is not Hermitian"));
        }
        Ok(Self { entries })
    }

    /// Hermitian part of `m`, for accumulated estimates carrying roundoff.
    pub fn hermitian_part(m: CMatrix) -> Result<Self> {
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Self::new(h)
    }

    pub fn pure(state: &QuantumState) -> Result<Self> {
        let s = state.normalized()?;
        Self::hermitian_part(s.outer())
    }

    pub fn from_diagonal(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        Self::new(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(probs[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// Random full-rank state `G G† / tr(G G†)` with Ginibre `G`.
    pub fn random<R: RngCore>(dim: usize, rng: &mut R) -> Result<Self> {
        let g = CMatrix::from_fn(dim, dim, |_, _| {
            C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        let m = &g * g.adjoint();
        let tr = m.trace().re;
        Self::hermitian_part(m.unscale(tr))
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.entries)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).collect()
    }
}

/// Eigenvalues of a Hermitian matrix (unsorted).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

/// `½ Σ |eig(ρ₁ − ρ₂)|`, the trace norm distance.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(
            "rho2",
            format!("dimension {} does not match {}", b.dim(), a.dim()),
        ));
    }
    let diff = a.entries() - b.entries();
    let d = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    Ok(0.5 * hermitian_eigenvalues(&d).iter().map(|x| x.abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamRng};
    use proptest::prelude::*;

    #[test]
    fn norm_cache_matches() {
        let s = QuantumState::from_vec(vec![C64::new(0.3, 0.4), C64::new(1.0, -2.0)]).unwrap();
        assert!((s.norm_sqr() - 5.25).abs() < 1e-15);
        assert!(s.norm_cache_error() < 1e-12);
        let n = s.normalized().unwrap();
        assert!((n.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_state_cannot_normalize() {
        let s = QuantumState::from_real(&[0.0, 0.0]).unwrap();
        assert!(matches!(s.normalized(), Err(Error::DegenerateTrajectory { .. })));
    }

    #[test]
    fn trace_distance_examples() {
        let r = DensityMatrix::from_diagonal(&[0.6, 0.4]).unwrap();
        let m = DensityMatrix::from_diagonal(&[0.5, 0.5]).unwrap();
        assert!(trace_distance(&r, &r).unwrap().abs() < 1e-15);
        assert!((trace_distance(&r, &m).unwrap() - 0.1).abs() < 1e-14);
        let up = DensityMatrix::pure(&QuantumState::basis_state(2, 0).unwrap()).unwrap();
        let down = DensityMatrix::pure(&QuantumState::basis_state(2, 1).unwrap()).unwrap();
        assert!((trace_distance(&up, &down).unwrap() - 1.0).abs() < 1e-14);
        let three = DensityMatrix::from_diagonal(&[1.0, 0.0, 0.0]).unwrap();
        assert!(trace_distance(&up, &three).is_err());
    }

    #[test]
    fn orthogonal_superpositions_are_distinguishable() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrix::pure(&QuantumState::from_real(&[s, s]).unwrap()).unwrap();
        let minus = DensityMatrix::pure(&QuantumState::from_real(&[s, -s]).unwrap()).unwrap();
        assert!((trace_distance(&plus, &minus).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_state_is_valid() {
        let mut rng = StreamRng::new(3, Purpose::Initial, 0);
        let r = DensityMatrix::random(8, &mut rng).unwrap();
        assert!((r.trace() - 1.0).abs() < 1e-12);
        assert!(r.min_eigenvalue() > 0.0);
    }

    proptest! {
        #[test]
        fn trace_distance_symmetric_and_bounded(seed in 0u64..1000, dim in 1usize..6) {
            let mut rng = StreamRng::new(seed, Purpose::Initial, 0);
            let a = DensityMatrix::random(dim, &mut rng).unwrap();
            let b = DensityMatrix::random(dim, &mut rng).unwrap();
            let ab = trace_distance(&a, &b).unwrap();
            let ba = trace_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        }
    }
}
