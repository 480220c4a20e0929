use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{is_hermitian, CMatrix, CVector, ConfigurationBasis, LatticeGrid, C64};
use crate::error::{Error, Result};

/// What physical role an operator plays; governs which invariants are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Hamiltonian,
    SmearedMass,
    Density,
    Coupling,
}

/// A dense operator on configuration space.
///
/// Operators that are diagonal in the configuration basis (all mass
/// densities and couplings built here) also keep their real diagonal, which
/// the stochastic integrators use as a fast path.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeOperator {
    entries: CMatrix,
    kind: OperatorKind,
    diagonal: Option<Vec<f64>>,
}

impl LatticeOperator {
    pub fn new(entries: CMatrix, kind: OperatorKind) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("entries", "operator has non-finite entries"));
        }
        if !is_hermitian(&entries, 1e-12) {
            return Err(Error::invalid("entries", format!("{kind:?} operator is not Hermitian")));
        }
        let diagonal = extract_diagonal(&entries);
        if matches!(kind, OperatorKind::SmearedMass | OperatorKind::Density) {
            let min = match &diagonal {
                Some(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
                None => super::hermitian_eigenvalues(&entries)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min),
            };
            let scale = entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if min < -1e-12 * scale.max(1.0) {
                return Err(Error::invalid(
                    "entries",
                    format!("{kind:?} operator has negative eigenvalue {min}"),
                ));
            }
        }
        Ok(Self {
            entries,
            kind,
            diagonal,
        })
    }

    pub fn from_diagonal(values: &[f64], kind: OperatorKind) -> Result<Self> {
        let n = values.len();
        let entries = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self::new(entries, kind)
    }

    pub fn zeros(dim: usize, kind: OperatorKind) -> Self {
        Self {
            entries: CMatrix::zeros(dim, dim),
            kind,
            diagonal: Some(vec![0.0; dim]),
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Real diagonal when the operator is diagonal in the configuration basis.
    pub fn diagonal(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        match &self.diagonal {
            Some(d) => CVector::from_fn(v.len(), |i, _| v[i] * d[i]),
            None => &self.entries * v,
        }
    }

    /// Same operator multiplied by a real factor, relabelled.
    pub fn scaled(&self, factor: f64, kind: OperatorKind) -> Self {
        Self {
            entries: self.entries.map(|z| z * factor),
            kind,
            diagonal: self
                .diagonal
                .as_ref()
                .map(|d| d.iter().map(|x| x * factor).collect()),
        }
    }

    pub fn commutes_with(&self, other: &Self, tol: f64) -> bool {
        if self.is_diagonal() && other.is_diagonal() {
            return true;
        }
        let c = &self.entries * &other.entries - &other.entries * &self.entries;
        c.iter().all(|z| z.norm() <= tol)
    }
}

fn extract_diagonal(m: &CMatrix) -> Option<Vec<f64>> {
    let n = m.nrows();
    for i in 0..n {
        if m[(i, i)].im != 0.0 {
            return None;
        }
        for j in 0..n {
            if i != j && m[(i, j)] != C64::new(0.0, 0.0) {
                return None;
            }
        }
    }
    Some((0..n).map(|i| m[(i, i)].re).collect())
}

/// Collapse-model parameters: strength γ, smearing length σ and one mass per
/// particle. γ is used raw; any rescaling by a reference mass belongs to the
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslParams {
    pub gamma: f64,
    pub sigma: f64,
    pub masses: Vec<f64>,
}

impl CslParams {
    pub fn new(gamma: f64, sigma: f64, masses: Vec<f64>) -> Result<Self> {
        let p = Self {
            gamma,
            sigma,
            masses,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if self.masses.is_empty() {
            return Err(Error::invalid("masses", "particle count is zero"));
        }
        if self.masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::invalid("masses", "masses must be positive"));
        }
        Ok(())
    }
}

/// σ-smeared mass density `M(x)` at every grid point.
///
/// In configuration state `c` the diagonal entry is
/// `(2π)^{-3/2} σ^{-3} Σ_k m_k exp(−|x − y_{c_k}|² / 2σ²)`.
pub fn build_mass_density(
    grid: &LatticeGrid,
    params: &CslParams,
    basis: &ConfigurationBasis,
) -> Result<Vec<LatticeOperator>> {
    params.validate()?;
    if params.masses.len() != basis.n_particles() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_particles(),
            got: params.masses.len(),
        });
    }
    basis.check_sites(grid.len())?;
    let sigma = params.sigma;
    let norm = (2.0 * PI).powf(-1.5) / sigma.powi(3);
    let mut ops = Vec::with_capacity(grid.len());
    for x in 0..grid.len() {
        let diag: Vec<f64> = basis
            .configs()
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&params.masses)
                    .map(|(&site, &m)| {
                        let r = grid.distance(x, site);
                        m * (-r * r / (2.0 * sigma * sigma)).exp()
                    })
                    .sum::<f64>()
                    * norm
            })
            .collect();
        ops.push(LatticeOperator::from_diagonal(&diag, OperatorKind::SmearedMass)?);
    }
    Ok(ops)
}

/// Number densities `N(x)`: entry = (particles on x) / a³, so that for one
/// particle `Σ_x a³ N(x)` is the identity.
pub fn build_density_operators(
    grid: &LatticeGrid,
    basis: &ConfigurationBasis,
) -> Result<Vec<LatticeOperator>> {
    basis.check_sites(grid.len())?;
    let inv_vol = 1.0 / grid.volume_element();
    (0..grid.len())
        .map(|x| {
            let diag: Vec<f64> = (0..basis.dim())
                .map(|i| basis.occupation(i, x) as f64 * inv_vol)
                .collect();
            LatticeOperator::from_diagonal(&diag, OperatorKind::Density)
        })
        .collect()
}

/// Point-like mass density `Σ_k m_k N_k(x)`, the σ → 0 limit on the lattice.
pub fn build_point_mass_density(
    grid: &LatticeGrid,
    masses: &[f64],
    basis: &ConfigurationBasis,
) -> Result<Vec<LatticeOperator>> {
    if masses.len() != basis.n_particles() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_particles(),
            got: masses.len(),
        });
    }
    basis.check_sites(grid.len())?;
    let inv_vol = 1.0 / grid.volume_element();
    (0..grid.len())
        .map(|x| {
            let diag: Vec<f64> = basis
                .configs()
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(masses)
                        .filter(|(&s, _)| s == x)
                        .map(|(_, &m)| m)
                        .sum::<f64>()
                        * inv_vol
                })
                .collect();
            LatticeOperator::from_diagonal(&diag, OperatorKind::SmearedMass)
        })
        .collect()
}

/// Kinetic energy `−Σ_k ∇²_k / 2m_k` with the nearest-neighbour stencil and
/// zero (Dirichlet) boundary. Hops leading outside a restricted basis are
/// dropped.
pub fn hopping_hamiltonian(
    grid: &LatticeGrid,
    basis: &ConfigurationBasis,
    masses: &[f64],
) -> Result<LatticeOperator> {
    if masses.len() != basis.n_particles() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_particles(),
            got: masses.len(),
        });
    }
    if masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::invalid("masses", "masses must be positive"));
    }
    basis.check_sites(grid.len())?;
    let a2 = grid.spacing().powi(2);
    let dims = grid.dimensionality().max(1) as f64;
    let index: HashMap<&[usize], usize> = basis
        .configs()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_slice(), i))
        .collect();
    let neighbors: Vec<Vec<usize>> = (0..grid.len()).map(|i| grid.neighbors(i)).collect();
    let dim = basis.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for (i, c) in basis.configs().iter().enumerate() {
        for (k, &m) in masses.iter().enumerate() {
            let hop = 1.0 / (2.0 * m * a2);
            h[(i, i)] += C64::new(2.0 * dims * hop, 0.0);
            let mut moved = c.clone();
            for &n in &neighbors[c[k]] {
                moved[k] = n;
                if let Some(&j) = index.get(moved.as_slice()) {
                    h[(j, i)] -= C64::new(hop, 0.0);
                }
            }
        }
    }
    LatticeOperator::new(h, OperatorKind::Hamiltonian)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, a: f64) -> LatticeGrid {
        LatticeGrid::line(n, a, 0.01, 1).unwrap()
    }

    #[test]
    fn point_like_limit_is_diagonal_projector() {
        let g = line(5, 1.0);
        let sigma = 0.05;
        let p = CslParams::new(1.0, sigma, vec![1.0]).unwrap();
        let b = ConfigurationBasis::single_particle(&[0, 1, 2, 3, 4]).unwrap();
        let ops = build_mass_density(&g, &p, &b).unwrap();
        let on = ops[2].diagonal().unwrap()[2];
        let expected = 1.0 / (sigma.powi(3) * (2.0 * PI).powf(1.5));
        assert!((on - expected).abs() < 1e-12 * expected);
        for (i, v) in ops[2].diagonal().unwrap().iter().enumerate() {
            if i != 2 {
                assert!(*v < 1e-12 * on);
            }
        }
    }

    #[test]
    fn smeared_density_integrates_to_mass() {
        // σ = 2a on a 15³ grid, particle in the centre
        let a = 1.0;
        let g = LatticeGrid::cubic(15, a, 0.01, 1).unwrap();
        let centre = 7 * 225 + 7 * 15 + 7;
        let p = CslParams::new(1.0, 2.0 * a, vec![1.7]).unwrap();
        let b = ConfigurationBasis::single_particle(&[centre]).unwrap();
        let ops = build_mass_density(&g, &p, &b).unwrap();
        let total: f64 = ops.iter().map(|o| o.diagonal().unwrap()[0]).sum::<f64>() * a.powi(3);
        assert!((total / 1.7 - 1.0).abs() < 0.01, "total {total}");
    }

    #[test]
    fn kernel_ratio_at_one_sigma() {
        let g = line(4, 0.5);
        let p = CslParams::new(1.0, 1.0, vec![1.0]).unwrap();
        let b = ConfigurationBasis::single_particle(&[0]).unwrap();
        let ops = build_mass_density(&g, &p, &b).unwrap();
        // site 2 sits at distance 1 = σ from the particle
        let ratio = ops[2].diagonal().unwrap()[0] / ops[0].diagonal().unwrap()[0];
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-14);
        assert!((ratio - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn mass_density_rejects_bad_params() {
        assert!(CslParams::new(1.0, 0.0, vec![1.0]).is_err());
        assert!(CslParams::new(1.0, -1.0, vec![1.0]).is_err());
        assert!(CslParams::new(1.0, 1.0, vec![]).is_err());
        assert!(CslParams::new(-1.0, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn density_resolves_identity() {
        let g = line(3, 0.5);
        let b = ConfigurationBasis::single_particle(&[0, 1, 2]).unwrap();
        let ops = build_density_operators(&g, &b).unwrap();
        for i in 0..3 {
            let s: f64 = ops.iter().map(|o| o.diagonal().unwrap()[i]).sum::<f64>()
                * g.volume_element();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hopping_on_two_sites() {
        let g = line(2, 1.0);
        let b = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        let h = hopping_hamiltonian(&g, &b, &[0.5]).unwrap();
        assert_eq!(h.entries()[(0, 1)], C64::new(-1.0, 0.0));
        assert_eq!(h.entries()[(0, 0)], C64::new(2.0, 0.0));
        assert!(!h.is_diagonal());
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(LatticeOperator::new(m, OperatorKind::Hamiltonian).is_err());
    }

    #[test]
    fn rejects_negative_density() {
        assert!(LatticeOperator::from_diagonal(&[1.0, -0.5], OperatorKind::Density).is_err());
        assert!(LatticeOperator::from_diagonal(&[1.0, -0.5], OperatorKind::Coupling).is_ok());
    }
}
