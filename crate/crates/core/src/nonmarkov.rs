//! Non-Markovian unraveling of a Gaussian influence functional.
//!
//! Time is cut into cells of width `dt` and space into sites. The environment
//! enters only through the cell-integrated kernel `K_ab = ∫_a∫_b D` and its
//! time-ordered part `O` (see [`LatticeKernels`]). With couplings diagonal in
//! a fixed basis, the reduced density matrix is exact:
//!
//! ```text
//! ρ_αβ(t) = ρ_αβ(0) · exp(J_α K J_β − J_α O J_α − (J_β O J_β)*)
//! ```
//!
//! where `J_α` lists the coupling eigenvalue of state `α` on every
//! `(cell, site)`. The unraveling draws a complex field ξ with covariance
//! `K/dt²` and relation `S/dt²` per cell, plus auxiliary fields η, η′ whose
//! relation `O + Oᵀ − S` restores the memory term. Ket and bra use
//! independent auxiliary draws, so `E[|ψ_{ξη}⟩⟨ψ_{ξη′}|] = ρ`.
//!
//! Fields are stored as cell averages, so one step multiplies state `α` by
//! `exp(−i dt Σ_site J_α(site)(ξ + η))`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::csl::{matrix_from_features, outer_features, trace_distance_raw, DensityComparison, JACKKNIFE_GROUPS};
use crate::error::{Error, Result};
use crate::gaussian_field::{factor_kernel, sample_field, FieldSample, KernelPair, SamplingFactor};
use crate::hilbert::{CMatrix, CVector, ConfigurationBasis, DensityMatrix, LatticeOperator, OperatorKind, QuantumState, C64};
use crate::parallel::try_map_indices;
use crate::propagators::LatticeKernels;
use crate::rng::{Purpose, StreamRng};
use crate::stats::{self, Estimate};

/// Influence phase of a linearly coupled Gaussian environment, restricted to
/// couplings that are diagonal in one basis.
#[derive(Debug, Clone)]
pub struct InfluencePhase {
    kernels: LatticeKernels,
    relation: CMatrix,
    // Coupling eigenvalues, indexed [site][state]; already multiplied by g and a³.
    charges: Vec<Vec<f64>>,
    dim: usize,
}

impl InfluencePhase {
    /// `couplings[site]` is the integrated charge `a³ ĵ(site)` (including the
    /// coupling constant). `relation` is the cell-integrated `S`; `None` means
    /// a circular field.
    pub fn new(kernels: LatticeKernels, relation: Option<CMatrix>, couplings: &[LatticeOperator]) -> Result<Self> {
        let ns = kernels.lattice.n_sites();
        if couplings.len() != ns {
            return Err(Error::DimensionMismatch {
                expected: ns,
                got: couplings.len(),
            });
        }
        let dim = couplings[0].dim();
        let mut charges = Vec::with_capacity(ns);
        for op in couplings {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: op.dim(),
                });
            }
            match op.diagonal() {
                Some(d) => charges.push(d.to_vec()),
                None => {
                    return Err(Error::UnsupportedRegime(
                        "coupling operators must be diagonal in a common basis".into(),
                    ))
                }
            }
        }
        let n = kernels.lattice.dim();
        let relation = relation.unwrap_or_else(|| CMatrix::zeros(n, n));
        if relation.nrows() != n || relation.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: relation.nrows(),
            });
        }
        Ok(Self {
            kernels,
            relation,
            charges,
            dim,
        })
    }

    /// Point couplings `g × (particles on the site)`.
    pub fn point_couplings(
        kernels: LatticeKernels,
        relation: Option<CMatrix>,
        basis: &ConfigurationBasis,
        coupling: f64,
    ) -> Result<Self> {
        let ns = kernels.lattice.n_sites();
        let ops = (0..ns)
            .map(|site| {
                let d: Vec<f64> = (0..basis.dim())
                    .map(|i| coupling * basis.occupation(i, site) as f64)
                    .collect();
                LatticeOperator::from_diagonal(&d, OperatorKind::Coupling)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels, relation, &ops)
    }

    pub fn kernels(&self) -> &LatticeKernels {
        &self.kernels
    }

    pub fn relation(&self) -> &CMatrix {
        &self.relation
    }

    pub fn is_circular(&self) -> bool {
        self.relation.iter().all(|z| z.norm() == 0.0)
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.kernels.lattice.n_sites()
    }

    pub fn n_cells(&self) -> usize {
        self.kernels.lattice.n_cells
    }

    pub fn dt(&self) -> f64 {
        self.kernels.lattice.dt
    }

    /// Charge of basis state `state` on `site`.
    pub fn charge(&self, site: usize, state: usize) -> f64 {
        self.charges[site][state]
    }

    /// Source vector `J_α` over the first `n_cells` cells.
    pub fn sources(&self, state: usize, n_cells: usize) -> DVector<f64> {
        let ns = self.n_sites();
        DVector::from_fn(n_cells * ns, |k, _| self.charges[k % ns][state])
    }

    /// Exponent multiplying `ρ_αβ` after `n_cells` cells.
    pub fn exponent(&self, alpha: usize, beta: usize, n_cells: usize) -> C64 {
        let n = n_cells * self.n_sites();
        let k = self.kernels.full.view((0, 0), (n, n));
        let o = self.kernels.ordered.view((0, 0), (n, n));
        let ja = self.sources(alpha, n_cells).map(|v| C64::new(v, 0.0));
        let jb = self.sources(beta, n_cells).map(|v| C64::new(v, 0.0));
        let cross = ja.dot(&(k * &jb));
        let own_a = ja.dot(&(o * &ja));
        let own_b = jb.dot(&(o * &jb));
        cross - own_a - own_b.conj()
    }

    /// Relation the auxiliary field must carry, `O + Oᵀ − S`.
    pub fn auxiliary_relation(&self) -> CMatrix {
        let o = &self.kernels.ordered;
        o + o.transpose() - &self.relation
    }

    /// The relation `O + Oᵀ` for which no auxiliary field is needed.
    pub fn memory_free_relation(kernels: &LatticeKernels) -> CMatrix {
        &kernels.ordered + kernels.ordered.transpose()
    }
}

/// Exact reduced state after `n_cells` cells.
pub fn influence_phase_apply(phase: &InfluencePhase, rho: &DensityMatrix, n_cells: usize) -> Result<DensityMatrix> {
    if rho.dim() != phase.dim() {
        return Err(Error::DimensionMismatch {
            expected: phase.dim(),
            got: rho.dim(),
        });
    }
    if n_cells > phase.n_cells() {
        return Err(Error::invalid(
            "n_cells",
            format!("{n_cells} exceeds the {} cells of the kernel", phase.n_cells()),
        ));
    }
    let d = phase.dim();
    let mut out = rho.entries().clone();
    for a in 0..d {
        for b in 0..d {
            if a != b {
                out[(a, b)] *= phase.exponent(a, b, n_cells).exp();
            }
        }
    }
    DensityMatrix::hermitian_part(out)
}

/// Square root of a complex-symmetric relation, `E[ηηᵀ] = C`, built from four
/// real Gaussian blocks: `Re C = P₊ − P₋` and `Im C = Q₊ − Q₋` give
/// `η = F_{P+}g₁ + iF_{P−}g₂ + e^{iπ/4}F_{Q+}g₃ + e^{−iπ/4}F_{Q−}g₄`.
#[derive(Debug, Clone)]
pub struct AuxiliaryFactor {
    blocks: Vec<(DMatrix<f64>, C64)>,
    n: usize,
}

impl AuxiliaryFactor {
    pub fn new(relation: &CMatrix) -> Result<Self> {
        let n = relation.nrows();
        if relation.ncols() != n {
            return Err(Error::invalid("relation", "must be square"));
        }
        let asym = (relation - relation.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = relation.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        if asym > 1e-10 * scale {
            return Err(Error::invalid("relation", "must be complex symmetric"));
        }
        let re = DMatrix::from_fn(n, n, |i, j| 0.5 * (relation[(i, j)].re + relation[(j, i)].re));
        let im = DMatrix::from_fn(n, n, |i, j| 0.5 * (relation[(i, j)].im + relation[(j, i)].im));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phases = [
            (C64::new(1.0, 0.0), C64::new(0.0, 1.0)),
            (C64::new(s, s), C64::new(s, -s)),
        ];
        let mut blocks = Vec::with_capacity(4);
        for (m, (pos, neg)) in [re, im].into_iter().zip(phases) {
            let eig = SymmetricEigen::new(m);
            let mut fp = DMatrix::zeros(n, n);
            let mut fm = DMatrix::zeros(n, n);
            for (j, &l) in eig.eigenvalues.iter().enumerate() {
                let col = eig.eigenvectors.column(j) * l.abs().sqrt();
                if l >= 0.0 {
                    fp.set_column(j, &col);
                } else {
                    fm.set_column(j, &col);
                }
            }
            blocks.push((fp, pos));
            blocks.push((fm, neg));
        }
        Ok(Self { blocks, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Field for `4n` independent standard normals.
    pub fn apply(&self, normals: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for (k, (f, phase)) in self.blocks.iter().enumerate() {
            let g = DVector::from_column_slice(&normals[k * self.n..(k + 1) * self.n]);
            let v = f * g;
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += phase * *x;
            }
        }
        out
    }

    /// The relation actually realized, `Σ phase² F Fᵀ`.
    pub fn relation(&self) -> CMatrix {
        let mut c = CMatrix::zeros(self.n, self.n);
        for (f, phase) in &self.blocks {
            let ff_t = f * f.transpose();
            c += ff_t.map(|v| C64::new(v, 0.0)) * (phase * phase);
        }
        c
    }
}

/// Which part of the history enters the beable shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftWindow {
    /// Whole window up to the final time.
    FinalTime,
    /// Only cells up to the current one.
    Causal,
}

/// Samplers and propagators for one scenario.
#[derive(Debug, Clone)]
pub struct FieldUnraveling {
    phase: InfluencePhase,
    xi_pair: KernelPair,
    xi: SamplingFactor,
    aux: Option<AuxiliaryFactor>,
    unitary: Option<CMatrix>,
}

impl FieldUnraveling {
    /// `h0`, if given, is interleaved with the field steps (exact per cell).
    pub fn new(phase: InfluencePhase, h0: Option<&LatticeOperator>) -> Result<Self> {
        let dt = phase.dt();
        let inv = C64::new(1.0 / (dt * dt), 0.0);
        let xi_pair = KernelPair::new(&phase.kernels.full * inv, phase.relation() * inv, None)?;
        let xi = factor_kernel(&xi_pair)?;
        let c = phase.auxiliary_relation();
        let cscale = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let kscale = phase.kernels.full.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let aux = if cscale <= 1e-14 * kscale {
            None
        } else {
            Some(AuxiliaryFactor::new(&(c * inv))?)
        };
        let unitary = match h0 {
            Some(h) => {
                if h.dim() != phase.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: phase.dim(),
                        got: h.dim(),
                    });
                }
                let eig = SymmetricEigen::new(h.entries().clone());
                let v = &eig.eigenvectors;
                let ph = CMatrix::from_diagonal(&CVector::from_iterator(
                    h.dim(),
                    eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * dt)),
                ));
                Some(v * ph * v.adjoint())
            }
            None => None,
        };
        Ok(Self {
            phase,
            xi_pair,
            xi,
            aux,
            unitary,
        })
    }

    pub fn phase(&self) -> &InfluencePhase {
        &self.phase
    }

    /// The a-priori measure of the cell-averaged field.
    pub fn field_kernels(&self) -> &KernelPair {
        &self.xi_pair
    }

    pub fn needs_auxiliary(&self) -> bool {
        self.aux.is_some()
    }

    pub fn has_free_evolution(&self) -> bool {
        self.unitary.is_some()
    }

    pub fn sample_field(&self, seed: u64, index: u64) -> FieldSample {
        sample_field(&self.xi, seed, index)
    }

    /// Auxiliary draw; `purpose` separates the ket (`Auxiliary`) and bra
    /// (`AuxiliaryConjugate`) streams.
    pub fn sample_auxiliary(&self, seed: u64, index: u64, purpose: Purpose) -> FieldSample {
        let n = self.phase.kernels.lattice.dim();
        let values = match &self.aux {
            Some(f) => {
                let mut rng = StreamRng::new(seed, purpose, index);
                let mut g = vec![0.0; 4 * n];
                rng.fill_normal(&mut g);
                f.apply(&g)
            }
            None => vec![C64::new(0.0, 0.0); n],
        };
        FieldSample { values, seed, index }
    }

    /// Linear state after all cells for given ξ and η.
    pub fn evolve(&self, psi0: &QuantumState, xi: &FieldSample, eta: &FieldSample) -> Result<QuantumState> {
        let mut psi = psi0.amplitudes().clone();
        for cell in 0..self.phase.n_cells() {
            if let Some(u) = &self.unitary {
                psi = u * psi;
            }
            apply_cell(&self.phase, &mut psi, &xi.values, &eta.values, cell)?;
        }
        QuantumState::new(psi)
    }

    /// Linear state conditioned on ξ alone, with the auxiliary field averaged
    /// out in closed form: `ψ_α · exp(−iJ_α·X − ½ J_α C J_α)`. States are
    /// returned at the start of every cell and at the end.
    pub fn conditional_history(&self, psi0: &QuantumState, xi: &FieldSample) -> Result<Vec<QuantumState>> {
        if self.unitary.is_some() {
            return Err(Error::UnsupportedRegime(
                "closed-form conditional states need H₀ = 0".into(),
            ));
        }
        let ns = self.phase.n_sites();
        let nc = self.phase.n_cells();
        let dt = self.phase.dt();
        let c = self.phase.auxiliary_relation();
        let mut out = Vec::with_capacity(nc + 1);
        for upto in 0..=nc {
            let n = upto * ns;
            let cv = c.view((0, 0), (n, n));
            let amps = CVector::from_fn(self.phase.dim(), |alpha, _| {
                let j = self.phase.sources(alpha, upto).map(|v| C64::new(v, 0.0));
                let drive: C64 = (0..n).map(|k| j[k] * xi.values[k]).sum::<C64>() * dt;
                let memory = j.dot(&(cv * &j));
                psi0.amplitudes()[alpha] * (C64::new(0.0, -1.0) * drive - 0.5 * memory).exp()
            });
            out.push(QuantumState::new(amps)?);
        }
        Ok(out)
    }
}

fn apply_cell(phase: &InfluencePhase, psi: &mut CVector, xi: &[C64], eta: &[C64], cell: usize) -> Result<()> {
    let ns = phase.n_sites();
    let dt = phase.dt();
    let base = cell * ns;
    if xi.len() < base + ns || eta.len() < base + ns {
        return Err(Error::DimensionMismatch {
            expected: phase.kernels.lattice.dim(),
            got: xi.len().min(eta.len()),
        });
    }
    for (alpha, z) in psi.iter_mut().enumerate() {
        let mut arg = C64::new(0.0, 0.0);
        for site in 0..ns {
            arg += (xi[base + site] + eta[base + site]) * phase.charges[site][alpha];
        }
        *z *= (C64::new(0.0, -dt) * arg).exp();
    }
    if psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure {
            step: cell,
            what: "field step overflowed".into(),
        })
    }
}

/// One field step for time cell `step`.
pub fn step_linear_nonmarkov(
    psi: &QuantumState,
    xi: &FieldSample,
    eta: &FieldSample,
    phase: &InfluencePhase,
    step: usize,
) -> Result<QuantumState> {
    if step >= phase.n_cells() {
        return Err(Error::invalid("step", format!("cell {step} outside the kernel window")));
    }
    let mut v = psi.amplitudes().clone();
    apply_cell(phase, &mut v, &xi.values, &eta.values, step)?;
    QuantumState::new(v)
}

/// One member of a field ensemble: the ket uses η, the bra an independent η′.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub xi: FieldSample,
    pub ket: QuantumState,
    pub bra: QuantumState,
}

/// Runs `n` members; member `i` draws ξ, η and η′ from streams `(seed, i)`.
pub fn run_field_ensemble(
    unraveling: &FieldUnraveling,
    psi0: &QuantumState,
    n: usize,
    seed: u64,
) -> Result<Vec<FieldTrajectory>> {
    if psi0.dim() != unraveling.phase.dim() {
        return Err(Error::DimensionMismatch {
            expected: unraveling.phase.dim(),
            got: psi0.dim(),
        });
    }
    let psi0 = psi0.normalized()?;
    try_map_indices(n, |i| {
        let index = i as u64;
        let xi = unraveling.sample_field(seed, index);
        let eta = unraveling.sample_auxiliary(seed, index, Purpose::Auxiliary);
        let ket = unraveling.evolve(&psi0, &xi, &eta)?;
        let bra = if unraveling.needs_auxiliary() {
            let eta2 = unraveling.sample_auxiliary(seed, index, Purpose::AuxiliaryConjugate);
            unraveling.evolve(&psi0, &xi, &eta2)?
        } else {
            ket.clone()
        };
        Ok(FieldTrajectory { xi, ket, bra })
    })
}

/// Trace distance between `E[|ket⟩⟨bra|]` and a reference state.
pub fn unraveling_check(trajectories: &[FieldTrajectory], reference: &DensityMatrix) -> Result<DensityComparison> {
    let n = reference.dim();
    if trajectories.len() < 2 {
        return Err(Error::DegenerateEnsemble("need at least two samples".into()));
    }
    let feats: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|t| outer_features(t.ket.amplitudes(), t.bra.amplitudes(), 1.0))
        .collect();
    let target = reference.entries().clone();
    let (td, se) = stats::jackknife(&feats, JACKKNIFE_GROUPS, |m| {
        trace_distance_raw(&matrix_from_features(m, n), &target)
    });
    Ok(DensityComparison {
        trace_distance: td,
        jackknife_se: se,
        n: trajectories.len(),
    })
}

/// Field samples under a reweighted ("cooked") measure.
#[derive(Debug, Clone)]
pub struct WeightedFieldEnsemble {
    pub samples: Vec<FieldSample>,
    weights: Vec<f64>,
    /// Per-sample shifts with ξ̃ = ξ + shift, when recorded.
    pub beable_shifts: Option<Vec<Vec<C64>>>,
}

impl WeightedFieldEnsemble {
    pub fn new(samples: Vec<FieldSample>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::DegenerateEnsemble("weights must be finite and non-negative".into()));
        }
        if !(stats::pairwise_sum(&weights) > 0.0) {
            return Err(Error::DegenerateEnsemble("all weights vanish".into()));
        }
        Ok(Self {
            samples,
            weights,
            beable_shifts: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Plain mean of the weights with its standard error.
    pub fn weight_estimate(&self) -> Estimate {
        Estimate::from_samples(&self.weights)
    }

    /// Self-normalized expectation of a real functional.
    pub fn expectation<F: Fn(&FieldSample) -> f64>(&self, f: F) -> Estimate {
        let xs: Vec<f64> = self.samples.iter().map(f).collect();
        Estimate::weighted(&xs, &self.weights)
    }

    /// Self-normalized `E[ξ_a ξ_b*]` as real and imaginary estimates.
    pub fn two_point(&self, a: usize, b: usize) -> (Estimate, Estimate) {
        let re = self.expectation(|s| (s.values[a] * s.values[b].conj()).re);
        let im = self.expectation(|s| (s.values[a] * s.values[b].conj()).im);
        (re, im)
    }

    /// Self-normalized mean of `ξ_a`.
    pub fn mean(&self, a: usize) -> (Estimate, Estimate) {
        (self.expectation(|s| s.values[a].re), self.expectation(|s| s.values[a].im))
    }

    pub fn with_beable_shifts(mut self, shifts: Vec<Vec<C64>>) -> Result<Self> {
        if shifts.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                got: shifts.len(),
            });
        }
        self.beable_shifts = Some(shifts);
        Ok(self)
    }

    /// ξ̃ of sample `i`, if shifts were recorded.
    pub fn beable_field(&self, i: usize) -> Option<Vec<C64>> {
        self.beable_shifts
            .as_ref()
            .map(|s| self.samples[i].values.iter().zip(&s[i]).map(|(x, d)| x + d).collect())
    }
}

/// Weights each field sample by `⟨ψ_ξ|ψ_ξ⟩` at the final time.
pub fn girsanov_field_measure(samples: Vec<FieldSample>, final_states: &[QuantumState]) -> Result<WeightedFieldEnsemble> {
    if samples.len() != final_states.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: final_states.len(),
        });
    }
    if let Some(i) = final_states.iter().position(|s| !(s.norm_sqr() > 0.0)) {
        return Err(Error::DegenerateTrajectory { step: i });
    }
    let w = final_states.iter().map(|s| s.norm_sqr()).collect();
    WeightedFieldEnsemble::new(samples, w)
}

/// Initial state and final-time effect for generalized boundary conditions.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    pub rho_in: DensityMatrix,
    pub rho_out: CMatrix,
}

impl BoundarySpec {
    pub fn new(rho_in: DensityMatrix, rho_out: CMatrix) -> Result<Self> {
        if rho_out.nrows() != rho_in.dim() || rho_out.ncols() != rho_in.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho_in.dim(),
                got: rho_out.nrows(),
            });
        }
        let out = DensityMatrix::hermitian_part(rho_out.clone())?;
        let eig = crate::hilbert::hermitian_eigenvalues(out.entries());
        let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::invalid("rho_out", "must be nonzero"));
        }
        if let Some(&bad) = eig.iter().find(|&&l| l < -1e-12 * scale) {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: bad,
                floor: 1e-12 * scale,
            });
        }
        Ok(Self { rho_in, rho_out })
    }

    /// Standard boundary: final effect is the identity.
    pub fn standard(rho_in: DensityMatrix) -> Result<Self> {
        let n = rho_in.dim();
        Self::new(rho_in, CMatrix::identity(n, n))
    }
}

/// Weights each sample by `⟨ψ_ξ|ρ_out|ψ_ξ⟩`.
pub fn boundary_reweight(
    samples: Vec<FieldSample>,
    boundary: &BoundarySpec,
    final_states: &[QuantumState],
) -> Result<WeightedFieldEnsemble> {
    if samples.len() != final_states.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: final_states.len(),
        });
    }
    let w: Vec<f64> = final_states
        .iter()
        .map(|s| {
            let v = s.amplitudes();
            v.dotc(&(&boundary.rho_out * v)).re.max(0.0)
        })
        .collect();
    if w.iter().all(|&x| x <= 1e-300) {
        return Err(Error::DegenerateEnsemble(
            "every sample has zero overlap with the final boundary".into(),
        ));
    }
    WeightedFieldEnsemble::new(samples, w)
}

/// Shift `ξ̃ − ξ` for one trajectory, in cell-averaged units:
/// `shift_a = (i/dt) Σ_b K_ab ⟨a³ĵ⟩_b`.
///
/// `states[c]` is the state at the start of cell `c`; it need not be
/// normalized. Only defined for circular fields.
pub fn beable_shift(states: &[QuantumState], phase: &InfluencePhase, window: ShiftWindow) -> Result<Vec<C64>> {
    if !phase.is_circular() {
        return Err(Error::UnsupportedRegime(
            "the beable shift is only derived for a circular field (S = 0)".into(),
        ));
    }
    let ns = phase.n_sites();
    let nc = phase.n_cells();
    if states.len() < nc {
        return Err(Error::DimensionMismatch {
            expected: nc,
            got: states.len(),
        });
    }
    let mut q = vec![0.0; nc * ns];
    for (c, s) in states.iter().take(nc).enumerate() {
        let p = s.probabilities();
        let norm = s.norm_sqr();
        if !(norm > 0.0) {
            return Err(Error::DegenerateTrajectory { step: c });
        }
        for site in 0..ns {
            q[c * ns + site] = p.iter().zip(&phase.charges[site]).map(|(p, j)| p * j).sum::<f64>() / norm;
        }
    }
    let k = &phase.kernels.full;
    let dt = phase.dt();
    let n = nc * ns;
    Ok((0..n)
        .map(|a| {
            let limit = match window {
                ShiftWindow::FinalTime => n,
                ShiftWindow::Causal => (a / ns + 1) * ns,
            };
            let s: C64 = (0..limit).map(|b| k[(a, b)] * q[b]).sum();
            C64::new(0.0, 1.0) * s / dt
        })
        .collect())
}

/// Closed-form `E[ξ_a ξ_b*]` under the cooked measure for an initial state
/// with populations `probs` and H₀ = 0, circular field:
/// `(K + Σ_α p_α (K J_α)(J_α K)) / dt²`.
pub fn cooked_two_point(phase: &InfluencePhase, probs: &[f64]) -> Result<CMatrix> {
    if probs.len() != phase.dim() {
        return Err(Error::DimensionMismatch {
            expected: phase.dim(),
            got: probs.len(),
        });
    }
    if !phase.is_circular() {
        return Err(Error::UnsupportedRegime("closed form assumes S = 0".into()));
    }
    let k = &phase.kernels.full;
    let nc = phase.n_cells();
    let mut out = k.clone();
    for (alpha, &p) in probs.iter().enumerate() {
        let j = phase.sources(alpha, nc).map(|v| C64::new(v, 0.0));
        let kj = k * &j;
        out += &kj * kj.adjoint() * C64::new(p, 0.0);
    }
    let dt = phase.dt();
    Ok(out / C64::new(dt * dt, 0.0))
}

/// Closed-form cooked mean of the field when the final boundary projects on
/// basis state `alpha`: `i K J_α / dt`.
pub fn conditioned_field_mean(phase: &InfluencePhase, alpha: usize) -> Result<Vec<C64>> {
    if !phase.is_circular() {
        return Err(Error::UnsupportedRegime("closed form assumes S = 0".into()));
    }
    let j = phase.sources(alpha, phase.n_cells()).map(|v| C64::new(v, 0.0));
    let kj = &phase.kernels.full * j;
    let dt = phase.dt();
    Ok(kj.iter().map(|z| C64::new(0.0, 1.0) * z / dt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagators::{omega_from_quadrature, PropagatorSpec, SpacetimeLattice};

    fn phase(g: f64, r: f64, dt: f64, cells: usize) -> InfluencePhase {
        let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
        let lat = SpacetimeLattice::new(vec![[0.0; 3], [r, 0.0, 0.0]], dt, cells).unwrap();
        let k = LatticeKernels::build(&spec, &lat).unwrap();
        let basis = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        InfluencePhase::point_couplings(k, None, &basis, g).unwrap()
    }

    fn plus() -> QuantumState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        QuantumState::from_real(&[h, h]).unwrap()
    }

    #[test]
    fn zero_coupling_leaves_state_alone() {
        let p = phase(0.0, 1.0, 0.5, 4);
        let rho = DensityMatrix::pure(&plus()).unwrap();
        let out = influence_phase_apply(&p, &rho, 4).unwrap();
        assert_eq!(out.entries(), rho.entries());
        let u = FieldUnraveling::new(p.clone(), None).unwrap();
        let xi = u.sample_field(1, 0);
        let eta = u.sample_auxiliary(1, 0, Purpose::Auxiliary);
        let s = step_linear_nonmarkov(&plus(), &xi, &eta, &p, 0).unwrap();
        assert_eq!(s.amplitudes(), plus().amplitudes());
    }

    #[test]
    fn coherence_suppression_matches_quadrature() {
        let (r, dt, cells) = (1.0, 0.5, 8);
        let p = phase(1.0, r, dt, cells);
        let rho = DensityMatrix::pure(&plus()).unwrap();
        let out = influence_phase_apply(&p, &rho, cells).unwrap();
        // diagonal untouched, trace kept
        assert!((out.get(0, 0).re - 0.5).abs() < 1e-15);
        assert!((out.trace() - 1.0).abs() < 1e-14);
        let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
        let omega = omega_from_quadrature(&spec, r, dt * cells as f64).unwrap();
        let factor = out.get(0, 1).norm() / 0.5;
        assert!((factor - (2.0 * omega).exp()).abs() < 1e-6, "{factor} vs {}", (2.0 * omega).exp());
    }

    #[test]
    fn auxiliary_factor_realizes_relation() {
        let p = phase(1.0, 1.0, 0.5, 3);
        let c = p.auxiliary_relation();
        let f = AuxiliaryFactor::new(&c).unwrap();
        let err = (f.relation() - &c).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn non_diagonal_coupling_is_rejected() {
        let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
        let lat = SpacetimeLattice::new(vec![[0.0; 3]], 0.5, 2).unwrap();
        let k = LatticeKernels::build(&spec, &lat).unwrap();
        let x = CMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let op = LatticeOperator::new(x, OperatorKind::Coupling).unwrap();
        assert!(matches!(InfluencePhase::new(k, None, &[op]), Err(Error::UnsupportedRegime(_))));
    }

    #[test]
    fn conditional_state_matches_eta_average_in_law() {
        // With η averaged analytically the weight mean is still one
        let p = phase(1.0, 1.0, 0.5, 4);
        let u = FieldUnraveling::new(p, None).unwrap();
        let w: Vec<f64> = (0..4000)
            .map(|i| {
                let xi = u.sample_field(3, i);
                u.conditional_history(&plus(), &xi).unwrap().last().unwrap().norm_sqr()
            })
            .collect();
        assert!(Estimate::from_samples(&w).within(1.0, 3.0));
    }

    #[test]
    fn beable_shift_requires_circular_field() {
        let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
        let lat = SpacetimeLattice::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], 0.5, 2).unwrap();
        let k = LatticeKernels::build(&spec, &lat).unwrap();
        let s = k.full.clone() * C64::new(0.1, 0.0);
        let basis = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        let p = InfluencePhase::point_couplings(k, Some(s), &basis, 1.0).unwrap();
        let states = vec![plus(); 2];
        assert!(matches!(
            beable_shift(&states, &p, ShiftWindow::FinalTime),
            Err(Error::UnsupportedRegime(_))
        ));
    }

    #[test]
    fn beable_shift_is_linear_in_coupling() {
        let states = vec![QuantumState::from_real(&[0.6, 0.8]).unwrap(); 4];
        let a = beable_shift(&states, &phase(0.5, 1.0, 0.5, 4), ShiftWindow::FinalTime).unwrap();
        let b = beable_shift(&states, &phase(1.0, 1.0, 0.5, 4), ShiftWindow::FinalTime).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x * 2.0).norm() <= 1e-15 * y.norm());
        }
        let zero = beable_shift(&states, &phase(0.0, 1.0, 0.5, 4), ShiftWindow::FinalTime).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn orthogonal_boundaries_without_coupling_are_degenerate() {
        let p = phase(0.0, 1.0, 0.5, 2);
        let u = FieldUnraveling::new(p, None).unwrap();
        let psi0 = QuantumState::basis_state(2, 0).unwrap();
        let samples: Vec<FieldSample> = (0..50).map(|i| u.sample_field(1, i)).collect();
        let finals: Vec<QuantumState> = samples
            .iter()
            .map(|x| u.conditional_history(&psi0, x).unwrap().pop().unwrap())
            .collect();
        let mut out = CMatrix::zeros(2, 2);
        out[(1, 1)] = C64::new(1.0, 0.0);
        let b = BoundarySpec::new(DensityMatrix::pure(&psi0).unwrap(), out).unwrap();
        assert!(matches!(
            boundary_reweight(samples, &b, &finals),
            Err(Error::DegenerateEnsemble(_))
        ));
    }
}
