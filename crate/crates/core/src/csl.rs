//! Markovian continuous spontaneous localization.
//!
//! The linear equation
//!
//! ```text
//! dψ = [−iH₀ + √γ Σ_x a³ M(x) w(x) − (γ/2) Σ_x a³ M(x)²] ψ dt
//! ```
//!
//! is read in the Itô sense with `w` white noise of variance `1/(dt a³)` per
//! cell. Under the reference measure its ensemble average `E[|ψ⟩⟨ψ|]` solves the
//! Lindblad equation with double-commutator rate `γ/2`, and `⟨ψ|ψ⟩` is the
//! Girsanov density of the physical measure. The normalized equation uses the
//! centered operators `M − ⟨M⟩` and keeps `‖ψ̃‖ = 1`.
//!
//! Steps are Lie–Trotter split: the exact free propagator `exp(−iH₀dt)` first,
//! then an Euler–Maruyama collapse increment.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    evolve_lindblad, CMatrix, CVector, ConfigurationBasis, CslParams, DensityMatrix, LatticeGrid, LatticeOperator,
    QuantumState, C64,
};
use crate::hilbert::{build_mass_density, LindbladGenerator, LindbladOptions};
use crate::parallel::try_map_indices;
use crate::rng::{Purpose, StreamRng};
use crate::stats::{self, chi_square_gof, weighted_line_fit, Estimate, LineFit};

/// Largest admissible `γ·max(M)²·a³·dt`. Beyond this the Euler–Maruyama
/// multiplier is no longer a small perturbation of the identity.
pub const MAX_STEP_STIFFNESS: f64 = 1e-2;

/// Everything needed to advance a state by one time step.
#[derive(Debug, Clone)]
pub struct CslDynamics {
    gamma: f64,
    dt: f64,
    volume: f64,
    dim: usize,
    ops: Vec<LatticeOperator>,
    unitary: Option<CMatrix>,
    // Per-site diagonals when every M(x) is diagonal, indexed [site][state].
    diag: Option<Vec<Vec<f64>>>,
    // Σ_x a³ M(x)² on the diagonal fast path.
    diag_square: Vec<f64>,
    dense_square: Option<CMatrix>,
}

impl CslDynamics {
    /// Collapse operators `ops` are indexed by grid point. `dt` and `a³` come
    /// from `grid`.
    pub fn new(grid: &LatticeGrid, ops: Vec<LatticeOperator>, h0: Option<&LatticeOperator>, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be >= 0, got {gamma}")));
        }
        if ops.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: ops.len(),
            });
        }
        let dim = ops
            .first()
            .map(|m| m.dim())
            .or_else(|| h0.map(|h| h.dim()))
            .ok_or_else(|| Error::invalid("ops", "empty operator list"))?;
        for op in ops.iter().chain(h0) {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: op.dim(),
                });
            }
        }
        let dt = grid.dt();
        let volume = grid.volume_element();

        let max_eig = ops
            .iter()
            .map(|m| match m.diagonal() {
                Some(d) => d.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                None => crate::hilbert::hermitian_eigenvalues(m.entries())
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs())),
            })
            .fold(0.0f64, f64::max);
        let stiffness = gamma * max_eig * max_eig * volume * dt;
        if stiffness > MAX_STEP_STIFFNESS {
            return Err(Error::invalid(
                "dt",
                format!("γ·max(M)²·a³·dt = {stiffness:.3e} exceeds {MAX_STEP_STIFFNESS:e}; reduce the time step"),
            ));
        }

        let unitary = h0.map(|h| free_propagator(h.entries(), dt));
        let all_diag = ops.iter().all(|m| m.is_diagonal());
        let (diag, diag_square, dense_square) = if all_diag {
            let d: Vec<Vec<f64>> = ops.iter().map(|m| m.diagonal().expect("diagonal").to_vec()).collect();
            let sq = (0..dim)
                .map(|i| d.iter().map(|row| volume * row[i] * row[i]).sum())
                .collect();
            (Some(d), sq, None)
        } else {
            let mut sq = CMatrix::zeros(dim, dim);
            for m in &ops {
                sq += m.entries() * m.entries() * C64::new(volume, 0.0);
            }
            (None, Vec::new(), Some(sq))
        };
        Ok(Self {
            gamma,
            dt,
            volume,
            dim,
            ops,
            unitary,
            diag,
            diag_square,
            dense_square,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of noise components per step (one per grid point).
    pub fn n_sites(&self) -> usize {
        self.ops.len()
    }

    pub fn operators(&self) -> &[LatticeOperator] {
        &self.ops
    }

    /// Standard deviation of one white-noise entry, `1/√(dt a³)`.
    pub fn noise_scale(&self) -> f64 {
        1.0 / (self.dt * self.volume).sqrt()
    }

    /// Draws one time slice of white noise.
    pub fn draw_noise(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let s = self.noise_scale();
        for v in out.iter_mut() {
            *v = s * rng.normal();
        }
    }

    /// `⟨M(x)⟩` at every grid point, normalized by the state norm.
    pub fn expectations(&self, psi: &CVector) -> Vec<f64> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        match &self.diag {
            Some(d) => d
                .iter()
                .map(|row| psi.iter().zip(row).map(|(z, m)| z.norm_sqr() * m).sum::<f64>() / norm)
                .collect(),
            None => self.ops.iter().map(|m| psi.dotc(&m.apply(psi)).re / norm).collect(),
        }
    }

    fn check_noise(&self, noise: &[f64]) -> Result<()> {
        if noise.len() != self.ops.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ops.len(),
                got: noise.len(),
            });
        }
        Ok(())
    }

    fn apply_free(&self, psi: &mut CVector) {
        if let Some(u) = &self.unitary {
            *psi = u * &*psi;
        }
    }

    /// One step of the linear equation, in place.
    pub fn step_linear(&self, psi: &mut CVector, noise: &[f64], step: usize) -> Result<()> {
        self.check_noise(noise)?;
        self.apply_free(psi);
        let sg = self.gamma.sqrt();
        let half = 0.5 * self.gamma;
        let dt = self.dt;
        match &self.diag {
            Some(d) => {
                for (i, z) in psi.iter_mut().enumerate() {
                    let drive: f64 = d.iter().zip(noise).map(|(row, w)| row[i] * w).sum::<f64>() * self.volume;
                    *z *= 1.0 + dt * (sg * drive - half * self.diag_square[i]);
                }
            }
            None => {
                let mut inc = CVector::zeros(self.dim);
                for (m, &w) in self.ops.iter().zip(noise) {
                    inc += m.apply(psi) * C64::new(sg * self.volume * w, 0.0);
                }
                let sq = self.dense_square.as_ref().expect("dense path");
                inc -= sq * &*psi * C64::new(half, 0.0);
                *psi += inc * C64::new(dt, 0.0);
            }
        }
        check_finite(psi, step)
    }

    /// One step of the normalized equation, in place. The result has unit
    /// norm.
    pub fn step_normalized(&self, psi: &mut CVector, noise: &[f64], step: usize) -> Result<()> {
        self.check_noise(noise)?;
        let n0: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (n0 - 1.0).abs() > 1e-8 {
            return Err(Error::invalid("psi_tilde", format!("norm² is {n0}, expected 1")));
        }
        self.apply_free(psi);
        let sg = self.gamma.sqrt();
        let half = 0.5 * self.gamma;
        let dt = self.dt;
        let means = self.expectations(psi);
        match &self.diag {
            Some(d) => {
                for (i, z) in psi.iter_mut().enumerate() {
                    let mut drive = 0.0;
                    let mut sq = 0.0;
                    for ((row, w), mean) in d.iter().zip(noise).zip(&means) {
                        let c = row[i] - mean;
                        drive += c * w;
                        sq += c * c;
                    }
                    *z *= 1.0 + dt * self.volume * (sg * drive - half * sq);
                }
            }
            None => {
                let mut inc = CVector::zeros(self.dim);
                for ((m, &w), &mean) in self.ops.iter().zip(noise).zip(&means) {
                    let mut centered = m.apply(psi);
                    centered.axpy(C64::new(-mean, 0.0), psi, C64::new(1.0, 0.0));
                    let mut twice = m.apply(&centered);
                    twice.axpy(C64::new(-mean, 0.0), &centered, C64::new(1.0, 0.0));
                    inc += centered * C64::new(sg * self.volume * w, 0.0);
                    inc -= twice * C64::new(half * self.volume, 0.0);
                }
                *psi += inc * C64::new(dt, 0.0);
            }
        }
        check_finite(psi, step)?;
        let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(n > 0.0) {
            return Err(Error::DegenerateTrajectory { step });
        }
        psi.unscale_mut(n.sqrt());
        Ok(())
    }
}

/// `exp(−iH dt)` through the eigendecomposition of a Hermitian `H`.
fn free_propagator(h: &CMatrix, dt: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = CMatrix::from_diagonal(&CVector::from_iterator(
        h.nrows(),
        eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * dt)),
    ));
    v * phases * v.adjoint()
}

fn check_finite(psi: &CVector, step: usize) -> Result<()> {
    if psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure {
            step,
            what: "state amplitude overflowed or became NaN".into(),
        })
    }
}

/// Advances a linear state by one step.
pub fn step_linear_sse(psi: &QuantumState, noise_slice: &[f64], dynamics: &CslDynamics) -> Result<QuantumState> {
    let mut v = psi.amplitudes().clone();
    dynamics.step_linear(&mut v, noise_slice, 0)?;
    QuantumState::new(v)
}

/// Advances a unit-norm state by one step of the normalized equation.
pub fn step_normalized_sse(psi_tilde: &QuantumState, noise: &[f64], dynamics: &CslDynamics) -> Result<QuantumState> {
    let mut v = psi_tilde.amplitudes().clone();
    dynamics.step_normalized(&mut v, noise, 0)?;
    QuantumState::new(v)
}

/// Stored white noise `w[step][site]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteNoiseRealization {
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
    pub index: u64,
}

impl WhiteNoiseRealization {
    /// Draws `n_steps` slices from stream `(seed, index)`. The draw order matches
    /// the one used by the ensemble runners.
    pub fn draw(dynamics: &CslDynamics, n_steps: usize, seed: u64, index: u64) -> Self {
        let mut rng = StreamRng::new(seed, Purpose::WhiteNoise, index);
        let values = (0..n_steps)
            .map(|_| {
                let mut v = vec![0.0; dynamics.n_sites()];
                dynamics.draw_noise(&mut rng, &mut v);
                v
            })
            .collect();
        Self { values, seed, index }
    }

    /// Noise identically zero.
    pub fn zeros(n_steps: usize, n_sites: usize) -> Self {
        Self {
            values: vec![vec![0.0; n_sites]; n_steps],
            seed: 0,
            index: 0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }
}

/// Which stochastic equation produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unraveling {
    /// Linear equation under the reference measure; `noise` is `w`.
    Linear,
    /// Normalized equation under the physical measure; `noise` is `b`.
    Normalized,
}

/// A fully stored trajectory, initial state included.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: Unraveling,
    pub states: Vec<QuantumState>,
    pub times: Vec<f64>,
    /// `⟨ψ|ψ⟩` of the final linear state; 1 for normalized trajectories.
    pub weight: f64,
    pub noise: WhiteNoiseRealization,
}

impl Trajectory {
    pub fn seed(&self) -> u64 {
        self.noise.seed
    }
}

/// Runs one trajectory driven by the given noise.
pub fn run_trajectory(
    dynamics: &CslDynamics,
    initial: &QuantumState,
    kind: Unraveling,
    noise: WhiteNoiseRealization,
) -> Result<Trajectory> {
    let mut psi = match kind {
        Unraveling::Linear => initial.amplitudes().clone(),
        Unraveling::Normalized => initial.normalized()?.into_amplitudes(),
    };
    let mut states = Vec::with_capacity(noise.n_steps() + 1);
    let mut times = Vec::with_capacity(noise.n_steps() + 1);
    states.push(QuantumState::new(psi.clone())?);
    times.push(0.0);
    for (step, slice) in noise.values.iter().enumerate() {
        match kind {
            Unraveling::Linear => dynamics.step_linear(&mut psi, slice, step)?,
            Unraveling::Normalized => dynamics.step_normalized(&mut psi, slice, step)?,
        }
        states.push(QuantumState::new(psi.clone())?);
        times.push((step + 1) as f64 * dynamics.dt());
    }
    let weight = match kind {
        Unraveling::Linear => states.last().expect("nonempty").norm_sqr(),
        Unraveling::Normalized => 1.0,
    };
    Ok(Trajectory {
        kind,
        states,
        times,
        weight,
        noise,
    })
}

/// Normalized states along a linear trajectory together with its final
/// Girsanov weight `⟨ψ|ψ⟩`.
pub fn girsanov_normalize(traj: &Trajectory) -> Result<(Vec<QuantumState>, f64)> {
    let states = traj
        .states
        .iter()
        .enumerate()
        .map(|(step, s)| s.normalized().map_err(|_| Error::DegenerateTrajectory { step }))
        .collect::<Result<Vec<_>>>()?;
    let weight = traj.states.last().map(|s| s.norm_sqr()).unwrap_or(1.0);
    Ok((states, weight))
}

/// The field `w_s(x)` that drives the linear equation along `traj`.
///
/// For a normalized trajectory this is `2√γ⟨M(x)⟩_s + b_s(x)`, evaluated with
/// the state at the start of step `s`; for a linear trajectory it is the
/// stored noise itself.
pub fn signal_field(traj: &Trajectory, dynamics: &CslDynamics) -> Result<Vec<Vec<f64>>> {
    match traj.kind {
        Unraveling::Linear => Ok(traj.noise.values.clone()),
        Unraveling::Normalized => {
            let sg2 = 2.0 * dynamics.gamma().sqrt();
            traj.noise
                .values
                .iter()
                .zip(&traj.states)
                .map(|(b, state)| {
                    let means = dynamics.expectations(state.amplitudes());
                    if means.len() != b.len() {
                        return Err(Error::DimensionMismatch {
                            expected: means.len(),
                            got: b.len(),
                        });
                    }
                    Ok(means.iter().zip(b).map(|(m, b)| sg2 * m + b).collect())
                })
                .collect()
        }
    }
}

/// Ensemble settings shared by the runners below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Record a summary row every this many steps (and at the end).
    pub record_every: usize,
    /// Grid points whose `⟨M(x)⟩` is recorded.
    pub probes: Vec<usize>,
}

impl EnsembleSettings {
    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::invalid("n_trajectories", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be >= 1"));
        }
        if let Some(&p) = self.probes.iter().find(|&&p| p >= n_sites) {
            return Err(Error::invalid("probes", format!("probe {p} outside a grid of {n_sites} points")));
        }
        Ok(())
    }
}

/// One recorded point along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: f64,
    pub weight: f64,
    pub probes: Vec<f64>,
    /// Linear runs: relative drift of the cached norm. Normalized runs:
    /// `|‖ψ̃‖ − 1|`.
    pub norm_error: f64,
}

/// Compact record of one ensemble member.
#[derive(Debug, Clone)]
pub struct TrajectorySummary {
    pub index: u64,
    pub rows: Vec<SummaryRow>,
    pub final_state: QuantumState,
}

/// Runs an ensemble without storing full state histories. Member `i` uses
/// white-noise stream `(seed, i)`.
pub fn run_ensemble(
    dynamics: &CslDynamics,
    initial: &QuantumState,
    kind: Unraveling,
    settings: &EnsembleSettings,
) -> Result<Vec<TrajectorySummary>> {
    settings.validate(dynamics.n_sites())?;
    if initial.dim() != dynamics.dim() {
        return Err(Error::DimensionMismatch {
            expected: dynamics.dim(),
            got: initial.dim(),
        });
    }
    let start = initial.normalized()?.into_amplitudes();
    try_map_indices(settings.n_trajectories, |i| {
        let index = i as u64;
        let mut rng = StreamRng::new(settings.seed, Purpose::WhiteNoise, index);
        let mut noise = vec![0.0; dynamics.n_sites()];
        let mut psi = start.clone();
        let mut rows = Vec::with_capacity(settings.n_steps / settings.record_every + 2);
        rows.push(summary_row(dynamics, &psi, 0.0, kind, &settings.probes));
        for step in 0..settings.n_steps {
            dynamics.draw_noise(&mut rng, &mut noise);
            match kind {
                Unraveling::Linear => dynamics.step_linear(&mut psi, &noise, step)?,
                Unraveling::Normalized => dynamics.step_normalized(&mut psi, &noise, step)?,
            }
            let done = step + 1;
            if done % settings.record_every == 0 || done == settings.n_steps {
                rows.push(summary_row(dynamics, &psi, done as f64 * dynamics.dt(), kind, &settings.probes));
            }
        }
        Ok(TrajectorySummary {
            index,
            rows,
            final_state: QuantumState::new(psi)?,
        })
    })
}

fn summary_row(dynamics: &CslDynamics, psi: &CVector, t: f64, kind: Unraveling, probes: &[usize]) -> SummaryRow {
    let norm_sqr: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let means = if probes.is_empty() {
        Vec::new()
    } else {
        dynamics.expectations(psi)
    };
    let (weight, norm_error) = match kind {
        Unraveling::Linear => (norm_sqr, 0.0),
        Unraveling::Normalized => (1.0, (norm_sqr.sqrt() - 1.0).abs()),
    };
    SummaryRow {
        t,
        weight,
        probes: probes.iter().map(|&p| means[p]).collect(),
        norm_error,
    }
}

/// Real feature vector of `scale·|ψ⟩⟨ψ|` (real parts then imaginary parts).
fn projector_features(psi: &CVector, scale: f64) -> Vec<f64> {
    outer_features(psi, psi, scale)
}

/// Real feature vector of `scale·|ket⟩⟨bra|`.
pub(crate) fn outer_features(ket: &CVector, bra: &CVector, scale: f64) -> Vec<f64> {
    let n = ket.len();
    let mut out = vec![0.0; 2 * n * n];
    for i in 0..n {
        for j in 0..n {
            let z = ket[i] * bra[j].conj() * scale;
            out[i * n + j] = z.re;
            out[n * n + i * n + j] = z.im;
        }
    }
    out
}

pub(crate) fn matrix_from_features(f: &[f64], n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| C64::new(f[i * n + j], f[n * n + i * n + j]))
}

pub(crate) fn trace_distance_raw(a: &CMatrix, b: &CMatrix) -> f64 {
    let d = a - b;
    let h = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    0.5 * crate::hilbert::hermitian_eigenvalues(&h).iter().map(|x| x.abs()).sum::<f64>()
}

/// Trace distance between an ensemble estimate and a reference, with a
/// grouped jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub trace_distance: f64,
    pub jackknife_se: f64,
    pub n: usize,
}

impl DensityComparison {
    pub fn within(&self, n_se: f64) -> bool {
        self.trace_distance < n_se * self.jackknife_se
    }
}

/// How ensemble members are combined into a density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityEstimator {
    /// Plain mean of `|ψ⟩⟨ψ|` (linear states, or normalized states under
    /// the physical measure).
    Mean,
    /// Self-normalized `Σ|ψ⟩⟨ψ| / Σ⟨ψ|ψ⟩` for linear states.
    Reweighted,
}

fn estimator_features(state: &QuantumState, est: DensityEstimator) -> Vec<f64> {
    let mut f = projector_features(state.amplitudes(), 1.0);
    if est == DensityEstimator::Reweighted {
        f.push(state.norm_sqr());
    }
    f
}

fn estimator_matrix(f: &[f64], n: usize, est: DensityEstimator) -> CMatrix {
    let m = matrix_from_features(f, n);
    match est {
        DensityEstimator::Mean => m,
        DensityEstimator::Reweighted => m / C64::new(f[2 * n * n], 0.0),
    }
}

/// Number of jackknife groups used by the density comparisons.
pub const JACKKNIFE_GROUPS: usize = 100;

/// Compares an ensemble of final states with a reference density matrix.
pub fn compare_with_density(
    states: &[QuantumState],
    estimator: DensityEstimator,
    reference: &DensityMatrix,
) -> Result<DensityComparison> {
    let n = reference.dim();
    if states.len() < 2 {
        return Err(Error::DegenerateEnsemble("need at least two trajectories".into()));
    }
    if let Some(bad) = states.iter().find(|s| s.dim() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.dim(),
        });
    }
    let feats: Vec<Vec<f64>> = states.iter().map(|s| estimator_features(s, estimator)).collect();
    let target = reference.entries().clone();
    let (td, se) = stats::jackknife(&feats, JACKKNIFE_GROUPS, |m| {
        trace_distance_raw(&estimator_matrix(m, n, estimator), &target)
    });
    Ok(DensityComparison {
        trace_distance: td,
        jackknife_se: se,
        n: states.len(),
    })
}

/// Compares two independent ensembles of equal size with each other. Member
/// `i` of both ensembles forms one jackknife unit.
pub fn compare_ensembles(
    a: &[QuantumState],
    est_a: DensityEstimator,
    b: &[QuantumState],
    est_b: DensityEstimator,
) -> Result<DensityComparison> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DegenerateEnsemble(format!(
            "ensembles must have equal size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a[0].dim();
    let la = estimator_features(&a[0], est_a).len();
    let feats: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let mut f = estimator_features(x, est_a);
            f.extend(estimator_features(y, est_b));
            f
        })
        .collect();
    let (td, se) = stats::jackknife(&feats, JACKKNIFE_GROUPS, |m| {
        trace_distance_raw(&estimator_matrix(&m[..la], n, est_a), &estimator_matrix(&m[la..], n, est_b))
    });
    Ok(DensityComparison {
        trace_distance: td,
        jackknife_se: se,
        n: a.len(),
    })
}

/// Exact density matrix for the same scenario, from the master equation.
pub fn lindblad_reference(
    dynamics: &CslDynamics,
    h0: Option<&LatticeOperator>,
    initial: &QuantumState,
    t: f64,
) -> Result<DensityMatrix> {
    let rho0 = DensityMatrix::pure(&initial.normalized()?)?;
    evolve_lindblad(&rho0, h0, dynamics.operators(), dynamics.gamma(), dynamics.volume, t)
}

/// Mean Girsanov weight of a linear ensemble.
pub fn weight_estimate(summaries: &[TrajectorySummary]) -> Estimate {
    let w: Vec<f64> = summaries.iter().map(|s| s.final_state.norm_sqr()).collect();
    Estimate::from_samples(&w)
}

/// Ensemble average of one probe at every recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub initial: f64,
    pub rows: Vec<(f64, Estimate)>,
}

impl MartingaleReport {
    /// Largest `|mean − initial| / se` over recorded times. Rows that match
    /// to rounding count as exact.
    pub fn max_z(&self) -> f64 {
        self.rows
            .iter()
            .map(|(_, e)| {
                let dev = (e.mean - self.initial).abs();
                if dev <= 1e-12 * self.initial.abs().max(1.0) {
                    0.0
                } else if e.se > 0.0 {
                    dev / e.se
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, n_se: f64) -> bool {
        self.max_z() < n_se
    }
}

/// Checks that `E[⟨M(x)⟩_t]` stays at its initial value, for probe column
/// `probe` of a normalized ensemble.
pub fn martingale_check(summaries: &[TrajectorySummary], probe: usize) -> Result<MartingaleReport> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::DegenerateEnsemble("empty ensemble".into()))?;
    let n_rows = first.rows.len();
    if summaries.iter().any(|s| s.rows.len() != n_rows) {
        return Err(Error::DegenerateEnsemble("trajectories recorded different times".into()));
    }
    if first.rows[0].probes.len() <= probe {
        return Err(Error::invalid("probe", format!("only {} probes recorded", first.rows[0].probes.len())));
    }
    let initial = first.rows[0].probes[probe];
    let rows = (0..n_rows)
        .map(|k| {
            let xs: Vec<f64> = summaries.iter().map(|s| s.rows[k].probes[probe]).collect();
            (first.rows[k].t, Estimate::from_samples(&xs))
        })
        .collect();
    Ok(MartingaleReport { initial, rows })
}

/// Outcome counts of a collapse experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornReport {
    pub expected: Vec<f64>,
    pub counts: Vec<usize>,
    /// Trajectories that never crossed the threshold.
    pub undecided: usize,
    pub chi_square: f64,
    pub p_value: f64,
    /// Mean collapse time over decided trajectories.
    pub mean_collapse_time: f64,
}

impl BornReport {
    pub fn n(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.undecided
    }

    /// Collapse frequency onto each outcome with its binomial standard error.
    pub fn frequencies(&self) -> Vec<Estimate> {
        let n = self.n();
        self.counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n as f64;
                Estimate {
                    mean: p,
                    se: (p * (1.0 - p) / n as f64).sqrt(),
                    n,
                }
            })
            .collect()
    }

    /// All trajectories decided, every frequency within `n_se` standard errors
    /// (computed from the expected probability), and χ² not rejected at
    /// `alpha`.
    pub fn passes(&self, n_se: f64, alpha: f64) -> bool {
        let n = self.n() as f64;
        self.undecided == 0
            && self.p_value >= alpha
            && self.counts.iter().zip(&self.expected).all(|(&c, &p)| {
                let se = (p * (1.0 - p) / n).sqrt();
                (c as f64 / n - p).abs() <= n_se * se
            })
    }
}

/// Default collapse threshold on a configuration's probability.
pub const COLLAPSE_THRESHOLD: f64 = 0.99;

/// Runs normalized trajectories until the probability of one configuration
/// exceeds `threshold` (or `max_steps` elapse) and tallies the outcomes. For a
/// single particle a configuration is a site, so this is the `⟨N(i)⟩` test.
pub fn born_rule_experiment(
    dynamics: &CslDynamics,
    initial: &QuantumState,
    n_trajectories: usize,
    max_steps: usize,
    seed: u64,
    threshold: f64,
) -> Result<BornReport> {
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(Error::invalid("threshold", "must lie in (0.5, 1)"));
    }
    let start = initial.normalized()?.into_amplitudes();
    let expected: Vec<f64> = start.iter().map(|z| z.norm_sqr()).collect();
    let outcomes = try_map_indices(n_trajectories, |i| {
        let mut rng = StreamRng::new(seed, Purpose::WhiteNoise, i as u64);
        let mut noise = vec![0.0; dynamics.n_sites()];
        let mut psi = start.clone();
        for step in 0..max_steps {
            if let Some(k) = psi.iter().position(|z| z.norm_sqr() > threshold) {
                return Ok(Some((k, step)));
            }
            dynamics.draw_noise(&mut rng, &mut noise);
            dynamics.step_normalized(&mut psi, &noise, step)?;
        }
        Ok(psi.iter().position(|z| z.norm_sqr() > threshold).map(|k| (k, max_steps)))
    })?;
    let mut counts = vec![0usize; expected.len()];
    let mut undecided = 0;
    let mut t_sum = 0.0;
    for o in &outcomes {
        match o {
            Some((k, step)) => {
                counts[*k] += 1;
                t_sum += *step as f64 * dynamics.dt();
            }
            None => undecided += 1,
        }
    }
    let decided = n_trajectories - undecided;
    let (chi_square, p_value) = chi_square_gof(&counts, &expected)?;
    Ok(BornReport {
        expected,
        counts,
        undecided,
        chi_square,
        p_value,
        mean_collapse_time: if decided > 0 { t_sum / decided as f64 } else { f64::NAN },
    })
}

/// N particles stacked on one site versus the same N on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatStateSpec {
    pub n_particles: usize,
    pub site_left: usize,
    pub site_right: usize,
    pub separation: f64,
}

impl CatStateSpec {
    /// Requires the branches to be at least `5σ` apart.
    pub fn new(n_particles: usize, site_left: usize, site_right: usize, grid: &LatticeGrid, sigma: f64) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::invalid("n_particles", "must be >= 1"));
        }
        if site_left >= grid.len() || site_right >= grid.len() {
            return Err(Error::invalid("sites", "branch site outside the grid"));
        }
        let separation = grid.distance(site_left, site_right);
        if separation < 5.0 * sigma {
            return Err(Error::invalid(
                "separation",
                format!("branches {separation} apart, need at least 5σ = {}", 5.0 * sigma),
            ));
        }
        Ok(Self {
            n_particles,
            site_left,
            site_right,
            separation,
        })
    }

    pub fn basis(&self) -> Result<ConfigurationBasis> {
        ConfigurationBasis::cat(vec![self.site_left; self.n_particles], vec![self.site_right; self.n_particles])
    }
}

fn cat_masses(spec: &CatStateSpec, params: &CslParams) -> Result<CslParams> {
    let masses = match params.masses.len() {
        1 => vec![params.masses[0]; spec.n_particles],
        n if n == spec.n_particles => params.masses.clone(),
        n => {
            return Err(Error::DimensionMismatch {
                expected: spec.n_particles,
                got: n,
            })
        }
    };
    CslParams::new(params.gamma, params.sigma, masses)
}

/// Decay rate of `|ρ_LR|` predicted by the master equation,
/// `(γ/2) Σ_x a³ (M_L(x) − M_R(x))²`.
pub fn cat_decoherence_rate(spec: &CatStateSpec, params: &CslParams, grid: &LatticeGrid) -> Result<f64> {
    let p = cat_masses(spec, params)?;
    let ops = build_mass_density(grid, &p, &spec.basis()?)?;
    let a3 = grid.volume_element();
    Ok(0.5
        * p.gamma
        * ops
            .iter()
            .map(|m| {
                let d = m.diagonal().expect("mass density is diagonal");
                a3 * (d[0] - d[1]).powi(2)
            })
            .sum::<f64>())
}

/// Fitted exponential decay of the cat coherence.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplificationFit {
    pub rate: f64,
    pub fit: LineFit,
    pub times: Vec<f64>,
    pub coherences: Vec<f64>,
}

/// Fraction of leading time points left out of the decay fit.
pub const FIT_SKIP_FRACTION: f64 = 0.1;

/// Evolves `(|L⟩ + |R⟩)/√2` under the master equation and fits the decay of
/// `|ρ_LR|` over `horizon_decays` predicted e-folds.
pub fn amplification_rate(
    spec: &CatStateSpec,
    params: &CslParams,
    grid: &LatticeGrid,
    horizon_decays: f64,
    n_points: usize,
) -> Result<AmplificationFit> {
    if n_points < 10 {
        return Err(Error::invalid("n_points", "need at least 10 time points"));
    }
    let p = cat_masses(spec, params)?;
    let basis = spec.basis()?;
    let ops = build_mass_density(grid, &p, &basis)?;
    let predicted = cat_decoherence_rate(spec, params, grid)?;
    if !(predicted > 0.0) {
        return Err(Error::Domain("branches do not decohere (zero rate)".into()));
    }
    let horizon = horizon_decays / predicted;
    let times: Vec<f64> = (0..n_points).map(|k| horizon * k as f64 / (n_points - 1) as f64).collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rho0 = DensityMatrix::pure(&QuantumState::from_real(&[h, h])?)?;
    let gen = LindbladGenerator::new(None, &ops, p.gamma, grid.volume_element())?;
    let series = gen.evolve_series(&rho0, &times, &LindbladOptions::default())?;
    let coherences: Vec<f64> = series.iter().map(|r| r.get(0, 1).norm()).collect();
    let skip = (FIT_SKIP_FRACTION * n_points as f64).ceil() as usize;
    let (xs, ys): (Vec<f64>, Vec<f64>) = times[skip..]
        .iter()
        .zip(&coherences[skip..])
        .filter(|(_, &c)| c > 0.0)
        .map(|(&t, &c)| (t, c.ln()))
        .unzip();
    let fit = weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()]);
    if xs.len() < 3 || !(fit.r_squared >= 0.99) {
        return Err(Error::FitFailure {
            r_squared: fit.r_squared,
            data: times.iter().copied().zip(coherences.iter().copied()).collect(),
        });
    }
    Ok(AmplificationFit {
        rate: -fit.slope,
        fit,
        times,
        coherences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_point_mass_density, hopping_hamiltonian, OperatorKind};

    fn two_site(gamma: f64, dt: f64, with_hopping: bool) -> (CslDynamics, Option<LatticeOperator>, LatticeGrid) {
        let grid = LatticeGrid::line(2, 1.0, dt, 100).unwrap();
        let basis = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        let ops = build_point_mass_density(&grid, &[1.0], &basis).unwrap();
        let h0 = with_hopping.then(|| hopping_hamiltonian(&grid, &basis, &[1.0]).unwrap());
        (CslDynamics::new(&grid, ops, h0.as_ref(), gamma).unwrap(), h0, grid)
    }

    fn superposition() -> QuantumState {
        QuantumState::from_real(&[0.3f64.sqrt(), 0.7f64.sqrt()]).unwrap()
    }

    #[test]
    fn scalar_exponential_with_constant_noise() {
        // one site, M = m: ψ' = (√γ m w − γm²/2) ψ
        let (gamma, m, w, t) = (0.4, 1.3, 0.7, 1.0);
        // Euler–Maruyama error is a²·t·dt/2 with a the exponent rate
        let n = 10_000_000;
        let dt = t / n as f64;
        let grid = LatticeGrid::line(1, 1.0, dt, n).unwrap();
        let op = LatticeOperator::from_diagonal(&[m], OperatorKind::SmearedMass).unwrap();
        let dynamics = CslDynamics::new(&grid, vec![op], None, gamma).unwrap();
        let mut psi = CVector::from_element(1, C64::new(1.0, 0.0));
        for step in 0..n {
            dynamics.step_linear(&mut psi, &[w], step).unwrap();
        }
        let exact = (gamma.sqrt() * m * w * t - gamma * m * m * t / 2.0).exp();
        assert!((psi[0].re - exact).abs() / exact < 1e-8, "{} vs {exact}", psi[0].re);
    }

    #[test]
    fn zero_gamma_is_schrodinger_step() {
        let dt = 1e-3;
        let (dynamics, h0, _) = two_site(0.0, dt, true);
        let psi0 = superposition();
        let out = step_linear_sse(&psi0, &[0.3, -1.2], &dynamics).unwrap();
        let rho = evolve_lindblad(&DensityMatrix::pure(&psi0).unwrap(), h0.as_ref(), &[], 0.0, 1.0, dt).unwrap();
        let diff = (out.outer() - rho.entries()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < dt * dt, "{diff}");
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_variance() {
        let (dynamics, _, _) = two_site(0.1, 0.01, false);
        let noise = WhiteNoiseRealization::draw(&dynamics, 10_000, 5, 0);
        let xs: Vec<f64> = noise.values.iter().flatten().map(|w| w * w).collect();
        let e = Estimate::from_samples(&xs);
        assert!(e.within(1.0 / 0.01, 5.0), "{e:?}");
    }

    #[test]
    fn weight_tracks_norm() {
        let (dynamics, _, _) = two_site(0.1, 0.01, true);
        let noise = WhiteNoiseRealization::draw(&dynamics, 300, 9, 4);
        let traj = run_trajectory(&dynamics, &superposition(), Unraveling::Linear, noise).unwrap();
        let last = traj.states.last().unwrap();
        let fresh: f64 = last.amplitudes().iter().map(|z| z.norm_sqr()).sum();
        assert!((traj.weight - fresh).abs() / fresh < 1e-8);
        let (norm, w) = girsanov_normalize(&traj).unwrap();
        assert_eq!(w, traj.weight);
        assert!(norm.iter().all(|s| (s.norm_sqr() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_noise_weight_is_deterministic_decay() {
        let (dynamics, _, _) = two_site(0.1, 0.001, false);
        let n = 2000;
        let traj = run_trajectory(
            &dynamics,
            &superposition(),
            Unraveling::Linear,
            WhiteNoiseRealization::zeros(n, 2),
        )
        .unwrap();
        // |ψ_i|² decays as exp(−γ a³ m_i² t); here m_i = 1 on either site
        let t = n as f64 * 0.001;
        let expected = (-0.1 * t).exp();
        assert!((traj.weight - expected).abs() < 1e-3 * expected, "{} vs {expected}", traj.weight);
    }

    #[test]
    fn eigenstate_is_fixed_point() {
        let (dynamics, _, _) = two_site(0.5, 0.01, false);
        let e0 = QuantumState::basis_state(2, 1).unwrap();
        let noise = WhiteNoiseRealization::draw(&dynamics, 200, 1, 0);
        let traj = run_trajectory(&dynamics, &e0, Unraveling::Linear, noise).unwrap();
        let (states, _) = girsanov_normalize(&traj).unwrap();
        for s in &states {
            assert_eq!(s.amplitudes()[0], C64::new(0.0, 0.0));
            assert!((s.amplitudes()[1].re - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_norm_stays_unit() {
        let (dynamics, _, _) = two_site(0.1, 0.01, true);
        let noise = WhiteNoiseRealization::draw(&dynamics, 10_000, 2, 0);
        let traj = run_trajectory(&dynamics, &superposition(), Unraveling::Normalized, noise).unwrap();
        let worst = traj.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn dense_and_diagonal_paths_agree() {
        let (dynamics, _, _) = two_site(0.2, 0.01, true);
        let mut dense = dynamics.clone();
        dense.diag = None;
        dense.dense_square = Some(
            dynamics
                .operators()
                .iter()
                .fold(CMatrix::zeros(2, 2), |acc, m| acc + m.entries() * m.entries()),
        );
        let psi0 = superposition();
        let noise = [1.1, -0.4];
        let a = step_linear_sse(&psi0, &noise, &dynamics).unwrap();
        let b = step_linear_sse(&psi0, &noise, &dense).unwrap();
        assert!((a.amplitudes() - b.amplitudes()).norm() < 1e-14);
        let a = step_normalized_sse(&psi0, &noise, &dynamics).unwrap();
        let b = step_normalized_sse(&psi0, &noise, &dense).unwrap();
        assert!((a.amplitudes() - b.amplitudes()).norm() < 1e-14);
    }

    #[test]
    fn rejects_stiff_steps() {
        let grid = LatticeGrid::line(2, 1.0, 0.5, 10).unwrap();
        let basis = ConfigurationBasis::single_particle(&[0, 1]).unwrap();
        let ops = build_point_mass_density(&grid, &[1.0], &basis).unwrap();
        assert!(matches!(
            CslDynamics::new(&grid, ops, None, 1.0),
            Err(Error::InvalidParameter { name: "dt", .. })
        ));
    }

    #[test]
    fn signal_field_without_collapse_is_noise() {
        let (dynamics, _, _) = two_site(0.0, 0.01, true);
        let noise = WhiteNoiseRealization::draw(&dynamics, 5000, 3, 0);
        let traj = run_trajectory(&dynamics, &superposition(), Unraveling::Normalized, noise.clone()).unwrap();
        let w = signal_field(&traj, &dynamics).unwrap();
        assert_eq!(w, noise.values);
        let xs: Vec<f64> = w.iter().map(|s| s[0]).collect();
        assert!(Estimate::from_samples(&xs).within(0.0, 5.0));
    }

    #[test]
    fn signal_field_reveals_collapsed_site() {
        let (dynamics, _, _) = two_site(0.1, 0.01, false);
        let steps = 40_000;
        let noise = WhiteNoiseRealization::draw(&dynamics, steps, 11, 0);
        let traj = run_trajectory(
            &dynamics,
            &QuantumState::basis_state(2, 0).unwrap(),
            Unraveling::Normalized,
            noise,
        )
        .unwrap();
        let w = signal_field(&traj, &dynamics).unwrap();
        let avg = w.iter().map(|s| s[0]).sum::<f64>() / steps as f64;
        let target = 2.0 * 0.1f64.sqrt() * 1.0;
        // time-average error is 1/√T with T = 400
        assert!((avg - target).abs() < 5.0 / (steps as f64 * 0.01).sqrt(), "{avg} vs {target}");
    }

    #[test]
    fn seeds_reproduce_bitwise() {
        let (dynamics, _, _) = two_site(0.1, 0.01, true);
        let settings = EnsembleSettings {
            n_trajectories: 20,
            n_steps: 50,
            seed: 77,
            record_every: 10,
            probes: vec![0, 1],
        };
        let a = run_ensemble(&dynamics, &superposition(), Unraveling::Linear, &settings).unwrap();
        let b = run_ensemble(&dynamics, &superposition(), Unraveling::Linear, &settings).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rows, y.rows);
            assert_eq!(x.final_state.amplitudes(), y.final_state.amplitudes());
        }
        // stored trajectory with the same stream matches the runner
        let noise = WhiteNoiseRealization::draw(&dynamics, 50, 77, 3);
        let t = run_trajectory(&dynamics, &superposition(), Unraveling::Linear, noise).unwrap();
        assert_eq!(t.states.last().unwrap().amplitudes(), a[3].final_state.amplitudes());
    }

    #[test]
    fn martingale_of_eigenstate_is_exact() {
        let (dynamics, _, _) = two_site(0.3, 0.01, false);
        let settings = EnsembleSettings {
            n_trajectories: 50,
            n_steps: 100,
            seed: 1,
            record_every: 20,
            probes: vec![0],
        };
        let s = run_ensemble(&dynamics, &QuantumState::basis_state(2, 0).unwrap(), Unraveling::Normalized, &settings)
            .unwrap();
        let r = martingale_check(&s, 0).unwrap();
        assert_eq!(r.max_z(), 0.0);
        assert_eq!(r.initial, 1.0);
    }

    #[test]
    fn amplification_single_particle_matches_prediction() {
        let grid = LatticeGrid::line(21, 1.0, 0.01, 1).unwrap();
        let params = CslParams::new(0.05, 1.0, vec![1.0]).unwrap();
        let spec = CatStateSpec::new(1, 5, 15, &grid, 1.0).unwrap();
        let fit = amplification_rate(&spec, &params, &grid, 4.0, 41).unwrap();
        let predicted = cat_decoherence_rate(&spec, &params, &grid).unwrap();
        assert!((fit.rate / predicted - 1.0).abs() < 1e-3, "{} vs {predicted}", fit.rate);
        assert!(CatStateSpec::new(1, 5, 8, &grid, 1.0).is_err());
    }
}
