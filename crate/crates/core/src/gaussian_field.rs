//! Complex Gaussian random fields given by a covariance `Γ = E[ξξ*]` and a
//! relation `S = E[ξξᵀ]`, sampled through the real covariance of
//! `(Re ξ, Im ξ)`, plus quartic reweighting of sampled ensembles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamRng};
use crate::stats::{pairwise_sum, Estimate};

pub type CMatrix = DMatrix<C64>;

/// Covariance and relation kernels over a finite set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    covariance: CMatrix,
    relation: CMatrix,
    psd_floor: f64,
}

impl KernelPair {
    /// `psd_floor` defaults to `1e-9 × max diag Γ`.
    pub fn new(covariance: CMatrix, relation: CMatrix, psd_floor: Option<f64>) -> Result<Self> {
        let n = covariance.nrows();
        if n == 0 || covariance.ncols() != n {
            return Err(Error::invalid("covariance", "must be a non-empty square matrix"));
        }
        if relation.nrows() != n || relation.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: relation.nrows(),
            });
        }
        let scale = covariance
            .iter()
            .chain(relation.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(1e-300);
        for i in 0..n {
            for j in 0..n {
                if (covariance[(i, j)] - covariance[(j, i)].conj()).norm() > 1e-10 * scale {
                    return Err(Error::invalid("covariance", "not Hermitian"));
                }
                if (relation[(i, j)] - relation[(j, i)]).norm() > 1e-10 * scale {
                    return Err(Error::invalid("relation", "not symmetric"));
                }
            }
        }
        let max_diag = (0..n).map(|i| covariance[(i, i)].re).fold(0.0, f64::max);
        let psd_floor = psd_floor.unwrap_or(1e-9 * max_diag);
        if !(psd_floor >= 0.0 && psd_floor.is_finite()) {
            return Err(Error::invalid("psd_floor", "must be >= 0"));
        }
        Ok(Self {
            covariance,
            relation,
            psd_floor,
        })
    }

    /// Circularly symmetric field, `S = 0`.
    pub fn circular(covariance: CMatrix, psd_floor: Option<f64>) -> Result<Self> {
        let n = covariance.nrows();
        Self::new(covariance, CMatrix::zeros(n, n), psd_floor)
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    pub fn relation(&self) -> &CMatrix {
        &self.relation
    }

    pub fn psd_floor(&self) -> f64 {
        self.psd_floor
    }

    pub fn is_circular(&self) -> bool {
        self.relation.iter().all(|z| *z == C64::new(0.0, 0.0))
    }

    /// SHA-256 over the little-endian bytes of both kernels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        for m in [&self.covariance, &self.relation] {
            for z in m.iter() {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        }
        h.update(self.psd_floor.to_le_bytes());
        hex(&h.finalize())
    }

    /// Real covariance of `(Re ξ, Im ξ)` stacked into one 2n vector.
    pub fn real_covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let (g, s) = (&self.covariance, &self.relation);
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let (gij, sij) = (g[(i, j)], s[(i, j)]);
                c[(i, j)] = 0.5 * (gij.re + sij.re);
                c[(n + i, n + j)] = 0.5 * (gij.re - sij.re);
                c[(i, n + j)] = 0.5 * (sij.im - gij.im);
                c[(n + i, j)] = 0.5 * (sij.im + gij.im);
            }
        }
        // exact symmetry; the inputs are only symmetric to tolerance
        let t = c.transpose();
        (c + t) * 0.5
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Square-root factor `F` of the clipped real covariance, `F Fᵀ ≈ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingFactor {
    factor: DMatrix<f64>,
    n: usize,
    clipped_mass: f64,
    min_eigenvalue: f64,
    kernel_hash: String,
}

impl SamplingFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Total weight of the negative eigenvalues removed from the real
    /// covariance.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Smallest eigenvalue of the real covariance before clipping.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn kernel_hash(&self) -> &str {
        &self.kernel_hash
    }

    /// Field for a vector of independent standard normals of length `2n`.
    pub fn apply(&self, normals: &[f64]) -> Vec<C64> {
        let g = DVector::from_column_slice(normals);
        let v = &self.factor * g;
        (0..self.n).map(|i| C64::new(v[i], v[self.n + i])).collect()
    }
}

/// Eigen-decomposes the real covariance and clips small negative modes.
///
/// An eigenvalue of the complex augmented covariance `[[Γ, S], [S*, Γ*]]`
/// is twice one of the real covariance, so the floor test uses `2λ`.
pub fn factor_kernel(pair: &KernelPair) -> Result<SamplingFactor> {
    let c = pair.real_covariance();
    let eig = SymmetricEigen::new(c);
    let mut clipped = 0.0;
    let mut min = f64::INFINITY;
    let mut sqrt_vals = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        min = min.min(l);
        if 2.0 * l < -pair.psd_floor {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: 2.0 * l,
                floor: pair.psd_floor,
            });
        }
        if l < 0.0 {
            clipped += -l;
            sqrt_vals.push(0.0);
        } else {
            sqrt_vals.push(l.sqrt());
        }
    }
    let mut factor = eig.eigenvectors;
    for (j, s) in sqrt_vals.iter().enumerate() {
        factor.column_mut(j).scale_mut(*s);
    }
    Ok(SamplingFactor {
        factor,
        n: pair.dim(),
        clipped_mass: clipped,
        min_eigenvalue: min,
        kernel_hash: pair.hash(),
    })
}

/// One realization of a field on the lattice points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub values: Vec<C64>,
    pub seed: u64,
    pub index: u64,
}

/// Draws sample `index` of the stream keyed by `seed`.
pub fn sample_field(factor: &SamplingFactor, seed: u64, index: u64) -> FieldSample {
    let mut rng = StreamRng::new(seed, Purpose::Field, index);
    let mut g = vec![0.0; 2 * factor.dim()];
    rng.fill_normal(&mut g);
    FieldSample {
        values: factor.apply(&g),
        seed,
        index,
    }
}

/// Monte-Carlo and closed-form characteristic functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicCheck {
    pub empirical: C64,
    pub se_re: f64,
    pub se_im: f64,
    pub analytic: C64,
}

impl CharacteristicCheck {
    pub fn within(&self, n_se: f64) -> bool {
        let d = self.empirical - self.analytic;
        let ok = |diff: f64, se: f64| diff.abs() <= n_se * se || diff.abs() < 1e-12;
        ok(d.re, self.se_re) && ok(d.im, self.se_im)
    }
}

/// `exp[aᵀΓb − (aᵀSa + bᵀS*b)/2]`, the closed form of
/// `E[exp(−i Σ(ξ a − b ξ*))]`.
pub fn characteristic_analytic(pair: &KernelPair, a: &[C64], b: &[C64]) -> Result<C64> {
    let n = pair.dim();
    if a.len() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.len().min(b.len()),
        });
    }
    let av = DVector::from_column_slice(a);
    let bv = DVector::from_column_slice(b);
    let cross = (av.transpose() * pair.covariance() * &bv)[(0, 0)];
    let saa = (av.transpose() * pair.relation() * &av)[(0, 0)];
    let sbb = (bv.transpose() * pair.relation().map(|z| z.conj()) * &bv)[(0, 0)];
    Ok((cross - (saa + sbb) * 0.5).exp())
}

pub fn characteristic_check(
    pair: &KernelPair,
    a: &[C64],
    b: &[C64],
    n_samples: usize,
    seed: u64,
) -> Result<CharacteristicCheck> {
    let analytic = characteristic_analytic(pair, a, b)?;
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two samples"));
    }
    let factor = factor_kernel(pair)?;
    let mut re = Vec::with_capacity(n_samples);
    let mut im = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let xi = sample_field(&factor, seed, k as u64).values;
        let phase: C64 = xi
            .iter()
            .zip(a.iter().zip(b))
            .map(|(x, (ak, bk))| x * ak - bk * x.conj())
            .sum();
        let v = (C64::new(0.0, -1.0) * phase).exp();
        re.push(v.re);
        im.push(v.im);
    }
    let (er, ei) = (Estimate::from_samples(&re), Estimate::from_samples(&im));
    Ok(CharacteristicCheck {
        empirical: C64::new(er.mean, ei.mean),
        se_re: er.se,
        se_im: ei.se,
        analytic,
    })
}

/// Largest z-scores of the empirical second moments against their targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub n_samples: usize,
    /// Over real and imaginary parts of every `E[ξ_i ξ_j*]`.
    pub max_z_covariance: f64,
    /// Over real and imaginary parts of every `E[ξ_i ξ_j]`.
    pub max_z_relation: f64,
}

impl MomentCheck {
    pub fn within(&self, n_se: f64) -> bool {
        self.max_z_covariance < n_se && self.max_z_relation < n_se
    }
}

fn z(xs: &[f64], target: f64) -> f64 {
    let e = Estimate::from_samples(xs);
    let dev = (e.mean - target).abs();
    if dev < 1e-12 * (1.0 + target.abs()) {
        0.0
    } else {
        dev / e.se
    }
}

/// Compares every entry of the sample covariance and relation with the pair.
pub fn moment_check(pair: &KernelPair, n_samples: usize, seed: u64) -> Result<MomentCheck> {
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two samples"));
    }
    let factor = factor_kernel(pair)?;
    let n = pair.dim();
    let samples = crate::parallel::try_map_indices(n_samples, |k| Ok(sample_field(&factor, seed, k as u64).values))?;
    let mut zc: f64 = 0.0;
    let mut zs: f64 = 0.0;
    let mut buf = [vec![0.0; n_samples], vec![0.0; n_samples], vec![0.0; n_samples], vec![0.0; n_samples]];
    for i in 0..n {
        for j in i..n {
            for (k, x) in samples.iter().enumerate() {
                let c = x[i] * x[j].conj();
                let r = x[i] * x[j];
                buf[0][k] = c.re;
                buf[1][k] = c.im;
                buf[2][k] = r.re;
                buf[3][k] = r.im;
            }
            let (g, s) = (pair.covariance()[(i, j)], pair.relation()[(i, j)]);
            zc = zc.max(z(&buf[0], g.re)).max(z(&buf[1], g.im));
            zs = zs.max(z(&buf[2], s.re)).max(z(&buf[3], s.im));
        }
    }
    Ok(MomentCheck {
        n_samples,
        max_z_covariance: zc,
        max_z_relation: zs,
    })
}

/// Positivity diagnostics of a Hermitian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    /// Minimum of `Re (f|D|f)` over unit-norm random test functions.
    pub min_quadratic_form: f64,
    pub min_eigenvalue: f64,
    pub trials: usize,
}

/// `(f|D|f) = Σ f_i* D_ij f_j`.
pub fn quadratic_form(d: &CMatrix, f: &[C64]) -> C64 {
    let v = DVector::from_column_slice(f);
    v.dotc(&(d * &v))
}

pub fn verify_psd(d: &CMatrix, trials: usize, seed: u64) -> Result<PsdReport> {
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(Error::invalid("kernel", "must be a non-empty square matrix"));
    }
    let mut min_form = f64::INFINITY;
    for k in 0..trials {
        let mut rng = StreamRng::new(seed, Purpose::TestFunction, k as u64);
        let mut f: Vec<C64> = (0..n).map(|_| C64::new(rng.normal(), rng.normal())).collect();
        let norm = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        f.iter_mut().for_each(|z| *z /= norm);
        min_form = min_form.min(quadratic_form(d, &f).re);
    }
    let h = (d + d.adjoint()) * C64::new(0.5, 0.0);
    let min_eigenvalue = SymmetricEigen::new(h)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(PsdReport {
        min_quadratic_form: if trials == 0 { 0.0 } else { min_form },
        min_eigenvalue,
        trials,
    })
}

/// Quartic coupling λ with sextic regulator ε; `cell_volume` is the
/// spacetime volume carried by each lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuarticReweightSpec {
    pub lambda: f64,
    pub epsilon: f64,
    pub cell_volume: f64,
}

impl QuarticReweightSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be >= 0"));
        }
        if self.lambda != 0.0 && self.epsilon == 0.0 {
            return Err(Error::invalid("epsilon", "must be > 0 when lambda != 0"));
        }
        if !(self.cell_volume > 0.0 && self.cell_volume.is_finite()) {
            return Err(Error::invalid("cell_volume", "must be > 0"));
        }
        Ok(())
    }

    /// `vol · Σ_x (2λ Im ξ⁴ − ε|ξ|⁶)`.
    pub fn log_weight(&self, xi: &[C64]) -> f64 {
        self.cell_volume
            * xi.iter()
                .map(|z| 2.0 * self.lambda * z.powi(4).im - self.epsilon * z.norm_sqr().powi(3))
                .sum::<f64>()
    }

    /// Calculus bound `vol · n · 32λ³/(27ε²)` on the log-weight.
    pub fn log_weight_bound(&self, n_points: usize) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let l = self.lambda.abs();
        self.cell_volume * n_points as f64 * 32.0 * l.powi(3) / (27.0 * self.epsilon.powi(2))
    }
}

/// Samples with non-negative weights, stored as logarithms so that
/// strongly suppressed samples do not underflow. Expectations are
/// self-normalized, so only weight ratios matter.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub samples: Vec<FieldSample>,
    log_weights: Vec<f64>,
}

impl WeightedEnsemble {
    pub fn from_weights(samples: Vec<FieldSample>, weights: &[f64]) -> Result<Self> {
        if let Some((k, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::NumericFailure {
                step: k,
                what: format!("weight {w}"),
            });
        }
        Self::from_log_weights(samples, weights.iter().map(|w| w.ln()).collect())
    }

    pub fn from_log_weights(samples: Vec<FieldSample>, log_weights: Vec<f64>) -> Result<Self> {
        if samples.len() != log_weights.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: log_weights.len(),
            });
        }
        if let Some((k, w)) = log_weights
            .iter()
            .enumerate()
            .find(|(_, w)| w.is_nan() || **w == f64::INFINITY)
        {
            return Err(Error::NumericFailure {
                step: k,
                what: format!("log weight {w}"),
            });
        }
        if !log_weights.iter().any(|w| w.is_finite()) {
            return Err(Error::DegenerateEnsemble("all weights are zero".into()));
        }
        Ok(Self {
            samples,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Raw weights; may underflow to zero.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Weights divided by the largest one.
    pub fn relative_weights(&self) -> Vec<f64> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter().map(|w| (w - max).exp()).collect()
    }

    /// Self-normalized expectation of a scalar observable.
    pub fn expectation<F: Fn(&FieldSample) -> f64>(&self, f: F) -> Estimate {
        let xs: Vec<f64> = self.samples.iter().map(f).collect();
        Estimate::weighted(&xs, &self.relative_weights())
    }

    /// Kish effective sample size.
    pub fn effective_sample_size(&self) -> f64 {
        let w = self.relative_weights();
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|w| w * w).sum();
        s * s / s2
    }
}

/// Attaches `exp[vol Σ(2λ Im ξ⁴ − ε|ξ|⁶)]` to every sample.
pub fn reweight_quartic(
    samples: Vec<FieldSample>,
    spec: &QuarticReweightSpec,
) -> Result<WeightedEnsemble> {
    spec.validate()?;
    let mut log_weights = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let lw = spec.log_weight(&s.values);
        if !lw.is_finite() {
            return Err(Error::NumericFailure {
                step: k,
                what: format!("quartic log weight {lw}"),
            });
        }
        log_weights.push(lw);
    }
    if samples.is_empty() {
        return Err(Error::DegenerateEnsemble("no samples".into()));
    }
    WeightedEnsemble::from_log_weights(samples, log_weights)
}

/// Finite-difference derivative of the reweighted `E[|ξ_probe|²]` in λ at
/// zero against the prior covariance with the quartic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuarticDerivativeCheck {
    pub derivative: f64,
    pub covariance: Estimate,
    /// Reweighting with λ = ε = 0 left every weight at exactly one.
    pub identity_at_zero: bool,
}

impl QuarticDerivativeCheck {
    pub fn z_score(&self) -> f64 {
        (self.derivative - self.covariance.mean).abs() / self.covariance.se
    }

    /// The covariance is resolved from zero and the derivative agrees with it.
    pub fn passes(&self, n_se: f64) -> bool {
        self.identity_at_zero && self.covariance.mean.abs() > n_se * self.covariance.se && self.z_score() < n_se
    }
}

pub fn quartic_derivative_check(
    pair: &KernelPair,
    n_samples: usize,
    seed: u64,
    cell_volume: f64,
    probe: usize,
) -> Result<QuarticDerivativeCheck> {
    if probe >= pair.dim() {
        return Err(Error::invalid("probe", "outside the kernel"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two samples"));
    }
    let factor = factor_kernel(pair)?;
    let samples = crate::parallel::try_map_indices(n_samples, |k| Ok(sample_field(&factor, seed, k as u64)))?;
    let obs = |s: &FieldSample| s.values[probe].norm_sqr();
    let source = |s: &FieldSample| 2.0 * cell_volume * s.values.iter().map(|z| z.powi(4).im).sum::<f64>();
    let o: Vec<f64> = samples.iter().map(obs).collect();
    let a: Vec<f64> = samples.iter().map(source).collect();
    let (mo, ma) = (pairwise_sum(&o) / n_samples as f64, pairwise_sum(&a) / n_samples as f64);
    let prod: Vec<f64> = o.iter().zip(&a).map(|(x, y)| (x - mo) * (y - ma)).collect();
    let covariance = Estimate::from_samples(&prod);
    // ε only has to keep the weights normalizable; at this size its effect
    // is far below the statistical error
    let (h, eps) = (1e-4, 1e-9);
    let at = |lambda: f64, epsilon: f64| {
        reweight_quartic(
            samples.clone(),
            &QuarticReweightSpec {
                lambda,
                epsilon,
                cell_volume,
            },
        )
    };
    let identity_at_zero = at(0.0, 0.0)?.log_weights().iter().all(|&w| w == 0.0);
    let derivative = (at(h, eps)?.expectation(obs).mean - at(-h, eps)?.expectation(obs).mean) / (2.0 * h);
    Ok(QuarticDerivativeCheck {
        derivative,
        covariance,
        identity_at_zero,
    })
}
