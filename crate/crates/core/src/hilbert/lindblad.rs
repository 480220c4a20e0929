use super::{CMatrix, DensityMatrix, LatticeOperator, C64};
use crate::error::{Error, Result};

/// Step control for [`evolve_lindblad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladOptions {
    /// Allowed local error per unit time, relative to the largest entry of ρ.
    pub tolerance: f64,
    /// Smallest admissible step as a fraction of the total duration.
    pub min_step_fraction: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            min_step_fraction: 1e-12,
        }
    }
}

/// The generator `L(ρ) = −i[H,ρ] − (γ/2) Σ_x a³ [M(x),[M(x),ρ]]`.
///
/// When every `M(x)` is diagonal the double commutator collapses to an
/// entry-wise damping `Γ_ij ρ_ij` with `Γ_ij = (γ/2) Σ_x a³ (m_i(x) − m_j(x))²`.
pub struct LindbladGenerator {
    hamiltonian: Option<CMatrix>,
    damping: Option<CMatrix>,
    dense_ops: Vec<(CMatrix, CMatrix)>,
    dense_prefactor: f64,
    dim: usize,
}

impl LindbladGenerator {
    pub fn new(
        h0: Option<&LatticeOperator>,
        collapse_ops: &[LatticeOperator],
        gamma: f64,
        volume_element: f64,
    ) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be >= 0, got {gamma}")));
        }
        if !(volume_element > 0.0) {
            return Err(Error::invalid("volume_element", "must be > 0"));
        }
        let dim = h0
            .map(|h| h.dim())
            .or_else(|| collapse_ops.first().map(|m| m.dim()))
            .ok_or_else(|| Error::invalid("collapse_ops", "no operators to fix the dimension"))?;
        for op in h0.into_iter().chain(collapse_ops) {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: op.dim(),
                });
            }
        }
        let pref = 0.5 * gamma * volume_element;
        let all_diagonal = collapse_ops.iter().all(|m| m.is_diagonal());
        let (damping, dense_ops) = if collapse_ops.is_empty() || gamma == 0.0 {
            (None, Vec::new())
        } else if all_diagonal {
            let mut g = CMatrix::zeros(dim, dim);
            for m in collapse_ops {
                let d = m.diagonal().expect("checked diagonal");
                for i in 0..dim {
                    for j in 0..dim {
                        g[(i, j)] += C64::new(pref * (d[i] - d[j]).powi(2), 0.0);
                    }
                }
            }
            (Some(g), Vec::new())
        } else {
            let ops = collapse_ops
                .iter()
                .map(|m| {
                    let e = m.entries().clone();
                    let sq = &e * &e;
                    (e, sq)
                })
                .collect();
            (None, ops)
        };
        Ok(Self {
            hamiltonian: h0.map(|h| h.entries().clone()),
            damping,
            dense_ops,
            dense_prefactor: pref,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        if let Some(h) = &self.hamiltonian {
            let comm = h * rho - rho * h;
            out -= comm * C64::new(0.0, 1.0);
        }
        if let Some(g) = &self.damping {
            out -= g.component_mul(rho);
        }
        for (m, m2) in &self.dense_ops {
            let dc = m2 * rho + rho * m2 - (m * rho * m) * C64::new(2.0, 0.0);
            out -= dc * C64::new(self.dense_prefactor, 0.0);
        }
        out
    }

    /// Crude bound on the generator norm, used to seed the step size.
    fn rate_scale(&self) -> f64 {
        let mut s = 0.0;
        if let Some(h) = &self.hamiltonian {
            s += 2.0 * h.iter().map(|z| z.norm()).fold(0.0, f64::max) * self.dim as f64;
        }
        if let Some(g) = &self.damping {
            s += g.iter().map(|z| z.re).fold(0.0, f64::max);
        }
        for (_, m2) in &self.dense_ops {
            s += 4.0 * self.dense_prefactor * m2.iter().map(|z| z.norm()).fold(0.0, f64::max)
                * self.dim as f64;
        }
        s
    }

    fn rk4(&self, rho: &CMatrix, h: f64) -> CMatrix {
        let half = C64::new(0.5 * h, 0.0);
        let full = C64::new(h, 0.0);
        let k1 = self.apply(rho);
        let k2 = self.apply(&(rho + &k1 * half));
        let k3 = self.apply(&(rho + &k2 * half));
        let k4 = self.apply(&(rho + &k3 * full));
        rho + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
    }

    /// Advances `rho` by `t` with RK4 steps controlled by step halving.
    pub fn evolve(
        &self,
        rho: &DensityMatrix,
        t: f64,
        opts: &LindbladOptions,
    ) -> Result<DensityMatrix> {
        let mut m = rho.entries().clone();
        self.advance(&mut m, 0.0, t, opts)?;
        DensityMatrix::hermitian_part(m)
    }

    /// States at each of the (non-decreasing, non-negative) `times`.
    pub fn evolve_series(
        &self,
        rho: &DensityMatrix,
        times: &[f64],
        opts: &LindbladOptions,
    ) -> Result<Vec<DensityMatrix>> {
        let mut m = rho.entries().clone();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= now) {
                return Err(Error::invalid("times", "must be non-negative and sorted"));
            }
            self.advance(&mut m, now, t, opts)?;
            now = t;
            out.push(DensityMatrix::hermitian_part(m.clone())?);
        }
        Ok(out)
    }

    fn advance(&self, m: &mut CMatrix, from: f64, to: f64, opts: &LindbladOptions) -> Result<()> {
        if self.dim != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: m.nrows(),
            });
        }
        let span = to - from;
        if !(span >= 0.0) || !span.is_finite() {
            return Err(Error::invalid("t", format!("duration must be >= 0, got {span}")));
        }
        if span == 0.0 {
            return Ok(());
        }
        let scale = self.rate_scale();
        if scale == 0.0 {
            return Ok(());
        }
        let min_step = opts.min_step_fraction * span;
        let mut h = span.min(0.5 / scale);
        let mut done = 0.0;
        while done < span {
            h = h.min(span - done);
            let full = self.rk4(m, h);
            let mid = self.rk4(m, 0.5 * h);
            let fine = self.rk4(&mid, 0.5 * h);
            let diff = &fine - &full;
            let err = diff.iter().map(|z| z.norm()).fold(0.0, f64::max) / 15.0;
            let size = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
            let allowed = opts.tolerance * h * size;
            if !err.is_finite() {
                return Err(Error::IntegrationFailure {
                    t: from + done,
                    step: h,
                    min_step,
                    error_estimate: err,
                });
            }
            if err <= allowed {
                *m = &fine + diff * C64::new(1.0 / 15.0, 0.0);
                done += h;
                let grow = if err == 0.0 {
                    2.0
                } else {
                    (0.9 * (allowed / err).powf(0.25)).min(2.0)
                };
                h *= grow.max(1.0);
            } else {
                h *= (0.9 * (allowed / err).powf(0.25)).clamp(0.1, 0.9);
                if h < min_step {
                    return Err(Error::IntegrationFailure {
                        t: from + done,
                        step: h,
                        min_step,
                        error_estimate: err,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Solves the collapse master equation for a duration `t`.
pub fn evolve_lindblad(
    rho: &DensityMatrix,
    h0: Option<&LatticeOperator>,
    collapse_ops: &[LatticeOperator],
    gamma: f64,
    volume_element: f64,
    t: f64,
) -> Result<DensityMatrix> {
    if rho.dim() == 0 {
        return Err(Error::invalid("rho", "empty density matrix"));
    }
    if h0.is_none() && collapse_ops.is_empty() {
        return Ok(rho.clone());
    }
    LindbladGenerator::new(h0, collapse_ops, gamma, volume_element)?.evolve(
        rho,
        t,
        &LindbladOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{
        build_point_mass_density, hopping_hamiltonian, trace_distance, ConfigurationBasis,
        LatticeGrid, OperatorKind, QuantumState,
    };
    use crate::rng::{Purpose, StreamRng};
    use proptest::prelude::*;

    fn two_sites() -> (LatticeGrid, ConfigurationBasis) {
        (
            LatticeGrid::line(2, 1.0, 0.01, 1).unwrap(),
            ConfigurationBasis::single_particle(&[0, 1]).unwrap(),
        )
    }

    #[test]
    fn zero_generator_is_identity() {
        let mut rng = StreamRng::new(1, Purpose::Initial, 0);
        let rho = DensityMatrix::random(4, &mut rng).unwrap();
        let h = LatticeOperator::zeros(4, OperatorKind::Hamiltonian);
        let m = LatticeOperator::zeros(4, OperatorKind::SmearedMass);
        let out = evolve_lindblad(&rho, Some(&h), &[m], 0.0, 1.0, 7.0).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn two_site_dephasing_matches_closed_form() {
        let (g, b) = two_sites();
        let a = 1.3;
        let g = LatticeGrid::new(g.points().iter().map(|p| [p[0] * a, 0.0, 0.0]).collect(), a, 0.01, 1)
            .unwrap();
        let ops = build_point_mass_density(&g, &[0.8], &b).unwrap();
        let gamma = 0.7;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rho = DensityMatrix::pure(&QuantumState::from_real(&[s, s]).unwrap()).unwrap();
        let t = 3.0;
        let out = evolve_lindblad(&rho, None, &ops, gamma, g.volume_element(), t).unwrap();
        // Γ = (γ/2) Σ_x a³ (M₀(x) − M₁(x))² from the double commutator
        let vol = g.volume_element();
        let rate: f64 = ops
            .iter()
            .map(|o| {
                let d = o.diagonal().unwrap();
                0.5 * gamma * vol * (d[0] - d[1]).powi(2)
            })
            .sum();
        let expected = 0.5 * (-rate * t).exp();
        assert!((out.get(0, 1).re - expected).abs() < 1e-8);
        assert!(out.get(0, 1).im.abs() < 1e-12);
        assert!((out.get(0, 0).re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unitary_rabi_oscillation() {
        let (g, b) = two_sites();
        let h = hopping_hamiltonian(&g, &b, &[1.0]).unwrap();
        let rho = DensityMatrix::pure(&QuantumState::basis_state(2, 0).unwrap()).unwrap();
        // H = [[1, -1/2], [-1/2, 1]] so P₀(t) = cos²(t/2)
        let t = 1.7;
        let out = evolve_lindblad(&rho, Some(&h), &[], 0.0, 1.0, t).unwrap();
        assert!((out.get(0, 0).re - (t / 2.0).cos().powi(2)).abs() < 1e-8);
    }

    #[test]
    fn dense_path_matches_diagonal_path() {
        let (g, b) = two_sites();
        let h = hopping_hamiltonian(&g, &b, &[1.0]).unwrap();
        let ops = build_point_mass_density(&g, &[1.0], &b).unwrap();
        // same operators but forced through the dense branch by a zero-valued
        // off-diagonal perturbation of another operator
        let mut e = ops[0].entries().clone();
        e[(0, 1)] = C64::new(1e-300, 0.0);
        e[(1, 0)] = C64::new(1e-300, 0.0);
        let dense = vec![LatticeOperator::new(e, OperatorKind::SmearedMass).unwrap(), ops[1].clone()];
        assert!(!dense[0].is_diagonal());
        let mut rng = StreamRng::new(9, Purpose::Initial, 0);
        let rho = DensityMatrix::random(2, &mut rng).unwrap();
        let a = evolve_lindblad(&rho, Some(&h), &ops, 0.4, 1.0, 2.0).unwrap();
        let d = evolve_lindblad(&rho, Some(&h), &dense, 0.4, 1.0, 2.0).unwrap();
        assert!(trace_distance(&a, &d).unwrap() < 1e-9);
    }

    #[test]
    fn series_matches_single_shots() {
        let (g, b) = two_sites();
        let h = hopping_hamiltonian(&g, &b, &[2.0]).unwrap();
        let ops = build_point_mass_density(&g, &[1.0], &b).unwrap();
        let rho = DensityMatrix::pure(&QuantumState::basis_state(2, 0).unwrap()).unwrap();
        let gen = LindbladGenerator::new(Some(&h), &ops, 0.3, 1.0).unwrap();
        let opts = LindbladOptions::default();
        let series = gen.evolve_series(&rho, &[0.5, 1.0, 2.5], &opts).unwrap();
        let direct = gen.evolve(&rho, 2.5, &opts).unwrap();
        assert!(trace_distance(&series[2], &direct).unwrap() < 1e-8);
    }

    #[test]
    fn rejects_negative_time() {
        let (g, b) = two_sites();
        let ops = build_point_mass_density(&g, &[1.0], &b).unwrap();
        let rho = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(evolve_lindblad(&rho, None, &ops, 1.0, 1.0, -1.0).is_err());
    }

    fn random_hermitian(dim: usize, rng: &mut StreamRng) -> CMatrix {
        let g = CMatrix::from_fn(dim, dim, |_, _| C64::new(rng.normal(), rng.normal()));
        (&g + g.adjoint()) * C64::new(0.5, 0.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn preserves_trace_and_positivity(seed in 0u64..10_000, dim in 2usize..=16) {
            let mut rng = StreamRng::new(seed, Purpose::Initial, 1);
            let rho = DensityMatrix::random(dim, &mut rng).unwrap();
            let h = LatticeOperator::new(random_hermitian(dim, &mut rng), OperatorKind::Hamiltonian).unwrap();
            let ops: Vec<LatticeOperator> = (0..2)
                .map(|_| {
                    let d: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
                    LatticeOperator::from_diagonal(&d, OperatorKind::SmearedMass).unwrap()
                })
                .collect();
            let gamma = 0.5;
            let out = evolve_lindblad(&rho, Some(&h), &ops, gamma, 1.0, 10.0 / gamma).unwrap();
            prop_assert!((out.trace() - 1.0).abs() < 1e-10);
            prop_assert!(out.min_eigenvalue() >= -1e-9);
        }

        #[test]
        fn diagonal_states_are_fixed_points(seed in 0u64..10_000, dim in 2usize..=8) {
            let mut rng = StreamRng::new(seed, Purpose::Initial, 2);
            let p: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
            let total: f64 = p.iter().sum();
            let rho = DensityMatrix::from_diagonal(&p.iter().map(|x| x / total).collect::<Vec<_>>()).unwrap();
            let ops: Vec<LatticeOperator> = (0..3)
                .map(|_| {
                    let d: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
                    LatticeOperator::from_diagonal(&d, OperatorKind::SmearedMass).unwrap()
                })
                .collect();
            let out = evolve_lindblad(&rho, None, &ops, 1.0, 1.0, 5.0).unwrap();
            prop_assert!(trace_distance(&out, &rho).unwrap() < 1e-9);
        }
    }

    #[test]
    fn mass_operators_commute() {
        let g = LatticeGrid::line(4, 1.0, 0.01, 1).unwrap();
        let b = ConfigurationBasis::full(4, 2).unwrap();
        let p = crate::hilbert::CslParams::new(1.0, 1.0, vec![1.0, 2.0]).unwrap();
        let ops = crate::hilbert::build_mass_density(&g, &p, &b).unwrap();
        for x in &ops {
            for y in &ops {
                let c = x.entries() * y.entries() - y.entries() * x.entries();
                assert!(c.iter().all(|z| *z == C64::new(0.0, 0.0)));
            }
        }
    }
}
