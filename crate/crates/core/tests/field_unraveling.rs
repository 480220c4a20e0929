//! Ensemble checks of the non-Markovian unraveling against the exact
//! influence-functional state.

use collapse_core::csl::{lindblad_reference, CslDynamics};
use collapse_core::gaussian_field::FieldSample;
use collapse_core::hilbert::{
    build_point_mass_density, CMatrix, ConfigurationBasis, DensityMatrix, LatticeGrid, QuantumState, C64,
};
use collapse_core::nonmarkov::{
    beable_shift, boundary_reweight, conditioned_field_mean, cooked_two_point, girsanov_field_measure,
    influence_phase_apply, run_field_ensemble, unraveling_check, BoundarySpec, FieldUnraveling, InfluencePhase,
    ShiftWindow,
};
use collapse_core::propagators::{g_finite, LatticeKernels, PropagatorSpec, SpacetimeLattice};

const R: f64 = 1.0;
const DT: f64 = 0.5;
const CELLS: usize = 8;

fn spec() -> PropagatorSpec {
    PropagatorSpec::new(1.0, 10.0, 1.0).unwrap()
}

fn kernels() -> LatticeKernels {
    let lat = SpacetimeLattice::new(vec![[0.0; 3], [R, 0.0, 0.0]], DT, CELLS).unwrap();
    LatticeKernels::build(&spec(), &lat).unwrap()
}

fn basis() -> ConfigurationBasis {
    ConfigurationBasis::single_particle(&[0, 1]).unwrap()
}

fn phase(g: f64) -> InfluencePhase {
    InfluencePhase::point_couplings(kernels(), None, &basis(), g).unwrap()
}

fn initial() -> QuantumState {
    QuantumState::from_real(&[0.6, 0.8]).unwrap()
}

#[test]
fn field_ensemble_reproduces_influence_functional() {
    let p = phase(1.0);
    let exact = influence_phase_apply(&p, &DensityMatrix::pure(&initial()).unwrap(), CELLS).unwrap();
    let u = FieldUnraveling::new(p, None).unwrap();
    assert!(u.needs_auxiliary());
    let runs = run_field_ensemble(&u, &initial(), 10_000, 61).unwrap();
    let cmp = unraveling_check(&runs, &exact).unwrap();
    assert!(cmp.within(3.0), "{cmp:?}");
}

#[test]
fn generic_relation_is_absorbed_by_auxiliary_field() {
    let k = kernels();
    let s = k.full.map(|z| C64::new(0.3 * z.re, 0.0));
    let p = InfluencePhase::point_couplings(k, Some(s), &basis(), 1.0).unwrap();
    let exact = influence_phase_apply(&p, &DensityMatrix::pure(&initial()).unwrap(), CELLS).unwrap();
    let u = FieldUnraveling::new(p, None).unwrap();
    let runs = run_field_ensemble(&u, &initial(), 10_000, 62).unwrap();
    let cmp = unraveling_check(&runs, &exact).unwrap();
    assert!(cmp.within(3.0), "{cmp:?}");
}

#[test]
fn memory_free_relation_is_inadmissible_for_retarded_kernels() {
    // Dropping η requires S = O + Oᵀ; with a genuinely non-Markovian kernel
    // that relation is incompatible with the covariance K.
    let k = kernels();
    let s = InfluencePhase::memory_free_relation(&k);
    let p = InfluencePhase::point_couplings(k, Some(s), &basis(), 1.0).unwrap();
    assert!(matches!(
        FieldUnraveling::new(p, None),
        Err(collapse_core::Error::NotPositiveSemidefinite { .. })
    ));
}

fn delta_kernels(dt: f64, cells: usize, c: f64) -> LatticeKernels {
    let lat = SpacetimeLattice::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], dt, cells).unwrap();
    let n = lat.dim();
    let full = CMatrix::identity(n, n) * C64::new(c, 0.0);
    let ordered = CMatrix::identity(n, n) * C64::new(0.5 * c, 0.0);
    LatticeKernels { lattice: lat, full, ordered }
}

#[test]
fn relation_equal_to_delta_kernel_needs_no_auxiliary_field() {
    let k = delta_kernels(0.05, 16, 0.005);
    let s = k.full.clone();
    let p = InfluencePhase::point_couplings(k, Some(s), &basis(), 1.0).unwrap();
    let exact = influence_phase_apply(&p, &DensityMatrix::pure(&initial()).unwrap(), 16).unwrap();
    let u = FieldUnraveling::new(p, None).unwrap();
    assert!(!u.needs_auxiliary());
    let runs = run_field_ensemble(&u, &initial(), 10_000, 3).unwrap();
    for t in runs.iter().take(100) {
        // the state is the plain exponential of the sampled field
        let hist = u.conditional_history(&initial(), &t.xi).unwrap();
        let diff = (hist.last().unwrap().amplitudes() - t.ket.amplitudes()).norm();
        assert!(diff < 1e-12 * t.ket.norm(), "{diff}");
    }
    let cmp = unraveling_check(&runs, &exact).unwrap();
    assert!(cmp.within(3.0), "{cmp:?}");
}

#[test]
fn delta_correlated_kernel_matches_markovian_master_equation() {
    // K = c·1 per cell gives coherence decay (c/2dt) g² per unit time,
    // the CSL rate (γ/2) m²/a³ when c g² / dt = γ m² / a³.
    let (dt, cells, c) = (0.05, 16, 0.005);
    let k = delta_kernels(dt, cells, c);
    let p = InfluencePhase::point_couplings(k, None, &basis(), 1.0).unwrap();
    let u = FieldUnraveling::new(p, None).unwrap();
    let runs = run_field_ensemble(&u, &initial(), 10_000, 17).unwrap();

    let gamma = c / dt;
    let grid = LatticeGrid::line(2, 1.0, 0.001, 1).unwrap();
    let ops = build_point_mass_density(&grid, &[1.0], &basis()).unwrap();
    let dynamics = CslDynamics::new(&grid, ops, None, gamma).unwrap();
    let markov = lindblad_reference(&dynamics, None, &initial(), dt * cells as f64).unwrap();
    let cmp = unraveling_check(&runs, &markov).unwrap();
    assert!(cmp.within(3.0), "{cmp:?}");
}

fn cooked_ensemble(u: &FieldUnraveling, n: usize, seed: u64) -> (Vec<FieldSample>, Vec<Vec<QuantumState>>) {
    let samples: Vec<FieldSample> = (0..n as u64).map(|i| u.sample_field(seed, i)).collect();
    let hist = samples
        .iter()
        .map(|x| u.conditional_history(&initial(), x).unwrap())
        .collect();
    (samples, hist)
}

#[test]
fn cooked_measure_weights_and_two_point_function() {
    let p = phase(1.0);
    let oracle = cooked_two_point(&p, &initial().probabilities()).unwrap();
    let u = FieldUnraveling::new(p, None).unwrap();
    let (samples, hist) = cooked_ensemble(&u, 20_000, 5);
    let finals: Vec<QuantumState> = hist.iter().map(|h| h.last().unwrap().clone()).collect();
    let cooked = girsanov_field_measure(samples, &finals).unwrap();
    assert!(cooked.weight_estimate().within(1.0, 3.0), "{:?}", cooked.weight_estimate());
    for (a, b) in [(0, 0), (1, 3), (4, 9), (15, 15)] {
        let (re, im) = cooked.two_point(a, b);
        let want = oracle[(a, b)];
        assert!((re.mean - want.re).abs() <= 4.0 * re.se + 1e-12, "({a},{b}) re {re:?} vs {want}");
        assert!((im.mean - want.im).abs() <= 4.0 * im.se + 1e-12, "({a},{b}) im {im:?} vs {want}");
    }
}

#[test]
fn uncoupled_cooked_measure_is_the_prior() {
    let u = FieldUnraveling::new(phase(0.0), None).unwrap();
    let (samples, hist) = cooked_ensemble(&u, 100, 2);
    let finals: Vec<QuantumState> = hist.iter().map(|h| h.last().unwrap().clone()).collect();
    let cooked = girsanov_field_measure(samples, &finals).unwrap();
    assert!(cooked.weights().iter().all(|&w| (w - 1.0).abs() < 1e-15));
}

#[test]
fn identity_boundary_equals_girsanov_weights() {
    let u = FieldUnraveling::new(phase(1.0), None).unwrap();
    let (samples, hist) = cooked_ensemble(&u, 200, 4);
    let finals: Vec<QuantumState> = hist.iter().map(|h| h.last().unwrap().clone()).collect();
    let a = girsanov_field_measure(samples.clone(), &finals).unwrap();
    let b = boundary_reweight(
        samples,
        &BoundarySpec::standard(DensityMatrix::pure(&initial()).unwrap()).unwrap(),
        &finals,
    )
    .unwrap();
    for (x, y) in a.weights().iter().zip(b.weights()) {
        assert!((x - y).abs() <= 1e-14 * x);
    }
}

#[test]
fn projected_boundary_shifts_the_field_mean() {
    let p = phase(1.0);
    let want = conditioned_field_mean(&p, 1).unwrap();
    let other = conditioned_field_mean(&p, 0).unwrap();
    let probs = initial().probabilities();
    let u = FieldUnraveling::new(p, None).unwrap();
    let (samples, hist) = cooked_ensemble(&u, 20_000, 9);
    let finals: Vec<QuantumState> = hist.iter().map(|h| h.last().unwrap().clone()).collect();
    let mut proj = CMatrix::zeros(2, 2);
    proj[(1, 1)] = C64::new(1.0, 0.0);
    let boundary = BoundarySpec::new(DensityMatrix::pure(&initial()).unwrap(), proj).unwrap();
    let cond = boundary_reweight(samples.clone(), &boundary, &finals).unwrap();
    let plain = girsanov_field_measure(samples, &finals).unwrap();
    for a in [0, 5, 15] {
        let (_, im) = cond.mean(a);
        assert!(im.within(want[a].im, 4.0), "cell-site {a}: {im:?} vs {}", want[a].im);
        let (_, base) = plain.mean(a);
        let unconditioned = probs[0] * other[a].im + probs[1] * want[a].im;
        assert!(base.within(unconditioned, 4.0), "cell-site {a}: {base:?} vs {unconditioned}");
        assert!((want[a].im - unconditioned).abs() > 0.0);
    }
}

#[test]
fn frozen_eigenstate_shift_matches_kernel_integral() {
    let p = phase(1.3);
    let states = vec![QuantumState::basis_state(2, 0).unwrap(); CELLS];
    let shift = beable_shift(&states, &p, ShiftWindow::FinalTime).unwrap();
    // Σ_cells shift·dt on site x is i·g·G_T(r_x0)
    let t = DT * CELLS as f64;
    for (site, r) in [(0usize, 0.0), (1, R)] {
        let total: C64 = (0..CELLS).map(|c| shift[c * 2 + site]).sum::<C64>() * DT;
        let want = 1.3 * g_finite(&spec(), r, t).unwrap();
        assert!(total.re.abs() < 1e-12 && (total.im - want).abs() < 1e-8 * want.abs(), "{total} vs i·{want}");
    }
    let causal = beable_shift(&states, &p, ShiftWindow::Causal).unwrap();
    assert_eq!(causal[CELLS * 2 - 1], shift[CELLS * 2 - 1]);
    assert_ne!(causal[0], shift[0]);
}

#[test]
fn beable_field_is_field_plus_shift() {
    let p = phase(1.0);
    let u = FieldUnraveling::new(p.clone(), None).unwrap();
    let (samples, hist) = cooked_ensemble(&u, 50, 12);
    let finals: Vec<QuantumState> = hist.iter().map(|h| h.last().unwrap().clone()).collect();
    let shifts: Vec<Vec<C64>> = hist
        .iter()
        .map(|h| beable_shift(h, &p, ShiftWindow::FinalTime).unwrap())
        .collect();
    let e = girsanov_field_measure(samples, &finals).unwrap().with_beable_shifts(shifts.clone()).unwrap();
    for i in 0..e.len() {
        let tilde = e.beable_field(i).unwrap();
        for ((t, x), s) in tilde.iter().zip(&e.samples[i].values).zip(&shifts[i]) {
            assert!((*t - *x - *s).norm() <= 1e-15 * t.norm().max(x.norm()));
        }
    }
}

#[test]
fn pipeline_is_deterministic() {
    let u = FieldUnraveling::new(phase(1.0), None).unwrap();
    let a = run_field_ensemble(&u, &initial(), 64, 8).unwrap();
    let b = run_field_ensemble(&u, &initial(), 64, 8).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.xi, y.xi);
        assert_eq!(x.ket.amplitudes(), y.ket.amplitudes());
        assert_eq!(x.bra.amplitudes(), y.bra.amplitudes());
    }
}
