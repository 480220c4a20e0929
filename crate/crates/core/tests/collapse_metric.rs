//! Collapse strength, amplification and transience of the non-Markovian model.

use collapse_core::collapse_analysis::{
    amplification_scan, delta_metric_mc, plateau_value, transient_plateau_check, AmplificationGeometry,
};
use collapse_core::hilbert::QuantumState;
use collapse_core::propagators::{omega_infinity, PropagatorSpec};

fn plus() -> QuantumState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    QuantumState::from_real(&[h, h]).unwrap()
}

#[test]
fn metric_matches_exponent_on_grid() {
    let spec = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    let psi0 = QuantumState::from_real(&[0.6, 0.8]).unwrap();
    let mut seed = 900;
    for r in [0.5, 2.0, 10.0] {
        for t in [1.0, 5.0, 50.0] {
            seed += 1;
            let res = delta_metric_mc(&spec, &psi0, r, t, 10_000, seed).unwrap();
            assert!(res.delta_mc.mean > 0.0);
            assert_eq!(res.delta_analytic, res.omega.exp() * res.delta_0);
            assert!(res.within(3.0), "r {r} t {t}: {res:?}");
        }
    }
}

#[test]
fn equal_weight_metric_at_long_horizon() {
    let spec = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    let res = delta_metric_mc(&spec, &plus(), 10.0, 50.0, 10_000, 17).unwrap();
    assert!((res.delta_0 - 0.5).abs() < 1e-15);
    assert!(res.omega < 0.0);
    assert!(res.within(3.0), "{res:?}");
}

#[test]
fn metric_is_deterministic() {
    let spec = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    let a = delta_metric_mc(&spec, &plus(), 2.0, 5.0, 500, 3).unwrap();
    let b = delta_metric_mc(&spec, &plus(), 2.0, 5.0, 500, 3).unwrap();
    assert_eq!(a, b);
}

fn geometry(d: f64, spacing: f64) -> AmplificationGeometry {
    AmplificationGeometry {
        peak_separation: d,
        intra_spacing: spacing,
        horizon: 20.0,
        n_cells: 8,
    }
}

#[test]
fn separated_particles_amplify_linearly() {
    let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
    let scan = amplification_scan(&spec, &[1, 2, 3, 4], &geometry(50.0, 5.0)).unwrap();
    assert!(scan.in_regime);
    assert!((scan.exponents[0] / scan.single_particle_exponent - 1.0).abs() < 1e-6, "{scan:?}");
    let ratio = scan.ratios[3];
    assert!((ratio / 4.0 - 1.0).abs() < 0.1, "ratio {ratio}");
    let slope = scan.scaling_exponent().slope;
    assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn overlapping_peaks_are_flagged() {
    let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
    let scan = amplification_scan(&spec, &[1, 4], &geometry(0.2, 0.1)).unwrap();
    assert!(!scan.in_regime);
    assert!((scan.ratios[1] / 4.0 - 1.0).abs() > 0.1, "{scan:?}");
}

#[test]
fn collapse_exponent_reaches_a_partial_plateau() {
    let spec = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    let rep = transient_plateau_check(&spec, &[10.0, 20.0, 40.0], &[5.0, 50.0, 200.0]).unwrap();
    assert!(rep.converges(0.01), "{rep:?}");
    assert!(rep.far_field_spread(10.0) < 0.01);
    let log_law = -(100f64).ln() / (4.0 * std::f64::consts::PI.powi(2));
    assert!((rep.plateau / log_law - 1.0).abs() < 1e-12);
    assert!((rep.rows[0].omega_infinity / log_law - 1.0).abs() < 0.005);
}

#[test]
fn plateau_deepens_with_cutoff() {
    let lo = PropagatorSpec::new(1.0, 50.0, 1.0).unwrap();
    let hi = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    let a = omega_infinity(&lo, 20.0).unwrap();
    let b = omega_infinity(&hi, 20.0).unwrap();
    assert!(b < a);
    let want = plateau_value(&hi) - plateau_value(&lo);
    assert!(((b - a) / want - 1.0).abs() < 0.02);
}

// The exponent first overshoots below its plateau and rings toward it, so the
// monotone-and-bounded picture does not hold for this kernel.
#[test]
#[ignore = "false for the Pauli-Villars kernel: the exponent overshoots its plateau at short horizons"]
fn exponent_is_monotone_and_bounded_in_time() {
    let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
    let horizons: Vec<f64> = (1..=40).map(|k| 0.25 * k as f64).collect();
    let rep = transient_plateau_check(&spec, &[10.0], &horizons).unwrap();
    assert!(rep.rows[0].is_monotone());
    assert!(rep.rows[0].bounded_below());
}

#[test]
fn exponent_overshoots_its_plateau() {
    let spec = PropagatorSpec::new(1.0, 10.0, 1.0).unwrap();
    let horizons: Vec<f64> = (1..=40).map(|k| 0.25 * k as f64).collect();
    let rep = transient_plateau_check(&spec, &[10.0], &horizons).unwrap();
    let row = &rep.rows[0];
    assert!(!row.bounded_below());
    let min = row.omega_t.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min < row.omega_infinity * 1.05, "min {min} plateau {}", row.omega_infinity);
}
