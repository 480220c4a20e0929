use collapse_core::propagators::{omega_infinity, PropagatorSpec};
use collapse_wasm_demo::{amplification_ratios, collapse_paths, omega_curve};

#[test]
fn omega_curve_matches_library_values() {
    let c = omega_curve(1.0, 100.0, 1.0, 0.1, 10.0, 5, 20.0).unwrap();
    let spec = PropagatorSpec::new(1.0, 100.0, 1.0).unwrap();
    assert_eq!(c.r.len(), 5);
    for (r, w) in c.r.iter().zip(&c.omega_infinity) {
        assert_eq!(*w, omega_infinity(&spec, *r).unwrap());
    }
    assert!(omega_curve(1.0, 100.0, 1.0, 0.1, 10.0, 10_000, 20.0).is_err());
}

#[test]
fn paths_stay_probabilities_and_collapse() {
    let p = collapse_paths(1.0, 0.3, 0.005, 15.0, 16, 7).unwrap();
    assert_eq!(p.paths.len(), 16);
    assert_eq!(p.t.len(), 3001);
    for path in &p.paths {
        assert!((path[0] - 0.3).abs() < 1e-12);
        assert!(path.iter().all(|x| (-1e-12..=1.0 + 1e-12).contains(x)));
        let end = path.last().unwrap();
        assert!(*end < 1e-3 || *end > 1.0 - 1e-3, "undecided at {end}");
    }
    let again = collapse_paths(1.0, 0.3, 0.005, 15.0, 16, 7).unwrap();
    assert_eq!(p.paths, again.paths);
    assert!(collapse_paths(1.0, 1.5, 0.01, 1.0, 1, 0).is_err());
}

#[test]
fn ratios_grow_as_n_squared() {
    let rows = amplification_ratios(0.05, 1.0, 10, 4).unwrap();
    for r in &rows {
        let n2 = (r.n * r.n) as f64;
        assert!((r.ratio / n2 - 1.0).abs() < 0.05, "N={} ratio {}", r.n, r.ratio);
        assert!((r.rate / r.closed_form - 1.0).abs() < 0.1);
    }
    assert!(amplification_ratios(0.05, 1.0, 2, 2).is_err(), "branches closer than 5σ");
}
