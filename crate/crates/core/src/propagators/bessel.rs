//! Modified Bessel functions of the second kind, orders 0 and 1.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `K₀(x)` for `x > 0`.
pub fn bessel_k0(x: f64) -> Result<f64> {
    check(x)?;
    Ok(if x <= 2.0 { series(x).0 } else { steed(x).0 })
}

/// `K₁(x)` for `x > 0`.
pub fn bessel_k1(x: f64) -> Result<f64> {
    check(x)?;
    Ok(if x <= 2.0 { series(x).1 } else { steed(x).1 })
}

fn check(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("modified Bessel K needs x > 0, got {x}")))
    }
}

// Ascending series, accurate to a few ulps on (0, 2].
fn series(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let l = (0.5 * x).ln();
    // k = 0 terms
    let mut t0 = 1.0; // y^k / (k!)²
    let mut t1 = 1.0; // y^k / (k! (k+1)!)
    let mut harmonic = 0.0;
    let mut i0 = t0;
    let mut i1 = t1;
    let mut k0_sum = 0.0;
    let mut k1_sum = -2.0 * EULER_GAMMA + 1.0; // ψ(1) + ψ(2)
    for k in 1..60 {
        let kf = k as f64;
        t0 *= y / (kf * kf);
        t1 *= y / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        i0 += t0;
        i1 += t1;
        k0_sum += t0 * harmonic;
        // ψ(k+1) + ψ(k+2) = −2γ + 2H_k + 1/(k+1)
        k1_sum += t1 * (-2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0));
        if t0 < 1e-18 * i0 && t1 < 1e-18 * i1 {
            break;
        }
    }
    let k0 = -(l + EULER_GAMMA) * i0 + k0_sum;
    let i1 = 0.5 * x * i1;
    let k1 = 1.0 / x + l * i1 - 0.25 * x * k1_sum;
    (k0, k1)
}

// Steed's continued fraction (Temme's normalization) for x ≥ 2.
fn steed(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

#[cfg(test)]
mod tests {
    use super::*;

    // K_ν(x) = ∫₀^∞ e^{−x cosh t} cosh(νt) dt; the trapezoid rule converges
    // exponentially for this doubly-exponentially decaying integrand.
    fn k_integral(x: f64, nu: f64) -> f64 {
        let h = 1e-3;
        let mut sum = 0.5 * (-x).exp();
        let mut t: f64 = h;
        loop {
            let v = (-x * t.cosh()).exp() * (nu * t).cosh();
            sum += v;
            if v < 1e-300 || t > 50.0 {
                break;
            }
            t += h;
        }
        sum * h
    }

    #[test]
    fn k0_matches_integral_representation() {
        for &x in &[1e-3, 0.1, 0.5, 1.0, 1.9, 2.0, 2.1, 3.5, 7.0, 15.0, 40.0] {
            let want = k_integral(x, 0.0);
            let got = bessel_k0(x).unwrap();
            assert!((got / want - 1.0).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn k1_matches_integral_representation() {
        for &x in &[1e-3, 0.1, 0.5, 1.0, 1.9, 2.0, 2.1, 3.5, 7.0, 15.0, 40.0] {
            let want = k_integral(x, 1.0);
            let got = bessel_k1(x).unwrap();
            assert!((got / want - 1.0).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn large_argument_asymptotics() {
        let x: f64 = 20.0;
        let asym = (PI / (2.0 * x)).sqrt() * (-x).exp() * (1.0 - 1.0 / (8.0 * x));
        assert!((bessel_k0(x).unwrap() / asym - 1.0).abs() < 1e-3);
    }

    #[test]
    fn small_argument_logarithm() {
        let x: f64 = 1e-4;
        let approx = -(x / 2.0).ln() - EULER_GAMMA;
        assert!((bessel_k0(x).unwrap() / approx - 1.0).abs() < 1e-6);
    }

    #[test]
    fn derivative_of_k0_is_minus_k1() {
        for &x in &[0.3, 1.0, 2.0, 5.0, 12.0] {
            let h = 1e-5 * x;
            let d = (bessel_k0(x + h).unwrap() - bessel_k0(x - h).unwrap()) / (2.0 * h);
            let k1 = k_integral(x, 1.0);
            assert!((d + k1).abs() < 1e-6 * k1, "x={x}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(bessel_k0(0.0).is_err());
        assert!(bessel_k0(-1.0).is_err());
        assert!(bessel_k1(f64::NAN).is_err());
    }
}
