//! Radial momentum integrals of Pauli–Villars differenced propagators.
//!
//! After the angular integration every quantity needed here has the form
//!
//! ```text
//!   I = Σ_μ s_μ ∫_μ^∞ A_μ(ω) B(ω) dω,   p_μ = √(ω² − μ²),
//! ```
//!
//! with a spatial factor `A_μ` (`sin(p r)/r`, `sin(p r)/r − p`, or `p`) and a
//! time factor `B(ω) = Σ c e^{iνω} ω^{−n}`. The integral is split into Gauss–
//! Legendre panels up to a cutoff `W` and an exact tail: each oscillating tail
//! term is integrated along a contour rotated into the half plane where it
//! decays (equivalent to Abel regularization of the non-decaying pieces), and
//! non-oscillating terms are mapped onto a finite interval with `ω = W/t`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical settings shared by every momentum integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// The panel region ends at `cutoff_multiplier · max(Λ, 1/r)`.
    pub cutoff_multiplier: f64,
    /// Gauss–Legendre order per panel (at least 64).
    pub nodes: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            cutoff_multiplier: 50.0,
            nodes: 64,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 64 {
            return Err(Error::invalid("nodes", format!("need at least 64, got {}", self.nodes)));
        }
        if !(self.cutoff_multiplier >= 1.0 && self.cutoff_multiplier.is_finite()) {
            return Err(Error::invalid("cutoff_multiplier", "must be >= 1"));
        }
        Ok(())
    }
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub(crate) fn gauss_legendre(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("rule cache poisoned").get(&n) {
        return r.clone();
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    let rule = Arc::new((x, w));
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert(n, rule.clone());
    rule
}

/// Spatial factor of the radial integrand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Spatial {
    /// `sin(p r)/r`, the angular average of `p e^{i p·x}` at `|x| = r > 0`.
    Sin(f64),
    /// `sin(p r)/r − p`: the separated minus the coincident value.
    SincMinusOne(f64),
    /// `p`, the coincident-point limit.
    Momentum,
}

impl Spatial {
    fn r(&self) -> f64 {
        match *self {
            Spatial::Sin(r) | Spatial::SincMinusOne(r) => r,
            Spatial::Momentum => 0.0,
        }
    }

    fn eval(&self, p: f64) -> f64 {
        match *self {
            Spatial::Sin(r) => (p * r).sin() / r,
            Spatial::SincMinusOne(r) => (p * r).sin() / r - p,
            Spatial::Momentum => p,
        }
    }

    /// Decomposition into `coef · e^{i k r p}` (k = ±1) and `coef · p` (k = 0).
    fn parts(&self) -> Vec<(i32, C64)> {
        let r = self.r();
        let sin_parts = || {
            let c = C64::new(0.0, -0.5 / r); // 1/(2i r)
            vec![(1, c), (-1, -c)]
        };
        match self {
            Spatial::Sin(_) => sin_parts(),
            Spatial::SincMinusOne(_) => {
                let mut v = sin_parts();
                v.push((0, C64::new(-1.0, 0.0)));
                v
            }
            Spatial::Momentum => vec![(0, C64::new(1.0, 0.0))],
        }
    }
}

/// One term `coef · e^{iνω} · ω^{−power}` of the time factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Phase {
    pub coef: C64,
    pub nu: f64,
    pub power: i32,
}

impl Phase {
    pub fn new(coef: C64, nu: f64, power: i32) -> Self {
        Self { coef, nu, power }
    }

    pub fn real(coef: f64, nu: f64, power: i32) -> Self {
        Self::new(C64::new(coef, 0.0), nu, power)
    }

    fn eval(&self, w: f64) -> C64 {
        self.coef * C64::from_polar(w.powi(-self.power), self.nu * w)
    }
}

/// A PV-differenced radial integral.
pub(crate) struct MomentumIntegral<'a> {
    /// `(mass, sign)` pairs; Pauli–Villars uses `[(m, 1), (Λ, −1)]`.
    pub masses: &'a [(f64, f64)],
    pub spatial: Spatial,
    pub time: &'a [Phase],
}

fn complex_expm1(z: C64) -> C64 {
    let ex = z.re.exp_m1();
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    C64::new(ex * c - 2.0 * half * half, (ex + 1.0) * s)
}

fn momentum(w: C64, mu: f64) -> C64 {
    (w - mu).sqrt() * (w + mu).sqrt()
}

impl MomentumIntegral<'_> {
    fn validate(&self) -> Result<()> {
        if self.masses.is_empty() {
            return Err(Error::invalid("masses", "no masses"));
        }
        for &(m, _) in self.masses {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::invalid("mass", format!("must be > 0, got {m}")));
            }
        }
        let r = self.spatial.r();
        if !(r >= 0.0 && r.is_finite()) || (r == 0.0 && self.spatial != Spatial::Momentum) {
            return Err(Error::invalid("r", format!("bad separation {r}")));
        }
        if self.time.iter().any(|t| !t.nu.is_finite()) {
            return Err(Error::invalid("nu", "non-finite frequency"));
        }
        Ok(())
    }

    fn pv_balanced(&self) -> bool {
        self.masses.len() >= 2 && self.masses.iter().map(|m| m.1).sum::<f64>().abs() < 1e-12
    }

    fn time_factor(&self, w: f64) -> C64 {
        self.time.iter().map(|t| t.eval(w)).sum()
    }

    // Σ_μ s_μ A_μ(ω) for the masses whose threshold lies at or below `w`.
    fn spatial_sum(&self, w: f64, lo: f64, s_from_lo: Option<f64>) -> f64 {
        let mut acc = 0.0;
        for &(mu, sign) in self.masses {
            if mu > lo {
                continue;
            }
            let p = match s_from_lo {
                // ω = lo + s² keeps the threshold square root exact
                Some(s) if mu == lo => s * (w + mu).sqrt(),
                _ => ((w - mu) * (w + mu)).max(0.0).sqrt(),
            };
            acc += sign * self.spatial.eval(p);
        }
        acc
    }

    fn max_frequency(&self) -> f64 {
        self.time.iter().map(|t| t.nu.abs()).fold(0.0, f64::max)
    }

    /// Gauss–Legendre sum over `[lo, hi]`, where `lo` is a threshold or the
    /// end of an earlier segment. Returns (integral, ∫|f|).
    fn segment(&self, lo: f64, hi: f64, threshold: bool, rule: &Rule) -> (C64, f64) {
        let (xs, ws) = (&rule.0, &rule.1);
        let r = self.spatial.r();
        let nu = self.max_frequency();
        let budget = 8.0 * PI;
        let w_osc = if nu + r > 0.0 { budget / (nu + r) } else { f64::INFINITY };
        let phase = |a: f64, b: f64| {
            let pa = ((a - lo) * (a + lo)).max(0.0).sqrt();
            let pb = ((b - lo) * (b + lo)).max(0.0).sqrt();
            r * (pb - pa) + nu * (b - a)
        };
        let mut total = C64::new(0.0, 0.0);
        let mut scale = 0.0;
        let mut start = lo;
        let mut width = (hi - lo).min(w_osc).min(lo.max(1e-300));
        if threshold {
            while phase(lo, lo + width) > budget {
                width *= 0.5;
            }
            // ω = lo + s², dω = 2s ds
            let smax = width.sqrt();
            for (x, wt) in xs.iter().zip(ws.iter()) {
                let s = 0.5 * smax * (x + 1.0);
                let w = lo + s * s;
                let f = self.spatial_sum(w, lo, Some(s)) * self.time_factor(w);
                let jac = 0.5 * smax * wt * 2.0 * s;
                total += f * jac;
                scale += f.norm() * jac;
            }
            start = lo + width;
        }
        while start < hi {
            let mut w = (2.0 * width).min(w_osc).min(hi - start);
            while w > 0.0 && phase(start, start + w) > budget {
                w *= 0.5;
            }
            let end = if hi - (start + w) < 1e-12 * hi { hi } else { start + w };
            let half = 0.5 * (end - start);
            let mid = 0.5 * (end + start);
            for (x, wt) in xs.iter().zip(ws.iter()) {
                let om = mid + half * x;
                let f = self.spatial_sum(om, lo, None) * self.time_factor(om);
                total += f * (half * wt);
                scale += f.norm() * half * wt;
            }
            width = end - start;
            start = end;
        }
        (total, scale)
    }

    fn body(&self, hi: f64, rule: &Rule) -> (C64, f64) {
        let mut thresholds: Vec<f64> = self.masses.iter().map(|m| m.0).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let mut total = C64::new(0.0, 0.0);
        let mut scale = 0.0;
        for (k, &lo) in thresholds.iter().enumerate() {
            if lo >= hi {
                break;
            }
            let end = thresholds.get(k + 1).copied().unwrap_or(hi).min(hi);
            let (v, s) = self.segment(lo, end, true, rule);
            total += v;
            scale += s;
        }
        (total, scale)
    }

    // Σ_μ s_μ h_μ(ω) e^{iνω} ω^{−n} for one spatial part and one time term,
    // written so that PV cancellations at large |ω| are exact.
    fn tail_integrand(&self, part: (i32, C64), term: &Phase, w: C64) -> C64 {
        let (k, coef) = part;
        let r = self.spatial.r();
        let balanced = self.pv_balanced();
        let mut acc = C64::new(0.0, 0.0);
        for &(mu, sign) in self.masses {
            let p = momentum(w, mu);
            let v = if k == 0 {
                if balanced {
                    -mu * mu / (p + w)
                } else {
                    p
                }
            } else {
                let arg = C64::new(0.0, k as f64 * r) * (p - w);
                if balanced {
                    complex_expm1(arg)
                } else {
                    arg.exp()
                }
            };
            acc += v * sign;
        }
        let kappa = k as f64 * r + term.nu;
        coef * term.coef * acc * (C64::new(0.0, kappa) * w).exp() * w.powi(-term.power)
    }

    fn tail(&self, cutoff: f64, rule: &Rule) -> Result<C64> {
        let (xs, ws) = (&rule.0, &rule.1);
        let r = self.spatial.r();
        let mut total = C64::new(0.0, 0.0);
        for part in self.spatial.parts() {
            for term in self.time {
                let kappa = part.0 as f64 * r + term.nu;
                if kappa.abs() * cutoff > 1e-9 {
                    // ω = W + iσs with σ = sign κ, decaying like e^{−|κ| s}
                    let sigma = kappa.signum();
                    let rate = kappa.abs();
                    let smax = 60.0 / rate;
                    let mut a = 0.0;
                    let mut width = 0.5 * (1.0 / rate).min(cutoff);
                    while a < smax {
                        let b = a + width;
                        let half = 0.5 * width;
                        let mid = 0.5 * (a + b);
                        for (x, wt) in xs.iter().zip(ws.iter()) {
                            let s = mid + half * x;
                            let w = C64::new(cutoff, sigma * s);
                            total += self.tail_integrand(part, term, w)
                                * C64::new(0.0, sigma)
                                * (half * wt);
                        }
                        a = b;
                        width *= 2.0;
                    }
                } else {
                    // Non-oscillating: must decay faster than 1/ω.
                    let mut decay = term.power - if part.0 == 0 { 1 } else { 0 };
                    if self.pv_balanced() {
                        decay += if part.0 == 0 { 2 } else { 1 };
                    }
                    if decay <= 1 {
                        return Err(Error::Domain(format!(
                            "momentum integral diverges (non-oscillating tail ~ ω^-{decay})"
                        )));
                    }
                    // ω = W/t on dyadic panels toward t = 0
                    let mut hi = 1.0;
                    for _ in 0..60 {
                        let lo = 0.5 * hi;
                        let half = 0.5 * (hi - lo);
                        let mid = 0.5 * (hi + lo);
                        for (x, wt) in xs.iter().zip(ws.iter()) {
                            let t = mid + half * x;
                            let w = C64::new(cutoff / t, 0.0);
                            total += self.tail_integrand(part, term, w) * (cutoff / (t * t) * half * wt);
                        }
                        hi = lo;
                    }
                }
            }
        }
        if !(total.re.is_finite() && total.im.is_finite()) {
            return Err(Error::Domain("momentum integral tail is not finite".into()));
        }
        Ok(total)
    }

    /// Integral with the refinement check: results with cutoffs `W` and `2W`
    /// must agree to 1e-6 relative to `∫|f|`.
    pub fn evaluate(&self, settings: &QuadratureSettings) -> Result<C64> {
        self.validate()?;
        settings.validate()?;
        let rule = gauss_legendre(settings.nodes);
        let heaviest = self.masses.iter().map(|m| m.0).fold(0.0, f64::max);
        let r = self.spatial.r();
        let inv_r = if r > 0.0 { 1.0 / r } else { 0.0 };
        let cutoff = settings.cutoff_multiplier * heaviest.max(inv_r);
        let (body, scale) = self.body(cutoff, &rule);
        let coarse = body + self.tail(cutoff, &rule)?;
        let (extra, extra_scale) = self.segment(cutoff, 2.0 * cutoff, false, &rule);
        let fine = body + extra + self.tail(2.0 * cutoff, &rule)?;
        let denom = (scale + extra_scale).max(coarse.norm()).max(1e-300);
        let relative = (fine - coarse).norm() / denom;
        if !(relative <= 1e-6) {
            return Err(Error::QuadratureFailure {
                coarse: coarse.re,
                fine: fine.re,
                relative,
            });
        }
        Ok(fine)
    }
}
