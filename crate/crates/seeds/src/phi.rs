//! φ-functions, exponentially weighted polynomial integrals and the
//! `expm1`-based noise coefficients shared by the staged solvers.
//!
//! `φ_0(h) = e^h`, `φ_{k+1}(h) = (φ_k(h) - 1/k!)/h`, `φ_k(0) = 1/k!`.
//!
//! The forward recursion cancels badly whenever `|h|` is below the order,
//! so evaluation instead reduces `h` by powers of two, sums the Taylor
//! series at the reduced argument and doubles back up with
//! `φ_k(2h) = 2^{-k} [φ_0(h) φ_k(h) + Σ_{j=1..k} φ_j(h)/(k-j)!]`.
//! Every term there is positive, for either sign of `h`.

use crate::error::{Error, Result};

/// Highest supported order.
pub const MAX_ORDER: usize = 8;
/// Largest supported argument.
pub const MAX_ARG: f64 = 50.0;
/// Below this magnitude the degree-6 Taylor polynomial is used directly.
pub const TAYLOR_SWITCH: f64 = 1e-4;

const INV_FACT: [f64; 18] = {
    let mut t = [1.0; 18];
    let mut i = 1;
    while i < 18 {
        t[i] = t[i - 1] / i as f64;
        i += 1;
    }
    t
};

/// `1/n!` for `n < 18`.
pub fn inv_factorial(n: usize) -> f64 {
    INV_FACT[n]
}

/// `φ_k(h)`.
///
/// ```
/// let v = seeds::phi::phi(1, 1.0).unwrap();
/// assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-15);
/// ```
pub fn phi(k: usize, h: f64) -> Result<f64> {
    Ok(phi_upto(k, h)?[k])
}

/// `[φ_0(h), ..., φ_k(h)]`, padded with zeros up to [`MAX_ORDER`].
pub fn phi_upto(k: usize, h: f64) -> Result<[f64; MAX_ORDER + 1]> {
    if k > MAX_ORDER {
        return Err(Error::Config(format!("phi order {k} exceeds {MAX_ORDER}")));
    }
    if !h.is_finite() || h > MAX_ARG {
        return Err(Error::Range(h));
    }
    let mut out = [0.0; MAX_ORDER + 1];
    if h.abs() < TAYLOR_SWITCH {
        for (j, o) in out.iter_mut().enumerate().take(k + 1) {
            let mut acc = 0.0;
            for i in (0..=6).rev() {
                acc = acc * h + INV_FACT[j + i];
            }
            *o = acc;
        }
        return Ok(out);
    }
    let mut n = 0;
    let mut r = h;
    while r.abs() > 0.5 {
        r *= 0.5;
        n += 1;
    }
    for (j, o) in out.iter_mut().enumerate().take(k + 1) {
        let mut term = INV_FACT[j];
        let mut acc = term;
        for i in 1..40 {
            term *= r / (j + i) as f64;
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
        }
        *o = acc;
    }
    out[0] = r.exp();
    for _ in 0..n {
        let prev = out;
        for j in (1..=k).rev() {
            let mut s = prev[0] * prev[j];
            for i in 1..=j {
                s += prev[i] * INV_FACT[j - i];
            }
            out[j] = s * 0.5f64.powi(j as i32);
        }
        r *= 2.0;
        out[0] = r.exp();
    }
    Ok(out)
}

/// `∫_{λ_s}^{λ_t} e^{-λ} (λ - λ_s)^k / k! dλ = e^{-λ_t} h^{k+1} φ_{k+1}(h)`.
///
/// ```
/// let v = seeds::phi::weighted_poly_integral(0, 0.0, 2f64.ln()).unwrap();
/// assert!((v - 0.5).abs() < 1e-15);
/// ```
pub fn weighted_poly_integral(k: usize, lambda_s: f64, lambda_t: f64) -> Result<f64> {
    let h = lambda_t - lambda_s;
    Ok((-lambda_t).exp() * h.powi(k as i32 + 1) * phi(k + 1, h)?)
}

/// `√(e^a - e^b)` for `a ≥ b`, as `e^{b/2} √expm1(a - b)`.
pub fn sqrt_exp_diff(a: f64, b: f64) -> f64 {
    (0.5 * b).exp() * (a - b).exp_m1().max(0.0).sqrt()
}

/// Coefficients `(c_1, c_2)` of `√(e^{2h} - e^h) z¹ + √(e^h - 1) z²`,
/// computed as `√expm1(h)·(expm1(h/2) + 1)` and `√expm1(h)`.
pub fn two_stage_coeffs(h: f64) -> (f64, f64) {
    let b = h.exp_m1().sqrt();
    (b * ((0.5 * h).exp_m1() + 1.0), b)
}

/// Coefficients of
/// `√(e^{2h} - e^{2r₂h}) z¹ + √(e^{2r₂h} - e^{2r₁h}) z² + √(e^{2r₁h} - 1) z³`.
pub fn three_stage_coeffs(h: f64, r1: f64, r2: f64) -> [f64; 3] {
    [sqrt_exp_diff(2.0 * h, 2.0 * r2 * h), sqrt_exp_diff(2.0 * r2 * h, 2.0 * r1 * h), (2.0 * r1 * h).exp_m1().sqrt()]
}

/// Coefficients of the same combination in the factored form
/// `√expm1(r₂h)·((expm1(r₂h) + 1) z¹ + (expm1(r₁h) + 1) z² + z³)`, which is
/// the same combination only when `r₁ = 1/3`, `r₂ = 2/3`.
pub fn three_stage_coeffs_thirds(h: f64) -> [f64; 3] {
    let r1 = h / 3.0;
    let r2 = 2.0 * h / 3.0;
    let b = r2.exp_m1().sqrt();
    [b * (r2.exp_m1() + 1.0), b * (r1.exp_m1() + 1.0), b]
}

/// The three-stage noise combination applied to standard normal vectors.
pub fn stable_expm1_combination(h: f64, r1: f64, r2: f64, z: [&[f64]; 3]) -> Vec<f64> {
    let c = three_stage_coeffs(h, r1, r2);
    (0..z[0].len()).map(|i| c[0] * z[0][i] + c[1] * z[1][i] + c[2] * z[2][i]).collect()
}

/// Exponential-time-differencing Euler step for `x' = a x + g`.
pub fn etd_euler(a: f64, h: f64, x: f64, g: f64) -> Result<f64> {
    Ok((a * h).exp() * x + h * phi(1, a * h)? * g)
}

/// Integrating-factor (Lawson) Euler step for `x' = a x + g`.
pub fn lawson_euler(a: f64, h: f64, x: f64, g: f64) -> f64 {
    (a * h).exp() * (x + h * g)
}
