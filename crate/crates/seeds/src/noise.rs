//! Reproducible Gaussian draws and the exponentially weighted stochastic
//! increments used by the solvers.
//!
//! Streams are counter based: every `(seed, path, step, stage)` key seeds an
//! independent ChaCha20 generator, so any draw can be regenerated without
//! replaying the draws before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::phi;

/// Step index reserved for initial-state draws.
pub const INIT_STEP: u64 = u64::MAX;
/// Step index reserved for a path's fine Brownian increments.
pub const BROWNIAN_STEP: u64 = u64::MAX - 1;
/// Stage index reserved for churn noise.
pub const CHURN_STAGE: u32 = 15;

/// Identifies one independent substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    pub step: u64,
    pub stage: u32,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64, step: u64, stage: u32) -> Self {
        Self { seed, path, step, stage }
    }

    fn bytes(&self) -> [u8; 32] {
        let mut b = [0u8; 32];
        b[0..8].copy_from_slice(&self.seed.to_le_bytes());
        b[8..16].copy_from_slice(&self.path.to_le_bytes());
        b[16..24].copy_from_slice(&self.step.to_le_bytes());
        b[24..28].copy_from_slice(&self.stage.to_le_bytes());
        b[28..32].copy_from_slice(b"seed");
        b
    }
}

/// A generator for one key.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha20Rng);

impl RngStream {
    pub fn new(key: StreamKey) -> Self {
        Self(ChaCha20Rng::from_seed(key.bytes()))
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// `d` i.i.d. standard normal draws.
    ///
    /// ```
    /// use seeds::noise::{RngStream, StreamKey};
    /// let key = StreamKey::new(42, 0, 0, 0);
    /// assert_eq!(RngStream::new(key).gauss(3), RngStream::new(key).gauss(3));
    /// ```
    pub fn gauss(&mut self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        self.fill_gauss(&mut v);
        v
    }

    pub fn fill_gauss(&mut self, out: &mut [f64]) {
        for o in out {
            *o = self.0.sample(StandardNormal);
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

/// Standard normal vectors handed to a solver step, one per stage.
pub trait NoiseSource {
    fn normal(&mut self, stage: u32, out: &mut [f64]);
}

/// Draws from the keyed stream of `(seed, path, step, stage)`.
#[derive(Debug, Clone, Copy)]
pub struct KeyedNoise {
    pub seed: u64,
    pub path: u64,
    pub step: u64,
}

impl NoiseSource for KeyedNoise {
    fn normal(&mut self, stage: u32, out: &mut [f64]) {
        RngStream::new(StreamKey::new(self.seed, self.path, self.step, stage)).fill_gauss(out);
    }
}

/// All draws zero: the deterministic part of a stochastic step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self, _stage: u32, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Prescribed draws, indexed by stage.
#[derive(Debug, Clone, Default)]
pub struct FixedNoise(pub Vec<Vec<f64>>);

impl NoiseSource for FixedNoise {
    fn normal(&mut self, stage: u32, out: &mut [f64]) {
        match self.0.get(stage as usize) {
            Some(z) => out.copy_from_slice(z),
            None => out.fill(0.0),
        }
    }
}

/// Parameterization of a single-step increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementKind {
    Np,
    Dp,
}

/// Standard deviation of the single-step noise term: `σ̄_t √(e^{2h} - 1)`
/// for noise prediction, `σ̄_t √(1 - e^{-2h})` for data prediction.
pub fn weighted_increment_std(sigma_bar_t: f64, h: f64, kind: IncrementKind) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("increment width must be positive, got {h}")));
    }
    Ok(match kind {
        IncrementKind::Np => sigma_bar_t * (2.0 * h).exp_m1().sqrt(),
        IncrementKind::Dp => sigma_bar_t * (-(-2.0 * h).exp_m1()).sqrt(),
    })
}

/// `Var ∫_{λ_s}^{λ_t} e^{-λ} dw_λ = ½(e^{-2λ_s} - e^{-2λ_t})`.
pub fn weighted_variance(lambda_s: f64, lambda_t: f64) -> f64 {
    0.5 * (-2.0 * lambda_t).exp() * (2.0 * (lambda_t - lambda_s)).exp_m1()
}

/// SEEDS-2 stage noises `(σ̄_mid √(e^h - 1) z¹, σ̄_t (√(e^{2h} - e^h) z¹ + √(e^h - 1) z²))`.
pub fn staged_noise_seeds2(
    noise: &mut dyn NoiseSource,
    sigma_bar_mid: f64,
    sigma_bar_t: f64,
    h: f64,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut z1 = vec![0.0; d];
    let mut z2 = vec![0.0; d];
    noise.normal(0, &mut z1);
    noise.normal(1, &mut z2);
    let (a, b) = phi::two_stage_coeffs(h);
    let mid = z1.iter().map(|z| sigma_bar_mid * b * z).collect();
    let full = z1.iter().zip(&z2).map(|(u, v)| sigma_bar_t * (a * u + b * v)).collect();
    (mid, full)
}

/// SEEDS-3 stage noises `(n1, A, B)`.
pub fn staged_noise_seeds3(
    noise: &mut dyn NoiseSource,
    scales: [f64; 3],
    h: f64,
    r1: f64,
    r2: f64,
    d: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !(0.0 < r1 && r1 < r2 && r2 < 1.0) {
        return Err(Error::Config(format!("stage fractions need 0 < r1 < r2 < 1, got {r1}, {r2}")));
    }
    let mut z = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (stage, v) in z.iter_mut().enumerate() {
        noise.normal(stage as u32, v);
    }
    let c1 = (2.0 * r1 * h).exp_m1().sqrt();
    let c21 = phi::sqrt_exp_diff(2.0 * r2 * h, 2.0 * r1 * h);
    let c = phi::three_stage_coeffs(h, r1, r2);
    let n1 = z[0].iter().map(|v| scales[0] * c1 * v).collect();
    let a = (0..d).map(|i| scales[1] * (c21 * z[0][i] + c1 * z[1][i])).collect();
    let b = (0..d).map(|i| scales[2] * (c[0] * z[0][i] + c[1] * z[1][i] + c[2] * z[2][i])).collect();
    Ok((n1, a, b))
}

/// Independent increments `I_j = ∫_{λ_j}^{λ_{j+1}} e^{-λ} dw_λ` over a
/// strictly increasing partition, one `d`-vector per subinterval.
pub fn chasles_refine(rng: &mut RngStream, partition: &[f64], d: usize) -> Result<Vec<Vec<f64>>> {
    if partition.len() < 2 {
        return Err(Error::Config("partition needs at least two points".into()));
    }
    partition
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            if !(w[1] > w[0]) {
                return Err(Error::Config(format!("partition not strictly increasing at {j}: {} then {}", w[0], w[1])));
            }
            let sd = weighted_variance(w[0], w[1]).sqrt();
            Ok((0..d).map(|_| sd * rng.normal()).collect())
        })
        .collect()
}

/// A Gaussian pair with covariance `[[h, h²/2], [h²/2, h³/3]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatedPair {
    pub w_hat: f64,
    pub z_hat: f64,
}

impl CorrelatedPair {
    /// Lower-triangular map of two standard normals.
    pub fn from_normals(h: f64, u1: f64, u2: f64) -> Self {
        let s = h.sqrt();
        Self { w_hat: s * u1, z_hat: 0.5 * h * s * u1 + h * s / (2.0 * 3f64.sqrt()) * u2 }
    }
}

pub fn correlated_pair(rng: &mut RngStream, h: f64) -> Result<CorrelatedPair> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("pair width must be positive, got {h}")));
    }
    let u1 = rng.normal();
    let u2 = rng.normal();
    Ok(CorrelatedPair::from_normals(h, u1, u2))
}

/// Discrete increment matching Gaussian moments: two-point `±√h` (order 1)
/// or three-point `±√(3h)` w.p. 1/6 each and `0` w.p. 2/3 (order 2).
pub fn weak_point_increment(rng: &mut RngStream, h: f64, order: u32) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("increment width must be positive, got {h}")));
    }
    let u = rng.uniform();
    match order {
        1 => Ok(if u < 0.5 { h.sqrt() } else { -h.sqrt() }),
        2 => {
            let a = (3.0 * h).sqrt();
            Ok(if u < 1.0 / 6.0 {
                a
            } else if u < 1.0 / 3.0 {
                -a
            } else {
                0.0
            })
        }
        _ => Err(Error::Config(format!("weak increment order must be 1 or 2, got {order}"))),
    }
}
