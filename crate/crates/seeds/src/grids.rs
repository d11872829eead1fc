//! Discretization grids, decreasing from `T` toward the terminal time.

use crate::error::{config, Error, Result};
use crate::schedules::{LambdaVariant, Schedule};

/// Where a grid came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    /// Karras-style `ρ`-spacing in `σ`, with a zero-noise sentinel last.
    Edm { rho: f64 },
    /// Uniform in `λ` between `λ(T)` and `λ(ε)`.
    LinearLambda(LambdaVariant),
    /// Caller-provided times.
    Custom,
}

/// A strictly decreasing sequence of times `t_0 > t_1 > ... > t_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    times: Vec<f64>,
    kind: GridKind,
}

impl StepGrid {
    /// Validate and wrap times. Repeated consecutive times are a
    /// [`Error::DegenerateGrid`]; any other increase is a config error.
    pub fn from_times(times: Vec<f64>, kind: GridKind) -> Result<Self> {
        if times.len() < 2 {
            return config("a grid needs at least two nodes");
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return config(format!("grid contains non-finite time {t}"));
        }
        for (i, w) in times.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(Error::DegenerateGrid { i, j: i + 1, t: w[0] });
            }
            if w[1] > w[0] {
                return config(format!(
                    "grid must be strictly decreasing, but t[{}] = {} < t[{}] = {}",
                    i,
                    w[0],
                    i + 1,
                    w[1]
                ));
            }
        }
        Ok(Self { times, kind })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Number of intervals `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `λ` at every node, in the given variant.
    pub fn lambdas(&self, sched: &Schedule, variant: LambdaVariant) -> Result<Vec<f64>> {
        self.times.iter().map(|&t| sched.lambda(t, variant)).collect()
    }

    /// Largest step in `λ`, skipping a zero-time sentinel.
    pub fn max_lambda_step(&self, sched: &Schedule, variant: LambdaVariant) -> Result<f64> {
        let inner: Vec<f64> = self.times.iter().copied().filter(|&t| t > 0.0).collect();
        let mut h = 0.0f64;
        for w in inner.windows(2) {
            h = h.max(sched.lambda(w[1], variant)? - sched.lambda(w[0], variant)?);
        }
        Ok(h)
    }
}

/// `σ_i = (σ_max^{1/ρ} + i/(M-1) (σ_min^{1/ρ} - σ_max^{1/ρ}))^ρ` for
/// `i < M`, followed by `σ_M = 0`. Times are `t_i = t(σ_i)` with `t_M = 0`.
///
/// ```
/// use seeds::{grids::edm_grid, Schedule};
/// let g = edm_grid(&Schedule::edm(0.5), 10, 0.002, 80.0, 7.0).unwrap();
/// assert_eq!(g.times().len(), 11);
/// assert_eq!(g.times()[0], 80.0);
/// assert_eq!(g.times()[9], 0.002);
/// assert_eq!(g.times()[10], 0.0);
/// ```
pub fn edm_grid(sched: &Schedule, m: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<StepGrid> {
    if m < 2 {
        return config(format!("the sigma grid needs at least 2 steps, got {m}"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return config(format!("rho must be positive, got {rho}"));
    }
    if !(0.0 < sigma_min && sigma_min < sigma_max && sigma_max.is_finite()) {
        return config(format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"));
    }
    let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
    let mut times = Vec::with_capacity(m + 1);
    for i in 0..m {
        let sigma = match i {
            0 => sigma_max,
            _ if i == m - 1 => sigma_min,
            _ => (a + i as f64 / (m - 1) as f64 * (b - a)).powf(rho),
        };
        times.push(sched.t_of_sigma(sigma)?);
    }
    if let Some(first) = times.first_mut() {
        if sched.sigma(sched.t_max) == sigma_max {
            *first = sched.t_max;
        }
    }
    if sched.sigma(sched.t_min) == sigma_min {
        times[m - 1] = sched.t_min;
    }
    times.push(0.0);
    StepGrid::from_times(times, GridKind::Edm { rho })
}

/// `M` steps uniform in `λ` from `t_start` down to `t_end`; the endpoints
/// are exact.
///
/// ```
/// use seeds::{grids::linear_lambda_grid, LambdaVariant, Schedule};
/// let s = Schedule::vp_linear(19.9, 0.1);
/// let g = linear_lambda_grid(&s, 4, 1.0, 1e-3, LambdaVariant::LogSigma).unwrap();
/// let l = g.lambdas(&s, LambdaVariant::LogSigma).unwrap();
/// assert!(((l[1] - l[0]) - (l[4] - l[3])).abs() < 1e-9);
/// ```
pub fn linear_lambda_grid(
    sched: &Schedule,
    m: usize,
    t_start: f64,
    t_end: f64,
    variant: LambdaVariant,
) -> Result<StepGrid> {
    if m < 2 {
        return config(format!("the lambda grid needs at least 2 steps, got {m}"));
    }
    if !(0.0 < t_end && t_end < t_start) {
        return config(format!("grid start {t_start} must exceed its end {t_end}"));
    }
    let l0 = sched.lambda(t_start, variant)?;
    let l1 = sched.lambda(t_end, variant)?;
    let mut times = Vec::with_capacity(m + 1);
    times.push(t_start);
    for i in 1..m {
        times.push(sched.t_of_lambda(l0 + (l1 - l0) * i as f64 / m as f64, variant)?);
    }
    times.push(t_end);
    StepGrid::from_times(times, GridKind::LinearLambda(variant))
}

/// Uniform in `t` (used by the Euler–Maruyama baseline and tests).
pub fn uniform_time_grid(m: usize, t_start: f64, t_end: f64) -> Result<StepGrid> {
    if m < 1 {
        return config("a grid needs at least one step");
    }
    let times = (0..=m)
        .map(|i| match i {
            0 => t_start,
            _ if i == m => t_end,
            _ => t_start + (t_end - t_start) * i as f64 / m as f64,
        })
        .collect();
    StepGrid::from_times(times, GridKind::Custom)
}
