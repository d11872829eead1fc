//! Closed-form score oracles for Gaussian and Gaussian-mixture data, and the
//! conversions between score, noise prediction `F` and data prediction `D`.
//!
//! Conventions, for `x_t = α_t x_0 + σ̄_t ε`:
//!
//! * `D = c1·x/α + c2·F` and `D = x/α + α σ² ∇log p_t` (posterior mean),
//!   so `∇log p_t = ((c1 - 1) x/α + c2 F) / (α σ²)`.
//! * For VP and VE this is `F = -σ̄ ∇log p_t` and `D = x/α - σ F`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::noise::RngStream;
use crate::schedules::Schedule;

/// One diagonal Gaussian component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A finite mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    components: Vec<Component>,
    dim: usize,
}

impl DataDistribution {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Config("data distribution needs at least one component".into()));
        };
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Config("data dimension must be at least 1".into()));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return Err(Error::Config(format!("component {k}: weight must be positive")));
            }
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::Config(format!("component {k}: mean/var length differs from dimension {dim}")));
            }
            if c.var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("component {k}: variances must be positive")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config(format!("component {k}: mean must be finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("component weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![Component { weight: 1.0, mean, var }])
    }

    /// Equal-weight mixture of `N(m, V)` and `N(-m, V)`.
    pub fn symmetric_pair(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let neg = mean.iter().map(|m| -m).collect();
        Self::new(vec![Component { weight: 0.5, mean, var: var.clone() }, Component { weight: 0.5, mean: neg, var }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// One draw of `α x_0 + σ̄ ε`, the marginal at scaling `α` and noise `σ̄`.
    pub fn sample_marginal(&self, alpha: f64, sigma_bar: f64, rng: &mut RngStream) -> Vec<f64> {
        let mut k = self.components.len() - 1;
        if self.components.len() > 1 {
            let u = rng.uniform();
            let mut acc = 0.0;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    k = i;
                    break;
                }
            }
        }
        let c = &self.components[k];
        (0..self.dim)
            .map(|i| {
                let sd = (alpha * alpha * c.var[i] + sigma_bar * sigma_bar).sqrt();
                alpha * c.mean[i] + sd * rng.normal()
            })
            .collect()
    }

    /// Per-axis raw moment `E[x_i^p]`, `p ≤ 4`, of the marginal at `(α, σ̄)`.
    pub fn marginal_moment(&self, alpha: f64, sigma_bar: f64, axis: usize, p: u32) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let m = alpha * c.mean[axis];
                let v = alpha * alpha * c.var[axis] + sigma_bar * sigma_bar;
                c.weight * gaussian_raw_moment(m, v, p)
            })
            .sum()
    }
}

/// `E[X^p]` for `X ~ N(m, v)`, `p ≤ 4`.
pub fn gaussian_raw_moment(m: f64, v: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => m,
        2 => m * m + v,
        3 => m * m * m + 3.0 * m * v,
        4 => m.powi(4) + 6.0 * m * m * v + 3.0 * v * v,
        _ => panic!("raw moments above 4 are not supported"),
    }
}

/// What a solver may query. Implementors count one evaluation per call to
/// `noise_pred` or `data_pred`.
pub trait Model: Sync {
    fn schedule(&self) -> &Schedule;
    fn dim(&self) -> usize;
    fn noise_pred(&self, x: &[f64], t: f64) -> Vec<f64>;
    fn data_pred(&self, x: &[f64], t: f64) -> Vec<f64>;
    fn nfe(&self) -> u64;
}

#[derive(Debug)]
enum Source {
    Zero,
    Data(DataDistribution),
}

/// Exact-score model for a known data distribution.
#[derive(Debug)]
pub struct ScoreModel {
    source: Source,
    schedule: Schedule,
    dim: usize,
    nfe: AtomicU64,
}

impl ScoreModel {
    pub fn new(data: DataDistribution, schedule: Schedule) -> Self {
        let dim = data.dim();
        Self { source: Source::Data(data), schedule, dim, nfe: AtomicU64::new(0) }
    }

    /// `F ≡ 0`, `D = x/α`, score `≡ 0`.
    pub fn zero_model(schedule: Schedule, dim: usize) -> Self {
        Self { source: Source::Zero, schedule, dim, nfe: AtomicU64::new(0) }
    }

    pub fn data(&self) -> Option<&DataDistribution> {
        match &self.source {
            Source::Zero => None,
            Source::Data(d) => Some(d),
        }
    }

    pub fn reset_nfe(&self) {
        self.nfe.store(0, Ordering::Relaxed);
    }

    /// `∇log p_t(x)`; not counted as an evaluation.
    pub fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let Source::Data(data) = &self.source else {
            return vec![0.0; x.len()];
        };
        let (alpha, _, sb) = self.schedule.alpha_sigma_raw(t);
        let comps = data.components();
        let mut logw = Vec::with_capacity(comps.len());
        let mut grads = Vec::with_capacity(comps.len());
        for c in comps {
            let mut ll = c.weight.ln();
            let mut g = Vec::with_capacity(x.len());
            for ((xi, m), var) in x.iter().zip(&c.mean).zip(&c.var) {
                let v = alpha * alpha * var + sb * sb;
                let d = xi - alpha * m;
                ll -= 0.5 * (d * d / v + (2.0 * std::f64::consts::PI * v).ln());
                g.push(-d / v);
            }
            logw.push(ll);
            grads.push(g);
        }
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        (0..x.len()).map(|i| grads.iter().zip(&w).map(|(g, wk)| wk * g[i]).sum::<f64>() / z).collect()
    }

    /// `log p_t(x)`.
    pub fn log_density(&self, x: &[f64], t: f64) -> f64 {
        let Source::Data(data) = &self.source else {
            return 0.0;
        };
        let (alpha, _, sb) = self.schedule.alpha_sigma_raw(t);
        let terms: Vec<f64> = data
            .components()
            .iter()
            .map(|c| {
                let mut ll = c.weight.ln();
                for ((xi, m), var) in x.iter().zip(&c.mean).zip(&c.var) {
                    let v = alpha * alpha * var + sb * sb;
                    let d = xi - alpha * m;
                    ll -= 0.5 * (d * d / v + (2.0 * std::f64::consts::PI * v).ln());
                }
                ll
            })
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + terms.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
    }

    fn count(&self) {
        self.nfe.fetch_add(1, Ordering::Relaxed);
    }
}

impl Model for ScoreModel {
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_pred(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.count();
        match self.source {
            Source::Zero => vec![0.0; x.len()],
            Source::Data(_) => noise_from_score(&self.schedule, x, t, &self.score(x, t)),
        }
    }

    fn data_pred(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.count();
        match self.source {
            Source::Zero => {
                let a = self.schedule.alpha(t);
                x.iter().map(|v| v / a).collect()
            }
            Source::Data(_) => data_from_score(&self.schedule, x, t, &self.score(x, t)),
        }
    }

    fn nfe(&self) -> u64 {
        self.nfe.load(Ordering::Relaxed)
    }
}

/// `F = (α σ² ∇log p - (c1 - 1) x/α) / c2`.
pub fn noise_from_score(s: &Schedule, x: &[f64], t: f64, score: &[f64]) -> Vec<f64> {
    let (alpha, sigma, _) = s.alpha_sigma_raw(t);
    let p = s.precond_raw(t);
    x.iter().zip(score).map(|(xi, si)| (alpha * sigma * sigma * si - (p.c1 - 1.0) * xi / alpha) / p.c2).collect()
}

/// `∇log p = ((c1 - 1) x/α + c2 F) / (α σ²)`.
pub fn score_from_noise(s: &Schedule, x: &[f64], t: f64, f: &[f64]) -> Vec<f64> {
    let (alpha, sigma, _) = s.alpha_sigma_raw(t);
    let p = s.precond_raw(t);
    x.iter().zip(f).map(|(xi, fi)| ((p.c1 - 1.0) * xi / alpha + p.c2 * fi) / (alpha * sigma * sigma)).collect()
}

/// `D = x/α + α σ² ∇log p`.
pub fn data_from_score(s: &Schedule, x: &[f64], t: f64, score: &[f64]) -> Vec<f64> {
    let (alpha, sigma, _) = s.alpha_sigma_raw(t);
    x.iter().zip(score).map(|(xi, si)| xi / alpha + alpha * sigma * sigma * si).collect()
}

/// `D = c1 x/α + c2 F`.
pub fn data_from_noise(s: &Schedule, x: &[f64], t: f64, f: &[f64]) -> Vec<f64> {
    let alpha = s.alpha(t);
    let p = s.precond_raw(t);
    x.iter().zip(f).map(|(xi, fi)| p.c1 * xi / alpha + p.c2 * fi).collect()
}
