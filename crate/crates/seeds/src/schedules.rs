//! Noise schedules: scalings, noise levels, the half log-SNR variable `λ`
//! with closed-form inverses, and preconditioning coefficients.
//!
//! Every quantity is closed form. Nothing is tabulated.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative slack on domain checks, so round trips through `λ` that land a
/// few ulps outside `[t_min, t_max]` are still accepted.
const DOMAIN_SLACK: f64 = 1e-9;

/// The four diffusion frameworks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Variance preserving, linear `β(t) = β_d t + β_m`.
    VpLinear { beta_d: f64, beta_m: f64 },
    /// Variance preserving, cosine `α_t` with shift `s`.
    VpCosine { s: f64 },
    /// Variance exploding, `σ_t = t`.
    Ve,
    /// Preconditioned EDM, `σ_t = t`, data standard deviation `σ_d`.
    Edm { sigma_d: f64 },
}

/// Which change of variables `λ(t)` to use.
///
/// For VP and VE every variant is `-log σ_t`. For EDM the noise-prediction
/// SDE and ODE each have their own `λ`, and `LogSigma` is the plain
/// `-log t` used in data-prediction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaVariant {
    #[default]
    LogSigma,
    Sde,
    Ode,
}

/// Preconditioning coefficients `D = c1·x/α + c2·F`, network input `c3·x`,
/// network time `c4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// A schedule together with its process-time domain `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub t_min: f64,
    pub t_max: f64,
}

/// Default end time of sampling for VP schedules.
pub const VP_EPS: f64 = 1e-4;
/// Default shift of the cosine schedule.
pub const COSINE_SHIFT: f64 = 0.008;
/// Default terminal time of the cosine schedule (`α` vanishes at `t = 1`).
pub const COSINE_T: f64 = 0.9946;

impl Schedule {
    pub fn vp_linear(beta_d: f64, beta_m: f64) -> Self {
        Self { kind: ScheduleKind::VpLinear { beta_d, beta_m }, t_min: VP_EPS, t_max: 1.0 }
    }

    pub fn vp_cosine(s: f64) -> Self {
        Self { kind: ScheduleKind::VpCosine { s }, t_min: VP_EPS, t_max: COSINE_T }
    }

    pub fn ve() -> Self {
        Self { kind: ScheduleKind::Ve, t_min: 0.002, t_max: 80.0 }
    }

    pub fn edm(sigma_d: f64) -> Self {
        Self { kind: ScheduleKind::Edm { sigma_d }, t_min: 0.002, t_max: 80.0 }
    }

    /// Replace the time domain, validating it.
    pub fn with_domain(mut self, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::Config(format!("invalid time domain [{t_min}, {t_max}]")));
        }
        if let ScheduleKind::VpCosine { s } = self.kind {
            if t_max >= 1.0 {
                return Err(Error::Config(format!(
                    "cosine schedule needs t_max < 1 (alpha vanishes at 1), got {t_max}"
                )));
            }
            if s <= 0.0 {
                return Err(Error::Config(format!("cosine shift must be positive, got {s}")));
            }
        }
        self.t_min = t_min;
        self.t_max = t_max;
        self.validate()?;
        Ok(self)
    }

    /// Check the kind parameters.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ScheduleKind::VpLinear { beta_d, beta_m } => beta_d >= 0.0 && beta_m > 0.0,
            ScheduleKind::VpCosine { s } => s > 0.0 && self.t_max < 1.0,
            ScheduleKind::Ve => true,
            ScheduleKind::Edm { sigma_d } => sigma_d > 0.0,
        };
        if ok && self.t_min > 0.0 && self.t_min < self.t_max {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule parameters {self:?}")))
        }
    }

    pub fn is_vp(&self) -> bool {
        matches!(self.kind, ScheduleKind::VpLinear { .. } | ScheduleKind::VpCosine { .. })
    }

    /// `α_t ≡ 1` (VE and EDM).
    pub fn unit_scale(&self) -> bool {
        !self.is_vp()
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let lo = self.t_min * (1.0 - DOMAIN_SLACK);
        let hi = self.t_max * (1.0 + DOMAIN_SLACK);
        if t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::Domain { t, lo: self.t_min, hi: self.t_max })
        }
    }

    /// `(α_t, σ_t, σ̄_t)` with `σ̄ = α·σ`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64, f64)> {
        self.check_time(t)?;
        Ok(self.alpha_sigma_raw(t))
    }

    /// Unchecked `(α, σ, σ̄)`; valid for any `t > 0` where the schedule is defined.
    pub(crate) fn alpha_sigma_raw(&self, t: f64) -> (f64, f64, f64) {
        match self.kind {
            ScheduleKind::VpLinear { beta_d, beta_m } => {
                let a = 0.5 * beta_d * t * t + beta_m * t;
                let alpha = (-0.5 * a).exp();
                (alpha, a.exp_m1().sqrt(), (-(-a).exp_m1()).sqrt())
            }
            ScheduleKind::VpCosine { s } => {
                let la = cosine_log_alpha(s, t);
                ((la).exp(), (-2.0 * la).exp_m1().sqrt(), (-(2.0 * la).exp_m1()).sqrt())
            }
            ScheduleKind::Ve | ScheduleKind::Edm { .. } => (1.0, t, t),
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha_sigma_raw(t).0
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.alpha_sigma_raw(t).1
    }

    pub fn sigma_bar(&self, t: f64) -> f64 {
        self.alpha_sigma_raw(t).2
    }

    /// `λ(t)` for the given variant.
    pub fn lambda(&self, t: f64, variant: LambdaVariant) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.lambda_raw(t, variant))
    }

    pub(crate) fn lambda_raw(&self, t: f64, variant: LambdaVariant) -> f64 {
        match self.kind {
            ScheduleKind::VpLinear { beta_d, beta_m } => {
                let a = 0.5 * beta_d * t * t + beta_m * t;
                -0.5 * a.exp_m1().ln()
            }
            ScheduleKind::VpCosine { s } => -0.5 * (-2.0 * cosine_log_alpha(s, t)).exp_m1().ln(),
            ScheduleKind::Ve => -t.ln(),
            ScheduleKind::Edm { sigma_d } => match variant {
                LambdaVariant::LogSigma => -t.ln(),
                LambdaVariant::Sde => -(t.ln() - sigma_d.ln() - 0.5 * (t * t + sigma_d * sigma_d).ln()),
                LambdaVariant::Ode => -(t / sigma_d).atan().ln(),
            },
        }
    }

    /// Closed-form inverse of [`Schedule::lambda`].
    pub fn t_of_lambda(&self, lambda: f64, variant: LambdaVariant) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(Error::LambdaRange(lambda));
        }
        let t = match self.kind {
            ScheduleKind::VpLinear { beta_d, beta_m } => {
                let a = log1p_exp(-2.0 * lambda);
                2.0 * a / ((beta_m * beta_m + 2.0 * beta_d * a).sqrt() + beta_m)
            }
            ScheduleKind::VpCosine { s } => {
                let c = cosine_rate(s);
                let log_arg = -0.5 * log1p_exp(-2.0 * lambda) + (c * s).cos().ln();
                // acos(x) = 2 asin(√((1 - x)/2)), with 1 - x taken from expm1
                2.0 * (0.5 * -log_arg.exp_m1()).sqrt().asin() / c - s
            }
            ScheduleKind::Ve => (-lambda).exp(),
            ScheduleKind::Edm { sigma_d } => match variant {
                LambdaVariant::LogSigma => (-lambda).exp(),
                LambdaVariant::Sde => {
                    let q = 1.0 / (sigma_d * sigma_d * (-2.0 * lambda).exp()) - 1.0;
                    if q <= 0.0 {
                        return Err(Error::LambdaRange(lambda));
                    }
                    sigma_d / q.sqrt()
                }
                LambdaVariant::Ode => {
                    let e = (-lambda).exp();
                    if e >= 0.5 * PI {
                        return Err(Error::LambdaRange(lambda));
                    }
                    sigma_d * e.tan()
                }
            },
        };
        if t.is_finite() && t > 0.0 {
            Ok(t)
        } else {
            Err(Error::LambdaRange(lambda))
        }
    }

    /// Time at which the unscaled noise level equals `sigma`.
    pub fn t_of_sigma(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("noise level must be positive, got {sigma}")));
        }
        match self.kind {
            ScheduleKind::Ve | ScheduleKind::Edm { .. } => Ok(sigma),
            _ => self.t_of_lambda(-sigma.ln(), LambdaVariant::LogSigma),
        }
    }

    /// `(σ(t_min), σ(t_max))`.
    pub fn sigma_range(&self) -> (f64, f64) {
        (self.sigma(self.t_min), self.sigma(self.t_max))
    }

    pub fn precond(&self, t: f64) -> Result<Precond> {
        self.check_time(t)?;
        Ok(self.precond_raw(t))
    }

    pub(crate) fn precond_raw(&self, t: f64) -> Precond {
        let (alpha, sigma, _) = self.alpha_sigma_raw(t);
        match self.kind {
            ScheduleKind::VpLinear { .. } | ScheduleKind::VpCosine { .. } => {
                Precond { c1: 1.0, c2: -sigma, c3: alpha, c4: t }
            }
            ScheduleKind::Ve => Precond { c1: 1.0, c2: -sigma, c3: 1.0, c4: (0.5 * sigma).ln() },
            ScheduleKind::Edm { sigma_d } => {
                let r = (t * t + sigma_d * sigma_d).sqrt();
                Precond { c1: sigma_d * sigma_d / (r * r), c2: t * sigma_d / r, c3: 1.0 / r, c4: 0.25 * t.ln() }
            }
        }
    }

    /// Forward SDE coefficients `(f(t), g²(t))` of `dx = f x dt + g dw`.
    pub fn drift_diffusion(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::VpLinear { beta_d, beta_m } => {
                let beta = beta_d * t + beta_m;
                (-0.5 * beta, beta)
            }
            ScheduleKind::VpCosine { s } => {
                let c = cosine_rate(s);
                let f = -c * (c * (t + s)).tan();
                (f, -2.0 * f)
            }
            ScheduleKind::Ve | ScheduleKind::Edm { .. } => (0.0, 2.0 * t),
        }
    }
}

fn cosine_rate(s: f64) -> f64 {
    0.5 * PI / (1.0 + s)
}

fn cosine_log_alpha(s: f64, t: f64) -> f64 {
    let c = cosine_rate(s);
    (c * (t + s)).cos().ln() - (c * s).cos().ln()
}

/// `ln(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
