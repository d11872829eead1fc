//! One-step update rules for every solver family and the outer iteration.
//!
//! Noise-prediction steps are written once against a [`Frame`]: a
//! transition factor `Φ(t, s)`, a scale `κ_t` and a sign, so that the VP
//! step `(α_t/α_s) x - σ̄_t (e^h - 1) F` and its EDM counterparts share code.
//! Data-prediction steps always use `λ = -log σ`.

use crate::error::{config, Error, Result};
use crate::grids::StepGrid;
use crate::models::{score_from_noise, Model};
use crate::noise::{staged_noise_seeds2, staged_noise_seeds3, NoiseSource, CHURN_STAGE};
use crate::phi;
use crate::schedules::{LambdaVariant, Schedule, ScheduleKind};

/// Solver families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Seeds1,
    Seeds2,
    Seeds3,
    Dpm1,
    Dpm2,
    Dpm3,
    Dpm4,
    EulerMaruyama,
    ExpEulerEtd,
    ExpEulerLawson,
    Gddim,
    Ve2StageOdeA,
    Ve2StageOdeB,
    Ve2StageSde,
}

impl Family {
    pub const ALL: [Family; 14] = [
        Family::Seeds1,
        Family::Seeds2,
        Family::Seeds3,
        Family::Dpm1,
        Family::Dpm2,
        Family::Dpm3,
        Family::Dpm4,
        Family::EulerMaruyama,
        Family::ExpEulerEtd,
        Family::ExpEulerLawson,
        Family::Gddim,
        Family::Ve2StageOdeA,
        Family::Ve2StageOdeB,
        Family::Ve2StageSde,
    ];

    /// Model evaluations per step.
    pub fn evals_per_step(self) -> u64 {
        match self {
            Family::Seeds1 | Family::Dpm1 | Family::EulerMaruyama => 1,
            Family::ExpEulerEtd | Family::ExpEulerLawson | Family::Gddim => 1,
            Family::Seeds2 | Family::Dpm2 => 2,
            Family::Ve2StageOdeA | Family::Ve2StageOdeB | Family::Ve2StageSde => 2,
            Family::Seeds3 | Family::Dpm3 => 3,
            Family::Dpm4 => 5,
        }
    }

    /// Whether the step injects noise.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Family::Seeds1
                | Family::Seeds2
                | Family::Seeds3
                | Family::EulerMaruyama
                | Family::Gddim
                | Family::Ve2StageSde
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Seeds1 => "seeds1",
            Family::Seeds2 => "seeds2",
            Family::Seeds3 => "seeds3",
            Family::Dpm1 => "dpm1",
            Family::Dpm2 => "dpm2",
            Family::Dpm3 => "dpm3",
            Family::Dpm4 => "dpm4",
            Family::EulerMaruyama => "em",
            Family::ExpEulerEtd => "etd",
            Family::ExpEulerLawson => "lawson",
            Family::Gddim => "gddim",
            Family::Ve2StageOdeA => "ve2-ode-a",
            Family::Ve2StageOdeB => "ve2-ode-b",
            Family::Ve2StageSde => "ve2-sde",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Which network parameterization a step consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    NoisePred,
    DataPred,
}

/// Extra noise injected before a step, raising the level by `1 + γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnParams {
    pub s_churn: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    pub s_noise: f64,
}

impl ChurnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_churn >= 0.0) {
            return config(format!("S_churn must be non-negative, got {}", self.s_churn));
        }
        if !(self.s_tmin <= self.s_tmax) {
            return config(format!("S_tmin {} exceeds S_tmax {}", self.s_tmin, self.s_tmax));
        }
        if !(self.s_noise > 0.0) {
            return config(format!("S_noise must be positive, got {}", self.s_noise));
        }
        Ok(())
    }
}

/// Family plus parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSpec {
    pub family: Family,
    pub mode: Mode,
    pub r1: f64,
    pub r2: f64,
    pub c2: f64,
    /// Stage fraction of the two-stage VE schemes and of DPM-Solver-4.
    pub r: f64,
    pub churn: Option<ChurnParams>,
}

impl SolverSpec {
    pub fn new(family: Family) -> Self {
        Self { family, mode: Mode::NoisePred, r1: 1.0 / 3.0, r2: 2.0 / 3.0, c2: 0.5, r: 0.5, churn: None }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn evals_per_step(&self) -> u64 {
        self.family.evals_per_step()
    }

    /// Cross-field checks against a schedule.
    pub fn validate(&self, sched: &Schedule) -> Result<()> {
        use Family::*;
        match self.family {
            Seeds3 | Dpm3 if !(0.0 < self.r1 && self.r1 < self.r2 && self.r2 < 1.0) => {
                return config(format!(
                    "{} needs 0 < r1 < r2 < 1, got r1 = {}, r2 = {}",
                    self.family.name(),
                    self.r1,
                    self.r2
                ))
            }
            Seeds2 | Dpm2 if !(self.c2 > 0.0 && self.c2 <= 1.0) => {
                return config(format!("{} needs 0 < c2 <= 1, got {}", self.family.name(), self.c2))
            }
            Ve2StageOdeA | Ve2StageOdeB | Ve2StageSde | Dpm4 if !(self.r > 0.0 && self.r <= 1.0) => {
                return config(format!("{} needs 0 < r <= 1, got {}", self.family.name(), self.r))
            }
            Gddim if !sched.is_vp() => return config("gddim requires a variance-preserving schedule"),
            Ve2StageOdeA | Ve2StageOdeB | Ve2StageSde if !sched.unit_scale() => {
                return config(format!("{} requires a VE or EDM schedule (alpha = 1)", self.family.name()))
            }
            _ => {}
        }
        if self.mode == Mode::DataPred && matches!(self.family, Seeds2 | Seeds3 | Dpm2 | Dpm3 | Dpm4 | EulerMaruyama) {
            return config(format!("{} has no data-prediction form", self.family.name()));
        }
        if let Some(c) = self.churn {
            c.validate()?;
        }
        Ok(())
    }

    /// The `λ` variant this solver steps in.
    pub fn lambda_variant(&self, sched: &Schedule) -> LambdaVariant {
        if !matches!(sched.kind, ScheduleKind::Edm { .. }) {
            return LambdaVariant::LogSigma;
        }
        use Family::*;
        match (self.family, self.mode) {
            (Ve2StageOdeA | Ve2StageOdeB | Ve2StageSde | EulerMaruyama, _) => LambdaVariant::LogSigma,
            (_, Mode::DataPred) => LambdaVariant::LogSigma,
            (Seeds1 | Seeds2 | Seeds3 | Gddim, Mode::NoisePred) => LambdaVariant::Sde,
            (_, Mode::NoisePred) => LambdaVariant::Ode,
        }
    }
}

/// Noise-prediction frame: `x_t = Φ(t, s) x_s + sign·κ_t·(...)`.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    sched: &'a Schedule,
    variant: LambdaVariant,
}

impl<'a> Frame<'a> {
    pub fn new(sched: &'a Schedule, variant: LambdaVariant) -> Self {
        Self { sched, variant }
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        self.sched.lambda(t, self.variant)
    }

    pub fn time(&self, lambda: f64) -> Result<f64> {
        self.sched.t_of_lambda(lambda, self.variant)
    }

    /// `Φ(t, s)`.
    pub fn transition(&self, t: f64, s: f64) -> f64 {
        match (self.sched.kind, self.variant) {
            (ScheduleKind::Edm { sigma_d }, LambdaVariant::Sde) => {
                (t * t + sigma_d * sigma_d) / (s * s + sigma_d * sigma_d)
            }
            (ScheduleKind::Edm { sigma_d }, LambdaVariant::Ode) => {
                ((t * t + sigma_d * sigma_d) / (s * s + sigma_d * sigma_d)).sqrt()
            }
            _ => self.sched.alpha(t) / self.sched.alpha(s),
        }
    }

    /// `κ_t`.
    pub fn kappa(&self, t: f64) -> f64 {
        match (self.sched.kind, self.variant) {
            (ScheduleKind::Edm { sigma_d }, LambdaVariant::Sde) => t * (t * t + sigma_d * sigma_d).sqrt() / sigma_d,
            (ScheduleKind::Edm { sigma_d }, LambdaVariant::Ode) => {
                (t * t + sigma_d * sigma_d).sqrt() * (t / sigma_d).atan()
            }
            _ => self.sched.sigma_bar(t),
        }
    }

    pub fn sign(&self) -> f64 {
        match (self.sched.kind, self.variant) {
            (ScheduleKind::Edm { .. }, LambdaVariant::Sde | LambdaVariant::Ode) => 1.0,
            _ => -1.0,
        }
    }

    /// `(λ_s, λ_t, h)` with `h > 0` enforced.
    pub fn step_width(&self, s: f64, t: f64) -> Result<(f64, f64, f64)> {
        let ls = self.lambda(s)?;
        let lt = self.lambda(t)?;
        let h = lt - ls;
        if !(h > 0.0) {
            return Err(Error::Step { s, t, h });
        }
        Ok((ls, lt, h))
    }
}

/// `Σ c_i v_i`.
fn combine(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let d = terms[0].1.len();
    let mut out = vec![0.0; d];
    for (c, v) in terms {
        if *c != 0.0 {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn draw(noise: &mut dyn NoiseSource, stage: u32, d: usize) -> Vec<f64> {
    let mut z = vec![0.0; d];
    noise.normal(stage, &mut z);
    z
}

fn log_sigma_frame(sched: &Schedule) -> Frame<'_> {
    Frame::new(sched, LambdaVariant::LogSigma)
}

/// SEEDS-1 in either mode.
pub fn seeds1_step(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    mode: Mode,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    let sched = model.schedule();
    match mode {
        Mode::NoisePred => {
            let fr = Frame::new(sched, SolverSpec::new(Family::Seeds1).lambda_variant(sched));
            let (_, _, h) = fr.step_width(s, t)?;
            let f = model.noise_pred(x, s);
            let z = draw(noise, 0, x.len());
            let (k, sg) = (fr.kappa(t), fr.sign());
            Ok(combine(&[
                (fr.transition(t, s), x),
                (sg * 2.0 * k * h.exp_m1(), &f),
                (sg * k * (2.0 * h).exp_m1().sqrt(), &z),
            ]))
        }
        Mode::DataPred => {
            let fr = log_sigma_frame(sched);
            let (_, _, h) = fr.step_width(s, t)?;
            let d = model.data_pred(x, s);
            let z = draw(noise, 0, x.len());
            let (at, st, sbt) = sched.alpha_sigma(t)?;
            let (as_, ss, _) = sched.alpha_sigma(s)?;
            let ratio = st / ss;
            Ok(combine(&[
                (ratio * ratio * at / as_, x),
                (-at * (-2.0 * h).exp_m1(), &d),
                (sbt * (-(-2.0 * h).exp_m1()).sqrt(), &z),
            ]))
        }
    }
}

/// SEEDS-2 with stage fraction `c2` (`c2 = 1/2` is the two-stage scheme
/// with midpoint evaluation and `expm1`-factored noise).
pub fn seeds2_step(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    c2: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    let sched = model.schedule();
    let fr = Frame::new(sched, SolverSpec::new(Family::Seeds2).lambda_variant(sched));
    let (ls, _, h) = fr.step_width(s, t)?;
    let s1 = fr.time(ls + c2 * h)?;
    let (k1, kt, sg) = (fr.kappa(s1), fr.kappa(t), fr.sign());
    let d = x.len();
    let (n_mid, n_full) = if c2 == 0.5 {
        staged_noise_seeds2(noise, k1, kt, h, d)
    } else {
        let z1 = draw(noise, 0, d);
        let z2 = draw(noise, 1, d);
        let a = phi::sqrt_exp_diff(2.0 * h, 2.0 * c2 * h);
        let b = (2.0 * c2 * h).exp_m1().sqrt();
        (combine(&[(k1 * b, &z1)]), combine(&[(kt * a, &z1), (kt * b, &z2)]))
    };
    let fs = model.noise_pred(x, s);
    let u = combine(&[(fr.transition(s1, s), x), (sg * 2.0 * k1 * (c2 * h).exp_m1(), &fs), (sg, &n_mid)]);
    let fu = model.noise_pred(&u, s1);
    let w = 1.0 / (2.0 * c2);
    let e = sg * 2.0 * kt * h.exp_m1();
    Ok(combine(&[(fr.transition(t, s), x), (e * (1.0 - w), &fs), (e * w, &fu), (sg, &n_full)]))
}

/// SEEDS-3 with stage fractions `0 < r1 < r2 < 1`.
pub fn seeds3_step(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    r1: f64,
    r2: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    let sched = model.schedule();
    let fr = Frame::new(sched, SolverSpec::new(Family::Seeds3).lambda_variant(sched));
    let (ls, _, h) = fr.step_width(s, t)?;
    let s1 = fr.time(ls + r1 * h)?;
    let s2 = fr.time(ls + r2 * h)?;
    let (k1, k2, kt, sg) = (fr.kappa(s1), fr.kappa(s2), fr.kappa(t), fr.sign());
    let (n1, a, b) = staged_noise_seeds3(noise, [k1, k2, kt], h, r1, r2, x.len())?;
    let fs = model.noise_pred(x, s);
    let u1 = combine(&[(fr.transition(s1, s), x), (sg * 2.0 * k1 * (r1 * h).exp_m1(), &fs), (sg, &n1)]);
    let d1 = sub(&model.noise_pred(&u1, s1), &fs);
    let u2 = combine(&[
        (fr.transition(s2, s), x),
        (sg * 2.0 * k2 * (r2 * h).exp_m1(), &fs),
        (sg * 2.0 * k2 * (r2 / r1) * r2 * h * phi::phi(2, r2 * h)?, &d1),
        (sg, &a),
    ]);
    let d2 = sub(&model.noise_pred(&u2, s2), &fs);
    Ok(combine(&[
        (fr.transition(t, s), x),
        (sg * 2.0 * kt * h.exp_m1(), &fs),
        (sg * 2.0 * kt / r2 * h * phi::phi(2, h)?, &d2),
        (sg, &b),
    ]))
}

/// Deterministic exponential integrators of order 1 to 4.
pub fn dpm_step(model: &dyn Model, x: &[f64], s: f64, t: f64, order: u32, spec: &SolverSpec) -> Result<Vec<f64>> {
    let sched = model.schedule();
    if spec.mode == Mode::DataPred {
        if order != 1 {
            return config(format!("dpm{order} has no data-prediction form"));
        }
        return exp_euler_dp(model, x, s, t, false);
    }
    let family = match order {
        1 => Family::Dpm1,
        2 => Family::Dpm2,
        3 => Family::Dpm3,
        4 => Family::Dpm4,
        _ => return config(format!("dpm order must be 1..=4, got {order}")),
    };
    let fr = Frame::new(sched, SolverSpec::new(family).lambda_variant(sched));
    let (ls, _, h) = fr.step_width(s, t)?;
    let sg = fr.sign();
    let kt = fr.kappa(t);
    let phi_t = fr.transition(t, s);
    let fs = model.noise_pred(x, s);
    match order {
        1 => Ok(combine(&[(phi_t, x), (sg * kt * h.exp_m1(), &fs)])),
        2 => {
            let c2 = spec.c2;
            let s1 = fr.time(ls + c2 * h)?;
            let u = combine(&[(fr.transition(s1, s), x), (sg * fr.kappa(s1) * (c2 * h).exp_m1(), &fs)]);
            let fu = model.noise_pred(&u, s1);
            let w = 1.0 / (2.0 * c2);
            let e = sg * kt * h.exp_m1();
            Ok(combine(&[(phi_t, x), (e * (1.0 - w), &fs), (e * w, &fu)]))
        }
        3 => {
            let (r1, r2) = (spec.r1, spec.r2);
            let s1 = fr.time(ls + r1 * h)?;
            let s2 = fr.time(ls + r2 * h)?;
            let (k1, k2) = (fr.kappa(s1), fr.kappa(s2));
            let u1 = combine(&[(fr.transition(s1, s), x), (sg * k1 * (r1 * h).exp_m1(), &fs)]);
            let d1 = sub(&model.noise_pred(&u1, s1), &fs);
            let u2 = combine(&[
                (fr.transition(s2, s), x),
                (sg * k2 * (r2 * h).exp_m1(), &fs),
                (sg * k2 * (r2 / r1) * r2 * h * phi::phi(2, r2 * h)?, &d1),
            ]);
            let d2 = sub(&model.noise_pred(&u2, s2), &fs);
            Ok(combine(&[(phi_t, x), (sg * kt * h.exp_m1(), &fs), (sg * kt / r2 * h * phi::phi(2, h)?, &d2)]))
        }
        _ => dpm4(model, &fr, x, s, t, ls, h, spec.r, &fs),
    }
}

#[allow(clippy::too_many_arguments)]
fn dpm4(
    model: &dyn Model,
    fr: &Frame,
    x: &[f64],
    s: f64,
    t: f64,
    ls: f64,
    h: f64,
    r: f64,
    k1: &[f64],
) -> Result<Vec<f64>> {
    let sg = fr.sign();
    let sm = fr.time(ls + r * h)?;
    let (s2, s3, s4, s5) = (sm, sm, t, sm);
    let em = (r * h).exp_m1();
    let e1 = h.exp_m1();
    let h_phi2 = h * phi::phi(2, h)?;

    let k2 = combine(&[(fr.transition(s2, s), x), (sg * fr.kappa(s2) * em, k1)]);
    let e2 = model.noise_pred(&k2, s2);
    let k3 = combine(&[
        (fr.transition(s3, s), x),
        (sg * fr.kappa(s3) * em, k1),
        (sg * fr.kappa(s3) * (4.0 * em / h - 2.0), &sub(&e2, k1)),
    ]);
    let e3 = model.noise_pred(&k3, s3);
    let k4 = combine(&[
        (fr.transition(s4, s), x),
        (sg * fr.kappa(s4) * e1, k1),
        (sg * fr.kappa(s4) * h_phi2, &combine(&[(1.0, &e3), (1.0, &e2), (-2.0, k1)])),
    ]);
    let e4 = model.noise_pred(&k4, s4);
    let k5s = fr.kappa(s5);
    let a = combine(&[(k5s * em, k1), (-0.25 * k5s * h_phi2, &combine(&[(1.0, k1), (1.0, &e2), (1.0, &e3)]))]);
    let b = combine(&[(k5s * (em / h - 0.5), &combine(&[(1.0, k1), (4.0, &e2), (4.0, &e3), (-1.0, &e4)]))]);
    let c = combine(&[(
        k5s * ((e1 + 4.0 * em - 3.0 * h) / (h * h) - 1.0),
        &combine(&[(-1.0, k1), (-1.0, &e2), (-1.0, &e3), (1.0, &e4)]),
    )]);
    let k5 = combine(&[(fr.transition(s5, s), x), (sg, &a), (sg, &b), (sg, &c)]);
    let e5 = model.noise_pred(&k5, s5);
    let kt = fr.kappa(t);
    let dd = combine(&[(kt * e1, k1), (-kt * h_phi2, &combine(&[(4.0, &e5), (-1.0, &e4), (-3.0, k1)]))]);
    let ee = combine(&[(kt * (4.0 * phi::phi(2, h)? - 2.0), &combine(&[(1.0, k1), (1.0, &e4), (-2.0, &e5)]))]);
    Ok(combine(&[(fr.transition(t, s), x), (sg, &dd), (sg, &ee)]))
}

/// Euler–Maruyama on the reverse SDE, with the score rebuilt from `F`.
pub fn euler_maruyama_step(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    reverse_euler(model, x, s, t, 1.0, noise)
}

/// Explicit Euler on the probability-flow ODE.
pub fn probability_flow_euler_step(model: &dyn Model, x: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    reverse_euler(model, x, s, t, 0.0, &mut crate::noise::ZeroNoise)
}

/// `x + [f x - ((1 + ℓ²)/2) g² ∇log p] Δt + ℓ g √|Δt| ε`, `Δt = t - s < 0`.
fn reverse_euler(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    ell: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    let sched = model.schedule();
    sched.check_time(s)?;
    sched.check_time(t)?;
    if !(t < s) {
        return Err(Error::Step { s, t, h: s - t });
    }
    let f = model.noise_pred(x, s);
    let score = score_from_noise(sched, x, s, &f);
    let (drift, g2) = sched.drift_diffusion(s);
    let dt = t - s;
    let z = draw(noise, 0, x.len());
    let c = 0.5 * (1.0 + ell * ell) * g2;
    Ok((0..x.len()).map(|i| x[i] + (drift * x[i] - c * score[i]) * dt + ell * (g2 * dt.abs()).sqrt() * z[i]).collect())
}

/// Exponential Euler variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpEuler {
    /// Exponential time differencing: the nonlinear term is frozen.
    Etd,
    /// Integrating factor: the whole integrand is frozen at the left end.
    Lawson,
}

/// Exponential Euler on the probability-flow ODE in either mode.
pub fn exp_euler_step(model: &dyn Model, x: &[f64], s: f64, t: f64, variant: ExpEuler, mode: Mode) -> Result<Vec<f64>> {
    let lawson = variant == ExpEuler::Lawson;
    if mode == Mode::DataPred {
        return exp_euler_dp(model, x, s, t, lawson);
    }
    let sched = model.schedule();
    let fr = Frame::new(sched, SolverSpec::new(Family::Dpm1).lambda_variant(sched));
    let (_, _, h) = fr.step_width(s, t)?;
    let f = model.noise_pred(x, s);
    let kt = fr.kappa(t);
    let w = if lawson { kt * h * h.exp() } else { kt * h.exp_m1() };
    Ok(combine(&[(fr.transition(t, s), x), (fr.sign() * w, &f)]))
}

fn exp_euler_dp(model: &dyn Model, x: &[f64], s: f64, t: f64, lawson: bool) -> Result<Vec<f64>> {
    let sched = model.schedule();
    let fr = log_sigma_frame(sched);
    let (_, _, h) = fr.step_width(s, t)?;
    let d = model.data_pred(x, s);
    let (at, _, sbt) = sched.alpha_sigma(t)?;
    let sbs = sched.sigma_bar(s);
    let w = if lawson { at * h * (-h).exp() } else { -at * (-h).exp_m1() };
    Ok(combine(&[(sbt / sbs, x), (w, &d)]))
}

/// gDDIM: `(α_t/α_s) x + σ̄_t (σ_t/σ_s - σ_s/σ_t) ε + σ̄_t √(1 - e^{-2h}) z`.
pub fn gddim_step(model: &dyn Model, x: &[f64], s: f64, t: f64, noise: &mut dyn NoiseSource) -> Result<Vec<f64>> {
    let sched = model.schedule();
    if !sched.is_vp() {
        return config("gddim requires a variance-preserving schedule");
    }
    let fr = log_sigma_frame(sched);
    let (_, _, h) = fr.step_width(s, t)?;
    let eps = model.noise_pred(x, s);
    let z = draw(noise, 0, x.len());
    let (at, st, sbt) = sched.alpha_sigma(t)?;
    let (as_, ss, _) = sched.alpha_sigma(s)?;
    Ok(combine(&[(at / as_, x), (sbt * (st / ss - ss / st), &eps), (sbt * (-(-2.0 * h).exp_m1()).sqrt(), &z)]))
}

/// Two-stage data-prediction schemes for `α ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoStage {
    OdeA,
    OdeB,
    Sde,
}

pub fn ve_2stage_step(
    model: &dyn Model,
    x: &[f64],
    s: f64,
    t: f64,
    r: f64,
    kind: TwoStage,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    let sched = model.schedule();
    if !sched.unit_scale() {
        return config("two-stage schemes require a VE or EDM schedule (alpha = 1)");
    }
    let fr = log_sigma_frame(sched);
    let (ls, _, h) = fr.step_width(s, t)?;
    let s1 = fr.time(ls + r * h)?;
    let (ss, s1s, st) = (sched.sigma(s), sched.sigma(s1), sched.sigma(t));
    let ds = model.data_pred(x, s);
    match kind {
        TwoStage::OdeA | TwoStage::OdeB => {
            let x1 = combine(&[(s1s / ss, x), (-(-r * h).exp_m1(), &ds)]);
            let d1 = model.data_pred(&x1, s1);
            let em = (-h).exp_m1();
            Ok(if kind == TwoStage::OdeA {
                let w = 1.0 / (2.0 * r);
                combine(&[(st / ss, x), (-em * (1.0 - w), &ds), (-em * w, &d1)])
            } else {
                let corr = h * phi::phi(2, -h)? / r;
                combine(&[(st / ss, x), (-em, &ds), (corr, &sub(&d1, &ds))])
            })
        }
        TwoStage::Sde => {
            let e1 = draw(noise, 0, x.len());
            let e2 = draw(noise, 1, x.len());
            let q = (s1s / ss) * (s1s / ss);
            let b1 = (-(-2.0 * r * h).exp_m1()).sqrt();
            let x1 = combine(&[(q, x), (-(-2.0 * r * h).exp_m1(), &ds), (s1s * b1, &e1)]);
            let d1 = model.data_pred(&x1, s1);
            let w = 1.0 / (2.0 * r);
            let em = (-2.0 * h).exp_m1();
            let a1 = phi::sqrt_exp_diff(-2.0 * r * h, -2.0 * h);
            Ok(combine(&[
                ((st / ss) * (st / ss), x),
                (-em * (1.0 - w), &ds),
                (-em * w, &d1),
                (st * a1, &e1),
                (st * b1, &e2),
            ]))
        }
    }
}

/// Raise the noise level of `x` at time `s` by `1 + γ` when `σ_s` lies in
/// `[S_tmin, S_tmax]`. Returns the lifted state and its time.
pub fn churn_inject(
    x: &[f64],
    s: f64,
    params: &ChurnParams,
    n_steps: usize,
    sched: &Schedule,
    noise: &mut dyn NoiseSource,
) -> Result<(Vec<f64>, f64)> {
    let (alpha, sigma, _) = sched.alpha_sigma(s)?;
    if params.s_churn == 0.0 || sigma < params.s_tmin || sigma > params.s_tmax {
        return Ok((x.to_vec(), s));
    }
    let gamma = (params.s_churn / n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0);
    let sigma_max = sched.sigma(sched.t_max);
    let sigma_hat = ((1.0 + gamma) * sigma).min(sigma_max);
    if sigma_hat <= sigma {
        return Ok((x.to_vec(), s));
    }
    let s_hat = sched.t_of_sigma(sigma_hat)?.min(sched.t_max);
    let alpha_hat = sched.alpha(s_hat);
    let z = draw(noise, CHURN_STAGE, x.len());
    let scale = alpha_hat * params.s_noise * (sigma_hat * sigma_hat - sigma * sigma).sqrt();
    Ok((combine(&[(alpha_hat / alpha, x), (scale, &z)]), s_hat))
}

/// One step of any family from `s` to `t`.
pub fn step(
    model: &dyn Model,
    spec: &SolverSpec,
    x: &[f64],
    s: f64,
    t: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    use Family::*;
    match spec.family {
        Seeds1 => seeds1_step(model, x, s, t, spec.mode, noise),
        Seeds2 => seeds2_step(model, x, s, t, spec.c2, noise),
        Seeds3 => seeds3_step(model, x, s, t, spec.r1, spec.r2, noise),
        Dpm1 => dpm_step(model, x, s, t, 1, spec),
        Dpm2 => dpm_step(model, x, s, t, 2, spec),
        Dpm3 => dpm_step(model, x, s, t, 3, spec),
        Dpm4 => dpm_step(model, x, s, t, 4, spec),
        EulerMaruyama => euler_maruyama_step(model, x, s, t, noise),
        ExpEulerEtd => exp_euler_step(model, x, s, t, ExpEuler::Etd, spec.mode),
        ExpEulerLawson => exp_euler_step(model, x, s, t, ExpEuler::Lawson, spec.mode),
        Gddim => gddim_step(model, x, s, t, noise),
        Ve2StageOdeA => ve_2stage_step(model, x, s, t, spec.r, TwoStage::OdeA, noise),
        Ve2StageOdeB => ve_2stage_step(model, x, s, t, spec.r, TwoStage::OdeB, noise),
        Ve2StageSde => ve_2stage_step(model, x, s, t, spec.r, TwoStage::Sde, noise),
    }
}

/// States at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Step through `times[0] > times[1] > ...`, drawing step `i`'s noise from
/// `noise_at(i)`. When `trivial_last` is set the final interval is copied
/// without a model call.
pub fn run<N: NoiseSource>(
    model: &dyn Model,
    spec: &SolverSpec,
    times: &[f64],
    x0: Vec<f64>,
    trivial_last: bool,
    mut noise_at: impl FnMut(usize) -> N,
) -> Result<Trajectory> {
    spec.validate(model.schedule())?;
    if times.len() < 2 {
        return config("a grid needs at least two nodes");
    }
    if x0.len() != model.dim() {
        return config(format!("initial state has length {}, model dimension is {}", x0.len(), model.dim()));
    }
    let m = times.len() - 1;
    let last = if trivial_last { m - 1 } else { m };
    let mut states = Vec::with_capacity(times.len());
    states.push(x0);
    for i in 1..=last {
        let mut noise = noise_at(i);
        let prev = states.last().expect("non-empty");
        let (x, s) = match &spec.churn {
            Some(c) => churn_inject(prev, times[i - 1], c, m, model.schedule(), &mut noise)?,
            None => (prev.clone(), times[i - 1]),
        };
        let next = step(model, spec, &x, s, times[i], &mut noise)?;
        states.push(next);
    }
    if trivial_last {
        let x = states.last().expect("non-empty").clone();
        states.push(x);
    }
    Ok(Trajectory { times: times.to_vec(), states })
}

/// Draw of the prior `N(0, σ̄(t)² I)` for one path, keyed apart from the
/// step noise.
pub fn prior_state(sched: &Schedule, t: f64, dim: usize, seed: u64, path: u64) -> Vec<f64> {
    let sd = sched.sigma_bar(t);
    let mut rng = crate::noise::RngStream::new(crate::noise::StreamKey::new(seed, path, crate::noise::INIT_STEP, 0));
    rng.gauss(dim).into_iter().map(|z| sd * z).collect()
}

/// The iterative sampling procedure: steps `1..M-1` of the grid, then the
/// trivial last step. Consumes `k(M - 1)` model evaluations.
pub fn sample(
    model: &dyn Model,
    grid: &StepGrid,
    spec: &SolverSpec,
    x_init: Vec<f64>,
    seed: u64,
    path: u64,
) -> Result<Trajectory> {
    run(model, spec, grid.times(), x_init, true, |i| crate::noise::KeyedNoise { seed, path, step: i as u64 })
}

/// Every interval of the grid, including the last one.
pub fn integrate(
    model: &dyn Model,
    grid: &StepGrid,
    spec: &SolverSpec,
    x_init: Vec<f64>,
    seed: u64,
    path: u64,
) -> Result<Trajectory> {
    run(model, spec, grid.times(), x_init, false, |i| crate::noise::KeyedNoise { seed, path, step: i as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{linear_lambda_grid, uniform_time_grid};
    use crate::models::{data_from_noise, DataDistribution, ScoreModel};
    use crate::noise::{FixedNoise, KeyedNoise, ZeroNoise};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// `F ≡ c` everywhere.
    struct ConstF {
        sched: Schedule,
        c: f64,
        d: usize,
        calls: AtomicU64,
    }

    impl ConstF {
        fn new(sched: Schedule, c: f64, d: usize) -> Self {
            Self { sched, c, d, calls: AtomicU64::new(0) }
        }
    }

    impl Model for ConstF {
        fn schedule(&self) -> &Schedule {
            &self.sched
        }
        fn dim(&self) -> usize {
            self.d
        }
        fn noise_pred(&self, x: &[f64], _t: f64) -> Vec<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            vec![self.c; x.len()]
        }
        fn data_pred(&self, x: &[f64], t: f64) -> Vec<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            data_from_noise(&self.sched, x, t, &vec![self.c; x.len()])
        }
        fn nfe(&self) -> u64 {
            self.calls.load(Ordering::Relaxed)
        }
    }

    /// `D ≡ c` everywhere.
    struct ConstD {
        sched: Schedule,
        c: f64,
    }

    impl Model for ConstD {
        fn schedule(&self) -> &Schedule {
            &self.sched
        }
        fn dim(&self) -> usize {
            1
        }
        fn noise_pred(&self, _x: &[f64], _t: f64) -> Vec<f64> {
            unreachable!()
        }
        fn data_pred(&self, x: &[f64], _t: f64) -> Vec<f64> {
            vec![self.c; x.len()]
        }
        fn nfe(&self) -> u64 {
            0
        }
    }

    fn vp() -> Schedule {
        Schedule::vp_linear(19.9, 0.1)
    }

    fn mixture(sched: Schedule) -> ScoreModel {
        let data = DataDistribution::symmetric_pair(vec![1.0, -0.5], vec![0.1, 0.3]).unwrap();
        ScoreModel::new(data, sched)
    }

    fn lam(s: &Schedule, t: f64) -> f64 {
        s.lambda(t, LambdaVariant::LogSigma).unwrap()
    }

    /// `t` with `λ_t = λ_s + h` on the VP schedule.
    fn after(s: &Schedule, t0: f64, h: f64) -> f64 {
        s.t_of_lambda(lam(s, t0) + h, LambdaVariant::LogSigma).unwrap()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
    }

    #[test]
    fn zero_model_gives_linear_transition() {
        let x = [0.7, -1.2];
        for sched in [vp(), Schedule::vp_cosine(0.008), Schedule::ve(), Schedule::edm(0.5)] {
            let (s, t) = if sched.unit_scale() { (5.0, 2.0) } else { (0.6, 0.3) };
            for family in Family::ALL {
                let spec = SolverSpec::new(family);
                if spec.validate(&sched).is_err() || family == Family::EulerMaruyama {
                    continue;
                }
                let model = ScoreModel::zero_model(sched, 2);
                let out = step(&model, &spec, &x, s, t, &mut ZeroNoise).unwrap();
                let expected: Vec<f64> =
                    if matches!(family, Family::Ve2StageOdeA | Family::Ve2StageOdeB | Family::Ve2StageSde) {
                        // D = x, so the step is exact for the identity flow.
                        x.to_vec()
                    } else {
                        let fr = Frame::new(&sched, spec.lambda_variant(&sched));
                        x.iter().map(|v| fr.transition(t, s) * v).collect()
                    };
                assert!(max_rel(&out, &expected) < 1e-12, "{family:?} on {:?}: {out:?} vs {expected:?}", sched.kind);
            }
        }
    }

    #[test]
    fn seeds1_constant_noise_example() {
        let sched = vp();
        let s = 0.5;
        let t = after(&sched, s, 2f64.sqrt().ln());
        let model = ConstF::new(sched, 1.0, 1);
        let out = seeds1_step(&model, &[1.0], s, t, Mode::NoisePred, &mut ZeroNoise).unwrap();
        let expected = sched.alpha(t) / sched.alpha(s) - 2.0 * sched.sigma_bar(t) * (2f64.sqrt() - 1.0);
        assert!((out[0] - expected).abs() < 1e-14);
        assert_eq!(model.nfe(), 1);
    }

    #[test]
    fn data_and_noise_modes_differ() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let (s, t) = (0.5, 0.35);
        let mut a = KeyedNoise { seed: 3, path: 0, step: 1 };
        let mut b = a;
        let np = seeds1_step(&model, &x, s, t, Mode::NoisePred, &mut a).unwrap();
        let dp = seeds1_step(&model, &x, s, t, Mode::DataPred, &mut b).unwrap();
        let gap = np.iter().zip(&dp).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-6, "gap {gap}");
    }

    #[test]
    fn constant_noise_collapses_multistage_schemes() {
        let sched = vp();
        let model = ConstF::new(sched, -0.8, 2);
        let x = [0.3, 1.1];
        let (s, t) = (0.7, 0.4);
        let one = seeds1_step(&model, &x, s, t, Mode::NoisePred, &mut ZeroNoise).unwrap();
        let two = seeds2_step(&model, &x, s, t, 0.5, &mut ZeroNoise).unwrap();
        let three = seeds3_step(&model, &x, s, t, 1.0 / 3.0, 2.0 / 3.0, &mut ZeroNoise).unwrap();
        assert!(max_rel(&one, &two) < 1e-13);
        assert!(max_rel(&one, &three) < 1e-13);

        let d1 = dpm_step(&model, &x, s, t, 1, &SolverSpec::new(Family::Dpm1)).unwrap();
        for order in 2..=4 {
            let spec = SolverSpec::new(Family::Dpm1);
            let dk = dpm_step(&model, &x, s, t, order, &spec).unwrap();
            assert!(max_rel(&d1, &dk) < 1e-12, "order {order}");
        }
    }

    #[test]
    fn seeds1_is_not_dpm1() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let (s, t) = (0.5, 0.35);
        let h = lam(&sched, t) - lam(&sched, s);
        let f = model.noise_pred(&x, s);
        let seeds = seeds1_step(&model, &x, s, t, Mode::NoisePred, &mut ZeroNoise).unwrap();
        let dpm = dpm_step(&model, &x, s, t, 1, &SolverSpec::new(Family::Dpm1)).unwrap();
        for i in 0..2 {
            let gap = (seeds[i] - dpm[i]).abs();
            let expected = sched.sigma_bar(t) * h.exp_m1() * f[i].abs();
            assert!(gap > 0.0);
            assert!((gap - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn gddim_matches_data_prediction_seeds1() {
        for sched in [vp(), Schedule::vp_cosine(0.008)] {
            let model = mixture(sched);
            let x = [0.4, -0.9];
            for (s, t) in [(0.9, 0.6), (0.5, 0.35), (0.1, 0.02)] {
                let mut a = KeyedNoise { seed: 11, path: 4, step: 2 };
                let mut b = a;
                let g = gddim_step(&model, &x, s, t, &mut a).unwrap();
                let d = seeds1_step(&model, &x, s, t, Mode::DataPred, &mut b).unwrap();
                assert!(max_rel(&g, &d) < 1e-10, "{g:?} vs {d:?}");
            }
        }
        assert!(gddim_step(&ScoreModel::zero_model(Schedule::ve(), 1), &[1.0], 2.0, 1.0, &mut ZeroNoise).is_err());
    }

    #[test]
    fn euler_maruyama_matches_direct_formula() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let (s, t) = (0.5, 0.48);
        let mut noise = KeyedNoise { seed: 5, path: 1, step: 7 };
        let out = euler_maruyama_step(&model, &x, s, t, &mut noise).unwrap();

        let mut z = [0.0; 2];
        KeyedNoise { seed: 5, path: 1, step: 7 }.normal(0, &mut z);
        let beta = 19.9 * s + 0.1;
        let score = model.score(&x, s);
        let dt = t - s;
        for i in 0..2 {
            let want = x[i] + (-0.5 * beta * x[i] - beta * score[i]) * dt + (beta * dt.abs()).sqrt() * z[i];
            assert!((out[i] - want).abs() < 1e-14, "{} vs {}", out[i], want);
        }
    }

    #[test]
    fn euler_maruyama_tiny_step_and_flow_limit() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let out =
            euler_maruyama_step(&model, &x, 0.5, 0.5 - 1e-12, &mut KeyedNoise { seed: 1, path: 0, step: 0 }).unwrap();
        assert!(max_rel(&out, &x) < 1e-5);
        let flow = probability_flow_euler_step(&model, &x, 0.5, 0.49).unwrap();
        let score = model.score(&x, 0.5);
        let beta = 19.9 * 0.5 + 0.1;
        for i in 0..2 {
            let want = x[i] + (-0.5 * beta * x[i] - 0.5 * beta * score[i]) * -0.01;
            assert!((flow[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn etd_and_lawson_gap_is_second_order() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let s = 0.5;
        let gap = |h: f64| {
            let t = after(&sched, s, h);
            let a = exp_euler_step(&model, &x, s, t, ExpEuler::Etd, Mode::NoisePred).unwrap();
            let b = exp_euler_step(&model, &x, s, t, ExpEuler::Lawson, Mode::NoisePred).unwrap();
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        };
        let (g1, g2) = (gap(0.1), gap(0.05));
        assert!(g1 > 0.0 && g2 > 0.0);
        let ratio = g1 / g2;
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    }

    #[test]
    fn exp_euler_data_mode_is_dpm_solver_pp1() {
        let sched = vp();
        let model = mixture(sched);
        let x = [0.4, -0.9];
        let a = exp_euler_step(&model, &x, 0.5, 0.3, ExpEuler::Etd, Mode::DataPred).unwrap();
        let b = dpm_step(&model, &x, 0.5, 0.3, 1, &SolverSpec::new(Family::Dpm1).with_mode(Mode::DataPred)).unwrap();
        assert_eq!(a, b);
        assert!(dpm_step(&model, &x, 0.5, 0.3, 2, &SolverSpec::new(Family::Dpm2).with_mode(Mode::DataPred)).is_err());
    }

    #[test]
    fn two_stage_ode_forms_agree_for_constant_data() {
        let sched = Schedule::ve();
        let model = ConstD { sched, c: 0.3 };
        for r in [0.25, 0.5, 1.0] {
            let a = ve_2stage_step(&model, &[2.0], 10.0, 4.0, r, TwoStage::OdeA, &mut ZeroNoise).unwrap();
            let b = ve_2stage_step(&model, &[2.0], 10.0, 4.0, r, TwoStage::OdeB, &mut ZeroNoise).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-14);
            // exact flow for constant D: x_t = D + (σ_t/σ_s)(x_s - D)
            assert!((a[0] - (0.3 + 0.4 * 1.7)).abs() < 1e-14);
        }
    }

    #[test]
    fn two_stage_sde_noise_variance_telescopes() {
        let sched = Schedule::ve();
        let model = ConstD { sched, c: 0.3 };
        let (s, t, r) = (10.0, 4.0, 0.4);
        let base = ve_2stage_step(&model, &[2.0], s, t, r, TwoStage::Sde, &mut ZeroNoise).unwrap()[0];
        let c1 = ve_2stage_step(&model, &[2.0], s, t, r, TwoStage::Sde, &mut FixedNoise(vec![vec![1.0], vec![0.0]]))
            .unwrap()[0]
            - base;
        let c2 = ve_2stage_step(&model, &[2.0], s, t, r, TwoStage::Sde, &mut FixedNoise(vec![vec![0.0], vec![1.0]]))
            .unwrap()[0]
            - base;
        let h = (s / t).ln();
        let want = t * t * -(-2.0 * h).exp_m1();
        assert!((c1 * c1 + c2 * c2 - want).abs() < 1e-12 * want);
        assert!(ve_2stage_step(&model, &[2.0], s, t, r, TwoStage::OdeA, &mut ZeroNoise).is_ok());
        let vp_model = ScoreModel::zero_model(vp(), 1);
        assert!(ve_2stage_step(&vp_model, &[2.0], 0.5, 0.3, r, TwoStage::OdeA, &mut ZeroNoise).is_err());
    }

    #[test]
    fn churn_identity_cases() {
        let sched = Schedule::edm(0.5);
        let x = [1.0, 2.0];
        let off = ChurnParams { s_churn: 0.0, s_tmin: 0.05, s_tmax: 15.0, s_noise: 1.003 };
        let mut n = KeyedNoise { seed: 1, path: 0, step: 0 };
        assert_eq!(churn_inject(&x, 3.0, &off, 10, &sched, &mut n).unwrap(), (x.to_vec(), 3.0));
        let on = ChurnParams { s_churn: 11.0, ..off };
        assert!(on.validate().is_ok());
        assert_eq!(churn_inject(&x, 20.0, &on, 10, &sched, &mut n).unwrap(), (x.to_vec(), 20.0));
        assert_eq!(churn_inject(&x, 0.01, &on, 10, &sched, &mut n).unwrap(), (x.to_vec(), 0.01));
        let (y, s_hat) = churn_inject(&x, 3.0, &on, 40, &sched, &mut n).unwrap();
        assert!((s_hat - 3.0 * (1.0 + 11.0 / 40.0)).abs() < 1e-12);
        assert_ne!(y, x.to_vec());
        let (_, capped) = churn_inject(&x, 3.0, &on, 5, &sched, &mut n).unwrap();
        assert!((capped - 3.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(ChurnParams { s_churn: -1.0, ..off }.validate().is_err());
        assert!(ChurnParams { s_tmin: 20.0, ..off }.validate().is_err());
        assert!(ChurnParams { s_noise: 0.0, ..off }.validate().is_err());
    }

    #[test]
    fn churned_vp_state_has_lifted_marginal_scale() {
        let sched = vp();
        let p = ChurnParams { s_churn: 4.0, s_tmin: 0.0, s_tmax: 1e3, s_noise: 1.0 };
        let x = [0.0];
        let s = 0.3;
        let (y, s_hat) = churn_inject(&x, s, &p, 10, &sched, &mut FixedNoise(vec![])).unwrap();
        assert_eq!(y, vec![0.0]);
        assert!((sched.sigma(s_hat) / sched.sigma(s) - 1.4).abs() < 1e-10);
    }

    #[test]
    fn spec_validation() {
        let sched = vp();
        let mut spec = SolverSpec::new(Family::Seeds3);
        spec.r1 = 0.7;
        assert!(spec.validate(&sched).is_err());
        let mut spec = SolverSpec::new(Family::Dpm2);
        spec.c2 = 0.0;
        assert!(spec.validate(&sched).is_err());
        assert!(SolverSpec::new(Family::Seeds2).with_mode(Mode::DataPred).validate(&sched).is_err());
        assert!(SolverSpec::new(Family::Seeds1).with_mode(Mode::DataPred).validate(&sched).is_ok());
        assert!(SolverSpec::new(Family::Gddim).validate(&Schedule::edm(0.5)).is_err());
        for f in Family::ALL {
            assert_eq!(Family::from_name(f.name()), Some(f));
        }
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let model = mixture(vp());
        let err = seeds1_step(&model, &[0.0, 0.0], 0.3, 0.5, Mode::NoisePred, &mut ZeroNoise).unwrap_err();
        assert!(matches!(err, Error::Step { .. }));
    }

    #[test]
    fn nfe_accounting() {
        let sched = vp();
        for family in Family::ALL {
            let spec = SolverSpec::new(family);
            if spec.validate(&sched).is_err() {
                continue;
            }
            for m in [2usize, 5, 9] {
                let model = mixture(sched);
                let grid = linear_lambda_grid(&sched, m, 1.0, 1e-3, LambdaVariant::LogSigma).unwrap();
                let traj = sample(&model, &grid, &spec, vec![0.1, 0.2], 0, 0).unwrap();
                assert_eq!(traj.states.len(), m + 1);
                assert_eq!(model.nfe(), family.evals_per_step() * (m as u64 - 1), "{family:?} M={m}");
                assert_eq!(traj.states[m], traj.states[m - 1]);
            }
        }
    }

    #[test]
    fn zero_model_terminal_mean_telescopes() {
        let sched = vp();
        let model = ScoreModel::zero_model(sched, 1);
        let grid = linear_lambda_grid(&sched, 12, 1.0, 1e-3, LambdaVariant::LogSigma).unwrap();
        let times = grid.times();
        let traj = run(&model, &SolverSpec::new(Family::Seeds1), times, vec![1.5], true, |_| ZeroNoise).unwrap();
        let want = 1.5 * sched.alpha(times[11]) / sched.alpha(times[0]);
        assert!((traj.terminal()[0] - want).abs() < 1e-12 * want);
    }

    #[test]
    fn euler_maruyama_runs_on_uniform_grid() {
        let sched = vp();
        let model = mixture(sched);
        let grid = uniform_time_grid(50, 1.0, 1e-3).unwrap();
        let traj = integrate(&model, &grid, &SolverSpec::new(Family::EulerMaruyama), vec![0.1, 0.2], 2, 0).unwrap();
        assert!(traj.terminal().iter().all(|v| v.is_finite()));
        assert_eq!(model.nfe(), 50);
    }

    /// Noise coefficient of a zero-model SEEDS-1 step.
    fn seeds1_noise_scale(sched: &Schedule, s: f64, t: f64) -> f64 {
        let model = ScoreModel::zero_model(*sched, 1);
        let base = seeds1_step(&model, &[0.0], s, t, Mode::NoisePred, &mut ZeroNoise).unwrap()[0];
        seeds1_step(&model, &[0.0], s, t, Mode::NoisePred, &mut FixedNoise(vec![vec![1.0]])).unwrap()[0] - base
    }

    proptest! {
        #[test]
        fn zero_model_steps_compose(s in 0.2f64..1.0, a in 0.05f64..0.9, b in 0.05f64..0.9) {
            let sched = vp();
            let u = s * (1.0 - a);
            let t = u * (1.0 - b);
            prop_assume!(t > 1e-3);
            let model = ScoreModel::zero_model(sched, 1);
            let direct = seeds1_step(&model, &[1.0], s, t, Mode::NoisePred, &mut ZeroNoise).unwrap()[0];
            let mid = seeds1_step(&model, &[1.0], s, u, Mode::NoisePred, &mut ZeroNoise).unwrap();
            let chained = seeds1_step(&model, &mid, u, t, Mode::NoisePred, &mut ZeroNoise).unwrap()[0];
            prop_assert!((direct - chained).abs() < 1e-12 * direct.abs());

            let v1 = seeds1_noise_scale(&sched, s, t).powi(2);
            let first = sched.alpha(t) / sched.alpha(u) * seeds1_noise_scale(&sched, s, u);
            let v2 = first * first + seeds1_noise_scale(&sched, u, t).powi(2);
            prop_assert!((v1 - v2).abs() < 1e-12 * v1);
        }

        #[test]
        fn constant_noise_degeneration(s in 0.2f64..1.0, frac in 0.1f64..0.9, c in -2.0f64..2.0) {
            let sched = vp();
            let t = s * frac;
            let model = ConstF::new(sched, c, 1);
            let one = seeds1_step(&model, &[0.5], s, t, Mode::NoisePred, &mut ZeroNoise).unwrap()[0];
            let two = seeds2_step(&model, &[0.5], s, t, 0.5, &mut ZeroNoise).unwrap()[0];
            let three = seeds3_step(&model, &[0.5], s, t, 1.0 / 3.0, 2.0 / 3.0, &mut ZeroNoise).unwrap()[0];
            prop_assert!((one - two).abs() < 1e-12 * one.abs().max(1.0));
            prop_assert!((one - three).abs() < 1e-12 * one.abs().max(1.0));
        }

        #[test]
        fn gddim_equals_data_seeds1(s in 0.05f64..1.0, frac in 0.05f64..0.95, x0 in -3.0f64..3.0, key in 0u64..1000) {
            let sched = vp();
            let model = mixture(sched);
            let t = (s * frac).max(1e-3);
            prop_assume!(t < s);
            let x = [x0, -0.5 * x0];
            let mut a = KeyedNoise { seed: key, path: 0, step: 1 };
            let mut b = a;
            let g = gddim_step(&model, &x, s, t, &mut a).unwrap();
            let d = seeds1_step(&model, &x, s, t, Mode::DataPred, &mut b).unwrap();
            for i in 0..2 {
                prop_assert!((g[i] - d[i]).abs() <= 1e-10 * g[i].abs().max(d[i].abs()).max(1e-3));
            }
        }
    }
}
