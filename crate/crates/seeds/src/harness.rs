//! Convergence-order estimation, closed-form Gaussian oracles and
//! per-step solver comparisons.
//!
//! Path ensembles run on a local thread pool. Every path draws from its own
//! keyed streams and results are reduced in path order with pairwise
//! summation, so outputs do not depend on the number of workers.

use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::grids::{linear_lambda_grid, StepGrid};
use crate::models::{DataDistribution, Model, ScoreModel};
use crate::noise::{chasles_refine, FixedNoise, KeyedNoise, RngStream, StreamKey, ZeroNoise, BROWNIAN_STEP, INIT_STEP};
use crate::schedules::Schedule;
use crate::solvers::{self, Family, Frame, Mode, SolverSpec};

/// Extra halvings between the finest measured level and the reference.
pub const REFERENCE_HALVINGS: u32 = 2;
/// Regression standard error above which a fit is flagged.
pub const SLOPE_SE_WARN: f64 = 0.1;
/// Errors below this are treated as exact.
pub const EXACT_TOL: f64 = 1e-12;

/// Sum with `O(log n)` error growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Evaluate `f(0..n)` on `workers` threads, keeping index order.
pub fn par_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Least-squares line through `(log h, log error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `√(SSR/(n-2)/Sxx)`; absent for two points.
    pub slope_se: Option<f64>,
}

pub fn fit_loglog(h: &[f64], err: &[f64]) -> Result<LogLogFit> {
    if h.len() != err.len() || h.len() < 2 {
        return config("a log-log fit needs at least two matched points");
    }
    if h.iter().chain(err).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return config("a log-log fit needs positive finite values");
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (pairwise_mean(&x), pairwise_mean(&y));
    let sxx = pairwise_sum(&x.iter().map(|v| (v - mx).powi(2)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let syy = pairwise_sum(&y.iter().map(|v| (v - my).powi(2)).collect::<Vec<_>>());
    if sxx == 0.0 {
        return config("a log-log fit needs distinct step sizes");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = pairwise_sum(&x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).collect::<Vec<_>>());
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ssr / syy };
    let slope_se = (x.len() > 2).then(|| (ssr / (n - 2.0) / sxx).sqrt());
    Ok(LogLogFit { slope, intercept, r2, slope_se })
}

/// One row of an order study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderPoint {
    /// Step width in `λ`.
    pub h: f64,
    pub steps: usize,
    pub error: f64,
    pub se: f64,
    /// Whether the point entered the fit.
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Sorted by decreasing `h`.
    pub points: Vec<OrderPoint>,
    /// `None` when every error is at round-off level or too few points remain.
    pub fit: Option<LogLogFit>,
    /// Slope refitted without the largest `h`.
    pub slope_without_coarsest: Option<f64>,
    pub n_paths: usize,
    pub notes: Vec<String>,
}

impl OrderEstimate {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    pub fn is_exact(&self) -> bool {
        self.points.iter().all(|p| p.error < EXACT_TOL)
    }

    fn from_points(points: Vec<OrderPoint>, n_paths: usize, mut notes: Vec<String>) -> Result<Self> {
        let used: Vec<&OrderPoint> = points.iter().filter(|p| p.fitted).collect();
        let (fit, without) = if used.len() >= 2 {
            let h: Vec<f64> = used.iter().map(|p| p.h).collect();
            let e: Vec<f64> = used.iter().map(|p| p.error).collect();
            let fit = fit_loglog(&h, &e)?;
            let without = (used.len() >= 3).then(|| fit_loglog(&h[1..], &e[1..])).transpose()?.map(|f| f.slope);
            (Some(fit), without)
        } else {
            (None, None)
        };
        if let Some(se) = fit.and_then(|f| f.slope_se) {
            if se > SLOPE_SE_WARN {
                notes.push(format!(
                    "slope standard error {se:.3} exceeds {SLOPE_SE_WARN}; increase the number of paths"
                ));
            }
        }
        Ok(Self { points, fit, slope_without_coarsest: without, n_paths, notes })
    }
}

/// Exact marginals of the forward process for Gaussian-mixture data:
/// each component becomes `N(α_t m, α_t² V + σ̄_t² I)`.
#[derive(Debug, Clone)]
pub struct GaussianFlowOracle {
    pub data: DataDistribution,
    pub schedule: Schedule,
}

impl GaussianFlowOracle {
    pub fn new(data: DataDistribution, schedule: Schedule) -> Self {
        Self { data, schedule }
    }

    /// `E[x_axis^p]` at time `t`, `p ≤ 4`.
    pub fn moment(&self, t: f64, axis: usize, p: u32) -> f64 {
        let (alpha, _, sb) = self.schedule.alpha_sigma_raw(t);
        self.data.marginal_moment(alpha, sb, axis, p)
    }

    /// Mean and per-axis variance at `t`.
    pub fn mean_var(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        (0..self.data.dim())
            .map(|i| {
                let m = self.moment(t, i, 1);
                (m, self.moment(t, i, 2) - m * m)
            })
            .unzip()
    }
}

/// Draw `x` at `t` from the model's exact marginal, or from `N(0, σ̄_t² I)`
/// for the zero model.
fn exact_initial(model: &ScoreModel, t: f64, seed: u64, path: u64) -> Vec<f64> {
    let (alpha, _, sb) = model.schedule().alpha_sigma_raw(t);
    let mut rng = RngStream::new(StreamKey::new(seed, path, INIT_STEP, 0));
    match model.data() {
        Some(d) => d.sample_marginal(alpha, sb, &mut rng),
        None => rng.gauss(model.dim()).into_iter().map(|z| sb * z).collect(),
    }
}

/// Exact `E[x_axis^p]` at `t_end` for paths started from the exact law at
/// `t_start`. The zero model propagates `N(0, σ̄²)` through the linear flow.
fn exact_moment(model: &ScoreModel, spec: &SolverSpec, t_start: f64, t_end: f64, axis: usize, p: u32) -> f64 {
    let sched = model.schedule();
    match model.data() {
        Some(d) => GaussianFlowOracle::new(d.clone(), *sched).moment(t_end, axis, p),
        None => {
            let fr = Frame::new(sched, spec.lambda_variant(sched));
            let h = fr.lambda(t_end).unwrap_or(f64::NAN) - fr.lambda(t_start).unwrap_or(f64::NAN);
            let phi = fr.transition(t_end, t_start);
            let k = fr.kappa(t_end);
            let v = (phi * sched.sigma_bar(t_start)).powi(2) + k * k * (2.0 * h).exp_m1();
            crate::models::gaussian_raw_moment(0.0, v, p)
        }
    }
}

/// Shared settings of the order studies.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub workers: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl OrderConfig {
    /// The whole schedule domain.
    pub fn for_schedule(sched: &Schedule, n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, workers: 1, t_start: sched.t_max, t_end: sched.t_min }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return config(format!("need at least 2 paths, got {}", self.n_paths));
        }
        if !(self.t_end > 0.0 && self.t_end < self.t_start) {
            return config(format!("need 0 < t_end < t_start, got {} and {}", self.t_end, self.t_start));
        }
        Ok(())
    }
}

/// Mean-square sup-over-nodes error of SEEDS-1 on nested `λ`-halved grids
/// `M_0·2^l`, `l < levels`, against a reference with
/// [`REFERENCE_HALVINGS`] further halvings. All levels of a path share one
/// Brownian path: the finest increments are drawn once and summed.
pub fn strong_order(
    model: &ScoreModel,
    spec: &SolverSpec,
    m0: usize,
    levels: usize,
    cfg: &OrderConfig,
) -> Result<OrderEstimate> {
    if spec.family != Family::Seeds1 || spec.mode != Mode::NoisePred || spec.churn.is_some() {
        return config("strong order is only defined for noise-prediction SEEDS-1 without churn");
    }
    if levels < 3 {
        return config(format!("strong order needs at least 3 levels, got {levels}"));
    }
    if m0 < 1 {
        return config("the coarsest level needs at least one step");
    }
    cfg.validate()?;
    let sched = *model.schedule();
    spec.validate(&sched)?;
    let variant = spec.lambda_variant(&sched);
    let ref_halvings = levels as u32 - 1 + REFERENCE_HALVINGS;
    let m_ref = m0 << ref_halvings;
    let ref_grid = linear_lambda_grid(&sched, m_ref, cfg.t_start, cfg.t_end, variant)?;
    let ref_lambdas = ref_grid.lambdas(&sched, variant)?;
    let grids: Vec<StepGrid> = (0..levels)
        .map(|l| linear_lambda_grid(&sched, m0 << l, cfg.t_start, cfg.t_end, variant))
        .collect::<Result<_>>()?;
    let d = model.dim();

    // z for each step of a grid whose nodes sit every `stride` reference nodes.
    let normals = |fine: &[Vec<f64>], stride: usize, times: &[f64]| -> Vec<Vec<f64>> {
        (0..times.len() - 1)
            .map(|i| {
                let (a, b) = (i * stride, (i + 1) * stride);
                let h = ref_lambdas[b] - ref_lambdas[a];
                let scale = (-ref_lambdas[b]).exp() * (0.5 * (2.0 * h).exp_m1()).sqrt();
                (0..d).map(|k| pairwise_sum(&fine[a..b].iter().map(|j| j[k]).collect::<Vec<_>>()) / scale).collect()
            })
            .collect()
    };

    let per_path = par_map(cfg.workers, cfg.n_paths, |p| -> Result<(Vec<f64>, Vec<f64>)> {
        let path = p as u64;
        let x0 = exact_initial(model, cfg.t_start, cfg.seed, path);
        let mut rng = RngStream::new(StreamKey::new(cfg.seed, path, BROWNIAN_STEP, 0));
        let fine = chasles_refine(&mut rng, &ref_lambdas, d)?;
        let drive = |times: &[f64], stride: usize| -> Result<Vec<Vec<f64>>> {
            let z = normals(&fine, stride, times);
            let traj = solvers::run(model, spec, times, x0.clone(), false, |i| FixedNoise(vec![z[i - 1].clone()]))?;
            Ok(traj.states)
        };
        let reference = drive(ref_grid.times(), 1)?;
        let sups = grids
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let stride = 1usize << (ref_halvings - l as u32);
                let states = drive(g.times(), stride)?;
                Ok(states
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x.iter().zip(&reference[i * stride]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((sups, reference.last().cloned().unwrap_or_default()))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_paths as f64;
    let mut points = Vec::with_capacity(levels);
    for l in 0..levels {
        let sq: Vec<f64> = per_path.iter().map(|(s, _)| s[l]).collect();
        let ms = pairwise_mean(&sq);
        let var = pairwise_sum(&sq.iter().map(|v| (v - ms).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
        let error = ms.sqrt();
        let se = if error > 0.0 { (var / n).sqrt() / (2.0 * error) } else { 0.0 };
        let h = grids[l].max_lambda_step(&sched, variant)?;
        points.push(OrderPoint { h, steps: m0 << l, error, se, fitted: error >= EXACT_TOL });
    }

    let mut notes = Vec::new();
    if points.iter().all(|p| !p.fitted) {
        notes.push("all errors at round-off level: the scheme is exact on this problem".to_string());
    }
    if model.data().is_some() {
        for axis in 0..d {
            let vals: Vec<f64> = per_path.iter().map(|(_, x)| x[axis]).collect();
            let (mean, se) = mean_se(&vals);
            let exact = exact_moment(model, spec, cfg.t_start, cfg.t_end, axis, 1);
            if (mean - exact).abs() > 5.0 * se {
                notes.push(format!(
                    "reference terminal mean on axis {axis} is {mean}, exact {exact}, more than 5 standard errors apart"
                ));
            }
        }
    }
    if points.iter().all(|p| !p.fitted) {
        return Ok(OrderEstimate { points, fit: None, slope_without_coarsest: None, n_paths: cfg.n_paths, notes });
    }
    OrderEstimate::from_points(points, cfg.n_paths, notes)
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = pairwise_mean(xs);
    let var = pairwise_sum(&xs.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Powers used as weak test functions.
pub const WEAK_POWERS: [u32; 3] = [1, 2, 4];

/// Weak error `max_{G, axis} |E[G(x̃_end)] - E_exact[G]|` for
/// `G ∈ {x, x², x⁴}` on linear-`λ` grids with the given step counts.
/// Points whose error is below 3 standard errors are kept but not fitted.
pub fn weak_order(
    model: &ScoreModel,
    spec: &SolverSpec,
    resolutions: &[usize],
    cfg: &OrderConfig,
) -> Result<OrderEstimate> {
    if resolutions.len() < 3 {
        return config(format!("weak order needs at least 3 resolutions, got {}", resolutions.len()));
    }
    cfg.validate()?;
    let sched = *model.schedule();
    spec.validate(&sched)?;
    let variant = spec.lambda_variant(&sched);
    let d = model.dim();
    let mut res = resolutions.to_vec();
    res.sort_unstable();
    res.dedup();
    let exact: Vec<f64> = (0..d)
        .flat_map(|axis| WEAK_POWERS.map(|p| exact_moment(model, spec, cfg.t_start, cfg.t_end, axis, p)))
        .collect();
    let mut points = Vec::with_capacity(res.len());
    let mut notes = Vec::new();
    for &m in &res {
        let grid = linear_lambda_grid(&sched, m, cfg.t_start, cfg.t_end, variant)?;
        let terminals = par_map(cfg.workers, cfg.n_paths, |p| {
            let x0 = exact_initial(model, cfg.t_start, cfg.seed, p as u64);
            solvers::integrate(model, &grid, spec, x0, cfg.seed, p as u64).map(|t| t.terminal().to_vec())
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (mut worst, mut worst_se) = (0.0, 0.0);
        for axis in 0..d {
            for (j, &p) in WEAK_POWERS.iter().enumerate() {
                let vals: Vec<f64> = terminals.iter().map(|x| x[axis].powi(p as i32)).collect();
                let (mean, se) = mean_se(&vals);
                let err = (mean - exact[axis * WEAK_POWERS.len() + j]).abs();
                if err > worst {
                    worst = err;
                    worst_se = se;
                }
            }
        }
        let h = grid.max_lambda_step(&sched, variant)?;
        let fitted = worst >= 3.0 * worst_se && worst >= EXACT_TOL;
        if !fitted {
            notes.push(format!(
                "M = {m}: error {worst:e} is within 3 standard errors ({worst_se:e}); excluded from the fit"
            ));
        }
        points.push(OrderPoint { h, steps: m, error: worst, se: worst_se, fitted });
    }
    points.sort_by(|a, b| b.h.total_cmp(&a.h));
    OrderEstimate::from_points(points, cfg.n_paths, notes)
}

/// How [`per_step_compare`] feeds noise to the two steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedNoise {
    Keyed,
    Zero,
}

/// Walk the trajectory of `a`; at every node take one step with each solver
/// from the same state and the same draws. Returns the largest
/// `‖x_a - x_b‖_∞ / max(‖x_a‖_∞, ‖x_b‖_∞)`.
#[allow(clippy::too_many_arguments)]
pub fn per_step_compare(
    model: &dyn Model,
    a: &SolverSpec,
    b: &SolverSpec,
    grid: &StepGrid,
    x_init: Vec<f64>,
    seed: u64,
    path: u64,
    noise: SharedNoise,
) -> Result<f64> {
    a.validate(model.schedule())?;
    b.validate(model.schedule())?;
    let times = grid.times();
    let m = times.len() - 1;
    // The sentinel interval of a sigma grid never reaches the model.
    let last = if times[m] > 0.0 { m } else { m - 1 };
    let mut x = x_init;
    let mut worst = 0.0f64;
    for i in 1..=last {
        let (s, t) = (times[i - 1], times[i]);
        let (ya, yb) = match noise {
            SharedNoise::Keyed => {
                let key = KeyedNoise { seed, path, step: i as u64 };
                (solvers::step(model, a, &x, s, t, &mut { key })?, solvers::step(model, b, &x, s, t, &mut { key })?)
            }
            SharedNoise::Zero => {
                (solvers::step(model, a, &x, s, t, &mut ZeroNoise)?, solvers::step(model, b, &x, s, t, &mut ZeroNoise)?)
            }
        };
        let diff = ya.iter().zip(&yb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let scale = ya.iter().chain(&yb).map(|v| v.abs()).fold(0.0, f64::max);
        if diff > 0.0 {
            worst = worst.max(diff / scale);
        }
        x = ya;
    }
    Ok(worst)
}

/// Terminal moments of sampled paths, per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub n_paths: usize,
    pub nfe_per_path: u64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub var: Vec<f64>,
    pub var_se: Vec<f64>,
    pub skew: Vec<f64>,
    pub skew_se: Vec<f64>,
    /// Exact mean and variance at the terminal node.
    pub target_mean: Vec<f64>,
    pub target_var: Vec<f64>,
}

/// Sample from the prior `N(0, σ̄(t_0)² I)` with [`solvers::sample`] and
/// summarize the terminal states.
pub fn terminal_distribution_check(
    model: &ScoreModel,
    spec: &SolverSpec,
    grid: &StepGrid,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentReport> {
    if n_paths < 2 {
        return config(format!("need at least 2 paths, got {n_paths}"));
    }
    let sched = *model.schedule();
    spec.validate(&sched)?;
    let times = grid.times();
    let t0 = times[0];
    let terminals = par_map(workers, n_paths, |p| {
        let x0 = solvers::prior_state(&sched, t0, model.dim(), seed, p as u64);
        solvers::sample(model, grid, spec, x0, seed, p as u64).map(|t| t.terminal().to_vec())
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = n_paths as f64;
    let d = model.dim();
    let mut r = MomentReport {
        n_paths,
        nfe_per_path: spec.evals_per_step() * (times.len() as u64 - 2),
        mean: vec![],
        mean_se: vec![],
        var: vec![],
        var_se: vec![],
        skew: vec![],
        skew_se: vec![],
        target_mean: vec![],
        target_var: vec![],
    };
    let t_last = times[times.len() - 2];
    for axis in 0..d {
        let v: Vec<f64> = terminals.iter().map(|x| x[axis]).collect();
        let m = pairwise_mean(&v);
        let c = |k: i32| pairwise_mean(&v.iter().map(|x| (x - m).powi(k)).collect::<Vec<_>>());
        let (m2, m3, m4) = (c(2), c(3), c(4));
        let var = m2 * n / (n - 1.0);
        r.mean.push(m);
        r.mean_se.push((var / n).sqrt());
        r.var.push(var);
        r.var_se.push(((m4 - m2 * m2) / n).sqrt());
        r.skew.push(m3 / m2.powf(1.5));
        r.skew_se.push((6.0 / n).sqrt());
        match model.data() {
            Some(data) => {
                let (mu, var) = GaussianFlowOracle::new(data.clone(), sched).mean_var(t_last);
                r.target_mean.push(mu[axis]);
                r.target_var.push(var[axis]);
            }
            None => {
                r.target_mean.push(0.0);
                r.target_var.push(exact_moment(model, spec, t0, t_last, axis, 2));
            }
        }
    }
    Ok(r)
}
