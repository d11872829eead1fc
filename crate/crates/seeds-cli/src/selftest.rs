//! Fast deterministic invariant suite behind `seeds selftest`.

use std::io::Write;

use anyhow::Result;
use seeds::grids::{edm_grid, linear_lambda_grid, GridKind};
use seeds::harness::{per_step_compare, terminal_distribution_check, SharedNoise};
use seeds::noise::{FixedNoise, ZeroNoise};
use seeds::phi::{inv_factorial, phi};
use seeds::{
    prior_state, sample, step, DataDistribution, Error, Family, Mode, Model, Schedule, ScoreModel, SolverSpec, StepGrid,
};

pub const SELFTEST_PATHS: usize = 2000;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

pub fn run_all(seed: u64, paths: usize, workers: usize) -> Result<Vec<Check>> {
    Ok(vec![
        phi_recursion()?,
        zero_model_exactness(Schedule::vp_linear(19.9, 0.1))?,
        zero_model_exactness(Schedule::ve())?,
        gddim_equivalence(seed)?,
        separation(seed)?,
        grid_contract()?,
        nfe_accounting(seed)?,
        distribution(seed, paths, workers)?,
    ])
}

pub fn print(checks: &[Check], out: &mut dyn Write) -> Result<bool> {
    for c in checks {
        writeln!(out, "{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    writeln!(out, "{} of {} checks passed", checks.len() - failed, checks.len())?;
    Ok(failed == 0)
}

/// `h φ_{k+1}(h) = φ_k(h) - 1/k!`.
fn phi_recursion() -> Result<Check> {
    let mut worst = 0.0f64;
    for h in [-8.0, -1.0, -0.25, 0.25, 1.0, 3.0, 8.0] {
        for k in 0..6 {
            let lhs = h * phi(k + 1, h)?;
            let rhs = phi(k, h)? - inv_factorial(k);
            worst = worst.max((lhs - rhs).abs() / rhs.abs());
        }
    }
    Ok(check("phi-recursion", worst < 1e-12, format!("max_rel {worst:e}")))
}

/// One SEEDS-1 step over the whole range against the composition of many:
/// the mean map and the accumulated variance must agree.
fn zero_model_exactness(sched: Schedule) -> Result<Check> {
    let model = ScoreModel::zero_model(sched, 1);
    let spec = SolverSpec::new(Family::Seeds1);
    let (t0, t1) = (sched.t_max, sched.t_min);
    let affine = |s: f64, t: f64| -> Result<(f64, f64)> {
        let phi = step(&model, &spec, &[1.0], s, t, &mut ZeroNoise)?[0];
        let c = step(&model, &spec, &[0.0], s, t, &mut FixedNoise(vec![vec![1.0]]))?[0];
        Ok((phi, c * c))
    };
    let (phi_one, var_one) = affine(t0, t1)?;
    let grid = linear_lambda_grid(&sched, 40, t0, t1, spec.lambda_variant(&sched))?;
    let (mut phi_many, mut var_many) = (1.0, 0.0);
    for w in grid.times().windows(2) {
        let (p, v) = affine(w[0], w[1])?;
        phi_many *= p;
        var_many = p * p * var_many + v;
    }
    let dm = (phi_one - phi_many).abs() / phi_one.abs();
    let dv = (var_one - var_many).abs() / var_one;
    let name = if sched.is_vp() { "zero-model-vp" } else { "zero-model-ve" };
    Ok(check(name, dm < 1e-12 && dv < 1e-12, format!("mean_rel {dm:e} var_rel {dv:e}")))
}

fn vp_problem() -> Result<(Schedule, ScoreModel)> {
    let sched = Schedule::vp_linear(19.9, 0.1);
    let data = DataDistribution::gaussian(vec![1.0, -0.5], vec![0.1, 0.3])?;
    Ok((sched, ScoreModel::new(data, sched)))
}

fn worst_compare(a: &SolverSpec, b: &SolverSpec, grid: &StepGrid, seed: u64, noise: SharedNoise) -> Result<f64> {
    let (sched, model) = vp_problem()?;
    let mut worst = 0.0f64;
    for p in 0..4 {
        let x0 = prior_state(&sched, grid.times()[0], model.dim(), seed, p);
        worst = worst.max(per_step_compare(&model, a, b, grid, x0, seed, p, noise)?);
    }
    Ok(worst)
}

fn vp_grid(steps: usize) -> Result<StepGrid> {
    let sched = Schedule::vp_linear(19.9, 0.1);
    Ok(linear_lambda_grid(&sched, steps, sched.t_max, sched.t_min, Default::default())?)
}

fn gddim_equivalence(seed: u64) -> Result<Check> {
    let a = SolverSpec::new(Family::Gddim);
    let b = SolverSpec::new(Family::Seeds1).with_mode(Mode::DataPred);
    let d = worst_compare(&a, &b, &vp_grid(30)?, seed, SharedNoise::Keyed)?;
    Ok(check("gddim-equals-seeds1-data", d < 1e-10, format!("max_rel_diff {d:e}")))
}

fn separation(seed: u64) -> Result<Check> {
    let g = vp_grid(30)?;
    let np = SolverSpec::new(Family::Seeds1);
    let modes = worst_compare(&np, &np.with_mode(Mode::DataPred), &g, seed, SharedNoise::Keyed)?;
    let dpm = worst_compare(&np, &SolverSpec::new(Family::Dpm1), &g, seed, SharedNoise::Zero)?;
    Ok(check("solver-separation", modes > 1e-6 && dpm > 1e-6, format!("modes {modes:e} dpm1 {dpm:e}")))
}

fn grid_contract() -> Result<Check> {
    let sched = Schedule::edm(0.5);
    let g = edm_grid(&sched, 18, 0.002, 80.0, 7.0)?;
    let t = g.times();
    let endpoints = t[0] == 80.0 && t[17] == 0.002 && t[18] == 0.0;
    let degenerate = matches!(
        StepGrid::from_times(vec![1.0, 0.5, 0.5, 0.1], GridKind::Custom),
        Err(Error::DegenerateGrid { i: 1, j: 2, .. })
    );
    Ok(check("grid-contract", endpoints && degenerate, format!("endpoints {endpoints} degenerate-error {degenerate}")))
}

/// Every family spends `k(M - 1)` calls per sampled path.
fn nfe_accounting(seed: u64) -> Result<Check> {
    let m = 12;
    let mut bad = Vec::new();
    for family in Family::ALL {
        let sched = match family {
            Family::Ve2StageOdeA | Family::Ve2StageOdeB | Family::Ve2StageSde => Schedule::ve(),
            _ => Schedule::vp_linear(19.9, 0.1),
        };
        let model = ScoreModel::new(DataDistribution::gaussian(vec![0.5], vec![0.2])?, sched);
        let spec = SolverSpec::new(family);
        let (lo, hi) = sched.sigma_range();
        let grid = edm_grid(&sched, m, lo, hi, 7.0)?;
        let x0 = prior_state(&sched, grid.times()[0], 1, seed, 0);
        sample(&model, &grid, &spec, x0, seed, 0)?;
        if model.nfe() != spec.evals_per_step() * (m as u64 - 1) {
            bad.push(family.name());
        }
    }
    let detail = if bad.is_empty() { format!("{} families, M = {m}", Family::ALL.len()) } else { bad.join(",") };
    Ok(check("nfe-accounting", bad.is_empty(), detail))
}

fn distribution(seed: u64, paths: usize, workers: usize) -> Result<Check> {
    let sched = Schedule::vp_linear(19.1, 0.1);
    let model = ScoreModel::new(DataDistribution::gaussian(vec![0.0, 0.0], vec![1.0, 1.0])?, sched);
    let (lo, hi) = sched.sigma_range();
    let grid = edm_grid(&sched, 31, lo, hi, 7.0)?;
    let r = terminal_distribution_check(&model, &SolverSpec::new(Family::Seeds3), &grid, paths, seed, workers)?;
    let mut pass = r.nfe_per_path == 90;
    for i in 0..2 {
        pass &= (r.mean[i] - r.target_mean[i]).abs() <= 5.0 * r.mean_se[i];
        pass &= (r.var[i] - r.target_var[i]).abs() <= 5.0 * r.var_se[i];
    }
    let detail = format!(
        "paths {} nfe {} mean [{:.6}, {:.6}] var [{:.6}, {:.6}]",
        r.n_paths, r.nfe_per_path, r.mean[0], r.mean[1], r.var[0], r.var[1]
    );
    Ok(check("seeds3-moments", pass, detail))
}
