use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use seeds::harness::{per_step_compare, strong_order, weak_order, OrderConfig, OrderEstimate, SharedNoise};
use seeds::{prior_state, sample, Model, Trajectory};
use serde_json::json;

use crate::config::{Run, RunConfig};
use crate::Acceptance;

pub const SAMPLE_PATHS: usize = 1000;
pub const STRONG_PATHS: usize = 10_000;
pub const WEAK_PATHS: usize = 100_000;
pub const COMPARE_PATHS: usize = 8;
pub const COMPARE_THRESHOLD: f64 = 1e-10;

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("out: cannot create {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reports go to stdout unless stdout already carries the data.
fn report(cfg: &RunConfig) -> Box<dyn Write> {
    match cfg.out {
        Some(_) => Box::new(io::stdout()),
        None => Box::new(io::stderr()),
    }
}

fn run_paths(run: &Run, cfg: &RunConfig, n: usize) -> Result<Vec<Trajectory>> {
    let t0 = run.grid.times()[0];
    let d = run.model.dim();
    let trajs = seeds::harness::par_map(cfg.workers, n, |p| {
        let x0 = prior_state(&run.schedule, t0, d, cfg.seed, p as u64);
        sample(&run.model, &run.grid, &run.spec, x0, cfg.seed, p as u64)
    })?;
    Ok(trajs.into_iter().collect::<seeds::Result<Vec<_>>>()?)
}

pub fn sample_cmd(cfg: &RunConfig) -> Result<()> {
    let run = cfg.build()?;
    let n = cfg.paths_or(SAMPLE_PATHS);
    if let Some(dir) = &cfg.trajectories {
        fs::create_dir_all(dir).with_context(|| format!("trajectories: cannot create {}", dir.display()))?;
    }
    run.model.reset_nfe();
    let trajs = run_paths(&run, cfg, n)?;
    let d = run.model.dim();

    let mut w = csv::Writer::from_writer(sink(cfg.out.as_deref())?);
    let mut header = vec!["path".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (p, tr) in trajs.iter().enumerate() {
        let mut row = vec![p.to_string()];
        row.extend(tr.terminal().iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(dir) = &cfg.trajectories {
        for (p, tr) in trajs.iter().enumerate() {
            let path = dir.join(format!("path_{p:06}.csv"));
            let mut w = csv::Writer::from_path(&path)
                .with_context(|| format!("trajectories: cannot create {}", path.display()))?;
            let mut header = vec!["node".to_string(), "t".to_string()];
            header.extend((0..d).map(|i| format!("x{i}")));
            w.write_record(&header)?;
            for (i, (t, x)) in tr.times.iter().zip(&tr.states).enumerate() {
                let mut row = vec![i.to_string(), num(*t)];
                row.extend(x.iter().map(|&v| num(v)));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }

    let m = run.grid.times().len() - 1;
    let k = run.spec.evals_per_step();
    let total = run.model.nfe();
    let mut r = report(cfg);
    writeln!(r, "paths {n}")?;
    writeln!(r, "nfe_per_path {} (k = {k}, M = {m}, k(M-1) = {})", total / n as u64, k * (m as u64 - 1))?;
    writeln!(r, "nfe_total {total}")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OrderKind {
    Strong,
    Weak,
}

pub fn order_cmd(cfg: &RunConfig, kind: OrderKind) -> Result<()> {
    let run = cfg.build()?;
    let n = cfg.paths_or(match kind {
        OrderKind::Strong => STRONG_PATHS,
        OrderKind::Weak => WEAK_PATHS,
    });
    let mut ocfg = OrderConfig::for_schedule(&run.schedule, n, cfg.seed);
    ocfg.workers = cfg.workers;
    if let Some(t) = cfg.order.t_start {
        ocfg.t_start = t;
    }
    if let Some(t) = cfg.order.t_end {
        ocfg.t_end = t;
    }
    let est = match kind {
        OrderKind::Strong => strong_order(&run.model, &run.spec, cfg.order.m0, cfg.order.levels, &ocfg),
        OrderKind::Weak => weak_order(&run.model, &run.spec, &cfg.order.resolutions, &ocfg),
    }
    .context("order")?;

    let mut w = csv::Writer::from_writer(sink(cfg.out.as_deref())?);
    w.write_record(["h", "error", "se", "n_paths"])?;
    for p in &est.points {
        w.write_record([num(p.h), num(p.error), num(p.se), est.n_paths.to_string()])?;
    }
    w.flush()?;
    drop(w);

    let summary = summary_json(&est, kind, &cfg.solver.name);
    let text = serde_json::to_string_pretty(&summary)?;
    if let Some(out) = &cfg.out {
        let path = out.with_extension("json");
        fs::write(&path, format!("{text}\n")).with_context(|| format!("out: cannot write {}", path.display()))?;
    }
    writeln!(report(cfg), "{text}")?;

    if let Some(min) = cfg.threshold {
        match est.slope() {
            Some(s) if s >= min => {}
            other => return Err(Acceptance(format!("slope {other:?} below threshold {min}")).into()),
        }
    }
    Ok(())
}

fn summary_json(est: &OrderEstimate, kind: OrderKind, solver: &str) -> serde_json::Value {
    json!({
        "kind": match kind { OrderKind::Strong => "strong", OrderKind::Weak => "weak" },
        "solver": solver,
        "slope": est.fit.map(|f| f.slope),
        "r2": est.fit.map(|f| f.r2),
        "slope_se": est.fit.and_then(|f| f.slope_se),
        "slope_without_coarsest": est.slope_without_coarsest,
        "n_paths": est.n_paths,
        "notes": est.notes,
    })
}

/// `against` is a config file or a solver name applied to `cfg`.
pub fn compare_cmd(cfg: &RunConfig, against: &str) -> Result<()> {
    let other = if against.ends_with(".json") || Path::new(against).is_file() {
        RunConfig::load(Path::new(against))?
    } else {
        let mut c = cfg.clone();
        c.solver = Default::default();
        c.solver.set_name(against)?;
        c
    };
    if other.schedule != cfg.schedule || other.grid != cfg.grid {
        bail!("compare: both runs need the same schedule and grid");
    }
    if other.data != cfg.data || other.seed != cfg.seed {
        bail!("compare: both runs need the same data and seed");
    }
    let a = cfg.build()?;
    let b = other.build()?;
    // Solvers without noise are compared against the noise-free part of the other.
    let noise = if a.spec.family.is_stochastic() && b.spec.family.is_stochastic() {
        SharedNoise::Keyed
    } else {
        SharedNoise::Zero
    };
    let n = cfg.paths_or(COMPARE_PATHS);
    let t0 = a.grid.times()[0];
    let diffs = seeds::harness::par_map(cfg.workers, n, |p| {
        let x0 = prior_state(&a.schedule, t0, a.model.dim(), cfg.seed, p as u64);
        per_step_compare(&a.model, &a.spec, &b.spec, &a.grid, x0, cfg.seed, p as u64, noise)
    })?;
    let worst = diffs.into_iter().collect::<seeds::Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let threshold = cfg.threshold.unwrap_or(COMPARE_THRESHOLD);
    let verdict = if worst < threshold { "PASS" } else { "FAIL" };
    let mut out = sink(cfg.out.as_deref())?;
    writeln!(out, "{} vs {}", cfg.solver.label(), other.solver.label())?;
    writeln!(out, "max_rel_diff {}", num(worst))?;
    writeln!(out, "threshold {}", num(threshold))?;
    writeln!(out, "{verdict}")?;
    out.flush()?;
    if verdict == "FAIL" {
        return Err(Acceptance(format!("max_rel_diff {worst:e} is not below {threshold:e}")).into());
    }
    Ok(())
}

pub fn grid_cmd(cfg: &RunConfig) -> Result<()> {
    let run = cfg.build()?;
    let variant = run.spec.lambda_variant(&run.schedule);
    let mut w = csv::Writer::from_writer(sink(cfg.out.as_deref())?);
    w.write_record(["node", "t", "sigma_bar", "lambda"])?;
    for (i, &t) in run.grid.times().iter().enumerate() {
        let (sb, l) = if t > 0.0 {
            (num(run.schedule.sigma_bar(t)), num(run.schedule.lambda(t, variant)?))
        } else {
            (num(0.0), String::new())
        };
        w.write_record([i.to_string(), num(t), sb, l])?;
    }
    w.flush()?;
    Ok(())
}
