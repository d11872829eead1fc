//! Run configuration: a JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use seeds::grids::{edm_grid, linear_lambda_grid, uniform_time_grid};
use seeds::solvers::ChurnParams;
use seeds::{DataDistribution, Family, Mode, Schedule, ScoreModel, SolverSpec, StepGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Vp {
        #[serde(default = "beta_d")]
        beta_d: f64,
        #[serde(default = "beta_m")]
        beta_m: f64,
        #[serde(default)]
        t_min: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
    VpCosine {
        #[serde(default = "cosine_s")]
        s: f64,
        #[serde(default)]
        t_min: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
    Ve {
        #[serde(default)]
        t_min: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
    Edm {
        #[serde(default = "sigma_d")]
        sigma_d: f64,
        #[serde(default)]
        t_min: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
}

fn beta_d() -> f64 {
    19.9
}
fn beta_m() -> f64 {
    0.1
}
fn cosine_s() -> f64 {
    seeds::schedules::COSINE_SHIFT
}
fn sigma_d() -> f64 {
    0.5
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::named("vp").expect("vp is a schedule name")
    }
}

impl ScheduleConfig {
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "vp" => Self::Vp { beta_d: beta_d(), beta_m: beta_m(), t_min: None, t_max: None },
            "vp-cosine" => Self::VpCosine { s: cosine_s(), t_min: None, t_max: None },
            "ve" => Self::Ve { t_min: None, t_max: None },
            "edm" => Self::Edm { sigma_d: sigma_d(), t_min: None, t_max: None },
            _ => bail!("schedule: unknown schedule '{name}' (expected vp, vp-cosine, ve or edm)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vp { .. } => "vp",
            Self::VpCosine { .. } => "vp-cosine",
            Self::Ve { .. } => "ve",
            Self::Edm { .. } => "edm",
        }
    }

    pub fn build(&self) -> Result<Schedule> {
        let (base, t_min, t_max) = match *self {
            Self::Vp { beta_d, beta_m, t_min, t_max } => (Schedule::vp_linear(beta_d, beta_m), t_min, t_max),
            Self::VpCosine { s, t_min, t_max } => (Schedule::vp_cosine(s), t_min, t_max),
            Self::Ve { t_min, t_max } => (Schedule::ve(), t_min, t_max),
            Self::Edm { sigma_d, t_min, t_max } => (Schedule::edm(sigma_d), t_min, t_max),
        };
        let sched = base.with_domain(t_min.unwrap_or(base.t_min), t_max.unwrap_or(base.t_max)).context("schedule")?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Gaussian,
    Mixture,
}

/// Data law: one Gaussian, or the equal mixture of `N(±mean, var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { kind: DataKind::Gaussian, mean: vec![1.0], var: vec![0.1] }
    }
}

impl DataConfig {
    pub fn build(&self) -> Result<DataDistribution> {
        let d = match self.kind {
            DataKind::Gaussian => DataDistribution::gaussian(self.mean.clone(), self.var.clone()),
            DataKind::Mixture => DataDistribution::symmetric_pair(self.mean.clone(), self.var.clone()),
        };
        d.context("data")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Noise,
    Data,
}

impl ModeName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noise" | "np" => Ok(Self::Noise),
            "data" | "dp" => Ok(Self::Data),
            _ => bail!("solver.mode: unknown mode '{s}' (expected noise or data)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnConfig {
    pub s_churn: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    #[serde(default = "s_noise")]
    pub s_noise: f64,
}

fn s_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub name: String,
    pub mode: ModeName,
    pub r1: f64,
    pub r2: f64,
    pub c2: f64,
    pub r: f64,
    pub churn: Option<ChurnConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSpec::new(Family::Seeds1);
        Self { name: "seeds1".into(), mode: ModeName::Noise, r1: s.r1, r2: s.r2, c2: s.c2, r: s.r, churn: None }
    }
}

/// `seeds1`, or a family name with a `-np` / `-dp` mode suffix.
pub fn parse_solver(name: &str) -> Result<(Family, Option<ModeName>)> {
    if let Some(f) = Family::from_name(name) {
        return Ok((f, None));
    }
    for (suffix, mode) in [("-np", ModeName::Noise), ("-dp", ModeName::Data)] {
        if let Some(f) = name.strip_suffix(suffix).and_then(Family::from_name) {
            return Ok((f, Some(mode)));
        }
    }
    let known: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
    bail!("solver.name: unknown solver '{name}' (expected one of {})", known.join(", "))
}

impl SolverConfig {
    /// Set the family and, when the name carries one, the mode.
    pub fn set_name(&mut self, name: &str) -> Result<()> {
        let (family, mode) = parse_solver(name)?;
        self.name = family.name().into();
        if let Some(m) = mode {
            self.mode = m;
        }
        Ok(())
    }

    /// Family name with a `-dp` suffix in data-prediction mode.
    pub fn label(&self) -> String {
        match self.mode {
            ModeName::Noise => self.name.clone(),
            ModeName::Data => format!("{}-dp", self.name),
        }
    }

    pub fn build(&self) -> Result<SolverSpec> {
        let (family, suffix) = parse_solver(&self.name)?;
        let mode = match suffix.unwrap_or(self.mode) {
            ModeName::Noise => Mode::NoisePred,
            ModeName::Data => Mode::DataPred,
        };
        let mut spec = SolverSpec::new(family).with_mode(mode);
        spec.r1 = self.r1;
        spec.r2 = self.r2;
        spec.c2 = self.c2;
        spec.r = self.r;
        spec.churn = self.churn.map(|c| ChurnParams {
            s_churn: c.s_churn,
            s_tmin: c.s_tmin,
            s_tmax: c.s_tmax,
            s_noise: c.s_noise,
        });
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKindName {
    /// Polynomial in `σ` with exponent `rho`, plus a final node at 0.
    Edm,
    /// Uniform in the solver's `λ`.
    Lambda,
    /// Uniform in `t`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKindName,
    /// `M`; a sampling run makes `k(M - 1)` model calls.
    pub steps: usize,
    pub rho: f64,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            kind: GridKindName::Edm,
            steps: 31,
            rho: 7.0,
            sigma_min: None,
            sigma_max: None,
            t_start: None,
            t_end: None,
        }
    }
}

impl GridConfig {
    pub fn build(&self, sched: &Schedule, spec: &SolverSpec) -> Result<StepGrid> {
        let (t_start, t_end) = (self.t_start.unwrap_or(sched.t_max), self.t_end.unwrap_or(sched.t_min));
        let g = match self.kind {
            GridKindName::Edm => {
                let (lo, hi) = sched.sigma_range();
                edm_grid(sched, self.steps, self.sigma_min.unwrap_or(lo), self.sigma_max.unwrap_or(hi), self.rho)
            }
            GridKindName::Lambda => linear_lambda_grid(sched, self.steps, t_start, t_end, spec.lambda_variant(sched)),
            GridKindName::Uniform => uniform_time_grid(self.steps, t_start, t_end),
        };
        let g = g.context("grid")?;
        for &t in g.times().iter().filter(|&&t| t > 0.0) {
            sched.check_time(t).context("grid")?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderSettings {
    /// Coarsest step count of the strong study.
    pub m0: usize,
    pub levels: usize,
    /// Step counts of the weak study.
    pub resolutions: Vec<usize>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

impl Default for OrderSettings {
    fn default() -> Self {
        Self { m0: 32, levels: 4, resolutions: vec![16, 20, 24, 28], t_start: None, t_end: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub solver: SolverConfig,
    pub grid: GridConfig,
    pub order: OrderSettings,
    pub seed: u64,
    /// Per-command default when absent.
    pub paths: Option<usize>,
    pub workers: usize,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    /// Directory for one full-trajectory CSV per path.
    pub trajectories: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            data: DataConfig::default(),
            solver: SolverConfig::default(),
            grid: GridConfig::default(),
            order: OrderSettings::default(),
            seed: 0,
            paths: None,
            workers: 1,
            threshold: None,
            out: None,
            trajectories: None,
        }
    }
}

/// Everything a command needs, validated.
pub struct Run {
    pub schedule: Schedule,
    pub model: ScoreModel,
    pub spec: SolverSpec,
    pub grid: StepGrid,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn set_schedule(&mut self, name: &str) -> Result<()> {
        if self.schedule.name() != name {
            self.schedule = ScheduleConfig::named(name)?;
        }
        Ok(())
    }

    pub fn paths_or(&self, default: usize) -> usize {
        self.paths.unwrap_or(default)
    }

    /// Check every field and cross-field constraint before any work.
    pub fn build(&self) -> Result<Run> {
        if self.workers == 0 {
            return Err(anyhow!("workers: must be at least 1"));
        }
        if self.paths == Some(0) {
            return Err(anyhow!("paths: must be at least 1"));
        }
        let schedule = self.schedule.build()?;
        let data = self.data.build()?;
        let spec = self.solver.build()?;
        spec.validate(&schedule).context("solver")?;
        let grid = self.grid.build(&schedule, &spec)?;
        Ok(Run { schedule, model: ScoreModel::new(data, schedule), spec, grid })
    }
}
