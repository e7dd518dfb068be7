//! Replicated simulate-then-estimate studies comparing control policies.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::estimate::{em_estimate, golden_max, mle_grid_models, EmOptions};
use crate::experiment::simulate::{
    simulate_model, Controller, FilterBank, FixedController, FofiController, PofiController, RandomController,
    Trajectory,
};
use crate::fofi::{solve_fofi, solve_fofi_prior, StatePolicy};
use crate::inference::{loglikelihood_model, ThetaPosterior};
use crate::model::{ModelFamily, PomdpModel};
use crate::pofi::{solve_pofi_prior, solve_pofi_with_budget, PofiPolicy, DEFAULT_CELL_BUDGET};
use crate::tables::GridTables;
use crate::via::{ViaConfig, ViaController, ViaFofiController};

/// A policy arm of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Variant {
    /// Lag-`m` window policy solved at the true parameter.
    Pofi { lag: usize },
    /// Lag-`m` window policy solved on prior-averaged tables.
    PofiPrior { lag: usize },
    /// State policy at the true parameter, filtered with the true model.
    FofiOracle,
    /// State policy on prior-averaged tables, posterior-mixed filter.
    FofiPrior,
    /// Window value iteration re-solved after every observation.
    Via { lag: usize },
    /// State value iteration re-solved after every observation.
    ViaFofi,
    Fixed { control: usize },
    Random,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Pofi { lag } => format!("pofi-m{lag}"),
            Variant::PofiPrior { lag } => format!("pofi-prior-m{lag}"),
            Variant::FofiOracle => "fofi-oracle".into(),
            Variant::FofiPrior => "fofi-prior".into(),
            Variant::Via { lag } => format!("via-m{lag}"),
            Variant::ViaFofi => "via-fofi".into(),
            Variant::Fixed { control } => format!("fixed-u{control}"),
            Variant::Random => "random".into(),
        }
    }

    fn needs_prior(&self) -> bool {
        matches!(
            self,
            Variant::PofiPrior { .. } | Variant::FofiPrior | Variant::Via { .. } | Variant::ViaFofi
        )
    }
}

/// How each replication's parameter estimate is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Estimator {
    /// Best point of a grid; ties go to the lowest value.
    Grid { grid: Vec<f64> },
    /// Grid search, then golden-section search between the best point's
    /// neighbours down to bracket width `tol`.
    Refined { grid: Vec<f64>, tol: f64 },
    /// EM started at `theta0`.
    Em {
        theta0: f64,
        #[serde(default)]
        options: EmOptions,
    },
}

/// Prior over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub grid: Vec<f64>,
    /// Uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl PriorSpec {
    pub fn posterior(&self) -> Result<ThetaPosterior> {
        match &self.weights {
            Some(w) => ThetaPosterior::new(self.grid.clone(), w.clone()),
            None => ThetaPosterior::uniform(self.grid.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub true_theta: f64,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    pub horizon: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub estimator: Estimator,
    pub variants: Vec<Variant>,
    /// Window-start state law for window tables; the model's initial state when omitted.
    #[serde(default)]
    pub window_prior: Option<Vec<f64>>,
    #[serde(default)]
    pub via: ViaConfig,
    #[serde(default = "default_budget")]
    pub cell_budget: f64,
}

fn default_budget() -> f64 {
    DEFAULT_CELL_BUDGET
}

impl StudyConfig {
    /// SHA-256 of the family name and the canonical JSON of this config.
    pub fn hash(&self, family: &ModelFamily) -> String {
        let mut h = Sha256::new();
        h.update(family.name().as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("replication count must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("no policy variants".into()));
        }
        if self.prior.is_none() && self.variants.iter().any(Variant::needs_prior) {
            return Err(Error::InvalidArgument("prior-based variants need a prior".into()));
        }
        match &self.estimator {
            Estimator::Grid { grid } | Estimator::Refined { grid, .. } if grid.is_empty() => {
                Err(Error::InvalidArgument("estimation grid is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Seed of replication `rep`.
pub fn replication_seed(base_seed: u64, rep: usize) -> u64 {
    base_seed ^ rep as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub variant: String,
    pub n: usize,
    /// `mean(theta_hat) - theta`.
    pub bias: f64,
    /// Sample standard deviation of `theta_hat`.
    pub sd: f64,
    /// Mean squared error.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDetail {
    pub variant: String,
    pub rep: usize,
    pub seed: u64,
    pub theta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config_hash: String,
    pub rows: Vec<StudyRow>,
    pub details: Vec<StudyDetail>,
}

impl StudyResult {
    pub fn row(&self, label: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.variant == label)
    }
}

/// Compensated sum.
fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Bias, sample sd and MSE of estimates of `theta`.
pub fn summarize(variant: &str, estimates: &[f64], theta: f64) -> StudyRow {
    let n = estimates.len();
    let nf = n as f64;
    let mean = neumaier(estimates.iter().copied()) / nf;
    let ss = neumaier(estimates.iter().map(|e| (e - mean) * (e - mean)));
    let sd = if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
    let mse = neumaier(estimates.iter().map(|e| (e - theta) * (e - theta))) / nf;
    StudyRow {
        variant: variant.to_string(),
        n,
        bias: mean - theta,
        sd,
        mse,
    }
}

/// Everything solved once per study and shared by replications.
enum Prepared {
    Pofi(Arc<PofiPolicy>),
    FofiOracle(Arc<StatePolicy>),
    FofiPrior(Arc<StatePolicy>),
    Via(Arc<GridTables>),
    ViaFofi,
    Fixed(usize),
    Random,
}

struct Context<'a> {
    family: &'a ModelFamily,
    config: &'a StudyConfig,
    truth: Arc<PomdpModel>,
    prior_models: Vec<Arc<PomdpModel>>,
    grid_models: Vec<(f64, PomdpModel)>,
}

impl Context<'_> {
    fn prior(&self) -> Result<ThetaPosterior> {
        self.config
            .prior
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("prior-based variants need a prior".into()))?
            .posterior()
    }

    fn prepare(&self, v: &Variant) -> Result<Prepared> {
        let c = self.config;
        let nu = c.window_prior.as_deref();
        Ok(match *v {
            Variant::Pofi { lag } => Prepared::Pofi(Arc::new(solve_pofi_with_budget(
                self.family,
                c.true_theta,
                c.horizon,
                lag,
                nu,
                c.cell_budget,
            )?)),
            Variant::PofiPrior { lag } => Prepared::Pofi(Arc::new(solve_pofi_prior(
                self.family,
                &self.prior()?,
                c.horizon,
                lag,
                nu,
                c.cell_budget,
            )?)),
            Variant::FofiOracle => Prepared::FofiOracle(Arc::new(solve_fofi(self.family, c.true_theta, c.horizon)?)),
            Variant::FofiPrior => Prepared::FofiPrior(Arc::new(solve_fofi_prior(self.family, &self.prior()?, c.horizon)?)),
            Variant::Via { lag } => {
                let probe = &self.truth;
                crate::pofi::check_pofi_budget(probe.n_obs(), probe.n_controls(), lag, 1, c.cell_budget)?;
                Prepared::Via(Arc::new(GridTables::build(self.family, self.prior()?.grid(), lag, nu)?))
            }
            Variant::ViaFofi => Prepared::ViaFofi,
            Variant::Fixed { control } => {
                self.truth.check_control(control)?;
                Prepared::Fixed(control)
            }
            Variant::Random => Prepared::Random,
        })
    }

    fn controller(&self, p: &Prepared) -> Result<Box<dyn Controller>> {
        Ok(match p {
            Prepared::Pofi(policy) => Box::new(PofiController::new(Arc::clone(policy))),
            Prepared::FofiOracle(policy) => Box::new(FofiController::oracle(
                Arc::clone(policy),
                Arc::clone(&self.truth),
                self.config.true_theta,
            )),
            Prepared::FofiPrior(policy) => Box::new(FofiController::new(
                Arc::clone(policy),
                FilterBank::new(self.prior_models.clone(), self.prior()?)?,
            )),
            Prepared::Via(grid) => Box::new(ViaController::new(
                self.family,
                Arc::clone(grid),
                self.prior()?,
                self.config.via,
            )?),
            Prepared::ViaFofi => Box::new(ViaFofiController::new(self.family, self.prior()?, self.config.via)?),
            Prepared::Fixed(u) => Box::new(FixedController(*u)),
            Prepared::Random => Box::new(RandomController(self.truth.n_controls())),
        })
    }

    fn estimate(&self, traj: &Trajectory) -> Result<f64> {
        let (y, u) = (&traj.y, &traj.executed);
        match &self.config.estimator {
            Estimator::Grid { .. } => Ok(mle_grid_models(&self.grid_models, y, u)?.theta),
            Estimator::Refined { tol, .. } => {
                let coarse = mle_grid_models(&self.grid_models, y, u)?;
                let grid: Vec<f64> = self.grid_models.iter().map(|(g, _)| *g).collect();
                let i = grid.iter().position(|&g| g == coarse.theta).unwrap_or(0);
                let lo = grid[i.saturating_sub(1)];
                let hi = grid[(i + 1).min(grid.len() - 1)];
                if hi <= lo {
                    return Ok(coarse.theta);
                }
                let ll = |th: f64| {
                    self.family
                        .eval(th)
                        .and_then(|m| loglikelihood_model(&m, y, u))
                        .map_or(f64::NEG_INFINITY, |l| l.value)
                };
                let (th, val) = golden_max(ll, lo, hi, *tol);
                Ok(if val > coarse.loglik { th } else { coarse.theta })
            }
            Estimator::Em { theta0, options } => Ok(em_estimate(self.family, *theta0, y, u, *options)?.theta),
        }
    }
}

/// Simulate `reps` replications per variant and summarize the estimates.
/// Replication `r` of every variant uses seed `base_seed ^ r`.
pub fn run_study(family: &ModelFamily, config: &StudyConfig) -> Result<StudyResult> {
    config.check()?;
    let truth = Arc::new(family.eval(config.true_theta)?);
    let prior_models = match &config.prior {
        Some(p) => p
            .grid
            .iter()
            .map(|&th| family.eval(th).map(Arc::new))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let grid_models = match &config.estimator {
        Estimator::Grid { grid } | Estimator::Refined { grid, .. } => {
            let mut g = grid.clone();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g.iter()
                .map(|&th| family.eval(th).map(|m| (th, m)))
                .collect::<Result<Vec<_>>>()?
        }
        Estimator::Em { .. } => Vec::new(),
    };
    let ctx = Context {
        family,
        config,
        truth,
        prior_models,
        grid_models,
    };
    let mut rows = Vec::with_capacity(config.variants.len());
    let mut details = Vec::with_capacity(config.variants.len() * config.reps);
    for v in &config.variants {
        let label = v.label();
        let prepared = ctx.prepare(v)?;
        let estimates = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(config.base_seed, rep);
                let run = || -> Result<f64> {
                    let mut ctrl = ctx.controller(&prepared)?;
                    let traj = simulate_model(&ctx.truth, ctrl.as_mut(), config.horizon, seed)?;
                    ctx.estimate(&traj)
                };
                run().map_err(|e| Error::Replication {
                    variant: label.clone(),
                    rep,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        for (rep, &theta_hat) in estimates.iter().enumerate() {
            details.push(StudyDetail {
                variant: label.clone(),
                rep,
                seed: replication_seed(config.base_seed, rep),
                theta_hat,
            });
        }
        rows.push(summarize(&label, &estimates, config.true_theta));
    }
    Ok(StudyResult {
        config_hash: config.hash(family),
        rows,
        details,
    })
}
