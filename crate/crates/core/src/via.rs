//! Discounted value iteration over history windows with posterior-averaged
//! rewards, and the online controller that re-solves after every observation
//! starting from the previous fixed point.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::simulate::{simulate, Controller, FilterBank, Trajectory};
use crate::inference::ThetaPosterior;
use crate::model::{argmax_first, ModelFamily};
use crate::tables::{Backup, GridTables, StateTables, WindowTables};
use crate::window::WindowCodec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViaConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl Default for ViaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            epsilon: 1e-6,
            max_sweeps: 100_000,
        }
    }
}

impl ViaConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("discount {} must lie in [0, 1)", self.lambda)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.epsilon)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("sweep cap must be positive".into()));
        }
        Ok(())
    }
}

/// Values over full windows (or states) plus the history of the last solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ViaState {
    pub values: Vec<f64>,
    pub config: ViaConfig,
    /// Sweeps performed by the solve that produced `values`.
    pub sweeps: usize,
    /// Sup-norm change of every sweep of that solve.
    pub deltas: Vec<f64>,
}

impl ViaState {
    pub fn zeros(n: usize, config: ViaConfig) -> Self {
        Self {
            values: vec![0.0; n],
            config,
            sweeps: 0,
            deltas: Vec::new(),
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One Bellman backup over full windows; returns the new state and the
/// sup-norm change.
pub fn via_sweep(state: &ViaState, tables: &WindowTables) -> Result<(ViaState, f64)> {
    let lag = tables.lag();
    if state.values.len() != tables.codec().size(lag) {
        return Err(Error::Shape("value vector does not cover the full-window level".into()));
    }
    let b = tables.backup(lag, &state.values, state.config.lambda);
    let delta = sup_diff(&b.values, &state.values);
    let mut deltas = state.deltas.clone();
    deltas.push(delta);
    Ok((
        ViaState {
            values: b.values,
            config: state.config,
            sweeps: state.sweeps + 1,
            deltas,
        },
        delta,
    ))
}

/// [`via_sweep`] on the posterior mixture of per-parameter tables.
pub fn via_sweep_posterior(state: &ViaState, grid: &GridTables, posterior: &ThetaPosterior) -> Result<(ViaState, f64)> {
    via_sweep(state, &grid.mixture(posterior)?)
}

fn iterate(
    config: ViaConfig,
    start: Vec<f64>,
    mut backup: impl FnMut(&[f64]) -> Backup,
) -> Result<(ViaState, Vec<usize>)> {
    config.check()?;
    let mut values = start;
    let mut deltas = Vec::new();
    loop {
        let b = backup(&values);
        if let Some(i) = b.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective(i));
        }
        let delta = sup_diff(&b.values, &values);
        deltas.push(delta);
        values = b.values;
        if delta <= config.epsilon {
            let sweeps = deltas.len();
            return Ok((
                ViaState {
                    values,
                    config,
                    sweeps,
                    deltas,
                },
                b.controls,
            ));
        }
        if deltas.len() >= config.max_sweeps {
            return Err(Error::NoConvergence {
                sweeps: deltas.len(),
                delta,
            });
        }
    }
}

/// Fixed point over windows and the stationary window policy.
#[derive(Debug, Clone)]
pub struct ViaSolution {
    pub state: ViaState,
    /// `controls[span][window]` for spans `0..=lag`; the last entry is the
    /// greedy policy of the final sweep, shorter spans are backed up from it.
    pub controls: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

impl ViaSolution {
    pub fn control(&self, span: usize, window: usize) -> usize {
        self.controls[span][window]
    }

    pub fn lag(&self) -> usize {
        self.controls.len() - 1
    }
}

/// Iterate sweeps from `warm` (zeros when `None`) until the sup-norm change is
/// at most `epsilon`.
pub fn via_solve(tables: &WindowTables, config: ViaConfig, warm: Option<&[f64]>) -> Result<ViaSolution> {
    let lag = tables.lag();
    let size = tables.codec().size(lag);
    let start = match warm {
        Some(w) if w.len() != size => return Err(Error::Shape("warm start does not cover the full-window level".into())),
        Some(w) => w.to_vec(),
        None => vec![0.0; size],
    };
    let (state, full_controls) = iterate(config, start, |v| tables.backup(lag, v, config.lambda))?;
    let mut controls = vec![Vec::new(); lag + 1];
    let mut values = vec![Vec::new(); lag + 1];
    controls[lag] = full_controls;
    values[lag] = state.values.clone();
    for span in (0..lag).rev() {
        let b = tables.backup(span, &values[span + 1], config.lambda);
        controls[span] = b.controls;
        values[span] = b.values;
    }
    Ok(ViaSolution {
        state,
        controls,
        values,
    })
}

/// Posterior-averaged value iteration over latent states.
pub fn via_solve_states(tables: &StateTables, config: ViaConfig, warm: Option<&[f64]>) -> Result<(ViaState, Vec<usize>)> {
    let k = tables.n_states();
    let start = match warm {
        Some(w) if w.len() != k => return Err(Error::Shape("warm start length differs from state count".into())),
        Some(w) => w.to_vec(),
        None => vec![0.0; k],
    };
    iterate(config, start, |v| tables.backup(v, config.lambda))
}

/// One decision of an adaptive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaStep {
    pub t: usize,
    /// Chosen control.
    pub control: usize,
    /// Observation that followed; `None` until it arrives.
    pub observation: Option<usize>,
    pub sweeps: usize,
    /// Posterior after the observation (before it while pending).
    pub posterior: Vec<f64>,
    /// Window cells whose control differs from the previous solve.
    pub changed: usize,
    pub deltas: Vec<f64>,
}

/// Re-solves by warm-started value iteration under the current posterior
/// before every decision.
pub struct ViaController {
    grid: Arc<GridTables>,
    bank: FilterBank,
    config: ViaConfig,
    codec: WindowCodec,
    span: usize,
    index: usize,
    warm: Option<Vec<f64>>,
    last: Option<Vec<usize>>,
    log: Vec<ViaStep>,
}

impl ViaController {
    pub fn new(family: &ModelFamily, grid: Arc<GridTables>, prior: ThetaPosterior, config: ViaConfig) -> Result<Self> {
        config.check()?;
        if prior.grid() != grid.grid() {
            return Err(Error::Shape("posterior grid differs from table grid".into()));
        }
        let models = grid
            .grid()
            .iter()
            .map(|&th| family.eval(th).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let codec = *grid.tables()[0].codec();
        Ok(Self {
            bank: FilterBank::new(models, prior)?,
            grid,
            config,
            codec,
            span: 0,
            index: 0,
            warm: None,
            last: None,
            log: Vec::new(),
        })
    }

    pub fn log(&self) -> &[ViaStep] {
        &self.log
    }

    pub fn posterior(&self) -> &ThetaPosterior {
        self.bank.posterior()
    }

    pub fn into_log(self) -> Vec<ViaStep> {
        self.log
    }
}

fn count_changed(prev: Option<&Vec<usize>>, next: &[usize]) -> usize {
    prev.map_or(0, |p| p.iter().zip(next).filter(|(a, b)| a != b).count())
}

impl Controller for ViaController {
    fn start(&mut self, y0: usize) -> Result<()> {
        crate::model::check_index("observation", y0, self.codec.n_obs())?;
        self.bank.start(y0)?;
        self.span = 0;
        self.index = y0;
        Ok(())
    }

    fn choose(&mut self, t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        let tables = self.grid.mixture(self.bank.posterior())?;
        let sol = via_solve(&tables, self.config, self.warm.as_deref())?;
        let control = sol.control(self.span, self.index);
        let full = &sol.controls[sol.lag()];
        self.log.push(ViaStep {
            t,
            control,
            observation: None,
            sweeps: sol.state.sweeps,
            posterior: self.bank.posterior().weights().to_vec(),
            changed: count_changed(self.last.as_ref(), full),
            deltas: sol.state.deltas.clone(),
        });
        self.last = Some(full.clone());
        self.warm = Some(sol.state.values);
        Ok(control)
    }

    fn observe(&mut self, u: usize, y: usize) -> Result<()> {
        crate::model::check_index("observation", y, self.codec.n_obs())?;
        self.bank.observe(u, y)?;
        (self.span, self.index) = self.codec.shift(self.span, self.index, u, y);
        if let Some(step) = self.log.last_mut() {
            step.observation = Some(y);
            step.posterior = self.bank.posterior().weights().to_vec();
        }
        Ok(())
    }
}

/// State-valued counterpart: value iteration on posterior-mixed state tables,
/// acting on the most probable state of the posterior-mixed belief.
pub struct ViaFofiController {
    parts: Vec<StateTables>,
    bank: FilterBank,
    config: ViaConfig,
    warm: Option<Vec<f64>>,
    last: Option<Vec<usize>>,
    log: Vec<ViaStep>,
}

impl ViaFofiController {
    pub fn new(family: &ModelFamily, prior: ThetaPosterior, config: ViaConfig) -> Result<Self> {
        config.check()?;
        let mut parts = Vec::with_capacity(prior.len());
        let mut models = Vec::with_capacity(prior.len());
        for &th in prior.grid() {
            let s = family.stencil(th, None)?;
            parts.push(StateTables::build(&s));
            models.push(Arc::clone(&s.center));
        }
        Ok(Self {
            parts,
            bank: FilterBank::new(models, prior)?,
            config,
            warm: None,
            last: None,
            log: Vec::new(),
        })
    }

    pub fn log(&self) -> &[ViaStep] {
        &self.log
    }

    pub fn into_log(self) -> Vec<ViaStep> {
        self.log
    }
}

impl Controller for ViaFofiController {
    fn start(&mut self, y0: usize) -> Result<()> {
        self.bank.start(y0)
    }

    fn choose(&mut self, t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        let tables = StateTables::mixture(&self.parts, self.bank.posterior().weights())?;
        let (state, controls) = via_solve_states(&tables, self.config, self.warm.as_deref())?;
        let control = controls[argmax_first(&self.bank.mixed_belief())];
        self.log.push(ViaStep {
            t,
            control,
            observation: None,
            sweeps: state.sweeps,
            posterior: self.bank.posterior().weights().to_vec(),
            changed: count_changed(self.last.as_ref(), &controls),
            deltas: state.deltas,
        });
        self.last = Some(controls);
        self.warm = Some(state.values);
        Ok(control)
    }

    fn observe(&mut self, u: usize, y: usize) -> Result<()> {
        self.bank.observe(u, y)?;
        if let Some(step) = self.log.last_mut() {
            step.observation = Some(y);
            step.posterior = self.bank.posterior().weights().to_vec();
        }
        Ok(())
    }
}

/// Trajectory of an adaptive run together with its decision log.
#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub trajectory: Trajectory,
    pub steps: Vec<ViaStep>,
    pub posterior: ThetaPosterior,
}

/// Simulate the system at `true_theta` under the warm-started window
/// controller. `grid` must be built over `prior`'s grid.
pub fn adaptive_run(
    family: &ModelFamily,
    grid: Arc<GridTables>,
    prior: ThetaPosterior,
    horizon: usize,
    config: ViaConfig,
    true_theta: f64,
    seed: u64,
) -> Result<AdaptiveRun> {
    let mut ctrl = ViaController::new(family, grid, prior, config)?;
    let trajectory = simulate(family, true_theta, &mut ctrl, horizon, seed)?;
    let posterior = ctrl.posterior().clone();
    Ok(AdaptiveRun {
        trajectory,
        steps: ctrl.into_log(),
        posterior,
    })
}
