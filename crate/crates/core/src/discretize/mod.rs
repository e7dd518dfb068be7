//! Euler time-stepping and Gaussian box probabilities that turn a controlled
//! SDE into a finite model, plus builders for the example families.

mod builders;

pub use builders::{
    adversarial, morris_lecar, pcr, six_state, six_state_latent, six_state_raw, MorrisLecarParam, MorrisLecarParams,
    PcrParams, ADVERSARIAL_RANDOMIZER, PCR_PRIOR_GRID,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlSet, EmissionDeps, ModelParts, PomdpModel};

/// Raw cell masses at or below this make a row unusable.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// One equidistant axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo < hi) || cells < 2 {
            return Err(Error::InvalidArgument(format!(
                "axis needs lo < hi and at least two cells (got [{lo}, {hi}] with {cells})"
            )));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Cell containing `v`, clamped to the axis.
    pub fn cell_of(&self, v: f64) -> usize {
        let i = ((v - self.lo) / self.width()).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.cells - 1)
        }
    }
}

/// Product of equidistant axes; flat cell index is row-major with the first
/// axis varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lo, hi, cells)?])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::width).product()
    }

    pub fn midpoint(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            *slot = axis.midpoint(index % axis.cells);
            index /= axis.cells;
        }
        out
    }

    pub fn midpoints(&self) -> Vec<Vec<f64>> {
        (0..self.n_cells()).map(|i| self.midpoint(i)).collect()
    }

    /// Flat index of the cell containing `point` (clamped).
    pub fn cell_of(&self, point: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(point)
            .fold(0, |acc, (a, &v)| acc * a.cells + a.cell_of(v))
    }
}

type Drift = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;
type ObsMap = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A controlled SDE `dx = f(x, u) dt + Sigma1^(1/2) dW` at a fixed parameter
/// value, observed as `y = g(x) + N(0, Sigma2)`.
#[derive(Clone)]
pub struct SdeSpec {
    /// `f(x, u)` with the parameter already bound.
    pub drift: Arc<Drift>,
    pub sigma1: DMatrix<f64>,
    pub dt: f64,
    pub obs_map: Arc<ObsMap>,
    pub sigma2: DMatrix<f64>,
    pub controls: Vec<f64>,
}

impl std::fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSpec")
            .field("sigma1", &self.sigma1)
            .field("dt", &self.dt)
            .field("sigma2", &self.sigma2)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

/// Log-density evaluator for a fixed Gaussian covariance.
struct Gaussian {
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    fn new(cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::Shape(format!("{what} covariance must be square")));
        }
        if (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("{what} covariance is not symmetric")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument(format!("{what} covariance is not positive definite")))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let k = cov.nrows() as f64;
        Ok(Self {
            chol_l: l,
            log_norm: -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    fn log_density(&self, point: &[f64], mean: &[f64]) -> f64 {
        let d = DVector::from_iterator(point.len(), point.iter().zip(mean).map(|(p, m)| p - m));
        let z = self
            .chol_l
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Box probabilities of a Gaussian row: density at each target midpoint times
/// the cell volume, normalized. `None` when every raw mass underflows.
fn gaussian_row(gauss: &Gaussian, mean: &[f64], targets: &[Vec<f64>], volume: f64) -> Option<Vec<f64>> {
    let logs: Vec<f64> = targets.iter().map(|p| gauss.log_density(p, mean)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max + volume.ln() > UNDERFLOW_FLOOR.ln()) {
        return None;
    }
    let mut row: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
    Some(row)
}

/// Transition tensor `(u, from, to)` from Euler steps of the SDE.
pub fn discretize_transition(spec: &SdeSpec, grid: &GridSpec) -> Result<Vec<f64>> {
    if !(spec.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {} must be positive", spec.dt)));
    }
    if spec.sigma1.nrows() != grid.dim() {
        return Err(Error::Shape("state noise dimension differs from grid".into()));
    }
    let gauss = Gaussian::new(&(spec.sigma1.clone() * spec.dt), "state noise")?;
    let mids = grid.midpoints();
    let k = mids.len();
    let volume = grid.cell_volume();
    let rows: Vec<Result<Vec<f64>>> = (0..spec.controls.len() * k)
        .into_par_iter()
        .map(|r| {
            let (ui, from) = (r / k, r % k);
            let f = (spec.drift)(&mids[from], spec.controls[ui]);
            let mean: Vec<f64> = mids[from].iter().zip(&f).map(|(x, d)| x + spec.dt * d).collect();
            gaussian_row(&gauss, &mean, &mids, volume).ok_or(Error::DiscretizationUnderflow {
                cell: from,
                control: ui,
                mean,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(spec.controls.len() * k * k);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Emission matrix `(state cell, observation cell)`.
pub fn discretize_emission(
    obs_map: &ObsMap,
    sigma2: &DMatrix<f64>,
    state_grid: &GridSpec,
    obs_grid: &GridSpec,
) -> Result<Vec<f64>> {
    if sigma2.nrows() != obs_grid.dim() {
        return Err(Error::Shape("observation noise dimension differs from observation grid".into()));
    }
    let gauss = Gaussian::new(sigma2, "observation noise")?;
    let targets = obs_grid.midpoints();
    let volume = obs_grid.cell_volume();
    let mut out = Vec::with_capacity(state_grid.n_cells() * targets.len());
    for (i, mid) in state_grid.midpoints().iter().enumerate() {
        let center = obs_map(mid);
        let row = gaussian_row(&gauss, &center, &targets, volume).ok_or(Error::EmissionUnderflow { cell: i, center })?;
        out.extend(row);
    }
    Ok(out)
}

/// Standard-form model from a discretized SDE.
pub fn discretize_model(
    spec: &SdeSpec,
    state_grid: &GridSpec,
    obs_grid: &GridSpec,
    initial_state: Vec<f64>,
) -> Result<PomdpModel> {
    let transition = discretize_transition(spec, state_grid)?;
    let emission = discretize_emission(spec.obs_map.as_ref(), &spec.sigma2, state_grid, obs_grid)?;
    PomdpModel::from_parts(ModelParts {
        n_states: state_grid.n_cells(),
        n_obs: obs_grid.n_cells(),
        controls: ControlSet::from_values(&spec.controls)?,
        transition,
        emission_deps: EmissionDeps::STANDARD,
        emission,
        initial_state,
        initial_obs: vec![1.0 / obs_grid.n_cells() as f64; obs_grid.n_cells()],
        randomizer: None,
    })
}
