//! Dynamic program for the Fisher Information of the latent chain, and its
//! runtime controller that acts on the most probable filtered state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ThetaPosterior;
use crate::model::{BeliefState, ModelFamily};
use crate::pofi::LONG_RUN_STRETCH;
use crate::tables::StateTables;

/// Per-time state-indexed controls and values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatePolicy {
    pub horizon: usize,
    pub n_states: usize,
    /// `controls[t][x]` for `t < horizon`.
    pub controls: Vec<Vec<usize>>,
    /// `values[t][x]` for `t <= horizon`; the last entry is all zeros.
    pub values: Vec<Vec<f64>>,
    pub margins: Vec<Vec<f64>>,
    pub long_run: Option<Vec<usize>>,
}

impl StatePolicy {
    /// Control for state `x` at time `t`.
    pub fn control(&self, t: usize, x: usize) -> usize {
        self.controls[t][x]
    }

    pub fn stationary_or_first(&self) -> &[usize] {
        self.long_run.as_deref().unwrap_or(&self.controls[0])
    }
}

/// `(d/dtheta log p(x'|x,u))^2` for every `x'`.
pub fn fofi_reward(family: &ModelFamily, theta: f64, x: usize, u: usize) -> Result<Vec<f64>> {
    let s = family.stencil(theta, None)?;
    s.center.check_state(x)?;
    s.center.check_control(u)?;
    let c = s.center.transition_row(u, x);
    let lo = s.lower.transition_row(u, x);
    let hi = s.upper.transition_row(u, x);
    Ok(c.iter()
        .zip(lo)
        .zip(hi)
        .map(|((&c, &lo), &hi)| {
            let sc = s.score(c, lo, hi);
            sc * sc
        })
        .collect())
}

pub fn solve_fofi(family: &ModelFamily, theta: f64, horizon: usize) -> Result<StatePolicy> {
    let tables = StateTables::build(&family.stencil(theta, None)?);
    solve_fofi_tables(&tables, horizon)
}

/// Posterior-averaged transition law and reward.
pub fn solve_fofi_prior(family: &ModelFamily, posterior: &ThetaPosterior, horizon: usize) -> Result<StatePolicy> {
    let parts = posterior
        .grid()
        .iter()
        .map(|&th| Ok(StateTables::build(&family.stencil(th, None)?)))
        .collect::<Result<Vec<_>>>()?;
    solve_fofi_tables(&StateTables::mixture(&parts, posterior.weights())?, horizon)
}

pub fn solve_fofi_tables(tables: &StateTables, horizon: usize) -> Result<StatePolicy> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let k = tables.n_states();
    let mut controls = vec![Vec::new(); horizon];
    let mut margins = vec![Vec::new(); horizon];
    let mut values = vec![Vec::new(); horizon + 1];
    values[horizon] = vec![0.0; k];
    for t in (0..horizon).rev() {
        let b = tables.backup(&values[t + 1], 1.0);
        values[t] = b.values;
        controls[t] = b.controls;
        margins[t] = b.margins;
    }
    let long_run = (0..horizon.saturating_sub(LONG_RUN_STRETCH))
        .find(|&t| (t..t + LONG_RUN_STRETCH).all(|s| controls[s] == controls[s + 1]))
        .map(|t| controls[t].clone());
    Ok(StatePolicy {
        horizon,
        n_states: k,
        controls,
        values,
        margins,
        long_run,
    })
}

/// Control of the most probable state (lowest index on ties).
pub fn fofi_runtime_control(policy: &StatePolicy, t: usize, belief: &BeliefState) -> Result<usize> {
    if t >= policy.horizon {
        return Err(Error::IndexOutOfRange {
            what: "time",
            index: t,
            limit: policy.horizon,
        });
    }
    if belief.len() != policy.n_states {
        return Err(Error::Shape("belief length differs from policy state count".into()));
    }
    Ok(policy.controls[t][belief.argmax()])
}
