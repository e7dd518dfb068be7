//! Finite-horizon dynamic program over lag-`m` history windows maximizing the
//! approximate observed-process Fisher Information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_obs, window_belief, ThetaPosterior};
use crate::model::{ModelFamily, PomdpModel};
use crate::tables::{GridTables, WindowTables};
use crate::window::{HistoryWindow, WindowCodec};

/// Default cap on `L^(m+1) l^(m+1) T`, the number of (window, control, time) cells.
pub const DEFAULT_CELL_BUDGET: f64 = 1e8;

const COST_FORMULA: &str = "O(T L^(m+2) l^(m+1))";

/// Refuse problems whose table would exceed `budget` cells.
pub fn check_pofi_budget(n_obs: usize, n_ctrl: usize, lag: usize, horizon: usize, budget: f64) -> Result<()> {
    let e = (lag + 1) as f64;
    let required = (n_obs as f64).powf(e) * (n_ctrl as f64).powf(e) * horizon as f64;
    if required > budget {
        return Err(Error::BudgetExceeded {
            what: "lag-m policy table",
            required,
            budget,
            formula: COST_FORMULA,
        });
    }
    Ok(())
}

/// Per-time lookup tables from encoded windows to controls, with the
/// Fisher-Information-to-go values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PofiPolicy {
    pub lag: usize,
    pub horizon: usize,
    pub n_obs: usize,
    pub n_ctrl: usize,
    /// `controls[t][window]` for `t < horizon`.
    pub controls: Vec<Vec<usize>>,
    /// `values[t][window]` for `t <= horizon`; the last entry is all zeros.
    pub values: Vec<Vec<f64>>,
    /// Gap between the chosen control's value and the runner-up.
    pub margins: Vec<Vec<f64>>,
    /// `sum_y0 p(y0) values[0][y0]`.
    pub root_value: f64,
    pub long_run: Option<Vec<usize>>,
}

impl PofiPolicy {
    pub fn codec(&self) -> WindowCodec {
        WindowCodec::new(self.n_obs, self.n_ctrl, self.lag).expect("codec validated at solve time")
    }

    /// Span of the window consulted at time `t`.
    pub fn span_at(&self, t: usize) -> usize {
        t.min(self.lag)
    }

    /// The stationary table extracted at solve time, or the last full-window table.
    pub fn stationary_or_last(&self) -> &[usize] {
        self.long_run
            .as_deref()
            .unwrap_or_else(|| &self.controls[self.horizon.saturating_sub(1)])
    }
}

/// Solve at a single parameter value. `prior` is the state law assumed at
/// every window start; `None` uses the model's initial state.
pub fn solve_pofi(
    family: &ModelFamily,
    theta: f64,
    horizon: usize,
    lag: usize,
    prior: Option<&[f64]>,
) -> Result<PofiPolicy> {
    solve_pofi_with_budget(family, theta, horizon, lag, prior, DEFAULT_CELL_BUDGET)
}

pub fn solve_pofi_with_budget(
    family: &ModelFamily,
    theta: f64,
    horizon: usize,
    lag: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<PofiPolicy> {
    check_horizon(horizon, lag)?;
    let probe = family.eval(theta)?;
    check_pofi_budget(probe.n_obs(), probe.n_controls(), lag, horizon, budget)?;
    let tables = WindowTables::for_theta(family, theta, lag, prior)?;
    solve_pofi_tables(&tables, horizon)
}

/// Prior-averaged design: rewards and predictives are averaged over the
/// posterior weights before the dynamic program is run.
pub fn solve_pofi_prior(
    family: &ModelFamily,
    posterior: &ThetaPosterior,
    horizon: usize,
    lag: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<PofiPolicy> {
    check_horizon(horizon, lag)?;
    let probe = family.eval(posterior.grid()[0])?;
    check_pofi_budget(probe.n_obs(), probe.n_controls(), lag, horizon, budget)?;
    let grid = GridTables::build(family, posterior.grid(), lag, prior)?;
    solve_pofi_tables(&grid.mixture(posterior)?, horizon)
}

fn check_horizon(horizon: usize, lag: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if lag >= horizon {
        return Err(Error::InvalidArgument(format!("lag {lag} must be below horizon {horizon}")));
    }
    Ok(())
}

/// Backward induction on precomputed window tables.
pub fn solve_pofi_tables(tables: &WindowTables, horizon: usize) -> Result<PofiPolicy> {
    check_horizon(horizon, tables.lag())?;
    let codec = *tables.codec();
    let lag = codec.lag();
    let mut controls = vec![Vec::new(); horizon];
    let mut values = vec![Vec::new(); horizon + 1];
    let mut margins = vec![Vec::new(); horizon];
    values[horizon] = vec![0.0; codec.size(horizon.min(lag))];
    for t in (0..horizon).rev() {
        let b = tables.backup(t.min(lag), &values[t + 1], 1.0);
        if let Some(i) = b.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective(i));
        }
        values[t] = b.values;
        controls[t] = b.controls;
        margins[t] = b.margins;
    }
    let root_value = tables
        .y0_prob()
        .iter()
        .zip(&values[0])
        .map(|(p, v)| p * v)
        .sum();
    let mut policy = PofiPolicy {
        lag,
        horizon,
        n_obs: codec.n_obs(),
        n_ctrl: codec.n_ctrl(),
        controls,
        values,
        margins,
        root_value,
        long_run: None,
    };
    if let LongRun::Stationary { table, .. } = extract_long_run(&policy) {
        policy.long_run = Some(table);
    }
    Ok(policy)
}

/// Outcome of looking for a time-invariant table away from the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum LongRun {
    /// Tables at `start..start + 3` and the one after agree.
    Stationary { start: usize, table: Vec<usize> },
    /// No stable stretch; for each adjacent pair `(t, t+1)` that differs, the
    /// first window where they disagree.
    Diverged { disagreements: Vec<(usize, usize)> },
}

/// Number of consecutive agreeing transitions required for a stationary table.
pub const LONG_RUN_STRETCH: usize = 3;

pub fn extract_long_run(policy: &PofiPolicy) -> LongRun {
    let first_full = policy.lag;
    let last = policy.horizon;
    // agree[t] says tables t and t+1 are identical
    let agree: Vec<Option<usize>> = (first_full..last.saturating_sub(1))
        .map(|t| {
            policy.controls[t]
                .iter()
                .zip(&policy.controls[t + 1])
                .position(|(a, b)| a != b)
        })
        .collect();
    let mut run = 0;
    for (i, d) in agree.iter().enumerate() {
        if d.is_none() {
            run += 1;
            if run == LONG_RUN_STRETCH {
                let start = first_full + i + 1 - LONG_RUN_STRETCH;
                return LongRun::Stationary {
                    start,
                    table: policy.controls[start].clone(),
                };
            }
        } else {
            run = 0;
        }
    }
    LongRun::Diverged {
        disagreements: agree
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|w| (first_full + i, w)))
            .collect(),
    }
}

/// Control prescribed at time `t` for `window`, whose span must be `min(t, m)`.
pub fn pofi_lookup(policy: &PofiPolicy, t: usize, window: &HistoryWindow) -> Result<usize> {
    if t >= policy.horizon {
        return Err(Error::IndexOutOfRange {
            what: "time",
            index: t,
            limit: policy.horizon,
        });
    }
    let span = policy.span_at(t);
    if window.span() != span {
        return Err(Error::InvalidArgument(format!(
            "window at time {t} must hold {span} controls, got {}",
            window.span()
        )));
    }
    let idx = policy.codec().encode(window)?;
    Ok(policy.controls[t][idx])
}

/// Squared finite-difference score of `log p(y' | window, u_t)` for every `y'`.
pub fn pofi_reward(
    family: &ModelFamily,
    theta: f64,
    window: &HistoryWindow,
    u_t: usize,
    prior: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let s = family.stencil(theta, None)?;
    let nu = prior.map_or_else(|| s.center.initial_state().to_vec(), <[f64]>::to_vec);
    let c = crate::inference::window_predictive(&s.center, window, u_t, &nu)?;
    let lo = predictive_or_zero(&s.lower, window, u_t, &nu);
    let hi = predictive_or_zero(&s.upper, window, u_t, &nu);
    Ok(c.iter()
        .zip(&lo)
        .zip(&hi)
        .map(|((&c, &lo), &hi)| {
            let sc = s.score(c, lo, hi);
            sc * sc
        })
        .collect())
}

/// Windowed predictive at a neighbouring parameter; a window impossible there
/// contributes zero probability (and hence zero score).
fn predictive_or_zero(model: &PomdpModel, window: &HistoryWindow, u: usize, prior: &[f64]) -> Vec<f64> {
    window_belief(model, window, prior)
        .map(|b| predict_obs(model, &b, u))
        .unwrap_or_else(|| vec![0.0; model.n_obs()])
}
