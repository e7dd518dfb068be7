//! Brute-force references for tiny instances: Fisher Information of a policy
//! by enumerating every observation sequence, and the best adaptive policy by
//! exhaustive search over the history tree.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::inference::{predict_obs, window_belief};
use crate::model::{ModelFamily, ModelStencil, PomdpModel, PROB_FLOOR};
use crate::pofi::PofiPolicy;
use crate::tables::TIE_TOL;
use crate::window::{HistoryWindow, WindowCodec};

/// Default cap on `L^(T+1) l^T` enumerated histories.
pub const DEFAULT_ENUMERATION_BUDGET: f64 = 1e7;

/// Maps a full history (observations `y_0..=y_t`, executed controls
/// `u_0..u_{t-1}`) to a chosen control.
pub trait HistoryPolicy: Sync {
    fn control(&self, t: usize, obs: &[usize], ctrl: &[usize]) -> usize;
}

impl HistoryPolicy for PofiPolicy {
    fn control(&self, t: usize, obs: &[usize], ctrl: &[usize]) -> usize {
        let w = HistoryWindow::tail_of(obs, ctrl, self.lag).expect("history lengths are consistent");
        let idx = self.codec().encode(&w).expect("history entries are in range");
        if t < self.horizon {
            self.controls[t][idx]
        } else {
            self.stationary_or_last()[idx]
        }
    }
}

impl<F: Fn(usize, &[usize], &[usize]) -> usize + Sync> HistoryPolicy for F {
    fn control(&self, t: usize, obs: &[usize], ctrl: &[usize]) -> usize {
        self(t, obs, ctrl)
    }
}

/// Open-loop control sequence.
#[derive(Debug, Clone)]
pub struct OpenLoop(pub Vec<usize>);

impl HistoryPolicy for OpenLoop {
    fn control(&self, t: usize, _obs: &[usize], _ctrl: &[usize]) -> usize {
        self.0[t]
    }
}

/// Explicit control for every full history up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTable {
    codec: WindowCodec,
    /// `tables[t][encoded history of span t]`
    tables: Vec<Vec<usize>>,
}

impl HistoryTable {
    pub fn constant(n_obs: usize, n_ctrl: usize, horizon: usize, control: usize) -> Result<Self> {
        let codec = WindowCodec::new(n_obs, n_ctrl, horizon.saturating_sub(1))?;
        Ok(Self {
            tables: (0..horizon).map(|t| vec![control; codec.size(t)]).collect(),
            codec,
        })
    }

    /// Independent uniformly random control for every history.
    pub fn random(n_obs: usize, n_ctrl: usize, horizon: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let mut table = Self::constant(n_obs, n_ctrl, horizon, 0)?;
        for t in table.tables.iter_mut() {
            for c in t.iter_mut() {
                *c = rng.random_range(0..n_ctrl);
            }
        }
        Ok(table)
    }

    pub fn set(&mut self, t: usize, obs: &[usize], ctrl: &[usize], control: usize) {
        let idx = self.index(obs, ctrl);
        self.tables[t][idx] = control;
    }

    fn index(&self, obs: &[usize], ctrl: &[usize]) -> usize {
        let w = HistoryWindow::new(obs.to_vec(), ctrl.to_vec()).expect("history lengths are consistent");
        self.codec.encode(&w).expect("history entries are in range")
    }

    pub fn horizon(&self) -> usize {
        self.tables.len()
    }
}

impl HistoryPolicy for HistoryTable {
    fn control(&self, t: usize, obs: &[usize], ctrl: &[usize]) -> usize {
        self.tables[t][self.index(obs, ctrl)]
    }
}

pub fn check_enumeration_budget(n_obs: usize, n_ctrl: usize, horizon: usize, budget: f64) -> Result<()> {
    let required = (n_obs as f64).powi(horizon as i32 + 1) * (n_ctrl as f64).powi(horizon as i32);
    if required > budget {
        return Err(Error::BudgetExceeded {
            what: "history enumeration",
            required,
            budget,
            formula: "L^(T+1) l^T",
        });
    }
    Ok(())
}

/// Predictives at the three stencil points given the history (or its
/// trailing window when `lag` is set). Models for which the history is
/// impossible give zeros.
struct Predictor<'a> {
    stencil: &'a ModelStencil,
    prior: &'a [f64],
    lag: usize,
}

impl Predictor<'_> {
    fn at(&self, model: &PomdpModel, obs: &[usize], ctrl: &[usize], u: usize) -> Vec<f64> {
        let w = HistoryWindow::tail_of(obs, ctrl, self.lag).expect("consistent history");
        window_belief(model, &w, self.prior)
            .map(|b| predict_obs(model, &b, u))
            .unwrap_or_else(|| vec![0.0; model.n_obs()])
    }

    fn triple(&self, obs: &[usize], ctrl: &[usize], u: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            self.at(&self.stencil.center, obs, ctrl, u),
            self.at(&self.stencil.lower, obs, ctrl, u),
            self.at(&self.stencil.upper, obs, ctrl, u),
        )
    }

    fn y0_law(&self) -> Vec<f64> {
        let m = &self.stencil.center;
        (0..m.n_obs())
            .map(|y| self.prior.iter().enumerate().map(|(x, p)| p * m.emission_std(x, y)).sum())
            .collect()
    }
}

fn setup(family: &ModelFamily, theta: f64, horizon: usize, budget: f64) -> Result<ModelStencil> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let s = family.stencil(theta, None)?;
    s.center.require_standard()?;
    check_enumeration_budget(s.center.n_obs(), s.center.n_controls(), horizon, budget)?;
    Ok(s)
}

/// Fisher Information of `y_{0:T}` under `policy`, by enumerating every
/// observation sequence and summing squared scores of the exact predictives.
pub fn exact_fi(
    family: &ModelFamily,
    theta: f64,
    policy: &dyn HistoryPolicy,
    horizon: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<f64> {
    approx_fi(family, theta, policy, horizon, horizon, prior, budget)
}

/// As [`exact_fi`] but every predictive (including the one weighting the
/// paths) conditions only on the last `lag + 1` observations, starting from
/// `prior` at the window start. This is the value the lag-`m` program assigns
/// to `policy`; with `lag >= T - 1` it equals [`exact_fi`].
pub fn approx_fi(
    family: &ModelFamily,
    theta: f64,
    policy: &dyn HistoryPolicy,
    horizon: usize,
    lag: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<f64> {
    let s = setup(family, theta, horizon, budget)?;
    let nu = prior.map_or_else(|| s.center.initial_state().to_vec(), <[f64]>::to_vec);
    let pred = Predictor {
        stencil: &s,
        prior: &nu,
        lag,
    };
    let mut total = 0.0;
    for (y0, p0) in pred.y0_law().into_iter().enumerate() {
        if p0 <= PROB_FLOOR {
            continue;
        }
        total += p0 * evaluate(&pred, policy, horizon, &mut vec![y0], &mut Vec::new());
    }
    Ok(total)
}

fn evaluate(
    pred: &Predictor<'_>,
    policy: &dyn HistoryPolicy,
    horizon: usize,
    obs: &mut Vec<usize>,
    ctrl: &mut Vec<usize>,
) -> f64 {
    let t = ctrl.len();
    if t == horizon {
        return 0.0;
    }
    let model = &pred.stencil.center;
    let w = policy.control(t, obs, ctrl);
    let mut total = 0.0;
    for u in 0..model.n_controls() {
        let q = model.randomizer_prob(w, u);
        if q == 0.0 {
            continue;
        }
        let (c, lo, hi) = pred.triple(obs, ctrl, u);
        for (y, &py) in c.iter().enumerate() {
            if py <= 0.0 {
                continue;
            }
            let sc = pred.stencil.score(py, lo[y], hi[y]);
            obs.push(y);
            ctrl.push(u);
            let cont = evaluate(pred, policy, horizon, obs, ctrl);
            obs.pop();
            ctrl.pop();
            total += q * py * (sc * sc + cont);
        }
    }
    total
}

/// Best deterministic adaptive policy over full histories and its Fisher
/// Information, by exhaustive expectimax over the history tree (each
/// history's control is optimized independently, which covers every
/// policy).
pub fn brute_force_policy(
    family: &ModelFamily,
    theta: f64,
    horizon: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<(HistoryTable, f64)> {
    let s = setup(family, theta, horizon, budget)?;
    let nu = prior.map_or_else(|| s.center.initial_state().to_vec(), <[f64]>::to_vec);
    let pred = Predictor {
        stencil: &s,
        prior: &nu,
        lag: horizon,
    };
    let mut table = HistoryTable::constant(s.center.n_obs(), s.center.n_controls(), horizon, 0)?;
    let mut total = 0.0;
    for (y0, p0) in pred.y0_law().into_iter().enumerate() {
        if p0 <= PROB_FLOOR {
            continue;
        }
        total += p0 * maximize(&pred, horizon, &mut vec![y0], &mut Vec::new(), &mut table);
    }
    Ok((table, total))
}

fn maximize(
    pred: &Predictor<'_>,
    horizon: usize,
    obs: &mut Vec<usize>,
    ctrl: &mut Vec<usize>,
    table: &mut HistoryTable,
) -> f64 {
    let t = ctrl.len();
    if t == horizon {
        return 0.0;
    }
    let model = &pred.stencil.center;
    let l = model.n_controls();
    let mut by_exec = vec![0.0; l];
    for (u, slot) in by_exec.iter_mut().enumerate() {
        let (c, lo, hi) = pred.triple(obs, ctrl, u);
        for (y, &py) in c.iter().enumerate() {
            if py <= 0.0 {
                continue;
            }
            let sc = pred.stencil.score(py, lo[y], hi[y]);
            obs.push(y);
            ctrl.push(u);
            let cont = maximize(pred, horizon, obs, ctrl, table);
            obs.pop();
            ctrl.pop();
            *slot += py * (sc * sc + cont);
        }
    }
    let q = |w: usize| -> f64 { (0..l).map(|u| model.randomizer_prob(w, u) * by_exec[u]).sum() };
    let (mut best, mut best_w) = (q(0), 0);
    for w in 1..l {
        let v = q(w);
        if v > best + TIE_TOL * best.abs().max(1.0) {
            best = v;
            best_w = w;
        }
    }
    table.set(t, obs, ctrl, best_w);
    best
}

/// Maximum of [`exact_fi`] over literally every history table; only for the
/// smallest instances (`l^(number of histories)` evaluations).
pub fn enumerate_policies(
    family: &ModelFamily,
    theta: f64,
    horizon: usize,
    prior: Option<&[f64]>,
    budget: f64,
) -> Result<f64> {
    let m = family.eval(theta)?;
    let (n_obs, l) = (m.n_obs(), m.n_controls());
    let codec = WindowCodec::new(n_obs, l, horizon.saturating_sub(1))?;
    let sizes: Vec<usize> = (0..horizon).map(|t| codec.size(t)).collect();
    let cells: usize = sizes.iter().sum();
    let count = (l as f64).powi(cells as i32);
    if count > budget {
        return Err(Error::BudgetExceeded {
            what: "policy enumeration",
            required: count,
            budget,
            formula: "l^(sum_t L^(t+1) l^t)",
        });
    }
    let mut table = HistoryTable::constant(n_obs, l, horizon, 0)?;
    let mut best = f64::NEG_INFINITY;
    for code in 0..count as u64 {
        let mut c = code;
        for t in table.tables.iter_mut() {
            for slot in t.iter_mut() {
                *slot = (c % l as u64) as usize;
                c /= l as u64;
            }
        }
        best = best.max(exact_fi(family, theta, &table, horizon, prior, f64::INFINITY)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::simulate::rng_for;
    use crate::model::{ControlSet, ThetaDomain};
    use crate::pofi::solve_pofi;

    fn toy() -> ModelFamily {
        ModelFamily::new("toy", ThetaDomain::new(0.05, 0.95).unwrap(), |th| {
            PomdpModel::standard(
                ControlSet::indexed(2).unwrap(),
                &[
                    vec![vec![th, 1.0 - th], vec![0.4, 0.6]],
                    vec![vec![0.5, 0.5], vec![1.0 - th, th]],
                ],
                &[vec![0.85, 0.15], vec![0.25, 0.75]],
                vec![0.5, 0.5],
            )
        })
    }

    #[test]
    fn flat_family_has_zero_information() {
        let m = toy().eval(0.5).unwrap();
        let flat = ModelFamily::constant("flat", ThetaDomain::new(0.0, 1.0).unwrap(), m);
        let v = exact_fi(&flat, 0.5, &OpenLoop(vec![0, 1, 0]), 3, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn one_step_unrolled() {
        let f = toy();
        let s = f.stencil(0.3, None).unwrap();
        let policy = |_: usize, obs: &[usize], _: &[usize]| obs[0];
        let v = exact_fi(&f, 0.3, &policy, 1, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let mut hand = 0.0;
        for y0 in 0..2 {
            let p0: f64 = (0..2).map(|x| 0.5 * s.center.emission_std(x, y0)).sum();
            let w = HistoryWindow::single(y0);
            let nu = s.center.initial_state().to_vec();
            let c = crate::inference::window_predictive(&s.center, &w, y0, &nu).unwrap();
            let lo = crate::inference::window_predictive(&s.lower, &w, y0, &nu).unwrap();
            let hi = crate::inference::window_predictive(&s.upper, &w, y0, &nu).unwrap();
            for y1 in 0..2 {
                let sc = (hi[y1].ln() - lo[y1].ln()) / s.width;
                hand += p0 * c[y1] * sc * sc;
            }
        }
        assert!((v - hand).abs() < 1e-14);
    }

    #[test]
    fn full_lag_solver_matches_both_oracles() {
        let f = toy();
        for t in 1..=3 {
            let p = solve_pofi(&f, 0.3, t, t - 1, None).unwrap();
            let own = exact_fi(&f, 0.3, &p, t, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let (table, best) = brute_force_policy(&f, 0.3, t, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!((p.root_value - own).abs() < 1e-9, "T={t}");
            assert!((best - own).abs() < 1e-9, "T={t}");
            let again = exact_fi(&f, 0.3, &table, t, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!((again - best).abs() < 1e-12);
        }
    }

    #[test]
    fn expectimax_equals_literal_enumeration() {
        let f = toy();
        for t in 1..=2 {
            let (_, best) = brute_force_policy(&f, 0.6, t, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let lit = enumerate_policies(&f, 0.6, t, None, 1e4).unwrap();
            assert!((best - lit).abs() < 1e-12);
        }
    }

    #[test]
    fn random_policies_never_beat_the_optimum() {
        let f = toy();
        let (_, best) = brute_force_policy(&f, 0.3, 3, None, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let mut rng = rng_for(17);
        for _ in 0..50 {
            let r = HistoryTable::random(2, 2, 3, &mut rng).unwrap();
            assert!(exact_fi(&f, 0.3, &r, 3, None, DEFAULT_ENUMERATION_BUDGET).unwrap() <= best + 1e-9);
        }
    }

    #[test]
    fn budget_guard() {
        let e = exact_fi(&toy(), 0.3, &OpenLoop(vec![0; 30]), 30, None, DEFAULT_ENUMERATION_BUDGET).unwrap_err();
        assert!(matches!(e, Error::BudgetExceeded { .. }));
    }
}
