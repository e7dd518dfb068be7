//! Time-invariant predictive and reward tables over history windows.
//!
//! For a fixed parameter value the windowed predictive `p(y' | window, u)` and
//! the expected squared score `sum_y' p(y') C(window, u, y')` do not depend on
//! the time index, so they are computed once for every window of every span
//! `0..=lag` and shared by the finite-horizon program, the prior-averaged
//! program and value iteration. Tables for several parameter values are
//! combined into posterior-weighted mixtures.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelFamily, ModelStencil, PomdpModel, PROB_FLOOR};
use crate::inference::ThetaPosterior;
use crate::window::WindowCodec;

/// Tables for all windows holding `span` controls.
#[derive(Debug, Clone)]
pub struct WindowLevel {
    pub span: usize,
    /// `p(y' | window, u)`, laid out `[window][u][y']`.
    pub pred: Vec<f64>,
    /// Expected squared score, laid out `[window][u]`.
    pub exp_reward: Vec<f64>,
    /// Window has positive probability under the prior.
    pub feasible: Vec<bool>,
}

/// Window tables for one parameter value or a posterior mixture of several.
#[derive(Debug, Clone)]
pub struct WindowTables {
    codec: WindowCodec,
    levels: Vec<WindowLevel>,
    y0_prob: Vec<f64>,
    randomizer: Vec<f64>,
}

impl WindowTables {
    /// Build tables at `stencil.theta` with `prior` as the state law at every
    /// window start.
    pub fn build(stencil: &ModelStencil, lag: usize, prior: &[f64]) -> Result<Self> {
        let model = stencil.center.as_ref();
        model.require_standard()?;
        if prior.len() != model.n_states() {
            return Err(Error::Shape("window-start prior length differs from state count".into()));
        }
        let codec = WindowCodec::new(model.n_obs(), model.n_controls(), lag)?;
        let center = level_predictives(model, &codec, prior);
        let lower = if std::sync::Arc::ptr_eq(&stencil.lower, &stencil.center) {
            None
        } else {
            Some(level_predictives(&stencil.lower, &codec, prior))
        };
        let upper = if std::sync::Arc::ptr_eq(&stencil.upper, &stencil.center) {
            None
        } else {
            Some(level_predictives(&stencil.upper, &codec, prior))
        };
        let n_obs = model.n_obs();
        let mut levels = Vec::with_capacity(lag + 1);
        for (n, (pred, feasible)) in center.into_iter().enumerate() {
            let lo = lower.as_ref().map_or(&pred, |v| &v[n].0);
            let hi = upper.as_ref().map_or(&pred, |v| &v[n].0);
            let exp_reward: Vec<f64> = pred
                .par_chunks(n_obs)
                .zip(lo.par_chunks(n_obs))
                .zip(hi.par_chunks(n_obs))
                .map(|((c, lo), hi)| {
                    c.iter()
                        .zip(lo)
                        .zip(hi)
                        .map(|((&c, &lo), &hi)| {
                            let s = stencil.score(c, lo, hi);
                            c * s * s
                        })
                        .sum()
                })
                .collect();
            levels.push(WindowLevel {
                span: n,
                pred,
                exp_reward,
                feasible,
            });
        }
        let y0_prob = (0..n_obs)
            .map(|y| prior.iter().enumerate().map(|(x, p)| p * model.emission_std(x, y)).sum())
            .collect();
        Ok(Self {
            codec,
            levels,
            y0_prob,
            randomizer: randomizer_matrix(model),
        })
    }

    /// Build tables for the family at `theta` with the default step.
    pub fn for_theta(family: &ModelFamily, theta: f64, lag: usize, prior: Option<&[f64]>) -> Result<Self> {
        let stencil = family.stencil(theta, None)?;
        let prior = prior.map_or_else(|| stencil.center.initial_state().to_vec(), <[f64]>::to_vec);
        Self::build(&stencil, lag, &prior)
    }

    /// Posterior-weighted combination of per-parameter tables. Grid points with
    /// zero weight are skipped.
    pub fn mixture(parts: &[WindowTables], weights: &[f64]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture of zero tables".into()))?;
        if parts.len() != weights.len() {
            return Err(Error::Shape("one weight per table required".into()));
        }
        if parts.iter().any(|p| p.codec != first.codec) {
            return Err(Error::Shape("mixed tables must share window layout".into()));
        }
        let active: Vec<(&WindowTables, f64)> = parts
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| (p, w))
            .collect();
        if active.is_empty() {
            return Err(Error::InvalidArgument("all mixture weights are zero".into()));
        }
        let mut levels = Vec::with_capacity(first.levels.len());
        for n in 0..first.levels.len() {
            let len = first.levels[n].pred.len();
            let mut pred = vec![0.0; len];
            pred.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
                let off = c * 4096;
                for (tab, w) in &active {
                    let src = &tab.levels[n].pred[off..off + chunk.len()];
                    for (d, s) in chunk.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            });
            let mut exp_reward = vec![0.0; first.levels[n].exp_reward.len()];
            let mut feasible = vec![false; first.levels[n].feasible.len()];
            for (tab, w) in &active {
                for (d, s) in exp_reward.iter_mut().zip(&tab.levels[n].exp_reward) {
                    *d += w * s;
                }
                for (d, s) in feasible.iter_mut().zip(&tab.levels[n].feasible) {
                    *d |= *s;
                }
            }
            levels.push(WindowLevel {
                span: n,
                pred,
                exp_reward,
                feasible,
            });
        }
        let mut y0_prob = vec![0.0; first.y0_prob.len()];
        for (tab, w) in &active {
            for (d, s) in y0_prob.iter_mut().zip(&tab.y0_prob) {
                *d += w * s;
            }
        }
        Ok(Self {
            codec: first.codec,
            levels,
            y0_prob,
            randomizer: first.randomizer.clone(),
        })
    }

    pub fn codec(&self) -> &WindowCodec {
        &self.codec
    }

    pub fn lag(&self) -> usize {
        self.codec.lag()
    }

    pub fn level(&self, span: usize) -> &WindowLevel {
        &self.levels[span]
    }

    pub fn y0_prob(&self) -> &[f64] {
        &self.y0_prob
    }

    pub fn n_obs(&self) -> usize {
        self.codec.n_obs()
    }

    pub fn n_ctrl(&self) -> usize {
        self.codec.n_ctrl()
    }

    /// `q(u | w)` laid out `[w][u]`.
    pub fn randomizer(&self) -> &[f64] {
        &self.randomizer
    }

    /// One Bellman backup over all windows of `span`:
    /// `max_w sum_u q(u|w) [R(z,u) + discount * sum_y' p(y'|z,u) V(shift(z,u,y'))]`.
    /// `next` holds values over the level that windows of `span` shift into.
    pub(crate) fn backup(&self, span: usize, next: &[f64], discount: f64) -> Backup {
        let level = &self.levels[span];
        let l = self.n_ctrl();
        let n_obs = self.n_obs();
        let size = self.codec.size(span);
        // consecutive observations land this far apart in the next level
        let stride = (n_obs * l).pow((span + 1).min(self.lag()) as u32);
        let cells: Vec<(f64, usize, f64)> = (0..size)
            .into_par_iter()
            .map(|idx| {
                if !level.feasible[idx] {
                    return (0.0, 0, 0.0);
                }
                let mut q_exec = [0.0f64; 64];
                let mut q_vec;
                let q: &mut [f64] = if l <= 64 {
                    &mut q_exec[..l]
                } else {
                    q_vec = vec![0.0; l];
                    &mut q_vec
                };
                for (u, qu) in q.iter_mut().enumerate() {
                    let base = self.codec.shift(span, idx, u, 0).1;
                    let p = &level.pred[(idx * l + u) * n_obs..(idx * l + u + 1) * n_obs];
                    let mut cont = 0.0;
                    for (y, &py) in p.iter().enumerate() {
                        cont += py * next[base + y * stride];
                    }
                    *qu = level.exp_reward[idx * l + u] + discount * cont;
                }
                choose(q, &self.randomizer)
            })
            .collect();
        let mut out = Backup {
            values: Vec::with_capacity(size),
            controls: Vec::with_capacity(size),
            margins: Vec::with_capacity(size),
        };
        for (v, c, g) in cells {
            out.values.push(v);
            out.controls.push(c);
            out.margins.push(g);
        }
        out
    }
}

pub(crate) struct Backup {
    pub values: Vec<f64>,
    pub controls: Vec<usize>,
    pub margins: Vec<f64>,
}

/// Relative tolerance under which candidate values count as tied; ties go to
/// the lowest control index.
pub const TIE_TOL: f64 = 1e-12;

/// Best chosen control from executed-control values `q_exec[u]`, applying the
/// randomizer `[w][u]`. Returns `(value, control, margin to runner-up)`.
#[inline]
pub(crate) fn choose(q_exec: &[f64], randomizer: &[f64]) -> (f64, usize, f64) {
    let l = q_exec.len();
    let mut vals = [0.0f64; 64];
    let mut vals_vec;
    let vals: &mut [f64] = if l <= 64 {
        &mut vals[..l]
    } else {
        vals_vec = vec![0.0; l];
        &mut vals_vec
    };
    for (w, v) in vals.iter_mut().enumerate() {
        *v = randomizer[w * l..(w + 1) * l]
            .iter()
            .zip(q_exec)
            .map(|(r, q)| r * q)
            .sum();
    }
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * best.abs().max(1.0);
    let ctrl = vals.iter().position(|&v| v >= best - tol).unwrap_or(0);
    let runner_up = vals
        .iter()
        .enumerate()
        .filter(|&(w, _)| w != ctrl)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = if runner_up.is_finite() { best - runner_up } else { f64::INFINITY };
    (best, ctrl, margin)
}

pub(crate) fn randomizer_matrix(model: &PomdpModel) -> Vec<f64> {
    let l = model.n_controls();
    (0..l * l).map(|i| model.randomizer_prob(i / l, i % l)).collect()
}

/// Predictive tables (and feasibility) for every level, one model.
fn level_predictives(model: &PomdpModel, codec: &WindowCodec, prior: &[f64]) -> Vec<(Vec<f64>, Vec<bool>)> {
    let k = model.n_states();
    let n_obs = model.n_obs();
    let l = model.n_controls();
    let emission = ArrayView2::from_shape((k, n_obs), model.emission_tensor()).expect("standard emission is K x L");
    let trans: Vec<ArrayView2<f64>> = (0..l)
        .map(|u| ArrayView2::from_shape((k, k), model.transition_block(u)).expect("K x K block"))
        .collect();
    // T_u E: one-step observation law from each state
    let obs_push: Vec<Array2<f64>> = trans.iter().map(|t| t.dot(&emission)).collect();

    // level 0 beliefs: prior conditioned on the single observation
    let mut beliefs = Array2::<f64>::zeros((n_obs, k));
    let mut feasible = vec![false; n_obs];
    for y in 0..n_obs {
        let mut row = beliefs.row_mut(y);
        let mut z = 0.0;
        for x in 0..k {
            let v = prior[x] * emission[(x, y)];
            row[x] = v;
            z += v;
        }
        if z > PROB_FLOOR {
            row.mapv_inplace(|v| v / z);
            feasible[y] = true;
        } else {
            row.fill(0.0);
        }
    }

    let mut out = Vec::with_capacity(codec.lag() + 1);
    for n in 0..=codec.lag() {
        let size = codec.size(n);
        let mut pred = vec![0.0; size * l * n_obs];
        for (u, push) in obs_push.iter().enumerate() {
            let p = beliefs.dot(push);
            for idx in 0..size {
                let dst = &mut pred[(idx * l + u) * n_obs..(idx * l + u + 1) * n_obs];
                for (d, s) in dst.iter_mut().zip(p.row(idx)) {
                    *d = *s;
                }
            }
        }
        if n < codec.lag() {
            let child_size = codec.size(n + 1);
            let mut child = Array2::<f64>::zeros((child_size, k));
            let mut child_feasible = vec![false; child_size];
            for (u, t) in trans.iter().enumerate() {
                let pushed = beliefs.dot(t);
                for idx in 0..size {
                    if !feasible[idx] {
                        continue;
                    }
                    let src = pushed.row(idx);
                    for y in 0..n_obs {
                        let c = codec.extend(n, idx, u, y);
                        let mut row = child.row_mut(c);
                        let mut z = 0.0;
                        for x in 0..k {
                            let v = src[x] * emission[(x, y)];
                            row[x] = v;
                            z += v;
                        }
                        if z > PROB_FLOOR {
                            row.mapv_inplace(|v| v / z);
                            child_feasible[c] = true;
                        } else {
                            row.fill(0.0);
                        }
                    }
                }
            }
            out.push((pred, feasible));
            beliefs = child;
            feasible = child_feasible;
        } else {
            out.push((pred, std::mem::take(&mut feasible)));
        }
    }
    out
}

/// Per-parameter window tables over a grid, from which posterior mixtures are
/// formed cheaply.
#[derive(Debug, Clone)]
pub struct GridTables {
    grid: Vec<f64>,
    tables: Vec<WindowTables>,
}

impl GridTables {
    /// `prior` is the window-start state law; `None` uses each model's initial state.
    pub fn build(family: &ModelFamily, grid: &[f64], lag: usize, prior: Option<&[f64]>) -> Result<Self> {
        let tables = grid
            .iter()
            .map(|&th| WindowTables::for_theta(family, th, lag, prior))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.to_vec(),
            tables,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn tables(&self) -> &[WindowTables] {
        &self.tables
    }

    pub fn mixture(&self, posterior: &ThetaPosterior) -> Result<WindowTables> {
        if posterior.grid() != self.grid.as_slice() {
            return Err(Error::Shape("posterior grid differs from table grid".into()));
        }
        WindowTables::mixture(&self.tables, posterior.weights())
    }
}

/// Transition and expected full-observation reward per state, for one
/// parameter value or a posterior mixture.
#[derive(Debug, Clone)]
pub struct StateTables {
    n_states: usize,
    n_ctrl: usize,
    /// `p(x'|x,u)` laid out `[u][x][x']`.
    trans: Vec<f64>,
    /// `sum_x' p(x'|x,u) C(x,u,x')` laid out `[u][x]`.
    exp_reward: Vec<f64>,
    randomizer: Vec<f64>,
}

impl StateTables {
    pub fn build(stencil: &ModelStencil) -> Self {
        let m = stencil.center.as_ref();
        let k = m.n_states();
        let l = m.n_controls();
        let mut exp_reward = vec![0.0; l * k];
        for u in 0..l {
            for x in 0..k {
                let c = m.transition_row(u, x);
                let lo = stencil.lower.transition_row(u, x);
                let hi = stencil.upper.transition_row(u, x);
                exp_reward[u * k + x] = c
                    .iter()
                    .zip(lo)
                    .zip(hi)
                    .map(|((&c, &lo), &hi)| {
                        let s = stencil.score(c, lo, hi);
                        c * s * s
                    })
                    .sum();
            }
        }
        Self {
            n_states: k,
            n_ctrl: l,
            trans: m.transition_tensor().to_vec(),
            exp_reward,
            randomizer: randomizer_matrix(m),
        }
    }

    pub fn mixture(parts: &[StateTables], weights: &[f64]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture of zero tables".into()))?;
        if parts.len() != weights.len() {
            return Err(Error::Shape("one weight per table required".into()));
        }
        let mut trans = vec![0.0; first.trans.len()];
        let mut exp_reward = vec![0.0; first.exp_reward.len()];
        for (p, &w) in parts.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            if p.n_states != first.n_states || p.n_ctrl != first.n_ctrl {
                return Err(Error::Shape("mixed state tables differ in size".into()));
            }
            for (d, s) in trans.iter_mut().zip(&p.trans) {
                *d += w * s;
            }
            for (d, s) in exp_reward.iter_mut().zip(&p.exp_reward) {
                *d += w * s;
            }
        }
        Ok(Self {
            n_states: first.n_states,
            n_ctrl: first.n_ctrl,
            trans,
            exp_reward,
            randomizer: first.randomizer.clone(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn exp_reward(&self, u: usize, x: usize) -> f64 {
        self.exp_reward[u * self.n_states + x]
    }

    /// One backup `max_w sum_u q(u|w) [R(x,u) + discount * sum_x' p(x'|x,u) V(x')]`.
    pub(crate) fn backup(&self, next: &[f64], discount: f64) -> Backup {
        let k = self.n_states;
        let l = self.n_ctrl;
        let mut out = Backup {
            values: Vec::with_capacity(k),
            controls: Vec::with_capacity(k),
            margins: Vec::with_capacity(k),
        };
        let mut q = vec![0.0; l];
        for x in 0..k {
            for (u, qu) in q.iter_mut().enumerate() {
                let row = &self.trans[(u * k + x) * k..(u * k + x + 1) * k];
                let cont: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
                *qu = self.exp_reward[u * k + x] + discount * cont;
            }
            let (v, c, g) = choose(&q, &self.randomizer);
            out.values.push(v);
            out.controls.push(c);
            out.margins.push(g);
        }
        out
    }
}
