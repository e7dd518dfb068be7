//! Parameter estimation: grid and refined maximum likelihood, forward-backward
//! smoothing and a generalized EM with a golden-section M-step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{check_sequences, condition_on_first, filter_unnormalized, loglikelihood_model};
use crate::model::{floored_ln, ModelFamily, PomdpModel, ThetaDomain, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub theta: f64,
    pub loglik: f64,
}

/// Grid point with the highest log-likelihood; ties go to the lowest value.
pub fn mle_grid(family: &ModelFamily, grid: &[f64], y_seq: &[usize], u_seq: &[usize]) -> Result<Estimate> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lls = sorted
        .iter()
        .map(|&th| Ok(loglikelihood_model(&family.eval(th)?, y_seq, u_seq)?.value))
        .collect::<Result<Vec<f64>>>()?;
    best_of(&sorted, &lls)
}

/// [`mle_grid`] over pre-evaluated models, given as `(theta, model)` in
/// increasing `theta`.
pub fn mle_grid_models(models: &[(f64, PomdpModel)], y_seq: &[usize], u_seq: &[usize]) -> Result<Estimate> {
    let grid: Vec<f64> = models.iter().map(|(th, _)| *th).collect();
    let lls = models
        .iter()
        .map(|(_, m)| Ok(loglikelihood_model(m, y_seq, u_seq)?.value))
        .collect::<Result<Vec<f64>>>()?;
    best_of(&grid, &lls)
}

fn best_of(grid: &[f64], lls: &[f64]) -> Result<Estimate> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty estimation grid".into()));
    }
    let mut best: Option<usize> = None;
    for (i, &ll) in lls.iter().enumerate() {
        if ll.is_finite() && best.is_none_or(|b| ll > lls[b]) {
            best = Some(i);
        }
    }
    let b = best.ok_or(Error::AllImpossible)?;
    Ok(Estimate {
        theta: grid[b],
        loglik: lls[b],
    })
}

/// Coarse grid search followed by golden-section refinement between the
/// neighbours of the best grid point.
pub fn mle_refined(
    family: &ModelFamily,
    grid: &[f64],
    y_seq: &[usize],
    u_seq: &[usize],
    tol: f64,
) -> Result<Estimate> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let coarse = mle_grid(family, &sorted, y_seq, u_seq)?;
    let i = sorted.iter().position(|&g| g == coarse.theta).unwrap_or(0);
    let lo = if i > 0 { sorted[i - 1] } else { sorted[0] };
    let hi = if i + 1 < sorted.len() { sorted[i + 1] } else { sorted[i] };
    if hi <= lo {
        return Ok(coarse);
    }
    let ll = |th: f64| -> f64 {
        family
            .eval(th)
            .and_then(|m| loglikelihood_model(&m, y_seq, u_seq))
            .map_or(f64::NEG_INFINITY, |l| l.value)
    };
    let (th, val) = golden_max(ll, lo, hi, tol);
    if val > coarse.loglik {
        Ok(Estimate { theta: th, loglik: val })
    } else {
        Ok(coarse)
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a maximum of `f` on `[lo, hi]`, stopping when
/// the bracket is narrower than `tol`. Returns the best point seen.
pub fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Smoothed state marginals and pairwise expectations.
#[derive(Debug, Clone)]
pub struct Smoothed {
    /// `marginals[t][x] = p(x_t = x | y_{0:T})`.
    pub marginals: Vec<Vec<f64>>,
    /// `pairs[t][x * K + x'] = p(x_t = x, x_{t+1} = x' | y_{0:T})`.
    pub pairs: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Scaled forward-backward pass.
pub fn smooth_pairs(model: &PomdpModel, y_seq: &[usize], u_seq: &[usize]) -> Result<Smoothed> {
    model.require_standard()?;
    check_sequences(model, y_seq, u_seq)?;
    let k = model.n_states();
    let n = y_seq.len();
    let impossible = |t: usize| Error::ImpossibleObservation {
        obs: y_seq[t],
        control: if t == 0 { 0 } else { u_seq[t - 1] },
        prob: 0.0,
    };
    let mut alpha = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    let (a0, z0) = condition_on_first(model, model.initial_state(), y_seq[0]).ok_or_else(|| impossible(0))?;
    alpha.push(a0);
    scale.push(z0);
    let mut buf = vec![0.0; k];
    for t in 1..n {
        let z = filter_unnormalized(model, &alpha[t - 1], u_seq[t - 1], y_seq[t], &mut buf);
        if z <= PROB_FLOOR {
            return Err(impossible(t));
        }
        alpha.push(buf.iter().map(|v| v / z).collect());
        scale.push(z);
    }
    let mut beta = vec![vec![1.0; k]; n];
    for t in (0..n - 1).rev() {
        let u = u_seq[t];
        let y = y_seq[t + 1];
        for x in 0..k {
            let row = model.transition_row(u, x);
            let mut s = 0.0;
            for (x2, &p) in row.iter().enumerate() {
                s += p * model.emission_std(x2, y) * beta[t + 1][x2];
            }
            beta[t][x] = s / scale[t + 1];
        }
    }
    let marginals: Vec<Vec<f64>> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let mut g: Vec<f64> = a.iter().zip(b).map(|(a, b)| a * b).collect();
            let z: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= z);
            g
        })
        .collect();
    let mut pairs = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n - 1 {
        let u = u_seq[t];
        let y = y_seq[t + 1];
        let mut xi = vec![0.0; k * k];
        for x in 0..k {
            if alpha[t][x] == 0.0 {
                continue;
            }
            for (x2, &p) in model.transition_row(u, x).iter().enumerate() {
                xi[x * k + x2] = alpha[t][x] * p * model.emission_std(x2, y) * beta[t + 1][x2] / scale[t + 1];
            }
        }
        let z: f64 = xi.iter().sum();
        xi.iter_mut().for_each(|v| *v /= z);
        pairs.push(xi);
    }
    Ok(Smoothed {
        marginals,
        pairs,
        loglik: scale.iter().map(|s| s.ln()).sum(),
    })
}

/// Expected complete-data counts aggregated over time.
struct Counts {
    /// `[u][x][x']`
    trans: Vec<f64>,
    /// `[x][y]`
    emit: Vec<f64>,
    first: Vec<f64>,
}

impl Counts {
    fn from_smoothed(model: &PomdpModel, s: &Smoothed, y_seq: &[usize], u_seq: &[usize]) -> Self {
        let k = model.n_states();
        let l = model.n_controls();
        let mut trans = vec![0.0; l * k * k];
        for (t, xi) in s.pairs.iter().enumerate() {
            let off = u_seq[t] * k * k;
            for (d, v) in trans[off..off + k * k].iter_mut().zip(xi) {
                *d += v;
            }
        }
        let mut emit = vec![0.0; k * model.n_obs()];
        for (g, &y) in s.marginals.iter().zip(y_seq) {
            for (x, v) in g.iter().enumerate() {
                emit[x * model.n_obs() + y] += v;
            }
        }
        Self {
            trans,
            emit,
            first: s.marginals[0].clone(),
        }
    }

    /// Expected complete-data log-likelihood under `model`.
    fn q(&self, model: &PomdpModel) -> f64 {
        let mut q = 0.0;
        for (c, &p) in self.trans.iter().zip(model.transition_tensor()) {
            if *c > 0.0 {
                q += c * floored_ln(p);
            }
        }
        for (c, &p) in self.emit.iter().zip(model.emission_tensor()) {
            if *c > 0.0 {
                q += c * floored_ln(p);
            }
        }
        for (c, &p) in self.first.iter().zip(model.initial_state()) {
            if *c > 0.0 {
                q += c * floored_ln(p);
            }
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the log-likelihood gain drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Bracket width at which the golden-section M-step stops.
    pub golden_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            golden_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub theta: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub theta: f64,
    pub loglik: f64,
    /// Parameter and log-likelihood after every iteration, starting with the
    /// initial value.
    pub iterations: Vec<EmIteration>,
}

/// Generalized EM. The M-step maximizes the expected complete-data
/// log-likelihood over the whole domain by golden-section search and is
/// accepted only if it does not lower that objective.
pub fn em_estimate(
    family: &ModelFamily,
    theta0: f64,
    y_seq: &[usize],
    u_seq: &[usize],
    opts: EmOptions,
) -> Result<EmResult> {
    let domain: ThetaDomain = family.domain();
    domain.check(theta0)?;
    let mut theta = theta0;
    let mut model = family.eval(theta)?;
    let mut smoothed = smooth_pairs(&model, y_seq, u_seq)?;
    let mut iterations = vec![EmIteration {
        theta,
        loglik: smoothed.loglik,
    }];
    for it in 1..=opts.max_iter {
        let counts = Counts::from_smoothed(&model, &smoothed, y_seq, u_seq);
        let q_old = counts.q(&model);
        if !q_old.is_finite() {
            return Err(Error::NonFiniteObjective(it));
        }
        let q = |th: f64| family.eval(th).map_or(f64::NEG_INFINITY, |m| counts.q(&m));
        let (cand, q_new) = golden_max(q, domain.lo, domain.hi, opts.golden_tol);
        if !q_new.is_finite() {
            return Err(Error::NonFiniteObjective(it));
        }
        let prev_ll = smoothed.loglik;
        if q_new >= q_old {
            let cand_model = family.eval(cand)?;
            let cand_smoothed = smooth_pairs(&cand_model, y_seq, u_seq)?;
            // floored logs can break the EM ascent guarantee; never step downhill
            if cand_smoothed.loglik >= prev_ll {
                theta = cand;
                model = cand_model;
                smoothed = cand_smoothed;
            }
        }
        iterations.push(EmIteration {
            theta,
            loglik: smoothed.loglik,
        });
        if smoothed.loglik - prev_ll < opts.tol {
            break;
        }
    }
    Ok(EmResult {
        theta,
        loglik: smoothed.loglik,
        iterations,
    })
}
