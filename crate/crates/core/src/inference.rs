//! Filtering, windowed predictive distributions, likelihoods, finite-difference
//! scores and the grid posterior over the parameter.
//!
//! All routines here expect standard-form models (emission `p(y | x)`);
//! history-dependent emissions are reduced with
//! [`PomdpModel::augment_autoregressive`] first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_index, BeliefState, ModelFamily, PomdpModel, NORMALIZATION_TOL, PROB_FLOOR,
};
use crate::window::HistoryWindow;

/// Unnormalized one-step update written into `out`; returns the normalizer
/// `sum_{x'} sum_x b(x) p(x'|x,u) p(y|x')`.
#[inline]
pub(crate) fn filter_unnormalized(
    model: &PomdpModel,
    belief: &[f64],
    u: usize,
    y: usize,
    out: &mut [f64],
) -> f64 {
    let k = model.n_states();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &b) in belief.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let row = model.transition_row(u, x);
        for (o, &p) in out.iter_mut().zip(row) {
            *o += b * p;
        }
    }
    let mut total = 0.0;
    for (x2, o) in out.iter_mut().enumerate().take(k) {
        *o *= model.emission_std(x2, y);
        total += *o;
    }
    total
}

/// In-place normalized filter step. Returns the predictive probability of `y`,
/// leaving `belief` untouched when it is at or below the floor.
pub(crate) fn filter_in_place(
    model: &PomdpModel,
    belief: &mut Vec<f64>,
    u: usize,
    y: usize,
    scratch: &mut Vec<f64>,
) -> f64 {
    scratch.resize(model.n_states(), 0.0);
    let z = filter_unnormalized(model, belief, u, y, scratch);
    if z > PROB_FLOOR {
        for (b, s) in belief.iter_mut().zip(scratch.iter()) {
            *b = s / z;
        }
    }
    z
}

/// Bayes update of the state belief after applying `u` and observing `y_next`.
/// Returns the new belief and `p(y_next | history)`.
pub fn filter_step(
    model: &PomdpModel,
    belief: &BeliefState,
    u: usize,
    y_next: usize,
) -> Result<(BeliefState, f64)> {
    model.require_standard()?;
    model.check_control(u)?;
    model.check_obs(y_next)?;
    if belief.len() != model.n_states() {
        return Err(Error::Shape(format!(
            "belief has {} states, model has {}",
            belief.len(),
            model.n_states()
        )));
    }
    let mut out = vec![0.0; model.n_states()];
    let z = filter_unnormalized(model, belief.weights(), u, y_next, &mut out);
    if z <= PROB_FLOOR {
        return Err(Error::ImpossibleObservation {
            obs: y_next,
            control: u,
            prob: z,
        });
    }
    out.iter_mut().for_each(|v| *v /= z);
    Ok((BeliefState::from_normalized(out), z))
}

/// Belief after the first observation: `prior(x) p(y0|x)`, normalized.
/// Returns `None` when the observation is impossible under the prior.
pub(crate) fn condition_on_first(model: &PomdpModel, prior: &[f64], y0: usize) -> Option<(Vec<f64>, f64)> {
    let mut b: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(x, &p)| p * model.emission_std(x, y0))
        .collect();
    let z: f64 = b.iter().sum();
    if z <= PROB_FLOOR {
        return None;
    }
    b.iter_mut().for_each(|v| *v /= z);
    Some((b, z))
}

/// `p(y' | belief, u) = sum_x b(x) sum_x' p(x'|x,u) p(y'|x')`.
pub fn predict_obs(model: &PomdpModel, belief: &[f64], u: usize) -> Vec<f64> {
    let k = model.n_states();
    let mut next = vec![0.0; k];
    for (x, &b) in belief.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (n, &p) in next.iter_mut().zip(model.transition_row(u, x)) {
            *n += b * p;
        }
    }
    let mut out = vec![0.0; model.n_obs()];
    for (x2, &w) in next.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &e) in out.iter_mut().zip(model.emission_row(x2)) {
            *o += w * e;
        }
    }
    out
}

/// Belief at the end of `window`, starting from `prior` at the window's oldest
/// observation. `None` if the window is impossible.
pub(crate) fn window_belief(model: &PomdpModel, window: &HistoryWindow, prior: &[f64]) -> Option<Vec<f64>> {
    let (mut b, _) = condition_on_first(model, prior, window.obs()[0])?;
    let mut scratch = vec![0.0; model.n_states()];
    for (&u, &y) in window.ctrl().iter().zip(&window.obs()[1..]) {
        let z = filter_in_place(model, &mut b, u, y, &mut scratch);
        if z <= PROB_FLOOR {
            return None;
        }
    }
    Some(b)
}

/// `p(y_{t+1} | window, u_t, prior at window start)`: condition the prior on
/// the oldest observation, fold the filter over the window, then push one step.
pub fn window_predictive(
    model: &PomdpModel,
    window: &HistoryWindow,
    u_t: usize,
    prior: &[f64],
) -> Result<Vec<f64>> {
    model.require_standard()?;
    model.check_control(u_t)?;
    check_window(model, window)?;
    if prior.len() != model.n_states() {
        return Err(Error::Shape("prior length differs from state count".into()));
    }
    let b = window_belief(model, window, prior).ok_or_else(|| Error::ImpossibleWindow {
        obs: window.obs().to_vec(),
        ctrl: window.ctrl().to_vec(),
    })?;
    Ok(predict_obs(model, &b, u_t))
}

fn check_window(model: &PomdpModel, window: &HistoryWindow) -> Result<()> {
    for &y in window.obs() {
        check_index("observation", y, model.n_obs())?;
    }
    for &u in window.ctrl() {
        check_index("control", u, model.n_controls())?;
    }
    Ok(())
}

/// Finite-difference derivative of `log f(theta)` for a probability-valued
/// functional of the model. Central differences inside the domain, one-sided
/// at its edges; zero when the functional is at the floor at any evaluation.
pub fn score_fd(
    family: &ModelFamily,
    theta: f64,
    h: Option<f64>,
    functional: impl Fn(&PomdpModel) -> Result<f64>,
) -> Result<f64> {
    let s = family.stencil(theta, h)?;
    let c = functional(&s.center)?;
    let lo = functional(&s.lower)?;
    let hi = functional(&s.upper)?;
    Ok(s.score(c, lo, hi))
}

/// Element-wise [`score_fd`] for vector-valued functionals.
pub fn score_fd_vec(
    family: &ModelFamily,
    theta: f64,
    h: Option<f64>,
    functional: impl Fn(&PomdpModel) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let s = family.stencil(theta, h)?;
    let c = functional(&s.center)?;
    let lo = functional(&s.lower)?;
    let hi = functional(&s.upper)?;
    if c.len() != lo.len() || c.len() != hi.len() {
        return Err(Error::Shape("functional changed length across evaluations".into()));
    }
    Ok(c.iter()
        .zip(&lo)
        .zip(&hi)
        .map(|((&c, &lo), &hi)| s.score(c, lo, hi))
        .collect())
}

/// Log-likelihood of an observation sequence, with the first impossible step
/// recorded when the value is `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub impossible_at: Option<usize>,
}

impl LogLikelihood {
    pub fn is_finite(&self) -> bool {
        self.impossible_at.is_none()
    }
}

/// `sum_t log p(y_t | y_{0:t-1}, u_{0:t-1})` for the model itself.
pub fn loglikelihood_model(model: &PomdpModel, y_seq: &[usize], u_seq: &[usize]) -> Result<LogLikelihood> {
    model.require_standard()?;
    check_sequences(model, y_seq, u_seq)?;
    let y0_law = model.y0_distribution();
    let p0 = y0_law[y_seq[0]];
    if p0 <= PROB_FLOOR {
        return Ok(LogLikelihood {
            value: f64::NEG_INFINITY,
            impossible_at: Some(0),
        });
    }
    let (mut b, _) = condition_on_first(model, model.initial_state(), y_seq[0]).expect("p(y0) above floor");
    let mut total = p0.ln();
    let mut scratch = vec![0.0; model.n_states()];
    for (t, (&u, &y)) in u_seq.iter().zip(&y_seq[1..]).enumerate() {
        let z = filter_in_place(model, &mut b, u, y, &mut scratch);
        if z <= PROB_FLOOR {
            return Ok(LogLikelihood {
                value: f64::NEG_INFINITY,
                impossible_at: Some(t + 1),
            });
        }
        total += z.ln();
    }
    Ok(LogLikelihood {
        value: total,
        impossible_at: None,
    })
}

pub fn loglikelihood(
    family: &ModelFamily,
    theta: f64,
    y_seq: &[usize],
    u_seq: &[usize],
) -> Result<LogLikelihood> {
    loglikelihood_model(&family.eval(theta)?, y_seq, u_seq)
}

pub(crate) fn check_sequences(model: &PomdpModel, y_seq: &[usize], u_seq: &[usize]) -> Result<()> {
    if y_seq.is_empty() || u_seq.len() + 1 != y_seq.len() {
        return Err(Error::InvalidArgument(format!(
            "need len(u) = len(y) - 1, got {} and {}",
            u_seq.len(),
            y_seq.len()
        )));
    }
    for &y in y_seq {
        check_index("observation", y, model.n_obs())?;
    }
    for &u in u_seq {
        check_index("control", u, model.n_controls())?;
    }
    Ok(())
}

/// Posterior weights over a finite, strictly increasing parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPosterior {
    grid: Vec<f64>,
    weights: Vec<f64>,
}

impl ThetaPosterior {
    pub fn new(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != weights.len() {
            return Err(Error::InvalidArgument("grid and weights must be non-empty and equally long".into()));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("grid must be finite and strictly increasing".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}")));
        }
        Ok(Self { grid, weights })
    }

    pub fn uniform(grid: Vec<f64>) -> Result<Self> {
        let n = grid.len().max(1);
        Self::new(grid, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(theta: f64) -> Self {
        Self {
            grid: vec![theta],
            weights: vec![1.0],
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Grid point with the largest weight (lowest on ties).
    pub fn mode(&self) -> f64 {
        self.grid[crate::model::argmax_first(&self.weights)]
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }

    /// Index of the grid point closest to `theta` (lowest on ties).
    pub fn nearest_index(&self, theta: f64) -> usize {
        let mut best = 0;
        for (i, g) in self.grid.iter().enumerate() {
            if (g - theta).abs() < (self.grid[best] - theta).abs() {
                best = i;
            }
        }
        best
    }

    /// Bayes update: weights proportional to old weights times the
    /// per-grid-point probability of the new observation.
    pub fn update(&self, pred_probs: &[f64]) -> Result<Self> {
        posterior_update(self, pred_probs)
    }
}

pub fn posterior_update(post: &ThetaPosterior, pred_probs: &[f64]) -> Result<ThetaPosterior> {
    if pred_probs.len() != post.len() {
        return Err(Error::Shape(format!(
            "{} predictive probabilities for {} grid points",
            pred_probs.len(),
            post.len()
        )));
    }
    if pred_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("predictive probabilities must be finite and >= 0".into()));
    }
    if pred_probs.iter().all(|&p| p <= PROB_FLOOR) {
        return Err(Error::PosteriorAnnihilated);
    }
    let mut weights: Vec<f64> = post.weights.iter().zip(pred_probs).map(|(w, p)| w * p).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::PosteriorAnnihilated);
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ThetaPosterior {
        grid: post.grid.clone(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSet, ThetaDomain};
    use proptest::prelude::*;

    fn identity_emission_model() -> PomdpModel {
        PomdpModel::standard(
            ControlSet::indexed(2).unwrap(),
            &[
                vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]],
                vec![vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25]],
            ],
            &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1.0 / 3.0; 3],
        )
        .unwrap()
    }

    fn uninformative_model() -> PomdpModel {
        PomdpModel::standard(
            ControlSet::indexed(2).unwrap(),
            &[
                vec![vec![0.6, 0.4], vec![0.3, 0.7]],
                vec![vec![0.9, 0.1], vec![0.5, 0.5]],
            ],
            &[vec![0.25, 0.75], vec![0.25, 0.75]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn perfect_observation_collapses_belief() {
        let m = identity_emission_model();
        let b = BeliefState::new(vec![0.2, 0.5, 0.3]).unwrap();
        let (post, _) = filter_step(&m, &b, 1, 2).unwrap();
        assert_eq!(post.weights(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn uninformative_observation_pushes_forward() {
        let m = uninformative_model();
        let b = BeliefState::new(vec![0.3, 0.7]).unwrap();
        let (post, p) = filter_step(&m, &b, 1, 0).unwrap();
        let pushed = [0.3 * 0.9 + 0.7 * 0.5, 0.3 * 0.1 + 0.7 * 0.5];
        for (a, e) in post.weights().iter().zip(pushed) {
            assert!((a - e).abs() < 1e-14);
        }
        assert!((p - 0.25).abs() < 1e-14);
    }

    #[test]
    fn impossible_observation_errors() {
        let m = identity_emission_model();
        let b = BeliefState::point(3, 2);
        let mut parts = m.into_parts();
        // state 2 cannot reach state 0 under control 0
        parts.transition[6..9].copy_from_slice(&[0.0, 0.2, 0.8]);
        let m = PomdpModel::from_parts(parts).unwrap();
        assert!(matches!(
            filter_step(&m, &b, 0, 0),
            Err(Error::ImpossibleObservation { obs: 0, control: 0, .. })
        ));
    }

    #[test]
    fn lag_zero_identity_emission_is_transition_row() {
        let m = identity_emission_model();
        let w = HistoryWindow::single(1);
        let p = window_predictive(&m, &w, 0, m.initial_state()).unwrap();
        assert_eq!(p, m.transition_row(0, 1));
    }

    #[test]
    fn x_independent_emission_returns_emission_row() {
        let m = uninformative_model();
        let w = HistoryWindow::new(vec![1, 0, 1], vec![0, 1]).unwrap();
        let p = window_predictive(&m, &w, 1, m.initial_state()).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-14 && (p[1] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn impossible_window_errors() {
        let m = identity_emission_model();
        let mut parts = m.into_parts();
        parts.transition[0..3].copy_from_slice(&[1.0, 0.0, 0.0]);
        let m = PomdpModel::from_parts(parts).unwrap();
        let w = HistoryWindow::new(vec![0, 2], vec![0]).unwrap();
        assert!(matches!(
            window_predictive(&m, &w, 0, m.initial_state()),
            Err(Error::ImpossibleWindow { .. })
        ));
    }

    fn linear_family() -> ModelFamily {
        // p(x'=0|x) = theta / 4 for every x
        ModelFamily::new("linear", ThetaDomain::new(0.5, 3.0).unwrap(), |th| {
            let a = th / 4.0;
            PomdpModel::standard(
                ControlSet::indexed(1).unwrap(),
                &[vec![vec![a, 1.0 - a], vec![a, 1.0 - a]]],
                &[vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![0.5, 0.5],
            )
        })
    }

    #[test]
    fn score_of_constant_is_zero() {
        let f = linear_family();
        assert_eq!(score_fd(&f, 2.0, None, |_| Ok(0.3)).unwrap(), 0.0);
    }

    #[test]
    fn score_of_identity_functional() {
        let f = linear_family();
        let s = score_fd(&f, 2.0, Some(1e-4), |m| Ok(4.0 * m.transition(0, 0, 0))).unwrap();
        assert!((s - 0.5).abs() < 1e-6);
    }

    #[test]
    fn score_is_one_sided_at_edges() {
        let f = linear_family();
        let s = score_fd(&f, 3.0, Some(1e-4), |m| Ok(m.transition(0, 0, 0))).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn score_at_floor_is_zero() {
        let f = linear_family();
        assert_eq!(score_fd(&f, 2.0, None, |_| Ok(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn loglik_single_observation() {
        let m = uninformative_model();
        let ll = loglikelihood_model(&m, &[1], &[]).unwrap();
        assert!((ll.value - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_of_certain_sequence_is_zero() {
        let m = PomdpModel::standard(
            ControlSet::indexed(1).unwrap(),
            &[vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let ll = loglikelihood_model(&m, &[0, 1, 0, 1], &[0, 0, 0]).unwrap();
        assert_eq!(ll.value, 0.0);
        let bad = loglikelihood_model(&m, &[0, 1, 1], &[0, 0]).unwrap();
        assert_eq!(bad.impossible_at, Some(2));
        assert_eq!(bad.value, f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_rejects_length_mismatch() {
        let m = uninformative_model();
        assert!(loglikelihood_model(&m, &[0, 1], &[0, 0]).is_err());
    }

    #[test]
    fn posterior_uninformative_update_is_identity() {
        let p = ThetaPosterior::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.3, 0.5]).unwrap();
        let q = p.update(&[0.4, 0.4, 0.4]).unwrap();
        for (a, b) in p.weights().iter().zip(q.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_point_mass_stays() {
        let p = ThetaPosterior::new(vec![1.0, 2.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(p.update(&[0.9, 0.1]).unwrap().weights(), &[0.0, 1.0]);
    }

    #[test]
    fn posterior_proportional_to_grid() {
        let grid = vec![1.7, 2.4, 3.1, 3.8, 4.5, 5.2, 5.9, 6.6, 7.3, 8.0];
        let p = ThetaPosterior::uniform(grid.clone()).unwrap();
        let q = p.update(&grid.iter().map(|g| g / 10.0).collect::<Vec<_>>()).unwrap();
        let total: f64 = grid.iter().sum();
        for (w, g) in q.weights().iter().zip(&grid) {
            assert!((w - g / total).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_annihilation() {
        let p = ThetaPosterior::uniform(vec![0.0, 1.0]).unwrap();
        assert!(matches!(p.update(&[0.0, 1e-13]), Err(Error::PosteriorAnnihilated)));
    }

    proptest! {
        #[test]
        fn posterior_update_scale_invariant(probs in prop::collection::vec(0.01f64..1.0, 4), scale in 0.001f64..1000.0) {
            let p = ThetaPosterior::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let a = p.update(&probs).unwrap();
            let scaled: Vec<f64> = probs.iter().map(|x| x * scale).collect();
            let b = p.update(&scaled).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn filter_output_is_normalized(w in prop::collection::vec(0.01f64..1.0, 3), u in 0usize..2, y in 0usize..3) {
            let m = PomdpModel::standard(
                ControlSet::indexed(2).unwrap(),
                &[
                    vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]],
                    vec![vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25]],
                ],
                &[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.2, 0.2, 0.6]],
                vec![1.0 / 3.0; 3],
            ).unwrap();
            let s: f64 = w.iter().sum();
            let b = BeliefState::new(w.iter().map(|v| v / s).collect()).unwrap();
            let (post, _) = filter_step(&m, &b, u, y).unwrap();
            prop_assert!((post.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
