//! Trajectory simulation and the controllers that drive it.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fofi::StatePolicy;
use crate::inference::{condition_on_first, filter_in_place, ThetaPosterior};
use crate::model::{argmax_first, ModelFamily, PomdpModel, PROB_FLOOR};
use crate::pofi::PofiPolicy;
use crate::window::WindowCodec;

/// Latent states, observations and controls of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x_0..=x_T`.
    pub x: Vec<usize>,
    /// `y_0..=y_T`.
    pub y: Vec<usize>,
    /// Controls picked by the controller, `w_0..w_{T-1}`.
    pub chosen: Vec<usize>,
    /// Controls applied after the randomizer, `u_0..u_{T-1}`.
    pub executed: Vec<usize>,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.executed.len()
    }
}

/// Something that picks controls from the observable record only.
pub trait Controller {
    /// Called once with the first observation.
    fn start(&mut self, y0: usize) -> Result<()>;
    /// Control chosen at time `t` (before randomization).
    fn choose(&mut self, t: usize, rng: &mut dyn RngCore) -> Result<usize>;
    /// The executed control and the observation it produced.
    fn observe(&mut self, u: usize, y: usize) -> Result<()>;
}

/// Draw an index from non-negative weights.
pub(crate) fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    // rounding can leave r just above zero; take the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// RNG for replication `seed`.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Simulate the model at `theta` for `horizon` steps.
pub fn simulate(
    family: &ModelFamily,
    theta: f64,
    controller: &mut dyn Controller,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_model(&family.eval(theta)?, controller, horizon, seed)
}

/// Draw order per step: controller, randomizer, transition, emission.
pub fn simulate_model(
    model: &PomdpModel,
    controller: &mut dyn Controller,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    model.require_standard()?;
    let mut rng = rng_for(seed);
    let mut x = Vec::with_capacity(horizon + 1);
    let mut y = Vec::with_capacity(horizon + 1);
    let mut chosen = Vec::with_capacity(horizon);
    let mut executed = Vec::with_capacity(horizon);
    let x0 = sample_index(model.initial_state(), &mut rng);
    let y0 = sample_index(model.emission_row(x0), &mut rng);
    x.push(x0);
    y.push(y0);
    controller.start(y0)?;
    for t in 0..horizon {
        let w = controller.choose(t, &mut rng)?;
        model.check_control(w).map_err(|_| {
            Error::Shape(format!("controller chose {w} but the model has {} controls", model.n_controls()))
        })?;
        let u = match model.randomizer() {
            Some(_) => sample_index(&model.apply_randomizer(w)?, &mut rng),
            None => w,
        };
        let x_next = sample_index(model.transition_row(u, x[t]), &mut rng);
        let y_next = sample_index(model.emission_row(x_next), &mut rng);
        chosen.push(w);
        executed.push(u);
        x.push(x_next);
        y.push(y_next);
        controller.observe(u, y_next)?;
    }
    Ok(Trajectory {
        x,
        y,
        chosen,
        executed,
        seed,
    })
}

/// Always the same control.
#[derive(Debug, Clone)]
pub struct FixedController(pub usize);

impl Controller for FixedController {
    fn start(&mut self, _y0: usize) -> Result<()> {
        Ok(())
    }

    fn choose(&mut self, _t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self.0)
    }

    fn observe(&mut self, _u: usize, _y: usize) -> Result<()> {
        Ok(())
    }
}

/// Uniformly random controls.
#[derive(Debug, Clone)]
pub struct RandomController(pub usize);

impl Controller for RandomController {
    fn start(&mut self, _y0: usize) -> Result<()> {
        Ok(())
    }

    fn choose(&mut self, _t: usize, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.random_range(0..self.0))
    }

    fn observe(&mut self, _u: usize, _y: usize) -> Result<()> {
        Ok(())
    }
}

/// Table lookup on the current history window. Past the policy horizon the
/// stationary table is used.
#[derive(Debug, Clone)]
pub struct PofiController {
    policy: Arc<PofiPolicy>,
    codec: WindowCodec,
    span: usize,
    index: usize,
}

impl PofiController {
    pub fn new(policy: Arc<PofiPolicy>) -> Self {
        let codec = policy.codec();
        Self {
            policy,
            codec,
            span: 0,
            index: 0,
        }
    }
}

impl Controller for PofiController {
    fn start(&mut self, y0: usize) -> Result<()> {
        crate::model::check_index("observation", y0, self.codec.n_obs())?;
        self.span = 0;
        self.index = y0;
        Ok(())
    }

    fn choose(&mut self, t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        if t < self.policy.horizon {
            Ok(self.policy.controls[t][self.index])
        } else {
            Ok(self.policy.stationary_or_last()[self.index])
        }
    }

    fn observe(&mut self, u: usize, y: usize) -> Result<()> {
        crate::model::check_index("observation", y, self.codec.n_obs())?;
        let (span, index) = self.codec.shift(self.span, self.index, u, y);
        self.span = span;
        self.index = index;
        Ok(())
    }
}

/// Bank of state filters, one per candidate parameter value, mixed by a
/// posterior that is updated with each observation.
#[derive(Debug, Clone)]
pub struct FilterBank {
    models: Vec<Arc<PomdpModel>>,
    beliefs: Vec<Vec<f64>>,
    posterior: ThetaPosterior,
    scratch: Vec<f64>,
}

impl FilterBank {
    pub fn new(models: Vec<Arc<PomdpModel>>, posterior: ThetaPosterior) -> Result<Self> {
        if models.len() != posterior.len() || models.is_empty() {
            return Err(Error::Shape("one model per posterior grid point required".into()));
        }
        Ok(Self {
            beliefs: models.iter().map(|m| m.initial_state().to_vec()).collect(),
            models,
            posterior,
            scratch: Vec::new(),
        })
    }

    pub fn posterior(&self) -> &ThetaPosterior {
        &self.posterior
    }

    pub fn start(&mut self, y0: usize) -> Result<()> {
        let mut probs = Vec::with_capacity(self.models.len());
        for (m, b) in self.models.iter().zip(self.beliefs.iter_mut()) {
            m.check_obs(y0)?;
            match condition_on_first(m, m.initial_state(), y0) {
                Some((nb, z)) => {
                    *b = nb;
                    probs.push(z);
                }
                None => probs.push(0.0),
            }
        }
        self.posterior = self.posterior.update(&probs)?;
        Ok(())
    }

    /// Filter every model forward; returns `p(y | history)` per model.
    pub fn observe(&mut self, u: usize, y: usize) -> Result<Vec<f64>> {
        let mut probs = Vec::with_capacity(self.models.len());
        for (m, b) in self.models.iter().zip(self.beliefs.iter_mut()) {
            m.check_obs(y)?;
            let z = filter_in_place(m, b, u, y, &mut self.scratch);
            probs.push(if z > PROB_FLOOR { z } else { 0.0 });
        }
        self.posterior = self.posterior.update(&probs)?;
        Ok(probs)
    }

    /// Posterior-weighted state belief.
    pub fn mixed_belief(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.beliefs[0].len()];
        for (b, &w) in self.beliefs.iter().zip(self.posterior.weights()) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(b) {
                *o += w * v;
            }
        }
        out
    }
}

/// Applies the state policy at the most probable filtered state. With a
/// single point-mass model this is the oracle-parameter controller.
#[derive(Debug, Clone)]
pub struct FofiController {
    policy: Arc<StatePolicy>,
    bank: FilterBank,
}

impl FofiController {
    pub fn new(policy: Arc<StatePolicy>, bank: FilterBank) -> Self {
        Self { policy, bank }
    }

    pub fn oracle(policy: Arc<StatePolicy>, model: Arc<PomdpModel>, theta: f64) -> Self {
        let bank = FilterBank::new(vec![model], ThetaPosterior::point_mass(theta)).expect("one model, one point");
        Self { policy, bank }
    }
}

impl Controller for FofiController {
    fn start(&mut self, y0: usize) -> Result<()> {
        self.bank.start(y0)
    }

    fn choose(&mut self, t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        let x = argmax_first(&self.bank.mixed_belief());
        let t = t.min(self.policy.horizon - 1);
        Ok(self.policy.controls[t][x])
    }

    fn observe(&mut self, u: usize, y: usize) -> Result<()> {
        self.bank.observe(u, y).map(|_| ())
    }
}
