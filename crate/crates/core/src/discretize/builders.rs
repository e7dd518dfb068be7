//! Example model families: the six-state chain, the adversarial game, the
//! stochastic Morris-Lecar neuron and the PCR template-growth model.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{discretize_model, Axis, GridSpec, SdeSpec};
use crate::error::Result;
use crate::model::{ControlSet, EmissionDeps, ModelFamily, ModelParts, PomdpModel, ThetaDomain};

/// Chosen strategy `w` is executed with probability .8, the other with .2.
pub const ADVERSARIAL_RANDOMIZER: [f64; 4] = [0.8, 0.2, 0.2, 0.8];

/// Ten-point grid over the half-saturation constant.
pub const PCR_PRIOR_GRID: [f64; 10] = [1.7, 2.4, 3.1, 3.8, 4.5, 5.2, 5.9, 6.6, 7.3, 8.0];

fn six_state_transitions(p: f64) -> Vec<Vec<Vec<f64>>> {
    [1.0, -1.0]
        .iter()
        .map(|&u| {
            vec![
                vec![0.5 - p / 4.0 + u / 4.0, p / 2.0, 0.5 - p / 4.0 - u / 4.0],
                vec![1.0 / 3.0; 3],
                vec![0.4 - u / 4.0, 0.15, 0.45 + u / 4.0],
            ]
        })
        .collect()
}

fn six_state_domain() -> ThetaDomain {
    ThetaDomain::new(0.0, 0.5).expect("static domain")
}

/// The three-state chain whose binary observation depends on the current
/// state and the previous observation (not in standard form). Controls are
/// `+1` (index 0) and `-1` (index 1).
pub fn six_state_raw(p: f64) -> Result<PomdpModel> {
    six_state_domain().check(p)?;
    let mut transition = Vec::with_capacity(18);
    for u in six_state_transitions(p) {
        for row in u {
            transition.extend(row);
        }
    }
    // p(y_{t+1} | x_t, y_t) laid out [x_t][y_t][y_{t+1}]
    let stay = 1.0 - p / 2.0;
    let flip = p / 2.0;
    let emission = vec![
        0.5, 0.5, 0.5, 0.5, //
        0.5, 0.5, 0.5, 0.5, //
        stay, flip, flip, stay,
    ];
    PomdpModel::from_parts(ModelParts {
        n_states: 3,
        n_obs: 2,
        controls: ControlSet::from_values(&[1.0, -1.0])?,
        transition,
        emission_deps: EmissionDeps {
            x_next: false,
            x_prev: true,
            y_prev: true,
        },
        emission,
        initial_state: vec![1.0 / 3.0; 3],
        initial_obs: vec![0.5, 0.5],
        randomizer: None,
    })
}

/// Six-state family in standard form: state `x * 2 + y` carries the current
/// observation. Parameter `p` in `[0, .5]`.
pub fn six_state() -> ModelFamily {
    ModelFamily::new("six-state", six_state_domain(), |p| {
        Ok(six_state_raw(p)?.augment_autoregressive().model)
    })
}

/// The latent three-state chain alone, observed perfectly.
pub fn six_state_latent() -> ModelFamily {
    ModelFamily::new("six-state-latent", six_state_domain(), |p| {
        let eye = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        PomdpModel::standard(
            ControlSet::from_values(&[1.0, -1.0])?,
            &six_state_transitions(p),
            &eye,
            vec![1.0 / 3.0; 3],
        )
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adversarial game with state `(S_t, U_{t-1})`, index `s * 2 + u_prev`,
/// where `s = 0` is the Nash strategy (`S = -1`) and `s = 1` the
/// Gamble-safe one (`S = +1`); controls `+1` (index 0) and `-1` (index 1).
/// The observation is `(Y_t, U_{t-1})`, index `y * 2 + u_prev` with `y = 0`
/// for right. Chosen strategies are executed through
/// [`ADVERSARIAL_RANDOMIZER`].
pub fn adversarial() -> ModelFamily {
    let domain = ThetaDomain::new(-3.0, 3.0).expect("static domain");
    ModelFamily::new("adversarial", domain, |theta| {
        let s_val = [-1.0, 1.0];
        let u_val = [1.0, -1.0];
        let mut transition = vec![0.0; 2 * 4 * 4];
        for (ui, &u) in u_val.iter().enumerate() {
            for (si, &s) in s_val.iter().enumerate() {
                for (pi, &u_prev) in u_val.iter().enumerate() {
                    let p_nash = logistic(1.2 * u + u_prev + theta * s);
                    let from = si * 2 + pi;
                    let row = &mut transition[(ui * 4 + from) * 4..(ui * 4 + from + 1) * 4];
                    row[ui] = p_nash;
                    row[2 + ui] = 1.0 - p_nash;
                }
            }
        }
        let mut emission = vec![0.0; 16];
        for si in 0..2 {
            for pi in 0..2 {
                let row = &mut emission[(si * 2 + pi) * 4..(si * 2 + pi + 1) * 4];
                if si == 0 {
                    row[pi] = 0.5;
                    row[2 + pi] = 0.5;
                } else {
                    row[pi] = 1.0;
                }
            }
        }
        PomdpModel::from_parts(ModelParts {
            n_states: 4,
            n_obs: 4,
            controls: ControlSet::from_values(&[1.0, -1.0])?,
            transition,
            emission_deps: EmissionDeps::STANDARD,
            emission,
            initial_state: vec![0.25; 4],
            initial_obs: vec![0.25; 4],
            randomizer: Some(ADVERSARIAL_RANDOMIZER.to_vec()),
        })
    })
}

/// Which Morris-Lecar constant plays the role of the unknown parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorrisLecarParam {
    #[serde(rename = "c_m")]
    Cm,
    GCa,
    Phi,
}

impl MorrisLecarParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cm => "c_m",
            Self::GCa => "g_ca",
            Self::Phi => "phi",
        }
    }

    pub fn domain(self) -> ThetaDomain {
        let (lo, hi) = match self {
            Self::Cm => (10.0, 40.0),
            Self::GCa => (2.0, 8.0),
            Self::Phi => (0.01, 0.1),
        };
        ThetaDomain::new(lo, hi).expect("static domain")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorrisLecarParams {
    pub c_m: f64,
    pub g_ca: f64,
    pub g_k: f64,
    pub g_l: f64,
    pub e_k: f64,
    pub e_l: f64,
    pub e_ca: f64,
    pub phi: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub sigma_v: f64,
    pub sigma_n: f64,
    pub sigma_obs: f64,
    pub dt: f64,
    pub v_range: (f64, f64),
    pub v_cells: usize,
    pub n_cells: usize,
    pub obs_cells: usize,
    pub controls: Vec<f64>,
}

impl Default for MorrisLecarParams {
    fn default() -> Self {
        Self {
            c_m: 20.0,
            g_ca: 4.4,
            g_k: 8.0,
            g_l: 2.0,
            e_k: -84.0,
            e_l: -60.0,
            e_ca: 120.0,
            phi: 0.04,
            v1: -1.2,
            v2: 18.0,
            v3: 2.0,
            v4: 30.0,
            sigma_v: 1.0,
            sigma_n: 1.0,
            sigma_obs: 1.0,
            dt: 1.0,
            v_range: (-75.0, 45.0),
            v_cells: 25,
            n_cells: 25,
            obs_cells: 20,
            controls: vec![-1.5, 0.0, 1.5, 3.0, 4.5, 6.0],
        }
    }
}

impl MorrisLecarParams {
    pub fn m_inf(&self, v: f64) -> f64 {
        0.5 * (1.0 + ((v - self.v1) / self.v2).tanh())
    }

    pub fn n_inf(&self, v: f64) -> f64 {
        0.5 * (1.0 + ((v - self.v3) / self.v4).tanh())
    }

    pub fn tau_n(&self, v: f64) -> f64 {
        1.0 / ((v - self.v3) / (2.0 * self.v4)).cosh()
    }

    /// `(dv/dt, dn/dt)` at current `i_app`.
    pub fn drift(&self, v: f64, n: f64, i_app: f64) -> (f64, f64) {
        let f1 = i_app
            - self.g_l * (v - self.e_l)
            - self.g_k * n * (v - self.e_k)
            - self.g_ca * self.m_inf(v) * (v - self.e_ca);
        let f2 = -self.phi * (n - self.n_inf(v)) / self.tau_n(v);
        (f1 / self.c_m, f2)
    }

    fn with(&self, param: MorrisLecarParam, value: f64) -> Self {
        let mut p = self.clone();
        match param {
            MorrisLecarParam::Cm => p.c_m = value,
            MorrisLecarParam::GCa => p.g_ca = value,
            MorrisLecarParam::Phi => p.phi = value,
        }
        p
    }

    pub fn state_grid(&self) -> Result<GridSpec> {
        GridSpec::new(vec![
            Axis::new(self.v_range.0, self.v_range.1, self.v_cells)?,
            Axis::new(0.0, 1.0, self.n_cells)?,
        ])
    }

    pub fn obs_grid(&self) -> Result<GridSpec> {
        GridSpec::uniform_1d(self.v_range.0, self.v_range.1, self.obs_cells)
    }

    fn spec(&self) -> SdeSpec {
        let p = self.clone();
        SdeSpec {
            drift: Arc::new(move |x: &[f64], i_app: f64| {
                let (dv, dn) = p.drift(x[0], x[1], i_app);
                vec![dv, dn]
            }),
            sigma1: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                self.sigma_v * self.sigma_v,
                self.sigma_n * self.sigma_n,
            ])),
            dt: self.dt,
            obs_map: Arc::new(|x: &[f64]| vec![x[0]]),
            sigma2: DMatrix::from_element(1, 1, self.sigma_obs * self.sigma_obs),
            controls: self.controls.clone(),
        }
    }
}

/// Morris-Lecar neuron on a (v, n) grid with noisy voltage observations;
/// `param` selects the unknown constant. The initial state is uniform.
pub fn morris_lecar(params: MorrisLecarParams, param: MorrisLecarParam) -> Result<ModelFamily> {
    let state_grid = params.state_grid()?;
    let obs_grid = params.obs_grid()?;
    let k = state_grid.n_cells();
    Ok(ModelFamily::new(
        format!("morris-lecar-{}", param.name()),
        param.domain(),
        move |theta| {
            let spec = params.with(param, theta).spec();
            discretize_model(&spec, &state_grid, &obs_grid, vec![1.0 / k as f64; k])
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcrParams {
    pub a: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub dt: f64,
    pub x_range: (f64, f64),
    pub x_cells: usize,
    pub y_cells: usize,
    pub controls: Vec<f64>,
    pub b_domain: (f64, f64),
}

impl Default for PcrParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            sigma1: 1.0,
            sigma2: 1.0,
            dt: 1.0,
            x_range: (0.0, 15.0),
            x_cells: 200,
            y_cells: 50,
            controls: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            b_domain: (1.7, 8.0),
        }
    }
}

impl PcrParams {
    /// Euler mean of the next template amount.
    pub fn euler_mean(&self, x: f64, b: f64, u: f64) -> f64 {
        let kept = (1.0 - u) * x;
        kept + self.dt * self.a * kept / (b + kept).powi(2)
    }
}

/// PCR template growth with fractional removal `u`, parameterized by the
/// half-saturation constant `b`. The initial state is uniform over the grid.
pub fn pcr(params: PcrParams) -> Result<ModelFamily> {
    let state_grid = GridSpec::uniform_1d(params.x_range.0, params.x_range.1, params.x_cells)?;
    let obs_grid = GridSpec::uniform_1d(params.x_range.0, params.x_range.1, params.y_cells)?;
    let domain = ThetaDomain::new(params.b_domain.0, params.b_domain.1)?;
    let k = state_grid.n_cells();
    Ok(ModelFamily::new("pcr", domain, move |b| {
        let p = params.clone();
        let dt = p.dt;
        let spec = SdeSpec {
            // removal acts within the step, so fold it into the drift per unit time
            drift: Arc::new(move |x: &[f64], u: f64| vec![(p.euler_mean(x[0], b, u) - x[0]) / dt]),
            sigma1: DMatrix::from_element(1, 1, params.sigma1 * params.sigma1),
            dt,
            obs_map: Arc::new(|x: &[f64]| x.to_vec()),
            sigma2: DMatrix::from_element(1, 1, params.sigma2 * params.sigma2),
            controls: params.controls.clone(),
        };
        discretize_model(&spec, &state_grid, &obs_grid, vec![1.0 / k as f64; k])
    }))
}
