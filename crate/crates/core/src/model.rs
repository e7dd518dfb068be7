//! Parametric POMDP representation.
//!
//! Transition tensors are stored row-stochastic with axis order
//! `(u, x_from, x_to)`. The emission kernel is
//! `p(y_{t+1} | x_{t+1}, x_t, y_t)` restricted to the axes selected by an
//! [`EmissionDeps`] mask, stored row-major in the order
//! `[x_next][x_prev][y_prev][y]` with unselected axes omitted.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities consumed by a logarithm are clamped below at this value, and
/// predictive probabilities at or below it count as impossible.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance for row sums of stochastic tensors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Tolerance for belief and posterior normalization.
pub const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSet {
    labels: Vec<String>,
}

impl ControlSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidArgument("control set must not be empty".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate control label {a:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Controls labelled by numeric values, e.g. applied currents.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| format_label(*v)))
    }

    /// Anonymous controls `0..n`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

fn format_label(v: f64) -> String {
    if v > 0.0 {
        format!("+{v}")
    } else {
        format!("{v}")
    }
}

/// Which history axes the emission kernel conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionDeps {
    pub x_next: bool,
    pub x_prev: bool,
    pub y_prev: bool,
}

impl EmissionDeps {
    pub const STANDARD: Self = Self {
        x_next: true,
        x_prev: false,
        y_prev: false,
    };

    pub fn is_standard(self) -> bool {
        self == Self::STANDARD
    }

    /// The first observation is drawn from the emission given `x_0` only when
    /// the kernel needs no history; otherwise it comes from `initial_obs`.
    pub fn y0_from_emission(self) -> bool {
        !self.x_prev && !self.y_prev
    }
}

impl Default for EmissionDeps {
    fn default() -> Self {
        Self::STANDARD
    }
}

impl fmt::Display for EmissionDeps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.x_next {
            parts.push("x_next");
        }
        if self.x_prev {
            parts.push("x_prev");
        }
        if self.y_prev {
            parts.push("y_prev");
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

/// Raw tensors of a model. Shapes are checked by [`PomdpModel::from_parts`];
/// stochasticity is reported by [`PomdpModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub n_states: usize,
    pub n_obs: usize,
    pub controls: ControlSet,
    pub transition: Vec<f64>,
    pub emission_deps: EmissionDeps,
    pub emission: Vec<f64>,
    pub initial_state: Vec<f64>,
    pub initial_obs: Vec<f64>,
    pub randomizer: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    n_states: usize,
    n_obs: usize,
    controls: ControlSet,
    transition: Vec<f64>,
    emission_deps: EmissionDeps,
    emission: Vec<f64>,
    initial_state: Vec<f64>,
    initial_obs: Vec<f64>,
    randomizer: Option<Vec<f64>>,
}

/// One violated invariant, located by tensor and index.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeEntry { tensor: &'static str, index: Vec<usize>, value: f64 },
    NonFinite { tensor: &'static str, index: Vec<usize> },
    TransitionRowSum { control: usize, from: usize, sum: f64 },
    EmissionRowSum { index: Vec<usize>, sum: f64 },
    InitialStateSum { sum: f64 },
    InitialObsSum { sum: f64 },
    RandomizerRowSum { chosen: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NegativeEntry { tensor, index, value } => {
                write!(f, "{tensor}{index:?} is negative ({value})")
            }
            Self::NonFinite { tensor, index } => write!(f, "{tensor}{index:?} is not finite"),
            Self::TransitionRowSum { control, from, sum } => {
                write!(f, "transition slice (u={control}, x_from={from}) sums to {sum}")
            }
            Self::EmissionRowSum { index, sum } => {
                write!(f, "emission slice {index:?} sums to {sum}")
            }
            Self::InitialStateSum { sum } => write!(f, "initial_state sums to {sum}"),
            Self::InitialObsSum { sum } => write!(f, "initial_obs sums to {sum}"),
            Self::RandomizerRowSum { chosen, sum } => {
                write!(f, "randomizer row w={chosen} sums to {sum}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

impl PomdpModel {
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        let ModelParts {
            n_states,
            n_obs,
            controls,
            transition,
            emission_deps,
            emission,
            initial_state,
            initial_obs,
            randomizer,
        } = parts;
        if n_states == 0 || n_obs == 0 {
            return Err(Error::Shape("state and observation counts must be positive".into()));
        }
        let l = controls.len();
        check_len("transition", transition.len(), l * n_states * n_states)?;
        check_len(
            "emission",
            emission.len(),
            emission_len(emission_deps, n_states, n_obs),
        )?;
        check_len("initial_state", initial_state.len(), n_states)?;
        check_len("initial_obs", initial_obs.len(), n_obs)?;
        if let Some(r) = &randomizer {
            check_len("randomizer", r.len(), l * l)?;
        }
        Ok(Self {
            n_states,
            n_obs,
            controls,
            transition,
            emission_deps,
            emission,
            initial_state,
            initial_obs,
            randomizer,
        })
    }

    /// Convenience constructor for the standard form: `transition[u][x][x']`,
    /// `emission[x][y]`.
    pub fn standard(
        controls: ControlSet,
        transition: &[Vec<Vec<f64>>],
        emission: &[Vec<f64>],
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        let k = initial_state.len();
        let n_obs = emission.first().map_or(0, Vec::len);
        let trans: Vec<f64> = transition.iter().flatten().flatten().copied().collect();
        let emis: Vec<f64> = emission.iter().flatten().copied().collect();
        Self::from_parts(ModelParts {
            n_states: k,
            n_obs,
            controls,
            transition: trans,
            emission_deps: EmissionDeps::STANDARD,
            emission: emis,
            initial_state,
            initial_obs: vec![1.0 / n_obs.max(1) as f64; n_obs],
            randomizer: None,
        })
    }

    pub fn with_randomizer(mut self, randomizer: Vec<f64>) -> Result<Self> {
        let l = self.controls.len();
        check_len("randomizer", randomizer.len(), l * l)?;
        self.randomizer = Some(randomizer);
        Ok(self)
    }

    pub fn with_initial_state(mut self, initial_state: Vec<f64>) -> Result<Self> {
        check_len("initial_state", initial_state.len(), self.n_states)?;
        self.initial_state = initial_state;
        Ok(self)
    }

    pub fn into_parts(self) -> ModelParts {
        ModelParts {
            n_states: self.n_states,
            n_obs: self.n_obs,
            controls: self.controls,
            transition: self.transition,
            emission_deps: self.emission_deps,
            emission: self.emission,
            initial_state: self.initial_state,
            initial_obs: self.initial_obs,
            randomizer: self.randomizer,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn emission_deps(&self) -> EmissionDeps {
        self.emission_deps
    }

    pub fn is_standard(&self) -> bool {
        self.emission_deps.is_standard()
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub fn emission_tensor(&self) -> &[f64] {
        &self.emission
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn initial_obs(&self) -> &[f64] {
        &self.initial_obs
    }

    pub fn randomizer(&self) -> Option<&[f64]> {
        self.randomizer.as_deref()
    }

    #[inline]
    pub fn transition(&self, u: usize, from: usize, to: usize) -> f64 {
        let k = self.n_states;
        self.transition[(u * k + from) * k + to]
    }

    /// Row `p(. | x = from, u)`.
    #[inline]
    pub fn transition_row(&self, u: usize, from: usize) -> &[f64] {
        let k = self.n_states;
        let start = (u * k + from) * k;
        &self.transition[start..start + k]
    }

    /// The `K x K` slice for control `u` as a flat row-major block.
    #[inline]
    pub fn transition_block(&self, u: usize) -> &[f64] {
        let kk = self.n_states * self.n_states;
        &self.transition[u * kk..(u + 1) * kk]
    }

    /// Row-stochastic `K x K` transition matrix for control `u`, `x_from` on rows.
    pub fn transition_matrix(&self, u: usize) -> Result<Array2<f64>> {
        self.check_control(u)?;
        let k = self.n_states;
        Ok(Array2::from_shape_vec((k, k), self.transition_block(u).to_vec())
            .expect("block has K*K entries"))
    }

    /// `p(y_{t+1} = y | x_{t+1}, x_t, y_t)`; arguments for axes outside the
    /// dependency mask are ignored.
    pub fn emission_prob(&self, y: usize, x_next: usize, x_prev: usize, y_prev: usize) -> f64 {
        self.emission[self.emission_offset(x_next, x_prev, y_prev) + y]
    }

    fn emission_offset(&self, x_next: usize, x_prev: usize, y_prev: usize) -> usize {
        let mut idx = 0;
        if self.emission_deps.x_next {
            idx = x_next;
        }
        if self.emission_deps.x_prev {
            idx = idx * self.n_states + x_prev;
        }
        if self.emission_deps.y_prev {
            idx = idx * self.n_obs + y_prev;
        }
        idx * self.n_obs
    }

    /// `p(y | x)` for standard-form models.
    #[inline]
    pub fn emission_std(&self, x: usize, y: usize) -> f64 {
        self.emission[x * self.n_obs + y]
    }

    /// Emission row `p(. | x)` for standard-form models.
    #[inline]
    pub fn emission_row(&self, x: usize) -> &[f64] {
        &self.emission[x * self.n_obs..(x + 1) * self.n_obs]
    }

    pub fn require_standard(&self) -> Result<()> {
        if self.is_standard() {
            Ok(())
        } else {
            Err(Error::NonStandardEmission)
        }
    }

    pub fn check_control(&self, u: usize) -> Result<()> {
        check_index("control", u, self.controls.len())
    }

    pub fn check_obs(&self, y: usize) -> Result<()> {
        check_index("observation", y, self.n_obs)
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        check_index("state", x, self.n_states)
    }

    /// Distribution of the executed control given the chosen control `w`.
    pub fn apply_randomizer(&self, w: usize) -> Result<Vec<f64>> {
        self.check_control(w)?;
        let l = self.controls.len();
        Ok(match &self.randomizer {
            Some(r) => r[w * l..(w + 1) * l].to_vec(),
            None => {
                let mut v = vec![0.0; l];
                v[w] = 1.0;
                v
            }
        })
    }

    /// `q(u | w)`; identity when the model has no randomizer.
    #[inline]
    pub fn randomizer_prob(&self, w: usize, u: usize) -> f64 {
        match &self.randomizer {
            Some(r) => r[w * self.controls.len() + u],
            None => {
                if w == u {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Law of `y_0`: emission given `x_0` when the kernel needs no history,
    /// `initial_obs` otherwise.
    pub fn y0_distribution(&self) -> Vec<f64> {
        if self.emission_deps.y0_from_emission() {
            let mut out = vec![0.0; self.n_obs];
            for x in 0..self.n_states {
                let w = self.initial_state[x];
                if w == 0.0 {
                    continue;
                }
                let off = self.emission_offset(x, 0, 0);
                for (o, e) in out.iter_mut().zip(&self.emission[off..off + self.n_obs]) {
                    *o += w * e;
                }
            }
            out
        } else {
            self.initial_obs.clone()
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let k = self.n_states;
        let l = self.controls.len();
        for u in 0..l {
            for from in 0..k {
                let row = self.transition_row(u, from);
                check_entries("transition", row, &[u, from], &mut violations);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
                    violations.push(Violation::TransitionRowSum { control: u, from, sum });
                }
            }
        }
        let rows = self.emission.len() / self.n_obs;
        let mut dims = Vec::new();
        if self.emission_deps.x_next {
            dims.push(k);
        }
        if self.emission_deps.x_prev {
            dims.push(k);
        }
        if self.emission_deps.y_prev {
            dims.push(self.n_obs);
        }
        for r in 0..rows {
            let row = &self.emission[r * self.n_obs..(r + 1) * self.n_obs];
            let index = unravel(r, &dims);
            check_entries("emission", row, &index, &mut violations);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
                violations.push(Violation::EmissionRowSum { index, sum });
            }
        }
        check_entries("initial_state", &self.initial_state, &[], &mut violations);
        let sum: f64 = self.initial_state.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
            violations.push(Violation::InitialStateSum { sum });
        }
        check_entries("initial_obs", &self.initial_obs, &[], &mut violations);
        let sum: f64 = self.initial_obs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
            violations.push(Violation::InitialObsSum { sum });
        }
        if let Some(r) = &self.randomizer {
            for w in 0..l {
                let row = &r[w * l..(w + 1) * l];
                check_entries("randomizer", row, &[w], &mut violations);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
                    violations.push(Violation::RandomizerRowSum { chosen: w, sum });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Rewrite a model whose emission depends on `x_t` and/or `y_t` into the
    /// standard form by carrying the current observation in the state:
    /// `z_t = (x_t, y_t)`, `z = x * L + y`. The new state emits its own
    /// observation component deterministically, and the transition draws
    /// `x_{t+1}` then `y_{t+1}` from the original kernels, so the law of
    /// `y_{0:T}` under any control sequence is unchanged.
    pub fn augment_autoregressive(&self) -> Augmented {
        if self.is_standard() {
            return Augmented {
                model: self.clone(),
                already_standard: true,
                origin: (0..self.n_states).map(|x| (x, None)).collect(),
            };
        }
        let k = self.n_states;
        let n_obs = self.n_obs;
        let l = self.controls.len();
        let kk = k * n_obs;
        let mut transition = vec![0.0; l * kk * kk];
        for u in 0..l {
            for x in 0..k {
                for y in 0..n_obs {
                    let z = x * n_obs + y;
                    let row = &mut transition[(u * kk + z) * kk..(u * kk + z + 1) * kk];
                    for x2 in 0..k {
                        let px = self.transition(u, x, x2);
                        if px == 0.0 {
                            continue;
                        }
                        for y2 in 0..n_obs {
                            row[x2 * n_obs + y2] = px * self.emission_prob(y2, x2, x, y);
                        }
                    }
                }
            }
        }
        let mut emission = vec![0.0; kk * n_obs];
        for z in 0..kk {
            emission[z * n_obs + z % n_obs] = 1.0;
        }
        let y0_from_emission = self.emission_deps.y0_from_emission();
        let mut initial_state = vec![0.0; kk];
        for x in 0..k {
            for y in 0..n_obs {
                let py = if y0_from_emission {
                    self.emission_prob(y, x, 0, 0)
                } else {
                    self.initial_obs[y]
                };
                initial_state[x * n_obs + y] = self.initial_state[x] * py;
            }
        }
        let model = PomdpModel {
            n_states: kk,
            n_obs,
            controls: self.controls.clone(),
            transition,
            emission_deps: EmissionDeps::STANDARD,
            emission,
            initial_state,
            initial_obs: self.initial_obs.clone(),
            randomizer: self.randomizer.clone(),
        };
        Augmented {
            model,
            already_standard: false,
            origin: (0..kk).map(|z| (z / n_obs, Some(z % n_obs))).collect(),
        }
    }
}

/// Result of [`PomdpModel::augment_autoregressive`].
#[derive(Debug, Clone)]
pub struct Augmented {
    pub model: PomdpModel,
    /// The input was already standard and was returned unchanged.
    pub already_standard: bool,
    /// For each new state, the original state and carried observation.
    pub origin: Vec<(usize, Option<usize>)>,
}

fn emission_len(deps: EmissionDeps, k: usize, n_obs: usize) -> usize {
    let mut n = n_obs;
    if deps.x_next {
        n *= k;
    }
    if deps.x_prev {
        n *= k;
    }
    if deps.y_prev {
        n *= n_obs;
    }
    n
}

fn unravel(mut r: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for (slot, d) in idx.iter_mut().zip(dims).rev() {
        *slot = r % d;
        r /= d;
    }
    idx
}

fn check_entries(tensor: &'static str, row: &[f64], prefix: &[usize], out: &mut Vec<Violation>) {
    for (j, &v) in row.iter().enumerate() {
        let mut index = prefix.to_vec();
        index.push(j);
        if !v.is_finite() {
            out.push(Violation::NonFinite { tensor, index });
        } else if v < 0.0 {
            out.push(Violation::NegativeEntry { tensor, index, value: v });
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what} has {got} entries, expected {want}")))
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, limit })
    }
}

/// Free-function form of [`PomdpModel::validate`].
pub fn validate_model(model: &PomdpModel) -> ValidationReport {
    model.validate()
}

/// Free-function form of [`PomdpModel::transition_matrix`].
pub fn transition_matrix(model: &PomdpModel, u: usize) -> Result<Array2<f64>> {
    model.transition_matrix(u)
}

/// Free-function form of [`PomdpModel::apply_randomizer`].
pub fn apply_randomizer(model: &PomdpModel, w: usize) -> Result<Vec<f64>> {
    model.apply_randomizer(w)
}

/// Free-function form of [`PomdpModel::augment_autoregressive`].
pub fn augment_autoregressive(model: &PomdpModel) -> Augmented {
    model.augment_autoregressive()
}

/// Probability vector over latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    weights: Vec<f64>,
}

impl BeliefState {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("belief must have at least one state".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("belief weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!("belief sums to {sum}")));
        }
        Ok(Self { weights })
    }

    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn point(k: usize, x: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[x] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Most probable state; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_first(&self.weights)
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in v.iter().enumerate().skip(1) {
        if w > v[best] {
            best = i;
        }
    }
    best
}

/// Closed interval of admissible parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ThetaDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad parameter domain [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta <= self.hi
    }

    pub fn check(&self, theta: f64) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                theta,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

type ModelFn = dyn Fn(f64) -> Result<PomdpModel> + Send + Sync;

/// Deterministic map from a scalar parameter to a model with fixed dimensions.
#[derive(Clone)]
pub struct ModelFamily {
    name: String,
    domain: ThetaDomain,
    eval: Arc<ModelFn>,
}

impl fmt::Debug for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelFamily")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ModelFamily {
    pub fn new(
        name: impl Into<String>,
        domain: ThetaDomain,
        eval: impl Fn(f64) -> Result<PomdpModel> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            domain,
            eval: Arc::new(eval),
        }
    }

    /// A family whose model does not depend on the parameter.
    pub fn constant(name: impl Into<String>, domain: ThetaDomain, model: PomdpModel) -> Self {
        Self::new(name, domain, move |_| Ok(model.clone()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> ThetaDomain {
        self.domain
    }

    pub fn eval(&self, theta: f64) -> Result<PomdpModel> {
        self.domain.check(theta)?;
        (self.eval)(theta)
    }

    /// Models at `theta` and its finite-difference neighbours.
    pub fn stencil(&self, theta: f64, h: Option<f64>) -> Result<ModelStencil> {
        let h = h.unwrap_or_else(|| default_step(theta));
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
        }
        let center = Arc::new(self.eval(theta)?);
        let (lo_theta, hi_theta) = fd_points(self.domain, theta, h);
        let lower = if lo_theta == theta {
            Arc::clone(&center)
        } else {
            Arc::new(self.eval(lo_theta)?)
        };
        let upper = if hi_theta == theta {
            Arc::clone(&center)
        } else {
            Arc::new(self.eval(hi_theta)?)
        };
        Ok(ModelStencil {
            theta,
            center,
            lower,
            upper,
            width: hi_theta - lo_theta,
        })
    }
}

/// Default finite-difference step `1e-4 * max(1, |theta|)`.
pub fn default_step(theta: f64) -> f64 {
    1e-4 * theta.abs().max(1.0)
}

/// Central points when both fit in the domain; one-sided with the same step otherwise.
pub(crate) fn fd_points(domain: ThetaDomain, theta: f64, h: f64) -> (f64, f64) {
    let lo_ok = theta - h >= domain.lo;
    let hi_ok = theta + h <= domain.hi;
    match (lo_ok, hi_ok) {
        (true, true) => (theta - h, theta + h),
        (false, true) => (theta, theta + h),
        (true, false) => (theta - h, theta),
        (false, false) => (theta, theta),
    }
}

/// A model evaluated at `theta` together with the neighbours used for
/// finite-difference scores.
#[derive(Debug, Clone)]
pub struct ModelStencil {
    pub theta: f64,
    pub center: Arc<PomdpModel>,
    pub lower: Arc<PomdpModel>,
    pub upper: Arc<PomdpModel>,
    /// `theta_upper - theta_lower`; zero when the domain is a single point.
    pub width: f64,
}

impl ModelStencil {
    /// Log-derivative from probabilities at the three points. Zero when any
    /// of them is at or below [`PROB_FLOOR`].
    #[inline]
    pub fn score(&self, center: f64, lower: f64, upper: f64) -> f64 {
        fd_log_score(center, lower, upper, self.width)
    }
}

#[inline]
pub(crate) fn fd_log_score(center: f64, lower: f64, upper: f64, width: f64) -> f64 {
    if center <= PROB_FLOOR || lower <= PROB_FLOOR || upper <= PROB_FLOOR || width <= 0.0 {
        return 0.0;
    }
    (upper.ln() - lower.ln()) / width
}

/// `ln(max(p, PROB_FLOOR))`.
#[inline]
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}
