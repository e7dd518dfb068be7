//! Run configuration (TOML). Every section is checked before any work starts.

use std::path::{Path, PathBuf};

use pomdp_design::discretize::{
    adversarial, morris_lecar, pcr, six_state, MorrisLecarParam, MorrisLecarParams, PcrParams,
};
use pomdp_design::experiment::{Estimator, PriorSpec, Variant};
use pomdp_design::{ModelFamily, ThetaDomain, ThetaPosterior};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub model: ModelConfig,
    pub theta: ThetaConfig,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    pub horizon: usize,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    SixState,
    Adversarial,
    Pcr,
    MorrisLecar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub builtin: Option<Builtin>,
    /// Model file written by `export-model`; its tensors do not depend on theta.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub pcr: Option<PcrParams>,
    #[serde(default)]
    pub morris_lecar: Option<MorrisLecarParams>,
    /// Which Morris-Lecar constant is the unknown parameter.
    #[serde(default)]
    pub parameter: Option<MorrisLecarParam>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    /// True (or design) parameter value.
    #[serde(default)]
    pub value: Option<f64>,
    /// Prior grid.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// Prior weights; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn default_lag() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverConfig {
    Pofi {
        #[serde(default = "default_lag")]
        m: usize,
        /// Window-start state law.
        #[serde(default)]
        window_prior: Option<Vec<f64>>,
        #[serde(default)]
        budget: Option<f64>,
    },
    Fofi,
    Via {
        #[serde(default = "default_lag")]
        m: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_sweeps")]
        max_sweeps: usize,
        #[serde(default)]
        window_prior: Option<Vec<f64>>,
    },
    Fixed {
        u: usize,
    },
    Random,
}

fn default_lambda() -> f64 {
    0.9
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_sweeps() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub estimator: Estimator,
    /// Policy arms; derived from `solver` when omitted.
    #[serde(default)]
    pub variants: Option<Vec<Variant>>,
    /// Replications used with `--slow`.
    #[serde(default)]
    pub slow_reps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| schema(e.to_string()))?;
        cfg.check(path.parent().unwrap_or(Path::new(".")))?;
        Ok((cfg, text))
    }

    /// Structural checks that need no model evaluation.
    fn check(&self, base: &Path) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(schema(format!("schema: unsupported version {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        let m = &self.model;
        match (m.builtin, &m.file) {
            (Some(_), Some(_)) => return Err(schema("model: give either `builtin` or `file`, not both")),
            (None, None) => return Err(schema("model: missing `builtin` or `file`")),
            (None, Some(f)) if !base.join(f).exists() && !f.exists() => {
                return Err(schema(format!("model.file: {} does not exist", f.display())))
            }
            _ => {}
        }
        if m.pcr.is_some() && m.builtin != Some(Builtin::Pcr) {
            return Err(schema("model.pcr: only valid with builtin = \"pcr\""));
        }
        if (m.morris_lecar.is_some() || m.parameter.is_some()) && m.builtin != Some(Builtin::MorrisLecar) {
            return Err(schema("model.morris_lecar / model.parameter: only valid with builtin = \"morris-lecar\""));
        }
        let t = &self.theta;
        if t.value.is_none() && t.grid.is_none() {
            return Err(schema("theta: missing `value` or `grid`"));
        }
        if t.weights.is_some() && t.grid.is_none() {
            return Err(schema("theta.weights: requires theta.grid"));
        }
        if let Some(v) = t.value {
            if !v.is_finite() {
                return Err(schema("theta.value: must be finite"));
            }
        }
        if self.horizon == 0 {
            return Err(schema("horizon: must be at least 1"));
        }
        if let Some(SolverConfig::Via { lambda, epsilon, .. }) = &self.solver {
            if !(0.0..1.0).contains(lambda) {
                return Err(schema("solver.lambda: must lie in [0, 1)"));
            }
            if !(*epsilon > 0.0) {
                return Err(schema("solver.epsilon: must be positive"));
            }
        }
        if let Some(s) = &self.study {
            if s.reps == 0 {
                return Err(schema("study.reps: must be at least 1"));
            }
            if s.slow_reps == Some(0) {
                return Err(schema("study.slow_reps: must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn family(&self, base: &Path) -> Result<ModelFamily, CliError> {
        let m = &self.model;
        if let Some(f) = &m.file {
            let path = if f.is_absolute() || f.exists() { f.clone() } else { base.join(f) };
            let model = pomdp_design::io::load_model(&path)?;
            let domain = ThetaDomain::new(f64::MIN, f64::MAX)?;
            return Ok(ModelFamily::constant(format!("file:{}", path.display()), domain, model));
        }
        Ok(match m.builtin.expect("checked") {
            Builtin::SixState => six_state(),
            Builtin::Adversarial => adversarial(),
            Builtin::Pcr => pcr(m.pcr.clone().unwrap_or_default())?,
            Builtin::MorrisLecar => morris_lecar(
                m.morris_lecar.clone().unwrap_or_default(),
                m.parameter.ok_or_else(|| schema("model.parameter: required for morris-lecar (c_m, g_ca or phi)"))?,
            )?,
        })
    }

    pub fn theta_value(&self) -> Result<f64, CliError> {
        self.theta.value.ok_or_else(|| schema("theta.value: required by this command"))
    }

    pub fn prior(&self) -> Result<Option<ThetaPosterior>, CliError> {
        Ok(match &self.theta.grid {
            Some(grid) => Some(self.prior_spec(grid).posterior()?),
            None => None,
        })
    }

    pub fn prior_spec(&self, grid: &[f64]) -> PriorSpec {
        PriorSpec {
            grid: grid.to_vec(),
            weights: self.theta.weights.clone(),
        }
    }

    pub fn solver(&self) -> Result<&SolverConfig, CliError> {
        self.solver.as_ref().ok_or_else(|| schema("solver: required by this command"))
    }

    pub fn study(&self) -> Result<&StudySection, CliError> {
        self.study.as_ref().ok_or_else(|| schema("study: required by this command"))
    }
}
