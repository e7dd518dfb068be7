//! Text formats: the model tensor file, policy and study CSVs, run logs.
//!
//! CSV numbers use 12 significant digits. Model files print every value in
//! its shortest round-trip form so that export followed by load is bit-exact.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::study::StudyResult;
use crate::fofi::StatePolicy;
use crate::model::{ControlSet, EmissionDeps, ModelParts, PomdpModel};
use crate::pofi::PofiPolicy;
use crate::via::ViaStep;

const MODEL_MAGIC: &str = "pomdp-model 1";

/// `v` with 12 significant digits: positional between `1e-5` and `1e12`,
/// scientific outside, trailing zeros dropped.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let prec = (11 - exp).max(0) as usize;
        let s = format!("{v:.prec$}");
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

/// Serialize a model. Layout:
///
/// ```text
/// pomdp-model 1
/// states K
/// observations L
/// control "<label>"            (one line per control)
/// emission-deps x_next         (comma list or "none")
/// transition                   (l*K lines of K values, [u][from][to])
/// emission                     (lines of L values, axes [x_next][x_prev][y_prev][y])
/// initial-state                (one line of K values)
/// initial-obs                  (one line of L values)
/// randomizer                   (optional, l lines of l values)
/// end
/// ```
pub fn model_to_string(model: &PomdpModel) -> String {
    let mut s = String::new();
    let k = model.n_states();
    let n_obs = model.n_obs();
    let l = model.n_controls();
    s.push_str(MODEL_MAGIC);
    s.push('\n');
    s.push_str(&format!("states {k}\nobservations {n_obs}\n"));
    for label in model.controls().labels() {
        s.push_str(&format!(
            "control {}\n",
            serde_json::to_string(label).expect("string serializes")
        ));
    }
    s.push_str(&format!("emission-deps {}\n", model.emission_deps()));
    s.push_str("transition\n");
    for row in model.transition_tensor().chunks(k) {
        s.push_str(&join(row));
        s.push('\n');
    }
    s.push_str("emission\n");
    for row in model.emission_tensor().chunks(n_obs) {
        s.push_str(&join(row));
        s.push('\n');
    }
    s.push_str("initial-state\n");
    s.push_str(&join(model.initial_state()));
    s.push_str("\ninitial-obs\n");
    s.push_str(&join(model.initial_obs()));
    s.push('\n');
    if let Some(r) = model.randomizer() {
        s.push_str("randomizer\n");
        for row in r.chunks(l) {
            s.push_str(&join(row));
            s.push('\n');
        }
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    text: &'a str,
    /// `(line number, byte offset of line start, content)`
    lines: Vec<(usize, usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = Vec::new();
        let mut offset = 0;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let content = raw.trim_end_matches(['\n', '\r']);
            if !content.trim().is_empty() && !content.trim_start().starts_with('#') {
                lines.push((i + 1, offset, content));
            }
            offset += raw.len();
        }
        Self { text, lines, pos: 0 }
    }

    fn err_at(&self, line: usize, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            line,
            offset,
            msg: msg.into(),
        }
    }

    fn eof(&self, what: &str) -> Error {
        let line = self.text.lines().count() + 1;
        self.err_at(line, self.text.len(), format!("unexpected end of file, expected {what}"))
    }

    fn next(&mut self, what: &str) -> Result<(usize, usize, &'a str)> {
        let l = self.lines.get(self.pos).copied().ok_or_else(|| self.eof(what))?;
        self.pos += 1;
        Ok(l)
    }

    fn peek_keyword(&self) -> Option<&'a str> {
        self.lines
            .get(self.pos)
            .map(|(_, _, c)| c.split_whitespace().next().unwrap_or(""))
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, usize, &'a str)> {
        let (line, off, content) = self.next(key)?;
        let trimmed = content.trim_start();
        let lead = content.len() - trimmed.len();
        let (word, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        if word != key {
            return Err(self.err_at(line, off + lead, format!("expected {key:?}, found {word:?}")));
        }
        let rest_start = off + content.len() - rest.len();
        Ok((line, rest_start, rest))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (line, off, rest) = self.keyword(key)?;
        rest.trim()
            .parse()
            .map_err(|_| self.err_at(line, off, format!("{key} needs a non-negative integer")))
    }

    fn row(&mut self, what: &str, len: usize) -> Result<Vec<f64>> {
        let (line, off, content) = self.next(what)?;
        let mut out = Vec::with_capacity(len);
        let base = content.as_ptr() as usize;
        for tok in content.split_whitespace() {
            let tok_off = off + (tok.as_ptr() as usize - base);
            let v: f64 = tok
                .parse()
                .map_err(|_| self.err_at(line, tok_off, format!("invalid number {tok:?} in {what}")))?;
            out.push(v);
        }
        if out.len() != len {
            return Err(self.err_at(line, off, format!("{what} row has {} values, expected {len}", out.len())));
        }
        Ok(out)
    }

    fn rows(&mut self, what: &str, n_rows: usize, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n_rows * len);
        for _ in 0..n_rows {
            out.extend(self.row(what, len)?);
        }
        Ok(out)
    }
}

fn parse_deps(s: &str) -> Option<EmissionDeps> {
    let s = s.trim();
    let mut deps = EmissionDeps {
        x_next: false,
        x_prev: false,
        y_prev: false,
    };
    if s == "none" {
        return Some(deps);
    }
    for part in s.split(',') {
        match part.trim() {
            "x_next" => deps.x_next = true,
            "x_prev" => deps.x_prev = true,
            "y_prev" => deps.y_prev = true,
            _ => return None,
        }
    }
    Some(deps)
}

/// Parse a model written by [`model_to_string`]. Blank lines and lines
/// starting with `#` are ignored. Errors carry the 1-based line and the byte
/// offset into `text`.
pub fn model_from_str(text: &str) -> Result<PomdpModel> {
    let mut p = Lines::new(text);
    let (line, off, magic) = p.next("header")?;
    if magic.trim() != MODEL_MAGIC {
        return Err(p.err_at(line, off, format!("expected header {MODEL_MAGIC:?}")));
    }
    let k = p.count("states")?;
    let n_obs = p.count("observations")?;
    let mut labels = Vec::new();
    while p.peek_keyword() == Some("control") {
        let (line, off, rest) = p.keyword("control")?;
        let label: String = serde_json::from_str(rest.trim())
            .map_err(|e| p.err_at(line, off, format!("control label must be a quoted string: {e}")))?;
        labels.push(label);
    }
    let (line, off, _) = *p.lines.get(p.pos).ok_or_else(|| p.eof("emission-deps"))?;
    let controls = ControlSet::new(labels).map_err(|e| p.err_at(line, off, e.to_string()))?;
    let l = controls.len();
    let (line, off, rest) = p.keyword("emission-deps")?;
    let deps = parse_deps(rest).ok_or_else(|| p.err_at(line, off, format!("unknown emission dependencies {rest:?}")))?;
    p.keyword("transition")?;
    let transition = p.rows("transition", l * k, k)?;
    p.keyword("emission")?;
    let mut emission_rows = 1;
    if deps.x_next {
        emission_rows *= k;
    }
    if deps.x_prev {
        emission_rows *= k;
    }
    if deps.y_prev {
        emission_rows *= n_obs;
    }
    let emission = p.rows("emission", emission_rows, n_obs)?;
    p.keyword("initial-state")?;
    let initial_state = p.row("initial-state", k)?;
    p.keyword("initial-obs")?;
    let initial_obs = p.row("initial-obs", n_obs)?;
    let randomizer = if p.peek_keyword() == Some("randomizer") {
        p.keyword("randomizer")?;
        Some(p.rows("randomizer", l, l)?)
    } else {
        None
    };
    let (line, off, _) = p.keyword("end")?;
    if let Some(&(line, off, _)) = p.lines.get(p.pos) {
        return Err(p.err_at(line, off, "content after end"));
    }
    PomdpModel::from_parts(ModelParts {
        n_states: k,
        n_obs,
        controls,
        transition,
        emission_deps: deps,
        emission,
        initial_state,
        initial_obs,
        randomizer,
    })
    .map_err(|e| p.err_at(line, off, e.to_string()))
}

pub fn save_model(model: &PomdpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PomdpModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

/// Sidecar record describing a solved policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub solver: String,
    pub n_states: usize,
    pub n_obs: usize,
    pub n_ctrl: usize,
    /// Absent for state policies.
    pub lag: Option<usize>,
    pub horizon: usize,
    pub theta: Option<f64>,
    pub prior_grid: Option<Vec<f64>>,
    pub prior_weights: Option<Vec<f64>>,
    /// Window-start state law.
    pub window_prior: Option<Vec<f64>>,
    pub root_value: Option<f64>,
    pub long_run: Option<Vec<usize>>,
    pub wall_time_secs: f64,
}

/// `t,window_index,control_index,value`, sorted by time then window.
pub fn write_pofi_csv(policy: &PofiPolicy, w: &mut impl Write) -> Result<()> {
    writeln!(w, "t,window_index,control_index,value")?;
    for (t, (controls, values)) in policy.controls.iter().zip(&policy.values).enumerate() {
        for (idx, (c, v)) in controls.iter().zip(values).enumerate() {
            writeln!(w, "{t},{idx},{c},{}", fmt_num(*v))?;
        }
    }
    Ok(())
}

/// `t,state_index,control_index,value`.
pub fn write_state_policy_csv(policy: &StatePolicy, w: &mut impl Write) -> Result<()> {
    writeln!(w, "t,state_index,control_index,value")?;
    for (t, (controls, values)) in policy.controls.iter().zip(&policy.values).enumerate() {
        for (x, (c, v)) in controls.iter().zip(values).enumerate() {
            writeln!(w, "{t},{x},{c},{}", fmt_num(*v))?;
        }
    }
    Ok(())
}

/// Stationary window policy from value iteration, written with `t` empty.
pub fn write_window_table_csv(controls: &[usize], values: &[f64], w: &mut impl Write) -> Result<()> {
    writeln!(w, "t,window_index,control_index,value")?;
    for (idx, (c, v)) in controls.iter().zip(values).enumerate() {
        writeln!(w, ",{idx},{c},{}", fmt_num(*v))?;
    }
    Ok(())
}

/// `t,control,observation,sweeps,posterior_w1..wG`.
pub fn write_run_log_csv(steps: &[ViaStep], w: &mut impl Write) -> Result<()> {
    let g = steps.first().map_or(0, |s| s.posterior.len());
    let mut header = String::from("t,control,observation,sweeps");
    for i in 1..=g {
        header.push_str(&format!(",posterior_w{i}"));
    }
    writeln!(w, "{header}")?;
    for s in steps {
        let obs = s.observation.map_or(String::new(), |y| y.to_string());
        let post: Vec<String> = s.posterior.iter().map(|&p| fmt_num(p)).collect();
        write!(w, "{},{},{obs},{}", s.t, s.control, s.sweeps)?;
        for p in post {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `variant,n,bias,sd,mse`.
pub fn write_study_csv(result: &StudyResult, w: &mut impl Write) -> Result<()> {
    writeln!(w, "variant,n,bias,sd,mse")?;
    for r in &result.rows {
        writeln!(w, "{},{},{},{},{}", r.variant, r.n, fmt_num(r.bias), fmt_num(r.sd), fmt_num(r.mse))?;
    }
    Ok(())
}

/// `variant,rep,seed,theta_hat`.
pub fn write_study_detail_csv(result: &StudyResult, w: &mut impl Write) -> Result<()> {
    writeln!(w, "variant,rep,seed,theta_hat")?;
    for d in &result.details {
        writeln!(w, "{},{},{},{}", d.variant, d.rep, d.seed, fmt_num(d.theta_hat))?;
    }
    Ok(())
}
