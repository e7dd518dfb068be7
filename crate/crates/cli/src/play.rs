//! Interactive adversarial game: the solver plays Row, the user plays Column.

use std::io::{BufRead, Write};
use std::sync::Arc;

use pomdp_design::experiment::simulate::rng_for;
use pomdp_design::experiment::{mle_grid, Controller, PofiController};
use pomdp_design::io::fmt_num;
use pomdp_design::pofi::solve_pofi;
use pomdp_design::tables::GridTables;
use pomdp_design::via::ViaController;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::commands::{load, via_config, Loaded};
use crate::config::{Builtin, SolverConfig};
use crate::{CliError, Opts};

const ESTIMATE_STEP: f64 = 0.01;

enum Column {
    Play(usize),
    Quit,
}

/// Prompt until a valid answer or end of input. Right is observation 0.
fn read_column<R: BufRead, W: Write>(input: &mut R, out: &mut W, prompt: &str) -> Result<Column, CliError> {
    loop {
        write!(out, "{prompt}")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(Column::Quit);
        }
        match line.trim().to_ascii_lowercase().as_str() {
            "r" | "right" => return Ok(Column::Play(0)),
            "l" | "left" => return Ok(Column::Play(1)),
            "q" | "quit" => return Ok(Column::Quit),
            other => writeln!(out, "unrecognized play {other:?}; answer left or right (q to stop)")?,
        }
    }
}

pub fn play<R: BufRead, W: Write>(opts: &Opts, input: &mut R, out: &mut W) -> Result<(), CliError> {
    let Loaded { cfg, family, .. } = load(opts)?;
    if cfg.model.builtin != Some(Builtin::Adversarial) {
        return Err(CliError::Schema("model.builtin: play needs \"adversarial\"".into()));
    }
    let seed = opts
        .seed
        .or_else(|| cfg.study.as_ref().map(|s| s.base_seed))
        .unwrap_or(0);
    let rounds = cfg.horizon;

    let prior = cfg.prior()?;
    let mut controller: Box<dyn Controller> = match (&prior, &cfg.solver) {
        (Some(prior), None | Some(SolverConfig::Via { .. })) => {
            let (lag, window_prior) = match &cfg.solver {
                Some(SolverConfig::Via { m, window_prior, .. }) => (*m, window_prior.clone()),
                _ => (1, None),
            };
            let grid = Arc::new(GridTables::build(&family, prior.grid(), lag, window_prior.as_deref())?);
            Box::new(ViaController::new(&family, grid, prior.clone(), via_config(cfg.solver.as_ref()))?)
        }
        (_, None | Some(SolverConfig::Pofi { .. })) => {
            let (lag, window_prior) = match &cfg.solver {
                Some(SolverConfig::Pofi { m, window_prior, .. }) => (*m, window_prior.clone()),
                _ => (1, None),
            };
            let theta = cfg.theta_value()?;
            Box::new(PofiController::new(Arc::new(solve_pofi(
                &family,
                theta,
                rounds.max(lag + 1),
                lag,
                window_prior.as_deref(),
            )?)))
        }
        _ => return Err(CliError::Schema("solver.kind: play supports pofi or via".into())),
    };
    let design = family.eval(cfg.theta.value.unwrap_or_else(|| prior.as_ref().expect("checked").mode()))?;
    let labels = design.controls().labels().to_vec();
    let mut rng = rng_for(seed);

    writeln!(out, "adversarial game, {rounds} rounds; you are Column, answer left or right (q to stop)")?;
    let y0 = match read_column(input, out, "opening play: ")? {
        Column::Play(y) => y,
        Column::Quit => {
            writeln!(out, "no data; no estimate")?;
            return Ok(());
        }
    };
    // No Row play precedes the opening, so it is recorded as control 0.
    let mut obs = vec![y0 * 2];
    let mut ctrl = Vec::new();
    controller.start(obs[0])?;
    for t in 0..rounds {
        let w = controller.choose(t, &mut rng)?;
        let probs = design.apply_randomizer(w)?;
        let u = WeightedIndex::new(&probs)
            .map_err(|e| CliError::Schema(format!("randomizer row {w}: {e}")))?
            .sample(&mut rng);
        writeln!(out, "round {}: Row plays {}", t + 1, labels[u])?;
        let y = match read_column(input, out, &format!("round {} Column: ", t + 1))? {
            Column::Play(y) => y,
            Column::Quit => break,
        };
        let o = y * 2 + u;
        controller.observe(u, o)?;
        obs.push(o);
        ctrl.push(u);
    }

    if ctrl.is_empty() {
        writeln!(out, "no data; no estimate")?;
        return Ok(());
    }
    let domain = family.domain();
    let n = ((domain.hi - domain.lo) / ESTIMATE_STEP).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| (domain.lo + i as f64 * ESTIMATE_STEP).min(domain.hi)).collect();
    let est = mle_grid(&family, &grid, &obs, &ctrl)?;
    writeln!(
        out,
        "{} rounds played; estimated theta {} (log-likelihood {})",
        ctrl.len(),
        fmt_num(est.theta),
        fmt_num(est.loglik)
    )?;
    Ok(())
}
