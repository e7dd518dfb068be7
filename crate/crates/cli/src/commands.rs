use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use pomdp_design::experiment::{run_study, StudyConfig, Variant};
use pomdp_design::fofi::{solve_fofi, solve_fofi_prior};
use pomdp_design::io::{self as pio, PolicyMeta};
use pomdp_design::pofi::{solve_pofi_prior, solve_pofi_with_budget, DEFAULT_CELL_BUDGET};
use pomdp_design::tables::GridTables;
use pomdp_design::via::{adaptive_run, via_solve, ViaConfig};
use pomdp_design::{ModelFamily, ThetaPosterior};

use crate::config::{RunConfig, SolverConfig};
use crate::{CliError, Opts};

pub(crate) struct Loaded {
    pub cfg: RunConfig,
    pub family: ModelFamily,
    pub out: PathBuf,
}

pub(crate) fn load(opts: &Opts) -> Result<Loaded, CliError> {
    let (cfg, _) = RunConfig::load(&opts.config)?;
    let base = opts.config.parent().unwrap_or(Path::new("."));
    let family = cfg.family(base)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded { cfg, family, out })
}

/// Files are rendered in memory and only written once every step succeeded.
pub(crate) fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn meta_json(meta: &PolicyMeta) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(meta).expect("plain data");
    s.push('\n');
    s.into_bytes()
}

pub(crate) fn via_config(solver: Option<&SolverConfig>) -> ViaConfig {
    match solver {
        Some(SolverConfig::Via {
            lambda,
            epsilon,
            max_sweeps,
            ..
        }) => ViaConfig {
            lambda: *lambda,
            epsilon: *epsilon,
            max_sweeps: *max_sweeps,
        },
        _ => ViaConfig::default(),
    }
}

/// The parameter law a prior-averaged solve runs under: the configured grid
/// if any, else a point mass at `theta.value`.
fn design_prior(cfg: &RunConfig) -> Result<ThetaPosterior, CliError> {
    match cfg.prior()? {
        Some(p) => Ok(p),
        None => Ok(ThetaPosterior::point_mass(cfg.theta_value()?)),
    }
}

pub fn solve(opts: &Opts) -> Result<(), CliError> {
    let Loaded { cfg, family, out } = load(opts)?;
    let solver = cfg.solver()?.clone();
    let start = Instant::now();
    let probe = family.eval(cfg.theta.value.unwrap_or_else(|| cfg.theta.grid.as_ref().expect("checked")[0]))?;
    let mut meta = PolicyMeta {
        solver: String::new(),
        n_states: probe.n_states(),
        n_obs: probe.n_obs(),
        n_ctrl: probe.n_controls(),
        lag: None,
        horizon: cfg.horizon,
        theta: cfg.theta.value,
        prior_grid: None,
        prior_weights: None,
        window_prior: None,
        root_value: None,
        long_run: None,
        wall_time_secs: 0.0,
    };
    let mut csv = Vec::new();
    match &solver {
        SolverConfig::Pofi { m, window_prior, budget } => {
            let budget = budget.unwrap_or(DEFAULT_CELL_BUDGET);
            let policy = match (cfg.theta.value, cfg.prior()?) {
                (Some(th), _) => solve_pofi_with_budget(&family, th, cfg.horizon, *m, window_prior.as_deref(), budget)?,
                (None, Some(prior)) => {
                    meta.prior_grid = Some(prior.grid().to_vec());
                    meta.prior_weights = Some(prior.weights().to_vec());
                    solve_pofi_prior(&family, &prior, cfg.horizon, *m, window_prior.as_deref(), budget)?
                }
                (None, None) => unreachable!("theta checked"),
            };
            pio::write_pofi_csv(&policy, &mut csv)?;
            meta.solver = "pofi".into();
            meta.lag = Some(*m);
            meta.window_prior = window_prior.clone();
            meta.root_value = Some(policy.root_value);
            meta.long_run = policy.long_run.clone();
        }
        SolverConfig::Fofi => {
            let policy = match (cfg.theta.value, cfg.prior()?) {
                (Some(th), _) => solve_fofi(&family, th, cfg.horizon)?,
                (None, Some(prior)) => {
                    meta.prior_grid = Some(prior.grid().to_vec());
                    meta.prior_weights = Some(prior.weights().to_vec());
                    solve_fofi_prior(&family, &prior, cfg.horizon)?
                }
                (None, None) => unreachable!("theta checked"),
            };
            pio::write_state_policy_csv(&policy, &mut csv)?;
            meta.solver = "fofi".into();
            meta.long_run = policy.long_run.clone();
        }
        SolverConfig::Via { m, window_prior, .. } => {
            let prior = design_prior(&cfg)?;
            if cfg.theta.grid.is_some() {
                meta.prior_grid = Some(prior.grid().to_vec());
                meta.prior_weights = Some(prior.weights().to_vec());
            }
            let grid = GridTables::build(&family, prior.grid(), *m, window_prior.as_deref())?;
            let sol = via_solve(&grid.mixture(&prior)?, via_config(Some(&solver)), None)?;
            let full = &sol.controls[sol.lag()];
            pio::write_window_table_csv(full, &sol.state.values, &mut csv)?;
            meta.solver = "via".into();
            meta.lag = Some(*m);
            meta.window_prior = window_prior.clone();
            meta.long_run = Some(full.clone());
        }
        SolverConfig::Fixed { .. } | SolverConfig::Random => {
            return Err(CliError::Schema(
                "solver.kind: fixed and random have nothing to solve; use pofi, fofi or via".into(),
            ))
        }
    }
    meta.wall_time_secs = start.elapsed().as_secs_f64();
    write_outputs(&out, &[("policy.csv", csv), ("policy.json", meta_json(&meta))])?;
    println!("{} policy written to {}", meta.solver, out.display());
    if let Some(v) = meta.root_value {
        println!("expected Fisher Information: {}", pio::fmt_num(v));
    }
    Ok(())
}

/// Policy arms implied by the solver section when `study.variants` is absent.
fn default_variants(cfg: &RunConfig) -> Result<Vec<Variant>, CliError> {
    let with_prior = cfg.theta.grid.is_some();
    Ok(match cfg.solver()? {
        SolverConfig::Pofi { m, .. } if with_prior => vec![Variant::PofiPrior { lag: *m }],
        SolverConfig::Pofi { m, .. } => vec![Variant::Pofi { lag: *m }],
        SolverConfig::Fofi if with_prior => vec![Variant::FofiPrior],
        SolverConfig::Fofi => vec![Variant::FofiOracle],
        SolverConfig::Via { m, .. } => vec![Variant::Via { lag: *m }],
        SolverConfig::Fixed { u } => vec![Variant::Fixed { control: *u }],
        SolverConfig::Random => vec![Variant::Random],
    })
}

pub(crate) fn study_config(cfg: &RunConfig, opts: &Opts) -> Result<StudyConfig, CliError> {
    let s = cfg.study()?;
    let variants = match &s.variants {
        Some(v) => v.clone(),
        None => default_variants(cfg)?,
    };
    let window_prior = match &cfg.solver {
        Some(SolverConfig::Pofi { window_prior, .. }) | Some(SolverConfig::Via { window_prior, .. }) => {
            window_prior.clone()
        }
        _ => None,
    };
    let cell_budget = match &cfg.solver {
        Some(SolverConfig::Pofi { budget: Some(b), .. }) => *b,
        _ => DEFAULT_CELL_BUDGET,
    };
    Ok(StudyConfig {
        true_theta: cfg.theta_value()?,
        prior: cfg.theta.grid.as_ref().map(|g| cfg.prior_spec(g)),
        horizon: cfg.horizon,
        reps: if opts.slow { s.slow_reps.unwrap_or(s.reps) } else { s.reps },
        base_seed: opts.seed.unwrap_or(s.base_seed),
        estimator: s.estimator.clone(),
        variants,
        window_prior,
        via: via_config(cfg.solver.as_ref()),
        cell_budget,
    })
}

pub fn study(opts: &Opts) -> Result<(), CliError> {
    let Loaded { cfg, family, out } = load(opts)?;
    let sc = study_config(&cfg, opts)?;
    let result = run_study(&family, &sc)?;
    let mut summary = Vec::new();
    let mut detail = Vec::new();
    pio::write_study_csv(&result, &mut summary)?;
    pio::write_study_detail_csv(&result, &mut detail)?;
    write_outputs(&out, &[("study.csv", summary), ("study_detail.csv", detail)])?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "config {}", result.config_hash)?;
    writeln!(stdout, "{:<16} {:>5} {:>12} {:>12} {:>12}", "variant", "n", "bias", "sd", "mse")?;
    for r in &result.rows {
        writeln!(
            stdout,
            "{:<16} {:>5} {:>12} {:>12} {:>12}",
            r.variant,
            r.n,
            pio::fmt_num(r.bias),
            pio::fmt_num(r.sd),
            pio::fmt_num(r.mse)
        )?;
    }
    Ok(())
}

pub fn via_run(opts: &Opts) -> Result<(), CliError> {
    let Loaded { cfg, family, out } = load(opts)?;
    let truth = cfg.theta_value()?;
    let prior = cfg
        .prior()?
        .ok_or_else(|| CliError::Schema("theta.grid: required by via-run".into()))?;
    let (lag, window_prior) = match &cfg.solver {
        Some(SolverConfig::Via { m, window_prior, .. }) => (*m, window_prior.clone()),
        None => (1, None),
        Some(_) => return Err(CliError::Schema("solver.kind: via-run needs kind = \"via\"".into())),
    };
    let seed = opts
        .seed
        .or_else(|| cfg.study.as_ref().map(|s| s.base_seed))
        .unwrap_or(0);
    let grid = Arc::new(GridTables::build(&family, prior.grid(), lag, window_prior.as_deref())?);
    let run = adaptive_run(&family, grid, prior, cfg.horizon, via_config(cfg.solver.as_ref()), truth, seed)?;
    let mut log = Vec::new();
    pio::write_run_log_csv(&run.steps, &mut log)?;
    write_outputs(&out, &[("run_log.csv", log)])?;
    let total: usize = run.steps.iter().map(|s| s.sweeps).sum();
    println!("steps {}, total sweeps {total}", run.steps.len());
    println!(
        "posterior mode {}, mean {}",
        pio::fmt_num(run.posterior.mode()),
        pio::fmt_num(run.posterior.mean())
    );
    Ok(())
}

pub fn export_model(opts: &Opts) -> Result<(), CliError> {
    let Loaded { cfg, family, out } = load(opts)?;
    let model = family.eval(cfg.theta_value()?)?;
    let report = model.validate();
    if !report.is_valid() {
        return Err(pomdp_design::Error::InvalidModel(report.to_string()).into());
    }
    write_outputs(&out, &[("model.txt", pio::model_to_string(&model).into_bytes())])?;
    println!("model written to {}", out.join("model.txt").display());
    Ok(())
}

pub fn validate(opts: &Opts) -> Result<(), CliError> {
    let Loaded { cfg, family, .. } = load(opts)?;
    let mut thetas: Vec<f64> = cfg.theta.value.into_iter().collect();
    if let Some(g) = &cfg.theta.grid {
        thetas.extend(g);
    }
    if let Some(g) = &cfg.theta.grid {
        cfg.prior_spec(g).posterior()?;
    }
    let mut bad = Vec::new();
    for th in thetas {
        let report = family.eval(th)?.validate();
        if report.is_valid() {
            println!("theta {}: valid", pio::fmt_num(th));
        } else {
            bad.push(format!("theta {}: {}", pio::fmt_num(th), report.to_string().trim_end().replace('\n', "; ")));
        }
    }
    if !bad.is_empty() {
        return Err(pomdp_design::Error::InvalidModel(bad.join("\n")).into());
    }
    Ok(())
}
