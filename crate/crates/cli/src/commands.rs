use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sqbudget_core::estimate::{
    estimate_total_efficiency, fit_loss_line, fit_threshold, resample_uncertainty, RESAMPLE_RNG,
};
use sqbudget_core::montecarlo::{approximation_gap, expected_mixed_pair, mc_mixed_pair, RNG_ALGORITHM};
use sqbudget_core::opomodel::{gain_to_x, normalized_frequency, phase_mix, predict, pump_power_to_x, total_efficiency};
use sqbudget_core::optimize::{find_x_opt_with, sweep_pump, sweep_surface};
use sqbudget_core::{
    FreqConvention, GainPoint, JitterDistribution, JitterSpec, LossMode, LossModel, LossPoint, Optimum,
    OptimizerSettings, Pipeline, QuadraturePair, Side, Target, UncertainInput,
};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::{CliError, CliResult};
use crate::table::{self, Precision, Table};

#[derive(Debug, Parser)]
#[command(name = "sqbudget", version, about = "Squeezed-light loss budget: predict, fit, correct, optimize and sweep")]
pub struct Cli {
    /// Experiment configuration (`key = value` per line).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Write the result table here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Override the configuration's frequency convention.
    #[arg(long, global = true, value_name = "angular|cyclic")]
    pub convention: Option<FreqConvention>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Resampling or Monte Carlo sample count.
    #[arg(long, global = true, value_name = "N")]
    pub samples: Option<usize>,

    /// Decimal places for dB values, or `full`.
    #[arg(long, global = true, default_value = "3", value_name = "DIGITS|full")]
    pub precision: Precision,

    #[command(subcommand)]
    pub command: Command,
}

/// Pump operating point; at most one may be given.
#[derive(Debug, Clone, Copy, Args)]
#[group(multiple = false)]
pub struct Pump {
    /// Pump power in mW (needs a threshold in the configuration).
    #[arg(long, value_name = "MW")]
    pub power_mw: Option<f64>,

    /// Normalized pump amplitude √(P/P_th).
    #[arg(long)]
    pub x: Option<f64>,

    /// Measured parametric gain.
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossModeArg {
    Fixed,
    FollowLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistributionArg {
    Gaussian,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward model at one pump point.
    Predict {
        #[command(flatten)]
        pump: Pump,
    },
    /// Oscillation threshold from a `power_mw,gain[,sigma_gain]` table.
    FitThreshold {
        #[arg(long, value_name = "PATH")]
        table: PathBuf,
    },
    /// Pump-dependent loss line from an `x,loss` table.
    FitLoss {
        #[arg(long, value_name = "PATH")]
        table: PathBuf,
    },
    /// Remove circuit noise and phase jitter from observed levels; estimate total loss.
    Correct {
        #[arg(long, allow_hyphen_values = true, value_name = "DB")]
        squeezed_db: Option<f64>,
        #[arg(long, allow_hyphen_values = true, value_name = "DB")]
        antisqueezed_db: Option<f64>,
        #[arg(long, value_name = "DB")]
        squeezed_sigma_db: Option<f64>,
        #[arg(long, value_name = "DB")]
        antisqueezed_sigma_db: Option<f64>,
        /// `quadrature,level_db,sigma_db` table instead of the level flags.
        #[arg(long, value_name = "PATH", conflicts_with_all = ["squeezed_db", "antisqueezed_db"])]
        table: Option<PathBuf>,
        #[command(flatten)]
        pump: Pump,
    },
    /// Pump point with the strongest squeezing.
    Optimize {
        /// Optimize the level before the detector circuit noise.
        #[arg(long)]
        pre_floor: bool,
    },
    /// Levels over a range of pump points, one block per phase jitter.
    Sweep {
        #[arg(long, default_value_t = 0.0)]
        x_min: f64,
        #[arg(long, default_value_t = 0.95)]
        x_max: f64,
        #[arg(long, default_value_t = 96)]
        x_steps: usize,
        /// Comma-separated phase-jitter values; defaults to the configuration's.
        #[arg(long, value_delimiter = ',', value_name = "DEG,..")]
        theta_deg: Vec<f64>,
    },
    /// Best squeezing over a phase-jitter × loss grid.
    Surface {
        #[arg(long, default_value_t = 0.0)]
        theta_min: f64,
        #[arg(long, default_value_t = 5.0)]
        theta_max: f64,
        #[arg(long, default_value_t = 101)]
        theta_steps: usize,
        #[arg(long, default_value_t = 0.0)]
        loss_min: f64,
        #[arg(long, default_value_t = 0.01)]
        loss_max: f64,
        #[arg(long, default_value_t = 101)]
        loss_steps: usize,
        #[arg(long, value_enum, default_value_t = LossModeArg::Fixed)]
        loss_mode: LossModeArg,
        #[arg(long)]
        pre_floor: bool,
    },
    /// Monte Carlo average over the phase-jitter distribution.
    Mc {
        #[arg(long, value_enum, default_value_t = DistributionArg::Gaussian)]
        distribution: DistributionArg,
        /// Defaults to the optimum pump point.
        #[command(flatten)]
        pump: Pump,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Predict { .. } => "predict",
            Command::FitThreshold { .. } => "fit-threshold",
            Command::FitLoss { .. } => "fit-loss",
            Command::Correct { .. } => "correct",
            Command::Optimize { .. } => "optimize",
            Command::Sweep { .. } => "sweep",
            Command::Surface { .. } => "surface",
            Command::Mc { .. } => "mc",
        }
    }
}

/// What a command produced: a human-readable summary and one or two tables.
struct Report {
    summary: Vec<(String, String)>,
    metadata: Vec<String>,
    table: Table,
    companion: Option<(&'static str, Table)>,
}

struct Ctx {
    cfg: ExperimentConfig,
    model: Resolved,
    fmt: Precision,
}

fn load(cli: &Cli) -> CliResult<Ctx> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("`{}` needs --config <PATH>", cli.command.name())))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(conv) = cli.convention {
        cfg.freq_convention = conv;
    }
    let model = cfg.resolve()?;
    Ok(Ctx { cfg, model, fmt: cli.precision })
}

fn header(command: &str) -> Vec<String> {
    vec![format!("sqbudget {} {command}", env!("CARGO_PKG_VERSION"))]
}

fn config_metadata(command: &str, ctx: &Ctx) -> Vec<String> {
    let mut meta = header(command);
    meta.push("config:".into());
    meta.extend(ctx.cfg.dump().lines().map(|l| format!("  {l}")));
    if let Some(th) = ctx.model.threshold_mw {
        meta.push(format!("resolved threshold_mw = {th}"));
    }
    meta.push(format!("convention = {}", ctx.cfg.freq_convention));
    meta
}

/// Normalized pump amplitude and, when the threshold is known, pump power in mW.
fn resolve_pump(pump: &Pump, ctx: &Ctx) -> CliResult<Option<(f64, Option<f64>)>> {
    let th = ctx.model.threshold_mw;
    if let Some(p) = pump.power_mw {
        let th = th.ok_or_else(|| {
            CliError::key("threshold_mw", "needed to convert --power-mw; set threshold_mw or gain_at_power")
        })?;
        return Ok(Some((pump_power_to_x(p, th)?, Some(p))));
    }
    let x = match (pump.x, pump.gain) {
        (Some(x), _) => x,
        (None, Some(g)) => gain_to_x(g)?,
        (None, None) => return Ok(None),
    };
    Ok(Some((x, th.map(|t| x * x * t))))
}

fn opt_str(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(String::new, f)
}

fn predict_cmd(ctx: &Ctx, pump: &Pump) -> CliResult<Report> {
    let (x, power) = resolve_pump(pump, ctx)?
        .ok_or_else(|| CliError::Usage("predict needs one of --power-mw, --x, --gain".into()))?;
    let p = predict(&ctx.model.params, &ctx.model.chain, x)?;
    let f = ctx.fmt;
    let mut pairs: Vec<(String, String)> = vec![
        ("x".into(), f.num(x)),
        ("pump_power_mw".into(), opt_str(power, |v| f.num(v))),
        ("intracavity_loss".into(), f.num(p.loss)),
        ("escape_efficiency".into(), f.num(p.escape_efficiency)),
        ("decay_rate_per_s".into(), f.sci(p.decay_rate)),
        ("omega".into(), f.num(p.omega)),
        ("total_efficiency".into(), f.num(p.efficiency)),
    ];
    for (stage, pair) in [("generated", p.generated), ("mixed", p.mixed), ("observed", p.observed)] {
        let (m, a) = pair.values();
        let (md, ad) = pair.db();
        pairs.extend([
            (format!("{stage}_squeezed_db"), f.db(md)),
            (format!("{stage}_antisqueezed_db"), f.db(ad)),
            (format!("{stage}_squeezed_linear"), f.num(m)),
            (format!("{stage}_antisqueezed_linear"), f.num(a)),
        ]);
    }
    let pairs = pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    Ok(single_row_report(pairs, config_metadata("predict", ctx)))
}

fn single_row_report(pairs: Vec<(&str, String)>, metadata: Vec<String>) -> Report {
    let summary: Vec<(String, String)> = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mut table = Table { header: summary.iter().map(|(k, _)| k.clone()).collect(), rows: Vec::new() };
    table.push(summary.iter().map(|(_, v)| v.clone()).collect());
    Report { summary, metadata, table, companion: None }
}

fn fit_threshold_cmd(path: &Path, fmt: Precision) -> CliResult<Report> {
    let text = table::read_text(path)?;
    let rows = table::parse_gain_table(&text, &path.display().to_string())?;
    let points: Vec<GainPoint> = rows
        .iter()
        .map(|&(p, g, s)| match s {
            Some(s) => GainPoint::with_sigma(p, g, s),
            None => GainPoint::new(p, g),
        })
        .collect();
    let fit = fit_threshold(&points)?;
    let informative = points.iter().filter(|p| p.pump_power > 0.0).count();
    let sigma = if informative > 1 { fmt.num(fit.sigma) } else { "absent".to_string() };

    let mut table = Table::new(&["power_mw", "gain", "model_gain", "residual"]);
    for p in &points {
        let model = if p.pump_power < fit.estimate {
            1.0 / (1.0 - (p.pump_power / fit.estimate).sqrt()).powi(2)
        } else {
            f64::INFINITY
        };
        table.push(vec![fmt.num(p.pump_power), fmt.num(p.gain), fmt.num(model), fmt.num(p.gain - model)]);
    }
    let mut metadata = header("fit-threshold");
    metadata.push(format!("table = {}", path.display()));
    Ok(Report {
        summary: vec![
            ("threshold_mw".into(), fmt.num(fit.estimate)),
            ("threshold_sigma_mw".into(), sigma),
            ("residual_rms".into(), fmt.num(fit.residual_norm)),
            ("n_points".into(), fit.n_points.to_string()),
        ],
        metadata,
        table,
        companion: None,
    })
}

fn fit_loss_cmd(path: &Path, fmt: Precision) -> CliResult<Report> {
    let text = table::read_text(path)?;
    let rows = table::parse_loss_table(&text, &path.display().to_string())?;
    let points: Vec<LossPoint> = rows.iter().map(|&(x, loss)| LossPoint { x, loss }).collect();
    let fit = fit_loss_line(&points)?;
    let (l0, l1) = (fit.line.intercept(), fit.line.slope());
    let mut table = Table::new(&["x", "loss", "model_loss", "residual"]);
    for p in &points {
        let model = l0 + l1 * p.x;
        table.push(vec![fmt.num(p.x), fmt.sci(p.loss), fmt.sci(model), fmt.sci(p.loss - model)]);
    }
    let mut metadata = header("fit-loss");
    metadata.push(format!("table = {}", path.display()));
    Ok(Report {
        summary: vec![
            ("loss_intercept".into(), fmt.sci(l0)),
            ("loss_intercept_sigma".into(), fmt.sci(fit.intercept_sigma)),
            ("loss_slope".into(), fmt.sci(l1)),
            ("loss_slope_sigma".into(), fmt.sci(fit.slope_sigma)),
            ("residual_rms".into(), fmt.sci(fit.residual_norm)),
            ("n_points".into(), fit.n_points.to_string()),
        ],
        metadata,
        table,
        companion: None,
    })
}

struct Observed {
    squeezed_db: f64,
    antisqueezed_db: f64,
    sigmas: Option<(f64, f64)>,
}

fn observed_levels(
    squeezed_db: Option<f64>,
    antisqueezed_db: Option<f64>,
    squeezed_sigma_db: Option<f64>,
    antisqueezed_sigma_db: Option<f64>,
    table_path: Option<&Path>,
) -> CliResult<Observed> {
    if let Some(path) = table_path {
        if squeezed_sigma_db.is_some() || antisqueezed_sigma_db.is_some() {
            return Err(CliError::Usage("sigma flags cannot be combined with --table".into()));
        }
        let text = table::read_text(path)?;
        let (s, a) = table::parse_quadrature_table(&text, &path.display().to_string())?;
        return Ok(Observed {
            squeezed_db: s.level_db,
            antisqueezed_db: a.level_db,
            sigmas: Some((s.sigma_db, a.sigma_db)),
        });
    }
    let (Some(sq), Some(anti)) = (squeezed_db, antisqueezed_db) else {
        return Err(CliError::Usage(
            "correct needs --squeezed-db and --antisqueezed-db, or --table".into(),
        ));
    };
    let sigmas = match (squeezed_sigma_db, antisqueezed_sigma_db) {
        (Some(s), Some(a)) => Some((s, a)),
        (None, None) => None,
        _ => {
            return Err(CliError::Usage(
                "give both --squeezed-sigma-db and --antisqueezed-sigma-db, or neither".into(),
            ))
        }
    };
    Ok(Observed { squeezed_db: sq, antisqueezed_db: anti, sigmas })
}

const CORRECT_SAMPLES: usize = 20_000;

/// Nominal value and resampled sigma of one reported quantity. Failures are
/// returned as text so a non-physical side is reported rather than fatal.
type Resampled = (Result<f64, String>, Option<Result<f64, String>>);

fn resampled<F>(eval: F, inputs: &[UncertainInput], n: usize, seed: u64) -> Resampled
where
    F: Fn(&[f64]) -> sqbudget_core::Result<f64> + Sync,
{
    let centre: Vec<f64> = inputs.iter().map(|u| u.value).collect();
    let nominal = eval(&centre).map_err(|e| e.to_string());
    let sigma = (nominal.is_ok() && inputs.iter().any(|u| u.sigma > 0.0)).then(|| {
        resample_uncertainty(inputs, |v| eval(v).map(|r| vec![r]), n, seed)
            .map(|r| r[0].sigma)
            .map_err(|e| e.to_string())
    });
    (nominal, sigma)
}

fn correct_cmd(ctx: &Ctx, obs: Observed, pump: &Pump, samples: Option<usize>, seed: u64) -> CliResult<Report> {
    let (params, chain) = (&ctx.model.params, &ctx.model.chain);
    let fmt = ctx.fmt;
    // also rejects squeezed > antisqueezed
    QuadraturePair::from_db(obs.squeezed_db, obs.antisqueezed_db)?;
    let x = resolve_pump(pump, ctx)?.map(|(x, _)| x);
    let base = Pipeline::CorrectAndInvert { floor: chain.circuit_floor(), theta_rms: chain.theta_rms() };
    let centre = [obs.squeezed_db, obs.antisqueezed_db];
    // Domain errors in the correction itself (below floor, singular mixing) are fatal.
    base.evaluate(&centre)?;
    let (s_sq, s_anti) = obs.sigmas.unwrap_or((0.0, 0.0));
    let inputs = [UncertainInput::new(centre[0], s_sq), UncertainInput::new(centre[1], s_anti)];
    let n_samples = samples.unwrap_or(CORRECT_SAMPLES);

    let mut table = Table::new(&["quantity", "value", "sigma"]);
    let mut summary = Vec::new();
    let mut add = |name: &str, value: String, sigma: String| {
        let shown = if sigma.is_empty() { value.clone() } else { format!("{value} ± {sigma}") };
        summary.push((name.to_string(), shown));
        table.push(vec![name.to_string(), value, sigma]);
    };
    let mut report = |name: &str, eval: &(dyn Fn(&[f64]) -> sqbudget_core::Result<f64> + Sync), is_db: bool| {
        let show = |v: f64| if is_db { fmt.db(v) } else { fmt.num(v) };
        let (value, sigma) = resampled(eval, &inputs, n_samples, seed);
        let sigma = match sigma {
            None => String::new(),
            Some(Ok(s)) => show(s),
            Some(Err(e)) => format!("n/a ({e})"),
        };
        match value {
            Ok(v) => add(name, show(v), sigma),
            Err(e) => add(name, format!("n/a ({e})"), String::new()),
        }
    };
    report("observed_squeezed_db", &|v| Ok(v[0]), true);
    report("observed_antisqueezed_db", &|v| Ok(v[1]), true);
    for (k, name) in base.output_names().iter().enumerate() {
        report(name, &|v| Ok(base.evaluate(v)?[k]), true);
    }
    if let Some(x) = x {
        let omega = normalized_frequency(params, chain, x)?;
        for (name, side) in [
            ("total_loss_squeezed", Side::Squeezed),
            ("total_loss_antisqueezed", Side::Antisqueezed),
            ("total_loss_both", Side::Both),
        ] {
            report(
                name,
                &|v| {
                    let out = base.evaluate(v)?;
                    let generated = QuadraturePair::from_db(out[2], out[3])?;
                    Ok(1.0 - estimate_total_efficiency(generated, x, omega, side)?.estimate)
                },
                false,
            );
        }
    }
    // Independent of the measured levels: 1 − ρζξ²η from the configured loss budget.
    let product_x = match (x, params.loss_model()) {
        (Some(x), _) => Some(x),
        (None, LossModel::Fixed(_)) => Some(0.0),
        (None, LossModel::Line(_)) => None,
    };
    if let Some(px) = product_x {
        add("total_loss_product", fmt.num(1.0 - total_efficiency(params, chain, px)?), String::new());
    }
    if let Some(x) = x {
        add("x", fmt.num(x), String::new());
    }

    let mut metadata = config_metadata("correct", ctx);
    if obs.sigmas.is_some() {
        metadata.push(format!("samples = {n_samples}"));
        metadata.push(format!("seed = {seed}"));
        metadata.push(format!("rng = {RESAMPLE_RNG}"));
    }
    Ok(Report { summary, metadata, table, companion: None })
}

fn settings(pre_floor: bool) -> OptimizerSettings {
    OptimizerSettings {
        target: if pre_floor { Target::PreFloor } else { Target::Observed },
        ..OptimizerSettings::default()
    }
}

fn target_name(pre_floor: bool) -> &'static str {
    if pre_floor {
        "pre-floor"
    } else {
        "observed"
    }
}

fn optimize_cmd(ctx: &Ctx, pre_floor: bool) -> CliResult<Report> {
    let (params, chain) = (&ctx.model.params, &ctx.model.chain);
    let fmt = ctx.fmt;
    let opt = find_x_opt_with(params, chain, &settings(pre_floor))?;
    let p = predict(params, chain, opt.x())?;
    let shown = if pre_floor { p.mixed } else { p.observed };
    let (bracket, evals) = match opt {
        Optimum::Interior(r) => (Some(r.bracket), r.evaluations),
        Optimum::Boundary { evaluations, .. } => (None, evaluations),
    };
    let pairs: Vec<(&str, String)> = vec![
        ("x_opt", fmt.num(opt.x())),
        ("pump_power_mw", opt_str(ctx.model.threshold_mw.map(|t| opt.x().powi(2) * t), |v| fmt.num(v))),
        ("intracavity_loss", fmt.num(p.loss)),
        ("squeezed_db", fmt.db(shown.squeezed.db())),
        ("antisqueezed_db", fmt.db(shown.antisqueezed.db())),
        ("generated_squeezed_db", fmt.db(p.generated.squeezed.db())),
        ("generated_antisqueezed_db", fmt.db(p.generated.antisqueezed.db())),
        ("boundary", opt.is_boundary().to_string()),
        ("bracket_lo", opt_str(bracket.map(|b| b.0), |v| fmt.num(v))),
        ("bracket_hi", opt_str(bracket.map(|b| b.1), |v| fmt.num(v))),
        ("evaluations", evals.to_string()),
        ("target", target_name(pre_floor).to_string()),
    ];
    Ok(single_row_report(pairs, config_metadata("optimize", ctx)))
}

const SWEEP_COLUMNS: [&str; 4] =
    ["squeezed_db", "antisqueezed_db", "generated_squeezed_db", "generated_antisqueezed_db"];

fn sweep_cmd(ctx: &Ctx, x_min: f64, x_max: f64, x_steps: usize, thetas: &[f64]) -> CliResult<Report> {
    let fmt = ctx.fmt;
    let xs = sqbudget_core::Axis::linspace("x", "1", x_min, x_max, x_steps)?;
    let thetas = if thetas.is_empty() { vec![ctx.model.chain.theta_rms_deg()] } else { thetas.to_vec() };
    let mut header_cols = vec!["theta_deg", "x"];
    header_cols.extend(SWEEP_COLUMNS);
    let mut table = Table::new(&header_cols);
    let mut summary = Vec::new();
    for &deg in &thetas {
        let chain = ctx.model.chain.with_theta_deg(deg)?;
        let sweep = sweep_pump(&ctx.model.params, &chain, &xs.values)?;
        let mut best = (f64::INFINITY, 0.0);
        for (i, c) in sweep.cells.iter().enumerate() {
            let x = xs.values[i];
            if c.squeezed_db < best.0 {
                best = (c.squeezed_db, x);
            }
            table.push(vec![
                fmt.num(deg),
                fmt.num(x),
                fmt.db(c.squeezed_db),
                fmt.db(c.antisqueezed_db),
                fmt.db(c.generated_squeezed_db),
                fmt.db(c.generated_antisqueezed_db),
            ]);
        }
        summary.push((
            format!("theta_deg {}", fmt.num(deg)),
            format!("best {} dB at x = {}", fmt.db(best.0), fmt.num(best.1)),
        ));
    }
    let mut metadata = config_metadata("sweep", ctx);
    metadata.push(format!("x = linspace({x_min}, {x_max}, {x_steps})"));
    Ok(Report { summary, metadata, table, companion: None })
}

fn surface_cmd(
    ctx: &Ctx,
    theta: (f64, f64, usize),
    loss: (f64, f64, usize),
    mode: LossModeArg,
    pre_floor: bool,
) -> CliResult<Report> {
    let fmt = ctx.fmt;
    let thetas = sqbudget_core::Axis::linspace("theta_deg", "deg", theta.0, theta.1, theta.2)?;
    let losses = sqbudget_core::Axis::linspace("loss", "1", loss.0, loss.1, loss.2)?;
    let loss_mode = match mode {
        LossModeArg::Fixed => LossMode::Fixed,
        LossModeArg::FollowLine => LossMode::FollowLine,
    };
    let surface = sweep_surface(
        &ctx.model.params,
        &ctx.model.chain,
        &thetas.values,
        &losses.values,
        loss_mode,
        &settings(pre_floor),
    )?;
    let mut header_cols = vec!["theta_deg", "loss"];
    header_cols.extend(SWEEP_COLUMNS);
    header_cols.extend(["x_opt", "boundary"]);
    let mut table = Table::new(&header_cols);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, c) in surface.cells.iter().enumerate() {
        let coords = surface.coordinates(i);
        if best.as_ref().is_none_or(|b| c.squeezed_db < b.0) {
            best = Some((c.squeezed_db, coords.clone()));
        }
        table.push(vec![
            fmt.num(coords[0]),
            fmt.num(coords[1]),
            fmt.db(c.squeezed_db),
            fmt.db(c.antisqueezed_db),
            fmt.db(c.generated_squeezed_db),
            fmt.db(c.generated_antisqueezed_db),
            opt_str(c.x_opt, |v| fmt.num(v)),
            c.boundary.to_string(),
        ]);
    }
    let mut summary = vec![
        ("grid".to_string(), format!("{} theta_deg x {} loss", theta.2, loss.2)),
        ("target".to_string(), target_name(pre_floor).to_string()),
    ];
    if let Some((db, at)) = best {
        summary.push((
            "best".into(),
            format!("{} dB at theta_deg = {}, loss = {}", fmt.db(db), fmt.num(at[0]), fmt.num(at[1])),
        ));
    }
    let companion = if surface.path.is_empty() {
        None
    } else {
        let mut path = Table::new(&["theta_deg", "x_opt", "loss", "squeezed_db", "boundary"]);
        for p in &surface.path {
            path.push(vec![
                fmt.num(p.theta_deg),
                fmt.num(p.x_opt),
                fmt.num(p.loss),
                fmt.db(p.squeezed_db),
                p.boundary.to_string(),
            ]);
        }
        if let (Some(first), Some(last)) = (surface.path.first(), surface.path.last()) {
            summary.push((
                "path".into(),
                format!(
                    "{} dB at theta_deg = {} .. {} dB at theta_deg = {}",
                    fmt.db(first.squeezed_db),
                    fmt.num(first.theta_deg),
                    fmt.db(last.squeezed_db),
                    fmt.num(last.theta_deg)
                ),
            ));
        }
        Some((".path.csv", path))
    };
    let mut metadata = config_metadata("surface", ctx);
    metadata.push(format!("theta_deg = linspace({}, {}, {})", theta.0, theta.1, theta.2));
    metadata.push(format!("loss = linspace({}, {}, {})", loss.0, loss.1, loss.2));
    metadata.push(format!(
        "loss_mode = {}",
        match mode {
            LossModeArg::Fixed => "fixed",
            LossModeArg::FollowLine => "follow-line",
        }
    ));
    metadata.push(format!("target = {}", target_name(pre_floor)));
    Ok(Report { summary, metadata, table, companion })
}

const MC_SAMPLES: usize = 1_000_000;

fn mc_cmd(ctx: &Ctx, dist: DistributionArg, pump: &Pump, samples: Option<usize>, seed: u64) -> CliResult<Report> {
    let (params, chain) = (&ctx.model.params, &ctx.model.chain);
    let fmt = ctx.fmt;
    let x = match resolve_pump(pump, ctx)? {
        Some((x, _)) => x,
        None => find_x_opt_with(params, chain, &OptimizerSettings::default())?.x(),
    };
    let distribution = match dist {
        DistributionArg::Gaussian => JitterDistribution::Gaussian,
        DistributionArg::Uniform => JitterDistribution::Uniform,
    };
    let rms = chain.theta_rms();
    let n = samples.unwrap_or(MC_SAMPLES);
    let spec = JitterSpec::new(distribution, rms, n, seed)?;
    let generated = predict(params, chain, x)?.generated;
    let mc = mc_mixed_pair(generated, &spec);
    let (exp_sq, exp_anti) = expected_mixed_pair(generated, rms, distribution);
    let (lit_sq, lit_anti) = phase_mix(generated, rms)?.values();

    let mut table = Table::new(&[
        "quadrature",
        "mc_mean",
        "mc_std_error",
        "expected",
        "cos2_formula",
        "mc_db",
        "expected_db",
        "cos2_formula_db",
    ]);
    let db = |v: f64| fmt.db(10.0 * v.log10());
    for (name, est, exp, lit) in [
        ("squeezed", mc.squeezed, exp_sq, lit_sq),
        ("antisqueezed", mc.antisqueezed, exp_anti, lit_anti),
    ] {
        table.push(vec![
            name.to_string(),
            fmt.num(est.mean),
            fmt.sci(est.std_error),
            fmt.num(exp),
            fmt.num(lit),
            db(est.mean),
            db(exp),
            db(lit),
        ]);
    }
    let gap = if rms <= 20f64.to_radians() {
        fmt.db(approximation_gap(generated, rms, distribution)?)
    } else {
        "n/a".to_string()
    };
    let summary = vec![
        ("x".to_string(), fmt.num(x)),
        ("distribution".to_string(), distribution.name().to_string()),
        ("phase_rms_deg".to_string(), fmt.num(chain.theta_rms_deg())),
        ("samples".to_string(), n.to_string()),
        (
            "squeezed (mc / expected / cos2) db".to_string(),
            format!("{} / {} / {}", db(mc.squeezed.mean), db(exp_sq), db(lit_sq)),
        ),
        (
            "antisqueezed (mc / expected / cos2) db".to_string(),
            format!("{} / {} / {}", db(mc.antisqueezed.mean), db(exp_anti), db(lit_anti)),
        ),
        ("cos2_formula_gap_db".to_string(), gap),
    ];
    let mut metadata = config_metadata("mc", ctx);
    metadata.extend([
        format!("x = {x}"),
        format!("distribution = {}", distribution.name()),
        format!("samples = {n}"),
        format!("seed = {seed}"),
        format!("rng = {RNG_ALGORITHM}"),
    ]);
    Ok(Report { summary, metadata, table, companion: None })
}

fn write_stdout(report: &Report, to_stdout: bool) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let width = report.summary.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    for (k, v) in &report.summary {
        writeln!(w, "{k:<width$}  {v}")?;
    }
    if to_stdout {
        writeln!(w)?;
        table::write_table(&mut w, &report.metadata, &report.table)?;
        if let Some((_, t)) = &report.companion {
            writeln!(w)?;
            table::write_table(&mut w, &report.metadata, t)?;
        }
    }
    w.flush()
}

fn emit(report: &Report, out: Option<&Path>) -> CliResult<()> {
    if let Some(path) = out {
        table::write_table_file(path, &report.metadata, &report.table)?;
        if let Some((suffix, t)) = &report.companion {
            table::write_table_file(&table::companion_path(path, suffix), &report.metadata, t)?;
        }
    }
    match write_stdout(report, out.is_none()) {
        // a closed pipe (`| head`) is the reader's choice, not a failure
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Io { path: PathBuf::from("<stdout>"), source: e })
        }
        _ => Ok(()),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let report = match &cli.command {
        Command::FitThreshold { table } => fit_threshold_cmd(table, cli.precision)?,
        Command::FitLoss { table } => fit_loss_cmd(table, cli.precision)?,
        Command::Predict { pump } => predict_cmd(&load(cli)?, pump)?,
        Command::Correct { squeezed_db, antisqueezed_db, squeezed_sigma_db, antisqueezed_sigma_db, table, pump } => {
            let ctx = load(cli)?;
            let obs = observed_levels(
                *squeezed_db,
                *antisqueezed_db,
                *squeezed_sigma_db,
                *antisqueezed_sigma_db,
                table.as_deref(),
            )?;
            correct_cmd(&ctx, obs, pump, cli.samples, cli.seed)?
        }
        Command::Optimize { pre_floor } => optimize_cmd(&load(cli)?, *pre_floor)?,
        Command::Sweep { x_min, x_max, x_steps, theta_deg } => {
            sweep_cmd(&load(cli)?, *x_min, *x_max, *x_steps, theta_deg)?
        }
        Command::Surface {
            theta_min,
            theta_max,
            theta_steps,
            loss_min,
            loss_max,
            loss_steps,
            loss_mode,
            pre_floor,
        } => surface_cmd(
            &load(cli)?,
            (*theta_min, *theta_max, *theta_steps),
            (*loss_min, *loss_max, *loss_steps),
            *loss_mode,
            *pre_floor,
        )?,
        Command::Mc { distribution, pump } => mc_cmd(&load(cli)?, *distribution, pump, cli.samples, cli.seed)?,
    };
    emit(&report, cli.out.as_deref())
}
