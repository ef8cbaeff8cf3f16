//! Command-line front end: argument parsing, config merging and output
//! files. All computation is delegated to the sweep engine.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qbattery::dqpt::{critical_times, detect_cusps, CuspParams};
use qbattery::dsl::parse_model_file;
use qbattery::output::{render_svg, to_csv, to_json, write_meta, Format};
use qbattery::sweep::{build_plan, parse_values, run_sweep_timed, Observable, SweepConfig, SweepResult, TimeUnit};
use qbattery::{Error, QuenchSetup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "qbattery", version, about = "Quench-charged two-band quantum battery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Energy and power densities over time.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated observables replacing `e_density,p_density`.
        #[arg(long)]
        observables: Option<String>,
    },
    /// Momentum-resolved stored energy on a (k, t) grid, long format.
    Modes {
        #[command(flatten)]
        common: Common,
        /// Midpoint momenta on (0, π); k* is added when it exists.
        #[arg(long)]
        nk: Option<usize>,
    },
    /// Loschmidt rate function and its cusps.
    Critical {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5.0)]
        cusp_factor: f64,
        #[arg(long, default_value_t = 5)]
        cusp_window: usize,
    },
    /// Long-time plateau of energy and variance densities versus g_f.
    Saturation {
        #[command(flatten)]
        common: Common,
    },
    /// Momentum-resolved signal-to-noise ratio, or with `--rates` the
    /// rate functions λ and λ_snr.
    Snr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nk: Option<usize>,
        #[arg(long)]
        rates: bool,
    },
    /// General sweep driven by a config file and/or flags.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        observables: Option<String>,
        /// gf, gi, initial.<param> or final.<param>.
        #[arg(long)]
        axis: Option<String>,
        /// List `a,b,c` or range `start:stop:count`.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        #[arg(long)]
        nk: Option<usize>,
    },
    /// Critical momentum, ε_f(k*) and critical times.
    DqptInfo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        n_max: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, allow_hyphen_values = true)]
    gi: Option<f64>,
    /// Single value, list `a,b` or range `start:stop:count`.
    #[arg(long, allow_hyphen_values = true)]
    gf: Option<String>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Lattice sites for the finite scheme and for λ_snr.
    #[arg(long = "N")]
    sites: Option<usize>,
    #[arg(long)]
    panels: Option<usize>,
    /// Output path; the format extension is added when missing.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Also write a line plot next to `--out`.
    #[arg(long)]
    svg: bool,
    #[arg(long, value_enum)]
    time_unit: Option<TimeUnitArg>,
    /// Model/config file (`[initial]`, `[final]`, `[sweep]`, `[scheme]`).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall time in the metadata sidecar.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Quad,
    Finite,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TimeUnitArg {
    Abs,
    Tc,
}

impl FormatArg {
    fn format(self) -> Format {
        match self {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ModelFile(_) | Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Compute(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            EXIT_COMPUTE
        }
    }
}

fn parse_observables(s: &str) -> CliResult<Vec<Observable>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(Failure::Usage))
        .collect()
}

/// Config file values, then flags on top.
fn base_config(common: &Common, tfim_required: bool) -> CliResult<SweepConfig> {
    let file_cfg = match &common.model {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let file = parse_model_file(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            SweepConfig::from_model_file(&file)?
        }
        None => SweepConfig::default(),
    };
    let custom = file_cfg.model.is_some();
    if tfim_required && !custom {
        let mut missing = Vec::new();
        if common.gi.is_none() && file_cfg.gi.is_none() {
            missing.push("--gi");
        }
        if common.gf.is_none() && file_cfg.gf.is_none() && file_cfg.values.is_none() {
            missing.push("--gf");
        }
        if !missing.is_empty() {
            return Err(Failure::Usage(format!(
                "missing required flag(s) {} (or a --model file)",
                missing.join(", ")
            )));
        }
    }
    let mut flags = SweepConfig {
        t1: common.tmax,
        nt: common.nt,
        scheme: common.scheme.map(|s| match s {
            SchemeArg::Quad => "quad".to_string(),
            SchemeArg::Finite => "finite".to_string(),
        }),
        sites: common.sites,
        panels: common.panels,
        time_unit: common.time_unit.map(|u| match u {
            TimeUnitArg::Abs => TimeUnit::Absolute,
            TimeUnitArg::Tc => TimeUnit::CriticalTime,
        }),
        ..Default::default()
    };
    if let Some(gf) = &common.gf {
        let values = parse_values(gf).map_err(|m| Failure::Usage(format!("--gf: {m}")))?;
        flags.gf = values.first().copied();
        flags.axis = Some("gf".to_string());
        flags.values = Some(values);
    }
    let mut merged = file_cfg.overridden_by(flags);
    if let Some(gi) = common.gi {
        match merged.model.take() {
            Some(q) => {
                let initial = q.initial.with_param("g", gi).map_err(|e| Failure::Usage(format!("--gi: {e}")))?;
                merged.model = Some(QuenchSetup::new(initial, q.final_));
            }
            None => merged.gi = Some(gi),
        }
    }
    Ok(merged)
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Evolve { common, observables } => {
            let mut cfg = base_config(&common, true)?;
            cfg.observables = Some(match observables {
                Some(s) => parse_observables(&s)?,
                None => vec![Observable::EDensity, Observable::PDensity],
            });
            run_and_emit("evolve", &common, cfg, Vec::new()).map(drop)
        }
        Command::Modes { common, nk } => {
            if common.svg {
                return Err(Failure::Usage("modes output is long-format CSV/JSON only; --svg is not supported".into()));
            }
            let mut cfg = base_config(&common, true)?;
            cfg.nk = nk.or(cfg.nk);
            cfg.observables = Some(vec![Observable::ModeDeltaE]);
            run_and_emit("modes", &common, cfg, Vec::new()).map(drop)
        }
        Command::Critical {
            common,
            cusp_factor,
            cusp_window,
        } => {
            let mut cfg = base_config(&common, true)?;
            cfg.t1 = cfg.t1.or(Some(5.0));
            cfg.nt = cfg.nt.or(Some(2001));
            cfg.observables = Some(vec![Observable::RateLambda]);
            let params = CuspParams {
                factor: cusp_factor,
                window: cusp_window,
            };
            let extra = vec![
                ("cusp_factor".to_string(), json!(cusp_factor)),
                ("cusp_window".to_string(), json!(cusp_window)),
            ];
            let result = run_and_emit("critical", &common, cfg, extra)?;
            report_cusps(&result, &params)
        }
        Command::Saturation { common } => {
            let mut cfg = base_config(&common, true)?;
            cfg.observables = Some(vec![Observable::EInf, Observable::VarInf]);
            cfg.param_column = Some(true);
            run_and_emit("saturation", &common, cfg, Vec::new()).map(drop)
        }
        Command::Snr { common, nk, rates } => {
            let mut cfg = base_config(&common, true)?;
            if rates {
                cfg.observables = Some(vec![Observable::RateLambda, Observable::RateLambdaSnr]);
            } else {
                if common.svg {
                    return Err(Failure::Usage("momentum-resolved output does not support --svg; use --rates".into()));
                }
                cfg.nk = nk.or(cfg.nk);
                cfg.observables = Some(vec![Observable::ModeSnr]);
            }
            run_and_emit("snr", &common, cfg, Vec::new()).map(drop)
        }
        Command::Sweep {
            common,
            observables,
            axis,
            values,
            nk,
        } => {
            let mut cfg = base_config(&common, false)?;
            if let Some(s) = observables {
                cfg.observables = Some(parse_observables(&s)?);
            }
            if let Some(a) = axis {
                cfg.axis = Some(a);
            }
            if let Some(v) = values {
                cfg.values = Some(parse_values(&v).map_err(|m| Failure::Usage(format!("--values: {m}")))?);
            }
            cfg.nk = nk.or(cfg.nk);
            run_and_emit("sweep", &common, cfg, Vec::new()).map(drop)
        }
        Command::DqptInfo { common, n_max } => dqpt_info(&common, n_max),
    }
}

/// Runs the plan, writes the table (stdout or `--out`), the metadata
/// sidecar and the optional SVG.
fn run_and_emit(
    name: &str,
    common: &Common,
    cfg: SweepConfig,
    extra_meta: Vec<(String, serde_json::Value)>,
) -> CliResult<SweepResult> {
    let plan = build_plan(&cfg)?;
    if common.svg && common.out.is_none() {
        return Err(Failure::Usage("--svg requires --out".into()));
    }
    let (mut result, wall) = run_sweep_timed(&plan, common.workers)?;
    result.meta.insert("command".into(), json!(name));
    result.meta.extend(extra_meta);
    let format = common.format.format();
    let body = match format {
        Format::Csv => to_csv(&result)?,
        Format::Json => to_json(&result)?,
    };
    match &common.out {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes()).map_err(|e| Failure::Compute(e.into()))?;
        }
        Some(path) => {
            let path = with_extension(path, format.extension());
            fs::write(&path, body).map_err(|e| Failure::Compute(e.into()))?;
            let mut sidecar = result.clone();
            if let Some(w) = common.workers {
                sidecar.meta.insert("workers".into(), json!(w));
            }
            write_meta(&sidecar, &sidecar_path(&path), common.timing.then_some(wall))?;
            if common.svg {
                let svg = plot(&result, &plan_x(&result, &plan_param(&result)))?;
                fs::write(path.with_extension("svg"), svg).map_err(|e| Failure::Compute(e.into()))?;
            }
        }
    }
    Ok(result)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    match path.extension() {
        Some(_) => path.to_path_buf(),
        None => path.with_extension(ext),
    }
}

/// `run1.csv` → `run1.csv.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// The parameter column, when present.
fn plan_param(result: &SweepResult) -> Option<String> {
    let axis = result.meta.get("axis")?.as_str()?;
    result.columns.iter().any(|c| c == axis).then(|| axis.to_string())
}

/// `(x column, group column)`: time when present, else the parameter.
fn plan_x(result: &SweepResult, param: &Option<String>) -> (String, Option<String>) {
    match result.columns.iter().find(|c| *c == "t" || *c == "t_over_tc") {
        Some(t) => (t.clone(), param.clone()),
        None => (param.clone().unwrap_or_else(|| result.columns[0].clone()), None),
    }
}

/// One polyline per observable, or per (observable, parameter value) when
/// a time series is grouped by parameter.
fn plot(result: &SweepResult, (x, group): &(String, Option<String>)) -> CliResult<String> {
    let ys: Vec<&str> = result
        .columns
        .iter()
        .map(String::as_str)
        .filter(|c| *c != x && Some(*c) != group.as_deref())
        .collect();
    let svg = match group {
        Some(g) => {
            let wide = result.pivot(x, g, &ys)?;
            let names: Vec<&str> = wide.columns[1..].iter().map(String::as_str).collect();
            render_svg(&wide, x, &names)?
        }
        None => render_svg(result, x, &ys)?,
    };
    Ok(svg)
}

fn report_cusps(result: &SweepResult, params: &CuspParams) -> CliResult<()> {
    let t_col = if result.columns.iter().any(|c| c == "t") { "t" } else { "t_over_tc" };
    let param = plan_param(result);
    let groups: Vec<(Option<f64>, SweepResult)> = match &param {
        Some(p) => {
            let pi = result.column_index(p)?;
            let mut values: Vec<f64> = Vec::new();
            for r in &result.rows {
                if !values.iter().any(|v| v.to_bits() == r[pi].to_bits()) {
                    values.push(r[pi]);
                }
            }
            values
                .into_iter()
                .map(|v| {
                    let rows = result.rows.iter().filter(|r| r[pi].to_bits() == v.to_bits()).cloned().collect();
                    (Some(v), SweepResult::new(result.columns.clone(), rows))
                })
                .collect()
        }
        None => vec![(None, result.clone())],
    };
    for (value, table) in groups {
        let ts = table.column(t_col)?;
        let lambda = table.column("rate_lambda")?;
        let label = match (&param, value) {
            (Some(p), Some(v)) => format!("{p} = {v}: "),
            _ => String::new(),
        };
        match detect_cusps(&ts, &lambda, params) {
            Ok(c) => eprintln!("{label}cusps at {t_col} = {c:?}"),
            Err(e) => eprintln!("{label}cusp detection skipped: {e}"),
        }
    }
    Ok(())
}

fn dqpt_info(common: &Common, n_max: usize) -> CliResult<()> {
    let cfg = base_config(common, true)?;
    let setups: Vec<(Option<f64>, QuenchSetup)> = match &cfg.model {
        Some(q) => match &cfg.values {
            Some(vs) if common.gf.is_some() => vs
                .iter()
                .map(|&g| Ok((Some(g), QuenchSetup::new(q.initial.clone(), q.final_.with_param("g", g)?))))
                .collect::<Result<_, Error>>()?,
            _ => vec![(None, q.clone())],
        },
        None => {
            let gi = cfg.gi.unwrap_or(0.0);
            cfg.values
                .clone()
                .unwrap_or_default()
                .into_iter()
                .map(|g| (Some(g), QuenchSetup::tfim(gi, g)))
                .collect()
        }
    };
    let mut columns = vec!["gf".to_string(), "k_star".into(), "eps_f_star".into()];
    columns.extend((0..=n_max).map(|n| format!("t_c{n}")));
    let mut rows = Vec::new();
    let mut text = String::new();
    for (gf, q) in &setups {
        if setups.len() > 1 {
            text.push_str(&format!("gf = {}\n", gf.unwrap_or(f64::NAN)));
        }
        let mut row = vec![gf.unwrap_or(f64::NAN)];
        match critical_times(q, n_max) {
            Ok(c) => {
                text.push_str(&format!("k_star = {:.16e}\n", c.k_star));
                text.push_str(&format!("eps_f_star = {:.16e}\n", c.eps_f_star));
                for (n, t) in c.t_c.iter().enumerate() {
                    text.push_str(&format!("t_c{n} = {t:.16e}\n"));
                }
                if c.root_count > 1 {
                    text.push_str(&format!("critical_momenta = {}\n", c.root_count));
                }
                row.extend([c.k_star, c.eps_f_star]);
                row.extend(&c.t_c);
            }
            Err(Error::NoDqpt) => {
                text.push_str("k_star = none\n");
                row.extend(std::iter::repeat(f64::NAN).take(n_max + 3));
            }
            Err(e) => return Err(e.into()),
        }
        rows.push(row);
    }
    let mut result = SweepResult::new(columns, rows);
    result.meta.insert("command".into(), json!("dqpt-info"));
    result.meta.insert("gi".into(), json!(cfg.gi));
    result.meta.insert("n_max".into(), json!(n_max));
    match (&common.out, common.format) {
        (None, FormatArg::Csv) => print!("{text}"),
        (None, FormatArg::Json) => print!("{}", to_json(&result)?),
        (Some(path), f) => {
            let format = f.format();
            let path = with_extension(path, format.extension());
            qbattery::output::write_table(&result, format, &path)?;
            write_meta(&result, &sidecar_path(&path), None)?;
        }
    }
    Ok(())
}
