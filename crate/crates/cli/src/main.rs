//! Command-line interface: model checking, fitting, comparison, bootstrap,
//! diagnostics, simulation and the random-scale experiments.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use maxstable::inference::{self, FitConfig, FitReport, StagePlan, TicConfig};
use maxstable::randscale::{Regime, RegimeConfig};
use maxstable::simulate::{AltitudeField, GridSpec};
use maxstable::{
    check_cnd, check_psd, empirical, load_panel, load_sites, simulate_exact, simulate_field_grid,
    BlockMaximaPanel, DependenceSpec, Family, Kernel, MarginState, SiteGenerator, SiteSet,
    Structure,
};

#[derive(Parser)]
#[command(
    name = "maxstable",
    about = "Stationary and non-stationary max-stable models for spatial extremes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Numerically certify a model's definiteness (CND for BR variograms,
    /// PSD for ET correlations) over random site draws.
    Check {
        /// Model spec JSON.
        #[arg(long)]
        model: PathBuf,
        /// Random site configurations to draw.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Sites per configuration.
        #[arg(long, default_value_t = 10)]
        sites: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path of the JSON report (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one model by pairwise likelihood and print the report as JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Model spec JSON with initial parameter values.
        #[arg(long)]
        model: PathBuf,
        /// Also compute the TIC.
        #[arg(long, default_value_t = false)]
        tic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a list of structures with nested warm starts and emit a TIC
    /// comparison table as CSV (columns: model, TIC, loglik).
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Process family (BR or ET).
        #[arg(long)]
        family: String,
        /// Comma-separated structures in fitting order.
        #[arg(long, default_value = "iso,aniso,M1,M2,M3,M_BD")]
        structures: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parametric bootstrap from a fitted model spec; emits a CSV table
    /// (columns: parameter, true value, mean, sd).
    Bootstrap {
        /// Fitted model spec JSON (the truth of the simulation).
        #[arg(long)]
        model: PathBuf,
        /// Site metadata CSV.
        #[arg(long)]
        sites: PathBuf,
        /// Years per simulated panel.
        #[arg(long)]
        years: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical vs fitted extremal coefficients by distance (CSV).
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated fitted model spec JSON paths (may be empty).
        #[arg(long, default_value = "")]
        models: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Site-wise GEV margin estimates (CSV).
    Margins {
        /// Panel CSV of raw block maxima.
        #[arg(long)]
        panel: PathBuf,
        /// Site metadata CSV.
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact simulation on the station set or on a grid (CSV).
    Simulate {
        /// Model spec JSON.
        #[arg(long)]
        model: PathBuf,
        /// Site metadata CSV (mutually exclusive with --grid).
        #[arg(long)]
        sites: Option<PathBuf>,
        /// Grid "x0,x1,y0,y1,nx,ny[,alt[,gx,gy]]" (km; constant altitude or
        /// a plane).
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-scale tail-dependence experiments (CSV rows: p, chi_hat,
    /// n_exceed).
    Regimes {
        /// Which regime: thm51, thm52 or thm53.
        #[arg(long)]
        which: String,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Growth constant of the thm53 variogram rule.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Shared input arguments of the likelihood-based subcommands.
#[derive(Args)]
struct DataArgs {
    /// Panel CSV of block maxima.
    #[arg(long)]
    panel: PathBuf,
    /// Site metadata CSV.
    #[arg(long)]
    sites: PathBuf,
    /// Treat the panel as already unit Frechet (skip the GEV margin step).
    #[arg(long, default_value_t = false)]
    frechet: bool,
}

fn read_spec(path: &PathBuf) -> Result<DependenceSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model spec {}", path.display()))
}

fn emit(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{contents}"),
    }
    Ok(())
}

/// Load the panel and bring it to the unit Frechet scale.
fn load_frechet(data: &DataArgs) -> Result<(SiteSet, BlockMaximaPanel)> {
    let (sites, raw) = load_panel(&data.panel, &data.sites)?;
    if data.frechet {
        let n = raw.n_years();
        let k = raw.n_sites();
        let mut values = Vec::with_capacity(n * k);
        let mut missing = Vec::with_capacity(n * k);
        for m in 0..n {
            for s in 0..k {
                values.push(raw.value(m, s).unwrap_or(f64::NAN));
                missing.push(raw.is_missing(m, s));
            }
        }
        let panel =
            BlockMaximaPanel::new(raw.years().to_vec(), values, missing, k, MarginState::UnitFrechet)?;
        return Ok((sites, panel));
    }
    let margins = empirical::fit_margins(&raw, &sites)?;
    let panel = empirical::to_unit_frechet(&raw, &margins)?;
    Ok((sites, panel))
}

fn parse_family(s: &str) -> Result<Family> {
    match s {
        "BR" => Ok(Family::BrownResnick),
        "ET" => Ok(Family::ExtremalT),
        other => bail!("unknown family '{other}' (expected BR or ET)"),
    }
}

fn parse_structure(s: &str) -> Result<Structure> {
    Ok(match s {
        "iso" => Structure::Iso,
        "aniso" => Structure::Aniso,
        "M1" => Structure::M1,
        "M2" => Structure::M2,
        "M3" => Structure::M3,
        "M_BD" => Structure::Mbd,
        "M_HG" => Structure::Mhg,
        other => bail!("unknown structure '{other}'"),
    })
}

fn run_check(
    model: PathBuf,
    trials: usize,
    sites: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = read_spec(&model)?;
    let kernel = Kernel::from_spec(&spec)?;
    let generator = SiteGenerator::default();
    let report = match spec.family() {
        Family::BrownResnick => {
            check_cnd(&|a, b| kernel.vario(a, b), &generator, sites, trials, seed)?
        }
        Family::ExtremalT => {
            check_psd(&|a, b| kernel.corr(a, b), &generator, sites, trials, seed)?
        }
    };
    emit(&out, &format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn run_fit(
    data: DataArgs,
    model: PathBuf,
    with_tic: bool,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = read_spec(&model)?;
    let (sites, panel) = load_frechet(&data)?;
    let plan = StagePlan::default_for(&spec);
    let cfg = FitConfig { seed, ..FitConfig::default() };
    let mut report = inference::fit(&panel, &sites, &spec, &plan, &cfg)?;
    if with_tic {
        inference::tic(&panel, &sites, &mut report, &TicConfig { pseudo_inverse_fallback: true })?;
    }
    emit(&out, &format!("{}\n", serde_json::to_string_pretty(&report)?))
}

/// Fit the structures in order, warm-starting each from the closest nested
/// model fitted so far.
fn run_compare(
    data: DataArgs,
    family: String,
    structures: String,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let family = parse_family(&family)?;
    let (sites, panel) = load_frechet(&data)?;
    let mut rows = String::from("model,TIC,loglik\n");
    let mut fitted: Vec<(Structure, FitReport)> = Vec::new();
    for name in structures.split(',').filter(|s| !s.is_empty()) {
        let structure = parse_structure(name)?;
        let mut spec = inference::neutral_start(
            &DependenceSpec::with_defaults(family, structure)?,
            &sites,
        )?;
        let parent = fitted.iter().rev().find(|(s, _)| nests_into(*s, structure));
        if let Some((_, parent_report)) = parent {
            inference::init_from_nested(&mut spec, &parent_report.spec)?;
        }
        let plan = StagePlan::default_for(&spec);
        let cfg = FitConfig { seed, ..FitConfig::default() };
        let mut report = inference::fit(&panel, &sites, &spec, &plan, &cfg)?;
        if let Some((_, parent_report)) = parent {
            if report.loglik < parent_report.loglik - 1e-6 {
                log::warn!(
                    "{} fitted below its nested start {} ({} < {})",
                    structure.label(),
                    parent_report.spec.structure().label(),
                    report.loglik,
                    parent_report.loglik
                );
            }
        }
        let tic =
            inference::tic(&panel, &sites, &mut report, &TicConfig { pseudo_inverse_fallback: true })?;
        rows.push_str(&format!("{},{:.1},{:.1}\n", structure.label(), tic, report.loglik));
        fitted.push((structure, report));
    }
    emit(&out, &rows)
}

/// Whether `child` extends `parent` and can start from its optimum.
fn nests_into(parent: Structure, child: Structure) -> bool {
    use Structure::*;
    matches!(
        (parent, child),
        (Iso, Aniso)
            | (Iso, M1)
            | (Aniso, M1)
            | (Aniso, Mbd)
            | (Aniso, Mhg)
            | (M1, M2)
            | (M2, M3)
    )
}

fn run_bootstrap(
    model: PathBuf,
    sites_path: PathBuf,
    years: usize,
    reps: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = read_spec(&model)?;
    let sites = load_sites(&sites_path)?;
    let plan = StagePlan::default_for(&spec);
    let table =
        inference::bootstrap(&spec, &sites, years, reps, seed, &plan, &FitConfig::default())?;
    let mut csv = String::from("parameter,true value,mean,sd\n");
    for row in &table.rows {
        let mean = row.mean.map_or(String::from("NA"), |v| format!("{v:.4}"));
        let sd = row.sd.map_or(String::from("NA"), |v| format!("{v:.4}"));
        csv.push_str(&format!("{},{:.4},{},{}\n", row.name, row.truth, mean, sd));
    }
    csv.push_str(&format!(
        "# converged {} of {} replicates\n",
        table.n_converged, table.n_reps
    ));
    emit(&out, &csv)
}

fn run_diagnose(data: DataArgs, models: String, out: Option<PathBuf>) -> Result<()> {
    let (sites, panel) = load_frechet(&data)?;
    let specs: Vec<DependenceSpec> = models
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|p| read_spec(&PathBuf::from(p)))
        .collect::<Result<_>>()?;
    let spec_refs: Vec<&DependenceSpec> = specs.iter().collect();
    let rows = empirical::theta_vs_distance(&panel, &sites, &spec_refs)?;
    let mut csv = String::from("site_i,site_j,distance_km,theta_empirical");
    for spec in &specs {
        csv.push_str(&format!(
            ",theta_{}_{}",
            spec.family().label(),
            spec.structure().label()
        ));
    }
    csv.push('\n');
    for row in rows {
        csv.push_str(&format!(
            "{},{},{:.3},{:.4}",
            row.site_i, row.site_j, row.distance_km, row.theta_empirical
        ));
        for v in row.theta_model {
            csv.push_str(&format!(",{v:.4}"));
        }
        csv.push('\n');
    }
    emit(&out, &csv)
}

fn run_margins(panel: PathBuf, sites: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let (sites, raw) = load_panel(&panel, &sites)?;
    let margins = empirical::fit_margins(&raw, &sites)?;
    let mut csv = String::from("site_id,xi,mu,sigma\n");
    for (id, m) in sites.ids().iter().zip(&margins) {
        csv.push_str(&format!("{},{:.5},{:.4},{:.4}\n", id, m.xi, m.mu, m.sigma));
    }
    emit(&out, &csv)
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().context("grid parts must be numeric"))
        .collect::<Result<_>>()?;
    let altitude = match parts.len() {
        6 => AltitudeField::Constant(0.0),
        7 => AltitudeField::Constant(parts[6]),
        9 => AltitudeField::Plane { base: parts[6], gx: parts[7], gy: parts[8] },
        n => bail!("grid spec needs 6, 7 or 9 comma-separated values, got {n}"),
    };
    Ok(GridSpec {
        x_range: (parts[0], parts[1]),
        y_range: (parts[2], parts[3]),
        nx: parts[4] as usize,
        ny: parts[5] as usize,
        altitude,
    })
}

fn run_simulate(
    model: PathBuf,
    sites: Option<PathBuf>,
    grid: Option<String>,
    reps: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = read_spec(&model)?;
    let (site_set, panel) = match (&sites, &grid) {
        (Some(path), None) => {
            let site_set = load_sites(path)?;
            let panel = simulate_exact(&site_set, &spec, reps, seed)?;
            (site_set, panel)
        }
        (None, Some(grid)) => simulate_field_grid(&parse_grid(grid)?, &spec, reps, seed)?,
        _ => bail!("exactly one of --sites and --grid must be given"),
    };
    let mut csv = String::from("site_id,x_km,y_km,alt_km,rep,value\n");
    for s in 0..site_set.len() {
        let c = site_set.coords(s);
        for m in 0..panel.n_years() {
            csv.push_str(&format!(
                "{},{:.3},{:.3},{:.4},{},{}\n",
                site_set.ids()[s],
                c[0],
                c[1],
                site_set.covariates(s)[0],
                m + 1,
                panel.value(m, s).unwrap()
            ));
        }
    }
    emit(&out, &csv)
}

fn run_regimes(
    which: String,
    n: usize,
    seed: u64,
    c: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let regime: Regime = which.parse()?;
    let mut cfg = RegimeConfig { n, ..RegimeConfig::default() };
    if let Some(c) = c {
        cfg.c = c;
    }
    let (curve, verdict) = maxstable::regime_experiment(regime, &cfg, seed)?;
    let mut csv = String::from("p,chi_hat,n_exceed\n");
    for ((p, chi), ne) in curve.thresholds.iter().zip(&curve.chi_hat).zip(&curve.n_exceed) {
        let chi = chi.map_or(String::from("NA"), |v| format!("{v:.5}"));
        csv.push_str(&format!("{p},{chi},{ne}\n"));
    }
    csv.push_str(&format!("# regime {} verdict {}\n", regime.label(), verdict.label()));
    emit(&out, &csv)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Check { model, trials, sites, seed, out } => {
            run_check(model, trials, sites, seed, out)
        }
        Command::Fit { data, model, tic, seed, out } => run_fit(data, model, tic, seed, out),
        Command::Compare { data, family, structures, seed, out } => {
            run_compare(data, family, structures, seed, out)
        }
        Command::Bootstrap { model, sites, years, reps, seed, out } => {
            run_bootstrap(model, sites, years, reps, seed, out)
        }
        Command::Diagnose { data, models, out } => run_diagnose(data, models, out),
        Command::Margins { panel, sites, out } => run_margins(panel, sites, out),
        Command::Simulate { model, sites, grid, reps, seed, out } => {
            run_simulate(model, sites, grid, reps, seed, out)
        }
        Command::Regimes { which, n, seed, c, out } => run_regimes(which, n, seed, c, out),
    }
}
