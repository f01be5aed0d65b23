//! `cascade-cool`: rates, spectra, scans and optimization of cascade
//! (two-photon) laser cooling from the command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cool::bloch::LaserConfig;
use cascade_cool::cooling::{temperature, CoolingReport, REPORT_CSV_HEADER};
use cascade_cool::scan::{
    parse_frequency, run_optimize, run_scan, write_frontier_csv, write_scan_csv, OptimizeOutcome,
    OptimizeSpec, ScanSpec,
};
use cascade_cool::scattering::{
    absorption_spectrum, rate_profile, write_profile_csv, write_spectrum_csv, Grid,
};
use cascade_cool::species::{EmissionGeometry, Species, SpeciesCatalog, ATOMIC_MASS_UNIT};
use cascade_cool::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cascade-cool",
    version,
    about = "Cascade laser cooling rates, temperatures and scans"
)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

/// Frequencies accept a suffix: `g1` (×Γ1), `g2` (×Γ2) or `MHz` (×2π·10⁶);
/// bare numbers are rad/s.
#[derive(Args)]
struct Global {
    /// Species name from the species data file.
    #[arg(long, global = true, default_value = "Mg")]
    species: String,
    /// Lower-transition Rabi frequency Ω1.
    #[arg(
        long,
        global = true,
        allow_hyphen_values = true,
        default_value = "0.01g1"
    )]
    omega1: String,
    /// Upper-transition Rabi frequency Ω2.
    #[arg(long, global = true, allow_hyphen_values = true, default_value = "0")]
    omega2: String,
    /// Lower-transition detuning δ1.
    #[arg(long, global = true, allow_hyphen_values = true, default_value = "0")]
    delta1: String,
    /// Upper-transition detuning δ2.
    #[arg(long, global = true, allow_hyphen_values = true, default_value = "0")]
    delta2: String,
    /// Emission-pattern second moment of the lower transition.
    #[arg(long, global = true)]
    chi1: Option<f64>,
    /// Emission-pattern second moment of the upper transition.
    #[arg(long, global = true)]
    chi2: Option<f64>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// List or show species records.
    Species {
        #[command(subcommand)]
        action: SpeciesAction,
    },
    /// R1, R2 and force versus velocity.
    Rates {
        /// Half-width of the velocity grid in m/s (default depends on regime).
        #[arg(long)]
        vmax: Option<f64>,
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Absorption (R1 at rest) versus δ1.
    Spectrum {
        #[arg(long, allow_hyphen_values = true, default_value = "-1.5g1")]
        from: String,
        #[arg(long, allow_hyphen_values = true, default_value = "1.5g1")]
        to: String,
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Run the [scan] section of a configuration file.
    Scan { config: PathBuf },
    /// Run the [optimize] section of a configuration file.
    Optimize { config: PathBuf },
    /// Cooling rate, heating rate, temperature and capture range at one point.
    Report {
        /// Emit a CSV row instead of a summary.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Subcommand)]
enum SpeciesAction {
    List,
    Show { name: String },
}

enum Failure {
    Usage(String),
    Compute(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingField { .. }
            | Error::NonPositive { .. }
            | Error::InvalidValue { .. }
            | Error::UnknownSpecies(_)
            | Error::Parse { .. }
            | Error::NonFinite(_)
            | Error::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Compute(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Compute(format!("write failed: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let catalog = SpeciesCatalog::from_env()?;
    let mut out = output(g.out.as_ref())?;

    match &cli.command {
        Command::Species { action } => match action {
            SpeciesAction::List => {
                for s in catalog.iter() {
                    writeln!(out, "{}", s.name())?;
                }
            }
            SpeciesAction::Show { name } => show_species(&mut out, catalog.get(name)?)?,
        },
        Command::Rates { vmax, points } => {
            let species = catalog.get(&g.species)?;
            let lasers = lasers(g, species)?;
            let vmax = match vmax {
                Some(v) => *v,
                None => *Grid::default_velocities(species, &lasers)
                    .values()
                    .last()
                    .expect("non-empty"),
            };
            let grid = Grid::linspace(-vmax, vmax, *points)?;
            write_profile_csv(&mut out, &rate_profile(species, &lasers, &grid)?)?;
        }
        Command::Spectrum { from, to, points } => {
            let species = catalog.get(&g.species)?;
            let lasers = lasers(g, species)?;
            let grid = Grid::linspace(
                parse_frequency(from, species)?,
                parse_frequency(to, species)?,
                *points,
            )?;
            write_spectrum_csv(&mut out, &absorption_spectrum(species, &lasers, &grid)?)?;
        }
        Command::Scan { config } => {
            let spec = ScanSpec::from_file(config, &catalog)?;
            write_scan_csv(&mut out, &run_scan(&spec))?;
        }
        Command::Optimize { config } => {
            let spec = OptimizeSpec::from_file(config, &catalog)?;
            let result = run_optimize(&spec);
            write_frontier_csv(&mut out, &result)?;
            match &result.outcome {
                OptimizeOutcome::Best(p) => match &p.result {
                    Ok(report) => {
                        eprintln!("best point:");
                        summarize(&mut io::stderr(), report)?;
                    }
                    Err(msg) => return Err(Failure::Compute(msg.clone())),
                },
                OptimizeOutcome::NoCooling => eprintln!("no cooling found"),
            }
        }
        Command::Report { csv } => {
            let species = catalog.get(&g.species)?;
            let lasers = lasers(g, species)?;
            let report = temperature(species, &lasers, &geometry(g)?)?;
            if *csv {
                writeln!(out, "{REPORT_CSV_HEADER}")?;
                writeln!(out, "{}", report.csv_row())?;
            } else {
                summarize(&mut out, &report)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn lasers(g: &Global, species: &Species) -> Result<LaserConfig, Failure> {
    let f = |s: &str| parse_frequency(s, species);
    Ok(LaserConfig::new(
        f(&g.omega1)?,
        f(&g.omega2)?,
        f(&g.delta1)?,
        f(&g.delta2)?,
    )?)
}

fn geometry(g: &Global) -> Result<EmissionGeometry, Failure> {
    let d = EmissionGeometry::default();
    Ok(EmissionGeometry::new(
        g.chi1.unwrap_or(d.chi1()),
        g.chi2.unwrap_or(d.chi2()),
    )?)
}

/// Up to six decimals, trailing zeros removed.
fn short(x: f64) -> String {
    let s = format!("{x:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn show_species(out: &mut dyn Write, s: &Species) -> io::Result<()> {
    let mhz = |gamma: f64| gamma / (2.0 * std::f64::consts::PI * 1e6);
    writeln!(out, "name = {}", s.name())?;
    writeln!(out, "mass_u = {}", short(s.mass() / ATOMIC_MASS_UNIT))?;
    writeln!(out, "lambda1_nm = {}", short(s.lambda1() * 1e9))?;
    writeln!(out, "gamma1_over_2pi_MHz = {}", short(mhz(s.gamma1())))?;
    writeln!(out, "lambda2_nm = {}", short(s.lambda2() * 1e9))?;
    writeln!(out, "gamma2_over_2pi_MHz = {}", short(mhz(s.gamma2())))?;
    writeln!(out, "T_D1_mK = {}", short(s.doppler_limit_lower() * 1e3))?;
    writeln!(out, "T_D2_mK = {}", short(s.doppler_limit_upper() * 1e3))
}

fn summarize(out: &mut dyn Write, r: &CoolingReport) -> io::Result<()> {
    writeln!(out, "regime = {}", r.regime.as_str())?;
    writeln!(out, "alpha = {:.6e} 1/s", r.alpha)?;
    writeln!(out, "H = {:.6e} W", r.heating)?;
    match r.temperature {
        Some(t) => writeln!(out, "T = {:.4} mK", t * 1e3)?,
        None => writeln!(out, "T = none")?,
    }
    if let Some(c) = r.capture {
        let edge = if c.reached_grid_edge() {
            " (grid edge)"
        } else {
            ""
        };
        writeln!(out, "capture = {:.6e} m/s{edge}", c.half_width)?;
    }
    if r.saturation_warning {
        writeln!(
            out,
            "warning: intermediate-state population above the weak-drive regime"
        )?;
    }
    Ok(())
}
