//! Parameter scans and grid-search optimization, plus the configuration
//! format that drives them.
//!
//! Frequencies in configuration files and on the command line carry an
//! optional unit suffix: `g1` (units of Γ1), `g2` (units of Γ2), `MHz`
//! (×2π·10⁶ rad/s). A bare number is in rad/s. Ranges are written
//! `start:stop:points`.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::bloch::LaserConfig;
use crate::cooling::{
    analyze, capture_range, AnalysisOptions, CoolingReport, Regime, REPORT_CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::kv::{parse_sections, Section};
use crate::scattering::{force_profile, rate_r1_obe, Grid};
use crate::species::{EmissionGeometry, Species, SpeciesCatalog};

const MHZ: f64 = 2.0 * std::f64::consts::PI * 1e6;

/// Parses a frequency with an optional `g1`, `g2` or `MHz` suffix into rad/s.
pub fn parse_frequency(text: &str, species: &Species) -> Result<f64> {
    let s = text.trim();
    let lower = s.to_ascii_lowercase();
    let (number, scale) = if lower.ends_with("mhz") {
        (&s[..s.len() - 3], MHZ)
    } else if lower.ends_with("g1") {
        (&s[..s.len() - 2], species.gamma1())
    } else if lower.ends_with("g2") {
        (&s[..s.len() - 2], species.gamma2())
    } else {
        (s, 1.0)
    };
    let value: f64 = number.trim().parse().map_err(|_| Error::InvalidValue {
        field: text.to_string(),
        reason: "expected a number with optional suffix g1, g2 or MHz".into(),
    })?;
    if !value.is_finite() {
        return Err(Error::InvalidValue {
            field: text.to_string(),
            reason: "not finite".into(),
        });
    }
    Ok(value * scale)
}

/// Evenly spaced values from `start` to `stop`, both in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Range {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if !(start < stop) {
            return Err(Error::InvalidValue {
                field: "range".into(),
                reason: format!("start {start} must be below stop {stop}"),
            });
        }
        if points < 2 {
            return Err(Error::InvalidValue {
                field: "range".into(),
                reason: format!("needs at least 2 points, got {points}"),
            });
        }
        Ok(Self {
            start,
            stop,
            points,
        })
    }

    /// Parses `start:stop:points`, or `start:stop` when `default_points` is given.
    pub fn parse(text: &str, species: &Species, default_points: Option<usize>) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let points = match (parts.len(), default_points) {
            (3, _) => parts[2]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidValue {
                    field: text.to_string(),
                    reason: format!("point count `{}` is not a whole number", parts[2].trim()),
                })?,
            (2, Some(n)) => n,
            _ => {
                return Err(Error::InvalidValue {
                    field: text.to_string(),
                    reason: "expected start:stop:points".into(),
                })
            }
        };
        Self::new(
            parse_frequency(parts[0], species)?,
            parse_frequency(parts[1], species)?,
            points,
        )
    }

    pub fn grid(&self) -> Grid {
        Grid::linspace(self.start, self.stop, self.points).expect("validated range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    Delta1,
    Delta2,
    /// δ1 + δ2 at fixed δ1.
    TwoPhoton,
    Omega2,
}

impl ScanAxis {
    pub const ALL: [ScanAxis; 4] = [
        ScanAxis::Delta1,
        ScanAxis::Delta2,
        ScanAxis::TwoPhoton,
        ScanAxis::Omega2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScanAxis::Delta1 => "delta1",
            ScanAxis::Delta2 => "delta2",
            ScanAxis::TwoPhoton => "two_photon",
            ScanAxis::Omega2 => "omega2",
        }
    }

    /// Template field the axis overrides, which must not also be fixed.
    fn overridden_key(&self) -> &'static str {
        match self {
            ScanAxis::Delta1 => "delta1",
            ScanAxis::Delta2 | ScanAxis::TwoPhoton => "delta2",
            ScanAxis::Omega2 => "omega2",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == text.trim())
            .ok_or_else(|| Error::InvalidValue {
                field: "axis".into(),
                reason: format!(
                    "unknown axis `{}` (delta1, delta2, two_photon, omega2)",
                    text.trim()
                ),
            })
    }

    pub fn apply(&self, template: &LaserConfig, x: f64) -> LaserConfig {
        let mut lasers = *template;
        match self {
            ScanAxis::Delta1 => lasers.delta1 = x,
            ScanAxis::Delta2 => lasers.delta2 = x,
            ScanAxis::TwoPhoton => lasers.delta2 = x - template.delta1,
            ScanAxis::Omega2 => lasers.omega_rabi2 = x,
        }
        lasers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScanOutput {
    /// R1 at rest.
    Absorption,
    Alpha,
    Temperature,
    /// Peak |F| on the default velocity grid.
    Force,
    Capture,
}

impl ScanOutput {
    pub const ALL: [ScanOutput; 5] = [
        ScanOutput::Absorption,
        ScanOutput::Alpha,
        ScanOutput::Temperature,
        ScanOutput::Force,
        ScanOutput::Capture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScanOutput::Absorption => "absorption",
            ScanOutput::Alpha => "alpha",
            ScanOutput::Temperature => "temperature",
            ScanOutput::Force => "force",
            ScanOutput::Capture => "capture",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == text.trim())
            .ok_or_else(|| Error::InvalidValue {
                field: "outputs".into(),
                reason: format!(
                    "unknown output `{}` (absorption, alpha, temperature, force, capture)",
                    text.trim()
                ),
            })
    }
}

#[derive(Debug, Clone)]
pub struct ScanSpec {
    pub species: Species,
    pub geometry: EmissionGeometry,
    /// Fixed laser parameters; the scanned field is overridden per row.
    pub template: LaserConfig,
    pub axis: ScanAxis,
    pub range: Range,
    /// Sorted, without duplicates.
    pub outputs: Vec<ScanOutput>,
}

impl ScanSpec {
    pub fn new(
        species: Species,
        geometry: EmissionGeometry,
        template: LaserConfig,
        axis: ScanAxis,
        range: Range,
        mut outputs: Vec<ScanOutput>,
    ) -> Result<Self> {
        template.validate()?;
        if outputs.is_empty() {
            return Err(Error::InvalidValue {
                field: "outputs".into(),
                reason: "at least one output is required".into(),
            });
        }
        if axis == ScanAxis::Omega2 && range.start < 0.0 {
            return Err(Error::InvalidValue {
                field: "range".into(),
                reason: "Rabi frequency range must be >= 0".into(),
            });
        }
        outputs.sort();
        outputs.dedup();
        Ok(Self {
            species,
            geometry,
            template,
            axis,
            range,
            outputs,
        })
    }

    pub fn from_file(path: &Path, catalog: &SpeciesCatalog) -> Result<Self> {
        Self::parse(&read_config(path)?, catalog)
    }

    /// Reads the `[scan]` section of a configuration file.
    pub fn parse(text: &str, catalog: &SpeciesCatalog) -> Result<Self> {
        let section = find_section(text, "scan")?;
        check_keys(
            &section,
            &[
                "species", "omega1", "omega2", "delta1", "delta2", "chi1", "chi2", "axis", "range",
                "outputs",
            ],
        )?;
        let species = catalog.get(&required(&section, "species")?)?.clone();
        let geometry = geometry_from(&section)?;
        let axis = ScanAxis::parse(&required(&section, "axis")?)?;
        if let Some(entry) = section.get(axis.overridden_key()) {
            return Err(Error::Parse {
                line: entry.line,
                message: format!(
                    "`{}` is fixed but also scanned by axis `{}`",
                    entry.key,
                    axis.name()
                ),
            });
        }
        let freq = |key: &str| -> Result<f64> {
            match section.get(key) {
                Some(e) => parse_frequency(&e.value, &species).map_err(|err| at_line(e.line, err)),
                None => Ok(0.0),
            }
        };
        let omega1 = match section.get("omega1") {
            Some(_) => freq("omega1")?,
            None => return Err(missing(&section, "omega1")),
        };
        let template = LaserConfig::new(omega1, freq("omega2")?, freq("delta1")?, freq("delta2")?)?;
        let range_entry = section
            .get("range")
            .ok_or_else(|| missing(&section, "range"))?;
        let range = Range::parse(&range_entry.value, &species, None)
            .map_err(|e| at_line(range_entry.line, e))?;
        let outputs = match section.get("outputs") {
            Some(e) => e
                .value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(ScanOutput::parse)
                .collect::<Result<Vec<_>>>()
                .map_err(|err| at_line(e.line, err))?,
            None => vec![ScanOutput::Alpha, ScanOutput::Temperature],
        };
        Self::new(species, geometry, template, axis, range, outputs)
    }

    pub fn lasers_at(&self, x: f64) -> LaserConfig {
        self.axis.apply(&self.template, x)
    }

    fn wants(&self, output: ScanOutput) -> bool {
        self.outputs.contains(&output)
    }

    fn needs_report(&self) -> bool {
        self.wants(ScanOutput::Alpha)
            || self.wants(ScanOutput::Temperature)
            || self.wants(ScanOutput::Capture)
    }
}

/// Values computed at one scan point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanValues {
    pub report: Option<CoolingReport>,
    pub absorption: Option<f64>,
    pub peak_force: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScanRow {
    pub axis_value: f64,
    pub lasers: LaserConfig,
    /// Failure message if this point could not be computed.
    pub result: std::result::Result<ScanValues, String>,
}

#[derive(Debug, Clone)]
pub struct ScanTable {
    pub spec: ScanSpec,
    pub rows: Vec<ScanRow>,
}

fn scan_point(spec: &ScanSpec, lasers: &LaserConfig) -> Result<ScanValues> {
    let report = if spec.needs_report() {
        let opts = AnalysisOptions {
            capture: spec.wants(ScanOutput::Capture),
            velocity_grid: None,
        };
        Some(analyze(&spec.species, lasers, &spec.geometry, &opts)?)
    } else {
        None
    };
    let absorption = if spec.wants(ScanOutput::Absorption) {
        Some(rate_r1_obe(&spec.species, lasers, 0.0)?)
    } else {
        None
    };
    let peak_force = if spec.wants(ScanOutput::Force) {
        let grid = Grid::default_velocities(&spec.species, lasers);
        let forces = force_profile(&spec.species, lasers, &grid)?;
        Some(forces.iter().fold(0.0f64, |m, f| m.max(f.abs())))
    } else {
        None
    };
    Ok(ScanValues {
        report,
        absorption,
        peak_force,
    })
}

/// Evaluates every grid point independently (in parallel); failures are
/// kept in their row and do not stop the scan.
pub fn run_scan(spec: &ScanSpec) -> ScanTable {
    let rows = spec
        .range
        .grid()
        .values()
        .par_iter()
        .map(|&x| {
            let lasers = spec.lasers_at(x);
            let result = scan_point(spec, &lasers).map_err(|e| e.to_string());
            if let Err(msg) = &result {
                log::warn!("{} = {x:e}: {msg}", spec.axis.name());
            }
            ScanRow {
                axis_value: x,
                lasers,
                result,
            }
        })
        .collect();
    ScanTable {
        spec: spec.clone(),
        rows,
    }
}

impl ScanTable {
    /// Rows in the cooling regime, with their temperature.
    pub fn temperatures(&self) -> impl Iterator<Item = (&ScanRow, f64)> {
        self.rows.iter().filter_map(|r| {
            let t = r.result.as_ref().ok()?.report.as_ref()?.temperature?;
            Some((r, t))
        })
    }

    pub fn min_temperature(&self) -> Option<(&ScanRow, f64)> {
        self.temperatures().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Axis values and R1(0) of rows that have an absorption value.
    pub fn absorption(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.axis_value, r.result.as_ref().ok()?.absorption?)))
            .collect()
    }
}

fn species_comment(species: &Species) -> String {
    format!(
        "# species={} mass_kg={:.12e} lambda1_m={:.12e} lambda2_m={:.12e} gamma1_rad_per_s={:.12e} gamma2_rad_per_s={:.12e}",
        species.name(),
        species.mass(),
        species.lambda1(),
        species.lambda2(),
        species.gamma1(),
        species.gamma2()
    )
}

const LASER_COLUMNS: [&str; 4] = ["delta1", "delta2", "omega1", "omega2"];

fn laser_fields(l: &LaserConfig) -> Vec<String> {
    [l.delta1, l.delta2, l.omega_rabi1, l.omega_rabi2]
        .iter()
        .map(|x| format!("{x:.12e}"))
        .collect()
}

fn report_width() -> usize {
    REPORT_CSV_HEADER.split(',').count()
}

pub fn write_scan_csv<W: Write>(out: &mut W, table: &ScanTable) -> io::Result<()> {
    let spec = &table.spec;
    writeln!(out, "# scan")?;
    writeln!(out, "{}", species_comment(&spec.species))?;
    writeln!(
        out,
        "# omega1={:.12e} omega2={:.12e} delta1={:.12e} delta2={:.12e} chi1={} chi2={}",
        spec.template.omega_rabi1,
        spec.template.omega_rabi2,
        spec.template.delta1,
        spec.template.delta2,
        spec.geometry.chi1(),
        spec.geometry.chi2()
    )?;
    let outputs: Vec<&str> = spec.outputs.iter().map(|o| o.name()).collect();
    writeln!(
        out,
        "# axis={} start={:.12e} stop={:.12e} points={} outputs={}",
        spec.axis.name(),
        spec.range.start,
        spec.range.stop,
        spec.range.points,
        outputs.join(",")
    )?;

    let report_columns = spec.needs_report();
    let mut header = vec![format!("{}_rad_per_s", spec.axis.name())];
    if report_columns {
        header.extend(REPORT_CSV_HEADER.split(',').map(String::from));
    } else {
        header.extend(LASER_COLUMNS.map(String::from));
    }
    if spec.wants(ScanOutput::Absorption) {
        header.push("absorption_per_s".into());
    }
    if spec.wants(ScanOutput::Force) {
        header.push("peak_force_N".into());
    }
    header.push("error".into());

    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![format!("{:.12e}", row.axis_value)];
        match &row.result {
            Ok(values) => {
                match &values.report {
                    Some(r) => record.extend(r.csv_fields()),
                    None => record.extend(laser_fields(&row.lasers)),
                }
                for v in [values.absorption, values.peak_force].into_iter().flatten() {
                    record.push(format!("{v:.12e}"));
                }
                record.push(String::new());
            }
            Err(msg) => {
                record.extend(laser_fields(&row.lasers));
                record.resize(header.len() - 1, String::new());
                record.push(msg.clone());
            }
        }
        csv.write_record(&record)?;
    }
    csv.flush()
}

/// One optimization axis: a fixed value or a range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisSetting {
    Fixed(f64),
    Range(Range),
}

impl AxisSetting {
    fn values(&self) -> Vec<f64> {
        match self {
            AxisSetting::Fixed(x) => vec![*x],
            AxisSetting::Range(r) => r.grid().values().to_vec(),
        }
    }

    fn describe(&self) -> String {
        match self {
            AxisSetting::Fixed(x) => format!("{x:.12e}"),
            AxisSetting::Range(r) => format!("{:.12e}:{:.12e}:{}", r.start, r.stop, r.points),
        }
    }
}

/// Minimum points per optimization axis.
pub const MIN_OPTIMIZE_POINTS: usize = 3;

#[derive(Debug, Clone)]
pub struct OptimizeSpec {
    pub species: Species,
    pub geometry: EmissionGeometry,
    pub omega1: f64,
    pub delta1: AxisSetting,
    pub delta2: AxisSetting,
    pub omega2: AxisSetting,
}

impl OptimizeSpec {
    pub fn new(
        species: Species,
        geometry: EmissionGeometry,
        omega1: f64,
        delta1: AxisSetting,
        delta2: AxisSetting,
        omega2: AxisSetting,
    ) -> Result<Self> {
        for (name, axis) in [
            ("delta1", &delta1),
            ("delta2", &delta2),
            ("omega2", &omega2),
        ] {
            match axis {
                AxisSetting::Range(r) if r.points < MIN_OPTIMIZE_POINTS => {
                    return Err(Error::InvalidValue {
                        field: name.into(),
                        reason: format!(
                            "needs at least {MIN_OPTIMIZE_POINTS} points, got {}",
                            r.points
                        ),
                    })
                }
                AxisSetting::Fixed(x) if !x.is_finite() => {
                    return Err(Error::NonFinite("optimize axis"))
                }
                _ => {}
            }
        }
        let omega2_min = match omega2 {
            AxisSetting::Fixed(x) => x,
            AxisSetting::Range(r) => r.start,
        };
        LaserConfig::new(omega1, omega2_min.max(0.0), 0.0, 0.0)?;
        if omega2_min < 0.0 {
            return Err(Error::InvalidValue {
                field: "omega2".into(),
                reason: "Rabi frequency must be >= 0".into(),
            });
        }
        Ok(Self {
            species,
            geometry,
            omega1,
            delta1,
            delta2,
            omega2,
        })
    }

    pub fn from_file(path: &Path, catalog: &SpeciesCatalog) -> Result<Self> {
        Self::parse(&read_config(path)?, catalog)
    }

    /// Reads the `[optimize]` section. Each of `delta1`, `delta2`, `omega2`
    /// is a single value or a range; `grid` supplies the point count for
    /// ranges written as `start:stop`.
    pub fn parse(text: &str, catalog: &SpeciesCatalog) -> Result<Self> {
        let section = find_section(text, "optimize")?;
        check_keys(
            &section,
            &[
                "species", "omega1", "omega2", "delta1", "delta2", "chi1", "chi2", "grid",
            ],
        )?;
        let species = catalog.get(&required(&section, "species")?)?.clone();
        let geometry = geometry_from(&section)?;
        let grid = match section.get("grid") {
            Some(e) => Some(e.value.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: e.line,
                message: format!("grid must be a whole number, got `{}`", e.value),
            })?),
            None => None,
        };
        let setting = |key: &str| -> Result<AxisSetting> {
            let Some(e) = section.get(key) else {
                return Ok(AxisSetting::Fixed(0.0));
            };
            let parsed = if e.value.contains(':') {
                Range::parse(&e.value, &species, grid).map(AxisSetting::Range)
            } else {
                parse_frequency(&e.value, &species).map(AxisSetting::Fixed)
            };
            parsed.map_err(|err| at_line(e.line, err))
        };
        let omega1_entry = section
            .get("omega1")
            .ok_or_else(|| missing(&section, "omega1"))?;
        let omega1 = parse_frequency(&omega1_entry.value, &species)
            .map_err(|e| at_line(omega1_entry.line, e))?;
        let (delta1, delta2, omega2) = (setting("delta1")?, setting("delta2")?, setting("omega2")?);
        Self::new(species, geometry, omega1, delta1, delta2, omega2)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizePoint {
    /// Grid indices along (δ1, δ2, Ω2).
    pub index: [usize; 3],
    pub lasers: LaserConfig,
    pub result: std::result::Result<CoolingReport, String>,
}

#[derive(Debug, Clone)]
pub enum OptimizeOutcome {
    /// Coldest cooling-regime point, with its capture range computed.
    Best(Box<OptimizePoint>),
    /// No point in the box cools.
    NoCooling,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub spec: OptimizeSpec,
    /// Every grid point in (δ1, δ2, Ω2) index order.
    pub points: Vec<OptimizePoint>,
    pub outcome: OptimizeOutcome,
}

impl OptimizeResult {
    pub fn best(&self) -> Option<&CoolingReport> {
        match &self.outcome {
            OptimizeOutcome::Best(p) => p.result.as_ref().ok(),
            OptimizeOutcome::NoCooling => None,
        }
    }
}

/// Exhaustive evaluation of the box; the argmin of T over cooling points
/// wins, ties going to the lowest δ1 index, then δ2, then Ω2.
pub fn run_optimize(spec: &OptimizeSpec) -> OptimizeResult {
    let axes = [
        spec.delta1.values(),
        spec.delta2.values(),
        spec.omega2.values(),
    ];
    let mut index = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for i in 0..axes[0].len() {
        for j in 0..axes[1].len() {
            for k in 0..axes[2].len() {
                index.push([i, j, k]);
            }
        }
    }
    let points: Vec<OptimizePoint> = index
        .par_iter()
        .map(|&[i, j, k]| {
            let lasers = LaserConfig {
                omega_rabi1: spec.omega1,
                omega_rabi2: axes[2][k],
                delta1: axes[0][i],
                delta2: axes[1][j],
            };
            let result = analyze(
                &spec.species,
                &lasers,
                &spec.geometry,
                &AnalysisOptions::default(),
            )
            .map_err(|e| e.to_string());
            OptimizePoint {
                index: [i, j, k],
                lasers,
                result,
            }
        })
        .collect();

    let best = coldest(&points);
    let outcome = match best {
        None => OptimizeOutcome::NoCooling,
        Some(n) => {
            let mut winner = points[n].clone();
            if let Ok(report) = &mut winner.result {
                match capture_range(&spec.species, &winner.lasers) {
                    Ok(c) => report.capture = Some(c),
                    Err(e) => log::warn!("capture range at optimum: {e}"),
                }
            }
            OptimizeOutcome::Best(Box::new(winner))
        }
    };
    OptimizeResult {
        spec: spec.clone(),
        points,
        outcome,
    }
}

/// Position of the lowest cooling-regime temperature; the first one wins ties.
fn coldest(points: &[OptimizePoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, p) in points.iter().enumerate() {
        let Ok(report) = &p.result else { continue };
        let Some(t) = report
            .temperature
            .filter(|_| report.regime == Regime::Cooling)
        else {
            continue;
        };
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((n, t));
        }
    }
    best.map(|(n, _)| n)
}

/// Every evaluated point, in grid order.
pub fn write_frontier_csv<W: Write>(out: &mut W, result: &OptimizeResult) -> io::Result<()> {
    let spec = &result.spec;
    writeln!(out, "# optimize")?;
    writeln!(out, "{}", species_comment(&spec.species))?;
    writeln!(
        out,
        "# omega1={:.12e} delta1={} delta2={} omega2={} chi1={} chi2={}",
        spec.omega1,
        spec.delta1.describe(),
        spec.delta2.describe(),
        spec.omega2.describe(),
        spec.geometry.chi1(),
        spec.geometry.chi2()
    )?;
    match &result.outcome {
        OptimizeOutcome::Best(p) => writeln!(out, "# best index={:?}", p.index)?,
        OptimizeOutcome::NoCooling => writeln!(out, "# no cooling found")?,
    }
    let mut csv = csv::Writer::from_writer(out);
    let mut header = vec!["i_delta1", "i_delta2", "i_omega2"];
    header.extend(REPORT_CSV_HEADER.split(','));
    header.push("error");
    csv.write_record(&header)?;
    for p in &result.points {
        let mut record: Vec<String> = p.index.iter().map(usize::to_string).collect();
        match &p.result {
            Ok(r) => {
                record.extend(r.csv_fields());
                record.push(String::new());
            }
            Err(msg) => {
                record.extend(laser_fields(&p.lasers));
                record.resize(3 + report_width(), String::new());
                record.push(msg.clone());
            }
        }
        csv.write_record(&record)?;
    }
    csv.flush()
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn find_section(text: &str, name: &str) -> Result<Section> {
    parse_sections(text)?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("no [{name}] section"),
        })
}

fn check_keys(section: &Section, allowed: &[&str]) -> Result<()> {
    match section
        .entries
        .iter()
        .find(|e| !allowed.contains(&e.key.as_str()))
    {
        Some(e) => Err(Error::Parse {
            line: e.line,
            message: format!("unknown key `{}` in [{}]", e.key, section.name),
        }),
        None => Ok(()),
    }
}

fn missing(section: &Section, key: &str) -> Error {
    Error::Parse {
        line: section.line,
        message: format!("[{}] is missing `{key}`", section.name),
    }
}

fn required(section: &Section, key: &str) -> Result<String> {
    section
        .get(key)
        .map(|e| e.value.clone())
        .ok_or_else(|| missing(section, key))
}

fn at_line(line: usize, err: Error) -> Error {
    match err {
        Error::Parse { .. } => err,
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    }
}

fn geometry_from(section: &Section) -> Result<EmissionGeometry> {
    let chi = |key: &str, default: f64| -> Result<f64> {
        match section.get(key) {
            Some(e) => e.value.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: e.line,
                message: format!("`{key}` must be a number, got `{}`", e.value),
            }),
            None => Ok(default),
        }
    };
    let d = EmissionGeometry::default();
    EmissionGeometry::new(chi("chi1", d.chi1())?, chi("chi2", d.chi2())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::{doppler_limit, HBAR, K_B};
    use approx::assert_relative_eq;

    fn catalog() -> SpeciesCatalog {
        SpeciesCatalog::bundled()
    }

    fn mg() -> Species {
        catalog().get("Mg").unwrap().clone()
    }

    #[test]
    fn frequency_suffixes() {
        let mg = mg();
        assert_eq!(parse_frequency("-0.5g1", &mg).unwrap(), -0.5 * mg.gamma1());
        assert_eq!(parse_frequency("10g2", &mg).unwrap(), 10.0 * mg.gamma2());
        assert_eq!(parse_frequency(" 2.5e8 ", &mg).unwrap(), 2.5e8);
        assert_eq!(parse_frequency("1MHz", &mg).unwrap(), MHZ);
        assert_eq!(parse_frequency("1 mhz", &mg).unwrap(), MHZ);
        assert!(parse_frequency("g1", &mg).is_err());
        assert!(parse_frequency("1GHz", &mg).is_err());
        assert!(parse_frequency("infg1", &mg).is_err());
    }

    #[test]
    fn suffix_round_trip_through_mhz() {
        let mg = mg();
        let a = parse_frequency("-0.5g1", &mg).unwrap();
        let b = parse_frequency("-39.4MHz", &mg).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-15);
    }

    #[test]
    fn ranges() {
        let mg = mg();
        let r = Range::parse("-1.5g1:1.5g1:301", &mg, None).unwrap();
        assert_eq!(r.points, 301);
        assert_eq!(r.grid().values()[150], 0.0);
        assert_eq!(Range::parse("0:1g1", &mg, Some(5)).unwrap().points, 5);
        for bad in ["0:1g1", "1g1:0:5", "0:1g1:1", "0:1g1:x", "0:1:2:3"] {
            assert!(Range::parse(bad, &mg, None).is_err(), "{bad}");
        }
    }

    #[test]
    fn two_photon_axis_holds_delta1() {
        let t = LaserConfig::new(1.0, 2.0, -40.0, 0.0).unwrap();
        let l = ScanAxis::TwoPhoton.apply(&t, 3.0);
        assert_eq!(l.delta1, -40.0);
        assert_eq!(l.two_photon_detuning(), 3.0);
    }

    const FIG1: &str = "
        [scan]
        species = Mg
        omega1 = 0.01g1
        omega2 = 10g2
        delta2 = -20g2
        axis = delta1
        range = -1.5g1:1.5g1:151
        outputs = absorption
    ";

    #[test]
    fn parses_scan_config() {
        let spec = ScanSpec::parse(FIG1, &catalog()).unwrap();
        let mg = mg();
        assert_eq!(spec.axis, ScanAxis::Delta1);
        assert_eq!(spec.template.omega_rabi2, 10.0 * mg.gamma2());
        assert_eq!(spec.outputs, vec![ScanOutput::Absorption]);
        assert_eq!(spec.geometry, EmissionGeometry::THREE_DIMENSIONAL);
    }

    #[test]
    fn rejects_bad_scan_configs() {
        let c = catalog();
        let doubly_fixed = FIG1.replace("delta2 = -20g2", "delta1 = 0.1g1");
        assert!(matches!(
            ScanSpec::parse(&doubly_fixed, &c),
            Err(Error::Parse { line: 6, .. })
        ));
        let unknown_key = FIG1.replace("outputs", "output");
        assert!(ScanSpec::parse(&unknown_key, &c).is_err());
        let unknown_output = FIG1.replace("absorption", "entropy");
        assert!(ScanSpec::parse(&unknown_output, &c).is_err());
        assert!(ScanSpec::parse(&FIG1.replace("Mg", "Xx"), &c).is_err());
        assert!(ScanSpec::parse("[optimize]\nspecies = Mg\n", &c).is_err());
        assert!(ScanSpec::parse(&FIG1.replace("omega1 = 0.01g1", ""), &c).is_err());
    }

    fn fig1_minimum(delta2_sign: f64) -> f64 {
        let text = FIG1.replace("-20g2", &format!("{}g2", 20.0 * delta2_sign));
        let spec = ScanSpec::parse(&text, &catalog()).unwrap();
        let table = run_scan(&spec);
        let g1 = spec.species.gamma1();
        let a = table.absorption();
        let minima: Vec<f64> = a
            .windows(3)
            .filter(|w| w[1].1 < w[0].1 && w[1].1 < w[2].1)
            .map(|w| w[1].0 / g1)
            .collect();
        assert_eq!(minima.len(), 1, "{minima:?}");
        minima[0]
    }

    #[test]
    fn absorption_minimum_positions() {
        let m = fig1_minimum(-1.0);
        assert!((0.4..=0.6).contains(&m), "{m}");
        let m = fig1_minimum(1.0);
        assert!((-0.6..=-0.4).contains(&m), "{m}");
    }

    #[test]
    fn two_photon_scan_reaches_upper_doppler_scale() {
        let text = "
            [scan]
            species = Mg
            omega1 = 0.01g1
            omega2 = 50g2
            delta1 = -40g1
            axis = two_photon
            range = -4g2:4g2:81
            outputs = alpha, temperature
        ";
        let spec = ScanSpec::parse(text, &catalog()).unwrap();
        let table = run_scan(&spec);
        let mg = &spec.species;
        let (_, t) = table.min_temperature().unwrap();
        let td2 = mg.doppler_limit_upper();
        assert!(t >= 0.5 * td2 && t <= 5.0 * td2, "T = {t}, T_D2 = {td2}");
        assert!(t < mg.doppler_limit_lower() / 10.0);
        // The blue side of the resonance heats: empty temperature, regime flag.
        assert!(table.rows.iter().any(
            |r| matches!(&r.result, Ok(v) if v.report.as_ref().unwrap().regime == Regime::Heating)
        ));
    }

    #[test]
    fn rows_match_single_point_reports() {
        let spec = ScanSpec::parse(
            &FIG1.replace("outputs = absorption", "outputs = temperature, force"),
            &catalog(),
        )
        .unwrap();
        let spec = ScanSpec {
            range: Range::new(-1.0e9, 1.0e9, 9).unwrap(),
            ..spec
        };
        let table = run_scan(&spec);
        for row in &table.rows {
            let direct = analyze(
                &spec.species,
                &row.lasers,
                &spec.geometry,
                &AnalysisOptions::default(),
            )
            .unwrap();
            assert_eq!(
                row.result.as_ref().unwrap().report.as_ref().unwrap(),
                &direct
            );
        }
    }

    #[test]
    fn scan_csv_layout() {
        let spec = ScanSpec::parse(
            &FIG1.replace(
                "outputs = absorption",
                "outputs = capture, absorption, force",
            ),
            &catalog(),
        )
        .unwrap();
        let spec = ScanSpec {
            range: Range::new(-1.0e9, 1.0e9, 5).unwrap(),
            ..spec
        };
        let mut table = run_scan(&spec);
        table.rows[1].result = Err("boom, failed".into());
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &table).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(
            lines[0],
            "delta1_rad_per_s,delta1,delta2,omega1,omega2,alpha_per_s,H_watt,T_kelvin,regime,capture_mps,saturated,absorption_per_s,peak_force_N,error"
        );
        assert_eq!(lines.len(), 6);
        let width = lines[0].split(',').count();
        for l in &lines[1..] {
            if l.contains('"') {
                assert!(l.ends_with(",\"boom, failed\""));
                assert_eq!(l.split(',').count(), width + 1);
            } else {
                assert_eq!(l.split(',').count(), width, "{l}");
                assert!(l.ends_with(','));
            }
        }
        assert!(text.contains("# axis=delta1"));
        assert!(text.contains("outputs=absorption,force,capture"));
    }

    #[test]
    fn scan_is_deterministic_across_pools() {
        let spec = ScanSpec::parse(
            &FIG1.replace("outputs = absorption", "outputs = alpha, absorption"),
            &catalog(),
        )
        .unwrap();
        let csv = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let table = pool.install(|| run_scan(&spec));
            let mut buf = Vec::new();
            write_scan_csv(&mut buf, &table).unwrap();
            buf
        };
        assert_eq!(csv(1), csv(4));
    }

    const TWO_LEVEL_BOX: &str = "
        [optimize]
        species = Mg
        omega1 = 0.01g1
        omega2 = 0
        delta2 = 0
        delta1 = -2g1:-0.05g1:79
        chi1 = 1
    ";

    #[test]
    fn optimizes_two_level_detuning() {
        let spec = OptimizeSpec::parse(TWO_LEVEL_BOX, &catalog()).unwrap();
        let result = run_optimize(&spec);
        let best = result.best().unwrap();
        let g1 = spec.species.gamma1();
        let d = best.lasers.delta1 / g1;
        assert!((-0.6..=-0.4).contains(&d), "{d}");
        let t = best.temperature.unwrap();
        assert_relative_eq!(t, HBAR * g1 / (2.0 * K_B), max_relative = 0.05);
        assert_relative_eq!(t, doppler_limit(g1), max_relative = 1e-3);
        assert!(best.capture.is_some());
        assert_eq!(result.points.len(), 79);
    }

    #[test]
    fn blue_box_finds_no_cooling() {
        let text = TWO_LEVEL_BOX.replace("-2g1:-0.05g1:79", "0.05g1:2g1:5");
        let result = run_optimize(&OptimizeSpec::parse(&text, &catalog()).unwrap());
        assert!(matches!(result.outcome, OptimizeOutcome::NoCooling));
        let mut buf = Vec::new();
        write_frontier_csv(&mut buf, &result).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("# no cooling found"));
    }

    #[test]
    fn eit_box_beats_doppler_limit() {
        let text = "
            [optimize]
            species = Mg
            omega1 = 0.01g1
            delta1 = 0:1g1:21
            delta2 = -40g2:-5g2:8
            omega2 = 5g2:20g2:4
        ";
        let spec = OptimizeSpec::parse(text, &catalog()).unwrap();
        let result = run_optimize(&spec);
        let t = result.best().unwrap().temperature.unwrap();
        let td1 = spec.species.doppler_limit_lower();
        assert!(t <= td1 / 3.0, "T = {t}, T_D1/3 = {}", td1 / 3.0);
    }

    #[test]
    fn tie_break_prefers_lowest_indices() {
        let spec = OptimizeSpec::parse(TWO_LEVEL_BOX, &catalog()).unwrap();
        let report = analyze(
            &spec.species,
            &LaserConfig::new(1e6, 0.0, -1e8, 0.0).unwrap(),
            &spec.geometry,
            &AnalysisOptions::default(),
        )
        .unwrap();
        let point = |index: [usize; 3], t: Option<f64>, regime: Regime| OptimizePoint {
            index,
            lasers: report.lasers,
            result: Ok(CoolingReport {
                temperature: t,
                regime,
                ..report.clone()
            }),
        };
        let points = vec![
            point([0, 0, 0], None, Regime::Heating),
            point([0, 0, 1], Some(2e-3), Regime::Cooling),
            point([0, 1, 0], Some(1e-3), Regime::Cooling),
            OptimizePoint {
                index: [0, 1, 1],
                lasers: report.lasers,
                result: Err("failed".into()),
            },
            point([1, 0, 0], Some(1e-3), Regime::Cooling),
        ];
        assert_eq!(coldest(&points), Some(2));
        assert_eq!(coldest(&points[..1]), None);
    }

    #[test]
    fn rejects_bad_optimize_configs() {
        let c = catalog();
        assert!(OptimizeSpec::parse(&TWO_LEVEL_BOX.replace(":79", ":2"), &c).is_err());
        assert!(
            OptimizeSpec::parse(&TWO_LEVEL_BOX.replace("omega2 = 0", "omega2 = -1g2"), &c).is_err()
        );
        assert!(OptimizeSpec::parse(&TWO_LEVEL_BOX.replace("chi1 = 1", "chi1 = 2"), &c).is_err());
        let with_grid = TWO_LEVEL_BOX
            .replace(":79", "")
            .replace("chi1 = 1", "grid = 7");
        let spec = OptimizeSpec::parse(&with_grid, &c).unwrap();
        assert!(matches!(
            spec.delta1,
            AxisSetting::Range(Range { points: 7, .. })
        ));
    }
}
