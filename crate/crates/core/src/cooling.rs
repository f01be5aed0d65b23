//! Cooling rate, heating rate, final temperature, energy dynamics and
//! capture range.
//!
//! In the late stage of cooling the rates are linearised around p = 0:
//!
//! ```text
//! d⟨E⟩/dt = −2α⟨E⟩ + H°
//! α  = −2ħk1 R1′(0) − 2ħ(k1 + k2) R2′(0)
//! H° = R1(0)(1 + χ1)ħ²k1²/M + 2R2(0)[(1 + χ1)ħ²k1²/M + (1 + χ2)ħ²k2²/M]
//! k_B T = H°/α
//! ```

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::bloch::LaserConfig;
use crate::error::{Error, Result};
use crate::numerics::{self, DerivativeOptions, Estimate, OdeTolerances};
use crate::scattering::{force, rate_profile, rates_obe, Grid, RatePoint};
use crate::species::{EmissionGeometry, Species, HBAR, K_B};

/// Base velocity step of the derivative, in units of Γ1/k1 (k1·h/M = 10⁻³Γ1).
pub const DERIVATIVE_STEP: f64 = 1e-3;
/// Relative agreement required between successive extrapolations.
pub const DERIVATIVE_REL_TOL: f64 = 1e-3;
pub const DERIVATIVE_MAX_HALVINGS: usize = 6;
/// Fraction of the peak force below which the capture region ends.
pub const CAPTURE_FORCE_FRACTION: f64 = 0.1;
/// Relative bracket width at which capture-range bisection stops.
pub const CAPTURE_BISECTION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// R1, the |0⟩–|1⟩ rate.
    Lower,
    /// R2, the |1⟩–|2⟩ rate.
    Upper,
}

/// dR1/dp and dR2/dp at p = 0, in 1/(s·kg·m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDerivatives {
    pub r1: Estimate,
    pub r2: Estimate,
}

pub fn rate_derivatives_at_zero(
    species: &Species,
    lasers: &LaserConfig,
) -> Result<RateDerivatives> {
    let units = species.natural_units();
    let at_rest = rates_obe(species, lasers, 0.0)?;
    // Slopes are compared per natural velocity unit; the floor sits far
    // below any physical slope but above rounding noise.
    let floor = 1e-9 * (at_rest.r1.abs() + at_rest.r2.abs());
    let opts = DerivativeOptions {
        step: DERIVATIVE_STEP,
        rel_tol: DERIVATIVE_REL_TOL,
        max_halvings: DERIVATIVE_MAX_HALVINGS,
    };
    let [d1, d2] = numerics::derivative_at_zero(
        |x| {
            let p = rates_obe(species, lasers, units.velocity_from_natural(x))?;
            Ok([p.r1, p.r2])
        },
        [floor, floor],
        &opts,
    )?;
    // d/dx → d/dp with p = M·v = M·x·(Γ1/k1).
    let per_momentum = |e: Estimate| Estimate {
        value: e.value / units.momentum,
        error: e.error / units.momentum,
    };
    Ok(RateDerivatives {
        r1: per_momentum(d1),
        r2: per_momentum(d2),
    })
}

pub fn rate_derivative_at_zero(
    species: &Species,
    lasers: &LaserConfig,
    which: Transition,
) -> Result<Estimate> {
    let d = rate_derivatives_at_zero(species, lasers)?;
    Ok(match which {
        Transition::Lower => d.r1,
        Transition::Upper => d.r2,
    })
}

fn alpha_from(species: &Species, d: &RateDerivatives) -> Estimate {
    let c1 = 2.0 * HBAR * species.k1();
    let c2 = 2.0 * HBAR * (species.k1() + species.k2());
    Estimate {
        value: -c1 * d.r1.value - c2 * d.r2.value,
        error: c1 * d.r1.error + c2 * d.r2.error,
    }
}

/// Signed cooling rate α in 1/s; positive means damping.
pub fn cooling_rate(species: &Species, lasers: &LaserConfig) -> Result<f64> {
    Ok(alpha_from(species, &rate_derivatives_at_zero(species, lasers)?).value)
}

/// H(σ1, σ2) in W for given mean scattering rates.
pub fn heating_from_rates(
    species: &Species,
    geometry: &EmissionGeometry,
    sigma1: f64,
    sigma2: f64,
) -> f64 {
    let m = species.mass();
    let recoil1 = (1.0 + geometry.chi1()) * HBAR * HBAR * species.k1().powi(2) / m;
    let recoil2 = (1.0 + geometry.chi2()) * HBAR * HBAR * species.k2().powi(2) / m;
    sigma1 * recoil1 + 2.0 * sigma2 * (recoil1 + recoil2)
}

/// H° = H(R1(0), R2(0)).
pub fn heating_rate(
    species: &Species,
    lasers: &LaserConfig,
    geometry: &EmissionGeometry,
) -> Result<f64> {
    let p = rates_obe(species, lasers, 0.0)?;
    Ok(heating_from_rates(species, geometry, p.r1, p.r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Cooling,
    Heating,
    /// α indistinguishable from zero.
    Neutral,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Cooling => "cooling",
            Regime::Heating => "heating",
            Regime::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureLimit {
    /// v·F(v) stopped being negative.
    DampingLost,
    /// |F| dropped below the fraction of its peak.
    ForceThreshold,
    /// No boundary inside the scanned grid.
    GridEdge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureRange {
    /// Half-width Δv_c in m/s.
    pub half_width: f64,
    pub limited_by: CaptureLimit,
}

impl CaptureRange {
    pub fn reached_grid_edge(&self) -> bool {
        self.limited_by == CaptureLimit::GridEdge
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingReport {
    pub lasers: LaserConfig,
    /// α in 1/s.
    pub alpha: f64,
    /// Uncertainty of α from the derivative extrapolation.
    pub alpha_error: f64,
    /// H° in W.
    pub heating: f64,
    /// Final temperature in K, present only in the cooling regime.
    pub temperature: Option<f64>,
    pub regime: Regime,
    pub capture: Option<CaptureRange>,
    pub saturation_warning: bool,
    /// Rates at rest, R1(0) and R2(0).
    pub rates_at_rest: RatePoint,
}

/// Column names of [`CoolingReport::csv_row`].
pub const REPORT_CSV_HEADER: &str =
    "delta1,delta2,omega1,omega2,alpha_per_s,H_watt,T_kelvin,regime,capture_mps,saturated";

impl CoolingReport {
    /// Fields in [`REPORT_CSV_HEADER`] order; temperature and capture range
    /// are empty when absent.
    pub fn csv_fields(&self) -> Vec<String> {
        let number = |x: f64| format!("{x:.12e}");
        let optional = |x: Option<f64>| x.map(number).unwrap_or_default();
        vec![
            number(self.lasers.delta1),
            number(self.lasers.delta2),
            number(self.lasers.omega_rabi1),
            number(self.lasers.omega_rabi2),
            number(self.alpha),
            number(self.heating),
            optional(self.temperature),
            self.regime.as_str().to_string(),
            optional(self.capture.map(|c| c.half_width)),
            self.saturation_warning.to_string(),
        ]
    }

    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    /// Compute the capture range for cooling configurations.
    pub capture: bool,
    /// Velocity grid for the capture range; defaults to
    /// [`Grid::default_velocities`].
    pub velocity_grid: Option<Grid>,
}

impl AnalysisOptions {
    pub fn with_capture() -> Self {
        Self {
            capture: true,
            velocity_grid: None,
        }
    }
}

pub fn analyze(
    species: &Species,
    lasers: &LaserConfig,
    geometry: &EmissionGeometry,
    opts: &AnalysisOptions,
) -> Result<CoolingReport> {
    let at_rest = rates_obe(species, lasers, 0.0)?;
    let heating = heating_from_rates(species, geometry, at_rest.r1, at_rest.r2);
    let alpha = alpha_from(species, &rate_derivatives_at_zero(species, lasers)?);
    // ρ11 = (R1 + R2)/Γ1 at rest.
    let saturation_warning =
        (at_rest.r1 + at_rest.r2) / species.gamma1() > crate::bloch::SATURATION_THRESHOLD;

    let (alpha_value, regime) = if alpha.value.abs() <= alpha.error {
        (0.0, Regime::Neutral)
    } else if alpha.value > 0.0 {
        (alpha.value, Regime::Cooling)
    } else {
        (alpha.value, Regime::Heating)
    };
    let temperature = (regime == Regime::Cooling).then(|| heating / (K_B * alpha_value));
    let capture = if opts.capture && regime == Regime::Cooling {
        Some(capture_range_on(
            species,
            lasers,
            opts.velocity_grid.as_ref(),
        )?)
    } else {
        None
    };
    Ok(CoolingReport {
        lasers: *lasers,
        alpha: alpha_value,
        alpha_error: alpha.error,
        heating,
        temperature,
        regime,
        capture,
        saturation_warning,
        rates_at_rest: at_rest,
    })
}

/// Full report, capture range included, on the default velocity grid.
pub fn temperature(
    species: &Species,
    lasers: &LaserConfig,
    geometry: &EmissionGeometry,
) -> Result<CoolingReport> {
    analyze(species, lasers, geometry, &AnalysisOptions::with_capture())
}

/// Half-width of the velocity interval around 0 in which the light force
/// damps the motion, on the default grid.
pub fn capture_range(species: &Species, lasers: &LaserConfig) -> Result<CaptureRange> {
    capture_range_on(species, lasers, None)
}

/// Capture range on a chosen grid.
///
/// Walking outward from v = 0 on each side, the region ends at the first
/// velocity where v·F(v) ≥ 0, or where |F| falls back below 10% of the
/// largest |F| on the grid after having reached it. The crossing is refined
/// by bisection; the smaller side wins.
pub fn capture_range_on(
    species: &Species,
    lasers: &LaserConfig,
    grid: Option<&Grid>,
) -> Result<CaptureRange> {
    let alpha = cooling_rate(species, lasers)?;
    if alpha <= 0.0 {
        return Err(Error::NotCooling { alpha });
    }
    let default_grid;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = Grid::default_velocities(species, lasers);
            &default_grid
        }
    };
    let profile = rate_profile(species, lasers, grid)?;
    let peak = profile.forces.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    let threshold = CAPTURE_FORCE_FRACTION * peak;

    let samples: Vec<(f64, f64)> = grid
        .values()
        .iter()
        .copied()
        .zip(profile.forces.iter().copied())
        .collect();
    let mut positive: Vec<(f64, f64)> = samples.iter().copied().filter(|(v, _)| *v > 0.0).collect();
    let mut negative: Vec<(f64, f64)> = samples.iter().copied().filter(|(v, _)| *v < 0.0).collect();
    positive.sort_by(|a, b| a.0.total_cmp(&b.0));
    negative.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<CaptureRange> = None;
    for side in [positive, negative] {
        let Some(edge) = side.last().map(|s| s.0.abs()) else {
            continue;
        };
        let found = capture_side(species, lasers, &side, threshold)?.unwrap_or(CaptureRange {
            half_width: edge,
            limited_by: CaptureLimit::GridEdge,
        });
        best = Some(match best {
            Some(b) if b.half_width <= found.half_width => b,
            _ => found,
        });
    }
    best.ok_or_else(|| Error::InvalidValue {
        field: "grid".into(),
        reason: "no nonzero velocities".into(),
    })
}

fn capture_side(
    species: &Species,
    lasers: &LaserConfig,
    side: &[(f64, f64)],
    threshold: f64,
) -> Result<Option<CaptureRange>> {
    let mut armed = false;
    let mut inside = 0.0;
    for &(v, f) in side {
        let damped = v * f < 0.0;
        let below = f.abs() < threshold;
        if damped && !(armed && below) {
            armed |= !below;
            inside = v;
            continue;
        }
        let limited_by = if damped {
            CaptureLimit::ForceThreshold
        } else {
            CaptureLimit::DampingLost
        };
        let ok = |u: f64| -> Result<bool> {
            let fu = force(species, lasers, u)?;
            Ok(u * fu < 0.0 && !(armed && fu.abs() < threshold))
        };
        let (mut lo, mut hi) = (inside, v);
        while (hi - lo).abs() > CAPTURE_BISECTION_TOL * hi.abs() {
            let mid = 0.5 * (lo + hi);
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(Some(CaptureRange {
            half_width: (0.5 * (lo + hi)).abs(),
            limited_by,
        }));
    }
    Ok(None)
}

/// Closed-form solution of the linearised energy equation,
/// E(t) = H°/(2α) + (E0 − H°/(2α))·e^(−2αt).
pub fn evolve_energy_linear(report: &CoolingReport, e0: f64, t: f64) -> Result<f64> {
    if report.alpha == 0.0 {
        return Err(Error::NotCooling { alpha: 0.0 });
    }
    let fixed = report.heating / (2.0 * report.alpha);
    Ok(fixed + (e0 - fixed) * (-2.0 * report.alpha * t).exp())
}

#[derive(Debug, Clone, Copy)]
pub struct EvolutionOptions {
    /// Gauss–Hermite order for the momentum averages (even).
    pub quadrature_order: usize,
    /// Relative change between order n and 2n accepted as converged.
    pub quadrature_tol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self {
            quadrature_order: 40,
            quadrature_tol: 1e-4,
            rtol: 1e-8,
            max_steps: 200_000,
        }
    }
}

/// Positive-half Gauss–Hermite nodes for even integrands, weights divided by √π.
struct HalfRule {
    order: usize,
    nodes: Vec<(f64, f64)>,
}

impl HalfRule {
    fn new(order: usize) -> Self {
        let order = order.max(2) + order % 2;
        let rule = GaussHermite::new(NonZeroUsize::new(order).expect("order >= 2"));
        let norm = std::f64::consts::PI.sqrt();
        let nodes = rule
            .iter()
            .filter(|&(x, _)| *x > 0.0)
            .map(|(x, w)| (*x, w / norm))
            .collect();
        Self { order, nodes }
    }
}

/// d⟨E⟩/dt with a zero-mean Gaussian momentum distribution of variance 2M⟨E⟩.
fn energy_derivative(
    species: &Species,
    lasers: &LaserConfig,
    geometry: &EmissionGeometry,
    rule: &HalfRule,
    energy: f64,
) -> Result<f64> {
    // p = 2√(M E)·x, so v = 2√(E/M)·x.
    let scale = 2.0 * (energy.max(0.0) / species.mass()).sqrt();
    let (k1, k12) = (species.k1(), species.k1() + species.k2());
    let mut drift = 0.0;
    let mut sigma1 = 0.0;
    let mut sigma2 = 0.0;
    for &(x, w) in &rule.nodes {
        let v = scale * x;
        let plus = rates_obe(species, lasers, v)?;
        let minus = rates_obe(species, lasers, -v)?;
        // Node pair ±x folded into one even integrand.
        drift += 2.0 * w * HBAR * v * (k1 * (plus.r1 - minus.r1) + k12 * (plus.r2 - minus.r2));
        sigma1 += w * (plus.r1 + minus.r1);
        sigma2 += w * (plus.r2 + minus.r2);
    }
    Ok(drift + heating_from_rates(species, geometry, sigma1, sigma2))
}

/// Integrates the full energy equation (momentum-averaged rates) and
/// returns ⟨E⟩ at each time in `times` (s, non-decreasing, ≥ 0).
pub fn evolve_energy_full(
    species: &Species,
    lasers: &LaserConfig,
    geometry: &EmissionGeometry,
    e0: f64,
    times: &[f64],
    opts: &EvolutionOptions,
) -> Result<Vec<f64>> {
    if !(e0 > 0.0) || !e0.is_finite() {
        return Err(Error::InvalidValue {
            field: "E0".into(),
            reason: format!("must be positive and finite, got {e0}"),
        });
    }
    lasers.validate()?;
    if lasers.omega_rabi1 == 0.0 {
        return Ok(vec![e0; times.len()]);
    }
    let units = species.natural_units();
    let mut rule = HalfRule::new(opts.quadrature_order);
    let mut doubled = false;

    // Checks the rule against one of twice the order at energy `e`,
    // switching to the finer rule once before giving up.
    let mut check = |rule: &mut HalfRule, e: f64| -> Result<()> {
        loop {
            let finer = HalfRule::new(2 * rule.order);
            let a = energy_derivative(species, lasers, geometry, rule, e)?;
            let b = energy_derivative(species, lasers, geometry, &finer, e)?;
            let change = (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
            if change <= opts.quadrature_tol {
                return Ok(());
            }
            if doubled {
                return Err(Error::QuadratureNotConverged {
                    order: finer.order,
                    change,
                });
            }
            doubled = true;
            *rule = finer;
        }
    };

    check(&mut rule, e0)?;
    let tol = OdeTolerances {
        rtol: opts.rtol,
        atol: 1e-10 * units.energy_to_natural(e0),
        max_steps: opts.max_steps,
    };
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut y = units.energy_to_natural(e0);
    for &target in times {
        let next =
            numerics::integrate(
                |_, y| {
                    let e = units.energy_from_natural(y);
                    Ok(units
                        .energy_to_natural(energy_derivative(species, lasers, geometry, &rule, e)?))
                },
                t,
                y,
                &[target],
                &tol,
            )?;
        t = target;
        y = next[0];
        let e = units.energy_from_natural(y);
        check(&mut rule, e)?;
        out.push(e);
    }
    Ok(out)
}
