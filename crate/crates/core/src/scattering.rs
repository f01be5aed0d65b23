//! Velocity-dependent scattering rates, absorption spectra and the
//! semiclassical force.
//!
//! Two routes give the lower-transition rate R1: the steady state of the
//! Bloch equations (R1 = Γ1ρ11 − Γ2ρ22, R2 = Γ2ρ22) and the weak-probe
//! closed form. R2 only exists on the Bloch route.

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bloch::{steady_state_at, LaserConfig};
use crate::error::{Error, Result};
use crate::species::{Species, HBAR};

/// Above this Ω1/Γ1 the perturbative rate is outside its validity range.
pub const PERTURBATIVE_LIMIT: f64 = 0.05;

/// Default number of velocity samples.
pub const DEFAULT_GRID_POINTS: usize = 401;

/// Scattering rates at one velocity (beam pair along +x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub v: f64,
    /// Net lower-transition scattering rate Γ1ρ11 − Γ2ρ22, 1/s.
    pub r1: f64,
    /// Upper-transition scattering rate Γ2ρ22, 1/s.
    pub r2: f64,
}

/// Both Bloch-route rates from a single steady-state solve.
pub fn rates_obe(species: &Species, lasers: &LaserConfig, v: f64) -> Result<RatePoint> {
    if lasers.omega_rabi1 == 0.0 {
        lasers.validate()?;
        return Ok(RatePoint {
            v,
            r1: 0.0,
            r2: 0.0,
        });
    }
    let rho = steady_state_at(species, lasers, v)?;
    let [_, p1, p2] = rho.populations();
    let r2 = if lasers.omega_rabi2 == 0.0 || species.gamma2() == 0.0 {
        0.0
    } else {
        species.gamma2() * p2
    };
    Ok(RatePoint {
        v,
        r1: species.gamma1() * p1 - r2,
        r2,
    })
}

pub fn rate_r1_obe(species: &Species, lasers: &LaserConfig, v: f64) -> Result<f64> {
    rates_obe(species, lasers, v).map(|p| p.r1)
}

pub fn rate_r2_obe(species: &Species, lasers: &LaserConfig, v: f64) -> Result<f64> {
    rates_obe(species, lasers, v).map(|p| p.r2)
}

/// Weak-probe lower-transition rate
///
/// ```text
/// R1 = (Γ1 Ω1²/8) |(Δ + iΓ2/2) / ((Δ + iΓ2/2)(δ1′ + iΓ1/2) − Ω2²/4)|²,   Δ = δ1′ + δ2′
/// ```
pub fn rate_r1_perturbative(species: &Species, lasers: &LaserConfig, v: f64) -> f64 {
    let g1 = species.gamma1();
    if lasers.omega_rabi1 > PERTURBATIVE_LIMIT * g1 {
        log::warn!(
            "Omega1 = {:.3} Gamma1 exceeds the weak-probe range of the perturbative rate",
            lasers.omega_rabi1 / g1
        );
    }
    let units = species.natural_units();
    let nat = |x: f64| units.frequency_to_natural(x);
    let (d1p, d2p) = lasers.doppler_shifted(species, v);
    let (d1p, d2p) = (nat(d1p), nat(d2p));
    let omega1 = nat(lasers.omega_rabi1);
    let omega2 = nat(lasers.omega_rabi2);
    let gamma2 = nat(species.gamma2());
    let lower = Complex64::new(d1p, 0.5);
    let prefactor = omega1 * omega1 / 8.0;
    let natural = if omega2 == 0.0 {
        // Δ cancels; keeps the Γ2 = 0, Δ = 0 point finite.
        prefactor / lower.norm_sqr()
    } else {
        let two_photon = Complex64::new(d1p + d2p, gamma2 / 2.0);
        let den = two_photon * lower - omega2 * omega2 / 4.0;
        prefactor * (two_photon / den).norm_sqr()
    };
    g1 * natural
}

/// Force on an atom at `v` from both beam pairs:
/// F = ħk1[R1(v) − R1(−v)] + ħ(k1 + k2)[R2(v) − R2(−v)].
pub fn force(species: &Species, lasers: &LaserConfig, v: f64) -> Result<f64> {
    let plus = rates_obe(species, lasers, v)?;
    let minus = rates_obe(species, lasers, -v)?;
    Ok(force_from_rates(species, &plus, &minus))
}

fn force_from_rates(species: &Species, plus: &RatePoint, minus: &RatePoint) -> f64 {
    HBAR * species.k1() * (plus.r1 - minus.r1)
        + HBAR * (species.k1() + species.k2()) * (plus.r2 - minus.r2)
}

/// A strictly increasing list of sample values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidValue {
                field: "grid".into(),
                reason: "empty".into(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("grid"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidValue {
                field: "grid".into(),
                reason: "values must be strictly increasing".into(),
            });
        }
        Ok(Self(values))
    }

    /// `points` evenly spaced values from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, points: usize) -> Result<Self> {
        if points < 2 || !(start < stop) {
            return Err(Error::InvalidValue {
                field: "grid".into(),
                reason: format!("need start < stop and >= 2 points, got {start}:{stop}:{points}"),
            });
        }
        let step = (stop - start) / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|i| start + step * i as f64).collect();
        values[points - 1] = stop;
        // Symmetric ranges are mirrored exactly (midpoint at 0 for odd counts).
        if start == -stop {
            for i in 0..points / 2 {
                values[points - 1 - i] = -values[i];
            }
            if points % 2 == 1 {
                values[points / 2] = 0.0;
            }
        }
        Self::new(values)
    }

    /// ±2Γ1/k1, the scale of the lower-transition and EIT features.
    pub fn eit_velocities(species: &Species) -> Self {
        let vmax = 2.0 * species.gamma1() / species.k1();
        Self::linspace(-vmax, vmax, DEFAULT_GRID_POINTS).expect("valid default grid")
    }

    /// ±4Γ2/k2, the scale of the two-photon resonance.
    pub fn two_photon_velocities(species: &Species) -> Self {
        let vmax = 4.0 * species.gamma2() / species.k2();
        Self::linspace(-vmax, vmax, DEFAULT_GRID_POINTS).expect("valid default grid")
    }

    /// Two-photon grid once the intermediate state is far detuned
    /// (|δ1| ≥ 10Γ1 with Ω2 > 0), EIT grid otherwise.
    pub fn default_velocities(species: &Species, lasers: &LaserConfig) -> Self {
        let far_detuned = lasers.delta1.abs() >= 10.0 * species.gamma1();
        if lasers.omega_rabi2 > 0.0 && far_detuned && species.gamma2() > 0.0 {
            Self::two_photon_velocities(species)
        } else {
            Self::eit_velocities(species)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Rates and force sampled over a velocity grid.
#[derive(Debug, Clone)]
pub struct RateProfile {
    pub species: Species,
    pub lasers: LaserConfig,
    pub grid: Grid,
    pub points: Vec<RatePoint>,
    /// Force in N at each grid velocity.
    pub forces: Vec<f64>,
}

pub fn rate_profile(species: &Species, lasers: &LaserConfig, grid: &Grid) -> Result<RateProfile> {
    let sampled: Vec<(RatePoint, f64)> = grid
        .values()
        .par_iter()
        .map(|&v| {
            let plus = rates_obe(species, lasers, v)?;
            let minus = rates_obe(species, lasers, -v)?;
            Ok((plus, force_from_rates(species, &plus, &minus)))
        })
        .collect::<Result<_>>()?;
    let (points, forces) = sampled.into_iter().unzip();
    Ok(RateProfile {
        species: species.clone(),
        lasers: *lasers,
        grid: grid.clone(),
        points,
        forces,
    })
}

/// Force at every grid velocity; antisymmetric with F(0) = 0 exactly.
pub fn force_profile(species: &Species, lasers: &LaserConfig, grid: &Grid) -> Result<Vec<f64>> {
    grid.values()
        .par_iter()
        .map(|&v| force(species, lasers, v))
        .collect()
}

/// Lower-transition rate at rest as a function of δ1.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub species: Species,
    /// Laser template; its δ1 is replaced by each grid value.
    pub template: LaserConfig,
    pub delta1: Grid,
    pub r1: Vec<f64>,
}

impl Spectrum {
    /// δ1 values of strict local minima of R1.
    pub fn local_minima(&self) -> Vec<f64> {
        let d = self.delta1.values();
        self.r1
            .windows(3)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] && w[1] < w[2])
            .map(|(i, _)| d[i + 1])
            .collect()
    }
}

pub fn absorption_spectrum(
    species: &Species,
    template: &LaserConfig,
    delta1: &Grid,
) -> Result<Spectrum> {
    let r1 = delta1
        .values()
        .par_iter()
        .map(|&d1| {
            let lasers = LaserConfig {
                delta1: d1,
                ..*template
            };
            rate_r1_obe(species, &lasers, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum {
        species: species.clone(),
        template: *template,
        delta1: delta1.clone(),
        r1,
    })
}

pub(crate) fn config_comment(species: &Species, lasers: &LaserConfig) -> String {
    format!(
        "# species={} omega1={:.12e} omega2={:.12e} delta1={:.12e} delta2={:.12e}",
        species.name(),
        lasers.omega_rabi1,
        lasers.omega_rabi2,
        lasers.delta1,
        lasers.delta2
    )
}

pub fn write_profile_csv<W: Write>(out: &mut W, profile: &RateProfile) -> io::Result<()> {
    writeln!(out, "{}", config_comment(&profile.species, &profile.lasers))?;
    writeln!(out, "v_m_per_s,R1_per_s,R2_per_s,F_N")?;
    for (p, f) in profile.points.iter().zip(&profile.forces) {
        writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e}", p.v, p.r1, p.r2, f)?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(out: &mut W, spectrum: &Spectrum) -> io::Result<()> {
    writeln!(
        out,
        "{}",
        config_comment(&spectrum.species, &spectrum.template)
    )?;
    writeln!(out, "delta1_rad_per_s,R1_per_s")?;
    for (d, r) in spectrum.delta1.values().iter().zip(&spectrum.r1) {
        writeln!(out, "{d:.12e},{r:.12e}")?;
    }
    Ok(())
}
