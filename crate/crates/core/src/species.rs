//! Atomic species data, physical constants and the internal unit system.
//!
//! All rates and detunings are angular frequencies (rad/s). The species data
//! file tabulates linewidths as Γ/2π in MHz; ingestion multiplies by 2π.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{self, Section};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Environment variable that replaces the bundled species data file.
pub const SPECIES_PATH_ENV: &str = "CASCADE_COOL_SPECIES_PATH";

const BUNDLED_SPECIES: &str = include_str!("../data/species.dat");

/// A closed three-level cascade |0⟩ → |1⟩ → |2⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    name: String,
    mass: f64,
    lambda1: f64,
    lambda2: f64,
    gamma1: f64,
    gamma2: f64,
    k1: f64,
    k2: f64,
}

fn require_positive(field: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite(field));
    }
    if value <= 0.0 {
        return Err(Error::NonPositive { field, value });
    }
    Ok(value)
}

impl Species {
    /// Builds a species from SI quantities: mass in kg, wavelengths in m and
    /// decay rates in rad/s.
    pub fn new(
        name: impl Into<String>,
        mass: f64,
        lambda1: f64,
        lambda2: f64,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<Self> {
        let mass = require_positive("mass", mass)?;
        let lambda1 = require_positive("lambda1", lambda1)?;
        let lambda2 = require_positive("lambda2", lambda2)?;
        let gamma1 = require_positive("gamma1", gamma1)?;
        let gamma2 = require_positive("gamma2", gamma2)?;
        Ok(Self {
            name: name.into(),
            mass,
            lambda1,
            lambda2,
            gamma1,
            gamma2,
            k1: TAU / lambda1,
            k2: TAU / lambda2,
        })
    }

    /// Copy of this species with a different upper-state decay rate.
    ///
    /// Unlike [`Species::new`] this accepts `gamma2 = 0`, the limiting case
    /// of a metastable top state used to study the dark resonance.
    pub fn with_upper_linewidth(&self, gamma2: f64) -> Result<Self> {
        if !gamma2.is_finite() {
            return Err(Error::NonFinite("gamma2"));
        }
        if gamma2 < 0.0 {
            return Err(Error::NonPositive {
                field: "gamma2",
                value: gamma2,
            });
        }
        Ok(Self {
            gamma2,
            ..self.clone()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Mass in kg.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Lower-transition wavelength in m.
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Upper-transition wavelength in m.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Decay rate of |1⟩ into |0⟩, rad/s.
    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    /// Decay rate of |2⟩ into |1⟩, rad/s.
    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// Doppler limit of the lower transition, ħΓ1/(2k_B).
    pub fn doppler_limit_lower(&self) -> f64 {
        doppler_limit(self.gamma1)
    }

    /// Doppler limit of the upper transition, ħΓ2/(2k_B).
    pub fn doppler_limit_upper(&self) -> f64 {
        doppler_limit(self.gamma2)
    }

    pub fn natural_units(&self) -> NaturalUnits {
        NaturalUnits::new(self)
    }

    fn from_record(section: &Section) -> Result<Self> {
        let record = section
            .get("name")
            .map(|e| e.value.clone())
            .unwrap_or_else(|| format!("<record at line {}>", section.line));
        let number = |field: &'static str| -> Result<f64> {
            let entry = section.get(field).ok_or_else(|| Error::MissingField {
                record: record.clone(),
                field,
            })?;
            entry.value.parse::<f64>().map_err(|_| Error::Parse {
                line: entry.line,
                message: format!("`{field}`: not a decimal number: `{}`", entry.value),
            })
        };
        if section.get("name").is_none() {
            return Err(Error::MissingField {
                record,
                field: "name",
            });
        }
        let mass_u = number("mass_u")?;
        let lambda1_nm = number("lambda1_nm")?;
        let lambda2_nm = number("lambda2_nm")?;
        let gamma1_mhz = number("gamma1_over_2pi_MHz")?;
        let gamma2_mhz = number("gamma2_over_2pi_MHz")?;
        // Validate in tabulated units so errors echo the file's numbers.
        require_positive("mass_u", mass_u)?;
        require_positive("lambda1_nm", lambda1_nm)?;
        require_positive("lambda2_nm", lambda2_nm)?;
        require_positive("gamma1_over_2pi_MHz", gamma1_mhz)?;
        require_positive("gamma2_over_2pi_MHz", gamma2_mhz)?;
        Self::new(
            record,
            mass_u * ATOMIC_MASS_UNIT,
            lambda1_nm * 1e-9,
            lambda2_nm * 1e-9,
            TAU * gamma1_mhz * 1e6,
            TAU * gamma2_mhz * 1e6,
        )
    }
}

/// Doppler-cooling limit ħΓ/(2k_B) in kelvin for a decay rate in rad/s.
pub fn doppler_limit(gamma: f64) -> f64 {
    HBAR * gamma / (2.0 * K_B)
}

/// Second moments χ1, χ2 of the spontaneous-emission patterns projected on
/// the cooling axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionGeometry {
    chi1: f64,
    chi2: f64,
}

impl EmissionGeometry {
    /// χ1 = χ2 = 1, equivalent to a three-dimensional cooling geometry.
    pub const THREE_DIMENSIONAL: Self = Self {
        chi1: 1.0,
        chi2: 1.0,
    };
    /// χ1 = χ2 = 2/5, dipole emission pattern.
    pub const DIPOLE: Self = Self {
        chi1: 0.4,
        chi2: 0.4,
    };

    pub fn new(chi1: f64, chi2: f64) -> Result<Self> {
        for (field, value) in [("chi1", chi1), ("chi2", chi2)] {
            if !value.is_finite() {
                return Err(Error::NonFinite(if field == "chi1" {
                    "chi1"
                } else {
                    "chi2"
                }));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidValue {
                    field: field.into(),
                    reason: format!("must lie in [0, 1], got {value}"),
                });
            }
        }
        Ok(Self { chi1, chi2 })
    }

    pub fn chi1(&self) -> f64 {
        self.chi1
    }

    pub fn chi2(&self) -> f64 {
        self.chi2
    }
}

impl Default for EmissionGeometry {
    fn default() -> Self {
        Self::THREE_DIMENSIONAL
    }
}

/// Internal scale set: frequency Γ1, velocity Γ1/k1, energy ħΓ1 and momentum
/// MΓ1/k1. Public inputs and outputs stay in SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalUnits {
    pub frequency: f64,
    pub velocity: f64,
    pub energy: f64,
    pub momentum: f64,
}

impl NaturalUnits {
    fn new(species: &Species) -> Self {
        let velocity = species.gamma1 / species.k1;
        Self {
            frequency: species.gamma1,
            velocity,
            energy: HBAR * species.gamma1,
            momentum: species.mass * velocity,
        }
    }

    pub fn frequency_to_natural(&self, omega: f64) -> f64 {
        omega / self.frequency
    }

    pub fn frequency_from_natural(&self, x: f64) -> f64 {
        x * self.frequency
    }

    pub fn velocity_to_natural(&self, v: f64) -> f64 {
        v / self.velocity
    }

    pub fn velocity_from_natural(&self, x: f64) -> f64 {
        x * self.velocity
    }

    pub fn energy_to_natural(&self, e: f64) -> f64 {
        e / self.energy
    }

    pub fn energy_from_natural(&self, x: f64) -> f64 {
        x * self.energy
    }
}

/// An ordered collection of species records.
#[derive(Debug, Clone)]
pub struct SpeciesCatalog {
    species: Vec<Species>,
}

impl SpeciesCatalog {
    /// Parses the plain-text species format: records opened by `[species]`,
    /// `key = value` lines and `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let sections = kv::parse_sections(text)?;
        let mut species = Vec::with_capacity(sections.len());
        for section in &sections {
            if section.name != "species" {
                return Err(Error::Parse {
                    line: section.line,
                    message: format!("unexpected section [{}]", section.name),
                });
            }
            species.push(Species::from_record(section)?);
        }
        Ok(Self { species })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SPECIES).expect("bundled species data is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The file named by `CASCADE_COOL_SPECIES_PATH` if set, else the
    /// bundled data.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(SPECIES_PATH_ENV) {
            Some(path) if !path.is_empty() => Self::from_file(Path::new(&path)),
            _ => Ok(Self::bundled()),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Species> {
        self.species
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Species> {
        self.species.iter()
    }
}

/// Looks a species up by preset name in the active catalog.
pub fn load_species(name: &str) -> Result<Species> {
    SpeciesCatalog::from_env()?.get(name).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bundled(name: &str) -> Species {
        SpeciesCatalog::bundled().get(name).unwrap().clone()
    }

    #[test]
    fn mg_preset_matches_table() {
        let mg = bundled("Mg");
        assert_relative_eq!(mg.lambda1(), 285.29e-9, max_relative = 1e-15);
        assert_relative_eq!(mg.lambda2(), 880.92e-9, max_relative = 1e-15);
        assert_relative_eq!(mg.gamma1() / TAU, 78.8e6, max_relative = 1e-15);
        assert_relative_eq!(mg.gamma2() / TAU, 2.0e6, max_relative = 1e-15);
        assert_eq!(mg.k1(), TAU / mg.lambda1());
        assert_eq!(mg.k2(), TAU / mg.lambda2());
    }

    #[test]
    fn cs_upper_linewidth() {
        assert_relative_eq!(bundled("Cs").gamma2() / TAU, 0.49e6, max_relative = 1e-15);
    }

    #[test]
    fn presets_satisfy_cascade_premise() {
        for s in SpeciesCatalog::bundled().iter() {
            assert!(s.gamma1() > s.gamma2(), "{}", s.name());
            assert!(s.mass() > 0.0);
        }
        assert_eq!(SpeciesCatalog::bundled().iter().count(), 3);
    }

    #[test]
    fn doppler_limits_match_table() {
        let mg = bundled("Mg");
        assert_relative_eq!(mg.doppler_limit_lower(), 1.9e-3, max_relative = 0.02);
        assert_relative_eq!(mg.doppler_limit_upper(), 48e-6, max_relative = 0.02);
        assert_relative_eq!(
            bundled("Cs").doppler_limit_upper(),
            12e-6,
            max_relative = 0.05
        );
        assert_relative_eq!(
            bundled("Ca").doppler_limit_lower(),
            0.833e-3,
            max_relative = 0.01
        );
        assert_relative_eq!(
            bundled("Ca").doppler_limit_upper(),
            127e-6,
            max_relative = 0.01
        );
    }

    #[test]
    fn doppler_limit_is_linear() {
        for g in [1.0, 3.7e6, 2.0 * TAU * 78.8e6] {
            assert_eq!(doppler_limit(2.0 * g), 2.0 * doppler_limit(g));
        }
    }

    #[test]
    fn natural_units_mg() {
        let mg = bundled("Mg");
        let u = mg.natural_units();
        // 78.8 MHz × 285.29 nm, computed by hand.
        assert_relative_eq!(u.velocity, 22.480852, max_relative = 1e-6);
        assert_eq!(u.frequency_to_natural(mg.gamma1()), 1.0);
        for x in [-3.2e8, 1e-3, 7.0e5] {
            assert_relative_eq!(
                u.frequency_from_natural(u.frequency_to_natural(x)),
                x,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                u.velocity_from_natural(u.velocity_to_natural(x)),
                x,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                u.energy_from_natural(u.energy_to_natural(x)),
                x,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn record_errors_name_the_field() {
        let text = "[species]\nname = X\nmass_u = 1\nlambda1_nm = 1\nlambda2_nm = 1\n\
                    gamma1_over_2pi_MHz = 0\ngamma2_over_2pi_MHz = 1\n";
        match SpeciesCatalog::parse(text) {
            Err(Error::NonPositive { field, .. }) => assert_eq!(field, "gamma1_over_2pi_MHz"),
            other => panic!("unexpected {other:?}"),
        }
        let text = "[species]\nname = X\nmass_u = 1\nlambda1_nm = 1\n";
        match SpeciesCatalog::parse(text) {
            Err(Error::MissingField { field, record }) => {
                assert_eq!(field, "lambda2_nm");
                assert_eq!(record, "X");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            SpeciesCatalog::bundled().get("Xe"),
            Err(Error::UnknownSpecies(_))
        ));
    }

    #[test]
    fn decimal_literals_parse_exactly() {
        let text =
            "[species]\nname = T\nmass_u = 24.305\nlambda1_nm = 285.29\nlambda2_nm = 880.92\n\
                    gamma1_over_2pi_MHz = 78.8\ngamma2_over_2pi_MHz = 2.0\n";
        let s = SpeciesCatalog::parse(text).unwrap();
        assert_eq!(s.get("t").unwrap(), &bundled("Mg").renamed("T"));
    }

    #[test]
    fn geometry_bounds() {
        assert!(EmissionGeometry::new(1.0, 0.0).is_ok());
        assert!(EmissionGeometry::new(1.1, 0.0).is_err());
        assert!(EmissionGeometry::new(0.4, -0.1).is_err());
        assert_eq!(EmissionGeometry::DIPOLE.chi1(), 0.4);
        assert_eq!(
            EmissionGeometry::default(),
            EmissionGeometry::THREE_DIMENSIONAL
        );
    }

    #[test]
    fn upper_linewidth_override_allows_zero() {
        let mg = bundled("Mg");
        assert_eq!(mg.with_upper_linewidth(0.0).unwrap().gamma2(), 0.0);
        assert!(mg.with_upper_linewidth(-1.0).is_err());
    }

    impl Species {
        fn renamed(&self, name: &str) -> Self {
            Self {
                name: name.into(),
                ..self.clone()
            }
        }
    }
}
