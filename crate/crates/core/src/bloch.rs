//! Optical Bloch equations of the driven, damped cascade and their steady
//! state.
//!
//! The generator is written in the frame rotating at the two laser
//! frequencies, in the rotating-wave approximation, for the beam pair
//! propagating along +x. An atom moving at velocity `v` sees the detunings
//! δ1′ = δ1 − k1·v and δ2′ = δ2 − k2·v; the −x pair is obtained by evaluating
//! at −v. Internally everything is expressed in units of Γ1.

use nalgebra::{Matrix3, SMatrix, SVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::species::{Species, SPEED_OF_LIGHT};

pub type Superoperator = SMatrix<Complex64, 9, 9>;

/// Steady states with ρ11 above this value are flagged as saturated; the
/// perturbative rate picture assumes a weakly driven lower transition.
pub const SATURATION_THRESHOLD: f64 = 0.1;

/// Condition-number estimate above which the steady state is rejected.
pub const MAX_CONDITION: f64 = 1e13;

/// Laser parameters of the two driving fields, all angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserConfig {
    /// Rabi frequency Ω1 of the |0⟩–|1⟩ drive.
    pub omega_rabi1: f64,
    /// Rabi frequency Ω2 of the |1⟩–|2⟩ drive.
    pub omega_rabi2: f64,
    /// δ1 = ω1 − ω01.
    pub delta1: f64,
    /// δ2 = ω2 − ω12; δ1 + δ2 detunes the two-photon transition.
    pub delta2: f64,
}

impl LaserConfig {
    pub fn new(omega_rabi1: f64, omega_rabi2: f64, delta1: f64, delta2: f64) -> Result<Self> {
        let config = Self {
            omega_rabi1,
            omega_rabi2,
            delta1,
            delta2,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_rabi1", self.omega_rabi1),
            ("omega_rabi2", self.omega_rabi2),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        for (name, value) in &fields[..2] {
            if *value < 0.0 {
                return Err(Error::InvalidValue {
                    field: (*name).into(),
                    reason: format!("Rabi frequency must be >= 0, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Same drive with both detunings reversed.
    pub fn mirrored(&self) -> Self {
        Self {
            delta1: -self.delta1,
            delta2: -self.delta2,
            ..*self
        }
    }

    /// Two-photon detuning δ1 + δ2.
    pub fn two_photon_detuning(&self) -> f64 {
        self.delta1 + self.delta2
    }

    /// Detunings (δ1′, δ2′) seen by an atom moving at `v` along +x.
    pub fn doppler_shifted(&self, species: &Species, v: f64) -> (f64, f64) {
        (
            self.delta1 - species.k1() * v,
            self.delta2 - species.k2() * v,
        )
    }
}

/// Liouvillian of the cascade acting on the row-major vectorization of ρ,
/// in units of Γ1.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    matrix: Superoperator,
    species: &'a Species,
    lasers: LaserConfig,
    velocity: f64,
}

/// Superoperator of ρ ↦ a·ρ·b for row-major vec(ρ).
fn sandwich(a: &Matrix3<Complex64>, b: &Matrix3<Complex64>) -> Superoperator {
    let mut out = Superoperator::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    out[(3 * i + j, 3 * k + l)] = a[(i, k)] * b[(l, j)];
                }
            }
        }
    }
    out
}

fn lindblad_term(jump: &Matrix3<Complex64>, rate: f64) -> Superoperator {
    let id = Matrix3::identity();
    let jump_dag = jump.adjoint();
    let number = jump_dag * jump;
    let half = Complex64::new(0.5, 0.0);
    (sandwich(jump, &jump_dag) - sandwich(&number, &id) * half - sandwich(&id, &number) * half)
        * Complex64::new(rate, 0.0)
}

fn lowering(from: usize, to: usize) -> Matrix3<Complex64> {
    let mut m = Matrix3::zeros();
    m[(to, from)] = Complex64::new(1.0, 0.0);
    m
}

/// Rotating-frame Hamiltonian (ħ = 1) in units of Γ1.
pub(crate) fn hamiltonian(
    omega1: f64,
    omega2: f64,
    delta1p: f64,
    delta2p: f64,
) -> Matrix3<Complex64> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let mut h = Matrix3::zeros();
    h[(1, 1)] = c(-delta1p);
    h[(2, 2)] = c(-(delta1p + delta2p));
    h[(0, 1)] = c(omega1 / 2.0);
    h[(1, 0)] = c(omega1 / 2.0);
    h[(1, 2)] = c(omega2 / 2.0);
    h[(2, 1)] = c(omega2 / 2.0);
    h
}

/// Assembles the generator for an atom at velocity `v` (m/s).
pub fn build_generator<'a>(
    species: &'a Species,
    lasers: &LaserConfig,
    v: f64,
) -> Result<Generator<'a>> {
    lasers.validate()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("v"));
    }
    if v.abs() >= SPEED_OF_LIGHT / 100.0 {
        return Err(Error::Relativistic(v));
    }
    let units = species.natural_units();
    let nat = |x: f64| units.frequency_to_natural(x);
    let (d1p, d2p) = lasers.doppler_shifted(species, v);
    let h = hamiltonian(
        nat(lasers.omega_rabi1),
        nat(lasers.omega_rabi2),
        nat(d1p),
        nat(d2p),
    );
    let id = Matrix3::identity();
    let minus_i = Complex64::new(0.0, -1.0);
    let mut matrix = (sandwich(&h, &id) - sandwich(&id, &h)) * minus_i;
    matrix += lindblad_term(&lowering(1, 0), nat(species.gamma1()));
    if species.gamma2() > 0.0 {
        matrix += lindblad_term(&lowering(2, 1), nat(species.gamma2()));
    }
    Ok(Generator {
        matrix,
        species,
        lasers: *lasers,
        velocity: v,
    })
}

impl<'a> Generator<'a> {
    pub fn matrix(&self) -> &Superoperator {
        &self.matrix
    }

    pub fn species(&self) -> &'a Species {
        self.species
    }

    pub fn lasers(&self) -> &LaserConfig {
        &self.lasers
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    /// dρ/dt in units of Γ1.
    pub fn apply(&self, rho: &Matrix3<Complex64>) -> Matrix3<Complex64> {
        unvec(&(self.matrix * vec(rho)))
    }
}

fn vec(rho: &Matrix3<Complex64>) -> SVector<Complex64, 9> {
    SVector::from_fn(|idx, _| rho[(idx / 3, idx % 3)])
}

fn unvec(v: &SVector<Complex64, 9>) -> Matrix3<Complex64> {
    Matrix3::from_fn(|i, j| v[3 * i + j])
}

pub(crate) fn max_modulus<'m, I: IntoIterator<Item = &'m Complex64>>(values: I) -> f64 {
    values.into_iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn norm1(m: &Superoperator) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Steady-state density matrix of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: Matrix3<Complex64>,
}

impl DensityMatrix {
    pub fn ground() -> Self {
        let mut rho = Matrix3::zeros();
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        Self { rho }
    }

    pub fn matrix(&self) -> &Matrix3<Complex64> {
        &self.rho
    }

    pub fn populations(&self) -> [f64; 3] {
        [
            self.rho[(0, 0)].re,
            self.rho[(1, 1)].re,
            self.rho[(2, 2)].re,
        ]
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// max |ρ − ρ†|.
    pub fn hermiticity_defect(&self) -> f64 {
        max_modulus(&(self.rho - self.rho.adjoint()))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().min()
    }

    /// Coherence ρ02 between ground and top state.
    pub fn ground_top_coherence(&self) -> Complex64 {
        self.rho[(0, 2)]
    }

    pub fn is_saturated(&self) -> bool {
        self.rho[(1, 1)].re > SATURATION_THRESHOLD
    }
}

/// Populations (p0, p1, p2) of a steady state.
pub fn populations(rho: &DensityMatrix) -> [f64; 3] {
    rho.populations()
}

/// Solves L·vec(ρ) = 0 with Tr ρ = 1.
///
/// The row of L producing dρ00/dt is redundant (trace preservation) and is
/// replaced by the trace constraint; the resulting 9×9 system is solved by
/// LU decomposition with partial pivoting.
pub fn steady_state(generator: &Generator<'_>) -> Result<DensityMatrix> {
    let mut system = generator.matrix;
    let one = Complex64::new(1.0, 0.0);
    for col in 0..9 {
        system[(0, col)] = Complex64::new(0.0, 0.0);
    }
    system[(0, 0)] = one;
    system[(0, 4)] = one;
    system[(0, 8)] = one;
    let mut rhs = SVector::<Complex64, 9>::zeros();
    rhs[0] = one;

    let lu = system.lu();
    let condition = match lu.try_inverse() {
        Some(inv) => norm1(&system) * norm1(&inv),
        None => f64::INFINITY,
    };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularSystem { condition });
    }
    let x = lu.solve(&rhs).ok_or(Error::SingularSystem { condition })?;
    let rho = unvec(&x);
    let rho = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let trace = rho.trace().re;
    Ok(DensityMatrix {
        rho: rho / Complex64::new(trace, 0.0),
    })
}

/// Steady state for an atom at velocity `v`.
pub fn steady_state_at(species: &Species, lasers: &LaserConfig, v: f64) -> Result<DensityMatrix> {
    steady_state(&build_generator(species, lasers, v)?)
}

/// max |L·vec(ρ)| in units of Γ1.
pub fn residual(generator: &Generator<'_>, rho: &DensityMatrix) -> f64 {
    max_modulus(&(generator.matrix * vec(&rho.rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::SpeciesCatalog;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mg() -> Species {
        SpeciesCatalog::bundled().get("Mg").unwrap().clone()
    }

    /// Closed-form two-level steady-state excited population, written out
    /// independently of the superoperator machinery.
    fn two_level_excited(omega: f64, delta: f64, gamma: f64) -> f64 {
        (omega * omega / 4.0) / (delta * delta + gamma * gamma / 4.0 + omega * omega / 2.0)
    }

    #[test]
    fn no_drive_relaxes_to_ground() {
        let mg = mg();
        let lasers = LaserConfig::new(0.0, 0.0, 0.3 * mg.gamma1(), -mg.gamma1()).unwrap();
        for v in [-30.0, 0.0, 12.5] {
            let rho = steady_state_at(&mg, &lasers, v).unwrap();
            assert!(max_modulus(&(rho.matrix() - DensityMatrix::ground().matrix())) < 1e-14);
            assert_eq!(populations(&rho)[0], 1.0);
        }
    }

    #[test]
    fn doppler_shift_is_a_detuning_shift() {
        let mg = mg();
        let g = mg.gamma1();
        let lasers = LaserConfig::new(0.05 * g, 0.3 * g, -0.4 * g, 0.2 * g).unwrap();
        let v = 7.3;
        let shifted = LaserConfig {
            delta1: lasers.delta1 - mg.k1() * v,
            delta2: lasers.delta2 - mg.k2() * v,
            ..lasers
        };
        let a = build_generator(&mg, &lasers, v).unwrap();
        let b = build_generator(&mg, &shifted, 0.0).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn weak_two_level_population() {
        let mg = mg();
        let g = mg.gamma1();
        let omega = 0.01 * g;
        for delta in [0.0, -0.5 * g, 1.3 * g] {
            let lasers = LaserConfig::new(omega, 0.0, delta, 0.0).unwrap();
            let p = steady_state_at(&mg, &lasers, 0.0).unwrap().populations();
            assert_relative_eq!(
                p[1],
                two_level_excited(omega, delta, g),
                max_relative = 1e-9
            );
            assert_eq!(p[2], 0.0);
        }
        let lasers = LaserConfig::new(omega, 0.0, 0.0, 0.0).unwrap();
        let p = steady_state_at(&mg, &lasers, 0.0).unwrap().populations();
        assert_relative_eq!(p[1], 1.0e-4, max_relative = 1e-3);
    }

    #[test]
    fn residual_and_trace() {
        let mg = mg();
        let g = mg.gamma1();
        let lasers = LaserConfig::new(0.2 * g, 0.5 * g, -0.7 * g, 0.4 * g).unwrap();
        let gen = build_generator(&mg, &lasers, 3.0).unwrap();
        let rho = steady_state(&gen).unwrap();
        assert!(residual(&gen, &rho) <= 1e-10);
        assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity() {
        let mg = mg();
        let g = mg.gamma1();
        let lasers = LaserConfig::new(0.3 * g, 1.1 * g, 0.2 * g, -0.9 * g).unwrap();
        let gen = build_generator(&mg, &lasers, -4.0).unwrap();
        let mut rho = Matrix3::<Complex64>::zeros();
        let vals = [0.3, -0.2, 0.7, 0.1, 0.25, -0.4];
        rho[(0, 0)] = Complex64::new(0.5, 0.0);
        rho[(1, 1)] = Complex64::new(0.3, 0.0);
        rho[(2, 2)] = Complex64::new(0.2, 0.0);
        rho[(0, 1)] = Complex64::new(vals[0], vals[1]);
        rho[(0, 2)] = Complex64::new(vals[2], vals[3]);
        rho[(1, 2)] = Complex64::new(vals[4], vals[5]);
        rho = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
        let d = gen.apply(&rho);
        assert!(d.trace().norm() <= 1e-12);
        assert!(max_modulus(&(d - d.adjoint())) <= 1e-12);
    }

    #[test]
    fn dark_state_traps_population() {
        let mg = mg().with_upper_linewidth(0.0).unwrap();
        let g = mg.gamma1();
        let lasers = LaserConfig::new(0.01 * g, 0.3 * g, -0.25 * g, 0.25 * g).unwrap();
        let rho = steady_state_at(&mg, &lasers, 0.0).unwrap();
        assert!(rho.populations()[1] <= 1e-8);
        assert!(rho.ground_top_coherence().norm() > 0.0);
    }

    #[test]
    fn decoupled_top_state_is_reported_singular() {
        let mg = mg().with_upper_linewidth(0.0).unwrap();
        let lasers = LaserConfig::new(0.01 * mg.gamma1(), 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            steady_state_at(&mg, &lasers, 0.0),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mg = mg();
        assert!(LaserConfig::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(LaserConfig::new(1.0, 0.0, f64::NAN, 0.0).is_err());
        let lasers = LaserConfig::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            build_generator(&mg, &lasers, f64::INFINITY),
            Err(Error::NonFinite("v"))
        ));
        assert!(matches!(
            build_generator(&mg, &lasers, 4.0e6),
            Err(Error::Relativistic(_))
        ));
    }

    #[test]
    fn saturation_flag() {
        let mg = mg();
        let g = mg.gamma1();
        let weak = LaserConfig::new(0.01 * g, 0.0, 0.0, 0.0).unwrap();
        let strong = LaserConfig::new(2.0 * g, 0.0, 0.0, 0.0).unwrap();
        assert!(!steady_state_at(&mg, &weak, 0.0).unwrap().is_saturated());
        assert!(steady_state_at(&mg, &strong, 0.0).unwrap().is_saturated());
    }

    #[test]
    fn weak_drive_scales_quadratically() {
        let mg = mg();
        let g = mg.gamma1();
        let full = LaserConfig::new(0.01 * g, 0.25 * g, 0.3 * g, -0.2 * g).unwrap();
        let half = LaserConfig {
            omega_rabi1: 0.005 * g,
            ..full
        };
        let a = steady_state_at(&mg, &full, 0.0).unwrap().populations();
        let b = steady_state_at(&mg, &half, 0.0).unwrap().populations();
        assert_relative_eq!(b[1], a[1] / 4.0, max_relative = 0.01);
        assert_relative_eq!(b[2], a[2] / 4.0, max_relative = 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn rabi_sign_flip_leaves_populations(
            o1 in 0.0..2.0f64, o2 in 0.0..2.0f64, d1 in -3.0..3.0f64, d2 in -3.0..3.0f64,
        ) {
            let mg = mg();
            let g = mg.gamma1();
            let lasers = LaserConfig::new(o1 * g, o2 * g, d1 * g, d2 * g).unwrap();
            let a = steady_state_at(&mg, &lasers, 0.0).unwrap();
            // Flipping both Rabi signs is the unitary diag(1, -1, 1); build the
            // flipped Hamiltonian directly.
            let units = mg.natural_units();
            let h = hamiltonian(-o1, -o2, d1, d2);
            let id = Matrix3::identity();
            let mut m = (sandwich(&h, &id) - sandwich(&id, &h)) * Complex64::new(0.0, -1.0);
            m += lindblad_term(&lowering(1, 0), 1.0);
            m += lindblad_term(&lowering(2, 1), units.frequency_to_natural(mg.gamma2()));
            let gen = Generator { matrix: m, species: &mg, lasers, velocity: 0.0 };
            let b = steady_state(&gen).unwrap();
            for (x, y) in a.populations().iter().zip(b.populations()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn mirror_symmetry_of_populations(
            o1 in 0.0..1.0f64, o2 in 0.0..2.0f64, d1 in -3.0..3.0f64, d2 in -3.0..3.0f64,
            v in -40.0..40.0f64,
        ) {
            let mg = mg();
            let g = mg.gamma1();
            let lasers = LaserConfig::new(o1 * g, o2 * g, d1 * g, d2 * g).unwrap();
            let a = steady_state_at(&mg, &lasers, v).unwrap().populations();
            let b = steady_state_at(&mg, &lasers.mirrored(), -v).unwrap().populations();
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
