//! Small numerical kernels: Richardson-extrapolated central differences and
//! an adaptive Dormand–Prince 5(4) integrator for scalar ODEs.

use crate::error::{Error, Result};

/// A value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Convergence settings for [`derivative_at_zero`].
#[derive(Debug, Clone, Copy)]
pub struct DerivativeOptions {
    /// Base step.
    pub step: f64,
    /// Accept when successive extrapolations agree to this relative level.
    pub rel_tol: f64,
    /// Maximum number of step halvings after the first comparison.
    pub max_halvings: usize,
}

fn central<const N: usize>(fp: &[f64; N], fm: &[f64; N], h: f64) -> [f64; N] {
    std::array::from_fn(|i| (fp[i] - fm[i]) / (2.0 * h))
}

/// Derivative at 0 of every component of `f`.
///
/// Central differences D(h) are combined as (4D(h/2) − D(h))/3; the
/// extrapolation is repeated at h/2 and accepted once two successive values
/// agree within `rel_tol` (or the per-component absolute floor `abs_tol`),
/// halving the step otherwise.
pub fn derivative_at_zero<const N: usize, F>(
    f: F,
    abs_tol: [f64; N],
    opts: &DerivativeOptions,
) -> Result<[Estimate; N]>
where
    F: Fn(f64) -> Result<[f64; N]>,
{
    let diff = |h: f64| -> Result<[f64; N]> { Ok(central(&f(h)?, &f(-h)?, h)) };
    let extrapolate = |coarse: &[f64; N], fine: &[f64; N]| -> [f64; N] {
        std::array::from_fn(|i| (4.0 * fine[i] - coarse[i]) / 3.0)
    };

    let mut h = opts.step;
    let mut d_coarse = diff(h)?;
    let mut d_fine = diff(h / 2.0)?;
    let mut previous = extrapolate(&d_coarse, &d_fine);
    for level in 0..=opts.max_halvings {
        h /= 2.0;
        d_coarse = d_fine;
        d_fine = diff(h / 2.0)?;
        let current = extrapolate(&d_coarse, &d_fine);
        let failed = (0..N).find(|&i| {
            let gap = (current[i] - previous[i]).abs();
            let scale = current[i].abs().max(previous[i].abs());
            gap > opts.rel_tol * scale + abs_tol[i]
        });
        match failed {
            None => {
                return Ok(std::array::from_fn(|i| Estimate {
                    value: current[i],
                    error: (current[i] - previous[i]).abs(),
                }))
            }
            Some(i) if level == opts.max_halvings => {
                return Err(Error::DerivativeNotConverged {
                    coarse: previous[i],
                    fine: current[i],
                })
            }
            Some(_) => previous = current,
        }
    }
    unreachable!("loop returns on its last iteration")
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct OdeTolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

/// Integrates dy/dt = f(t, y) from (t0, y0), returning y at each of the
/// non-decreasing `outputs` (all ≥ t0). Steps are clipped to land on every
/// output time.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: f64,
    outputs: &[f64],
    tol: &OdeTolerances,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, y)?;
    let mut h = initial_step(t0, y0, k1, outputs, tol);
    let mut steps = 0usize;
    let mut out = Vec::with_capacity(outputs.len());

    for &target in outputs {
        if target < t {
            return Err(Error::Integration {
                t,
                reason: format!("output time {target} precedes current time"),
            });
        }
        while t < target {
            if steps >= tol.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: format!("exceeded {} steps", tol.max_steps),
                });
            }
            steps += 1;
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            let mut k = [0.0; 7];
            k[0] = k1;
            for s in 1..7 {
                let ys = y + step * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s] = f(t + C[s] * step, ys)?;
            }
            let y5 = y + step * (0..7).map(|j| B5[j] * k[j]).sum::<f64>();
            let y4 = y + step * (0..7).map(|j| B4[j] * k[j]).sum::<f64>();
            let scale = tol.atol + tol.rtol * y.abs().max(y5.abs());
            let err = ((y5 - y4) / scale).abs();
            if !err.is_finite() {
                return Err(Error::Integration {
                    t,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y5;
                k1 = k[6];
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = step * factor;
            if h <= f64::EPSILON * t.abs().max(1e-300) {
                return Err(Error::Integration {
                    t,
                    reason: "step size underflow".into(),
                });
            }
        }
        out.push(y);
    }
    Ok(out)
}

fn initial_step(t0: f64, y0: f64, dy: f64, outputs: &[f64], tol: &OdeTolerances) -> f64 {
    let span = outputs
        .last()
        .map(|&t| t - t0)
        .unwrap_or(0.0)
        .max(f64::MIN_POSITIVE);
    let rate = dy.abs() / (tol.atol + tol.rtol * y0.abs());
    let guess = if rate > 0.0 {
        0.01 * tol.rtol.powf(0.2) / rate
    } else {
        span
    };
    guess.min(span).max(span * 1e-12)
}
