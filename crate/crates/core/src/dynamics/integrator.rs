//! Dormand–Prince 5(4) stepping with an embedded error estimate and cubic
//! Hermite dense output for locating plane crossings.

use crate::config::IntegratorConfig;
use crate::error::{FieldError, IntegrationError};
use crate::state::{OneParticleState, TwoParticleState};

/// A velocity field `dq/dt = v(t, q)` that may be undefined at nodes.
pub trait GuidanceField<const N: usize> {
    fn velocity(&self, t: f64, q: &[f64; N]) -> Result<[f64; N], FieldError>;
}

impl GuidanceField<4> for TwoParticleState {
    fn velocity(&self, t: f64, q: &[f64; 4]) -> Result<[f64; 4], FieldError> {
        self.velocity_array(q, t)
    }
}

impl GuidanceField<2> for OneParticleState {
    fn velocity(&self, t: f64, q: &[f64; 2]) -> Result<[f64; 2], FieldError> {
        self.velocity_array(q, t)
    }
}

impl<const N: usize, F> GuidanceField<N> for F
where
    F: Fn(f64, &[f64; N]) -> Result<[f64; N], FieldError>,
{
    fn velocity(&self, t: f64, q: &[f64; N]) -> Result<[f64; N], FieldError> {
        self(t, q)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// One accepted step with endpoint derivatives, enough for cubic Hermite
/// interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub q0: [f64; N],
    pub v0: [f64; N],
    pub t1: f64,
    pub q1: [f64; N],
    pub v1: [f64; N],
}

impl<const N: usize> Segment<N> {
    /// Cubic Hermite interpolant at `t ∈ [t0, t1]`.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.q0;
        }
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = h00 * self.q0[i] + h10 * h * self.v0[i] + h01 * self.q1[i] + h11 * h * self.v1[i];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult<const N: usize> {
    pub segment: Segment<N>,
    /// Suggested size of the next step.
    pub dt_next: f64,
    /// Trial steps rejected before this one was accepted.
    pub rejected: u32,
}

/// Result of one Dormand–Prince trial: the fifth-order solution, the
/// derivative there (FSAL), and the scaled error norm.
fn trial<const N: usize, F: GuidanceField<N>>(
    field: &F,
    t: f64,
    q: &[f64; N],
    v0: &[f64; N],
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<([f64; N], [f64; N], f64), FieldError> {
    let mut k = [[0.0; N]; 7];
    k[0] = *v0;
    let mut y = [0.0; N];
    for stage in 1..7 {
        for i in 0..N {
            let mut acc = 0.0;
            for j in 0..stage {
                acc += A[stage][j] * k[j][i];
            }
            y[i] = q[i] + dt * acc;
        }
        k[stage] = field.velocity(t + C[stage] * dt, &y)?;
    }
    // Stage 7 is evaluated at the fifth-order solution itself.
    let mut err = 0.0f64;
    for i in 0..N {
        let mut e = 0.0;
        for j in 0..7 {
            e += E[j] * k[j][i];
        }
        let scale = cfg.abs_tol + cfg.rel_tol * q[i].abs().max(y[i].abs());
        err = err.max((dt * e).abs() / scale);
    }
    Ok((y, k[6], err))
}

/// One accepted adaptive step from `(t, q)` with known derivative `v0`,
/// never stepping past `t_limit`.
///
/// Stage evaluations that land on a node reject the trial and halve the step.
pub fn step_from<const N: usize, F: GuidanceField<N>>(
    field: &F,
    t: f64,
    q: [f64; N],
    v0: [f64; N],
    dt: f64,
    t_limit: f64,
    cfg: &IntegratorConfig,
) -> Result<StepResult<N>, IntegrationError> {
    let mut dt = dt.max(cfg.dt_min);
    let mut rejected = 0u32;
    loop {
        let remaining = t_limit - t;
        let clipped = dt >= remaining;
        let h = if clipped { remaining } else { dt };
        let grow_limit = if rejected > 0 { 1.0 } else { MAX_FACTOR };
        match trial(field, t, &q, &v0, h, cfg) {
            Ok((q1, v1, err)) if err <= 1.0 && q1.iter().all(|v| v.is_finite()) => {
                let factor =
                    if err == 0.0 { grow_limit } else { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, grow_limit) };
                let t1 = if clipped { t_limit } else { t + h };
                return Ok(StepResult {
                    segment: Segment { t0: t, q0: q, v0, t1, q1, v1 },
                    dt_next: if clipped { dt } else { h * factor },
                    rejected,
                });
            }
            Ok((_, _, err)) => {
                let factor = if err.is_finite() { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0) } else { MIN_FACTOR };
                dt = h * factor;
            }
            Err(FieldError::NodeSingularity { .. }) => dt = 0.5 * h,
            Err(FieldError::DegenerateCollapse) => unreachable!("fields never collapse"),
        }
        rejected += 1;
        if dt < cfg.dt_min {
            return Err(IntegrationError::Stiffness { t, q: q.to_vec() });
        }
    }
}

/// One accepted adaptive step starting from `(t, q)`.
///
/// Returns the new point, its time, and the suggested next step size.
pub fn step_adaptive<const N: usize, F: GuidanceField<N>>(
    field: &F,
    q: [f64; N],
    t: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<([f64; N], f64, f64), IntegrationError> {
    let v0 = field.velocity(t, &q).map_err(|_| IntegrationError::Stiffness { t, q: q.to_vec() })?;
    let step = step_from(field, t, q, v0, dt, f64::INFINITY, cfg)?;
    Ok((step.segment.q1, step.segment.t1, step.dt_next))
}

/// A single Dormand–Prince step of exactly `dt` without error control, used
/// to land on a located crossing inside an already accepted step.
pub fn substep<const N: usize, F: GuidanceField<N>>(
    field: &F,
    t: f64,
    q: &[f64; N],
    v0: &[f64; N],
    dt: f64,
) -> Result<[f64; N], FieldError> {
    if dt == 0.0 {
        return Ok(*q);
    }
    let cfg = IntegratorConfig::default();
    trial(field, t, q, v0, dt, &cfg).map(|(y, _, _)| y)
}

/// Time at which coordinate `axis` of the Hermite interpolant meets `plane`,
/// found by bisection to within `tol`, together with the interpolated point.
pub fn locate_crossing<const N: usize>(
    segment: &Segment<N>,
    plane: f64,
    axis: usize,
    tol: f64,
) -> Result<(f64, [f64; N]), IntegrationError> {
    let g = |t: f64| segment.interpolate(t)[axis] - plane;
    let (g0, g1) = (segment.q0[axis] - plane, segment.q1[axis] - plane);
    if g0 == 0.0 {
        return Ok((segment.t0, segment.q0));
    }
    if g1 == 0.0 {
        return Ok((segment.t1, segment.q1));
    }
    if g0.signum() == g1.signum() {
        return Err(IntegrationError::ContractViolation(format!(
            "axis {axis} does not cross {plane} between t = {} and {}",
            segment.t0, segment.t1
        )));
    }
    let (mut lo, mut hi) = (segment.t0, segment.t1);
    let lo_sign = g0.signum();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok((mid, segment.interpolate(mid)));
        }
        if gm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok((t, segment.interpolate(t)))
}
