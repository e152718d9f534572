//! Per-trajectory algorithm: integrate the two-particle guidance equation to
//! the first screen arrival, collapse onto the conditional wave function, and
//! follow the survivor to its own screen.

use std::fmt;
use std::str::FromStr;

use crate::config::{IntegratorConfig, Mode, Screens};
use crate::error::{ConfigError, IntegrationError};
use crate::state::{ConfigPoint4, OneParticleState, Particle, TwoParticleState};

use super::integrator::{locate_crossing, step_from, substep, GuidanceField, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    L,
    R,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::L => "L",
            Side::R => "R",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" => Ok(Side::L),
            "R" => Ok(Side::R),
            other => Err(ConfigError::new(format!("unknown side '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Complete,
    Censored,
    AnomalousSameSide,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::Complete, Status::Censored, Status::AnomalousSameSide];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Complete => "complete",
            Status::Censored => "censored",
            Status::AnomalousSameSide => "anomalous_same_side",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ConfigError::new(format!("unknown status '{s}'")))
    }
}

/// A screen arrival: which screen, when, and where along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub side: Side,
    pub t: f64,
    pub y: f64,
}

/// One trajectory's detection outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub trajectory_index: u64,
    pub mode: Mode,
    pub first: Option<Arrival>,
    pub second: Option<Arrival>,
    pub status: Status,
}

impl DetectionRecord {
    /// The arrival on `side`, if exactly one arrival happened there.
    pub fn arrival_on(&self, side: Side) -> Option<Arrival> {
        if self.status != Status::Complete {
            return None;
        }
        [self.first, self.second].into_iter().flatten().find(|a| a.side == side)
    }

    fn classify(mode: Mode, first: Option<Arrival>, second: Option<Arrival>) -> Self {
        let status = match (first, second) {
            (Some(a), Some(b)) if a.side == b.side => Status::AnomalousSameSide,
            (Some(_), Some(_)) => Status::Complete,
            _ => Status::Censored,
        };
        Self { trajectory_index: 0, mode, first, second, status }
    }
}

/// A point of a recorded path. After a collapse the detected particle's
/// coordinates stay frozen at its detection point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub point: ConfigPoint4,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryDiagnostics {
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    /// Relative jump of the survivor's velocity across the collapse.
    pub collapse_velocity_mismatch: Option<f64>,
    /// Why integration stopped early, if it did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub record: DetectionRecord,
    pub path: Option<Vec<PathSample>>,
    pub diagnostics: TrajectoryDiagnostics,
}

/// Adaptive integration state of one flow.
#[derive(Clone)]
struct Flow<'f, const N: usize, F> {
    field: &'f F,
    t: f64,
    q: [f64; N],
    v: [f64; N],
    dt: f64,
}

impl<'f, const N: usize, F: GuidanceField<N>> Flow<'f, N, F> {
    fn start(field: &'f F, t: f64, q: [f64; N], dt: f64) -> Result<Self, IntegrationError> {
        let v = field.velocity(t, &q).map_err(|_| IntegrationError::Stiffness { t, q: q.to_vec() })?;
        Ok(Self { field, t, q, v, dt })
    }

    fn advance(&mut self, cfg: &IntegratorConfig, diag: &mut TrajectoryDiagnostics) -> Result<Segment<N>, IntegrationError> {
        let step = step_from(self.field, self.t, self.q, self.v, self.dt, cfg.t_max, cfg)?;
        diag.accepted_steps += 1;
        diag.rejected_steps += u64::from(step.rejected);
        let s = step.segment;
        (self.t, self.q, self.v, self.dt) = (s.t1, s.q1, s.v1, step.dt_next);
        Ok(s)
    }

    /// Point at time `t` inside `segment`, reached by an exact sub-step from
    /// the segment start; falls back to the interpolant if that fails.
    fn point_at(&self, segment: &Segment<N>, t: f64) -> [f64; N] {
        if t == segment.t1 {
            return segment.q1;
        }
        substep(self.field, segment.t0, &segment.q0, &segment.v0, t - segment.t0)
            .unwrap_or_else(|_| segment.interpolate(t))
    }
}

/// Which screen, if any, a coordinate `x` already lies on or beyond.
fn beyond(screens: &Screens, x: f64) -> Option<Side> {
    if x <= screens.x_left {
        Some(Side::L)
    } else if x >= screens.x_right {
        Some(Side::R)
    } else {
        None
    }
}

/// First arrival of coordinate `axis` at a screen inside `segment`.
fn crossing_in<const N: usize>(
    segment: &Segment<N>,
    axis: usize,
    screens: &Screens,
    tol: f64,
) -> Result<Option<(Side, f64)>, IntegrationError> {
    let x1 = segment.q1[axis];
    let Some(side) = beyond(screens, x1) else {
        return Ok(None);
    };
    let plane = match side {
        Side::L => screens.x_left,
        Side::R => screens.x_right,
    };
    let (t, _) = locate_crossing(segment, plane, axis, tol)?;
    Ok(Some((side, t)))
}

/// A located arrival of one particle during the two-particle flow.
#[derive(Debug, Clone, Copy)]
struct Detection {
    particle: Particle,
    side: Side,
    t: f64,
    point: [f64; 4],
}

impl Detection {
    fn arrival(&self) -> Arrival {
        Arrival { side: self.side, t: self.t, y: self.point[self.particle.y_axis()] }
    }
}

fn path_push(path: &mut Option<Vec<PathSample>>, t: f64, point: [f64; 4]) {
    if let Some(path) = path {
        if path.last().map_or(true, |last| t > last.t) {
            path.push(PathSample { t, point: ConfigPoint4::from_array(point) });
        }
    }
}

/// The two-particle phase, shared by both modes up to the first arrival.
#[derive(Clone)]
struct TwoParticleRun<'a> {
    flow: Flow<'a, 4, TwoParticleState>,
    screens: Screens,
    detected: [Option<Detection>; 2],
    steps_since_sample: usize,
    stride: usize,
    path: Option<Vec<PathSample>>,
    diag: TrajectoryDiagnostics,
}

impl<'a> TwoParticleRun<'a> {
    fn new(state: &'a TwoParticleState, q0: ConfigPoint4, screens: Screens, cfg: &IntegratorConfig, stride: usize) -> Self {
        let flow = Flow { field: state, t: 0.0, q: q0.to_array(), v: [0.0; 4], dt: cfg.dt_init };
        let mut path = (stride > 0).then(Vec::new);
        path_push(&mut path, 0.0, flow.q);
        let mut run =
            Self { flow, screens, detected: [None, None], steps_since_sample: 0, stride, path, diag: Default::default() };
        // A particle starting on or beyond a screen plane is detected at once.
        for particle in [Particle::One, Particle::Two] {
            if let Some(side) = beyond(&screens, run.flow.q[particle.x_axis()]) {
                run.detected[particle.index()] = Some(Detection { particle, side, t: 0.0, point: run.flow.q });
            }
        }
        run
    }

    fn init_velocity(&mut self) -> Result<(), IntegrationError> {
        let fresh = Flow::start(self.flow.field, self.flow.t, self.flow.q, self.flow.dt)?;
        self.flow = fresh;
        Ok(())
    }

    fn detections_sorted(&self) -> Vec<Detection> {
        let mut d: Vec<Detection> = self.detected.iter().flatten().copied().collect();
        d.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.particle.index().cmp(&b.particle.index())));
        d
    }

    /// Takes one step and returns the arrivals it produced, earliest first.
    fn step(&mut self, cfg: &IntegratorConfig) -> Result<Vec<Detection>, IntegrationError> {
        let segment = self.flow.advance(cfg, &mut self.diag)?;
        let mut found = Vec::new();
        for particle in [Particle::One, Particle::Two] {
            if self.detected[particle.index()].is_some() {
                continue;
            }
            if let Some((side, t)) = crossing_in(&segment, particle.x_axis(), &self.screens, cfg.crossing_time_tol)? {
                let point = self.flow.point_at(&segment, t);
                found.push(Detection { particle, side, t, point });
            }
        }
        found.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.steps_since_sample += 1;
        if self.stride > 0 && self.steps_since_sample >= self.stride && found.is_empty() {
            self.steps_since_sample = 0;
            path_push(&mut self.path, segment.t1, segment.q1);
        }
        Ok(found)
    }

    /// Runs until the first arrival. `Ok(None)` means the horizon was hit.
    fn until_first(&mut self, cfg: &IntegratorConfig) -> Result<Option<Detection>, IntegrationError> {
        if let Some(first) = self.detections_sorted().first() {
            path_push(&mut self.path, first.t, first.point);
            return Ok(Some(*first));
        }
        self.init_velocity()?;
        while self.flow.t < cfg.t_max {
            let found = self.step(cfg)?;
            if let Some(first) = found.first() {
                for d in &found {
                    self.detected[d.particle.index()] = Some(*d);
                }
                path_push(&mut self.path, first.t, first.point);
                return Ok(Some(*first));
            }
        }
        Ok(None)
    }

    /// Continues the uncollapsed flow until both particles have arrived.
    fn finish_free(mut self, cfg: &IntegratorConfig) -> TrajectoryOutcome {
        let mut failure = None;
        if self.detected.iter().any(Option::is_none) {
            if self.flow.v == [0.0; 4] && self.flow.t == 0.0 {
                if let Err(e) = self.init_velocity() {
                    failure = Some(e.to_string());
                }
            }
            while failure.is_none() && self.detected.iter().any(Option::is_none) && self.flow.t < cfg.t_max {
                match self.step(cfg) {
                    Ok(found) => {
                        for d in found {
                            self.detected[d.particle.index()] = Some(d);
                            path_push(&mut self.path, d.t, d.point);
                        }
                    }
                    Err(e) => failure = Some(e.to_string()),
                }
            }
        }
        if self.detected.iter().all(Option::is_some) {
            // Let the recorded path end at the later arrival.
        } else {
            path_push(&mut self.path, self.flow.t, self.flow.q);
        }
        let d = self.detections_sorted();
        let mut record = DetectionRecord::classify(Mode::Free, d.first().map(Detection::arrival), d.get(1).map(Detection::arrival));
        if failure.is_some() {
            record.status = Status::Censored;
        }
        self.diag.failure = failure;
        TrajectoryOutcome { record, path: self.path, diagnostics: self.diag }
    }
}

/// Survivor phase after a collapse at `first`.
fn finish_collapse(
    state: &TwoParticleState,
    first: Detection,
    screens: &Screens,
    cfg: &IntegratorConfig,
    stride: usize,
    mut path: Option<Vec<PathSample>>,
    mut diag: TrajectoryDiagnostics,
) -> TrajectoryOutcome {
    let detected = first.particle;
    let survivor = detected.other();
    let (dx, dy) = (first.point[detected.x_axis()], first.point[detected.y_axis()]);
    let (sx, sy) = (survivor.x_axis(), survivor.y_axis());
    let start = [first.point[sx], first.point[sy]];
    let frozen = |s: [f64; 2]| {
        let mut p = [0.0; 4];
        p[detected.x_axis()] = dx;
        p[detected.y_axis()] = dy;
        p[sx] = s[0];
        p[sy] = s[1];
        p
    };
    let censored = |diag: TrajectoryDiagnostics, path, failure: String| {
        let mut record = DetectionRecord::classify(Mode::Collapse, Some(first.arrival()), None);
        record.status = Status::Censored;
        TrajectoryOutcome { record, path, diagnostics: TrajectoryDiagnostics { failure: Some(failure), ..diag } }
    };

    let conditional: OneParticleState = match state.collapse(detected, dx, dy, first.t) {
        Ok(c) => c,
        Err(e) => return censored(diag, path, e.to_string()),
    };
    if let (Ok(before), Ok(after)) = (state.velocity_array(&first.point, first.t), conditional.velocity_array(&start, first.t)) {
        let (ux, uy) = (before[sx], before[sy]);
        let mismatch = (after[0] - ux).hypot(after[1] - uy) / ux.hypot(uy);
        diag.collapse_velocity_mismatch = Some(mismatch);
    }

    let second = if let Some(side) = beyond(screens, start[0]) {
        Some(Arrival { side, t: first.t, y: start[1] })
    } else {
        let mut flow = match Flow::start(&conditional, first.t, start, cfg.dt_init) {
            Ok(f) => f,
            Err(e) => return censored(diag, path, e.to_string()),
        };
        let mut since = 0;
        let mut arrival = None;
        while arrival.is_none() && flow.t < cfg.t_max {
            let segment = match flow.advance(cfg, &mut diag) {
                Ok(s) => s,
                Err(e) => return censored(diag, path, e.to_string()),
            };
            match crossing_in(&segment, 0, screens, cfg.crossing_time_tol) {
                Ok(Some((side, t))) => {
                    let p = flow.point_at(&segment, t);
                    path_push(&mut path, t, frozen(p));
                    arrival = Some(Arrival { side, t, y: p[1] });
                }
                Ok(None) => {
                    since += 1;
                    if stride > 0 && since >= stride {
                        since = 0;
                        path_push(&mut path, segment.t1, frozen(segment.q1));
                    }
                }
                Err(e) => return censored(diag, path, e.to_string()),
            }
        }
        if arrival.is_none() {
            path_push(&mut path, flow.t, frozen(flow.q));
        }
        arrival
    };
    let record = DetectionRecord::classify(Mode::Collapse, Some(first.arrival()), second);
    TrajectoryOutcome { record, path, diagnostics: diag }
}

fn horizon_outcome(run: TwoParticleRun<'_>, mode: Mode, failure: Option<String>) -> TrajectoryOutcome {
    let mut path = run.path;
    path_push(&mut path, run.flow.t, run.flow.q);
    TrajectoryOutcome {
        record: DetectionRecord::classify(mode, None, None),
        path,
        diagnostics: TrajectoryDiagnostics { failure, ..run.diag },
    }
}

/// Integrates one trajectory from `q0` at t = 0.
///
/// `path_stride` > 0 records every `path_stride`-th accepted step plus the
/// arrival points.
pub fn run_trajectory(
    state: &TwoParticleState,
    q0: ConfigPoint4,
    screens: Screens,
    mode: Mode,
    cfg: &IntegratorConfig,
    path_stride: usize,
) -> TrajectoryOutcome {
    let mut run = TwoParticleRun::new(state, q0, screens, cfg, path_stride);
    match mode {
        Mode::Free => run.finish_free(cfg),
        Mode::Collapse => match run.until_first(cfg) {
            Ok(Some(first)) => finish_collapse(state, first, &screens, cfg, path_stride, run.path, run.diag),
            Ok(None) => horizon_outcome(run, mode, None),
            Err(e) => horizon_outcome(run, mode, Some(e.to_string())),
        },
    }
}

/// Collapse and free outcomes from the same `q0`, sharing the integration up
/// to the first arrival.
pub fn run_trajectory_pair(
    state: &TwoParticleState,
    q0: ConfigPoint4,
    screens: Screens,
    cfg: &IntegratorConfig,
    path_stride: usize,
) -> (TrajectoryOutcome, TrajectoryOutcome) {
    let mut run = TwoParticleRun::new(state, q0, screens, cfg, path_stride);
    match run.until_first(cfg) {
        Ok(Some(first)) => {
            let free = run.clone().finish_free(cfg);
            let collapse = finish_collapse(state, first, &screens, cfg, path_stride, run.path, run.diag);
            (collapse, free)
        }
        Ok(None) => (horizon_outcome(run.clone(), Mode::Collapse, None), horizon_outcome(run, Mode::Free, None)),
        Err(e) => {
            let msg = Some(e.to_string());
            (horizon_outcome(run.clone(), Mode::Collapse, msg.clone()), horizon_outcome(run, Mode::Free, msg))
        }
    }
}

/// Integrates the uncollapsed two-particle flow from `q0` at t = 0 to `t_end`
/// with no screens.
pub fn evolve_free(
    state: &TwoParticleState,
    q0: ConfigPoint4,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<ConfigPoint4, IntegrationError> {
    let cfg = IntegratorConfig { t_max: t_end, ..*cfg };
    let mut flow = Flow::start(state, 0.0, q0.to_array(), cfg.dt_init)?;
    let mut diag = TrajectoryDiagnostics::default();
    while flow.t < t_end {
        flow.advance(&cfg, &mut diag)?;
    }
    Ok(ConfigPoint4::from_array(flow.q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentParams;
    use crate::state::build_initial_state;

    fn setup() -> (ExperimentParams, TwoParticleState) {
        let p = ExperimentParams::default();
        let s = build_initial_state(&p).unwrap();
        (p, s)
    }

    #[test]
    fn term_center_reaches_left_screen_ballistically() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(p.l_x, p.l_y, -p.l_x, -p.l_y);
        let out = run_trajectory(&s, q0, Screens::new(-0.015, 0.5).unwrap(), Mode::Collapse, &p.integrator, 0);
        let first = out.record.first.unwrap();
        assert_eq!(first.side, Side::L);
        assert!((first.t - 0.1).abs() < 1e-6, "{}", first.t);
        assert_eq!(out.record.status, Status::Complete);
        let second = out.record.second.unwrap();
        assert_eq!(second.side, Side::R);
        assert!((second.t - 4.95).abs() < 1e-4, "{}", second.t);
        assert!(out.diagnostics.collapse_velocity_mismatch.unwrap() < 1e-9);
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(p.l_x + 3e-7, 2e-5, -p.l_x - 1e-7, -6e-5);
        let screens = Screens::new(-0.015, 0.5).unwrap();
        for mode in [Mode::Collapse, Mode::Free] {
            let a = run_trajectory(&s, q0, screens, mode, &p.integrator, 3);
            let b = run_trajectory(&s, q0, screens, mode, &p.integrator, 3);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pair_matches_individual_runs() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(-p.l_x + 1e-6, -4e-5, p.l_x - 5e-7, 7e-5);
        let screens = Screens::new(-0.015, 0.5).unwrap();
        let (c, f) = run_trajectory_pair(&s, q0, screens, &p.integrator, 2);
        assert_eq!(c, run_trajectory(&s, q0, screens, Mode::Collapse, &p.integrator, 2));
        assert_eq!(f, run_trajectory(&s, q0, screens, Mode::Free, &p.integrator, 2));
        assert_eq!(c.record.first, f.record.first);
    }

    #[test]
    fn particle_beyond_a_plane_is_detected_at_start() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(p.l_x, p.l_y, -p.l_x, -p.l_y);
        let screens = Screens::from_distances(0.001, 0.5).unwrap();
        let out = run_trajectory(&s, q0, screens, Mode::Collapse, &p.integrator, 0);
        let first = out.record.first.unwrap();
        assert_eq!((first.side, first.t, first.y), (Side::L, 0.0, -p.l_y));
        assert_eq!(out.record.status, Status::Complete);
    }

    #[test]
    fn horizon_censors() {
        let (p, s) = setup();
        let cfg = IntegratorConfig { t_max: 0.05, ..p.integrator };
        let q0 = ConfigPoint4::new(p.l_x, p.l_y, -p.l_x, -p.l_y);
        for mode in [Mode::Collapse, Mode::Free] {
            let out = run_trajectory(&s, q0, Screens::new(-0.015, 0.5).unwrap(), mode, &cfg, 0);
            assert_eq!(out.record.status, Status::Censored);
            assert!(out.record.first.is_none());
        }
        // Free mode keeps the first arrival when the second is cut off.
        let out = run_trajectory(&s, q0, Screens::new(-0.015, 0.5).unwrap(), Mode::Free, &IntegratorConfig { t_max: 1.0, ..cfg }, 0);
        assert_eq!(out.record.status, Status::Censored);
        assert_eq!(out.record.first.unwrap().side, Side::L);
        assert!(out.record.second.is_none());
    }

    #[test]
    fn both_particles_on_one_side_are_flagged() {
        // Both particles start beyond the right screen.
        let (p, s) = setup();
        let screens = Screens::new(-0.015, 0.001).unwrap();
        let q0 = ConfigPoint4::new(p.l_x, p.l_y, p.l_x + 1e-6, -p.l_y);
        let out = run_trajectory(&s, q0, screens, Mode::Free, &p.integrator, 0);
        assert_eq!(out.record.status, Status::AnomalousSameSide);
        assert!(out.record.arrival_on(Side::R).is_none());
    }

    #[test]
    fn paths_agree_until_collapse() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(p.l_x - 4e-7, 3e-5, -p.l_x + 2e-7, -2e-5);
        let (c, f) = run_trajectory_pair(&s, q0, Screens::new(-0.015, 0.5).unwrap(), &p.integrator, 1);
        let t_c = c.record.first.unwrap().t;
        let (cp, fp) = (c.path.unwrap(), f.path.unwrap());
        for w in cp.windows(2).chain(fp.windows(2)) {
            assert!(w[1].t > w[0].t);
        }
        let before: Vec<_> = cp.iter().filter(|s| s.t <= t_c).collect();
        assert!(before.len() > 5);
        for (a, b) in before.iter().zip(fp.iter()) {
            assert_eq!(a, &b);
        }
        // After collapse the detected particle is frozen.
        let detected = cp.iter().filter(|s| s.t > t_c).map(|s| (s.point.x2, s.point.y2)).collect::<Vec<_>>();
        assert!(detected.windows(2).all(|w| w[0] == w[1]));
        assert!(cp.iter().filter(|s| s.t > t_c).zip(fp.iter().filter(|s| s.t > t_c)).any(|(a, b)| a.point != b.point));
    }

    #[test]
    fn evolve_free_lands_on_requested_time() {
        let (p, s) = setup();
        let q0 = ConfigPoint4::new(p.l_x, p.l_y, -p.l_x, -p.l_y);
        let q = evolve_free(&s, q0, 0.2, &p.integrator).unwrap();
        assert!((q.x1 - (p.l_x + 0.02)).abs() < 1e-9);
        assert!((q.x2 + (p.l_x + 0.02)).abs() < 1e-9);
    }
}
