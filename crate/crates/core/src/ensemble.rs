//! Ensemble execution over trajectory indices and the record file format.
//!
//! Sample `i` is drawn from its own random stream and integrated on its own,
//! so the ordered record list does not depend on how indices are spread over
//! workers.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::config::{ExperimentParams, Mode, RunMode};
use crate::dynamics::{run_trajectory, run_trajectory_pair, Arrival, DetectionRecord, PathSample, Side, Status, TrajectoryOutcome};
use crate::error::{Error, RecordError};
use crate::sampling::Sampler;
use crate::state::{build_initial_state, ConfigPoint4, TwoParticleState};

/// Largest censored fraction tolerated for the default parameters.
pub const CENSORED_LIMIT: f64 = 1e-3;

/// Column order of the record file.
pub const RECORD_HEADER: &str =
    "# trajectory_index\tmode\tstatus\tfirst_side\tfirst_t\tfirst_y\tsecond_side\tsecond_t\tsecond_y";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Runs on a dedicated pool of `workers` threads. Without the `parallel`
    /// feature this behaves like [`Execution::Sequential`].
    Parallel { workers: usize },
}

impl Execution {
    pub fn workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }
}

/// Status tallies for one mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusCounts {
    pub complete: usize,
    pub censored: usize,
    pub anomalous_same_side: usize,
}

impl StatusCounts {
    fn add(&mut self, status: Status) {
        match status {
            Status::Complete => self.complete += 1,
            Status::Censored => self.censored += 1,
            Status::AnomalousSameSide => self.anomalous_same_side += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.complete + self.censored + self.anomalous_same_side
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub params: ExperimentParams,
    pub seed: u64,
    /// One entry per simulated mode; each sums to `n_trajectories`.
    pub counts: Vec<(Mode, StatusCounts)>,
    pub proposals: u64,
    pub acceptance_rate: f64,
    pub integration_failures: usize,
    pub max_collapse_velocity_mismatch: f64,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn censored_fraction(&self) -> f64 {
        self.counts.iter().map(|(_, c)| c.censored_fraction()).fold(0.0, f64::max)
    }

    pub fn censoring_within_limit(&self) -> bool {
        self.censored_fraction() < CENSORED_LIMIT
    }

    /// Report document in the configuration file's notation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_trajectories = {}", self.params.n_trajectories);
        let _ = writeln!(s, "proposals = {}", self.proposals);
        let _ = writeln!(s, "acceptance_rate = {:.16e}", self.acceptance_rate);
        let _ = writeln!(s, "integration_failures = {}", self.integration_failures);
        let _ = writeln!(s, "max_collapse_velocity_mismatch = {:.16e}", self.max_collapse_velocity_mismatch);
        let _ = writeln!(s, "censored_fraction = {:.16e}", self.censored_fraction());
        let _ = writeln!(s, "censoring_within_limit = {}", self.censoring_within_limit());
        let _ = writeln!(s, "wall_time_s = {:.6}", self.wall_time_s);
        for (mode, c) in &self.counts {
            let _ = writeln!(s, "\n[counts.{mode}]");
            let _ = writeln!(s, "complete = {}", c.complete);
            let _ = writeln!(s, "censored = {}", c.censored);
            let _ = writeln!(s, "anomalous_same_side = {}", c.anomalous_same_side);
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.params.to_toml_string().replace("\n[", "\n[config."));
        s
    }
}

/// A recorded path with the trajectory it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedPath {
    pub trajectory_index: u64,
    pub mode: Mode,
    pub samples: Vec<PathSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub records: Vec<DetectionRecord>,
    pub paths: Vec<RecordedPath>,
    pub report: RunReport,
}

struct Job {
    proposals: u64,
    outcomes: Vec<(Mode, TrajectoryOutcome)>,
}

fn simulate_point(state: &TwoParticleState, params: &ExperimentParams, q0: ConfigPoint4) -> Vec<(Mode, TrajectoryOutcome)> {
    let stride = params.path_record_stride;
    let cfg = &params.integrator;
    match params.mode {
        RunMode::Both => {
            let (c, f) = run_trajectory_pair(state, q0, params.screens, cfg, stride);
            vec![(Mode::Collapse, c), (Mode::Free, f)]
        }
        RunMode::Collapse | RunMode::Free => {
            let mode = params.mode.modes()[0];
            vec![(mode, run_trajectory(state, q0, params.screens, mode, cfg, stride))]
        }
    }
}

fn map_indices<T: Send>(n: usize, execution: Execution, f: impl Fn(u64) -> T + Sync + Send) -> Result<Vec<T>, Error> {
    match execution {
        Execution::Sequential => Ok((0..n as u64).map(f).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            Ok(pool.install(|| (0..n as u64).into_par_iter().map(f).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => Ok((0..n as u64).map(f).collect()),
    }
}

pub fn run_ensemble(params: &ExperimentParams) -> Result<EnsembleOutput, Error> {
    run_ensemble_with(params, Execution::Sequential)
}

/// Samples `n_trajectories` initial points and integrates each in the
/// configured mode(s). Records come back sorted by index, collapse before
/// free within an index.
pub fn run_ensemble_with(params: &ExperimentParams, execution: Execution) -> Result<EnsembleOutput, Error> {
    params.validate()?;
    let started = Instant::now();
    let state = build_initial_state(params)?;
    let sampler = Sampler::new(&state, params.sampler)?;
    let jobs = map_indices(params.n_trajectories, execution, |i| -> Result<Job, Error> {
        let draw = sampler.draw(i)?;
        Ok(Job { proposals: draw.proposals, outcomes: simulate_point(&state, params, draw.point) })
    })?;
    let jobs = jobs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let proposals: u64 = jobs.iter().map(|j| j.proposals).sum();
    Ok(assemble(params, jobs, proposals, started))
}

/// Integrates the given initial points in the configured mode(s); record
/// `i` belongs to `points[i]`.
pub fn run_points(params: &ExperimentParams, points: &[ConfigPoint4], execution: Execution) -> Result<EnsembleOutput, Error> {
    params.validate()?;
    let started = Instant::now();
    let state = build_initial_state(params)?;
    let jobs = map_indices(points.len(), execution, |i| Job {
        proposals: 1,
        outcomes: simulate_point(&state, params, points[i as usize]),
    })?;
    let params = ExperimentParams { n_trajectories: points.len(), ..params.clone() };
    Ok(assemble(&params, jobs, points.len() as u64, started))
}

fn assemble(params: &ExperimentParams, jobs: Vec<Job>, proposals: u64, started: Instant) -> EnsembleOutput {
    let mut counts: Vec<(Mode, StatusCounts)> = params.mode.modes().iter().map(|m| (*m, StatusCounts::default())).collect();
    let mut records = Vec::with_capacity(jobs.len() * counts.len());
    let mut paths = Vec::new();
    let mut failures = 0;
    let mut mismatch = 0.0f64;
    for (i, job) in jobs.into_iter().enumerate() {
        for (mode, outcome) in job.outcomes {
            let mut record = outcome.record;
            record.trajectory_index = i as u64;
            if let Some((_, c)) = counts.iter_mut().find(|(m, _)| *m == mode) {
                c.add(record.status);
            }
            failures += outcome.diagnostics.failure.is_some() as usize;
            if let Some(m) = outcome.diagnostics.collapse_velocity_mismatch {
                mismatch = mismatch.max(m);
            }
            if let Some(samples) = outcome.path {
                paths.push(RecordedPath { trajectory_index: i as u64, mode, samples });
            }
            records.push(record);
        }
    }
    let n = params.n_trajectories;
    let report = RunReport {
        params: params.clone(),
        seed: params.sampler.seed,
        counts,
        proposals,
        acceptance_rate: n as f64 / proposals.max(1) as f64,
        integration_failures: failures,
        max_collapse_velocity_mismatch: mismatch,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    EnsembleOutput { records, paths, report }
}

fn write_arrival(out: &mut String, a: Option<Arrival>) {
    match a {
        Some(a) => {
            let _ = write!(out, "\t{}\t{:.16e}\t{:.16e}", a.side, a.t, a.y);
        }
        None => out.push_str("\t-\t-\t-"),
    }
}

/// One tab-separated line per record, columns as in [`RECORD_HEADER`].
/// Floats carry 17 significant digits; a missing arrival is `-` in all three
/// of its columns.
pub fn format_record(r: &DetectionRecord) -> String {
    let mut line = format!("{}\t{}\t{}", r.trajectory_index, r.mode, r.status);
    write_arrival(&mut line, r.first);
    write_arrival(&mut line, r.second);
    line
}

pub fn write_records_to<W: Write>(records: &[DetectionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()
}

pub fn write_records(records: &[DetectionRecord], path: &Path) -> Result<(), RecordError> {
    Ok(write_records_to(records, BufWriter::new(File::create(path)?))?)
}

fn parse_arrival(fields: &[&str]) -> Result<Option<Arrival>, String> {
    match fields {
        ["-", "-", "-"] => Ok(None),
        [side, t, y] => Ok(Some(Arrival {
            side: side.parse::<Side>().map_err(|e| e.to_string())?,
            t: t.parse().map_err(|_| format!("bad time '{t}'"))?,
            y: y.parse().map_err(|_| format!("bad position '{y}'"))?,
        })),
        _ => Err("arrival needs three fields".into()),
    }
}

pub fn parse_record(line: &str) -> Result<DetectionRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 9 {
        return Err(format!("expected 9 fields, found {}", fields.len()));
    }
    Ok(DetectionRecord {
        trajectory_index: fields[0].parse().map_err(|_| format!("bad index '{}'", fields[0]))?,
        mode: fields[1].parse::<Mode>().map_err(|e| e.to_string())?,
        status: fields[2].parse::<Status>().map_err(|e| e.to_string())?,
        first: parse_arrival(&fields[3..6])?,
        second: parse_arrival(&fields[6..9])?,
    })
}

/// Reads records, skipping blank lines and `#` comments.
pub fn read_records_from<R: BufRead>(input: R) -> Result<Vec<DetectionRecord>, RecordError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        records.push(parse_record(trimmed).map_err(|message| RecordError::Parse { line: i + 1, message })?);
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<DetectionRecord>, RecordError> {
    read_records_from(BufReader::new(File::open(path)?))
}

/// Path file: `t x1 y1 x2 y2` per line, tab-separated.
pub fn write_path_to<W: Write>(samples: &[PathSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# t\tx1\ty1\tx2\ty2")?;
    for s in samples {
        let p = s.point;
        writeln!(out, "{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}", s.t, p.x1, p.y1, p.x2, p.y2)?;
    }
    out.flush()
}
