//! Command-line front end: `simulate`, `sweep`, `trajectories` and
//! `sample-check`.
//!
//! Exit codes are 0 on success, 1 for usage or configuration problems and 2
//! for runtime failures.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentParams, Mode, RunMode, SamplerMode, SamplerSpec, Screens};
use crate::dynamics::{run_trajectory_pair, DetectionRecord, Side};
use crate::ensemble::{run_ensemble_with, write_path_to, write_records, EnsembleOutput, Execution};
use crate::error::{ConfigError, Error};
use crate::sampling::Sampler;
use crate::state::build_initial_state;
use crate::stats::{chi_square_gof, histogram2d, histogram_with_edges, marginal_compare, select, Binning, Observable};

/// Censored fraction above which a run counts as failed.
pub const RUNTIME_CENSORED_LIMIT: f64 = 0.05;
/// Smallest acceptable p-value in `sample-check`.
pub const SAMPLE_CHECK_ALPHA: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "ddslit", version, about = "Bohmian Monte Carlo for the entangled double-double-slit setup")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one ensemble and write records, a report and histograms.
    Simulate(SimulateArgs),
    /// Run one ensemble per left-screen distance and compare right marginals.
    Sweep(SweepArgs),
    /// Write paired collapse/free paths from shared initial points.
    Trajectories(TrajectoriesArgs),
    /// Check sampled initial points against the analytic marginals.
    SampleCheck(SampleCheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with experiment parameters; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trajectories (or samples).
    #[arg(long)]
    pub n: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub mode: Option<RunMode>,
    /// Right screen plane position in meters.
    #[arg(long, allow_hyphen_values = true)]
    pub x_right: Option<f64>,
    #[arg(long)]
    pub sampler: Option<SamplerMode>,
    /// Histogram bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Distance of the left screen from the origin; the sign is ignored and
    /// the plane sits at minus this distance.
    #[arg(long, allow_hyphen_values = true)]
    pub x_left: Option<f64>,
    /// Record every n-th integration step of each trajectory under paths/.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated left-screen distances.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub x_left: Vec<f64>,
    /// Use a different seed for every placement instead of sharing one.
    #[arg(long)]
    pub reseed: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrajectoriesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x_left: Option<f64>,
    /// Number of collapse/free pairs.
    #[arg(long, default_value_t = 10)]
    pub paths: usize,
    /// Record every n-th integration step.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(failure) => {
            match &failure {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
            }
            failure.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CmdResult {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Trajectories(a) => trajectories(a),
        Command::SampleCheck(a) => sample_check(a),
    }
}

fn left_plane(distance: f64) -> f64 {
    -distance.abs()
}

/// Base parameters from `--config` plus the common overrides.
fn load_params(common: &CommonArgs, x_left: Option<f64>) -> Result<ExperimentParams, Failure> {
    let mut p = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config file {}: {e}", path.display())))?;
            ExperimentParams::from_toml_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentParams::default(),
    };
    if let Some(seed) = common.seed {
        p.sampler.seed = seed;
    }
    if let Some(n) = common.n {
        p.n_trajectories = n;
    }
    if let Some(mode) = common.mode {
        p.mode = mode;
    }
    if let Some(mode) = common.sampler {
        let seed = p.sampler.seed;
        p.sampler = match mode {
            SamplerMode::Equilibrium => SamplerSpec::equilibrium(seed),
            SamplerMode::Narrowed => SamplerSpec::narrowed(seed),
        };
    }
    let left = x_left.map_or(p.screens.x_left, left_plane);
    p.screens = Screens::new(left, common.x_right.unwrap_or(p.screens.x_right))?;
    if common.workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    if common.bins == Some(0) {
        return Err(Failure::Usage("--bins must be at least 1".into()));
    }
    p.validate()?;
    Ok(p)
}

fn out_dir(common: &CommonArgs) -> Result<&Path, Failure> {
    fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Runtime(format!("cannot create output directory {}: {e}", common.out.display())))?;
    Ok(&common.out)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn run_checked(params: &ExperimentParams, workers: usize) -> Result<EnsembleOutput, Failure> {
    let out = run_ensemble_with(params, Execution::workers(workers))?;
    let censored = out.report.censored_fraction();
    if censored > RUNTIME_CENSORED_LIMIT {
        return Err(Failure::Runtime(format!("{:.2}% of trajectories were censored", 100.0 * censored)));
    }
    Ok(out)
}

fn save_records(records: &[DetectionRecord], path: &Path) -> CmdResult {
    write_records(records, path).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn of_mode(records: &[DetectionRecord], mode: Mode) -> Vec<DetectionRecord> {
    records.iter().filter(|r| r.mode == mode).copied().collect()
}

fn write_histograms(dir: &Path, records: &[DetectionRecord], params: &ExperimentParams, bins: Option<usize>) -> CmdResult {
    let y_bins = Binning { bins: bins.unwrap_or(Binning::SCREEN_Y.bins), ..Binning::SCREEN_Y };
    let t_base = Binning::arrival_time(params.integrator.t_max);
    let t_bins = Binning { bins: bins.unwrap_or(t_base.bins), ..t_base };
    for &mode in params.mode.modes() {
        let recs = of_mode(records, mode);
        for side in [Side::L, Side::R] {
            for (observable, binning) in [(Observable::Y, y_bins), (Observable::T, t_bins)] {
                let values = select(&recs, side, observable);
                let hist = histogram_with_edges(&values, &binning.edges().map_err(Error::from)?).map_err(Error::from)?;
                let name = format!("hist_{mode}_{}_{side}.csv", observable.as_str());
                hist.write_csv(create(&dir.join(name))?, &format!("{} on {side} screen, {mode} mode", observable.as_str()))?;
            }
        }
        let joint: Vec<(f64, f64)> = recs
            .iter()
            .filter_map(|r| Some((r.arrival_on(Side::L)?.y, r.arrival_on(Side::R)?.y)))
            .collect();
        let edges = y_bins.edges().map_err(Error::from)?;
        let hist = histogram2d(&joint, &edges, &edges).map_err(Error::from)?;
        hist.write_csv(create(&dir.join(format!("hist_{mode}_joint_y.csv")))?, &format!("y_L x y_R, {mode} mode"))?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let mut params = load_params(&a.common, a.x_left)?;
    if let Some(stride) = a.stride {
        params.path_record_stride = stride;
    }
    let dir = out_dir(&a.common)?;
    let out = run_checked(&params, a.common.workers)?;
    save_records(&out.records, &dir.join("records.txt"))?;
    create(&dir.join("report.txt"))?.write_all(out.report.to_text().as_bytes())?;
    write_histograms(dir, &out.records, &params, a.common.bins)?;
    if !out.paths.is_empty() {
        let paths = dir.join("paths");
        fs::create_dir_all(&paths)?;
        for p in &out.paths {
            write_path_to(&p.samples, create(&paths.join(format!("path_{:06}_{}.txt", p.trajectory_index, p.mode)))?)?;
        }
    }
    println!(
        "{} records written to {} ({:.1}% censored)",
        out.records.len(),
        dir.display(),
        100.0 * out.report.censored_fraction()
    );
    Ok(())
}

/// Placement label used in file names.
fn placement_label(distance: f64) -> String {
    format!("{}", distance.abs())
}

fn sweep(a: &SweepArgs) -> CmdResult {
    let base = load_params(&a.common, None)?;
    let dir = out_dir(&a.common)?;
    // Right-marginal comparisons use the collapse records whenever collapse
    // is simulated.
    let compare_mode = if base.mode == RunMode::Free { Mode::Free } else { Mode::Collapse };
    let mut runs = Vec::new();
    for (k, &distance) in a.x_left.iter().enumerate() {
        let mut params = base.clone();
        params.screens = Screens::new(left_plane(distance), base.screens.x_right)?;
        if a.reseed {
            params.sampler.seed = base.sampler.seed.wrapping_add(k as u64);
        }
        let out = run_checked(&params, a.common.workers)?;
        let label = placement_label(distance);
        save_records(&out.records, &dir.join(format!("records_xl_{label}.txt")))?;
        create(&dir.join(format!("report_xl_{label}.txt")))?.write_all(out.report.to_text().as_bytes())?;
        runs.push((label, of_mode(&out.records, compare_mode)));
    }
    let binning = Binning { bins: a.common.bins.unwrap_or(Binning::SCREEN_Y.bins), ..Binning::SCREEN_Y };
    let mut text = String::new();
    let mut all_keep = true;
    let mut any_reject = false;
    let mut sections = String::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let c = marginal_compare(&runs[i].1, &runs[j].1, Side::R, Observable::Y, binning).map_err(Error::from)?;
            all_keep &= !c.ks.rejects(0.01);
            any_reject |= c.ks.rejects(0.001);
            sections.push_str(&format!("\n[[comparison]]\n{}", c.report(&runs[i].0, &runs[j].0)));
        }
    }
    text.push_str(&format!("mode = \"{compare_mode}\"\n"));
    text.push_str(&format!("sampler = \"{}\"\n", base.sampler.mode));
    text.push_str(&format!("reseed = {}\n", a.reseed));
    text.push_str(&format!("all_non_rejecting_at_0_01 = {all_keep}\n"));
    text.push_str(&format!("any_rejecting_at_0_001 = {any_reject}\n"));
    text.push_str(&sections);
    create(&dir.join("signal_locality.txt"))?.write_all(text.as_bytes())?;
    println!("{} placements written to {}", runs.len(), dir.display());
    Ok(())
}

fn trajectories(a: &TrajectoriesArgs) -> CmdResult {
    if a.stride == 0 {
        return Err(Failure::Usage("--stride must be at least 1".into()));
    }
    let params = load_params(&a.common, a.x_left)?;
    let dir = out_dir(&a.common)?;
    let state = build_initial_state(&params).map_err(Error::from)?;
    let sampler = Sampler::new(&state, params.sampler).map_err(Error::from)?;
    for i in 0..a.paths as u64 {
        let q0 = sampler.draw(i).map_err(Error::from)?.point;
        let (collapse, free) = run_trajectory_pair(&state, q0, params.screens, &params.integrator, a.stride);
        for (mode, outcome) in [(Mode::Collapse, collapse), (Mode::Free, free)] {
            let samples = outcome.path.unwrap_or_default();
            write_path_to(&samples, create(&dir.join(format!("path_{i:03}_{mode}.txt")))?)?;
        }
    }
    println!("{} path pairs written to {}", a.paths, dir.display());
    Ok(())
}

fn sample_check(a: &SampleCheckArgs) -> CmdResult {
    let mut params = load_params(&a.common, None)?;
    if a.common.n.is_none() {
        params.n_trajectories = 100_000;
    }
    if params.sampler.mode != SamplerMode::Equilibrium {
        return Err(Failure::Usage("sample-check needs the equilibrium sampler".into()));
    }
    let dir = out_dir(&a.common)?;
    let state = build_initial_state(&params).map_err(Error::from)?;
    let sampler = Sampler::new(&state, params.sampler).map_err(Error::from)?;
    let draws = (0..params.n_trajectories as u64).map(|i| sampler.draw(i)).collect::<Result<Vec<_>, _>>().map_err(Error::from)?;
    let proposals: u64 = draws.iter().map(|d| d.proposals).sum();
    let bins = a.common.bins.unwrap_or(50);
    let mut text = format!(
        "n = {}\nseed = {}\nbins = {bins}\nacceptance_rate = {:.16e}\n",
        draws.len(),
        params.sampler.seed,
        draws.len() as f64 / proposals as f64
    );
    let mut worst: f64 = 1.0;
    for (axis, name) in ["x1", "y1", "x2", "y2"].into_iter().enumerate() {
        let table = state.marginal_table(axis, 0.0);
        let edges = table.equiprobable_edges(bins);
        let values: Vec<f64> = draws.iter().map(|d| d.point.to_array()[axis]).collect();
        let hist = histogram_with_edges(&values, &edges).map_err(Error::from)?;
        let chi = chi_square_gof(&hist, &table.bin_probabilities(&edges)).map_err(Error::from)?;
        worst = worst.min(chi.p_value);
        text.push_str(&format!(
            "\n[{name}]\nstatistic = {:.16e}\ndof = {}\np_value = {:.16e}\n",
            chi.statistic, chi.dof, chi.p_value
        ));
    }
    create(&dir.join("sample_check.txt"))?.write_all(text.as_bytes())?;
    println!("smallest per-axis p-value {worst:.3e}");
    if worst < SAMPLE_CHECK_ALPHA {
        return Err(Failure::Runtime(format!("per-axis chi-square p-value {worst:.3e} below {SAMPLE_CHECK_ALPHA}")));
    }
    Ok(())
}
