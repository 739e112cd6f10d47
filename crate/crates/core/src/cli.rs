//! The `ecs-motion` command line.
//!
//! Every command resolves its parameters as defaults, then the `--config`
//! TOML file, then flags. Tables go to `--out` (atomically) or stdout, as CSV
//! or as a TOML document. Failures print one JSON record to stderr and exit
//! with 2 (invalid input) or 3 (numerical failure).

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ecs_distribution_with, ecs_parity_closed_form, recommended_n_max, single_mode_cat_distribution,
    spin_up_probability, trajectory, CaseNormalization, EcsState, ModeLabel, ModeParams, SdfDrive, NOMINAL_ETA_X,
    NOMINAL_ETA_Y, NOMINAL_SECULAR,
};
use crate::error::{Error, Result};
use crate::estimation::{
    bsb_model, fit_bsb_trace, fit_parity_curve, mean_phonon_curve, parity_model, BsbFitConfig, FitReport, ParityFitConfig,
    ParityParams,
};
use crate::expdata::{self, NoiseModel, PublishedSequence, RNG_ALGORITHM};
use crate::fock::{displacement_element, TruncationSpec};
use crate::ms::{self, ChainModeSet, MsDrive};
use crate::oracle::{self, MsOracleSetup, PropagationSpec, SimState};

pub const RUN_CONFIG_SCHEMA: &str = "ecs-motion/run-config/1";
const KHZ: f64 = 2.0 * PI * 1e3;
const US: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "ecs-motion", version, about = "Two-mode spin-motion dynamics of trapped ions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Phase-space trajectories alpha(t), beta(t) and mean phonon numbers.
    Trajectory(CommonArgs),
    /// Spin-up probability after the two-mode drive.
    Spin(CommonArgs),
    /// Y-mode phonon distribution of the heralded entangled coherent state.
    Ecs(CommonArgs),
    /// Phonon distribution of a single-mode even cat with the Y amplitude.
    Cat(CommonArgs),
    /// Two-ion gate populations over time.
    Ms(CommonArgs),
    /// Parity fringe of the simulated two-ion gate output.
    ParityScan(CommonArgs),
    /// Synthetic blue-sideband trace of the heralded state.
    Synth(CommonArgs),
    /// Fit a blue-sideband trace (--input, CSV).
    FitBsb(CommonArgs),
    /// Fit parity against SDF duration (--input, CSV with t_us,parity,error).
    FitParity(CommonArgs),
    /// Compare the closed forms with the numerical propagator.
    OracleCheck(CommonArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Structured,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input file for the fit commands.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detuning ratio: delta_X/delta_Y (one ion) or d_Xcm/d_Ytilt (two ions).
    #[arg(long, allow_hyphen_values = true)]
    pub ratio: Option<f64>,
    /// Radial mode splitting in kHz.
    #[arg(long)]
    pub splitting_khz: Option<f64>,
    /// Drive Rabi frequency in kHz.
    #[arg(long)]
    pub omega_khz: Option<f64>,
    /// Lamb-Dicke factor of the X mode.
    #[arg(long)]
    pub eta_x: Option<f64>,
    /// Lamb-Dicke factor of the Y mode.
    #[arg(long)]
    pub eta_y: Option<f64>,
    /// SDF duration in microseconds.
    #[arg(long)]
    pub tsdf_us: Option<f64>,
    /// Fock cutoff (distribution length minus one, or oracle dimension minus one).
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Shots per synthetic point.
    #[arg(long)]
    pub shots: Option<u32>,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// End of the time grid in microseconds.
    #[arg(long)]
    pub t_max_us: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Skip the two-ion propagation in oracle-check.
    #[arg(long)]
    pub quick: bool,
    /// Make synth write a parity-vs-duration curve instead of a sideband trace.
    #[arg(long)]
    pub parity: bool,
}

/// TOML run configuration. Every field is optional; flags use the same names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<String>,
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
    pub splitting_khz: Option<f64>,
    pub omega_khz: Option<f64>,
    pub eta_x: Option<f64>,
    pub eta_y: Option<f64>,
    pub tsdf_us: Option<f64>,
    pub nmax: Option<usize>,
    pub shots: Option<u32>,
    pub format: Option<Format>,
    pub t_max_us: Option<f64>,
    pub points: Option<usize>,
    pub p_x1: Option<f64>,
    pub p_y1: Option<f64>,
    pub nbar_x: Option<f64>,
    pub nbar_y: Option<f64>,
    pub tau_us: Option<f64>,
    pub eps_up: Option<f64>,
    pub eps_down: Option<f64>,
    pub parity_sigma: Option<f64>,
    pub normalization: Option<CaseNormalization>,
    pub gate_time_us: Option<f64>,
    pub ms_modes: Option<usize>,
    pub ms_budget: Option<usize>,
    pub bsb_fit: Option<BsbFitConfig>,
    pub parity_fit: Option<ParityFitConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = expdata::read_toml(path)?;
        if let Some(s) = &cfg.schema {
            expdata::check_schema(s, RUN_CONFIG_SCHEMA)?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Sdf,
    Ms,
}

/// Fully resolved parameters in internal units.
#[derive(Clone, Debug)]
struct Params {
    seed: u64,
    ratio: f64,
    splitting: f64,
    omega: Option<f64>,
    eta_x: f64,
    eta_y: f64,
    tsdf: f64,
    nmax: Option<usize>,
    shots: u32,
    format: Format,
    t_max: f64,
    points: usize,
    p_x1: f64,
    p_y1: f64,
    nbar_x: f64,
    nbar_y: f64,
    tau: f64,
    eps_up: f64,
    eps_down: f64,
    parity_sigma: f64,
    normalization: CaseNormalization,
    gate_time: f64,
    ms_modes: usize,
    ms_budget: usize,
    bsb_fit: BsbFitConfig,
    parity_fit: Option<ParityFitConfig>,
}

fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn resolve(args: &CommonArgs, family: Family) -> Result<Params> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (ratio, t_max_us, points) = match family {
        Family::Sdf => (-2.0 / 3.0, 200.0, 401),
        Family::Ms => (ms::NOMINAL_MS_RATIO, ms::NOMINAL_GATE_TIME / US, 183),
    };
    let gate_time = cfg.gate_time_us.unwrap_or(ms::NOMINAL_GATE_TIME / US) * US;
    let p = Params {
        seed: pick(args.seed, cfg.seed, 0),
        ratio: pick(args.ratio, cfg.ratio, ratio),
        splitting: pick(args.splitting_khz, cfg.splitting_khz, 27.8) * KHZ,
        omega: args.omega_khz.or(cfg.omega_khz).map(|v| v * KHZ),
        eta_x: pick(args.eta_x, cfg.eta_x, NOMINAL_ETA_X),
        eta_y: pick(args.eta_y, cfg.eta_y, NOMINAL_ETA_Y),
        tsdf: pick(args.tsdf_us, cfg.tsdf_us, 30.0) * US,
        nmax: args.nmax.or(cfg.nmax),
        shots: pick(args.shots, cfg.shots, expdata::DEFAULT_SHOTS),
        format: pick(args.format, cfg.format, Format::Csv),
        t_max: pick(args.t_max_us, cfg.t_max_us, if family == Family::Ms { gate_time / US } else { t_max_us }) * US,
        points: pick(args.points, cfg.points, points),
        p_x1: cfg.p_x1.unwrap_or(0.0),
        p_y1: cfg.p_y1.unwrap_or(0.0),
        nbar_x: cfg.nbar_x.unwrap_or(0.0),
        nbar_y: cfg.nbar_y.unwrap_or(0.0),
        tau: cfg.tau_us.map_or(f64::INFINITY, |v| v * US),
        eps_up: cfg.eps_up.unwrap_or(expdata::DEFAULT_EPS_UP),
        eps_down: cfg.eps_down.unwrap_or(0.0),
        parity_sigma: cfg.parity_sigma.unwrap_or(0.05),
        normalization: cfg.normalization.unwrap_or_default(),
        gate_time,
        ms_modes: cfg.ms_modes.unwrap_or(4),
        ms_budget: cfg.ms_budget.unwrap_or(1 << 20),
        bsb_fit: cfg.bsb_fit.unwrap_or_default(),
        parity_fit: cfg.parity_fit,
    };
    if p.points < 2 {
        return Err(Error::InvalidInput("points must be at least 2".into()));
    }
    if !(p.t_max > 0.0) || !(p.tsdf >= 0.0) || !(p.gate_time > 0.0) {
        return Err(Error::InvalidInput("times must be positive".into()));
    }
    if !(p.splitting > 0.0) || p.omega.is_some_and(|o| !(o >= 0.0)) {
        return Err(Error::InvalidInput("frequencies must be positive".into()));
    }
    if !(1..=4).contains(&p.ms_modes) {
        return Err(Error::InvalidInput("ms_modes must be between 1 and 4".into()));
    }
    if p.shots == 0 {
        return Err(Error::InvalidInput("shots must be positive".into()));
    }
    Ok(p)
}

impl Params {
    fn grid(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.t_max * i as f64 / (self.points - 1) as f64).collect()
    }

    fn modes(&self) -> Result<(ModeParams, ModeParams)> {
        Ok((
            ModeParams::new(ModeLabel::X, NOMINAL_SECULAR, self.eta_x, self.nbar_x, self.p_x1)?,
            ModeParams::new(ModeLabel::Y, NOMINAL_SECULAR + self.splitting, self.eta_y, self.nbar_y, self.p_y1)?,
        ))
    }

    fn sdf_drive(&self) -> Result<SdfDrive> {
        Ok(SdfDrive::from_ratio(self.omega.unwrap_or(default_sdf_rabi(self.ratio)), self.ratio, self.splitting)?
            .with_tau(self.tau))
    }

    fn ms_gate(&self) -> Result<(ChainModeSet, MsDrive)> {
        let set = ChainModeSet::from_cm(
            NOMINAL_SECULAR,
            NOMINAL_SECULAR + self.splitting,
            ms::NOMINAL_AXIAL,
            self.eta_x,
            self.eta_y,
        )?;
        let center = ms::center_for_ratio(&set, self.ratio)?;
        let omega = match self.omega {
            Some(o) => o,
            None => ms::required_rabi(&set, center, self.gate_time, ms::BELL_PHASE)?,
        };
        Ok((set, MsDrive::new(omega, center, self.gate_time)?))
    }
}

/// Fitted drive strengths for the two recorded data sets. The smaller one is
/// tabulated under R=-1/2 but belongs to the R=-2 data (reciprocal ratio).
fn default_sdf_rabi(ratio: f64) -> f64 {
    if (ratio + 2.0).abs() < 1e-9 || (ratio + 0.5).abs() < 1e-9 { 167.683 * KHZ } else { 212.6 * KHZ }
}

/// A column table plus scalar header values.
struct Table {
    kind: &'static str,
    header: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(kind: &'static str, columns: Vec<&'static str>) -> Self {
        Self { kind, header: Vec::new(), columns, rows: Vec::new() }
    }

    fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => {
                let mut out = String::new();
                for (k, v) in &self.header {
                    out.push_str(&format!("# {k}={v}\n"));
                }
                out.push_str(&self.columns.join(","));
                out.push('\n');
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                Ok(out)
            }
            Format::Structured => {
                let mut doc = toml::Table::new();
                doc.insert("schema".into(), format!("ecs-motion/{}/1", self.kind).into());
                let mut meta = toml::Table::new();
                for (k, v) in &self.header {
                    meta.insert(k.clone(), v.clone().into());
                }
                doc.insert("metadata".into(), meta.into());
                let mut cols = toml::Table::new();
                for (j, name) in self.columns.iter().enumerate() {
                    let values: Vec<toml::Value> = self.rows.iter().map(|r| r[j].into()).collect();
                    cols.insert(name.to_string(), values.into());
                }
                doc.insert("columns".into(), cols.into());
                toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
            }
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => expdata::atomic_write(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_trajectory(p: &Params) -> Result<Table> {
    let drive = p.sdf_drive()?;
    let (mx, my) = p.modes()?;
    let grid = p.grid();
    let nbar = mean_phonon_curve(&drive, (&mx, &my), &grid)?;
    let mut t = Table::new("trajectory", vec!["t_us", "alpha_re", "alpha_im", "beta_re", "beta_im", "nbar_x", "nbar_y"])
        .meta("ratio", p.ratio)
        .meta("omega_khz", drive.omega / KHZ)
        .meta("delta_x_khz", drive.delta_x / KHZ)
        .meta("delta_y_khz", drive.delta_y / KHZ);
    for (time, ny, nx) in nbar {
        let a = trajectory(&drive, &mx, time)?;
        let b = trajectory(&drive, &my, time)?;
        t.rows.push(vec![time / US, a.re, a.im, b.re, b.im, nx, ny]);
    }
    Ok(t)
}

fn cmd_spin(p: &Params) -> Result<Table> {
    let drive = p.sdf_drive()?;
    let (mx, my) = p.modes()?;
    let mut t = Table::new("spin", vec!["t_us", "p_up"]).meta("ratio", p.ratio).meta("omega_khz", drive.omega / KHZ);
    for time in p.grid() {
        t.rows.push(vec![time / US, spin_up_probability(&drive, (&mx, &my), time)?]);
    }
    Ok(t)
}

fn cmd_ecs(p: &Params) -> Result<Table> {
    let drive = p.sdf_drive()?;
    let (mx, my) = p.modes()?;
    let state = EcsState::at(&drive, (&mx, &my), p.tsdf)?;
    let n_max = p.nmax.unwrap_or_else(|| recommended_n_max(state.beta.norm_sqr()));
    let dist = ecs_distribution_with(&state, n_max, p.normalization)?;
    let mut t = Table::new("ecs", vec!["n", "p_n"])
        .meta("tsdf_us", p.tsdf / US)
        .meta("alpha_abs", state.alpha.norm())
        .meta("beta_abs", state.beta.norm())
        .meta("parity", dist.parity())
        .meta("mean", dist.mean());
    t.rows = dist.populations.iter().enumerate().map(|(n, v)| vec![n as f64, *v]).collect();
    Ok(t)
}

fn cmd_cat(p: &Params) -> Result<Table> {
    let drive = p.sdf_drive()?;
    let (_, my) = p.modes()?;
    let beta = trajectory(&drive, &my, p.tsdf)?;
    let n_max = p.nmax.unwrap_or_else(|| recommended_n_max(beta.norm_sqr()));
    let dist = single_mode_cat_distribution(beta, n_max)?;
    let mut t = Table::new("cat", vec!["n", "p_n"]).meta("beta_abs", beta.norm()).meta("parity", dist.parity());
    t.rows = dist.populations.iter().enumerate().map(|(n, v)| vec![n as f64, *v]).collect();
    Ok(t)
}

fn cmd_ms(p: &Params) -> Result<Table> {
    let (set, drive) = p.ms_gate()?;
    let end = ms::ms_populations(&set, &drive, drive.gate_time)?;
    let mut t = Table::new("ms", vec!["t_us", "p_dd", "p_du_plus_ud", "p_uu", "phase"])
        .meta("ratio", p.ratio)
        .meta("omega0_khz", drive.omega0 / KHZ)
        .meta("gate_time_us", drive.gate_time / US)
        .meta("p_dd_at_gate", end.p_dd)
        .meta("p_du_plus_ud_at_gate", end.p_du_plus_ud)
        .meta("p_uu_at_gate", end.p_uu);
    for time in p.grid() {
        let pop = ms::ms_populations(&set, &drive, time)?;
        t.rows.push(vec![time / US, pop.p_dd, pop.p_du_plus_ud, pop.p_uu, ms::geometric_phase(&set, &drive, time)?]);
    }
    Ok(t)
}

fn ms_oracle_state(p: &Params, set: &ChainModeSet, drive: &MsDrive) -> Result<SimState> {
    let mut setup = MsOracleSetup::nearest(set, drive, p.ms_modes).with_budget(p.ms_budget);
    if let Some(n) = p.nmax {
        setup.dims = vec![n + 1; setup.active.len()];
    }
    let init = setup.ground_state()?;
    let spec = PropagationSpec::for_ms(set, drive, &setup.active);
    oracle::propagate_ms(&init, set, drive, &setup, drive.gate_time, &spec)
}

fn cmd_parity_scan(p: &Params) -> Result<Table> {
    let (set, drive) = p.ms_gate()?;
    let state = ms_oracle_state(p, &set, &drive)?;
    let phases: Vec<f64> = (0..p.points).map(|i| PI * i as f64 / (p.points - 1) as f64).collect();
    let values = oracle::parity_scan(&state, &phases);
    let pops = oracle::ms_populations_of(&state);
    let amplitude = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut t = Table::new("parity-scan", vec!["phi_rad", "parity"])
        .meta("omega0_khz", drive.omega0 / KHZ)
        .meta("even_population", pops.even())
        .meta("parity_amplitude", amplitude)
        .meta("fidelity", ms::bell_fidelity(pops.even().clamp(0.0, 1.0), amplitude.min(1.0))?);
    t.rows = phases.iter().zip(values).map(|(a, b)| vec![*a, b]).collect();
    Ok(t)
}

fn cmd_synth(p: &Params) -> Result<String> {
    let drive = p.sdf_drive()?;
    let (mx, my) = p.modes()?;
    let state = EcsState::at(&drive, (&mx, &my), p.tsdf)?;
    let fit = &p.bsb_fit;
    let n_max = p.nmax.unwrap_or(fit.n_max);
    let full = ecs_distribution_with(&state, recommended_n_max(state.beta.norm_sqr()).max(n_max), p.normalization)?;
    let truth: Vec<f64> = full.populations[..=n_max].to_vec();
    let noise = NoiseModel::new(p.shots, p.eps_up, p.eps_down, p.seed)?;
    let t_max = if p.t_max == 200.0 * US { 300.0 * US } else { p.t_max };
    let points = if p.points == 401 { 61 } else { p.points };
    let times: Vec<f64> = (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect();
    let model = |t: f64| bsb_model(&full.populations, fit.omega0, f64::INFINITY, fit.eta, t, 1.0);
    let mut trace = expdata::synthesize_trace(model, &times, &noise, "synthetic blue sideband, Y mode")?
        .with_meta("axis", "Y")
        .with_meta("R", p.ratio)
        .with_meta("t_sdf_us", p.tsdf / US)
        .with_meta("omega0_khz", fit.omega0 / KHZ)
        .with_meta("eta", fit.eta)
        .with_meta("truth_n_max", n_max);
    for (n, v) in truth.iter().enumerate() {
        trace = trace.with_meta(&format!("truth_p_{n}"), v);
    }
    if p.format == Format::Structured {
        return Err(Error::InvalidInput("synth writes CSV traces only".into()));
    }
    trace.to_csv_string()
}

/// Parity against SDF duration, in the published acquisition order when the
/// ratio matches a recorded data set.
fn cmd_synth_parity(p: &Params) -> Result<String> {
    let drive = p.sdf_drive()?;
    let params = ParityParams::from_drive(&drive, p.p_x1, p.p_y1);
    let times: Vec<f64> = if (p.ratio + 2.0 / 3.0).abs() < 1e-9 {
        PublishedSequence::RatioMinusTwoThirds.schedule().t_sdf_values
    } else if (p.ratio + 2.0).abs() < 1e-9 {
        PublishedSequence::RatioMinusTwo.schedule().t_sdf_values
    } else {
        p.grid()
    };
    let model = |t: f64| parity_model(t, &params, (p.eta_x, p.eta_y), p.normalization).unwrap_or(f64::NAN);
    let points = expdata::synthesize_parity(model, &times, p.parity_sigma, p.seed)?;
    if points.iter().any(|q| !q.parity.is_finite()) {
        return Err(Error::Domain("parity model failed on the duration grid".into()));
    }
    let header = [
        ("R", p.ratio.to_string()),
        ("omega_sdf_khz", (drive.omega / KHZ).to_string()),
        ("p_x1", p.p_x1.to_string()),
        ("p_y1", p.p_y1.to_string()),
        ("sigma", p.parity_sigma.to_string()),
        ("rng", RNG_ALGORITHM.to_string()),
        ("seed", p.seed.to_string()),
    ];
    let mut out: String = header.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    out.push_str(&expdata::parity_points_to_csv(&points)?);
    Ok(out)
}

fn report_output(report: &FitReport, format: Format) -> Result<String> {
    match format {
        Format::Structured => expdata::to_toml_string(report),
        Format::Csv => {
            let mut out = format!("# converged={}\n# flags={}\nparameter,value,standard_error\n", report.converged, report.flags.join(";"));
            for (k, v) in &report.parameters {
                out.push_str(&format!("{k},{v},{}\n", report.standard_errors.get(k).copied().unwrap_or(f64::NAN)));
            }
            Ok(out)
        }
    }
}

fn input_path(args: &CommonArgs) -> Result<&Path> {
    args.input.as_deref().ok_or_else(|| Error::InvalidInput("--input is required".into()))
}

fn cmd_fit_bsb(args: &CommonArgs, p: &Params) -> Result<(String, bool)> {
    let trace = expdata::read_trace(input_path(args)?)?;
    let mut cfg = p.bsb_fit.clone();
    if let Some(n) = p.nmax {
        cfg.n_max = n;
    }
    // omega_khz in a run config is the SDF drive, so only the flag sets the sideband rate here
    if let Some(o) = args.omega_khz {
        cfg.omega0 = o * KHZ;
    }
    if let Some(eta) = args.eta_y {
        cfg.eta = eta;
    }
    let report = fit_bsb_trace(&trace, &cfg)?;
    Ok((report_output(&report, p.format)?, report.converged))
}

fn cmd_fit_parity(args: &CommonArgs, p: &Params) -> Result<(String, bool)> {
    let text = std::fs::read_to_string(input_path(args)?)?;
    let points = expdata::parity_points_from_csv(&text)?;
    let mut cfg = match &p.parity_fit {
        Some(c) => c.clone(),
        None => {
            let drive = p.sdf_drive()?;
            ParityFitConfig {
                start: ParityParams::from_drive(&drive, 0.2, 0.05),
                eta_x: p.eta_x,
                eta_y: p.eta_y,
                normalization: p.normalization,
                ..ParityFitConfig::default()
            }
        }
    };
    if let Some(o) = args.omega_khz {
        cfg.start.omega_sdf = o * KHZ;
    }
    let report = fit_parity_curve(&points, &cfg)?;
    Ok((report_output(&report, p.format)?, report.converged))
}

/// One line of the oracle-check table.
pub struct CheckLine {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.measured < self.tolerance
    }
}

/// Oracle-versus-closed-form comparisons at the current parameters.
fn oracle_checks(p: &Params, quick: bool) -> Result<Vec<CheckLine>> {
    let drive = p.sdf_drive()?.with_tau(f64::INFINITY);
    let (mx, my) = p.modes()?;
    let (mx0, my0) = (ModeParams { nbar: 0.0, p1: 0.0, ..mx }, ModeParams { nbar: 0.0, p1: 0.0, ..my });
    let dim = p.nmax.map_or(32, |n| n + 1);
    let trunc = TruncationSpec::new(dim, crate::fock::DEFAULT_TAIL_TOL)?;
    let spec = PropagationSpec::for_sdf(&drive, (&mx0, &my0));
    let mut lines = Vec::new();

    let mut state = SimState::sdf_ground(trunc)?;
    let mut worst: f64 = 0.0;
    for time in p.grid() {
        state = oracle::propagate_sdf(&state, &drive, (&mx0, &my0), time, &spec)?;
        worst = worst.max((state.spin_up() - spin_up_probability(&drive, (&mx0, &my0), time)?).abs());
    }
    lines.push(CheckLine { name: "spin population vs closed form", measured: worst, tolerance: 1e-3 });

    let (ecs, _) = oracle::herald_ecs(&SimState::sdf_ground(trunc)?, &drive, (&mx0, &my0), p.tsdf, &spec)?;
    let marg = oracle::marginal_distribution(&ecs, 1);
    let closed = ecs_distribution_with(&EcsState::at(&drive, (&mx0, &my0), p.tsdf)?, dim - 1, CaseNormalization::Exact);
    let diff = match closed {
        Ok(c) => marg.populations.iter().zip(&c.populations).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    lines.push(CheckLine { name: "heralded marginal vs closed form", measured: diff, tolerance: 1e-8 });

    let mut grid_err: f64 = 0.0;
    for i in 0..9 {
        for j in 0..9 {
            let (a, b) = (0.25 * i as f64, 0.25 * j as f64);
            let d = ecs_distribution_with(
                &EcsState::pure(C64::new(a, 0.0), C64::new(b, 0.0)),
                recommended_n_max(b * b) + 10,
                CaseNormalization::Exact,
            )?;
            grid_err = grid_err.max((d.parity() - ecs_parity_closed_form(a * a, b * b)).abs());
        }
    }
    lines.push(CheckLine { name: "parity identity on 9x9 grid", measured: grid_err, tolerance: 1e-12 });

    let d11 = displacement_element(C64::new(0.7, -0.2), 1, 1)?;
    let x = C64::new(0.7, -0.2).norm_sqr();
    lines.push(CheckLine {
        name: "displacement <1|D|1> closed form",
        measured: (d11 - C64::new((1.0 - x) * (-x / 2.0).exp(), 0.0)).norm(),
        tolerance: 1e-14,
    });

    if !quick {
        let (set, ms_drive) = p.ms_gate()?;
        let out = ms_oracle_state(p, &set, &ms_drive)?;
        let a = oracle::ms_populations_of(&out);
        let b = ms::ms_populations(&set, &ms_drive, ms_drive.gate_time)?;
        let d = (a.p_dd - b.p_dd).abs().max((a.p_du_plus_ud - b.p_du_plus_ud).abs()).max((a.p_uu - b.p_uu).abs());
        lines.push(CheckLine { name: "two-ion populations vs closed form", measured: d, tolerance: 2e-3 });
    }
    Ok(lines)
}

fn cmd_oracle_check(args: &CommonArgs, p: &Params) -> Result<(String, bool)> {
    let lines = oracle_checks(p, args.quick)?;
    let all = lines.iter().all(CheckLine::passed);
    let mut out = String::from("check,measured,tolerance,result\n");
    for l in &lines {
        out.push_str(&format!("{},{:e},{:e},{}\n", l.name, l.measured, l.tolerance, if l.passed() { "PASS" } else { "FAIL" }));
    }
    Ok((out, all))
}

/// Machine-readable error record written to stderr.
#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() { 3 } else { 2 }
}

fn run_command(cmd: &Command) -> Result<(String, Option<PathBuf>, bool)> {
    let (args, family) = match cmd {
        Command::Ms(a) | Command::ParityScan(a) => (a, Family::Ms),
        Command::Trajectory(a)
        | Command::Spin(a)
        | Command::Ecs(a)
        | Command::Cat(a)
        | Command::Synth(a)
        | Command::FitBsb(a)
        | Command::FitParity(a)
        | Command::OracleCheck(a) => (a, Family::Sdf),
    };
    let p = resolve(args, family)?;
    let table = |t: Result<Table>| -> Result<(String, bool)> { Ok((t?.render(p.format)?, true)) };
    let (text, ok) = match cmd {
        Command::Trajectory(_) => table(cmd_trajectory(&p))?,
        Command::Spin(_) => table(cmd_spin(&p))?,
        Command::Ecs(_) => table(cmd_ecs(&p))?,
        Command::Cat(_) => table(cmd_cat(&p))?,
        Command::Ms(_) => table(cmd_ms(&p))?,
        Command::ParityScan(_) => table(cmd_parity_scan(&p))?,
        Command::Synth(a) if a.parity => (cmd_synth_parity(&p)?, true),
        Command::Synth(_) => (cmd_synth(&p)?, true),
        Command::FitBsb(a) => cmd_fit_bsb(a, &p)?,
        Command::FitParity(a) => cmd_fit_parity(a, &p)?,
        Command::OracleCheck(a) => cmd_oracle_check(a, &p)?,
    };
    Ok((text, args.out.clone(), ok))
}

/// Run the CLI on `argv` and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = run_command(&cli.command).and_then(|(text, out, ok)| {
        emit(&text, out.as_deref())?;
        Ok(ok)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => {
            report_error("not-converged", "fit or check did not meet its tolerance".into(), 3);
            3
        }
        Err(e) => {
            let code = exit_code(&e);
            report_error(e.kind(), e.to_string(), code);
            code
        }
    }
}

fn report_error(kind: &str, message: String, code: i32) {
    let rec = ErrorRecord { error: kind, message, exit_code: code };
    let line = serde_json::to_string(&rec).unwrap_or_else(|_| format!("{{\"error\":\"{kind}\"}}"));
    eprintln!("{line}");
}
