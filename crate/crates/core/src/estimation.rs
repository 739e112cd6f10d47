//! Phonon-distribution and parity fits.
//!
//! Blue-sideband traces are fitted with populations on the simplex through
//! squared variables, `p_n = u_n^2 / (sum u^2 + s^2)`, where the slack `s`
//! lets the total fall below one. The decay rate is boxed at zero. Standard errors are
//! computed afterwards in the physical parameters.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ecs_distribution_with, mean_phonon, recommended_n_max, trajectory, CaseNormalization, EcsState, ModeLabel,
    ModeParams, SdfDrive, NOMINAL_ETA_X, NOMINAL_ETA_Y,
};
use crate::error::{Error, Result};
use crate::expdata::{ParityPoint, RabiTrace};
use crate::fock::{coherent_population, sideband_rabi};
use crate::lsq::{jacobian, levenberg_marquardt, normal_pinv, LsqOptions, LsqResult};

pub const FIT_REPORT_SCHEMA: &str = "ecs-motion/fit-report/1";
pub const DEFAULT_AMPLITUDE_CAP: f64 = 0.97;
/// Relative change of the fitted Rabi frequency that raises `omega0-drift`.
pub const OMEGA0_DRIFT_LIMIT: f64 = 0.05;

const KHZ: f64 = 2.0 * PI * 1e3;
const US: f64 = 1e-6;

/// `(file value in kHz) <-> (angular rad/s)` for serde.
pub mod khz {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v / super::KHZ)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::deserialize(d)? * super::KHZ)
    }
}

/// `P_up(t) = cap * sum_n (p_n / 2)(1 - cos(Omega_{n+1,n} t) e^{-t/tau})`.
pub fn bsb_model(populations: &[f64], omega0: f64, tau: f64, eta: f64, t: f64, amplitude_cap: f64) -> f64 {
    let decay = if tau.is_infinite() { 1.0 } else { (-t / tau).exp() };
    let s: f64 = populations
        .iter()
        .enumerate()
        .map(|(n, p)| 0.5 * p * (1.0 - (sideband_rabi(n, omega0, eta) * t).cos() * decay))
        .sum();
    amplitude_cap * s
}

/// Even cat distribution renormalised on `0..=n_max`.
pub fn even_cat_populations(beta_mag: f64, n_max: usize) -> Vec<f64> {
    let b2 = beta_mag * beta_mag;
    let mut p: Vec<f64> = (0..=n_max).map(|n| if n % 2 == 0 { coherent_population(b2, n) } else { 0.0 }).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Omega0Policy {
    /// Scan +-10 % around `omega0` in 41 steps and keep the value that
    /// maximises the fitted `p_0` of the trace.
    MaximizeP0AtT0,
    /// Start from `omega0` as given.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialDistribution {
    EvenCat,
    Uniform,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsbFitConfig {
    pub n_max: usize,
    pub amplitude_cap: f64,
    /// Lamb-Dicke factor of the probed mode.
    pub eta: f64,
    /// Nominal carrier Rabi frequency, rad/s (kHz on disk).
    #[serde(rename = "omega0_khz", with = "khz")]
    pub omega0: f64,
    pub omega0_guess_policy: Omega0Policy,
    pub initial_distribution: InitialDistribution,
    pub explicit_distribution: Vec<f64>,
    pub fit_tau: bool,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for BsbFitConfig {
    fn default() -> Self {
        Self {
            n_max: 8,
            amplitude_cap: DEFAULT_AMPLITUDE_CAP,
            eta: NOMINAL_ETA_Y,
            omega0: 2.0 * PI * 100e3,
            omega0_guess_policy: Omega0Policy::Explicit,
            initial_distribution: InitialDistribution::EvenCat,
            explicit_distribution: Vec::new(),
            fit_tau: true,
            max_iterations: 500,
            convergence_tol: 1e-12,
        }
    }
}

impl BsbFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::InvalidInput("n_max must be at least 1".into()));
        }
        if !(self.amplitude_cap > 0.9 && self.amplitude_cap <= 1.0) {
            return Err(Error::InvalidInput(format!("amplitude_cap {} outside (0.9, 1]", self.amplitude_cap)));
        }
        if !(self.eta > 0.0 && self.eta <= 0.5) {
            return Err(Error::InvalidInput(format!("eta {} outside (0, 0.5]", self.eta)));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::InvalidInput("omega0 must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidInput("convergence settings must be positive".into()));
        }
        if self.initial_distribution == InitialDistribution::Explicit {
            let p = &self.explicit_distribution;
            if p.len() != self.n_max + 1 || p.iter().any(|v| !(*v >= 0.0)) || p.iter().sum::<f64>() > 1.0 + 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "explicit distribution must have {} nonnegative entries summing to at most 1",
                    self.n_max + 1
                )));
            }
        }
        Ok(())
    }

    fn options(&self) -> LsqOptions {
        LsqOptions {
            max_iterations: self.max_iterations,
            ftol: self.convergence_tol,
            xtol: self.convergence_tol,
            gtol: self.convergence_tol,
            ..LsqOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Bsb,
    Parity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub schema: String,
    pub kind: FitKind,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub flags: Vec<String>,
    /// Keys in file units: `p_<n>`, `omega0_khz`, `tau_us`, `omega_sdf_khz`, ...
    pub parameters: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub covariance_keys: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub cost_trace: Vec<f64>,
}

impl FitReport {
    pub fn populations(&self) -> Vec<f64> {
        (0..).map_while(|n| self.parameters.get(&format!("p_{n}")).copied()).collect()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.parameters.get(key).copied()
    }

    pub fn error(&self, key: &str) -> Option<f64> {
        self.standard_errors.get(key).copied()
    }

    /// Fitted carrier Rabi frequency in rad/s.
    pub fn omega0(&self) -> Option<f64> {
        self.get("omega0_khz").map(|v| v * KHZ)
    }

    pub fn has_flag(&self, prefix: &str) -> bool {
        self.flags.iter().any(|f| f.starts_with(prefix))
    }
}

/// Binomial standard deviation with the `(k+1)/(shots+2)` estimate, so that
/// points at 0 or 1 keep a finite weight.
fn binomial_sigma(p: f64, shots: u32) -> f64 {
    let n = shots as f64;
    let k = (p * n).round();
    let q = (k + 1.0) / (n + 2.0);
    (q * (1.0 - q) / n).sqrt()
}

/// Internal layout: `u_0..u_N, slack, w (rad/us), gamma (per us)`.
struct BsbProblem<'a> {
    t_us: Vec<f64>,
    y: &'a [f64],
    sigma: Vec<f64>,
    n_max: usize,
    eta: f64,
    cap: f64,
}

impl BsbProblem<'_> {
    fn populations(&self, x: &[f64]) -> Vec<f64> {
        let u = &x[..self.n_max + 2];
        let s: f64 = u.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        u[..self.n_max + 1].iter().map(|v| v * v / s).collect()
    }

    fn model_at(&self, p: &[f64], w: f64, gamma: f64) -> Vec<f64> {
        let rates: Vec<f64> = (0..p.len()).map(|n| sideband_rabi(n, w, self.eta)).collect();
        self.t_us
            .iter()
            .map(|&t| {
                let decay = (-gamma * t).exp();
                self.cap * p.iter().zip(&rates).map(|(pn, r)| 0.5 * pn * (1.0 - (r * t).cos() * decay)).sum::<f64>()
            })
            .collect()
    }

    fn residuals_phys(&self, p: &[f64], w: f64, gamma: f64) -> Vec<f64> {
        self.model_at(p, w, gamma).iter().zip(self.y).zip(&self.sigma).map(|((m, y), s)| (m - y) / s).collect()
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_max;
        self.residuals_phys(&self.populations(x), x[n + 2], x[n + 3])
    }

    fn fit(&self, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LsqOptions) -> Result<LsqResult> {
        levenberg_marquardt(|x: &[f64]| Ok(self.residuals(x)), x0, lower, upper, opts)
    }
}

fn initial_populations(trace: &RabiTrace, config: &BsbFitConfig, omega0: f64) -> Vec<f64> {
    let n = config.n_max;
    let uniform = vec![1.0 / (n + 1) as f64; n + 1];
    let base = match config.initial_distribution {
        InitialDistribution::Uniform => return uniform,
        InitialDistribution::Explicit => config.explicit_distribution.clone(),
        InitialDistribution::EvenCat => {
            let beta = first_maximum(trace)
                .map(|t_star| {
                    let rate = sideband_rabi(0, omega0, config.eta);
                    ((PI / (rate * t_star)).powi(2) - 1.0).clamp(0.0, n as f64 / 2.0).sqrt()
                })
                .unwrap_or(0.0);
            even_cat_populations(beta, n)
        }
    };
    // keep every component away from zero, where u_n^2 has no gradient
    base.iter().zip(&uniform).map(|(b, u)| 0.9 * b + 0.1 * u).collect()
}

/// First local maximum above half the trace maximum.
fn first_maximum(trace: &RabiTrace) -> Option<f64> {
    let y = &trace.p_up;
    let top = y.iter().cloned().fold(0.0, f64::max);
    (1..y.len().saturating_sub(1))
        .find(|&i| y[i] >= y[i - 1] && y[i] >= y[i + 1] && y[i] > 0.5 * top)
        .map(|i| trace.times[i])
        .filter(|t| *t > 0.0)
}

fn start_vector(p: &[f64], w: f64, gamma: f64) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    let slack = (1.0 - total).max(1e-4);
    let mut x: Vec<f64> = p.iter().map(|v| v.sqrt()).collect();
    x.push(slack.sqrt());
    x.push(w);
    x.push(gamma);
    x
}

/// Value of the nominal Rabi frequency that maximises the fitted `p_0`.
pub fn scan_omega0(trace: &RabiTrace, config: &BsbFitConfig) -> Result<f64> {
    config.validate()?;
    let problem = bsb_problem(trace, config)?;
    let n = config.n_max;
    let mut best = (f64::NEG_INFINITY, config.omega0);
    for k in 0..41 {
        let g = config.omega0 * (0.9 + 0.2 * k as f64 / 40.0);
        let w = g * US;
        let p0 = initial_populations(trace, config, g);
        let x0 = start_vector(&p0, w, 0.0);
        let (lo, hi) = bounds(n, w, w, false);
        let res = problem.fit(&x0, &lo, &hi, &config.options())?;
        let p = problem.populations(&res.x)[0];
        if p > best.0 {
            best = (p, g);
        }
    }
    Ok(best.1)
}

fn bounds(n: usize, w_lo: f64, w_hi: f64, fit_tau: bool) -> (Vec<f64>, Vec<f64>) {
    // u enters squared; a bound at zero would trap components there
    let mut lo = vec![-2.0; n + 2];
    let mut hi = vec![2.0; n + 2];
    lo.push(w_lo);
    hi.push(w_hi);
    lo.push(0.0);
    hi.push(if fit_tau { 1.0 } else { 0.0 });
    (lo, hi)
}

fn bsb_problem<'a>(trace: &'a RabiTrace, config: &BsbFitConfig) -> Result<BsbProblem<'a>> {
    trace.validate()?;
    let need = 2 * (config.n_max + 2);
    if trace.len() < need {
        return Err(Error::InvalidInput(format!("trace has {} points, need at least {need}", trace.len())));
    }
    let (lo, hi) = trace.p_up.iter().fold((f64::MAX, f64::MIN), |(a, b), &p| (a.min(p), b.max(p)));
    if hi - lo < 1e-12 {
        return Err(Error::RankDeficient("constant trace carries no frequency information".into()));
    }
    let period = 2.0 * PI / sideband_rabi(0, config.omega0, config.eta);
    let span = trace.times[trace.len() - 1] - trace.times[0];
    if span < period {
        return Err(Error::InvalidInput(format!(
            "trace spans {:.1} us, shorter than one ground-state sideband period {:.1} us",
            span / US,
            period / US
        )));
    }
    Ok(BsbProblem {
        t_us: trace.times.iter().map(|t| t / US).collect(),
        y: &trace.p_up,
        sigma: trace.p_up.iter().zip(&trace.shots).map(|(&p, &s)| binomial_sigma(p, s)).collect(),
        n_max: config.n_max,
        eta: config.eta,
        cap: config.amplitude_cap,
    })
}

/// Least-squares phonon distribution of a blue-sideband trace.
pub fn fit_bsb_trace(trace: &RabiTrace, config: &BsbFitConfig) -> Result<FitReport> {
    config.validate()?;
    let problem = bsb_problem(trace, config)?;
    let guess = match config.omega0_guess_policy {
        Omega0Policy::Explicit => config.omega0,
        Omega0Policy::MaximizeP0AtT0 => scan_omega0(trace, config)?,
    };
    let n = config.n_max;
    let w = guess * US;
    let p_init = initial_populations(trace, config, guess);
    // rates held first: the model is then close to linear in p
    let x0 = start_vector(&p_init, w, 0.0);
    let (lo1, hi1) = bounds(n, w, w, config.fit_tau);
    let stage = problem.fit(&x0, &lo1, &hi1, &config.options())?;
    let (lo, hi) = bounds(n, 0.7 * w, 1.3 * w, config.fit_tau);
    let mut res = problem.fit(&stage.x, &lo, &hi, &config.options())?;
    res.iterations += stage.iterations;

    let p = problem.populations(&res.x);
    let w_fit = res.x[n + 2];
    let gamma = res.x[n + 3];

    // covariance in (p_0..p_N, w, gamma)
    let mut theta = p.clone();
    theta.push(w_fit);
    if config.fit_tau {
        theta.push(gamma);
    }
    let k = theta.len();
    let mut phys = |th: &[f64]| -> Result<Vec<f64>> {
        let g = if config.fit_tau { th[n + 2] } else { 0.0 };
        Ok(problem.residuals_phys(&th[..n + 1], th[n + 1], g))
    };
    let r0 = phys(&theta)?;
    let upper = vec![f64::INFINITY; k];
    let jac = jacobian(&mut phys, &theta, &r0, &upper, 1e-7)?;
    let m = r0.len();
    let chi2: f64 = r0.iter().map(|v| v * v).sum();
    let reduced = if m > k { chi2 / (m - k) as f64 } else { chi2 };
    let cov = normal_pinv(&jac) * reduced.max(f64::MIN_POSITIVE);

    let mut keys: Vec<String> = (0..=n).map(|i| format!("p_{i}")).collect();
    keys.push("omega0_khz".into());
    let mut unit = vec![1.0; n + 1];
    unit.push(1.0 / (KHZ * US));
    if config.fit_tau {
        keys.push("gamma_per_us".into());
        unit.push(1.0);
    }
    let covariance = scaled_covariance(&cov, &unit);

    let mut parameters = BTreeMap::new();
    let mut standard_errors = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        if key == "gamma_per_us" {
            continue;
        }
        parameters.insert(key.clone(), theta[i] * unit[i]);
        standard_errors.insert(key.clone(), covariance[i][i].max(0.0).sqrt());
    }
    let (tau_us, tau_err) = if config.fit_tau && gamma > 0.0 {
        (1.0 / gamma, covariance[k - 1][k - 1].max(0.0).sqrt() / (gamma * gamma))
    } else {
        (f64::INFINITY, if config.fit_tau { f64::INFINITY } else { 0.0 })
    };
    parameters.insert("tau_us".into(), tau_us);
    standard_errors.insert("tau_us".into(), tau_err);

    let mut flags = Vec::new();
    if !res.converged {
        flags.push("not-converged".into());
    }
    let omega_fit = w_fit / US;
    if ((omega_fit - guess) / guess).abs() > OMEGA0_DRIFT_LIMIT {
        flags.push(format!("omega0-drift: {:.2}%", 100.0 * (omega_fit - guess) / guess));
    }
    if (w_fit - lo[n + 2]).abs() < 1e-9 * w || (hi[n + 2] - w_fit).abs() < 1e-9 * w {
        flags.push("at-bound: omega0_khz".into());
    }

    Ok(FitReport {
        schema: FIT_REPORT_SCHEMA.into(),
        kind: FitKind::Bsb,
        converged: res.converged,
        iterations: res.iterations,
        residual_norm: res.residual_norm(),
        reduced_chi2: reduced,
        flags,
        parameters,
        standard_errors,
        covariance_keys: keys,
        covariance,
        cost_trace: res.cost_trace,
    })
}

fn scaled_covariance(cov: &DMatrix<f64>, unit: &[f64]) -> Vec<Vec<f64>> {
    (0..cov.nrows()).map(|i| (0..cov.ncols()).map(|j| cov[(i, j)] * unit[i] * unit[j]).collect()).collect()
}

/// Parameters of the parity model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityParam {
    OmegaSdf,
    PX1,
    PY1,
    DeltaX,
    DeltaY,
}

impl ParityParam {
    pub const ALL: [ParityParam; 5] = [Self::OmegaSdf, Self::PX1, Self::PY1, Self::DeltaX, Self::DeltaY];

    /// Report key, in file units.
    pub fn key(self) -> &'static str {
        match self {
            Self::OmegaSdf => "omega_sdf_khz",
            Self::PX1 => "p_x1",
            Self::PY1 => "p_y1",
            Self::DeltaX => "delta_x_khz",
            Self::DeltaY => "delta_y_khz",
        }
    }

    fn file_unit(self) -> f64 {
        match self {
            Self::PX1 | Self::PY1 => 1.0,
            _ => 1.0 / KHZ,
        }
    }
}

/// Rates in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityParams {
    #[serde(rename = "omega_sdf_khz", with = "khz")]
    pub omega_sdf: f64,
    pub p_x1: f64,
    pub p_y1: f64,
    #[serde(rename = "delta_x_khz", with = "khz")]
    pub delta_x: f64,
    #[serde(rename = "delta_y_khz", with = "khz")]
    pub delta_y: f64,
}

impl ParityParams {
    pub fn from_drive(drive: &SdfDrive, p_x1: f64, p_y1: f64) -> Self {
        Self { omega_sdf: drive.omega, p_x1, p_y1, delta_x: drive.delta_x, delta_y: drive.delta_y }
    }

    pub fn get(&self, p: ParityParam) -> f64 {
        match p {
            ParityParam::OmegaSdf => self.omega_sdf,
            ParityParam::PX1 => self.p_x1,
            ParityParam::PY1 => self.p_y1,
            ParityParam::DeltaX => self.delta_x,
            ParityParam::DeltaY => self.delta_y,
        }
    }

    pub fn set(&mut self, p: ParityParam, v: f64) {
        match p {
            ParityParam::OmegaSdf => self.omega_sdf = v,
            ParityParam::PX1 => self.p_x1 = v,
            ParityParam::PY1 => self.p_y1 = v,
            ParityParam::DeltaX => self.delta_x = v,
            ParityParam::DeltaY => self.delta_y = v,
        }
    }

    pub fn drive(&self) -> SdfDrive {
        SdfDrive::new(self.omega_sdf, self.delta_x, self.delta_y)
    }
}

/// Y-mode parity of the heralded thermal-mixture state after an SDF pulse of
/// length `t_sdf`.
pub fn parity_model(
    t_sdf: f64,
    params: &ParityParams,
    eta: (f64, f64),
    normalization: CaseNormalization,
) -> Result<f64> {
    let mx = ModeParams::new(ModeLabel::X, 0.0, eta.0, 0.0, params.p_x1)?;
    let my = ModeParams::new(ModeLabel::Y, 0.0, eta.1, 0.0, params.p_y1)?;
    let drive = params.drive();
    let state = EcsState::at(&drive, (&mx, &my), t_sdf)?;
    let n_max = recommended_n_max(state.beta.norm_sqr()) + 4;
    let dist = ecs_distribution_with(&state, n_max, normalization)?;
    Ok(dist.parity().clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityBound {
    pub param: ParityParam,
    /// File units, as in the report keys.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParityFitConfig {
    pub free_parameters: Vec<ParityParam>,
    /// Starting values of the free parameters and values of the fixed ones.
    pub start: ParityParams,
    /// Overrides of the default bounds.
    pub bounds: Vec<ParityBound>,
    pub eta_x: f64,
    pub eta_y: f64,
    pub normalization: CaseNormalization,
    pub max_iterations: usize,
}

impl Default for ParityFitConfig {
    fn default() -> Self {
        let drive = SdfDrive::from_ratio(2.0 * PI * 212.6e3, -2.0 / 3.0, crate::dynamics::NOMINAL_SPLITTING)
            .expect("negative ratio");
        Self {
            free_parameters: vec![ParityParam::OmegaSdf, ParityParam::PX1, ParityParam::PY1],
            start: ParityParams::from_drive(&drive, 0.2, 0.05),
            bounds: Vec::new(),
            eta_x: NOMINAL_ETA_X,
            eta_y: NOMINAL_ETA_Y,
            normalization: CaseNormalization::Exact,
            max_iterations: 200,
        }
    }
}

impl ParityFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.free_parameters.is_empty() {
            return Err(Error::InvalidInput("at least one parity parameter must be free".into()));
        }
        let mut seen = self.free_parameters.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.free_parameters.len() {
            return Err(Error::InvalidInput("free parameters listed twice".into()));
        }
        for p in &self.free_parameters {
            let (lo, hi) = self.bounds_of(*p);
            let v = self.start.get(*p);
            if !(lo < hi) || v < lo || v > hi {
                return Err(Error::InvalidInput(format!("start of {} outside its bounds", p.key())));
            }
        }
        Ok(())
    }

    /// Bounds in rad/s or probability.
    pub fn bounds_of(&self, p: ParityParam) -> (f64, f64) {
        if let Some(b) = self.bounds.iter().find(|b| b.param == p) {
            return (b.lower / p.file_unit(), b.upper / p.file_unit());
        }
        let v = self.start.get(p);
        match p {
            ParityParam::OmegaSdf => (0.0, 3.0 * v.abs()),
            ParityParam::PX1 | ParityParam::PY1 => (0.0, 0.5),
            ParityParam::DeltaX | ParityParam::DeltaY => {
                let (a, b) = (0.7 * v, 1.3 * v);
                (a.min(b), a.max(b))
            }
        }
    }
}

/// Weighted least-squares fit of parity against SDF duration.
pub fn fit_parity_curve(points: &[ParityPoint], config: &ParityFitConfig) -> Result<FitReport> {
    config.validate()?;
    if points.len() < 5 {
        return Err(Error::InvalidInput(format!("{} parity points, need at least 5", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.error > 0.0) || !p.t.is_finite() || !p.parity.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid parity point {p:?}")));
    }
    let free = &config.free_parameters;
    let scale: Vec<f64> = free
        .iter()
        .map(|&p| match p {
            ParityParam::PX1 | ParityParam::PY1 => 1.0,
            _ => config.start.get(p).abs().max(1.0),
        })
        .collect();
    let unpack = |x: &[f64]| {
        let mut q = config.start;
        for (i, &p) in free.iter().enumerate() {
            q.set(p, x[i] * scale[i]);
        }
        q
    };
    let eta = (config.eta_x, config.eta_y);
    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let q = unpack(x);
        points
            .iter()
            .map(|pt| Ok((parity_model(pt.t, &q, eta, config.normalization)? - pt.parity) / pt.error))
            .collect()
    };
    let x0: Vec<f64> = free.iter().zip(&scale).map(|(&p, s)| config.start.get(p) / s).collect();
    let (lo, hi): (Vec<f64>, Vec<f64>) = free
        .iter()
        .zip(&scale)
        .map(|(&p, s)| {
            let (a, b) = config.bounds_of(p);
            (a / s, b / s)
        })
        .unzip();
    let opts = LsqOptions { max_iterations: config.max_iterations, ..LsqOptions::default() };
    let res = levenberg_marquardt(residuals, &x0, &lo, &hi, &opts)?;

    let m = points.len();
    let k = free.len();
    let chi2 = 2.0 * res.cost;
    let reduced = if m > k { chi2 / (m - k) as f64 } else { chi2 };
    let cov = normal_pinv(&res.jacobian) * reduced.max(f64::MIN_POSITIVE);
    let unit: Vec<f64> = free.iter().zip(&scale).map(|(p, s)| s * p.file_unit()).collect();
    let covariance = scaled_covariance(&cov, &unit);

    let fitted = unpack(&res.x);
    let mut parameters = BTreeMap::new();
    let mut standard_errors = BTreeMap::new();
    for p in ParityParam::ALL {
        parameters.insert(p.key().to_string(), fitted.get(p) * p.file_unit());
    }
    let col_norms: Vec<f64> = (0..k).map(|j| res.jacobian.column(j).norm()).collect();
    let max_col = col_norms.iter().cloned().fold(0.0, f64::max);
    let mut flags = Vec::new();
    if !res.converged {
        flags.push("not-converged".into());
    }
    for (i, &p) in free.iter().enumerate() {
        let se = covariance[i][i].max(0.0).sqrt();
        standard_errors.insert(p.key().to_string(), se);
        if res.x[i] - lo[i] <= 1e-9 * (hi[i] - lo[i]) || hi[i] - res.x[i] <= 1e-9 * (hi[i] - lo[i]) {
            flags.push(format!("at-bound: {}", p.key()));
        }
        if col_norms[i] <= 1e-8 * max_col.max(1e-300) || max_col == 0.0 || !se.is_finite() {
            flags.push(format!("unidentifiable: {}", p.key()));
        }
    }
    for p in ParityParam::ALL.iter().filter(|p| !free.contains(p)) {
        standard_errors.insert(p.key().to_string(), 0.0);
    }

    Ok(FitReport {
        schema: FIT_REPORT_SCHEMA.into(),
        kind: FitKind::Parity,
        converged: res.converged,
        iterations: res.iterations,
        residual_norm: res.residual_norm(),
        reduced_chi2: reduced,
        flags,
        parameters,
        standard_errors,
        covariance_keys: free.iter().map(|p| p.key().to_string()).collect(),
        covariance,
        cost_trace: res.cost_trace,
    })
}

/// `(t, nbar_Y, nbar_X)` along the SDF trajectory.
pub fn mean_phonon_curve(
    drive: &SdfDrive,
    modes: (&ModeParams, &ModeParams),
    t_grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    t_grid
        .iter()
        .map(|&t| {
            let a = trajectory(drive, modes.0, t)?;
            let b = trajectory(drive, modes.1, t)?;
            Ok((t, mean_phonon(b, modes.1), mean_phonon(a, modes.0)))
        })
        .collect()
}
