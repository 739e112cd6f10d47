//! Closed-form single-ion dynamics under a two-mode spin-dependent force.
//!
//! The drive displaces the X and Y modes along circles in phase space; the
//! spin population, the heralded entangled coherent state and its phonon
//! parity all follow from the two displacements `alpha(t)` and `beta(t)`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{coherent_population, displacement_element, ComplexAmplitude, DEFAULT_TAIL_TOL};

/// Radial mode splitting used throughout the experiment, 2pi x 27.8 kHz.
pub const NOMINAL_SPLITTING: f64 = 2.0 * PI * 27.8e3;
pub const NOMINAL_ETA_X: f64 = 0.05;
pub const NOMINAL_ETA_Y: f64 = 0.11;
pub const NOMINAL_SECULAR: f64 = 2.0 * PI * 1250.0e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    X,
    Y,
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeLabel::X => write!(f, "X"),
            ModeLabel::Y => write!(f, "Y"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub label: ModeLabel,
    /// Angular secular frequency, rad/s.
    pub secular_frequency: f64,
    /// Lamb-Dicke factor; zero switches the mode off.
    pub lamb_dicke: f64,
    /// Mean thermal phonon number, used by the spin-population formula.
    pub nbar: f64,
    /// One-phonon occupation of the two-level thermal surrogate.
    pub p1: f64,
}

impl ModeParams {
    pub fn new(label: ModeLabel, secular_frequency: f64, lamb_dicke: f64, nbar: f64, p1: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&lamb_dicke) {
            return Err(Error::InvalidInput(format!(
                "Lamb-Dicke factor {lamb_dicke} outside [0, 0.5]"
            )));
        }
        if !(nbar >= 0.0 && nbar.is_finite()) {
            return Err(Error::InvalidInput(format!("nbar {nbar} must be finite and >= 0")));
        }
        if !(0.0..=0.5).contains(&p1) {
            return Err(Error::InvalidInput(format!("p1 {p1} outside [0, 0.5]")));
        }
        Ok(Self { label, secular_frequency, lamb_dicke, nbar, p1 })
    }

    /// Ground-state-cooled mode with the given coupling.
    pub fn cold(label: ModeLabel, lamb_dicke: f64) -> Self {
        let secular_frequency = match label {
            ModeLabel::X => NOMINAL_SECULAR,
            ModeLabel::Y => NOMINAL_SECULAR + NOMINAL_SPLITTING,
        };
        Self { label, secular_frequency, lamb_dicke, nbar: 0.0, p1: 0.0 }
    }

    pub fn nominal_x() -> Self {
        Self::cold(ModeLabel::X, NOMINAL_ETA_X)
    }

    pub fn nominal_y() -> Self {
        Self::cold(ModeLabel::Y, NOMINAL_ETA_Y)
    }
}

/// Bichromatic spin-dependent-force drive. All rates angular (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfDrive {
    pub omega: f64,
    pub delta_x: f64,
    pub delta_y: f64,
    pub phi_s: f64,
    pub phi_m: f64,
    /// Empirical decoherence time in seconds; `f64::INFINITY` disables it.
    pub tau: f64,
}

impl SdfDrive {
    pub fn new(omega: f64, delta_x: f64, delta_y: f64) -> Self {
        Self { omega, delta_x, delta_y, phi_s: 0.0, phi_m: 0.0, tau: f64::INFINITY }
    }

    /// Drive placed between the two radial modes with `delta_x / delta_y = ratio`.
    pub fn from_ratio(omega: f64, ratio: f64, splitting: f64) -> Result<Self> {
        let (dx, dy) = detunings_from_ratio(ratio, splitting)?;
        Ok(Self::new(omega, dx, dy))
    }

    pub fn detuning(&self, label: ModeLabel) -> f64 {
        match label {
            ModeLabel::X => self.delta_x,
            ModeLabel::Y => self.delta_y,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Solve `dx - dy = splitting`, `dx / dy = ratio` for a drive between the modes.
pub fn detunings_from_ratio(ratio: f64, splitting: f64) -> Result<(f64, f64)> {
    if !(ratio < 0.0) || !ratio.is_finite() {
        return Err(Error::Unsupported(format!(
            "detuning ratio {ratio} must be negative (drive between the two modes)"
        )));
    }
    if !(splitting > 0.0) {
        return Err(Error::InvalidInput(format!("splitting {splitting} must be positive")));
    }
    let delta_y = splitting / (ratio - 1.0);
    Ok((ratio * delta_y, delta_y))
}

/// Circular loop `alpha(t) = (eta Omega / 2 delta)(1 - e^{-i delta t}) e^{-i phi_M}`.
pub fn trajectory(drive: &SdfDrive, mode: &ModeParams, t: f64) -> Result<ComplexAmplitude> {
    let delta = drive.detuning(mode.label);
    circular_displacement(mode.lamb_dicke * drive.omega, delta, drive.phi_m, t)
        .ok_or_else(|| Error::ZeroDetuning(mode.label.to_string()))
}

/// `(coupling / 2 delta)(1 - e^{-i delta t}) e^{-i phi}`; `None` for zero detuning.
pub(crate) fn circular_displacement(coupling: f64, delta: f64, phi: f64, t: f64) -> Option<C64> {
    if delta == 0.0 {
        return None;
    }
    let loop_term = C64::new(1.0, 0.0) - C64::from_polar(1.0, -delta * t);
    Some(loop_term * C64::from_polar(coupling / (2.0 * delta), -phi))
}

/// Spin-up probability after the drive, including thermal dephasing and the
/// empirical decay `e^{-t/tau}`.
pub fn spin_up_probability(drive: &SdfDrive, modes: (&ModeParams, &ModeParams), t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidInput(format!("negative time {t}")));
    }
    let (mx, my) = modes;
    let a = trajectory(drive, mx, t)?;
    let b = trajectory(drive, my, t)?;
    let exponent = -(mx.nbar + 0.5) * (2.0 * a).norm_sqr() - (my.nbar + 0.5) * (2.0 * b).norm_sqr();
    Ok(0.5 * (1.0 - exponent.exp() * (-t / drive.tau).exp()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhononDistribution {
    pub populations: Vec<f64>,
    pub mode_label: Option<ModeLabel>,
}

impl PhononDistribution {
    pub fn new(populations: Vec<f64>, mode_label: Option<ModeLabel>) -> Self {
        Self { populations, mode_label }
    }

    pub fn total(&self) -> f64 {
        self.populations.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.populations.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn parity(&self) -> f64 {
        parity(self)
    }

    pub fn get(&self, n: usize) -> f64 {
        self.populations.get(n).copied().unwrap_or(0.0)
    }
}

/// `sum_n (-1)^n p_n`.
pub fn parity(dist: &PhononDistribution) -> f64 {
    dist.populations
        .iter()
        .enumerate()
        .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
        .sum()
}

/// Closed-form Y-mode parity of the ground-state heralded ECS.
pub fn ecs_parity_closed_form(alpha_mag2: f64, beta_mag2: f64) -> f64 {
    ((-2.0 * alpha_mag2).exp() + (-2.0 * beta_mag2).exp()) / (1.0 + (-2.0 * (alpha_mag2 + beta_mag2)).exp())
}

/// Heralded two-mode state `(|a>|b> + |-a>|-b>)` with the thermal surrogate weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcsState {
    pub alpha: ComplexAmplitude,
    pub beta: ComplexAmplitude,
    /// One-phonon occupations `(p_X1, p_Y1)`.
    pub thermal: (f64, f64),
}

impl EcsState {
    pub fn pure(alpha: ComplexAmplitude, beta: ComplexAmplitude) -> Self {
        Self { alpha, beta, thermal: (0.0, 0.0) }
    }

    /// State heralded after driving for `t`.
    pub fn at(drive: &SdfDrive, modes: (&ModeParams, &ModeParams), t: f64) -> Result<Self> {
        Ok(Self {
            alpha: trajectory(drive, modes.0, t)?,
            beta: trajectory(drive, modes.1, t)?,
            thermal: (modes.0.p1, modes.1.p1),
        })
    }
}

/// Normalisation of the one-phonon mixture components.
///
/// `Exact` divides each component by its true norm, so every component and
/// the mixture sum to one. `AsPublished` keeps the ground-state normaliser
/// `1 + e^{-2(|a|^2+|b|^2)}` on every component and the unrenormalised
/// mixture weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseNormalization {
    #[default]
    Exact,
    AsPublished,
}

/// Recommended cutoff for a heralded state with `|beta|^2 = beta_mag2`.
pub fn recommended_n_max(beta_mag2: f64) -> usize {
    // 2|b|^2 + 10 alone leaves ~1e-7 of Poisson tail at |b| = 2
    let b2 = beta_mag2.max(0.0);
    (2.0 * b2 + 10.0).max(b2 + 6.0 * b2.sqrt() + 10.0).ceil() as usize
}

/// Y-mode phonon distribution of the heralded ECS, including the thermal mixture.
pub fn ecs_distribution(state: &EcsState, n_max: usize) -> Result<PhononDistribution> {
    ecs_distribution_with(state, n_max, CaseNormalization::Exact)
}

pub fn ecs_distribution_with(
    state: &EcsState,
    n_max: usize,
    normalization: CaseNormalization,
) -> Result<PhononDistribution> {
    let (px, py) = state.thermal;
    if !(0.0..=0.5).contains(&px) || !(0.0..=0.5).contains(&py) {
        return Err(Error::InvalidInput(format!(
            "thermal weights ({px}, {py}) outside [0, 0.5]"
        )));
    }
    let b2 = state.beta.norm_sqr();
    let weights = [
        (InitialCase::Ground, (1.0 - px) * (1.0 - py)),
        (InitialCase::XExcited, px * (1.0 - py)),
        (InitialCase::YExcited, (1.0 - px) * py),
    ];
    let w_total = match normalization {
        CaseNormalization::Exact => weights.iter().map(|w| w.1).sum(),
        CaseNormalization::AsPublished => 1.0,
    };

    let mut pops = vec![0.0; n_max + 1];
    for (case, w) in weights {
        if w > 0.0 {
            let part = case_component(state.alpha, state.beta, case, n_max, normalization)?;
            for (p, c) in pops.iter_mut().zip(part) {
                *p += w / w_total * c;
            }
        }
    }

    let dist = PhononDistribution::new(pops, Some(ModeLabel::Y));
    if normalization == CaseNormalization::Exact {
        let tail = (1.0 - dist.total()).abs();
        if tail > DEFAULT_TAIL_TOL {
            return Err(Error::Truncation {
                tail,
                tol: DEFAULT_TAIL_TOL,
                context: format!("ECS distribution with |beta|^2={b2:.3} cut at n_max={n_max}"),
            });
        }
    }
    Ok(dist)
}

/// Motional Fock state before the SDF pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialCase {
    /// |0>_X |0>_Y
    Ground,
    /// |1>_X |0>_Y
    XExcited,
    /// |0>_X |1>_Y
    YExcited,
}

/// Y-mode distribution of the heralded state grown from one initial Fock
/// state, normalised exactly.
pub fn ecs_case_distribution(
    alpha: ComplexAmplitude,
    beta: ComplexAmplitude,
    case: InitialCase,
    n_max: usize,
) -> Result<PhononDistribution> {
    let pops = case_component(alpha, beta, case, n_max, CaseNormalization::Exact)?;
    Ok(PhononDistribution::new(pops, Some(ModeLabel::Y)))
}

fn case_component(
    alpha: ComplexAmplitude,
    beta: ComplexAmplitude,
    case: InitialCase,
    n_max: usize,
    normalization: CaseNormalization,
) -> Result<Vec<f64>> {
    let a2 = alpha.norm_sqr();
    let b2 = beta.norm_sqr();
    let ground_norm = 1.0 + (-2.0 * (a2 + b2)).exp();
    let overlap_x = (-2.0 * a2).exp();
    let sign = |n: usize| if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    match case {
        InitialCase::Ground => {
            Ok((0..=n_max).map(|n| coherent_population(b2, n) * (1.0 + sign(n) * overlap_x) / ground_norm).collect())
        }
        InitialCase::XExcited => {
            // interference weighted by <1|D(2a)|1>
            let d11 = 0.5 * (displacement_element(2.0 * alpha, 1, 1)? + displacement_element(-2.0 * alpha, 1, 1)?).re;
            let norm = match normalization {
                CaseNormalization::Exact => 1.0 + d11 * (-2.0 * b2).exp(),
                CaseNormalization::AsPublished => ground_norm,
            };
            Ok((0..=n_max).map(|n| coherent_population(b2, n) * (1.0 + sign(n) * d11) / norm).collect())
        }
        InitialCase::YExcited => {
            // displaced number states D(+-b)|1>
            let norm = match normalization {
                CaseNormalization::Exact => {
                    let d11 = displacement_element(-2.0 * beta, 1, 1)?.re;
                    2.0 * (1.0 + overlap_x * d11)
                }
                CaseNormalization::AsPublished => 2.0 * ground_norm,
            };
            (0..=n_max)
                .map(|n| {
                    let dp = displacement_element(beta, n, 1)?;
                    let dm = displacement_element(-beta, n, 1)?;
                    let cross = dp.conj() * dm + dp * dm.conj();
                    Ok((dp.norm_sqr() + dm.norm_sqr() + cross.re * overlap_x) / norm)
                })
                .collect()
        }
    }
}

/// Even cat `|b> + |-b>` of a single mode.
pub fn single_mode_cat_distribution(beta: ComplexAmplitude, n_max: usize) -> Result<PhononDistribution> {
    ecs_distribution(&EcsState::pure(C64::new(0.0, 0.0), beta), n_max)
}

/// Mean phonon number of a displaced mode: `|displacement|^2 + p1`.
pub fn mean_phonon(displacement: ComplexAmplitude, mode: &ModeParams) -> f64 {
    displacement.norm_sqr() + mode.p1
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn ratio_examples() {
        let s = TWO_PI * 27.8e3;
        let (dx, dy) = detunings_from_ratio(-2.0 / 3.0, s).unwrap();
        assert!((dx / TWO_PI - 11.12e3).abs() < 1e-6);
        assert!((dy / TWO_PI + 16.68e3).abs() < 1e-6);
        let (dx, dy) = detunings_from_ratio(-2.0, s).unwrap();
        assert!((dx / TWO_PI - 18.533e3).abs() < 1.0);
        assert!((dy / TWO_PI + 9.267e3).abs() < 1.0);
        assert!((dx - dy - s).abs() < 1e-9 && (dx / dy + 2.0).abs() < 1e-12);
        let (dx, dy) = detunings_from_ratio(-1.0, 3.0).unwrap();
        assert_eq!((dx, dy), (1.5, -1.5));
        assert!(matches!(detunings_from_ratio(0.5, s), Err(Error::Unsupported(_))));
        assert!(matches!(detunings_from_ratio(0.0, s), Err(Error::Unsupported(_))));
    }

    #[test]
    fn trajectory_examples() {
        let my = ModeParams::nominal_y();
        let drive = SdfDrive::new(TWO_PI * 212.6e3, TWO_PI * 11.12e3, -TWO_PI * 16.68e3);
        assert_eq!(trajectory(&drive, &my, 0.0).unwrap(), C64::new(0.0, 0.0));
        let period = TWO_PI / drive.delta_y.abs();
        assert!(trajectory(&drive, &my, period).unwrap().norm() < 1e-12);
        let half = PI / drive.delta_y.abs();
        let b = trajectory(&drive, &my, half).unwrap().norm();
        assert!((b - 0.11 * 212.6 / 16.68).abs() < 1e-12);
        assert!((b - 1.402).abs() < 1e-3);
        assert!((b - 1.5).abs() / 1.5 < 0.1);
        let zero = SdfDrive::new(1.0, 0.0, 1.0);
        assert!(matches!(trajectory(&zero, &ModeParams::nominal_x(), 1.0), Err(Error::ZeroDetuning(_))));
    }

    #[test]
    fn trajectory_is_a_circle() {
        let mx = ModeParams::nominal_x();
        let mut drive = SdfDrive::new(TWO_PI * 150e3, TWO_PI * 7.3e3, -TWO_PI * 20.5e3);
        drive.phi_m = 0.7;
        let c = C64::from_polar(mx.lamb_dicke * drive.omega / (2.0 * drive.delta_x), -drive.phi_m);
        let r = c.norm();
        for k in 0..200 {
            let t = k as f64 * 1.7e-6;
            let a = trajectory(&drive, &mx, t).unwrap();
            assert!(((a - c).norm() - r).abs() < 1e-12);
            assert!(a.norm() <= 2.0 * r + 1e-12);
        }
    }

    #[test]
    fn spin_up_examples() {
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let drive = SdfDrive::from_ratio(TWO_PI * 212.6e3, -2.0 / 3.0, NOMINAL_SPLITTING).unwrap();
        assert_eq!(spin_up_probability(&drive, (&mx, &my), 0.0).unwrap(), 0.0);
        // common closure of both loops
        let t = TWO_PI / drive.delta_x;
        assert!((t * drive.delta_y.abs() / TWO_PI - 1.5).abs() < 1e-12);
        let t_common = 2.0 * t;
        assert!(spin_up_probability(&drive, (&mx, &my), t_common).unwrap().abs() < 1e-12);

        // alpha = beta = 0.5 at zero temperature: P = (1 - e^{-1}) / 2
        let a = C64::new(0.5, 0.0);
        let exponent: f64 = -0.5 * (2.0 * a).norm_sqr() - 0.5 * (2.0 * a).norm_sqr();
        assert!((0.5 * (1.0 - exponent.exp()) - 0.316_06).abs() < 1e-5);

        let decayed = drive.with_tau(50e-6);
        let p = spin_up_probability(&decayed, (&mx, &my), t_common).unwrap();
        assert!((p - 0.5 * (1.0 - (-t_common / 50e-6f64).exp())).abs() < 1e-12);
        assert!(spin_up_probability(&drive, (&mx, &my), -1.0).is_err());
    }

    #[test]
    fn pure_ecs_examples() {
        let zero = C64::new(0.0, 0.0);
        let d = ecs_distribution(&EcsState::pure(zero, zero), 10).unwrap();
        assert!((d.get(0) - 1.0).abs() < 1e-15);

        let b = C64::new(1.5, 0.0);
        let d = ecs_distribution(&EcsState::pure(zero, b), 30).unwrap();
        let norm = 1.0 + (-2.0 * 2.25f64).exp();
        let expect = |n: usize| 2.0 * coherent_population(2.25, n) / norm;
        assert!((d.get(0) - 0.2085).abs() < 1e-4);
        assert!(d.get(1).abs() < 1e-15);
        assert!((d.get(2) - 0.5277).abs() < 1e-4);
        assert!((d.get(4) - 0.2227).abs() < 1e-4);
        assert!((d.get(4) - expect(4)).abs() < 1e-15);
        assert!((parity(&d) - 1.0).abs() < 1e-12);

        let d = ecs_distribution(&EcsState::pure(C64::new(1.0, 0.0), C64::new(0.0, 1.4)), 40).unwrap();
        assert!((parity(&d) - 0.155).abs() < 1e-3);
        assert!((parity(&d) - ecs_parity_closed_form(1.0, 1.96)).abs() < 1e-12);
    }

    #[test]
    fn cat_matches_ecs_with_zero_alpha() {
        let b = C64::new(0.4, -1.4);
        let cat = single_mode_cat_distribution(b, 30).unwrap();
        let ecs = ecs_distribution(&EcsState::pure(C64::new(0.0, 0.0), b), 30).unwrap();
        assert_eq!(cat, ecs);
        assert!((cat.parity() - 1.0).abs() < 1e-12);
        let vacuum = single_mode_cat_distribution(C64::new(0.0, 0.0), 5).unwrap();
        assert_eq!(vacuum.get(0), 1.0);
    }

    #[test]
    fn parity_simple() {
        let d = PhononDistribution::new(vec![0.5, 0.5], None);
        assert_eq!(parity(&d), 0.0);
    }

    #[test]
    fn thermal_reduction_is_exact() {
        let s = EcsState::pure(C64::new(0.3, 0.8), C64::new(-1.1, 0.2));
        let a = ecs_distribution(&s, 30).unwrap();
        let s2 = EcsState { thermal: (0.0, 0.0), ..s };
        let b = ecs_distribution_with(&s2, 30, CaseNormalization::AsPublished).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thermal_mixture_normalised() {
        for &(px, py) in &[(0.213, 0.056), (0.5, 0.5), (0.0, 0.3), (0.4, 0.0)] {
            let s = EcsState { alpha: C64::new(0.9, 0.1), beta: C64::new(0.2, -1.3), thermal: (px, py) };
            let d = ecs_distribution(&s, 40).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-9, "({px},{py}) -> {}", d.total());
            assert!(d.populations.iter().all(|&p| (-1e-15..=1.0).contains(&p)));
        }
    }

    #[test]
    fn thermal_x_component_closed_form() {
        // d_11 of D(2a) is (1 - 4|a|^2) e^{-2|a|^2}
        let a = C64::new(0.6, 0.2);
        let d11 = displacement_element(2.0 * a, 1, 1).unwrap();
        let x = 4.0 * a.norm_sqr();
        assert!((d11.re - (1.0 - x) * (-x / 2.0).exp()).abs() < 1e-14);
        assert!(d11.im.abs() < 1e-14);
    }

    #[test]
    fn truncated_cutoff_is_reported() {
        let s = EcsState::pure(C64::new(0.0, 0.0), C64::new(2.0, 0.0));
        assert!(matches!(ecs_distribution(&s, 6), Err(Error::Truncation { .. })));
        assert!(ecs_distribution(&s, recommended_n_max(4.0)).is_ok());
    }
}
