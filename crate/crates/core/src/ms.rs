//! Two-ion Molmer-Sorensen gate driven through both radial axes.
//!
//! Four transverse modes take part: tilt and centre-of-mass modes of the X
//! and Y axes. Each accumulates a loop in its own phase space; the summed
//! loop areas set the spin-spin phase `Phi(t)` that produces the Bell state at
//! `Phi = pi/8`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{circular_displacement, NOMINAL_ETA_X, NOMINAL_ETA_Y, NOMINAL_SECULAR, NOMINAL_SPLITTING};
use crate::error::{Error, Result};
use crate::fock::ComplexAmplitude;

pub const NOMINAL_AXIAL: f64 = 2.0 * PI * 120.0e3;
pub const NOMINAL_GATE_TIME: f64 = 182e-6;
pub const NOMINAL_MS_RATIO: f64 = -1.0 / 3.0;
pub const BELL_PHASE: f64 = PI / 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainModeLabel {
    XTilt,
    XCm,
    YTilt,
    YCm,
}

impl ChainModeLabel {
    pub const ALL: [ChainModeLabel; 4] = [Self::XTilt, Self::XCm, Self::YTilt, Self::YCm];

    pub fn is_cm(self) -> bool {
        matches!(self, Self::XCm | Self::YCm)
    }

    pub fn is_x_axis(self) -> bool {
        matches!(self, Self::XTilt | Self::XCm)
    }
}

impl fmt::Display for ChainModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::XTilt => "X_tilt",
            Self::XCm => "X_cm",
            Self::YTilt => "Y_tilt",
            Self::YCm => "Y_cm",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMode {
    pub label: ChainModeLabel,
    /// Angular mode frequency.
    pub frequency: f64,
    pub eta_ion1: f64,
    pub eta_ion2: f64,
    pub nbar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainModeSet {
    /// Ordered X_tilt, X_cm, Y_tilt, Y_cm.
    pub modes: [ChainMode; 4],
    pub axial_frequency: f64,
}

impl ChainModeSet {
    pub fn new(modes: [ChainMode; 4], axial_frequency: f64) -> Result<Self> {
        for (mode, label) in modes.iter().zip(ChainModeLabel::ALL) {
            if mode.label != label {
                return Err(Error::InvalidInput(format!(
                    "mode {} found where {label} was expected",
                    mode.label
                )));
            }
            if (mode.eta_ion1.abs() - mode.eta_ion2.abs()).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("{label}: unequal |eta| per ion")));
            }
            let same_sign = mode.eta_ion1 * mode.eta_ion2 >= 0.0;
            if mode.eta_ion1 != 0.0 && same_sign != label.is_cm() {
                return Err(Error::InvalidInput(format!(
                    "{label}: cm modes need equal signs, tilt modes opposite signs"
                )));
            }
            if !(mode.nbar >= 0.0) {
                return Err(Error::InvalidInput(format!("{label}: negative nbar")));
            }
        }
        for (tilt, cm) in [(0, 1), (2, 3)] {
            let expected = (modes[cm].frequency.powi(2) - axial_frequency.powi(2)).sqrt();
            if (modes[tilt].frequency - expected).abs() > 1e-9 * expected {
                return Err(Error::InvalidInput(format!(
                    "{} frequency must equal sqrt(cm^2 - axial^2)",
                    modes[tilt].label
                )));
            }
        }
        Ok(Self { modes, axial_frequency })
    }

    /// Transverse modes of a two-ion chain from the centre-of-mass frequencies.
    /// Per-ion Lamb-Dicke factors are `eta_axis / sqrt(2)`.
    pub fn from_cm(x_cm: f64, y_cm: f64, axial: f64, eta_x: f64, eta_y: f64) -> Result<Self> {
        let tilt = |cm: f64| (cm * cm - axial * axial).sqrt();
        let ex = eta_x / 2f64.sqrt();
        let ey = eta_y / 2f64.sqrt();
        let mode = |label, frequency, e1: f64, e2: f64| ChainMode {
            label,
            frequency,
            eta_ion1: e1,
            eta_ion2: e2,
            nbar: 0.0,
        };
        Self::new(
            [
                mode(ChainModeLabel::XTilt, tilt(x_cm), ex, -ex),
                mode(ChainModeLabel::XCm, x_cm, ex, ex),
                mode(ChainModeLabel::YTilt, tilt(y_cm), ey, -ey),
                mode(ChainModeLabel::YCm, y_cm, ey, ey),
            ],
            axial,
        )
    }

    pub fn nominal() -> Self {
        Self::from_cm(
            NOMINAL_SECULAR,
            NOMINAL_SECULAR + NOMINAL_SPLITTING,
            NOMINAL_AXIAL,
            NOMINAL_ETA_X,
            NOMINAL_ETA_Y,
        )
        .expect("nominal mode set is valid")
    }

    pub fn mode(&self, label: ChainModeLabel) -> &ChainMode {
        &self.modes[label as usize]
    }

    pub fn with_nbar(mut self, nbar: [f64; 4]) -> Self {
        for (m, n) in self.modes.iter_mut().zip(nbar) {
            m.nbar = n;
        }
        self
    }

    /// Copy with one radial axis decoupled.
    pub fn without_axis(mut self, x_axis: bool) -> Self {
        for m in self.modes.iter_mut().filter(|m| m.label.is_x_axis() == x_axis) {
            m.eta_ion1 = 0.0;
            m.eta_ion2 = 0.0;
        }
        self
    }

    pub fn scaled_eta(mut self, factor: f64) -> Self {
        for m in self.modes.iter_mut() {
            m.eta_ion1 *= factor;
            m.eta_ion2 *= factor;
        }
        self
    }
}

/// Bichromatic MS drive. `center_frequency` is the absolute angular frequency
/// of the sideband pair; mode `n` sees detuning `center - omega_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsDrive {
    pub omega0: f64,
    pub center_frequency: f64,
    pub gate_time: f64,
}

impl MsDrive {
    pub fn new(omega0: f64, center_frequency: f64, gate_time: f64) -> Result<Self> {
        if !(omega0 > 0.0) || !(gate_time > 0.0) {
            return Err(Error::InvalidInput("omega0 and gate_time must be positive".into()));
        }
        Ok(Self { omega0, center_frequency, gate_time })
    }

    /// Drive position with `d(X_cm) / d(Y_tilt) = ratio`.
    pub fn from_ratio(set: &ChainModeSet, ratio: f64, omega0: f64, gate_time: f64) -> Result<Self> {
        Self::new(omega0, center_for_ratio(set, ratio)?, gate_time)
    }

    pub fn detuning(&self, mode: &ChainMode) -> f64 {
        self.center_frequency - mode.frequency
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }
}

pub fn center_for_ratio(set: &ChainModeSet, ratio: f64) -> Result<f64> {
    if !(ratio < 0.0) {
        return Err(Error::Unsupported(format!(
            "ratio {ratio} must be negative (drive between X_cm and Y_tilt)"
        )));
    }
    let w_xcm = set.mode(ChainModeLabel::XCm).frequency;
    let w_yt = set.mode(ChainModeLabel::YTilt).frequency;
    Ok((w_xcm - ratio * w_yt) / (1.0 - ratio))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsPopulations {
    pub p_dd: f64,
    /// Both mixed outcomes together; each one is half of this.
    pub p_du_plus_ud: f64,
    pub p_uu: f64,
}

impl MsPopulations {
    pub fn total(&self) -> f64 {
        self.p_dd + self.p_du_plus_ud + self.p_uu
    }

    pub fn even(&self) -> f64 {
        self.p_dd + self.p_uu
    }

    pub fn parity(&self) -> f64 {
        self.p_dd + self.p_uu - self.p_du_plus_ud
    }
}

/// Displacement loop of one mode in its own coordinate,
/// `sqrt(eta1^2 + eta2^2) Omega0 / (2 d) (1 - e^{-i d t})`.
///
/// A single ion's branch moves by `eta_k / sqrt(eta1^2 + eta2^2)` of this, so
/// the opposite-spin branches of a two-ion mode separate by `2 sqrt(2)` times
/// it, which is what the `e^{-8 (nbar + 1/2) |alpha|^2}` factors encode.
pub fn mode_displacement(mode: &ChainMode, drive: &MsDrive, t: f64) -> Result<ComplexAmplitude> {
    let eta = mode.eta_ion1.hypot(mode.eta_ion2);
    circular_displacement(eta * drive.omega0, drive.detuning(mode), 0.0, t)
        .ok_or_else(|| Error::ZeroDetuning(mode.label.to_string()))
}

/// Geometric phase of a single mode.
pub fn mode_phase(mode: &ChainMode, drive: &MsDrive, t: f64) -> Result<f64> {
    let d = drive.detuning(mode);
    if d == 0.0 {
        return Err(Error::ZeroDetuning(mode.label.to_string()));
    }
    Ok(mode.eta_ion1 * mode.eta_ion2 / (2.0 * d).powi(2) * (d * t - (d * t).sin()) * drive.omega0.powi(2))
}

pub fn geometric_phase(set: &ChainModeSet, drive: &MsDrive, t: f64) -> Result<f64> {
    set.modes.iter().map(|m| mode_phase(m, drive, t)).sum()
}

/// Long-time slope `sum eta1 eta2 Omega0^2 / (4 d)` of the geometric phase.
pub fn phase_slope(set: &ChainModeSet, drive: &MsDrive) -> f64 {
    set.modes
        .iter()
        .map(|m| m.eta_ion1 * m.eta_ion2 * drive.omega0.powi(2) / (4.0 * drive.detuning(m)))
        .sum()
}

pub fn ms_populations(set: &ChainModeSet, drive: &MsDrive, t: f64) -> Result<MsPopulations> {
    let mut weighted = [0.0; 4];
    for (w, m) in weighted.iter_mut().zip(&set.modes) {
        *w = (m.nbar + 0.5) * mode_displacement(m, drive, t)?.norm_sqr();
    }
    let tilt = (-8.0 * (weighted[0] + weighted[2])).exp();
    let cm = (-8.0 * (weighted[1] + weighted[3])).exp();
    let all = (-2.0 * weighted.iter().sum::<f64>()).exp();
    let phi = geometric_phase(set, drive, t)?;
    let interference = 4.0 * (4.0 * phi).cos() * all;

    let p_du = (2.0 - tilt - cm) / 8.0;
    Ok(MsPopulations {
        p_dd: (2.0 + tilt + cm + interference) / 8.0,
        p_du_plus_ud: 2.0 * p_du,
        p_uu: (2.0 + tilt + cm - interference) / 8.0,
    })
}

/// How per-mode phase shares are normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareConvention {
    /// `Phi_n / sum Phi`, signed, sums to one.
    #[default]
    SignedTotal,
    /// `Phi_n / sum |Phi|`, signed, absolute values sum to one.
    AbsoluteTotal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseShares {
    pub shares: [(ChainModeLabel, f64); 4],
    pub convention: ShareConvention,
}

impl PhaseShares {
    pub fn axis(&self, x_axis: bool) -> f64 {
        self.shares
            .iter()
            .filter(|(l, _)| l.is_x_axis() == x_axis)
            .map(|(_, s)| s)
            .sum()
    }

    pub fn get(&self, label: ChainModeLabel) -> f64 {
        self.shares[label as usize].1
    }
}

pub fn contribution_breakdown(
    set: &ChainModeSet,
    drive: &MsDrive,
    t: f64,
    convention: ShareConvention,
) -> Result<PhaseShares> {
    let phases: Vec<f64> = set
        .modes
        .iter()
        .map(|m| mode_phase(m, drive, t))
        .collect::<Result<_>>()?;
    let norm = match convention {
        ShareConvention::SignedTotal => phases.iter().sum::<f64>(),
        ShareConvention::AbsoluteTotal => phases.iter().map(|p| p.abs()).sum::<f64>(),
    };
    if norm == 0.0 {
        return Err(Error::Infeasible("geometric phase contributions cancel".into()));
    }
    let mut shares = [(ChainModeLabel::XTilt, 0.0); 4];
    for ((slot, label), p) in shares.iter_mut().zip(ChainModeLabel::ALL).zip(&phases) {
        *slot = (label, p / norm);
    }
    Ok(PhaseShares { shares, convention })
}

/// Bell-state fidelity from the even population and the parity-fringe amplitude.
pub fn bell_fidelity(even_population: f64, parity_amplitude: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&even_population) || !(0.0..=1.0).contains(&parity_amplitude) {
        return Err(Error::InvalidInput(format!(
            "inputs ({even_population}, {parity_amplitude}) must lie in [0, 1]"
        )));
    }
    Ok((even_population + parity_amplitude) / 2.0)
}

/// Rabi frequency for which `|Phi(gate_time)| = target_phase` at the given drive position.
///
/// The phase is `Omega0^2` times a fixed loop-area factor, so the inverse is closed form.
pub fn required_rabi(set: &ChainModeSet, center_frequency: f64, gate_time: f64, target_phase: f64) -> Result<f64> {
    if !(target_phase > 0.0) {
        return Err(Error::InvalidInput(format!("target phase {target_phase} must be positive")));
    }
    let unit = MsDrive::new(1.0, center_frequency, gate_time)?;
    let per_omega2 = geometric_phase(set, &unit, gate_time)?;
    if per_omega2.abs() < 1e-300 || !per_omega2.is_finite() {
        return Err(Error::Infeasible(
            "mode contributions cancel; no Rabi frequency reaches the target phase".into(),
        ));
    }
    Ok((target_phase / per_omega2.abs()).sqrt())
}

/// Parity fringe of an ideal Bell state after a pi/2 analysis pulse of phase `phi`.
pub fn ideal_parity_curve(phi: f64, phi0: f64) -> f64 {
    -(2.0 * phi + phi0).cos()
}

/// Nominal configuration: drive at `R = -1/3`, 182 us gate, Rabi frequency
/// solved for the Bell phase.
pub fn nominal_gate() -> (ChainModeSet, MsDrive) {
    let set = ChainModeSet::nominal();
    let center = center_for_ratio(&set, NOMINAL_MS_RATIO).expect("negative ratio");
    let omega0 = required_rabi(&set, center, NOMINAL_GATE_TIME, BELL_PHASE).expect("feasible");
    (set, MsDrive { omega0, center_frequency: center, gate_time: NOMINAL_GATE_TIME })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn nominal_mode_set_layout() {
        let set = ChainModeSet::nominal();
        let xt = set.mode(ChainModeLabel::XTilt);
        assert!((xt.frequency / TWO_PI - 1244.226e3).abs() < 1.0);
        assert!(xt.eta_ion1 * xt.eta_ion2 < 0.0);
        let ycm = set.mode(ChainModeLabel::YCm);
        assert!((ycm.frequency / TWO_PI - 1277.8e3).abs() < 1e-6);
        assert!((ycm.eta_ion1 - 0.11 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_mode_sets_rejected() {
        let mut modes = ChainModeSet::nominal().modes;
        modes[1].eta_ion2 = -modes[1].eta_ion2;
        assert!(ChainModeSet::new(modes, NOMINAL_AXIAL).is_err());
        let mut modes = ChainModeSet::nominal().modes;
        modes[0].frequency += 1.0;
        assert!(ChainModeSet::new(modes, NOMINAL_AXIAL).is_err());
        let mut modes = ChainModeSet::nominal().modes;
        modes.swap(0, 1);
        assert!(ChainModeSet::new(modes, NOMINAL_AXIAL).is_err());
    }

    #[test]
    fn ratio_places_drive() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, 1.0, 182e-6).unwrap();
        let dx = drive.detuning(set.mode(ChainModeLabel::XCm));
        let dy = drive.detuning(set.mode(ChainModeLabel::YTilt));
        assert!((dx / dy + 1.0 / 3.0).abs() < 1e-12);
        assert!((dx / TWO_PI - 5.538e3).abs() < 1.0);
        assert!(MsDrive::from_ratio(&set, 0.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn displacement_loops() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        let m = set.mode(ChainModeLabel::XCm);
        assert_eq!(mode_displacement(m, &drive, 0.0).unwrap(), C64::new(0.0, 0.0));
        let period = TWO_PI / drive.detuning(m).abs();
        assert!(mode_displacement(m, &drive, period).unwrap().norm() < 1e-12);

        // 5.5 kHz detuning, 182 us: nearly one full loop
        let d55 = MsDrive::new(TWO_PI * 80e3, m.frequency + TWO_PI * 5.5e3, 182e-6).unwrap();
        let scale = m.eta_ion1 * d55.omega0 / (TWO_PI * 5.5e3);
        assert!(mode_displacement(m, &d55, 182e-6).unwrap().norm() < 0.05 * scale);

        let bad = MsDrive::new(1.0, m.frequency, 1.0).unwrap();
        assert!(matches!(mode_displacement(m, &bad, 1.0), Err(Error::ZeroDetuning(_))));
    }

    #[test]
    fn phase_examples() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        assert_eq!(geometric_phase(&set, &drive, 0.0).unwrap(), 0.0);

        // single mode, t = 2 pi / d
        let single = set.clone().without_axis(false);
        let mut only_xcm = single.clone();
        only_xcm.modes[0].eta_ion1 = 0.0;
        only_xcm.modes[0].eta_ion2 = 0.0;
        let m = *only_xcm.mode(ChainModeLabel::XCm);
        let d = drive.detuning(&m);
        let t = TWO_PI / d;
        let expected = m.eta_ion1 * m.eta_ion2 * drive.omega0.powi(2) * t / (4.0 * d);
        assert!((geometric_phase(&only_xcm, &drive, t).unwrap() - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn phase_slope_converges() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        let slowest = set.modes.iter().map(|m| drive.detuning(m).abs()).fold(f64::INFINITY, f64::min);
        let t = 60.0 * TWO_PI / slowest;
        let rate = geometric_phase(&set, &drive, t).unwrap() / t;
        let slope = phase_slope(&set, &drive);
        assert!((rate - slope).abs() < 0.01 * slope.abs());
    }

    #[test]
    fn population_examples() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        let p0 = ms_populations(&set, &drive, 0.0).unwrap();
        assert_eq!((p0.p_dd, p0.p_du_plus_ud, p0.p_uu), (1.0, 0.0, 0.0));

        // a single cm mode at loop closure with a chosen phase
        let mut one = set.clone().without_axis(false);
        one.modes[0].eta_ion1 = 0.0;
        one.modes[0].eta_ion2 = 0.0;
        let m = *one.mode(ChainModeLabel::XCm);
        let d = drive.detuning(&m);
        let t = TWO_PI / d;
        let k = m.eta_ion1 * m.eta_ion2 * t / (4.0 * d);
        for (phi, expect) in [(PI / 8.0, (0.5, 0.0, 0.5)), (PI / 4.0, (0.0, 0.0, 1.0))] {
            let drv = drive.with_omega0((phi / k).sqrt());
            let p = ms_populations(&one, &drv, t).unwrap();
            assert!((p.p_dd - expect.0).abs() < 1e-12);
            assert!((p.p_du_plus_ud - expect.1).abs() < 1e-12);
            assert!((p.p_uu - expect.2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_keeps_ground_state() {
        let set = ChainModeSet::nominal().scaled_eta(0.0);
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        for k in 0..50 {
            let p = ms_populations(&set, &drive, k as f64 * 7e-6).unwrap();
            assert_eq!((p.p_dd, p.p_du_plus_ud, p.p_uu), (1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn shares() {
        let set = ChainModeSet::nominal();
        let drive = MsDrive::from_ratio(&set, -1.0 / 3.0, TWO_PI * 80e3, 182e-6).unwrap();
        let s = contribution_breakdown(&set, &drive, 182e-6, ShareConvention::SignedTotal).unwrap();
        let total: f64 = s.shares.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let a = contribution_breakdown(&set, &drive, 182e-6, ShareConvention::AbsoluteTotal).unwrap();
        let abs_total: f64 = a.shares.iter().map(|(_, v)| v.abs()).sum();
        assert!((abs_total - 1.0).abs() < 1e-12);

        let mut single = set.clone().without_axis(true);
        single.modes[3].eta_ion1 = 0.0;
        single.modes[3].eta_ion2 = 0.0;
        let s = contribution_breakdown(&single, &drive, 182e-6, ShareConvention::SignedTotal).unwrap();
        assert!((s.get(ChainModeLabel::YTilt) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_shares_at_long_times() {
        // mirror-image tilt modes with equal |d| and |eta|
        let e = 0.05;
        let mode = |label, frequency, e1, e2| ChainMode { label, frequency, eta_ion1: e1, eta_ion2: e2, nbar: 0.0 };
        let axial = 1.0;
        let cm = 100.0f64;
        let tilt = (cm * cm - axial * axial).sqrt();
        let set = ChainModeSet {
            modes: [
                mode(ChainModeLabel::XTilt, tilt, e, -e),
                mode(ChainModeLabel::XCm, cm, 0.0, 0.0),
                mode(ChainModeLabel::YTilt, tilt, e, -e),
                mode(ChainModeLabel::YCm, cm, 0.0, 0.0),
            ],
            axial_frequency: axial,
        };
        let drive = MsDrive::new(1.0, tilt + 3.0, 1.0).unwrap();
        let s = contribution_breakdown(&set, &drive, 1e4, ShareConvention::SignedTotal).unwrap();
        assert!((s.get(ChainModeLabel::XTilt) - s.get(ChainModeLabel::YTilt)).abs() < 1e-12);
        assert!((s.axis(true) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fidelity() {
        assert!((bell_fidelity(0.942, 0.852).unwrap() - 0.897).abs() < 1e-12);
        assert_eq!(bell_fidelity(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(bell_fidelity(0.5, 0.0).unwrap(), 0.25);
        assert!(bell_fidelity(1.2, 0.0).is_err());
    }

    #[test]
    fn required_rabi_scaling() {
        let set = ChainModeSet::nominal();
        let center = center_for_ratio(&set, -1.0 / 3.0).unwrap();
        let base = required_rabi(&set, center, 182e-6, BELL_PHASE).unwrap();
        let doubled = required_rabi(&set.clone().scaled_eta(2.0), center, 182e-6, BELL_PHASE).unwrap();
        assert!((doubled / base - 0.5).abs() < 1e-12);
        let drive = MsDrive::new(base, center, 182e-6).unwrap();
        assert!((geometric_phase(&set, &drive, 182e-6).unwrap().abs() - BELL_PHASE).abs() < 1e-12);
        assert!((base / TWO_PI - 86.1e3).abs() / 86.1e3 < 0.1);
        let none = set.scaled_eta(0.0);
        assert!(matches!(required_rabi(&none, center, 182e-6, BELL_PHASE), Err(Error::Infeasible(_))));
    }

    #[test]
    fn ideal_fringe() {
        assert_eq!(ideal_parity_curve(0.0, 0.0), -1.0);
        assert!((ideal_parity_curve(PI / 4.0, 0.0)).abs() < 1e-15);
    }
}
