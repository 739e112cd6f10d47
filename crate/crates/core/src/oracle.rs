//! Numerically exact reference propagation in a truncated spin x Fock space.
//!
//! The interaction-picture Hamiltonian
//!
//! ```text
//! H(t) = - sum_n sum_k g_nk sigma_phi^(k) (a_n e^{i theta_n(t)} + a_n^dag e^{-i theta_n(t)}),
//! theta_n(t) = d_n t + phi_M
//! ```
//!
//! is applied as a time-ordered product of midpoint exponentials, each weighted
//! by `sinc(d h / 2)` so that a step reproduces the exact integral of the phase
//! factor. Displacements are then exact up to truncation; the only step error
//! left is the O(h^2) error in the geometric phase. The sign is
//! chosen so that the `sigma_phi = +1` branch is displaced by
//! `(g/d)(1 - e^{-i d t}) e^{-i phi_M}`. Every `sigma_phi^(k)` is diagonal in
//! the product eigenbasis `|+->`, so each spin sector evolves under a sum of
//! single-mode generators; each generator is exponentiated from the
//! eigen-decomposition of the truncated quadrature `a + a^dag`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::dynamics::{ModeParams, PhononDistribution, SdfDrive};
use crate::error::{Error, Result};
use crate::fock::{apply_factor_map, FockVector, TruncationSpec};
use crate::ms::{ChainModeLabel, ChainModeSet, MsDrive, MsPopulations};

/// Default budget on the product of active MS mode dimensions (two modes of 8).
pub const DEFAULT_MS_BUDGET: usize = 64;

const HERALD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    MidpointExponential,
    StepHalvingAdaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationSpec {
    pub step: f64,
    pub scheme: Scheme,
    pub tol: f64,
}

impl PropagationSpec {
    pub fn new(step: f64, scheme: Scheme, tol: f64) -> Result<Self> {
        if !(step > 0.0) || !(tol > 0.0) {
            return Err(Error::InvalidInput("step and tol must be positive".into()));
        }
        Ok(Self { step, scheme, tol })
    }

    /// `1 / (200 max(|d|, eta Omega) / 2 pi)` for the fastest rate in the problem.
    pub fn default_for_rate(max_rate: f64) -> Self {
        let rate = max_rate.abs().max(1.0);
        Self { step: 1.0 / (200.0 * rate / (2.0 * PI)), scheme: Scheme::MidpointExponential, tol: 1e-6 }
    }

    pub fn for_sdf(drive: &SdfDrive, modes: (&ModeParams, &ModeParams)) -> Self {
        let rate = [
            drive.delta_x.abs(),
            drive.delta_y.abs(),
            modes.0.lamb_dicke * drive.omega,
            modes.1.lamb_dicke * drive.omega,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        Self::default_for_rate(rate)
    }

    pub fn for_ms(set: &ChainModeSet, drive: &MsDrive, active: &[ChainModeLabel]) -> Self {
        let rate = active
            .iter()
            .map(|&l| {
                let m = set.mode(l);
                drive.detuning(m).abs().max(2.0 * m.eta_ion1.abs() * drive.omega0)
            })
            .fold(0.0, f64::max);
        Self::default_for_rate(rate)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// State vector over spin factors (dimension 2 each, index 0 = down) followed
/// by mode factors.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub vector: FockVector,
    pub time: f64,
    pub trunc: TruncationSpec,
}

impl SimState {
    /// `|down>|n_x>|n_y>` for the single-ion problem.
    pub fn sdf_basis(trunc: TruncationSpec, n_x: usize, n_y: usize) -> Result<Self> {
        let d = trunc.dim_per_mode;
        Ok(Self { vector: FockVector::basis(&[2, d, d], &[0, n_x, n_y])?, time: 0.0, trunc })
    }

    pub fn sdf_ground(trunc: TruncationSpec) -> Result<Self> {
        Self::sdf_basis(trunc, 0, 0)
    }

    /// Probability of spin up for a single-ion state.
    pub fn spin_up(&self) -> f64 {
        self.vector.marginal(0)[1]
    }
}

/// One harmonic mode coupled to every spin.
#[derive(Clone, Debug)]
struct ModeCoupling {
    detuning: f64,
    phase: f64,
    /// Coupling rate per spin, rad/s.
    rates: Vec<f64>,
}

#[derive(Clone, Debug)]
struct SpinBosonModel {
    n_spins: usize,
    phi_s: f64,
    modes: Vec<ModeCoupling>,
}

impl SpinBosonModel {
    fn spin_basis(&self) -> DMatrix<C64> {
        // columns |+> and |->, (|down> +- e^{i phi}|up>)/sqrt(2)
        let s = 1.0 / 2f64.sqrt();
        let e = C64::from_polar(s, self.phi_s);
        DMatrix::from_row_slice(2, 2, &[C64::new(s, 0.0), C64::new(s, 0.0), e, -e])
    }

    fn sector_rate(&self, sector: usize, mode: usize) -> f64 {
        // bit k of the sector index (most significant = spin 0) set means sigma = -1
        (0..self.n_spins)
            .map(|k| {
                let minus = (sector >> (self.n_spins - 1 - k)) & 1 == 1;
                let r = self.modes[mode].rates[k];
                if minus { -r } else { r }
            })
            .sum()
    }

    fn propagate(&self, state: &FockVector, t0: f64, t1: f64, n_steps: usize) -> Result<FockVector> {
        let dims = state.factor_dims().to_vec();
        let mode_dims = &dims[self.n_spins..];
        if mode_dims.len() != self.modes.len() || dims[..self.n_spins].iter().any(|&d| d != 2) {
            return Err(Error::InvalidInput(format!(
                "state layout {dims:?} does not match {} spins and {} modes",
                self.n_spins,
                self.modes.len()
            )));
        }
        let mut psi = state.clone();
        let basis = self.spin_basis();
        let to_eigen = basis.adjoint();
        for k in 0..self.n_spins {
            psi.apply_to_factor(k, &to_eigen)?;
        }

        let h = (t1 - t0) / n_steps as f64;
        let block: usize = mode_dims.iter().product();
        let n_sectors = 1usize << self.n_spins;

        let mut eig_cache: HashMap<usize, SymmetricEigen<f64, nalgebra::Dyn>> = HashMap::new();
        // step operators exp(i lambda h x) per (mode, sector)
        let mut step_ops: Vec<Vec<Option<DMatrix<C64>>>> = Vec::with_capacity(self.modes.len());
        for (n, &d) in mode_dims.iter().enumerate() {
            let eig = eig_cache.entry(d).or_insert_with(|| quadrature(d).symmetric_eigen());
            let mut per_sector = Vec::with_capacity(n_sectors);
            for s in 0..n_sectors {
                let lambda = self.sector_rate(s, n) * sinc(self.modes[n].detuning * h / 2.0);
                if lambda == 0.0 {
                    per_sector.push(None);
                    continue;
                }
                let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, lambda * h * e)));
                let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
                per_sector.push(Some(&v * phases * v.transpose()));
            }
            step_ops.push(per_sector);
        }

        let amps = psi.amplitudes_mut();
        for j in 0..n_steps {
            let t_mid = t0 + (j as f64 + 0.5) * h;
            for (n, coupling) in self.modes.iter().enumerate() {
                let theta = coupling.detuning * t_mid + coupling.phase;
                let d = mode_dims[n];
                let rot: Vec<C64> = (0..d).map(|m| C64::from_polar(1.0, -theta * m as f64)).collect();
                for (s, op) in step_ops[n].iter().enumerate() {
                    let Some(op) = op else { continue };
                    let chunk = &mut amps[s * block..(s + 1) * block];
                    apply_factor_map(chunk, mode_dims, n, |src, dst| {
                        // P M P^dag with P = diag(e^{-i theta m})
                        for (m, out) in dst.iter_mut().enumerate() {
                            let mut acc = C64::new(0.0, 0.0);
                            for (k, x) in src.iter().enumerate() {
                                acc += op[(m, k)] * (rot[k].conj() * x);
                            }
                            *out = rot[m] * acc;
                        }
                    });
                }
            }
        }

        for k in 0..self.n_spins {
            psi.apply_to_factor(k, &basis)?;
        }
        Ok(psi)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x }
}

/// Truncated `a + a^dag`.
fn quadrature(d: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(d, d);
    for m in 0..d - 1 {
        let v = ((m + 1) as f64).sqrt();
        x[(m, m + 1)] = v;
        x[(m + 1, m)] = v;
    }
    x
}

fn max_abs_diff(a: &FockVector, b: &FockVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn run(model: &SpinBosonModel, initial: &SimState, t_final: f64, spec: &PropagationSpec) -> Result<SimState> {
    if !(t_final >= initial.time) {
        return Err(Error::InvalidInput(format!(
            "final time {t_final} precedes state time {}",
            initial.time
        )));
    }
    let duration = t_final - initial.time;
    let mut n_steps = ((duration / spec.step).ceil() as usize).max(1);
    let vector = match spec.scheme {
        Scheme::MidpointExponential => model.propagate(&initial.vector, initial.time, t_final, n_steps)?,
        Scheme::StepHalvingAdaptive => {
            let mut coarse = model.propagate(&initial.vector, initial.time, t_final, n_steps)?;
            let mut accepted = None;
            let mut last_diff = f64::INFINITY;
            for _ in 0..12 {
                n_steps *= 2;
                let fine = model.propagate(&initial.vector, initial.time, t_final, n_steps)?;
                last_diff = max_abs_diff(&coarse, &fine);
                if last_diff < spec.tol {
                    accepted = Some(fine);
                    break;
                }
                coarse = fine;
            }
            accepted.ok_or(Error::Convergence { iterations: n_steps, residual: last_diff })?
        }
    };

    let drift = (vector.norm_sqr() - initial.vector.norm_sqr()).abs();
    if drift > spec.tol {
        return Err(Error::Convergence { iterations: n_steps, residual: drift });
    }
    let n_spins = model.n_spins;
    for f in n_spins..vector.factor_dims().len() {
        let tail = vector.top_level_mass(f);
        if tail > initial.trunc.tail_tol {
            return Err(Error::Truncation {
                tail,
                tol: initial.trunc.tail_tol,
                context: format!("mode factor {} after propagation", f - n_spins),
            });
        }
    }
    Ok(SimState { vector, time: t_final, trunc: initial.trunc })
}

fn sdf_model(drive: &SdfDrive, modes: (&ModeParams, &ModeParams)) -> SpinBosonModel {
    let coupling = |m: &ModeParams| ModeCoupling {
        detuning: drive.detuning(m.label),
        phase: drive.phi_m,
        rates: vec![m.lamb_dicke * drive.omega / 2.0],
    };
    SpinBosonModel { n_spins: 1, phi_s: drive.phi_s, modes: vec![coupling(modes.0), coupling(modes.1)] }
}

/// Propagate a single ion under the two-mode spin-dependent force.
pub fn propagate_sdf(
    initial: &SimState,
    drive: &SdfDrive,
    modes: (&ModeParams, &ModeParams),
    t_final: f64,
    spec: &PropagationSpec,
) -> Result<SimState> {
    run(&sdf_model(drive, modes), initial, t_final, spec)
}

/// Drive for `t_sdf`, then project the spin onto `|down>`.
///
/// Returns the normalised two-mode state and the herald probability.
pub fn herald_ecs(
    initial: &SimState,
    drive: &SdfDrive,
    modes: (&ModeParams, &ModeParams),
    t_sdf: f64,
    spec: &PropagationSpec,
) -> Result<(FockVector, f64)> {
    let evolved = propagate_sdf(initial, drive, modes, initial.time + t_sdf, spec)?;
    let dims = evolved.vector.factor_dims();
    let mode_len: usize = dims[1..].iter().product();
    let projected = evolved.vector.amplitudes()[..mode_len].to_vec();
    let mut motional = FockVector::new(projected, dims[1..].to_vec())?;
    let prob = motional.norm_sqr();
    if prob < HERALD_FLOOR {
        return Err(Error::DegenerateHerald(prob));
    }
    motional.normalize();
    Ok((motional, prob))
}

/// Reduced number distribution of one factor.
pub fn marginal_distribution(state: &FockVector, factor_index: usize) -> PhononDistribution {
    PhononDistribution::new(state.marginal(factor_index), None)
}

/// Which chain modes the MS oracle keeps, their truncation, and the budget on
/// the product of their dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct MsOracleSetup {
    pub active: Vec<ChainModeLabel>,
    pub dims: Vec<usize>,
    pub budget: usize,
    pub tail_tol: f64,
}

impl MsOracleSetup {
    /// Keep the `count` modes closest to the drive, sized for their largest
    /// excursion.
    pub fn nearest(set: &ChainModeSet, drive: &MsDrive, count: usize) -> Self {
        let mut order: Vec<ChainModeLabel> = ChainModeLabel::ALL.to_vec();
        order.sort_by(|a, b| {
            let da = drive.detuning(set.mode(*a)).abs();
            let db = drive.detuning(set.mode(*b)).abs();
            da.total_cmp(&db)
        });
        order.truncate(count);
        order.sort_by_key(|l| *l as usize);
        let dims = order.iter().map(|&l| Self::sized_dim(set, drive, l)).collect();
        Self { active: order, dims, budget: DEFAULT_MS_BUDGET, tail_tol: crate::fock::DEFAULT_TAIL_TOL }
    }

    pub fn nearest_two(set: &ChainModeSet, drive: &MsDrive) -> Self {
        Self::nearest(set, drive, 2)
    }

    pub fn all_modes(set: &ChainModeSet, drive: &MsDrive) -> Self {
        Self::nearest(set, drive, 4)
    }

    /// Largest sector displacement `2 (|eta1| + |eta2|) Omega0 / (2 |d|)`.
    fn sized_dim(set: &ChainModeSet, drive: &MsDrive, label: ChainModeLabel) -> usize {
        let m = set.mode(label);
        let rate = (m.eta_ion1.abs() + m.eta_ion2.abs()) * drive.omega0 / 2.0;
        let d = drive.detuning(m).abs();
        let reach = if d > 0.0 { 2.0 * rate / d } else { 0.0 };
        TruncationSpec::for_amplitude(reach).dim_per_mode
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn product_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// `|down, down>` with every active mode in its ground state.
    pub fn ground_state(&self) -> Result<SimState> {
        self.check_budget()?;
        let mut dims = vec![2, 2];
        dims.extend(&self.dims);
        let zeros = vec![0; dims.len()];
        let trunc = TruncationSpec::new(self.dims.iter().copied().max().unwrap_or(2), self.tail_tol)?;
        Ok(SimState { vector: FockVector::basis(&dims, &zeros)?, time: 0.0, trunc })
    }

    fn check_budget(&self) -> Result<()> {
        let required = self.product_dim();
        if required > self.budget {
            return Err(Error::Capacity { required, budget: self.budget });
        }
        Ok(())
    }
}

fn ms_model(set: &ChainModeSet, drive: &MsDrive, setup: &MsOracleSetup) -> Result<SpinBosonModel> {
    let modes = setup
        .active
        .iter()
        .map(|&l| {
            let m = set.mode(l);
            let d = drive.detuning(m);
            if d == 0.0 {
                return Err(Error::ZeroDetuning(l.to_string()));
            }
            Ok(ModeCoupling {
                detuning: d,
                phase: 0.0,
                rates: vec![m.eta_ion1 * drive.omega0 / 2.0, m.eta_ion2 * drive.omega0 / 2.0],
            })
        })
        .collect::<Result<_>>()?;
    Ok(SpinBosonModel { n_spins: 2, phi_s: 0.0, modes })
}

/// Propagate two ions under the MS interaction restricted to `setup.active`.
pub fn propagate_ms(
    initial: &SimState,
    set: &ChainModeSet,
    drive: &MsDrive,
    setup: &MsOracleSetup,
    t_final: f64,
    spec: &PropagationSpec,
) -> Result<SimState> {
    setup.check_budget()?;
    let model = ms_model(set, drive, setup)?;
    run(&model, initial, t_final, spec)
}

/// Populations of `|dd>`, `|du>+|ud>`, `|uu>` from a two-ion state.
pub fn ms_populations_of(state: &SimState) -> MsPopulations {
    let joint = spin_joint(&state.vector);
    MsPopulations { p_dd: joint[0], p_du_plus_ud: joint[1] + joint[2], p_uu: joint[3] }
}

fn spin_joint(v: &FockVector) -> [f64; 4] {
    let block: usize = v.factor_dims()[2..].iter().product();
    let mut out = [0.0; 4];
    for (i, a) in v.amplitudes().iter().enumerate() {
        out[i / block] += a.norm_sqr();
    }
    out
}

/// Reduced 4x4 density matrix of the two spins, basis order dd, du, ud, uu.
pub fn reduced_spin_density(state: &SimState) -> DMatrix<C64> {
    let v = &state.vector;
    let block: usize = v.factor_dims()[2..].iter().product();
    let amps = v.amplitudes();
    DMatrix::from_fn(4, 4, |i, j| {
        (0..block).map(|k| amps[i * block + k] * amps[j * block + k].conj()).sum()
    })
}

/// Spin parity after a global pi/2 analysis pulse of phase `phi` on both ions.
pub fn parity_after_analysis(rho: &DMatrix<C64>, phi: f64) -> f64 {
    let s = 1.0 / 2f64.sqrt();
    // exp(-i pi/4 sigma_phi), sigma_phi = [[0, e^{-i phi}], [e^{i phi}, 0]] in (down, up)
    let r = DMatrix::from_row_slice(2, 2, &[
        C64::new(s, 0.0),
        C64::new(0.0, -s) * C64::from_polar(1.0, -phi),
        C64::new(0.0, -s) * C64::from_polar(1.0, phi),
        C64::new(s, 0.0),
    ]);
    let rr = r.kronecker(&r);
    let out = &rr * rho * rr.adjoint();
    out[(0, 0)].re - out[(1, 1)].re - out[(2, 2)].re + out[(3, 3)].re
}

/// Parity fringe of a gate output over analysis phases.
pub fn parity_scan(state: &SimState, phases: &[f64]) -> Vec<f64> {
    let rho = reduced_spin_density(state);
    phases.iter().map(|&phi| parity_after_analysis(&rho, phi)).collect()
}

/// Observable values for successively halved steps, with the change between
/// consecutive rows.
pub fn step_halving_table<F>(
    initial: &SimState,
    t_final: f64,
    base: &PropagationSpec,
    levels: usize,
    mut propagate: F,
) -> Result<Vec<(usize, f64, f64)>>
where
    F: FnMut(&SimState, f64, &PropagationSpec) -> Result<f64>,
{
    let mut rows = Vec::with_capacity(levels);
    let mut prev: Option<f64> = None;
    let mut spec = base.with_scheme(Scheme::MidpointExponential);
    for _ in 0..levels {
        let value = propagate(initial, t_final, &spec)?;
        let steps = (((t_final - initial.time) / spec.step).ceil() as usize).max(1);
        let diff = prev.map_or(f64::NAN, |p| (value - p).abs());
        rows.push((steps, value, diff));
        prev = Some(value);
        spec.step /= 2.0;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{spin_up_probability, trajectory, ModeLabel};
    use crate::fock::coherent_amplitudes;

    const TWO_PI: f64 = 2.0 * PI;

    fn drive() -> SdfDrive {
        SdfDrive::from_ratio(TWO_PI * 212.6e3, -2.0 / 3.0, crate::dynamics::NOMINAL_SPLITTING).unwrap()
    }

    #[test]
    fn zero_rabi_leaves_state_unchanged() {
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let mut d = drive();
        d.omega = 0.0;
        let init = SimState::sdf_basis(TruncationSpec::new(8, 1e-9).unwrap(), 0, 0).unwrap();
        let spec = PropagationSpec::for_sdf(&drive(), (&mx, &my));
        let out = propagate_sdf(&init, &d, (&mx, &my), 50e-6, &spec).unwrap();
        assert!(max_abs_diff(&out.vector, &init.vector) < 1e-15);
        assert_eq!(out.time, 50e-6);
    }

    #[test]
    fn displacement_matches_trajectory() {
        // the + branch of the spin carries |alpha(t)>|beta(t)>
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let d = drive();
        let trunc = TruncationSpec::new(24, 1e-9).unwrap();
        // prepare |+> directly
        let s = 1.0 / 2f64.sqrt();
        let mut amps = vec![C64::new(0.0, 0.0); 2 * 24 * 24];
        amps[0] = C64::new(s, 0.0);
        amps[24 * 24] = C64::new(s, 0.0);
        let init = SimState { vector: FockVector::new(amps, vec![2, 24, 24]).unwrap(), time: 0.0, trunc };
        let t = 23e-6;
        let spec = PropagationSpec::for_sdf(&d, (&mx, &my));
        let out = propagate_sdf(&init, &d, (&mx, &my), t, &spec).unwrap();
        let a = trajectory(&d, &mx, t).unwrap();
        let b = trajectory(&d, &my, t).unwrap();
        let plus = FockVector::product(&[
            vec![C64::new(s, 0.0), C64::new(s, 0.0)],
            coherent_amplitudes(a, 24),
            coherent_amplitudes(b, 24),
        ])
        .unwrap();
        // equal up to a global phase
        assert!((out.vector.inner(&plus).norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spin_population_matches_closed_form() {
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let d = drive();
        let trunc = TruncationSpec::new(22, 1e-9).unwrap();
        let spec = PropagationSpec::for_sdf(&d, (&mx, &my));
        let mut state = SimState::sdf_ground(trunc).unwrap();
        for k in 1..=8 {
            let t = k as f64 * 10e-6;
            state = propagate_sdf(&state, &d, (&mx, &my), t, &spec).unwrap();
            let closed = spin_up_probability(&d, (&mx, &my), t).unwrap();
            assert!((state.spin_up() - closed).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn single_mode_revival() {
        let mx = ModeParams::cold(ModeLabel::X, 0.0);
        let my = ModeParams::nominal_y();
        let d = drive();
        let init = SimState::sdf_ground(TruncationSpec::new(16, 1e-9).unwrap()).unwrap();
        let spec = PropagationSpec::for_sdf(&d, (&mx, &my));
        let t = TWO_PI / d.delta_y.abs();
        let out = propagate_sdf(&init, &d, (&mx, &my), t, &spec).unwrap();
        let down = out.vector.marginal(0)[0];
        assert!(down > 1.0 - 1e-6);
    }

    #[test]
    fn herald_at_zero_time() {
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let d = drive();
        let init = SimState::sdf_ground(TruncationSpec::new(10, 1e-9).unwrap()).unwrap();
        let spec = PropagationSpec::for_sdf(&d, (&mx, &my));
        let (state, p) = herald_ecs(&init, &d, (&mx, &my), 0.0, &spec).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((state.amplitudes()[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_herald() {
        // start in |up>: at t = 0 the herald onto |down> has zero probability
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let trunc = TruncationSpec::new(6, 1e-9).unwrap();
        let init = SimState { vector: FockVector::basis(&[2, 6, 6], &[1, 0, 0]).unwrap(), time: 0.0, trunc };
        let spec = PropagationSpec::for_sdf(&drive(), (&mx, &my));
        assert!(matches!(
            herald_ecs(&init, &drive(), (&mx, &my), 0.0, &spec),
            Err(Error::DegenerateHerald(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let (mx, my) = (ModeParams::nominal_x(), ModeParams::nominal_y());
        let d = drive();
        let init = SimState::sdf_ground(TruncationSpec::new(4, 1e-9).unwrap()).unwrap();
        let spec = PropagationSpec::for_sdf(&d, (&mx, &my));
        let err = propagate_sdf(&init, &d, (&mx, &my), 30e-6, &spec).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
    }

    #[test]
    fn marginal_of_product_state() {
        let v = FockVector::product(&[
            coherent_amplitudes(C64::new(0.3, 0.0), 12),
            vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)],
        ])
        .unwrap();
        let m = marginal_distribution(&v, 1);
        assert!((m.populations[0] - 0.36).abs() < 1e-12);
        assert!((m.populations[1] - 0.64).abs() < 1e-12);
    }

    #[test]
    fn ms_budget_enforced() {
        let (set, drive) = crate::ms::nominal_gate();
        let setup = MsOracleSetup::all_modes(&set, &drive);
        assert!(matches!(setup.ground_state(), Err(Error::Capacity { .. })));
        let init = setup.clone().with_budget(usize::MAX).ground_state().unwrap();
        let spec = PropagationSpec::for_ms(&set, &drive, &setup.active);
        let err = propagate_ms(&init, &set, &drive, &setup, 1e-6, &spec).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn ms_initial_populations() {
        let (set, drive) = crate::ms::nominal_gate();
        let setup = MsOracleSetup::nearest_two(&set, &drive).with_budget(10_000);
        let init = setup.ground_state().unwrap();
        let p = ms_populations_of(&init);
        assert_eq!((p.p_dd, p.p_du_plus_ud, p.p_uu), (1.0, 0.0, 0.0));
        assert_eq!(setup.active, vec![ChainModeLabel::XTilt, ChainModeLabel::XCm]);
    }

    #[test]
    fn analysis_pulse_on_bell_state() {
        // (|dd> + i|uu>)/sqrt(2)
        let s = 1.0 / 2f64.sqrt();
        let psi = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, s)];
        let rho = DMatrix::from_fn(4, 4, |i, j| psi[i] * psi[j].conj());
        let vals: Vec<f64> = (0..16).map(|k| parity_after_analysis(&rho, k as f64 * PI / 8.0)).collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 1.0).abs() < 1e-12 && (min + 1.0).abs() < 1e-12);
    }
}
