//! Truncated Fock-space numerics.
//!
//! Number-state vectors over one or more oscillator factors, matrix elements
//! of the displacement operator `<m|D(alpha)|n>`, associated Laguerre
//! polynomials and the exact blue-sideband Rabi frequencies built from them.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Phase-space amplitude (alpha, beta), dimensionless.
pub type ComplexAmplitude = C64;

pub const DEFAULT_TAIL_TOL: f64 = 1e-9;

/// Largest polynomial order accepted by [`laguerre_assoc`].
pub const MAX_LAGUERRE_ORDER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSpec {
    pub dim_per_mode: usize,
    pub tail_tol: f64,
}

impl TruncationSpec {
    pub fn new(dim_per_mode: usize, tail_tol: f64) -> Result<Self> {
        if dim_per_mode < 2 {
            return Err(Error::InvalidInput(format!(
                "dim_per_mode must be at least 2, got {dim_per_mode}"
            )));
        }
        if !(0.0..1.0).contains(&tail_tol) {
            return Err(Error::InvalidInput(format!(
                "tail_tol must lie in [0, 1), got {tail_tol}"
            )));
        }
        Ok(Self { dim_per_mode, tail_tol })
    }

    /// Default sizing for a coherent amplitude of magnitude `mag`:
    /// `ceil(|a|^2 + 6|a| + 10)` levels.
    pub fn for_amplitude(mag: f64) -> Self {
        let mag = mag.abs();
        let dim = (mag * mag + 6.0 * mag + 10.0).ceil() as usize;
        Self { dim_per_mode: dim.max(2), tail_tol: DEFAULT_TAIL_TOL }
    }
}

/// Associated Laguerre polynomial `L_n^k(x)` by upward three-term recurrence in `n`.
pub fn laguerre_assoc(n: usize, k: usize, x: f64) -> Result<f64> {
    if n > MAX_LAGUERRE_ORDER {
        return Err(Error::Domain(format!(
            "Laguerre order {n} exceeds {MAX_LAGUERRE_ORDER}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("Laguerre argument {x} is not finite")));
    }
    let k = k as f64;
    let mut prev = 1.0;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = 1.0 + k - x;
    for m in 1..n {
        let m = m as f64;
        let next = ((2.0 * m + 1.0 + k - x) * cur - (m + k) * prev) / (m + 1.0);
        prev = cur;
        cur = next;
    }
    if !cur.is_finite() {
        return Err(Error::Domain(format!(
            "L_{n}^{k}({x}) overflows double precision"
        )));
    }
    Ok(cur)
}

/// Blue-sideband Rabi frequency `Omega_{n+1,n}` including all orders in the
/// Lamb-Dicke factor.
pub fn sideband_rabi(n: usize, omega0: f64, eta: f64) -> f64 {
    let x = eta * eta;
    // n stays far below MAX_LAGUERRE_ORDER for any physical trace
    let lag = laguerre_assoc(n, 1, x).unwrap_or(f64::NAN);
    omega0 * (-x / 2.0).exp() * eta / ((n + 1) as f64).sqrt() * lag
}

/// Poisson weight `e^{-x} x^n / n!` of a coherent state with `|alpha|^2 = x`.
pub fn coherent_population(alpha_mag2: f64, n: usize) -> f64 {
    if alpha_mag2 == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (1..=n).map(|j| (j as f64).ln()).sum();
    (-alpha_mag2 + n as f64 * alpha_mag2.ln() - ln_fact).exp()
}

/// Coherent-state probability mass on levels `>= from`.
pub fn coherent_tail_mass(alpha_mag2: f64, from: usize) -> f64 {
    if from == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut term = coherent_population(alpha_mag2, from);
    let mut n = from;
    loop {
        total += term;
        n += 1;
        term *= alpha_mag2 / n as f64;
        if term <= total * 1e-17 || term == 0.0 {
            break;
        }
        if n > from + 100_000 {
            break;
        }
    }
    total
}

/// Single matrix element `<m|D(alpha)|n>`.
///
/// For `m >= n` this is `sqrt(n!/m!) alpha^(m-n) e^{-|alpha|^2/2} L_n^(m-n)(|alpha|^2)`;
/// the upper triangle follows from `d_mn(alpha) = conj(d_nm(-alpha))`.
pub fn displacement_element(alpha: C64, m: usize, n: usize) -> Result<C64> {
    if m < n {
        return Ok(displacement_element(-alpha, n, m)?.conj());
    }
    let x = alpha.norm_sqr();
    let mut coeff = C64::new(1.0, 0.0);
    for j in (n + 1)..=m {
        coeff *= alpha / (j as f64).sqrt();
    }
    let lag = laguerre_assoc(n, m - n, x)?;
    Ok(coeff * ((-x / 2.0).exp() * lag))
}

#[derive(Clone, Debug)]
pub struct DisplacementMatrix {
    pub entries: DMatrix<C64>,
    pub amplitude: ComplexAmplitude,
    pub truncation: TruncationSpec,
}

impl DisplacementMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.entries[(m, n)]
    }
}

/// Number-state representation of `D(alpha)` on `trunc.dim_per_mode` levels.
///
/// Fails when the coherent tail on the top level exceeds `trunc.tail_tol`.
pub fn displacement_matrix(alpha: ComplexAmplitude, trunc: &TruncationSpec) -> Result<DisplacementMatrix> {
    let dim = trunc.dim_per_mode;
    if dim > MAX_LAGUERRE_ORDER + 1 {
        return Err(Error::Domain(format!(
            "dimension {dim} exceeds the Laguerre order limit"
        )));
    }
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite displacement amplitude".into()));
    }
    let tail = coherent_tail_mass(alpha.norm_sqr(), dim - 1);
    if tail > trunc.tail_tol {
        return Err(Error::Truncation {
            tail,
            tol: trunc.tail_tol,
            context: format!("displacement |alpha|={:.4} at dim {dim}", alpha.norm()),
        });
    }
    let mut entries = DMatrix::<C64>::zeros(dim, dim);
    for n in 0..dim {
        for m in n..dim {
            entries[(m, n)] = displacement_element(alpha, m, n)?;
            if m != n {
                entries[(n, m)] = displacement_element(alpha, n, m)?;
            }
        }
    }
    Ok(DisplacementMatrix { entries, amplitude: alpha, truncation: *trunc })
}

/// Amplitudes over a tensor product of Fock factors, row-major with the last
/// factor varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    amplitudes: Vec<C64>,
    factor_dims: Vec<usize>,
}

impl FockVector {
    pub fn new(amplitudes: Vec<C64>, factor_dims: Vec<usize>) -> Result<Self> {
        if factor_dims.is_empty() || factor_dims.contains(&0) {
            return Err(Error::InvalidInput("factor dimensions must be positive".into()));
        }
        let len: usize = factor_dims.iter().product();
        if amplitudes.len() != len {
            return Err(Error::InvalidInput(format!(
                "{} amplitudes for a space of dimension {len}",
                amplitudes.len()
            )));
        }
        Ok(Self { amplitudes, factor_dims })
    }

    /// Product basis state `|i_0>|i_1>...`.
    pub fn basis(factor_dims: &[usize], indices: &[usize]) -> Result<Self> {
        if factor_dims.len() != indices.len() {
            return Err(Error::InvalidInput("one index per factor required".into()));
        }
        let mut flat = 0;
        for (&d, &i) in factor_dims.iter().zip(indices) {
            if i >= d {
                return Err(Error::InvalidInput(format!("level {i} outside dimension {d}")));
            }
            flat = flat * d + i;
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); factor_dims.iter().product()];
        amplitudes[flat] = C64::new(1.0, 0.0);
        Self::new(amplitudes, factor_dims.to_vec())
    }

    /// Tensor product of single-factor vectors.
    pub fn product(factors: &[Vec<C64>]) -> Result<Self> {
        let dims: Vec<usize> = factors.iter().map(Vec::len).collect();
        let mut amplitudes = vec![C64::new(1.0, 0.0)];
        for f in factors {
            amplitudes = amplitudes
                .iter()
                .flat_map(|&a| f.iter().map(move |&b| a * b))
                .collect();
        }
        Self::new(amplitudes, dims)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(C64::norm_sqr).sum()
    }

    pub fn normalize(&mut self) -> f64 {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            for a in &mut self.amplitudes {
                *a /= norm;
            }
        }
        norm
    }

    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Apply a square matrix to one factor.
    pub fn apply_to_factor(&mut self, factor: usize, op: &DMatrix<C64>) -> Result<()> {
        let d = *self
            .factor_dims
            .get(factor)
            .ok_or_else(|| Error::InvalidInput(format!("no factor {factor}")))?;
        if op.nrows() != d || op.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "operator is {}x{}, factor {factor} has dimension {d}",
                op.nrows(),
                op.ncols()
            )));
        }
        apply_factor_map(&mut self.amplitudes, &self.factor_dims, factor, |src, dst| {
            for (m, out) in dst.iter_mut().enumerate() {
                *out = (0..d).map(|n| op[(m, n)] * src[n]).sum();
            }
        });
        Ok(())
    }

    /// Reduced level populations of one factor.
    pub fn marginal(&self, factor: usize) -> Vec<f64> {
        let d = self.factor_dims[factor];
        let inner: usize = self.factor_dims[factor + 1..].iter().product();
        let mut out = vec![0.0; d];
        for (idx, a) in self.amplitudes.iter().enumerate() {
            out[(idx / inner) % d] += a.norm_sqr();
        }
        out
    }

    /// Probability on the highest retained level of a factor.
    pub fn top_level_mass(&self, factor: usize) -> f64 {
        let m = self.marginal(factor);
        m[m.len() - 1]
    }
}

/// Apply a linear map to the `factor` index of a row-major tensor stored in
/// `data`. `map(src, dst)` receives one fibre at a time.
pub(crate) fn apply_factor_map<F>(data: &mut [C64], dims: &[usize], factor: usize, mut map: F)
where
    F: FnMut(&[C64], &mut [C64]),
{
    let d = dims[factor];
    let inner: usize = dims[factor + 1..].iter().product();
    let outer: usize = dims[..factor].iter().product();
    let mut src = vec![C64::new(0.0, 0.0); d];
    let mut dst = vec![C64::new(0.0, 0.0); d];
    for o in 0..outer {
        let base = o * d * inner;
        for i in 0..inner {
            for (a, s) in src.iter_mut().enumerate() {
                *s = data[base + a * inner + i];
            }
            map(&src, &mut dst);
            for (a, v) in dst.iter().enumerate() {
                data[base + a * inner + i] = *v;
            }
        }
    }
}

/// Coherent-state amplitude vector `e^{-|a|^2/2} a^n / sqrt(n!)` on `dim` levels.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(dim);
    let mut term = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            term *= alpha / (n as f64).sqrt();
        }
        out.push(term);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_laguerre(n: usize, k: usize, x: f64) -> (f64, f64) {
        // L_n^k(x) = sum_j (-1)^j C(n+k, n-j) x^j / j!
        let binom = |a: usize, b: usize| -> f64 {
            (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
        };
        let mut fact = 1.0;
        let mut sum = 0.0;
        let mut mag = 0.0;
        for j in 0..=n {
            if j > 0 {
                fact *= j as f64;
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let term = binom(n + k, n - j) * x.powi(j as i32) / fact;
            sum += sign * term;
            mag += term;
        }
        (sum, mag)
    }

    #[test]
    fn laguerre_low_orders() {
        assert_eq!(laguerre_assoc(0, 1, 0.0121).unwrap(), 1.0);
        assert!((laguerre_assoc(1, 1, 0.0121).unwrap() - 1.9879).abs() < 1e-15);
        assert!((laguerre_assoc(2, 1, 0.25).unwrap() - 2.28125).abs() < 1e-14);
        assert!((series_laguerre(2, 1, 0.25).0 - 2.28125).abs() < 1e-14);
    }

    #[test]
    fn laguerre_matches_series() {
        for n in 0..=20 {
            for k in 0..4 {
                for &x in &[0.0, 0.01, 0.3, 1.0, 2.5, 5.0, 10.0] {
                    let a = laguerre_assoc(n, k, x).unwrap();
                    let (b, mag) = series_laguerre(n, k, x);
                    // the alternating series loses digits to cancellation
                    let tol = 1e-14 * mag.max(1.0) * (n + 1) as f64;
                    assert!((a - b).abs() <= tol, "n={n} k={k} x={x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn laguerre_domain_errors() {
        assert!(matches!(laguerre_assoc(201, 0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(laguerre_assoc(3, 0, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn sideband_examples() {
        let eta = 0.11;
        assert!((sideband_rabi(0, 1.0, eta) - eta * (-eta * eta / 2.0_f64).exp()).abs() < 1e-15);
        assert!((sideband_rabi(0, 1.0, eta) - 0.109_335).abs() < 5e-6);
        let expected = (-eta * eta / 2.0_f64).exp() * eta / 2f64.sqrt() * (2.0 - eta * eta);
        assert!((sideband_rabi(1, 1.0, eta) - expected).abs() < 1e-15);
        assert!((sideband_rabi(1, 1.0, eta) - 0.153_70).abs() < 2e-5);
        assert_eq!(sideband_rabi(0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn sideband_lamb_dicke_limit() {
        let eta = 1e-4;
        for n in 0..5 {
            let ld = eta * ((n + 1) as f64).sqrt();
            assert!((sideband_rabi(n, 1.0, eta) - ld).abs() / ld < 1e-6);
        }
    }

    #[test]
    fn coherent_population_examples() {
        assert_eq!(coherent_population(0.0, 0), 1.0);
        assert!((coherent_population(2.25, 0) - 0.105_399).abs() < 1e-6);
        assert!((coherent_population(2.25, 2) - 0.266_792).abs() < 1e-6);
        let total: f64 = (0..60).map(|n| coherent_population(2.25, n)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn displacement_examples() {
        let t = TruncationSpec::new(12, 1e-3).unwrap();
        let d0 = displacement_matrix(C64::new(0.0, 0.0), &t).unwrap();
        for m in 0..12 {
            for n in 0..12 {
                let e = if m == n { 1.0 } else { 0.0 };
                assert!((d0.get(m, n) - e).norm() < 1e-15);
            }
        }
        let t = TruncationSpec::new(40, 1e-9).unwrap();
        let d1 = displacement_matrix(C64::new(1.0, 0.0), &t).unwrap();
        assert!((d1.get(0, 0).re - (-0.5f64).exp()).abs() < 1e-15);
        assert!(d1.get(1, 1).norm() < 1e-15);
    }

    #[test]
    fn displacement_tail_error() {
        let t = TruncationSpec::new(6, 1e-9).unwrap();
        let err = displacement_matrix(C64::new(2.0, 0.0), &t).unwrap_err();
        match err {
            Error::Truncation { tail, tol, .. } => {
                assert!(tail > tol);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_column_is_coherent_state() {
        let alpha = C64::new(0.7, -1.1);
        let t = TruncationSpec::for_amplitude(alpha.norm());
        let d = displacement_matrix(alpha, &t).unwrap();
        let coh = coherent_amplitudes(alpha, t.dim_per_mode);
        for (n, c) in coh.iter().enumerate() {
            assert!((d.get(n, 0) - c).norm() < 1e-10);
            assert!((d.get(n, 0).norm_sqr() - coherent_population(alpha.norm_sqr(), n)).abs() < 1e-10);
        }
    }

    #[test]
    fn truncation_sizing() {
        assert_eq!(TruncationSpec::for_amplitude(0.0).dim_per_mode, 10);
        assert_eq!(TruncationSpec::for_amplitude(2.5).dim_per_mode, 32);
        assert!(coherent_tail_mass(6.25, 31) < 1e-10);
        assert!(TruncationSpec::new(1, 0.0).is_err());
        assert!(TruncationSpec::new(4, 1.0).is_err());
    }

    #[test]
    fn fock_vector_ops() {
        let v = FockVector::basis(&[2, 3], &[1, 2]).unwrap();
        assert_eq!(v.amplitudes()[5], C64::new(1.0, 0.0));
        assert_eq!(v.marginal(0), vec![0.0, 1.0]);
        assert_eq!(v.marginal(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(v.top_level_mass(1), 1.0);

        let mut p = FockVector::product(&[
            vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)],
            vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        ])
        .unwrap();
        assert!((p.norm_sqr() - 1.0).abs() < 1e-15);
        let flip = DMatrix::from_row_slice(2, 2, &[
            C64::new(0.0, 0.0), C64::new(1.0, 0.0),
            C64::new(1.0, 0.0), C64::new(0.0, 0.0),
        ]);
        p.apply_to_factor(0, &flip).unwrap();
        let m = p.marginal(0);
        assert!((m[0] - 0.64).abs() < 1e-15 && (m[1] - 0.36).abs() < 1e-15);
        assert!(p.apply_to_factor(1, &DMatrix::zeros(3, 3)).is_err());
    }
}
