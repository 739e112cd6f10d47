//! Synthetic measurements, acquisition schedules and the on-disk formats.
//!
//! Traces are CSV with `# label:` / `# key=value` preamble lines and columns
//! `t_us,p_up,shots`. Configurations and fit reports are TOML documents that
//! carry a `schema` string. Every write goes through a temporary file that is
//! renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of the generator behind every seeded draw.
pub const RNG_ALGORITHM: &str = "chacha20";
pub const DEFAULT_SHOTS: u32 = 500;
pub const DEFAULT_EPS_UP: f64 = 0.03;

const US: f64 = 1e-6;

/// Seeded generator used throughout the crate.
pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RabiTrace {
    /// Seconds, ascending.
    pub times: Vec<f64>,
    pub p_up: Vec<f64>,
    pub shots: Vec<u32>,
    pub label: String,
    pub metadata: BTreeMap<String, String>,
}

impl RabiTrace {
    pub fn new(times: Vec<f64>, p_up: Vec<f64>, shots: Vec<u32>, label: impl Into<String>) -> Result<Self> {
        let t = Self { times, p_up, shots, label: label.into(), metadata: BTreeMap::new() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.p_up.len() || self.times.len() != self.shots.len() {
            return Err(Error::InvalidInput(format!(
                "trace columns differ in length: {} / {} / {}",
                self.times.len(),
                self.p_up.len(),
                self.shots.len()
            )));
        }
        if self.times.iter().any(|t| !t.is_finite()) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("trace times must be finite and strictly ascending".into()));
        }
        if let Some(p) = self.p_up.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("p_up value {p} outside [0, 1]")));
        }
        if self.shots.contains(&0) {
            return Err(Error::InvalidInput("shot counts must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// Parse a metadata entry as a number.
    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(|v| v.trim().parse().ok())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::new();
        if !self.label.is_empty() {
            out.push_str(&format!("# label: {}\n", single_line(&self.label)));
        }
        for (k, v) in &self.metadata {
            if k.contains('=') || k.trim() != k || k.is_empty() {
                return Err(Error::InvalidInput(format!("metadata key {k:?} is not writable")));
            }
            out.push_str(&format!("# {k}={}\n", single_line(v)));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t_us", "p_up", "shots"]).map_err(csv_err)?;
        for i in 0..self.len() {
            w.write_record([
                (self.times[i] / US).to_string(),
                self.p_up[i].to_string(),
                self.shots[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut label = String::new();
        let mut metadata = BTreeMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                if let Some(l) = c.strip_prefix("label:") {
                    label = l.trim().to_string();
                } else if let Some((k, v)) = c.split_once('=') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else if !line.trim().is_empty() {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let headers = r.headers().map_err(csv_err)?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse(format!("missing column {name}")))
        };
        let (ct, cp, cs) = (col("t_us")?, col("p_up")?, col("shots")?);
        let (mut times, mut p_up, mut shots) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
            let num = |c: usize| -> Result<f64> {
                field(c).parse().map_err(|_| Error::Parse(format!("row {}: bad number {:?}", i + 1, field(c))))
            };
            times.push(num(ct)? * US);
            p_up.push(num(cp)?);
            shots.push(
                field(cs).parse().map_err(|_| Error::Parse(format!("row {}: bad shot count", i + 1)))?,
            );
        }
        let trace = Self { times, p_up, shots, label, metadata };
        trace.validate()?;
        Ok(trace)
    }
}

fn single_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Parity measurement at one SDF duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityPoint {
    /// Seconds.
    pub t: f64,
    pub parity: f64,
    pub error: f64,
}

pub fn parity_points_to_csv(points: &[ParityPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_us", "parity", "error"]).map_err(csv_err)?;
    for p in points {
        w.write_record([(p.t / US).to_string(), p.parity.to_string(), p.error.to_string()]).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parity_points_from_csv(text: &str) -> Result<Vec<ParityPoint>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).flat_map(|l| [l, "\n"]).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad parity row {rec:?}")))
        };
        out.push(ParityPoint { t: f(0)? * US, parity: f(1)?, error: f(2)? });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub shots: u32,
    pub eps_up: f64,
    pub eps_down: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { shots: DEFAULT_SHOTS, eps_up: DEFAULT_EPS_UP, eps_down: 0.0, seed: 0 }
    }
}

impl NoiseModel {
    pub fn new(shots: u32, eps_up: f64, eps_down: f64, seed: u64) -> Result<Self> {
        let m = Self { shots, eps_up, eps_down, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::InvalidInput("shots must be positive".into()));
        }
        for (name, e) in [("eps_up", self.eps_up), ("eps_down", self.eps_down)] {
            if !(0.0..=0.2).contains(&e) {
                return Err(Error::InvalidInput(format!("{name} = {e} outside [0, 0.2]")));
            }
        }
        Ok(())
    }

    /// Probability of reading "up" given the true up probability.
    pub fn distort(&self, p: f64) -> f64 {
        ((1.0 - self.eps_up) * p + self.eps_down * (1.0 - p)).clamp(0.0, 1.0)
    }
}

/// Draw `k ~ Binomial(shots, distort(p(t)))` per time and report `k / shots`.
pub fn synthesize_trace<F>(model: F, times: &[f64], noise: &NoiseModel, label: &str) -> Result<RabiTrace>
where
    F: Fn(f64) -> f64,
{
    noise.validate()?;
    let mut g = rng(noise.seed);
    let mut p_up = Vec::with_capacity(times.len());
    for &t in times {
        let p = model(t);
        if !(-1e-12..=1.0 + 1e-12).contains(&p) {
            return Err(Error::Domain(format!("model probability {p} at t={t}")));
        }
        let q = noise.distort(p.clamp(0.0, 1.0));
        let b = Binomial::new(noise.shots as u64, q).map_err(|e| Error::Domain(e.to_string()))?;
        p_up.push(b.sample(&mut g) as f64 / noise.shots as f64);
    }
    let trace = RabiTrace::new(times.to_vec(), p_up, vec![noise.shots; times.len()], label)?;
    Ok(trace
        .with_meta("rng", RNG_ALGORITHM)
        .with_meta("seed", noise.seed)
        .with_meta("eps_up", noise.eps_up)
        .with_meta("eps_down", noise.eps_down))
}

/// Exact model values with the readout distortion but no projection noise.
pub fn noiseless_trace<F>(model: F, times: &[f64], noise: &NoiseModel, label: &str) -> Result<RabiTrace>
where
    F: Fn(f64) -> f64,
{
    noise.validate()?;
    let p_up = times.iter().map(|&t| noise.distort(model(t).clamp(0.0, 1.0))).collect();
    Ok(RabiTrace::new(times.to_vec(), p_up, vec![noise.shots; times.len()], label)?
        .with_meta("eps_up", noise.eps_up)
        .with_meta("eps_down", noise.eps_down))
}

/// Add seeded Gaussian noise of width `sigma` to exact parity values.
pub fn synthesize_parity<F>(model: F, times: &[f64], sigma: f64, seed: u64) -> Result<Vec<ParityPoint>>
where
    F: Fn(f64) -> f64,
{
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("parity noise width must be positive".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut g = rng(seed);
    Ok(times.iter().map(|&t| ParityPoint { t, parity: model(t) + normal.sample(&mut g), error: sigma }).collect())
}

/// Acquisition order over a set of SDF durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Seconds.
    pub t_sdf_values: Vec<f64>,
    pub order: Vec<usize>,
    pub seed: u64,
}

impl Schedule {
    pub fn ordered_values(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.t_sdf_values[i]).collect()
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.t_sdf_values.len()];
        self.order.len() == seen.len()
            && self.order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }
}

/// Fisher-Yates shuffle of the indices of `values`.
pub fn randomized_schedule(values: &[f64], seed: u64) -> Schedule {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let mut g = rng(seed);
    for i in (1..order.len()).rev() {
        let j = g.random_range(0..=i);
        order.swap(i, j);
    }
    Schedule { t_sdf_values: values.to_vec(), order, seed }
}

/// Published acquisition sequences of the parity data sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PublishedSequence {
    /// 23 durations, `R = -2/3`.
    RatioMinusTwoThirds,
    /// 19 durations, `R = -2`.
    RatioMinusTwo,
}

impl PublishedSequence {
    pub fn microseconds(self) -> &'static [f64] {
        match self {
            Self::RatioMinusTwoThirds => &[
                110.0, 0.0, 120.0, 190.0, 20.0, 65.0, 60.0, 115.0, 10.0, 80.0, 140.0, 100.0, 50.0, 160.0, 70.0,
                150.0, 130.0, 105.0, 90.0, 40.0, 30.0, 170.0, 180.0,
            ],
            Self::RatioMinusTwo => &[
                65.0, 110.0, 90.0, 70.0, 100.0, 55.0, 60.0, 40.0, 30.0, 80.0, 0.0, 120.0, 10.0, 50.0, 45.0, 20.0,
                160.0, 180.0, 140.0,
            ],
        }
    }

    /// Schedule in acquisition order; `order` is the identity.
    pub fn schedule(self) -> Schedule {
        let values: Vec<f64> = self.microseconds().iter().map(|v| v * US).collect();
        let order = (0..values.len()).collect();
        Schedule { t_sdf_values: values, order, seed: 0 }
    }
}

/// Write `bytes` to a sibling temporary file and rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &RabiTrace) -> Result<()> {
    atomic_write(path, trace.to_csv_string()?.as_bytes())
}

pub fn read_trace(path: &Path) -> Result<RabiTrace> {
    RabiTrace::from_csv_str(&fs::read_to_string(path)?)
}

pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_toml_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, to_toml_string(value)?.as_bytes())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_toml_str(&fs::read_to_string(path)?)
}

/// Check that a document's `schema` field names the expected record kind.
pub fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Parse(format!("schema {found:?}, expected {expected:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_gives_zeros() {
        let noise = NoiseModel::new(500, 0.03, 0.0, 7).unwrap();
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 1e-6).collect();
        let tr = synthesize_trace(|_| 0.0, &t, &noise, "zero").unwrap();
        assert!(tr.p_up.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn readout_cap() {
        let noise = NoiseModel::new(u32::MAX, 0.03, 0.0, 1).unwrap();
        let tr = synthesize_trace(|_| 1.0, &[0.0, 1e-6], &noise, "cap").unwrap();
        assert!(tr.p_up.iter().all(|p| (p - 0.97).abs() < 1e-4));
    }

    #[test]
    fn seeded_traces_repeat() {
        let noise = NoiseModel { seed: 42, ..NoiseModel::default() };
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 2e-6).collect();
        let a = synthesize_trace(|t| (t * 1e5).sin().powi(2), &t, &noise, "a").unwrap();
        let b = synthesize_trace(|t| (t * 1e5).sin().powi(2), &t, &noise, "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metadata["rng"], RNG_ALGORITHM);
    }

    #[test]
    fn noise_bounds() {
        assert!(NoiseModel::new(10, 0.25, 0.0, 0).is_err());
        assert!(NoiseModel::new(0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn single_value_schedule() {
        let s = randomized_schedule(&[5e-6], 3);
        assert_eq!(s.order, vec![0]);
    }

    #[test]
    fn schedules_are_permutations() {
        let vals: Vec<f64> = (0..40).map(|i| i as f64).collect();
        for seed in 0..20 {
            let s = randomized_schedule(&vals, seed);
            assert!(s.is_permutation());
            assert_eq!(s, randomized_schedule(&vals, seed));
        }
    }

    #[test]
    fn published_sequences() {
        let a = PublishedSequence::RatioMinusTwoThirds.microseconds();
        assert_eq!(a.len(), 23);
        assert_eq!(a[0], 110.0);
        let b = PublishedSequence::RatioMinusTwo.microseconds();
        assert_eq!(b.len(), 19);
        assert_eq!(&b[17..], &[180.0, 140.0]);
        assert!(PublishedSequence::RatioMinusTwo.schedule().is_permutation());
    }

    #[test]
    fn trace_csv_round_trip() {
        let tr = RabiTrace::new(vec![0.0, 12.5e-6, 40e-6], vec![0.0, 0.25, 0.97], vec![500, 500, 100], "bsb Y")
            .unwrap()
            .with_meta("R", "-0.6666666666666666")
            .with_meta("axis", "Y");
        let back = RabiTrace::from_csv_str(&tr.to_csv_string().unwrap()).unwrap();
        assert_eq!(back.label, tr.label);
        assert_eq!(back.metadata, tr.metadata);
        assert_eq!(back.p_up, tr.p_up);
        assert_eq!(back.shots, tr.shots);
        for (a, b) in back.times.iter().zip(&tr.times) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn bad_traces_rejected() {
        assert!(RabiTrace::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![1, 1], "").is_err());
        assert!(RabiTrace::new(vec![0.0], vec![1.5], vec![1], "").is_err());
        assert!(RabiTrace::from_csv_str("t_us,p_up\n0,0\n").is_err());
        assert!(RabiTrace::from_csv_str("t_us,p_up,shots\n0,x,5\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn parity_csv_round_trip() {
        let pts = vec![ParityPoint { t: 0.0, parity: 1.0, error: 0.05 }, ParityPoint { t: 3e-5, parity: -0.2, error: 0.1 }];
        let back = parity_points_from_csv(&parity_points_to_csv(&pts).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].parity, -0.2);
        assert!((back[1].t - 3e-5).abs() < 1e-18);
    }
}
