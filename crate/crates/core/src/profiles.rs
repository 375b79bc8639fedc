//! Uniformly sampled signals and drive-cycle current profiles.
//!
//! Every cross-signal operation requires an exact grid match (same `t0`,
//! `dt` and length); nothing is realigned implicitly. Resampling happens
//! once, at ingestion.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled scalar signal. Sample `k` sits at `t0 + k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidSeries(format!("dt must be positive and finite, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidSeries(format!("t0 must be finite, got {t0}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSeries("series has no samples".into()));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "sample {k} is not finite ({})",
                samples[k]
            )));
        }
        Ok(Self { t0, dt, samples })
    }

    /// Constant-valued series on the given grid.
    pub fn constant(t0: f64, dt: f64, len: usize, value: f64) -> Result<Self> {
        Self::new(t0, dt, vec![value; len])
    }

    /// All-zero series on the same grid as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            samples: vec![0.0; self.samples.len()],
        }
    }

    /// Build a series on the same grid as `self` from new values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::InvalidSeries(format!(
                "expected {} samples, got {}",
                self.samples.len(),
                samples.len()
            )));
        }
        Self::new(self.t0, self.dt, samples)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| self.time(k))
    }

    pub fn grid(&self) -> Grid {
        Grid {
            t0: self.t0,
            dt: self.dt,
            len: self.samples.len(),
        }
    }

    /// Linear interpolation at `t`, clamped to the end samples.
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.samples.len();
        if n == 1 {
            return self.samples[0];
        }
        let pos = (t - self.t0) / self.dt;
        if pos <= 0.0 {
            return self.samples[0];
        }
        let last = (n - 1) as f64;
        if pos >= last {
            return self.samples[n - 1];
        }
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        if frac == 0.0 {
            return self.samples[k];
        }
        self.samples[k] + frac * (self.samples[k + 1] - self.samples[k])
    }

    /// Fail unless `other` lives on exactly the same grid.
    pub fn ensure_same_grid(&self, other: &TimeSeries) -> Result<()> {
        self.grid().ensure_matches(&other.grid())
    }

    /// Pointwise sum. Grids must match exactly.
    pub fn add(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Pointwise difference `self - other`. Grids must match exactly.
    pub fn sub(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> TimeSeries {
        TimeSeries {
            t0: self.t0,
            dt: self.dt,
            samples: self.samples.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(&self, other: &TimeSeries, f: impl Fn(f64, f64) -> f64) -> Result<TimeSeries> {
        self.ensure_same_grid(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| f(a, b))
            .collect();
        TimeSeries::new(self.t0, self.dt, samples)
    }

    /// Resample onto a uniform grid starting at `t0` with step `dt`
    /// covering `[t0, t_end()]`, by linear interpolation.
    pub fn resample(&self, dt: f64) -> Result<TimeSeries> {
        let times: Vec<f64> = self.times().collect();
        resample_points(&times, &self.samples, dt)
    }

    /// Write as a two-column CSV (`time_s,value`) with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.samples.len() * 24);
        out.push_str("time_s,value\n");
        for (k, v) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time(k), v));
        }
        write_file(path, out.as_bytes())
    }
}

/// Shape of a uniform sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(t0: f64, dt: f64, len: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) || !t0.is_finite() || len == 0 {
            return Err(Error::InvalidSeries(format!(
                "invalid grid t0={t0} dt={dt} len={len}"
            )));
        }
        Ok(Self { t0, dt, len })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn ensure_matches(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grid(t0={}, dt={}, len={})", self.t0, self.dt, self.len)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(bytes).map_err(io_err)
}

/// Linear interpolation of scattered, strictly increasing samples onto a
/// uniform grid covering `[times[0], times[last]]`.
fn resample_points(times: &[f64], values: &[f64], dt: f64) -> Result<TimeSeries> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidSeries(format!("target dt must be positive, got {dt}")));
    }
    let t_first = times[0];
    let span = times[times.len() - 1] - t_first;
    // Tolerate a grid point landing a hair past the last row through rounding.
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t_first + k as f64 * dt;
        while j + 2 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (times[j], times[j + 1]);
        let v = if t <= ta {
            values[j]
        } else if t >= tb {
            values[j + 1]
        } else {
            values[j] + (t - ta) / (tb - ta) * (values[j + 1] - values[j])
        };
        out.push(v);
    }
    TimeSeries::new(t_first, dt, out)
}

/// Load a two-column `time_s,value` CSV and resample it onto a uniform grid
/// with step `target_dt`.
pub fn load_csv(path: impl AsRef<Path>, target_dt: f64) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // Line numbers are 1-based with the header on line 1.
        let row = idx + 2;
        let csv_err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            row,
            message,
        };
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        if record.len() < 2 {
            return Err(csv_err(format!("expected 2 columns, found {}", record.len())));
        }
        let parse = |i: usize, what: &str| -> Result<f64> {
            let cell = &record[i];
            match f64::from_str(cell) {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(csv_err(format!("{what} cell `{cell}` is not a finite number"))),
            }
        };
        let t = parse(0, "time")?;
        let v = parse(1, "value")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(csv_err(format!(
                    "time {t} is not strictly greater than previous time {prev}"
                )));
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.len() < 2 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            row: times.len() + 1,
            message: format!("need at least 2 data rows, found {}", times.len()),
        });
    }
    resample_points(&times, &values, target_dt)
}

/// Built-in synthetic current profiles standing in for drive cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `bias` everywhere.
    Constant,
    /// Bias plus three sinusoids (periods 600 s, 137 s, 31 s) with seeded phases.
    SinMix,
    /// Bias plus piecewise-constant pulses of seeded level and width (5-40 s).
    PulseTrain,
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "sin_mix" => Ok(Self::SinMix),
            "pulse_train" => Ok(Self::PulseTrain),
            other => Err(Error::UnknownProfileKind(other.to_string())),
        }
    }
}

const SIN_PERIODS_S: [f64; 3] = [600.0, 137.0, 31.0];
const SIN_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

/// Deterministic synthetic profile on `[0, duration]` with step `dt`.
///
/// The fluctuating part of `sin_mix` and `pulse_train` is shifted to have
/// exactly zero mean over the applied intervals (every sample but the last),
/// so the charge moved by the profile is `bias * duration` regardless of seed.
/// `amplitude` bounds the fluctuation before that shift.
pub fn synthetic_profile(
    kind: ProfileKind,
    amplitude: f64,
    bias: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidSeries(format!("dt must be positive, got {dt}")));
    }
    if !(duration.is_finite() && duration > dt) {
        return Err(Error::InvalidSeries(format!(
            "duration {duration} must exceed dt {dt}"
        )));
    }
    if !amplitude.is_finite() || !bias.is_finite() {
        return Err(Error::InvalidSeries("amplitude and bias must be finite".into()));
    }
    let n = (duration / dt).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut fluct: Vec<f64> = match kind {
        ProfileKind::Constant => vec![0.0; n],
        ProfileKind::SinMix => {
            let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
            let phases: Vec<f64> = (0..3).map(|_| phase.sample(&mut rng)).collect();
            (0..n)
                .map(|k| {
                    let t = k as f64 * dt;
                    SIN_PERIODS_S
                        .iter()
                        .zip(SIN_WEIGHTS)
                        .zip(&phases)
                        .map(|((p, w), ph)| w * (2.0 * PI * t / p + ph).sin())
                        .sum::<f64>()
                        * amplitude
                })
                .collect()
        }
        ProfileKind::PulseTrain => {
            let level = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            let width = Uniform::new_inclusive(5.0, 40.0).expect("valid range");
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let l = level.sample(&mut rng) * amplitude;
                let w = ((width.sample(&mut rng) / dt).round() as usize).max(1);
                out.extend(std::iter::repeat_n(l, w.min(n - out.len())));
            }
            out
        }
    };

    let applied = n - 1;
    let mean = fluct[..applied].iter().sum::<f64>() / applied as f64;
    if mean != 0.0 {
        fluct.iter_mut().for_each(|v| *v -= mean);
    }
    TimeSeries::new(0.0, dt, fluct.into_iter().map(|v| bias + v).collect())
}
