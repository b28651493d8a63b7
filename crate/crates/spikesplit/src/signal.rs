//! Discretized signals on a uniform periodic time grid.
//!
//! Signals are elements of the discretized space of square-integrable
//! trajectories: real samples on a uniform grid with spacing `dt = 1/fs`,
//! inner product `<u, y> = dt * sum_k u_k * y_k`. Simulations follow a
//! rest-to-rest convention: trajectories start and end at the resting value,
//! which matches the periodicity the spectral operators assume.
//!
//! Transforms use the unnormalized forward DFT and a `1/g` inverse, so
//! Parseval reads `<u, u> = (dt/g) * sum_k |U_k|^2`.
//!
//! Sampling rates are expressed in samples per millisecond throughout; the
//! source material quotes the odd sampling rate in "Hz", but every duration
//! it uses is in milliseconds, so the per-millisecond reading is the only
//! consistent one.

use std::io::{BufRead, Write};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

/// A uniform periodic time grid.
///
/// `len` is `round(duration_ms * fs)` and must be at least 2. All signals
/// that interact must share the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    duration_ms: f64,
    fs: f64,
    len: usize,
}

impl TimeGrid {
    /// Builds a grid spanning `duration_ms` milliseconds sampled at `fs`
    /// samples per millisecond.
    pub fn new(duration_ms: f64, fs: f64) -> Result<Self> {
        if !duration_ms.is_finite() || duration_ms <= 0.0 {
            return Err(Error::config(format!(
                "grid duration must be positive and finite, got {duration_ms}"
            )));
        }
        if !fs.is_finite() || fs <= 0.0 {
            return Err(Error::config(format!(
                "sampling rate must be positive and finite, got {fs}"
            )));
        }
        let len = (duration_ms * fs).round() as usize;
        if len < 2 {
            return Err(Error::config(format!(
                "grid must have at least 2 samples, got {len} (duration {duration_ms} ms at {fs}/ms)"
            )));
        }
        Ok(TimeGrid {
            duration_ms,
            fs,
            len,
        })
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }

    /// Samples per millisecond.
    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Grid spacing in milliseconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    /// Number of samples `g`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of sample `k` in milliseconds.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Iterator over sample times.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.time(k))
    }

    pub(crate) fn check_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: ({} ms, {}/ms, {} samples) vs ({} ms, {}/ms, {} samples)",
                self.duration_ms, self.fs, self.len, other.duration_ms, other.fs, other.len
            )));
        }
        Ok(())
    }
}

/// A real-valued trajectory on a [`TimeGrid`].
///
/// Voltages are in millivolts, currents in normalized current units. All
/// entries are finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    grid: TimeGrid,
    samples: Vec<f64>,
}

impl Signal {
    pub fn new(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidSignal(format!(
                "expected {} samples for the grid, got {}",
                grid.len(),
                samples.len()
            )));
        }
        if let Some(k) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSignal(format!(
                "non-finite sample {} at index {k}",
                samples[k]
            )));
        }
        Ok(Signal { grid, samples })
    }

    pub(crate) fn from_raw(grid: TimeGrid, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), grid.len());
        Signal { grid, samples }
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Signal {
            grid,
            samples: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(t)` over the grid.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let samples = grid.times().map(f).collect();
        Signal { grid, samples }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid inner product `dt * sum_k u_k * y_k`.
    pub fn inner_product(&self, other: &Signal) -> Result<f64> {
        self.grid.check_same(&other.grid, "inner product")?;
        let dot: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.grid.dt() * dot)
    }

    /// Norm induced by the grid inner product.
    pub fn l2_norm(&self) -> f64 {
        let dot: f64 = self.samples.iter().map(|a| a * a).sum();
        (self.grid.dt() * dot).sqrt()
    }

    /// Forward DFT (unnormalized convention).
    pub fn to_spectrum(&self) -> Spectrum {
        Spectrum {
            grid: self.grid,
            coefficients: fft::forward(&self.samples),
        }
    }

    /// Band-limited resampling onto `target`, which must span the same
    /// duration. Upsampling zero-pads the spectrum, downsampling truncates
    /// it; resampling onto the identical grid returns the signal unchanged.
    pub fn resample(&self, target: TimeGrid) -> Result<Signal> {
        let rel = (self.grid.duration_ms - target.duration_ms).abs()
            / self.grid.duration_ms.max(target.duration_ms);
        if rel > 1e-9 {
            return Err(Error::DurationMismatch {
                source_ms: self.grid.duration_ms,
                target_ms: target.duration_ms,
            });
        }
        if target == self.grid {
            return Ok(self.clone());
        }
        let g_old = self.grid.len();
        let g_new = target.len();
        let spec = fft::forward(&self.samples);
        let mut out = vec![Complex64::new(0.0, 0.0); g_new];
        // Deposit coefficient c of signed mode m into the target spectrum.
        let mut deposit = |m: isize, c: Complex64| {
            let half_new = g_new as isize / 2;
            if g_new % 2 == 0 && m.unsigned_abs() == half_new as usize {
                out[half_new as usize] += c;
            } else if m.abs() < half_new + (g_new % 2) as isize {
                let idx = if m >= 0 { m } else { m + g_new as isize } as usize;
                out[idx] += c;
            }
        };
        for (k, &c) in spec.iter().enumerate() {
            if g_old % 2 == 0 && 2 * k == g_old {
                // Even-length Nyquist bin carries both signed modes.
                let half = c * 0.5;
                deposit((g_old / 2) as isize, half);
                deposit(-((g_old / 2) as isize), half);
            } else {
                let m = if 2 * k < g_old {
                    k as isize
                } else {
                    k as isize - g_old as isize
                };
                deposit(m, c);
            }
        }
        let scale = g_new as f64 / g_old as f64;
        for c in &mut out {
            *c *= scale;
        }
        Ok(Signal::from_raw(target, fft::inverse(&out)))
    }

    /// Serializes as CSV with header `t,value`, time in ms with six decimal
    /// digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.grid.times().zip(&self.samples) {
            writeln!(w, "{t:.6},{v}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Reads a `t,value` CSV, inferring the grid from the time column.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Signal> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('t')) {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidSignal(format!("bad CSV time on line {lineno}")))?;
            let v: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidSignal(format!("bad CSV value on line {lineno}")))?;
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(Error::InvalidSignal(
                "CSV signal needs at least 2 rows".into(),
            ));
        }
        let g = times.len();
        let dt = (times[g - 1] - times[0]) / (g - 1) as f64;
        if dt <= 0.0 {
            return Err(Error::InvalidSignal("CSV times must increase".into()));
        }
        for (k, &t) in times.iter().enumerate() {
            if (t - times[0] - k as f64 * dt).abs() > 1e-3 * dt {
                return Err(Error::InvalidSignal(format!(
                    "CSV times are not uniform near row {k}"
                )));
            }
        }
        let grid = TimeGrid::new(g as f64 * dt, 1.0 / dt)?;
        Signal::new(grid, values)
    }

    /// `self + scale * other`, same grid required.
    pub(crate) fn axpy(&mut self, scale: f64, other: &Signal) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += scale * b;
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for a in &mut self.samples {
            *a *= factor;
        }
    }
}

/// Discrete Fourier coefficients of a [`Signal`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: TimeGrid,
    coefficients: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: TimeGrid, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != grid.len() {
            return Err(Error::InvalidSignal(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coefficients.len()
            )));
        }
        Ok(Spectrum { grid, coefficients })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// Inverse DFT back to the time domain.
    pub fn to_signal(&self) -> Signal {
        Signal::from_raw(self.grid, fft::inverse(&self.coefficients))
    }
}

/// An ordered tuple of signals on one common grid: the element of the lifted
/// (product) space used by the consensus machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSignal {
    parts: Vec<Signal>,
}

impl LiftedSignal {
    pub fn new(parts: Vec<Signal>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidSignal("lifted signal needs at least one part".into()))?
            .grid();
        for (i, p) in parts.iter().enumerate() {
            first.check_same(&p.grid(), &format!("lifted signal part {i}"))?;
        }
        Ok(LiftedSignal { parts })
    }

    /// Lifts one signal into `p` identical copies.
    pub fn replicate(signal: &Signal, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidSignal("p must be at least 1".into()));
        }
        Ok(LiftedSignal {
            parts: vec![signal.clone(); p],
        })
    }

    pub(crate) fn from_raw(parts: Vec<Signal>) -> Self {
        debug_assert!(!parts.is_empty());
        LiftedSignal { parts }
    }

    pub fn parts(&self) -> &[Signal] {
        &self.parts
    }

    pub fn part(&self, i: usize) -> &Signal {
        &self.parts[i]
    }

    pub(crate) fn parts_mut(&mut self) -> &mut [Signal] {
        &mut self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn grid(&self) -> TimeGrid {
        self.parts[0].grid()
    }

    /// Direct-sum norm: `sqrt(sum_i ||part_i||^2)`.
    pub fn norm(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| {
                let n = p.l2_norm();
                n * n
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Norm of the difference, same shape required.
    pub fn distance(&self, other: &LiftedSignal) -> Result<f64> {
        if self.parts.len() != other.parts.len() {
            return Err(Error::GridMismatch(format!(
                "lifted signals have {} vs {} parts",
                self.parts.len(),
                other.parts.len()
            )));
        }
        let mut acc = 0.0;
        for (a, b) in self.parts.iter().zip(&other.parts) {
            a.grid().check_same(&b.grid(), "lifted distance")?;
            let dt = a.grid().dt();
            let s: f64 = a
                .samples()
                .iter()
                .zip(b.samples())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            acc += dt * s;
        }
        Ok(acc.sqrt())
    }

    pub(crate) fn axpy(&mut self, scale: f64, other: &LiftedSignal) {
        debug_assert_eq!(self.parts.len(), other.parts.len());
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.axpy(scale, b);
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for p in &mut self.parts {
            p.scale(factor);
        }
    }

    pub(crate) fn fill_zero(&mut self) {
        for p in &mut self.parts {
            p.samples_mut().fill(0.0);
        }
    }
}
