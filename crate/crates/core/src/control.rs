use std::io::{self, BufRead, Write};

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{EnsembleError, Result};

/// A sampled, possibly multi-channel, possibly complex control `u(t)`.
///
/// `channels[c][i]` is channel `c` at `times[i]`. Between samples the signal is
/// interpreted as piecewise linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub times: Vec<f64>,
    pub channels: Vec<Vec<C64>>,
}

impl ControlSignal {
    pub fn new(times: Vec<f64>, channels: Vec<Vec<C64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(EnsembleError::shape("control needs at least one channel"));
        }
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != times.len() {
                return Err(EnsembleError::shape(format!(
                    "channel {c} has {} samples, time grid has {}",
                    ch.len(),
                    times.len()
                )));
            }
            if ch.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(EnsembleError::param(format!("channel {c} has non-finite samples")));
            }
        }
        Ok(ControlSignal { times, channels })
    }

    pub fn zeros(times: &[f64], m: usize) -> Self {
        ControlSignal { times: times.to_vec(), channels: vec![vec![C64::new(0.0, 0.0); times.len()]; m] }
    }

    pub fn from_real(times: Vec<f64>, channels: Vec<Vec<f64>>) -> Result<Self> {
        let ch = channels.into_iter().map(|c| c.into_iter().map(|x| C64::new(x, 0.0)).collect()).collect();
        Self::new(times, ch)
    }

    pub fn m(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// All channels at sample `i`.
    pub fn sample(&self, i: usize) -> DVector<C64> {
        DVector::from_iterator(self.m(), self.channels.iter().map(|c| c[i]))
    }

    /// Linear interpolation inside interval `[t_i, t_{i+1}]` at fraction `theta`.
    pub fn lerp(&self, i: usize, theta: f64) -> DVector<C64> {
        if theta == 0.0 || i + 1 >= self.len() {
            return self.sample(i);
        }
        DVector::from_iterator(
            self.m(),
            self.channels.iter().map(|c| c[i] * (1.0 - theta) + c[i + 1] * theta),
        )
    }

    /// Time-major flattening, index `i * m + c`.
    pub fn to_flat(&self) -> DVector<C64> {
        let m = self.m();
        DVector::from_fn(self.len() * m, |k, _| self.channels[k % m][k / m])
    }

    pub fn from_flat(times: &[f64], m: usize, flat: &DVector<C64>) -> Result<Self> {
        if flat.len() != times.len() * m {
            return Err(EnsembleError::shape(format!(
                "flat control has {} entries, expected {} x {}",
                flat.len(),
                times.len(),
                m
            )));
        }
        let channels = (0..m).map(|c| (0..times.len()).map(|i| flat[i * m + c]).collect()).collect();
        Ok(ControlSignal { times: times.to_vec(), channels })
    }

    /// `sqrt(Σ_i w_i Σ_c |u_c(t_i)|²)`.
    pub fn weighted_norm(&self, weights: &[f64]) -> f64 {
        self.channels
            .iter()
            .map(|ch| ch.iter().zip(weights).map(|(z, w)| w * z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// CSV with columns `t, re_0, im_0, re_1, im_1, ...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = String::from("t");
        for c in 0..self.m() {
            header.push_str(&format!(",re_{c},im_{c}"));
        }
        writeln!(out, "{header}")?;
        for (i, t) in self.times.iter().enumerate() {
            write!(out, "{}", fmt_num(*t))?;
            for ch in &self.channels {
                write!(out, ",{},{}", fmt_num(ch[i].re), fmt_num(ch[i].im))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads the format written by [`ControlSignal::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(Ok(h)) => h,
            _ => return Err(EnsembleError::param("control CSV is empty")),
        };
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 || !header.starts_with('t') {
            return Err(EnsembleError::param(format!("unexpected control CSV header {header:?}")));
        }
        let m = (cols - 1) / 2;
        let mut times = Vec::new();
        let mut channels = vec![Vec::new(); m];
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| EnsembleError::param(format!("reading control CSV: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| EnsembleError::param(format!("control CSV line {}: {e}", k + 2)))?;
            if vals.len() != cols {
                return Err(EnsembleError::param(format!("control CSV line {} has {} fields", k + 2, vals.len())));
            }
            times.push(vals[0]);
            for (c, ch) in channels.iter_mut().enumerate() {
                ch.push(C64::new(vals[1 + 2 * c], vals[2 + 2 * c]));
            }
        }
        Self::new(times, channels)
    }
}

/// 17 significant digits, locale independent.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}
