//! Differential-entropy features from a single-channel signal.
//!
//! Each band is isolated with a zero-phase (forward-backward) cascade of a
//! 2nd-order Butterworth high-pass and a 2nd-order Butterworth low-pass,
//! i.e. a 4th-order band-pass. The filtered signal is cut into
//! non-overlapping windows and each window yields
//! `DE = 0.5 ln(2 pi e var)` under a Gaussian assumption.

use std::f64::consts::{E, PI, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::diffcore::Tensor2;

/// Variance floor used for flat windows.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Frequency band in Hz. `lo = 0` disables the high-pass edge and
/// `hi = None` disables the low-pass edge; [`Band::full`] passes the signal
/// through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Band { lo, hi: Some(hi) }
    }

    pub const fn full() -> Self {
        Band { lo: 0.0, hi: None }
    }
}

pub const DEFAULT_FS: f64 = 200.0;
pub const DEFAULT_WINDOW_S: f64 = 1.0;

/// Delta, Theta, Alpha, Beta, Gamma.
pub const DEFAULT_BANDS: [Band; 5] = [
    Band::new(1.0, 3.0),
    Band::new(4.0, 7.0),
    Band::new(8.0, 13.0),
    Band::new(14.0, 30.0),
    Band::new(31.0, 50.0),
];

/// Biquad section coefficients, normalized so `a0 = 1`.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    // Bilinear-transform Butterworth sections (Q = 1/sqrt 2).
    fn lowpass(fc: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let alpha = w0.sin() / SQRT_2;
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Biquad {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let alpha = w0.sin() / SQRT_2;
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0 / a0;
        Biquad {
            b: [b0, -2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II over `x`, starting from the steady state of
    /// a constant input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let y0 = self.dc_gain() * x0;
        let mut s2 = self.b[2] * x0 - self.a[1] * y0;
        let mut s1 = self.b[1] * x0 - self.a[0] * y0 + s2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

fn sections(band: Band, fs: f64) -> Vec<Biquad> {
    let mut out = Vec::new();
    if band.lo > 0.0 {
        out.push(Biquad::highpass(band.lo, fs));
    }
    if let Some(hi) = band.hi {
        out.push(Biquad::lowpass(hi, fs));
    }
    out
}

/// Zero-phase filtering with odd-extension padding at both ends.
fn filtfilt(x: &[f64], filters: &[Biquad]) -> Vec<f64> {
    if filters.is_empty() || x.len() < 2 {
        return x.to_vec();
    }
    let pad = (3 * (2 * filters.len() + 1)).min(x.len() - 1);
    let (first, last) = (x[0], x[x.len() - 1]);
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));

    let pass = |buf: &mut Vec<f64>| {
        for f in filters {
            f.run(buf);
        }
    };
    pass(&mut ext);
    ext.reverse();
    pass(&mut ext);
    ext.reverse();
    ext[pad..pad + x.len()].to_vec()
}

fn differential_entropy(window: &[f64]) -> f64 {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    0.5 * (2.0 * PI * E * var.max(VARIANCE_FLOOR)).ln()
}

/// DE features, one row per complete window and one column per band.
pub fn extract_de(signal: &[f64], fs: f64, bands: &[Band], window_s: f64) -> Result<Tensor2, DataError> {
    if !fs.is_finite() || fs <= 0.0 {
        return Err(DataError::InvalidArgument(format!("sampling rate must be > 0, got {fs}")));
    }
    if bands.is_empty() {
        return Err(DataError::InvalidArgument("at least one band is required".into()));
    }
    let nyquist = fs / 2.0;
    for band in bands {
        let hi_bad = band.hi.is_some_and(|hi| !(hi > band.lo && hi < nyquist));
        if band.lo < 0.0 || band.lo >= nyquist || hi_bad {
            return Err(DataError::Band {
                lo: band.lo,
                hi: band.hi,
                nyquist,
            });
        }
    }
    let win = window_s * fs;
    if !win.is_finite() || win.fract() != 0.0 || win < 8.0 {
        return Err(DataError::InvalidArgument(format!(
            "window of {window_s} s at {fs} Hz must span an integer number (>= 8) of samples"
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(DataError::InvalidArgument("signal contains non-finite samples".into()));
    }
    let win = win as usize;
    let windows = signal.len() / win;

    let mut out = vec![0.0; windows * bands.len()];
    for (b, band) in bands.iter().enumerate() {
        let filtered = filtfilt(signal, &sections(*band, fs));
        for w in 0..windows {
            out[w * bands.len() + b] = differential_entropy(&filtered[w * win..(w + 1) * win]);
        }
    }
    Tensor2::new(windows, bands.len(), out).map_err(|e| DataError::InvalidArgument(e.to_string()))
}

/// JSON sidecar accompanying a raw signal stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub fs: f64,
    pub channel_name: String,
}

/// Default sidecar location: `<raw path>.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut name = raw.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Reads a single-channel f32 little-endian stream and its sidecar.
pub fn load_raw_signal(raw: &Path, sidecar: &Path) -> Result<(Vec<f64>, RawSidecar), DataError> {
    let meta_text = fs::read_to_string(sidecar).map_err(|e| DataError::io(sidecar, e))?;
    let meta: RawSidecar = serde_json::from_str(&meta_text)
        .map_err(|e| DataError::Manifest(format!("{}: {e}", sidecar.display())))?;
    let bytes = fs::read(raw).map_err(|e| DataError::io(raw, e))?;
    if bytes.len() % 4 != 0 {
        return Err(DataError::Truncated {
            path: raw.to_path_buf(),
            row: bytes.len() / 4,
            expected_bytes: bytes.len() / 4 * 4 + 4,
            found_bytes: bytes.len(),
        });
    }
    let signal = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((signal, meta))
}
