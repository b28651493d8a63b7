//! Internal FFT plumbing: plan caching and the spectral symbols of the LTI
//! operators.
//!
//! All LTI operators act diagonally in the discrete Fourier basis of the
//! periodic time grid. The differentiation symbol at bin `k` is `j*omega_k`
//! with `omega_k = 2*pi*m_k / (g*dt)` and the signed index `m_k = k` for
//! `k <= g/2`, `m_k = k - g` otherwise. For even `g` the Nyquist bin has no
//! well-defined sign, so its derivative symbol is set to zero; this keeps
//! every LTI operator an exact real-to-real map and makes `(tau*D + Id)` and
//! its inverse exact inverses of each other on the grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

struct PlanPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(len: usize) -> Arc<PlanPair> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<PlanPair>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(PlanPair {
                forward: planner.plan_fft_forward(len),
                inverse: planner.plan_fft_inverse(len),
            })
        })
        .clone()
}

/// Unnormalized forward DFT of a real sequence.
pub(crate) fn forward(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plans(samples.len()).forward.process(&mut buf);
    buf
}

/// Inverse DFT with 1/g normalization; returns the real part.
///
/// The imaginary part is discarded: every spectrum processed by this crate is
/// conjugate-symmetric up to roundoff.
pub(crate) fn inverse(coeffs: &[Complex64]) -> Vec<f64> {
    let g = coeffs.len();
    let mut buf = coeffs.to_vec();
    plans(g).inverse.process(&mut buf);
    let scale = 1.0 / g as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Signed angular frequency of bin `k`, in rad/ms, with the Nyquist bin of an
/// even-length grid mapped to zero.
pub(crate) fn omega(k: usize, g: usize, dt: f64) -> f64 {
    let m = if 2 * k < g {
        k as isize
    } else if 2 * k == g {
        return 0.0;
    } else {
        k as isize - g as isize
    };
    2.0 * std::f64::consts::PI * m as f64 / (g as f64 * dt)
}

/// Applies a diagonal spectral multiplier `h(j*omega_k)` to a real sequence.
pub(crate) fn apply_symbol(samples: &[f64], dt: f64, h: impl Fn(f64) -> Complex64) -> Vec<f64> {
    let g = samples.len();
    let mut spec = forward(samples);
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= h(omega(k, g, dt));
    }
    inverse(&spec)
}
