//! Unitary 2-D FFT on complex tensors. Any rectangular size is supported
//! (rustfft falls back to mixed-radix/Bluestein for awkward lengths), and the
//! unitary normalization makes the inverse transform the exact adjoint.

use super::{Dtype, Tensor};
use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex, OnceLock};

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("fft planner lock poisoned");
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Unnormalized 1-D DFTs of length `len` over consecutive chunks, in place.
pub(crate) fn fft_rows(buf: &mut [Complex64], len: usize, inverse: bool) {
    debug_assert_eq!(buf.len() % len, 0);
    if len > 1 {
        plan(len, inverse).process(buf);
    }
}

/// Unnormalized 2-D DFT of one `h`×`w` channel, in place. Used directly where
/// circulant symbols need the raw (eigenvalue) convention.
pub(crate) fn fft2_buf(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    if w > 1 {
        plan(w, inverse).process(buf);
    }
    if h > 1 {
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(buf, h, w, &mut t);
        plan(h, inverse).process(&mut t);
        transpose(&t, w, h, buf);
    }
}

fn fft2_impl(t: &Tensor, inverse: bool) -> Result<Tensor> {
    if t.dtype() != Dtype::Complex {
        return Err(Error::Dtype { expected: Dtype::Complex, got: t.dtype() });
    }
    let shape = t.shape();
    let (h, w) = (shape.height, shape.width);
    if h == 0 || w == 0 {
        return Err(Error::invalid("fft2 requires height and width >= 1"));
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = t.clone();
    for chan in out.data_mut().chunks_mut(h * w) {
        fft2_buf(chan, h, w, inverse);
        for z in chan.iter_mut() {
            *z *= scale;
        }
    }
    Ok(out)
}

/// Unitary 2-D DFT per channel; `ifft2` inverts it exactly (up to roundoff).
pub fn fft2(t: &Tensor) -> Result<Tensor> {
    fft2_impl(t, false)
}

/// Unitary inverse 2-D DFT per channel.
pub fn ifft2(t: &Tensor) -> Result<Tensor> {
    fft2_impl(t, true)
}
