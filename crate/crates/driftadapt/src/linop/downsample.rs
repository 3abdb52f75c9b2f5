//! Anti-aliased strided downsampling: periodic convolution with a unit-mass
//! filter followed by stride-`factor` decimation. The adjoint is zero
//! insertion followed by the flipped filter. σ is the full 2-D tap stencil.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleKernel {
    Bilinear,
    Bicubic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleOp {
    pub(crate) shape: Shape,
    pub(crate) factor: usize,
    pub(crate) size: usize,
    /// Row-major t×t taps; also the σ vector.
    pub(crate) taps: Vec<f64>,
}

/// Keys cubic interpolation kernel with a = −1/2.
fn keys_cubic(u: f64) -> f64 {
    let a = -0.5;
    let t = u.abs();
    if t < 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// 1-D anti-alias taps for the given decimation factor, normalized to unit
/// mass (both families already sum to 1 analytically; normalizing removes
/// rounding dust so DC preservation is exact).
fn taps_1d(factor: usize, kernel: DownsampleKernel) -> Vec<f64> {
    let f = factor as f64;
    let reach = match kernel {
        DownsampleKernel::Bilinear => factor as isize - 1,
        DownsampleKernel::Bicubic => 2 * factor as isize - 1,
    };
    let mut taps: Vec<f64> = (-reach..=reach)
        .map(|d| match kernel {
            DownsampleKernel::Bilinear => (1.0 - (d as f64).abs() / f) / f,
            DownsampleKernel::Bicubic => keys_cubic(d as f64 / f) / f,
        })
        .collect();
    let mass: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= mass;
    }
    taps
}

impl DownsampleOp {
    pub(crate) fn new(shape: Shape, factor: usize, kernel: DownsampleKernel) -> Result<DownsampleOp> {
        if factor < 2 {
            return Err(Error::invalid("downsample factor must be >= 2"));
        }
        if shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(Error::invalid(format!(
                "downsample factor {factor} must divide image sides {}x{}",
                shape.height, shape.width
            )));
        }
        let t1 = taps_1d(factor, kernel);
        let size = t1.len();
        if size > shape.height || size > shape.width {
            return Err(Error::invalid("downsample filter larger than image"));
        }
        let mut taps = Vec::with_capacity(size * size);
        for a in &t1 {
            for b in &t1 {
                taps.push(a * b);
            }
        }
        Ok(DownsampleOp { shape, factor, size, taps })
    }

    pub(crate) fn from_taps(shape: Shape, factor: usize, size: usize, taps: Vec<f64>) -> Result<DownsampleOp> {
        if size % 2 == 0 || taps.len() != size * size {
            return Err(Error::invalid("downsample taps must form an odd square stencil"));
        }
        if factor < 2 || shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(Error::invalid("downsample factor must be >= 2 and divide the image"));
        }
        Ok(DownsampleOp { shape, factor, size, taps })
    }

    pub(crate) fn out_shape(&self) -> Shape {
        Shape::new(
            self.shape.channels,
            self.shape.height / self.factor,
            self.shape.width / self.factor,
        )
    }

    /// Filter with `taps` then keep every `factor`-th sample of each axis.
    pub(crate) fn apply_with(&self, x: &Tensor, taps: &[f64]) -> Tensor {
        let Shape { channels, height: h, width: w } = self.shape;
        let (f, t) = (self.factor, self.size);
        let c = (t / 2) as isize;
        let out_shape = self.out_shape();
        let (oh, ow) = (out_shape.height, out_shape.width);
        let mut out = Tensor::zeros(x.dtype(), out_shape);
        let src = x.data();
        let dst = out.data_mut();
        for chan in 0..channels {
            let base = chan * h * w;
            let obase = chan * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a in 0..t as isize {
                        let si = ((i * f) as isize - (a - c)).rem_euclid(h as isize) as usize;
                        for b in 0..t as isize {
                            let sj = ((j * f) as isize - (b - c)).rem_euclid(w as isize) as usize;
                            acc += taps[(a * t as isize + b) as usize] * src[base + si * w + sj];
                        }
                    }
                    dst[obase + i * ow + j] = acc;
                }
            }
        }
        out
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Tensor {
        self.apply_with(x, &self.taps)
    }

    /// Zero-insert y onto the fine grid, then scatter through the taps.
    pub(crate) fn adjoint(&self, y: &Tensor) -> Tensor {
        let Shape { channels, height: h, width: w } = self.shape;
        let (f, t) = (self.factor, self.size);
        let c = (t / 2) as isize;
        let (oh, ow) = (h / f, w / f);
        let mut out = Tensor::zeros(y.dtype(), self.shape);
        let src = y.data();
        let dst = out.data_mut();
        for chan in 0..channels {
            let base = chan * h * w;
            let obase = chan * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let v = src[obase + i * ow + j];
                    for a in 0..t as isize {
                        let si = ((i * f) as isize - (a - c)).rem_euclid(h as isize) as usize;
                        for b in 0..t as isize {
                            let sj = ((j * f) as isize - (b - c)).rem_euclid(w as isize) as usize;
                            dst[base + si * w + sj] += taps_at(&self.taps, t, a, b) * v;
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn d_apply(&self, x: &Tensor, direction: &[f64]) -> Tensor {
        self.apply_with(x, direction)
    }

    pub(crate) fn sigma_vjp(&self, x: &Tensor, cot: &Tensor) -> Vec<f64> {
        let Shape { channels, height: h, width: w } = self.shape;
        let (f, t) = (self.factor, self.size);
        let c = (t / 2) as isize;
        let (oh, ow) = (h / f, w / f);
        let mut grad = vec![0.0; t * t];
        let (xs, cs) = (x.data(), cot.data());
        for a in 0..t as isize {
            for b in 0..t as isize {
                let mut acc = 0.0;
                for chan in 0..channels {
                    let base = chan * h * w;
                    let obase = chan * oh * ow;
                    for i in 0..oh {
                        let si = ((i * f) as isize - (a - c)).rem_euclid(h as isize) as usize;
                        for j in 0..ow {
                            let sj = ((j * f) as isize - (b - c)).rem_euclid(w as isize) as usize;
                            let cz = cs[obase + i * ow + j];
                            let xz = xs[base + si * w + sj];
                            acc += cz.re * xz.re + cz.im * xz.im;
                        }
                    }
                }
                grad[(a * t as isize + b) as usize] = acc;
            }
        }
        grad
    }
}

fn taps_at(taps: &[f64], t: usize, a: isize, b: isize) -> f64 {
    taps[(a * t as isize + b) as usize]
}
