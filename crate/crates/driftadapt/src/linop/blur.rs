//! Periodic-boundary 2-D convolution with a square kernel, plus the motion
//! blur kernel rasterizer. The kernel itself is the operator's parameter
//! vector σ, so the whole k×k stencil is differentiable model structure.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct BlurOp {
    pub(crate) shape: Shape,
    pub(crate) size: usize,
    /// Row-major k×k kernel weights; also the σ vector.
    pub(crate) kernel: Vec<f64>,
}

/// Coverage of the unit pixel centered at (x, y) by a width-1 rectangle of
/// length `len` through the origin at angle `theta`, estimated on a fixed
/// subsample grid. Purely arithmetic, hence deterministic.
fn pixel_coverage(x: f64, y: f64, theta: f64, len: f64) -> f64 {
    const S: usize = 64;
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let mut hits = 0usize;
    for a in 0..S {
        let px = x + (a as f64 + 0.5) / S as f64 - 0.5;
        for b in 0..S {
            let py = y + (b as f64 + 0.5) / S as f64 - 0.5;
            let along = px * dir_x + py * dir_y;
            let across = -px * dir_y + py * dir_x;
            if along.abs() <= len / 2.0 && across.abs() <= 0.5 {
                hits += 1;
            }
        }
    }
    hits as f64 / (S * S) as f64
}

/// Unit-mass anti-aliased line kernel of length `size` at `angle_deg`.
pub(crate) fn motion_blur_kernel(size: usize, angle_deg: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::invalid("motion blur kernel size must be odd"));
    }
    if !(0.0..180.0).contains(&angle_deg) {
        return Err(Error::invalid("motion blur angle must lie in [0, 180)"));
    }
    if size == 1 {
        return Ok(vec![1.0]);
    }
    let theta = angle_deg.to_radians();
    let c = (size / 2) as isize;
    let mut kernel = Vec::with_capacity(size * size);
    for i in 0..size as isize {
        for j in 0..size as isize {
            // Image row i grows downward; flip to the usual y-up convention
            // so positive angles rotate counterclockwise on screen.
            let (x, y) = ((j - c) as f64, (c - i) as f64);
            kernel.push(pixel_coverage(x, y, theta, size as f64));
        }
    }
    let mass: f64 = kernel.iter().sum();
    debug_assert!(mass > 0.0);
    for k in &mut kernel {
        *k /= mass;
    }
    Ok(kernel)
}

impl BlurOp {
    pub(crate) fn new(shape: Shape, size: usize, kernel: Vec<f64>) -> Result<BlurOp> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::invalid("blur kernel size must be odd"));
        }
        if kernel.len() != size * size {
            return Err(Error::invalid(format!(
                "blur kernel needs {}x{size} = {} weights, got {}",
                size,
                size * size,
                kernel.len()
            )));
        }
        if size > shape.height || size > shape.width {
            return Err(Error::invalid("blur kernel larger than image"));
        }
        Ok(BlurOp { shape, size, kernel })
    }

    /// Circular convolution of every channel with `kernel`.
    pub(crate) fn conv(&self, x: &Tensor, kernel: &[f64], adjoint: bool) -> Tensor {
        let Shape { channels, height: h, width: w } = self.shape;
        let k = self.size;
        let c = (k / 2) as isize;
        let mut out = Tensor::zeros(x.dtype(), self.shape);
        // Wrapped source index per (output index, tap): adjoint flips offsets.
        let row_map: Vec<usize> = (0..h as isize)
            .flat_map(|i| {
                (0..k as isize).map(move |a| {
                    let d = a - c;
                    let s = if adjoint { i + d } else { i - d };
                    s.rem_euclid(h as isize) as usize
                })
            })
            .collect();
        let col_map: Vec<usize> = (0..w as isize)
            .flat_map(|j| {
                (0..k as isize).map(move |b| {
                    let d = b - c;
                    let s = if adjoint { j + d } else { j - d };
                    s.rem_euclid(w as isize) as usize
                })
            })
            .collect();
        let src = x.data();
        let dst = out.data_mut();
        for chan in 0..channels {
            let base = chan * h * w;
            for i in 0..h {
                for j in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a in 0..k {
                        let si = row_map[i * k + a];
                        for b in 0..k {
                            let sj = col_map[j * k + b];
                            acc += kernel[a * k + b] * src[base + si * w + sj];
                        }
                    }
                    dst[base + i * w + j] = acc;
                }
            }
        }
        out
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Tensor {
        self.conv(x, &self.kernel, false)
    }

    pub(crate) fn adjoint(&self, y: &Tensor) -> Tensor {
        self.conv(y, &self.kernel, true)
    }

    /// JVP: the output is linear in the kernel, so the tangent is just a
    /// convolution with the direction stencil.
    pub(crate) fn d_apply(&self, x: &Tensor, direction: &[f64]) -> Tensor {
        self.conv(x, direction, false)
    }

    /// VJP: ∂⟨cot, A(σ)x⟩/∂σ as a stencil of correlations between cot and x.
    pub(crate) fn sigma_vjp(&self, x: &Tensor, cot: &Tensor) -> Vec<f64> {
        let Shape { channels, height: h, width: w } = self.shape;
        let k = self.size;
        let c = (k / 2) as isize;
        let mut grad = vec![0.0; k * k];
        let (xs, cs) = (x.data(), cot.data());
        for a in 0..k as isize {
            for b in 0..k as isize {
                let (da, db) = (a - c, b - c);
                let mut acc = 0.0;
                for chan in 0..channels {
                    let base = chan * h * w;
                    for i in 0..h as isize {
                        let si = (i - da).rem_euclid(h as isize) as usize;
                        for j in 0..w as isize {
                            let sj = (j - db).rem_euclid(w as isize) as usize;
                            let cz = cs[base + i as usize * w + j as usize];
                            let xz = xs[base + si * w + sj];
                            acc += cz.re * xz.re + cz.im * xz.im;
                        }
                    }
                }
                grad[(a * k as isize + b) as usize] = acc;
            }
        }
        grad
    }
}
