//! Inner linear solvers: conjugate gradient on gram systems, the regularized
//! data-consistency update x = (AᵀA + λI)⁻¹(Aᵀy + λz) with an exact FFT path
//! for diagonalizable operators, and a smoothed-TV baseline reconstruction.

use crate::error::{Error, Result};
use crate::linop::Op;
use crate::tensor::{fft2_buf, Dtype, Shape, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iters_run: usize,
    /// Residual relative to ‖b‖ at exit.
    pub final_residual: f64,
    pub converged: bool,
}

/// Conjugate gradient on a symmetric positive (semi)definite system
/// `gram_op`(x) = b, started from `x0`. Stops when the residual drops to
/// `tol`·‖b‖ or after `max_iters`. A residual blow-up past 1e3× the initial
/// residual, or any non-finite value, is a numerical error.
pub fn cg_solve<F>(
    gram_op: F,
    b: &Tensor,
    x0: &Tensor,
    max_iters: usize,
    tol: f64,
) -> Result<(Tensor, CgReport)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if b.shape() != x0.shape() {
        return Err(Error::ShapeMismatch { left: b.shape(), right: x0.shape() });
    }
    let bnorm = b.norm2();
    if bnorm == 0.0 {
        // The SPD system with zero right-hand side has the zero solution.
        let x = Tensor::zeros(b.dtype(), b.shape());
        return Ok((x, CgReport { iters_run: 0, final_residual: 0.0, converged: true }));
    }

    let mut x = x0.clone();
    let mut r = b.sub(&gram_op(&x)?)?;
    let mut rs = r.dot(&r)?.re;
    if !rs.is_finite() {
        return Err(Error::numerical("cg: non-finite residual at iteration 0"));
    }
    let r_init = rs.sqrt();
    if r_init / bnorm <= tol {
        return Ok((x, CgReport { iters_run: 0, final_residual: r_init / bnorm, converged: true }));
    }

    let mut p = r.clone();
    for it in 1..=max_iters {
        let gp = gram_op(&p)?;
        let pgp = p.dot(&gp)?.re;
        if !pgp.is_finite() || pgp <= 0.0 {
            return Err(Error::numerical(format!("cg breakdown at iteration {it}: pᵀGp = {pgp}")));
        }
        let alpha = rs / pgp;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &gp)?;
        let rs_new = r.dot(&r)?.re;
        if !rs_new.is_finite() {
            return Err(Error::numerical(format!("cg: non-finite residual at iteration {it}")));
        }
        if rs_new.sqrt() > 1e3 * r_init {
            return Err(Error::numerical(format!(
                "cg diverged at iteration {it}: residual grew beyond 1e3x"
            )));
        }
        let rel = rs_new.sqrt() / bnorm;
        if rel <= tol {
            return Ok((x, CgReport { iters_run: it, final_residual: rel, converged: true }));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        p = r.add(&p.scaled(beta))?;
    }
    let rel = rs.sqrt() / bnorm;
    Ok((x, CgReport { iters_run: max_iters, final_residual: rel, converged: false }))
}

/// How the data-consistency solve is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcMethod {
    /// Warm-started CG with the given iteration budget (tolerance 1e-12).
    Cg(usize),
    /// Exact diagonal solve in the Fourier domain; only for circulant blurs,
    /// identity, and zero-offset Fourier masks.
    FftDirect,
}

/// True if `dc_update(a, …, FftDirect)` is exact for this operator.
pub fn supports_fft_direct(a: &Op) -> bool {
    match a {
        Op::Identity { .. } | Op::Blur(_) => true,
        Op::FourierMask(f) => f.0.mask.line_offsets.iter().all(|d| *d == 0.0),
        _ => false,
    }
}

/// Eigenvalues of a periodic convolution: raw 2-D DFT of the kernel placed
/// at the origin with wraparound.
fn circulant_symbol(kernel: &[f64], k: usize, h: usize, w: usize) -> Vec<Complex64> {
    let c = (k / 2) as isize;
    let mut psf = vec![Complex64::new(0.0, 0.0); h * w];
    for a in 0..k as isize {
        for b in 0..k as isize {
            let i = (a - c).rem_euclid(h as isize) as usize;
            let j = (b - c).rem_euclid(w as isize) as usize;
            psf[i * w + j] += kernel[(a * k as isize + b) as usize];
        }
    }
    fft2_buf(&mut psf, h, w, false);
    psf
}

/// The x-update of the regularized reconstruction loop:
/// x = (AᵀA + λI)⁻¹(Aᵀy + λz). The CG path warm-starts at z, so consistent
/// data (Az = y) returns z exactly at iteration zero.
pub fn dc_update(a1: &Op, y: &Tensor, z: &Tensor, lam: f64, method: DcMethod) -> Result<Tensor> {
    if !(lam > 0.0) {
        return Err(Error::invalid("dc_update needs λ > 0"));
    }
    match method {
        DcMethod::Cg(iters) => {
            if iters == 0 {
                return Err(Error::invalid("dc_update cg budget must be >= 1"));
            }
            let mut b = a1.adjoint(y)?;
            b.axpy(lam, z)?;
            let op = |v: &Tensor| -> Result<Tensor> {
                let mut g = a1.gram(v)?;
                g.axpy(lam, v)?;
                Ok(g)
            };
            let (x, _) = cg_solve(op, &b, z, iters, 1e-12)?;
            Ok(x)
        }
        DcMethod::FftDirect => dc_update_fft(a1, y, z, lam),
    }
}

fn dc_update_fft(a1: &Op, y: &Tensor, z: &Tensor, lam: f64) -> Result<Tensor> {
    match a1 {
        Op::Identity { .. } => {
            // (1 + λ)x = y + λz elementwise.
            let mut x = y.add(&z.scaled(lam))?;
            let inv = 1.0 / (1.0 + lam);
            for v in x.data_mut() {
                *v *= inv;
            }
            Ok(x)
        }
        Op::Blur(bh) => {
            let op = &bh.0;
            let Shape { channels, height: h, width: w } = op.shape;
            if y.shape() != op.shape || z.shape() != op.shape {
                return Err(Error::ShapeMismatch { left: y.shape(), right: op.shape });
            }
            let sym = circulant_symbol(&op.kernel, op.size, h, w);
            let real_in = !y.is_complex() && !z.is_complex();
            let mut out = Tensor::zeros(Dtype::Complex, op.shape);
            for chan in 0..channels {
                let base = chan * h * w;
                let mut fy: Vec<Complex64> = y.data()[base..base + h * w].to_vec();
                let mut fz: Vec<Complex64> = z.data()[base..base + h * w].to_vec();
                fft2_buf(&mut fy, h, w, false);
                fft2_buf(&mut fz, h, w, false);
                let mut fx: Vec<Complex64> = (0..h * w)
                    .map(|i| {
                        (sym[i].conj() * fy[i] + lam * fz[i]) / (sym[i].norm_sqr() + lam)
                    })
                    .collect();
                fft2_buf(&mut fx, h, w, true);
                let scale = 1.0 / (h * w) as f64;
                for (dst, v) in out.data_mut()[base..base + h * w].iter_mut().zip(fx) {
                    *dst = v * scale;
                }
            }
            // A real system with real right-hand side has a real solution;
            // drop the residual imaginary dust.
            Ok(if real_in { out.re() } else { out })
        }
        Op::FourierMask(fh) => {
            let op = &fh.0;
            if op.mask.line_offsets.iter().any(|d| *d != 0.0) {
                return Err(Error::Unsupported(
                    "fft_direct needs zero line offsets (orthonormal mask rows)".into(),
                ));
            }
            let Shape { channels, height: h, width: w } = op.shape;
            if z.shape() != op.shape {
                return Err(Error::ShapeMismatch { left: z.shape(), right: op.shape });
            }
            // Aᵀy + λz in k-space: embed the sampled lines, add λ·F(z), then
            // divide by (s + λ) where s is the 0/1 column indicator.
            let zt = if z.is_complex() { z.clone() } else { z.to_complex() };
            let fz = crate::tensor::fft2(&zt)?;
            let lines = &op.mask.sampled_lines;
            let nlines = lines.len();
            if y.shape() != Shape::new(channels, h, nlines) {
                return Err(Error::ShapeMismatch {
                    left: y.shape(),
                    right: Shape::new(channels, h, nlines),
                });
            }
            let mut sampled = vec![false; w];
            for l in lines {
                let col = (*l as isize - (w / 2) as isize).rem_euclid(w as isize) as usize;
                sampled[col] = true;
            }
            let mut fx = Tensor::zeros(Dtype::Complex, op.shape);
            {
                let dst = fx.data_mut();
                let ys = y.data();
                let fzs = fz.data();
                for chan in 0..channels {
                    let base = chan * h * w;
                    let ybase = chan * h * nlines;
                    for u in 0..h {
                        for v in 0..w {
                            let s = if sampled[v] { 1.0 } else { 0.0 };
                            dst[base + u * w + v] = fzs[base + u * w + v] * lam / (s + lam);
                        }
                    }
                    for (k, l) in lines.iter().enumerate() {
                        let col =
                            (*l as isize - (w / 2) as isize).rem_euclid(w as isize) as usize;
                        for u in 0..h {
                            dst[base + u * w + col] +=
                                ys[ybase + u * nlines + k] / (1.0 + lam);
                        }
                    }
                }
            }
            crate::tensor::ifft2(&fx)
        }
        _ => Err(Error::Unsupported(
            "fft_direct needs a circulant or orthonormal-mask operator".into(),
        )),
    }
}

/// Forward circular differences per channel: (∂x along w, ∂x along h).
fn tv_gradients(x: &Tensor) -> (Tensor, Tensor) {
    let Shape { channels, height: h, width: w } = x.shape();
    let mut gx = Tensor::zeros(x.dtype(), x.shape());
    let mut gy = Tensor::zeros(x.dtype(), x.shape());
    let src = x.data();
    for chan in 0..channels {
        let base = chan * h * w;
        for i in 0..h {
            for j in 0..w {
                let here = src[base + i * w + j];
                gx.data_mut()[base + i * w + j] = src[base + i * w + (j + 1) % w] - here;
                gy.data_mut()[base + i * w + j] = src[base + ((i + 1) % h) * w + j] - here;
            }
        }
    }
    (gx, gy)
}

fn tv_value(gx: &Tensor, gy: &Tensor, eps: f64) -> f64 {
    gx.data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr() + eps * eps).sqrt())
        .sum()
}

/// −div(g/den): the gradient of the smoothed isotropic TV term.
fn tv_grad(x: &Tensor, eps: f64) -> Tensor {
    let (gx, gy) = tv_gradients(x);
    let Shape { channels, height: h, width: w } = x.shape();
    let mut px = gx.clone();
    let mut py = gy.clone();
    for ((p, q), (a, b)) in px
        .data_mut()
        .iter_mut()
        .zip(py.data_mut().iter_mut())
        .zip(gx.data().iter().zip(gy.data()))
    {
        let den = (a.norm_sqr() + b.norm_sqr() + eps * eps).sqrt();
        *p = a / den;
        *q = b / den;
    }
    let mut out = Tensor::zeros(x.dtype(), x.shape());
    let dst = out.data_mut();
    let (pxs, pys) = (px.data(), py.data());
    for chan in 0..channels {
        let base = chan * h * w;
        for i in 0..h {
            for j in 0..w {
                // Adjoint of forward differences with circular wrap.
                let div = pxs[base + i * w + j] - pxs[base + i * w + (j + w - 1) % w]
                    + pys[base + i * w + j]
                    - pys[base + ((i + h - 1) % h) * w + j];
                dst[base + i * w + j] = -div;
            }
        }
    }
    out
}

/// Gradient descent on ½‖Ax − y‖² + weight·Σ√(|∇x|² + eps²), started from the
/// least-squares solution A†y. The step is halved whenever the objective
/// would increase; collapse of the step below 1e-12 is a numerical error.
pub fn tv_reconstruct(
    a: &Op,
    y: &Tensor,
    weight: f64,
    iters: usize,
    step: f64,
    eps: f64,
) -> Result<Tensor> {
    if weight < 0.0 || eps <= 0.0 || step <= 0.0 {
        return Err(Error::invalid("tv_reconstruct needs weight ≥ 0, step > 0, eps > 0"));
    }
    let mut x = a.pseudo_inverse_apply(y, 200)?;
    let objective = |x: &Tensor| -> Result<f64> {
        let r = a.apply(x)?.sub(y)?;
        let (gx, gy) = tv_gradients(x);
        Ok(0.5 * r.norm2().powi(2) + weight * tv_value(&gx, &gy, eps))
    };
    let mut fx = objective(&x)?;
    let mut step = step;
    for _ in 0..iters {
        let r = a.apply(&x)?.sub(y)?;
        let mut grad = a.adjoint(&r)?;
        grad.axpy(weight, &tv_grad(&x, eps))?;
        loop {
            let mut trial = x.clone();
            trial.axpy(-step, &grad)?;
            let ft = objective(&trial)?;
            if ft.is_finite() && ft <= fx {
                x = trial;
                fx = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::numerical("tv_reconstruct: step collapsed below 1e-12"));
            }
        }
    }
    x.check_finite("tv_reconstruct output")?;
    Ok(x)
}
