//! Forward-model algebra: concrete parametrized linear operators A(σ) with
//! apply/adjoint/gram, σ-derivatives (both JVP and VJP), dense materialization
//! for test oracles, and a CG-based minimum-norm pseudo-inverse.

mod blur;
mod downsample;
mod kspace;

pub use downsample::DownsampleKernel;
pub use kspace::KspaceMask;

use crate::error::{Error, Result};
use crate::solver::cg_solve;
use crate::tensor::{Dtype, Shape, Tensor};
use blur::{motion_blur_kernel, BlurOp};
use downsample::DownsampleOp;
use kspace::FourierMaskOp;
use num_complex::Complex64;

/// A linear forward model. Operators are immutable value objects; every
/// constructor validates its geometry up front so apply/adjoint cannot fail
/// on anything but dtype/shape misuse.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Identity { shape: Shape },
    Blur(BlurOpHandle),
    Downsample(DownsampleOpHandle),
    FourierMask(FourierMaskOpHandle),
    Composite(Vec<Op>),
}

// The concrete operator structs stay private outside the crate; these
// newtypes keep the enum arms opaque while still allowing pattern matching
// on the kind.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurOpHandle(pub(crate) BlurOp);
#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleOpHandle(pub(crate) DownsampleOp);
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMaskOpHandle(pub(crate) FourierMaskOp);

impl Op {
    pub fn identity(shape: Shape) -> Op {
        Op::Identity { shape }
    }

    /// Periodic motion blur: unit-mass anti-aliased line kernel of odd `size`
    /// at `angle_deg` ∈ [0, 180). σ = the flattened kernel.
    pub fn motion_blur(shape: Shape, size: usize, angle_deg: f64) -> Result<Op> {
        let kernel = motion_blur_kernel(size, angle_deg)?;
        Ok(Op::Blur(BlurOpHandle(BlurOp::new(shape, size, kernel)?)))
    }

    /// Periodic convolution with an arbitrary odd square kernel.
    pub fn blur_from_kernel(shape: Shape, size: usize, kernel: Vec<f64>) -> Result<Op> {
        Ok(Op::Blur(BlurOpHandle(BlurOp::new(shape, size, kernel)?)))
    }

    /// Anti-aliased downsampling by `factor` (must divide H and W). σ = taps.
    pub fn downsample(shape: Shape, factor: usize, kernel: DownsampleKernel) -> Result<Op> {
        Ok(Op::Downsample(DownsampleOpHandle(DownsampleOp::new(shape, factor, kernel)?)))
    }

    /// Downsampling with explicit taps (used when σ is replaced).
    pub fn downsample_from_taps(
        shape: Shape,
        factor: usize,
        size: usize,
        taps: Vec<f64>,
    ) -> Result<Op> {
        Ok(Op::Downsample(DownsampleOpHandle(DownsampleOp::from_taps(shape, factor, size, taps)?)))
    }

    /// Fourier undersampling along image columns. σ = per-line offsets.
    pub fn fourier_mask(shape: Shape, mask: KspaceMask) -> Result<Op> {
        Ok(Op::FourierMask(FourierMaskOpHandle(FourierMaskOp::new(shape, mask)?)))
    }

    /// Sequential composition: ops[0] runs first. Shapes must chain.
    pub fn composite(ops: Vec<Op>) -> Result<Op> {
        if ops.is_empty() {
            return Err(Error::invalid("composite needs at least one operator"));
        }
        for pair in ops.windows(2) {
            if pair[0].out_shape() != pair[1].in_shape() {
                return Err(Error::ShapeMismatch {
                    left: pair[0].out_shape(),
                    right: pair[1].in_shape(),
                });
            }
        }
        Ok(Op::Composite(ops))
    }

    pub fn in_shape(&self) -> Shape {
        match self {
            Op::Identity { shape } => *shape,
            Op::Blur(b) => b.0.shape,
            Op::Downsample(d) => d.0.shape,
            Op::FourierMask(f) => f.0.shape,
            Op::Composite(ops) => ops[0].in_shape(),
        }
    }

    pub fn out_shape(&self) -> Shape {
        match self {
            Op::Identity { shape } => *shape,
            Op::Blur(b) => b.0.shape,
            Op::Downsample(d) => d.0.out_shape(),
            Op::FourierMask(f) => f.0.out_shape(),
            Op::Composite(ops) => ops.last().unwrap().out_shape(),
        }
    }

    /// The parameter vector σ; empty for identity and composite operators.
    pub fn params(&self) -> &[f64] {
        match self {
            Op::Identity { .. } | Op::Composite(_) => &[],
            Op::Blur(b) => &b.0.kernel,
            Op::Downsample(d) => &d.0.taps,
            Op::FourierMask(f) => &f.0.mask.line_offsets,
        }
    }

    /// Same operator structure with σ replaced.
    pub fn with_params(&self, sigma: &[f64]) -> Result<Op> {
        if sigma.len() != self.params().len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params().len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite operator parameter"));
        }
        match self {
            Op::Identity { .. } | Op::Composite(_) => Ok(self.clone()),
            Op::Blur(b) => {
                let mut op = b.0.clone();
                op.kernel = sigma.to_vec();
                Ok(Op::Blur(BlurOpHandle(op)))
            }
            Op::Downsample(d) => {
                let mut op = d.0.clone();
                op.taps = sigma.to_vec();
                Ok(Op::Downsample(DownsampleOpHandle(op)))
            }
            Op::FourierMask(f) => {
                let mut op = f.0.clone();
                op.mask.line_offsets = sigma.to_vec();
                Ok(Op::FourierMask(FourierMaskOpHandle(op)))
            }
        }
    }

    /// The k-space mask, if this is a Fourier undersampling operator.
    pub fn mask(&self) -> Option<&KspaceMask> {
        match self {
            Op::FourierMask(f) => Some(&f.0.mask),
            _ => None,
        }
    }

    fn check_in(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.in_shape() {
            return Err(Error::ShapeMismatch { left: x.shape(), right: self.in_shape() });
        }
        Ok(())
    }

    fn check_out(&self, y: &Tensor) -> Result<()> {
        if y.shape() != self.out_shape() {
            return Err(Error::ShapeMismatch { left: y.shape(), right: self.out_shape() });
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_in(x)?;
        match self {
            Op::Identity { .. } => Ok(x.clone()),
            Op::Blur(b) => Ok(b.0.apply(x)),
            Op::Downsample(d) => Ok(d.0.apply(x)),
            Op::FourierMask(f) => f.0.apply(x),
            Op::Composite(ops) => {
                let mut cur = x.clone();
                for op in ops {
                    cur = op.apply(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    /// Aᵀ (conjugate transpose for complex operators).
    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.check_out(y)?;
        match self {
            Op::Identity { .. } => Ok(y.clone()),
            Op::Blur(b) => Ok(b.0.adjoint(y)),
            Op::Downsample(d) => Ok(d.0.adjoint(y)),
            Op::FourierMask(f) => f.0.adjoint(y),
            Op::Composite(ops) => {
                let mut cur = y.clone();
                for op in ops.iter().rev() {
                    cur = op.adjoint(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    /// AᵀA x, by definition adjoint(apply(x)).
    pub fn gram(&self, x: &Tensor) -> Result<Tensor> {
        self.adjoint(&self.apply(x)?)
    }

    /// Jacobian-vector product ∂(A(σ)x)/∂σ · direction.
    pub fn d_apply_dsigma(&self, x: &Tensor, direction: &[f64]) -> Result<Tensor> {
        self.check_in(x)?;
        if self.params().is_empty() {
            return Err(Error::invalid("operator has no σ parameters"));
        }
        if direction.len() != self.params().len() {
            return Err(Error::invalid(format!(
                "direction length {} does not match σ length {}",
                direction.len(),
                self.params().len()
            )));
        }
        match self {
            Op::Blur(b) => Ok(b.0.d_apply(x, direction)),
            Op::Downsample(d) => Ok(d.0.d_apply(x, direction)),
            Op::FourierMask(f) => f.0.d_apply(x, direction),
            Op::Identity { .. } | Op::Composite(_) => unreachable!("σ-less handled above"),
        }
    }

    /// Vector-Jacobian product: grad_j = Re⟨cot, ∂(A(σ)x)/∂σ_j⟩ for all j.
    /// This is the σ-gradient building block used by the adaptation losses.
    pub fn sigma_vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Vec<f64>> {
        self.check_in(x)?;
        self.check_out(cot)?;
        match self {
            Op::Identity { .. } | Op::Composite(_) => Ok(Vec::new()),
            Op::Blur(b) => Ok(b.0.sigma_vjp(x, cot)),
            Op::Downsample(d) => Ok(d.0.sigma_vjp(x, cot)),
            Op::FourierMask(f) => f.0.sigma_vjp(x, cot),
        }
    }

    /// Minimum-norm least-squares solution A†y: zero-initialized CG on the
    /// normal equations AᵀA x = Aᵀy.
    pub fn pseudo_inverse_apply(&self, y: &Tensor, cg_iters: usize) -> Result<Tensor> {
        if cg_iters == 0 {
            return Err(Error::invalid("pseudo_inverse_apply needs cg_iters >= 1"));
        }
        let b = self.adjoint(y)?;
        let x0 = Tensor::zeros(b.dtype(), self.in_shape());
        let (x, _) = cg_solve(|v| self.gram(v), &b, &x0, cg_iters, 1e-12)?;
        Ok(x)
    }

    /// Dense matrix with column j = apply(e_j), for test oracles. Guarded to
    /// small problems.
    pub fn materialize_dense(&self) -> Result<DenseMatrix> {
        let n = self.in_shape().len();
        let m = self.out_shape().len();
        if n > 4096 {
            return Err(Error::invalid(format!("materialize_dense guard: in-size {n} > 4096")));
        }
        let mut data = vec![Complex64::new(0.0, 0.0); m * n];
        for j in 0..n {
            let mut e = Tensor::zeros(Dtype::Complex, self.in_shape());
            e.data_mut()[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e)?;
            for (i, z) in col.data().iter().enumerate() {
                data[i * n + j] = *z;
            }
        }
        Ok(DenseMatrix { rows: m, cols: n, data })
    }

    /// Dense matrix of the adjoint map, column i = adjoint(e_i).
    pub fn materialize_dense_adjoint(&self) -> Result<DenseMatrix> {
        let n = self.in_shape().len();
        let m = self.out_shape().len();
        if m > 4096 {
            return Err(Error::invalid(format!("materialize_dense guard: out-size {m} > 4096")));
        }
        let mut data = vec![Complex64::new(0.0, 0.0); n * m];
        for j in 0..m {
            let mut e = Tensor::zeros(Dtype::Complex, self.out_shape());
            e.data_mut()[j] = Complex64::new(1.0, 0.0);
            let col = self.adjoint(&e)?;
            for (i, z) in col.data().iter().enumerate() {
                data[i * m + j] = *z;
            }
        }
        Ok(DenseMatrix { rows: n, cols: m, data })
    }
}

/// Row-major dense complex matrix; strictly a test/oracle vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn conj_transpose(&self) -> DenseMatrix {
        let mut data = vec![Complex64::new(0.0, 0.0); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.at(r, c).conj();
            }
        }
        DenseMatrix { rows: self.cols, cols: self.rows, data }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
