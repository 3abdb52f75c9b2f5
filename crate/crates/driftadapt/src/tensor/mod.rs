//! Dense 2-D arrays with a channel axis, real or complex, double precision.
//!
//! Storage is a flat `Vec<Complex64>` in channel-major row-major order. Real
//! tensors keep imaginary parts exactly zero so that arithmetic, metrics and
//! dense linear algebra share one code path; operations that mathematically
//! produce real outputs from real inputs preserve that invariant exactly.

mod fft;
mod io;
mod metrics;

pub use fft::{fft2, ifft2};
pub use io::{read_dat, read_pgm, write_dat, write_pgm};
pub use metrics::{psnr, ssim};

pub(crate) use fft::{fft2_buf, fft_rows};

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real,
    Complex,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Shape {
        Shape { channels, height, width }
    }

    /// Number of elements (not scalar slots).
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dtype: Dtype,
    shape: Shape,
    data: Vec<Complex64>,
}

impl Tensor {
    pub fn zeros(dtype: Dtype, shape: Shape) -> Tensor {
        Tensor { dtype, shape, data: vec![Complex64::new(0.0, 0.0); shape.len()] }
    }

    pub fn from_real(shape: Shape, values: Vec<f64>) -> Result<Tensor> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "expected {} values for shape {shape}, got {}",
                shape.len(),
                values.len()
            )));
        }
        let data = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Ok(Tensor { dtype: Dtype::Real, shape, data })
    }

    pub fn from_complex(shape: Shape, values: Vec<Complex64>) -> Result<Tensor> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "expected {} values for shape {shape}, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Tensor { dtype: Dtype::Complex, shape, data: values })
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Flat index of element (c, h, w).
    pub(crate) fn idx(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.shape.height + h) * self.shape.width + w
    }

    pub fn at(&self, c: usize, h: usize, w: usize) -> Complex64 {
        self.data[self.idx(c, h, w)]
    }

    pub fn is_complex(&self) -> bool {
        self.dtype == Dtype::Complex
    }

    /// Same data viewed as complex dtype.
    pub fn to_complex(&self) -> Tensor {
        Tensor { dtype: Dtype::Complex, shape: self.shape, data: self.data.clone() }
    }

    /// Real parts as a real tensor (drops imaginary parts).
    pub fn re(&self) -> Tensor {
        let data = self.data.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
        Tensor { dtype: Dtype::Real, shape: self.shape, data }
    }

    /// Elementwise modulus as a real tensor.
    pub fn magnitude(&self) -> Tensor {
        let data = self.data.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect();
        Tensor { dtype: Dtype::Real, shape: self.shape, data }
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape, right: other.shape });
        }
        Ok(())
    }

    fn join_dtype(&self, other: &Tensor) -> Dtype {
        if self.dtype == Dtype::Complex || other.dtype == Dtype::Complex {
            Dtype::Complex
        } else {
            Dtype::Real
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { dtype: self.join_dtype(other), shape: self.shape, data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { dtype: self.join_dtype(other), shape: self.shape, data })
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        let data = self.data.iter().map(|z| z * s).collect();
        Tensor { dtype: self.dtype, shape: self.shape, data }
    }

    /// self += a * x.
    pub fn axpy(&mut self, a: f64, x: &Tensor) -> Result<()> {
        self.check_same_shape(x)?;
        if x.dtype == Dtype::Complex {
            self.dtype = Dtype::Complex;
        }
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    /// Inner product ⟨self, other⟩ = Σ conj(selfᵢ)·otherᵢ.
    pub fn dot(&self, other: &Tensor) -> Result<Complex64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Mean squared deviation Σ|selfᵢ − refᵢ|² / n.
    pub fn mse(&self, reference: &Tensor) -> Result<f64> {
        self.check_same_shape(reference)?;
        let n = self.shape.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / n)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Errors with context if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for z in &self.data {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::numerical(format!("non-finite value in {context}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_arithmetic_keeps_imaginary_exactly_zero() {
        let a = Tensor::from_real(Shape::new(1, 2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = Tensor::from_real(Shape::new(1, 2, 2), vec![0.25, 1.0, -1.5, 2.0]).unwrap();
        let c = a.add(&b).unwrap().sub(&b).unwrap().scaled(3.0);
        assert_eq!(c.dtype(), Dtype::Real);
        for z in c.data() {
            assert_eq!(z.im, 0.0, "imaginary part must stay exactly zero");
        }
    }

    #[test]
    fn dot_is_conjugate_linear_in_first_argument() {
        let u = Tensor::from_complex(
            Shape::new(1, 1, 2),
            vec![Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0)],
        )
        .unwrap();
        let v = Tensor::from_complex(
            Shape::new(1, 1, 2),
            vec![Complex64::new(3.0, 0.0), Complex64::new(1.0, 1.0)],
        )
        .unwrap();
        let d = u.dot(&v).unwrap();
        // conj(1+2i)*3 + conj(-i)*(1+i) = (3-6i) + (i)(1+i) = (3-6i) + (-1+i) = 2-5i
        assert!((d - Complex64::new(2.0, -5.0)).norm() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(Dtype::Real, Shape::new(1, 2, 2));
        let b = Tensor::zeros(Dtype::Real, Shape::new(1, 2, 3));
        assert!(a.add(&b).is_err());
        assert!(a.dot(&b).is_err());
        assert!(a.mse(&b).is_err());
    }
}
