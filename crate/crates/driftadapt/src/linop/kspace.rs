//! Cartesian k-space undersampling. A mask picks vertical lines (columns of
//! the centered 2-D spectrum); sampled lines may carry fractional frequency
//! offsets δ ∈ [−2, 2], realized exactly as per-line complex modulations so
//! the operator stays differentiable in δ.
//!
//! Line indices live in the centered (fftshifted) frame: index ℓ corresponds
//! to signed frequency ℓ − ⌊W/2⌋, with DC at ℓ = ⌊W/2⌋.

use crate::error::{Error, Result};
use crate::tensor::{fft_rows, Dtype, Shape, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct KspaceMask {
    pub width: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
    /// Sorted sampled line indices in the centered frame.
    pub sampled_lines: Vec<usize>,
    /// Fractional frequency offset per sampled line, same order as `sampled_lines`.
    pub line_offsets: Vec<f64>,
}

/// Contiguous fully-sampled center block: ⌈center_fraction·W⌉ lines around DC.
fn center_block(width: usize, center_fraction: f64) -> (usize, usize) {
    let n_center = (center_fraction * width as f64).ceil() as usize;
    let n_center = n_center.clamp(1, width);
    let start = (width - n_center + 1) / 2;
    (start, n_center)
}

impl KspaceMask {
    /// Deterministic mask: the center block plus Gaussian-variable-density
    /// lines (σ = W/6 over the non-center indices), drawn without replacement
    /// from a ChaCha stream keyed by `seed`. All offsets start at zero.
    pub fn generate(width: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Result<KspaceMask> {
        if width == 0 {
            return Err(Error::invalid("mask width must be >= 1"));
        }
        if acceleration < 1.0 {
            return Err(Error::invalid("acceleration must be >= 1"));
        }
        if !(0.0..=1.0).contains(&center_fraction) {
            return Err(Error::invalid("center_fraction must lie in [0, 1]"));
        }
        let (start, n_center) = center_block(width, center_fraction);
        let target = ((width as f64 / acceleration).round() as usize).clamp(1, width);
        let mut lines: Vec<usize> = (start..start + n_center).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dc = (width / 2) as f64;
        let sigma = width as f64 / 6.0;
        let mut avail: Vec<usize> =
            (0..width).filter(|l| *l < start || *l >= start + n_center).collect();
        let mut weights: Vec<f64> = avail
            .iter()
            .map(|l| (-((*l as f64 - dc) * (*l as f64 - dc)) / (2.0 * sigma * sigma)).exp())
            .collect();
        while lines.len() < target && !avail.is_empty() {
            let total: f64 = weights.iter().sum();
            let mut r = rng.gen::<f64>() * total;
            let mut pick = avail.len() - 1;
            for (idx, w) in weights.iter().enumerate() {
                if r < *w {
                    pick = idx;
                    break;
                }
                r -= w;
            }
            lines.push(avail.swap_remove(pick));
            weights.swap_remove(pick);
        }
        lines.sort_unstable();
        let line_offsets = vec![0.0; lines.len()];
        Ok(KspaceMask { width, acceleration, center_fraction, seed, sampled_lines: lines, line_offsets })
    }

    /// Full sampling (every line, zero offsets); AᵀA = identity.
    pub fn full(width: usize) -> KspaceMask {
        KspaceMask {
            width,
            acceleration: 1.0,
            center_fraction: 1.0,
            seed: 0,
            sampled_lines: (0..width).collect(),
            line_offsets: vec![0.0; width],
        }
    }

    /// Perturbs every non-center sampled line with a uniform offset in
    /// [−2, 2]; center lines stay exact. Deterministic in `seed`.
    pub fn with_perturbed_lines(&self, seed: u64) -> KspaceMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (start, n_center) = center_block(self.width, self.center_fraction);
        let mut out = self.clone();
        for (idx, line) in out.sampled_lines.iter().enumerate() {
            let in_center = *line >= start && *line < start + n_center;
            let delta = rng.gen_range(-2.0..2.0);
            out.line_offsets[idx] = if in_center { 0.0 } else { delta };
        }
        out
    }

    /// Swaps `n` randomly chosen non-center sampled lines for unsampled ones,
    /// preserving the line count; offsets reset to zero. Deterministic in `seed`.
    pub fn with_swapped_lines(&self, n: usize, seed: u64) -> Result<KspaceMask> {
        let (start, n_center) = center_block(self.width, self.center_fraction);
        let swappable: Vec<usize> = self
            .sampled_lines
            .iter()
            .copied()
            .filter(|l| *l < start || *l >= start + n_center)
            .collect();
        let unsampled: Vec<usize> =
            (0..self.width).filter(|l| !self.sampled_lines.contains(l)).collect();
        if n > swappable.len() || n > unsampled.len() {
            return Err(Error::invalid(format!(
                "cannot swap {n} lines: {} swappable, {} unsampled",
                swappable.len(),
                unsampled.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out_lines: Vec<usize> = self.sampled_lines.clone();
        let mut remove = swappable;
        let mut add = unsampled;
        for _ in 0..n {
            let victim = remove.swap_remove(rng.gen_range(0..remove.len()));
            let incoming = add.swap_remove(rng.gen_range(0..add.len()));
            out_lines.retain(|l| *l != victim);
            out_lines.push(incoming);
        }
        out_lines.sort_unstable();
        let mut out = self.clone();
        out.line_offsets = vec![0.0; out_lines.len()];
        out.sampled_lines = out_lines;
        Ok(out)
    }

    pub fn is_center_line(&self, line: usize) -> bool {
        let (start, n_center) = center_block(self.width, self.center_fraction);
        line >= start && line < start + n_center
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = MaskFile {
            width: self.width,
            acceleration: self.acceleration,
            center_fraction: self.center_fraction,
            seed: self.seed,
            line_offsets: self.line_offsets.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("mask serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Regenerates the line set from the stored seed (bit-stable) and attaches
    /// the stored offsets.
    pub fn load_json(path: &Path) -> Result<KspaceMask> {
        let text = std::fs::read_to_string(path)?;
        let file: MaskFile =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("mask file: {e}")))?;
        let mut mask =
            KspaceMask::generate(file.width, file.acceleration, file.center_fraction, file.seed)?;
        if file.line_offsets.len() != mask.sampled_lines.len() {
            return Err(Error::format(format!(
                "mask file stores {} offsets but the seed regenerates {} lines",
                file.line_offsets.len(),
                mask.sampled_lines.len()
            )));
        }
        mask.line_offsets = file.line_offsets;
        Ok(mask)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    width: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
    line_offsets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierMaskOp {
    pub(crate) shape: Shape,
    pub(crate) mask: KspaceMask,
}

impl FourierMaskOp {
    pub(crate) fn new(shape: Shape, mask: KspaceMask) -> Result<FourierMaskOp> {
        if mask.width != shape.width {
            return Err(Error::invalid(format!(
                "mask width {} does not match image width {}",
                mask.width, shape.width
            )));
        }
        if mask.sampled_lines.iter().any(|l| *l >= shape.width) {
            return Err(Error::invalid("mask line index out of range"));
        }
        if mask.sampled_lines.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mask lines must be sorted and duplicate-free"));
        }
        if mask.line_offsets.len() != mask.sampled_lines.len() {
            return Err(Error::invalid("one offset per sampled line required"));
        }
        Ok(FourierMaskOp { shape, mask })
    }

    pub(crate) fn out_shape(&self) -> Shape {
        Shape::new(self.shape.channels, self.shape.height, self.mask.sampled_lines.len())
    }

    /// Signed frequency of sampled line `k`, including its offset.
    fn frequency(&self, k: usize, offsets: &[f64]) -> f64 {
        let l = self.mask.sampled_lines[k];
        (l as f64 - (self.shape.width / 2) as f64) + offsets[k]
    }

    fn check_complex(&self, t: &Tensor) -> Result<()> {
        if t.dtype() != Dtype::Complex {
            return Err(Error::Dtype { expected: Dtype::Complex, got: t.dtype() });
        }
        Ok(())
    }

    /// Per-channel column FFT along h, returned transposed as (w rows × h cols).
    fn columns_fft(&self, x: &Tensor, inverse: bool) -> Vec<Complex64> {
        let Shape { channels, height: h, width: w } = self.shape;
        let mut buf = vec![Complex64::new(0.0, 0.0); channels * h * w];
        let src = x.data();
        for chan in 0..channels {
            let base = chan * h * w;
            for i in 0..h {
                for j in 0..w {
                    buf[base + j * h + i] = src[base + i * w + j];
                }
            }
            // 1-D transforms of length h on each transposed row.
            fft_rows(&mut buf[base..base + h * w], h, inverse);
        }
        let scale = 1.0 / (h as f64).sqrt();
        for z in &mut buf {
            *z *= scale;
        }
        buf
    }

    /// A x: unitary DFT along h, then exact DFT evaluation along w at each
    /// sampled (possibly fractional) line frequency.
    pub(crate) fn apply_with(&self, x: &Tensor, offsets: &[f64]) -> Result<Tensor> {
        self.check_complex(x)?;
        let Shape { channels, height: h, width: w } = self.shape;
        let cols = self.columns_fft(x, false);
        let lines = self.mask.sampled_lines.len();
        let mut out = Tensor::zeros(Dtype::Complex, self.out_shape());
        let dst = out.data_mut();
        let wscale = 1.0 / (w as f64).sqrt();
        for k in 0..lines {
            let nu = self.frequency(k, offsets);
            for chan in 0..channels {
                let base = chan * h * w;
                let obase = chan * h * lines;
                for j in 0..w {
                    let phase = -2.0 * PI * nu * j as f64 / w as f64;
                    let m = Complex64::new(phase.cos(), phase.sin()) * wscale;
                    let col = &cols[base + j * h..base + j * h + h];
                    for (u, cz) in col.iter().enumerate() {
                        dst[obase + u * lines + k] += cz * m;
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.apply_with(x, &self.mask.line_offsets)
    }

    /// Aᵀ y: spread each sampled line back with the conjugate modulation,
    /// then inverse unitary DFT along h.
    pub(crate) fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.check_complex(y)?;
        let Shape { channels, height: h, width: w } = self.shape;
        let lines = self.mask.sampled_lines.len();
        let expected = Shape::new(channels, h, lines);
        if y.shape() != expected {
            return Err(Error::ShapeMismatch { left: y.shape(), right: expected });
        }
        let wscale = 1.0 / (w as f64).sqrt();
        // Build the transposed (w × h) spectrum, then invert columns.
        let mut buf = vec![Complex64::new(0.0, 0.0); channels * h * w];
        let src = y.data();
        for k in 0..lines {
            let nu = self.frequency(k, &self.mask.line_offsets);
            for chan in 0..channels {
                let base = chan * h * w;
                let obase = chan * h * lines;
                for j in 0..w {
                    let phase = 2.0 * PI * nu * j as f64 / w as f64;
                    let m = Complex64::new(phase.cos(), phase.sin()) * wscale;
                    for u in 0..h {
                        buf[base + j * h + u] += src[obase + u * lines + k] * m;
                    }
                }
            }
        }
        let mut out = Tensor::zeros(Dtype::Complex, self.shape);
        let dst = out.data_mut();
        let hscale = 1.0 / (h as f64).sqrt();
        for chan in 0..channels {
            let base = chan * h * w;
            fft_rows(&mut buf[base..base + h * w], h, true);
            for i in 0..h {
                for j in 0..w {
                    dst[base + i * w + j] = buf[base + j * h + i] * hscale;
                }
            }
        }
        Ok(out)
    }

    /// JVP along `direction` in offset space: each line picks up the
    /// derivative of its modulation, −2πi·j/W per image column j.
    pub(crate) fn d_apply(&self, x: &Tensor, direction: &[f64]) -> Result<Tensor> {
        self.check_complex(x)?;
        let Shape { channels, height: h, width: w } = self.shape;
        let cols = self.columns_fft(x, false);
        let lines = self.mask.sampled_lines.len();
        let mut out = Tensor::zeros(Dtype::Complex, self.out_shape());
        let dst = out.data_mut();
        let wscale = 1.0 / (w as f64).sqrt();
        for k in 0..lines {
            if direction[k] == 0.0 {
                continue;
            }
            let nu = self.frequency(k, &self.mask.line_offsets);
            for chan in 0..channels {
                let base = chan * h * w;
                let obase = chan * h * lines;
                for j in 0..w {
                    let phase = -2.0 * PI * nu * j as f64 / w as f64;
                    let dphase = -2.0 * PI * j as f64 / w as f64;
                    let m = Complex64::new(phase.cos(), phase.sin())
                        * Complex64::new(0.0, dphase)
                        * (wscale * direction[k]);
                    let col = &cols[base + j * h..base + j * h + h];
                    for (u, cz) in col.iter().enumerate() {
                        dst[obase + u * lines + k] += cz * m;
                    }
                }
            }
        }
        Ok(out)
    }

    /// VJP: Re⟨cot, ∂(Ax)/∂δ_k⟩ for every line k in one pass.
    pub(crate) fn sigma_vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Vec<f64>> {
        self.check_complex(x)?;
        self.check_complex(cot)?;
        let Shape { channels, height: h, width: w } = self.shape;
        let cols = self.columns_fft(x, false);
        let lines = self.mask.sampled_lines.len();
        let cs = cot.data();
        let wscale = 1.0 / (w as f64).sqrt();
        let mut grad = vec![0.0; lines];
        for k in 0..lines {
            let nu = self.frequency(k, &self.mask.line_offsets);
            let mut acc = 0.0;
            for chan in 0..channels {
                let base = chan * h * w;
                let obase = chan * h * lines;
                for j in 0..w {
                    let phase = -2.0 * PI * nu * j as f64 / w as f64;
                    let dphase = -2.0 * PI * j as f64 / w as f64;
                    let m = Complex64::new(phase.cos(), phase.sin())
                        * Complex64::new(0.0, dphase)
                        * wscale;
                    let col = &cols[base + j * h..base + j * h + h];
                    for (u, cz) in col.iter().enumerate() {
                        let tangent = cz * m;
                        let c = cs[obase + u * lines + k];
                        acc += c.re * tangent.re + c.im * tangent.im;
                    }
                }
            }
            grad[k] = acc;
        }
        Ok(grad)
    }
}
