//! Deterministic synthetic image generation: piecewise-smooth scenes made of
//! a handful of soft-edged ellipses and rectangles with gentle intensity
//! ramps over a mildly varying background, values in [0, 1]. Image k of a
//! dataset depends only on (seed, k), so prefixes of a dataset are stable
//! under changes of `count`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const REAL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const PHASE_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;

fn image_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_add(1).wrapping_mul(stream))
}

/// Cubic smoothstep on [0, 1].
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One soft-edged shape: an ellipse or an axis-rotated rectangle, with a
/// linear intensity ramp across the image.
struct ShapePrimitive {
    is_ellipse: bool,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos_t: f64,
    sin_t: f64,
    amplitude: f64,
    ramp_x: f64,
    ramp_y: f64,
}

impl ShapePrimitive {
    fn random(rng: &mut ChaCha8Rng) -> ShapePrimitive {
        let theta: f64 = rng.gen_range(0.0..PI);
        ShapePrimitive {
            is_ellipse: rng.gen_bool(0.5),
            cx: rng.gen_range(0.15..0.85),
            cy: rng.gen_range(0.15..0.85),
            rx: rng.gen_range(0.08..0.32),
            ry: rng.gen_range(0.08..0.32),
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            amplitude: rng.gen_range(-0.22..0.42),
            ramp_x: rng.gen_range(-0.12..0.12),
            ramp_y: rng.gen_range(-0.12..0.12),
        }
    }

    /// Soft membership in [0, 1] with a smooth edge, times the ramped value.
    fn value(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - self.cx, v - self.cy);
        let lu = (self.cos_t * du + self.sin_t * dv) / self.rx;
        let lv = (-self.sin_t * du + self.cos_t * dv) / self.ry;
        let edge = 0.15;
        let inside = if self.is_ellipse {
            let rho = (lu * lu + lv * lv).sqrt();
            smoothstep((1.0 - rho) / edge)
        } else {
            let mu = smoothstep((1.0 - lu.abs()) / edge);
            let mv = smoothstep((1.0 - lv.abs()) / edge);
            mu * mv
        };
        inside * (self.amplitude + self.ramp_x * du + self.ramp_y * dv)
    }
}

fn synth_plane(seed: u64, index: usize, size: usize) -> Vec<f64> {
    let mut rng = image_rng(seed, index, REAL_STREAM);
    let base: f64 = rng.gen_range(0.28..0.45);
    let tilt_x: f64 = rng.gen_range(-0.10..0.10);
    let tilt_y: f64 = rng.gen_range(-0.10..0.10);
    let wave_amp: f64 = rng.gen_range(0.0..0.05);
    let wave_fx: f64 = rng.gen_range(0.5..2.0);
    let wave_fy: f64 = rng.gen_range(0.5..2.0);
    let wave_phase: f64 = rng.gen_range(0.0..2.0 * PI);

    let n_shapes = rng.gen_range(2..=6);
    let shapes: Vec<ShapePrimitive> =
        (0..n_shapes).map(|_| ShapePrimitive::random(&mut rng)).collect();

    let mut plane = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let u = j as f64 / size as f64;
            let v = i as f64 / size as f64;
            let mut val = base
                + tilt_x * (u - 0.5)
                + tilt_y * (v - 0.5)
                + wave_amp * (2.0 * PI * (wave_fx * u + wave_fy * v) + wave_phase).sin();
            for s in &shapes {
                val += s.value(u, v);
            }
            plane.push(val.clamp(0.0, 1.0));
        }
    }
    plane
}

fn check_size(size: usize) -> Result<()> {
    if !(16..=128).contains(&size) {
        return Err(Error::invalid(format!(
            "synthetic image size must lie in [16, 128], got {size}"
        )));
    }
    Ok(())
}

/// Deterministic real-valued dataset of `count` piecewise-smooth images.
pub fn gen_synthetic(seed: u64, count: usize, size: usize) -> Result<Vec<Tensor>> {
    check_size(size)?;
    let shape = Shape::new(1, size, size);
    (0..count)
        .map(|k| Tensor::from_real(shape, synth_plane(seed, k, size)))
        .collect()
}

/// Complex variant: the same magnitude images multiplied by a smooth random
/// phase field, for runs whose measurements live in a complex space.
pub fn gen_synthetic_complex(seed: u64, count: usize, size: usize) -> Result<Vec<Tensor>> {
    check_size(size)?;
    let shape = Shape::new(1, size, size);
    (0..count)
        .map(|k| {
            let plane = synth_plane(seed, k, size);
            let mut rng = image_rng(seed, k, PHASE_STREAM);
            let px: f64 = rng.gen_range(-1.0..1.0);
            let py: f64 = rng.gen_range(-1.0..1.0);
            let pw: f64 = rng.gen_range(0.0..0.4);
            let pf: f64 = rng.gen_range(0.5..1.5);
            let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
            let values: Vec<Complex64> = plane
                .iter()
                .enumerate()
                .map(|(idx, &mag)| {
                    let u = (idx % size) as f64 / size as f64;
                    let v = (idx / size) as f64 / size as f64;
                    let phase = phase0
                        + PI * (px * u + py * v)
                        + pw * (2.0 * PI * pf * (u + v)).sin();
                    Complex64::from_polar(mag, phase)
                })
                .collect();
            Tensor::from_complex(shape, values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let a = gen_synthetic(42, 5, 16).unwrap();
        let b = gen_synthetic(42, 5, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data() == y.data(), "same seed must reproduce the dataset exactly");
        }
    }

    #[test]
    fn prefixes_are_stable_under_count_changes() {
        let a = gen_synthetic(7, 3, 16).unwrap();
        let b = gen_synthetic(7, 8, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data() == y.data(), "image k must depend only on (seed, k)");
        }
    }

    #[test]
    fn zero_count_gives_an_empty_dataset() {
        assert!(gen_synthetic(1, 0, 16).unwrap().is_empty());
    }

    #[test]
    fn values_stay_in_the_unit_interval() {
        for x in gen_synthetic(3, 20, 24).unwrap() {
            for v in x.data() {
                assert!(v.im == 0.0, "real dataset must have zero imaginary part");
                assert!((0.0..=1.0).contains(&v.re), "pixel {} outside [0, 1]", v.re);
            }
        }
    }

    #[test]
    fn mean_pixel_value_over_many_images_is_non_degenerate() {
        let images = gen_synthetic(11, 1000, 16).unwrap();
        let mut total = 0.0;
        let mut n = 0usize;
        for x in &images {
            total += x.data().iter().map(|v| v.re).sum::<f64>();
            n += x.data().len();
        }
        let mean = total / n as f64;
        assert!(
            (0.2..=0.8).contains(&mean),
            "mean pixel value {mean:.3} over 1000 images leaves [0.2, 0.8]"
        );
    }

    #[test]
    fn complex_variant_keeps_the_real_magnitudes() {
        let real = gen_synthetic(9, 4, 16).unwrap();
        let complex = gen_synthetic_complex(9, 4, 16).unwrap();
        for (r, c) in real.iter().zip(&complex) {
            assert!(c.is_complex());
            for (a, b) in r.data().iter().zip(c.data()) {
                assert!(
                    (a.re - b.norm()).abs() <= 1e-12,
                    "complex magnitude must match the real image"
                );
            }
        }
    }

    #[test]
    fn out_of_range_sizes_are_rejected() {
        assert!(gen_synthetic(0, 1, 8).is_err());
        assert!(gen_synthetic(0, 1, 256).is_err());
    }
}
