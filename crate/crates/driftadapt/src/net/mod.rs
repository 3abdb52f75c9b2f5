//! Residual reconstruction network f(y; θ, A) = Aᵀy + cnn_θ(Aᵀy).
//!
//! The CNN is a fixed menu of 3×3 periodically padded convolutions with
//! biases and ReLU activations, plus an identity skip from input to output,
//! so an all-zero parameter vector makes the network the exact adjoint.
//! Complex images are handled by treating real and imaginary parts as
//! separate channel planes. Reverse-mode gradients with respect to the
//! parameters, the measurement, and the forward-model parameters σ are
//! implemented by hand over this layer menu.

mod opt;
mod train;

pub use opt::{Optimizer, OptimizerSpec};
pub use train::{
    add_gaussian_noise, train_supervised, train_supervised_mixed, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use crate::linop::Op;
use crate::tensor::{Dtype, Shape, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

/// Channel widths of the convolution stack, input to output. The first and
/// last widths must match so the identity skip is well formed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    widths: Vec<usize>,
}

impl Arch {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("architecture needs at least one conv layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if widths.first() != widths.last() {
            return Err(Error::invalid(
                "input and output widths must match for the residual skip",
            ));
        }
        Ok(Self { widths })
    }

    /// Default stack for real images: 1 → 16 → 16 → 16 → 1.
    pub fn default_real() -> Self {
        Self { widths: vec![1, 16, 16, 16, 1] }
    }

    /// Default stack for complex images, real/imaginary as channels:
    /// 2 → 16 → 16 → 16 → 2.
    pub fn default_complex() -> Self {
        Self { widths: vec![2, 16, 16, 16, 2] }
    }

    /// Default stack matching a measurement dtype.
    pub fn default_for(dtype: Dtype) -> Self {
        match dtype {
            Dtype::Real => Self::default_real(),
            Dtype::Complex => Self::default_complex(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        self.widths
            .windows(2)
            .map(|pair| LayerLayout { in_channels: pair[0], out_channels: pair[1] })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerLayout::param_count).sum()
    }
}

/// One 3×3 convolution layer: kernel weights followed by per-channel biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerLayout {
    pub fn kernel_count(&self) -> usize {
        self.out_channels * self.in_channels * 9
    }

    pub fn param_count(&self) -> usize {
        self.kernel_count() + self.out_channels
    }
}

/// Flat parameter vector plus the layer layout that interprets it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layout: Vec<LayerLayout>,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(layout: Vec<LayerLayout>) -> Self {
        let n = layout.iter().map(LayerLayout::param_count).sum();
        Self { layout, theta: vec![0.0; n] }
    }

    pub fn from_theta(layout: Vec<LayerLayout>, theta: Vec<f64>) -> Result<Self> {
        let want: usize = layout.iter().map(LayerLayout::param_count).sum();
        if theta.len() != want {
            return Err(Error::invalid(format!(
                "parameter vector length {} does not match layout total {want}",
                theta.len()
            )));
        }
        Ok(Self { layout, theta })
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Hash of the layer layout; checkpoints refuse to load into a network
    /// whose layout hash differs.
    pub fn layout_hash(&self) -> String {
        layout_hash(&self.layout)
    }

    /// Offset of layer `l`'s kernel block in the flat vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.layout[..l].iter().map(LayerLayout::param_count).sum()
    }

    fn kernel(&self, l: usize) -> &[f64] {
        let base = self.layer_offset(l);
        &self.theta[base..base + self.layout[l].kernel_count()]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let base = self.layer_offset(l) + self.layout[l].kernel_count();
        &self.theta[base..base + self.layout[l].out_channels]
    }
}

fn layout_hash(layout: &[LayerLayout]) -> String {
    let mut desc = String::from("conv3x3-periodic-residual:");
    for layer in layout {
        desc.push_str(&format!("{}>{};", layer.in_channels, layer.out_channels));
    }
    let digest = Sha256::digest(desc.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradients of Re⟨cotangent, forward(A, y)⟩ from one reverse pass.
#[derive(Clone, Debug)]
pub struct NetGradients {
    /// Gradient with respect to the flat parameter vector θ.
    pub theta: Vec<f64>,
    /// Gradient with respect to the measurement y, as a cotangent tensor:
    /// d(loss) = Re⟨measurement, dy⟩.
    pub measurement: Tensor,
    /// Gradient with respect to the forward-model parameters σ of A (empty
    /// when A has none).
    pub sigma: Vec<f64>,
}

/// Residual reconstruction network with hand-implemented reverse mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconNet {
    arch: Arch,
    params: NetworkParams,
}

/// Activations recorded by a forward pass, consumed by the reverse pass.
struct CnnTrace {
    /// act[0] is the input; act[l+1] is layer l's post-activation output.
    act: Vec<Vec<Vec<f64>>>,
    /// pre[l] is layer l's pre-activation output.
    pre: Vec<Vec<Vec<f64>>>,
}

impl ReconNet {
    /// All-zero parameters: the network is exactly the adjoint map y ↦ Aᵀy.
    pub fn zeros(arch: Arch) -> Self {
        let params = NetworkParams::zeros(arch.layout());
        Self { arch, params }
    }

    /// He-uniform kernels scaled by 0.1 (near-identity start), zero biases.
    pub fn init_random(arch: Arch, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.arch.layers() {
            let layer = net.params.layout[l];
            let fan_in = (layer.in_channels * 9) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let base = net.params.layer_offset(l);
            for k in 0..layer.kernel_count() {
                net.params.theta[base + k] = 0.1 * rng.gen_range(-limit..limit);
            }
        }
        net
    }

    pub fn from_parts(arch: Arch, params: NetworkParams) -> Result<Self> {
        if params.layout != arch.layout() {
            return Err(Error::invalid("parameter layout does not match architecture"));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn theta(&self) -> &[f64] {
        self.params.theta()
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.params.theta_mut()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params.theta.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.theta.len(),
                theta.len()
            )));
        }
        self.params.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Reconstruction x̂ = Aᵀy + cnn(Aᵀy).
    pub fn forward(&self, a: &Op, y: &Tensor) -> Result<Tensor> {
        let x0 = a.adjoint(y)?;
        self.refine(&x0)
    }

    /// The image-domain map x₀ ↦ x₀ + cnn(x₀) on an already-formed adjoint
    /// image.
    pub fn refine(&self, x0: &Tensor) -> Result<Tensor> {
        let planes = self.to_planes(x0)?;
        let shape = x0.shape();
        let (out, _) = self.cnn_forward(&planes, shape.height, shape.width);
        let summed: Vec<Vec<f64>> = planes
            .iter()
            .zip(&out)
            .map(|(p, o)| p.iter().zip(o).map(|(a, b)| a + b).collect())
            .collect();
        from_planes(&summed, x0.dtype(), shape)
    }

    /// Auto-encoding map g(x) = forward(A₀, A₀x) used as the regularizer.
    pub fn autoencode(&self, a0: &Op, x: &Tensor) -> Result<Tensor> {
        let y = a0.apply(x)?;
        self.forward(a0, &y)
    }

    /// Reverse-mode gradients of Re⟨cotangent, forward(A, y)⟩.
    pub fn backward(&self, a: &Op, y: &Tensor, cot: &Tensor) -> Result<NetGradients> {
        let x0 = a.adjoint(y)?;
        if cot.shape() != x0.shape() {
            return Err(Error::ShapeMismatch { left: cot.shape(), right: x0.shape() });
        }
        let (grad_theta, grad_x0) = self.refine_backward(&x0, cot)?;
        // x₀ = A(σ)ᵀy, so the measurement cotangent pulls forward through A
        // and the σ gradient is Re⟨(∂ⱼA) grad_x0, y⟩.
        let measurement = a.apply(&grad_x0)?;
        let sigma = a.sigma_vjp(&grad_x0, y)?;
        Ok(NetGradients { theta: grad_theta, measurement, sigma })
    }

    /// Gradients of Re⟨cotangent, refine(x₀)⟩ with respect to θ and x₀.
    pub fn refine_backward(&self, x0: &Tensor, cot: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        if cot.shape() != x0.shape() {
            return Err(Error::ShapeMismatch { left: cot.shape(), right: x0.shape() });
        }
        let shape = x0.shape();
        let planes = self.to_planes(x0)?;
        let (h, w) = (shape.height, shape.width);
        let (_, trace) = self.cnn_forward(&planes, h, w);
        let cot_planes = planes_of(cot, self.arch.widths[0], shape)?;

        let mut grad_theta = vec![0.0; self.params.theta.len()];
        // The residual output is input + cnn(input): the cotangent enters the
        // conv stack unchanged and is later added back for the skip.
        let mut g = cot_planes.clone();
        let layers = self.arch.layers();
        for l in (0..layers).rev() {
            if l < layers - 1 {
                for (gp, zp) in g.iter_mut().zip(&trace.pre[l]) {
                    for (gv, zv) in gp.iter_mut().zip(zp) {
                        if *zv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
            let layer = self.params.layout[l];
            let base = self.params.layer_offset(l);
            let block = &mut grad_theta[base..base + layer.param_count()];
            let (grad_kernel, grad_bias) = block.split_at_mut(layer.kernel_count());
            conv3x3_backward(&trace.act[l], &g, layer, h, w, grad_kernel, grad_bias);
            g = conv3x3_backprop_input(&g, self.params.kernel(l), layer, h, w);
        }
        let grad_in: Vec<Vec<f64>> = cot_planes
            .iter()
            .zip(&g)
            .map(|(c, gi)| c.iter().zip(gi).map(|(a, b)| a + b).collect())
            .collect();
        let grad_x0 = from_planes(&grad_in, x0.dtype(), shape)?;
        Ok((grad_theta, grad_x0))
    }

    fn to_planes(&self, x0: &Tensor) -> Result<Vec<Vec<f64>>> {
        planes_of(x0, self.arch.widths[0], x0.shape())
    }

    fn cnn_forward(&self, planes: &[Vec<f64>], h: usize, w: usize) -> (Vec<Vec<f64>>, CnnTrace) {
        let layers = self.arch.layers();
        let mut trace = CnnTrace { act: Vec::with_capacity(layers + 1), pre: Vec::with_capacity(layers) };
        trace.act.push(planes.to_vec());
        for l in 0..layers {
            let layer = self.params.layout[l];
            let z = conv3x3_forward(
                &trace.act[l],
                self.params.kernel(l),
                self.params.bias(l),
                layer,
                h,
                w,
            );
            let out = if l < layers - 1 {
                z.iter()
                    .map(|p| p.iter().map(|&v| v.max(0.0)).collect())
                    .collect()
            } else {
                z.clone()
            };
            trace.pre.push(z);
            trace.act.push(out);
        }
        (trace.act.last().unwrap().clone(), trace)
    }

    /// Write the checkpoint: magic line, JSON architecture header, then the
    /// flat θ payload as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            widths: self.arch.widths.clone(),
            param_count: self.params.theta.len(),
            layout_hash: self.params.layout_hash(),
        };
        let mut file = std::fs::File::create(path)?;
        file.write_all(b"RNET1\n")?;
        let json = serde_json::to_string(&header)
            .map_err(|e| Error::format(format!("checkpoint header encode: {e}")))?;
        file.write_all(json.as_bytes())?;
        file.write_all(b"\n")?;
        let mut payload = Vec::with_capacity(self.params.theta.len() * 8);
        for v in &self.params.theta {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let magic = b"RNET1\n";
        if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
            return Err(Error::format("not a network checkpoint (bad magic)"));
        }
        let rest = &bytes[magic.len()..];
        let newline = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("checkpoint header is not terminated"))?;
        let header: CheckpointHeader = serde_json::from_slice(&rest[..newline])
            .map_err(|e| Error::format(format!("checkpoint header decode: {e}")))?;
        let arch = Arch::new(header.widths)?;
        if arch.param_count() != header.param_count {
            return Err(Error::format(format!(
                "checkpoint claims {} parameters but the architecture has {}",
                header.param_count,
                arch.param_count()
            )));
        }
        if layout_hash(&arch.layout()) != header.layout_hash {
            return Err(Error::format("checkpoint layout hash does not match architecture"));
        }
        let payload = &rest[newline + 1..];
        if payload.len() != header.param_count * 8 {
            return Err(Error::format(format!(
                "checkpoint payload is {} bytes, expected {}",
                payload.len(),
                header.param_count * 8
            )));
        }
        let theta: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = NetworkParams::from_theta(arch.layout(), theta)?;
        Self::from_parts(arch, params)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    widths: Vec<usize>,
    param_count: usize,
    layout_hash: String,
}

/// Split a tensor into real channel planes: one plane per channel for real
/// images, (re, im) plane pairs per channel for complex images.
fn planes_of(x: &Tensor, want: usize, shape: Shape) -> Result<Vec<Vec<f64>>> {
    if x.shape() != shape {
        return Err(Error::ShapeMismatch { left: x.shape(), right: shape });
    }
    let per_channel = match x.dtype() {
        Dtype::Real => 1,
        Dtype::Complex => 2,
    };
    let total = shape.channels * per_channel;
    if total != want {
        return Err(Error::invalid(format!(
            "network expects {want} input planes but the image provides {total}"
        )));
    }
    let hw = shape.height * shape.width;
    let mut planes = Vec::with_capacity(total);
    for c in 0..shape.channels {
        let chan = &x.data()[c * hw..(c + 1) * hw];
        planes.push(chan.iter().map(|v| v.re).collect());
        if per_channel == 2 {
            planes.push(chan.iter().map(|v| v.im).collect());
        }
    }
    Ok(planes)
}

fn from_planes(planes: &[Vec<f64>], dtype: Dtype, shape: Shape) -> Result<Tensor> {
    let hw = shape.height * shape.width;
    match dtype {
        Dtype::Real => {
            assert!(planes.len() == shape.channels, "plane count mismatch");
            let mut data = Vec::with_capacity(shape.len());
            for p in planes {
                data.extend(p.iter().copied());
            }
            Tensor::from_real(shape, data)
        }
        Dtype::Complex => {
            assert!(planes.len() == 2 * shape.channels, "plane count mismatch");
            let mut data = Vec::with_capacity(shape.len());
            for c in 0..shape.channels {
                let (re, im) = (&planes[2 * c], &planes[2 * c + 1]);
                assert!(re.len() == hw && im.len() == hw, "plane size mismatch");
                data.extend(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)));
            }
            Tensor::from_complex(shape, data)
        }
    }
}

/// One wrapped stencil row: out[j] += w0·src[j−1] + w1·src[j] + w2·src[j+1]
/// with periodic column indices. The interior runs on direct slice indexing
/// so the compiler can vectorize it; only the two edge columns wrap.
#[inline]
fn stencil_row_add(out_row: &mut [f64], src: &[f64], w0: f64, w1: f64, w2: f64) {
    let n = out_row.len();
    debug_assert!(src.len() == n, "stencil rows must have equal width");
    if n == 1 {
        out_row[0] += (w0 + w1 + w2) * src[0];
        return;
    }
    for j in 1..n - 1 {
        out_row[j] += w0 * src[j - 1] + w1 * src[j] + w2 * src[j + 1];
    }
    out_row[0] += w0 * src[n - 1] + w1 * src[0] + w2 * src[1];
    out_row[n - 1] += w0 * src[n - 2] + w1 * src[n - 1] + w2 * src[0];
}

/// Dot products of `g` against the three wrapped column shifts of `src`:
/// (Σ g[j]·src[j−1], Σ g[j]·src[j], Σ g[j]·src[j+1]).
#[inline]
fn stencil_row_dots(g: &[f64], src: &[f64]) -> (f64, f64, f64) {
    let n = g.len();
    debug_assert!(src.len() == n, "stencil rows must have equal width");
    if n == 1 {
        let p = g[0] * src[0];
        return (p, p, p);
    }
    let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for j in 1..n - 1 {
        d0 += g[j] * src[j - 1];
        d1 += g[j] * src[j];
        d2 += g[j] * src[j + 1];
    }
    d0 += g[0] * src[n - 1] + g[n - 1] * src[n - 2];
    d1 += g[0] * src[0] + g[n - 1] * src[n - 1];
    d2 += g[0] * src[1] + g[n - 1] * src[0];
    (d0, d1, d2)
}

/// Periodic 3×3 convolution: out[o] = b[o] + Σ_c k[o][c] ⋆ in[c], kernel
/// offsets −1..1 in both axes, weights flat as [(o·C_in + c)·3 + ki]·3 + kj.
fn conv3x3_forward(
    input: &[Vec<f64>],
    kernel: &[f64],
    bias: &[f64],
    layer: LayerLayout,
    h: usize,
    w: usize,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; h * w]; layer.out_channels];
    for (o, plane) in out.iter_mut().enumerate() {
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for (c, inp) in input.iter().enumerate() {
            let kbase = (o * layer.in_channels + c) * 9;
            for ki in 0..3 {
                let taps = &kernel[kbase + ki * 3..kbase + ki * 3 + 3];
                if taps == [0.0; 3] {
                    continue;
                }
                for i in 0..h {
                    let si = (i + ki + h - 1) % h;
                    stencil_row_add(
                        &mut plane[i * w..(i + 1) * w],
                        &inp[si * w..(si + 1) * w],
                        taps[0],
                        taps[1],
                        taps[2],
                    );
                }
            }
        }
    }
    out
}

/// Accumulate kernel and bias gradients for one layer given the output
/// cotangent `gout` and the layer's input activations.
fn conv3x3_backward(
    input: &[Vec<f64>],
    gout: &[Vec<f64>],
    layer: LayerLayout,
    h: usize,
    w: usize,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    for (o, gp) in gout.iter().enumerate() {
        grad_bias[o] += gp.iter().sum::<f64>();
        for (c, inp) in input.iter().enumerate() {
            let kbase = (o * layer.in_channels + c) * 9;
            let mut acc = [0.0; 9];
            for i in 0..h {
                let g = &gp[i * w..(i + 1) * w];
                for ki in 0..3 {
                    let si = (i + ki + h - 1) % h;
                    let (d0, d1, d2) = stencil_row_dots(g, &inp[si * w..(si + 1) * w]);
                    acc[ki * 3] += d0;
                    acc[ki * 3 + 1] += d1;
                    acc[ki * 3 + 2] += d2;
                }
            }
            for (slot, a) in grad_kernel[kbase..kbase + 9].iter_mut().zip(acc) {
                *slot += a;
            }
        }
    }
}

/// Cotangent with respect to the layer input: correlation of `gout` with the
/// kernel, computed as a gather with the tap offsets flipped (the transpose
/// of the forward stencil).
fn conv3x3_backprop_input(
    gout: &[Vec<f64>],
    kernel: &[f64],
    layer: LayerLayout,
    h: usize,
    w: usize,
) -> Vec<Vec<f64>> {
    let mut gin = vec![vec![0.0; h * w]; layer.in_channels];
    for (c, gplane) in gin.iter_mut().enumerate() {
        for (o, gp) in gout.iter().enumerate() {
            let kbase = (o * layer.in_channels + c) * 9;
            for ki in 0..3 {
                let taps = &kernel[kbase + ki * 3..kbase + ki * 3 + 3];
                if taps == [0.0; 3] {
                    continue;
                }
                for i in 0..h {
                    // Forward tap (ki, kj) reads source row (i + ki − 1), so
                    // the transpose reads cotangent row (i − ki + 1) with the
                    // column taps reversed.
                    let si = (i + 1 + h - ki) % h;
                    stencil_row_add(
                        &mut gplane[i * w..(i + 1) * w],
                        &gp[si * w..(si + 1) * w],
                        taps[2],
                        taps[1],
                        taps[0],
                    );
                }
            }
        }
    }
    gin
}
