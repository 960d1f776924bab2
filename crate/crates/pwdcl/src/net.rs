//! A small convolutional encoder-decoder operating on 2-channel (I/Q)
//! crops, with hand-written exact reverse-mode differentiation.
//!
//! Topology: per level one block of two 3x3 convolutions with LeakyReLU,
//! 2x2 max-pool between encoder levels, nearest-neighbor upsampling plus a
//! channel-halving convolution on the way back up, channel-concatenated
//! skip connections, and a final 3x3 projection squashed by tanh. A
//! 1-level network degenerates to input block, plain output block and the
//! projection.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Violation};
use crate::domain::Validate;

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

/// Dense activation tensor, channels x height x width, row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::invalid_argument(format!(
                "tensor values length {} does not match shape {}x{}x{}",
                values.len(),
                channels,
                height,
                width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("tensor contains non-finite values"));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

/// Architecture hyperparameters. Desk-scale default: 3 levels with
/// {8, 16, 32} filters on 64x64 crops.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub filters_per_level: Vec<usize>,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub crop_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            filters_per_level: vec![8, 16, 32],
            kernel_size: 3,
            leaky_slope: 0.01,
            crop_size: 64,
        }
    }
}

impl Validate for NetworkConfig {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.levels == 0 {
            v.push(Violation::new("levels", "must be at least 1"));
        }
        if self.filters_per_level.len() != self.levels {
            v.push(Violation::new(
                "filters_per_level",
                "length must equal levels",
            ));
        }
        if self.filters_per_level.contains(&0) {
            v.push(Violation::new("filters_per_level", "filters must be positive"));
        }
        if self.kernel_size != 3 {
            v.push(Violation::new("kernel_size", "only 3x3 kernels supported"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            v.push(Violation::new("leaky_slope", "must lie in (0, 1)"));
        }
        let div = 1usize << self.levels.saturating_sub(1);
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(div) {
            v.push(Violation::new(
                "crop_size",
                format!("must be positive and divisible by 2^(levels-1) = {div}"),
            ));
        }
        v
    }
}

/// One 3x3 convolution: kernel layout [out_ch][in_ch][ky][kx], flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    pub fn k_idx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_ch + ic) * 3 + ky) * 3 + kx
    }
}

/// All learnable weights in a fixed layout: encoder blocks top-down
/// (bottleneck last), then the decoder bottom-up (up-convolution followed
/// by its block per level), then the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<ConvLayer>,
    pub iteration: u64,
}

impl Parameters {
    /// Gradient container with the same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.in_ch, l.out_ch))
                .collect(),
            iteration: 0,
        }
    }

    pub fn n_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.kernel.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Channel counts of every convolution in layout order; `activated` marks
/// layers followed by LeakyReLU (all but the output projection).
pub fn layer_plan(cfg: &NetworkConfig) -> Vec<(usize, usize, bool)> {
    let l = cfg.levels;
    let f = &cfg.filters_per_level;
    let mut plan = Vec::new();
    for level in 0..l {
        let in_ch = if level == 0 { 2 } else { f[level - 1] };
        plan.push((in_ch, f[level], true));
        plan.push((f[level], f[level], true));
    }
    if l == 1 {
        plan.push((f[0], f[0], true));
        plan.push((f[0], f[0], true));
    } else {
        for level in (0..l - 1).rev() {
            plan.push((f[level + 1], f[level], true)); // upsample conv
            plan.push((2 * f[level], f[level], true)); // after skip concat
            plan.push((f[level], f[level], true));
        }
    }
    plan.push((f[0], 2, false)); // output projection, tanh outside
    plan
}

/// Fresh parameters: kernels uniform in (-sqrt(3/fan_in), sqrt(3/fan_in)),
/// biases zero, reproducible from the seed.
pub fn init_parameters(cfg: &NetworkConfig, seed: u64) -> Result<Parameters> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_plan(cfg)
        .iter()
        .map(|&(in_ch, out_ch, _)| {
            let fan_in = (in_ch * 9) as f64;
            let bound = (3.0 / fan_in).sqrt();
            let mut layer = ConvLayer::zeros(in_ch, out_ch);
            for k in layer.kernel.iter_mut() {
                *k = rng.random_range(-bound..bound);
            }
            layer
        })
        .collect();
    Ok(Parameters {
        layers,
        iteration: 0,
    })
}

// ---------------------------------------------------------------------------
// Primitive ops and their adjoints
// ---------------------------------------------------------------------------

/// Same-padded 3x3 cross-correlation plus bias.
pub fn conv2d(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    if input.channels != layer.in_ch {
        return Err(Error::invalid_argument(format!(
            "conv2d channel mismatch: input {} vs layer {}",
            input.channels, layer.in_ch
        )));
    }
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    let mut out = Tensor::zeros(layer.out_ch, h, w);
    for oc in 0..layer.out_ch {
        let ochan = &mut out.values[oc * plane..(oc + 1) * plane];
        let b = layer.bias[oc];
        for v in ochan.iter_mut() {
            *v = b;
        }
        for ic in 0..layer.in_ch {
            let ichan = &input.values[ic * plane..(ic + 1) * plane];
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                    let kv = layer.kernel[layer.k_idx(oc, ic, ky, kx)];
                    for y in y_lo..y_hi {
                        let iy = (y as isize + dy) as usize;
                        let orow = y * w;
                        let irow = iy * w;
                        for x in x_lo..x_hi {
                            let ix = (x as isize + dx) as usize;
                            ochan[orow + x] += kv * ichan[irow + ix];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`]: gradients with respect to kernel, bias and input,
/// given the upstream gradient on the output.
pub fn conv2d_adjoint(
    layer: &ConvLayer,
    input: &Tensor,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    let mut grad_kernel = vec![0.0; layer.kernel.len()];
    let mut grad_bias = vec![0.0; layer.bias.len()];
    let mut grad_in = Tensor::zeros(layer.in_ch, h, w);
    for oc in 0..layer.out_ch {
        let gchan = &grad_out.values[oc * plane..(oc + 1) * plane];
        grad_bias[oc] = gchan.iter().sum();
        for ic in 0..layer.in_ch {
            let ichan = &input.values[ic * plane..(ic + 1) * plane];
            let gin = &mut grad_in.values[ic * plane..(ic + 1) * plane];
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                    let kv = layer.kernel[layer.k_idx(oc, ic, ky, kx)];
                    let mut gk = 0.0;
                    for y in y_lo..y_hi {
                        let iy = (y as isize + dy) as usize;
                        let orow = y * w;
                        let irow = iy * w;
                        for x in x_lo..x_hi {
                            let ix = (x as isize + dx) as usize;
                            let g = gchan[orow + x];
                            gk += g * ichan[irow + ix];
                            gin[irow + ix] += kv * g;
                        }
                    }
                    grad_kernel[layer.k_idx(oc, ic, ky, kx)] += gk;
                }
            }
        }
    }
    (grad_kernel, grad_bias, grad_in)
}

pub fn leaky_relu(t: &Tensor, slope: f64) -> Tensor {
    let mut out = t.clone();
    for v in out.values.iter_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

/// Gradient factor of LeakyReLU given the pre-activation values; the kink
/// at exactly zero takes the identity branch.
pub fn leaky_relu_adjoint(preact: &Tensor, grad: &Tensor, slope: f64) -> Tensor {
    let mut out = grad.clone();
    for (g, p) in out.values.iter_mut().zip(&preact.values) {
        if *p < 0.0 {
            *g *= slope;
        }
    }
    out
}

/// 2x2 max-pool; returns the pooled tensor and, per output value, the flat
/// index of the winning input (ties go to the first in row-major order).
pub fn max_pool2(t: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if !t.height.is_multiple_of(2) || !t.width.is_multiple_of(2) {
        return Err(Error::invalid_argument(
            "max_pool2 requires even spatial dimensions",
        ));
    }
    let (c, h, w) = t.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = ch * h * w + (2 * oy) * w + 2 * ox;
                let mut best = t.values[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if t.values[idx] > best {
                        best = t.values[idx];
                        best_idx = idx;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out.values[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes pooled gradients back to the argmax positions.
pub fn max_pool2_adjoint(
    grad_out: &Tensor,
    argmax: &[usize],
    in_shape: (usize, usize, usize),
) -> Tensor {
    let mut grad_in = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (g, &idx) in grad_out.values.iter().zip(argmax) {
        grad_in.values[idx] += g;
    }
    grad_in
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(t: &Tensor) -> Tensor {
    let (c, h, w) = t.shape();
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = t.values[ch * h * w + y * w + x];
                let base = ch * 4 * h * w;
                out.values[base + (2 * y) * 2 * w + 2 * x] = v;
                out.values[base + (2 * y) * 2 * w + 2 * x + 1] = v;
                out.values[base + (2 * y + 1) * 2 * w + 2 * x] = v;
                out.values[base + (2 * y + 1) * 2 * w + 2 * x + 1] = v;
            }
        }
    }
    out
}

/// Adjoint of nearest-neighbor upsampling: each source cell collects the
/// gradients of its four replicas.
pub fn upsample2_adjoint(grad_out: &Tensor) -> Tensor {
    let (c, h2, w2) = grad_out.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad_in = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let base = ch * h2 * w2;
                let g = grad_out.values[base + (2 * y) * w2 + 2 * x]
                    + grad_out.values[base + (2 * y) * w2 + 2 * x + 1]
                    + grad_out.values[base + (2 * y + 1) * w2 + 2 * x]
                    + grad_out.values[base + (2 * y + 1) * w2 + 2 * x + 1];
                grad_in.values[ch * h * w + y * w + x] = g;
            }
        }
    }
    grad_in
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.height, a.width), (b.height, b.width));
    let mut values = Vec::with_capacity((a.channels + b.channels) * a.height * a.width);
    values.extend_from_slice(&a.values);
    values.extend_from_slice(&b.values);
    Tensor {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        values,
    }
}

fn tanh_forward(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for v in out.values.iter_mut() {
        *v = v.tanh();
        // f64 tanh saturates to exactly +/-1 for |x| > ~19; nudge inward so
        // the documented open-interval output range holds in floating point.
        if *v >= 1.0 {
            *v = 1.0 - f64::EPSILON;
        } else if *v <= -1.0 {
            *v = -1.0 + f64::EPSILON;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Forward / backward over the whole network
// ---------------------------------------------------------------------------

enum TraceOp {
    /// Convolution `layer`, with cached input and pre-activation at
    /// `cache_idx`; `activated` layers apply LeakyReLU on top.
    Conv {
        layer: usize,
        cache_idx: usize,
        activated: bool,
    },
    /// Current activation saved as a skip connection.
    PushSkip,
    Pool {
        pool_idx: usize,
    },
    Upsample,
    /// `x = concat(skip_pop(), x)`; the skip occupies the first
    /// `skip_channels` channels.
    ConcatSkip {
        skip_channels: usize,
    },
}

/// Everything backward needs: the op trace in forward order plus the
/// cached tensors it refers to.
pub struct Cache {
    trace: Vec<TraceOp>,
    conv_inputs: Vec<Tensor>,
    preacts: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    pool_in_shapes: Vec<(usize, usize, usize)>,
    n_layers: usize,
    /// Post-tanh network output.
    pub output: Tensor,
}

/// Runs the network on a 2 x crop x crop tensor. Output has the input's
/// shape with every value strictly inside (-1, 1).
pub fn forward(params: &Parameters, cfg: &NetworkConfig, input: &Tensor) -> Result<(Tensor, Cache)> {
    cfg.check()?;
    let plan = layer_plan(cfg);
    if params.layers.len() != plan.len() {
        return Err(Error::invalid_argument(format!(
            "parameter layout has {} layers, config wants {}",
            params.layers.len(),
            plan.len()
        )));
    }
    for (i, ((pin, pout, _), layer)) in plan.iter().zip(&params.layers).enumerate() {
        if layer.in_ch != *pin || layer.out_ch != *pout {
            return Err(Error::invalid_argument(format!(
                "layer {i} shape {}->{} does not match config {}->{}",
                layer.in_ch, layer.out_ch, pin, pout
            )));
        }
    }
    if input.channels != 2 || input.height != cfg.crop_size || input.width != cfg.crop_size {
        return Err(Error::invalid_argument(format!(
            "input must be 2x{}x{}, got {}x{}x{}",
            cfg.crop_size, cfg.crop_size, input.channels, input.height, input.width
        )));
    }

    let slope = cfg.leaky_slope;
    let mut trace = Vec::new();
    let mut conv_inputs = Vec::new();
    let mut preacts = Vec::new();
    let mut pool_argmax = Vec::new();
    let mut pool_in_shapes = Vec::new();
    let mut skips: Vec<Tensor> = Vec::new();
    let mut li = 0usize;

    let run_conv = |x: Tensor,
                        li: &mut usize,
                        activated: bool,
                        trace: &mut Vec<TraceOp>,
                        conv_inputs: &mut Vec<Tensor>,
                        preacts: &mut Vec<Tensor>|
     -> Result<Tensor> {
        let pre = conv2d(&params.layers[*li], &x)?;
        let out = if activated {
            leaky_relu(&pre, slope)
        } else {
            pre.clone()
        };
        trace.push(TraceOp::Conv {
            layer: *li,
            cache_idx: conv_inputs.len(),
            activated,
        });
        conv_inputs.push(x);
        preacts.push(pre);
        *li += 1;
        Ok(out)
    };

    let mut x = input.clone();
    let levels = cfg.levels;
    for level in 0..levels {
        x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
        x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
        if level < levels - 1 {
            trace.push(TraceOp::PushSkip);
            skips.push(x.clone());
            let shape = x.shape();
            let (pooled, argmax) = max_pool2(&x)?;
            trace.push(TraceOp::Pool {
                pool_idx: pool_argmax.len(),
            });
            pool_argmax.push(argmax);
            pool_in_shapes.push(shape);
            x = pooled;
        }
    }
    if levels == 1 {
        x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
        x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
    } else {
        for level in (0..levels - 1).rev() {
            x = upsample2(&x);
            trace.push(TraceOp::Upsample);
            x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
            let skip = skips.pop().expect("skip stack underflow");
            debug_assert_eq!(skip.channels, cfg.filters_per_level[level]);
            let merged = concat_channels(&skip, &x);
            trace.push(TraceOp::ConcatSkip {
                skip_channels: skip.channels,
            });
            x = merged;
            x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
            x = run_conv(x, &mut li, true, &mut trace, &mut conv_inputs, &mut preacts)?;
        }
    }
    let pre_out = run_conv(x, &mut li, false, &mut trace, &mut conv_inputs, &mut preacts)?;
    let output = tanh_forward(&pre_out);

    let cache = Cache {
        trace,
        conv_inputs,
        preacts,
        pool_argmax,
        pool_in_shapes,
        n_layers: params.layers.len(),
        output: output.clone(),
    };
    Ok((output, cache))
}

/// Reverse-mode pass. `grad_output` is the loss gradient with respect to
/// the network output; returns gradients for every parameter (same layout
/// as [`Parameters`]) and for the input tensor.
pub fn backward(
    params: &Parameters,
    cfg: &NetworkConfig,
    cache: &Cache,
    grad_output: &Tensor,
) -> Result<(Parameters, Tensor)> {
    if cache.n_layers != params.layers.len() {
        return Err(Error::invalid_argument(
            "cache does not match the parameter layout",
        ));
    }
    if grad_output.shape() != cache.output.shape() {
        return Err(Error::invalid_argument(
            "grad_output shape does not match the cached output",
        ));
    }
    let slope = cfg.leaky_slope;
    let mut grads = params.zeros_like();

    // tanh adjoint on the way in.
    let mut g = grad_output.clone();
    for (gv, y) in g.values.iter_mut().zip(&cache.output.values) {
        *gv *= 1.0 - y * y;
    }

    let mut skip_grads: Vec<Tensor> = Vec::new();
    for op in cache.trace.iter().rev() {
        match op {
            TraceOp::Conv {
                layer,
                cache_idx,
                activated,
            } => {
                if *activated {
                    g = leaky_relu_adjoint(&cache.preacts[*cache_idx], &g, slope);
                }
                let (gk, gb, gin) =
                    conv2d_adjoint(&params.layers[*layer], &cache.conv_inputs[*cache_idx], &g);
                for (a, b) in grads.layers[*layer].kernel.iter_mut().zip(&gk) {
                    *a += b;
                }
                for (a, b) in grads.layers[*layer].bias.iter_mut().zip(&gb) {
                    *a += b;
                }
                g = gin;
            }
            TraceOp::ConcatSkip { skip_channels } => {
                let plane = g.height * g.width;
                let skip_part = Tensor {
                    channels: *skip_channels,
                    height: g.height,
                    width: g.width,
                    values: g.values[..skip_channels * plane].to_vec(),
                };
                let rest = Tensor {
                    channels: g.channels - skip_channels,
                    height: g.height,
                    width: g.width,
                    values: g.values[skip_channels * plane..].to_vec(),
                };
                skip_grads.push(skip_part);
                g = rest;
            }
            TraceOp::Upsample => {
                g = upsample2_adjoint(&g);
            }
            TraceOp::Pool { pool_idx } => {
                g = max_pool2_adjoint(
                    &g,
                    &cache.pool_argmax[*pool_idx],
                    cache.pool_in_shapes[*pool_idx],
                );
            }
            TraceOp::PushSkip => {
                let sg = skip_grads
                    .pop()
                    .ok_or_else(|| Error::invalid_argument("stale cache: skip stack underflow"))?;
                if sg.shape() != g.shape() {
                    return Err(Error::invalid_argument("stale cache: skip shape mismatch"));
                }
                for (a, b) in g.values.iter_mut().zip(&sg.values) {
                    *a += b;
                }
            }
        }
    }
    Ok((grads, g))
}

/// Smallest distance of any pre-activation from the LeakyReLU kink and of
/// any pool runner-up from its block maximum.
///
/// Finite-difference gradient checks are only meaningful when the
/// perturbation cannot flip a piecewise-linear branch; callers pick a seed
/// whose margin comfortably exceeds the step size.
pub fn kink_margin(params: &Parameters, cfg: &NetworkConfig, input: &Tensor) -> Result<f64> {
    let (_, cache) = forward(params, cfg, input)?;
    let mut margin = f64::INFINITY;
    for op in &cache.trace {
        if let TraceOp::Conv {
            cache_idx,
            activated: true,
            ..
        } = op
        {
            for v in &cache.preacts[*cache_idx].values {
                margin = margin.min(v.abs());
            }
        }
    }
    // Pool p follows encoder level p, whose second conv is layer 2p+1; its
    // pool input is the activated output of that conv.
    for (p, argmax) in cache.pool_argmax.iter().enumerate() {
        let pre = &cache.preacts[2 * p + 1];
        let act = leaky_relu(pre, cfg.leaky_slope);
        let (c, h, w) = cache.pool_in_shapes[p];
        debug_assert_eq!(act.shape(), (c, h, w));
        let (oh, ow) = (h / 2, w / 2);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let best = act.values[argmax[ch * oh * ow + oy * ow + ox]];
                    for (dy, dx) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if idx != argmax[ch * oh * ow + oy * ow + ox] {
                            margin = margin.min(best - act.values[idx]);
                        }
                    }
                }
            }
        }
    }
    Ok(margin)
}
