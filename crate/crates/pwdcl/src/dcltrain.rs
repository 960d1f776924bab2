//! Unsupervised coherence training: frame sampling with validation
//! exclusion, percentile normalization, the normalized complex correlation
//! loss with its exact gradient, the supervised-MSE baseline, AdamW and
//! cosine-annealed learning rates.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beamform::compound;
use crate::domain::{IqImage, PwSet, Validate};
use crate::error::{Error, Result, Violation};
use crate::net::{
    backward, forward, init_parameters, NetworkConfig, Parameters, Tensor,
};

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Coherence,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    /// Cosine annealing period in steps (warm restarts at multiples).
    pub period_steps: usize,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Steps between validation evaluations; 0 validates only at the start
    /// and end of the run.
    pub val_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1.0e-4,
            lr_min: 1.0e-7,
            period_steps: 2000,
            weight_decay: 0.01,
            total_steps: 2000,
            crop_size: 64,
            seed: 42,
            loss_kind: LossKind::Coherence,
            val_interval: 50,
        }
    }
}

impl Validate for TrainConfig {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            v.push(Violation::new("lr_min", "must satisfy 0 < lr_min <= lr_init"));
        }
        if self.period_steps == 0 {
            v.push(Violation::new("period_steps", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(Violation::new("weight_decay", "must be >= 0"));
        }
        if self.crop_size == 0 {
            v.push(Violation::new("crop_size", "must be positive"));
        }
        v
    }
}

/// AdamW first/second-moment accumulators for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_kernel: Vec<f64>,
    pub v_kernel: Vec<f64>,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

/// Optimizer state mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub layers: Vec<LayerMoments>,
}

impl OptimizerState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(params: &Parameters) -> Self {
        Self {
            step: 0,
            layers: params
                .layers
                .iter()
                .map(|l| LayerMoments {
                    m_kernel: vec![0.0; l.kernel.len()],
                    v_kernel: vec![0.0; l.kernel.len()],
                    m_bias: vec![0.0; l.bias.len()],
                    v_bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Most recent validation loss (NaN until first computed).
    pub val_loss: f64,
    pub elapsed_s: f64,
}

impl TrainRecord {
    /// Log line `step lr train_loss val_loss elapsed_s`. Everything except
    /// the trailing wall time is deterministic for a fixed seed.
    pub fn log_line(&self) -> String {
        format!(
            "{} {} {} {} {:.3}",
            self.step, self.lr, self.train_loss, self.val_loss, self.elapsed_s
        )
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Interpolated percentile (q in [0, 1]) of a sample.
fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// Scales a plane-wave set so the 99.9th-percentile envelope amplitude of
/// its coherent compound becomes 1. The divisor multiplies into every
/// frame's `norm_scale`; values mostly land in [-1, 1] (outliers survive
/// and are clipped only when fed to the network).
pub fn normalize_set(set: &PwSet) -> Result<PwSet> {
    set.check()?;
    let comp = compound(&set.frames)?;
    let scale = percentile(comp.envelope(), 0.999);
    if !(scale > 0.0) {
        return Err(Error::invalid_argument(
            "set envelope is (almost) everywhere zero; cannot normalize",
        ));
    }
    let mut out = set.clone();
    for frame in out.frames.iter_mut() {
        for v in frame.values.iter_mut() {
            *v /= scale;
        }
        frame.norm_scale *= scale;
    }
    Ok(out)
}

/// Single-frame counterpart of [`normalize_set`] for inference on a lone
/// transmit: the frame is its own one-element compound.
pub fn normalize_frame(img: &IqImage) -> Result<IqImage> {
    let scale = percentile(img.envelope(), 0.999);
    if !(scale > 0.0) {
        return Err(Error::invalid_argument(
            "frame envelope is (almost) everywhere zero; cannot normalize",
        ));
    }
    let mut out = img.clone();
    for v in out.values.iter_mut() {
        *v /= scale;
    }
    out.norm_scale *= scale;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Coherence loss over raw complex crops: per target
/// `-Re<f, t> / (||f|| ||t||)`, summed, with the exact gradient with
/// respect to the prediction's real and imaginary planes.
pub fn coherence_loss_crops(
    pred: &[Complex64],
    targets: &[&[Complex64]],
) -> Result<(f64, Vec<Complex64>)> {
    if targets.is_empty() {
        return Err(Error::invalid_argument("coherence loss needs targets"));
    }
    let nf_sq: f64 = pred.iter().map(|c| c.norm_sqr()).sum();
    let nf = nf_sq.sqrt();
    if nf == 0.0 {
        return Err(Error::DegenerateNorm(
            "prediction norm is zero (dead network output)".to_string(),
        ));
    }
    let mut loss = 0.0;
    let mut grad = vec![Complex64::new(0.0, 0.0); pred.len()];
    for (ti, t) in targets.iter().enumerate() {
        if t.len() != pred.len() {
            return Err(Error::invalid_argument(
                "target crop shape differs from prediction",
            ));
        }
        let nt_sq: f64 = t.iter().map(|c| c.norm_sqr()).sum();
        let nt = nt_sq.sqrt();
        if nt == 0.0 {
            return Err(Error::DegenerateNorm(format!(
                "target {ti} norm is zero (empty target crop)"
            )));
        }
        let inner_re: f64 = pred
            .iter()
            .zip(t.iter())
            .map(|(f, p)| f.re * p.re + f.im * p.im)
            .sum();
        let denom = nf * nt;
        loss += -inner_re / denom;
        let radial = inner_re / nf_sq;
        for ((g, f), p) in grad.iter_mut().zip(pred).zip(t.iter()) {
            *g += (radial * f - p) / denom;
        }
    }
    Ok((loss, grad))
}

/// Coherence loss over full images; all targets must share the
/// prediction's grid.
pub fn coherence_loss(pred: &IqImage, targets: &[&IqImage]) -> Result<(f64, Vec<Complex64>)> {
    for t in targets {
        if t.grid != pred.grid {
            return Err(Error::invalid_argument("target grid differs from prediction"));
        }
    }
    let slices: Vec<&[Complex64]> = targets.iter().map(|t| t.values.as_slice()).collect();
    coherence_loss_crops(&pred.values, &slices)
}

/// Mean squared error over both planes with its analytic gradient
/// `(2/M) (pred - ref)`, where M counts real and imaginary entries.
pub fn mse_loss_crops(
    pred: &[Complex64],
    reference: &[Complex64],
) -> Result<(f64, Vec<Complex64>)> {
    if pred.len() != reference.len() {
        return Err(Error::invalid_argument(
            "reference crop shape differs from prediction",
        ));
    }
    let m = (2 * pred.len()) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (f, r) in pred.iter().zip(reference) {
        let d = f - r;
        loss += d.norm_sqr();
        grad.push(d * (2.0 / m));
    }
    Ok((loss / m, grad))
}

/// MSE between full images sharing a grid.
pub fn mse_loss(pred: &IqImage, reference: &IqImage) -> Result<(f64, Vec<Complex64>)> {
    if pred.grid != reference.grid {
        return Err(Error::invalid_argument("reference grid differs from prediction"));
    }
    mse_loss_crops(&pred.values, &reference.values)
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Cosine-annealed learning rate with warm restarts every
/// `period_steps`.
pub fn cosine_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let phase = (step % cfg.period_steps) as f64 / cfg.period_steps as f64;
    cfg.lr_min
        + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
}

/// One AdamW update with decoupled weight decay:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
/// Rejects non-finite gradients without touching the parameters.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient(
            "aborting AdamW step; loss gradient diverged".to_string(),
        ));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - OptimizerState::BETA1.powi(t as i32);
    let bc2 = 1.0 - OptimizerState::BETA2.powi(t as i32);
    for ((layer, glayer), moments) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.layers.iter_mut())
    {
        let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..theta.len() {
                m[i] = OptimizerState::BETA1 * m[i] + (1.0 - OptimizerState::BETA1) * g[i];
                v[i] = OptimizerState::BETA2 * v[i] + (1.0 - OptimizerState::BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr
                    * (m_hat / (v_hat.sqrt() + OptimizerState::EPSILON)
                        + weight_decay * theta[i]);
            }
        };
        update(
            &mut layer.kernel,
            &glayer.kernel,
            &mut moments.m_kernel,
            &mut moments.v_kernel,
        );
        update(
            &mut layer.bias,
            &glayer.bias,
            &mut moments.m_bias,
            &mut moments.v_bias,
        );
    }
    state.step = t;
    params.iteration += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Crops, tiling, inference
// ---------------------------------------------------------------------------

/// Complex crop of an image, row-major, size s x s at (row y0, col x0).
pub fn crop_complex(img: &IqImage, y0: usize, x0: usize, s: usize) -> Vec<Complex64> {
    let w = img.grid.width;
    let mut out = Vec::with_capacity(s * s);
    for r in 0..s {
        let base = (y0 + r) * w + x0;
        out.extend_from_slice(&img.values[base..base + s]);
    }
    out
}

/// Network input tensor for a crop: channel 0 carries I, channel 1 Q,
/// values clipped to [-1, 1]. Returns the clip count.
pub fn crop_to_input(img: &IqImage, y0: usize, x0: usize, s: usize) -> (Tensor, usize) {
    let crop = crop_complex(img, y0, x0, s);
    let mut values = Vec::with_capacity(2 * s * s);
    let mut clipped = 0usize;
    for c in &crop {
        if c.re.abs() > 1.0 {
            clipped += 1;
        }
        values.push(c.re.clamp(-1.0, 1.0));
    }
    for c in &crop {
        if c.im.abs() > 1.0 {
            clipped += 1;
        }
        values.push(c.im.clamp(-1.0, 1.0));
    }
    (
        Tensor {
            channels: 2,
            height: s,
            width: s,
            values,
        },
        clipped,
    )
}

/// Complex view of a 2-channel network output.
pub fn tensor_to_complex(t: &Tensor) -> Vec<Complex64> {
    let plane = t.height * t.width;
    (0..plane)
        .map(|i| Complex64::new(t.values[i], t.values[plane + i]))
        .collect()
}

fn complex_to_grad_tensor(grad: &[Complex64], s: usize) -> Tensor {
    let mut values = Vec::with_capacity(2 * s * s);
    values.extend(grad.iter().map(|c| c.re));
    values.extend(grad.iter().map(|c| c.im));
    Tensor {
        channels: 2,
        height: s,
        width: s,
        values,
    }
}

/// Tile origins covering `[0, extent)` with `tile`-sized windows: stride
/// `tile`, plus one shifted final window when the extent is not divisible.
/// Divisible extents are covered exactly once.
pub fn tile_origins(extent: usize, tile: usize) -> Result<Vec<usize>> {
    if tile == 0 || tile > extent {
        return Err(Error::invalid_argument(format!(
            "tile size {tile} does not fit extent {extent}"
        )));
    }
    let mut origins: Vec<usize> = (0..extent / tile).map(|i| i * tile).collect();
    if !extent.is_multiple_of(tile) {
        origins.push(extent - tile);
    }
    Ok(origins)
}

/// Runs the network over a full frame in crop-sized tiles; overlapping
/// pixels (from shifted edge tiles) average.
pub fn infer_tiled(img: &IqImage, params: &Parameters, ncfg: &NetworkConfig) -> Result<IqImage> {
    let s = ncfg.crop_size;
    let (h, w) = (img.grid.height, img.grid.width);
    let ys = tile_origins(h, s)?;
    let xs = tile_origins(w, s)?;
    let mut sum = vec![Complex64::new(0.0, 0.0); img.values.len()];
    let mut count = vec![0u32; img.values.len()];
    for &y0 in &ys {
        for &x0 in &xs {
            let (input, _) = crop_to_input(img, y0, x0, s);
            let (out, _) = forward(params, ncfg, &input)?;
            let pred = tensor_to_complex(&out);
            for r in 0..s {
                for c in 0..s {
                    let idx = (y0 + r) * w + x0 + c;
                    sum[idx] += pred[r * s + c];
                    count[idx] += 1;
                }
            }
        }
    }
    let values: Vec<Complex64> = sum
        .iter()
        .zip(&count)
        .map(|(v, &n)| if n > 0 { v / n as f64 } else { *v })
        .collect();
    let mut out = IqImage::new(img.grid, values, img.angle)?;
    out.norm_scale = img.norm_scale;
    out.meta = img.meta.clone();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One unsupervised step: sample a non-validation input frame, crop all
/// frames at one random position, run the network on the input crop, take
/// the loss against the remaining frames (coherence) or against the
/// compound reference (MSE baseline), backpropagate, and apply AdamW at
/// the cosine-annealed rate. Returns the step's training loss.
///
/// RNG draw order is fixed (input index, crop row, crop column), so the
/// whole run is reproducible from the seed.
pub fn train_step(
    set: &PwSet,
    params: &mut Parameters,
    state: &mut OptimizerState,
    tcfg: &TrainConfig,
    ncfg: &NetworkConfig,
    reference: Option<&IqImage>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let k = set.len();
    let v = set.validation_index;
    let s = tcfg.crop_size;
    let grid = set.grid();
    if grid.height < s || grid.width < s {
        return Err(Error::invalid_argument(format!(
            "crop {s} does not fit the {}x{} frame",
            grid.height, grid.width
        )));
    }

    let candidates: Vec<usize> = (0..k).filter(|&i| i != v).collect();
    let input_idx = candidates[rng.random_range(0..candidates.len())];
    let y0 = rng.random_range(0..=grid.height - s);
    let x0 = rng.random_range(0..=grid.width - s);

    let (input, _) = crop_to_input(&set.frames[input_idx], y0, x0, s);
    let (out, cache) = forward(params, ncfg, &input)?;
    let pred = tensor_to_complex(&out);

    let (loss, grad_c) = match tcfg.loss_kind {
        LossKind::Coherence => {
            let target_crops: Vec<Vec<Complex64>> = (0..k)
                .filter(|&t| t != input_idx && t != v)
                .map(|t| crop_complex(&set.frames[t], y0, x0, s))
                .collect();
            let target_refs: Vec<&[Complex64]> =
                target_crops.iter().map(|c| c.as_slice()).collect();
            coherence_loss_crops(&pred, &target_refs)?
        }
        LossKind::Mse => {
            let reference = reference.ok_or_else(|| {
                Error::invalid_argument("MSE training needs a compound reference")
            })?;
            let ref_crop = crop_complex(reference, y0, x0, s);
            mse_loss_crops(&pred, &ref_crop)?
        }
    };

    let grad_out = complex_to_grad_tensor(&grad_c, s);
    let (grads, _) = backward(params, ncfg, &cache, &grad_out)?;
    let lr = cosine_lr(state.step as usize, tcfg);
    adamw_step(params, &grads, state, lr, tcfg.weight_decay)?;
    Ok(loss)
}

/// Held-out coherence loss: the validation frame runs through the network
/// tile by tile, each tile scored against the co-located crops of every
/// other frame; tile losses average.
pub fn validation_loss(set: &PwSet, params: &Parameters, ncfg: &NetworkConfig) -> Result<f64> {
    let s = ncfg.crop_size;
    let grid = set.grid();
    let v = set.validation_index;
    let ys = tile_origins(grid.height, s)?;
    let xs = tile_origins(grid.width, s)?;
    let mut total = 0.0;
    let mut tiles = 0usize;
    for &y0 in &ys {
        for &x0 in &xs {
            let (input, _) = crop_to_input(&set.frames[v], y0, x0, s);
            let (out, _) = forward(params, ncfg, &input)?;
            let pred = tensor_to_complex(&out);
            let target_crops: Vec<Vec<Complex64>> = (0..set.len())
                .filter(|&t| t != v)
                .map(|t| crop_complex(&set.frames[t], y0, x0, s))
                .collect();
            let refs: Vec<&[Complex64]> = target_crops.iter().map(|c| c.as_slice()).collect();
            let (loss, _) = coherence_loss_crops(&pred, &refs)?;
            total += loss;
            tiles += 1;
        }
    }
    Ok(total / tiles as f64)
}

/// Full training run on a raw (unnormalized) set.
pub struct TrainOutcome {
    pub params: Parameters,
    pub records: Vec<TrainRecord>,
    /// The normalized set used during training (validation frame included).
    pub normalized: PwSet,
}

/// Normalizes the set, initializes parameters from `net_seed`, runs
/// `total_steps` of [`train_step`] and validates on the configured
/// interval. The observer sees every record as it is produced (for log
/// files and checkpointing); steps that fail with a degenerate norm are
/// logged with a NaN loss and skipped.
pub fn train(
    set: &PwSet,
    tcfg: &TrainConfig,
    ncfg: &NetworkConfig,
    net_seed: u64,
    mut observer: impl FnMut(&TrainRecord, &Parameters) -> Result<()>,
) -> Result<TrainOutcome> {
    tcfg.check()?;
    ncfg.check()?;
    if tcfg.crop_size != ncfg.crop_size {
        return Err(Error::invalid_argument(
            "train crop_size must equal the network crop_size",
        ));
    }
    let normalized = normalize_set(set)?;
    let mut params = init_parameters(ncfg, net_seed)?;
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let reference = match tcfg.loss_kind {
        LossKind::Mse => Some(compound(&normalized.frames)?),
        LossKind::Coherence => None,
    };

    let started = Instant::now();
    let mut records = Vec::with_capacity(tcfg.total_steps + 1);
    let mut last_val = match validation_loss(&normalized, &params, ncfg) {
        Ok(v) => v,
        Err(Error::DegenerateNorm(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let initial = TrainRecord {
        step: 0,
        lr: cosine_lr(0, tcfg),
        train_loss: f64::NAN,
        val_loss: last_val,
        elapsed_s: started.elapsed().as_secs_f64(),
    };
    observer(&initial, &params)?;
    records.push(initial);

    for step in 0..tcfg.total_steps {
        let lr = cosine_lr(state.step as usize, tcfg);
        let train_loss = match train_step(
            &normalized,
            &mut params,
            &mut state,
            tcfg,
            ncfg,
            reference.as_ref(),
            &mut rng,
        ) {
            Ok(l) => l,
            Err(Error::DegenerateNorm(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        let is_last = step + 1 == tcfg.total_steps;
        if is_last || (tcfg.val_interval > 0 && (step + 1) % tcfg.val_interval == 0) {
            last_val = match validation_loss(&normalized, &params, ncfg) {
                Ok(v) => v,
                Err(Error::DegenerateNorm(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
        }
        let record = TrainRecord {
            step: step + 1,
            lr,
            train_loss,
            val_loss: last_val,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        observer(&record, &params)?;
        records.push(record);
    }

    Ok(TrainOutcome {
        params,
        records,
        normalized,
    })
}
