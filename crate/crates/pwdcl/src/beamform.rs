//! Time-delay beamforming and reconstruction: delay-and-sum on analytic
//! channel signals, coherent plane-wave compounding, filtered
//! delay-multiply-and-sum, and B-mode postprocessing.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::domain::{rx_delay, ImageAngle, IqImage, PixelGrid, RfFrame, Validate};
use crate::error::{Error, Result, Violation};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Apodization {
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Linear,
}

/// Receive-side beamforming controls. The aperture grows with depth as
/// `half_width = z / (2 * f_number)` and the window is evaluated over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformConfig {
    pub f_number: f64,
    pub apodization: Apodization,
    pub interpolation: Interpolation,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            f_number: 1.0,
            apodization: Apodization::Hann,
            interpolation: Interpolation::Linear,
        }
    }
}

impl Validate for BeamformConfig {
    fn violations(&self) -> Vec<Violation> {
        if self.f_number > 0.0 && self.f_number.is_finite() {
            Vec::new()
        } else {
            vec![Violation::new("f_number", "must be positive and finite")]
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic signal (I/Q conversion)
// ---------------------------------------------------------------------------

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
    if inverse {
        let n = buf.len() as f64;
        for v in buf.iter_mut() {
            *v /= n;
        }
    }
}

/// Discrete analytic signal of a real sequence via one-sided spectrum
/// doubling: real part equals the input, imaginary part its Hilbert
/// transform.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false);
    // DC stays, positive frequencies double, Nyquist (even n) stays,
    // negative frequencies vanish.
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 {
            continue;
        }
        if n.is_multiple_of(2) && k == half {
            continue;
        }
        if k < half || (n % 2 == 1 && k <= half) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_in_place(&mut buf, true);
    buf
}

/// Per-channel analytic signals of an RF frame.
pub fn iq_demodulate(rf: &RfFrame) -> Result<Vec<Vec<Complex64>>> {
    rf.check()?;
    if rf.n_samples < 8 {
        return Err(Error::invalid_argument(
            "iq_demodulate needs at least 8 samples per channel",
        ));
    }
    Ok((0..rf.probe.n_elements)
        .map(|i| {
            let chan: Vec<f64> = rf.channel(i).iter().map(|&v| v as f64).collect();
            analytic_signal(&chan)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Aperture handling shared by DAS and DMAS
// ---------------------------------------------------------------------------

struct Aperture {
    lo: usize,
    hi: usize, // inclusive
    half_width: f64,
}

fn active_aperture(rf: &RfFrame, x: f64, z: f64, f_number: f64) -> Option<Aperture> {
    let half_width = z / (2.0 * f_number);
    if !(half_width > 0.0) {
        return None;
    }
    let x0 = rf.probe.element_x(0);
    let pitch = rf.probe.pitch;
    let lo = ((x - half_width - x0) / pitch).ceil().max(0.0) as usize;
    let hi_f = ((x + half_width - x0) / pitch).floor();
    if hi_f < lo as f64 {
        return None;
    }
    let hi = (hi_f as usize).min(rf.probe.n_elements - 1);
    if lo > hi {
        return None;
    }
    Some(Aperture { lo, hi, half_width })
}

fn window_weight(apodization: Apodization, d_norm: f64) -> f64 {
    match apodization {
        Apodization::Rectangular => 1.0,
        Apodization::Hann => 0.5 * (1.0 + (std::f64::consts::PI * d_norm).cos()),
    }
}

fn interp_complex(chan: &[Complex64], u: f64, kind: Interpolation) -> Complex64 {
    match kind {
        Interpolation::Nearest => {
            let k = u.round();
            if k >= 0.0 && (k as usize) < chan.len() {
                chan[k as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        }
        Interpolation::Linear => {
            let k = u.floor();
            if k >= 0.0 && ((k as usize) + 1) < chan.len() {
                let frac = u - k;
                let k = k as usize;
                chan[k] * (1.0 - frac) + chan[k + 1] * frac
            } else {
                Complex64::new(0.0, 0.0)
            }
        }
    }
}

fn interp_real(chan: &[f32], u: f64, kind: Interpolation) -> f64 {
    match kind {
        Interpolation::Nearest => {
            let k = u.round();
            if k >= 0.0 && (k as usize) < chan.len() {
                chan[k as usize] as f64
            } else {
                0.0
            }
        }
        Interpolation::Linear => {
            let k = u.floor();
            if k >= 0.0 && ((k as usize) + 1) < chan.len() {
                let frac = u - k;
                let k = k as usize;
                chan[k] as f64 * (1.0 - frac) + chan[k + 1] as f64 * frac
            } else {
                0.0
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Delay-and-sum
// ---------------------------------------------------------------------------

/// Delay-and-sum beamforming of one steered transmit onto a pixel grid.
///
/// Every pixel averages the apodized, delay-interpolated analytic channel
/// signals over its active aperture; elements whose delayed sample falls
/// outside the record contribute zero. Summation runs in ascending element
/// order so the output is bit-deterministic.
pub fn das_beamform(rf: &RfFrame, grid: &PixelGrid, cfg: &BeamformConfig) -> Result<IqImage> {
    cfg.check()?;
    grid.check()?;
    let channels = iq_demodulate(rf)?;
    let theta = rf.angle;
    let (sin_t, cos_t) = (theta.radians().sin(), theta.radians().cos());
    let c = rf.probe.c;
    let fs = rf.probe.fs;

    let mut img = IqImage::zeros(*grid, ImageAngle::Steered(theta));
    let mut empty_aperture = 0usize;
    for row in 0..grid.height {
        let z = grid.z_at(row);
        for col in 0..grid.width {
            let x = grid.x_at(col);
            let Some(ap) = active_aperture(rf, x, z, cfg.f_number) else {
                empty_aperture += 1;
                continue;
            };
            let tx = (z * cos_t + x * sin_t) / c;
            let mut sum = Complex64::new(0.0, 0.0);
            for i in ap.lo..=ap.hi {
                let xe = rf.probe.element_x(i);
                let tau = tx + rx_delay(x, z, xe, c);
                let u = (tau - rf.t0) * fs;
                let w = window_weight(cfg.apodization, (x - xe) / ap.half_width);
                sum += interp_complex(&channels[i], u, cfg.interpolation) * w;
            }
            let n_active = (ap.hi - ap.lo + 1) as f64;
            img.values[row * grid.width + col] = sum / n_active;
        }
    }
    if empty_aperture > 0 {
        img.meta
            .push(format!("empty_aperture_pixels: {empty_aperture}"));
    }
    Ok(img)
}

/// Pixel-wise complex mean of frames sharing one grid (coherent
/// plane-wave compounding).
pub fn compound(frames: &[IqImage]) -> Result<IqImage> {
    if frames.is_empty() {
        return Err(Error::invalid_argument("compound of an empty frame list"));
    }
    let grid = frames[0].grid;
    let norm_scale = frames[0].norm_scale;
    for (i, f) in frames.iter().enumerate() {
        if f.grid != grid {
            return Err(Error::invalid_argument(format!(
                "frame {i} grid differs from frame 0"
            )));
        }
        if f.norm_scale != norm_scale {
            return Err(Error::invalid_argument(format!(
                "frame {i} norm_scale differs from frame 0"
            )));
        }
    }
    let mut out = IqImage::zeros(grid, ImageAngle::Compound);
    out.norm_scale = norm_scale;
    let k = frames.len() as f64;
    for (p, v) in out.values.iter_mut().enumerate() {
        let mut sum = Complex64::new(0.0, 0.0);
        for f in frames {
            sum += f.values[p];
        }
        *v = sum / k;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Filtered delay-multiply-and-sum
// ---------------------------------------------------------------------------

/// Raw pairwise DMAS combination of aligned samples:
/// `sum_{i<j} sign(s_i s_j) sqrt(|s_i s_j|)`, computed through the
/// signed-square-root identity in O(N).
pub fn dmas_pair_sum(samples: &[f64]) -> f64 {
    let mut sum_hat = 0.0;
    let mut sum_hat_sq = 0.0;
    for &s in samples {
        let hat = s.signum() * s.abs().sqrt();
        sum_hat += hat;
        sum_hat_sq += hat * hat;
    }
    0.5 * (sum_hat * sum_hat - sum_hat_sq)
}

/// Symmetric windowed-sinc band-pass kernel (Blackman window), pass band
/// `[f_lo, f_hi]` in Hz at sampling rate `fs`, odd length `len`.
pub fn bandpass_kernel(f_lo: f64, f_hi: f64, fs: f64, len: usize) -> Vec<f64> {
    assert!(len % 2 == 1, "kernel length must be odd");
    let m = (len - 1) as f64 / 2.0;
    let sinc = |x: f64| {
        if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };
    let (a, b) = (2.0 * f_lo / fs, 2.0 * f_hi / fs);
    (0..len)
        .map(|n| {
            let t = n as f64 - m;
            let ideal = b * sinc(b * t) - a * sinc(a * t);
            let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos();
            ideal * w
        })
        .collect()
}

fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let m = (h.len() - 1) / 2;
    let n = x.len();
    let mut y = vec![0.0; n];
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &hk) in h.iter().enumerate() {
            let j = i as isize + m as isize - k as isize;
            if j >= 0 && (j as usize) < n {
                acc += hk * x[j as usize];
            }
        }
        *out = acc;
    }
    y
}

/// Zero-phase band-pass: forward convolution, then the same convolution on
/// the reversed sequence.
pub fn filtfilt(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = convolve_same(x, h);
    y.reverse();
    let mut y = convolve_same(&y, h);
    y.reverse();
    y
}

/// Filtered delay-multiply-and-sum beamforming of one steered transmit.
///
/// Per pixel the delayed real-valued channel samples over the active
/// aperture combine pairwise as `sum_{i<j} sign(s_i s_j) sqrt(|s_i s_j|)`,
/// normalized by the pair count. Each scanline (grid column, read as a
/// signal in axial round-trip time) is then band-pass filtered around the
/// doubled center frequency with a zero-phase windowed-sinc kernel, and
/// converted to I/Q about `2 f0`.
///
/// The grid's axial sampling rate `c / (2 dz)` must exceed `5 f0` for the
/// doubled-frequency band to be representable; coarser grids are rejected.
pub fn dmas_beamform(rf: &RfFrame, grid: &PixelGrid, cfg: &BeamformConfig) -> Result<IqImage> {
    cfg.check()?;
    grid.check()?;
    rf.check()?;
    let f0 = rf.probe.f0;
    let fs_axial = rf.probe.c / (2.0 * grid.dz);
    if fs_axial < 5.0 * f0 {
        return Err(Error::invalid_argument(format!(
            "axial sampling {:.3e} Hz cannot carry the 2*f0 band; use pixels_per_wavelength >= 10 \
             (got axial rate {:.2} x f0)",
            fs_axial,
            fs_axial / f0
        )));
    }

    let theta = rf.angle;
    let (sin_t, cos_t) = (theta.radians().sin(), theta.radians().cos());
    let c = rf.probe.c;
    let fs = rf.probe.fs;

    // Pairwise stage on a real-valued image.
    let mut raw = vec![0.0f64; grid.n_pixels()];
    let mut aligned = Vec::with_capacity(rf.probe.n_elements);
    for row in 0..grid.height {
        let z = grid.z_at(row);
        for col in 0..grid.width {
            let x = grid.x_at(col);
            let Some(ap) = active_aperture(rf, x, z, cfg.f_number) else {
                continue;
            };
            let tx = (z * cos_t + x * sin_t) / c;
            aligned.clear();
            for i in ap.lo..=ap.hi {
                let xe = rf.probe.element_x(i);
                let tau = tx + rx_delay(x, z, xe, c);
                let u = (tau - rf.t0) * fs;
                aligned.push(interp_real(rf.channel(i), u, cfg.interpolation));
            }
            let n = aligned.len() as f64;
            let pairs = n * (n - 1.0) / 2.0;
            if pairs > 0.0 {
                raw[row * grid.width + col] = dmas_pair_sum(&aligned) / pairs;
            }
        }
    }

    // Band-pass around 2 f0 along each scanline, then I/Q about 2 f0.
    let kernel_len = {
        let l = (4.0 * fs_axial / f0).round() as usize;
        if l.is_multiple_of(2) {
            l + 1
        } else {
            l
        }
    };
    let kernel = bandpass_kernel(1.5 * f0, 2.5 * f0, fs_axial, kernel_len);

    let mut img = IqImage::zeros(*grid, ImageAngle::Steered(theta));
    let mut column = vec![0.0f64; grid.height];
    for col in 0..grid.width {
        for row in 0..grid.height {
            column[row] = raw[row * grid.width + col];
        }
        let filtered = filtfilt(&column, &kernel);
        let analytic = analytic_signal(&filtered);
        for (row, a) in analytic.iter().enumerate() {
            // Demodulate about 2 f0 in axial round-trip time 2 z / c.
            let t_ax = 2.0 * grid.z_at(row) / c;
            let phase = -2.0 * std::f64::consts::PI * 2.0 * f0 * t_ax;
            img.values[row * grid.width + col] = a * Complex64::from_polar(1.0, phase);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// B-mode
// ---------------------------------------------------------------------------

/// Log-compressed envelope image: peak-normalized dB values clipped to
/// `[-dynamic_range, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BmodeImage {
    pub grid: PixelGrid,
    /// Row-major dB values, max exactly 0.
    pub db_values: Vec<f64>,
    pub dynamic_range: f64,
}

impl BmodeImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.db_values[row * self.grid.width + col]
    }
}

impl Validate for BmodeImage {
    fn violations(&self) -> Vec<Violation> {
        let mut v = self.grid.violations();
        if self.db_values.len() != self.grid.n_pixels() {
            v.push(Violation::new("db_values", "length does not match grid"));
        }
        if !(self.dynamic_range > 0.0) {
            v.push(Violation::new("dynamic_range", "must be positive"));
        }
        let max = self.db_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max != 0.0 {
            v.push(Violation::new("db_values", "peak must be exactly 0 dB"));
        }
        if self.db_values.iter().any(|&d| d < -self.dynamic_range) {
            v.push(Violation::new(
                "db_values",
                "values below -dynamic_range present",
            ));
        }
        v
    }
}

/// Envelope detection and log compression of an I/Q image.
pub fn to_bmode(iq: &IqImage, dynamic_range: f64) -> Result<BmodeImage> {
    if !(dynamic_range > 0.0) || !dynamic_range.is_finite() {
        return Err(Error::invalid_argument("dynamic_range must be positive"));
    }
    let env = iq.envelope();
    let max = env.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Err(Error::invalid_argument(
            "all-zero image has no defined normalization",
        ));
    }
    let db_values = env
        .iter()
        .map(|&e| {
            if e == 0.0 {
                -dynamic_range
            } else {
                (20.0 * (e / max).log10()).clamp(-dynamic_range, 0.0)
            }
        })
        .collect();
    Ok(BmodeImage {
        grid: iq.grid,
        db_values,
        dynamic_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_pixel_grid, ProbeGeometry, SteeringAngle};
    use crate::simfield::{build_point_phantom, simulate_rf, Pulse, SimParams};

    fn probe() -> ProbeGeometry {
        ProbeGeometry::new(64, 3.0e-4, 5.0e6, 4.0e7, 1540.0).unwrap()
    }

    fn sim_params() -> SimParams {
        SimParams {
            duration: 45e-6,
            pulse: Pulse::new(5.0e6, 0.6).unwrap(),
            noise_rms: 0.0,
            seed: 0,
        }
    }

    fn zero_angle() -> SteeringAngle {
        SteeringAngle::from_radians(0.0).unwrap()
    }

    // -- analytic signal ----------------------------------------------------

    #[test]
    fn analytic_of_cosine_has_unit_envelope() {
        let n = 256;
        let cycles = 8.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * cycles * i as f64 / n as f64).cos())
            .collect();
        let a = analytic_signal(&x);
        for (i, v) in a.iter().enumerate() {
            assert!((v.norm() - 1.0).abs() < 1e-6, "sample {i}: {}", v.norm());
            assert!((v.re - x[i]).abs() < 1e-9);
        }
        // cos -> analytic exp(j w t): imaginary part is sin.
        for (i, v) in a.iter().enumerate() {
            let s = (2.0 * std::f64::consts::PI * cycles * i as f64 / n as f64).sin();
            assert!((v.im - s).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_of_zero_is_zero() {
        let a = analytic_signal(&vec![0.0; 33]);
        assert!(a.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn analytic_impulse_energy_identity() {
        // Parseval: sum |a|^2 = 2 sum x^2 - (|DC|^2 + |Nyquist|^2) / n.
        // For a unit impulse every DFT bin has magnitude 1, so the right
        // side is 2 - 2/n (even n) or 2 - 1/n (odd n).
        for n in [64usize, 65] {
            for m in [0usize, 7, n - 1] {
                let mut x = vec![0.0; n];
                x[m] = 1.0;
                let a = analytic_signal(&x);
                assert!((a[m].re - 1.0).abs() < 1e-9);
                let energy: f64 = a.iter().map(|v| v.norm_sqr()).sum();
                let expected = if n % 2 == 0 {
                    2.0 - 2.0 / n as f64
                } else {
                    2.0 - 1.0 / n as f64
                };
                assert!((energy - expected).abs() < 1e-9, "n={n} m={m}: {energy}");
            }
        }
    }

    #[test]
    fn demodulate_rejects_short_records() {
        let p = probe();
        let frame = RfFrame::new(p, zero_angle(), vec![0.0; p.n_elements * 4], 4, 0.0).unwrap();
        assert!(iq_demodulate(&frame).is_err());
    }

    // -- delay-and-sum ------------------------------------------------------

    fn target_grid(p: &ProbeGeometry) -> PixelGrid {
        // 16 mm x 10 mm window around (0, 25 mm) at lambda/4 pixels.
        let dz = p.wavelength() / 4.0;
        PixelGrid::new(-8.0e-3, 20.0e-3, dz, dz, (16.0e-3 / dz) as usize + 1,
                       (10.0e-3 / dz) as usize + 1).unwrap()
    }

    #[test]
    fn das_peak_lands_on_the_scatterer() {
        let p = probe();
        let phantom = build_point_phantom(&[25.0e-3], &[0.0]).unwrap();
        let rf = simulate_rf(&phantom, &p, zero_angle(), &sim_params()).unwrap();
        let grid = target_grid(&p);
        let img = das_beamform(&rf, &grid, &BeamformConfig::default()).unwrap();
        let env = img.envelope();
        let (argmax, _) = env
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (row, col) = (argmax / grid.width, argmax % grid.width);
        let (x, z) = (grid.x_at(col), grid.z_at(row));
        assert!((x - 0.0).abs() <= grid.dx, "peak x = {x}");
        assert!((z - 25.0e-3).abs() <= grid.dz, "peak z = {z}");
    }

    #[test]
    fn das_focusing_gain_over_far_pixels() {
        let p = probe();
        let phantom = build_point_phantom(&[25.0e-3], &[0.0]).unwrap();
        let rf = simulate_rf(&phantom, &p, zero_angle(), &sim_params()).unwrap();
        let grid = target_grid(&p);
        let img = das_beamform(&rf, &grid, &BeamformConfig::default()).unwrap();
        let env = img.envelope();
        let row = grid.row_at(25.0e-3).unwrap();
        let col = grid.col_at(0.0).unwrap();
        let peak = env[row * grid.width + col];
        let two_lambda = 2.0 * p.wavelength();
        for r in 0..grid.height {
            for c in 0..grid.width {
                if (grid.x_at(c)).abs() > two_lambda {
                    assert!(env[r * grid.width + c] <= peak);
                }
            }
        }
    }

    #[test]
    fn das_of_zero_frame_is_zero() {
        let p = probe();
        let frame =
            RfFrame::new(p, zero_angle(), vec![0.0; p.n_elements * 512], 512, 0.0).unwrap();
        let grid = target_grid(&p);
        let img = das_beamform(&frame, &grid, &BeamformConfig::default()).unwrap();
        assert!(img.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn das_mirror_symmetry() {
        let p = probe();
        let phantom = build_point_phantom(&[25.0e-3], &[-5.0e-3, 5.0e-3]).unwrap();
        let rf = simulate_rf(&phantom, &p, zero_angle(), &sim_params()).unwrap();
        // Symmetric grid around x = 0.
        let dz = p.wavelength() / 4.0;
        let half = (8.0e-3 / dz).round() as usize;
        let grid = PixelGrid::new(
            -(half as f64) * dz,
            20.0e-3,
            dz,
            dz,
            2 * half + 1,
            (10.0e-3 / dz) as usize,
        )
        .unwrap();
        let img = das_beamform(&rf, &grid, &BeamformConfig::default()).unwrap();
        let env = img.envelope();
        let peak = env.iter().cloned().fold(0.0f64, f64::max);
        for r in 0..grid.height {
            for c in 0..grid.width {
                let mirrored = grid.width - 1 - c;
                let a = env[r * grid.width + c];
                let b = env[r * grid.width + mirrored];
                assert!(
                    (a - b).abs() <= 1e-6 * peak,
                    "asymmetry at r={r} c={c}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn das_is_linear_in_the_rf_data() {
        let p = probe();
        let n = 512;
        // Two synthetic frames with disjoint supports so that the f32
        // combination 2x + 0.5y is exact.
        let mut xa = vec![0.0f32; p.n_elements * n];
        let mut xb = vec![0.0f32; p.n_elements * n];
        for i in 0..p.n_elements {
            for s in 0..n {
                let idx = i * n + s;
                if s < n / 2 {
                    xa[idx] = ((i * 31 + s * 7) % 101) as f32 / 101.0 - 0.5;
                } else {
                    xb[idx] = ((i * 17 + s * 13) % 89) as f32 / 89.0 - 0.5;
                }
            }
        }
        let combined: Vec<f32> = xa
            .iter()
            .zip(&xb)
            .map(|(a, b)| 2.0 * a + 0.5 * b)
            .collect();
        let fa = RfFrame::new(p, zero_angle(), xa, n, 0.0).unwrap();
        let fb = RfFrame::new(p, zero_angle(), xb, n, 0.0).unwrap();
        let fc = RfFrame::new(p, zero_angle(), combined, n, 0.0).unwrap();
        let grid = target_grid(&p);
        let cfg = BeamformConfig::default();
        let ya = das_beamform(&fa, &grid, &cfg).unwrap();
        let yb = das_beamform(&fb, &grid, &cfg).unwrap();
        let yc = das_beamform(&fc, &grid, &cfg).unwrap();
        let scale = yc.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ((a, b), c) in ya.values.iter().zip(&yb.values).zip(&yc.values) {
            let lin = a * 2.0 + b * 0.5;
            assert!((lin - c).norm() <= 1e-9 * scale.max(1e-30));
        }
    }

    // -- compounding ---------------------------------------------------------

    #[test]
    fn compound_identity_and_cancellation() {
        let p = probe();
        let grid = target_grid(&p);
        let mut a = IqImage::zeros(grid, ImageAngle::Steered(zero_angle()));
        for (i, v) in a.values.iter_mut().enumerate() {
            *v = Complex64::new(i as f64, -(i as f64) / 3.0);
        }
        let single = compound(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.values, a.values);
        assert_eq!(single.angle, ImageAngle::Compound);

        let mut b = a.clone();
        for v in b.values.iter_mut() {
            *v = -*v;
        }
        let zero = compound(&[a, b]).unwrap();
        assert!(zero.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn compound_of_identical_frames_is_idempotent() {
        let p = probe();
        let grid = target_grid(&p);
        let mut a = IqImage::zeros(grid, ImageAngle::Steered(zero_angle()));
        for (i, v) in a.values.iter_mut().enumerate() {
            *v = Complex64::new((i % 13) as f64, (i % 7) as f64);
        }
        let out = compound(&[a.clone(), a.clone(), a.clone()]).unwrap();
        for (x, y) in out.values.iter().zip(&a.values) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn compound_rejects_empty_list() {
        assert!(compound(&[]).is_err());
    }

    // -- DMAS ----------------------------------------------------------------

    #[test]
    fn dmas_pair_sum_closed_form() {
        // All N aligned samples equal to v > 0: sum = C(N,2) * v.
        for n in [2usize, 5, 16, 64] {
            let v = 0.37;
            let samples = vec![v; n];
            let pairs = (n * (n - 1) / 2) as f64;
            let raw = dmas_pair_sum(&samples);
            assert!((raw - pairs * v).abs() < 1e-12 * pairs);
            assert!((raw / pairs - v).abs() < 1e-12);
        }
        // Sign behavior: opposite signs multiply negative.
        let raw = dmas_pair_sum(&[1.0, -1.0]);
        assert!((raw - (-1.0)).abs() < 1e-12);
        // A single sample has no pairs.
        assert_eq!(dmas_pair_sum(&[3.0]), 0.0);
    }

    #[test]
    fn dmas_of_zero_frame_is_zero() {
        let p = probe();
        let frame =
            RfFrame::new(p, zero_angle(), vec![0.0; p.n_elements * 512], 512, 0.0).unwrap();
        let dz = p.wavelength() / 16.0;
        let grid = PixelGrid::new(-2e-3, 20e-3, dz, dz, 64, 128).unwrap();
        let img = dmas_beamform(&frame, &grid, &BeamformConfig::default()).unwrap();
        assert!(img.values.iter().all(|v| v.norm() < 1e-30));
    }

    #[test]
    fn dmas_rejects_coarse_axial_sampling() {
        let p = probe();
        let frame =
            RfFrame::new(p, zero_angle(), vec![0.0; p.n_elements * 512], 512, 0.0).unwrap();
        let grid = make_pixel_grid(&p, 10e-3, 4.0).unwrap();
        assert!(dmas_beamform(&frame, &grid, &BeamformConfig::default()).is_err());
    }

    #[test]
    fn pairwise_product_of_tones_has_a_2f0_line() {
        // Two aligned channels carrying cos(2 pi f0 t): the pairwise DMAS
        // series is |cos|, whose strongest oscillation sits at 2 f0. After
        // the band-pass, the 2 f0 bin dominates everything outside the
        // pass band by far more than 20 dB.
        let f0 = 5.0e6;
        let fs = 64.0e6;
        let n = 1024;
        let series: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let s = (2.0 * std::f64::consts::PI * f0 * t).cos();
                dmas_pair_sum(&[s, s])
            })
            .collect();
        let len = {
            let l = (4.0 * fs / f0).round() as usize;
            if l.is_multiple_of(2) {
                l + 1
            } else {
                l
            }
        };
        let kernel = bandpass_kernel(1.5 * f0, 2.5 * f0, fs, len);
        let filtered = filtfilt(&series, &kernel);
        let mut buf: Vec<Complex64> =
            filtered.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false);
        let bin_hz = fs / n as f64;
        let bin_2f0 = (2.0 * f0 / bin_hz).round() as usize;
        let line = buf[bin_2f0].norm();
        let mut out_of_band = 0.0f64;
        for (k, v) in buf.iter().enumerate().take(n / 2) {
            let f = k as f64 * bin_hz;
            if !(1.4 * f0..=2.6 * f0).contains(&f) {
                out_of_band = out_of_band.max(v.norm());
            }
        }
        let margin_db = 20.0 * (line / out_of_band.max(1e-300)).log10();
        assert!(margin_db >= 20.0, "2f0 line margin only {margin_db:.1} dB");
    }

    // -- B-mode ---------------------------------------------------------------

    fn small_iq(values: Vec<Complex64>, width: usize) -> IqImage {
        let height = values.len() / width;
        let grid = PixelGrid::new(0.0, 0.0, 1e-4, 1e-4, width, height).unwrap();
        IqImage::new(grid, values, ImageAngle::Compound).unwrap()
    }

    #[test]
    fn bmode_anchors_and_clipping() {
        let img = small_iq(
            vec![
                Complex64::new(10.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1e-6),
                Complex64::new(0.0, 0.0),
            ],
            2,
        );
        let b = to_bmode(&img, 60.0).unwrap();
        assert_eq!(b.db_values[0], 0.0);
        assert!((b.db_values[1] - (-20.0)).abs() < 1e-12);
        assert_eq!(b.db_values[2], -60.0); // below the floor, clipped exactly
        assert_eq!(b.db_values[3], -60.0);
        assert!(b.violations().is_empty());
    }

    #[test]
    fn bmode_rejects_all_zero_images() {
        let img = small_iq(vec![Complex64::new(0.0, 0.0); 4], 2);
        assert!(to_bmode(&img, 60.0).is_err());
    }

    #[test]
    fn bmode_invariant_to_positive_scaling() {
        let values: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let img = small_iq(values.clone(), 4);
        let scaled = small_iq(values.iter().map(|v| v * 37.5).collect(), 4);
        let a = to_bmode(&img, 60.0).unwrap();
        let b = to_bmode(&scaled, 60.0).unwrap();
        for (x, y) in a.db_values.iter().zip(&b.db_values) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
