//! Synthetic RF channel data for steered plane-wave transmits over
//! scatterer phantoms.
//!
//! The scattering model is linear and single-scattering: every scatterer
//! adds a delayed copy of the transmit pulse to every channel, with the
//! transmit leg of the delay given by the steered plane-wave geometry and
//! the receive leg by the element-to-scatterer distance. No attenuation,
//! no element directivity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{rx_delay, tx_delay, ProbeGeometry, RfFrame, SteeringAngle, Validate};
use crate::error::{Error, Result, Violation};

// ---------------------------------------------------------------------------
// Scatterers and phantoms
// ---------------------------------------------------------------------------

/// A point reflector at (x, z) with linear reflectivity `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub z: f64,
    pub amplitude: f64,
}

impl Validate for Scatterer {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.z > 0.0) || !self.z.is_finite() {
            v.push(Violation::new("z", "must be positive and finite"));
        }
        if !self.x.is_finite() {
            v.push(Violation::new("x", "must be finite"));
        }
        if !self.amplitude.is_finite() {
            v.push(Violation::new("amplitude", "must be finite"));
        }
        v
    }
}

/// Axis-aligned region containing all scatterers of a phantom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x_min && x <= self.x_max && z >= self.z_min && z <= self.z_max
    }
}

/// Anechoic disk carved out of the speckle background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CystDisk {
    pub x: f64,
    pub z: f64,
    pub radius: f64,
}

impl CystDisk {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let dx = x - self.x;
        let dz = z - self.z;
        dx * dx + dz * dz <= self.radius * self.radius
    }
}

/// A collection of scatterers plus the geometry metadata needed to rebuild
/// evaluation masks (cyst disks, bounding box).
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub label: String,
    pub bbox: BoundingBox,
    pub cysts: Vec<CystDisk>,
}

impl Phantom {
    pub fn max_depth(&self) -> f64 {
        self.scatterers.iter().fold(0.0, |m, s| m.max(s.z))
    }
}

impl Validate for Phantom {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.scatterers.is_empty() && !self.label.starts_with("empty") {
            v.push(Violation::new(
                "scatterers",
                "empty phantom must be labelled 'empty...'",
            ));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            let sv = s.violations();
            if !sv.is_empty() {
                v.push(Violation::new(
                    "scatterers",
                    format!("scatterer {i}: {}", sv[0].message),
                ));
                break;
            }
        }
        if self
            .scatterers
            .iter()
            .any(|s| !self.bbox.contains(s.x, s.z))
        {
            v.push(Violation::new(
                "bbox",
                "scatterer outside declared bounding box",
            ));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Transmit pulse
// ---------------------------------------------------------------------------

/// Gaussian-windowed sinusoid `g(t) = exp(-t^2 / (2 sigma^2)) cos(2 pi f0 t)`
/// with sigma chosen so the -6 dB (half-amplitude) spectral width equals
/// `fractional_bandwidth * f0`. Even in t, peak 1 at t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub f0: f64,
    pub fractional_bandwidth: f64,
}

impl Pulse {
    pub fn new(f0: f64, fractional_bandwidth: f64) -> Result<Self> {
        if !(f0 > 0.0) || !f0.is_finite() {
            return Err(Error::invalid_argument("pulse f0 must be positive"));
        }
        if !(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0) {
            return Err(Error::invalid_argument(
                "fractional_bandwidth must lie in (0, 2)",
            ));
        }
        Ok(Self {
            f0,
            fractional_bandwidth,
        })
    }

    /// Envelope standard deviation in seconds.
    ///
    /// The spectrum of the Gaussian envelope is exp(-2 pi^2 sigma^2 df^2);
    /// setting it to 10^(-6/20) at df = bandwidth*f0/2 gives sigma.
    pub fn sigma(&self) -> f64 {
        let half_width = self.fractional_bandwidth * self.f0 / 2.0;
        let ln_gain = (6.0 / 20.0) * std::f64::consts::LN_10;
        (ln_gain / 2.0).sqrt() / (std::f64::consts::PI * half_width)
    }

    /// Approximate pulse length in carrier cycles (the +/-3 sigma support).
    pub fn n_cycles(&self) -> f64 {
        6.0 * self.sigma() * self.f0
    }

    /// Half-width of the evaluated support; beyond it the envelope is
    /// below 1e-4 and contributions are cut.
    pub fn support(&self) -> f64 {
        4.5 * self.sigma()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.sigma();
        (-t * t / (2.0 * s * s)).exp() * (2.0 * std::f64::consts::PI * self.f0 * t).cos()
    }
}

// ---------------------------------------------------------------------------
// RF simulation
// ---------------------------------------------------------------------------

/// Acquisition parameters for one simulated transmit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Record length in seconds; must cover the deepest round trip.
    pub duration: f64,
    pub pulse: Pulse,
    /// RMS of additive white Gaussian channel noise; 0 disables it.
    pub noise_rms: f64,
    /// Seed for the noise stream (unused when noise_rms == 0).
    pub seed: u64,
}

/// Round-trip delay of a scatterer to element `i` for a steered transmit.
fn scatterer_delay(s: &Scatterer, probe: &ProbeGeometry, angle: SteeringAngle, i: usize) -> f64 {
    tx_delay(s.x, s.z, angle, probe.c) + rx_delay(s.x, s.z, probe.element_x(i), probe.c)
}

/// Simulates one steered plane-wave transmit over a phantom.
///
/// Channels accumulate scatterer contributions in list order (fixed for
/// bit determinism), in f64, then round once to the f32 storage precision
/// of [`RfFrame`]. Scatterers whose echo extends past the record are
/// truncated and noted in the frame metadata.
pub fn simulate_rf(
    phantom: &Phantom,
    probe: &ProbeGeometry,
    angle: SteeringAngle,
    params: &SimParams,
) -> Result<RfFrame> {
    probe.check()?;
    phantom.check()?;
    if !(params.duration > 0.0) || !params.duration.is_finite() {
        return Err(Error::invalid_argument("duration must be positive"));
    }
    if !params.noise_rms.is_finite() || params.noise_rms < 0.0 {
        return Err(Error::invalid_argument("noise_rms must be finite and >= 0"));
    }

    let n_samples = (params.duration * probe.fs).round() as usize;
    if n_samples == 0 {
        return Err(Error::invalid_argument("duration shorter than one sample"));
    }
    let t0 = 0.0;
    let support = params.pulse.support();
    let fs = probe.fs;

    let mut acc = vec![0.0f64; probe.n_elements * n_samples];
    let mut meta = Vec::new();
    let mut truncated = 0usize;

    for (si, s) in phantom.scatterers.iter().enumerate() {
        if s.amplitude == 0.0 {
            continue;
        }
        let mut scatterer_truncated = false;
        for i in 0..probe.n_elements {
            let tau = scatterer_delay(s, probe, angle, i);
            let lo = ((tau - support - t0) * fs).ceil().max(0.0) as usize;
            let hi_f = (tau + support - t0) * fs;
            if hi_f >= n_samples as f64 {
                scatterer_truncated = true;
            }
            let hi = hi_f.floor().min((n_samples - 1) as f64);
            if hi < 0.0 || lo as f64 > hi {
                continue;
            }
            let chan = &mut acc[i * n_samples..(i + 1) * n_samples];
            for n in lo..=(hi as usize) {
                let t = t0 + n as f64 / fs;
                chan[n] += s.amplitude * params.pulse.eval(t - tau);
            }
        }
        if scatterer_truncated {
            truncated += 1;
            if truncated <= 8 {
                meta.push(format!(
                    "warning: scatterer {si} echo truncated by record length {:.3e} s",
                    params.duration
                ));
            }
        }
    }
    if truncated > 8 {
        meta.push(format!("warning: {truncated} scatterers truncated in total"));
    }

    if params.noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for v in acc.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += params.noise_rms * n;
        }
    }

    let samples: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
    let mut frame = RfFrame::new(*probe, angle, samples, n_samples, t0)?;
    frame.meta = meta;
    Ok(frame)
}

/// Record length covering every scatterer's round trip for any angle of a
/// fan up to `span` radians, plus the pulse tail.
pub fn auto_duration(phantom: &Phantom, probe: &ProbeGeometry, span: f64, pulse: &Pulse) -> f64 {
    let half_ap = probe.aperture() / 2.0;
    let worst = phantom.scatterers.iter().fold(0.0f64, |m, s| {
        let tx = (s.z + s.x.abs() * span.sin().abs()) / probe.c;
        let far_x = s.x.abs() + half_ap;
        let rx = (far_x * far_x + s.z * s.z).sqrt() / probe.c;
        m.max(tx + rx)
    });
    worst + 2.0 * pulse.support() + 16.0 / probe.fs
}

// ---------------------------------------------------------------------------
// Phantom builders
// ---------------------------------------------------------------------------

/// Point-target grid: one unit-amplitude scatterer at every (lateral, depth)
/// pair, depth-major order.
pub fn build_point_phantom(depths: &[f64], lateral_positions: &[f64]) -> Result<Phantom> {
    if depths.is_empty() || lateral_positions.is_empty() {
        return Err(Error::invalid_argument(
            "point phantom needs at least one depth and one lateral position",
        ));
    }
    if depths.iter().any(|&z| !(z > 0.0)) {
        return Err(Error::invalid_argument("all depths must be positive"));
    }
    let mut scatterers = Vec::with_capacity(depths.len() * lateral_positions.len());
    for &z in depths {
        for &x in lateral_positions {
            scatterers.push(Scatterer {
                x,
                z,
                amplitude: 1.0,
            });
        }
    }
    let bbox = hull(&scatterers, &[]);
    let phantom = Phantom {
        scatterers,
        label: "points".to_string(),
        bbox,
        cysts: Vec::new(),
    };
    phantom.check()?;
    Ok(phantom)
}

/// Depths used by the default point layout: 5 mm to 40 mm in 5 mm steps.
pub fn default_point_depths() -> Vec<f64> {
    (1..=8).map(|i| i as f64 * 5.0e-3).collect()
}

/// Speckle phantom with anechoic cyst disks.
///
/// Background scatterers are drawn uniformly over the box with standard
/// normal amplitudes; draws landing inside a cyst are discarded. The
/// generator stream is fixed by `seed` (three draws per candidate), so the
/// scatterer list is reproducible bit for bit. If density rounds to zero
/// scatterers, one background scatterer is forced so the phantom stays
/// usable.
pub fn build_cyst_phantom(
    cyst_centers: &[(f64, f64)],
    cyst_radius: f64,
    scatterer_density: f64,
    bbox: BoundingBox,
    seed: u64,
) -> Result<Phantom> {
    if !(cyst_radius > 0.0) {
        return Err(Error::invalid_argument("cyst_radius must be positive"));
    }
    if !(scatterer_density > 0.0) {
        return Err(Error::invalid_argument("scatterer_density must be positive"));
    }
    if bbox.x_max <= bbox.x_min || bbox.z_max <= bbox.z_min || bbox.z_min < 0.0 {
        return Err(Error::invalid_argument("bounding box is degenerate"));
    }
    let cysts: Vec<CystDisk> = cyst_centers
        .iter()
        .map(|&(x, z)| CystDisk {
            x,
            z,
            radius: cyst_radius,
        })
        .collect();
    for (i, c) in cysts.iter().enumerate() {
        if !bbox.contains(c.x, c.z) {
            return Err(Error::invalid_argument(format!(
                "cyst {i} center outside bounding box"
            )));
        }
    }

    let area = (bbox.x_max - bbox.x_min) * (bbox.z_max - bbox.z_min);
    let n_target = (scatterer_density * area).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scatterers = Vec::with_capacity(n_target);
    let draw = |rng: &mut ChaCha8Rng| -> Scatterer {
        let x = rng.random_range(bbox.x_min..bbox.x_max);
        let z = rng.random_range(bbox.z_min.max(1e-6)..bbox.z_max);
        let amplitude: f64 = rng.sample(StandardNormal);
        Scatterer { x, z, amplitude }
    };
    for _ in 0..n_target {
        let s = draw(&mut rng);
        if cysts.iter().any(|c| c.contains(s.x, s.z)) {
            continue;
        }
        scatterers.push(s);
    }
    if scatterers.is_empty() {
        for _ in 0..10_000 {
            let s = draw(&mut rng);
            if !cysts.iter().any(|c| c.contains(s.x, s.z)) {
                scatterers.push(s);
                break;
            }
        }
        if scatterers.is_empty() {
            return Err(Error::invalid_argument(
                "cysts cover the bounding box; no background left",
            ));
        }
    }

    let phantom = Phantom {
        scatterers,
        label: "cysts".to_string(),
        bbox,
        cysts,
    };
    phantom.check()?;
    Ok(phantom)
}

/// The default 3x3 cyst layout centered on the scanline.
pub fn default_cyst_centers() -> Vec<(f64, f64)> {
    let mut centers = Vec::new();
    for &z in &[12.0e-3, 18.0e-3, 24.0e-3] {
        for &x in &[-6.0e-3, 0.0, 6.0e-3] {
            centers.push((x, z));
        }
    }
    centers
}

fn hull(scatterers: &[Scatterer], cysts: &[CystDisk]) -> BoundingBox {
    let mut b = BoundingBox {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        z_min: f64::INFINITY,
        z_max: f64::NEG_INFINITY,
    };
    for s in scatterers {
        b.x_min = b.x_min.min(s.x);
        b.x_max = b.x_max.max(s.x);
        b.z_min = b.z_min.min(s.z);
        b.z_max = b.z_max.max(s.z);
    }
    for c in cysts {
        b.x_min = b.x_min.min(c.x - c.radius);
        b.x_max = b.x_max.max(c.x + c.radius);
        b.z_min = b.z_min.min(c.z - c.radius);
        b.z_max = b.z_max.max(c.z + c.radius);
    }
    if !b.x_min.is_finite() {
        b = BoundingBox {
            x_min: 0.0,
            x_max: 0.0,
            z_min: 0.0,
            z_max: 0.0,
        };
    }
    b
}

// ---------------------------------------------------------------------------
// Phantom description files
// ---------------------------------------------------------------------------

/// Serializes a phantom to the text description format: a header line
/// `PHANTOM v1 <label>`, optional `# cyst x z r` geometry comments, then
/// one `x z amplitude` line per scatterer (meters, linear units).
pub fn phantom_to_text(phantom: &Phantom) -> String {
    let mut out = String::new();
    out.push_str(&format!("PHANTOM v1 {}\n", phantom.label));
    for c in &phantom.cysts {
        out.push_str(&format!("# cyst {:e} {:e} {:e}\n", c.x, c.z, c.radius));
    }
    for s in &phantom.scatterers {
        out.push_str(&format!("{:e} {:e} {:e}\n", s.x, s.z, s.amplitude));
    }
    out
}

/// Parses the phantom description format written by [`phantom_to_text`].
pub fn phantom_from_text(text: &str) -> Result<Phantom> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty phantom file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some("PHANTOM") || head.next() != Some("v1") {
        return Err(Error::parse(1, "expected header 'PHANTOM v1 <label>'"));
    }
    let label = head.collect::<Vec<_>>().join(" ");
    if label.is_empty() {
        return Err(Error::parse(1, "missing phantom label"));
    }

    let mut scatterers = Vec::new();
    let mut cysts = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut f = rest.split_whitespace();
            if f.next() == Some("cyst") {
                let nums: Vec<f64> = f.map_while(|t| t.parse().ok()).collect();
                if nums.len() != 3 {
                    return Err(Error::parse(line_no, "cyst annotation needs 'x z r'"));
                }
                cysts.push(CystDisk {
                    x: nums[0],
                    z: nums[1],
                    radius: nums[2],
                });
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                format!("expected 'x z amplitude', got {} fields", fields.len()),
            ));
        }
        let mut nums = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            nums[k] = f
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad number '{f}'")))?;
        }
        scatterers.push(Scatterer {
            x: nums[0],
            z: nums[1],
            amplitude: nums[2],
        });
    }

    let bbox = hull(&scatterers, &cysts);
    let phantom = Phantom {
        scatterers,
        label,
        bbox,
        cysts,
    };
    phantom.check()?;
    Ok(phantom)
}
