//! Shared domain types: probe geometry, steering angles, RF frames, pixel
//! grids, complex (I/Q) images and plane-wave sets, together with their
//! invariant checks.
//!
//! All types here are plain data, immutable by convention once constructed,
//! and safe to share across threads. Construction goes through `new` which
//! runs [`Validate`] and rejects ill-formed values.

use num_complex::Complex64;

use crate::error::{Error, Result, Violation};

/// Checks every invariant of a value and reports the violations found.
///
/// An empty list means the value is well formed. `new` constructors call
/// this and refuse to hand out invalid values, but the check can be re-run
/// at any time (e.g. after deserialization).
pub trait Validate {
    fn violations(&self) -> Vec<Violation>;

    fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

// ---------------------------------------------------------------------------
// Probe geometry
// ---------------------------------------------------------------------------

/// Linear-array description. Element x-positions are centered on the array
/// midpoint: `x_e(i) = (i - (n-1)/2) * pitch`, exactly antisymmetric in i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGeometry {
    /// Number of array elements.
    pub n_elements: usize,
    /// Element spacing in meters.
    pub pitch: f64,
    /// Transmit center frequency in Hz.
    pub f0: f64,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Speed of sound in m/s.
    pub c: f64,
}

impl ProbeGeometry {
    pub fn new(n_elements: usize, pitch: f64, f0: f64, fs: f64, c: f64) -> Result<Self> {
        let probe = Self {
            n_elements,
            pitch,
            f0,
            fs,
            c,
        };
        probe.check()?;
        Ok(probe)
    }

    /// Lateral position of element `i` in meters.
    pub fn element_x(&self, i: usize) -> f64 {
        (i as f64 - (self.n_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    /// Width of the aperture: distance between first and last element.
    pub fn aperture(&self) -> f64 {
        (self.n_elements as f64 - 1.0) * self.pitch
    }

    /// Wavelength at the transmit center frequency.
    pub fn wavelength(&self) -> f64 {
        self.c / self.f0
    }
}

impl Validate for ProbeGeometry {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.n_elements < 2 {
            v.push(Violation::new("n_elements", "must be at least 2"));
        }
        if !(self.pitch > 0.0) || !self.pitch.is_finite() {
            v.push(Violation::new("pitch", "must be positive and finite"));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            v.push(Violation::new("c", "must be positive and finite"));
        }
        if !self.f0.is_finite() || !self.fs.is_finite() || !(self.f0 > 0.0) || self.f0 >= self.fs / 2.0
        {
            v.push(Violation::new(
                "f0",
                "must satisfy 0 < f0 < fs/2 (Nyquist)",
            ));
        }
        // Element positions must be antisymmetric with exact zero sum; this
        // is inherent in element_x but re-checked pairwise here.
        if self.n_elements >= 2 && self.pitch > 0.0 {
            for i in 0..self.n_elements / 2 {
                let a = self.element_x(i);
                let b = self.element_x(self.n_elements - 1 - i);
                if a + b != 0.0 {
                    v.push(Violation::new(
                        "element_x",
                        format!("positions not antisymmetric at index {i}"),
                    ));
                    break;
                }
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Steering angles
// ---------------------------------------------------------------------------

/// Plane-wave steering angle in radians, measured from the depth axis,
/// positive toward +x. Bounded to |theta| < pi/4 where the 2-D plane-wave
/// model holds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SteeringAngle(f64);

impl SteeringAngle {
    pub const MAX_ABS: f64 = std::f64::consts::FRAC_PI_4;

    pub fn from_radians(theta: f64) -> Result<Self> {
        let a = Self(theta);
        a.check()?;
        Ok(a)
    }

    pub fn from_degrees(deg: f64) -> Result<Self> {
        Self::from_radians(deg.to_radians())
    }

    pub fn radians(&self) -> f64 {
        self.0
    }

    pub fn degrees(&self) -> f64 {
        self.0.to_degrees()
    }
}

impl Validate for SteeringAngle {
    fn violations(&self) -> Vec<Violation> {
        if self.0.is_finite() && self.0.abs() < Self::MAX_ABS {
            Vec::new()
        } else {
            vec![Violation::new("theta", "must satisfy |theta| < pi/4")]
        }
    }
}

/// Angle tag carried by a beamformed image: either a single steered
/// transmit or the sentinel for a coherent compound of several.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageAngle {
    Steered(SteeringAngle),
    Compound,
}

impl ImageAngle {
    /// Radians for steered frames; NaN is the file-format sentinel for
    /// compound images.
    pub fn radians_or_nan(&self) -> f64 {
        match self {
            ImageAngle::Steered(a) => a.radians(),
            ImageAngle::Compound => f64::NAN,
        }
    }

    pub fn from_radians_or_nan(v: f64) -> Result<Self> {
        if v.is_nan() {
            Ok(ImageAngle::Compound)
        } else {
            Ok(ImageAngle::Steered(SteeringAngle::from_radians(v)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Wavefront timing shared by the simulator and the beamformers
// ---------------------------------------------------------------------------

/// Transmit time of flight from the array center to point (x, z) for a
/// plane wave steered by `theta`; t = 0 is the wavefront crossing the
/// array center.
pub fn tx_delay(x: f64, z: f64, theta: SteeringAngle, c: f64) -> f64 {
    (z * theta.radians().cos() + x * theta.radians().sin()) / c
}

/// Receive time of flight from point (x, z) back to an element at `xe`.
pub fn rx_delay(x: f64, z: f64, xe: f64, c: f64) -> f64 {
    ((x - xe) * (x - xe) + z * z).sqrt() / c
}

// ---------------------------------------------------------------------------
// RF frames
// ---------------------------------------------------------------------------

/// Per-channel real RF samples for one plane-wave transmit.
///
/// Samples are stored channel-major as f32 (the storage precision of the
/// RF file format); processing converts to f64 on entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    pub probe: ProbeGeometry,
    pub angle: SteeringAngle,
    /// Channel-major samples, length `probe.n_elements * n_samples`.
    pub samples: Vec<f32>,
    pub n_samples: usize,
    /// Time of the first sample in seconds.
    pub t0: f64,
    /// Free-form warnings and provenance notes (e.g. truncated scatterers).
    pub meta: Vec<String>,
}

impl RfFrame {
    pub fn new(
        probe: ProbeGeometry,
        angle: SteeringAngle,
        samples: Vec<f32>,
        n_samples: usize,
        t0: f64,
    ) -> Result<Self> {
        let frame = Self {
            probe,
            angle,
            samples,
            n_samples,
            t0,
            meta: Vec::new(),
        };
        frame.check()?;
        Ok(frame)
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i * self.n_samples..(i + 1) * self.n_samples]
    }
}

impl Validate for RfFrame {
    fn violations(&self) -> Vec<Violation> {
        let mut v = self.probe.violations();
        v.extend(self.angle.violations());
        if self.n_samples == 0 {
            v.push(Violation::new("n_samples", "must be positive"));
        }
        if self.samples.len() != self.probe.n_elements * self.n_samples {
            v.push(Violation::new(
                "samples",
                format!(
                    "length {} does not match n_elements * n_samples = {}",
                    self.samples.len(),
                    self.probe.n_elements * self.n_samples
                ),
            ));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            v.push(Violation::new("samples", "contains non-finite values"));
        }
        if !(self.t0 >= 0.0) || !self.t0.is_finite() {
            v.push(Violation::new("t0", "must be finite and >= 0"));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Pixel grids
// ---------------------------------------------------------------------------

/// Regular image grid. Coordinates refer to pixel centers; row r, column c
/// sits at (x0 + c*dx, z0 + r*dz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    pub width: usize,
    pub height: usize,
}

impl PixelGrid {
    pub fn new(x0: f64, z0: f64, dx: f64, dz: f64, width: usize, height: usize) -> Result<Self> {
        let g = Self {
            x0,
            z0,
            dx,
            dz,
            width,
            height,
        };
        g.check()?;
        Ok(g)
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn x_at(&self, col: usize) -> f64 {
        self.x0 + col as f64 * self.dx
    }

    pub fn z_at(&self, row: usize) -> f64 {
        self.z0 + row as f64 * self.dz
    }

    /// Column whose center is nearest to lateral position `x`, if inside.
    pub fn col_at(&self, x: f64) -> Option<usize> {
        let c = ((x - self.x0) / self.dx).round();
        if c >= 0.0 && (c as usize) < self.width {
            Some(c as usize)
        } else {
            None
        }
    }

    /// Row whose center is nearest to depth `z`, if inside.
    pub fn row_at(&self, z: f64) -> Option<usize> {
        let r = ((z - self.z0) / self.dz).round();
        if r >= 0.0 && (r as usize) < self.height {
            Some(r as usize)
        } else {
            None
        }
    }
}

impl Validate for PixelGrid {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.dx > 0.0) || !self.dx.is_finite() {
            v.push(Violation::new("dx", "must be positive and finite"));
        }
        if !(self.dz > 0.0) || !self.dz.is_finite() {
            v.push(Violation::new("dz", "must be positive and finite"));
        }
        if !(self.z0 >= 0.0) || !self.z0.is_finite() {
            v.push(Violation::new("z0", "must be finite and >= 0 (no pixels above the array)"));
        }
        if !self.x0.is_finite() {
            v.push(Violation::new("x0", "must be finite"));
        }
        if self.width == 0 {
            v.push(Violation::new("width", "must be positive"));
        }
        if self.height == 0 {
            v.push(Violation::new("height", "must be positive"));
        }
        v
    }
}

/// Builds the default image grid for a probe: isotropic pixels of
/// `wavelength / pixels_per_wavelength`, spanning the full aperture
/// laterally and `[0, depth_max]` axially. Width and height round up and
/// include both boundary pixel centers.
pub fn make_pixel_grid(
    probe: &ProbeGeometry,
    depth_max: f64,
    pixels_per_wavelength: f64,
) -> Result<PixelGrid> {
    probe.check()?;
    if !(depth_max > 0.0) || !depth_max.is_finite() {
        return Err(Error::invalid_argument("depth_max must be positive"));
    }
    if !(pixels_per_wavelength >= 2.0) {
        return Err(Error::invalid_argument(
            "pixels_per_wavelength must be at least 2",
        ));
    }
    let dz = probe.wavelength() / pixels_per_wavelength;
    let dx = dz;
    let width = (probe.aperture() / dx).ceil() as usize + 1;
    let height = (depth_max / dz).ceil() as usize + 1;
    PixelGrid::new(probe.element_x(0), 0.0, dx, dz, width, height)
}

// ---------------------------------------------------------------------------
// I/Q images
// ---------------------------------------------------------------------------

/// Complex beamformed image on a [`PixelGrid`], stored row-major.
///
/// The real plane is the in-phase (I) component, the imaginary plane the
/// quadrature (Q) component. `norm_scale` records the scalar the planes
/// were divided by during normalization (1.0 if unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct IqImage {
    pub grid: PixelGrid,
    /// Row-major complex pixels, length `grid.n_pixels()`.
    pub values: Vec<Complex64>,
    pub angle: ImageAngle,
    pub norm_scale: f64,
    pub meta: Vec<String>,
}

impl IqImage {
    pub fn new(grid: PixelGrid, values: Vec<Complex64>, angle: ImageAngle) -> Result<Self> {
        let img = Self {
            grid,
            values,
            angle,
            norm_scale: 1.0,
            meta: Vec::new(),
        };
        img.check()?;
        Ok(img)
    }

    pub fn zeros(grid: PixelGrid, angle: ImageAngle) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); grid.n_pixels()],
            grid,
            angle,
            norm_scale: 1.0,
            meta: Vec::new(),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.grid.width + col]
    }

    /// Envelope (magnitude) of every pixel, row-major.
    pub fn envelope(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// In-phase plane, row-major.
    pub fn i_plane(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.re).collect()
    }

    /// Quadrature plane, row-major.
    pub fn q_plane(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.im).collect()
    }
}

impl Validate for IqImage {
    fn violations(&self) -> Vec<Violation> {
        let mut v = self.grid.violations();
        if self.values.len() != self.grid.n_pixels() {
            v.push(Violation::new(
                "values",
                format!(
                    "length {} does not match grid {}x{}",
                    self.values.len(),
                    self.grid.height,
                    self.grid.width
                ),
            ));
        }
        if self
            .values
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            v.push(Violation::new("values", "contains non-finite values"));
        }
        if !(self.norm_scale > 0.0) || !self.norm_scale.is_finite() {
            v.push(Violation::new("norm_scale", "must be positive and finite"));
        }
        if let ImageAngle::Steered(a) = self.angle {
            v.extend(a.violations());
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Plane-wave sets
// ---------------------------------------------------------------------------

/// Ordered set of steered I/Q frames sharing one grid, with one frame
/// designated as held-out validation data.
#[derive(Debug, Clone, PartialEq)]
pub struct PwSet {
    pub frames: Vec<IqImage>,
    pub validation_index: usize,
}

impl PwSet {
    pub fn new(frames: Vec<IqImage>, validation_index: usize) -> Result<Self> {
        let set = Self {
            frames,
            validation_index,
        };
        set.check()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.frames[0].grid
    }

    pub fn validation_frame(&self) -> &IqImage {
        &self.frames[self.validation_index]
    }
}

impl Validate for PwSet {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.frames.len() < 3 {
            v.push(Violation::new(
                "frames",
                "length k >= 3 required (one input, one validation, at least one target)",
            ));
            if self.frames.is_empty() {
                return v;
            }
        }
        if self.validation_index >= self.frames.len() {
            v.push(Violation::new(
                "validation_index",
                format!(
                    "index {} out of range for {} frames",
                    self.validation_index,
                    self.frames.len()
                ),
            ));
        }
        let grid = self.frames[0].grid;
        let mut prev_angle = f64::NEG_INFINITY;
        for (i, frame) in self.frames.iter().enumerate() {
            v.extend(frame.violations());
            if frame.grid != grid {
                v.push(Violation::new(
                    "frames",
                    format!("frame {i} grid differs from frame 0"),
                ));
            }
            match frame.angle {
                ImageAngle::Steered(a) => {
                    if a.radians() <= prev_angle {
                        v.push(Violation::new(
                            "frames",
                            format!("angles not strictly increasing at frame {i}"),
                        ));
                    }
                    prev_angle = a.radians();
                }
                ImageAngle::Compound => {
                    v.push(Violation::new(
                        "frames",
                        format!("frame {i} is a compound image, not a steered frame"),
                    ));
                }
            }
        }
        v
    }
}

/// Uniform fan of `k` steering angles spanning `[-span, +span]` radians.
/// A single angle yields the broadside transmit (theta = 0).
pub fn angle_fan(k: usize, span: f64) -> Result<Vec<SteeringAngle>> {
    if k == 0 {
        return Err(Error::invalid_argument("angle fan needs at least 1 angle"));
    }
    if !(span >= 0.0) || span >= SteeringAngle::MAX_ABS {
        return Err(Error::invalid_argument(
            "angle span must lie in [0, pi/4) radians",
        ));
    }
    if k == 1 {
        return Ok(vec![SteeringAngle::from_radians(0.0)?]);
    }
    (0..k)
        .map(|i| {
            let t = i as f64 / (k as f64 - 1.0);
            SteeringAngle::from_radians(-span + 2.0 * span * t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeGeometry {
        ProbeGeometry::new(64, 3.0e-4, 5.0e6, 4.0e7, 1540.0).unwrap()
    }

    #[test]
    fn element_positions_exactly_antisymmetric() {
        for n in [2usize, 3, 17, 64, 128] {
            let p = ProbeGeometry::new(n, 2.9531e-4, 5.0e6, 4.0e7, 1540.0).unwrap();
            for i in 0..n {
                assert_eq!(p.element_x(i) + p.element_x(n - 1 - i), 0.0);
            }
        }
    }

    #[test]
    fn well_formed_probe_has_no_violations() {
        assert!(probe().violations().is_empty());
    }

    #[test]
    fn nyquist_violation_reported() {
        let p = ProbeGeometry {
            n_elements: 64,
            pitch: 3.0e-4,
            f0: 2.5e7,
            fs: 4.0e7,
            c: 1540.0,
        };
        let v = p.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "f0");
    }

    #[test]
    fn grid_spacing_matches_hand_value() {
        // c = 1540, f0 = 5 MHz, 4 px/lambda -> dz = 77.0 um
        let g = make_pixel_grid(&probe(), 40.0e-3, 4.0).unwrap();
        assert!((g.dz - 77.0e-6).abs() < 1e-12);
        assert_eq!(g.dx, g.dz);
        assert_eq!(g.x0, probe().element_x(0));
        assert_eq!(g.z0, 0.0);
    }

    #[test]
    fn grid_rounding_rule() {
        let p = probe();
        let g = make_pixel_grid(&p, 40.0e-3, 4.0).unwrap();
        let dz = p.wavelength() / 4.0;
        assert_eq!(g.width, (p.aperture() / dz).ceil() as usize + 1);
        assert_eq!(g.height, (40.0e-3 / dz).ceil() as usize + 1);
    }

    #[test]
    fn minimal_grid_is_two_rows() {
        // depth_max == dz: ceil(1) + 1 = 2 rows, covering z = 0 and z = dz.
        let p = probe();
        let dz = p.wavelength() / 4.0;
        let g = make_pixel_grid(&p, dz, 4.0).unwrap();
        assert_eq!(g.height, 2);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(make_pixel_grid(&probe(), -1.0, 4.0).is_err());
        assert!(make_pixel_grid(&probe(), 0.0, 4.0).is_err());
        assert!(make_pixel_grid(&probe(), 10e-3, 1.5).is_err());
    }

    #[test]
    fn grid_is_deterministic() {
        let a = make_pixel_grid(&probe(), 37.3e-3, 4.0).unwrap();
        let b = make_pixel_grid(&probe(), 37.3e-3, 4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_probe_rejected_upstream_of_grid() {
        // f0 = c (in Hz) would give meter-scale pixels; the probe invariant
        // 0 < f0 < fs/2 rejects it before make_pixel_grid runs.
        let bad = ProbeGeometry {
            n_elements: 64,
            pitch: 3.0e-4,
            f0: 1540.0,
            fs: 1540.0,
            c: 1540.0,
        };
        assert!(make_pixel_grid(&bad, 40e-3, 2.0).is_err());
    }

    #[test]
    fn rf_frame_nan_sample_names_samples_field() {
        let p = probe();
        let mut samples = vec![0.0f32; p.n_elements * 16];
        samples[5] = f32::NAN;
        let frame = RfFrame {
            probe: p,
            angle: SteeringAngle::from_radians(0.0).unwrap(),
            samples,
            n_samples: 16,
            t0: 0.0,
            meta: Vec::new(),
        };
        let v = frame.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "samples");
    }

    #[test]
    fn pwset_of_two_frames_rejected() {
        let g = make_pixel_grid(&probe(), 5e-3, 4.0).unwrap();
        let frames: Vec<IqImage> = [-0.1f64, 0.1]
            .iter()
            .map(|&t| {
                IqImage::zeros(
                    g,
                    ImageAngle::Steered(SteeringAngle::from_radians(t).unwrap()),
                )
            })
            .collect();
        let set = PwSet {
            frames,
            validation_index: 0,
        };
        let v = set.violations();
        assert!(v.iter().any(|x| x.message.contains("k >= 3")));
    }

    #[test]
    fn valid_values_pass_revalidation() {
        let g = make_pixel_grid(&probe(), 5e-3, 4.0).unwrap();
        let frames: Vec<IqImage> = [-0.1f64, 0.0, 0.1]
            .iter()
            .map(|&t| {
                IqImage::zeros(
                    g,
                    ImageAngle::Steered(SteeringAngle::from_radians(t).unwrap()),
                )
            })
            .collect();
        let set = PwSet::new(frames, 1).unwrap();
        assert!(set.violations().is_empty());
        assert!(probe().violations().is_empty());
        assert!(g.violations().is_empty());
    }

    #[test]
    fn angle_fan_spans_symmetric_range() {
        let fan = angle_fan(75, 16f64.to_radians()).unwrap();
        assert_eq!(fan.len(), 75);
        assert!((fan[0].degrees() + 16.0).abs() < 1e-12);
        assert!((fan[74].degrees() - 16.0).abs() < 1e-12);
        for w in fan.windows(2) {
            assert!(w[1].radians() > w[0].radians());
        }
    }

    #[test]
    fn steering_angle_bound() {
        assert!(SteeringAngle::from_degrees(44.9).is_ok());
        assert!(SteeringAngle::from_degrees(45.0).is_err());
        assert!(SteeringAngle::from_degrees(-45.0).is_err());
    }
}
