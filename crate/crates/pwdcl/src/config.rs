//! Flat `key = value` run configuration covering every module, with
//! defaults, typed accessors and range validation. Unknown keys are
//! rejected with the offending line number; later duplicates override
//! earlier ones with a warning.

use std::collections::BTreeMap;
use std::path::Path;

use crate::beamform::{Apodization, BeamformConfig, Interpolation};
use crate::dcltrain::{LossKind, TrainConfig};
use crate::domain::{make_pixel_grid, PixelGrid, ProbeGeometry, SteeringAngle, Validate};
use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use crate::simfield::{
    build_cyst_phantom, build_point_phantom, default_cyst_centers, default_point_depths,
    phantom_from_text, BoundingBox, Phantom, Pulse, SimParams,
};

/// Every known key with its default value ("" marks optional io paths and
/// auto-derived values).
const KEY_TABLE: &[(&str, &str)] = &[
    ("probe.n_elements", "64"),
    ("probe.pitch", "3.0e-4"),
    ("probe.f0", "5.0e6"),
    ("probe.fs", "4.0e7"),
    ("probe.c", "1540.0"),
    ("sim.phantom", "points"),
    ("sim.phantom_file", ""),
    ("sim.depths", ""),
    ("sim.laterals", "0.0"),
    ("sim.cyst_centers", ""),
    ("sim.cyst_radius", "2.0e-3"),
    ("sim.density", "5.0e7"),
    ("sim.box", ""),
    ("sim.angles", "16"),
    ("sim.span_deg", "16.0"),
    ("sim.duration", "0.0"),
    ("sim.bandwidth", "0.6"),
    ("sim.noise_rms", "0.0"),
    ("sim.seed", "1"),
    ("sim.depth_max", "3.0e-2"),
    ("sim.ppw", "4.0"),
    ("sim.dmas_ppw", "16.0"),
    ("beamform.f_number", "1.0"),
    ("beamform.apodization", "hann"),
    ("beamform.interpolation", "linear"),
    ("net.levels", "3"),
    ("net.filters", "8,16,32"),
    ("net.leaky_slope", "0.01"),
    ("net.crop_size", "64"),
    ("net.seed", "7"),
    ("train.lr_init", "1.0e-4"),
    ("train.lr_min", "1.0e-7"),
    ("train.period_steps", "2000"),
    ("train.weight_decay", "0.01"),
    ("train.total_steps", "2000"),
    ("train.loss", "coherence"),
    ("train.seed", "42"),
    ("train.val_interval", "50"),
    ("train.checkpoint_interval", "0"),
    ("train.validation_index", "-1"),
    ("metrics.dynamic_range", "60.0"),
    ("metrics.gcnr_bins", "256"),
    ("metrics.pral_guard", "1.5e-3"),
    ("metrics.pral_window", "5.0e-3"),
    ("metrics.profile_half_width", "3.0e-3"),
    ("metrics.cnr_domain", "envelope"),
    ("metrics.mask_margin", "5.0e-4"),
    ("io.out_dir", ""),
];

/// Parsed run configuration: every key resolved to a string value.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// All defaults (the empty config file).
    pub fn defaults() -> Self {
        Self {
            values: KEY_TABLE
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            warnings: Vec::new(),
        }
    }

    /// Parses `key = value` text with `#` comments. Unknown keys,
    /// malformed lines and out-of-range values fail with the line number;
    /// later duplicates override earlier values with a warning.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::defaults();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::parse(line_no, format!("expected 'key = value', got '{line}'")));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if !cfg.values.contains_key(key) {
                return Err(Error::parse(line_no, format!("unknown key '{key}'")));
            }
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                cfg.warnings.push(format!(
                    "line {line_no}: '{key}' overrides the value set on line {prev}"
                ));
            }
            cfg.values.insert(key.to_string(), value.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Overrides every stage seed. Precedence: explicit flag, then the
    /// PWC_SEED environment variable, then the config file values.
    pub fn apply_seed_override(&mut self, flag: Option<u64>) -> Result<()> {
        let seed = match flag {
            Some(s) => Some(s),
            None => match std::env::var("PWC_SEED") {
                Ok(v) => Some(v.parse::<u64>().map_err(|_| {
                    Error::invalid_argument(format!("PWC_SEED is not an integer: '{v}'"))
                })?),
                Err(_) => None,
            },
        };
        if let Some(s) = seed {
            for key in ["sim.seed", "train.seed", "net.seed"] {
                self.values.insert(key.to_string(), s.to_string());
            }
        }
        Ok(())
    }

    /// Canonical `key = value` dump of the effective configuration, used
    /// as the provenance metadata block of every output file.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn meta_lines(&self) -> Vec<String> {
        self.to_text().lines().map(str::to_string).collect()
    }

    // -- typed access ---------------------------------------------------------

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key '{key}'"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::invalid_argument(format!("{key}: not a number: '{}'", self.raw(key))))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::invalid_argument(format!("{key}: not a non-negative integer")))
    }

    pub fn get_i64(&self, key: &str) -> Result<i64> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::invalid_argument(format!("{key}: not an integer")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::invalid_argument(format!("{key}: not a non-negative integer")))
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.raw(key)
    }

    fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::invalid_argument(format!("{key}: bad number '{t}'")))
            })
            .collect()
    }

    fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.raw(key)
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::invalid_argument(format!("{key}: bad integer '{t}'")))
            })
            .collect()
    }

    // -- module configs ----------------------------------------------------------

    pub fn probe(&self) -> Result<ProbeGeometry> {
        ProbeGeometry::new(
            self.get_usize("probe.n_elements")?,
            self.get_f64("probe.pitch")?,
            self.get_f64("probe.f0")?,
            self.get_f64("probe.fs")?,
            self.get_f64("probe.c")?,
        )
        .map_err(|e| Error::invalid_argument(format!("probe.*: {e}")))
    }

    /// Image grid from `sim.depth_max` / `sim.ppw` for the given probe.
    pub fn grid(&self, probe: &ProbeGeometry) -> Result<PixelGrid> {
        make_pixel_grid(probe, self.get_f64("sim.depth_max")?, self.get_f64("sim.ppw")?)
            .map_err(|e| Error::invalid_argument(format!("sim.depth_max/sim.ppw: {e}")))
    }

    /// Finer grid for the doubled-frequency DMAS band.
    pub fn dmas_grid(&self, probe: &ProbeGeometry) -> Result<PixelGrid> {
        make_pixel_grid(
            probe,
            self.get_f64("sim.depth_max")?,
            self.get_f64("sim.dmas_ppw")?,
        )
        .map_err(|e| Error::invalid_argument(format!("sim.depth_max/sim.dmas_ppw: {e}")))
    }

    pub fn pulse(&self) -> Result<Pulse> {
        Pulse::new(self.get_f64("probe.f0")?, self.get_f64("sim.bandwidth")?)
            .map_err(|e| Error::invalid_argument(format!("sim.bandwidth: {e}")))
    }

    pub fn angles(&self) -> Result<Vec<SteeringAngle>> {
        let k = self.get_usize("sim.angles")?;
        let span = self.get_f64("sim.span_deg")?.to_radians();
        crate::domain::angle_fan(k, span)
            .map_err(|e| Error::invalid_argument(format!("sim.angles/sim.span_deg: {e}")))
    }

    /// Simulation parameters; a zero duration resolves to the round-trip
    /// bound of the phantom at simulate time.
    pub fn sim_params(&self, phantom: &Phantom, probe: &ProbeGeometry) -> Result<SimParams> {
        let pulse = self.pulse()?;
        let mut duration = self.get_f64("sim.duration")?;
        if duration == 0.0 {
            let span = self.get_f64("sim.span_deg")?.to_radians();
            duration = crate::simfield::auto_duration(phantom, probe, span, &pulse);
        }
        Ok(SimParams {
            duration,
            pulse,
            noise_rms: self.get_f64("sim.noise_rms")?,
            seed: self.get_u64("sim.seed")?,
        })
    }

    fn auto_box(&self, probe: &ProbeGeometry) -> Result<BoundingBox> {
        let depth_max = self.get_f64("sim.depth_max")?;
        let half = probe.aperture() / 2.0 * 1.05;
        Ok(BoundingBox {
            x_min: -half,
            x_max: half,
            z_min: 3.0e-3,
            z_max: depth_max - 2.0e-3,
        })
    }

    pub fn phantom(&self) -> Result<Phantom> {
        match self.get_str("sim.phantom") {
            "points" => {
                let mut depths = self.get_f64_list("sim.depths")?;
                if depths.is_empty() {
                    depths = default_point_depths();
                }
                let laterals = self.get_f64_list("sim.laterals")?;
                build_point_phantom(&depths, &laterals)
            }
            "cysts" => {
                let raw_centers = self.get_f64_list("sim.cyst_centers")?;
                let centers: Vec<(f64, f64)> = if raw_centers.is_empty() {
                    default_cyst_centers()
                } else {
                    if raw_centers.len() % 2 != 0 {
                        return Err(Error::invalid_argument(
                            "sim.cyst_centers: needs an even number of values (x,z pairs)",
                        ));
                    }
                    raw_centers.chunks(2).map(|c| (c[0], c[1])).collect()
                };
                let boxx = self.get_f64_list("sim.box")?;
                let bbox = if boxx.is_empty() {
                    self.auto_box(&self.probe()?)?
                } else if boxx.len() == 4 {
                    BoundingBox {
                        x_min: boxx[0],
                        x_max: boxx[1],
                        z_min: boxx[2],
                        z_max: boxx[3],
                    }
                } else {
                    return Err(Error::invalid_argument(
                        "sim.box: needs exactly 4 values (x_min,x_max,z_min,z_max)",
                    ));
                };
                build_cyst_phantom(
                    &centers,
                    self.get_f64("sim.cyst_radius")?,
                    self.get_f64("sim.density")?,
                    bbox,
                    self.get_u64("sim.seed")?,
                )
            }
            "file" => {
                let path = self.get_str("sim.phantom_file");
                if path.is_empty() {
                    return Err(Error::invalid_argument(
                        "sim.phantom_file: required when sim.phantom = file",
                    ));
                }
                phantom_from_text(&std::fs::read_to_string(path)?)
            }
            other => Err(Error::invalid_argument(format!(
                "sim.phantom: unknown kind '{other}' (points|cysts|file)"
            ))),
        }
    }

    pub fn beamform_config(&self) -> Result<BeamformConfig> {
        let apodization = match self.get_str("beamform.apodization") {
            "rectangular" => Apodization::Rectangular,
            "hann" => Apodization::Hann,
            other => {
                return Err(Error::invalid_argument(format!(
                    "beamform.apodization: unknown window '{other}' (rectangular|hann)"
                )))
            }
        };
        let interpolation = match self.get_str("beamform.interpolation") {
            "nearest" => Interpolation::Nearest,
            "linear" => Interpolation::Linear,
            other => {
                return Err(Error::invalid_argument(format!(
                    "beamform.interpolation: unknown kind '{other}' (nearest|linear)"
                )))
            }
        };
        let cfg = BeamformConfig {
            f_number: self.get_f64("beamform.f_number")?,
            apodization,
            interpolation,
        };
        cfg.check()
            .map_err(|e| Error::invalid_argument(format!("beamform.f_number: {e}")))?;
        Ok(cfg)
    }

    pub fn net_config(&self) -> Result<NetworkConfig> {
        let filters = self.get_usize_list("net.filters")?;
        let cfg = NetworkConfig {
            levels: self.get_usize("net.levels")?,
            filters_per_level: filters,
            kernel_size: 3,
            leaky_slope: self.get_f64("net.leaky_slope")?,
            crop_size: self.get_usize("net.crop_size")?,
        };
        cfg.check()
            .map_err(|e| Error::invalid_argument(format!("net.*: {e}")))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let loss_kind = match self.get_str("train.loss") {
            "coherence" => LossKind::Coherence,
            "mse" => LossKind::Mse,
            other => {
                return Err(Error::invalid_argument(format!(
                    "train.loss: unknown loss '{other}' (coherence|mse)"
                )))
            }
        };
        let cfg = TrainConfig {
            lr_init: self.get_f64("train.lr_init")?,
            lr_min: self.get_f64("train.lr_min")?,
            period_steps: self.get_usize("train.period_steps")?,
            weight_decay: self.get_f64("train.weight_decay")?,
            total_steps: self.get_usize("train.total_steps")?,
            crop_size: self.get_usize("net.crop_size")?,
            seed: self.get_u64("train.seed")?,
            loss_kind,
            val_interval: self.get_usize("train.val_interval")?,
        };
        cfg.check()
            .map_err(|e| Error::invalid_argument(format!("train.*: {e}")))?;
        Ok(cfg)
    }

    /// Validation frame index for a k-frame fan: the configured index, or
    /// the frame steered closest to broadside when negative.
    pub fn validation_index(&self, angles: &[SteeringAngle]) -> Result<usize> {
        let configured = self.get_i64("train.validation_index")?;
        if configured >= 0 {
            let v = configured as usize;
            if v >= angles.len() {
                return Err(Error::invalid_argument(format!(
                    "train.validation_index: {v} out of range for {} angles",
                    angles.len()
                )));
            }
            return Ok(v);
        }
        Ok(angles
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.radians()
                    .abs()
                    .partial_cmp(&b.1.radians().abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap_or(0))
    }

    /// Builds every module configuration once, surfacing range errors, and
    /// checks that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let probe = self.probe()?;
        self.grid(&probe)?;
        self.pulse()?;
        self.angles()?;
        self.beamform_config()?;
        self.net_config()?;
        self.train_config()?;
        if !(self.get_f64("metrics.dynamic_range")? > 0.0) {
            return Err(Error::invalid_argument(
                "metrics.dynamic_range: must be positive",
            ));
        }
        if self.get_usize("metrics.gcnr_bins")? < 32 {
            return Err(Error::invalid_argument("metrics.gcnr_bins: must be >= 32"));
        }
        match self.get_str("metrics.cnr_domain") {
            "envelope" | "db" => {}
            other => {
                return Err(Error::invalid_argument(format!(
                    "metrics.cnr_domain: unknown domain '{other}' (envelope|db)"
                )))
            }
        }
        let phantom_file = self.get_str("sim.phantom_file");
        if self.get_str("sim.phantom") == "file" {
            if phantom_file.is_empty() {
                return Err(Error::invalid_argument(
                    "sim.phantom_file: required when sim.phantom = file",
                ));
            }
            if !Path::new(phantom_file).exists() {
                return Err(Error::invalid_argument(format!(
                    "sim.phantom_file: '{phantom_file}' does not exist"
                )));
            }
        }
        Ok(())
    }
}
