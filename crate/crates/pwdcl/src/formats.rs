//! Binary file formats: RF frames (`PWRF`), I/Q images (`PWIQ`),
//! plane-wave sets (`PWSQ`), network checkpoints (`DCLNET`) and PGM
//! rendering. Every numeric field is little-endian; every standalone file
//! ends with a length-prefixed metadata block so corruption anywhere is
//! caught with a byte offset.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::beamform::BmodeImage;
use crate::domain::{ImageAngle, IqImage, PixelGrid, ProbeGeometry, PwSet, RfFrame, Validate};
use crate::error::{Error, Result};
use crate::net::{layer_plan, ConvLayer, NetworkConfig, Parameters};

const META_MAGIC: &[u8; 5] = b"PMETA";

// ---------------------------------------------------------------------------
// Little-endian cursor
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated: {what} needs {n} bytes, {} remain of {}",
                    self.buf.len() - self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, tag: &[u8]) -> Result<()> {
        let offset = self.pos;
        let got = self.take(tag.len(), "magic")?;
        if got != tag {
            return Err(Error::format(
                offset,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_meta(out: &mut Vec<u8>, lines: &[String]) {
    let joined = lines.join("\n");
    out.extend_from_slice(META_MAGIC);
    put_u32(out, joined.len() as u32);
    out.extend_from_slice(joined.as_bytes());
}

fn parse_meta(cur: &mut Cursor) -> Result<Vec<String>> {
    cur.magic(META_MAGIC)?;
    let len = cur.u32("metadata length")? as usize;
    let offset = cur.pos;
    let bytes = cur.take(len, "metadata block")?;
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::format(offset, "metadata block is not UTF-8"))?;
    if text.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(text.lines().map(str::to_string).collect())
    }
}

fn check_version(cur: &mut Cursor, what: &str) -> Result<()> {
    let offset = cur.pos;
    let version = cur.u32("version")?;
    if version != 1 {
        return Err(Error::format(
            offset,
            format!("unsupported {what} version {version}, expected 1"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// RF frames (PWRF)
// ---------------------------------------------------------------------------

pub fn rf_to_bytes(frame: &RfFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * frame.samples.len());
    out.extend_from_slice(b"PWRF");
    put_u32(&mut out, 1);
    put_u32(&mut out, frame.probe.n_elements as u32);
    put_u32(&mut out, frame.n_samples as u32);
    put_f64(&mut out, frame.probe.fs);
    put_f64(&mut out, frame.probe.f0);
    put_f64(&mut out, frame.probe.c);
    put_f64(&mut out, frame.probe.pitch);
    put_f64(&mut out, frame.angle.radians());
    put_f64(&mut out, frame.t0);
    for &s in &frame.samples {
        put_f32(&mut out, s);
    }
    put_meta(&mut out, &frame.meta);
    out
}

pub fn rf_from_bytes(buf: &[u8]) -> Result<RfFrame> {
    let mut cur = Cursor::new(buf);
    cur.magic(b"PWRF")?;
    check_version(&mut cur, "PWRF")?;
    let n_channels = cur.u32("n_channels")? as usize;
    let n_samples = cur.u32("n_samples")? as usize;
    let fs = cur.f64("fs")?;
    let f0 = cur.f64("f0")?;
    let c = cur.f64("c")?;
    let pitch = cur.f64("pitch")?;
    let angle_rad = cur.f64("angle_rad")?;
    let t0 = cur.f64("t0")?;
    let mut samples = Vec::with_capacity(n_channels * n_samples);
    for _ in 0..n_channels * n_samples {
        samples.push(cur.f32("sample")?);
    }
    let meta = parse_meta(&mut cur)?;
    cur.expect_end()?;

    let probe = ProbeGeometry {
        n_elements: n_channels,
        pitch,
        f0,
        fs,
        c,
    };
    let angle = crate::domain::SteeringAngle::from_radians(angle_rad)?;
    let frame = RfFrame {
        probe,
        angle,
        samples,
        n_samples,
        t0,
        meta,
    };
    frame.check()?;
    Ok(frame)
}

pub fn write_rf(path: &Path, frame: &RfFrame) -> Result<()> {
    fs::write(path, rf_to_bytes(frame))?;
    Ok(())
}

pub fn read_rf(path: &Path) -> Result<RfFrame> {
    rf_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// I/Q images (PWIQ) and plane-wave sets (PWSQ)
// ---------------------------------------------------------------------------

fn put_iq_record(out: &mut Vec<u8>, img: &IqImage) {
    out.extend_from_slice(b"PWIQ");
    put_u32(out, 1);
    put_u32(out, img.grid.width as u32);
    put_u32(out, img.grid.height as u32);
    put_f64(out, img.grid.x0);
    put_f64(out, img.grid.z0);
    put_f64(out, img.grid.dx);
    put_f64(out, img.grid.dz);
    put_f64(out, img.angle.radians_or_nan());
    put_f64(out, img.norm_scale);
    for v in &img.values {
        put_f32(out, v.re as f32);
        put_f32(out, v.im as f32);
    }
}

fn parse_iq_record(cur: &mut Cursor) -> Result<IqImage> {
    cur.magic(b"PWIQ")?;
    check_version(cur, "PWIQ")?;
    let width = cur.u32("width")? as usize;
    let height = cur.u32("height")? as usize;
    let x0 = cur.f64("x0")?;
    let z0 = cur.f64("z0")?;
    let dx = cur.f64("dx")?;
    let dz = cur.f64("dz")?;
    let angle_rad = cur.f64("angle_rad")?;
    let norm_scale = cur.f64("norm_scale")?;
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let re = cur.f32("I sample")? as f64;
        let im = cur.f32("Q sample")? as f64;
        values.push(Complex64::new(re, im));
    }
    let grid = PixelGrid {
        x0,
        z0,
        dx,
        dz,
        width,
        height,
    };
    let img = IqImage {
        grid,
        values,
        angle: ImageAngle::from_radians_or_nan(angle_rad)?,
        norm_scale,
        meta: Vec::new(),
    };
    img.check()?;
    Ok(img)
}

pub fn iq_to_bytes(img: &IqImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * img.values.len());
    put_iq_record(&mut out, img);
    put_meta(&mut out, &img.meta);
    out
}

pub fn iq_from_bytes(buf: &[u8]) -> Result<IqImage> {
    let mut cur = Cursor::new(buf);
    let mut img = parse_iq_record(&mut cur)?;
    img.meta = parse_meta(&mut cur)?;
    cur.expect_end()?;
    Ok(img)
}

pub fn write_iq(path: &Path, img: &IqImage) -> Result<()> {
    fs::write(path, iq_to_bytes(img))?;
    Ok(())
}

pub fn read_iq(path: &Path) -> Result<IqImage> {
    iq_from_bytes(&fs::read(path)?)
}

/// Serializes a plane-wave set: `PWSQ`, frame count, validation index,
/// then the embedded I/Q records. `meta` lands in the trailing block;
/// per-frame metadata is not carried by the set format.
pub fn pwset_to_bytes(set: &PwSet, meta: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"PWSQ");
    put_u32(&mut out, set.frames.len() as u32);
    put_u32(&mut out, set.validation_index as u32);
    for frame in &set.frames {
        put_iq_record(&mut out, frame);
    }
    put_meta(&mut out, meta);
    out
}

pub fn pwset_from_bytes(buf: &[u8]) -> Result<(PwSet, Vec<String>)> {
    let mut cur = Cursor::new(buf);
    cur.magic(b"PWSQ")?;
    let k = cur.u32("frame count")? as usize;
    let v = cur.u32("validation index")? as usize;
    let mut frames = Vec::with_capacity(k);
    for _ in 0..k {
        frames.push(parse_iq_record(&mut cur)?);
    }
    let meta = parse_meta(&mut cur)?;
    cur.expect_end()?;
    let set = PwSet {
        frames,
        validation_index: v,
    };
    set.check()?;
    Ok((set, meta))
}

pub fn write_pwset(path: &Path, set: &PwSet, meta: &[String]) -> Result<()> {
    fs::write(path, pwset_to_bytes(set, meta))?;
    Ok(())
}

pub fn read_pwset(path: &Path) -> Result<(PwSet, Vec<String>)> {
    pwset_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Network checkpoints (DCLNET)
// ---------------------------------------------------------------------------

/// Checkpoint layout: a text header (`DCLNET v1`, the architecture fields,
/// the iteration counter, `END`), then every parameter array in layout
/// order as little-endian f64 — kernels then biases per layer.
pub fn checkpoint_to_bytes(params: &Parameters, cfg: &NetworkConfig) -> Vec<u8> {
    let mut head = String::new();
    head.push_str("DCLNET v1\n");
    head.push_str(&format!("levels {}\n", cfg.levels));
    head.push_str("filters");
    for f in &cfg.filters_per_level {
        head.push_str(&format!(" {f}"));
    }
    head.push('\n');
    head.push_str(&format!("kernel_size {}\n", cfg.kernel_size));
    head.push_str(&format!("leaky_slope {}\n", cfg.leaky_slope));
    head.push_str(&format!("crop_size {}\n", cfg.crop_size));
    head.push_str(&format!("iteration {}\n", params.iteration));
    head.push_str("END\n");

    let mut out = head.into_bytes();
    for layer in &params.layers {
        for &k in &layer.kernel {
            put_f64(&mut out, k);
        }
        for &b in &layer.bias {
            put_f64(&mut out, b);
        }
    }
    out
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<(Parameters, NetworkConfig)> {
    // The header is newline-separated ASCII up to the END marker.
    let header_end = find_header_end(buf)?;
    let header = std::str::from_utf8(&buf[..header_end])
        .map_err(|_| Error::format(0, "checkpoint header is not UTF-8"))?;
    let mut lines = header.lines();
    let first = lines.next().unwrap_or("");
    if first != "DCLNET v1" {
        return Err(Error::format(0, format!("bad checkpoint header '{first}'")));
    }
    let mut levels = None;
    let mut filters = None;
    let mut kernel_size = None;
    let mut leaky_slope = None;
    let mut crop_size = None;
    let mut iteration = None;
    for line in lines {
        if line == "END" {
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        match key {
            "levels" => levels = parts.next().and_then(|v| v.parse::<usize>().ok()),
            "filters" => {
                filters = Some(
                    parts
                        .map(|v| v.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::format(0, "bad filters line in checkpoint"))?,
                )
            }
            "kernel_size" => kernel_size = parts.next().and_then(|v| v.parse::<usize>().ok()),
            "leaky_slope" => leaky_slope = parts.next().and_then(|v| v.parse::<f64>().ok()),
            "crop_size" => crop_size = parts.next().and_then(|v| v.parse::<usize>().ok()),
            "iteration" => iteration = parts.next().and_then(|v| v.parse::<u64>().ok()),
            other => {
                return Err(Error::format(
                    0,
                    format!("unknown checkpoint header field '{other}'"),
                ))
            }
        }
    }
    let cfg = NetworkConfig {
        levels: levels.ok_or_else(|| Error::format(0, "checkpoint missing levels"))?,
        filters_per_level: filters
            .ok_or_else(|| Error::format(0, "checkpoint missing filters"))?,
        kernel_size: kernel_size
            .ok_or_else(|| Error::format(0, "checkpoint missing kernel_size"))?,
        leaky_slope: leaky_slope
            .ok_or_else(|| Error::format(0, "checkpoint missing leaky_slope"))?,
        crop_size: crop_size.ok_or_else(|| Error::format(0, "checkpoint missing crop_size"))?,
    };
    cfg.check()?;
    let iteration = iteration.ok_or_else(|| Error::format(0, "checkpoint missing iteration"))?;

    let mut cur = Cursor::new(buf);
    cur.pos = header_end;
    let mut layers = Vec::new();
    for (in_ch, out_ch, _) in layer_plan(&cfg) {
        let mut layer = ConvLayer::zeros(in_ch, out_ch);
        for k in layer.kernel.iter_mut() {
            *k = cur.f64("kernel value")?;
        }
        for b in layer.bias.iter_mut() {
            *b = cur.f64("bias value")?;
        }
        layers.push(layer);
    }
    cur.expect_end()?;
    Ok((Parameters { layers, iteration }, cfg))
}

fn find_header_end(buf: &[u8]) -> Result<usize> {
    let marker = b"\nEND\n";
    buf.windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or_else(|| Error::format(0, "checkpoint END marker not found"))
}

pub fn write_checkpoint(path: &Path, params: &Parameters, cfg: &NetworkConfig) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(params, cfg))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Parameters, NetworkConfig)> {
    checkpoint_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// PGM rendering
// ---------------------------------------------------------------------------

/// Binary PGM (P5, maxval 255): 0 dB maps to 255, the clip floor to 0,
/// rounding half up. `comments` become `#` header lines.
pub fn pgm_to_bytes(bmode: &BmodeImage, comments: &[String]) -> Vec<u8> {
    let dr = bmode.dynamic_range;
    let mut head = String::from("P5\n");
    for c in comments {
        head.push_str(&format!("# {}\n", c.replace('\n', " ")));
    }
    head.push_str(&format!("{} {}\n255\n", bmode.grid.width, bmode.grid.height));
    let mut out = head.into_bytes();
    out.extend(
        bmode
            .db_values
            .iter()
            .map(|&db| (255.0 * (db + dr) / dr + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn render_pgm(path: &Path, bmode: &BmodeImage, comments: &[String]) -> Result<()> {
    fs::write(path, pgm_to_bytes(bmode, comments))?;
    Ok(())
}
