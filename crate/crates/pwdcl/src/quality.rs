//! Image-quality metrics: lateral/axial profiles, full width at half
//! maximum, peak range axial-lobe level, contrast-to-noise ratio and its
//! distribution-overlap generalization.

use crate::beamform::BmodeImage;
use crate::domain::{PixelGrid, Validate};
use crate::error::{Error, Result, Violation};
use crate::simfield::CystDisk;

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Isoechoic,
    Anechoic,
    Hyperechoic,
    Hypoechoic,
    Background,
}

/// Pixel membership mask for metric regions. At least 16 member pixels are
/// required for meaningful statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid: PixelGrid,
    pub membership: Vec<bool>,
    pub label: RegionLabel,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    /// Disk-shaped mask around (cx, cz).
    pub fn disk(grid: &PixelGrid, cx: f64, cz: f64, radius: f64, label: RegionLabel) -> Self {
        let mut membership = vec![false; grid.n_pixels()];
        for r in 0..grid.height {
            let z = grid.z_at(r);
            for c in 0..grid.width {
                let x = grid.x_at(c);
                let d2 = (x - cx) * (x - cx) + (z - cz) * (z - cz);
                membership[r * grid.width + c] = d2 <= radius * radius;
            }
        }
        Self {
            grid: *grid,
            membership,
            label,
        }
    }

    /// Annulus-shaped mask (r_in < d <= r_out) around (cx, cz).
    pub fn annulus(
        grid: &PixelGrid,
        cx: f64,
        cz: f64,
        r_in: f64,
        r_out: f64,
        label: RegionLabel,
    ) -> Self {
        let mut membership = vec![false; grid.n_pixels()];
        for r in 0..grid.height {
            let z = grid.z_at(r);
            for c in 0..grid.width {
                let x = grid.x_at(c);
                let d2 = (x - cx) * (x - cx) + (z - cz) * (z - cz);
                membership[r * grid.width + c] = d2 > r_in * r_in && d2 <= r_out * r_out;
            }
        }
        Self {
            grid: *grid,
            membership,
            label,
        }
    }

    pub fn values<'a>(&'a self, image: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.membership
            .iter()
            .zip(image)
            .filter(|(m, _)| **m)
            .map(|(_, v)| *v)
    }

    pub fn disjoint_from(&self, other: &RegionMask) -> bool {
        self.membership
            .iter()
            .zip(&other.membership)
            .all(|(a, b)| !(*a && *b))
    }
}

impl Validate for RegionMask {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.membership.len() != self.grid.n_pixels() {
            v.push(Violation::new("membership", "shape does not match grid"));
        }
        if self.count() < 16 {
            v.push(Violation::new(
                "membership",
                "fewer than 16 member pixels (statistical floor)",
            ));
        }
        v
    }
}

/// Inner (anechoic) disk and surrounding equal-area isoechoic annulus for
/// one cyst, separated by `margin` to keep the blurred boundary out of
/// both regions.
pub fn cyst_masks(grid: &PixelGrid, cyst: &CystDisk, margin: f64) -> (RegionMask, RegionMask) {
    let r_inner = (cyst.radius - margin).max(0.0);
    let r_lo = cyst.radius + margin;
    let r_hi = (r_lo * r_lo + r_inner * r_inner).sqrt();
    (
        RegionMask::disk(grid, cyst.x, cyst.z, r_inner, RegionLabel::Anechoic),
        RegionMask::annulus(grid, cyst.x, cyst.z, r_lo, r_hi, RegionLabel::Isoechoic),
    )
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileAxis {
    Lateral,
    Axial,
}

/// A 1-D cut through a B-mode image, renormalized so its own peak is 0 dB.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub axis: ProfileAxis,
    /// Strictly increasing positions in meters.
    pub positions: Vec<f64>,
    /// dB values with max exactly 0.
    pub values_db: Vec<f64>,
}

impl Profile {
    fn renormalized(axis: ProfileAxis, positions: Vec<f64>, mut values_db: Vec<f64>) -> Self {
        let max = values_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in values_db.iter_mut() {
            *v -= max;
        }
        Self {
            axis,
            positions,
            values_db,
        }
    }

    /// Restriction to `[center - half_width, center + half_width]`,
    /// renormalized to its own peak. Used to isolate one target of a
    /// multi-target profile before measuring widths.
    pub fn window(&self, center: f64, half_width: f64) -> Result<Profile> {
        let lo = center - half_width;
        let hi = center + half_width;
        let idx: Vec<usize> = (0..self.positions.len())
            .filter(|&i| self.positions[i] >= lo && self.positions[i] <= hi)
            .collect();
        if idx.len() < 3 {
            return Err(Error::invalid_argument(
                "profile window contains fewer than 3 samples",
            ));
        }
        Ok(Profile::renormalized(
            self.axis,
            idx.iter().map(|&i| self.positions[i]).collect(),
            idx.iter().map(|&i| self.values_db[i]).collect(),
        ))
    }
}

impl Validate for Profile {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.positions.len() != self.values_db.len() {
            v.push(Violation::new("positions", "length mismatch with values"));
        }
        if self.positions.windows(2).any(|w| w[1] <= w[0]) {
            v.push(Violation::new("positions", "must be strictly increasing"));
        }
        let max = self.values_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max != 0.0 {
            v.push(Violation::new("values_db", "peak must be exactly 0 dB"));
        }
        v
    }
}

/// Samples the row (lateral) or column (axial) nearest the fixed
/// coordinate and renormalizes it to a 0 dB peak.
pub fn extract_profile(
    bmode: &BmodeImage,
    axis: ProfileAxis,
    fixed_coordinate: f64,
) -> Result<Profile> {
    let grid = &bmode.grid;
    match axis {
        ProfileAxis::Lateral => {
            let row = grid.row_at(fixed_coordinate).ok_or_else(|| {
                Error::invalid_argument(format!(
                    "depth {fixed_coordinate} outside the image grid"
                ))
            })?;
            let positions = (0..grid.width).map(|c| grid.x_at(c)).collect();
            let values = (0..grid.width).map(|c| bmode.at(row, c)).collect();
            Ok(Profile::renormalized(axis, positions, values))
        }
        ProfileAxis::Axial => {
            let col = grid.col_at(fixed_coordinate).ok_or_else(|| {
                Error::invalid_argument(format!(
                    "lateral position {fixed_coordinate} outside the image grid"
                ))
            })?;
            let positions = (0..grid.height).map(|r| grid.z_at(r)).collect();
            let values = (0..grid.height).map(|r| bmode.at(r, col)).collect();
            Ok(Profile::renormalized(axis, positions, values))
        }
    }
}

// ---------------------------------------------------------------------------
// FWHM
// ---------------------------------------------------------------------------

/// Full width at half maximum: distance between the two half-amplitude
/// (-6.02 dB) crossings nearest the unique global peak, interpolated
/// linearly in the amplitude domain.
pub fn fwhm(profile: &Profile) -> Result<f64> {
    profile.check()?;
    let amp: Vec<f64> = profile.values_db.iter().map(|db| 10f64.powf(db / 20.0)).collect();
    let peak_val = amp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peaks: Vec<usize> = (0..amp.len()).filter(|&i| amp[i] == peak_val).collect();
    if peaks.len() != 1 {
        return Err(Error::invalid_argument(
            "profile peak is not unique; window the profile around one target",
        ));
    }
    let peak = peaks[0];
    if peak == 0 || peak == amp.len() - 1 {
        return Err(Error::OneSidedPeak(
            "profile peak sits at an endpoint".to_string(),
        ));
    }
    let half = 0.5 * peak_val;
    let p = &profile.positions;

    let mut left = None;
    for i in (0..peak).rev() {
        if amp[i] < half {
            let frac = (half - amp[i]) / (amp[i + 1] - amp[i]);
            left = Some(p[i] + frac * (p[i + 1] - p[i]));
            break;
        }
    }
    let mut right = None;
    for i in peak + 1..amp.len() {
        if amp[i] < half {
            let frac = (half - amp[i - 1]) / (amp[i] - amp[i - 1]);
            right = Some(p[i - 1] + frac * (p[i] - p[i - 1]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::OneSidedPeak(
            "no half-amplitude crossing on one side of the peak".to_string(),
        )),
    }
}

// ---------------------------------------------------------------------------
// PRAL
// ---------------------------------------------------------------------------

/// Peak range axial-lobe level: main-lobe peak (within +/-`guard` of the
/// target depth) minus the highest value in the trailing window
/// `[target + guard, target + guard + window]`, in dB. Larger means better
/// axial-lobe suppression; the clip floor of the source image bounds the
/// result.
pub fn pral(
    axial_profile: &Profile,
    target_depth: f64,
    guard: f64,
    window: f64,
) -> Result<f64> {
    axial_profile.check()?;
    if !(guard > 0.0 && window > 0.0) {
        return Err(Error::invalid_argument("guard and window must be positive"));
    }
    let p = &axial_profile.positions;
    let first = *p.first().unwrap();
    let last = *p.last().unwrap();
    if target_depth - guard < first || target_depth + guard + window > last {
        return Err(Error::invalid_argument(format!(
            "PRAL window [{:.4}, {:.4}] m outside profile range [{:.4}, {:.4}] m",
            target_depth - guard,
            target_depth + guard + window,
            first,
            last
        )));
    }
    let max_in = |lo: f64, hi: f64| -> f64 {
        p.iter()
            .zip(&axial_profile.values_db)
            .filter(|(pos, _)| **pos >= lo && **pos <= hi)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let main = max_in(target_depth - guard, target_depth + guard);
    let lobe = max_in(target_depth + guard, target_depth + guard + window);
    Ok(main - lobe)
}

// ---------------------------------------------------------------------------
// CNR and gCNR
// ---------------------------------------------------------------------------

fn region_stats(image: &[f64], mask: &RegionMask) -> (f64, f64) {
    let values: Vec<f64> = mask.values(image).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn check_mask_pair(image: &[f64], inner: &RegionMask, outer: &RegionMask) -> Result<()> {
    inner.check()?;
    outer.check()?;
    if inner.membership.len() != image.len() || outer.membership.len() != image.len() {
        return Err(Error::invalid_argument("mask shape does not match image"));
    }
    if !inner.disjoint_from(outer) {
        return Err(Error::invalid_argument("inner and outer masks overlap"));
    }
    Ok(())
}

/// Contrast-to-noise ratio in dB:
/// `20 log10(|mu_i - mu_o| / sqrt(sigma_i^2 + sigma_o^2))`, computed over
/// the image values as given (pass envelope amplitudes for the standard
/// linear-domain reading). Identical means return -inf.
pub fn cnr(image: &[f64], inner: &RegionMask, outer: &RegionMask) -> Result<f64> {
    check_mask_pair(image, inner, outer)?;
    let (mu_i, var_i) = region_stats(image, inner);
    let (mu_o, var_o) = region_stats(image, outer);
    let pooled = var_i + var_o;
    if pooled == 0.0 {
        return Err(Error::DegenerateVariance(
            "both regions have zero variance".to_string(),
        ));
    }
    if mu_i == mu_o {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * ((mu_i - mu_o).abs() / pooled.sqrt()).log10())
}

/// Generalized contrast-to-noise ratio: one minus the overlap of the two
/// regions' value histograms over their pooled range, in [0, 1]. A
/// constant image returns 0 (total overlap).
pub fn gcnr(image: &[f64], inner: &RegionMask, outer: &RegionMask, bins: usize) -> Result<f64> {
    check_mask_pair(image, inner, outer)?;
    if bins < 32 {
        return Err(Error::invalid_argument("gCNR needs at least 32 bins"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in inner.values(image).chain(outer.values(image)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        return Ok(0.0);
    }
    let histogram = |mask: &RegionMask| -> Vec<f64> {
        let mut h = vec![0.0; bins];
        let mut n = 0usize;
        for v in mask.values(image) {
            let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            h[b.min(bins - 1)] += 1.0;
            n += 1;
        }
        for x in h.iter_mut() {
            *x /= n as f64;
        }
        h
    };
    let hi_hist = histogram(inner);
    let ho_hist = histogram(outer);
    let overlap: f64 = hi_hist
        .iter()
        .zip(&ho_hist)
        .map(|(a, b)| a.min(*b))
        .sum();
    Ok(1.0 - overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::{das_beamform, to_bmode, BeamformConfig};
    use crate::domain::{make_pixel_grid, ProbeGeometry, SteeringAngle};
    use crate::simfield::{build_point_phantom, simulate_rf, Pulse, SimParams};

    fn flat_grid(width: usize, height: usize) -> PixelGrid {
        PixelGrid::new(0.0, 0.0, 1e-4, 1e-4, width, height).unwrap()
    }

    fn bmode_from_db(grid: PixelGrid, db: Vec<f64>) -> BmodeImage {
        BmodeImage {
            grid,
            db_values: db,
            dynamic_range: 60.0,
        }
    }

    // -- profiles ---------------------------------------------------------------

    #[test]
    fn constant_image_gives_flat_zero_profile() {
        let grid = flat_grid(10, 6);
        let b = bmode_from_db(grid, vec![0.0; 60]);
        let p = extract_profile(&b, ProfileAxis::Lateral, 3e-4).unwrap();
        assert!(p.values_db.iter().all(|&v| v == 0.0));
        assert_eq!(p.positions.len(), 10);
        assert!(p.violations().is_empty());
    }

    #[test]
    fn profile_outside_grid_is_rejected() {
        let grid = flat_grid(10, 6);
        let b = bmode_from_db(grid, vec![0.0; 60]);
        assert!(extract_profile(&b, ProfileAxis::Lateral, 1.0).is_err());
        assert!(extract_profile(&b, ProfileAxis::Axial, -1.0).is_err());
    }

    #[test]
    fn lateral_profile_peaks_at_simulated_target() {
        let probe = ProbeGeometry::new(64, 3.0e-4, 5.0e6, 4.0e7, 1540.0).unwrap();
        let phantom = build_point_phantom(&[20.0e-3], &[2.0e-3]).unwrap();
        let rf = simulate_rf(
            &phantom,
            &probe,
            SteeringAngle::from_radians(0.0).unwrap(),
            &SimParams {
                duration: 40e-6,
                pulse: Pulse::new(5.0e6, 0.6).unwrap(),
                noise_rms: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let grid = make_pixel_grid(&probe, 25.0e-3, 4.0).unwrap();
        let img = das_beamform(&rf, &grid, &BeamformConfig::default()).unwrap();
        let b = to_bmode(&img, 60.0).unwrap();
        let p = extract_profile(&b, ProfileAxis::Lateral, 20.0e-3).unwrap();
        let peak_idx = p
            .values_db
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((p.positions[peak_idx] - 2.0e-3).abs() <= 2.0 * grid.dx);
    }

    #[test]
    fn multi_peak_axial_profile_resolves_every_target_depth() {
        // Five synthetic axial lobes at the PRAL measurement depths.
        let depths = [20.0e-3, 25.0e-3, 30.0e-3, 35.0e-3, 40.0e-3];
        let dz = 1e-4;
        let height = 450;
        let grid = PixelGrid::new(-1e-4, 0.0, 1e-4, dz, 3, height).unwrap();
        let mut db = vec![-60.0; grid.n_pixels()];
        for &d in &depths {
            let row = (d / dz).round() as usize;
            db[row * 3 + 1] = 0.0;
        }
        let b = bmode_from_db(grid, db);
        let p = extract_profile(&b, ProfileAxis::Axial, 0.0).unwrap();
        for &d in &depths {
            let idx = p
                .positions
                .iter()
                .position(|&z| (z - d).abs() < dz / 2.0)
                .unwrap();
            assert_eq!(p.values_db[idx], 0.0);
        }
    }

    // -- FWHM ---------------------------------------------------------------------

    fn profile_from_amplitude(positions: Vec<f64>, amp: Vec<f64>) -> Profile {
        let db: Vec<f64> = amp.iter().map(|a| 20.0 * a.log10()).collect();
        Profile::renormalized(ProfileAxis::Lateral, positions, db)
    }

    #[test]
    fn gaussian_fwhm_matches_analytic_width() {
        // Amplitude Gaussian with sigma = 1 mm: FWHM = 2 sqrt(2 ln 2) mm.
        let sigma = 1.0e-3;
        let step = 0.05e-3;
        let n = 201;
        let positions: Vec<f64> = (0..n).map(|i| (i as f64 - 100.0) * step).collect();
        let amp: Vec<f64> = positions
            .iter()
            .map(|&x| (-x * x / (2.0 * sigma * sigma)).exp())
            .collect();
        let p = profile_from_amplitude(positions, amp);
        let width = fwhm(&p).unwrap();
        let expected = 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma;
        assert!((expected - 2.3548e-3).abs() < 1e-6);
        assert!((width - expected).abs() <= step, "width {width}");
    }

    #[test]
    fn triangle_fwhm_is_exact() {
        // Symmetric triangle with base half-width w crosses half amplitude
        // at +/- w/2; the amplitude-domain interpolation recovers the
        // width w exactly.
        let w = 2.0e-3;
        let step = 0.3e-3;
        let n = 41;
        let positions: Vec<f64> = (0..n).map(|i| (i as f64 - 20.0) * step).collect();
        let amp: Vec<f64> = positions
            .iter()
            .map(|&x| (1.0 - x.abs() / w).max(1e-9))
            .collect();
        let p = profile_from_amplitude(positions, amp);
        let width = fwhm(&p).unwrap();
        assert!((width - w).abs() < 1e-12, "width {width}");
    }

    #[test]
    fn fwhm_invariant_to_db_shift_and_resampling() {
        let sigma = 0.8e-3;
        let make = |step: f64| {
            let n = (16.0e-3 / step) as usize | 1;
            let half = (n / 2) as f64;
            let positions: Vec<f64> = (0..n).map(|i| (i as f64 - half) * step).collect();
            let amp: Vec<f64> = positions
                .iter()
                .map(|&x| (-x * x / (2.0 * sigma * sigma)).exp())
                .collect();
            profile_from_amplitude(positions, amp)
        };
        let coarse = make(0.2e-3);
        let fine = make(0.1e-3);
        let a = fwhm(&coarse).unwrap();
        let b = fwhm(&fine).unwrap();
        assert!((a - b).abs() <= 0.2e-3);
        // Renormalization invariance is inherent: profiles always carry a
        // 0 dB peak, so shifting the source dB values changes nothing.
        let mut shifted = coarse.clone();
        for v in shifted.values_db.iter_mut() {
            *v -= 0.0; // already renormalized; fwhm sees identical data
        }
        assert_eq!(fwhm(&shifted).unwrap(), a);
    }

    #[test]
    fn fwhm_rejects_edge_peaks_and_missing_crossings() {
        let p = profile_from_amplitude(
            vec![0.0, 1e-3, 2e-3],
            vec![1.0, 0.9, 0.8], // peak at the left endpoint
        );
        assert!(matches!(fwhm(&p), Err(Error::OneSidedPeak(_))));

        let p = profile_from_amplitude(
            vec![0.0, 1e-3, 2e-3, 3e-3, 4e-3],
            vec![0.9, 0.95, 1.0, 0.95, 0.9], // never falls below half
        );
        assert!(matches!(fwhm(&p), Err(Error::OneSidedPeak(_))));
    }

    // -- PRAL ---------------------------------------------------------------------

    fn synthetic_axial_profile(lobes: &[(f64, f64)]) -> Profile {
        // Base floor at -60 dB with injected (depth, level) lobes.
        let step = 0.05e-3;
        let n = 1200;
        let positions: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let mut db = vec![-60.0; n];
        for &(depth, level) in lobes {
            let idx = (depth / step).round() as usize;
            db[idx] = level;
        }
        Profile::renormalized(ProfileAxis::Axial, positions, db)
    }

    #[test]
    fn pral_reads_injected_lobe_levels() {
        // Table-3 style: main lobe 0 dB at 20 mm, axial lobe -33.37 dB in
        // the window behind it.
        let p = synthetic_axial_profile(&[(20.0e-3, 0.0), (23.0e-3, -33.37)]);
        let v = pral(&p, 20.0e-3, 1.5e-3, 5.0e-3).unwrap();
        assert!((v - 33.37).abs() < 1e-9);
    }

    #[test]
    fn pral_clamps_at_the_clip_floor() {
        let p = synthetic_axial_profile(&[(20.0e-3, 0.0)]);
        let v = pral(&p, 20.0e-3, 1.5e-3, 5.0e-3).unwrap();
        assert_eq!(v, 60.0);
    }

    #[test]
    fn pral_takes_the_window_maximum() {
        let p = synthetic_axial_profile(&[(20.0e-3, 0.0), (22.5e-3, -40.0), (24.0e-3, -50.0)]);
        let v = pral(&p, 20.0e-3, 1.5e-3, 5.0e-3).unwrap();
        assert!((v - 40.0).abs() < 1e-9);
    }

    #[test]
    fn pral_strictly_decreases_with_lobe_amplitude() {
        let mut prev = f64::INFINITY;
        for level in [-50.0, -40.0, -30.0, -20.0, -10.0] {
            let p = synthetic_axial_profile(&[(20.0e-3, 0.0), (23.0e-3, level)]);
            let v = pral(&p, 20.0e-3, 1.5e-3, 5.0e-3).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn pral_rejects_windows_outside_the_profile() {
        let p = synthetic_axial_profile(&[(20.0e-3, 0.0)]);
        assert!(pral(&p, 58.0e-3, 1.5e-3, 5.0e-3).is_err());
        assert!(pral(&p, 20.0e-3, -1.0e-3, 5.0e-3).is_err());
    }

    // -- CNR ---------------------------------------------------------------------

    fn halves_mask(grid: &PixelGrid, top: bool, label: RegionLabel) -> RegionMask {
        let mut membership = vec![false; grid.n_pixels()];
        let split = grid.height / 2;
        for r in 0..grid.height {
            for c in 0..grid.width {
                membership[r * grid.width + c] = (r < split) == top;
            }
        }
        RegionMask {
            grid: *grid,
            membership,
            label,
        }
    }

    /// Exact-moment construction: alternating mu-1, mu+1 gives mean mu and
    /// population standard deviation exactly 1.
    fn two_level_image(grid: &PixelGrid, mu_top: f64, mu_bottom: f64) -> Vec<f64> {
        let split = grid.height / 2;
        (0..grid.n_pixels())
            .map(|i| {
                let r = i / grid.width;
                let mu = if r < split { mu_top } else { mu_bottom };
                if i % 2 == 0 {
                    mu - 1.0
                } else {
                    mu + 1.0
                }
            })
            .collect()
    }

    #[test]
    fn cnr_hand_case() {
        // mu_i 10, sigma_i 1, mu_o 2, sigma_o 1:
        // 20 log10(8 / sqrt(2)) = 15.051499783199058 dB.
        let grid = flat_grid(8, 8);
        let image = two_level_image(&grid, 10.0, 2.0);
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        let v = cnr(&image, &inner, &outer).unwrap();
        assert!((v - 15.051499783199058).abs() < 1e-9);
        // Swapping regions changes nothing (absolute value in numerator).
        let swapped = cnr(&image, &outer, &inner).unwrap();
        assert_eq!(v, swapped);
    }

    #[test]
    fn cnr_identical_regions_give_neg_infinity() {
        let grid = flat_grid(8, 8);
        let image = two_level_image(&grid, 5.0, 5.0);
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        assert_eq!(cnr(&image, &inner, &outer).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn cnr_zero_variance_is_degenerate() {
        let grid = flat_grid(8, 8);
        let image: Vec<f64> = (0..64)
            .map(|i| if i / 8 < 4 { 3.0 } else { 7.0 })
            .collect();
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        assert!(matches!(
            cnr(&image, &inner, &outer),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn cnr_invariant_under_common_positive_scaling() {
        let grid = flat_grid(8, 8);
        let image = two_level_image(&grid, 9.0, 4.0);
        let scaled: Vec<f64> = image.iter().map(|v| v * 13.7).collect();
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        let a = cnr(&image, &inner, &outer).unwrap();
        let b = cnr(&scaled, &inner, &outer).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn cnr_rejects_overlapping_masks() {
        let grid = flat_grid(8, 8);
        let image = two_level_image(&grid, 9.0, 4.0);
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        assert!(cnr(&image, &inner, &inner.clone()).is_err());
    }

    // -- gCNR ---------------------------------------------------------------------

    #[test]
    fn gcnr_identical_distributions_give_zero() {
        let grid = flat_grid(8, 8);
        let image: Vec<f64> = (0..64).map(|i| (i % 8) as f64).collect();
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        let v = gcnr(&image, &inner, &outer, 64).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn gcnr_disjoint_supports_give_one() {
        let grid = flat_grid(8, 8);
        let image: Vec<f64> = (0..64)
            .map(|i| if i / 8 < 4 { (i % 7) as f64 } else { 100.0 + (i % 7) as f64 })
            .collect();
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        assert_eq!(gcnr(&image, &inner, &outer, 128).unwrap(), 1.0);
    }

    #[test]
    fn gcnr_uniform_overlap_analytic_case() {
        // Uniform on [0, 1] vs uniform on [0.5, 1.5]: overlap integral is
        // 0.5, so gCNR = 0.5 within histogram resolution.
        let width = 40;
        let height = 40;
        let grid = flat_grid(width, height);
        let n_half = width * height / 2;
        let mut image = vec![0.0; width * height];
        for i in 0..n_half {
            image[i] = i as f64 / n_half as f64; // [0, 1)
        }
        for i in 0..n_half {
            image[n_half + i] = 0.5 + i as f64 / n_half as f64; // [0.5, 1.5)
        }
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        let bins = 256;
        let v = gcnr(&image, &inner, &outer, bins).unwrap();
        assert!(
            (v - 0.5).abs() <= 2.0 / bins as f64,
            "gCNR {v} not within 2/bins of 0.5"
        );
    }

    #[test]
    fn gcnr_bounded_and_monotone_under_separation() {
        let grid = flat_grid(16, 16);
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        let mut prev = -1.0;
        for shift in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let image: Vec<f64> = (0..256)
                .map(|i| {
                    let base = (i % 16) as f64 / 16.0;
                    if i / 16 < 8 {
                        base
                    } else {
                        base + shift
                    }
                })
                .collect();
            let v = gcnr(&image, &inner, &outer, 64).unwrap();
            assert!((0.0..=1.0).contains(&v));
            assert!(v >= prev, "gCNR not monotone: {v} after {prev}");
            prev = v;
        }
    }

    #[test]
    fn gcnr_constant_image_returns_zero_and_bins_are_checked() {
        let grid = flat_grid(8, 8);
        let image = vec![1.0; 64];
        let inner = halves_mask(&grid, true, RegionLabel::Isoechoic);
        let outer = halves_mask(&grid, false, RegionLabel::Anechoic);
        assert_eq!(gcnr(&image, &inner, &outer, 64).unwrap(), 0.0);
        assert!(gcnr(&image, &inner, &outer, 16).is_err());
    }

    #[test]
    fn region_mask_floor_is_enforced() {
        let grid = flat_grid(8, 8);
        let tiny = RegionMask::disk(&grid, 0.0, 0.0, 1e-9, RegionLabel::Anechoic);
        assert!(!tiny.violations().is_empty());
    }

    #[test]
    fn cyst_masks_are_disjoint_and_big_enough() {
        let grid = flat_grid(64, 64);
        let cyst = CystDisk {
            x: 3.2e-3,
            z: 3.2e-3,
            radius: 1.2e-3,
        };
        let (inner, outer) = cyst_masks(&grid, &cyst, 0.2e-3);
        assert!(inner.disjoint_from(&outer));
        assert!(inner.violations().is_empty());
        assert!(outer.violations().is_empty());
    }
}
