//! Binned and spatially-varying readout.
//!
//! Noise semantics per mode, with `N = k * k` pixels in a footprint and `g` the
//! nominal gain stored in the gain map:
//!
//! | mode     | amplifier gain | estimate                                      |
//! |----------|----------------|-----------------------------------------------|
//! | additive | `g / N`        | `1/N sum(l_i + n_pre,i) + n_post / (N * g/N)` |
//! | average  | `g`            | `1/N sum(l_i + n_pre,i) + n_post / g`         |
//! | digital  | `g`            | `1/N sum(l_i + n_pre,i + n_post,i / g)`       |
//!
//! Analog modes make one post-amplifier draw per superpixel; digital makes N.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::{GainMap, GainMode};
use crate::grid::{Plane, RoiGrid};
use crate::rng;
use crate::sensor::{estimate_photons, PhotonEstimate, RadianceMap, RawCapture, Sensor};

/// Supported bin side lengths.
pub const BIN_SIDES: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    Additive,
    Average,
    #[default]
    Digital,
}

impl std::str::FromStr for BinningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Self::Additive),
            "average" => Ok(Self::Average),
            "digital" => Ok(Self::Digital),
            other => Err(Error::Config(format!("unknown binning mode '{other}'"))),
        }
    }
}

impl BinningMode {
    /// Gain actually applied by the amplifier for nominal gain `g` and bin side `k`.
    pub fn amplifier_gain(self, g: f64, k: usize) -> f64 {
        match self {
            BinningMode::Additive => g / (k * k) as f64,
            _ => g,
        }
    }
}

/// Per-ROI bin side `k` (footprint `k x k`, factor `N = k^2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMap {
    pub width: usize,
    pub height: usize,
    pub roi_size: usize,
    pub mode: BinningMode,
    /// Row-major bin sides over the ROI grid.
    pub k: Vec<u8>,
}

impl BinMap {
    pub fn new(width: usize, height: usize, roi_size: usize, mode: BinningMode, k: Vec<u8>) -> Result<Self> {
        let map = Self {
            width,
            height,
            roi_size,
            mode,
            k,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn uniform(width: usize, height: usize, roi_size: usize, k: usize, mode: BinningMode) -> Result<Self> {
        let grid = RoiGrid::new(width, height, roi_size)?;
        Self::new(width, height, roi_size, mode, vec![k as u8; grid.len()])
    }

    pub fn unbinned(width: usize, height: usize, roi_size: usize) -> Result<Self> {
        Self::uniform(width, height, roi_size, 1, BinningMode::default())
    }

    pub fn validate(&self) -> Result<()> {
        let grid = RoiGrid::new(self.width, self.height, self.roi_size)?;
        if self.k.len() != grid.len() {
            return Err(Error::Shape(format!(
                "bin map has {} entries for a {}x{} ROI grid",
                self.k.len(),
                grid.cols,
                grid.rows
            )));
        }
        for &k in &self.k {
            let k = k as usize;
            if !BIN_SIDES.contains(&k) {
                return Err(Error::Config(format!("bin side {k} not in {BIN_SIDES:?}")));
            }
            if !self.roi_size.is_multiple_of(k) {
                return Err(Error::Config(format!(
                    "bin side {k} does not divide roi_size {}",
                    self.roi_size
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> RoiGrid {
        RoiGrid {
            roi_size: self.roi_size,
            cols: self.width.div_ceil(self.roi_size),
            rows: self.height.div_ceil(self.roi_size),
            width: self.width,
            height: self.height,
        }
    }

    #[inline]
    pub fn factor(&self, roi: usize) -> usize {
        self.k[roi] as usize
    }

    pub fn k_at(&self, x: usize, y: usize) -> usize {
        self.factor(self.grid().roi_of(x, y))
    }

    pub fn check_frame(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if self.width != width || self.height != height {
            return Err(Error::Shape(format!(
                "bin map is {}x{}, frame is {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Gain of ROI `roi` for maps that are constant over ROIs.
fn roi_gain(gain_map: &GainMap, grid: &RoiGrid, roi: usize) -> f64 {
    let (x0, y0) = grid.origin(roi);
    gain_map.gain_at(x0, y0)
}

fn check_plan(gain_map: &GainMap, bin_map: &BinMap, sensor: &Sensor) -> Result<RoiGrid> {
    let (w, h) = (bin_map.width, bin_map.height);
    bin_map.check_frame(w, h)?;
    gain_map.check_frame(w, h)?;
    let grid = bin_map.grid();
    match gain_map.mode {
        GainMode::PerRoi if gain_map.roi_size != Some(bin_map.roi_size) => {
            return Err(Error::Shape(format!(
                "gain map ROI size {:?} differs from bin map ROI size {}",
                gain_map.roi_size, bin_map.roi_size
            )));
        }
        GainMode::PerPixel => {
            if bin_map.k.iter().any(|&k| k != 1) {
                return Err(Error::Config("per-pixel gain maps cannot be binned".into()));
            }
            for &g in &gain_map.values {
                sensor.check_gain(g)?;
            }
            return Ok(grid);
        }
        _ => {}
    }
    for roi in 0..grid.len() {
        let g = roi_gain(gain_map, &grid, roi);
        let k = bin_map.factor(roi);
        let amp = bin_map.mode.amplifier_gain(g, k);
        if let Err(e) = sensor.check_gain(amp) {
            return Err(if bin_map.mode == BinningMode::Additive && k > 1 {
                Error::Config(format!(
                    "additive {k}x{k} binning at gain {g} needs amplifier gain {amp} within \
                     the sensor bounds; adjust the gain or the bin size ({e})"
                ))
            } else {
                e
            });
        }
    }
    Ok(grid)
}

/// Reads one ROI and returns its in-bounds digits, row-major.
#[allow(clippy::too_many_arguments)]
fn read_roi(
    scene: &Plane<f64>,
    grid: &RoiGrid,
    roi: usize,
    gain_map: &GainMap,
    k: usize,
    mode: BinningMode,
    sensor: &Sensor,
    seed: u64,
) -> Vec<u16> {
    let mut rng = rng::substream(seed, roi as u64);
    let (x0, y0) = grid.origin(roi);
    let (w, h) = grid.extent(roi);
    let mut out = vec![0u16; w * h];
    let n = (k * k) as f64;
    let blocks = grid.roi_size / k;
    for by in 0..blocks {
        for bx in 0..blocks {
            let (px, py) = (bx * k, by * k);
            match mode {
                BinningMode::Digital => {
                    for dy in 0..k {
                        for dx in 0..k {
                            let (lx, ly) = (px + dx, py + dy);
                            let (x, y) = (x0 + lx, y0 + ly);
                            let g = gain_map.gain_at(x.min(grid.width - 1), y.min(grid.height - 1));
                            let l_star = *scene.get_clamped(x, y);
                            let charge = sensor.collect(l_star, &mut rng);
                            let d = sensor.convert(g * charge, &mut rng);
                            if lx < w && ly < h {
                                out[ly * w + lx] = d;
                            }
                        }
                    }
                }
                BinningMode::Additive | BinningMode::Average => {
                    let g = gain_map.gain_at((x0 + px).min(grid.width - 1), (y0 + py).min(grid.height - 1));
                    let mut charge = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            charge += sensor.collect(*scene.get_clamped(x0 + px + dx, y0 + py + dy), &mut rng);
                        }
                    }
                    let v = match mode {
                        BinningMode::Additive => mode.amplifier_gain(g, k) * charge,
                        _ => g * charge / n,
                    };
                    let d = sensor.convert(v, &mut rng);
                    for ly in py..(py + k).min(h) {
                        for lx in px..(px + k).min(w) {
                            out[ly * w + lx] = d;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn read_frame(
    scene: &RadianceMap,
    gain_map: &GainMap,
    bin_map: &BinMap,
    sensor: &Sensor,
    seed: u64,
) -> Result<RawCapture> {
    let (w, h) = (scene.width(), scene.height());
    bin_map.check_frame(w, h)?;
    let grid = check_plan(gain_map, bin_map, sensor)?;
    let tiles: Vec<Vec<u16>> = (0..grid.len())
        .into_par_iter()
        .map(|roi| {
            read_roi(
                scene.plane(),
                &grid,
                roi,
                gain_map,
                bin_map.factor(roi),
                bin_map.mode,
                sensor,
                seed,
            )
        })
        .collect();
    let mut digits = Plane::filled(w, h, 0u16);
    for (roi, tile) in tiles.iter().enumerate() {
        let (x0, y0) = grid.origin(roi);
        let (tw, th) = grid.extent(roi);
        for y in 0..th {
            for x in 0..tw {
                digits.set(x0 + x, y0 + y, tile[y * tw + x]);
            }
        }
    }
    Ok(RawCapture::from_digits(
        digits,
        gain_map.clone(),
        bin_map.clone(),
        sensor,
        Some(seed),
    ))
}

/// Estimate of one ROI at its binned resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeRoi {
    pub roi: usize,
    pub k: usize,
    pub data: Plane<f64>,
    pub valid: Plane<bool>,
}

/// Pulls each ROI's superpixel values out of a full-resolution estimate.
pub fn native_rois(estimate: &PhotonEstimate, bin_map: &BinMap) -> Vec<NativeRoi> {
    let grid = bin_map.grid();
    (0..grid.len())
        .map(|roi| {
            let k = bin_map.factor(roi);
            let (x0, y0) = grid.origin(roi);
            let (w, h) = grid.extent(roi);
            let (nw, nh) = (w.div_ceil(k), h.div_ceil(k));
            NativeRoi {
                roi,
                k,
                data: Plane::from_fn(nw, nh, |x, y| *estimate.data.get(x0 + x * k, y0 + y * k)),
                valid: Plane::from_fn(nw, nh, |x, y| *estimate.valid.get(x0 + x * k, y0 + y * k)),
            }
        })
        .collect()
}

/// Output of a uniformly binned readout.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReadout {
    pub raw: RawCapture,
    /// Estimate at the reduced resolution `(width / k, height / k)`.
    pub estimate: PhotonEstimate,
}

/// ROI size used to split uniform binned readouts into random streams.
const UNIFORM_TILE: usize = 64;

/// Reads the whole frame with `k x k` binning in `mode` at nominal gain `g`.
pub fn bin_capture(
    scene: &RadianceMap,
    g: f64,
    k: usize,
    mode: BinningMode,
    sensor: &Sensor,
    seed: u64,
) -> Result<BinnedReadout> {
    let (w, h) = (scene.width(), scene.height());
    if !BIN_SIDES.contains(&k) {
        return Err(Error::Config(format!("bin side {k} not in {BIN_SIDES:?}")));
    }
    if w % k != 0 || h % k != 0 {
        return Err(Error::Shape(format!(
            "{w}x{h} frame is not divisible into {k}x{k} bins"
        )));
    }
    let bin_map = BinMap::uniform(w, h, UNIFORM_TILE, k, mode)?;
    let raw = read_frame(scene, &GainMap::constant(g), &bin_map, sensor, seed)?;
    let full = estimate_photons(&raw, sensor);
    let estimate = PhotonEstimate {
        data: Plane::from_fn(w / k, h / k, |x, y| *full.data.get(x * k, y * k)),
        valid: Plane::from_fn(w / k, h / k, |x, y| *full.valid.get(x * k, y * k)),
    };
    Ok(BinnedReadout { raw, estimate })
}

/// Per-ROI readout parameters recorded alongside a spatially-varying capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiReadout {
    pub roi: usize,
    pub gain: f64,
    pub k: usize,
    pub mode: BinningMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCapture {
    pub raw: RawCapture,
    /// Full-resolution view, superpixels replicated (nearest neighbour).
    pub estimate: PhotonEstimate,
    pub native: Vec<NativeRoi>,
    pub rois: Vec<RoiReadout>,
}

/// Reads a frame where every ROI has its own gain and bin size.
pub fn capture_spatially_varying(
    scene: &RadianceMap,
    gain_map: &GainMap,
    bin_map: &BinMap,
    sensor: &Sensor,
    seed: u64,
) -> Result<SpatialCapture> {
    let raw = read_frame(scene, gain_map, bin_map, sensor, seed)?;
    let estimate = estimate_photons(&raw, sensor);
    let native = native_rois(&estimate, bin_map);
    let grid = bin_map.grid();
    let rois = (0..grid.len())
        .map(|roi| RoiReadout {
            roi,
            gain: roi_gain(gain_map, &grid, roi),
            k: bin_map.factor(roi),
            mode: bin_map.mode,
        })
        .collect();
    Ok(SpatialCapture {
        raw,
        estimate,
        native,
        rois,
    })
}

/// Frames of one scene read at increasing constant gains.
#[derive(Debug, Clone, PartialEq)]
pub struct GainStack {
    frames: Vec<(f64, RawCapture)>,
}

impl GainStack {
    pub fn new(frames: Vec<(f64, RawCapture)>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Input("gain stack is empty".into()));
        }
        let (w, h) = (frames[0].1.width(), frames[0].1.height());
        for pair in frames.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(Error::Input("gain stack gains must strictly increase".into()));
            }
        }
        if frames.iter().any(|(_, f)| f.width() != w || f.height() != h) {
            return Err(Error::Shape("gain stack frames differ in size".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[(f64, RawCapture)] {
        &self.frames
    }

    pub fn gains(&self) -> Vec<f64> {
        self.frames.iter().map(|(g, _)| *g).collect()
    }

    pub fn into_frames(self) -> Vec<(f64, RawCapture)> {
        self.frames
    }
}

/// Simulates a gain sweep; frame `i` uses its own derived seed.
pub fn simulate_gain_stack(
    scene: &RadianceMap,
    gains: &[f64],
    roi_size: usize,
    sensor: &Sensor,
    seed: u64,
) -> Result<GainStack> {
    let bin_map = BinMap::unbinned(scene.width(), scene.height(), roi_size)?;
    let frames = gains
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let frame_seed = rng::derive_seed(seed, "gain-stack", i as u64);
            read_frame(scene, &GainMap::constant(g), &bin_map, sensor, frame_seed).map(|r| (g, r))
        })
        .collect::<Result<Vec<_>>>()?;
    GainStack::new(frames)
}

/// A frame assembled from a gain stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub raw: RawCapture,
    /// Stack frame index used for each ROI.
    pub provenance: Vec<usize>,
}

/// Builds the frame a spatially-varying capture would have produced by copying
/// each ROI from the stack frame read at that ROI's planned gain. The plan must
/// already be quantised to the stack's gains (see [`GainMap::snap_to_ladder`]).
pub fn compose_from_gain_stack(stack: &GainStack, gain_map: &GainMap) -> Result<Composite> {
    let first = &stack.frames[0].1;
    let (w, h) = (first.width(), first.height());
    gain_map.check_frame(w, h)?;
    let roi_size = match gain_map.mode {
        GainMode::PerRoi => gain_map.roi_size.unwrap_or(w.max(h)),
        GainMode::Constant => w.max(h),
        GainMode::PerPixel => return Err(Error::Config("per-pixel plans cannot be composed from a stack".into())),
    };
    let grid = RoiGrid::new(w, h, roi_size)?;
    let provenance = (0..grid.len())
        .map(|roi| {
            let g = roi_gain(gain_map, &grid, roi);
            stack
                .frames
                .iter()
                .position(|(sg, _)| (sg - g).abs() <= 1e-9 * sg.abs().max(1.0))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "planned gain {g} for ROI {roi} is not in the stack {:?}; quantise the plan first",
                        stack.gains()
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut digits = Plane::filled(w, h, 0u16);
    let mut saturation = Plane::filled(w, h, false);
    for (roi, &frame) in provenance.iter().enumerate() {
        let src = &stack.frames[frame].1;
        let (x0, y0) = grid.origin(roi);
        let (tw, th) = grid.extent(roi);
        for y in y0..y0 + th {
            for x in x0..x0 + tw {
                digits.set(x, y, *src.digits.get(x, y));
                saturation.set(x, y, *src.saturation.get(x, y));
            }
        }
    }
    let raw = RawCapture {
        digits,
        saturation,
        gain_map: gain_map.clone(),
        bin_map: first.bin_map.clone(),
        bit_depth: first.bit_depth,
        black_level: first.black_level,
        seed: None,
    };
    Ok(Composite { raw, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{simulate_capture, SensorConfig};

    fn sensor() -> Sensor {
        Sensor::new(SensorConfig::protocol_default()).unwrap()
    }

    #[test]
    fn unit_bins_match_unbinned_readout_in_every_mode() {
        let s = sensor();
        let scene = RadianceMap::new(Plane::from_fn(40, 24, |x, y| (x * 7 + y * 3) as f64)).unwrap();
        let reference = bin_capture(&scene, 4.0, 1, BinningMode::Digital, &s, 9).unwrap();
        for mode in [BinningMode::Additive, BinningMode::Average] {
            let other = bin_capture(&scene, 4.0, 1, mode, &s, 9).unwrap();
            assert_eq!(other.raw.digits, reference.raw.digits);
        }
    }

    #[test]
    fn additive_gain_underflow_is_rejected() {
        let s = sensor();
        let scene = RadianceMap::uniform(16, 16, 10.0).unwrap();
        let err = bin_capture(&scene, 2.0, 2, BinningMode::Additive, &s, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(bin_capture(&scene, 4.0, 2, BinningMode::Additive, &s, 0).is_ok());
    }

    #[test]
    fn indivisible_frame_is_a_shape_error() {
        let s = sensor();
        let scene = RadianceMap::uniform(10, 16, 10.0).unwrap();
        assert!(matches!(
            bin_capture(&scene, 1.0, 4, BinningMode::Digital, &s, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn noiseless_binning_preserves_block_means() {
        let s = Sensor::noiseless(SensorConfig::protocol_default()).unwrap();
        let scene = RadianceMap::new(Plane::from_fn(16, 16, |x, y| 10.0 + x as f64 + 2.0 * y as f64)).unwrap();
        for mode in [BinningMode::Additive, BinningMode::Average, BinningMode::Digital] {
            let out = bin_capture(&scene, 16.0, 4, mode, &s, 0).unwrap();
            assert_eq!((out.estimate.data.width, out.estimate.data.height), (4, 4));
            for by in 0..4 {
                for bx in 0..4 {
                    let mut m = 0.0;
                    for y in 0..4 {
                        for x in 0..4 {
                            m += scene.plane().get(bx * 4 + x, by * 4 + y);
                        }
                    }
                    m /= 16.0;
                    let got = *out.estimate.data.get(bx, by);
                    assert!((got - m).abs() < 0.05, "{mode:?}: {got} vs {m}");
                }
            }
        }
    }

    #[test]
    fn all_ones_plan_equals_plain_simulation() {
        let s = sensor();
        let scene = RadianceMap::new(Plane::from_fn(70, 50, |x, y| ((x * y) % 90) as f64)).unwrap();
        let grid = RoiGrid::new(70, 50, 32).unwrap();
        let gains = GainMap::per_roi(&grid, 0.0, vec![1.0; grid.len()]).unwrap();
        let bins = BinMap::unbinned(70, 50, 32).unwrap();
        let sv = capture_spatially_varying(&scene, &gains, &bins, &s, 4).unwrap();
        let plain = simulate_capture(&scene, &GainMap::constant(1.0), &bins, &s, 4).unwrap();
        assert_eq!(sv.raw.digits, plain.digits);
        assert_eq!(sv.native.len(), grid.len());
    }

    #[test]
    fn mismatched_grids_are_shape_errors() {
        let s = sensor();
        let scene = RadianceMap::uniform(64, 64, 5.0).unwrap();
        let g16 = GainMap::per_roi(&RoiGrid::new(64, 64, 16).unwrap(), 0.0, vec![1.0; 16]).unwrap();
        let b32 = BinMap::unbinned(64, 64, 32).unwrap();
        assert!(matches!(
            capture_spatially_varying(&scene, &g16, &b32, &s, 0),
            Err(Error::Shape(_))
        ));
        let b_other = BinMap::unbinned(32, 64, 32).unwrap();
        assert!(matches!(
            capture_spatially_varying(&scene, &GainMap::constant(1.0), &b_other, &s, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn boundary_rois_are_cropped() {
        let s = sensor();
        let scene = RadianceMap::uniform(37, 21, 20.0).unwrap();
        let bins = BinMap::uniform(37, 21, 16, 4, BinningMode::Average).unwrap();
        let sv = capture_spatially_varying(&scene, &GainMap::constant(2.0), &bins, &s, 1).unwrap();
        assert_eq!((sv.raw.width(), sv.raw.height()), (37, 21));
        let last = sv.native.last().unwrap();
        assert_eq!((last.data.width, last.data.height), (2, 2));
    }

    #[test]
    fn bin_map_validation() {
        assert!(BinMap::new(32, 32, 16, BinningMode::Digital, vec![1, 2, 4, 8]).is_ok());
        assert!(BinMap::new(32, 32, 16, BinningMode::Digital, vec![1, 3, 4, 8]).is_err());
        assert!(BinMap::new(24, 24, 12, BinningMode::Digital, vec![8, 1, 1, 1]).is_err());
        assert!(BinMap::new(32, 32, 16, BinningMode::Digital, vec![1, 1]).is_err());
    }

    #[test]
    fn single_gain_stack_composes_to_identity() {
        let s = sensor();
        let scene = RadianceMap::new(Plane::from_fn(32, 32, |x, _| x as f64 * 3.0)).unwrap();
        let stack = simulate_gain_stack(&scene, &[2.0], 16, &s, 3).unwrap();
        let comp = compose_from_gain_stack(&stack, &GainMap::constant(2.0)).unwrap();
        assert_eq!(comp.raw.digits, stack.frames()[0].1.digits);
    }

    #[test]
    fn checkerboard_plan_alternates_provenance() {
        let s = sensor();
        let scene = RadianceMap::uniform(64, 64, 30.0).unwrap();
        let stack = simulate_gain_stack(&scene, &[1.0, 8.0], 16, &s, 3).unwrap();
        let grid = RoiGrid::new(64, 64, 16).unwrap();
        let gains: Vec<f64> = (0..16)
            .map(|i| if (i % 4 + i / 4) % 2 == 0 { 1.0 } else { 8.0 })
            .collect();
        let plan = GainMap::per_roi(&grid, 0.0, gains).unwrap();
        let comp = compose_from_gain_stack(&stack, &plan).unwrap();
        for (i, &p) in comp.provenance.iter().enumerate() {
            assert_eq!(p, (i % 4 + i / 4) % 2);
        }
        let missing = GainMap::per_roi(&grid, 0.0, vec![4.0; 16]).unwrap();
        assert!(matches!(
            compose_from_gain_stack(&stack, &missing),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stack_gains_must_increase() {
        let s = sensor();
        let scene = RadianceMap::uniform(16, 16, 30.0).unwrap();
        assert!(simulate_gain_stack(&scene, &[2.0, 2.0], 16, &s, 0).is_err());
    }
}
