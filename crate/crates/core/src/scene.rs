//! Scene ingestion, normalisation and analytic test scenes.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::io;
use crate::rng::splitmix64;
use crate::sensor::{RadianceMap, SensorConfig};

/// Mean scene level used by the evaluation protocol, as a fraction of full well.
pub const PROTOCOL_MEAN_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    PfmFile {
        path: PathBuf,
    },
    /// Sinusoid along x with peak density `l0` (e-/um^2) and frequency `f0`
    /// (cycles/um), box-filtered by the unit pixel. Pixel 0 is centred on a crest.
    Sinusoid {
        f0: f64,
        l0: f64,
    },
    /// Left half at `low`, right half at `high` electrons.
    Step {
        low: f64,
        high: f64,
    },
    /// Procedural piecewise-smooth texture spanning about `stops` stops of
    /// dynamic range.
    Texture {
        seed: u64,
        #[serde(default = "default_stops")]
        stops: f64,
    },
    /// Full-contrast texture patch with a 1/f amplitude spectrum.
    Patch {
        seed: u64,
    },
}

fn default_stops() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub source: SceneSource,
    /// Frame size for synthetic sources; ignored for files.
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub height: usize,
    /// Target mean as a fraction of full well; `None` keeps the source scale.
    pub mean_level_frac: Option<f64>,
    #[serde(default = "unit")]
    pub exposure_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl SceneSpec {
    pub fn synthetic(source: SceneSource, width: usize, height: usize) -> Self {
        Self {
            source,
            width,
            height,
            mean_level_frac: Some(PROTOCOL_MEAN_LEVEL),
            exposure_scale: 1.0,
        }
    }

    pub fn pfm(path: impl Into<PathBuf>) -> Self {
        Self {
            source: SceneSource::PfmFile { path: path.into() },
            width: 0,
            height: 0,
            mean_level_frac: Some(PROTOCOL_MEAN_LEVEL),
            exposure_scale: 1.0,
        }
    }

    pub fn with_mean_level(mut self, frac: Option<f64>) -> Self {
        self.mean_level_frac = frac;
        self
    }
}

/// Loads or synthesises the scene, clips negatives, scales linear radiance so
/// its mean is `mean_level_frac * well_capacity`, then applies `exposure_scale`.
pub fn load_and_normalize(spec: &SceneSpec, config: &SensorConfig) -> Result<RadianceMap> {
    if let Some(f) = spec.mean_level_frac {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("mean_level_frac {f} outside (0, 1)")));
        }
    }
    if !(spec.exposure_scale > 0.0 && spec.exposure_scale.is_finite()) {
        return Err(Error::Config("exposure_scale must be positive".into()));
    }
    let mut plane = match &spec.source {
        SceneSource::PfmFile { path } => io::read_pfm(path)?,
        source => {
            if spec.width == 0 || spec.height == 0 {
                return Err(Error::Config("synthetic scenes need a nonzero size".into()));
            }
            match *source {
                SceneSource::Sinusoid { f0, l0 } => {
                    let p = config.pixel_pitch;
                    if !(f0 >= 0.0 && f0 <= 1.0 / p && l0 > 0.0) {
                        return Err(Error::Config(format!(
                            "sinusoid needs 0 <= f0 <= 1/pitch and l0 > 0 (f0={f0}, l0={l0})"
                        )));
                    }
                    sinusoid(spec.width, spec.height, f0, l0, p)
                }
                SceneSource::Step { low, high } => {
                    Plane::from_fn(
                        spec.width,
                        spec.height,
                        |x, _| if x < spec.width / 2 { low } else { high },
                    )
                }
                SceneSource::Texture { seed, stops } => texture(spec.width, spec.height, seed, stops),
                SceneSource::Patch { seed } => texture_patch(spec.width, spec.height, seed),
                SceneSource::PfmFile { .. } => unreachable!(),
            }
        }
    };
    if plane.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("scene contains NaN or infinite values".into()));
    }
    for v in &mut plane.data {
        *v = v.max(0.0);
    }
    if let Some(frac) = spec.mean_level_frac {
        let mean = plane.mean();
        if !(mean > 0.0) {
            return Err(Error::Input("scene mean is zero; cannot normalise".into()));
        }
        let s = frac * config.well_capacity / mean;
        for v in &mut plane.data {
            *v *= s;
        }
    }
    if spec.exposure_scale != 1.0 {
        for v in &mut plane.data {
            *v *= spec.exposure_scale;
        }
    }
    RadianceMap::new(plane)
}

/// Expected counts of a box-filtered sinusoid at pitch `p`:
/// `l0 p / 2 * sin(pi p f0) / (pi f0) * cos(2 pi f0 x) + l0 p^2 / 2`.
pub fn sinusoid(width: usize, height: usize, f0: f64, l0: f64, p: f64) -> Plane<f64> {
    let amp = if f0 == 0.0 {
        l0 * p * p / 2.0
    } else {
        l0 * p / 2.0 * (PI * p * f0).sin() / (PI * f0)
    };
    let row: Vec<f64> = (0..width)
        .map(|i| amp * (2.0 * PI * f0 * i as f64 * p).cos() + l0 * p * p / 2.0)
        .collect();
    Plane::from_fn(width, height, |x, _| row[x])
}

/// Block-sums `k x k` cells: photon counts add over area.
pub fn pixelate(scene: &RadianceMap, k: usize) -> Result<RadianceMap> {
    let (w, h) = (scene.width(), scene.height());
    if k == 0 || w % k != 0 || h % k != 0 {
        return Err(Error::Shape(format!("{w}x{h} is not divisible by {k}")));
    }
    let src = scene.plane();
    RadianceMap::new(Plane::from_fn(w / k, h / k, |x, y| {
        let mut s = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                s += src.get(x * k + dx, y * k + dy);
            }
        }
        s
    }))
}

fn lattice(seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let h =
        splitmix64(seed ^ splitmix64(octave ^ splitmix64((ix as u64) ^ splitmix64(iy as u64 ^ 0x5851_f42d_4c95_7f2d))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, octave: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, octave, ix, iy);
    let b = lattice(seed, octave, ix + 1, iy);
    let c = lattice(seed, octave, ix, iy + 1);
    let d = lattice(seed, octave, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Piecewise-smooth procedural scene: a smooth illumination field, a few
/// hard-edged bright and dark patches, and multi-octave surface texture,
/// exponentiated to span roughly `stops` stops.
pub fn texture(width: usize, height: usize, seed: u64, stops: f64) -> Plane<f64> {
    let size = width.max(height) as f64;
    // Patches: (cx, cy, radius, log2 offset, square?)
    let patches: Vec<(f64, f64, f64, f64, bool)> = (0..6u64)
        .map(|i| {
            let r = |j: u64| lattice(seed, 1000 + i, j as i64, 7);
            (
                r(0) * width as f64,
                r(1) * height as f64,
                (0.06 + 0.12 * r(2)) * size,
                (r(3) - 0.45) * 0.6,
                r(4) < 0.5,
            )
        })
        .collect();
    let mut log_l = Plane::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / size, y as f64 / size);
        // Broad illumination: 0..1 with a horizon-like vertical falloff.
        let illum = 0.65 * value_noise(seed, 0, u * 2.0, v * 2.0) + 0.35 * (1.0 - v);
        let mut detail = 0.0;
        let mut amp = 0.5;
        let mut freq = 8.0;
        for octave in 1..6 {
            detail += amp * (value_noise(seed, octave, u * freq, v * freq) - 0.5);
            amp *= 0.55;
            freq *= 2.1;
        }
        let mut l = illum + 0.18 * detail;
        for &(cx, cy, r, off, square) in &patches {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let inside = if square {
                dx.abs() < r && dy.abs() < r * 0.6
            } else {
                dx * dx + dy * dy < r * r
            };
            if inside {
                l += off;
            }
        }
        l
    });
    let (lo, hi) = log_l
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    for v in &mut log_l.data {
        *v = ((*v - lo) / span * stops).exp2();
    }
    log_l
}

/// Value noise summed over lattice spacings of 64 down to 2 pixels with
/// amplitude proportional to spacing, rescaled to span `[0, 1]`.
pub fn texture_patch(width: usize, height: usize, seed: u64) -> Plane<f64> {
    let mut p = Plane::from_fn(width, height, |x, y| {
        (0..6u32)
            .map(|o| {
                let cell = (64 >> o) as f64;
                cell * value_noise(seed, 100 + o as u64, x as f64 / cell, y as f64 / cell)
            })
            .sum::<f64>()
    });
    let (lo, hi) = p
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    for v in &mut p.data {
        *v = (*v - lo) / span;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::protocol_default()
    }

    #[test]
    fn uniform_scene_normalises_to_protocol_level() {
        let spec = SceneSpec::synthetic(SceneSource::Step { low: 3.0, high: 3.0 }, 8, 8);
        let map = load_and_normalize(&spec, &cfg()).unwrap();
        assert!(map.plane().data.iter().all(|&v| (v - 50.0).abs() < 1e-12));
    }

    #[test]
    fn all_zero_scene_cannot_be_normalised() {
        let spec = SceneSpec::synthetic(SceneSource::Step { low: 0.0, high: 0.0 }, 8, 8);
        assert!(matches!(load_and_normalize(&spec, &cfg()), Err(Error::Input(_))));
    }

    #[test]
    fn exposure_scale_applies_after_normalisation() {
        let mut spec = SceneSpec::synthetic(SceneSource::Texture { seed: 3, stops: 4.0 }, 32, 32);
        spec.exposure_scale = 2.0;
        let map = load_and_normalize(&spec, &cfg()).unwrap();
        assert!((map.plane().mean() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn normalisation_is_idempotent() {
        let spec = SceneSpec::synthetic(SceneSource::Texture { seed: 9, stops: 10.0 }, 40, 24);
        let once = load_and_normalize(&spec, &cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("once.pfm");
        io::write_pfm(&path, once.plane()).unwrap();
        let twice = load_and_normalize(&SceneSpec::pfm(&path), &cfg()).unwrap();
        for (a, b) in once.plane().data.iter().zip(&twice.plane().data) {
            // PFM stores f32.
            assert!((a - b).abs() <= 1e-5 * a.max(1.0));
        }
    }

    #[test]
    fn texture_spans_requested_range() {
        let t = texture(64, 64, 1, 12.0);
        let (lo, hi) = t
            .data
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((hi / lo - 4096.0).abs() < 1e-6 * 4096.0);
        assert_eq!(t, texture(64, 64, 1, 12.0));
        assert_ne!(t, texture(64, 64, 2, 12.0));
    }

    #[test]
    fn patch_is_full_contrast() {
        let t = texture_patch(64, 48, 5);
        let lo = t.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.data.iter().copied().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_ne!(t, texture_patch(64, 48, 6));
    }

    #[test]
    fn sinusoid_outside_first_zero_is_rejected() {
        let mut spec = SceneSpec::synthetic(SceneSource::Sinusoid { f0: 2.5, l0: 10.0 }, 8, 1);
        spec.mean_level_frac = None;
        assert!(load_and_normalize(&spec, &cfg()).is_err());
    }

    #[test]
    fn pixelate_identity_and_area_scaling() {
        let m = RadianceMap::new(texture(16, 8, 4, 3.0)).unwrap();
        assert_eq!(pixelate(&m, 1).unwrap(), m);
        let u = RadianceMap::uniform(16, 8, 2.5).unwrap();
        let p = pixelate(&u, 4).unwrap();
        assert_eq!((p.width(), p.height()), (4, 2));
        assert!(p.plane().data.iter().all(|&v| (v - 40.0).abs() < 1e-12));
        assert!(matches!(pixelate(&u, 3), Err(Error::Shape(_))));
    }
}
