//! Physical sensor model: photon arrival, read noise, amplification and ADC,
//! plus the inverse mapping from digital numbers back to photo-electrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::GainMap;
use crate::grid::Plane;
use crate::readout::{BinMap, BinningMode};
use crate::rng;

/// Physical description of a sensor. Noise terms are in electrons; `sigma_post`
/// is referred to the amplifier output in amplified-electron units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Unit pixel pitch in micrometres, before binning.
    pub pixel_pitch: f64,
    pub well_capacity: f64,
    pub sigma_pre: f64,
    pub sigma_post: f64,
    pub bit_depth: u32,
    /// Black level as a fraction of digital full scale.
    pub black_level_frac: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    #[serde(default = "unit_qe")]
    pub quantum_efficiency: f64,
}

fn unit_qe() -> f64 {
    1.0
}

impl SensorConfig {
    /// The simulated camera used by the evaluation protocol: 0.5 um pitch,
    /// 1000 e- well, 0.33 / 3.31 e- read noise, 12-bit readout, 5 % black level.
    pub fn protocol_default() -> Self {
        Self {
            pixel_pitch: 0.5,
            well_capacity: 1000.0,
            sigma_pre: 0.33,
            sigma_post: 3.31,
            bit_depth: 12,
            black_level_frac: 0.05,
            gain_min: 1.0,
            gain_max: 32.0,
            quantum_efficiency: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return bad("pixel_pitch must be positive");
        }
        if !(self.well_capacity > 0.0 && self.well_capacity.is_finite()) {
            return bad("well_capacity must be positive");
        }
        if !(self.sigma_pre >= 0.0 && self.sigma_post >= 0.0) {
            return bad("read noise must be nonnegative");
        }
        if !(8..=16).contains(&self.bit_depth) {
            return bad("bit_depth must lie in [8, 16]");
        }
        if !(0.0..1.0).contains(&self.black_level_frac) {
            return bad("black_level_frac must lie in [0, 1)");
        }
        if !(self.gain_min >= 1.0 && self.gain_min <= self.gain_max && self.gain_max.is_finite()) {
            return bad("gains must satisfy 1 <= gain_min <= gain_max");
        }
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return bad("quantum_efficiency must lie in (0, 1]");
        }
        Ok(())
    }
}

/// How photon arrivals are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotNoise {
    #[default]
    Poisson,
    /// Use the expected count itself (noise-free reference renders).
    Expected,
}

/// A validated sensor with its derived ADC constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    config: SensorConfig,
    shot_noise: ShotNoise,
    d_max: u16,
    black_level: u16,
    /// Digital numbers per amplified electron.
    scale: f64,
}

impl Sensor {
    pub fn new(config: SensorConfig) -> Result<Self> {
        config.validate()?;
        let d_max = ((1u32 << config.bit_depth) - 1) as u16;
        let black_level = (config.black_level_frac * d_max as f64).round() as u16;
        let scale = (d_max - black_level) as f64 / config.well_capacity;
        Ok(Self {
            config,
            shot_noise: ShotNoise::Poisson,
            d_max,
            black_level,
            scale,
        })
    }

    /// Same sensor with read noise zeroed and photon counts fixed at their mean.
    pub fn noiseless(config: SensorConfig) -> Result<Self> {
        let mut s = Self::new(SensorConfig {
            sigma_pre: 0.0,
            sigma_post: 0.0,
            ..config
        })?;
        s.shot_noise = ShotNoise::Expected;
        Ok(s)
    }

    pub fn with_shot_noise(mut self, shot_noise: ShotNoise) -> Self {
        self.shot_noise = shot_noise;
        self
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn shot_noise(&self) -> ShotNoise {
        self.shot_noise
    }

    pub fn d_max(&self) -> u16 {
        self.d_max
    }

    pub fn black_level(&self) -> u16 {
        self.black_level
    }

    /// Slope of the ADC in digital numbers per amplified electron.
    pub fn digits_per_electron(&self) -> f64 {
        self.scale
    }

    pub fn check_gain(&self, g: f64) -> Result<()> {
        let c = &self.config;
        // Small slack so gains that went through JSON or ladder arithmetic still pass.
        let tol = 1e-9 * c.gain_max;
        if !(g >= c.gain_min - tol && g <= c.gain_max + tol) {
            return Err(Error::Config(format!(
                "gain {g} outside [{}, {}]",
                c.gain_min, c.gain_max
            )));
        }
        Ok(())
    }

    /// ADC: amplified-electron value to a digital number including the black
    /// level. Values below `-black_level` clip at 0, full well clips at `d_max`.
    #[inline]
    pub fn quantize(&self, v: f64) -> u16 {
        let code = (v * self.scale).round_ties_even() + self.black_level as f64;
        code.clamp(0.0, self.d_max as f64) as u16
    }

    /// Inverse ADC: digital number (with black level) to amplified electrons.
    #[inline]
    pub fn dequantize(&self, digit: u16) -> f64 {
        (digit as f64 - self.black_level as f64) / self.scale
    }

    /// Charge collected by one pixel, referred to the amplifier input:
    /// photo-electrons plus pre-amplifier read noise.
    #[inline]
    pub(crate) fn collect<R: Rng + ?Sized>(&self, l_star: f64, rng: &mut R) -> f64 {
        let mean = l_star * self.config.quantum_efficiency;
        let l = match self.shot_noise {
            ShotNoise::Poisson => rng::poisson(rng, mean),
            ShotNoise::Expected => mean,
        };
        l + rng::normal(rng, self.config.sigma_pre)
    }

    /// Adds post-amplifier noise to an amplified value and digitises it.
    #[inline]
    pub(crate) fn convert<R: Rng + ?Sized>(&self, amplified: f64, rng: &mut R) -> u16 {
        self.quantize(amplified + rng::normal(rng, self.config.sigma_post))
    }
}

/// Expected photo-electrons per unit pixel per exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceMap(Plane<f64>);

impl RadianceMap {
    pub fn new(plane: Plane<f64>) -> Result<Self> {
        if plane.width == 0 || plane.height == 0 {
            return Err(Error::Shape("radiance map has zero extent".into()));
        }
        if let Some(v) = plane.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Input(format!(
                "radiance values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self(plane))
    }

    pub fn uniform(width: usize, height: usize, level: f64) -> Result<Self> {
        Self::new(Plane::filled(width, height, level))
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn plane(&self) -> &Plane<f64> {
        &self.0
    }

    pub fn into_plane(self) -> Plane<f64> {
        self.0
    }
}

/// A digitised frame together with the readout plan needed to invert it.
///
/// Analog-binned superpixels are stored replicated over their footprint;
/// digitally binned footprints keep every native readout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCapture {
    pub digits: Plane<u16>,
    pub saturation: Plane<bool>,
    pub gain_map: GainMap,
    pub bin_map: BinMap,
    pub bit_depth: u32,
    pub black_level: u16,
    pub seed: Option<u64>,
}

impl RawCapture {
    pub fn width(&self) -> usize {
        self.digits.width
    }

    pub fn height(&self) -> usize {
        self.digits.height
    }

    pub fn d_max(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    /// Builds a capture from digits, deriving the saturation mask.
    pub fn from_digits(
        digits: Plane<u16>,
        gain_map: GainMap,
        bin_map: BinMap,
        sensor: &Sensor,
        seed: Option<u64>,
    ) -> Self {
        let d_max = sensor.d_max();
        let saturation = digits.map(|&d| d == d_max);
        Self {
            digits,
            saturation,
            gain_map,
            bin_map,
            bit_depth: sensor.config().bit_depth,
            black_level: sensor.black_level(),
            seed,
        }
    }

    pub fn saturated_fraction(&self) -> f64 {
        let n = self.saturation.data.iter().filter(|&&s| s).count();
        n as f64 / self.saturation.data.len() as f64
    }
}

/// Per-pixel photo-electron estimate; `valid` is false where the readout saturated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonEstimate {
    pub data: Plane<f64>,
    pub valid: Plane<bool>,
}

/// Draws one digital number for a pixel with expected count `l_star` read at gain `g`.
pub fn simulate_pixel<R: Rng + ?Sized>(l_star: f64, g: f64, sensor: &Sensor, rng: &mut R) -> Result<u16> {
    if !(l_star >= 0.0 && l_star.is_finite()) {
        return Err(Error::Input(format!("expected count {l_star} is invalid")));
    }
    sensor.check_gain(g)?;
    let charge = sensor.collect(l_star, rng);
    Ok(sensor.convert(g * charge, rng))
}

/// Simulates a full frame. ROIs of `bin_map` are read in parallel, each from
/// its own random stream `(seed, roi index)`.
pub fn simulate_capture(
    scene: &RadianceMap,
    gain_map: &GainMap,
    bin_map: &BinMap,
    sensor: &Sensor,
    seed: u64,
) -> Result<RawCapture> {
    crate::readout::read_frame(scene, gain_map, bin_map, sensor, seed)
}

/// Inverts the ADC and the gain: `l = Phi^-1(i - i0) / g`, then averages digital
/// bin footprints.
pub fn estimate_photons(raw: &RawCapture, sensor: &Sensor) -> PhotonEstimate {
    let (w, h) = (raw.width(), raw.height());
    let mut data = Plane::filled(w, h, 0.0);
    let mut valid = Plane::filled(w, h, true);
    for y in 0..h {
        for x in 0..w {
            let g = raw.gain_map.gain_at(x, y);
            data.set(x, y, sensor.dequantize(*raw.digits.get(x, y)) / g);
            valid.set(x, y, !*raw.saturation.get(x, y));
        }
    }
    if raw.bin_map.mode == BinningMode::Digital {
        let grid = raw.bin_map.grid();
        for roi in 0..grid.len() {
            let k = raw.bin_map.factor(roi);
            if k == 1 {
                continue;
            }
            let (x0, y0) = grid.origin(roi);
            let (rw, rh) = grid.extent(roi);
            for by in (0..rh).step_by(k) {
                for bx in (0..rw).step_by(k) {
                    let xs = x0 + bx..x0 + (bx + k).min(rw);
                    let ys = y0 + by..y0 + (by + k).min(rh);
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    let mut ok = true;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            sum += data.get(x, y);
                            ok &= *valid.get(x, y);
                            n += 1;
                        }
                    }
                    let mean = sum / n as f64;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            data.set(x, y, mean);
                            valid.set(x, y, ok);
                        }
                    }
                }
            }
        }
    }
    PhotonEstimate { data, valid }
}
