//! Read-noise calibration from dark frames captured across a gain sweep.
//!
//! Dark variance follows `Var(g) = sigma_pre^2 g^2 + sigma_post^2`; the two
//! coefficients are recovered by nonnegative least squares.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::GainMap;
use crate::readout::BinMap;
use crate::rng;
use crate::sensor::{simulate_capture, RadianceMap, RawCapture, Sensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseUnit {
    Electrons,
    Digits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub sigma_pre: f64,
    pub sigma_post: f64,
    pub unit: NoiseUnit,
    /// RMS residual of the variance fit.
    pub fit_residual: f64,
    /// `(gain, measured variance)` pairs used in the fit.
    pub gain_samples: Vec<(f64, f64)>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl NoiseProfile {
    /// Converts a digit-unit profile to electrons given the ADC slope in digits
    /// per amplified electron.
    pub fn to_electrons(&self, digits_per_electron: f64) -> Self {
        if self.unit == NoiseUnit::Electrons {
            return self.clone();
        }
        let s = digits_per_electron;
        Self {
            sigma_pre: self.sigma_pre / s,
            sigma_post: self.sigma_post / s,
            unit: NoiseUnit::Electrons,
            fit_residual: self.fit_residual / (s * s),
            gain_samples: self.gain_samples.iter().map(|&(g, v)| (g, v / (s * s))).collect(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Temporal variance per pixel, averaged over the frame, in digits^2.
/// Per-pixel offsets (black level, fixed pattern) cancel.
pub fn dark_variance(frames: &[RawCapture]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Input("dark variance needs at least two frames".into()));
    }
    let first = &frames[0];
    for f in &frames[1..] {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(Error::Shape("dark frames differ in size".into()));
        }
        if f.gain_map != first.gain_map {
            return Err(Error::Input("dark frames were read at different gains".into()));
        }
    }
    let n = frames.len() as f64;
    let pixels = first.digits.data.len();
    // Per-pixel terms in parallel, summed in index order so the result
    // does not depend on the thread count.
    let per_pixel: Vec<f64> = (0..pixels)
        .into_par_iter()
        .map(|i| {
            let mean = frames.iter().map(|f| f.digits.data[i] as f64).sum::<f64>() / n;
            frames
                .iter()
                .map(|f| (f.digits.data[i] as f64 - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        })
        .collect();
    let total: f64 = per_pixel.iter().sum();
    Ok(total / pixels as f64)
}

/// Fits `Var(g) = a g^2 + b` with `a, b >= 0` and returns
/// `sigma_pre = sqrt(a)`, `sigma_post = sqrt(b)` in the samples' unit.
pub fn fit_read_noise(samples: &[(f64, f64)], unit: NoiseUnit) -> Result<NoiseProfile> {
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Numerical(
            "all gains are equal; the fit is rank deficient".into(),
        ));
    }
    if distinct.len() < 3 {
        return Err(Error::Input("calibration needs at least three distinct gains".into()));
    }
    if samples.iter().any(|&(g, v)| !(g.is_finite() && v.is_finite())) {
        return Err(Error::Input("non-finite calibration sample".into()));
    }

    let xs: Vec<f64> = samples.iter().map(|s| s.0 * s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let n = xs.len() as f64;
    let sse = |a: f64, b: f64| -> f64 { xs.iter().zip(&ys).map(|(x, y)| (a * x + b - y).powi(2)).sum() };

    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    let a_ls = (n * sxy - sx * sy) / det;
    let b_ls = (sy - a_ls * sx) / n;

    let mut warnings = Vec::new();
    let (a, b) = if a_ls >= 0.0 && b_ls >= 0.0 {
        (a_ls, b_ls)
    } else {
        // Active set: with two unknowns the constrained optimum lies on one of
        // the faces a = 0, b = 0, or at the origin.
        let mut candidates = vec![(0.0, 0.0)];
        let b_only = sy / n;
        if b_only >= 0.0 {
            candidates.push((0.0, b_only));
        }
        let a_only = sxy / sxx;
        if a_only >= 0.0 {
            candidates.push((a_only, 0.0));
        }
        let best = candidates
            .into_iter()
            .min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1)))
            .unwrap_or((0.0, 0.0));
        if best.0 == 0.0 {
            warnings.push(format!("pre-amplifier term clamped to 0 (unconstrained {a_ls:.4e})"));
        }
        if best.1 == 0.0 {
            warnings.push(format!("post-amplifier term clamped to 0 (unconstrained {b_ls:.4e})"));
        }
        best
    };

    Ok(NoiseProfile {
        sigma_pre: a.sqrt(),
        sigma_post: b.sqrt(),
        unit,
        fit_residual: (sse(a, b) / n).sqrt(),
        gain_samples: samples.to_vec(),
        warnings,
    })
}

/// Sweeps with more than this fraction of pixels at either ADC rail are
/// excluded: clipping shrinks the measured variance.
pub const MAX_CLIPPED_FRACTION: f64 = 1e-4;

fn clipped_fraction(frames: &[RawCapture]) -> f64 {
    let (clipped, total) = frames.iter().fold((0usize, 0usize), |(c, t), f| {
        let d_max = f.d_max();
        let n = f.digits.data.iter().filter(|&&d| d == 0 || d == d_max).count();
        (c + n, t + f.digits.data.len())
    });
    clipped as f64 / total.max(1) as f64
}

/// Dark variance per gain, then the quadratic fit. With `digits_per_electron`
/// the result is reported in electrons, otherwise in digits. Gains whose frames
/// clip at either rail are dropped with a warning.
pub fn calibrate(sweeps: &[(f64, Vec<RawCapture>)], digits_per_electron: Option<f64>) -> Result<NoiseProfile> {
    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    for (g, frames) in sweeps {
        let clipped = clipped_fraction(frames);
        if clipped > MAX_CLIPPED_FRACTION {
            warnings.push(format!(
                "gain {g}: {:.3}% of samples clipped; excluded",
                100.0 * clipped
            ));
            continue;
        }
        samples.push((*g, dark_variance(frames)?));
    }
    let mut profile = fit_read_noise(&samples, NoiseUnit::Digits)?;
    warnings.append(&mut profile.warnings);
    profile.warnings = warnings;
    Ok(match digits_per_electron {
        Some(s) => profile.to_electrons(s),
        None => profile,
    })
}

/// Simulates `frames` capped-lens frames of `width x height` at each gain.
pub fn simulate_dark_sweep(
    sensor: &Sensor,
    gains: &[f64],
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<RawCapture>)>> {
    let dark = RadianceMap::uniform(width, height, 0.0)?;
    let bins = BinMap::unbinned(width, height, width.max(height))?;
    gains
        .iter()
        .enumerate()
        .map(|(gi, &g)| {
            let caps = (0..frames)
                .map(|fi| {
                    let s = rng::derive_seed(seed, "dark", (gi * frames + fi) as u64);
                    simulate_capture(&dark, &GainMap::constant(g), &bins, sensor, s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((g, caps))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::SensorConfig;

    #[test]
    fn exact_quadratic_is_recovered() {
        let samples: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&g| (g, 0.33f64.powi(2) * g * g + 3.31f64.powi(2)))
            .collect();
        let p = fit_read_noise(&samples, NoiseUnit::Electrons).unwrap();
        assert!((p.sigma_pre - 0.33).abs() < 1e-6);
        assert!((p.sigma_post - 3.31).abs() < 1e-6);
        assert!(p.fit_residual < 1e-9);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn negative_intercept_is_clamped_with_warning() {
        // Exact quadratic with a negative intercept.
        let samples: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&g| (g, g * g - 2.0)).collect();
        let p = fit_read_noise(&samples, NoiseUnit::Electrons).unwrap();
        assert_eq!(p.sigma_post, 0.0);
        assert!(p.sigma_pre > 0.0);
        assert_eq!(p.warnings.len(), 1);
        // Clamped optimum of the b = 0 face: a = sum(xy) / sum(x^2).
        let (sxy, sxx) = samples
            .iter()
            .fold((0.0, 0.0), |(a, b), &(g, v)| (a + g * g * v, b + g.powi(4)));
        assert!((p.sigma_pre - (sxy / sxx).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_designs_are_rejected() {
        let same = [(2.0, 1.0), (2.0, 1.1), (2.0, 0.9)];
        assert!(matches!(
            fit_read_noise(&same, NoiseUnit::Digits),
            Err(Error::Numerical(_))
        ));
        let two = [(1.0, 1.0), (2.0, 2.0), (2.0, 2.1)];
        assert!(matches!(fit_read_noise(&two, NoiseUnit::Digits), Err(Error::Input(_))));
    }

    #[test]
    fn identical_frames_have_zero_variance() {
        let sensor = Sensor::new(SensorConfig::protocol_default()).unwrap();
        let sweep = simulate_dark_sweep(&sensor, &[1.0], 1, 8, 8, 0).unwrap();
        let f = sweep[0].1[0].clone();
        assert_eq!(dark_variance(&[f.clone(), f.clone()]).unwrap(), 0.0);
        assert!(matches!(dark_variance(&[f]), Err(Error::Input(_))));
    }

    #[test]
    fn variance_ignores_black_level() {
        let sensor = Sensor::new(SensorConfig::protocol_default()).unwrap();
        let frames = simulate_dark_sweep(&sensor, &[1.0], 20, 16, 16, 7).unwrap().remove(0).1;
        let shifted: Vec<RawCapture> = frames
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.digits = f.digits.map(|&d| d + 300);
                f.black_level += 300;
                f
            })
            .collect();
        let (a, b) = (dark_variance(&frames).unwrap(), dark_variance(&shifted).unwrap());
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn clipped_gains_are_excluded() {
        let sensor = Sensor::new(SensorConfig {
            sigma_pre: 1.17,
            sigma_post: 7.39,
            ..SensorConfig::protocol_default()
        })
        .unwrap();
        let sweep = simulate_dark_sweep(&sensor, &[1.0, 2.0, 4.0, 32.0], 4, 32, 32, 3).unwrap();
        let p = calibrate(&sweep, None).unwrap();
        assert_eq!(p.gain_samples.len(), 3);
        assert!(p.warnings[0].starts_with("gain 32"));
    }

    #[test]
    fn digit_and_electron_fits_agree() {
        let sensor = Sensor::new(SensorConfig::protocol_default()).unwrap();
        let sweep = simulate_dark_sweep(&sensor, &[1.0, 2.0, 4.0, 8.0], 10, 16, 16, 1).unwrap();
        let s = sensor.digits_per_electron();
        let in_digits = calibrate(&sweep, None).unwrap().to_electrons(s);
        let samples: Vec<(f64, f64)> = sweep
            .iter()
            .map(|(g, f)| (*g, dark_variance(f).unwrap() / (s * s)))
            .collect();
        let in_electrons = fit_read_noise(&samples, NoiseUnit::Electrons).unwrap();
        assert!((in_digits.sigma_pre - in_electrons.sigma_pre).abs() < 1e-9);
        assert!((in_digits.sigma_post - in_electrons.sigma_post).abs() < 1e-9);
    }
}
