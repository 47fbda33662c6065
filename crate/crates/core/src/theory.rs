//! Resolution-versus-noise analysis of pixel pitch.
//!
//! A sinusoid of spatial frequency `f0` and peak density `l0` (e-/um^2), seen
//! through square pixels of pitch `p` (um), keeps a peak-to-trough contrast of
//! `l0 * p * sin(pi p f0) / (pi f0)` electrons, while the pixel noise pooled over
//! one period has variance `sigma_pre^2 + sigma_post^2 / g^2 + l0 p^2 / 2`.
//! The cutoff frequency is where their ratio falls to `snr_t`; the best pitch for
//! a light level maximises that cutoff.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::{BinningMode, BIN_SIDES};
use crate::sensor::SensorConfig;

/// Which contrast expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastForm {
    /// `l0 p sin(pi p f0) / (pi f0)`, from integrating the sinusoid over the pixel box.
    #[default]
    Derived,
    /// `l0 p^2 sin(pi p f0) / (pi f0)`, an alternative normalisation.
    PitchSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub snr_t: f64,
    /// Ascending pitches in micrometres.
    pub pitch_candidates: Vec<f64>,
    /// Ascending light densities in e-/um^2.
    pub light_grid: Vec<f64>,
    #[serde(default)]
    pub contrast_form: ContrastForm,
}

fn strictly_ascending_positive(v: &[f64]) -> bool {
    !v.is_empty() && v[0] > 0.0 && v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|x| x.is_finite())
}

impl TheoryParams {
    pub fn new(snr_t: f64, pitch_candidates: Vec<f64>, light_grid: Vec<f64>) -> Result<Self> {
        let p = Self {
            snr_t,
            pitch_candidates,
            light_grid,
            contrast_form: ContrastForm::Derived,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_contrast_form(mut self, form: ContrastForm) -> Self {
        self.contrast_form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snr_t > 0.0 && self.snr_t.is_finite()) {
            return Err(Error::Config("snr_t must be positive".into()));
        }
        if !strictly_ascending_positive(&self.pitch_candidates) {
            return Err(Error::Config(
                "pitch candidates must be positive and strictly ascending".into(),
            ));
        }
        if !strictly_ascending_positive(&self.light_grid) {
            return Err(Error::Config(
                "light grid must be positive and strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Peak-to-trough contrast in electrons of a box-filtered sinusoid.
/// `f0 = 0` gives the continuous limit.
pub fn contrast(f0: f64, l0: f64, p: f64, form: ContrastForm) -> Result<f64> {
    if !(l0 > 0.0 && p > 0.0) {
        return Err(Error::Input("light level and pitch must be positive".into()));
    }
    if !(f0 >= 0.0) || f0 > 1.0 / p * (1.0 + 1e-12) {
        return Err(Error::Input(format!("frequency {f0} outside [0, 1/p = {}]", 1.0 / p)));
    }
    Ok(contrast_unchecked(f0, l0, p, form))
}

#[inline]
fn contrast_unchecked(f0: f64, l0: f64, p: f64, form: ContrastForm) -> f64 {
    let base = l0 * p * p * sinc(std::f64::consts::PI * p * f0).max(0.0);
    match form {
        ContrastForm::Derived => base,
        ContrastForm::PitchSquared => base * p,
    }
}

/// Standard deviation of the pooled pixel noise; independent of frequency.
pub fn noise_sigma(l0: f64, p: f64, g: f64, config: &SensorConfig) -> f64 {
    (config.sigma_pre.powi(2) + (config.sigma_post / g).powi(2) + l0 * p * p / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Resolved(f64),
    /// Even the lowest frequency misses the SNR threshold.
    Unresolvable,
}

impl Cutoff {
    pub fn frequency(self) -> Option<f64> {
        match self {
            Cutoff::Resolved(f) => Some(f),
            Cutoff::Unresolvable => None,
        }
    }
}

/// Frequency at which contrast / noise equals `snr_t`, by bisection on
/// `(0, 1/p)` to a relative tolerance of 1e-9. The ratio is strictly
/// decreasing there, so the root is unique.
pub fn cutoff_frequency(l0: f64, p: f64, g: f64, snr_t: f64, config: &SensorConfig, form: ContrastForm) -> Cutoff {
    let sigma = noise_sigma(l0, p, g, config);
    let excess = |f: f64| contrast_unchecked(f, l0, p, form) / sigma - snr_t;
    if !(excess(0.0) >= 0.0) {
        return Cutoff::Unresolvable;
    }
    let (mut lo, mut hi) = (0.0, 1.0 / p);
    for _ in 0..200 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if excess(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Cutoff::Resolved(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalPitch {
    Pitch {
        pitch: f64,
        f_cutoff: f64,
    },
    /// No candidate resolves anything: bin as much as possible.
    MaxBinning,
}

/// Best pitch among the candidates; ties go to the smaller pitch and
/// unresolvable candidates are skipped. Also returns every candidate's cutoff.
pub fn optimal_pitch(l0: f64, g: f64, params: &TheoryParams, config: &SensorConfig) -> (OptimalPitch, Vec<Cutoff>) {
    let cutoffs: Vec<Cutoff> = params
        .pitch_candidates
        .iter()
        .map(|&p| cutoff_frequency(l0, p, g, params.snr_t, config, params.contrast_form))
        .collect();
    let mut best = OptimalPitch::MaxBinning;
    let mut best_f = f64::NEG_INFINITY;
    for (&p, c) in params.pitch_candidates.iter().zip(&cutoffs) {
        if let Cutoff::Resolved(f) = *c {
            if f > best_f {
                best_f = f;
                best = OptimalPitch::Pitch { pitch: p, f_cutoff: f };
            }
        }
    }
    (best, cutoffs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchCurveRow {
    pub l0: f64,
    pub optimal: OptimalPitch,
    pub cutoffs: Vec<Cutoff>,
}

/// Optimal pitch and the full cutoff table over the light grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchCurve {
    pub pitches: Vec<f64>,
    pub rows: Vec<PitchCurveRow>,
}

pub fn pitch_curve(g: f64, params: &TheoryParams, config: &SensorConfig) -> Result<PitchCurve> {
    params.validate()?;
    let rows = params
        .light_grid
        .par_iter()
        .map(|&l0| {
            let (optimal, cutoffs) = optimal_pitch(l0, g, params, config);
            PitchCurveRow { l0, optimal, cutoffs }
        })
        .collect();
    Ok(PitchCurve {
        pitches: params.pitch_candidates.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    /// Light density in e-/um^2 from which this entry applies.
    pub l0: f64,
    /// Bin side.
    pub k: usize,
    /// Bin factor `k^2`.
    pub n: usize,
}

/// Step function from light density to bin size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLut {
    pub unit_pitch: f64,
    pub snr_t: f64,
    pub gain: f64,
    pub entries: Vec<LutEntry>,
}

impl BinLut {
    /// Bin side for light density `l0`: the entry of the largest grid level not
    /// above `l0` (the first entry below the grid).
    pub fn lookup(&self, l0: f64) -> usize {
        let idx = self.entries.partition_point(|e| e.l0 <= l0);
        self.entries[idx.saturating_sub(1)].k
    }
}

/// Tabulates the optimal bin side over `params.light_grid`. Candidates must be
/// `unit_pitch * k` for bin sides `k` in 1, 2, 4, 8.
pub fn light_to_bin_lut(params: &TheoryParams, config: &SensorConfig, unit_pitch: f64, g: f64) -> Result<BinLut> {
    params.validate()?;
    for &p in &params.pitch_candidates {
        let k = (p / unit_pitch).round() as usize;
        if !BIN_SIDES.contains(&k) || (p / unit_pitch - k as f64).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "pitch {p} is not a supported multiple of unit pitch {unit_pitch}"
            )));
        }
    }
    let curve = pitch_curve(g, params, config)?;
    let k_max = params
        .pitch_candidates
        .last()
        .map(|p| (p / unit_pitch).round() as usize)
        .unwrap_or(1);
    let entries = curve
        .rows
        .iter()
        .map(|row| {
            let k = match row.optimal {
                OptimalPitch::Pitch { pitch, .. } => (pitch / unit_pitch).round() as usize,
                OptimalPitch::MaxBinning => k_max,
            };
            LutEntry {
                l0: row.l0,
                k,
                n: k * k,
            }
        })
        .collect();
    Ok(BinLut {
        unit_pitch,
        snr_t: params.snr_t,
        gain: g,
        entries,
    })
}

/// Light density (e-/um^2) of a full-contrast sinusoid whose pixel mean is
/// `mean_electrons` at pitch `pitch`: the mean is `l0 p^2 / 2`.
pub fn density_from_pixel_mean(mean_electrons: f64, pitch: f64) -> f64 {
    2.0 * mean_electrons.max(0.0) / (pitch * pitch)
}

/// Bin side for a region with mean pixel level `mean_level` (e-) read at
/// nominal gain `g`. Sides are limited to those dividing `roi_size`; additive
/// binning also needs the amplifier gain `g / N` to stay at or above gain_min.
pub fn bin_for_level(
    mean_level: f64,
    g: f64,
    roi_size: usize,
    snr_t: f64,
    mode: BinningMode,
    form: ContrastForm,
    config: &SensorConfig,
) -> Result<usize> {
    let sides: Vec<usize> = BIN_SIDES
        .iter()
        .copied()
        .filter(|&k| roi_size.is_multiple_of(k))
        .collect();
    let pitches = sides.iter().map(|&k| k as f64 * config.pixel_pitch).collect();
    let l0 = density_from_pixel_mean(mean_level, config.pixel_pitch).max(f64::MIN_POSITIVE);
    let params = TheoryParams::new(snr_t, pitches, vec![l0])?.with_contrast_form(form);
    let mut k = match optimal_pitch(l0, g, &params, config).0 {
        OptimalPitch::Pitch { pitch, .. } => (pitch / config.pixel_pitch).round() as usize,
        OptimalPitch::MaxBinning => *sides.last().unwrap_or(&1),
    };
    if mode == BinningMode::Additive {
        while k > 1 && g / ((k * k) as f64) < config.gain_min * (1.0 - 1e-9) {
            k /= 2;
        }
    }
    Ok(k)
}

/// Log-spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::protocol_default()
    }

    #[test]
    fn contrast_limits_and_values() {
        let d = ContrastForm::Derived;
        assert!((contrast(0.0, 1000.0, 1.0, d).unwrap() - 1000.0).abs() < 1e-9);
        assert!((contrast(1e-12, 250.0, 2.0, d).unwrap() - 1000.0).abs() < 1e-6);
        assert!(contrast(1.0, 1000.0, 1.0, d).unwrap().abs() < 1e-9);
        let c = contrast(0.5, 1000.0, 1.0, d).unwrap();
        assert!((c - 636.619_772_367_581_4).abs() < 1e-9, "{c}");
        let m = contrast(0.25, 1000.0, 2.0, ContrastForm::PitchSquared).unwrap();
        assert!((m - 2.0 * contrast(0.25, 1000.0, 2.0, d).unwrap()).abs() < 1e-9);
        assert!(contrast(1.01, 1000.0, 1.0, d).is_err());
    }

    #[test]
    fn noise_sigma_values() {
        let c = cfg();
        assert!((noise_sigma(200.0, 1.0, 1.0, &c) - 111.065f64.sqrt()).abs() < 1e-12);
        assert!((noise_sigma(200.0, 1.0, 1.0, &c) - 10.539).abs() < 5e-4);
        assert!((noise_sigma(0.0, 1.0, 1e12, &c) - 0.33).abs() < 1e-9);
        let d = noise_sigma(50.0, 2.0, 3.0, &c).powi(2) - noise_sigma(50.0, 1.0, 3.0, &c).powi(2);
        assert!((d - 3.0 * 50.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_threshold_gives_vanishing_cutoff() {
        let c = cfg();
        let (l0, p, g) = (400.0, 1.0, 2.0);
        let snr = contrast(0.0, l0, p, ContrastForm::Derived).unwrap() / noise_sigma(l0, p, g, &c);
        match cutoff_frequency(l0, p, g, snr, &c, ContrastForm::Derived) {
            Cutoff::Resolved(f) => assert!(f < 1e-6, "{f}"),
            Cutoff::Unresolvable => panic!("boundary should resolve"),
        }
        assert_eq!(
            cutoff_frequency(l0, p, g, snr * 1.001, &c, ContrastForm::Derived),
            Cutoff::Unresolvable
        );
    }

    #[test]
    fn optimal_pitch_limits() {
        let c = cfg();
        let params = TheoryParams::new(4.0, vec![0.5, 1.0, 2.0, 4.0], vec![1.0]).unwrap();
        let (bright, _) = optimal_pitch(1e7, 1.0, &params, &c);
        assert!(matches!(bright, OptimalPitch::Pitch { pitch, .. } if pitch == 0.5));
        let (dark, _) = optimal_pitch(2.0, 1.0, &params, &c);
        assert!(matches!(dark, OptimalPitch::Pitch { pitch, .. } if pitch == 4.0));
        let (none, cut) = optimal_pitch(1e-4, 1.0, &params, &c);
        assert_eq!(none, OptimalPitch::MaxBinning);
        assert!(cut.iter().all(|c| *c == Cutoff::Unresolvable));
    }

    #[test]
    fn lut_lookup_and_validation() {
        let c = cfg();
        let params = TheoryParams::new(4.0, vec![0.5, 1.0, 2.0, 4.0], log_grid(1.0, 1e5, 30)).unwrap();
        let lut = light_to_bin_lut(&params, &c, 0.5, 1.0).unwrap();
        for e in &lut.entries {
            assert_eq!(lut.lookup(e.l0), e.k);
            assert_eq!(e.n, e.k * e.k);
        }
        assert_eq!(lut.lookup(0.01), lut.entries[0].k);
        assert_eq!(lut.lookup(1e9), lut.entries.last().unwrap().k);

        let bright = TheoryParams::new(4.0, vec![0.5, 1.0, 2.0, 4.0], vec![1e8]).unwrap();
        assert_eq!(light_to_bin_lut(&bright, &c, 0.5, 1.0).unwrap().entries[0].n, 1);

        let odd = TheoryParams::new(4.0, vec![0.5, 1.5], vec![1.0]).unwrap();
        assert!(light_to_bin_lut(&odd, &c, 0.5, 1.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(TheoryParams::new(0.0, vec![1.0], vec![1.0]).is_err());
        assert!(TheoryParams::new(4.0, vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(TheoryParams::new(4.0, vec![1.0], vec![]).is_err());
        assert!(TheoryParams::new(4.0, vec![-1.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn contrast_strictly_decreasing_on_dense_grid() {
        let (l0, p) = (300.0, 1.5);
        let n = 10_000;
        let mut prev = f64::INFINITY;
        for i in 1..n {
            let f = i as f64 / n as f64 / p;
            let c = contrast(f, l0, p, ContrastForm::Derived).unwrap();
            assert!(c < prev);
            prev = c;
        }
    }
}
