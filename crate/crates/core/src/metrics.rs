//! Image quality metrics and the four-way readout comparison protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::{gain_for_level, plan_gain_roi, GainMap};
use crate::grid::{Plane, RoiGrid};
use crate::readout::{capture_spatially_varying, BinMap, BinningMode};
use crate::rng;
use crate::scene::PROTOCOL_MEAN_LEVEL;
use crate::sensor::{estimate_photons, PhotonEstimate, RadianceMap, Sensor};
use crate::theory::{bin_for_level, ContrastForm};

/// `(scale * x)^exponent`, clipped to `[0, 1]`.
pub fn gamma_correct(image: &Plane<f64>, exponent: f64, scale: f64) -> Result<Plane<f64>> {
    if !(exponent >= 0.0 && scale >= 0.0) {
        return Err(Error::Config("gamma exponent and scale must be nonnegative".into()));
    }
    Ok(image.map(|&v| (scale * v.max(0.0)).powf(exponent).clamp(0.0, 1.0)))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &Plane<f64>, k: &[f64; SSIM_WINDOW]) -> Plane<f64> {
    let (w, h) = (src.width, src.height);
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let rows = Plane::from_fn(ow, h, |x, y| {
        k.iter().enumerate().map(|(i, kv)| kv * src.get(x + i, y)).sum()
    });
    Plane::from_fn(ow, oh, |x, y| {
        k.iter().enumerate().map(|(i, kv)| kv * rows.get(x, y + i)).sum()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ssim {
    /// Local SSIM at every position where the window fits.
    pub map: Plane<f64>,
    pub mean: f64,
}

/// SSIM on unit-range images with an 11x11 Gaussian window (sigma 1.5),
/// averaged over window positions that lie fully inside the image.
pub fn ssim(reference: &Plane<f64>, test: &Plane<f64>) -> Result<Ssim> {
    if !reference.same_shape(test) {
        return Err(Error::Shape(format!(
            "SSIM inputs differ: {}x{} vs {}x{}",
            reference.width, reference.height, test.width, test.height
        )));
    }
    if reference.width < SSIM_WINDOW || reference.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let k = gaussian_kernel();
    let prod = |a: &Plane<f64>, b: &Plane<f64>| Plane {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    };
    let mu_x = filter_valid(reference, &k);
    let mu_y = filter_valid(test, &k);
    let xx = filter_valid(&prod(reference, reference), &k);
    let yy = filter_valid(&prod(test, test), &k);
    let xy = filter_valid(&prod(reference, test), &k);
    let data: Vec<f64> = (0..mu_x.data.len())
        .map(|i| {
            let (mx, my) = (mu_x.data[i], mu_y.data[i]);
            let vx = xx.data[i] - mx * mx;
            let vy = yy.data[i] - my * my;
            let cxy = xy.data[i] - mx * my;
            ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
        })
        .collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    Ok(Ssim {
        map: Plane {
            width: mu_x.width,
            height: mu_x.height,
            data,
        },
        mean,
    })
}

/// PSNR in dB for unit-range images; infinite for identical inputs.
pub fn psnr(reference: &Plane<f64>, test: &Plane<f64>) -> Result<f64> {
    if !reference.same_shape(test) {
        return Err(Error::Shape("PSNR inputs differ in size".into()));
    }
    let mse = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ConstGainNoBin,
    VaryGainNoBin,
    ConstGainVaryBin,
    VaryGainVaryBin,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ConstGainNoBin,
        Method::VaryGainNoBin,
        Method::ConstGainVaryBin,
        Method::VaryGainVaryBin,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::ConstGainNoBin => "const_gain_no_bin",
            Method::VaryGainNoBin => "vary_gain_no_bin",
            Method::ConstGainVaryBin => "const_gain_vary_bin",
            Method::VaryGainVaryBin => "vary_gain_vary_bin",
        }
    }

    fn varies_gain(self) -> bool {
        matches!(self, Method::VaryGainNoBin | Method::VaryGainVaryBin)
    }

    fn varies_bin(self) -> bool {
        matches!(self, Method::ConstGainVaryBin | Method::VaryGainVaryBin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub roi_size: usize,
    pub eta: f64,
    pub snr_t: f64,
    pub gamma: f64,
    pub bin_mode: BinningMode,
    pub contrast_form: ContrastForm,
    /// Display normalisation: images are scaled so the ground truth has this
    /// mean on the unit range before gamma.
    pub display_mean: f64,
    /// Disable photon and read noise (reference runs).
    pub noiseless: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            roi_size: 128,
            eta: 2.0,
            snr_t: 4.0,
            gamma: 1.0 / 3.2,
            bin_mode: BinningMode::Digital,
            contrast_form: ContrastForm::Derived,
            display_mean: PROTOCOL_MEAN_LEVEL,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub worst_ssim: f64,
    pub mean_ssim: f64,
    pub worst_psnr: f64,
    /// Binned ROIs compared at their own resolution against a block-averaged
    /// reference.
    pub worst_ssim_native: f64,
    pub mean_ssim_native: f64,
    pub gains: Vec<f64>,
    pub bins: Vec<usize>,
    /// Per-ROI metrics, row-major; `None` where the ROI is smaller than the
    /// SSIM window.
    pub roi_ssim: Vec<Option<f64>>,
    pub roi_psnr: Vec<Option<f64>>,
    pub roi_ssim_native: Vec<Option<f64>>,
    pub saturated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub roi_size: usize,
    pub cols: usize,
    pub rows: usize,
    pub options: EvalOptions,
    pub methods: Vec<MethodResult>,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// One row per (method, ROI).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,roi,gain,k,ssim,psnr,ssim_native\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for m in &self.methods {
            for roi in 0..m.gains.len() {
                out.push_str(&format!(
                    "{},{},{:.6},{},{},{},{}\n",
                    m.method.label(),
                    roi,
                    m.gains[roi],
                    m.bins[roi],
                    f(m.roi_ssim[roi]),
                    f(m.roi_psnr[roi]),
                    f(m.roi_ssim_native[roi]),
                ));
            }
        }
        out
    }
}

/// Per-ROI mean of an estimate.
fn roi_means(estimate: &PhotonEstimate, grid: &RoiGrid) -> Vec<f64> {
    (0..grid.len())
        .map(|roi| {
            let (x0, y0) = grid.origin(roi);
            let (w, h) = grid.extent(roi);
            let mut s = 0.0;
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    s += estimate.data.get(x, y);
                }
            }
            s / (w * h) as f64
        })
        .collect()
}

/// Runs the four readout strategies on one scene with shared noise lineage and
/// scores each ROI against the noise-free scene after display normalisation
/// and gamma.
pub fn evaluate_protocol(
    scene: &RadianceMap,
    sensor: &Sensor,
    options: &EvalOptions,
    methods: &[Method],
    seed: u64,
) -> Result<EvalReport> {
    let (w, h) = (scene.width(), scene.height());
    let cfg = sensor.config();
    let grid = RoiGrid::new(w, h, options.roi_size)?;
    let sensor = if options.noiseless {
        Sensor::noiseless(cfg.clone())?
    } else {
        sensor.clone()
    };

    // Pilot at the lowest gain.
    let pilot_bins = BinMap::unbinned(w, h, options.roi_size)?;
    let pilot_raw = crate::sensor::simulate_capture(
        scene,
        &GainMap::constant(cfg.gain_min),
        &pilot_bins,
        &sensor,
        rng::derive_seed(seed, "pilot", 0),
    )?;
    let pilot = estimate_photons(&pilot_raw, &sensor);
    let global_max = pilot.data.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let const_gain = gain_for_level(global_max, options.eta, cfg);
    let (roi_plan, _) = plan_gain_roi(&pilot, options.roi_size, options.eta, cfg)?;
    let levels = roi_means(&pilot, &grid);

    let gt_mean = scene.plane().mean();
    if !(gt_mean > 0.0) {
        return Err(Error::Input("scene is black; nothing to evaluate".into()));
    }
    let display = options.display_mean / gt_mean;
    let truth = gamma_correct(scene.plane(), options.gamma, display)?;
    let main_seed = rng::derive_seed(seed, "main", 0);

    let results = methods
        .par_iter()
        .map(|&method| -> Result<MethodResult> {
            let gains: Vec<f64> = if method.varies_gain() {
                roi_plan.values.clone()
            } else {
                vec![const_gain; grid.len()]
            };
            let bins: Vec<usize> = if method.varies_bin() {
                levels
                    .iter()
                    .zip(&gains)
                    .map(|(&l, &g)| {
                        bin_for_level(
                            l,
                            g,
                            options.roi_size,
                            options.snr_t,
                            options.bin_mode,
                            options.contrast_form,
                            cfg,
                        )
                    })
                    .collect::<Result<_>>()?
            } else {
                vec![1; grid.len()]
            };
            let mode = options.bin_mode;
            let nominal: Vec<f64> = gains
                .iter()
                .zip(&bins)
                .map(|(&g, &k)| match mode {
                    BinningMode::Additive => {
                        let n = (k * k) as f64;
                        g.clamp(n * cfg.gain_min, n * cfg.gain_max)
                    }
                    _ => g,
                })
                .collect();
            let gain_map = GainMap::per_roi(&grid, options.eta, nominal.clone())?;
            let bin_map = BinMap::new(w, h, options.roi_size, mode, bins.iter().map(|&k| k as u8).collect())?;
            let cap = capture_spatially_varying(scene, &gain_map, &bin_map, &sensor, main_seed)?;
            let shown = gamma_correct(&cap.estimate.data, options.gamma, display)?;

            let mut roi_ssim = Vec::with_capacity(grid.len());
            let mut roi_psnr = Vec::with_capacity(grid.len());
            let mut roi_native = Vec::with_capacity(grid.len());
            for roi in 0..grid.len() {
                let (x0, y0) = grid.origin(roi);
                let (rw, rh) = grid.extent(roi);
                let t = truth.crop(x0, y0, rw, rh);
                let s = shown.crop(x0, y0, rw, rh);
                let fits = rw >= SSIM_WINDOW && rh >= SSIM_WINDOW;
                roi_ssim.push(if fits { Some(ssim(&t, &s)?.mean) } else { None });
                roi_psnr.push(Some(psnr(&t, &s)?));

                let native = &cap.native[roi];
                let k = native.k;
                let (nw, nh) = (native.data.width, native.data.height);
                let reference = Plane::from_fn(nw, nh, |x, y| {
                    let mut sum = 0.0;
                    let mut n = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let (px, py) = (x0 + x * k + dx, y0 + y * k + dy);
                            if px < w && py < h {
                                sum += scene.plane().get(px, py);
                                n += 1.0;
                            }
                        }
                    }
                    sum / n
                });
                let reference = gamma_correct(&reference, options.gamma, display)?;
                let test = gamma_correct(&native.data, options.gamma, display)?;
                roi_native.push(if nw >= SSIM_WINDOW && nh >= SSIM_WINDOW {
                    Some(ssim(&reference, &test)?.mean)
                } else {
                    None
                });
            }
            let stats = |v: &[Option<f64>]| {
                let xs: Vec<f64> = v.iter().flatten().copied().collect();
                if xs.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (
                        xs.iter().copied().fold(f64::INFINITY, f64::min),
                        xs.iter().sum::<f64>() / xs.len() as f64,
                    )
                }
            };
            let (worst_ssim, mean_ssim) = stats(&roi_ssim);
            let (worst_psnr, _) = stats(&roi_psnr);
            let (worst_native, mean_native) = stats(&roi_native);
            Ok(MethodResult {
                method,
                worst_ssim,
                mean_ssim,
                worst_psnr,
                worst_ssim_native: worst_native,
                mean_ssim_native: mean_native,
                gains: nominal,
                bins,
                roi_ssim,
                roi_psnr,
                roi_ssim_native: roi_native,
                saturated_fraction: cap.raw.saturated_fraction(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        seed,
        width: w,
        height: h,
        roi_size: options.roi_size,
        cols: grid.cols,
        rows: grid.rows,
        options: options.clone(),
        methods: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Plane<f64> {
        Plane::from_fn(w, h, |x, y| ((x * 3 + y * 5) % 17) as f64 / 16.0)
    }

    #[test]
    fn gamma_cases() {
        let img = Plane::from_vec(3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(gamma_correct(&img, 1.0, 1.0).unwrap(), img);
        let one = Plane::filled(1, 1, 1.0 / 50.0);
        let out = gamma_correct(&one, 1.0 / 2.2, 50.0).unwrap();
        assert!((out.data[0] - 1.0).abs() < 1e-12);
        assert_eq!(
            gamma_correct(&Plane::filled(1, 1, 0.0), 1.0 / 3.2, 1.0).unwrap().data[0],
            0.0
        );
        assert!(gamma_correct(&img, -1.0, 1.0).is_err());
        assert!(gamma_correct(&img, 1.0, -2.0).is_err());
    }

    #[test]
    fn ssim_identity_and_offset() {
        let a = ramp(32, 24);
        assert!((ssim(&a, &a).unwrap().mean - 1.0).abs() < 1e-12);
        let b = a.map(|v| (v + 0.5).min(1.0));
        assert!(ssim(&a, &b).unwrap().mean < 1.0);
        assert!(matches!(ssim(&a, &ramp(32, 23)), Err(Error::Shape(_))));
        assert!(matches!(ssim(&ramp(10, 10), &ramp(10, 10)), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_of_known_error() {
        let a = Plane::filled(4, 4, 0.5);
        let b = Plane::filled(4, 4, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn method_labels_match_serde() {
        for m in Method::ALL {
            assert_eq!(serde_json::to_value(m).unwrap(), m.label());
        }
    }
}
