//! Command-line front end. Data goes to files or stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 2 usage, 3 data or shape error, 4 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibration::{calibrate, simulate_dark_sweep};
use crate::error::{Error, Result};
use crate::gain::{capture_per_pixel, plan_gain_roi, GainMap, GainMode};
use crate::grid::{Plane, RoiGrid};
use crate::io;
use crate::metrics::{evaluate_protocol, EvalOptions, Method};
use crate::readout::{capture_spatially_varying, compose_from_gain_stack, simulate_gain_stack, BinMap, BinningMode};
use crate::scene::{load_and_normalize, SceneSpec, PROTOCOL_MEAN_LEVEL};
use crate::sensor::{estimate_photons, RadianceMap, Sensor, SensorConfig};
use crate::theory::{
    bin_for_level, light_to_bin_lut, log_grid, pitch_curve, ContrastForm, Cutoff, OptimalPitch, TheoryParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "svreadout",
    version,
    about = "Spatially-varying gain and binning readout simulator"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SensorArg {
    /// Sensor configuration JSON; defaults to the built-in reference sensor.
    #[arg(long)]
    sensor: Option<PathBuf>,
}

impl SensorArg {
    fn load(&self) -> Result<Sensor> {
        let cfg = match &self.sensor {
            Some(p) => io::read_json::<SensorConfig>(p)?,
            None => SensorConfig::protocol_default(),
        };
        Sensor::new(cfg)
    }
}

#[derive(Debug, Args)]
struct SceneArg {
    /// Scene as a PFM radiance map or a JSON scene description.
    #[arg(long)]
    scene: PathBuf,
    /// Multiplies the normalised scene (light level sweep).
    #[arg(long)]
    exposure_scale: Option<f64>,
}

impl SceneArg {
    fn load(&self, config: &SensorConfig) -> Result<RadianceMap> {
        let mut spec = if self.scene.extension().is_some_and(|e| e == "json") {
            io::read_json::<SceneSpec>(&self.scene)?
        } else {
            SceneSpec::pfm(&self.scene).with_mean_level(Some(PROTOCOL_MEAN_LEVEL))
        };
        if let Some(s) = self.exposure_scale {
            spec.exposure_scale = s;
        }
        load_and_normalize(&spec, config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a scene at one constant gain.
    Simulate {
        #[command(flatten)]
        scene: SceneArg,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        #[arg(long)]
        seed: u64,
        /// Raw output (PGM; a JSON sidecar is written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Optional photon estimate (PFM).
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Per-ROI gain plan from a pilot raw frame.
    PlanGain {
        #[arg(long)]
        pilot: PathBuf,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long, default_value_t = 128)]
        roi_size: usize,
        #[arg(long, default_value_t = 2.0)]
        eta: f64,
        /// Gain map output (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Plan report output (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-ROI bin sizes from a pilot raw frame and a gain plan.
    PlanBin {
        #[arg(long)]
        pilot: PathBuf,
        #[arg(long)]
        gain_map: PathBuf,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long, default_value_t = 4.0)]
        snr_t: f64,
        #[arg(long, default_value = "digital")]
        mode: BinningMode,
        /// Use the contrast expression with an extra factor of pitch.
        #[arg(long)]
        contrast_pitch_squared: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spatially-varying capture from a gain map and optional bin map.
    Capture {
        #[command(flatten)]
        scene: SceneArg,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long, required_unless_present = "per_pixel_eta")]
        gain_map: Option<PathBuf>,
        #[arg(long)]
        bin_map: Option<PathBuf>,
        /// Plan gain per pixel during readout instead of reading a gain map.
        #[arg(long, conflicts_with_all = ["gain_map", "bin_map"])]
        per_pixel_eta: Option<f64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Assemble a spatially-varying frame from a constant-gain stack.
    Compose {
        /// Existing stack manifest.
        #[arg(long, required_unless_present = "scene")]
        stack: Option<PathBuf>,
        /// Simulate the stack from this scene instead.
        #[arg(long, conflicts_with = "stack", requires_all = ["gains", "seed"])]
        scene: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        gains: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the simulated stack.
        #[arg(long)]
        stack_dir: Option<PathBuf>,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long)]
        gain_map: PathBuf,
        /// Snap the plan down onto the stack gains first.
        #[arg(long)]
        snap: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Fit read noise from dark frames.
    Calibrate {
        /// Calibration manifest listing dark frames per gain.
        #[arg(long, required_unless_present = "simulate")]
        manifest: Option<PathBuf>,
        /// Simulate the dark sweep with the given sensor instead.
        #[arg(long, requires = "seed")]
        simulate: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        gains: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sensor: SensorArg,
        /// Report in digits instead of electrons.
        #[arg(long)]
        digits: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal pitch and cutoff frequencies over a light grid, as CSV.
    Theory {
        #[arg(long, default_value_t = 4.0)]
        snr_t: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        pitches: Vec<f64>,
        /// Comma list or `logspace:min:max:n`.
        #[arg(long, default_value = "logspace:0.1:1000:20")]
        lights: String,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long)]
        contrast_pitch_squared: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the light-to-bin lookup table (JSON). Pitches must be
        /// 1, 2, 4 or 8 times the sensor pixel pitch.
        #[arg(long)]
        lut: Option<PathBuf>,
    },
    /// Compare the four readout strategies on one scene.
    Evaluate {
        #[command(flatten)]
        scene: SceneArg,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        roi_size: usize,
        #[arg(long, default_value_t = 2.0)]
        eta: f64,
        #[arg(long, default_value_t = 4.0)]
        snr_t: f64,
        #[arg(long, default_value = "digital")]
        mode: BinningMode,
        #[arg(long)]
        contrast_pitch_squared: bool,
        #[arg(long)]
        noiseless: bool,
        /// Report output (JSON); printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-ROI table (CSV).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn contrast_form(pitch_squared: bool) -> ContrastForm {
    if pitch_squared {
        ContrastForm::PitchSquared
    } else {
        ContrastForm::Derived
    }
}

fn parse_lights(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse light grid '{spec}'"));
    if let Some(rest) = spec.strip_prefix("logspace:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo && n > 0) {
            return Err(bad());
        }
        return Ok(log_grid(lo, hi, n));
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn write_estimate(path: Option<&Path>, data: &Plane<f64>) -> Result<()> {
    match path {
        Some(p) => io::write_pfm(p, data),
        None => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scene,
            sensor,
            gain,
            seed,
            out,
            estimate,
        } => {
            let sensor = sensor.load()?;
            let scene = scene.load(sensor.config())?;
            let (w, h) = (scene.width(), scene.height());
            let raw = crate::sensor::simulate_capture(
                &scene,
                &GainMap::constant(gain),
                &BinMap::unbinned(w, h, w.max(h))?,
                &sensor,
                seed,
            )?;
            io::write_raw(&out, &raw)?;
            write_estimate(estimate.as_deref(), &estimate_photons(&raw, &sensor).data)
        }
        Command::PlanGain {
            pilot,
            sensor,
            roi_size,
            eta,
            out,
            report,
        } => {
            let sensor = sensor.load()?;
            let raw = io::read_raw(&pilot)?;
            let est = estimate_photons(&raw, &sensor);
            let (map, rep) = plan_gain_roi(&est, roi_size, eta, sensor.config())?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            io::write_json(&out, &map)?;
            match report {
                Some(p) => io::write_json(p, &rep),
                None => Ok(()),
            }
        }
        Command::PlanBin {
            pilot,
            gain_map,
            sensor,
            snr_t,
            mode,
            contrast_pitch_squared,
            out,
        } => {
            let sensor = sensor.load()?;
            let raw = io::read_raw(&pilot)?;
            let gains: GainMap = io::read_json(&gain_map)?;
            let (w, h) = (raw.width(), raw.height());
            gains.check_frame(w, h)?;
            let roi_size = match (gains.mode, gains.roi_size) {
                (GainMode::PerRoi, Some(s)) => s,
                (GainMode::Constant, _) => w.max(h),
                _ => {
                    return Err(Error::Config(
                        "bin planning needs a per-ROI or constant gain map".into(),
                    ))
                }
            };
            let grid = RoiGrid::new(w, h, roi_size)?;
            let est = estimate_photons(&raw, &sensor);
            let ks = (0..grid.len())
                .map(|roi| {
                    let (x0, y0) = grid.origin(roi);
                    let (rw, rh) = grid.extent(roi);
                    let mean = est.data.crop(x0, y0, rw, rh).mean();
                    let k = bin_for_level(
                        mean,
                        gains.gain_at(x0, y0),
                        roi_size,
                        snr_t,
                        mode,
                        contrast_form(contrast_pitch_squared),
                        sensor.config(),
                    )?;
                    Ok(k as u8)
                })
                .collect::<Result<Vec<_>>>()?;
            io::write_json(&out, &BinMap::new(w, h, roi_size, mode, ks)?)
        }
        Command::Capture {
            scene,
            sensor,
            gain_map,
            bin_map,
            per_pixel_eta,
            seed,
            out,
            estimate,
        } => {
            let sensor = sensor.load()?;
            let scene = scene.load(sensor.config())?;
            let (w, h) = (scene.width(), scene.height());
            if let Some(eta) = per_pixel_eta {
                let (raw, rep) = capture_per_pixel(&scene, eta, &sensor, seed)?;
                eprintln!("saturated fraction: {:.4}", rep.predicted_saturation_frac);
                io::write_raw(&out, &raw)?;
                return write_estimate(estimate.as_deref(), &estimate_photons(&raw, &sensor).data);
            }
            let gains: GainMap = match gain_map {
                Some(p) => io::read_json(p)?,
                None => return Err(Error::Config("a gain map is required".into())),
            };
            let bins = match bin_map {
                Some(p) => io::read_json(p)?,
                None => BinMap::unbinned(w, h, gains.roi_size.unwrap_or(w.max(h)))?,
            };
            let cap = capture_spatially_varying(&scene, &gains, &bins, &sensor, seed)?;
            io::write_raw(&out, &cap.raw)?;
            write_estimate(estimate.as_deref(), &cap.estimate.data)
        }
        Command::Compose {
            stack,
            scene,
            gains,
            seed,
            stack_dir,
            sensor,
            gain_map,
            snap,
            out,
            estimate,
        } => {
            let sensor = sensor.load()?;
            let mut plan: GainMap = io::read_json(&gain_map)?;
            let stack = match (stack, scene) {
                (Some(m), _) => io::read_stack(m)?,
                (None, Some(scene)) => {
                    let scene = SceneArg {
                        scene,
                        exposure_scale: None,
                    }
                    .load(sensor.config())?;
                    let roi = plan.roi_size.unwrap_or(scene.width().max(scene.height()));
                    let gains = gains.unwrap_or_default();
                    let seed = seed.ok_or_else(|| Error::Config("--seed is required".into()))?;
                    let st = simulate_gain_stack(&scene, &gains, roi, &sensor, seed)?;
                    if let Some(dir) = stack_dir {
                        io::write_stack(dir, &st)?;
                    }
                    st
                }
                (None, None) => return Err(Error::Config("need --stack or --scene".into())),
            };
            if snap {
                plan = plan.snap_to_ladder(&stack.gains())?;
            }
            let comp = compose_from_gain_stack(&stack, &plan)?;
            io::write_raw(&out, &comp.raw)?;
            write_estimate(estimate.as_deref(), &estimate_photons(&comp.raw, &sensor).data)
        }
        Command::Calibrate {
            manifest,
            simulate,
            gains,
            frames,
            size,
            seed,
            sensor,
            digits,
            out,
        } => {
            let sensor = sensor.load()?;
            let sweeps = if simulate {
                let seed = seed.ok_or_else(|| Error::Config("--seed is required".into()))?;
                simulate_dark_sweep(&sensor, &gains, frames, size, size, seed)?
            } else {
                let m = manifest.ok_or_else(|| Error::Config("--manifest is required".into()))?;
                io::read_calibration_frames(m)?
            };
            let scale = (!digits).then(|| sensor.digits_per_electron());
            let profile = calibrate(&sweeps, scale)?;
            for w in &profile.warnings {
                eprintln!("warning: {w}");
            }
            emit(out.as_deref(), &(serde_json::to_string_pretty(&profile)? + "\n"))
        }
        Command::Theory {
            snr_t,
            pitches,
            lights,
            gain,
            sensor,
            contrast_pitch_squared,
            out,
            lut,
        } => {
            let sensor = sensor.load()?;
            let params = TheoryParams::new(snr_t, pitches.clone(), parse_lights(&lights)?)?
                .with_contrast_form(contrast_form(contrast_pitch_squared));
            if let Some(path) = lut {
                let table = light_to_bin_lut(&params, sensor.config(), sensor.config().pixel_pitch, gain)?;
                io::write_json(path, &table)?;
            }
            let curve = pitch_curve(gain, &params, sensor.config())?;
            let mut csv = String::from("l0,optimal_pitch,optimal_cutoff");
            for p in &pitches {
                write!(csv, ",cutoff_p{p}").ok();
            }
            csv.push('\n');
            for row in &curve.rows {
                let (p, f) = match row.optimal {
                    OptimalPitch::Pitch { pitch, f_cutoff } => (pitch.to_string(), f_cutoff.to_string()),
                    OptimalPitch::MaxBinning => ("max".to_string(), String::new()),
                };
                write!(csv, "{},{p},{f}", row.l0).ok();
                for c in &row.cutoffs {
                    match c {
                        Cutoff::Resolved(f) => write!(csv, ",{f}").ok(),
                        Cutoff::Unresolvable => write!(csv, ",").ok(),
                    };
                }
                csv.push('\n');
            }
            emit(out.as_deref(), &csv)
        }
        Command::Evaluate {
            scene,
            sensor,
            seed,
            roi_size,
            eta,
            snr_t,
            mode,
            contrast_pitch_squared,
            noiseless,
            out,
            csv,
        } => {
            let sensor = sensor.load()?;
            let scene = scene.load(sensor.config())?;
            let options = EvalOptions {
                roi_size,
                eta,
                snr_t,
                bin_mode: mode,
                contrast_form: contrast_form(contrast_pitch_squared),
                noiseless,
                ..EvalOptions::default()
            };
            let report = evaluate_protocol(&scene, &sensor, &options, &Method::ALL, seed)?;
            for m in &report.methods {
                eprintln!(
                    "{:<20} worst SSIM {:.4}  mean SSIM {:.4}  worst PSNR {:.2} dB",
                    m.method.label(),
                    m.worst_ssim,
                    m.mean_ssim,
                    m.worst_psnr
                );
            }
            if let Some(p) = csv {
                fs::write(p, report.to_csv())?;
            }
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(Error::Config(format!("cannot start {n} threads: {e}"))),
        },
        None => execute(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
