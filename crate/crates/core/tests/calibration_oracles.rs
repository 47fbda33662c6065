use svreadout::calibration::{calibrate, dark_variance, fit_read_noise, simulate_dark_sweep, NoiseUnit};
use svreadout::*;

fn sensor(sigma_pre: f64, sigma_post: f64) -> Sensor {
    Sensor::new(SensorConfig {
        sigma_pre,
        sigma_post,
        ..SensorConfig::protocol_default()
    })
    .unwrap()
}

#[test]
fn unit_gain_dark_variance_in_digits() {
    let s = sensor(0.33, 3.31);
    let sweep = simulate_dark_sweep(&s, &[1.0], 40, 64, 64, 3).unwrap();
    let v = dark_variance(&sweep[0].1).unwrap();
    let expected = (0.33f64.powi(2) + 3.31f64.powi(2)) * s.digits_per_electron().powi(2);
    assert!((v - expected).abs() < 0.05 * expected, "{v} vs {expected}");
}

#[test]
fn estimates_tighten_as_frames_grow() {
    let s = sensor(0.46, 2.27);
    let gains = [1.0, 2.0, 4.0, 8.0, 16.0];
    let mut errors = Vec::new();
    for &frames in &[10usize, 50, 250] {
        let mut err = 0.0;
        let reps = 6;
        for rep in 0..reps {
            let sweep = simulate_dark_sweep(&s, &gains, frames, 8, 8, 1000 * frames as u64 + rep).unwrap();
            let p = calibrate(&sweep, Some(s.digits_per_electron())).unwrap();
            err += ((p.sigma_pre - 0.46) / 0.46).abs() + ((p.sigma_post - 2.27) / 2.27).abs();
        }
        errors.push(err / reps as f64);
    }
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn absent_pre_amplifier_noise_fits_at_the_boundary() {
    // Variance independent of gain: the fit must not report a negative slope.
    let samples: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&g| (g, 9.0 - 0.01 * g)).collect();
    let p = fit_read_noise(&samples, NoiseUnit::Electrons).unwrap();
    assert_eq!(p.sigma_pre, 0.0);
    assert!((p.sigma_post - 3.0).abs() < 0.05);
    assert!(!p.warnings.is_empty());
}

#[test]
fn equal_gains_are_rank_deficient() {
    let s = sensor(0.33, 3.31);
    let sweep = simulate_dark_sweep(&s, &[2.0, 2.0, 2.0], 4, 16, 16, 1).unwrap();
    assert!(matches!(calibrate(&sweep, None), Err(Error::Numerical(_))));
}

#[test]
fn report_units_scale_by_digits_per_electron() {
    let s = sensor(0.33, 3.31);
    let sweep = simulate_dark_sweep(&s, &[1.0, 4.0, 16.0], 20, 32, 32, 8).unwrap();
    let digits = calibrate(&sweep, None).unwrap();
    let electrons = calibrate(&sweep, Some(s.digits_per_electron())).unwrap();
    assert_eq!(digits.unit, NoiseUnit::Digits);
    assert_eq!(electrons.unit, NoiseUnit::Electrons);
    let r = s.digits_per_electron();
    assert!((digits.sigma_post / r - electrons.sigma_post).abs() < 1e-9);
    assert!((digits.sigma_pre / r - electrons.sigma_pre).abs() < 1e-9);
}
