#ifndef SVREADOUT_H
#define SVREADOUT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_NULL_POINTER = 1,
  SV_STATUS_CONFIG = 2,
  SV_STATUS_SHAPE = 3,
  SV_STATUS_INPUT = 4,
  SV_STATUS_NUMERICAL = 5,
  SV_STATUS_FORMAT = 6,
  SV_STATUS_IO = 7,
  SV_STATUS_PANIC = 8,
} SvStatus;

/**
 * Binning mode for [`sv_capture`].
 */
typedef enum SvBinningMode {
  SV_BINNING_MODE_ADDITIVE = 0,
  SV_BINNING_MODE_AVERAGE = 1,
  SV_BINNING_MODE_DIGITAL = 2,
} SvBinningMode;

/**
 * Opaque photon estimate.
 */
typedef struct SvEstimate SvEstimate;

/**
 * Opaque expected-photon map (row-major, electrons).
 */
typedef struct SvRadianceMap SvRadianceMap;

/**
 * Opaque raw frame.
 */
typedef struct SvRawCapture SvRawCapture;

/**
 * Opaque sensor handle.
 */
typedef struct SvSensor SvSensor;

/**
 * Plain sensor description; electrons and micrometres.
 */
typedef struct SvSensorConfig {
  double pixel_pitch;
  double well_capacity;
  double sigma_pre;
  double sigma_post;
  uint32_t bit_depth;
  double black_level_frac;
  double gain_min;
  double gain_max;
  double quantum_efficiency;
} SvSensorConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *sv_last_error_message(void);

/**
 * Fills `out` with the reference sensor description.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `SvSensorConfig`.
 */
enum SvStatus sv_sensor_config_default(struct SvSensorConfig *out);

/**
 * # Safety
 * `config` must be null or valid; `out` must be null or writable.
 */
enum SvStatus sv_sensor_new(const struct SvSensorConfig *config, struct SvSensor **out);

/**
 * # Safety
 * `sensor` must be null or a handle from [`sv_sensor_new`] not yet freed.
 */
void sv_sensor_free(struct SvSensor *sensor);

/**
 * Copies `width * height` row-major expected photon counts.
 *
 * # Safety
 * `data` must point to `width * height` doubles; `out` must be writable.
 */
enum SvStatus sv_radiance_map_new(size_t width,
                                  size_t height,
                                  const double *data,
                                  struct SvRadianceMap **out);

/**
 * # Safety
 * `map` must be null or a live handle.
 */
void sv_radiance_map_free(struct SvRadianceMap *map);

/**
 * Reads the whole frame at one gain without binning.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SvStatus sv_simulate(const struct SvSensor *sensor,
                          const struct SvRadianceMap *scene,
                          double gain,
                          uint64_t seed,
                          struct SvRawCapture **out);

/**
 * Spatially-varying capture. `gains` and `bin_sides` hold one entry per ROI in
 * raster order; `bin_sides` may be null for no binning.
 *
 * # Safety
 * Handles must be live; arrays must hold `n_rois` entries; `out` writable.
 */
enum SvStatus sv_capture(const struct SvSensor *sensor,
                         const struct SvRadianceMap *scene,
                         size_t roi_size,
                         const double *gains,
                         const uint8_t *bin_sides,
                         size_t n_rois,
                         enum SvBinningMode mode,
                         uint64_t seed,
                         struct SvRawCapture **out);

/**
 * # Safety
 * `raw` must be live; `width` and `height` must be writable.
 */
enum SvStatus sv_raw_capture_size(const struct SvRawCapture *raw, size_t *width, size_t *height);

/**
 * Copies the row-major digits into `out`, which holds `len` values.
 *
 * # Safety
 * `raw` must be live; `out` must hold `len` writable values.
 */
enum SvStatus sv_raw_capture_digits(const struct SvRawCapture *raw, uint16_t *out, size_t len);

/**
 * # Safety
 * `raw` must be null or a live handle.
 */
void sv_raw_capture_free(struct SvRawCapture *raw);

/**
 * Photons per pixel recovered from a raw frame.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum SvStatus sv_estimate(const struct SvSensor *sensor,
                          const struct SvRawCapture *raw,
                          struct SvEstimate **out);

/**
 * Copies the row-major estimate into `out`; saturated pixels hold their
 * clamped value and are flagged in `valid` (1 = unsaturated) when not null.
 *
 * # Safety
 * `estimate` must be live; `out` (and `valid` if given) must hold `len` values.
 */
enum SvStatus sv_estimate_data(const struct SvEstimate *estimate,
                               double *out,
                               uint8_t *valid,
                               size_t len);

/**
 * # Safety
 * `estimate` must be null or a live handle.
 */
void sv_estimate_free(struct SvEstimate *estimate);

/**
 * Largest gain keeping level `l_hat` `eta` photon-noise sigmas below full well.
 *
 * # Safety
 * `sensor` must be live; `out` writable.
 */
enum SvStatus sv_gain_for_level(const struct SvSensor *sensor,
                                double l_hat,
                                double eta,
                                double *out);

/**
 * Cutoff frequency (cycles/um) for light density `l0` at pitch `p`.
 * `resolved` is set to 0 when nothing reaches `snr_t`; `frequency` is then 0.
 *
 * # Safety
 * `sensor` must be live; outputs writable.
 */
enum SvStatus sv_cutoff_frequency(const struct SvSensor *sensor,
                                  double l0,
                                  double p,
                                  double g,
                                  double snr_t,
                                  double *frequency,
                                  uint8_t *resolved);

/**
 * Best of `n` ascending candidate pitches. When none resolves anything,
 * `pitch` is set to 0 (bin as much as possible).
 *
 * # Safety
 * `sensor` must be live; `pitches` holds `n` values; outputs writable.
 */
enum SvStatus sv_optimal_pitch(const struct SvSensor *sensor,
                               double l0,
                               double g,
                               double snr_t,
                               const double *pitches,
                               size_t n,
                               double *pitch,
                               double *f_cutoff);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVREADOUT_H */
