/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FASTSWARM_H
#define FASTSWARM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FS_CHANNEL_POSITION 0

#define FS_CHANNEL_VELOCITY 1

#define FS_CHANNEL_ACCELERATION 2

// Result of every fallible call.
typedef enum {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  FS_STATUS_CONFIG = 3,
  FS_STATUS_NUMERICAL = 4,
  FS_STATUS_PRECONDITION = 5,
  FS_STATUS_SIMULATION = 6,
  FS_STATUS_FIT = 7,
  FS_STATUS_IO = 8,
  FS_STATUS_OUT_OF_RANGE = 9,
  FS_STATUS_PANIC = 10,
} FsStatus;

// A constant-acceleration Kalman filter over `(x, y, ẋ, ẏ, ẍ, ÿ)`.
typedef struct FsFilter FsFilter;

// A running scenario and the tick records produced so far.
typedef struct FsSimulation FsSimulation;

// Ground truth of one agent, world frame.
typedef struct {
  uint32_t id;
  double position[2];
  double velocity[2];
  double acceleration[2];
  double heading;
} FsAgentState;

// Onboard estimates of one agent from the most recent tick, world frame.
typedef struct {
  uint32_t id;
  double fused_position[2];
  double fused_velocity[2];
  double mrse_position[2];
  double vio_position[2];
  double commanded_velocity[2];
  double lambda;
  uint32_t neighbor_count;
} FsAgentEstimate;

typedef struct {
  double velocity[2];
  double next_command[2];
  double next_velocity[2];
} FsResponseSample;

typedef struct {
  double q1;
  double q2;
  double residual_norm;
  size_t rows;
} FsResponseFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on the calling thread, or null. The
// pointer stays valid until the next failing call on the same thread.
const char *fs_last_error_message(void);

// Releases a string returned by this library.
void fs_string_free(char *s);

// Library version as a static NUL-terminated string.
const char *fs_version(void);

// Creates a simulation from the text of a scenario TOML file.
FsStatus fs_simulation_new(const char *config_toml, FsSimulation **out);

void fs_simulation_free(FsSimulation *sim);

// Advances one tick.
FsStatus fs_simulation_step(FsSimulation *sim);

// Advances until the configured scenario duration is reached.
FsStatus fs_simulation_run(FsSimulation *sim);

// Number of ticks taken and the total the scenario runs for.
FsStatus fs_simulation_progress(const FsSimulation *sim,
                                uint64_t *ticks_done,
                                uint64_t *ticks_total);

FsStatus fs_simulation_time(const FsSimulation *sim, double *out);

FsStatus fs_simulation_agent_count(const FsSimulation *sim, size_t *out);

FsStatus fs_simulation_agent_state(const FsSimulation *sim, size_t index, FsAgentState *out);

// Estimates the agent acted on during the last tick. Fails with
// `Precondition` before the first step.
FsStatus fs_simulation_agent_estimate(const FsSimulation *sim, size_t index, FsAgentEstimate *out);

// Metrics over the ticks simulated so far as a JSON object. Release the
// string with `fs_string_free`.
FsStatus fs_simulation_summary_json(const FsSimulation *sim, char **out);

// Writes the run log of the ticks simulated so far to `path`.
FsStatus fs_simulation_write_log(const FsSimulation *sim, const char *path);

// Creates a constant-acceleration filter. `q_diag`, `state` hold 6 values;
// `cov` holds 36 values in row-major order.
FsStatus fs_filter_new(double dt,
                       const double *q_diag,
                       const double *state,
                       const double *cov,
                       FsFilter **out);

void fs_filter_free(FsFilter *filter);

FsStatus fs_filter_predict(FsFilter *filter);

// Fuses a 2-D measurement of one `FS_CHANNEL_*` state pair. `z` holds 2
// values, `r` a row-major 2×2 covariance.
FsStatus fs_filter_correct(FsFilter *filter,
                           uint32_t channel,
                           const double *z,
                           const double *r,
                           double stamp);

// Copies the 6-value state estimate into `out`.
FsStatus fs_filter_state(const FsFilter *filter, double *out);

// Copies the 6×6 covariance into `out`, row-major.
FsStatus fs_filter_covariance(const FsFilter *filter, double *out);

// VIO reliability estimate from feature statistics, in [0, 1].
// `track_ages` holds `n_ages` tracking times in seconds.
FsStatus fs_lambda_estimate(size_t feature_count,
                            size_t max_features,
                            const double *track_ages,
                            size_t n_ages,
                            double average_track_age,
                            double *out);

// Least-squares fit of the first-order velocity response model.
FsStatus fs_fit_response_model(const FsResponseSample *samples,
                               size_t n_samples,
                               FsResponseFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASTSWARM_H */
