#ifndef QUADTORQUE_H
#define QUADTORQUE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum QtStatus {
  QT_STATUS_OK = 0,
  QT_STATUS_NULL_POINTER = 1,
  QT_STATUS_INVALID_ARGUMENT = 2,
  QT_STATUS_SHAPE_MISMATCH = 3,
  QT_STATUS_IO = 4,
  QT_STATUS_PARSE = 5,
  QT_STATUS_SIMULATION_DIVERGED = 6,
  QT_STATUS_CHECKPOINT = 7,
  QT_STATUS_PANIC = 8,
  QT_STATUS_INTERNAL = 9,
} QtStatus;

// Why an episode ended.
typedef enum QtDone {
  QT_DONE_RUNNING = 0,
  QT_DONE_TIMEOUT = 1,
  QT_DONE_FALL = 2,
  QT_DONE_FAILURE = 3,
} QtDone;

// A single quadruped environment.
typedef struct QtEnv QtEnv;

// A policy loaded from a checkpoint; evaluates the deterministic action.
typedef struct QtPolicy QtPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *qt_last_error(void);

// Library version as a static NUL-terminated string.
const char *qt_version(void);

// Creates an environment from a TOML experiment file, or from the built-in
// defaults when `config_path` is null. `eval` disables observation noise,
// latency and pushes. Call `qt_env_reset` before stepping.
//
// # Safety
// `config_path` must be null or a NUL-terminated string; `out` must be a
// valid pointer.
enum QtStatus qt_env_new(const char *config_path,
                         uint32_t env_index,
                         bool eval,
                         struct QtEnv **out);

// # Safety
// `env` must be null or a handle from `qt_env_new` not yet freed.
void qt_env_free(struct QtEnv *env);

// Observation length, or 0 for a null handle.
//
// # Safety
// `env` must be null or a live handle.
size_t qt_env_obs_dim(const struct QtEnv *env);

// Action length, or 0 for a null handle.
//
// # Safety
// `env` must be null or a live handle.
size_t qt_env_act_dim(const struct QtEnv *env);

// Starts an episode and writes its first observation.
//
// # Safety
// `env` must be a live handle; `obs` must hold `obs_len` doubles.
enum QtStatus qt_env_reset(struct QtEnv *env, uint64_t seed, double *obs, size_t obs_len);

// Applies one raw action. Writes the next observation, the step reward and
// the done reason. After a done the environment must be reset.
//
// # Safety
// `env` must be a live handle; `action` must hold `act_len` doubles and
// `obs` `obs_len` doubles; `reward` and `done` must be valid pointers.
enum QtStatus qt_env_step(struct QtEnv *env,
                          const double *action,
                          size_t act_len,
                          double *obs,
                          size_t obs_len,
                          double *reward,
                          enum QtDone *done);

// Sets the velocity command `(vx, vy, wz)`, clamped to the configured
// ranges. It takes effect in the next observation.
//
// # Safety
// `env` must be a live handle.
enum QtStatus qt_env_set_command(struct QtEnv *env, double vx, double vy, double wz);

// Writes the command currently in effect into `cmd[0..3]`.
//
// # Safety
// `env` must be a live handle; `cmd` must hold 3 doubles.
enum QtStatus qt_env_get_command(const struct QtEnv *env, double *cmd);

// Loads a policy checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum QtStatus qt_policy_load(const char *path, struct QtPolicy **out);

// # Safety
// `policy` must be null or a handle from `qt_policy_load` not yet freed.
void qt_policy_free(struct QtPolicy *policy);

// # Safety
// `policy` must be null or a live handle.
size_t qt_policy_obs_dim(const struct QtPolicy *policy);

// # Safety
// `policy` must be null or a live handle.
size_t qt_policy_act_dim(const struct QtPolicy *policy);

// Training iteration the checkpoint was written at, or 0 for null.
//
// # Safety
// `policy` must be null or a live handle.
uint64_t qt_policy_iteration(const struct QtPolicy *policy);

// Deterministic (mean) action for a raw observation.
//
// # Safety
// `policy` must be a live handle; `obs` must hold `obs_len` doubles and
// `action` `act_len` doubles.
enum QtStatus qt_policy_act(const struct QtPolicy *policy,
                            const double *obs,
                            size_t obs_len,
                            double *action,
                            size_t act_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADTORQUE_H */
