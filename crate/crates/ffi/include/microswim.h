#ifndef MICROSWIM_H
#define MICROSWIM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_CONFIG = 3,
  MS_STATUS_IO = 4,
  MS_STATUS_CHECKPOINT = 5,
  MS_STATUS_SIMULATION = 6,
  MS_STATUS_PANIC = 7,
} MsStatus;

// Simulator instance.
typedef struct MsEnv MsEnv;

// Closed-form policy produced by distillation.
typedef struct MsMathPolicy MsMathPolicy;

// Actor network loaded from a checkpoint.
typedef struct MsPolicy MsPolicy;

// Per-step results from `ms_env_step`.
typedef struct MsStepInfo {
  double reward;
  double theta_before_deg;
  double delta_theta_deg;
  bool done;
  bool goal_reached;
} MsStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library from this thread.
const char *ms_last_error(void);

size_t ms_obs_len(void);

size_t ms_action_len(void);

// Creates a simulator from TOML run configuration text; NULL uses the
// defaults. The environment must be reset before stepping.
//
// # Safety
// `config_toml` is NULL or a NUL-terminated string; `out` is writable.
enum MsStatus ms_env_new(const char *config_toml, struct MsEnv **out);

// # Safety
// `env` is NULL or came from `ms_env_new` and is not used afterwards.
void ms_env_free(struct MsEnv *env);

// Starts an episode at a seeded random position and writes the
// observation (`ms_obs_len()` values) into `obs`.
//
// # Safety
// `env` is a live handle and `obs` points to `obs_len` doubles.
enum MsStatus ms_env_reset(struct MsEnv *env, uint64_t seed, double *obs, size_t obs_len);

// Like `ms_env_reset` but places the robot at `theta_deg`.
//
// # Safety
// As for `ms_env_reset`.
enum MsStatus ms_env_reset_at(struct MsEnv *env,
                              double theta_deg,
                              uint64_t seed,
                              double *obs,
                              size_t obs_len);

// Applies one action. The observation written to `obs` is the state
// after the step (the next episode's first state when `done`).
//
// # Safety
// `env` is a live handle, `action` points to `action_len` doubles, `obs`
// to `obs_len` doubles and `info` is NULL or writable.
enum MsStatus ms_env_step(struct MsEnv *env,
                          const double *action,
                          size_t action_len,
                          double *obs,
                          size_t obs_len,
                          struct MsStepInfo *info);

// Current robot angle in degrees, [0, 360).
//
// # Safety
// `env` is a live handle and `theta_deg` is writable.
enum MsStatus ms_env_theta(const struct MsEnv *env, double *theta_deg);

// Field (T) at the robot's current position for `action` at time `t`.
//
// # Safety
// `env` is a live handle, `action` points to 4 doubles and `b` to 3.
enum MsStatus ms_env_field(const struct MsEnv *env,
                           const double *action,
                           size_t action_len,
                           double t,
                           double *b);

// Loads an actor from a checkpoint file (actor or full agent).
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum MsStatus ms_policy_load(const char *path, struct MsPolicy **out);

// # Safety
// `policy` is NULL or came from `ms_policy_load` and is not used afterwards.
void ms_policy_free(struct MsPolicy *policy);

// Deterministic action (squashed mean) for one observation.
//
// # Safety
// `policy` is a live handle, `obs` points to `obs_len` doubles and
// `action` to `action_len` doubles.
enum MsStatus ms_policy_mean_action(const struct MsPolicy *policy,
                                    const double *obs,
                                    size_t obs_len,
                                    double *action,
                                    size_t action_len);

// Loads a distilled policy file.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum MsStatus ms_math_policy_load(const char *path, struct MsMathPolicy **out);

// # Safety
// `policy` is NULL or came from `ms_math_policy_load` and is not used afterwards.
void ms_math_policy_free(struct MsMathPolicy *policy);

// Action of a distilled policy at `theta_deg`.
//
// # Safety
// `policy` is a live handle and `action` points to `action_len` doubles.
enum MsStatus ms_math_policy_action(const struct MsMathPolicy *policy,
                                    double theta_deg,
                                    double *action,
                                    size_t action_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROSWIM_H */
