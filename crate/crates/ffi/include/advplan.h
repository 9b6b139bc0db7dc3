#ifndef ADVPLAN_H
#define ADVPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Number of doubles in an encoded motion (30 steps x 6 channels).
#define ADVPLAN_REPR_LEN 180

typedef enum AdvplanStatus {
  ADVPLAN_STATUS_OK = 0,
  ADVPLAN_STATUS_NULL_POINTER = 1,
  ADVPLAN_STATUS_INVALID_ARGUMENT = 2,
  ADVPLAN_STATUS_DIMENSION_MISMATCH = 3,
  ADVPLAN_STATUS_UNREACHABLE = 4,
  ADVPLAN_STATUS_NO_CONVERGENCE = 5,
  ADVPLAN_STATUS_IN_COLLISION = 6,
  ADVPLAN_STATUS_PLANNING_FAILED = 7,
  ADVPLAN_STATUS_IO = 8,
  ADVPLAN_STATUS_PARSE = 9,
  ADVPLAN_STATUS_CHECKSUM = 10,
  ADVPLAN_STATUS_SHAPE_MISMATCH = 11,
  ADVPLAN_STATUS_BUFFER_TOO_SMALL = 12,
  ADVPLAN_STATUS_INTERNAL = 13,
} AdvplanStatus;

// Kinematic chain handle.
typedef struct AdvplanChain AdvplanChain;

// Discriminator handle.
typedef struct AdvplanDiscriminator AdvplanDiscriminator;

// Planned motion handle.
typedef struct AdvplanMotion AdvplanMotion;

// Obstacle scene handle.
typedef struct AdvplanScene AdvplanScene;

// Planning parameters; obtain defaults from [`advplan_planner_defaults`].
typedef struct AdvplanPlannerParams {
  double step_max;
  double goal_bias;
  double lambda;
  double resolution;
  size_t budget;
  uint64_t seed;
} AdvplanPlannerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last error on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *advplan_last_error(void);

// The built-in 7-DOF arm. Never fails; free with [`advplan_chain_free`].
struct AdvplanChain *advplan_chain_default(void);

// Parses a chain description (JSON).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum AdvplanStatus advplan_chain_from_json(const char *json, struct AdvplanChain **out);

// # Safety
// `chain` must come from this library (or be null) and not be used again.
void advplan_chain_free(struct AdvplanChain *chain);

// Degrees of freedom, or 0 for a null handle.
//
// # Safety
// `chain` must be a valid handle or null.
size_t advplan_chain_dof(const struct AdvplanChain *chain);

// Marker positions for joint state `q`: shoulder, elbow, hand as 9 doubles.
//
// # Safety
// `q` must point to `n` doubles and `out_markers` to 9 writable doubles.
enum AdvplanStatus advplan_forward_kinematics(const struct AdvplanChain *chain,
                                              const double *q,
                                              size_t n,
                                              double *out_markers);

// Solves for a hand position and swivel angle starting from `seed`.
//
// # Safety
// `target` must point to 3 doubles; `seed` and `out_q` to `n` doubles.
enum AdvplanStatus advplan_inverse_kinematics(const struct AdvplanChain *chain,
                                              const double *target,
                                              double swivel,
                                              const double *seed,
                                              size_t n,
                                              double *out_q);

// Goal states for a hand target (one per sampled swivel that converged),
// written row-major into `out` (room for `capacity` states). The number of
// states found goes to `out_count`; `BufferTooSmall` if it exceeds
// `capacity`.
//
// # Safety
// `target` must point to 3 doubles, `out` to `capacity * dof` doubles.
enum AdvplanStatus advplan_sample_goal_states(const struct AdvplanChain *chain,
                                              const double *target,
                                              size_t count,
                                              uint64_t seed,
                                              double *out,
                                              size_t capacity,
                                              size_t *out_count);

// Empty scene with the given capsule radius for the arm segments.
//
// # Safety
// `out` must be a valid pointer.
enum AdvplanStatus advplan_scene_new(double link_radius, struct AdvplanScene **out);

// # Safety
// `scene` must be a valid handle; `center` must point to 3 doubles.
enum AdvplanStatus advplan_scene_add_sphere(struct AdvplanScene *scene,
                                            const double *center,
                                            double radius);

// # Safety
// `scene` must come from this library (or be null) and not be used again.
void advplan_scene_free(struct AdvplanScene *scene);

// Writes 1 to `out_hit` if state `q` touches any obstacle, else 0.
//
// # Safety
// Handles must be valid; `q` must point to `n` doubles.
enum AdvplanStatus advplan_state_in_collision(const struct AdvplanChain *chain,
                                              const struct AdvplanScene *scene,
                                              const double *q,
                                              size_t n,
                                              int32_t *out_hit);

// Encodes a robot motion (`n_states` row-major states of the chain's
// dimension) into [`ADVPLAN_REPR_LEN`] doubles.
//
// # Safety
// `states` must point to `n_states * dof` doubles and `out` to
// `ADVPLAN_REPR_LEN` doubles.
enum AdvplanStatus advplan_encode(const struct AdvplanChain *chain,
                                  const double *states,
                                  size_t n_states,
                                  double *out);

// Loads a discriminator checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AdvplanStatus advplan_discriminator_load(const char *path, struct AdvplanDiscriminator **out);

// Randomly initialized discriminator with the default architecture.
struct AdvplanDiscriminator *advplan_discriminator_random(uint64_t seed);

// # Safety
// `d` must come from this library (or be null) and not be used again.
void advplan_discriminator_free(struct AdvplanDiscriminator *d);

// Scores one encoded motion ([`ADVPLAN_REPR_LEN`] doubles).
//
// # Safety
// `d` must be valid, `repr` must point to `ADVPLAN_REPR_LEN` doubles.
enum AdvplanStatus advplan_discriminator_score(const struct AdvplanDiscriminator *d,
                                               const double *repr,
                                               double *out_score);

struct AdvplanPlannerParams advplan_planner_defaults(void);

// Plans from `start` to any of `n_goals` goal states. With a null
// discriminator the objective is path length; otherwise it is
// `lambda * length - score`. `scene` may be null for free space.
//
// # Safety
// `chain` must be valid; `start` must point to `dof` doubles and `goals`
// to `n_goals * dof`; `out` must be a valid pointer.
enum AdvplanStatus advplan_plan(const struct AdvplanChain *chain,
                                const struct AdvplanScene *scene,
                                const struct AdvplanDiscriminator *discriminator,
                                const double *start,
                                const double *goals,
                                size_t n_goals,
                                struct AdvplanPlannerParams params,
                                struct AdvplanMotion **out);

// Number of states in a motion (0 for null).
//
// # Safety
// `m` must be a valid handle or null.
size_t advplan_motion_len(const struct AdvplanMotion *m);

// Row-major states of a motion (`len * dof` doubles), owned by the handle.
//
// # Safety
// `m` must be a valid handle or null.
const double *advplan_motion_states(const struct AdvplanMotion *m);

// Joint dimension of a motion (0 for null).
//
// # Safety
// `m` must be a valid handle or null.
size_t advplan_motion_dof(const struct AdvplanMotion *m);

// Objective cost of the planned motion (NaN for null).
//
// # Safety
// `m` must be a valid handle or null.
double advplan_motion_cost(const struct AdvplanMotion *m);

// # Safety
// `m` must come from this library (or be null) and not be used again.
void advplan_motion_free(struct AdvplanMotion *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVPLAN_H */
