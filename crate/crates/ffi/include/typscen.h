#ifndef TYPSCEN_H
#define TYPSCEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_ARGUMENT = 1,
  TS_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad argument value or configuration.
   */
  TS_STATUS_USAGE = 3,
  /**
   * Malformed, inconsistent or unreadable input data.
   */
  TS_STATUS_DATA = 4,
  /**
   * Numerical failure (singular matrix, non-SPD covariance, ...).
   */
  TS_STATUS_NUMERICAL = 5,
  TS_STATUS_BUFFER_TOO_SMALL = 6,
  TS_STATUS_PANIC = 7,
} TsStatus;

typedef enum TsMethod {
  TS_METHOD_CLASSICAL = 0,
  TS_METHOD_METRIC = 1,
} TsMethod;

typedef enum TsStabilityClass {
  TS_STABILITY_CLASS_STABLE = 0,
  TS_STABILITY_CLASS_VOLTAGE_ONLY = 1,
  TS_STABILITY_CLASS_COUPLED = 2,
} TsStabilityClass;

/**
 * Opaque network handle.
 */
typedef struct TsNetwork TsNetwork;

/**
 * Opaque fitted typical-scenario set.
 */
typedef struct TsTypicalSet TsTypicalSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full length including
 * the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ts_last_error_message(char *buf, size_t len);

/**
 * Loads and validates a network file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum TsStatus ts_network_load(const char *path, struct TsNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from [`ts_network_load`] not yet freed.
 */
void ts_network_free(struct TsNetwork *net);

/**
 * Number of buses, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ts_network_bus_count(const struct TsNetwork *net);

/**
 * Bus ids in file order into `out[0..len]`.
 *
 * # Safety
 * `net` must be a live handle; `out` valid for `len` writes.
 */
enum TsStatus ts_network_bus_ids(const struct TsNetwork *net, uint32_t *out, size_t len);

/**
 * Electrical distance matrix, row-major `n × n`, into `out[0..len]`.
 *
 * # Safety
 * `net` must be a live handle; `out` valid for `len` writes.
 */
enum TsStatus ts_network_electrical_distance(const struct TsNetwork *net, double *out, size_t len);

/**
 * Bus coordinates in `k` dimensions, row-major `n × k`, into `out[0..len]`.
 * Metric embedding uses default SMACOF settings.
 *
 * # Safety
 * `net` must be a live handle; `out` valid for `len` writes.
 */
enum TsStatus ts_network_embed(const struct TsNetwork *net,
                               enum TsMethod method,
                               size_t k,
                               double *out,
                               size_t len);

/**
 * Loads a fitted typical-scenario set (JSON).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum TsStatus ts_typical_set_load(const char *path, struct TsTypicalSet **out);

/**
 * # Safety
 * `set` must be null or a handle from [`ts_typical_set_load`] not yet freed.
 */
void ts_typical_set_free(struct TsTypicalSet *set);

/**
 * # Safety
 * `set` must be null or a live handle.
 */
size_t ts_typical_set_cluster_count(const struct TsTypicalSet *set);

/**
 * Length of the characteristic vector the set expects.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t ts_typical_set_dimension(const struct TsTypicalSet *set);

/**
 * Typical scenario id of the cluster at `index` (clusters are ordered
 * from most to least stable).
 *
 * # Safety
 * `set` must be a live handle; `out` valid for writes.
 */
enum TsStatus ts_typical_set_typical_id(const struct TsTypicalSet *set, size_t index, size_t *out);

/**
 * Assigns a raw characteristic vector to its nearest cluster by weighted
 * Mahalanobis distance. Any of the outputs may be null.
 *
 * # Safety
 * `set` must be a live handle; `x` valid for `len` reads; non-null outputs
 * valid for writes.
 */
enum TsStatus ts_typical_set_predict(const struct TsTypicalSet *set,
                                     const double *x,
                                     size_t len,
                                     size_t *cluster,
                                     double *distance,
                                     enum TsStabilityClass *label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TYPSCEN_H */
