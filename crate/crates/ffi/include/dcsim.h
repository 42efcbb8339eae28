#ifndef DCSIM_H
#define DCSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcsimStatus {
  DCSIM_STATUS_OK = 0,
  DCSIM_STATUS_NULL_POINTER = 1,
  DCSIM_STATUS_INVALID_UTF8 = 2,
  DCSIM_STATUS_PARSE_ERROR = 3,
  DCSIM_STATUS_INVALID_CONFIG = 4,
  DCSIM_STATUS_MODEL_ERROR = 5,
  DCSIM_STATUS_IO_ERROR = 6,
  DCSIM_STATUS_OUT_OF_RANGE = 7,
  DCSIM_STATUS_PANIC = 8,
} DcsimStatus;

/**
 * Rows produced by running a scenario.
 */
typedef struct DcsimReport DcsimReport;

/**
 * A parsed scenario or sweep.
 */
typedef struct DcsimScenario DcsimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Owned by the
 * library; valid until the next call on this thread.
 */
const char *dcsim_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dcsim_version(void);

/**
 * Parses a JSON scenario. On success `*out` holds a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum DcsimStatus dcsim_scenario_from_json(const char *json, struct DcsimScenario **out);

/**
 * # Safety
 * `scenario` must come from [`dcsim_scenario_from_json`] or be NULL.
 */
void dcsim_scenario_free(struct DcsimScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum DcsimStatus dcsim_scenario_set_replications(struct DcsimScenario *scenario,
                                                 uint32_t replications);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum DcsimStatus dcsim_scenario_set_seed(struct DcsimScenario *scenario, uint64_t seed);

/**
 * Runs every point of the scenario. On success `*out` holds a new report.
 *
 * # Safety
 * `scenario` must be a live handle and `out` valid for writes.
 */
enum DcsimStatus dcsim_run(const struct DcsimScenario *scenario, struct DcsimReport **out);

/**
 * # Safety
 * `report` must come from [`dcsim_run`] or be NULL.
 */
void dcsim_report_free(struct DcsimReport *report);

/**
 * Number of rows in a report; 0 for NULL.
 *
 * # Safety
 * `report` must be a live handle or NULL.
 */
size_t dcsim_report_rows(const struct DcsimReport *report);

/**
 * Unrounded numeric value of `column` in row `row`.
 *
 * # Safety
 * `report` must be a live handle, `column` NUL-terminated, `out` writable.
 */
enum DcsimStatus dcsim_report_value(const struct DcsimReport *report,
                                    size_t row,
                                    const char *column,
                                    double *out);

/**
 * The report as CSV. Release `*out` with [`dcsim_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` valid for writes.
 */
enum DcsimStatus dcsim_report_csv(const struct DcsimReport *report, char **out);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void dcsim_string_free(char *s);

/**
 * Closed-form TSCH handshake duration in seconds over `hops` identical hops.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DcsimStatus dcsim_tsch_handshake_duration(uint32_t slotframe,
                                               uint32_t cells,
                                               double pdr,
                                               uint32_t hops,
                                               double *out);

/**
 * Fraction of time all `r` slots are busy with `n` sources at load `rho`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DcsimStatus dcsim_engset_time_congestion(uint32_t n, uint32_t r, double rho, double *out);

/**
 * Fraction of arrivals blocked with `n` sources, `r` slots, load `rho`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DcsimStatus dcsim_engset_call_congestion(uint32_t n, uint32_t r, double rho, double *out);

/**
 * Beacon interval and CAP length in milliseconds for orders `bo` and `so`.
 *
 * # Safety
 * `bi_ms` and `cap_ms` must be valid for writes.
 */
enum DcsimStatus dcsim_superframe(uint8_t bo, uint8_t so, double *bi_ms, double *cap_ms);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCSIM_H */
