#ifndef ENDICO_H
#define ENDICO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EndicoBinding {
  ENDICO_BINDING_UNCONSTRAINED = 0,
  ENDICO_BINDING_VOLTAGE_BOUND = 1,
  ENDICO_BINDING_UPPER_LIMIT = 2,
  ENDICO_BINDING_LOWER_LIMIT = 3,
} EndicoBinding;

typedef enum EndicoMode {
  ENDICO_MODE_VVC = 0,
  ENDICO_MODE_VWC = 1,
} EndicoMode;

typedef enum EndicoStatus {
  ENDICO_STATUS_OK = 0,
  ENDICO_STATUS_NULL_POINTER = 1,
  ENDICO_STATUS_INVALID_ARGUMENT = 2,
  ENDICO_STATUS_IO = 3,
  ENDICO_STATUS_PARSE = 4,
  ENDICO_STATUS_VALIDATION = 5,
  ENDICO_STATUS_POWER_FLOW = 6,
  ENDICO_STATUS_CLOSED_FORM = 7,
  ENDICO_STATUS_OUT_OF_RANGE = 8,
  ENDICO_STATUS_PANIC = 99,
} EndicoStatus;

typedef struct EndicoFeeder EndicoFeeder;

typedef struct EndicoScenario EndicoScenario;

typedef struct EndicoTrace EndicoTrace;

// Reduced node problem. Bound arrays are indexed P, Q, v, l, DER setpoint.
typedef struct EndicoSubproblem {
  enum EndicoMode mode;
  double big_p;
  double big_q;
  double v_up;
  double z1;
  double z2;
  double lower[5];
  double upper[5];
} EndicoSubproblem;

typedef struct EndicoDispatch {
  double value;
  enum EndicoBinding binding;
  // Zero when the voltage projection has no real root.
  bool has_voltage_bound;
  double voltage_bound;
} EndicoDispatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *endico_last_error(void);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EndicoStatus endico_feeder_load(const char *path, struct EndicoFeeder **out);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum EndicoStatus endico_feeder_from_json(const char *json, struct EndicoFeeder **out);

// Number of buses, 0 for a NULL handle.
//
// # Safety
// `feeder` must be NULL or a live handle.
size_t endico_feeder_bus_count(const struct EndicoFeeder *feeder);

// # Safety
// `feeder` must be NULL or a handle not freed before.
void endico_feeder_free(struct EndicoFeeder *feeder);

// Solves the power flow for per-bus injections `p[n]`, `q[n]` and writes
// squared bus voltages to `v_sq_out[n]`. `n` must equal the bus count.
//
// # Safety
// Arrays must hold `n` elements.
enum EndicoStatus endico_power_flow(const struct EndicoFeeder *feeder,
                                    const double *p,
                                    const double *q,
                                    size_t n,
                                    double v_root_sq,
                                    double load_mult,
                                    double *v_sq_out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EndicoStatus endico_scenario_load(const char *path, struct EndicoScenario **out);

// Constant-input scenario over a copy of `feeder`.
//
// # Safety
// `feeder` must be a live handle; `out` must be writable.
enum EndicoStatus endico_scenario_steady(const struct EndicoFeeder *feeder,
                                         size_t horizon,
                                         double load_mult,
                                         double pv_mult,
                                         double alpha,
                                         struct EndicoScenario **out);

// Switches every DER of the scenario to `mode`.
//
// # Safety
// `scenario` must be a live handle.
enum EndicoStatus endico_scenario_set_mode(struct EndicoScenario *scenario, enum EndicoMode mode);

// # Safety
// `scenario` must be a live handle.
enum EndicoStatus endico_scenario_set_alpha(struct EndicoScenario *scenario, double alpha);

// # Safety
// `scenario` must be NULL or a handle not freed before.
void endico_scenario_free(struct EndicoScenario *scenario);

// Runs the distributed controller over the scenario horizon.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum EndicoStatus endico_run(const struct EndicoScenario *scenario, struct EndicoTrace **out);

// Number of controller steps, 0 for a NULL handle.
//
// # Safety
// `trace` must be NULL or a live handle.
size_t endico_trace_len(const struct EndicoTrace *trace);

// Objective after `step` (0 is the uncontrolled start): total loss in
// Volt-Var runs, total DER output in Volt-Watt runs.
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum EndicoStatus endico_trace_objective(const struct EndicoTrace *trace, size_t step, double *out);

// Squared voltage and DER injection at `bus` after `step`.
//
// # Safety
// `trace` must be a live handle; output pointers must be writable.
enum EndicoStatus endico_trace_bus(const struct EndicoTrace *trace,
                                   size_t step,
                                   size_t bus,
                                   double *v_sq,
                                   double *p,
                                   double *q);

// # Safety
// `trace` must be NULL or a handle not freed before.
void endico_trace_free(struct EndicoTrace *trace);

// Closed-form Volt-Var setpoint of one node.
//
// # Safety
// `sp` must be readable; `out` must be writable.
enum EndicoStatus endico_vvc_dispatch(const struct EndicoSubproblem *sp,
                                      struct EndicoDispatch *out);

// Closed-form Volt-Watt setpoint of one node.
//
// # Safety
// `sp` must be readable; `out` must be writable.
enum EndicoStatus endico_vwc_dispatch(const struct EndicoSubproblem *sp,
                                      struct EndicoDispatch *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENDICO_H */
