#ifndef TACNET_H
#define TACNET_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TacStatus {
  TAC_STATUS_OK = 0,
  TAC_STATUS_NULL_POINTER = 1,
  TAC_STATUS_INVALID_ARGUMENT = 2,
  // The input cannot produce a result, e.g. a fit over one concentration.
  TAC_STATUS_DEGENERATE = 3,
  TAC_STATUS_IO = 4,
  TAC_STATUS_BUFFER_TOO_SMALL = 5,
  TAC_STATUS_PANIC = 99,
} TacStatus;

// Opaque emulator handle.
typedef struct TacEmulator TacEmulator;

// One flash record; `encode`/`decode` give the 16-byte little-endian form.
typedef struct TacRecord {
  uint16_t rec_type;
  uint16_t rec_id;
  float v1;
  float v2;
  float v3;
} TacRecord;

// `counts = slope * ppm + intercept` at `ref_gain_index`.
typedef struct TacCalibration {
  double slope_counts_per_ppm;
  double intercept_counts;
  uint8_t ref_gain_index;
  double fit_r2;
} TacCalibration;

typedef struct TacSample {
  uint16_t adc_counts;
  uint8_t gain_index;
  float temp_c;
  float rh_pct;
} TacSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *tac_last_error(void);

// Writes the 16-byte wire form of `rec` to `out`.
//
// # Safety
// `rec` must be readable and `out` must have room for 16 bytes.
enum TacStatus tac_record_encode(const struct TacRecord *rec, uint8_t *out);

// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum TacStatus tac_record_decode(const uint8_t *bytes, size_t len, struct TacRecord *out);

// Equilibrium vapor ppm over a liquid of `liquid_mg_dl` at `temp_c`.
//
// # Safety
// `out` must be writable.
enum TacStatus tac_henry_gas_ppm(double liquid_mg_dl, double temp_c, double *out);

// Least-squares line through `n` `(ppm[i], counts[i])` pairs.
//
// # Safety
// `ppm` and `counts` must each hold `n` values; `out` must be writable.
enum TacStatus tac_fit_calibration(const double *ppm,
                                   const double *counts,
                                   size_t n,
                                   uint8_t ref_gain_index,
                                   struct TacCalibration *out);

// Converts counts taken at `gain_index` to ppm, using the default gain table.
//
// # Safety
// `cal` must be readable and `out` writable.
enum TacStatus tac_adc_to_ppm(double counts,
                              uint8_t gain_index,
                              const struct TacCalibration *cal,
                              double *out);

// Trapezoidal area of `v` over `t` clipped to `[t0, t1]`, in value·minutes.
//
// # Safety
// `t` and `v` must each hold `n` values; `out` must be writable.
enum TacStatus tac_auc(const double *t,
                       const double *v,
                       size_t n,
                       double t0,
                       double t1,
                       double *out);

// Wall-clock stamp of record `rec_id` when `latest_id` is newest at `now_ns`.
//
// # Safety
// `out` must be writable.
enum TacStatus tac_record_timestamp(int64_t now_ns,
                                    uint16_t latest_id,
                                    uint16_t rec_id,
                                    int64_t *out);

// Creates an emulator. `flash_path` may be NULL for in-memory flash; an
// existing image is reopened. Free with [`tac_emulator_free`].
//
// # Safety
// `name` must be a NUL-terminated string, `flash_path` NULL or one, and
// `out` writable.
enum TacStatus tac_emulator_new(const char *name, const char *flash_path, struct TacEmulator **out);

// # Safety
// `emu` must come from [`tac_emulator_new`] and not be used afterwards.
// NULL is ignored.
void tac_emulator_free(struct TacEmulator *emu);

// Advances one second with the given sensor current and environment.
// `out` may be NULL.
//
// # Safety
// `emu` must be a live handle; `out` NULL or writable.
enum TacStatus tac_emulator_tick(struct TacEmulator *emu,
                                 double current_na,
                                 double temp_c,
                                 double rh_pct,
                                 struct TacSample *out);

// Number of records currently held in flash.
//
// # Safety
// `emu` must be a live handle and `out` writable.
enum TacStatus tac_emulator_record_count(const struct TacEmulator *emu, uint32_t *out);

// Copies up to `cap` records, oldest first, and sets `written`.
//
// # Safety
// `emu` must be a live handle, `out` must hold `cap` records, and `written`
// must be writable.
enum TacStatus tac_emulator_read_records(const struct TacEmulator *emu,
                                         struct TacRecord *out,
                                         size_t cap,
                                         size_t *written);

// Feeds protocol bytes from the central to the device.
//
// # Safety
// `emu` must be a live handle and `bytes` hold `len` bytes.
enum TacStatus tac_emulator_receive(struct TacEmulator *emu, const uint8_t *bytes, size_t len);

// Moves up to `cap` pending response bytes into `buf` and sets `written`.
// Bytes that do not fit stay queued for the next call.
//
// # Safety
// `emu` must be a live handle, `buf` hold `cap` bytes, `written` writable.
enum TacStatus tac_emulator_take_output(struct TacEmulator *emu,
                                        uint8_t *buf,
                                        size_t cap,
                                        size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACNET_H */
