/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HATPIC_H
#define HATPIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Largest payload of any frame type, bytes.
 */
#define HATPIC_MAX_PAYLOAD 40

/**
 * Largest encoded frame, bytes.
 */
#define HATPIC_MAX_FRAME 48

typedef enum {
  HATPIC_STATUS_OK = 0,
  HATPIC_STATUS_NULL_POINTER = 1,
  HATPIC_STATUS_INVALID_ARGUMENT = 2,
  HATPIC_STATUS_BUFFER_TOO_SMALL = 3,
  /**
   * No decoded frame is waiting.
   */
  HATPIC_STATUS_EMPTY = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  HATPIC_STATUS_INTERNAL = 5,
} HatpicStatus;

typedef struct HatpicController HatpicController;

typedef struct HatpicParser HatpicParser;

/**
 * Joystick state in SI units (rad, rad/s, N·m, s).
 */
typedef struct {
  double theta;
  double omega;
  double tau_operator;
  double t;
} HatpicState;

/**
 * One decoded frame. Only the first `payload_len` bytes of `payload` are set.
 */
typedef struct {
  uint8_t frame_type;
  uint8_t seq;
  uint8_t payload_len;
  uint8_t payload[HATPIC_MAX_PAYLOAD];
} HatpicFrame;

typedef struct {
  uint64_t resyncs;
  uint64_t crc_failures;
  uint64_t unknown_type;
  uint64_t bad_length;
  uint64_t truncated;
  uint64_t frames;
} HatpicDiagnostics;

typedef struct {
  /**
   * Inertia coefficient, N·m·s²/rad.
   */
  double d_adm;
  /**
   * Damping coefficient, N·m·s/rad.
   */
  double m_adm;
  /**
   * Feedback torque ceiling, N·m.
   */
  double tau_max;
  /**
   * Control period, s.
   */
  double dt;
  double theta0;
  double q_dz;
  double n;
  double k_min;
  double k_max;
  /**
   * Mechanical travel limit, rad.
   */
  double theta_max;
  /**
   * Hard-stop stiffness, N·m/rad.
   */
  double k_stop;
} HatpicControllerConfig;

/**
 * Result of one control period.
 */
typedef struct {
  HatpicState state;
  double tau_fb_rec;
  double tau_fb_ext;
  double tau_fb_total;
} HatpicTick;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length without the NUL, or 0
 * when there is none.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be NULL with `cap == 0`.
 */
size_t hatpic_last_error(char *buf, size_t cap);

/**
 * CRC-16/CCITT-FALSE of `len` bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be valid.
 */
HatpicStatus hatpic_crc16(const uint8_t *data, size_t len, uint16_t *out);

/**
 * Encodes a telemetry frame. `*written` receives the frame length, also when
 * the buffer is too small.
 *
 * # Safety
 * `state` and `written` must be valid; `buf` must hold `cap` bytes.
 */
HatpicStatus hatpic_encode_telemetry(uint8_t seq,
                                     const HatpicState *state,
                                     uint8_t *buf,
                                     size_t cap,
                                     size_t *written);

/**
 * Encodes a feedback frame carrying `tau_ext` N·m.
 *
 * # Safety
 * `written` must be valid; `buf` must hold `cap` bytes.
 */
HatpicStatus hatpic_encode_feedback(uint8_t seq,
                                    double tau_ext,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *written);

/**
 * Reads the state out of a telemetry frame.
 *
 * # Safety
 * `frame` and `out` must be valid.
 */
HatpicStatus hatpic_decode_telemetry(const HatpicFrame *frame, HatpicState *out);

/**
 * Reads the torque out of a feedback frame.
 *
 * # Safety
 * `frame` and `tau_ext` must be valid.
 */
HatpicStatus hatpic_decode_feedback(const HatpicFrame *frame, double *tau_ext);

/**
 * # Safety
 * `out` must be valid. The handle is released with [`hatpic_parser_free`].
 */
HatpicStatus hatpic_parser_new(HatpicParser **out);

/**
 * # Safety
 * `parser` must come from [`hatpic_parser_new`] and not be used afterwards.
 * NULL is ignored.
 */
void hatpic_parser_free(HatpicParser *parser);

/**
 * Pushes stream bytes in. Complete frames queue up for [`hatpic_parser_next`];
 * `*pending` (optional) receives how many are waiting.
 *
 * # Safety
 * `parser` must be a live handle; `data` must hold `len` bytes.
 */
HatpicStatus hatpic_parser_feed(HatpicParser *parser,
                                const uint8_t *data,
                                size_t len,
                                size_t *pending);

/**
 * Pops the oldest decoded frame, or returns `HATPIC_STATUS_EMPTY`.
 *
 * # Safety
 * `parser` must be a live handle and `out` valid.
 */
HatpicStatus hatpic_parser_next(HatpicParser *parser, HatpicFrame *out);

/**
 * # Safety
 * `parser` must be a live handle and `out` valid.
 */
HatpicStatus hatpic_parser_diagnostics(const HatpicParser *parser, HatpicDiagnostics *out);

/**
 * Fills `out` with the stock device settings.
 *
 * # Safety
 * `out` must be valid.
 */
HatpicStatus hatpic_controller_default_config(HatpicControllerConfig *out);

/**
 * Creates a control loop driven by the caller: the hand torque is passed to
 * each [`hatpic_controller_tick`].
 *
 * # Safety
 * `config` and `out` must be valid. Release with [`hatpic_controller_free`].
 */
HatpicStatus hatpic_controller_new(const HatpicControllerConfig *config, HatpicController **out);

/**
 * # Safety
 * `controller` must come from [`hatpic_controller_new`] and not be used
 * afterwards. NULL is ignored.
 */
void hatpic_controller_free(HatpicController *controller);

/**
 * Latches the external feedback torque from the host, N·m.
 *
 * # Safety
 * `controller` must be a live handle.
 */
HatpicStatus hatpic_controller_feedback(HatpicController *controller, double tau_ext);

/**
 * Runs one control period with the operator pushing `push` N·m.
 *
 * # Safety
 * `controller` must be a live handle and `out` valid.
 */
HatpicStatus hatpic_controller_tick(HatpicController *controller, double push, HatpicTick *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HATPIC_H */
