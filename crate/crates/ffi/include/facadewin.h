#ifndef FACADEWIN_H
#define FACADEWIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  FW_STATUS_OK = 0,
  FW_STATUS_NULL_POINTER = 1,
  FW_STATUS_INVALID_ARGUMENT = 2,
  FW_STATUS_PARSE_ERROR = 3,
  FW_STATUS_IO_ERROR = 4,
  FW_STATUS_DIMENSION_MISMATCH = 5,
  FW_STATUS_TOO_SMALL = 6,
  FW_STATUS_UTF8_ERROR = 7,
  FW_STATUS_PANIC = 99,
} FwStatus;

typedef enum {
  FW_EVAL_MODE_BOX = 0,
  FW_EVAL_MODE_MASK = 1,
} FwEvalMode;

/**
 * Accumulates ground truth and detections for one evaluation run.
 */
typedef struct FwEvaluator FwEvaluator;

/**
 * Half-open pixel box `[x, x + w) × [y, y + h)`.
 */
typedef struct {
  uint32_t x;
  uint32_t y;
  uint32_t w;
  uint32_t h;
} FwBox;

typedef struct {
  /**
   * Caller-chosen image key; NMS only compares detections with equal keys.
   */
  uint64_t image;
  FwBox bbox;
  double score;
} FwDetection;

typedef struct {
  double recall;
  double precision;
  double ap50;
  uint64_t true_pos;
  uint64_t false_pos;
  uint64_t false_neg;
} FwReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *fw_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void fw_string_free(char *s);

/**
 * # Safety
 * `a`, `b` and `out` must be valid pointers.
 */
FwStatus fw_iou_box(const FwBox *a, const FwBox *b, double *out);

/**
 * Deepest stage `k` in `1..=5` keeping `object_width / 2^k > 3` px.
 *
 * # Safety
 * `out_k` must be a valid pointer.
 */
FwStatus fw_plan_depth(double object_width, uint32_t *out_k);

/**
 * Scales five loss weights to unit sum.
 *
 * # Safety
 * `weights` and `out` must each point to five doubles.
 */
FwStatus fw_normalize_weights(const double *weights, double *out);

/**
 * # Safety
 * `weights` and `losses` must each point to five doubles; `out` must be valid.
 */
FwStatus fw_combine_losses(const double *weights, const double *losses, double *out);

/**
 * Parses a CityGML document and returns the texture manifest as JSON in
 * `*out_json` (free with [`fw_string_free`]).
 *
 * # Safety
 * `document` must be a NUL-terminated string; `out_json` a valid pointer.
 */
FwStatus fw_citygml_parse(const char *document, char **out_json);

/**
 * Greedy per-image NMS. Writes the kept input indices, ascending, to
 * `out_keep` (capacity `n`) and their count to `out_len`.
 *
 * # Safety
 * `dets` must point to `n` detections (may be NULL when `n == 0`),
 * `out_keep` to room for `n` indices, `out_len` must be valid.
 */
FwStatus fw_nms(const FwDetection *dets,
                size_t n,
                double iou_threshold,
                size_t *out_keep,
                size_t *out_len);

/**
 * Creates an empty evaluator, or NULL on allocation failure.
 */
FwEvaluator *fw_evaluator_new(void);

/**
 * # Safety
 * `ev` must be NULL or a handle from [`fw_evaluator_new`], not yet freed.
 */
void fw_evaluator_free(FwEvaluator *ev);

/**
 * Adds a ground-truth window filling `bbox` on a `width`×`height` image.
 *
 * # Safety
 * `ev` must be a live handle; `image_id` a NUL-terminated string.
 */
FwStatus fw_evaluator_add_gt(FwEvaluator *ev,
                             const char *image_id,
                             uint32_t width,
                             uint32_t height,
                             FwBox bbox);

/**
 * Adds a ground-truth window from a row-major `width`×`height` bitmap
 * (non-zero = window).
 *
 * # Safety
 * `ev` must be a live handle, `image_id` NUL-terminated, `bits` must hold
 * `width * height` bytes.
 */
FwStatus fw_evaluator_add_gt_mask(FwEvaluator *ev,
                                  const char *image_id,
                                  uint32_t width,
                                  uint32_t height,
                                  const uint8_t *bits);

/**
 * Adds a box detection. When `bits` is non-NULL it is the detection's
 * row-major `width`×`height` mask, required for mask-mode evaluation.
 *
 * # Safety
 * `ev` must be a live handle, `image_id` NUL-terminated, and `bits` NULL
 * or holding `width * height` bytes.
 */
FwStatus fw_evaluator_add_det(FwEvaluator *ev,
                              const char *image_id,
                              FwBox bbox,
                              double score,
                              uint32_t width,
                              uint32_t height,
                              const uint8_t *bits);

/**
 * Scores the accumulated detections at operating threshold `p_min`.
 *
 * # Safety
 * `ev` must be a live handle and `out` a valid pointer.
 */
FwStatus fw_evaluator_evaluate(const FwEvaluator *ev, FwEvalMode mode, double p_min, FwReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACADEWIN_H */
