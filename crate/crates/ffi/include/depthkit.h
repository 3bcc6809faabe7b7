#ifndef DEPTHKIT_H
#define DEPTHKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkAlign {
  DK_ALIGN_NONE = 0,
  DK_ALIGN_LSTSQ = 1,
  DK_ALIGN_MEDIAN = 2,
} DkAlign;

typedef enum DkRho {
  DK_RHO_L1 = 0,
  DK_RHO_L2 = 1,
} DkRho;

typedef enum DkStatus {
  DK_STATUS_OK = 0,
  // Null pointer or out-of-range argument.
  DK_STATUS_INVALID_ARGUMENT = 1,
  // Bad shapes, unreadable or malformed data.
  DK_STATUS_DATA_ERROR = 2,
  // Alignment or gradient check could not be carried out.
  DK_STATUS_DEGENERATE = 3,
  // Internal panic caught at the boundary.
  DK_STATUS_INTERNAL = 4,
} DkStatus;

// Opaque `height × width × channels` float grid.
typedef struct DkGrid DkGrid;

// Opaque network with fixed weights.
typedef struct DkNetwork DkNetwork;

typedef struct DkDepthQuality {
  double edge_consistency;
  double local_variance;
  double complexity;
  double sharpness;
} DkDepthQuality;

typedef struct DkNormalQuality {
  double edge_consistency;
  double orientation_variance;
  double sharpness;
} DkNormalQuality;

typedef struct DkScoreWeights {
  struct DkDepthQuality depth;
  struct DkNormalQuality normal;
} DkScoreWeights;

typedef struct DkScores {
  double depth;
  double normal;
  double combined;
} DkScores;

typedef struct DkDepthMetrics {
  double abs_rel;
  double sq_rel;
  double rmse;
  double log10;
  double delta1;
  double delta2;
  double delta3;
  size_t pixel_count;
} DkDepthMetrics;

typedef struct DkNormalMetrics {
  double mean_deg;
  double median_deg;
  double rms_deg;
  double acc_11_25;
  double acc_22_5;
  double acc_30;
  size_t pixel_count;
} DkNormalMetrics;

typedef struct DkLossConfig {
  enum DkRho rho;
  size_t scales;
  double alpha;
} DkLossConfig;

typedef struct DkLossReport {
  double ssi;
  double reg;
  double total;
  double scale;
  double shift;
} DkLossReport;

typedef struct DkFdReport {
  double max_rel_error;
  double max_abs_error;
  size_t checked;
  size_t excluded;
} DkFdReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call on the same thread.
const char *dk_last_error(void);

// Copies `height * width * channels` floats (row-major, channels last).
//
// # Safety
// `data` must point to that many floats; `out` must be writable.
enum DkStatus dk_grid_new(size_t height,
                          size_t width,
                          size_t channels,
                          const float *data,
                          struct DkGrid **out_grid);

// # Safety
// `grid` must come from this library or be null.
void dk_grid_free(struct DkGrid *grid);

// Writes the shape of `grid`.
//
// # Safety
// All pointers must be valid.
enum DkStatus dk_grid_shape(const struct DkGrid *grid,
                            size_t *height,
                            size_t *width,
                            size_t *channels);

// Borrowed pointer to the grid's values, valid while the grid lives.
//
// # Safety
// `grid` must be a live handle or null.
const float *dk_grid_data(const struct DkGrid *grid);

// Reads a depth map (`.pfm`, otherwise 16-bit PNG).
//
// # Safety
// `path` must be a NUL-terminated string; `out_grid` writable.
enum DkStatus dk_read_depth(const char *path, struct DkGrid **out_grid);

// Reads an 8-bit normal map into unit vectors.
//
// # Safety
// As for [`dk_read_depth`].
enum DkStatus dk_read_normals(const char *path, struct DkGrid **out_grid);

// Reads a colour image into `[0, 1]` RGB.
//
// # Safety
// As for [`dk_read_depth`].
enum DkStatus dk_read_rgb(const char *path, struct DkGrid **out_grid);

// Quality record of a depth candidate against its RGB image.
//
// # Safety
// All pointers must be valid.
enum DkStatus dk_evaluate_depth(const struct DkGrid *depth,
                                const struct DkGrid *rgb,
                                struct DkDepthQuality *out_quality);

// Quality record of a normal candidate against its RGB image.
//
// # Safety
// All pointers must be valid.
enum DkStatus dk_evaluate_normals(const struct DkGrid *normals,
                                  const struct DkGrid *rgb,
                                  struct DkNormalQuality *out_quality);

// Writes the default score weights.
//
// # Safety
// `out_weights` must be writable.
enum DkStatus dk_default_weights(struct DkScoreWeights *out_weights);

// Weighted scores of a candidate pair. Null `weights` uses the defaults.
//
// # Safety
// `depth`, `normal` and `out_scores` must be valid; `weights` may be null.
enum DkStatus dk_combined_score(const struct DkDepthQuality *depth,
                                const struct DkNormalQuality *normal,
                                const struct DkScoreWeights *weights,
                                struct DkScores *out_scores);

// Depth error metrics after the chosen alignment.
//
// # Safety
// Grid pointers and `out_metrics` must be valid; `mask` is null or holds
// `height * width` bytes.
enum DkStatus dk_depth_metrics(const struct DkGrid *pred,
                               const struct DkGrid *gt,
                               const uint8_t *mask,
                               enum DkAlign align,
                               struct DkDepthMetrics *out_metrics);

// Angular error metrics between two unit normal fields.
//
// # Safety
// As for [`dk_depth_metrics`].
enum DkStatus dk_normal_metrics(const struct DkGrid *pred,
                                const struct DkGrid *gt,
                                const uint8_t *mask,
                                struct DkNormalMetrics *out_metrics);

// Scale-and-shift invariant loss plus multi-scale gradient matching.
// Null `config` uses L1, 4 scales, alpha 0.5.
//
// # Safety
// As for [`dk_depth_metrics`]; `config` may be null.
enum DkStatus dk_total_loss(const struct DkGrid *pred,
                            const struct DkGrid *gt,
                            const uint8_t *mask,
                            const struct DkLossConfig *config,
                            struct DkLossReport *out_report);

// Compares the analytic loss gradient against central differences.
//
// # Safety
// As for [`dk_total_loss`].
enum DkStatus dk_fd_check(const struct DkGrid *pred,
                          const struct DkGrid *gt,
                          const uint8_t *mask,
                          const struct DkLossConfig *config,
                          struct DkFdReport *out_report);

// Span of a single dilated convolution: `(kernel - 1) * dilation + 1`.
//
// # Safety
// `out_span` must be writable.
enum DkStatus dk_receptive_field(size_t kernel, size_t dilation, size_t *out_span);

// Builds a network with seeded weights. `config` is null for the default
// architecture, or `key = value` lines overriding it.
//
// # Safety
// `config` is null or NUL-terminated; `out_net` must be writable.
enum DkStatus dk_net_new(const char *config, uint64_t seed, struct DkNetwork **out_net);

// # Safety
// `net` must come from [`dk_net_new`] or be null.
void dk_net_free(struct DkNetwork *net);

// # Safety
// Pointers must be valid.
enum DkStatus dk_net_param_count(const struct DkNetwork *net, size_t *out_count);

// Runs the network on an RGB grid whose sides are multiples of 16 and
// returns the disparity and normals of output `scale`, which has
// `1 / 2^scale` of the input resolution. Either output may be null if not
// wanted.
//
// # Safety
// `net` and `rgb` must be valid handles; non-null outputs writable.
enum DkStatus dk_net_forward(const struct DkNetwork *net,
                             const struct DkGrid *rgb,
                             size_t scale,
                             struct DkGrid **out_disparity,
                             struct DkGrid **out_normals);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHKIT_H */
