#ifndef FLOWLAB_H
#define FLOWLAB_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call. The first four values match the CLI exit codes.
typedef enum FlowlabStatus {
  FLOWLAB_STATUS_OK = 0,
  FLOWLAB_STATUS_CHECK_FAILED = 1,
  FLOWLAB_STATUS_INVALID_CONFIG = 2,
  FLOWLAB_STATUS_RUNTIME_FAILURE = 3,
  FLOWLAB_STATUS_NULL_ARGUMENT = 4,
  FLOWLAB_STATUS_INVALID_UTF8 = 5,
  FLOWLAB_STATUS_PANIC = 6,
} FlowlabStatus;

// Built-in checks for [`flowlab_verify`].
typedef enum FlowlabCheck {
  FLOWLAB_CHECK_DECOMPOSITION = 0,
  FLOWLAB_CHECK_GRADIENTS = 1,
  FLOWLAB_CHECK_SHIFT = 2,
} FlowlabCheck;

// Opaque `h × l` orthonormal embedding.
typedef struct FlowlabEmbedding FlowlabEmbedding;

// Opaque sampler for the built-in glyph distribution.
typedef struct FlowlabGlyph FlowlabGlyph;

// Opaque validated experiment spec.
typedef struct FlowlabSpec FlowlabSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on the same thread.
const char *flowlab_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *flowlab_version(void);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void flowlab_string_free(char *s);

// Timestep shift factor `√(channels·patch² / 16)`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum FlowlabStatus flowlab_shift_factor(uint64_t channels, uint64_t patch, double *out);

// Load the built-in "PS" glyph distribution.
//
// # Safety
// `out` must be a valid pointer; on success it receives a new handle.
enum FlowlabStatus flowlab_glyph_new(struct FlowlabGlyph **out);

// Draw `n` points. `points` receives `2n` doubles in row-major order and
// `labels`, if not NULL, receives `n` bytes (0 for P, 1 for S).
//
// # Safety
// `glyph` must be a live handle; buffers must hold the stated lengths.
enum FlowlabStatus flowlab_glyph_sample(const struct FlowlabGlyph *glyph,
                                        size_t n,
                                        uint64_t seed,
                                        double *points,
                                        uint8_t *labels);

// # Safety
// `glyph` must be NULL or a handle from [`flowlab_glyph_new`] not yet freed.
void flowlab_glyph_free(struct FlowlabGlyph *glyph);

// Random `h × l` matrix with orthonormal columns, `1 ≤ l < h`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a new handle.
enum FlowlabStatus flowlab_embedding_new(size_t h,
                                         size_t l,
                                         uint64_t seed,
                                         struct FlowlabEmbedding **out);

// Ambient and intrinsic dimensions of an embedding.
//
// # Safety
// `q` must be a live handle; `h` and `l` must be valid pointers.
enum FlowlabStatus flowlab_embedding_dims(const struct FlowlabEmbedding *q, size_t *h, size_t *l);

// Map `n` rows of width `l` to width `h` (`x = Qz`).
//
// # Safety
// `q` must be a live handle; `z` holds `n·l` doubles, `x` room for `n·h`.
enum FlowlabStatus flowlab_embedding_embed(const struct FlowlabEmbedding *q,
                                           const double *z,
                                           size_t n,
                                           double *x);

// Map `n` rows of width `h` to width `l` (`z = Qᵀx`).
//
// # Safety
// `q` must be a live handle; `x` holds `n·h` doubles, `z` room for `n·l`.
enum FlowlabStatus flowlab_embedding_project(const struct FlowlabEmbedding *q,
                                             const double *x,
                                             size_t n,
                                             double *z);

// # Safety
// `q` must be NULL or a handle from [`flowlab_embedding_new`] not yet freed.
void flowlab_embedding_free(struct FlowlabEmbedding *q);

// Parse and validate a JSON experiment spec.
//
// # Safety
// `json` must be a NUL-terminated string; `out` a valid pointer.
enum FlowlabStatus flowlab_spec_from_json(const char *json, struct FlowlabSpec **out);

// Hex SHA-256 of the canonical spec, as an owned string.
//
// # Safety
// `spec` must be a live handle; `out` a valid pointer.
enum FlowlabStatus flowlab_spec_config_hash(const struct FlowlabSpec *spec, char **out);

// Run the spec's recipe into `out_dir`, sequentially and deterministically.
// On success `manifest_json`, if not NULL, receives the manifest as an owned
// string.
//
// # Safety
// `spec` must be a live handle and `out_dir` a NUL-terminated path.
enum FlowlabStatus flowlab_run(const struct FlowlabSpec *spec,
                               const char *out_dir,
                               char **manifest_json);

// # Safety
// `spec` must be NULL or a handle from [`flowlab_spec_from_json`] not yet
// freed.
void flowlab_spec_free(struct FlowlabSpec *spec);

// Run a built-in check. Returns `CheckFailed` when a tolerance is exceeded;
// the JSON report is produced either way if `report_json` is not NULL.
//
// # Safety
// `report_json` must be NULL or a valid pointer.
enum FlowlabStatus flowlab_verify(enum FlowlabCheck check, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWLAB_H */
