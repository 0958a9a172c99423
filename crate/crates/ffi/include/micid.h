#ifndef MICID_H
#define MICID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MicidStatus {
  MICID_STATUS_OK = 0,
  MICID_STATUS_NULL_POINTER = 1,
  MICID_STATUS_INVALID_ARGUMENT = 2,
  MICID_STATUS_CONFIG_ERROR = 3,
  MICID_STATUS_DATA_ERROR = 4,
  MICID_STATUS_IO_ERROR = 5,
  MICID_STATUS_DIVERGED = 6,
  MICID_STATUS_PANIC = 7,
} MicidStatus;

typedef struct MicidDenoiser MicidDenoiser;

typedef struct MicidPipeline MicidPipeline;

typedef struct MicidSpectrogram MicidSpectrogram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or NULL. The pointer
 stays valid until the next call into the library from the same thread.
 */
const char *micid_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *micid_version(void);

/*
 Loads a pipeline directory written by `micid train-svm`.

 # Safety
 `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MicidStatus micid_pipeline_load(const char *dir, struct MicidPipeline **out);

/*
 # Safety
 `p` must come from [`micid_pipeline_load`] or be NULL.
 */
void micid_pipeline_free(struct MicidPipeline *p);

/*
 Number of device classes, 0 for NULL.

 # Safety
 `p` must be a live pipeline or NULL.
 */
size_t micid_pipeline_class_count(const struct MicidPipeline *p);

/*
 Label of class `index`, or NULL when out of range. Owned by the pipeline.

 # Safety
 `p` must be a live pipeline or NULL.
 */
const char *micid_pipeline_class_label(const struct MicidPipeline *p, size_t index);

/*
 Identifies the device of a mono recording.

 `denoise` is 1 or 0 to force denoising on or off, or -1 for the
 pipeline's default. `scores` may be NULL; otherwise it must hold
 `scores_len` doubles, at least the class count.

 # Safety
 `samples` must point to `len` doubles; `out_index` must be writable.
 */
enum MicidStatus micid_pipeline_classify(const struct MicidPipeline *p,
                                         const double *samples,
                                         size_t len,
                                         uint32_t sample_rate,
                                         int32_t denoise,
                                         size_t *out_index,
                                         double *scores,
                                         size_t scores_len);

/*
 Log-power spectrogram with analysis window `window_len`.

 # Safety
 `samples` must point to `len` doubles; `out` must be writable.
 */
enum MicidStatus micid_spectrogram_compute(const double *samples,
                                           size_t len,
                                           uint32_t sample_rate,
                                           size_t window_len,
                                           struct MicidSpectrogram **out);

/*
 # Safety
 `s` must be a live spectrogram or NULL.
 */
size_t micid_spectrogram_bins(const struct MicidSpectrogram *s);

/*
 # Safety
 `s` must be a live spectrogram or NULL.
 */
size_t micid_spectrogram_frames(const struct MicidSpectrogram *s);

/*
 Copies the dB values, bin-major (`bins * frames` doubles).

 # Safety
 `dst` must hold `dst_len` doubles.
 */
enum MicidStatus micid_spectrogram_copy(const struct MicidSpectrogram *s,
                                        double *dst,
                                        size_t dst_len);

/*
 # Safety
 `s` must come from [`micid_spectrogram_compute`] or be NULL.
 */
void micid_spectrogram_free(struct MicidSpectrogram *s);

/*
 Loads a denoiser model file.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum MicidStatus micid_denoiser_load(const char *path, struct MicidDenoiser **out);

/*
 Denoises a spectrogram, returning a new one in `out`.

 # Safety
 `d` and `s` must be live objects; `out` must be writable.
 */
enum MicidStatus micid_denoiser_apply(const struct MicidDenoiser *d,
                                      const struct MicidSpectrogram *s,
                                      struct MicidSpectrogram **out);

/*
 # Safety
 `d` must come from [`micid_denoiser_load`] or be NULL.
 */
void micid_denoiser_free(struct MicidDenoiser *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICID_H */
