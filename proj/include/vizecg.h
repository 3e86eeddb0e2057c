/*
 * vizecg — multi-modal 12-lead ECG classifier library.
 *
 * C interface over the C++ core: opaque handles, status codes, and plain
 * config structs. Every function returns VZ_OK on success; on failure the
 * thread-local message from vz_last_error() describes what went wrong.
 */
#ifndef VIZECG_H
#define VIZECG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VIZECG_API __declspec(dllexport)
#else
#define VIZECG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vz_status {
    VZ_OK = 0,
    VZ_ERR_ARGUMENT = 1, /* invalid argument / API misuse */
    VZ_ERR_FORMAT = 2,   /* malformed file content */
    VZ_ERR_IO = 3,       /* filesystem failure */
    VZ_ERR_NUMERIC = 4   /* non-finite values, diverged training */
} vz_status;

VIZECG_API const char *vz_version(void);
/* Message for the most recent failure on this thread. */
VIZECG_API const char *vz_last_error(void);

typedef struct vz_dataset vz_dataset;
typedef struct vz_model vz_model;
typedef struct vz_image vz_image;

#define VZ_NUM_CLASSES 6
#define VZ_NUM_LEADS 12

/* Class display name for index 0..5: 1dAVb, RBBB, LBBB, SB, AF, ST. */
VIZECG_API const char *vz_class_name(int class_index);
/* Index for a class name (case-insensitive), or -1. */
VIZECG_API int vz_class_index(const char *name);

/* ---------------- synthetic data ---------------- */

typedef struct vz_synth_config {
    int t_len;
    double sample_rate_hz;
    double hr_normal_lo, hr_normal_hi;
    double hr_sb_lo, hr_sb_hi;
    double hr_st_lo, hr_st_hi;
    double qrs_mult_rbbb, qrs_mult_lbbb;
    double pr_base_s, pr_offset_avb_s;
    double sinus_rr_jitter, af_rr_jitter, af_p_suppression;
    double noise_mv;
    double prevalence[VZ_NUM_CLASSES];
    double co_occurrence;
} vz_synth_config;

VIZECG_API void vz_synth_config_init(vz_synth_config *cfg);

VIZECG_API vz_status vz_dataset_generate(const vz_synth_config *cfg, int n, uint64_t seed,
                                         vz_dataset **out);
VIZECG_API vz_status vz_dataset_save(const vz_dataset *ds, const char *path);
VIZECG_API vz_status vz_dataset_load(const char *path, vz_dataset **out);
/* Single-record dataset from a 12-column CSV with a header row. */
VIZECG_API vz_status vz_dataset_import_csv(const char *path, vz_dataset **out);
VIZECG_API int vz_dataset_size(const vz_dataset *ds);
VIZECG_API vz_status vz_dataset_labels(const vz_dataset *ds, int index, uint8_t *mask_out);
VIZECG_API vz_status vz_dataset_set_split(vz_dataset *ds, double train_frac, double val_frac,
                                          double test_frac, uint64_t seed);
VIZECG_API void vz_dataset_free(vz_dataset *ds);

/* ---------------- rendering ---------------- */

typedef struct vz_layout_spec {
    int rows, cols;
    int margin_px;
    int draw_grid; /* 0/1 */
    int grid_spacing_px;
    int trace_thickness_px;
    double mv_per_cell_height;
} vz_layout_spec;

VIZECG_API void vz_layout_spec_init(vz_layout_spec *layout);

/* detrend_first=1 applies the standard preprocessing before drawing. */
VIZECG_API vz_status vz_render_record(const vz_dataset *ds, int index,
                                      const vz_layout_spec *layout, int height, int width,
                                      int detrend_first, vz_image **out);
VIZECG_API vz_status vz_image_write_pgm(const vz_image *img, const char *path);
VIZECG_API vz_status vz_image_read_pgm(const char *path, vz_image **out);
VIZECG_API int vz_image_height(const vz_image *img);
VIZECG_API int vz_image_width(const vz_image *img);
VIZECG_API void vz_image_free(vz_image *img);

/* ---------------- model ---------------- */

typedef struct vz_model_config {
    int channels;    /* feature channels, both streams */
    int tokens;      /* attention token count */
    int head_hidden; /* MLP hidden width */
    int image_h, image_w;
    int widths[4]; /* extractor stage widths; widths[3] == channels */
    int sig_stem_kernel, sig_stem_stride, sig_block_kernel;
    int sig_trans_strides[3];
    int img_stem_kernel, img_stem_stride, img_block_kernel;
    int img_trans_strides[3];
    int enable_cmam, enable_smam; /* 0/1 */
    int attention_scale;          /* 0/1, optional 1/sqrt(d) inside attention */
    uint64_t init_seed;
} vz_model_config;

VIZECG_API void vz_model_config_init(vz_model_config *cfg);

VIZECG_API vz_status vz_model_create(const vz_model_config *cfg, vz_model **out);
VIZECG_API vz_status vz_model_save(const vz_model *m, const char *path);
VIZECG_API vz_status vz_model_load(const char *path, vz_model **out);
VIZECG_API vz_status vz_model_get_config(const vz_model *m, vz_model_config *out);
VIZECG_API int64_t vz_model_param_count(const vz_model *m);
VIZECG_API void vz_model_free(vz_model *m);

/* ---------------- training / evaluation ---------------- */

typedef struct vz_train_config {
    double lr_max, lr_min;
    int batch_size, epochs;
    double lambda1, lambda2;
    uint64_t seed;
    int kd_teacher_detach; /* 0/1 */
    int enable_cmam, enable_smam;
    double threshold;
    double eps;
    int threads; /* 0 = auto */
} vz_train_config;

VIZECG_API void vz_train_config_init(vz_train_config *cfg);

/* Trains in place; writes the line-delimited log to log_path when non-NULL. */
VIZECG_API vz_status vz_train(vz_model *m, const vz_dataset *ds, const vz_train_config *cfg,
                              const char *log_path);

typedef enum vz_split {
    VZ_SPLIT_TRAIN = 0,
    VZ_SPLIT_VAL = 1,
    VZ_SPLIT_TEST = 2,
    VZ_SPLIT_ALL = 3
} vz_split;

typedef enum vz_infer_mode { VZ_MODE_SIGNAL = 0, VZ_MODE_IMAGE = 1 } vz_infer_mode;

typedef struct vz_metrics {
    double precision[VZ_NUM_CLASSES], recall[VZ_NUM_CLASSES], f1[VZ_NUM_CLASSES];
    long tp[VZ_NUM_CLASSES], fp[VZ_NUM_CLASSES], fn[VZ_NUM_CLASSES], tn[VZ_NUM_CLASSES];
    double macro_precision, macro_recall, macro_f1;
} vz_metrics;

VIZECG_API vz_status vz_evaluate(const vz_model *m, const vz_dataset *ds, vz_split split,
                                 vz_infer_mode mode, double threshold, vz_metrics *out);
VIZECG_API vz_status vz_metrics_to_csv(const vz_metrics *metrics, const char *path);

/* Image-only prediction; the image must match the model's configured size. */
VIZECG_API vz_status vz_infer_image(const vz_model *m, const vz_image *img,
                                    double probs_out[VZ_NUM_CLASSES]);

/* ---------------- gradient checking ---------------- */

/*
 * Runs the finite-difference suite over every tensor op plus the end-to-end
 * tiny model, `seeds` times. Writes a per-op report into `report` (truncated
 * to report_len). *all_pass is set to 1 iff every check met its tolerance;
 * the return status is VZ_OK whenever the suite itself could run.
 */
VIZECG_API vz_status vz_gradcheck(int seeds, double op_tol, double e2e_tol, double step,
                                  char *report, size_t report_len, int *all_pass);

#ifdef __cplusplus
}
#endif

#endif /* VIZECG_H */
