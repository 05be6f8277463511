#ifndef DERIVLAB_H
#define DERIVLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(DERIVLAB_BUILDING_LIBRARY)
#define DL_API __attribute__((visibility("default")))
#else
#define DL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dl_status {
  DL_OK = 0,
  DL_ERR_ARGUMENT = 1,   /* null pointer, bad buffer size */
  DL_ERR_SCHEMA = 2,     /* config schema or configuration error */
  DL_ERR_SHAPE = 3,
  DL_ERR_NUMERICAL = 4,  /* non-finite loss, divergence, instability */
  DL_ERR_SPEC = 5,       /* missing targets, capability, domain */
  DL_ERR_IO = 6,
  DL_ERR_RUNTIME = 7
} dl_status;

typedef struct dl_network dl_network;

typedef struct dl_run_options {
  const char* config_path;  /* required */
  const char* out_dir;      /* NULL: the config's output */
  int full;                 /* nonzero: apply the config's `full` block */
  int has_seed;
  uint64_t seed;
} dl_run_options;

/* Message of the last failing call on this thread ("" after success). */
DL_API const char* dl_last_error(void);
DL_API const char* dl_version(void);
/* 2 for schema/config errors, 1 for any other failure, 0 for DL_OK. */
DL_API int dl_exit_code(dl_status status);

DL_API dl_status dl_network_create(const int* layer_dims, size_t count, uint64_t seed, dl_network** out);
DL_API dl_status dl_network_load(const char* path, dl_network** out);
DL_API dl_status dl_network_save(const dl_network* net, const char* path);
DL_API void dl_network_free(dl_network* net);
/* Writes up to `capacity` sizes; `count` receives the full length. */
DL_API dl_status dl_network_dims(const dl_network* net, int* dims, size_t capacity, size_t* count);
DL_API dl_status dl_network_forward(const dl_network* net, const double* x, size_t nx, double* y, size_t ny);
/* value: m; jacobian: m*d row-major; hessian (order 2, may be NULL): m*d*d. */
DL_API dl_status dl_network_input_derivatives(const dl_network* net, const double* x, size_t nx, int order,
                                              double* value, double* jacobian, double* hessian);

DL_API dl_status dl_generate(const dl_run_options* options);
DL_API dl_status dl_train(const dl_run_options* options);
DL_API dl_status dl_transfer(const dl_run_options* options);
DL_API dl_status dl_evaluate(const dl_run_options* options, const char* network_path);
/* Fails with DL_ERR_IO when a directory lacks metrics (the row is still written). */
DL_API dl_status dl_report(const char* const* run_dirs, size_t count, const char* out_csv);
DL_API dl_status dl_diff(const char* a, const char* b, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif
