#ifndef TSDF_FUSION_H
#define TSDF_FUSION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum TsdfStatus {
  TSDF_STATUS_OK = 0,
  TSDF_STATUS_NULL_POINTER = 1,
  TSDF_STATUS_INVALID_ARGUMENT = 2,
  TSDF_STATUS_OUT_OF_DOMAIN = 3,
  TSDF_STATUS_POOL_EXHAUSTED = 4,
  TSDF_STATUS_TRACKING_LOST = 5,
  TSDF_STATUS_IO = 6,
  TSDF_STATUS_FORMAT = 7,
  TSDF_STATUS_PANIC = 8,
} TsdfStatus;

typedef enum TsdfMode {
  TSDF_MODE_SIMPLE = 0,
  TSDF_MODE_WEIGHTED = 1,
  TSDF_MODE_KALMAN = 2,
} TsdfMode;

// Opaque grid handle.
typedef struct TsdfGrid TsdfGrid;

// Opaque mesh handle.
typedef struct TsdfMesh TsdfMesh;

// Grid layout and update rule for [`tsdf_grid_new`].
typedef struct TsdfGridDesc {
  // Blocks along each axis.
  uint32_t blocks_per_axis;
  // Voxels along each block axis.
  uint32_t block_size;
  // Minimum corner of the cubic box, meters.
  double box_origin[3];
  double box_side;
  // Truncation distance in voxels.
  double truncation_voxels;
  // Payload slots; 0 reserves one per block.
  uint32_t pool_capacity;
  // Nonzero stores full precision values instead of bytes.
  uint8_t float_precision;
  // One of the [`TsdfMode`] values.
  uint32_t mode;
  // Depth noise coefficient, deviation `sigma0 · z²`.
  double sigma0;
} TsdfGridDesc;

typedef struct TsdfIntrinsics {
  uint32_t width;
  uint32_t height;
  double fx;
  double fy;
  double cx;
  double cy;
  double near;
  double far;
} TsdfIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *tsdf_last_error(void);

// Creates an empty grid.
//
// # Safety
// `desc` and `out` must be valid pointers.
enum TsdfStatus tsdf_grid_new(const struct TsdfGridDesc *desc, struct TsdfGrid **out);

// Loads a grid snapshot with one pool slot per block. Weight-encoded grids
// fuse with the weighted rule, variance-encoded grids with the Kalman rule.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TsdfStatus tsdf_grid_load(const char *path, struct TsdfGrid **out);

// Writes a grid snapshot.
//
// # Safety
// `grid` must come from this library and `path` be NUL-terminated.
enum TsdfStatus tsdf_grid_save(const struct TsdfGrid *grid, const char *path);

// Releases a grid. Null is ignored.
//
// # Safety
// `grid` must come from this library and not be used afterwards.
void tsdf_grid_free(struct TsdfGrid *grid);

// Integrates one depth image taken from `pose`.
//
// # Safety
// `depth` must hold `width · height` floats and `pose` 12 doubles.
enum TsdfStatus tsdf_grid_fuse(struct TsdfGrid *grid,
                               const float *depth,
                               const struct TsdfIntrinsics *intrinsics,
                               const double *pose);

// Trilinear distance at a scene point. `*observed` is 0 where any
// neighbouring voxel lacks a value, and `*value` is then left untouched.
//
// # Safety
// `point` must hold 3 doubles; `value` and `observed` must be valid.
enum TsdfStatus tsdf_grid_sample(const struct TsdfGrid *grid,
                                 const double *point,
                                 double *value,
                                 uint8_t *observed);

// Number of allocated blocks; 0 for a null handle.
//
// # Safety
// `grid` must be null or come from this library.
uint64_t tsdf_grid_allocated_blocks(const struct TsdfGrid *grid);

// Bytes held by payload and offset storage; 0 for a null handle.
//
// # Safety
// `grid` must be null or come from this library.
uint64_t tsdf_grid_memory_bytes(const struct TsdfGrid *grid);

// Raycasts the surface seen from `pose` into `depth_out`, writing 0 where
// no surface is hit.
//
// # Safety
// `depth_out` must hold `width · height` floats and `pose` 12 doubles.
enum TsdfStatus tsdf_grid_raycast(const struct TsdfGrid *grid,
                                  const struct TsdfIntrinsics *intrinsics,
                                  const double *pose,
                                  float *depth_out);

// Extracts the zero level set as a triangle mesh.
//
// # Safety
// `grid` must come from this library and `out` be valid.
enum TsdfStatus tsdf_grid_extract_mesh(const struct TsdfGrid *grid, struct TsdfMesh **out);

// Vertex count; 0 for a null handle.
//
// # Safety
// `mesh` must be null or come from this library.
uint64_t tsdf_mesh_vertex_count(const struct TsdfMesh *mesh);

// Triangle count; 0 for a null handle.
//
// # Safety
// `mesh` must be null or come from this library.
uint64_t tsdf_mesh_triangle_count(const struct TsdfMesh *mesh);

// Copies vertex positions (3 doubles each) and, when non-null, unit normals
// (3 doubles each) and triangle indices (3 per triangle).
//
// # Safety
// Each non-null buffer must be large enough for the counts reported above.
enum TsdfStatus tsdf_mesh_copy(const struct TsdfMesh *mesh,
                               double *positions,
                               double *normals,
                               uint32_t *triangles);

// Releases a mesh. Null is ignored.
//
// # Safety
// `mesh` must come from this library and not be used afterwards.
void tsdf_mesh_free(struct TsdfMesh *mesh);

// Registers `source` against `target` (both taken with `intrinsics`) with
// gated point-to-plane ICP. `initial` and `delta_out` are source-to-target
// camera motions; `voxel_size` scales the matching thresholds.
//
// # Safety
// Depth buffers must hold `width · height` floats, poses 12 doubles.
enum TsdfStatus tsdf_register(const float *source,
                              const float *target,
                              const struct TsdfIntrinsics *intrinsics,
                              double voxel_size,
                              const double *initial,
                              double *delta_out);

// Runs the full pipeline from a TOML config and writes its outputs. Outputs
// are also written when the run stops early, in which case the stopping
// error is returned.
//
// # Safety
// `config_path` must be NUL-terminated.
enum TsdfStatus tsdf_run_config(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSDF_FUSION_H */
