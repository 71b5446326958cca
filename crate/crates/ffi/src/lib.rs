//! C interface to the fusion library.
//!
//! Grids and meshes are opaque heap handles released with their `*_free`
//! function. Every fallible call returns a [`TsdfStatus`]; on failure the
//! message is available from [`tsdf_last_error`] on the same thread.
//!
//! Poses are 12 doubles: the row-major camera-to-scene rotation followed by
//! the translation. Depth images are row-major `float` meters, with 0 or NaN
//! marking pixels without a measurement.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tsdf_fusion::fusion::fuse_frame;
use tsdf_fusion::geometry::compute_normals;
use tsdf_fusion::grid::AuxEncoding;
use tsdf_fusion::pipeline::{run, write_outputs, PipelineConfig};
use tsdf_fusion::registration::icp;
use tsdf_fusion::render::{marching_cubes, render_view, sample_tsdf, MarchingCubesParams};
use tsdf_fusion::{
    DepthFrame, FusionError, FusionMode, FusionParams, GridConfig, Intrinsics, MatchParams, Mesh, Pose, Precision,
    SparseTsdfGrid, Vec3,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfDomain = 3,
    PoolExhausted = 4,
    TrackingLost = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsdfMode {
    Simple = 0,
    Weighted = 1,
    Kalman = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsdfIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

/// Grid layout and update rule for [`tsdf_grid_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsdfGridDesc {
    /// Blocks along each axis.
    pub blocks_per_axis: u32,
    /// Voxels along each block axis.
    pub block_size: u32,
    /// Minimum corner of the cubic box, meters.
    pub box_origin: [f64; 3],
    pub box_side: f64,
    /// Truncation distance in voxels.
    pub truncation_voxels: f64,
    /// Payload slots; 0 reserves one per block.
    pub pool_capacity: u32,
    /// Nonzero stores full precision values instead of bytes.
    pub float_precision: u8,
    /// One of the [`TsdfMode`] values.
    pub mode: u32,
    /// Depth noise coefficient, deviation `sigma0 · z²`.
    pub sigma0: f64,
}

/// Opaque grid handle.
pub struct TsdfGrid {
    grid: SparseTsdfGrid,
    params: FusionParams,
}

/// Opaque mesh handle.
pub struct TsdfMesh {
    mesh: Mesh,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &FusionError) -> TsdfStatus {
    match err {
        FusionError::InvalidConfig(_) | FusionError::EmptyMatches => TsdfStatus::InvalidArgument,
        FusionError::OutOfDomain(..) | FusionError::UnallocatedBlock(..) => TsdfStatus::OutOfDomain,
        FusionError::PoolExhausted { .. } => TsdfStatus::PoolExhausted,
        FusionError::TrackingLost { .. } => TsdfStatus::TrackingLost,
        FusionError::Io { .. } => TsdfStatus::Io,
        FusionError::Format { .. } => TsdfStatus::Format,
    }
}

struct Failure(TsdfStatus, String);

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TsdfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(TsdfStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsdfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            TsdfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn pose_arg(p: *const f64) -> Result<Pose, Failure> {
    if p.is_null() {
        return Err(null("pose"));
    }
    Ok(Pose::from_row(std::slice::from_raw_parts(p, 12))?)
}

unsafe fn write_pose(pose: &Pose, out: *mut f64) {
    ptr::copy_nonoverlapping(pose.to_row().as_ptr(), out, 12);
}

fn intrinsics_arg(k: &TsdfIntrinsics) -> Result<Intrinsics, Failure> {
    Ok(Intrinsics::new(
        k.width as usize,
        k.height as usize,
        k.fx,
        k.fy,
        k.cx,
        k.cy,
        k.near,
        k.far,
    )?)
}

unsafe fn frame_arg(depth: *const f32, k: &TsdfIntrinsics) -> Result<DepthFrame, Failure> {
    if depth.is_null() {
        return Err(null("depth"));
    }
    let intrinsics = intrinsics_arg(k)?;
    let pixels = std::slice::from_raw_parts(depth, intrinsics.pixel_count())
        .iter()
        .map(|&d| if d.is_finite() && d > 0.0 { d } else { 0.0 })
        .collect();
    Ok(DepthFrame::new(intrinsics, pixels, None)?)
}

fn mode_of(aux: &AuxEncoding) -> FusionMode {
    match aux {
        AuxEncoding::Weight { .. } => FusionMode::Weighted,
        _ => FusionMode::Kalman,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tsdf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an empty grid.
///
/// # Safety
/// `desc` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_new(desc: *const TsdfGridDesc, out: *mut *mut TsdfGrid) -> TsdfStatus {
    guard(|| {
        let d = deref(desc, "desc")?;
        let out = deref_mut(out, "out")?;
        let mode = match d.mode {
            m if m == TsdfMode::Simple as u32 => FusionMode::Simple,
            m if m == TsdfMode::Weighted as u32 => FusionMode::Weighted,
            m if m == TsdfMode::Kalman as u32 => FusionMode::Kalman,
            m => return Err(invalid(format!("unknown fusion mode {m}"))),
        };
        let base = GridConfig::new(
            d.blocks_per_axis as usize,
            d.block_size as usize,
            Vec3::from(d.box_origin),
            d.box_side,
        )?;
        let base = base.with_truncation(d.truncation_voxels * base.voxel_size())?;
        let mut params = FusionParams::new(mode, base.truncation);
        params.sigma0 = d.sigma0;
        params.validate()?;
        let config = base.with_aux(params.aux_encoding())?;
        let capacity = match d.pool_capacity {
            0 => config.block_count(),
            n => n as usize,
        };
        let precision = if d.float_precision != 0 {
            Precision::Float
        } else {
            Precision::Quantized
        };
        let grid = SparseTsdfGrid::new(config, capacity, precision)?;
        *out = Box::into_raw(Box::new(TsdfGrid { grid, params }));
        Ok(())
    })
}

/// Loads a grid snapshot with one pool slot per block. Weight-encoded grids
/// fuse with the weighted rule, variance-encoded grids with the Kalman rule.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_load(path: *const c_char, out: *mut *mut TsdfGrid) -> TsdfStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = deref_mut(out, "out")?;
        let mut grid = SparseTsdfGrid::read_snapshot(&path)?;
        let config = *grid.config();
        grid.reserve(config.block_count())?;
        let mut params = FusionParams::new(mode_of(&config.aux), config.truncation);
        if let AuxEncoding::Weight { max } = config.aux {
            params.w_max = max;
        }
        *out = Box::into_raw(Box::new(TsdfGrid { grid, params }));
        Ok(())
    })
}

/// Writes a grid snapshot.
///
/// # Safety
/// `grid` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_save(grid: *const TsdfGrid, path: *const c_char) -> TsdfStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        g.grid.write_snapshot(&path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_free(grid: *mut TsdfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Integrates one depth image taken from `pose`.
///
/// # Safety
/// `depth` must hold `width · height` floats and `pose` 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_fuse(
    grid: *mut TsdfGrid,
    depth: *const f32,
    intrinsics: *const TsdfIntrinsics,
    pose: *const f64,
) -> TsdfStatus {
    guard(|| {
        let g = deref_mut(grid, "grid")?;
        let frame = frame_arg(depth, deref(intrinsics, "intrinsics")?)?;
        let pose = pose_arg(pose)?;
        fuse_frame(&mut g.grid, &frame, &pose, &g.params)?;
        Ok(())
    })
}

/// Trilinear distance at a scene point. `*observed` is 0 where any
/// neighbouring voxel lacks a value, and `*value` is then left untouched.
///
/// # Safety
/// `point` must hold 3 doubles; `value` and `observed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_sample(
    grid: *const TsdfGrid,
    point: *const f64,
    value: *mut f64,
    observed: *mut u8,
) -> TsdfStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        if point.is_null() {
            return Err(null("point"));
        }
        let observed = deref_mut(observed, "observed")?;
        let value = deref_mut(value, "value")?;
        let p = std::slice::from_raw_parts(point, 3);
        match sample_tsdf(&g.grid, &Vec3::new(p[0], p[1], p[2])) {
            Some(d) => {
                *value = d;
                *observed = 1;
            }
            None => *observed = 0,
        }
        Ok(())
    })
}

/// Number of allocated blocks; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_allocated_blocks(grid: *const TsdfGrid) -> u64 {
    grid.as_ref().map_or(0, |g| g.grid.allocated_count() as u64)
}

/// Bytes held by payload and offset storage; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_memory_bytes(grid: *const TsdfGrid) -> u64 {
    grid.as_ref().map_or(0, |g| g.grid.memory_bytes())
}

/// Raycasts the surface seen from `pose` into `depth_out`, writing 0 where
/// no surface is hit.
///
/// # Safety
/// `depth_out` must hold `width · height` floats and `pose` 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_raycast(
    grid: *const TsdfGrid,
    intrinsics: *const TsdfIntrinsics,
    pose: *const f64,
    depth_out: *mut f32,
) -> TsdfStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        let k = intrinsics_arg(deref(intrinsics, "intrinsics")?)?;
        let pose = pose_arg(pose)?;
        if depth_out.is_null() {
            return Err(null("depth_out"));
        }
        let (frame, _) = render_view(&g.grid, &pose, &k);
        ptr::copy_nonoverlapping(frame.depth.as_ptr(), depth_out, frame.depth.len());
        Ok(())
    })
}

/// Extracts the zero level set as a triangle mesh.
///
/// # Safety
/// `grid` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn tsdf_grid_extract_mesh(grid: *const TsdfGrid, out: *mut *mut TsdfMesh) -> TsdfStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        let out = deref_mut(out, "out")?;
        let mesh = marching_cubes(&g.grid, None, &MarchingCubesParams::default());
        *out = Box::into_raw(Box::new(TsdfMesh { mesh }));
        Ok(())
    })
}

/// Vertex count; 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tsdf_mesh_vertex_count(mesh: *const TsdfMesh) -> u64 {
    mesh.as_ref().map_or(0, |m| m.mesh.vertices.len() as u64)
}

/// Triangle count; 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tsdf_mesh_triangle_count(mesh: *const TsdfMesh) -> u64 {
    mesh.as_ref().map_or(0, |m| m.mesh.triangles.len() as u64)
}

/// Copies vertex positions (3 doubles each) and, when non-null, unit normals
/// (3 doubles each) and triangle indices (3 per triangle).
///
/// # Safety
/// Each non-null buffer must be large enough for the counts reported above.
#[no_mangle]
pub unsafe extern "C" fn tsdf_mesh_copy(
    mesh: *const TsdfMesh,
    positions: *mut f64,
    normals: *mut f64,
    triangles: *mut u32,
) -> TsdfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.mesh;
        let flat = |vs: &[Vec3]| vs.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<_>>();
        if !positions.is_null() {
            let f = flat(&m.vertices);
            ptr::copy_nonoverlapping(f.as_ptr(), positions, f.len());
        }
        if !normals.is_null() {
            let f = flat(&m.normals);
            ptr::copy_nonoverlapping(f.as_ptr(), normals, f.len());
        }
        if !triangles.is_null() {
            let f: Vec<u32> = m.triangles.iter().flatten().copied().collect();
            ptr::copy_nonoverlapping(f.as_ptr(), triangles, f.len());
        }
        Ok(())
    })
}

/// Releases a mesh. Null is ignored.
///
/// # Safety
/// `mesh` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tsdf_mesh_free(mesh: *mut TsdfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Registers `source` against `target` (both taken with `intrinsics`) with
/// gated point-to-plane ICP. `initial` and `delta_out` are source-to-target
/// camera motions; `voxel_size` scales the matching thresholds.
///
/// # Safety
/// Depth buffers must hold `width · height` floats, poses 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn tsdf_register(
    source: *const f32,
    target: *const f32,
    intrinsics: *const TsdfIntrinsics,
    voxel_size: f64,
    initial: *const f64,
    delta_out: *mut f64,
) -> TsdfStatus {
    guard(|| {
        let k = deref(intrinsics, "intrinsics")?;
        if !voxel_size.is_finite() || voxel_size <= 0.0 {
            return Err(invalid("voxel_size must be positive and finite"));
        }
        let (s, t) = (frame_arg(source, k)?, frame_arg(target, k)?);
        let initial = if initial.is_null() {
            Pose::identity()
        } else {
            pose_arg(initial)?
        };
        if delta_out.is_null() {
            return Err(null("delta_out"));
        }
        let result = icp(
            &s,
            &compute_normals(&s, voxel_size),
            &t,
            &compute_normals(&t, voxel_size),
            &initial,
            &MatchParams::for_voxel_size(voxel_size),
        )?;
        write_pose(&result.delta, delta_out);
        Ok(())
    })
}

/// Runs the full pipeline from a TOML config and writes its outputs. Outputs
/// are also written when the run stops early, in which case the stopping
/// error is returned.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsdf_run_config(config_path: *const c_char) -> TsdfStatus {
    guard(|| {
        let path = path_arg(config_path)?;
        let config = PipelineConfig::load(&path)?;
        let output = run(&config)?;
        write_outputs(&output, &config, &config.output.dir)?;
        match output.error() {
            Some(e) => Err(Failure(status_of(e), e.to_string())),
            None => Ok(()),
        }
    })
}
