//! Block-sparse TSDF storage.
//!
//! The volume is tiled by `N³` coarse blocks of `M³` voxels each. An offset
//! table holds, per block, either [`EMPTY`] or the index of the block's slot in
//! a preallocated payload pool. Each voxel stores one byte of quantized
//! distance and one byte of auxiliary state (weight or variance); a distance
//! code of [`CHI_CODE`] is the "no surface nearby" mark χ.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::Vec3;

/// Distance code reserved for χ.
pub const CHI_CODE: i8 = -128;
/// Largest distance code; `±TSDF_CODE_MAX` map to `±δ`.
pub const TSDF_CODE_MAX: i8 = 127;
/// Offset table entry of a block without payload.
pub const EMPTY: i32 = -1;

pub const BYTES_PER_VOXEL: usize = 2;
pub const BYTES_PER_OFFSET: usize = 4;

/// Largest dense resolution accepted by [`FloatShadowGrid`].
pub const MAX_SHADOW_RESOLUTION: usize = 128;

const SNAPSHOT_MAGIC: &[u8; 4] = b"STSG";
const SNAPSHOT_VERSION: u32 = 1;

pub type BlockCoord = [usize; 3];

/// How the auxiliary byte of a voxel is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxEncoding {
    /// Accumulated weight, linear over `[0, max]`.
    Weight { max: f64 },
    /// Estimate variance in m², logarithmic over `[min, max]`.
    Variance { min: f64, max: f64 },
}

impl Default for AuxEncoding {
    fn default() -> Self {
        AuxEncoding::Weight { max: 20.0 }
    }
}

impl AuxEncoding {
    pub const DEFAULT_VARIANCE: AuxEncoding = AuxEncoding::Variance { min: 1e-8, max: 1e-2 };

    pub fn quantize(&self, value: f64) -> u8 {
        let x = match *self {
            AuxEncoding::Weight { max } => value / max,
            AuxEncoding::Variance { min, max } => {
                if value <= 0.0 {
                    0.0
                } else {
                    (value.ln() - min.ln()) / (max.ln() - min.ln())
                }
            }
        };
        (x.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    pub fn dequantize(&self, code: u8) -> f64 {
        let x = code as f64 / 255.0;
        match *self {
            AuxEncoding::Weight { max } => x * max,
            AuxEncoding::Variance { min, max } => (min.ln() + x * (max.ln() - min.ln())).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AuxEncoding::Weight { max } => max > 0.0,
            AuxEncoding::Variance { min, max } => min > 0.0 && max > min,
        };
        if ok {
            Ok(())
        } else {
            Err(FusionError::InvalidConfig(format!("bad aux encoding {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub blocks_per_axis: usize,
    pub voxels_per_block_axis: usize,
    /// Minimum corner of the scanning box.
    pub box_origin: Vec3,
    pub box_side: f64,
    /// Truncation distance δ in meters.
    pub truncation: f64,
    pub aux: AuxEncoding,
}

impl GridConfig {
    /// Config with δ = 4 voxels and the default weight encoding.
    pub fn new(blocks_per_axis: usize, voxels_per_block_axis: usize, box_origin: Vec3, box_side: f64) -> Result<Self> {
        let resolution = (blocks_per_axis * voxels_per_block_axis).max(1);
        let config = Self {
            blocks_per_axis,
            voxels_per_block_axis,
            box_origin,
            box_side,
            truncation: 4.0 * box_side / resolution as f64,
            aux: AuxEncoding::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_truncation(mut self, truncation: f64) -> Result<Self> {
        self.truncation = truncation;
        self.validate()?;
        Ok(self)
    }

    pub fn with_aux(mut self, aux: AuxEncoding) -> Result<Self> {
        self.aux = aux;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_axis == 0 || self.voxels_per_block_axis == 0 {
            return Err(FusionError::InvalidConfig(
                "blocks per axis and voxels per block axis must be at least 1".into(),
            ));
        }
        if self.blocks_per_axis > 1024 {
            return Err(FusionError::InvalidConfig("more than 1024 blocks per axis".into()));
        }
        if !(self.box_side > 0.0) || !self.box_origin.iter().all(|c| c.is_finite()) {
            return Err(FusionError::InvalidConfig("box side must be positive".into()));
        }
        if !(self.truncation >= 2.0 * self.voxel_size() * (1.0 - 1e-12)) {
            return Err(FusionError::InvalidConfig(format!(
                "truncation {} is below two voxel sizes ({})",
                self.truncation,
                2.0 * self.voxel_size()
            )));
        }
        self.aux.validate()
    }

    /// Voxels per axis, `N·M`.
    #[inline]
    pub fn resolution(&self) -> usize {
        self.blocks_per_axis * self.voxels_per_block_axis
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        self.box_side / self.resolution() as f64
    }

    #[inline]
    pub fn block_size(&self) -> f64 {
        self.box_side / self.blocks_per_axis as f64
    }

    #[inline]
    pub fn voxels_per_block(&self) -> usize {
        self.voxels_per_block_axis.pow(3)
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.blocks_per_axis.pow(3)
    }

    /// Distance represented by one step of the 8-bit distance code.
    #[inline]
    pub fn quantization_step(&self) -> f64 {
        self.truncation / TSDF_CODE_MAX as f64
    }

    #[inline]
    pub fn block_index(&self, b: BlockCoord) -> usize {
        let n = self.blocks_per_axis;
        b[0] + n * (b[1] + n * b[2])
    }

    #[inline]
    pub fn block_coord(&self, index: usize) -> BlockCoord {
        let n = self.blocks_per_axis;
        [index % n, (index / n) % n, index / (n * n)]
    }

    /// Scene position of a voxel center.
    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> Vec3 {
        let s = self.voxel_size();
        self.box_origin
            + Vec3::new(
                (v[0] as f64 + 0.5) * s,
                (v[1] as f64 + 0.5) * s,
                (v[2] as f64 + 0.5) * s,
            )
    }

    /// Block containing a scene point, if inside the box.
    #[inline]
    pub fn block_of_point(&self, p: &Vec3) -> Option<BlockCoord> {
        let rel = (p - self.box_origin) / self.block_size();
        let n = self.blocks_per_axis as f64;
        if rel.iter().all(|&c| c >= 0.0 && c < n) {
            Some([rel.x as usize, rel.y as usize, rel.z as usize])
        } else {
            None
        }
    }

    /// Axis-aligned bounds of a block.
    pub fn block_bounds(&self, b: BlockCoord) -> (Vec3, Vec3) {
        let s = self.block_size();
        let lo = self.box_origin + Vec3::new(b[0] as f64, b[1] as f64, b[2] as f64) * s;
        (lo, lo + Vec3::repeat(s))
    }

    /// Payload plus offset table bytes for `blocks` allocated blocks.
    pub fn memory_bytes_for(&self, blocks: usize) -> u64 {
        BYTES_PER_VOXEL as u64 * blocks as u64 * self.voxels_per_block() as u64
            + BYTES_PER_OFFSET as u64 * self.block_count() as u64
    }
}

/// One quantized voxel: distance code and auxiliary code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelPayload {
    pub tsdf_code: i8,
    pub aux_code: u8,
}

impl VoxelPayload {
    pub const CHI: VoxelPayload = VoxelPayload {
        tsdf_code: CHI_CODE,
        aux_code: 0,
    };
}

/// Maps a distance (or χ as `None`) to its code; distances are clamped to
/// `[−δ, δ]`.
#[inline]
pub fn quantize_tsdf(d: Option<f64>, truncation: f64) -> i8 {
    match d {
        None => CHI_CODE,
        Some(d) if d.is_nan() => CHI_CODE,
        Some(d) => {
            let x = (d / truncation).clamp(-1.0, 1.0) * TSDF_CODE_MAX as f64;
            x.round() as i8
        }
    }
}

#[inline]
pub fn dequantize_tsdf(code: i8, truncation: f64) -> Option<f64> {
    (code != CHI_CODE).then(|| code as f64 / TSDF_CODE_MAX as f64 * truncation)
}

/// Decoded voxel state. `tsdf == None` is χ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub tsdf: Option<f64>,
    pub aux: f64,
}

impl Voxel {
    pub const CHI: Voxel = Voxel { tsdf: None, aux: 0.0 };
}

/// Payload storage mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Two bytes per voxel.
    #[default]
    Quantized,
    /// Full `f64` distance and auxiliary value; used for oracle comparisons.
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FloatVoxel {
    tsdf: f64, // NaN is χ
    aux: f64,
}

impl FloatVoxel {
    const CHI: FloatVoxel = FloatVoxel {
        tsdf: f64::NAN,
        aux: 0.0,
    };
}

#[derive(Debug, Clone)]
enum Pool {
    Quantized(Vec<VoxelPayload>),
    Float(Vec<FloatVoxel>),
}

/// Mutable view of one block's payload.
pub struct BlockMut<'a> {
    data: BlockData<'a>,
    truncation: f64,
    aux: AuxEncoding,
}

enum BlockData<'a> {
    Quantized(&'a mut [VoxelPayload]),
    Float(&'a mut [FloatVoxel]),
}

impl BlockMut<'_> {
    /// Voxel at a block-local linear index (x fastest).
    #[inline]
    pub fn get(&self, i: usize) -> Voxel {
        match &self.data {
            BlockData::Quantized(d) => Voxel {
                tsdf: dequantize_tsdf(d[i].tsdf_code, self.truncation),
                aux: self.aux.dequantize(d[i].aux_code),
            },
            BlockData::Float(d) => Voxel {
                tsdf: (!d[i].tsdf.is_nan()).then_some(d[i].tsdf),
                aux: d[i].aux,
            },
        }
    }

    /// Stores a voxel; distances beyond δ become χ.
    #[inline]
    pub fn set(&mut self, i: usize, v: Voxel) {
        let tsdf = v.tsdf.filter(|d| d.abs() <= self.truncation);
        match &mut self.data {
            BlockData::Quantized(d) => {
                d[i] = match tsdf {
                    None => VoxelPayload::CHI,
                    Some(t) => VoxelPayload {
                        tsdf_code: quantize_tsdf(Some(t), self.truncation),
                        aux_code: self.aux.quantize(v.aux),
                    },
                }
            }
            BlockData::Float(d) => {
                d[i] = match tsdf {
                    None => FloatVoxel::CHI,
                    Some(t) => FloatVoxel { tsdf: t, aux: v.aux },
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            BlockData::Quantized(d) => d.len(),
            BlockData::Float(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Two-level sparse TSDF volume with a preallocated block pool.
#[derive(Debug, Clone)]
pub struct SparseTsdfGrid {
    config: GridConfig,
    precision: Precision,
    offsets: Vec<i32>,
    /// Block index owning each pool slot, `u32::MAX` when free.
    owners: Vec<u32>,
    pool: Pool,
    /// Stack of free slots; the lowest slot is popped first.
    free: Vec<u32>,
}

const NO_OWNER: u32 = u32::MAX;

impl SparseTsdfGrid {
    /// Pool capacity used when none is given: one eighth of all blocks.
    pub fn default_capacity(config: &GridConfig) -> usize {
        (config.block_count() / 8).max(1)
    }

    pub fn new(config: GridConfig, pool_capacity: usize, precision: Precision) -> Result<Self> {
        config.validate()?;
        if pool_capacity == 0 || pool_capacity > config.block_count() {
            return Err(FusionError::InvalidConfig(format!(
                "pool capacity {pool_capacity} must be in 1..={}",
                config.block_count()
            )));
        }
        let slots = pool_capacity * config.voxels_per_block();
        let pool = match precision {
            Precision::Quantized => Pool::Quantized(vec![VoxelPayload::CHI; slots]),
            Precision::Float => Pool::Float(vec![FloatVoxel::CHI; slots]),
        };
        Ok(Self {
            config,
            precision,
            offsets: vec![EMPTY; config.block_count()],
            owners: vec![NO_OWNER; pool_capacity],
            pool,
            free: (0..pool_capacity as u32).rev().collect(),
        })
    }

    #[inline]
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn capacity(&self) -> usize {
        self.owners.len()
    }

    /// Grows the pool to `capacity` slots; smaller values are ignored.
    pub fn reserve(&mut self, capacity: usize) -> Result<()> {
        let old = self.capacity();
        if capacity <= old {
            return Ok(());
        }
        if capacity > self.config.block_count() {
            return Err(FusionError::InvalidConfig(format!(
                "pool capacity {capacity} must be in 1..={}",
                self.config.block_count()
            )));
        }
        let slots = capacity * self.config.voxels_per_block();
        match &mut self.pool {
            Pool::Quantized(p) => p.resize(slots, VoxelPayload::CHI),
            Pool::Float(p) => p.resize(slots, FloatVoxel::CHI),
        }
        self.owners.resize(capacity, NO_OWNER);
        // new slots go below the existing free ones so lower slots still pop first
        let mut free: Vec<u32> = (old as u32..capacity as u32).rev().collect();
        free.extend_from_slice(&self.free);
        self.free = free;
        Ok(())
    }

    pub fn allocated_count(&self) -> usize {
        self.capacity() - self.free.len()
    }

    /// Bytes used by allocated payload and the offset table:
    /// `2·blocks·M³ + 4·N³`. Pool slack is not counted.
    pub fn memory_bytes(&self) -> u64 {
        self.config.memory_bytes_for(self.allocated_count())
    }

    fn check_block(&self, b: BlockCoord) -> Result<()> {
        let n = self.config.blocks_per_axis;
        if b.iter().any(|&c| c >= n) {
            return Err(FusionError::OutOfDomain(b[0] as i64, b[1] as i64, b[2] as i64));
        }
        Ok(())
    }

    /// Pool slot of a block, if allocated.
    #[inline]
    pub fn slot_of(&self, b: BlockCoord) -> Option<usize> {
        let n = self.config.blocks_per_axis;
        if b.iter().any(|&c| c >= n) {
            return None;
        }
        let off = self.offsets[self.config.block_index(b)];
        (off != EMPTY).then_some(off as usize)
    }

    pub fn is_allocated(&self, b: BlockCoord) -> bool {
        self.slot_of(b).is_some()
    }

    /// Allocates a block with every voxel set to χ. Allocating an already
    /// allocated block returns its existing slot.
    pub fn allocate_block(&mut self, b: BlockCoord) -> Result<usize> {
        self.check_block(b)?;
        let index = self.config.block_index(b);
        if self.offsets[index] != EMPTY {
            return Ok(self.offsets[index] as usize);
        }
        let slot = self.free.pop().ok_or(FusionError::PoolExhausted {
            capacity: self.capacity(),
        })? as usize;
        let m3 = self.config.voxels_per_block();
        let range = slot * m3..(slot + 1) * m3;
        match &mut self.pool {
            Pool::Quantized(p) => p[range].fill(VoxelPayload::CHI),
            Pool::Float(p) => p[range].fill(FloatVoxel::CHI),
        }
        self.offsets[index] = slot as i32;
        self.owners[slot] = index as u32;
        Ok(slot)
    }

    /// Returns the block's slot to the pool. Returns `false` if the block was
    /// not allocated.
    pub fn free_block(&mut self, b: BlockCoord) -> Result<bool> {
        self.check_block(b)?;
        let index = self.config.block_index(b);
        let off = self.offsets[index];
        if off == EMPTY {
            return Ok(false);
        }
        self.offsets[index] = EMPTY;
        self.owners[off as usize] = NO_OWNER;
        self.free.push(off as u32);
        Ok(true)
    }

    /// Allocated blocks ordered by block index.
    pub fn allocated_blocks(&self) -> Vec<BlockCoord> {
        self.offsets
            .iter()
            .enumerate()
            .filter(|(_, &o)| o != EMPTY)
            .map(|(i, _)| self.config.block_coord(i))
            .collect()
    }

    fn split_voxel(&self, v: [i64; 3]) -> Result<(BlockCoord, usize)> {
        let r = self.config.resolution() as i64;
        if v.iter().any(|&c| c < 0 || c >= r) {
            return Err(FusionError::OutOfDomain(v[0], v[1], v[2]));
        }
        let m = self.config.voxels_per_block_axis;
        let u = [v[0] as usize, v[1] as usize, v[2] as usize];
        let b = [u[0] / m, u[1] / m, u[2] / m];
        let local = (u[0] % m) + m * ((u[1] % m) + m * (u[2] % m));
        Ok((b, local))
    }

    fn payload(&self, slot: usize, local: usize) -> Voxel {
        let i = slot * self.config.voxels_per_block() + local;
        match &self.pool {
            Pool::Quantized(p) => Voxel {
                tsdf: dequantize_tsdf(p[i].tsdf_code, self.config.truncation),
                aux: self.config.aux.dequantize(p[i].aux_code),
            },
            Pool::Float(p) => Voxel {
                tsdf: (!p[i].tsdf.is_nan()).then_some(p[i].tsdf),
                aux: p[i].aux,
            },
        }
    }

    pub fn read_voxel(&self, v: [i64; 3]) -> Result<Voxel> {
        let (b, local) = self.split_voxel(v)?;
        Ok(match self.slot_of(b) {
            Some(slot) => self.payload(slot, local),
            None => Voxel::CHI,
        })
    }

    /// Writes one voxel. Writing χ into an unallocated block is a no-op;
    /// anything else requires the block to be allocated.
    pub fn write_voxel(&mut self, v: [i64; 3], tsdf: Option<f64>, aux: f64) -> Result<()> {
        let (b, local) = self.split_voxel(v)?;
        let slot = match self.slot_of(b) {
            Some(slot) => slot,
            None if tsdf.is_none() => return Ok(()),
            None => return Err(FusionError::UnallocatedBlock(b[0], b[1], b[2])),
        };
        let m3 = self.config.voxels_per_block();
        let mut view = self.block_view(slot, m3);
        view.set(local, Voxel { tsdf, aux });
        Ok(())
    }

    fn block_view(&mut self, slot: usize, m3: usize) -> BlockMut<'_> {
        let range = slot * m3..(slot + 1) * m3;
        let data = match &mut self.pool {
            Pool::Quantized(p) => BlockData::Quantized(&mut p[range]),
            Pool::Float(p) => BlockData::Float(&mut p[range]),
        };
        BlockMut {
            data,
            truncation: self.config.truncation,
            aux: self.config.aux,
        }
    }

    /// Distance at a voxel, `None` for χ or coordinates outside the domain.
    #[inline]
    pub fn tsdf_at(&self, i: i64, j: i64, k: i64) -> Option<f64> {
        let r = self.config.resolution() as i64;
        if i < 0 || j < 0 || k < 0 || i >= r || j >= r || k >= r {
            return None;
        }
        let m = self.config.voxels_per_block_axis;
        let n = self.config.blocks_per_axis;
        let (i, j, k) = (i as usize, j as usize, k as usize);
        let off = self.offsets[i / m + n * (j / m + n * (k / m))];
        if off == EMPTY {
            return None;
        }
        let local = (i % m) + m * ((j % m) + m * (k % m));
        let idx = off as usize * m * m * m + local;
        match &self.pool {
            Pool::Quantized(p) => dequantize_tsdf(p[idx].tsdf_code, self.config.truncation),
            Pool::Float(p) => {
                let t = p[idx].tsdf;
                (!t.is_nan()).then_some(t)
            }
        }
    }

    /// Runs `f` on every listed allocated block in parallel; each block is
    /// visited by exactly one worker. Returns the sum of `f`'s results.
    pub fn update_blocks<F>(&mut self, blocks: &[BlockCoord], f: F) -> usize
    where
        F: Fn(BlockCoord, &mut BlockMut<'_>) -> usize + Sync + Send,
    {
        let mut selected: Vec<Option<BlockCoord>> = vec![None; self.capacity()];
        for &b in blocks {
            if let Some(slot) = self.slot_of(b) {
                selected[slot] = Some(b);
            }
        }
        let m3 = self.config.voxels_per_block();
        let (truncation, aux) = (self.config.truncation, self.config.aux);
        let view = |data| BlockMut { data, truncation, aux };
        match &mut self.pool {
            Pool::Quantized(p) => p
                .par_chunks_mut(m3)
                .zip(selected.par_iter())
                .filter_map(|(chunk, sel)| sel.map(|b| f(b, &mut view(BlockData::Quantized(chunk)))))
                .sum(),
            Pool::Float(p) => p
                .par_chunks_mut(m3)
                .zip(selected.par_iter())
                .filter_map(|(chunk, sel)| sel.map(|b| f(b, &mut view(BlockData::Float(chunk)))))
                .sum(),
        }
    }

    /// Allocated blocks whose bounds intersect the viewing frustum between the
    /// `near` and `far` depth planes.
    pub fn occupied_blocks_in_frustum(
        &self,
        pose: &Pose,
        intrinsics: &Intrinsics,
        near: f64,
        far: f64,
    ) -> Vec<BlockCoord> {
        let frustum = Frustum::new(pose, intrinsics, near, far);
        self.allocated_blocks()
            .into_iter()
            .filter(|&b| {
                let (lo, hi) = self.config.block_bounds(b);
                frustum.intersects_box(&lo, &hi)
            })
            .collect()
    }

    /// Writes the grid in the `STSG` snapshot format. Float payloads are
    /// quantized on the way out.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let io = |e| FusionError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.encode_snapshot(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn encode_snapshot<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let c = &self.config;
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_u32::<LittleEndian>(SNAPSHOT_VERSION)?;
        w.write_u32::<LittleEndian>(c.blocks_per_axis as u32)?;
        w.write_u32::<LittleEndian>(c.voxels_per_block_axis as u32)?;
        for x in [c.box_origin.x, c.box_origin.y, c.box_origin.z, c.box_side, c.truncation] {
            w.write_f64::<LittleEndian>(x)?;
        }
        let (kind, a, b) = match c.aux {
            AuxEncoding::Weight { max } => (0u32, max, 0.0),
            AuxEncoding::Variance { min, max } => (1u32, min, max),
        };
        w.write_u32::<LittleEndian>(kind)?;
        w.write_f64::<LittleEndian>(a)?;
        w.write_f64::<LittleEndian>(b)?;

        // Offsets are renumbered densely in slot order so that block k of the
        // payload section is the k-th allocated slot.
        let mut rank = vec![EMPTY; self.capacity()];
        let mut next = 0;
        for (slot, &owner) in self.owners.iter().enumerate() {
            if owner != NO_OWNER {
                rank[slot] = next;
                next += 1;
            }
        }
        for &off in &self.offsets {
            let v = if off == EMPTY { EMPTY } else { rank[off as usize] };
            w.write_i32::<LittleEndian>(v)?;
        }
        let m3 = c.voxels_per_block();
        for (slot, &owner) in self.owners.iter().enumerate() {
            if owner == NO_OWNER {
                continue;
            }
            for local in 0..m3 {
                let p = match &self.pool {
                    Pool::Quantized(p) => p[slot * m3 + local],
                    Pool::Float(_) => {
                        let v = self.payload(slot, local);
                        match v.tsdf {
                            None => VoxelPayload::CHI,
                            Some(t) => VoxelPayload {
                                tsdf_code: quantize_tsdf(Some(t), c.truncation),
                                aux_code: c.aux.quantize(v.aux),
                            },
                        }
                    }
                };
                w.write_i8(p.tsdf_code)?;
                w.write_u8(p.aux_code)?;
            }
        }
        Ok(())
    }

    /// Reads an `STSG` snapshot into a quantized grid whose pool holds exactly
    /// the stored blocks (at least one slot).
    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| FusionError::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::decode_snapshot(&mut r, path)
    }

    fn decode_snapshot<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let io = |e| FusionError::io(path, e);
        let bad = |reason: String| FusionError::format(path, reason);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != SNAPSHOT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let m = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut f = [0f64; 5];
        for x in &mut f {
            *x = r.read_f64::<LittleEndian>().map_err(io)?;
        }
        let kind = r.read_u32::<LittleEndian>().map_err(io)?;
        let a = r.read_f64::<LittleEndian>().map_err(io)?;
        let b = r.read_f64::<LittleEndian>().map_err(io)?;
        let aux = match kind {
            0 => AuxEncoding::Weight { max: a },
            1 => AuxEncoding::Variance { min: a, max: b },
            k => return Err(bad(format!("unknown aux encoding {k}"))),
        };
        let config = GridConfig {
            blocks_per_axis: n,
            voxels_per_block_axis: m,
            box_origin: Vec3::new(f[0], f[1], f[2]),
            box_side: f[3],
            truncation: f[4],
            aux,
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        let mut offsets = vec![0i32; config.block_count()];
        r.read_i32_into::<LittleEndian>(&mut offsets).map_err(io)?;
        let stored = offsets.iter().filter(|&&o| o != EMPTY).count();
        let mut seen = vec![false; stored];
        for &o in &offsets {
            if o == EMPTY {
                continue;
            }
            if o < 0 || o as usize >= stored || std::mem::replace(&mut seen[o as usize], true) {
                return Err(bad(format!("invalid block offset {o}")));
            }
        }
        let m3 = config.voxels_per_block();
        let mut bytes = vec![0u8; stored * m3 * BYTES_PER_VOXEL];
        r.read_exact(&mut bytes).map_err(io)?;
        let mut grid = Self::new(config, stored.max(1), Precision::Quantized)?;
        let Pool::Quantized(pool) = &mut grid.pool else {
            unreachable!()
        };
        for (i, pair) in bytes.chunks_exact(2).enumerate() {
            pool[i] = VoxelPayload {
                tsdf_code: pair[0] as i8,
                aux_code: pair[1],
            };
        }
        for (index, &o) in offsets.iter().enumerate() {
            if o != EMPTY {
                grid.offsets[index] = o;
                grid.owners[o as usize] = index as u32;
            }
        }
        grid.free = (stored as u32..grid.capacity() as u32).rev().collect();
        Ok(grid)
    }

    /// Checks the offset table, owner list and free list against each other.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let mut referenced = vec![false; self.capacity()];
        for (index, &o) in self.offsets.iter().enumerate() {
            if o == EMPTY {
                continue;
            }
            let slot = o as usize;
            if slot >= self.capacity() {
                return Err(format!("block {index} points past the pool"));
            }
            if std::mem::replace(&mut referenced[slot], true) {
                return Err(format!("slot {slot} referenced twice"));
            }
            if self.owners[slot] != index as u32 {
                return Err(format!("slot {slot} owner mismatch"));
            }
        }
        let mut free = vec![false; self.capacity()];
        for &s in &self.free {
            let s = s as usize;
            if referenced[s] || std::mem::replace(&mut free[s], true) {
                return Err(format!("free slot {s} is in use or listed twice"));
            }
        }
        let allocated = referenced.iter().filter(|&&r| r).count();
        if allocated + self.free.len() != self.capacity() {
            return Err("allocated and free counts do not reconcile".into());
        }
        Ok(())
    }
}

/// Convex view frustum for exact box overlap tests (separating axes).
pub(crate) struct Frustum {
    corners: [Vec3; 8],
    axes: Vec<Vec3>,
}

impl Frustum {
    pub(crate) fn new(pose: &Pose, k: &Intrinsics, near: f64, far: f64) -> Self {
        let (u0, u1) = (-0.5, k.width as f64 - 0.5);
        let (v0, v1) = (-0.5, k.height as f64 - 0.5);
        let image = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)];
        let mut corners = [Vec3::zeros(); 8];
        for (i, &(u, v)) in image.iter().enumerate() {
            corners[i] = pose.transform_point(&k.unproject(u, v, near));
            corners[i + 4] = pose.transform_point(&k.unproject(u, v, far));
        }
        let cam_x = pose.transform_vector(&Vec3::x());
        let cam_y = pose.transform_vector(&Vec3::y());
        let cam_z = pose.transform_vector(&Vec3::z());
        let lateral: Vec<Vec3> = (0..4).map(|i| corners[i + 4] - corners[i]).collect();
        let mut edges = lateral.clone();
        edges.push(cam_x);
        edges.push(cam_y);
        let mut axes = vec![cam_z, Vec3::x(), Vec3::y(), Vec3::z()];
        for i in 0..4 {
            let along = corners[(i + 1) % 4] - corners[i];
            axes.push(lateral[i].cross(&along));
        }
        for e in &edges {
            for b in [Vec3::x(), Vec3::y(), Vec3::z()] {
                axes.push(e.cross(&b));
            }
        }
        axes.retain(|a| a.norm_squared() > 1e-24);
        Self { corners, axes }
    }

    pub(crate) fn intersects_box(&self, lo: &Vec3, hi: &Vec3) -> bool {
        let mut box_corners = [Vec3::zeros(); 8];
        for (i, c) in box_corners.iter_mut().enumerate() {
            *c = Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            );
        }
        let range = |pts: &[Vec3], a: &Vec3| {
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), p| {
                let d = p.dot(a);
                (mn.min(d), mx.max(d))
            })
        };
        self.axes.iter().all(|a| {
            let (f0, f1) = range(&self.corners, a);
            let (b0, b1) = range(&box_corners, a);
            f0 <= b1 && b0 <= f1
        })
    }
}

/// Dense full-resolution float TSDF with the same χ semantics, limited to
/// small volumes. Serves as the reference for the sparse grid.
#[derive(Debug, Clone)]
pub struct FloatShadowGrid {
    config: GridConfig,
    data: Vec<Voxel>,
}

impl FloatShadowGrid {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let r = config.resolution();
        if r > MAX_SHADOW_RESOLUTION {
            return Err(FusionError::InvalidConfig(format!(
                "float shadow grid limited to {MAX_SHADOW_RESOLUTION}³ voxels"
            )));
        }
        Ok(Self {
            config,
            data: vec![Voxel::CHI; r * r * r],
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    #[inline]
    fn index(&self, v: [usize; 3]) -> usize {
        let r = self.config.resolution();
        v[0] + r * (v[1] + r * v[2])
    }

    pub fn get(&self, v: [usize; 3]) -> Voxel {
        self.data[self.index(v)]
    }

    /// Stores a voxel; distances beyond δ become χ.
    pub fn set(&mut self, v: [usize; 3], voxel: Voxel) {
        let i = self.index(v);
        let tsdf = voxel.tsdf.filter(|d| d.abs() <= self.config.truncation);
        self.data[i] = match tsdf {
            None => Voxel::CHI,
            Some(_) => Voxel { tsdf, aux: voxel.aux },
        };
    }
}
