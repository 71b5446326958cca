use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::Intrinsics;
use crate::error::{FusionError, Result};
use crate::Vec3;

const DFRM_MAGIC: &[u8; 4] = b"DFRM";
const DFRM_VERSION: u32 = 1;

/// Metric depth image. A depth of `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub intrinsics: Intrinsics,
    /// Row-major z depths in meters, top-left pixel first.
    pub depth: Vec<f32>,
    /// Optional per-pixel standard deviation of the depth noise, in meters.
    pub sigma: Option<Vec<f32>>,
}

/// Per-pixel unit normals in the camera frame, oriented towards the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<Vec3>>,
}

impl DepthFrame {
    pub fn new(intrinsics: Intrinsics, depth: Vec<f32>, sigma: Option<Vec<f32>>) -> Result<Self> {
        let n = intrinsics.pixel_count();
        if depth.len() != n || sigma.as_ref().is_some_and(|s| s.len() != n) {
            return Err(FusionError::InvalidConfig(format!("depth frame needs {n} pixels")));
        }
        Ok(Self {
            intrinsics,
            depth,
            sigma,
        })
    }

    /// A frame with every pixel invalid.
    pub fn empty(intrinsics: Intrinsics) -> Self {
        Self {
            intrinsics,
            depth: vec![0.0; intrinsics.pixel_count()],
            sigma: None,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Valid depth at a pixel.
    #[inline]
    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.intrinsics.width + u] as f64;
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    #[inline]
    pub fn point_at(&self, u: usize, v: usize) -> Option<Vec3> {
        self.depth_at(u, v)
            .map(|d| self.intrinsics.unproject(u as f64, v as f64, d))
    }

    pub fn sigma_at(&self, u: usize, v: usize) -> Option<f64> {
        self.sigma.as_ref().map(|s| s[v * self.intrinsics.width + u] as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0 && d.is_finite()).count()
    }

    pub fn write_dfrm(&self, path: &Path) -> Result<()> {
        let io = |e| FusionError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.encode(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let k = &self.intrinsics;
        w.write_all(DFRM_MAGIC)?;
        w.write_u32::<LittleEndian>(DFRM_VERSION)?;
        w.write_u32::<LittleEndian>(k.width as u32)?;
        w.write_u32::<LittleEndian>(k.height as u32)?;
        for x in [k.fx, k.fy, k.cx, k.cy, k.near, k.far] {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
        for &d in &self.depth {
            w.write_f32::<LittleEndian>(d)?;
        }
        match &self.sigma {
            Some(sigma) => {
                w.write_u32::<LittleEndian>(1)?;
                for &s in sigma {
                    w.write_f32::<LittleEndian>(s)?;
                }
            }
            None => w.write_u32::<LittleEndian>(0)?,
        }
        Ok(())
    }

    pub fn read_dfrm(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| FusionError::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::decode(&mut r).map_err(|e| match e {
            DecodeError::Io(e) => FusionError::io(path, e),
            DecodeError::Format(reason) => FusionError::format(path, reason),
        })
    }

    fn decode<R: Read>(r: &mut R) -> std::result::Result<Self, DecodeError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DFRM_MAGIC {
            return Err(DecodeError::Format("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DFRM_VERSION {
            return Err(DecodeError::Format(format!("unsupported version {version}")));
        }
        let width = r.read_u32::<LittleEndian>()? as usize;
        let height = r.read_u32::<LittleEndian>()? as usize;
        let mut p = [0f64; 6];
        for x in &mut p {
            *x = r.read_f32::<LittleEndian>()? as f64;
        }
        let intrinsics = Intrinsics {
            width,
            height,
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            near: p[4],
            far: p[5],
        };
        intrinsics.validate().map_err(|e| DecodeError::Format(e.to_string()))?;
        let n = width * height;
        let mut depth = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut depth)?;
        let sigma = match r.read_u32::<LittleEndian>()? {
            0 => None,
            1 => {
                let mut s = vec![0f32; n];
                r.read_f32_into::<LittleEndian>(&mut s)?;
                Some(s)
            }
            flag => return Err(DecodeError::Format(format!("bad sigma flag {flag}"))),
        };
        Ok(Self {
            intrinsics,
            depth,
            sigma,
        })
    }
}

enum DecodeError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        DecodeError::Io(e)
    }
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![None; width * height],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<Vec3> {
        self.normals[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }
}

/// Largest neighbor depth step still treated as continuous surface at a pixel
/// with depth `z` and noise deviation `sigma`.
#[inline]
pub fn discontinuity_threshold(sigma: f64, voxel_size: f64) -> f64 {
    3.0 * sigma + 2.0 * voxel_size
}

/// Normals from central-difference tangents of the unprojected neighbors.
///
/// A pixel gets no normal when one of its four neighbors is invalid or differs
/// in depth by more than [`discontinuity_threshold`].
pub fn compute_normals(frame: &DepthFrame, voxel_size: f64) -> NormalMap {
    let (w, h) = (frame.width(), frame.height());
    let mut normals = vec![None; w * h];
    normals.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
        if v == 0 || v + 1 >= h {
            return;
        }
        for (u, out) in row.iter_mut().enumerate() {
            if u == 0 || u + 1 >= w {
                continue;
            }
            *out = normal_at(frame, u, v, voxel_size);
        }
    });
    NormalMap {
        width: w,
        height: h,
        normals,
    }
}

fn normal_at(frame: &DepthFrame, u: usize, v: usize, voxel_size: f64) -> Option<Vec3> {
    let d = frame.depth_at(u, v)?;
    let threshold = discontinuity_threshold(frame.sigma_at(u, v).unwrap_or(0.0), voxel_size);
    let neighbors = [(u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)];
    for &(nu, nv) in &neighbors {
        let dn = frame.depth_at(nu, nv)?;
        if (dn - d).abs() > threshold {
            return None;
        }
    }
    let k = &frame.intrinsics;
    let p = |(pu, pv): (usize, usize)| k.unproject(pu as f64, pv as f64, frame.depth_at(pu, pv).unwrap());
    let du = p(neighbors[1]) - p(neighbors[0]);
    let dv = p(neighbors[3]) - p(neighbors[2]);
    let n = du.cross(&dv);
    let len = n.norm();
    if !(len > 0.0) {
        return None;
    }
    let n = n / len;
    let center = k.unproject(u as f64, v as f64, d);
    Some(if n.dot(&center) > 0.0 { -n } else { n })
}
