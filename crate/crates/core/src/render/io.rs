use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{FusionError, Result};
use crate::geometry::DepthFrame;
use crate::Vec3;

use super::Mesh;

/// Writes a binary little-endian PLY with per-vertex normals.
pub fn write_ply(mesh: &Mesh, path: &Path) -> Result<()> {
    let io = |e| FusionError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode_ply(mesh, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn encode_ply<W: Write>(mesh: &Mesh, w: &mut W) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for (p, n) in mesh.vertices.iter().zip(&mesh.normals) {
        for x in p.iter().chain(n.iter()) {
            w.write_f32::<LittleEndian>(*x as f32)?;
        }
    }
    for t in &mesh.triangles {
        w.write_u8(3)?;
        for &i in t {
            w.write_u32::<LittleEndian>(i)?;
        }
    }
    Ok(())
}

/// Reads the PLY layout produced by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Mesh> {
    let bad = |r: &str| FusionError::format(path, r);
    let io = |e| FusionError::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(bad("missing end_header"));
        }
        let line = line.trim_end().to_owned();
        if line == "end_header" {
            break;
        }
        header.push(line);
    }
    if header.first().map(String::as_str) != Some("ply")
        || !header.iter().any(|l| l == "format binary_little_endian 1.0")
    {
        return Err(bad("not a binary little-endian PLY"));
    }
    let count = |name: &str| -> Result<usize> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(&format!("missing element {name}")))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let mut mesh = Mesh::default();
    let mut f = [0f32; 6];
    for _ in 0..nv {
        r.read_f32_into::<LittleEndian>(&mut f).map_err(io)?;
        mesh.vertices.push(Vec3::new(f[0] as f64, f[1] as f64, f[2] as f64));
        mesh.normals.push(Vec3::new(f[3] as f64, f[4] as f64, f[5] as f64));
    }
    for _ in 0..nf {
        if r.read_u8().map_err(io)? != 3 {
            return Err(bad("only triangle faces are supported"));
        }
        let mut t = [0u32; 3];
        r.read_u32_into::<LittleEndian>(&mut t).map_err(io)?;
        if t.iter().any(|&i| i as usize >= nv) {
            return Err(bad("face index out of range"));
        }
        mesh.triangles.push(t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(mesh)
}

/// Writes depth as a little-endian PFM (bottom row first); invalid pixels
/// are 0.
pub fn write_pfm(frame: &DepthFrame, path: &Path) -> Result<()> {
    let io = |e| FusionError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let (width, height) = (frame.width(), frame.height());
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io)?;
    for v in (0..height).rev() {
        for &d in &frame.depth[v * width..(v + 1) * width] {
            w.write_f32::<LittleEndian>(d).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
