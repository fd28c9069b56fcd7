//! COLMAP `points3D.txt` import.
//!
//! The text format carries no descriptors. They come from a companion
//! `DESC1` file (`dim u32, count u64, count × dim f32`, in file order) when
//! one is given, and are random unit vectors otherwise.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{IoError, Reader, Writer};
use crate::construction::{MapPoint, PointCloud};
use crate::geometry::Vec3;
use crate::rng::{self, Stream};

pub const PLACEHOLDER_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImport {
    pub cloud: PointCloud,
    /// `POINT3D_ID` per point, in file order.
    pub point_ids: Vec<u64>,
    /// True when descriptors are random stand-ins.
    pub placeholder_descriptors: bool,
}

struct Row {
    id: u64,
    position: Vec3,
    color: [u8; 3],
}

fn parse_row(line: &str, lineno: usize) -> Result<Row, IoError> {
    let err = |message: String| IoError::Parse { line: lineno, message };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 8 {
        return Err(err(format!("expected at least 8 fields, found {}", f.len())));
    }
    let id = f[0].parse::<u64>().map_err(|e| err(format!("bad POINT3D_ID {:?}: {e}", f[0])))?;
    let mut xyz = [0.0; 3];
    for (i, name) in ["X", "Y", "Z"].iter().enumerate() {
        let v = f[1 + i]
            .parse::<f64>()
            .map_err(|e| err(format!("bad {name} coordinate {:?}: {e}", f[1 + i])))?;
        if !v.is_finite() {
            return Err(err(format!("non-finite {name} coordinate")));
        }
        xyz[i] = v;
    }
    let mut color = [0u8; 3];
    for (i, name) in ["R", "G", "B"].iter().enumerate() {
        color[i] = f[4 + i]
            .parse::<u8>()
            .map_err(|e| err(format!("bad {name} value {:?}: {e}", f[4 + i])))?;
    }
    Ok(Row {
        id,
        position: Vec3::from(xyz),
        color,
    })
}

fn placeholder(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Parses `points3D.txt` content. `descriptors` must hold one row per point
/// in file order; without it, seeded placeholders of [`PLACEHOLDER_DIM`] are
/// generated.
pub fn parse_colmap_points(
    text: &str,
    descriptors: Option<(usize, Vec<Vec<f32>>)>,
    seed: u64,
) -> Result<ColmapImport, IoError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        rows.push(parse_row(t, i + 1)?);
    }
    let placeholder_descriptors = descriptors.is_none();
    let (dim, descs) = match descriptors {
        Some((dim, d)) => {
            if d.len() != rows.len() {
                return Err(IoError::Parse {
                    line: 0,
                    message: format!("{} descriptors for {} points", d.len(), rows.len()),
                });
            }
            (dim, d)
        }
        None => {
            let mut rng = rng::stream(seed, Stream::Placeholder);
            (PLACEHOLDER_DIM, (0..rows.len()).map(|_| placeholder(&mut rng, PLACEHOLDER_DIM)).collect())
        }
    };
    let point_ids = rows.iter().map(|r| r.id).collect();
    let points = rows
        .into_iter()
        .zip(descs)
        .map(|(r, descriptor)| MapPoint {
            position: r.position,
            descriptor,
            color: r.color,
        })
        .collect();
    Ok(ColmapImport {
        cloud: PointCloud {
            points,
            descriptor_dim: dim,
        },
        point_ids,
        placeholder_descriptors,
    })
}

pub fn ingest_colmap_points(
    path: impl AsRef<Path>,
    descriptor_path: Option<&Path>,
    seed: u64,
) -> Result<ColmapImport, IoError> {
    let text = std::fs::read_to_string(path)?;
    let descs = descriptor_path.map(read_descriptor_file).transpose()?;
    parse_colmap_points(&text, descs, seed)
}

pub fn read_descriptor_file(path: &Path) -> Result<(usize, Vec<Vec<f32>>), IoError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(5)?;
    if magic != b"DESC1" {
        return Err(IoError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let dim = r.u32()? as usize;
    let n = r.count(4 * dim)?;
    let rows = (0..n).map(|_| r.f32s(dim)).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok((dim, rows))
}

pub fn write_descriptor_file(path: &Path, dim: usize, rows: &[Vec<f32>]) -> Result<(), IoError> {
    let mut w = Writer::default();
    w.bytes(b"DESC1");
    w.u32(dim as u32);
    w.u64(rows.len() as u64);
    for row in rows {
        w.f32s(row);
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}
