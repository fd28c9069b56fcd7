//! Binary cloud files.
//!
//! ```text
//! magic            "PNTC1" | "SPHC1" | "ULC1"
//! descriptor_dim   u32
//! count            u64
//! centre           3 × f64            (SPHC1 only)
//! count records:
//!   PNTC1  position 3 × f64
//!   SPHC1  bearing  3 × f64
//!   ULC1   point 3 × f64, direction 3 × f64
//!   then   descriptor D × f32, colour 3 × u8
//! ```

use std::path::Path;

use super::{IoError, Reader, Writer};
use crate::construction::{is_unit, CloudLine, LineCloud, MapPoint, PointCloud, SphereCloud, SpherePoint};
use crate::geometry::{UnitVec3, Vec3};

const FAMILIES: [(&str, &str); 3] = [("PNTC", "1"), ("SPHC", "1"), ("ULC", "1")];

#[derive(Debug, Clone, PartialEq)]
pub enum Cloud {
    Points(PointCloud),
    Sphere(SphereCloud),
    Lines(LineCloud),
}

impl Cloud {
    pub fn len(&self) -> usize {
        match self {
            Cloud::Points(c) => c.len(),
            Cloud::Sphere(c) => c.len(),
            Cloud::Lines(c) => c.lines.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Cloud::Points(_) => "point cloud",
            Cloud::Sphere(_) => "sphere cloud",
            Cloud::Lines(_) => "line cloud",
        }
    }
}

fn record_size(family: &str, dim: usize) -> usize {
    let geo = if family == "ULC" { 48 } else { 24 };
    geo + 4 * dim + 3
}

fn read_magic(r: &mut Reader) -> Result<&'static str, IoError> {
    let rest = r.remaining();
    for (family, version) in FAMILIES {
        let full = family.len() + version.len();
        if rest.len() < full && family.as_bytes().starts_with(rest) {
            return Err(IoError::Truncated {
                offset: r.offset() + rest.len(),
                needed: full - rest.len(),
            });
        }
        if rest.starts_with(family.as_bytes()) {
            r.take(family.len())?;
            let v = r.take(1)?;
            if v != version.as_bytes() {
                return Err(IoError::UnsupportedVersion {
                    family,
                    version: String::from_utf8_lossy(v).into_owned(),
                });
            }
            return Ok(family);
        }
    }
    Err(IoError::BadMagic(
        String::from_utf8_lossy(&rest[..rest.len().min(5)]).into_owned(),
    ))
}

fn unit(r: &mut Reader, index: usize, what: &'static str) -> Result<UnitVec3, IoError> {
    let v = r.vec3()?;
    if !is_unit(&v) {
        return Err(IoError::NonUnit {
            index,
            what,
            norm: v.norm(),
        });
    }
    Ok(UnitVec3::new_unchecked(v))
}

fn colour(r: &mut Reader) -> Result<[u8; 3], IoError> {
    Ok([r.u8()?, r.u8()?, r.u8()?])
}

pub fn decode_cloud(bytes: &[u8]) -> Result<Cloud, IoError> {
    let mut r = Reader::new(bytes);
    let family = read_magic(&mut r)?;
    let dim = r.u32()? as usize;
    let centre: Option<Vec3>;
    let n;
    if family == "SPHC" {
        // The centre sits after the count, so read the count first and check
        // its size against what follows the centre.
        let count_offset = r.offset();
        let raw = r.u64()?;
        centre = Some(r.vec3()?);
        let have = bytes.len() - r.offset();
        let need = usize::try_from(raw)
            .ok()
            .and_then(|c| c.checked_mul(record_size(family, dim)))
            .ok_or(IoError::Invalid {
                offset: count_offset,
                message: format!("record count {raw} overflows"),
            })?;
        if need > have {
            return Err(IoError::Truncated {
                offset: r.offset(),
                needed: need - have,
            });
        }
        n = raw as usize;
    } else {
        centre = None;
        n = r.count(record_size(family, dim))?;
    }

    let cloud = match family {
        "PNTC" => {
            let mut points = Vec::with_capacity(n);
            for _ in 0..n {
                points.push(MapPoint {
                    position: r.vec3()?,
                    descriptor: r.f32s(dim)?,
                    color: colour(&mut r)?,
                });
            }
            Cloud::Points(PointCloud {
                points,
                descriptor_dim: dim,
            })
        }
        "SPHC" => {
            let mut points = Vec::with_capacity(n);
            for i in 0..n {
                points.push(SpherePoint {
                    bearing: unit(&mut r, i, "bearing")?,
                    descriptor: r.f32s(dim)?,
                    color: colour(&mut r)?,
                });
            }
            Cloud::Sphere(SphereCloud {
                centre: centre.expect("read above"),
                points,
                descriptor_dim: dim,
            })
        }
        _ => {
            let mut lines = Vec::with_capacity(n);
            for i in 0..n {
                lines.push(CloudLine {
                    point: r.vec3()?,
                    direction: unit(&mut r, i, "direction")?,
                    descriptor: r.f32s(dim)?,
                    color: colour(&mut r)?,
                });
            }
            Cloud::Lines(LineCloud {
                lines,
                descriptor_dim: dim,
            })
        }
    };
    r.finish()?;
    Ok(cloud)
}

fn check_dim(index: usize, found: usize, dim: usize) -> Result<(), IoError> {
    if found != dim {
        return Err(IoError::Invalid {
            offset: 0,
            message: format!("record {index} has descriptor length {found}, header says {dim}"),
        });
    }
    Ok(())
}

pub fn encode_cloud(cloud: &Cloud) -> Result<Vec<u8>, IoError> {
    let mut w = Writer::default();
    match cloud {
        Cloud::Points(c) => {
            w.bytes(b"PNTC1");
            w.u32(c.descriptor_dim as u32);
            w.u64(c.len() as u64);
            for (i, p) in c.points.iter().enumerate() {
                check_dim(i, p.descriptor.len(), c.descriptor_dim)?;
                w.vec3(&p.position);
                w.f32s(&p.descriptor);
                w.bytes(&p.color);
            }
        }
        Cloud::Sphere(c) => {
            w.bytes(b"SPHC1");
            w.u32(c.descriptor_dim as u32);
            w.u64(c.len() as u64);
            w.vec3(&c.centre);
            for (i, p) in c.points.iter().enumerate() {
                check_dim(i, p.descriptor.len(), c.descriptor_dim)?;
                w.vec3(&p.bearing);
                w.f32s(&p.descriptor);
                w.bytes(&p.color);
            }
        }
        Cloud::Lines(c) => {
            w.bytes(b"ULC1");
            w.u32(c.descriptor_dim as u32);
            w.u64(c.lines.len() as u64);
            for (i, l) in c.lines.iter().enumerate() {
                check_dim(i, l.descriptor.len(), c.descriptor_dim)?;
                w.vec3(&l.point);
                w.vec3(&l.direction);
                w.f32s(&l.descriptor);
                w.bytes(&l.color);
            }
        }
    }
    Ok(w.buf)
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &Cloud) -> Result<(), IoError> {
    std::fs::write(path, encode_cloud(cloud)?)?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<Cloud, IoError> {
    decode_cloud(&std::fs::read(path)?)
}
