//! Binary query files.
//!
//! ```text
//! magic "QRY1", n_queries u32, then per query:
//!   fx fy cx cy 4 × f64, width height 2 × u32
//!   descriptor_dim u32, count u64
//!   has_gt u8; if 1: rotation 9 × f64 (row-major), translation 3 × f64,
//!     world-to-query
//!   count records: u 2 × f64, z_tof f64, descriptor D × f32
//! ```

use std::path::Path;

use nalgebra::Matrix3;

use super::{IoError, Reader, Writer};
use crate::geometry::{FrameTag, Intrinsics, Pose, Rotation, Vec2};
use crate::localize::{Keypoint, Query};

const MAGIC: &[u8] = b"QRY";
const VERSION: u8 = b'1';
const ROTATION_TOL: f64 = 1e-6;

fn invalid(offset: usize, message: impl Into<String>) -> IoError {
    IoError::Invalid {
        offset,
        message: message.into(),
    }
}

pub fn encode_queries(queries: &[Query]) -> Result<Vec<u8>, IoError> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u32(queries.len() as u32);
    for (qi, q) in queries.iter().enumerate() {
        let k = &q.intrinsics;
        for v in [k.fx, k.fy, k.cx, k.cy] {
            w.f64(v);
        }
        w.u32(k.width);
        w.u32(k.height);
        let dim = q.keypoints.first().map_or(0, |kp| kp.descriptor.len());
        w.u32(dim as u32);
        w.u64(q.keypoints.len() as u64);
        match &q.gt_pose {
            Some(p) => {
                let p = p.as_frame(FrameTag::WorldToQuery).map_err(|e| invalid(0, e.to_string()))?;
                w.u8(1);
                let m = p.rotation.matrix();
                for r in 0..3 {
                    for c in 0..3 {
                        w.f64(m[(r, c)]);
                    }
                }
                w.vec3(&p.translation);
            }
            None => w.u8(0),
        }
        for (i, kp) in q.keypoints.iter().enumerate() {
            if kp.descriptor.len() != dim {
                return Err(invalid(
                    0,
                    format!("query {qi} keypoint {i}: descriptor length {} != {dim}", kp.descriptor.len()),
                ));
            }
            w.f64(kp.u.x);
            w.f64(kp.u.y);
            w.f64(kp.z_tof);
            w.f32s(&kp.descriptor);
        }
    }
    Ok(w.buf)
}

pub fn decode_queries(bytes: &[u8]) -> Result<Vec<Query>, IoError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(MAGIC.len()).map_err(|_| IoError::BadMagic(String::from_utf8_lossy(bytes).into_owned()))?;
    if magic != MAGIC {
        return Err(IoError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let v = r.u8()?;
    if v != VERSION {
        return Err(IoError::UnsupportedVersion {
            family: "QRY",
            version: (v as char).to_string(),
        });
    }
    let nq = r.u32()? as usize;
    let mut out = Vec::with_capacity(nq.min(1 << 16));
    for _ in 0..nq {
        let k_offset = r.offset();
        let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let (width, height) = (r.u32()?, r.u32()?);
        let intrinsics =
            Intrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| invalid(k_offset, e.to_string()))?;
        let dim = r.u32()? as usize;
        let count_offset = r.offset();
        let count = r.u64()?;
        let gt_pose = match r.u8()? {
            0 => None,
            1 => {
                let rot_offset = r.offset();
                let mut m = Matrix3::zeros();
                for row in 0..3 {
                    for col in 0..3 {
                        m[(row, col)] = r.f64()?;
                    }
                }
                let err = (m.transpose() * m - Matrix3::identity()).amax();
                if err > ROTATION_TOL || m.determinant() < 0.0 {
                    return Err(invalid(rot_offset, "ground-truth rotation is not orthonormal"));
                }
                let t = r.vec3()?;
                Some(Pose::new(Rotation::from_matrix_unchecked(m), t, FrameTag::WorldToQuery))
            }
            f => return Err(invalid(r.offset() - 1, format!("has_gt flag must be 0 or 1, got {f}"))),
        };
        let record = 24 + 4 * dim;
        let have = bytes.len() - r.offset();
        let n = usize::try_from(count)
            .ok()
            .filter(|n| n.checked_mul(record).is_some())
            .ok_or_else(|| invalid(count_offset, format!("record count {count} overflows")))?;
        if n * record > have {
            return Err(IoError::Truncated {
                offset: r.offset(),
                needed: n * record - have,
            });
        }
        let mut keypoints = Vec::with_capacity(n);
        for _ in 0..n {
            let u = Vec2::new(r.f64()?, r.f64()?);
            let z_offset = r.offset();
            let z_tof = r.f64()?;
            if z_tof <= 0.0 {
                return Err(invalid(z_offset, format!("z_tof must be positive, got {z_tof}")));
            }
            keypoints.push(Keypoint {
                u,
                z_tof,
                descriptor: r.f32s(dim)?,
            });
        }
        out.push(Query {
            intrinsics,
            keypoints,
            gt_pose,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<(), IoError> {
    std::fs::write(path, encode_queries(queries)?)?;
    Ok(())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, IoError> {
    decode_queries(&std::fs::read(path)?)
}
