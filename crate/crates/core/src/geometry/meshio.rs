//! OBJ (ASCII, `v`/`f` records, 1-based) and binary STL.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub fn write_obj<W: Write>(mut w: W, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    for v in vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Reads `v` and `f` records; other record types are skipped. Polygon faces are
/// fan-triangulated and `v/vt/vn` index forms are accepted.
pub fn read_obj<R: BufRead>(r: R) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format("obj", format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::format("obj", format!("line {}: short vertex", lineno + 1)));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        match head.parse::<i64>() {
                            Ok(i) if i >= 1 => Ok((i - 1) as u32),
                            _ => Err(Error::format(
                                "obj",
                                format!("line {}: bad face index `{s}`", lineno + 1),
                            )),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::format("obj", format!("line {}: short face", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn write_stl<W: Write>(mut w: W, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    let mut header = [0u8; 80];
    let tag = b"sdmforge binary stl";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(faces.len() as u32).to_le_bytes())?;
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let n = (b - a).cross(c - a).normalized();
        for v in [n, a, b, c] {
            for x in v.to_array() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.write_all(&[0, 0])?;
    }
    Ok(())
}

/// Reads binary STL, merging bit-identical vertex positions.
pub fn read_stl<R: Read>(mut r: R) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut header = [0u8; 84];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("stl", "truncated header"))?;
    let count = u32::from_le_bytes(header[80..84].try_into().unwrap()) as usize;
    let mut record = [0u8; 50];
    let mut lookup: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    for n in 0..count {
        r.read_exact(&mut record)
            .map_err(|_| Error::format("stl", format!("truncated at triangle {n} of {count}")))?;
        let mut face = [0u32; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let base = 12 + 12 * k;
            let bits: [u32; 3] = std::array::from_fn(|c| {
                u32::from_le_bytes(record[base + 4 * c..base + 4 * c + 4].try_into().unwrap())
            });
            *slot = *lookup.entry(bits).or_insert_with(|| {
                vertices.push(Vec3::new(
                    f32::from_bits(bits[0]) as f64,
                    f32::from_bits(bits[1]) as f64,
                    f32::from_bits(bits[2]) as f64,
                ));
                (vertices.len() - 1) as u32
            });
        }
        faces.push(face);
    }
    Ok((vertices, faces))
}

impl TriangleMesh {
    pub fn write_obj<W: Write>(&self, w: W) -> Result<()> {
        write_obj(w, self.vertices(), self.faces())
    }

    pub fn write_stl<W: Write>(&self, w: W) -> Result<()> {
        write_stl(w, self.vertices(), self.faces())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::icosphere;

    #[test]
    fn obj_round_trip() {
        let m = icosphere(1.0, 1);
        let mut buf = Vec::new();
        m.write_obj(&mut buf).unwrap();
        let (v, f) = read_obj(&buf[..]).unwrap();
        assert_eq!(f, m.faces());
        assert_eq!(v, m.vertices());
    }

    #[test]
    fn obj_one_based_and_polygons() {
        let src = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let (v, f) = read_obj(src.as_bytes()).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(read_obj("f 0 1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn stl_round_trip_merges_vertices() {
        let m = icosphere(2.0, 1);
        let mut buf = Vec::new();
        m.write_stl(&mut buf).unwrap();
        assert_eq!(buf.len(), 84 + 50 * m.len());
        let (v, f) = read_stl(&buf[..]).unwrap();
        assert_eq!(v.len(), m.vertices().len());
        assert_eq!(f.len(), m.len());
        let back = TriangleMesh::closed(v, f).unwrap();
        assert!((back.signed_volume() - m.signed_volume()).abs() < 1e-5);
        assert!(read_stl(&buf[..buf.len() - 10]).is_err());
    }
}
