//! Grid file formats and atomic file writes.
//!
//! * Legacy ASCII VTK structured points (`.vtk`).
//! * Raw little-endian `f32` payload in x-fastest order with a JSON sidecar.
//! * Binary PGM (P5) slices for quick inspection.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, GridSpec, ScalarGrid, Vec3};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_vtk(grid: &ScalarGrid, path: &Path, title: &str) -> Result<()> {
    write_atomic(path, |w| write_vtk_to(grid, w, title))
}

/// Legacy VTK header followed by one value per line.
pub fn write_vtk_to(grid: &ScalarGrid, w: &mut dyn Write, title: &str) -> Result<()> {
    let s = grid.spec();
    let [nx, ny, nz] = s.dims;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {nx} {ny} {nz}")?;
    writeln!(w, "ORIGIN {} {} {}", s.origin.x, s.origin.y, s.origin.z)?;
    writeln!(w, "SPACING {} {} {}", s.spacing, s.spacing, s.spacing)?;
    writeln!(w, "POINT_DATA {}", s.len())?;
    writeln!(w, "SCALARS sdm float 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in grid.values() {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn read_vtk(path: &Path) -> Result<ScalarGrid> {
    read_vtk_from(BufReader::new(fs::File::open(path)?))
}

pub fn read_vtk_from<R: BufRead>(r: R) -> Result<ScalarGrid> {
    let bad = |d: String| Error::format("VTK file", d);
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad(format!("missing {what}")))?
            .map_err(Error::from)
    };
    if next("version line")?.trim() != "# vtk DataFile Version 3.0" {
        return Err(bad("unsupported version line".into()));
    }
    next("title")?;
    if next("encoding")?.trim() != "ASCII" {
        return Err(bad("only ASCII files are supported".into()));
    }
    if next("dataset")?.trim() != "DATASET STRUCTURED_POINTS" {
        return Err(bad("dataset is not STRUCTURED_POINTS".into()));
    }
    let nums = |line: String, key: &str| -> Result<Vec<f64>> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(bad(format!("expected {key}, got `{line}`")));
        }
        it.map(|t| t.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")))).collect()
    };
    let d = nums(next("DIMENSIONS")?, "DIMENSIONS")?;
    let o = nums(next("ORIGIN")?, "ORIGIN")?;
    let sp = nums(next("SPACING")?, "SPACING")?;
    let n = nums(next("POINT_DATA")?, "POINT_DATA")?;
    if d.len() != 3 || o.len() != 3 || sp.len() != 3 || n.len() != 1 {
        return Err(bad("header fields have the wrong arity".into()));
    }
    if sp[0] != sp[1] || sp[1] != sp[2] {
        return Err(bad("anisotropic spacing".into()));
    }
    let dims = [d[0] as usize, d[1] as usize, d[2] as usize];
    let spec = GridSpec::new(Vec3::new(o[0], o[1], o[2]), sp[0], dims)?;
    if n[0] as usize != spec.len() {
        return Err(bad(format!("POINT_DATA {} but dimensions give {}", n[0], spec.len())));
    }
    if !next("SCALARS")?.trim_start().starts_with("SCALARS") {
        return Err(bad("missing SCALARS line".into()));
    }
    if !next("LOOKUP_TABLE")?.trim_start().starts_with("LOOKUP_TABLE") {
        return Err(bad("missing LOOKUP_TABLE line".into()));
    }
    let mut values = Vec::with_capacity(spec.len());
    for line in lines {
        for t in line?.split_whitespace() {
            values.push(t.parse::<f32>().map_err(|e| bad(format!("value `{t}`: {e}")))?);
        }
    }
    if values.len() != spec.len() {
        return Err(bad(format!("{} values for {} points", values.len(), spec.len())));
    }
    ScalarGrid::new(spec, values)
}

/// Sidecar describing a raw grid payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dtype: String,
    pub order: String,
    pub clamped: bool,
    pub clamp: Option<(f32, f32)>,
    pub payload: String,
}

const RAW_FORMAT: &str = "sdmforge-grid";
const RAW_VERSION: u32 = 1;

/// Sidecar path for a raw payload: same stem, `.json` extension.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Writes `payload` and its sidecar. `clamp` records the bounds the values
/// were clamped to, if any.
pub fn write_raw(grid: &ScalarGrid, payload: &Path, clamp: Option<(f32, f32)>) -> Result<()> {
    let s = grid.spec();
    let side = RawSidecar {
        format: RAW_FORMAT.into(),
        version: RAW_VERSION,
        dims: s.dims,
        origin: s.origin.to_array(),
        spacing: s.spacing,
        dtype: "f32-le".into(),
        order: "x-fastest".into(),
        clamped: clamp.is_some(),
        clamp,
        payload: payload
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_atomic(payload, |w| {
        for v in grid.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;
    write_atomic(&sidecar_path(payload), |w| {
        serde_json::to_writer_pretty(&mut *w, &side)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Reads a payload written by [`write_raw`] together with its sidecar.
pub fn read_raw(payload: &Path) -> Result<(ScalarGrid, RawSidecar)> {
    let side: RawSidecar = serde_json::from_reader(BufReader::new(fs::File::open(sidecar_path(payload))?))?;
    if side.format != RAW_FORMAT || side.version != RAW_VERSION {
        return Err(Error::format("grid sidecar", format!("unsupported {} v{}", side.format, side.version)));
    }
    if side.dtype != "f32-le" || side.order != "x-fastest" {
        return Err(Error::format("grid sidecar", format!("unsupported layout {} / {}", side.dtype, side.order)));
    }
    let spec = GridSpec::new(Vec3::from(side.origin), side.spacing, side.dims)?;
    let bytes = fs::read(payload)?;
    if bytes.len() != spec.len() * 4 {
        return Err(Error::format(
            "grid payload",
            format!("{} bytes, sidecar dims {:?} need {}", bytes.len(), side.dims, spec.len() * 4),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((ScalarGrid::new(spec, values)?, side))
}

/// Writes slice `index` along `axis` as an 8-bit P5 image, mapping `[lo, hi]`
/// linearly to `[0, 255]`. Image rows follow the second in-slice axis.
pub fn write_pgm_slice(grid: &ScalarGrid, axis: Axis, index: usize, lo: f32, hi: f32, path: &Path) -> Result<()> {
    let s = grid.spec();
    if index >= s.dims[axis.index()] {
        return Err(Error::InvalidConfig(format!(
            "slice {index} outside axis {axis} of length {}",
            s.dims[axis.index()]
        )));
    }
    if !(hi > lo) {
        return Err(Error::InvalidConfig(format!("empty intensity range [{lo}, {hi}]")));
    }
    let (u, v) = axis.plane();
    let (w, h) = (s.dims[u], s.dims[v]);
    let mut pixels = Vec::with_capacity(w * h);
    for b in 0..h {
        for a in 0..w {
            let mut ijk = [0usize; 3];
            ijk[axis.index()] = index;
            ijk[u] = a;
            ijk[v] = b;
            let t = ((grid.get(ijk[0], ijk[1], ijk[2]) - lo) / (hi - lo)).clamp(0.0, 1.0);
            pixels.push((t * 255.0).round() as u8);
        }
    }
    write_atomic(path, |out| {
        write!(out, "P5\n# axis {axis} index {index}: [{lo}, {hi}] mm -> [0, 255]\n{w} {h}\n255\n")?;
        out.write_all(&pixels)?;
        Ok(())
    })
}
