use super::rasterize;
use crate::error::Result;
use crate::geometry::{BinaryGrid, ScalarGrid, TriangleMesh};

/// Stand-in for "no feature voxel anywhere" in the squared-distance output.
pub const EDT_EMPTY: f32 = f32::MAX;

const INF: i64 = i64::MAX / 4;

/// Squared voxel distances to the nearest set voxel.
#[derive(Clone, Debug)]
pub struct EdtGrid {
    pub grid: ScalarGrid,
    /// No voxel was set; every value is [`EDT_EMPTY`].
    pub empty: bool,
}

/// Signed distances from the rasterize + distance-transform path.
#[derive(Clone, Debug)]
pub struct EdtSdm {
    pub grid: ScalarGrid,
    /// Rasterization found no interior voxel: the shape is thinner than the grid
    /// spacing and the result carries no inside region.
    pub undersampled: bool,
}

/// Intersection abscissa of the parabolas rooted at `q` and `v`, as `num / den`
/// with `den > 0`.
#[inline]
fn meet(f: &[i64], q: usize, v: usize) -> (i64, i64) {
    let (qi, vi) = (q as i64, v as i64);
    ((f[q] + qi * qi) - (f[v] + vi * vi), 2 * (qi - vi))
}

#[inline]
fn le(a: (i64, i64), b: (i64, i64)) -> bool {
    (a.0 as i128) * (b.1 as i128) <= (b.0 as i128) * (a.1 as i128)
}

/// Lower envelope of parabolas `(x − i)² + f[i]` over the finite entries of `f`.
/// Integer arithmetic throughout, so the output is exact.
fn envelope_1d(f: &[i64], out: &mut [i64], v: &mut Vec<usize>, z: &mut Vec<(i64, i64)>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if f[q] >= INF {
            continue;
        }
        // pop parabolas hidden behind the new one
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    break;
                }
                Some(&top) => {
                    let s = meet(f, q, top);
                    if let Some(&bound) = z.last() {
                        if le(s, bound) {
                            v.pop();
                            z.pop();
                            continue;
                        }
                    }
                    v.push(q);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(INF);
        return;
    }
    // z[k] separates v[k] and v[k + 1]
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k < z.len() && (z[k].0 as i128) < (q as i128) * (z[k].1 as i128) {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *slot = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance, in voxel units, from every voxel to the nearest
/// `true` voxel: three separable lower-envelope passes (x, then y, then z).
pub fn edt_squared(binary: &BinaryGrid) -> EdtGrid {
    let spec = *binary.spec();
    let [nx, ny, nz] = spec.dims;
    let mut d: Vec<i64> = binary.values().iter().map(|&b| if b { 0 } else { INF }).collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut v, mut z) = (Vec::new(), Vec::new());

    let mut pass = |d: &mut Vec<i64>, len: usize, lines: Vec<(usize, usize)>| {
        for (start, stride) in lines {
            line.clear();
            line.extend((0..len).map(|t| d[start + t * stride]));
            out.resize(len, 0);
            envelope_1d(&line, &mut out, &mut v, &mut z);
            for t in 0..len {
                d[start + t * stride] = out[t];
            }
        }
    };
    let x_lines = (0..ny * nz).map(|r| (r * nx, 1)).collect();
    pass(&mut d, nx, x_lines);
    let y_lines = (0..nz)
        .flat_map(|k| (0..nx).map(move |i| (i + nx * ny * k, nx)))
        .collect();
    pass(&mut d, ny, y_lines);
    let z_lines = (0..nx * ny).map(|c| (c, nx * ny)).collect();
    pass(&mut d, nz, z_lines);

    let empty = d.first().map_or(true, |&x| x >= INF);
    let values = d
        .into_iter()
        .map(|x| if x >= INF { EDT_EMPTY } else { x as f32 })
        .collect();
    EdtGrid {
        grid: ScalarGrid::new(spec, values).expect("sizes match"),
        empty,
    }
}

/// Voxels whose 6-neighbourhood contains the opposite occupancy.
fn boundary(inside: &BinaryGrid) -> BinaryGrid {
    let spec = *inside.spec();
    let [nx, ny, nz] = spec.dims;
    let mut out = vec![false; spec.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = inside.get(i, j, k);
                let differs = |a: usize, b: usize, c: usize| inside.get(a, b, c) != v;
                out[spec.index(i, j, k)] = (i > 0 && differs(i - 1, j, k))
                    || (i + 1 < nx && differs(i + 1, j, k))
                    || (j > 0 && differs(i, j - 1, k))
                    || (j + 1 < ny && differs(i, j + 1, k))
                    || (k > 0 && differs(i, j, k - 1))
                    || (k + 1 < nz && differs(i, j, k + 1));
            }
        }
    }
    BinaryGrid::new(spec, out).expect("sizes match")
}

/// Rasterize, then distance to the two-sided boundary voxel set, negative on
/// interior voxels.
pub fn sdm_edt(mesh: &TriangleMesh, spec: &crate::GridSpec) -> Result<EdtSdm> {
    sdm_from_binary(&rasterize(mesh, spec)?)
}

/// Signed distance to the boundary of an occupancy volume, negative on
/// occupied voxels. Same conventions as [`sdm_edt`].
pub fn sdm_from_binary(inside: &BinaryGrid) -> Result<EdtSdm> {
    let spec = inside.spec();
    let undersampled = inside.count() == 0;
    let edt = edt_squared(&boundary(inside));
    let h = spec.spacing;
    let values = edt
        .grid
        .values()
        .iter()
        .zip(inside.values())
        .map(|(&d2, &occupied)| {
            if d2 == EDT_EMPTY {
                EDT_EMPTY
            } else {
                let d = h * (d2 as f64).sqrt();
                (if occupied { -d } else { d }) as f32
            }
        })
        .collect();
    Ok(EdtSdm {
        grid: ScalarGrid::new(*spec, values)?,
        undersampled,
    })
}
