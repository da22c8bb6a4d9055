//! Small closed reference meshes used by tests, benches and the CLI self-checks.

use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

fn orient_outward(vertices: &[Vec3], faces: &mut [[u32; 3]]) {
    let centre = vertices.iter().fold(Vec3::ZERO, |s, &v| s + v) / vertices.len() as f64;
    for f in faces.iter_mut() {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let n = (b - a).cross(c - a);
        if n.dot((a + b + c) / 3.0 - centre) < 0.0 {
            f.swap(1, 2);
        }
    }
}

/// Axis-aligned cube spanning `[0, 1]³`, two triangles per side.
pub fn unit_cube() -> TriangleMesh {
    let vertices = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriangleMesh::closed(vertices, faces).expect("cube is closed")
}

/// Axis-aligned box from `lo` to `hi`.
pub fn cuboid(lo: Vec3, hi: Vec3) -> TriangleMesh {
    let cube = unit_cube();
    let size = hi - lo;
    cube.map_vertices(|v| Vec3::new(lo.x + v.x * size.x, lo.y + v.y * size.y, lo.z + v.z * size.z))
        .expect("box with positive extent")
}

pub fn regular_tetrahedron() -> TriangleMesh {
    let vertices = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    let mut faces = vec![[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
    orient_outward(&vertices, &mut faces);
    TriangleMesh::closed(vertices, faces).expect("tetrahedron is closed")
}

/// Subdivided icosahedron projected onto a sphere of `radius` about the origin.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, g, 0.0),
        (1.0, g, 0.0),
        (-1.0, -g, 0.0),
        (1.0, -g, 0.0),
        (0.0, -1.0, g),
        (0.0, 1.0, g),
        (0.0, -1.0, -g),
        (0.0, 1.0, -g),
        (g, 0.0, -1.0),
        (g, 0.0, 1.0),
        (-g, 0.0, -1.0),
        (-g, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) * 0.5).normalized());
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = *v * radius;
    }
    orient_outward(&vertices, &mut faces);
    TriangleMesh::closed(vertices, faces).expect("icosphere is closed")
}
