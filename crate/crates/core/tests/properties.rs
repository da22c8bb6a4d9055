use proptest::prelude::*;

use sdmforge_core::cochlea::{tessellate, ShapeParams, TessellationSpec, PARAM_RANGES};
use sdmforge_core::engines::{build_bvh, clamp_grid, sdm_bvh, sdm_bvh_clamped, sdm_naive, BackendId, CLAMP_HI, CLAMP_LO};
use sdmforge_core::fit::{fit_shape, synthetic_target, FitBackend, FitConfig};
use sdmforge_core::geometry::point_in_mesh;
use sdmforge_core::io::{read_raw, read_vtk, write_raw, write_vtk};
use sdmforge_core::isosurface::{marching_cubes, surface_distance_seeded};
use sdmforge_core::{GridSpec, ScalarGrid, Vec3};

fn coarse() -> GridSpec {
    GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 1.0, [10, 10, 12]).unwrap()
}

fn params() -> impl Strategy<Value = ShapeParams> {
    let [a, alpha, b, phi] = PARAM_RANGES;
    (a.0..=a.1, alpha.0..=alpha.1, b.0..=b.1, phi.0..=phi.1)
        .prop_map(|(a, alpha, b, phi)| ShapeParams { a, alpha, b, phi })
}

fn small_grid() -> impl Strategy<Value = ScalarGrid> {
    (2usize..6, 2usize..6, 2usize..6, 0.05f64..2.0, -3.0f64..3.0).prop_flat_map(|(x, y, z, h, o)| {
        let spec = GridSpec::new(Vec3::new(o, -o, 0.5 * o), h, [x, y, z]).unwrap();
        prop::collection::vec(-5.0f32..5.0, spec.len()).prop_map(move |v| ScalarGrid::new(spec, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn bvh_matches_naive_on_coarse_grids(p in params()) {
        let mesh = tessellate(&p, &TessellationSpec::default()).unwrap();
        let spec = coarse();
        let naive = sdm_naive(&mesh, &spec).unwrap();
        let bvh = build_bvh(&mesh).unwrap();
        prop_assert!(sdm_bvh(&mesh, &bvh, &spec).unwrap().max_abs_diff(&naive).unwrap() <= 1e-6);
        let clamped = sdm_bvh_clamped(&mesh, &bvh, &spec, CLAMP_LO, CLAMP_HI).unwrap();
        prop_assert_eq!(clamped, clamp_grid(&naive, CLAMP_LO, CLAMP_HI));
    }

    #[test]
    fn sign_agrees_with_parity_away_from_the_surface(p in params()) {
        let mesh = tessellate(&p, &TessellationSpec::default()).unwrap();
        let spec = coarse();
        let s = sdm_naive(&mesh, &spec).unwrap();
        for (i, &v) in s.values().iter().enumerate() {
            if (v as f64).abs() > spec.spacing {
                prop_assert_eq!(v < 0.0, point_in_mesh(spec.center_of(i), &mesh).unwrap());
            }
        }
    }

    #[test]
    fn fits_are_deterministic(p in params(), seed in 0u64..100) {
        let backend = FitBackend::mesh(BackendId::Bvh);
        let target = synthetic_target(&p, &backend, &coarse(), 0.0, seed).unwrap();
        let cfg = FitConfig { restarts: 2, max_evaluations: 8, seed, ..FitConfig::default() };
        let a = fit_shape(&target, &backend, &cfg).unwrap();
        let b = fit_shape(&target, &backend, &cfg).unwrap();
        prop_assert_eq!(a.params, b.params);
        prop_assert_eq!(a.trace, b.trace);
    }
}

proptest! {
    #[test]
    fn normalization_round_trips(p in params()) {
        let u = p.normalized();
        prop_assert!(u.iter().all(|x| (-1.0..=1.0).contains(x)));
        let back = ShapeParams::from_normalized(u).to_array();
        for (x, y) in back.iter().zip(p.to_array()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn clamp_bounds_every_value(g in small_grid()) {
        let c = clamp_grid(&g, CLAMP_LO, CLAMP_HI);
        for (&v, &orig) in c.values().iter().zip(g.values()) {
            prop_assert!((CLAMP_LO..=CLAMP_HI).contains(&v));
            if (CLAMP_LO..=CLAMP_HI).contains(&orig) {
                prop_assert_eq!(v, orig);
            }
        }
    }

    #[test]
    fn grid_files_round_trip(g in small_grid()) {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("g.raw");
        write_raw(&g, &raw, None).unwrap();
        let (back, side) = read_raw(&raw).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(side.dims, g.spec().dims);
        let vtk = dir.path().join("g.vtk");
        write_vtk(&g, &vtk, "t").unwrap();
        let back = read_vtk(&vtk).unwrap();
        prop_assert_eq!(back.spec().dims, g.spec().dims);
        prop_assert!(back.max_abs_diff(&g).unwrap() <= 1e-6);
    }

    #[test]
    fn isosurface_vertices_sit_on_sign_changing_edges(r in 1.0f64..2.5, c in -0.3f64..0.3) {
        let spec = GridSpec::new(Vec3::new(-3.0, -3.0, -3.0), 0.25, [25, 25, 25]).unwrap();
        let s = ScalarGrid::from_fn(spec, |p| (p - Vec3::new(c, -c, 0.5 * c)).norm() - r);
        let m = marching_cubes(&s, 0.0);
        prop_assert!(!m.is_empty());
        for v in &m.vertices {
            let g = (*v - spec.voxel_center(0, 0, 0)) / spec.spacing;
            let frac: Vec<f64> = g.to_array().iter().map(|x| (x - x.round()).abs()).collect();
            prop_assert!(frac.iter().filter(|&&f| f > 1e-9).count() <= 1);
            let radius = (*v - Vec3::new(c, -c, 0.5 * c)).norm();
            prop_assert!((radius - r).abs() <= 0.05);
        }
    }

    #[test]
    fn shifting_values_and_level_together_keeps_the_surface(shift in -2.0f64..2.0) {
        let spec = GridSpec::new(Vec3::new(-2.0, -2.0, -2.0), 0.25, [17, 17, 17]).unwrap();
        let base = ScalarGrid::from_fn(spec, |p| p.norm() - 1.3);
        let moved = ScalarGrid::from_fn(spec, |p| p.norm() - 1.3 + shift);
        let a = marching_cubes(&base, 0.0);
        let b = marching_cubes(&moved, shift);
        prop_assert_eq!(&a.faces, &b.faces);
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            prop_assert!((*x - *y).norm() <= 1e-4);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn surface_distance_is_symmetric(r in 0.8f64..1.6, seed in 0u64..1000) {
        let spec = GridSpec::new(Vec3::new(-2.0, -2.0, -2.0), 0.2, [21, 21, 21]).unwrap();
        let a = marching_cubes(&ScalarGrid::from_fn(spec, |p| p.norm() - 1.2), 0.0).to_mesh().unwrap();
        let b = marching_cubes(&ScalarGrid::from_fn(spec, |p| p.norm() - r), 0.0).to_mesh().unwrap();
        let ab = surface_distance_seeded(&a, &b, 300, seed).unwrap();
        let ba = surface_distance_seeded(&b, &a, 300, seed).unwrap();
        prop_assert!((ab.mean - ba.mean).abs() <= 1e-12);
        prop_assert!((ab.hausdorff - ba.hausdorff).abs() <= 1e-12);
        prop_assert!(ab.hausdorff >= (r - 1.2).abs() - 0.05);
    }
}
