use proptest::prelude::*;

use wgds::assembly::{assemble_a_h, assemble_b_h, assemble_div_gram, bilinear};
use wgds::mesh::{build_rect_mesh, check_colorable, read_wgmesh, write_wgmesh, DarcyStokesBox, Rect, Region};
use wgds::mms::{least_squares_rates, pairwise_rates};
use wgds::polyquad::Basis;
use wgds::weakops::{all_cell_operators, weak_divergence, weak_gradient};
use wgds::wgspace::{dot, PressureFunction, QuadSettings, WgFunction, WgParams, WgSpace};

fn space(n: usize, params: WgParams) -> WgSpace {
    let mesh = build_rect_mesh(n, &DarcyStokesBox::default()).unwrap();
    WgSpace::new(mesh, params, QuadSettings::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_gradient_of_affine_field_is_its_gradient(
        c in proptest::array::uniform6(-3.0f64..3.0),
        n in 1usize..4,
    ) {
        let s = space(n, WgParams::default());
        let ops = all_cell_operators(&s);
        let f = move |_: Region, p: [f64; 2]| [c[0] + c[1] * p[0] + c[2] * p[1], c[3] + c[4] * p[0] + c[5] * p[1]];
        let w = s.project_qh_full(f);
        for cell in 0..s.mesh.cells.len() {
            let centre = s.mesh.cells[cell].centroid;
            let b = s.beta_basis(cell).eval(centre);
            let d = weak_divergence(&s, &ops[cell], cell, &w);
            prop_assert!((dot(&d, &b) - (c[1] + c[5])).abs() < 1e-10);
            if s.region(cell) == Region::Stokes {
                let g = weak_gradient(&s, &ops[cell], cell, &w).unwrap();
                for (k, want) in [c[1], c[2], c[4], c[5]].into_iter().enumerate() {
                    prop_assert!((dot(&g[k], &b) - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn a_h_is_symmetric_and_nonnegative(seed in any::<u64>(), alpha_s in 1usize..3) {
        use rand::{Rng, SeedableRng};
        let params = WgParams::default().with_degrees(alpha_s, 1, 1, alpha_s - 1, 0).with_rho(0.5);
        let s = space(2, params);
        let ops = all_cell_operators(&s);
        let a = assemble_a_h(&s, &ops);
        prop_assert!(a.asymmetry() <= 1e-12 * a.max_abs());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..a.nrows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        prop_assert!(bilinear(&a, &v, &v) >= 0.0);
    }

    #[test]
    fn b_h_annihilates_constants_on_interior_fields(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let s = space(3, WgParams::default());
        let ops = all_cell_operators(&s);
        let b = assemble_b_h(&s, &ops);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = WgFunction::zeros(&s.dofs);
        v.free.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let bv = b.matvec(&v.combined());
        let ones = PressureFunction { coeffs: vec![1.0; s.dofs.n_pressure], normalized: false };
        prop_assert!(dot(&bv, &ones.coeffs).abs() < 1e-11);
    }

    #[test]
    fn div_gram_is_the_divergence_norm(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let s = space(2, WgParams::default());
        let ops = all_cell_operators(&s);
        let d = assemble_div_gram(&s, &ops);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = WgFunction::zeros(&s.dofs);
        v.free.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let by_quadrature: f64 = (0..s.mesh.cells.len())
            .map(|c| {
                let dv = weak_divergence(&s, &ops[c], c, &v);
                let b = s.beta_basis(c);
                s.cell_rules[c].integrate(|p| dot(&dv, &b.eval(p)).powi(2))
            })
            .sum();
        let vc = v.combined();
        prop_assert!((bilinear(&d, &vc, &vc) - by_quadrature).abs() <= 1e-10 * (1.0 + by_quadrature));
    }

    #[test]
    fn normalized_pressure_has_zero_mean(coeffs in proptest::collection::vec(-5.0f64..5.0, 8)) {
        let s = space(2, WgParams::default());
        let mut p = PressureFunction { coeffs, normalized: false };
        p.normalize(&s);
        prop_assert!(p.integral(&s).abs() < 1e-12);
    }

    #[test]
    fn power_law_rates_are_recovered(c in 0.01f64..10.0, r in proptest::array::uniform5(0.5f64..3.0)) {
        let ns = [8usize, 16, 32, 64];
        let errs: Vec<[f64; 5]> = ns.iter().map(|&n| std::array::from_fn(|k| c * (n as f64).powf(-r[k]))).collect();
        let ls = least_squares_rates(&ns, &errs).unwrap();
        for k in 0..5 {
            prop_assert!((ls[k] - r[k]).abs() < 1e-10);
        }
        for p in pairwise_rates(&ns, &errs) {
            for k in 0..5 {
                prop_assert!((p[k] - r[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rectangular_grids_are_colorable(
        n in 1usize..12,
        w in 0.2f64..5.0,
        hs in 0.2f64..5.0,
        hd in 0.2f64..5.0,
    ) {
        let domain = DarcyStokesBox {
            stokes: Rect { x0: 0.0, x1: w, y0: 0.0, y1: hs },
            darcy: Rect { x0: 0.0, x1: w, y0: -hd, y1: 0.0 },
        };
        let mesh = build_rect_mesh(n, &domain).unwrap();
        let c = check_colorable(&mesh);
        prop_assert!(c.colorable);
        prop_assert!(c.sweeps <= mesh.cells_in(Region::Stokes).count());
    }

    #[test]
    fn mesh_file_round_trip(n in 1usize..6) {
        let mesh = build_rect_mesh(n, &DarcyStokesBox::default()).unwrap();
        let back = read_wgmesh(&write_wgmesh(&mesh), None).unwrap();
        prop_assert_eq!(back.vertices, mesh.vertices);
        prop_assert_eq!(back.cells.len(), mesh.cells.len());
        prop_assert_eq!(back.edges.len(), mesh.edges.len());
        for (a, b) in back.edges.iter().zip(&mesh.edges) {
            prop_assert_eq!(a.class, b.class);
        }
    }
}
