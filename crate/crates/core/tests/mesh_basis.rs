mod common;

use hdg_core::basis::{lagrange_values, MAX_DEGREE};
use hdg_core::mesh::{
    compute_geometry, reference_face_point, Mesh2D, NONE, TAG_BOTTOM, TAG_INTERIOR, TAG_LEFT, TAG_RIGHT, TAG_TOP,
};
use hdg_core::{gauss_rule, gemm_batch, tabulate_basis, DenseBatch, Discretization, Rect};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rect() -> impl Strategy<Value = Rect> {
    (-2.0f64..2.0, 0.1f64..3.0, -2.0f64..2.0, 0.1f64..3.0).prop_map(|(x0, w, y0, h)| Rect { x0, x1: x0 + w, y0, y1: y0 + h })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn face_connectivity_round_trips(nx in 1usize..7, ny in 1usize..7, dom in rect()) {
        let mesh = Mesh2D::structured(nx, ny, dom).unwrap();
        prop_assert_eq!(mesh.n_elements(), nx * ny);
        prop_assert_eq!(mesh.n_faces(), nx * (ny + 1) + ny * (nx + 1));
        for f in 0..mesh.n_faces() {
            for s in 0..2 {
                let e = mesh.face_to_elements()[f][s];
                if e == NONE {
                    prop_assert_eq!(s, 1);
                    prop_assert!(mesh.is_boundary_face(f));
                    continue;
                }
                let l = mesh.face_local_index()[f][s];
                prop_assert_eq!(mesh.element_to_face()[e][l], f);
            }
            prop_assert_eq!(mesh.is_boundary_face(f), mesh.boundary_tag()[f] != TAG_INTERIOR);
        }
    }

    #[test]
    fn face_lengths_match_the_domain(nx in 1usize..7, ny in 1usize..7, dom in rect()) {
        let mesh = Mesh2D::structured(nx, ny, dom).unwrap();
        let (w, h) = (dom.x1 - dom.x0, dom.y1 - dom.y0);
        let mut boundary = 0.0;
        let mut interior = 0.0;
        for f in 0..mesh.n_faces() {
            if mesh.is_boundary_face(f) {
                boundary += mesh.face_length(f);
            } else {
                interior += mesh.face_length(f);
            }
        }
        prop_assert!((boundary - 2.0 * (w + h)).abs() <= 1e-12 * (w + h));
        let expect_interior = (ny - 1) as f64 * w + (nx - 1) as f64 * h;
        prop_assert!((interior - expect_interior).abs() <= 1e-12 * (w + h) * (nx + ny) as f64);
    }

    #[test]
    fn geometry_is_consistent(nx in 1usize..6, ny in 1usize..6, dom in rect(), q in 1usize..5) {
        let mesh = Mesh2D::structured(nx, ny, dom).unwrap();
        let quad = gauss_rule(q).unwrap();
        let geom = compute_geometry(&mesh, &quad).unwrap();
        prop_assert!(geom.elem_jac_det.iter().all(|&d| d > 0.0));
        prop_assert!(geom.face_jac_det.iter().all(|&d| d > 0.0));
        // Opposite normals on interior faces, unit length everywhere.
        for f in 0..mesh.n_faces() {
            for p in 0..q {
                let n0 = geom.normal(f, 0, p);
                prop_assert!(((n0[0] * n0[0] + n0[1] * n0[1]).sqrt() - 1.0).abs() < 1e-14);
                if !mesh.is_boundary_face(f) {
                    let n1 = geom.normal(f, 1, p);
                    prop_assert!((n0[0] + n1[0]).abs() < 1e-14 && (n0[1] + n1[1]).abs() < 1e-14);
                }
            }
        }
        // Length-weighted outward normals of each element close up.
        for e in 0..mesh.n_elements() {
            let mut sum = [0.0; 2];
            for l in 0..4 {
                let f = mesh.element_to_face()[e][l];
                let side = usize::from(mesh.face_to_elements()[f][0] != e);
                let n = geom.normal(f, side, 0);
                sum[0] += mesh.face_length(f) * n[0];
                sum[1] += mesh.face_length(f) * n[1];
            }
            prop_assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12, "element {e}: {sum:?}");
        }
    }
}

#[test]
fn boundary_tags_follow_the_sides() {
    let mesh = Mesh2D::structured(3, 2, Rect::UNIT).unwrap();
    for f in 0..mesh.n_faces() {
        let [a, b] = mesh.face_vertices()[f];
        let (pa, pb) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
        let expect = match () {
            _ if pa[1] == 0.0 && pb[1] == 0.0 => TAG_BOTTOM,
            _ if pa[0] == 1.0 && pb[0] == 1.0 => TAG_RIGHT,
            _ if pa[1] == 1.0 && pb[1] == 1.0 => TAG_TOP,
            _ if pa[0] == 0.0 && pb[0] == 0.0 => TAG_LEFT,
            _ => TAG_INTERIOR,
        };
        assert_eq!(mesh.boundary_tag()[f], expect, "face {f}");
    }
}

#[test]
fn elements_are_numbered_row_major() {
    let mesh = Mesh2D::structured(3, 2, Rect::UNIT).unwrap();
    for j in 0..2 {
        for i in 0..3 {
            let c = mesh.map_point(i + 3 * j, [0.5, 0.5]);
            assert!((c[0] - (i as f64 + 0.5) / 3.0).abs() < 1e-15);
            assert!((c[1] - (j as f64 + 0.5) / 2.0).abs() < 1e-15);
        }
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(Mesh2D::structured(0, 3, Rect::UNIT).is_err());
    let flat = Rect { x0: 0.0, x1: 0.0, y0: 0.0, y1: 1.0 };
    assert!(Mesh2D::structured(2, 2, flat).is_err());
    assert!(gauss_rule(0).is_err());
    assert!(tabulate_basis(0, &gauss_rule(2).unwrap()).is_err());
    assert!(tabulate_basis(MAX_DEGREE + 1, &gauss_rule(2).unwrap()).is_err());
}

#[test]
fn gauss_rules_integrate_polynomials_exactly() {
    for q in 1..=20 {
        let r = gauss_rule(q).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14, "q = {q}");
        assert!(r.points.iter().all(|&x| x > 0.0 && x < 1.0));
        for d in 0..2 * q {
            let got = r.integrate(|x| x.powi(d as i32));
            let exact = 1.0 / (d as f64 + 1.0);
            assert!((got - exact).abs() < 1e-14, "q = {q}, degree {d}: {got} vs {exact}");
        }
        // One degree more is not integrated exactly.
        let d = 2 * q;
        if q <= 4 {
            assert!((r.integrate(|x| x.powi(d as i32)) - 1.0 / (d as f64 + 1.0)).abs() > 1e-6);
        }
        let (_, w2) = r.tensor();
        assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn basis_tables_are_nodal_and_sum_to_one() {
    for k in 1..=MAX_DEGREE {
        let quad = gauss_rule(k + 2).unwrap();
        let tab = tabulate_basis(k, &quad).unwrap();
        for g in 0..tab.q_e {
            let row = &tab.phi[g * tab.p_e..(g + 1) * tab.p_e];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let dx: f64 = tab.dphi_dxi[g * tab.p_e..(g + 1) * tab.p_e].iter().sum();
            let dy: f64 = tab.dphi_deta[g * tab.p_e..(g + 1) * tab.p_e].iter().sum();
            assert!(dx.abs() < 1e-11 && dy.abs() < 1e-11, "k = {k}");
        }
        for p in 0..tab.q_f {
            assert!((tab.psi[p * tab.p_f..(p + 1) * tab.p_f].iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
        for j in 0..tab.p_e {
            let v = tab.eval_element(tab.element_node(j));
            for (i, &vi) in v.iter().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                assert!((vi - delta).abs() < 1e-13, "k = {k}, phi_{i}(node_{j}) = {vi}");
            }
        }
    }
}

#[test]
fn derivative_tables_match_finite_differences() {
    let h = 1e-6;
    for k in 1..=MAX_DEGREE {
        let quad = gauss_rule(k + 1).unwrap();
        let tab = tabulate_basis(k, &quad).unwrap();
        let (pts, _) = quad.tensor();
        for (g, x) in pts.iter().enumerate() {
            let fx = |d: f64| tab.eval_element([x[0] + d, x[1]]);
            let fy = |d: f64| tab.eval_element([x[0], x[1] + d]);
            let (xp, xm, yp, ym) = (fx(h), fx(-h), fy(h), fy(-h));
            for i in 0..tab.p_e {
                let dx = (xp[i] - xm[i]) / (2.0 * h);
                let dy = (yp[i] - ym[i]) / (2.0 * h);
                let scale = 1.0 + dx.abs().max(dy.abs());
                assert!((tab.dphi_dxi[g * tab.p_e + i] - dx).abs() < 1e-6 * scale, "k = {k}");
                assert!((tab.dphi_deta[g * tab.p_e + i] - dy).abs() < 1e-6 * scale, "k = {k}");
            }
        }
    }
}

/// On face `l` only the element functions with a node on that face survive,
/// and they restrict to the face basis at the matching node.
#[test]
fn trace_tables_restrict_to_the_face_basis() {
    for k in 1..=4 {
        let quad = gauss_rule(k + 2).unwrap();
        let tab = tabulate_basis(k, &quad).unwrap();
        let nodes = &tab.nodes_1d;
        for l in 0..4 {
            for flipped in [false, true] {
                let t = tab.trace(l, flipped);
                for p in 0..tab.q_f {
                    let s = quad.points[p];
                    let param = if flipped { 1.0 - s } else { s };
                    let face_vals = lagrange_values(nodes, param);
                    for i in 0..tab.p_e {
                        let node = tab.element_node(i);
                        let on_face = (0..=k).find(|&m| {
                            let r = reference_face_point(l, nodes[m]);
                            (r[0] - node[0]).abs() < 1e-15 && (r[1] - node[1]).abs() < 1e-15
                        });
                        let expect = on_face.map_or(0.0, |m| face_vals[m]);
                        assert!((t[p * tab.p_e + i] - expect).abs() < 1e-14, "k {k} face {l} point {p} fn {i}");
                    }
                }
            }
        }
    }
}

/// Both elements sharing a face see the same physical quadrature points.
#[test]
fn face_points_agree_from_both_sides() {
    let disc = common::disc(4, 2);
    let mesh = &disc.mesh;
    for f in 0..mesh.n_faces() {
        for side in 0..2 {
            let e = mesh.face_to_elements()[f][side];
            if e == NONE {
                continue;
            }
            let l = mesh.face_local_index()[f][side];
            for (p, &s) in disc.quad.points.iter().enumerate() {
                let param = if mesh.is_flipped(e, l) { 1.0 - s } else { s };
                let x = mesh.map_point(e, reference_face_point(l, param));
                let g = disc.geom.face_points[f * disc.quad.len() + p];
                assert!((x[0] - g[0]).abs() < 1e-14 && (x[1] - g[1]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn mass_matrices_are_spd_and_inverted() {
    for k in 1..=MAX_DEGREE {
        let disc = Discretization::new(Mesh2D::structured(2, 3, Rect { x0: 0.0, x1: 2.0, y0: -1.0, y1: 0.5 }).unwrap(), k, None)
            .unwrap();
        let mass = &disc.factors.mass;
        let prod = gemm_batch(&disc.factors.mass_inv, mass, false).unwrap();
        let eye = DenseBatch::identity(disc.pe(), disc.n_elements());
        let err = prod.data().iter().zip(eye.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "k = {k}: {err}");
        for e in 0..disc.n_elements() {
            let m = DMatrix::from_column_slice(disc.pe(), disc.pe(), mass.block(e));
            assert!((&m - m.transpose()).amax() < 1e-15 * m.amax());
            assert!(m.cholesky().is_some(), "k = {k}, element {e}");
        }
    }
}
