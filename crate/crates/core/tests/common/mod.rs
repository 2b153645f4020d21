//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use hdg_core::local::{assemble_element_operators, linearize_element, recover_local, TimeTerm};
use hdg_core::mesh::{build_structured_quad, Mesh2D, Rect, NONE};
use hdg_core::models::PdeModel;
use hdg_core::newton::assemble_residual;
use hdg_core::trace::{assemble_global, to_dense, FaceBlockMatrix};
use hdg_core::{Discretization, StateFields};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn disc(n: usize, k: usize) -> Discretization {
    Discretization::new(build_structured_quad(n, Rect::UNIT).unwrap(), k, None).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dense(k: &FaceBlockMatrix) -> DMatrix<f64> {
    let d = to_dense(k).unwrap();
    DMatrix::from_column_slice(d.rows(), d.cols(), d.data())
}

/// Global trace indices of element `e`'s faces in local face order.
pub fn element_dofs(mesh: &Mesh2D, pf: usize, e: usize) -> Vec<usize> {
    mesh.element_to_face()[e].iter().flat_map(|&f| (0..pf).map(move |m| f * pf + m)).collect()
}

/// `Σ_e Rₑᵀ (Rₑ K Rₑᵀ)⁻¹ Rₑ` from the dense matrix.
pub fn asm_oracle(kd: &DMatrix<f64>, mesh: &Mesh2D, pf: usize) -> DMatrix<f64> {
    let n = kd.nrows();
    let mut p = DMatrix::zeros(n, n);
    for e in 0..mesh.n_elements() {
        let idx = element_dofs(mesh, pf, e);
        let kl = DMatrix::from_fn(idx.len(), idx.len(), |r, c| kd[(idx[r], idx[c])]);
        let inv = kl.try_inverse().expect("subdomain matrix invertible");
        for (r, &gr) in idx.iter().enumerate() {
            for (c, &gc) in idx.iter().enumerate() {
                p[(gr, gc)] += inv[(r, c)];
            }
        }
    }
    p
}

/// Newton increment through condensation, a dense solve of the trace
/// system and local recovery.
pub fn condensed_step(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> (Vec<f64>, Vec<f64>) {
    let ops = assemble_element_operators(disc, model, state, time).unwrap();
    let (k, r) = assemble_global(&ops, &disc.mesh).unwrap();
    let duhat = dense(&k).lu().solve(&DVector::from_vec(r)).expect("trace system solvable");
    let duhat: Vec<f64> = duhat.iter().copied().collect();
    let du = recover_local(disc, &ops, &duhat).unwrap();
    (du, duhat)
}

/// Newton increment from the full linear system in `(u, q, û)`:
///
/// ```text
///   M δq_d + B_d δu + C_d δû = 0
///   E δu + Σ D_d δq_d + F δû = −R_u
///   Σ_e (H δu + Σ G_d δq_d + J δû) = −R_û
/// ```
pub fn monolithic_step(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> (Vec<f64>, Vec<f64>) {
    let (pe, pf, nt, ne) = (disc.pe(), disc.pf(), disc.nt(), disc.n_elements());
    let nu = pe * ne;
    let nq = 2 * pe * ne;
    let nh = disc.n_trace_dofs();
    let n = nu + nq + nh;
    let mut st = state.clone();
    st.refresh_q(disc);
    let (rt, ru) = assemble_residual(disc, model, &st, time).unwrap();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let fac = &disc.factors;
    let qi = |e: usize, d: usize, i: usize| nu + (e * 2 + d) * pe + i;
    for e in 0..ne {
        let lin = linearize_element(disc, model, &st, e, time, true);
        let tr = element_dofs(&disc.mesh, pf, e);
        for i in 0..pe {
            let row = e * pe + i;
            b[row] = -ru[row];
            for j in 0..pe {
                a[(row, e * pe + j)] += lin.e[i + pe * j];
                for d in 0..2 {
                    a[(row, qi(e, d, j))] += lin.d[d][i + pe * j];
                }
            }
            for (c, &g) in tr.iter().enumerate() {
                a[(row, nu + nq + g)] += lin.f[i + pe * c];
            }
            for d in 0..2 {
                let row = qi(e, d, i);
                for j in 0..pe {
                    a[(row, qi(e, d, j))] += fac.mass.block(e)[i + pe * j];
                    a[(row, e * pe + j)] += fac.b[d].block(e)[i + pe * j];
                }
                for (c, &g) in tr.iter().enumerate() {
                    a[(row, nu + nq + g)] += fac.c[d].block(e)[i + pe * c];
                }
            }
        }
        for (r, &gr) in tr.iter().enumerate() {
            let row = nu + nq + gr;
            for j in 0..pe {
                a[(row, e * pe + j)] += lin.h[r + nt * j];
                for d in 0..2 {
                    a[(row, qi(e, d, j))] += lin.g[d][r + nt * j];
                }
            }
            for (c, &gc) in tr.iter().enumerate() {
                a[(row, nu + nq + gc)] += lin.j[r + nt * c];
            }
        }
    }
    for (g, v) in rt.iter().enumerate() {
        b[nu + nq + g] = -v;
    }
    let x = a.lu().solve(&b).expect("monolithic system solvable");
    (x.rows(0, nu).iter().copied().collect(), x.rows(nu + nq, nh).iter().copied().collect())
}

/// Every face index appears in its own neighbor row exactly once, in slot 0.
pub fn check_neighbor_table(k: &FaceBlockMatrix) {
    for f in 0..k.nf() {
        assert_eq!(k.neighbor(f, 0), f);
        for s in 1..k.nb() {
            assert!(k.neighbor(f, s) == NONE || k.neighbor(f, s) != f);
        }
    }
}
