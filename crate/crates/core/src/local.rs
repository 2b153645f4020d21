//! Element-local HDG kernels: precomputed mass and gradient factors, the
//! linearized element blocks, static condensation and local recovery.
//!
//! Per element the unknowns are `u` (`p_e` nodal values), `q = (q_x, q_y)`
//! (`2 p_e`) and the traces of its four faces (`n_t = 4 p_f`, face `l` at
//! offset `l p_f`, face dofs in the face's canonical direction). With
//!
//! ```text
//!   M q_d + B_d u + C_d û = 0,     B_d,ij = ∫ φ_j ∂_d φ_i,   C_d,il = −∫_∂K ψ_l φ_i n_d
//! ```
//!
//! `q` is a function of `(u, û)` and the Newton system on each element is
//! `[Ē F̄; H̄ J̄] [δu; δû] = [r_u; r_û]` where the bars fold in `dq/du`, `dq/dû`.

use crate::basis::{gauss_rule, tabulate_basis, BasisTab, QuadratureRule};
use crate::dense::{gemm_batch, gemv_strided_batch, invert_block, lu_invert_batch, matvec_block, DenseBatch, DenseError};
use crate::error::{HdgError, Result};
use crate::mesh::{compute_geometry, GeomFactors, Mesh2D, N_LOCAL_FACES, TAG_INTERIOR};
use crate::models::{BoundaryKind, PdeModel};
use crate::parallel;

#[derive(Debug, Clone)]
pub struct LocalFactors {
    pub mass: DenseBatch,
    pub mass_inv: DenseBatch,
    pub b: [DenseBatch; 2],
    pub c: [DenseBatch; 2],
    pub minv_b: [DenseBatch; 2],
    pub minv_c: [DenseBatch; 2],
}

/// Mesh, basis, quadrature, geometry and local factors of one discretization.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh2D,
    pub quad: QuadratureRule,
    pub basis: BasisTab,
    pub geom: GeomFactors,
    pub factors: LocalFactors,
    elem_weights: Vec<f64>,
}

impl Discretization {
    /// `quad_points` defaults to `k + 2` Gauss points per direction.
    pub fn new(mesh: Mesh2D, k: usize, quad_points: Option<usize>) -> Result<Self> {
        let quad = gauss_rule(quad_points.unwrap_or(k + 2))?;
        let basis = tabulate_basis(k, &quad)?;
        let geom = compute_geometry(&mesh, &quad)?;
        let factors = precompute_local_factors(&mesh, &basis, &quad, &geom)?;
        let (_, elem_weights) = quad.tensor();
        Ok(Self { mesh, quad, basis, geom, factors, elem_weights })
    }

    pub fn k(&self) -> usize {
        self.basis.k
    }

    pub fn pe(&self) -> usize {
        self.basis.p_e
    }

    pub fn pf(&self) -> usize {
        self.basis.p_f
    }

    /// Trace unknowns per element.
    pub fn nt(&self) -> usize {
        self.basis.p_f * N_LOCAL_FACES
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn n_trace_dofs(&self) -> usize {
        self.basis.p_f * self.mesh.n_faces()
    }

    /// Copies the traces of element `e`'s faces into `out` (length `nt`).
    pub fn gather_element_trace(&self, e: usize, uhat: &[f64], out: &mut [f64]) {
        let pf = self.pf();
        for (l, &f) in self.mesh.element_to_face()[e].iter().enumerate() {
            out[l * pf..(l + 1) * pf].copy_from_slice(&uhat[f * pf..(f + 1) * pf]);
        }
    }

    pub fn gather_all_traces(&self, uhat: &[f64]) -> Vec<f64> {
        let nt = self.nt();
        let mut out = vec![0.0; nt * self.n_elements()];
        for e in 0..self.n_elements() {
            self.gather_element_trace(e, uhat, &mut out[e * nt..(e + 1) * nt]);
        }
        out
    }

    /// Nodal interpolant of `f` in the element space.
    pub fn interpolate_elements<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        let pe = self.pe();
        let mut out = Vec::with_capacity(pe * self.n_elements());
        for e in 0..self.n_elements() {
            for i in 0..pe {
                out.push(f(self.mesh.map_point(e, self.basis.element_node(i))));
            }
        }
        out
    }

    /// Nodal interpolant of `f` in the trace space.
    pub fn interpolate_traces<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_trace_dofs());
        for face in 0..self.mesh.n_faces() {
            for &s in &self.basis.nodes_1d {
                out.push(f(self.mesh.face_point(face, s)));
            }
        }
        out
    }

    /// `‖u_h − exact‖_L2` using `extra` more Gauss points per direction than
    /// assembly.
    pub fn l2_error<F: Fn([f64; 2]) -> f64>(&self, u: &[f64], exact: F, extra: usize) -> Result<f64> {
        let quad = gauss_rule(self.quad.len() + extra)?;
        let (pts, wts) = quad.tensor();
        let pe = self.pe();
        let mut err2 = 0.0;
        for e in 0..self.n_elements() {
            for (xi, w) in pts.iter().zip(&wts) {
                let phi = self.basis.eval_element(*xi);
                let uh: f64 = phi.iter().zip(&u[e * pe..(e + 1) * pe]).map(|(a, b)| a * b).sum();
                let j = self.mesh.jacobian(e, *xi);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                let d = uh - exact(self.mesh.map_point(e, *xi));
                err2 += w * det * d * d;
            }
        }
        Ok(err2.sqrt())
    }

    fn boundary_kind(&self, model: &dyn PdeModel, f: usize) -> FaceKind {
        match self.mesh.boundary_tag()[f] {
            TAG_INTERIOR => FaceKind::Interior,
            tag => match model.boundary_kind(tag) {
                BoundaryKind::Dirichlet => FaceKind::Dirichlet(tag),
                BoundaryKind::Flux => FaceKind::Flux(tag),
            },
        }
    }

    /// Whether each face carries Dirichlet data for `model`.
    pub fn dirichlet_faces(&self, model: &dyn PdeModel) -> Vec<bool> {
        (0..self.mesh.n_faces()).map(|f| matches!(self.boundary_kind(model, f), FaceKind::Dirichlet(_))).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum FaceKind {
    Interior,
    Dirichlet(u8),
    Flux(u8),
}

/// Physical gradients of the element basis at quadrature point `g`.
fn physical_gradients(basis: &BasisTab, geom: &GeomFactors, e: usize, g: usize, gx: &mut [f64], gy: &mut [f64]) {
    let pe = basis.p_e;
    let inv = geom.elem_inv_jacobian[e * geom.q_e + g];
    let dxi = &basis.dphi_dxi[g * pe..(g + 1) * pe];
    let deta = &basis.dphi_deta[g * pe..(g + 1) * pe];
    for i in 0..pe {
        gx[i] = dxi[i] * inv[0][0] + deta[i] * inv[1][0];
        gy[i] = dxi[i] * inv[0][1] + deta[i] * inv[1][1];
    }
}

/// Assembles `M`, `B_d`, `C_d` by quadrature and stores `M⁻¹`, `M⁻¹B_d`, `M⁻¹C_d`.
pub fn precompute_local_factors(
    mesh: &Mesh2D,
    basis: &BasisTab,
    quad: &QuadratureRule,
    geom: &GeomFactors,
) -> Result<LocalFactors> {
    let (pe, pf, qe, qf) = (basis.p_e, basis.p_f, basis.q_e, basis.q_f);
    let nt = pf * N_LOCAL_FACES;
    let ne = mesh.n_elements();
    let (_, w2) = quad.tensor();

    // phi_t is q_e x p_e: the transpose of the tabulated values.
    let mut phi_t = DenseBatch::zeros(qe, pe, 1);
    for g in 0..qe {
        for i in 0..pe {
            phi_t.set(0, g, i, basis.phi[g * pe + i]);
        }
    }
    let mut wphi = DenseBatch::zeros(qe, pe, ne);
    let mut wgrad = [DenseBatch::zeros(qe, pe, ne), DenseBatch::zeros(qe, pe, ne)];
    let mut gx = vec![0.0; pe];
    let mut gy = vec![0.0; pe];
    for e in 0..ne {
        for g in 0..qe {
            let w = w2[g] * geom.elem_jac_det[e * qe + g];
            physical_gradients(basis, geom, e, g, &mut gx, &mut gy);
            for i in 0..pe {
                wphi.set(e, g, i, w * basis.phi[g * pe + i]);
                wgrad[0].set(e, g, i, w * gx[i]);
                wgrad[1].set(e, g, i, w * gy[i]);
            }
        }
    }
    let mass = gemm_batch(&wphi, &phi_t, true)?;
    let b = [gemm_batch(&wgrad[0], &phi_t, true)?, gemm_batch(&wgrad[1], &phi_t, true)?];

    let mut c = [DenseBatch::zeros(pe, nt, ne), DenseBatch::zeros(pe, nt, ne)];
    for e in 0..ne {
        for l in 0..N_LOCAL_FACES {
            let f = mesh.element_to_face()[e][l];
            let side = usize::from(mesh.face_to_elements()[f][0] != e);
            let tr = basis.trace(l, side == 1);
            for p in 0..qf {
                let w = quad.weights[p] * geom.face_jac_det[f * qf + p];
                let n = geom.normal(f, side, p);
                for m in 0..pf {
                    let psi = basis.psi[p * pf + m];
                    for i in 0..pe {
                        let v = w * tr[p * pe + i] * psi;
                        for d in 0..2 {
                            let old = c[d].get(e, i, l * pf + m);
                            c[d].set(e, i, l * pf + m, old - v * n[d]);
                        }
                    }
                }
            }
        }
    }

    let mass_inv = lu_invert_batch(&mass).map_err(|err| match err {
        DenseError::SingularBlock { index, .. } => HdgError::SingularMass { element: index },
        other => other.into(),
    })?;
    let minv_b = [gemm_batch(&mass_inv, &b[0], false)?, gemm_batch(&mass_inv, &b[1], false)?];
    let minv_c = [gemm_batch(&mass_inv, &c[0], false)?, gemm_batch(&mass_inv, &c[1], false)?];
    Ok(LocalFactors { mass, mass_inv, b, c, minv_b, minv_c })
}

/// Element, gradient and trace unknowns.
///
/// `u[e * p_e + i]`, `q[(e * 2 + d) * p_e + i]`, `uhat[f * p_f + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFields {
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    pub uhat: Vec<f64>,
}

impl StateFields {
    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            u: vec![0.0; disc.pe() * disc.n_elements()],
            q: vec![0.0; 2 * disc.pe() * disc.n_elements()],
            uhat: vec![0.0; disc.n_trace_dofs()],
        }
    }

    /// Interpolates `f` into `u` and `û` and reconstructs `q`.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(disc: &Discretization, f: F) -> Self {
        let u = disc.interpolate_elements(&f);
        let uhat = disc.interpolate_traces(&f);
        let q = compute_q(disc, &u, &uhat);
        Self { u, q, uhat }
    }

    pub fn refresh_q(&mut self, disc: &Discretization) {
        self.q = compute_q(disc, &self.u, &self.uhat);
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.q).chain(&self.uhat).all(|v| v.is_finite())
    }
}

/// `q_d = −M⁻¹ (B_d u + C_d û)` on every element.
pub fn compute_q(disc: &Discretization, u: &[f64], uhat: &[f64]) -> Vec<f64> {
    let (pe, nt, ne) = (disc.pe(), disc.nt(), disc.n_elements());
    let fac = &disc.factors;
    let traces = disc.gather_all_traces(uhat);
    let mut q = vec![0.0; 2 * pe * ne];
    parallel::for_each_block(&mut q, 2 * pe, |e, qe| {
        let ue = &u[e * pe..(e + 1) * pe];
        let te = &traces[e * nt..(e + 1) * nt];
        for d in 0..2 {
            let out = &mut qe[d * pe..(d + 1) * pe];
            matvec_block(fac.minv_b[d].block(e), pe, pe, ue, out, false);
            matvec_block(fac.minv_c[d].block(e), pe, nt, te, out, true);
            out.iter_mut().for_each(|v| *v = -*v);
        }
    });
    q
}

/// Backward-Euler data: the step and the previous element values.
#[derive(Debug, Clone, Copy)]
pub struct TimeTerm<'a> {
    pub dt: f64,
    pub u_prev: &'a [f64],
}

/// Residuals and (optionally) the raw Jacobian blocks of one element, with `q`
/// treated as an independent unknown. Blocks are column-major:
/// `d`, `e`: `p_e x p_e`; `f`: `p_e x n_t`; `g`, `h`: `n_t x p_e`; `j`: `n_t x n_t`.
#[derive(Debug, Clone, Default)]
pub struct ElementLinearization {
    pub res_u: Vec<f64>,
    pub res_trace: Vec<f64>,
    pub d: [Vec<f64>; 2],
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g: [Vec<f64>; 2],
    pub h: Vec<f64>,
    pub j: Vec<f64>,
}

/// Evaluates the element residual
///
/// ```text
///   R_u,i = Σ_g w [ (u − u_prev) φ_i / Δt − F·∇φ_i − s φ_i ] + Σ_∂K w f̂ φ_i
///   R_û,l = −Σ w f̂ ψ_l          interior faces
///         =  Σ w (û − u_D) ψ_l   Dirichlet faces
///         = −Σ w b̂ ψ_l          flux faces
/// ```
///
/// with `f̂ = F(û, q)·n + τ (u − û)`, and its derivatives when `jacobian` is set.
pub fn linearize_element(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    e: usize,
    time: Option<TimeTerm<'_>>,
    jacobian: bool,
) -> ElementLinearization {
    let basis = &disc.basis;
    let geom = &disc.geom;
    let mesh = &disc.mesh;
    let (pe, pf, qe, qf, nt) = (basis.p_e, basis.p_f, basis.q_e, basis.q_f, disc.nt());
    let ue = &state.u[e * pe..(e + 1) * pe];
    let qx = &state.q[2 * e * pe..(2 * e + 1) * pe];
    let qy = &state.q[(2 * e + 1) * pe..(2 * e + 2) * pe];
    let mut uh_e = vec![0.0; nt];
    disc.gather_element_trace(e, &state.uhat, &mut uh_e);
    let mt = time.map_or(0.0, |t| 1.0 / t.dt);
    let u_prev = time.map(|t| &t.u_prev[e * pe..(e + 1) * pe]);

    let mut out = ElementLinearization { res_u: vec![0.0; pe], res_trace: vec![0.0; nt], ..Default::default() };
    if jacobian {
        out.d = [vec![0.0; pe * pe], vec![0.0; pe * pe]];
        out.e = vec![0.0; pe * pe];
        out.f = vec![0.0; pe * nt];
        out.g = [vec![0.0; nt * pe], vec![0.0; nt * pe]];
        out.h = vec![0.0; nt * pe];
        out.j = vec![0.0; nt * nt];
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut gx = vec![0.0; pe];
    let mut gy = vec![0.0; pe];
    for g in 0..qe {
        let w = disc.elem_weights[g] * geom.elem_jac_det[e * qe + g];
        let phi = &basis.phi[g * pe..(g + 1) * pe];
        physical_gradients(basis, geom, e, g, &mut gx, &mut gy);
        let x = geom.elem_points[e * qe + g];
        let u = dot(phi, ue);
        let q = [dot(phi, qx), dot(phi, qy)];
        let du_dt = match u_prev {
            Some(up) => mt * (u - dot(phi, up)),
            None => 0.0,
        };
        let flux = model.flux(u, q, x);
        let s = model.source(u, q, x);
        for i in 0..pe {
            out.res_u[i] += w * ((du_dt - s) * phi[i] - flux[0] * gx[i] - flux[1] * gy[i]);
        }
        if !jacobian {
            continue;
        }
        let a = model.dflux_du(u, q, x);
        let bq = model.dflux_dq(u, q, x);
        let su = model.dsource_du(u, q, x);
        let sq = model.dsource_dq(u, q, x);
        for i in 0..pe {
            let ai = a[0] * gx[i] + a[1] * gy[i];
            let bd = [bq[0][0] * gx[i] + bq[1][0] * gy[i], bq[0][1] * gx[i] + bq[1][1] * gy[i]];
            for j in 0..pe {
                let pp = phi[i] * phi[j];
                out.e[i + pe * j] += w * ((mt - su) * pp - ai * phi[j]);
                for d in 0..2 {
                    out.d[d][i + pe * j] += w * (-bd[d] * phi[j] - sq[d] * pp);
                }
            }
        }
    }

    for l in 0..N_LOCAL_FACES {
        let f = mesh.element_to_face()[e][l];
        let side = usize::from(mesh.face_to_elements()[f][0] != e);
        let tr = basis.trace(l, side == 1);
        let kind = disc.boundary_kind(model, f);
        let uh_l = &uh_e[l * pf..(l + 1) * pf];
        for p in 0..qf {
            let w = disc.quad.weights[p] * geom.face_jac_det[f * qf + p];
            let n = geom.normal(f, side, p);
            let x = geom.face_points[f * qf + p];
            let phi = &tr[p * pe..(p + 1) * pe];
            let psi = &basis.psi[p * pf..(p + 1) * pf];
            let u = dot(phi, ue);
            let q = [dot(phi, qx), dot(phi, qy)];
            let uh = dot(psi, uh_l);
            let tau = model.tau(u, uh, n);
            let fh = model.flux(uh, q, x);
            let fhat = fh[0] * n[0] + fh[1] * n[1] + tau * (u - uh);
            for i in 0..pe {
                out.res_u[i] += w * fhat * phi[i];
            }
            let bflux = match kind {
                FaceKind::Flux(tag) => Some(model.boundary_flux(tag, u, q, uh, n, x)),
                _ => None,
            };
            let trace_value = match kind {
                FaceKind::Interior => -fhat,
                FaceKind::Dirichlet(tag) => uh - model.dirichlet_value(tag, x),
                FaceKind::Flux(_) => -bflux.map_or(0.0, |b| b.value),
            };
            for m in 0..pf {
                out.res_trace[l * pf + m] += w * trace_value * psi[m];
            }
            if !jacobian {
                continue;
            }
            let ah = model.dflux_du(uh, q, x);
            let bh = model.dflux_dq(uh, q, x);
            let df_dq = [bh[0][0] * n[0] + bh[1][0] * n[1], bh[0][1] * n[0] + bh[1][1] * n[1]];
            let df_duh = ah[0] * n[0] + ah[1] * n[1] - tau;
            for j in 0..pe {
                for i in 0..pe {
                    let pp = w * phi[i] * phi[j];
                    out.e[i + pe * j] += tau * pp;
                    out.d[0][i + pe * j] += df_dq[0] * pp;
                    out.d[1][i + pe * j] += df_dq[1] * pp;
                }
            }
            for m in 0..pf {
                let col = l * pf + m;
                for i in 0..pe {
                    out.f[i + pe * col] += w * df_duh * phi[i] * psi[m];
                }
            }
            let (cu, cq, cuh) = match kind {
                FaceKind::Interior => (-tau, [-df_dq[0], -df_dq[1]], -df_duh),
                FaceKind::Dirichlet(_) => (0.0, [0.0, 0.0], 1.0),
                FaceKind::Flux(_) => {
                    let b = bflux.unwrap_or_default();
                    (-b.d_u, [-b.d_q[0], -b.d_q[1]], -b.d_uhat)
                }
            };
            for m in 0..pf {
                let r = l * pf + m;
                let wm = w * psi[m];
                for j in 0..pe {
                    out.h[r + nt * j] += wm * cu * phi[j];
                    out.g[0][r + nt * j] += wm * cq[0] * phi[j];
                    out.g[1][r + nt * j] += wm * cq[1] * phi[j];
                }
                for k in 0..pf {
                    out.j[r + nt * (l * pf + k)] += wm * cuh * psi[k];
                }
            }
        }
    }
    out
}

/// Condensed element systems after one linearization.
#[derive(Debug, Clone)]
pub struct ElementOperators {
    pub pe: usize,
    pub nt: usize,
    /// `K̄ᵉ = J̄ − H̄ Ē⁻¹ F̄`, with Dirichlet columns eliminated.
    pub kbar: DenseBatch,
    pub ebar_inv: DenseBatch,
    pub fbar: DenseBatch,
    pub hbar: DenseBatch,
    /// `r̄ᵉ = r_û − H̄ Ē⁻¹ r_u`, `n_t` per element.
    pub rbar: Vec<f64>,
    /// `r_u = −R_u`, `p_e` per element.
    pub ru: Vec<f64>,
    /// Un-condensed trace residual contributions `R_û` per element.
    pub res_trace: Vec<f64>,
}

fn subtract_products(target: &mut DenseBatch, a: &[DenseBatch; 2], b: &[DenseBatch; 2]) -> Result<()> {
    for d in 0..2 {
        let prod = gemm_batch(&a[d], &b[d], false)?;
        target.data_mut().iter_mut().zip(prod.data()).for_each(|(t, p)| *t -= p);
    }
    Ok(())
}

/// Linearizes every element at `state` (with `q` refreshed from `u`, `û`),
/// condenses out `δu` and eliminates the columns of Dirichlet faces, whose
/// increments are fixed by their own rows.
pub fn assemble_element_operators(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> Result<ElementOperators> {
    if !state.u.iter().chain(&state.uhat).all(|v| v.is_finite()) {
        return Err(HdgError::NonFiniteState("element operator assembly"));
    }
    let (pe, pf, nt, ne) = (disc.pe(), disc.pf(), disc.nt(), disc.n_elements());
    let mut fresh = state.clone();
    fresh.refresh_q(disc);
    let lins = parallel::map_indices(ne, |e| linearize_element(disc, model, &fresh, e, time, true));

    let stack = |rows: usize, cols: usize, pick: &dyn Fn(&ElementLinearization) -> &Vec<f64>| {
        let mut data = Vec::with_capacity(rows * cols * ne);
        for lin in &lins {
            data.extend_from_slice(pick(lin));
        }
        DenseBatch::from_vec(rows, cols, ne, data)
    };
    let d = [stack(pe, pe, &|l| &l.d[0])?, stack(pe, pe, &|l| &l.d[1])?];
    let g = [stack(nt, pe, &|l| &l.g[0])?, stack(nt, pe, &|l| &l.g[1])?];
    let mut ebar = stack(pe, pe, &|l| &l.e)?;
    let mut fbar = stack(pe, nt, &|l| &l.f)?;
    let mut hbar = stack(nt, pe, &|l| &l.h)?;
    let mut jbar = stack(nt, nt, &|l| &l.j)?;
    let fac = &disc.factors;
    subtract_products(&mut ebar, &d, &fac.minv_b)?;
    subtract_products(&mut fbar, &d, &fac.minv_c)?;
    subtract_products(&mut hbar, &g, &fac.minv_b)?;
    subtract_products(&mut jbar, &g, &fac.minv_c)?;

    let ebar_inv = lu_invert_batch(&ebar).map_err(|err| match err {
        DenseError::SingularBlock { index, .. } => HdgError::SingularLocalSolve { element: index },
        other => other.into(),
    })?;
    let einv_f = gemm_batch(&ebar_inv, &fbar, false)?;
    let mut kbar = jbar;
    let hef = gemm_batch(&hbar, &einv_f, false)?;
    kbar.data_mut().iter_mut().zip(hef.data()).for_each(|(k, p)| *k -= p);

    let ru: Vec<f64> = lins.iter().flat_map(|l| l.res_u.iter().map(|v| -v)).collect();
    let res_trace: Vec<f64> = lins.iter().flat_map(|l| l.res_trace.iter().copied()).collect();
    let mut einv_ru = vec![0.0; pe * ne];
    gemv_strided_batch(&ebar_inv, &ru, &mut einv_ru, false)?;
    let mut rbar = vec![0.0; nt * ne];
    gemv_strided_batch(&hbar, &einv_ru, &mut rbar, false)?;
    for (r, t) in rbar.iter_mut().zip(&res_trace) {
        *r = -t - *r;
    }

    let dirichlet = disc.dirichlet_faces(model);
    let mut face_mass = vec![0.0; pf * pf];
    let mut work = vec![0.0; pf * pf];
    let mut y = vec![0.0; pf];
    for e in 0..ne {
        for l in 0..N_LOCAL_FACES {
            if !dirichlet[disc.mesh.element_to_face()[e][l]] {
                continue;
            }
            let kb = kbar.block_mut(e);
            for c in 0..pf {
                for r in 0..pf {
                    face_mass[r + pf * c] = kb[(l * pf + r) + nt * (l * pf + c)];
                }
            }
            invert_block(&mut face_mass, pf, &mut work).map_err(|_| HdgError::SingularLocalSolve { element: e })?;
            let re = &mut rbar[e * nt..(e + 1) * nt];
            matvec_block(&face_mass, pf, pf, &re[l * pf..(l + 1) * pf], &mut y, false);
            for c in 0..pf {
                let col = l * pf + c;
                for r in (0..nt).filter(|r| r / pf != l) {
                    re[r] -= kb[r + nt * col] * y[c];
                    kb[r + nt * col] = 0.0;
                }
            }
        }
    }
    if !kbar.data().iter().all(|v| v.is_finite()) {
        return Err(HdgError::NonFiniteState("condensed element matrix"));
    }
    Ok(ElementOperators { pe, nt, kbar, ebar_inv, fbar, hbar, rbar, ru, res_trace })
}

/// `δuᵉ = Ē⁻¹ (r_u − F̄ δûᵉ)` for every element; `duhat` is a global trace vector.
pub fn recover_local(disc: &Discretization, ops: &ElementOperators, duhat: &[f64]) -> Result<Vec<f64>> {
    let ne = disc.n_elements();
    let traces = disc.gather_all_traces(duhat);
    let mut rhs = vec![0.0; ops.pe * ne];
    gemv_strided_batch(&ops.fbar, &traces, &mut rhs, false)?;
    for (r, u) in rhs.iter_mut().zip(&ops.ru) {
        *r = u - *r;
    }
    let mut du = vec![0.0; ops.pe * ne];
    gemv_strided_batch(&ops.ebar_inv, &rhs, &mut du, false)?;
    Ok(du)
}

/// Element residuals `R_u` and face-assembled trace residuals `R_û` at `state`
/// (with `q` reconstructed).
pub fn residuals(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !state.u.iter().chain(&state.uhat).all(|v| v.is_finite()) {
        return Err(HdgError::NonFiniteState("residual evaluation"));
    }
    let (pe, pf, ne) = (disc.pe(), disc.pf(), disc.n_elements());
    let mut fresh = state.clone();
    fresh.refresh_q(disc);
    let lins = parallel::map_indices(ne, |e| linearize_element(disc, model, &fresh, e, time, false));
    let mut res_u = Vec::with_capacity(pe * ne);
    for lin in &lins {
        res_u.extend_from_slice(&lin.res_u);
    }
    let mut res_trace = vec![0.0; disc.n_trace_dofs()];
    // Faces accumulate from the lower element id first.
    for (f, elems) in disc.mesh.face_to_elements().iter().enumerate() {
        for (side, &e) in elems.iter().enumerate() {
            if e == crate::mesh::NONE {
                continue;
            }
            let l = disc.mesh.face_local_index()[f][side];
            for m in 0..pf {
                res_trace[f * pf + m] += lins[e].res_trace[l * pf + m];
            }
        }
    }
    Ok((res_u, res_trace))
}
