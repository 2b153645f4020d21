//! Structured quadrilateral meshes, element/face connectivity and geometric
//! factors of the bilinear reference map.
//!
//! The reference element is the unit square `[0,1]^2` and every element lists
//! its faces in the local order bottom, right, top, left, each traversed
//! counterclockwise. A face's canonical direction is that of its first
//! (lower-indexed) element; the second element sees it reversed.

use thiserror::Error;

use crate::basis::QuadratureRule;

/// Sentinel for "no element" / "no face".
pub const NONE: usize = usize::MAX;

/// Local faces per quadrilateral.
pub const N_LOCAL_FACES: usize = 4;

pub const TAG_INTERIOR: u8 = 0;
pub const TAG_BOTTOM: u8 = 1;
pub const TAG_RIGHT: u8 = 2;
pub const TAG_TOP: u8 = 3;
pub const TAG_LEFT: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh resolution must be at least 1")]
    InvalidResolution,
    #[error("degenerate domain [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateDomain { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("element {element} has non-positive Jacobian determinant {det:.3e}")]
    InvertedElement { element: usize, det: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
}

#[derive(Debug, Clone)]
pub struct Mesh2D {
    nx: usize,
    ny: usize,
    vertex_coords: Vec<[f64; 2]>,
    element_vertices: Vec<[usize; 4]>,
    element_to_face: Vec<[usize; 4]>,
    face_to_elements: Vec<[usize; 2]>,
    face_local_index: Vec<[usize; 2]>,
    face_vertices: Vec<[usize; 2]>,
    boundary_tag: Vec<u8>,
}

/// Reference coordinates of the point at parameter `t` along local face `l`
/// traversed counterclockwise.
pub fn reference_face_point(l: usize, t: f64) -> [f64; 2] {
    match l {
        0 => [t, 0.0],
        1 => [1.0, t],
        2 => [1.0 - t, 1.0],
        3 => [0.0, 1.0 - t],
        _ => panic!("local face {l} out of range"),
    }
}

/// d(xi, eta)/dt along local face `l`.
pub fn reference_face_direction(l: usize) -> [f64; 2] {
    match l {
        0 => [1.0, 0.0],
        1 => [0.0, 1.0],
        2 => [-1.0, 0.0],
        3 => [0.0, -1.0],
        _ => panic!("local face {l} out of range"),
    }
}

/// Builds an `n x n` uniform mesh of `domain`. Elements are numbered
/// row-major from the bottom-left corner; faces are numbered in order of first
/// appearance while sweeping elements in local face order.
pub fn build_structured_quad(n: usize, domain: Rect) -> Result<Mesh2D, MeshError> {
    Mesh2D::structured(n, n, domain)
}

impl Mesh2D {
    pub fn structured(nx: usize, ny: usize, domain: Rect) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::InvalidResolution);
        }
        let Rect { x0, x1, y0, y1 } = domain;
        if !(x1 > x0 && y1 > y0) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(MeshError::DegenerateDomain { x0, x1, y0, y1 });
        }
        let mut vertex_coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = x0 + (x1 - x0) * i as f64 / nx as f64;
                let y = y0 + (y1 - y0) * j as f64 / ny as f64;
                vertex_coords.push([x, y]);
            }
        }
        let vid = |i: usize, j: usize| i + (nx + 1) * j;
        let n_el = nx * ny;
        let mut element_vertices = Vec::with_capacity(n_el);
        let mut element_to_face = vec![[NONE; 4]; n_el];
        let mut face_to_elements = Vec::new();
        let mut face_local_index = Vec::new();
        let mut face_vertices = Vec::new();
        let mut boundary_tag = Vec::new();
        let mut new_face = |e: usize, l: usize, verts: [usize; 2], tag: u8| -> usize {
            face_to_elements.push([e, NONE]);
            face_local_index.push([l, NONE]);
            face_vertices.push(verts);
            boundary_tag.push(tag);
            face_to_elements.len() - 1
        };
        for j in 0..ny {
            for i in 0..nx {
                let e = i + nx * j;
                let v = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)];
                element_vertices.push(v);
                let edge = |l: usize| [v[l], v[(l + 1) % 4]];
                // bottom
                element_to_face[e][0] = if j == 0 { new_face(e, 0, edge(0), TAG_BOTTOM) } else { element_to_face[e - nx][2] };
                // right
                element_to_face[e][1] = new_face(e, 1, edge(1), if i + 1 == nx { TAG_RIGHT } else { TAG_INTERIOR });
                // top
                element_to_face[e][2] = new_face(e, 2, edge(2), if j + 1 == ny { TAG_TOP } else { TAG_INTERIOR });
                // left
                element_to_face[e][3] = if i == 0 { new_face(e, 3, edge(3), TAG_LEFT) } else { element_to_face[e - 1][1] };
            }
        }
        // Second sides of interior faces.
        let mut mesh = Mesh2D {
            nx,
            ny,
            vertex_coords,
            element_vertices,
            element_to_face,
            face_to_elements,
            face_local_index,
            face_vertices,
            boundary_tag,
        };
        for e in 0..n_el {
            for l in 0..N_LOCAL_FACES {
                let f = mesh.element_to_face[e][l];
                if mesh.face_to_elements[f][0] != e {
                    mesh.face_to_elements[f][1] = e;
                    mesh.face_local_index[f][1] = l;
                }
            }
        }
        Ok(mesh)
    }

    pub fn n_elements(&self) -> usize {
        self.element_vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.face_to_elements.len()
    }

    pub fn n_local_faces(&self) -> usize {
        N_LOCAL_FACES
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn vertex_coords(&self) -> &[[f64; 2]] {
        &self.vertex_coords
    }

    pub fn element_vertices(&self) -> &[[usize; 4]] {
        &self.element_vertices
    }

    pub fn element_to_face(&self) -> &[[usize; 4]] {
        &self.element_to_face
    }

    pub fn face_to_elements(&self) -> &[[usize; 2]] {
        &self.face_to_elements
    }

    pub fn face_local_index(&self) -> &[[usize; 2]] {
        &self.face_local_index
    }

    pub fn face_vertices(&self) -> &[[usize; 2]] {
        &self.face_vertices
    }

    pub fn boundary_tag(&self) -> &[u8] {
        &self.boundary_tag
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_to_elements[f][1] == NONE
    }

    /// Whether element `e` traverses its local face `l` against the face's
    /// canonical direction.
    pub fn is_flipped(&self, e: usize, l: usize) -> bool {
        let f = self.element_to_face[e][l];
        self.face_to_elements[f][0] != e
    }

    /// Physical coordinates of the reference point `xi` in element `e`.
    pub fn map_point(&self, e: usize, xi: [f64; 2]) -> [f64; 2] {
        let v = self.element_vertices[e].map(|id| self.vertex_coords[id]);
        let (s, t) = (xi[0], xi[1]);
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        let mut x = [0.0; 2];
        for k in 0..4 {
            x[0] += w[k] * v[k][0];
            x[1] += w[k] * v[k][1];
        }
        x
    }

    /// Jacobian `dx/dxi` of the bilinear map, as `[[dx/dxi, dx/deta], [dy/dxi, dy/deta]]`.
    pub fn jacobian(&self, e: usize, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let v = self.element_vertices[e].map(|id| self.vertex_coords[id]);
        let (s, t) = (xi[0], xi[1]);
        let mut jac = [[0.0; 2]; 2];
        for d in 0..2 {
            jac[d][0] = (v[1][d] - v[0][d]) * (1.0 - t) + (v[2][d] - v[3][d]) * t;
            jac[d][1] = (v[3][d] - v[0][d]) * (1.0 - s) + (v[2][d] - v[1][d]) * s;
        }
        jac
    }

    /// Physical coordinates of the point at canonical parameter `s` on face `f`.
    pub fn face_point(&self, f: usize, s: f64) -> [f64; 2] {
        let [a, b] = self.face_vertices[f].map(|id| self.vertex_coords[id]);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    pub fn face_length(&self, f: usize) -> f64 {
        let [a, b] = self.face_vertices[f].map(|id| self.vertex_coords[id]);
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }
}

/// Geometric factors at quadrature points.
///
/// Element arrays are indexed `[e * q_e + g]`; face arrays `[f * q_f + p]`
/// with `p` running along the face's canonical direction; normals
/// `[(f * 2 + side) * q_f + p]`.
#[derive(Debug, Clone)]
pub struct GeomFactors {
    pub q_e: usize,
    pub q_f: usize,
    pub elem_jac_det: Vec<f64>,
    pub elem_inv_jacobian: Vec<[[f64; 2]; 2]>,
    pub elem_points: Vec<[f64; 2]>,
    pub face_jac_det: Vec<f64>,
    pub face_points: Vec<[f64; 2]>,
    pub face_normal: Vec<[f64; 2]>,
}

impl GeomFactors {
    pub fn normal(&self, f: usize, side: usize, p: usize) -> [f64; 2] {
        self.face_normal[(f * 2 + side) * self.q_f + p]
    }
}

/// Evaluates the bilinear map's factors on the tensor rule built from the
/// one-dimensional `quad` on `[0,1]`.
pub fn compute_geometry(mesh: &Mesh2D, quad: &QuadratureRule) -> Result<GeomFactors, MeshError> {
    let q = quad.len();
    let (q_e, q_f) = (q * q, q);
    let n_el = mesh.n_elements();
    let n_f = mesh.n_faces();
    let mut elem_jac_det = Vec::with_capacity(n_el * q_e);
    let mut elem_inv_jacobian = Vec::with_capacity(n_el * q_e);
    let mut elem_points = Vec::with_capacity(n_el * q_e);
    for e in 0..n_el {
        for b in 0..q {
            for a in 0..q {
                let xi = [quad.points[a], quad.points[b]];
                let j = mesh.jacobian(e, xi);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if !(det > 0.0) {
                    return Err(MeshError::InvertedElement { element: e, det });
                }
                elem_jac_det.push(det);
                elem_inv_jacobian.push([[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]]);
                elem_points.push(mesh.map_point(e, xi));
            }
        }
    }
    let mut face_jac_det = vec![0.0; n_f * q_f];
    let mut face_points = vec![[0.0; 2]; n_f * q_f];
    let mut face_normal = vec![[0.0; 2]; n_f * 2 * q_f];
    for f in 0..n_f {
        for side in 0..2 {
            let e = mesh.face_to_elements()[f][side];
            if e == NONE {
                continue;
            }
            let l = mesh.face_local_index()[f][side];
            let flipped = mesh.is_flipped(e, l);
            let dir = reference_face_direction(l);
            for p in 0..q_f {
                let s = quad.points[p];
                let t = if flipped { 1.0 - s } else { s };
                let xi = reference_face_point(l, t);
                let j = mesh.jacobian(e, xi);
                let tx = j[0][0] * dir[0] + j[0][1] * dir[1];
                let ty = j[1][0] * dir[0] + j[1][1] * dir[1];
                let len = (tx * tx + ty * ty).sqrt();
                if !(len > 0.0) {
                    return Err(MeshError::InvertedElement { element: e, det: len });
                }
                face_normal[(f * 2 + side) * q_f + p] = [ty / len, -tx / len];
                if side == 0 {
                    face_jac_det[f * q_f + p] = len;
                    face_points[f * q_f + p] = mesh.map_point(e, xi);
                }
            }
        }
    }
    Ok(GeomFactors { q_e, q_f, elem_jac_det, elem_inv_jacobian, elem_points, face_jac_det, face_points, face_normal })
}
