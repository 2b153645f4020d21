//! Gauss quadrature and nodal tensor-product Lagrange bases on the reference
//! square `[0,1]^2` and reference face `[0,1]`.

use thiserror::Error;

use crate::mesh::{reference_face_point, N_LOCAL_FACES};

pub const MAX_QUAD_POINTS: usize = 30;
pub const MAX_DEGREE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("quadrature with {0} points is not supported (1..=30)")]
    UnsupportedOrder(usize),
    #[error("polynomial degree {0} is not supported (1..=6)")]
    UnsupportedDegree(usize),
}

/// One-dimensional rule on `[0,1]`; element rules are its tensor square.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Tensor-product points and weights; point `a + q*b` is `(x_a, x_b)`.
    pub fn tensor(&self) -> (Vec<[f64; 2]>, Vec<f64>) {
        let q = self.len();
        let mut pts = Vec::with_capacity(q * q);
        let mut wts = Vec::with_capacity(q * q);
        for b in 0..q {
            for a in 0..q {
                pts.push([self.points[a], self.points[b]]);
                wts.push(self.weights[a] * self.weights[b]);
            }
        }
        (pts, wts)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint limit n(n+1)/2 * x^(n+1)
        0.5 * (n * (n + 1)) as f64 * x.powi(n as i32 + 1)
    } else {
        n as f64 * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// Gauss-Legendre rule with `q` points mapped to `[0,1]`.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule, BasisError> {
    if q == 0 || q > MAX_QUAD_POINTS {
        return Err(BasisError::UnsupportedOrder(q));
    }
    let mut points = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(q, x);
        points[i] = 0.5 * (x + 1.0);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    Ok(QuadratureRule { points, weights })
}

/// Gauss-Lobatto nodes of degree `k` on `[0,1]` (k + 1 nodes, endpoints included).
pub fn lobatto_nodes(k: usize) -> Vec<f64> {
    let mut nodes = vec![0.0; k + 1];
    nodes[k] = 1.0;
    for i in 1..k {
        let mut x = -(std::f64::consts::PI * i as f64 / k as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(k, x);
            // (1 - x^2) P'' = 2 x P' - k (k+1) P
            let d2p = (2.0 * x * dp - (k * (k + 1)) as f64 * p) / (1.0 - x * x);
            let dx = dp / d2p;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (x + 1.0);
    }
    nodes
}

/// Values of the 1D Lagrange polynomials through `nodes` at `x`.
pub fn lagrange_values(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|a| nodes.iter().enumerate().filter(|&(c, _)| c != a).map(|(_, &nc)| (x - nc) / (nodes[a] - nc)).product())
        .collect()
}

/// Derivatives of the 1D Lagrange polynomials through `nodes` at `x`.
pub fn lagrange_derivatives(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|a| {
            let mut sum = 0.0;
            for d in (0..n).filter(|&d| d != a) {
                let mut prod = 1.0 / (nodes[a] - nodes[d]);
                for c in (0..n).filter(|&c| c != a && c != d) {
                    prod *= (x - nodes[c]) / (nodes[a] - nodes[c]);
                }
                sum += prod;
            }
            sum
        })
        .collect()
}

/// Basis tables at quadrature points.
///
/// Element tables are `p_e x q_e` column-major (`phi[g * p_e + i]`), the face
/// table is `p_f x q_f`, and `trace_map[l * 2 + flipped]` holds the element
/// basis at the face points of local face `l`, ordered along the face's
/// canonical direction (`flipped = 1` when the element traverses it backwards).
#[derive(Debug, Clone)]
pub struct BasisTab {
    pub k: usize,
    pub p_e: usize,
    pub p_f: usize,
    pub q_e: usize,
    pub q_f: usize,
    pub nodes_1d: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi_dxi: Vec<f64>,
    pub dphi_deta: Vec<f64>,
    pub psi: Vec<f64>,
    pub trace_map: Vec<Vec<f64>>,
}

impl BasisTab {
    /// Reference coordinates of element node `i`.
    pub fn element_node(&self, i: usize) -> [f64; 2] {
        let n = self.k + 1;
        [self.nodes_1d[i % n], self.nodes_1d[i / n]]
    }

    /// Evaluates all element basis functions at a reference point.
    pub fn eval_element(&self, xi: [f64; 2]) -> Vec<f64> {
        let lx = lagrange_values(&self.nodes_1d, xi[0]);
        let ly = lagrange_values(&self.nodes_1d, xi[1]);
        let n = self.k + 1;
        (0..self.p_e).map(|i| lx[i % n] * ly[i / n]).collect()
    }

    pub fn trace(&self, l: usize, flipped: bool) -> &[f64] {
        &self.trace_map[l * 2 + usize::from(flipped)]
    }
}

/// Tabulates the degree-`k` tensor Lagrange basis on Gauss-Lobatto nodes at
/// the tensor points of `quad` (element) and at `quad` itself (faces).
pub fn tabulate_basis(k: usize, quad: &QuadratureRule) -> Result<BasisTab, BasisError> {
    if k == 0 || k > MAX_DEGREE {
        return Err(BasisError::UnsupportedDegree(k));
    }
    let nodes = lobatto_nodes(k);
    let n = k + 1;
    let (p_e, p_f) = (n * n, n);
    let q = quad.len();
    let (q_e, q_f) = (q * q, q);
    let vals: Vec<Vec<f64>> = quad.points.iter().map(|&x| lagrange_values(&nodes, x)).collect();
    let ders: Vec<Vec<f64>> = quad.points.iter().map(|&x| lagrange_derivatives(&nodes, x)).collect();
    let mut phi = vec![0.0; p_e * q_e];
    let mut dphi_dxi = vec![0.0; p_e * q_e];
    let mut dphi_deta = vec![0.0; p_e * q_e];
    for b in 0..q {
        for a in 0..q {
            let g = a + q * b;
            for i in 0..p_e {
                let (ia, ib) = (i % n, i / n);
                phi[g * p_e + i] = vals[a][ia] * vals[b][ib];
                dphi_dxi[g * p_e + i] = ders[a][ia] * vals[b][ib];
                dphi_deta[g * p_e + i] = vals[a][ia] * ders[b][ib];
            }
        }
    }
    let mut psi = vec![0.0; p_f * q_f];
    for p in 0..q_f {
        psi[p * p_f..(p + 1) * p_f].copy_from_slice(&vals[p]);
    }
    let mut tab = BasisTab {
        k,
        p_e,
        p_f,
        q_e,
        q_f,
        nodes_1d: nodes,
        phi,
        dphi_dxi,
        dphi_deta,
        psi,
        trace_map: Vec::with_capacity(2 * N_LOCAL_FACES),
    };
    for l in 0..N_LOCAL_FACES {
        for flipped in [false, true] {
            let mut t = vec![0.0; p_e * q_f];
            for p in 0..q_f {
                let s = quad.points[p];
                let param = if flipped { 1.0 - s } else { s };
                let v = tab.eval_element(reference_face_point(l, param));
                t[p * p_e..(p + 1) * p_e].copy_from_slice(&v);
            }
            tab.trace_map.push(t);
        }
    }
    Ok(tab)
}
