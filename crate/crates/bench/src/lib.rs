//! Fixtures shared by the benchmarks.

use hdg_core::local::{assemble_element_operators, ElementOperators};
use hdg_core::{
    assemble_global, build_structured_quad, burgers_model, DenseBatch, Discretization, FaceBlockMatrix, Rect, StateFields,
};

/// The linearized Burgers trace system at the initial guess `1 − 2x`.
pub struct TraceSystem {
    pub disc: Discretization,
    pub k: FaceBlockMatrix,
    pub r: Vec<f64>,
    pub ops: ElementOperators,
}

pub fn burgers_system(n: usize, k: usize) -> TraceSystem {
    let disc = Discretization::new(build_structured_quad(n, Rect::UNIT).expect("mesh"), k, None).expect("discretization");
    let state = StateFields::interpolate(&disc, |x| 1.0 - 2.0 * x[0]);
    let ops = assemble_element_operators(&disc, &burgers_model(1.0 / 200.0), &state, None).expect("element operators");
    let (kmat, r) = assemble_global(&ops, &disc.mesh).expect("assembly");
    TraceSystem { disc, k: kmat, r, ops }
}

/// Diagonally dominant blocks with deterministic entries.
pub fn dominant_blocks(n: usize, batch: usize) -> DenseBatch {
    let mut data: Vec<f64> = (0..n * n * batch).map(|i| ((i as f64) * 0.618_034).sin()).collect();
    for b in 0..batch {
        for i in 0..n {
            data[b * n * n + i * n + i] += n as f64;
        }
    }
    DenseBatch::from_vec(n, n, batch, data).expect("batch")
}

pub fn test_vector(len: usize) -> Vec<f64> {
    (0..len).map(|i| ((i as f64) * 0.377).cos()).collect()
}
