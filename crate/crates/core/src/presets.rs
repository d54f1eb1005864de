//! Benchmark systems and the fixed recent window used by the SISO regulation
//! experiment.

use nalgebra::{DMatrix, DVector};

use crate::lti::StateSpace;

/// Third-order SISO benchmark, observability index 3.
pub fn siso_benchmark() -> StateSpace {
    let a = DMatrix::from_row_slice(3, 3, &[0.7, 0.2, 0.0, 0.3, 0.7, -0.1, 0.0, -0.2, 0.8]) * 0.99;
    let b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 1.5]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    StateSpace::new(a, b, c, DMatrix::zeros(1, 1)).expect("preset dimensions")
}

/// Normalized three-zone building model; one heating input, two measured
/// zone temperatures (deviation from 15 degC).
pub fn room_temperature() -> StateSpace {
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[0.8511, 0.0541, 0.0707, 0.1293, 0.8635, 0.0055, 0.0989, 0.0032, 0.7541],
    );
    let b = DMatrix::from_column_slice(3, 1, &[0.07, 0.006, 0.004]);
    let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    StateSpace::new(a, b, c, DMatrix::zeros(2, 1)).expect("preset dimensions")
}

/// Past inputs of the SISO regulation window.
pub const SISO_RECENT_U: [f64; 3] = [-5.2254, 7.2684, -22.5535];

/// Past outputs of the SISO regulation window as printed with the benchmark.
pub const SISO_RECENT_Y: [f64; 3] = [-1.1242, -23.7291, 13.3406];

/// Initial state that reproduces [`SISO_RECENT_Y`] exactly under
/// [`SISO_RECENT_U`]: solves `y_p = O(3) x + T u_p` with the invertible
/// observability matrix.
pub fn siso_recent_initial_state() -> DVector<f64> {
    let sys = siso_benchmark();
    let obs = sys.observability_matrix(3);
    let u = DMatrix::from_row_slice(1, 3, &SISO_RECENT_U);
    let forced = crate::lti::simulate(&sys, &DVector::zeros(3), &u).expect("preset dimensions");
    let rhs = DVector::from_row_slice(&SISO_RECENT_Y) - forced.transpose().column(0);
    obs.lu().solve(&rhs).expect("observability matrix is invertible")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recent_state_reproduces_printed_outputs() {
        let sys = siso_benchmark();
        let x = siso_recent_initial_state();
        let y = crate::lti::simulate(&sys, &x, &DMatrix::from_row_slice(1, 3, &SISO_RECENT_U)).unwrap();
        for (k, &v) in SISO_RECENT_Y.iter().enumerate() {
            assert!((y[(0, k)] - v).abs() < 1e-9);
        }
    }
}
