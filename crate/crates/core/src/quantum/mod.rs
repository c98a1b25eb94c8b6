//! Noiseless statevector simulation of the style-based SU(4) generator.

pub mod circuit;
pub mod gates;
pub mod state;
pub mod style;

pub use circuit::CircuitSpec;
pub use gates::{su4_matrix, BOX_ANGLES, GATE_ORDER_VERSION};
pub use state::StateVector;
pub use style::{count_params, StyleParams};

use crate::error::{Error, Result};

/// Applies one SU(4) box with 15 angles to qubits `(a, b)` of `state`.
pub fn su4_block(state: &mut StateVector, a: usize, b: usize, angles: &[f64]) -> Result<()> {
    let t: [f64; BOX_ANGLES] = angles
        .try_into()
        .map_err(|_| Error::shape("su4_block", &[angles.len()], &[BOX_ANGLES]))?;
    state.apply_2q(a, b, &su4_matrix(&t))
}
