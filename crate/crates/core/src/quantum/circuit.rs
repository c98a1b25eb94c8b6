//! Brick-layer SU(4) circuit: layout, simulation from raw angles, and adjoint
//! differentiation with respect to those angles.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::gates::{adjoint4, su4_matrix, su4_matrix_with_derivatives, BOX_ANGLES};
use super::state::{apply_2q_raw, pair_outer, StateVector};
use crate::error::{Error, Result};

/// Qubit count, layer count and the ordered list of boxes.
///
/// The standard layout ([`CircuitSpec::new`]) gives every layer two
/// sublayers: A pairs `(0,1),(2,3),...,(Q-2,Q-1)`, then B pairs
/// `(1,2),(3,4),...,(Q-1,0)` with wraparound, so each sublayer touches every
/// qubit once and a layer holds `Q` boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubits: usize,
    pub layers: usize,
    boxes: Vec<(usize, usize)>,
}

impl CircuitSpec {
    pub fn new(qubits: usize, layers: usize) -> Result<Self> {
        if qubits < 2 || !qubits.is_multiple_of(2) {
            return Err(Error::Config(format!("qubit count must be even and >= 2, got {qubits}")));
        }
        if layers < 1 {
            return Err(Error::Config("layer count must be >= 1".into()));
        }
        let mut boxes = Vec::with_capacity(qubits * layers);
        for _ in 0..layers {
            for i in (0..qubits).step_by(2) {
                boxes.push((i, i + 1));
            }
            for i in (1..qubits).step_by(2) {
                boxes.push((i, (i + 1) % qubits));
            }
        }
        Ok(CircuitSpec { qubits, layers, boxes })
    }

    /// Open-chain brickwork that also admits odd qubit counts: sublayer A pairs
    /// `(0,1),(2,3),...`, sublayer B pairs `(1,2),(3,4),...`, no wraparound.
    /// Used for simulator checks outside the generator's even-Q layout.
    pub fn open_chain(qubits: usize, layers: usize) -> Result<Self> {
        if qubits < 2 || layers < 1 {
            return Err(Error::Config(format!("invalid open chain ({qubits} qubits, {layers} layers)")));
        }
        let mut boxes = Vec::new();
        for _ in 0..layers {
            for i in (0..qubits - 1).step_by(2) {
                boxes.push((i, i + 1));
            }
            for i in (1..qubits - 1).step_by(2) {
                boxes.push((i, i + 1));
            }
        }
        Ok(CircuitSpec { qubits, layers, boxes })
    }

    pub fn boxes(&self) -> &[(usize, usize)] {
        &self.boxes
    }

    pub fn num_angles(&self) -> usize {
        self.boxes.len() * BOX_ANGLES
    }

    /// Physical qubit driven by each angle slot, box-major.
    pub fn angle_qubits(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_angles());
        for &(a, b) in &self.boxes {
            for on_first in super::gates::ANGLE_ON_FIRST {
                out.push(if on_first { a } else { b });
            }
        }
        out
    }

    fn box_angles(angles: &[f64], k: usize) -> [f64; BOX_ANGLES] {
        std::array::from_fn(|i| angles[k * BOX_ANGLES + i])
    }

    fn check_angles(&self, angles: &[f64]) -> Result<()> {
        if angles.len() != self.num_angles() {
            return Err(Error::shape("circuit_angles", &[angles.len()], &[self.num_angles()]));
        }
        Ok(())
    }

    /// Evolves `|0...0>` through every box.
    pub fn run(&self, angles: &[f64]) -> Result<StateVector> {
        self.check_angles(angles)?;
        let mut state = StateVector::zero(self.qubits);
        for (k, &(a, b)) in self.boxes.iter().enumerate() {
            let m = su4_matrix(&Self::box_angles(angles, k));
            apply_2q_raw(state.amps_mut(), a, b, &m);
        }
        Ok(state)
    }

    /// `(<X_0..X_{Q-1}>, <Z_0..Z_{Q-1}>)` concatenated.
    pub fn expectations(&self, angles: &[f64]) -> Result<Vec<f64>> {
        let s = self.run(angles)?;
        let mut out = s.expect_x();
        out.extend(s.expect_z());
        Ok(out)
    }

    /// Expectations plus the vector-Jacobian product `cot^T d(expectations)/d(angles)`
    /// by adjoint differentiation.
    pub fn expectations_and_vjp(&self, angles: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_angles(angles)?;
        let q = self.qubits;
        if cotangent.len() != 2 * q {
            return Err(Error::shape("circuit_vjp", &[cotangent.len()], &[2 * q]));
        }
        let mut mats = Vec::with_capacity(self.boxes.len());
        let mut state = StateVector::zero(q);
        for (k, &(a, b)) in self.boxes.iter().enumerate() {
            let md = su4_matrix_with_derivatives(&Self::box_angles(angles, k));
            apply_2q_raw(state.amps_mut(), a, b, &md.0);
            mats.push(md);
        }
        let mut expect = state.expect_x();
        expect.extend(state.expect_z());

        let mut grad = vec![0.0; self.num_angles()];
        if cotangent.iter().all(|&c| c == 0.0) {
            return Ok((expect, grad));
        }
        // L = <psi|H|psi>, dL/dθ = 2 Re <lam| dM |psi_prev>
        let mut lam: Vec<C64> = state.apply_pauli_sum(&cotangent[..q], &cotangent[q..]);
        let mut psi: Vec<C64> = state.amplitudes().to_vec();
        for (k, &(a, b)) in self.boxes.iter().enumerate().rev() {
            let (m, dm) = &mats[k];
            let mdag = adjoint4(m);
            apply_2q_raw(&mut psi, a, b, &mdag);
            let r = pair_outer(&lam, &psi, a, b);
            for (i, d) in dm.iter().enumerate() {
                let mut s = C64::new(0.0, 0.0);
                for row in 0..4 {
                    for col in 0..4 {
                        s += d[row][col] * r[row][col];
                    }
                }
                grad[k * BOX_ANGLES + i] = 2.0 * s.re;
            }
            apply_2q_raw(&mut lam, a, b, &mdag);
        }
        Ok((expect, grad))
    }
}
