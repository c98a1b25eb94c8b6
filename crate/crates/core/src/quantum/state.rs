use num_complex::Complex64 as C64;

use super::gates::{Mat2, Mat4};
use crate::error::{Error, Result};

/// Pure state of `num_qubits` qubits. Qubit 0 is the least-significant bit of
/// the amplitude index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C64>,
}

/// Inserts a zero bit at position `pos` of `k`.
#[inline]
fn insert_zero(k: usize, pos: usize) -> usize {
    let low = k & ((1 << pos) - 1);
    ((k >> pos) << (pos + 1)) | low
}

impl StateVector {
    /// `|0...0>`.
    pub fn zero(num_qubits: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = C64::new(1.0, 0.0);
        StateVector { num_qubits, amps }
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::shape("state_vector", &[n], &[]));
        }
        Ok(StateVector {
            num_qubits: n.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            return Err(Error::Config(format!(
                "qubit index {q} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }

    pub fn apply_1q(&mut self, q: usize, m: &Mat2) -> Result<()> {
        self.check(q)?;
        let bit = 1 << q;
        for k in 0..self.amps.len() / 2 {
            let i0 = insert_zero(k, q);
            let i1 = i0 | bit;
            let (a0, a1) = (self.amps[i0], self.amps[i1]);
            self.amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            self.amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check(control)?;
        self.check(target)?;
        if control == target {
            return Err(Error::Config("CNOT control equals target".into()));
        }
        let (c, t) = (1 << control, 1 << target);
        for i in 0..self.amps.len() {
            if i & c != 0 && i & t == 0 {
                self.amps.swap(i, i | t);
            }
        }
        Ok(())
    }

    /// Applies a 4x4 matrix on qubits `(a, b)`, local index `bit_a + 2 bit_b`.
    pub fn apply_2q(&mut self, a: usize, b: usize, m: &Mat4) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(Error::Config(format!("two-qubit gate on repeated qubit {a}")));
        }
        apply_2q_raw(&mut self.amps, a, b, m);
        Ok(())
    }

    pub(crate) fn amps_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    /// `<Z_q>` for every qubit.
    pub fn expect_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_qubits];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, o) in out.iter_mut().enumerate() {
                if i >> q & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        out
    }

    /// `<X_q>` for every qubit.
    pub fn expect_x(&self) -> Vec<f64> {
        (0..self.num_qubits)
            .map(|q| {
                let bit = 1 << q;
                let mut s = 0.0;
                for k in 0..self.amps.len() / 2 {
                    let i0 = insert_zero(k, q);
                    s += (self.amps[i0].conj() * self.amps[i0 | bit]).re;
                }
                2.0 * s
            })
            .collect()
    }

    /// `H |psi>` for `H = sum_q cx[q] X_q + cz[q] Z_q`.
    pub fn apply_pauli_sum(&self, cx: &[f64], cz: &[f64]) -> Vec<C64> {
        let n = self.amps.len();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut diag = 0.0;
            for (q, &c) in cz.iter().enumerate() {
                diag += if i >> q & 1 == 0 { c } else { -c };
            }
            let mut acc = self.amps[i] * diag;
            for (q, &c) in cx.iter().enumerate() {
                if c != 0.0 {
                    acc += self.amps[i ^ (1 << q)] * c;
                }
            }
            *o = acc;
        }
        out
    }
}

#[inline]
pub(crate) fn apply_2q_raw(amps: &mut [C64], a: usize, b: usize, m: &Mat4) {
    let (lo, hi) = (a.min(b), a.max(b));
    let (ba, bb) = (1usize << a, 1usize << b);
    for k in 0..amps.len() / 4 {
        let i0 = insert_zero(insert_zero(k, lo), hi);
        let idx = [i0, i0 | ba, i0 | bb, i0 | ba | bb];
        let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
        for r in 0..4 {
            let row = &m[r];
            amps[idx[r]] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
    }
}

/// `R[r][c] = sum_groups conj(lam[r]) * psi[c]` over all index groups of the
/// pair `(a, b)`; contracting a box derivative with `R` gives
/// `<lam| dM |psi>`.
pub(crate) fn pair_outer(lam: &[C64], psi: &[C64], a: usize, b: usize) -> Mat4 {
    let (lo, hi) = (a.min(b), a.max(b));
    let (ba, bb) = (1usize << a, 1usize << b);
    let mut r = [[C64::new(0.0, 0.0); 4]; 4];
    for k in 0..psi.len() / 4 {
        let i0 = insert_zero(insert_zero(k, lo), hi);
        let idx = [i0, i0 | ba, i0 | bb, i0 | ba | bb];
        let l = [lam[idx[0]].conj(), lam[idx[1]].conj(), lam[idx[2]].conj(), lam[idx[3]].conj()];
        let p = [psi[idx[0]], psi[idx[1]], psi[idx[2]], psi[idx[3]]];
        for (rr, lv) in r.iter_mut().zip(l) {
            for (cell, pv) in rr.iter_mut().zip(p) {
                *cell += lv * pv;
            }
        }
    }
    r
}
