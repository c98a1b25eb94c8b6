//! Gate matrices and the fused 15-angle SU(4) box.
//!
//! Conventions (frozen):
//! - `U3(θ,φ,λ) = [[cos(θ/2), -e^{iλ} sin(θ/2)], [e^{iφ} sin(θ/2), e^{i(φ+λ)} cos(θ/2)]]`
//! - `RY(θ) = exp(-iθY/2)`, `RZ(θ) = exp(-iθZ/2)`
//! - inside a box acting on qubits `(a, b)` the local basis index is
//!   `bit_a + 2 * bit_b`.

use num_complex::Complex64 as C64;

pub type Mat2 = [[C64; 2]; 2];
pub type Mat4 = [[C64; 4]; 4];

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Number of angles in one SU(4) box.
pub const BOX_ANGLES: usize = 15;

/// Gate-ordering version recorded in checkpoints.
pub const GATE_ORDER_VERSION: u32 = 1;

pub fn u3(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, 0.0), -C64::from_polar(s, lambda)],
        [C64::from_polar(s, phi), C64::from_polar(c, phi + lambda)],
    ]
}

/// Partial derivatives of [`u3`] with respect to θ, φ and λ.
pub fn u3_derivatives(theta: f64, phi: f64, lambda: f64) -> [Mat2; 3] {
    let (s, c) = (theta / 2.0).sin_cos();
    let i = C64::i();
    let d_theta = [
        [C64::new(-s / 2.0, 0.0), -C64::from_polar(c / 2.0, lambda)],
        [C64::from_polar(c / 2.0, phi), C64::from_polar(-s / 2.0, phi + lambda)],
    ];
    let d_phi = [
        [ZERO, ZERO],
        [i * C64::from_polar(s, phi), i * C64::from_polar(c, phi + lambda)],
    ];
    let d_lambda = [
        [ZERO, -i * C64::from_polar(s, lambda)],
        [ZERO, i * C64::from_polar(c, phi + lambda)],
    ];
    [d_theta, d_phi, d_lambda]
}

pub fn ry(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]]
}

pub fn ry_derivative(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(-s / 2.0, 0.0), C64::new(-c / 2.0, 0.0)],
        [C64::new(c / 2.0, 0.0), C64::new(-s / 2.0, 0.0)],
    ]
}

pub fn rz(theta: f64) -> Mat2 {
    [[C64::from_polar(1.0, -theta / 2.0), ZERO], [ZERO, C64::from_polar(1.0, theta / 2.0)]]
}

pub fn rz_derivative(theta: f64) -> Mat2 {
    let i = C64::i();
    [
        [-0.5 * i * C64::from_polar(1.0, -theta / 2.0), ZERO],
        [ZERO, 0.5 * i * C64::from_polar(1.0, theta / 2.0)],
    ]
}

pub fn identity2() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn identity4() -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

/// `ua` on the local low bit (qubit a), `ub` on the high bit (qubit b).
pub fn kron_ab(ua: &Mat2, ub: &Mat2) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for jb in 0..2 {
        for ja in 0..2 {
            for ib in 0..2 {
                for ia in 0..2 {
                    m[ja + 2 * jb][ia + 2 * ib] = ua[ja][ia] * ub[jb][ib];
                }
            }
        }
    }
    m
}

/// CNOT with control `a` (low bit), target `b`.
pub fn cnot_a_to_b() -> Mat4 {
    // |a b> : 00->00, 10->11 ; indices a + 2b: 0->0, 1->3, 2->2, 3->1
    permutation([0, 3, 2, 1])
}

/// CNOT with control `b` (high bit), target `a`.
pub fn cnot_b_to_a() -> Mat4 {
    // index 2 (b=1,a=0) <-> 3 (b=1,a=1)
    permutation([0, 1, 3, 2])
}

fn permutation(p: [usize; 4]) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for (col, &row) in p.iter().enumerate() {
        m[row][col] = ONE;
    }
    m
}

pub fn matmul4(x: &Mat4, y: &Mat4) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let xik = x[i][k];
            for j in 0..4 {
                m[i][j] += xik * y[k][j];
            }
        }
    }
    m
}

pub fn adjoint4(x: &Mat4) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = x[j][i].conj();
        }
    }
    m
}

/// The seven factors of a box, in application order:
/// `U3⊗U3, CNOT(b→a), RZ⊗RY, CNOT(a→b), RY_b, CNOT(b→a), U3⊗U3`.
fn factors(t: &[f64; BOX_ANGLES]) -> [Mat4; 7] {
    let i2 = identity2();
    [
        kron_ab(&u3(t[0], t[1], t[2]), &u3(t[3], t[4], t[5])),
        cnot_b_to_a(),
        kron_ab(&rz(t[6]), &ry(t[7])),
        cnot_a_to_b(),
        kron_ab(&i2, &ry(t[8])),
        cnot_b_to_a(),
        kron_ab(&u3(t[9], t[10], t[11]), &u3(t[12], t[13], t[14])),
    ]
}

/// Which factor each angle lives in.
const FACTOR_OF_ANGLE: [usize; BOX_ANGLES] = [0, 0, 0, 0, 0, 0, 2, 2, 4, 6, 6, 6, 6, 6, 6];

/// Whether each angle drives a gate on the box's first qubit (`true`) or
/// second qubit (`false`). This fixes which noise component feeds the angle.
pub const ANGLE_ON_FIRST: [bool; BOX_ANGLES] = [
    true, true, true, false, false, false, true, false, false, true, true, true, false, false, false,
];

fn factor_derivative(t: &[f64; BOX_ANGLES], k: usize) -> Mat4 {
    let i2 = identity2();
    match k {
        0..=2 => kron_ab(&u3_derivatives(t[0], t[1], t[2])[k], &u3(t[3], t[4], t[5])),
        3..=5 => kron_ab(&u3(t[0], t[1], t[2]), &u3_derivatives(t[3], t[4], t[5])[k - 3]),
        6 => kron_ab(&rz_derivative(t[6]), &ry(t[7])),
        7 => kron_ab(&rz(t[6]), &ry_derivative(t[7])),
        8 => kron_ab(&i2, &ry_derivative(t[8])),
        9..=11 => kron_ab(&u3_derivatives(t[9], t[10], t[11])[k - 9], &u3(t[12], t[13], t[14])),
        12..=14 => kron_ab(&u3(t[9], t[10], t[11]), &u3_derivatives(t[12], t[13], t[14])[k - 12]),
        _ => unreachable!("box has 15 angles"),
    }
}

/// Fused 4x4 unitary of one SU(4) box.
pub fn su4_matrix(t: &[f64; BOX_ANGLES]) -> Mat4 {
    factors(t)
        .iter()
        .fold(identity4(), |acc, f| matmul4(f, &acc))
}

/// Fused matrix together with its 15 partial derivatives.
pub fn su4_matrix_with_derivatives(t: &[f64; BOX_ANGLES]) -> (Mat4, [Mat4; BOX_ANGLES]) {
    let f = factors(t);
    // prefix[k] = F_{k-1} ... F_0 ; suffix[k] = F_6 ... F_{k+1}
    let mut prefix = [identity4(); 8];
    for k in 0..7 {
        prefix[k + 1] = matmul4(&f[k], &prefix[k]);
    }
    let mut suffix = [identity4(); 7];
    for k in (0..6).rev() {
        suffix[k] = matmul4(&suffix[k + 1], &f[k + 1]);
    }
    let mut d = [[[ZERO; 4]; 4]; BOX_ANGLES];
    for (angle, dm) in d.iter_mut().enumerate() {
        let k = FACTOR_OF_ANGLE[angle];
        let df = factor_derivative(t, angle);
        *dm = matmul4(&suffix[k], &matmul4(&df, &prefix[k]));
    }
    (prefix[7], d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close4(a: &Mat4, b: &Mat4, tol: f64) -> bool {
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn u3_special_cases() {
        // U3(θ,0,0) == RY(θ)
        let a = u3(0.7, 0.0, 0.0);
        let b = ry(0.7);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).norm() < 1e-15);
            }
        }
        // U3(π, 0, π) == X
        let x = u3(std::f64::consts::PI, 0.0, std::f64::consts::PI);
        assert!((x[0][1] - ONE).norm() < 1e-15 && (x[1][0] - ONE).norm() < 1e-15);
        assert!(x[0][0].norm() < 1e-15 && x[1][1].norm() < 1e-15);
    }

    #[test]
    fn zero_angles_give_cnot_cube() {
        let m = su4_matrix(&[0.0; BOX_ANGLES]);
        // CNOT(b→a) CNOT(a→b) CNOT(b→a) is a SWAP
        let swap = permutation([0, 2, 1, 3]);
        assert!(close4(&m, &swap, 1e-15));
        // |00> is left alone
        assert!((m[0][0] - ONE).norm() < 1e-15);
    }

    #[test]
    fn box_is_unitary() {
        let t: [f64; BOX_ANGLES] = std::array::from_fn(|i| 0.3 * i as f64 - 1.7);
        let m = su4_matrix(&t);
        assert!(close4(&matmul4(&adjoint4(&m), &m), &identity4(), 1e-14));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let t: [f64; BOX_ANGLES] = std::array::from_fn(|i| 0.41 * i as f64 - 2.3);
        let (m, d) = su4_matrix_with_derivatives(&t);
        assert!(close4(&m, &su4_matrix(&t), 1e-15));
        let h = 1e-6;
        for k in 0..BOX_ANGLES {
            let mut p = t;
            p[k] += h;
            let mut q = t;
            q[k] -= h;
            let (mp, mq) = (su4_matrix(&p), su4_matrix(&q));
            for i in 0..4 {
                for j in 0..4 {
                    let fd = (mp[i][j] - mq[i][j]) / (2.0 * h);
                    assert!((fd - d[k][i][j]).norm() < 1e-8, "angle {k}");
                }
            }
        }
    }
}
