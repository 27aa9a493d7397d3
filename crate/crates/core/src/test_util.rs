//! Independent dense constructions and random fixtures shared by the unit and
//! integration tests. Nothing here is used by the simulator itself.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::dense::DenseMatrix;
use crate::hilbert::StateVector;
use crate::model::{Edge, LatticeSpec};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// 2x2 matrices in the single-qubit basis order (ground, excited).
pub fn pauli_x() -> [[C64; 2]; 2] {
    [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
}

pub fn pauli_y() -> [[C64; 2]; 2] {
    [[c(0.0, 0.0), c(0.0, 1.0)], [c(0.0, -1.0), c(0.0, 0.0)]]
}

pub fn pauli_z() -> [[C64; 2]; 2] {
    [[c(-1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]
}

pub fn sigma_plus() -> [[C64; 2]; 2] {
    [[c(0.0, 0.0), c(0.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
}

pub fn sigma_minus() -> [[C64; 2]; 2] {
    [[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]
}

/// `op` on `bit`, identity elsewhere.
pub fn kron_site(op: &[[C64; 2]; 2], bit: usize, n_qubits: usize) -> DenseMatrix {
    let mask = 1usize << bit;
    DenseMatrix::from_fn(1 << n_qubits, |r, col| {
        if (r & !mask) != (col & !mask) {
            return c(0.0, 0.0);
        }
        op[(r >> bit) & 1][(col >> bit) & 1]
    })
}

/// `a` on `bit_a` times `b` on `bit_b` (distinct bits), identity elsewhere.
pub fn kron_pair(
    a: &[[C64; 2]; 2],
    bit_a: usize,
    b: &[[C64; 2]; 2],
    bit_b: usize,
    n_qubits: usize,
) -> DenseMatrix {
    assert_ne!(bit_a, bit_b);
    let mask = (1usize << bit_a) | (1usize << bit_b);
    DenseMatrix::from_fn(1 << n_qubits, |r, col| {
        if (r & !mask) != (col & !mask) {
            return c(0.0, 0.0);
        }
        a[(r >> bit_a) & 1][(col >> bit_a) & 1] * b[(r >> bit_b) & 1][(col >> bit_b) & 1]
    })
}

pub fn number_operator_dense(n_qubits: usize) -> DenseMatrix {
    let diag: Vec<f64> = (0..1usize << n_qubits).map(|b| b.count_ones() as f64).collect();
    DenseMatrix::diagonal(&diag)
}

/// Hamiltonian assembled from Pauli-matrix Kronecker products in the
/// rotated-XY form, independent of the term-list code paths.
pub fn pauli_reference_hamiltonian(spec: &LatticeSpec) -> DenseMatrix {
    let n = spec.n_qubits;
    let mut h = DenseMatrix::zeros(1 << n);
    for k in 0..n {
        h.add_scaled(c(0.5, 0.0), &kron_site(&pauli_z(), k, n));
    }
    for e in &spec.edges {
        let (i, j) = (e.i - 1, e.j - 1);
        let (s, co) = e.phi.sin_cos();
        let w = 0.5 * e.mu;
        h.add_scaled(c(w * co, 0.0), &kron_pair(&pauli_x(), i, &pauli_x(), j, n));
        h.add_scaled(c(w * co, 0.0), &kron_pair(&pauli_y(), i, &pauli_y(), j, n));
        h.add_scaled(c(w * s, 0.0), &kron_pair(&pauli_x(), i, &pauli_y(), j, n));
        h.add_scaled(c(-w * s, 0.0), &kron_pair(&pauli_y(), i, &pauli_x(), j, n));
    }
    h
}

/// Random connected-ish graph on `n` qubits with random couplings, phases and rates.
pub fn random_spec<R: Rng>(rng: &mut R, n: usize) -> LatticeSpec {
    let mut edges = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            if j == i + 1 || rng.random_bool(0.35) {
                let mu = rng.random_range(-1.0..1.0);
                let phi = rng.random_range(-PI..PI);
                let e = Edge::new(i, j, mu, phi);
                edges.push(if rng.random_bool(0.5) { e } else { e.reversed() });
            }
        }
    }
    let input_node = rng.random_range(1..=n);
    let detector_nodes = (1..=n).filter(|&k| k != input_node && rng.random_bool(0.6)).collect();
    LatticeSpec {
        n_qubits: n,
        edges,
        input_node,
        detector_nodes,
        gamma_in: rng.random_range(0.0..1.5),
        gamma_out: rng.random_range(0.0..1.5),
    }
}

pub fn random_state<R: Rng>(rng: &mut R, n: usize) -> StateVector {
    let amps = (0..1usize << n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let mut psi = StateVector::from_amplitudes(n, amps).unwrap();
    psi.normalize();
    psi
}

/// Random state supported on a single excitation-number sector.
pub fn random_sector_state<R: Rng>(rng: &mut R, n: usize, excitations: u32) -> StateVector {
    let amps = (0..1usize << n)
        .map(|b: usize| {
            if b.count_ones() == excitations {
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            } else {
                c(0.0, 0.0)
            }
        })
        .collect();
    let mut psi = StateVector::from_amplitudes(n, amps).unwrap();
    psi.normalize();
    psi
}

/// Random full-rank density matrix `A A^dagger / tr`.
pub fn random_density<R: Rng>(rng: &mut R, n: usize) -> DenseMatrix {
    let dim = 1 << n;
    let a = DenseMatrix::from_fn(dim, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut rho = a.matmul(&a.adjoint());
    let tr = rho.trace();
    rho.scale(1.0 / tr);
    rho
}
