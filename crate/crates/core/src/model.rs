//! Qubit graphs and the phase-twisted XY Hamiltonian.
//!
//! Qubits carry 1-based labels in [`LatticeSpec`] (the labels used on the
//! command line and in output files). Internally qubit `k` is bit `k - 1` of
//! a basis-state index, with bit value 1 meaning the qubit is excited.
//!
//! The Hamiltonian is
//!
//! ```text
//! H = sum_i sz_i / 2 + sum_(i,j) mu_ij (e^{i phi_ij} s+_i s-_j + e^{-i phi_ij} s-_i s+_j)
//! ```
//!
//! with hbar = 1.

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Largest register the dense helpers and state vectors are allowed to allocate.
pub const MAX_QUBITS: usize = 20;

/// Directed coupling `mu * Xi_ij(phi)` between two qubit labels.
///
/// Reversing the orientation is the same operator as negating `phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub mu: f64,
    #[serde(default)]
    pub phi: f64,
}

impl Edge {
    pub fn new(i: usize, j: usize, mu: f64, phi: f64) -> Self {
        Self { i, j, mu, phi }
    }

    pub fn reversed(self) -> Self {
        Self { i: self.j, j: self.i, mu: self.mu, phi: -self.phi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n_qubits: usize,
    pub edges: Vec<Edge>,
    pub input_node: usize,
    /// Output detectors, in presentation order.
    pub detector_nodes: Vec<usize>,
    pub gamma_in: f64,
    pub gamma_out: f64,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidLattice(format!(
                "n_qubits must be in 1..={MAX_QUBITS}, got {n}"
            )));
        }
        let in_range = |k: usize| (1..=n).contains(&k);
        let mut pairs = HashSet::new();
        for e in &self.edges {
            if !in_range(e.i) || !in_range(e.j) {
                return Err(Error::InvalidLattice(format!(
                    "edge ({}, {}) references a qubit outside 1..={n}",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidLattice(format!("self-edge on qubit {}", e.i)));
            }
            if !e.mu.is_finite() || !e.phi.is_finite() {
                return Err(Error::InvalidLattice(format!(
                    "edge ({}, {}) has non-finite mu or phi",
                    e.i, e.j
                )));
            }
            if !pairs.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::InvalidLattice(format!(
                    "duplicate coupling between {} and {}",
                    e.i, e.j
                )));
            }
        }
        if !in_range(self.input_node) {
            return Err(Error::InvalidLattice(format!(
                "input node {} outside 1..={n}",
                self.input_node
            )));
        }
        let mut seen = HashSet::new();
        for &d in &self.detector_nodes {
            if !in_range(d) {
                return Err(Error::InvalidLattice(format!("detector {d} outside 1..={n}")));
            }
            if d == self.input_node {
                return Err(Error::InvalidLattice(format!(
                    "input node {d} is also listed as a detector"
                )));
            }
            if !seen.insert(d) {
                return Err(Error::InvalidLattice(format!("detector {d} listed twice")));
            }
        }
        for (name, g) in [("gamma_in", self.gamma_in), ("gamma_out", self.gamma_out)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidLattice(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

/// Edges of the 3x3 lattice; the first four form the phased plaquette 1 -> 2 -> 5 -> 4 -> 1.
pub const PAPER_EDGES: [(usize, usize); 12] = [
    (1, 2),
    (2, 5),
    (5, 4),
    (4, 1),
    (2, 3),
    (5, 6),
    (5, 8),
    (4, 7),
    (7, 8),
    (8, 9),
    (9, 6),
    (6, 3),
];

/// Output detectors of the 3x3 lattice in presentation order.
pub const PAPER_DETECTORS: [usize; 5] = [7, 8, 9, 6, 3];

/// The 3x3 lattice with input at qubit 1, `mu = 1/2` and unit detector rates.
pub fn paper_lattice(phi: f64) -> LatticeSpec {
    paper_lattice_with(phi, 0.5, 1.0, 1.0)
}

pub fn paper_lattice_with(phi: f64, mu: f64, gamma_in: f64, gamma_out: f64) -> LatticeSpec {
    let edges = PAPER_EDGES
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| Edge::new(i, j, mu, if k < 4 { phi } else { 0.0 }))
        .collect();
    LatticeSpec {
        n_qubits: 9,
        edges,
        input_node: 1,
        detector_nodes: PAPER_DETECTORS.to_vec(),
        gamma_in,
        gamma_out,
    }
}

/// Hopping term `amp * s+_i s-_j + conj(amp) * s-_i s+_j` on 0-based bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopTerm {
    pub i: usize,
    pub j: usize,
    pub amp: C64,
}

impl HopTerm {
    /// Matrix element `<out| term |b>` and the partner state, if nonzero.
    #[inline]
    pub fn act(&self, b: usize) -> Option<(usize, C64)> {
        let bi = (b >> self.i) & 1;
        let bj = (b >> self.j) & 1;
        match (bi, bj) {
            // s+_i s-_j moves the excitation j -> i
            (0, 1) => Some((b ^ (1 << self.i) ^ (1 << self.j), self.amp)),
            (1, 0) => Some((b ^ (1 << self.i) ^ (1 << self.j), self.amp.conj())),
            _ => None,
        }
    }
}

/// `mu * Xi_ij(phi)` for 1-based labels.
pub fn coupling_term(i: usize, j: usize, mu: f64, phi: f64) -> Result<HopTerm> {
    if i == j {
        return Err(Error::SelfCoupling(i));
    }
    if i == 0 || j == 0 {
        return Err(Error::SiteOutOfRange { site: 0, n_qubits: i.max(j) });
    }
    Ok(HopTerm { i: i - 1, j: j - 1, amp: C64::from_polar(mu, phi) })
}

/// Term-list representation of a number-conserving spin Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianOp {
    pub n_qubits: usize,
    /// `(bit, coefficient)` for `coefficient * sz_bit`.
    pub local_terms: Vec<(usize, f64)>,
    pub hop_terms: Vec<HopTerm>,
}

impl HamiltonianOp {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Diagonal element `<b|H|b>`.
    #[inline]
    pub fn diagonal_element(&self, b: usize) -> f64 {
        self.local_terms
            .iter()
            .map(|&(k, c)| if (b >> k) & 1 == 1 { c } else { -c })
            .sum()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let dim = self.dim();
        let mut m = DenseMatrix::zeros(dim);
        for b in 0..dim {
            m[(b, b)] += C64::new(self.diagonal_element(b), 0.0);
            for term in &self.hop_terms {
                if let Some((out, amp)) = term.act(b) {
                    m[(out, b)] += amp;
                }
            }
        }
        m
    }
}

fn local_terms(n_qubits: usize) -> Vec<(usize, f64)> {
    (0..n_qubits).map(|k| (k, 0.5)).collect()
}

/// Assemble `H` from the ladder-operator form of each coupling.
pub fn build_hamiltonian(spec: &LatticeSpec) -> Result<HamiltonianOp> {
    spec.validate()?;
    let hop_terms = spec
        .edges
        .iter()
        .map(|e| coupling_term(e.i, e.j, e.mu, e.phi))
        .collect::<Result<Vec<_>>>()?;
    Ok(HamiltonianOp { n_qubits: spec.n_qubits, local_terms: local_terms(spec.n_qubits), hop_terms })
}

#[derive(Clone, Copy)]
enum Pauli {
    X,
    Y,
}

impl Pauli {
    /// Coefficients of `(s+, s-)` in the Pauli matrix: X = s+ + s-, Y = -i s+ + i s-.
    fn ladder(self) -> [C64; 2] {
        match self {
            Pauli::X => [C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
            Pauli::Y => [C64::new(0.0, -1.0), C64::new(0.0, 1.0)],
        }
    }
}

/// Assemble `H` from the rotated XY form
/// `(mu/2) (sx_i, sy_i) R(phi) (sx_j, sy_j)^T` with `R = [[cos, sin], [-sin, cos]]`.
///
/// Each coupling is expanded into ladder-operator products; the `s+ s+` and
/// `s- s-` parts cancel identically.
pub fn twisted_xy_hamiltonian(spec: &LatticeSpec) -> Result<HamiltonianOp> {
    spec.validate()?;
    let mut hop_terms = Vec::with_capacity(spec.edges.len());
    for e in &spec.edges {
        let (s, c) = e.phi.sin_cos();
        let rotation = [[c, s], [-s, c]];
        let paulis = [Pauli::X, Pauli::Y];
        // ladder[a][b]: coefficient of (s^a_i s^b_j), a, b in {+, -}
        let mut ladder = [[C64::new(0.0, 0.0); 2]; 2];
        for (p, &pi) in paulis.iter().enumerate() {
            for (q, &pj) in paulis.iter().enumerate() {
                let w = 0.5 * e.mu * rotation[p][q];
                let (li, lj) = (pi.ladder(), pj.ladder());
                for a in 0..2 {
                    for b in 0..2 {
                        ladder[a][b] += w * li[a] * lj[b];
                    }
                }
            }
        }
        let amp = ladder[0][1];
        debug_assert!((ladder[1][0] - amp.conj()).norm() <= 1e-14 * (1.0 + e.mu.abs()));
        debug_assert!(ladder[0][0].norm() <= 1e-14 * (1.0 + e.mu.abs()));
        debug_assert!(ladder[1][1].norm() <= 1e-14 * (1.0 + e.mu.abs()));
        hop_terms.push(HopTerm { i: e.i - 1, j: e.j - 1, amp });
    }
    Ok(HamiltonianOp { n_qubits: spec.n_qubits, local_terms: local_terms(spec.n_qubits), hop_terms })
}

/// Wrap a phase into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}
