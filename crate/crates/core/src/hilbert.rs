//! Matrix-free operations on n-qubit state vectors.
//!
//! Basis index `b = sum_k bit_k 2^k`; bit `k` set means qubit label `k + 1`
//! is excited.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HamiltonianOp, MAX_QUBITS};

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::InvalidConfig(format!("unsupported register size {n_qubits}")));
        }
        if amps.len() != 1 << n_qubits {
            return Err(Error::DimensionMismatch { expected: 1 << n_qubits, found: amps.len() });
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn zeros(n_qubits: usize) -> Self {
        Self { n_qubits, amps: vec![C64::new(0.0, 0.0); 1 << n_qubits] }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Scales to unit norm and returns the previous norm. A zero vector is left alone.
    pub fn normalize(&mut self) -> f64 {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
        norm
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Self) -> Result<C64> {
        check_dims(self, other.dim())?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Probability that the qubit with the given label is excited.
    pub fn excited_probability(&self, site: usize) -> Result<f64> {
        let bit = site_bit(site, self.n_qubits)?;
        let p: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(b, _)| (b >> bit) & 1 == 1)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        Ok(p / self.norm_sqr())
    }

    /// `<sz>` for the qubit with the given label, on the normalized state.
    pub fn sz_expectation(&self, site: usize) -> Result<f64> {
        Ok(2.0 * self.excited_probability(site)? - 1.0)
    }

    /// Mean and variance of the excitation number on the normalized state.
    pub fn excitation_moments(&self) -> (f64, f64) {
        let total = self.norm_sqr();
        let count = |b: usize| b.count_ones() as f64;
        let mean = self.amps.iter().enumerate().map(|(b, a)| count(b) * a.norm_sqr()).sum::<f64>() / total;
        // two-pass variance, exactly zero up to rounding of `mean` on a single sector
        let var = self.amps.iter().enumerate().map(|(b, a)| (count(b) - mean).powi(2) * a.norm_sqr()).sum::<f64>()
            / total;
        (mean, var)
    }
}

impl std::ops::AddAssign<(C64, &StateVector)> for StateVector {
    fn add_assign(&mut self, (s, other): (C64, &StateVector)) {
        assert_eq!(self.dim(), other.dim());
        for (x, y) in self.amps.iter_mut().zip(&other.amps) {
            *x += s * y;
        }
    }
}

/// Single-site ladder operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LadderKind {
    Raise,
    Lower,
}

impl LadderKind {
    /// Whether `A^dagger A` is nonzero on a basis state with the given bit value.
    /// For `s+` that is the ground state, for `s-` the excited one.
    #[inline]
    pub fn active_on(self, bit_value: usize) -> bool {
        match self {
            LadderKind::Raise => bit_value == 0,
            LadderKind::Lower => bit_value == 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LadderKind::Raise => "raise",
            LadderKind::Lower => "lower",
        }
    }
}

pub(crate) fn site_bit(site: usize, n_qubits: usize) -> Result<usize> {
    if site == 0 || site > n_qubits {
        return Err(Error::SiteOutOfRange { site, n_qubits });
    }
    Ok(site - 1)
}

fn check_dims(psi: &StateVector, expected: usize) -> Result<()> {
    if psi.dim() != expected {
        return Err(Error::DimensionMismatch { expected, found: psi.dim() });
    }
    Ok(())
}

/// The all-ground product state.
pub fn all_down_state(n_qubits: usize) -> StateVector {
    assert!((1..=MAX_QUBITS).contains(&n_qubits), "unsupported register size {n_qubits}");
    let mut psi = StateVector::zeros(n_qubits);
    psi.amps[0] = C64::new(1.0, 0.0);
    psi
}

/// `H|psi>` without forming the matrix. Cost is one sweep over the basis per term.
pub fn apply_hamiltonian(h: &HamiltonianOp, psi: &StateVector) -> Result<StateVector> {
    check_dims(psi, h.dim())?;
    let mut out = StateVector::zeros(h.n_qubits);
    for &(k, c) in &h.local_terms {
        for (b, (o, a)) in out.amps.iter_mut().zip(&psi.amps).enumerate() {
            *o += if (b >> k) & 1 == 1 { c * a } else { -c * a };
        }
    }
    for term in &h.hop_terms {
        for (b, a) in psi.amps.iter().enumerate() {
            if let Some((partner, amp)) = term.act(b) {
                out.amps[partner] += amp * a;
            }
        }
    }
    Ok(out)
}

/// `s+|psi>` or `s-|psi>` on the qubit with the given label. May return the zero vector.
pub fn apply_site_operator(kind: LadderKind, site: usize, psi: &StateVector) -> Result<StateVector> {
    let bit = site_bit(site, psi.n_qubits)?;
    let mask = 1usize << bit;
    let mut out = StateVector::zeros(psi.n_qubits);
    for (b, a) in psi.amps.iter().enumerate() {
        let set = b & mask != 0;
        match (kind, set) {
            (LadderKind::Raise, false) => out.amps[b | mask] = *a,
            (LadderKind::Lower, true) => out.amps[b & !mask] = *a,
            _ => {}
        }
    }
    Ok(out)
}

/// `gamma^2 <psi|A^dagger A|psi>` for the ladder operator `A` at the site.
pub fn jump_rate(kind: LadderKind, site: usize, gamma: f64, psi: &StateVector) -> Result<f64> {
    let bit = site_bit(site, psi.n_qubits)?;
    let weight: f64 = psi
        .amps
        .iter()
        .enumerate()
        .filter(|(b, _)| kind.active_on((b >> bit) & 1))
        .map(|(_, a)| a.norm_sqr())
        .sum();
    Ok(gamma * gamma * weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, paper_lattice, Edge, LatticeSpec};
    use crate::test_util::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn all_down_examples() {
        let one = all_down_state(1);
        assert_eq!(one.amplitudes(), &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let nine = all_down_state(9);
        assert_eq!(nine.dim(), 512);
        assert_eq!(nine.amplitudes()[0], C64::new(1.0, 0.0));
        assert!(nine.amplitudes()[1..].iter().all(|a| *a == C64::new(0.0, 0.0)));
        assert_eq!(all_down_state(2).excitation_moments(), (0.0, 0.0));
    }

    #[test]
    fn ground_state_energy() {
        let h = build_hamiltonian(&paper_lattice(0.9)).unwrap();
        let psi = all_down_state(9);
        let hpsi = apply_hamiltonian(&h, &psi).unwrap();
        let mut expected = psi.clone();
        expected.amplitudes_mut()[0] = C64::new(-4.5, 0.0);
        assert_eq!(hpsi, expected);
    }

    #[test]
    fn two_qubit_hop_action() {
        for &phi in &[0.0, 0.6, -2.0] {
            let spec = LatticeSpec {
                n_qubits: 2,
                edges: vec![Edge::new(1, 2, 0.5, phi)],
                input_node: 1,
                detector_nodes: vec![2],
                gamma_in: 1.0,
                gamma_out: 1.0,
            };
            let h = build_hamiltonian(&spec).unwrap();
            // |up_1 down_2> is basis index 1
            let mut psi = StateVector::zeros(2);
            psi.amplitudes_mut()[1] = C64::new(1.0, 0.0);
            let out = apply_hamiltonian(&h, &psi).unwrap();
            assert!(close(out.amplitudes()[1], C64::new(0.0, 0.0), 1e-15));
            assert!(close(out.amplitudes()[2], C64::from_polar(0.5, -phi), 1e-15));
            assert!(close(out.amplitudes()[0], C64::new(0.0, 0.0), 0.0));
        }
    }

    #[test]
    fn matrix_free_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            for _ in 0..5 {
                let spec = random_spec(&mut rng, n);
                let h = build_hamiltonian(&spec).unwrap();
                let psi = random_state(&mut rng, n);
                let free = apply_hamiltonian(&h, &psi).unwrap();
                let dense = pauli_reference_hamiltonian(&spec).matvec(psi.amplitudes());
                for (a, b) in free.amplitudes().iter().zip(&dense) {
                    assert!(close(*a, *b, 1e-12));
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let h = build_hamiltonian(&paper_lattice(0.0)).unwrap();
        assert!(matches!(
            apply_hamiltonian(&h, &all_down_state(3)),
            Err(Error::DimensionMismatch { expected: 512, found: 8 })
        ));
    }

    #[test]
    fn site_operator_examples() {
        let down = all_down_state(1);
        let up = apply_site_operator(LadderKind::Raise, 1, &down).unwrap();
        assert_eq!(up.amplitudes(), &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let gone = apply_site_operator(LadderKind::Raise, 1, &up).unwrap();
        assert_eq!(gone.norm_sqr(), 0.0);
        assert!(matches!(
            apply_site_operator(LadderKind::Lower, 2, &down),
            Err(Error::SiteOutOfRange { site: 2, n_qubits: 1 })
        ));
    }

    #[test]
    fn lower_then_raise_gives_excited_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_state(&mut rng, 4);
        for site in 1..=4 {
            let lowered = apply_site_operator(LadderKind::Lower, site, &psi).unwrap();
            let back = apply_site_operator(LadderKind::Raise, site, &lowered).unwrap();
            let value = psi.inner(&back).unwrap();
            let direct: f64 = psi
                .amplitudes()
                .iter()
                .enumerate()
                .filter(|(b, _)| (b >> (site - 1)) & 1 == 1)
                .map(|(_, a)| a.norm_sqr())
                .sum();
            assert!(value.im.abs() < 1e-15);
            assert!((value.re - direct).abs() < 1e-14);
            assert!((0.0..=1.0).contains(&value.re));
        }
    }

    #[test]
    fn jump_rate_examples() {
        let psi = all_down_state(9);
        assert_eq!(jump_rate(LadderKind::Lower, 7, 1.0, &psi).unwrap(), 0.0);
        assert_eq!(jump_rate(LadderKind::Raise, 1, 1.0, &psi).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let psi = random_state(&mut rng, 5);
        for kind in [LadderKind::Raise, LadderKind::Lower] {
            for site in 1..=5 {
                let g = 0.7;
                let rate = jump_rate(kind, site, g, &psi).unwrap();
                let applied = apply_site_operator(kind, site, &psi).unwrap();
                assert!((rate - g * g * applied.norm_sqr()).abs() <= 1e-12);
            }
        }
    }
}
