//! Dense Lindblad master-equation integrator.
//!
//! Solves `d rho/dt = -i[H, rho] + sum_j (L_j rho L_j^dagger - 1/2 {L_j^dagger L_j, rho})`
//! with classical RK4 on a full `2^n x 2^n` matrix and accumulates the
//! expected click count of every channel, `int_0^T gamma_j^2 Tr(A_j^dagger A_j rho) dt`.
//!
//! When the initial state has no coherences between different excitation
//! numbers (the all-ground start does not), the dynamics never creates them:
//! `H` and every `L^dagger L` conserve excitation number and each `L rho L^dagger`
//! shifts row and column excitation by the same amount. The integrator then
//! evaluates only the excitation-diagonal blocks; the off-block entries stay
//! exactly zero.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::hilbert::{site_bit, LadderKind, StateVector};
use crate::model::{build_hamiltonian, HamiltonianOp, LatticeSpec};
use crate::trajectory::{detector_channels, DetectorSpec};

/// Largest register the dense oracle accepts.
pub const MAX_ORACLE_QUBITS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DenseMatrix);

impl DensityMatrix {
    /// Wraps a matrix after checking the density-matrix invariants.
    pub fn new(m: DenseMatrix) -> Result<Self> {
        let rho = Self(m);
        rho.check(1e-10, 1e-8, 1e-8)?;
        Ok(rho)
    }

    pub fn pure(psi: &StateVector) -> Self {
        let mut v = psi.clone();
        v.normalize();
        Self(DenseMatrix::outer(v.amplitudes(), v.amplitudes()))
    }

    pub fn ground(n_qubits: usize) -> Self {
        Self::pure(&crate::hilbert::all_down_state(n_qubits))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn n_qubits(&self) -> usize {
        self.0.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.hermitian_eigenvalues()[0]
    }

    fn check(&self, herm_tol: f64, trace_tol: f64, neg_tol: f64) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig(format!("not a density matrix: {reason}")));
        if !self.0.dim().is_power_of_two() {
            return fail(format!("dimension {} is not a power of two", self.0.dim()));
        }
        let h = self.0.hermiticity_defect();
        if h > herm_tol {
            return fail(format!("Hermiticity defect {h:e}"));
        }
        let t = self.0.trace();
        if (t.re - 1.0).abs() > trace_tol || t.im.abs() > trace_tol {
            return fail(format!("trace {t}"));
        }
        let e = self.min_eigenvalue();
        if e < -neg_tol {
            return fail(format!("eigenvalue {e:e}"));
        }
        Ok(())
    }

    /// `Tr(sz_site rho)` for a qubit label.
    pub fn sz_expectation(&self, site: usize) -> Result<f64> {
        let bit = site_bit(site, self.n_qubits())?;
        Ok((0..self.dim())
            .map(|b| if (b >> bit) & 1 == 1 { self.0[(b, b)].re } else { -self.0[(b, b)].re })
            .sum())
    }
}

#[derive(Clone, Copy, Debug)]
struct Channel {
    bit: usize,
    kind: LadderKind,
    gamma2: f64,
}

impl Channel {
    /// Basis state `s` with `A|s> = |b>`, if any.
    #[inline]
    fn preimage(&self, b: usize) -> Option<usize> {
        let mask = 1usize << self.bit;
        match self.kind {
            LadderKind::Lower if b & mask == 0 => Some(b | mask),
            LadderKind::Raise if b & mask != 0 => Some(b & !mask),
            _ => None,
        }
    }
}

/// The Lindblad generator compiled for repeated right-hand-side evaluation.
#[derive(Clone, Debug)]
pub struct Lindbladian {
    n_qubits: usize,
    dim: usize,
    channels: Vec<DetectorSpec>,
    compiled: Vec<Channel>,
    energy: Vec<f64>,
    /// `sum_j gamma_j^2 <b|A_j^dagger A_j|b>`
    decay: Vec<f64>,
    /// Off-diagonal Hamiltonian entries per row, `(column, H[row, column])`.
    hops: Vec<Vec<(u32, C64)>>,
}

impl Lindbladian {
    pub fn new(h: &HamiltonianOp, channels: &[DetectorSpec]) -> Result<Self> {
        let n = h.n_qubits;
        if n > MAX_ORACLE_QUBITS {
            return Err(Error::InvalidConfig(format!(
                "dense oracle supports at most {MAX_ORACLE_QUBITS} qubits, got {n}"
            )));
        }
        let dim = h.dim();
        let compiled = channels
            .iter()
            .map(|d| {
                Ok(Channel { bit: site_bit(d.site, n)?, kind: d.kind, gamma2: d.gamma * d.gamma })
            })
            .collect::<Result<Vec<_>>>()?;
        let energy = (0..dim).map(|b| h.diagonal_element(b)).collect();
        let decay = (0..dim)
            .map(|b| {
                compiled
                    .iter()
                    .filter(|c| c.kind.active_on((b >> c.bit) & 1))
                    .map(|c| c.gamma2)
                    .sum()
            })
            .collect();
        let mut hops = vec![Vec::new(); dim];
        for b in 0..dim {
            for term in &h.hop_terms {
                if let Some((out, amp)) = term.act(b) {
                    hops[out].push((b as u32, amp));
                }
            }
        }
        Ok(Self { n_qubits: n, dim, channels: channels.to_vec(), compiled, energy, decay, hops })
    }

    pub fn from_spec(spec: &LatticeSpec) -> Result<Self> {
        Self::new(&build_hamiltonian(spec)?, &detector_channels(spec))
    }

    pub fn channels(&self) -> &[DetectorSpec] {
        &self.channels
    }

    /// Right-hand side on every entry.
    pub fn rhs(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho.dim() });
        }
        let mut out = DenseMatrix::zeros(self.dim);
        self.rhs_into(rho.0.as_slice(), out.as_mut_slice());
        Ok(DensityMatrix(out))
    }

    fn rhs_into(&self, rho: &[C64], out: &mut [C64]) {
        let dim = self.dim;
        let minus_i = C64::new(0.0, -1.0);
        let plus_i = C64::new(0.0, 1.0);
        let mut jumps_into_row: Vec<(&Channel, usize)> = Vec::with_capacity(self.compiled.len());
        for r in 0..dim {
            let (er, dr) = (self.energy[r], self.decay[r]);
            let row = r * dim;
            jumps_into_row.clear();
            jumps_into_row.extend(self.compiled.iter().filter_map(|ch| ch.preimage(r).map(|r0| (ch, r0))));
            // diagonal parts, the rho H half of the commutator and the jump terms
            for c in 0..dim {
                let here = rho[row + c];
                let mut right = C64::new(0.0, 0.0);
                for &(k, hv) in &self.hops[c] {
                    right += rho[row + k as usize] * hv.conj();
                }
                let mut val = minus_i * (er - self.energy[c]) * here - 0.5 * (dr + self.decay[c]) * here
                    + plus_i * right;
                for &(ch, r0) in &jumps_into_row {
                    if let Some(c0) = ch.preimage(c) {
                        val += ch.gamma2 * rho[r0 * dim + c0];
                    }
                }
                out[row + c] = val;
            }
            // -i H rho, streaming whole rows of rho
            for &(k, hv) in &self.hops[r] {
                let s = minus_i * hv;
                let src = k as usize * dim;
                for (o, x) in out[row..row + dim].iter_mut().zip(&rho[src..src + dim]) {
                    *o += s * x;
                }
            }
        }
    }

    fn channel_index(&self, channel_id: usize) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.channel_id == channel_id)
            .ok_or_else(|| Error::InvalidConfig(format!("no channel {channel_id}")))
    }

    /// `gamma^2 A rho A^dagger` for one channel.
    pub fn jump(&self, channel_id: usize, rho: &DensityMatrix) -> Result<DenseMatrix> {
        let ch = self.compiled[self.channel_index(channel_id)?];
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho.dim() });
        }
        let m = rho.matrix();
        Ok(DenseMatrix::from_fn(self.dim, |r, c| match (ch.preimage(r), ch.preimage(c)) {
            (Some(pr), Some(pc)) => ch.gamma2 * m[(pr, pc)],
            _ => C64::new(0.0, 0.0),
        }))
    }

    /// Click rate of one channel in `rho`.
    pub fn rate(&self, channel_id: usize, rho: &DensityMatrix) -> Result<f64> {
        let k = self.channel_index(channel_id)?;
        let pops: Vec<f64> = (0..rho.dim()).map(|b| rho.matrix()[(b, b)].re).collect();
        let mut out = vec![0.0; self.compiled.len()];
        self.rates(&pops, &mut out);
        Ok(out[k])
    }

    /// `gamma_j^2 Tr(A_j^dagger A_j rho)` per channel from basis-state populations.
    fn rates(&self, populations: &[f64], out: &mut [f64]) {
        for (o, ch) in out.iter_mut().zip(&self.compiled) {
            *o = ch.gamma2
                * populations
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| ch.kind.active_on((b >> ch.bit) & 1))
                    .map(|(_, p)| p)
                    .sum::<f64>();
        }
    }
}

/// `-i[H, rho] + sum_j (L_j rho L_j^dagger - 1/2 {L_j^dagger L_j, rho})`
pub fn lindblad_rhs(
    h: &HamiltonianOp,
    detectors: &[DetectorSpec],
    rho: &DensityMatrix,
) -> Result<DensityMatrix> {
    Lindbladian::new(h, detectors)?.rhs(rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Spacing of stored observables (and states, if kept).
    pub snapshot_interval: f64,
    /// Spacing of the full minimum-eigenvalue positivity check.
    pub positivity_interval: f64,
    pub keep_states: bool,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            horizon: 1000.0,
            dt: 0.05,
            snapshot_interval: 0.5,
            positivity_interval: 50.0,
            keep_states: false,
        }
    }
}

impl MasterConfig {
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("dt", self.dt),
            ("snapshot_interval", self.snapshot_interval),
            ("positivity_interval", self.positivity_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub channels: Vec<DetectorSpec>,
    pub counts: Vec<f64>,
    pub horizon: f64,
}

impl ExpectedCounts {
    pub fn get(&self, channel_id: usize) -> Option<f64> {
        self.channels.iter().position(|c| c.channel_id == channel_id).map(|k| self.counts[k])
    }
}

#[derive(Clone, Debug)]
pub struct MasterSolution {
    pub times: Vec<f64>,
    /// `<sz_i>` per snapshot, qubit labels in order.
    pub sz: Vec<Vec<f64>>,
    /// Instantaneous click rate per snapshot, channels in order.
    pub rates: Vec<Vec<f64>>,
    pub states: Vec<DensityMatrix>,
    pub expected: ExpectedCounts,
    pub final_state: DensityMatrix,
}

/// Integrate from the all-ground state of `spec`.
pub fn integrate_master(spec: &LatticeSpec, config: &MasterConfig) -> Result<MasterSolution> {
    let l = Lindbladian::from_spec(spec)?;
    integrate_from(&l, DensityMatrix::ground(spec.n_qubits), config)
}

fn is_excitation_block_diagonal(rho: &DenseMatrix) -> bool {
    let dim = rho.dim();
    (0..dim).all(|r| {
        (0..dim).all(|c| r.count_ones() == c.count_ones() || rho[(r, c)] == C64::new(0.0, 0.0))
    })
}

/// Integrate from `rho0`, using the excitation-block layout when `rho0` allows it.
pub fn integrate_from(l: &Lindbladian, rho0: DensityMatrix, config: &MasterConfig) -> Result<MasterSolution> {
    if is_excitation_block_diagonal(rho0.matrix()) {
        let form = BlockForm::new(l);
        let x = form.pack(rho0.matrix());
        run(l, &form, x, config)
    } else {
        integrate_dense_full(l, rho0, config)
    }
}

/// Evaluates the right-hand side on every matrix entry; also the cross-check
/// for the block layout.
pub fn integrate_dense_full(
    l: &Lindbladian,
    rho0: DensityMatrix,
    config: &MasterConfig,
) -> Result<MasterSolution> {
    let x = rho0.into_matrix().as_slice().to_vec();
    run(l, &FullForm(l), x, config)
}

/// A flat working representation of rho together with its right-hand side.
trait Form {
    fn rhs(&self, x: &[C64], out: &mut [C64]);
    /// Diagonal of rho in computational-basis order.
    fn populations(&self, x: &[C64], out: &mut [f64]);
    /// Diagonal blocks that together carry all nonzero entries.
    fn blocks(&self, x: &[C64]) -> Vec<DenseMatrix>;
    fn to_dense(&self, x: &[C64]) -> DenseMatrix;
}

struct FullForm<'a>(&'a Lindbladian);

impl Form for FullForm<'_> {
    fn rhs(&self, x: &[C64], out: &mut [C64]) {
        self.0.rhs_into(x, out);
    }

    fn populations(&self, x: &[C64], out: &mut [f64]) {
        let dim = self.0.dim;
        for (b, p) in out.iter_mut().enumerate() {
            *p = x[b * dim + b].re;
        }
    }

    fn blocks(&self, x: &[C64]) -> Vec<DenseMatrix> {
        vec![self.to_dense(x)]
    }

    fn to_dense(&self, x: &[C64]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.0.dim);
        m.as_mut_slice().copy_from_slice(x);
        m
    }
}

/// `L rho L^dagger` contribution feeding one block from its neighbour.
struct BlockJump {
    source: usize,
    gamma2: f64,
    /// `(row in target block, row in source block)`
    pairs: Vec<(u32, u32)>,
}

struct Block {
    offset: usize,
    basis: Vec<u32>,
    energy: Vec<f64>,
    decay: Vec<f64>,
    hops: Vec<Vec<(u32, C64)>>,
    jumps: Vec<BlockJump>,
}

impl Block {
    fn dim(&self) -> usize {
        self.basis.len()
    }
}

/// rho stored as dense excitation-number blocks laid out back to back.
///
/// Every right-hand-side term maps exactly Hermitian input to exactly
/// Hermitian output, so starting from a Hermitian rho the commutator can be
/// formed as `H rho - (H rho)^dagger`.
struct BlockForm {
    dim: usize,
    blocks: Vec<Block>,
    scratch: std::cell::RefCell<Vec<C64>>,
}

impl BlockForm {
    fn new(l: &Lindbladian) -> Self {
        let mut basis: Vec<Vec<u32>> = vec![Vec::new(); l.n_qubits + 1];
        let mut local = vec![0u32; l.dim];
        for (b, slot) in local.iter_mut().enumerate() {
            let k = b.count_ones() as usize;
            *slot = basis[k].len() as u32;
            basis[k].push(b as u32);
        }
        let mut offset = 0;
        let mut blocks = Vec::with_capacity(basis.len());
        for (k, states) in basis.iter().enumerate() {
            let energy = states.iter().map(|&b| l.energy[b as usize]).collect();
            let decay = states.iter().map(|&b| l.decay[b as usize]).collect();
            let hops = states
                .iter()
                .map(|&b| l.hops[b as usize].iter().map(|&(c, v)| (local[c as usize], v)).collect())
                .collect();
            let mut jumps = Vec::new();
            for ch in &l.compiled {
                let source = match ch.kind {
                    LadderKind::Lower if k < l.n_qubits => k + 1,
                    LadderKind::Raise if k > 0 => k - 1,
                    _ => continue,
                };
                let pairs: Vec<(u32, u32)> = states
                    .iter()
                    .enumerate()
                    .filter_map(|(r, &b)| ch.preimage(b as usize).map(|s| (r as u32, local[s])))
                    .collect();
                if ch.gamma2 != 0.0 && !pairs.is_empty() {
                    jumps.push(BlockJump { source, gamma2: ch.gamma2, pairs });
                }
            }
            blocks.push(Block { offset, basis: states.clone(), energy, decay, hops, jumps });
            offset += states.len() * states.len();
        }
        let max_d = blocks.iter().map(Block::dim).max().unwrap_or(1);
        Self { dim: l.dim, blocks, scratch: std::cell::RefCell::new(vec![C64::new(0.0, 0.0); max_d * max_d]) }
    }

    fn len(&self) -> usize {
        self.blocks.last().map(|b| b.offset + b.dim() * b.dim()).unwrap_or(0)
    }

    fn pack(&self, rho: &DenseMatrix) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); self.len()];
        for blk in &self.blocks {
            let d = blk.dim();
            for (r, &br) in blk.basis.iter().enumerate() {
                for (c, &bc) in blk.basis.iter().enumerate() {
                    // symmetrize so the Hermitian shortcut is exact
                    let v = 0.5 * (rho[(br as usize, bc as usize)] + rho[(bc as usize, br as usize)].conj());
                    x[blk.offset + r * d + c] = v;
                }
            }
        }
        x
    }
}

impl Form for BlockForm {
    fn rhs(&self, x: &[C64], out: &mut [C64]) {
        let minus_i = C64::new(0.0, -1.0);
        let mut scratch = self.scratch.borrow_mut();
        for blk in &self.blocks {
            let d = blk.dim();
            let rho = &x[blk.offset..blk.offset + d * d];
            let m = &mut scratch[..d * d];
            // m = H rho
            for r in 0..d {
                let row = &mut m[r * d..(r + 1) * d];
                let e = blk.energy[r];
                for (o, v) in row.iter_mut().zip(&rho[r * d..(r + 1) * d]) {
                    *o = e * v;
                }
                for &(k, hv) in &blk.hops[r] {
                    let src = &rho[k as usize * d..(k as usize + 1) * d];
                    for (o, v) in row.iter_mut().zip(src) {
                        *o += hv * v;
                    }
                }
            }
            let dst = &mut out[blk.offset..blk.offset + d * d];
            for r in 0..d {
                let dr = blk.decay[r];
                for c in 0..d {
                    let comm = m[r * d + c] - m[c * d + r].conj();
                    dst[r * d + c] = minus_i * comm - 0.5 * (dr + blk.decay[c]) * rho[r * d + c];
                }
            }
            for jump in &blk.jumps {
                let src_blk = &self.blocks[jump.source];
                let sd = src_blk.dim();
                let src = &x[src_blk.offset..src_blk.offset + sd * sd];
                for &(r, r0) in &jump.pairs {
                    let src_row = &src[r0 as usize * sd..(r0 as usize + 1) * sd];
                    let dst_row = &mut dst[r as usize * d..(r as usize + 1) * d];
                    for &(c, c0) in &jump.pairs {
                        dst_row[c as usize] += jump.gamma2 * src_row[c0 as usize];
                    }
                }
            }
        }
    }

    fn populations(&self, x: &[C64], out: &mut [f64]) {
        for blk in &self.blocks {
            let d = blk.dim();
            for (r, &b) in blk.basis.iter().enumerate() {
                out[b as usize] = x[blk.offset + r * d + r].re;
            }
        }
    }

    fn blocks(&self, x: &[C64]) -> Vec<DenseMatrix> {
        self.blocks
            .iter()
            .map(|blk| {
                let d = blk.dim();
                DenseMatrix::from_fn(d, |r, c| x[blk.offset + r * d + c])
            })
            .collect()
    }

    fn to_dense(&self, x: &[C64]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim);
        for blk in &self.blocks {
            let d = blk.dim();
            for (r, &br) in blk.basis.iter().enumerate() {
                for (c, &bc) in blk.basis.iter().enumerate() {
                    m[(br as usize, bc as usize)] = x[blk.offset + r * d + c];
                }
            }
        }
        m
    }
}

const TRACE_TOL: f64 = 1e-6;
const NEGATIVITY_TOL: f64 = 1e-6;

fn run<F: Form>(l: &Lindbladian, form: &F, mut x: Vec<C64>, config: &MasterConfig) -> Result<MasterSolution> {
    config.validate()?;
    let n_ch = l.compiled.len();
    let steps = (config.horizon / config.dt).round().max(1.0) as usize;
    let h = config.horizon / steps as f64;
    let snap_every = ((config.snapshot_interval / h).round() as usize).max(1);
    let check_every = ((config.positivity_interval / h).round() as usize).max(1);

    let zeros = vec![C64::new(0.0, 0.0); x.len()];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (zeros.clone(), zeros.clone(), zeros.clone(), zeros.clone(), zeros);
    let mut pops = vec![0.0; l.dim];
    let mut rate_now = vec![0.0; n_ch];
    let mut rate_next = vec![0.0; n_ch];
    let mut integral = vec![0.0; n_ch];

    let mut sol = MasterSolution {
        times: Vec::new(),
        sz: Vec::new(),
        rates: Vec::new(),
        states: Vec::new(),
        expected: ExpectedCounts { channels: l.channels.clone(), counts: Vec::new(), horizon: config.horizon },
        final_state: DensityMatrix(DenseMatrix::zeros(1)),
    };
    let snapshot = |sol: &mut MasterSolution, t: f64, x: &[C64], pops: &[f64], rate: &[f64]| {
        sol.times.push(t);
        sol.sz.push(
            (0..l.n_qubits)
                .map(|bit| pops.iter().enumerate().map(|(b, p)| if (b >> bit) & 1 == 1 { *p } else { -p }).sum())
                .collect(),
        );
        sol.rates.push(rate.to_vec());
        if config.keep_states {
            sol.states.push(DensityMatrix(form.to_dense(x)));
        }
    };

    form.populations(&x, &mut pops);
    l.rates(&pops, &mut rate_now);
    snapshot(&mut sol, 0.0, &x, &pops, &rate_now);

    for step in 1..=steps {
        form.rhs(&x, &mut k1);
        for ((t, a), k) in tmp.iter_mut().zip(&x).zip(&k1) {
            *t = a + 0.5 * h * k;
        }
        form.rhs(&tmp, &mut k2);
        for ((t, a), k) in tmp.iter_mut().zip(&x).zip(&k2) {
            *t = a + 0.5 * h * k;
        }
        form.rhs(&tmp, &mut k3);
        for ((t, a), k) in tmp.iter_mut().zip(&x).zip(&k3) {
            *t = a + h * k;
        }
        form.rhs(&tmp, &mut k4);
        let s = h / 6.0;
        for (i, a) in x.iter_mut().enumerate() {
            *a += s * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }

        form.populations(&x, &mut pops);
        l.rates(&pops, &mut rate_next);
        for ((acc, a), b) in integral.iter_mut().zip(&rate_now).zip(&rate_next) {
            *acc += 0.5 * h * (a + b);
        }
        std::mem::swap(&mut rate_now, &mut rate_next);

        let t = step as f64 * h;
        if step % snap_every == 0 || step == steps {
            check_populations(&pops, t)?;
            snapshot(&mut sol, t, &x, &pops, &rate_now);
        }
        if step % check_every == 0 || step == steps {
            check_positivity(&form.blocks(&x), t)?;
        }
    }

    sol.expected.counts = integral;
    sol.final_state = DensityMatrix(form.to_dense(&x));
    Ok(sol)
}

fn check_populations(pops: &[f64], time: f64) -> Result<()> {
    let mut trace = 0.0;
    for (b, &p) in pops.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::IntegrationFailure { time, reason: "non-finite density matrix".into() });
        }
        if p < -NEGATIVITY_TOL {
            return Err(Error::IntegrationFailure {
                time,
                reason: format!("negative population {p:e} on basis state {b}"),
            });
        }
        trace += p;
    }
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(Error::IntegrationFailure { time, reason: format!("trace drifted to {trace}") });
    }
    Ok(())
}

fn check_positivity(blocks: &[DenseMatrix], time: f64) -> Result<()> {
    for m in blocks {
        let herm = m.hermiticity_defect();
        if herm > 1e-10 {
            return Err(Error::IntegrationFailure { time, reason: format!("Hermiticity defect {herm:e}") });
        }
        let e = m.hermitian_eigenvalues()[0];
        if e < -NEGATIVITY_TOL {
            return Err(Error::IntegrationFailure { time, reason: format!("negative eigenvalue {e:e}") });
        }
    }
    Ok(())
}

/// Bin-count cross-correlation of two distinct channels in a stationary state.
///
/// For counts `N_a`, `N_b` in a window of width `w`,
/// `E[N_a N_b] = int_0^w (w - tau) (G_ab(tau) + G_ba(tau)) dtau` with
/// `G_ab(tau) = Tr(J_b e^{L tau} J_a rho)`, and the returned value is
/// `E[N_a N_b] / (w^2 r_a r_b)`.
pub fn stationary_bin_g2(
    l: &Lindbladian,
    rho: &DensityMatrix,
    channel_a: usize,
    channel_b: usize,
    bin_width: f64,
    dt: f64,
) -> Result<f64> {
    if channel_a == channel_b {
        return Err(Error::InvalidConfig("g2 needs two distinct channels".into()));
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidConfig(format!("bin width must be > 0, got {bin_width}")));
    }
    let (ra, rb) = (l.rate(channel_a, rho)?, l.rate(channel_b, rho)?);
    if ra <= 0.0 || rb <= 0.0 {
        return Err(Error::InvalidConfig("g2 undefined for a channel with zero rate".into()));
    }
    let config = MasterConfig { horizon: bin_width, dt, snapshot_interval: dt, ..MasterConfig::default() };
    let mut weighted = 0.0;
    for (first, second, r_first) in [(channel_a, channel_b, ra), (channel_b, channel_a, rb)] {
        let mut post = l.jump(first, rho)?;
        post.scale(C64::new(1.0 / r_first, 0.0));
        let sol = integrate_from(l, DensityMatrix::new(post)?, &config)?;
        let k = l.channel_index(second)?;
        let dens: Vec<f64> = sol.times.iter().zip(&sol.rates).map(|(t, r)| (bin_width - t) * r[k]).collect();
        let trap: f64 = sol.times.windows(2).zip(dens.windows(2)).map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0] + d[1])).sum();
        weighted += r_first * trap;
    }
    Ok(weighted / (bin_width * bin_width * ra * rb))
}
