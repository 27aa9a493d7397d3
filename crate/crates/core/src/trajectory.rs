//! Quantum-jump trajectories with an input (pump) channel and output detectors.
//!
//! Between clicks the state follows the non-Hermitian generator
//! `H_eff = H - (i/2) sum_j L_j^dagger L_j`. Two unravellings are provided:
//!
//! * [`Method::WaitingTime`]: evolve without renormalizing and fire a jump
//!   when the squared norm crosses a uniform random threshold; the jump time
//!   is located by bisection.
//! * [`Method::FixedStep`]: first-order Monte-Carlo wave-function steps with
//!   jump probability `<L^dagger L> dt` and at most one jump per step.
//!
//! Every `L_j` is a single-site ladder operator, so `L_j^dagger L_j` is
//! diagonal and both `H` and `H_eff` preserve excitation number. The drift
//! kernel exploits this: a state between jumps lives in one excitation
//! sector, and [`Generator`] stores the nonzero couplings grouped by sector.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{jump_rate, apply_hamiltonian, LadderKind, StateVector};
use crate::model::{build_hamiltonian, HamiltonianOp, LatticeSpec};

/// One Lindblad channel `gamma * A` with `A` a ladder operator on `site`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub channel_id: usize,
    pub site: usize,
    pub kind: LadderKind,
    pub gamma: f64,
}

impl DetectorSpec {
    pub fn is_input(&self) -> bool {
        self.kind == LadderKind::Raise
    }
}

/// Input channel first, then the output detectors in presentation order.
/// Channel ids are the qubit labels.
pub fn detector_channels(spec: &LatticeSpec) -> Vec<DetectorSpec> {
    let mut out = vec![DetectorSpec {
        channel_id: spec.input_node,
        site: spec.input_node,
        kind: LadderKind::Raise,
        gamma: spec.gamma_in,
    }];
    out.extend(spec.detector_nodes.iter().map(|&s| DetectorSpec {
        channel_id: s,
        site: s,
        kind: LadderKind::Lower,
        gamma: spec.gamma_out,
    }));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WaitingTime,
    FixedStep,
}

impl Method {
    pub fn default_dt(self) -> f64 {
        match self {
            Method::WaitingTime => 0.01,
            Method::FixedStep => 0.005,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waiting_time" | "waiting-time" => Ok(Method::WaitingTime),
            "fixed_step" | "fixed-step" => Ok(Method::FixedStep),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?}, expected waiting_time or fixed_step"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub horizon: f64,
    pub method: Method,
    /// Fixed step, or the RK4 drift substep for the waiting-time method.
    pub dt: f64,
    pub jump_time_tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::new(Method::WaitingTime)
    }
}

impl IntegratorConfig {
    pub fn new(method: Method) -> Self {
        Self { horizon: 1000.0, method, dt: method.default_dt(), jump_time_tolerance: 1e-6 }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.jump_time_tolerance.is_finite() && self.jump_time_tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "jump_time_tolerance must be > 0, got {}",
                self.jump_time_tolerance
            )));
        }
        Ok(())
    }
}

/// Identifies an independent random stream: `(master seed, phi index, trajectory index)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub phi_index: u32,
    pub trajectory: u32,
}

impl StreamId {
    pub fn new(master_seed: u64, phi_index: u32, trajectory: u32) -> Self {
        Self { master_seed, phi_index, trajectory }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((self.phi_index as u64) << 32) | self.trajectory as u64);
        rng
    }
}

impl From<u64> for StreamId {
    fn from(master_seed: u64) -> Self {
        Self { master_seed, phi_index: 0, trajectory: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub events: Vec<JumpEvent>,
    pub stream: StreamId,
    pub phi: f64,
    pub config: IntegratorConfig,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn count(&self, channel_id: usize) -> u64 {
        self.events.iter().filter(|e| e.channel_id == channel_id).count() as u64
    }
}

/// Hooks into a running trajectory. Used by tests and diagnostics; the
/// default no-op implementation costs nothing.
pub trait Observer {
    /// If set, step boundaries are aligned to multiples of this interval and
    /// [`Observer::on_sample`] is called at each of them (including t = 0).
    fn sample_interval(&self) -> Option<f64> {
        None
    }

    fn on_sample(&mut self, _time: f64, _state: &StateVector) {}

    /// Called after each drift step with the current squared norm (unnormalized
    /// for the waiting-time method).
    fn on_step(&mut self, _time: f64, _norm_sqr: f64) {}

    /// Called after each jump with the post-jump normalized state.
    fn on_jump(&mut self, _event: &JumpEvent, _state: &StateVector) {}

    fn wants_states(&self) -> bool {
        false
    }
}

impl Observer for () {}

/// Time derivative of the normalized conditional state between jumps,
/// `-iH psi - 1/2 sum_j (L_j^dagger L_j - <L_j^dagger L_j>) psi`.
pub fn effective_drift(
    h: &HamiltonianOp,
    detectors: &[DetectorSpec],
    psi: &StateVector,
) -> Result<StateVector> {
    let hpsi = apply_hamiltonian(h, psi)?;
    let norm = psi.norm_sqr();
    let mut out = StateVector::zeros(psi.n_qubits());
    let minus_i = C64::new(0.0, -1.0);
    for (o, a) in out.amplitudes_mut().iter_mut().zip(hpsi.amplitudes()) {
        *o = minus_i * a;
    }
    for d in detectors {
        let bit = crate::hilbert::site_bit(d.site, psi.n_qubits())?;
        let mean = jump_rate(d.kind, d.site, d.gamma, psi)? / norm;
        let g2 = d.gamma * d.gamma;
        for (b, (o, a)) in out.amplitudes_mut().iter_mut().zip(psi.amplitudes()).enumerate() {
            let diag = if d.kind.active_on((b >> bit) & 1) { g2 } else { 0.0 };
            *o -= 0.5 * (diag - mean) * a;
        }
    }
    Ok(out)
}

/// Draws index `j` with probability `rates[j] / sum(rates)`.
pub fn sample_jump_channel<R: Rng + ?Sized>(rates: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = rates.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::DarkState);
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &r) in rates.iter().enumerate() {
        if r > 0.0 {
            acc += r;
            last_positive = j;
            if u < acc {
                return Ok(j);
            }
        }
    }
    Ok(last_positive)
}

#[derive(Clone, Copy, Debug)]
struct Coupling {
    a: u32,
    b: u32,
    /// `-i H[a, b]`
    fwd: C64,
    /// `-i H[b, a]`
    bwd: C64,
}

/// Transitions of one channel out of a sector: `(local index, local index in target sector)`.
#[derive(Clone, Debug, Default)]
struct ChannelMap {
    moves: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
struct Sector {
    basis: Vec<u32>,
    /// `-i <b|H_eff|b>` per local index.
    diag: Vec<C64>,
    couplings: Vec<Coupling>,
    channels: Vec<ChannelMap>,
}

impl Sector {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `y = -i H_eff x` on this sector.
    #[inline]
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = d * xi;
        }
        for c in &self.couplings {
            let (a, b) = (c.a as usize, c.b as usize);
            y[a] += c.fwd * x[b];
            y[b] += c.bwd * x[a];
        }
    }
}

/// `-i H_eff` compiled into per-sector sparse blocks.
#[derive(Clone, Debug)]
pub struct Generator {
    n_qubits: usize,
    channels: Vec<DetectorSpec>,
    sectors: Vec<Sector>,
}

impl Generator {
    pub fn new(h: &HamiltonianOp, channels: &[DetectorSpec]) -> Result<Self> {
        let n = h.n_qubits;
        let dim = h.dim();
        let mut bits = Vec::with_capacity(channels.len());
        for d in channels {
            bits.push(crate::hilbert::site_bit(d.site, n)?);
        }
        let mut basis: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
        let mut local = vec![0u32; dim];
        for (b, slot) in local.iter_mut().enumerate() {
            let k = b.count_ones() as usize;
            *slot = basis[k].len() as u32;
            basis[k].push(b as u32);
        }
        let minus_i = C64::new(0.0, -1.0);
        let mut sectors = Vec::with_capacity(n + 1);
        for (k, states) in basis.iter().enumerate() {
            let diag = states
                .iter()
                .map(|&b| {
                    let b = b as usize;
                    let decay: f64 = channels
                        .iter()
                        .zip(&bits)
                        .filter(|(d, &bit)| d.kind.active_on((b >> bit) & 1))
                        .map(|(d, _)| d.gamma * d.gamma)
                        .sum();
                    minus_i * C64::new(h.diagonal_element(b), -0.5 * decay)
                })
                .collect();
            let mut couplings = Vec::new();
            for term in &h.hop_terms {
                for &b in states {
                    let b = b as usize;
                    // record each pair once, from the side where s+_i s-_j acts
                    if (b >> term.i) & 1 == 0 && (b >> term.j) & 1 == 1 {
                        let (partner, amp) = term.act(b).expect("hop acts on this state");
                        debug_assert_eq!(partner.count_ones() as usize, k);
                        couplings.push(Coupling {
                            a: local[partner],
                            b: local[b],
                            fwd: minus_i * amp,
                            bwd: minus_i * amp.conj(),
                        });
                    }
                }
            }
            let channel_maps = channels
                .iter()
                .zip(&bits)
                .map(|(d, &bit)| ChannelMap {
                    moves: states
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| d.kind.active_on((b as usize >> bit) & 1))
                        .map(|(i, &b)| (i as u32, local[b as usize ^ (1 << bit)]))
                        .collect(),
                })
                .collect();
            sectors.push(Sector { basis: states.clone(), diag, couplings, channels: channel_maps });
        }
        Ok(Self { n_qubits: n, channels: channels.to_vec(), sectors })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn channels(&self) -> &[DetectorSpec] {
        &self.channels
    }

    fn max_sector_dim(&self) -> usize {
        self.sectors.iter().map(Sector::dim).max().unwrap_or(1)
    }

    /// `-i H_eff psi` on a full state vector.
    pub fn apply_full(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: 1 << self.n_qubits, found: psi.dim() });
        }
        let mut out = StateVector::zeros(self.n_qubits);
        for sector in &self.sectors {
            let x: Vec<C64> = sector.basis.iter().map(|&b| psi.amplitudes()[b as usize]).collect();
            let mut y = vec![C64::new(0.0, 0.0); x.len()];
            sector.apply(&x, &mut y);
            for (&b, v) in sector.basis.iter().zip(y) {
                out.amplitudes_mut()[b as usize] = v;
            }
        }
        Ok(out)
    }

    fn scatter(&self, sector: usize, w: &[C64]) -> StateVector {
        let mut psi = StateVector::zeros(self.n_qubits);
        for (&b, a) in self.sectors[sector].basis.iter().zip(w) {
            psi.amplitudes_mut()[b as usize] = *a;
        }
        psi
    }

    /// Unnormalized rate `gamma_j^2 <w|A_j^dagger A_j|w>` per channel.
    fn rates(&self, sector: usize, w: &[C64], out: &mut [f64]) {
        for ((r, map), d) in out.iter_mut().zip(&self.sectors[sector].channels).zip(&self.channels) {
            let g2 = d.gamma * d.gamma;
            *r = if g2 == 0.0 {
                0.0
            } else {
                g2 * map.moves.iter().map(|&(s, _)| w[s as usize].norm_sqr()).sum::<f64>()
            };
        }
    }

    /// Applies channel `j`, returning the new sector. `out` is overwritten.
    fn jump(&self, sector: usize, j: usize, w: &[C64], out: &mut Vec<C64>) -> usize {
        let target = match self.channels[j].kind {
            LadderKind::Raise => sector + 1,
            LadderKind::Lower => sector - 1,
        };
        out.clear();
        out.resize(self.sectors[target].dim(), C64::new(0.0, 0.0));
        for &(s, t) in &self.sectors[sector].channels[j].moves {
            out[t as usize] = w[s as usize];
        }
        target
    }
}

struct Rk4Workspace {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Workspace {
    fn new(cap: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); cap];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// Classical RK4 step of `dx/dt = -i H_eff x` of length `h` from `x` into `out`.
    fn step(&mut self, sector: &Sector, x: &[C64], h: f64, out: &mut [C64]) {
        let d = sector.dim();
        let (k1, k2, k3, k4, tmp) = (
            &mut self.k1[..d],
            &mut self.k2[..d],
            &mut self.k3[..d],
            &mut self.k4[..d],
            &mut self.tmp[..d],
        );
        sector.apply(x, k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        sector.apply(tmp, k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        sector.apply(tmp, k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        sector.apply(tmp, k4);
        let s = h / 6.0;
        for i in 0..d {
            out[i] = x[i] + s * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

fn norm_sqr(w: &[C64]) -> f64 {
    w.iter().map(|a| a.norm_sqr()).sum()
}

fn normalize(w: &mut [C64]) {
    let n = norm_sqr(w).sqrt();
    if n > 0.0 {
        let inv = 1.0 / n;
        w.iter_mut().for_each(|a| *a *= inv);
    }
}

/// The phase carried by the first phased edge, or 0.
pub fn control_phase(spec: &LatticeSpec) -> f64 {
    spec.edges.iter().map(|e| e.phi).find(|&p| p != 0.0).unwrap_or(0.0)
}

/// A compiled lattice ready to produce trajectories.
#[derive(Clone, Debug)]
pub struct Simulator {
    generator: Generator,
    config: IntegratorConfig,
    phi: f64,
}

impl Simulator {
    pub fn new(spec: &LatticeSpec, config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        let h = build_hamiltonian(spec)?;
        let generator = Generator::new(&h, &detector_channels(spec))?;
        Ok(Self { generator, config, phi: control_phase(spec) })
    }

    /// Overrides the phase label stored in records.
    pub fn with_phi_label(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn channels(&self) -> &[DetectorSpec] {
        self.generator.channels()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn run(&self, stream: StreamId) -> Result<TrajectoryRecord> {
        self.run_observed(stream, &mut ()).map(|(rec, _)| rec)
    }

    /// Runs a trajectory and also returns the normalized final state.
    pub fn run_with_final_state(&self, stream: StreamId) -> Result<(TrajectoryRecord, StateVector)> {
        self.run_observed(stream, &mut ())
    }

    pub fn run_observed<O: Observer + ?Sized>(
        &self,
        stream: StreamId,
        observer: &mut O,
    ) -> Result<(TrajectoryRecord, StateVector)> {
        let mut rng = stream.rng();
        let (events, sector, mut w) = match self.config.method {
            Method::WaitingTime => self.waiting_time(&mut rng, observer)?,
            Method::FixedStep => self.fixed_step(&mut rng, observer)?,
        };
        normalize(&mut w);
        let record = TrajectoryRecord { events, stream, phi: self.phi, config: self.config };
        Ok((record, self.generator.scatter(sector, &w)))
    }

    fn waiting_time<O: Observer + ?Sized>(
        &self,
        rng: &mut ChaCha8Rng,
        observer: &mut O,
    ) -> Result<(Vec<JumpEvent>, usize, Vec<C64>)> {
        let gen = &self.generator;
        let cfg = &self.config;
        let horizon = cfg.horizon;
        let sample = observer.sample_interval().filter(|s| s.is_finite() && *s > 0.0);
        let mut ws = Rk4Workspace::new(gen.max_sector_dim());
        let mut sector = 0usize;
        let mut w = vec![C64::new(1.0, 0.0)];
        let mut next = Vec::with_capacity(gen.max_sector_dim());
        let mut probe = vec![C64::new(0.0, 0.0); gen.max_sector_dim()];
        let mut rates = vec![0.0; gen.channels.len()];
        let mut events = Vec::new();
        let mut t = 0.0f64;
        let mut threshold = 1.0 - rng.random::<f64>();
        let mut next_sample = 0.0f64;
        let mut sample_index = 0u64;

        loop {
            if let Some(dt_s) = sample {
                if t >= next_sample - 1e-12 && next_sample <= horizon + 1e-12 {
                    let mut psi = gen.scatter(sector, &w);
                    psi.normalize();
                    observer.on_sample(next_sample, &psi);
                    sample_index += 1;
                    next_sample = sample_index as f64 * dt_s;
                }
            }
            let remaining = horizon - t;
            if remaining <= 1e-12 * horizon.max(1.0) {
                break;
            }
            let mut h = cfg.dt.min(remaining);
            if sample.is_some() {
                h = h.min(next_sample - t);
            }
            let sec = &gen.sectors[sector];
            let d = sec.dim();
            next.resize(d, C64::new(0.0, 0.0));
            ws.step(sec, &w, h, &mut next[..d]);
            let n_new = norm_sqr(&next[..d]);
            if n_new > threshold {
                std::mem::swap(&mut w, &mut next);
                t = if h == remaining { horizon } else { t + h };
                observer.on_step(t, n_new);
                continue;
            }

            // The norm crosses the threshold inside (0, h]: bisect for the crossing.
            let (mut lo, mut hi) = (0.0f64, h);
            while hi - lo > cfg.jump_time_tolerance {
                let mid = 0.5 * (lo + hi);
                ws.step(sec, &w, mid, &mut probe[..d]);
                if norm_sqr(&probe[..d]) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            ws.step(sec, &w, hi, &mut next[..d]);
            t += hi;
            observer.on_step(t, norm_sqr(&next[..d]));

            gen.rates(sector, &next[..d], &mut rates);
            let j = sample_jump_channel(&rates, rng)?;
            sector = gen.jump(sector, j, &next[..d], &mut w);
            normalize(&mut w);
            let event = JumpEvent { time: t, channel_id: gen.channels[j].channel_id };
            events.push(event);
            if observer.wants_states() {
                observer.on_jump(&event, &gen.scatter(sector, &w));
            }
            threshold = 1.0 - rng.random::<f64>();
        }
        Ok((events, sector, w))
    }

    fn fixed_step<O: Observer + ?Sized>(
        &self,
        rng: &mut ChaCha8Rng,
        observer: &mut O,
    ) -> Result<(Vec<JumpEvent>, usize, Vec<C64>)> {
        let gen = &self.generator;
        let cfg = &self.config;
        let horizon = cfg.horizon;
        let sample = observer.sample_interval().filter(|s| s.is_finite() && *s > 0.0);
        let mut ws = Rk4Workspace::new(gen.max_sector_dim());
        let mut sector = 0usize;
        let mut w = vec![C64::new(1.0, 0.0)];
        let mut next = Vec::with_capacity(gen.max_sector_dim());
        let mut rates = vec![0.0; gen.channels.len()];
        let mut events = Vec::new();
        let mut t = 0.0f64;
        let mut next_sample = 0.0f64;
        let mut sample_index = 0u64;

        loop {
            if let Some(dt_s) = sample {
                if t >= next_sample - 1e-12 && next_sample <= horizon + 1e-12 {
                    observer.on_sample(next_sample, &gen.scatter(sector, &w));
                    sample_index += 1;
                    next_sample = sample_index as f64 * dt_s;
                }
            }
            let remaining = horizon - t;
            if remaining <= 1e-12 * horizon.max(1.0) {
                break;
            }
            let mut h = cfg.dt.min(remaining);
            if sample.is_some() {
                h = h.min(next_sample - t);
            }
            let t_end = if h == remaining { horizon } else { t + h };

            gen.rates(sector, &w, &mut rates);
            let total: f64 = rates.iter().sum::<f64>() * h;
            if total > 0.1 {
                return Err(Error::StepTooCoarse { probability: total, time: t });
            }
            if rng.random::<f64>() < total {
                let j = sample_jump_channel(&rates, rng)?;
                sector = gen.jump(sector, j, &w, &mut next);
                std::mem::swap(&mut w, &mut next);
                normalize(&mut w);
                let event = JumpEvent { time: t + 0.5 * h, channel_id: gen.channels[j].channel_id };
                events.push(event);
                if observer.wants_states() {
                    observer.on_jump(&event, &gen.scatter(sector, &w));
                }
            } else {
                let sec = &gen.sectors[sector];
                let d = sec.dim();
                next.resize(d, C64::new(0.0, 0.0));
                ws.step(sec, &w, h, &mut next[..d]);
                std::mem::swap(&mut w, &mut next);
                normalize(&mut w);
            }
            t = t_end;
            observer.on_step(t, norm_sqr(&w));
        }
        Ok((events, sector, w))
    }
}

/// Convenience wrapper: compile `spec` and run one trajectory.
pub fn evolve_trajectory(
    spec: &LatticeSpec,
    config: IntegratorConfig,
    stream: impl Into<StreamId>,
) -> Result<TrajectoryRecord> {
    Simulator::new(spec, config)?.run(stream.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::model::{paper_lattice, Edge};
    use crate::oracle::{integrate_master, MasterConfig};
    use crate::test_util::{kron_site, pauli_reference_hamiltonian, random_spec, random_state, sigma_minus, sigma_plus};

    fn single_qubit(gamma_in: f64) -> LatticeSpec {
        LatticeSpec { n_qubits: 1, edges: vec![], input_node: 1, detector_nodes: vec![], gamma_in, gamma_out: 0.0 }
    }

    /// Dense `-i H_eff` from Kronecker products.
    fn reference_generator(spec: &LatticeSpec) -> DenseMatrix {
        let n = spec.n_qubits;
        let mut heff = pauli_reference_hamiltonian(spec);
        let mut ops = vec![(kron_site(&sigma_plus(), spec.input_node - 1, n), spec.gamma_in)];
        for &d in &spec.detector_nodes {
            ops.push((kron_site(&sigma_minus(), d - 1, n), spec.gamma_out));
        }
        for (a, g) in ops {
            heff.add_scaled(C64::new(0.0, -0.5 * g * g), &a.adjoint().matmul(&a));
        }
        heff.scale(C64::new(0.0, -1.0));
        heff
    }

    #[test]
    fn drift_without_dissipation_is_schrodinger() {
        let psi = StateVector::from_amplitudes(1, vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        let spec = single_qubit(0.0);
        let h = build_hamiltonian(&spec).unwrap();
        let d = effective_drift(&h, &detector_channels(&spec), &psi).unwrap();
        assert!((d.amplitudes()[1] - C64::new(0.0, -0.5)).norm() < 1e-15);
        assert_eq!(d.amplitudes()[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn drift_preserves_norm_to_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 2..=6 {
            let spec = random_spec(&mut rng, n);
            let h = build_hamiltonian(&spec).unwrap();
            let psi = random_state(&mut rng, n);
            let d = effective_drift(&h, &detector_channels(&spec), &psi).unwrap();
            assert!(psi.inner(&d).unwrap().re.abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn generator_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for n in 2..=6 {
            let spec = random_spec(&mut rng, n);
            let channels = detector_channels(&spec);
            let h = build_hamiltonian(&spec).unwrap();
            let gen = Generator::new(&h, &channels).unwrap();
            let psi = random_state(&mut rng, n);
            let got = gen.apply_full(&psi).unwrap();
            let want = reference_generator(&spec).matvec(psi.amplitudes());
            for (a, b) in got.amplitudes().iter().zip(&want) {
                assert!((a - b).norm() < 1e-12, "n = {n}");
            }
            // the normalized drift adds back the mean decay
            let drift = effective_drift(&h, &channels, &psi).unwrap();
            let mean: f64 =
                channels.iter().map(|d| jump_rate(d.kind, d.site, d.gamma, &psi).unwrap()).sum();
            for ((g, p), e) in got.amplitudes().iter().zip(psi.amplitudes()).zip(drift.amplitudes()) {
                assert!((g + 0.5 * mean * p - e).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            assert_eq!(sample_jump_channel(&[0.0, 1.0, 0.0], &mut rng).unwrap(), 1);
        }
        let n = 10_000;
        let mut freq = [0usize; 4];
        for _ in 0..n {
            freq[sample_jump_channel(&[1.0, 1.0, 1.0, 1.0], &mut rng).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for f in freq {
            assert!((f as f64 - 2500.0).abs() < 3.0 * sigma, "{freq:?}");
        }
        let hits = (0..n).filter(|_| sample_jump_channel(&[3.0, 1.0], &mut rng).unwrap() == 0).count();
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((hits as f64 - 7500.0).abs() < 3.0 * sigma, "{hits}");
        assert!(matches!(sample_jump_channel(&[0.0, 0.0], &mut rng), Err(Error::DarkState)));
    }

    #[test]
    fn no_pump_means_no_clicks() {
        for method in [Method::WaitingTime, Method::FixedStep] {
            let mut spec = paper_lattice(0.3);
            spec.gamma_in = 0.0;
            let sim = Simulator::new(&spec, IntegratorConfig::new(method).with_horizon(20.0)).unwrap();
            let (rec, psi) = sim.run_with_final_state(StreamId::new(1, 0, 0)).unwrap();
            assert!(rec.events.is_empty());
            assert!((psi.amplitudes()[0].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pumped_qubit_waits_exponentially() {
        for method in [Method::WaitingTime, Method::FixedStep] {
            let sim = Simulator::new(&single_qubit(1.0), IntegratorConfig::new(method).with_horizon(40.0)).unwrap();
            let mut times = Vec::new();
            for k in 0..1000 {
                let rec = sim.run(StreamId::new(5, 0, k)).unwrap();
                // once excited the qubit is dark to the pump
                assert_eq!(rec.events.len(), 1);
                times.push(rec.events[0].time);
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            assert!((mean - 1.0).abs() < 0.1, "{method:?}: mean {mean}");
            let below = times.iter().filter(|&&t| t < std::f64::consts::LN_2).count() as f64;
            assert!((below - 500.0).abs() < 3.0 * 250f64.sqrt(), "{method:?}: {below}");
        }
    }

    #[derive(Default)]
    struct Bookkeeper {
        norms: Vec<(f64, f64)>,
        jumps: Vec<(JumpEvent, f64, f64)>,
    }

    impl Observer for Bookkeeper {
        fn on_step(&mut self, time: f64, norm_sqr: f64) {
            self.norms.push((time, norm_sqr));
        }

        fn on_jump(&mut self, event: &JumpEvent, state: &StateVector) {
            let (mean, var) = state.excitation_moments();
            assert!(var <= 1e-16);
            self.jumps.push((*event, state.norm_sqr(), mean));
        }

        fn wants_states(&self) -> bool {
            true
        }
    }

    #[test]
    fn norm_and_excitation_bookkeeping() {
        let spec = paper_lattice(0.75 * std::f64::consts::PI);
        for method in [Method::WaitingTime, Method::FixedStep] {
            let sim = Simulator::new(&spec, IntegratorConfig::new(method).with_horizon(30.0)).unwrap();
            let mut obs = Bookkeeper::default();
            let (rec, psi) = sim.run_observed(StreamId::new(9, 0, 0), &mut obs).unwrap();
            assert!(!rec.events.is_empty());
            let mut excitations = 0i64;
            for (event, norm, mean) in &obs.jumps {
                assert!((norm - 1.0).abs() < 1e-12);
                excitations += if event.channel_id == spec.input_node { 1 } else { -1 };
                assert!((mean - excitations as f64).abs() < 1e-12);
            }
            let (mean, var) = psi.excitation_moments();
            assert!((mean - excitations as f64).abs() < 1e-12 && var <= 1e-16);
            assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);

            if method == Method::WaitingTime {
                // between jumps the unnormalized norm only decreases
                let jump_times: Vec<f64> = rec.events.iter().map(|e| e.time).collect();
                for pair in obs.norms.windows(2) {
                    let ((_, a), (t, b)) = (pair[0], pair[1]);
                    if !jump_times.contains(&pair[0].0) {
                        assert!(b <= a + 1e-15, "norm grew at t = {t}");
                    }
                    assert!(b > 0.0);
                }
            } else {
                assert!(obs.norms.iter().all(|(_, n)| (n - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let spec = paper_lattice(0.0);
        let sim = Simulator::new(&spec, IntegratorConfig::default().with_horizon(20.0)).unwrap();
        let a = sim.run(StreamId::new(3, 2, 7)).unwrap();
        let b = sim.run(StreamId::new(3, 2, 7)).unwrap();
        assert_eq!(a, b);
        let c = sim.run(StreamId::new(3, 2, 8)).unwrap();
        let d = sim.run(StreamId::new(3, 3, 7)).unwrap();
        assert_ne!(a.events, c.events);
        assert_ne!(a.events, d.events);
    }

    #[test]
    fn coarse_fixed_step_is_rejected() {
        let cfg = IntegratorConfig::new(Method::FixedStep).with_dt(0.2).with_horizon(5.0);
        let err = evolve_trajectory(&single_qubit(1.0), cfg, 0).unwrap_err();
        assert!(matches!(err, Error::StepTooCoarse { .. }), "{err}");
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = single_qubit(1.0);
        assert!(Simulator::new(&spec, IntegratorConfig::default().with_dt(0.0)).is_err());
        assert!(Simulator::new(&spec, IntegratorConfig::default().with_horizon(-1.0)).is_err());
        assert_eq!("fixed-step".parse::<Method>().unwrap(), Method::FixedStep);
        assert!("euler".parse::<Method>().is_err());
    }

    struct SzSampler {
        interval: f64,
        sums: Vec<Vec<f64>>,
        squares: Vec<Vec<f64>>,
    }

    impl Observer for SzSampler {
        fn sample_interval(&self) -> Option<f64> {
            Some(self.interval)
        }

        fn on_sample(&mut self, time: f64, state: &StateVector) {
            let k = (time / self.interval).round() as usize;
            for site in 1..=state.n_qubits() {
                let s = state.sz_expectation(site).unwrap();
                self.sums[k][site - 1] += s;
                self.squares[k][site - 1] += s * s;
            }
        }
    }

    #[test]
    fn ensemble_average_tracks_master_equation() {
        let spec = LatticeSpec {
            n_qubits: 3,
            edges: vec![Edge::new(1, 2, 0.5, 0.4), Edge::new(2, 3, 0.5, 0.0)],
            input_node: 1,
            detector_nodes: vec![3],
            gamma_in: 1.0,
            gamma_out: 1.0,
        };
        let horizon = 10.0;
        let exact =
            integrate_master(&spec, &MasterConfig { horizon, dt: 0.01, ..MasterConfig::default() }).unwrap();
        let m = 2000;
        for method in [Method::WaitingTime, Method::FixedStep] {
            let sim = Simulator::new(&spec, IntegratorConfig::new(method).with_horizon(horizon)).unwrap();
            let slots = exact.times.len();
            let mut obs = SzSampler { interval: 0.5, sums: vec![vec![0.0; 3]; slots], squares: vec![vec![0.0; 3]; slots] };
            for k in 0..m {
                sim.run_observed(StreamId::new(17, 0, k), &mut obs).unwrap();
            }
            for (k, t) in exact.times.iter().enumerate().skip(1) {
                for q in 0..3 {
                    let mean = obs.sums[k][q] / m as f64;
                    let var = obs.squares[k][q] / m as f64 - mean * mean;
                    let se = (var / m as f64).sqrt().max(1e-3);
                    let want = exact.sz[k][q];
                    assert!((mean - want).abs() < 4.0 * se, "{method:?} t = {t} q = {q}: {mean} vs {want} (se {se})");
                }
            }
        }
    }

    #[test]
    fn unravellings_agree_on_the_lattice() {
        let spec = paper_lattice(0.75 * std::f64::consts::PI);
        let channels = detector_channels(&spec);
        let m = 500u32;
        let mut stats = Vec::new();
        for method in [Method::WaitingTime, Method::FixedStep] {
            let sim = Simulator::new(&spec, IntegratorConfig::new(method).with_horizon(100.0)).unwrap();
            let mut sum = vec![0.0; channels.len()];
            let mut sq = vec![0.0; channels.len()];
            for k in 0..m {
                let rec = sim.run(StreamId::new(29, 0, k)).unwrap();
                for (j, ch) in channels.iter().enumerate() {
                    let c = rec.count(ch.channel_id) as f64;
                    sum[j] += c;
                    sq[j] += c * c;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
            let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, mu)| q / m as f64 - mu * mu).collect();
            stats.push((mean, var));
        }
        let ((ma, va), (mb, vb)) = (&stats[0], &stats[1]);
        for j in 0..channels.len() {
            let se = ((va[j] + vb[j]) / m as f64).sqrt();
            assert!((ma[j] - mb[j]).abs() < 3.0 * se, "channel {}: {} vs {} (se {se})", channels[j].channel_id, ma[j], mb[j]);
        }
    }
}
