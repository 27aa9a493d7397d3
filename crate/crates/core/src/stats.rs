//! Click-count aggregation, binned time series, the cross-correlation
//! `g2 = 1 + <dNa dNb> / (<Na><Nb>)` and the phi -> -phi mirror residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryRecord;

/// Detector relabeling under phi -> -phi on the 3x3 lattice (reflection about the 1-5-9 axis).
pub const PAPER_MIRROR: [(usize, usize); 5] = [(3, 7), (7, 3), (6, 8), (8, 6), (9, 9)];

/// Per-detector click totals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub detectors: Vec<usize>,
    pub totals: Vec<u64>,
}

impl CountRecord {
    pub fn zeros(detectors: &[usize]) -> Self {
        Self { detectors: detectors.to_vec(), totals: vec![0; detectors.len()] }
    }

    pub fn from_record(record: &TrajectoryRecord, detectors: &[usize]) -> Self {
        let mut out = Self::zeros(detectors);
        for e in &record.events {
            if let Some(k) = detectors.iter().position(|&d| d == e.channel_id) {
                out.totals[k] += 1;
            }
        }
        out
    }

    pub fn get(&self, detector: usize) -> Option<u64> {
        self.detectors.iter().position(|&d| d == detector).map(|k| self.totals[k])
    }

    pub fn sum(&self) -> u64 {
        self.totals.iter().sum()
    }

    /// Elementwise sum; both sides must list the same detectors.
    pub fn merge(mut self, other: &CountRecord) -> Result<Self> {
        if self.detectors != other.detectors {
            return Err(Error::MixedRecords(format!(
                "detector lists differ: {:?} vs {:?}",
                self.detectors, other.detectors
            )));
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        Ok(self)
    }
}

/// Sums detector clicks over records that share phase, horizon and integrator
/// settings. Events on channels not listed (the input pump) are ignored.
pub fn aggregate_counts<'a, I>(records: I, detectors: &[usize]) -> Result<CountRecord>
where
    I: IntoIterator<Item = &'a TrajectoryRecord>,
{
    let mut out = CountRecord::zeros(detectors);
    let mut first: Option<&TrajectoryRecord> = None;
    for rec in records {
        match first {
            None => first = Some(rec),
            Some(f) => {
                if f.phi.to_bits() != rec.phi.to_bits() || f.config != rec.config {
                    return Err(Error::MixedRecords(format!(
                        "phi {} / {:?} vs phi {} / {:?}",
                        f.phi, f.config, rec.phi, rec.config
                    )));
                }
            }
        }
        for e in &rec.events {
            if let Some(k) = detectors.iter().position(|&d| d == e.channel_id) {
                out.totals[k] += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl BinnedSeries {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }
}

/// Counts of one detector in bins `[k w, (k+1) w)` covering `[0, T]`; a final
/// partial bin is kept and an event exactly at `T` lands in the last bin.
pub fn bin_events(record: &TrajectoryRecord, detector: usize, bin_width: f64) -> Result<BinnedSeries> {
    let horizon = record.horizon();
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidConfig(format!("bin width must be > 0, got {bin_width}")));
    }
    if bin_width > horizon {
        return Err(Error::InvalidConfig(format!(
            "bin width {bin_width} exceeds the horizon {horizon}"
        )));
    }
    let n_bins = ((horizon / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0u64; n_bins];
    for e in record.events.iter().filter(|e| e.channel_id == detector) {
        let k = ((e.time / bin_width).floor() as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(BinnedSeries { bin_width, counts })
}

/// Pooled moments of two click streams over a set of bins.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    a: f64,
    b: f64,
    ab: f64,
}

impl Moments {
    fn add(&mut self, a: &BinnedSeries, b: &BinnedSeries) {
        for (&x, &y) in a.counts.iter().zip(&b.counts) {
            let (x, y) = (x as f64, y as f64);
            self.n += 1.0;
            self.a += x;
            self.b += y;
            self.ab += x * y;
        }
    }

    fn minus(&self, other: &Moments) -> Moments {
        Moments { n: self.n - other.n, a: self.a - other.a, b: self.b - other.b, ab: self.ab - other.ab }
    }

    fn g2(&self) -> Result<f64> {
        let (ma, mb) = (self.a / self.n, self.b / self.n);
        if ma.is_nan() || mb.is_nan() || ma <= 0.0 || mb <= 0.0 {
            return Err(Error::UndefinedCorrelation(format!(
                "mean counts per bin are {ma} and {mb}; both must be positive"
            )));
        }
        let cov = self.ab / self.n - ma * mb;
        Ok(1.0 + cov / (ma * mb))
    }
}

fn check_grids(a: &BinnedSeries, b: &BinnedSeries) -> Result<()> {
    if a.bin_width.to_bits() != b.bin_width.to_bits() || a.counts.len() != b.counts.len() {
        return Err(Error::InvalidConfig(format!(
            "bin grids differ: {} x {} vs {} x {}",
            a.counts.len(),
            a.bin_width,
            b.counts.len(),
            b.bin_width
        )));
    }
    Ok(())
}

/// `1 + <dNa dNb> / (<Na><Nb>)` with moments taken over the bins.
pub fn g2(a: &BinnedSeries, b: &BinnedSeries) -> Result<f64> {
    check_grids(a, b)?;
    let mut m = Moments::default();
    m.add(a, b);
    m.g2()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    /// Leave-one-trajectory-out jackknife error; NaN with fewer than two trajectories.
    pub std_error: f64,
    pub trajectories: usize,
    pub bins: usize,
}

/// `g2` with moments pooled over all bins of all trajectories at one phase.
/// Each element of `pairs` holds the two detectors' series for one trajectory.
pub fn g2_pooled(pairs: &[(BinnedSeries, BinnedSeries)]) -> Result<G2Estimate> {
    if pairs.is_empty() {
        return Err(Error::UndefinedCorrelation("no trajectories".into()));
    }
    let mut per = Vec::with_capacity(pairs.len());
    let mut total = Moments::default();
    for (a, b) in pairs {
        check_grids(a, b)?;
        check_grids(a, &pairs[0].0)?;
        let mut m = Moments::default();
        m.add(a, b);
        total.n += m.n;
        total.a += m.a;
        total.b += m.b;
        total.ab += m.ab;
        per.push(m);
    }
    let value = total.g2()?;
    let k = per.len();
    let std_error = if k < 2 {
        f64::NAN
    } else {
        let loo: Vec<f64> = per.iter().map(|m| total.minus(m).g2()).collect::<Result<_>>()?;
        let mean = loo.iter().sum::<f64>() / k as f64;
        let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (k as f64 - 1.0) / k as f64;
        var.sqrt()
    };
    Ok(G2Estimate { value, std_error, trajectories: k, bins: total.n as usize })
}

/// Summed counts per (phi, detector) over a phase grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub phis: Vec<f64>,
    /// Detector labels in presentation order.
    pub detectors: Vec<usize>,
    /// `counts[phi index][detector index]`
    pub counts: Vec<Vec<u64>>,
    pub trajectories: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl SweepResult {
    pub fn row(&self, phi: f64) -> Option<&[u64]> {
        self.phi_index(phi).map(|k| self.counts[k].as_slice())
    }

    pub fn phi_index(&self, phi: f64) -> Option<usize> {
        self.phis.iter().position(|&p| (p - phi).abs() <= 1e-9 * (1.0 + phi.abs()))
    }

    pub fn count(&self, phi_index: usize, detector: usize) -> Option<u64> {
        let d = self.detectors.iter().position(|&x| x == detector)?;
        self.counts.get(phi_index).map(|row| row[d])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub phi: f64,
    /// `sum_d |counts_d(phi) - counts_mirror(d)(-phi)|`
    pub residual: f64,
    /// `3 sum_d sqrt(counts_d(phi) + counts_mirror(d)(-phi))`
    pub noise_scale: f64,
}

impl SymmetryRow {
    pub fn within_noise(&self) -> bool {
        self.residual <= self.noise_scale
    }
}

/// Mirror residual with the 3x3-lattice relabeling [`PAPER_MIRROR`].
pub fn symmetry_residual(sweep: &SweepResult) -> Result<Vec<SymmetryRow>> {
    symmetry_residual_with(sweep, &PAPER_MIRROR)
}

/// Mirror residual for an arbitrary detector relabeling; unlisted detectors map to themselves.
pub fn symmetry_residual_with(sweep: &SweepResult, mirror: &[(usize, usize)]) -> Result<Vec<SymmetryRow>> {
    let image = |d: usize| mirror.iter().find(|(a, _)| *a == d).map(|&(_, b)| b).unwrap_or(d);
    let columns: Vec<usize> = sweep
        .detectors
        .iter()
        .map(|&d| {
            let m = image(d);
            sweep.detectors.iter().position(|&x| x == m).ok_or_else(|| {
                Error::InvalidConfig(format!("mirror image {m} of detector {d} is not in the sweep"))
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(sweep.phis.len());
    for (i, &phi) in sweep.phis.iter().enumerate() {
        let j = sweep
            .phi_index(-phi)
            .ok_or_else(|| Error::AsymmetricGrid(format!("no grid point at {} to mirror {phi}", -phi)))?;
        let (mut residual, mut noise) = (0.0, 0.0);
        for (d, &m) in columns.iter().enumerate() {
            let a = sweep.counts[i][d] as f64;
            let b = sweep.counts[j][m] as f64;
            residual += (a - b).abs();
            noise += (a + b).sqrt();
        }
        rows.push(SymmetryRow { phi, residual, noise_scale: 3.0 * noise });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{IntegratorConfig, JumpEvent, StreamId};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Poisson};
    use rand_chacha::ChaCha8Rng;

    fn record(events: &[(f64, usize)], horizon: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            events: events.iter().map(|&(time, channel_id)| JumpEvent { time, channel_id }).collect(),
            stream: StreamId::default(),
            phi: 0.0,
            config: IntegratorConfig::default().with_horizon(horizon),
        }
    }

    fn record_from_totals(totals: &[u64], detectors: &[usize]) -> TrajectoryRecord {
        let mut ev = vec![(0.1, 1)];
        for (t, &d) in totals.iter().zip(detectors) {
            for _ in 0..*t {
                ev.push((0.5, d));
            }
        }
        record(&ev, 10.0)
    }

    const DET: [usize; 5] = [7, 8, 9, 6, 3];

    #[test]
    fn aggregate_examples() {
        let empty: Vec<TrajectoryRecord> = vec![];
        assert_eq!(aggregate_counts(&empty, &DET).unwrap().totals, vec![0; 5]);

        let a = record_from_totals(&[1, 2, 0, 0, 0], &DET);
        let b = record_from_totals(&[0, 1, 1, 0, 3], &DET);
        let ab = aggregate_counts([&a, &b], &DET).unwrap();
        assert_eq!(ab.totals, vec![1, 3, 1, 0, 3]);
        let ba = aggregate_counts([&b, &a], &DET).unwrap();
        assert_eq!(ab, ba);
        // the input-channel click at t = 0.1 is excluded
        assert_eq!(ab.sum(), 8);
    }

    #[test]
    fn aggregate_rejects_mixed_parameters() {
        let a = record(&[], 10.0);
        let b = record(&[], 20.0);
        assert!(matches!(aggregate_counts([&a, &b], &DET), Err(Error::MixedRecords(_))));
        let mut c = record(&[], 10.0);
        c.phi = 0.5;
        assert!(matches!(aggregate_counts([&a, &c], &DET), Err(Error::MixedRecords(_))));
    }

    #[test]
    fn binning_examples() {
        let rec = record(&[(0.5, 7), (1.5, 7), (1.6, 7), (2.0, 3)], 3.0);
        assert_eq!(bin_events(&rec, 7, 1.0).unwrap().counts, vec![1, 2, 0]);
        assert_eq!(bin_events(&rec, 8, 1.0).unwrap().counts, vec![0, 0, 0]);
        assert_eq!(bin_events(&rec, 7, 3.0).unwrap().counts, vec![3]);
        // partial last bin
        assert_eq!(bin_events(&rec, 7, 2.0).unwrap().counts, vec![3, 0]);
        assert!(bin_events(&rec, 7, 0.0).is_err());
        assert!(bin_events(&rec, 7, -1.0).is_err());
    }

    #[test]
    fn event_at_horizon_lands_in_last_bin() {
        let rec = record(&[(3.0, 7)], 3.0);
        assert_eq!(bin_events(&rec, 7, 1.0).unwrap().counts, vec![0, 0, 1]);
    }

    fn series(counts: &[u64]) -> BinnedSeries {
        BinnedSeries { bin_width: 1.0, counts: counts.to_vec() }
    }

    #[test]
    fn g2_examples() {
        assert_eq!(g2(&series(&[3, 3, 3]), &series(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(g2(&series(&[2, 0]), &series(&[0, 2])).unwrap(), 0.0);
        assert!(matches!(g2(&series(&[0, 0]), &series(&[1, 2])), Err(Error::UndefinedCorrelation(_))));
        assert!(g2(&series(&[1, 0]), &series(&[1, 0, 0])).is_err());
    }

    #[test]
    fn g2_pooled_matches_concatenation() {
        let pairs = vec![(series(&[1, 0, 2]), series(&[0, 1, 1])), (series(&[0, 3, 1]), series(&[2, 0, 1]))];
        let pooled = g2_pooled(&pairs).unwrap();
        let direct = g2(&series(&[1, 0, 2, 0, 3, 1]), &series(&[0, 1, 1, 2, 0, 1])).unwrap();
        assert!((pooled.value - direct).abs() < 1e-15);
        assert_eq!(pooled.bins, 6);
        assert!(pooled.std_error.is_finite());
    }

    #[test]
    fn g2_of_independent_poisson_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poisson = Poisson::new(0.3).unwrap();
        let n = 100_000;
        let a: Vec<u64> = (0..n).map(|_| poisson.sample(&mut rng) as u64).collect();
        let b: Vec<u64> = (0..n).map(|_| poisson.sample(&mut rng) as u64).collect();
        let value = g2(&series(&a), &series(&b)).unwrap();
        // sampling sigma of the covariance is sqrt(var_a var_b / n) = 0.3 / sqrt(n)
        let sigma = (0.3 / (n as f64).sqrt()) / (0.3 * 0.3);
        assert!((value - 1.0).abs() < 3.0 * sigma, "g2 = {value}, sigma = {sigma}");
    }

    fn sweep(phis: Vec<f64>, counts: Vec<Vec<u64>>) -> SweepResult {
        SweepResult { phis, detectors: DET.to_vec(), counts, trajectories: 10, horizon: 1000.0, seed: 1 }
    }

    #[test]
    fn mirrored_sweep_has_zero_residual() {
        // columns are (7, 8, 9, 6, 3); the mirror swaps 7 <-> 3 and 8 <-> 6
        let s = sweep(
            vec![-1.0, 0.0, 1.0],
            vec![vec![10, 20, 30, 40, 50], vec![5, 6, 7, 6, 5], vec![50, 40, 30, 20, 10]],
        );
        let rows = symmetry_residual(&s).unwrap();
        assert!(rows.iter().all(|r| r.residual == 0.0 && r.within_noise()));
    }

    #[test]
    fn mirror_residual_values() {
        let s = sweep(vec![-1.0, 1.0], vec![vec![10, 20, 30, 40, 50], vec![50, 40, 30, 20, 12]]);
        let rows = symmetry_residual(&s).unwrap();
        assert_eq!(rows[0].residual, 2.0);
        assert_eq!(rows[1].residual, 2.0);
        let noise = 3.0 * (22f64.sqrt() + 40f64.sqrt() + 60f64.sqrt() + 80f64.sqrt() + 100f64.sqrt());
        assert!((rows[0].noise_scale - noise).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_grid_rejected() {
        let s = sweep(vec![-1.0, 0.5], vec![vec![1; 5], vec![1; 5]]);
        assert!(matches!(symmetry_residual(&s), Err(Error::AsymmetricGrid(_))));
    }

    proptest! {
        #[test]
        fn binning_conserves_totals(times in prop::collection::vec(0.0f64..50.0, 0..60), width in 0.1f64..50.0) {
            let events: Vec<(f64, usize)> = times.iter().map(|&t| (t, 7)).collect();
            let rec = record(&events, 50.0);
            let s = bin_events(&rec, 7, width).unwrap();
            prop_assert_eq!(s.total(), times.len() as u64);
        }

        #[test]
        fn aggregation_is_a_homomorphism(
            left in prop::collection::vec(prop::collection::vec(0u64..5, 5), 0..6),
            right in prop::collection::vec(prop::collection::vec(0u64..5, 5), 0..6),
        ) {
            let l: Vec<_> = left.iter().map(|t| record_from_totals(t, &DET)).collect();
            let r: Vec<_> = right.iter().map(|t| record_from_totals(t, &DET)).collect();
            let whole = aggregate_counts(l.iter().chain(&r), &DET).unwrap();
            let parts = aggregate_counts(&l, &DET).unwrap().merge(&aggregate_counts(&r, &DET).unwrap()).unwrap();
            prop_assert_eq!(whole, parts);
        }

        #[test]
        fn g2_is_symmetric(a in prop::collection::vec(0u64..6, 8), b in prop::collection::vec(0u64..6, 8)) {
            prop_assume!(a.iter().any(|&x| x > 0) && b.iter().any(|&x| x > 0));
            let (sa, sb) = (series(&a), series(&b));
            prop_assert!((g2(&sa, &sb).unwrap() - g2(&sb, &sa).unwrap()).abs() <= 1e-12);
        }
    }
}
