//! Orchestration: trajectory batches over a phase grid on a worker pool.
//!
//! Work units are `(phi index, trajectory index)` pairs, each seeded from
//! `(seed, phi index, trajectory index)`. Results are collected in unit order,
//! so the worker count never changes the output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::config::RunConfig;
use crate::error::{Error, Result};
use crate::oracle::{integrate_master, MasterConfig, MasterSolution};
use crate::stats::{aggregate_counts, bin_events, g2_pooled, BinnedSeries, CountRecord, G2Estimate, SweepResult};
use crate::trajectory::{Simulator, StreamId, TrajectoryRecord};

/// Runs `f` on every trajectory of every grid phase; `out[phi index][trajectory]`.
pub fn run_units<T, F>(cfg: &RunConfig, phis: &[f64], f: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(TrajectoryRecord) -> Result<T> + Sync,
{
    cfg.validate()?;
    let sims = phis
        .iter()
        .map(|&phi| Ok(Simulator::new(&cfg.spec(phi)?, cfg.integrator())?.with_phi_label(phi)))
        .collect::<Result<Vec<_>>>()?;
    let m = cfg.trajectories;
    let units: Vec<(u32, u32)> = (0..phis.len() as u32).flat_map(|k| (0..m).map(move |t| (k, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let flat: Vec<T> = pool.install(|| {
        units
            .par_iter()
            .map(|&(k, t)| {
                let wrap = |e: Error| Error::Trajectory { phi: phis[k as usize], trajectory: t as usize, source: Box::new(e) };
                let rec = sims[k as usize].run(StreamId::new(cfg.seed, k, t)).map_err(wrap)?;
                f(rec).map_err(wrap)
            })
            .collect::<Result<Vec<T>>>()
    })?;
    let mut it = flat.into_iter();
    Ok(phis.iter().map(|_| it.by_ref().take(m as usize).collect()).collect())
}

/// Summed detector counts per grid phase.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    let phis = cfg.phis();
    let detectors = cfg.detectors()?;
    let per = run_units(cfg, &phis, |rec| Ok(CountRecord::from_record(&rec, &detectors)))?;
    let counts = per
        .iter()
        .map(|row| {
            row.iter()
                .try_fold(CountRecord::zeros(&detectors), |acc, c| acc.merge(c))
                .map(|c| c.totals)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        phis,
        detectors,
        counts,
        trajectories: cfg.trajectories as usize,
        horizon: cfg.horizon,
        seed: cfg.seed,
    })
}

/// Full records at the first grid phase, plus their count summary.
pub fn run_simulate(cfg: &RunConfig) -> Result<(SweepResult, Vec<TrajectoryRecord>)> {
    let phi = cfg.phis()[0];
    let detectors = cfg.detectors()?;
    let records = run_units(cfg, &[phi], Ok)?.pop().unwrap_or_default();
    let totals = aggregate_counts(&records, &detectors)?.totals;
    let sweep = SweepResult {
        phis: vec![phi],
        detectors,
        counts: vec![totals],
        trajectories: cfg.trajectories as usize,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    Ok((sweep, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Report {
    pub phi: f64,
    pub detector_a: usize,
    pub detector_b: usize,
    pub estimate: G2Estimate,
    pub bin_width: f64,
    pub horizon: f64,
    pub seed: u64,
}

/// Binned series of detectors `a` and `b` for every trajectory at each phase.
pub fn run_binned_pairs(
    cfg: &RunConfig,
    phis: &[f64],
    a: usize,
    b: usize,
) -> Result<Vec<Vec<(BinnedSeries, BinnedSeries)>>> {
    let detectors = cfg.detectors()?;
    for d in [a, b] {
        if !detectors.contains(&d) {
            return Err(Error::InvalidConfig(format!("{d} is not an output detector (have {detectors:?})")));
        }
    }
    let w = cfg.bin_width;
    run_units(cfg, phis, |rec| Ok((bin_events(&rec, a, w)?, bin_events(&rec, b, w)?)))
}

/// Pooled `g2(a, b)` at the first grid phase.
pub fn run_g2(cfg: &RunConfig, a: usize, b: usize) -> Result<G2Report> {
    let phi = cfg.phis()[0];
    let pairs = run_binned_pairs(cfg, &[phi], a, b)?.pop().unwrap_or_default();
    Ok(G2Report {
        phi,
        detector_a: a,
        detector_b: b,
        estimate: g2_pooled(&pairs)?,
        bin_width: cfg.bin_width,
        horizon: cfg.horizon,
        seed: cfg.seed,
    })
}

/// Master-equation solution at each grid phase, one phase per worker.
pub fn run_oracle(cfg: &RunConfig) -> Result<Vec<(f64, MasterSolution)>> {
    cfg.validate()?;
    let mc = MasterConfig { horizon: cfg.horizon, dt: cfg.oracle_dt(), ..MasterConfig::default() };
    let phis = cfg.phis();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| {
        phis.par_iter()
            .map(|&phi| Ok((phi, integrate_master(&cfg.spec(phi)?, &mc)?)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::PhiSelection;

    fn small(workers: usize) -> RunConfig {
        RunConfig {
            phi: PhiSelection::Grid { min: -1.0, max: 1.0, points: 3 },
            horizon: 20.0,
            trajectories: 4,
            workers,
            ..RunConfig::default()
        }
    }

    #[test]
    fn sweep_is_independent_of_worker_count() {
        let a = run_sweep(&small(1)).unwrap();
        let b = run_sweep(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.len(), 3);
        assert_eq!(a.detectors, vec![7, 8, 9, 6, 3]);
    }

    #[test]
    fn sweep_matches_direct_trajectories() {
        let cfg = small(2);
        let sweep = run_sweep(&cfg).unwrap();
        for (k, &phi) in sweep.phis.iter().enumerate() {
            let sim = Simulator::new(&cfg.spec(phi).unwrap(), cfg.integrator()).unwrap();
            let recs: Vec<_> = (0..4).map(|t| sim.run(StreamId::new(cfg.seed, k as u32, t)).unwrap()).collect();
            assert_eq!(aggregate_counts(&recs, &sweep.detectors).unwrap().totals, sweep.counts[k]);
        }
    }

    #[test]
    fn failures_name_the_trajectory() {
        let cfg = RunConfig {
            method: crate::trajectory::Method::FixedStep,
            dt: Some(0.5),
            ..small(1)
        };
        match run_sweep(&cfg).unwrap_err() {
            Error::Trajectory { phi, trajectory, source } => {
                assert_eq!((phi, trajectory), (-1.0, 0));
                assert!(matches!(*source, Error::StepTooCoarse { .. }));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn g2_requires_output_detectors() {
        assert!(run_g2(&small(1), 1, 3).is_err());
        let r = run_g2(&small(1), 7, 3).unwrap();
        assert!(r.estimate.value.is_finite());
        assert_eq!(r.estimate.trajectories, 4);
    }
}
