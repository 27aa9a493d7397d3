//! Text encodings of results. Reals are written with Rust's shortest
//! round-trip formatting, so parsing an emitted file gives back the same bits.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::cli::config::{RunConfig, FLAT_RATIO_BOUND};
use crate::cli::run::G2Report;
use crate::error::{Error, Result};
use crate::oracle::MasterSolution;
use crate::stats::{SweepResult, SymmetryRow};
use crate::trajectory::TrajectoryRecord;

pub const SWEEP_HEADER: &str = "phi,detector,counts,trajectories,horizon,seed";
pub const EVENT_HEADER: &str = "trajectory,time,channel";

pub fn sweep_csv(s: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (phi, row) in s.phis.iter().zip(&s.counts) {
        for (d, c) in s.detectors.iter().zip(row) {
            let _ = writeln!(out, "{phi},{d},{c},{},{},{}", s.trajectories, s.horizon, s.seed);
        }
    }
    out
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { what: format!("sweep CSV line {line}"), reason: reason.into() }
}

/// Inverse of [`sweep_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<SweepResult> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SWEEP_HEADER => {}
        Some((n, h)) => return Err(parse_err(n + 1, format!("expected header {SWEEP_HEADER:?}, got {h:?}"))),
        None => return Err(parse_err(1, "empty file")),
    }
    let mut phis: Vec<f64> = Vec::new();
    let mut detectors: Vec<usize> = Vec::new();
    let mut counts: Vec<Vec<u64>> = Vec::new();
    let mut meta: Option<(usize, f64, u64)> = None;
    for (n, line) in lines {
        let n = n + 1;
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(n, format!("expected 6 fields, got {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> { f[k].parse().map_err(|_| parse_err(n, format!("bad number {:?}", f[k]))) };
        let int = |k: usize| -> Result<u64> { f[k].parse().map_err(|_| parse_err(n, format!("bad integer {:?}", f[k]))) };
        let (phi, d, c) = (num(0)?, int(1)? as usize, int(2)?);
        let m = (int(3)? as usize, num(4)?, int(5)?);
        match meta {
            None => meta = Some(m),
            Some(prev) if prev.0 != m.0 || prev.1.to_bits() != m.1.to_bits() || prev.2 != m.2 => {
                return Err(parse_err(n, "trajectories, horizon and seed must agree on every row"));
            }
            _ => {}
        }
        if phis.last().map(|p| p.to_bits()) != Some(phi.to_bits()) {
            phis.push(phi);
            counts.push(Vec::new());
        }
        let row = counts.last_mut().expect("row pushed above");
        if phis.len() == 1 {
            detectors.push(d);
        } else if detectors.get(row.len()) != Some(&d) {
            return Err(parse_err(n, format!("detector {d} out of order")));
        }
        row.push(c);
    }
    let (trajectories, horizon, seed) = meta.ok_or_else(|| parse_err(2, "no data rows"))?;
    if counts.iter().any(|r| r.len() != detectors.len()) {
        return Err(parse_err(0, "rows do not cover every detector at every phi"));
    }
    Ok(SweepResult { phis, detectors, counts, trajectories, horizon, seed })
}

/// Settings recorded alongside JSON results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metadata {
    pub lattice: String,
    pub method: crate::trajectory::Method,
    pub dt: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    pub mu: f64,
    pub bin_width: f64,
    /// Reading of the mean in g2.
    pub g2_mean: &'static str,
    pub input_clicks_excluded: bool,
    pub flat_ratio_bound: f64,
}

impl Metadata {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            lattice: cfg.lattice_name(),
            method: cfg.method,
            dt: cfg.integrator().dt,
            gamma_in: cfg.gamma_in,
            gamma_out: cfg.gamma_out,
            mu: 0.5 * cfg.mu_sign,
            bin_width: cfg.bin_width,
            g2_mean: "per-bin mean over all bins of all trajectories",
            input_clicks_excluded: true,
            flat_ratio_bound: FLAT_RATIO_BOUND,
        }
    }
}

#[derive(Serialize)]
struct DetectorCount {
    detector: usize,
    counts: u64,
}

#[derive(Serialize)]
struct PhiRow {
    phi: f64,
    detectors: Vec<DetectorCount>,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    metadata: &'a Metadata,
    trajectories: usize,
    horizon: f64,
    seed: u64,
    rows: Vec<PhiRow>,
}

pub fn sweep_json(s: &SweepResult, meta: &Metadata) -> String {
    let doc = SweepJson {
        metadata: meta,
        trajectories: s.trajectories,
        horizon: s.horizon,
        seed: s.seed,
        rows: s
            .phis
            .iter()
            .zip(&s.counts)
            .map(|(&phi, row)| PhiRow {
                phi,
                detectors: s.detectors.iter().zip(row).map(|(&detector, &counts)| DetectorCount { detector, counts }).collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    out.push('\n');
    out
}

const CELL_W: usize = 56;
const CELL_H: usize = 18;
const LEFT: usize = 96;
const TOP: usize = 56;
const RIGHT: usize = 16;
const BOTTOM: usize = 40;

/// Counts as a heatmap: phi increases upwards, detectors left to right.
pub fn sweep_svg(s: &SweepResult) -> String {
    let (rows, cols) = (s.phis.len(), s.detectors.len());
    let width = LEFT + cols * CELL_W + RIGHT;
    let height = TOP + rows * CELL_H + BOTTOM;
    let max = s.counts.iter().flatten().copied().max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">detector counts ({} trajectories, T = {})</text>"#,
        LEFT + cols * CELL_W / 2,
        s.trajectories,
        s.horizon
    );
    for (j, d) in s.detectors.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{d}</text>"#,
            LEFT + j * CELL_W + CELL_W / 2,
            TOP - 8
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">detector</text>"#,
        LEFT + cols * CELL_W / 2,
        TOP + rows * CELL_H + 26
    );
    let label_every = rows.div_ceil(24).max(1);
    for (i, (phi, row)) in s.phis.iter().zip(&s.counts).enumerate() {
        let y = TOP + (rows - 1 - i) * CELL_H;
        if i % label_every == 0 || i + 1 == rows {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end">{:.4}π</text>"#,
                LEFT - 6,
                y + CELL_H / 2 + 4,
                phi / std::f64::consts::PI
            );
        }
        for (j, (d, &c)) in s.detectors.iter().zip(row).enumerate() {
            let t = if max == 0 { 0.0 } else { c as f64 / max as f64 };
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}"><title>phi = {phi}, detector {d}: {c}</title></rect>"#,
                LEFT + j * CELL_W,
                shade(t)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">phi</text>"#,
        TOP + rows * CELL_H / 2,
        TOP + rows * CELL_H / 2
    );
    out.push_str("</svg>\n");
    out
}

/// White at 0 to dark blue at 1.
fn shade(t: f64) -> String {
    let lerp = |hi: f64, lo: f64| (hi + (lo - hi) * t.clamp(0.0, 1.0)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

pub fn event_log_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from(EVENT_HEADER);
    out.push('\n');
    for rec in records {
        for e in &rec.events {
            let _ = writeln!(out, "{},{},{}", rec.stream.trajectory, e.time, e.channel_id);
        }
    }
    out
}

pub fn oracle_csv(runs: &[(f64, MasterSolution)], dt: f64) -> String {
    let mut out = String::from("phi,channel,kind,expected_counts,horizon,dt\n");
    for (phi, sol) in runs {
        for (ch, c) in sol.expected.channels.iter().zip(&sol.expected.counts) {
            let _ = writeln!(out, "{phi},{},{},{c},{},{dt}", ch.channel_id, ch.kind.name(), sol.expected.horizon);
        }
    }
    out
}

/// `<sz_i>(t)` snapshots of every qubit.
pub fn sz_series_csv(runs: &[(f64, MasterSolution)]) -> String {
    let n = runs.first().and_then(|(_, s)| s.sz.first()).map_or(0, Vec::len);
    let mut out = String::from("phi,time");
    for q in 1..=n {
        let _ = write!(out, ",sz_{q}");
    }
    out.push('\n');
    for (phi, sol) in runs {
        for (t, row) in sol.times.iter().zip(&sol.sz) {
            let _ = write!(out, "{phi},{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn symmetry_csv(rows: &[SymmetryRow]) -> String {
    let mut out = String::from("phi,residual,noise_scale,within_noise\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.phi, r.residual, r.noise_scale, r.within_noise());
    }
    out
}

pub fn g2_csv(r: &G2Report, trajectories: u32) -> String {
    format!(
        "phi,detector_a,detector_b,g2,std_error,bin_width,trajectories,horizon,seed\n{},{},{},{},{},{},{},{},{}\n",
        r.phi, r.detector_a, r.detector_b, r.estimate.value, r.estimate.std_error, r.bin_width, trajectories, r.horizon, r.seed
    )
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("plain data serializes");
    out.push('\n');
    out
}

/// Writes to `path`, or standard output when `None`.
pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample() -> SweepResult {
        SweepResult {
            phis: vec![-PI, 0.1 + 0.2, PI / 3.0],
            detectors: vec![7, 8, 9, 6, 3],
            counts: vec![vec![1, 2, 3, 4, 5], vec![0, 0, 0, 0, 0], vec![10, 20, 30, 40, 50]],
            trajectories: 10,
            horizon: 1000.0,
            seed: u64::MAX,
        }
    }

    #[test]
    fn one_phi_csv_has_five_rows() {
        let mut s = sample();
        s.phis.truncate(1);
        s.counts.truncate(1);
        let csv = sweep_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "phi,detector,counts,trajectories,horizon,seed");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "-3.141592653589793,7,1,10,1000,18446744073709551615");
    }

    #[test]
    fn csv_round_trip() {
        let s = sample();
        assert_eq!(parse_sweep_csv(&sweep_csv(&s)).unwrap(), s);
    }

    #[test]
    fn csv_parse_errors() {
        assert!(parse_sweep_csv("").is_err());
        assert!(parse_sweep_csv("a,b\n").is_err());
        assert!(parse_sweep_csv(&format!("{SWEEP_HEADER}\n0,7,x,1,1,1\n")).is_err());
        let mixed = format!("{SWEEP_HEADER}\n0,7,1,1,1,1\n0,8,1,2,1,1\n");
        assert!(parse_sweep_csv(&mixed).is_err());
        let ragged = format!("{SWEEP_HEADER}\n0,7,1,1,1,1\n0,8,1,1,1,1\n1,7,1,1,1,1\n");
        assert!(parse_sweep_csv(&ragged).is_err());
    }

    #[test]
    fn json_is_nested() {
        let meta = Metadata::from_config(&RunConfig::default());
        let v: serde_json::Value = serde_json::from_str(&sweep_json(&sample(), &meta)).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 3);
        assert_eq!(v["rows"][2]["detectors"][4]["detector"], 3);
        assert_eq!(v["rows"][2]["detectors"][4]["counts"], 50);
        assert_eq!(v["metadata"]["flat_ratio_bound"], 2.0);
        assert_eq!(v["metadata"]["bin_width"], 1.0);
    }

    #[test]
    fn svg_scales_with_grid() {
        let s = sample();
        let svg = sweep_svg(&s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(&format!(r#"height="{}""#, TOP + 3 * CELL_H + BOTTOM)));
        assert_eq!(svg.matches("<rect x=").count(), 15);
        assert!(!svg.contains("href"));
        let mut bigger = s.clone();
        bigger.phis.push(2.0);
        bigger.counts.push(vec![0; 5]);
        assert!(sweep_svg(&bigger).contains(&format!(r#"height="{}""#, TOP + 4 * CELL_H + BOTTOM)));
    }

    #[test]
    fn shade_endpoints() {
        assert_eq!(shade(0.0), "#ffffff");
        assert_eq!(shade(1.0), "#08306b");
    }
}
