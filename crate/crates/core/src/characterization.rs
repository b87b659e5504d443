//! Set/reset extraction, CDFs and HRS/LRS read currents from I–V sweeps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::IVTrace;
use crate::error::{Error, Result};

/// Default read voltages for HRS/LRS currents.
pub const DEFAULT_READ_VOLTAGES: [f64; 2] = [0.05, 0.1];

/// One sweep cycle, split at the voltage extrema and zero crossings.
/// Currents are stored as magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleBranches {
    /// Rising positive sweep, 0 → +A.
    pub set_branch: Vec<(f64, f64)>,
    /// Returning positive sweep, +A → 0.
    pub return_branch: Vec<(f64, f64)>,
    /// Negative lobe, 0 → −A → 0.
    pub reset_branch: Vec<(f64, f64)>,
}

impl CycleBranches {
    pub fn len(&self) -> usize {
        self.set_branch.len() + self.return_branch.len() + self.reset_branch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cycles found in a trace plus the number of truncated cycles dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCycles {
    pub cycles: Vec<CycleBranches>,
    pub dropped: usize,
}

/// Split a trace into complete cycles. A cycle starts where the sweep
/// leaves the negative half-plane (or at the first sample) and must reach
/// both polarities and return before the next cycle starts.
pub fn split_cycles(trace: &IVTrace) -> Result<SplitCycles> {
    let s = &trace.samples;
    if s.is_empty() {
        return Err(Error::InvalidArgument("trace has no samples".into()));
    }
    let mut starts = vec![0];
    for k in 1..s.len() {
        if s[k - 1].v < 0.0 && s[k].v >= 0.0 {
            starts.push(k);
        }
    }

    let mut cycles = Vec::new();
    let mut dropped = 0;
    for (n, &b) in starts.iter().enumerate() {
        let Some(&e) = starts.get(n + 1) else {
            // a lone closing sample at 0 V is not a truncated cycle
            if s[b..].iter().any(|x| x.v != 0.0) {
                dropped += 1;
            }
            break;
        };
        let seg = &s[b..e];
        let Some(z) = seg.iter().position(|x| x.v < 0.0) else {
            dropped += 1;
            continue;
        };
        if z == 0 {
            // sweep started on the negative side: not a full cycle
            dropped += 1;
            continue;
        }
        let peak = (0..z)
            .max_by(|&a, &c| seg[a].v.total_cmp(&seg[c].v).then(c.cmp(&a)))
            .unwrap_or(0);
        let abs = |x: &crate::device::Sample| (x.v, x.i.abs());
        cycles.push(CycleBranches {
            set_branch: seg[..=peak].iter().map(abs).collect(),
            return_branch: seg[peak + 1..z].iter().map(abs).collect(),
            reset_branch: seg[z..].iter().map(abs).collect(),
        });
    }
    if cycles.is_empty() {
        return Err(Error::Extraction(
            "trace holds no complete sweep cycle".into(),
        ));
    }
    Ok(SplitCycles { cycles, dropped })
}

/// Distance of every point to the chord joining the first and last points,
/// with voltage and current min-max normalized to [0, 1].
pub fn chord_distances(branch: &[(f64, f64)]) -> Result<Vec<f64>> {
    if branch.len() < 3 {
        return Err(Error::Extraction(format!(
            "branch needs at least 3 points, has {}",
            branch.len()
        )));
    }
    let (vmin, vmax) = min_max(branch.iter().map(|p| p.0));
    let (imin, imax) = min_max(branch.iter().map(|p| p.1));
    let norm = |lo: f64, hi: f64, x: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
    let pts: Vec<(f64, f64)> = branch
        .iter()
        .map(|&(v, i)| (norm(vmin, vmax, v), norm(imin, imax, i)))
        .collect();
    let (x0, y0) = pts[0];
    let (x1, y1) = pts[pts.len() - 1];
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return Err(Error::Extraction(
            "degenerate chord: branch starts and ends at the same point".into(),
        ));
    }
    Ok(pts
        .iter()
        .map(|&(x, y)| ((x - x0) * dy - (y - y0) * dx).abs() / len)
        .collect())
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// Voltage at the point farthest from the branch chord (lowest voltage on ties).
pub fn extract_set_voltage(branch: &[(f64, f64)]) -> Result<f64> {
    let d = chord_distances(branch)?;
    let mut best = 0;
    for k in 1..branch.len() {
        if d[k] > d[best] || (d[k] == d[best] && branch[k].0 < branch[best].0) {
            best = k;
        }
    }
    Ok(branch[best].0)
}

/// Voltage of the largest current magnitude (smallest |v| on ties).
pub fn extract_reset_voltage(branch: &[(f64, f64)]) -> Result<f64> {
    let mut it = branch.iter();
    let first = *it
        .next()
        .ok_or_else(|| Error::Extraction("empty reset branch".into()))?;
    let best = it.fold(first, |b, &p| {
        if p.1.abs() > b.1.abs() || (p.1.abs() == b.1.abs() && p.0.abs() < b.0.abs()) {
            p
        } else {
            b
        }
    });
    Ok(best.0)
}

/// Linearly interpolated current at `v_read`. The first bracketing pair
/// in sweep order is used; extrapolation is refused.
pub fn read_current_at(branch: &[(f64, f64)], v_read: f64) -> Result<f64> {
    if branch.is_empty() {
        return Err(Error::Extraction("empty branch".into()));
    }
    if let Some(p) = branch.iter().find(|p| p.0 == v_read) {
        return Ok(p.1);
    }
    for w in branch.windows(2) {
        let ((v0, i0), (v1, i1)) = (w[0], w[1]);
        if (v0 < v_read && v_read < v1) || (v1 < v_read && v_read < v0) {
            let f = (v_read - v0) / (v1 - v0);
            return Ok(i0 + f * (i1 - i0));
        }
    }
    let (lo, hi) = min_max(branch.iter().map(|p| p.0));
    Err(Error::range(v_read, lo, hi).at("read voltage outside branch"))
}

/// Empirical CDF: sorted values against plotting positions rank/(n+1).
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(k, x)| (x, (k + 1) as f64 / (n + 1.0)))
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadPoint {
    pub v_read: f64,
    pub i_hrs: f64,
    pub i_lrs: f64,
    /// LRS over HRS read current.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub v_set: f64,
    pub v_reset: f64,
    pub reads: Vec<ReadPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub read_voltages: Vec<f64>,
    pub cycles: Vec<CycleReport>,
    pub dropped_cycles: usize,
    pub median_v_set: f64,
    pub median_v_reset: f64,
    pub set_cdf: Vec<(f64, f64)>,
    pub reset_cdf: Vec<(f64, f64)>,
}

/// Per-cycle extractions, CDFs and HRS/LRS read currents.
///
/// HRS is read on the rising set branch, LRS on the returning branch after
/// the positive peak.
pub fn build_report(trace: &IVTrace, read_voltages: &[f64]) -> Result<CharacterizationReport> {
    for &v in read_voltages {
        if !(v.abs() <= trace.amplitude) {
            return Err(Error::range(v, -trace.amplitude, trace.amplitude).at("read voltage"));
        }
    }
    let split = split_cycles(trace)?;
    let mut cycles = Vec::with_capacity(split.cycles.len());
    for (n, c) in split.cycles.iter().enumerate() {
        let v_set = extract_set_voltage(&c.set_branch)?;
        let v_reset = extract_reset_voltage(&c.reset_branch)?;
        let mut reads = Vec::with_capacity(read_voltages.len());
        for &v in read_voltages {
            let i_hrs =
                read_current_at(&c.set_branch, v).map_err(|e| e.at(format!("cycle {n}")))?;
            let i_lrs =
                read_current_at(&c.return_branch, v).map_err(|e| e.at(format!("cycle {n}")))?;
            reads.push(ReadPoint {
                v_read: v,
                i_hrs,
                i_lrs,
                ratio: i_lrs / i_hrs,
            });
        }
        cycles.push(CycleReport {
            cycle: n,
            v_set,
            v_reset,
            reads,
        });
    }
    let sets: Vec<f64> = cycles.iter().map(|c| c.v_set).collect();
    let resets: Vec<f64> = cycles.iter().map(|c| c.v_reset).collect();
    Ok(CharacterizationReport {
        read_voltages: read_voltages.to_vec(),
        median_v_set: median(&sets).unwrap_or(f64::NAN),
        median_v_reset: median(&resets).unwrap_or(f64::NAN),
        set_cdf: empirical_cdf(&sets),
        reset_cdf: empirical_cdf(&resets),
        dropped_cycles: split.dropped,
        cycles,
    })
}

impl CharacterizationReport {
    pub fn per_cycle_csv(&self) -> String {
        let mut out = String::from("cycle,v_set,v_reset");
        for v in &self.read_voltages {
            let _ = write!(out, ",i_hrs@{v},i_lrs@{v},ratio@{v}");
        }
        out.push('\n');
        for c in &self.cycles {
            let _ = write!(out, "{},{},{}", c.cycle, c.v_set, c.v_reset);
            for r in &c.reads {
                let _ = write!(out, ",{:e},{:e},{}", r.i_hrs, r.i_lrs, r.ratio);
            }
            out.push('\n');
        }
        out
    }

    fn cdf_csv(cdf: &[(f64, f64)]) -> String {
        let mut out = String::from("v,p\n");
        for (v, p) in cdf {
            let _ = writeln!(out, "{v},{p}");
        }
        out
    }

    /// Write `per_cycle.csv`, `set_cdf.csv`, `reset_cdf.csv` and `summary.json`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("per_cycle.csv", self.per_cycle_csv()),
            ("set_cdf.csv", Self::cdf_csv(&self.set_cdf)),
            ("reset_cdf.csv", Self::cdf_csv(&self.reset_cdf)),
            ("summary.json", serde_json::to_string_pretty(self)? + "\n"),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
