//! State ↔ conductance calibration and weight-to-synapse conversion.
//!
//! A signed weight is realized by a pair of devices whose conductance
//! difference carries the value. Conductance is measured relative to the
//! fully reset device, so a pair at `(h, 0)` contributes `G(h) − G(0)`.
//!
//! When the device cannot reach the weight ceiling, the table carries a gain
//! `conductance_scale` k < 1: the weight `w` is realized as a physical
//! conductance difference `k·w`, and the neuron feedback gain is divided by
//! `k` so that the neuron output is unchanged.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{composite_conductance, solve_terminal, DeviceParams, VariabilityDraw};
use crate::error::{Error, Result};

/// Largest weight magnitude a synapse may carry (siemens).
pub const WEIGHT_CEILING: f64 = 8e-5;
/// Largest effective bias magnitude (amperes).
pub const BIAS_CEILING: f64 = 8e-6;
/// Voltage of the bias rail.
pub const BIAS_VOLTAGE: f64 = 0.1;
/// Number of calibration points.
pub const DEFAULT_CALIBRATION_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub v_read: f64,
    /// Uniform state grid from 0 to 1.
    pub h: Vec<f64>,
    /// Composite conductance at `v_read` (siemens).
    pub g: Vec<f64>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    v_read: f64,
    fingerprint: String,
    points: usize,
    conductance_scale: f64,
}

/// Sweep the state over a uniform grid and record the composite conductance
/// (variability off).
pub fn calibrate(p: &DeviceParams, n: usize, v_read: f64) -> Result<CalibrationTable> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 2 points, got {n}"
        )));
    }
    if v_read == 0.0 || !v_read.is_finite() {
        return Err(Error::InvalidArgument(
            "read voltage must be non-zero".into(),
        ));
    }
    let d = VariabilityDraw::nominal(p);
    for h in [0.0, 1.0] {
        let (v_dev, _) = solve_terminal(v_read, h, &d, p)?;
        if v_dev.abs() > p.vt {
            return Err(Error::InvalidArgument(format!(
                "read voltage {v_read} V puts {v_dev:.4} V across the device, outside the ±{} V dead zone",
                p.vt
            )));
        }
    }
    let h: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let g = h
        .iter()
        .map(|&x| composite_conductance(x, p, v_read))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CalibrationTable {
        v_read,
        h,
        g,
        fingerprint: p.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SynapsePair {
    pub h_plus: f64,
    pub h_minus: f64,
}

impl CalibrationTable {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Conductance of the fully reset device.
    pub fn g_floor(&self) -> f64 {
        self.g[0]
    }

    /// Physical conductance swing between h = 0 and h = 1.
    pub fn swing(&self) -> f64 {
        self.g[self.g.len() - 1] - self.g[0]
    }

    /// Gain k realizing the weight ceiling within the device swing (≤ 1).
    pub fn conductance_scale(&self) -> f64 {
        (self.swing() / WEIGHT_CEILING).min(1.0)
    }

    /// Largest weight-equivalent conductance the table can represent.
    pub fn max_weight(&self) -> f64 {
        if self.swing() < WEIGHT_CEILING {
            WEIGHT_CEILING
        } else {
            self.swing()
        }
    }

    /// Physical composite conductance at state `h`, interpolated.
    pub fn conductance(&self, h: f64) -> f64 {
        let h = h.clamp(0.0, 1.0);
        let n = self.h.len();
        let x = h * (n - 1) as f64;
        let k = (x.floor() as usize).min(n - 2);
        let f = x - k as f64;
        self.g[k] + f * (self.g[k + 1] - self.g[k])
    }

    /// Weight-equivalent conductance of a device at state `h`:
    /// `(G(h) − G(0)) / k`.
    pub fn effective_conductance(&self, h: f64) -> f64 {
        (self.conductance(h) - self.g[0]) / self.conductance_scale()
    }

    /// State whose weight-equivalent conductance equals `g`.
    pub fn g_to_h(&self, g: f64) -> Result<f64> {
        let max = self.max_weight();
        if !(0.0..=max).contains(&g) {
            return Err(Error::range(g, 0.0, max).at("conductance to state"));
        }
        if g == 0.0 {
            return Ok(0.0);
        }
        let k = self.conductance_scale();
        let target = self.g[0] + g * k;
        let j = self.g.partition_point(|&x| x < target);
        if j == 0 {
            return Ok(0.0);
        }
        if j == self.g.len() {
            return Ok(1.0);
        }
        let (g0, g1) = (self.g[j - 1], self.g[j]);
        let (h0, h1) = (self.h[j - 1], self.h[j]);
        Ok(if g1 > g0 {
            h0 + (target - g0) / (g1 - g0) * (h1 - h0)
        } else {
            h1
        })
    }

    pub fn weight_to_synapse(&self, w: f64) -> Result<SynapsePair> {
        if !(w.abs() <= WEIGHT_CEILING) {
            return Err(Error::range(w, -WEIGHT_CEILING, WEIGHT_CEILING));
        }
        Ok(if w > 0.0 {
            SynapsePair {
                h_plus: self.g_to_h(w)?,
                h_minus: 0.0,
            }
        } else if w < 0.0 {
            SynapsePair {
                h_plus: 0.0,
                h_minus: self.g_to_h(-w)?,
            }
        } else {
            SynapsePair::default()
        })
    }

    /// Effective bias current (amperes) to a synapse pair on a rail at
    /// `bias_voltage`.
    pub fn bias_to_synapse(&self, b: f64, bias_voltage: f64) -> Result<SynapsePair> {
        if !(b.abs() <= BIAS_CEILING) {
            return Err(Error::range(b, -BIAS_CEILING, BIAS_CEILING));
        }
        if bias_voltage == 0.0 {
            return Err(Error::InvalidArgument(
                "bias voltage must be non-zero".into(),
            ));
        }
        self.weight_to_synapse(b / bias_voltage)
    }

    /// Weight carried by a pair.
    pub fn reconstruct(&self, s: &SynapsePair) -> f64 {
        self.effective_conductance(s.h_plus) - self.effective_conductance(s.h_minus)
    }

    /// CSV `h,g`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.h.len() * 32);
        out.push_str("h,g\n");
        for (h, g) in self.h.iter().zip(&self.g) {
            let _ = writeln!(out, "{h},{g:e}");
        }
        out
    }

    fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Write the CSV and its JSON sidecar (same stem, `.json`).
    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv = csv_path.as_ref();
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        let side = Sidecar {
            v_read: self.v_read,
            fingerprint: self.fingerprint.clone(),
            points: self.h.len(),
            conductance_scale: self.conductance_scale(),
        };
        let path = Self::sidecar_path(csv);
        std::fs::write(&path, serde_json::to_string_pretty(&side)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn read(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv = csv_path.as_ref();
        let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let side_path = Self::sidecar_path(csv);
        let side_text =
            std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&side_text)
            .map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "h,g")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `h,g`".into(),
                })
            }
        }
        let (mut h, mut g) = (Vec::new(), Vec::new());
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let mut field = || -> Result<f64> {
                it.next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: n + 1,
                        message: format!("malformed row {line:?}"),
                    })
            };
            h.push(field()?);
            g.push(field()?);
        }
        let table = CalibrationTable {
            v_read: side.v_read,
            h,
            g,
            fingerprint: side.fingerprint,
        };
        table.check()?;
        if table.len() != side.points {
            return Err(Error::Format(format!(
                "sidecar lists {} points, table has {}",
                side.points,
                table.len()
            )));
        }
        Ok(table)
    }

    /// Structural checks: uniform grid from 0 to 1, non-decreasing g,
    /// positive swing.
    pub fn check(&self) -> Result<()> {
        let n = self.h.len();
        if n < 2 || self.g.len() != n {
            return Err(Error::Format(
                "calibration table needs at least 2 rows".into(),
            ));
        }
        for k in 0..n {
            let expect = k as f64 / (n - 1) as f64;
            if (self.h[k] - expect).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "row {}: state grid must be uniform on [0, 1]",
                    k + 2
                )));
            }
        }
        if let Some(k) = self.g.windows(2).position(|w| !(w[1] >= w[0])) {
            return Err(Error::Format(format!(
                "row {}: conductance decreases",
                k + 3
            )));
        }
        if !(self.swing() > 0.0) {
            return Err(Error::Format(
                "calibration table has no conductance swing".into(),
            ));
        }
        Ok(())
    }
}
