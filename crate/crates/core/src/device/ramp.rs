use std::fmt::Write as _;
use std::path::Path;

use super::model::{
    sample_variability, solve_terminal, state_rate, step_state, VariabilityDraw, MAX_STATE_STEP,
};
use super::DeviceParams;
use crate::error::{Error, Result};
use crate::seeds;

/// One time sample of a current-voltage sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    pub i: f64,
}

/// Time/voltage/current series from a measurement or a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct IVTrace {
    pub samples: Vec<Sample>,
    /// Magnitude of dV/dt on each ramp segment (V/s).
    pub ramp_rate: f64,
    pub amplitude: f64,
    pub cycles: usize,
}

/// Triangle sweep settings: 0 → +A → −A → 0 per cycle, each of the four
/// segments lasting `period` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampConfig {
    pub amplitude: f64,
    pub period: f64,
    pub cycles: usize,
    pub samples_per_cycle: usize,
    pub variability: bool,
}

impl RampConfig {
    pub const DEFAULT_SAMPLES_PER_CYCLE: usize = 1000;

    pub fn new(amplitude: f64, period: f64, cycles: usize) -> Self {
        RampConfig {
            amplitude,
            period,
            cycles,
            samples_per_cycle: Self::DEFAULT_SAMPLES_PER_CYCLE,
            variability: true,
        }
    }

    pub fn ramp_rate(&self) -> f64 {
        self.amplitude / self.period
    }

    pub fn cycle_duration(&self) -> f64 {
        4.0 * self.period
    }

    fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidArgument("cycles must be at least 1".into()));
        }
        if !(self.amplitude > 0.0) || !(self.period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "amplitude and period must be positive (got {}, {})",
                self.amplitude, self.period
            )));
        }
        if self.samples_per_cycle < 8 || self.samples_per_cycle % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "samples per cycle must be a multiple of 4 and at least 8, got {}",
                self.samples_per_cycle
            )));
        }
        Ok(())
    }
}

/// Normalized triangle at sample `k` of `n`, exact at extrema and zeros.
fn triangle_at(k: usize, n: usize) -> f64 {
    let (k, n) = (k as i64, n as i64);
    let num = if 4 * k <= n {
        4 * k
    } else if 4 * k <= 3 * n {
        2 * n - 4 * k
    } else {
        4 * k - 4 * n
    };
    num as f64 / n as f64
}

/// Normalized triangle at fractional phase in `[0, 1]`.
fn triangle(phase: f64) -> f64 {
    if phase <= 0.25 {
        4.0 * phase
    } else if phase <= 0.75 {
        2.0 - 4.0 * phase
    } else {
        4.0 * phase - 4.0
    }
}

/// Simulate `cycles` triangle sweeps with per-cycle variability redraws.
pub fn simulate_ramp(
    p: &DeviceParams,
    amplitude: f64,
    period: f64,
    cycles: usize,
    seed: u64,
) -> Result<IVTrace> {
    simulate_ramp_with(p, &RampConfig::new(amplitude, period, cycles), seed)
}

pub fn simulate_ramp_with(p: &DeviceParams, cfg: &RampConfig, seed: u64) -> Result<IVTrace> {
    cfg.validate()?;
    let n = cfg.samples_per_cycle;
    let dt = cfg.cycle_duration() / n as f64;
    let mut samples = Vec::with_capacity(cfg.cycles * n + 1);
    let mut h = p.h0.clamp(0.0, 1.0);

    for c in 0..cfg.cycles {
        let d = if cfg.variability {
            sample_variability(
                p,
                &mut seeds::stream(seed, &[seeds::stage::DEVICE, c as u64]),
            )
        } else {
            VariabilityDraw::nominal(p)
        };
        for k in 0..n {
            let t = (c * n + k) as f64 * dt;
            let v = cfg.amplitude * triangle_at(k, n);
            let (_, i) = solve_terminal(v, h, &d, p)?;
            samples.push(Sample { t, v, i });

            // integrate the state across [t, t + dt], re-solving the divider
            // whenever the state moves
            let mut elapsed = 0.0;
            while elapsed < dt {
                let phase = (k as f64 + elapsed / dt) / n as f64;
                let v_now = cfg.amplitude * triangle(phase);
                let (v_dev, _) = solve_terminal(v_now, h, &d, p)?;
                let rate = state_rate(h, v_dev, &d, p);
                if rate == 0.0 {
                    break;
                }
                let sub = (dt - elapsed).min(MAX_STATE_STEP / rate.abs());
                h = step_state(h, v_dev, sub, &d, p);
                elapsed += sub;
            }
        }
    }
    samples.push(Sample {
        t: (cfg.cycles * n) as f64 * dt,
        v: 0.0,
        i: 0.0,
    });

    Ok(IVTrace {
        samples,
        ramp_rate: cfg.ramp_rate(),
        amplitude: cfg.amplitude,
        cycles: cfg.cycles,
    })
}

impl IVTrace {
    /// Build a trace from raw samples, inferring amplitude, ramp rate and
    /// the number of completed cycles.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("trace has no samples".into()));
        }
        for (k, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::Format(format!(
                    "time not strictly increasing at sample {}",
                    k + 1
                )));
            }
        }
        let amplitude = samples.iter().map(|s| s.v.abs()).fold(0.0, f64::max);
        let mut slopes: Vec<f64> = samples
            .windows(2)
            .filter(|w| w[1].v != w[0].v)
            .map(|w| ((w[1].v - w[0].v) / (w[1].t - w[0].t)).abs())
            .collect();
        slopes.sort_by(f64::total_cmp);
        let ramp_rate = slopes.get(slopes.len() / 2).copied().unwrap_or(0.0);
        let cycles = samples
            .windows(2)
            .filter(|w| w[0].v < 0.0 && w[1].v >= 0.0)
            .count();
        Ok(IVTrace {
            samples,
            ramp_rate,
            amplitude,
            cycles,
        })
    }

    /// CSV with header `t,v,i`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 40 + 8);
        out.push_str("t,v,i\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{:e}", s.t, s.v, s.i);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.split(',').map(str::trim).eq(["t", "v", "i"]) => {}
            Some((n, _)) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "expected header `t,v,i`".into(),
                })
            }
            None => return Err(Error::Format("empty trace file".into())),
        }
        let mut samples = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("not a number: {s:?}"),
                })
            };
            samples.push(Sample {
                t: num(fields[0])?,
                v: num(fields[1])?,
                i: num(fields[2])?,
            });
        }
        if samples.is_empty() {
            return Err(Error::Format("trace has a header but no samples".into()));
        }
        Self::from_samples(samples)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Enclosed area of a pinched I–V loop: the shoelace area of each lobe
/// (maximal run of samples with one voltage sign), summed as magnitudes.
/// The two lobes of a pinched loop circulate in opposite senses, so a single
/// signed shoelace over the cycle would cancel them.
pub fn loop_area(points: &[(f64, f64)]) -> f64 {
    fn shoelace(poly: &[(f64, f64)]) -> f64 {
        if poly.len() < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for k in 0..poly.len() {
            let (x0, y0) = poly[k];
            let (x1, y1) = poly[(k + 1) % poly.len()];
            acc += x0 * y1 - x1 * y0;
        }
        0.5 * acc.abs()
    }

    let mut total = 0.0;
    let mut lobe: Vec<(f64, f64)> = Vec::new();
    let mut sign = 0.0;
    for &(v, i) in points {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s != 0.0 && sign != 0.0 && s != sign {
            total += shoelace(&lobe);
            // zero-voltage samples close one lobe and open the next
            let shared = lobe.iter().rev().take_while(|q| q.0 == 0.0).count();
            lobe.drain(..lobe.len() - shared);
        }
        if s != 0.0 {
            sign = s;
        }
        lobe.push((v, i));
    }
    total + shoelace(&lobe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_is_exact_at_landmarks() {
        let n = 1000;
        assert_eq!(triangle_at(0, n), 0.0);
        assert_eq!(triangle_at(250, n), 1.0);
        assert_eq!(triangle_at(500, n), 0.0);
        assert_eq!(triangle_at(750, n), -1.0);
        for k in 0..n {
            assert!((triangle_at(k, n) - triangle(k as f64 / n as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_rates_follow_period() {
        for (period, rate) in [(0.01, 80.0), (0.1, 8.0), (1.0, 0.8)] {
            let cfg = RampConfig::new(0.8, period, 1);
            assert!((cfg.ramp_rate() - rate).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_shape_and_pinch() {
        let p = DeviceParams::table4();
        let tr = simulate_ramp(&p, 0.8, 0.1, 2, 4).unwrap();
        assert_eq!(tr.samples.len(), 2 * 1000 + 1);
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!(tr.samples.iter().all(|s| s.v.abs() <= 0.8));
        for s in tr.samples.iter().filter(|s| s.v == 0.0) {
            assert!(s.i.abs() < 1e-9);
        }
        // the measured slope equals the ramp rate
        let inferred = IVTrace::from_samples(tr.samples.clone()).unwrap();
        assert!((inferred.ramp_rate - 8.0).abs() < 1e-6);
        assert_eq!(inferred.cycles, 2);
        assert!((inferred.amplitude - 0.8).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_trace() {
        let p = DeviceParams::table4();
        let a = simulate_ramp(&p, 0.8, 0.01, 3, 17).unwrap();
        let b = simulate_ramp(&p, 0.8, 0.01, 3, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate_ramp(&p, 0.8, 0.01, 3, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_zero_cycles() {
        let p = DeviceParams::table4();
        assert!(simulate_ramp(&p, 0.8, 0.1, 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let p = DeviceParams::table4();
        let tr = simulate_ramp(&p, 0.8, 0.1, 1, 2).unwrap();
        let back = IVTrace::from_csv(&tr.to_csv()).unwrap();
        assert_eq!(back.samples, tr.samples);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(IVTrace::from_csv(""), Err(Error::Format(_))));
        assert!(matches!(
            IVTrace::from_csv("a,b,c\n1,2,3\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            IVTrace::from_csv("t,v,i\n0,0,0\n1,2\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            IVTrace::from_csv("t,v,i\n"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn loop_area_of_unit_squares() {
        // two opposite-sense half-unit triangles pinched at the origin
        let pts = [
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.0, 0.0),
            (-1.0, 0.0),
            (-1.0, -1.0),
            (0.0, 0.0),
        ];
        let a = loop_area(&pts);
        assert!((a - 1.0).abs() < 1e-12, "{a}");
        // a zero sample shared by both lobes
        let pts = [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)];
        assert!((loop_area(&pts) - 1.0).abs() < 1e-12);
    }
}
