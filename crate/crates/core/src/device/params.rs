use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and variability parameters of the memristor model.
///
/// Serialized as a flat JSON object keyed by the conventional parameter names
/// (`roff`, `ri`, ..., `H0`, `Vs`, `Vr0`, `Vt`, ..., `RPP`) plus `rext`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Series resistance contribution in the off state (ohms).
    pub roff: f64,
    /// Fixed internal series resistance (ohms).
    pub ri: f64,
    /// Series resistance contribution in the on state (ohms).
    pub ron: f64,
    /// On-branch current amplitude (amperes).
    pub ion0: f64,
    /// Off-branch current amplitude (amperes).
    pub ioff0: f64,
    /// On-branch sinh voltage scale (volts).
    pub aon: f64,
    /// Off-branch sinh voltage scale (volts).
    pub aoff: f64,
    /// Initial state.
    #[serde(rename = "H0")]
    pub h0: f64,
    /// Set-rate slope (1/V).
    pub etas: f64,
    /// Reset-rate slope (1/V).
    pub etar: f64,
    /// Set threshold (volts).
    #[serde(rename = "Vs")]
    pub vs: f64,
    /// Reset threshold (volts).
    #[serde(rename = "Vr0")]
    pub vr0: f64,
    /// Dead-zone half width (volts).
    #[serde(rename = "Vt")]
    pub vt: f64,
    /// Off-branch current clamp (amperes).
    pub isb: f64,
    /// Reset state exponent.
    pub gam: f64,
    /// Relative std-dev of `ion0`.
    pub sigion: f64,
    /// Relative std-dev of `ioff0`.
    pub sigioff: f64,
    /// Absolute std-dev of `vr0` (volts).
    pub sigvr: f64,
    /// Absolute std-dev of `isb` (amperes).
    pub sigsb: f64,
    /// Parallel leakage resistance (ohms).
    #[serde(rename = "RPP")]
    pub rpp: f64,
    /// External series resistor (ohms).
    #[serde(default = "default_rext")]
    pub rext: f64,
}

fn default_rext() -> f64 {
    DeviceParams::DEFAULT_REXT
}

/// Parameter identifiers, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamName {
    Roff,
    Ri,
    Ron,
    Ion0,
    Ioff0,
    Aon,
    Aoff,
    H0,
    Etas,
    Etar,
    Vs,
    Vr0,
    Vt,
    Isb,
    Gam,
    Sigion,
    Sigioff,
    Sigvr,
    Sigsb,
    Rpp,
    Rext,
}

impl ParamName {
    pub const ALL: [ParamName; 21] = [
        ParamName::Roff,
        ParamName::Ri,
        ParamName::Ron,
        ParamName::Ion0,
        ParamName::Ioff0,
        ParamName::Aon,
        ParamName::Aoff,
        ParamName::H0,
        ParamName::Etas,
        ParamName::Etar,
        ParamName::Vs,
        ParamName::Vr0,
        ParamName::Vt,
        ParamName::Isb,
        ParamName::Gam,
        ParamName::Sigion,
        ParamName::Sigioff,
        ParamName::Sigvr,
        ParamName::Sigsb,
        ParamName::Rpp,
        ParamName::Rext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Roff => "roff",
            ParamName::Ri => "ri",
            ParamName::Ron => "ron",
            ParamName::Ion0 => "ion0",
            ParamName::Ioff0 => "ioff0",
            ParamName::Aon => "aon",
            ParamName::Aoff => "aoff",
            ParamName::H0 => "H0",
            ParamName::Etas => "etas",
            ParamName::Etar => "etar",
            ParamName::Vs => "Vs",
            ParamName::Vr0 => "Vr0",
            ParamName::Vt => "Vt",
            ParamName::Isb => "isb",
            ParamName::Gam => "gam",
            ParamName::Sigion => "sigion",
            ParamName::Sigioff => "sigioff",
            ParamName::Sigvr => "sigvr",
            ParamName::Sigsb => "sigsb",
            ParamName::Rpp => "RPP",
            ParamName::Rext => "rext",
        }
    }

    /// Case-insensitive lookup by name.
    pub fn parse(name: &str) -> Option<ParamName> {
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl DeviceParams {
    pub const DEFAULT_REXT: f64 = 10_000.0;

    /// Literature starting point used to seed the fit.
    pub fn table3() -> Self {
        DeviceParams {
            roff: 10.0,
            ri: 50.0,
            ron: 10.0,
            ion0: 4.95e-6,
            ioff0: 2.48e-6,
            aon: 1.71,
            aoff: 2.58,
            h0: 0.0,
            etas: 50.0,
            etar: 250.0,
            vs: 0.2,
            vr0: -0.02,
            vt: 0.05,
            isb: 7e-6,
            gam: 0.35,
            sigion: 0.1,
            sigioff: 0.25,
            sigvr: 0.01,
            sigsb: 0.02,
            rpp: 1e10,
            rext: Self::DEFAULT_REXT,
        }
    }

    /// Parameters fitted to the commercial device, with variability.
    pub fn table4() -> Self {
        DeviceParams {
            roff: 10.0,
            ri: 50.0,
            ron: 10.0,
            ion0: 50e-6,
            ioff0: 2.5e-6,
            aon: 1.72,
            aoff: 2.7,
            h0: 0.0,
            etas: 17.0,
            etar: 70.0,
            vs: 0.14,
            vr0: -0.03,
            vt: 0.1,
            isb: 6.2e-6,
            gam: 0.29,
            sigion: 0.05,
            sigioff: 0.07,
            sigvr: 0.01,
            sigsb: 2.04e-7,
            rpp: 1e10,
            rext: Self::DEFAULT_REXT,
        }
    }

    /// Same parameters with every variability sigma set to zero.
    pub fn without_variability(mut self) -> Self {
        self.sigion = 0.0;
        self.sigioff = 0.0;
        self.sigvr = 0.0;
        self.sigsb = 0.0;
        self
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::Roff => self.roff,
            ParamName::Ri => self.ri,
            ParamName::Ron => self.ron,
            ParamName::Ion0 => self.ion0,
            ParamName::Ioff0 => self.ioff0,
            ParamName::Aon => self.aon,
            ParamName::Aoff => self.aoff,
            ParamName::H0 => self.h0,
            ParamName::Etas => self.etas,
            ParamName::Etar => self.etar,
            ParamName::Vs => self.vs,
            ParamName::Vr0 => self.vr0,
            ParamName::Vt => self.vt,
            ParamName::Isb => self.isb,
            ParamName::Gam => self.gam,
            ParamName::Sigion => self.sigion,
            ParamName::Sigioff => self.sigioff,
            ParamName::Sigvr => self.sigvr,
            ParamName::Sigsb => self.sigsb,
            ParamName::Rpp => self.rpp,
            ParamName::Rext => self.rext,
        }
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        let slot = match name {
            ParamName::Roff => &mut self.roff,
            ParamName::Ri => &mut self.ri,
            ParamName::Ron => &mut self.ron,
            ParamName::Ion0 => &mut self.ion0,
            ParamName::Ioff0 => &mut self.ioff0,
            ParamName::Aon => &mut self.aon,
            ParamName::Aoff => &mut self.aoff,
            ParamName::H0 => &mut self.h0,
            ParamName::Etas => &mut self.etas,
            ParamName::Etar => &mut self.etar,
            ParamName::Vs => &mut self.vs,
            ParamName::Vr0 => &mut self.vr0,
            ParamName::Vt => &mut self.vt,
            ParamName::Isb => &mut self.isb,
            ParamName::Gam => &mut self.gam,
            ParamName::Sigion => &mut self.sigion,
            ParamName::Sigioff => &mut self.sigioff,
            ParamName::Sigvr => &mut self.sigvr,
            ParamName::Sigsb => &mut self.sigsb,
            ParamName::Rpp => &mut self.rpp,
            ParamName::Rext => &mut self.rext,
        };
        *slot = value;
    }

    /// Every parameter multiplied by `factor` (except `rext`, which belongs to
    /// the test fixture rather than the device).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for name in ParamName::ALL {
            if name != ParamName::Rext {
                out.set(name, self.get(name) * factor);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("roff", self.roff),
            ("ri", self.ri),
            ("ron", self.ron),
            ("RPP", self.rpp),
            ("rext", self.rext),
            ("aon", self.aon),
            ("aoff", self.aoff),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.h0) {
            return bad(format!("H0 must lie in [0, 1], got {}", self.h0));
        }
        for (name, v) in [
            ("sigion", self.sigion),
            ("sigioff", self.sigioff),
            ("sigvr", self.sigvr),
            ("sigsb", self.sigsb),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.ioff0 > 0.0 && self.ion0 > self.ioff0) {
            return bad(format!(
                "need ion0 > ioff0 > 0, got ion0={} ioff0={}",
                self.ion0, self.ioff0
            ));
        }
        for name in ParamName::ALL {
            if !self.get(name).is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: DeviceParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Format(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    /// Short stable fingerprint of the parameter values (hex of a 64-bit hash
    /// over the IEEE bit patterns).
    pub fn fingerprint(&self) -> String {
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        for name in ParamName::ALL {
            for b in self.get(name).to_bits().to_le_bytes() {
                acc ^= b as u64;
                acc = acc.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{acc:016x}")
    }
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::table4()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_valid() {
        DeviceParams::table3().validate().unwrap();
        DeviceParams::table4().validate().unwrap();
    }

    #[test]
    fn json_uses_conventional_names() {
        let json = DeviceParams::table4().to_json();
        for key in [
            "\"H0\"", "\"Vs\"", "\"Vr0\"", "\"Vt\"", "\"RPP\"", "\"ion0\"",
        ] {
            assert!(json.contains(key), "missing {key}");
        }
        let back = DeviceParams::from_json(&json).unwrap();
        assert_eq!(back, DeviceParams::table4());
    }

    #[test]
    fn rext_defaults_when_absent() {
        let mut v: serde_json::Value =
            serde_json::from_str(&DeviceParams::table4().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("rext");
        let p: DeviceParams = serde_json::from_value(v).unwrap();
        assert_eq!(p.rext, 10_000.0);
    }

    #[test]
    fn rejects_bad_ordering() {
        let mut p = DeviceParams::table4();
        p.ioff0 = p.ion0 * 2.0;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::table4();
        p.h0 = 1.5;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::table4();
        p.sigion = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn name_lookup_round_trips() {
        for name in ParamName::ALL {
            assert_eq!(ParamName::parse(name.as_str()), Some(name));
        }
        assert_eq!(ParamName::parse("vr0"), Some(ParamName::Vr0));
        assert_eq!(ParamName::parse("nope"), None);
    }

    #[test]
    fn scaling_leaves_rext() {
        let p = DeviceParams::table4().scaled(1.5);
        assert_eq!(p.rext, 10_000.0);
        assert!((p.ion0 - 75e-6).abs() < 1e-18);
        assert!((p.vr0 + 0.045).abs() < 1e-15);
    }
}
