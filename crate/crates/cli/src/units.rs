//! Dimensioned scalars written as `"<number> <unit>"` strings.
//!
//! Bare numbers are rejected for dimensioned keys so a scenario never
//! depends on an implied unit. Values are held in the library's base units
//! (nT, s, Hz, rad, W, m) and serialize back in that unit.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

fn parse(s: &str, table: &[(&str, f64)], what: &str) -> Result<f64, String> {
    let s = s.trim();
    let mut units: Vec<&(&str, f64)> = table.iter().collect();
    units.sort_by_key(|(u, _)| std::cmp::Reverse(u.len()));
    for (unit, scale) in units {
        if let Some(num) = s.strip_suffix(unit) {
            let num = num.trim();
            return match num.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v * scale),
                _ => Err(format!("invalid {what} value {s:?}")),
            };
        }
    }
    let known: Vec<&str> = table.iter().map(|(u, _)| *u).collect();
    Err(format!("{what} {s:?} needs one of the units {}", known.join(", ")))
}

macro_rules! quantity {
    ($name:ident, $what:literal, $base:literal, [$(($u:literal, $k:expr)),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub f64);

        impl $name {
            const UNITS: &'static [(&'static str, f64)] = &[$(($u, $k)),+];

            pub fn parse(s: &str) -> Result<Self, String> {
                parse(s, Self::UNITS, $what).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $base)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $name;
                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        write!(f, "a {} with a unit, e.g. \"1 {}\"", $what, $base)
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> Result<$name, E> {
                        $name::parse(v).map_err(E::custom)
                    }
                    fn visit_f64<E: de::Error>(self, v: f64) -> Result<$name, E> {
                        Err(E::custom(format!("{} {v} has no unit; write e.g. \"{v} {}\"", $what, $base)))
                    }
                    fn visit_i64<E: de::Error>(self, v: i64) -> Result<$name, E> {
                        self.visit_f64(v as f64)
                    }
                    fn visit_u64<E: de::Error>(self, v: u64) -> Result<$name, E> {
                        self.visit_f64(v as f64)
                    }
                }
                d.deserialize_any(V)
            }
        }
    };
}

quantity!(Field, "magnetic field", "nT", [("nT", 1.0), ("pT", 1e-3), ("uT", 1e3), ("µT", 1e3), ("mT", 1e6), ("T", 1e9)]);
quantity!(Time, "time", "s", [("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("µs", 1e-6), ("ns", 1e-9)]);
quantity!(Freq, "frequency", "Hz", [("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)]);
quantity!(Angle, "angle", "rad", [("rad", 1.0), ("mrad", 1e-3), ("deg", std::f64::consts::PI / 180.0), ("°", std::f64::consts::PI / 180.0)]);
quantity!(Power, "power", "W", [("W", 1.0), ("mW", 1e-3), ("uW", 1e-6), ("µW", 1e-6)]);
quantity!(Length, "length", "m", [("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6), ("µm", 1e-6), ("nm", 1e-9)]);
