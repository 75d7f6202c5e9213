//! Identifiers and simulated time.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Parses a 128-bit identifier: `0x`-prefixed hex or plain decimal.
fn parse_u128(s: &str) -> Option<u128> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u128::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

macro_rules! id128 {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub u128);

        impl $name {
            pub const fn new(value: u128) -> Self {
                Self(value)
            }

            pub const fn value(self) -> u128 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:#x}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:#x})", stringify!($name), self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                parse_u128(s)
                    .map(Self)
                    .ok_or_else(|| Error::Parse(format!("invalid {} `{}`", $what, s)))
            }
        }

        impl From<u128> for $name {
            fn from(v: u128) -> Self {
                Self(v)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Repr {
                    Num(u64),
                    Text(String),
                }
                match Repr::deserialize(d)? {
                    Repr::Num(n) => Ok(Self(n as u128)),
                    Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

id128!(
    /// A user identifier drawn from the circular 128-bit ID space.
    Uid,
    "uid"
);
id128!(
    /// A peer identifier in the same 128-bit space as users.
    PeerId,
    "peer id"
);

/// A point on the simulated clock, in microseconds.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

/// A span of simulated time, in microseconds.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimDuration(pub u64);

const MICROS_PER_SEC: f64 = 1_000_000.0;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s.max(0.0) * MICROS_PER_SEC).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    /// Time elapsed since `earlier`; zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);
    pub const WEEK: SimDuration = SimDuration(7 * 24 * 3600 * 1_000_000);

    pub fn from_secs_f64(s: f64) -> Self {
        SimDuration((s.max(0.0) * MICROS_PER_SEC).round() as u64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimDuration((ms.max(0.0) * 1000.0).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn times(self, k: u64) -> SimDuration {
        SimDuration(self.0.saturating_mul(k))
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, d: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(d.0))
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, d: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(d.0))
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        self.since(rhs)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.6}s", self.as_secs_f64())
    }
}

impl fmt::Debug for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// SplitMix64 finalizer.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed and a sequence of words. Used to derive
/// per-message randomness that does not depend on event interleaving.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

pub(crate) fn fold128(v: u128) -> u64 {
    (v as u64) ^ ((v >> 64) as u64).rotate_left(17)
}

/// Uniform value in `[0, 1)` from a hash.
pub(crate) fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uid_parses_hex_and_decimal() {
        assert_eq!("0x10".parse::<Uid>().unwrap(), Uid(16));
        assert_eq!("16".parse::<Uid>().unwrap(), Uid(16));
        assert_eq!(
            "0xffffffffffffffffffffffffffffffff".parse::<Uid>().unwrap(),
            Uid(u128::MAX)
        );
        assert!("zz".parse::<Uid>().is_err());
        assert!("".parse::<PeerId>().is_err());
    }

    #[test]
    fn uid_serde_round_trip() {
        let u = Uid(0xdead_beef);
        let s = serde_json::to_string(&u).unwrap();
        assert_eq!(s, "\"0xdeadbeef\"");
        assert_eq!(serde_json::from_str::<Uid>(&s).unwrap(), u);
        assert_eq!(serde_json::from_str::<Uid>("42").unwrap(), Uid(42));
    }

    #[test]
    fn time_arithmetic_saturates() {
        let t = SimTime::from_secs_f64(1.5);
        assert_eq!(t.0, 1_500_000);
        assert_eq!(
            (t + SimDuration::from_millis_f64(250.0)).as_secs_f64(),
            1.75
        );
        assert_eq!(SimTime::ZERO.since(t), SimDuration::ZERO);
        assert_eq!(SimTime(u64::MAX) + SimDuration(5), SimTime(u64::MAX));
    }
}
