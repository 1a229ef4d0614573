//! Exact time values in nanoseconds.

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serializer};

/// Time in ns, exact rational.
pub type Time = Ratio<i64>;

/// Parse a plain decimal (`"0.35"`, `"-2"`, `"4.000"`) into an exact [`Time`].
pub fn parse_decimal(s: &str) -> Option<Time> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 15 {
        return None;
    }
    let denom = 10i64.checked_pow(frac.len() as u32)?;
    let int_v: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_v: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let num = int_v.checked_mul(denom)?.checked_add(frac_v)?;
    Some(Ratio::new(if neg { -num } else { num }, denom))
}

/// Shortest decimal rendering for report output.
pub fn format(t: Time) -> String {
    let v = *t.numer() as f64 / *t.denom() as f64;
    format!("{v}")
}

pub fn to_f64(t: Time) -> f64 {
    *t.numer() as f64 / *t.denom() as f64
}

/// Serde adapter: accepts JSON numbers or decimal strings, writes numbers.
pub mod serde_time {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Time, D::Error> {
        let text = match Raw::deserialize(d)? {
            // f64 Display is the shortest round-trip decimal and never uses exponents
            Raw::Num(v) => format!("{v}"),
            Raw::Str(s) => s,
        };
        parse_decimal(&text).ok_or_else(|| serde::de::Error::custom(format!("invalid time value `{text}`")))
    }

    pub fn serialize<S: Serializer>(t: &Time, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(to_f64(*t))
    }
}

/// Serde adapter for `Option<Time>`.
pub mod serde_time_opt {
    use super::*;

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Time>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "super::serde_time")] Time);
        Option::<W>::deserialize(d).map(|o| o.map(|w| w.0))
    }

    pub fn serialize<S: Serializer>(t: &Option<Time>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_f64(to_f64(*t)),
            None => s.serialize_none(),
        }
    }
}
