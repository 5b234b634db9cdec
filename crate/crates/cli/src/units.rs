//! Strict parsing of unit-suffixed quantities such as `"50uS"` or `"-1.3 V"`.
//!
//! Physical quantities in the configuration file must be strings carrying a
//! unit of the expected dimension; bare numbers are rejected so that a
//! missing `u` can never silently turn microsiemens into siemens.

use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// A physical dimension with its accepted unit symbols and scale factors.
pub trait Unit {
    const DIMENSION: &'static str;
    /// `(symbol, decimal exponent to SI)`; the first entry is the SI base symbol.
    const SYMBOLS: &'static [(&'static str, i32)];
}

macro_rules! unit {
    ($name:ident, $dim:literal, [$(($sym:literal, $f:expr)),+ $(,)?]) => {
        #[derive(Clone, Copy, Debug, Default, PartialEq)]
        pub struct $name;
        impl Unit for $name {
            const DIMENSION: &'static str = $dim;
            const SYMBOLS: &'static [(&'static str, i32)] = &[$(($sym, $f)),+];
        }
    };
}

unit!(Volt, "voltage", [("V", 0), ("mV", -3)]);
unit!(Siemens, "conductance", [("S", 0), ("mS", -3), ("uS", -6), ("µS", -6), ("nS", -9)]);
unit!(Ampere, "current", [("A", 0), ("mA", -3), ("uA", -6), ("µA", -6), ("nA", -9)]);
unit!(Ohm, "resistance", [("Ohm", 0), ("mOhm", -3), ("kOhm", 3), ("MOhm", 6), ("Ω", 0), ("mΩ", -3), ("kΩ", 3), ("MΩ", 6)]);
unit!(Second, "time", [("s", 0), ("ms", -3), ("us", -6), ("µs", -6), ("ns", -9)]);
unit!(PerVoltSquared, "inverse squared voltage", [("/V^2", 0), ("V^-2", 0)]);

/// Parse `text` as a number followed by one of `U`'s symbols; returns SI.
pub fn parse_quantity<U: Unit>(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let mut symbols: Vec<&(&str, i32)> = U::SYMBOLS.iter().collect();
    symbols.sort_by_key(|(s, _)| std::cmp::Reverse(s.len()));
    let accepted = || U::SYMBOLS.iter().map(|(s, _)| *s).collect::<Vec<_>>().join(", ");
    for &(sym, exponent) in symbols {
        if let Some(num) = t.strip_suffix(sym) {
            let num = num.trim_end();
            let v = scaled_decimal(num, exponent).ok_or_else(|| format!("`{text}`: `{num}` is not a number"))?;
            if !v.is_finite() {
                return Err(format!("`{text}` is not finite"));
            }
            return Ok(v);
        }
    }
    Err(format!("`{text}` is not a {} (expected one of: {})", U::DIMENSION, accepted()))
}

/// `num · 10^exponent`, rounded once: the prefix is folded into the decimal
/// exponent so that `"30uS"` parses to exactly the literal `30e-6`.
fn scaled_decimal(num: &str, exponent: i32) -> Option<f64> {
    if num.is_empty() || !num.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')) {
        return None;
    }
    let (mantissa, exp) = match num.find(['e', 'E']) {
        Some(i) => (&num[..i], num[i + 1..].parse::<i32>().ok()?),
        None => (num, 0),
    };
    mantissa.parse::<f64>().ok()?;
    format!("{mantissa}e{}", exp.checked_add(exponent)?).parse().ok()
}

/// A value in SI units that (de)serializes as a unit-suffixed string.
pub struct Quantity<U> {
    pub si: f64,
    unit: PhantomData<U>,
}

impl<U> Quantity<U> {
    pub fn new(si: f64) -> Self {
        Self { si, unit: PhantomData }
    }
}

impl<U> Clone for Quantity<U> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<U> Copy for Quantity<U> {}

impl<U> PartialEq for Quantity<U> {
    fn eq(&self, other: &Self) -> bool {
        self.si == other.si
    }
}

impl<U: Unit> fmt::Debug for Quantity<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl<U: Unit> fmt::Display for Quantity<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}{}", self.si, U::SYMBOLS[0].0)
    }
}

impl<U: Unit> Serialize for Quantity<U> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, U: Unit> Deserialize<'de> for Quantity<U> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<U>(PhantomData<U>);
        impl<U: Unit> Visitor<'_> for V<U> {
            type Value = Quantity<U>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a {} string with units, e.g. \"{}{}\"", U::DIMENSION, 1, U::SYMBOLS[0].0)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                parse_quantity::<U>(v).map(Quantity::new).map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                Err(E::custom(format!("bare number {v} has no unit; write it as a {} string like \"{v}{}\"", U::DIMENSION, U::SYMBOLS[0].0)))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V(PhantomData))
    }
}

/// A dimensionless fraction: a bare number (`0.3`) or a percentage (`"30%"`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fraction(pub f64);

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Fraction;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a percentage string such as \"30%\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fraction, E> {
                if v.is_finite() {
                    Ok(Fraction(v))
                } else {
                    Err(E::custom("fraction must be finite"))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fraction, E> {
                Ok(Fraction(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fraction, E> {
                Ok(Fraction(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Fraction, E> {
                let num = v
                    .trim()
                    .strip_suffix('%')
                    .ok_or_else(|| E::custom(format!("`{v}`: expected a number or a percentage like \"30%\"")))?;
                let x = scaled_decimal(num.trim_end(), -2).ok_or_else(|| E::custom(format!("`{v}` is not a percentage")))?;
                self.visit_f64(x)
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_prefixed_units() {
        assert_eq!(parse_quantity::<Siemens>("50uS").unwrap(), 50e-6);
        assert_eq!(parse_quantity::<Siemens>("0.05e3uS").unwrap(), 50e-6);
        assert_eq!(parse_quantity::<Siemens>("50 µS").unwrap(), 50e-6);
        assert_eq!(parse_quantity::<Siemens>("2mS").unwrap(), 2e-3);
        assert_eq!(parse_quantity::<Volt>("-1.3V").unwrap(), -1.3);
        assert_eq!(parse_quantity::<Volt>("200mV").unwrap(), 0.2);
        assert_eq!(parse_quantity::<Second>("500us").unwrap(), 500e-6);
        assert_eq!(parse_quantity::<Ohm>("1MOhm").unwrap(), 1e6);
        assert_eq!(parse_quantity::<Ohm>("5.5Ω").unwrap(), 5.5);
        assert_eq!(parse_quantity::<Ampere>("180uA").unwrap(), 180e-6);
        assert_eq!(parse_quantity::<PerVoltSquared>("0.5/V^2").unwrap(), 0.5);
    }

    #[test]
    fn rejects_wrong_or_missing_units() {
        assert!(parse_quantity::<Siemens>("50").is_err());
        assert!(parse_quantity::<Siemens>("50uA").is_err());
        assert!(parse_quantity::<Volt>("1.3v").is_err());
        assert!(parse_quantity::<Volt>("V").is_err());
        assert!(parse_quantity::<Volt>("infV").is_err());
        assert!(parse_quantity::<Siemens>("5xS").is_err());
    }

    #[derive(Deserialize, Serialize, Debug, PartialEq)]
    struct Doc {
        g: Quantity<Siemens>,
        tol: Fraction,
    }

    #[test]
    fn toml_round_trip_and_bare_numbers() {
        let d: Doc = toml::from_str("g = \"30uS\"\ntol = \"30%\"").unwrap();
        assert_eq!(d.g.si, 30e-6);
        assert_eq!(d.tol.0, 0.3);
        let back: Doc = toml::from_str(&toml::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let err = toml::from_str::<Doc>("g = 30e-6\ntol = 0.3").unwrap_err().to_string();
        assert!(err.contains("no unit"), "{err}");
    }
}
