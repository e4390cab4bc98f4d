use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Outcome of one bound check: `passed` iff `bound - measured >= -1e-9`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub check_name: String,
    #[serde(with = "float_repr")]
    pub measured: f64,
    #[serde(with = "float_repr")]
    pub bound: f64,
    #[serde(with = "float_repr")]
    pub margin: f64,
    pub passed: bool,
    /// The bound is infinite (e.g. a KL term with a support violation).
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub context: BTreeMap<String, serde_json::Value>,
}

pub const MARGIN_TOL: f64 = 1e-9;

impl BoundReport {
    pub fn new(check_name: &str, measured: f64, bound: f64) -> Self {
        let margin = bound - measured;
        Self {
            check_name: check_name.to_string(),
            measured,
            bound,
            margin,
            passed: margin >= -MARGIN_TOL,
            degenerate: bound.is_infinite(),
            context: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.context.insert(key.to_string(), value.into());
        self
    }
}

/// Floats as JSON numbers, with non-finite values spelled out as strings so
/// that infinite bounds survive a round trip.
pub(crate) mod float_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            ser.serialize_f64(*x)
        } else if x.is_nan() {
            ser.serialize_str("nan")
        } else if *x > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a float: {other}"))),
            },
        }
    }
}
