//! Serde adapter for floats that may be non-finite. JSON has no literal for
//! them, so they are written as the strings "inf", "-inf" and "NaN".

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("NaN")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "NaN" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("expected a number, got '{other}'"))),
        },
    }
}

#[derive(serde::Serialize, Deserialize)]
#[serde(transparent)]
struct Cell(#[serde(with = "self")] f64);

/// The same encoding for an optional matrix stored as rows.
pub mod matrix {
    use super::Cell;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|rows| {
                rows.iter()
                    .map(|r| r.iter().map(|&v| Cell(v)).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        let m = Option::<Vec<Vec<Cell>>>::deserialize(d)?;
        Ok(m.map(|rows| rows.into_iter().map(|r| r.into_iter().map(|c| c.0).collect()).collect()))
    }
}
