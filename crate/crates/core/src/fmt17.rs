//! Serde helpers writing floats with 17 significant digits.

use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Deserializer, Serializer};
use serde_json::value::RawValue;

/// `v` in scientific notation with 17 significant digits.
pub fn format(v: f64) -> String {
    format!("{v:.16e}")
}

fn raw(v: f64) -> Result<Box<RawValue>, serde_json::Error> {
    RawValue::from_string(format(v))
}

pub fn serialize_vec<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(S::Error::custom("non-finite value"));
        }
        seq.serialize_element(&raw(v).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

/// Like [`serialize_vec`] but writes non-finite entries as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub fn serialize_vec_lossless<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(values.len()))?;
    for &v in values {
        if v.is_finite() {
            seq.serialize_element(&raw(v).map_err(S::Error::custom)?)?;
        } else {
            seq.serialize_element(non_finite_name(v))?;
        }
    }
    seq.end()
}

fn non_finite_name(v: f64) -> &'static str {
    if v.is_nan() {
        "nan"
    } else if v > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MaybeNumber {
    Number(f64),
    Name(String),
}

pub fn deserialize_vec_lossless<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
    let raw = Vec::<MaybeNumber>::deserialize(de)?;
    raw.into_iter()
        .map(|m| match m {
            MaybeNumber::Number(v) => Ok(v),
            MaybeNumber::Name(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        })
        .collect()
}
