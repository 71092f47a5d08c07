//! Structured (attribute → values) descriptions.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::unit_f64;

const KEY_SEP: &str = " : ";
const VALUE_SEP: &str = " , ";
const FIELD_SEP: &str = " ; ";

/// Ordered attribute/value pairs with unique keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JsonDescription {
    fields: Vec<(String, Vec<String>)>,
}

impl JsonDescription {
    pub fn new(fields: Vec<(String, Vec<String>)>) -> Result<Self> {
        for (i, (k, _)) in fields.iter().enumerate() {
            if fields[..i].iter().any(|(other, _)| other == k) {
                return Err(Error::Validation(format!("duplicate attribute key `{k}`")));
            }
        }
        Ok(JsonDescription { fields })
    }

    pub fn fields(&self) -> &[(String, Vec<String>)] {
        &self.fields
    }

    pub fn value_count(&self) -> usize {
        self.fields.iter().map(|(_, v)| v.len()).sum()
    }

    /// From a JSON object; a string value becomes a one-element list and
    /// other scalars are rendered as text.
    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Validation("JSON description must be an object".into()))?;
        let mut fields = Vec::with_capacity(obj.len());
        for (k, v) in obj {
            let values = match v {
                Value::Array(items) => items.iter().map(scalar_text).collect::<Result<Vec<_>>>()?,
                Value::Null => Vec::new(),
                other => vec![scalar_text(other)?],
            };
            fields.push((k.clone(), values));
        }
        JsonDescription::new(fields)
    }

    pub fn to_value(&self) -> Value {
        let mut m = serde_json::Map::new();
        for (k, vs) in &self.fields {
            m.insert(k.clone(), Value::Array(vs.iter().cloned().map(Value::String).collect()));
        }
        Value::Object(m)
    }
}

fn scalar_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(Error::Validation(format!("unsupported attribute value {other}"))),
    }
}

/// `"key1 : v1 , v2 ; key2 : v3"`; a key without values renders as `"key :"`.
pub fn flatten_json(j: &JsonDescription) -> String {
    j.fields
        .iter()
        .map(|(k, vs)| {
            if vs.is_empty() {
                format!("{k}{}", KEY_SEP.trim_end())
            } else {
                format!("{k}{KEY_SEP}{}", vs.join(VALUE_SEP))
            }
        })
        .collect::<Vec<_>>()
        .join(FIELD_SEP)
}

/// Inverse of [`flatten_json`] on its canonical output.
pub fn parse_flat(s: &str) -> Result<JsonDescription> {
    if s.is_empty() {
        return JsonDescription::new(Vec::new());
    }
    let empty_suffix = KEY_SEP.trim_end();
    let fields = s
        .split(FIELD_SEP)
        .map(|part| match part.split_once(KEY_SEP) {
            Some((k, vs)) => Ok((k.to_string(), vs.split(VALUE_SEP).map(str::to_string).collect())),
            None => part
                .strip_suffix(empty_suffix)
                .map(|k| (k.to_string(), Vec::new()))
                .ok_or_else(|| Error::Validation(format!("malformed flattened field `{part}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    JsonDescription::new(fields)
}

/// Value dropout followed by key-order permutation.
///
/// Each of the `n_corrupt` variants keeps every value independently with
/// probability `1 − p_drop` and removes keys that lost all their values
/// (keys that were empty to begin with are kept). Each variant is then
/// emitted in `n_perm` key orders, the first being the surviving original
/// order. Output length is exactly `n_corrupt × n_perm`.
pub fn augment_json<R: RngCore + ?Sized>(
    j: &JsonDescription,
    p_drop: f64,
    n_corrupt: usize,
    n_perm: usize,
    rng: &mut R,
) -> Result<Vec<JsonDescription>> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::InvalidArgument(format!("p_drop must lie in [0, 1), got {p_drop}")));
    }
    if n_corrupt == 0 || n_perm == 0 {
        return Err(Error::InvalidArgument("n_corrupt and n_perm must be at least 1".into()));
    }
    if j.value_count() == 0 {
        return Err(Error::InvalidArgument(
            "every value list is empty; augmentation would produce only empty variants".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_corrupt * n_perm);
    for _ in 0..n_corrupt {
        let mut kept = Vec::with_capacity(j.fields.len());
        for (k, vs) in &j.fields {
            if vs.is_empty() {
                kept.push((k.clone(), Vec::new()));
                continue;
            }
            let survivors: Vec<String> = vs.iter().filter(|_| unit_f64(rng) >= p_drop).cloned().collect();
            if !survivors.is_empty() {
                kept.push((k.clone(), survivors));
            }
        }
        out.push(JsonDescription { fields: kept.clone() });
        for _ in 1..n_perm {
            let mut perm = kept.clone();
            perm.shuffle(rng);
            out.push(JsonDescription { fields: perm });
        }
    }
    Ok(out)
}
