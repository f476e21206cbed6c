use serde_json::Value;

use crate::domain::{Dimension, SoftScores};

/// Extracts the first JSON object in `raw` that carries all six dimension
/// fields with values in [0, 1]. Surrounding prose is tolerated. Numbers,
/// numeric strings and booleans are accepted as values.
pub fn parse_response(raw: &str) -> Option<SoftScores> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(scores) = scores_from_value(&value) {
                return Some(scores);
            }
        }
    }
    None
}

fn scores_from_value(value: &Value) -> Option<SoftScores> {
    let obj = value.as_object()?;
    let mut scores = [0.0; 6];
    for dim in Dimension::ALL {
        let v = coerce(obj.get(dim.name())?)?;
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        scores[dim.index()] = v;
    }
    Some(SoftScores(scores))
}

fn coerce(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
        _ => None,
    }
}
