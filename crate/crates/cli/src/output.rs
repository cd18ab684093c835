//! Locale-independent number formatting with 12 significant digits.

use serde_json::Value;

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}")
        .parse()
        .expect("round-trips through LowerExp")
}

/// Shortest decimal representation of `round12(x)`.
pub fn fmt12(x: f64) -> String {
    let r = round12(x);
    if r == 0.0 {
        return "0".into();
    }
    if !r.is_finite() {
        return r.to_string();
    }
    let mag = r.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Applies [`round12`] to every float in a JSON tree.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().expect("f64"));
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect())
        }
        other => other,
    }
}

pub fn json_string<T: serde::Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("serializable output");
    let mut s = serde_json::to_string_pretty(&round_json(tree)).expect("json");
    s.push('\n');
    s
}
