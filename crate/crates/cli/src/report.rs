//! Canonical report serialisation: sorted keys, numbers rounded to 12
//! significant digits, non-finite values as `null`.

use bellgen_core::quantum::{Mat4, C64};
use serde::Serialize;
use serde_json::Value;

pub const SIGNIFICANT_DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .map(round_sig)
            .and_then(serde_json::Number::from_f64)
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Serialisable value → canonical JSON value.
pub fn to_canonical<T: Serialize>(value: &T) -> Value {
    canonicalize(serde_json::to_value(value).expect("report serialises"))
}

/// Pretty JSON with a trailing newline.
pub fn render_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    s
}

pub fn complex_pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Row-major `[re, im]` pairs.
pub fn matrix_pairs(m: &Mat4) -> Vec<[f64; 2]> {
    (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| complex_pair(m[(i, j)]))
        .collect()
}

/// CSV cell for a number: rounded, `inf`/`-inf`/`nan` for non-finite.
pub fn csv_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        round_sig(x).to_string()
    }
}

/// Renders a header and rows through the `csv` writer.
pub fn render_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.234_567_890_123_456), 1.234_567_890_12);
        assert_eq!(round_sig(-2.5e-17), -2.5e-17);
        assert!(round_sig(f64::INFINITY).is_infinite());
    }

    #[test]
    fn canonical_form_sorts_and_nulls() {
        let v = to_canonical(&json!({"b": f64::NAN, "a": [0.1 + 0.2, 3]}));
        assert_eq!(v.to_string(), r#"{"a":[0.3,3],"b":null}"#);
    }

    #[test]
    fn csv_sentinels() {
        let s = render_csv(&["x", "y"], [vec![csv_number(1.0), csv_number(f64::INFINITY)]]);
        assert_eq!(s, "x,y\n1,inf\n");
    }
}
