//! Byte-stable JSON: object keys sorted, floats rounded to six significant
//! digits. The service and the CLI both emit through here, so identical
//! results serialize to identical bytes.

use serde::Serialize;
use serde_json::Value;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().expect("formatted float parses")
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                out.push_str(&n.to_string());
            } else {
                match n.as_f64() {
                    Some(f) if f.is_finite() => {
                        let r = round_sig(f);
                        // -0.0 and 0.0 print the same
                        out.push_str(&format!("{:?}", if r == 0.0 { 0.0 } else { r }));
                    }
                    _ => out.push_str("null"),
                }
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}

pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to json");
    let mut out = String::new();
    write_value(&v, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_floats_rounded() {
        let v = json!({"b": 0.1234567891, "a": [1, 2.5, -0.0], "c": {"z": true, "y": null}});
        assert_eq!(to_canonical_json(&v), r#"{"a":[1,2.5,0.0],"b":0.123457,"c":{"y":null,"z":true}}"#);
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_sig(0.543), 0.543);
        assert_eq!(round_sig(123456789.0), 123457000.0);
        assert_eq!(round_sig(-1.00000049), -1.0);
    }

    #[test]
    fn canonical_output_is_stable_under_reparse() {
        let v = json!({"x": 0.1 + 0.2, "n": 3});
        let once = to_canonical_json(&v);
        let twice = to_canonical_json(&serde_json::from_str::<Value>(&once).unwrap());
        assert_eq!(once, twice);
    }
}
