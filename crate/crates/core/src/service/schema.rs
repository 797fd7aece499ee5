//! JSON-schema-style documents: inference from a sample and a validator for the
//! subset the inference produces (`type`, `properties`, `required`, `items`).

use serde_json::{json, Map, Value};

use crate::{Error, Result};

const KNOWN_TYPES: [&str; 7] = ["object", "array", "string", "number", "integer", "boolean", "null"];

/// Infers a schema from a sample. Objects list every key as required, arrays take
/// the type of their first element.
pub fn infer_schema(sample: &Value) -> Value {
    match sample {
        Value::Object(map) => {
            let properties: Map<String, Value> = map.iter().map(|(k, v)| (k.clone(), infer_schema(v))).collect();
            let required: Vec<Value> = map.keys().cloned().map(Value::String).collect();
            json!({"type": "object", "properties": properties, "required": required})
        }
        Value::Array(items) => match items.first() {
            Some(first) => json!({"type": "array", "items": infer_schema(first)}),
            None => json!({"type": "array"}),
        },
        Value::String(_) => json!({"type": "string"}),
        Value::Number(n) if n.is_i64() || n.is_u64() => json!({"type": "integer"}),
        Value::Number(_) => json!({"type": "number"}),
        Value::Bool(_) => json!({"type": "boolean"}),
        Value::Null => json!({"type": "null"}),
    }
}

pub fn infer_from_bytes(payload: &[u8]) -> Result<Value> {
    let sample: Value = serde_json::from_slice(payload).map_err(|e| Error::NotJson(e.to_string()))?;
    Ok(infer_schema(&sample))
}

/// Accepts a schema given as a JSON value or as JSON text, and checks that it is a
/// well-formed document of the supported subset.
pub fn parse_schema(raw: &Value) -> Result<Value> {
    let schema = match raw {
        Value::String(text) => serde_json::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))?,
        other => other.clone(),
    };
    check_schema(&schema, "$")?;
    Ok(schema)
}

fn check_schema(schema: &Value, path: &str) -> Result<()> {
    let obj = schema.as_object().ok_or_else(|| Error::InvalidSchema(format!("{path}: schema must be an object")))?;
    if let Some(t) = obj.get("type") {
        let names: Vec<&Value> = match t {
            Value::Array(v) => v.iter().collect(),
            other => vec![other],
        };
        for n in names {
            if !n.as_str().is_some_and(|s| KNOWN_TYPES.contains(&s)) {
                return Err(Error::InvalidSchema(format!("{path}: unknown type {n}")));
            }
        }
    }
    if let Some(props) = obj.get("properties") {
        let props = props.as_object().ok_or_else(|| Error::InvalidSchema(format!("{path}: properties must be an object")))?;
        for (k, v) in props {
            check_schema(v, &format!("{path}.{k}"))?;
        }
    }
    if let Some(req) = obj.get("required") {
        if !req.as_array().is_some_and(|a| a.iter().all(Value::is_string)) {
            return Err(Error::InvalidSchema(format!("{path}: required must be a list of names")));
        }
    }
    if let Some(items) = obj.get("items") {
        check_schema(items, &format!("{path}[]"))?;
    }
    Ok(())
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

pub fn validate(schema: &Value, doc: &Value) -> Result<()> {
    validate_at(schema, doc, "$").map_err(Error::SchemaViolation)
}

fn validate_at(schema: &Value, doc: &Value, path: &str) -> std::result::Result<(), String> {
    let Some(obj) = schema.as_object() else { return Ok(()) };
    if let Some(t) = obj.get("type") {
        let ok = match t {
            Value::String(s) => type_matches(s, doc),
            Value::Array(v) => v.iter().filter_map(Value::as_str).any(|s| type_matches(s, doc)),
            _ => true,
        };
        if !ok {
            return Err(format!("{path}: expected {t}, found {doc}"));
        }
    }
    if let Value::Object(map) = doc {
        if let Some(req) = obj.get("required").and_then(Value::as_array) {
            for k in req.iter().filter_map(Value::as_str) {
                if !map.contains_key(k) {
                    return Err(format!("{path}: missing required field {k:?}"));
                }
            }
        }
        if let Some(props) = obj.get("properties").and_then(Value::as_object) {
            for (k, sub) in props {
                if let Some(v) = map.get(k) {
                    validate_at(sub, v, &format!("{path}.{k}"))?;
                }
            }
        }
    }
    if let (Value::Array(items), Some(item_schema)) = (doc, obj.get("items")) {
        for (i, v) in items.iter().enumerate() {
            validate_at(item_schema, v, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn infer_flat_object() {
        let s = infer_schema(&json!({"temp": 21.5, "unit": "C"}));
        assert_eq!(s["type"], "object");
        assert_eq!(s["properties"]["temp"]["type"], "number");
        assert_eq!(s["properties"]["unit"]["type"], "string");
        let mut req: Vec<&str> = s["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        req.sort();
        assert_eq!(req, vec!["temp", "unit"]);
    }

    #[test]
    fn infer_integer_array() {
        assert_eq!(infer_schema(&json!([1, 2, 3])), json!({"type": "array", "items": {"type": "integer"}}));
    }

    #[test]
    fn binary_is_not_json() {
        assert!(matches!(infer_from_bytes(&[0xff, 0x00, 0x13]), Err(Error::NotJson(_))));
    }

    #[test]
    fn validation() {
        let schema = infer_schema(&json!({"temp": 21.5, "unit": "C"}));
        validate(&schema, &json!({"temp": 3, "unit": "K"})).unwrap();
        assert!(matches!(validate(&schema, &json!({"unit": "K"})), Err(Error::SchemaViolation(m)) if m.contains("temp")));
        assert!(validate(&schema, &json!({"temp": "hot", "unit": "K"})).is_err());
        assert!(validate(&schema, &json!([1])).is_err());
        let arr = infer_schema(&json!([1]));
        assert!(validate(&arr, &json!([1, 2.5])).is_err());
    }

    #[test]
    fn schema_parsing() {
        assert!(matches!(parse_schema(&json!("{not json")), Err(Error::InvalidSchema(_))));
        assert!(matches!(parse_schema(&json!(5)), Err(Error::InvalidSchema(_))));
        assert!(matches!(parse_schema(&json!({"type": "tensor"})), Err(Error::InvalidSchema(_))));
        let s = parse_schema(&json!(r#"{"type":"object","required":["temp"]}"#)).unwrap();
        assert_eq!(s["required"][0], "temp");
    }

    proptest! {
        #[test]
        fn a_sample_satisfies_its_inferred_schema(
            m in proptest::collection::btree_map("[a-z]{1,5}", prop_oneof![
                any::<i64>().prop_map(Value::from),
                proptest::num::f64::NORMAL.prop_map(Value::from),
                "[a-z]{0,5}".prop_map(Value::from),
                any::<bool>().prop_map(Value::from),
            ], 0..6)
        ) {
            let doc = Value::Object(m.into_iter().collect());
            prop_assert!(validate(&infer_schema(&doc), &doc).is_ok());
        }
    }
}
