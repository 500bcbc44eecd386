//! Extraction of the structured verdict from free-form model output.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDescription {
    pub label: String,
    pub description: String,
}

/// The schema fields of a model reply plus any leniency warnings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictFields {
    pub classification: u8,
    pub scene_context: String,
    pub justification: String,
    pub objects: Vec<ObjectDescription>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl VerdictFields {
    /// Schema-conformant JSON for these fields (warnings excluded).
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "classification": self.classification,
            "scene_context": self.scene_context,
            "justification": self.justification,
            "objects": self.objects,
        })
        .to_string()
    }

    /// Object list flattened to one line: `label description; label description`.
    pub fn objects_text(&self) -> String {
        self.objects
            .iter()
            .map(|o| format!("{} {}", o.label, o.description).trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("unparseable verdict: no JSON object found")]
    NoJson,
    #[error("unparseable verdict: classification missing")]
    MissingClassification,
    #[error("unparseable verdict: classification {0} is not 0 or 1")]
    InvalidClassification(String),
}

/// Byte ranges of successive balanced `{...}` spans, honouring JSON string
/// quoting so braces inside strings do not count.
fn balanced_objects(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    std::iter::from_fn(move || {
        while start < bytes.len() {
            let open = start + bytes[start..].iter().position(|&b| b == b'{')?;
            let mut depth = 0usize;
            let mut in_str = false;
            let mut escaped = false;
            let mut end = None;
            for (i, &b) in bytes.iter().enumerate().skip(open) {
                if in_str {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_str = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_str = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            end = Some(i);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            start = open + 1;
            if let Some(end) = end {
                return Some(&raw[open..=end]);
            }
        }
        None
    })
}

fn first_object(raw: &str) -> Option<Map<String, Value>> {
    balanced_objects(raw).find_map(|s| match serde_json::from_str::<Value>(s) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    })
}

fn classification(v: &Value) -> Result<u8, ParseError> {
    let as_text = v.to_string();
    let n = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        Value::Bool(_) | Value::Null | Value::Array(_) | Value::Object(_) => None,
    };
    match n {
        Some(0.0) => Ok(0),
        Some(1.0) => Ok(1),
        _ => Err(ParseError::InvalidClassification(as_text)),
    }
}

fn text_field(obj: &Map<String, Value>, key: &str, warnings: &mut Vec<String>) -> String {
    match obj.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => {
            warnings.push(format!("{key} missing"));
            String::new()
        }
        Some(other) => {
            warnings.push(format!("{key} is not a string"));
            other.to_string()
        }
    }
}

fn objects_field(obj: &Map<String, Value>, warnings: &mut Vec<String>) -> Vec<ObjectDescription> {
    let items = match obj.get("objects") {
        Some(Value::Array(items)) => items,
        Some(Value::Null) | None => {
            warnings.push("objects missing".into());
            return Vec::new();
        }
        Some(_) => {
            warnings.push("objects is not a list".into());
            return Vec::new();
        }
    };
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let label = item.get("label").and_then(Value::as_str);
        let Some(label) = label else {
            warnings.push(format!("objects[{i}] has no label"));
            continue;
        };
        let description = match item.get("description").and_then(Value::as_str) {
            Some(d) => d.to_string(),
            None => {
                warnings.push(format!("objects[{i}] has no description"));
                String::new()
            }
        };
        out.push(ObjectDescription {
            label: label.to_string(),
            description,
        });
    }
    out
}

/// Finds the first JSON object in `raw` (prose and code fences around it are
/// ignored) and reads the verdict fields from it.
pub fn parse_verdict(raw: &str) -> Result<VerdictFields, ParseError> {
    let obj = first_object(raw).ok_or(ParseError::NoJson)?;
    let classification = classification(obj.get("classification").ok_or(ParseError::MissingClassification)?)?;
    let mut warnings = Vec::new();
    let scene_context = text_field(&obj, "scene_context", &mut warnings);
    let justification = text_field(&obj, "justification", &mut warnings);
    let objects = objects_field(&obj, &mut warnings);
    Ok(VerdictFields {
        classification,
        scene_context,
        justification,
        objects,
        warnings,
    })
}
