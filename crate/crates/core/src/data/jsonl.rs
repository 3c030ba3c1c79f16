//! JSONL instance files.
//!
//! Canonical schema: `{"id": str?, "obs1": str, "obs2": str, "hyps": [str]?}`.
//!
//! Aliases accepted on load:
//!
//! | field | accepted keys, first present wins |
//! |-------|-----------------------------------|
//! | id    | `id`, `story_id` (else `line-N`)  |
//! | hyps  | `hyps` (list), `hyp` (string), `hyp{label}` when `label` is 1 or 2, `hyp1` |
//!
//! Unknown fields are ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::AbductiveInstance;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct Row<'a> {
    id: &'a str,
    obs1: &'a str,
    obs2: &'a str,
    hyps: &'a [String],
}

fn field_str(obj: &Map<String, Value>, key: &str) -> std::result::Result<Option<String>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) if key.ends_with("id") => Ok(Some(n.to_string())),
        Some(other) => Err(format!("field {key:?} must be a string, found {other}")),
    }
}

fn parse_line(obj: &Map<String, Value>, line: usize) -> std::result::Result<AbductiveInstance, String> {
    let id = match field_str(obj, "id")? {
        Some(id) => id,
        None => field_str(obj, "story_id")?.unwrap_or_else(|| format!("line-{line}")),
    };
    let obs1 = field_str(obj, "obs1")?.ok_or("missing field \"obs1\"")?;
    let obs2 = field_str(obj, "obs2")?.ok_or("missing field \"obs2\"")?;
    let hyps = if let Some(v) = obj.get("hyps") {
        match v {
            Value::Array(items) => items
                .iter()
                .map(|h| h.as_str().map(str::to_string).ok_or("\"hyps\" entries must be strings"))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            _ => return Err("\"hyps\" must be a list of strings".into()),
        }
    } else if let Some(h) = field_str(obj, "hyp")? {
        vec![h]
    } else {
        let label = obj.get("label").and_then(|l| match l {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => s.parse().ok(),
            _ => None,
        });
        let key = match label {
            Some(l @ (1 | 2)) => format!("hyp{l}"),
            _ => "hyp1".to_string(),
        };
        field_str(obj, &key)?.into_iter().collect()
    };
    AbductiveInstance::new(id, &obs1, &obs2, hyps).map_err(|e| e.to_string())
}

/// Parses JSONL text; `origin` names the source in error messages.
pub fn parse_jsonl(src: &str, origin: &str) -> Result<Vec<AbductiveInstance>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
        out.push(parse_line(obj, i + 1).map_err(err)?);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<AbductiveInstance>> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&src, &path.display().to_string())
}

pub fn to_jsonl(instances: &[AbductiveInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&Row {
            id: &inst.id,
            obs1: &inst.obs1,
            obs2: &inst.obs2,
            hyps: &inst.gold_hyps,
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_jsonl(path: impl AsRef<Path>, instances: &[AbductiveInstance]) -> Result<()> {
    let path = path.as_ref();
    let body = to_jsonl(instances)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_row_maps_directly() {
        let v = parse_jsonl(r#"{"obs1":"a","obs2":"b","hyps":["c"]}"#, "mem").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].obs1.as_str(), v[0].obs2.as_str()), ("a", "b"));
        assert_eq!(v[0].gold_hyps, vec!["c".to_string()]);
        assert_eq!(v[0].id, "line-1");
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_jsonl("", "mem").unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_the_line() {
        let src = "{\"obs1\":\"a\",\"obs2\":\"b\"}\n{\"obs1\":\"a\"}\n";
        let e = parse_jsonl(src, "f.jsonl").unwrap_err();
        match e {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("obs2"));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(parse_jsonl("not json", "mem").is_err());
    }

    #[test]
    fn art_aliases() {
        let src = r#"{"story_id":"s1","obs1":"a","obs2":"b","hyp1":"x","hyp2":"y","label":2,"extra":1}"#;
        let v = parse_jsonl(src, "mem").unwrap();
        assert_eq!(v[0].id, "s1");
        assert_eq!(v[0].gold_hyps, vec!["y".to_string()]);
        let v = parse_jsonl(r#"{"obs1":"a","obs2":"b","hyp1":"x"}"#, "mem").unwrap();
        assert_eq!(v[0].gold_hyps, vec!["x".to_string()]);
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(rows in prop::collection::vec(
            ("[a-z]{1,6}", "[a-z]{1,8}( [a-z]{1,8}){0,3}", "[a-z]{1,8}( [a-z]{1,8}){0,3}",
             prop::collection::vec("[a-z\"\\\\ ]{0,12}", 0..3)), 0..6)) {
            let insts: Vec<_> = rows
                .into_iter()
                .map(|(id, a, b, h)| AbductiveInstance::new(id, &a, &b, h).unwrap())
                .collect();
            let text = to_jsonl(&insts).unwrap();
            prop_assert_eq!(parse_jsonl(&text, "mem").unwrap(), insts);
        }
    }
}
