//! JSON configuration layering: defaults ← config file ← `--set a.b=value`.
//! Every key written must already exist in the layer below, so typos fail.

use serde_json::Value;

/// Keys whose change selects a different variant; the patch then replaces
/// the whole object instead of merging into it.
const TAGS: [&str; 2] = ["arch", "dataset"];

pub fn merge(base: &mut Value, patch: Value, at: &str) -> Result<(), String> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retag = TAGS.iter().any(|t| matches!((b.get(*t), p.get(*t)), (Some(x), Some(y)) if x != y));
            if retag {
                *b = p;
                return Ok(());
            }
            for (k, v) in p {
                let here = join(at, &k);
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(format!("unknown config key `{here}`")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn join(at: &str, k: &str) -> String {
    if at.is_empty() {
        k.to_string()
    } else {
        format!("{at}.{k}")
    }
}

/// Applies one `dotted.path=value` override. The value is read as JSON when
/// it parses, otherwise as a string.
pub fn apply_set(base: &mut Value, arg: &str) -> Result<(), String> {
    let (path, raw) = arg.split_once('=').ok_or_else(|| format!("override `{arg}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for key in path.rsplit('.') {
        if key.is_empty() {
            return Err(format!("override `{arg}` has an empty key segment"));
        }
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(base, patch, "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_overrides_nested_values() {
        let mut v = json!({"a": {"b": 1, "c": null}, "d": "x"});
        apply_set(&mut v, "a.b=2.5").unwrap();
        apply_set(&mut v, "a.c=/tmp/f.rmxd").unwrap();
        apply_set(&mut v, "d=[1,2]").unwrap();
        assert_eq!(v, json!({"a": {"b": 2.5, "c": "/tmp/f.rmxd"}, "d": [1, 2]}));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = json!({"a": {"b": 1}});
        assert!(apply_set(&mut v, "a.x=1").unwrap_err().contains("a.x"));
        assert!(merge(&mut v, json!({"z": 1}), "").is_err());
        assert!(apply_set(&mut v, "novalue").is_err());
        assert!(apply_set(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn tag_change_replaces_object() {
        let mut v = json!({"model": {"arch": "resmixnet", "experts": 2}});
        merge(&mut v, json!({"model": {"arch": "resnet", "blocks_per_stage": 4}}), "").unwrap();
        assert_eq!(v, json!({"model": {"arch": "resnet", "blocks_per_stage": 4}}));
    }
}
