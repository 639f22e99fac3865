//! `--set key=value` overrides applied to the experiment document before
//! it is parsed. Keys are dotted paths (array steps are numeric) and must
//! already exist: overrides tweak a config, they never grow one, so a typo
//! fails loudly instead of adding a silently ignored field.

use serde_json::Value;

use sdforge_core::{Error, Result};

pub fn apply(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for entry in overrides {
        let (path, raw) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override `{entry}` must look like key.path=value"))
        })?;
        let slot = resolve(doc, path)?;
        // A value that parses as JSON is taken as such; anything else is a
        // bare string, so quoting names on the shell stays optional.
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    }
    Ok(())
}

fn resolve<'a>(doc: &'a mut Value, path: &str) -> Result<&'a mut Value> {
    let mut current = doc;
    for step in path.split('.') {
        current = match current {
            Value::Object(map) => map.get_mut(step).ok_or_else(|| {
                Error::InvalidConfig(format!("override path `{path}`: no key `{step}`"))
            })?,
            Value::Array(items) => {
                let index: usize = step.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "override path `{path}`: `{step}` is not an array index"
                    ))
                })?;
                let len = items.len();
                items.get_mut(index).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "override path `{path}`: index {index} out of bounds ({len} items)"
                    ))
                })?
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override path `{path}`: `{step}` does not address into a scalar"
                )))
            }
        };
    }
    Ok(current)
}
