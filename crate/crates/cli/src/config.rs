//! Flat JSON config files. Keys are the long flag names; flags on the command
//! line win over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn merge<T: Serialize + DeserializeOwned>(flags: T, file: Option<&Path>) -> CliResult<T> {
    let Some(path) = file else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path)(e.into()))?;
    let mut merged = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => return Err(CliError::Usage(format!("{}: {e}", path.display()))),
    };
    let Value::Object(given) = serde_json::to_value(&flags).map_err(invsen::Error::from)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
