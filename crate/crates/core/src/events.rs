//! Line-delimited JSON events on stderr.

use std::io::Write;

fn emit(level: &str, event: &str, fields: &[(&str, String)]) {
    let mut obj = serde_json::Map::new();
    obj.insert("level".into(), level.into());
    obj.insert("event".into(), event.into());
    for (k, v) in fields {
        obj.insert((*k).to_string(), v.clone().into());
    }
    let line = serde_json::Value::Object(obj).to_string();
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

pub fn info(event: &str, fields: &[(&str, String)]) {
    emit("info", event, fields);
}

pub fn warn(event: &str, fields: &[(&str, String)]) {
    emit("warn", event, fields);
}

pub fn error(event: &str, fields: &[(&str, String)]) {
    emit("error", event, fields);
}
