use serde::Serialize;
use serde_json::Value as Json;

/// `println!` that stays quiet when stdout is closed early.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}
pub(crate) use out;

/// Prints `value` as pretty JSON, or as one `path=value` line per scalar.
pub fn emit(value: &impl Serialize, json: bool) {
    let v = serde_json::to_value(value).expect("report types serialize");
    if json {
        out!("{}", serde_json::to_string_pretty(&v).expect("valid JSON value"));
    } else {
        for line in flatten(&v) {
            out!("{line}");
        }
    }
}

pub fn flatten(v: &Json) -> Vec<String> {
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

fn walk(prefix: &str, v: &Json, out: &mut Vec<String>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Json::Object(m) => {
            for (k, x) in m {
                walk(&key(k), x, out);
            }
        }
        Json::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let items: Vec<String> = a.iter().map(scalar).collect();
            out.push(format!("{prefix}={}", items.join(",")));
        }
        Json::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                walk(&key(&i.to_string()), x, out);
            }
        }
        _ => out.push(format!("{prefix}={}", scalar(v))),
    }
}

fn scalar(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    }
}
