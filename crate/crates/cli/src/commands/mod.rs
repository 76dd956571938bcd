pub mod flow_pde;
pub mod phase_scan;
pub mod rsrg;
pub mod rules;
pub mod spectrum;

use crate::model::MODEL_KEYS;

/// Accepted ([model], [run]) keys per command.
pub fn keys(command: &str) -> (&'static [&'static str], &'static [&'static str]) {
    match command {
        "spectrum" => (spectrum::MODEL_KEYS, spectrum::RUN_KEYS),
        "rules" => (&[], rules::RUN_KEYS),
        "rsrg" => (MODEL_KEYS, rsrg::RUN_KEYS),
        "phase-scan" => (phase_scan::MODEL_KEYS, phase_scan::RUN_KEYS),
        "flow-pde" => (&[], flow_pde::RUN_KEYS),
        _ => (&[], &[]),
    }
}

/// Quotes a CSV field when it holds a separator or quote.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One JSON document per line.
pub fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable"));
        out.push('\n');
    }
    out
}
