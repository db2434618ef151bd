use serde::{Deserialize, Serialize};

use crate::graph::TableState;
use crate::ids::ProbeId;

/// Prefix of a probe line in interpreter stdout.
pub const PROBE_SENTINEL: &str = "##WAITGRAPH v1## ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub probe: ProbeId,
    pub var: String,
    pub rows: u64,
    pub cols: u64,
    pub columns: Vec<String>,
}

impl ProbeRecord {
    pub fn table_state(&self) -> TableState {
        TableState {
            rows: self.rows,
            cols: self.cols,
            columns: self.columns.clone(),
        }
    }
}

/// Parses the JSON body after the sentinel and checks `cols == len(columns)`.
pub fn parse_probe_line(body: &str) -> Result<ProbeRecord, String> {
    let record: ProbeRecord =
        serde_json::from_str(body).map_err(|e| format!("malformed probe line: {e}"))?;
    if record.cols != record.columns.len() as u64 {
        return Err(format!(
            "probe {} reports cols={} but {} column names",
            record.probe,
            record.cols,
            record.columns.len()
        ));
    }
    Ok(record)
}

/// Splits raw stdout into user text, probe records and diagnostics. Every
/// sentinel line is removed and becomes one record or one diagnostic.
pub fn demux_stdout(raw: &str) -> (String, Vec<ProbeRecord>, Vec<String>) {
    let mut user = String::with_capacity(raw.len());
    let mut probes = Vec::new();
    let mut diagnostics = Vec::new();
    for line in raw.split_inclusive('\n') {
        let content = line.strip_suffix('\n').unwrap_or(line);
        match content.strip_prefix(PROBE_SENTINEL) {
            Some(body) => match parse_probe_line(body) {
                Ok(r) => probes.push(r),
                Err(e) => diagnostics.push(e),
            },
            None => user.push_str(line),
        }
    }
    (user, probes, diagnostics)
}
