//! The per-event metrics table the runner emits and the reporter consumes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::workload::Mode;

pub const METRICS_HEADER: &str = "# dyncolor-metrics v1";
const COLUMNS: &str = "update_index,mode,work_units,chain_length,rounds,tokens_created,messages,properness_ok";

/// One row per unit of progress; what a "unit" is depends on the mode
/// (an update, a sub-batch, or a network round).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MetricsRow {
    /// Updates applied so far, including this row's.
    pub update_index: u64,
    pub mode: Mode,
    pub work_units: u64,
    pub chain_length: u64,
    pub rounds: u64,
    pub tokens_created: u64,
    pub messages: u64,
    pub properness_ok: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsParseError {
    #[error("line 1: expected header {METRICS_HEADER:?}")]
    MissingHeader,
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.update_index,
            r.mode,
            r.work_units,
            r.chain_length,
            r.rounds,
            r.tokens_created,
            r.messages,
            u8::from(r.properness_ok)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == METRICS_HEADER => {}
        _ => return Err(MetricsParseError::MissingHeader),
    }
    match lines.next() {
        Some((_, c)) if c.trim_end() == COLUMNS => {}
        _ => {
            return Err(MetricsParseError::Row {
                line: 2,
                msg: format!("expected column line {COLUMNS:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 8 {
            return Err(MetricsParseError::Row {
                line,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<u64, MetricsParseError> {
            fields[i].parse::<u64>().map_err(|_| MetricsParseError::Row {
                line,
                msg: format!("field {} is not an integer: {:?}", i + 1, fields[i]),
            })
        };
        let mode: Mode = fields[1].parse().map_err(|msg| MetricsParseError::Row { line, msg })?;
        let ok = match fields[7] {
            "1" => true,
            "0" => false,
            other => {
                return Err(MetricsParseError::Row {
                    line,
                    msg: format!("properness_ok must be 0 or 1, found {other:?}"),
                })
            }
        };
        rows.push(MetricsRow {
            update_index: num(0)?,
            mode,
            work_units: num(2)?,
            chain_length: num(3)?,
            rounds: num(4)?,
            tokens_created: num(5)?,
            messages: num(6)?,
            properness_ok: ok,
        });
    }
    Ok(rows)
}
