//! JSONL trajectory files.
//!
//! One object per line. Step lines are `{traj_id, turn, kind, content}`;
//! training runs also write a header line `{traj_id, reward, advantage,
//! retained}` ahead of each response's steps.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::trajectory::{check_transition, validate_steps, Step, StepKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLine {
    pub traj_id: String,
    pub turn: usize,
    pub kind: StepKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderLine {
    pub traj_id: String,
    pub reward: f64,
    /// `None` for degenerate groups.
    pub advantage: Option<f64>,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Line {
    Step(StepLine),
    Header(HeaderLine),
}

/// A trajectory read back from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub traj_id: String,
    pub header: Option<HeaderLine>,
    pub steps: Vec<Step>,
}

pub fn write_steps<W: Write>(out: &mut W, traj_id: &str, steps: &[Step]) -> std::io::Result<()> {
    for s in steps {
        let line = StepLine {
            traj_id: traj_id.to_string(),
            turn: s.turn,
            kind: s.kind,
            content: s.content.clone(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_header<W: Write>(out: &mut W, header: &HeaderLine) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")
}

pub fn write_records<W: Write>(out: &mut W, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        if let Some(h) = &r.header {
            write_header(out, h)?;
        }
        write_steps(out, &r.traj_id, &r.steps)?;
    }
    Ok(())
}

/// Reads a corpus, grouping lines by `traj_id` in order of first appearance.
/// Blank lines are skipped. Errors carry the 1-based line number.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    let mut index: std::collections::HashMap<String, (usize, usize)> = Default::default();
    for (k, line) in input.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let id = match &parsed {
            Line::Step(s) => &s.traj_id,
            Line::Header(h) => &h.traj_id,
        };
        let slot = match index.get(id) {
            Some(&(slot, _)) => slot,
            None => {
                records.push(Record {
                    traj_id: id.clone(),
                    header: None,
                    steps: Vec::new(),
                });
                index.insert(id.clone(), (records.len() - 1, lineno));
                records.len() - 1
            }
        };
        let rec = &mut records[slot];
        match parsed {
            Line::Header(h) => {
                if rec.header.is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("duplicate header for `{}`", h.traj_id),
                    });
                }
                rec.header = Some(h);
            }
            Line::Step(s) => {
                let step = Step {
                    kind: s.kind,
                    content: s.content,
                    turn: s.turn,
                };
                check_transition(rec.steps.last(), &step).map_err(|message| Error::Parse {
                    line: lineno,
                    message,
                })?;
                rec.steps.push(step);
            }
        }
    }
    for r in &records {
        if let Err((_, message)) = validate_steps(&r.steps) {
            let first_line = index[&r.traj_id].1;
            return Err(Error::Parse {
                line: first_line,
                message: format!("trajectory `{}`: {message}", r.traj_id),
            });
        }
    }
    Ok(records)
}
