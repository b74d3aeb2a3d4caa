//! Step traces: one text line per primitive step, used to replay a recorded
//! action list and confirm the environment reproduces it exactly.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub state_hash: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on f64 prints the shortest round-tripping form
        write!(
            f,
            "{} {} {:?} {} {}",
            self.step,
            self.action,
            self.reward,
            u8::from(self.done),
            self.state_hash
        )
    }
}

impl FromStr for TraceRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Invalid(format!("trace line {line:?}: bad {what}"));
        let mut fields = line.split_whitespace();
        let mut next = |what: &str| fields.next().ok_or_else(|| bad(what));
        let step = next("step")?.parse().map_err(|_| bad("step"))?;
        let action = next("action")?.parse().map_err(|_| bad("action"))?;
        let reward = next("reward")?.parse().map_err(|_| bad("reward"))?;
        let done = match next("done")? {
            "0" => false,
            "1" => true,
            _ => return Err(bad("done flag")),
        };
        let state_hash = next("state hash")?.to_string();
        if fields.next().is_some() {
            return Err(bad("trailing field count"));
        }
        Ok(Self {
            step,
            action,
            reward,
            done,
            state_hash,
        })
    }
}

/// Resets `env` with `seed`, plays `actions` until the episode ends, and
/// returns one record per executed step.
pub fn record<E: Environment>(env: &mut E, seed: u64, actions: &[usize]) -> Result<Vec<TraceRecord>> {
    env.reset(seed);
    let mut out = Vec::new();
    for (step, &action) in actions.iter().enumerate() {
        if env.is_done() {
            break;
        }
        let outcome = env.step(action)?;
        out.push(TraceRecord {
            step: step as u64,
            action,
            reward: outcome.reward,
            done: outcome.done,
            state_hash: env.state_hash(),
        });
    }
    Ok(out)
}

pub fn write_trace<W: Write>(mut writer: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(writer, "{r}")?;
    }
    writer.flush()
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Invalid(format!("trace read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.parse()?);
    }
    Ok(out)
}

/// Replays the actions of `trace` from `seed` and returns the index of the
/// first record that disagrees, or `None` when every step matches.
pub fn replay<E: Environment>(env: &mut E, seed: u64, trace: &[TraceRecord]) -> Result<Option<usize>> {
    let actions: Vec<usize> = trace.iter().map(|r| r.action).collect();
    let fresh = record(env, seed, &actions)?;
    if fresh.len() != trace.len() {
        return Ok(Some(fresh.len().min(trace.len())));
    }
    Ok(fresh.iter().zip(trace).position(|(a, b)| a != b))
}
