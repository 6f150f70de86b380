use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, LatticeError};
use crate::lattice::{Configuration, Site, Window};
use crate::rng::Channel;

use super::Algorithm;

/// One jump of the process: `eta(x)` changes by `delta` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub site: Site,
    pub delta: i8,
}

impl EventRecord {
    pub fn channel(&self) -> Channel {
        if self.delta > 0 {
            Channel::Birth
        } else {
            Channel::Death
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    t: f64,
    x: Site,
    d: i8,
    ch: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    config_hash: String,
    seed: u64,
    replicate: u64,
    model: String,
    algorithm: Algorithm,
    horizon: f64,
    initial: serde_json::Value,
}

/// Complete record of one run on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub replicate: u64,
    pub horizon: f64,
    pub initial: Configuration,
    pub events: Vec<EventRecord>,
    pub final_config: Configuration,
}

impl Trajectory {
    /// Header line, then one event per line.
    pub fn to_jsonl(&self, config_hash: &str) -> String {
        let header = HeaderLine {
            config_hash: config_hash.to_string(),
            seed: self.seed,
            replicate: self.replicate,
            model: self.model.clone(),
            algorithm: self.algorithm,
            horizon: self.horizon,
            initial: self.initial.to_json_value(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            let line = EventLine {
                t: e.time,
                x: e.site,
                d: e.delta,
                ch: if e.delta > 0 { "b" } else { "d" }.into(),
            };
            out.push_str(&serde_json::to_string(&line).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Trajectory::to_jsonl`]; the final configuration is
    /// recomputed by [`replay`]. Returns the header's config hash as well.
    pub fn from_jsonl(text: &str) -> Result<(Self, String), EngineError> {
        let bad = |m: String| EngineError::Lattice(LatticeError::Parse(m));
        let mut lines = text.lines();
        let header: HeaderLine = serde_json::from_str(lines.next().ok_or_else(|| bad("empty log".into()))?)
            .map_err(|e| bad(format!("header: {e}")))?;
        let initial = Configuration::from_json(&header.initial.to_string())?;
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let l: EventLine =
                serde_json::from_str(line).map_err(|e| bad(format!("event {i}: {e}")))?;
            if l.d != 1 && l.d != -1 {
                return Err(bad(format!("event {i}: delta must be +1 or -1")));
            }
            events.push(EventRecord {
                time: l.t,
                site: l.x,
                delta: l.d,
            });
        }
        let final_config = replay(&initial, &events)?;
        Ok((
            Trajectory {
                model: header.model,
                algorithm: header.algorithm,
                seed: header.seed,
                replicate: header.replicate,
                horizon: header.horizon,
                initial,
                events,
                final_config,
            },
            header.config_hash,
        ))
    }

    pub fn window(&self) -> &Arc<Window> {
        self.initial.window()
    }

    /// Configuration just after every event, starting with the initial one.
    pub fn states(&self) -> Result<Vec<Configuration>, EngineError> {
        let mut c = self.initial.clone();
        let mut out = vec![c.clone()];
        for e in &self.events {
            apply(&mut c, e)?;
            out.push(c.clone());
        }
        Ok(out)
    }
}

fn apply(c: &mut Configuration, e: &EventRecord) -> Result<(), EngineError> {
    let n = c.get(&e.site);
    if e.delta < 0 && n == 0 {
        return Err(EngineError::Argument(format!(
            "death at empty site {} at t = {}",
            e.site, e.time
        )));
    }
    c.set(e.site, (n as i64 + e.delta as i64) as u32)?;
    Ok(())
}

/// Replays `events` from `initial`, checking that times strictly increase,
/// deltas are `+1`/`-1`, and no death hits an empty site.
pub fn replay(initial: &Configuration, events: &[EventRecord]) -> Result<Configuration, EngineError> {
    let mut c = initial.clone();
    let mut last = f64::NEG_INFINITY;
    for e in events {
        if !(e.time > last) {
            return Err(EngineError::Argument(format!(
                "event times not increasing at t = {}",
                e.time
            )));
        }
        last = e.time;
        apply(&mut c, e)?;
    }
    Ok(c)
}
