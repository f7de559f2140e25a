//! JSON snapshots and JSONL event logs.

use super::{CollisionEvent, ParticleConfig};
use crate::error::{Error, Result};
use crate::torus::{TorusPoint, Vec2};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// On-disk form of a [`ParticleConfig`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    pub eps: f64,
    /// Inverse temperature the sample was drawn at (informational).
    pub beta_tag: f64,
    pub time: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl Snapshot {
    pub fn from_config(c: &ParticleConfig, beta_tag: f64) -> Self {
        Snapshot {
            eps: c.eps,
            beta_tag,
            time: c.time,
            positions: c.positions.iter().map(|&p| p.into()).collect(),
            velocities: c.velocities.iter().map(|&v| v.into()).collect(),
        }
    }

    pub fn into_config(self) -> Result<ParticleConfig> {
        ParticleConfig::new(
            self.positions.into_iter().map(TorusPoint::from).collect(),
            self.velocities.into_iter().map(Vec2::from).collect(),
            self.eps,
            self.time,
        )
    }
}

pub fn write_snapshot<W: Write>(w: W, c: &ParticleConfig, beta_tag: f64) -> Result<()> {
    serde_json::to_writer(w, &Snapshot::from_config(c, beta_tag))?;
    Ok(())
}

pub fn read_snapshot<R: std::io::Read>(r: R) -> Result<(ParticleConfig, f64)> {
    let s: Snapshot = serde_json::from_reader(r)?;
    let beta = s.beta_tag;
    Ok((s.into_config()?, beta))
}

pub fn write_events_jsonl<W: Write>(mut w: W, events: &[CollisionEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events_jsonl<R: BufRead>(r: R) -> Result<Vec<CollisionEvent>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Io(format!("line {}: {e}", k + 1)))?);
    }
    Ok(out)
}
