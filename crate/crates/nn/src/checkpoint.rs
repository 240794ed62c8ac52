//! Versioned JSON checkpoints. Floats are written in shortest round-trip form, so a saved
//! payload reads back bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

pub const CHECKPOINT_FORMAT: &str = "epiflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

pub fn write_checkpoint<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    let envelope = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        payload,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &envelope)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let envelope: Envelope<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if envelope.format != CHECKPOINT_FORMAT {
        return Err(NnError::Checkpoint(format!("unknown format {:?}", envelope.format)));
    }
    if envelope.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "version {} not supported (expected {CHECKPOINT_VERSION})",
            envelope.version
        )));
    }
    Ok(envelope.payload)
}
