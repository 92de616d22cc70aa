//! Versioned persistence of per-user long-term state.
//!
//! Long-term history (stall events, engagement counters, the last tuned
//! parameters) survives process restarts as a small JSON file. Unknown
//! future schema versions are refused explicitly rather than silently
//! defaulted.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use abrsim::error::Error;
use abrsim::params::QoeParams;
use abrsim::predictor::UserState;

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedUserState {
    pub version: u32,
    pub user_id: String,
    /// Long-term playback and stall history.
    pub state: UserState,
    /// Last tuned parameters, restored as the next session's starting point.
    pub last_params: Option<QoeParams>,
    pub sessions_played: u64,
    pub exits: u64,
}

impl PersistedUserState {
    pub fn new(user_id: impl Into<String>, state: UserState) -> Self {
        PersistedUserState {
            version: STATE_VERSION,
            user_id: user_id.into(),
            state,
            last_params: None,
            sessions_played: 0,
            exits: 0,
        }
    }
}

pub fn persist_state(state: &PersistedUserState, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(state)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn restore_state(path: impl AsRef<Path>) -> Result<PersistedUserState, Error> {
    let text = std::fs::read_to_string(path)?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("state json: {e}")))?;
    let version = probe
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("state json missing version".into()))? as u32;
    if version != STATE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: STATE_VERSION,
        });
    }
    serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("state json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> PersistedUserState {
        let mut s = UserState::new();
        for i in 0..8 {
            s.observe_segment(1, 1800.0, 2500.0, 0.3 * i as f64, i % 2 == 0, 1.0);
        }
        s.observe_exit(true);
        let mut p = PersistedUserState::new("u42", s);
        p.last_params = Some(QoeParams::Hyb { beta: 0.6 });
        p.sessions_played = 9;
        p.exits = 3;
        p
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let state = sample_state();
        persist_state(&state, &path).unwrap();
        let back = restore_state(&path).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn unknown_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        persist_state(&sample_state(), &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"version\": 1", "\"version\": 99", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            restore_state(&path),
            Err(Error::UnsupportedVersion {
                found: 99,
                supported: 1
            })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        persist_state(&sample_state(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 3]).unwrap();
        assert!(matches!(restore_state(&path), Err(Error::Corrupt(_))));
    }
}
