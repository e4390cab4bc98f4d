//! Versioned JSON files for policies, attackers and training state.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversary::AdversaryState;
use crate::error::{Error, Result};
use crate::imitator::ImitatorState;
use crate::policy::Policy;
use crate::SCHEMA_VERSION;

/// Mutable state of an adversary-training run at a cycle boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Environment steps consumed so far.
    pub step: u64,
    /// Collection cycles completed so far.
    pub cycle: u64,
    pub adversary: AdversaryState,
    pub imitator: Option<ImitatorState>,
    pub victim_fingerprint: u64,
}

/// An adversary with its optional imitator, as used at evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Attacker {
    pub adversary: AdversaryState,
    pub imitator: Option<ImitatorState>,
}

impl Attacker {
    pub fn agent(&self) -> crate::game::AdversaryAgent<'_> {
        use crate::game::AdversaryAgent;
        match &self.imitator {
            Some(imit) => AdversaryAgent {
                feed_imitator: self.adversary.use_imitator_input,
                ..AdversaryAgent::with_imitator(&self.adversary.policy, &imit.policy)
            },
            None => AdversaryAgent::new(&self.adversary.policy),
        }
    }
}

impl From<TrainState> for Attacker {
    fn from(s: TrainState) -> Self {
        Self {
            adversary: s.adversary,
            imitator: s.imitator,
        }
    }
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `value` with a `schema_version` field next to its own fields.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        body: value,
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text + "\n")?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_versioned(path: &Path) -> Result<Value> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let text = std::fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| corrupt("top level is not an object".into()))?;
    let version = obj
        .remove("schema_version")
        .ok_or_else(|| corrupt("missing schema_version".into()))?;
    let found = version
        .as_u64()
        .ok_or_else(|| corrupt(format!("schema_version {version} is not an integer")))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(value)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let value = read_versioned(path)?;
    serde_json::from_value(value).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn checked(path: &Path, policy: &Policy) -> Result<()> {
    policy.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let policy: Policy = load_json(path)?;
    checked(path, &policy)?;
    Ok(policy)
}

pub fn load_train_state(path: &Path) -> Result<TrainState> {
    let state: TrainState = load_json(path)?;
    checked(path, &state.adversary.policy)?;
    if let Some(imit) = &state.imitator {
        checked(path, &imit.policy)?;
    }
    Ok(state)
}

/// Reads either a training checkpoint (adversary plus imitator) or a bare
/// adversary file.
pub fn load_attacker(path: &Path) -> Result<Attacker> {
    let value = read_versioned(path)?;
    let corrupt = |e: serde_json::Error| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let attacker = if value.get("adversary").is_some() {
        Attacker::from(serde_json::from_value::<TrainState>(value).map_err(corrupt)?)
    } else {
        Attacker {
            adversary: serde_json::from_value(value).map_err(corrupt)?,
            imitator: None,
        }
    };
    checked(path, &attacker.adversary.policy)?;
    if let Some(imit) = &attacker.imitator {
        checked(path, &imit.policy)?;
    }
    Ok(attacker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_env, EnvSpec};
    use crate::policy::{Encoding, ObsLayout};
    use crate::seeding;

    fn adversary() -> AdversaryState {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        let layout = ObsLayout::for_game(&g, Encoding::OneHot, 3).unwrap();
        let policy = Policy::random_tabular(layout, 3, 1.0, &mut seeding::rng(4, &[]));
        AdversaryState::new(policy, 0.2, true).unwrap()
    }

    #[test]
    fn adversary_file_is_a_policy_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adv.json");
        let adv = adversary();
        save_json(&path, &adv).unwrap();
        let as_policy = load_policy(&path).unwrap();
        assert_eq!(as_policy, adv.policy);
        let back = load_attacker(&path).unwrap();
        assert_eq!(back.adversary, adv);
        assert!(back.imitator.is_none());
        let text = std::fs::read_to_string(&path).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        for key in [
            "schema_version",
            "kind",
            "obs_layout",
            "action_count",
            "params",
            "use_imitator_input",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn version_and_corruption_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        assert!(matches!(
            load_policy(&path),
            Err(Error::MissingCheckpoint(_))
        ));
        save_json(&path, &adversary().policy).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(
            &path,
            text.replace("\"schema_version\": 1", "\"schema_version\": 0"),
        )
        .unwrap();
        assert!(matches!(
            load_policy(&path),
            Err(Error::SchemaVersion {
                found: 0,
                expected: 1
            })
        ));
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Corrupt { .. })));
        // Well-formed JSON with a parameter vector of the wrong length.
        std::fs::write(
            &path,
            text.replace("\"action_count\": 3", "\"action_count\": 2"),
        )
        .unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Corrupt { .. })));
    }
}
