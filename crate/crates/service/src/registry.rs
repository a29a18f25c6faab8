//! Trained profiles on disk, loaded lazily and shared read-only.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use wirecheck_core::pipeline::{list_profiles, load_profile, profile_path, save_profile};
use wirecheck_core::{Error, Result, TrainedProfile};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProfileEntry {
    pub harness_type: String,
    pub profile_id: String,
}

pub struct ProfileRegistry {
    root: PathBuf,
    cache: RwLock<HashMap<(String, String), Arc<TrainedProfile>>>,
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && !s.starts_with('.') && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl ProfileRegistry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), cache: RwLock::new(HashMap::new()) }
    }

    /// `Ok(None)` when no such profile exists.
    pub fn get(&self, harness_type: &str, profile_id: &str) -> Result<Option<Arc<TrainedProfile>>> {
        if !safe_name(harness_type) || !safe_name(profile_id) {
            return Ok(None);
        }
        let key = (harness_type.to_string(), profile_id.to_string());
        if let Some(p) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Some(p.clone()));
        }
        let path = profile_path(&self.root, harness_type, profile_id);
        if !path.exists() {
            return Ok(None);
        }
        let profile = Arc::new(load_profile(&path)?);
        self.cache.write().unwrap_or_else(|e| e.into_inner()).insert(key, profile.clone());
        Ok(Some(profile))
    }

    pub fn exists(&self, harness_type: &str, profile_id: &str) -> bool {
        safe_name(harness_type) && safe_name(profile_id) && profile_path(&self.root, harness_type, profile_id).exists()
    }

    /// Profiles are immutable once written; a second write under the same id is refused.
    pub fn insert(&self, profile: TrainedProfile) -> Result<()> {
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        if self.exists(&profile.harness_type, &profile.profile_id) {
            return Err(Error::InvalidConfig(format!(
                "profile {}/{} already exists",
                profile.harness_type, profile.profile_id
            )));
        }
        save_profile(&profile, &profile_path(&self.root, &profile.harness_type, &profile.profile_id))?;
        cache.insert((profile.harness_type.clone(), profile.profile_id.clone()), Arc::new(profile));
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<ProfileEntry>> {
        Ok(list_profiles(&self.root)?
            .into_iter()
            .map(|(harness_type, profile_id, _)| ProfileEntry { harness_type, profile_id })
            .collect())
    }
}
