//! Directory checkpoints: one safetensors file per network plus `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::nn::ParamStore;
use crate::{CoreError, Result};

pub const META_FILE: &str = "meta.json";

/// Named networks stored together in one directory.
pub struct Checkpoint<'a> {
    pub stores: Vec<(&'a str, &'a ParamStore)>,
}

impl<'a> Checkpoint<'a> {
    pub fn new(stores: Vec<(&'a str, &'a ParamStore)>) -> Self {
        Self { stores }
    }

    pub fn load(&self, dir: &Path) -> Result<()> {
        for (name, store) in &self.stores {
            store.load(&dir.join(format!("{name}.safetensors")))?;
        }
        Ok(())
    }
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Writes everything into a scratch directory, then renames it into place,
/// so readers see either the old checkpoint or the complete new one.
pub fn save_atomic(dir: &Path, meta: &impl Serialize, ckpt: &Checkpoint<'_>) -> Result<()> {
    let tmp = sibling(dir, "partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    }
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    let write = || -> Result<()> {
        for (name, store) in &ckpt.stores {
            store.save(&tmp.join(format!("{name}.safetensors")))?;
        }
        let meta_path = tmp.join(META_FILE);
        fs::write(&meta_path, serde_json::to_string_pretty(meta)?).map_err(|e| CoreError::io(&meta_path, e))
    };
    if let Err(e) = write() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        let old = sibling(dir, "old");
        let _ = fs::remove_dir_all(&old);
        fs::rename(dir, &old).map_err(|e| CoreError::io(dir, e))?;
        fs::rename(&tmp, dir).map_err(|e| CoreError::io(dir, e))?;
        fs::remove_dir_all(&old).map_err(|e| CoreError::io(&old, e))?;
    } else {
        fs::rename(&tmp, dir).map_err(|e| CoreError::io(dir, e))?;
    }
    Ok(())
}

pub fn read_meta<T: DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::io(&path, e))
}
