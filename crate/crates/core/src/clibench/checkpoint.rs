use std::fmt;
use std::path::{Path, PathBuf};

use super::{RunConfig, RunError, RUN_CONFIG_FILE};
use crate::numgrad::{blob, Module, Param, Real};
use crate::predict::Strategy;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Which model a stored tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
    Predictor(Strategy),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Encoder => f.write_str("encoder"),
            Role::Decoder => f.write_str("decoder"),
            Role::Predictor(s) => write!(f, "predictor-{s}"),
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "encoder" => Ok(Role::Encoder),
            "decoder" => Ok(Role::Decoder),
            _ => s
                .strip_prefix("predictor-")
                .ok_or_else(|| format!("unknown role `{s}`"))?
                .parse()
                .map(Role::Predictor),
        }
    }
}

/// One manifest line: `name shape role`, shape as `AxBxC`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{} {} {}", self.name, shape.join("x"), self.role)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, RunError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |why: &str| RunError::Manifest(format!("line {}: {why}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("expected `name shape role`"));
            }
            let shape = f[1].split('x').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("bad shape"))?;
            let role = f[2].parse().map_err(|e: String| bad(&e))?;
            Ok(ManifestEntry { name: f[0].to_string(), shape, role })
        })
        .collect()
}

/// A checkpoint directory: `run.json`, `manifest.txt` and one `<name>.bevt` per tensor.
pub struct Checkpoint {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Checkpoint {
    pub fn has_role(&self, role: Role) -> bool {
        self.entries.iter().any(|e| e.role == role)
    }

    pub fn predictor_strategy(&self) -> Option<Strategy> {
        self.entries.iter().find_map(|e| match e.role {
            Role::Predictor(s) => Some(s),
            _ => None,
        })
    }

    /// Loads every parameter of `module` stored under `role`; names and
    /// shapes must match the manifest exactly.
    pub fn restore<T: Real, M: Module<T>>(&self, role: Role, module: &M) -> Result<(), RunError> {
        let params = module.params();
        let stored: Vec<&ManifestEntry> = self.entries.iter().filter(|e| e.role == role).collect();
        if stored.len() != params.len() {
            return Err(RunError::Manifest(format!(
                "{} stores {} tensors, the configured model has {}",
                role,
                stored.len(),
                params.len()
            )));
        }
        for (name, p) in params {
            let name = format!("{}.{}", role_prefix(role), name);
            let entry = stored
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| RunError::Manifest(format!("missing tensor `{name}` for {role}")))?;
            if entry.shape != p.shape() {
                return Err(RunError::Manifest(format!("`{name}` has shape {:?}, model expects {:?}", entry.shape, p.shape())));
            }
            let t = blob::read_file::<T>(&self.dir.join(format!("{name}.bevt")))?;
            if t.shape() != p.shape().as_slice() {
                return Err(RunError::Manifest(format!("blob `{name}` shape {:?} disagrees with the manifest", t.shape())));
            }
            p.set_data(t.to_vec())?;
        }
        Ok(())
    }
}

fn role_prefix(role: Role) -> &'static str {
    match role {
        Role::Encoder => "encoder",
        Role::Decoder => "decoder",
        Role::Predictor(_) => "predictor",
    }
}

/// Writes `run.json`, the manifest and one blob per parameter.
pub fn save_checkpoint<T: Real>(dir: &Path, config: &RunConfig, groups: &[(Role, Vec<(String, Param<T>)>)]) -> Result<(), RunError> {
    config.persist(dir)?;
    let mut manifest = String::new();
    for (role, params) in groups {
        for (name, p) in params {
            let entry = ManifestEntry { name: format!("{}.{}", role_prefix(*role), name), shape: p.shape(), role: *role };
            blob::write_file(&p.get(), &dir.join(format!("{}.bevt", entry.name)))?;
            manifest.push_str(&entry.to_string());
            manifest.push('\n');
        }
    }
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, RunError> {
    let config = RunConfig::read(&dir.join(RUN_CONFIG_FILE))?;
    let entries = read_manifest(dir)?;
    Ok(Checkpoint { dir: dir.to_path_buf(), config, entries })
}
