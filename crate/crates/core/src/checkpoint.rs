//! JSON weight container: named parameter arrays with shapes, the model
//! config and its fingerprint.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::student::{Student, StudentConfig};
use crate::teacher::{Teacher, TeacherConfig};
use crate::tensor::{ParamStore, Real};
use crate::{Error, Result};

pub const FORMAT: &str = "socialkd-checkpoint";
pub const VERSION: u32 = 1;

/// First 12 hex digits of the SHA-256 of a value's JSON encoding.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    let digest = Sha256::digest(&json);
    hex::encode(digest)[..12].to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub fingerprint: String,
    pub num_actions: usize,
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    fn build<C: Serialize, R: Real>(kind: ModelKind, config: &C, num_actions: usize, store: &ParamStore<R>) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            fingerprint: fingerprint(&(config, num_actions)),
            num_actions,
            config: serde_json::to_value(config).expect("config types serialize"),
            params,
        }
    }

    pub fn from_student<R: Real>(s: &Student<R>) -> Self {
        Self::build(ModelKind::Student, &s.config, s.num_actions, &s.params)
    }

    pub fn from_teacher<R: Real>(t: &Teacher<R>) -> Self {
        Self::build(ModelKind::Teacher, &t.config, t.num_actions, &t.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported container {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    fn config_as<C: DeserializeOwned>(&self, kind: ModelKind) -> Result<C> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {:?} checkpoint, found {:?}", kind, self.kind)));
        }
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("bad config: {}", e)))
    }

    /// Copies every stored array into `store`, matching by name; any missing,
    /// extra or differently shaped parameter is an error.
    pub fn restore_into<R: Real>(&self, store: &mut ParamStore<R>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for entry in &self.params {
            let id = store
                .find(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter {}", entry.name)))?;
            let shape = store.get(id).shape();
            if shape != entry.shape.as_slice() || entry.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: model {:?}, checkpoint {:?}",
                    entry.name, shape, entry.shape
                )));
            }
            store.set_data(id, entry.data.iter().map(|&v| R::from_f64_lossy(v as f64)).collect())?;
        }
        Ok(())
    }

    pub fn to_student<R: Real>(&self) -> Result<Student<R>> {
        let config: StudentConfig = self.config_as(ModelKind::Student)?;
        let mut s = Student::new(config, self.num_actions, 0)?;
        self.restore_into(&mut s.params)?;
        Ok(s)
    }

    pub fn to_teacher<R: Real>(&self) -> Result<Teacher<R>> {
        let config: TeacherConfig = self.config_as(ModelKind::Teacher)?;
        let mut t = Teacher::new(config, self.num_actions, 0)?;
        self.restore_into(&mut t.params)?;
        Ok(t)
    }
}
