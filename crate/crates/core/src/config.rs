//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Resolution order, later wins: built-in defaults, the config file,
//! `SOCIALKD_*` environment variables, command-line flags.
//! An environment key maps onto a config path by stripping the prefix,
//! lowercasing and splitting on `__`, so `SOCIALKD_STUDENT__TRAIN__EPOCHS=5`
//! sets `student.train.epochs`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::fingerprint;
use crate::corruption::{CorruptionMode, CorruptionSpec};
use crate::distill::{DistillConfig, StudentTrainConfig, TeacherTrainConfig};
use crate::eval::SweepGrid;
use crate::pose::{PadPolicy, Taxonomy};
use crate::student::StudentConfig;
use crate::teacher::TeacherConfig;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "SOCIALKD_";

/// Environment names owned by command-line flags rather than config keys.
const RESERVED_ENV: [&str; 4] = ["CONFIG", "SEED", "OUT", "STRICT"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub taxonomy: Taxonomy,
    pub n_per_class: usize,
    pub noise_std: f64,
    /// Train / val / test fractions.
    pub split: [f64; 3],
    /// Directory holding `train.jsonl`, `val.jsonl`, `test.jsonl`. When
    /// unset, commands regenerate the synthetic dataset in memory.
    pub dir: Option<PathBuf>,
    pub pad_policy: PadPolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            taxonomy: Taxonomy::Jpl,
            n_per_class: 200,
            noise_std: 0.01,
            split: [0.7, 0.15, 0.15],
            dir: None,
            pad_policy: PadPolicy::Reject,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub model: TeacherConfig,
    pub train: TeacherTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub model: StudentConfig,
    pub train: StudentTrainConfig,
}

/// Training-time corruption; its stream seed is the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSection {
    pub spatial_rate: f64,
    pub temporal_rate: f64,
    pub mode: CorruptionMode,
    pub warmup_epochs: usize,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        let d = CorruptionSpec::default();
        CorruptionSection {
            spatial_rate: d.spatial_rate,
            temporal_rate: d.temporal_rate,
            mode: d.mode,
            warmup_epochs: d.warmup_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Test-time corruption for `eval`; clean when both rates are 0.
    pub spatial_rate: f64,
    pub temporal_rate: f64,
    pub mode: CorruptionMode,
    pub sweep: SweepGrid,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { spatial_rate: 0.0, temporal_rate: 0.0, mode: CorruptionMode::Zero, sweep: SweepGrid::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n_warmup: usize,
    pub n_iters: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { n_warmup: 10, n_iters: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub teacher: TeacherSection,
    pub student: StudentSection,
    pub distill: DistillConfig,
    pub corruption: CorruptionSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl RunConfig {
    /// Parses TOML text; unknown keys anywhere are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Resolves file, environment and seed into a validated config.
    pub fn resolve(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse().map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
            if RESERVED_ENV.contains(&rest) || rest.starts_with("LOG") {
                continue;
            }
            let parts: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            set_path(&mut table, &parts, parse_scalar(&raw))
                .map_err(|m| Error::Config(format!("environment override {}: {}", key, m)))?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.data.split.iter().sum();
        if self.data.split.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split must be non-negative and sum to 1, got {:?}", self.data.split)));
        }
        if self.data.n_per_class == 0 {
            return Err(Error::Config("data.n_per_class must be positive".into()));
        }
        if self.bench.n_iters < 30 {
            return Err(Error::Config(format!("bench.n_iters must be at least 30, got {}", self.bench.n_iters)));
        }
        self.teacher.model.validate()?;
        self.teacher.train.validate()?;
        self.student.model.validate()?;
        self.training_corruption().validate()?;
        self.eval_corruption().validate()?;
        self.student_train().validate()
    }

    /// 12-hex-digit digest of the resolved config.
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    pub fn training_corruption(&self) -> CorruptionSpec {
        let c = &self.corruption;
        CorruptionSpec {
            spatial_rate: c.spatial_rate,
            temporal_rate: c.temporal_rate,
            mode: c.mode,
            warmup_epochs: c.warmup_epochs,
            seed: self.seed,
        }
    }

    pub fn eval_corruption(&self) -> CorruptionSpec {
        CorruptionSpec {
            seed: self.seed,
            ..CorruptionSpec::new(self.eval.spatial_rate, self.eval.temporal_rate, self.eval.mode)
        }
    }

    pub fn teacher_train(&self) -> TeacherTrainConfig {
        TeacherTrainConfig { seed: self.seed, ..self.teacher.train.clone() }
    }

    /// Student training settings with the given distillation weights.
    pub fn student_train_with(&self, distill: DistillConfig) -> StudentTrainConfig {
        StudentTrainConfig { corruption: self.training_corruption(), distill, seed: self.seed, ..self.student.train.clone() }
    }

    pub fn student_train(&self) -> StudentTrainConfig {
        self.student_train_with(self.distill.clone())
    }
}

/// Interprets an environment value as a TOML scalar or array, falling back
/// to a plain string.
fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {}", raw)
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, parts: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = parts.split_last().ok_or("empty key")?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("{} is not a section", p))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.student.train.batch_size, 96);
        assert_eq!(cfg.distill.w_kd, 0.2);
        assert_eq!(cfg.teacher.train.epochs + cfg.teacher.train.pretrain_epochs, 40);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[student.train]\nepochz = 3\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn environment_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[student.train]\nepochs = 9\n").unwrap();
        let env = vec![
            ("SOCIALKD_STUDENT__TRAIN__EPOCHS".to_string(), "4".to_string()),
            ("SOCIALKD_DATA__TAXONOMY".to_string(), "harper".to_string()),
            ("SOCIALKD_SEED".to_string(), "99".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let cfg = RunConfig::resolve(Some(&path), env, None).unwrap();
        assert_eq!(cfg.student.train.epochs, 4);
        assert_eq!(cfg.data.taxonomy, Taxonomy::Harper);
        assert_eq!(cfg.seed, 3);
        assert_eq!(RunConfig::resolve(Some(&path), vec![], Some(11)).unwrap().seed, 11);
    }

    #[test]
    fn unknown_environment_key_is_a_config_error() {
        let env = vec![("SOCIALKD_STUDENT__NOPE".to_string(), "1".to_string())];
        assert!(matches!(RunConfig::resolve(None, env, None), Err(Error::Config(_))));
    }

    #[test]
    fn seed_reaches_every_stream() {
        let cfg = RunConfig::resolve(None, vec![], Some(5)).unwrap();
        assert_eq!(cfg.student_train().seed, 5);
        assert_eq!(cfg.student_train().corruption.seed, 5);
        assert_eq!(cfg.teacher_train().seed, 5);
        assert_eq!(cfg.eval_corruption().seed, 5);
    }

    #[test]
    fn fingerprint_changes_with_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..Default::default() };
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 12);
    }

    #[test]
    fn bad_weights_fail_validation() {
        let cfg = RunConfig { distill: DistillConfig { w_kd: 0.5, ..Default::default() }, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
