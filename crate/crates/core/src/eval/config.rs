use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::DtwConfig;
use crate::embedder::ArchSpec;
use crate::error::{Error, Result};
use crate::meta::{FineTuneConfig, MetaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fs1,
    Fs2,
    /// The network trained from a fresh initialization on each task.
    Scratch,
    Ed,
    Dtw,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ed, Method::Dtw, Method::Scratch, Method::Fs2, Method::Fs1];

    /// Column name used in records and reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::Fs1 => "FS-1",
            Method::Fs2 => "FS-2",
            Method::Scratch => "ResNet",
            Method::Ed => "ED",
            Method::Dtw => "DTW",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Method::Fs1 | Method::Fs2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "fs1" => Ok(Method::Fs1),
            "fs2" => Ok(Method::Fs2),
            "scratch" | "resnet" => Ok(Method::Scratch),
            "ed" => Ok(Method::Ed),
            "dtw" => Ok(Method::Dtw),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Training shots per class.
    pub k: usize,
    /// Test shots per class.
    pub k_query: usize,
    pub tasks_per_dataset: usize,
    /// Use the original train and test splits as a single task per dataset.
    pub full_split: bool,
    pub methods: Vec<Method>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            k: 5,
            k_query: 5,
            tasks_per_dataset: 100,
            full_split: false,
            methods: vec![Method::Fs1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Nemenyi significance level, 0.05 or 0.10.
    pub alpha: f64,
    /// Method whose W/T/L against every other method is reported.
    pub reference: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            reference: Method::Fs1.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassSplitConfig {
    pub dataset: String,
    pub n_way: usize,
}

impl Default for ClassSplitConfig {
    fn default() -> Self {
        Self {
            dataset: "ShapesAll".into(),
            n_way: 5,
        }
    }
}

/// Everything an experiment needs, loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_root: PathBuf,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Trained FS-1 parameters.
    pub fs1_checkpoint: Option<PathBuf>,
    /// Trained FS-2 parameters.
    pub fs2_checkpoint: Option<PathBuf>,
    pub protocol: ProtocolConfig,
    pub arch: ArchSpec,
    pub meta: MetaConfig,
    pub finetune: FineTuneConfig,
    pub finetune_fs2: FineTuneConfig,
    /// Training of the network from scratch on each task.
    pub scratch: FineTuneConfig,
    pub dtw: DtwConfig,
    pub report: ReportConfig,
    pub class_split: ClassSplitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_root: PathBuf::from("data"),
            manifest: None,
            output_dir: PathBuf::from("runs"),
            fs1_checkpoint: None,
            fs2_checkpoint: None,
            protocol: ProtocolConfig::default(),
            arch: ArchSpec::default(),
            meta: MetaConfig::default(),
            finetune: FineTuneConfig::default(),
            finetune_fs2: FineTuneConfig::sequential(),
            scratch: FineTuneConfig::default(),
            dtw: DtwConfig::default(),
            report: ReportConfig::default(),
            class_split: ClassSplitConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_root);
        fix(&mut self.output_dir);
        for p in [&mut self.manifest, &mut self.fs1_checkpoint, &mut self.fs2_checkpoint]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.protocol.k < 2 && !self.protocol.full_split {
            return Err(Error::Config("k must be at least 2: the triplet loss needs a positive pair".into()));
        }
        if self.protocol.k_query == 0 && !self.protocol.full_split {
            return Err(Error::Config("k_query must be at least 1".into()));
        }
        if self.protocol.tasks_per_dataset == 0 {
            return Err(Error::Config("tasks_per_dataset must be at least 1".into()));
        }
        let mut seen = self.protocol.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.protocol.methods.len() {
            return Err(Error::Config("methods listed twice".into()));
        }
        self.arch.validate()?;
        self.meta.validate()?;
        self.finetune.validate()?;
        self.finetune_fs2.validate()?;
        self.scratch.validate()?;
        self.dtw.validate()?;
        if self.finetune.freeze > self.arch.conv_layers() {
            return Err(Error::Config(format!(
                "finetune.freeze = {} exceeds the {} conv layers",
                self.finetune.freeze,
                self.arch.conv_layers()
            )));
        }
        Ok(())
    }

    pub fn checkpoint_for(&self, method: Method) -> Option<&Path> {
        match method {
            Method::Fs1 => self.fs1_checkpoint.as_deref(),
            Method::Fs2 => self.fs2_checkpoint.as_deref(),
            _ => None,
        }
    }
}
