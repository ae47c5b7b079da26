//! Run configuration as read from TOML, and its resolution against presets
//! and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use shiftex::{
    FeasibilityRule, GroupingRule, Method, ObjectiveSpec, OptimizerConfig, PerturbationSpec, PipelineConfig,
    SinkhornConfig,
};

use crate::presets;

/// Environment variable naming the default root for run directories.
pub const OUT_ENV: &str = "SHIFTEX_OUT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Vanilla,
    /// Group-aware training.
    Gse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Tabular {
        schema: PathBuf,
        source: PathBuf,
        target: PathBuf,
        /// Keep at most this many rows per side, drawn with the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample: Option<usize>,
    },
    /// CSV corpora with one document per row.
    Text {
        source: PathBuf,
        target: PathBuf,
        #[serde(default = "default_text_column")]
        text_column: String,
        /// Column holding a group label per document.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_column: Option<String>,
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample: Option<usize>,
    },
}

fn default_text_column() -> String {
    "text".into()
}

fn default_vocab() -> usize {
    shiftex::text::DEFAULT_CAP
}

impl DataSpec {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DataSpec::Tabular {
                schema,
                source,
                target,
                ..
            } => vec![schema, source, target],
            DataSpec::Text { source, target, .. } => vec![source, target],
        }
    }

    pub fn sample(&self) -> Option<usize> {
        match self {
            DataSpec::Tabular { sample, .. } | DataSpec::Text { sample, .. } => *sample,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSettings {
    pub trials: usize,
    pub worst_trials: usize,
    pub warm_start: bool,
    pub freeze_clusters: bool,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self {
            trials: 3,
            worst_trials: 100,
            warm_start: true,
            freeze_clusters: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub data: DataSpec,
    /// No grouping means a single group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<GroupingRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<FeasibilityRule>,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub robustness: RobustnessSettings,
    /// Seeds clustering, sampling, classifier init and perturbations.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Where to write; not echoed, since it does not affect results.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

fn default_repeats() -> usize {
    3
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub worst_trials: Option<usize>,
    pub repeats: Option<usize>,
}

/// Read a config; relative data paths are taken from the config's directory.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in cfg.data.paths_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(out) = cfg.out.as_mut().filter(|o| o.is_relative()) {
        *out = base.join(&*out);
    }
    Ok(cfg)
}

impl RunConfig {
    /// Apply overrides and fill method and optimizer from the preset, so the
    /// result no longer depends on the preset table.
    pub fn resolve(mut self, o: &Overrides) -> Result<RunConfig> {
        if let Some(p) = &o.preset {
            self.preset = Some(p.clone());
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(t) = o.trials {
            self.robustness.trials = t;
        }
        if let Some(t) = o.worst_trials {
            self.robustness.worst_trials = t;
        }
        if let Some(r) = o.repeats {
            self.repeats = r;
        }
        let preset = match &self.preset {
            Some(name) => Some(presets::find(name).with_context(|| {
                format!("unknown preset `{name}`; known presets: {}", presets::names().join(", "))
            })?),
            None => None,
        };
        if self.method.is_none() {
            self.method = Some(preset.map(|p| p.method).context("config sets neither `method` nor `preset`")?);
        }
        if self.optimizer.is_none() {
            self.optimizer = Some(match preset {
                Some(p) => p.optimizer,
                None if matches!(self.method, Some(Method::Dice { .. })) => OptimizerConfig {
                    learning_rate: 1.0,
                    iterations: 1,
                    seed: 0,
                },
                None => bail!("config sets neither `optimizer` nor `preset`"),
            });
        }
        let seed = self.seed;
        if let Some(opt) = self.optimizer.as_mut() {
            opt.seed = seed;
        }
        if let Some(Method::Dice { classifier, .. }) = self.method.as_mut() {
            classifier.seed = seed;
        }
        self.perturbation.seed = seed;
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        if self.robustness.trials == 0 {
            bail!("trials must be at least 1");
        }
        self.pipeline().validate().context("invalid method settings")?;
        self.perturbation.validate().context("invalid perturbation settings")?;
        Ok(self)
    }

    /// Settings for the core pipeline. Only meaningful once resolved.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            method: self.method.expect("resolved config has a method"),
            group_aware: self.mode == Mode::Gse,
            objective: self.objective,
            optimizer: self.optimizer.expect("resolved config has an optimizer"),
            sinkhorn: self.sinkhorn,
            cluster_seed: self.seed,
        }
    }

    /// Same settings under another seed.
    pub fn with_seed(&self, seed: u64) -> Result<RunConfig> {
        self.clone().resolve(&Overrides {
            seed: Some(seed),
            ..Overrides::default()
        })
    }

    /// `--out`, then the config's `out`, then `$SHIFTEX_OUT/<name>`, then `runs/<name>`.
    pub fn run_dir(&self, config_path: &Path) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let name = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Some(Method::KCluster { .. }) => "k-cluster",
            Some(Method::Ot) => "ot",
            Some(Method::Dice { .. }) => "dice",
            None => "unresolved",
        }
    }
}
