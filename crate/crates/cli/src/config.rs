//! Run configuration: defaults, preset, config file and flags, merged in
//! that order of increasing precedence.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use mtrack_core::{Backend, LegacyObjective, NmsParams, Preset, SolveParams, SynthConfig, PRESET_NAMES};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Score volume directory.
    pub volume: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    /// Optional dump of the candidate graph built by `solve`.
    pub graph: Option<PathBuf>,
    /// Optional LP dump of the whole-volume program built by `solve`.
    pub lp: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Per-block results of a block-wise solve; defaults to `<tracks>.state`.
    pub state_dir: Option<PathBuf>,
    /// Output directory of `grid-search` and `bench`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    #[default]
    Triplet,
    Legacy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockwiseSection {
    pub enabled: bool,
    pub block_size: [usize; 3],
    pub context_size: [usize; 3],
}

impl Default for BlockwiseSection {
    fn default() -> Self {
        let p = Preset::builtin("NMS_GRAD").expect("builtin preset");
        BlockwiseSection {
            enabled: false,
            block_size: p.block_size,
            context_size: p.context_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub spacing_nm: f64,
    pub max_dist_nm: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            spacing_nm: 40.0,
            max_dist_nm: 80.0,
        }
    }
}

/// Values to try per parameter. An empty list keeps the configured value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub threshold: Vec<f32>,
    pub start_cost: Vec<f64>,
    pub node_prior: Vec<f64>,
    pub distance_weight: Vec<f64>,
    pub evidence_weight: Vec<f64>,
    pub curvature_weight: Vec<f64>,
    pub max_edge_length: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Candidate counts of the random graphs.
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub mean_degree: f64,
    /// Per-program limit in the formulation comparison, seconds.
    pub formulation_time_limit_secs: f64,
    pub block_sizes: Vec<[usize; 3]>,
    /// Context margin per axis around every block size.
    pub margin: [usize; 3],
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            sizes: vec![50, 100, 150],
            repetitions: 5,
            mean_degree: 2.0,
            formulation_time_limit_secs: 20.0,
            block_sizes: vec![[30, 125, 125], [30, 250, 250], [30, 500, 500]],
            margin: [10, 100, 100],
            repeats: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the preset the cost parameters and block sizes came from.
    pub preset: Option<String>,
    pub seed: u64,
    pub workers: usize,
    /// Solver time limit, seconds.
    pub time_limit_secs: Option<f64>,
    /// `built-in`, `highs` or `command:<program> [args...]`.
    pub solver: String,
    pub formulation: Formulation,
    pub legacy_objective: LegacyObjective,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub nms: NmsParams,
    pub solve: SolveParams,
    pub blockwise: BlockwiseSection,
    pub evaluation: EvaluationSection,
    pub grid: GridSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            seed: 0,
            workers: 1,
            time_limit_secs: None,
            solver: "highs".into(),
            formulation: Formulation::default(),
            legacy_objective: LegacyObjective::default(),
            paths: Paths::default(),
            synth: SynthConfig::default(),
            nms: NmsParams::default(),
            solve: SolveParams::default(),
            blockwise: BlockwiseSection::default(),
            evaluation: EvaluationSection::default(),
            grid: GridSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> toml::Table {
    toml::Table::try_from(value).expect("config serializes to a table")
}

/// Applies a named preset: cost parameters and block decomposition.
pub fn apply_preset(cfg: &mut RunConfig, name: &str) -> Result<()> {
    let Some(p) = Preset::builtin(name) else {
        bail!("unknown preset {name:?}; expected one of {}", PRESET_NAMES.join(", "));
    };
    cfg.preset = Some(name.to_string());
    cfg.solve = p.params;
    cfg.blockwise.block_size = p.block_size;
    cfg.blockwise.context_size = p.context_size;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the preset (the flag wins over the file's `preset`
    /// key), then the file's own values.
    pub fn resolve(file_text: Option<&str>, preset_flag: Option<&str>) -> Result<RunConfig> {
        let mut file: toml::Table = match file_text {
            Some(text) => toml::from_str(text).context("parsing config file")?,
            None => toml::Table::new(),
        };
        let top_seed = file.get("seed").cloned();
        if let Some(toml::Value::Table(s)) = file.get_mut("synth") {
            // written by the sidecars; must agree with the top-level seed
            if let Some(v) = s.remove("seed") {
                ensure!(
                    Some(&v) == top_seed.as_ref() || (top_seed.is_none() && v == toml::Value::Integer(0)),
                    "set the top-level `seed`, not `synth.seed`"
                );
            }
        }
        let preset = match preset_flag {
            Some(p) => Some(p.to_string()),
            None => match file.get("preset") {
                Some(toml::Value::String(s)) => Some(s.clone()),
                Some(other) => bail!("`preset` must be a string, got {other}"),
                None => None,
            },
        };
        let mut base = RunConfig::default();
        if let Some(name) = &preset {
            apply_preset(&mut base, name)?;
        }
        let mut table = to_table(&base);
        merge(&mut table, file);
        let mut cfg: RunConfig = table.try_into().context("invalid config")?;
        cfg.preset = preset;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, preset_flag: Option<&str>) -> Result<RunConfig> {
        let text = path
            .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())))
            .transpose()?;
        RunConfig::resolve(text.as_deref(), preset_flag)
    }

    pub fn validate(&self) -> Result<()> {
        self.nms.validate()?;
        self.solve.validate()?;
        self.synth.validate()?;
        self.backend()?;
        ensure!(self.workers >= 1, "workers must be at least 1");
        // config files store integers as i64
        ensure!(i64::try_from(self.seed).is_ok(), "seed must be at most {}", i64::MAX);
        if let Some(t) = self.time_limit_secs {
            ensure!(t.is_finite() && t > 0.0, "time limit must be positive, got {t}");
        }
        let b = &self.blockwise;
        ensure!(!b.block_size.contains(&0), "block size must be positive: {:?}", b.block_size);
        ensure!(
            (0..3).all(|a| b.context_size[a] >= b.block_size[a]),
            "context {:?} smaller than block {:?}",
            b.context_size,
            b.block_size
        );
        let e = &self.evaluation;
        ensure!(e.spacing_nm > 0.0 && e.spacing_nm.is_finite(), "spacing must be positive");
        ensure!(e.max_dist_nm > 0.0 && e.max_dist_nm.is_finite(), "max_dist must be positive");
        ensure!(self.bench.mean_degree > 0.0, "mean degree must be positive");
        ensure!(self.bench.formulation_time_limit_secs > 0.0, "formulation time limit must be positive");
        for bs in &self.bench.block_sizes {
            ensure!(!bs.contains(&0), "block size must be positive: {bs:?}");
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
    }

    pub fn backend(&self) -> Result<Backend> {
        Ok(self.solver.parse()?)
    }

    pub fn time_limit(&self) -> Option<Duration> {
        self.time_limit_secs.map(Duration::from_secs_f64)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        Ok(toml::from_str(text)?)
    }
}

/// `<artifact>.run.toml`, the resolved configuration that produced an artifact.
pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".run.toml");
    artifact.with_file_name(name)
}
