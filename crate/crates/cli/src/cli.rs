//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::bench::{cmd_bench, BenchKind};
use crate::commands::{cmd_evaluate, cmd_extract, cmd_solve, cmd_synth};
use crate::config::{Formulation, RunConfig};
use crate::grid::cmd_grid_search;

#[derive(Debug, Parser)]
#[command(name = "mtrack", version, about = "Track reconstruction from 3D score volumes")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Named cost parameter set.
    #[arg(long, global = true, value_parser = ["NMS_GRAD", "CC_GRAD", "NMS_SM", "NMS_RFC", "Baseline"])]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Solver time limit in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    pub time_limit: Option<f64>,
    /// `built-in`, `highs` or `command:<program> [args...]`.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic score volume and its ground-truth tracks.
    Synth {
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Extract candidates from a score volume.
    Extract {
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Build the candidate graph, solve for tracks and write them.
    Solve(SolveArgs),
    /// Score tracks against ground truth.
    Evaluate {
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        max_dist: Option<f64>,
    },
    /// Extract, solve and evaluate every parameter combination of the grid.
    GridSearch {
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Formulation and block-size benchmarks.
    Bench {
        #[arg(value_enum, default_value = "all")]
        kind: BenchKind,
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Also write the candidate graph here.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Also write the whole-volume program in LP format here.
    #[arg(long)]
    pub lp: Option<PathBuf>,
    #[arg(long)]
    pub blockwise: bool,
    /// Block size in voxels, `z,y,x`.
    #[arg(long, value_parser = parse_triple)]
    pub block_size: Option<[usize; 3]>,
    /// Context size in voxels, `z,y,x`.
    #[arg(long, value_parser = parse_triple)]
    pub context_size: Option<[usize; 3]>,
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
    /// Price only the triplet indicators of the legacy program.
    #[arg(long)]
    pub triplet_only_costs: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum FormulationArg {
    Triplet,
    Legacy,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [z, y, x] = parts[..] else {
        return Err(format!("expected z,y,x, got {s:?}"));
    };
    let p = |t: &str| t.parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(z)?, p(y)?, p(x)?])
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl Cli {
    /// Resolves the configuration: defaults, preset, file, then flags.
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), self.preset.as_deref())?;
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        set(&mut cfg.time_limit_secs, self.time_limit);
        if let Some(s) = &self.solver {
            cfg.solver = s.clone();
        }
        let p = &mut cfg.paths;
        match &self.command {
            Command::Synth { volume, gt } => {
                set(&mut p.volume, volume.clone());
                set(&mut p.gt, gt.clone());
            }
            Command::Extract {
                volume,
                candidates,
                threshold,
            } => {
                set(&mut p.volume, volume.clone());
                set(&mut p.candidates, candidates.clone());
                if let Some(t) = threshold {
                    cfg.nms.threshold = *t;
                }
            }
            Command::Solve(a) => {
                set(&mut p.volume, a.volume.clone());
                set(&mut p.candidates, a.candidates.clone());
                set(&mut p.tracks, a.tracks.clone());
                set(&mut p.graph, a.graph.clone());
                set(&mut p.lp, a.lp.clone());
                set(&mut p.state_dir, a.state_dir.clone());
                if a.blockwise {
                    cfg.blockwise.enabled = true;
                }
                if let Some(b) = a.block_size {
                    cfg.blockwise.block_size = b;
                }
                if let Some(c) = a.context_size {
                    cfg.blockwise.context_size = c;
                }
                match a.formulation {
                    Some(FormulationArg::Triplet) => cfg.formulation = Formulation::Triplet,
                    Some(FormulationArg::Legacy) => cfg.formulation = Formulation::Legacy,
                    None => {}
                }
                if a.triplet_only_costs {
                    cfg.legacy_objective = mtrack_core::LegacyObjective::TripletOnly;
                }
            }
            Command::Evaluate {
                tracks,
                gt,
                report,
                spacing,
                max_dist,
            } => {
                set(&mut p.tracks, tracks.clone());
                set(&mut p.gt, gt.clone());
                set(&mut p.report, report.clone());
                if let Some(s) = spacing {
                    cfg.evaluation.spacing_nm = *s;
                }
                if let Some(d) = max_dist {
                    cfg.evaluation.max_dist_nm = *d;
                }
            }
            Command::GridSearch { volume, gt, out_dir } => {
                set(&mut p.volume, volume.clone());
                set(&mut p.gt, gt.clone());
                set(&mut p.out_dir, out_dir.clone());
            }
            Command::Bench {
                volume,
                candidates,
                gt,
                out_dir,
                ..
            } => {
                set(&mut p.volume, volume.clone());
                set(&mut p.candidates, candidates.clone());
                set(&mut p.gt, gt.clone());
                set(&mut p.out_dir, out_dir.clone());
            }
            Command::Config => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and returns the line printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.config()?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    Ok(match &cli.command {
        Command::Synth { .. } => {
            let r = cmd_synth(&cfg)?;
            format!("synth: {} tracks in a {:?} volume", r.tracks, r.shape)
        }
        Command::Extract { .. } => format!("extract: {} candidates", cmd_extract(&cfg)?),
        Command::Solve(_) => {
            let r = cmd_solve(&cfg)?;
            let s = &r.stats;
            format!(
                "solve: {} tracks from {} candidates ({}, {}), {:.2} s",
                s.tracks, s.candidates, s.mode, s.status, r.timing.total_seconds
            )
        }
        Command::Evaluate { .. } => format!("evaluate: {}", cmd_evaluate(&cfg)?.summary()),
        Command::GridSearch { .. } => {
            let r = cmd_grid_search(&cfg)?;
            let failed = r.rows.iter().filter(|r| r.f1.is_none()).count();
            match r.rows.first().and_then(|b| b.f1.map(|f| (b.combination.index, f))) {
                Some((i, f1)) => format!("grid-search: {} combinations, {failed} failed, best #{i} f1={f1:.4}", r.rows.len()),
                None => bail!("grid-search: all {} combinations failed", r.rows.len()),
            }
        }
        Command::Bench { kind, .. } => {
            let r = cmd_bench(&cfg, *kind)?;
            let mut s = String::from("bench:");
            if let Some(f) = &r.formulations {
                s.push('\n');
                s.push_str(&f.to_table());
            }
            if let Some(b) = &r.blocks {
                for size in &b.sizes {
                    s.push_str(&format!(
                        "\nblock {:?}: {} blocks, median solve {:.3} s, f1 vs global {:.4}",
                        size.block_size, size.blocks, size.median_solve_seconds, size.f1_vs_global
                    ));
                }
            }
            s
        }
        Command::Config => cfg.to_toml(),
    })
}
