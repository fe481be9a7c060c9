//! Benchmarks: triplet vs. legacy program on random graphs, and block-wise
//! solving at several block sizes. Each writes plot-ready CSV series;
//! structural results and wall-clock results go to separate files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use anyhow::Result;
use mtrack_core::ilp::{compare_formulations, CompareConfig, ComparisonReport};
use mtrack_core::{block_benchmark, load_volume, read_tracks, BenchmarkConfig, BenchmarkReport, CandidateFile};
use serde::Serialize;

use crate::commands::{echo_config, output, require, write_json, write_text};
use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchKind {
    Formulations,
    Blocks,
    All,
}

pub fn compare_config(cfg: &RunConfig) -> CompareConfig {
    CompareConfig {
        sizes: cfg.bench.sizes.clone(),
        repetitions: cfg.bench.repetitions,
        mean_degree: cfg.bench.mean_degree,
        params: cfg.solve,
        seed: cfg.seed,
        time_limit: Some(Duration::from_secs_f64(cfg.bench.formulation_time_limit_secs)),
    }
}

/// Instance sizes and constraint counts; independent of timing.
pub fn formulation_counts_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("size,repetition,edges,triplets,triplet_constraints,legacy_constraints\n");
    for r in &report.rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.size, r.repetition, r.edges, r.triplets, r.triplet_constraints, r.legacy_constraints
        )
        .unwrap();
    }
    s
}

fn formulation_summary_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("size,median_triplet_seconds,median_legacy_seconds,median_ratio,timeouts\n");
    for m in report.summaries() {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.3},{}",
            m.size, m.median_triplet_seconds, m.median_legacy_seconds, m.median_ratio, m.timeouts
        )
        .unwrap();
    }
    s
}

pub fn bench_formulations(cfg: &RunConfig, out_dir: &Path) -> Result<ComparisonReport> {
    let report = compare_formulations(&compare_config(cfg))?;
    let counts = out_dir.join("formulations.csv");
    write_text(&counts, &formulation_counts_csv(&report))?;
    // objectives depend on timing too: a capped solve returns its incumbent
    write_text(&out_dir.join("formulations_timing.csv"), &report.to_csv())?;
    write_text(&out_dir.join("formulations_timing_summary.csv"), &formulation_summary_csv(&report))?;
    echo_config(&counts, cfg)?;
    Ok(report)
}

#[derive(Serialize)]
struct BlockSizeAccuracy {
    block_size: [usize; 3],
    context_size: [usize; 3],
    blocks: usize,
    phases: usize,
    f1_vs_global: f64,
    f1_ground_truth: Option<f64>,
}

#[derive(Serialize)]
struct BlockAccuracy {
    global_f1_ground_truth: Option<f64>,
    sizes: Vec<BlockSizeAccuracy>,
}

fn block_times_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from("block_z,block_y,block_x,block,solve_seconds\n");
    for size in &report.sizes {
        let [z, y, x] = size.block_size;
        for (i, t) in size.block_solve_seconds.iter().enumerate() {
            writeln!(s, "{z},{y},{x},{i},{t:.6}").unwrap();
        }
    }
    s
}

fn block_summary_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from("block_z,block_y,block_x,blocks,median_solve_seconds,global_solve_seconds\n");
    for size in &report.sizes {
        let [z, y, x] = size.block_size;
        writeln!(
            s,
            "{z},{y},{x},{},{:.6},{:.6}",
            size.blocks, size.median_solve_seconds, report.global_solve_seconds
        )
        .unwrap();
    }
    s
}

pub fn benchmark_config(cfg: &RunConfig) -> Result<BenchmarkConfig> {
    Ok(BenchmarkConfig {
        block_sizes: cfg.bench.block_sizes.clone(),
        margin: cfg.bench.margin,
        workers: cfg.workers,
        repeats: cfg.bench.repeats,
        backend: cfg.backend()?,
        time_limit: cfg.time_limit(),
        spacing_nm: cfg.evaluation.spacing_nm,
        max_dist_nm: cfg.evaluation.max_dist_nm,
    })
}

pub fn bench_blocks(cfg: &RunConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    let vol = load_volume(require(&cfg.paths.volume, "volume")?)?;
    let cands = CandidateFile::read(require(&cfg.paths.candidates, "candidates")?)?.candidates;
    let gt = match &cfg.paths.gt {
        Some(_) => Some(read_tracks(require(&cfg.paths.gt, "ground truth")?)?),
        None => None,
    };
    let report = block_benchmark(&vol, &cands, &cfg.solve, gt.as_deref(), &benchmark_config(cfg)?)?;
    let accuracy = BlockAccuracy {
        global_f1_ground_truth: report.global_f1_ground_truth,
        sizes: report
            .sizes
            .iter()
            .map(|s| BlockSizeAccuracy {
                block_size: s.block_size,
                context_size: s.context_size,
                blocks: s.blocks,
                phases: s.phases,
                f1_vs_global: s.f1_vs_global,
                f1_ground_truth: s.f1_ground_truth,
            })
            .collect(),
    };
    let acc_path = out_dir.join("blocks.json");
    write_json(&acc_path, &accuracy)?;
    write_text(&out_dir.join("blocks_timing.csv"), &block_times_csv(&report))?;
    write_text(&out_dir.join("blocks_timing_summary.csv"), &block_summary_csv(&report))?;
    echo_config(&acc_path, cfg)?;
    Ok(report)
}

pub struct BenchOutcome {
    pub formulations: Option<ComparisonReport>,
    pub blocks: Option<BenchmarkReport>,
}

pub fn cmd_bench(cfg: &RunConfig, kind: BenchKind) -> Result<BenchOutcome> {
    let out_dir = output(&cfg.paths.out_dir, "output directory")?;
    std::fs::create_dir_all(out_dir)?;
    let formulations = matches!(kind, BenchKind::Formulations | BenchKind::All)
        .then(|| bench_formulations(cfg, out_dir))
        .transpose()?;
    let blocks = matches!(kind, BenchKind::Blocks | BenchKind::All)
        .then(|| bench_blocks(cfg, out_dir))
        .transpose()?;
    Ok(BenchOutcome { formulations, blocks })
}
