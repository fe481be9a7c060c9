//! The pipeline stages behind each subcommand. Every stage writes its
//! artifacts plus a `.run.toml` sidecar with the resolved configuration.
//! Wall-clock measurements go to separate `.timing.json` files so that all
//! other artifacts are byte-identical across reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use mtrack_core::blockwise::BlockTiming;
use mtrack_core::{
    build_graph, build_legacy_ilp, build_triplet_ilp, decode_tracks, enumerate_triplets, evaluate, extract_candidates, load_volume, read_tracks,
    save_volume, solve_blockwise, synthesize, write_tracks, BlockwiseConfig, CandidateFile, Error, GraphCosts, MatchResult, SolveStatus, TrackSet,
};
use serde::Serialize;

use crate::config::{sidecar, Formulation, RunConfig};

pub(crate) fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| anyhow!("no {what} path configured"))?;
    ensure!(p.exists(), "{what} {} does not exist", p.display());
    Ok(p)
}

pub(crate) fn output<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| anyhow!("no {what} output path configured"))?;
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(p)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub(crate) fn echo_config(artifact: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(&sidecar(artifact), &cfg.to_toml())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn stats_path(tracks: &Path) -> PathBuf {
    with_suffix(tracks, ".stats.json")
}

pub fn timing_path(artifact: &Path) -> PathBuf {
    with_suffix(artifact, ".timing.json")
}

pub fn default_state_dir(tracks: &Path) -> PathBuf {
    with_suffix(tracks, ".state")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub tracks: usize,
    pub shape: [usize; 3],
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthReport> {
    let vol_dir = output(&cfg.paths.volume, "volume")?;
    let gt_path = output(&cfg.paths.gt, "ground truth")?;
    let (gt, vol) = synthesize(&cfg.synth)?;
    save_volume(&vol, vol_dir)?;
    write_tracks(&gt, gt_path)?;
    // validate what landed on disk
    let back = load_volume(vol_dir)?;
    ensure!(back.shape() == vol.shape(), "volume did not round-trip");
    ensure!(read_tracks(gt_path)?.len() == gt.len(), "ground truth did not round-trip");
    echo_config(vol_dir, cfg)?;
    echo_config(gt_path, cfg)?;
    Ok(SynthReport {
        tracks: gt.len(),
        shape: vol.shape(),
    })
}

pub fn cmd_extract(cfg: &RunConfig) -> Result<usize> {
    let vol_dir = require(&cfg.paths.volume, "volume")?;
    let out = output(&cfg.paths.candidates, "candidates")?;
    let vol = load_volume(vol_dir)?;
    let cands = extract_candidates(&vol, &cfg.nms)?;
    let n = cands.len();
    let file = CandidateFile::new(vol_dir.to_string_lossy(), cfg.nms, &vol, cands);
    file.write(out)?;
    ensure!(CandidateFile::read(out)? == file, "candidates file did not round-trip");
    echo_config(out, cfg)?;
    Ok(n)
}

/// Deterministic facts about a solve, written next to the tracks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveStats {
    pub mode: &'static str,
    pub formulation: Formulation,
    pub solver: String,
    pub candidates: usize,
    pub edges: usize,
    pub triplets: usize,
    /// Whole-volume program size; per-block sizes are in the timing file.
    pub variables: Option<usize>,
    pub constraints: Option<usize>,
    pub objective: Option<f64>,
    pub status: String,
    pub tracks: usize,
    pub opened_cycles: usize,
    pub blocks: Option<usize>,
    pub phases: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveTiming {
    pub total_seconds: f64,
    pub solve_seconds: f64,
    pub resumed_blocks: usize,
    pub blocks: Vec<BlockTiming>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub stats: SolveStats,
    pub timing: SolveTiming,
    pub tracks: TrackSet,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::BoundLimit => "bound-limit",
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let vol = load_volume(require(&cfg.paths.volume, "volume")?)?;
    let cf = CandidateFile::read(require(&cfg.paths.candidates, "candidates")?)?;
    ensure!(
        cf.voxel_size == vol.voxel_size() && cf.offset == vol.offset(),
        "candidates were extracted from a volume with different geometry"
    );
    let tracks_path = output(&cfg.paths.tracks, "tracks")?;
    let backend = cfg.backend()?;
    let params = cfg.solve;
    let graph = build_graph(&cf.candidates, params.max_edge_length)?;
    if let Some(g) = &cfg.paths.graph {
        output(&cfg.paths.graph, "graph")?;
        graph.write(g)?;
    }
    let triplets = enumerate_triplets(&graph);
    let mut stats = SolveStats {
        mode: if cfg.blockwise.enabled { "blockwise" } else { "global" },
        formulation: cfg.formulation,
        solver: backend.name().to_string(),
        candidates: graph.len(),
        edges: graph.edge_count(),
        triplets: triplets.len(),
        variables: None,
        constraints: None,
        objective: None,
        status: String::new(),
        tracks: 0,
        opened_cycles: 0,
        blocks: None,
        phases: None,
    };
    let stats_file = stats_path(tracks_path);

    let (tracks, solve_seconds, resumed_blocks, blocks) = if cfg.blockwise.enabled {
        ensure!(cfg.formulation == Formulation::Triplet, "block-wise solving uses the triplet formulation only");
        let state_dir = cfg.paths.state_dir.clone().unwrap_or_else(|| default_state_dir(tracks_path));
        let bc = BlockwiseConfig {
            block_size: cfg.blockwise.block_size,
            context_size: cfg.blockwise.context_size,
            workers: cfg.workers,
            backend,
            time_limit: cfg.time_limit(),
            state_dir: Some(state_dir.clone()),
        };
        let t0 = Instant::now();
        let out = match solve_blockwise(&vol, &cf.candidates, &params, &bc) {
            Ok(out) => out,
            Err(e) => {
                stats.status = "failed".into();
                write_json(&stats_file, &stats)?;
                return Err(anyhow!(e).context(format!("block-wise solve failed; finished blocks kept in {}", state_dir.display())));
            }
        };
        stats.status = "optimal".into();
        stats.blocks = Some(out.records.len());
        stats.phases = Some(out.phases);
        (out.tracks, t0.elapsed().as_secs_f64(), out.resumed, out.timings)
    } else {
        let costs = GraphCosts::compute(&vol, &graph, &triplets, &params)?;
        let t0;
        let (solution, selected) = match cfg.formulation {
            Formulation::Triplet => {
                let ilp = build_triplet_ilp(&graph, &triplets, &costs);
                if let Some(lp) = &cfg.paths.lp {
                    output(&cfg.paths.lp, "lp")?;
                    ilp.problem.write_lp(lp)?;
                }
                stats.variables = Some(ilp.problem.num_vars());
                stats.constraints = Some(ilp.problem.num_constraints());
                t0 = Instant::now();
                let s = backend.solve(&ilp.problem, cfg.time_limit());
                let sel = s.as_ref().ok().map(|s| ilp.selected_triplets(s));
                (s, sel)
            }
            Formulation::Legacy => {
                let ilp = build_legacy_ilp(&graph, &triplets, &costs, cfg.legacy_objective);
                if let Some(lp) = &cfg.paths.lp {
                    output(&cfg.paths.lp, "lp")?;
                    ilp.problem.write_lp(lp)?;
                }
                stats.variables = Some(ilp.problem.num_vars());
                stats.constraints = Some(ilp.problem.num_constraints());
                t0 = Instant::now();
                let s = backend.solve(&ilp.problem, cfg.time_limit());
                let sel = s.as_ref().ok().map(|s| ilp.selected_triplets(s));
                (s, sel)
            }
        };
        let solve_seconds = t0.elapsed().as_secs_f64();
        let solution = match solution {
            Ok(s) => s,
            Err(Error::Timeout) => {
                stats.status = "timeout".into();
                write_json(&stats_file, &stats)?;
                bail!("solver hit the time limit without a feasible selection");
            }
            Err(e) => return Err(e.into()),
        };
        let tracks = decode_tracks(&graph, &selected.expect("solved"))?;
        stats.objective = Some(solution.objective);
        stats.status = status_name(solution.status).into();
        if solution.status != SolveStatus::Optimal {
            let partial = with_suffix(tracks_path, ".partial");
            tracks.write(&partial)?;
            stats.tracks = tracks.len();
            stats.opened_cycles = tracks.opened_cycles;
            write_json(&stats_file, &stats)?;
            bail!("solver hit the time limit; best selection so far written to {}", partial.display());
        }
        (tracks, solve_seconds, 0, Vec::new())
    };

    tracks.validate(&graph)?;
    stats.tracks = tracks.len();
    stats.opened_cycles = tracks.opened_cycles;
    tracks.write(tracks_path)?;
    ensure!(read_tracks(tracks_path)?.len() == tracks.len(), "tracks file did not round-trip");
    write_json(&stats_file, &stats)?;
    let timing = SolveTiming {
        total_seconds: start.elapsed().as_secs_f64(),
        solve_seconds,
        resumed_blocks,
        blocks,
    };
    write_json(&timing_path(tracks_path), &timing)?;
    echo_config(tracks_path, cfg)?;
    Ok(SolveReport { stats, timing, tracks })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MatchResult> {
    let rec = read_tracks(require(&cfg.paths.tracks, "tracks")?)?;
    let gt = read_tracks(require(&cfg.paths.gt, "ground truth")?)?;
    let report = output(&cfg.paths.report, "report")?;
    let m = evaluate(&rec, &gt, cfg.evaluation.spacing_nm, cfg.evaluation.max_dist_nm)?;
    write_text(report, &m.to_json())?;
    echo_config(report, cfg)?;
    Ok(m)
}
