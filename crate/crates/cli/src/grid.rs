//! Exhaustive search over cost parameters and the NMS threshold, each
//! combination run end to end and scored against ground truth.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use mtrack_core::{evaluate, extract_candidates, load_volume, read_tracks, solve_global, Backend, NmsParams, ScoreVolume, SolveParams, Track};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{echo_config, output, require, write_text};
use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Combination {
    pub index: usize,
    pub threshold: f32,
    pub params: SolveParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub combination: Combination,
    pub tracks: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// All combinations in a fixed order: threshold outermost, then the cost
/// parameters in declaration order.
pub fn combinations(cfg: &RunConfig) -> Vec<Combination> {
    let g = &cfg.grid;
    let b = cfg.solve;
    let mut out = Vec::new();
    for &threshold in &or_base(&g.threshold, cfg.nms.threshold) {
        for &start_cost in &or_base(&g.start_cost, b.start_cost) {
            for &node_prior in &or_base(&g.node_prior, b.node_prior) {
                for &distance_weight in &or_base(&g.distance_weight, b.distance_weight) {
                    for &evidence_weight in &or_base(&g.evidence_weight, b.evidence_weight) {
                        for &curvature_weight in &or_base(&g.curvature_weight, b.curvature_weight) {
                            for &max_edge_length in &or_base(&g.max_edge_length, b.max_edge_length) {
                                out.push(Combination {
                                    index: out.len(),
                                    threshold,
                                    params: SolveParams {
                                        start_cost,
                                        node_prior,
                                        distance_weight,
                                        evidence_weight,
                                        curvature_weight,
                                        max_edge_length,
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn run_one(vol: &ScoreVolume, gt: &[Track], cfg: &RunConfig, backend: &Backend, c: &Combination) -> Result<(Vec<Track>, mtrack_core::MatchResult)> {
    let nms = NmsParams {
        threshold: c.threshold,
        ..cfg.nms
    };
    let cands = extract_candidates(vol, &nms)?;
    let out = solve_global(vol, &cands, &c.params, backend, cfg.time_limit())?;
    if out.summary.status != mtrack_core::SolveStatus::Optimal {
        anyhow::bail!("solver hit the time limit");
    }
    let rec = out.tracks.to_tracks();
    let m = evaluate(&rec, gt, cfg.evaluation.spacing_nm, cfg.evaluation.max_dist_nm)?;
    Ok((rec, m))
}

/// Runs every combination (in parallel over `workers`) and returns the rows
/// ranked. When `runs_dir` is given each combination's tracks and report land
/// in their own subdirectory.
pub fn grid_search(vol: &ScoreVolume, gt: &[Track], cfg: &RunConfig, runs_dir: Option<&Path>) -> Result<Vec<GridRow>> {
    let backend = cfg.backend()?;
    let combos = combinations(cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let mut rows: Vec<GridRow> = pool.install(|| {
        combos
            .par_iter()
            .map(|c| {
                let t0 = Instant::now();
                let result = run_one(vol, gt, cfg, &backend, c).and_then(|(rec, m)| {
                    if let Some(dir) = runs_dir {
                        let d = dir.join(format!("{:04}", c.index));
                        mtrack_core::write_tracks(&rec, &d.join("tracks.csv"))?;
                        write_text(&d.join("report.json"), &m.to_json())?;
                    }
                    Ok((rec.len(), m))
                });
                let seconds = t0.elapsed().as_secs_f64();
                match result {
                    Ok((n, m)) => GridRow {
                        combination: *c,
                        tracks: Some(n),
                        precision: Some(m.precision),
                        recall: Some(m.recall),
                        f1: Some(m.f1),
                        error: None,
                        seconds,
                    },
                    Err(e) => {
                        log::warn!("combination {} failed: {e:#}", c.index);
                        GridRow {
                            combination: *c,
                            tracks: None,
                            precision: None,
                            recall: None,
                            f1: None,
                            error: Some(format!("{e:#}")),
                            seconds,
                        }
                    }
                }
            })
            .collect()
    });
    rank(&mut rows);
    Ok(rows)
}

/// Sorts by F1, best first, ties by combination index; failures last.
pub fn rank(rows: &mut [GridRow]) {
    rows.sort_by(|a, b| {
        let key = |r: &GridRow| r.f1.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.combination.index.cmp(&b.combination.index))
    });
}

/// Ranked table; the first successful row is marked best.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(
        "rank,index,threshold,start_cost,node_prior,distance_weight,evidence_weight,curvature_weight,max_edge_length,tracks,precision,recall,f1,best,error\n",
    );
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
    for (rank, r) in rows.iter().enumerate() {
        let c = &r.combination;
        let p = &c.params;
        let best = rank == 0 && r.f1.is_some();
        let error = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
            rank + 1,
            c.index,
            c.threshold,
            p.start_cost,
            p.node_prior,
            p.distance_weight,
            p.evidence_weight,
            p.curvature_weight,
            p.max_edge_length,
            r.tracks.map_or(String::new(), |n| n.to_string()),
            opt(r.precision),
            opt(r.recall),
            opt(r.f1),
            best,
            error
        )
        .unwrap();
    }
    s
}

fn timing_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("index,seconds\n");
    let mut by_index: Vec<&GridRow> = rows.iter().collect();
    by_index.sort_by_key(|r| r.combination.index);
    for r in by_index {
        writeln!(s, "{},{:.6}", r.combination.index, r.seconds).unwrap();
    }
    s
}

/// The best combination as a config fragment usable with `--config`.
pub fn best_config(rows: &[GridRow]) -> Option<String> {
    #[derive(Serialize)]
    struct Nms {
        threshold: f32,
    }
    #[derive(Serialize)]
    struct Best {
        nms: Nms,
        solve: SolveParams,
    }
    let r = rows.first().filter(|r| r.f1.is_some())?;
    let best = Best {
        nms: Nms {
            threshold: r.combination.threshold,
        },
        solve: r.combination.params,
    };
    Some(toml::to_string(&best).expect("serializes"))
}

pub struct GridReport {
    pub rows: Vec<GridRow>,
}

pub fn cmd_grid_search(cfg: &RunConfig) -> Result<GridReport> {
    let vol = load_volume(require(&cfg.paths.volume, "volume")?)?;
    let gt = read_tracks(require(&cfg.paths.gt, "ground truth")?)?;
    let out_dir = output(&cfg.paths.out_dir, "output directory")?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let rows = grid_search(&vol, &gt, cfg, Some(&out_dir.join("runs")))?;
    let table = out_dir.join("grid.csv");
    write_text(&table, &grid_csv(&rows))?;
    write_text(&out_dir.join("grid_timing.csv"), &timing_csv(&rows))?;
    if let Some(best) = best_config(&rows) {
        write_text(&out_dir.join("best.toml"), &best)?;
    }
    echo_config(&table, cfg)?;
    Ok(GridReport { rows })
}
