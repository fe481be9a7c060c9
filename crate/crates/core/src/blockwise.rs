//! Block-wise solving of large volumes.
//!
//! The volume is tiled into blocks; each block is solved on the candidates
//! of a larger context region around it, but only the decisions for
//! candidates inside the block are kept. Blocks whose regions do not reach
//! into each other's context are solved concurrently in phases. Later
//! blocks see the stored decisions of earlier ones as fixed values, so the
//! union of all kept decisions is a consistent selection.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::costs::{GraphCosts, SolveParams};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Track};
use crate::fsutil;
use crate::graph::{build_graph, enumerate_triplets, CandidateGraph, Node, Triplet};
use crate::ilp::{build_pinned_triplet_ilp, decode_tracks, median, Backend, FixedLinks, SolveStatus, TrackSet};
use crate::pipeline::solve_global;
use crate::volume::ScoreVolume;

/// One tile of the block grid, in voxels. The context is the block grown by
/// the margin on every side and clipped to the volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: [usize; 3],
    pub begin: [usize; 3],
    pub shape: [usize; 3],
    pub context_begin: [usize; 3],
    pub context_shape: [usize; 3],
}

fn within(v: [usize; 3], begin: [usize; 3], shape: [usize; 3]) -> bool {
    (0..3).all(|a| v[a] >= begin[a] && v[a] < begin[a] + shape[a])
}

fn overlaps(b1: [usize; 3], s1: [usize; 3], b2: [usize; 3], s2: [usize; 3]) -> bool {
    (0..3).all(|a| b1[a] < b2[a] + s2[a] && b2[a] < b1[a] + s1[a])
}

impl Block {
    /// The block owns a voxel inside its half-open range.
    pub fn owns(&self, v: [usize; 3]) -> bool {
        within(v, self.begin, self.shape)
    }

    pub fn context_contains(&self, v: [usize; 3]) -> bool {
        within(v, self.context_begin, self.context_shape)
    }

    /// Either block reaches into the other's context.
    pub fn conflicts(&self, other: &Block) -> bool {
        overlaps(self.begin, self.shape, other.context_begin, other.context_shape)
            || overlaps(other.begin, other.shape, self.context_begin, self.context_shape)
    }

    pub fn roi(&self, vol: &ScoreVolume) -> crate::volume::Roi {
        crate::volume::Roi {
            begin: vol.world_of_voxel(self.begin),
            shape: std::array::from_fn(|a| self.shape[a] as f64 * vol.voxel_size()[a]),
        }
    }

    pub fn context_roi(&self, vol: &ScoreVolume) -> crate::volume::Roi {
        crate::volume::Roi {
            begin: vol.world_of_voxel(self.context_begin),
            shape: std::array::from_fn(|a| self.context_shape[a] as f64 * vol.voxel_size()[a]),
        }
    }

    pub fn name(&self) -> String {
        format!("block_{}_{}_{}", self.index[0], self.index[1], self.index[2])
    }
}

/// Per-axis margin between block and context.
pub fn margin(block_size: [usize; 3], context_size: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| context_size[a].saturating_sub(block_size[a]) / 2)
}

/// Regular grid of blocks covering `shape`, in lexicographic index order.
pub fn partition(shape: [usize; 3], block_size: [usize; 3], context_size: [usize; 3]) -> Result<Vec<Block>> {
    if shape.contains(&0) {
        return Err(Error::EmptyVolume);
    }
    if block_size.contains(&0) {
        return Err(Error::InvalidParam(format!("block size must be positive, got {block_size:?}")));
    }
    if (0..3).any(|a| context_size[a] < block_size[a]) {
        return Err(Error::InvalidParam(format!("context {context_size:?} is smaller than block {block_size:?}")));
    }
    let m = margin(block_size, context_size);
    let counts: [usize; 3] = std::array::from_fn(|a| shape[a].div_ceil(block_size[a]));
    let mut blocks = Vec::with_capacity(counts.iter().product());
    for z in 0..counts[0] {
        for y in 0..counts[1] {
            for x in 0..counts[2] {
                let index = [z, y, x];
                let begin: [usize; 3] = std::array::from_fn(|a| index[a] * block_size[a]);
                let end: [usize; 3] = std::array::from_fn(|a| (begin[a] + block_size[a]).min(shape[a]));
                let cb: [usize; 3] = std::array::from_fn(|a| begin[a].saturating_sub(m[a]));
                let ce: [usize; 3] = std::array::from_fn(|a| (end[a] + m[a]).min(shape[a]));
                blocks.push(Block {
                    index,
                    begin,
                    shape: std::array::from_fn(|a| end[a] - begin[a]),
                    context_begin: cb,
                    context_shape: std::array::from_fn(|a| ce[a] - cb[a]),
                });
            }
        }
    }
    Ok(blocks)
}

/// Phases of mutually conflict-free blocks; entries index the block list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockSchedule {
    pub phases: Vec<Vec<usize>>,
}

impl BlockSchedule {
    /// Every block in exactly one phase and no conflict inside a phase.
    pub fn validate(&self, blocks: &[Block]) -> Result<()> {
        let mut seen = vec![0usize; blocks.len()];
        for phase in &self.phases {
            for (k, &a) in phase.iter().enumerate() {
                seen[a] += 1;
                for &b in &phase[k + 1..] {
                    if blocks[a].conflicts(&blocks[b]) {
                        return Err(Error::Inconsistent(format!(
                            "{} and {} share a phase but conflict",
                            blocks[a].name(),
                            blocks[b].name()
                        )));
                    }
                }
            }
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Inconsistent(format!("{} is scheduled {} times", blocks[i].name(), seen[i])));
        }
        Ok(())
    }
}

/// Greedy coloring of the conflict graph in block order: each block joins
/// the first phase holding none of its conflicts.
pub fn schedule_phases(blocks: &[Block]) -> BlockSchedule {
    let mut color = vec![usize::MAX; blocks.len()];
    let mut phases: Vec<Vec<usize>> = Vec::new();
    for i in 0..blocks.len() {
        let mut used = vec![false; phases.len() + 1];
        for j in 0..i {
            if blocks[i].conflicts(&blocks[j]) {
                used[color[j]] = true;
            }
        }
        let c = used.iter().position(|&u| !u).unwrap();
        if c == phases.len() {
            phases.push(Vec::new());
        }
        phases[c].push(i);
        color[i] = c;
    }
    BlockSchedule { phases }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockwiseConfig {
    pub block_size: [usize; 3],
    pub context_size: [usize; 3],
    pub workers: usize,
    pub backend: Backend,
    pub time_limit: Option<Duration>,
    /// Directory of per-block results; existing results are reused.
    pub state_dir: Option<PathBuf>,
}

/// Stored decisions of one block: the selected triplets centered at its
/// candidates, as candidate ids with `-1` for the terminal. Every other
/// triplet centered in the block is unselected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: [usize; 3],
    pub owned_candidates: usize,
    pub objective: f64,
    pub selected: Vec<[i64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockTiming {
    pub block: [usize; 3],
    pub phase: usize,
    pub context_candidates: usize,
    pub variables: usize,
    pub constraints: usize,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct BlockwiseOutcome {
    pub tracks: TrackSet,
    pub records: Vec<BlockRecord>,
    /// Blocks solved in this run; resumed blocks have no entry.
    pub timings: Vec<BlockTiming>,
    pub phases: usize,
    pub resumed: usize,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct Manifest {
    block_size: [usize; 3],
    context_size: [usize; 3],
    params: SolveParams,
    candidates: usize,
    candidate_digest: String,
}

fn candidate_digest(graph: &CandidateGraph) -> String {
    // FNV-1a over ids and voxels
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for c in graph.candidates() {
        eat(c.id as u64);
        c.voxel.iter().for_each(|&v| eat(v as u64));
    }
    format!("{h:016x}")
}

fn node_to_id(graph: &CandidateGraph, n: Node) -> i64 {
    match n {
        Node::Terminal => -1,
        Node::Candidate(i) => graph.candidate(i).id as i64,
    }
}

struct Shared<'a> {
    vol: &'a ScoreVolume,
    graph: &'a CandidateGraph,
    params: &'a SolveParams,
    backend: &'a Backend,
    time_limit: Option<Duration>,
    state_dir: Option<&'a Path>,
}

/// Decisions of candidates owned by finished blocks, by global index.
type Decided = Vec<Option<FixedLinks>>;

fn solve_block(sh: &Shared, block: &Block, phase: usize, decided: &Decided) -> Result<(BlockRecord, BlockTiming)> {
    let members: Vec<u32> = (0..sh.graph.len() as u32)
        .filter(|&i| block.context_contains(sh.graph.candidate(i).voxel))
        .collect();
    let local_cands: Vec<Candidate> = members.iter().map(|&i| sh.graph.candidate(i).clone()).collect();
    let sub = build_graph(&local_cands, sh.params.max_edge_length)?;
    debug_assert!(sub.candidates().iter().zip(&members).all(|(c, &g)| c.id == sh.graph.candidate(g).id));
    let local_of: HashMap<u32, u32> = members.iter().enumerate().map(|(l, &g)| (g, l as u32)).collect();
    let to_local = |n: Node| match n {
        Node::Terminal => Node::Terminal,
        Node::Candidate(g) => Node::Candidate(local_of.get(&g).copied().unwrap_or(u32::MAX)),
    };
    let fixed: Vec<Option<FixedLinks>> = members
        .iter()
        .map(|&g| {
            decided[g as usize].map(|links| {
                links.map(|[x, y]| {
                    let (a, b) = (to_local(x), to_local(y));
                    if a <= b {
                        [a, b]
                    } else {
                        [b, a]
                    }
                })
            })
        })
        .collect();

    let triplets = enumerate_triplets(&sub);
    let costs = GraphCosts::compute(sh.vol, &sub, &triplets, sh.params)?;
    let ilp = build_pinned_triplet_ilp(&sub, &triplets, &costs, &fixed);
    let t0 = Instant::now();
    let solution = sh.backend.solve(&ilp.problem, sh.time_limit)?;
    let solve_seconds = t0.elapsed().as_secs_f64();
    if solution.status == SolveStatus::BoundLimit {
        return Err(Error::Timeout);
    }

    let owned: Vec<bool> = sub.candidates().iter().map(|c| block.owns(c.voxel)).collect();
    let mut selected: Vec<[i64; 3]> = ilp
        .selected_triplets(&solution)
        .into_iter()
        .filter(|t| owned[t.center as usize])
        .map(|t| [node_to_id(&sub, t.a), sub.candidate(t.center).id as i64, node_to_id(&sub, t.b)])
        .collect();
    selected.sort_unstable();
    let owned_objective: f64 = ilp
        .selected_triplets(&solution)
        .iter()
        .zip(solution.selected())
        .filter(|(t, _)| owned[t.center as usize])
        .map(|(_, k)| ilp.problem.objective()[k])
        .sum();
    let record = BlockRecord {
        block: block.index,
        owned_candidates: owned.iter().filter(|&&o| o).count(),
        objective: owned_objective,
        selected,
    };
    if let Some(dir) = sh.state_dir {
        write_record(dir, block, &record)?;
    }
    let stats = ilp.problem.stats();
    Ok((
        record,
        BlockTiming {
            block: block.index,
            phase,
            context_candidates: sub.len(),
            variables: stats.variables,
            constraints: stats.constraints,
            solve_seconds,
        },
    ))
}

fn record_path(dir: &Path, block: &Block) -> PathBuf {
    dir.join(format!("{}.json", block.name()))
}

fn write_record(dir: &Path, block: &Block, record: &BlockRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).expect("record serializes") + "\n";
    fsutil::write_file_atomic(&record_path(dir, block), text.as_bytes())
}

fn read_record(dir: &Path, block: &Block) -> Result<Option<BlockRecord>> {
    let path = record_path(dir, block);
    match std::fs::read(&path) {
        Ok(bytes) => {
            let r: BlockRecord = serde_json::from_slice(&bytes).map_err(|e| Error::format("block state", &path, e))?;
            if r.block != block.index {
                return Err(Error::format("block state", &path, format!("holds block {:?}", r.block)));
            }
            Ok(Some(r))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

fn prepare_state_dir(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.json");
    match std::fs::read(&path) {
        Ok(bytes) => {
            let existing: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::format("block state manifest", &path, e))?;
            if existing != *manifest {
                return Err(Error::InvalidParam(format!("{} belongs to a different run", dir.display())));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
            fsutil::write_file_atomic(&path, text.as_bytes())
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}

fn apply_record(graph: &CandidateGraph, blocks_owned: &[u32], record: &BlockRecord, decided: &mut Decided) -> Result<()> {
    for &g in blocks_owned {
        decided[g as usize] = Some(None);
    }
    let node = |id: i64| -> Result<Node> {
        if id < 0 {
            return Ok(Node::Terminal);
        }
        graph
            .index_of_id(id as u32)
            .map(Node::Candidate)
            .ok_or_else(|| Error::Inconsistent(format!("stored decision names unknown candidate {id}")))
    };
    for &[a, c, b] in &record.selected {
        let Node::Candidate(ci) = node(c)? else {
            return Err(Error::Inconsistent("stored triplet centered at the terminal".into()));
        };
        let t = Triplet::new(node(a)?, ci, node(b)?).ok_or_else(|| Error::Inconsistent(format!("degenerate stored triplet {:?}", [a, c, b])))?;
        if decided[ci as usize] != Some(None) {
            return Err(Error::Inconsistent(format!("candidate {c} decided twice")));
        }
        decided[ci as usize] = Some(Some(t.outer()));
    }
    Ok(())
}

/// Solves block by block and decodes the union of the kept decisions.
pub fn solve_blockwise(vol: &ScoreVolume, candidates: &[Candidate], params: &SolveParams, config: &BlockwiseConfig) -> Result<BlockwiseOutcome> {
    params.validate()?;
    let graph = build_graph(candidates, params.max_edge_length)?;
    let blocks = partition(vol.shape(), config.block_size, config.context_size)?;
    let m = margin(config.block_size, config.context_size);
    if (0..3).any(|a| blocks.len() > 1 && (m[a] as f64) * vol.voxel_size()[a] < 2.0 * params.max_edge_length) {
        log::warn!(
            "context margin {m:?} voxels is below twice the edge length limit; block decisions may disagree at boundaries"
        );
    }
    let schedule = schedule_phases(&blocks);
    schedule.validate(&blocks)?;

    let owned_by: Vec<Vec<u32>> = {
        let mut v = vec![Vec::new(); blocks.len()];
        let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
        for (k, b) in blocks.iter().enumerate() {
            lookup.insert(b.index, k);
        }
        for i in 0..graph.len() as u32 {
            let vox = graph.candidate(i).voxel;
            let idx: [usize; 3] = std::array::from_fn(|a| vox[a] / config.block_size[a]);
            match lookup.get(&idx) {
                Some(&k) => v[k].push(i),
                None => return Err(Error::OutOfBounds(vox.map(|x| x as i64))),
            }
        }
        v
    };

    if let Some(dir) = &config.state_dir {
        prepare_state_dir(
            dir,
            &Manifest {
                block_size: config.block_size,
                context_size: config.context_size,
                params: *params,
                candidates: graph.len(),
                candidate_digest: candidate_digest(&graph),
            },
        )?;
    }

    let mut decided: Decided = vec![None; graph.len()];
    let mut records: BTreeMap<usize, BlockRecord> = BTreeMap::new();
    let mut resumed = 0;
    if let Some(dir) = &config.state_dir {
        for (k, b) in blocks.iter().enumerate() {
            if let Some(r) = read_record(dir, b)? {
                apply_record(&graph, &owned_by[k], &r, &mut decided)?;
                records.insert(k, r);
                resumed += 1;
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
    let shared = Shared {
        vol,
        graph: &graph,
        params,
        backend: &config.backend,
        time_limit: config.time_limit,
        state_dir: config.state_dir.as_deref(),
    };
    let mut timings = Vec::new();
    for (p, phase) in schedule.phases.iter().enumerate() {
        let todo: Vec<usize> = phase.iter().copied().filter(|k| !records.contains_key(k)).collect();
        let run = |k: usize| catch_unwind(AssertUnwindSafe(|| solve_block(&shared, &blocks[k], p, &decided)));
        let mut results: Vec<(usize, std::thread::Result<Result<(BlockRecord, BlockTiming)>>)> =
            pool.install(|| todo.par_iter().map(|&k| (k, run(k))).collect());
        for (k, r) in results.iter_mut() {
            if r.is_err() {
                log::warn!("worker for {} panicked; retrying", blocks[*k].name());
                *r = run(*k);
            }
        }
        for (k, r) in results {
            let (record, timing) = match r {
                Ok(Ok(x)) => x,
                Ok(Err(e)) => {
                    return Err(Error::Block {
                        block: blocks[k].index,
                        source: Box::new(e),
                    })
                }
                Err(_) => {
                    return Err(Error::Block {
                        block: blocks[k].index,
                        source: Box::new(Error::Inconsistent("worker panicked twice".into())),
                    })
                }
            };
            apply_record(&graph, &owned_by[k], &record, &mut decided)?;
            records.insert(k, record);
            timings.push(timing);
        }
    }

    let mut selected = Vec::new();
    for (j, d) in decided.iter().enumerate() {
        if let Some(Some([a, b])) = d {
            selected.push(Triplet::new(*a, j as u32, *b).expect("distinct outer nodes"));
        }
    }
    let tracks = decode_tracks(&graph, &selected)?;
    Ok(BlockwiseOutcome {
        tracks,
        records: records.into_values().collect(),
        timings,
        phases: schedule.phases.len(),
        resumed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub block_sizes: Vec<[usize; 3]>,
    /// Context margin per axis, the same for every block size.
    pub margin: [usize; 3],
    pub workers: usize,
    /// Solves per block; the per-block time is the median.
    pub repeats: usize,
    pub backend: Backend,
    pub time_limit: Option<Duration>,
    pub spacing_nm: f64,
    pub max_dist_nm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSizeReport {
    pub block_size: [usize; 3],
    pub context_size: [usize; 3],
    pub blocks: usize,
    pub phases: usize,
    /// Block-wise tracks scored against the global tracks.
    pub f1_vs_global: f64,
    /// Block-wise tracks scored against ground truth, when given.
    pub f1_ground_truth: Option<f64>,
    pub block_solve_seconds: Vec<f64>,
    pub median_solve_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub global_f1_ground_truth: Option<f64>,
    pub global_solve_seconds: f64,
    pub sizes: Vec<BlockSizeReport>,
}

/// Block-wise solves at several block sizes with a fixed context margin,
/// compared to the global solve.
pub fn block_benchmark(
    vol: &ScoreVolume,
    candidates: &[Candidate],
    params: &SolveParams,
    ground_truth: Option<&[Track]>,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    let global = solve_global(vol, candidates, params, &config.backend, config.time_limit)?;
    let global_tracks = global.tracks.to_tracks();
    let score = |rec: &[Track], gt: &[Track]| evaluate(rec, gt, config.spacing_nm, config.max_dist_nm).map(|m| m.f1);
    let global_f1_ground_truth = ground_truth.map(|gt| score(&global_tracks, gt)).transpose()?;
    let mut sizes = Vec::new();
    for &bs in &config.block_sizes {
        let context: [usize; 3] = std::array::from_fn(|a| bs[a] + 2 * config.margin[a]);
        let bc = BlockwiseConfig {
            block_size: bs,
            context_size: context,
            workers: config.workers,
            backend: config.backend.clone(),
            time_limit: config.time_limit,
            state_dir: None,
        };
        let mut per_block: BTreeMap<[usize; 3], Vec<f64>> = BTreeMap::new();
        let mut first = None;
        for _ in 0..config.repeats.max(1) {
            let out = solve_blockwise(vol, candidates, params, &bc)?;
            for t in &out.timings {
                per_block.entry(t.block).or_default().push(t.solve_seconds);
            }
            first.get_or_insert(out);
        }
        let out = first.expect("at least one run");
        let rec = out.tracks.to_tracks();
        let block_solve_seconds: Vec<f64> = per_block.values_mut().map(|v| median(v)).collect();
        sizes.push(BlockSizeReport {
            block_size: bs,
            context_size: context,
            blocks: out.records.len(),
            phases: out.phases,
            f1_vs_global: score(&rec, &global_tracks)?,
            f1_ground_truth: ground_truth.map(|gt| score(&rec, gt)).transpose()?,
            median_solve_seconds: median(&mut block_solve_seconds.clone()),
            block_solve_seconds,
        });
    }
    Ok(BenchmarkReport {
        global_f1_ground_truth,
        global_solve_seconds: global.solve_time.as_secs_f64(),
        sizes,
    })
}
