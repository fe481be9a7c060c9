//! Reconstruction of curvilinear tracks from dense 3D score volumes.
//!
//! The pipeline extracts sparse candidates by non-maximum suppression,
//! connects nearby candidates into a graph, prices pairs of incident edges
//! ("triplets") and selects a consistent set of triplets with an exact 0-1
//! program. Large volumes are solved block by block. Synthetic data and an
//! edge-level evaluation make the whole chain testable.

pub mod blockwise;
pub mod candidates;
pub mod costs;
pub mod error;
pub mod evaluation;
mod fsutil;
pub mod graph;
pub mod ilp;
pub mod pipeline;
pub mod synth;
pub mod volume;

pub use blockwise::{
    block_benchmark, partition, schedule_phases, solve_blockwise, BenchmarkConfig, BenchmarkReport, Block, BlockRecord, BlockSchedule,
    BlockwiseConfig, BlockwiseOutcome,
};
pub use candidates::{extract_candidates, Candidate, CandidateFile, NmsParams};
pub use costs::{GraphCosts, Preset, SolveParams, PRESET_NAMES};
pub use error::{Error, Result};
pub use evaluation::{evaluate, match_nodes, read_tracks, resample_track, score_edges, write_tracks, MatchResult, Track};
pub use graph::{build_graph, enumerate_triplets, CandidateGraph, Node, Triplet};
pub use ilp::{
    brute_force_solve, Backend, build_legacy_ilp, build_triplet_ilp, decode_tracks, solve_exact, IlpProblem, LegacyObjective, Solution, SolveStatus,
    TrackSet,
};
pub use pipeline::{solve_global, SolveOutcome, SolveSummary};
pub use synth::{add_noise, generate_tracks, rasterize_scores, synthesize, SynthConfig};
pub use volume::{load_volume, save_volume, Roi, ScoreVolume, DEFAULT_VOXEL_SIZE};
