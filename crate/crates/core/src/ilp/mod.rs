//! Integer programs over triplet indicators, their exact solution and
//! decoding into tracks.

mod backend;
mod brute;
mod compare;
mod decode;
mod formulation;
mod problem;
mod solver;

pub use backend::{solve_highs, Backend};
pub use brute::{brute_force_solve, BRUTE_FORCE_LIMIT};
pub use compare::{compare_formulations, median, random_instance, CompareConfig, ComparisonReport, ComparisonRow, RandomInstance, SizeSummary};
pub use decode::{decode_tracks, TrackPath, TrackSet};
pub use formulation::{build_legacy_ilp, build_pinned_triplet_ilp, build_triplet_ilp, FixedLinks, triplet_var_name, LegacyIlp, LegacyObjective, TripletIlp};
pub use problem::{read_solution, solution_to_text, write_solution, Constraint, IlpProblem, ProblemStats, Relation, Solution, SolveStatus};
pub use solver::{solve_exact, solve_exact_with_stats, SearchStats};
