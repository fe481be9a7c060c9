//! Shared fixtures for the benchmarks.

use mtrack_core::ilp::{random_instance, RandomInstance};
use mtrack_core::{extract_candidates, synthesize, Candidate, NmsParams, ScoreVolume, SolveParams, SynthConfig, Track};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A small synthetic volume with its ground truth and candidates.
pub fn small_volume(seed: u64) -> (Vec<Track>, ScoreVolume, Vec<Candidate>) {
    let cfg = SynthConfig {
        shape: [10, 250, 250],
        n_tracks: 4,
        min_length_nm: 300.0,
        seed,
        ..Default::default()
    };
    let (gt, vol) = synthesize(&cfg).expect("valid synthetic config");
    let cands = extract_candidates(&vol, &NmsParams::default()).expect("valid nms params");
    (gt, vol, cands)
}

pub fn random_graph(n: usize, mean_degree: f64, seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_instance(n, mean_degree, &SolveParams::default(), &mut rng).expect("valid random instance")
}
