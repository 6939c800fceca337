#![no_main]
//! A batch-scoring line: JSON decode, then both reward modes.

use libfuzzer_sys::fuzz_target;
use robustlab::reward::{score_candidate_text, DegMode, ScoringPair};

fuzz_target!(|data: &[u8]| {
    let Ok(pair) = serde_json::from_slice::<ScoringPair>(data) else { return };
    for mode in [DegMode::Literal, DegMode::Matched] {
        if let Ok(r) = score_candidate_text(&pair.candidate, &pair.truth, mode) {
            assert!(r.r_len <= 1.0);
        }
    }
});
