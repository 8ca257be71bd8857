//! Shared inputs for the criterion benches.

use absa_core::corpus::AbsaRecord;
use absa_core::fixtures;

/// Sentences from the bundled SemEval fixture, cycled up to `n`.
pub fn sentences(n: usize) -> Vec<String> {
    let records: Vec<AbsaRecord> = fixtures::semeval_records().expect("fixture parses");
    records.iter().map(|r| r.sentence.clone()).cycle().take(n).collect()
}

/// Deterministic pseudo-random scores in (-4, 4); no RNG needed for benches.
pub fn scores(n: usize, salt: u64) -> Vec<f64> {
    (0..n as u64)
        .map(|i| {
            let x = (i.wrapping_mul(2654435761) ^ salt.wrapping_mul(40503)) % 8000;
            x as f64 / 1000.0 - 4.0
        })
        .collect()
}
