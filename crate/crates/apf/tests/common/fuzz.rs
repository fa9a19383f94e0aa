//! Mutation fuzzer for the OFF reader.
#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};

use apf::io::off::parse_off;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: [&str; 5] = [
    "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
    "OFF4 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n",
    "# comment\nOFF\n\n4 2 0 # counts\n0.5 -1 2e-3\n1 1 1\n-2 0 0 # tail\n3 3 3\n3 0 1 2\n3 1 2 3\n",
    "OFF\n2 0\n1e30 -1e-30 0\n0 0 0 9 9\n",
    "OFF\n5 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n",
];

const TOKENS: [&str; 14] = ["OFF", "#", "\n", " ", "\t", "-", "nan", "inf", "1e999", "18446744073709551616", "0", "999999999999", ".", "\r\n"];

fn mutate(rng: &mut ChaCha8Rng, src: &str) -> Vec<u8> {
    let mut b = src.as_bytes().to_vec();
    for _ in 0..rng.random_range(1..=4) {
        let at = rng.random_range(0..=b.len());
        match rng.random_range(0..6) {
            0 if !b.is_empty() => {
                let i = at.min(b.len() - 1);
                b[i] = rng.random();
            }
            1 => b.insert(at, rng.random()),
            2 if at < b.len() => {
                let end = rng.random_range(at..=b.len());
                b.drain(at..end);
            }
            3 => b.truncate(at),
            4 => {
                let t = TOKENS[rng.random_range(0..TOKENS.len())];
                b.splice(at..at, t.bytes());
            }
            _ => {
                let start = rng.random_range(0..=at);
                let chunk = b[start..at].to_vec();
                b.splice(at..at, chunk);
            }
        }
    }
    b
}

pub struct FuzzOutcome {
    pub cases: usize,
    pub crashes: usize,
    pub errors: usize,
    pub parsed: usize,
    /// Errors without a line or message, or clouds with non-finite points.
    pub bad_results: usize,
}

/// Feeds `cases` mutated files through the parser; a panic counts as a crash.
pub fn fuzz_off(cases: usize, seed: u64) -> FuzzOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FuzzOutcome { cases, crashes: 0, errors: 0, parsed: 0, bad_results: 0 };
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for i in 0..cases {
        let bytes = mutate(&mut rng, SEEDS[i % SEEDS.len()]);
        let text = String::from_utf8_lossy(&bytes);
        match catch_unwind(AssertUnwindSafe(|| parse_off(&text))) {
            Err(_) => out.crashes += 1,
            Ok(Err(e)) => {
                out.errors += 1;
                out.bad_results += usize::from(e.line == 0 || e.message.is_empty());
            }
            Ok(Ok(cloud)) => {
                out.parsed += 1;
                out.bad_results += usize::from(cloud.is_empty() || !cloud.points().iter().flatten().all(|v| v.is_finite()));
            }
        }
    }
    std::panic::set_hook(hook);
    out
}
