//! Acceptance gate: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --release --test acceptance -- 2 8`.

mod cli;
mod learning;
mod numeric;
mod runtime;
mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use support::Outcome;

const NAMES: [&str; 10] = [
    "gradient suite",
    "oracle equivalence",
    "conservation and normalisation",
    "patch arithmetic",
    "runtime trend",
    "directional learning trend",
    "encoder-selection trend",
    "miss-rate boundary",
    "map decoder sanity",
    "CLI determinism",
];

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(outcome) => outcome,
        Err(panic) => Err(format!(
            "panicked: {}",
            panic.downcast_ref::<String>().map(String::as_str).or(panic.downcast_ref::<&str>().copied()).unwrap_or("?")
        )),
    }
}

fn line(id: usize, outcome: &Outcome) -> String {
    match outcome {
        Ok(detail) => format!("criterion {id:>2} PASS  {}: {detail}", NAMES[id - 1]),
        Err(reason) => format!("criterion {id:>2} FAIL  {}: {reason}", NAMES[id - 1]),
    }
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=10).contains(n)).collect();
    let wanted = |id: usize| selected.is_empty() || selected.contains(&id);
    let mut results = BTreeMap::new();
    let mut record = |id: usize, outcome: Outcome| {
        println!("{}", line(id, &outcome));
        results.insert(id, outcome);
    };

    let quick: [(usize, fn() -> Outcome); 6] = [
        (4, numeric::patch_arithmetic),
        (8, numeric::miss_boundary),
        (2, numeric::oracle_equivalence),
        (3, numeric::conservation),
        (1, numeric::gradient_suite),
        (10, cli::determinism),
    ];
    for (id, f) in quick {
        if wanted(id) {
            record(id, guarded(f));
        }
    }
    if wanted(5) {
        record(5, guarded(runtime::runtime_trend));
    }

    if [6, 7, 9].into_iter().any(wanted) {
        let corpus = learning::Corpus::generate();
        let (map_outcome, model) = match catch_unwind(AssertUnwindSafe(|| learning::map_sanity(&corpus))) {
            Ok(r) => r,
            Err(_) => (Err("map training panicked".into()), None),
        };
        if wanted(9) {
            record(9, map_outcome);
        }
        match &model {
            Some(m) => match learning::prepare(&corpus, m) {
                Ok(data) => {
                    if wanted(6) {
                        record(6, guarded(|| learning::learning_trend(&corpus, m, &data)));
                    }
                    if wanted(7) {
                        record(7, guarded(|| learning::encoder_selection(&corpus, m, &data)));
                    }
                }
                Err(e) => {
                    for id in [6, 7].into_iter().filter(|&id| wanted(id)) {
                        record(id, Err(format!("scene preparation failed: {e}")));
                    }
                }
            },
            None => {
                for id in [6, 7].into_iter().filter(|&id| wanted(id)) {
                    record(id, Err("no trained map model".into()));
                }
            }
        }
    }

    println!("\nacceptance summary");
    for (id, outcome) in &results {
        println!("{}", line(*id, outcome));
    }
    if results.values().all(Result::is_ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
