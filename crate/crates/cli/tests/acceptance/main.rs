//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod oracles;
mod pipeline;

use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Outcome {
    passed: bool,
    detail: String,
}

fn run(name: &str, limit: Option<Duration>, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = check();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = out.passed && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0}s)", l.as_secs_f64()));
    println!(
        "{} {name}: {} [{:.1}s{budget}]",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    ok
}

fn gradient_suite() -> Outcome {
    use oracles::*;
    let reports = [
        ("triplet", check_triplet(1)),
        ("known-triplet", check_known_triplet(2)),
        ("affinity-supervised", check_supervised_contrastive(3, false)),
        ("affinity-supervised+pos", check_supervised_contrastive(4, true)),
        ("knowledge-transfer", check_knowledge_transfer(5)),
        ("affinity", check_affinity(6)),
        ("unsupervised-contrastive", check_unsupervised_contrastive(7)),
        ("combined", check_total(8)),
        ("encoder", check_encoder(9)),
    ];
    let passed = reports.iter().all(|(_, r)| r.passed());
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {}x max {:.1e}", r.instances, r.worst))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { passed, detail }
}

fn main() -> ExitCode {
    // Only the filter-free invocation runs the suite; `cargo test <filter>`
    // aimed at other targets should not pay for it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }

    let mut all = true;
    all &= run("gradient suite", Some(Duration::from_secs(60)), gradient_suite);
    all &= run("hungarian oracle", Some(Duration::from_secs(5)), || {
        let bad = oracles::hungarian_mismatches(200, 11);
        Outcome {
            passed: bad == 0,
            detail: format!("{bad}/200 mismatches vs brute force up to 7x7"),
        }
    });
    all &= run("affinity oracle", Some(Duration::from_secs(10)), || {
        let bad = oracles::affinity_mismatches(50, 12);
        Outcome {
            passed: bad == 0,
            detail: format!("{bad}/50 snapshots disagree with exhaustive scan"),
        }
    });
    all &= run("calinski-harabasz oracle", None, || {
        let (reference, invariance) = oracles::ch_deviations(200, 13);
        Outcome {
            passed: reference <= 1e-9 && invariance <= 1e-9,
            detail: format!("max rel dev {reference:.1e} vs formula, {invariance:.1e} under rigid+scale"),
        }
    });
    for (name, limit, check) in pipeline::criteria() {
        all &= run(name, limit, check);
    }

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
