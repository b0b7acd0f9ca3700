//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_SCALE=quick` runs reduced replication counts.
//! `ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit.
//! `ACCEPTANCE_ONLY=1,3,9` restricts the run to the listed criteria.

use std::time::Instant;

use drbeta_cli::experiments::{self as ex, CriterionResult, Scale, MASTER_SEED};
use drbeta_cli::selftest::pipeline_check;

fn timed<F: FnOnce() -> Vec<CriterionResult>>(f: F) -> Vec<CriterionResult> {
    let t = Instant::now();
    let rs = f();
    for r in &rs {
        println!("{r} [{:.1} s]", t.elapsed().as_secs_f64());
    }
    rs
}

fn main() {
    // cargo passes harness flags such as --nocapture; none apply here
    let quick = std::env::var("ACCEPTANCE_SCALE").is_ok_and(|v| v == "quick");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |ids: &[u32]| only.as_ref().map_or(true, |o| ids.iter().any(|i| o.contains(i)));
    let s = if quick { Scale::quick() } else { Scale::full() };
    let seed = MASTER_SEED;
    println!("acceptance run at {} scale", if quick { "quick" } else { "full" });

    let mut all = Vec::new();
    if want(&[3]) {
        all.extend(timed(|| vec![ex::criterion_linearity(s.linearity_cases, seed)]));
    }
    if want(&[9]) {
        all.extend(timed(|| vec![ex::criterion_derivatives(s.derivative_cases, seed)]));
    }
    if want(&[5]) {
        all.extend(timed(|| {
            vec![ex::criterion_mapping(s.mapping_days, s.mapping_sim_steps, s.mapping_euler_steps, seed)]
        }));
    }
    if want(&[4]) {
        all.extend(timed(|| vec![ex::criterion_martingale(s.martingale_days, s.martingale_steps, seed)]));
    }
    if want(&[10]) {
        all.extend(timed(|| {
            let z = ex::studentized_errors(s.avar_m, s.avar_reps, seed);
            vec![ex::criterion_avar(&z, s.avar_reps)]
        }));
    }
    if want(&[6]) {
        all.extend(timed(|| {
            let small = ex::qmle_errors(s.qmle_n[0], s.qmle_reps, seed);
            let large = ex::qmle_errors(s.qmle_n[1], s.qmle_reps, seed);
            vec![ex::criterion_qmle(&small, &large, s.qmle_n)]
        }));
    }
    if want(&[1, 2]) {
        all.extend(timed(|| {
            let data: Vec<_> = s
                .ordering_m
                .iter()
                .map(|&m| ex::ordering_data(m, s.ordering_reps, s.ordering_days, seed))
                .collect();
            vec![ex::criterion_ordering(&data), ex::criterion_rate(&data[0], &data[1])]
        }));
    }
    if want(&[7, 8]) {
        all.extend(timed(|| {
            let data = ex::inference_data(s.inference_n, s.inference_m, s.inference_reps, seed);
            vec![ex::criterion_inference(&data), ex::criterion_forecast(&data)]
        }));
    }
    if want(&[11]) {
        all.extend(timed(|| match pipeline_check(None) {
            Ok(r) => vec![r],
            Err(e) => vec![CriterionResult {
                id: 11,
                name: "pipeline reproducibility",
                pass: false,
                detail: e.to_string(),
            }],
        }));
    }

    all.sort_by_key(|r| r.id);
    println!("\nsummary");
    for r in &all {
        println!("{r}");
    }
    let failed = all.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria pass", all.len() - failed, all.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
