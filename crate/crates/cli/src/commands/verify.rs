use std::fmt::Write as _;

use anyhow::Result;
use debias_core::embedding_io::load_projection;
use debias_core::oracle::{self, CheckOutcome, VerifyReport, STORED_PROJECTION_TOL};

use super::{write_report, Outcome};
use crate::config::Settings;

pub fn run(s: &Settings) -> Result<Outcome> {
    let seed = s.seed.unwrap_or(oracle::DEFAULT_SEED);
    let mut report = oracle::run_suite(seed);
    if let Some(proj) = &s.projection {
        match load_projection(proj) {
            Ok((_, result)) => report.checks.extend(oracle::check_stored_projection(&result)),
            Err(e) => {
                eprintln!("projection {}: {e}", proj.display());
                report.checks.push(CheckOutcome {
                    name: "file_readable".to_string(),
                    instances: 1,
                    max_deviation: f64::INFINITY,
                    threshold: STORED_PROJECTION_TOL,
                    passed: false,
                });
            }
        }
    }
    print!("{}", table(&report));
    if let Some(out) = &s.out {
        write_report(out, &report)?;
    }
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::ChecksFailed
    })
}

fn table(report: &VerifyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", report.seed);
    let _ = writeln!(
        out,
        "{:<36}  {:>9}  {:>13}  {:>9}  result",
        "check", "instances", "max deviation", "threshold"
    );
    for c in &report.checks {
        let _ = writeln!(
            out,
            "{:<36}  {:>9}  {:>13.3e}  {:>9.0e}  {}",
            c.name,
            c.instances,
            c.max_deviation,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        let _ = writeln!(out, "all {} checks passed", report.checks.len());
    } else {
        let _ = writeln!(out, "{failed} of {} checks failed", report.checks.len());
    }
    out
}
