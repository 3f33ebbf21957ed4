//! Central finite differences against tape gradients for every layer and
//! every architecture.
//!
//! cargo run --release --example gradcheck

use resnls::grad_suite::{run_suite, SuiteConfig};

fn main() -> resnls::Result<()> {
    let start = std::time::Instant::now();
    let report = run_suite(&SuiteConfig::default())?;
    for row in &report.rows {
        println!(
            "{:<4} {:<28} rel_err {:.2e}  ({} elements)",
            if row.passed { "ok" } else { "FAIL" },
            row.name,
            row.rel_err,
            row.checked
        );
    }
    println!(
        "\n{} groups, max rel_err {:.2e}, tol {:e}, {:.1?}",
        report.rows.len(),
        report.max_rel_err(),
        report.tol,
        start.elapsed()
    );
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
