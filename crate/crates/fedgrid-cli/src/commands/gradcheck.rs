//! `fedgrid gradcheck`: finite-difference verification of every gradient
//! path plus the forward-pass oracle. Nonzero exit if any suite exceeds
//! its tolerance.

use anyhow::{bail, Result};
use clap::Args;
use fedgrid_core::gradcheck;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random networks per suite.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0xF3D6)]
    pub seed: u64,
    /// Deliberately corrupt the analytic gradients before comparison;
    /// verifies that this harness catches broken backward passes.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn run(args: &GradcheckArgs) -> Result<()> {
    let report = gradcheck::run(args.trials, args.corrupt_backward, args.seed);
    for check in &report.checks {
        println!(
            "{:<42} trials={:<3} max_rel_err={:<12.3e} tol={:<8.0e} {}",
            check.name,
            check.trials,
            check.max_rel_err,
            check.tolerance,
            if check.passed() { "PASS" } else { "FAIL" }
        );
    }
    if !report.passed() {
        bail!("gradient check failed");
    }
    Ok(())
}
