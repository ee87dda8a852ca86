//! Acceptance checks at full budget, one line per check. Set `LOBEQ_QUICK=1`
//! for the reduced budget.

use std::process::ExitCode;

use lob_equilibrium::verify::{run_all, Budget};

fn main() -> ExitCode {
    let budget = if std::env::var_os("LOBEQ_QUICK").is_some() {
        Budget::quick()
    } else {
        Budget::full()
    };
    let outcomes = run_all(&budget);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
