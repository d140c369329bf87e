//! One pass/fail line per acceptance criterion. Each check is sized as
//! the criterion states and must also finish inside its time budget.

use std::process::ExitCode;
use std::time::Duration;

use kgmem::harness::checks::{self, CheckOutcome, ReducedSetup};

fn within(mut outcome: CheckOutcome, budget: Duration) -> CheckOutcome {
    if outcome.elapsed >= budget {
        outcome.passed = false;
        outcome.detail = format!("{}; over the {:.0}s budget", outcome.detail, budget.as_secs_f64());
    }
    outcome
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let setup = ReducedSetup::default();
    let trainer = checks::reduced_trainer(setup.seeds.clone());
    let runs: Vec<(Box<dyn Fn() -> CheckOutcome>, Duration)> = vec![
        (Box::new(|| checks::memory_invariants(10_000, 1)), secs(60)),
        (Box::new(|| checks::policy_oracles(1_000, 1)), secs(60)),
        (Box::new(checks::td_correctness), secs(1)),
        (Box::new(|| checks::gradient_checks(2)), secs(120)),
        (Box::new(|| checks::determinism(500, 3)), secs(120)),
        (Box::new(|| checks::baseline_ordering(&setup)), secs(15 * 60)),
        (Box::new(|| checks::learning_signal(&setup, &trainer)), secs(45 * 60)),
        (Box::new(checks::analytics_fidelity), secs(1)),
        (Box::new(checks::epsilon_schedule), secs(1)),
        (Box::new(|| checks::mode_contracts(1)), secs(60)),
    ];
    let mut failed = 0;
    for (run, budget) in runs {
        let outcome = within(run(), budget);
        println!("{outcome}");
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
