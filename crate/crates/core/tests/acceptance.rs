//! Acceptance suite on the critical lognormal reference model.
//!
//! Runs every check of the verification suite and prints one line per
//! check. `SMOOTHING_BUDGET=full` selects the full sample budget; the
//! default is `small`.

use std::process::ExitCode;
use std::time::Instant;

use smoothing_core::parallel::Exec;
use smoothing_core::verify::{default_model, Budget, Verifier};

fn main() -> ExitCode {
    let budget: Budget = match std::env::var("SMOOTHING_BUDGET") {
        Ok(v) => match v.parse() {
            Ok(b) => b,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        },
        Err(_) => Budget::Small,
    };
    let spec = default_model();
    let exec = Exec::default();
    let verifier = Verifier::new(&spec, budget, 20_240_601, exec);
    println!(
        "acceptance: model {}, budget {budget}, workers {}",
        spec.label, exec.workers
    );
    let start = Instant::now();
    let results = verifier.run(|r| println!("{}", r.line()));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!(
        "acceptance: {} of {} checks passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
