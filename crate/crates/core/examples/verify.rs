// Usage: cargo run --example verify [suite] [seed]
//
// Runs one verification suite (default: all) and prints one line per check.

use critpot::verify::{run_suite, Suite, VerifySettings};

fn main() -> critpot::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().as_deref().unwrap_or("all").parse()?;
    let seed = args.next().map_or(Ok(1), |s| s.parse()).unwrap_or(1);
    let checks = run_suite(suite, &VerifySettings { nodes: 256, seed })?;
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
