// Usage: cargo run --example config_run
//
// Drives the subcommands from configuration text, the same way the
// `critpot` binary does, and lists the files each one writes.

use std::path::Path;

use critpot::commands::run_command;
use critpot::config::RunConfig;

const CONFIG: &str = "
[domain]
kind = interval
nodes = 128
bc = neumann

[potential]
preset = fourier(0.2, 0.5, 0, 0.25)

[task]
index = 2
probes = 20

[output]
seed = 5
";

fn main() -> critpot::Result<()> {
    let dir = std::env::temp_dir().join("critpot-config-run");
    let cfg = RunConfig::parse(CONFIG, Path::new("."))?;
    for cmd in ["criticality", "derivative"] {
        let out = dir.join(cmd);
        let report = run_command(cmd, &cfg, &out)?;
        println!("{cmd} -> {}", out.display());
        for c in &report.checks {
            println!("  {}", c.line());
        }
        println!("  artifacts: {:?}", report.artifacts);
    }
    Ok(())
}
