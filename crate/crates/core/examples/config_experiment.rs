//! Runs a cross-section experiment from a TOML document, the same path the
//! `scatlab run` command takes, and lists the artifacts it wrote.

use scatlab::experiment::{run, ExperimentConfig};

const CONFIG: &str = r#"
kind = "cross-section"

[potential]
name = "gaussian_well"
g = -1.0
width = 1.0

[wave]
k = [0.5, 1.5]

[grid]
cells = 20

[directions]
rule = "product"
n_theta = 12
n_phi = 24
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let out = std::env::temp_dir().join("scatlab-config-example");
    let report = run(&cfg, &out)?;
    for c in &report.checks {
        println!(
            "{} {}: {:.3e} (threshold {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    println!("artifacts in {}:", out.display());
    for a in &report.artifacts {
        println!("  {a}");
    }
    Ok(())
}
