//! Runs a builtin scenario in process and writes its artifacts to a temporary directory.
use jglue::scenario::{run_to_dir, StructureRegistry};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "residual-law".into());
    let out = std::env::temp_dir().join(format!("jglue-{name}"));
    let report = run_to_dir(&name, &out, None, Some(1), &StructureRegistry::default()).unwrap();
    for o in &report.outcomes {
        println!("run {} delta {:e}: preglue {:.3e}, {}", o.point.run, o.point.delta, o.preglue_residual, o.verdict);
    }
    println!("artifacts in {}", out.display());
}
