//! Pregluing plus Newton for a non-integrable structure, starting from exact solutions.
use jglue::acstruct::AlmostComplexStructure;
use jglue::cousin::{glue_local, seed_pair};
use jglue::grid::rectangle_pair;
use jglue::solver::NewtonLimits;
use jglue::{build_cutoffs, Complex64, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    let (a, b) = rectangle_pair(1.0 / 32.0).unwrap();
    let p = build_cutoffs(&a, &b).unwrap();
    let j = AlmostComplexStructure::j_eps(1, 0.02, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
    let base = Field::scalar(&p.union, |z| z * z);
    let (f1, f2) = seed_pair(&p, &j, &base, 1e-2, cfg).unwrap();
    let (_, cert, diag) = glue_local(&p, &j, &f1, &f2, cfg, NewtonLimits::default()).unwrap();
    println!("delta {:.3e}, preglue residual {:.3e}, c0 {:.3}", diag.delta, diag.preglue_residual, diag.c0);
    println!("{} after {} steps: {:?}", cert.verdict, cert.iterations(), cert.residual_history);
    println!("inverse: {}", diag.inverse.provenance);
}
