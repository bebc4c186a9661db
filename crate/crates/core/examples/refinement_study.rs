//! The same local gluing problem on three grids.
use jglue::acstruct::AlmostComplexStructure;
use jglue::cousin::{glue_local, seed_pair};
use jglue::grid::rectangle_pair;
use jglue::solver::NewtonLimits;
use jglue::{build_cutoffs, Complex64, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    let j = AlmostComplexStructure::j_eps(1, 0.02, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
    for n in [16.0, 32.0, 48.0] {
        let (a, b) = rectangle_pair(1.0 / n).unwrap();
        let p = build_cutoffs(&a, &b).unwrap();
        let (f1, f2) = seed_pair(&p, &j, &Field::scalar(&p.union, |z| z * z), 1e-2, cfg).unwrap();
        let (_, cert, diag) = glue_local(&p, &j, &f1, &f2, cfg, NewtonLimits::default()).unwrap();
        println!("h = 1/{n}: c0 {:.4}, C {:.3}, {} in {} steps", diag.c0, cert.c, cert.verdict, cert.iterations());
    }
}
