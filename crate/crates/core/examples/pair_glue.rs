//! Two charts related by a rotation, glued on the slab pair.
use jglue::acstruct::AlmostComplexStructure;
use jglue::grid::slab_pair;
use jglue::solver::NewtonLimits;
use jglue::transition::{glue_pair, seed_chart_pair, ChartMap, ChartTransition};
use jglue::{build_cutoffs, Complex64, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    let (a, b) = slab_pair(1.0 / 32.0).unwrap();
    let p = build_cutoffs(&a, &b).unwrap();
    let j = AlmostComplexStructure::j_eps(1, 0.01, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
    let tr = ChartTransition::fitted(ChartMap::rotation(1, 0.3, Complex64::new(0.0, 0.0)), j).unwrap();
    let base = Field::scalar(&p.union, |z| z * z * 0.5);
    let (f1, f2) = seed_chart_pair(&tr, &p, &base, 1e-3, cfg).unwrap();
    let (_, _, cert, d) = glue_pair(&tr, &p, &f1, &f2, 0.1, cfg, NewtonLimits::default()).unwrap();
    println!("Runge degree {}, {} Neumann terms, pair probe {:.3}", d.runge_degree, d.neumann_terms, d.pair_probe);
    println!("{} after {} steps, residuals {:.2e} / {:.2e}", cert.verdict, cert.iterations(), d.final_residuals.0, d.final_residuals.1);
    println!("compatibility defect per iterate: {:?}", d.compatibility_trace);
}
