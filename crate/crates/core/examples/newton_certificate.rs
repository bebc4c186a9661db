//! Newton from an approximately holomorphic map, printed as a certificate CSV row.
use std::sync::Arc;

use jglue::acstruct::{linearize, AlmostComplexStructure};
use jglue::grid::unit_disc;
use jglue::solver::{build_right_inverse, holomorphic_approximation, NewtonLimits, CERTIFICATE_HEADER};
use jglue::{CauchyOperator, Complex64, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    let d = unit_disc(1.0 / 32.0).unwrap();
    let j = AlmostComplexStructure::j_eps(1, 0.05, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
    let phi = Field::scalar(&d, |z| z * 0.5);
    let q = Arc::new(build_right_inverse(&linearize(&j, &phi).unwrap(), &Arc::new(CauchyOperator::new(&d)), cfg).unwrap());
    let (_, cert) = holomorphic_approximation(&j, &phi, &q, cfg, NewtonLimits::default()).unwrap();
    println!("{}", CERTIFICATE_HEADER.join(","));
    println!("{}", cert.csv_row().join(","));
}
