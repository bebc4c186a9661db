//! Polynomial approximations of the 0/1 indicator on the two compacts of a pair.
use jglue::grid::{rectangle_pair, slab_pair};
use jglue::transition::runge_polynomial;
use jglue::build_cutoffs;

fn main() {
    let (a, b) = slab_pair(1.0 / 32.0).unwrap();
    let slab = build_cutoffs(&a, &b).unwrap();
    for gamma in [0.3, 0.1, 0.03] {
        match runge_polynomial(&slab, gamma, 40) {
            Ok(r) => println!("slab gamma {gamma}: degree {}, sups {:.3e} / {:.3e}", r.degree, r.sup_k1, r.sup_k2_minus_1),
            Err(e) => println!("slab gamma {gamma}: {e}"),
        }
    }
    // The rectangle compacts are not separated by any polynomial of moderate degree.
    let (a, b) = rectangle_pair(1.0 / 32.0).unwrap();
    match runge_polynomial(&build_cutoffs(&a, &b).unwrap(), 0.05, 40) {
        Ok(r) => println!("rectangle: degree {}", r.degree),
        Err(e) => println!("rectangle: {e}"),
    }
}
