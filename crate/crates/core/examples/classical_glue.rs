//! One-step Cauchy–Green gluing of two holomorphic maps on the rectangle pair.
use jglue::cousin::classical_glue;
use jglue::grid::rectangle_pair;
use jglue::{build_cutoffs, d_zbar, lp_norm, w1p_norm, CauchyOperator, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    let (a, b) = rectangle_pair(1.0 / 32.0).unwrap();
    let p = build_cutoffs(&a, &b).unwrap();
    let f1 = Field::scalar(&p.omega1, |z| z * z);
    let f2 = Field::scalar(&p.omega2, |z| z * z + 0.01);
    let g = classical_glue(&p, &f1, &f2, &CauchyOperator::new(&p.union)).unwrap();
    println!("union has {} nodes", p.union.len());
    println!("||dbar g||_Lp = {:.3e}", lp_norm(&d_zbar(&g), cfg));
    println!("||g - f1||_W1p on omega1 = {:.3e}", w1p_norm(&(&g.restrict(&p.omega1).unwrap() - &f1), cfg));
}
