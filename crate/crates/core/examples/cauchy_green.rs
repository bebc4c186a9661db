//! Discrete Cauchy–Green transform on the unit disc: `T(1)` against `conj(z)` and the
//! `dbar T f = f` residual under refinement.
use jglue::cauchy::verify_dbar_inverse;
use jglue::grid::unit_disc;
use jglue::{CauchyOperator, Complex64, Field, NormConfig};

fn main() {
    let cfg = NormConfig::default();
    for n in [16.0, 32.0, 64.0] {
        let d = unit_disc(1.0 / n).unwrap();
        let t = CauchyOperator::new(&d);
        let one = Field::scalar(&d, |_| Complex64::new(1.0, 0.0));
        let t1 = t.apply(&one);
        let err = d.interior_nodes(3.0).iter().map(|&k| (t1.at(k)[0] - d.point(k).conj()).norm()).fold(0.0, f64::max);
        let res = verify_dbar_inverse(&t, &Field::scalar(&d, |z| z * z), cfg);
        println!("h = 1/{n}: {} nodes, |T(1) - conj z| = {err:.3e}, dbar-residual for z^2 = {res:.3e}", d.len());
    }
}
