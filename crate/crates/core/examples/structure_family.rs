//! The builtin structures and their coefficient `A(z)` in `dbar f + A(f) conj(d f) = 0`.
use jglue::acstruct::{complex_matrix_a, AlmostComplexStructure};
use jglue::Complex64;

fn main() {
    let structures = [
        AlmostComplexStructure::standard(1),
        AlmostComplexStructure::j_eps(1, 0.1, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap(),
        AlmostComplexStructure::constant_lambda(0.5).unwrap(),
    ];
    let z = [Complex64::new(0.3, -0.2)];
    for j in &structures {
        let a = complex_matrix_a(j, &z).unwrap();
        let m = j.eval_j(&[z[0].re, z[0].im]);
        println!("{}: A = {:.4}, J^2 + I max entry {:.1e}", j.name(), a[(0, 0)], (&m * &m + nalgebra::DMatrix::identity(2, 2)).amax());
    }
}
