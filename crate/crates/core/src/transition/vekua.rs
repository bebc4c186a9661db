//! `dbar S + B1 S + B2 conj(S) = rhs`, solved in integral form `S = T(rhs - B1 S - B2 conj S)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::acstruct::LinearizedOperator;
use crate::calculus::{lp_norm, Field, NormConfig};
use crate::cauchy::{CauchyOperator, PROBE_SEED};
use crate::error::{GlueError, Result};
use crate::probe::lp_probes;

pub const CONTRACTION_GATE: f64 = 0.9;
const MAX_SWEEPS: usize = 2000;

#[derive(Clone, Debug)]
pub struct VekuaSolution {
    pub s: Field,
    pub sweeps: usize,
    /// `||T||_{L^p -> L^p} (sup |B1| + sup |B2|)` as probed.
    pub gate: f64,
    /// `||S + T(B1 S + B2 conj S) - T(rhs)||_{L^p}`.
    pub integral_residual: f64,
}

fn sup_coefficient(c: &[Complex64], n: usize) -> f64 {
    c.chunks(n * n).map(|m| DMatrix::from_row_slice(n, n, m).norm()).fold(0.0, f64::max)
}

/// Probed `L^p -> L^p` norm of `T`.
pub fn lp_operator_norm(t: &CauchyOperator, n: usize, cfg: NormConfig) -> f64 {
    lp_probes(t.domain(), n, 16, PROBE_SEED ^ 0x7e, cfg).iter().map(|f| lp_norm(&t.apply(f), cfg) / lp_norm(f, cfg)).fold(0.0, f64::max)
}

pub fn vekua_solve(lin: &LinearizedOperator, rhs: &Field, t: &CauchyOperator, cfg: NormConfig) -> Result<VekuaSolution> {
    let n = lin.n();
    if !lin.domain().same_as(t.domain()) || !rhs.domain().same_as(t.domain()) || rhs.n() != n {
        return Err(GlueError::FieldMismatch("operator, right-hand side and Cauchy operator must share the domain".into()));
    }
    if lin.a().iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
        return Err(GlueError::Precondition("vekua_solve takes zeroth-order coefficients only (A = 0)".into()));
    }
    // Frobenius norms bound the pointwise operator norms
    let b = sup_coefficient(lin.b1(), n) + sup_coefficient(lin.b2(), n);
    let gate = if b == 0.0 { 0.0 } else { lp_operator_norm(t, n, cfg) * b };
    if !(gate < CONTRACTION_GATE) {
        return Err(GlueError::ContractionGateFailed { value: gate });
    }
    let t_rhs = t.apply(rhs);
    let mut s = t_rhs.clone();
    let mut sweeps = 0;
    if b > 0.0 {
        loop {
            sweeps += 1;
            let next = &t_rhs - &t.apply(&lin.zeroth_order(&s));
            let step = lp_norm(&(&next - &s), cfg);
            s = next;
            if step <= 1e-10 * lp_norm(&s, cfg) || step == 0.0 {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(GlueError::Precondition(format!("fixed-point iteration stalled at step {step:.3e}")));
            }
        }
    }
    let integral_residual = lp_norm(&(&(&s + &t.apply(&lin.zeroth_order(&s))) - &t_rhs), cfg);
    Ok(VekuaSolution { s, sweeps, gate, integral_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::unit_disc;
    use crate::solver::gmres;

    fn op(b1: Complex64, b2: Complex64, d: &std::sync::Arc<crate::grid::GridDomain>) -> LinearizedOperator {
        let z = vec![Complex64::new(0.0, 0.0); d.len()];
        LinearizedOperator::from_coefficients(d, 1, z, vec![b1; d.len()], vec![b2; d.len()]).unwrap()
    }

    #[test]
    fn zero_coefficients_give_cauchy_green() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let t = CauchyOperator::new(&d);
        let rhs = Field::scalar(&d, |z| z * z + 1.0);
        let sol = vekua_solve(&LinearizedOperator::standard(&d, 1), &rhs, &t, cfg).unwrap();
        assert_eq!(sol.s.values(), t.apply(&rhs).values());
        assert_eq!(sol.sweeps, 0);
        let zero = vekua_solve(&op(Complex64::new(0.1, 0.0), Complex64::new(0.0, 0.05), &d), &Field::zeros(&d, 1), &t, cfg).unwrap();
        assert_eq!(zero.s.max_abs(), 0.0);
    }

    #[test]
    fn fixed_point_matches_a_krylov_solve() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let t = CauchyOperator::new(&d);
        let lin = op(Complex64::new(0.2, -0.1), Complex64::new(0.0, 0.15), &d);
        let rhs = Field::scalar(&d, |z| z.conj() + 0.5);
        let sol = vekua_solve(&lin, &rhs, &t, cfg).unwrap();
        assert!(sol.gate < CONTRACTION_GATE);
        let (oracle, res) = gmres(|s| s + &t.apply(&lin.zeroth_order(s)), &t.apply(&rhs), 40, 200, 1e-13);
        assert!(res < 1e-12);
        assert!((&sol.s - &oracle).max_abs() < 1e-8 * oracle.max_abs());
        assert!(sol.integral_residual < 1e-8);
    }

    #[test]
    fn large_coefficients_fail_the_gate() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 8.0).unwrap();
        let t = CauchyOperator::new(&d);
        let err = vekua_solve(&op(Complex64::new(5.0, 0.0), Complex64::new(0.0, 0.0), &d), &Field::zeros(&d, 1), &t, cfg);
        assert!(matches!(err, Err(GlueError::ContractionGateFailed { .. })));
        let a = vec![Complex64::new(0.1, 0.0); d.len()];
        let z = vec![Complex64::new(0.0, 0.0); d.len()];
        let with_a = LinearizedOperator::from_coefficients(&d, 1, a, z.clone(), z).unwrap();
        assert!(matches!(vekua_solve(&with_a, &Field::zeros(&d, 1), &t, cfg), Err(GlueError::Precondition(_))));
    }
}
