//! The local gluing problem on a good pair: pregluing, the classical integrable formula and the
//! Newton-corrected glue.

use std::sync::Arc;

use num_complex::Complex64;

use crate::acstruct::{a_conj, dbar_residual, linearize, AlmostComplexStructure};
use crate::calculus::{d_z, d_zbar, leibniz_remainder, lp_norm, w1p_norm, Field, NormConfig};
use crate::cauchy::CauchyOperator;
use crate::error::{GlueError, Result};
use crate::grid::{GoodPair, GridDomain};
use crate::solver::{
    build_right_inverse, holomorphic_approximation, InverseRecord, NewtonCertificate, NewtonLimits, RightInverse,
};

/// `phi = chi f1 + (1 - chi) f2` together with the split `F(phi) = I + II + III` on the union:
///
/// * `I = (dbar chi) g + A(phi) conj((d chi) g)` with `g = f1 - f2` (zero off the overlap),
/// * `II = chi F_phi(f1) + (1 - chi) F_phi(f2)` where `F_phi(f) = dbar f + A(phi) conj(d f)`,
/// * `III = R(chi, g) + A(phi) conj(R'(chi, g))`, the discrete Leibniz remainders.
///
/// Off the overlap `f1` (resp. `f2`) is continued by `phi`, so the split is exact on the grid.
#[derive(Clone, Debug)]
pub struct PregluedPair {
    pub f1: Field,
    pub f2: Field,
    pub phi: Field,
    /// `||f1 - f2||_{W^{1,p}}` on the overlap.
    pub delta: f64,
    /// `chi` at the union nodes.
    pub chi: Vec<f64>,
    pub residual: Field,
    pub residual_i: Field,
    pub residual_ii: Field,
    pub residual_iii: Field,
}

impl PregluedPair {
    /// `||I + II + III - F(phi)||_{L^p}`.
    pub fn split_defect(&self, cfg: NormConfig) -> f64 {
        let sum = &(&self.residual_i + &self.residual_ii) + &self.residual_iii;
        lp_norm(&(&sum - &self.residual), cfg)
    }
}

fn check_inputs(pair: &GoodPair, f1: &Field, f2: &Field) -> Result<()> {
    if !f1.domain().same_as(&pair.omega1) || !f2.domain().same_as(&pair.omega2) {
        return Err(GlueError::FieldMismatch("f1 must live on Omega1 and f2 on Omega2".into()));
    }
    if f1.n() != f2.n() {
        return Err(GlueError::FieldMismatch("f1 and f2 have different component counts".into()));
    }
    Ok(())
}

/// `(phi, f1 continued by phi, f2 continued by phi, g)` on the union.
fn blend(pair: &GoodPair, f1: &Field, f2: &Field) -> Result<(Field, Field, Field, Field, Vec<f64>)> {
    let u = &pair.union;
    let n = f1.n();
    let chi = pair.chi.on(u);
    let e1 = f1.extend_by_zero(u)?;
    let e2 = f2.extend_by_zero(u)?;
    let mut phi = Field::zeros(u, n);
    let mut g = Field::zeros(u, n);
    for (k, &i) in u.nodes().iter().enumerate() {
        let (in1, in2) = (pair.omega1.node_of(i).is_some(), pair.omega2.node_of(i).is_some());
        for c in 0..n {
            let (a, b) = (e1.at(k)[c], e2.at(k)[c]);
            phi.at_mut(k)[c] = match (in1, in2) {
                (true, true) => {
                    g.at_mut(k)[c] = a - b;
                    b + (a - b) * chi[k]
                }
                (true, false) => a,
                _ => b,
            };
        }
    }
    let mut c1 = phi.clone();
    c1.overwrite_from(f1);
    let mut c2 = phi.clone();
    c2.overwrite_from(f2);
    Ok((phi, c1, c2, g, chi))
}

pub fn preglue(pair: &GoodPair, j: &AlmostComplexStructure, f1: &Field, f2: &Field, cfg: NormConfig) -> Result<PregluedPair> {
    check_inputs(pair, f1, f2)?;
    let (phi, c1, c2, g, chi) = blend(pair, f1, f2)?;
    let residual = dbar_residual(j, &phi)?;
    let chi_c: Vec<Complex64> = chi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let chi_f = Field::from_values(&pair.union, 1, chi_c.clone())?;
    let (dzb_chi, dz_chi) = (d_zbar(&chi_f), d_z(&chi_f));
    let i_zb = g.mul_nodes(dzb_chi.values());
    let i_z = g.mul_nodes(dz_chi.values());
    let residual_i = &i_zb + &a_conj(j, &phi, &i_z)?;
    let part = |f: &Field| -> Result<Field> { Ok(&d_zbar(f) + &a_conj(j, &phi, &d_z(f))?) };
    let one_minus: Vec<f64> = chi.iter().map(|v| 1.0 - v).collect();
    let residual_ii = &part(&c1)?.scale_nodes(&chi) + &part(&c2)?.scale_nodes(&one_minus);
    let (r_zb, r_z) = leibniz_remainder(&chi_c, &g);
    let residual_iii = &r_zb + &a_conj(j, &phi, &r_z)?;
    let delta = w1p_norm(&(&f1.restrict(&pair.overlap)? - &f2.restrict(&pair.overlap)?), cfg);
    Ok(PregluedPair {
        f1: f1.clone(),
        f2: f2.clone(),
        phi,
        delta,
        chi,
        residual,
        residual_i,
        residual_ii,
        residual_iii,
    })
}

/// `f = phi - T[dbar(chi) (f1 - f2)]` on the union, with the product derivative taken in its
/// discrete form `dbar_h(chi g) - chi dbar_h g`.
pub fn classical_glue(pair: &GoodPair, f1: &Field, f2: &Field, t: &CauchyOperator) -> Result<Field> {
    check_inputs(pair, f1, f2)?;
    if !t.domain().same_as(&pair.union) {
        return Err(GlueError::FieldMismatch("the Cauchy operator must live on the union".into()));
    }
    let (phi, _, _, g, chi) = blend(pair, f1, f2)?;
    let chi_c: Vec<Complex64> = chi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let dzb_chi = d_zbar(&Field::from_values(&pair.union, 1, chi_c.clone())?);
    let (r_zb, _) = leibniz_remainder(&chi_c, &g);
    let arg = &g.mul_nodes(dzb_chi.values()) + &r_zb;
    Ok(&phi - &t.apply(&arg))
}

/// Absolute bound on `||F(f_j)||_{L^p}` for inputs treated as holomorphic: ten times the
/// interior residual of `dbar_h T` on the constant 1.
pub fn holomorphy_floor(t: &CauchyOperator, cfg: NormConfig) -> f64 {
    t.holomorphy_floor(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDiagnostics {
    pub delta: f64,
    pub preglue_residual: f64,
    /// `||F(phi)|| / delta`, the measured pregluing constant.
    pub c0: f64,
    pub dist_f1: f64,
    pub dist_f2: f64,
    /// `||f - phi||` restricted to each domain.
    pub step_1: f64,
    pub step_2: f64,
    pub phi_dist_1: f64,
    pub phi_dist_2: f64,
    /// `dist_fj <= step_j + phi_dist_j` on both domains.
    pub triangle_ok: bool,
    pub holomorphy_floor: f64,
    pub input_residuals: (f64, f64),
    pub inverse_provenance: String,
    pub inverse_norm: f64,
    pub inverse: InverseRecord,
}

/// Preglue, build a right inverse at `phi` on the union and correct by Newton.
pub fn glue_local(
    pair: &GoodPair,
    j: &AlmostComplexStructure,
    f1: &Field,
    f2: &Field,
    cfg: NormConfig,
    limits: NewtonLimits,
) -> Result<(Field, NewtonCertificate, LocalDiagnostics)> {
    check_inputs(pair, f1, f2)?;
    let t = Arc::new(CauchyOperator::new(&pair.union));
    let floor = holomorphy_floor(&t, cfg);
    let r1 = lp_norm(&dbar_residual(j, f1)?, cfg);
    let r2 = lp_norm(&dbar_residual(j, f2)?, cfg);
    for r in [r1, r2] {
        if r > floor {
            return Err(GlueError::InputNotHolomorphic { residual: r, floor });
        }
    }
    let pre = preglue(pair, j, f1, f2, cfg)?;
    let q = Arc::new(build_right_inverse(&linearize(j, &pre.phi)?, &t, cfg)?);
    let (f, cert) = holomorphic_approximation(j, &pre.phi, &q, cfg, limits)?;
    let on = |x: &Field, d: &Arc<GridDomain>| x.restrict(d);
    let dist = |a: &Field, b: &Field| w1p_norm(&(a - b), cfg);
    let (f_1, f_2) = (on(&f, &pair.omega1)?, on(&f, &pair.omega2)?);
    let (p_1, p_2) = (on(&pre.phi, &pair.omega1)?, on(&pre.phi, &pair.omega2)?);
    let (dist_f1, dist_f2) = (dist(&f_1, f1), dist(&f_2, f2));
    let (step_1, step_2) = (dist(&f_1, &p_1), dist(&f_2, &p_2));
    let (phi_dist_1, phi_dist_2) = (dist(&p_1, f1), dist(&p_2, f2));
    let slack = 1e-12 * (1.0 + dist_f1.max(dist_f2));
    let preglue_residual = lp_norm(&pre.residual, cfg);
    let diag = LocalDiagnostics {
        delta: pre.delta,
        preglue_residual,
        c0: if pre.delta > 0.0 { preglue_residual / pre.delta } else { 0.0 },
        dist_f1,
        dist_f2,
        step_1,
        step_2,
        phi_dist_1,
        phi_dist_2,
        triangle_ok: dist_f1 <= step_1 + phi_dist_1 + slack && dist_f2 <= step_2 + phi_dist_2 + slack,
        holomorphy_floor: floor,
        input_residuals: (r1, r2),
        inverse_provenance: q.provenance().to_string(),
        inverse_norm: q.norm_estimate(),
        inverse: q.record(),
    };
    Ok((f, cert, diag))
}

/// Frozen-Newton steps used to turn a seed into a near-solution.
pub const SEED_STEPS: usize = 30;

fn seed_map(j: &AlmostComplexStructure, x0: &Field, q: &RightInverse) -> Result<Field> {
    let mut x = x0.clone();
    for _ in 0..SEED_STEPS {
        let f = dbar_residual(j, &x)?;
        x = &x - &q.apply(&f);
    }
    Ok(x)
}

fn seed_inverse(j: &AlmostComplexStructure, base: &Field, cfg: NormConfig) -> Result<RightInverse> {
    let t = Arc::new(CauchyOperator::new(base.domain()));
    build_right_inverse(&linearize(j, base)?, &t, cfg)
}

/// Near-solution obtained from `seed` by a fixed number of frozen Newton steps.
pub fn solution_near(j: &AlmostComplexStructure, seed: &Field, cfg: NormConfig) -> Result<Field> {
    let q = seed_inverse(j, seed, cfg)?;
    seed_map(j, seed, &q)
}

/// Near-solutions `g|omega1` and `S(base + delta)|omega2`, both produced by the
/// same map `S` (inverse frozen at `base`), so `f1 - f2` is smooth in `delta`
/// and vanishes at `delta = 0`.
pub fn seed_pair(
    pair: &GoodPair,
    j: &AlmostComplexStructure,
    base: &Field,
    delta: f64,
    cfg: NormConfig,
) -> Result<(Field, Field)> {
    if !base.domain().same_as(&pair.union) {
        return Err(GlueError::FieldMismatch("seed base must live on the union".into()));
    }
    let q = seed_inverse(j, base, cfg)?;
    let g = seed_map(j, base, &q)?;
    let g2 = if delta == 0.0 { g.clone() } else { seed_map(j, &base.map(|v| v + delta), &q)? };
    Ok((g.restrict(&pair.omega1)?, g2.restrict(&pair.omega2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_cutoffs, rectangle_pair};
    use crate::solver::Verdict;

    fn pair(h: f64) -> GoodPair {
        let (a, b) = rectangle_pair(h).unwrap();
        build_cutoffs(&a, &b).unwrap()
    }

    fn sq(d: &Arc<GridDomain>, c: f64) -> Field {
        Field::scalar(d, move |z| z * z + c)
    }

    fn j_eps() -> AlmostComplexStructure {
        AlmostComplexStructure::j_eps(1, 0.02, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap()
    }

    #[test]
    fn equal_inputs_preglue_to_themselves() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let j = j_eps();
        let f1 = sq(&p.omega1, 0.0);
        let f2 = sq(&p.omega2, 0.0);
        let pre = preglue(&p, &j, &f1, &f2, cfg).unwrap();
        assert_eq!(pre.residual_i.max_abs(), 0.0);
        assert_eq!(pre.residual_iii.max_abs(), 0.0);
        assert_eq!(pre.phi.restrict(&p.omega1).unwrap().values(), f1.values());
        assert_eq!(pre.delta, 0.0);
    }

    #[test]
    fn split_is_exact_and_supported_in_overlap() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let j = j_eps();
        let f1 = Field::scalar(&p.omega1, |z| z * z * 0.4 + z);
        let f2 = Field::scalar(&p.omega2, |z| z * z * 0.4 + z + Complex64::new(0.01, -0.02) * z);
        let pre = preglue(&p, &j, &f1, &f2, cfg).unwrap();
        let scale = lp_norm(&pre.residual, cfg);
        assert!(pre.split_defect(cfg) <= 1e-10 * scale.max(1.0));
        // I and III vanish off the overlap by construction of chi
        for (k, &i) in p.union.nodes().iter().enumerate() {
            if p.overlap.node_of(i).is_none() {
                assert_eq!(pre.residual_i.at(k)[0], Complex64::new(0.0, 0.0));
                assert_eq!(pre.residual_iii.at(k)[0], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn standard_holomorphic_has_no_second_term() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let pre = preglue(&p, &AlmostComplexStructure::standard(1), &sq(&p.omega1, 0.0), &sq(&p.omega2, 0.01), cfg).unwrap();
        assert!(pre.residual_ii.max_abs() < 1e-12);
        assert!(pre.residual_i.max_abs() > 1e-3);
    }

    #[test]
    fn classical_glue_examples() {
        let p = pair(1.0 / 16.0);
        let t = CauchyOperator::new(&p.union);
        let same = classical_glue(&p, &sq(&p.omega1, 0.0), &sq(&p.omega2, 0.0), &t).unwrap();
        assert_eq!(same.values(), sq(&p.union, 0.0).values());
        // joint linearity
        let (a1, a2) = (Field::scalar(&p.omega1, |z| z * 2.0), Field::scalar(&p.omega2, |z| z * 2.0 + 0.1));
        let (b1, b2) = (sq(&p.omega1, 0.0), sq(&p.omega2, -0.05));
        let s = Complex64::new(0.7, -1.3);
        let lhs = classical_glue(&p, &(&a1 + &b1.scale(s)), &(&a2 + &b2.scale(s)), &t).unwrap();
        let rhs = &classical_glue(&p, &a1, &a2, &t).unwrap() + &classical_glue(&p, &b1, &b2, &t).unwrap().scale(s);
        assert!((&lhs - &rhs).max_abs() < 1e-12);
    }

    #[test]
    fn classical_glue_stays_within_kappa_delta() {
        // regression constant measured at h = 1/16
        let p = pair(1.0 / 16.0);
        let t = CauchyOperator::new(&p.union);
        let delta = 1e-2;
        let f = classical_glue(&p, &sq(&p.omega1, 0.0), &sq(&p.omega2, delta), &t).unwrap();
        let d1 = (&f.restrict(&p.omega1).unwrap() - &sq(&p.omega1, 0.0)).max_abs();
        let d2 = (&f.restrict(&p.omega2).unwrap() - &sq(&p.omega2, delta)).max_abs();
        assert!(d1.max(d2) <= 1.0 * delta, "{d1} {d2}");
    }

    #[test]
    fn local_glue_under_standard_is_classical() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let (f1, f2) = (sq(&p.omega1, 0.0), sq(&p.omega2, 1e-2));
        let (f, cert, diag) = glue_local(&p, &AlmostComplexStructure::standard(1), &f1, &f2, cfg, NewtonLimits::default()).unwrap();
        let oracle = classical_glue(&p, &f1, &f2, &CauchyOperator::new(&p.union)).unwrap();
        assert!(w1p_norm(&(&f - &oracle), cfg) < 1e-8);
        assert!(cert.iterations() <= 2);
        assert_eq!(cert.verdict, Verdict::Certified);
        assert!(diag.triangle_ok);
    }

    #[test]
    fn holomorphic_input_is_fixed() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let j = j_eps();
        let g = solution_near(&j, &sq(&p.union, 0.0), cfg).unwrap();
        let (f1, f2) = (g.restrict(&p.omega1).unwrap(), g.restrict(&p.omega2).unwrap());
        let (f, cert, _) = glue_local(&p, &j, &f1, &f2, cfg, NewtonLimits::default()).unwrap();
        let r = lp_norm(&dbar_residual(&j, &g).unwrap(), cfg);

        assert!(w1p_norm(&(&f - &g), cfg) <= 2.0 * cert.c * r);
    }

    #[test]
    fn non_holomorphic_input_rejected() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let f1 = Field::scalar(&p.omega1, |z| z.conj());
        let err = glue_local(&p, &AlmostComplexStructure::standard(1), &f1, &sq(&p.omega2, 0.0), cfg, NewtonLimits::default());
        assert!(matches!(err, Err(GlueError::InputNotHolomorphic { .. })));
    }

    #[test]
    fn swapping_the_pair_gives_the_same_glue() {
        let cfg = NormConfig::default();
        let p = pair(1.0 / 16.0);
        let s = p.swapped().unwrap();
        let (f1, f2) = (sq(&p.omega1, 0.0), sq(&p.omega2, 1e-2));
        let js = AlmostComplexStructure::standard(1);
        let (a, _, _) = glue_local(&p, &js, &f1, &f2, cfg, NewtonLimits::default()).unwrap();
        let (b, _, _) = glue_local(&s, &js, &f2, &f1, cfg, NewtonLimits::default()).unwrap();
        assert!(w1p_norm(&(&a - &b), cfg) < 1e-10);
    }
}
