//! Newton on the compatibility set: the two-chart gluing pipeline.

use std::sync::Arc;

use crate::acstruct::{dbar_residual, lipschitz_probe, linearize};
use crate::calculus::{d_z, lp_norm, w1p_norm, Field, NormConfig};
use crate::cauchy::{CauchyOperator, PROBE_SEED};
use crate::cousin::seed_pair;
use crate::error::{GlueError, Result};
use crate::grid::GoodPair;
use crate::solver::{ball_radius, build_right_inverse, stall_ratio, threshold, verdict, InverseRecord, NewtonCertificate, NewtonLimits, StopReason, StopRule};
use crate::transition::chart::ChartTransition;
use crate::transition::hatq::{corrected_pair_inverse, HatQ};
use crate::transition::pair::{pair_lp, pair_w1p, preglue_pair, reproject, PairState, COMPATIBLE};
use crate::transition::runge::runge_polynomial;

/// Largest degree tried for the Runge polynomial.
pub const RUNGE_MAX_DEGREE: usize = 40;
/// Compatibility bound asserted at every iterate, relative to the state scale.
pub const ITERATE_COMPATIBLE: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PairDiagnostics {
    pub delta: f64,
    pub preglue_residual: f64,
    pub c0: f64,
    pub runge_degree: usize,
    pub runge_sup: (f64, f64),
    /// Probed defect of the uncorrected pair inverse.
    pub pair_probe: f64,
    pub neumann_terms: usize,
    pub hat_norm: f64,
    pub inverse_norm: f64,
    /// Compatibility defect of the state after each iterate (index 0 = pregluing).
    pub compatibility_trace: Vec<f64>,
    /// Defect of each raw update before re-projection.
    pub drift_trace: Vec<f64>,
    pub scale: f64,
    pub input_residuals: (f64, f64),
    pub final_residuals: (f64, f64),
    pub dist_f1: f64,
    pub dist_f2: f64,
    pub inverse_provenance: String,
    /// The one-domain inverses on Omega1 and Omega2.
    pub side_inverses: [InverseRecord; 2],
}

/// Frozen-inverse Newton from the pregluing of `(f1, f2)`; returns `(f-hat1, f-hat2)` with
/// `Psi(f-hat2) = f-hat1` on the overlap.
pub fn glue_pair(
    tr: &ChartTransition,
    pair: &GoodPair,
    f1: &Field,
    f2: &Field,
    gamma: f64,
    cfg: NormConfig,
    limits: NewtonLimits,
) -> Result<(Field, Field, NewtonCertificate, PairDiagnostics)> {
    let t1 = Arc::new(CauchyOperator::new(&pair.omega1));
    let t2 = Arc::new(CauchyOperator::new(&pair.omega2));
    let (h1, h2) = (t1.holomorphy_floor(cfg), t2.holomorphy_floor(cfg));
    let r1 = lp_norm(&dbar_residual(tr.j1(), f1)?, cfg);
    let r2 = lp_norm(&dbar_residual(tr.j2(), f2)?, cfg);
    for (r, floor) in [(r1, h1), (r2, h2)] {
        if r > floor {
            return Err(GlueError::InputNotHolomorphic { residual: r, floor });
        }
    }
    let pre = preglue_pair(tr, pair, f1, f2, cfg)?;
    let state0 = pre.state.clone();
    let poly = runge_polynomial(pair, gamma, RUNGE_MAX_DEGREE)?;
    let lin1 = linearize(tr.j1(), &state0.phi1)?;
    let lin2 = linearize(tr.j2(), &state0.phi2)?;
    let q1 = Arc::new(build_right_inverse(&lin1, &t1, cfg)?);
    let q2 = Arc::new(build_right_inverse(&lin2, &t2, cfg)?);
    let (floor, hol) = (q1.floor().max(q2.floor()), h1 + h2);
    let side_inverses = [q1.record(), q2.record()];
    let runge_degree = poly.degree;
    let runge_sup = (poly.sup_k1, poly.sup_k2_minus_1);
    let hat = HatQ::new(pair, tr, q1, q2, poly, &state0)?;
    let context = format!("gamma = {gamma}, delta = {:.3e}", pre.delta);
    let q = corrected_pair_inverse(hat, lin1.clone(), lin2.clone(), &state0, cfg, &context)?;

    // certificate constants
    let c = q.norm_estimate().max(lp_norm(&d_z(&state0.phi1), cfg) + lp_norm(&d_z(&state0.phi2), cfg));
    let rho = ball_radius(tr.j1(), &state0.phi1, cfg).min(ball_radius(tr.j2(), &state0.phi2, cfg));
    let lip = if rho > 0.0 {
        lipschitz_probe(tr.j1(), &state0.phi1, rho, 8, PROBE_SEED ^ 0x11b, cfg)?.max(lipschitz_probe(tr.j2(), &state0.phi2, rho, 8, PROBE_SEED ^ 0x11c, cfg)?)
    } else {
        0.0
    };
    let thr = if rho > 0.0 { threshold(rho, c, lip) } else { 0.0 };

    let scale = state0.scale(pair);
    let bound = ITERATE_COMPATIBLE * scale;
    let tol = limits.tol.unwrap_or(1e-10 * (pair.omega1.area().powf(1.0 / cfg.p) + pair.omega2.area().powf(1.0 / cfg.p)));
    let mut x = state0.clone();
    let mut f = x.residual(tr)?;
    let r0 = pair_lp(&f, cfg);
    let tol_eff = tol.max(floor * r0);
    let mut history = vec![r0];
    let mut compat = vec![x.compatibility_defect];
    let mut drift = Vec::new();
    let mut stop = StopReason::MaxIter;
    if x.compatibility_defect > bound {
        return Err(GlueError::CompatibilityLost { defect: x.compatibility_defect, bound, iterate: 0 });
    }
    if r0 <= tol {
        stop = StopReason::Tolerance;
    } else {
        for k in 1..=limits.max_iter {
            let step = q.apply(&f.0, &f.1)?;
            let pred = (&f.0 - &lin1.apply(&step.0), &f.1 - &lin2.apply(&step.1));
            let phi1 = &x.phi1 - &step.0;
            let mut phi2 = &x.phi2 - &step.1;
            let raw = crate::transition::pair::compatibility_defect(tr, pair, &phi1, &phi2)?;
            reproject(tr, pair, &phi1, &mut phi2)?;
            let next = PairState::new(tr, pair, phi1, phi2).map_err(|e| iterate_error(e, k))?;
            if next.compatibility_defect > bound {
                return Err(GlueError::CompatibilityLost { defect: next.compatibility_defect, bound, iterate: k });
            }
            let fnew = next.residual(tr).map_err(|e| iterate_error(e, k))?;
            let r = pair_lp(&fnew, cfg);
            let prev = *history.last().expect("history is never empty");
            if r > tol_eff && r >= stall_ratio(limits.stop) * prev && r < 1e3 * r0.max(prev) {
                stop = StopReason::Stagnation;
                break;
            }
            drift.push(raw);
            compat.push(next.compatibility_defect);
            history.push(r);
            x = next;
            if !r.is_finite() || r > 1e3 * r0.max(prev) {
                stop = StopReason::Blowup;
                break;
            }
            if r <= tol_eff {
                stop = StopReason::Tolerance;
                break;
            }
            if limits.stop == StopRule::LinearRemainder && pair_lp(&(&fnew.0 - &pred.0, &fnew.1 - &pred.1), cfg) <= 1e-8 * pair_lp(&pred, cfg) {
                stop = StopReason::LinearModel;
                break;
            }
            f = fnew;
        }
    }
    let last = *history.last().expect("history is never empty");
    let stalled_ok = stop == StopReason::Stagnation && last <= hol;
    let converged = stalled_ok || matches!(stop, StopReason::Tolerance | StopReason::LinearModel);
    let final_distance = pair_w1p(&(&x.phi1 - &state0.phi1, &x.phi2 - &state0.phi2), cfg);
    let cert = NewtonCertificate {
        rho,
        lipschitz: lip,
        c,
        threshold: thr,
        initial_residual: r0,
        residual_history: history,
        final_distance,
        tol: if r0 <= tol {
            tol
        } else if stalled_ok {
            hol.max(tol_eff)
        } else {
            tol_eff
        },
        stop,
        verdict: verdict(converged, r0, thr, final_distance, c),
        provenance: q.provenance(),
    };
    let fin = x.residual(tr)?;
    let diag = PairDiagnostics {
        delta: pre.delta,
        preglue_residual: pre.residual,
        c0: pre.c0,
        runge_degree,
        runge_sup,
        pair_probe: q.probe(),
        neumann_terms: q.terms(),
        hat_norm: q.hat_norm(),
        inverse_norm: q.norm_estimate(),
        compatibility_trace: compat,
        drift_trace: drift,
        scale,
        input_residuals: (r1, r2),
        final_residuals: (lp_norm(&fin.0, cfg), lp_norm(&fin.1, cfg)),
        dist_f1: w1p_norm(&(&x.phi1 - f1), cfg),
        dist_f2: w1p_norm(&(&x.phi2 - f2), cfg),
        inverse_provenance: q.provenance(),
        side_inverses,
    };
    debug_assert!(x.compatibility_defect <= bound.max(COMPATIBLE * scale));
    Ok((x.phi1, x.phi2, cert, diag))
}

fn iterate_error(e: GlueError, k: usize) -> GlueError {
    match e {
        GlueError::PointOutsideValidityBox { node, .. } => GlueError::PointOutsideValidityBox { node, iterate: Some(k) },
        e => e,
    }
}

/// Inputs for the two-chart pipeline: `f1 = S(base)|Omega1` and `f2 = Psi^{-1}(S(base + delta))|Omega2`,
/// with `S` the common seed map of the one-chart problem for `J1` on the union.
pub fn seed_chart_pair(tr: &ChartTransition, pair: &GoodPair, base: &Field, delta: f64, cfg: NormConfig) -> Result<(Field, Field)> {
    let (f1, g2) = seed_pair(pair, tr.j1(), base, delta, cfg)?;
    Ok((f1, tr.pull(&g2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acstruct::AlmostComplexStructure;
    use crate::cousin::glue_local;
    use crate::grid::{build_cutoffs, slab_pair};
    use crate::solver::Verdict;
    use crate::transition::chart::ChartMap;
    use num_complex::Complex64;

    fn slab() -> GoodPair {
        let (a, b) = slab_pair(1.0 / 32.0).unwrap();
        build_cutoffs(&a, &b).unwrap()
    }

    #[test]
    fn flat_identity_chart_matches_the_one_chart_glue() {
        let cfg = NormConfig::default();
        let p = slab();
        let js = AlmostComplexStructure::standard(1);
        let tr = ChartTransition::identity(js.clone()).unwrap();
        let f1 = Field::scalar(&p.omega1, |z| z * z * 0.5);
        let f2 = Field::scalar(&p.omega2, |z| z * z * 0.5 + 1e-2);
        let (g1, g2, cert, diag) = glue_pair(&tr, &p, &f1, &f2, 0.3, cfg, NewtonLimits::default()).unwrap();
        let (g, _, _) = glue_local(&p, &js, &f1, &f2, cfg, NewtonLimits::default()).unwrap();
        assert!(w1p_norm(&(&g1 - &g.restrict(&p.omega1).unwrap()), cfg) < 1e-6);
        assert!(w1p_norm(&(&g2 - &g.restrict(&p.omega2).unwrap()), cfg) < 1e-6);
        assert_eq!(cert.verdict, Verdict::Certified);
        assert!(diag.compatibility_trace.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn rotated_chart_converges_on_the_compatibility_set() {
        let cfg = NormConfig::default();
        let p = slab();
        let j = AlmostComplexStructure::j_eps(1, 0.01, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
        let tr = ChartTransition::fitted(ChartMap::rotation(1, 0.3, Complex64::new(0.0, 0.0)), j).unwrap();
        let base = Field::scalar(&p.union, |z| z * z * 0.5);
        let (f1, f2) = seed_chart_pair(&tr, &p, &base, 1e-3, cfg).unwrap();
        let (g1, g2, cert, diag) = glue_pair(&tr, &p, &f1, &f2, 0.3, cfg, NewtonLimits::default()).unwrap();
        assert!(cert.converged());
        assert!(diag.compatibility_trace.iter().all(|&d| d <= ITERATE_COMPATIBLE * diag.scale));
        assert!(diag.final_residuals.0 + diag.final_residuals.1 <= cert.tol);
        assert!(cert.final_distance <= 2.0 * cert.c * cert.initial_residual);
        assert!(compatibility_defect_of(&tr, &p, &g1, &g2) <= ITERATE_COMPATIBLE * diag.scale);
    }

    fn compatibility_defect_of(tr: &ChartTransition, p: &GoodPair, a: &Field, b: &Field) -> f64 {
        crate::transition::pair::compatibility_defect(tr, p, a, b).unwrap()
    }

    #[test]
    fn non_holomorphic_inputs_are_refused() {
        let cfg = NormConfig::default();
        let p = slab();
        let tr = ChartTransition::identity(AlmostComplexStructure::standard(1)).unwrap();
        let f1 = Field::scalar(&p.omega1, |z| z.conj());
        let f2 = Field::scalar(&p.omega2, |z| z);
        let err = glue_pair(&tr, &p, &f1, &f2, 0.3, cfg, NewtonLimits::default());
        assert!(matches!(err, Err(GlueError::InputNotHolomorphic { .. })));
    }
}
