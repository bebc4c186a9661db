//! The approximate pair inverse built from the two one-domain inverses and a Runge
//! polynomial, and its Neumann correction.

use std::sync::Arc;

use num_complex::Complex64;

use crate::acstruct::LinearizedOperator;
use crate::calculus::{d_zbar, leibniz_remainder, Field, NormConfig};
use crate::error::{GlueError, Result};
use crate::grid::GoodPair;
use crate::cauchy::PROBE_SEED;
use crate::probe::lp_probes;
use crate::solver::{neumann_terms, RightInverse};
use crate::transition::chart::{ChartMap, ChartTransition};
use crate::transition::pair::{pair_lp, pair_w1p, PairState};
use crate::transition::runge::RungePolynomial;

const PAIR_PROBES: usize = 16;

/// Intermediate fields of one application.
#[derive(Clone, Debug)]
pub struct HatQParts {
    pub v1: Field,
    pub v2: Field,
    /// `V1 - dPsi(V2)` on the overlap.
    pub w: Field,
    pub hat1: Field,
    pub hat2: Field,
}

/// `V-hat1 = dPsi(V2) + beta1 P W + beta2 (1 - P) W` on the overlap (`V1` elsewhere on Omega1),
/// `V-hat2 = dPsi^{-1}(V-hat1)` on the overlap (`V2` elsewhere), with `V_i = Q_i S_i` and
/// `W = V1 - dPsi(V2)`.
#[derive(Clone, Debug)]
pub struct HatQ {
    pair: GoodPair,
    tr: ChartTransition,
    q1: Arc<RightInverse>,
    q2: Arc<RightInverse>,
    poly: RungePolynomial,
    /// `P` at the overlap nodes.
    p_overlap: Vec<Complex64>,
    beta1: Vec<f64>,
    beta2: Vec<f64>,
    phi2_overlap: Field,
}

impl HatQ {
    pub fn new(
        pair: &GoodPair,
        tr: &ChartTransition,
        q1: Arc<RightInverse>,
        q2: Arc<RightInverse>,
        poly: RungePolynomial,
        state: &PairState,
    ) -> Result<HatQ> {
        if !q1.cauchy().domain().same_as(&pair.omega1) || !q2.cauchy().domain().same_as(&pair.omega2) {
            return Err(GlueError::FieldMismatch("one-domain inverses must live on Omega1 and Omega2".into()));
        }
        let o = &pair.overlap;
        Ok(HatQ {
            pair: pair.clone(),
            tr: tr.clone(),
            q1,
            q2,
            p_overlap: poly.eval_many(&o.points()),
            poly,
            beta1: pair.beta1.on(o),
            beta2: pair.beta2.on(o),
            phi2_overlap: state.phi2.restrict(o)?,
        })
    }

    pub fn pair(&self) -> &GoodPair {
        &self.pair
    }
    pub fn polynomial(&self) -> &RungePolynomial {
        &self.poly
    }
    pub fn inverses(&self) -> (&Arc<RightInverse>, &Arc<RightInverse>) {
        (&self.q1, &self.q2)
    }

    pub fn apply_parts(&self, s1: &Field, s2: &Field) -> Result<HatQParts> {
        let o = &self.pair.overlap;
        let v1 = self.q1.apply(s1);
        let v2 = self.q2.apply(s2);
        let dv2 = self.tr.d_psi(&self.phi2_overlap, &v2.restrict(o)?)?;
        let w = &v1.restrict(o)? - &dv2;
        let one = Complex64::new(1.0, 0.0);
        let g1 = w.mul_nodes(&self.p_overlap);
        let g2 = w.mul_nodes(&self.p_overlap.iter().map(|p| one - p).collect::<Vec<_>>());
        let a1: Vec<f64> = self.beta1.iter().map(|b| b - 1.0).collect();
        let a2: Vec<f64> = self.beta2.iter().map(|b| b - 1.0).collect();
        let corr = &g1.scale_nodes(&a1) + &g2.scale_nodes(&a2);
        let hat1 = &v1 + &corr.extend_by_zero(&self.pair.omega1)?;
        let back = self.tr.d_psi_inv(&self.phi2_overlap, &hat1.restrict(o)?)?;
        let mut hat2 = v2.clone();
        hat2.overwrite_from(&back);
        Ok(HatQParts { v1, v2, w, hat1, hat2 })
    }

    pub fn apply(&self, s1: &Field, s2: &Field) -> Result<(Field, Field)> {
        let p = self.apply_parts(s1, s2)?;
        Ok((p.hat1, p.hat2))
    }

    /// Split of `dbar_h V-hat - S` on both domains (identity chart and standard structure only):
    /// the two beta terms plus the discrete defects that vanish in the continuum.
    pub fn defect_terms(&self, s1: &Field, s2: &Field) -> Result<(HatQDefect, HatQDefect)> {
        if !matches!(self.tr.map(), ChartMap::Identity { .. }) || !self.tr.j1().is_standard() {
            return Err(GlueError::Precondition("the hat-Q defect split needs Psi = id and J = J_st".into()));
        }
        let parts = self.apply_parts(s1, s2)?;
        let d1 = self.side_defect(&self.pair.omega1, &parts.v1, &parts.hat1, s1, &parts.w, -1.0)?;
        let d2 = self.side_defect(&self.pair.omega2, &parts.v2, &parts.hat2, s2, &parts.w, 0.0)?;
        Ok((d1, d2))
    }

    /// `V-hat = B + a1 g1 + a2 g2` with `a_i = beta_i + shift`, `g1 = P W`, `g2 = (1 - P) W`.
    fn side_defect(
        &self,
        dom: &Arc<crate::grid::GridDomain>,
        base: &Field,
        hat: &Field,
        s: &Field,
        w: &Field,
        shift: f64,
    ) -> Result<HatQDefect> {
        let one = Complex64::new(1.0, 0.0);
        let pts = dom.points();
        let p = self.poly.eval_many(&pts);
        let wd = w.extend_by_zero(dom)?;
        let b1 = self.pair.beta1.on(dom);
        let b2 = self.pair.beta2.on(dom);
        let a1: Vec<Complex64> = b1.iter().map(|b| Complex64::new(b + shift, 0.0)).collect();
        let a2: Vec<Complex64> = b2.iter().map(|b| Complex64::new(b + shift, 0.0)).collect();
        let g1 = wd.mul_nodes(&p);
        let g2 = wd.mul_nodes(&p.iter().map(|v| one - v).collect::<Vec<_>>());
        let col = |v: &[Complex64]| Field::from_values(dom, 1, v.to_vec()).expect("one value per node");
        let dbar_scalar = |v: &[Complex64]| d_zbar(&col(v)).into_values();
        let (db1, db2, dp) = (dbar_scalar(&a1), dbar_scalar(&a2), dbar_scalar(&p));
        let dw = d_zbar(&wd);
        let (rpw, _) = leibniz_remainder(&p, &wd);
        let (r1, _) = leibniz_remainder(&a1, &g1);
        let (r2, _) = leibniz_remainder(&a2, &g2);
        let diff: Vec<Complex64> = a1.iter().zip(&a2).map(|(x, y)| x - y).collect();
        let weight: Vec<Complex64> = (0..dom.len()).map(|k| a1[k] * p[k] + a2[k] * (one - p[k])).collect();
        let beta = &g1.mul_nodes(&db1) + &g2.mul_nodes(&db2);
        let inverse = &d_zbar(base) - s;
        let transfer = dw.mul_nodes(&weight);
        let polynomial = wd.mul_nodes(&dp).mul_nodes(&diff);
        let leibniz = &(&rpw.mul_nodes(&diff) + &r1) + &r2;
        let actual = &d_zbar(hat) - s;
        Ok(HatQDefect { beta, inverse, transfer, polynomial, leibniz, actual })
    }
}

/// `dbar_h V-hat - S = beta + inverse + transfer + polynomial + leibniz` on one domain.
#[derive(Clone, Debug)]
pub struct HatQDefect {
    /// `(beta1)_zbar P W + (beta2)_zbar (1 - P) W`.
    pub beta: Field,
    /// `dbar_h Q_i S - S`.
    pub inverse: Field,
    /// `(a1 P + a2 (1 - P)) dbar_h W`.
    pub transfer: Field,
    /// `(a1 - a2) W dbar_h P`.
    pub polynomial: Field,
    /// Discrete Leibniz remainders.
    pub leibniz: Field,
    /// `dbar_h V-hat - S`, computed directly.
    pub actual: Field,
}

impl HatQDefect {
    pub fn total(&self) -> Field {
        &(&(&(&self.beta + &self.inverse) + &self.transfer) + &self.polynomial) + &self.leibniz
    }

    /// Largest node gap between the directly computed defect and the sum of the terms.
    pub fn identity_gap(&self) -> f64 {
        (&self.actual - &self.total()).max_abs()
    }

    pub fn scale(&self) -> f64 {
        self.actual.max_abs().max(self.beta.max_abs()).max(self.inverse.max_abs())
    }
}

/// Smooth probe pairs `(G, L^{-1} G)` whose two sides are related as pair residuals on the
/// compatibility set are, with `G` normalized on the union.
pub fn compatible_probes(tr: &ChartTransition, pair: &GoodPair, state: &PairState, count: usize, seed: u64, cfg: NormConfig) -> Result<Vec<(Field, Field)>> {
    let n = tr.n();
    let transfer = tr.residual_transfer(&state.phi2)?;
    let mut inv = Vec::with_capacity(transfer.len());
    for (k, l) in transfer.into_iter().enumerate() {
        let det = l.determinant();
        inv.push(l.try_inverse().ok_or(GlueError::JacobianSingular { node: k, det: det.norm() })?);
    }
    lp_probes(&pair.union, n, count, seed, cfg)
        .into_iter()
        .map(|g| {
            let s1 = g.restrict(&pair.omega1)?;
            let mut s2 = g.restrict(&pair.omega2)?;
            for (k, li) in inv.iter().enumerate() {
                let v = nalgebra::DVector::from_column_slice(s2.at(k));
                let w = li * v;
                s2.at_mut(k).copy_from_slice(w.as_slice());
            }
            Ok((s1, s2))
        })
        .collect()
}

/// `Q = Q-hat o (dF o Q-hat)^{-1}`, the inverse series truncated after `terms` terms.
/// The defect is measured against what the one-domain inverses achieve,
/// `E(S) = dF(Q-hat S) - (dF1 Q1 S1, dF2 Q2 S2) = (dF1(V-hat1 - V1), dF2(V-hat2 - V2))`,
/// which is the continuum defect of Q-hat; the one-domain discretization floor is left to Newton.
#[derive(Clone, Debug)]
pub struct PairInverse {
    hat: HatQ,
    lin1: LinearizedOperator,
    lin2: LinearizedOperator,
    terms: usize,
    probe: f64,
    hat_norm: f64,
    norm_estimate: f64,
}

impl PairInverse {
    fn defect(&self, s: &(Field, Field)) -> Result<(Field, Field)> {
        let p = self.hat.apply_parts(&s.0, &s.1)?;
        Ok((self.lin1.apply(&(&p.hat1 - &p.v1)), self.lin2.apply(&(&p.hat2 - &p.v2))))
    }

    pub fn apply(&self, s1: &Field, s2: &Field) -> Result<(Field, Field)> {
        let mut acc = (s1.clone(), s2.clone());
        let mut y = acc.clone();
        for _ in 0..self.terms {
            let e = self.defect(&y)?;
            y = (-&e.0, -&e.1);
            acc = (&acc.0 + &y.0, &acc.1 + &y.1);
        }
        self.hat.apply(&acc.0, &acc.1)
    }

    pub fn hat(&self) -> &HatQ {
        &self.hat
    }
    /// Probed `||dF o Q-hat - (dF1 Q1, dF2 Q2)||`.
    pub fn probe(&self) -> f64 {
        self.probe
    }
    pub fn terms(&self) -> usize {
        self.terms
    }
    pub fn hat_norm(&self) -> f64 {
        self.hat_norm
    }
    pub fn norm_estimate(&self) -> f64 {
        self.norm_estimate
    }
    pub fn provenance(&self) -> String {
        let (a, b) = self.hat.inverses();
        format!("pair({}, {}, terms {})", a.provenance(), b.provenance(), self.terms)
    }
}

/// Neumann correction of `hat` for the pair linearization `(lin1, lin2)`; fails when the
/// probed defect is not below 1/2. `context` (e.g. the gamma, delta pair) is attached to that error.
pub fn corrected_pair_inverse(
    hat: HatQ,
    lin1: LinearizedOperator,
    lin2: LinearizedOperator,
    state: &PairState,
    cfg: NormConfig,
    context: &str,
) -> Result<PairInverse> {
    let probes = compatible_probes(&hat.tr, &hat.pair, state, PAIR_PROBES, PROBE_SEED ^ 0x9a1, cfg)?;
    let mut inv = PairInverse { hat, lin1, lin2, terms: 0, probe: 0.0, hat_norm: 0.0, norm_estimate: 0.0 };
    for s in &probes {
        let ns = pair_lp(s, cfg);
        let v = inv.hat.apply(&s.0, &s.1)?;
        inv.hat_norm = inv.hat_norm.max(pair_w1p(&v, cfg) / ns);
        inv.probe = inv.probe.max(pair_lp(&inv.defect(s)?, cfg) / ns);
    }
    if !(inv.probe < 0.5) {
        return Err(GlueError::NeumannPreconditionFailed { probe: inv.probe, context: Some(context.to_string()) });
    }
    inv.terms = if inv.probe == 0.0 { 0 } else { neumann_terms(inv.probe) };
    for s in &probes {
        let v = inv.apply(&s.0, &s.1)?;
        inv.norm_estimate = inv.norm_estimate.max(pair_w1p(&v, cfg) / pair_lp(s, cfg));
    }
    if inv.norm_estimate > 2.0 * inv.hat_norm {
        return Err(GlueError::NeumannBoundViolated { corrected: inv.norm_estimate, base: inv.hat_norm });
    }
    Ok(inv)
}
