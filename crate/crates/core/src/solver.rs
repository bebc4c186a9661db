//! Right inverses of the linearized operator and the frozen-inverse Newton iteration with its
//! quantitative certificate.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::acstruct::{dbar_residual, linearize, lipschitz_probe, AlmostComplexStructure, LinearizedOperator};
use crate::calculus::{lp_norm, w1p_norm, Field, NormConfig};
use crate::cauchy::{CauchyOperator, PROBE_SEED};
use crate::error::{GlueError, Result};
use crate::probe::{lp_probes, w1p_probes, DEFAULT_PROBES};

/// Largest relative probe defect `||d(Q W) - W|| / ||W||` accepted for a right inverse.
pub const INVERSE_DEFECT_MAX: f64 = 0.1;
/// Neumann tail target: `q^{K+1} / (1 - q)` below this.
pub const NEUMANN_TAIL: f64 = 1e-3;
/// Frozen steps reducing the residual by less than this factor count as stalled.
pub const STALL_RATIO: f64 = 0.9;
const LSQ_PROBES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    CauchyGreen,
    LeastSquares,
    NeumannCorrected { base: Box<Provenance>, terms: usize },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::CauchyGreen => write!(f, "cauchy_green"),
            Provenance::LeastSquares => write!(f, "least_squares"),
            Provenance::NeumannCorrected { base, .. } => write!(f, "neumann_corrected({base})"),
        }
    }
}

enum Kind {
    Cauchy,
    /// `Q W = base(sum_{k<=K} u_k)`, `u_0 = W`, `u_{k+1} = u_k - lin(base(u_k))`.
    Neumann { base: Arc<RightInverse>, lin: LinearizedOperator, terms: usize },
    /// `Q W = T u` with `u` the real-GMRES solution of `lin(T u) = W`.
    LeastSquares { lin: LinearizedOperator },
}

/// A right inverse of a linearized operator, with its probe-measured norm and defect.
pub struct RightInverse {
    t: Arc<CauchyOperator>,
    kind: Kind,
    n: usize,
    norm_estimate: f64,
    probe_defect: f64,
    floor: f64,
    neumann_probe: Option<f64>,
    base_norm: Option<f64>,
    provenance: Provenance,
}

impl fmt::Debug for RightInverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RightInverse")
            .field("provenance", &self.provenance.to_string())
            .field("norm_estimate", &self.norm_estimate)
            .field("probe_defect", &self.probe_defect)
            .field("base_norm", &self.base_norm)
            .finish()
    }
}

impl RightInverse {
    pub fn apply(&self, w: &Field) -> Field {
        match &self.kind {
            Kind::Cauchy => self.t.apply(w),
            Kind::Neumann { base, lin, terms } => {
                let mut acc = w.clone();
                let mut u = w.clone();
                for _ in 0..*terms {
                    u = &u - &lin.apply(&base.apply(&u));
                    acc = &acc + &u;
                }
                base.apply(&acc)
            }
            Kind::LeastSquares { lin } => {
                let (u, _) = gmres(|u| lin.apply(&self.t.apply(u)), w, 60, 600, 1e-12);
                self.t.apply(&u)
            }
        }
    }

    pub fn cauchy(&self) -> &Arc<CauchyOperator> {
        &self.t
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn norm_estimate(&self) -> f64 {
        self.norm_estimate
    }
    /// Max relative defect of the inverse on its probes.
    pub fn probe_defect(&self) -> f64 {
        self.probe_defect
    }
    /// Relative probe defect of `T` for plain `dbar`: the part of a residual no grid inverse
    /// removes (the cokernel of the discrete `dbar`).
    pub fn floor(&self) -> f64 {
        self.floor
    }
    /// `||lin o base - Id||` on probes, for Neumann-corrected inverses.
    pub fn neumann_probe(&self) -> Option<f64> {
        self.neumann_probe
    }
    /// Norm estimate of the inverse this one corrects.
    pub fn base_norm(&self) -> Option<f64> {
        self.base_norm
    }
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
    pub fn terms(&self) -> usize {
        match &self.kind {
            Kind::Neumann { terms, .. } => *terms,
            _ => 0,
        }
    }
}

/// The recorded estimates of one inverse, kept in run diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseRecord {
    pub provenance: String,
    pub norm_estimate: f64,
    /// Estimate of the corrected inverse's base, for Neumann-corrected inverses.
    pub base_norm: Option<f64>,
}

impl RightInverse {
    pub fn record(&self) -> InverseRecord {
        InverseRecord { provenance: self.provenance.to_string(), norm_estimate: self.norm_estimate, base_norm: self.base_norm }
    }
}

/// Smallest `K >= 0` with `q^{K+1} / (1 - q) < NEUMANN_TAIL`.
pub fn neumann_terms(q: f64) -> usize {
    let mut k = 0;
    while q.powi(k as i32 + 1) / (1.0 - q) >= NEUMANN_TAIL {
        k += 1;
    }
    k
}

/// Max over probes of `||lin(Q W) - W|| / ||W||`.
fn defect_probe(lin: &LinearizedOperator, q: impl Fn(&Field) -> Field, probes: &[Field], cfg: NormConfig) -> f64 {
    probes.iter().map(|w| lp_norm(&(&lin.apply(&q(w)) - w), cfg) / lp_norm(w, cfg)).fold(0.0, f64::max)
}

fn norm_probe(q: impl Fn(&Field) -> Field, probes: &[Field], cfg: NormConfig) -> f64 {
    probes.iter().map(|w| w1p_norm(&q(w), cfg) / lp_norm(w, cfg)).fold(0.0, f64::max)
}

fn cauchy_inverse(lin: &LinearizedOperator, t: &Arc<CauchyOperator>, probes: &[Field], cfg: NormConfig) -> RightInverse {
    RightInverse {
        t: t.clone(),
        kind: Kind::Cauchy,
        n: lin.n(),
        norm_estimate: norm_probe(|w| t.apply(w), probes, cfg),
        probe_defect: defect_probe(lin, |w| t.apply(w), probes, cfg),
        floor: t.floor(cfg),
        neumann_probe: None,
        base_norm: None,
        provenance: Provenance::CauchyGreen,
    }
}

/// Build a right inverse of `lin`: `T` itself for the standard operator (or when `lin o T`
/// is within the floor of the identity), else a Neumann correction of `T` when
/// `||lin o T - Id|| < 1/2` on probes, else least squares.
pub fn build_right_inverse(lin: &LinearizedOperator, t: &Arc<CauchyOperator>, cfg: NormConfig) -> Result<RightInverse> {
    if !lin.domain().same_as(t.domain()) {
        return Err(GlueError::FieldMismatch("linearization and Cauchy operator live on different domains".into()));
    }
    let probes = lp_probes(lin.domain(), lin.n(), DEFAULT_PROBES, PROBE_SEED, cfg);
    let base = cauchy_inverse(lin, t, &probes, cfg);
    if lin.is_standard() || base.probe_defect <= base.floor {
        if base.probe_defect > INVERSE_DEFECT_MAX {
            return Err(GlueError::InverseConstructionFailed { neumann_probe: base.probe_defect, lsq_probe: f64::NAN });
        }
        return Ok(base);
    }
    let q = base.probe_defect;
    let floor = base.floor;
    if q < 0.5 {
        let inv = correct_with(Arc::new(base), lin, q, &probes, cfg)?;
        if inv.probe_defect <= INVERSE_DEFECT_MAX {
            return Ok(inv);
        }
    }
    let ls = RightInverse {
        t: t.clone(),
        kind: Kind::LeastSquares { lin: lin.clone() },
        n: lin.n(),
        norm_estimate: 0.0,
        probe_defect: 0.0,
        floor,
        neumann_probe: Some(q),
        base_norm: None,
        provenance: Provenance::LeastSquares,
    };
    let few = &probes[..LSQ_PROBES];
    let lsq_probe = defect_probe(lin, |w| ls.apply(w), few, cfg);
    if !(lsq_probe <= INVERSE_DEFECT_MAX) {
        return Err(GlueError::InverseConstructionFailed { neumann_probe: q, lsq_probe });
    }
    let norm_estimate = norm_probe(|w| ls.apply(w), few, cfg);
    Ok(RightInverse { norm_estimate, probe_defect: lsq_probe, ..ls })
}

fn correct_with(base: Arc<RightInverse>, lin: &LinearizedOperator, q: f64, probes: &[Field], cfg: NormConfig) -> Result<RightInverse> {
    // below the floor the series would only chase the cokernel
    let terms = if q <= base.floor { 0 } else { neumann_terms(q) };
    let base_norm = base.norm_estimate;
    let provenance = Provenance::NeumannCorrected { base: Box::new(base.provenance.clone()), terms };
    let mut inv = RightInverse {
        t: base.t.clone(),
        kind: Kind::Neumann { base: base.clone(), lin: lin.clone(), terms },
        n: lin.n(),
        norm_estimate: 0.0,
        probe_defect: 0.0,
        floor: base.floor,
        neumann_probe: Some(q),
        base_norm: Some(base_norm),
        provenance,
    };
    inv.norm_estimate = norm_probe(|w| inv.apply(w), probes, cfg);
    inv.probe_defect = defect_probe(lin, |w| inv.apply(w), probes, cfg);
    if inv.norm_estimate > 2.0 * base_norm {
        return Err(GlueError::NeumannBoundViolated { corrected: inv.norm_estimate, base: base_norm });
    }
    Ok(inv)
}

/// Re-invert near a new base point: `Q~ = base (new_lin o base)^{-1}` by a truncated Neumann series.
pub fn neumann_correct(base: &Arc<RightInverse>, new_lin: &LinearizedOperator, cfg: NormConfig) -> Result<RightInverse> {
    if !new_lin.domain().same_as(base.t.domain()) || new_lin.n() != base.n {
        return Err(GlueError::FieldMismatch("new linearization does not match the base inverse".into()));
    }
    let probes = lp_probes(new_lin.domain(), new_lin.n(), DEFAULT_PROBES, PROBE_SEED, cfg);
    let q = defect_probe(new_lin, |w| base.apply(w), &probes, cfg);
    if !(q < 0.5) {
        return Err(GlueError::NeumannPreconditionFailed { probe: q, context: None });
    }
    correct_with(base.clone(), new_lin, q, &probes, cfg)
}

fn dot(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Restarted GMRES for a real-linear operator on fields (inner product `Re <a, b>`).
/// Returns the solution and the final relative residual.
pub fn gmres(op: impl Fn(&Field) -> Field, b: &Field, restart: usize, max_iter: usize, rtol: f64) -> (Field, f64) {
    let bn = dot(b, b).sqrt();
    let mut x = Field::zeros(b.domain(), b.n());
    if bn == 0.0 {
        return (x, 0.0);
    }
    let mut done = 0;
    let mut rel = 1.0;
    while done < max_iter {
        let r = b - &op(&x);
        let beta = dot(&r, &r).sqrt();
        rel = beta / bn;
        if rel <= rtol {
            break;
        }
        let mut v = vec![&r * (1.0 / beta)];
        let mut hcol: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        for j in 0..restart.min(max_iter - done) {
            let mut w = op(&v[j]);
            let mut hj = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                hj[i] = dot(&w, vi);
                w.axpy(Complex64::new(-hj[i], 0.0), vi);
            }
            hj[j + 1] = dot(&w, &w).sqrt();
            for i in 0..j {
                let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
                hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
                hj[i] = t;
            }
            let d = hj[j].hypot(hj[j + 1]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (hj[j] / d, hj[j + 1] / d) };
            cs.push(c);
            sn.push(s);
            let next_norm = hj[j + 1];
            hj[j] = d;
            hj[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            hcol.push(hj);
            done += 1;
            rel = g[j + 1].abs() / bn;
            if rel <= rtol || next_norm == 0.0 {
                break;
            }
            v.push(&w * (1.0 / next_norm));
        }
        let m = hcol.len();
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|k| hcol[k][i] * y[k]).sum();
            y[i] = if hcol[i][i] == 0.0 { 0.0 } else { (g[i] - s) / hcol[i][i] };
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(Complex64::new(*yi, 0.0), &v[i]);
        }
        if rel <= rtol || m == 0 {
            break;
        }
    }
    let r = b - &op(&x);
    rel = rel.min(dot(&r, &r).sqrt() / bn);
    (x, rel)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Stop at `||F|| <= tol`, or as soon as the step behaves exactly as the linear model predicts
    /// (`||F(x_{k+1}) - (F_k - dF(Q F_k))|| <= 1e-8 ||F_k - dF(Q F_k)||`): the problem is
    /// linear and further frozen steps would only chase the inverse's discretization defect.
    /// A step that gains less than `STALL_RATIO` is rejected and ends the iteration.
    LinearRemainder,
    /// Stop at `||F|| <= tol`, or when a step gains less than 1% (that step is rejected).
    ToleranceOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonLimits {
    pub max_iter: usize,
    /// `None` means `1e-10 * area^{1/p}`.
    pub tol: Option<f64>,
    pub stop: StopRule,
    /// Re-linearize and Neumann-correct the inverse every `k` steps (off by default).
    pub refresh_every: Option<usize>,
}

impl Default for NewtonLimits {
    fn default() -> Self {
        NewtonLimits { max_iter: 50, tol: None, stop: StopRule::LinearRemainder, refresh_every: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    ConvergedUncertified,
    Diverged,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Certified => "certified",
            Verdict::ConvergedUncertified => "converged-uncertified",
            Verdict::Diverged => "diverged",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    LinearModel,
    Stagnation,
    MaxIter,
    Blowup,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonCertificate {
    pub rho: f64,
    pub lipschitz: f64,
    pub c: f64,
    pub threshold: f64,
    pub initial_residual: f64,
    pub residual_history: Vec<f64>,
    pub final_distance: f64,
    pub tol: f64,
    pub stop: StopReason,
    pub verdict: Verdict,
    pub provenance: String,
}

/// `min(rho / 4C, 1 / (8 C^2 L))`, the second term absent when `L = 0`.
pub fn threshold(rho: f64, c: f64, l: f64) -> f64 {
    let a = rho / (4.0 * c);
    if l > 0.0 {
        a.min(1.0 / (8.0 * c * c * l))
    } else {
        a
    }
}

pub const CERTIFICATE_HEADER: [&str; 9] =
    ["rho", "L", "C", "threshold", "initial_residual", "iterations", "final_residual", "final_distance", "verdict"];

impl NewtonCertificate {
    pub fn iterations(&self) -> usize {
        self.residual_history.len() - 1
    }
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history is never empty")
    }
    pub fn converged(&self) -> bool {
        self.verdict != Verdict::Diverged
    }
    /// Fixed-format CSV fields in `CERTIFICATE_HEADER` order.
    pub fn csv_row(&self) -> Vec<String> {
        let e = |v: f64| format!("{v:.12e}");
        vec![
            e(self.rho),
            e(self.lipschitz),
            e(self.c),
            e(self.threshold),
            e(self.initial_residual),
            self.iterations().to_string(),
            e(self.final_residual()),
            e(self.final_distance),
            self.verdict.to_string(),
        ]
    }
}

/// Radius of the Newton ball: the largest `W^{1,p}` radius whose sup-norm image (through the
/// probed embedding constant) stays inside the validity box, capped at 1.
pub fn ball_radius(j: &AlmostComplexStructure, x0: &Field, cfg: NormConfig) -> f64 {
    let n = x0.n();
    let margin = (0..x0.domain().len())
        .map(|k| j.validity().margin(&crate::acstruct::to_real(&x0.values()[k * n..(k + 1) * n])))
        .fold(f64::INFINITY, f64::min);
    if !margin.is_finite() {
        return 1.0;
    }
    let probes = w1p_probes(x0.domain(), n, 16, PROBE_SEED ^ 0xba11, cfg);
    let emb = probes.iter().map(|v| v.max_abs() / w1p_norm(v, cfg)).fold(0.0, f64::max);
    (margin.max(0.0) / emb).min(1.0)
}

fn with_iterate(e: GlueError, k: usize) -> GlueError {
    match e {
        GlueError::PointOutsideValidityBox { node, .. } => GlueError::PointOutsideValidityBox { node, iterate: Some(k) },
        other => other,
    }
}

/// Frozen-inverse Newton iteration `x_{k+1} = x_k - Q F(x_k)` with its certificate.
pub fn newton_solve(
    j: &AlmostComplexStructure,
    x0: &Field,
    q: &Arc<RightInverse>,
    cfg: NormConfig,
    limits: NewtonLimits,
) -> Result<(Field, NewtonCertificate)> {
    newton_with_constant(j, x0, q, cfg, limits, q.norm_estimate)
}

pub(crate) fn stall_ratio(rule: StopRule) -> f64 {
    match rule {
        StopRule::LinearRemainder => STALL_RATIO,
        StopRule::ToleranceOnly => 0.99,
    }
}

fn newton_with_constant(
    j: &AlmostComplexStructure,
    x0: &Field,
    q: &Arc<RightInverse>,
    cfg: NormConfig,
    limits: NewtonLimits,
    c: f64,
) -> Result<(Field, NewtonCertificate)> {
    if !x0.domain().same_as(q.t.domain()) || x0.n() != q.n {
        return Err(GlueError::FieldMismatch("initial point does not match the right inverse".into()));
    }
    let tol = limits.tol.unwrap_or(1e-10 * x0.domain().area().powf(1.0 / cfg.p));
    let rho = ball_radius(j, x0, cfg);
    let lip = if rho > 0.0 { lipschitz_probe(j, x0, rho, 8, PROBE_SEED ^ 0x11b, cfg)? } else { 0.0 };
    let thr = if rho > 0.0 { threshold(rho, c, lip) } else { 0.0 };
    let lin0 = linearize(j, x0)?;

    let mut x = x0.clone();
    let mut f = dbar_residual(j, &x)?;
    let r0 = lp_norm(&f, cfg);
    let mut history = vec![r0];
    let mut stop = StopReason::MaxIter;
    let mut inv = q.clone();
    // the cokernel part of the residual is out of reach of any grid inverse
    let tol_eff = tol.max(q.floor * r0);
    if r0 <= tol {
        stop = StopReason::Tolerance;
    } else {
        for k in 1..=limits.max_iter {
            if let Some(every) = limits.refresh_every {
                if k > 1 && (k - 1) % every == 0 {
                    inv = Arc::new(neumann_correct(q, &linearize(j, &x).map_err(|e| with_iterate(e, k))?, cfg)?);
                }
            }
            let step = inv.apply(&f);
            let pred = &f - &lin0.apply(&step);
            let xnew = &x - &step;
            let fnew = dbar_residual(j, &xnew).map_err(|e| with_iterate(e, k))?;
            let r = lp_norm(&fnew, cfg);
            let prev = *history.last().unwrap();
            if r > tol_eff && r >= stall_ratio(limits.stop) * prev && r < 1e3 * r0.max(prev) {
                // a stalled step is rejected
                stop = StopReason::Stagnation;
                break;
            }
            x = xnew;
            history.push(r);
            if !r.is_finite() || r > 1e3 * r0.max(prev) {
                stop = StopReason::Blowup;
                break;
            }
            if r <= tol_eff {
                stop = StopReason::Tolerance;
                break;
            }
            if limits.stop == StopRule::LinearRemainder && lp_norm(&(&fnew - &pred), cfg) <= 1e-8 * lp_norm(&pred, cfg) {
                stop = StopReason::LinearModel;
                break;
            }
            f = fnew;
        }
    }
    let final_distance = w1p_norm(&(&x - x0), cfg);
    // a stall at or below the input acceptance level is as holomorphic as the grid allows
    let hol = q.t.holomorphy_floor(cfg);
    let stalled_ok = stop == StopReason::Stagnation && *history.last().unwrap() <= hol;
    let converged = stalled_ok || matches!(stop, StopReason::Tolerance | StopReason::LinearModel);
    let verdict = verdict(converged, r0, thr, final_distance, c);
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
        verdict,
        provenance: q.provenance.to_string(),
    };
    Ok((x, cert))
}

/// Certified iff converged, `r0` below the threshold and the final distance inside `2 C r0`.
pub fn verdict(converged: bool, r0: f64, threshold: f64, final_distance: f64, c: f64) -> Verdict {
    if !converged {
        Verdict::Diverged
    } else if r0 < threshold && final_distance <= 2.0 * c * r0 {
        Verdict::Certified
    } else {
        Verdict::ConvergedUncertified
    }
}

/// Newton from an approximately holomorphic `phi`, with the certificate constant
/// `C = max(Q.norm_estimate, ||d phi||_{L^p})`.
pub fn holomorphic_approximation(
    j: &AlmostComplexStructure,
    phi: &Field,
    q: &Arc<RightInverse>,
    cfg: NormConfig,
    limits: NewtonLimits,
) -> Result<(Field, NewtonCertificate)> {
    let c = q.norm_estimate.max(lp_norm(&crate::calculus::d_z(phi), cfg));
    let (f, cert) = newton_with_constant(j, phi, q, cfg, limits, c)?;
    debug_assert!(cert.verdict != Verdict::Certified || cert.final_distance <= 2.0 * cert.c * cert.initial_residual);
    Ok((f, cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::d_zbar;
    use crate::grid::{rectangle_pair, unit_disc};

    fn j_eps(e: f64) -> AlmostComplexStructure {
        AlmostComplexStructure::j_eps(1, e, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap()
    }

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(threshold(1.0, 2.0, 1.0), 1.0 / 32.0);
        assert_eq!(threshold(1.0, 2.0, 0.0), 1.0 / 8.0);
    }

    #[test]
    fn neumann_term_count() {
        // q^{K+1}/(1-q) < 1e-3
        for q in [0.0, 0.013, 0.1, 0.25, 0.4, 0.49] {
            let k = neumann_terms(q);
            assert!(q.powi(k as i32 + 1) / (1.0 - q) < 1e-3);
            assert!(k == 0 || q.powi(k as i32) / (1.0 - q) >= 1e-3);
        }
        assert_eq!(neumann_terms(0.1), 3);
    }

    #[test]
    fn standard_gives_cauchy_green() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let t = Arc::new(CauchyOperator::new(&d));
        let q = build_right_inverse(&LinearizedOperator::standard(&d, 1), &t, cfg).unwrap();
        assert_eq!(q.provenance(), &Provenance::CauchyGreen);
        let w = Field::scalar(&d, |z| z * z);
        assert_eq!(q.apply(&w).values(), t.apply(&w).values());
        assert!(q.probe_defect() <= INVERSE_DEFECT_MAX);
    }

    #[test]
    fn gmres_solves_small_system() {
        let d = unit_disc(1.0 / 8.0).unwrap();
        let b = Field::scalar(&d, |z| z + 1.0);
        let a = Complex64::new(0.3, -0.2);
        // v -> 2v + a conj(v) is real-linear and invertible
        let (x, rel) = gmres(|v| &(v * 2.0) + &v.conj().scale(a), &b, 10, 50, 1e-13);
        assert!(rel < 1e-12);
        let back = &(&x * 2.0) + &x.conj().scale(a);
        assert!((&back - &b).max_abs() < 1e-11);
    }

    #[test]
    fn rank_deficient_mock_fails() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 8.0).unwrap();
        let len = d.len();
        let one = vec![Complex64::new(1.0, 0.0); len];
        let zero = vec![Complex64::new(0.0, 0.0); len];
        let lin = LinearizedOperator::from_coefficients(&d, 1, one, zero.clone(), zero).unwrap();
        let t = Arc::new(CauchyOperator::new(&d));
        match build_right_inverse(&lin, &t, cfg).unwrap_err() {
            GlueError::InverseConstructionFailed { neumann_probe, lsq_probe } => {
                assert!(neumann_probe >= 0.5 && lsq_probe > INVERSE_DEFECT_MAX, "{neumann_probe} {lsq_probe}")
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn j_eps_gives_neumann_with_bounded_norm() {
        let cfg = NormConfig::default();
        let (d, _) = rectangle_pair(1.0 / 16.0).unwrap();
        let phi = Field::scalar(&d, |z| z * 0.5);
        let lin = linearize(&j_eps(0.02), &phi).unwrap();
        let t = Arc::new(CauchyOperator::new(&d));
        let q = build_right_inverse(&lin, &t, cfg).unwrap();
        assert!(matches!(q.provenance(), Provenance::NeumannCorrected { .. }), "{q:?}");
        assert!(q.terms() <= 8);
        assert!(q.norm_estimate() <= 2.0 * q.base_norm().unwrap());
        // the defect cannot go below the cokernel floor of dbar_h
        assert!(q.probe_defect() <= q.neumann_probe().unwrap() && q.probe_defect() < 1e-3f64.max(q.floor()), "{q:?}");
    }

    #[test]
    fn neumann_correct_same_and_far() {
        let cfg = NormConfig::default();
        let (d, _) = rectangle_pair(1.0 / 16.0).unwrap();
        let j = j_eps(0.02);
        let phi = Field::scalar(&d, |z| z * 0.5);
        let lin = linearize(&j, &phi).unwrap();
        let t = Arc::new(CauchyOperator::new(&d));
        let q = Arc::new(build_right_inverse(&lin, &t, cfg).unwrap());
        let same = neumann_correct(&q, &lin, cfg).unwrap();
        let w = Field::scalar(&d, |z| (z * 0.3).exp());
        assert!((&same.apply(&w) - &q.apply(&w)).max_abs() <= 1e-3 * q.apply(&w).max_abs(), "{same:?}");
        let near = Field::scalar(&d, |z| z * 0.5 + z * z * 0.01);
        let c = neumann_correct(&q, &linearize(&j, &near).unwrap(), cfg).unwrap();
        assert!(c.probe_defect() < 1e-3f64.max(c.floor()) && c.norm_estimate() <= 2.0 * q.norm_estimate(), "{c:?}");
        let strong = AlmostComplexStructure::j_eps(1, 0.6, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
        let far = Field::scalar(&d, |z| z * 0.9);
        let probe = match neumann_correct(&q, &linearize(&strong, &far).unwrap(), cfg) {
            Err(GlueError::NeumannPreconditionFailed { probe, .. }) => probe,
            other => panic!("{other:?}"),
        };
        assert!(probe >= 0.5);
    }

    #[test]
    fn newton_at_solution_returns_input() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let j = AlmostComplexStructure::standard(1);
        let t = Arc::new(CauchyOperator::new(&d));
        let q = Arc::new(build_right_inverse(&LinearizedOperator::standard(&d, 1), &t, cfg).unwrap());
        let x0 = Field::scalar(&d, |z| z * z);
        let (x, cert) = newton_solve(&j, &x0, &q, cfg, NewtonLimits::default()).unwrap();
        assert_eq!(x.values(), x0.values());
        assert_eq!(cert.residual_history.len(), 1);
        assert_eq!(cert.verdict, Verdict::Certified);
    }

    #[test]
    fn integrable_newton_is_one_cauchy_green_step() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let j = AlmostComplexStructure::standard(1);
        let t = Arc::new(CauchyOperator::new(&d));
        let q = Arc::new(build_right_inverse(&LinearizedOperator::standard(&d, 1), &t, cfg).unwrap());
        let phi = Field::scalar(&d, |z| z * z + z.conj() * 0.01);
        let (x, cert) = holomorphic_approximation(&j, &phi, &q, cfg, NewtonLimits::default()).unwrap();
        assert_eq!(cert.iterations(), 1);
        let oracle = &phi - &t.apply(&d_zbar(&phi));
        assert!((&x - &oracle).max_abs() < 1e-12);
        assert_eq!(cert.verdict, Verdict::Certified);
        assert!(cert.final_distance <= 2.0 * cert.c * cert.initial_residual);
    }

    #[test]
    fn j_eps_newton_contracts_and_certifies() {
        let cfg = NormConfig::default();
        let (d, _) = rectangle_pair(1.0 / 16.0).unwrap();
        let j = j_eps(0.02);
        let phi = Field::scalar(&d, |z| z * 0.5 + z.conj() * 1e-3);
        let t = Arc::new(CauchyOperator::new(&d));
        let q = Arc::new(build_right_inverse(&linearize(&j, &phi).unwrap(), &t, cfg).unwrap());
        let (_, cert) = holomorphic_approximation(&j, &phi, &q, cfg, NewtonLimits::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::Certified, "{cert:?}");
        for w in cert.residual_history.windows(2) {
            assert!(w[1] <= 0.5 * w[0], "{:?}", cert.residual_history);
        }
        let (_, again) = holomorphic_approximation(&j, &phi, &q, cfg, NewtonLimits::default()).unwrap();
        assert_eq!(cert.csv_row(), again.csv_row());
    }
}
