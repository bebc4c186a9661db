//! Pairs of maps on the two domains and their pregluing.

use std::sync::Arc;

use crate::acstruct::{dbar_residual, to_real};
use crate::calculus::{lp_norm, w1p_norm, Field, NormConfig};
use crate::error::{GlueError, Result};
use crate::grid::{GoodPair, GridDomain};
use crate::transition::chart::ChartTransition;

/// `phi1` on Omega1 and `phi2` on Omega2 with `Psi(phi2) = phi1` on the overlap (up to the recorded defect).
#[derive(Clone, Debug)]
pub struct PairState {
    pub phi1: Field,
    pub phi2: Field,
    /// Max over overlap nodes of `|Psi(phi2) - phi1|`.
    pub compatibility_defect: f64,
}

/// Relative bound for membership in the discrete compatibility set.
pub const COMPATIBLE: f64 = 1e-9;

impl PairState {
    pub fn new(tr: &ChartTransition, pair: &GoodPair, phi1: Field, phi2: Field) -> Result<PairState> {
        check_sides(pair, &phi1, &phi2)?;
        let compatibility_defect = compatibility_defect(tr, pair, &phi1, &phi2)?;
        Ok(PairState { phi1, phi2, compatibility_defect })
    }

    /// `max(1, max |phi1| on the overlap)`.
    pub fn scale(&self, pair: &GoodPair) -> f64 {
        self.phi1.restrict(&pair.overlap).map(|f| f.max_abs()).unwrap_or(0.0).max(1.0)
    }

    pub fn is_compatible(&self, pair: &GoodPair) -> bool {
        self.compatibility_defect <= COMPATIBLE * self.scale(pair)
    }

    /// `F(phi1, phi2) = (F1(phi1), F2(phi2))`.
    pub fn residual(&self, tr: &ChartTransition) -> Result<(Field, Field)> {
        Ok((dbar_residual(tr.j1(), &self.phi1)?, dbar_residual(tr.j2(), &self.phi2)?))
    }
}

pub(crate) fn check_sides(pair: &GoodPair, f1: &Field, f2: &Field) -> Result<()> {
    if !f1.domain().same_as(&pair.omega1) || !f2.domain().same_as(&pair.omega2) {
        return Err(GlueError::FieldMismatch("pair fields must live on Omega1 and Omega2".into()));
    }
    if f1.n() != f2.n() {
        return Err(GlueError::FieldMismatch("pair fields have different component counts".into()));
    }
    Ok(())
}

pub fn compatibility_defect(tr: &ChartTransition, pair: &GoodPair, phi1: &Field, phi2: &Field) -> Result<f64> {
    let a = phi1.restrict(&pair.overlap)?;
    let b = tr.push(&phi2.restrict(&pair.overlap)?);
    Ok((&a - &b).max_abs())
}

/// `||a||_{L^p(Omega1)} + ||b||_{L^p(Omega2)}`.
pub fn pair_lp(v: &(Field, Field), cfg: NormConfig) -> f64 {
    lp_norm(&v.0, cfg) + lp_norm(&v.1, cfg)
}

/// `||a||_{W^{1,p}(Omega1)} + ||b||_{W^{1,p}(Omega2)}`.
pub fn pair_w1p(v: &(Field, Field), cfg: NormConfig) -> f64 {
    w1p_norm(&v.0, cfg) + w1p_norm(&v.1, cfg)
}

/// `phi2 = Psi^{-1}(phi1)` on the overlap, unchanged elsewhere.
pub fn reproject(tr: &ChartTransition, pair: &GoodPair, phi1: &Field, phi2: &mut Field) -> Result<()> {
    let back = tr.pull(&phi1.restrict(&pair.overlap)?);
    phi2.overwrite_from(&back);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PairPreglue {
    pub state: PairState,
    /// `||f1 - Psi(f2)||_{W^{1,p}(overlap)}`.
    pub delta: f64,
    /// `||F(phi1, phi2)||`, L^1 sum over the two domains.
    pub residual: f64,
    /// `residual / delta` (0 when delta = 0).
    pub c0: f64,
}

fn check_box(f: &Field, b: &crate::acstruct::ValidityBox) -> Result<()> {
    for k in 0..f.domain().len() {
        if !b.contains(&to_real(f.at(k))) {
            return Err(GlueError::ChartExit { node: k });
        }
    }
    Ok(())
}

/// `phi1 = chi f1 + (1 - chi) Psi(f2)` on Omega1, `phi2 = Psi^{-1}(phi1)` on the overlap and `f2` elsewhere.
pub fn preglue_pair(tr: &ChartTransition, pair: &GoodPair, f1: &Field, f2: &Field, cfg: NormConfig) -> Result<PairPreglue> {
    check_sides(pair, f1, f2)?;
    if f1.n() != tr.n() {
        return Err(GlueError::FieldMismatch(format!("fields have {} components, chart n = {}", f1.n(), tr.n())));
    }
    let o: &Arc<GridDomain> = &pair.overlap;
    check_box(&f2.restrict(o)?, tr.j2().validity())?;
    let f1o = f1.restrict(o)?;
    let pushed = tr.push(&f2.restrict(o)?);
    let delta = w1p_norm(&(&f1o - &pushed), cfg);
    let chi = pair.chi.on(o);
    let mut blend = f1o.clone();
    let n = f1.n();
    for k in 0..o.len() {
        for c in 0..n {
            let i = k * n + c;
            blend.values_mut()[i] = chi[k] * f1o.values()[i] + (1.0 - chi[k]) * pushed.values()[i];
        }
    }
    let mut phi1 = f1.clone();
    phi1.overwrite_from(&blend);
    check_box(&phi1, tr.j1().validity())?;
    let mut phi2 = f2.clone();
    reproject(tr, pair, &phi1, &mut phi2)?;
    check_box(&phi2, tr.j2().validity())?;
    let state = PairState::new(tr, pair, phi1, phi2)?;
    let residual = pair_lp(&state.residual(tr)?, cfg);
    Ok(PairPreglue { state, delta, residual, c0: if delta > 0.0 { residual / delta } else { 0.0 } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acstruct::AlmostComplexStructure;
    use crate::cousin::preglue;
    use crate::grid::{build_cutoffs, slab_pair};
    use crate::transition::chart::ChartMap;
    use num_complex::Complex64;

    fn setup() -> GoodPair {
        let (a, b) = slab_pair(1.0 / 16.0).unwrap();
        build_cutoffs(&a, &b).unwrap()
    }

    #[test]
    fn identity_chart_reduces_to_one_chart_pregluing() {
        let cfg = NormConfig::default();
        let p = setup();
        let j = AlmostComplexStructure::j_eps(1, 0.05, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
        let tr = ChartTransition::identity(j.clone()).unwrap();
        let f1 = Field::scalar(&p.omega1, |z| z * z * 0.5);
        let f2 = Field::scalar(&p.omega2, |z| z * z * 0.5 + 0.01);
        let pre = preglue_pair(&tr, &p, &f1, &f2, cfg).unwrap();
        let one = preglue(&p, &j, &f1, &f2, cfg).unwrap();
        assert!((&pre.state.phi1 - &one.phi.restrict(&p.omega1).unwrap()).max_abs() < 1e-15);
        assert!((&pre.state.phi2 - &one.phi.restrict(&p.omega2).unwrap()).max_abs() < 1e-15);
        assert!((pre.delta - one.delta).abs() < 1e-12 * one.delta);
        assert_eq!(pre.state.compatibility_defect, 0.0);
    }

    #[test]
    fn compatible_inputs_are_left_alone() {
        let cfg = NormConfig::default();
        let p = setup();
        let tr = ChartTransition::fitted(ChartMap::rotation(1, 0.3, Complex64::new(0.1, 0.0)), AlmostComplexStructure::standard(1)).unwrap();
        let f2 = Field::scalar(&p.omega2, |z| z * 0.7 + 0.2);
        let f1 = tr.push(&Field::scalar(&p.omega1, |z| z * 0.7 + 0.2));
        let pre = preglue_pair(&tr, &p, &f1, &f2, cfg).unwrap();
        assert!(pre.delta < 1e-13);
        assert!((&pre.state.phi1 - &f1).max_abs() < 1e-14);
        assert!((&pre.state.phi2 - &f2).max_abs() < 1e-14);
        assert!(pre.state.is_compatible(&p));
    }

    #[test]
    fn leaving_the_chart_is_reported() {
        let cfg = NormConfig::default();
        let p = setup();
        let j = AlmostComplexStructure::j_eps(1, 0.05, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
        let tr = ChartTransition::identity(j).unwrap();
        let far = Field::scalar(&p.omega2, |_| Complex64::new(1e3, 0.0));
        let f1 = Field::scalar(&p.omega1, |z| z);
        assert!(matches!(preglue_pair(&tr, &p, &f1, &far, cfg), Err(GlueError::ChartExit { .. })));
        assert!(matches!(preglue_pair(&tr, &p, &far, &f1, cfg), Err(GlueError::FieldMismatch(_))));
    }
}
