//! Almost complex structures on `R^{2n}`, the complex matrix `A`, the operator
//! `F(f) = dbar f + A(f) conj(d f)` and its linearization.
//!
//! Coordinates on `R^{2n}` are ordered `(x_1..x_n, y_1..y_n)` with `z_j = x_j + i y_j`, so
//! the standard structure is `J_st = [[0, -I], [I, 0]]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::{d_z, d_zbar, lp_norm, Field, NormConfig};
use crate::error::{GlueError, Result};
use crate::probe::w1p_probes;

/// Finite-difference step for partials of `A` when no analytic `dJ` is available.
pub const H_J: f64 = 1e-5;

/// The user extension point: any smooth field of `2n x 2n` real matrices with `J^2 = -I`.
pub trait StructureField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval_j(&self, x: &[f64]) -> DMatrix<f64>;
    /// Partial derivative of `J` with respect to real coordinate `k`, when known in closed form.
    fn eval_dj(&self, _x: &[f64], _k: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn is_standard(&self) -> bool {
        false
    }
    fn name(&self) -> String;
}

pub fn j_st(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

pub fn to_real(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|v| v.re).chain(z.iter().map(|v| v.im)).collect()
}

pub fn from_real(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|j| Complex64::new(x[j], x[n + j])).collect()
}

/// Axis-aligned box in `R^{2n}` on which the structure was checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ValidityBox {
    pub fn cube(n: usize, half: f64) -> ValidityBox {
        ValidityBox { lo: vec![-half; 2 * n], hi: vec![half; 2 * n] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Distance to the nearest face (negative outside).
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(&v, (&a, &b))| (v - a).min(b - v)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug)]
pub struct Standard {
    pub n: usize,
}

impl StructureField for Standard {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_j(&self, _x: &[f64]) -> DMatrix<f64> {
        j_st(self.n)
    }
    fn eval_dj(&self, _x: &[f64], _k: usize) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2 * self.n, 2 * self.n))
    }
    fn is_standard(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "standard".into()
    }
}

/// `J = (I + eps S) J_st (I + eps S)^{-1}` with `S = b(z) S0`, `b` a compact bump of the given
/// centre and width, and `S0 = [[I, I/2], [I/2, -I]]`.
#[derive(Debug)]
pub struct JEps {
    pub n: usize,
    pub eps: f64,
    pub center: Vec<Complex64>,
    pub width: f64,
    s0: DMatrix<f64>,
}

impl JEps {
    pub fn new(n: usize, eps: f64, center: Vec<Complex64>, width: f64) -> JEps {
        let mut s0 = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            s0[(i, i)] = 1.0;
            s0[(n + i, n + i)] = -1.0;
            s0[(i, n + i)] = 0.5;
            s0[(n + i, i)] = 0.5;
        }
        JEps { n, eps, center, width, s0 }
    }

    fn bump(&self, x: &[f64]) -> (f64, f64) {
        let c = to_real(&self.center);
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (self.width * self.width);
        if r2 >= 1.0 {
            (0.0, r2)
        } else {
            ((1.0 - 1.0 / (1.0 - r2)).exp(), r2)
        }
    }
}

impl StructureField for JEps {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_j(&self, x: &[f64]) -> DMatrix<f64> {
        let (b, _) = self.bump(x);
        let js = j_st(self.n);
        if b == 0.0 || self.eps == 0.0 {
            return js;
        }
        let p = DMatrix::identity(2 * self.n, 2 * self.n) + &self.s0 * (self.eps * b);
        let pinv = p.clone().try_inverse().expect("I + eps S is invertible for small eps");
        p * js * pinv
    }
    fn eval_dj(&self, x: &[f64], k: usize) -> Option<DMatrix<f64>> {
        let (b, r2) = self.bump(x);
        let m = 2 * self.n;
        if b == 0.0 || self.eps == 0.0 {
            return Some(DMatrix::zeros(m, m));
        }
        let c = to_real(&self.center);
        let db = b * (-1.0 / (1.0 - r2).powi(2)) * 2.0 * (x[k] - c[k]) / (self.width * self.width);
        let js = j_st(self.n);
        let p = DMatrix::identity(m, m) + &self.s0 * (self.eps * b);
        let pinv = p.clone().try_inverse()?;
        let j = &p * &js * &pinv;
        let dp = &self.s0 * (self.eps * db);
        Some((&dp * &js - &j * &dp) * pinv)
    }
    fn name(&self) -> String {
        format!("j_eps(eps={})", self.eps)
    }
}

/// Constant structure `[[0, -lambda], [1/lambda, 0]]` on `R^2`; `lambda = 1` is `J_st`.
#[derive(Debug)]
pub struct ConstantLambda {
    pub lambda: f64,
}

impl StructureField for ConstantLambda {
    fn dim(&self) -> usize {
        1
    }
    fn eval_j(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -self.lambda, 1.0 / self.lambda, 0.0])
    }
    fn eval_dj(&self, _x: &[f64], _k: usize) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }
    fn is_standard(&self) -> bool {
        self.lambda == 1.0
    }
    fn name(&self) -> String {
        format!("lambda({})", self.lambda)
    }
}

/// A structure field together with the box on which it was verified.
#[derive(Clone)]
pub struct AlmostComplexStructure {
    field: Arc<dyn StructureField>,
    validity: ValidityBox,
}

impl fmt::Debug for AlmostComplexStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlmostComplexStructure").field("field", &self.field.name()).field("validity", &self.validity).finish()
    }
}

const SAMPLES_PER_AXIS: usize = 16;
const MAX_SAMPLES: usize = 1 << 16;

impl AlmostComplexStructure {
    /// Wrap a structure field, checking `J^2 = -I`, `det(J + J_st) != 0` and the complex
    /// linearity of `A` on a 16-per-axis sample grid of the box (a fixed pseudo-random subset
    /// of 65536 samples when the full grid is larger).
    pub fn new(field: Arc<dyn StructureField>, validity: ValidityBox) -> Result<Self> {
        let m = 2 * field.dim();
        if validity.lo.len() != m || validity.hi.len() != m {
            return Err(GlueError::Precondition(format!("validity box must have {m} coordinates")));
        }
        let s = AlmostComplexStructure { field, validity };
        let axis = |d: usize, t: usize| -> f64 {
            let (a, b) = (s.validity.lo[d].max(-1e3), s.validity.hi[d].min(1e3));
            a + (b - a) * t as f64 / (SAMPLES_PER_AXIS - 1) as f64
        };
        let total = (SAMPLES_PER_AXIS as f64).powi(m as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(0xacacac);
        let count = if total <= MAX_SAMPLES as f64 { total as usize } else { MAX_SAMPLES };
        let id = DMatrix::<f64>::identity(m, m);
        for idx in 0..count {
            let x: Vec<f64> = if total <= MAX_SAMPLES as f64 {
                let mut r = idx;
                (0..m)
                    .map(|d| {
                        let t = r % SAMPLES_PER_AXIS;
                        r /= SAMPLES_PER_AXIS;
                        axis(d, t)
                    })
                    .collect()
            } else {
                (0..m).map(|d| axis(d, rng.gen_range(0..SAMPLES_PER_AXIS))).collect()
            };
            let j = s.field.eval_j(&x);
            let sq = &j * &j + &id;
            if sq.amax() > 1e-10 {
                return Err(GlueError::StructureInvalid { point: x, what: format!("|J^2 + I| = {:.2e}", sq.amax()) });
            }
            s.a_real(&x).map_err(|e| match e {
                GlueError::SingularMatrix { det } => {
                    GlueError::StructureInvalid { point: x.clone(), what: format!("det(J + J_st) = {det:.2e}") }
                }
                other => other,
            })?;
        }
        Ok(s)
    }

    pub fn standard(n: usize) -> Self {
        AlmostComplexStructure {
            field: Arc::new(Standard { n }),
            validity: ValidityBox { lo: vec![f64::NEG_INFINITY; 2 * n], hi: vec![f64::INFINITY; 2 * n] },
        }
    }

    /// The bump family on a cube of half-width 10.
    pub fn j_eps(n: usize, eps: f64, center: Vec<Complex64>, width: f64) -> Result<Self> {
        if center.len() != n || !(width > 0.0) {
            return Err(GlueError::Precondition("j_eps needs n centre coordinates and a positive width".into()));
        }
        Self::new(Arc::new(JEps::new(n, eps, center, width)), ValidityBox::cube(n, 10.0))
    }

    pub fn constant_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(GlueError::Precondition("lambda must be positive".into()));
        }
        Self::new(Arc::new(ConstantLambda { lambda }), ValidityBox::cube(1, 10.0))
    }

    pub fn n(&self) -> usize {
        self.field.dim()
    }
    pub fn is_standard(&self) -> bool {
        self.field.is_standard()
    }
    pub fn validity(&self) -> &ValidityBox {
        &self.validity
    }
    pub fn field(&self) -> &Arc<dyn StructureField> {
        &self.field
    }
    pub fn name(&self) -> String {
        self.field.name()
    }
    pub fn eval_j(&self, x: &[f64]) -> DMatrix<f64> {
        self.field.eval_j(x)
    }

    /// `M = (J + J_st)^{-1} (J - J_st)` and `(J + J_st)^{-1}`.
    fn m_matrix(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let j = self.field.eval_j(x);
        let js = j_st(n);
        let sum = &j + &js;
        let det = sum.determinant();
        if det.abs() <= 1e-8 {
            return Err(GlueError::SingularMatrix { det });
        }
        let inv = sum.try_inverse().ok_or(GlueError::SingularMatrix { det })?;
        Ok((&inv * (j - js), inv))
    }

    fn a_real(&self, x: &[f64]) -> Result<DMatrix<Complex64>> {
        if self.is_standard() {
            let n = self.n();
            return Ok(DMatrix::zeros(n, n));
        }
        let (m, _) = self.m_matrix(x)?;
        extract_a(&m, x)
    }

    /// Partials of `A` along every real coordinate.
    fn a_partials(&self, x: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
        let n = self.n();
        let mut out = Vec::with_capacity(2 * n);
        if self.field.eval_dj(x, 0).is_some() {
            let (m, inv) = self.m_matrix(x)?;
            let id = DMatrix::<f64>::identity(2 * n, 2 * n);
            let right = &id - &m;
            for k in 0..2 * n {
                let dj = self.field.eval_dj(x, k).expect("analytic dJ for every coordinate");
                let dm = &inv * dj * &right;
                out.push(DMatrix::from_fn(n, n, |r, c| Complex64::new(dm[(r, c)], dm[(r, n + c)])));
            }
        } else {
            for k in 0..2 * n {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += H_J;
                xm[k] -= H_J;
                let d = (self.a_real(&xp)? - self.a_real(&xm)?) / Complex64::new(2.0 * H_J, 0.0);
                out.push(d);
            }
        }
        Ok(out)
    }
}

/// Read `A` off `M`: the real map `v -> M conj(v)` has blocks `[[P, -R], [R, P]]` with
/// `A = P + iR`; the remaining blocks must agree to 1e-9.
fn extract_a(m: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<Complex64>> {
    let n = m.nrows() / 2;
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            worst = worst.max((m[(r, n + c)] - m[(n + r, c)]).abs());
            worst = worst.max((m[(n + r, n + c)] + m[(r, c)]).abs());
        }
    }
    if worst > 1e-9 {
        return Err(GlueError::StructureInvalid { point: x.to_vec(), what: format!("A is not complex linear ({worst:.2e})") });
    }
    Ok(DMatrix::from_fn(n, n, |r, c| Complex64::new(m[(r, c)], m[(r, n + c)])))
}

pub fn complex_matrix_a(j: &AlmostComplexStructure, z: &[Complex64]) -> Result<DMatrix<Complex64>> {
    if z.len() != j.n() {
        return Err(GlueError::Precondition(format!("point has {} coordinates, structure has n = {}", z.len(), j.n())));
    }
    let x = to_real(z);
    if !j.validity.contains(&x) {
        return Err(GlueError::PointOutsideValidityBox { node: 0, iterate: None });
    }
    j.a_real(&x)
}

fn check_box(j: &AlmostComplexStructure, f: &Field) -> Result<()> {
    let n = f.n();
    for k in 0..f.domain().len() {
        if !j.validity.contains(&to_real(&f.values()[k * n..(k + 1) * n])) {
            return Err(GlueError::PointOutsideValidityBox { node: k, iterate: None });
        }
    }
    Ok(())
}

fn check_dims(j: &AlmostComplexStructure, f: &Field) -> Result<()> {
    if f.n() != j.n() {
        return Err(GlueError::FieldMismatch(format!("field has {} components, structure n = {}", f.n(), j.n())));
    }
    Ok(())
}

/// `F(f) = dbar f + A(f) conj(d f)` at every node.
pub fn dbar_residual(j: &AlmostComplexStructure, f: &Field) -> Result<Field> {
    check_dims(j, f)?;
    check_box(j, f)?;
    let mut out = d_zbar(f);
    if j.is_standard() {
        return Ok(out);
    }
    let dz = d_z(f);
    let n = f.n();
    for k in 0..f.domain().len() {
        let a = j.a_real(&to_real(f.at(k)))?;
        let g = dz.at(k);
        let o = out.at_mut(k);
        for r in 0..n {
            for c in 0..n {
                o[r] += a[(r, c)] * g[c].conj();
            }
        }
    }
    Ok(out)
}

/// `A(at) conj(v)` at every node.
pub fn a_conj(j: &AlmostComplexStructure, at: &Field, v: &Field) -> Result<Field> {
    check_dims(j, at)?;
    at.compatible(v)?;
    check_box(j, at)?;
    let n = at.n();
    let mut out = Field::zeros(at.domain(), n);
    if j.is_standard() {
        return Ok(out);
    }
    for k in 0..at.domain().len() {
        let a = j.a_real(&to_real(at.at(k)))?;
        let g = v.at(k);
        let o = out.at_mut(k);
        for r in 0..n {
            for c in 0..n {
                o[r] += a[(r, c)] * g[c].conj();
            }
        }
    }
    Ok(out)
}

/// `V -> dbar V + A conj(d V) + B1 V + B2 conj(V)` with per-node `n x n` coefficients.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    domain: Arc<crate::grid::GridDomain>,
    n: usize,
    a: Vec<Complex64>,
    b1: Vec<Complex64>,
    b2: Vec<Complex64>,
    standard: bool,
}

impl LinearizedOperator {
    pub fn standard(domain: &Arc<crate::grid::GridDomain>, n: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n * n * domain.len()];
        LinearizedOperator { domain: domain.clone(), n, a: z.clone(), b1: z.clone(), b2: z, standard: true }
    }

    /// Coefficients row-major per node, `n*n` entries each.
    pub fn from_coefficients(
        domain: &Arc<crate::grid::GridDomain>,
        n: usize,
        a: Vec<Complex64>,
        b1: Vec<Complex64>,
        b2: Vec<Complex64>,
    ) -> Result<Self> {
        let len = n * n * domain.len();
        if a.len() != len || b1.len() != len || b2.len() != len {
            return Err(GlueError::FieldMismatch("coefficient arrays do not match the domain".into()));
        }
        if a.iter().chain(&b1).chain(&b2).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(GlueError::Precondition("non-finite coefficient".into()));
        }
        let standard = a.iter().chain(&b1).chain(&b2).all(|v| *v == Complex64::new(0.0, 0.0));
        Ok(LinearizedOperator { domain: domain.clone(), n, a, b1, b2, standard })
    }

    pub fn domain(&self) -> &Arc<crate::grid::GridDomain> {
        &self.domain
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn is_standard(&self) -> bool {
        self.standard
    }
    pub fn a(&self) -> &[Complex64] {
        &self.a
    }
    pub fn b1(&self) -> &[Complex64] {
        &self.b1
    }
    pub fn b2(&self) -> &[Complex64] {
        &self.b2
    }

    /// The same operator with `A` dropped (the zeroth-order part only).
    pub fn without_a(&self) -> Self {
        let mut out = self.clone();
        out.a.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        out.standard = out.b1.iter().chain(&out.b2).all(|v| *v == Complex64::new(0.0, 0.0));
        out
    }

    /// `B1 V + B2 conj(V)`.
    pub fn zeroth_order(&self, v: &Field) -> Field {
        let n = self.n;
        let mut out = Field::zeros(&self.domain, n);
        for k in 0..self.domain.len() {
            let vk = v.at(k);
            let base = k * n * n;
            let o = out.at_mut(k);
            for r in 0..n {
                for c in 0..n {
                    o[r] += self.b1[base + r * n + c] * vk[c] + self.b2[base + r * n + c] * vk[c].conj();
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &Field) -> Field {
        let mut out = d_zbar(v);
        if self.standard {
            return out;
        }
        let dz = d_z(v);
        let n = self.n;
        for k in 0..self.domain.len() {
            let base = k * n * n;
            let (vk, gk) = (v.at(k), dz.at(k));
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for r in 0..n {
                for c in 0..n {
                    let e = base + r * n + c;
                    acc[r] += self.a[e] * gk[c].conj() + self.b1[e] * vk[c] + self.b2[e] * vk[c].conj();
                }
            }
            for (o, a) in out.at_mut(k).iter_mut().zip(acc) {
                *o += a;
            }
        }
        out
    }
}

/// Linearization of `F` at `phi`: `B1[:, j] = dA/dz_j conj(d phi)`, `B2[:, j] = dA/dzbar_j conj(d phi)`.
pub fn linearize(j: &AlmostComplexStructure, phi: &Field) -> Result<LinearizedOperator> {
    check_dims(j, phi)?;
    check_box(j, phi)?;
    let n = phi.n();
    let domain = phi.domain();
    if j.is_standard() {
        return Ok(LinearizedOperator::standard(domain, n));
    }
    let dz = d_z(phi);
    let len = n * n * domain.len();
    let (mut a, mut b1, mut b2) = (vec![Complex64::new(0.0, 0.0); len], vec![Complex64::new(0.0, 0.0); len], vec![Complex64::new(0.0, 0.0); len]);
    let half = Complex64::new(0.5, 0.0);
    let ihalf = Complex64::new(0.0, 0.5);
    for k in 0..domain.len() {
        let x = to_real(phi.at(k));
        let ak = j.a_real(&x)?;
        let parts = j.a_partials(&x)?;
        let cg: Vec<Complex64> = dz.at(k).iter().map(|v| v.conj()).collect();
        let base = k * n * n;
        for r in 0..n {
            for c in 0..n {
                a[base + r * n + c] = ak[(r, c)];
            }
        }
        for jj in 0..n {
            let (dx, dy) = (&parts[jj], &parts[n + jj]);
            for r in 0..n {
                let mut s1 = Complex64::new(0.0, 0.0);
                let mut s2 = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    let dzj = half * dx[(r, c)] - ihalf * dy[(r, c)];
                    let dzbj = half * dx[(r, c)] + ihalf * dy[(r, c)];
                    s1 += dzj * cg[c];
                    s2 += dzbj * cg[c];
                }
                b1[base + r * n + jj] = s1;
                b2[base + r * n + jj] = s2;
            }
        }
    }
    Ok(LinearizedOperator { domain: domain.clone(), n, a, b1, b2, standard: false })
}

/// Empirical Lipschitz constant of `phi -> d_phi F` at radius `rho / 2`:
/// max over probe pairs of `||(d_{phi+U} F - d_phi F) V||_{L^p} / (||U|| ||V||)` in `W^{1,p}`.
pub fn lipschitz_probe(j: &AlmostComplexStructure, phi: &Field, rho: f64, trials: usize, seed: u64, cfg: NormConfig) -> Result<f64> {
    if trials == 0 || !(rho > 0.0) {
        return Err(GlueError::Precondition("lipschitz_probe needs trials >= 1 and rho > 0".into()));
    }
    check_dims(j, phi)?;
    check_box(j, phi)?;
    if j.is_standard() {
        return Ok(0.0);
    }
    let base = linearize(j, phi)?;
    let us = w1p_probes(phi.domain(), phi.n(), trials, seed, cfg);
    let vs = w1p_probes(phi.domain(), phi.n(), trials, seed.wrapping_add(1), cfg);
    let s = 0.5 * rho;
    let mut best: f64 = 0.0;
    for (u, v) in us.iter().zip(&vs) {
        let mut moved = phi.clone();
        moved.axpy(Complex64::new(s, 0.0), u);
        let lin = linearize(j, &moved)?;
        let diff = &lin.apply(v) - &base.apply(v);
        best = best.max(lp_norm(&diff, cfg) / s);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::unit_disc;

    fn lambda_oracle(l: f64) -> Complex64 {
        // M = (J + J_st)^{-1}(J - J_st) for J = [[0, -l], [1/l, 0]] by hand, 2x2
        let (a, b, c, d) = (0.0, -l - 1.0, 1.0 / l + 1.0, 0.0);
        let det = a * d - b * c;
        let inv = [d / det, -b / det, -c / det, a / det];
        let (e, f, g, h) = (0.0, -l + 1.0, 1.0 / l - 1.0, 0.0);
        let m = [inv[0] * e + inv[1] * g, inv[0] * f + inv[1] * h, inv[2] * e + inv[3] * g, inv[2] * f + inv[3] * h];
        // v -> M conj(v): real part coefficient m00, imaginary from m01
        Complex64::new(m[0], m[1])
    }

    #[test]
    fn standard_gives_zero() {
        let j = AlmostComplexStructure::standard(2);
        let a = complex_matrix_a(&j, &[Complex64::new(0.3, 1.0), Complex64::new(-2.0, 0.1)]).unwrap();
        assert!(a.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn lambda_family_matches_oracle() {
        let j = AlmostComplexStructure::constant_lambda(1.2).unwrap();
        let a = complex_matrix_a(&j, &[Complex64::new(0.1, 0.2)]).unwrap();
        assert!((a[(0, 0)] - lambda_oracle(1.2)).norm() < 1e-12);
        assert!((a[(0, 0)] - Complex64::new(-1.0 / 11.0, 0.0)).norm() < 1e-12);
        let one = AlmostComplexStructure::constant_lambda(1.0).unwrap();
        assert_eq!(complex_matrix_a(&one, &[Complex64::new(0.1, 0.2)]).unwrap()[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn a_vanishes_iff_standard() {
        let j = AlmostComplexStructure::j_eps(1, 0.05, vec![Complex64::new(0.0, 0.0)], 1.0).unwrap();
        let inside = complex_matrix_a(&j, &[Complex64::new(0.2, 0.1)]).unwrap();
        assert!(inside[(0, 0)].norm() > 1e-3);
        let outside = complex_matrix_a(&j, &[Complex64::new(2.0, 0.0)]).unwrap();
        assert_eq!(outside[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn singular_structure_rejected() {
        // -J_st makes J + J_st vanish
        let bad = ConstantLambda { lambda: -1.0 };
        let err = AlmostComplexStructure::new(Arc::new(bad), ValidityBox::cube(1, 1.0)).unwrap_err();
        assert!(matches!(err, GlueError::StructureInvalid { .. }));
    }

    #[test]
    fn residual_examples() {
        let d = unit_disc(1.0 / 16.0).unwrap();
        let js = AlmostComplexStructure::standard(1);
        let sq = dbar_residual(&js, &Field::scalar(&d, |z| z * z)).unwrap();
        assert!(sq.max_abs() < 1e-12);
        let cj = dbar_residual(&js, &Field::scalar(&d, |z| z.conj())).unwrap();
        assert!(cj.values().iter().all(|v| (v - 1.0).norm() < 1e-12));
        let f = Field::scalar(&d, |z| z * z + z.conj() * 0.3);
        assert_eq!(dbar_residual(&js, &f).unwrap().values(), d_zbar(&f).values());
    }

    #[test]
    fn residual_scales_linearly_in_eps() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let f = Field::scalar(&d, |z| z * 0.8 + z * z * 0.2);
        let r: Vec<f64> = [1e-3, 1e-2, 1e-1]
            .iter()
            .map(|&e| {
                let j = AlmostComplexStructure::j_eps(1, e, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
                lp_norm(&dbar_residual(&j, &f).unwrap(), cfg)
            })
            .collect();
        let slope = (r[2] / r[0]).log10() / 2.0;
        assert!((slope - 1.0).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn box_exit_reports_node() {
        let d = unit_disc(1.0 / 8.0).unwrap();
        let j = AlmostComplexStructure::j_eps(1, 0.05, vec![Complex64::new(0.0, 0.0)], 1.0).unwrap();
        let f = Field::scalar(&d, |z| if z.re > 0.5 { Complex64::new(50.0, 0.0) } else { z });
        assert!(matches!(dbar_residual(&j, &f).unwrap_err(), GlueError::PointOutsideValidityBox { .. }));
    }

    #[test]
    fn linearization_matches_directional_derivative() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let j = AlmostComplexStructure::j_eps(1, 0.2, vec![Complex64::new(0.1, 0.0)], 1.5).unwrap();
        let phi = Field::scalar(&d, |z| z * 0.9 + z * z * 0.3);
        let v = Field::scalar(&d, |z| (z * 0.7).exp() + z.conj() * Complex64::new(0.0, 0.4));
        let lin = linearize(&j, &phi).unwrap();
        let dv = lin.apply(&v);
        let f0 = dbar_residual(&j, &phi).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&t| {
                let mut p = phi.clone();
                p.axpy(Complex64::new(t, 0.0), &v);
                let fd = &(&dbar_residual(&j, &p).unwrap() - &f0) * (1.0 / t);
                lp_norm(&(&fd - &dv), cfg)
            })
            .collect();
        assert!(errs[0] / errs[1] > 8.0 && errs[1] / errs[2] > 8.0, "{errs:?}");
    }

    #[test]
    fn analytic_and_finite_difference_partials_agree() {
        #[derive(Debug)]
        struct NoDerivative(JEps);
        impl StructureField for NoDerivative {
            fn dim(&self) -> usize {
                1
            }
            fn eval_j(&self, x: &[f64]) -> DMatrix<f64> {
                self.0.eval_j(x)
            }
            fn name(&self) -> String {
                "fd".into()
            }
        }
        let d = unit_disc(1.0 / 8.0).unwrap();
        let analytic = AlmostComplexStructure::j_eps(1, 0.1, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
        let fd = AlmostComplexStructure::new(
            Arc::new(NoDerivative(JEps::new(1, 0.1, vec![Complex64::new(0.0, 0.0)], 1.5))),
            ValidityBox::cube(1, 10.0),
        )
        .unwrap();
        let phi = Field::scalar(&d, |z| z * 0.9);
        let (la, lf) = (linearize(&analytic, &phi).unwrap(), linearize(&fd, &phi).unwrap());
        for (x, y) in la.b1().iter().zip(lf.b1()).chain(la.b2().iter().zip(lf.b2())) {
            assert!((x - y).norm() < 1e-8);
        }
    }

    #[test]
    fn conjugation_structure_at_standard() {
        let d = unit_disc(1.0 / 8.0).unwrap();
        let lin = linearize(&AlmostComplexStructure::standard(1), &Field::scalar(&d, |z| z)).unwrap();
        let v = Field::scalar(&d, |z| z * z.conj() + z);
        let i = Complex64::new(0.0, 1.0);
        assert!((&lin.apply(&v.scale(i)) - &lin.apply(&v).scale(i)).max_abs() == 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let cfg = NormConfig::default();
        let d = unit_disc(1.0 / 16.0).unwrap();
        let phi = Field::scalar(&d, |z| z * 0.8);
        assert_eq!(lipschitz_probe(&AlmostComplexStructure::standard(1), &phi, 1.0, 4, 1, cfg).unwrap(), 0.0);
        let l = |e: f64, seed: u64| {
            let j = AlmostComplexStructure::j_eps(1, e, vec![Complex64::new(0.0, 0.0)], 1.5).unwrap();
            lipschitz_probe(&j, &phi, 0.5, 6, seed, cfg).unwrap()
        };
        let (a, b) = (l(0.05, 1), l(0.05, 9));
        assert!(a > 0.0 && (a / b - 1.0).abs() < 0.5, "{a} {b}");
        let c = l(0.1, 1);
        assert!((c / a - 2.0).abs() < 0.3, "{a} {c}");
    }
}
