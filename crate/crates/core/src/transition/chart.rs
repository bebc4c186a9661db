//! Chart transitions `Psi: U2 -> U1` and the structure `J2 = Psi^* J1`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acstruct::{from_real, j_st, to_real, AlmostComplexStructure, StructureField, ValidityBox};
use crate::calculus::Field;
use crate::error::{GlueError, Result};

/// Built-in transition maps, in real coordinates `(x_1..x_n, y_1..y_n)`.
#[derive(Clone, Debug)]
pub enum ChartMap {
    Identity { n: usize },
    /// `x -> M x + b`.
    Affine { m: DMatrix<f64>, b: Vec<f64>, m_inv: DMatrix<f64> },
    /// `(z1, z2) -> (z1, z2 + c z1^2)`, n = 2.
    Shear { c: f64 },
}

impl ChartMap {
    pub fn affine(m: DMatrix<f64>, b: Vec<f64>) -> Result<ChartMap> {
        if !m.is_square() || m.nrows() % 2 != 0 || b.len() != m.nrows() {
            return Err(GlueError::ChartInvalid("affine map needs a square 2n x 2n matrix and a 2n offset".into()));
        }
        let det = m.determinant();
        let m_inv = m.clone().try_inverse().filter(|_| det.abs() > 1e-8).ok_or(GlueError::ChartInvalid(format!("singular matrix (det {det:.3e})")))?;
        Ok(ChartMap::Affine { m, b, m_inv })
    }

    /// Multiplication by `e^{i theta}` in every coordinate, plus a complex offset.
    pub fn rotation(n: usize, theta: f64, offset: Complex64) -> ChartMap {
        let (c, s) = (theta.cos(), theta.sin());
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, i)] = c;
            m[(i, n + i)] = -s;
            m[(n + i, i)] = s;
            m[(n + i, n + i)] = c;
        }
        let b = to_real(&vec![offset; n]);
        ChartMap::affine(m, b).expect("rotations are invertible")
    }

    pub fn dim(&self) -> usize {
        match self {
            ChartMap::Identity { n } => *n,
            ChartMap::Affine { m, .. } => m.nrows() / 2,
            ChartMap::Shear { .. } => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ChartMap::Identity { .. } => "identity".into(),
            ChartMap::Affine { .. } => "affine".into(),
            ChartMap::Shear { c } => format!("shear({c})"),
        }
    }

    pub fn psi(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ChartMap::Identity { .. } => x.to_vec(),
            ChartMap::Affine { m, b, .. } => (m * DMatrix::from_column_slice(x.len(), 1, x)).iter().zip(b).map(|(v, o)| v + o).collect(),
            ChartMap::Shear { c } => {
                let z = from_real(x);
                to_real(&[z[0], z[1] + *c * z[0] * z[0]])
            }
        }
    }

    pub fn psi_inv(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ChartMap::Identity { .. } => x.to_vec(),
            ChartMap::Affine { b, m_inv, .. } => {
                let y: Vec<f64> = x.iter().zip(b).map(|(v, o)| v - o).collect();
                (m_inv * DMatrix::from_column_slice(y.len(), 1, &y)).iter().copied().collect()
            }
            ChartMap::Shear { c } => {
                let w = from_real(x);
                to_real(&[w[0], w[1] - *c * w[0] * w[0]])
            }
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            ChartMap::Identity { n } => DMatrix::identity(2 * n, 2 * n),
            ChartMap::Affine { m, .. } => m.clone(),
            ChartMap::Shear { c } => {
                let z = from_real(x);
                let mut d = DMatrix::identity(4, 4);
                put_complex(&mut d, 2, 1, 0, Complex64::new(2.0 * c, 0.0) * z[0]);
                d
            }
        }
    }

    /// Partial of the Jacobian along real coordinate `k`.
    pub fn jacobian_partial(&self, _x: &[f64], k: usize) -> DMatrix<f64> {
        match self {
            ChartMap::Identity { n } => DMatrix::zeros(2 * n, 2 * n),
            ChartMap::Affine { m, .. } => DMatrix::zeros(m.nrows(), m.nrows()),
            ChartMap::Shear { c } => {
                let mut d = DMatrix::zeros(4, 4);
                // d(2 c z1) / dx1 = 2c, / dy1 = 2ci
                let a = match k {
                    0 => Complex64::new(2.0 * c, 0.0),
                    2 => Complex64::new(0.0, 2.0 * c),
                    _ => return d,
                };
                put_complex(&mut d, 2, 1, 0, a);
                d
            }
        }
    }

    /// True when `d Psi` commutes with `J_st` everywhere.
    pub fn is_holomorphic(&self) -> bool {
        match self {
            ChartMap::Identity { .. } | ChartMap::Shear { .. } => true,
            ChartMap::Affine { m, .. } => {
                let js = j_st(m.nrows() / 2);
                (m * &js - &js * m).amax() < 1e-14
            }
        }
    }
}

/// Writes multiplication by `a` (row coordinate `r`, column coordinate `c`) into a real matrix.
fn put_complex(d: &mut DMatrix<f64>, n: usize, r: usize, c: usize, a: Complex64) {
    d[(r, c)] += a.re;
    d[(r, n + c)] -= a.im;
    d[(n + r, c)] += a.im;
    d[(n + r, n + c)] += a.re;
}

/// Split a real-linear map into `v -> P v + R conj(v)`.
pub fn complex_parts(d: &DMatrix<f64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = d.nrows() / 2;
    let b = |r: usize, c: usize| d[(r, c)];
    let p = DMatrix::from_fn(n, n, |r, c| Complex64::new(0.5 * (b(r, c) + b(n + r, n + c)), 0.5 * (b(n + r, c) - b(r, n + c))));
    let q = DMatrix::from_fn(n, n, |r, c| Complex64::new(0.5 * (b(r, c) - b(n + r, n + c)), 0.5 * (b(n + r, c) + b(r, n + c))));
    (p, q)
}

/// `J2(x) = dPsi(x)^{-1} J1(Psi(x)) dPsi(x)`.
#[derive(Debug)]
pub struct Pullback {
    map: ChartMap,
    j1: Arc<dyn StructureField>,
}

impl StructureField for Pullback {
    fn dim(&self) -> usize {
        self.map.dim()
    }
    fn eval_j(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.map.jacobian(x);
        let di = d.clone().try_inverse().expect("chart jacobian is invertible on the validity box");
        &di * self.j1.eval_j(&self.map.psi(x)) * d
    }
    fn eval_dj(&self, x: &[f64], k: usize) -> Option<DMatrix<f64>> {
        let d = self.map.jacobian(x);
        let di = d.clone().try_inverse()?;
        let u = self.map.psi(x);
        let j = self.j1.eval_j(&u);
        let dd = self.map.jacobian_partial(x, k);
        // d/dx_k of J1(Psi(x)) = sum_l dJ1/du_l * dPsi_l/dx_k
        let mut dj1 = DMatrix::zeros(d.nrows(), d.nrows());
        for l in 0..d.nrows() {
            if d[(l, k)] != 0.0 {
                dj1 += self.j1.eval_dj(&u, l)? * d[(l, k)];
            }
        }
        Some(-&di * &dd * &di * &j * &d + &di * dj1 * &d + &di * j * dd)
    }
    fn is_standard(&self) -> bool {
        self.j1.is_standard() && self.map.is_holomorphic()
    }
    fn name(&self) -> String {
        format!("pullback({}, {})", self.map.name(), self.j1.name())
    }
}

const CHART_SAMPLES: usize = 256;
const CHART_SEED: u64 = 0xc4a7;

fn finite_box(b: &ValidityBox) -> ValidityBox {
    ValidityBox { lo: b.lo.iter().map(|v| v.max(-1e3)).collect(), hi: b.hi.iter().map(|v| v.min(1e3)).collect() }
}

fn box_samples(b: &ValidityBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let b = finite_box(b);
    let m = b.lo.len();
    let mut out: Vec<Vec<f64>> = (0..1usize << m)
        .map(|mask| (0..m).map(|d| if mask >> d & 1 == 1 { b.hi[d] } else { b.lo[d] }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        out.push((0..m).map(|d| rng.gen_range(b.lo[d]..=b.hi[d])).collect());
    }
    out
}

/// `Psi: U2 -> U1` with `J1` on `U1` (its validity box) and `J2 = Psi^* J1` on `U2`.
#[derive(Clone, Debug)]
pub struct ChartTransition {
    map: ChartMap,
    j1: AlmostComplexStructure,
    j2: AlmostComplexStructure,
}

impl ChartTransition {
    pub fn new(map: ChartMap, j1: AlmostComplexStructure, u2_box: ValidityBox) -> Result<ChartTransition> {
        let n = j1.n();
        if map.dim() != n || u2_box.lo.len() != 2 * n {
            return Err(GlueError::ChartInvalid(format!("chart map has n = {}, structure n = {n}", map.dim())));
        }
        for x in box_samples(&u2_box, CHART_SAMPLES, CHART_SEED) {
            let u = map.psi(&x);
            if !j1.validity().contains(&u) {
                return Err(GlueError::ChartInvalid(format!("Psi maps {x:?} outside U1")));
            }
            let back = map.psi_inv(&u);
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-10 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
                return Err(GlueError::ChartInvalid(format!("Psi^-1 o Psi differs from the identity by {err:.2e}")));
            }
            let det = map.jacobian(&x).determinant();
            if det.abs() <= 1e-8 {
                return Err(GlueError::ChartInvalid(format!("singular jacobian at {x:?}")));
            }
        }
        let field = Arc::new(Pullback { map: map.clone(), j1: j1.field().clone() });
        let j2 = AlmostComplexStructure::new(field, u2_box.clone())?;
        let tr = ChartTransition { map, j1, j2 };
        for x in box_samples(&u2_box, 64, CHART_SEED ^ 1) {
            let d = tr.map.jacobian(&x);
            let gap = (&d * tr.j2.eval_j(&x) - tr.j1.eval_j(&tr.map.psi(&x)) * &d).amax();
            if gap > 1e-8 {
                return Err(GlueError::ChartInvalid(format!("pushforward identity fails by {gap:.2e}")));
            }
        }
        Ok(tr)
    }

    /// The transition on the largest centred cube `U2` (within 1e-3 relative) that `Psi` maps into `U1`.
    pub fn fitted(map: ChartMap, j1: AlmostComplexStructure) -> Result<ChartTransition> {
        let n = j1.n();
        let fits = |half: f64| {
            box_samples(&ValidityBox::cube(n, half), CHART_SAMPLES, CHART_SEED).iter().all(|x| j1.validity().contains(&map.psi(x)))
        };
        let (mut lo, mut hi) = (0.0, 1e3);
        if fits(hi) {
            lo = hi;
        }
        while hi - lo > 1e-3 * hi && lo < 1e3 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 0.0 {
            return Err(GlueError::ChartInvalid("Psi maps no cube around the origin into U1".into()));
        }
        ChartTransition::new(map, j1, ValidityBox::cube(n, lo))
    }

    pub fn identity(j: AlmostComplexStructure) -> Result<ChartTransition> {
        let n = j.n();
        let b = j.validity().clone();
        ChartTransition::new(ChartMap::Identity { n }, j, b)
    }

    pub fn map(&self) -> &ChartMap {
        &self.map
    }
    pub fn j1(&self) -> &AlmostComplexStructure {
        &self.j1
    }
    pub fn j2(&self) -> &AlmostComplexStructure {
        &self.j2
    }
    pub fn n(&self) -> usize {
        self.j1.n()
    }

    pub fn psi(&self, z: &[Complex64]) -> Vec<Complex64> {
        from_real(&self.map.psi(&to_real(z)))
    }

    pub fn psi_inv(&self, z: &[Complex64]) -> Vec<Complex64> {
        from_real(&self.map.psi_inv(&to_real(z)))
    }

    /// `Psi o f` node by node.
    pub fn push(&self, f: &Field) -> Field {
        let n = f.n();
        let mut out = f.clone();
        for k in 0..f.domain().len() {
            let w = self.psi(f.at(k));
            out.values_mut()[k * n..(k + 1) * n].copy_from_slice(&w);
        }
        out
    }

    /// `Psi^{-1} o f` node by node.
    pub fn pull(&self, f: &Field) -> Field {
        let n = f.n();
        let mut out = f.clone();
        for k in 0..f.domain().len() {
            let w = self.psi_inv(f.at(k));
            out.values_mut()[k * n..(k + 1) * n].copy_from_slice(&w);
        }
        out
    }

    /// `dPsi_{at}(v)` node by node.
    pub fn d_psi(&self, at: &Field, v: &Field) -> Result<Field> {
        at.compatible(v)?;
        let n = at.n();
        let mut out = Field::zeros(at.domain(), n);
        for k in 0..at.domain().len() {
            let d = self.map.jacobian(&to_real(at.at(k)));
            let w = &d * DMatrix::from_vec(2 * n, 1, to_real(v.at(k)));
            out.values_mut()[k * n..(k + 1) * n].copy_from_slice(&from_real(w.as_slice()));
        }
        Ok(out)
    }

    /// `(dPsi_{at})^{-1}(v)` node by node.
    pub fn d_psi_inv(&self, at: &Field, v: &Field) -> Result<Field> {
        at.compatible(v)?;
        let n = at.n();
        let mut out = Field::zeros(at.domain(), n);
        for k in 0..at.domain().len() {
            let d = self.map.jacobian(&to_real(at.at(k)));
            let det = d.determinant();
            if det.abs() <= 1e-8 {
                return Err(GlueError::JacobianSingular { node: k, det });
            }
            let w = d.lu().solve(&DMatrix::from_vec(2 * n, 1, to_real(v.at(k)))).ok_or(GlueError::JacobianSingular { node: k, det })?;
            out.values_mut()[k * n..(k + 1) * n].copy_from_slice(&from_real(w.as_slice()));
        }
        Ok(out)
    }

    /// Per-node `L = P + A1(Psi(f)) conj(R)` with `dPsi = P + R conj`, so that
    /// `F1(Psi o f) = L F2(f)` exactly. Returned row-major, `n*n` entries per node.
    pub fn residual_transfer(&self, f2: &Field) -> Result<Vec<DMatrix<Complex64>>> {
        let mut out = Vec::with_capacity(f2.domain().len());
        for k in 0..f2.domain().len() {
            let x = to_real(f2.at(k));
            let (p, r) = complex_parts(&self.map.jacobian(&x));
            let a = crate::acstruct::complex_matrix_a(&self.j1, &self.psi(f2.at(k))).map_err(|e| match e {
                GlueError::PointOutsideValidityBox { iterate, .. } => GlueError::PointOutsideValidityBox { node: k, iterate },
                e => e,
            })?;
            out.push(p + a * r.map(|v| v.conj()));
        }
        Ok(out)
    }
}
