//! Grid fields, Wirtinger derivatives and discrete Sobolev norms.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{GlueError, Result};
use crate::grid::GridDomain;

/// `n` complex components per masked node, node-major.
#[derive(Clone, Debug)]
pub struct Field {
    domain: Arc<GridDomain>,
    n: usize,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(domain: &Arc<GridDomain>, n: usize) -> Field {
        Field { domain: domain.clone(), n, values: vec![Complex64::new(0.0, 0.0); n * domain.len()] }
    }

    pub fn from_values(domain: &Arc<GridDomain>, n: usize, values: Vec<Complex64>) -> Result<Field> {
        if n == 0 || values.len() != n * domain.len() {
            return Err(GlueError::FieldMismatch(format!("{} values for {} nodes x {n}", values.len(), domain.len())));
        }
        Ok(Field { domain: domain.clone(), n, values })
    }

    /// Fill from a function of the node position writing `n` components.
    pub fn from_fn(domain: &Arc<GridDomain>, n: usize, f: impl Fn(Complex64, &mut [Complex64])) -> Field {
        let mut out = Field::zeros(domain, n);
        for k in 0..domain.len() {
            let z = domain.point(k);
            f(z, &mut out.values[k * n..(k + 1) * n]);
        }
        out
    }

    pub fn scalar(domain: &Arc<GridDomain>, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field::from_fn(domain, 1, |z, out| out[0] = f(z))
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
    pub fn at(&self, node: usize) -> &[Complex64] {
        &self.values[node * self.n..(node + 1) * self.n]
    }
    pub fn at_mut(&mut self, node: usize) -> &mut [Complex64] {
        &mut self.values[node * self.n..(node + 1) * self.n]
    }
    pub fn component(&self, c: usize) -> Vec<Complex64> {
        self.values.iter().skip(c).step_by(self.n).copied().collect()
    }

    pub fn compatible(&self, other: &Field) -> Result<()> {
        if self.n != other.n {
            return Err(GlueError::FieldMismatch(format!("components {} vs {}", self.n, other.n)));
        }
        if !self.domain.same_as(&other.domain) {
            return Err(GlueError::FieldMismatch("different domains".into()));
        }
        Ok(())
    }

    /// Values on a subdomain of the same lattice.
    pub fn restrict(&self, sub: &Arc<GridDomain>) -> Result<Field> {
        if !sub.is_subset_of(&self.domain) {
            return Err(GlueError::FieldMismatch("restriction target is not a subdomain".into()));
        }
        let n = self.n;
        let mut out = Field::zeros(sub, n);
        for (k, &i) in sub.nodes().iter().enumerate() {
            let j = self.domain.node_of(i).expect("subset");
            out.values[k * n..(k + 1) * n].copy_from_slice(&self.values[j * n..(j + 1) * n]);
        }
        Ok(out)
    }

    /// Values on a superdomain, zero where this field is undefined.
    pub fn extend_by_zero(&self, sup: &Arc<GridDomain>) -> Result<Field> {
        if !self.domain.is_subset_of(sup) {
            return Err(GlueError::FieldMismatch("extension target is not a superdomain".into()));
        }
        let n = self.n;
        let mut out = Field::zeros(sup, n);
        for (k, &i) in self.domain.nodes().iter().enumerate() {
            let j = sup.node_of(i).expect("superset");
            out.values[j * n..(j + 1) * n].copy_from_slice(&self.values[k * n..(k + 1) * n]);
        }
        Ok(out)
    }

    /// Overwrite the nodes shared with `other` by its values.
    pub fn overwrite_from(&mut self, other: &Field) {
        let n = self.n;
        for (k, &i) in other.domain.nodes().iter().enumerate() {
            if let Some(j) = self.domain.node_of(i) {
                self.values[j * n..(j + 1) * n].copy_from_slice(&other.values[k * n..(k + 1) * n]);
            }
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field { domain: self.domain.clone(), n: self.n, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn conj(&self) -> Field {
        self.map(|v| v.conj())
    }

    pub fn scale(&self, c: Complex64) -> Field {
        self.map(|v| v * c)
    }

    /// Multiply node `k` by the real scalar `s[k]`.
    pub fn scale_nodes(&self, s: &[f64]) -> Field {
        let mut out = self.clone();
        for (k, &w) in s.iter().enumerate() {
            out.at_mut(k).iter_mut().for_each(|v| *v *= w);
        }
        out
    }

    /// Multiply node `k` by the complex scalar `s[k]`.
    pub fn mul_nodes(&self, s: &[Complex64]) -> Field {
        let mut out = self.clone();
        for (k, &w) in s.iter().enumerate() {
            out.at_mut(k).iter_mut().for_each(|v| *v *= w);
        }
        out
    }

    pub fn axpy(&mut self, a: Complex64, x: &Field) {
        debug_assert_eq!(self.values.len(), x.values.len());
        for (y, &v) in self.values.iter_mut().zip(&x.values) {
            *y += a * v;
        }
    }

    /// Largest Euclidean norm of a node value.
    pub fn max_abs(&self) -> f64 {
        self.values
            .chunks(self.n)
            .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        debug_assert_eq!(self.values.len(), rhs.values.len());
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect();
        Field { domain: self.domain.clone(), n: self.n, values }
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        debug_assert_eq!(self.values.len(), rhs.values.len());
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect();
        Field { domain: self.domain.clone(), n: self.n, values }
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

impl Mul<Complex64> for &Field {
    type Output = Field;
    fn mul(self, c: Complex64) -> Field {
        self.scale(c)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, c: f64) -> Field {
        self.map(|v| v * c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub p: f64,
}

impl NormConfig {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 2.0) || !p.is_finite() {
            return Err(GlueError::InvalidExponent(p));
        }
        Ok(NormConfig { p })
    }
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { p: 4.0 }
    }
}

/// One first-derivative stencil: up to three node indices with weights (already divided by h).
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 3],
    pub w: [f64; 3],
    pub len: usize,
}

impl Stencil {
    fn new(pairs: &[(usize, f64)]) -> Stencil {
        let mut s = Stencil { idx: [0; 3], w: [0.0; 3], len: pairs.len() };
        for (k, &(i, w)) in pairs.iter().enumerate() {
            s.idx[k] = i;
            s.w[k] = w;
        }
        s
    }

    #[inline]
    fn apply(&self, values: &[Complex64], n: usize, c: usize) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..self.len {
            acc += values[self.idx[k] * n + c] * self.w[k];
        }
        acc
    }
}

/// Per-node x and y derivative stencils for a domain: central differences where both
/// neighbours are masked, one-sided second order where two consecutive nodes exist on
/// one side, first order with a single neighbour, and zero for isolated nodes.
#[derive(Clone, Debug)]
pub struct Stencils {
    pub dx: Vec<Stencil>,
    pub dy: Vec<Stencil>,
}

impl Stencils {
    pub fn build(domain: &GridDomain) -> Stencils {
        let lat = domain.lattice();
        let h = lat.h;
        let table = domain.node_table();
        let at = |ix: i64, iy: i64| -> Option<usize> {
            if ix < 0 || iy < 0 || ix >= lat.nx as i64 || iy >= lat.ny as i64 {
                return None;
            }
            let k = table[lat.index(ix as usize, iy as usize)];
            (k != crate::grid::NO_NODE).then_some(k)
        };
        let make = |k: usize, ix: i64, iy: i64, sx: i64, sy: i64| -> Stencil {
            let p1 = at(ix + sx, iy + sy);
            let m1 = at(ix - sx, iy - sy);
            match (m1, p1) {
                (Some(m), Some(p)) => Stencil::new(&[(m, -0.5 / h), (p, 0.5 / h)]),
                (None, Some(p)) => match at(ix + 2 * sx, iy + 2 * sy) {
                    Some(p2) => Stencil::new(&[(k, -1.5 / h), (p, 2.0 / h), (p2, -0.5 / h)]),
                    None => Stencil::new(&[(k, -1.0 / h), (p, 1.0 / h)]),
                },
                (Some(m), None) => match at(ix - 2 * sx, iy - 2 * sy) {
                    Some(m2) => Stencil::new(&[(k, 1.5 / h), (m, -2.0 / h), (m2, 0.5 / h)]),
                    None => Stencil::new(&[(k, 1.0 / h), (m, -1.0 / h)]),
                },
                (None, None) => Stencil::new(&[]),
            }
        };
        let mut dx = Vec::with_capacity(domain.len());
        let mut dy = Vec::with_capacity(domain.len());
        for (k, &i) in domain.nodes().iter().enumerate() {
            let (ix, iy) = lat.coords(i);
            dx.push(make(k, ix as i64, iy as i64, 1, 0));
            dy.push(make(k, ix as i64, iy as i64, 0, 1));
        }
        Stencils { dx, dy }
    }
}

fn wirtinger(f: &Field, sign: f64) -> Field {
    let st = f.domain.stencils();
    let n = f.n;
    let mut out = Field::zeros(&f.domain, n);
    let half_i = Complex64::new(0.0, 0.5 * sign);
    for k in 0..f.domain.len() {
        for c in 0..n {
            let gx = st.dx[k].apply(&f.values, n, c);
            let gy = st.dy[k].apply(&f.values, n, c);
            out.values[k * n + c] = 0.5 * gx + half_i * gy;
        }
    }
    out
}

/// `(d/dx + i d/dy) / 2`
pub fn d_zbar(f: &Field) -> Field {
    wirtinger(f, 1.0)
}

/// `(d/dx - i d/dy) / 2`
pub fn d_z(f: &Field) -> Field {
    wirtinger(f, -1.0)
}

/// Both Wirtinger derivatives of a real scalar given per node of `domain`.
pub fn wirtinger_real(domain: &Arc<GridDomain>, u: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let st = domain.stencils();
    let mut zb = Vec::with_capacity(u.len());
    let mut z = Vec::with_capacity(u.len());
    for k in 0..domain.len() {
        let sx = &st.dx[k];
        let sy = &st.dy[k];
        let gx: f64 = (0..sx.len).map(|j| sx.w[j] * u[sx.idx[j]]).sum();
        let gy: f64 = (0..sy.len).map(|j| sy.w[j] * u[sy.idx[j]]).sum();
        zb.push(Complex64::new(0.5 * gx, 0.5 * gy));
        z.push(Complex64::new(0.5 * gx, -0.5 * gy));
    }
    (zb, z)
}

/// Exact discrete Leibniz remainders for a scalar multiplier `u` (per node) and a field `g`:
/// `D(u g) = u D g + g D u + R` for each first-derivative stencil D. Returns the
/// remainders for `d_zbar` and `d_z`.
pub fn leibniz_remainder(u: &[Complex64], g: &Field) -> (Field, Field) {
    let st = g.domain.stencils();
    let n = g.n;
    let mut rzb = Field::zeros(&g.domain, n);
    let mut rz = Field::zeros(&g.domain, n);
    let i = Complex64::new(0.0, 1.0);
    for k in 0..g.domain.len() {
        for c in 0..n {
            let gk = g.values[k * n + c];
            let rem = |s: &Stencil| -> Complex64 {
                (0..s.len).map(|j| s.w[j] * (u[s.idx[j]] - u[k]) * (g.values[s.idx[j] * n + c] - gk)).sum()
            };
            let rx = rem(&st.dx[k]);
            let ry = rem(&st.dy[k]);
            rzb.values[k * n + c] = 0.5 * (rx + i * ry);
            rz.values[k * n + c] = 0.5 * (rx - i * ry);
        }
    }
    (rzb, rz)
}

pub fn lp_norm(f: &Field, cfg: NormConfig) -> f64 {
    let h2 = f.domain.h() * f.domain.h();
    let s: f64 = f.values.iter().map(|v| v.norm().powf(cfg.p)).sum();
    (h2 * s).powf(1.0 / cfg.p)
}

/// L^p norm over a subset of nodes.
pub fn lp_norm_on(f: &Field, nodes: &[usize], cfg: NormConfig) -> f64 {
    let h2 = f.domain.h() * f.domain.h();
    let n = f.n;
    let s: f64 = nodes.iter().flat_map(|&k| f.values[k * n..(k + 1) * n].iter()).map(|v| v.norm().powf(cfg.p)).sum();
    (h2 * s).powf(1.0 / cfg.p)
}

pub fn w1p_norm(f: &Field, cfg: NormConfig) -> f64 {
    let a = lp_norm(f, cfg);
    let b = lp_norm(&d_z(f), cfg);
    let c = lp_norm(&d_zbar(f), cfg);
    (a.powf(cfg.p) + b.powf(cfg.p) + c.powf(cfg.p)).powf(1.0 / cfg.p)
}

/// `sup |f - g| / ||f - g||_{W^{1,p}}`, or 0 when the fields coincide.
pub fn sup_embedding_ratio(f: &Field, g: &Field, cfg: NormConfig) -> Result<f64> {
    f.compatible(g)?;
    let d = f - g;
    let sup = d.max_abs();
    if sup == 0.0 {
        return Ok(0.0);
    }
    Ok(sup / w1p_norm(&d, cfg))
}
