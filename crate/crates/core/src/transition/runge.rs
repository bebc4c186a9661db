//! Scalar polynomials close to 0 on `K1` and to 1 on `K2`.

use num_complex::Complex64;

use crate::error::{GlueError, Result};
use crate::grid::{GoodPair, Lattice};

/// Polynomial in the scaled variable `w = (z - center) / scale`, stored in the
/// Arnoldi basis of the fitting samples so that high degrees stay well conditioned.
#[derive(Clone, Debug)]
pub struct RungePolynomial {
    pub gamma: f64,
    pub degree: usize,
    pub center: Complex64,
    pub scale: f64,
    /// Hessenberg recurrence, column `k` gives basis function `k + 1`.
    hess: Vec<Vec<Complex64>>,
    weights: Vec<Complex64>,
    /// Sup of `|P|` over the K1 samples (nodes and refined points).
    pub sup_k1: f64,
    /// Sup of `|1 - P|` over the K2 samples.
    pub sup_k2_minus_1: f64,
}

impl RungePolynomial {
    /// The constant polynomial `c`.
    pub fn constant(c: f64, gamma: f64) -> RungePolynomial {
        RungePolynomial {
            gamma,
            degree: 0,
            center: Complex64::new(0.0, 0.0),
            scale: 1.0,
            hess: Vec::new(),
            weights: vec![Complex64::new(c, 0.0)],
            sup_k1: c.abs(),
            sup_k2_minus_1: (1.0 - c).abs(),
        }
    }

    pub fn eval_many(&self, z: &[Complex64]) -> Vec<Complex64> {
        let w: Vec<Complex64> = z.iter().map(|&p| (p - self.center) / self.scale).collect();
        let mut basis = vec![vec![Complex64::new(1.0, 0.0); z.len()]];
        let mut out: Vec<Complex64> = vec![self.weights[0]; z.len()];
        for k in 0..self.degree {
            let col = &self.hess[k];
            let mut next: Vec<Complex64> = (0..z.len()).map(|i| w[i] * basis[k][i]).collect();
            for (j, b) in basis.iter().enumerate() {
                for i in 0..z.len() {
                    next[i] -= col[j] * b[i];
                }
            }
            let sub = col[k + 1];
            next.iter_mut().for_each(|v| *v /= sub);
            for i in 0..z.len() {
                out[i] += self.weights[k + 1] * next[i];
            }
            basis.push(next);
        }
        out
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.eval_many(&[z])[0]
    }

    /// Coefficients of `P` in powers of the scaled variable `w`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        // basis polynomials as coefficient vectors, same recurrence
        let d = self.degree;
        let mut basis: Vec<Vec<Complex64>> = vec![vec![Complex64::new(1.0, 0.0)]];
        let mut out = vec![Complex64::new(0.0, 0.0); d + 1];
        out[0] = self.weights[0];
        for k in 0..d {
            let col = &self.hess[k];
            let mut next = vec![Complex64::new(0.0, 0.0); k + 2];
            for (i, c) in basis[k].iter().enumerate() {
                next[i + 1] += c;
            }
            for (j, b) in basis.iter().enumerate() {
                for (i, c) in b.iter().enumerate() {
                    next[i] -= col[j] * c;
                }
            }
            next.iter_mut().for_each(|v| *v /= col[k + 1]);
            for (i, c) in next.iter().enumerate() {
                out[i] += self.weights[k + 1] * c;
            }
            basis.push(next);
        }
        out
    }
}

fn mask_points(lat: &Lattice, mask: &[bool]) -> Vec<Complex64> {
    (0..lat.len()).filter(|&i| mask[i]).map(|i| lat.point_of(i)).collect()
}

/// Points of the `factor`-times finer lattice inside lattice squares whose four corners lie in the mask.
pub fn refined_points(lat: &Lattice, mask: &[bool], factor: usize) -> Vec<Complex64> {
    let mut out = Vec::new();
    for iy in 0..lat.ny.saturating_sub(1) {
        for ix in 0..lat.nx.saturating_sub(1) {
            let corners = [lat.index(ix, iy), lat.index(ix + 1, iy), lat.index(ix, iy + 1), lat.index(ix + 1, iy + 1)];
            if !corners.iter().all(|&c| mask[c]) {
                continue;
            }
            let p = lat.point(ix, iy);
            for b in 0..=factor {
                for a in 0..=factor {
                    out.push(p + Complex64::new(a as f64, b as f64) * (lat.h / factor as f64));
                }
            }
        }
    }
    out
}

fn sup_dist(p: &RungePolynomial, pts: &[Complex64], target: f64) -> f64 {
    p.eval_many(pts).iter().map(|v| (v - target).norm()).fold(0.0, f64::max)
}

/// Least-squares fit of the indicator (0 on K1, 1 on K2) over polynomials of increasing
/// degree; the first degree whose sup errors on the node samples and on 4x refined
/// samples are both below `gamma` is returned.
pub fn runge_polynomial(pair: &GoodPair, gamma: f64, max_degree: usize) -> Result<RungePolynomial> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(GlueError::Precondition(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let lat = *pair.lattice();
    if pair.k1_mask.iter().zip(&pair.k2_mask).any(|(&a, &b)| a && b) {
        return Err(GlueError::Precondition("K1 and K2 intersect".into()));
    }
    let k1 = mask_points(&lat, &pair.k1_mask);
    let k2 = mask_points(&lat, &pair.k2_mask);
    if k2.is_empty() {
        return Err(GlueError::Precondition("K2 is empty".into()));
    }
    if k1.is_empty() {
        return Ok(RungePolynomial::constant(1.0, gamma));
    }
    let r1 = refined_points(&lat, &pair.k1_mask, 4);
    let r2 = refined_points(&lat, &pair.k2_mask, 4);

    let pts: Vec<Complex64> = k1.iter().chain(&k2).copied().collect();
    let m = pts.len();
    let center = pts.iter().sum::<Complex64>() / m as f64;
    let scale = pts.iter().map(|p| (p - center).norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let w: Vec<Complex64> = pts.iter().map(|p| (p - center) / scale).collect();
    let y: Vec<f64> = (0..m).map(|i| if i < k1.len() { 0.0 } else { 1.0 }).collect();
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>() / m as f64;

    let mut basis: Vec<Vec<Complex64>> = vec![vec![Complex64::new(1.0, 0.0); m]];
    let mut hess: Vec<Vec<Complex64>> = Vec::new();
    let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut weights = vec![dot(&basis[0], &yc)];
    let mut best = (f64::INFINITY, f64::INFINITY);
    let c0 = weights[0].re;
    let (s1, s2) = (c0.abs(), (1.0 - c0).abs());
    if s1 < gamma && s2 < gamma {
        return Ok(RungePolynomial::constant(c0, gamma));
    }
    for k in 0..max_degree {
        let mut next: Vec<Complex64> = (0..m).map(|i| w[i] * basis[k][i]).collect();
        let mut col = vec![Complex64::new(0.0, 0.0); k + 2];
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = dot(b, &next);
                col[j] += c;
                for i in 0..m {
                    next[i] -= c * b[i];
                }
            }
        }
        let nrm = dot(&next, &next).re.sqrt();
        if nrm < 1e-14 {
            break;
        }
        col[k + 1] = Complex64::new(nrm, 0.0);
        next.iter_mut().for_each(|v| *v /= nrm);
        weights.push(dot(&next, &yc));
        basis.push(next);
        hess.push(col);
        let p = RungePolynomial {
            gamma,
            degree: k + 1,
            center,
            scale,
            hess: hess.clone(),
            weights: weights.clone(),
            sup_k1: 0.0,
            sup_k2_minus_1: 0.0,
        };
        let fitted: Vec<Complex64> = (0..m).map(|i| (0..=k + 1).map(|j| weights[j] * basis[j][i]).sum()).collect();
        let s1 = fitted[..k1.len()].iter().map(|v| v.norm()).fold(0.0, f64::max);
        let s2 = fitted[k1.len()..].iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max);
        if s1 < gamma && s2 < gamma {
            let s1 = s1.max(sup_dist(&p, &r1, 0.0));
            let s2 = s2.max(sup_dist(&p, &r2, 1.0));
            if s1 < gamma && s2 < gamma {
                return Ok(RungePolynomial { sup_k1: s1, sup_k2_minus_1: s2, ..p });
            }
        }
        if s1.max(s2) < best.0.max(best.1) {
            best = (s1, s2);
        }
    }
    Err(GlueError::DegreeExhausted { max_degree, sup_k1: best.0, sup_k2: best.1, gamma })
}
