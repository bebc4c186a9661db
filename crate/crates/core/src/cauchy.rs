//! The Cauchy–Green operator `T f(zeta) = (1/pi) int f(z) / (zeta - z) dA(z)` on a grid domain.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::calculus::{d_zbar, lp_norm, lp_norm_on, w1p_norm, Field, NormConfig};
use crate::error::{GlueError, Result};
use crate::grid::GridDomain;
use crate::probe::{lp_probes, DEFAULT_PROBES};

/// Seed of the fixed probe set behind every norm and defect estimate.
pub const PROBE_SEED: u64 = 0x5eed_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfCellRule {
    /// Exact cell integrals on the 3x3 block around the target (over the occupied sub-cells
    /// for cut cells), midpoint rule elsewhere.
    ExactNearBlock,
}

/// Discrete Cauchy–Green operator. Source cells are weighted by their area fraction; the
/// offset kernel is applied as a zero-padded FFT convolution over the whole lattice, so the
/// transform can also be read off at lattice nodes outside the domain.
pub struct CauchyOperator {
    domain: Arc<GridDomain>,
    mx: usize,
    my: usize,
    kernel_hat: Vec<Complex64>,
    fx: Arc<dyn Fft<f64>>,
    fxi: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    fyi: Arc<dyn Fft<f64>>,
    pub self_cell_rule: SelfCellRule,
    /// Per cut cell: node index and the near-block corrections for offsets `(ex, ey)` in -1..=1.
    near: Vec<(usize, [Complex64; 9])>,
    /// Per cut cell: node index and `weight * centroid offset` (in cells) for the far-field dipole.
    dipole: Vec<(usize, Complex64)>,
    floors: Mutex<Vec<(u64, f64)>>,
}

impl std::fmt::Debug for CauchyOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CauchyOperator").field("nodes", &self.domain.len()).field("pad", &(self.mx, self.my)).finish()
    }
}

fn prim(u: f64, v: f64) -> f64 {
    let r2 = u * u + v * v;
    let a = if v == 0.0 || r2 == 0.0 { 0.0 } else { 0.5 * v * r2.ln() };
    let b = if u == 0.0 { 0.0 } else { u * (v / u).atan() };
    a + b
}

/// Exact `int_{[a,b]x[c,d]} 1/(zeta - z) dA` with coordinates taken relative to zeta.
pub fn cell_integral(a: f64, b: f64, c: f64, d: f64) -> Complex64 {
    let iu = prim(b, d) - prim(a, d) - prim(b, c) + prim(a, c);
    let iv = prim(d, b) - prim(d, a) - prim(c, b) + prim(c, a);
    -Complex64::new(iu, -iv)
}

/// `(1/pi) int_cell 1/(zeta - z)` for the source cell at offset `(dx, dy)` cells from the target.
pub fn kernel_weight(dx: i64, dy: i64, h: f64) -> Complex64 {
    if dx == 0 && dy == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let w = if dx.abs() <= 1 && dy.abs() <= 1 {
        let (x, y) = (dx as f64, dy as f64);
        cell_integral((x - 0.5) * h, (x + 0.5) * h, (y - 0.5) * h, (y + 0.5) * h)
    } else {
        -h / Complex64::new(dx as f64, dy as f64)
    };
    w / PI
}

/// For a cut cell the FFT applies `weight * K(e)` on the near block; the exact contribution is
/// the sum of the sub-cell integrals over the occupied sub-samples. Returns the differences.
fn near_corrections(domain: &GridDomain) -> Vec<(usize, [Complex64; 9])> {
    const SUB: usize = 8;
    let h = domain.h();
    let s = h / SUB as f64;
    let mut table = vec![[Complex64::new(0.0, 0.0); SUB * SUB]; 9];
    for (slot, row) in table.iter_mut().enumerate() {
        let (ex, ey) = ((slot % 3) as f64 - 1.0, (slot / 3) as f64 - 1.0);
        for b in 0..SUB {
            for a in 0..SUB {
                let x0 = (ex - 0.5) * h + a as f64 * s;
                let y0 = (ey - 0.5) * h + b as f64 * s;
                row[b * SUB + a] = cell_integral(x0, x0 + s, y0, y0 + s) / PI;
            }
        }
    }
    let occ = domain.occupancy();
    let w = domain.weights();
    let mut out = Vec::new();
    for (k, &i) in domain.nodes().iter().enumerate() {
        let bits = occ[i];
        if bits == u64::MAX {
            continue;
        }
        let mut d = [Complex64::new(0.0, 0.0); 9];
        for (slot, dv) in d.iter_mut().enumerate() {
            let exact: Complex64 = (0..SUB * SUB).filter(|&q| bits >> q & 1 == 1).map(|q| table[slot][q]).sum();
            *dv = exact - kernel_weight(slot as i64 % 3 - 1, slot as i64 / 3 - 1, h) * w[k];
        }
        out.push((k, d));
    }
    out
}

fn dipoles(domain: &GridDomain) -> Vec<(usize, Complex64)> {
    let occ = domain.occupancy();
    let mut out = Vec::new();
    for (k, &i) in domain.nodes().iter().enumerate() {
        let bits = occ[i];
        if bits == u64::MAX {
            continue;
        }
        let m: Complex64 = (0..64)
            .filter(|&q| bits >> q & 1 == 1)
            .map(|q| Complex64::new(((q % 8) as f64 + 0.5) / 8.0 - 0.5, ((q / 8) as f64 + 0.5) / 8.0 - 0.5))
            .sum::<Complex64>()
            / 64.0;
        if m.norm() > 0.0 {
            out.push((k, m));
        }
    }
    out
}

impl CauchyOperator {
    pub fn new(domain: &Arc<GridDomain>) -> CauchyOperator {
        let lat = domain.lattice();
        let (nx, ny) = (lat.nx, lat.ny);
        let (mx, my) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::<f64>::new();
        let fx = planner.plan_fft_forward(mx);
        let fxi = planner.plan_fft_inverse(mx);
        let fy = planner.plan_fft_forward(my);
        let fyi = planner.plan_fft_inverse(my);
        let mut op = CauchyOperator {
            domain: domain.clone(),
            mx,
            my,
            kernel_hat: vec![Complex64::new(0.0, 0.0); mx * my],
            fx,
            fxi,
            fy,
            fyi,
            self_cell_rule: SelfCellRule::ExactNearBlock,
            near: near_corrections(domain),
            dipole: dipoles(domain),
            floors: Mutex::new(Vec::new()),
        };
        // out[t] = sum_s g[s] K(s - t) = sum_s g[s] Kr(t - s) with Kr(e) = K(-e)
        let mut buf = vec![Complex64::new(0.0, 0.0); mx * my];
        for ey in -(ny as i64 - 1)..=(ny as i64 - 1) {
            for ex in -(nx as i64 - 1)..=(nx as i64 - 1) {
                let px = ex.rem_euclid(mx as i64) as usize;
                let py = ey.rem_euclid(my as i64) as usize;
                buf[py * mx + px] = kernel_weight(-ex, -ey, lat.h);
            }
        }
        op.fft2(&mut buf, false);
        op.kernel_hat = buf;
        op
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (mx, my) = (self.mx, self.my);
        let (fx, fy) = if inverse { (&self.fxi, &self.fyi) } else { (&self.fx, &self.fy) };
        fx.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); mx * my];
        for y in 0..my {
            for x in 0..mx {
                t[x * my + y] = buf[y * mx + x];
            }
        }
        fy.process(&mut t);
        for x in 0..mx {
            for y in 0..my {
                buf[y * mx + x] = t[x * my + y];
            }
        }
    }

    /// The transform of one component at every lattice node.
    fn convolve(&self, f: &Field, c: usize) -> Vec<Complex64> {
        let lat = self.domain.lattice();
        let (mx, my) = (self.mx, self.my);
        let n = f.n();
        let w = self.domain.weights();
        let mut buf = vec![Complex64::new(0.0, 0.0); mx * my];
        for (k, &i) in self.domain.nodes().iter().enumerate() {
            let (ix, iy) = lat.coords(i);
            buf[iy * mx + ix] = f.values()[k * n + c] * w[k];
        }
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (mx * my) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); lat.len()];
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                out[iy * lat.nx + ix] = buf[iy * mx + ix] * scale;
            }
        }
        // far field of cut cells: mass sits at the centroid, not the centre;
        // d/dc [-h / (pi (e + c))] = h / (pi (e + c)^2)
        let h = lat.h;
        for (k, m) in &self.dipole {
            let (ix, iy) = lat.coords(self.domain.nodes()[*k]);
            let v = f.values()[k * n + c] * m * (h / PI);
            for ty in 0..lat.ny {
                for tx in 0..lat.nx {
                    let (ex, ey) = (ix as i64 - tx as i64, iy as i64 - ty as i64);
                    if ex.abs() <= 1 && ey.abs() <= 1 {
                        continue;
                    }
                    let e = Complex64::new(ex as f64, ey as f64);
                    out[ty * lat.nx + tx] += v / (e * e);
                }
            }
        }
        // source at s, target t = s - e
        for (k, d) in &self.near {
            let (ix, iy) = lat.coords(self.domain.nodes()[*k]);
            let v = f.values()[k * n + c];
            for (slot, dv) in d.iter().enumerate() {
                let tx = ix as i64 - (slot as i64 % 3 - 1);
                let ty = iy as i64 - (slot as i64 / 3 - 1);
                if tx >= 0 && ty >= 0 && (tx as usize) < lat.nx && (ty as usize) < lat.ny {
                    out[ty as usize * lat.nx + tx as usize] += dv * v;
                }
            }
        }
        out
    }

    /// `T f` on the operator's domain.
    ///
    /// # Panics
    /// If `f` does not live on the operator's domain.
    pub fn apply(&self, f: &Field) -> Field {
        self.apply_onto(f, &self.domain.clone()).expect("field must live on the operator's domain")
    }

    /// `T f` read off at the nodes of another domain on the same lattice.
    pub fn apply_onto(&self, f: &Field, target: &Arc<GridDomain>) -> Result<Field> {
        if !f.domain().same_as(&self.domain) {
            return Err(GlueError::FieldMismatch("T applied to a field on another domain".into()));
        }
        if target.lattice() != self.domain.lattice() {
            return Err(GlueError::LatticeMismatch);
        }
        let n = f.n();
        let comps: Vec<Vec<Complex64>> = (0..n).into_par_iter().map(|c| self.convolve(f, c)).collect();
        let mut out = Field::zeros(target, n);
        for (k, &i) in target.nodes().iter().enumerate() {
            for c in 0..n {
                out.values_mut()[k * n + c] = comps[c][i];
            }
        }
        Ok(out)
    }

    /// Largest relative defect `||dbar_h T W - W|| / ||W||` over the fixed probe set.
    pub fn floor(&self, cfg: NormConfig) -> f64 {
        let key = cfg.p.to_bits();
        if let Some(&(_, v)) = self.floors.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return v;
        }
        let probes = lp_probes(&self.domain, 1, DEFAULT_PROBES, PROBE_SEED, cfg);
        let v = probes
            .par_iter()
            .map(|w| lp_norm(&(&d_zbar(&self.apply(w)) - w), cfg) / lp_norm(w, cfg))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max);
        self.floors.lock().unwrap().push((key, v));
        v
    }

    /// Absolute residual below which a field counts as holomorphic on this grid:
    /// ten times the interior defect of `dbar_h T 1`.
    pub fn holomorphy_floor(&self, cfg: NormConfig) -> f64 {
        let one = Field::scalar(&self.domain, |_| Complex64::new(1.0, 0.0));
        10.0 * verify_dbar_inverse(self, &one, cfg)
    }
}

/// `||dbar_h(T f) - f||_{L^p}` over the nodes at least three cells inside the domain.
pub fn verify_dbar_inverse(op: &CauchyOperator, f: &Field, cfg: NormConfig) -> f64 {
    let r = &d_zbar(&op.apply(f)) - f;
    lp_norm_on(&r, &op.domain.interior_nodes(3.0), cfg)
}

/// Max over `trials` smooth unit-L^p probes of `||T f||_{W^{1,p}}`.
pub fn operator_norm_estimate(op: &CauchyOperator, cfg: NormConfig, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(GlueError::Precondition("operator_norm_estimate needs at least one trial".into()));
    }
    let probes = lp_probes(&op.domain, 1, trials, seed, cfg);
    Ok(probes.par_iter().map(|f| w1p_norm(&op.apply(f), cfg)).collect::<Vec<_>>().into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::d_z;

    fn disc(h: f64) -> Arc<GridDomain> {
        crate::grid::unit_disc(h).unwrap()
    }

    #[test]
    fn cell_integral_matches_quadrature() {
        // fine midpoint quadrature on a cell away from the singularity
        let (a, b, c, d) = (0.3, 0.7, -0.2, 0.25);
        let m = 400;
        let mut q = Complex64::new(0.0, 0.0);
        for j in 0..m {
            for i in 0..m {
                let z = Complex64::new(a + (b - a) * (i as f64 + 0.5) / m as f64, c + (d - c) * (j as f64 + 0.5) / m as f64);
                q += 1.0 / (-z);
            }
        }
        q *= (b - a) * (d - c) / (m * m) as f64;
        assert!((cell_integral(a, b, c, d) - q).norm() < 1e-6);
        assert_eq!(kernel_weight(0, 0, 0.1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn fft_matches_direct_sum() {
        let d = disc(1.0 / 8.0);
        let op = CauchyOperator::new(&d);
        let f = Field::scalar(&d, |z| z * z + Complex64::new(0.0, 1.0) * z.conj());
        let t = op.apply(&f);
        let lat = d.lattice();
        for k in (0..d.len()).step_by(7) {
            let (tx, ty) = lat.coords(d.nodes()[k]);
            let mut s = Complex64::new(0.0, 0.0);
            for (j, &i) in d.nodes().iter().enumerate() {
                let (sx, sy) = lat.coords(i);
                let (ex, ey) = (sx as i64 - tx as i64, sy as i64 - ty as i64);
                let bits = d.occupancy()[i];
                let w = if ex.abs() <= 1 && ey.abs() <= 1 && bits != u64::MAX {
                    // cut cell next to the target: integrate over the occupied sub-cells
                    let q = lat.h / 8.0;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for bit in (0..64).filter(|b| bits >> b & 1 == 1) {
                        let x0 = (ex as f64 - 0.5) * lat.h + (bit % 8) as f64 * q;
                        let y0 = (ey as f64 - 0.5) * lat.h + (bit / 8) as f64 * q;
                        acc += cell_integral(x0, x0 + q, y0, y0 + q) / PI;
                    }
                    acc
                } else if bits != u64::MAX {
                    // far cut cell: midpoint value plus the first-order shift to the sub-cell centroid
                    let (mut cx, mut cy) = (0.0, 0.0);
                    for bit in (0..64).filter(|b| bits >> b & 1 == 1) {
                        cx += ((bit % 8) as f64 + 0.5) / 8.0 - 0.5;
                        cy += ((bit / 8) as f64 + 0.5) / 8.0 - 0.5;
                    }
                    let cen = Complex64::new(cx, cy) / 64.0;
                    let e = Complex64::new(ex as f64, ey as f64);
                    d.weights()[j] * kernel_weight(ex, ey, lat.h) + cen * lat.h / (PI * e * e)
                } else {
                    d.weights()[j] * kernel_weight(ex, ey, lat.h)
                };
                s += f.at(j)[0] * w;
            }
            assert!((s - t.at(k)[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let d = disc(1.0 / 8.0);
        let op = CauchyOperator::new(&d);
        assert!(op.apply(&Field::zeros(&d, 2)).max_abs() < 1e-15);
    }

    #[test]
    fn constant_gives_conjugate() {
        let d = disc(1.0 / 64.0);
        let op = CauchyOperator::new(&d);
        let t = op.apply(&Field::scalar(&d, |_| Complex64::new(1.0, 0.0)));
        let err = d.interior_nodes(3.0).iter().map(|&k| (t.at(k)[0] - d.point(k).conj()).norm()).fold(0.0, f64::max);
        assert!(err <= 0.02, "{err}");
        // value at the centre node closest to 0
        let k0 = (0..d.len()).min_by(|&a, &b| d.point(a).norm().partial_cmp(&d.point(b).norm()).unwrap()).unwrap();
        assert!((t.at(k0)[0] - d.point(k0).conj()).norm() < 1e-2);
    }

    #[test]
    fn dbar_inverse_interior_residual() {
        let cfg = NormConfig::default();
        let d = disc(1.0 / 32.0);
        let op = CauchyOperator::new(&d);
        let one = Field::scalar(&d, |_| Complex64::new(1.0, 0.0));
        let r1 = verify_dbar_inverse(&op, &one, cfg);
        assert!(r1 <= 0.05, "{r1}");
        assert_eq!(verify_dbar_inverse(&op, &Field::zeros(&d, 1), cfg), 0.0);
        let r = |h: f64| {
            let d = disc(h);
            let op = CauchyOperator::new(&d);
            verify_dbar_inverse(&op, &Field::scalar(&d, |z| z), cfg)
        };
        // decay at depth 3h is slow (the truncation of the kernel's central difference from
        // the missing exterior cells is O((h/d)^2)), so only a strict decrease is asserted
        let (a, b, c) = (r(1.0 / 16.0), r(1.0 / 32.0), r(1.0 / 64.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn linear_and_componentwise() {
        let d = disc(1.0 / 16.0);
        let op = CauchyOperator::new(&d);
        let f = Field::scalar(&d, |z| z * z);
        let g = Field::scalar(&d, |z| (z * 2.0).exp());
        let (a, b) = (Complex64::new(0.5, -2.0), Complex64::new(1.5, 0.25));
        let lhs = op.apply(&(&f.scale(a) + &g.scale(b)));
        let rhs = &op.apply(&f).scale(a) + &op.apply(&g).scale(b);
        assert!((&lhs - &rhs).max_abs() < 1e-12);
        let stacked = Field::from_fn(&d, 2, |z, o| {
            o[0] = z * z;
            o[1] = (z * 2.0).exp();
        });
        let ts = op.apply(&stacked);
        let (tf, tg) = (op.apply(&f), op.apply(&g));
        for k in 0..d.len() {
            assert_eq!(ts.at(k)[0], tf.at(k)[0]);
            assert_eq!(ts.at(k)[1], tg.at(k)[0]);
        }
    }

    #[test]
    fn constant_output_is_antiholomorphic() {
        let cfg = NormConfig::default();
        let r = |h: f64| {
            let d = disc(h);
            let op = CauchyOperator::new(&d);
            let t = op.apply(&Field::scalar(&d, |_| Complex64::new(1.0, 0.0)));
            lp_norm_on(&d_z(&t), &d.interior_nodes(3.0), cfg)
        };
        let (a, b) = (r(1.0 / 16.0), r(1.0 / 32.0));
        assert!(b < a && b < 0.05, "{a} {b}");
    }

    #[test]
    fn norm_estimate_range_and_refinement() {
        let cfg = NormConfig::default();
        assert!(operator_norm_estimate(&CauchyOperator::new(&disc(0.125)), cfg, 0, 1).is_err());
        let a = operator_norm_estimate(&CauchyOperator::new(&disc(1.0 / 16.0)), cfg, 8, 3).unwrap();
        let b = operator_norm_estimate(&CauchyOperator::new(&disc(1.0 / 32.0)), cfg, 8, 3).unwrap();
        assert!((0.5..=5.0).contains(&a) && (0.5..=5.0).contains(&b), "{a} {b}");
        assert!((a / b - 1.0).abs() <= 0.3, "{a} {b}");
    }
}
