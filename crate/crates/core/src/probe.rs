//! Deterministic smooth random fields used to estimate operator norms and defects.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::{lp_norm, w1p_norm, Field, NormConfig};
use crate::grid::GridDomain;

pub const DEFAULT_PROBES: usize = 64;

/// Low Fourier modes (wavelengths at least a third of the longer side) plus three Gaussian
/// bumps of width a tenth to a fifth of the longer side, independently per component.
pub fn smooth_field(domain: &Arc<GridDomain>, n: usize, rng: &mut ChaCha8Rng) -> Field {
    let (x0, x1, y0, y1) = domain.bounding_box();
    let h = domain.h();
    let lx = (x1 - x0).max(h);
    let ly = (y1 - y0).max(h);
    // content is fixed in physical units so the probe set does not sharpen under refinement
    let long = lx.max(ly);
    let mut out = Field::zeros(domain, n);
    let pts = domain.points();
    for c in 0..n {
        let mut modes = Vec::new();
        for _ in 0..6 {
            let kx = rng.gen_range(-3i32..=3) as f64;
            let ky = rng.gen_range(-3i32..=3) as f64;
            let amp = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (1.0 + kx * kx + ky * ky);
            modes.push((kx, ky, amp));
        }
        let mut bumps = Vec::new();
        for _ in 0..3 {
            let centre = pts[rng.gen_range(0..pts.len())];
            let width = 0.1 * long * (1.0 + rng.gen::<f64>());
            let amp = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            bumps.push((centre, width, amp));
        }
        for (k, z) in pts.iter().enumerate() {
            let mut v = Complex64::new(0.0, 0.0);
            for &(kx, ky, a) in &modes {
                let phase = 2.0 * PI * (kx * (z.re - x0) + ky * (z.im - y0)) / long;
                v += a * Complex64::from_polar(1.0, phase);
            }
            for &(ctr, w, a) in &bumps {
                v += a * (-(z - ctr).norm_sqr() / (w * w)).exp();
            }
            out.values_mut()[k * n + c] = v;
        }
    }
    out
}

/// `count` smooth probes normalized to unit L^p norm.
pub fn lp_probes(domain: &Arc<GridDomain>, n: usize, count: usize, seed: u64, cfg: NormConfig) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = smooth_field(domain, n, &mut rng);
            let s = lp_norm(&f, cfg);
            &f * (1.0 / s)
        })
        .collect()
}

/// `count` smooth probes normalized to unit W^{1,p} norm.
pub fn w1p_probes(domain: &Arc<GridDomain>, n: usize, count: usize, seed: u64, cfg: NormConfig) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = smooth_field(domain, n, &mut rng);
            let s = w1p_norm(&f, cfg);
            &f * (1.0 / s)
        })
        .collect()
}
