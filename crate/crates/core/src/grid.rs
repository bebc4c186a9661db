//! Lattices, masked domains, good pairs and their cut-off functions.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::calculus::Stencils;
use crate::error::{GlueError, Result};

const SUB: usize = 8;

/// Uniform node lattice. Node `(ix, iy)` sits at `origin + h*(ix + i*iy)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub origin: Complex64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn new(origin: Complex64, h: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(GlueError::InvalidLattice(format!("spacing h = {h}")));
        }
        if nx < 8 || ny < 8 {
            return Err(GlueError::InvalidLattice(format!("{nx}x{ny} nodes, need at least 8x8")));
        }
        Ok(Lattice { origin, h, nx, ny })
    }

    /// Cell-centred lattice covering a box with `margin` spare cells on every side.
    /// Node centres sit at half-integer multiples of `h`, so box edges on the `h` grid
    /// coincide with cell edges.
    pub fn covering(xmin: f64, xmax: f64, ymin: f64, ymax: f64, h: f64, margin: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(GlueError::InvalidLattice(format!("spacing h = {h}")));
        }
        let m = margin as f64;
        let ox = ((xmin / h).floor() - m) * h + 0.5 * h;
        let oy = ((ymin / h).floor() - m) * h + 0.5 * h;
        let nx = (((xmax - ox) / h).ceil() as usize + margin + 1).max(8);
        let ny = (((ymax - oy) / h).ceil() as usize + margin + 1).max(8);
        Lattice::new(Complex64::new(ox, oy), h, nx, ny)
    }

    /// Square lattice with a node exactly at `center` and at least `half_width + margin*h`
    /// of room on each side.
    pub fn centered(center: Complex64, half_width: f64, h: f64, margin: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(GlueError::InvalidLattice(format!("spacing h = {h}")));
        }
        let m = (half_width / h).ceil() as usize + margin;
        let off = m as f64 * h;
        Lattice::new(center - Complex64::new(off, off), h, 2 * m + 1, 2 * m + 1)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn point(&self, ix: usize, iy: usize) -> Complex64 {
        self.origin + Complex64::new(ix as f64 * self.h, iy as f64 * self.h)
    }

    pub fn point_of(&self, idx: usize) -> Complex64 {
        let (ix, iy) = self.coords(idx);
        self.point(ix, iy)
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let o = self.origin;
        (o.re, o.re + (self.nx - 1) as f64 * self.h, o.im, o.im + (self.ny - 1) as f64 * self.h)
    }

    fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = self.coords(idx);
        let (nx, ny) = (self.nx, self.ny);
        [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dx, dy)| {
            let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
            (jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny).then(|| jy as usize * nx + jx as usize)
        })
    }
}

/// Geometric description of a planar domain (open set).
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disc { center: Complex64, radius: f64 },
    /// Rectangle with circular corners of the given radius.
    SmoothedRectangle { x0: f64, x1: f64, y0: f64, y1: f64, radius: f64 },
}

impl Shape {
    pub fn contains(&self, z: Complex64) -> bool {
        match *self {
            Shape::Rectangle { x0, x1, y0, y1 } => z.re > x0 && z.re < x1 && z.im > y0 && z.im < y1,
            Shape::Disc { center, radius } => (z - center).norm_sqr() < radius * radius,
            Shape::SmoothedRectangle { x0, x1, y0, y1, radius } => {
                if !(z.re > x0 && z.re < x1 && z.im > y0 && z.im < y1) {
                    return false;
                }
                let r = radius.min(0.5 * (x1 - x0)).min(0.5 * (y1 - y0)).max(0.0);
                let cx = z.re.clamp(x0 + r, x1 - r);
                let cy = z.im.clamp(y0 + r, y1 - r);
                (z.re - cx).powi(2) + (z.im - cy).powi(2) < r * r
            }
        }
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rectangle { x0, x1, y0, y1 } | Shape::SmoothedRectangle { x0, x1, y0, y1, .. } => (x0, x1, y0, y1),
            Shape::Disc { center, radius } => {
                (center.re - radius, center.re + radius, center.im - radius, center.im + radius)
            }
        }
    }
}

/// A bounded planar domain on a lattice: the masked nodes are those whose centre lies
/// inside the shape. Each lattice cell also carries an 8x8 sub-sample occupancy mask
/// giving the area fraction used by quadrature.
#[derive(Debug)]
pub struct GridDomain {
    lattice: Lattice,
    mask: Vec<bool>,
    occupancy: Vec<u64>,
    nodes: Vec<usize>,
    node_of: Vec<usize>,
    boundary_nodes: Vec<usize>,
    weights: Vec<f64>,
    stencils: OnceLock<Stencils>,
}

pub const NO_NODE: usize = usize::MAX;

impl GridDomain {
    pub fn from_mask(lattice: Lattice, mask: Vec<bool>, occupancy: Vec<u64>) -> Result<Self> {
        if mask.len() != lattice.len() || occupancy.len() != lattice.len() {
            return Err(GlueError::InvalidLattice("mask length does not match lattice".into()));
        }
        let nodes: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if nodes.is_empty() {
            return Err(GlueError::EmptyMask);
        }
        let components = count_components(&lattice, &mask);
        if components != 1 {
            return Err(GlueError::Disconnected { components });
        }
        let mut node_of = vec![NO_NODE; mask.len()];
        for (k, &i) in nodes.iter().enumerate() {
            node_of[i] = k;
        }
        let boundary_nodes = nodes
            .iter()
            .enumerate()
            .filter(|(_, &i)| {
                let (ix, iy) = lattice.coords(i);
                let on_edge = ix == 0 || iy == 0 || ix + 1 == lattice.nx || iy + 1 == lattice.ny;
                on_edge || lattice.neighbors4(i).any(|j| !mask[j])
            })
            .map(|(k, _)| k)
            .collect();
        let weights = nodes.iter().map(|&i| occupancy[i].count_ones() as f64 / (SUB * SUB) as f64).collect();
        Ok(GridDomain { lattice, mask, occupancy, nodes, node_of, boundary_nodes, weights, stencils: OnceLock::new() })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn h(&self) -> f64 {
        self.lattice.h
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn occupancy(&self) -> &[u64] {
        &self.occupancy
    }
    /// Lattice indices of the masked nodes, ascending.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn node_of(&self, lattice_idx: usize) -> Option<usize> {
        let k = self.node_of[lattice_idx];
        (k != NO_NODE).then_some(k)
    }
    pub(crate) fn node_table(&self) -> &[usize] {
        &self.node_of
    }
    pub fn point(&self, node: usize) -> Complex64 {
        self.lattice.point_of(self.nodes[node])
    }
    pub fn points(&self) -> Vec<Complex64> {
        self.nodes.iter().map(|&i| self.lattice.point_of(i)).collect()
    }
    /// Boundary nodes as node indices (masked nodes with a non-masked 4-neighbour).
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }
    /// Area fraction of each node's cell covered by the shape.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn area(&self) -> f64 {
        self.h() * self.h() * self.weights.iter().sum::<f64>()
    }

    pub fn stencils(&self) -> &Stencils {
        self.stencils.get_or_init(|| Stencils::build(self))
    }

    pub fn same_as(&self, other: &GridDomain) -> bool {
        std::ptr::eq(self, other) || (self.lattice == other.lattice && self.mask == other.mask)
    }

    pub fn is_subset_of(&self, other: &GridDomain) -> bool {
        self.lattice == other.lattice && self.nodes.iter().all(|&i| other.mask[i])
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for z in self.points() {
            b = (b.0.min(z.re), b.1.max(z.re), b.2.min(z.im), b.3.max(z.im));
        }
        b
    }

    /// Nodes whose Euclidean distance to the nearest non-masked lattice position
    /// (positions beyond the lattice count as non-masked) is at least `depth` cells.
    pub fn interior_nodes(&self, depth: f64) -> Vec<usize> {
        let outside: Vec<bool> = self.mask.iter().map(|&m| !m).collect();
        let d = distance_to_set(&self.lattice, &outside, true);
        (0..self.len()).filter(|&k| d[self.nodes[k]] >= depth).collect()
    }

    pub fn intersection(a: &GridDomain, b: &GridDomain) -> Result<GridDomain> {
        combine(a, b, |x, y| x && y, |x, y| x & y)
    }
    pub fn union(a: &GridDomain, b: &GridDomain) -> Result<GridDomain> {
        combine(a, b, |x, y| x || y, |x, y| x | y)
    }
}

fn combine(a: &GridDomain, b: &GridDomain, m: impl Fn(bool, bool) -> bool, o: impl Fn(u64, u64) -> u64) -> Result<GridDomain> {
    if a.lattice != b.lattice {
        return Err(GlueError::LatticeMismatch);
    }
    let mask = a.mask.iter().zip(&b.mask).map(|(&x, &y)| m(x, y)).collect();
    let occ = a.occupancy.iter().zip(&b.occupancy).map(|(&x, &y)| o(x, y)).collect();
    GridDomain::from_mask(a.lattice, mask, occ)
}

/// Rasterize a shape onto a lattice.
pub fn build_domain(shape: &Shape, lattice: Lattice) -> Result<Arc<GridDomain>> {
    let (sx0, sx1, sy0, sy1) = shape.bounding_box();
    let (lx0, lx1, ly0, ly1) = lattice.bounds();
    let m = 2.0 * lattice.h - 1e-12;
    if sx0 < lx0 + m || sx1 > lx1 - m || sy0 < ly0 + m || sy1 > ly1 - m {
        return Err(GlueError::ShapeOutsideLattice);
    }
    let h = lattice.h;
    let mut mask = vec![false; lattice.len()];
    let mut occ = vec![0u64; lattice.len()];
    for idx in 0..lattice.len() {
        let p = lattice.point_of(idx);
        mask[idx] = shape.contains(p);
        let mut bits = 0u64;
        for b in 0..SUB {
            for a in 0..SUB {
                let off = Complex64::new(((a as f64 + 0.5) / SUB as f64 - 0.5) * h, ((b as f64 + 0.5) / SUB as f64 - 0.5) * h);
                if shape.contains(p + off) {
                    bits |= 1 << (b * SUB + a);
                }
            }
        }
        occ[idx] = bits;
    }
    GridDomain::from_mask(lattice, mask, occ).map(Arc::new)
}

fn count_components(lattice: &Lattice, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for s in 0..mask.len() {
        if !mask[s] || seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        queue.push_back(s);
        while let Some(i) = queue.pop_front() {
            for j in lattice.neighbors4(i) {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    count
}

/// One-cell dilation with the 8-neighbourhood.
pub fn dilate(lattice: &Lattice, mask: &[bool]) -> Vec<bool> {
    let (nx, ny) = (lattice.nx as i64, lattice.ny as i64);
    let mut out = mask.to_vec();
    for idx in 0..mask.len() {
        if !mask[idx] {
            continue;
        }
        let (ix, iy) = lattice.coords(idx);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx >= 0 && jy >= 0 && jx < nx && jy < ny {
                    out[(jy * nx + jx) as usize] = true;
                }
            }
        }
    }
    out
}

/// Euclidean distance in cells from every lattice node to the nearest node of `set`.
/// With `outside_counts`, positions just beyond the lattice edge also belong to the set.
pub fn distance_to_set(lattice: &Lattice, set: &[bool], outside_counts: bool) -> Vec<f64> {
    let (nx, ny) = (lattice.nx, lattice.ny);
    // Only set nodes with a non-set 8-neighbour can be nearest to a non-set node.
    let mut frontier: Vec<(f64, f64)> = Vec::new();
    for idx in 0..set.len() {
        if !set[idx] {
            continue;
        }
        let (ix, iy) = lattice.coords(idx);
        let mut edge = false;
        'outer: for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny && !set[jy as usize * nx + jx as usize] {
                    edge = true;
                    break 'outer;
                }
            }
        }
        if edge {
            frontier.push((ix as f64, iy as f64));
        }
    }
    (0..set.len())
        .map(|idx| {
            if set[idx] {
                return 0.0;
            }
            let (ix, iy) = lattice.coords(idx);
            let (x, y) = (ix as f64, iy as f64);
            let mut best = f64::INFINITY;
            if outside_counts {
                best = (x + 1.0).min(y + 1.0).min(nx as f64 - x).min(ny as f64 - y);
            }
            for &(fx, fy) in &frontier {
                let d2 = (fx - x).powi(2) + (fy - y).powi(2);
                if d2 < best * best {
                    best = d2.sqrt();
                }
            }
            best
        })
        .collect()
}

/// Real values on every lattice node, with the mask that norms should respect.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub domain_mask: Vec<bool>,
}

impl ScalarField {
    /// Values at the nodes of `domain`, in node order.
    pub fn on(&self, domain: &GridDomain) -> Vec<f64> {
        domain.nodes().iter().map(|&i| self.values[i]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { values: self.values.iter().map(|&v| f(v)).collect(), domain_mask: self.domain_mask.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    EmptyIntersection,
    IntersectionDisconnected,
    IntersectionHasHoles,
    ClosuresMeet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairVerdict {
    Accept,
    Reject(RejectReason),
}

pub fn validate_good_pair(omega1: &GridDomain, omega2: &GridDomain) -> Result<PairVerdict> {
    let lat = omega1.lattice;
    if lat != omega2.lattice {
        return Err(GlueError::LatticeMismatch);
    }
    let (m1, m2) = (&omega1.mask, &omega2.mask);
    let inter: Vec<bool> = m1.iter().zip(m2).map(|(&a, &b)| a && b).collect();
    if !inter.iter().any(|&b| b) {
        return Ok(PairVerdict::Reject(RejectReason::EmptyIntersection));
    }
    if count_components(&lat, &inter) != 1 {
        return Ok(PairVerdict::Reject(RejectReason::IntersectionDisconnected));
    }
    if has_holes(&lat, &inter) {
        return Ok(PairVerdict::Reject(RejectReason::IntersectionHasHoles));
    }
    let d12 = dilate(&lat, &m1.iter().zip(m2).map(|(&a, &b)| a && !b).collect::<Vec<_>>());
    let d21 = dilate(&lat, &m2.iter().zip(m1).map(|(&a, &b)| a && !b).collect::<Vec<_>>());
    if d12.iter().zip(&d21).any(|(&a, &b)| a && b) {
        return Ok(PairVerdict::Reject(RejectReason::ClosuresMeet));
    }
    Ok(PairVerdict::Accept)
}

fn has_holes(lattice: &Lattice, set: &[bool]) -> bool {
    let mut seen = vec![false; set.len()];
    let mut queue = VecDeque::new();
    for idx in 0..set.len() {
        let (ix, iy) = lattice.coords(idx);
        let border = ix == 0 || iy == 0 || ix + 1 == lattice.nx || iy + 1 == lattice.ny;
        if border && !set[idx] {
            seen[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in lattice.neighbors4(i) {
            if !set[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..set.len()).any(|i| !set[i] && !seen[i])
}

/// Quintic smoothstep on [0, 1], clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// An accepted pair of domains with the cut-off data built on it.
#[derive(Debug, Clone)]
pub struct GoodPair {
    pub omega1: Arc<GridDomain>,
    pub omega2: Arc<GridDomain>,
    pub union: Arc<GridDomain>,
    pub overlap: Arc<GridDomain>,
    /// 1 near the closure of Omega1 \ Omega2, 0 near the closure of Omega2 \ Omega1.
    pub chi: ScalarField,
    pub k1_mask: Vec<bool>,
    pub k2_mask: Vec<bool>,
    pub beta1: ScalarField,
    pub beta2: ScalarField,
    /// Distance in cells between the two dilated difference sets.
    pub transition_cells: f64,
}

pub fn build_cutoffs(omega1: &Arc<GridDomain>, omega2: &Arc<GridDomain>) -> Result<GoodPair> {
    match validate_good_pair(omega1, omega2)? {
        PairVerdict::Accept => {}
        PairVerdict::Reject(r) => return Err(GlueError::NotGoodPair(r)),
    }
    let lat = omega1.lattice;
    let (m1, m2) = (&omega1.mask, &omega2.mask);
    let c1 = dilate(&lat, &m1.iter().zip(m2).map(|(&a, &b)| a && !b).collect::<Vec<_>>());
    let c2 = dilate(&lat, &m2.iter().zip(m1).map(|(&a, &b)| a && !b).collect::<Vec<_>>());
    let d1 = distance_to_set(&lat, &c1, false);
    let d2 = distance_to_set(&lat, &c2, false);
    let transition_cells = if c1.iter().any(|&b| b) && c2.iter().any(|&b| b) {
        (0..lat.len()).filter(|&i| c2[i]).map(|i| d1[i]).fold(f64::INFINITY, f64::min)
    } else {
        f64::INFINITY
    };
    if transition_cells < 8.0 {
        return Err(GlueError::OverlapTooThin { cells: transition_cells });
    }
    let chi_values: Vec<f64> = (0..lat.len())
        .map(|i| {
            let (a, b) = (d1[i], d2[i]);
            if a.is_infinite() && b.is_infinite() {
                0.5
            } else if a.is_infinite() {
                0.0
            } else if b.is_infinite() {
                1.0
            } else {
                smoothstep(b / (a + b))
            }
        })
        .collect();
    let union = Arc::new(GridDomain::union(omega1, omega2)?);
    let overlap = Arc::new(GridDomain::intersection(omega1, omega2)?);
    let closure = dilate(&lat, &overlap.mask);
    let k1_mask = (0..lat.len()).map(|i| closure[i] && chi_values[i] <= 1.0 / 3.0).collect();
    let k2_mask = (0..lat.len()).map(|i| closure[i] && chi_values[i] >= 2.0 / 3.0).collect();
    let chi = ScalarField { values: chi_values, domain_mask: union.mask.clone() };
    let mut beta1 = chi.map(beta1_profile);
    let mut beta2 = chi.map(beta2_profile);
    beta1.domain_mask = overlap.mask.clone();
    beta2.domain_mask = overlap.mask.clone();
    Ok(GoodPair {
        omega1: omega1.clone(),
        omega2: omega2.clone(),
        union,
        overlap,
        chi,
        k1_mask,
        k2_mask,
        beta1,
        beta2,
        transition_cells,
    })
}

pub fn beta1_profile(chi: f64) -> f64 {
    smoothstep((chi - 1.0 / 9.0) * 9.0)
}

pub fn beta2_profile(chi: f64) -> f64 {
    smoothstep((chi - 7.0 / 9.0) * 9.0)
}

impl GoodPair {
    /// The same pair with the roles of the two domains exchanged (chi becomes 1 - chi).
    pub fn swapped(&self) -> Result<GoodPair> {
        build_cutoffs(&self.omega2, &self.omega1)
    }

    pub fn lattice(&self) -> &Lattice {
        self.union.lattice()
    }
}

/// The rectangle pair (-2, 0.5)x(0, 1) and (-0.5, 2)x(0, 1).
pub fn rectangle_pair(h: f64) -> Result<(Arc<GridDomain>, Arc<GridDomain>)> {
    let lat = Lattice::covering(-2.0, 2.0, 0.0, 1.0, h, 3)?;
    let a = build_domain(&Shape::Rectangle { x0: -2.0, x1: 0.5, y0: 0.0, y1: 1.0 }, lat)?;
    let b = build_domain(&Shape::Rectangle { x0: -0.5, x1: 2.0, y0: 0.0, y1: 1.0 }, lat)?;
    Ok((a, b))
}

/// The unit disc on a node-centred lattice.
pub fn unit_disc(h: f64) -> Result<Arc<GridDomain>> {
    let lat = Lattice::centered(Complex64::new(0.0, 0.0), 1.0, h, 3)?;
    build_domain(&Shape::Disc { center: Complex64::new(0.0, 0.0), radius: 1.0 }, lat)
}

/// A flat pair whose overlap (-1, 1)x(0, 0.25) is eight times wider than tall.
/// Polynomials separate its two K sets at moderate degree.
pub fn slab_pair(h: f64) -> Result<(Arc<GridDomain>, Arc<GridDomain>)> {
    let lat = Lattice::covering(-3.0, 3.0, 0.0, 0.25, h, 3)?;
    let a = build_domain(&Shape::Rectangle { x0: -3.0, x1: 1.0, y0: 0.0, y1: 0.25 }, lat)?;
    let b = build_domain(&Shape::Rectangle { x0: -1.0, x1: 3.0, y0: 0.0, y1: 0.25 }, lat)?;
    Ok((a, b))
}
