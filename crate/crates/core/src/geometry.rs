//! Axis-aligned rectangles in the normalized domain `[0,1]^d`.
//!
//! Queries and merged queries are both [`Rect`]s; sensor readings are
//! [`Point`]s. All intervals are closed, so a point lying on a face of a
//! query matches it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// A data element: one coordinate per domain axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::ZeroDimension);
        }
        for (axis, &x) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(GeometryError::OutOfDomain { axis, value: x });
            }
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Closed hyper-rectangle `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.is_empty() {
            return Err(GeometryError::ZeroDimension);
        }
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch {
                left: lo.len(),
                right: hi.len(),
            });
        }
        for axis in 0..lo.len() {
            let (l, h) = (lo[axis], hi[axis]);
            if !(0.0..=1.0).contains(&l) {
                return Err(GeometryError::OutOfDomain { axis, value: l });
            }
            if !(0.0..=1.0).contains(&h) {
                return Err(GeometryError::OutOfDomain { axis, value: h });
            }
            if l > h {
                return Err(GeometryError::Inverted { axis, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// The whole domain `[0,1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .product()
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn encloses(&self, other: &Rect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|k| self.lo[k] <= other.lo[k] && other.hi[k] <= self.hi[k])
    }
}

fn check_dims(a: usize, b: usize) -> Result<(), GeometryError> {
    if a == b {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { left: a, right: b })
    }
}

pub fn volume(r: &Rect) -> f64 {
    r.volume()
}

/// Volume of the overlap of `a` and `b`, the `O` term of the merge score.
pub fn intersection_volume(a: &Rect, b: &Rect) -> Result<f64, GeometryError> {
    check_dims(a.dim(), b.dim())?;
    Ok(overlap(a, b))
}

fn overlap(a: &Rect, b: &Rect) -> f64 {
    let mut v = 1.0;
    for k in 0..a.dim() {
        let w = a.hi[k].min(b.hi[k]) - a.lo[k].max(b.lo[k]);
        if w <= 0.0 {
            return 0.0;
        }
        v *= w;
    }
    v
}

/// Minimum bounding rectangle of two rectangles.
pub fn mbr(a: &Rect, b: &Rect) -> Result<Rect, GeometryError> {
    check_dims(a.dim(), b.dim())?;
    Ok(mbr_unchecked(a, b))
}

pub(crate) fn mbr_unchecked(a: &Rect, b: &Rect) -> Rect {
    Rect {
        lo: a.lo.iter().zip(&b.lo).map(|(x, y)| x.min(*y)).collect(),
        hi: a.hi.iter().zip(&b.hi).map(|(x, y)| x.max(*y)).collect(),
    }
}

fn mbr_volume(a: &Rect, b: &Rect) -> f64 {
    let mut v = 1.0;
    for k in 0..a.dim() {
        v *= a.hi[k].max(b.hi[k]) - a.lo[k].min(b.lo[k]);
    }
    v
}

/// Size of the dead region of merging `a` and `b`: the part of their MBR
/// covered by neither input. Never negative.
pub fn dead_region_size(a: &Rect, b: &Rect) -> Result<f64, GeometryError> {
    check_dims(a.dim(), b.dim())?;
    let dead = (mbr_volume(a, b) + overlap(a, b)) - (a.volume() + b.volume());
    Ok(dead.max(0.0))
}

/// Greedy merge score `O - D` of a candidate pair.
///
/// Algebraically `O - D = vol(a) + vol(b) - vol(mbr(a, b))`; that form is
/// symmetric bit-for-bit and is what the merge engines rank by.
pub fn merge_score(a: &Rect, b: &Rect) -> Result<f64, GeometryError> {
    check_dims(a.dim(), b.dim())?;
    Ok(merge_score_unchecked(a, b))
}

pub(crate) fn merge_score_unchecked(a: &Rect, b: &Rect) -> f64 {
    a.volume() + b.volume() - mbr_volume(a, b)
}

/// Closed-interval containment test.
pub fn contains(r: &Rect, p: &Point) -> Result<bool, GeometryError> {
    check_dims(r.dim(), p.dim())?;
    Ok(contains_unchecked(r, p))
}

pub(crate) fn contains_unchecked(r: &Rect, p: &Point) -> bool {
    r.lo
        .iter()
        .zip(&r.hi)
        .zip(&p.coords)
        .all(|((l, h), x)| *l <= *x && *x <= *h)
}

/// Knobs for [`union_volume_with`]. Only consulted for `d > 3`.
#[derive(Clone, Copy, Debug)]
pub struct UnionOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for UnionOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
        }
    }
}

/// Measure of the union of `rects`.
///
/// Exact for `d <= 3`; a seeded Monte-Carlo estimate above that.
pub fn union_volume(rects: &[Rect]) -> Result<f64, GeometryError> {
    union_volume_with(rects, &UnionOptions::default())
}

pub fn union_volume_with(rects: &[Rect], opts: &UnionOptions) -> Result<f64, GeometryError> {
    let first = rects.first().ok_or(GeometryError::EmptySet)?;
    let dim = first.dim();
    for r in rects {
        check_dims(dim, r.dim())?;
    }
    let v = match dim {
        1 => union_1d(rects.iter().map(|r| (r.lo[0], r.hi[0])).collect()),
        2 => union_2d(rects.iter().map(|r| [r.lo[0], r.hi[0], r.lo[1], r.hi[1]]).collect()),
        3 => union_3d(rects),
        _ => union_monte_carlo(rects, opts),
    };
    let max_single = rects.iter().map(Rect::volume).fold(0.0, f64::max);
    let sum: f64 = rects.iter().map(Rect::volume).sum();
    Ok(v.clamp(max_single, sum.min(1.0).max(max_single)))
}

fn union_1d(mut spans: Vec<(f64, f64)>) -> f64 {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (lo, hi) in spans {
        match current {
            Some((cl, ch)) if lo <= ch => current = Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                total += ch - cl;
                current = Some((lo, hi));
            }
            None => current = Some((lo, hi)),
        }
    }
    if let Some((cl, ch)) = current {
        total += ch - cl;
    }
    total
}

/// Segment tree over compressed y coordinates tracking covered length.
struct CoverTree {
    ys: Vec<f64>,
    count: Vec<u32>,
    covered: Vec<f64>,
}

impl CoverTree {
    fn new(ys: Vec<f64>) -> Self {
        let n = ys.len().max(2) - 1;
        Self {
            ys,
            count: vec![0; 4 * n],
            covered: vec![0.0; 4 * n],
        }
    }

    fn update(&mut self, lo: usize, hi: usize, delta: i32) {
        let n = self.ys.len() - 1;
        if lo < hi {
            self.update_node(1, 0, n, lo, hi, delta);
        }
    }

    fn update_node(&mut self, node: usize, l: usize, r: usize, lo: usize, hi: usize, delta: i32) {
        if hi <= l || r <= lo {
            return;
        }
        if lo <= l && r <= hi {
            self.count[node] = (self.count[node] as i32 + delta) as u32;
        } else {
            let mid = (l + r) / 2;
            self.update_node(2 * node, l, mid, lo, hi, delta);
            self.update_node(2 * node + 1, mid, r, lo, hi, delta);
        }
        self.covered[node] = if self.count[node] > 0 {
            self.ys[r] - self.ys[l]
        } else if r - l == 1 {
            0.0
        } else {
            self.covered[2 * node] + self.covered[2 * node + 1]
        };
    }

    fn covered(&self) -> f64 {
        self.covered[1]
    }
}

/// Sweep along x with a covered-length segment tree over y.
/// Each rect is `[x_lo, x_hi, y_lo, y_hi]`.
fn union_2d(rects: Vec<[f64; 4]>) -> f64 {
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r[2], r[3]]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    if ys.len() < 2 {
        return 0.0;
    }
    let y_index = |y: f64| ys.partition_point(|&v| v < y);

    let mut events: Vec<(f64, i32, usize, usize)> = Vec::with_capacity(2 * rects.len());
    for r in &rects {
        if r[0] == r[1] || r[2] == r[3] {
            continue;
        }
        let (a, b) = (y_index(r[2]), y_index(r[3]));
        events.push((r[0], 1, a, b));
        events.push((r[1], -1, a, b));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut tree = CoverTree::new(ys.clone());
    let mut area = 0.0;
    let mut last_x = match events.first() {
        Some(e) => e.0,
        None => return 0.0,
    };
    for (x, delta, a, b) in events {
        area += tree.covered() * (x - last_x);
        tree.update(a, b, delta);
        last_x = x;
    }
    area
}

/// Slab decomposition along the first axis, exact 2-D union per slab.
fn union_3d(rects: &[Rect]) -> f64 {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.lo[0], r.hi[0]]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by(|&i, &j| rects[i].lo[0].total_cmp(&rects[j].lo[0]));

    let mut volume = 0.0;
    let mut active: Vec<usize> = Vec::new();
    let mut next = 0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        while next < order.len() && rects[order[next]].lo[0] <= x0 {
            active.push(order[next]);
            next += 1;
        }
        active.retain(|&i| rects[i].hi[0] > x0);
        let slab: Vec<[f64; 4]> = active
            .iter()
            .filter(|&&i| rects[i].hi[0] >= x1)
            .map(|&i| {
                let r = &rects[i];
                [r.lo[1], r.hi[1], r.lo[2], r.hi[2]]
            })
            .collect();
        if !slab.is_empty() {
            volume += (x1 - x0) * union_2d(slab);
        }
    }
    volume
}

fn union_monte_carlo(rects: &[Rect], opts: &UnionOptions) -> f64 {
    let dim = rects[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coords = vec![0.0; dim];
    let mut hits = 0usize;
    let samples = opts.samples.max(1);
    for _ in 0..samples {
        for c in coords.iter_mut() {
            *c = rng.gen::<f64>();
        }
        let inside = rects.iter().any(|r| {
            (0..dim).all(|k| r.lo[k] <= coords[k] && coords[k] <= r.hi[k])
        });
        if inside {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}
