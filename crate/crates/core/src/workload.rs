//! Synthetic uniform workloads: hypercube queries of fixed selectivity and
//! one uniformly placed reading per sensor per epoch.
//!
//! Everything here is a pure function of its spec and seed. Queries come
//! from a single ChaCha stream, so a workload of `n + 1` queries always
//! extends the workload of `n` queries with the same seed.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{union_volume, Point, Rect};
use crate::network::{DataStream, NetworkTopology};
use crate::textfmt::{content_lines, fmt_exact, parse_f64};

/// Upper bound on the number of queries a by-cover workload may draw.
pub const MAX_COVER_QUERIES: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WorkloadMode {
    /// Exactly this many queries.
    ByCount(usize),
    /// Queries are appended until the cover reaches the target.
    ByCover(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub dim: usize,
    pub selectivity: f64,
    pub mode: WorkloadMode,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn by_count(dim: usize, selectivity: f64, n_queries: usize, seed: u64) -> Self {
        Self {
            dim,
            selectivity,
            mode: WorkloadMode::ByCount(n_queries),
            seed,
        }
    }

    pub fn by_cover(dim: usize, selectivity: f64, cover: f64, seed: u64) -> Self {
        Self {
            dim,
            selectivity,
            mode: WorkloadMode::ByCover(cover),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Workload("dimension must be at least 1".into()));
        }
        if !(self.selectivity > 0.0 && self.selectivity < 1.0) {
            return Err(Error::Workload(format!(
                "selectivity must lie in (0, 1), got {}",
                self.selectivity
            )));
        }
        match self.mode {
            WorkloadMode::ByCount(0) => Err(Error::Workload("need at least one query".into())),
            WorkloadMode::ByCover(c) if !(c > 0.0 && c < 1.0) => Err(Error::Workload(format!(
                "target cover must lie in (0, 1), got {c}"
            ))),
            _ => Ok(()),
        }
    }

    /// Side length of every generated hypercube.
    pub fn side(&self) -> f64 {
        self.selectivity.powf(1.0 / self.dim as f64)
    }
}

/// Endless stream of hypercube queries for one seed.
struct QueryStream {
    rng: ChaCha8Rng,
    dim: usize,
    side: f64,
}

impl QueryStream {
    fn new(spec: &WorkloadSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            dim: spec.dim,
            side: spec.side(),
        }
    }

    fn next_query(&mut self) -> Rect {
        let half = self.side / 2.0;
        let mut lo = Vec::with_capacity(self.dim);
        let mut hi = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            let centre: f64 = self.rng.gen();
            // translate the cube back inside the domain
            let l = (centre - half).clamp(0.0, 1.0 - self.side);
            lo.push(l);
            hi.push((l + self.side).min(1.0));
        }
        Rect::new(lo, hi).expect("generated cube lies in the unit domain")
    }

    fn take(&mut self, n: usize) -> Vec<Rect> {
        (0..n).map(|_| self.next_query()).collect()
    }
}

pub fn generate_queries(spec: &WorkloadSpec) -> Result<Vec<Rect>> {
    spec.validate()?;
    let mut stream = QueryStream::new(spec);
    match spec.mode {
        WorkloadMode::ByCount(n) => Ok(stream.take(n)),
        WorkloadMode::ByCover(target) => {
            // cover of a prefix is monotone in its length: gallop, then bisect
            let mut pool = stream.take(1);
            let reaches = |pool: &[Rect], n: usize| -> Result<bool> {
                Ok(union_volume(&pool[..n])? >= target)
            };
            let mut hi = 1;
            while !reaches(&pool, hi)? {
                if hi >= MAX_COVER_QUERIES {
                    return Err(Error::Workload(format!(
                        "cover {target} not reached within {MAX_COVER_QUERIES} queries"
                    )));
                }
                let next = (hi * 2).min(MAX_COVER_QUERIES);
                pool.extend(stream.take(next - hi));
                hi = next;
            }
            let mut lo = hi / 2;
            // invariant: prefix `lo` misses the target (or lo == 0), prefix `hi` reaches it
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if reaches(&pool, mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            pool.truncate(hi);
            Ok(pool)
        }
    }
}

/// Cover of a query set: union volume over the (unit) domain volume.
pub fn measure_cover(queries: &[Rect]) -> Result<f64> {
    Ok(union_volume(queries)?)
}

/// One uniform reading per non-server node per epoch, in topology order.
pub fn generate_data(topology: &NetworkTopology, epochs: usize, dim: usize, seed: u64) -> Result<DataStream> {
    if epochs == 0 {
        return Err(Error::Workload("need at least one epoch".into()));
    }
    if dim == 0 {
        return Err(Error::Workload("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = topology.sensor_count();
    let readings = (0..epochs)
        .map(|_| {
            (0..sensors)
                .map(|_| {
                    let coords = (0..dim).map(|_| rng.gen::<f64>()).collect();
                    Point::new(coords).expect("uniform sample lies in [0, 1)")
                })
                .collect()
        })
        .collect();
    Ok(DataStream::new(*topology, dim, readings))
}

/// One rectangle per line: `lo_1 hi_1 ... lo_d hi_d`.
pub fn write_rects(rects: &[Rect]) -> String {
    let mut out = String::new();
    for r in rects {
        let fields: Vec<String> = r
            .lo()
            .iter()
            .zip(r.hi())
            .flat_map(|(l, h)| [fmt_exact(*l), fmt_exact(*h)])
            .collect();
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    out
}

pub fn read_rects(text: &str) -> Result<Vec<Rect>> {
    let mut rects: Vec<Rect> = Vec::new();
    for (line, content) in content_lines(text) {
        let values = content
            .split_whitespace()
            .map(|t| parse_f64(t, line))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::Parse {
                line,
                msg: "expected an even number of bounds".into(),
            });
        }
        let lo = values.iter().step_by(2).copied().collect();
        let hi = values.iter().skip(1).step_by(2).copied().collect();
        let rect = Rect::new(lo, hi).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if let Some(first) = rects.first() {
            if first.dim() != rect.dim() {
                return Err(Error::Parse {
                    line,
                    msg: "mixed dimensions".into(),
                });
            }
        }
        rects.push(rect);
    }
    Ok(rects)
}

/// One point per line: `x_1 ... x_d`.
pub fn write_points(points: &[Point]) -> String {
    let mut out = String::new();
    for p in points {
        let fields: Vec<String> = p.coords().iter().map(|x| fmt_exact(*x)).collect();
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    out
}

pub fn read_points(text: &str) -> Result<Vec<Point>> {
    content_lines(text)
        .map(|(line, content)| {
            let coords = content
                .split_whitespace()
                .map(|t| parse_f64(t, line))
                .collect::<Result<Vec<_>>>()?;
            Point::new(coords).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}
