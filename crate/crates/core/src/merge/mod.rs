//! Building the inverted hierarchical query structure.
//!
//! The server (tier 1) keeps every original query. Tier `t` keeps the
//! queries of tier `t - 1` greedily merged down to at most `k_t` MBRs, so
//! the sets get coarser and smaller toward the leaves. Each merged query
//! records which queries of the tier above it encloses, which makes the
//! structure a forest rooted at the leaf tier.

mod greedy;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GeometryError, Result};
use crate::geometry::Rect;
use crate::textfmt::{content_lines, fmt_exact, parse_f64, parse_usize};

use greedy::{greedy_merge, Group, StopRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedQuery {
    /// Position within its tier.
    pub id: usize,
    /// 1-based tier.
    pub tier: usize,
    pub region: Rect,
    /// Ids of the enclosed queries one tier closer to the server.
    pub children: Vec<usize>,
}

/// Per-tier query counts `k_2..k_h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeBudget {
    counts: Vec<usize>,
}

impl MergeBudget {
    /// `counts[0]` is `k_2`. Must be non-increasing and at least 1.
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Budget("need a count for at least one tier".into()));
        }
        if counts.contains(&0) {
            return Err(Error::Budget("every tier must keep at least one query".into()));
        }
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Budget(format!("counts must be non-increasing: {counts:?}")));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `k_t` for tier `t >= 2`.
    pub fn for_tier(&self, tier: usize) -> usize {
        self.counts[tier - 2]
    }

    /// Height of the network this budget is for.
    pub fn height(&self) -> usize {
        self.counts.len() + 1
    }
}

/// `k_t = max(1, round(N_Q * m^(t-1)))` for `t = 2..=h`, rounding halves up.
pub fn budget_from_rate(n_queries: usize, merge_rate: f64, height: usize) -> MergeBudget {
    assert!(n_queries >= 1 && height >= 2, "need N_Q >= 1 and h >= 2");
    assert!((0.0..=1.0).contains(&merge_rate), "merge rate {merge_rate} outside [0, 1]");
    let counts = (2..=height)
        .map(|t| {
            let exact = n_queries as f64 * merge_rate.powi(t as i32 - 1);
            ((exact + 0.5).floor() as usize).max(1)
        })
        .collect();
    MergeBudget { counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertedQueryStructure {
    tiers: Vec<Vec<MergedQuery>>,
}

impl InvertedQueryStructure {
    pub fn height(&self) -> usize {
        self.tiers.len()
    }

    pub fn dim(&self) -> usize {
        self.tiers[0][0].region.dim()
    }

    /// Query set `Q_t` (1-based tier).
    pub fn tier(&self, tier: usize) -> &[MergedQuery] {
        &self.tiers[tier - 1]
    }

    pub fn tiers(&self) -> &[Vec<MergedQuery>] {
        &self.tiers
    }

    pub fn originals(&self) -> Vec<Rect> {
        self.tiers[0].iter().map(|q| q.region.clone()).collect()
    }

    /// Id of the tier-`t` query enclosing each original, for `t = 1..=h`.
    pub fn ancestry(&self, original: usize) -> Vec<usize> {
        let mut path = vec![original];
        for t in 2..=self.height() {
            let below = *path.last().unwrap();
            let parent = self.tier(t)
                .iter()
                .find(|q| q.children.contains(&below))
                .map(|q| q.id)
                .expect("every query has a parent in the next tier");
            path.push(parent);
        }
        path
    }

    /// Checks the structural invariants; used on parsed input and in tests.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse { line: 0, msg });
        if self.tiers.len() < 2 || self.tiers[0].is_empty() {
            return bad("need at least two tiers and one original query".into());
        }
        let dim = self.dim();
        for (t, queries) in self.tiers.iter().enumerate() {
            let tier = t + 1;
            for (i, q) in queries.iter().enumerate() {
                if q.id != i || q.tier != tier {
                    return bad(format!("query {i} of tier {tier} carries id {} tier {}", q.id, q.tier));
                }
                if q.region.dim() != dim {
                    return Err(GeometryError::DimensionMismatch {
                        left: dim,
                        right: q.region.dim(),
                    }
                    .into());
                }
                if tier == 1 && !q.children.is_empty() {
                    return bad("original queries cannot have children".into());
                }
            }
            if tier == 1 {
                continue;
            }
            let above = &self.tiers[t - 1];
            if queries.len() > above.len() {
                return bad(format!("tier {tier} holds more queries than tier {}", tier - 1));
            }
            let mut seen = vec![false; above.len()];
            for q in queries {
                if q.children.is_empty() {
                    return bad(format!("query {} of tier {tier} has no children", q.id));
                }
                let mut bound: Option<Rect> = None;
                for &c in &q.children {
                    if c >= above.len() || seen[c] {
                        return bad(format!("child {c} of tier {tier} is missing or shared"));
                    }
                    seen[c] = true;
                    let r = &above[c].region;
                    bound = Some(match bound {
                        None => r.clone(),
                        Some(b) => crate::geometry::mbr_unchecked(&b, r),
                    });
                }
                if bound.as_ref() != Some(&q.region) {
                    return bad(format!("query {} of tier {tier} is not the MBR of its children", q.id));
                }
            }
            if seen.iter().any(|s| !s) {
                return bad(format!("some queries of tier {} have no parent", tier - 1));
            }
        }
        Ok(())
    }

    /// Line format: a `height <h> dim <d>` header, then one query per line
    /// as `tier id lo_1 hi_1 ... lo_d hi_d child...`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# inverted hierarchical query structure\n");
        writeln!(out, "height {} dim {}", self.height(), self.dim()).unwrap();
        for queries in &self.tiers {
            for q in queries {
                write!(out, "{} {}", q.tier, q.id).unwrap();
                for (l, h) in q.region.lo().iter().zip(q.region.hi()) {
                    write!(out, " {} {}", fmt_exact(*l), fmt_exact(*h)).unwrap();
                }
                for c in &q.children {
                    write!(out, " {c}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "empty input".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (height, dim) = match fields.as_slice() {
            ["height", h, "dim", d] => (parse_usize(h, hline)?, parse_usize(d, hline)?),
            _ => {
                return Err(Error::Parse {
                    line: hline,
                    msg: "expected `height <h> dim <d>`".into(),
                })
            }
        };
        let mut tiers: Vec<Vec<MergedQuery>> = vec![Vec::new(); height];
        for (line, content) in lines {
            let toks: Vec<&str> = content.split_whitespace().collect();
            if toks.len() < 2 + 2 * dim {
                return Err(Error::Parse {
                    line,
                    msg: "too few fields".into(),
                });
            }
            let tier = parse_usize(toks[0], line)?;
            let id = parse_usize(toks[1], line)?;
            if tier == 0 || tier > height {
                return Err(Error::Parse {
                    line,
                    msg: format!("tier {tier} out of range"),
                });
            }
            let bounds = toks[2..2 + 2 * dim]
                .iter()
                .map(|t| parse_f64(t, line))
                .collect::<Result<Vec<_>>>()?;
            let region = Rect::new(
                bounds.iter().step_by(2).copied().collect(),
                bounds.iter().skip(1).step_by(2).copied().collect(),
            )
            .map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            let children = toks[2 + 2 * dim..]
                .iter()
                .map(|t| parse_usize(t, line))
                .collect::<Result<Vec<_>>>()?;
            tiers[tier - 1].push(MergedQuery {
                id,
                tier,
                region,
                children,
            });
        }
        let structure = Self { tiers };
        structure.validate()?;
        Ok(structure)
    }
}

fn check_queries(queries: &[Rect]) -> Result<()> {
    let first = queries.first().ok_or(GeometryError::EmptySet)?;
    for q in queries {
        if q.dim() != first.dim() {
            return Err(GeometryError::DimensionMismatch {
                left: first.dim(),
                right: q.dim(),
            }
            .into());
        }
    }
    Ok(())
}

fn to_tier(groups: Vec<Group>, tier: usize) -> Vec<MergedQuery> {
    groups
        .into_iter()
        .enumerate()
        .map(|(id, g)| MergedQuery {
            id,
            tier,
            region: g.region,
            children: g.members,
        })
        .collect()
}

fn identity_tier(above: &[MergedQuery], tier: usize) -> Vec<MergedQuery> {
    above
        .iter()
        .map(|q| MergedQuery {
            id: q.id,
            tier,
            region: q.region.clone(),
            children: vec![q.id],
        })
        .collect()
}

/// Progressive merging: tier `t` is tier `t - 1` greedily merged until at
/// most `k_t` queries remain, continuing past negative scores if needed.
pub fn progressive_merge(queries: &[Rect], height: usize, budget: &MergeBudget) -> Result<InvertedQueryStructure> {
    check_queries(queries)?;
    if budget.height() != height {
        return Err(Error::Budget(format!(
            "budget covers height {} but network height is {height}",
            budget.height()
        )));
    }
    let mut tiers = vec![queries
        .iter()
        .enumerate()
        .map(|(id, r)| MergedQuery {
            id,
            tier: 1,
            region: r.clone(),
            children: Vec::new(),
        })
        .collect::<Vec<_>>()];
    for t in 2..=height {
        let above = tiers.last().unwrap();
        let k = budget.for_tier(t);
        let next = if above.len() <= k {
            identity_tier(above, t)
        } else {
            let rects: Vec<Rect> = above.iter().map(|q| q.region.clone()).collect();
            to_tier(greedy_merge(&rects, StopRule::AtMost(k)), t)
        };
        tiers.push(next);
    }
    Ok(InvertedQueryStructure { tiers })
}

/// Flat-network baseline: merge the best pair while its `O - D` is
/// non-negative. Returned queries sit at tier 2 with original ids as
/// children.
pub fn iterative_merge_baseline(queries: &[Rect]) -> Result<Vec<MergedQuery>> {
    check_queries(queries)?;
    Ok(to_tier(greedy_merge(queries, StopRule::NonNegative), 2))
}

/// The baseline deployment: originals at the server and the same merged
/// set at every other tier.
pub fn baseline_structure(queries: &[Rect], height: usize) -> Result<InvertedQueryStructure> {
    if height < 2 {
        return Err(Error::Topology(format!("height must be at least 2, got {height}")));
    }
    let merged = iterative_merge_baseline(queries)?;
    let mut tiers = vec![queries
        .iter()
        .enumerate()
        .map(|(id, r)| MergedQuery {
            id,
            tier: 1,
            region: r.clone(),
            children: Vec::new(),
        })
        .collect::<Vec<_>>()];
    tiers.push(merged);
    for t in 3..=height {
        let next = identity_tier(tiers.last().unwrap(), t);
        tiers.push(next);
    }
    Ok(InvertedQueryStructure { tiers })
}
