//! The hierarchical sensor network and progressive query processing.
//!
//! The network is a complete `f`-ary tree of height `h`. Tier 1 is the
//! server; tier `t` holds `f^(t-1)` nodes. Every node except the server
//! produces one reading per epoch, filters its own reading together with
//! whatever its children forwarded through the query set of its tier, and
//! forwards the survivors to its parent. The server answers every original
//! query on what arrives.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contains_unchecked, Point, Rect};
use crate::merge::{InvertedQueryStructure, MergedQuery};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    height: usize,
    fanout: usize,
}

impl NetworkTopology {
    pub fn new(height: usize, fanout: usize) -> Result<Self> {
        if height < 2 {
            return Err(Error::Topology(format!("height must be at least 2, got {height}")));
        }
        if fanout < 1 {
            return Err(Error::Topology("fanout must be at least 1".into()));
        }
        let mut nodes: usize = 0;
        for t in 1..=height {
            let at_tier = fanout
                .checked_pow((t - 1) as u32)
                .ok_or_else(|| Error::Topology("tree too large".into()))?;
            nodes = nodes
                .checked_add(at_tier)
                .ok_or_else(|| Error::Topology("tree too large".into()))?;
        }
        Ok(Self { height, fanout })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    /// `f^(t-1)` nodes at tier `t` (1-based).
    pub fn nodes_at(&self, tier: usize) -> usize {
        assert!((1..=self.height).contains(&tier), "tier {tier} out of range");
        self.fanout.pow((tier - 1) as u32)
    }

    /// Number of data-producing nodes (tiers 2..=h).
    pub fn sensor_count(&self) -> usize {
        (2..=self.height).map(|t| self.nodes_at(t)).sum()
    }

    /// Position of a node in the tier-major ordering used by [`DataStream`].
    pub fn sensor_index(&self, node: NodeId) -> usize {
        (2..node.tier).map(|t| self.nodes_at(t)).sum::<usize>() + node.index
    }

    pub fn sensors(&self) -> impl Iterator<Item = NodeId> + '_ {
        (2..=self.height).flat_map(move |tier| (0..self.nodes_at(tier)).map(move |index| NodeId { tier, index }))
    }
}

/// A node in the tree, addressed by tier and position within the tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub tier: usize,
    pub index: usize,
}

impl NodeId {
    pub fn parent(&self, fanout: usize) -> Option<NodeId> {
        (self.tier > 1).then(|| NodeId {
            tier: self.tier - 1,
            index: self.index / fanout,
        })
    }
}

/// Readings for every sensor over a number of epochs.
///
/// `epochs()[e][i]` is the reading of the `i`-th sensor in
/// [`NetworkTopology::sensors`] order during epoch `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataStream {
    topology: NetworkTopology,
    dim: usize,
    epochs: Vec<Vec<Point>>,
}

impl DataStream {
    pub fn new(topology: NetworkTopology, dim: usize, epochs: Vec<Vec<Point>>) -> Self {
        Self { topology, dim, epochs }
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epochs(&self) -> &[Vec<Point>] {
        &self.epochs
    }

    pub fn epoch_count(&self) -> usize {
        self.epochs.len()
    }

    pub fn readings(&self) -> impl Iterator<Item = Reading> + '_ {
        self.epochs.iter().enumerate().flat_map(move |(epoch, points)| {
            self.topology
                .sensors()
                .zip(points)
                .map(move |(node, point)| Reading {
                    node,
                    epoch,
                    point: point.clone(),
                })
        })
    }
}

/// A data element tagged with where and when it was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub node: NodeId,
    pub epoch: usize,
    pub point: Point,
}

/// Results per original query id; queries with no matches are absent.
pub type QueryResults = BTreeMap<usize, Vec<Reading>>;

/// Filters `incoming` through one tier's query set.
///
/// A reading survives if some query holds it. Queries are tried in
/// ascending id order and the scan stops at the first match, so every
/// reading is forwarded at most once.
pub fn process_tier(queries: &[MergedQuery], incoming: Vec<Reading>) -> Vec<Reading> {
    incoming
        .into_iter()
        .filter(|r| queries.iter().any(|q| contains_unchecked(&q.region, &r.point)))
        .collect()
}

/// Answers every original query on the readings that reached the server.
/// A reading inside several queries is reported under each of them.
pub fn server_postprocess(originals: &[MergedQuery], incoming: &[Reading]) -> QueryResults {
    let mut results = QueryResults::new();
    for r in incoming {
        for q in originals {
            if contains_unchecked(&q.region, &r.point) {
                results.entry(q.id).or_default().push(r.clone());
            }
        }
    }
    sort_results(&mut results);
    results
}

/// Ground truth: every reading checked against every query.
pub fn centralized_oracle(queries: &[Rect], data: &DataStream) -> QueryResults {
    let mut results = QueryResults::new();
    for r in data.readings() {
        for (id, q) in queries.iter().enumerate() {
            if contains_unchecked(q, &r.point) {
                results.entry(id).or_default().push(r.clone());
            }
        }
    }
    sort_results(&mut results);
    results
}

fn sort_results(results: &mut QueryResults) {
    for list in results.values_mut() {
        list.sort_by_key(|r| (r.epoch, r.node));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub tier: usize,
    /// Bytes sent by all nodes of this tier to their parents.
    pub bytes_sent: u64,
    /// Queries held by each node of this tier.
    pub queries_stored: usize,
    /// Query storage summed over all nodes of this tier.
    pub storage_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionReport {
    pub tiers: Vec<TierStats>,
    pub epochs: usize,
    pub element_size: u64,
    pub total_transmission: u64,
    pub total_storage: u64,
    pub server_results: QueryResults,
}

impl TransmissionReport {
    /// Transmission normalized to one epoch, the unit the cost model uses.
    pub fn transmission_per_epoch(&self) -> f64 {
        self.total_transmission as f64 / self.epochs as f64
    }

    /// `alpha * transmission per epoch + storage`.
    pub fn weighted_sum(&self, alpha: f64) -> f64 {
        alpha * self.transmission_per_epoch() + self.total_storage as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tier,bytes_sent,queries_stored,storage_bytes\n");
        for t in &self.tiers {
            writeln!(out, "{},{},{},{}", t.tier, t.bytes_sent, t.queries_stored, t.storage_bytes).unwrap();
        }
        out
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            epochs: self.epochs,
            element_size: self.element_size,
            total_transmission: self.total_transmission,
            total_storage: self.total_storage,
            transmission_per_epoch: self.transmission_per_epoch(),
            result_counts: self
                .server_results
                .iter()
                .map(|(id, list)| (*id, list.len()))
                .collect(),
        }
    }
}

/// JSON-friendly digest of a [`TransmissionReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub epochs: usize,
    pub element_size: u64,
    pub total_transmission: u64,
    pub total_storage: u64,
    pub transmission_per_epoch: f64,
    pub result_counts: BTreeMap<usize, usize>,
}

impl ReportSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Query storage `sum_{t=2..h} f^(t-1) * |Q_t| * 2 * element_size`.
/// The server's originals are not charged.
pub fn storage_bytes(topology: &NetworkTopology, structure: &InvertedQueryStructure, element_size: u64) -> u64 {
    (2..=topology.height())
        .map(|t| topology.nodes_at(t) as u64 * structure.tier(t).len() as u64 * 2 * element_size)
        .sum()
}

/// Runs progressive query processing over every epoch of `data`.
pub fn simulate(
    topology: &NetworkTopology,
    structure: &InvertedQueryStructure,
    data: &DataStream,
    element_size: u64,
) -> Result<TransmissionReport> {
    let h = topology.height();
    if structure.height() != h {
        return Err(Error::HeightMismatch {
            structure: structure.height(),
            topology: h,
        });
    }
    if data.topology() != topology {
        return Err(Error::Topology("data stream was generated for a different topology".into()));
    }
    if let Some(q) = structure.tier(1).first() {
        if q.region.dim() != data.dim() {
            return Err(crate::error::GeometryError::DimensionMismatch {
                left: q.region.dim(),
                right: data.dim(),
            }
            .into());
        }
    }
    let f = topology.fanout();
    let mut sent = vec![0u64; h + 1];
    let mut at_server = Vec::new();

    for (epoch, points) in data.epochs().iter().enumerate() {
        // forwarded[i] holds what node i of the tier below sent upwards
        let mut forwarded: Vec<Vec<Reading>> = Vec::new();
        for tier in (2..=h).rev() {
            let base = topology.sensor_index(NodeId { tier, index: 0 });
            let mut children = forwarded.into_iter();
            let mut out = Vec::with_capacity(topology.nodes_at(tier));
            for index in 0..topology.nodes_at(tier) {
                let node = NodeId { tier, index };
                let mut incoming = vec![Reading {
                    node,
                    epoch,
                    point: points[base + index].clone(),
                }];
                if tier < h {
                    for _ in 0..f {
                        incoming.extend(children.next().unwrap_or_default());
                    }
                }
                let survivors = process_tier(structure.tier(tier), incoming);
                sent[tier] += survivors.len() as u64 * element_size;
                out.push(survivors);
            }
            forwarded = out;
        }
        at_server.extend(forwarded.into_iter().flatten());
    }

    let server_results = server_postprocess(structure.tier(1), &at_server);
    let tiers: Vec<TierStats> = (1..=h)
        .map(|t| TierStats {
            tier: t,
            bytes_sent: sent[t],
            queries_stored: structure.tier(t).len(),
            storage_bytes: if t == 1 {
                0
            } else {
                topology.nodes_at(t) as u64 * structure.tier(t).len() as u64 * 2 * element_size
            },
        })
        .collect();
    Ok(TransmissionReport {
        total_transmission: tiers.iter().map(|t| t.bytes_sent).sum(),
        total_storage: tiers.iter().map(|t| t.storage_bytes).sum(),
        tiers,
        epochs: data.epoch_count(),
        element_size,
        server_results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::{budget_from_rate, progressive_merge, MergeBudget};
    use crate::workload::{generate_data, generate_queries, WorkloadSpec};

    fn mq(id: usize, region: Rect) -> MergedQuery {
        MergedQuery {
            id,
            tier: 2,
            region,
            children: vec![],
        }
    }

    fn reading(x: f64, y: f64) -> Reading {
        Reading {
            node: NodeId { tier: 2, index: 0 },
            epoch: 0,
            point: Point::new(vec![x, y]).unwrap(),
        }
    }

    #[test]
    fn topology_counts() {
        let t = NetworkTopology::new(4, 8).unwrap();
        assert_eq!(t.nodes_at(1), 1);
        assert_eq!(t.nodes_at(4), 512);
        assert_eq!(t.sensor_count(), 584);
        assert_eq!(t.sensor_index(NodeId { tier: 3, index: 5 }), 8 + 5);
        assert_eq!(NodeId { tier: 3, index: 13 }.parent(8), Some(NodeId { tier: 2, index: 1 }));
        assert!(NetworkTopology::new(1, 8).is_err());
        assert!(NetworkTopology::new(3, 0).is_err());
        assert!(NetworkTopology::new(200, 8).is_err());
    }

    #[test]
    fn full_domain_query_passes_everything() {
        let qs = vec![mq(0, Rect::unit(2))];
        let input = vec![reading(0.1, 0.2), reading(0.9, 0.0), reading(1.0, 1.0)];
        assert_eq!(process_tier(&qs, input.clone()), input);
    }

    #[test]
    fn outside_points_dropped_and_overlap_deduplicated() {
        let a = Rect::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let b = Rect::new(vec![0.25, 0.25], vec![0.75, 0.75]).unwrap();
        let qs = vec![mq(0, a), mq(1, b)];
        let out = process_tier(&qs, vec![reading(0.3, 0.3), reading(0.9, 0.9)]);
        assert_eq!(out, vec![reading(0.3, 0.3)]);
    }

    #[test]
    fn server_reports_every_matching_query() {
        let a = Rect::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let b = Rect::new(vec![0.25, 0.25], vec![0.75, 0.75]).unwrap();
        let qs = vec![mq(0, a), mq(1, b)];
        let res = server_postprocess(&qs, &[reading(0.3, 0.3), reading(0.9, 0.9), reading(0.1, 0.1)]);
        assert_eq!(res[&0].len(), 2);
        assert_eq!(res[&1], vec![reading(0.3, 0.3)]);
        assert_eq!(res.len(), 2);
    }

    #[test]
    fn oracle_examples() {
        let topo = NetworkTopology::new(3, 2).unwrap();
        let empty = DataStream::new(topo, 2, vec![]);
        assert!(centralized_oracle(&[Rect::unit(2)], &empty).is_empty());
        let data = generate_data(&topo, 3, 2, 1).unwrap();
        let res = centralized_oracle(&[Rect::unit(2)], &data);
        assert_eq!(res[&0].len(), 18);
    }

    #[test]
    fn distributed_structure_matches_oracle() {
        let topo = NetworkTopology::new(3, 3).unwrap();
        let qs = generate_queries(&WorkloadSpec::by_count(2, 0.01, 40, 3)).unwrap();
        let data = generate_data(&topo, 4, 2, 8).unwrap();
        let s = progressive_merge(&qs, 3, &budget_from_rate(40, 1.0, 3)).unwrap();
        let report = simulate(&topo, &s, &data, 8).unwrap();
        assert_eq!(report.server_results, centralized_oracle(&qs, &data));
    }

    #[test]
    fn single_full_query_forwards_everything() {
        // a query at each corner and one at the centre: with k = 1 the merged
        // query is the whole domain, so every reading crosses every boundary
        let corners = [[0.0, 0.0], [0.9, 0.0], [0.0, 0.9], [0.9, 0.9]];
        let qs: Vec<Rect> = corners
            .iter()
            .map(|c| Rect::new(c.to_vec(), vec![c[0] + 0.1, c[1] + 0.1]).unwrap())
            .collect();
        let (h, f, epochs, size) = (4, 3, 2, 8u64);
        let topo = NetworkTopology::new(h, f).unwrap();
        let data = generate_data(&topo, epochs, 2, 4).unwrap();
        let s = progressive_merge(&qs, h, &MergeBudget::new(vec![1; h - 1]).unwrap()).unwrap();
        assert_eq!(s.tier(2)[0].region, Rect::unit(2));
        let report = simulate(&topo, &s, &data, size).unwrap();
        let expected: u64 = (2..=h).map(|i| (f.pow(i as u32 - 1) * (i - 1)) as u64 * size * epochs as u64).sum();
        assert_eq!(report.total_transmission, expected);
        assert_eq!(report.total_storage, (3 + 9 + 27) * 2 * size);
    }

    #[test]
    fn height_mismatch_rejected() {
        let topo = NetworkTopology::new(4, 2).unwrap();
        let qs = generate_queries(&WorkloadSpec::by_count(2, 0.01, 5, 3)).unwrap();
        let s = progressive_merge(&qs, 3, &budget_from_rate(5, 0.5, 3)).unwrap();
        let data = generate_data(&topo, 1, 2, 0).unwrap();
        assert!(matches!(simulate(&topo, &s, &data, 8), Err(Error::HeightMismatch { .. })));
    }

    #[test]
    fn report_serialization() {
        let topo = NetworkTopology::new(3, 2).unwrap();
        let qs = generate_queries(&WorkloadSpec::by_count(2, 0.05, 10, 3)).unwrap();
        let s = progressive_merge(&qs, 3, &budget_from_rate(10, 0.5, 3)).unwrap();
        let data = generate_data(&topo, 5, 2, 2).unwrap();
        let report = simulate(&topo, &s, &data, 8).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("tier,bytes_sent,queries_stored,storage_bytes\n1,0,10,0\n"));
        let json = report.summary().to_json().unwrap();
        let back: ReportSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report.summary());
        assert_eq!(report.total_storage, storage_bytes(&topo, &s, 8));
    }
}
