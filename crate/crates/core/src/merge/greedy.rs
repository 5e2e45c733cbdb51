//! Exact greedy pairwise merging.
//!
//! Repeatedly replaces the pair with the largest `O - D` score by its MBR.
//! Ties go to the lexicographically smallest `(id, id)` pair, where input
//! rectangles carry ids `0..n` and each merged rectangle gets the next
//! unused id.
//!
//! Every live item caches its best partner. A static bounding hierarchy
//! over the initial items, whose node bounds are refreshed as items die and
//! merged items are inserted, answers best-partner queries by branch and
//! bound, and finds the items whose cached best a new merged item beats.
//! Only items whose cached partner was consumed by a merge are recomputed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{mbr_unchecked, merge_score_unchecked, Rect};

/// Absorbs rounding between a node bound and an exactly computed score.
const SLACK: f64 = 1e-12;
const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug)]
pub(crate) enum StopRule {
    /// Merge until at most this many items remain.
    AtMost(usize),
    /// Merge while the best score is non-negative.
    NonNegative,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Group {
    pub region: Rect,
    /// Input indices merged into this group, ascending.
    pub members: Vec<usize>,
}

struct Item {
    rect: Rect,
    vol: f64,
    members: Vec<usize>,
    alive: bool,
    best: Option<(f64, usize)>,
    version: u32,
    leaf: usize,
}

enum Kind {
    Leaf(Vec<usize>),
    Inner(usize, usize),
}

struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    vmax: f64,
    min_best: f64,
    alive: usize,
    parent: Option<usize>,
    kind: Kind,
}

#[derive(Debug)]
struct Candidate {
    score: f64,
    pair: (usize, usize),
    owner: usize,
    version: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.pair.cmp(&self.pair))
            .then_with(|| other.owner.cmp(&self.owner))
            .then_with(|| self.version.cmp(&other.version))
    }
}

struct Bounded(f64, usize);

impl PartialEq for Bounded {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bounded {}

impl PartialOrd for Bounded {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bounded {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn beats(score: f64, id: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((s, b)) => score > s || (score == s && id < b),
    }
}

struct Engine {
    dim: usize,
    items: Vec<Item>,
    nodes: Vec<Node>,
    pointed_by: Vec<Vec<usize>>,
    heap: BinaryHeap<Candidate>,
    alive: usize,
}

impl Engine {
    fn new(rects: &[Rect]) -> Self {
        let dim = rects[0].dim();
        let items = rects
            .iter()
            .enumerate()
            .map(|(i, r)| Item {
                rect: r.clone(),
                vol: r.volume(),
                members: vec![i],
                alive: true,
                best: None,
                version: 0,
                leaf: 0,
            })
            .collect();
        let mut engine = Self {
            dim,
            items,
            nodes: Vec::new(),
            pointed_by: vec![Vec::new(); rects.len()],
            heap: BinaryHeap::new(),
            alive: rects.len(),
        };
        let mut ids: Vec<usize> = (0..rects.len()).collect();
        engine.build(&mut ids, None);
        for leaf in 0..engine.nodes.len() {
            if matches!(engine.nodes[leaf].kind, Kind::Leaf(_)) {
                engine.refresh(leaf);
            }
        }
        for i in 0..engine.items.len() {
            let best = engine.best_partner(i);
            engine.set_best(i, best);
        }
        for leaf in 0..engine.nodes.len() {
            if matches!(engine.nodes[leaf].kind, Kind::Leaf(_)) {
                engine.refresh(leaf);
            }
        }
        engine
    }

    /// Median split on the axis of widest centre spread.
    fn build(&mut self, ids: &mut [usize], parent: Option<usize>) -> usize {
        let node = self.nodes.len();
        self.nodes.push(Node {
            lo: vec![0.0; self.dim],
            hi: vec![0.0; self.dim],
            vmax: 0.0,
            min_best: f64::INFINITY,
            alive: 0,
            parent,
            kind: Kind::Leaf(Vec::new()),
        });
        if ids.len() <= LEAF_SIZE {
            for &i in ids.iter() {
                self.items[i].leaf = node;
            }
            self.nodes[node].kind = Kind::Leaf(ids.to_vec());
            return node;
        }
        let centre = |r: &Rect, k: usize| r.lo()[k] + r.hi()[k];
        let axis = (0..self.dim)
            .map(|k| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &i in ids.iter() {
                    let c = centre(&self.items[i].rect, k);
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                (hi - lo, k)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(&a.1)))
            .map(|(_, k)| k)
            .unwrap_or(0);
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            centre(&self.items[a].rect, axis)
                .total_cmp(&centre(&self.items[b].rect, axis))
                .then_with(|| a.cmp(&b))
        });
        let (left, right) = ids.split_at_mut(mid);
        let l = self.build(left, Some(node));
        let r = self.build(right, Some(node));
        self.nodes[node].kind = Kind::Inner(l, r);
        node
    }

    /// Recomputes bounds of `leaf` from its live items, then up to the root.
    fn refresh(&mut self, leaf: usize) {
        let dim = self.dim;
        let mut current = Some(leaf);
        while let Some(n) = current {
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            let (mut vmax, mut min_best, mut alive) = (0.0f64, f64::INFINITY, 0usize);
            match &self.nodes[n].kind {
                Kind::Leaf(members) => {
                    for &i in members {
                        let it = &self.items[i];
                        if !it.alive {
                            continue;
                        }
                        alive += 1;
                        for k in 0..dim {
                            lo[k] = lo[k].min(it.rect.lo()[k]);
                            hi[k] = hi[k].max(it.rect.hi()[k]);
                        }
                        vmax = vmax.max(it.vol);
                        min_best = min_best.min(it.best.map_or(f64::NEG_INFINITY, |b| b.0));
                    }
                }
                Kind::Inner(a, b) => {
                    for &c in [a, b] {
                        let child = &self.nodes[c];
                        if child.alive == 0 {
                            continue;
                        }
                        alive += child.alive;
                        for k in 0..dim {
                            lo[k] = lo[k].min(child.lo[k]);
                            hi[k] = hi[k].max(child.hi[k]);
                        }
                        vmax = vmax.max(child.vmax);
                        min_best = min_best.min(child.min_best);
                    }
                }
            }
            let node = &mut self.nodes[n];
            node.lo = lo;
            node.hi = hi;
            node.vmax = vmax;
            node.min_best = min_best;
            node.alive = alive;
            current = node.parent;
        }
    }

    /// Upper bound on the score of `rect` against any item under `node`.
    fn bound(&self, rect: &Rect, vol: f64, node: usize) -> f64 {
        let n = &self.nodes[node];
        let mut span = 1.0;
        for k in 0..self.dim {
            span *= rect.hi()[k].max(n.lo[k]) - rect.lo()[k].min(n.hi[k]);
        }
        vol - (span - n.vmax).max(0.0)
    }

    fn best_partner(&self, a: usize) -> Option<(f64, usize)> {
        let item = &self.items[a];
        let mut best: Option<(f64, usize)> = None;
        let mut frontier = BinaryHeap::new();
        if self.nodes[0].alive > 0 {
            frontier.push(Bounded(self.bound(&item.rect, item.vol, 0), 0));
        }
        while let Some(Bounded(ub, n)) = frontier.pop() {
            if let Some((s, _)) = best {
                if ub < s - SLACK {
                    break;
                }
            }
            match &self.nodes[n].kind {
                Kind::Leaf(members) => {
                    for &b in members {
                        if b == a || !self.items[b].alive {
                            continue;
                        }
                        let s = merge_score_unchecked(&item.rect, &self.items[b].rect);
                        if beats(s, b, best) {
                            best = Some((s, b));
                        }
                    }
                }
                Kind::Inner(l, r) => {
                    for &c in [l, r] {
                        if self.nodes[c].alive > 0 {
                            frontier.push(Bounded(self.bound(&item.rect, item.vol, c), c));
                        }
                    }
                }
            }
        }
        best
    }

    fn set_best(&mut self, i: usize, best: Option<(f64, usize)>) {
        if let Some((_, old)) = self.items[i].best {
            let list = &mut self.pointed_by[old];
            if let Some(pos) = list.iter().position(|&x| x == i) {
                list.swap_remove(pos);
            }
        }
        let item = &mut self.items[i];
        item.best = best;
        item.version += 1;
        if let Some((score, partner)) = best {
            self.pointed_by[partner].push(i);
            self.heap.push(Candidate {
                score,
                pair: (i.min(partner), i.max(partner)),
                owner: i,
                version: item.version,
            });
        }
    }

    /// Live items whose cached best is strictly beaten by item `k`.
    fn beaten_by(&self, k: usize) -> Vec<(usize, f64)> {
        let item = &self.items[k];
        let mut found = Vec::new();
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.alive == 0 || self.bound(&item.rect, item.vol, n) < node.min_best - SLACK {
                continue;
            }
            match &node.kind {
                Kind::Leaf(members) => {
                    for &x in members {
                        let other = &self.items[x];
                        if x == k || !other.alive {
                            continue;
                        }
                        let s = merge_score_unchecked(&other.rect, &item.rect);
                        // k has the largest id so far: only a strictly better score wins
                        if other.best.is_none_or(|(b, _)| s > b) {
                            found.push((x, s));
                        }
                    }
                }
                Kind::Inner(l, r) => {
                    stack.push(*l);
                    stack.push(*r);
                }
            }
        }
        found
    }

    fn pop_best(&mut self) -> Option<Candidate> {
        while let Some(top) = self.heap.peek() {
            let owner = &self.items[top.owner];
            let (a, b) = top.pair;
            if owner.alive && owner.version == top.version && self.items[a].alive && self.items[b].alive {
                return self.heap.pop();
            }
            self.heap.pop();
        }
        None
    }

    fn peek_best(&mut self) -> Option<f64> {
        let top = self.pop_best()?;
        let score = top.score;
        self.heap.push(top);
        Some(score)
    }

    fn merge(&mut self, i: usize, j: usize) {
        for x in [i, j] {
            self.items[x].alive = false;
            let leaf = self.items[x].leaf;
            if let Kind::Leaf(members) = &mut self.nodes[leaf].kind {
                members.retain(|&m| m != x);
            }
            self.set_best(x, None);
        }
        let k = self.items.len();
        let rect = mbr_unchecked(&self.items[i].rect, &self.items[j].rect);
        let mut members = self.items[i].members.clone();
        members.extend_from_slice(&self.items[j].members);
        members.sort_unstable();
        let leaf = self.items[i].leaf;
        self.items.push(Item {
            vol: rect.volume(),
            rect,
            members,
            alive: true,
            best: None,
            version: 0,
            leaf,
        });
        self.pointed_by.push(Vec::new());
        if let Kind::Leaf(list) = &mut self.nodes[leaf].kind {
            list.push(k);
        }
        self.alive -= 1;
        self.refresh(leaf);
        self.refresh(self.items[j].leaf);

        let best = self.best_partner(k);
        self.set_best(k, best);
        let mut touched = vec![leaf];
        for (x, s) in self.beaten_by(k) {
            self.set_best(x, Some((s, k)));
            touched.push(self.items[x].leaf);
        }
        let mut orphans = std::mem::take(&mut self.pointed_by[i]);
        orphans.append(&mut std::mem::take(&mut self.pointed_by[j]));
        orphans.sort_unstable();
        orphans.dedup();
        for x in orphans {
            let stale = self.items[x].best.is_none_or(|(_, p)| !self.items[p].alive);
            if self.items[x].alive && stale {
                let best = self.best_partner(x);
                self.set_best(x, best);
                touched.push(self.items[x].leaf);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for leaf in touched {
            self.refresh(leaf);
        }
    }

    fn run(&mut self, rule: StopRule) {
        loop {
            match rule {
                StopRule::AtMost(k) if self.alive <= k => break,
                StopRule::NonNegative => match self.peek_best() {
                    Some(s) if s >= 0.0 => {}
                    _ => break,
                },
                _ => {}
            }
            let Some(c) = self.pop_best() else { break };
            self.merge(c.pair.0, c.pair.1);
        }
    }

    fn into_groups(self) -> Vec<Group> {
        self.items
            .into_iter()
            .filter(|it| it.alive)
            .map(|it| Group {
                region: it.rect,
                members: it.members,
            })
            .collect()
    }
}

/// Greedy merge of `rects` (non-empty, uniform dimension). Surviving groups
/// come back in ascending working-id order.
pub(crate) fn greedy_merge(rects: &[Rect], rule: StopRule) -> Vec<Group> {
    assert!(!rects.is_empty());
    let mut engine = Engine::new(rects);
    engine.run(rule);
    engine.into_groups()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_queries, WorkloadSpec};
    use proptest::prelude::*;

    fn square(x: f64, y: f64, w: f64) -> Rect {
        Rect::new(vec![x, y], vec![x + w, y + w]).unwrap()
    }

    #[test]
    fn merges_closest_pair_first() {
        let rects = vec![square(0.0, 0.0, 0.1), square(0.5, 0.5, 0.1), square(0.05, 0.0, 0.1)];
        let groups = greedy_merge(&rects, StopRule::AtMost(2));
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].members, vec![1]);
        assert_eq!(groups[1].members, vec![0, 2]);
        assert_eq!(groups[1].region, Rect::new(vec![0.0, 0.0], rects[2].hi().to_vec()).unwrap());
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // four identical squares: every pair scores the same
        let rects = vec![square(0.2, 0.2, 0.1); 4];
        let groups = greedy_merge(&rects, StopRule::AtMost(3));
        assert_eq!(groups.iter().map(|g| g.members.clone()).collect::<Vec<_>>(), vec![vec![2], vec![3], vec![0, 1]]);
    }

    #[test]
    fn non_negative_rule_stops() {
        let rects = vec![square(0.0, 0.0, 0.1), square(0.8, 0.8, 0.1), square(0.0, 0.8, 0.1)];
        assert_eq!(greedy_merge(&rects, StopRule::NonNegative).len(), 3);
        let same = vec![square(0.3, 0.3, 0.1); 2];
        assert_eq!(greedy_merge(&same, StopRule::NonNegative).len(), 1);
    }

    #[test]
    fn random_sets_match_naive() {
        for seed in 0..6 {
            let qs = generate_queries(&WorkloadSpec::by_count(2, 0.003, 100, seed)).unwrap();
            for rule in [StopRule::NonNegative, StopRule::AtMost(40), StopRule::AtMost(1)] {
                assert_eq!(greedy_merge(&qs, rule), naive::greedy_merge(&qs, rule), "seed {seed} {rule:?}");
            }
        }
        let qs = generate_queries(&WorkloadSpec::by_count(3, 0.001, 80, 9)).unwrap();
        assert_eq!(greedy_merge(&qs, StopRule::AtMost(7)), naive::greedy_merge(&qs, StopRule::AtMost(7)));
    }

    fn arb_rects() -> impl Strategy<Value = Vec<Rect>> {
        // coarse 1/8 lattice to provoke score ties
        proptest::collection::vec((0u8..8, 0u8..8, 1u8..4, 1u8..4), 1..13).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h)| {
                    let (x, y) = (x as f64 / 8.0, y as f64 / 8.0);
                    Rect::new(vec![x, y], vec![(x + w as f64 / 8.0).min(1.0), (y + h as f64 / 8.0).min(1.0)]).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_naive_on_small_sets(rects in arb_rects(), k in 1usize..8) {
            prop_assert_eq!(greedy_merge(&rects, StopRule::AtMost(k)), naive::greedy_merge(&rects, StopRule::AtMost(k)));
            prop_assert_eq!(greedy_merge(&rects, StopRule::NonNegative), naive::greedy_merge(&rects, StopRule::NonNegative));
        }
    }
}
