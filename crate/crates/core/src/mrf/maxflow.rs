//! Augmenting-path max-flow with two search trees grown from the terminals
//! and reused across augmentations (Boykov–Kolmogorov).
//!
//! Terminal arcs are stored as a signed residual per node: positive values
//! are residual capacity from the source, negative values residual capacity
//! to the sink.

use std::collections::VecDeque;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INFINITE_DIST: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    first: u32,
    /// Arc pointing from this node towards its tree parent, or a marker.
    parent: u32,
    ts: u64,
    dist: u32,
    is_sink: bool,
    active: bool,
    tr_cap: f64,
}

#[derive(Debug, Clone)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: f64,
}

#[inline]
fn sister(a: u32) -> u32 {
    a ^ 1
}

/// Two-terminal graph with an implicit source and sink.
#[derive(Debug, Clone, Default)]
pub struct MaxFlowGraph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
    queue: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u64,
}

impl MaxFlowGraph {
    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            arcs: Vec::with_capacity(2 * edges),
            ..Self::default()
        }
    }

    pub fn add_node(&mut self) -> usize {
        self.nodes.push(Node {
            first: NONE,
            parent: NONE,
            ts: 0,
            dist: 0,
            is_sink: false,
            active: false,
            tr_cap: 0.0,
        });
        self.nodes.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds capacity `source` on s->i and `sink` on i->t; the common part
    /// is pushed immediately as flow.
    pub fn add_tweights(&mut self, i: usize, source: f64, sink: f64) {
        debug_assert!(source >= 0.0 && sink >= 0.0);
        let node = &mut self.nodes[i];
        let (mut cs, mut ct) = (source, sink);
        if node.tr_cap > 0.0 {
            cs += node.tr_cap;
        } else {
            ct -= node.tr_cap;
        }
        self.flow += cs.min(ct);
        node.tr_cap = cs - ct;
    }

    /// Adds arc i->j with capacity `cap` and j->i with capacity `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        assert!(i != j, "self-loop on node {i}");
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0);
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc {
            head: j as u32,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.nodes[i].first = a;
        self.arcs.push(Arc {
            head: i as u32,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[j].first = a + 1;
    }

    /// True when node `i` ends on the sink side. Nodes that are not forced
    /// to the sink stay on the source side, so the source set is maximal.
    pub fn is_sink(&self, i: usize) -> bool {
        let n = &self.nodes[i];
        n.parent != NONE && n.is_sink
    }

    fn set_active(&mut self, i: u32) {
        let n = &mut self.nodes[i as usize];
        if !n.active {
            n.active = true;
            self.queue.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.queue.pop_front() {
            let n = &mut self.nodes[i as usize];
            n.active = false;
            if n.parent != NONE {
                return Some(i);
            }
        }
        None
    }

    fn set_orphan_front(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn set_orphan_rear(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Computes the maximum flow; afterwards [`Self::is_sink`] reports the cut.
    pub fn max_flow(&mut self) -> f64 {
        self.queue.clear();
        self.orphans.clear();
        self.time = 0;
        // Saturate s->p->q->t paths directly; the trees then only have to
        // find the longer ones.
        for a in 0..self.arcs.len() as u32 {
            let q = self.arcs[a as usize].head as usize;
            let p = self.arcs[sister(a) as usize].head as usize;
            let (tp, tq, cap) = (self.nodes[p].tr_cap, self.nodes[q].tr_cap, self.arcs[a as usize].r_cap);
            if tp > 0.0 && tq < 0.0 && cap > 0.0 {
                let f = tp.min(-tq).min(cap);
                self.nodes[p].tr_cap = if f == tp { 0.0 } else { tp - f };
                self.nodes[q].tr_cap = if f == -tq { 0.0 } else { tq + f };
                self.arcs[a as usize].r_cap = if f == cap { 0.0 } else { cap - f };
                self.arcs[sister(a) as usize].r_cap += f;
                self.flow += f;
            }
        }
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.active = false;
            n.ts = 0;
            if n.tr_cap > 0.0 {
                // Source terminals start passive. Every augmenting path
                // begins at one, so growing the sink tree alone still finds
                // them all, and expansion moves usually have a small sink
                // side. Orphan adoption activates source nodes as needed.
                n.is_sink = false;
                n.parent = TERMINAL;
                n.dist = 1;
                continue;
            } else if n.tr_cap < 0.0 {
                n.is_sink = true;
                n.parent = TERMINAL;
                n.dist = 1;
            } else {
                n.parent = NONE;
                continue;
            }
            self.set_active(i as u32);
        }

        let mut current: Option<u32> = None;
        loop {
            let mut i = current.take().filter(|&c| {
                let n = &mut self.nodes[c as usize];
                n.active = false;
                n.parent != NONE
            });
            if i.is_none() {
                i = self.next_active();
            }
            let Some(i) = i else { break };

            let middle = self.grow(i);
            self.time += 1;
            if let Some(a) = middle {
                self.nodes[i as usize].active = true;
                current = Some(i);
                self.augment(a);
                while let Some(o) = self.orphans.pop_front() {
                    if self.nodes[o as usize].is_sink {
                        self.process_orphan::<true>(o);
                    } else {
                        self.process_orphan::<false>(o);
                    }
                }
            }
        }
        self.flow
    }

    /// Expands the tree of `i`; returns an arc from the source tree into the
    /// sink tree when the trees touch.
    fn grow(&mut self, i: u32) -> Option<u32> {
        let (i_sink, i_ts, i_dist) = {
            let n = &self.nodes[i as usize];
            (n.is_sink, n.ts, n.dist)
        };
        let mut a = self.nodes[i as usize].first;
        while a != NONE {
            let arc_cap = if i_sink {
                self.arcs[sister(a) as usize].r_cap
            } else {
                self.arcs[a as usize].r_cap
            };
            if arc_cap > 0.0 {
                let j = self.arcs[a as usize].head;
                let nj = &mut self.nodes[j as usize];
                if nj.parent == NONE {
                    nj.is_sink = i_sink;
                    nj.parent = sister(a);
                    nj.ts = i_ts;
                    nj.dist = i_dist + 1;
                    self.set_active(j);
                } else if nj.is_sink != i_sink {
                    return Some(if i_sink { sister(a) } else { a });
                } else if nj.ts <= i_ts && nj.dist > i_dist {
                    nj.parent = sister(a);
                    nj.ts = i_ts;
                    nj.dist = i_dist + 1;
                }
            }
            a = self.arcs[a as usize].next;
        }
        None
    }

    fn augment(&mut self, middle: u32) {
        let mut bottleneck = self.arcs[middle as usize].r_cap;

        let mut i = self.arcs[sister(middle) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[sister(a) as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(self.nodes[i as usize].tr_cap);

        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(-self.nodes[i as usize].tr_cap);

        self.arcs[sister(middle) as usize].r_cap += bottleneck;
        self.arcs[middle as usize].r_cap -= bottleneck;

        let mut i = self.arcs[sister(middle) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a as usize].r_cap += bottleneck;
            let s = &mut self.arcs[sister(a) as usize];
            s.r_cap -= bottleneck;
            let saturated = s.r_cap <= 0.0;
            let next = self.arcs[a as usize].head;
            if saturated {
                self.arcs[sister(a) as usize].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = next;
        }
        let n = &mut self.nodes[i as usize];
        n.tr_cap -= bottleneck;
        if n.tr_cap <= 0.0 {
            n.tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[sister(a) as usize].r_cap += bottleneck;
            let s = &mut self.arcs[a as usize];
            s.r_cap -= bottleneck;
            let saturated = s.r_cap <= 0.0;
            let next = s.head;
            if saturated {
                self.arcs[a as usize].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = next;
        }
        let n = &mut self.nodes[i as usize];
        n.tr_cap += bottleneck;
        if n.tr_cap >= 0.0 {
            n.tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        self.flow += bottleneck;
    }

    /// Distance from `j` to its terminal along parent arcs, or `None` when
    /// the path ends in an orphan. Caches the result in `ts`/`dist`.
    fn origin_distance(&mut self, start: u32) -> Option<u32> {
        let mut j = start;
        let mut d: u32 = 0;
        loop {
            let n = &self.nodes[j as usize];
            if n.ts == self.time {
                d += n.dist;
                break;
            }
            let a = n.parent;
            d += 1;
            if a == TERMINAL {
                let n = &mut self.nodes[j as usize];
                n.ts = self.time;
                n.dist = 1;
                break;
            }
            if a == ORPHAN {
                return None;
            }
            j = self.arcs[a as usize].head;
        }
        let mut j = start;
        let mut dj = d;
        while self.nodes[j as usize].ts != self.time {
            let n = &mut self.nodes[j as usize];
            n.ts = self.time;
            n.dist = dj;
            dj -= 1;
            j = self.arcs[n.parent as usize].head;
        }
        Some(d)
    }

    fn process_orphan<const SINK: bool>(&mut self, i: u32) {
        let mut best_arc = NONE;
        let mut best_dist = INFINITE_DIST;

        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let cap = if SINK {
                self.arcs[a0 as usize].r_cap
            } else {
                self.arcs[sister(a0) as usize].r_cap
            };
            if cap > 0.0 {
                let j = self.arcs[a0 as usize].head;
                let nj = &self.nodes[j as usize];
                if nj.is_sink == SINK && nj.parent != NONE {
                    if let Some(d) = self.origin_distance(j) {
                        if d < best_dist {
                            best_arc = a0;
                            best_dist = d;
                        }
                    }
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }

        if best_arc != NONE {
            let n = &mut self.nodes[i as usize];
            n.parent = best_arc;
            n.ts = self.time;
            n.dist = best_dist + 1;
            return;
        }

        self.nodes[i as usize].parent = NONE;
        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let j = self.arcs[a0 as usize].head;
            let nj = &self.nodes[j as usize];
            let pj = nj.parent;
            if nj.is_sink == SINK && pj != NONE {
                let cap = if SINK {
                    self.arcs[a0 as usize].r_cap
                } else {
                    self.arcs[sister(a0) as usize].r_cap
                };
                if cap > 0.0 {
                    self.set_active(j);
                }
                if pj != TERMINAL && pj != ORPHAN && self.arcs[pj as usize].head == i {
                    self.set_orphan_rear(j);
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }
    }
}

/// Explicit s-t network over `node_count` nodes, two of which are terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    node_count: usize,
    source: usize,
    sink: usize,
    arcs: Vec<(usize, usize, f64)>,
}

impl FlowNetwork {
    pub fn new(node_count: usize, source: usize, sink: usize) -> Self {
        assert!(source < node_count && sink < node_count && source != sink);
        Self {
            node_count,
            source,
            sink,
            arcs: Vec::new(),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) {
        assert!(from < self.node_count && to < self.node_count, "arc ({from}, {to}) out of range");
        assert!(capacity.is_finite() && capacity >= 0.0, "invalid capacity {capacity}");
        self.arcs.push((from, to, capacity));
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn arcs(&self) -> &[(usize, usize, f64)] {
        &self.arcs
    }

    /// Capacity of the arcs leaving `source_side`.
    pub fn cut_value(&self, source_side: &[bool]) -> f64 {
        self.arcs
            .iter()
            .filter(|&&(u, v, _)| source_side[u] && !source_side[v])
            .map(|a| a.2)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinCut {
    pub value: f64,
    /// Indexed by node; the source is always `true`, the sink `false`.
    pub source_side: Vec<bool>,
}

/// Minimum s-t cut. Nodes not forced to the sink side are reported on the
/// source side.
pub fn min_cut(net: &FlowNetwork) -> MinCut {
    let (s, t) = (net.source, net.sink);
    let mut index = vec![usize::MAX; net.node_count];
    let mut g = MaxFlowGraph::with_capacity(net.node_count.saturating_sub(2), net.arcs.len());
    for (v, slot) in index.iter_mut().enumerate() {
        if v != s && v != t {
            *slot = g.add_node();
        }
    }
    let mut direct = 0.0;
    for &(u, v, cap) in &net.arcs {
        if u == v || u == t || v == s {
            continue;
        }
        match (u == s, v == t) {
            (true, true) => direct += cap,
            (true, false) => g.add_tweights(index[v], cap, 0.0),
            (false, true) => g.add_tweights(index[u], 0.0, cap),
            (false, false) => g.add_edge(index[u], index[v], cap, 0.0),
        }
    }
    let value = g.max_flow() + direct;
    let source_side = (0..net.node_count)
        .map(|v| v == s || (v != t && !g.is_sink(index[v])))
        .collect();
    MinCut { value, source_side }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(net: &FlowNetwork) -> f64 {
        let inner: Vec<usize> = (0..net.node_count())
            .filter(|&v| v != net.source() && v != net.sink())
            .collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << inner.len()) {
            let mut side = vec![false; net.node_count()];
            side[net.source()] = true;
            for (b, &v) in inner.iter().enumerate() {
                side[v] = mask >> b & 1 == 1;
            }
            best = best.min(net.cut_value(&side));
        }
        best
    }

    #[test]
    fn single_arc() {
        let mut net = FlowNetwork::new(2, 0, 1);
        net.add_arc(0, 1, 5.0);
        let cut = min_cut(&net);
        assert_eq!(cut.value, 5.0);
        assert_eq!(cut.source_side, vec![true, false]);
    }

    fn diamond(cross: (usize, usize)) -> FlowNetwork {
        // s=0, a=1, b=2, t=3
        let mut net = FlowNetwork::new(4, 0, 3);
        net.add_arc(0, 1, 3.0);
        net.add_arc(0, 2, 2.0);
        net.add_arc(1, 3, 2.0);
        net.add_arc(2, 3, 3.0);
        net.add_arc(cross.0, cross.1, 1.0);
        net
    }

    #[test]
    fn diamond_with_cross_arc_towards_a() {
        let net = diamond((2, 1));
        assert_eq!(brute_force(&net), 4.0);
        let cut = min_cut(&net);
        assert_eq!(cut.value, 4.0);
        assert_eq!(cut.source_side, vec![true, true, false, false]);
    }

    #[test]
    fn diamond_with_cross_arc_towards_b() {
        // Paths s-a-t, s-b-t and s-a-b-t carry 2 + 2 + 1.
        let net = diamond((1, 2));
        assert_eq!(brute_force(&net), 5.0);
        let cut = min_cut(&net);
        assert_eq!(cut.value, 5.0);
        assert_eq!(net.cut_value(&cut.source_side), 5.0);
    }

    #[test]
    fn zero_capacity_keeps_everything_on_source_side() {
        let mut net = FlowNetwork::new(5, 0, 4);
        for (u, v) in [(0, 1), (1, 2), (2, 3), (3, 4)] {
            net.add_arc(u, v, 0.0);
        }
        let cut = min_cut(&net);
        assert_eq!(cut.value, 0.0);
        assert_eq!(cut.source_side, vec![true, true, true, true, false]);
    }

    #[test]
    fn reverse_and_terminal_arcs_are_ignored_correctly() {
        let mut net = FlowNetwork::new(3, 0, 2);
        net.add_arc(2, 1, 9.0);
        net.add_arc(1, 0, 9.0);
        net.add_arc(0, 2, 1.5);
        net.add_arc(0, 1, 2.0);
        net.add_arc(1, 2, 1.0);
        assert_eq!(min_cut(&net).value, 2.5);
        assert_eq!(brute_force(&net), 2.5);
    }

    #[test]
    fn ties_prefer_source_side() {
        // Cutting either s->a or a->t costs 1.
        let mut net = FlowNetwork::new(3, 0, 2);
        net.add_arc(0, 1, 1.0);
        net.add_arc(1, 2, 1.0);
        let cut = min_cut(&net);
        assert_eq!(cut.value, 1.0);
        assert!(cut.source_side[1]);
    }

    #[test]
    fn direct_graph_api_with_tweights() {
        let mut g = MaxFlowGraph::default();
        let a = g.add_node();
        let b = g.add_node();
        g.add_tweights(a, 4.0, 1.0);
        g.add_tweights(b, 0.0, 6.0);
        g.add_edge(a, b, 2.0, 0.0);
        // 1 pushed at construction, then 2 through a->b.
        assert_eq!(g.max_flow(), 3.0);
        assert!(!g.is_sink(a));
        assert!(g.is_sink(b));
    }

    fn network_strategy() -> impl Strategy<Value = FlowNetwork> {
        (3usize..=12).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n, 0.0f64..10.0, any::<bool>()), 0..40).prop_map(move |arcs| {
                let mut net = FlowNetwork::new(n, 0, n - 1);
                for (u, v, c, zero) in arcs {
                    net.add_arc(u, v, if zero { 0.0 } else { c });
                }
                net
            })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(net in network_strategy()) {
            let cut = min_cut(&net);
            let oracle = brute_force(&net);
            prop_assert!((cut.value - oracle).abs() <= 1e-9 * oracle.max(1.0));
            prop_assert!((net.cut_value(&cut.source_side) - cut.value).abs() <= 1e-9 * oracle.max(1.0));
            prop_assert!(cut.source_side[net.source()]);
            prop_assert!(!cut.source_side[net.sink()]);
        }

        #[test]
        fn deterministic(net in network_strategy()) {
            prop_assert_eq!(min_cut(&net), min_cut(&net));
        }
    }
}
