//! Alpha-expansion over Potts smoothness with per-label costs.
//!
//! Each move is a binary problem: `x_i = 1` switches node `i` to α, `x_i = 0`
//! keeps its label. In the default mode label costs enter the move through
//! auxiliary nodes, one per label that the move could empty plus one for α
//! if it is not yet in use, so the cut minimizes the full energy.

use std::collections::BTreeMap;

use super::energy::{DataCosts, EnergyBreakdown, EnergyParams};
use super::maxflow::MaxFlowGraph;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::types::{AffineMotionModel, LabelId, Labeling, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelCostMode {
    /// Label costs are part of every expansion move.
    #[default]
    Delong,
    /// Moves ignore label costs; a greedy removal pass follows each sweep.
    Prune,
}

impl std::str::FromStr for LabelCostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delong" => Ok(Self::Delong),
            "prune" => Ok(Self::Prune),
            other => Err(Error::Config(format!("unknown label cost mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for LabelCostMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Delong => "delong",
            Self::Prune => "prune",
        })
    }
}

/// Relative slack below which an energy change does not count as a decrease.
const ACCEPT_EPS: f64 = 1e-12;

#[inline]
pub(crate) fn strictly_lower(new: f64, current: f64) -> bool {
    new < current - ACCEPT_EPS * current.abs().max(1.0)
}

/// Largest fan-in of a label-cost auxiliary node.
const HUB_GROUP: usize = 32;

/// Binary move energy accumulated as unaries plus directed arcs.
struct MoveBuilder {
    graph: MaxFlowGraph,
    unary: Vec<(f64, f64)>,
}

impl MoveBuilder {
    fn new(nodes: usize, edges: usize) -> Self {
        Self {
            graph: MaxFlowGraph::with_capacity(nodes, edges),
            unary: Vec::with_capacity(nodes),
        }
    }

    fn add_var(&mut self) -> usize {
        self.unary.push((0.0, 0.0));
        self.graph.add_node()
    }

    fn add_unary(&mut self, v: usize, e0: f64, e1: f64) {
        self.unary[v].0 += e0;
        self.unary[v].1 += e1;
    }

    /// Pairwise table `E(x_p, x_q)` with `a = E(0,0)`, `b = E(0,1)`,
    /// `c = E(1,0)`, `d = E(1,1)`.
    ///
    /// After moving `(a, d)` onto `p` the rest is `[[0, b - a], [c - d, 0]]`,
    /// which is two plain arcs whenever both entries are non-negative. That
    /// keeps Potts edges free of terminal capacity.
    fn add_pairwise(&mut self, p: usize, q: usize, a: f64, b: f64, c: f64, d: f64) {
        assert!(
            b + c - a - d >= -1e-12 * (a.abs() + b.abs() + c.abs() + d.abs()).max(1.0),
            "non-submodular pairwise term ({a}, {b}, {c}, {d})"
        );
        self.add_unary(p, a, d);
        let (b, c) = (b - a, c - d);
        if b < 0.0 {
            self.add_unary(p, 0.0, -b);
            self.add_unary(q, 0.0, b);
            self.add_arcs(p, q, 0.0, b + c);
        } else if c < 0.0 {
            self.add_unary(p, 0.0, c);
            self.add_unary(q, 0.0, -c);
            self.add_arcs(p, q, b + c, 0.0);
        } else {
            self.add_arcs(p, q, b, c);
        }
    }

    /// `cap` is paid for `(x_p, x_q) = (0, 1)`, `rev_cap` for `(1, 0)`.
    fn add_arcs(&mut self, p: usize, q: usize, cap: f64, rev_cap: f64) {
        let (cap, rev_cap) = (cap.max(0.0), rev_cap.max(0.0));
        if cap > 0.0 || rev_cap > 0.0 {
            self.graph.add_edge(p, q, cap, rev_cap);
        }
    }

    /// Returns `x` for every variable; ties resolve to `x = 0`.
    fn solve(mut self) -> Vec<bool> {
        for (v, &(e0, e1)) in self.unary.iter().enumerate() {
            let delta = e1 - e0;
            if delta > 0.0 {
                self.graph.add_tweights(v, delta, 0.0);
            } else if delta < 0.0 {
                self.graph.add_tweights(v, 0.0, -delta);
            }
        }
        self.graph.max_flow();
        (0..self.unary.len()).map(|v| self.graph.is_sink(v)).collect()
    }
}

/// Best labeling reachable from `assignment` by expanding `alpha`.
fn expansion_move(
    costs: &DataCosts,
    assignment: &[LabelId],
    graph: &SpatialGraph,
    params: &EnergyParams,
    alpha: LabelId,
    with_label_costs: bool,
) -> Vec<LabelId> {
    const FIXED: usize = usize::MAX;
    let n = assignment.len();
    let alpha_col = costs.column(alpha).expect("alpha has cached costs");

    let mut var = vec![FIXED; n];
    let mut builder = MoveBuilder::new(n + n / HUB_GROUP + 2 * costs.labels().len() + 2, graph.edges().len() + n);
    for i in 0..n {
        if assignment[i] != alpha {
            var[i] = builder.add_var();
            builder.add_unary(var[i], costs.cost_of(i, assignment[i]), costs.cost(i, alpha_col));
        }
    }

    for e in graph.edges() {
        let w = params.lambda_p * e.w;
        if w <= 0.0 {
            continue;
        }
        match (var[e.i], var[e.j]) {
            (FIXED, FIXED) => {}
            (p, FIXED) | (FIXED, p) => builder.add_unary(p, w, 0.0),
            (p, q) => {
                let a = if assignment[e.i] != assignment[e.j] { w } else { 0.0 };
                builder.add_pairwise(p, q, a, w, w, 0.0);
            }
        }
    }

    if with_label_costs && params.lambda_m > 0.0 {
        let lm = params.lambda_m;
        let mut members: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
        let mut alpha_used = false;
        for (i, &l) in assignment.iter().enumerate() {
            if l == alpha {
                alpha_used = true;
            } else {
                members.entry(l).or_default().push(var[i]);
            }
        }
        // y = 1 claims label l is vacated; any member keeping l contradicts it.
        // Members attach through group nodes so no variable has more than
        // about `HUB_GROUP` arcs; a group at 1 costs λ_M unless y is 0 or
        // the whole group switched, so the minimum over groups is unchanged.
        for vars in members.values() {
            let y = builder.add_var();
            builder.add_unary(y, lm, 0.0);
            for chunk in vars.chunks(HUB_GROUP) {
                if vars.len() <= HUB_GROUP {
                    for &v in chunk {
                        builder.add_pairwise(v, y, 0.0, lm, 0.0, 0.0);
                    }
                } else {
                    let g = builder.add_var();
                    for &v in chunk {
                        builder.add_pairwise(v, g, 0.0, lm, 0.0, 0.0);
                    }
                    builder.add_pairwise(g, y, 0.0, lm, 0.0, 0.0);
                }
            }
        }
        // z = 1 pays for introducing alpha; any node switching without it pays instead.
        if !alpha_used {
            let z = builder.add_var();
            builder.add_unary(z, 0.0, lm);
            let vars: Vec<usize> = var.iter().copied().filter(|&v| v != FIXED).collect();
            for chunk in vars.chunks(HUB_GROUP) {
                if vars.len() <= HUB_GROUP {
                    for &v in chunk {
                        builder.add_pairwise(z, v, 0.0, lm, 0.0, 0.0);
                    }
                } else {
                    let g = builder.add_var();
                    builder.add_pairwise(z, g, 0.0, lm, 0.0, 0.0);
                    for &v in chunk {
                        builder.add_pairwise(g, v, 0.0, lm, 0.0, 0.0);
                    }
                }
            }
        }
    }

    let x = builder.solve();
    assignment
        .iter()
        .zip(&var)
        .map(|(&l, &v)| if v != FIXED && x[v] { alpha } else { l })
        .collect()
}

/// Reassigns whole labels to their members' best remaining label when that
/// lowers the energy, smallest labels first.
fn prune_labels(
    costs: &DataCosts,
    assignment: &mut Vec<LabelId>,
    graph: &SpatialGraph,
    params: &EnergyParams,
    current: &mut EnergyBreakdown,
) -> usize {
    let mut removed = 0;
    loop {
        let lab = Labeling::new(assignment.clone());
        let counts = lab.counts();
        if counts.len() < 2 {
            return removed;
        }
        let mut by_size: Vec<(usize, LabelId)> = counts.iter().map(|(&l, &c)| (c, l)).collect();
        by_size.sort_unstable();
        let mut changed = false;
        for &(_, victim) in &by_size {
            let remaining: Vec<LabelId> = counts.keys().copied().filter(|&l| l != victim).collect();
            let mut proposal = assignment.clone();
            for i in 0..proposal.len() {
                if proposal[i] != victim {
                    continue;
                }
                let best = remaining
                    .iter()
                    .copied()
                    .map(|l| {
                        let pair: f64 = graph
                            .neighbors(i)
                            .iter()
                            .filter(|&&(j, _)| proposal[j] != l)
                            .map(|&(_, w)| params.lambda_p * w)
                            .sum();
                        (costs.cost_of(i, l) + pair, l)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("at least one remaining label");
                proposal[i] = best.1;
            }
            let e = costs.energy(&proposal, graph, params);
            if strictly_lower(e.total, current.total) {
                *assignment = proposal;
                *current = e;
                removed += 1;
                changed = true;
                break;
            }
        }
        if !changed {
            return removed;
        }
    }
}

/// One sweep of expansion moves over `order` on cached data costs.
///
/// Returns the energy after the sweep and the number of accepted moves.
pub fn expansion_sweep(
    costs: &DataCosts,
    assignment: &mut Vec<LabelId>,
    graph: &SpatialGraph,
    params: &EnergyParams,
    order: &[LabelId],
    mode: LabelCostMode,
) -> (EnergyBreakdown, usize) {
    let mut current = costs.energy(assignment, graph, params);
    let mut accepted = 0;
    for &alpha in order {
        let proposal = expansion_move(costs, assignment, graph, params, alpha, mode == LabelCostMode::Delong);
        if proposal == *assignment {
            continue;
        }
        let e = costs.energy(&proposal, graph, params);
        if strictly_lower(e.total, current.total) {
            *assignment = proposal;
            current = e;
            accepted += 1;
        }
    }
    if mode == LabelCostMode::Prune {
        accepted += prune_labels(costs, assignment, graph, params, &mut current);
    }
    (current, accepted)
}

/// One full sweep of expansion moves with label costs in every move.
pub fn alpha_expansion(
    labeling: &Labeling,
    models: &BTreeMap<LabelId, AffineMotionModel>,
    graph: &SpatialGraph,
    window: &Window,
    params: &EnergyParams,
    order: &[LabelId],
) -> Result<(Labeling, EnergyBreakdown)> {
    alpha_expansion_with_mode(labeling, models, graph, window, params, order, LabelCostMode::Delong)
}

pub fn alpha_expansion_with_mode(
    labeling: &Labeling,
    models: &BTreeMap<LabelId, AffineMotionModel>,
    graph: &SpatialGraph,
    window: &Window,
    params: &EnergyParams,
    order: &[LabelId],
    mode: LabelCostMode,
) -> Result<(Labeling, EnergyBreakdown)> {
    if labeling.len() != window.len() || graph.node_count() != window.len() {
        return Err(Error::DimensionMismatch(labeling.len(), 1, window.len(), graph.node_count()));
    }
    let labels = labeling.active_labels().iter().copied().chain(order.iter().copied());
    let costs = DataCosts::new(window, models, labels, params)?;
    let mut assignment = labeling.assignment().to_vec();
    let (e, _) = expansion_sweep(&costs, &mut assignment, graph, params, order, mode);
    Ok((Labeling::new(assignment), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph_from_positions;
    use crate::graph::EdgeWeighting;
    use crate::types::Vec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random planar instance with arbitrary data costs in [0, 1].
    fn instance(n: usize, labels: &[LabelId], seed: u64) -> (DataCosts, SpatialGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<Vec2> = (0..n)
            .map(|_| Vec2::new(rng.random_range(0..40) as f64, rng.random_range(0..40) as f64))
            .collect();
        let graph = build_graph_from_positions(positions, EdgeWeighting::Uniform);
        let costs: Vec<f64> = (0..n * labels.len()).map(|_| rng.random::<f64>()).collect();
        (DataCosts::from_table(labels.to_vec(), costs), graph)
    }

    fn brute_force(costs: &DataCosts, graph: &SpatialGraph, params: &EnergyParams) -> f64 {
        let labels = costs.labels();
        let n = graph.node_count();
        let k = labels.len();
        let mut digits = vec![0usize; n];
        let mut assignment = vec![labels[0]; n];
        let mut best = f64::INFINITY;
        loop {
            best = best.min(costs.energy(&assignment, graph, params).total);
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                digits[pos] += 1;
                if digits[pos] < k {
                    assignment[pos] = labels[digits[pos]];
                    break;
                }
                digits[pos] = 0;
                assignment[pos] = labels[0];
                pos += 1;
            }
        }
    }

    fn run_to_convergence(
        costs: &DataCosts,
        assignment: &mut Vec<LabelId>,
        graph: &SpatialGraph,
        params: &EnergyParams,
        mode: LabelCostMode,
    ) -> Vec<EnergyBreakdown> {
        let order = costs.labels().to_vec();
        let mut trace = vec![costs.energy(assignment, graph, params)];
        for _ in 0..20 {
            let (e, moves) = expansion_sweep(costs, assignment, graph, params, &order, mode);
            trace.push(e);
            if moves == 0 {
                break;
            }
        }
        trace
    }

    #[test]
    fn two_labels_reach_global_minimum() {
        for seed in 0..20 {
            let (costs, graph) = instance(10, &[1, 2], seed);
            let params = EnergyParams { lambda_p: 0.2, lambda_m: 0.0, tau_d: 1.0 };
            let mut assignment = vec![1; 10];
            let (e, _) = expansion_sweep(&costs, &mut assignment, &graph, &params, &[1, 2], LabelCostMode::Delong);
            let oracle = brute_force(&costs, &graph, &params);
            assert!((e.total - oracle).abs() < 1e-9, "seed {seed}: {} vs {oracle}", e.total);
        }
    }

    #[test]
    fn two_labels_with_label_cost_reach_global_minimum() {
        for seed in 0..20 {
            let (costs, graph) = instance(10, &[1, 2], 100 + seed);
            let params = EnergyParams { lambda_p: 0.2, lambda_m: 1.5, tau_d: 1.0 };
            let mut assignment = vec![1; 10];
            let (e, _) = expansion_sweep(&costs, &mut assignment, &graph, &params, &[2, 1], LabelCostMode::Delong);
            let oracle = brute_force(&costs, &graph, &params);
            assert!((e.total - oracle).abs() < 1e-9, "seed {seed}: {} vs {oracle}", e.total);
        }
    }

    #[test]
    fn three_labels_within_factor_two() {
        for (seed, mode) in [(0, LabelCostMode::Delong), (1, LabelCostMode::Delong), (2, LabelCostMode::Prune)] {
            let (costs, graph) = instance(12, &[1, 2, 3], 300 + seed);
            let params = EnergyParams { lambda_p: 0.3, lambda_m: 0.8, tau_d: 1.0 };
            let mut assignment: Vec<LabelId> = (0..12).map(|i| (i % 3 + 1) as LabelId).collect();
            let trace = run_to_convergence(&costs, &mut assignment, &graph, &params, mode);
            let got = trace.last().unwrap().total;
            let oracle = brute_force(&costs, &graph, &params);
            assert!(got >= oracle - 1e-9 && got <= 2.0 * oracle + 1e-9, "{mode}: {got} vs {oracle}");
        }
    }

    #[test]
    fn label_cost_empties_redundant_label() {
        // Both labels explain every node equally; one of them is pure cost.
        let n = 8;
        let costs = DataCosts::from_table(vec![1, 2], vec![0.1; n * 2]);
        let positions = (0..n).map(|i| Vec2::new(i as f64, (i * i % 5) as f64)).collect();
        let graph = build_graph_from_positions(positions, EdgeWeighting::Uniform);
        let params = EnergyParams { lambda_p: 0.0, lambda_m: 5.0, tau_d: 1.0 };
        let mut assignment = vec![1, 1, 1, 1, 2, 2, 2, 2];
        let (e, moves) = expansion_sweep(&costs, &mut assignment, &graph, &params, &[1, 2], LabelCostMode::Delong);
        assert_eq!(moves, 1);
        assert_eq!(assignment, vec![1; n]);
        assert!((e.total - (0.8 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let (costs, graph) = instance(10, &[1, 2], 7);
        let params = EnergyParams { lambda_p: 0.2, lambda_m: 0.5, tau_d: 1.0 };
        let mut assignment = vec![1; 10];
        run_to_convergence(&costs, &mut assignment, &graph, &params, LabelCostMode::Delong);
        let before = assignment.clone();
        let e0 = costs.energy(&assignment, &graph, &params);
        let (e1, moves) = expansion_sweep(&costs, &mut assignment, &graph, &params, &[1, 2], LabelCostMode::Delong);
        assert_eq!(moves, 0);
        assert_eq!(assignment, before);
        assert_eq!(e0, e1);
    }

    #[test]
    fn energy_is_monotone_and_deterministic() {
        for seed in 0..10 {
            let (costs, graph) = instance(60, &[1, 2, 3, 4], 500 + seed);
            let params = EnergyParams { lambda_p: 0.25, lambda_m: 2.0, tau_d: 1.0 };
            let start: Vec<LabelId> = (0..60).map(|i| (i % 4 + 1) as LabelId).collect();
            let mut a = start.clone();
            let trace = run_to_convergence(&costs, &mut a, &graph, &params, LabelCostMode::Delong);
            for w in trace.windows(2) {
                assert!(w[1].total <= w[0].total);
            }
            let mut b = start;
            run_to_convergence(&costs, &mut b, &graph, &params, LabelCostMode::Delong);
            assert_eq!(a, b);
        }
    }

    #[test]
    #[should_panic(expected = "non-submodular")]
    fn rejects_non_submodular_terms() {
        let mut b = MoveBuilder::new(2, 1);
        let p = b.add_var();
        let q = b.add_var();
        b.add_pairwise(p, q, 1.0, 0.0, 0.0, 1.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("delong".parse::<LabelCostMode>().unwrap(), LabelCostMode::Delong);
        assert_eq!("prune".parse::<LabelCostMode>().unwrap(), LabelCostMode::Prune);
        assert!("other".parse::<LabelCostMode>().is_err());
    }
}
