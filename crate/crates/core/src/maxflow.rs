//! Augmenting-path max-flow in the Boykov–Kolmogorov style.
//!
//! Two search trees grow from the terminals; a path is found when they
//! touch, augmented, and the trees are repaired by orphan adoption. After
//! termination a node is labeled 1 iff it belongs to the sink tree, so free
//! nodes (ties) take label 0.

use std::collections::VecDeque;

use crate::energy::SparseWeights;
use crate::error::{DopeError, Result};

/// Residual capacities at or below this are treated as saturated.
pub const SATURATION_EPS: f64 = 1e-12;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parent {
    Free,
    Terminal,
    Orphan,
    Arc(usize),
}

#[derive(Debug, Clone)]
struct Node {
    first: usize,
    parent: Parent,
    in_sink: bool,
    /// Residual terminal capacity: positive towards the source, negative towards the sink.
    tr_cap: f64,
    active: bool,
    ts: u64,
    dist: u32,
}

/// Flow network over binary variables with paired residual arcs.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    nodes: Vec<Node>,
    head: Vec<usize>,
    next: Vec<usize>,
    r_cap: Vec<f64>,
    flow: f64,
}

impl FlowGraph {
    pub fn new(node_count: usize) -> Self {
        Self {
            nodes: vec![
                Node {
                    first: NONE,
                    parent: Parent::Free,
                    in_sink: false,
                    tr_cap: 0.0,
                    active: false,
                    ts: 0,
                    dist: 0,
                };
                node_count
            ],
            head: Vec::new(),
            next: Vec::new(),
            r_cap: Vec::new(),
            flow: 0.0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds terminal capacities; the common part is pushed as flow at once.
    pub fn add_terminal_caps(&mut self, i: usize, source: f64, sink: f64) {
        debug_assert!(source >= 0.0 && sink >= 0.0);
        let node = &mut self.nodes[i];
        let (mut s, mut t) = (source, sink);
        if node.tr_cap > 0.0 {
            s += node.tr_cap;
        } else {
            t -= node.tr_cap;
        }
        self.flow += s.min(t);
        node.tr_cap = s - t;
    }

    /// Adds arc `i → j` with capacity `cap` and `j → i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        for (from, to, c) in [(i, j, cap), (j, i, rev_cap)] {
            let a = self.head.len();
            self.head.push(to);
            self.next.push(self.nodes[from].first);
            self.r_cap.push(c);
            self.nodes[from].first = a;
        }
    }

    fn arcs(&self, i: usize) -> ArcIter<'_> {
        ArcIter {
            next: &self.next,
            cur: self.nodes[i].first,
        }
    }

    /// Runs max-flow and returns its value.
    pub fn maxflow(&mut self) -> f64 {
        let mut solver = Search::new(self);
        solver.run();
        self.flow
    }

    /// 1 iff the node ended in the sink tree.
    pub fn label(&self, i: usize) -> u8 {
        let n = &self.nodes[i];
        u8::from(n.in_sink && n.parent != Parent::Free)
    }
}

struct ArcIter<'a> {
    next: &'a [usize],
    cur: usize,
}

impl Iterator for ArcIter<'_> {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.cur == NONE {
            return None;
        }
        let a = self.cur;
        self.cur = self.next[a];
        Some(a)
    }
}

#[inline]
fn sister(a: usize) -> usize {
    a ^ 1
}

struct Search<'g> {
    g: &'g mut FlowGraph,
    active: VecDeque<usize>,
    orphans: VecDeque<usize>,
    time: u64,
}

impl<'g> Search<'g> {
    fn new(g: &'g mut FlowGraph) -> Self {
        Self {
            g,
            active: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
        }
    }

    fn set_active(&mut self, i: usize) {
        if !self.g.nodes[i].active {
            self.g.nodes[i].active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<usize> {
        while let Some(i) = self.active.pop_front() {
            self.g.nodes[i].active = false;
            if self.g.nodes[i].parent != Parent::Free {
                return Some(i);
            }
        }
        None
    }

    fn run(&mut self) {
        for i in 0..self.g.nodes.len() {
            let tr = self.g.nodes[i].tr_cap;
            let node = &mut self.g.nodes[i];
            if tr > SATURATION_EPS {
                node.in_sink = false;
            } else if tr < -SATURATION_EPS {
                node.in_sink = true;
            } else {
                node.parent = Parent::Free;
                continue;
            }
            node.parent = Parent::Terminal;
            node.ts = 0;
            node.dist = 1;
            self.set_active(i);
        }

        let mut current: Option<usize> = None;
        loop {
            // keep growing from the same node while it stays in a tree
            let i = match current.take() {
                Some(i) if self.g.nodes[i].parent != Parent::Free => i,
                _ => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            let Some(bridge) = self.grow(i) else { continue };
            // node may still have unexplored arcs
            current = Some(i);
            self.time += 1;
            self.augment(bridge);
            self.adopt_orphans();
        }
    }

    /// Expands the tree at `i`; returns a source→sink bridging arc if the trees meet.
    fn grow(&mut self, i: usize) -> Option<usize> {
        let in_sink = self.g.nodes[i].in_sink;
        let mut a_opt = self.g.nodes[i].first;
        while a_opt != NONE {
            let a = a_opt;
            a_opt = self.g.next[a];
            let residual = if in_sink {
                self.g.r_cap[sister(a)]
            } else {
                self.g.r_cap[a]
            };
            if residual <= SATURATION_EPS {
                continue;
            }
            let j = self.g.head[a];
            let (ti, di) = (self.g.nodes[i].ts, self.g.nodes[i].dist);
            let nj = &mut self.g.nodes[j];
            if nj.parent == Parent::Free {
                nj.in_sink = in_sink;
                nj.parent = Parent::Arc(sister(a));
                nj.ts = ti;
                nj.dist = di + 1;
                self.set_active(j);
            } else if nj.in_sink != in_sink {
                return Some(if in_sink { sister(a) } else { a });
            } else if nj.ts <= ti && nj.dist > di {
                // shorter route to the terminal
                nj.parent = Parent::Arc(sister(a));
                nj.ts = ti;
                nj.dist = di + 1;
            }
        }
        None
    }

    fn augment(&mut self, bridge: usize) {
        let g = &mut *self.g;
        let mut bottleneck = g.r_cap[bridge];
        // source side: walk from the bridge tail upward
        let mut i = g.head[sister(bridge)];
        while let Parent::Arc(a) = g.nodes[i].parent {
            bottleneck = bottleneck.min(g.r_cap[sister(a)]);
            i = g.head[a];
        }
        bottleneck = bottleneck.min(g.nodes[i].tr_cap);
        let mut i = g.head[bridge];
        while let Parent::Arc(a) = g.nodes[i].parent {
            bottleneck = bottleneck.min(g.r_cap[a]);
            i = g.head[a];
        }
        bottleneck = bottleneck.min(-g.nodes[i].tr_cap);

        g.r_cap[sister(bridge)] += bottleneck;
        g.r_cap[bridge] -= bottleneck;

        let mut i = g.head[sister(bridge)];
        while let Parent::Arc(a) = g.nodes[i].parent {
            g.r_cap[a] += bottleneck;
            g.r_cap[sister(a)] -= bottleneck;
            if g.r_cap[sister(a)] <= SATURATION_EPS {
                g.nodes[i].parent = Parent::Orphan;
                self.orphans.push_front(i);
            }
            i = g.head[a];
        }
        g.nodes[i].tr_cap -= bottleneck;
        if g.nodes[i].tr_cap <= SATURATION_EPS {
            g.nodes[i].parent = Parent::Orphan;
            self.orphans.push_front(i);
        }

        let mut i = g.head[bridge];
        while let Parent::Arc(a) = g.nodes[i].parent {
            g.r_cap[sister(a)] += bottleneck;
            g.r_cap[a] -= bottleneck;
            if g.r_cap[a] <= SATURATION_EPS {
                g.nodes[i].parent = Parent::Orphan;
                self.orphans.push_front(i);
            }
            i = g.head[a];
        }
        g.nodes[i].tr_cap += bottleneck;
        if g.nodes[i].tr_cap >= -SATURATION_EPS {
            g.nodes[i].parent = Parent::Orphan;
            self.orphans.push_front(i);
        }
        g.flow += bottleneck;
    }

    fn adopt_orphans(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.adopt(i);
        }
    }

    /// Distance from `j` to its terminal if its chain is rooted; marks the chain.
    fn origin_distance(&mut self, j: usize) -> Option<u32> {
        let time = self.time;
        let mut d = 0u32;
        let mut k = j;
        loop {
            let node = &self.g.nodes[k];
            if node.ts == time {
                d += node.dist;
                break;
            }
            d += 1;
            match node.parent {
                Parent::Terminal => {
                    let node = &mut self.g.nodes[k];
                    node.ts = time;
                    node.dist = 1;
                    break;
                }
                Parent::Arc(a) => k = self.g.head[a],
                Parent::Orphan | Parent::Free => return None,
            }
        }
        // stamp the chain with exact distances
        let mut k = j;
        let mut dk = d;
        while self.g.nodes[k].ts != time {
            let node = &mut self.g.nodes[k];
            node.ts = time;
            node.dist = dk;
            dk -= 1;
            match node.parent {
                Parent::Arc(a) => k = self.g.head[a],
                _ => break,
            }
        }
        Some(d)
    }

    fn adopt(&mut self, i: usize) {
        let in_sink = self.g.nodes[i].in_sink;
        let mut best: Option<(usize, u32)> = None;
        let arcs: Vec<usize> = self.g.arcs(i).collect();
        for &a in &arcs {
            let j = self.g.head[a];
            let residual = if in_sink {
                self.g.r_cap[a]
            } else {
                self.g.r_cap[sister(a)]
            };
            if residual <= SATURATION_EPS {
                continue;
            }
            let nj = &self.g.nodes[j];
            if nj.in_sink != in_sink || matches!(nj.parent, Parent::Free | Parent::Orphan) {
                continue;
            }
            if let Some(d) = self.origin_distance(j) {
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((a, d));
                }
            }
        }
        if let Some((a, d)) = best {
            let time = self.time;
            let node = &mut self.g.nodes[i];
            node.parent = Parent::Arc(a);
            node.ts = time;
            node.dist = d + 1;
            return;
        }
        self.g.nodes[i].ts = 0;
        for &a in &arcs {
            let j = self.g.head[a];
            let nj = &self.g.nodes[j];
            if nj.in_sink != in_sink || nj.parent == Parent::Free {
                continue;
            }
            let residual = if in_sink {
                self.g.r_cap[a]
            } else {
                self.g.r_cap[sister(a)]
            };
            if residual > SATURATION_EPS {
                self.set_active(j);
            }
            if let Parent::Arc(pa) = self.g.nodes[j].parent {
                if self.g.head[pa] == i {
                    self.g.nodes[j].parent = Parent::Orphan;
                    self.orphans.push_back(j);
                }
            }
        }
        self.g.nodes[i].parent = Parent::Free;
    }
}

/// Graph for `linearᵀŷ + λ Σ_{i<j} w_ij |ŷ_i − ŷ_j|`. Label 1 is the sink
/// side: positive linear terms become source arcs, negative ones sink arcs,
/// and each pair gets capacity `λ·w` in both directions.
pub fn build_graph(linear: &[f64], pairwise: &SparseWeights, lambda: f64) -> Result<FlowGraph> {
    if pairwise.n() != linear.len() {
        return Err(DopeError::LengthMismatch {
            expected: linear.len(),
            got: pairwise.n(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(DopeError::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let mut g = FlowGraph::new(linear.len());
    for (i, &l) in linear.iter().enumerate() {
        if l > 0.0 {
            g.add_terminal_caps(i, l, 0.0);
        } else if l < 0.0 {
            g.add_terminal_caps(i, 0.0, -l);
        }
    }
    for (i, j, w) in pairwise.pairs() {
        if w < 0.0 {
            return Err(DopeError::NonSubmodular { i, j, weight: w });
        }
        let cap = lambda * w;
        if cap > 0.0 {
            g.add_edge(i, j, cap, cap);
        }
    }
    Ok(g)
}

/// Solves the cut; `flow = min energy − Σ_i min(linear_i, 0)`.
pub fn min_cut(mut graph: FlowGraph) -> (Vec<u8>, f64) {
    let flow = graph.maxflow();
    let labels = (0..graph.node_count()).map(|i| graph.label(i)).collect();
    (labels, flow)
}

/// Minimizes a submodular pairwise energy with one max-flow.
pub fn minimize(linear: &[f64], pairwise: &SparseWeights, lambda: f64) -> Result<(Vec<u8>, f64)> {
    Ok(min_cut(build_graph(linear, pairwise, lambda)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::labeling_energy;
    use crate::solvers::exhaustive_minimize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_nodes() {
        let w = SparseWeights::empty(1);
        assert_eq!(minimize(&[-1.0], &w, 1.0).unwrap(), (vec![1], 0.0));
        assert_eq!(minimize(&[1.0], &w, 1.0).unwrap(), (vec![0], 0.0));
    }

    #[test]
    fn two_nodes_against_enumeration() {
        let w = SparseWeights::from_pairs(2, [(0, 1, 5.0)], false).unwrap();
        let (labels, _) = minimize(&[-3.0, 1.0], &w, 1.0).unwrap();
        assert_eq!(labels, vec![1, 1]);
        assert_eq!(labeling_energy(&[-3.0, 1.0], &w, 1.0, &labels), -2.0);
    }

    #[test]
    fn disconnected_nodes_follow_sign() {
        let lin = [2.0, -0.5, 0.0, -7.0, 3.0];
        let (labels, flow) = minimize(&lin, &SparseWeights::empty(5), 1.0).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1, 0]);
        assert_eq!(flow, 0.0);
    }

    #[test]
    fn zero_unaries_tie_to_zero() {
        let w = SparseWeights::from_pairs(3, [(0, 1, 1.0), (1, 2, 1.0)], false).unwrap();
        let (labels, flow) = minimize(&[0.0; 3], &w, 1.0).unwrap();
        assert_eq!(labels, vec![0, 0, 0]);
        assert_eq!(flow, 0.0);
    }

    #[test]
    fn refuses_negative_weights() {
        let w = SparseWeights::from_pairs(2, [(0, 1, -1.0)], true).unwrap();
        assert!(matches!(
            build_graph(&[0.0, 0.0], &w, 1.0),
            Err(DopeError::NonSubmodular { .. })
        ));
    }

    fn grid_weights(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SparseWeights {
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                for (dr, dc) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < rows as isize && nc >= 0 && nc < cols as isize {
                        pairs.push((i, nr as usize * cols + nc as usize, rng.random::<f64>()));
                    }
                }
            }
        }
        SparseWeights::from_pairs(rows * cols, pairs, false).unwrap()
    }

    fn cut_capacity(linear: &[f64], w: &SparseWeights, lambda: f64, labels: &[u8]) -> f64 {
        let mut cut: f64 = linear
            .iter()
            .zip(labels)
            .map(|(&l, &y)| {
                if y == 1 && l > 0.0 {
                    l
                } else if y == 0 && l < 0.0 {
                    -l
                } else {
                    0.0
                }
            })
            .sum();
        for (i, j, v) in w.pairs() {
            if labels[i] != labels[j] {
                cut += lambda * v;
            }
        }
        cut
    }

    #[test]
    fn random_grids_match_exhaustive_and_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let (rows, cols) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let w = grid_weights(rows, cols, &mut rng);
            let lin: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lambda = rng.random_range(0.0..2.0);
            let (labels, flow) = minimize(&lin, &w, lambda).unwrap();
            let (_, best) = exhaustive_minimize(&lin, &w, lambda).unwrap();
            let e = labeling_energy(&lin, &w, lambda, &labels);
            assert_eq!(e, best);
            let offset: f64 = lin.iter().map(|&l| l.min(0.0)).sum();
            assert!((flow - (e - offset)).abs() < 1e-9);
            assert!((flow - cut_capacity(&lin, &w, lambda, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = grid_weights(12, 12, &mut rng);
        let lin: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = minimize(&lin, &w, 0.6).unwrap();
        let b = minimize(&lin, &w, 0.6).unwrap();
        assert_eq!(a, b);
    }
}
