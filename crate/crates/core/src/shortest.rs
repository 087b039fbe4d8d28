//! Nonsmooth dual oracle for `γ → 0+`: shortest-path trees and
//! all-or-nothing flows.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{DemandMatrix, Network, OdPair};
use crate::umst::{DualOracle, OracleResult};

/// Shortest-path tree rooted at `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestTree {
    pub source: usize,
    /// `+∞` for unreachable nodes.
    pub dist: Vec<f64>,
    pub parent_edge: Vec<Option<usize>>,
    /// Nodes in the order they were settled; parents precede children.
    pub settled: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    dist: f64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by node index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_times(net: &Network, t: &[f64]) -> Result<()> {
    if t.len() != net.edge_count() {
        return Err(Error::InvalidArgument(format!(
            "time vector has {} entries for {} edges",
            t.len(),
            net.edge_count()
        )));
    }
    for (edge, &time) in t.iter().enumerate() {
        if time < 0.0 || time.is_nan() {
            return Err(Error::NegativeTime { edge, time });
        }
        if time.is_infinite() {
            return Err(Error::NonFinite);
        }
    }
    Ok(())
}

fn dijkstra_unchecked(net: &Network, t: &[f64], source: usize) -> ShortestTree {
    let n = net.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent_edge = vec![None; n];
    let mut done = vec![false; n];
    let mut settled = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(QueueEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(QueueEntry { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        settled.push(node);
        for &e in net.out_edges(node) {
            let head = net.edge(e).head;
            let nd = d + t[e];
            // strict improvement only: the first edge (by index) reaching a
            // tied distance keeps the parent slot
            if nd < dist[head] {
                dist[head] = nd;
                parent_edge[head] = Some(e);
                heap.push(QueueEntry {
                    dist: nd,
                    node: head,
                });
            }
        }
    }
    ShortestTree {
        source,
        dist,
        parent_edge,
        settled,
    }
}

/// Dijkstra with a lazily-pruned binary heap.
pub fn dijkstra(net: &Network, t: &[f64], source: usize) -> Result<ShortestTree> {
    check_times(net, t)?;
    if source >= net.node_count() {
        return Err(Error::InvalidArgument(format!(
            "source {source} out of range"
        )));
    }
    Ok(dijkstra_unchecked(net, t, source))
}

/// Loads demands onto tree edges in one leaves-to-root pass.
pub fn tree_flows(net: &Network, tree: &ShortestTree, demands: &[OdPair]) -> Result<Vec<f64>> {
    let mut flows = vec![0.0; net.edge_count()];
    accumulate_tree_flows(net, tree, demands, &mut flows)?;
    Ok(flows)
}

fn accumulate_tree_flows(
    net: &Network,
    tree: &ShortestTree,
    demands: &[OdPair],
    flows: &mut [f64],
) -> Result<()> {
    let mut weight = vec![0.0; net.node_count()];
    for p in demands {
        if !tree.dist[p.destination].is_finite() {
            return Err(Error::Unreachable {
                origin: tree.source,
                destination: p.destination,
            });
        }
        weight[p.destination] += p.demand;
    }
    for &v in tree.settled.iter().rev() {
        if let Some(e) = tree.parent_edge[v] {
            let w = weight[v];
            if w != 0.0 {
                flows[e] += w;
                weight[net.edge(e).tail] += w;
            }
        }
    }
    Ok(())
}

/// Value `Φ(t) = −Σ_w d_w·dist_w(t)`, all-or-nothing flows, and the
/// subgradient `−flows`.
pub fn det_oracle(net: &Network, t: &[f64], dm: &DemandMatrix) -> Result<OracleResult> {
    check_times(net, t)?;
    let groups: Vec<_> = dm.by_origin().collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = groups
        .par_iter()
        .map(|&(origin, pairs)| {
            let tree = dijkstra_unchecked(net, t, origin);
            let mut flows = vec![0.0; net.edge_count()];
            accumulate_tree_flows(net, &tree, pairs, &mut flows)?;
            let cost: f64 = pairs
                .iter()
                .map(|p| p.demand * tree.dist[p.destination])
                .sum();
            Ok((cost, flows))
        })
        .collect();
    let mut value = 0.0;
    let mut flows = vec![0.0; net.edge_count()];
    for part in parts {
        let (cost, f) = part?;
        value -= cost;
        for (acc, x) in flows.iter_mut().zip(f) {
            *acc += x;
        }
    }
    Ok(OracleResult::from_flows(value, flows))
}

/// `Φ(t)` without building flows.
pub fn det_value(net: &Network, t: &[f64], dm: &DemandMatrix) -> Result<f64> {
    check_times(net, t)?;
    let groups: Vec<_> = dm.by_origin().collect();
    let parts: Vec<Result<f64>> = groups
        .par_iter()
        .map(|&(origin, pairs)| {
            let tree = dijkstra_unchecked(net, t, origin);
            let mut cost = 0.0;
            for p in pairs {
                let d = tree.dist[p.destination];
                if !d.is_finite() {
                    return Err(Error::Unreachable {
                        origin,
                        destination: p.destination,
                    });
                }
                cost += p.demand * d;
            }
            Ok(cost)
        })
        .collect();
    let mut value = 0.0;
    for p in parts {
        value -= p?;
    }
    Ok(value)
}

/// The all-or-nothing oracle as a [`DualOracle`].
#[derive(Debug, Clone, Copy)]
pub struct ShortestPathOracle<'a> {
    pub net: &'a Network,
    pub demand: &'a DemandMatrix,
}

impl DualOracle for ShortestPathOracle<'_> {
    fn value(&self, t: &[f64]) -> Result<f64> {
        det_value(self.net, t, self.demand)
    }

    fn evaluate(&self, t: &[f64]) -> Result<OracleResult> {
        det_oracle(self.net, t, self.demand)
    }
}
