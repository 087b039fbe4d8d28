//! Instance builders and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_equilibrium::char_fn::gradient;
use traffic_equilibrium::network::{
    parse_tntp_net, parse_tntp_trips, validate_reachability, DemandMatrix, Edge, Network,
};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
}

pub fn load(net: &str, trips: &str) -> (Network, DemandMatrix) {
    let dir = data_dir();
    let n = parse_tntp_net(&std::fs::read_to_string(dir.join(net)).unwrap()).unwrap();
    let d = parse_tntp_trips(&std::fs::read_to_string(dir.join(trips)).unwrap()).unwrap();
    (n, d)
}

pub fn sioux_falls() -> (Network, DemandMatrix) {
    load("SiouxFalls_net.tntp", "SiouxFalls_trips.tntp")
}

/// Random digraph with every OD endpoint reachable, plus random times and demands.
pub struct RandomInstance {
    pub net: Network,
    pub times: Vec<f64>,
    pub demand: DemandMatrix,
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
    max_edges: usize,
    integer_times: bool,
) -> RandomInstance {
    loop {
        let nodes = rng.gen_range(3..=max_nodes);
        let m = rng.gen_range(nodes..=max_edges);
        let mut edges = Vec::with_capacity(m);
        while edges.len() < m {
            let (a, b) = (rng.gen_range(0..nodes), rng.gen_range(0..nodes));
            if a != b {
                edges.push(Edge::new(
                    a,
                    b,
                    rng.gen_range(0.5..3.0),
                    rng.gen_range(1.0..10.0),
                    0.15,
                    4.0,
                ));
            }
        }
        let net = Network::new(nodes, edges).unwrap();
        let times: Vec<f64> = (0..m)
            .map(|_| {
                if integer_times {
                    rng.gen_range(1..20) as f64
                } else {
                    rng.gen_range(0.5..3.0)
                }
            })
            .collect();
        let mut pairs = Vec::new();
        for o in 0..nodes {
            for d in 0..nodes {
                if o != d && rng.gen_bool(0.4) {
                    pairs.push((o, d, rng.gen_range(0.5..5.0)));
                }
            }
        }
        let Ok(all) = DemandMatrix::from_pairs(pairs) else {
            continue;
        };
        let reachable: Vec<_> = {
            let bad = validate_reachability(&net, &all, nodes - 1);
            all.entries()
                .iter()
                .filter(|p| !bad.contains(&(p.origin, p.destination)))
                .map(|p| (p.origin, p.destination, p.demand))
                .collect()
        };
        if let Ok(demand) = DemandMatrix::from_pairs(reachable) {
            return RandomInstance { net, times, demand };
        }
    }
}

/// Every walk of `1..=max_len` edges from `source`, as edge sequences.
pub fn enumerate_walks(net: &Network, source: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(source, Vec::new())];
    while let Some((v, walk)) = stack.pop() {
        if walk.len() == max_len {
            continue;
        }
        for &e in net.out_edges(v) {
            let mut w = walk.clone();
            w.push(e);
            stack.push((net.edge(e).head, w.clone()));
            out.push(w);
        }
    }
    out
}

/// Logit value, flows and entropy `γ Σ_w Σ_p x_p ln(x_p/d_w)` from explicit walks.
pub struct Enumerated {
    pub value: f64,
    pub flows: Vec<f64>,
    pub entropy: f64,
    pub walk_counts: Vec<(usize, usize, usize)>,
}

pub fn enumerate_logit(
    net: &Network,
    t: &[f64],
    gamma: f64,
    max_len: usize,
    dm: &DemandMatrix,
) -> Enumerated {
    let mut value = 0.0;
    let mut flows = vec![0.0; net.edge_count()];
    let mut entropy = 0.0;
    let mut walk_counts = Vec::new();
    for (origin, pairs) in dm.by_origin() {
        let walks = enumerate_walks(net, origin, max_len);
        for p in pairs {
            let costs: Vec<(f64, &Vec<usize>)> = walks
                .iter()
                .filter(|w| net.edge(*w.last().unwrap()).head == p.destination)
                .map(|w| (w.iter().map(|&e| t[e]).sum::<f64>(), w))
                .collect();
            walk_counts.push((origin, p.destination, costs.len()));
            let min = costs.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let z: f64 = costs.iter().map(|c| (-(c.0 - min) / gamma).exp()).sum();
            value += p.demand * (-min + gamma * z.ln());
            for (c, w) in &costs {
                let share = (-(c - min) / gamma).exp() / z;
                let x = p.demand * share;
                if x > 0.0 {
                    entropy += gamma * x * share.ln();
                }
                for &e in *w {
                    flows[e] += x;
                }
            }
        }
    }
    Enumerated {
        value,
        flows,
        entropy,
        walk_counts,
    }
}

/// Shortest distances by repeated relaxation of every edge.
pub fn bellman_ford(net: &Network, t: &[f64], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.node_count()];
    dist[source] = 0.0;
    for _ in 0..net.node_count() {
        let mut changed = false;
        for (i, e) in net.edges().iter().enumerate() {
            let cand = dist[e.tail] + t[i];
            if cand < dist[e.head] {
                dist[e.head] = cand;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

/// One edge `0 → 1`, BPR with `t̄ = 10`, capacity 100.
pub fn one_edge() -> Network {
    Network::new(2, vec![Edge::new(0, 1, 10.0, 100.0, 0.15, 4.0)]).unwrap()
}

/// Two parallel routes: a congestible BPR link and a fixed-time link.
pub fn pigou() -> Network {
    Network::new(
        2,
        vec![
            Edge::new(0, 1, 1.0, 1.0, 1.0, 4.0),
            Edge::new(0, 1, 2.0, 1.0, 0.0, 4.0),
        ],
    )
    .unwrap()
}

/// Flow on route 1 of [`pigou`] at which both routes cost the same, by bisection.
pub fn pigou_split(demand: f64) -> f64 {
    // τ₁(x) = 1 + x⁴ against τ₂ = 2
    let (mut lo, mut hi) = (0.0_f64, demand);
    if 1.0 + hi.powi(4) <= 2.0 {
        return demand;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 + mid.powi(4) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two parallel routes whose cheap one is capacity-bound under stable dynamics.
pub fn bottleneck() -> Network {
    Network::new(
        2,
        vec![
            Edge::new(0, 1, 1.0, 2.0, 0.15, 4.0),
            Edge::new(0, 1, 2.0, 5.0, 0.15, 4.0),
        ],
    )
    .unwrap()
}

/// The surrogate's shape: a 16x16 grid, two links per adjacent pair, 38 zones.
pub const SURROGATE_SIDE: usize = 16;
pub const SURROGATE_ZONES: usize = 38;
pub const SURROGATE_DEMAND: f64 = 1.0e5;

/// Anaheim-scale stand-in with the same link, zone and OD counts class.
/// Zones get the smallest ids. Capacities are lifted where needed so that a
/// spread-out logit loading at free flow fits: stable dynamics stays
/// feasible while shortest-path loading still overflows some links.
pub fn anaheim_surrogate(seed: u64) -> (Network, DemandMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = SURROGATE_SIDE;
    let cells = side * side;
    let mut order: Vec<usize> = (0..cells).collect();
    order.shuffle(&mut rng);
    // cell → node id; the first SURROGATE_ZONES shuffled cells become zones
    let mut id = vec![0; cells];
    for (node, &cell) in order.iter().enumerate() {
        id[cell] = node;
    }
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let here = r * side + c;
            for (dr, dc) in [(0, 1), (1, 0)] {
                let (r2, c2) = (r + dr, c + dc);
                if r2 >= side || c2 >= side {
                    continue;
                }
                let there = r2 * side + c2;
                let fft = rng.gen_range(0.5..2.0);
                let cap = rng.gen_range(800.0..3000.0);
                edges.push(Edge::new(id[here], id[there], fft, cap, 0.15, 4.0));
                edges.push(Edge::new(id[there], id[here], fft, cap, 0.15, 4.0));
            }
        }
    }
    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for o in 0..SURROGATE_ZONES {
        for d in 0..SURROGATE_ZONES {
            if o != d {
                raw.push((o, d, rng.gen_range(0.2..1.8)));
            }
        }
    }
    let scale = SURROGATE_DEMAND / raw.iter().map(|p| p.2).sum::<f64>();
    for (o, d, w) in raw {
        pairs.push((o, d, w * scale));
    }
    let demand = DemandMatrix::from_pairs(pairs).unwrap();
    let probe = Network::with_zones(cells, SURROGATE_ZONES, edges.clone()).unwrap();
    let load = gradient(&probe, &probe.free_flow_times(), 1.0, 2 * side, &demand)
        .unwrap()
        .flows;
    for (e, l) in edges.iter_mut().zip(load) {
        e.capacity = e.capacity.max(1.05 * l);
    }
    (
        Network::with_zones(cells, SURROGATE_ZONES, edges).unwrap(),
        demand,
    )
}

/// Real Anaheim files when present under `tests/data`, else the surrogate.
pub fn anaheim() -> (Network, DemandMatrix, bool) {
    let dir = data_dir();
    if dir.join("Anaheim_net.tntp").exists() && dir.join("Anaheim_trips.tntp").exists() {
        let (n, d) = load("Anaheim_net.tntp", "Anaheim_trips.tntp");
        (n, d, false)
    } else {
        let (n, d) = anaheim_surrogate(2024);
        (n, d, true)
    }
}

/// Least-squares fit of `y = c₀ + c₁x`; returns `(c₀, c₁, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (icept, slope, 1.0 - ss_res / ss_tot)
}
