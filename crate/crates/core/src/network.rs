//! Road network and demand data model, TNTP ingestion and export.
//!
//! Node ids in TNTP files are 1-based; internally nodes are dense 0-based
//! indices (`internal = external - 1`). Zones are ordinary nodes whose
//! external id does not exceed `<NUMBER OF ZONES>`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, ParseError, Result};

/// TNTP link columns that the cost model does not use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkMeta {
    pub length: f64,
    pub speed: f64,
    pub toll: f64,
    pub link_type: String,
}

/// A directed link with BPR parameters
/// `τ(f) = free_flow_time · (1 + rho · (f / capacity)^power)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub capacity: f64,
    pub free_flow_time: f64,
    pub rho: f64,
    pub power: f64,
    pub meta: LinkMeta,
}

impl Edge {
    pub fn new(
        tail: usize,
        head: usize,
        free_flow_time: f64,
        capacity: f64,
        rho: f64,
        power: f64,
    ) -> Self {
        Self {
            tail,
            head,
            capacity,
            free_flow_time,
            rho,
            power,
            meta: LinkMeta::default(),
        }
    }

    /// The BPR exponent is `1/mu`; the standard power 4 gives `mu = 1/4`.
    pub fn mu(&self) -> f64 {
        1.0 / self.power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_count: usize,
    zone_count: usize,
    first_thru_node: usize,
    edges: Vec<Edge>,
    out_adjacency: Vec<Vec<usize>>,
    in_adjacency: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network over nodes `0..node_count`, all of them zones.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::with_zones(node_count, node_count, edges)
    }

    pub fn with_zones(node_count: usize, zone_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidArgument("network has no nodes".into()));
        }
        if zone_count > node_count {
            return Err(Error::InvalidArgument(format!(
                "{zone_count} zones but only {node_count} nodes"
            )));
        }
        let mut out_adjacency = vec![Vec::new(); node_count];
        let mut in_adjacency = vec![Vec::new(); node_count];
        for (i, e) in edges.iter().enumerate() {
            validate_edge(e, node_count)
                .map_err(|m| Error::InvalidArgument(format!("edge {i}: {m}")))?;
            out_adjacency[e.tail].push(i);
            in_adjacency[e.head].push(i);
        }
        Ok(Self {
            node_count,
            zone_count,
            first_thru_node: 1,
            edges,
            out_adjacency,
            in_adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn zone_count(&self) -> usize {
        self.zone_count
    }

    pub fn first_thru_node(&self) -> usize {
        self.first_thru_node
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_adjacency[node]
    }

    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_adjacency[node]
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.free_flow_time).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.capacity).collect()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// 1-based id used in files.
    pub fn external_id(&self, node: usize) -> usize {
        node + 1
    }

    pub fn internal_id(&self, external: usize) -> Option<usize> {
        (1..=self.node_count)
            .contains(&external)
            .then(|| external - 1)
    }

    /// Serializes in TNTP network format with round-trip float precision.
    pub fn to_tntp(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "<NUMBER OF ZONES> {}", self.zone_count);
        let _ = writeln!(s, "<NUMBER OF NODES> {}", self.node_count);
        let _ = writeln!(s, "<FIRST THRU NODE> {}", self.first_thru_node);
        let _ = writeln!(s, "<NUMBER OF LINKS> {}", self.edges.len());
        s.push_str("<END OF METADATA>\n\n");
        s.push_str("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n");
        for e in &self.edges {
            let link_type = if e.meta.link_type.is_empty() {
                "1"
            } else {
                &e.meta.link_type
            };
            let _ = writeln!(
                s,
                "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t;",
                e.tail + 1,
                e.head + 1,
                e.capacity,
                e.meta.length,
                e.free_flow_time,
                e.rho,
                e.power,
                e.meta.speed,
                e.meta.toll,
                link_type
            );
        }
        s
    }
}

fn validate_edge(e: &Edge, node_count: usize) -> std::result::Result<(), String> {
    if e.tail >= node_count || e.head >= node_count {
        return Err(format!("endpoint out of range ({} -> {})", e.tail, e.head));
    }
    if e.tail == e.head {
        return Err(format!("self-loop at node {}", e.tail));
    }
    if !(e.capacity > 0.0 && e.capacity.is_finite()) {
        return Err(format!("non-positive capacity {}", e.capacity));
    }
    if !(e.free_flow_time > 0.0 && e.free_flow_time.is_finite()) {
        return Err(format!("non-positive free-flow time {}", e.free_flow_time));
    }
    if !(e.rho >= 0.0 && e.rho.is_finite()) {
        return Err(format!("negative b coefficient {}", e.rho));
    }
    if !(e.power >= 1.0 && e.power.is_finite()) {
        return Err(format!("power {} is below 1", e.power));
    }
    Ok(())
}

/// One positive origin-destination demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
}

/// Demands grouped by origin, sorted by (origin, destination).
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    entries: Vec<OdPair>,
    /// Start offsets into `entries` per origin group, plus a final sentinel.
    group_starts: Vec<usize>,
    origins: Vec<usize>,
}

impl DemandMatrix {
    /// Builds from raw pairs: zero demands and self-pairs are dropped,
    /// duplicates are summed, negative or non-finite demands are rejected.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (o, d, v) in pairs {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "invalid demand {v} for pair ({o}, {d})"
                )));
            }
            if v == 0.0 || o == d {
                continue;
            }
            *map.entry((o, d)).or_insert(0.0) += v;
        }
        let entries: Vec<OdPair> = map
            .into_iter()
            .map(|((origin, destination), demand)| OdPair {
                origin,
                destination,
                demand,
            })
            .collect();
        let mut group_starts = Vec::new();
        let mut origins = Vec::new();
        for (i, p) in entries.iter().enumerate() {
            if origins.last() != Some(&p.origin) {
                origins.push(p.origin);
                group_starts.push(i);
            }
        }
        group_starts.push(entries.len());
        let dm = Self {
            entries,
            group_starts,
            origins,
        };
        if dm.entries.is_empty() {
            return Err(Error::InvalidArgument(
                "demand matrix has no positive entries".into(),
            ));
        }
        Ok(dm)
    }

    pub fn entries(&self) -> &[OdPair] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The distinct origins `O`, ascending.
    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    /// Iterates `(origin, pairs from that origin)`.
    pub fn by_origin(&self) -> impl Iterator<Item = (usize, &[OdPair])> + '_ {
        self.origins.iter().enumerate().map(move |(g, &o)| {
            (
                o,
                &self.entries[self.group_starts[g]..self.group_starts[g + 1]],
            )
        })
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|p| p.demand).sum()
    }

    /// Same pairs with every demand multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_pairs(
            self.entries
                .iter()
                .map(|p| (p.origin, p.destination, p.demand * factor)),
        )
    }

    /// Checks that every endpoint is a zone of `net`.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        for p in &self.entries {
            for node in [p.origin, p.destination] {
                if node >= net.zone_count() {
                    return Err(Error::InvalidArgument(format!(
                        "OD endpoint {} is not a zone (network has {} zones)",
                        node + 1,
                        net.zone_count()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_tntp(&self, zone_count: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "<NUMBER OF ZONES> {zone_count}");
        let _ = writeln!(s, "<TOTAL OD FLOW> {:?}", self.total());
        s.push_str("<END OF METADATA>\n\n");
        for (origin, pairs) in self.by_origin() {
            let _ = writeln!(s, "\nOrigin\t{}", origin + 1);
            for chunk in pairs.chunks(5) {
                for p in chunk {
                    let _ = write!(s, "{:>6} : {:?};", p.destination + 1, p.demand);
                }
                s.push('\n');
            }
        }
        s
    }
}

struct Header {
    tags: Vec<(String, String, usize)>,
    body_start: usize,
}

impl Header {
    fn get(&self, tag: &str) -> Option<(&str, usize)> {
        self.tags
            .iter()
            .find(|(t, _, _)| t == tag)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    fn integer(&self, tag: &str) -> std::result::Result<Option<usize>, ParseError> {
        match self.get(tag) {
            None => Ok(None),
            Some((v, line)) => v
                .split_whitespace()
                .next()
                .and_then(|x| x.parse::<usize>().ok())
                .map(Some)
                .ok_or_else(|| {
                    ParseError::new(line, format!("<{tag}> expects an integer, got {v:?}"))
                }),
        }
    }
}

fn parse_header(lines: &[&str]) -> std::result::Result<Header, ParseError> {
    let mut tags = Vec::new();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !line.starts_with('<') {
            return Err(ParseError::new(i + 1, "content before <END OF METADATA>"));
        }
        let close = line
            .find('>')
            .ok_or_else(|| ParseError::new(i + 1, format!("malformed header tag {line:?}")))?;
        let tag = line[1..close].trim().to_ascii_uppercase();
        if tag.is_empty() {
            return Err(ParseError::new(i + 1, "empty header tag"));
        }
        if tag == "END OF METADATA" {
            return Ok(Header {
                tags,
                body_start: i + 1,
            });
        }
        tags.push((tag, line[close + 1..].trim().to_string(), i + 1));
    }
    Err(ParseError::new(lines.len(), "missing <END OF METADATA>"))
}

fn required(header: &Header, tag: &str) -> std::result::Result<usize, ParseError> {
    header
        .integer(tag)?
        .ok_or_else(|| ParseError::new(header.body_start.max(1), format!("missing <{tag}>")))
}

fn number(token: &str, line: usize, what: &str) -> std::result::Result<f64, ParseError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ParseError::new(line, format!("invalid {what} {token:?}")))
}

/// Parses a TNTP `_net.tntp` file.
pub fn parse_tntp_net(text: &str) -> std::result::Result<Network, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(&lines)?;
    let node_count = required(&header, "NUMBER OF NODES")?;
    let link_count = required(&header, "NUMBER OF LINKS")?;
    let zone_count = header.integer("NUMBER OF ZONES")?.unwrap_or(node_count);
    let first_thru_node = header.integer("FIRST THRU NODE")?.unwrap_or(1);
    if node_count == 0 {
        return Err(ParseError::new(1, "<NUMBER OF NODES> must be positive"));
    }
    if zone_count > node_count {
        return Err(ParseError::new(
            1,
            "<NUMBER OF ZONES> exceeds <NUMBER OF NODES>",
        ));
    }

    let mut edges = Vec::with_capacity(link_count);
    for (i, raw) in lines.iter().enumerate().skip(header.body_start) {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        let row = line.split(';').next().unwrap_or("");
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 10 {
            return Err(ParseError::new(
                line_no,
                format!("link row has {} columns, expected 10", fields.len()),
            ));
        }
        let node = |tok: &str| -> std::result::Result<usize, ParseError> {
            let id = tok
                .parse::<usize>()
                .map_err(|_| ParseError::new(line_no, format!("invalid node id {tok:?}")))?;
            if id == 0 || id > node_count {
                return Err(ParseError::new(
                    line_no,
                    format!("node id {id} out of range 1..={node_count}"),
                ));
            }
            Ok(id - 1)
        };
        let tail = node(fields[0])?;
        let head = node(fields[1])?;
        if tail == head {
            return Err(ParseError::new(
                line_no,
                format!("self-loop at node {}", tail + 1),
            ));
        }
        let capacity = number(fields[2], line_no, "capacity")?;
        let length = number(fields[3], line_no, "length")?;
        let free_flow_time = number(fields[4], line_no, "free-flow time")?;
        let rho = number(fields[5], line_no, "b")?;
        let power = number(fields[6], line_no, "power")?;
        let speed = number(fields[7], line_no, "speed")?;
        let toll = number(fields[8], line_no, "toll")?;
        if capacity <= 0.0 {
            return Err(ParseError::new(
                line_no,
                format!("non-positive capacity {capacity}"),
            ));
        }
        if free_flow_time <= 0.0 {
            return Err(ParseError::new(
                line_no,
                format!("non-positive free-flow time {free_flow_time}"),
            ));
        }
        if rho < 0.0 {
            return Err(ParseError::new(line_no, format!("negative b {rho}")));
        }
        if power < 1.0 {
            return Err(ParseError::new(
                line_no,
                format!("power {power} is below 1"),
            ));
        }
        edges.push(Edge {
            tail,
            head,
            capacity,
            free_flow_time,
            rho,
            power,
            meta: LinkMeta {
                length,
                speed,
                toll,
                link_type: fields[9].to_string(),
            },
        });
    }
    if edges.len() != link_count {
        return Err(ParseError::new(
            lines.len(),
            format!(
                "<NUMBER OF LINKS> is {link_count} but {} link rows were read",
                edges.len()
            ),
        ));
    }
    let mut net = Network::with_zones(node_count, zone_count, edges)
        .map_err(|e| ParseError::new(header.body_start, e.to_string()))?;
    net.first_thru_node = first_thru_node;
    Ok(net)
}

/// Parses a TNTP `_trips.tntp` file. Node ids become 0-based.
pub fn parse_tntp_trips(text: &str) -> std::result::Result<DemandMatrix, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(&lines)?;
    let zone_count = header.integer("NUMBER OF ZONES")?;
    let in_range = |id: usize, line: usize| -> std::result::Result<usize, ParseError> {
        if id == 0 || zone_count.is_some_and(|z| id > z) {
            return Err(ParseError::new(line, format!("zone id {id} out of range")));
        }
        Ok(id - 1)
    };

    let mut origin: Option<usize> = None;
    let mut pairs = Vec::new();
    for (i, raw) in lines.iter().enumerate().skip(header.body_start) {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Origin") {
            let id = rest
                .trim()
                .parse::<usize>()
                .map_err(|_| ParseError::new(line_no, format!("malformed Origin line {line:?}")))?;
            origin = Some(in_range(id, line_no)?);
            continue;
        }
        let o = origin
            .ok_or_else(|| ParseError::new(line_no, "demand entry before any Origin block"))?;
        for entry in line.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let (dest, value) = entry
                .split_once(':')
                .ok_or_else(|| ParseError::new(line_no, format!("malformed entry {entry:?}")))?;
            let dest = dest.trim().parse::<usize>().map_err(|_| {
                ParseError::new(line_no, format!("invalid destination {:?}", dest.trim()))
            })?;
            let dest = in_range(dest, line_no)?;
            let value = number(value.trim(), line_no, "demand")?;
            if value < 0.0 {
                return Err(ParseError::new(line_no, format!("negative demand {value}")));
            }
            pairs.push((o, dest, value));
        }
    }
    DemandMatrix::from_pairs(pairs).map_err(|e| ParseError::new(lines.len(), e.to_string()))
}

/// OD pairs with no directed walk of at most `walk_cap` edges.
pub fn validate_reachability(
    net: &Network,
    dm: &DemandMatrix,
    walk_cap: usize,
) -> Vec<(usize, usize)> {
    let mut unreachable = Vec::new();
    let mut hops = vec![usize::MAX; net.node_count()];
    let mut queue = VecDeque::new();
    for (origin, pairs) in dm.by_origin() {
        hops.fill(usize::MAX);
        hops[origin] = 0;
        queue.clear();
        queue.push_back(origin);
        while let Some(v) = queue.pop_front() {
            if hops[v] >= walk_cap {
                continue;
            }
            for &e in net.out_edges(v) {
                let w = net.edge(e).head;
                if hops[w] == usize::MAX {
                    hops[w] = hops[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        unreachable.extend(
            pairs
                .iter()
                .filter(|p| hops[p.destination] > walk_cap)
                .map(|p| (p.origin, p.destination)),
        );
    }
    unreachable
}
