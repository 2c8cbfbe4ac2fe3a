//! Global route planning over waterway centerlines: Overpass-style data
//! ingestion, graph construction, Dijkstra and arc-length resampling.

use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

/// Mean Earth radius used by the local projection, m.
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// Way tags accepted as navigable waterways.
pub const WATERWAY_KINDS: [&str; 2] = ["river", "canal"];

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("failed to read fixture {path}: {source}")]
    Fixture {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("network request failed: {0}")]
    Network(String),
    #[error("malformed waterway response: {0}")]
    Malformed(String),
    #[error("invalid bounding box")]
    InvalidBbox,
    #[error("node {id} is more than 1 degree from the projection reference")]
    OutsideProjection { id: i64 },
    #[error("way {way} references unknown node {node}")]
    UnknownNode { way: i64, node: i64 },
    #[error("way {way} has fewer than two nodes")]
    ShortWay { way: i64 },
    #[error("zero-length edge between nodes {a} and {b}")]
    ZeroLengthEdge { a: i64, b: i64 },
    #[error("unknown node {0}")]
    MissingNode(i64),
    #[error("node {dst} is unreachable from {src}")]
    Unreachable { src: i64, dst: i64 },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid spacing bounds [{min}, {max}]")]
    InvalidSpacing { min: f64, max: f64 },
    #[error("route polyline has zero length but start and goal differ")]
    DegenerateRoute,
    #[error("empty node path")]
    EmptyPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<(), PlanError> {
        let ok = [self.south, self.west, self.north, self.east]
            .iter()
            .all(|v| v.is_finite())
            && self.south < self.north
            && self.west < self.east
            && self.south >= -90.0
            && self.north <= 90.0
            && self.west >= -180.0
            && self.east <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(PlanError::InvalidBbox)
        }
    }
}

/// Overpass QL query for river and canal ways inside `bbox`, with their nodes.
pub fn overpass_query(bbox: &BBox) -> String {
    let b = format!("{},{},{},{}", bbox.south, bbox.west, bbox.north, bbox.east);
    format!(
        "[out:json][timeout:25];(way[waterway=river]({b});way[waterway=canal]({b}););(._;>;);out body;"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawWay {
    pub id: i64,
    pub kind: String,
    pub nodes: Vec<i64>,
}

/// Parsed response plus the verbatim body it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterwayData {
    pub raw: String,
    pub nodes: BTreeMap<i64, LatLon>,
    pub ways: Vec<RawWay>,
}

impl WaterwayData {
    pub fn is_empty(&self) -> bool {
        self.ways.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct OverpassResponse {
    elements: Vec<OverpassElement>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum OverpassElement {
    Node {
        id: i64,
        lat: f64,
        lon: f64,
    },
    Way {
        id: i64,
        #[serde(default)]
        nodes: Vec<i64>,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    #[serde(other)]
    Other,
}

/// Parses an Overpass JSON body, keeping only river and canal ways. An
/// element list without waterways is an empty result, not an error.
pub fn parse_overpass(body: &str) -> Result<WaterwayData, PlanError> {
    let resp: OverpassResponse =
        serde_json::from_str(body).map_err(|e| PlanError::Malformed(e.to_string()))?;
    let mut nodes = BTreeMap::new();
    let mut ways = Vec::new();
    for el in resp.elements {
        match el {
            OverpassElement::Node { id, lat, lon } => {
                nodes.insert(id, LatLon { lat, lon });
            }
            OverpassElement::Way { id, nodes: ids, tags } => {
                let Some(kind) = tags.get("waterway") else { continue };
                if WATERWAY_KINDS.contains(&kind.as_str()) {
                    ways.push(RawWay {
                        id,
                        kind: kind.clone(),
                        nodes: ids,
                    });
                }
            }
            OverpassElement::Other => {}
        }
    }
    Ok(WaterwayData {
        raw: body.to_string(),
        nodes,
        ways,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    /// Cached response file, read verbatim.
    Fixture(PathBuf),
    /// Overpass interpreter URL.
    Url(String),
}

/// Retrieves waterway ways inside `bbox`.
pub fn fetch_waterways(
    bbox: &BBox,
    endpoint: &Endpoint,
    timeout: Duration,
) -> Result<WaterwayData, PlanError> {
    bbox.validate()?;
    let body = match endpoint {
        Endpoint::Fixture(path) => {
            std::fs::read_to_string(path).map_err(|source| PlanError::Fixture {
                path: path.clone(),
                source,
            })?
        }
        Endpoint::Url(url) => {
            let agent = ureq::AgentBuilder::new().timeout(timeout).build();
            agent
                .post(url)
                .send_form(&[("data", &overpass_query(bbox))])
                .map_err(|e| PlanError::Network(e.to_string()))?
                .into_string()
                .map_err(|e| PlanError::Network(e.to_string()))?
        }
    };
    parse_overpass(&body)
}

/// Equirectangular projection of every node onto a local metric frame.
pub fn project_latlon(
    nodes: &BTreeMap<i64, LatLon>,
    reference: LatLon,
) -> Result<BTreeMap<i64, Vec2>, PlanError> {
    let cos_ref = reference.lat.to_radians().cos();
    nodes
        .iter()
        .map(|(&id, p)| {
            let dlat = p.lat - reference.lat;
            let dlon = p.lon - reference.lon;
            if dlat.abs() > 1.0 || dlon.abs() > 1.0 {
                return Err(PlanError::OutsideProjection { id });
            }
            Ok((
                id,
                Vec2::new(
                    EARTH_RADIUS * dlon.to_radians() * cos_ref,
                    EARTH_RADIUS * dlat.to_radians(),
                ),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: i64,
    pub cost: f64,
}

/// Undirected graph with Euclidean edge costs. Adjacency lists are kept
/// sorted by neighbor id so every traversal is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaterwayGraph {
    nodes: BTreeMap<i64, Vec2>,
    adjacency: BTreeMap<i64, Vec<Edge>>,
}

impl WaterwayGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: i64, p: Vec2) {
        self.nodes.insert(id, p);
        self.adjacency.entry(id).or_default();
    }

    /// Adds an undirected edge with Euclidean cost; repeated edges are ignored.
    pub fn add_edge(&mut self, a: i64, b: i64) -> Result<(), PlanError> {
        let pa = *self.nodes.get(&a).ok_or(PlanError::MissingNode(a))?;
        let pb = *self.nodes.get(&b).ok_or(PlanError::MissingNode(b))?;
        let cost = pa.distance(pb);
        if a == b || cost <= 0.0 {
            return Err(PlanError::ZeroLengthEdge { a, b });
        }
        for (u, v) in [(a, b), (b, a)] {
            let adj = self.adjacency.entry(u).or_default();
            if let Err(pos) = adj.binary_search_by_key(&v, |e| e.to) {
                adj.insert(pos, Edge { to: v, cost });
            }
        }
        Ok(())
    }

    pub fn node(&self, id: i64) -> Option<Vec2> {
        self.nodes.get(&id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (i64, Vec2)> + '_ {
        self.nodes.iter().map(|(&id, &p)| (id, p))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, id: i64) -> &[Edge] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, id: i64) -> usize {
        self.neighbors(id).len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edge_cost(&self, a: i64, b: i64) -> Option<f64> {
        self.neighbors(a)
            .binary_search_by_key(&b, |e| e.to)
            .ok()
            .map(|i| self.neighbors(a)[i].cost)
    }

    pub fn path_cost(&self, path: &[i64]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge_cost(w[0], w[1]))
            .sum::<Option<f64>>()
    }

    /// Node closest to `p`; ties go to the smaller id.
    pub fn nearest_node(&self, p: Vec2) -> Option<i64> {
        self.nodes
            .iter()
            .map(|(&id, &q)| (id, q.distance(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id)
    }
}

/// Builds the graph from projected nodes and way memberships. Only nodes
/// referenced by a way are included.
pub fn build_graph(nodes: &BTreeMap<i64, Vec2>, ways: &[RawWay]) -> Result<WaterwayGraph, PlanError> {
    let mut g = WaterwayGraph::new();
    for way in ways {
        if way.nodes.len() < 2 {
            return Err(PlanError::ShortWay { way: way.id });
        }
        for &id in &way.nodes {
            let p = nodes
                .get(&id)
                .ok_or(PlanError::UnknownNode { way: way.id, node: id })?;
            g.add_node(id, *p);
        }
        for w in way.nodes.windows(2) {
            g.add_edge(w[0], w[1])?;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    dist: f64,
    id: i64,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn distances_from(g: &WaterwayGraph, src: i64) -> BTreeMap<i64, f64> {
    let mut dist = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(src, 0.0);
    heap.push(QueueEntry { dist: 0.0, id: src });
    let mut done = BTreeSet::new();
    while let Some(QueueEntry { dist: d, id }) = heap.pop() {
        if !done.insert(id) {
            continue;
        }
        for e in g.neighbors(id) {
            let nd = d + e.cost;
            if dist.get(&e.to).map_or(true, |&old| nd < old) {
                dist.insert(e.to, nd);
                heap.push(QueueEntry { dist: nd, id: e.to });
            }
        }
    }
    dist
}

/// Minimum-cost node path from `src` to `dst`. Among paths of equal cost the
/// lexicographically smallest id sequence wins.
pub fn dijkstra(g: &WaterwayGraph, src: i64, dst: i64) -> Result<Vec<i64>, PlanError> {
    for id in [src, dst] {
        if g.node(id).is_none() {
            return Err(PlanError::MissingNode(id));
        }
    }
    // distances to dst, then a greedy forward walk picking the smallest
    // neighbor id that stays on some shortest path
    let to_dst = distances_from(g, dst);
    let Some(&total) = to_dst.get(&src) else {
        return Err(PlanError::Unreachable { src, dst });
    };
    let eps = 1e-9 * total.max(1.0);
    let mut path = vec![src];
    let mut cur = src;
    while cur != dst {
        let here = to_dst[&cur];
        let next = g
            .neighbors(cur)
            .iter()
            .filter(|e| {
                to_dst
                    .get(&e.to)
                    .is_some_and(|&d| e.cost + d <= here + eps && d < here)
            })
            .map(|e| e.to)
            .next()
            .expect("a shortest-path successor always exists");
        path.push(next);
        cur = next;
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRoute {
    pub waypoints: Vec<Vec2>,
    pub min_spacing: f64,
    pub max_spacing: f64,
}

impl GlobalRoute {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

/// Uniform spacing used for a polyline of length `total`.
pub fn route_spacing(total: f64, min_spacing: f64, max_spacing: f64) -> f64 {
    let even = total / (total / max_spacing).ceil().max(1.0);
    even.max(min_spacing).min(max_spacing)
}

/// Places waypoints every `route_spacing` meters along the polyline
/// start → path nodes → goal. The first waypoint is `start`, the last `goal`.
pub fn resample_route(
    g: &WaterwayGraph,
    path: &[i64],
    min_spacing: f64,
    max_spacing: f64,
    start: Vec2,
    goal: Vec2,
) -> Result<GlobalRoute, PlanError> {
    if path.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    let mut poly = vec![start];
    for &id in path {
        poly.push(g.node(id).ok_or(PlanError::MissingNode(id))?);
    }
    poly.push(goal);
    resample_polyline(&poly, min_spacing, max_spacing)
}

/// Arc-length resampling of an arbitrary polyline.
pub fn resample_polyline(
    poly: &[Vec2],
    min_spacing: f64,
    max_spacing: f64,
) -> Result<GlobalRoute, PlanError> {
    if !(min_spacing > 0.0 && min_spacing < max_spacing) {
        return Err(PlanError::InvalidSpacing {
            min: min_spacing,
            max: max_spacing,
        });
    }
    if poly.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    let mut pts: Vec<Vec2> = Vec::with_capacity(poly.len());
    for &p in poly {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    let start = poly[0];
    let goal = poly[poly.len() - 1];
    let total: f64 = pts.windows(2).map(|w| w[0].distance(w[1])).sum();
    if total == 0.0 {
        return if start == goal {
            Ok(GlobalRoute {
                waypoints: vec![start],
                min_spacing,
                max_spacing,
            })
        } else {
            Err(PlanError::DegenerateRoute)
        };
    }
    let s = route_spacing(total, min_spacing, max_spacing);
    let tol = 1e-9 * total.max(1.0);
    let mut waypoints = vec![start];
    let mut next = s;
    let mut walked = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].distance(w[1]);
        while next < total - tol && next <= walked + seg {
            let t = (next - walked) / seg;
            waypoints.push(w[0] + (w[1] - w[0]) * t);
            next += s;
        }
        walked += seg;
    }
    waypoints.push(goal);
    Ok(GlobalRoute {
        waypoints,
        min_spacing,
        max_spacing,
    })
}

/// Full global plan: snap start and goal to their nearest graph nodes,
/// run Dijkstra between them and resample the result.
pub fn plan_route(
    g: &WaterwayGraph,
    start: Vec2,
    goal: Vec2,
    min_spacing: f64,
    max_spacing: f64,
) -> Result<GlobalRoute, PlanError> {
    let a = g.nearest_node(start).ok_or(PlanError::EmptyGraph)?;
    let b = g.nearest_node(goal).ok_or(PlanError::EmptyGraph)?;
    let path = dijkstra(g, a, b)?;
    resample_route(g, &path, min_spacing, max_spacing, start, goal)
}
