//! Road network model: directed links with BPR performance functions, a
//! discretized time horizon, and route enumeration by link deletion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of alternative routes enumerated per OD pair.
pub const DEFAULT_ROUTES_PER_OD: usize = 3;

/// Coefficient of the BPR curve.
const BPR_ALPHA: f64 = 0.15;
/// Exponent of the BPR curve.
const BPR_POWER: i32 = 4;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read network file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("network parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("network has no links")]
    NoLinks,
    #[error("network has no nodes")]
    NoNodes,
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("link {link} references unknown node {node}")]
    UnknownNode { link: usize, node: String },
    #[error("link ids must be dense and ordered: expected {expected}, found {found}")]
    LinkIdOrder { expected: usize, found: usize },
    #[error("link {link} is a self-loop on node {node}")]
    SelfLoop { link: usize, node: String },
    #[error("link {link}: field {field} must be positive, got {value}")]
    NonPositive {
        link: usize,
        field: &'static str,
        value: f64,
    },
    #[error("link {link}: field {field} must be nonnegative, got {value}")]
    Negative {
        link: usize,
        field: &'static str,
        value: f64,
    },
    #[error("negative volume {0} passed to BPR function")]
    NegativeVolume(f64),
    #[error("OD pair unreachable: {origin} -> {destination}")]
    Unreachable { origin: String, destination: String },
    #[error("origin and destination coincide ({0})")]
    SameEndpoints(String),
    #[error("route count k must be at least 1")]
    ZeroRoutes,
    #[error("unknown node name {0}")]
    UnknownNodeName(String),
    #[error("invalid horizon: {0}")]
    Horizon(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Dense node index into [`Network::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

/// Free-flow time (hours) and practical capacity (vehicles per period) of a
/// link during one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub free_flow_time_h: f64,
    pub capacity: f64,
}

impl BprParams {
    /// Travel time in hours at the given volume.
    pub fn travel_time(&self, volume: f64) -> f64 {
        self.free_flow_time_h * (1.0 + BPR_ALPHA * (volume / self.capacity).powi(BPR_POWER))
    }

    /// Derivative of the travel time with respect to volume.
    pub fn travel_time_derivative(&self, volume: f64) -> f64 {
        let ratio = volume / self.capacity;
        self.free_flow_time_h * BPR_ALPHA * f64::from(BPR_POWER) * ratio.powi(BPR_POWER - 1)
            / self.capacity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub free_flow_time_h: f64,
    pub capacity: f64,
    pub length_mi: f64,
    /// Optional per-period calibration overriding the constant pair above.
    pub periodic: Vec<BprParams>,
}

impl Link {
    /// BPR parameters in effect during `period`. Periods past the calibrated
    /// range reuse the last calibrated pair.
    pub fn params(&self, period: usize) -> BprParams {
        match self.periodic.len() {
            0 => BprParams {
                free_flow_time_h: self.free_flow_time_h,
                capacity: self.capacity,
            },
            n => self.periodic[period.min(n - 1)],
        }
    }
}

/// BPR link travel time in hours at constant calibration.
pub fn bpr_travel_time(link: &Link, volume: f64) -> Result<f64> {
    bpr_travel_time_at(link, 0, volume)
}

/// BPR link travel time in hours using the calibration of `period`.
pub fn bpr_travel_time_at(link: &Link, period: usize, volume: f64) -> Result<f64> {
    if volume < 0.0 || volume.is_nan() {
        return Err(NetworkError::NegativeVolume(volume));
    }
    Ok(link.params(period).travel_time(volume))
}

/// A discretized analysis window. Periods are indexed from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub num_periods: usize,
    pub period_length_min: f64,
    /// Leading periods whose entering drivers may be incentivized; the rest
    /// only track spillover.
    pub analysis_periods: usize,
}

impl Horizon {
    pub fn new(num_periods: usize, period_length_min: f64, analysis_periods: usize) -> Result<Self> {
        let horizon = Horizon {
            num_periods,
            period_length_min,
            analysis_periods,
        };
        horizon.validate()?;
        Ok(horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_length_min > 0.0) || !self.period_length_min.is_finite() {
            return Err(NetworkError::Horizon(format!(
                "period length must be positive, got {}",
                self.period_length_min
            )));
        }
        if self.analysis_periods < 1 || self.analysis_periods > self.num_periods {
            return Err(NetworkError::Horizon(format!(
                "need num_periods ({}) >= analysis_periods ({}) >= 1",
                self.num_periods, self.analysis_periods
            )));
        }
        Ok(())
    }

    pub fn period_length_h(&self) -> f64 {
        self.period_length_min / 60.0
    }
}

/// Ordered origin/destination pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub od: OdPair,
    pub link_ids: Vec<usize>,
    pub edge_vector: Vec<u8>,
}

impl Route {
    pub fn new(od: OdPair, link_ids: Vec<usize>, num_links: usize) -> Self {
        let edge_vector = route_vector(&link_ids, num_links);
        Route {
            od,
            link_ids,
            edge_vector,
        }
    }

    /// Route time in hours when every link is at free flow.
    pub fn free_flow_time_h(&self, network: &Network) -> f64 {
        self.link_ids
            .iter()
            .map(|&l| network.links[l].free_flow_time_h)
            .sum()
    }
}

/// One-hot-per-edge encoding of a link sequence.
pub fn route_vector(link_ids: &[usize], num_links: usize) -> Vec<u8> {
    let mut v = vec![0u8; num_links];
    for &l in link_ids {
        v[l] = 1;
    }
    v
}

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
    pub adjacency: Vec<Vec<usize>>,
    index: HashMap<String, NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<String>,
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub id: usize,
    pub from: String,
    pub to: String,
    pub free_flow_time_h: f64,
    pub capacity: f64,
    #[serde(default)]
    pub length_mi: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periods: Vec<BprParams>,
}

impl Network {
    pub fn from_file_record(file: NetworkFile) -> Result<Self> {
        if file.nodes.is_empty() {
            return Err(NetworkError::NoNodes);
        }
        if file.links.is_empty() {
            return Err(NetworkError::NoLinks);
        }
        let mut index = HashMap::with_capacity(file.nodes.len());
        for (i, name) in file.nodes.iter().enumerate() {
            if index.insert(name.clone(), NodeId(i)).is_some() {
                return Err(NetworkError::DuplicateNode(name.clone()));
            }
        }
        let mut links = Vec::with_capacity(file.links.len());
        for (expected, rec) in file.links.into_iter().enumerate() {
            if rec.id != expected {
                return Err(NetworkError::LinkIdOrder {
                    expected,
                    found: rec.id,
                });
            }
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| NetworkError::UnknownNode {
                    link: rec.id,
                    node: name.to_string(),
                })
            };
            let from = lookup(&rec.from)?;
            let to = lookup(&rec.to)?;
            if from == to {
                return Err(NetworkError::SelfLoop {
                    link: rec.id,
                    node: rec.from,
                });
            }
            check_positive(rec.id, "free_flow_time_h", rec.free_flow_time_h)?;
            check_positive(rec.id, "capacity", rec.capacity)?;
            if rec.length_mi < 0.0 || rec.length_mi.is_nan() {
                return Err(NetworkError::Negative {
                    link: rec.id,
                    field: "length_mi",
                    value: rec.length_mi,
                });
            }
            for p in &rec.periods {
                check_positive(rec.id, "periods.free_flow_time_h", p.free_flow_time_h)?;
                check_positive(rec.id, "periods.capacity", p.capacity)?;
            }
            links.push(Link {
                id: rec.id,
                from,
                to,
                free_flow_time_h: rec.free_flow_time_h,
                capacity: rec.capacity,
                length_mi: rec.length_mi,
                periodic: rec.periods,
            });
        }
        let mut adjacency = vec![Vec::new(); file.nodes.len()];
        for link in &links {
            adjacency[link.from.0].push(link.id);
        }
        Ok(Network {
            nodes: file.nodes,
            links,
            adjacency,
            index,
        })
    }

    pub fn to_file_record(&self) -> NetworkFile {
        NetworkFile {
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkRecord {
                    id: l.id,
                    from: self.nodes[l.from.0].clone(),
                    to: self.nodes[l.to.0].clone(),
                    free_flow_time_h: l.free_flow_time_h,
                    capacity: l.capacity,
                    length_mi: l.length_mi,
                    periods: l.periodic.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file_record(file)
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::UnknownNodeName(name.to_string()))
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0]
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn od(&self, origin: &str, destination: &str) -> Result<OdPair> {
        Ok(OdPair {
            origin: self.node(origin)?,
            destination: self.node(destination)?,
        })
    }
}

fn check_positive(link: usize, field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(NetworkError::NonPositive { link, field, value })
    }
}

/// Reads and validates a network JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Network::from_json_str(&text)
}

/// Dijkstra label: cost first, then lexicographic link sequence.
#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    path: Vec<usize>,
    node: usize,
}

fn label_cmp(a_cost: f64, a_path: &[usize], b_cost: f64, b_path: &[usize]) -> Ordering {
    let scale = a_cost.abs().max(b_cost.abs()).max(1.0);
    if (a_cost - b_cost).abs() <= 1e-12 * scale {
        a_path.cmp(b_path)
    } else {
        a_cost.total_cmp(&b_cost)
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Label {}
impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Label {
    // Reversed so BinaryHeap pops the smallest label.
    fn cmp(&self, other: &Self) -> Ordering {
        label_cmp(other.cost, &other.path, self.cost, &self.path)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Free-flow shortest path over links not in `removed`; ties are broken by the
/// lexicographically smallest link-id sequence.
pub fn shortest_path(
    network: &Network,
    od: OdPair,
    removed: &[bool],
) -> Option<(f64, Vec<usize>)> {
    let n = network.nodes.len();
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[od.origin.0] = Some((0.0, Vec::new()));
    heap.push(Label {
        cost: 0.0,
        path: Vec::new(),
        node: od.origin.0,
    });
    while let Some(Label { cost, path, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node == od.destination.0 {
            return Some((cost, path));
        }
        for &l in &network.adjacency[node] {
            if removed[l] {
                continue;
            }
            let link = &network.links[l];
            let next = link.to.0;
            if settled[next] {
                continue;
            }
            let next_cost = cost + link.free_flow_time_h;
            let mut next_path = path.clone();
            next_path.push(l);
            let better = match &best[next] {
                None => true,
                Some((c, p)) => label_cmp(next_cost, &next_path, *c, p) == Ordering::Less,
            };
            if better {
                best[next] = Some((next_cost, next_path.clone()));
                heap.push(Label {
                    cost: next_cost,
                    path: next_path,
                    node: next,
                });
            }
        }
    }
    None
}

/// Links that every origin-destination path must use. Only links of one
/// path can qualify, so each link of `path` is tested by removal.
fn mandatory_links(network: &Network, od: OdPair, path: &[usize]) -> Vec<bool> {
    let mut mandatory = vec![false; network.num_links()];
    let mut removed = vec![false; network.num_links()];
    for &l in path {
        removed[l] = true;
        mandatory[l] = shortest_path(network, od, &removed).is_none();
        removed[l] = false;
    }
    mandatory
}

/// Enumerates up to `k` routes: each new route is the free-flow shortest path
/// after deleting every link used by earlier routes, except links no
/// origin-destination path can avoid. Routes are therefore disjoint apart
/// from those unavoidable links.
pub fn enumerate_routes(network: &Network, od: OdPair, k: usize) -> Result<Vec<Route>> {
    if k == 0 {
        return Err(NetworkError::ZeroRoutes);
    }
    if od.origin == od.destination {
        return Err(NetworkError::SameEndpoints(
            network.node_name(od.origin).to_string(),
        ));
    }
    let mut removed = vec![false; network.num_links()];
    let Some((_, first)) = shortest_path(network, od, &removed) else {
        return Err(NetworkError::Unreachable {
            origin: network.node_name(od.origin).to_string(),
            destination: network.node_name(od.destination).to_string(),
        });
    };
    let mandatory = mandatory_links(network, od, &first);
    let mut routes = Vec::new();
    let mut next = Some(first);
    while let Some(path) = next {
        let mut removable = false;
        for &l in &path {
            if !mandatory[l] {
                removed[l] = true;
                removable = true;
            }
        }
        routes.push(Route::new(od, path, network.num_links()));
        // a path made only of unavoidable links is the only path
        if routes.len() == k || !removable {
            break;
        }
        next = shortest_path(network, od, &removed).map(|(_, p)| p);
    }
    Ok(routes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn three_link_json() -> &'static str {
        r#"{"nodes":["v1","v2","v3"],
            "links":[
              {"id":0,"from":"v1","to":"v2","free_flow_time_h":0.1,"capacity":100,"length_mi":5},
              {"id":1,"from":"v1","to":"v2","free_flow_time_h":0.2,"capacity":100,"length_mi":10},
              {"id":2,"from":"v2","to":"v3","free_flow_time_h":0.1,"capacity":100,"length_mi":5}
            ]}"#
    }

    fn link(ff: f64, cap: f64) -> Link {
        Link {
            id: 0,
            from: NodeId(0),
            to: NodeId(1),
            free_flow_time_h: ff,
            capacity: cap,
            length_mi: 0.0,
            periodic: Vec::new(),
        }
    }

    #[test]
    fn loads_three_link_example() {
        let net = Network::from_json_str(three_link_json()).unwrap();
        assert_eq!(net.num_links(), 3);
        assert_eq!(net.adjacency[0], vec![0, 1]);
        assert_eq!(net.links[1].free_flow_time_h, 0.2);
    }

    #[test]
    fn rejects_empty_links() {
        let err = Network::from_json_str(r#"{"nodes":["a"],"links":[]}"#).unwrap_err();
        assert_eq!(err.to_string(), "network has no links");
    }

    #[test]
    fn rejects_unknown_node() {
        let err = Network::from_json_str(
            r#"{"nodes":["v1","v2"],"links":[{"id":0,"from":"v1","to":"v9","free_flow_time_h":0.1,"capacity":1}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("v9"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let err = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":0.0,"capacity":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::NonPositive { .. }));
        let err = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":1.0,"capacity":-3}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::NonPositive { field: "capacity", .. }));
    }

    #[test]
    fn rejects_misordered_ids_and_self_loops() {
        let err = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":1,"from":"a","to":"b","free_flow_time_h":1,"capacity":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::LinkIdOrder { .. }));
        let err = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"a","free_flow_time_h":1,"capacity":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::SelfLoop { .. }));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Network::from_json_str("{\"nodes\": [\n  \"a\",\n  oops]}").unwrap_err();
        match err {
            NetworkError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bpr_examples() {
        assert_eq!(bpr_travel_time(&link(0.1, 100.0), 0.0).unwrap(), 0.1);
        assert!((bpr_travel_time(&link(0.1, 100.0), 100.0).unwrap() - 0.115).abs() < 1e-15);
        assert!((bpr_travel_time(&link(0.2, 50.0), 100.0).unwrap() - 0.68).abs() < 1e-15);
        assert!(matches!(
            bpr_travel_time(&link(0.1, 100.0), -1.0),
            Err(NetworkError::NegativeVolume(_))
        ));
    }

    #[test]
    fn bpr_derivative_matches_finite_difference() {
        let p = BprParams {
            free_flow_time_h: 0.3,
            capacity: 40.0,
        };
        for v in [0.0, 5.0, 40.0, 120.0] {
            let h = 1e-5;
            let fd = (p.travel_time(v + h) - p.travel_time((v - h).max(0.0))) / (v + h - (v - h).max(0.0));
            assert!((fd - p.travel_time_derivative(v)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn periodic_calibration_overrides_constant() {
        let mut l = link(0.1, 100.0);
        l.periodic = vec![
            BprParams {
                free_flow_time_h: 0.1,
                capacity: 100.0,
            },
            BprParams {
                free_flow_time_h: 0.2,
                capacity: 50.0,
            },
        ];
        assert_eq!(bpr_travel_time_at(&l, 0, 0.0).unwrap(), 0.1);
        assert!((bpr_travel_time_at(&l, 1, 100.0).unwrap() - 0.68).abs() < 1e-15);
        // past the calibrated range the last pair is reused
        assert!((bpr_travel_time_at(&l, 7, 100.0).unwrap() - 0.68).abs() < 1e-15);
    }

    #[test]
    fn three_link_routes() {
        let net = Network::from_json_str(three_link_json()).unwrap();
        let od = net.od("v1", "v3").unwrap();
        let routes = enumerate_routes(&net, od, 3).unwrap();
        assert_eq!(routes.len(), 2);
        assert_eq!(routes[0].link_ids, vec![0, 2]);
        assert_eq!(routes[1].link_ids, vec![1, 2]);
        assert_eq!(routes[0].edge_vector, vec![1, 0, 1]);
        assert_eq!(routes[1].edge_vector, vec![0, 1, 1]);
    }

    #[test]
    fn single_link_network_has_one_route() {
        let net = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":1,"capacity":1}]}"#,
        )
        .unwrap();
        let routes = enumerate_routes(&net, net.od("a", "b").unwrap(), 3).unwrap();
        assert_eq!(routes.len(), 1);
    }

    #[test]
    fn unreachable_and_degenerate_requests() {
        let net = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":1,"capacity":1}]}"#,
        )
        .unwrap();
        let err = enumerate_routes(&net, net.od("b", "a").unwrap(), 3).unwrap_err();
        assert_eq!(err.to_string(), "OD pair unreachable: b -> a");
        assert!(enumerate_routes(&net, net.od("a", "a").unwrap(), 3).is_err());
        assert!(enumerate_routes(&net, net.od("a", "b").unwrap(), 0).is_err());
    }

    #[test]
    fn empty_route_vector() {
        assert_eq!(route_vector(&[], 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn equal_cost_ties_prefer_smaller_link_ids() {
        // two equal-cost parallel paths a->b->d (links 2,3) and a->c->d (links 0,1)
        let net = Network::from_json_str(
            r#"{"nodes":["a","b","c","d"],"links":[
              {"id":0,"from":"a","to":"c","free_flow_time_h":1,"capacity":1},
              {"id":1,"from":"c","to":"d","free_flow_time_h":1,"capacity":1},
              {"id":2,"from":"a","to":"b","free_flow_time_h":1,"capacity":1},
              {"id":3,"from":"b","to":"d","free_flow_time_h":1,"capacity":1}]}"#,
        )
        .unwrap();
        let routes = enumerate_routes(&net, net.od("a", "d").unwrap(), 2).unwrap();
        assert_eq!(routes[0].link_ids, vec![0, 1]);
        assert_eq!(routes[1].link_ids, vec![2, 3]);
    }
}
