//! Occupancy matrix construction, expected volumes, system travel time, and
//! the user-equilibrium baseline with its derived route/OD time tables.
//!
//! Index conventions (all 0-based):
//! * volume rows: `(period, link)` at `period * num_links + link`
//! * choice columns: `(entry period, route)` at `period * num_routes + route`
//! * OD-period rows: `(period, od)` at `period * num_ods + od`

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::incentives::Organization;
use crate::network::{enumerate_routes, Horizon, Network, NetworkError, OdPair, Route};

/// Minutes per hour; route and OD times are reported in minutes.
pub const MINUTES_PER_HOUR: f64 = 60.0;

const UE_GAP_TOL: f64 = 1e-4;
const UE_MAX_ITERS: usize = 500;
/// Routes carrying less than this share of their OD-period demand are ignored
/// by the equilibrium gap.
const UE_USED_SHARE: f64 = 1e-3;
const SNAP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("cannot read demand file {path}: {message}")]
    DemandIo { path: String, message: String },
    #[error("demand row {row}: {message}")]
    DemandRow { row: usize, message: String },
    #[error("route {route} references unknown link {link}")]
    UnknownLink { route: usize, link: usize },
    #[error("link time for link {link} in period {period} is not positive and finite: {value}")]
    BadLinkTime { link: usize, period: usize, value: f64 },
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("OD pair {origin} -> {destination} has positive demand but no route")]
    NoRoute { origin: String, destination: String },
    #[error("driver {driver} of organization {org}: {message}")]
    UnknownDriverOd {
        org: String,
        driver: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, AssignmentError>;

fn check_len(what: &'static str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(AssignmentError::Dimension {
            what,
            expected,
            found,
        })
    }
}

/// Sizes shared by every vector and matrix of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub num_links: usize,
    pub num_routes: usize,
    pub num_ods: usize,
    pub num_periods: usize,
}

impl Dims {
    pub fn volume_len(&self) -> usize {
        self.num_links * self.num_periods
    }
    pub fn choice_len(&self) -> usize {
        self.num_routes * self.num_periods
    }
    pub fn od_period_len(&self) -> usize {
        self.num_ods * self.num_periods
    }
    pub fn volume_index(&self, period: usize, link: usize) -> usize {
        period * self.num_links + link
    }
    pub fn choice_index(&self, period: usize, route: usize) -> usize {
        period * self.num_routes + route
    }
    pub fn od_period_index(&self, period: usize, od: usize) -> usize {
        period * self.num_ods + od
    }
    /// `(period, route)` of a choice column.
    pub fn split_choice(&self, column: usize) -> (usize, usize) {
        (column / self.num_routes, column % self.num_routes)
    }
    pub fn split_volume(&self, row: usize) -> (usize, usize) {
        (row / self.num_links, row % self.num_links)
    }
    pub fn split_od_period(&self, row: usize) -> (usize, usize) {
        (row / self.num_ods, row % self.num_ods)
    }
}

/// Driver counts per OD pair and entry period.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub od_pairs: Vec<OdPair>,
    /// Indexed by OD-period row.
    pub counts: Vec<u32>,
    pub num_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRecord {
    pub origin: String,
    pub destination: String,
    pub entry_period: usize,
    pub count: u32,
}

impl Demand {
    /// Builds demand from records; OD pairs are numbered by first appearance
    /// and duplicate rows accumulate.
    pub fn from_records(
        network: &Network,
        records: &[DemandRecord],
        num_periods: usize,
    ) -> Result<Self> {
        let mut od_index: HashMap<OdPair, usize> = HashMap::new();
        let mut od_pairs = Vec::new();
        let mut entries = Vec::with_capacity(records.len());
        for (row, rec) in records.iter().enumerate() {
            let od = network
                .od(&rec.origin, &rec.destination)
                .map_err(|e| AssignmentError::DemandRow {
                    row: row + 1,
                    message: e.to_string(),
                })?;
            if od.origin == od.destination {
                return Err(AssignmentError::DemandRow {
                    row: row + 1,
                    message: format!("origin equals destination ({})", rec.origin),
                });
            }
            if rec.entry_period >= num_periods {
                return Err(AssignmentError::DemandRow {
                    row: row + 1,
                    message: format!(
                        "entry period {} outside horizon of {num_periods} periods",
                        rec.entry_period
                    ),
                });
            }
            let k = *od_index.entry(od).or_insert_with(|| {
                od_pairs.push(od);
                od_pairs.len() - 1
            });
            entries.push((k, rec.entry_period, rec.count));
        }
        let num_ods = od_pairs.len();
        let mut counts = vec![0u32; num_ods * num_periods];
        for (k, t, c) in entries {
            counts[t * num_ods + k] += c;
        }
        Ok(Demand {
            od_pairs,
            counts,
            num_periods,
        })
    }

    pub fn to_records(&self, network: &Network) -> Vec<DemandRecord> {
        let k = self.od_pairs.len();
        let mut out = Vec::new();
        for (od_idx, od) in self.od_pairs.iter().enumerate() {
            for t in 0..self.num_periods {
                let count = self.counts[t * k + od_idx];
                if count > 0 {
                    out.push(DemandRecord {
                        origin: network.node_name(od.origin).to_string(),
                        destination: network.node_name(od.destination).to_string(),
                        entry_period: t,
                        count,
                    });
                }
            }
        }
        out
    }

    pub fn od_index(&self, od: OdPair) -> Option<usize> {
        self.od_pairs.iter().position(|&p| p == od)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Reads a demand CSV with header `origin,destination,entry_period,count`.
pub fn load_demand(path: impl AsRef<Path>, network: &Network, num_periods: usize) -> Result<Demand> {
    let path = path.as_ref();
    let io_err = |message: String| AssignmentError::DemandIo {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(e.to_string()))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (row, rec) in reader.deserialize::<DemandRecord>().enumerate() {
        records.push(rec.map_err(|e| AssignmentError::DemandRow {
            row: row + 1,
            message: e.to_string(),
        })?);
    }
    Demand::from_records(network, &records, num_periods)
}

/// Enumerated routes of every OD pair, numbered OD by OD.
#[derive(Debug, Clone)]
pub struct RouteSet {
    pub routes: Vec<Route>,
    pub by_od: Vec<Vec<usize>>,
    pub od_of_route: Vec<usize>,
}

impl RouteSet {
    pub fn build(network: &Network, od_pairs: &[OdPair], k: usize) -> Result<Self> {
        let per_od: Vec<Vec<Route>> = od_pairs
            .par_iter()
            .map(|&od| enumerate_routes(network, od, k))
            .collect::<std::result::Result<_, _>>()?;
        let mut routes = Vec::new();
        let mut by_od = Vec::with_capacity(od_pairs.len());
        let mut od_of_route = Vec::new();
        for (od_idx, list) in per_od.into_iter().enumerate() {
            let ids = (routes.len()..routes.len() + list.len()).collect();
            od_of_route.extend(std::iter::repeat_n(od_idx, list.len()));
            routes.extend(list);
            by_od.push(ids);
        }
        Ok(RouteSet {
            routes,
            by_od,
            od_of_route,
        })
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// Link travel times θ in hours, indexed by volume row. Lookups past the last
/// period reuse the last period.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTimes {
    pub num_links: usize,
    pub num_periods: usize,
    pub hours: Vec<f64>,
}

impl LinkTimes {
    pub fn free_flow(network: &Network, num_periods: usize) -> Self {
        let mut hours = Vec::with_capacity(network.num_links() * num_periods);
        for t in 0..num_periods {
            hours.extend(network.links.iter().map(|l| l.params(t).free_flow_time_h));
        }
        LinkTimes {
            num_links: network.num_links(),
            num_periods,
            hours,
        }
    }

    /// BPR link times at the given volumes.
    pub fn from_volumes(network: &Network, num_periods: usize, volumes: &[f64]) -> Result<Self> {
        check_len("volumes", volumes.len(), network.num_links() * num_periods)?;
        let e = network.num_links();
        let hours = volumes
            .iter()
            .enumerate()
            .map(|(row, &v)| network.links[row % e].params(row / e).travel_time(v.max(0.0)))
            .collect();
        Ok(LinkTimes {
            num_links: e,
            num_periods,
            hours,
        })
    }

    pub fn get(&self, link: usize, period: usize) -> f64 {
        self.hours[period.min(self.num_periods - 1) * self.num_links + link]
    }

    fn validate(&self) -> Result<()> {
        for (row, &value) in self.hours.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(AssignmentError::BadLinkTime {
                    link: row % self.num_links,
                    period: row / self.num_links,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// One link of a route as traversed by a cohort entering at a given period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traversal {
    pub link: usize,
    /// Offset from the cohort's entry time to reaching the link, in periods.
    pub offset: f64,
    /// Link traversal time in hours.
    pub time_h: f64,
}

/// Walks a route for the cohort entering at `entry_period`. Each link's time
/// is taken from the period in which the middle of the cohort reaches it.
pub fn traverse(route: &Route, entry_period: usize, link_times: &LinkTimes, horizon: &Horizon) -> Vec<Traversal> {
    let p = horizon.period_length_h();
    let mut offset_h = 0.0;
    route
        .link_ids
        .iter()
        .map(|&link| {
            let mid = entry_period as f64 + 0.5 + offset_h / p;
            let period = (mid.floor().max(0.0) as usize).min(horizon.num_periods - 1);
            let time_h = link_times.get(link, period);
            let step = Traversal {
                link,
                offset: offset_h / p,
                time_h,
            };
            offset_h += time_h;
            step
        })
        .collect()
}

/// Route time in minutes for the cohort entering at `entry_period`.
pub fn route_time_min(route: &Route, entry_period: usize, link_times: &LinkTimes, horizon: &Horizon) -> f64 {
    traverse(route, entry_period, link_times, horizon)
        .iter()
        .map(|s| s.time_h)
        .sum::<f64>()
        * MINUTES_PER_HOUR
}

fn snap(x: f64) -> f64 {
    if x.abs() < SNAP_EPS {
        0.0
    } else if (x - 1.0).abs() < SNAP_EPS {
        1.0
    } else {
        x
    }
}

/// Sparse occupancy matrix mapping choice columns to expected link volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    pub dims: Dims,
    /// Nonzeros of each choice column as `(volume row, value)`, rows ascending.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl RMatrix {
    pub fn rows(&self) -> usize {
        self.dims.volume_len()
    }

    pub fn cols(&self) -> usize {
        self.dims.choice_len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col]
            .iter()
            .find(|(r, _)| *r == row)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols()]; self.rows()];
        for (c, col) in self.columns.iter().enumerate() {
            for &(r, v) in col {
                m[r][c] = v;
            }
        }
        m
    }

    /// `R x` for a choice-indexed vector.
    pub fn mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("choice vector", x.len(), self.cols())?;
        let mut out = vec![0.0; self.rows()];
        for (col, &xc) in self.columns.iter().zip(x) {
            if xc != 0.0 {
                for &(r, v) in col {
                    out[r] += v * xc;
                }
            }
        }
        Ok(out)
    }

    /// `Rᵀ y` for a volume-indexed vector.
    pub fn tmul(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("volume vector", y.len(), self.rows())?;
        Ok(self
            .columns
            .iter()
            .map(|col| col.iter().map(|&(r, v)| v * y[r]).sum())
            .collect())
    }
}

/// Builds the occupancy matrix. The cohort entering route `r` in period `t1`
/// is spread uniformly over that period; it reaches link `ℓ` after the summed
/// times of the preceding links, and entry `(t2, ℓ | t1, r)` is the share of
/// the cohort reaching `ℓ` during period `t2`. Shares past the horizon drop.
pub fn build_r_matrix(
    network: &Network,
    routes: &RouteSet,
    link_times: &LinkTimes,
    horizon: &Horizon,
) -> Result<RMatrix> {
    horizon.validate()?;
    check_len(
        "link times",
        link_times.hours.len(),
        network.num_links() * horizon.num_periods,
    )?;
    link_times.validate()?;
    for (r, route) in routes.routes.iter().enumerate() {
        if let Some(&link) = route.link_ids.iter().find(|&&l| l >= network.num_links()) {
            return Err(AssignmentError::UnknownLink { route: r, link });
        }
    }
    let dims = Dims {
        num_links: network.num_links(),
        num_routes: routes.len(),
        num_ods: routes.by_od.len(),
        num_periods: horizon.num_periods,
    };
    let columns = (0..dims.choice_len())
        .into_par_iter()
        .map(|c| {
            let (t1, r) = dims.split_choice(c);
            let mut col = Vec::new();
            for step in traverse(&routes.routes[r], t1, link_times, horizon) {
                // arrivals are uniform over [t1 + offset, t1 + offset + 1) in period units
                let start = t1 as f64 + step.offset;
                let first = start.floor() as usize;
                for t2 in first..=first + 1 {
                    if t2 >= dims.num_periods {
                        break;
                    }
                    let lo = start.max(t2 as f64);
                    let hi = (start + 1.0).min(t2 as f64 + 1.0);
                    let share = snap(hi - lo);
                    if share > 0.0 {
                        col.push((dims.volume_index(t2, step.link), share));
                    }
                }
            }
            col.sort_by_key(|&(row, _)| row);
            col
        })
        .collect();
    Ok(RMatrix { dims, columns })
}

/// Route times in minutes for every choice column.
pub fn route_times(routes: &RouteSet, link_times: &LinkTimes, horizon: &Horizon) -> Vec<f64> {
    let p = routes.len();
    (0..p * horizon.num_periods)
        .into_par_iter()
        .map(|c| route_time_min(&routes.routes[c % p], c / p, link_times, horizon))
        .collect()
}

/// Expected link volumes `R · (S·1)` given per-column driver counts `S·1`.
pub fn expected_volumes(r: &RMatrix, column_counts: &[f64]) -> Result<Vec<f64>> {
    r.mul(column_counts)
}

/// Total system travel time in vehicle-hours.
pub fn total_travel_time(volumes: &[f64], network: &Network, num_periods: usize) -> Result<f64> {
    check_len("volumes", volumes.len(), network.num_links() * num_periods)?;
    let e = network.num_links();
    Ok(volumes
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            let v = v.max(0.0);
            v * network.links[row % e].params(row / e).travel_time(v)
        })
        .sum())
}

/// Minimum of `delta` over the routes of one OD pair at one entry period,
/// returning `(route, time)`; ties go to the lowest route index.
pub fn fastest_route(routes: &RouteSet, dims: &Dims, delta: &[f64], od: usize, period: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for &r in &routes.by_od[od] {
        let d = delta[dims.choice_index(period, r)];
        if d < best.1 {
            best = (r, d);
        }
    }
    best
}

/// Per-OD-period minimum route time.
pub fn od_minimum_times(routes: &RouteSet, dims: &Dims, delta: &[f64]) -> Vec<f64> {
    (0..dims.od_period_len())
        .map(|row| {
            let (t, k) = dims.split_od_period(row);
            fastest_route(routes, dims, delta, k, t).1
        })
        .collect()
}

/// All-or-nothing loading: every driver on its OD-period's fastest route.
pub fn all_or_nothing(routes: &RouteSet, dims: &Dims, demand: &Demand, delta: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; dims.choice_len()];
    for row in 0..dims.od_period_len() {
        let q = demand.counts[row];
        if q > 0 {
            let (t, k) = dims.split_od_period(row);
            let (r, _) = fastest_route(routes, dims, delta, k, t);
            x[dims.choice_index(t, r)] += f64::from(q);
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct UeBaseline {
    pub r_matrix: RMatrix,
    /// Route times at equilibrium, minutes per choice column.
    pub delta: Vec<f64>,
    /// Equilibrium driver counts per choice column.
    pub flows: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
}

fn equilibrium_gap(routes: &RouteSet, dims: &Dims, demand: &Demand, delta: &[f64], flows: &[f64]) -> f64 {
    let mut gap = 0.0f64;
    for row in 0..dims.od_period_len() {
        let q = f64::from(demand.counts[row]);
        if q <= 0.0 {
            continue;
        }
        let (t, k) = dims.split_od_period(row);
        let (_, eta) = fastest_route(routes, dims, delta, k, t);
        for &r in &routes.by_od[k] {
            let c = dims.choice_index(t, r);
            if flows[c] >= UE_USED_SHARE * q {
                gap = gap.max((delta[c] - eta) / eta);
            }
        }
    }
    gap
}

/// Route-flow user equilibrium by the method of successive averages.
pub fn compute_ue_baseline(
    network: &Network,
    demand: &Demand,
    routes: &RouteSet,
    horizon: &Horizon,
) -> Result<UeBaseline> {
    let dims = Dims {
        num_links: network.num_links(),
        num_routes: routes.len(),
        num_ods: demand.od_pairs.len(),
        num_periods: horizon.num_periods,
    };
    check_len("demand", demand.counts.len(), dims.od_period_len())?;
    check_len("route set OD count", routes.by_od.len(), dims.num_ods)?;
    for (row, &q) in demand.counts.iter().enumerate() {
        let (_, k) = dims.split_od_period(row);
        if q > 0 && routes.by_od[k].is_empty() {
            let od = demand.od_pairs[k];
            return Err(AssignmentError::NoRoute {
                origin: network.node_name(od.origin).to_string(),
                destination: network.node_name(od.destination).to_string(),
            });
        }
    }

    let mut link_times = LinkTimes::free_flow(network, horizon.num_periods);
    let mut r_matrix = build_r_matrix(network, routes, &link_times, horizon)?;
    let mut delta = route_times(routes, &link_times, horizon);
    let mut flows = all_or_nothing(routes, &dims, demand, &delta);
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    for k in 1..=UE_MAX_ITERS {
        iterations = k;
        let volumes = r_matrix.mul(&flows)?;
        link_times = LinkTimes::from_volumes(network, horizon.num_periods, &volumes)?;
        r_matrix = build_r_matrix(network, routes, &link_times, horizon)?;
        delta = route_times(routes, &link_times, horizon);
        gap = equilibrium_gap(routes, &dims, demand, &delta, &flows);
        if gap < UE_GAP_TOL {
            break;
        }
        let target = all_or_nothing(routes, &dims, demand, &delta);
        let step = 1.0 / (k as f64 + 1.0);
        for (x, y) in flows.iter_mut().zip(&target) {
            *x += step * (y - *x);
        }
    }
    Ok(UeBaseline {
        r_matrix,
        delta,
        flows,
        iterations,
        gap,
    })
}

/// Route and OD times once every driver commits to the equilibrium-fastest
/// route of their OD-period.
#[derive(Debug, Clone)]
pub struct TravelTimeTables {
    /// Minutes per choice column.
    pub delta: Vec<f64>,
    /// Minutes per OD-period row.
    pub eta: Vec<f64>,
    pub link_times: LinkTimes,
    pub volumes: Vec<f64>,
    /// Driver counts per choice column under the no-incentive choice.
    pub baseline_counts: Vec<f64>,
}

pub fn route_times_after_choice(
    ue: &UeBaseline,
    demand: &Demand,
    routes: &RouteSet,
    network: &Network,
    horizon: &Horizon,
) -> Result<TravelTimeTables> {
    let dims = ue.r_matrix.dims;
    let baseline_counts = all_or_nothing(routes, &dims, demand, &ue.delta);
    let volumes = ue.r_matrix.mul(&baseline_counts)?;
    let link_times = LinkTimes::from_volumes(network, horizon.num_periods, &volumes)?;
    let delta = route_times(routes, &link_times, horizon);
    let eta = od_minimum_times(routes, &dims, &delta);
    Ok(TravelTimeTables {
        delta,
        eta,
        link_times,
        volumes,
        baseline_counts,
    })
}

/// The minimum-time reference of one organization: each driver's OD-period
/// row and the summed minimum times.
#[derive(Debug, Clone, PartialEq)]
pub struct MinTimeAssignment {
    /// OD-period row selected by each driver's row of the one-hot matrix.
    pub od_period: Vec<usize>,
    /// Minutes.
    pub gamma: f64,
}

impl MinTimeAssignment {
    /// Dense one-hot matrix, one row per driver.
    pub fn to_dense(&self, od_period_len: usize) -> Vec<Vec<u8>> {
        self.od_period
            .iter()
            .map(|&row| {
                let mut v = vec![0u8; od_period_len];
                v[row] = 1;
                v
            })
            .collect()
    }
}

pub fn min_time_assignment(org: &Organization, eta: &[f64], dims: &Dims) -> Result<MinTimeAssignment> {
    let mut od_period = Vec::with_capacity(org.drivers.len());
    let mut gamma = 0.0;
    for (j, d) in org.drivers.iter().enumerate() {
        if d.od >= dims.num_ods || d.entry_period >= dims.num_periods {
            return Err(AssignmentError::UnknownDriverOd {
                org: org.id.clone(),
                driver: j,
                message: format!("OD {} at period {} is not in the demand table", d.od, d.entry_period),
            });
        }
        let row = dims.od_period_index(d.entry_period, d.od);
        check_len("eta", eta.len(), dims.od_period_len())?;
        od_period.push(row);
        gamma += eta[row];
    }
    Ok(MinTimeAssignment { od_period, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incentives::Driver;
    use crate::network::tests::three_link_json;

    fn three_link() -> (Network, RouteSet, Horizon) {
        let net = Network::from_json_str(three_link_json()).unwrap();
        let od = net.od("v1", "v3").unwrap();
        let routes = RouteSet::build(&net, &[od], 3).unwrap();
        let horizon = Horizon::new(3, 12.0, 3).unwrap();
        (net, routes, horizon)
    }

    #[test]
    fn three_link_first_route_column() {
        let (net, routes, horizon) = three_link();
        let lt = LinkTimes::free_flow(&net, 3);
        let r = build_r_matrix(&net, &routes, &lt, &horizon).unwrap();
        let d = r.to_dense();
        assert_eq!(d.len(), 9);
        assert_eq!(d[0].len(), 6);
        let col: Vec<f64> = d.iter().map(|row| row[0]).collect();
        assert_eq!(col, vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn link_off_route_is_zero() {
        let (net, routes, horizon) = three_link();
        let r = build_r_matrix(&net, &routes, &LinkTimes::free_flow(&net, 3), &horizon).unwrap();
        // route 0 never uses link 1
        for t2 in 0..3 {
            for t1 in 0..3 {
                assert_eq!(r.get(t2 * 3 + 1, t1 * 2), 0.0);
            }
        }
    }

    #[test]
    fn single_link_full_period_containment() {
        let net = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":0.25,"capacity":10}]}"#,
        )
        .unwrap();
        let routes = RouteSet::build(&net, &[net.od("a", "b").unwrap()], 3).unwrap();
        let horizon = Horizon::new(2, 15.0, 1).unwrap();
        let r = build_r_matrix(&net, &routes, &LinkTimes::free_flow(&net, 2), &horizon).unwrap();
        assert_eq!(r.columns[0], vec![(0, 1.0)]);
        assert_eq!(r.columns[1], vec![(1, 1.0)]);
    }

    #[test]
    fn rejects_bad_link_times() {
        let (net, routes, horizon) = three_link();
        let mut lt = LinkTimes::free_flow(&net, 3);
        lt.hours[4] = f64::NAN;
        assert!(matches!(
            build_r_matrix(&net, &routes, &lt, &horizon),
            Err(AssignmentError::BadLinkTime { link: 1, period: 1, .. })
        ));
    }

    #[test]
    fn one_driver_volume_is_the_column() {
        let (net, routes, horizon) = three_link();
        let r = build_r_matrix(&net, &routes, &LinkTimes::free_flow(&net, 3), &horizon).unwrap();
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        let v = expected_volumes(&r, &x).unwrap();
        let col: Vec<f64> = r.to_dense().iter().map(|row| row[0]).collect();
        assert_eq!(v, col);
        assert_eq!(expected_volumes(&r, &[0.0; 6]).unwrap(), vec![0.0; 9]);
        assert!(expected_volumes(&r, &[0.0; 5]).is_err());
    }

    #[test]
    fn total_travel_time_examples() {
        let net = Network::from_json_str(
            r#"{"nodes":["a","b"],"links":[{"id":0,"from":"a","to":"b","free_flow_time_h":0.1,"capacity":100}]}"#,
        )
        .unwrap();
        assert_eq!(total_travel_time(&[0.0], &net, 1).unwrap(), 0.0);
        assert!((total_travel_time(&[100.0], &net, 1).unwrap() - 11.5).abs() < 1e-12);
    }

    #[test]
    fn route_times_in_minutes() {
        let (net, routes, horizon) = three_link();
        let delta = route_times(&routes, &LinkTimes::free_flow(&net, 3), &horizon);
        assert!((delta[0] - 12.0).abs() < 1e-12);
        assert!((delta[1] - 18.0).abs() < 1e-12);
    }

    #[test]
    fn min_time_assignment_three_link() {
        let dims = Dims {
            num_links: 3,
            num_routes: 2,
            num_ods: 1,
            num_periods: 3,
        };
        let eta = vec![12.0, 12.5, 13.0];
        let org = Organization {
            id: "1".into(),
            vot_per_min: 2.5,
            drivers: vec![
                Driver { od: 0, entry_period: 0, b_factor: 1.0 },
                Driver { od: 0, entry_period: 0, b_factor: 1.0 },
            ],
        };
        let m = min_time_assignment(&org, &eta, &dims).unwrap();
        assert_eq!(m.to_dense(3), vec![vec![1, 0, 0], vec![1, 0, 0]]);
        assert_eq!(m.gamma, 24.0);
        let bad = Organization {
            drivers: vec![Driver { od: 4, entry_period: 0, b_factor: 1.0 }],
            ..org
        };
        assert!(min_time_assignment(&bad, &eta, &dims).is_err());
    }

    #[test]
    fn demand_rejects_unknown_nodes_and_periods() {
        let (net, _, _) = three_link();
        let rec = |o: &str, t| DemandRecord {
            origin: o.into(),
            destination: "v3".into(),
            entry_period: t,
            count: 1,
        };
        assert!(Demand::from_records(&net, &[rec("v9", 0)], 3).is_err());
        assert!(Demand::from_records(&net, &[rec("v1", 3)], 3).is_err());
        let d = Demand::from_records(&net, &[rec("v1", 0), rec("v1", 0), rec("v1", 2)], 3).unwrap();
        assert_eq!(d.counts, vec![2, 0, 1]);
    }
}
