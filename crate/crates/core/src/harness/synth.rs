//! Seeded synthetic instances: a ring road with chords, random OD demand,
//! capacities calibrated to a target congestion level, and organizations
//! drawn uniformly at random from the driver population.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{Demand, DemandRecord};
use crate::incentives::{DriverRecord, OrgRoster, OrganizationRecord};
use crate::network::{Horizon, LinkRecord, Network, NetworkFile};

use super::instance::Instance;
use super::{HarnessError, Result, Stage};

const SPEED_MPH: f64 = 30.0;
const CALIBRATION_ROUNDS: usize = 8;
const CALIBRATION_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub nodes: usize,
    pub links: usize,
    pub ods: usize,
    pub orgs: usize,
    /// Drivers entering during the incentivized periods.
    pub drivers: usize,
    /// Share of drivers enrolled through an organization.
    pub participation: f64,
    /// Target mean volume/capacity ratio over the incentivized periods.
    pub congestion: f64,
    pub num_periods: usize,
    pub period_length_min: f64,
    pub analysis_periods: usize,
    pub routes_per_od: usize,
    pub vot_per_min: f64,
    pub b_factor: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nodes: 12,
            links: 32,
            ods: 132,
            orgs: 10,
            drivers: 12_000,
            participation: 0.1,
            congestion: 0.9,
            num_periods: 6,
            period_length_min: 15.0,
            analysis_periods: 4,
            routes_per_od: 3,
            vot_per_min: 2.63,
            b_factor: 1.5,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::invalid(Stage::Synthesis, m));
        if self.nodes < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.nodes));
        }
        let max_links = self.nodes * (self.nodes - 1);
        if self.links < self.nodes.min(max_links) || self.links > max_links {
            return bad(format!(
                "{} links cannot make a strongly connected simple network on {} nodes (need {}..={max_links})",
                self.links, self.nodes, self.nodes
            ));
        }
        if self.ods == 0 || self.ods > max_links {
            return bad(format!(
                "{} OD pairs requested but {} nodes allow at most {max_links}",
                self.ods, self.nodes
            ));
        }
        if self.drivers == 0 || self.orgs == 0 {
            return bad("drivers and organizations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.participation) {
            return bad(format!("participation must lie in [0, 1], got {}", self.participation));
        }
        if !(self.congestion > 0.0 && self.congestion.is_finite()) {
            return bad(format!("congestion must be positive, got {}", self.congestion));
        }
        if !(self.b_factor >= 1.0) || !(self.vot_per_min >= 0.0) {
            return bad("b_factor must be at least 1 and VOT nonnegative".into());
        }
        if self.routes_per_od == 0 {
            return bad("routes_per_od must be positive".into());
        }
        Horizon::new(self.num_periods, self.period_length_min, self.analysis_periods)
            .map_err(|e| HarnessError::stage(Stage::Synthesis, e))?;
        Ok(())
    }

    pub fn horizon(&self) -> Horizon {
        Horizon {
            num_periods: self.num_periods,
            period_length_min: self.period_length_min,
            analysis_periods: self.analysis_periods,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Generated input files plus the measured congestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthInstance {
    pub network: NetworkFile,
    pub demand: Vec<DemandRecord>,
    pub orgs: Vec<OrganizationRecord>,
    pub horizon: Horizon,
    pub routes_per_od: usize,
    /// Mean volume/capacity ratio of the equilibrium over the incentivized periods.
    pub measured_congestion: f64,
}

impl SynthInstance {
    pub fn instance(&self) -> Result<Instance> {
        let network =
            Network::from_file_record(self.network.clone()).map_err(|e| HarnessError::stage(Stage::Load, e))?;
        let demand = Demand::from_records(&network, &self.demand, self.horizon.num_periods)
            .map_err(|e| HarnessError::stage(Stage::Load, e))?;
        let roster = OrgRoster::from_records(&self.orgs, &network, &demand, self.horizon.analysis_periods)
            .map_err(|e| HarnessError::stage(Stage::Load, e))?;
        Instance::build(network, demand, roster, self.horizon, self.routes_per_od)
    }

    /// Writes `network.json`, `demand.csv` and `orgs.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| HarnessError::invalid(Stage::Synthesis, format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("network.json"), to_pretty(&self.network)).map_err(io)?;
        fs::write(dir.join("orgs.json"), to_pretty(&self.orgs)).map_err(io)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.demand {
            w.serialize(rec)
                .map_err(|e| HarnessError::invalid(Stage::Synthesis, e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| HarnessError::invalid(Stage::Synthesis, e.to_string()))?;
        fs::write(dir.join("demand.csv"), bytes).map_err(io)?;
        Ok(())
    }
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn build_network(spec: &SynthSpec) -> NetworkFile {
    let n = spec.nodes;
    let mut rng = spec.rng(1);
    let nodes: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(spec.links);
    let mut present = vec![vec![false; n]; n];
    let mut push = |a: usize, b: usize, pairs: &mut Vec<(usize, usize)>| {
        if pairs.len() < spec.links && a != b && !present[a][b] {
            present[a][b] = true;
            pairs.push((a, b));
        }
    };
    for i in 0..n {
        push(i, (i + 1) % n, &mut pairs);
    }
    for i in 0..n {
        push((i + 1) % n, i, &mut pairs);
    }
    let mut chords: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| b - a > 1 && !(a == 0 && b == n - 1))
        .collect();
    chords.shuffle(&mut rng);
    for (a, b) in chords {
        push(a, b, &mut pairs);
        push(b, a, &mut pairs);
    }
    // dense requests run out of chords; fill with anything left
    for a in 0..n {
        for b in 0..n {
            push(a, b, &mut pairs);
        }
    }
    let mut times = vec![vec![0.0; n]; n];
    let mut capacity_factor = vec![vec![0.0; n]; n];
    for &(a, b) in &pairs {
        if times[a][b] == 0.0 {
            let ring = (a + 1) % n == b || (b + 1) % n == a;
            let t = if ring {
                rng.gen_range(0.05..0.10)
            } else {
                rng.gen_range(0.08..0.15)
            };
            let cap = rng.gen_range(0.6..1.4);
            times[a][b] = t;
            times[b][a] = t;
            capacity_factor[a][b] = cap;
            capacity_factor[b][a] = cap;
        }
    }
    let links = pairs
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| LinkRecord {
            id,
            from: nodes[a].clone(),
            to: nodes[b].clone(),
            free_flow_time_h: round6(times[a][b]),
            capacity: capacity_factor[a][b],
            length_mi: round6(times[a][b] * SPEED_MPH),
            periods: Vec::new(),
        })
        .collect();
    NetworkFile { nodes, links }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn build_demand(spec: &SynthSpec, nodes: &[String]) -> Vec<DemandRecord> {
    let n = spec.nodes;
    let mut rng = spec.rng(2);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(spec.ods);
    let profile: Vec<f64> = (0..spec.analysis_periods).map(|_| rng.gen_range(0.7..1.3)).collect();
    let mut cells = Vec::with_capacity(spec.ods * spec.analysis_periods);
    for &(a, b) in &pairs {
        let od_weight: f64 = rng.gen_range(0.3..1.7);
        for (t, &p) in profile.iter().enumerate() {
            cells.push((a, b, t, od_weight * p));
        }
    }
    let counts = largest_remainder(spec.drivers, &cells.iter().map(|c| c.3).collect::<Vec<_>>());
    cells
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(&(a, b, t, _), count)| DemandRecord {
            origin: nodes[a].clone(),
            destination: nodes[b].clone(),
            entry_period: t,
            count,
        })
        .collect()
}

/// Integer apportionment of `total` proportional to `weights`; remainders
/// go to the largest fractional parts, lowest index first on ties.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<u32> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<u32> = exact.iter().map(|x| x.floor() as u32).collect();
    let assigned: usize = counts.iter().map(|&c| c as usize).sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = exact[i] - exact[i].floor();
        let fj = exact[j] - exact[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Mean volume/capacity ratio of the equilibrium over every link and
/// incentivized period.
pub fn mean_congestion(instance: &Instance) -> Result<f64> {
    let dims = instance.dims;
    let periods = instance.horizon.analysis_periods;
    let volumes = instance
        .ue
        .r_matrix
        .mul(&instance.ue.flows)
        .map_err(|e| HarnessError::stage(Stage::Synthesis, e))?;
    let mut sum = 0.0;
    for t in 0..periods {
        for (l, link) in instance.network.links.iter().enumerate() {
            sum += volumes[dims.volume_index(t, l)] / link.params(t).capacity;
        }
    }
    Ok(sum / (periods * instance.network.num_links()) as f64)
}

fn build_orgs(spec: &SynthSpec, demand: &[DemandRecord]) -> Vec<OrganizationRecord> {
    // one entry per driver, in demand-record order
    let population: Vec<&DemandRecord> = demand
        .iter()
        .flat_map(|rec| std::iter::repeat_n(rec, rec.count as usize))
        .collect();
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.shuffle(&mut spec.rng(3));
    let mut member_rng = spec.rng(4);
    let membership: Vec<usize> = (0..population.len()).map(|_| member_rng.gen_range(0..spec.orgs)).collect();
    let enrolled = (spec.participation * population.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = order[..enrolled].to_vec();
    chosen.sort_unstable();
    let mut orgs: Vec<OrganizationRecord> = (0..spec.orgs)
        .map(|i| OrganizationRecord {
            id: format!("org{:02}", i + 1),
            vot_per_min: spec.vot_per_min,
            drivers: Vec::new(),
            background: false,
        })
        .collect();
    for j in chosen {
        let rec = population[j];
        orgs[membership[j]].drivers.push(DriverRecord {
            origin: rec.origin.clone(),
            destination: rec.destination.clone(),
            entry_period: rec.entry_period,
            b_factor: spec.b_factor,
        });
    }
    orgs
}

/// Generates a strongly connected network, demand and organizations from
/// `spec`, scaling capacities until the equilibrium's mean volume/capacity
/// ratio is within 2% of the requested congestion.
pub fn synthesize_instance(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let mut network = build_network(spec);
    let demand = build_demand(spec, &network.nodes);
    let orgs = build_orgs(spec, &demand);
    let horizon = spec.horizon();
    let mut synth = SynthInstance {
        network: network.clone(),
        demand,
        orgs: vec![],
        horizon,
        routes_per_od: spec.routes_per_od,
        measured_congestion: 0.0,
    };
    // the equilibrium does not depend on who is enrolled, so calibrate without organizations
    let base: Vec<f64> = network.links.iter().map(|l| l.capacity).collect();
    let mut scale = 1.0;
    for _ in 0..CALIBRATION_ROUNDS {
        for (link, &b) in network.links.iter_mut().zip(&base) {
            link.capacity = round6(b * scale).max(1e-6);
        }
        synth.network = network.clone();
        let measured = mean_congestion(&synth.instance()?)?;
        synth.measured_congestion = measured;
        if measured <= 0.0 {
            return Err(HarnessError::invalid(Stage::Synthesis, "demand produced no volume"));
        }
        if (measured / spec.congestion - 1.0).abs() <= CALIBRATION_TOL {
            break;
        }
        scale *= measured / spec.congestion;
    }
    synth.orgs = orgs;
    Ok(synth)
}
