//! Shared builders and independent reference solvers for the integration tests.

#![allow(dead_code)]

use microlp::{ComparisonOp, OptimizationDirection, Problem as LpProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orgincent::admm::Problem;
use orgincent::assignment::{Demand, DemandRecord};
use orgincent::harness::Instance;
use orgincent::incentives::{DriverRecord, OrgRoster, OrganizationRecord};
use orgincent::network::{Horizon, LinkRecord, Network, NetworkFile};

/// Parallel links `s -> t`, one route each, with `(free-flow hours, capacity)`.
pub fn parallel_network(links: &[(f64, f64)]) -> Network {
    Network::from_file_record(NetworkFile {
        nodes: vec!["s".into(), "t".into()],
        links: links
            .iter()
            .enumerate()
            .map(|(id, &(ff, cap))| LinkRecord {
                id,
                from: "s".into(),
                to: "t".into(),
                free_flow_time_h: ff,
                capacity: cap,
                length_mi: 0.0,
                periods: Vec::new(),
            })
            .collect(),
    })
    .expect("valid network")
}

/// A participating driver `s -> t` entering at `period`.
pub fn driver(period: usize, b_factor: f64) -> DriverRecord {
    DriverRecord {
        origin: "s".into(),
        destination: "t".into(),
        entry_period: period,
        b_factor,
    }
}

pub fn org(id: &str, vot: f64, drivers: Vec<DriverRecord>) -> OrganizationRecord {
    OrganizationRecord {
        id: id.into(),
        vot_per_min: vot,
        drivers,
        background: false,
    }
}

/// Builds an instance on a parallel-link network with `counts[t]` drivers
/// entering in period `t`.
pub fn parallel_instance(
    links: &[(f64, f64)],
    horizon: Horizon,
    counts: &[u32],
    orgs: &[OrganizationRecord],
) -> Instance {
    let network = parallel_network(links);
    let records: Vec<DemandRecord> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(t, &count)| DemandRecord {
            origin: "s".into(),
            destination: "t".into(),
            entry_period: t,
            count,
        })
        .collect();
    let demand = Demand::from_records(&network, &records, horizon.num_periods).expect("valid demand");
    let roster = OrgRoster::from_records(orgs, &network, &demand, horizon.analysis_periods).expect("valid roster");
    Instance::build(network, demand, roster, horizon, links.len()).expect("instance builds")
}

/// A random small instance: up to 3 parallel routes, up to 8 participating
/// drivers in up to 3 organizations, some background traffic, and a budget.
pub fn random_small(rng: &mut ChaCha8Rng) -> (Instance, f64) {
    let p = rng.gen_range(2..=3);
    let links: Vec<(f64, f64)> = (0..p)
        .map(|_| (rng.gen_range(0.08..0.3), rng.gen_range(3.0..8.0)))
        .collect();
    let horizon = Horizon::new(2, 30.0, rng.gen_range(1..=2)).expect("valid horizon");
    let n_orgs = rng.gen_range(1..=3);
    let n_drivers = rng.gen_range(n_orgs..=8);
    let mut members: Vec<Vec<DriverRecord>> = vec![Vec::new(); n_orgs];
    let mut counts = vec![0u32; horizon.num_periods];
    for j in 0..n_drivers {
        let t = rng.gen_range(0..horizon.analysis_periods);
        counts[t] += 1;
        members[j % n_orgs].push(driver(t, rng.gen_range(1.1..2.5)));
    }
    for c in counts.iter_mut() {
        *c += rng.gen_range(0..12);
    }
    let orgs: Vec<OrganizationRecord> = members
        .into_iter()
        .enumerate()
        .map(|(i, d)| org(&format!("o{i}"), rng.gen_range(0.2..3.0), d))
        .collect();
    let budget = match rng.gen_range(0..3) {
        0 => rng.gen_range(0.5..5.0),
        1 => rng.gen_range(5.0..50.0),
        _ => 1e4,
    };
    (parallel_instance(&links, horizon, &counts, &orgs), budget)
}

/// Certified bracket `[lower, upper]` on the optimum of a convex program.
#[derive(Debug, Clone, Copy)]
pub struct OracleBound {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

/// One LP variable per (driver, route) entry in the problem's block layout.
struct Layout {
    /// `(org, local column)` of every entry.
    entries: Vec<(usize, usize)>,
}

impl Layout {
    fn new(problem: &Problem) -> Self {
        let mut entries = Vec::new();
        for (i, org) in problem.orgs.iter().enumerate() {
            for j in 0..org.num_drivers() {
                let (g, _) = org.driver_block(j);
                for r in 0..g.num_routes() {
                    entries.push((i, g.col_start + r));
                }
            }
        }
        Layout { entries }
    }

    fn counts(&self, problem: &Problem, s: &[f64]) -> Vec<Vec<f64>> {
        let mut u: Vec<Vec<f64>> = problem.orgs.iter().map(|o| vec![0.0; o.num_cols()]).collect();
        for (&(i, c), &x) in self.entries.iter().zip(s) {
            u[i][c] += x;
        }
        u
    }
}

fn objective(problem: &Problem, layout: &Layout, s: &[f64]) -> f64 {
    problem.travel_time(&problem.volumes(&layout.counts(problem, s)))
}

fn gradient(problem: &Problem, layout: &Layout, s: &[f64]) -> Vec<f64> {
    let v = problem.volumes(&layout.counts(problem, s));
    let marginal: Vec<f64> = v
        .iter()
        .zip(&problem.link_params)
        .map(|(&x, p)| p.travel_time(x) + x * p.travel_time_derivative(x))
        .collect();
    layout
        .entries
        .iter()
        .map(|&(i, c)| {
            let col = problem.orgs[i].cols[c];
            problem.r.columns[col].iter().map(|&(row, a)| a * marginal[row]).sum()
        })
        .collect()
}

/// Minimizes a linear function over the relaxed feasible set: per-driver
/// simplices, fairness rows, and payments `c_i >= α_i(δᵀu_i - γ_i)`,
/// `c_i >= 0`, `Σ c_i <= Ω`.
fn linear_minimizer(problem: &Problem, g: &[f64]) -> Vec<f64> {
    let mut lp = LpProblem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = g.iter().map(|&w| lp.add_var(w, (0.0, 1.0))).collect();
    let costs: Vec<_> = problem.orgs.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let mut k = 0;
    for (i, org) in problem.orgs.iter().enumerate() {
        let mut pay = vec![(costs[i], 1.0)];
        for j in 0..org.num_drivers() {
            let (grp, _) = org.driver_block(j);
            let p = grp.num_routes();
            let block = &vars[k..k + p];
            let delta = &org.delta[grp.col_start..grp.col_start + p];
            let ones: Vec<_> = block.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(&ones, ComparisonOp::Eq, 1.0);
            let fair: Vec<_> = block.iter().zip(delta).map(|(&v, &d)| (v, d)).collect();
            lp.add_constraint(&fair, ComparisonOp::Le, org.fair_bound[j]);
            pay.extend(block.iter().zip(delta).map(|(&v, &d)| (v, -org.vot_per_min * d)));
            k += p;
        }
        lp.add_constraint(&pay, ComparisonOp::Ge, -org.vot_per_min * org.gamma);
    }
    let total: Vec<_> = costs.iter().map(|&c| (c, 1.0)).collect();
    lp.add_constraint(&total, ComparisonOp::Le, problem.budget);
    let sol = lp.solve().expect("relaxed set is nonempty").into_solution().expect("no time limit set");
    vars.iter().map(|&v| sol[v].clamp(0.0, 1.0)).collect()
}

/// Frank-Wolfe with exact line search on the relaxed travel-time problem
/// (no binarity term). Each iteration's duality gap certifies a lower bound.
pub fn frank_wolfe(problem: &Problem, rel_gap: f64, max_iters: usize) -> OracleBound {
    let layout = Layout::new(problem);
    let mut x = linear_minimizer(problem, &vec![0.0; layout.entries.len()]);
    let mut fx = objective(problem, &layout, &x);
    let mut lower = f64::NEG_INFINITY;
    for it in 0..max_iters {
        let g = gradient(problem, &layout, &x);
        let s = linear_minimizer(problem, &g);
        let d: Vec<f64> = s.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gap: f64 = -g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        lower = lower.max(fx - gap.max(0.0));
        if fx - lower <= rel_gap * fx.abs() {
            return OracleBound {
                lower,
                upper: fx,
                iterations: it,
            };
        }
        // bisection on the directional derivative over [0, 1]
        let slope = |t: f64| {
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            gradient(problem, &layout, &y).iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
        };
        let step = if slope(1.0) <= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for (a, b) in x.iter_mut().zip(&d) {
            *a += step * b;
        }
        fx = objective(problem, &layout, &x);
    }
    OracleBound {
        lower,
        upper: fx,
        iterations: max_iters,
    }
}

/// Best binary assignment by brute force over every driver's route choice:
/// `(ℓ1 distance, smallest total payment among distance-optimal points)`,
/// or `None` when no assignment satisfies fairness and the budget.
pub fn enumerate_projection(problem: &Problem, u_star: &[Vec<f64>]) -> Option<(f64, f64)> {
    let drivers: Vec<(usize, usize)> = problem
        .orgs
        .iter()
        .enumerate()
        .flat_map(|(i, o)| (0..o.num_drivers()).map(move |j| (i, j)))
        .collect();
    let sizes: Vec<usize> = drivers
        .iter()
        .map(|&(i, j)| problem.orgs[i].driver_block(j).0.num_routes())
        .collect();
    let mut pick = vec![0usize; drivers.len()];
    let mut best: Option<(f64, f64)> = None;
    loop {
        let mut counts: Vec<Vec<f64>> = problem.orgs.iter().map(|o| vec![0.0; o.num_cols()]).collect();
        let mut assigned = vec![0.0; problem.orgs.len()];
        let mut fair = true;
        for (&(i, j), &p) in drivers.iter().zip(&pick) {
            let org = &problem.orgs[i];
            let col = org.driver_block(j).0.col_start + p;
            counts[i][col] += 1.0;
            assigned[i] += org.delta[col];
            fair &= org.delta[col] <= org.fair_bound[j];
        }
        if fair {
            let cost: f64 = problem
                .orgs
                .iter()
                .zip(&assigned)
                .map(|(o, &a)| o.vot_per_min * (a - o.gamma).max(0.0))
                .sum();
            if cost <= problem.budget {
                let dist: f64 = counts
                    .iter()
                    .zip(u_star)
                    .flat_map(|(c, u)| c.iter().zip(u).map(|(a, b)| (a - b).abs()))
                    .sum();
                best = Some(match best {
                    None => (dist, cost),
                    Some((d, _)) if dist < d - 1e-9 => (dist, cost),
                    Some((d, c)) if (dist - d).abs() <= 1e-9 => (d, c.min(cost)),
                    Some(b) => b,
                });
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == pick.len() {
                return best;
            }
            pick[k] += 1;
            if pick[k] < sizes[k] {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// Number of binary entries of S: Σ drivers × routes of their OD-period.
pub fn binary_count(problem: &Problem) -> usize {
    problem
        .orgs
        .iter()
        .map(|o| (0..o.num_drivers()).map(|j| o.driver_block(j).0.num_routes()).sum::<usize>())
        .sum()
}

/// A network from `(from, to, free-flow hours, capacity)` links.
pub fn network(nodes: &[&str], links: &[(&str, &str, f64, f64)]) -> Network {
    Network::from_file_record(NetworkFile {
        nodes: nodes.iter().map(|n| n.to_string()).collect(),
        links: links
            .iter()
            .enumerate()
            .map(|(id, &(from, to, ff, cap))| LinkRecord {
                id,
                from: from.into(),
                to: to.into(),
                free_flow_time_h: ff,
                capacity: cap,
                length_mi: 0.0,
                periods: Vec::new(),
            })
            .collect(),
    })
    .expect("valid network")
}

/// A random instance small enough to enumerate (≤ 12 binaries), with a
/// random fractional target.
pub fn enumerable_case(seed: u64) -> (Problem, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p = rng.gen_range(2..=3);
        let links: Vec<(f64, f64)> = (0..p).map(|_| (rng.gen_range(0.08..0.3), rng.gen_range(2.0..6.0))).collect();
        let horizon = Horizon::new(2, 30.0, rng.gen_range(1..=2)).expect("valid horizon");
        let n_orgs = rng.gen_range(1..=2);
        let n_drivers = rng.gen_range(n_orgs..=12 / p);
        let mut members = vec![Vec::new(); n_orgs];
        let mut counts = vec![0u32; horizon.num_periods];
        for j in 0..n_drivers {
            let t = rng.gen_range(0..horizon.analysis_periods);
            counts[t] += 1;
            members[j % n_orgs].push(driver(t, rng.gen_range(1.0..2.0)));
        }
        for c in counts.iter_mut() {
            *c += rng.gen_range(0..8);
        }
        let orgs: Vec<_> = members
            .into_iter()
            .enumerate()
            .map(|(i, d)| org(&format!("o{i}"), rng.gen_range(0.2..3.0), d))
            .collect();
        let inst = parallel_instance(&links, horizon, &counts, &orgs);
        let budget = match rng.gen_range(0..4) {
            0 => 0.0,
            1 => rng.gen_range(0.1..5.0),
            2 => rng.gen_range(5.0..60.0),
            _ => 1e6,
        };
        let Ok(problem) = inst.problem(budget, 1.0) else { continue };
        if binary_count(&problem) > 12 {
            continue;
        }
        let u_star = problem
            .orgs
            .iter()
            .map(|o| {
                let mut u = vec![0.0; o.num_cols()];
                for g in &o.groups {
                    for r in 0..g.num_routes() {
                        u[g.col_start + r] = rng.gen_range(0.0..=g.demand);
                    }
                }
                u
            })
            .collect();
        return (problem, u_star);
    }
}
