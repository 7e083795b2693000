//! Scenario configuration files and input sources.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::admm::{AnnealPhase, SolverParams};
use crate::assignment::load_demand;
use crate::incentives::load_organizations;
use crate::network::{load_network, Horizon};
use crate::projection::BnbParams;

use super::instance::Instance;
use super::scenario::RunSettings;
use super::synth::{synthesize_instance, SynthSpec};
use super::{HarnessError, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Budgets,
    NOrgs,
    Vot,
    Participation,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Budgets => "budget",
            SweepAxis::NOrgs => "n_orgs",
            SweepAxis::Vot => "vot_scale",
            SweepAxis::Participation => "participation",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "budgets" | "budget" => Ok(SweepAxis::Budgets),
            "n_orgs" | "orgs" => Ok(SweepAxis::NOrgs),
            "vot" | "vot_scale" => Ok(SweepAxis::Vot),
            "participation" => Ok(SweepAxis::Participation),
            other => Err(format!("unknown sweep axis '{other}' (budgets, n_orgs, vot, participation)")),
        }
    }
}

/// Where a scenario's network, demand and organizations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Files {
        network: PathBuf,
        demand: PathBuf,
        orgs: PathBuf,
        horizon: Horizon,
        routes_per_od: usize,
    },
    Synth(SynthSpec),
}

impl InputSpec {
    pub fn instance(&self) -> Result<Instance> {
        match self {
            InputSpec::Files {
                network,
                demand,
                orgs,
                horizon,
                routes_per_od,
            } => {
                let load = |e: &dyn std::fmt::Display| HarnessError::invalid(Stage::Load, e.to_string());
                let network = load_network(network).map_err(|e| load(&e))?;
                let demand = load_demand(demand, &network, horizon.num_periods).map_err(|e| load(&e))?;
                let roster = load_organizations(orgs, &network, &demand, horizon.analysis_periods).map_err(|e| load(&e))?;
                Instance::build(network, demand, roster, *horizon, *routes_per_od)
            }
            InputSpec::Synth(spec) => synthesize_instance(spec)?.instance(),
        }
    }

    /// The same input with one population knob changed.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<InputSpec> {
        let InputSpec::Synth(spec) = self else {
            return Err(HarnessError::invalid(
                Stage::Load,
                format!("sweeping {} needs a synthesized population", axis.name()),
            ));
        };
        let mut spec = spec.clone();
        match axis {
            SweepAxis::NOrgs => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(HarnessError::invalid(Stage::Load, format!("n_orgs must be a positive integer, got {value}")));
                }
                spec.orgs = value as usize;
            }
            SweepAxis::Participation => spec.participation = value,
            SweepAxis::Budgets | SweepAxis::Vot => {}
        }
        Ok(InputSpec::Synth(spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub num_periods: usize,
    pub period_length_min: f64,
    pub analysis_periods: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig {
            num_periods: 6,
            period_length_min: 15.0,
            analysis_periods: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rho: f64,
    pub lambda_tilde: f64,
    pub iters: usize,
    pub tol: f64,
    /// Regularizer weight of the sharpening phase; omit to skip it.
    pub anneal_lambda: Option<f64>,
    pub anneal_iters: usize,
    pub adaptive_rho: bool,
    pub relaxation: f64,
    pub projection_time_limit_s: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverConfig {
            rho: p.rho,
            lambda_tilde: p.lambda_tilde,
            iters: p.max_iters,
            tol: p.tol,
            anneal_lambda: p.anneal.map(|a| a.lambda_tilde),
            anneal_iters: p.anneal.map_or(200, |a| a.iters),
            adaptive_rho: p.adaptive_rho,
            relaxation: p.relaxation,
            projection_time_limit_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Everything a `solve` or `sweep` run reads, as stored in a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub orgs: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub horizon: HorizonConfig,
    pub routes_per_od: usize,
    pub budget: f64,
    pub vot_scale: f64,
    pub seed: Option<u64>,
    pub solver: SolverConfig,
    pub out: PathBuf,
    pub sweep: Option<SweepConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            network: None,
            demand: None,
            orgs: None,
            synth: None,
            horizon: HorizonConfig::default(),
            routes_per_od: 3,
            budget: 0.0,
            vot_scale: 1.0,
            seed: None,
            solver: SolverConfig::default(),
            out: PathBuf::from("out"),
            sweep: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::invalid(Stage::Load, format!("config: {e}")))
    }

    /// Reads a config; relative input paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::invalid(Stage::Load, format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.demand, &mut cfg.orgs].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn input(&self) -> Result<InputSpec> {
        match (&self.network, &self.demand, &self.orgs, &self.synth) {
            (Some(network), Some(demand), Some(orgs), None) => Ok(InputSpec::Files {
                network: network.clone(),
                demand: demand.clone(),
                orgs: orgs.clone(),
                horizon: Horizon::new(
                    self.horizon.num_periods,
                    self.horizon.period_length_min,
                    self.horizon.analysis_periods,
                )
                .map_err(|e| HarnessError::stage(Stage::Load, e))?,
                routes_per_od: self.routes_per_od,
            }),
            (None, None, None, Some(spec)) => {
                let mut spec = spec.clone();
                if let Some(seed) = self.seed {
                    spec.seed = seed;
                }
                Ok(InputSpec::Synth(spec))
            }
            _ => Err(HarnessError::invalid(
                Stage::Load,
                "give either network, demand and orgs files or a [synth] section",
            )),
        }
    }

    pub fn run_settings(&self) -> Result<RunSettings> {
        let s = &self.solver;
        let solver = SolverParams {
            rho: s.rho,
            lambda_tilde: s.lambda_tilde,
            max_iters: s.iters,
            tol: s.tol,
            anneal: s.anneal_lambda.map(|lambda_tilde| AnnealPhase {
                lambda_tilde,
                iters: s.anneal_iters,
            }),
            adaptive_rho: s.adaptive_rho,
            relaxation: s.relaxation,
        };
        solver.validate().map_err(|e| HarnessError::stage(Stage::Load, e))?;
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(HarnessError::invalid(Stage::Load, format!("budget must be nonnegative, got {}", self.budget)));
        }
        if !(self.vot_scale >= 0.0 && self.vot_scale.is_finite()) {
            return Err(HarnessError::invalid(Stage::Load, format!("vot_scale must be nonnegative, got {}", self.vot_scale)));
        }
        if !(s.projection_time_limit_s > 0.0) {
            return Err(HarnessError::invalid(Stage::Load, "projection_time_limit_s must be positive"));
        }
        Ok(RunSettings {
            budget: self.budget,
            vot_scale: self.vot_scale,
            solver,
            bnb: BnbParams {
                time_limit: Some(Duration::from_secs_f64(s.projection_time_limit_s)),
                ..BnbParams::default()
            },
        })
    }
}
