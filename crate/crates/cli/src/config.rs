//! TOML scenario configuration. Volumes are given in GB (daily demand in MB),
//! prices in HKD/GB; everything is converted to MB internally.

use std::path::{Path, PathBuf};

use rollover_core::demand::DemandModel;
use rollover_core::model::{DataPlan, PriceQuote, RolloverMode, VolumeGrid, MB_PER_GB};
use rollover_core::policy::{PriceGrid, UtilityFunction};
use rollover_core::sim::{BeliefScheme, PopulationSpec, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub plan: PlanConfig,
    pub population: PopulationConfig,
    pub utility: UtilityFunction,
    pub solver: SolverSection,
    pub belief: BeliefConfig,
    pub market: MarketConfig,
    pub thresholds: ThresholdsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            plan: PlanConfig::default(),
            population: PopulationConfig::default(),
            utility: UtilityFunction::default(),
            solver: SolverSection::default(),
            belief: BeliefConfig::default(),
            market: MarketConfig::default(),
            thresholds: ThresholdsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub cap_gb: f64,
    pub subscription_fee: f64,
    pub overage_price_per_gb: f64,
    pub months: u32,
    pub slots_per_month: u32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { cap_gb: 1.0, subscription_fee: 100.0, overage_price_per_gb: 30.0, months: 6, slots_per_month: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mean_mb: f64,
    pub sd_mb: f64,
}

impl ModelConfig {
    fn model(&self) -> Result<DemandModel, CliError> {
        DemandModel::new(self.mean_mb, self.sd_mb).map_err(|e| CliError::Input(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub users: usize,
    pub profiles: usize,
    pub spread: f64,
    pub utility_spread: f64,
    pub anchors: Vec<ModelConfig>,
    /// Output of `fit`; when set, every fitted user becomes one simulated user
    /// and the pool settings are ignored.
    pub models_file: Option<PathBuf>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            users: 500,
            profiles: 20,
            spread: 0.25,
            utility_spread: std::f64::consts::LN_2,
            anchors: vec![ModelConfig { mean_mb: 15.2, sd_mb: 11.5 }, ModelConfig { mean_mb: 70.2, sd_mb: 46.1 }],
            models_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub discount: f64,
    pub grid_mb: f64,
    pub price_grid_per_gb: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { discount: 0.98, grid_mb: VolumeGrid::DEFAULT_STEP_MB, price_grid_per_gb: PriceGrid::DEFAULT_SPACING_PER_GB }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Fixed,
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeliefConfig {
    pub scheme: Scheme,
    pub sell_per_gb: f64,
    pub buy_per_gb: f64,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Trailing, sell_per_gb: 10.0, buy_per_gb: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub curve_tolerance_mb: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self { curve_tolerance_mb: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdsConfig {
    pub discounts: Vec<f64>,
    pub users: Vec<ModelConfig>,
    pub q_step_gb: f64,
}

impl Default for ThresholdsConfig {
    fn default() -> Self {
        Self {
            discounts: vec![0.92, 0.95, 0.98],
            users: PopulationConfig::default().anchors,
            q_step_gb: 0.1,
        }
    }
}

/// One entry of the `fit` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedUser {
    pub user_id: String,
    pub days: usize,
    pub mean_mb: f64,
    pub sd_mb: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub ks_reject: bool,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if let Some(models) = &config.population.models_file {
            if models.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.population.models_file = Some(base.join(models));
            }
        }
        Ok(config)
    }

    pub fn plan(&self) -> Result<DataPlan, CliError> {
        let p = &self.plan;
        DataPlan::new(
            p.cap_gb * MB_PER_GB,
            p.subscription_fee,
            p.overage_price_per_gb / MB_PER_GB,
            p.months,
            p.slots_per_month,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn grid(&self) -> Result<VolumeGrid, CliError> {
        VolumeGrid::new(self.solver.grid_mb).map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn price_grid(&self) -> Result<PriceGrid, CliError> {
        let plan = self.plan()?;
        PriceGrid::up_to(plan.overage_price, self.solver.price_grid_per_gb / MB_PER_GB)
            .map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn quote(&self) -> Result<PriceQuote, CliError> {
        PriceQuote::per_gb(self.belief.sell_per_gb, self.belief.buy_per_gb).map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn population(&self) -> Result<PopulationSpec, CliError> {
        let pop = &self.population;
        if let Some(path) = &pop.models_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let fitted: Vec<FittedUser> =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let models = fitted
                .iter()
                .map(|f| ModelConfig { mean_mb: f.mean_mb, sd_mb: f.sd_mb }.model())
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(PopulationSpec::Explicit { models, utility_scales: Vec::new() });
        }
        Ok(PopulationSpec::Pool {
            users: pop.users,
            profiles: pop.profiles,
            anchors: pop.anchors.iter().map(ModelConfig::model).collect::<Result<_, _>>()?,
            spread: pop.spread,
            utility_spread: pop.utility_spread,
        })
    }

    pub fn threshold_users(&self) -> Result<Vec<DemandModel>, CliError> {
        self.thresholds.users.iter().map(ModelConfig::model).collect()
    }

    pub fn scenario(&self, rollover: RolloverMode) -> Result<ScenarioConfig, CliError> {
        let quote = self.quote()?;
        Ok(ScenarioConfig {
            plan: self.plan()?,
            population: self.population()?,
            utility: self.utility,
            discount: self.solver.discount,
            rollover,
            belief: match self.belief.scheme {
                Scheme::Fixed => BeliefScheme::Fixed { quote },
                Scheme::Trailing => BeliefScheme::Trailing { initial: quote },
            },
            seed: self.seed,
            grid: self.grid()?,
            price_grid: Some(self.price_grid()?),
            curve_tolerance: self.market.curve_tolerance_mb,
        })
    }
}
