//! Whole-contract simulation: the operator prices every slot, users review
//! their thresholds, trade, consume, and move to the next slot.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{DemandModel, DiscreteDemand};
use crate::error::SimError;
use crate::market::{allocate, build_curves, clear, Allocation, ClearingLogRow, ClearingResult, MarketSnapshot, Participant};
use crate::model::{
    advance_slot, apply_consumption, apply_trade, DataPlan, PriceQuote, RolloverMode, TradeAction, UserState,
    VolumeGrid, MB_PER_GB,
};
use crate::policy::{solve, PriceBelief, PriceGrid, Solution, SolverConfig, UtilityFunction};

/// How users' demand models are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// One model per user, with optional per-user utility multipliers.
    Explicit {
        models: Vec<DemandModel>,
        #[serde(default)]
        utility_scales: Vec<f64>,
    },
    /// `profiles` models jittered around the anchors (cycled), each user
    /// assigned to one profile uniformly at random. Means and deviations are
    /// scaled by independent factors in `[e^-spread, e^spread]`; each user's
    /// utility is multiplied by a factor in `[e^-utility_spread, e^utility_spread]`.
    Pool {
        users: usize,
        profiles: usize,
        anchors: Vec<DemandModel>,
        spread: f64,
        #[serde(default)]
        utility_spread: f64,
    },
}

impl PopulationSpec {
    pub fn default_anchors() -> Vec<DemandModel> {
        vec![DemandModel::new(15.2, 11.5).expect("valid"), DemandModel::new(70.2, 46.1).expect("valid")]
    }

    pub fn pool(users: usize) -> Self {
        PopulationSpec::Pool {
            users,
            profiles: 20,
            anchors: Self::default_anchors(),
            spread: 0.25,
            utility_spread: std::f64::consts::LN_2,
        }
    }

    pub fn users(&self) -> usize {
        match self {
            PopulationSpec::Explicit { models, .. } => models.len(),
            PopulationSpec::Pool { users, .. } => *users,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match self {
            PopulationSpec::Explicit { models, utility_scales } => {
                if models.is_empty() {
                    return Err(SimError::InvalidConfig("population is empty".into()));
                }
                if !utility_scales.is_empty() && utility_scales.len() != models.len() {
                    return Err(SimError::InvalidConfig("need one utility scale per user".into()));
                }
                if utility_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(SimError::InvalidConfig("utility scales must be finite and non-negative".into()));
                }
                Ok(())
            }
            PopulationSpec::Pool { users, profiles, anchors, spread, utility_spread } => {
                if *users == 0 || *profiles == 0 || anchors.is_empty() {
                    return Err(SimError::InvalidConfig("population needs users, profiles and anchors".into()));
                }
                for s in [spread, utility_spread] {
                    if !(*s >= 0.0 && s.is_finite()) {
                        return Err(SimError::InvalidConfig(format!("spread {s}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Distinct profiles and each user's profile index.
    pub fn materialize(&self, seed: u64) -> Result<Population, SimError> {
        self.validate()?;
        match self {
            PopulationSpec::Explicit { models, utility_scales } => {
                let mut profiles: Vec<DemandModel> = Vec::new();
                let assignment = models
                    .iter()
                    .map(|m| match profiles.iter().position(|p| p == m) {
                        Some(i) => i,
                        None => {
                            profiles.push(*m);
                            profiles.len() - 1
                        }
                    })
                    .collect();
                let utility_scale =
                    if utility_scales.is_empty() { vec![1.0; models.len()] } else { utility_scales.clone() };
                Ok(Population { profiles, assignment, utility_scale })
            }
            PopulationSpec::Pool { users, profiles, anchors, spread, utility_spread } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let factor = |rng: &mut ChaCha8Rng, s: f64| (s * (2.0 * rng.random::<f64>() - 1.0)).exp();
                let jitter = |rng: &mut ChaCha8Rng| factor(rng, *spread);
                let models = (0..*profiles)
                    .map(|j| {
                        let a = anchors[j % anchors.len()];
                        DemandModel::new(a.mean * jitter(&mut rng), a.std_dev * jitter(&mut rng))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let assignment = (0..*users).map(|_| rng.random_range(0..*profiles)).collect();
                let utility_scale = (0..*users).map(|_| factor(&mut rng, *utility_spread)).collect();
                Ok(Population { profiles: models, assignment, utility_scale })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub profiles: Vec<DemandModel>,
    pub assignment: Vec<usize>,
    /// Multiplier on the base utility, per user.
    pub utility_scale: Vec<f64>,
}

impl Population {
    pub fn users(&self) -> usize {
        self.assignment.len()
    }
}

/// Where users' price beliefs come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeliefScheme {
    /// Point mass at a fixed quote for the whole contract.
    Fixed { quote: PriceQuote },
    /// Starts at `initial`; at each later month start the belief becomes the
    /// empirical distribution of the previous month's executed quotes, a
    /// closed slot counting as `(0, overage price)`.
    Trailing { initial: PriceQuote },
}

impl BeliefScheme {
    pub fn initial_quote(&self) -> PriceQuote {
        match *self {
            BeliefScheme::Fixed { quote } => quote,
            BeliefScheme::Trailing { initial } => initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub plan: DataPlan,
    pub population: PopulationSpec,
    pub utility: UtilityFunction,
    pub discount: f64,
    pub rollover: RolloverMode,
    pub belief: BeliefScheme,
    pub seed: u64,
    pub grid: VolumeGrid,
    pub price_grid: Option<PriceGrid>,
    /// Largest isotonic correction (MB) accepted on the market curves.
    pub curve_tolerance: f64,
}

impl ScenarioConfig {
    /// Plan and market of the evaluation scenario: 1 GB cap, 100 HKD fee,
    /// 30 HKD/GB overage, six 30-day months, 500 users.
    pub fn evaluation(seed: u64) -> Self {
        Self {
            plan: DataPlan::new(1000.0, 100.0, 0.03, 6, 30).expect("valid"),
            population: PopulationSpec::pool(500),
            utility: UtilityFunction::default(),
            discount: 0.98,
            rollover: RolloverMode::Enabled,
            belief: BeliefScheme::Trailing { initial: PriceQuote::per_gb(10.0, 15.0).expect("valid") },
            seed,
            grid: VolumeGrid::default(),
            price_grid: None,
            curve_tolerance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.plan.validate()?;
        self.population.validate()?;
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(SimError::InvalidConfig(format!("discount {} outside (0, 1)", self.discount)));
        }
        if !(self.curve_tolerance >= 0.0) {
            return Err(SimError::InvalidConfig("curve tolerance must be non-negative".into()));
        }
        let q = self.belief.initial_quote();
        PriceQuote::new(q.sell, q.buy)?;
        Ok(())
    }

    pub fn with_rollover(&self, rollover: RolloverMode) -> Self {
        Self { rollover, ..self.clone() }
    }

    fn solver_config(&self, from_slot: u32) -> SolverConfig {
        SolverConfig {
            grid: self.grid,
            price_grid: self.price_grid,
            discount: self.discount,
            rollover: self.rollover,
            from_slot,
            ..SolverConfig::default()
        }
    }
}

/// Per-user demand in grid units for every slot, `[user][t - 1]`. Each user
/// has an independent stream, so draws do not depend on the rollover mode,
/// the roster, or thread scheduling.
pub fn demand_draws(population: &Population, plan: &DataPlan, grid: VolumeGrid, seed: u64) -> Vec<Vec<u32>> {
    let slots = plan.total_slots() as usize;
    population
        .assignment
        .par_iter()
        .enumerate()
        .map(|(n, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64 + 1);
            let model = population.profiles[p];
            (0..slots).map(|_| grid.snap_index(model.sample(&mut rng)) as u32).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub t: u32,
    pub m: u32,
    pub k: u32,
    pub open: bool,
    /// Executed prices (HKD/MB); `None` when the market stayed closed.
    pub sell_price: Option<f64>,
    pub buy_price: Option<f64>,
    /// Executed volume (MB).
    pub volume: f64,
    /// Revenue-maximizing quantity on the curves before snapping (MB).
    pub clearing_theta: f64,
    pub desired_buy: f64,
    pub desired_sell: f64,
    pub revenue_trade: f64,
    pub revenue_overage: f64,
    /// Mean realized payoff of subscribers in this slot, including the fee at
    /// month starts.
    pub mean_payoff: f64,
    pub n_buyers: usize,
    pub n_sellers: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorMonth {
    pub trading: f64,
    pub overage: f64,
    pub subscriptions: f64,
}

impl OperatorMonth {
    pub fn total(&self) -> f64 {
        self.trading + self.overage + self.subscriptions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub plan: DataPlan,
    pub seed: u64,
    pub rollover: RolloverMode,
    pub users: usize,
    /// Subscribing users, ascending.
    pub roster: Vec<usize>,
    pub slots: Vec<SlotMetrics>,
    /// Realized payoff `[user][month]`; zero for non-subscribers.
    pub user_month_payoff: Vec<Vec<f64>>,
    pub operator: Vec<OperatorMonth>,
    /// Solver rows that needed the exhaustive scan.
    pub scanned_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub users: usize,
    pub subscribers: usize,
    /// Over all users, non-subscribers counting as zero (HKD/month).
    pub mean_monthly_payoff: f64,
    pub mean_monthly_payoff_subscribers: f64,
    /// Operator revenue per month (HKD).
    pub monthly_revenue: f64,
    pub monthly_trading_revenue: f64,
    pub monthly_overage_revenue: f64,
    pub monthly_subscription_revenue: f64,
    /// Means over open slots (HKD/GB).
    pub mean_buy_price: Option<f64>,
    pub mean_sell_price: Option<f64>,
    pub open_slots: usize,
    pub traded_gb: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EpisodeMetrics {
    pub fn summary(&self) -> EpisodeSummary {
        let months = self.plan.months as f64;
        let total_payoff: f64 = self.user_month_payoff.iter().flatten().sum();
        let op = |f: fn(&OperatorMonth) -> f64| self.operator.iter().map(f).sum::<f64>() / months;
        let open = || self.slots.iter().filter(|s| s.open);
        EpisodeSummary {
            users: self.users,
            subscribers: self.roster.len(),
            mean_monthly_payoff: total_payoff / (self.users as f64 * months),
            mean_monthly_payoff_subscribers: if self.roster.is_empty() {
                0.0
            } else {
                total_payoff / (self.roster.len() as f64 * months)
            },
            monthly_revenue: op(OperatorMonth::total),
            monthly_trading_revenue: op(|o| o.trading),
            monthly_overage_revenue: op(|o| o.overage),
            monthly_subscription_revenue: op(|o| o.subscriptions),
            mean_buy_price: mean(open().filter_map(|s| s.buy_price)).map(|p| p * MB_PER_GB),
            mean_sell_price: mean(open().filter_map(|s| s.sell_price)).map(|p| p * MB_PER_GB),
            open_slots: open().count(),
            traded_gb: self.slots.iter().map(|s| s.volume).sum::<f64>() / MB_PER_GB,
        }
    }

    pub fn clearing_log(&self) -> Vec<ClearingLogRow> {
        self.slots
            .iter()
            .map(|s| ClearingLogRow {
                t: s.t,
                p_s: s.sell_price.unwrap_or(0.0) * MB_PER_GB,
                p_b: s.buy_price.unwrap_or(0.0) * MB_PER_GB,
                theta: s.volume / MB_PER_GB,
                revenue: s.revenue_trade,
                n_buyers: s.n_buyers,
                n_sellers: s.n_sellers,
            })
            .collect()
    }
}

/// One row of the per-run metrics CSV. Prices in HKD/GB, volume in GB.
#[derive(Debug, Clone, Copy, Serialize)]
struct MetricsRow {
    slot: usize,
    t: u32,
    m: u32,
    k: u32,
    p_s: Option<f64>,
    p_b: Option<f64>,
    theta: f64,
    revenue_trade: f64,
    revenue_overage: f64,
    mean_payoff: f64,
}

pub fn write_metrics_csv<W: Write>(writer: W, metrics: &EpisodeMetrics) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for (slot, s) in metrics.slots.iter().enumerate() {
        w.serialize(MetricsRow {
            slot,
            t: s.t,
            m: s.m,
            k: s.k,
            p_s: s.sell_price.map(|p| p * MB_PER_GB),
            p_b: s.buy_price.map(|p| p * MB_PER_GB),
            theta: s.volume / MB_PER_GB,
            revenue_trade: s.revenue_trade,
            revenue_overage: s.revenue_overage,
            mean_payoff: s.mean_payoff,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn solve_profiles(
    config: &ScenarioConfig,
    profiles: &[DemandModel],
    belief: &PriceBelief,
    from_slot: u32,
) -> Result<Vec<Arc<Solution>>, SimError> {
    let solver = config.solver_config(from_slot);
    profiles
        .par_iter()
        .map(|m| Ok(Arc::new(solve(&config.plan, m, &config.utility, belief, &solver)?)))
        .collect()
}

/// Each user's expected contract payoff. Utility does not affect decisions,
/// so scaling it only adds `(scale - 1)` times the discounted expected utility
/// stream to the profile's value.
pub fn expected_payoffs(
    config: &ScenarioConfig,
    population: &Population,
    solutions: &[Arc<Solution>],
) -> Result<Vec<f64>, SimError> {
    let plan = &config.plan;
    let annuity: f64 = (0..plan.total_slots() as i32).map(|t| config.discount.powi(t)).sum();
    let per_profile = solutions
        .iter()
        .zip(&population.profiles)
        .map(|(s, m)| {
            let utility = DiscreteDemand::from_model(m, config.grid).expectation(|x| config.utility.eval(x));
            Ok((s.expected_contract_payoff(plan)?, utility * annuity))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(population
        .assignment
        .iter()
        .zip(&population.utility_scale)
        .map(|(&p, &scale)| per_profile[p].0 + (scale - 1.0) * per_profile[p].1)
        .collect())
}

/// Users whose expected contract payoff is non-negative under the initial
/// belief, ascending.
pub fn subscription_filter(
    config: &ScenarioConfig,
    population: &Population,
    solutions: &[Arc<Solution>],
) -> Result<Vec<usize>, SimError> {
    let payoffs = expected_payoffs(config, population, solutions)?;
    Ok((0..population.users()).filter(|&n| payoffs[n] >= 0.0).collect())
}

/// Runs one contract for the configured rollover mode.
pub fn run(config: &ScenarioConfig) -> Result<EpisodeMetrics, SimError> {
    config.validate()?;
    let population = config.population.materialize(config.seed)?;
    let draws = demand_draws(&population, &config.plan, config.grid, config.seed);
    run_with(config, &population, &draws)
}

/// Runs the no-rollover and rollover arms on the same population and demand
/// draws. Returns `(without, with)`.
pub fn run_paired(config: &ScenarioConfig) -> Result<(EpisodeMetrics, EpisodeMetrics), SimError> {
    config.validate()?;
    let population = config.population.materialize(config.seed)?;
    let draws = demand_draws(&population, &config.plan, config.grid, config.seed);
    let without = run_with(&config.with_rollover(RolloverMode::Disabled), &population, &draws)?;
    let with = run_with(&config.with_rollover(RolloverMode::Enabled), &population, &draws)?;
    Ok((without, with))
}

struct UserStep {
    state: UserState,
    payoff: f64,
    overage_mb: f64,
}

/// Runs a contract on a given population and demand draws (grid units,
/// `[user][t - 1]`).
pub fn run_with(config: &ScenarioConfig, population: &Population, draws: &[Vec<u32>]) -> Result<EpisodeMetrics, SimError> {
    config.validate()?;
    let plan = config.plan;
    let grid = config.grid;
    let users = population.users();
    if population.utility_scale.len() != users || draws.len() != users || draws.iter().any(|d| d.len() != plan.total_slots() as usize) {
        return Err(SimError::ShapeMismatch("demand draws do not match the population and plan".into()));
    }
    let initial = PriceBelief::point_mass(config.belief.initial_quote());
    let mut solutions = solve_profiles(config, &population.profiles, &initial, 1)?;
    let mut scanned_rows: usize = solutions.iter().map(|s| s.scanned_rows).sum();
    let roster = subscription_filter(config, population, &solutions)?;
    let pi = plan.overage_price;
    let closed_quote = PriceQuote::new(0.0, pi)?;

    let mut states: Vec<UserState> = vec![UserState::contract_start(&plan); users];
    let mut payoff = vec![vec![0.0; plan.months as usize]; users];
    let mut operator = vec![OperatorMonth::default(); plan.months as usize];
    let mut slots = Vec::with_capacity(plan.total_slots() as usize);
    let mut month_quotes: Vec<PriceQuote> = Vec::new();

    for slot in plan.slots() {
        let t = slot.flat();
        let m = slot.month() as usize - 1;
        if slot.slot() == 1 && slot.month() > 1 {
            if let BeliefScheme::Trailing { .. } = config.belief {
                let belief = PriceBelief::empirical(month_quotes.drain(..))?;
                solutions = solve_profiles(config, &population.profiles, &belief, t)?;
                scanned_rows += solutions.iter().map(|s| s.scanned_rows).sum::<usize>();
            }
        }
        let fee = if slot.slot() == 1 { plan.subscription_fee } else { 0.0 };
        operator[m].subscriptions += fee * roster.len() as f64;

        let (clearing, allocation) = if roster.is_empty() {
            (ClearingResult::CLOSED, None)
        } else {
            let participants = roster
                .iter()
                .map(|&n| Participant { state: states[n], policy: &solutions[population.assignment[n]].policy })
                .collect();
            let snapshot = MarketSnapshot::new(slot, participants)?;
            let curves = build_curves(&snapshot, config.curve_tolerance)?;
            let clearing = clear(&curves);
            let allocation = allocate(&snapshot, &clearing)?;
            check_allocation(t, &allocation)?;
            (clearing, Some(allocation))
        };

        let steps: Vec<UserStep> = roster
            .par_iter()
            .enumerate()
            .map(|(r, &n)| {
                let (bought, sold, buy_ticks, sell_ticks) = match &allocation {
                    Some(a) => (
                        a.bought_units[r],
                        a.sold_units[r],
                        (a.bought_units[r] * a.buy_index) as f64,
                        (a.sold_units[r] * a.sell_index) as f64,
                    ),
                    None => (0, 0, 0.0, 0.0),
                };
                let tick = allocation.as_ref().map_or(0.0, |a| a.tick);
                let action = TradeAction(grid.volume(bought) - grid.volume(sold));
                let traded = apply_trade(states[n], action)?;
                let demand = grid.volume(draws[n][t as usize - 1] as usize);
                let outcome = apply_consumption(traded, demand)?;
                let payoff = population.utility_scale[n] * config.utility.eval(demand) - pi * outcome.overage + (sell_ticks - buy_ticks) * tick - fee;
                let state = if slot.is_contract_end() {
                    UserState { short_term: outcome.short_term, long_term: outcome.long_term }
                } else {
                    advance_slot(outcome, slot, &plan, config.rollover)?
                };
                Ok(UserStep { state: resnap(state, grid, t)?, payoff, overage_mb: outcome.overage })
            })
            .collect::<Result<_, SimError>>()?;

        let mut overage_revenue = 0.0;
        let mut slot_payoff = 0.0;
        for (&n, step) in roster.iter().zip(&steps) {
            states[n] = step.state;
            payoff[n][m] += step.payoff;
            overage_revenue += pi * step.overage_mb;
            slot_payoff += step.payoff;
        }
        let revenue_trade = allocation.as_ref().map_or(0.0, Allocation::revenue);
        operator[m].trading += revenue_trade;
        operator[m].overage += overage_revenue;

        let open = allocation.as_ref().is_some_and(|a| clearing.open && a.volume_units > 0);
        month_quotes.push(match &allocation {
            Some(a) if open => PriceQuote::new(a.sell_price, a.buy_price)?,
            _ => closed_quote,
        });
        slots.push(SlotMetrics {
            t,
            m: slot.month(),
            k: slot.slot(),
            open,
            sell_price: allocation.as_ref().filter(|_| open).map(|a| a.sell_price),
            buy_price: allocation.as_ref().filter(|_| open).map(|a| a.buy_price),
            volume: allocation.as_ref().map_or(0.0, |a| grid.volume(a.volume_units)),
            clearing_theta: clearing.theta,
            desired_buy: allocation.as_ref().map_or(0.0, |a| grid.volume(a.desired_buy_units)),
            desired_sell: allocation.as_ref().map_or(0.0, |a| grid.volume(a.desired_sell_units)),
            revenue_trade,
            revenue_overage: overage_revenue,
            mean_payoff: if roster.is_empty() { 0.0 } else { slot_payoff / roster.len() as f64 },
            n_buyers: allocation.as_ref().map_or(0, Allocation::n_buyers),
            n_sellers: allocation.as_ref().map_or(0, Allocation::n_sellers),
        });
    }

    Ok(EpisodeMetrics {
        plan,
        seed: config.seed,
        rollover: config.rollover,
        users,
        roster,
        slots,
        user_month_payoff: payoff,
        operator,
        scanned_rows,
    })
}

/// Keeps states exactly on the grid; drift beyond rounding is an invariant failure.
fn resnap(state: UserState, grid: VolumeGrid, t: u32) -> Result<UserState, SimError> {
    let snap = |v: f64| {
        grid.index_of(v)
            .map(|i| grid.volume(i))
            .map_err(|_| SimError::Invariant { slot: t, what: format!("volume {v} MB left the grid") })
    };
    Ok(UserState { short_term: snap(state.short_term)?, long_term: snap(state.long_term)? })
}

/// Data and money conservation of one slot's trades.
fn check_allocation(t: u32, a: &Allocation) -> Result<(), SimError> {
    let bought: usize = a.bought_units.iter().sum();
    let sold: usize = a.sold_units.iter().sum();
    if bought != a.volume_units || sold != a.volume_units {
        return Err(SimError::Invariant {
            slot: t,
            what: format!("bought {bought} and sold {sold} units, executed {}", a.volume_units),
        });
    }
    if a.sell_index > a.buy_index {
        return Err(SimError::Invariant { slot: t, what: "sell price above buy price".into() });
    }
    if a.buyer_spend_ticks() != a.seller_income_ticks() + a.margin_ticks() {
        return Err(SimError::Invariant {
            slot: t,
            what: format!(
                "buyers paid {} ticks, sellers got {} and the operator {}",
                a.buyer_spend_ticks(),
                a.seller_income_ticks(),
                a.margin_ticks()
            ),
        });
    }
    Ok(())
}

/// Mean executed price at slot-of-month `k` (HKD/GB) over open slots.
fn slot_of_month_prices(metrics: &EpisodeMetrics, k: u32) -> (Option<f64>, Option<f64>) {
    let at = || metrics.slots.iter().filter(move |s| s.k == k && s.open);
    (
        mean(at().filter_map(|s| s.buy_price)).map(|p| p * MB_PER_GB),
        mean(at().filter_map(|s| s.sell_price)).map(|p| p * MB_PER_GB),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotOfMonthDelta {
    pub k: u32,
    pub buy_price_delta_pct: Option<f64>,
    pub sell_price_delta_pct: Option<f64>,
}

/// Relative change of `treatment` against `baseline`, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: EpisodeSummary,
    pub treatment: EpisodeSummary,
    pub payoff_delta_pct: Option<f64>,
    pub revenue_delta_pct: Option<f64>,
    pub trading_revenue_delta_pct: Option<f64>,
    pub buy_price_delta_pct: Option<f64>,
    pub sell_price_delta_pct: Option<f64>,
    pub roster_delta_pct: Option<f64>,
    pub per_slot_of_month: Vec<SlotOfMonthDelta>,
}

/// `100 (b - a) / |a|`; zero when both are zero, `None` when only `a` is.
pub fn percent_delta(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 {
        return (b == 0.0).then_some(0.0);
    }
    Some(100.0 * (b - a) / a.abs())
}

fn option_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    percent_delta(a?, b?)
}

pub fn compare(baseline: &EpisodeMetrics, treatment: &EpisodeMetrics) -> Result<ComparisonReport, SimError> {
    if baseline.users != treatment.users
        || baseline.plan.months != treatment.plan.months
        || baseline.plan.slots_per_month != treatment.plan.slots_per_month
        || baseline.slots.len() != treatment.slots.len()
    {
        return Err(SimError::ShapeMismatch("runs differ in users, months or slots".into()));
    }
    if baseline.seed != treatment.seed {
        return Err(SimError::ShapeMismatch(format!("seeds differ: {} vs {}", baseline.seed, treatment.seed)));
    }
    let (a, b) = (baseline.summary(), treatment.summary());
    let per_slot_of_month = (1..=baseline.plan.slots_per_month)
        .map(|k| {
            let (ab, asell) = slot_of_month_prices(baseline, k);
            let (bb, bsell) = slot_of_month_prices(treatment, k);
            SlotOfMonthDelta { k, buy_price_delta_pct: option_delta(ab, bb), sell_price_delta_pct: option_delta(asell, bsell) }
        })
        .collect();
    Ok(ComparisonReport {
        payoff_delta_pct: percent_delta(a.mean_monthly_payoff, b.mean_monthly_payoff),
        revenue_delta_pct: percent_delta(a.monthly_revenue, b.monthly_revenue),
        trading_revenue_delta_pct: percent_delta(a.monthly_trading_revenue, b.monthly_trading_revenue),
        buy_price_delta_pct: option_delta(a.mean_buy_price, b.mean_buy_price),
        sell_price_delta_pct: option_delta(a.mean_sell_price, b.mean_sell_price),
        roster_delta_pct: percent_delta(a.subscribers as f64, b.subscribers as f64),
        per_slot_of_month,
        baseline: a,
        treatment: b,
    })
}
