//! Optimal trading policy of a single user.
//!
//! The user's problem is solved by backward induction on the volume grid. With
//! `z` the total volume kept after trading, the post-trade split is
//! `q_bar = min(q, z)`, `e_bar = z - q_bar`, so the slot objective separates into
//! a cash term that is linear on each side of `e + q` and a concave
//! continuation `G_t(z, q)`. The maximizer is therefore a target interval:
//! buy up to `L`, sell down to `U`, hold in between.

mod cache;
pub mod search;
mod solver;
mod table;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, load_or_solve, CachedSolution};
pub use solver::{solve, solve_discrete, Solution, SolverConfig};
pub use table::{PolicyTable, SlotThresholds, SlotValues, ValueTable};

use crate::demand::{DemandModel, DiscreteDemand};
use crate::error::PolicyError;
use crate::model::{DataPlan, PriceQuote, SlotIndex, TradeAction, UserState, MB_PER_GB};

/// Per-slot utility of consuming `x` MB, in HKD. Only enters the value, never
/// the decision, since consumption is exogenous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityFunction {
    /// `scale * ln(1 + x)`
    Log { scale: f64 },
    /// `scale * x^exponent`, `0 < exponent <= 1`
    Power { scale: f64, exponent: f64 },
}

impl Default for UtilityFunction {
    fn default() -> Self {
        UtilityFunction::Log { scale: 1.5 }
    }
}

impl UtilityFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match *self {
            UtilityFunction::Log { scale } => scale * x.ln_1p(),
            UtilityFunction::Power { scale, exponent } => scale * x.powf(exponent),
        }
    }

    /// Checks monotonicity and concavity by sampled differences on `[0, upto]`.
    pub fn validate(&self, upto: f64) -> Result<(), PolicyError> {
        let params_ok = match *self {
            UtilityFunction::Log { scale } => scale >= 0.0 && scale.is_finite(),
            UtilityFunction::Power { scale, exponent } => {
                scale >= 0.0 && scale.is_finite() && exponent > 0.0 && exponent <= 1.0
            }
        };
        if !params_ok {
            return Err(PolicyError::InvalidInput(format!("utility parameters out of range: {self:?}")));
        }
        let n = 256;
        let h = upto.max(1.0) / n as f64;
        let v: Vec<f64> = (0..=n).map(|i| self.eval(i as f64 * h)).collect();
        let tol = 1e-9 * v[n].abs().max(1.0);
        if v.windows(2).any(|w| w[1] < w[0] - tol) || v.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] > tol) {
            return Err(PolicyError::InvalidInput(format!("utility is not increasing and concave: {self:?}")));
        }
        Ok(())
    }
}

/// Stationary belief over next-slot prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBelief {
    scenarios: Vec<(PriceQuote, f64)>,
}

impl PriceBelief {
    pub fn new(scenarios: Vec<(PriceQuote, f64)>) -> Result<Self, PolicyError> {
        if scenarios.is_empty() {
            return Err(PolicyError::InvalidInput("price belief has no scenarios".into()));
        }
        for (q, p) in &scenarios {
            PriceQuote::new(q.sell, q.buy)?;
            if !(*p >= 0.0) {
                return Err(PolicyError::InvalidInput(format!("negative scenario probability {p}")));
            }
        }
        let total: f64 = scenarios.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidInput(format!("scenario probabilities sum to {total}")));
        }
        Ok(Self { scenarios })
    }

    pub fn point_mass(quote: PriceQuote) -> Self {
        Self { scenarios: vec![(quote, 1.0)] }
    }

    /// Empirical distribution of observed quotes (duplicates merged, in
    /// first-seen order).
    pub fn empirical<I: IntoIterator<Item = PriceQuote>>(observed: I) -> Result<Self, PolicyError> {
        let mut counts: Vec<(PriceQuote, usize)> = Vec::new();
        let mut n = 0usize;
        for q in observed {
            n += 1;
            match counts.iter_mut().find(|(seen, _)| *seen == q) {
                Some((_, c)) => *c += 1,
                None => counts.push((q, 1)),
            }
        }
        if n == 0 {
            return Err(PolicyError::InvalidInput("no observed prices".into()));
        }
        Self::new(counts.into_iter().map(|(q, c)| (q, c as f64 / n as f64)).collect())
    }

    pub fn scenarios(&self) -> &[(PriceQuote, f64)] {
        &self.scenarios
    }
}

/// Prices `0, spacing, 2*spacing, ...` (HKD per MB) at which thresholds are tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    spacing: f64,
    len: usize,
}

impl PriceGrid {
    pub const DEFAULT_SPACING_PER_GB: f64 = 0.5;

    pub fn new(spacing: f64, len: usize) -> Result<Self, PolicyError> {
        if !(spacing > 0.0 && spacing.is_finite()) || len == 0 || len > u16::MAX as usize {
            return Err(PolicyError::InvalidInput(format!("price grid spacing {spacing}, len {len}")));
        }
        Ok(Self { spacing, len })
    }

    /// Grid covering `[0, max_price]`.
    pub fn up_to(max_price: f64, spacing: f64) -> Result<Self, PolicyError> {
        if !(max_price >= 0.0) {
            return Err(PolicyError::InvalidInput(format!("max price {max_price}")));
        }
        Self::new(spacing, (max_price / spacing + 1e-9).floor() as usize + 1)
    }

    /// Default grid of the plan: 0.5 HKD/GB spacing over `[0, overage price]`.
    pub fn for_plan(plan: &DataPlan) -> Self {
        Self::up_to(plan.overage_price, Self::DEFAULT_SPACING_PER_GB / MB_PER_GB).expect("valid plan")
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn price(&self, index: usize) -> f64 {
        index as f64 * self.spacing
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.price(i))
    }

    /// Nearest grid index, clamped to the grid.
    pub fn snap(&self, price: f64) -> usize {
        ((price.max(0.0) / self.spacing).round() as usize).min(self.len - 1)
    }
}

/// `J(z, p) = p^s z^+ - p^b (-z)^+` for a net sale of `z` MB (negative buys).
pub fn trade_cashflow(z: f64, prices: PriceQuote) -> f64 {
    prices.sell * z.max(0.0) - prices.buy * (-z).max(0.0)
}

/// `W(z) = E[u(x)] - pi * E[(x - z)^+]` under the continuous demand model.
pub fn one_slot_consumption_value(
    model: &DemandModel,
    utility: &UtilityFunction,
    overage_price: f64,
    kept: f64,
) -> f64 {
    model.expectation(|x| utility.eval(x)) - overage_price * model.expected_shortfall(kept)
}

/// Same as [`one_slot_consumption_value`] for grid-snapped demand.
pub fn discrete_consumption_value(
    demand: &DiscreteDemand,
    utility: &UtilityFunction,
    overage_price: f64,
    kept_units: usize,
) -> f64 {
    demand.expectation(|x| utility.eval(x))
        - overage_price * demand.step() * demand.expected_shortfall_units(kept_units)
}

/// Applies the target-interval rule: keep `clamp(e + q, L, U)`.
/// Returns the kept total (MB) and the trade that reaches it.
pub fn optimal_action(
    state: UserState,
    slot: SlotIndex,
    prices: PriceQuote,
    policy: &PolicyTable,
) -> Result<(f64, TradeAction), PolicyError> {
    let grid = policy.grid();
    let q = grid.index_of(state.long_term)?;
    let total = grid.index_of(state.total())?;
    let pg = policy.price_grid();
    let lower = policy.buy_up_to(slot.flat(), q, pg.snap(prices.buy))?;
    let upper = policy.sell_down_to(slot.flat(), q, pg.snap(prices.sell))?;
    let kept = total.clamp(lower, upper.max(lower));
    let a = grid.volume(kept) - grid.volume(total);
    Ok((grid.volume(kept), TradeAction(a)))
}

/// `V_1(0, Q)` net of the discounted subscription fees.
pub fn expected_contract_payoff(values: &ValueTable, plan: &DataPlan) -> Result<f64, PolicyError> {
    if values.first_slot() != 1 {
        return Err(PolicyError::SlotNotSolved(1));
    }
    let start = UserState::contract_start(plan);
    let grid = values.grid();
    let v = values.initial().value(grid.index_of(start.short_term)?, grid.index_of(start.long_term)?);
    let k = plan.slots_per_month as i32;
    let fees: f64 = (0..plan.months as i32)
        .map(|m| values.discount().powi(k * m) * plan.subscription_fee)
        .sum();
    Ok(v - fees)
}
