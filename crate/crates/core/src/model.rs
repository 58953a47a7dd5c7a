//! Tariff, slot indexing, per-user volumes and the trade / consume / advance
//! transitions applied every slot.
//!
//! Volumes are MB, money is HKD. All functions are pure; when every input is a
//! multiple of the volume grid step the arithmetic is exact.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Megabytes per gigabyte at the CLI boundary.
pub const MB_PER_GB: f64 = 1000.0;

/// Three-part tariff plus contract horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPlan {
    /// Monthly data cap (MB).
    pub cap: f64,
    /// Monthly subscription fee (HKD).
    pub subscription_fee: f64,
    /// Overage price (HKD per MB).
    pub overage_price: f64,
    pub months: u32,
    pub slots_per_month: u32,
}

impl DataPlan {
    pub fn new(
        cap: f64,
        subscription_fee: f64,
        overage_price: f64,
        months: u32,
        slots_per_month: u32,
    ) -> Result<Self, ModelError> {
        let plan = Self {
            cap,
            subscription_fee,
            overage_price,
            months,
            slots_per_month,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.cap >= 0.0 && self.cap.is_finite()) {
            return Err(ModelError::InvalidPlan(format!("cap must be >= 0, got {}", self.cap)));
        }
        if !(self.subscription_fee >= 0.0 && self.subscription_fee.is_finite()) {
            return Err(ModelError::InvalidPlan(format!(
                "subscription fee must be >= 0, got {}",
                self.subscription_fee
            )));
        }
        if !(self.overage_price > 0.0 && self.overage_price.is_finite()) {
            return Err(ModelError::InvalidPlan(format!(
                "overage price must be > 0, got {}",
                self.overage_price
            )));
        }
        if self.months == 0 || self.slots_per_month == 0 {
            return Err(ModelError::InvalidPlan("months and slots per month must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_slots(&self) -> u32 {
        self.months * self.slots_per_month
    }

    pub fn first_slot(&self) -> SlotIndex {
        SlotIndex { month: 1, slot: 1, slots_per_month: self.slots_per_month, months: self.months }
    }

    pub fn slot(&self, month: u32, slot: u32) -> Result<SlotIndex, ModelError> {
        SlotIndex::new(month, slot, self)
    }

    pub fn slot_from_flat(&self, t: u32) -> Result<SlotIndex, ModelError> {
        SlotIndex::from_flat(t, self)
    }

    /// Iterates every slot of the contract in order.
    pub fn slots(&self) -> impl Iterator<Item = SlotIndex> + '_ {
        (1..=self.total_slots()).map(move |t| SlotIndex::from_flat(t, self).expect("in range"))
    }
}

/// A slot `(m, k)`; flat index `t = K(m-1) + k`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotIndex {
    month: u32,
    slot: u32,
    slots_per_month: u32,
    months: u32,
}

impl SlotIndex {
    pub fn new(month: u32, slot: u32, plan: &DataPlan) -> Result<Self, ModelError> {
        if month == 0 || month > plan.months || slot == 0 || slot > plan.slots_per_month {
            return Err(ModelError::SlotOutOfRange { month, slot });
        }
        Ok(Self { month, slot, slots_per_month: plan.slots_per_month, months: plan.months })
    }

    pub fn from_flat(t: u32, plan: &DataPlan) -> Result<Self, ModelError> {
        if t == 0 || t > plan.total_slots() {
            return Err(ModelError::FlatSlotOutOfRange(t));
        }
        let k = plan.slots_per_month;
        Self::new((t - 1) / k + 1, (t - 1) % k + 1, plan)
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }

    pub fn flat(&self) -> u32 {
        self.slots_per_month * (self.month - 1) + self.slot
    }

    pub fn is_month_end(&self) -> bool {
        self.slot == self.slots_per_month
    }

    pub fn is_contract_end(&self) -> bool {
        self.is_month_end() && self.month == self.months
    }

    pub fn is_last_month(&self) -> bool {
        self.month == self.months
    }

    pub fn next(&self) -> Option<SlotIndex> {
        if self.is_contract_end() {
            None
        } else if self.is_month_end() {
            Some(Self { month: self.month + 1, slot: 1, ..*self })
        } else {
            Some(Self { slot: self.slot + 1, ..*self })
        }
    }
}

/// Short-term (expires at month end) and long-term (current cap balance) volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub short_term: f64,
    pub long_term: f64,
}

impl UserState {
    pub fn new(short_term: f64, long_term: f64, plan: &DataPlan) -> Result<Self, ModelError> {
        if !(short_term >= 0.0) {
            return Err(ModelError::InvalidState(format!("short-term volume {short_term} < 0")));
        }
        if !(long_term >= 0.0 && long_term <= plan.cap) {
            return Err(ModelError::InvalidState(format!(
                "long-term volume {long_term} outside [0, {}]",
                plan.cap
            )));
        }
        Ok(Self { short_term, long_term })
    }

    /// State at the start of the contract: no rollover, full cap.
    pub fn contract_start(plan: &DataPlan) -> Self {
        Self { short_term: 0.0, long_term: plan.cap }
    }

    pub fn total(&self) -> f64 {
        self.short_term + self.long_term
    }
}

/// Signed trade: positive buys, negative sells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeAction(pub f64);

impl TradeAction {
    pub const NONE: TradeAction = TradeAction(0.0);

    pub fn amount(&self) -> f64 {
        self.0
    }

    pub fn bought(&self) -> f64 {
        self.0.max(0.0)
    }

    pub fn sold(&self) -> f64 {
        (-self.0).max(0.0)
    }
}

/// Selling price `p^s` and buying price `p^b`, HKD per MB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    pub sell: f64,
    pub buy: f64,
}

impl PriceQuote {
    pub fn new(sell: f64, buy: f64) -> Result<Self, ModelError> {
        if !(sell >= 0.0 && sell <= buy && buy.is_finite()) {
            return Err(ModelError::InvalidQuote { sell, buy });
        }
        Ok(Self { sell, buy })
    }

    /// Quote given in HKD per GB.
    pub fn per_gb(sell: f64, buy: f64) -> Result<Self, ModelError> {
        Self::new(sell / MB_PER_GB, buy / MB_PER_GB)
    }
}

/// Volumes right after trading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradedVolumes {
    pub short_term: f64,
    pub long_term: f64,
}

impl TradedVolumes {
    pub fn total(&self) -> f64 {
        self.short_term + self.long_term
    }
}

/// Volumes left after the slot's consumption, plus any overage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionOutcome {
    pub short_term: f64,
    pub long_term: f64,
    pub overage: f64,
}

/// Whether month-end leftover long-term data rolls over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RolloverMode {
    Enabled,
    Disabled,
}

impl RolloverMode {
    pub fn from_flag(enabled: bool) -> Self {
        if enabled {
            RolloverMode::Enabled
        } else {
            RolloverMode::Disabled
        }
    }

    pub fn is_enabled(&self) -> bool {
        matches!(self, RolloverMode::Enabled)
    }
}

/// Short-term data is sold first; purchases only add short-term data.
pub fn apply_trade(state: UserState, action: TradeAction) -> Result<TradedVolumes, ModelError> {
    let a = action.amount();
    let total = state.total();
    if a < -total {
        return Err(ModelError::InfeasibleTrade { shortfall: -total - a });
    }
    let after = state.short_term + a;
    Ok(TradedVolumes { short_term: after.max(0.0), long_term: state.long_term + after.min(0.0) })
}

/// Consumes short-term data first, then long-term, then overage.
pub fn apply_consumption(traded: TradedVolumes, demand: f64) -> Result<ConsumptionOutcome, ModelError> {
    if !(demand >= 0.0) {
        return Err(ModelError::NegativeDemand(demand));
    }
    let short_left = traded.short_term - demand;
    let long_left = traded.long_term + short_left.min(0.0);
    Ok(ConsumptionOutcome {
        short_term: short_left.max(0.0),
        long_term: long_left.max(0.0),
        overage: (-long_left).max(0.0),
    })
}

/// Moves to the next slot. At a month end the short-term leftover expires;
/// with rollover the long-term leftover becomes next month's short-term data.
pub fn advance_slot(
    outcome: ConsumptionOutcome,
    slot: SlotIndex,
    plan: &DataPlan,
    rollover: RolloverMode,
) -> Result<UserState, ModelError> {
    if slot.is_contract_end() {
        return Err(ModelError::ContractEnded);
    }
    if !slot.is_month_end() {
        return Ok(UserState { short_term: outcome.short_term, long_term: outcome.long_term });
    }
    let carried = match rollover {
        RolloverMode::Enabled => outcome.long_term,
        RolloverMode::Disabled => 0.0,
    };
    Ok(UserState { short_term: carried, long_term: plan.cap })
}

/// Fixed-resolution volume grid shared by the solver, market and simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    step: f64,
}

impl VolumeGrid {
    pub const DEFAULT_STEP_MB: f64 = 5.0;

    pub fn new(step: f64) -> Result<Self, ModelError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(ModelError::InvalidGrid(format!("grid step must be > 0, got {step}")));
        }
        Ok(Self { step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Grid index of an on-grid volume.
    pub fn index_of(&self, mb: f64) -> Result<usize, ModelError> {
        let u = mb / self.step;
        let r = u.round();
        if mb < 0.0 || (u - r).abs() > 1e-9 * r.max(1.0) {
            return Err(ModelError::OffGrid { volume: mb, step: self.step });
        }
        Ok(r as usize)
    }

    /// Nearest grid index of a non-negative volume (halves round up).
    pub fn snap_index(&self, mb: f64) -> usize {
        (mb.max(0.0) / self.step).round() as usize
    }

    pub fn snap(&self, mb: f64) -> f64 {
        self.snap_index(mb) as f64 * self.step
    }

    pub fn volume(&self, index: usize) -> f64 {
        index as f64 * self.step
    }
}

impl Default for VolumeGrid {
    fn default() -> Self {
        Self { step: Self::DEFAULT_STEP_MB }
    }
}
