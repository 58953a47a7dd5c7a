use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::model::{DataPlan, RolloverMode, VolumeGrid};

use super::PriceGrid;

/// Thresholds of one slot, in grid units of kept total volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotThresholds {
    /// Independent of the long-term volume (last month, or no rollover).
    Plain { buy: Vec<u16>, sell: Vec<u16> },
    /// Row-major `[q][price]`.
    Split { buy: Vec<u16>, sell: Vec<u16>, prices: usize },
}

impl SlotThresholds {
    fn buy(&self, q: usize, price: usize) -> usize {
        match self {
            SlotThresholds::Plain { buy, .. } => buy[price] as usize,
            SlotThresholds::Split { buy, prices, .. } => buy[q * prices + price] as usize,
        }
    }

    fn sell(&self, q: usize, price: usize) -> usize {
        match self {
            SlotThresholds::Plain { sell, .. } => sell[price] as usize,
            SlotThresholds::Split { sell, prices, .. } => sell[q * prices + price] as usize,
        }
    }

    pub fn is_plain(&self) -> bool {
        matches!(self, SlotThresholds::Plain { .. })
    }
}

/// Buy-up-to `L_t(p^b, q)` and sell-down-to `U_t(p^s, q)` for every solved
/// slot, long-term level and grid price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub(super) plan: DataPlan,
    pub(super) grid: VolumeGrid,
    pub(super) price_grid: PriceGrid,
    pub(super) rollover: RolloverMode,
    pub(super) ceiling: usize,
    pub(super) first_slot: u32,
    /// Indexed by `t - first_slot`.
    pub(super) slots: Vec<SlotThresholds>,
}

impl PolicyTable {
    pub fn plan(&self) -> &DataPlan {
        &self.plan
    }

    pub fn grid(&self) -> VolumeGrid {
        self.grid
    }

    pub fn price_grid(&self) -> PriceGrid {
        self.price_grid
    }

    pub fn rollover(&self) -> RolloverMode {
        self.rollover
    }

    /// Largest total volume representable after trading, in grid units.
    pub fn ceiling_units(&self) -> usize {
        self.ceiling
    }

    pub fn cap_units(&self) -> usize {
        self.grid.snap_index(self.plan.cap)
    }

    pub fn first_slot(&self) -> u32 {
        self.first_slot
    }

    pub fn covers(&self, t: u32) -> bool {
        t >= self.first_slot && t <= self.plan.total_slots()
    }

    pub fn slot(&self, t: u32) -> Result<&SlotThresholds, PolicyError> {
        if !self.covers(t) {
            return Err(PolicyError::SlotNotSolved(t));
        }
        Ok(&self.slots[(t - self.first_slot) as usize])
    }

    fn check(&self, q: usize, price: usize) -> Result<(), PolicyError> {
        if q > self.cap_units() || price >= self.price_grid.len() {
            return Err(PolicyError::InvalidInput(format!("lookup out of range: q={q}, price={price}")));
        }
        Ok(())
    }

    /// `L` in grid units at flat slot `t`, long-term level `q` and buy-price index.
    pub fn buy_up_to(&self, t: u32, q: usize, price: usize) -> Result<usize, PolicyError> {
        self.check(q, price)?;
        Ok(self.slot(t)?.buy(q, price))
    }

    /// `U` in grid units at flat slot `t`, long-term level `q` and sell-price index.
    pub fn sell_down_to(&self, t: u32, q: usize, price: usize) -> Result<usize, PolicyError> {
        self.check(q, price)?;
        Ok(self.slot(t)?.sell(q, price))
    }

    /// Both thresholds in MB for an `(m, k)` slot, `q` in MB and a quote in HKD/MB.
    pub fn thresholds_mb(&self, t: u32, q_mb: f64, sell: f64, buy: f64) -> Result<(f64, f64), PolicyError> {
        let q = self.grid.index_of(q_mb)?;
        let l = self.buy_up_to(t, q, self.price_grid.snap(buy))?;
        let u = self.sell_down_to(t, q, self.price_grid.snap(sell))?;
        Ok((self.grid.volume(l), self.grid.volume(u)))
    }
}

/// Belief-averaged value `E_p V_t(e, q, p)` of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotValues {
    /// Depends on `e + q` only; indexed by total units.
    Total(Vec<f64>),
    /// Row-major `[q][e]` with `width` entries per row.
    Split { values: Vec<f64>, width: usize },
}

impl SlotValues {
    pub fn value(&self, e: usize, q: usize) -> f64 {
        match self {
            SlotValues::Total(v) => v[e + q],
            SlotValues::Split { values, width } => values[q * width + e],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub(super) grid: VolumeGrid,
    pub(super) discount: f64,
    pub(super) first_slot: u32,
    pub(super) short_term_units: usize,
    pub(super) cap_units: usize,
    pub(super) initial: SlotValues,
    /// Every solved slot from `first_slot` on, when retained.
    pub(super) slots: Option<Vec<SlotValues>>,
}

impl ValueTable {
    pub fn grid(&self) -> VolumeGrid {
        self.grid
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn first_slot(&self) -> u32 {
        self.first_slot
    }

    /// Grid extents `(e index count, q index count)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.short_term_units + 1, self.cap_units + 1)
    }

    pub fn initial(&self) -> &SlotValues {
        &self.initial
    }

    pub fn slot(&self, t: u32) -> Option<&SlotValues> {
        if t < self.first_slot {
            return None;
        }
        self.slots.as_ref()?.get((t - self.first_slot) as usize)
    }

    pub fn is_retained(&self) -> bool {
        self.slots.is_some()
    }
}
