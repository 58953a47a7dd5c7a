use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{DemandModel, DiscreteDemand};
use crate::error::PolicyError;
use crate::model::{DataPlan, RolloverMode, SlotIndex, VolumeGrid};

use super::search::{golden_section_plateau, is_concave, scan_argmax, Tie};
use super::table::{PolicyTable, SlotThresholds, SlotValues, ValueTable};
use super::{PriceBelief, PriceGrid, UtilityFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: VolumeGrid,
    /// Ceiling on the total volume kept after trading (MB). Defaults to twice
    /// the cap, the most a user can hold at a month start with rollover.
    pub ceiling: Option<f64>,
    /// Defaults to [`PriceGrid::for_plan`].
    pub price_grid: Option<PriceGrid>,
    pub discount: f64,
    pub rollover: RolloverMode,
    /// First flat slot to solve; earlier slots are skipped.
    pub from_slot: u32,
    /// Keep every slot's value grid, not only the first one.
    pub retain_values: bool,
    /// Maximizers within this many HKD of the best are treated as ties.
    pub tie_tolerance: f64,
    /// Largest second difference still accepted as concave.
    pub concavity_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: VolumeGrid::default(),
            ceiling: None,
            price_grid: None,
            discount: 0.98,
            rollover: RolloverMode::Enabled,
            from_slot: 1,
            retain_values: false,
            tie_tolerance: 1e-9,
            concavity_tolerance: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn price_grid_for(&self, plan: &DataPlan) -> PriceGrid {
        self.price_grid.unwrap_or_else(|| PriceGrid::for_plan(plan))
    }

    pub fn ceiling_for(&self, plan: &DataPlan) -> f64 {
        self.ceiling.unwrap_or(2.0 * plan.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: PolicyTable,
    /// Rows whose continuation failed the concavity check and were scanned.
    pub scanned_rows: usize,
}

impl Solution {
    pub fn expected_contract_payoff(&self, plan: &DataPlan) -> Result<f64, PolicyError> {
        super::expected_contract_payoff(&self.values, plan)
    }
}

/// Solves the user's problem with demand snapped to the configured grid.
pub fn solve(
    plan: &DataPlan,
    model: &DemandModel,
    utility: &UtilityFunction,
    belief: &PriceBelief,
    config: &SolverConfig,
) -> Result<Solution, PolicyError> {
    solve_discrete(plan, &DiscreteDemand::from_model(model, config.grid), utility, belief, config)
}

struct Instance {
    slots_per_month: u32,
    total_slots: u32,
    cap: usize,
    ceiling: usize,
    discount: f64,
    rollover: RolloverMode,
    /// Demand probabilities per grid unit and their running sums.
    mass: Vec<f64>,
    cumulative: Vec<f64>,
    /// `W(z)` per kept unit.
    consumption: Vec<f64>,
    price_grid: PriceGrid,
    /// MB per grid unit, converts HKD/MB prices to HKD per unit.
    unit_price: f64,
    /// `(sell, buy, probability)` with prices in HKD per unit.
    scenarios: Vec<(f64, f64, f64)>,
    tie: f64,
    concavity: f64,
}

struct RowResult {
    buy: Vec<u16>,
    sell: Vec<u16>,
    /// `(L, U)` per belief scenario.
    scenario: Vec<(usize, usize)>,
    scanned: bool,
}

impl Instance {
    fn is_split_month(&self, month: u32) -> bool {
        self.rollover.is_enabled() && month < self.total_slots / self.slots_per_month
    }

    /// `(smallest, largest)` near-maximizers of `row[z] - slope * z`, or the
    /// number of separated peaks when a non-concave row has several.
    fn plateau(&self, row: &[f64], slope: f64, concave: bool) -> Result<(usize, usize), usize> {
        if concave {
            Ok(golden_section_plateau(row, slope, self.tie))
        } else {
            Ok((scan_argmax(row, slope, Tie::Smallest, self.tie)?, scan_argmax(row, slope, Tie::Largest, self.tie)?))
        }
    }

    fn thresholds(&self, row: &[f64], t: u32, q: usize) -> Result<RowResult, PolicyError> {
        let concave = is_concave(row, self.concavity);
        let fail = |price: usize| {
            move |peaks: usize| PolicyError::NonConcave { slot: t, q, price, local_maxima: peaks }
        };
        let n = self.price_grid.len();
        let mut buy = Vec::with_capacity(n);
        let mut sell = Vec::with_capacity(n);
        for i in 0..n {
            let p = self.price_grid.price(i) * self.unit_price;
            let (lo, hi) = self.plateau(row, p, concave).map_err(fail(i))?;
            buy.push(lo as u16);
            sell.push(hi as u16);
        }
        let mut scenario = Vec::with_capacity(self.scenarios.len());
        for (s, &(ps, pb, _)) in self.scenarios.iter().enumerate() {
            let (l, _) = self.plateau(row, pb, concave).map_err(fail(n + s))?;
            let (_, u) = self.plateau(row, ps, concave).map_err(fail(n + s))?;
            scenario.push((l, u));
        }
        Ok(RowResult { buy, sell, scenario, scanned: !concave })
    }

    /// Belief-averaged value of holding `first + i` units before trading, for
    /// `i` in `0..len`.
    fn state_values(&self, row: &[f64], first: usize, len: usize, res: &RowResult) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&(ps, pb, prob), &(l, u)) in self.scenarios.iter().zip(&res.scenario) {
            for (i, v) in out.iter_mut().enumerate() {
                let total = first + i;
                *v += prob
                    * if total < l {
                        row[l] - pb * (l - total) as f64
                    } else if total > u {
                        row[u] + ps * (total - u) as f64
                    } else {
                        row[total]
                    };
            }
        }
        out
    }

    fn plain_continuation(&self, slot: SlotIndex, next: Option<&SlotValues>) -> Vec<f64> {
        let n = self.ceiling + 1;
        match next {
            None => vec![0.0; n],
            Some(next) if slot.is_month_end() => vec![next.value(0, self.cap); n],
            Some(next) => {
                let totals: Vec<f64> = (0..n).map(|s| next.value(s, 0)).collect();
                (0..n)
                    .map(|z| self.mass.iter().enumerate().map(|(j, p)| p * totals[z.saturating_sub(j)]).sum())
                    .collect()
            }
        }
    }

    /// `E_x V_{t+1}` after keeping `(e_bar, q_bar)`, as rows `[q_bar][e_bar]`.
    /// Demand up to `e_bar` leaves `q_bar` intact; each unit beyond it is
    /// taken from the long-term data.
    fn split_continuation(&self, slot: SlotIndex, next: &SlotValues) -> Vec<Vec<f64>> {
        let month_end = slot.is_month_end();
        let (mass, cap) = (&self.mass, self.cap);
        let top = mass.len() - 1;
        (0..=cap)
            .into_par_iter()
            .map(|qb| {
                let width = self.ceiling - qb + 1;
                let spill: Vec<f64> = (0..=top)
                    .map(|d| {
                        let q_hat = qb.saturating_sub(d);
                        if month_end { next.value(q_hat, cap) } else { next.value(0, q_hat) }
                    })
                    .collect();
                let stay: Vec<f64> = if month_end { Vec::new() } else { (0..width).map(|e| next.value(e, qb)).collect() };
                let kept = next.value(qb, cap);
                (0..width)
                    .map(|eb| {
                        let covered = eb.min(top);
                        let held = if month_end {
                            self.cumulative[covered] * kept
                        } else {
                            dot(&mass[..=covered], stay[eb - covered..=eb].iter().rev())
                        };
                        let beyond = if eb < top { dot(&mass[eb + 1..], spill[1..].iter()) } else { 0.0 };
                        held + beyond
                    })
                    .collect()
            })
            .collect()
    }
}

fn dot<'a>(a: &[f64], b: impl Iterator<Item = &'a f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward induction over `t = T, ..., from_slot` on the volume grid.
pub fn solve_discrete(
    plan: &DataPlan,
    demand: &DiscreteDemand,
    utility: &UtilityFunction,
    belief: &PriceBelief,
    config: &SolverConfig,
) -> Result<Solution, PolicyError> {
    plan.validate()?;
    let grid = config.grid;
    if (demand.step() - grid.step()).abs() > 1e-12 {
        return Err(PolicyError::InvalidInput("demand was discretized on a different grid".into()));
    }
    if !(config.discount > 0.0 && config.discount < 1.0) {
        return Err(PolicyError::InvalidInput(format!("discount {} outside (0, 1)", config.discount)));
    }
    let cap = grid.index_of(plan.cap)?;
    let ceiling = grid.index_of(config.ceiling_for(plan))?;
    if ceiling < 2 * cap {
        return Err(PolicyError::InvalidInput(format!(
            "volume ceiling {} MB is below twice the cap",
            config.ceiling_for(plan)
        )));
    }
    if ceiling > u16::MAX as usize {
        return Err(PolicyError::InvalidInput(format!("{ceiling} grid units exceed the table range")));
    }
    let total_slots = plan.total_slots();
    if config.from_slot == 0 || config.from_slot > total_slots {
        return Err(PolicyError::InvalidInput(format!("from_slot {} outside the contract", config.from_slot)));
    }
    let max_demand = demand.support().map(|(j, _)| j).max().unwrap_or(0) as f64 * grid.step();
    utility.validate(max_demand.max(grid.step()))?;

    let price_grid = config.price_grid_for(plan);
    let step = grid.step();
    let mass = demand.masses().to_vec();
    let cumulative = mass
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let expected_utility = demand.expectation(|x| utility.eval(x));
    let consumption: Vec<f64> = (0..=ceiling)
        .map(|z| expected_utility - plan.overage_price * step * demand.expected_shortfall_units(z))
        .collect();
    let inst = Instance {
        slots_per_month: plan.slots_per_month,
        total_slots,
        cap,
        ceiling,
        discount: config.discount,
        rollover: config.rollover,
        mass,
        cumulative,
        consumption,
        price_grid,
        unit_price: step,
        scenarios: belief.scenarios().iter().map(|(q, p)| (q.sell * step, q.buy * step, *p)).collect(),
        tie: config.tie_tolerance,
        concavity: config.concavity_tolerance,
    };

    let mut next: Option<SlotValues> = None;
    let mut thresholds = Vec::new();
    let mut retained = Vec::new();
    let mut scanned_rows = 0;
    for t in (config.from_slot..=total_slots).rev() {
        let slot = SlotIndex::from_flat(t, plan)?;
        let (values, slot_thresholds, scanned) = if inst.is_split_month(slot.month()) {
            solve_split_slot(&inst, slot, next.as_ref().expect("split month is never the last"))?
        } else {
            solve_plain_slot(&inst, slot, next.as_ref())?
        };
        scanned_rows += scanned;
        thresholds.push(slot_thresholds);
        if config.retain_values {
            retained.push(values.clone());
        }
        next = Some(values);
    }
    thresholds.reverse();
    retained.reverse();

    let values = ValueTable {
        grid,
        discount: config.discount,
        first_slot: config.from_slot,
        short_term_units: ceiling,
        cap_units: cap,
        initial: next.expect("at least one slot"),
        slots: config.retain_values.then_some(retained),
    };
    let policy = PolicyTable {
        plan: *plan,
        grid,
        price_grid,
        rollover: config.rollover,
        ceiling,
        first_slot: config.from_slot,
        slots: thresholds,
    };
    Ok(Solution { values, policy, scanned_rows })
}

fn solve_plain_slot(
    inst: &Instance,
    slot: SlotIndex,
    next: Option<&SlotValues>,
) -> Result<(SlotValues, SlotThresholds, usize), PolicyError> {
    let cont = inst.plain_continuation(slot, next);
    let row: Vec<f64> = inst.consumption.iter().zip(&cont).map(|(w, c)| w + inst.discount * c).collect();
    let res = inst.thresholds(&row, slot.flat(), 0)?;
    let values = inst.state_values(&row, 0, inst.ceiling + inst.cap + 1, &res);
    let scanned = res.scanned as usize;
    Ok((SlotValues::Total(values), SlotThresholds::Plain { buy: res.buy, sell: res.sell }, scanned))
}

fn solve_split_slot(
    inst: &Instance,
    slot: SlotIndex,
    next: &SlotValues,
) -> Result<(SlotValues, SlotThresholds, usize), PolicyError> {
    let cont = inst.split_continuation(slot, next);
    let width = inst.ceiling + 1;
    let rows: Vec<(Vec<f64>, RowResult)> = (0..=inst.cap)
        .into_par_iter()
        .map(|q| {
            let row: Vec<f64> = (0..=inst.ceiling)
                .map(|z| {
                    let qb = q.min(z);
                    inst.consumption[z] + inst.discount * cont[qb][z - qb]
                })
                .collect();
            let res = inst.thresholds(&row, slot.flat(), q)?;
            let values = inst.state_values(&row, q, width, &res);
            Ok((values, res))
        })
        .collect::<Result<_, PolicyError>>()?;

    let prices = inst.price_grid.len();
    let mut values = Vec::with_capacity(width * (inst.cap + 1));
    let mut buy = Vec::with_capacity(prices * (inst.cap + 1));
    let mut sell = Vec::with_capacity(prices * (inst.cap + 1));
    let mut scanned = 0;
    for (v, res) in rows {
        values.extend(v);
        buy.extend(res.buy);
        sell.extend(res.sell);
        scanned += res.scanned as usize;
    }
    Ok((SlotValues::Split { values, width }, SlotThresholds::Split { buy, sell, prices }, scanned))
}
