//! Slot market: aggregate trading intentions, price, and allocate.
//!
//! Demand at a buy price is the total shortfall below users' buy-up-to
//! thresholds; supply at a sell price is the total excess above their
//! sell-down-to thresholds. The operator picks the traded quantity `theta`
//! maximizing `(P_D(theta) - P_S(theta)) * theta` over the inverse curves.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MarketError;
use crate::model::{SlotIndex, TradeAction, UserState, VolumeGrid, MB_PER_GB};
use crate::policy::{PolicyTable, PriceGrid};

#[derive(Debug, Clone, Copy)]
pub struct Participant<'a> {
    pub state: UserState,
    pub policy: &'a PolicyTable,
}

/// All users reviewing the market at one slot.
#[derive(Debug, Clone)]
pub struct MarketSnapshot<'a> {
    slot: SlotIndex,
    grid: VolumeGrid,
    price_grid: PriceGrid,
    users: Vec<Participant<'a>>,
    /// `(total, q)` in grid units per user.
    units: Vec<(usize, usize)>,
}

impl<'a> MarketSnapshot<'a> {
    pub fn new(slot: SlotIndex, users: Vec<Participant<'a>>) -> Result<Self, MarketError> {
        let first = users.first().ok_or(MarketError::EmptyCurves)?;
        let grid = first.policy.grid();
        let price_grid = first.policy.price_grid();
        let mut units = Vec::with_capacity(users.len());
        for u in &users {
            if !u.policy.covers(slot.flat()) {
                return Err(MarketError::MixedSlots);
            }
            if u.policy.grid() != grid || u.policy.price_grid() != price_grid {
                return Err(MarketError::GridMismatch("participants use different grids".into()));
            }
            units.push((grid.index_of(u.state.total())?, grid.index_of(u.state.long_term)?));
        }
        Ok(Self { slot, grid, price_grid, users, units })
    }

    pub fn slot(&self) -> SlotIndex {
        self.slot
    }

    pub fn grid(&self) -> VolumeGrid {
        self.grid
    }

    pub fn price_grid(&self) -> PriceGrid {
        self.price_grid
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Units user `n` wants to buy at buy-price index `i`.
    pub fn desired_buy(&self, n: usize, i: usize) -> usize {
        let (total, q) = self.units[n];
        let l = self.users[n].policy.buy_up_to(self.slot.flat(), q, i).expect("checked at construction");
        l.saturating_sub(total)
    }

    /// Units user `n` wants to sell at sell-price index `i`.
    pub fn desired_sell(&self, n: usize, i: usize) -> usize {
        let (total, q) = self.units[n];
        let u = self.users[n].policy.sell_down_to(self.slot.flat(), q, i).expect("checked at construction");
        total.saturating_sub(u)
    }

    fn demand_units(&self, i: usize) -> usize {
        (0..self.len()).map(|n| self.desired_buy(n, i)).sum()
    }

    fn supply_units(&self, i: usize) -> usize {
        (0..self.len()).map(|n| self.desired_sell(n, i)).sum()
    }
}

/// `D_t(p^b)` in MB, with `p^b` (HKD/MB) snapped to the price grid.
pub fn total_demand(snapshot: &MarketSnapshot<'_>, buy: f64) -> f64 {
    snapshot.grid.volume(snapshot.demand_units(snapshot.price_grid.snap(buy)))
}

/// `S_t(p^s)` in MB, with `p^s` (HKD/MB) snapped to the price grid.
pub fn total_supply(snapshot: &MarketSnapshot<'_>, sell: f64) -> f64 {
    snapshot.grid.volume(snapshot.supply_units(snapshot.price_grid.snap(sell)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Knot {
    theta: f64,
    /// Value at `theta`.
    at: f64,
    /// Limit from the right.
    right: f64,
}

/// Piecewise-linear generalized inverse of a monotone sampled curve, defined on
/// `[0, max]` and left-continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseCurve {
    knots: Vec<Knot>,
}

impl InverseCurve {
    /// Upper inverse `max { p : D(p) >= theta }` of a non-increasing curve.
    fn of_demand(prices: &[f64], volumes: &[f64]) -> Self {
        let runs = runs(volumes);
        let mut knots = Vec::with_capacity(runs.len() + 1);
        let top = prices[prices.len() - 1];
        if runs.last().expect("non-empty").2 > 0.0 {
            knots.push(Knot { theta: 0.0, at: top, right: top });
        }
        for &(lo, hi, v) in runs.iter().rev() {
            knots.push(Knot { theta: v, at: prices[hi], right: prices[lo] });
        }
        Self { knots }
    }

    /// Lower inverse `min { p : S(p) >= theta }` of a non-decreasing curve.
    fn of_supply(prices: &[f64], volumes: &[f64]) -> Self {
        let runs = runs(volumes);
        let mut knots = Vec::with_capacity(runs.len() + 1);
        if runs[0].2 > 0.0 {
            knots.push(Knot { theta: 0.0, at: prices[0], right: prices[0] });
        }
        for &(lo, hi, v) in &runs {
            knots.push(Knot { theta: v, at: prices[lo], right: prices[hi] });
        }
        Self { knots }
    }

    pub fn max_theta(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.theta)
    }

    /// Knot positions in increasing order.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|k| k.theta)
    }

    fn locate(&self, theta: f64) -> Result<usize, usize> {
        self.knots.binary_search_by(|k| k.theta.total_cmp(&theta))
    }

    /// Value at `theta`, clamped to the domain.
    pub fn eval(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, self.max_theta());
        match self.locate(theta) {
            Ok(i) => self.knots[i].at,
            Err(i) => self.interpolate(i - 1, theta),
        }
    }

    /// Limit from the right at `theta`.
    pub fn eval_right(&self, theta: f64) -> f64 {
        match self.locate(theta) {
            Ok(i) => self.knots[i].right,
            Err(i) if i == 0 => self.knots[0].at,
            Err(i) if i >= self.knots.len() => self.knots[i - 1].right,
            Err(i) => self.interpolate(i - 1, theta),
        }
    }

    fn interpolate(&self, i: usize, theta: f64) -> f64 {
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        a.right + (b.at - a.right) * (theta - a.theta) / (b.theta - a.theta)
    }
}

/// Maximal runs of equal values, as `(first index, last index, value)`.
fn runs(values: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(run) if run.2 == v => run.1 = i,
            _ => out.push((i, i, v)),
        }
    }
    out
}

/// Pool-adjacent-violators fit; returns the fitted values and the largest
/// absolute change.
fn isotonic(values: &[f64], increasing: bool) -> (Vec<f64>, f64) {
    let sign = if increasing { 1.0 } else { -1.0 };
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((sign * v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    let fitted: Vec<f64> = blocks.iter().flat_map(|&(v, n)| std::iter::repeat(sign * v).take(n)).collect();
    let change = values.iter().zip(&fitted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (fitted, change)
}

/// Sampled demand and supply curves with their inverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCurves {
    prices: Vec<f64>,
    demand: Vec<f64>,
    supply: Vec<f64>,
    demand_inverse: InverseCurve,
    supply_inverse: InverseCurve,
    /// Largest isotonic correction applied to either curve (MB).
    pub correction: f64,
}

impl MarketCurves {
    /// Builds curves from samples at increasing prices. Violations of
    /// monotonicity up to `tolerance` MB are smoothed; larger ones are errors.
    pub fn from_samples(
        prices: Vec<f64>,
        demand: Vec<f64>,
        supply: Vec<f64>,
        tolerance: f64,
    ) -> Result<Self, MarketError> {
        if prices.is_empty() {
            return Err(MarketError::EmptyCurves);
        }
        if demand.len() != prices.len() || supply.len() != prices.len() {
            return Err(MarketError::GridMismatch("curve lengths differ from the price grid".into()));
        }
        if prices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MarketError::GridMismatch("prices must be strictly increasing".into()));
        }
        if demand.iter().chain(&supply).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MarketError::GridMismatch("curve volumes must be finite and non-negative".into()));
        }
        let check = |curve: &'static str, raw: &[f64], increasing: bool| -> Result<(Vec<f64>, f64), MarketError> {
            let (fitted, change) = isotonic(raw, increasing);
            if change > tolerance {
                let index = raw.iter().zip(&fitted).position(|(a, b)| (a - b).abs() >= change).unwrap_or(0);
                return Err(MarketError::NonMonotone { curve, index, by: change });
            }
            Ok(if change > 0.0 { (fitted, change) } else { (raw.to_vec(), 0.0) })
        };
        let (demand, cd) = check("demand", &demand, false)?;
        let (supply, cs) = check("supply", &supply, true)?;
        Ok(Self {
            demand_inverse: InverseCurve::of_demand(&prices, &demand),
            supply_inverse: InverseCurve::of_supply(&prices, &supply),
            prices,
            demand,
            supply,
            correction: cd.max(cs),
        })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand_inverse(&self) -> &InverseCurve {
        &self.demand_inverse
    }

    pub fn supply_inverse(&self) -> &InverseCurve {
        &self.supply_inverse
    }

    /// Upper end of the tradable quantity range.
    pub fn max_theta(&self) -> f64 {
        self.demand_inverse.max_theta().min(self.supply_inverse.max_theta())
    }

    fn interpolate(&self, values: &[f64], p: f64) -> f64 {
        let n = self.prices.len();
        if p <= self.prices[0] {
            return values[0];
        }
        if p >= self.prices[n - 1] {
            return values[n - 1];
        }
        let i = self.prices.partition_point(|&x| x <= p) - 1;
        let w = (p - self.prices[i]) / (self.prices[i + 1] - self.prices[i]);
        values[i] + w * (values[i + 1] - values[i])
    }

    /// Linear interpolation of the demand samples.
    pub fn demand_at(&self, p: f64) -> f64 {
        self.interpolate(&self.demand, p)
    }

    pub fn supply_at(&self, p: f64) -> f64 {
        self.interpolate(&self.supply, p)
    }

    /// `R(theta) = (P_D(theta) - P_S(theta)) * theta`.
    pub fn revenue(&self, theta: f64) -> f64 {
        (self.demand_inverse.eval(theta) - self.supply_inverse.eval(theta)) * theta
    }
}

/// Evaluates both curves on the snapshot's price grid.
pub fn build_curves(snapshot: &MarketSnapshot<'_>, tolerance: f64) -> Result<MarketCurves, MarketError> {
    let n = snapshot.price_grid.len();
    let (demand, supply): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .map(|i| (snapshot.grid.volume(snapshot.demand_units(i)), snapshot.grid.volume(snapshot.supply_units(i))))
        .unzip();
    MarketCurves::from_samples(snapshot.price_grid.prices().collect(), demand, supply, tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub open: bool,
    /// Revenue-maximizing quantity on the inverse curves (MB).
    pub theta: f64,
    /// HKD/MB.
    pub sell_price: f64,
    pub buy_price: f64,
    /// `(buy - sell) * theta` in HKD.
    pub revenue: f64,
}

impl ClearingResult {
    pub const CLOSED: ClearingResult =
        ClearingResult { open: false, theta: 0.0, sell_price: 0.0, buy_price: 0.0, revenue: 0.0 };
}

/// Maximizes `R` exactly: between consecutive breakpoints of the two inverses
/// the price gap is linear, so `R` is a quadratic whose vertex is closed form.
pub fn clear(curves: &MarketCurves) -> ClearingResult {
    let (pd, ps) = (&curves.demand_inverse, &curves.supply_inverse);
    let limit = curves.max_theta();
    if limit <= 0.0 || pd.eval_right(0.0) <= ps.eval_right(0.0) {
        return ClearingResult::CLOSED;
    }
    let mut points: Vec<f64> = pd.breakpoints().chain(ps.breakpoints()).filter(|&t| t <= limit).collect();
    points.push(0.0);
    points.push(limit);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut best = (0.0, 0.0);
    let mut consider = |theta: f64, r: f64| {
        if r > best.1 {
            best = (theta, r);
        }
    };
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ga = pd.eval_right(a) - ps.eval_right(a);
        let gb = pd.eval(b) - ps.eval(b);
        let slope = (gb - ga) / (b - a);
        if slope < 0.0 {
            let vertex = -(ga - slope * a) / (2.0 * slope);
            if vertex > a && vertex < b {
                consider(vertex, curves.revenue(vertex));
            }
        }
        consider(b, gb * b);
    }
    let (theta, revenue) = best;
    if revenue <= 0.0 {
        return ClearingResult::CLOSED;
    }
    ClearingResult { open: true, theta, sell_price: ps.eval(theta), buy_price: pd.eval(theta), revenue }
}

/// Trades executed in one slot. Money is tracked in ticks of
/// `price spacing * volume step` HKD so that balances are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub sell_index: usize,
    pub buy_index: usize,
    /// HKD/MB after snapping to the price grid.
    pub sell_price: f64,
    pub buy_price: f64,
    pub bought_units: Vec<usize>,
    pub sold_units: Vec<usize>,
    pub volume_units: usize,
    pub desired_buy_units: usize,
    pub desired_sell_units: usize,
    /// HKD per tick.
    pub tick: f64,
}

impl Allocation {
    pub fn trades(&self, grid: VolumeGrid) -> Vec<TradeAction> {
        self.bought_units
            .iter()
            .zip(&self.sold_units)
            .map(|(&b, &s)| TradeAction(grid.volume(b) - grid.volume(s)))
            .collect()
    }

    pub fn n_buyers(&self) -> usize {
        self.bought_units.iter().filter(|&&b| b > 0).count()
    }

    pub fn n_sellers(&self) -> usize {
        self.sold_units.iter().filter(|&&s| s > 0).count()
    }

    pub fn buyer_spend_ticks(&self) -> u64 {
        self.bought_units.iter().map(|&b| (b * self.buy_index) as u64).sum()
    }

    pub fn seller_income_ticks(&self) -> u64 {
        self.sold_units.iter().map(|&s| (s * self.sell_index) as u64).sum()
    }

    pub fn margin_ticks(&self) -> u64 {
        (self.volume_units * (self.buy_index - self.sell_index)) as u64
    }

    pub fn revenue(&self) -> f64 {
        self.margin_ticks() as f64 * self.tick
    }
}

/// Scales `desired` down to sum to `target` with largest-remainder rounding;
/// ties go to the lower index.
fn ration(desired: &[usize], target: usize) -> Vec<usize> {
    let total: usize = desired.iter().sum();
    if total <= target {
        return desired.to_vec();
    }
    let mut out = Vec::with_capacity(desired.len());
    let mut remainders = Vec::new();
    for (n, &d) in desired.iter().enumerate() {
        let exact = d as u128 * target as u128;
        out.push((exact / total as u128) as usize);
        remainders.push((exact % total as u128, n));
    }
    let short = target - out.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, n) in remainders.iter().take(short) {
        out[n] += 1;
    }
    out
}

/// Executes the cleared prices: every user trades toward their threshold at
/// the snapped prices and the long side is rationed to the short side.
pub fn allocate(snapshot: &MarketSnapshot<'_>, result: &ClearingResult) -> Result<Allocation, MarketError> {
    let pg = snapshot.price_grid;
    let n = snapshot.len();
    let (sell_index, buy_index) = if result.open { (pg.snap(result.sell_price), pg.snap(result.buy_price)) } else { (0, 0) };
    if sell_index > buy_index {
        return Err(MarketError::GridMismatch(format!("snapped sell index {sell_index} above buy index {buy_index}")));
    }
    let (buys, sells): (Vec<usize>, Vec<usize>) = if result.open {
        (0..n).map(|u| (snapshot.desired_buy(u, buy_index), snapshot.desired_sell(u, sell_index))).unzip()
    } else {
        (vec![0; n], vec![0; n])
    };
    let desired_buy_units: usize = buys.iter().sum();
    let desired_sell_units: usize = sells.iter().sum();
    let volume = desired_buy_units.min(desired_sell_units);
    let bought_units = ration(&buys, volume);
    let sold_units = ration(&sells, volume);
    for u in 0..n {
        let total = snapshot.units[u].0;
        if bought_units[u] > 0 && sold_units[u] > 0 {
            return Err(MarketError::InfeasibleAllocation { user: u, reason: "both buys and sells".into() });
        }
        if sold_units[u] > total {
            return Err(MarketError::InfeasibleAllocation { user: u, reason: "sells more than it holds".into() });
        }
        if total + bought_units[u] > snapshot.users[u].policy.ceiling_units() {
            return Err(MarketError::InfeasibleAllocation { user: u, reason: "exceeds the volume ceiling".into() });
        }
    }
    Ok(Allocation {
        sell_index,
        buy_index,
        sell_price: pg.price(sell_index),
        buy_price: pg.price(buy_index),
        bought_units,
        sold_units,
        volume_units: volume,
        desired_buy_units,
        desired_sell_units,
        tick: pg.spacing() * snapshot.grid.step(),
    })
}

/// One row of the per-slot clearing log. Prices in HKD/GB, volume in GB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingLogRow {
    pub t: u32,
    pub p_s: f64,
    pub p_b: f64,
    pub theta: f64,
    pub revenue: f64,
    pub n_buyers: usize,
    pub n_sellers: usize,
}

impl ClearingLogRow {
    pub fn new(slot: SlotIndex, allocation: &Allocation, grid: VolumeGrid) -> Self {
        Self {
            t: slot.flat(),
            p_s: allocation.sell_price * MB_PER_GB,
            p_b: allocation.buy_price * MB_PER_GB,
            theta: grid.volume(allocation.volume_units) / MB_PER_GB,
            revenue: allocation.revenue(),
            n_buyers: allocation.n_buyers(),
            n_sellers: allocation.n_sellers(),
        }
    }
}

pub fn write_clearing_log<W: Write>(writer: W, rows: &[ClearingLogRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
