#![allow(dead_code)]

pub mod criteria;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollover_core::demand::{DemandModel, DiscreteDemand};
use rollover_core::model::{DataPlan, PriceQuote, RolloverMode, VolumeGrid};
use rollover_core::policy::{PriceBelief, PriceGrid, SolverConfig, UtilityFunction};

pub const TIE: f64 = 1e-9;

/// A small random problem: plan, demand on the grid, price scenario indices.
#[derive(Debug, Clone)]
pub struct Instance {
    pub plan: DataPlan,
    pub model: DemandModel,
    pub demand: DiscreteDemand,
    pub utility: UtilityFunction,
    pub config: SolverConfig,
    /// `(sell index, buy index, probability)` on the price grid.
    pub scenarios: Vec<(usize, usize, f64)>,
}

impl Instance {
    pub fn price_grid(&self) -> PriceGrid {
        self.config.price_grid_for(&self.plan)
    }

    pub fn belief(&self) -> PriceBelief {
        let pg = self.price_grid();
        PriceBelief::new(
            self.scenarios
                .iter()
                .map(|&(s, b, p)| (PriceQuote::new(pg.price(s), pg.price(b)).unwrap(), p))
                .collect(),
        )
        .unwrap()
    }

    pub fn cap_units(&self) -> usize {
        self.config.grid.index_of(self.plan.cap).unwrap()
    }
}

/// Random instance with `months <= max_months`, `slots <= max_slots` and a
/// cap of at most `max_cap` grid units.
pub fn random_instance(seed: u64, max_months: u32, max_slots: u32, max_cap: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 5.0;
    let grid = VolumeGrid::new(step).unwrap();
    let cap_units = rng.random_range(max_cap / 2..=max_cap);
    let cap = cap_units as f64 * step;
    let months = rng.random_range(1..=max_months);
    let slots = rng.random_range(1..=max_slots);
    let overage = rng.random_range(0.01..0.05);
    let fee = rng.random_range(0.0..5.0);
    let plan = DataPlan::new(cap, fee, overage, months, slots).unwrap();
    let mean = rng.random_range(0.1..0.8) * cap;
    let sd = rng.random_range(0.1..0.6) * cap;
    let model = DemandModel::new(mean, sd).unwrap();
    let demand = DiscreteDemand::from_model(&model, grid);
    let price_grid = PriceGrid::up_to(overage, overage / 20.0).unwrap();
    let n = price_grid.len();
    let count = rng.random_range(1..=3);
    let mut scenarios = Vec::new();
    let mut left = 1.0;
    for i in 0..count {
        let s = rng.random_range(0..n);
        let b = rng.random_range(s..n);
        let p = if i + 1 == count { left } else { left * rng.random_range(0.2..0.8) };
        left -= p;
        scenarios.push((s, b, p));
    }
    let utility = UtilityFunction::Log { scale: rng.random_range(0.1..3.0) };
    let config = SolverConfig {
        grid,
        price_grid: Some(price_grid),
        discount: rng.random_range(0.8..0.99),
        rollover: if rng.random_bool(0.75) { RolloverMode::Enabled } else { RolloverMode::Disabled },
        retain_values: true,
        ..SolverConfig::default()
    };
    Instance { plan, model, demand, utility, config, scenarios }
}

/// Exhaustive backward induction over every `(e, q)` state and every kept
/// total, written directly from the slot dynamics.
pub struct Oracle {
    pub cap: usize,
    pub ceiling: usize,
    /// `values[t - 1][q][e]`, belief-averaged.
    pub values: Vec<Vec<Vec<f64>>>,
    /// `after[t - 1][q][z]`: expected overage cost plus discounted future
    /// value after keeping `z` units from a state with long-term `q`.
    pub after: Vec<Vec<Vec<f64>>>,
    /// `kept[t - 1][q][e][scenario]`.
    pub kept: Vec<Vec<Vec<Vec<usize>>>>,
}

impl Oracle {
    pub fn solve(inst: &Instance) -> Oracle {
        let plan = inst.plan;
        let step = inst.config.grid.step();
        let cap = inst.cap_units();
        let ceiling = inst.config.grid.index_of(inst.config.ceiling_for(&plan)).unwrap();
        let pg = inst.price_grid();
        let mass = inst.demand.masses().to_vec();
        let utility: f64 = mass.iter().enumerate().map(|(j, p)| p * inst.utility.eval(j as f64 * step)).sum();
        let pi = plan.overage_price * step;
        let delta = inst.config.discount;
        let k = plan.slots_per_month as usize;
        let total = plan.total_slots() as usize;
        let rollover = inst.config.rollover == RolloverMode::Enabled;

        let mut values = vec![Vec::new(); total];
        let mut after = vec![Vec::new(); total];
        let mut kept = vec![Vec::new(); total];
        for t in (1..=total).rev() {
            let next: Option<&Vec<Vec<f64>>> = if t == total { None } else { Some(&values[t]) };
            let month_end = t % k == 0;
            let mut h = vec![vec![0.0; ceiling + 1]; cap + 1];
            for q in 0..=cap {
                for z in 0..=ceiling {
                    let qb = q.min(z);
                    let eb = z - qb;
                    let mut acc = 0.0;
                    for (j, &p) in mass.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let over = j.saturating_sub(z) as f64;
                        let (e2, q2) = if j <= eb { (eb - j, qb) } else { (0, qb.saturating_sub(j - eb)) };
                        let future = match next {
                            None => 0.0,
                            Some(v) if month_end => {
                                let carried = if rollover { q2 } else { 0 };
                                v[cap][carried]
                            }
                            Some(v) => v[q2][e2],
                        };
                        acc += p * (-pi * over + delta * future);
                    }
                    h[q][z] = acc;
                }
            }
            let mut v = vec![vec![0.0; ceiling + 1]; cap + 1];
            let mut choice = vec![vec![Vec::new(); ceiling + 1]; cap + 1];
            for q in 0..=cap {
                for e in 0..=ceiling {
                    let s = e + q;
                    for &(si, bi, prob) in &inst.scenarios {
                        let (ps, pb) = (pg.price(si) * step, pg.price(bi) * step);
                        let obj = |z: usize| {
                            let cash = if z >= s { -pb * (z - s) as f64 } else { ps * (s - z) as f64 };
                            cash + h[q][z]
                        };
                        let best = (0..=ceiling).map(obj).fold(f64::NEG_INFINITY, f64::max);
                        let z = (0..=ceiling)
                            .filter(|&z| obj(z) >= best - TIE)
                            .min_by_key(|&z| z.abs_diff(s))
                            .unwrap();
                        v[q][e] += prob * (utility + obj(z));
                        choice[q][e].push(z);
                    }
                }
            }
            values[t - 1] = v;
            after[t - 1] = h;
            kept[t - 1] = choice;
        }
        Oracle { cap, ceiling, values, after, kept }
    }

    /// Smallest and largest maximizers of `after[t][q][z] - price * z` in grid units.
    pub fn thresholds(&self, t: u32, q: usize, price_per_unit: f64) -> (usize, usize) {
        let h = &self.after[t as usize - 1][q];
        let obj = |z: usize| h[z] - price_per_unit * z as f64;
        let best = (0..h.len()).map(obj).fold(f64::NEG_INFINITY, f64::max);
        let near: Vec<usize> = (0..h.len()).filter(|&z| obj(z) >= best - TIE).collect();
        (near[0], *near.last().unwrap())
    }
}
