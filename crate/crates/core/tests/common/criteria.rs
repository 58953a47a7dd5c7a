//! Checks shared by the per-topic test files and the acceptance report.
//! Each returns whether the property held and a one-line measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollover_core::demand::{fit, ks_test, DemandModel, UsageTrace};
use rollover_core::market::{build_curves, clear, total_demand, total_supply, MarketCurves, MarketSnapshot, Participant};
use rollover_core::model::{DataPlan, PriceQuote, RolloverMode, SlotIndex, UserState, VolumeGrid};
use rollover_core::policy::{optimal_action, solve, solve_discrete, PolicyTable, PriceBelief, SolverConfig, UtilityFunction};
use rollover_core::sim::{demand_draws, run_paired, run_with, PopulationSpec, ScenarioConfig};

use super::{random_instance, Instance, Oracle};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn solve_instance(inst: &Instance, rollover: RolloverMode) -> PolicyTable {
    let config = SolverConfig { rollover, retain_values: false, ..inst.config.clone() };
    solve_discrete(&inst.plan, &inst.demand, &inst.utility, &inst.belief(), &config).unwrap().policy
}

fn lookups(p: &PolicyTable, t: u32, q: usize, i: usize) -> (usize, usize) {
    (p.buy_up_to(t, q, i).unwrap(), p.sell_down_to(t, q, i).unwrap())
}

/// Thresholds and optimal actions against exhaustive search.
pub fn oracle_equivalence(instances: u64) -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for seed in 0..instances {
        let inst = random_instance(seed, 2, 3, 20);
        let oracle = Oracle::solve(&inst);
        let sol = solve_discrete(&inst.plan, &inst.demand, &inst.utility, &inst.belief(), &inst.config).unwrap();
        let grid = inst.config.grid;
        let pg = inst.price_grid();
        for t in 1..=inst.plan.total_slots() {
            let slot = SlotIndex::from_flat(t, &inst.plan).unwrap();
            for q in 0..=oracle.cap {
                for i in 0..pg.len() {
                    checked += 1;
                    if lookups(&sol.policy, t, q, i) != oracle.thresholds(t, q, pg.price(i) * grid.step()) {
                        mismatches += 1;
                    }
                }
                for e in 0..=oracle.ceiling {
                    let state = UserState { short_term: grid.volume(e), long_term: grid.volume(q) };
                    for (s, &(si, bi, _)) in inst.scenarios.iter().enumerate() {
                        let quote = PriceQuote::new(pg.price(si), pg.price(bi)).unwrap();
                        let (kept, _) = optimal_action(state, slot, quote, &sol.policy).unwrap();
                        checked += 1;
                        if grid.index_of(kept).unwrap() != oracle.kept[t as usize - 1][q][e][s] {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        mismatches == 0 && secs < 60.0,
        format!("{instances} instances, {checked} lookups, {mismatches} mismatches, {secs:.2} s"),
    )
}

pub struct MonotonicityCount {
    pub configs: u64,
    pub checked: usize,
    pub price: usize,
    pub plain_slot: usize,
    pub rollover_slot: usize,
    /// `(seed, t, q, price index)` of the first within-month rise in a rollover month.
    pub first_rollover: Option<(u64, u32, usize, usize)>,
}

/// Counts rises of more than one grid step: `L` in the buy price, `U` in the
/// sell price, and both from slot `k` to `k + 1` of the same month.
pub fn monotonicity_counts(configs: u64) -> MonotonicityCount {
    let mut c = MonotonicityCount { configs, checked: 0, price: 0, plain_slot: 0, rollover_slot: 0, first_rollover: None };
    for seed in 0..configs {
        let inst = random_instance(1000 + seed, 3, 5, 30);
        let policy = solve_instance(&inst, inst.config.rollover);
        let n = inst.price_grid().len();
        let plan = inst.plan;
        for t in 1..=plan.total_slots() {
            let slot = SlotIndex::from_flat(t, &plan).unwrap();
            let plain = policy.slot(t).unwrap().is_plain();
            for q in 0..=inst.cap_units() {
                for i in 0..n {
                    let (l, u) = lookups(&policy, t, q, i);
                    if i + 1 < n {
                        let (l2, u2) = lookups(&policy, t, q, i + 1);
                        c.checked += 2;
                        c.price += (l2 > l + 1) as usize + (u2 > u + 1) as usize;
                    }
                    if !slot.is_month_end() {
                        let (l2, u2) = lookups(&policy, t + 1, q, i);
                        let rises = (l2 > l + 1) as usize + (u2 > u + 1) as usize;
                        c.checked += 2;
                        if plain {
                            c.plain_slot += rises;
                        } else {
                            c.rollover_slot += rises;
                            if rises > 0 && c.first_rollover.is_none() {
                                c.first_rollover = Some((1000 + seed, t, q, i));
                            }
                        }
                    }
                }
            }
        }
    }
    c
}

pub fn monotonicity(configs: u64) -> Outcome {
    let c = monotonicity_counts(configs);
    Outcome::new(
        c.price + c.plain_slot + c.rollover_slot == 0,
        format!(
            "{} configs, {} comparisons; violations: prices {}, slots in plain months {}, slots in rollover months {} (first at {:?})",
            c.configs, c.checked, c.price, c.plain_slot, c.rollover_slot, c.first_rollover
        ),
    )
}

/// Rollover thresholds at `q = 0` equal the plain ones.
pub fn degeneracy(configs: u64) -> Outcome {
    let mut worst = 0usize;
    let mut checked = 0usize;
    for seed in 0..configs {
        let mut inst = random_instance(2000 + seed, 3, 5, 30);
        inst.plan = DataPlan::new(inst.plan.cap, inst.plan.subscription_fee, inst.plan.overage_price, 2 + seed as u32 % 2, inst.plan.slots_per_month)
            .unwrap();
        let roll = solve_instance(&inst, RolloverMode::Enabled);
        let plain = solve_instance(&inst, RolloverMode::Disabled);
        for t in 1..=inst.plan.total_slots() {
            for i in 0..inst.price_grid().len() {
                let (a, b) = (lookups(&roll, t, 0, i), lookups(&plain, t, 0, i));
                worst = worst.max(a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1));
                checked += 2;
            }
        }
    }
    Outcome::new(worst <= 1, format!("{configs} configs, {checked} comparisons, largest gap {worst} grid steps"))
}

/// Earlier months dominate later ones, and rollover shifts the aggregate
/// curves toward buying.
pub fn rollover_ordering(configs: u64) -> Outcome {
    let mut violations = 0usize;
    let mut checked = 0usize;
    for seed in 0..configs {
        let mut inst = random_instance(3000 + seed, 3, 4, 30);
        inst.plan = DataPlan::new(inst.plan.cap, inst.plan.subscription_fee, inst.plan.overage_price, 3, inst.plan.slots_per_month)
            .unwrap();
        let policy = solve_instance(&inst, RolloverMode::Enabled);
        let plan = inst.plan;
        let k = plan.slots_per_month;
        for m in 1..plan.months {
            for slot in 1..=k {
                let t = (m - 1) * k + slot;
                let last = (plan.months - 1) * k + slot;
                for q in 0..=inst.cap_units() {
                    for i in 0..inst.price_grid().len() {
                        let (l, u) = lookups(&policy, t, q, i);
                        let (ll, ul) = lookups(&policy, last, q, i);
                        let (ln, un) = lookups(&policy, t + k, q, i);
                        checked += 4;
                        violations += (l + 1 < ll) as usize + (u + 1 < ul) as usize;
                        violations += (ln > l + 1) as usize + (un > u + 1) as usize;
                    }
                }
            }
        }
    }

    let plan = DataPlan::new(1000.0, 100.0, 0.03, 3, 10).unwrap();
    let grid = VolumeGrid::default();
    let belief = PriceBelief::point_mass(PriceQuote::per_gb(10.0, 15.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models: Vec<DemandModel> = (0..20)
        .map(|_| DemandModel::new(rng.random_range(10.0..80.0), rng.random_range(5.0..50.0)).unwrap())
        .collect();
    let solved = |rollover| -> Vec<PolicyTable> {
        let config = SolverConfig { rollover, grid, ..SolverConfig::default() };
        models.iter().map(|m| solve(&plan, m, &UtilityFunction::default(), &belief, &config).unwrap().policy).collect()
    };
    let (roll, plain) = (solved(RolloverMode::Enabled), solved(RolloverMode::Disabled));
    let slot = plan.slot(1, 6).unwrap();
    let states: Vec<UserState> = (0..20)
        .map(|_| {
            let q = grid.volume(rng.random_range(0..=200));
            let e = grid.volume(rng.random_range(0..=60));
            UserState { short_term: e, long_term: q }
        })
        .collect();
    fn snapshot<'a>(slot: SlotIndex, states: &[UserState], tables: &'a [PolicyTable]) -> MarketSnapshot<'a> {
        MarketSnapshot::new(slot, states.iter().zip(tables).map(|(&state, policy)| Participant { state, policy }).collect())
            .unwrap()
    }
    let (sr, sp) = (snapshot(slot, &states, &roll), snapshot(slot, &states, &plain));
    let mut curve_violations = 0;
    let pg = roll[0].price_grid();
    for p in pg.prices() {
        curve_violations += (total_demand(&sr, p) < total_demand(&sp, p)) as usize;
        curve_violations += (total_supply(&sr, p) > total_supply(&sp, p)) as usize;
    }
    Outcome::new(
        violations == 0 && curve_violations == 0,
        format!(
            "{configs} configs, {checked} comparisons, {violations} threshold violations; 20-user curves: {curve_violations} of {} points violated",
            2 * pg.len()
        ),
    )
}

/// Closed-form linear case and revenue optimality on sampled curves.
pub fn clearing(instances: u64) -> Outcome {
    let prices: Vec<f64> = (0..=24).map(|i| i as f64 * 0.5).collect();
    let linear = MarketCurves::from_samples(
        prices.clone(),
        prices.iter().map(|p| (10.0 - p).max(0.0)).collect(),
        prices.iter().map(|p| (p - 2.0).max(0.0)).collect(),
        0.0,
    )
    .unwrap();
    let r = clear(&linear);
    let exact = r.open && (r.theta, r.buy_price, r.sell_price) == (2.0, 8.0, 4.0);

    let plan = DataPlan::new(1000.0, 100.0, 0.03, 2, 10).unwrap();
    let grid = VolumeGrid::default();
    let belief = PriceBelief::point_mass(PriceQuote::per_gb(10.0, 15.0).unwrap());
    let config = SolverConfig { grid, ..SolverConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap = 0.0f64;
    let mut worst_imbalance = 0.0f64;
    let mut opened = 0;
    for _ in 0..instances {
        let models: Vec<DemandModel> = (0..6)
            .map(|_| DemandModel::new(rng.random_range(10.0..80.0), rng.random_range(5.0..50.0)).unwrap())
            .collect();
        let tables: Vec<PolicyTable> =
            models.iter().map(|m| solve(&plan, m, &UtilityFunction::default(), &belief, &config).unwrap().policy).collect();
        let slot = plan.slot(rng.random_range(1..=2), rng.random_range(1..=10)).unwrap();
        let users: Vec<Participant> = (0..40)
            .map(|n| {
                let q = grid.volume(rng.random_range(0..=200));
                let e = grid.volume(rng.random_range(0..=100));
                Participant { state: UserState { short_term: e, long_term: q }, policy: &tables[n % tables.len()] }
            })
            .collect();
        let snapshot = MarketSnapshot::new(slot, users).unwrap();
        let curves = build_curves(&snapshot, 0.0).unwrap();
        let r = clear(&curves);
        if !r.open {
            continue;
        }
        opened += 1;
        let top = curves.max_theta();
        let mut theta = 0.0;
        while theta <= top {
            worst_gap = worst_gap.max(curves.revenue(theta) - r.revenue);
            theta += grid.step();
        }
        worst_imbalance = worst_imbalance.max((curves.demand_at(r.buy_price) - curves.supply_at(r.sell_price)).abs());
    }
    Outcome::new(
        exact && opened > 0 && worst_gap <= 1e-9 && worst_imbalance <= grid.step(),
        format!(
            "linear case (theta, p_b, p_s) = ({}, {}, {}); {opened}/{instances} sampled markets open, max R(theta) - R(theta*) = {worst_gap:.2e}, max |D - S| = {worst_imbalance:.3} MB",
            r.theta, r.buy_price, r.sell_price
        ),
    )
}

/// Policies do not depend on the utility function.
pub fn utility_invariance(configs: u64) -> Outcome {
    let mut identical = 0u64;
    for seed in 0..configs {
        let inst = random_instance(4000 + seed, 2, 5, 30);
        let log = solve_instance(&inst, inst.config.rollover);
        let power = solve_instance(&Instance { utility: UtilityFunction::Power { scale: 4.0, exponent: 0.5 }, ..inst.clone() }, inst.config.rollover);
        identical += (log == power) as u64;
    }
    Outcome::new(identical == configs, format!("{identical}/{configs} configs give identical tables"))
}

fn synthetic(model: &DemandModel, n: usize, seed: u64) -> UsageTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n).map(|_| model.sample(&mut rng)).collect();
    UsageTrace::from_values(format!("user-{seed}"), &values).unwrap()
}

/// Recovery of both profiles from 10^4 draws and KS discrimination.
pub fn fitting() -> Outcome {
    let truth = [DemandModel::new(15.2, 11.5).unwrap(), DemandModel::new(70.2, 46.1).unwrap()];
    let traces: Vec<UsageTrace> = truth.iter().enumerate().map(|(i, m)| synthetic(m, 10_000, 70 + i as u64)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    let fitted: Vec<DemandModel> = traces.iter().map(|t| fit(t, None).unwrap()).collect();
    for (m, f) in truth.iter().zip(&fitted) {
        let (em, es) = ((f.mean - m.mean).abs() / m.mean, (f.std_dev - m.std_dev).abs() / m.std_dev);
        pass &= em <= 0.05 && es <= 0.05;
        parts.push(format!("({:.2}, {:.2}) -> ({:.2}, {:.2})", m.mean, m.std_dev, f.mean, f.std_dev));
    }
    for (i, t) in traces.iter().enumerate() {
        let matched = ks_test(t, &fitted[i], 0.05).unwrap();
        let crossed = ks_test(t, &fitted[1 - i], 0.05).unwrap();
        pass &= !matched.reject && crossed.reject;
        parts.push(format!("KS matched D={:.4} crossed D={:.4} (crit {:.4})", matched.statistic, crossed.statistic, matched.critical_value));
    }
    Outcome::new(pass, parts.join("; "))
}

pub struct PairedRow {
    pub seed: u64,
    pub payoff: f64,
    pub revenue: f64,
    pub trading: f64,
    pub buy: f64,
    pub sell: f64,
    pub secs: f64,
}

/// Paired evaluation runs, one row per seed.
pub fn paired_evaluation(seeds: &[u64]) -> Vec<PairedRow> {
    seeds
        .iter()
        .map(|&seed| {
            let start = Instant::now();
            let (without, with) = run_paired(&ScenarioConfig::evaluation(seed)).unwrap();
            let report = rollover_core::sim::compare(&without, &with).unwrap();
            PairedRow {
                seed,
                payoff: report.payoff_delta_pct.unwrap_or(f64::NAN),
                revenue: report.revenue_delta_pct.unwrap_or(f64::NAN),
                trading: report.trading_revenue_delta_pct.unwrap_or(f64::NAN),
                buy: report.buy_price_delta_pct.unwrap_or(f64::NAN),
                sell: report.sell_price_delta_pct.unwrap_or(f64::NAN),
                secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn small_scenario(users: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        plan: DataPlan::new(300.0, 5.0, 0.03, 3, 5).unwrap(),
        population: PopulationSpec::Pool {
            users,
            profiles: 6,
            anchors: vec![DemandModel::new(15.2, 11.5).unwrap(), DemandModel::new(70.2, 46.1).unwrap()],
            spread: 0.25,
            utility_spread: 0.5,
        },
        ..ScenarioConfig::evaluation(seed)
    }
}

/// Slot-level trade conservation (checked inside every run) and the
/// economy-wide money identity: user payoffs plus operator revenue equal the
/// utility consumed.
pub fn accounting(runs: u64) -> Outcome {
    let mut worst = 0.0f64;
    let mut slots = 0usize;
    let mut ok = true;
    for seed in 0..runs {
        let config = small_scenario(12 + 4 * seed as usize, seed);
        let population = config.population.materialize(seed).unwrap();
        let draws = demand_draws(&population, &config.plan, config.grid, seed);
        for rollover in [RolloverMode::Disabled, RolloverMode::Enabled] {
            let config = config.with_rollover(rollover);
            let metrics = match run_with(&config, &population, &draws) {
                Ok(m) => m,
                Err(_) => {
                    ok = false;
                    continue;
                }
            };
            slots += metrics.slots.len();
            let utility: f64 = metrics
                .roster
                .iter()
                .map(|&n| {
                    let scale = population.utility_scale[n];
                    draws[n].iter().map(|&d| scale * config.utility.eval(config.grid.volume(d as usize))).sum::<f64>()
                })
                .sum();
            let payoffs: f64 = metrics.user_month_payoff.iter().flatten().sum();
            let revenue: f64 = metrics.operator.iter().map(|o| o.total()).sum();
            worst = worst.max((payoffs + revenue - utility).abs() / utility.max(1.0));
            for s in &metrics.slots {
                if let (Some(ps), Some(pb)) = (s.sell_price, s.buy_price) {
                    let margin = (pb - ps) * s.volume;
                    worst = worst.max((margin - s.revenue_trade).abs());
                }
            }
        }
    }
    Outcome::new(ok && worst <= 1e-9, format!("{runs} paired runs, {slots} slots, largest relative imbalance {worst:.2e}"))
}
