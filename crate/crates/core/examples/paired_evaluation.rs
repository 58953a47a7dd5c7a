//! Runs the evaluation scenario with and without rollover for a few seeds and
//! prints the relative changes.

use std::time::Instant;

use rollover_core::sim::{compare, run_paired, ScenarioConfig};

fn main() {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3, 4, 5] } else { seeds };
    for seed in seeds {
        let start = Instant::now();
        let (without, with) = run_paired(&ScenarioConfig::evaluation(seed)).expect("run");
        let r = compare(&without, &with).expect("compare");
        println!(
            "seed {seed}: payoff {:+.2}% revenue {:+.2}% trading {:+.2}% buy {:?} sell {:?} roster {}/{} ({:.1}s)",
            r.payoff_delta_pct.unwrap_or(f64::NAN),
            r.revenue_delta_pct.unwrap_or(f64::NAN),
            r.trading_revenue_delta_pct.unwrap_or(f64::NAN),
            r.buy_price_delta_pct,
            r.sell_price_delta_pct,
            r.baseline.subscribers,
            r.treatment.subscribers,
            start.elapsed().as_secs_f64()
        );
        println!("  without {:?}", r.baseline);
        println!("  with    {:?}", r.treatment);
    }
}
