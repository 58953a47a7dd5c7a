mod common;

use common::criteria;
use common::{random_instance, Oracle};

#[test]
fn thresholds_fall_with_prices_and_within_plain_months() {
    let c = criteria::monotonicity_counts(24);
    assert_eq!(c.price, 0);
    assert_eq!(c.plain_slot, 0);
    assert!(c.checked > 100_000);
}

/// With a full long-term balance late in the month, buying short-term data
/// shields the balance so it rolls over; the buy-up-to level can then rise
/// from one slot to the next. The exhaustive search agrees.
#[test]
fn rollover_month_thresholds_can_rise_within_month() {
    let inst = random_instance(1017, 3, 5, 30);
    let oracle = Oracle::solve(&inst);
    let price = inst.price_grid().price(14) * inst.config.grid.step();
    let levels: Vec<usize> = (1..=3).map(|t| oracle.thresholds(t, 15, price).0).collect();
    assert_eq!(levels, vec![24, 26, 27]);
}

#[test]
fn empty_long_term_balance_gives_plain_thresholds() {
    let o = criteria::degeneracy(12);
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn earlier_months_dominate_and_curves_shift() {
    let o = criteria::rollover_ordering(10);
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn utility_does_not_change_policies() {
    let o = criteria::utility_invariance(5);
    assert!(o.pass, "{}", o.detail);
}
