mod common;

use common::criteria;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rollover_core::demand::{fit, read_traces, DemandModel, UsageTrace};

#[test]
fn recovers_both_profiles_and_ks_separates_them() {
    let o = criteria::fitting();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn csv_round_trip_keeps_users_apart() {
    let model = DemandModel::new(15.2, 11.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut csv = String::from("user_id,day,mb\n");
    for user in ["a", "b"] {
        for day in 0..400 {
            csv.push_str(&format!("{user},{day},{:.3}\n", model.sample(&mut rng)));
        }
    }
    let traces = read_traces(csv.as_bytes()).unwrap();
    assert_eq!(traces.len(), 2);
    for t in &traces {
        assert_eq!(t.len(), 400);
        let f = fit(t, None).unwrap();
        assert!((f.mean - 15.2).abs() / 15.2 < 0.15, "{f:?}");
    }
}

#[test]
fn too_short_traces_are_rejected() {
    let t = UsageTrace::from_values("x", &[1.0, 2.0, 3.0]).unwrap();
    assert!(fit(&t, None).is_err());
}
