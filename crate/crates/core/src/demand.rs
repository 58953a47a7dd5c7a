//! Daily demand: a normal distribution truncated at zero, fitted per user from
//! usage traces and checked with a Kolmogorov-Smirnov test.

use std::collections::BTreeMap;
use std::io::Read;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::DemandError;
use crate::model::VolumeGrid;

/// Minimum number of daily observations accepted by [`fit`].
pub const MIN_FIT_OBSERVATIONS: usize = 30;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Normal `N(mean, std_dev^2)` truncated to `[0, inf)`, in MB per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub mean: f64,
    pub std_dev: f64,
}

impl DemandModel {
    pub fn new(mean: f64, std_dev: f64) -> Result<Self, DemandError> {
        if !mean.is_finite() || !(std_dev > 0.0 && std_dev.is_finite()) {
            return Err(DemandError::InvalidModel(format!("mean {mean}, std dev {std_dev}")));
        }
        Ok(Self { mean, std_dev })
    }

    /// Probability mass of the untruncated normal on `[0, inf)`.
    fn normalizer(&self) -> f64 {
        std_normal().cdf(self.mean / self.std_dev)
    }

    fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std_dev
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        std_normal().pdf(self.standardize(x)) / (self.std_dev * self.normalizer())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        1.0 - self.survival(x)
    }

    /// `P(X > x)`, computed from the upper tail to keep precision far out.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let n = std_normal();
        (n.sf(self.standardize(x)) / self.normalizer()).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let n = std_normal();
        let lo = n.cdf(-self.mean / self.std_dev);
        let u = (lo + p.clamp(0.0, 1.0) * (1.0 - lo)).min(1.0 - f64::EPSILON);
        (self.mean + self.std_dev * n.inverse_cdf(u)).max(0.0)
    }

    pub fn expected_value(&self) -> f64 {
        self.expected_shortfall(0.0)
    }

    /// `E[(X - z)^+]` in closed form.
    pub fn expected_shortfall(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let n = std_normal();
        let d = self.standardize(z);
        let v = (self.std_dev * n.pdf(d) + (self.mean - z) * n.sf(d)) / self.normalizer();
        v.max(0.0)
    }

    /// One draw by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// `E[f(X)]` by adaptive Simpson quadrature over the bulk of the support.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let hi = self.mean.max(0.0) + 12.0 * self.std_dev;
        let g = |x: f64| f(x) * self.density(x);
        // split at the mode so the peak is never straddled
        let mode = self.mean.clamp(0.0, hi);
        let mut total = 0.0;
        for (a, b) in [(0.0, mode), (mode, hi)] {
            if b > a {
                total += adaptive_simpson(&g, a, b, 1e-12, 40);
            }
        }
        total
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Demand snapped to the volume grid: `masses[j]` is the probability that a draw
/// rounds to `j` grid steps. The last cell absorbs the far tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDemand {
    masses: Vec<f64>,
    step: f64,
}

impl DiscreteDemand {
    const TAIL: f64 = 1e-12;
    const MAX_CELLS: usize = 1 << 16;

    pub fn from_model(model: &DemandModel, grid: VolumeGrid) -> Self {
        let s = grid.step();
        let mut masses = Vec::new();
        let mut below = 0.0;
        for j in 0..Self::MAX_CELLS {
            let upper = (j as f64 + 0.5) * s;
            let tail = model.survival(upper);
            if tail < Self::TAIL {
                masses.push(1.0 - below);
                break;
            }
            let cdf_up = 1.0 - tail;
            masses.push(cdf_up - below);
            below = cdf_up;
        }
        Self { masses, step: s }
    }

    /// Demand of exactly `units` grid steps every slot.
    pub fn point_mass(units: usize, grid: VolumeGrid) -> Self {
        let mut masses = vec![0.0; units + 1];
        masses[units] = 1.0;
        Self { masses, step: grid.step() }
    }

    pub fn from_masses(masses: Vec<f64>, grid: VolumeGrid) -> Result<Self, DemandError> {
        let sum: f64 = masses.iter().sum();
        if masses.is_empty() || masses.iter().any(|m| !(*m >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DemandError::InvalidModel("masses must be non-negative and sum to 1".into()));
        }
        Ok(Self { masses, step: grid.step() })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Nonzero cells as `(units, probability)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.masses.iter().copied().enumerate().filter(|(_, p)| *p > 0.0)
    }

    pub fn expected_units(&self) -> f64 {
        self.support().map(|(j, p)| j as f64 * p).sum()
    }

    /// `E[(X - z)^+]` in grid units.
    pub fn expected_shortfall_units(&self, z: usize) -> f64 {
        self.support().filter(|(j, _)| *j > z).map(|(j, p)| (j - z) as f64 * p).sum()
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.support().map(|(j, p)| p * f(j as f64 * self.step)).sum()
    }
}

/// Daily usage of one user, days strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageTrace {
    pub user_id: String,
    days: Vec<(u32, f64)>,
}

impl UsageTrace {
    pub fn new(user_id: impl Into<String>, days: Vec<(u32, f64)>) -> Result<Self, DemandError> {
        for w in days.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DemandError::InvalidTrace(format!(
                    "day indices not strictly increasing at day {}",
                    w[1].0
                )));
            }
        }
        if let Some((d, mb)) = days.iter().find(|(_, mb)| !(*mb >= 0.0 && mb.is_finite())) {
            return Err(DemandError::InvalidTrace(format!("day {d}: invalid volume {mb}")));
        }
        Ok(Self { user_id: user_id.into(), days })
    }

    /// Trace from consecutive daily values starting at day 1.
    pub fn from_values(user_id: impl Into<String>, values: &[f64]) -> Result<Self, DemandError> {
        Self::new(user_id, values.iter().enumerate().map(|(i, v)| (i as u32 + 1, *v)).collect())
    }

    pub fn days(&self) -> &[(u32, f64)] {
        &self.days
    }

    pub fn values(&self) -> Vec<f64> {
        self.days.iter().map(|(_, v)| *v).collect()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// Reads a `user_id,day,mb` CSV. Rows for the same user and day are summed
/// (per-connection records become daily totals). Users come back sorted by id.
pub fn read_traces<R: Read>(reader: R) -> Result<Vec<UsageTrace>, DemandError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DemandError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let expected = ["user_id", "day", "mb"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(DemandError::Parse {
            line: 1,
            message: format!("expected header `user_id,day,mb`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut per_user: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DemandError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| DemandError::Parse { line, message };
        let user = record[0].to_string();
        if user.is_empty() {
            return Err(bad("empty user_id".into()));
        }
        let day: u32 = record[1].parse().map_err(|_| bad(format!("invalid day `{}`", &record[1])))?;
        let mb: f64 = record[2].parse().map_err(|_| bad(format!("invalid mb `{}`", &record[2])))?;
        if !(mb >= 0.0 && mb.is_finite()) {
            return Err(bad(format!("mb must be a non-negative number, got {mb}")));
        }
        *per_user.entry(user).or_default().entry(day).or_insert(0.0) += mb;
    }
    if per_user.is_empty() {
        return Err(DemandError::EmptyTrace);
    }
    per_user
        .into_iter()
        .map(|(user, days)| UsageTrace::new(user, days.into_iter().collect()))
        .collect()
}

struct HistogramLoss {
    edges: Vec<f64>,
    empirical: Vec<f64>,
}

impl HistogramLoss {
    fn loss(&self, mean: f64, log_sd: f64) -> f64 {
        let model = DemandModel { mean, std_dev: log_sd.exp() };
        if !model.std_dev.is_finite() || model.std_dev <= 0.0 {
            return f64::INFINITY;
        }
        let mut lo = model.cdf(self.edges[0]);
        let mut total = 0.0;
        for (i, emp) in self.empirical.iter().enumerate() {
            let hi = model.cdf(self.edges[i + 1]);
            let width = self.edges[i + 1] - self.edges[i];
            let d = emp - (hi - lo) / width;
            total += d * d;
            lo = hi;
        }
        total
    }
}

impl CostFunction for HistogramLoss {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<Self::Output, argmin::core::Error> {
        Ok(self.loss(p[0], p[1]))
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares fit of the truncated normal to the trace's histogram density.
/// `bin_width` defaults to a quarter of the sample standard deviation.
pub fn fit(trace: &UsageTrace, bin_width: Option<f64>) -> Result<DemandModel, DemandError> {
    let values = trace.values();
    if values.len() < MIN_FIT_OBSERVATIONS {
        return Err(DemandError::TooFewObservations { got: values.len(), need: MIN_FIT_OBSERVATIONS });
    }
    let (mean, sd) = mean_and_sd(&values);
    if !(sd > 0.0) {
        return Err(DemandError::DegenerateTrace(values[0]));
    }
    let width = bin_width.unwrap_or(sd / 4.0);
    if !(width > 0.0 && width.is_finite()) {
        return Err(DemandError::InvalidTrace(format!("bin width {width}")));
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let bins = ((max / width).floor() as usize + 1).max(1);
    let mut counts = vec![0usize; bins];
    for v in &values {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    let loss = HistogramLoss {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        empirical: counts.iter().map(|c| *c as f64 / (n * width)).collect(),
    };

    let start = vec![mean, sd.ln()];
    let simplex = vec![start.clone(), vec![mean + 0.2 * sd, sd.ln()], vec![mean, sd.ln() + 0.2]];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-14)
        .map_err(|e| DemandError::FitFailed(e.to_string()))?;
    let res = Executor::new(loss, solver)
        .configure(|s| s.max_iters(4000))
        .run()
        .map_err(|e| DemandError::FitFailed(e.to_string()))?;
    let best = res
        .state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| DemandError::FitFailed("no parameters".into()))?;
    DemandModel::new(best[0], best[1].exp())
}

/// Sample mean and standard deviation, the starting point of [`fit`].
pub fn moments(trace: &UsageTrace) -> Option<(f64, f64)> {
    (trace.len() >= 2).then(|| mean_and_sd(&trace.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
}

/// Asymptotic Kolmogorov critical coefficient `c(alpha)`.
pub fn ks_coefficient(significance: f64) -> f64 {
    (-0.5 * (significance / 2.0).ln()).sqrt()
}

/// One-sample KS test of the trace against `model`, asymptotic critical value.
pub fn ks_test(trace: &UsageTrace, model: &DemandModel, significance: f64) -> Result<KsOutcome, DemandError> {
    if trace.is_empty() {
        return Err(DemandError::EmptyTrace);
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(DemandError::InvalidTrace(format!("significance {significance} outside (0, 1)")));
    }
    let mut values = trace.values();
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len() as f64;
    let mut statistic: f64 = 0.0;
    for (i, x) in values.iter().enumerate() {
        let f = model.cdf(*x);
        statistic = statistic.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let critical_value = ks_coefficient(significance) / n.sqrt();
    Ok(KsOutcome { statistic, critical_value, reject: statistic > critical_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const USER1: (f64, f64) = (15.2, 11.5);
    const USER2: (f64, f64) = (70.2, 46.1);

    fn model((m, s): (f64, f64)) -> DemandModel {
        DemandModel::new(m, s).unwrap()
    }

    fn draws(m: &DemandModel, n: usize, seed: u64) -> UsageTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        UsageTrace::from_values("u", &v).unwrap()
    }

    #[test]
    fn half_normal_density_at_zero() {
        assert_relative_eq!(model((0.0, 1.0)).density(0.0), 0.797_884_56, epsilon = 1e-6);
        assert_eq!(model(USER1).density(-0.5), 0.0);
    }

    #[test]
    fn shortfall_limits() {
        let m = model(USER1);
        assert_relative_eq!(m.expected_shortfall(0.0), m.expected_value());
        assert!(model((0.0, 1.0)).expected_shortfall(60.0) < 1e-300 + 1e-12);
        // half-normal mean sqrt(2/pi)
        assert_relative_eq!(model((0.0, 1.0)).expected_value(), (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form_mean() {
        let m = model(USER2);
        assert_relative_eq!(m.expectation(|x| x), m.expected_value(), epsilon = 1e-8);
    }

    #[test]
    fn fit_rejects_short_and_flat_traces() {
        let short = UsageTrace::from_values("u", &[1.0; 10]).unwrap();
        assert!(matches!(fit(&short, None), Err(DemandError::TooFewObservations { got: 10, .. })));
        let flat = UsageTrace::from_values("u", &[4.0; 40]).unwrap();
        assert!(matches!(fit(&flat, None), Err(DemandError::DegenerateTrace(_))));
    }

    #[test]
    fn fit_recovers_parameters() {
        for p in [USER1, USER2] {
            let m = model(p);
            let f = fit(&draws(&m, 10_000, 7), None).unwrap();
            assert!((f.mean - p.0).abs() / p.0 < 0.05, "{f:?}");
            assert!((f.std_dev - p.1).abs() / p.1 < 0.05, "{f:?}");
            // deterministic
            assert_eq!(f, fit(&draws(&m, 10_000, 7), None).unwrap());
        }
    }

    #[test]
    fn ks_on_quantile_trace_and_mismatch() {
        let m = model(USER1);
        let n = 500;
        let q: Vec<f64> = (0..n).map(|i| m.quantile((i as f64 + 0.5) / n as f64)).collect();
        let out = ks_test(&UsageTrace::from_values("u", &q).unwrap(), &m, 0.05).unwrap();
        assert!(out.statistic < 0.01 && !out.reject, "{out:?}");

        let heavy = draws(&model(USER2), 10_000, 3);
        assert!(ks_test(&heavy, &m, 0.05).unwrap().reject);
        let empty = UsageTrace::new("x", vec![]).unwrap();
        assert!(matches!(ks_test(&empty, &m, 0.05), Err(DemandError::EmptyTrace)));
    }

    #[test]
    fn ks_coefficient_at_five_percent() {
        assert_relative_eq!(ks_coefficient(0.05), 1.3581, epsilon = 1e-4);
    }

    #[test]
    fn discrete_demand_sums_to_one() {
        let g = VolumeGrid::new(5.0).unwrap();
        for p in [USER1, USER2, (-20.0, 10.0)] {
            let d = DiscreteDemand::from_model(&model(p), g);
            assert_relative_eq!(d.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let d = DiscreteDemand::point_mass(3, g);
        assert_eq!(d.expected_units(), 3.0);
        assert_eq!(d.expected_shortfall_units(1), 2.0);
    }

    #[test]
    fn parses_and_aggregates_rows() {
        let csv = "user_id,day,mb\na,1,2.5\na,1,1.5\nb,2,3\na,2,0\n";
        let t = read_traces(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].days(), &[(1, 4.0), (2, 0.0)]);
        match read_traces("user_id,day,mb\na,1,2\na,x,1\n".as_bytes()) {
            Err(DemandError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_traces("".as_bytes()), Err(DemandError::Parse { .. })));
        assert!(matches!(read_traces("user_id,day,mb\n".as_bytes()), Err(DemandError::EmptyTrace)));
        assert!(read_traces("user_id,day,mb\na,1,-2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn cdf_monotone(mean in -30.0f64..100.0, sd in 0.5f64..60.0, a in 0.0f64..300.0, b in 0.0f64..300.0) {
            let m = DemandModel::new(mean, sd).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.cdf(lo) <= m.cdf(hi) + 1e-15);
            prop_assert_eq!(m.cdf(0.0), 0.0);
            prop_assert!((m.cdf(mean.max(0.0) + 40.0 * sd) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shortfall_is_one_lipschitz_and_decreasing(
            mean in -30.0f64..100.0, sd in 0.5f64..60.0, z in 0.0f64..300.0, dz in 1e-3f64..50.0
        ) {
            let m = DemandModel::new(mean, sd).unwrap();
            let (a, b) = (m.expected_shortfall(z), m.expected_shortfall(z + dz));
            prop_assert!(a >= b - 1e-12);
            prop_assert!(a - b <= dz + 1e-12);
        }
    }
}
