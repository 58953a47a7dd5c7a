use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rollover_core::demand::{fit, ks_test, read_traces};
use rollover_core::market::write_clearing_log;
use rollover_core::model::{RolloverMode, MB_PER_GB};
use rollover_core::policy::{solve, PriceBelief, SolverConfig};
use rollover_core::sim::{compare, run_paired, write_metrics_csv, ComparisonReport, EpisodeMetrics};
use serde::Serialize;

use crate::config::{Config, FittedUser};
use crate::manifest::{FileDigest, RunManifest};
use crate::{Cli, CliError, Command};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit { trace, output, bin_width, significance } => {
            cmd_fit(trace, output.as_ref().or(cli.out.as_ref()).map(PathBuf::as_path), *bin_width, *significance)
        }
        Command::Thresholds { config, output } => {
            let config = with_overrides(Config::load(config)?, cli);
            let out = output.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| "thresholds.csv".into());
            cmd_thresholds(&config, &out)
        }
        Command::Simulate { config, output, from_manifest } => {
            // With a manifest the only positional argument is the output directory.
            let (config, output) = match (from_manifest, config, output) {
                (Some(_), Some(_), Some(_)) => {
                    return Err(CliError::Input("--from-manifest replaces the config file".into()));
                }
                (Some(_), dir, None) => (None, dir.clone()),
                (_, config, output) => (config.clone(), output.clone()),
            };
            let out = output.or_else(|| cli.out.clone()).unwrap_or_else(|| "run".into());
            let (config, inputs) = match (from_manifest, &config) {
                (Some(path), _) => {
                    let manifest = RunManifest::load(path)?;
                    manifest.verify_inputs()?;
                    (manifest.config, manifest.inputs)
                }
                (None, Some(path)) => {
                    let config = with_overrides(Config::load(path)?, cli);
                    let mut inputs = vec![FileDigest::of(path)?];
                    if let Some(models) = &config.population.models_file {
                        inputs.push(FileDigest::of(models)?);
                    }
                    (config, inputs)
                }
                (None, None) => return Err(CliError::Input("simulate needs a config file or --from-manifest".into())),
            };
            cmd_simulate(&config, inputs, &out)
        }
        Command::Compare { baseline, treatment } => cmd_compare(baseline, treatment, cli.out.as_deref()),
    }
}

fn with_overrides(mut config: Config, cli: &Cli) -> Config {
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(step) = cli.grid_mb {
        config.solver.grid_mb = step;
    }
    if let Some(spacing) = cli.price_grid {
        config.solver.price_grid_per_gb = spacing;
    }
    config
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path.display(), e))
}

fn cmd_fit(trace: &Path, output: Option<&Path>, bin_width: Option<f64>, significance: f64) -> Result<(), CliError> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(CliError::Input(format!("significance {significance} outside (0, 1)")));
    }
    let file = File::open(trace).map_err(|e| CliError::Input(format!("cannot read {}: {e}", trace.display())))?;
    let traces = read_traces(file)?;
    let mut fitted = Vec::with_capacity(traces.len());
    println!("{:<16} {:>6} {:>10} {:>10} {:>8} {:>8}  ks", "user", "days", "mean_mb", "sd_mb", "D", "crit");
    for t in &traces {
        let model = fit(t, bin_width)?;
        let ks = ks_test(t, &model, significance)?;
        println!(
            "{:<16} {:>6} {:>10.3} {:>10.3} {:>8.4} {:>8.4}  {}",
            t.user_id,
            t.len(),
            model.mean,
            model.std_dev,
            ks.statistic,
            ks.critical_value,
            if ks.reject { "reject" } else { "accept" }
        );
        fitted.push(FittedUser {
            user_id: t.user_id.clone(),
            days: t.len(),
            mean_mb: model.mean,
            sd_mb: model.std_dev,
            ks_statistic: ks.statistic,
            ks_critical: ks.critical_value,
            ks_reject: ks.reject,
        });
    }
    if let Some(out) = output {
        write_json(out, &fitted)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ThresholdRow {
    user: usize,
    mean_mb: f64,
    sd_mb: f64,
    discount: f64,
    m: u32,
    k: u32,
    q_gb: f64,
    buy_up_to_gb: f64,
    sell_down_to_gb: f64,
    last_month_buy_up_to_gb: f64,
    last_month_sell_down_to_gb: f64,
}

fn cmd_thresholds(config: &Config, out: &Path) -> Result<(), CliError> {
    let plan = config.plan()?;
    let grid = config.grid()?;
    let quote = config.quote()?;
    let belief = PriceBelief::point_mass(quote);
    log::info!("volumes in MB internally: 1 GB = {MB_PER_GB} MB, grid step {} MB", grid.step());
    if config.thresholds.q_step_gb <= 0.0 {
        return Err(CliError::Input("thresholds.q_step_gb must be positive".into()));
    }
    let q_step = grid.snap_index(config.thresholds.q_step_gb * MB_PER_GB).max(1);
    let cap = grid.index_of(plan.cap)?;
    let mut levels: Vec<usize> = (0..=cap).step_by(q_step).collect();
    if levels.last() != Some(&cap) {
        levels.push(cap);
    }
    let mut w = csv::Writer::from_writer(create(out)?);
    for (user, model) in config.threshold_users()?.iter().enumerate() {
        for &discount in &config.thresholds.discounts {
            let solver = SolverConfig {
                grid,
                price_grid: Some(config.price_grid()?),
                discount,
                rollover: RolloverMode::Enabled,
                ..SolverConfig::default()
            };
            let policy = solve(&plan, model, &config.utility, &belief, &solver)?.policy;
            for slot in plan.slots() {
                let last = plan.slot(plan.months, slot.slot())?.flat();
                let (pl, pu) = policy.thresholds_mb(last, 0.0, quote.sell, quote.buy)?;
                for &q in &levels {
                    let (l, u) = policy.thresholds_mb(slot.flat(), grid.volume(q), quote.sell, quote.buy)?;
                    w.serialize(ThresholdRow {
                        user,
                        mean_mb: model.mean,
                        sd_mb: model.std_dev,
                        discount,
                        m: slot.month(),
                        k: slot.slot(),
                        q_gb: grid.volume(q) / MB_PER_GB,
                        buy_up_to_gb: l / MB_PER_GB,
                        sell_down_to_gb: u / MB_PER_GB,
                        last_month_buy_up_to_gb: pl / MB_PER_GB,
                        last_month_sell_down_to_gb: pu / MB_PER_GB,
                    })
                    .map_err(|e| CliError::Other(e.to_string()))?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(out.display(), e))
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a Config,
    report: &'a ComparisonReport,
}

fn cmd_simulate(config: &Config, inputs: Vec<FileDigest>, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out.display(), e))?;
    let scenario = config.scenario(RolloverMode::Enabled)?;
    log::info!(
        "simulating {} users for {} months (volumes in MB internally, grid step {} MB)",
        scenario.population.users(),
        scenario.plan.months,
        scenario.grid.step()
    );
    let start = Instant::now();
    let (without, with) = run_paired(&scenario)?;
    log::info!("both arms finished in {:.1} s", start.elapsed().as_secs_f64());
    let report = compare(&without, &with)?;

    let mut written = Vec::new();
    for (name, metrics) in [("without", &without), ("with", &with)] {
        let csv_path = out.join(format!("metrics_{name}.csv"));
        write_metrics_csv(create(&csv_path)?, metrics)?;
        let log_path = out.join(format!("clearing_{name}.csv"));
        write_clearing_log(create(&log_path)?, &metrics.clearing_log()).map_err(|e| CliError::Other(e.to_string()))?;
        let json_path = out.join(format!("episode_{name}.json"));
        write_json(&json_path, metrics)?;
        written.extend([csv_path, log_path, json_path]);
    }
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &Summary { config, report: &report })?;
    written.push(summary_path);

    let mut manifest = RunManifest::new("simulate", config);
    manifest.inputs = inputs;
    for path in &written {
        let mut digest = FileDigest::of(path)?;
        digest.path = path.strip_prefix(out).unwrap_or(path).to_path_buf();
        manifest.outputs.push(digest);
    }
    manifest.write(&out.join("manifest.json"))?;

    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:+.2}%"));
    println!("subscribers        {:>10} {:>10}", report.baseline.subscribers, report.treatment.subscribers);
    println!(
        "payoff HKD/month   {:>10.3} {:>10.3}  {}",
        report.baseline.mean_monthly_payoff,
        report.treatment.mean_monthly_payoff,
        pct(report.payoff_delta_pct)
    );
    println!(
        "revenue HKD/month  {:>10.1} {:>10.1}  {}",
        report.baseline.monthly_revenue,
        report.treatment.monthly_revenue,
        pct(report.revenue_delta_pct)
    );
    println!(
        "trading HKD/month  {:>10.1} {:>10.1}  {}",
        report.baseline.monthly_trading_revenue,
        report.treatment.monthly_trading_revenue,
        pct(report.trading_revenue_delta_pct)
    );
    println!("buy price          {:>21}  {}", "", pct(report.buy_price_delta_pct));
    println!("sell price         {:>21}  {}", "", pct(report.sell_price_delta_pct));
    Ok(())
}

fn cmd_compare(baseline: &Path, treatment: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let load = |path: &Path| -> Result<EpisodeMetrics, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    };
    let report = compare(&load(baseline)?, &load(treatment)?)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| CliError::io(path.display(), e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
