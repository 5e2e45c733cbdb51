use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tierq::harness::{self, AlphaSpec, ExperimentConfig, MergeRateSpec, Scenario};
use tierq::merge::{budget_from_rate, progressive_merge};
use tierq::network::simulate;
use tierq::textfmt::fmt_sig;
use tierq::workload::WorkloadMode;

#[derive(Parser)]
#[command(name = "tierq", version, about = "Progressive query merging for hierarchical sensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the inverted hierarchical query structure and write it out.
    Merge(Common),
    /// Print the analytic optimal merge rate.
    Optimize(Common),
    /// Simulate one merge rate and report per-tier costs.
    Simulate(Common),
    /// Run a predefined experiment or the configured sweep; writes CSV.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Predefined experiment id (0 to 12).
        #[arg(long)]
        exp: Option<u32>,
        /// Directory for the cost-vs-m curve files.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Compare the progressive structure against the flat baseline.
    Compare(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML file with any of the keys below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Absolute value, or `a0x<k>` for k times alpha0.
    #[arg(long)]
    alpha: Option<String>,
    /// A rate, `grid:<start>:<stop>:<step>`, or `opt`.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    /// Number of queries.
    #[arg(long, conflicts_with = "cover")]
    nq: Option<usize>,
    /// Target cover; queries are drawn until it is reached.
    #[arg(long)]
    cover: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Bytes per data element (default 4 per dimension).
    #[arg(long)]
    element_size: Option<u64>,
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    label: Option<String>,
}

/// Flat key-value config file; every key is optional.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    label: Option<String>,
    seed: Option<u64>,
    alpha: Option<toml::Value>,
    m: Option<toml::Value>,
    h: Option<usize>,
    f: Option<usize>,
    d: Option<usize>,
    s: Option<f64>,
    nq: Option<usize>,
    cover: Option<f64>,
    epochs: Option<usize>,
    element_size: Option<u64>,
    baseline: Option<bool>,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_alpha(text: &str) -> Result<AlphaSpec> {
    let text = text.trim();
    if let Some(k) = text.strip_prefix("a0x") {
        return Ok(AlphaSpec::TimesAlpha0(k.parse().with_context(|| format!("bad alpha multiple {k:?}"))?));
    }
    Ok(AlphaSpec::Absolute(text.parse().with_context(|| format!("bad alpha {text:?}"))?))
}

fn parse_rate(text: &str) -> Result<MergeRateSpec> {
    let text = text.trim();
    if text == "opt" {
        return Ok(MergeRateSpec::Optimize);
    }
    if let Some(rest) = text.strip_prefix("grid:") {
        let parts: Vec<f64> = rest
            .split(':')
            .map(|p| p.parse::<f64>().with_context(|| format!("bad grid value {p:?}")))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            bail!("grid needs start:stop:step, got {rest:?}");
        };
        return Ok(MergeRateSpec::Grid { start, stop, step });
    }
    Ok(MergeRateSpec::Fixed(text.parse().with_context(|| format!("bad merge rate {text:?}"))?))
}

/// Defaults, then the config file, then flags.
fn build_config(c: &Common, default_rate: MergeRateSpec) -> Result<ExperimentConfig> {
    let file = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = ExperimentConfig {
        merge_rate: default_rate,
        ..ExperimentConfig::default()
    };
    let alpha = c.alpha.clone().or(file.alpha.as_ref().map(value_text));
    if let Some(a) = alpha {
        cfg.alpha = parse_alpha(&a)?;
    }
    let rate = c.m.clone().or(file.m.as_ref().map(value_text));
    if let Some(m) = rate {
        cfg.merge_rate = parse_rate(&m)?;
    }
    cfg.label = c.label.clone().or(file.label).unwrap_or(cfg.label);
    cfg.seed = c.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.height = c.h.or(file.h).unwrap_or(cfg.height);
    cfg.fanout = c.f.or(file.f).unwrap_or(cfg.fanout);
    cfg.dim = c.d.or(file.d).unwrap_or(cfg.dim);
    cfg.selectivity = c.s.or(file.s).unwrap_or(cfg.selectivity);
    cfg.epochs = c.epochs.or(file.epochs).unwrap_or(cfg.epochs);
    cfg.element_size = c.element_size.or(file.element_size).unwrap_or(4 * cfg.dim as u64);
    cfg.baseline = c.baseline || file.baseline.unwrap_or(false);
    // flags beat the file; between the two workload modes the flag wins too
    cfg.mode = match (c.nq, c.cover, file.nq, file.cover) {
        (Some(n), _, _, _) => WorkloadMode::ByCount(n),
        (_, Some(cv), _, _) => WorkloadMode::ByCover(cv),
        (_, _, Some(_), Some(_)) => bail!("config sets both nq and cover"),
        (_, _, Some(n), _) => WorkloadMode::ByCount(n),
        (_, _, _, Some(cv)) => WorkloadMode::ByCover(cv),
        _ => cfg.mode,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Resolves a fixed or `opt` rate; grids are not meaningful for one run.
fn single_rate(scenario: &Scenario) -> Result<f64> {
    Ok(match scenario.config.merge_rate {
        MergeRateSpec::Fixed(m) => scenario.clamp_rate(m),
        MergeRateSpec::Optimize => scenario.estimated_optimum()?.merge_rate,
        MergeRateSpec::Grid { .. } => bail!("this command takes a single merge rate, not a grid"),
    })
}

fn cmd_merge(c: &Common) -> Result<()> {
    let cfg = build_config(c, MergeRateSpec::Optimize)?;
    let scenario = Scenario::prepare(&cfg)?;
    let m = single_rate(&scenario)?;
    let budget = budget_from_rate(scenario.queries.len(), m, cfg.height);
    let structure = progressive_merge(&scenario.queries, cfg.height, &budget)?;
    eprintln!("m = {}, queries per tier: {:?}", fmt_sig(m, 6), {
        let mut k = vec![scenario.queries.len()];
        k.extend_from_slice(budget.counts());
        k
    });
    write_output(c.out.as_deref(), &structure.to_text())
}

fn cmd_optimize(c: &Common) -> Result<()> {
    let cfg = build_config(c, MergeRateSpec::Optimize)?;
    let scenario = Scenario::prepare(&cfg)?;
    let opt = scenario.estimated_optimum()?;
    let a0 = tierq::cost::alpha0(&scenario.params)?;
    let text = format!(
        "n_queries {}\ncover {}\nalpha0 {}\nalpha {}\nm_opt_est {}\nweighted_sum_est {}\n",
        scenario.queries.len(),
        fmt_sig(scenario.cover, 12),
        fmt_sig(a0, 12),
        fmt_sig(scenario.alpha(), 12),
        fmt_sig(opt.merge_rate, 12),
        fmt_sig(opt.weighted_sum, 12),
    );
    write_output(c.out.as_deref(), &text)
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let cfg = build_config(c, MergeRateSpec::Optimize)?;
    let scenario = Scenario::prepare(&cfg)?;
    let m = single_rate(&scenario)?;
    let budget = budget_from_rate(scenario.queries.len(), m, cfg.height);
    let structure = progressive_merge(&scenario.queries, cfg.height, &budget)?;
    let report = simulate(&scenario.topology, &structure, &scenario.data, cfg.element_size)?;
    eprintln!(
        "m = {}, weighted sum = {}",
        fmt_sig(m, 6),
        fmt_sig(scenario.weighted_sum(&report), 10)
    );
    eprintln!("{}", report.summary().to_json()?);
    write_output(c.out.as_deref(), &report.to_csv())
}

fn cmd_experiment(c: &Common, exp: Option<u32>, plot_dir: Option<&Path>) -> Result<()> {
    let Some(seed) = c.seed else {
        bail!("experiment requires --seed");
    };
    let rows = match exp {
        Some(id) => harness::run_preset(id, seed, plot_dir)?,
        None => {
            let cfg = build_config(c, MergeRateSpec::DEFAULT_GRID)?;
            if let (Some(dir), MergeRateSpec::Grid { .. }) = (plot_dir, cfg.merge_rate) {
                let scenario = Scenario::prepare(&cfg)?;
                let curve = harness::trade_off_curve(&scenario, &cfg.merge_rate.grid_points()?)?;
                harness::write_curve_files(&curve, dir)?;
            }
            vec![harness::run(&cfg)?]
        }
    };
    write_output(c.out.as_deref(), &harness::csv_string(&rows))
}

fn cmd_compare(c: &Common) -> Result<()> {
    let mut cfg = build_config(c, MergeRateSpec::Optimize)?;
    cfg.baseline = true;
    let row = harness::run_comparison(&cfg)?;
    eprintln!("gain_w = {}", fmt_sig(row.gain_w.unwrap_or(f64::NAN), 6));
    write_output(c.out.as_deref(), &harness::csv_string(&[row]))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Merge(c) => cmd_merge(&c),
        Command::Optimize(c) => cmd_optimize(&c),
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Experiment { common, exp, plot_dir } => cmd_experiment(&common, exp, plot_dir.as_deref()),
        Command::Compare(c) => cmd_compare(&c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_forms() {
        assert_eq!(parse_alpha("a0x0.1").unwrap(), AlphaSpec::TimesAlpha0(0.1));
        assert_eq!(parse_alpha("250").unwrap(), AlphaSpec::Absolute(250.0));
        assert!(parse_alpha("a0xfoo").is_err());
    }

    #[test]
    fn rate_forms() {
        assert_eq!(parse_rate("opt").unwrap(), MergeRateSpec::Optimize);
        assert_eq!(parse_rate("0.25").unwrap(), MergeRateSpec::Fixed(0.25));
        assert_eq!(
            parse_rate("grid:0:1:0.1").unwrap(),
            MergeRateSpec::Grid {
                start: 0.0,
                stop: 1.0,
                step: 0.1
            }
        );
        assert!(parse_rate("grid:0:1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "h = 3\nf = 2\nnq = 50\nalpha = \"a0x2\"\nm = 0.4\n").unwrap();
        let common = Common {
            config: Some(path),
            f: Some(4),
            ..Common::default()
        };
        let cfg = build_config(&common, MergeRateSpec::Optimize).unwrap();
        assert_eq!((cfg.height, cfg.fanout), (3, 4));
        assert_eq!(cfg.mode, WorkloadMode::ByCount(50));
        assert_eq!(cfg.alpha, AlphaSpec::TimesAlpha0(2.0));
        assert_eq!(cfg.merge_rate, MergeRateSpec::Fixed(0.4));
        assert_eq!(cfg.element_size, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "height = 3\n").unwrap();
        let common = Common {
            config: Some(path),
            ..Common::default()
        };
        assert!(build_config(&common, MergeRateSpec::Optimize).is_err());
    }
}
