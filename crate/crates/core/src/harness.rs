//! Experiment configuration, the estimated-vs-actual comparison and CSV
//! output.
//!
//! A [`Scenario`] fixes everything that does not depend on the merge rate
//! (queries, their measured cover, the topology, the sensor readings and
//! the resolved `alpha`), so many merge rates can be simulated against
//! identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostParams};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::merge::{baseline_structure, budget_from_rate, progressive_merge};
use crate::network::{simulate, DataStream, NetworkTopology, TransmissionReport};
use crate::textfmt::fmt_sig;
use crate::workload::{generate_data, generate_queries, measure_cover, WorkloadMode, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaSpec {
    Absolute(f64),
    /// A multiple of the scenario's `alpha0`.
    TimesAlpha0(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MergeRateSpec {
    /// Simulate one merge rate.
    Fixed(f64),
    /// Search a grid for the actual optimum.
    Grid { start: f64, stop: f64, step: f64 },
    /// Simulate at the analytic optimum.
    Optimize,
}

impl MergeRateSpec {
    pub const DEFAULT_GRID: MergeRateSpec = MergeRateSpec::Grid {
        start: 0.0,
        stop: 1.0,
        step: 0.05,
    };

    /// Grid points in declared order. Fails for anything but a grid.
    pub fn grid_points(&self) -> Result<Vec<f64>> {
        let MergeRateSpec::Grid { start, stop, step } = *self else {
            return Err(Error::Config("merge rate is not a grid".into()));
        };
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) || start > stop {
            return Err(Error::Config(format!("grid [{start}, {stop}] must lie inside [0, 1]")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| (start + i as f64 * step).min(stop)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Name written to the `experiment` column.
    pub label: String,
    pub dim: usize,
    pub selectivity: f64,
    pub mode: WorkloadMode,
    pub height: usize,
    pub fanout: usize,
    pub alpha: AlphaSpec,
    pub merge_rate: MergeRateSpec,
    /// Also build and simulate the flat iterative-merge baseline.
    pub baseline: bool,
    pub epochs: usize,
    pub element_size: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: "default".into(),
            dim: 2,
            selectivity: 1e-4,
            mode: WorkloadMode::ByCount(1046),
            height: 4,
            fanout: 8,
            alpha: AlphaSpec::TimesAlpha0(1.0),
            merge_rate: MergeRateSpec::DEFAULT_GRID,
            baseline: false,
            epochs: 10,
            element_size: 8,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn workload(&self) -> WorkloadSpec {
        WorkloadSpec {
            dim: self.dim,
            selectivity: self.selectivity,
            mode: self.mode,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.workload().validate()?;
        NetworkTopology::new(self.height, self.fanout)?;
        if self.epochs == 0 {
            return Err(Error::Config("need at least one epoch".into()));
        }
        if self.element_size == 0 {
            return Err(Error::Config("element size must be positive".into()));
        }
        match self.alpha {
            AlphaSpec::Absolute(a) | AlphaSpec::TimesAlpha0(a) if !(a > 0.0 && a.is_finite()) => {
                return Err(Error::Config(format!("alpha must be positive, got {a}")));
            }
            _ => {}
        }
        match self.merge_rate {
            MergeRateSpec::Fixed(m) if !(0.0..=1.0).contains(&m) => {
                Err(Error::Config(format!("merge rate {m} outside [0, 1]")))
            }
            MergeRateSpec::Grid { .. } => self.merge_rate.grid_points().map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// Everything an experiment needs apart from the merge rate.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub queries: Vec<Rect>,
    /// Measured cover of `queries`.
    pub cover: f64,
    pub topology: NetworkTopology,
    pub data: DataStream,
    /// Cost model inputs with `alpha` resolved.
    pub params: CostParams,
}

impl Scenario {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let queries = generate_queries(&config.workload())?;
        let cover = measure_cover(&queries)?;
        let topology = NetworkTopology::new(config.height, config.fanout)?;
        // readings get their own stream so they do not shift with N_Q
        let data = generate_data(&topology, config.epochs, config.dim, config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let mut params = CostParams {
            n_queries: queries.len(),
            cover,
            selectivity: config.selectivity,
            height: config.height as u32,
            fanout: config.fanout as u32,
            element_size: config.element_size as f64,
            alpha: 1.0,
        };
        params.alpha = match config.alpha {
            AlphaSpec::Absolute(a) => a,
            AlphaSpec::TimesAlpha0(x) => x * cost::alpha0(&params)?,
        };
        params.validate()?;
        Ok(Self {
            config: config.clone(),
            queries,
            cover,
            topology,
            data,
            params,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    /// Rates below `1/N_Q` would leave fewer than one query per tier.
    pub fn clamp_rate(&self, m: f64) -> f64 {
        m.max(self.params.min_merge_rate())
    }

    /// Builds the progressive structure for `m` and simulates it.
    pub fn simulate_at(&self, m: f64) -> Result<TransmissionReport> {
        let budget = budget_from_rate(self.queries.len(), self.clamp_rate(m), self.config.height);
        let structure = progressive_merge(&self.queries, self.config.height, &budget)?;
        simulate(&self.topology, &structure, &self.data, self.config.element_size)
    }

    pub fn simulate_baseline(&self) -> Result<TransmissionReport> {
        let structure = baseline_structure(&self.queries, self.config.height)?;
        simulate(&self.topology, &structure, &self.data, self.config.element_size)
    }

    /// Actual weighted sum of a simulation run.
    pub fn weighted_sum(&self, report: &TransmissionReport) -> f64 {
        report.weighted_sum(self.alpha())
    }

    pub fn estimated_optimum(&self) -> Result<cost::Optimum> {
        Ok(cost::optimal_merge_rate(&self.params)?)
    }
}

/// One simulated point of a merge-rate sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: f64,
    pub storage_est: f64,
    pub transmission_est: f64,
    pub weighted_est: f64,
    pub storage_act: f64,
    pub transmission_act: f64,
    pub weighted_act: f64,
}

/// Estimated and simulated costs at every grid point, in grid order.
pub fn trade_off_curve(scenario: &Scenario, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let p = &scenario.params;
    grid.par_iter()
        .map(|&m| {
            let m = scenario.clamp_rate(m);
            let report = scenario.simulate_at(m)?;
            Ok(CurvePoint {
                m,
                storage_est: cost::total_storage_est(p, m)?,
                transmission_est: cost::total_transmission_est(p, m)?,
                weighted_est: cost::weighted_sum_est(p, m)?,
                storage_act: report.total_storage as f64,
                transmission_act: report.transmission_per_epoch(),
                weighted_act: scenario.weighted_sum(&report),
            })
        })
        .collect()
}

/// Simulates every grid point and returns `(m_opt_act, w_opt_act)`. Ties
/// go to the smaller rate.
pub fn measure_actual_optimum(config: &ExperimentConfig) -> Result<(f64, f64)> {
    let scenario = Scenario::prepare(config)?;
    let grid = config.merge_rate.grid_points()?;
    let curve = trade_off_curve(&scenario, &grid)?;
    Ok(grid_argmin(&curve))
}

fn grid_argmin(curve: &[CurvePoint]) -> (f64, f64) {
    curve
        .iter()
        .fold((f64::NAN, f64::INFINITY), |best, pt| {
            if pt.weighted_act < best.1 {
                (pt.m, pt.weighted_act)
            } else {
                best
            }
        })
}

/// One CSV row. Fields that a configuration does not produce are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    pub h: usize,
    pub f: usize,
    pub d: usize,
    pub s: f64,
    pub c: f64,
    pub n_queries: usize,
    pub alpha: f64,
    /// Merge rate at which `storage_bytes` and `transmission_bytes` were
    /// measured.
    pub m: f64,
    pub m_opt_est: f64,
    pub m_opt_act: Option<f64>,
    /// Simulated weighted sum at `m_opt_est`.
    pub w_opt_est: f64,
    pub w_opt_act: Option<f64>,
    pub ratio_m: Option<f64>,
    pub ratio_w: Option<f64>,
    pub gain_w: Option<f64>,
    pub storage_bytes: u64,
    /// Bytes sent per epoch.
    pub transmission_bytes: f64,
}

/// Runs one configuration end to end.
///
/// `Fixed` measures the given rate, `Optimize` measures the analytic
/// optimum and `Grid` additionally searches the grid for the actual one,
/// reporting raw bytes at the actual optimum.
pub fn run(config: &ExperimentConfig) -> Result<MetricsRow> {
    let scenario = Scenario::prepare(config)?;
    let est = scenario.estimated_optimum()?;
    let at_est = scenario.simulate_at(est.merge_rate)?;
    let w_opt_est = scenario.weighted_sum(&at_est);

    let (m, raw, m_opt_act, w_opt_act) = match config.merge_rate {
        MergeRateSpec::Optimize => (est.merge_rate, at_est, None, None),
        MergeRateSpec::Fixed(m) => {
            let m = scenario.clamp_rate(m);
            (m, scenario.simulate_at(m)?, None, None)
        }
        MergeRateSpec::Grid { .. } => {
            let grid = config.merge_rate.grid_points()?;
            let curve = trade_off_curve(&scenario, &grid)?;
            let (m_act, w_act) = grid_argmin(&curve);
            (m_act, scenario.simulate_at(m_act)?, Some(m_act), Some(w_act))
        }
    };
    let gain_w = if config.baseline {
        let base = scenario.simulate_baseline()?;
        Some(scenario.weighted_sum(&base) / w_opt_est)
    } else {
        None
    };

    Ok(MetricsRow {
        experiment: config.label.clone(),
        seed: config.seed,
        h: config.height,
        f: config.fanout,
        d: config.dim,
        s: config.selectivity,
        c: scenario.cover,
        n_queries: scenario.queries.len(),
        alpha: scenario.alpha(),
        m,
        m_opt_est: est.merge_rate,
        m_opt_act,
        w_opt_est,
        w_opt_act,
        ratio_m: m_opt_act.map(|a| a / est.merge_rate),
        ratio_w: w_opt_act.map(|a| a / w_opt_est),
        gain_w,
        storage_bytes: raw.total_storage,
        transmission_bytes: raw.transmission_per_epoch(),
    })
}

/// Progressive structure at the analytic optimum against the baseline.
pub fn run_comparison(config: &ExperimentConfig) -> Result<MetricsRow> {
    if !config.baseline {
        return Err(Error::Config("comparison needs the baseline flag".into()));
    }
    run(config)
}

/// Runs configurations in parallel, returning rows in input order.
pub fn run_all(configs: &[ExperimentConfig]) -> Result<Vec<MetricsRow>> {
    configs.par_iter().map(run).collect()
}

pub const CSV_HEADER: &str = "experiment,seed,h,f,d,s,c,N_Q,alpha,m,m_opt_est,m_opt_act,w_opt_est,w_opt_act,ratio_m,ratio_w,gain_w,storage_bytes,transmission_bytes";

const SIG: usize = 12;

fn num(x: f64) -> String {
    fmt_sig(x, SIG)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.experiment.clone(),
            r.seed.to_string(),
            r.h.to_string(),
            r.f.to_string(),
            r.d.to_string(),
            num(r.s),
            num(r.c),
            r.n_queries.to_string(),
            num(r.alpha),
            num(r.m),
            num(r.m_opt_est),
            opt(r.m_opt_act),
            num(r.w_opt_est),
            opt(r.w_opt_act),
            opt(r.ratio_m),
            opt(r.ratio_w),
            opt(r.gain_w),
            r.storage_bytes.to_string(),
            num(r.transmission_bytes),
        ];
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no rows to write".into()));
    }
    std::fs::write(path, csv_string(rows))?;
    Ok(())
}

/// Writes one two-column `m value` file per cost series into `dir`.
pub fn write_curve_files(curve: &[CurvePoint], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    type Getter = fn(&CurvePoint) -> f64;
    let series: [(&str, Getter); 6] = [
        ("storage_est", |p| p.storage_est),
        ("transmission_est", |p| p.transmission_est),
        ("weighted_sum_est", |p| p.weighted_est),
        ("storage_act", |p| p.storage_act),
        ("transmission_act", |p| p.transmission_act),
        ("weighted_sum_act", |p| p.weighted_act),
    ];
    for (name, get) in series {
        let mut text = format!("# m {name}\n");
        for p in curve {
            writeln!(text, "{} {}", num(p.m), num(get(p))).unwrap();
        }
        std::fs::write(dir.join(format!("{name}.dat")), text)?;
    }
    Ok(())
}

/// Number of predefined experiments; ids run from 0 to `PRESET_COUNT - 1`.
pub const PRESET_COUNT: u32 = 13;

/// Configurations of a predefined experiment.
///
/// Experiment 0 sweeps the merge rate on the default configuration.
/// Experiments 1 to 6 vary alpha, cover, selectivity, height, fanout and
/// dimension while searching for the actual optimum; 7 to 12 vary the same
/// parameters at the analytic optimum against the baseline.
pub fn preset(exp: u32, seed: u64) -> Result<Vec<ExperimentConfig>> {
    if exp >= PRESET_COUNT {
        return Err(Error::Config(format!("no experiment {exp}; valid ids are 0 to {}", PRESET_COUNT - 1)));
    }
    let base = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    if exp == 0 {
        let grid = MergeRateSpec::DEFAULT_GRID.grid_points()?;
        return Ok(grid
            .into_iter()
            .map(|m| ExperimentConfig {
                label: "exp0".into(),
                merge_rate: MergeRateSpec::Fixed(m),
                ..base.clone()
            })
            .collect());
    }
    let (merge_rate, baseline) = if exp <= 6 {
        (MergeRateSpec::DEFAULT_GRID, false)
    } else {
        (MergeRateSpec::Optimize, true)
    };
    let base = ExperimentConfig {
        label: format!("exp{exp}"),
        merge_rate,
        baseline,
        ..base
    };
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let configs = match (exp - 1) % 6 {
        0 => [1e-2, 1e-1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&x| with(&|c| c.alpha = AlphaSpec::TimesAlpha0(x)))
            .collect(),
        1 => [0.01, 0.1, 0.99]
            .iter()
            .map(|&cv| with(&|c| c.mode = WorkloadMode::ByCover(cv)))
            .collect(),
        2 => [1e-5, 1e-4, 1e-3]
            .iter()
            .map(|&s| with(&|c| c.selectivity = s))
            .collect(),
        3 => [3, 4, 5].iter().map(|&h| with(&|c| c.height = h)).collect(),
        4 => [2, 4, 8, 16].iter().map(|&f| with(&|c| c.fanout = f)).collect(),
        _ => [1, 2, 3]
            .iter()
            .map(|&d| {
                with(&|c| {
                    c.dim = d;
                    c.element_size = 4 * d as u64;
                })
            })
            .collect(),
    };
    Ok(configs)
}

/// Runs a predefined experiment. For experiment 0 the cost curves are also
/// written to `plot_dir` when given.
pub fn run_preset(exp: u32, seed: u64, plot_dir: Option<&Path>) -> Result<Vec<MetricsRow>> {
    let configs = preset(exp, seed)?;
    if let (0, Some(dir)) = (exp, plot_dir) {
        let scenario = Scenario::prepare(&configs[0])?;
        let grid = MergeRateSpec::DEFAULT_GRID.grid_points()?;
        write_curve_files(&trade_off_curve(&scenario, &grid)?, dir)?;
    }
    run_all(&configs)
}
