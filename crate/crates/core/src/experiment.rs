//! End-to-end experiments on the test problems: synthesize data, filter it,
//! score the result against the exact solution, and write tables and plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::filter::{run_filter, FilterConfig, Resampler};
use crate::homec::{pair_by_id, DEFAULT_GAMMA_FLOOR, DEFAULT_TAU};
use crate::integrators::ImplicitSolveConfig;
use crate::metrics::{diagnostics, RunDiagnostics};
use crate::ode_models::{problem_by_id, synthesize_observations, TestProblem};
use crate::rng::{replicate_seed, substream, Purpose};
use crate::state_space::{EvolutionObservationModel, ObservationMap};

/// Observation noise standard deviation used when none is given.
pub const DEFAULT_NOISE: f64 = 0.4;

pub const DEFAULT_SWEEP_PAIRS: [&str; 4] = ["AB1-AB2", "AB3-AB4", "AM1-AM2", "AM3-AM4"];
pub const DEFAULT_SWEEP_V0: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub pair: String,
    pub n_particles: usize,
    pub v0: f64,
    pub dt: f64,
    /// End of the time window; the problem's own span when `None`.
    pub t_end: Option<f64>,
    pub stride: usize,
    pub noise: f64,
    pub tau: f64,
    pub gamma_floor: f64,
    pub seed: u64,
    pub reps: usize,
    pub resampler: Resampler,
    pub execution: Execution,
    pub outdir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: "gaussian_decay".into(),
            pair: "AB1-AB2".into(),
            n_particles: 150,
            v0: 0.1,
            dt: 0.1,
            t_end: None,
            stride: 1,
            noise: DEFAULT_NOISE,
            tau: DEFAULT_TAU,
            gamma_floor: DEFAULT_GAMMA_FLOOR,
            seed: 0,
            reps: 10,
            resampler: Resampler::Multinomial,
            execution: Execution::default(),
            outdir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{value}` as a value for `{key}`")))
}

pub const CONFIG_KEYS: [&str; 14] = [
    "problem",
    "pair",
    "nsample",
    "v0",
    "dt",
    "tend",
    "stride",
    "noise",
    "tau",
    "floor",
    "seed",
    "reps",
    "resampler",
    "outdir",
];

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "problem" => self.problem = value.to_string(),
            "pair" => self.pair = value.to_string(),
            "nsample" => self.n_particles = parse_num(key, value)?,
            "v0" => self.v0 = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "tend" => self.t_end = Some(parse_num(key, value)?),
            "stride" => self.stride = parse_num(key, value)?,
            "noise" => self.noise = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "floor" => self.gamma_floor = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "reps" => self.reps = parse_num(key, value)?,
            "resampler" => {
                self.resampler = match value {
                    "multinomial" => Resampler::Multinomial,
                    "systematic" => Resampler::Systematic,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown resampler `{value}`; valid options: multinomial, systematic"
                        )))
                    }
                }
            }
            "outdir" => self.outdir = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key `{other}`; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn test_problem(&self) -> Result<TestProblem> {
        let mut problem = problem_by_id(&self.problem)?;
        if let Some(t_end) = self.t_end {
            problem.t_span.1 = t_end;
        }
        Ok(problem)
    }

    /// Number of integration steps in the time window.
    pub fn step_count(&self) -> Result<usize> {
        let problem = self.test_problem()?;
        let span = problem.t_end() - problem.t_start();
        let steps = span / self.dt;
        let rounded = steps.round();
        if !(rounded >= 1.0) || (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::ObservationSchedule(format!(
                "time window {span} is not an integral number of steps of {}",
                self.dt
            )));
        }
        let steps = rounded as usize;
        if !steps.is_multiple_of(self.stride.max(1)) {
            return Err(Error::ObservationSchedule(format!(
                "{steps} steps are not divisible by the observation stride {}",
                self.stride
            )));
        }
        Ok(steps)
    }

    pub fn validate(&self) -> Result<()> {
        self.test_problem()?;
        pair_by_id(&self.pair, self.tau)?;
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise must be positive (it is the likelihood's standard deviation), got {}",
                self.noise
            )));
        }
        if !(self.gamma_floor >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "floor must be nonnegative, got {}",
                self.gamma_floor
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        self.filter_config(0).validate()?;
        self.step_count()?;
        Ok(())
    }

    fn filter_config(&self, seed: u64) -> FilterConfig {
        FilterConfig {
            n_particles: self.n_particles,
            initial_variance: self.v0,
            step: self.dt,
            stride: self.stride,
            resampler: self.resampler,
            seed,
            solve: ImplicitSolveConfig::default(),
            execution: self.execution,
        }
    }

    /// Directory-safe label for one replicate.
    pub fn run_label(&self, replicate: usize) -> String {
        format!("{}_{}_V{}_rep{replicate:02}", self.problem, self.pair, self.v0)
    }
}

/// One table row: replicate mean of each norm and the min–max band.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub problem: String,
    pub pair: String,
    pub v0: f64,
    pub t_end: f64,
    pub reps: usize,
    pub err_inf: f64,
    pub var_2norm: f64,
    pub err_band: (f64, f64),
    pub var_band: (f64, f64),
}

impl ResultsRow {
    fn aggregate(config: &ExperimentConfig, t_end: f64, runs: &[RunDiagnostics]) -> Self {
        let n = runs.len() as f64;
        let errs = runs.iter().map(|r| r.error_inf_norm);
        let vars = runs.iter().map(|r| r.variance_2norm);
        let band = |xs: &mut dyn Iterator<Item = f64>| {
            xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        ResultsRow {
            problem: config.problem.clone(),
            pair: config.pair.clone(),
            v0: config.v0,
            t_end,
            reps: runs.len(),
            err_inf: errs.clone().sum::<f64>() / n,
            var_2norm: vars.clone().sum::<f64>() / n,
            err_band: band(&mut errs.into_iter()),
            var_band: band(&mut vars.into_iter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
}

pub const TABLE_HEADER: &str = "pair,V,err_inf,var_2norm,err_band_lo,err_band_hi";

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TABLE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.pair, r.v0, r.err_inf, r.var_2norm, r.err_band.0, r.err_band.1
            );
        }
        s
    }

    pub fn find(&self, pair: &str, v0: f64) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| r.pair == pair && r.v0 == v0)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub diagnostics: Vec<RunDiagnostics>,
    pub row: ResultsRow,
}

/// Runs `config.reps` independent replicates of one configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let problem = config.test_problem()?;
    let pair = pair_by_id(&config.pair, config.tau)?;
    let steps = config.step_count()?;
    let d = problem.system.dimension();
    let model = EvolutionObservationModel::new(
        problem.system.clone(),
        pair,
        ObservationMap::Identity,
        vec![config.noise * config.noise; d],
    )?
    .with_gamma_floor(config.gamma_floor);

    let t0 = problem.t_start();
    let times: Vec<f64> = (1..=steps / config.stride)
        .map(|k| t0 + (k * config.stride) as f64 * config.dt)
        .collect();

    let runs = try_map_range(config.execution, config.reps, |rep| {
        let seed = replicate_seed(config.seed, rep);
        let mut obs_rng = substream(seed, Purpose::Observations, 0, 0);
        let observations = synthesize_observations(&problem, &times, &model.observation, config.noise, &mut obs_rng)?;
        let ensembles = run_filter(
            &config.filter_config(seed),
            &model,
            &observations,
            &problem.initial_state,
            t0,
        )?;
        diagnostics(&ensembles, |t| problem.exact_solution(t).expect("checked by synthesis"))
    })?;
    let row = ResultsRow::aggregate(config, problem.t_end(), &runs);
    Ok(ExperimentOutcome { diagnostics: runs, row })
}

/// Labelled per-replicate diagnostics, in table order.
pub type LabelledRuns = Vec<(String, RunDiagnostics)>;

/// Every `pair × V` cell of `base`, each with `base.reps` replicates drawn
/// from the same base seed. Rows are ordered by pair, then V descending.
pub fn run_sweep(base: &ExperimentConfig, pairs: &[String], v0s: &[f64]) -> Result<(ResultsTable, LabelledRuns)> {
    if pairs.is_empty() || v0s.is_empty() {
        return Err(Error::InvalidConfig("a sweep needs at least one pair and one V".into()));
    }
    let mut cells: Vec<ExperimentConfig> = Vec::with_capacity(pairs.len() * v0s.len());
    for pair in pairs {
        for &v0 in v0s {
            let mut c = base.clone();
            c.pair = pair.clone();
            c.v0 = v0;
            c.validate()?;
            cells.push(c);
        }
    }
    cells.sort_by(|a, b| a.pair.cmp(&b.pair).then(b.v0.total_cmp(&a.v0)));
    let outcomes = try_map_range(base.execution, cells.len(), |i| run_experiment(&cells[i]))?;

    let mut table = ResultsTable::default();
    let mut runs = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        table.rows.push(outcome.row);
        for (rep, d) in outcome.diagnostics.into_iter().enumerate() {
            runs.push((cell.run_label(rep), d));
        }
    }
    Ok((table, runs))
}

pub fn trajectory_csv(d: &RunDiagnostics) -> String {
    let dim = d.ensemble_means.first().map_or(1, Vec::len);
    let mut s = String::from("t");
    for col in ["mean", "exact", "abs_error", "variance"] {
        if dim == 1 {
            let _ = write!(s, ",{col}");
        } else {
            for i in 0..dim {
                let _ = write!(s, ",{col}_{i}");
            }
        }
    }
    s.push('\n');
    for j in 0..d.times.len() {
        let _ = write!(s, "{}", d.times[j]);
        for seq in [
            &d.ensemble_means,
            &d.exact_values,
            &d.absolute_errors,
            &d.sample_variances,
        ] {
            for x in &seq[j] {
                let _ = write!(s, ",{x}");
            }
        }
        s.push('\n');
    }
    s
}

/// Parses a trajectory file written by [`trajectory_csv`].
pub fn parse_trajectory_csv(text: &str) -> Result<RunDiagnostics> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty trajectory file".into()))?;
    let dim = (header.split(',').count() - 1) / 4;
    let mut times = Vec::new();
    let mut cols: [Vec<Vec<f64>>; 4] = Default::default();
    for line in lines.filter(|l| !l.is_empty()) {
        let vals = line
            .split(',')
            .map(|v| parse_num::<f64>("trajectory", v))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 1 + 4 * dim {
            return Err(Error::InvalidConfig(format!("malformed trajectory row `{line}`")));
        }
        times.push(vals[0]);
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(vals[1 + c * dim..1 + (c + 1) * dim].to_vec());
        }
    }
    let [means, exact, _errors, variances] = cols;
    Ok(RunDiagnostics::from_parts(times, means, exact, variances))
}

/// Line plot of the filtered mean (black), exact solution (blue) and absolute
/// error (red) against time, first component only.
pub fn plot_svg(d: &RunDiagnostics, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let first = |seq: &[Vec<f64>]| seq.iter().map(|v| v[0]).collect::<Vec<f64>>();
    let series = [
        ("computed", "black", first(&d.ensemble_means)),
        ("exact", "blue", first(&d.exact_values)),
        ("error", "red", first(&d.absolute_errors)),
    ];
    let (t_lo, t_hi) = d
        .times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (mut y_lo, mut y_hi) = series
        .iter()
        .flat_map(|s| s.2.iter())
        .filter(|y| y.is_finite())
        .fold((0.0_f64, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !(y_hi > y_lo) {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let t_span = if t_hi > t_lo { t_hi - t_lo } else { 1.0 };
    let px = |t: f64| L + (t - t_lo) / t_span * (W - L - R);
    let py = |y: f64| H - B - (y - y_lo) / (y_hi - y_lo) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<path d="M{L},{T} L{L},{} L{},{}" fill="none" stroke="#444"/>"##,
        H - B,
        W - R,
        H - B
    );
    for k in 0..=5 {
        let t = t_lo + t_span * k as f64 / 5.0;
        let y = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.2}</text>"#,
            px(t),
            H - B + 18.0,
            t
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            L - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">t</text>"#,
        (L + W - R) / 2.0,
        H - 12.0
    );
    for (i, (name, color, ys)) in series.iter().enumerate() {
        let mut pts = String::new();
        for (t, y) in d.times.iter().zip(ys) {
            let _ = write!(pts, "{:.2},{:.2} ", px(*t), py(*y));
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.trim_end()
        );
        let ly = T + 8.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            W - R - 110.0,
            W - R - 90.0,
            W - R - 84.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `table.csv` plus a `trajectory.csv` and `plot.svg` per run, each
/// run in its own subdirectory. Returns the written paths in order.
pub fn emit_outputs(
    table: &ResultsTable,
    runs: &[(String, RunDiagnostics)],
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mkdir = |dir: &Path| {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    };
    mkdir(output_dir)?;
    let mut manifest = Vec::with_capacity(1 + 2 * runs.len());
    let table_path = output_dir.join("table.csv");
    write_file(&table_path, &table.to_csv())?;
    manifest.push(table_path);
    for (label, d) in runs {
        let dir = output_dir.join(label);
        mkdir(&dir)?;
        let traj = dir.join("trajectory.csv");
        write_file(&traj, &trajectory_csv(d))?;
        let plot = dir.join("plot.svg");
        write_file(&plot, &plot_svg(d, label))?;
        manifest.push(traj);
        manifest.push(plot);
    }
    Ok(manifest)
}

/// Parses line-oriented `key=value` text. Blank lines and `#` comments are
/// skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            Some(match line.split_once('=') {
                Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
                None => Err(Error::InvalidConfig(format!(
                    "line {}: expected key=value, got `{line}`",
                    n + 1
                ))),
            })
        })
        .collect()
}

pub fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}
