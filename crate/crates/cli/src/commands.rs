//! The experiments behind each subcommand. Every command returns its data
//! files as bytes; nothing here touches the file system or the clock.

use std::io::Write;

use imbp_core::discrete::{compare_engines, marginal_samples, EngineRun, EquivalenceReport};
use imbp_core::export;
use imbp_core::grid::{grid_convergence_experiment, GridConfig, GridExperiment, GridReport};
use imbp_core::rng::channel;
use imbp_core::scaling::{
    grid_difference_experiment, scaling_convergence_experiment, DifferenceReport, ScalingExperiment,
    ScalingReport,
};
use imbp_core::stats::{empirical_distribution, tv_distance, MeanEstimate, DEFAULT_LEAK_THRESHOLD};
use imbp_core::{
    build_feller_family, euler_simulate, feller_limit, simulate_gillespie, simulate_grid_continuous,
    simulate_grid_discrete, simulate_time_change, transient_distribution, ContinuousPath,
    EngineKind, Ensemble, EulerStats, Path, RandomWalkSpec, RunStats, SeedTree, TimeChangeOptions,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, ModelConfig};
use crate::{CliError, Format};

const DEFAULT_PATHS: usize = 1000;
const DEFAULT_HORIZON: f64 = 1.0;
const DEFAULT_DT: f64 = 1e-3;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_TV_TOLERANCE: f64 = 0.02;
const DEFAULT_KS_ALPHA: f64 = 1e-3;
const DEFAULT_LATTICE_CAP: i64 = 20;
const EXTINCTION_TOLERANCE: f64 = 0.02;

/// Command-line values that take precedence over the config.
#[derive(Debug, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n_list: Option<Vec<u64>>,
    pub format: Format,
}

/// Fully resolved run parameters, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub command: String,
    pub seed: u64,
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n_list: Vec<u64>,
    pub format: Format,
}

impl Params {
    pub fn resolve(command: &str, cfg: &Config, o: Overrides) -> Result<Self, CliError> {
        let exp = &cfg.experiment;
        let n_list = o.n_list.unwrap_or_else(|| match &cfg.model {
            ModelConfig::FellerFamily(f) if !f.n_values.is_empty() => f.n_values.clone(),
            _ => vec![10, 100, 1000],
        });
        let p = Params {
            command: command.to_string(),
            seed: o.seed.or(exp.seed).unwrap_or(DEFAULT_SEED),
            paths: o.paths.or(exp.paths).unwrap_or(DEFAULT_PATHS),
            horizon: o.horizon.or(exp.horizon).unwrap_or(DEFAULT_HORIZON),
            dt: o.dt.or(cfg.engine.dt).unwrap_or(DEFAULT_DT),
            epsilon: o.epsilon.or(exp.epsilon),
            delta: o.delta.or(exp.delta),
            n_list,
            format: o.format,
        };
        if !(p.horizon.is_finite() && p.horizon >= 0.0) {
            return Err(CliError::Config(format!("horizon: must be finite and >= 0, got {}", p.horizon)));
        }
        if !(p.dt.is_finite() && p.dt > 0.0) {
            return Err(CliError::Config(format!("dt: must be positive, got {}", p.dt)));
        }
        Ok(p)
    }

    fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    fn grid(&self) -> Result<GridConfig, CliError> {
        match (self.epsilon, self.delta) {
            (Some(e), Some(d)) => Ok(GridConfig::new(e, d)?),
            _ => Err(CliError::Config("epsilon, delta: both are required for a grid run".into())),
        }
    }
}

/// Data files of one run, in emission order, and the verdict of its checks.
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub verdict: Result<(), CliError>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            files: Vec::new(),
            verdict: Ok(()),
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    /// Keeps the first failure.
    fn fail(&mut self, e: CliError) {
        if self.verdict.is_ok() {
            self.verdict = Err(e);
        }
    }
}

pub fn run(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    match p.command.as_str() {
        "simulate-discrete" => simulate_discrete(cfg, p, ensemble),
        "simulate-continuous" => simulate_continuous(cfg, p, ensemble),
        "simulate-grid" => simulate_grid(cfg, p, ensemble),
        "scaling" => scaling(cfg, p, ensemble),
        "oracle-check" => oracle_check(cfg, p, ensemble),
        "equivalence" => equivalence(cfg, p, ensemble),
        other => Err(CliError::Config(format!("command: unknown command `{other}`"))),
    }
}

fn ratio(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

#[derive(Debug, Serialize)]
struct GuardedPath {
    path: u64,
    error: String,
}

/// One path, possibly cut short by a numerical guard.
struct Run<P, S> {
    path: P,
    stats: Option<S>,
    guard: Option<String>,
}

fn guarded<P, S>(path: P, res: imbp_core::Result<S>) -> imbp_core::Result<Run<P, S>> {
    match res {
        Ok(stats) => Ok(Run {
            path,
            stats: Some(stats),
            guard: None,
        }),
        Err(e) if e.is_numerical_guard() => Ok(Run {
            path,
            stats: None,
            guard: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

fn guard_list<P, S>(runs: &[Run<P, S>]) -> Vec<GuardedPath> {
    runs.iter()
        .enumerate()
        .filter_map(|(i, r)| {
            r.guard.as_ref().map(|e| GuardedPath {
                path: i as u64,
                error: e.clone(),
            })
        })
        .collect()
}

fn check_guards(out: &mut Outputs, guards: &[GuardedPath]) {
    if let Some(g) = guards.first() {
        out.fail(CliError::Numerical(format!(
            "{} path(s) stopped by a guard, first: path {}: {}",
            guards.len(),
            g.path,
            g.error
        )));
    }
}

fn discrete_trajectories(paths: &[&Path], d: usize, format: Format) -> (String, Vec<u8>) {
    let mut buf = Vec::new();
    match format {
        Format::Csv => {
            export::csv_header(&mut buf, "z", d, &[]).expect("write to memory");
            for path in paths {
                export::write_path_csv_rows(&mut buf, path).expect("write to memory");
            }
        }
        Format::Jsonl => {
            for (i, path) in paths.iter().enumerate() {
                export::write_path_jsonl(&mut buf, i as u64, path).expect("write to memory");
            }
        }
    }
    (trajectory_name(format), buf)
}

fn continuous_trajectories(paths: &[&ContinuousPath], d: usize, format: Format) -> (String, Vec<u8>) {
    let mut buf = Vec::new();
    match format {
        Format::Csv => {
            export::csv_header(&mut buf, "z", d, &[]).expect("write to memory");
            for path in paths {
                export::write_continuous_csv_rows(&mut buf, path).expect("write to memory");
            }
        }
        Format::Jsonl => {
            for (i, path) in paths.iter().enumerate() {
                export::write_continuous_jsonl(&mut buf, i as u64, path).expect("write to memory");
            }
        }
    }
    (trajectory_name(format), buf)
}

fn trajectory_name(format: Format) -> String {
    match format {
        Format::Csv => "trajectories.csv".into(),
        Format::Jsonl => "trajectories.jsonl".into(),
    }
}

#[derive(Debug, Serialize)]
struct DiscreteSummary {
    engine: EngineKind,
    n_paths: usize,
    horizon: f64,
    final_mean: Vec<MeanEstimate>,
    extinct_fraction: f64,
    absorbed_paths: usize,
    /// Over the absorbed paths only.
    absorption_time: Option<MeanEstimate>,
    mean_events: f64,
    guarded_paths: Vec<GuardedPath>,
}

fn discrete_summary(
    engine: EngineKind,
    runs: &[Run<Path, RunStats>],
    d: usize,
    horizon: f64,
) -> DiscreteSummary {
    let finals: Vec<&[i64]> = runs.iter().map(|r| r.path.final_state()).collect();
    let absorbed: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.stats.as_ref().and_then(|s| s.absorbed_at))
        .collect();
    let events: u64 = runs.iter().filter_map(|r| r.stats.as_ref()).map(|s| s.events).sum();
    DiscreteSummary {
        engine,
        n_paths: runs.len(),
        horizon,
        final_mean: (0..d)
            .map(|j| MeanEstimate::from_samples(finals.iter().map(|s| s[j] as f64)))
            .collect(),
        extinct_fraction: ratio(finals.iter().filter(|s| s.iter().all(|&x| x == 0)).count(), runs.len()),
        absorbed_paths: absorbed.len(),
        absorption_time: (!absorbed.is_empty()).then(|| MeanEstimate::from_samples(absorbed.iter().copied())),
        mean_events: if runs.is_empty() { 0.0 } else { events as f64 / runs.len() as f64 },
        guarded_paths: guard_list(runs),
    }
}

fn simulate_discrete(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let spec = cfg.discrete()?;
    let d = spec.dim();
    let z = cfg.initial_lattice(d)?;
    let engine = cfg.engine.kind.unwrap_or(EngineKind::Gillespie);
    let opts = cfg.engine.options();
    let tc = TimeChangeOptions {
        engine: opts,
        timing: cfg.engine.timing,
        frozen: None,
    };
    let walks = RandomWalkSpec::all_from_model(&spec);
    let seeds = p.seeds();
    let runs = ensemble.map(p.paths, |i| {
        let mut path = Path::default();
        let res = match engine {
            EngineKind::Gillespie => {
                let mut rng = seeds.stream(i, channel::GILLESPIE);
                simulate_gillespie(&spec, &z, p.horizon, &mut rng, &opts, &mut path, None)
            }
            EngineKind::TimeChange => {
                simulate_time_change(&spec, &z, p.horizon, &walks, seeds, i, &tc, &mut path)
            }
        };
        guarded(path, res)
    })?;
    let mut out = Outputs::new();
    let paths: Vec<&Path> = runs.iter().map(|r| &r.path).collect();
    let (name, bytes) = discrete_trajectories(&paths, d, p.format);
    out.add(&name, bytes);
    let summary = discrete_summary(engine, &runs, d, p.horizon);
    out.add_json("summary.json", &summary);
    check_guards(&mut out, &summary.guarded_paths);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ContinuousSummary {
    n_paths: usize,
    horizon: f64,
    dt: f64,
    grid: Option<GridConfig>,
    final_mean: Vec<MeanEstimate>,
    extinct_fraction: f64,
    clamp_fraction: f64,
    guarded_paths: Vec<GuardedPath>,
}

fn continuous_summary(
    runs: &[Run<ContinuousPath, EulerStats>],
    d: usize,
    p: &Params,
    grid: Option<GridConfig>,
) -> ContinuousSummary {
    let finals: Vec<&[f64]> = runs
        .iter()
        .filter(|r| !r.path.is_empty())
        .map(|r| r.path.final_state())
        .collect();
    let mut stats = EulerStats::default();
    for s in runs.iter().filter_map(|r| r.stats.as_ref()) {
        stats.merge(s);
    }
    ContinuousSummary {
        n_paths: runs.len(),
        horizon: p.horizon,
        dt: p.dt,
        grid,
        final_mean: (0..d)
            .map(|j| MeanEstimate::from_samples(finals.iter().map(|s| s[j])))
            .collect(),
        extinct_fraction: ratio(finals.iter().filter(|s| s.iter().all(|&x| x == 0.0)).count(), finals.len()),
        clamp_fraction: stats.clamp_fraction(),
        guarded_paths: guard_list(runs),
    }
}

fn simulate_continuous(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let spec = cfg.continuous()?;
    let d = spec.dim();
    let y = cfg.initial_real(d)?;
    let euler = cfg.engine.euler(p.dt);
    let seeds = p.seeds();
    let runs = ensemble.map(p.paths, |i| {
        let mut path = ContinuousPath::new(d);
        let res = euler_simulate(&spec, &y, p.horizon, &euler, seeds, i, &mut path);
        guarded(path, res)
    })?;
    let mut out = Outputs::new();
    let paths: Vec<&ContinuousPath> = runs.iter().map(|r| &r.path).collect();
    let (name, bytes) = continuous_trajectories(&paths, d, p.format);
    out.add(&name, bytes);
    let summary = continuous_summary(&runs, d, p, None);
    out.add_json("summary.json", &summary);
    check_guards(&mut out, &summary.guarded_paths);
    Ok(out)
}

fn simulate_grid(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let grid = p.grid()?;
    let seeds = p.seeds();
    let mut out = Outputs::new();
    match &cfg.model {
        ModelConfig::Continuous(_) => {
            let spec = cfg.continuous()?;
            let d = spec.dim();
            let y = cfg.initial_real(d)?;
            let euler = cfg.engine.euler(p.dt);
            let runs = ensemble.map(p.paths, |i| {
                let mut path = ContinuousPath::new(d);
                let res = simulate_grid_continuous(&spec, &y, p.horizon, grid, &euler, seeds, i, &mut path);
                guarded(path, res)
            })?;
            let paths: Vec<&ContinuousPath> = runs.iter().map(|r| &r.path).collect();
            let (name, bytes) = continuous_trajectories(&paths, d, p.format);
            out.add(&name, bytes);
            let summary = continuous_summary(&runs, d, p, Some(grid));
            out.add_json("summary.json", &summary);
            check_guards(&mut out, &summary.guarded_paths);
            if !cfg.experiment.grids.is_empty() {
                let report = grid_report(cfg, p, &spec, &y, ensemble)?;
                out.add_json("grid_report.json", &report);
                if !(report.w1_strictly_decreasing && report.sup_decreasing) {
                    out.fail(CliError::Failed(format!(
                        "grid convergence: W1 strictly decreasing = {}, sup-difference decreasing = {}",
                        report.w1_strictly_decreasing, report.sup_decreasing
                    )));
                }
            }
        }
        ModelConfig::Discrete(_) => {
            let spec = cfg.discrete()?;
            let d = spec.dim();
            let z = cfg.initial_lattice(d)?;
            let runs = ensemble.map(p.paths, |i| {
                let mut path = Path::default();
                let res = simulate_grid_discrete(&spec, &z, p.horizon, grid, seeds, i, &mut path);
                guarded(path, res)
            })?;
            let paths: Vec<&Path> = runs.iter().map(|r| &r.path).collect();
            let (name, bytes) = discrete_trajectories(&paths, d, p.format);
            out.add(&name, bytes);
            let summary = discrete_summary(EngineKind::TimeChange, &runs, d, p.horizon);
            out.add_json("summary.json", &summary);
            check_guards(&mut out, &summary.guarded_paths);
        }
        ModelConfig::FellerFamily(_) => {
            return Err(CliError::Config(
                "model: simulate-grid needs a `discrete` or `continuous` model".into(),
            ))
        }
    }
    Ok(out)
}

fn grid_report(
    cfg: &Config,
    p: &Params,
    spec: &imbp_core::ContinuousModelSpec,
    y: &[f64],
    ensemble: &Ensemble,
) -> Result<GridReport, CliError> {
    let exp = &cfg.experiment;
    let reference_dt = exp.reference_dt.unwrap_or(p.dt / 10.0);
    let ge = GridExperiment {
        grids: exp.grids.clone(),
        time: p.horizon,
        n_paths: p.paths,
        grid_euler: cfg.engine.euler(p.dt),
        reference_euler: cfg.engine.euler(reference_dt),
        bootstrap_reps: exp.bootstrap_reps.unwrap_or(200),
        coupled_paths: exp.coupled_paths.unwrap_or(1),
    };
    Ok(grid_convergence_experiment(spec, y, &ge, p.seeds().subtree(1), ensemble)?)
}

#[derive(Debug, Serialize)]
struct ScalingCheck {
    /// Extinction probability of the limit at the horizon, known for `c = 0`.
    extinction_target: Option<f64>,
    means_constant: bool,
    extinction_within_tolerance: Option<bool>,
    w1_point_decreasing: bool,
    pass: bool,
}

fn scaling(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let feller = match &cfg.model {
        ModelConfig::FellerFamily(f) => f,
        _ => return Err(CliError::Config("model: scaling needs a `feller_family` model".into())),
    };
    if p.n_list.is_empty() {
        return Err(CliError::Config("n_list: at least one index is required".into()));
    }
    let fam = build_feller_family(feller.y, feller.c, &p.n_list)?;
    let exp = &cfg.experiment;
    let se = ScalingExperiment {
        checkpoints: vec![p.horizon],
        n_paths: p.paths,
        reference_euler: cfg.engine.euler(exp.reference_dt.unwrap_or(p.dt)),
        reference_paths: exp.reference_paths.unwrap_or(p.paths),
        bootstrap_reps: exp.bootstrap_reps.unwrap_or(200),
        engine: cfg.engine.options(),
    };
    let report = scaling_convergence_experiment(&fam, &feller_limit(feller.c), &se, p.seeds(), ensemble)?;
    let mut out = Outputs::new();
    out.add_json("scaling_report.json", &report);
    out.add("scaling_table.csv", scaling_table(&report));
    let check = scaling_check(&fam, feller.y, feller.c, p.horizon, &report);
    out.add_json("scaling_check.json", &check);
    if !check.pass {
        let mut failed = Vec::new();
        if !check.means_constant {
            failed.push("rescaled means not constant");
        }
        if check.extinction_within_tolerance == Some(false) {
            failed.push("extinction fraction off target");
        }
        if !check.w1_point_decreasing {
            failed.push("W1 not decreasing in n");
        }
        out.fail(CliError::Failed(format!("scaling: {} (see scaling_check.json)", failed.join(", "))));
    }
    if !exp.difference_grids.is_empty() {
        let n = *p.n_list.iter().max().expect("nonempty");
        let diff = grid_difference_experiment(
            &fam,
            &exp.difference_grids,
            n,
            p.horizon,
            exp.difference_paths.unwrap_or(p.paths),
            &cfg.engine.options(),
            p.seeds().subtree(2),
            ensemble,
        )?;
        out.add_json("difference_report.json", &diff);
        if !difference_ok(&diff) {
            out.fail(CliError::Failed("grid difference: not decreasing".into()));
        }
    }
    Ok(out)
}

fn difference_ok(diff: &DifferenceReport) -> bool {
    diff.decreasing
}

fn scaling_table(report: &ScalingReport) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "n,w1,w1_lo,w1_hi,mean,mean_std_err,extinct,mean_events").expect("write to memory");
    for row in &report.rows {
        let last = row.marginals.len() - 1;
        let m = &row.marginals[last];
        let (lo, hi) = row.w1_interval[last];
        writeln!(
            buf,
            "{},{},{},{},{},{},{},{}",
            row.n, row.w1[last], lo, hi, m.mean[0].mean, m.mean[0].std_err, m.extinct, row.mean_events
        )
        .expect("write to memory");
    }
    buf
}

fn scaling_check(
    fam: &imbp_core::ScalingFamily,
    y: f64,
    c: f64,
    t: f64,
    report: &ScalingReport,
) -> ScalingCheck {
    let last = |row: &imbp_core::scaling::ScalingRow| row.marginals.len() - 1;
    let w1: Vec<f64> = report.rows.iter().map(|r| r.w1[last(r)]).collect();
    let w1_point_decreasing = w1.windows(2).all(|w| w[1] < w[0]);
    let critical = c == 0.0;
    // A critical family keeps its rescaled mean at the initial mass.
    let means_constant = !critical
        || report.rows.iter().all(|r| {
            let start = fam.initial_state(r.n)[0] as f64 * fam.mass_factors(r.n)[0];
            r.marginals[last(r)].mean[0].covers(start, 3.0)
        });
    // The limit dY = √Y dW dies by time t with probability exp(-2y/t).
    let extinction_target = (critical && t > 0.0).then(|| (-2.0 * y / t).exp());
    let extinction_within_tolerance = extinction_target.map(|target| {
        let row = report.rows.iter().max_by_key(|r| r.n).expect("nonempty");
        (row.marginals[last(row)].extinct - target).abs() <= EXTINCTION_TOLERANCE
    });
    ScalingCheck {
        extinction_target,
        means_constant,
        extinction_within_tolerance,
        w1_point_decreasing,
        pass: means_constant && w1_point_decreasing && extinction_within_tolerance.unwrap_or(true),
    }
}

#[derive(Debug, Serialize)]
struct OracleReport {
    n_paths: usize,
    time: f64,
    cap: i64,
    leak: f64,
    tv: f64,
    tolerance: f64,
    pass: bool,
}

fn oracle_check(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let spec = cfg.discrete()?;
    let z = cfg.initial_lattice(spec.dim())?;
    let exp = &cfg.experiment;
    let cap = exp.lattice_cap.unwrap_or(DEFAULT_LATTICE_CAP);
    let law = transient_distribution(
        &spec,
        &z,
        p.horizon,
        cap,
        exp.leak_threshold.unwrap_or(DEFAULT_LEAK_THRESHOLD),
    )?;
    let run = EngineRun {
        spec: &spec,
        engine: EngineKind::Gillespie,
        seeds: p.seeds(),
    };
    let samples = marginal_samples(run, &z, p.horizon, p.paths, ensemble)?;
    let empirical = empirical_distribution(samples.iter().map(Vec::as_slice));
    let tv = tv_distance(&empirical, &law.to_distribution());
    let tolerance = exp.tv_tolerance.unwrap_or(DEFAULT_TV_TOLERANCE);
    let report = OracleReport {
        n_paths: p.paths,
        time: p.horizon,
        cap,
        leak: law.leak,
        tv,
        tolerance,
        pass: p.paths > 0 && tv <= tolerance,
    };
    let mut out = Outputs::new();
    let mut table = Vec::new();
    export::write_oracle_csv(&mut table, &law)?;
    out.add("oracle.csv", table);
    out.add_json("oracle_report.json", &report);
    if !report.pass {
        out.fail(CliError::Failed(format!("oracle TV {tv} exceeds {tolerance}")));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct EquivalenceCheck {
    engines: [EngineKind; 2],
    same_stream: bool,
    report: EquivalenceReport,
    ks_alpha: f64,
    tv_tolerance: f64,
    pass: bool,
}

fn equivalence(cfg: &Config, p: &Params, ensemble: &Ensemble) -> Result<Outputs, CliError> {
    let spec = cfg.discrete()?;
    let z = cfg.initial_lattice(spec.dim())?;
    let exp = &cfg.experiment;
    let engines = exp.engines.unwrap_or([EngineKind::Gillespie, EngineKind::TimeChange]);
    let seeds = p.seeds();
    let seeds_a = seeds.subtree(0);
    let seeds_b = if exp.same_stream { seeds_a } else { seeds.subtree(1) };
    let a = EngineRun {
        spec: &spec,
        engine: engines[0],
        seeds: seeds_a,
    };
    let b = EngineRun {
        spec: &spec,
        engine: engines[1],
        seeds: seeds_b,
    };
    let cap = exp.lattice_cap.unwrap_or(DEFAULT_LATTICE_CAP);
    let report = compare_engines(a, b, &z, p.horizon, p.paths, cap, ensemble)?;
    let ks_alpha = exp.ks_alpha.unwrap_or(DEFAULT_KS_ALPHA);
    let tv_tolerance = exp.tv_tolerance.unwrap_or(DEFAULT_TV_TOLERANCE);
    let pass = report.min_ks_p() > ks_alpha && report.joint_tv <= tv_tolerance;
    let check = EquivalenceCheck {
        engines,
        same_stream: exp.same_stream,
        report,
        ks_alpha,
        tv_tolerance,
        pass,
    };
    let mut out = Outputs::new();
    out.add_json("equivalence_report.json", &check);
    if !pass {
        out.fail(CliError::Failed(format!(
            "equivalence: min KS p = {}, joint TV = {}",
            check.report.min_ks_p(),
            check.report.joint_tv
        )));
    }
    Ok(out)
}
