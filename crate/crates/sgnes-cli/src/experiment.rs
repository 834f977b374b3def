//! The experiment pipeline: build the game and graph from a config, certify
//! the splitting parameters, obtain (and cache) the centralized reference,
//! run the distributed solver, and write the metric artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use sgnes::game::{aux_stream, Game, GameOracle};
use sgnes::games::assembly::build_paper_assembly;
use sgnes::games::cournot::{build_paper_cournot, build_paper_cournot_with_network, NetworkSource};
use sgnes::games::quadratic::QuadraticGame;
use sgnes::graph::CommGraph;
use sgnes::metrics::moving_average;
use sgnes::operators::{assumption6_step_sizes, monotonicity_probe, PhiOperator, SplittingConfig, StackState, Dims};
use sgnes::reference::{solve_vi_extragradient, ExtragradientOptions, ReferenceError, ReferenceSolution};
use sgnes::solver::{run, EarlyStop, InnerSchedule, RunOptions, RunRecord, Schedules, VecSink};

use crate::config::{
    ConfigError, ExperimentConfig, GameSection, GraphSection, InitSection, SplittingSection,
};
use crate::graphgen::circle_plus_random_edges;
use crate::plot::{line_plot_svg, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] sgnes::graph::GraphError),
    #[error(transparent)]
    Operator(#[from] sgnes::operators::OperatorError),
    #[error(transparent)]
    Solver(#[from] sgnes::solver::SolverError),
    #[error(transparent)]
    Game(#[from] sgnes::game::GameError),
    #[error("game construction failed: {0}")]
    GameBuild(String),
    #[error("reference solve failed: {0}")]
    Reference(String),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.into(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Everything built from a config before the run starts.
pub struct BuiltExperiment {
    pub game: Arc<dyn Game>,
    pub graph: CommGraph,
    pub splitting: SplittingConfig,
    pub phi: PhiOperator,
    pub substitutions: Substitutions,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Substitutions {
    /// `synthetic` when the transport network was generated instead of read.
    pub network_source: Option<String>,
    pub sigma_symmetrized: Option<bool>,
    pub sigma_positive_definite: Option<bool>,
}

pub fn build_experiment(config: &ExperimentConfig) -> Result<BuiltExperiment, CliError> {
    let seed = config.experiment.master_seed;
    let mut substitutions = Substitutions::default();
    let game: Arc<dyn Game> = match &config.game {
        GameSection::Quadratic { noise } => Arc::new(QuadraticGame::four_player_benchmark(*noise)),
        GameSection::Cournot { network_file } => {
            let game = match network_file {
                Some(path) => {
                    build_paper_cournot_with_network(seed, path).map_err(|e| CliError::GameBuild(e.to_string()))?
                }
                None => build_paper_cournot(seed).map_err(|e| CliError::GameBuild(e.to_string()))?,
            };
            substitutions.network_source = Some(
                match game.network_source {
                    NetworkSource::File => "file",
                    NetworkSource::Synthetic => "synthetic",
                }
                .to_string(),
            );
            substitutions.sigma_symmetrized = Some(game.sigma_symmetrized);
            substitutions.sigma_positive_definite = Some(game.sigma_positive_definite);
            Arc::new(game)
        }
        GameSection::Assembly {} => {
            Arc::new(build_paper_assembly(seed).map_err(|e| CliError::GameBuild(e.to_string()))?)
        }
    };

    let players = game.player_count();
    let graph = match &config.graph {
        GraphSection::CirclePlusRandom { extra_edges } => {
            let mut rng = aux_stream(seed, 30);
            circle_plus_random_edges(players, *extra_edges, &mut rng)?
        }
        GraphSection::Explicit { edges } => CommGraph::from_edges(players, edges)?,
    };

    let splitting = match &config.splitting {
        SplittingSection::Explicit { rho_mu, rho_z, tau1, tau2, tau3, tau4 } => {
            SplittingConfig::uniform(&graph, game.as_ref(), *rho_mu, *rho_z, *tau1, *tau2, *tau3, *tau4)?
        }
        SplittingSection::Assumption6 { rho_mu, rho_z, safety } => {
            assumption6_step_sizes(&graph, game.as_ref(), *rho_mu, *rho_z, *safety)?
        }
    };
    let phi = PhiOperator::new(&graph, game.as_ref(), &splitting)?;

    Ok(BuiltExperiment { game, graph, splitting, phi, substitutions })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceMeta {
    pub residual: f64,
    pub iterations: usize,
    pub method: String,
    pub converged: bool,
    pub cached: bool,
    pub tol: f64,
}

fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Serialize, serde::Deserialize)]
struct CachedReference {
    descriptor: String,
    tol: f64,
    x: Vec<f64>,
    lambda: Vec<f64>,
    residual: f64,
    iterations: usize,
    method: String,
    converged: bool,
}

/// Compute the centralized reference, or load it from the cache keyed by
/// the game identity and tolerance.
pub fn reference_for(
    built: &BuiltExperiment,
    config: &ExperimentConfig,
    out_root: &Path,
) -> Result<(ReferenceSolution, ReferenceMeta), CliError> {
    let descriptor = built.game.descriptor();
    let key = fnv1a64(&format!("{descriptor}|tol={:e}", config.reference.tol));
    let cache_path = out_root.join("refcache").join(format!("{key:016x}.json"));
    if let Ok(text) = std::fs::read_to_string(&cache_path) {
        if let Ok(cached) = serde_json::from_str::<CachedReference>(&text) {
            if cached.descriptor == descriptor && cached.tol == config.reference.tol {
                let sol = ReferenceSolution {
                    x: DVector::from_vec(cached.x),
                    lambda: DVector::from_vec(cached.lambda),
                    residual: cached.residual,
                    iterations: cached.iterations,
                    method: cached.method.clone(),
                };
                let meta = ReferenceMeta {
                    residual: cached.residual,
                    iterations: cached.iterations,
                    method: cached.method,
                    converged: cached.converged,
                    cached: true,
                    tol: cached.tol,
                };
                return Ok((sol, meta));
            }
        }
    }

    let nonsmooth = matches!(config.game, GameSection::Assembly {});
    let opts = ExtragradientOptions {
        step: None,
        tol: config.reference.tol,
        max_iter: config.reference.max_iter,
        nonsmooth,
    };
    let (sol, converged) = match solve_vi_extragradient(built.game.as_ref(), &opts) {
        Ok(sol) => (sol, true),
        // A stalled solve still yields the best iterate; record it honestly.
        Err(ReferenceError::MaxIterations { best, .. }) => (*best, false),
        Err(e) => return Err(CliError::Reference(e.to_string())),
    };
    let meta = ReferenceMeta {
        residual: sol.residual,
        iterations: sol.iterations,
        method: sol.method.clone(),
        converged,
        cached: false,
        tol: config.reference.tol,
    };
    let cached = CachedReference {
        descriptor,
        tol: config.reference.tol,
        x: sol.x.iter().copied().collect(),
        lambda: sol.lambda.iter().copied().collect(),
        residual: sol.residual,
        iterations: sol.iterations,
        method: sol.method.clone(),
        converged,
    };
    write_file(&cache_path, &serde_json::to_string_pretty(&cached).expect("serializable"))?;
    Ok((sol, meta))
}

fn initial_state(config: &ExperimentConfig, dims: Dims) -> Option<StackState> {
    match &config.init {
        InitSection::Zero => None,
        InitSection::Random { scale } => {
            let mut rng = aux_stream(config.experiment.master_seed, 31);
            let mut st = StackState::zeros(dims);
            for v in st.data.iter_mut() {
                *v = scale * (2.0 * rng.gen::<f64>() - 1.0);
            }
            Some(st)
        }
    }
}

pub const CSV_HEADER: &str = "k,dist_avg_norm_star,dist_avg_norm_init,step_euclid,step_phi,primal_consensus,dual_consensus,constraint_violation,inner_steps";

/// Render records to the frozen CSV schema. Wall-clock time is deliberately
/// excluded: the file must be byte-identical across repeated runs.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + CSV_HEADER.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.k,
            r.dist_avg_norm_star,
            r.dist_avg_norm_init,
            r.step_euclid,
            r.step_phi,
            r.primal_consensus,
            r.dual_consensus,
            r.constraint_violation,
            r.inner_steps
        ));
    }
    out
}

#[derive(Serialize)]
struct RunMeta<'a> {
    name: &'a str,
    game: String,
    config: &'a ExperimentConfig,
    substitutions: &'a Substitutions,
    reference: &'a ReferenceMeta,
    schedule_summable: bool,
    satisfies_step_bounds: bool,
    phi_min_eigenvalue: f64,
    laplacian_sigma1: f64,
    iterations_run: usize,
    stopped_early: bool,
    total_wall_ms: f64,
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub final_distance: f64,
    pub reference: ReferenceSolution,
}

/// Run one experiment end to end and write `metrics.csv`, `meta.json`, and
/// the four metric panels.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunArtifacts, CliError> {
    let started = Instant::now();
    let built = build_experiment(config)?;
    let (reference, ref_meta) = reference_for(&built, config, out_root)?;

    let schedules = config.schedules();
    let records = execute_run(&built, config, schedules, Some(reference.x.clone()))?;

    let out_dir = out_root.join(config.output_dir_name());
    write_file(&out_dir.join("metrics.csv"), &records_to_csv(&records))?;

    let meta = RunMeta {
        name: &config.experiment.name,
        game: built.game.descriptor(),
        config,
        substitutions: &built.substitutions,
        reference: &ref_meta,
        schedule_summable: schedules.error_summable(),
        satisfies_step_bounds: built.splitting.satisfies_step_bounds,
        phi_min_eigenvalue: built.phi.certified_min_eigenvalue(),
        laplacian_sigma1: built.splitting.sigma1,
        iterations_run: records.len(),
        stopped_early: records.len() < config.experiment.iterations,
        total_wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    write_file(
        &out_dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializable"),
    )?;

    write_panels(&out_dir, &records, config.metrics.window)?;

    let final_distance = records.last().map(|r| r.dist_avg_norm_star).unwrap_or(f64::NAN);
    Ok(RunArtifacts { out_dir, records, final_distance, reference })
}

fn execute_run(
    built: &BuiltExperiment,
    config: &ExperimentConfig,
    schedules: Schedules,
    reference_x: Option<DVector<f64>>,
) -> Result<Vec<RunRecord>, CliError> {
    let mut opts = RunOptions::new(config.experiment.iterations, schedules);
    opts.reference = reference_x;
    opts.init = initial_state(config, built.phi.dims());
    if let Some(tol) = config.experiment.early_stop_tol {
        opts.early_stop = Some(EarlyStop { step_tol: tol, consecutive: 50 });
    }
    let mut oracle = GameOracle::new(built.game.clone(), config.experiment.master_seed);
    let mut sink = VecSink::default();
    run(
        &mut oracle,
        &built.graph,
        &built.splitting,
        &built.phi,
        &opts,
        &mut sink,
        None,
    )?;
    Ok(sink.0)
}

fn write_panels(out_dir: &Path, records: &[RunRecord], window: usize) -> Result<(), CliError> {
    let panels: [(&str, &str, fn(&RunRecord) -> f64); 4] = [
        ("distance", "avg normalized distance to reference", |r| r.dist_avg_norm_star),
        ("step", "update step length", |r| r.step_euclid),
        ("primal_consensus", "sum of estimate std deviations", |r| r.primal_consensus),
        ("dual_consensus", "sum of multiplier std deviations", |r| r.dual_consensus),
    ];
    for (name, label, extract) in panels {
        let raw: Vec<f64> = records.iter().map(extract).collect();
        let avg = moving_average(&raw, window);
        let svg = line_plot_svg(
            name,
            label,
            &[
                Series { label: "raw", values: &raw, faded: true, color_index: 0 },
                Series { label: &format!("window-{window} average"), values: &avg, faded: false, color_index: 0 },
            ],
            true,
        );
        write_file(&out_dir.join(format!("{name}.svg")), &svg)?;
    }
    Ok(())
}

/// Run the same experiment under several inner-iteration schedules with the
/// same seed, writing an aligned comparison CSV and an overlay plot.
pub fn compare_schedules(
    config: &ExperimentConfig,
    specs: &[(String, InnerSchedule)],
    out_root: &Path,
) -> Result<(PathBuf, Vec<Vec<RunRecord>>), CliError> {
    let built = build_experiment(config)?;
    let (reference, _) = reference_for(&built, config, out_root)?;
    let mut all = Vec::with_capacity(specs.len());
    for (_, inner) in specs {
        let schedules = Schedules { gamma: config.schedules().gamma, inner: *inner };
        let records = execute_run(&built, config, schedules, Some(reference.x.clone()))?;
        all.push(records);
    }

    let out_dir = out_root.join(config.output_dir_name());
    let rows = all.iter().map(Vec::len).max().unwrap_or(0);
    let mut csv = String::from("k");
    for (label, _) in specs {
        csv.push_str(&format!(",dist_{label}"));
    }
    csv.push('\n');
    for k in 0..rows {
        csv.push_str(&format!("{}", k + 1));
        for records in &all {
            match records.get(k) {
                Some(r) => csv.push_str(&format!(",{}", r.dist_avg_norm_star)),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    let csv_path = out_dir.join("compare.csv");
    write_file(&csv_path, &csv)?;

    let window = config.metrics.window;
    let averaged: Vec<Vec<f64>> = all
        .iter()
        .map(|records| {
            let raw: Vec<f64> = records.iter().map(|r| r.dist_avg_norm_star).collect();
            moving_average(&raw, window)
        })
        .collect();
    let series: Vec<Series<'_>> = specs
        .iter()
        .zip(averaged.iter())
        .enumerate()
        .map(|(i, ((label, _), values))| Series {
            label,
            values,
            faded: false,
            color_index: i,
        })
        .collect();
    let svg = line_plot_svg("schedule comparison", "avg normalized distance", &series, true);
    write_file(&out_dir.join("compare.svg"), &svg)?;

    Ok((csv_path, all))
}

#[derive(Serialize)]
struct ProbeOutput {
    game: String,
    eta: f64,
    theta1: f64,
    theta2: f64,
    min_monotonicity_gap: f64,
    rho_mu_required: f64,
    rho_mu: f64,
    rho_mu_ok: bool,
    second_moment_alpha: f64,
    second_moment_beta: f64,
    second_moment_worst_excess: f64,
    schedule_summable: bool,
    satisfies_step_bounds: bool,
}

/// Numeric report on the standing assumptions: sampled monotonicity moduli,
/// variance-bound fit, schedule summability, and step-bound status.
pub fn probe(config: &ExperimentConfig, out_root: &Path) -> Result<String, CliError> {
    let built = build_experiment(config)?;
    let game = built.game.as_ref();
    let mut rng = aux_stream(config.experiment.master_seed, 32);
    let n = game.total_dim();
    let mut sampler = |r: &mut rand_chacha::ChaCha8Rng| {
        let mut x = DVector::zeros(n);
        for i in 0..game.player_count() {
            let b = game.bounding_box(i);
            let off = game.own_offset(i);
            for j in 0..b.dim() {
                let u: f64 = r.gen();
                x[off + j] = (b.lo[j] + u * (b.hi[j] - b.lo[j])).max(0.0_f64.min(b.hi[j]));
            }
        }
        x
    };
    let report = monotonicity_probe(
        game,
        &mut sampler,
        120,
        built.splitting.rho_mu,
        built.splitting.sigma1,
        &mut rng,
    )?;
    let fit = sgnes::game::fit_second_moment(game, 12, 6, &mut rng);
    let out = ProbeOutput {
        game: game.descriptor(),
        eta: report.eta,
        theta1: report.theta1,
        theta2: report.theta2,
        min_monotonicity_gap: report.min_gap,
        rho_mu_required: report.rho_mu_required,
        rho_mu: built.splitting.rho_mu,
        rho_mu_ok: report.rho_mu_ok,
        second_moment_alpha: fit.alpha,
        second_moment_beta: fit.beta,
        second_moment_worst_excess: fit.worst_excess,
        schedule_summable: config.schedules().error_summable(),
        satisfies_step_bounds: built.splitting.satisfies_step_bounds,
    };
    let text = serde_json::to_string_pretty(&out).expect("probe serializable");
    let out_dir = out_root.join(config.output_dir_name());
    write_file(&out_dir.join("probe.json"), &text)?;
    Ok(text)
}
