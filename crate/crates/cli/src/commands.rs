use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use otbary::barycenters::{barycenter, barycenter_observed, BarycenterProblem, Method};
use otbary::embedding::{self, fit_coordinates, unrolled_barycenter, Dictionary, FitOptions};
use otbary::gaussian_oracle::{oracle_measure, solve_variance, GaussianBarycenterSpec, OracleKind, OracleResult};
use otbary::kernels::KernelOperator;
use otbary::measures::{generate_nested_ellipses, io, DiscreteMeasure, UniformGrid};
use otbary::sinkhorn::{sinkhorn_divergence_solve, DEFAULT_MAX_ITER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{self, *};
use crate::report::{write_json, MomentsReport, SCHEMA_VERSION};

/// How a run ended; hard failures travel as errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// An iteration cap was hit; outputs were still written.
    MaxIter,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Serialize)]
struct OracleComparison {
    kind: OracleKind,
    expected_mean: f64,
    expected_variance: f64,
    is_dirac: bool,
    variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_error: Option<f64>,
}

#[derive(Serialize)]
struct BarycenterReport {
    schema_version: u32,
    command: &'static str,
    method: Method,
    epsilon: f64,
    inputs: usize,
    weights: Vec<f64>,
    iterations: usize,
    outer_iterations: usize,
    final_change: f64,
    converged: bool,
    collapsed: bool,
    log_domain: bool,
    wall_ms: f64,
    kernel_applies: usize,
    kernel_applies_per_sweep: f64,
    moments: MomentsReport,
    output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleComparison>,
}

/// Oracle block when every input is a 1D Gaussian.
fn compare_with_oracle(cfg: &BarycenterConfig, weights: &[f64], result: &DiscreteMeasure) -> Option<OracleComparison> {
    if result.grid().ndim() != 1 {
        return None;
    }
    let gaussians: Option<Vec<_>> = cfg.inputs.iter().map(InputSpec::as_gaussian).collect();
    let gaussians = gaussians?;
    let mus = gaussians.iter().map(|g| g.mean[0]).collect();
    let sigma2s = gaussians.iter().map(|g| g.variance[0]).collect();
    let kind = config::oracle_kind(cfg.method);
    let spec = GaussianBarycenterSpec::new(mus, sigma2s, weights.to_vec(), cfg.epsilon, kind).ok()?;
    let oracle = solve_variance(&spec).ok()?;
    let variance = result.moments().variance[0];
    Some(OracleComparison {
        kind,
        expected_mean: oracle.mean,
        expected_variance: oracle.variance,
        is_dirac: oracle.is_dirac,
        variance,
        relative_error: (oracle.variance > 0.0).then(|| (variance - oracle.variance).abs() / oracle.variance),
    })
}

pub fn barycenter_cmd(config_path: &Path) -> Result<Outcome> {
    let cfg: BarycenterConfig = config::load(config_path)?;
    cfg.validate()?;
    let paths = Paths::for_config(config_path);
    let refs: Vec<&InputSpec> = cfg.inputs.iter().collect();
    let grid = resolve_grid(cfg.grid.clone(), &refs, &paths)?;
    let measures = cfg
        .inputs
        .iter()
        .map(|input| load_input(input, &grid, &paths))
        .collect::<Result<Vec<_>>>()?;
    let weights = cfg.weights.clone().unwrap_or_else(|| uniform_weights(measures.len()));
    let kernel = KernelOperator::new(cfg.kernel, &grid, cfg.epsilon)?;
    let problem = BarycenterProblem::new(&measures, weights.clone(), &kernel)?
        .with_tol(cfg.tol)
        .with_max_iter(cfg.max_iter)
        .with_outer_iter(cfg.outer_iter)
        .with_domain(cfg.domain);
    log::info!("{} barycenter of {} inputs on {} bins", cfg.method.name(), measures.len(), grid.len());
    let result = barycenter(&problem, cfg.method)?;

    let output = paths.resolve(&cfg.output);
    io::save_measure(&result.barycenter, &output).with_context(|| format!("writing {}", output.display()))?;
    let report = BarycenterReport {
        schema_version: SCHEMA_VERSION,
        command: "barycenter",
        method: cfg.method,
        epsilon: cfg.epsilon,
        inputs: measures.len(),
        oracle: compare_with_oracle(&cfg, &weights, &result.barycenter),
        weights,
        iterations: result.iterations,
        outer_iterations: result.outer_iterations,
        final_change: if result.final_change.is_finite() { result.final_change } else { f64::MAX },
        converged: result.converged,
        collapsed: result.collapsed,
        log_domain: result.log_domain,
        wall_ms: ms(result.wall_time),
        kernel_applies: result.kernel_applies,
        kernel_applies_per_sweep: result.applies_per_sweep(),
        moments: MomentsReport::of(&result.barycenter),
        output: cfg.output.clone(),
    };
    write_json(&report, &paths.resolve(&cfg.report))?;
    if result.converged {
        Ok(Outcome::Done)
    } else {
        log::warn!("stopped at max_iter = {} with change {:e}", cfg.max_iter, result.final_change);
        Ok(Outcome::MaxIter)
    }
}

#[derive(Serialize)]
struct OracleReport {
    schema_version: u32,
    command: &'static str,
    epsilon: f64,
    eps_prime2: f64,
    results: Vec<OracleResult>,
}

pub fn oracle_cmd(config_path: &Path) -> Result<Outcome> {
    let cfg: OracleConfig = config::load(config_path)?;
    let kinds = match cfg.kind {
        Some(kind) => vec![kind],
        None => OracleKind::ALL.to_vec(),
    };
    let spec = GaussianBarycenterSpec::new(cfg.mus, cfg.sigma2s, cfg.weights, cfg.epsilon, kinds[0])?;
    let results = kinds
        .iter()
        .map(|&kind| solve_variance(&spec.with_kind(kind)))
        .collect::<otbary::Result<Vec<_>>>()?;
    let report = OracleReport {
        schema_version: SCHEMA_VERSION,
        command: "oracle",
        epsilon: spec.epsilon,
        eps_prime2: spec.eps_prime2(),
        results,
    };
    print!("{}", crate::report::to_json(&report)?);
    if let Some(path) = &cfg.report {
        write_json(&report, &Paths::for_config(config_path).resolve(path))?;
    }
    Ok(Outcome::Done)
}

/// Per-sweep oracle error and solver time (cumulative, observer excluded).
struct Curve {
    errors: Vec<f64>,
    ms: Vec<f64>,
    applies_per_sweep: f64,
}

fn convergence_curve(problem: &BarycenterProblem<'_>, method: Method, oracle: &DiscreteMeasure) -> Result<Curve> {
    let mut errors = Vec::new();
    let mut times = Vec::new();
    let mut solver = Duration::ZERO;
    let mut last = Instant::now();
    let result = barycenter_observed(problem, method, None, &mut |sweep, alpha| {
        if sweep == 1 {
            // A log-domain restart replays the curve from the start.
            errors.clear();
            times.clear();
            solver = Duration::ZERO;
        }
        solver += last.elapsed();
        let mass: f64 = alpha.iter().sum();
        let err = alpha
            .iter()
            .zip(oracle.weights())
            .map(|(a, o)| (a / mass - o).abs())
            .sum();
        errors.push(err);
        times.push(ms(solver));
        last = Instant::now();
    })?;
    Ok(Curve {
        errors,
        ms: times,
        applies_per_sweep: result.applies_per_sweep(),
    })
}

#[derive(Serialize)]
struct MethodSummary {
    method: Method,
    oracle_kind: OracleKind,
    oracle_variance: f64,
    sweeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_error: Option<f64>,
    kernel_applies_per_sweep: f64,
    wall_ms: f64,
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    command: &'static str,
    epsilon: f64,
    methods: Vec<MethodSummary>,
    output: PathBuf,
}

pub fn bench_convergence_cmd(config_path: &Path) -> Result<Outcome> {
    let cfg: BenchConfig = config::load(config_path)?;
    cfg.validate()?;
    let paths = Paths::for_config(config_path);
    let weights = cfg.weights.clone().unwrap_or_else(|| uniform_weights(cfg.mus.len()));
    let spec = GaussianBarycenterSpec::new(
        cfg.mus.clone(),
        cfg.sigma2s.clone(),
        weights.clone(),
        cfg.epsilon,
        OracleKind::Lebesgue,
    )?;
    let measures = cfg
        .mus
        .iter()
        .zip(&cfg.sigma2s)
        .map(|(&mu, &s2)| otbary::measures::discretize_gaussian(&[mu], &[s2], &cfg.grid))
        .collect::<otbary::Result<Vec<_>>>()?;
    let kernel = KernelOperator::new(cfg.kernel, &cfg.grid, cfg.epsilon)?;
    let problem = BarycenterProblem::new(&measures, weights, &kernel)?
        .with_tol(cfg.tol.unwrap_or(f64::MIN_POSITIVE))
        .with_max_iter(cfg.max_iter);

    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for (method, kind) in [(Method::Ibp, OracleKind::Lebesgue), (Method::Debiased, OracleKind::Debiased)] {
        let spec = spec.with_kind(kind);
        let oracle = oracle_measure(&spec, &cfg.grid)?;
        let curve = convergence_curve(&problem, method, &oracle)?;
        summaries.push(MethodSummary {
            method,
            oracle_kind: kind,
            oracle_variance: solve_variance(&spec)?.variance,
            sweeps: curve.errors.len(),
            final_error: curve.errors.last().copied(),
            kernel_applies_per_sweep: curve.applies_per_sweep,
            wall_ms: curve.ms.last().copied().unwrap_or(0.0),
        });
        curves.push(curve);
    }

    let output = paths.resolve(&cfg.output);
    let mut writer = csv::Writer::from_path(&output).with_context(|| format!("writing {}", output.display()))?;
    writer.write_record(["sweep", "err_ibp", "err_debiased", "ms_ibp", "ms_debiased"])?;
    let rows = curves.iter().map(|c| c.errors.len()).max().unwrap_or(0);
    let cell = |v: Option<&f64>, exp: bool| match v {
        Some(x) if exp => format!("{x:e}"),
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    };
    for i in 0..rows {
        writer.write_record([
            (i + 1).to_string(),
            cell(curves[0].errors.get(i), true),
            cell(curves[1].errors.get(i), true),
            cell(curves[0].ms.get(i), false),
            cell(curves[1].ms.get(i), false),
        ])?;
    }
    writer.flush()?;

    if let Some(path) = &cfg.report {
        let report = BenchReport {
            schema_version: SCHEMA_VERSION,
            command: "bench-convergence",
            epsilon: cfg.epsilon,
            methods: summaries,
            output: cfg.output.clone(),
        };
        write_json(&report, &paths.resolve(path))?;
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct EllipsesManifest {
    schema_version: u32,
    command: &'static str,
    count: usize,
    side: usize,
    seed: u64,
    files: Vec<String>,
}

pub fn gen_ellipses_cmd(config_path: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: EllipsesConfig = config::load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let dir = Paths::for_config(config_path).resolve(&cfg.output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let prefix = cfg.prefix.as_deref().unwrap_or("ellipse_");
    let shapes = generate_nested_ellipses(cfg.count, cfg.side, seed)?;
    let mut files = Vec::new();
    for (i, shape) in shapes.iter().enumerate() {
        let name = format!("{prefix}{i:03}.csv");
        io::save_measure(shape, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = EllipsesManifest {
        schema_version: SCHEMA_VERSION,
        command: "gen-ellipses",
        count: cfg.count,
        side: cfg.side,
        seed,
        files,
    };
    write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(Outcome::Done)
}

fn dictionary_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading dictionary {}", dir.display()))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    ensure!(!files.is_empty(), "no .csv atoms in {}", dir.display());
    Ok(files)
}

fn load_atoms(cfg: &EmbedConfig, paths: &Paths) -> Result<(UniformGrid, Vec<DiscreteMeasure>)> {
    let specs: Vec<InputSpec> = match &cfg.dictionary {
        DictionarySource::Directory(dir) => dictionary_files(&paths.resolve(dir))?
            .into_iter()
            .map(InputSpec::File)
            .collect(),
        DictionarySource::Atoms(atoms) => atoms.clone(),
    };
    let refs: Vec<&InputSpec> = specs.iter().chain(cfg.target.as_ref()).collect();
    let grid = resolve_grid(cfg.grid.clone(), &refs, paths)?;
    let atoms = specs
        .iter()
        .map(|s| load_input(s, &grid, paths))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, atoms))
}

/// Interior weights drawn uniformly from `[0.2, 1]` and normalized.
pub fn planted_weights(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

#[derive(Serialize)]
struct PlantedReport {
    w_true: Vec<f64>,
    l1_error: f64,
}

#[derive(Serialize)]
struct EmbedReport {
    schema_version: u32,
    command: &'static str,
    method: embedding::UnrollMethod,
    epsilon: f64,
    unroll: usize,
    w: Vec<f64>,
    theta: Vec<f64>,
    loss: f64,
    grad_norm: f64,
    iterations: usize,
    kernel_applies_per_sweep: usize,
    wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    planted: Option<PlantedReport>,
}

pub fn embed_cmd(config_path: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: EmbedConfig = config::load(config_path)?;
    cfg.validate()?;
    let paths = Paths::for_config(config_path);
    let (grid, atoms) = load_atoms(&cfg, &paths)?;
    let count = atoms.len();
    let kernel = KernelOperator::new(cfg.kernel, &grid, cfg.epsilon)?;
    let dict = Dictionary::new(atoms, kernel, cfg.unroll)?;

    let (target, w_true) = match (&cfg.target, &cfg.planted) {
        (Some(target), _) => (load_input(target, &grid, &paths)?, None),
        (None, Some(planted)) => {
            let w = match &planted.weights {
                Some(w) => w.clone(),
                None => planted_weights(count, seed.unwrap_or(cfg.seed)),
            };
            (unrolled_barycenter(&dict, &w, cfg.method)?, Some(w))
        }
        (None, None) => unreachable!("validated"),
    };
    let defaults = FitOptions::default();
    let opts = FitOptions {
        method: cfg.method,
        steps: cfg.steps.unwrap_or(defaults.steps),
        learning_rate: cfg.learning_rate.unwrap_or(defaults.learning_rate),
        gtol: cfg.gtol.unwrap_or(defaults.gtol),
        ..defaults
    };
    let started = Instant::now();
    let fit = fit_coordinates(&dict, &target, &opts)?;
    let wall_ms = ms(started.elapsed());
    let planted = w_true.map(|w_true| PlantedReport {
        l1_error: w_true.iter().zip(&fit.weights).map(|(a, b)| (a - b).abs()).sum(),
        w_true,
    });
    let debias = usize::from(cfg.method == embedding::UnrollMethod::Debiased);
    let report = EmbedReport {
        schema_version: SCHEMA_VERSION,
        command: "embed",
        method: cfg.method,
        epsilon: cfg.epsilon,
        unroll: cfg.unroll,
        w: fit.weights,
        theta: fit.theta,
        loss: fit.loss,
        grad_norm: fit.grad_norm,
        iterations: fit.iterations,
        kernel_applies_per_sweep: 2 * count + debias,
        wall_ms,
        planted,
    };
    write_json(&report, &paths.resolve(&cfg.report))?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct DivergenceReport {
    schema_version: u32,
    command: &'static str,
    epsilon: f64,
    /// `S[i][j]`; the diagonal is zero by definition.
    sdiv: Vec<Vec<f64>>,
    ot: Vec<Vec<f64>>,
    converged: bool,
    kernel_applies: usize,
}

pub fn divergence_cmd(config_path: &Path) -> Result<Outcome> {
    let cfg: DivergenceConfig = config::load(config_path)?;
    cfg.validate()?;
    let paths = Paths::for_config(config_path);
    let refs: Vec<&InputSpec> = cfg.inputs.iter().collect();
    let grid = resolve_grid(cfg.grid.clone(), &refs, &paths)?;
    let measures = cfg
        .inputs
        .iter()
        .map(|input| load_input(input, &grid, &paths))
        .collect::<Result<Vec<_>>>()?;
    let kernel = KernelOperator::new(cfg.kernel, &grid, cfg.epsilon)?;
    let n = measures.len();
    let mut sdiv = vec![vec![0.0; n]; n];
    let mut ot = vec![vec![0.0; n]; n];
    let mut converged = true;
    let mut applies = 0;
    for i in 0..n {
        for j in i + 1..n {
            let solve = sinkhorn_divergence_solve(&measures[i], &measures[j], &kernel, cfg.tol, DEFAULT_MAX_ITER)?;
            let v = solve.value;
            sdiv[i][j] = v.sdiv;
            sdiv[j][i] = v.sdiv;
            ot[i][j] = v.ot_ab;
            ot[j][i] = v.ot_ab;
            ot[i][i] = v.ot_aa;
            ot[j][j] = v.ot_bb;
            converged &= v.converged;
            applies += 3 + 2 * solve.pair.iterations + solve.sym_alpha.iterations + solve.sym_beta.iterations;
        }
    }
    let report = DivergenceReport {
        schema_version: SCHEMA_VERSION,
        command: "divergence",
        epsilon: cfg.epsilon,
        sdiv,
        ot,
        converged,
        kernel_applies: applies,
    };
    write_json(&report, &paths.resolve(&cfg.report))?;
    Ok(if converged { Outcome::Done } else { Outcome::MaxIter })
}
