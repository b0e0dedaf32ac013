//! JSON run configurations and the input plumbing shared by subcommands.
//!
//! Relative paths inside a config are resolved against the config file's
//! directory, so a config and its data can be moved together.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use otbary::barycenters::{self, Domain, Method};
use otbary::embedding::{self, UnrollMethod};
use otbary::gaussian_oracle::OracleKind;
use otbary::kernels::KernelKind;
use otbary::measures::{discretize_gaussian, io, DiscreteMeasure, UniformGrid};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub struct Paths {
    base: PathBuf,
}

impl Paths {
    pub fn for_config(config: &Path) -> Self {
        let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
        Paths { base }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }
}

/// An input measure: a CSV path, or a Gaussian discretized on the run grid.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    File(PathBuf),
    Gaussian(GaussianInput),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianInput {
    pub mean: Vec<f64>,
    /// Per-axis variance.
    pub variance: Vec<f64>,
}

impl InputSpec {
    pub fn as_gaussian(&self) -> Option<&GaussianInput> {
        match self {
            InputSpec::Gaussian(g) => Some(g),
            InputSpec::File(_) => None,
        }
    }
}

/// The configured grid, or else the sidecar of the first file input.
pub fn resolve_grid(grid: Option<UniformGrid>, inputs: &[&InputSpec], paths: &Paths) -> Result<UniformGrid> {
    if let Some(grid) = grid {
        return Ok(grid);
    }
    for input in inputs {
        if let InputSpec::File(path) = input {
            let sidecar = io::sidecar_path(&paths.resolve(path));
            return io::load_grid(&sidecar).with_context(|| format!("loading grid {}", sidecar.display()));
        }
    }
    bail!("no `grid` given and no file input to take one from")
}

pub fn load_input(input: &InputSpec, grid: &UniformGrid, paths: &Paths) -> Result<DiscreteMeasure> {
    match input {
        InputSpec::File(path) => load_file(&paths.resolve(path), grid),
        InputSpec::Gaussian(g) => {
            discretize_gaussian(&g.mean, &g.variance, grid).context("discretizing gaussian input")
        }
    }
}

/// Loads a measure CSV, refusing it when its sidecar names a different grid.
pub fn load_file(path: &Path, grid: &UniformGrid) -> Result<DiscreteMeasure> {
    let sidecar = io::sidecar_path(path);
    if sidecar.exists() {
        let own = io::load_grid(&sidecar)?;
        ensure!(&own == grid, "{} lives on a different grid than the run", path.display());
    }
    io::load_measure(path, grid).with_context(|| format!("loading {}", path.display()))
}

pub fn uniform_weights(count: usize) -> Vec<f64> {
    vec![1.0 / count as f64; count]
}

fn default_kernel() -> KernelKind {
    KernelKind::Separable
}

fn default_bary_tol() -> f64 {
    barycenters::DEFAULT_TOL
}

fn default_bary_max_iter() -> usize {
    barycenters::DEFAULT_MAX_ITER
}

fn default_outer_iter() -> usize {
    barycenters::DEFAULT_OUTER_ITER
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterConfig {
    #[serde(default)]
    pub grid: Option<UniformGrid>,
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub epsilon: f64,
    pub method: Method,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_bary_tol")]
    pub tol: f64,
    #[serde(default = "default_bary_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_outer_iter")]
    pub outer_iter: usize,
    #[serde(default)]
    pub domain: Domain,
    /// Barycenter CSV.
    pub output: PathBuf,
    pub report: PathBuf,
}

impl BarycenterConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.inputs.is_empty(), "`inputs` is empty");
        ensure!(self.epsilon > 0.0 && self.epsilon.is_finite(), "`epsilon` must be positive");
        ensure!(self.tol > 0.0, "`tol` must be positive");
        if let Some(w) = &self.weights {
            ensure!(w.len() == self.inputs.len(), "{} weights for {} inputs", w.len(), self.inputs.len());
        }
        Ok(())
    }
}

/// Oracle kind matching a solver.
pub fn oracle_kind(method: Method) -> OracleKind {
    match method {
        Method::Ibp => OracleKind::Lebesgue,
        Method::Debiased => OracleKind::Debiased,
        Method::Product => OracleKind::Product,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub mus: Vec<f64>,
    pub sigma2s: Vec<f64>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    /// All three kinds when absent.
    #[serde(default)]
    pub kind: Option<OracleKind>,
    #[serde(default)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub grid: UniformGrid,
    pub mus: Vec<f64>,
    pub sigma2s: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub epsilon: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    pub max_iter: usize,
    /// Without a tolerance both solvers run exactly `max_iter` sweeps.
    #[serde(default)]
    pub tol: Option<f64>,
    /// Per-sweep CSV.
    pub output: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.grid.ndim() == 1, "bench-convergence needs a 1D grid");
        ensure!(self.mus.len() == self.sigma2s.len(), "`mus` and `sigma2s` differ in length");
        ensure!(self.mus.len() >= 2, "need at least two inputs");
        if let Some(tol) = self.tol {
            ensure!(tol > 0.0, "`tol` must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsesConfig {
    pub count: usize,
    pub side: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub prefix: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum DictionarySource {
    /// Every `*.csv` in the directory, in file-name order.
    Directory(PathBuf),
    Atoms(Vec<InputSpec>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Planted {
    /// Drawn from the seed when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn default_unroll() -> usize {
    embedding::DEFAULT_UNROLL
}

fn default_unroll_method() -> UnrollMethod {
    UnrollMethod::Debiased
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    #[serde(default)]
    pub grid: Option<UniformGrid>,
    pub dictionary: DictionarySource,
    #[serde(default)]
    pub target: Option<InputSpec>,
    #[serde(default)]
    pub planted: Option<Planted>,
    pub epsilon: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_unroll_method")]
    pub method: UnrollMethod,
    #[serde(default = "default_unroll")]
    pub unroll: usize,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub gtol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub report: PathBuf,
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.target.is_some() != self.planted.is_some(),
            "give exactly one of `target` and `planted`"
        );
        ensure!(self.epsilon > 0.0 && self.epsilon.is_finite(), "`epsilon` must be positive");
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceConfig {
    #[serde(default)]
    pub grid: Option<UniformGrid>,
    pub inputs: Vec<InputSpec>,
    pub epsilon: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_divergence_tol")]
    pub tol: f64,
    pub report: PathBuf,
}

fn default_divergence_tol() -> f64 {
    otbary::sinkhorn::DEFAULT_TOL
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.inputs.len() >= 2, "need at least two inputs");
        ensure!(self.epsilon > 0.0 && self.epsilon.is_finite(), "`epsilon` must be positive");
        ensure!(self.tol > 0.0, "`tol` must be positive");
        Ok(())
    }
}
