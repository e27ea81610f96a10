//! The `sfofr` command line: run configuration, file artifacts and subcommands.

pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, ErrorClass, Result};
use crate::estimator::{CoefficientSet, FitConfig, FitResult, PreparedFit, NEUMANN_MAX_ITER, NEUMANN_TOL};
use crate::inference::{bootstrap_prepared, cpd, interval_score, BootstrapConfig, BootstrapSurfaces, Surface};
use crate::selection::{search_prepared, GridEvaluation, LambdaGrid};
use crate::simulate::{
    monte_carlo, simulate_training, true_beta_surface, true_rho_surface, MetricTable, SimulationConfig, TestDesign,
};
use crate::spatial::{knn_bisquare_weights, moran_curve, row_normalize, DistanceMetric, SpatialWeights, DEFAULT_NEIGHBOURS};

use self::io::{
    ensure_dir, read_coords, read_curves, read_json, read_surface, read_weights, write_curves, write_json, write_rows,
    write_surface, write_weights,
};

/// Version of the run-configuration and artifact schemas.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sfofr", version, about = "Penalized spatial function-on-function regression")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory, created when missing.
    #[arg(long, global = true, default_value = "sfofr_out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one training sample of the simulation design.
    Simulate,
    /// Estimate ρ and β from curve files.
    Fit(FitArgs),
    /// Bootstrap bands around a previous fit.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo accuracy table with timings.
    Bench(BenchArgs),
    /// Functional Moran's I of a set of curves.
    Moran(MoranArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, conflicts_with = "coords")]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Use the curves as given instead of subtracting the mean curve.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Directory holding the artifacts of `sfofr fit`; defaults to the output directory.
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub truth_beta: Option<PathBuf>,
    #[arg(long)]
    pub truth_rho: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MoranArgs {
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long, conflicts_with = "coords")]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Subtract the mean curve first.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub k_y: usize,
    pub k_x: usize,
    pub degree: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            k_y: f.k_y,
            k_x: f.k_x,
            degree: f.degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvSection {
    pub order: usize,
    pub allow_pinv: bool,
}

impl Default for IvSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            order: f.iv_order,
            allow_pinv: f.allow_pinv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeumannSection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NeumannSection {
    fn default() -> Self {
        Self {
            tol: NEUMANN_TOL,
            max_iter: NEUMANN_MAX_ITER,
        }
    }
}

/// Either a fixed pair (`rho`, `beta`) or a grid (`rho_values`, `beta_values`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub rho_values: Option<Vec<f64>>,
    pub beta_values: Option<Vec<f64>>,
    #[serde(default)]
    pub allow_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub n_train: usize,
    pub n_test: usize,
    pub eta: f64,
    pub grid_size: usize,
    pub replications: usize,
    pub noise_sd: f64,
    pub test_design: TestDesign,
    /// Compute bootstrap coverage in `bench`.
    pub bootstrap: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimulationConfig::default();
        Self {
            n_train: s.n_train,
            n_test: s.n_test,
            eta: s.eta,
            grid_size: s.grid_size,
            replications: s.replications,
            noise_sd: s.noise_sd,
            test_design: s.test_design,
            bootstrap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub y: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub w: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    /// h of the nearest-neighbour weights built from coordinates.
    pub neighbours: usize,
    pub distance: DistanceMetric,
    pub center: bool,
    pub truth_beta: Option<PathBuf>,
    pub truth_rho: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            y: None,
            x: None,
            w: None,
            coords: None,
            neighbours: DEFAULT_NEIGHBOURS,
            distance: DistanceMetric::default(),
            center: true,
            truth_beta: None,
            truth_rho: None,
        }
    }
}

/// Contents of a run-configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub iv: IvSection,
    #[serde(default)]
    pub neumann: NeumannSection,
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub io: IoSection,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            jobs: None,
            basis: BasisSection::default(),
            iv: IvSection::default(),
            neumann: NeumannSection::default(),
            lambda: LambdaSection::default(),
            bootstrap: BootstrapConfig::default(),
            simulation: SimulationSection::default(),
            io: IoSection::default(),
        }
    }
}

/// Smoothing requested by a configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64, f64),
    Grid(LambdaGrid),
}

impl LambdaChoice {
    fn grid(&self) -> Result<LambdaGrid> {
        match self {
            LambdaChoice::Fixed(r, b) => LambdaGrid::singleton(*r, *b),
            LambdaChoice::Grid(g) => Ok(g.clone()),
        }
    }
}

impl RunConfig {
    /// Parses, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                path,
                format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let io = &mut cfg.io;
        for p in [
            &mut io.y,
            &mut io.x,
            &mut io.w,
            &mut io.coords,
            &mut io.truth_beta,
            &mut io.truth_rho,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::io(
                    p.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by the run configuration"),
                ));
            }
        }
        cfg.validate().map_err(|e| Error::schema(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda_choice()?;
        self.bootstrap.validate()?;
        self.simulation_config()?.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.io.w.is_some() && self.io.coords.is_some() {
            return Err(Error::Config("io.w and io.coords are mutually exclusive".into()));
        }
        if self.io.neighbours < 1 {
            return Err(Error::Config("io.neighbours must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            k_y: self.basis.k_y,
            k_x: self.basis.k_x,
            degree: self.basis.degree,
            iv_order: self.iv.order,
            allow_pinv: self.iv.allow_pinv,
            neumann_tol: self.neumann.tol,
            neumann_max_iter: self.neumann.max_iter,
        }
    }

    pub fn lambda_choice(&self) -> Result<LambdaChoice> {
        let l = &self.lambda;
        let fixed = l.rho.is_some() || l.beta.is_some();
        let grid = l.rho_values.is_some() || l.beta_values.is_some();
        if fixed && grid {
            return Err(Error::Config("lambda: give either rho/beta or rho_values/beta_values".into()));
        }
        if fixed {
            let (Some(r), Some(b)) = (l.rho, l.beta) else {
                return Err(Error::Config("lambda: a fixed pair needs both rho and beta".into()));
            };
            LambdaGrid::singleton(r, b)?;
            return Ok(LambdaChoice::Fixed(r, b));
        }
        let d = LambdaGrid::default();
        Ok(LambdaChoice::Grid(LambdaGrid::new(
            l.rho_values.clone().unwrap_or(d.rho_values),
            l.beta_values.clone().unwrap_or(d.beta_values),
            l.allow_zero,
        )?))
    }

    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let s = &self.simulation;
        Ok(SimulationConfig {
            n_train: s.n_train,
            n_test: s.n_test,
            eta: s.eta,
            grid_size: s.grid_size,
            seed: self.seed,
            replications: s.replications,
            noise_sd: s.noise_sd,
            test_design: s.test_design,
            fit: self.fit_config(),
            lambda_grid: self.lambda_choice()?.grid()?,
            bootstrap: s.bootstrap.then_some(self.bootstrap),
        })
    }
}

/// Contents of `theta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub lambda_rho: f64,
    pub lambda_beta: f64,
    pub bic: f64,
    pub edf: f64,
    pub sigma2_hat: f64,
    pub centered: bool,
    pub neumann_iterations: usize,
    pub config: FitConfig,
    pub knots_y: Vec<f64>,
    pub knots_x: Vec<f64>,
    /// K_y × K_y coefficients of ρ, one inner vector per row.
    pub rho_coefficients: Vec<Vec<f64>>,
    /// K_y × K_x coefficients of β, one inner vector per row.
    pub beta_coefficients: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], what: &str, path: &Path) -> Result<DMatrix<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != c) {
        return Err(Error::schema(path, format!("{what} is not a rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

impl FitArtifact {
    pub fn from_fit(fit: &FitResult, config: &FitConfig, centered: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            lambda_rho: fit.lambdas.0,
            lambda_beta: fit.lambdas.1,
            bic: fit.bic,
            edf: fit.edf,
            sigma2_hat: fit.sigma2_hat,
            centered,
            neumann_iterations: fit.neumann_iterations,
            config: config.clone(),
            knots_y: fit.basis_y.knots().to_vec(),
            knots_x: fit.basis_x.knots().to_vec(),
            rho_coefficients: rows_of(&fit.theta.rho),
            beta_coefficients: rows_of(&fit.theta.beta),
        }
    }

    pub fn coefficients(&self, path: &Path) -> Result<CoefficientSet> {
        Ok(CoefficientSet {
            rho: matrix_of(&self.rho_coefficients, "rho_coefficients", path)?,
            beta: matrix_of(&self.beta_coefficients, "beta_coefficients", path)?,
        })
    }
}

/// Files written by every `sfofr fit`; a grid search adds `selection.csv`.
pub const FIT_FILES: [&str; 8] = [
    "beta_surface.csv",
    "rho_surface.csv",
    "theta.json",
    "fitted.csv",
    "residuals.csv",
    "y_used.csv",
    "x_used.csv",
    "w_used.csv",
];

/// Files written by `sfofr simulate`.
pub const SIMULATE_FILES: [&str; 5] = ["y.csv", "x.csv", "w.csv", "beta_true.csv", "rho_true.csv"];

struct Context {
    config: RunConfig,
    out_dir: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(j) = cli.jobs {
        config.jobs = Some(j);
    }
    if config.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let ctx = Context {
        config,
        out_dir: cli.out_dir,
    };
    let command = cli.command;
    match ctx.config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} worker threads: {e}")))?
            .install(|| dispatch(&ctx, command)),
        None => dispatch(&ctx, command),
    }
}

fn dispatch(ctx: &Context, command: Command) -> Result<()> {
    match command {
        Command::Simulate => cmd_simulate(ctx),
        Command::Fit(a) => cmd_fit(ctx, a),
        Command::Bootstrap(a) => cmd_bootstrap(ctx, a),
        Command::Bench(a) => cmd_bench(ctx, a),
        Command::Moran(a) => cmd_moran(ctx, a),
    }
}

/// Process exit code for a result: 0, or 2/3/4 by error class.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => match e.class() {
            ErrorClass::Schema => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        },
    }
}

fn cmd_simulate(ctx: &Context) -> Result<()> {
    let sim = ctx.config.simulation_config()?;
    sim.validate()?;
    let data = simulate_training(&sim, 0)?;
    let grid = sim.grid()?;
    let pts = grid.points();
    let beta = true_beta_surface(&grid, &grid);
    let rho = true_rho_surface(&grid, sim.eta);
    ensure_dir(&ctx.out_dir)?;
    let out = |f: &str| ctx.out_dir.join(f);
    write_curves(&out("y.csv"), &data.y)?;
    write_curves(&out("x.csv"), &data.x)?;
    write_weights(&out("w.csv"), &data.w)?;
    write_surface(&out("beta_true.csv"), "t\\s", pts, pts, &beta)?;
    write_surface(&out("rho_true.csv"), "t\\u", pts, pts, &rho)?;
    info!(
        "simulated n = {} curves on {} grid points into {}",
        sim.n_train,
        pts.len(),
        ctx.out_dir.display()
    );
    Ok(())
}

fn required(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| Error::Config(format!("no {name} file given (flag --{name} or io.{name})")))
}

/// W from a weight file or from coordinates, row-normalized.
fn load_weights(ctx: &Context, w: Option<PathBuf>, coords: Option<PathBuf>) -> Result<SpatialWeights> {
    let io = &ctx.config.io;
    let (w, coords) = if w.is_some() || coords.is_some() {
        (w, coords)
    } else {
        (io.w.clone(), io.coords.clone())
    };
    match (w, coords) {
        (Some(_), Some(_)) => Err(Error::Config("give either a weight file or coordinates, not both".into())),
        (Some(p), None) => {
            let w = read_weights(&p)?;
            if w.is_normalized() {
                Ok(w)
            } else {
                info!("row-normalizing {}", p.display());
                Ok(row_normalize(&w).weights)
            }
        }
        (None, Some(p)) => {
            let c = read_coords(&p)?;
            knn_bisquare_weights(&c, io.neighbours, io.distance).map_err(|e| Error::schema(&p, e.to_string()))
        }
        (None, None) => Err(Error::Config("no weight matrix given (--w or --coords)".into())),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_selection(path: &Path, evals: &[GridEvaluation]) -> Result<()> {
    let header: Vec<String> = ["lambda_rho", "lambda_beta", "bic", "edf", "error"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = evals
        .iter()
        .map(|e| {
            vec![
                e.lambda_rho.to_string(),
                e.lambda_beta.to_string(),
                fmt_opt(e.bic),
                fmt_opt(e.edf),
                e.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

fn cmd_fit(ctx: &Context, args: FitArgs) -> Result<()> {
    let io = &ctx.config.io;
    let y_path = required(args.y, &io.y, "y")?;
    let x_path = required(args.x, &io.x, "x")?;
    let mut y = read_curves(&y_path)?;
    let mut x = read_curves(&x_path)?;
    let w = load_weights(ctx, args.w, args.coords)?;
    if y.n() != x.n() || y.n() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} curves, {} holds {}, W is {}×{}",
            y_path.display(),
            y.n(),
            x_path.display(),
            x.n(),
            w.n(),
            w.n()
        )));
    }
    let center = io.center && !args.no_center;
    if center {
        y = y.centered();
        x = x.centered();
    }
    let config = ctx.config.fit_config();
    let prepared = PreparedFit::new(&y, &x, &w, &config)?;
    let (fit, evaluations) = match ctx.config.lambda_choice()? {
        LambdaChoice::Fixed(r, b) => (prepared.fit_at(r, b)?, None),
        LambdaChoice::Grid(g) => {
            let out = search_prepared(&prepared, &g)?;
            info!(
                "BIC selected lambda_rho = {}, lambda_beta = {} out of {} pairs",
                out.lambda_rho,
                out.lambda_beta,
                g.len()
            );
            (out.fit, Some(out.evaluations))
        }
    };

    ensure_dir(&ctx.out_dir)?;
    let out = |f: &str| ctx.out_dir.join(f);
    let t = y.grid().points();
    write_surface(&out("beta_surface.csv"), "t\\s", t, x.grid().points(), &fit.beta_surface)?;
    write_surface(&out("rho_surface.csv"), "t\\u", t, t, &fit.rho_surface)?;
    write_json(&out("theta.json"), &FitArtifact::from_fit(&fit, &config, center))?;
    write_curves(&out("fitted.csv"), &fit.fitted)?;
    write_curves(&out("residuals.csv"), &fit.residuals)?;
    write_curves(&out("y_used.csv"), &y)?;
    write_curves(&out("x_used.csv"), &x)?;
    write_weights(&out("w_used.csv"), &w)?;
    if let Some(ev) = evaluations {
        write_selection(&out("selection.csv"), &ev)?;
    }
    info!(
        "fit: BIC {:.6}, edf {:.3}, sigma2 {:.6}; artifacts in {}",
        fit.bic,
        fit.edf,
        fit.sigma2_hat,
        ctx.out_dir.display()
    );
    Ok(())
}

fn artifact(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "fit artifact missing; run `sfofr fit` first"),
        ));
    }
    Ok(p)
}

/// Coverage of bootstrap bands against a known surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub cpd: f64,
    pub score: f64,
    /// Bands have zero width everywhere, as happens with zero residuals.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub replicates: usize,
    pub failed: usize,
    pub beta: Option<CoverageEntry>,
    pub rho: Option<CoverageEntry>,
}

fn coverage(truth_path: &Path, bands: &BootstrapSurfaces, which: Surface) -> Result<CoverageEntry> {
    let truth = read_surface(truth_path)?.values;
    let (lo, hi) = bands.band(which);
    if truth.shape() != lo.shape() {
        return Err(Error::schema(
            truth_path,
            format!("truth surface is {:?}, bands are {:?}", truth.shape(), lo.shape()),
        ));
    }
    Ok(CoverageEntry {
        cpd: cpd(&truth, bands, which)?,
        score: interval_score(&truth, bands, which)?,
        degenerate: lo == hi,
    })
}

fn cmd_bootstrap(ctx: &Context, args: BootstrapArgs) -> Result<()> {
    let dir = args.fit_dir.unwrap_or_else(|| ctx.out_dir.clone());
    let theta_path = artifact(&dir, "theta.json")?;
    let saved: FitArtifact = read_json(&theta_path)?;
    if saved.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(&theta_path, format!("schema_version {} is not supported", saved.schema_version)));
    }
    let y = read_curves(&artifact(&dir, "y_used.csv")?)?;
    let x = read_curves(&artifact(&dir, "x_used.csv")?)?;
    let w = read_weights(&artifact(&dir, "w_used.csv")?)?;
    let boot = BootstrapConfig {
        replicates: args.replicates.unwrap_or(ctx.config.bootstrap.replicates),
        alpha: args.alpha.unwrap_or(ctx.config.bootstrap.alpha),
    };
    boot.validate()?;

    let prepared = PreparedFit::new(&y, &x, &w, &saved.config)?;
    let fit = prepared.fit_at(saved.lambda_rho, saved.lambda_beta)?;
    let stored = saved.coefficients(&theta_path)?;
    let drift = (fit.theta.theta() - stored.theta()).amax();
    if drift > 1e-8 * (1.0 + stored.theta().amax()) {
        warn!("refit differs from theta.json by {drift:e}; the fit directory may be stale");
    }
    let bands = bootstrap_prepared(&prepared, &fit, &boot, ctx.config.seed, false)?;
    if bands.failed > 0 {
        warn!("{} of {} bootstrap refits failed and were skipped", bands.failed, boot.replicates);
    }

    ensure_dir(&ctx.out_dir)?;
    let out = |f: &str| ctx.out_dir.join(f);
    let t = y.grid().points();
    let s = x.grid().points();
    write_surface(&out("beta_lower.csv"), "t\\s", t, s, &bands.lower_beta)?;
    write_surface(&out("beta_upper.csv"), "t\\s", t, s, &bands.upper_beta)?;
    write_surface(&out("rho_lower.csv"), "t\\u", t, t, &bands.lower_rho)?;
    write_surface(&out("rho_upper.csv"), "t\\u", t, t, &bands.upper_rho)?;

    let truth_beta = args.truth_beta.or_else(|| ctx.config.io.truth_beta.clone());
    let truth_rho = args.truth_rho.or_else(|| ctx.config.io.truth_rho.clone());
    if truth_beta.is_some() || truth_rho.is_some() {
        let report = CoverageReport {
            alpha: bands.alpha,
            replicates: bands.replicates,
            failed: bands.failed,
            beta: truth_beta.map(|p| coverage(&p, &bands, Surface::Beta)).transpose()?,
            rho: truth_rho.map(|p| coverage(&p, &bands, Surface::Rho)).transpose()?,
        };
        if report.beta.iter().chain(&report.rho).any(|c| c.degenerate) {
            warn!("bootstrap bands have zero width: residuals are identically zero");
        }
        write_json(&out("coverage.json"), &report)?;
    }
    Ok(())
}

/// Header and the single data row of the summary table.
pub fn metric_table_rows(table: &MetricTable) -> (Vec<String>, Vec<String>) {
    let mut header: Vec<String> = ["eta", "n_train", "replications", "failed"].map(String::from).to_vec();
    let mut row = vec![
        table.eta.to_string(),
        table.n_train.to_string(),
        table.replications.len().to_string(),
        table.failures.len().to_string(),
    ];
    let with_se = table.replications.len() > 1;
    for s in &table.summary {
        header.push(format!("{}_mean", s.name));
        row.push(s.mean.to_string());
        if with_se {
            header.push(format!("{}_se", s.name));
            row.push(fmt_opt(s.se));
        }
    }
    (header, row)
}

#[derive(Debug, Serialize)]
struct TimingReport<'a> {
    replications: usize,
    mean_seconds: f64,
    total_seconds: f64,
    threads: usize,
    note: &'a str,
}

fn cmd_bench(ctx: &Context, args: BenchArgs) -> Result<()> {
    let mut sim = ctx.config.simulation_config()?;
    if let Some(r) = args.replications {
        sim.replications = r;
    }
    if let Some(e) = args.eta {
        sim.eta = e;
    }
    if let Some(n) = args.n_train {
        sim.n_train = n;
    }
    sim.validate()?;
    let table = monte_carlo(&sim)?;

    ensure_dir(&ctx.out_dir)?;
    let out = |f: &str| ctx.out_dir.join(f);
    let (header, row) = metric_table_rows(&table);
    write_rows(&out("metrics.csv"), &header, &[row])?;

    let mut rep_header: Vec<String> = ["replication", "lambda_rho", "lambda_beta"].map(String::from).to_vec();
    if let Some(first) = table.replications.first() {
        rep_header.extend(first.metrics().into_iter().map(|(n, _)| n.to_string()));
    }
    let rep_rows: Vec<Vec<String>> = table
        .replications
        .iter()
        .map(|r| {
            let mut v = vec![r.replication.to_string(), r.lambda_rho.to_string(), r.lambda_beta.to_string()];
            v.extend(r.metrics().into_iter().map(|(_, m)| fmt_opt(m)));
            v
        })
        .collect();
    write_rows(&out("replications.csv"), &rep_header, &rep_rows)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        eta: f64,
        n_train: usize,
        requested: usize,
        summary: &'a [crate::simulate::MetricSummary],
        failures: &'a [crate::simulate::ReplicationFailure],
    }
    write_json(
        &out("metrics.json"),
        &Summary {
            eta: table.eta,
            n_train: table.n_train,
            requested: table.requested,
            summary: &table.summary,
            failures: &table.failures,
        },
    )?;

    let timing_rows: Vec<Vec<String>> = table
        .replications
        .iter()
        .map(|r| vec![r.replication.to_string(), r.seconds.to_string()])
        .collect();
    write_rows(&out("timings.csv"), &["replication".into(), "seconds".into()], &timing_rows)?;
    write_json(
        &out("timing.json"),
        &TimingReport {
            replications: table.replications.len(),
            mean_seconds: table.mean_seconds,
            total_seconds: table.replications.iter().map(|r| r.seconds).sum(),
            threads: rayon::current_num_threads(),
            note: "Wall-clock seconds per replication (data generation, grid search, prediction and \
                   optional bootstrap). Timings depend on the hardware and on the number of worker threads.",
        },
    )?;
    info!(
        "bench: {} replications, mean {:.2} s each; tables in {}",
        table.replications.len(),
        table.mean_seconds,
        ctx.out_dir.display()
    );
    Ok(())
}

fn cmd_moran(ctx: &Context, args: MoranArgs) -> Result<()> {
    let y_path = required(args.y, &ctx.config.io.y, "y")?;
    let mut y = read_curves(&y_path)?;
    let w = load_weights(ctx, args.w, args.coords)?;
    if args.center {
        y = y.centered();
    }
    let basis = BasisSystem::new(ctx.config.basis.k_y, ctx.config.basis.degree)?;
    let t = y.grid().points().to_vec();
    let curve = moran_curve(&y, &basis, &w, &t)?;
    ensure_dir(&ctx.out_dir)?;
    let rows: Vec<Vec<String>> = t.iter().zip(&curve).map(|(a, b)| vec![a.to_string(), b.to_string()]).collect();
    write_rows(&ctx.out_dir.join("moran.csv"), &["t".into(), "I".into()], &rows)?;
    Ok(())
}
