//! Command-line driver: reproducible spectra, classical dynamics and
//! phase-space chaos maps with cached diagonalizations.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dicke_chaos::chaos::{
    participation_ratio, pr_at_point, pr_at_surface_point, pr_line_compare, pr_map, pr_scaling,
    ChaosError, NmaxPolicy, ScalingOptions,
};
use dicke_chaos::dynamics::{
    lyapunov_exponent, lyapunov_map, poincare_section, IntegratorControls, LyapunovControls,
};
use dicke_chaos::grid::{CellFlag, PhaseGrid, ScalarMap};
use dicke_chaos::io::{
    fmt_f64, scalar_map_rows, write_csv, write_heatmap_ppm, RunConfig, RunManifest, SpectrumCache,
};
use dicke_chaos::model::{
    classify_energy_region, critical_coupling, ground_state_config, q_for_branch, ModelParams,
    PhasePoint, QBranch,
};
use dicke_chaos::overlap::{eigenstate_amplitudes_at, husimi, husimi_map};
use dicke_chaos::spectrum::{
    build_fock_hamiltonian, converged_flags_with_reduced, diagonalize_ecb_sector,
    diagonalize_into, lambda_moments, peres_jz, reduced_cutoff_eigenvalues, BasisKind, BasisSpec,
    ConvergenceCriterion, Parity, ParitySel, SpectrumPair, SpectrumResult,
};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BranchArg {
    Plus,
    Minus,
}

impl From<BranchArg> for QBranch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Plus => QBranch::Plus,
            BranchArg::Minus => QBranch::Minus,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ParityArg {
    Plus,
    Minus,
}

impl From<ParityArg> for Parity {
    fn from(p: ParityArg) -> Self {
        match p {
            ParityArg::Plus => Parity::Plus,
            ParityArg::Minus => Parity::Minus,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SectorArg {
    Plus,
    Minus,
    Both,
}

#[derive(Parser)]
#[command(
    name = "dicke",
    about = "Classical and quantum chaos diagnostics for the Dicke model",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonOpts,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key=value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Field frequency omega.
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Atomic splitting omega0.
    #[arg(long, global = true)]
    omega0: Option<f64>,
    /// Coupling gamma (absolute units).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Coupling in units of the critical coupling (overrides --gamma).
    #[arg(long, global = true)]
    gamma_rel: Option<f64>,
    /// Counter-rotating weight delta in [0, 1].
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Pseudo-spin length j (2j = number of atoms).
    #[arg(long, global = true)]
    j: Option<f64>,
    /// Photon / displaced-excitation cutoff N_max.
    #[arg(long, global = true)]
    nmax: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Spectrum cache directory (DICKE_CACHE_DIR overrides the default).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Worker thread limit for grid sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Diagonalize the Hamiltonian and emit the spectrum.
    Spectrum {
        /// Basis route.
        #[arg(long, value_enum, default_value_t = BasisArg::Ecb)]
        basis: BasisArg,
        #[arg(long, value_enum, default_value_t = SectorArg::Both)]
        parity: SectorArg,
    },
    /// Spectrum plus per-state convergence flags.
    Converged {
        #[arg(long, value_enum, default_value_t = SectorArg::Both)]
        parity: SectorArg,
    },
    /// Poincaré section on the p = 0 plane from one surface start.
    Poincare {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        jz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        #[arg(long, default_value_t = 200)]
        n_crossings: usize,
    },
    /// Maximal Lyapunov exponent at one surface point.
    Lyapunov {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        jz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        #[arg(long, default_value_t = 2e4)]
        time: f64,
    },
    /// Lyapunov exponent over a (phi, jz) grid on one energy sheet.
    LyapunovMap {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        #[arg(long, default_value_t = 101)]
        grid_phi: usize,
        #[arg(long, default_value_t = 101)]
        grid_jz: usize,
        #[arg(long, default_value_t = 2e4)]
        time: f64,
    },
    /// Husimi value of one eigenstate at one surface point.
    Husimi {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        jz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        /// Eigenstate index within its parity sector (0-based, ascending).
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = ParityArg::Plus)]
        parity: ParityArg,
    },
    /// Husimi function of one eigenstate over the energy surface.
    HusimiMap {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = ParityArg::Plus)]
        parity: ParityArg,
        #[arg(long, default_value_t = 101)]
        grid_phi: usize,
        #[arg(long, default_value_t = 101)]
        grid_jz: usize,
    },
    /// Dump eigenstate weights |C_k|^2 of one coherent state.
    Amplitudes {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        jz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
    },
    /// Participation ratio of one coherent state.
    Pr {
        /// "ground" for the mean-field minimum, else use --epsilon/--jz.
        #[arg(long)]
        point: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        epsilon: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        jz: Option<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        /// Restrict the PR sum to converged eigenstates.
        #[arg(long)]
        restrict_converged: bool,
    },
    /// Participation ratio over a (phi, jz) grid on one energy sheet.
    PrMap {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        #[arg(long, default_value_t = 101)]
        grid_phi: usize,
        #[arg(long, default_value_t = 101)]
        grid_jz: usize,
        #[arg(long)]
        restrict_converged: bool,
    },
    /// Paired Lyapunov / PR samples along a fixed-phi line (both sheets).
    PrLine {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, default_value_t = 61)]
        samples: usize,
        /// Integration time per Lyapunov estimate.
        #[arg(long, default_value_t = 4e3)]
        time: f64,
        #[arg(long)]
        restrict_converged: bool,
    },
    /// PR of one surface point across system sizes, with the scaling verdict.
    PrScaling {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        jz: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
        branch: BranchArg,
        /// Comma-separated list of j values.
        #[arg(long, value_delimiter = ',')]
        j_list: Vec<f64>,
        /// Cutoff policy: "survey" or a fixed number.
        #[arg(long, default_value = "survey")]
        n_max_policy: String,
        /// Smallest atom number entering the dispersion statistics.
        #[arg(long, default_value_t = 60.0)]
        n_min: f64,
        #[arg(long)]
        restrict_converged: bool,
    },
    /// Peres lattice data: <J_z>_k / j against E_k.
    Peres {
        #[arg(long, value_enum, default_value_t = SectorArg::Both)]
        parity: SectorArg,
    },
    /// Excitation-number moments per eigenstate (Fock route).
    Lambda {},
    /// Classify the energy-surface topology at one energy.
    Classify {
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
    },
    /// Recompute the survey table (dimensions, convergence counts, norms
    /// and PR at the two reference points) for a list of j.
    Table1 {
        #[arg(long, value_delimiter = ',')]
        j_list: Vec<f64>,
        #[arg(long, default_value = "survey")]
        n_max_policy: String,
        #[arg(long, default_value_t = -1.4, allow_hyphen_values = true)]
        epsilon: f64,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BasisArg {
    Ecb,
    Fock,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl From<dicke_chaos::io::IoError> for CliError {
    fn from(e: dicke_chaos::io::IoError) -> Self {
        match e {
            dicke_chaos::io::IoError::Config { .. } => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

macro_rules! numeric_from {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numeric(e.to_string())
            }
        }
    };
}
numeric_from!(dicke_chaos::spectrum::SpecError);
numeric_from!(dicke_chaos::dynamics::DynError);
numeric_from!(dicke_chaos::overlap::OverlapError);
numeric_from!(ChaosError);
numeric_from!(dicke_chaos::model::ModelError);
numeric_from!(std::io::Error);

/// Everything a subcommand needs: parameters, cutoff, directories, cache.
struct Ctx {
    params: ModelParams,
    n_max: usize,
    out_dir: PathBuf,
    cache: SpectrumCache,
    config_echo: BTreeMap<String, String>,
}

fn load_config(common: &CommonOpts) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if common.omega.is_some() {
        cfg.omega = common.omega;
    }
    if common.omega0.is_some() {
        cfg.omega0 = common.omega0;
    }
    if common.gamma.is_some() {
        cfg.gamma = common.gamma;
    }
    if common.gamma_rel.is_some() {
        cfg.gamma_rel = common.gamma_rel;
    }
    if common.delta.is_some() {
        cfg.delta = common.delta;
    }
    if common.j.is_some() {
        cfg.j = common.j;
    }
    if common.nmax.is_some() {
        cfg.n_max = common.nmax;
    }
    if common.out_dir.is_some() {
        cfg.out_dir = common.out_dir.clone();
    }
    if common.cache_dir.is_some() {
        cfg.cache_dir = common.cache_dir.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_ctx(common: &CommonOpts) -> Result<Ctx, CliError> {
    let cfg = load_config(common)?;
    let omega = cfg.omega.unwrap_or(1.0);
    let omega0 = cfg.omega0.unwrap_or(1.0);
    let delta = cfg.delta.unwrap_or(1.0);
    let j = cfg.j.unwrap_or(30.0);
    let gamma = match (cfg.gamma_rel, cfg.gamma) {
        (Some(rel), _) => {
            let probe = ModelParams::new(omega, omega0, 0.0, delta, j)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            rel * critical_coupling(&probe).map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, Some(g)) => g,
        (None, None) => return Err(CliError::Usage("set --gamma or --gamma-rel".into())),
    };
    let params = ModelParams::new(omega, omega0, gamma, delta, j)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("dicke-out"));
    std::fs::create_dir_all(&out_dir)?;
    let cache = SpectrumCache::from_env_or(
        cfg.cache_dir.clone().unwrap_or_else(|| out_dir.join("spectrum-cache")),
    )?;
    if let Some(t) = cfg.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut config_echo = cfg.as_map();
    config_echo.insert("gamma".into(), fmt_f64(gamma));
    Ok(Ctx { params, n_max: cfg.n_max.unwrap_or(100), out_dir, cache, config_echo })
}

impl Ctx {
    fn with_params(&self, params: ModelParams, n_max: usize) -> Result<Ctx, CliError> {
        Ok(Ctx {
            params,
            n_max,
            out_dir: self.out_dir.clone(),
            cache: SpectrumCache::new(self.cache.dir())?,
            config_echo: self.config_echo.clone(),
        })
    }
}

/// Diagonalize one ECB sector through the cache.
fn cached_sector(ctx: &Ctx, parity: Parity) -> Result<SpectrumResult, CliError> {
    let basis = BasisSpec {
        kind: BasisKind::Ecb,
        n_max: ctx.n_max,
        parity: match parity {
            Parity::Plus => ParitySel::Plus,
            Parity::Minus => ParitySel::Minus,
        },
    };
    if let Some(hit) = ctx.cache.load(&ctx.params, &basis)? {
        return Ok(hit);
    }
    let spec = diagonalize_ecb_sector(&ctx.params, ctx.n_max, parity)?;
    ctx.cache.store(&spec)?;
    Ok(spec)
}

/// Both ECB sectors through the cache, optionally with convergence flags.
fn cached_pair(ctx: &Ctx, with_convergence: bool) -> Result<SpectrumPair, CliError> {
    let mut plus = cached_sector(ctx, Parity::Plus)?;
    let mut minus = cached_sector(ctx, Parity::Minus)?;
    if with_convergence {
        attach_convergence(ctx, &mut plus)?;
        attach_convergence(ctx, &mut minus)?;
    }
    Ok(SpectrumPair::new(plus, minus)?)
}

/// Attach convergence flags, caching the reduced-cutoff eigenvalues.
fn attach_convergence(ctx: &Ctx, spec: &mut SpectrumResult) -> Result<(), CliError> {
    let criterion = ConvergenceCriterion::default();
    let reduced_basis = BasisSpec {
        kind: spec.basis.kind,
        n_max: spec.basis.n_max - criterion.cutoff_reduction,
        parity: spec.basis.parity,
    };
    let reduced = match ctx.cache.load_values(&spec.params, &reduced_basis)? {
        Some(v) => v,
        None => {
            let v = reduced_cutoff_eigenvalues(spec, &criterion)?;
            ctx.cache.store_values(&spec.params, &reduced_basis, &v)?;
            v
        }
    };
    spec.converged = Some(converged_flags_with_reduced(spec, &criterion, &reduced));
    Ok(())
}

fn surface_point(
    params: &ModelParams,
    epsilon: f64,
    jz: f64,
    phi: f64,
    branch: QBranch,
) -> Result<PhasePoint, CliError> {
    let q = q_for_branch(params, epsilon, jz, phi, branch).ok_or_else(|| {
        CliError::Usage(format!(
            "the surface epsilon = {epsilon} does not reach (jz = {jz}, phi = {phi})"
        ))
    })?;
    Ok(PhasePoint { q, p: 0.0, jz, phi })
}

fn finish(
    ctx: &Ctx,
    subcommand: &str,
    outputs: &[PathBuf],
    summary: serde_json::Value,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(subcommand, ctx.config_echo.clone());
    for p in outputs {
        manifest.add_output(p)?;
    }
    manifest.write(ctx.out_dir.join(format!("{subcommand}-manifest.json")))?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
    Ok(())
}

fn spectrum_rows(spec: &SpectrumResult) -> Vec<Vec<String>> {
    (0..spec.dimension())
        .map(|k| {
            vec![
                k.to_string(),
                spec.parities[k].label().to_string(),
                fmt_f64(spec.eigenvalues[k]),
                fmt_f64(spec.energy_per_particle(k)),
            ]
        })
        .collect()
}

fn sectors_of(arg: SectorArg) -> Vec<Parity> {
    match arg {
        SectorArg::Plus => vec![Parity::Plus],
        SectorArg::Minus => vec![Parity::Minus],
        SectorArg::Both => vec![Parity::Plus, Parity::Minus],
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = build_ctx(&cli.common)?;
    let params = ctx.params;
    match cli.cmd {
        Cmd::Spectrum { basis, parity } => {
            let path = ctx.out_dir.join("spectrum.csv");
            let header = ["k", "parity", "energy", "energy_per_particle"];
            let (rows, dims, e0) = match basis {
                BasisArg::Fock => {
                    let h = build_fock_hamiltonian(&params, ctx.n_max)?;
                    let spec = diagonalize_into(&params, h)?;
                    let e0 = spec.eigenvalues[0];
                    (spectrum_rows(&spec), vec![spec.dimension()], e0)
                }
                BasisArg::Ecb => {
                    let mut rows = Vec::new();
                    let mut dims = Vec::new();
                    let mut e0 = f64::INFINITY;
                    for parity in sectors_of(parity) {
                        let spec = cached_sector(&ctx, parity)?;
                        rows.extend(spectrum_rows(&spec));
                        dims.push(spec.dimension());
                        e0 = e0.min(spec.eigenvalues[0]);
                    }
                    (rows, dims, e0)
                }
            };
            write_csv(&path, &header, rows)?;
            finish(
                &ctx,
                "spectrum",
                &[path],
                json!({
                    "dimensions": dims,
                    "ground_energy": e0,
                    "ground_energy_per_particle": e0 / (params.j * params.omega0),
                }),
            )
        }
        Cmd::Converged { parity } => {
            let mut rows = Vec::new();
            let mut n_conv = 0usize;
            let mut n_states = 0usize;
            for parity in sectors_of(parity) {
                let mut spec = cached_sector(&ctx, parity)?;
                attach_convergence(&ctx, &mut spec)?;
                let flags = spec.converged.as_ref().expect("flags attached");
                n_conv += flags.iter().filter(|&&c| c).count();
                n_states += spec.dimension();
                for k in 0..spec.dimension() {
                    rows.push(vec![
                        k.to_string(),
                        parity.label().to_string(),
                        fmt_f64(spec.eigenvalues[k]),
                        flags[k].to_string(),
                    ]);
                }
            }
            let path = ctx.out_dir.join("converged.csv");
            write_csv(&path, &["k", "parity", "energy", "converged"], rows)?;
            finish(
                &ctx,
                "converged",
                &[path],
                json!({ "n_states": n_states, "n_converged": n_conv }),
            )
        }
        Cmd::Poincare { epsilon, jz, phi, branch, n_crossings } => {
            let start = surface_point(&params, epsilon, jz, phi, branch.into())?;
            let section = poincare_section(
                &params,
                &start,
                epsilon,
                n_crossings,
                &IntegratorControls::default(),
            )?;
            let path = ctx.out_dir.join("poincare.csv");
            let rows: Vec<Vec<String>> = section
                .points
                .iter()
                .map(|p| {
                    vec![
                        fmt_f64(p.phi),
                        fmt_f64(p.jz),
                        fmt_f64(p.crossing_time),
                        p.branch.label().to_string(),
                    ]
                })
                .collect();
            write_csv(&path, &["phi", "jz", "value", "flag"], rows)?;
            finish(
                &ctx,
                "poincare",
                &[path],
                json!({ "n_points": section.points.len(), "truncated": section.truncated }),
            )
        }
        Cmd::Lyapunov { epsilon, jz, phi, branch, time } => {
            let start = surface_point(&params, epsilon, jz, phi, branch.into())?;
            let controls = LyapunovControls { total_time: time, ..Default::default() };
            let res = lyapunov_exponent(&params, &start, &controls)?;
            let path = ctx.out_dir.join("lyapunov-history.csv");
            write_csv(
                &path,
                &["t", "lambda"],
                res.history.iter().map(|(t, l)| vec![fmt_f64(*t), fmt_f64(*l)]),
            )?;
            finish(
                &ctx,
                "lyapunov",
                &[path],
                json!({
                    "lambda": res.lambda,
                    "converged": res.converged,
                    "point": { "q": start.q, "jz": jz, "phi": phi },
                }),
            )
        }
        Cmd::LyapunovMap { epsilon, branch, grid_phi, grid_jz, time } => {
            let controls = LyapunovControls { total_time: time, ..Default::default() };
            let map = lyapunov_map(
                &params,
                epsilon,
                branch.into(),
                PhaseGrid::uniform(grid_phi, grid_jz),
                &controls,
            );
            let csv = ctx.out_dir.join("lyapunov-map.csv");
            write_csv(&csv, &["phi", "jz", "value", "flag"], scalar_map_rows(&map))?;
            let ppm = ctx.out_dir.join("lyapunov-map.ppm");
            write_heatmap_ppm(&ppm, &map, None)?;
            let reachable = map.flags.iter().filter(|f| **f != CellFlag::Unreachable).count();
            finish(
                &ctx,
                "lyapunov-map",
                &[csv, ppm],
                json!({ "n_cells": map.values.len(), "n_reachable": reachable }),
            )
        }
        Cmd::Husimi { epsilon, jz, phi, branch, k, parity } => {
            let pair = cached_pair(&ctx, false)?;
            let parity: Parity = parity.into();
            if k >= pair.sector(parity).dimension() {
                return Err(CliError::Usage(format!("state index {k} out of range")));
            }
            let point = surface_point(&params, epsilon, jz, phi, branch.into())?;
            let over = eigenstate_amplitudes_at(&pair, &point)?;
            finish(
                &ctx,
                "husimi",
                &[],
                json!({
                    "k": k,
                    "parity": parity.label(),
                    "Q": husimi(&over, k, parity),
                    "energy": pair.sector(parity).eigenvalues[k],
                    "norm_all": over.norm_all,
                }),
            )
        }
        Cmd::HusimiMap { epsilon, branch, k, parity, grid_phi, grid_jz } => {
            let pair = cached_pair(&ctx, false)?;
            let parity: Parity = parity.into();
            if k >= pair.sector(parity).dimension() {
                return Err(CliError::Usage(format!("state index {k} out of range")));
            }
            let map = husimi_map(
                &pair,
                k,
                parity,
                epsilon,
                branch.into(),
                PhaseGrid::uniform(grid_phi, grid_jz),
            );
            let csv = ctx.out_dir.join("husimi-map.csv");
            let rows: Vec<Vec<String>> = map
                .cells()
                .map(|(iv, iu, jz, phi)| {
                    vec![fmt_f64(phi), fmt_f64(jz), fmt_f64(map.values[[iv, iu]])]
                })
                .collect();
            write_csv(&csv, &["phi", "jz", "Q"], rows)?;
            let ppm = ctx.out_dir.join("husimi-map.ppm");
            write_heatmap_ppm(&ppm, &map, None)?;
            finish(
                &ctx,
                "husimi-map",
                &[csv, ppm],
                json!({
                    "k": k,
                    "parity": parity.label(),
                    "energy": pair.sector(parity).eigenvalues[k],
                    "energy_per_particle": pair.sector(parity).energy_per_particle(k),
                }),
            )
        }
        Cmd::Amplitudes { epsilon, jz, phi, branch } => {
            let pair = cached_pair(&ctx, true)?;
            let point = surface_point(&params, epsilon, jz, phi, branch.into())?;
            let over = eigenstate_amplitudes_at(&pair, &point)?;
            let path = ctx.out_dir.join("amplitudes.csv");
            let rows: Vec<Vec<String>> = (0..over.len())
                .map(|i| {
                    vec![
                        i.to_string(),
                        over.parities[i].label().to_string(),
                        fmt_f64(over.energies[i]),
                        fmt_f64(over.amplitudes[i].norm_sqr()),
                    ]
                })
                .collect();
            write_csv(&path, &["k", "parity", "E_k", "weight"], rows)?;
            finish(
                &ctx,
                "amplitudes",
                &[path],
                json!({ "norm_all": over.norm_all, "norm_converged": over.norm_converged }),
            )
        }
        Cmd::Pr { point, epsilon, jz, phi, branch, restrict_converged } => {
            let pair = cached_pair(&ctx, restrict_converged)?;
            let prp = match point.as_deref() {
                Some("ground") => {
                    let (pt, _) = ground_state_config(&params)?;
                    pr_at_point(&pair, &pt, QBranch::Minus, restrict_converged)?
                }
                Some(other) => {
                    return Err(CliError::Usage(format!("unknown --point '{other}'")))
                }
                None => {
                    let eps = epsilon
                        .ok_or_else(|| CliError::Usage("set --epsilon or --point".into()))?;
                    let jz = jz.ok_or_else(|| CliError::Usage("set --jz or --point".into()))?;
                    pr_at_surface_point(&pair, eps, jz, phi, branch.into(), restrict_converged)?
                }
            };
            finish(
                &ctx,
                "pr",
                &[],
                json!({
                    "PR": prp.pr,
                    "pR": prp.p_r,
                    "PRbin": prp.pr_bin,
                    "norm_all": prp.norm_all,
                    "norm_converged": prp.norm_converged,
                    "point": { "q": prp.point.q, "jz": prp.point.jz, "phi": prp.point.phi },
                }),
            )
        }
        Cmd::PrMap { epsilon, branch, grid_phi, grid_jz, restrict_converged } => {
            let pair = cached_pair(&ctx, restrict_converged)?;
            let branch: QBranch = branch.into();
            let map = pr_map(
                &pair,
                epsilon,
                branch,
                PhaseGrid::uniform(grid_phi, grid_jz),
                restrict_converged,
            )?;
            let csv = ctx.out_dir.join("pr-map.csv");
            let mut rows = Vec::new();
            for iv in 0..map.grid.jz.len() {
                for iu in 0..map.grid.phi.len() {
                    rows.push(vec![
                        fmt_f64(map.grid.phi[iu]),
                        fmt_f64(map.grid.jz[iv]),
                        branch.label().to_string(),
                        fmt_f64(map.q[[iv, iu]]),
                        fmt_f64(map.pr[[iv, iu]]),
                        fmt_f64(map.p_r[[iv, iu]]),
                        map.bin[[iv, iu]].to_string(),
                        map.flags[[iv, iu]].label().to_string(),
                    ]);
                }
            }
            write_csv(
                &csv,
                &["phi", "jz", "branch", "q", "PR", "pR", "PRbin", "norm_flag"],
                rows,
            )?;
            let mut scalar = ScalarMap::new(map.grid.clone());
            scalar.values.assign(&map.p_r);
            scalar.flags.assign(&map.flags);
            let ppm = ctx.out_dir.join("pr-map.ppm");
            write_heatmap_ppm(&ppm, &scalar, None)?;
            finish(&ctx, "pr-map", &[csv, ppm], json!({ "n_cells": map.pr.len() }))
        }
        Cmd::PrLine { epsilon, phi, samples, time, restrict_converged } => {
            let pair = cached_pair(&ctx, restrict_converged)?;
            let jz_samples: Vec<f64> = (0..samples)
                .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / samples as f64)
                .collect();
            let controls = LyapunovControls { total_time: time, ..Default::default() };
            let line = pr_line_compare(
                &pair,
                epsilon,
                &[QBranch::Plus, QBranch::Minus],
                phi,
                &jz_samples,
                &controls,
                restrict_converged,
            )?;
            let path = ctx.out_dir.join("pr-line.csv");
            let rows: Vec<Vec<String>> = line
                .iter()
                .map(|p| {
                    vec![
                        fmt_f64(p.jz),
                        p.branch.label().to_string(),
                        fmt_f64(p.lambda),
                        p.lambda_bin.to_string(),
                        fmt_f64(p.pr),
                        p.pr_bin.to_string(),
                    ]
                })
                .collect();
            write_csv(&path, &["jz", "q_branch", "lambda", "lambda_bin", "PR", "PR_bin"], rows)?;
            let computed: Vec<_> =
                line.iter().filter(|p| p.flag == CellFlag::Ok && p.lambda.is_finite()).collect();
            let agree = computed.iter().filter(|p| p.lambda_bin == p.pr_bin).count();
            finish(
                &ctx,
                "pr-line",
                &[path],
                json!({
                    "n_points": line.len(),
                    "n_computed": computed.len(),
                    "binary_agreement": if computed.is_empty() {
                        f64::NAN
                    } else {
                        agree as f64 / computed.len() as f64
                    },
                }),
            )
        }
        Cmd::PrScaling {
            epsilon,
            jz,
            phi,
            branch,
            j_list,
            n_max_policy,
            n_min,
            restrict_converged,
        } => {
            if j_list.is_empty() {
                return Err(CliError::Usage("provide --j-list".into()));
            }
            let policy = parse_policy(&n_max_policy)?;
            let options = ScalingOptions { n_min, ..Default::default() };
            let fit = pr_scaling(
                &params,
                epsilon,
                jz,
                phi,
                branch.into(),
                &j_list,
                policy,
                &options,
                restrict_converged,
                |p, n_max| {
                    let sub = ctx
                        .with_params(*p, n_max)
                        .map_err(|e| ChaosError::Provider(e.to_string()))?;
                    cached_pair(&sub, restrict_converged)
                        .map_err(|e| ChaosError::Provider(e.to_string()))
                },
            )?;
            let path = ctx.out_dir.join("pr-scaling.csv");
            let rows: Vec<Vec<String>> = fit
                .samples
                .iter()
                .map(|s| {
                    vec![
                        fmt_f64(s.j),
                        fmt_f64(s.n_atoms),
                        s.n_max.to_string(),
                        fmt_f64(s.pr),
                        fmt_f64(s.ratio_sqrt),
                        fmt_f64(s.ratio_lin),
                    ]
                })
                .collect();
            write_csv(&path, &["j", "N", "n_max", "PR", "PR_over_sqrtN", "PR_over_N"], rows)?;
            finish(
                &ctx,
                "pr-scaling",
                &[path],
                json!({
                    "class": fit.class.label(),
                    "dispersion_sqrt": fit.dispersion_sqrt,
                    "dispersion_lin": fit.dispersion_lin,
                }),
            )
        }
        Cmd::Peres { parity } => {
            let mut rows = Vec::new();
            for parity in sectors_of(parity) {
                let spec = cached_sector(&ctx, parity)?;
                let jz = peres_jz(&spec)?;
                for k in 0..spec.dimension() {
                    rows.push(vec![
                        k.to_string(),
                        parity.label().to_string(),
                        fmt_f64(spec.eigenvalues[k]),
                        fmt_f64(jz[k]),
                    ]);
                }
            }
            let n = rows.len();
            let path = ctx.out_dir.join("peres.csv");
            write_csv(&path, &["k", "parity", "E_k", "jz_expect"], rows)?;
            finish(&ctx, "peres", &[path], json!({ "n_states": n }))
        }
        Cmd::Lambda {} => {
            let h = build_fock_hamiltonian(&params, ctx.n_max)?;
            let spec = diagonalize_into(&params, h)?;
            let moments = lambda_moments(&spec)?;
            let path = ctx.out_dir.join("lambda.csv");
            let rows: Vec<Vec<String>> = moments
                .iter()
                .enumerate()
                .map(|(k, (mean, var))| {
                    vec![
                        k.to_string(),
                        fmt_f64(spec.eigenvalues[k]),
                        fmt_f64(*mean),
                        fmt_f64(*var),
                    ]
                })
                .collect();
            write_csv(&path, &["k", "E_k", "lambda_mean", "lambda_var"], rows)?;
            let max_var = moments.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
            finish(&ctx, "lambda", &[path], json!({ "max_variance": max_var }))
        }
        Cmd::Classify { epsilon } => {
            let region = classify_energy_region(&params, epsilon)?;
            finish(&ctx, "classify", &[], json!({ "epsilon": epsilon, "region": region.label() }))
        }
        Cmd::Table1 { j_list, n_max_policy, epsilon } => {
            if j_list.is_empty() {
                return Err(CliError::Usage("provide --j-list".into()));
            }
            let policy = parse_policy(&n_max_policy)?;
            let mut rows = Vec::new();
            for &j in &j_list {
                let p = ModelParams::new(params.omega, params.omega0, params.gamma, params.delta, j)?;
                let n_max = policy.n_max_for(j);
                let sub = ctx.with_params(p, n_max)?;
                let pair = cached_pair(&sub, true)?;
                let n_st = pair.total_states();
                let n_conv = pair.plus.n_converged().unwrap_or(0)
                    + pair.minus.n_converged().unwrap_or(0);
                let mut cols =
                    vec![fmt_f64(j), n_max.to_string(), n_st.to_string(), n_conv.to_string()];
                for jz in [-0.75, -0.55] {
                    let point = surface_point(&p, epsilon, jz, 0.0, QBranch::Plus)?;
                    let over = eigenstate_amplitudes_at(&pair, &point)?;
                    let pr = participation_ratio(&over, true)
                        .or_else(|_| participation_ratio(&over, false))?;
                    cols.push(fmt_f64(over.norm_all));
                    cols.push(fmt_f64(over.norm_converged.unwrap_or(f64::NAN)));
                    cols.push(fmt_f64(pr));
                }
                rows.push(cols);
            }
            let path = ctx.out_dir.join("table1.csv");
            write_csv(
                &path,
                &[
                    "j",
                    "n_max",
                    "n_states",
                    "n_converged",
                    "norm_reg",
                    "norm_conv_reg",
                    "PR_reg",
                    "norm_cha",
                    "norm_conv_cha",
                    "PR_cha",
                ],
                rows,
            )?;
            finish(&ctx, "table1", &[path], json!({ "j_list": j_list }))
        }
    }
}

fn parse_policy(text: &str) -> Result<NmaxPolicy, CliError> {
    match text {
        "survey" => Ok(NmaxPolicy::Survey),
        other => other
            .parse::<usize>()
            .map(NmaxPolicy::Fixed)
            .map_err(|_| CliError::Usage(format!("n_max policy '{other}' (survey or a number)"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("computation failed: {msg}");
            ExitCode::from(3)
        }
    }
}
