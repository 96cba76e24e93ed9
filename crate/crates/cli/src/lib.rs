//! Command-line front end for the `wgds` solver.

pub mod config;
pub mod emit;
pub mod reference;

use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use wgds::assembly::{assemble_a_h, bilinear};
use wgds::mesh::{build_rect_mesh, check_colorable, load_wgmesh, DarcyStokesBox, PolyMesh, Region};
use wgds::mms::{convergence_study, run_case_on, ConvergenceTable, StudyConfig};
use wgds::solver::inf_sup;
use wgds::weakops::all_cell_operators;
use wgds::wgspace::{WgFunction, WgParams, WgSpace};

use config::{Cli, Command, RunConfig, THREADS_ENV};

/// Process exit statuses.
pub mod status {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const CHECK: i32 = 4;
}

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(String),
    Check(Vec<String>),
    Io(anyhow::Error),
}

impl Failure {
    pub fn status(&self) -> i32 {
        match self {
            Failure::Config(_) => status::CONFIG,
            Failure::Solver(_) => status::SOLVER,
            Failure::Check(_) => status::CHECK,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Solver(e) => write!(f, "solver failure: {e}"),
            Failure::Check(v) => write!(f, "check failed:\n  {}", v.join("\n  ")),
            Failure::Io(e) => write!(f, "I/O error: {e:#}"),
        }
    }
}

/// Results of one command, ready to emit.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Results {
    Studies(Vec<StudyResult>),
    InfSup(Vec<InfSupRow>),
    Colorability(Vec<ColorRow>),
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub params: WgParams,
    pub table: ConvergenceTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfSupRow {
    pub n: Option<usize>,
    pub h: f64,
    pub constant: f64,
    pub kernel_dim: usize,
    /// Smallest `a_h(v,v) / |v|²` over random coefficient vectors.
    pub coercivity_probe: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ColorRow {
    pub n: Option<usize>,
    pub stokes_cells: usize,
    pub colorable: bool,
    pub sweeps: usize,
    pub black: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

/// The only nondeterministic part of an artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Timestamp {
    pub unix_seconds: u64,
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub results: Results,
    pub timestamp: Timestamp,
}

pub fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Config(anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.into()))?;
    }
    Ok(())
}

/// Merge the config file and flags and validate the result.
pub fn resolve(cli: Cli) -> Result<(Command, RunConfig), Failure> {
    let (command, flags) = cli.command.split();
    let base = match &flags.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    let cfg = flags.apply(command, base).map_err(Failure::Config)?;
    let problems = cfg.problems(command);
    if !problems.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!(
            "{} violated condition(s):\n  {}",
            problems.len(),
            problems.join("\n  ")
        )));
    }
    Ok((command, cfg))
}

fn study_config(cfg: &RunConfig, params: WgParams) -> StudyConfig {
    StudyConfig {
        params,
        quad: cfg.quad,
        solver: cfg.solver.clone(),
        boundary: cfg.boundary,
        mode: cfg.error_mode,
        projection_errors: cfg.projection_errors,
    }
}

fn load_mesh(cfg: &RunConfig) -> Result<Option<PolyMesh>, Failure> {
    cfg.mesh
        .as_ref()
        .map(|p| {
            load_wgmesh(p, None)
                .with_context(|| format!("loading mesh {}", p.display()))
                .map_err(Failure::Config)
        })
        .transpose()
}

fn meshes(cfg: &RunConfig) -> Result<Vec<(Option<usize>, PolyMesh)>, Failure> {
    if let Some(m) = load_mesh(cfg)? {
        return Ok(vec![(None, m)]);
    }
    cfg.n_list
        .iter()
        .map(|&n| {
            build_rect_mesh(n, &DarcyStokesBox::default())
                .map(|m| (Some(n), m))
                .map_err(|e| Failure::Config(e.into()))
        })
        .collect()
}

fn run_studies(command: Command, cfg: &RunConfig, timings: &mut Vec<Timing>) -> Result<Results, Failure> {
    let mut out = Vec::new();
    for params in cfg.param_sets() {
        let sc = study_config(cfg, params.clone());
        let start = Instant::now();
        let table = match command {
            Command::Solve => {
                let mesh = match load_mesh(cfg)? {
                    Some(m) => m,
                    None => build_rect_mesh(cfg.n, &DarcyStokesBox::default()).map_err(|e| Failure::Config(e.into()))?,
                };
                let (rows, failures) = match run_case_on(cfg.n, mesh, &sc) {
                    Ok(r) => (vec![r], vec![]),
                    Err(e) => (vec![], vec![(cfg.n, e.to_string())]),
                };
                ConvergenceTable {
                    rho: params.rho_s,
                    rows,
                    failures,
                    pairwise: vec![],
                    least_squares: None,
                    fit_from: cfg.n,
                }
            }
            _ => convergence_study(&cfg.n_list, &sc, cfg.fit_from).map_err(|e| Failure::Config(e.into()))?,
        };
        for r in &table.rows {
            timings.push(Timing {
                label: format!("rho={} n={} assemble", params.rho_s, r.n),
                seconds: r.assemble_time.as_secs_f64(),
            });
            timings.push(Timing {
                label: format!("rho={} n={} solve", params.rho_s, r.n),
                seconds: r.solve_time.as_secs_f64(),
            });
        }
        timings.push(Timing {
            label: format!("rho={} total", params.rho_s),
            seconds: start.elapsed().as_secs_f64(),
        });
        out.push(StudyResult { params, table });
    }
    Ok(Results::Studies(out))
}

fn run_infsup(cfg: &RunConfig) -> Result<Results, Failure> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for params in cfg.param_sets() {
        for (n, mesh) in meshes(cfg)? {
            let h = mesh.h();
            let space = WgSpace::new(mesh, params.clone(), cfg.quad).map_err(|e| Failure::Config(e.into()))?;
            let ops = all_cell_operators(&space);
            let r = inf_sup(&space, &ops).map_err(|e| Failure::Solver(e.to_string()))?;
            let a = assemble_a_h(&space, &ops);
            let mut coercivity_probe = f64::INFINITY;
            for _ in 0..20 {
                let mut v = WgFunction::zeros(&space.dofs);
                v.free.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                let c = v.combined();
                let norm2: f64 = c.iter().map(|x| x * x).sum();
                coercivity_probe = coercivity_probe.min(bilinear(&a, &c, &c) / norm2);
            }
            rows.push(InfSupRow {
                n,
                h,
                constant: r.constant,
                kernel_dim: r.kernel_dim,
                coercivity_probe,
            });
        }
    }
    Ok(Results::InfSup(rows))
}

fn run_colorability(cfg: &RunConfig) -> Result<Results, Failure> {
    let rows = meshes(cfg)?
        .into_iter()
        .map(|(n, mesh)| {
            let c = check_colorable(&mesh);
            ColorRow {
                n,
                stokes_cells: mesh.cells_in(Region::Stokes).count(),
                colorable: c.colorable,
                sweeps: c.sweeps,
                black: c.black.len(),
            }
        })
        .collect();
    Ok(Results::Colorability(rows))
}

/// Problems found by `--check`.
pub fn check(results: &Results) -> Vec<String> {
    let mut bad = Vec::new();
    match results {
        Results::Studies(studies) => {
            for s in studies {
                bad.extend(reference::compare(&s.params, &s.table));
            }
        }
        Results::InfSup(rows) => {
            for w in rows.windows(2) {
                if !(w[1].constant > 0.0 && w[0].constant / w[1].constant < reference::INF_SUP_MAX_DROP) {
                    bad.push(format!(
                        "inf-sup constant dropped from {} to {} between n={:?} and n={:?}",
                        w[0].constant, w[1].constant, w[0].n, w[1].n
                    ));
                }
            }
            for r in rows {
                if !(r.constant > 0.0) {
                    bad.push(format!("inf-sup constant {} at n={:?}", r.constant, r.n));
                }
                if r.kernel_dim != 1 {
                    bad.push(format!("pressure kernel dimension {} at n={:?}", r.kernel_dim, r.n));
                }
            }
        }
        Results::Colorability(rows) => {
            for r in rows {
                if !r.colorable || r.sweeps > r.stokes_cells {
                    bad.push(format!(
                        "mesh n={:?}: colorable={} sweeps={} stokes cells={}",
                        r.n, r.colorable, r.sweeps, r.stokes_cells
                    ));
                }
            }
        }
    }
    bad
}

fn solver_failures(results: &Results) -> Vec<String> {
    match results {
        Results::Studies(s) => s
            .iter()
            .flat_map(|s| {
                s.table
                    .failures
                    .iter()
                    .map(move |(n, e)| format!("rho={} n={n}: {e}", s.params.rho_s))
            })
            .collect(),
        _ => Vec::new(),
    }
}

pub fn execute(command: Command, cfg: RunConfig) -> Result<(), Failure> {
    let mut timings = Vec::new();
    let results = match command {
        Command::Solve | Command::Convergence => run_studies(command, &cfg, &mut timings)?,
        Command::InfsupProbe => run_infsup(&cfg)?,
        Command::ColorabilityCheck => run_colorability(&cfg)?,
    };
    let artifact = Artifact {
        tool: "wgds",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        config: cfg.clone(),
        results,
        timestamp: Timestamp {
            unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            timings,
        },
    };
    let text = emit::render(&artifact, cfg.format);
    match &cfg.out {
        Some(path) => std::fs::write(path, &text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Io)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .context("writing to stdout")
                .map_err(Failure::Io)?;
        }
    }
    let failed = solver_failures(&artifact.results);
    if !failed.is_empty() {
        return Err(Failure::Solver(failed.join("; ")));
    }
    if cfg.check {
        let bad = check(&artifact.results);
        if !bad.is_empty() {
            return Err(Failure::Check(bad));
        }
    }
    Ok(())
}
