//! Experiment orchestration: single runs, sweeps, the basis cache and CSV output.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::assembly::{assemble, q_rho_project, AssemblyError, FemOperators};
use crate::coeff::{load_field_for, make_heterogeneous, make_identity, make_oscillatory, CoeffError, CoeffKind, CoefficientField};
use crate::grid::{build_hierarchy, GridError, MeshHierarchy, StructuredMesh};
use crate::linalg::SolverRule;
use crate::lod::{
    build_basis, fingerprint, load_basis_checked, ms_coupling, ms_operators, save_basis, BasisOptions, LodError, MsOperators,
    MultiscaleBasis, WindowMode,
};
use crate::ocp::{error_report, ErrorTable, KktReport, OcpError, OcpProblem, OcpSolution, PdasOptions, StateSpace};

pub use config::{CoeffSpec, ConfigError, ExperimentConfig, SweepParam, SweepSpec, TargetSpec};
pub use output::{format_grid, log_log_slope, write_result_csv, SweepRow, SweepTable, SWEEP_HEADER};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Lod(#[from] LodError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cached basis {path} is unreadable ({source}); rerun with --rebuild to replace it")]
    StaleCache {
        path: PathBuf,
        #[source]
        source: LodError,
    },
    #[error("active set iteration did not converge after {iterations} iterations (vi violation {vi:e})")]
    NotConverged { iterations: usize, vi: f64 },
}

impl ExperimentError {
    /// Process exit code: 2 config, 3 non-convergence, 4 I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Grid(_) => 2,
            ExperimentError::Assembly(AssemblyError::IncompatibleMeshes { .. }) => 2,
            ExperimentError::Coeff(CoeffError::InvalidParameter(_)) => 2,
            ExperimentError::Ocp(OcpError::InfeasibleBounds { .. } | OcpError::InvalidGamma(_)) => 2,
            ExperimentError::NotConverged { .. } => 3,
            ExperimentError::Io { .. } | ExperimentError::StaleCache { .. } => 4,
            ExperimentError::Coeff(
                CoeffError::Io(_) | CoeffError::BadMagic | CoeffError::Truncated { .. } | CoeffError::UnknownKind(_),
            ) => 4,
            ExperimentError::Lod(
                LodError::Io(_)
                | LodError::BadMagic
                | LodError::Truncated { .. }
                | LodError::Corrupt(_)
                | LodError::FingerprintMismatch { .. },
            ) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Builds the coefficient field described by the config on its fine mesh.
pub fn make_field(cfg: &ExperimentConfig) -> Result<CoefficientField, ExperimentError> {
    let c = &cfg.coeff;
    Ok(match c.kind {
        CoeffKind::Identity => make_identity(cfg.nh),
        CoeffKind::Heterogeneous => make_heterogeneous(cfg.nh, c.seed, c.blocks, c.lo, c.hi)?,
        CoeffKind::Oscillatory => make_oscillatory(cfg.nh, c.eps)?,
        CoeffKind::File => {
            let path = c
                .path
                .as_ref()
                .ok_or_else(|| ConfigError::new("coeff.path", "required for kind=file"))?;
            load_field_for(path, &StructuredMesh::new(cfg.nh)?)?
        }
    })
}

/// Desired state as a fine load vector `(y_d, phi_i)` plus `|y_d|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub load: Vec<f64>,
    pub norm_sq: f64,
}

/// Reads nodal values of `y_d`: `(nh+1)^2` numbers separated by commas or
/// whitespace, bottom row first.
pub fn read_nodal_values(path: &Path) -> Result<Vec<f64>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| ConfigError::new("ocp.y_d", format!("{}: cannot parse `{t}`", path.display())).into())
        })
        .collect()
}

pub fn make_target(cfg: &ExperimentConfig, ops: &FemOperators) -> Result<Target, ExperimentError> {
    match &cfg.y_d {
        TargetSpec::Constant(c) => Ok(Target {
            load: ops.load_constant(*c),
            norm_sq: c * c,
        }),
        TargetSpec::File(path) => {
            let values = read_nodal_values(path)?;
            let expected = ops.mesh.node_count();
            if values.len() != expected {
                return Err(ConfigError::new(
                    "ocp.y_d",
                    format!("{} has {} values, mesh needs {expected}", path.display(), values.len()),
                )
                .into());
            }
            Ok(Target {
                load: ops.load_nodal(&values)?,
                norm_sq: ops.l2_norm_sq_nodal(&values)?,
            })
        }
    }
}

/// Bounds `Q_rho phi_1`, `Q_rho phi_2` on the control mesh.
pub fn control_bounds(cfg: &ExperimentConfig, control: &StructuredMesh) -> (Vec<f64>, Vec<f64>) {
    (q_rho_project(&cfg.phi1, control).values, q_rho_project(&cfg.phi2, control).values)
}

fn pdas_options(cfg: &ExperimentConfig) -> PdasOptions {
    PdasOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..PdasOptions::default()
    }
}

/// Fine-space solve on a control mesh with `n_control` subdivisions.
pub fn solve_fine(cfg: &ExperimentConfig, field: &CoefficientField, n_control: usize) -> Result<FineRun, ExperimentError> {
    let t = Instant::now();
    let mesh = StructuredMesh::new(cfg.nh)?;
    let control = StructuredMesh::new(n_control)?;
    let ops = assemble(&mesh, field, &control)?;
    let target = make_target(cfg, &ops)?;
    let (lo, hi) = control_bounds(cfg, &control);
    let space = StateSpace::fine(&ops, SolverRule::default())?;
    let problem = OcpProblem::new(space, cfg.gamma, target.load, target.norm_sq, lo, hi, ops.cell_volumes.clone())?;
    let setup_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let solution = problem.solve_pdas(&pdas_options(cfg))?;
    log::info!(
        "fine solve nh={} nrho={n_control}: J~ = {:e} after {} iterations",
        cfg.nh,
        solution.j_tilde,
        solution.iterations
    );
    Ok(FineRun {
        ops,
        problem,
        solution,
        setup_seconds,
        solve_seconds: t.elapsed().as_secs_f64(),
    })
}

pub struct FineRun {
    pub ops: FemOperators,
    pub problem: OcpProblem,
    pub solution: OcpSolution,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    Miss,
    Rebuilt,
}

impl CacheStatus {
    pub fn name(self) -> &'static str {
        match self {
            CacheStatus::Disabled => "disabled",
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
            CacheStatus::Rebuilt => "rebuilt",
        }
    }
}

/// Cache file for a basis fingerprint.
pub fn cache_path(dir: &Path, fp: u64) -> PathBuf {
    dir.join(format!("basis_{fp:016x}.bin"))
}

/// A basis with its provenance.
pub struct BasisRun {
    pub basis: MultiscaleBasis,
    pub status: CacheStatus,
    pub path: Option<PathBuf>,
    pub seconds: f64,
    pub pcg_iterations: usize,
}

/// Loads the basis for `(field, hier, k)` from the cache directory, or builds
/// it and stores it there.
pub fn basis_cache(
    cache_dir: Option<&Path>,
    rebuild: bool,
    field: &CoefficientField,
    hier: &MeshHierarchy,
    ops: &FemOperators,
    k: usize,
    j: Option<u32>,
) -> Result<BasisRun, ExperimentError> {
    let fp = fingerprint(field, hier.coarse.n(), hier.fine.n(), k);
    let t = Instant::now();
    let path = cache_dir.map(|d| cache_path(d, fp));
    if let Some(p) = &path {
        if p.exists() && !rebuild {
            let basis = load_basis_checked(p, fp).map_err(|source| ExperimentError::StaleCache {
                path: p.clone(),
                source,
            })?;
            log::info!("basis cache hit: {}", p.display());
            return Ok(BasisRun {
                basis,
                status: CacheStatus::Hit,
                path,
                seconds: t.elapsed().as_secs_f64(),
                pcg_iterations: 0,
            });
        }
    }
    let status = match &path {
        None => CacheStatus::Disabled,
        Some(p) if p.exists() => CacheStatus::Rebuilt,
        Some(_) => CacheStatus::Miss,
    };
    if let Some(p) = &path {
        log::info!("basis cache {}: building {}", status.name(), p.display());
    }
    let opts = BasisOptions {
        k,
        j,
        fingerprint: fp,
        mode: WindowMode::Localized,
    };
    let (basis, stats) = build_basis(hier, &ops.stiffness, opts)?;
    log::info!(
        "built {} correctors (k={k}) in {:.2}s, {} PCG iterations",
        basis.len(),
        stats.setup_seconds + stats.corrector_seconds,
        stats.total_pcg_iterations
    );
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        }
        save_basis(&basis, p).map_err(|e| match e {
            LodError::Io(source) => ExperimentError::io(p, source),
            other => other.into(),
        })?;
    }
    Ok(BasisRun {
        basis,
        status,
        path,
        seconds: t.elapsed().as_secs_f64(),
        pcg_iterations: stats.total_pcg_iterations,
    })
}

/// Multiscale solve with fine representations of state and adjoint.
pub struct MsRun {
    pub problem: OcpProblem,
    pub solution: OcpSolution,
    pub y_fine: Vec<f64>,
    pub p_fine: Vec<f64>,
    pub k: usize,
    pub cache: CacheStatus,
    pub basis_seconds: f64,
    pub galerkin_seconds: f64,
    pub solve_seconds: f64,
}

/// Basis and Galerkin matrices for one coarse mesh, reusable across control meshes.
pub struct MsSpace {
    pub hierarchy: MeshHierarchy,
    pub basis: MultiscaleBasis,
    pub operators: MsOperators,
    pub k: usize,
    pub cache: CacheStatus,
    pub basis_seconds: f64,
    pub galerkin_seconds: f64,
}

pub fn build_ms_space(
    cfg: &ExperimentConfig,
    field: &CoefficientField,
    n_coarse: usize,
    n_control: usize,
) -> Result<MsSpace, ExperimentError> {
    let hier = build_hierarchy(n_coarse, cfg.nh, n_control)?;
    let ops = assemble(&hier.fine, field, &hier.control)?;
    let (k, j) = match cfg.k {
        Some(k) => (k, None),
        None => (crate::lod::k_from_j(n_coarse, cfg.j), Some(cfg.j.round() as u32)),
    };
    let run = basis_cache(cfg.basis_cache.as_deref(), cfg.rebuild_basis, field, &hier, &ops, k, j)?;
    let t = Instant::now();
    let operators = ms_operators(&run.basis, &ops)?;
    Ok(MsSpace {
        hierarchy: hier,
        basis: run.basis,
        operators,
        k,
        cache: run.status,
        basis_seconds: run.seconds,
        galerkin_seconds: t.elapsed().as_secs_f64(),
    })
}

/// Solves the multiscale problem on `space` with a control mesh of `n_control` subdivisions.
pub fn solve_ms(
    cfg: &ExperimentConfig,
    field: &CoefficientField,
    space: &MsSpace,
    n_control: usize,
) -> Result<MsRun, ExperimentError> {
    let t = Instant::now();
    let control = StructuredMesh::new(n_control)?;
    let ops = assemble(&space.hierarchy.fine, field, &control)?;
    let mut operators = space.operators.clone();
    if n_control != space.hierarchy.control.n() {
        operators.coupling = ms_coupling(&space.basis, &ops)?;
    }
    let target = make_target(cfg, &ops)?;
    let load = space.basis.restrict(&target.load)?;
    let (lo, hi) = control_bounds(cfg, &control);
    let problem = OcpProblem::new(
        StateSpace::multiscale(&operators)?,
        cfg.gamma,
        load,
        target.norm_sq,
        lo,
        hi,
        ops.cell_volumes.clone(),
    )?;
    let galerkin_seconds = space.galerkin_seconds + t.elapsed().as_secs_f64();
    let t = Instant::now();
    let solution = problem.solve_pdas(&pdas_options(cfg))?;
    let y_fine = space.basis.lift(&solution.y)?;
    let p_fine = space.basis.lift(&solution.p)?;
    log::info!(
        "multiscale solve H=1/{} nrho={n_control} k={}: J~ = {:e}",
        space.hierarchy.coarse.n(),
        space.k,
        solution.j_tilde
    );
    Ok(MsRun {
        problem,
        solution,
        y_fine,
        p_fine,
        k: space.k,
        cache: space.cache,
        basis_seconds: space.basis_seconds,
        galerkin_seconds,
        solve_seconds: t.elapsed().as_secs_f64(),
    })
}

/// Outcome of [`run_single`].
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub nh: usize,
    pub n_coarse: Option<usize>,
    pub n_control: usize,
    pub k: Option<usize>,
    pub solution: OcpSolution,
    /// Fine nodal state including boundary zeros, bottom row first.
    pub state_nodal: Vec<f64>,
    pub j_tilde: f64,
    pub j: f64,
    pub kkt: KktReport,
    pub errors: Option<ErrorTable>,
    pub fine_j_tilde: Option<f64>,
    pub cache: CacheStatus,
    pub timings: Vec<(&'static str, f64)>,
}

impl RunRecord {
    /// Deterministic `quantity,value` rows; timings are kept out.
    pub fn quantities(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("nh".into(), self.nh.to_string()),
            ("nH".into(), self.n_coarse.map_or("fine".into(), |n| n.to_string())),
            ("nrho".into(), self.n_control.to_string()),
            ("k".into(), self.k.map_or(String::new(), |k| k.to_string())),
            ("jtilde".into(), format!("{:e}", self.j_tilde)),
            ("j".into(), format!("{:e}", self.j)),
            ("iterations".into(), self.solution.iterations.to_string()),
            ("converged".into(), self.solution.converged.to_string()),
            ("vi_violation".into(), format!("{:e}", self.kkt.vi_violation)),
            ("state_residual".into(), format!("{:e}", self.kkt.state_residual)),
            ("adjoint_residual".into(), format!("{:e}", self.kkt.adjoint_residual)),
            ("kkt_max_violation".into(), format!("{:e}", self.kkt.max_violation())),
            ("active_lo".into(), self.solution.active_lo.len().to_string()),
            ("active_hi".into(), self.solution.active_hi.len().to_string()),
        ];
        if let Some(f) = self.fine_j_tilde {
            rows.push(("fine_jtilde".into(), format!("{f:e}")));
        }
        if let Some(e) = &self.errors {
            rows.push(("rel_l2_u".into(), format!("{:e}", e.rel_l2_u)));
            rows.push(("rel_l2_y".into(), format!("{:e}", e.rel_l2_y)));
            rows.push(("rel_energy_y".into(), format!("{:e}", e.rel_energy_y)));
            rows.push(("rel_l2_p".into(), format!("{:e}", e.rel_l2_p)));
            rows.push(("rel_energy_p".into(), format!("{:e}", e.rel_energy_p)));
        }
        rows
    }
}

fn nodal_with_boundary(mesh: &StructuredMesh, v: &[f64]) -> Vec<f64> {
    (0..mesh.node_count())
        .map(|node| mesh.node_dof(node).map_or(0.0, |d| v[d]))
        .collect()
}

fn cell_mask(n: usize, cells: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for &c in cells {
        out[c] = 1.0;
    }
    out
}

/// Computes one configuration without writing anything.
pub fn compute_single(cfg: &ExperimentConfig) -> Result<RunRecord, ExperimentError> {
    cfg.validate()?;
    let t = Instant::now();
    let field = make_field(cfg)?;
    let field_seconds = t.elapsed().as_secs_f64();
    let n_control = cfg.control_resolution();
    let mesh = StructuredMesh::new(cfg.nh)?;
    let mut timings = vec![("field", field_seconds)];
    let reference = if cfg.compare_fine && cfg.n_coarse.is_some() {
        let fine = solve_fine(cfg, &field, cfg.nh)?;
        timings.push(("fine_setup", fine.setup_seconds));
        timings.push(("fine_solve", fine.solve_seconds));
        Some(fine)
    } else {
        None
    };
    let record = match cfg.n_coarse {
        None => {
            let run = solve_fine(cfg, &field, n_control)?;
            timings.push(("setup", run.setup_seconds));
            timings.push(("solve", run.solve_seconds));
            let kkt = run.problem.kkt_report(&run.solution);
            RunRecord {
                nh: cfg.nh,
                n_coarse: None,
                n_control,
                k: None,
                state_nodal: nodal_with_boundary(&mesh, &run.solution.y),
                j_tilde: run.solution.j_tilde,
                j: run.solution.j_tilde + 0.5 * run.problem.target_norm_sq,
                kkt,
                errors: None,
                fine_j_tilde: None,
                cache: CacheStatus::Disabled,
                timings,
                solution: run.solution,
            }
        }
        Some(nc) => {
            let space = build_ms_space(cfg, &field, nc, n_control)?;
            let run = solve_ms(cfg, &field, &space, n_control)?;
            timings.push(("basis", run.basis_seconds));
            timings.push(("galerkin", run.galerkin_seconds));
            timings.push(("solve", run.solve_seconds));
            let kkt = run.problem.kkt_report(&run.solution);
            let (errors, fine_j_tilde) = match &reference {
                Some(r) => (
                    Some(error_report(&r.ops, &r.solution, &run.y_fine, &run.p_fine, &run.solution.u, n_control)?),
                    Some(r.solution.j_tilde),
                ),
                None => (None, None),
            };
            RunRecord {
                nh: cfg.nh,
                n_coarse: Some(nc),
                n_control,
                k: Some(run.k),
                state_nodal: nodal_with_boundary(&mesh, &run.y_fine),
                j_tilde: run.solution.j_tilde,
                j: run.solution.j_tilde + 0.5 * run.problem.target_norm_sq,
                kkt,
                errors,
                fine_j_tilde,
                cache: run.cache,
                timings,
                solution: run.solution,
            }
        }
    };
    Ok(record)
}

/// Runs one configuration and writes `result.csv`, `timings.csv`, the
/// active-set grids, `control.csv` and `state.csv` into the output directory.
/// Outputs are written before a non-convergence error is returned.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunRecord, ExperimentError> {
    let record = compute_single(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    write_result_csv(&dir.join("result.csv"), &record.quantities())?;
    let timing_rows: Vec<(String, String)> = record
        .timings
        .iter()
        .map(|(k, v)| (k.to_string(), format!("{v:.3}")))
        .collect();
    write_result_csv(&dir.join("timings.csv"), &timing_rows)?;
    let n = record.n_control;
    let sol = &record.solution;
    write_text(&dir.join("active_lo.csv"), &format_grid(&cell_mask(n, &sol.active_lo), n, n, true))?;
    write_text(&dir.join("active_hi.csv"), &format_grid(&cell_mask(n, &sol.active_hi), n, n, true))?;
    write_text(&dir.join("control.csv"), &format_grid(&sol.u, n, n, false))?;
    write_text(&dir.join("state.csv"), &format_grid(&record.state_nodal, cfg.nh + 1, cfg.nh + 1, false))?;
    if !sol.converged {
        return Err(ExperimentError::NotConverged {
            iterations: sol.iterations,
            vi: sol.vi_violation,
        });
    }
    Ok(record)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Runs the sweep in the config against a fine reference with `rho = h`,
/// writing `sweep.csv` row by row. A failing point leaves the rows so far on disk.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepTable, ExperimentError> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| ConfigError::new("sweep.values", "no sweep configured"))?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let mut table = SweepTable::create(&path, sweep.param)?;
    let field = make_field(cfg)?;
    let reference = solve_fine(cfg, &field, cfg.nh)?;
    let mut shared: Option<MsSpace> = None;
    for &v in &sweep.values {
        let t = Instant::now();
        let (n_coarse, n_control) = match sweep.param {
            SweepParam::H => (v, cfg.n_control.unwrap_or(v)),
            SweepParam::Rho => (cfg.n_coarse.unwrap_or(v), v),
        };
        let reuse = matches!(&shared, Some(s) if s.hierarchy.coarse.n() == n_coarse);
        if !reuse {
            shared = Some(build_ms_space(cfg, &field, n_coarse, n_control)?);
        }
        let space = shared.as_ref().expect("space built above");
        let run = solve_ms(cfg, &field, space, n_control)?;
        if !run.solution.converged {
            return Err(ExperimentError::NotConverged {
                iterations: run.solution.iterations,
                vi: run.solution.vi_violation,
            });
        }
        let errors = error_report(&reference.ops, &reference.solution, &run.y_fine, &run.p_fine, &run.solution.u, n_control)?;
        let seconds = t.elapsed().as_secs_f64();
        table.push(SweepRow {
            param: 1.0 / v as f64,
            errors,
            j_tilde: run.solution.j_tilde,
            k: run.k,
            seconds,
        })?;
    }
    table.finish()?;
    table.reference_j_tilde = Some(reference.solution.j_tilde);
    Ok(table)
}
