use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mslod::coeff::{load_field, save_field};
use mslod::experiment::{
    basis_cache, make_field, run_single, run_sweep, ConfigError, ExperimentConfig, ExperimentError,
};
use mslod::grid::build_hierarchy;
use mslod::lod::{load_basis, save_basis};
use mslod::oracle::{check_against_oracles, random_instance};

#[derive(Parser)]
#[command(name = "mslod", version, about = "Multiscale LOD solver for box-constrained elliptic optimal control")]
struct Cli {
    /// Worker threads for basis construction (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect coefficient fields.
    #[command(subcommand)]
    Field(FieldCommand),
    /// Build or inspect multiscale bases.
    #[command(subcommand)]
    Basis(BasisCommand),
    /// Solve one configuration and write result.csv and grids.
    Solve(ConfigArgs),
    /// Run an H or rho sweep and write sweep.csv.
    Sweep(ConfigArgs),
    /// Check the active set solver against the oracles, and the KKT report of a configured run.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of random oracle instances.
        #[arg(long, default_value_t = 20)]
        instances: u64,
        /// First instance seed.
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
}

#[derive(Subcommand)]
enum FieldCommand {
    /// Write the configured coefficient field to a file.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a coefficient file.
    Show { path: PathBuf },
}

#[derive(Subcommand)]
enum BasisCommand {
    /// Build the basis for the configured field and coarse mesh.
    Build {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write here instead of the cache directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the header of a basis file.
    Info { path: PathBuf },
}

/// Config file plus flag overrides; each flag sets the config key of the same name.
#[derive(Args, Default)]
struct ConfigArgs {
    /// `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mesh.nh
    #[arg(long)]
    nh: Option<String>,
    /// mesh.nH (`fine` for a fine-space solve)
    #[arg(long = "nH")]
    n_coarse: Option<String>,
    /// mesh.nrho
    #[arg(long)]
    nrho: Option<String>,
    /// lod.k
    #[arg(long)]
    k: Option<String>,
    /// lod.j
    #[arg(long)]
    j: Option<String>,
    /// ocp.gamma
    #[arg(long)]
    gamma: Option<String>,
    /// ocp.y_d (a constant or a file of nodal values)
    #[arg(long = "y-d", allow_hyphen_values = true)]
    y_d: Option<String>,
    /// ocp.phi1 as c0,c1,c2
    #[arg(long, allow_hyphen_values = true)]
    phi1: Option<String>,
    /// ocp.phi2 as c0,c1,c2
    #[arg(long, allow_hyphen_values = true)]
    phi2: Option<String>,
    /// coeff.kind (identity, heterogeneous, oscillatory, file)
    #[arg(long)]
    coeff: Option<String>,
    /// coeff.seed
    #[arg(long)]
    seed: Option<String>,
    /// coeff.eps
    #[arg(long)]
    eps: Option<String>,
    /// coeff.blocks
    #[arg(long)]
    blocks: Option<String>,
    /// coeff.path
    #[arg(long = "coeff-path")]
    coeff_path: Option<String>,
    /// solver.tol
    #[arg(long)]
    tol: Option<String>,
    /// solver.max_iter
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// output.dir
    #[arg(long = "output-dir")]
    output_dir: Option<String>,
    /// basis.cache (directory)
    #[arg(long)]
    cache: Option<String>,
    /// basis.rebuild: replace cached bases
    #[arg(long)]
    rebuild: bool,
    /// run.compare_fine: also solve on the fine space and report errors
    #[arg(long = "compare-fine")]
    compare_fine: bool,
    /// sweep.param (H or rho)
    #[arg(long = "sweep-param")]
    sweep_param: Option<String>,
    /// sweep.values as a comma-separated list of subdivision counts
    #[arg(long = "sweep-values")]
    sweep_values: Option<String>,
    /// Any other key, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, &Option<String>); 20] = [
            ("mesh.nh", &self.nh),
            ("mesh.nH", &self.n_coarse),
            ("mesh.nrho", &self.nrho),
            ("lod.k", &self.k),
            ("lod.j", &self.j),
            ("ocp.gamma", &self.gamma),
            ("ocp.y_d", &self.y_d),
            ("ocp.phi1", &self.phi1),
            ("ocp.phi2", &self.phi2),
            ("coeff.kind", &self.coeff),
            ("coeff.seed", &self.seed),
            ("coeff.eps", &self.eps),
            ("coeff.blocks", &self.blocks),
            ("coeff.path", &self.coeff_path),
            ("solver.tol", &self.tol),
            ("solver.max_iter", &self.max_iter),
            ("output.dir", &self.output_dir),
            ("basis.cache", &self.cache),
            ("sweep.param", &self.sweep_param),
            ("sweep.values", &self.sweep_values),
        ];
        let mut out: Vec<(&'static str, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.rebuild {
            out.push(("basis.rebuild", "true".into()));
        }
        if self.compare_fine {
            out.push(("run.compare_fine", "true".into()));
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.config.is_none() && self.set.is_empty() && self.overrides().is_empty()
    }

    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.overrides() {
            cfg.set(key, &value)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::new("--set", format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, ExperimentError> {
    match command {
        Command::Field(FieldCommand::Gen { config, out }) => {
            let cfg = config.resolve()?;
            let field = make_field(&cfg)?;
            save_field(&field, &out).map_err(|e| io_or(e.into(), &out))?;
            println!("wrote {} field ({}x{}) to {}", field.kind().name(), field.resolution(), field.resolution(), out.display());
        }
        Command::Field(FieldCommand::Show { path }) => {
            let field = load_field(&path).map_err(|e| io_or(e.into(), &path))?;
            println!("kind        {}", field.kind().name());
            println!("resolution  {}", field.resolution());
            println!("alpha       {:e}", field.alpha());
            println!("beta        {:e}", field.beta());
            if let Some(s) = field.seed() {
                println!("seed        {s}");
            }
            if let Some(e) = field.epsilon() {
                println!("eps         {e}");
            }
        }
        Command::Basis(BasisCommand::Build { config, out }) => {
            let cfg = config.resolve()?;
            let (n_coarse, (k, j)) = match (cfg.n_coarse, cfg.corrector_steps()) {
                (Some(nc), Some(steps)) => (nc, steps),
                _ => return Err(ConfigError::new("mesh.nH", "basis build needs a coarse mesh").into()),
            };
            let field = make_field(&cfg)?;
            let hier = build_hierarchy(n_coarse, cfg.nh, cfg.control_resolution())?;
            let ops = mslod::assembly::assemble(&hier.fine, &field, &hier.control)?;
            let cache_dir = if out.is_some() { None } else { cfg.basis_cache.as_deref() };
            let run = basis_cache(cache_dir, cfg.rebuild_basis, &field, &hier, &ops, k, j)?;
            let path = match out {
                Some(p) => {
                    save_basis(&run.basis, &p).map_err(|e| io_or(e.into(), &p))?;
                    Some(p)
                }
                None => run.path.clone(),
            };
            println!(
                "basis H=1/{n_coarse} h=1/{} k={k}: {} columns, support radius {}, cache {}, {:.2}s",
                cfg.nh,
                run.basis.len(),
                run.basis.meta.support_radius,
                run.status.name(),
                run.seconds
            );
            match path {
                Some(p) => println!("stored at {}", p.display()),
                None => println!("not stored (set --cache or --out)"),
            }
        }
        Command::Basis(BasisCommand::Info { path }) => {
            let basis = load_basis(&path).map_err(|e| io_or(e.into(), &path))?;
            let m = &basis.meta;
            let nnz: usize = basis
                .columns
                .iter()
                .map(|c| c.values.iter().filter(|v| **v != 0.0).count())
                .sum();
            println!("coarse        1/{}", m.n_coarse);
            println!("fine          1/{}", m.n_fine);
            println!("k             {}", m.k);
            println!("j             {}", m.j.map_or("-".to_string(), |j| j.to_string()));
            println!("fingerprint   {:016x}", m.fingerprint);
            println!("columns       {}", basis.len());
            println!("nonzeros      {nnz}");
            println!("radius        {}", m.support_radius);
        }
        Command::Solve(args) => {
            let cfg = args.resolve()?;
            let record = run_single(&cfg)?;
            for (k, v) in record.quantities() {
                println!("{k:<18} {v}");
            }
            println!("output in {}", cfg.output_dir.display());
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            let table = run_sweep(&cfg)?;
            println!("{}", mslod::experiment::SWEEP_HEADER);
            for r in &table.rows {
                let e = &r.errors;
                println!(
                    "{:.5},{:.3e},{:.3e},{:.3e},{:.3e},{:.6e},{},{:.1}",
                    r.param, e.rel_l2_u, e.rel_l2_y, e.rel_energy_y, e.rel_l2_p, r.j_tilde, r.k, r.seconds
                );
            }
            let fmt = |s: Option<f64>| s.map_or(String::new(), |v| format!("{v:.3}"));
            println!(
                "slope,{},{},{},{}",
                fmt(table.slopes[0]),
                fmt(table.slopes[1]),
                fmt(table.slopes[2]),
                fmt(table.slopes[3])
            );
            if let Some(j) = table.reference_j_tilde {
                println!("fine jtilde {j:e}");
            }
            println!("written to {}", table.path.display());
        }
        Command::Validate {
            config,
            instances,
            first_seed,
        } => {
            let mut failures = 0;
            for seed in first_seed..first_seed + instances {
                let inst = random_instance(seed);
                let check = check_against_oracles(&inst.problem)?.expect("random instances are enumerable");
                let ok = check.passes();
                failures += usize::from(!ok);
                println!(
                    "{} seed {seed}: nh={} nrho={} enum gap {:.1e}, pg gap {:.1e}, kkt {:.1e}",
                    if ok { "PASS" } else { "FAIL" },
                    inst.nh,
                    inst.n_control,
                    check.enumeration_gap,
                    check.projected_gradient_gap,
                    check.kkt_violation
                );
            }
            if !config.is_empty() {
                let cfg = config.resolve()?;
                let record = mslod::experiment::compute_single(&cfg)?;
                let kkt = &record.kkt;
                let ok = record.solution.converged && kkt.vi_violation <= cfg.tol;
                failures += usize::from(!ok);
                println!(
                    "{} configured run: vi {:.1e}, multiplier signs {:.1e}, complementarity {:.1e}, state residual {:.1e}, adjoint residual {:.1e}",
                    if ok { "PASS" } else { "FAIL" },
                    kkt.vi_violation,
                    kkt.lambda1_neg_part.max(kkt.lambda2_pos_part).max(kkt.inactive_multiplier),
                    kkt.complementarity_gap,
                    kkt.state_residual,
                    kkt.adjoint_residual
                );
            }
            if failures > 0 {
                eprintln!("{failures} check(s) failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Attaches the path to bare I/O errors.
fn io_or(e: ExperimentError, path: &std::path::Path) -> ExperimentError {
    match e {
        ExperimentError::Coeff(mslod::coeff::CoeffError::Io(source)) | ExperimentError::Lod(mslod::lod::LodError::Io(source)) => {
            ExperimentError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
        other => other,
    }
}
