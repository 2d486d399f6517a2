use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use equibias::analysis::{
    fit_dual_coefficients, min_schatten_baseline, norm_report, uncertainty_check, DualFitOptions, ACTIVE_MARGIN_TOL, RANK_TOL,
};
use equibias::data::read_dataset_csv;
use equibias::experiment::{load_group, load_irreps, run, ExperimentConfig, GroupSource, IrrepSource};
use equibias::repr::{FourierBlocksJson, IrrepSet};
use equibias::{Error, GroupTable, Result};

#[derive(Parser)]
#[command(name = "equibias", version, about = "Group Fourier analysis and implicit-bias experiments for group-convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate a group; optionally export its table.
    Group {
        #[command(flatten)]
        group: GroupArgs,
        /// Write the multiplication table as JSON.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Compute irreps; optionally verify and export them.
    Irreps {
        #[command(flatten)]
        group: GroupArgs,
        #[command(flatten)]
        irreps: IrrepArgs,
        /// Check completeness, homomorphism, unitarity and Schur orthogonality.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Fourier transform a signal file (JSON array of reals), or invert a
    /// block file with --inverse.
    Fourier {
        #[command(flatten)]
        group: GroupArgs,
        #[command(flatten)]
        irreps: IrrepArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        inverse: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a config restricted to one architecture.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Architecture name (defaults to the first one).
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Norm, rank and uncertainty reports for a saved β, plus a dual fit
    /// when a dataset is given.
    Analyze {
        #[command(flatten)]
        group: GroupArgs,
        #[command(flatten)]
        irreps: IrrepArgs,
        /// β as a JSON array or a `<arch>_beta.json` file.
        #[arg(long)]
        beta: PathBuf,
        /// Dataset CSV for the dual fit.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = RANK_TOL)]
        tol: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Minimum Fourier-norm interpolating predictor for a dataset.
    Baseline {
        #[command(flatten)]
        group: GroupArgs,
        #[command(flatten)]
        irreps: IrrepArgs,
        #[arg(long)]
        data: PathBuf,
        /// The refinement targets the exponent 2/L (capped at 1).
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a full experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's replica count.
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        master_seed: Option<u64>,
    },
}

#[derive(Args)]
struct GroupArgs {
    /// Group spec such as `dihedral:8`, `quaternion` or `cyclic:2*dihedral:6`.
    #[arg(long, conflicts_with = "table")]
    group: Option<String>,
    /// JSON multiplication table `{order, table, labels}`.
    #[arg(long)]
    table: Option<PathBuf>,
}

impl GroupArgs {
    fn load(&self) -> Result<Arc<GroupTable>> {
        let source = match (&self.group, &self.table) {
            (Some(s), None) => GroupSource::Spec(s.clone()),
            (None, Some(p)) => GroupSource::TableFile(p.clone()),
            _ => return Err(Error::Config("give exactly one of --group or --table".into())),
        };
        load_group(&source, Path::new("."))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IrrepKind {
    Builtin,
    BuiltinReal,
    Numerical,
}

#[derive(Args)]
struct IrrepArgs {
    #[arg(long, value_enum, default_value = "builtin", conflicts_with = "irreps_file")]
    irreps: IrrepKind,
    /// Seed of the numerical decomposition.
    #[arg(long, default_value_t = 0)]
    irrep_seed: u64,
    /// Irreps JSON (dims plus matrices as [re, im] pairs).
    #[arg(long)]
    irreps_file: Option<PathBuf>,
}

impl IrrepArgs {
    fn load(&self, g: &Arc<GroupTable>) -> Result<IrrepSet> {
        let source = match (&self.irreps_file, self.irreps) {
            (Some(p), _) => IrrepSource::File(p.clone()),
            (None, IrrepKind::Builtin) => IrrepSource::Builtin,
            (None, IrrepKind::BuiltinReal) => IrrepSource::BuiltinReal,
            (None, IrrepKind::Numerical) => IrrepSource::Numerical { seed: self.irrep_seed },
        };
        load_irreps(&source, g, Path::new("."))
    }
}

fn emit(output: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match output {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_signal(path: &Path) -> Result<Vec<f64>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let arr = match &v {
        serde_json::Value::Array(_) => &v,
        serde_json::Value::Object(m) => {
            m.get("beta").ok_or_else(|| Error::Config(format!("{} has no 'beta' field (ReLU nets have no single β)", path.display())))?
        }
        _ => return Err(Error::Config(format!("{} is not a signal", path.display()))),
    };
    serde_json::from_value(arr.clone()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Group { group, export } => {
            let g = group.load()?;
            g.validate()?;
            if let Some(p) = export {
                fs::write(&p, serde_json::to_string_pretty(&g.to_json())? + "\n")?;
            }
            emit(
                None,
                &json!({
                    "order": g.order(),
                    "abelian": g.is_abelian(),
                    "conjugacy_classes": g.conjugacy_classes().len(),
                    "valid": true,
                }),
            )?;
        }
        Command::Irreps { group, irreps, verify, export } => {
            let g = group.load()?;
            let set = irreps.load(&g)?;
            println!("dims {:?}", set.dims());
            if let Some(p) = export {
                fs::write(&p, serde_json::to_string_pretty(&set.to_json())? + "\n")?;
            }
            if verify {
                let r = set.verify();
                let tol = 1e-8;
                let line = |name: &str, ok: bool, detail: String| println!("{name:<24} {} ({detail})", if ok { "PASS" } else { "FAIL" });
                line("completeness", r.complete, format!("sum d^2 = {}, |G| = {}", r.sum_dim_sq, r.order));
                line("homomorphism", r.homomorphism_error <= tol, format!("{:.2e}", r.homomorphism_error));
                line("unitarity", r.unitarity_error <= tol, format!("{:.2e}", r.unitarity_error));
                line("schur-orthogonality", r.schur_error <= tol, format!("{:.2e}", r.schur_error));
                if !r.passes(tol) {
                    return Err(Error::Validation("irrep verification failed".into()));
                }
            }
        }
        Command::Fourier { group, irreps, input, inverse, output } => {
            let g = group.load()?;
            let set = irreps.load(&g)?;
            let value = if inverse {
                let blocks: FourierBlocksJson = serde_json::from_str(&fs::read_to_string(&input)?)?;
                let f = set.igft(&blocks.into_blocks()?)?;
                let max_im = f.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
                if max_im < 1e-9 {
                    json!(f.iter().map(|z| z.re).collect::<Vec<_>>())
                } else {
                    json!(f.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
                }
            } else {
                serde_json::to_value(set.gft(&read_signal(&input)?)?.to_json())?
            };
            emit(output.as_deref(), &value)?;
        }
        Command::Train { config, arch, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let keep = match arch {
                Some(name) => cfg
                    .architectures
                    .iter()
                    .position(|a| a.label() == name)
                    .ok_or_else(|| Error::Config(format!("no architecture named '{name}'")))?,
                None => 0,
            };
            cfg.architectures = vec![cfg.architectures.swap_remove(keep)];
            cfg.analysis.baseline = false;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            return run_config(&cfg, &config);
        }
        Command::Analyze { group, irreps, beta, data, layers, tol, output } => {
            let g = group.load()?;
            let set = irreps.load(&g)?;
            let b = read_signal(&beta)?;
            let p_values = [2.0 / layers as f64, 1.0, 2.0];
            let mut report = json!({
                "norms": norm_report(&b, &set, &p_values, tol)?,
                "uncertainty": uncertainty_check(&b, &set.gft(&b)?, tol)?,
            });
            if let Some(d) = data {
                let ds = read_dataset_csv(fs::File::open(d)?)?;
                let opts = DualFitOptions { margin_tol: ACTIVE_MARGIN_TOL, rescale: true };
                report["kkt"] = serde_json::to_value(fit_dual_coefficients(&b, &ds, &set, layers, opts)?)?;
            }
            emit(output.as_deref(), &report)?;
        }
        Command::Baseline { group, irreps, data, layers, iters, seed, output } => {
            let g = group.load()?;
            let set = irreps.load(&g)?;
            let ds = read_dataset_csv(fs::File::open(data)?)?;
            let p = (2.0 / layers.max(1) as f64).min(1.0);
            let r = min_schatten_baseline(&ds, &set, p, iters, seed)?;
            emit(output.as_deref(), &serde_json::to_value(r)?)?;
        }
        Command::Run { config, out, replicas, master_seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(k) = replicas {
                cfg.replicas = k;
            }
            if let Some(s) = master_seed {
                cfg.master_seed = s;
            }
            return run_config(&cfg, &config);
        }
    }
    Ok(0)
}

/// Runs a config whose relative data paths are resolved next to the file.
fn run_config(cfg: &ExperimentConfig, path: &Path) -> Result<i32> {
    let base = path.parent().unwrap_or(Path::new("."));
    let outcome = run(cfg, base)?;
    println!("{}", outcome.dir.display());
    for r in &outcome.manifest.replicas {
        for s in &r.stages {
            let status = serde_json::to_value(s.status)?;
            println!("{:<10} {:<32} {}", r.dir, s.stage, status.as_str().unwrap_or(""));
        }
    }
    if let Some(e) = outcome.manifest.first_failure().and_then(|s| s.error.as_ref()) {
        eprintln!("{}", json!({ "error": e }));
    }
    Ok(outcome.manifest.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_json() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
