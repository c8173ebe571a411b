mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nvpair::config::ExperimentConfig;
use nvpair::NvError;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use commands::Outcome;

const SUBCOMMANDS: &[&str] = &[
    "odmr",
    "deer",
    "entangle",
    "tomography",
    "lifetime",
    "swap",
    "photon-corr",
    "implant",
    "localize",
    "validate",
    "describe",
];

#[derive(Parser, Debug)]
#[command(name = "nvpair", version, about = "Batch experiments on a coupled NV-centre pair")]
struct Cli {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo trajectory count for `entangle` and `swap`.
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "NVPAIR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ODMR spectrum and allowed lines.
    Odmr,
    /// SQ and DQ DEER traces with fitted coupling.
    Deer,
    /// Bell-state fidelity versus free-evolution wait.
    Entangle,
    /// Density-matrix tomography of the prepared DQ Bell state.
    Tomography,
    /// Entanglement lifetimes under independent and shared noise.
    Lifetime,
    /// Electron-to-nuclear storage, retrieval and storage decay.
    Swap,
    /// Two-photon correlation levels and correlation matrices.
    PhotonCorr,
    /// Implantation pair statistics.
    Implant,
    /// Super-resolution localization of the pair.
    Localize,
    /// Every acceptance criterion; exit 1 when any fails.
    Validate,
    /// Config schema and the figure a command regenerates.
    Describe { subcommand: String },
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    config_sha256: String,
    seed: u64,
    files: Vec<FileEntry>,
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

impl Failure {
    fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            exit: 2,
            code,
            message: message.into(),
        }
    }
}

impl From<NvError> for Failure {
    fn from(e: NvError) -> Self {
        let exit = match e {
            NvError::Config(_) => 2,
            _ => 1,
        };
        Failure {
            exit,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let (mut cfg, dir) = match &cli.config {
        None => (ExperimentConfig::default(), PathBuf::from(".")),
        Some(p) => {
            if !p.is_file() {
                return Err(Failure::usage("config_not_found", format!("config file {} not found", p.display())));
            }
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage("config_not_found", format!("{}: {e}", p.display())))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")))
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.trajectories {
        if n == 0 {
            return Err(Failure::usage("usage", "--trajectories must be positive"));
        }
        cfg.entangle.trajectories = n;
        cfg.swap.trajectories = n;
    }
    Ok((cfg, dir))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Odmr => "odmr",
        Command::Deer => "deer",
        Command::Entangle => "entangle",
        Command::Tomography => "tomography",
        Command::Lifetime => "lifetime",
        Command::Swap => "swap",
        Command::PhotonCorr => "photon-corr",
        Command::Implant => "implant",
        Command::Localize => "localize",
        Command::Validate => "validate",
        Command::Describe { .. } => "describe",
    }
}

fn describe(name: &str) -> Result<String, Failure> {
    let d = ExperimentConfig::default();
    let section = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("schema serializes");
    let system = json!({ "system": d.system, "noise": d.noise, "seed": d.seed, "output_dir": d.output_dir });
    let (what, schema) = match name {
        "odmr" => ("ODMR spectrum of both defects with 15N hyperfine doublets (Fig 1c).", json!({ "odmr": d.odmr })),
        "deer" => (
            "SQ and DQ DEER traces; the fitted SQ frequency is the dipolar coupling and DQ runs four times faster (Fig 1e).",
            json!({ "deer": d.deer }),
        ),
        "entangle" => {
            return Ok(format!(
                "entangle: Bell-state generation fidelity versus the free-evolution wait tau of the DQ entangling gate (Fig 2b).\n\
                 Gate sequence at the Bell point:\n{}\nOutputs: entangle_scan.csv (tau_s, fidelity_ideal, fidelity_decohered), entangle.json.\n\
                 Config schema (defaults):\n{}\n{}\n",
                commands::reference_gate_text(),
                section(json!({ "entangle": d.entangle })),
                section(system)
            ))
        }
        "tomography" => (
            "Density-matrix tomography of the prepared DQ Bell state from collective phase scans (Fig 2c-d).",
            json!({ "tomography": d.tomography }),
        ),
        "lifetime" => (
            "Lifetimes of the Phi and Psi states from the collective-phase spectral line width, independent and shared noise (Fig 4c blue/green).",
            json!({ "lifetime": d.lifetime, "measurement": d.measurement }),
        ),
        "swap" => (
            "Conditional-pulse swap of the electron Bell state onto the two 15N nuclei and back, with storage decay (Fig 4a-c, Supp Fig 15).",
            json!({ "swap": d.swap }),
        ),
        "photon-corr" => (
            "Two-photon HBT correlation levels of Phi, Psi and uncorrelated pairs, gating, and correlation matrices (Fig 3).",
            json!({ "photon": d.photon }),
        ),
        "implant" => (
            "Ion-implantation pair statistics through an aperture and straggle-table pair yields (Supp Figs 1-2).",
            json!({ "implant": d.implant }),
        ),
        "localize" => (
            "Super-resolution localization of the two emitters from difference images, plus the 3D distance range (Supp Figs 16-17).",
            json!({ "localize": d.localize }),
        ),
        "validate" => ("Runs every acceptance criterion and prints one PASS/FAIL line each.", json!({})),
        "describe" => ("Prints the config schema and the figure a subcommand regenerates.", json!({})),
        other => {
            return Err(Failure::usage(
                "unknown_subcommand",
                format!("unknown subcommand {other:?}; valid subcommands: {}", SUBCOMMANDS.join(", ")),
            ))
        }
    };
    Ok(format!(
        "{name}: {what}\nConfig schema (defaults):\n{}\n{}\n",
        section(schema),
        section(system)
    ))
}

fn execute(cli: &Cli) -> Result<Outcome, Failure> {
    let (cfg, dir) = load_config(cli)?;
    let out = match &cli.command {
        Command::Odmr => commands::odmr(&cfg),
        Command::Deer => commands::deer(&cfg),
        Command::Entangle => commands::entangle(&cfg),
        Command::Tomography => commands::tomography(&cfg),
        Command::Lifetime => commands::lifetime(&cfg),
        Command::Swap => commands::swap(&cfg),
        Command::PhotonCorr => commands::photon_corr(&cfg, &dir),
        Command::Implant => commands::implant(&cfg, &dir),
        Command::Localize => commands::localize(&cfg),
        Command::Validate => commands::validate(),
        Command::Describe { .. } => unreachable!("describe runs without a config"),
    }?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&out_dir, command_name(&cli.command), &cfg, &out)?;
    Ok(out)
}

fn write_outputs(dir: &Path, command: &str, cfg: &ExperimentConfig, out: &Outcome) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::from(NvError::Io(format!("{}: {e}", dir.display())));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut files = Vec::new();
    for a in &out.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents).map_err(io)?;
        files.push(FileEntry {
            name: a.name.clone(),
            sha256: hex(&Sha256::digest(&a.contents)),
            bytes: a.contents.len(),
        });
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hex(&Sha256::digest(cfg.to_json().as_bytes())),
        seed: cfg.seed,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), &text).map_err(io)?;
    println!("{}", json!({ "summary": out.summary, "manifest": manifest }));
    Ok(())
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", json!({ "error": { "code": f.code, "message": f.message } }));
    ExitCode::from(f.exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let msg = if e.kind() == ErrorKind::InvalidSubcommand {
                format!("{}; valid subcommands: {}", msg.trim(), SUBCOMMANDS.join(", "))
            } else {
                msg.trim().to_string()
            };
            return fail(Failure::usage("usage", msg));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(Failure::usage("usage", "--threads must be positive"));
        }
        // a second initialization only happens in-process and is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Describe { subcommand } = &cli.command {
        return match describe(subcommand) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(f) => fail(f),
        };
    }
    match execute(&cli) {
        Ok(out) if out.failed => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
