//! `ctxens`: synthetic data generation, experiment runs and self-checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod manifest;

use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ctxens_core::datagen::{self, MixKind, SyntheticSpec};
use ctxens_core::persist::write_atomic;
use ctxens_core::pipeline::{self, DataSource, ExperimentConfig};
use ctxens_core::verify::{self, Suite};
use ctxens_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use manifest::{FileEntry, RunManifest, Seeds, Versions, MANIFEST_FILE};

/// Overrides the root that relative `output_dir` values resolve against.
const OUTPUT_ROOT_ENV: &str = "CTXENS_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "ctxens", version, about = "Context-aware constrained ensemble forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic regime-mixing dataset as CSV.
    Synth {
        /// Mixing table: a, b or c.
        #[arg(long)]
        mix: MixKind,
        #[arg(long, default_value_t = 730)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; the file is named `y<mix>.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        /// Also write the two mixed components as columns `y1`, `y2`.
        #[arg(long)]
        components: bool,
    },
    /// Run one experiment config, or every `*.toml` in a directory.
    Run {
        path: PathBuf,
        /// Root for relative `output_dir` values. Defaults to $CTXENS_OUTPUT_ROOT,
        /// then to the config file's directory.
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Run a self-check suite: grad, oracle or order.
    Verify {
        suite: String,
        /// Random instances per check (default: 1000 for grad, 100 otherwise).
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth {
            mix,
            length,
            seed,
            out,
            noise_sigma,
            components,
        } => synth(
            SyntheticSpec {
                length,
                mix,
                seed,
                noise_sigma,
            },
            &out,
            components,
        ),
        Command::Run { path, output_root } => run(&path, output_root),
        Command::Verify { suite, instances, seed } => verify_cmd(&suite, instances, seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            exit_code(&e)
        }
    }
}

fn report(e: &Error) {
    eprintln!("error[{}]: {e}", e.name());
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_config_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

#[derive(Serialize)]
struct SynthEcho {
    mix: MixKind,
    length: usize,
    seed: u64,
    noise_sigma: f64,
    components: bool,
}

fn synth(spec: SyntheticSpec, out: &Path, components: bool) -> Result<ExitCode, Error> {
    spec.validate()?;
    let start = Instant::now();
    let data = datagen::generate(&spec)?;
    let frame = if components { data.frame_with_components()? } else { data.frame };
    let mut bytes = Vec::new();
    frame.write_csv(&mut bytes)?;
    let path = out.join(format!("y{}.csv", spec.mix));
    write_atomic(&path, &bytes)?;
    let elapsed = start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        command: "synth",
        config: SynthEcho {
            mix: spec.mix,
            length: spec.length,
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
            components,
        },
        config_path: None,
        config_hash: None,
        seeds: Seeds {
            experiment: spec.seed,
            data: Some(spec.seed),
            meta: None,
        },
        versions: Versions::default(),
        files: vec![FileEntry::hash(out, &path)?],
        timings: vec![("generate".into(), elapsed)],
    };
    manifest.write(&out.join(format!("y{}.{MANIFEST_FILE}", spec.mix)))?;
    println!("wrote {} ({} rows)", path.display(), frame.len());
    Ok(ExitCode::SUCCESS)
}

/// Config files named by `path`: the file itself, or the sorted `*.toml`
/// entries of a directory.
fn config_paths(path: &Path) -> Result<Vec<PathBuf>, Error> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::ConfigInvalid(format!("no *.toml configs in {}", path.display())));
    }
    Ok(paths)
}

fn load_config(path: &Path, output_root: Option<&Path>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_path(path)?;
    if config.output_dir.components().any(|c| c == Component::ParentDir) {
        return Err(Error::ConfigInvalid(format!(
            "{}: output_dir must not contain `..`",
            path.display()
        )));
    }
    let config_dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    config.resolve_paths(config_dir, output_root.unwrap_or(config_dir));
    Ok(config)
}

fn run(path: &Path, output_root: Option<PathBuf>) -> Result<ExitCode, Error> {
    let output_root = output_root.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from));
    let paths = config_paths(path)?;

    let mut loaded = Vec::new();
    let mut worst: Option<Error> = None;
    for p in &paths {
        match load_config(p, output_root.as_deref()) {
            Ok(c) => loaded.push((p.clone(), c)),
            Err(e) => {
                report(&e);
                worst.get_or_insert(e);
            }
        }
    }
    for (i, (p, c)) in loaded.iter().enumerate() {
        if let Some((q, _)) = loaded[..i].iter().find(|(_, d)| d.output_dir == c.output_dir) {
            let e = Error::ConfigInvalid(format!(
                "{} and {} share output_dir {}",
                q.display(),
                p.display(),
                c.output_dir.display()
            ));
            report(&e);
            worst.get_or_insert(e);
        }
    }
    if let Some(e) = worst {
        return Err(e);
    }

    let outcomes: Vec<(PathBuf, Result<RunSummary, Error>)> = loaded
        .into_par_iter()
        .map(|(p, c)| {
            let r = run_one(&p, &c);
            (p, r)
        })
        .collect();

    let mut code = ExitCode::SUCCESS;
    let mut config_failure = false;
    for (p, outcome) in outcomes {
        match outcome {
            Ok(s) => println!(
                "{}: final_cumulative_error {:.6e} -> {}",
                p.display(),
                s.final_error,
                s.dir.display()
            ),
            Err(e) => {
                eprint!("{}: ", p.display());
                report(&e);
                config_failure |= e.is_config_error();
                code = ExitCode::from(1);
            }
        }
    }
    Ok(if config_failure { ExitCode::from(2) } else { code })
}

struct RunSummary {
    final_error: f64,
    dir: PathBuf,
}

fn run_one(path: &Path, config: &ExperimentConfig) -> Result<RunSummary, Error> {
    let t0 = Instant::now();
    let frame = pipeline::load_frame(config)?;
    let t_load = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let offline = pipeline::run_offline_phase(config, &frame)?;
    let t_offline = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let result = pipeline::run_online_phase(config, &frame, &offline)?;
    let t_online = t2.elapsed().as_secs_f64();
    let t3 = Instant::now();
    let dir = config.output_dir.clone();
    let written = pipeline::write_outputs(&dir, &result, &offline)?;
    let t_write = t3.elapsed().as_secs_f64();

    let data_seed = match &config.data {
        DataSource::Synthetic { seed, .. } => Some(*seed),
        DataSource::Csv { .. } => None,
    };
    let manifest = RunManifest {
        command: "run",
        config,
        config_path: Some(path.to_path_buf()),
        config_hash: Some(result.config_hash.clone()),
        seeds: Seeds {
            experiment: config.seed,
            data: data_seed,
            meta: config.meta_seed()?,
        },
        versions: Versions::default(),
        files: written
            .files
            .iter()
            .map(|f| FileEntry::hash(&dir, f))
            .collect::<Result<_, _>>()?,
        timings: vec![
            ("load".into(), t_load),
            ("offline".into(), t_offline),
            ("online".into(), t_online),
            ("write".into(), t_write),
        ],
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(RunSummary {
        final_error: result.final_cumulative_error,
        dir,
    })
}

fn verify_cmd(suite: &str, instances: Option<usize>, seed: u64) -> Result<ExitCode, Error> {
    let suite: Suite = suite.parse()?;
    let instances = instances.unwrap_or(match suite {
        Suite::Grad => 1000,
        Suite::Oracle | Suite::Order => 100,
    });
    let start = Instant::now();
    let reports = verify::run_suite(suite, instances, seed)?;
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passed();
    }
    println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
