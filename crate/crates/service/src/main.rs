use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tradeslot_core::bench::{DatasetManifest, ReportFormat};
use tradeslot_core::dialogue::SessionConfig;
use tradeslot_core::exchange::PriceFeed;
use tradeslot_core::extract::FollowupLexicon;
use tradeslot_core::forge::{parse_code_mix, parse_word_list, NoiseSpec, ProtectedTokens};
use tradeslot_core::gateway::{build_provider, ChatProvider, ProviderConfig, RuleBasedProvider};
use tradeslot_core::{ExtractionPolicy, SymbolDirectory};
use tradeslot_service::api::{default_feed, router, AppState};
use tradeslot_service::cli::{self, EvalArgs};
use tradeslot_service::config::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "tradeslot",
    version,
    about = "Trade order extraction, clarification and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the REST service.
    Serve(ServiceArgs),
    /// Chat on stdin/stdout against the simulated venue.
    Repl(ServiceArgs),
    /// Score providers on a labelled dataset.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Derive dataset variants from JSONL on stdin.
    #[command(subcommand)]
    Forge(ForgeCommand),
    /// Dataset maintenance.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Args)]
struct ServiceArgs {
    /// Service TOML; TRADESLOT_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Provider TOML; repeat for one table row per provider.
        #[arg(long = "provider-config", required = true)]
        provider_config: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write per-record rows here; with several providers the name is suffixed.
        #[arg(long)]
        detail_csv: Option<PathBuf>,
        #[arg(long, default_value = "strict")]
        policy: ExtractionPolicy,
        /// `field<TAB>keyword` lines for classifying free-text follow-up questions.
        #[arg(long)]
        followup_lexicon: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ForgeCommand {
    Noise {
        #[arg(long)]
        seed: u64,
        /// One filler per line, replacing the built-in list.
        #[arg(long)]
        fillers: Option<PathBuf>,
        /// `word<TAB>replacement` per line, replacing the built-in table.
        #[arg(long)]
        code_mix: Option<PathBuf>,
        #[arg(long)]
        filler_p: Option<f64>,
        #[arg(long)]
        punctuation_p: Option<f64>,
        #[arg(long)]
        code_mix_p: Option<f64>,
        /// Symbol directory whose aliases stay untouched.
        #[arg(long)]
        directory: Option<PathBuf>,
        /// Extra regex for protected words; repeatable.
        #[arg(long = "protect")]
        protect: Vec<String>,
    },
    Slice {
        #[arg(long, default_value_t = 8)]
        target: usize,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    Validate {
        file: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve(args) => serve(&service_config(args.config.as_deref())?),
        Command::Repl(args) => {
            let cfg = service_config(args.config.as_deref())?;
            let (provider, directory) = provider_for(&cfg)?;
            let feed = feed_for(&cfg, &directory)?;
            let session = SessionConfig {
                max_turns: cfg.max_turns,
                auto_execute: cfg.auto_execute,
                policy: cfg.extraction_policy()?,
            };
            cli::repl(
                io::stdin().lock(),
                io::stdout().lock(),
                provider.as_ref(),
                &directory,
                feed,
                session,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(EvalCommand::Run {
            dataset,
            provider_config,
            parallelism,
            format,
            detail_csv,
            policy,
            followup_lexicon,
        }) => {
            let lexicon = followup_lexicon.map(|p| FollowupLexicon::load(&p)).transpose()?;
            let out = cli::eval(&EvalArgs {
                dataset: &dataset,
                provider_configs: &provider_config,
                parallelism,
                format,
                policy,
                lexicon,
            })?;
            print!("{}", out.report);
            if let Some(path) = detail_csv {
                let single = out.detail_csv.len() == 1;
                for (name, csv) in &out.detail_csv {
                    let target = if single { path.clone() } else { suffixed(&path, name) };
                    std::fs::write(&target, csv).with_context(|| format!("writing {}", target.display()))?;
                }
            }
            if out.errored > 0 {
                eprintln!(
                    "{} record(s) were not generated because of provider errors",
                    out.errored
                );
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Forge(ForgeCommand::Noise {
            seed,
            fillers,
            code_mix,
            filler_p,
            punctuation_p,
            code_mix_p,
            directory,
            protect,
        }) => {
            let mut spec = NoiseSpec::new(seed);
            if let Some(path) = fillers {
                spec.fillers = parse_word_list(&read(&path)?);
            }
            if let Some(path) = code_mix {
                spec.code_mix = parse_code_mix(&read(&path)?)?;
            }
            spec.filler_p = filler_p.unwrap_or(spec.filler_p);
            spec.punctuation_p = punctuation_p.unwrap_or(spec.punctuation_p);
            spec.code_mix_p = code_mix_p.unwrap_or(spec.code_mix_p);
            let dir = match directory {
                Some(path) => SymbolDirectory::load(&path)?,
                None => SymbolDirectory::builtin(),
            };
            let mut protected = ProtectedTokens::from_directory(&dir);
            for pattern in &protect {
                protected = protected.with_pattern(pattern)?;
            }
            cli::forge_noise(
                BufReader::new(io::stdin().lock()),
                io::stdout().lock(),
                &spec,
                &protected,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Forge(ForgeCommand::Slice { target }) => {
            cli::forge_slice(BufReader::new(io::stdin().lock()), io::stdout().lock(), target)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dataset(DatasetCommand::Validate { file, manifest }) => {
            let text = if file.as_os_str() == "-" {
                let mut s = String::new();
                io::stdin().read_to_string(&mut s)?;
                s
            } else {
                read(&file)?
            };
            let manifest = manifest.map(|p| DatasetManifest::load(&p)).transpose()?;
            let problems = cli::validate_dataset(&text, manifest.as_ref());
            if problems.is_empty() {
                println!("ok: {}", file.display());
                return Ok(ExitCode::SUCCESS);
            }
            for p in &problems {
                eprintln!("{}: {p}", file.display());
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn suffixed(path: &Path, name: &str) -> PathBuf {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}-{slug}{ext}"))
}

fn service_config(path: Option<&Path>) -> anyhow::Result<ServiceConfig> {
    let mut cfg = match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    Ok(cfg)
}

fn provider_for(cfg: &ServiceConfig) -> anyhow::Result<(Box<dyn ChatProvider>, SymbolDirectory)> {
    Ok(match &cfg.provider_config {
        Some(path) => {
            let pc = ProviderConfig::load(path)?;
            let dir = pc.load_directory()?;
            (build_provider(&pc)?, dir)
        }
        None => {
            let dir = SymbolDirectory::builtin();
            (Box::new(RuleBasedProvider::new(dir.clone())), dir)
        }
    })
}

fn feed_for(cfg: &ServiceConfig, directory: &SymbolDirectory) -> anyhow::Result<PriceFeed> {
    Ok(match &cfg.feed {
        Some(path) => PriceFeed::load(path)?,
        None => default_feed(directory),
    })
}

fn serve(cfg: &ServiceConfig) -> anyhow::Result<ExitCode> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}
