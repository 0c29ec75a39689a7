use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Utc;
use serde::Serialize;
use serde_json::json;

use aviscape_core::audio::wav::{self, SampleFormat};
use aviscape_core::classifier::{Classifier, ClassifierConfig, TemplateSet};
use aviscape_core::corpus::{self, CorpusManifest, EvalOptions, LabelledClip};
use aviscape_core::geo::{GeoPoint, Repository, TimeRange};
use aviscape_core::soundscape::{build_scene, render_scene, SceneRequest};
use aviscape_core::SpeciesId;
use aviscape_server::{Server, ServerConfig, TEMPLATES_FILE};

use crate::{Cli, Command, EvalArgs, RenderArgs, ServeArgs, SynthArgs, TemplatesArgs};

const MANIFEST: &str = "manifest.json";

pub fn run(cli: Cli) -> Result<()> {
    let mut config = ServerConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.data_dir {
        config.data_dir = Some(dir);
    }
    match cli.command {
        Command::Serve(args) => serve(config, args),
        Command::SynthCorpus(args) => synth_corpus(args),
        Command::Templates(args) => templates(&config, args),
        Command::Eval(args) => eval(&config, args),
        Command::Render(args) => render(&config, args),
    }
}

fn emit(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn serve(mut config: ServerConfig, args: ServeArgs) -> Result<()> {
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let server = Server::bind(config).await?;
        let addr = server.local_addr()?;
        tracing::info!(%addr, "listening");
        {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", json!({ "ready": addr.to_string() }))?;
            out.flush()?;
        }
        server.run(shutdown_signal()).await?;
        tracing::info!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {}
        _ = terminate => {}
    }
    tracing::info!("shutdown requested");
}

fn synth_corpus(args: SynthArgs) -> Result<()> {
    let manifest = corpus::manifest(args.species, args.clips, args.seed, args.sample_rate)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for entry in &manifest.entries {
        let clip = corpus::render_entry(&manifest, entry)?;
        let path = args.out.join(&entry.file);
        fs::write(&path, wav::encode(&clip, SampleFormat::Float32)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = args.out.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
    tracing::info!(files = manifest.entries.len(), dir = %args.out.display(), "corpus written");
    emit(&json!({
        "manifest": path,
        "files": manifest.entries.len(),
        "species_count": manifest.species_count,
        "clips_per_species": manifest.clips_per_species,
        "seed": manifest.seed,
    }))
}

fn load_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<LabelledClip>)> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: CorpusManifest = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let clips = manifest
        .entries
        .iter()
        .map(|e| {
            let p = dir.join(&e.file);
            let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
            let clip = wav::decode(&bytes).with_context(|| format!("decoding {}", p.display()))?;
            Ok(LabelledClip { clip, label: e.species_id.clone(), annotation: e.annotation })
        })
        .collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        bail!("corpus {} is empty", dir.display());
    }
    Ok((manifest, clips))
}

fn classifier_config(config: &ServerConfig) -> ClassifierConfig {
    ClassifierConfig { acceptance_threshold: config.acceptance_threshold, ..ClassifierConfig::default() }
}

fn templates(config: &ServerConfig, args: TemplatesArgs) -> Result<()> {
    let out = match (args.out, &config.data_dir) {
        (Some(p), _) => p,
        (None, Some(dir)) => dir.join(TEMPLATES_FILE),
        (None, None) => bail!("give --out or a data directory"),
    };
    let (_, clips) = load_corpus(&args.corpus)?;
    let cfg = classifier_config(config);
    let labels: Vec<SpeciesId> = clips.iter().map(|c| c.label.clone()).collect();
    let all: Vec<usize> = (0..clips.len()).collect();
    let templates = corpus::train_templates(&Classifier::new(cfg)?, &clips, &labels, &all)?;
    let set = TemplateSet { config: cfg, templates };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, serde_json::to_vec(&set)?).with_context(|| format!("writing {}", out.display()))?;
    emit(&json!({
        "templates": out,
        "species": set.templates.iter().map(|t| &t.species_id).collect::<Vec<_>>(),
        "clips": clips.len(),
    }))
}

fn eval(config: &ServerConfig, args: EvalArgs) -> Result<()> {
    let (_, clips) = load_corpus(&args.corpus)?;
    let options = EvalOptions { noise_snr_db: args.noise_snr, shuffle_labels_seed: args.shuffle_labels };
    let outcome = corpus::run_eval(&clips, classifier_config(config), args.split_seed, &options)?;
    tracing::info!(
        top1 = outcome.report.top1_accuracy,
        map = outcome.report.mean_average_precision,
        "evaluation finished"
    );
    emit(&outcome)
}

fn render(config: &ServerConfig, args: RenderArgs) -> Result<()> {
    let position = GeoPoint::new(args.lat, args.lon)?;
    let dir: PathBuf = config.data_dir.clone().context("render needs a data directory")?;
    if !dir.is_dir() {
        bail!("data directory {} does not exist", dir.display());
    }
    let repo = Repository::open(&dir, config.repo_config())?;
    let request = SceneRequest {
        position,
        heading: args.heading,
        time_window: TimeRange::new(args.from, args.to)?,
        species: args.species.map(SpeciesId::from),
    };
    let scene = build_scene(&request, &repo, &config.scene, args.as_of.unwrap_or_else(Utc::now))?;
    let audio = render_scene(&scene, repo.clips(), args.duration, args.sample_rate)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, wav::encode(&audio, SampleFormat::Float32)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    emit(&json!({ "out": args.out, "frames": audio.frames(), "sample_rate": audio.sample_rate(), "scene": scene }))
}
