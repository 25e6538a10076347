//! Command-line front end: index building, captioning, evaluation and K/N
//! ablation sweeps.
//!
//! Settings resolve as flags > config file > built-in defaults. The provider
//! URL can also come from `RETROCAP_PROVIDER`, which ranks just below the
//! flag. Exit codes: 0 success, 2 usage or input error, 3 provider or
//! transport error, 4 internal error.

mod grid;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use grid::{parse_grid, GridCell, GridError, TABLE3_GRID};

use crate::metrics::{self, evaluate, load_references, pair_instances, EvalReport, MetricError};
use crate::pipeline::{
    default_parallelism, load_shots, CaptionEngine, ImageInput, PipelineConfig, PipelineError,
    StageFailure, Template, DEFAULT_SHOTS_JSON,
};
use crate::prompt::PromptShot;
use crate::provider::{Gateway, HttpProvider, HttpProviderConfig, MockProvider, ProviderError};
use crate::store::{timestamp_now, CaptionFormat, EmbeddingStore, StoreBuilder, StoreError};

/// Four Spanish demonstrations; the first three equal the default set.
pub const EXTENDED_SHOTS_JSON: &str = include_str!("../../fixtures/shots/four_shots.json");

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    pub fn provider(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_PROVIDER,
            message: message.to_string(),
        }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Provider(p) => p.into(),
            other => CliError::input(other),
        }
    }
}

fn provider_exit_code(e: &ProviderError) -> i32 {
    match e {
        ProviderError::ImageIo { .. } | ProviderError::UndecodableImage(_) | ProviderError::InvalidRequest(_) => EXIT_INPUT,
        _ => EXIT_PROVIDER,
    }
}

fn pipeline_exit_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Stage {
            source: StageFailure::Provider(p),
            ..
        } => provider_exit_code(p),
        _ => EXIT_INPUT,
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        CliError {
            code: provider_exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError {
            code: pipeline_exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::input(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "retrocap", version, about = "Retrieval-augmented multilingual image captioning")]
pub struct Cli {
    /// Flat key = value TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a caption corpus and write a binary index.
    BuildIndex(BuildIndexArgs),
    /// Caption one image or a list of images.
    Caption(CaptionArgs),
    /// Score predictions against references.
    Evaluate(EvaluateArgs),
    /// Sweep K and N over a grid and score every cell.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct ProviderArgs {
    /// Provider base URL, or `mock` for the built-in deterministic provider.
    #[arg(long, env = "RETROCAP_PROVIDER")]
    pub provider: Option<String>,
    /// Request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long, default_value = "jsonl")]
    pub format: CaptionFormat,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub source: Option<String>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

impl Default for CaptionFormat {
    fn default() -> Self {
        CaptionFormat::Jsonl
    }
}

/// Flags shared by `caption` and `ablate`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub template: Option<Template>,
    /// JSON array of demonstrations.
    #[arg(long)]
    pub shots: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct CaptionArgs {
    #[arg(long, conflicts_with = "images")]
    pub image: Option<PathBuf>,
    /// Text file listing one image path per line (relative to the file).
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Predictions jsonl; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// `{id: [captions]}` JSON or COCO annotation JSON.
    #[arg(long)]
    pub references: PathBuf,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lang: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args)]
pub struct AblateArgs {
    /// e.g. "k=1..5;n=1 | k=4;n=1..4", or `table3`.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// TSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Values read from `--config`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let values: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if let Some((k, _)) = values.iter().find(|(_, v)| v.is_table()) {
            return Err(CliError::input(format!("{}: key `{k}` is a table; config must be flat", path.display())));
        }
        Ok(ConfigFile { values })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let values: toml::Table = toml::from_str(text).map_err(CliError::input)?;
        Ok(ConfigFile { values })
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::input(format!("config key `{key}`: {e}"))),
        }
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.get::<String>(key)? {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| CliError::input(format!("config key `{key}`: {e}"))),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: impl FnOnce() -> T) -> T {
    flag.or(file).unwrap_or_else(default)
}

/// Fully resolved settings of a captioning run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSettings {
    pub index: PathBuf,
    pub language: String,
    pub k: usize,
    pub n: usize,
    pub c: usize,
    pub beam: usize,
    pub max_new_tokens: usize,
    pub template: Template,
    pub shots: Option<PathBuf>,
    pub parallelism: usize,
    pub provider: String,
    pub timeout_secs: u64,
}

impl RunSettings {
    fn resolve(run: &RunArgs, k: Option<usize>, n: Option<usize>, file: &ConfigFile) -> Result<Self, CliError> {
        let defaults = PipelineConfig {
            shots: Vec::new(),
            ..PipelineConfig::default()
        };
        let index = run
            .index
            .clone()
            .or(file.get::<PathBuf>("index")?)
            .ok_or_else(|| CliError::input("--index is required"))?;
        Ok(RunSettings {
            index,
            language: pick(run.lang.clone(), file.get("lang")?, || defaults.language.clone()),
            k: pick(k, file.get("k")?, || defaults.k),
            n: pick(n, file.get("n")?, || defaults.n),
            c: pick(run.c, file.get("c")?, || defaults.c),
            beam: pick(run.beam, file.get("beam")?, || defaults.beam_size),
            max_new_tokens: pick(run.max_new_tokens, file.get("max_new_tokens")?, || defaults.max_new_tokens),
            template: pick(run.template, file.get_parsed("template")?, || defaults.template),
            shots: run.shots.clone().or(file.get("shots")?),
            parallelism: pick(run.parallelism, file.get("parallelism")?, default_parallelism),
            provider: pick(run.provider.provider.clone(), file.get("provider")?, || "mock".to_string()),
            timeout_secs: pick(run.provider.timeout, file.get("timeout")?, || 120),
        })
    }

    /// Flags that reproduce these settings when parsed with an empty config.
    pub fn to_args(&self) -> Vec<String> {
        let mut a = vec![
            "--index".to_string(),
            self.index.display().to_string(),
            "--lang".into(),
            self.language.clone(),
            "--k".into(),
            self.k.to_string(),
            "--n".into(),
            self.n.to_string(),
            "--c".into(),
            self.c.to_string(),
            "--beam".into(),
            self.beam.to_string(),
            "--max-new-tokens".into(),
            self.max_new_tokens.to_string(),
            "--template".into(),
            self.template.to_string(),
        ];
        if let Some(s) = &self.shots {
            a.push("--shots".into());
            a.push(s.display().to_string());
        }
        a.extend([
            "--parallelism".into(),
            self.parallelism.to_string(),
            "--provider".into(),
            self.provider.clone(),
            "--timeout".into(),
            self.timeout_secs.to_string(),
        ]);
        a
    }

    fn shots_bytes(&self, fallback: &'static str) -> Result<Vec<u8>, CliError> {
        match &self.shots {
            Some(p) => std::fs::read(p).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
            None => Ok(fallback.as_bytes().to_vec()),
        }
    }

    fn load_shots(&self, fallback: &'static str) -> Result<Vec<PromptShot>, CliError> {
        match &self.shots {
            Some(p) => load_shots(p).map_err(CliError::from),
            None => Ok(serde_json::from_str(fallback).expect("bundled shots file is valid")),
        }
    }

    pub fn pipeline_config(&self, shots: Vec<PromptShot>) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            n: self.n,
            c: self.c,
            beam_size: self.beam,
            max_new_tokens: self.max_new_tokens,
            language: self.language.clone(),
            template: self.template,
            shots,
            parallelism: self.parallelism,
            ..PipelineConfig::default()
        }
    }
}

/// Resolves `caption` flags against a config file.
pub fn resolve_caption(args: &CaptionArgs, file: &ConfigFile) -> Result<RunSettings, CliError> {
    RunSettings::resolve(&args.run, args.k, args.n, file)
}

pub fn connect_provider(provider: &str, timeout_secs: u64) -> Result<Gateway, CliError> {
    if provider == "mock" {
        return Ok(Gateway::connect(Box::new(MockProvider::new()))?);
    }
    let mut config = HttpProviderConfig::new(provider);
    config.timeout = Duration::from_secs(timeout_secs);
    Ok(Gateway::connect(Box::new(HttpProvider::new(config)?))?)
}

/// Git-style content hash: SHA-256 of `"blob <len>\0" + bytes`, hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(content_hash(&bytes))
}

/// Pipeline settings that influence outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigSnapshot {
    pub k: usize,
    pub n: usize,
    pub c: usize,
    pub beam_size: usize,
    pub max_new_tokens: usize,
    pub language: String,
    pub template: Template,
}

/// Provenance record embedded in every output artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Unix seconds; honors `SOURCE_DATE_EPOCH`.
    pub created_at: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigSnapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots_hash: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created_at: timestamp_now(),
            config: None,
            provider: None,
            provider_id: None,
            store_path: None,
            index_hash: None,
            shots_hash: None,
            inputs: BTreeMap::new(),
        }
    }

    fn for_run(command: &str, s: &RunSettings, provider_id: &str, shots: &[u8]) -> Result<Self, CliError> {
        let mut m = RunManifest::new(command);
        m.config = Some(ConfigSnapshot {
            k: s.k,
            n: s.n,
            c: s.c,
            beam_size: s.beam,
            max_new_tokens: s.max_new_tokens,
            language: s.language.clone(),
            template: s.template,
        });
        m.provider = Some(s.provider.clone());
        m.provider_id = Some(provider_id.to_string());
        m.store_path = Some(s.index.display().to_string());
        m.index_hash = Some(hash_file(&s.index)?);
        m.shots_hash = Some(content_hash(shots));
        Ok(m)
    }
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    manifest: &'a RunManifest,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::internal(format!("write failed: {e}"))
}

/// Image paths from a list file; relative entries resolve against the
/// list's directory.
pub fn read_image_list(path: &Path) -> Result<Vec<ImageInput>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let images: Vec<ImageInput> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            ImageInput::from_path(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
        })
        .collect();
    if images.is_empty() {
        return Err(CliError::input(format!("{}: no images listed", path.display())));
    }
    Ok(images)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildIndex(a) => cmd_build_index(&a, &file, &mut std::io::stdout().lock()),
        Command::Caption(a) => cmd_caption(&a, &file),
        Command::Evaluate(a) => cmd_evaluate(&a, &file),
        Command::Ablate(a) => cmd_ablate(&a, &file),
    }
}

pub fn cmd_build_index(args: &BuildIndexArgs, file: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let provider = pick(args.provider.provider.clone(), file.get("provider")?, || "mock".to_string());
    let timeout = pick(args.provider.timeout, file.get("timeout")?, || 120);
    let language = pick(args.language.clone(), file.get("language")?, || "en".to_string());
    let source = pick(args.source.clone(), file.get("source")?, || {
        args.captions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "captions".into())
    });
    if !args.captions.exists() {
        return Err(CliError::input(format!("{}: no such file", args.captions.display())));
    }
    let records = crate::store::read_captions(&args.captions, args.format)?;
    let gateway = connect_provider(&provider, timeout)?;
    let manifest = gateway.manifest().clone();
    let mut builder = StoreBuilder::new(manifest.embedding_dimension, manifest.provider_id.clone());
    let added = builder.ingest_records(records, &source, &language, Some(&gateway))?;
    let store = builder.freeze();
    let saved = store.save_index(&args.out)?;
    writeln!(
        out,
        "wrote {}: {} entries, dimension {}, provider {}, checksum {}",
        args.out.display(),
        added,
        saved.dimension,
        saved.provider_id,
        saved.checksum
    )
    .map_err(write_err)?;
    Ok(())
}

struct PreparedRun {
    settings: RunSettings,
    store: EmbeddingStore,
    gateway: Gateway,
    shots: Vec<PromptShot>,
    shots_bytes: Vec<u8>,
}

fn prepare_run(settings: RunSettings, fallback_shots: &'static str) -> Result<PreparedRun, CliError> {
    let shots_bytes = settings.shots_bytes(fallback_shots)?;
    let shots = settings.load_shots(fallback_shots)?;
    let store = EmbeddingStore::load_index(&settings.index, None)?;
    let gateway = connect_provider(&settings.provider, settings.timeout_secs)?;
    store.check_provider(&gateway.manifest().provider_id)?;
    Ok(PreparedRun {
        settings,
        store,
        gateway,
        shots,
        shots_bytes,
    })
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    image_id: &'a str,
    stage: Option<crate::pipeline::Stage>,
    error: String,
}

pub fn cmd_caption(args: &CaptionArgs, file: &ConfigFile) -> Result<(), CliError> {
    let images = match (&args.image, &args.images) {
        (Some(p), None) => vec![ImageInput::from_path(p.clone())],
        (None, Some(list)) => read_image_list(list)?,
        _ => return Err(CliError::input("exactly one of --image or --images is required")),
    };
    let run = prepare_run(resolve_caption(args, file)?, DEFAULT_SHOTS_JSON)?;
    let config = run.settings.pipeline_config(run.shots.clone());
    let manifest = RunManifest::for_run("caption", &run.settings, &run.gateway.manifest().provider_id, &run.shots_bytes)?;

    let engine = CaptionEngine::new(&config, &run.store, &run.gateway)?;
    let results = engine.caption_batch(&images);

    let mut out = open_output(args.out.as_deref())?;
    write_jsonl(&mut out, &ManifestLine { manifest: &manifest })?;
    let mut failures = Vec::new();
    for (img, r) in images.iter().zip(results) {
        match r {
            Ok(res) => write_jsonl(&mut out, &res)?,
            Err(e) => failures.push((img.id.clone(), e)),
        }
    }
    out.flush().map_err(write_err)?;
    report_failures(args.out.as_deref(), failures)
}

fn report_failures(out: Option<&Path>, failures: Vec<(String, PipelineError)>) -> Result<(), CliError> {
    let Some((_, first)) = failures.first() else {
        return Ok(());
    };
    let first_msg = first.to_string();
    let code = failures.iter().map(|(_, e)| pipeline_exit_code(e)).max().unwrap_or(EXIT_INTERNAL);
    if let Some(p) = out {
        let path = PathBuf::from(format!("{}.errors.jsonl", p.display()));
        let mut w = open_output(Some(&path))?;
        for (id, e) in &failures {
            write_jsonl(
                &mut w,
                &ErrorLine {
                    image_id: id,
                    stage: e.stage(),
                    error: e.to_string(),
                },
            )?;
        }
        w.flush().map_err(write_err)?;
    }
    for (_, e) in &failures {
        eprintln!("error: {e}");
    }
    Err(CliError {
        code,
        message: format!("{} image(s) failed; first: {first_msg}", failures.len()),
    })
}

fn write_jsonl<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(CliError::internal)?;
    out.write_all(b"\n").map_err(write_err)
}

pub fn cmd_evaluate(args: &EvaluateArgs, file: &ConfigFile) -> Result<(), CliError> {
    let language = pick(args.lang.clone(), file.get("lang")?, || "und".to_string());
    let preds = metrics::load_predictions(&args.predictions)?;
    let refs = load_references(&args.references)?;
    let report = evaluate(&pair_instances(preds, &refs)?, &language)?;

    let mut manifest = RunManifest::new("evaluate");
    manifest.inputs.insert("predictions".into(), hash_file(&args.predictions)?);
    manifest.inputs.insert("references".into(), hash_file(&args.references)?);

    let mut out = open_output(args.out.as_deref())?;
    serde_json::to_writer_pretty(
        &mut out,
        &ReportArtifact {
            manifest: &manifest,
            report: &report,
        },
    )
    .map_err(CliError::internal)?;
    out.write_all(b"\n").map_err(write_err)?;
    out.flush().map_err(write_err)
}

/// One scored ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: GridCell,
    pub report: EvalReport,
}

pub const ABLATION_HEADER: &str = "group\tk\tn\tinstances\tbleu1\tbleu4\trougeL\tciderD";

pub fn format_ablation_row(row: &AblationRow) -> String {
    let s = &row.report.scores;
    format!(
        "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        row.cell.group, row.cell.k, row.cell.n, row.report.instances, s.bleu1, s.bleu4, s.rouge_l, s.cider_d
    )
}

pub fn cmd_ablate(args: &AblateArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings = RunSettings::resolve(&args.run, None, None, file)?;
    let cells = parse_grid(&args.grid, settings.k, settings.n).map_err(CliError::input)?;
    let images = read_image_list(&args.images)?;
    let refs = load_references(&args.references)?;
    if let Some(img) = images.iter().find(|i| !refs.contains_key(&i.id)) {
        return Err(CliError::input(MetricError::MissingReferences(img.id.clone())));
    }
    let run = prepare_run(settings, EXTENDED_SHOTS_JSON)?;
    let mut manifest = RunManifest::for_run("ablate", &run.settings, &run.gateway.manifest().provider_id, &run.shots_bytes)?;
    manifest.inputs.insert("grid".into(), args.grid.clone());
    manifest.inputs.insert("images".into(), hash_file(&args.images)?);
    manifest.inputs.insert("references".into(), hash_file(&args.references)?);

    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut config = run.settings.pipeline_config(run.shots.clone());
        config.k = cell.k;
        config.n = cell.n;
        let engine = CaptionEngine::new(&config, &run.store, &run.gateway)?;
        let mut preds = Vec::with_capacity(images.len());
        let mut failures = Vec::new();
        for (img, r) in images.iter().zip(engine.caption_batch(&images)) {
            match r {
                Ok(res) => preds.push((res.image_id, res.chosen)),
                Err(e) => failures.push((img.id.clone(), e)),
            }
        }
        report_failures(None, failures)?;
        let report = evaluate(&pair_instances(preds, &refs)?, &run.settings.language)?;
        log::info!("cell {} k={} n={}: ciderD {:.4}", cell.group, cell.k, cell.n, report.scores.cider_d);
        rows.push(AblationRow { cell, report });
    }

    let mut out = open_output(args.out.as_deref())?;
    let manifest_json = serde_json::to_string(&manifest).map_err(CliError::internal)?;
    writeln!(out, "# manifest\t{manifest_json}").map_err(write_err)?;
    writeln!(out, "{ABLATION_HEADER}").map_err(write_err)?;
    for row in &rows {
        writeln!(out, "{}", format_ablation_row(row)).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}
