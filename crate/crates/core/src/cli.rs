//! Batch command-line front end.
//!
//! Exit codes: 0 success, 1 input error (bad flags, unreadable or malformed
//! files), 2 internal invariant violation. Data goes to `--out` or standard
//! output, diagnostics to standard error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{AugmentError, AugmentMode, Augmenter};
use crate::chem::{graph_signature, parse_molecule_list, MolecularGraph};
use crate::encoder::EncoderConfig;
use crate::kg::{load_sample_element_kg, load_triples, validate_element_kg, KnowledgeGraph};
use crate::kge::{evaluate_link_prediction, train_embeddings, EmbeddingTable, KgeCheckpoint, KgeConfig, KgeModel};
use crate::moiety::{detect_moieties, emit_fg_records, infer_moiety_relations, Moiety, MoietyRelation, PatternLibrary};
use crate::ssl::{linear_probe, pretrain, Models, PretrainContext, ProbeConfig, SslConfig, SslError};

/// Seed used when neither `--seed`, the config file nor `KGMOL_SEED` sets one.
pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "KGMOL_SEED";

#[derive(Debug, Parser)]
#[command(name = "kgmol", version, about = "Knowledge-graph augmentation and contrastive pretraining for molecules")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file; entries act like flags placed before the command-line ones.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for per-molecule work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a molecule list and print one graph per line.
    Parse(ParseArgs),
    /// Check a triple file against the element vocabulary.
    ValidateKg(ValidateArgs),
    /// Train KG embeddings and write a checkpoint.
    KgeTrain(KgeArgs),
    /// Rings, functional groups, chains and their relations.
    DetectMoieties(DetectArgs),
    /// Build augmented graphs.
    Augment(AugmentArgs),
    /// Contrastive pretraining.
    Pretrain(PretrainArgs),
    /// Frozen-encoder linear probe.
    Probe(ProbeArgs),
    /// Write one component of a model checkpoint as a parameter checkpoint.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[arg(long)]
    molecules: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KgeArgs {
    /// Triple file; the bundled sample KG when omitted.
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long, default_value = "rotate")]
    model: String,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 6.0)]
    margin: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    negatives: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MoietyFormat {
    Records,
    Json,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    molecules: PathBuf,
    /// Pattern library JSON; the bundled library when omitted.
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "records")]
    format: MoietyFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphFormat {
    Json,
    Dot,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: AugmentMode,
    #[arg(long)]
    molecules: PathBuf,
    /// Element KG; the bundled sample when omitted.
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// One property node per (triple, atom) instead of shared nodes.
    #[arg(long)]
    dup_properties: bool,
    /// Apply element and functional-group augmentation together.
    #[arg(long)]
    compose_augmentations: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: GraphFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    molecules: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "element-kg")]
    mode: AugmentMode,
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// KGE checkpoint for property and relation features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    dup_properties: bool,
    #[arg(long)]
    compose_augmentations: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    temperature: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    projection_dim: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Model checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Model checkpoint written by `pretrain`.
    #[arg(long)]
    model: PathBuf,
    /// Labeled molecule list (smiles, id, label).
    #[arg(long)]
    molecules: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Component {
    Plain,
    Kmpnn,
    Head,
    All,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    component: Component,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<AugmentMode, String> {
    AugmentMode::from_name(s).ok_or_else(|| format!("unknown mode `{s}` (expected element-kg or fg-kg)"))
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn from_ssl(e: SslError) -> CliError {
    match e {
        SslError::Nn(_) | SslError::ZeroNorm => internal(e),
        _ => input(e),
    }
}

fn from_augment(e: AugmentError) -> CliError {
    input(e)
}

type Result<T> = std::result::Result<T, CliError>;

/// Run the command line; returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            e.code()
        }
    }
}

fn message(e: &CliError) -> &str {
    match e {
        CliError::Input(m) | CliError::Internal(m) => m,
    }
}

/// Splice `--config` entries in right after the subcommand name so explicit
/// flags, which come later, win.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            path = Some(it.next().ok_or_else(|| input("--config needs a path"))?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| input(format!("{}: {e}", Path::new(&path).display())))?;
    let extra = config_args(&text)?;
    let names = [
        "parse",
        "validate-kg",
        "kge-train",
        "detect-moieties",
        "augment",
        "pretrain",
        "probe",
        "export",
    ];
    let Some(pos) = rest.iter().position(|a| names.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(rest);
    };
    let tail = rest.split_off(pos + 1);
    rest.extend(extra);
    rest.extend(tail);
    Ok(rest)
}

fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| input(format!("config line {}: expected key=value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        let val = v.trim().trim_matches('"');
        match val {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(val.into());
            }
        }
    }
    Ok(out)
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| input(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_out(out: &Option<PathBuf>, data: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, data).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(data.as_bytes()).map_err(internal)
        }
    }
}

fn molecules(path: &Path) -> Result<Vec<(MolecularGraph, Option<String>)>> {
    parse_molecule_list(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn knowledge_graph(path: &Option<PathBuf>) -> Result<KnowledgeGraph> {
    match path {
        Some(p) => load_triples(read(p)?.as_bytes()).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => Ok(load_sample_element_kg()),
    }
}

fn library(path: &Option<PathBuf>) -> Result<PatternLibrary> {
    match path {
        Some(p) => PatternLibrary::from_json(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => Ok(PatternLibrary::default_library()),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(internal)
}

/// Order-preserving parallel map.
fn par_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    pool(jobs)?.install(|| items.par_iter().map(&f).collect())
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(internal)
}

fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Parse(a) => cmd_parse(a, jobs),
        Command::ValidateKg(a) => cmd_validate(a),
        Command::KgeTrain(a) => cmd_kge(a),
        Command::DetectMoieties(a) => cmd_detect(a, jobs),
        Command::Augment(a) => cmd_augment(a, jobs),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Export(a) => cmd_export(a),
    }
}

#[derive(Serialize)]
struct ParsedMolecule<'a> {
    signature: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    graph: &'a MolecularGraph,
}

fn cmd_parse(a: ParseArgs, jobs: usize) -> Result<()> {
    let mols = molecules(&a.molecules)?;
    let lines = par_map(jobs, &mols, |(g, l)| {
        json_line(&ParsedMolecule {
            signature: graph_signature(g),
            label: l.as_deref(),
            graph: g,
        })
    })?;
    write_out(&a.out, &lines.iter().map(|l| format!("{l}\n")).collect::<String>())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let kg = knowledge_graph(&Some(a.triples))?;
    let report = validate_element_kg(&kg);
    write_out(&a.out, &format!("{}\n", json_line(&report)?))?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(input(format!("{} finding(s) in the knowledge graph", report.findings.len())))
    }
}

fn cmd_kge(a: KgeArgs) -> Result<()> {
    let kg = knowledge_graph(&a.triples)?;
    let model = KgeModel::from_name(&a.model).ok_or_else(|| input(format!("unknown model `{}`", a.model)))?;
    let cfg = KgeConfig {
        model,
        dim: a.dim,
        margin: a.margin,
        learning_rate: a.lr,
        negatives_per_positive: a.negatives,
        steps: a.steps,
        seed: resolve_seed(a.seed)?,
    };
    let table = train_embeddings(&kg, &cfg).map_err(input)?;
    if !table.is_finite() {
        return Err(internal("embeddings became non-finite"));
    }
    if let Ok(m) = evaluate_link_prediction(&kg, &table, model) {
        eprintln!(
            "train-set filtered MRR {:.4}, Hits@1 {:.4}, Hits@10 {:.4}",
            m.mrr, m.hits_at_1, m.hits_at_10
        );
    }
    write_out(&a.out, &format!("{}\n", json_line(&table.to_checkpoint())?))
}

#[derive(Serialize)]
struct MoietyReport<'a> {
    id: &'a str,
    moieties: Vec<Moiety>,
    relations: Vec<MoietyRelation>,
}

fn cmd_detect(a: DetectArgs, jobs: usize) -> Result<()> {
    let mols = molecules(&a.molecules)?;
    let lib = library(&a.patterns)?;
    let format = a.format;
    let chunks = par_map(jobs, &mols, |(g, _)| {
        let ms = detect_moieties(g, &lib).map_err(input)?;
        let rs = infer_moiety_relations(g, &ms).map_err(internal)?;
        Ok(match format {
            MoietyFormat::Records => emit_fg_records(&g.id, &ms, &rs)
                .iter()
                .map(|r| format!("{r}\n"))
                .collect(),
            MoietyFormat::Json => format!(
                "{}\n",
                json_line(&MoietyReport {
                    id: &g.id,
                    moieties: ms,
                    relations: rs
                })?
            ),
        })
    })?;
    write_out(&a.out, &chunks.concat())
}

fn cmd_augment(a: AugmentArgs, jobs: usize) -> Result<()> {
    let mols = molecules(&a.molecules)?;
    let mut aug = Augmenter::new(a.mode, knowledge_graph(&a.triples)?, library(&a.patterns)?);
    aug.dup_properties = a.dup_properties;
    aug.compose = a.compose_augmentations;
    let format = a.format;
    let chunks = par_map(jobs, &mols, |(g, _)| {
        let hg = aug.augment(g).map_err(from_augment)?;
        if hg.restrict_to_molecule().map_err(internal)? != *g {
            return Err(internal(format!("{}: augmentation altered the molecular graph", g.id)));
        }
        Ok(match format {
            GraphFormat::Json => format!("{}\n", hg.to_json()),
            GraphFormat::Dot => hg.to_dot(),
        })
    })?;
    write_out(&a.out, &chunks.concat())
}

fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let ck: KgeCheckpoint =
        serde_json::from_str(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
    EmbeddingTable::from_checkpoint(ck).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let mols: Vec<MolecularGraph> = molecules(&a.molecules)?.into_iter().map(|(g, _)| g).collect();
    let mut aug = Augmenter::new(a.mode, knowledge_graph(&a.triples)?, library(&a.patterns)?);
    aug.dup_properties = a.dup_properties;
    aug.compose = a.compose_augmentations;
    let embeddings = a.embeddings.as_deref().map(load_embeddings).transpose()?;
    let ctx = PretrainContext {
        augmenter: aug,
        embeddings,
    };
    let cfg = SslConfig {
        temperature: a.temperature,
        batch_size: a.batch_size,
        projection_dim: a.projection_dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: resolve_seed(a.seed)?,
        mode: a.mode,
        compose: a.compose_augmentations,
        dup_properties: a.dup_properties,
        encoder: EncoderConfig {
            hidden: a.hidden,
            layers: a.layers,
        },
    };
    let (models, log) = pretrain(&mols, &ctx, &cfg).map_err(from_ssl)?;
    fs::write(&a.out, models.to_json() + "\n").map_err(|e| input(format!("{}: {e}", a.out.display())))?;
    if let Some(p) = &a.log {
        fs::write(p, log.to_csv()).map_err(|e| input(format!("{}: {e}", p.display())))?;
    }
    if let (Some(f), Some(l)) = (log.epochs.first(), log.epochs.last()) {
        eprintln!("epoch {} loss {:.4} -> epoch {} loss {:.4}", f.epoch, f.mean_loss, l.epoch, l.mean_loss);
    }
    Ok(())
}

fn load_models(path: &Path) -> Result<Models> {
    Models::from_json(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let models = load_models(&a.model)?;
    let mut data = Vec::new();
    for (g, l) in molecules(&a.molecules)? {
        let l = l.ok_or_else(|| input(format!("molecule `{}` has no label", g.id)))?;
        data.push((g, l));
    }
    let cfg = ProbeConfig {
        seed: resolve_seed(a.seed)?,
        ..ProbeConfig::default()
    };
    let m = linear_probe(&models, &data, &cfg).map_err(from_ssl)?;
    if m.checksum_before != m.checksum_after {
        return Err(internal("encoder parameters changed during probing"));
    }
    write_out(&a.out, &format!("{}\n", json_line(&m)?))
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let models = load_models(&a.model)?;
    let store = match a.component {
        Component::All => models.params.values_only(),
        Component::Plain => models.params.subset("plain"),
        Component::Kmpnn => models.params.subset("kmpnn"),
        Component::Head => models.params.subset("head"),
    };
    write_out(&a.out, &format!("{}\n", json_line(&store.to_checkpoint())?))
}
