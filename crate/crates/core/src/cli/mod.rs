//! The `ebisg` command-line tool.
//!
//! Exit status is 0 on success, 1 for data errors (bad files, failed
//! training) and 2 for usage errors (bad or missing flags, bad config).

mod manifest;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

pub use manifest::{digest_file, FileDigest, RunManifest, MANIFEST_FILE};

use crate::embedding::{load_embedding_store, write_embedding_store, EmbeddingProvider, EmbeddingStore, NgramConfig};
use crate::error::Error;
use crate::eval::{method_comparison, write_report_bundle, DecileMode, EvalOptions, GroupRule, Stratum};
use crate::normalize::normalize_name;
use crate::posterior::{batch_predict, Method, PriorModels, ReferenceTables, Scope};
use crate::prior_model::{
    hyperparameter_search, load_weights, save_weights, table_examples, train, voter_examples, ModelMeta,
    ModelVariant, PriorModel, SearchSpace, TrainingConfig,
};
use crate::synth::{derive_seed, generate_population, GeneratorConfig};
use crate::tables::{
    coverage_report, load_geo_table, load_income_table, load_name_table_with, load_truth, load_voters, write_voters,
    NameKind, NameTable, VoterRecord, DEFAULT_MIN_COUNT,
};

const CONFIG_HELP: &str = "\
Configuration file (--config): plain text, one `key = value` per line. Keys
are long flag names without the leading dashes (`seed = 7`, `min-count =
100`); `#` starts a comment. Boolean flags take `true` or `false`, list
flags take comma-separated values. Precedence: command-line flags, then the
config file, then built-in defaults.";

#[derive(Parser, Debug, Serialize)]
#[command(name = "ebisg", version, about = "Race prediction from names and geography", after_help = CONFIG_HELP)]
struct Cli {
    /// Master seed; every random step derives its seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Validate reference tables and voter files and summarize coverage.
    Ingest(IngestArgs),
    /// Generate a synthetic population with known distributions.
    GenSynth(GenSynthArgs),
    /// Build an embedding store for a set of names.
    Embed(EmbedArgs),
    /// Train a name-prior network.
    Train(TrainArgs),
    /// Compute posteriors for a voter file.
    Predict(PredictArgs),
    /// Compare methods against true races.
    Evaluate(EvaluateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::GenSynth(_) => "gen-synth",
            Command::Embed(_) => "embed",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    surnames: Option<PathBuf>,
    #[arg(long)]
    firstnames: Option<PathBuf>,
    #[arg(long)]
    geo: Option<PathBuf>,
    #[arg(long)]
    income: Option<PathBuf>,
    #[arg(long)]
    voters: Option<PathBuf>,
    /// Smallest name count accepted in name tables.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
}

#[derive(Args, Debug, Serialize)]
struct GenSynthArgs {
    /// Voters in the evaluation population.
    #[arg(long, default_value_t = 20_000)]
    voters: usize,
    /// Additional labelled voters for full-name training (written to
    /// voters_train.csv when nonzero).
    #[arg(long, default_value_t = 0)]
    train_voters: usize,
    #[arg(long, default_value_t = 150)]
    units: usize,
    /// Coupling of first and last names within race, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    interaction: f64,
    /// Pick the census threshold that leaves this share of voters with an
    /// unlisted surname.
    #[arg(long, conflicts_with = "threshold")]
    unmatched_share: Option<f64>,
    /// Census count below which names are left out of the tables.
    #[arg(long)]
    threshold: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct EmbedArgs {
    /// Plain name lists, one name per line.
    #[arg(long, value_delimiter = ',')]
    names: Vec<PathBuf>,
    /// Name-table CSVs whose names are embedded.
    #[arg(long, value_delimiter = ',')]
    tables: Vec<PathBuf>,
    /// Voter files whose surnames and first names are embedded.
    #[arg(long, value_delimiter = ',')]
    voters: Vec<PathBuf>,
    /// Also embed voters' full names.
    #[arg(long, action = ArgAction::SetTrue)]
    full_names: bool,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    /// Hash seed of the n-gram featurizer (defaults to --seed).
    #[arg(long)]
    ngram_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct EmbeddingArgs {
    /// Embedding store; names missing from it fall back to the n-gram
    /// featurizer its provenance describes.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    variant: String,
    /// Name table to train on (surname and firstname variants).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Labelled voter file (fullname variant).
    #[arg(long)]
    voters: Option<PathBuf>,
    /// `id,true_race` labels for --voters.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// N-gram dimension when no store is given.
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long)]
    ngram_seed: Option<u64>,
    /// Hidden widths, e.g. `1024,1024` (defaults to the variant's
    /// reference architecture).
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Random-search trials; 0 trains the given architecture once.
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
}

#[derive(Args, Debug, Serialize)]
struct ReferenceArgs {
    #[arg(long)]
    surnames: Option<PathBuf>,
    #[arg(long)]
    firstnames: Option<PathBuf>,
    #[arg(long)]
    geo: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Surname prior weights.
    #[arg(long)]
    surname_weights: Option<PathBuf>,
    /// First-name prior weights.
    #[arg(long)]
    firstname_weights: Option<PathBuf>,
    /// Full-name prior weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    /// bisg, bifsg, surname-embed, surname-first-embed or fullname-embed.
    #[arg(long)]
    method: String,
    /// For fullname-embed: `unmatched-only` (default) or `all`.
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    voters: Option<PathBuf>,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Methods to compare (defaults to every method the given models allow).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    voters: Option<PathBuf>,
    /// `id,true_race` labels; without it the voter file's race column is used.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    income: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["all".to_string(), "matched".into(), "unmatched".into()])]
    strata: Vec<String>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 20)]
    min_group: usize,
    /// `relevant-race` or `all-voters`.
    #[arg(long, default_value = "relevant-race")]
    group_rule: String,
    /// `tracts` or `voters`.
    #[arg(long, default_value = "tracts")]
    decile_mode: String,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, why: &str) -> CliResult<&'a PathBuf> {
    v.as_ref().ok_or_else(|| {
        let sep = if why.is_empty() { "" } else { " " };
        CliError::Usage(format!("{flag} is required{sep}{why}"))
    })
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 2;
        }
        // Fails only if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli, args) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, args: Vec<String>) -> CliResult<()> {
    let config = serde_json::to_value(&cli.command).unwrap_or_default();
    let mut m = RunManifest::new(cli.command.name(), args, config, cli.seed);
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, a, &mut m)?,
        Command::GenSynth(a) => cmd_gen_synth(cli, a, &mut m)?,
        Command::Embed(a) => cmd_embed(cli, a, &mut m)?,
        Command::Train(a) => cmd_train(cli, a, &mut m)?,
        Command::Predict(a) => cmd_predict(cli, a, &mut m)?,
        Command::Evaluate(a) => cmd_evaluate(cli, a, &mut m)?,
    }
    let m = m.finish(&cli.out)?;
    println!("manifest {} digest {}", cli.out.join(MANIFEST_FILE).display(), m.digest);
    Ok(())
}

/// Appends flags from the `--config` file for every key not given on the
/// command line.
fn apply_config(mut argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;

    let cmd = Cli::command();
    let sub = strs
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a.as_str()));
    let mut known: Vec<(String, bool)> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long().map(|l| (l.to_string(), matches!(a.get_action(), ArgAction::SetTrue))))
        .collect();
    if let Some(sub) = sub {
        known.extend(
            sub.get_arguments()
                .filter_map(|a| a.get_long().map(|l| (l.to_string(), matches!(a.get_action(), ArgAction::SetTrue)))),
        );
    }
    let given: BTreeSet<&str> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();

    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{path}:{}: expected `key = value`", n + 1));
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "config" {
            return Err(format!("{path}:{}: a config file cannot name another config file", n + 1));
        }
        let Some((_, is_flag)) = known.iter().find(|(k, _)| k == key) else {
            let scope = sub.map(|s| s.get_name().to_string()).unwrap_or_else(|| "global options".into());
            return Err(format!("{path}:{}: unknown key `{key}` for {scope}", n + 1));
        };
        if given.contains(key) {
            continue;
        }
        if *is_flag {
            match value {
                "true" => argv.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(format!("{path}:{}: `{key}` takes true or false", n + 1)),
            }
        } else {
            argv.push(format!("--{key}").into());
            argv.push(value.into());
        }
    }
    Ok(argv)
}

/// Creates the output directory; commands call it once their flags are
/// validated so usage errors leave nothing behind.
fn prepare_out(cli: &Cli) -> CliResult<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Data(Error::io(&cli.out, e)))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| {
        CliError::Data(Error::Format {
            what: "json",
            message: e.to_string(),
        })
    })?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(Error::io(path, e)))
}

fn load_names(path: &Path, kind: NameKind, min_count: u64, m: &mut RunManifest) -> CliResult<NameTable> {
    m.input(path)?;
    Ok(load_name_table_with(path, kind, min_count)?)
}

fn cmd_ingest(cli: &Cli, a: &IngestArgs, m: &mut RunManifest) -> CliResult<()> {
    if a.surnames.is_none() && a.firstnames.is_none() && a.geo.is_none() && a.income.is_none() && a.voters.is_none() {
        return usage("ingest needs at least one of --surnames, --firstnames, --geo, --income, --voters");
    }
    let mut summary = serde_json::Map::new();
    prepare_out(cli)?;
    let surnames = match &a.surnames {
        Some(p) => Some(load_names(p, NameKind::Surname, a.min_count, m)?),
        None => None,
    };
    let firstnames = match &a.firstnames {
        Some(p) => Some(load_names(p, NameKind::Firstname, a.min_count, m)?),
        None => None,
    };
    for (key, t) in [("surnames", &surnames), ("firstnames", &firstnames)] {
        if let Some(t) = t {
            println!("{key}: {} names covering {} persons", t.len(), t.covered_population());
            summary.insert(key.into(), serde_json::json!({"names": t.len(), "persons": t.covered_population()}));
        }
    }
    if let Some(p) = &a.geo {
        m.input(p)?;
        let g = load_geo_table(p)?;
        println!("geo: {} units ({} empty units dropped)", g.len(), g.dropped_empty().len());
        summary.insert(
            "geo".into(),
            serde_json::json!({"units": g.len(), "dropped_empty": g.dropped_empty(), "marginal": g.marginal()}),
        );
    }
    if let Some(p) = &a.income {
        m.input(p)?;
        let inc = load_income_table(p)?;
        println!("income: {} units", inc.len());
        summary.insert("income".into(), serde_json::json!({"units": inc.len()}));
    }
    if let Some(p) = &a.voters {
        m.input(p)?;
        let voters = load_voters(p)?;
        println!("voters: {}", voters.len());
        summary.insert("voters".into(), serde_json::json!(voters.len()));
        if let (Some(s), Some(f)) = (&surnames, &firstnames) {
            let cov = coverage_report(s, f, &voters)?;
            println!(
                "surname unmatched: {:.2}% of voters",
                cov.group_share(false)
            );
            let path = cli.out.join("coverage.csv");
            cov.write_csv(&path)?;
            m.output(&path)?;
            summary.insert("coverage".into(), serde_json::to_value(&cov).unwrap_or_default());
        }
    }
    let path = cli.out.join("summary.json");
    write_json(&path, &summary)?;
    m.output(&path)?;
    Ok(())
}

fn cmd_gen_synth(cli: &Cli, a: &GenSynthArgs, m: &mut RunManifest) -> CliResult<()> {
    if a.voters == 0 {
        return usage("--voters must be at least 1");
    }
    let mut cfg = GeneratorConfig::standard(cli.seed, a.units)?;
    cfg.interaction_strength = a.interaction;
    if let Some(t) = a.threshold {
        cfg.census_threshold = t;
    }
    if let Some(share) = a.unmatched_share {
        if !(0.0..=1.0).contains(&share) {
            return usage(format!("--unmatched-share must be in [0, 1], got {share}"));
        }
        cfg = cfg.with_unmatched_share(share)?;
    }
    cfg.validate()?;
    prepare_out(cli)?;
    m.seed("voters", derive_seed(cli.seed, "voters"));
    let pop = generate_population(&cfg, a.voters)?;
    let mut written = pop.write(&cli.out)?;
    if a.train_voters > 0 {
        let seed = derive_seed(cli.seed, "train-voters");
        m.seed("train-voters", seed);
        let train = pop.truth.sample_voters(a.train_voters, seed, "t")?;
        let path = cli.out.join("voters_train.csv");
        write_voters(&path, &train)?;
        written.push(path);
    }
    let path = cli.out.join("generator_config.json");
    write_json(&path, &cfg)?;
    written.push(path);
    for p in &written {
        m.output(p)?;
    }
    let unmatched = pop.voters.iter().filter(|v| !pop.surnames.contains(&v.last)).count();
    println!(
        "generated {} voters in {} units; {} surnames and {} first names listed (threshold {}); {:.2}% surname-unmatched",
        pop.voters.len(),
        pop.geo.len(),
        pop.surnames.len(),
        pop.firstnames.len(),
        cfg.census_threshold,
        100.0 * unmatched as f64 / pop.voters.len() as f64
    );
    Ok(())
}

fn cmd_embed(cli: &Cli, a: &EmbedArgs, m: &mut RunManifest) -> CliResult<()> {
    if a.names.is_empty() && a.tables.is_empty() && a.voters.is_empty() {
        return usage("embed needs at least one of --names, --tables, --voters");
    }
    let ngram = NgramConfig::new(a.dim, a.ngram_seed.unwrap_or(cli.seed))?;
    prepare_out(cli)?;
    let mut names = BTreeSet::new();
    for p in &a.names {
        m.input(p)?;
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(Error::io(p, e)))?;
        names.extend(text.lines().map(normalize_name).filter(|n| !n.is_empty()));
    }
    for p in &a.tables {
        let t = load_names(p, NameKind::Surname, 0, m)?;
        names.extend(t.iter().map(|(n, _)| n.to_string()));
    }
    for p in &a.voters {
        m.input(p)?;
        for v in load_voters(p)? {
            let mut parts = vec![normalize_name(&v.last), normalize_name(&v.first)];
            if a.full_names {
                parts.push(normalize_name(&v.full_name()));
            }
            names.extend(parts.into_iter().filter(|n| !n.is_empty()));
        }
    }
    if names.is_empty() {
        return Err(CliError::Data(Error::Empty("no names to embed".into())));
    }
    let mut store = EmbeddingStore::new(ngram.dim, ngram.provenance())?;
    for n in &names {
        store.insert_vector(n, &ngram.embed(n))?;
    }
    let path = cli.out.join("embeddings.ebed");
    write_embedding_store(&store, &path)?;
    m.output(&path)?;
    println!("embedded {} names ({})", store.len(), store.provenance());
    Ok(())
}

/// Provider for a store file, with the n-gram featurizer its provenance
/// names as fallback.
fn store_provider(path: &Path, m: &mut RunManifest) -> CliResult<EmbeddingProvider> {
    m.input(path)?;
    let store = load_embedding_store(path)?;
    let fallback = NgramConfig::from_provenance(store.provenance());
    Ok(EmbeddingProvider::Store {
        store: Arc::new(store),
        fallback,
    })
}

fn cmd_train(cli: &Cli, a: &TrainArgs, m: &mut RunManifest) -> CliResult<()> {
    let variant: ModelVariant = a
        .variant
        .parse()
        .map_err(|e: Error| CliError::Usage(format!("--variant: {e}")))?;
    let provider = match &a.embedding.embeddings {
        Some(p) => store_provider(p, m)?,
        None => EmbeddingProvider::Ngram(NgramConfig::new(a.dim, a.ngram_seed.unwrap_or(cli.seed))?),
    };
    let kind = match variant {
        ModelVariant::Surname => Some(NameKind::Surname),
        ModelVariant::Firstname => Some(NameKind::Firstname),
        ModelVariant::Fullname => None,
    };
    let data = match kind {
        Some(kind) => {
            let path = required(&a.table, "--table", &format!("for variant {}", variant.label()))?;
            let table = load_names(path, kind, a.min_count, m)?;
            table_examples(&table, &provider)?
        }
        None => {
            let path = required(&a.voters, "--voters", "for variant fullname")?;
            m.input(path)?;
            let voters = labelled_voters(path, a.truth.as_deref(), m)?;
            voter_examples(&voters, &provider)?
        }
    };

    let mut arch = variant.reference_architecture(provider.dim());
    if !a.hidden.is_empty() {
        arch.hidden = a.hidden.clone();
    }
    if let Some(d) = a.dropout {
        arch.dropout = d;
    }
    arch.validate()?;
    let seed = derive_seed(cli.seed, &format!("train-{}", variant.label()));
    m.seed("train", seed);
    let cfg = TrainingConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        validation_fraction: a.validation_fraction,
        patience: a.patience,
        seed,
        split_seed: Some(seed),
        ..Default::default()
    };
    cfg.validate()?;
    let mut meta = ModelMeta::new(provider.provenance(), seed);
    prepare_out(cli)?;
    meta.variant = Some(variant);

    let path = cli.out.join(format!("{}.emlp", variant.label()));
    if a.trials == 0 {
        let (weights, report) = train(&data, &arch, &cfg, meta)?;
        save_weights(&weights, &path)?;
        let rp = cli.out.join(format!("{}_report.json", variant.label()));
        write_json(&rp, &serde_json::json!({"architecture": arch, "config": cfg, "report": report}))?;
        m.output(&path)?;
        m.output(&rp)?;
        println!(
            "trained {} on {} examples: validation loss {:.4} (best epoch {})",
            variant.label(),
            data.len(),
            report.final_validation_loss,
            report.best_epoch
        );
    } else {
        let search_seed = derive_seed(cli.seed, "search");
        m.seed("search", search_seed);
        let out = hyperparameter_search(&data, &SearchSpace::default(), &cfg, a.trials, search_seed, meta)?;
        save_weights(&out.weights, &path)?;
        let lp = cli.out.join(format!("{}_leaderboard.json", variant.label()));
        write_json(&lp, &out.leaderboard)?;
        m.output(&path)?;
        m.output(&lp)?;
        println!(
            "searched {} trials for {}: best hidden {:?} dropout {:.3} lr {:.2e} batch {} loss {:.4}",
            a.trials,
            variant.label(),
            out.architecture.hidden,
            out.architecture.dropout,
            out.config.learning_rate,
            out.config.batch_size,
            out.leaderboard[0].validation_loss.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

/// Voters with races from `truth`, or from the file's race column.
fn labelled_voters(path: &Path, truth: Option<&Path>, m: &mut RunManifest) -> CliResult<Vec<VoterRecord>> {
    let mut voters = load_voters(path)?;
    if let Some(t) = truth {
        m.input(t)?;
        let labels = load_truth(t)?;
        for v in &mut voters {
            v.race = labels.get(&v.id).copied().or(v.race);
        }
    }
    if let Some(v) = voters.iter().find(|v| v.race.is_none()) {
        return Err(CliError::Data(Error::InvalidValue(format!(
            "{}: voter {:?} has no race label",
            path.display(),
            v.id
        ))));
    }
    Ok(voters)
}

fn parse_method(name: &str, scope: Option<&str>) -> CliResult<Method> {
    let method: Method = name.parse().map_err(|e: Error| CliError::Usage(format!("--method: {e}")))?;
    match (method, scope) {
        (m, None) => Ok(m),
        (Method::FullNameEmbed(_), Some("unmatched-only")) => Ok(Method::FullNameEmbed(Scope::UnmatchedOnly)),
        (Method::FullNameEmbed(_), Some("all")) => Ok(Method::FullNameEmbed(Scope::All)),
        (Method::FullNameEmbed(_), Some(s)) => usage(format!("--scope must be unmatched-only or all, got {s:?}")),
        (m, Some(_)) => usage(format!("--scope applies only to fullname-embed, not {m}")),
    }
}

/// Checks that the flags `method` needs were given.
fn check_method_flags(method: Method, r: &ReferenceArgs, models: &ModelArgs) -> CliResult<()> {
    let why = format!("for method {method}");
    if method.needs_firstnames() {
        required(&r.firstnames, "--firstnames", &why)?;
    }
    match method {
        Method::SurnameEmbed => {
            required(&models.surname_weights, "--surname-weights", &why)?;
        }
        Method::SurnameFirstEmbed => {
            required(&models.surname_weights, "--surname-weights", &why)?;
            required(&models.firstname_weights, "--firstname-weights", &why)?;
        }
        Method::FullNameEmbed(_) => {
            required(&models.weights, "--weights", &why)?;
        }
        Method::Bisg | Method::Bifsg => {}
    }
    Ok(())
}

fn load_reference(r: &ReferenceArgs, m: &mut RunManifest) -> CliResult<ReferenceTables> {
    let surnames = load_names(required(&r.surnames, "--surnames", "")?, NameKind::Surname, r.min_count, m)?;
    let firstnames = match &r.firstnames {
        Some(p) => Some(load_names(p, NameKind::Firstname, r.min_count, m)?),
        None => None,
    };
    let geo_path = required(&r.geo, "--geo", "")?;
    m.input(geo_path)?;
    Ok(ReferenceTables {
        surnames,
        firstnames,
        geo: load_geo_table(geo_path)?,
    })
}

fn load_models(a: &ModelArgs, m: &mut RunManifest) -> CliResult<PriorModels> {
    let store = match &a.embedding.embeddings {
        Some(p) => Some(store_provider(p, m)?),
        None => None,
    };
    let mut load = |path: &Option<PathBuf>| -> CliResult<Option<PriorModel>> {
        let Some(path) = path else { return Ok(None) };
        m.input(path)?;
        let weights = load_weights(path)?;
        let prov = weights.meta.provenance.clone();
        let provider = match &store {
            Some(s) if s.provenance() == prov => s.clone(),
            _ => match NgramConfig::from_provenance(&prov) {
                Some(c) => EmbeddingProvider::Ngram(c),
                None => {
                    return Err(CliError::Data(Error::ProvenanceMismatch {
                        expected: prov,
                        found: store.as_ref().map(|s| s.provenance()).unwrap_or_else(|| "no --embeddings".into()),
                    }))
                }
            },
        };
        Ok(Some(PriorModel::new(weights, provider)?))
    };
    Ok(PriorModels {
        surname: load(&a.surname_weights)?,
        firstname: load(&a.firstname_weights)?,
        fullname: load(&a.weights)?,
    })
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, m: &mut RunManifest) -> CliResult<()> {
    let method = parse_method(&a.method, a.scope.as_deref())?;
    let voters_path = required(&a.voters, "--voters", "")?;
    required(&a.reference.surnames, "--surnames", "")?;
    required(&a.reference.geo, "--geo", "")?;
    check_method_flags(method, &a.reference, &a.models)?;
    prepare_out(cli)?;
    let tables = load_reference(&a.reference, m)?;
    let models = load_models(&a.models, m)?;
    m.input(voters_path)?;
    let voters = load_voters(voters_path)?;
    let set = batch_predict(&voters, method, &tables, &models)?;
    let path = cli.out.join(format!("predictions_{}.csv", method.label()));
    set.write_csv(&path)?;
    m.output(&path)?;
    if !set.failures.is_empty() {
        let fp = cli.out.join(format!("failures_{}.csv", method.label()));
        set.write_failures_csv(&fp)?;
        m.output(&fp)?;
    }
    println!(
        "{}: {} predictions, {} failures",
        method.label(),
        set.predictions.len(),
        set.failures.len()
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs, m: &mut RunManifest) -> CliResult<()> {
    let voters_path = required(&a.voters, "--voters", "")?;
    required(&a.reference.surnames, "--surnames", "")?;
    required(&a.reference.geo, "--geo", "")?;
    let methods: Vec<Method> = if a.methods.is_empty() {
        Method::STANDARD
            .into_iter()
            .filter(|&mth| check_method_flags(mth, &a.reference, &a.models).is_ok())
            .collect()
    } else {
        let ms = a
            .methods
            .iter()
            .map(|s| parse_method(s, None))
            .collect::<CliResult<Vec<_>>>()?;
        for &mth in &ms {
            check_method_flags(mth, &a.reference, &a.models)?;
        }
        ms
    };
    let strata = a
        .strata
        .iter()
        .map(|s| s.parse::<Stratum>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--strata: {e}")))?;
    let opts = EvalOptions {
        strata,
        bins: a.bins,
        min_group: a.min_group,
        group_rule: a
            .group_rule
            .parse::<GroupRule>()
            .map_err(|e| CliError::Usage(format!("--group-rule: {e}")))?,
        decile_mode: a
            .decile_mode
            .parse::<DecileMode>()
            .map_err(|e| CliError::Usage(format!("--decile-mode: {e}")))?,
    };
    if opts.bins < 2 {
        return usage("--bins must be at least 2");
    }

    prepare_out(cli)?;
    let tables = load_reference(&a.reference, m)?;
    let models = load_models(&a.models, m)?;
    m.input(voters_path)?;
    let voters = labelled_voters(voters_path, a.truth.as_deref(), m)?;
    let truth = voters.iter().filter_map(|v| v.race.map(|r| (v.id.clone(), r))).collect();
    let income = match &a.income {
        Some(p) => {
            m.input(p)?;
            Some(load_income_table(p)?)
        }
        None => None,
    };
    let cmp = method_comparison(&voters, &truth, &methods, &tables, &models, income.as_ref(), &opts)?;
    for path in write_report_bundle(&cmp, &cli.out)? {
        m.output(&path)?;
    }
    for set in &cmp.predictions {
        let path = cli.out.join(format!("predictions_{}.csv", set.method.label()));
        set.write_csv(&path)?;
        m.output(&path)?;
    }
    let summary: Vec<_> = cmp
        .methods
        .iter()
        .map(|r| {
            serde_json::json!({
                "method": r.method.label(),
                "predicted": r.predicted,
                "failures": r.failures,
                "strata": r.strata.iter().map(|s| serde_json::json!({
                    "stratum": s.stratum,
                    "n": s.n,
                    "mean_brier": s.mean_brier,
                    "brier": s.brier,
                    "empty_reason": s.empty_reason,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let path = cli.out.join("report.json");
    write_json(
        &path,
        &serde_json::json!({
            "options": opts,
            "methods": summary,
            "errors": cmp.errors.iter().map(|(mth, e)| serde_json::json!({"method": mth.label(), "error": e})).collect::<Vec<_>>(),
        }),
    )?;
    m.output(&path)?;
    for r in &cmp.methods {
        let line: Vec<String> = r
            .strata
            .iter()
            .map(|s| match s.mean_brier {
                Some(b) => format!("{} {:.4} (n={})", s.stratum, b, s.n),
                None => format!("{} - (n=0)", s.stratum),
            })
            .collect();
        println!("{:20} mean Brier: {}", r.method.label(), line.join(", "));
    }
    if let Some((mth, e)) = cmp.errors.first() {
        return Err(CliError::Data(Error::InvalidValue(format!("method {mth} failed: {e}"))));
    }
    Ok(())
}
