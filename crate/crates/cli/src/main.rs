//! Command-line front end: train, parse, eval, transduce, stats.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use s2g::amr::{penman_encode, read_corpus, write_corpus, AmrGraph, Record};
use s2g::config::Config;
use s2g::decode::parse_records;
use s2g::embed::{read_contextual, read_vectors};
use s2g::evalkit::{corpus_smatch, node_source_stats, TaggedNodes, DEFAULT_RESTARTS};
use s2g::model::{learn_entities, prepare_evaluation, prepare_training, Model};
use s2g::numeric::Tensor;
use s2g::par::Execution;
use s2g::prepost::orient_from_root;
use s2g::train::fit;
use s2g::transduce::{graph_to_tree, linearize, tree_from_penman, tree_to_graph, tree_to_penman, SourceKind, SourceTokens};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{}: {}", context, e))
}

#[derive(Parser)]
#[command(name = "s2g", version, about = "AMR parsing as sequence-to-graph transduction")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser and write a checkpoint.
    Train(TrainArgs),
    /// Parse sentences with a trained checkpoint.
    Parse(ParseArgs),
    /// Corpus Smatch of predicted against gold graphs.
    Eval(EvalArgs),
    /// Graph, indexed tree, and linearization conversions.
    Transduce(TransduceArgs),
    /// Node-source frequency, precision, and recall.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Pretrained word vectors, one `token v1 .. vD` per line.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Contextual subword vectors keyed by record id.
    #[arg(long)]
    contextual: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Beam size; defaults to the checkpoint's setting, 1 is greedy.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    contextual: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    /// Graph corpus to indexed trees.
    G2t,
    /// Indexed trees to graph corpus.
    T2g,
    /// Graph corpus to tab-separated node sequences.
    Linearize,
}

#[derive(Args)]
struct TransduceArgs {
    direction: Direction,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Node tags written next to the parse output.
    #[arg(long)]
    tags: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(data(path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(data(path.display()))
}

fn corpus(path: &Path) -> Result<Vec<Record>, CliError> {
    read_corpus(&read(path)?).map_err(data(path.display()))
}

fn graphs(path: &Path) -> Result<Vec<AmrGraph>, CliError> {
    corpus(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.graph.ok_or_else(|| CliError::Data(format!("{}: record {} has no graph", path.display(), i + 1))))
        .collect()
}

fn sidecar(output: &Path, ext: &str) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

fn show_config(config: &Config) {
    for line in config.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            eprintln!("config.{}={}", k, v);
        }
    }
}

fn show(pairs: &[(&str, String)]) {
    let line: Vec<String> = pairs.iter().map(|(k, v)| format!("{}={}", k, v)).collect();
    eprintln!("{}", line.join(" "));
}

fn contextual(path: Option<&Path>, config: &Config) -> Result<Option<HashMap<String, Tensor>>, CliError> {
    let Some(path) = path else { return Ok(None) };
    if config.bert_dim == 0 {
        return Err(CliError::Usage("--contextual needs bert.dim > 0 in the config".into()));
    }
    read_contextual(&read(path)?, config.bert_dim).map(Some).map_err(data(path.display()))
}

fn train(args: &TrainArgs, seed: Option<u64>, mode: Execution) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => Config::from_text(&read(p)?).map_err(data(p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    show_config(&config);
    let train = corpus(&args.corpus)?;
    let dev = corpus(&args.dev)?;
    let ctx = contextual(args.contextual.as_deref(), &config)?;
    let vectors = match &args.vectors {
        Some(p) => Some(read_vectors(&read(p)?, config.glove_dim).map_err(data(p.display()))?),
        None => None,
    };

    let prepared = prepare_training(&train, ctx.as_ref(), &config).map_err(data(args.corpus.display()))?;
    for (record, reason) in &prepared.skipped {
        show(&[("skipped", record.to_string()), ("reason", format!("{:?}", reason))]);
    }
    if prepared.examples.is_empty() {
        return Err(CliError::Data(format!("{}: no usable training pairs", args.corpus.display())));
    }
    let entities = learn_entities(&train);
    let dev = prepare_evaluation(&dev, &entities, ctx.as_ref(), &config).map_err(data(args.dev.display()))?;
    show(&[
        ("train_pairs", prepared.examples.len().to_string()),
        ("dev_pairs", dev.examples.len().to_string()),
        ("anonymization_overlaps", prepared.overlaps.to_string()),
    ]);
    let model = Model::new(config, &prepared.examples, vectors.as_ref(), entities).map_err(data("model"))?;
    let out = fit(model, &prepared.examples, &dev.examples, mode, &mut |m| {
        show(&[
            ("epoch", m.epoch.to_string()),
            ("loss", format!("{:.6}", m.loss)),
            ("node", format!("{:.6}", m.node)),
            ("head", format!("{:.6}", m.head)),
            ("label", format!("{:.6}", m.label)),
            ("coverage", format!("{:.6}", m.coverage)),
            ("clamps", m.clamps.to_string()),
            ("grad_norm", format!("{:.4}", m.grad_norm)),
            ("dev_smatch", m.dev_smatch.map_or("na".into(), |s| format!("{:.4}", s))),
        ]);
    })
    .map_err(data("training"))?;

    let file = fs::File::create(&args.out).map_err(data(args.out.display()))?;
    let mut w = BufWriter::new(file);
    out.model.save(&mut w).map_err(data(args.out.display()))?;
    w.flush().map_err(data(args.out.display()))?;
    println!(
        "epochs={} best_epoch={} dev_smatch={}",
        out.epochs.len(),
        out.best_epoch,
        out.best_smatch.map_or("na".into(), |s| format!("{:.4}", s))
    );
    Ok(())
}

fn parse(args: &ParseArgs, mode: Execution) -> Result<(), CliError> {
    let file = fs::File::open(&args.model).map_err(data(args.model.display()))?;
    let model = Model::load(&mut BufReader::new(file)).map_err(data(args.model.display()))?;
    show_config(&model.config);
    let beam = args.beam.unwrap_or(model.config.beam_size);
    if beam == 0 {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    let ctx = contextual(args.contextual.as_deref(), &model.config)?;
    let records = corpus(&args.input)?;
    let parsed = parse_records(&model, &records, ctx.as_ref(), beam, mode).map_err(data(args.input.display()))?;

    let mut out = Vec::with_capacity(records.len());
    let mut tags = String::new();
    let mut anon = String::new();
    let mut fallbacks = 0;
    for (r, (sentence, p)) in records.iter().zip(&parsed) {
        fallbacks += usize::from(p.fallback);
        out.push(Record { graph: Some(p.graph.clone()), ..r.clone() });
        if let Some(pred) = &p.prediction {
            for (c, s) in pred.concepts.iter().zip(&pred.sources) {
                let _ = writeln!(tags, "{}\t{}", c, s.kind().name());
            }
        }
        tags.push('\n');
        let _ = writeln!(anon, "# ::id {}", r.id.as_deref().unwrap_or(""));
        anon.push_str(&sentence.map.to_sidecar());
        anon.push('\n');
    }
    write(&args.output, &write_corpus(&out).map_err(data("output"))?)?;
    write(&sidecar(&args.output, "tags"), &tags)?;
    write(&sidecar(&args.output, "anon"), &anon)?;
    show(&[("sentences", records.len().to_string()), ("fallbacks", fallbacks.to_string()), ("beam", beam.to_string())]);
    Ok(())
}

fn eval(args: &EvalArgs, seed: u64, mode: Execution) -> Result<(), CliError> {
    let gold = graphs(&args.gold)?;
    let pred = graphs(&args.pred)?;
    if gold.len() != pred.len() {
        return Err(CliError::Data(format!(
            "{} has {} graphs but {} has {}",
            args.gold.display(),
            gold.len(),
            args.pred.display(),
            pred.len()
        )));
    }
    let c = corpus_smatch(&pred, &gold, DEFAULT_RESTARTS, seed, mode);
    println!("P {:.4} R {:.4} F1 {:.4}", c.precision(), c.recall(), c.f1());
    Ok(())
}

fn block_text(lines: &[&str]) -> (String, String) {
    let (meta, body): (Vec<&str>, Vec<&str>) = lines.iter().partition(|l| l.trim_start().starts_with('#'));
    (meta.join("\n"), body.join("\n"))
}

fn transduce(args: &TransduceArgs) -> Result<(), CliError> {
    let mut out = String::new();
    match args.direction {
        Direction::G2t => {
            for (i, r) in corpus(&args.input)?.iter().enumerate() {
                let g = r.graph.as_ref().ok_or_else(|| CliError::Data(format!("record {} has no graph", i + 1)))?;
                let tree = graph_to_tree(&orient_from_root(g)).map_err(data(format!("record {}", i + 1)))?;
                if let Some(id) = &r.id {
                    let _ = writeln!(out, "# ::id {}", id);
                }
                let _ = writeln!(out, "{}\n", tree_to_penman(&tree));
            }
        }
        Direction::T2g => {
            let text = read(&args.input)?;
            let lines: Vec<&str> = text.lines().collect();
            for (i, block) in lines.split(|l| l.trim().is_empty()).filter(|b| !b.is_empty()).enumerate() {
                let (meta, body) = block_text(block);
                let context = format!("record {}", i + 1);
                let tree = tree_from_penman(&body).map_err(data(&context))?;
                let g = tree_to_graph(&tree).map_err(data(&context))?;
                if !meta.is_empty() {
                    let _ = writeln!(out, "{}", meta);
                }
                let _ = writeln!(out, "{}\n", penman_encode(&g).map_err(data(&context))?);
            }
        }
        Direction::Linearize => {
            for (i, r) in corpus(&args.input)?.iter().enumerate() {
                let g = r.graph.as_ref().ok_or_else(|| CliError::Data(format!("record {} has no graph", i + 1)))?;
                let tree = graph_to_tree(&orient_from_root(g)).map_err(data(format!("record {}", i + 1)))?;
                let source = SourceTokens::new(&r.tokens, r.lemmas.as_deref());
                if let Some(id) = &r.id {
                    let _ = writeln!(out, "# ::id {}", id);
                }
                let _ = writeln!(out, "{}", linearize(&tree, Some(source)).to_tsv());
            }
        }
    }
    write(&args.output, &out)
}

fn read_tags(path: &Path) -> Result<Vec<TaggedNodes>, CliError> {
    let text = read(path)?;
    let mut blocks = vec![Vec::new()];
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            blocks.push(Vec::new());
            continue;
        }
        let (concept, kind) = line
            .split_once('\t')
            .ok_or_else(|| CliError::Data(format!("{}: line {}: expected concept<TAB>source", path.display(), n + 1)))?;
        let kind = SourceKind::ALL
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(|| CliError::Data(format!("{}: line {}: unknown source {:?}", path.display(), n + 1, kind)))?;
        blocks.last_mut().expect("nonempty").push((concept.to_string(), kind));
    }
    // The file ends with a separator after the last block.
    if text.ends_with('\n') && blocks.last().is_some_and(Vec::is_empty) {
        blocks.pop();
    }
    Ok(blocks)
}

fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let gold = corpus(&args.gold)?;
    let pred = corpus(&args.pred)?;
    let systems = read_tags(&args.tags)?;
    if gold.len() != pred.len() || gold.len() != systems.len() {
        return Err(CliError::Data(format!(
            "unaligned inputs: {} gold, {} predicted, {} tag blocks",
            gold.len(),
            pred.len(),
            systems.len()
        )));
    }
    let config = Config::default();
    let prepared = prepare_training(&gold, None, &config).map_err(data(args.gold.display()))?;
    let mut examples = prepared.examples.iter();
    let references: Vec<TaggedNodes> = (1..=gold.len())
        .map(|i| {
            if prepared.skipped.iter().any(|(k, _)| *k == i) {
                return Vec::new();
            }
            let ex = examples.next().expect("one example per kept record");
            ex.target.concepts.iter().cloned().zip(ex.target.copy_sources.iter().map(|s| s.kind())).collect()
        })
        .collect();
    let table = node_source_stats(&references, &systems);
    for kind in SourceKind::ALL {
        let s = table[&kind];
        println!(
            "{} frequency={:.4} precision={:.4} recall={:.4} reference={} system={} correct={}",
            kind.name(),
            s.frequency,
            s.precision,
            s.recall,
            s.reference,
            s.system,
            s.correct
        );
    }
    Ok(())
}

fn execution(jobs: Option<usize>) -> Result<Execution, CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            // A second initialization in the same process is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::Parallel),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mode = execution(cli.jobs)?;
    let seed = cli.seed;
    let common = [("seed", seed.map_or("config".into(), |s| s.to_string())), ("jobs", cli.jobs.map_or("auto".into(), |j| j.to_string()))];
    match &cli.command {
        Command::Train(a) => {
            show(&[&[("verb", "train".to_string())], &common[..]].concat());
            train(a, seed, mode)
        }
        Command::Parse(a) => {
            show(&[&[("verb", "parse".to_string())], &common[..]].concat());
            parse(a, mode)
        }
        Command::Eval(a) => {
            show(&[&[("verb", "eval".to_string())], &common[..]].concat());
            eval(a, seed.unwrap_or(Config::default().seed), mode)
        }
        Command::Transduce(a) => {
            show(&[&[("verb", "transduce".to_string())], &common[..]].concat());
            transduce(a)
        }
        Command::Stats(a) => {
            show(&[&[("verb", "stats".to_string())], &common[..]].concat());
            stats(a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
