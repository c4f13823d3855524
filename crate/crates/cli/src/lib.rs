//! Command-line driver: corpus statistics, grid encoding and decoding,
//! training, prediction, evaluation and the inference-turn sweep.
//!
//! Output is JSON lines unless `--pretty` is given. Exit codes: 0 on
//! success, 1 when inputs fail validation or files cannot be read, 2 on
//! usage errors.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gts_core::corpus::convert::{convert, SourceFormat};
use gts_core::corpus::{load_split, read_records, stats_of, AnnotatedSentence, SplitName};
use gts_core::encoders::EncoderKind;
use gts_core::eval::score;
use gts_core::grid::{decode, encode_grid, DecodedResult, GridDump, OpeTag, OteTag, TagGrid, Task};
use gts_core::model::GtsModel;
use gts_core::training::{ablate_inference_times, predict_all, render_ablation, train, TrainConfig};
use gts_core::ParamStore;

#[derive(Debug, Parser)]
#[command(name = "gts", version, about = "Grid tagging for opinion pair and triplet extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Ope,
    Ote,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Ope => Task::Ope,
            TaskArg::Ote => Task::Ote,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncoderArg {
    Cnn,
    Bilstm,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Cnn => EncoderKind::Cnn,
            EncoderArg::Bilstm => EncoderKind::Bilstm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Dev => SplitName::Dev,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// JSON array with BIO-tagged target and opinion strings
    GridJson,
    /// `sentence####[([i..], [j..], 'POS'), ...]` lines
    TripletText,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory holding {train,dev,test}.jsonl, or a single .jsonl file
    #[arg(long)]
    data: PathBuf,
    /// Split to read when --data is a directory (default: every split)
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Write results here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Human-readable output instead of JSON lines
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory holding train.jsonl and dev.jsonl
    #[arg(long)]
    data: PathBuf,
    /// TOML file mirroring the training configuration; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of inference turns L
    #[arg(long)]
    inference_turns: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sentence, term, pair and triplet counts
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Gold annotations to grid dumps
    EncodeGrid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Grid dumps back to annotation records
    DecodeGrid {
        /// JSON-lines file of grid dumps
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a model and save the best dev checkpoint
    Train {
        #[command(flatten)]
        args: TrainArgs,
        /// Model file to write
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Also write the per-epoch report as JSON lines
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Decode sentences with a trained model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact-match precision, recall and F1 of predictions against gold
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train once per inference-turn count and tabulate dev F1
    #[command(name = "ablate-L", alias = "ablate-l")]
    AblateL {
        #[command(flatten)]
        args: TrainArgs,
        /// Comma-separated turn counts
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        turns: Vec<usize>,
        /// Use only the first N training sentences
        #[arg(long)]
        sample: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convert a public release file into the JSON-lines dataset format
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

/// Where a command's main output goes.
fn sink<'a>(out: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match out {
        Some(path) => Box::new(std::io::BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(stdout),
    })
}

fn load_file(path: &Path, split: SplitName) -> Result<Vec<AnnotatedSentence>> {
    Ok(load_split(path, split.as_str())?.sentences)
}

/// `(split name, sentences)` for the requested data.
fn load_data(data: &DataArgs) -> Result<Vec<(String, Vec<AnnotatedSentence>)>> {
    if data.data.is_file() {
        let name = data.data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
        // the split name only labels the output
        return Ok(vec![(name, load_file(&data.data, SplitName::Test)?)]);
    }
    if !data.data.is_dir() {
        bail!("{}: no such file or directory", data.data.display());
    }
    let splits: Vec<SplitName> = match data.split {
        Some(s) => vec![s.into()],
        None => vec![SplitName::Train, SplitName::Dev, SplitName::Test],
    };
    splits
        .into_iter()
        .map(|s| Ok((s.as_str().to_string(), load_file(&data.data.join(s.file_name()), s)?)))
        .collect()
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => {
            let mut c = TrainConfig::default();
            if let Some(e) = args.encoder {
                let task = args.task.map_or(c.model.task, Task::from);
                c.model = gts_core::model::ModelConfig::for_encoder(e.into(), task);
            }
            c
        }
    };
    if let Some(t) = args.task {
        config.model.task = t.into();
    }
    if let Some(e) = args.encoder {
        let kind: EncoderKind = e.into();
        config.model.encoder.kind = kind;
        if kind == EncoderKind::Cnn && config.model.encoder.domain_dim == 0 {
            config.model.encoder.domain_dim = 100;
        }
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(l) = args.inference_turns {
        config.model.inference.turns = l;
    }
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(t) = args.threads {
        config.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn train_and_dev(dir: &Path) -> Result<(Vec<AnnotatedSentence>, Vec<AnnotatedSentence>)> {
    let train_set = load_file(&dir.join(SplitName::Train.file_name()), SplitName::Train)?;
    let dev_set = load_file(&dir.join(SplitName::Dev.file_name()), SplitName::Dev)?;
    Ok((train_set, dev_set))
}

fn json_line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match command {
        Command::Stats { data, out } => {
            let splits = load_data(&data)?;
            let mut w = sink(&out.out, stdout)?;
            if out.pretty {
                writeln!(w, "{:<10}{:>8}{:>8}{:>8}{:>8}{:>8}", "split", "#S", "#A", "#O", "#P", "#T")?;
            }
            for (name, sentences) in splits {
                let s = stats_of(&sentences);
                if out.pretty {
                    writeln!(
                        w,
                        "{:<10}{:>8}{:>8}{:>8}{:>8}{:>8}",
                        name, s.sentences, s.aspects, s.opinions, s.pairs, s.triplets
                    )?;
                } else {
                    json_line(
                        &mut w,
                        &serde_json::json!({
                            "split": name,
                            "sentences": s.sentences,
                            "aspects": s.aspects,
                            "opinions": s.opinions,
                            "pairs": s.pairs,
                            "triplets": s.triplets,
                        }),
                    )?;
                }
            }
            w.flush()?;
        }
        Command::EncodeGrid { data, task, out } => {
            let splits = load_data(&data)?;
            let mut w = sink(&out.out, stdout)?;
            let task: Task = task.into();
            let mut warned = 0;
            for (name, sentences) in splits {
                for (k, s) in sentences.iter().enumerate() {
                    let (dump, warnings) = match task {
                        Task::Ope => {
                            let e = encode_grid::<OpeTag>(s).with_context(|| format!("{name} sentence {}", k + 1))?;
                            (e.grid.to_dump(Some(s.tokens())), e.warnings)
                        }
                        Task::Ote => {
                            let e = encode_grid::<OteTag>(s).with_context(|| format!("{name} sentence {}", k + 1))?;
                            (e.grid.to_dump(Some(s.tokens())), e.warnings)
                        }
                    };
                    if !warnings.is_empty() {
                        warned += 1;
                        writeln!(
                            stderr,
                            "warning: {name} sentence {}: {}",
                            k + 1,
                            serde_json::to_string(&warnings)?
                        )?;
                    }
                    if out.pretty {
                        writeln!(w, "{}", serde_json::to_string_pretty(&dump)?)?;
                    } else {
                        json_line(&mut w, &dump)?;
                    }
                }
            }
            w.flush()?;
            if warned > 0 {
                writeln!(stderr, "{warned} sentences will not decode back to their gold annotation")?;
            }
        }
        Command::DecodeGrid { data, out } => {
            let file = fs::File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let mut w = sink(&out.out, stdout)?;
            for (k, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let at = || format!("{}:{}", data.display(), k + 1);
                let dump: GridDump = serde_json::from_str(&line).with_context(at)?;
                let decoded = match dump.task {
                    Task::Ope => decode(&TagGrid::<OpeTag>::from_dump(&dump).with_context(at)?),
                    Task::Ote => decode(&TagGrid::<OteTag>::from_dump(&dump).with_context(at)?),
                };
                let tokens = dump
                    .tokens
                    .clone()
                    .unwrap_or_else(|| (0..dump.n).map(|i| format!("w{i}")).collect());
                let record = decoded.to_record(&tokens, dump.task);
                if out.pretty {
                    writeln!(w, "{}", serde_json::to_string_pretty(&record)?)?;
                } else {
                    json_line(&mut w, &record)?;
                }
            }
            w.flush()?;
        }
        Command::Train {
            args,
            out,
            report,
            pretty,
        } => {
            let config = resolve_config(&args)?;
            let (train_set, dev_set) = train_and_dev(&args.data)?;
            let trained = train::<f64>(&config, &train_set, &dev_set, |e| {
                let _ = if pretty {
                    writeln!(
                        stdout,
                        "epoch {:>4}  loss {:>12.4}  dev F1 {:>6.2}",
                        e.epoch,
                        e.train_loss,
                        100.0 * e.dev_f1
                    )
                } else {
                    serde_json::to_string(e)
                        .map_err(std::io::Error::other)
                        .and_then(|s| writeln!(stdout, "{s}"))
                };
            })?;
            trained.model.save(&trained.params, &out)?;
            if let Some(path) = report {
                fs::write(&path, trained.report.to_json_lines())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let r = &trained.report;
            writeln!(
                stderr,
                "best dev F1 {:.2} at epoch {}; model written to {}",
                100.0 * r.best_dev_f1,
                r.best_epoch,
                out.display()
            )?;
            if r.encode_warnings > 0 {
                writeln!(
                    stderr,
                    "{} training sentences have gold grids that do not decode exactly",
                    r.encode_warnings
                )?;
            }
        }
        Command::Predict {
            model,
            data,
            threads,
            out,
        } => {
            if let Some(t) = threads {
                // the global pool can only be set once per process
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            let (model, params): (GtsModel, ParamStore) = GtsModel::load(&model)?;
            let mut w = sink(&out.out, stdout)?;
            for (_, sentences) in load_data(&data)? {
                let preds = predict_all(&model, &params, &sentences)?;
                for (s, p) in sentences.iter().zip(&preds) {
                    let record = p.to_record(s.tokens(), model.task());
                    if out.pretty {
                        writeln!(w, "{}", serde_json::to_string_pretty(&record)?)?;
                    } else {
                        json_line(&mut w, &record)?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Eval {
            pred,
            gold,
            task,
            out,
        } => {
            let task: Task = task.into();
            let gold_sents = load_file(&gold, SplitName::Test)?;
            let preds = read_records(&pred)?
                .into_iter()
                .map(|(line, r)| {
                    DecodedResult::from_record(&r, task).map_err(|m| anyhow!("{}:{line}: {m}", pred.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = score(&preds, &gold_sents, task)?;
            let mut w = sink(&out.out, stdout)?;
            if out.pretty {
                write!(w, "{report}")?;
            } else {
                json_line(&mut w, &report)?;
            }
            w.flush()?;
        }
        Command::AblateL {
            args,
            turns,
            sample,
            out,
        } => {
            let config = resolve_config(&args)?;
            let (mut train_set, dev_set) = train_and_dev(&args.data)?;
            if let Some(n) = sample {
                train_set.truncate(n);
            }
            let rows: Vec<_> = ablate_inference_times(&config, &train_set, &dev_set, &turns)?
                .into_iter()
                .map(|(row, _)| row)
                .collect();
            let mut w = sink(&out.out, stdout)?;
            if out.pretty {
                write!(w, "{}", render_ablation(&rows))?;
            } else {
                for row in &rows {
                    json_line(&mut w, row)?;
                }
            }
            w.flush()?;
        }
        Command::Convert { input, format, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let format = match format {
                FormatArg::GridJson => SourceFormat::GridJson,
                FormatArg::TripletText => SourceFormat::TripletText,
            };
            let sentences = convert(&text, format).map_err(|m| anyhow!("{}: {m}", input.display()))?;
            let mut w = sink(&out.out, stdout)?;
            for s in &sentences {
                writeln!(w, "{}", s.to_json_line())?;
            }
            w.flush()?;
            writeln!(stderr, "converted {} sentences", sentences.len())?;
        }
    }
    Ok(())
}
