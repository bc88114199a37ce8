//! `climasent`: ingest filings, train and evaluate sentence classifiers, and
//! compare repeated-run samples.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on a configuration or
//! usage error.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use climasent::corpus::{load_climatext, Corpus, Label, LabeledSentence, Segmenter, Source};
use climasent::encoder::load_weights;
use climasent::evalstat::{
    reference_rows, render_comparison, repeated_runs, summarize, Alternative, Comparison, MetricKind, RunOptions,
    RunSample, TableRow,
};
use climasent::pipeline::{load_tokenizer, run_pipeline, PipelineConfig, PipelineError};
use climasent::trainer::{decide, predict_probabilities};

#[derive(Parser)]
#[command(
    name = "climasent",
    version,
    about = "Climate-related sentence detection in financial text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment pre-extracted Item 1A text into one sentence per line.
    Ingest {
        input: PathBuf,
        /// Write a labeled TSV corpus with this label on every sentence.
        #[arg(long)]
        label: Option<u8>,
        /// Abbreviation guard list replacing the shipped one.
        #[arg(long)]
        abbreviations: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Class counts and majority baseline of TSV corpora.
    Stats {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
    },
    /// Train once and write model, vocabulary, history and metrics.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Repeated train/evaluate runs under distinct seeds; writes run_sample.json.
    Runs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n_runs: Option<usize>,
        /// Master seed the per-run seeds are derived from.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        single_thread: bool,
        /// Keep completed runs when some fail.
        #[arg(long)]
        partial: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Pooled-variance t-test between two run samples, with a comparison table.
    Compare {
        sample_a: PathBuf,
        sample_b: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        /// Test "A better than B" instead of the two-sided alternative.
        #[arg(long)]
        one_sided: bool,
        /// Aligned plain text instead of Markdown.
        #[arg(long)]
        text: bool,
        /// Append the shipped reference rows to the table.
        #[arg(long)]
        reference: bool,
        /// Also write comparison.md and comparison.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Label sentences with a trained model: `label<TAB>p(climate)` per line.
    Predict {
        model: PathBuf,
        /// Sentence to classify; stdin lines otherwise.
        #[arg(long)]
        text: Option<String>,
    },
    /// Download a filing from the EDGAR archive into the cache.
    Fetch {
        accession: String,
        /// Cache directory (default: $CLIMASENT_CACHE_DIR or ./edgar-cache).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Identifying User-Agent (default: $CLIMASENT_USER_AGENT).
        #[arg(long)]
        user_agent: Option<String>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(c) => usage(c),
        other => Failure::Runtime(other.into()),
    }
}

fn load_config(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(path).map_err(usage)?;
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output_dir = d;
    }
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn ingest(input: &Path, label: Option<u8>, abbreviations: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let label = label
        .map(|l| Label::from_u8(l).ok_or_else(|| usage(anyhow!("--label must be 0 or 1, got {l}"))))
        .transpose()?;
    let segmenter = match abbreviations {
        Some(p) => {
            Segmenter::from_list(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)
        }
        None => Segmenter::default(),
    };
    let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let sentences = segmenter.segment(&text);
    let body = match label {
        Some(l) => {
            let name = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let records = sentences
                .into_iter()
                .filter_map(|s| LabeledSentence::new(s, l, Source::Tenk))
                .collect();
            Corpus::new(name, records).to_tsv().map_err(anyhow::Error::from)?
        }
        None => sentences.iter().map(|s| format!("{s}\n")).collect(),
    };
    match out {
        Some(p) => write_out(p, &body)?,
        None => io::stdout()
            .write_all(body.as_bytes())
            .context("cannot write to stdout")?,
    }
    Ok(())
}

fn stats(paths: &[PathBuf]) -> Result<(), Failure> {
    println!("corpus\ttotal\tpositives\tnegatives\tmajority_baseline");
    for p in paths {
        let corpus = load_climatext(p).map_err(anyhow::Error::from)?;
        let s = corpus.class_stats().map_err(anyhow::Error::from)?;
        println!(
            "{}\t{}\t{}\t{}\t{:.3}",
            corpus.name(),
            s.total,
            s.positives,
            s.negatives,
            s.majority_fraction
        );
    }
    Ok(())
}

fn pipeline(config: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(config, seed, out_dir)?;
    let report = run_pipeline(&cfg).map_err(pipeline_failure)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    println!("artifacts written to {}", cfg.output_dir.display());
    Ok(())
}

fn runs(
    config: &Path,
    n_runs: Option<usize>,
    seed: Option<u64>,
    opts: RunOptions,
    out_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config, seed, out_dir)?;
    if let Some(n) = n_runs {
        if n == 0 {
            return Err(usage(anyhow!("--n-runs must be at least 1")));
        }
        cfg.eval.n_runs = n;
    }
    let sample = repeated_runs(&cfg, cfg.eval.n_runs, None, opts).map_err(pipeline_failure)?;
    let path = cfg.output_dir.join("run_sample.json");
    write_out(&path, &sample.to_json())?;
    for f in &sample.failures {
        eprintln!("run with seed {} failed: {}", f.seed, f.error);
    }
    match summarize(&sample, cfg.eval.metric) {
        Ok(s) => println!(
            "{}: {} runs, {} mean {:.4}, sd {:.4}",
            sample.name, s.n, cfg.eval.metric, s.mean, s.sd
        ),
        Err(e) => println!("{}: {} run(s), {e}", sample.name, sample.n),
    }
    println!("run sample written to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn compare(
    a: &Path,
    b: &Path,
    metric: &str,
    alpha: f64,
    one_sided: bool,
    text: bool,
    reference: bool,
    out_dir: Option<&Path>,
) -> Result<(), Failure> {
    let metric: MetricKind = metric.parse().map_err(usage)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(anyhow!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let a = RunSample::load(a).map_err(anyhow::Error::from)?;
    let b = RunSample::load(b).map_err(anyhow::Error::from)?;
    let alternative = if one_sided {
        Alternative::Greater
    } else {
        Alternative::TwoSided
    };
    let cmp = Comparison::new(&a, &b, metric, alpha, alternative).map_err(anyhow::Error::from)?;
    let mut rows = vec![
        TableRow::from_sample(&a, metric).map_err(anyhow::Error::from)?,
        TableRow::from_sample(&b, metric).map_err(anyhow::Error::from)?,
    ];
    if reference {
        rows.extend(reference_rows());
    }
    let report = render_comparison(&cmp, &rows, !text);
    print!("{report}");
    if let Some(dir) = out_dir {
        let md = if text {
            render_comparison(&cmp, &rows, true)
        } else {
            report
        };
        write_out(&dir.join("comparison.md"), &md)?;
        let json = serde_json::to_string_pretty(&cmp).context("cannot serialize comparison")?;
        write_out(&dir.join("comparison.json"), &(json + "\n"))?;
    }
    Ok(())
}

fn predict(model: &Path, text: Option<String>) -> Result<(), Failure> {
    let (params, config) = load_weights(model).map_err(anyhow::Error::from)?;
    let dir = model.parent().unwrap_or(Path::new("."));
    let tokenizer = load_tokenizer(dir).map_err(|e| anyhow!("cannot load tokenizer next to the model: {e}"))?;
    let lines: Vec<String> = match text {
        Some(t) => vec![t],
        None => io::stdin()
            .lock()
            .lines()
            .collect::<Result<_, _>>()
            .context("stdin is not valid UTF-8 text")?,
    };
    if lines.is_empty() {
        return Ok(());
    }
    let seqs = tokenizer.encode_all(lines.iter().map(String::as_str));
    let probs = predict_probabilities(&params, &config, &seqs).map_err(anyhow::Error::from)?;
    let mut out = io::BufWriter::new(io::stdout().lock());
    for p in probs {
        writeln!(out, "{}\t{:.4}", decide(p).as_u8(), p[1]).context("cannot write to stdout")?;
    }
    out.flush().context("cannot write to stdout")?;
    Ok(())
}

fn fetch(accession: &str, out_dir: Option<PathBuf>, user_agent: Option<String>) -> Result<(), Failure> {
    use climasent::corpus::edgar::{cache_path, fetch_10k, Accession, FetchConfig, FetchError, CACHE_DIR_ENV};
    let parsed: Accession = accession.parse().map_err(usage)?;
    let cache = out_dir
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("edgar-cache"));
    let mut cfg = FetchConfig::default().with_env_overrides();
    if user_agent.is_some() {
        cfg.user_agent = user_agent;
    }
    match fetch_10k(accession, &cache, &cfg) {
        Ok(text) => {
            println!("{} ({} bytes)", cache_path(&cache, &parsed).display(), text.len());
            Ok(())
        }
        Err(e @ FetchError::Disabled) => Err(usage(e)),
        Err(e) => Err(Failure::Runtime(e.into())),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            input,
            label,
            abbreviations,
            out,
        } => ingest(&input, label, abbreviations.as_deref(), out.as_deref()),
        Command::Stats { corpora } => stats(&corpora),
        Command::Pipeline { config, seed, out_dir } => pipeline(&config, seed, out_dir),
        Command::Runs {
            config,
            n_runs,
            seed,
            single_thread,
            partial,
            out_dir,
        } => runs(&config, n_runs, seed, RunOptions { single_thread, partial }, out_dir),
        Command::Compare {
            sample_a,
            sample_b,
            metric,
            alpha,
            one_sided,
            text,
            reference,
            out_dir,
        } => compare(
            &sample_a,
            &sample_b,
            &metric,
            alpha,
            one_sided,
            text,
            reference,
            out_dir.as_deref(),
        ),
        Command::Predict { model, text } => predict(&model, text),
        Command::Fetch {
            accession,
            out_dir,
            user_agent,
        } => fetch(&accession, out_dir, user_agent),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
