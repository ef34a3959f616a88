use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use mgbr_core::cot_debias::read_items;
use mgbr_core::generator::{build_dataset, sha256_hex, Dataset, SetId};
use mgbr_core::metrics::{mcnemar, paired_outcomes, PairedOutcomes};
use mgbr_core::prompts::{render_item, PromptCondition};
use mgbr_core::run::{
    annotation_correlation, build_report, classify, correlate_table, eval_condition, exemplar_pool,
    read_annotations, read_score_table, render_pair_text, results_file_name, ConditionPair,
    ConfigMap, ErrorClass, EvalContext, EvalOptions, ResultsFile, RunConfig, RunError, RunManifest,
    DEFAULT_PAIRS,
};
use mgbr_core::Lexicon;
use tracing_subscriber::EnvFilter;

/// Gendered word-counting bias benchmark.
#[derive(Parser)]
#[command(name = "mgbr", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file in the sectioned key/value format.
    #[arg(long, global = true, env = "MGBR_CONFIG")]
    config: Option<PathBuf>,
    /// Override any configuration key: `section.key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Word-list file (defaults to the built-in lexicon).
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Template override file.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset file.
    Generate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<String>,
        /// Lower bound for p, q and r.
        #[arg(long)]
        min: Option<usize>,
        /// Upper bound for p, q and r.
        #[arg(long)]
        max: Option<usize>,
        #[arg(long, value_name = "shuffled|suffix")]
        append_order: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the anti/pro prompts of one item.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        instance: u64,
        #[arg(long = "set-id", default_value = "Dff")]
        set_id: SetId,
        #[arg(long, default_value = "zero_shot")]
        condition: PromptCondition,
        #[arg(long, value_name = "teacher_forced|generated")]
        cot_mode: Option<String>,
    },
    /// Score a dataset under each (backend, condition); resumable.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// `kind[:key=value,...]`, e.g. `synthetic:beta=1` or `remote:model=NAME`. Repeatable;
        /// replaces backends from the config file.
        #[arg(long = "backend")]
        backends: Vec<String>,
        /// Comma-separated conditions, or `all`.
        #[arg(long)]
        conditions: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_name = "teacher_forced|generated")]
        cot_mode: Option<String>,
        /// Divide log-likelihoods by continuation length.
        #[arg(long)]
        normalize: bool,
        /// Stop after this many items in this invocation.
        #[arg(long)]
        max_items: Option<usize>,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        max_in_flight: Option<usize>,
        #[arg(long)]
        requests_per_minute: Option<u32>,
    },
    /// Bias tables from results files.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Conditions to compare with McNemar's test, `first:second`. Repeatable.
        #[arg(long = "pair")]
        pairs: Vec<ConditionPair>,
        /// Per-occupation human scores (`word,score` CSV) to correlate with.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Directory for report.json, report.csv, report.txt and occupations.csv.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Pearson and Spearman matrices over the metric columns of a CSV table.
    Correlate {
        table: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Tagging F-score of a backend over downstream items.
    Fscore {
        #[arg(long)]
        items: PathBuf,
        #[arg(long, default_value = "synthetic")]
        backend: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// McNemar's test from two results files or raw discordant counts.
    Mcnemar {
        /// Two results files over the same dataset.
        files: Vec<PathBuf>,
        /// Test sets whose verdicts are paired.
        #[arg(long, value_delimiter = ',', default_values_t = [SetId::Dff, SetId::Dmm])]
        sets: Vec<SetId>,
        #[arg(long, requires = "c")]
        b: Option<u64>,
        #[arg(long, requires = "b")]
        c: Option<u64>,
    },
}

fn config_map(common: &Common) -> Result<ConfigMap> {
    let mut map = match &common.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    if let Some(p) = &common.lexicon {
        map.set("dataset.lexicon", p.display().to_string())?;
    }
    if let Some(p) = &common.templates {
        map.set("prompts.templates", p.display().to_string())?;
    }
    Ok(map)
}

fn finish_config(mut map: ConfigMap, common: &Common) -> Result<RunConfig> {
    for a in &common.overrides {
        map.assign(a)?;
    }
    Ok(RunConfig::from_map(&map)?)
}

fn set_opt<T: ToString>(map: &mut ConfigMap, key: &str, v: &Option<T>) -> Result<()> {
    if let Some(v) = v {
        map.set(key, v.to_string())?;
    }
    Ok(())
}

/// Reads a dataset and checks it against the configured lexicon.
fn load_dataset(path: &Path, lexicon: &Lexicon) -> Result<(Dataset, String)> {
    let bytes = std::fs::read(path).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let dataset = Dataset::read_from(bytes.as_slice())?;
    if dataset.lexicon_source != lexicon.source_id {
        return Err(RunError::Config(format!(
            "{} was generated from lexicon {:?}, but {:?} is loaded",
            path.display(),
            dataset.lexicon_source,
            lexicon.source_id
        ))
        .into());
    }
    Ok((dataset, sha256_hex(&bytes)))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| {
        RunError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn cmd_generate(
    common: &Common,
    n: Option<usize>,
    seed: Option<String>,
    min: Option<usize>,
    max: Option<usize>,
    append_order: Option<String>,
    out: &Path,
) -> Result<()> {
    let mut map = config_map(common)?;
    set_opt(&mut map, "dataset.n", &n)?;
    set_opt(&mut map, "dataset.seed", &seed)?;
    set_opt(&mut map, "dataset.min", &min)?;
    set_opt(&mut map, "dataset.max", &max)?;
    set_opt(&mut map, "dataset.append_order", &append_order)?;
    let cfg = finish_config(map, common)?;
    let lexicon = cfg.load_lexicon()?;
    let mut manifest = RunManifest::start("generate", &cfg);
    if let Some(p) = &cfg.lexicon {
        manifest.input(p)?;
    }
    let dataset = build_dataset(&lexicon, cfg.n, cfg.seed, cfg.bounds, cfg.append_order)?;
    dataset.write(out)?;
    manifest.output(out)?;
    manifest.finish_and_write(&manifest_path(out))?;
    println!("{}  {}", dataset.digest(), out.display());
    Ok(())
}

fn cmd_render(
    common: &Common,
    dataset: &Path,
    instance: u64,
    set_id: SetId,
    condition: PromptCondition,
    cot_mode: Option<String>,
) -> Result<()> {
    let mut map = config_map(common)?;
    set_opt(&mut map, "prompts.cot_mode", &cot_mode)?;
    let cfg = finish_config(map, common)?;
    let lexicon = cfg.load_lexicon()?;
    let templates = cfg.load_templates()?;
    let (ds, _) = load_dataset(dataset, &lexicon)?;
    let inst = ds.get(instance).ok_or_else(|| {
        RunError::Config(format!("no instance {instance} in {}", dataset.display()))
    })?;
    let pool = if condition.is_few_shot() {
        Some(exemplar_pool(&lexicon, &ds, &cfg.fewshot, cfg.pool_size)?)
    } else {
        None
    };
    let item = render_item(
        inst,
        set_id,
        condition,
        &templates,
        &lexicon,
        pool.as_ref().map(|p| (&cfg.fewshot, p)),
        cfg.cot_mode,
    )
    .map_err(RunError::from)?;
    print!("{}", render_pair_text(&item));
    Ok(())
}

struct EvalFlags {
    dataset: PathBuf,
    backends: Vec<String>,
    conditions: Option<String>,
    out: Option<PathBuf>,
    cot_mode: Option<String>,
    normalize: bool,
    max_items: Option<usize>,
    chunk_size: Option<usize>,
    max_in_flight: Option<usize>,
    requests_per_minute: Option<u32>,
}

fn cmd_eval(common: &Common, f: EvalFlags) -> Result<()> {
    let mut map = config_map(common)?;
    if !f.backends.is_empty() {
        map.clear_backends();
        for b in &f.backends {
            map.add_backend_arg(b)?;
        }
    }
    set_opt(&mut map, "prompts.conditions", &f.conditions)?;
    set_opt(&mut map, "prompts.cot_mode", &f.cot_mode)?;
    set_opt(
        &mut map,
        "eval.output_dir",
        &f.out.as_ref().map(|p| p.display().to_string()),
    )?;
    if f.normalize {
        map.set("eval.normalize", "true")?;
    }
    set_opt(&mut map, "eval.max_items", &f.max_items)?;
    set_opt(&mut map, "eval.chunk_size", &f.chunk_size)?;
    set_opt(&mut map, "eval.max_in_flight", &f.max_in_flight)?;
    set_opt(&mut map, "eval.requests_per_minute", &f.requests_per_minute)?;
    let cfg = finish_config(map, common)?;
    if cfg.backends.is_empty() {
        bail!(RunError::Config(
            "no backend configured; pass --backend".into()
        ));
    }

    let lexicon = Arc::new(cfg.load_lexicon()?);
    let templates = Arc::new(cfg.load_templates()?);
    let (ds, digest) = load_dataset(&f.dataset, &lexicon)?;
    let pool = if cfg.conditions.iter().any(|c| c.is_few_shot()) {
        Some(exemplar_pool(&lexicon, &ds, &cfg.fewshot, cfg.pool_size)?)
    } else {
        None
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| RunError::Io {
        path: cfg.output_dir.display().to_string(),
        source: e,
    })?;
    let mut manifest = RunManifest::start("eval", &cfg);
    manifest.input(&f.dataset)?;
    let ctx = EvalContext {
        dataset: &ds,
        dataset_digest: &digest,
        lexicon: &lexicon,
        templates: &templates,
        pool: pool.as_ref(),
    };
    let mut options = EvalOptions {
        cot_mode: cfg.cot_mode,
        normalize: cfg.normalize,
        fewshot: cfg.fewshot,
        chunk_size: cfg.chunk_size,
        max_items: cfg.max_items,
        ..Default::default()
    };

    let (mut attempted, mut succeeded) = (0usize, 0usize);
    let mut first_error = None;
    'outer: for spec in &cfg.backends {
        let backend = spec.instantiate(lexicon.clone(), templates.clone(), &cfg)?;
        for condition in &cfg.conditions {
            let path = cfg
                .output_dir
                .join(results_file_name(spec.name(), *condition));
            let summary = eval_condition(backend.as_ref(), &ctx, *condition, &options, &path)?;
            attempted += summary.scored + summary.failed.len();
            succeeded += summary.scored;
            eprintln!(
                "{} {}: {} scored now, {} earlier, {} failed, {}",
                spec.name(),
                condition,
                summary.scored,
                summary.already_scored,
                summary.failed.len(),
                if summary.complete {
                    "complete"
                } else {
                    "incomplete"
                }
            );
            if !summary.failed.is_empty() {
                first_error.get_or_insert_with(|| summary.failed[0].error.clone());
                let fail_path = path.with_extension("failures.json");
                let body = serde_json_pretty(&summary.failed);
                write_text(&fail_path, &body)?;
                eprintln!("  failed keys written to {}", fail_path.display());
            }
            manifest.output(&path)?;
            if let Some(budget) = options.max_items.as_mut() {
                *budget = budget.saturating_sub(summary.scored + summary.failed.len());
                if *budget == 0 {
                    break 'outer;
                }
            }
            if let Some(reason) = summary.aborted {
                eprintln!("  stopping: {reason}");
                break 'outer;
            }
        }
    }
    manifest.finish_and_write(&cfg.output_dir.join("eval.manifest.json"))?;
    if attempted > 0 && succeeded == 0 {
        return Err(RunError::AllFailed {
            count: attempted,
            first: first_error.unwrap_or_default(),
        }
        .into());
    }
    Ok(())
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn cmd_report(
    common: &Common,
    results: &[PathBuf],
    dataset: &Path,
    pairs: Vec<ConditionPair>,
    annotations: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = finish_config(config_map(common)?, common)?;
    let lexicon = cfg.load_lexicon()?;
    let (ds, digest) = load_dataset(dataset, &lexicon)?;
    let inputs = results
        .iter()
        .map(|p| Ok((p.display().to_string(), ResultsFile::read(p)?)))
        .collect::<Result<Vec<_>, RunError>>()?;
    let pairs = if pairs.is_empty() {
        DEFAULT_PAIRS.to_vec()
    } else {
        pairs
    };
    let report = build_report(&inputs, &ds, &digest, &pairs)?;
    let text = report.to_text();
    print!("{text}");

    let correlations = match &annotations {
        Some(p) => {
            let ann = read_annotations(p)?;
            let rows: Vec<_> = report
                .reports
                .iter()
                .flat_map(|(b, rs)| rs.iter().map(|r| annotation_correlation(b, r, &ann)))
                .collect();
            for c in &rows {
                println!(
                    "Annotation correlation {} {} over {} words: pearson {} spearman {}",
                    c.backend,
                    c.condition,
                    c.n_words,
                    c.pearson.map_or("n/a".into(), |v| format!("{v:.4}")),
                    c.spearman.map_or("n/a".into(), |v| format!("{v:.4}")),
                );
            }
            Some(rows)
        }
        None => None,
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| RunError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let mut manifest = RunManifest::start("report", &cfg);
        manifest.input(dataset)?;
        for p in results {
            manifest.input(p)?;
        }
        let json = serde_json_pretty(&serde_report(&report, correlations.as_deref()));
        for (name, body) in [
            ("report.json", json),
            ("report.csv", report.to_csv()?),
            ("report.txt", text),
            ("occupations.csv", report.occupations_csv()?),
        ] {
            let path = dir.join(name);
            write_text(&path, &body)?;
            manifest.output(&path)?;
        }
        manifest.finish_and_write(&dir.join("report.manifest.json"))?;
    }
    Ok(())
}

fn serde_report<'a>(
    report: &'a mgbr_core::run::CombinedReport,
    correlations: Option<&'a [mgbr_core::run::AnnotationCorrelation]>,
) -> impl serde::Serialize + 'a {
    #[derive(serde::Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a mgbr_core::run::CombinedReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        annotation_correlations: Option<&'a [mgbr_core::run::AnnotationCorrelation]>,
    }
    Out {
        report,
        annotation_correlations: correlations,
    }
}

fn cmd_correlate(table: &Path, out: Option<PathBuf>) -> Result<()> {
    let t = read_score_table(table)?;
    let m = correlate_table(&t)?;
    let csv = m.to_csv()?;
    print!("{csv}");
    if let Some(out) = out {
        write_text(&out, &csv)?;
        let json = out.with_extension("json");
        write_text(&json, &serde_json_pretty(&m))?;
    }
    Ok(())
}

fn cmd_fscore(common: &Common, items: &Path, backend: &str, out: Option<PathBuf>) -> Result<()> {
    let mut map = config_map(common)?;
    map.clear_backends();
    map.add_backend_arg(backend)?;
    let cfg = finish_config(map, common)?;
    let lexicon = Arc::new(cfg.load_lexicon()?);
    let templates = Arc::new(cfg.load_templates()?);
    let items_list = read_items(items).map_err(RunError::from)?;
    let backend = cfg.backends[0].instantiate(lexicon.clone(), templates.clone(), &cfg)?;
    let report = mgbr_core::run::run_fscore(backend.as_ref(), &items_list, &lexicon, &templates)?;
    print!("{}", report.to_text());
    if let Some(out) = out {
        let mut manifest = RunManifest::start("fscore", &cfg);
        manifest.input(items)?;
        write_text(&out, &serde_json_pretty(&report))?;
        manifest.output(&out)?;
        manifest.finish_and_write(&manifest_path(&out))?;
    }
    Ok(())
}

fn cmd_mcnemar(files: &[PathBuf], sets: &[SetId], b: Option<u64>, c: Option<u64>) -> Result<()> {
    let table = match (files, b, c) {
        ([], Some(b), Some(c)) => PairedOutcomes { a: 0, b, c, d: 0 },
        ([first, second], None, None) => {
            let x = ResultsFile::read(first)?;
            let y = ResultsFile::read(second)?;
            if x.header.dataset_digest != y.header.dataset_digest {
                return Err(RunError::MixedDigests(vec![
                    x.header.dataset_digest,
                    y.header.dataset_digest,
                ])
                .into());
            }
            paired_outcomes(&x.results, &y.results, sets).map_err(RunError::from)?
        }
        _ => bail!(RunError::Config(
            "give either two results files or both --b and --c".into()
        )),
    };
    let r = mcnemar(&table);
    print!("{}", serde_json_pretty(&serde_json_value(&table, &r)));
    Ok(())
}

fn serde_json_value(
    t: &PairedOutcomes,
    r: &mgbr_core::metrics::McNemarResult,
) -> impl serde::Serialize {
    #[derive(serde::Serialize)]
    struct Out {
        table: PairedOutcomes,
        result: mgbr_core::metrics::McNemarResult,
    }
    Out {
        table: t.clone(),
        result: *r,
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Generate {
            n,
            seed,
            min,
            max,
            append_order,
            out,
        } => cmd_generate(common, n, seed, min, max, append_order, &out),
        Command::Render {
            dataset,
            instance,
            set_id,
            condition,
            cot_mode,
        } => cmd_render(common, &dataset, instance, set_id, condition, cot_mode),
        Command::Eval {
            dataset,
            backends,
            conditions,
            out,
            cot_mode,
            normalize,
            max_items,
            chunk_size,
            max_in_flight,
            requests_per_minute,
        } => cmd_eval(
            common,
            EvalFlags {
                dataset,
                backends,
                conditions,
                out,
                cot_mode,
                normalize,
                max_items,
                chunk_size,
                max_in_flight,
                requests_per_minute,
            },
        ),
        Command::Report {
            results,
            dataset,
            pairs,
            annotations,
            out,
        } => cmd_report(common, &results, &dataset, pairs, annotations, out),
        Command::Correlate { table, out } => cmd_correlate(&table, out),
        Command::Fscore {
            items,
            backend,
            out,
        } => cmd_fscore(common, &items, &backend, out),
        Command::Mcnemar { files, sets, b, c } => cmd_mcnemar(&files, &sets, b, c),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match classify(err.as_ref()) {
        Some(ErrorClass::Backend) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Usage) | None => 1,
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
