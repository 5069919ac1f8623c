use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use culrag_core::dataset::load_questions;
use culrag_core::engine::{
    build_indexes, build_knowledge_bases, evaluate, list_countries, make_providers, routed_countries, run_track,
    Engine, EngineConfig, EngineError,
};
use culrag_core::evaluator::{read_predictions, run_ablation, Scheme};
use culrag_core::model_client::endpoint_from_env;
use culrag_core::wiki_fetch::{write_page, WikiFetcher, WIKIPEDIA_REST};
use culrag_core::{parse_locale, Locale, Mode, Question, Rounding, TemplateId, Track};

#[derive(Parser)]
#[command(name = "culrag", version, about = "Locale-routed retrieval-augmented question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// rag-base or rag-web.
    #[arg(long)]
    mode: Option<Mode>,
    /// mp, rp-v1 or rp-v2.
    #[arg(long)]
    prompt: Option<TemplateId>,
    /// Passages retrieved per query.
    #[arg(long)]
    k: Option<usize>,
    /// Skip the local knowledge base.
    #[arg(long)]
    no_local_db: bool,
    /// Model server URL (or mock:oracle). Falls back to CULRAG_MODEL_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    /// live, fixture:<dir> or cache-only.
    #[arg(long)]
    search: Option<String>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Knowledge-base root directory.
    #[arg(long)]
    kb_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-country entries from the keyword lists, pages and curated facts.
    BuildKb {
        #[command(flatten)]
        o: Overrides,
    },
    /// Embed entries into per-country vector indexes.
    Index {
        #[command(flatten)]
        o: Overrides,
        /// Countries to index; all built countries by default.
        #[arg(long = "country")]
        countries: Vec<String>,
    },
    /// Answer questions and print one record per line.
    Ask {
        #[command(flatten)]
        o: Overrides,
        /// Question id carrying the locale, e.g. en-GB-001.
        #[arg(long)]
        id: Option<String>,
        /// Locale when no id is given.
        #[arg(long)]
        locale: Option<Locale>,
        /// Questions file instead of a single question.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "saq")]
        track: Track,
        question: Option<String>,
    },
    /// Answer a whole dataset, writing predictions and, if labeled, a report.
    RunTrack {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        track: Track,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file.
    Evaluate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        track: Track,
        #[arg(long)]
        predictions: PathBuf,
        /// simple_avg or weighted_by_count.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Truncate instead of rounding half-up.
        #[arg(long)]
        truncate: bool,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per prompt variant; writes ablation.csv and ablation.txt.
    Ablate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        track: Track,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "mp,rp-v1,rp-v2")]
        prompts: Vec<TemplateId>,
    },
    /// Download page summaries into a pages directory.
    FetchWiki {
        #[arg(long)]
        lang: String,
        #[arg(long)]
        out: PathBuf,
        /// File with one title per line.
        #[arg(long)]
        titles: PathBuf,
        #[arg(long, default_value = WIKIPEDIA_REST)]
        url_template: String,
    },
}

fn load_config(o: &Overrides) -> Result<EngineConfig, EngineError> {
    let mut c = match &o.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(e) = endpoint_from_env() {
        c.model.endpoint = e;
    }
    if let Some(e) = &o.endpoint {
        c.model.endpoint = e.clone();
    }
    if let Some(m) = o.mode {
        c.routing.mode = m;
    }
    if let Some(p) = o.prompt {
        c.cascade.template = p;
    }
    if let Some(k) = o.k {
        c.cascade.k = k;
    }
    if o.no_local_db {
        c.cascade.use_local_db = false;
    }
    if let Some(s) = &o.search {
        c.search.provider = s.clone();
    }
    if let Some(j) = o.jobs {
        c.jobs = j;
    }
    if let Some(r) = &o.kb_root {
        c.paths.kb_root = r.clone();
    }
    c.validate()?;
    Ok(c)
}

fn open_engine(config: EngineConfig, questions: &[Question], allow_live: bool) -> Result<Engine, EngineError> {
    let (generator, embedder) = make_providers(&config, questions)?;
    let countries = routed_countries(questions, &config.routing);
    Engine::open(config, generator, embedder, &countries, allow_live)
}

fn cmd_build_kb(o: &Overrides) -> Result<i32, EngineError> {
    let c = load_config(o)?;
    let summary = build_knowledge_bases(&c)?;
    let mut totals: std::collections::BTreeMap<String, usize> = Default::default();
    for (country, counts) in &summary {
        let parts: Vec<String> = counts.iter().map(|(s, n)| format!("{s}={n}")).collect();
        println!("{country}: {}", parts.join(" "));
        for (s, n) in counts {
            *totals.entry(s.clone()).or_default() += n;
        }
    }
    let parts: Vec<String> = totals.iter().map(|(s, n)| format!("{s}={n}")).collect();
    println!("total: {}", parts.join(" "));
    Ok(0)
}

fn cmd_index(o: &Overrides, countries: &[String]) -> Result<i32, EngineError> {
    let c = load_config(o)?;
    let countries = if countries.is_empty() {
        list_countries(&c.paths.kb_root)?
    } else {
        countries.to_vec()
    };
    if countries.is_empty() {
        return Err(EngineError::Config(format!(
            "no knowledge bases under {}; run build-kb first",
            c.paths.kb_root.display()
        )));
    }
    let (_, embedder) = make_providers(&c, &[])?;
    for (country, n) in build_indexes(&c, embedder.as_ref(), &countries)? {
        println!("{country}: {n} vectors");
    }
    Ok(0)
}

fn cmd_ask(
    o: &Overrides,
    id: Option<String>,
    locale: Option<Locale>,
    dataset: Option<PathBuf>,
    track: Track,
    question: Option<String>,
) -> Result<i32, EngineError> {
    let c = load_config(o)?;
    let questions = match (dataset, question) {
        (Some(path), None) => load_questions(&path, track)?,
        (None, Some(text)) => {
            let (id, loc) = match (id, locale) {
                (Some(id), _) => {
                    let loc = parse_locale(&id).map_err(|e| EngineError::Config(e.to_string()))?;
                    (id, loc)
                }
                (None, Some(loc)) => (format!("{loc}-ask"), loc),
                (None, None) => return Err(EngineError::Config("ask needs --id or --locale".into())),
            };
            vec![Question::saq(id, loc, text)]
        }
        _ => return Err(EngineError::Config("give either a question or --dataset".into())),
    };
    let engine = open_engine(c, &questions, true)?;
    let mut code = 0;
    for (q, res) in questions.iter().zip(engine.answer_all(&questions)?) {
        match res {
            Ok(rec) => {
                if rec.all_stages_errored() {
                    code = 1;
                }
                println!("{}", serde_json::to_string(&rec).expect("record serializes"));
            }
            Err(e) => {
                eprintln!("{}: {e}", q.id);
                code = 1;
            }
        }
    }
    Ok(code)
}

fn cmd_run_track(o: &Overrides, dataset: &Path, track: Track, out: &Path) -> Result<i32, EngineError> {
    let c = load_config(o)?;
    let questions = load_questions(dataset, track)?;
    let engine = open_engine(c, &questions, false)?;
    let summary = run_track(&engine, &questions, out)?;
    println!(
        "{} questions: {} answered, {} abstained, {} errors",
        questions.len(),
        summary.answered,
        summary.abstained,
        summary.errors.len()
    );
    if let Some(r) = &summary.report {
        print!("{}", r.to_table());
    }
    for e in &summary.errors {
        eprintln!("error: {e}");
    }
    Ok(summary.exit_code())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    o: &Overrides,
    dataset: &Path,
    track: Track,
    predictions: &Path,
    scheme: Option<Scheme>,
    truncate: bool,
    out: Option<&Path>,
) -> Result<i32, EngineError> {
    let c = load_config(o)?;
    let mut eval = c.evaluation;
    if let Some(s) = scheme {
        eval.scheme = s;
    }
    if truncate {
        eval.rounding = Rounding::Truncate;
    }
    let questions = load_questions(dataset, track)?;
    let preds = read_predictions(predictions)?;
    let report = evaluate(&questions, &preds, &eval)?;
    print!("{}", report.to_table());
    if let Some(dir) = out {
        let io = |e| EngineError::Io {
            path: dir.to_path_buf(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), report.to_json() + "\n").map_err(io)?;
        std::fs::write(dir.join("report.txt"), report.to_table()).map_err(io)?;
    }
    Ok(0)
}

fn cmd_ablate(o: &Overrides, dataset: &Path, track: Track, out: &Path, prompts: &[TemplateId]) -> Result<i32, EngineError> {
    let base = load_config(o)?;
    let questions = load_questions(dataset, track)?;
    let ablation = run_ablation(prompts, track, |t| -> Result<_, EngineError> {
        let mut c = base.clone();
        c.cascade.template = t;
        let engine = open_engine(c, &questions, false)?;
        let summary = run_track(&engine, &questions, &out.join(t.as_str()))?;
        if !summary.errors.is_empty() {
            return Err(EngineError::Config(format!("{} questions failed", summary.errors.len())));
        }
        summary
            .report
            .ok_or_else(|| EngineError::Config("dataset is not fully labeled".into()))
    });
    let io = |e| EngineError::Io {
        path: out.to_path_buf(),
        source: e,
    };
    std::fs::create_dir_all(out).map_err(io)?;
    std::fs::write(out.join("ablation.csv"), ablation.to_csv()).map_err(io)?;
    std::fs::write(out.join("ablation.txt"), ablation.to_table()).map_err(io)?;
    print!("{}", ablation.to_table());
    Ok(i32::from(ablation.is_partial()))
}

fn cmd_fetch_wiki(lang: &str, out: &Path, titles: &Path, template: &str) -> Result<i32, EngineError> {
    let list = std::fs::read_to_string(titles).map_err(|e| EngineError::Io {
        path: titles.to_path_buf(),
        source: e,
    })?;
    let fetcher =
        WikiFetcher::new(template, Duration::from_secs(30)).map_err(|e| EngineError::Config(e.to_string()))?;
    let mut failed = 0;
    let mut seen = BTreeSet::new();
    for title in list.lines().map(str::trim).filter(|t| !t.is_empty() && !t.starts_with('#')) {
        if !seen.insert(title) {
            continue;
        }
        match fetcher.fetch(lang, title).and_then(|p| write_page(out, &p)) {
            Ok(path) => println!("{}", path.display()),
            Err(e) => {
                eprintln!("{e}");
                failed += 1;
            }
        }
    }
    Ok(i32::from(failed > 0))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildKb { o } => cmd_build_kb(o),
        Command::Index { o, countries } => cmd_index(o, countries),
        Command::Ask {
            o,
            id,
            locale,
            dataset,
            track,
            question,
        } => cmd_ask(o, id.clone(), *locale, dataset.clone(), *track, question.clone()),
        Command::RunTrack { o, dataset, track, out } => cmd_run_track(o, dataset, *track, out),
        Command::Evaluate {
            o,
            dataset,
            track,
            predictions,
            scheme,
            truncate,
            out,
        } => cmd_evaluate(o, dataset, *track, predictions, *scheme, *truncate, out.as_deref()),
        Command::Ablate {
            o,
            dataset,
            track,
            out,
            prompts,
        } => cmd_ablate(o, dataset, *track, out, prompts),
        Command::FetchWiki {
            lang,
            out,
            titles,
            url_template,
        } => cmd_fetch_wiki(lang, out, titles, url_template),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
