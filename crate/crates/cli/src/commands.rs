use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use trialsynth::analysis::{self, PairMode};
use trialsynth::corpus::{self, LabeledCorpus};
use trialsynth::datasets::{self, ExperimentKind, RatioConfig};
use trialsynth::llm_gateway::{load_mock_fixture, HttpTransport, LlmClient, MockFixture, RetryPolicy, Transport};
use trialsynth::metrics;
use trialsynth::pipeline::{self, Clock, FixedClock, GenerationPlan, Generator, SystemClock};
use trialsynth::retrieval;

use crate::config::{existing, parse_label_policy, RunConfig};
use crate::{AnalyzeArgs, Cli, Command, EvaluateArgs, GenerateArgs, IngestArgs, KindArg, RetrieveArgs, SplitArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => ingest(&mut config, args),
        Command::Retrieve(args) => retrieve(&mut config, args),
        Command::Generate(args) => generate(&mut config, args),
        Command::Split(args) => split(&mut config, args),
        Command::Evaluate(args) => evaluate(&mut config, args),
        Command::Analyze(args) => analyze(&mut config, args),
    }
}

fn output_dir(config: &mut RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = flag {
        config.paths.output = dir;
    }
    let dir = config.paths.output.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Record one command's resolved config and results under its name in
/// `<dir>/manifest.json`, keeping entries written by other commands.
fn record_manifest(dir: &Path, command: &str, config: &RunConfig, details: Value) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut manifest: BTreeMap<String, Value> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Err(_) => BTreeMap::new(),
    };
    let mut entry = json!({ "config": config });
    if let (Value::Object(e), Value::Object(d)) = (&mut entry, details) {
        e.extend(d);
    }
    manifest.insert(command.to_string(), entry);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn load_corpus(path: &Path) -> Result<LabeledCorpus> {
    Ok(LabeledCorpus::load(path)?)
}

fn ingest(config: &mut RunConfig, args: IngestArgs) -> Result<()> {
    if args.xml.is_some() {
        config.paths.xml = args.xml;
    }
    if args.labels.is_some() {
        config.paths.labels = args.labels;
    }
    let xml = existing(config.paths.xml.as_deref(), "XML source")?;
    let labels_path = existing(config.paths.labels.as_deref(), "labels file")?;
    let dir = output_dir(config, args.out_dir)?;
    let out = args.out.unwrap_or_else(|| dir.join("corpus.jsonl"));

    let report = corpus::load_records(&xml)?;
    for (name, err) in &report.failures {
        log::warn!("skipping {name}: {err}");
    }
    let parsed = report.records.len();
    let labels = corpus::load_labels(&labels_path)?;
    let labeled = corpus::build_labeled_corpus(report.records, &labels)?;
    labeled.save(&out)?;
    println!("wrote {} labeled trials to {}", labeled.len(), out.display());

    record_manifest(
        &dir,
        "ingest",
        config,
        json!({
            "outputs": [display(&out)],
            "parsed_records": parsed,
            "failed_records": report.failures.iter().map(|(n, e)| json!({"source": n, "error": e.to_string()})).collect::<Vec<_>>(),
            "labeled_trials": labeled.len(),
        }),
    )
}

fn retrieve(config: &mut RunConfig, args: RetrieveArgs) -> Result<()> {
    if args.vocab.is_some() {
        config.paths.vocab = args.vocab;
    }
    if let Some(n) = args.min_successes {
        config.plan.min_successes = n;
    }
    if let Some(n) = args.min_failures {
        config.plan.min_failures = n;
    }
    let dir = output_dir(config, args.out_dir)?;
    let corpus_path = existing(Some(&args.corpus.unwrap_or_else(|| dir.join("corpus.jsonl"))), "corpus")?;
    let vocab_path = existing(config.paths.vocab.as_deref(), "drug vocabulary")?;

    let corpus = load_corpus(&corpus_path)?;
    let vocab = retrieval::load_drug_vocab(&vocab_path)?;
    let index = retrieval::index_by_intervention(&corpus, &vocab);
    let eligible = retrieval::eligible_interventions(&index, config.plan.min_successes, config.plan.min_failures);
    let out = dir.join("eligibility.csv");
    retrieval::write_eligibility_report(&index, &eligible, create(&out)?)?;
    println!(
        "{} of {} drug interventions are eligible; report at {}",
        eligible.len(),
        index.len(),
        out.display()
    );
    record_manifest(
        &dir,
        "retrieve",
        config,
        json!({
            "inputs": [display(&corpus_path), display(&vocab_path)],
            "outputs": [display(&out)],
            "eligible_interventions": eligible,
        }),
    )
}

fn build_transport(config: &RunConfig) -> Result<(Arc<dyn Transport>, bool, bool)> {
    if let Some(path) = &config.llm.mock_fixture {
        let fixture = load_mock_fixture(path)?;
        let scripted = matches!(fixture, MockFixture::Scripted(_));
        return Ok((fixture.into_transport(), true, scripted));
    }
    let http = HttpTransport::from_env(
        &config.llm.base_url,
        &config.llm.api_key_env,
        Duration::from_secs(config.llm.timeout_secs),
    )?;
    Ok((Arc::new(http), false, false))
}

fn generate(config: &mut RunConfig, args: GenerateArgs) -> Result<()> {
    if args.vocab.is_some() {
        config.paths.vocab = args.vocab;
    }
    if let Some(n) = args.total {
        config.plan.total_trials = n;
    }
    if args.per_intervention_cap.is_some() {
        config.plan.per_intervention_cap = args.per_intervention_cap;
    }
    if let Some(p) = args.label_policy {
        config.plan.label_policy = p;
    }
    if args.mock.is_some() {
        config.llm.mock_fixture = args.mock;
    }
    if let Some(m) = args.model {
        config.llm.model = m;
    }
    if let Some(t) = args.temperature {
        config.llm.temperature = t;
    }
    if let Some(u) = args.base_url {
        config.llm.base_url = u;
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    let seed = config.seeds[0];
    let dir = output_dir(config, args.out_dir)?;
    let corpus_path = existing(Some(&args.corpus.unwrap_or_else(|| dir.join("corpus.jsonl"))), "corpus")?;
    let vocab_path = existing(config.paths.vocab.as_deref(), "drug vocabulary")?;
    let corpus = load_corpus(&corpus_path)?;
    let vocab = retrieval::load_drug_vocab(&vocab_path)?;

    let (transport, mock, scripted) = build_transport(config)?;
    let retry = if mock {
        RetryPolicy::immediate(config.llm.retry_attempts)
    } else {
        RetryPolicy {
            max_attempts: config.llm.retry_attempts,
            base_delay: Duration::from_millis(config.llm.retry_base_delay_ms),
            ..RetryPolicy::default()
        }
    };
    let client = LlmClient::new(transport)
        .with_budget(config.llm.token_budget)
        .with_retry(retry)
        .with_max_in_flight(config.llm.max_in_flight);
    let clock: Arc<dyn Clock> = if mock {
        Arc::new(FixedClock::default())
    } else {
        Arc::new(SystemClock)
    };
    let mut generator = Generator::new(Arc::new(client))
        .with_clock(clock)
        .with_model(config.llm.model.clone(), config.llm.temperature)
        .with_workers(if scripted { 1 } else { config.llm.max_in_flight });
    generator.max_output_tokens = config.llm.max_output_tokens;

    let plan = GenerationPlan {
        per_intervention_cap: config.plan.per_intervention_cap,
        label_policy: parse_label_policy(&config.plan.label_policy)?,
        min_successes: config.plan.min_successes,
        min_failures: config.plan.min_failures,
        ..GenerationPlan::new(config.plan.total_trials, seed)
    };
    let run = pipeline::run_generation(&corpus, &vocab, &plan, &generator)?;

    let out = dir.join("synthetic.jsonl");
    pipeline::export_synthetic(&run.corpus, &out)?;
    let run_path = dir.join("generation_run.json");
    let mut run_json = serde_json::to_string_pretty(&run.manifest)?;
    run_json.push('\n');
    fs::write(&run_path, run_json).with_context(|| format!("writing {}", run_path.display()))?;
    println!(
        "generated {} synthetic trials ({} failed units); wrote {}",
        run.manifest.generated,
        run.manifest.failed,
        out.display()
    );
    record_manifest(
        &dir,
        "generate",
        config,
        json!({
            "seed": seed,
            "mock": mock,
            "inputs": [display(&corpus_path), display(&vocab_path)],
            "outputs": [display(&out), display(&run_path)],
            "generated": run.manifest.generated,
            "failed": run.manifest.failed,
            "intervention_names": run.corpus.intervention_names(),
        }),
    )
}

fn split(config: &mut RunConfig, args: SplitArgs) -> Result<()> {
    if !args.seeds.is_empty() {
        config.seeds = args.seeds;
    }
    config.validate()?;
    let dir = output_dir(config, args.out_dir)?;
    let corpus_path = existing(Some(&args.corpus.unwrap_or_else(|| dir.join("corpus.jsonl"))), "corpus")?;
    let synthetic_path = existing(
        Some(&args.synthetic.unwrap_or_else(|| dir.join("synthetic.jsonl"))),
        "synthetic corpus",
    )?;
    let corpus = load_corpus(&corpus_path)?;
    let synthetic = pipeline::import_synthetic(&synthetic_path)?;
    let partition = datasets::partition_ab(&corpus, synthetic.intervention_names());
    let synthetic_items = datasets::synthetic_items(&synthetic);
    let mut ratio = RatioConfig::default();
    if let Some(n) = args.ratio_train_size {
        ratio.train_size = n;
    }
    if let Some(n) = args.ratio_eval_size {
        ratio.eval_size = n;
    }
    let kinds: Vec<ExperimentKind> = if args.kind.is_empty() {
        vec![
            ExperimentKind::InDistribution,
            ExperimentKind::Ratio,
            ExperimentKind::Generalization,
        ]
    } else {
        args.kind
            .iter()
            .map(|k| match k {
                KindArg::InDistribution => ExperimentKind::InDistribution,
                KindArg::Ratio => ExperimentKind::Ratio,
                KindArg::Generalization => ExperimentKind::Generalization,
            })
            .collect()
    };

    let mut outputs = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = dir.join("splits").join(format!("seed_{seed}"));
        for &kind in &kinds {
            let specs = datasets::build_experiment(kind, &partition, &synthetic_items, seed, &ratio)
                .with_context(|| format!("{} experiment, seed {seed}", kind.as_str()))?;
            outputs.extend(
                datasets::write_split_manifests(&seed_dir, &specs)?
                    .iter()
                    .map(|p| display(p)),
            );
        }
    }
    println!(
        "partition: {} trials share a synthetic intervention, {} do not; wrote {} split manifests",
        partition.set_a.len(),
        partition.set_b.len(),
        outputs.len()
    );
    record_manifest(
        &dir,
        "split",
        config,
        json!({
            "seeds": config.seeds,
            "inputs": [display(&corpus_path), display(&synthetic_path)],
            "ratio": ratio,
            "set_a": partition.set_a.len(),
            "set_b": partition.set_b.len(),
            "outputs": outputs,
        }),
    )
}

/// Seed in a file name such as `preds_seed41.csv` or `seed-40.csv`.
fn seed_from_name(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    let at = stem.rfind("seed")?;
    let digits: String = stem[at + 4..]
        .trim_start_matches(['_', '-'])
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

fn evaluate(config: &mut RunConfig, args: EvaluateArgs) -> Result<()> {
    let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
    let mut add = |name: &str, path: PathBuf| match groups.iter_mut().find(|(n, _)| n == name) {
        Some((_, paths)) => paths.push(path),
        None => groups.push((name.to_string(), vec![path])),
    };
    for path in args.predictions {
        add(&args.name, path);
    }
    for spec in &args.runs {
        let Some((name, path)) = spec.split_once('=') else {
            bail!("--run expects NAME=PATH, got {spec:?}");
        };
        add(name, PathBuf::from(path));
    }
    if groups.is_empty() {
        bail!("no prediction files given");
    }

    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (name, paths) in &groups {
        let mut reports = Vec::new();
        for path in paths {
            let preds = metrics::load_predictions(path).with_context(|| display(path))?;
            let report =
                metrics::evaluate(&preds, args.threshold, seed_from_name(path)).with_context(|| display(path))?;
            details.push(json!({"fine_tuning": name, "file": display(path), "report": report}));
            reports.push(report);
        }
        rows.push((name.clone(), metrics::aggregate(&reports)?));
    }
    let out = match args.out {
        Some(p) => p,
        None => output_dir(config, None)?.join("report.csv"),
    };
    metrics::write_report_csv(&rows, create(&out)?)?;
    println!("wrote {} report row(s) to {}", rows.len(), out.display());
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    record_manifest(
        dir,
        "evaluate",
        config,
        json!({
            "threshold": args.threshold,
            "runs": details,
            "outputs": [display(&out)],
        }),
    )
}

fn analyze(config: &mut RunConfig, args: AnalyzeArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    let seed = config.seeds[0];
    let dir = output_dir(config, args.out_dir)?;
    let real = analysis::load_embeddings(&existing(Some(&args.real), "real embeddings")?)?;
    let synthetic = analysis::load_embeddings(&existing(Some(&args.synthetic), "synthetic embeddings")?)?;

    let mut samples = Vec::new();
    for (i, mode) in PairMode::ALL.into_iter().enumerate() {
        let (a, b) = match mode {
            PairMode::RealReal => (&real, None),
            PairMode::SynSyn => (&synthetic, None),
            PairMode::RealSyn => (&real, Some(&synthetic)),
        };
        samples.push(analysis::sample_pairs(
            a,
            b,
            mode,
            args.pairs,
            seed.wrapping_add(i as u64),
        )?);
    }
    let pairs_path = dir.join("pairs.csv");
    analysis::write_pairs_csv(&samples, create(&pairs_path)?)?;
    let mut outputs = vec![display(&pairs_path)];
    let mut summary = BTreeMap::new();
    for s in &samples {
        let h = analysis::similarity_histogram(s, args.bins);
        let path = dir.join(format!("histogram_{}.csv", s.mode.as_str()));
        analysis::write_histogram_csv(&h, create(&path)?)?;
        outputs.push(display(&path));
        let mean = s.similarities.iter().sum::<f64>() / s.len().max(1) as f64;
        summary.insert(
            s.mode.as_str(),
            json!({"pairs": s.len(), "mean_similarity": format!("{mean:.6}")}),
        );
    }
    println!("wrote {} similarity pairs per mode to {}", args.pairs, dir.display());
    record_manifest(
        &dir,
        "analyze",
        config,
        json!({
            "seed": seed,
            "bins": args.bins,
            "inputs": [display(&args.real), display(&args.synthetic)],
            "modes": summary,
            "outputs": outputs,
        }),
    )
}
