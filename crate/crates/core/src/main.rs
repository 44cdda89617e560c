use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use tactile_dog::actions::ActionTable;
use tactile_dog::classifier::{evaluate, render_confusion_png, train_classifier, Classifier, ClassifierConfig};
use tactile_dog::frame::container::{read_dataset, write_dataset};
use tactile_dog::pipeline::protocol::InfoMessage;
use tactile_dog::pipeline::{
    diff_decisions, read_session_log, replay, spawn_demo, DemoSource, Engine, Models, Record, Runtime, RuntimeOptions,
    SegmenterConfig, Service, ServiceOptions,
};
use tactile_dog::sim::{generate_dataset, split_stratified, Fraction, NoiseModel, Subset, Synthesizer, WindowSource};
use tactile_dog::taxonomy::Taxonomy;
use tactile_dog::translator::{
    evaluate_translator, generate_corpus, make_pair_dataset, read_corpus, train_translator, write_corpus,
    GrammarConfig, InteractionPair, Sentence, Translator, TranslatorConfig,
};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "tactile-dog",
    version,
    about = "Tactile gesture recognition and robot-dog action pipeline"
)]
struct Cli {
    /// Taxonomy TOML (defaults to the built-in one).
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a gesture-window dataset and/or an interaction corpus.
    Synth(SynthArgs),
    /// Train the gesture classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Report classifier accuracy and the confusion matrix.
    EvalClassifier(EvalClassifierArgs),
    /// Train the gesture-to-action translator.
    TrainTranslator(TrainTranslatorArgs),
    /// Report translator BLEU on a corpus.
    EvalTranslator(EvalTranslatorArgs),
    /// Translate a gesture sentence into actions.
    Translate(TranslateArgs),
    /// Run the live pipeline behind the TCP/WebSocket service.
    Serve(ServeArgs),
    /// Re-run a session log and check the decisions match.
    Replay(ReplayArgs),
    /// Serve with a built-in simulated touch source.
    Demo(DemoArgs),
}

#[derive(Args, Clone)]
struct SynthSource {
    /// Windows per class and actor.
    #[arg(long, default_value_t = 20)]
    per_class: u32,
    #[arg(long, default_value_t = 3)]
    actors: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise profile: none, standard or heavy.
    #[arg(long, default_value = "standard")]
    noise: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset container to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SynthSource,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Interaction corpus (TSV) to write.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1212)]
    pairs: usize,
    /// Share of gestures with a secondary reaction in the corpus grammar.
    #[arg(long, default_value_t = 0.0)]
    grammar_noise: f64,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset container; synthesized in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthSource,
    /// Training share of the stratified split.
    #[arg(long, default_value = "9/10")]
    train_fraction: Fraction,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[command(flatten)]
    data: DataArgs,
    /// desk or resnet34.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// TOML file overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalClassifierArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Evaluate every window instead of the held-out split.
    #[arg(long)]
    all: bool,
    /// Write a confusion-matrix PNG.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus TSV; generated from the grammar when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1212)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    grammar_noise: f64,
    #[arg(long, default_value = "5/6")]
    train_fraction: Fraction,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainTranslatorArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// TOML file overriding the default configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalTranslatorArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Gesture words, oldest first.
    #[arg(required = true)]
    words: Vec<String>,
}

#[derive(Args, Clone)]
struct SegmentationArgs {
    #[arg(long, default_value_t = 8)]
    threshold: u8,
    #[arg(long, default_value_t = 3)]
    min_active: usize,
    #[arg(long, default_value_t = 5)]
    idle_gap: usize,
    #[arg(long, default_value_t = 40)]
    min_mass: u32,
}

impl SegmentationArgs {
    fn config(&self) -> SegmenterConfig {
        SegmenterConfig {
            threshold: self.threshold,
            min_active: self.min_active,
            idle_gap: self.idle_gap,
            min_mass: self.min_mass,
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    translator: Option<PathBuf>,
    /// Action table TOML (defaults to the built-in one).
    #[arg(long)]
    action_table: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    segmentation: SegmentationArgs,
    /// Directory of UI assets to serve over HTTP.
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Session log to write.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    frame_queue: usize,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Tick-rate multiplier; `inf` replays unpaced.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    segmentation: SegmentationArgs,
    /// Print every decision record as JSON.
    #[arg(long)]
    print: bool,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    serve: ServeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "standard")]
    noise: String,
}

fn at(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| at(path, e).into())
}

fn load_taxonomy(path: Option<&Path>) -> Result<Arc<Taxonomy>> {
    Ok(Arc::new(match path {
        Some(p) => Taxonomy::from_toml(&std::fs::read_to_string(p).map_err(|e| at(p, e))?)?,
        None => Taxonomy::load_default(),
    }))
}

fn noise(name: &str, seed: u64) -> Result<NoiseModel> {
    NoiseModel::profile(name, seed).ok_or_else(|| format!("unknown noise profile {name:?}").into())
}

fn plan(tax: &Arc<Taxonomy>, s: &SynthSource) -> Result<tactile_dog::sim::DatasetPlan> {
    let synth = Arc::new(Synthesizer::with_defaults(tax.clone()));
    Ok(generate_dataset(
        synth,
        s.per_class,
        s.actors,
        s.seed,
        noise(&s.noise, s.seed)?,
    ))
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_synth(tax: Arc<Taxonomy>, a: SynthArgs) -> Result<()> {
    if a.out.is_none() && a.corpus.is_none() {
        return Err("nothing to do: pass --out and/or --corpus".into());
    }
    if let Some(out) = &a.out {
        let plan = plan(&tax, &a.source)?;
        let t = if a.threads == 0 { threads() } else { a.threads };
        let windows = plan.materialize(t);
        let n = write_dataset(BufWriter::new(File::create(out)?), windows)?;
        let manifest = out.with_extension("manifest.json");
        std::fs::write(&manifest, serde_json::to_string_pretty(plan.manifest())?)?;
        println!(
            "wrote {n} windows to {} (manifest {})",
            out.display(),
            manifest.display()
        );
    }
    if let Some(path) = &a.corpus {
        let cfg = GrammarConfig {
            pairs: a.pairs,
            noise: a.grammar_noise,
            seed: a.source.seed,
            ..Default::default()
        };
        let pairs = generate_corpus(&tax, &cfg)?;
        write_corpus(BufWriter::new(File::create(path)?), &pairs, &tax)?;
        println!("wrote {} pairs to {}", pairs.len(), path.display());
    }
    Ok(())
}

enum Windows {
    Plan(tactile_dog::sim::DatasetPlan),
    Loaded(Vec<tactile_dog::frame::GestureWindow>),
}

impl Windows {
    fn load(tax: &Arc<Taxonomy>, a: &DataArgs) -> Result<Self> {
        Ok(match &a.data {
            Some(p) => Windows::Loaded(read_dataset(BufReader::new(open(p)?))?),
            None => Windows::Plan(plan(tax, &a.synth)?),
        })
    }

    fn source(&self) -> &dyn WindowSource {
        match self {
            Windows::Plan(p) => p,
            Windows::Loaded(w) => w,
        }
    }
}

fn split(src: &dyn WindowSource, a: &DataArgs) -> (Vec<usize>, Vec<usize>) {
    let labels: Vec<_> = (0..src.len()).map(|i| src.label(i)).collect();
    split_stratified(&labels, a.train_fraction, a.split_seed)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
}

fn cmd_train_classifier(tax: Arc<Taxonomy>, a: TrainClassifierArgs) -> Result<()> {
    let mut config = match (&a.config, a.preset.as_str()) {
        (Some(p), _) => read_toml(p)?,
        (None, "desk") => ClassifierConfig::desk(),
        (None, "resnet34") => ClassifierConfig::resnet34(),
        (None, other) => return Err(format!("unknown preset {other:?}").into()),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let data = Windows::load(&tax, &a.data)?;
    let src = data.source();
    let (train, test) = split(src, &a.data);
    let mut model = Classifier::build(config, &tax)?;
    println!(
        "{} parameters, {} training / {} held-out windows",
        model.parameter_count(),
        train.len(),
        test.len()
    );
    let train_set = Subset::new(src, train);
    train_classifier(&mut model, &train_set, |e| {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.3}  lr {:.2e}  {:.1}s",
            e.epoch, e.mean_loss, e.running_accuracy, e.learning_rate, e.seconds
        )
    })?;
    model.save(&a.out, &tax)?;
    if !test.is_empty() {
        let report = evaluate(&model, &Subset::new(src, test), 64)?;
        println!("held-out accuracy {:.4} on {} windows", report.accuracy, report.samples);
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_eval_classifier(tax: Arc<Taxonomy>, a: EvalClassifierArgs) -> Result<()> {
    let model = Classifier::load(&a.model, &tax).map_err(|e| at(&a.model, e))?;
    let data = Windows::load(&tax, &a.data)?;
    let src = data.source();
    let indices = if a.all {
        (0..src.len()).collect()
    } else {
        split(src, &a.data).1
    };
    let report = evaluate(&model, &Subset::new(src, indices), 64)?;
    println!("accuracy {:.4} on {} windows", report.accuracy, report.samples);
    let weakest = report
        .recall
        .iter()
        .enumerate()
        .filter_map(|(c, r)| r.map(|r| (c, r)))
        .filter(|&(_, r)| r < 1.0);
    for (c, r) in weakest {
        println!(
            "  {:<28} recall {:.3}",
            tax.class_token(tactile_dog::taxonomy::ClassId(c)),
            r
        );
    }
    if let Some(p) = &a.confusion {
        render_confusion_png(&report, p, 6)?;
        println!("confusion matrix written to {}", p.display());
    }
    Ok(())
}

fn corpus(tax: &Taxonomy, a: &CorpusArgs) -> Result<(Vec<InteractionPair>, Vec<InteractionPair>, usize)> {
    let pairs = match &a.corpus {
        Some(p) => read_corpus(BufReader::new(open(p)?), tax)?,
        None => generate_corpus(
            tax,
            &GrammarConfig {
                pairs: a.pairs,
                noise: a.grammar_noise,
                seed: a.seed,
                ..Default::default()
            },
        )?,
    };
    let n = pairs.len();
    let (train, test) = make_pair_dataset(&pairs, a.train_fraction, a.split_seed);
    Ok((train, test, n))
}

fn cmd_train_translator(tax: Arc<Taxonomy>, a: TrainTranslatorArgs) -> Result<()> {
    let mut config: TranslatorConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TranslatorConfig::default(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let (train, test, _) = corpus(&tax, &a.corpus)?;
    let mut model = Translator::build(config, &tax)?;
    println!(
        "{} parameters, {} training / {} held-out pairs",
        model.parameter_count(),
        train.len(),
        test.len()
    );
    train_translator(&mut model, &train, |e| {
        if e.epoch % 10 == 0 || e.epoch == 1 {
            println!(
                "epoch {:>3}  loss {:.4}  token acc {:.3}  {:.2}s",
                e.epoch, e.mean_loss, e.token_accuracy, e.seconds
            );
        }
    })?;
    model.save(&a.out, &tax)?;
    if !test.is_empty() {
        let r = evaluate_translator(&model, &test)?;
        println!(
            "held-out BLEU-1 {:.4}  BLEU-4 {:.4}  exact {:.3}",
            r.bleu[0], r.bleu[3], r.exact_match
        );
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_eval_translator(tax: Arc<Taxonomy>, a: EvalTranslatorArgs) -> Result<()> {
    let model = Translator::load(&a.model, &tax).map_err(|e| at(&a.model, e))?;
    let (train, test, _) = corpus(&tax, &a.corpus)?;
    let pairs = if a.all { [train, test].concat() } else { test };
    let r = evaluate_translator(&model, &pairs)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn cmd_translate(tax: Arc<Taxonomy>, a: TranslateArgs) -> Result<()> {
    let model = Translator::load(&a.model, &tax).map_err(|e| at(&a.model, e))?;
    let source = Sentence::from_words(&a.words, tax.gesture_vocab())?;
    let decoded = model.translate(&source)?;
    println!("{}", decoded.sentence.words(tax.action_vocab()).join(" "));
    let history = a
        .words
        .iter()
        .map(|w| tax.class_by_token(w))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let p = model.predict_action(&history, &tax)?;
    println!(
        "next action: {}{}",
        tax.action(p.action).name,
        if p.fallback { " (fallback)" } else { "" }
    );
    Ok(())
}

/// Loads checkpoints; missing ones are replaced by untrained models when
/// `allow_fresh` is set.
fn load_models(tax: &Arc<Taxonomy>, m: &ModelArgs, allow_fresh: bool) -> Result<Models> {
    let classifier = match &m.classifier {
        Some(p) => Classifier::load(p, tax).map_err(|e| at(p, e))?,
        None if allow_fresh => {
            log::warn!("no classifier checkpoint; using an untrained desk classifier");
            Classifier::build(ClassifierConfig::desk(), tax)?
        }
        None => return Err("--classifier is required".into()),
    };
    let translator = match &m.translator {
        Some(p) => Translator::load(p, tax).map_err(|e| at(p, e))?,
        None if allow_fresh => {
            log::warn!("no translator checkpoint; using an untrained translator");
            Translator::build(TranslatorConfig::default(), tax)?
        }
        None => return Err("--translator is required".into()),
    };
    let actions = match &m.action_table {
        Some(p) => ActionTable::from_toml(&std::fs::read_to_string(p).map_err(|e| at(p, e))?, tax.clone())?,
        None => ActionTable::load_default(tax.clone()),
    };
    Ok(Models::new(tax.clone(), classifier, translator, actions)?)
}

fn start_service(tax: &Arc<Taxonomy>, a: &ServeArgs, allow_fresh: bool) -> Result<Service> {
    let models = load_models(tax, &a.models, allow_fresh)?;
    let seg = a.segmentation.config();
    let runtime = Runtime::start(
        Engine::new(models, seg),
        RuntimeOptions {
            frame_queue: a.frame_queue,
            log_path: a.log.clone(),
            ..Default::default()
        },
    )?;
    let service = Service::start(
        Arc::new(runtime),
        InfoMessage::new(tax, seg),
        ServiceOptions {
            bind: a.bind.clone(),
            ui_dir: a.ui.clone(),
            ..Default::default()
        },
    )?;
    println!("listening on {}", service.local_addr());
    Ok(service)
}

fn run_until_done(service: Service, duration: Option<f64>) -> Result<()> {
    let started = Instant::now();
    loop {
        std::thread::sleep(Duration::from_millis(200));
        if duration.is_some_and(|d| started.elapsed().as_secs_f64() >= d) {
            break;
        }
    }
    let summary = service.shutdown()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_serve(tax: Arc<Taxonomy>, a: ServeArgs) -> Result<()> {
    let service = start_service(&tax, &a, false)?;
    run_until_done(service, a.duration)
}

fn cmd_demo(tax: Arc<Taxonomy>, a: DemoArgs) -> Result<()> {
    let service = start_service(&tax, &a.serve, true)?;
    let source = DemoSource::new(
        Synthesizer::with_defaults(tax.clone()),
        noise(&a.noise, a.seed)?,
        a.seed,
    );
    let stop = Arc::new(AtomicBool::new(false));
    let demo = spawn_demo(service.runtime().clone(), source, stop.clone())?;
    let result = run_until_done(service, a.serve.duration);
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    let _ = demo.join();
    result
}

fn cmd_replay(tax: Arc<Taxonomy>, a: ReplayArgs) -> Result<bool> {
    let log = read_session_log(BufReader::new(open(&a.log)?))?;
    if log.is_empty() {
        println!("empty session log");
        return Ok(true);
    }
    let models = load_models(&tax, &a.models, false)?;
    let mut engine = Engine::new(models, a.segmentation.config());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let outcome = replay(&log, &mut engine, a.speed, |r| {
        if a.print && !r.is_frame() {
            let json = match r {
                Record::Gesture(g) => serde_json::to_string(g),
                Record::Action(x) => serde_json::to_string(x),
                Record::Rejection(x) => serde_json::to_string(x),
                Record::Frame(_) => unreachable!(),
            };
            let _ = writeln!(out, "{}", json.expect("records serialize"));
        }
    })?;
    println!(
        "replayed {} frames in {:.2}s, max event latency {:.1} ms",
        outcome.frames,
        outcome.elapsed.as_secs_f64(),
        outcome.max_event_latency().as_secs_f64() * 1e3
    );
    match diff_decisions(&log, &outcome.records) {
        None => {
            println!("decisions identical");
            Ok(true)
        }
        Some(d) => {
            println!("decisions differ: {d}");
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        let tax = load_taxonomy(cli.taxonomy.as_deref())?;
        match cli.command {
            Command::Synth(a) => cmd_synth(tax, a)?,
            Command::TrainClassifier(a) => cmd_train_classifier(tax, a)?,
            Command::EvalClassifier(a) => cmd_eval_classifier(tax, a)?,
            Command::TrainTranslator(a) => cmd_train_translator(tax, a)?,
            Command::EvalTranslator(a) => cmd_eval_translator(tax, a)?,
            Command::Translate(a) => cmd_translate(tax, a)?,
            Command::Serve(a) => cmd_serve(tax, a)?,
            Command::Replay(a) => return cmd_replay(tax, a),
            Command::Demo(a) => cmd_demo(tax, a)?,
        }
        Ok(true)
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
