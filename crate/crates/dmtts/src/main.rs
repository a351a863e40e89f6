//! Single driver binary: corpus generation, staged training, RL
//! post-training, synthesis, benchmarking and evaluation as subcommands.
//!
//! Every subcommand funnels its randomness through one `--seed` (env
//! override `DMTTS_SEED`) into the library's named sub-streams, so a rerun
//! with the same flags reproduces its artifacts byte for byte. Wall-clock
//! benchmark numbers are the one exception and are kept in a separate
//! opt-in artifact. Exit codes: 0 success, 2 usage or config errors, 1
//! anything else.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use dmtts::corpus::generate::{Corpus, CorpusConfig, Quality};
use dmtts::error::{Error, Result};
use dmtts::eval::{evaluate, render_metrics, write_metrics_reports, EvalConfig, EvalMode, ReportFormat};
use dmtts::model::ckpt::{load_checkpoint, save_checkpoint};
use dmtts::model::config::ModelConfig;
use dmtts::model::decode::greedy_decode;
use dmtts::model::params::init_params;
use dmtts::provenance::Provenance;
use dmtts::rlpost::policy::RlConfig;
use dmtts::rlpost::update::{hierarchical_rl, write_reward_curve};
use dmtts::serve::{
    bench_with_precision, pages_for, render_wav, write_wav, BenchConfig, Engine, Precision,
    PoolConfig, StepOutcome, SAMPLE_RATE, SAMPLES_PER_TOKEN,
};
use dmtts::train::stage::{
    default_stage_config, speaker_finetune, train_stage, write_loss_curve, Stage, StageConfig,
};

#[derive(Parser)]
#[command(name = "dmtts", version, about = "Dialectal spontaneous TTS on discrete tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dialect corpus.
    GenData(GenDataArgs),
    /// Run one training stage, or pretrain and finetune chained.
    Train(TrainArgs),
    /// Hierarchical RL post-training on a finetuned checkpoint.
    RlTune(RlTuneArgs),
    /// Synthesize speech tokens (and optionally a WAV) from text.
    Synth(SynthArgs),
    /// Offline-vs-streaming latency and quality benchmark.
    Bench(BenchArgs),
    /// Held-out evaluation with oracle WER and timbre similarity.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for corpus.tsv + header.json.
    #[arg(long)]
    out: PathBuf,
    /// Corpus config JSON; omitted = built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, env = "DMTTS_SEED")]
    seed: Option<u64>,
    /// Overwrite existing corpus files.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Pretrain,
    Finetune,
    SpeakerFt,
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory written by gen-data.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and loss curves.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Checkpoint to continue from (required for finetune and speaker-ft).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Model dimensions JSON (ignored when --init supplies a model).
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Speakers to adapt to (speaker-ft; default: the corpus's zero-shot
    /// pool).
    #[arg(long, value_delimiter = ',')]
    speakers: Vec<u32>,
    /// Timbre-prompt length range during training.
    #[arg(long)]
    prompt_len_min: Option<usize>,
    #[arg(long)]
    prompt_len_max: Option<usize>,
    #[arg(long, env = "DMTTS_SEED", default_value_t = 0)]
    seed: u64,
    /// Overwrite existing checkpoints and curves.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RlTuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Finetuned checkpoint to post-train.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// RL config JSON; omitted = built-in defaults.
    #[arg(long)]
    rl_config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, env = "DMTTS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Text token ids, space or comma separated.
    #[arg(long)]
    text: String,
    #[arg(long)]
    dialect: u32,
    /// JSON array of speech tokens used as the timbre prompt.
    #[arg(long)]
    speaker_prompt_file: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    max_new: usize,
    /// Decode through the paged streaming engine, printing tokens as they
    /// are produced.
    #[arg(long)]
    stream: bool,
    /// KV-cache page size for --stream.
    #[arg(long, default_value_t = 16)]
    page_size: usize,
    /// Also render the tokens to a 16 kHz mono WAV.
    #[arg(long)]
    wav: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Workload config JSON; omitted = built-in defaults.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Write the seed-deterministic quality report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the full report including wall-clock timings here (not
    /// reproducible by nature).
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Stream with float weights instead of int8.
    #[arg(long)]
    no_quantize: bool,
    /// Overrides the workload's seed.
    #[arg(long, env = "DMTTS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    ZeroShot,
    SpeakerFt,
    UnifiedVsSpecialist,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Directory for eval_<mode>_<seed>.txt / .json.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    clips: usize,
    #[arg(long, value_delimiter = ',')]
    dialects: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    speakers: Vec<u32>,
    #[arg(long, default_value_t = 50)]
    prompt_len_min: usize,
    #[arg(long, default_value_t = 150)]
    prompt_len_max: usize,
    #[arg(long, default_value_t = 64)]
    max_new: usize,
    #[arg(long, env = "DMTTS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::RlTune(a) => rl_tune(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("dmtts: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Parses a JSON config file, naming the path in every failure.
fn read_json_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

/// Refuses to clobber an existing artifact unless forced.
fn guard_artifact(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_json_artifact<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    guard_artifact(path, force)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    std::fs::write(path, body)?;
    Ok(())
}

fn parse_ids(s: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for tok in s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
        out.push(
            tok.parse::<u32>()
                .map_err(|_| Error::Config(format!("bad token id {tok:?}")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Config("empty token list".into()));
    }
    Ok(out)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: CorpusConfig = match &a.config {
        Some(p) => read_json_config(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    guard_artifact(&a.out.join("header.json"), a.force)?;
    guard_artifact(&a.out.join("corpus.tsv"), a.force)?;
    let corpus = dmtts::corpus::generate::generate_corpus(&cfg)?;
    corpus.save(&a.out)?;

    let mut fine = 0usize;
    let mut weak = 0usize;
    let mut per_dialect = vec![0usize; cfg.n_dialects as usize];
    for u in &corpus.utterances {
        per_dialect[u.dialect_id as usize] += 1;
        match u.quality {
            Quality::Fine => fine += 1,
            Quality::Weak => weak += 1,
        }
    }
    println!("corpus written to {}", a.out.display());
    println!(
        "seed {}  dialects {}  speakers {} ({} zero-shot)  utterances {}",
        cfg.seed, cfg.n_dialects, cfg.n_speakers, cfg.n_zero_shot_speakers, cfg.n_utterances
    );
    println!("quality: {fine} fine, {weak} weak");
    for (d, n) in per_dialect.iter().enumerate() {
        println!("dialect {d}: {n} utterances");
    }
    let split = corpus.split();
    println!(
        "split: {} train, {} held-out fine, {} sft-train, {} sft-eval",
        split.train.len(),
        split.heldout_fine.len(),
        split.sft_train.len(),
        split.sft_eval.len()
    );
    Ok(())
}

/// Model dimensions accepted from a JSON file; anything omitted falls back
/// to the library default. The vocabulary always comes from the corpus.
#[derive(serde::Deserialize)]
#[serde(default)]
struct ModelDims {
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    n_kv_heads: usize,
    d_ff: usize,
    experts_shared: usize,
    experts_per_dialect: usize,
    top_k: usize,
    m_dialect_tokens: usize,
    max_seq_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelDims {
            n_layers: d.n_layers,
            d_model: d.d_model,
            n_heads: d.n_heads,
            n_kv_heads: d.n_kv_heads,
            d_ff: d.d_ff,
            experts_shared: d.experts_shared,
            experts_per_dialect: d.experts_per_dialect,
            top_k: d.top_k,
            m_dialect_tokens: d.m_dialect_tokens,
            max_seq_len: d.max_seq_len,
        }
    }
}

impl ModelDims {
    fn into_config(self, corpus: &Corpus, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_kv_heads: self.n_kv_heads,
            d_ff: self.d_ff,
            experts_shared: self.experts_shared,
            experts_per_dialect: self.experts_per_dialect,
            top_k: self.top_k,
            m_dialect_tokens: self.m_dialect_tokens,
            max_seq_len: self.max_seq_len,
            vocab: corpus.vocab.clone(),
            seed,
        }
    }
}

/// Stage manifest tying the loss TSV to its provenance triple.
#[derive(Serialize)]
struct TrainManifest {
    provenance: Provenance,
    stage: String,
    steps: usize,
    final_loss: f64,
    checkpoint: String,
    loss_curve: String,
}

fn stage_slug(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
        Stage::SpeakerFt => "speaker_ft",
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let split = corpus.split();

    let (mut params, mc) = match &a.init {
        Some(path) => {
            let (p, header) = load_checkpoint(path)?;
            if header.config.vocab != corpus.vocab {
                return Err(Error::Data(format!(
                    "checkpoint {} was trained on a different vocabulary",
                    path.display()
                )));
            }
            (p, header.config)
        }
        None => {
            if !matches!(a.stage, StageArg::Pretrain | StageArg::All) {
                return Err(Error::Config(
                    "--stage finetune and --stage speaker-ft require --init".into(),
                ));
            }
            let dims: ModelDims = match &a.model_config {
                Some(p) => read_json_config(p)?,
                None => ModelDims::default(),
            };
            let mc = dims.into_config(&corpus, a.seed);
            (init_params(&mc)?, mc)
        }
    };

    let stages: &[Stage] = match a.stage {
        StageArg::Pretrain => &[Stage::Pretrain],
        StageArg::Finetune => &[Stage::Finetune],
        StageArg::SpeakerFt => &[Stage::SpeakerFt],
        StageArg::All => &[Stage::Pretrain, Stage::Finetune],
    };

    std::fs::create_dir_all(&a.out)?;
    for &stage in stages {
        let mut sc: StageConfig = default_stage_config(stage);
        if let Some(s) = a.steps {
            sc.steps = s;
            sc.warmup_steps = (s / 20).max(1) as u64;
        }
        if let Some(b) = a.batch_size {
            sc.batch_size = b;
        }
        if let Some(lr) = a.learning_rate {
            sc.learning_rate = lr;
        }
        if let Some(n) = a.prompt_len_min {
            sc.prompt_len_min = n;
        }
        if let Some(n) = a.prompt_len_max {
            sc.prompt_len_max = n;
        }
        sc.seed = a.seed;

        let slug = stage_slug(stage);
        let ckpt_path = a.out.join(format!("ckpt_{slug}.ckpt"));
        let loss_path = a.out.join(format!("loss_{slug}.tsv"));
        let manifest_path = a.out.join(format!("run_{slug}.json"));
        guard_artifact(&loss_path, a.force)?;

        eprintln!(
            "stage {slug}: {} steps, batch {}, lr {}",
            sc.steps, sc.batch_size, sc.learning_rate
        );
        let curve = match stage {
            Stage::SpeakerFt => {
                let speakers: Vec<u32> = if a.speakers.is_empty() {
                    let start = corpus.cfg.n_speakers - corpus.cfg.n_zero_shot_speakers;
                    (start..corpus.cfg.n_speakers).collect()
                } else {
                    a.speakers.clone()
                };
                let (tuned, curve) =
                    speaker_finetune(&params, &corpus, &split.sft_train, &speakers, &sc, &mc)?;
                params = tuned;
                curve
            }
            _ => train_stage(&mut params, &corpus, &split.train, &sc, &mc)?,
        };

        save_checkpoint(&ckpt_path, &params, &mc, a.force)?;
        write_loss_curve(&loss_path, &curve)?;
        let final_loss = curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
        write_json_artifact(
            &manifest_path,
            &TrainManifest {
                provenance: Provenance::new(&(&mc, &sc), a.seed)?,
                stage: slug.to_string(),
                steps: sc.steps,
                final_loss,
                checkpoint: ckpt_path.display().to_string(),
                loss_curve: loss_path.display().to_string(),
            },
            a.force,
        )?;
        eprintln!("stage {slug}: final loss {final_loss:.4}, checkpoint {}", ckpt_path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct RlManifest {
    provenance: Provenance,
    rounds: usize,
    accepted_rounds: usize,
    checkpoint: String,
    controller: String,
    reward_curve: String,
}

fn rl_tune(a: RlTuneArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let split = corpus.split();
    let (params, header) = load_checkpoint(&a.init)?;
    if header.config.vocab != corpus.vocab {
        return Err(Error::Data(format!(
            "checkpoint {} was trained on a different vocabulary",
            a.init.display()
        )));
    }
    let mut rl: RlConfig = match &a.rl_config {
        Some(p) => read_json_config(p)?,
        None => RlConfig::default(),
    };
    if let Some(seed) = a.seed {
        rl.seed = seed;
    }

    std::fs::create_dir_all(&a.out)?;
    let ckpt_path = a.out.join("ckpt_rl.ckpt");
    let controller_path = a.out.join("controller.json");
    let curve_path = a.out.join("reward_curve.tsv");
    guard_artifact(&curve_path, a.force)?;

    let outcome = hierarchical_rl(&params, &corpus, &split.train, &rl, &header.config)?;
    save_checkpoint(&ckpt_path, &outcome.params, &header.config, a.force)?;
    write_json_artifact(
        &controller_path,
        &serde_json::json!({
            "provenance": Provenance::new(&rl, rl.seed)?,
            "controller": outcome.controller,
        }),
        a.force,
    )?;
    write_reward_curve(&curve_path, &outcome.curve)?;
    let accepted = outcome.curve.iter().filter(|r| r.accepted).count();
    write_json_artifact(
        &a.out.join("run_rl.json"),
        &RlManifest {
            provenance: Provenance::new(&rl, rl.seed)?,
            rounds: outcome.curve.len(),
            accepted_rounds: accepted,
            checkpoint: ckpt_path.display().to_string(),
            controller: controller_path.display().to_string(),
            reward_curve: curve_path.display().to_string(),
        },
        a.force,
    )?;
    eprintln!("rl: {accepted}/{} rounds accepted, checkpoint {}", outcome.curve.len(), ckpt_path.display());
    Ok(())
}

#[derive(Serialize)]
struct WavSidecar {
    provenance: Provenance,
    dialect_id: u32,
    n_tokens: usize,
    sample_rate: u32,
    samples_per_token: usize,
}

fn synth(a: SynthArgs) -> Result<()> {
    let (params, header) = load_checkpoint(&a.ckpt)?;
    let mc = header.config;
    let v = &mc.vocab;

    let text = parse_ids(&a.text)?;
    for &id in &text {
        if !v.is_text(id) {
            return Err(Error::Config(format!(
                "text id {id} outside the text range [0, {})",
                v.n_text
            )));
        }
    }
    if a.dialect >= v.n_dialects {
        return Err(Error::Config(format!(
            "dialect {} outside the valid range [0, {})",
            a.dialect, v.n_dialects
        )));
    }
    let prompt: Option<Vec<u32>> = match &a.speaker_prompt_file {
        Some(p) => Some(read_json_config(p)?),
        None => None,
    };

    let tokens = if a.stream {
        let prefix_len = text.len() + prompt.as_ref().map(|p| p.len() + 1).unwrap_or(0) + 3;
        let planes = mc.n_layers * mc.n_kv_heads;
        let pool = PoolConfig {
            page_size: a.page_size,
            n_pages: planes * (pages_for(prefix_len + a.max_new, a.page_size) + 1),
        };
        let engine = Engine::new(&params, &mc, &pool, Precision::Float)?;
        let mut session = engine.new_session(&text, prompt.as_deref(), a.dialect)?;
        let mut tokens = Vec::new();
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        while tokens.len() < a.max_new {
            match session.decode_step()? {
                StepOutcome::Eos => break,
                StepOutcome::Token(t) => {
                    writeln!(lock, "{t}")?;
                    lock.flush()?;
                    tokens.push(t);
                }
            }
            if session.status() != dmtts::serve::SessionStatus::Live {
                break;
            }
        }
        tokens
    } else {
        let (tokens, _terminated) =
            greedy_decode(&params, &mc, &text, prompt.as_deref(), a.dialect, a.max_new)?;
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        for t in &tokens {
            writeln!(lock, "{t}")?;
        }
        tokens
    };
    eprintln!("synthesized {} tokens ({} dialect {})", tokens.len(), if a.stream { "streamed" } else { "offline" }, a.dialect);

    if let Some(wav_path) = &a.wav {
        guard_artifact(wav_path, a.force)?;
        let samples = render_wav(&tokens, v)?;
        write_wav(wav_path, &samples)?;
        let sidecar = wav_path.with_extension("json");
        write_json_artifact(
            &sidecar,
            &WavSidecar {
                provenance: header.provenance.clone(),
                dialect_id: a.dialect,
                n_tokens: tokens.len(),
                sample_rate: SAMPLE_RATE,
                samples_per_token: SAMPLES_PER_TOKEN,
            },
            a.force,
        )?;
        eprintln!(
            "wav: {} ({} samples, {:.2} s)",
            wav_path.display(),
            samples.len(),
            samples.len() as f64 / SAMPLE_RATE as f64
        );
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let (params, header) = load_checkpoint(&a.ckpt)?;
    if header.config.vocab != corpus.vocab {
        return Err(Error::Data(format!(
            "checkpoint {} was trained on a different vocabulary",
            a.ckpt.display()
        )));
    }
    let mut bcfg: BenchConfig = match &a.workload {
        Some(p) => read_json_config(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = a.seed {
        bcfg.seed = seed;
    }
    let precision = if a.no_quantize { Precision::Float } else { Precision::Int8 };
    let report = bench_with_precision(&params, &header.config, &corpus, &bcfg, precision)?;
    print!("{}", report.table());
    if let Some(path) = &a.report {
        write_json_artifact(path, &report.quality, a.force)?;
        eprintln!("quality report: {}", path.display());
    }
    if let Some(path) = &a.timings {
        write_json_artifact(path, &report, a.force)?;
        eprintln!("timing report (wall-clock, not reproducible): {}", path.display());
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let (params, header) = load_checkpoint(&a.ckpt)?;
    if header.config.vocab != corpus.vocab {
        return Err(Error::Data(format!(
            "checkpoint {} was trained on a different vocabulary",
            a.ckpt.display()
        )));
    }
    let mode = match a.mode {
        ModeArg::ZeroShot => EvalMode::ZeroShot,
        ModeArg::SpeakerFt => EvalMode::SpeakerFt,
        ModeArg::UnifiedVsSpecialist => EvalMode::UnifiedVsSpecialist,
    };
    let split = corpus.split();
    let pool = match mode {
        EvalMode::SpeakerFt => &split.sft_eval,
        _ => &split.heldout_fine,
    };
    let ecfg = EvalConfig {
        mode,
        dialects: if a.dialects.is_empty() { None } else { Some(a.dialects.clone()) },
        speakers: if a.speakers.is_empty() { None } else { Some(a.speakers.clone()) },
        clips_per_dialect: a.clips,
        prompt_len_min: a.prompt_len_min,
        prompt_len_max: a.prompt_len_max,
        max_new: a.max_new,
        seed: a.seed,
    };
    let metrics = evaluate(&params, &header.config, &corpus, pool, &ecfg)?;
    print!("{}", render_metrics(&metrics, ReportFormat::Table)?);
    if let Some(dir) = &a.report {
        let stem = format!("eval_{}_{}", metrics.mode.slug(), metrics.provenance.seed);
        guard_artifact(&dir.join(format!("{stem}.txt")), a.force)?;
        guard_artifact(&dir.join(format!("{stem}.json")), a.force)?;
        let (txt, json) = write_metrics_reports(dir, &metrics)?;
        eprintln!("reports: {} {}", txt.display(), json.display());
    }
    Ok(())
}
