use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arsg::checkpoint::ModelBundle;
use arsg::config::{AttentionMode, RunConfig, Sharpening};
use arsg::data::{load_dataset, read_fseq, store_dataset, synth_corpus, write_fseq, FeaturePipeline, RepeatMode, SymbolTable};
use arsg::decoding::BeamConfig;
use arsg::eval::{export_alignment, SymbolMap};
use arsg::model::Arsg;
use arsg::pipeline::{self, LongEvalConfig, LONG_CSV_HEADER};
use arsg::training::{Trainer, LATEST_CKPT, LOG_FILE};
use arsg::Tensor;

use crate::{AlignArgs, Command, DecodeArgs, EvalLongArgs, GradcheckArgs, ModeArg, Sharpen, SynthArgs, TrainArgs};

pub const SYMBOLS_FILE: &str = "symbols.txt";
pub const PAUSE_FILE: &str = "pause.fseq";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(arsg::Error),
    /// A check ran and failed.
    Check(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Run(_) | CliError::Check(_) => ExitCode::from(1),
        }
    }
}

impl From<arsg::Error> for CliError {
    fn from(e: arsg::Error) -> Self {
        match e {
            arsg::Error::Config(m) => CliError::Usage(m),
            other => CliError::Run(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(arsg::Error::File {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("config file {} not found", path.display())));
    }
    Ok(RunConfig::load(path)?)
}

fn optional_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn json_lines<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> CliResult<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).map_err(arsg::Error::from)?);
        out.push('\n');
    }
    Ok(out)
}

/// Symbol table stored next to a manifest, if any.
fn sibling_symbols(manifest: &Path) -> CliResult<Option<SymbolTable>> {
    let path = manifest.parent().unwrap_or(Path::new(".")).join(SYMBOLS_FILE);
    if path.is_file() {
        Ok(Some(SymbolTable::load(&path)?))
    } else {
        Ok(None)
    }
}

fn symbol_map(map: &Option<PathBuf>, manifest: &Path, eos: usize) -> CliResult<SymbolMap> {
    match map {
        None => Ok(SymbolMap::identity(eos)),
        Some(path) => {
            let table = sibling_symbols(manifest)?
                .ok_or_else(|| CliError::Usage(format!("--map needs {SYMBOLS_FILE} next to the manifest")))?;
            Ok(SymbolMap::load(path, &table)?)
        }
    }
}

fn sharpening(base: &Sharpening, flags: &Sharpen) -> Sharpening {
    Sharpening {
        beta: flags.beta.or(base.beta),
        top_k: flags.topk.or(base.top_k),
        window: flags.window.or(base.window),
    }
}

fn beam_config(base: &BeamConfig, beam: Option<usize>, max_beam: Option<usize>) -> CliResult<BeamConfig> {
    let mut b = *base;
    if let Some(w) = beam {
        b.initial_width = w;
        b.max_width = max_beam.unwrap_or(w);
    } else if let Some(m) = max_beam {
        b.max_width = m;
    }
    b.validate()?;
    Ok(b)
}

pub fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Align(a) => align(a),
        Command::EvalLong(a) => eval_long(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth_data(a: SynthArgs) -> CliResult<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    let n_train = a.n_train.unwrap_or(cfg.data.n_train);
    let n_dev = a.n_dev.unwrap_or(cfg.data.n_dev);
    let n_test = a.n_test.unwrap_or(cfg.data.n_test);
    if a.out.exists() {
        let non_empty = fs::read_dir(&a.out).map_err(|e| io_err(&a.out, e))?.next().is_some();
        if non_empty && !a.force {
            return Err(CliError::Usage(format!("{} is not empty (use --force)", a.out.display())));
        }
    }
    create_dir(&a.out)?;
    let corpus = synth_corpus(&cfg.synth, n_train, n_dev, n_test)?;
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        store_dataset(&a.out, name, split)?;
    }
    write_fseq(a.out.join(PAUSE_FILE), &Tensor::new(vec![1, corpus.pause.len()], corpus.pause.clone())?)?;
    cfg.synth.symbol_table().store(a.out.join(SYMBOLS_FILE))?;
    println!("wrote {n_train} train, {n_dev} dev, {n_test} test utterances to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> CliResult<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    if let Some(m) = &a.attention {
        cfg.attention = m.parse::<AttentionMode>()?;
    }
    if let Some(n) = a.max_updates {
        cfg.max_total_updates = n;
    }
    cfg.validate()?;

    let train_raw = load_dataset(a.data.join("train.jsonl"))?;
    let dev_raw = load_dataset(a.data.join("dev.jsonl"))?;
    let table = SymbolTable::load(a.data.join(SYMBOLS_FILE))?;
    let pause_path = a.data.join(PAUSE_FILE);
    let pause = if pause_path.is_file() {
        Some(read_fseq(&pause_path)?.row(0).to_vec())
    } else {
        None
    };
    if train_raw.is_empty() || dev_raw.is_empty() {
        return Err(CliError::Run(arsg::Error::Contract("training and development sets must be nonempty".into())));
    }
    let pipe = FeaturePipeline::fit(&train_raw, cfg.data.deltas, pause)?;
    let dims = cfg.dims(pipe.dim(), table.len(), table.eos())?;
    let train: Vec<_> = train_raw.iter().map(|u| pipe.process(u)).collect::<arsg::Result<_>>()?;
    let dev: Vec<_> = dev_raw.iter().map(|u| pipe.process(u)).collect::<arsg::Result<_>>()?;

    create_dir(&a.out)?;
    write_file(&a.out.join("config.toml"), cfg.to_toml())?;
    let mut trainer = if a.resume {
        Trainer::resume(a.out.join(LATEST_CKPT), cfg.train.clone(), &train, &dev)?
    } else {
        let log = a.out.join(LOG_FILE);
        if log.exists() {
            fs::remove_file(&log).map_err(|e| io_err(&log, e))?;
        }
        let bundle = ModelBundle {
            model: Arsg::zeros(dims)?,
            smoothing: cfg.attention.smoothing(),
            pipeline: Some(pipe),
        };
        Trainer::new(bundle, cfg.train.clone(), &train, &dev)?
    };
    trainer = trainer.with_output(&a.out)?.with_dev_beam(cfg.decode.beam);
    match a.stop_after {
        Some(n) => trainer.run_until(n.min(cfg.max_total_updates))?,
        None => trainer.run(cfg.max_total_updates)?,
    }
    let last = trainer.log().last();
    println!(
        "{} updates, stage {:?}{}{}",
        trainer.updates(),
        trainer.stage(),
        last.map(|r| format!(", dev NLL {:.4}", r.dev_nll)).unwrap_or_default(),
        if trainer.is_done() { ", finished" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

fn decode(a: DecodeArgs) -> CliResult<ExitCode> {
    let cfg = optional_config(&a.config)?;
    let bundle = ModelBundle::load(&a.ckpt)?;
    let norm = sharpening(&cfg.decode.sharpening, &a.sharpen).apply(bundle.normalizer())?;
    let beam = beam_config(&cfg.decode.beam, a.beam, a.max_beam)?;
    let map = symbol_map(&a.map, &a.data, bundle.model.dims.eos)?;
    let utts = pipeline::prepare(&bundle, &load_dataset(&a.data)?)?;
    let report = pipeline::decode_dataset(&bundle.model, &utts, norm, &beam, &map)?;

    create_dir(&a.out)?;
    write_file(&a.out.join("hyps.jsonl"), json_lines(&report.records)?)?;
    let summary = serde_json::json!({
        "per": report.per,
        "utterances": report.records.len(),
        "failures": report.failures,
        "errors": report.records.iter().map(|r| r.errors).sum::<usize>(),
        "ref_len": report.records.iter().map(|r| r.ref_len).sum::<usize>(),
        "score_evaluations": report.records.iter().map(|r| r.score_evaluations).sum::<usize>(),
        "max_evaluations_per_step": report.records.iter().map(|r| r.max_evaluations_per_step).max().unwrap_or(0),
    });
    write_file(&a.out.join("report.json"), serde_json::to_string_pretty(&summary).map_err(arsg::Error::from)? + "\n")?;
    println!("PER {:.4} over {} utterances ({} failed)", report.per, report.records.len(), report.failures);
    Ok(ExitCode::SUCCESS)
}

fn align(a: AlignArgs) -> CliResult<ExitCode> {
    let cfg = optional_config(&a.config)?;
    let bundle = ModelBundle::load(&a.ckpt)?;
    let norm = sharpening(&cfg.decode.sharpening, &a.sharpen).apply(bundle.normalizer())?;
    let slack = a.slack.unwrap_or(cfg.eval.slack);
    let mass = a.mass.unwrap_or(cfg.eval.mass);
    let utts = pipeline::prepare(&bundle, &load_dataset(&a.data)?)?;
    let aligned = pipeline::align_dataset(&bundle.model, &utts, norm, slack, mass)?;

    create_dir(&a.out)?;
    write_file(&a.out.join("verdicts.jsonl"), json_lines(aligned.iter().map(|(r, _)| r))?)?;
    if a.export_heatmaps {
        let dir = a.out.join("heatmaps");
        create_dir(&dir)?;
        for (r, m) in &aligned {
            export_alignment(m, dir.join(&r.id))?;
        }
    }
    let correct = aligned.iter().filter(|(r, _)| r.verdict.correct).count();
    println!("{correct} of {} utterances aligned correctly", aligned.len());
    Ok(ExitCode::SUCCESS)
}

fn eval_long(a: EvalLongArgs) -> CliResult<ExitCode> {
    let cfg = optional_config(&a.config)?;
    let bundle = ModelBundle::load(&a.ckpt)?;
    let norm = sharpening(&cfg.decode.sharpening, &a.sharpen).apply(bundle.normalizer())?;
    let beam = beam_config(&cfg.decode.beam, a.beam, a.max_beam)?;
    let map = symbol_map(&a.map, &a.data, bundle.model.dims.eos)?;
    let max_concat = a.max_concat.unwrap_or(cfg.eval.max_concat);
    if max_concat == 0 {
        return Err(CliError::Usage("--max-concat must be at least 1".into()));
    }
    let pause_frames = a.pause_frames.unwrap_or(cfg.eval.pause_frames);
    let pause_symbol = match sibling_symbols(&a.data)? {
        Some(t) => t.pau(),
        None if pause_frames == 0 => 0,
        None => return Err(CliError::Usage(format!("pause frames need {SYMBOLS_FILE} next to the manifest"))),
    };
    let modes = match a.mode {
        ModeArg::Same => vec![RepeatMode::Same],
        ModeArg::Mixed => vec![RepeatMode::Mixed],
        ModeArg::Both => vec![RepeatMode::Same, RepeatMode::Mixed],
    };
    let raw = load_dataset(&a.data)?;
    let long = LongEvalConfig {
        levels: 1..=max_concat,
        modes,
        pause_frames,
        pause_symbol,
        slack: cfg.eval.slack,
        mass: cfg.eval.mass,
        seed: a.seed.unwrap_or(cfg.seed),
    };
    let rows = pipeline::eval_long(&bundle, &raw, norm, &beam, &map, &long)?;
    let mut csv = format!("{LONG_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    write_file(&a.out, &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> CliResult<ExitCode> {
    let cfg = load_config(&a.config)?;
    let mut failed = Vec::new();
    for mode in AttentionMode::ALL {
        let mut c = cfg.clone();
        c.attention = mode;
        let dims = c.dims(a.dim, a.vocab, 0)?;
        let report =
            pipeline::check_model_gradients(&dims, mode.smoothing(), a.frames, cfg.seed, a.step, a.tol, a.inject_fault.as_deref())?;
        for p in &report.params {
            let verdict = if p.violations == 0 { "ok" } else { "FAIL" };
            println!("{mode:<15} {:<16} max_rel_err {:.3e} {verdict}", p.name, p.max_rel_error);
            if p.violations > 0 {
                failed.push(format!("{mode}:{}", p.name));
            }
        }
        println!("{mode:<15} max_rel_err {:.3e}", report.max_rel_error());
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Check(format!("gradient check failed for {}", failed.join(", "))))
    }
}
