//! `sadvae`: synthetic data generation, training, calibration, evaluation,
//! ablations and hyperparameter search from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sadvae_core::ablation::run_ablation;
use sadvae_core::classifiers::{assemble_predictor, calibrate_gzsl, GzslPredictor};
use sadvae_core::data_io::{
    generate_synthetic_dataset, make_random_split, write_feature_matrix, write_labels, ClassSplit, Dataset,
    SyntheticSpec,
};
use sadvae_core::evaluation::{evaluate_predictor, run_random_split_protocol, write_json};
use sadvae_core::model::{encode_skeleton, ModelState};
use sadvae_core::search::{hyperparameter_search, validation_harmonic_mean, SearchSpace};
use sadvae_core::trainer::{model_dims, train_on_split};
use sadvae_core::{Error, Result, RunConfig, Variant};

#[derive(Parser, Debug)]
#[command(name = "sadvae", version, about = "Skeleton/text disentangled VAE for zero-shot action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted semantic and nuisance factors.
    GenSynth(GenSynthArgs),
    /// Train the model on the seen classes of a split.
    Train(TrainArgs),
    /// Fit the domain gate on a proxy split and assemble a GZSL predictor.
    Calibrate(CalibrateArgs),
    /// Unseen-only accuracy of a predictor.
    EvalZsl(EvalArgs),
    /// Seen/unseen accuracies and their harmonic mean for a predictor.
    EvalGzsl(EvalArgs),
    /// Repeat the full pipeline over random splits and average.
    Protocol(ProtocolArgs),
    /// Compare naive, fd and fd_tc on one split.
    Ablate(AblateArgs),
    /// Two-phase random search over the training hyperparameters.
    Search(SearchArgs),
    /// Write per-sample posterior means of both skeleton heads.
    ExportLatents(ExportArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    samples_per_class: usize,
}

/// Dataset, split and configuration flags shared by most subcommands.
#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the random class split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Number of unseen classes in the split.
    #[arg(long, default_value_t = 5)]
    unseen: usize,
    /// Run seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Predictor written by `calibrate`.
    #[arg(long)]
    predictor: PathBuf,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of run seeds, starting at the run seed.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Also calibrate and report GZSL metrics.
    #[arg(long)]
    gzsl: bool,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    /// Phase-1 and phase-2 trial counts.
    #[arg(long, value_parser = parse_trials, default_value = "5,100")]
    trials: (usize, usize),
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
}

fn parse_trials(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected P1,P2")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

struct Context {
    dataset: Dataset,
    split: ClassSplit,
    config: RunConfig,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Context> {
        let dataset = Dataset::load(&self.manifest)?;
        let mut config = match &self.config {
            Some(path) => RunConfig::read(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(variant) = self.variant {
            config.variant = variant;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        config.validate()?;
        let split = make_random_split(dataset.num_classes(), self.unseen, self.split_seed)?;
        create_dir(&self.out)?;
        Ok(Context {
            dataset,
            split,
            config,
            out: self.out.clone(),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn report(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = out.join(name);
    write_json(value, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn gen_synth(args: &GenSynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        samples_per_class: args.samples_per_class,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    create_dir(&args.out)?;
    let manifest = generate_synthetic_dataset(&spec, &args.out)?;
    report(
        &args.out,
        "gen-synth.json",
        &json!({
            "manifest": manifest.file_name().map(|f| f.to_string_lossy().into_owned()),
            "seed": args.seed,
            "num_classes": spec.num_classes,
            "samples_per_class": spec.samples_per_class,
            "d_x": spec.d_x,
            "d_y": spec.d_y,
            "signal_dim": spec.signal_dim,
            "nuisance_dim": spec.nuisance_dim,
        }),
    )
}

fn train(args: &TrainArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let outcome = train_on_split(&ctx.dataset, &ctx.split, &ctx.config)?;
    outcome.state.save(ctx.out.join("model.sadm"))?;
    outcome.log.write(ctx.out.join("metrics.csv"))?;
    ctx.split.write(ctx.out.join("split.json"))?;
    ctx.config.write(ctx.out.join("config.toml"))?;
    let last = outcome.log.records.last().map(|r| r.breakdown);
    report(
        &ctx.out,
        "train.json",
        &json!({
            "seed": ctx.config.seed,
            "variant": ctx.config.variant,
            "steps": outcome.log.records.len(),
            "discriminator_updates": outcome.log.discriminator_updates(),
            "final_l_vae": last.map(|b| b.l_vae),
            "final_l_c": last.map(|b| b.l_c),
            "final_l_t": last.map(|b| b.l_t),
        }),
    )
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let state = ModelState::load(&args.model)?;
    let calibration = calibrate_gzsl(&ctx.dataset, &ctx.split, &ctx.config)?;
    let gate_accuracy = calibration.accuracy()?;
    let predictor = assemble_predictor(&ctx.dataset, &ctx.split, &ctx.config, &state.vae, calibration.gate)?;
    predictor.save(ctx.out.join("predictor.sadc"))?;
    report(
        &ctx.out,
        "calibrate.json",
        &json!({
            "seed": ctx.config.seed,
            "proxy_split": calibration.proxy_split,
            "gate_rows": calibration.labels.len(),
            "gate_accuracy": 100.0 * gate_accuracy,
        }),
    )
}

fn eval(args: &EvalArgs, gzsl: bool) -> Result<()> {
    let ctx = args.common.load()?;
    let predictor = GzslPredictor::load(&args.predictor)?;
    let (zsl, report_gzsl, per_class) = evaluate_predictor(&ctx.dataset, &ctx.split, &ctx.config, &predictor)?;
    if gzsl {
        report(&ctx.out, "eval-gzsl.json", &report_gzsl)
    } else {
        report(
            &ctx.out,
            "eval-zsl.json",
            &json!({ "zsl_accuracy": zsl, "per_class": per_class }),
        )
    }
}

fn protocol(args: &ProtocolArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let out = run_random_split_protocol(
        &ctx.dataset,
        args.common.unseen,
        args.repeats,
        &ctx.config,
        ctx.config.seed,
    )?;
    write_text(&ctx.out.join("protocol.csv"), &out.to_csv())?;
    report(&ctx.out, "protocol.json", &out)
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let seeds: Vec<u64> = (0..args.repeats as u64).map(|r| ctx.config.seed + r).collect();
    let out = run_ablation(&ctx.dataset, &ctx.split, &ctx.config, &Variant::ALL, &seeds, args.gzsl)?;
    write_text(&ctx.out.join("ablation.csv"), &out.to_csv())?;
    report(&ctx.out, "ablation.json", &json!({ "report": out, "means": out.means() }))
}

fn search(args: &SearchArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let space = SearchSpace {
        trials: args.trials,
        ..SearchSpace::default()
    };
    let out = hyperparameter_search(&ctx.config, &space, ctx.config.seed, |cfg| {
        validation_harmonic_mean(&ctx.dataset, &ctx.split, cfg)
    })?;
    out.best.write(ctx.out.join("best.toml"))?;
    report(&ctx.out, "search.json", &out)
}

fn export_latents(args: &ExportArgs) -> Result<()> {
    let ctx = args.common.load()?;
    let state = ModelState::load(&args.model)?;
    let expected = model_dims(&ctx.dataset, &ctx.config);
    if state.dims().d_x != expected.d_x {
        return Err(Error::Shape(format!(
            "checkpoint expects d_x = {}, dataset has {}",
            state.dims().d_x,
            expected.d_x
        )));
    }
    let (r, v) = encode_skeleton(&state.vae, &ctx.dataset.features)?;
    write_feature_matrix(&r.mean, ctx.out.join("latents_r.sadv"))?;
    write_feature_matrix(&v.mean, ctx.out.join("latents_v.sadv"))?;
    write_labels(&ctx.dataset.labels, ctx.out.join("labels.sadl"))?;
    report(
        &ctx.out,
        "export-latents.json",
        &json!({
            "samples": ctx.dataset.labels.len(),
            "dim_r": r.width(),
            "dim_v": v.width(),
            "unseen_ids": ctx.split.unseen_ids,
        }),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::EvalZsl(a) => eval(a, false),
        Command::EvalGzsl(a) => eval(a, true),
        Command::Protocol(a) => protocol(a),
        Command::Ablate(a) => ablate(a),
        Command::Search(a) => search(a),
        Command::ExportLatents(a) => export_latents(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
