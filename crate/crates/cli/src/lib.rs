//! Command-line pipeline: data generation, the three training stages,
//! long-form generation, evaluation and the injection-ratio ablation.

pub mod pipeline;
pub mod sonify;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use arcscore::anchor::{conceptualize, DEFAULT_KEYFRAMES};
use arcscore::config::RunConfig;
use arcscore::decoder::{evaluate_ce, pretrain_backbone, train_adapter, Backbone, SamplerConfig};
use arcscore::eval::{evaluate_corpora, kld_score, MetricReport};
use arcscore::longform::{generate_longform, AcousticModels, Continuation, LongformResult, ProbeModels, WindowPlan};
use arcscore::probe::{train_probe, FrozenBackbone};
use arcscore::rng::derive_seed;
use arcscore::synth::corpus::{music_corpus, video_specs};
use arcscore::synth::dataset::{
    list_dirs, read_clip_dataset, read_tokens, read_va, read_video_dataset, read_video_spec, write_clip, write_json,
    write_tokens, write_va, write_video_spec, VideoSpec,
};
use arcscore::synth::{make_arc, Archetype, TokenGrid};
use arcscore::{weights, Real};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pipeline::{held_out_arcs, load_backbone, load_control, load_probe, mean_alignment, score_held_out, RunPaths};

#[derive(Debug, Parser)]
#[command(name = "arcscore", version, about = "Affect-conditioned long-form token music generation")]
pub struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic music and pseudo-video datasets.
    Datagen,
    /// Train one stage: the affect probe, the decoder backbone or the adapter.
    Train {
        #[arg(value_enum)]
        stage: Stage,
    },
    /// Generate audio tokens for a pseudo-video, an arc, or the held-out arcs.
    Generate(GenerateArgs),
    /// Score generated clips against a reference corpus.
    Eval(EvalArgs),
    /// Train the adapter at several injection ratios and compare them.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Probe,
    Backbone,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContinuationArg {
    Prefixed,
    Independent,
}

impl From<ContinuationArg> for Continuation {
    fn from(c: ContinuationArg) -> Self {
        match c {
            ContinuationArg::Prefixed => Continuation::Prefixed,
            ContinuationArg::Independent => Continuation::Independent,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// A `video.json` (or its directory) written by `datagen`.
    #[arg(long, conflicts_with_all = ["duration", "held_out"])]
    pub video: Option<PathBuf>,
    /// Length in seconds of a synthetic arc to score.
    #[arg(long, requires = "arc")]
    pub duration: Option<usize>,
    /// Arc shape used with `--duration`.
    #[arg(long, requires = "duration")]
    pub arc: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub arc_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub scene: u64,
    /// Generate the configured held-out arcs, conditioned on their true curves.
    #[arg(long)]
    pub held_out: bool,
    /// Run the backbone without the control branch.
    #[arg(long)]
    pub unconditioned: bool,
    #[arg(long, value_enum, default_value = "prefixed")]
    pub continuation: ContinuationArg,
    /// Also write a sine-tone `audio.wav`.
    #[arg(long)]
    pub wav: bool,
    /// Output subdirectory name (default derived from the input).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of generated clips (default: the run's generated directory).
    #[arg(long = "gen")]
    pub generated: Option<PathBuf>,
    /// Directory of reference clips (default: the run's music dataset).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Injection ratios to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75, 1.0])]
    pub ratios: Vec<f64>,
}

/// Distinguishes bad invocations (exit 1) from failures while running (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

/// Loads, overrides and validates the configuration. Module seeds are mixed
/// with the global seed.
pub fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = load_config(cli)?;
    let paths = RunPaths::new(&cli.out, &cfg);
    fs::create_dir_all(&paths.root).with_context(|| format!("creating {}", paths.root.display()))?;
    fs::write(paths.root.join("run_config.toml"), cfg.to_toml()?)?;
    let resolved = cfg.resolved();
    match &cli.command {
        Command::Datagen => datagen(&resolved, &paths),
        Command::Train { stage } => train(*stage, &resolved, &paths),
        Command::Generate(args) => generate(args, &resolved, &paths),
        Command::Eval(args) => eval(args, &resolved, &paths),
        Command::Ablate(args) => ablate(args, &resolved, &paths),
    }
}

fn datagen(cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<()> {
    for dir in [paths.music(), paths.videos()] {
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
    }
    let seed = cfg.corpus_seed();
    let clips = music_corpus(&cfg.corpus, &cfg.codec, seed)?;
    let videos = video_specs(&cfg.corpus, seed)?;
    if clips.is_empty() && videos.is_empty() {
        log::warn!("corpus scale {} produced no data; the dataset directories are empty", cfg.corpus.scale);
    }
    for clip in &clips {
        write_clip(&paths.music(), clip)?;
    }
    for v in &videos {
        write_video_spec(&paths.videos(), v)?;
    }
    let minutes = clips.len() as f64 * cfg.corpus.clip_len_s as f64 / 60.0;
    println!(
        "wrote {} music clips ({minutes:.1} clip-minutes) and {} pseudo-videos under {}",
        clips.len(),
        videos.len(),
        paths.data.display()
    );
    Ok(())
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{l:.8}", i + 1).expect("write to string");
    }
    out
}

fn nonempty<T>(items: Vec<T>, what: &str, dir: &Path) -> anyhow::Result<Vec<T>> {
    if items.is_empty() {
        bail!("no {what} under {}; run `arcscore datagen` with a positive corpus scale", dir.display());
    }
    Ok(items)
}

fn read_music(cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<Vec<arcscore::synth::ClipRecord>> {
    let clips = read_clip_dataset(&paths.music(), cfg.codec).context("reading the music dataset")?;
    nonempty(clips, "music clips", &paths.music())
}

fn train(stage: Stage, cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<()> {
    fs::create_dir_all(&paths.weights)?;
    let history = match stage {
        Stage::Probe => {
            let specs = read_video_dataset(&paths.videos()).context("reading the video dataset")?;
            let specs = nonempty(specs, "pseudo-videos", &paths.videos())?;
            let videos: Vec<_> = specs.iter().map(VideoSpec::render).collect();
            let backbone = FrozenBackbone::<Real>::new(cfg.probe_backbone);
            let trained = train_probe(&backbone, &videos, &cfg.probe)?;
            weights::save(&backbone, &paths.probe_backbone())?;
            weights::save(&trained.head, &paths.probe_head())?;
            trained.loss_history
        }
        Stage::Backbone => {
            let clips = read_music(cfg, paths)?;
            let init = Backbone::<Real>::new(cfg.decoder)?;
            let trained = pretrain_backbone(&clips, init, &cfg.backbone_train)?;
            weights::save(&trained.backbone, &paths.backbone())?;
            trained.loss_history
        }
        Stage::Adapter => {
            let backbone = load_backbone(&paths.backbone(), cfg)?;
            let clips = read_music(cfg, paths)?;
            let trained = train_adapter(&clips, Some(&backbone), &cfg.adapter, &cfg.adapter_train)?;
            weights::save(&trained.branch, &paths.adapter())?;
            log::info!("learned gates: {:?}", trained.branch.gates.gamma.to_vec());
            trained.loss_history
        }
    };
    let name = match stage {
        Stage::Probe => "probe",
        Stage::Backbone => "backbone",
        Stage::Adapter => "adapter",
    };
    let csv = paths.weights.join(format!("{name}_loss.csv"));
    fs::write(&csv, loss_csv(&history))?;
    println!(
        "trained {name} for {} epochs; final loss {:.4}; weights in {}",
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        paths.weights.display()
    );
    Ok(())
}

fn write_generation(dir: &Path, result: &LongformResult, wav: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_tokens(&dir.join("tokens.bin"), &result.tokens)?;
    write_va(&dir.join("va.csv"), &result.trajectory)?;
    fs::write(dir.join("seams.csv"), result.seams_csv())?;
    if wav {
        fs::write(dir.join("audio.wav"), sonify::render_wav(&result.tokens))?;
    }
    Ok(())
}

fn generate(args: &GenerateArgs, cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<()> {
    let backbone = load_backbone(&paths.backbone(), cfg)?;
    let control = if args.unconditioned { None } else { Some(load_control(&paths.adapter(), cfg)?) };
    let continuation = Continuation::from(args.continuation);
    if args.held_out {
        let arcs = held_out_arcs(cfg.eval.held_out_arcs, cfg.eval.held_out_duration_s, cfg.corpus.num_scenes, cfg.seed)?;
        let scored = score_held_out(&backbone, control.as_ref(), &arcs, cfg)?;
        for (score, result) in &scored {
            write_generation(&paths.generated.join(&score.name), result, args.wav)?;
        }
        let scores: Vec<_> = scored.into_iter().map(|s| s.0).collect();
        let (v, a) = mean_alignment(&scores);
        println!("generated {} held-out arcs; mean alignment valence {v:.3} arousal {a:.3}", scores.len());
        return Ok(());
    }
    let (spec, default_name) = match (&args.video, args.duration, &args.arc) {
        (Some(path), _, _) => {
            let spec = read_video_spec(path).with_context(|| format!("reading {}", path.display()))?;
            let name = format!("video_{:05}", spec.source_id);
            (spec, name)
        }
        (None, Some(duration), Some(arc)) => {
            let archetype: Archetype = arc.parse().map_err(|e: arcscore::Error| usage(e.to_string()))?;
            let spec = VideoSpec {
                source_id: 0,
                scene_id: args.scene,
                seed: args.arc_seed,
                arc: make_arc(args.arc_seed, duration, archetype).map_err(|e| usage(e.to_string()))?,
            };
            (spec, format!("arc_{archetype}_{duration}s_{}", args.arc_seed))
        }
        _ => return Err(usage("generate needs --video, --duration with --arc, or --held-out")),
    };
    let (probe_backbone, head) = load_probe(paths, cfg)?;
    let video = spec.render();
    let plan = WindowPlan::from_config(video.num_frames(), &cfg.windows)?;
    let sampler = SamplerConfig {
        rng_seed: derive_seed(cfg.sampler.rng_seed, &[spec.source_id]),
        ..cfg.sampler
    };
    let result = generate_longform(
        &video,
        ProbeModels { backbone: &probe_backbone, head: &head, instruction_id: cfg.probe.instruction_id },
        AcousticModels { backbone: &backbone, control: control.as_ref() },
        &plan,
        &cfg.codec,
        &sampler,
        continuation,
    )?;
    let dir = paths.generated.join(args.name.clone().unwrap_or(default_name));
    write_generation(&dir, &result, args.wav)?;
    debug_assert_eq!(result.anchor, conceptualize(&video, DEFAULT_KEYFRAMES));
    println!(
        "generated {} rows x {} codebooks over {} windows into {}; mean seam discontinuity {}",
        result.tokens.rows(),
        result.tokens.num_codebooks(),
        result.plan.windows.len(),
        dir.display(),
        result.mean_seam_discontinuity().map_or("n/a".into(), |d| format!("{d:.3}"))
    );
    Ok(())
}

/// Reads `tokens.bin` (and `va.csv` when present) from every subdirectory.
fn read_generated(dir: &Path, cfg: &RunConfig) -> anyhow::Result<Vec<(String, TokenGrid, Option<arcscore::trajectory::AffectTrajectory>)>> {
    let mut out = Vec::new();
    for d in list_dirs(dir).with_context(|| format!("listing {}", dir.display()))? {
        let tokens_path = d.join("tokens.bin");
        if !tokens_path.exists() {
            continue;
        }
        let tokens = read_tokens(&tokens_path, cfg.codec)?;
        let va_path = d.join("va.csv");
        let target = if va_path.exists() { Some(read_va(&va_path)?) } else { None };
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, tokens, target));
    }
    Ok(out)
}

fn eval(args: &EvalArgs, cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<()> {
    let gen_dir = args.generated.clone().unwrap_or_else(|| paths.generated.clone());
    let ref_dir = args.reference.clone().unwrap_or_else(|| paths.music());
    let generated = read_generated(&gen_dir, cfg)?;
    if generated.is_empty() {
        bail!("no generated clips (tokens.bin) under {}", gen_dir.display());
    }
    let reference: Vec<TokenGrid> = read_generated(&ref_dir, cfg)?.into_iter().map(|g| g.1).collect();
    if reference.is_empty() {
        bail!("no reference clips (tokens.bin) under {}", ref_dir.display());
    }
    let report = evaluate_corpora(&generated, &reference, cfg.eval.alignment_window_s)?;
    fs::create_dir_all(&paths.eval)?;
    fs::write(paths.eval.join("report.json"), report.to_json() + "\n")?;
    fs::write(paths.eval.join("report.csv"), report.to_csv())?;
    print_report(&report);
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn print_report(r: &MetricReport) {
    println!(
        "fd {}  kld {:.4}  alignment valence {}  arousal {}  ({} clips)",
        fmt_opt(r.fd),
        r.kld,
        fmt_opt(r.affect_alignment_valence),
        fmt_opt(r.affect_alignment_arousal),
        r.clips.len()
    );
}

/// One row of the injection-ratio comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub injection_ratio: f64,
    pub shallow_layers: usize,
    pub final_train_loss: f64,
    pub held_out_ce: f64,
    pub alignment_valence: f64,
    pub alignment_arousal: f64,
    /// Mean of the two alignment axes.
    pub affect_alignment: f64,
    pub kld: f64,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| injection ratio | shallow layers | train loss | held-out CE | align valence | align arousal | affect_alignment | KLD |\n|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        writeln!(
            out,
            "| {:.2} | {} | {:.4} | {:.4} | {:.3} | {:.3} | {:.3} | {:.4} |",
            r.injection_ratio,
            r.shallow_layers,
            r.final_train_loss,
            r.held_out_ce,
            r.alignment_valence,
            r.alignment_arousal,
            r.affect_alignment,
            r.kld
        )
        .expect("write to string");
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "injection_ratio,shallow_layers,final_train_loss,held_out_ce,alignment_valence,alignment_arousal,affect_alignment,kld\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.injection_ratio,
            r.shallow_layers,
            r.final_train_loss,
            r.held_out_ce,
            r.alignment_valence,
            r.alignment_arousal,
            r.affect_alignment,
            r.kld
        )
        .expect("write to string");
    }
    out
}

/// Rejects ratios outside `(0, 1]` before any work starts.
pub fn check_ratios(ratios: &[f64]) -> anyhow::Result<()> {
    if ratios.is_empty() {
        return Err(usage("ablate needs at least one injection ratio"));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(usage(format!("injection ratio {r} is outside (0, 1]; a ratio of 0 injects nothing")));
    }
    Ok(())
}

fn ablate(args: &AblateArgs, cfg: &RunConfig, paths: &RunPaths) -> anyhow::Result<()> {
    check_ratios(&args.ratios)?;
    let clips = read_music(cfg, paths)?;
    let backbone_path = paths.backbone();
    let dir = paths.root.join("ablate");
    fs::create_dir_all(&dir)?;
    let arcs = held_out_arcs(cfg.eval.held_out_arcs, cfg.eval.held_out_duration_s, cfg.corpus.num_scenes, cfg.seed)?;
    let held_clips = music_corpus(
        &arcscore::synth::CorpusConfig { scale: cfg.corpus.scale * 0.1, ..cfg.corpus.clone() },
        &cfg.codec,
        derive_seed(cfg.corpus_seed(), &[0xAB]),
    )?;
    let reference: Vec<TokenGrid> = clips.iter().map(|c| c.tokens.clone()).collect();
    let mut rows = Vec::new();
    for &ratio in &args.ratios {
        let mut rc = cfg.clone();
        rc.decoder.injection_ratio = ratio;
        let backbone = load_backbone(&backbone_path, &rc)?;
        let trained = train_adapter(&clips, Some(&backbone), &rc.adapter, &rc.adapter_train)?;
        let sub = dir.join(format!("rho_{ratio:.2}"));
        fs::create_dir_all(&sub)?;
        weights::save(&trained.branch, &sub.join("adapter.weights"))?;
        fs::write(sub.join("adapter_loss.csv"), loss_csv(&trained.loss_history))?;
        let held_out_ce = if held_clips.is_empty() {
            f64::NAN
        } else {
            evaluate_ce(&backbone, Some(&trained.branch), &held_clips)?
        };
        let scored = score_held_out(&backbone, Some(&trained.branch), &arcs, &rc)?;
        let generated: Vec<TokenGrid> = scored.iter().map(|s| s.1.tokens.clone()).collect();
        let scores: Vec<_> = scored.into_iter().map(|s| s.0).collect();
        write_json(&sub.join("alignment.json"), &scores)?;
        let (v, a) = mean_alignment(&scores);
        let row = AblationRow {
            injection_ratio: ratio,
            shallow_layers: rc.decoder.shallow_layers(),
            final_train_loss: trained.loss_history.last().copied().unwrap_or(f64::NAN),
            held_out_ce,
            alignment_valence: v,
            alignment_arousal: a,
            affect_alignment: (v + a) / 2.0,
            kld: kld_score(&generated, &reference)?,
        };
        log::info!("ratio {ratio}: {row:?}");
        rows.push(row);
    }
    write_json(&dir.join("ablate.json"), &rows)?;
    fs::write(dir.join("ablate.csv"), ablation_csv(&rows))?;
    let table = ablation_table(&rows);
    fs::write(dir.join("ablate.md"), &table)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_zero_is_a_usage_error() {
        let err = check_ratios(&[0.5, 0.0]).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(check_ratios(&[1.5]).is_err());
        assert!(check_ratios(&[]).is_err());
        check_ratios(&[0.5, 0.75, 1.0]).unwrap();
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let csv = loss_csv(&[1.0, 0.5, 0.25]);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(2).unwrap(), "2,0.50000000");
    }

    #[test]
    fn ablation_table_lists_every_ratio() {
        let row = |r| AblationRow {
            injection_ratio: r,
            shallow_layers: 4,
            final_train_loss: 1.0,
            held_out_ce: 1.0,
            alignment_valence: 0.5,
            alignment_arousal: 0.1,
            affect_alignment: 0.3,
            kld: 0.01,
        };
        let t = ablation_table(&[row(0.5), row(0.75), row(1.0)]);
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains("| 0.75 |"));
        assert_eq!(ablation_csv(&[row(0.5)]).lines().count(), 2);
    }

    #[test]
    fn runtime_errors_map_to_exit_two() {
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), EXIT_RUNTIME);
    }
}
