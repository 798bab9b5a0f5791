use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dipoleforge::augment::{generate_participant, ComponentSelection};
use dipoleforge::dipolefit::{DipoleFit, MusicScanner};
use dipoleforge::harness::{self, loso_evaluate, DirectoryDataset, EvalConfig, EvalResult, SyntheticDataset};
use dipoleforge::headmodel::HeadModel;
use dipoleforge::io::{read_recording, write_recording};
use dipoleforge::ssd::{pattern, ssd_decompose, SsdFile};
use dipoleforge::synthscene::{GroundTruth, Scene};
use dipoleforge::{Error, Result};

/// Dipole-shift data augmentation for EEG motor-imagery classification.
#[derive(Parser)]
#[command(name = "dipoleforge", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a head model and write headmodel.json plus the leadfield cache.
    Model {
        #[arg(long)]
        grid_spacing: Option<f64>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Generate virtual participants.
    Synth {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        participants: Option<usize>,
    },
    /// Spatio-spectral decomposition of one recording.
    Ssd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n_components: Option<usize>,
    },
    /// Single-dipole fits of every pattern in an ssd.json.
    Fit {
        #[arg(long)]
        ssd: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate imaginary participants from one recording.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        min_shift: Option<f64>,
        /// Augment only the strongest k components.
        #[arg(long, conflicts_with = "quality_threshold")]
        strongest: Option<usize>,
        /// Augment only components whose fit reaches this subspace correlation.
        #[arg(long)]
        quality_threshold: Option<f64>,
    },
    /// Leave-one-participant-out comparison of N=1 against N>1.
    Eval {
        /// Directory of recording directories; a synthetic scene is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        participants: Option<usize>,
    },
    /// Re-render results.csv and the summary table from a results.json.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<EvalConfig> {
    match &common.config {
        Some(p) => EvalConfig::from_toml_file(p),
        None => Ok(EvalConfig::default()),
    }
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required for this command"))
}

fn load_model(path: Option<&Path>, cfg: &EvalConfig) -> Result<HeadModel> {
    match path {
        Some(p) => HeadModel::load(p),
        None => HeadModel::build(cfg.headmodel.clone()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SourceFile {
    participant: usize,
    file: String,
    /// `[sources, samples]`, little-endian f32, row-major.
    shape: [usize; 2],
}

#[derive(Serialize)]
struct GroundTruthFile {
    #[serde(flatten)]
    truth: GroundTruth,
    source_time_courses: Vec<SourceFile>,
}

fn synth(common: &Common, model: Option<&Path>, participants: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = participants {
        cfg.scene.n_participants = n;
    }
    if let Some(s) = common.seed {
        cfg.scene.seed = s;
    }
    let out = out_dir(common)?;
    let model = load_model(model, &cfg)?;
    let scene = Scene::new(&model, cfg.scene.clone())?;
    let dataset = SyntheticDataset { scene: &scene };
    let mut truths = Vec::new();
    let mut files = Vec::new();
    for i in 0..scene.config().n_participants {
        let p = scene.participant(i)?;
        let dir = out.join(harness::Dataset::id(&dataset, i));
        write_recording(&p.recording, &dir)?;
        let s = &p.source_time_courses;
        let mut bytes = Vec::with_capacity(s.len() * 4);
        for r in 0..s.nrows() {
            for c in 0..s.ncols() {
                bytes.extend_from_slice(&(s[(r, c)] as f32).to_le_bytes());
            }
        }
        fs::write(dir.join("sources.f32"), bytes)?;
        files.push(SourceFile {
            participant: i,
            file: format!("{}/sources.f32", harness::Dataset::id(&dataset, i)),
            shape: [s.nrows(), s.ncols()],
        });
        truths.push(p.truth);
    }
    write_json(
        &out.join("ground_truth.json"),
        &GroundTruthFile {
            truth: scene.ground_truth(truths),
            source_time_courses: files,
        },
    )
}

fn ssd(common: &Common, input: &Path, n_components: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let rec = read_recording(input)?;
    let result = ssd_decompose(&rec, &cfg.ssd, n_components)?;
    let out = out_dir(common)?;
    let path = if out.extension().is_some_and(|e| e == "json") { out.to_path_buf() } else { out.join("ssd.json") };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    SsdFile::from_result(&result, rec.channel_labels()).save(&path)
}

fn fit(common: &Common, ssd_path: &Path, model: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let model = load_model(model, &cfg)?;
    let file = SsdFile::load(ssd_path)?;
    if file.channel_labels != model.channel_labels() {
        return Err(Error::rejected("ssd.json channels do not match the head model electrodes"));
    }
    let dec = file.decomposition()?;
    let scanner = MusicScanner::new(&model);
    let fits = (0..dec.n_components())
        .map(|j| scanner.fit(&pattern(&dec, j), j))
        .collect::<Result<Vec<DipoleFit>>>()?;
    let out = out_dir(common)?;
    let path = if out.extension().is_some_and(|e| e == "json") { out.to_path_buf() } else { out.join("fits.json") };
    write_json(&path, &fits)
}

#[allow(clippy::too_many_arguments)]
fn augment(
    common: &Common,
    input: &Path,
    model: Option<&Path>,
    n: Option<usize>,
    min_shift: Option<f64>,
    strongest: Option<usize>,
    quality_threshold: Option<f64>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let model = load_model(model, &cfg)?;
    let mut aug = cfg.augmentation(common.seed.unwrap_or(0));
    if let Some(n) = n {
        aug.n_variants = n;
    }
    if let Some(m) = min_shift {
        aug.min_shift = m;
    }
    if let Some(count) = strongest {
        aug.components = ComponentSelection::Strongest { count };
    }
    if let Some(threshold) = quality_threshold {
        aug.components = ComponentSelection::QualityGated { threshold };
    }
    let rec = read_recording(input)?;
    let scanner = MusicScanner::new(&model);
    let generated = generate_participant(&rec, &scanner, &aug, &cfg.ssd)?;
    let out = out_dir(common)?;
    let stem = input
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    for (j, v) in generated.variants.iter().enumerate() {
        write_recording(v, &out.join(format!("{stem}_v{}", j + 1)))?;
    }
    write_json(&out.join("augmentation_report.json"), &generated.report)
}

fn eval(
    common: &Common,
    data: Option<&Path>,
    model: Option<&Path>,
    k: Option<usize>,
    n: Option<usize>,
    seeds: Option<Vec<u64>>,
    participants: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(n) = n {
        cfg.n_variants = n;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(s) = common.seed {
        cfg.scene.seed = s;
    }
    if let Some(p) = participants {
        cfg.scene.n_participants = p;
    }
    let out = out_dir(common)?;
    let model = load_model(model, &cfg)?;
    let scanner = MusicScanner::new(&model);
    let result = match data {
        Some(dir) => loso_evaluate(&DirectoryDataset::scan(dir)?, &scanner, &cfg)?,
        None => {
            let scene = Scene::new(&model, cfg.scene.clone())?;
            loso_evaluate(&SyntheticDataset { scene: &scene }, &scanner, &cfg)?
        }
    };
    for (id, reason) in &result.excluded {
        eprintln!("excluded {id}: {reason}");
    }
    print!("{}", harness::report(&result, out)?);
    Ok(())
}

fn report(common: &Common, results: &Path) -> Result<()> {
    let result: EvalResult = serde_json::from_str(&fs::read_to_string(results)?)?;
    let out = out_dir(common)?;
    print!("{}", harness::report(&result, out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("DIPOLEFORGE_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| Error::config(format!("DIPOLEFORGE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::config(e.to_string()))?;
    }
    let common = &cli.common;
    match cli.command {
        Command::Model { grid_spacing, no_cache } => {
            let mut cfg = load_config(common)?.headmodel;
            if let Some(s) = grid_spacing {
                cfg.grid_spacing = s;
            }
            HeadModel::build(cfg)?.save(out_dir(common)?, !no_cache)
        }
        Command::Synth { model, participants } => synth(common, model.as_deref(), participants),
        Command::Ssd { input, n_components } => ssd(common, &input, n_components),
        Command::Fit { ssd: path, model } => fit(common, &path, model.as_deref()),
        Command::Augment {
            input,
            model,
            n,
            min_shift,
            strongest,
            quality_threshold,
        } => augment(common, &input, model.as_deref(), n, min_shift, strongest, quality_threshold),
        Command::Eval {
            data,
            model,
            k,
            n,
            seeds,
            participants,
        } => eval(common, data.as_deref(), model.as_deref(), k, n, seeds, participants),
        Command::Report { results } => report(common, &results),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
