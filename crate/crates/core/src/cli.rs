//! The `mmoments` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::bench::{
    self, report, similarity_heatmap, standard_ablation_configs, table5_configs, Harness,
    LabeledParams, ManifestKind, SyntheticParams,
};
use crate::feature_io::load_tensor;
use crate::knn::{KnnOptions, DEFAULT_K};
use crate::moments::{compute_embedding, Fusion, Level, MomentConfig};
use crate::retrieval::{build_index, load_index, rank, save_index, EmbeddingIndex};
use crate::selftest::{run_selftest, Fault};
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mmoments",
    version,
    about = "Motion embeddings from temporal moments of patch features"
)]
pub struct Cli {
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Report errors on stderr as one JSON object
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed feature files and write an MVIX index
    Embed(EmbedArgs),
    /// Print the header of an MVIX index
    IndexInfo(IndexInfoArgs),
    /// Rank candidates against a query video (TSV: rank, id, score)
    Retrieve(RetrieveArgs),
    /// Pairwise cosine similarity matrix of an index
    Heatmap(HeatmapArgs),
    /// Run a benchmark manifest and write JSON, CSV and Markdown reports
    Eval(EvalArgs),
    /// Generate a planted-signal dataset and its manifest
    GenSynth(GenSynthArgs),
    /// Run the planted-signal checks end to end
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Moment weights, one per order (e.g. 1,8,4)
    #[arg(long, value_delimiter = ',', value_name = "W")]
    pub weights: Option<Vec<f64>>,
    /// Number of moment orders; must match the number of weights
    #[arg(long, value_name = "K")]
    pub orders: Option<usize>,
    /// Features the moments are taken over
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// How weighted moment blocks are combined
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// L2-normalize each moment block before weighting
    #[arg(long, value_name = "BOOL")]
    pub per_moment_normalize: Option<bool>,
    /// Frame count recorded in the config
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    /// Full config as key=value text or a label like (1,8,4)-patch-concat
    #[arg(long, value_name = "TEXT")]
    pub config: Option<String>,
    /// File holding config text; explicit flags override it
    #[arg(long, value_name = "PATH")]
    pub config_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Patch,
    Frame,
    #[value(name = "patch_diff", alias = "patch-diff", alias = "diff")]
    PatchDiff,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FusionArg {
    Concat,
    Sum,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// MVFT files or directories of .mvft files
    #[arg(long, required = true, num_args = 1.., value_name = "PATH")]
    pub features: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output index path
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexInfoArgs {
    /// MVIX index
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// Also list every video id
    #[arg(long)]
    pub ids: bool,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// MVIX index
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// Query video id
    #[arg(long, value_name = "ID")]
    pub query: String,
    /// Candidate ids (default: every other video)
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub pool: Option<Vec<String>>,
    /// File with one candidate id per line
    #[arg(long, value_name = "PATH", conflicts_with = "pool")]
    pub pool_file: Option<PathBuf>,
    /// Print only the best N
    #[arg(long, value_name = "N")]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// MVIX index
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// CSV output (default: stdout)
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Also write an 8-bit greyscale PGM
    #[arg(long, value_name = "PATH")]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark manifest (JSON)
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Neighbours for labeled_knn manifests
    #[arg(long, value_name = "K", default_value_t = DEFAULT_K)]
    pub knn: usize,
    /// Let negative similarities vote in weighted kNN
    #[arg(long)]
    pub no_clamp: bool,
    /// Frame counts to sweep (e.g. 4,8,16,32,64)
    #[arg(long, value_delimiter = ',', value_name = "N")]
    pub sweep_frames: Option<Vec<usize>>,
    /// Pre-extracted features for one sweep count, as N=DIR (repeatable)
    #[arg(long, value_name = "N=DIR")]
    pub frames_dir: Vec<String>,
    /// Run the nine-row ablation table
    #[arg(long)]
    pub ablation: bool,
    /// Run every weighting x level x fusion combination
    #[arg(long, conflicts_with = "ablation")]
    pub ablation_grid: bool,
    /// File with one config (text or label) per line to sweep
    #[arg(long, value_name = "PATH", conflicts_with_all = ["ablation", "ablation_grid"])]
    pub sweep_configs: Option<PathBuf>,
    /// Directory for report files
    #[arg(long, value_name = "DIR", default_value = "reports")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetKind {
    Triplet,
    Labeled,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory (manifest.json and features/)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Triplet benchmark or labeled kNN set
    #[arg(long, value_enum, default_value = "triplet")]
    pub kind: DatasetKind,
    /// Triplets, each with its own motion (triplet kind)
    #[arg(long, default_value_t = 20)]
    pub groups: usize,
    /// Videos per triplet: reference, positive, hard negatives (triplet kind)
    #[arg(long, default_value_t = 5)]
    pub per_group: usize,
    /// Classes (labeled kind)
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Videos per class (labeled kind)
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    /// Query videos per class (labeled kind)
    #[arg(long, default_value_t = 5)]
    pub queries_per_class: usize,
    /// Per-video perturbation of the class motion (labeled kind)
    #[arg(long, default_value_t = 0.3)]
    pub jitter: f64,
    /// Frames per video
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    /// Patches per frame
    #[arg(long, default_value_t = 8)]
    pub patches: usize,
    /// Feature width
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Scale of the static appearance component
    #[arg(long, default_value_t = 1.0)]
    pub appearance: f64,
    /// Scale of the motion component
    #[arg(long, default_value_t = 1.0)]
    pub motion: f64,
    /// Standard deviation of the per-value noise
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Also write the log to this file
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long, hide = true, value_name = "FAULT")]
    pub inject_fault: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<MomentConfig, Error> {
        let mut config = MomentConfig::default();
        if let Some(path) = &self.config_file {
            config = parse_config(read_text(path)?.trim())?;
        }
        if let Some(text) = &self.config {
            config = parse_config(text)?;
        }
        if let Some(w) = &self.weights {
            config.weights = w.clone();
        }
        if let Some(k) = self.orders {
            if k != config.weights.len() {
                return Err(Error::Usage(format!(
                    "--orders {k} does not match {} weights",
                    config.weights.len()
                )));
            }
        }
        if let Some(level) = self.level {
            config.level = match level {
                LevelArg::Patch => Level::Patch,
                LevelArg::Frame => Level::Frame,
                LevelArg::PatchDiff => Level::PatchDiff,
            };
        }
        if let Some(fusion) = self.fusion {
            config.fusion = match fusion {
                FusionArg::Concat => Fusion::Concat,
                FusionArg::Sum => Fusion::Sum,
            };
        }
        if let Some(b) = self.per_moment_normalize {
            config.per_moment_normalize = b;
        }
        if let Some(n) = self.frames {
            config.frames = n;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Accepts canonical `key=value;...` text or a label such as `(1,8,4)-patch-concat`.
fn parse_config(text: &str) -> Result<MomentConfig, Error> {
    let config = if text.starts_with('(') {
        MomentConfig::from_label(text)?
    } else {
        text.parse::<MomentConfig>()?
    };
    Ok(config)
}

fn open_index(path: &Path) -> Result<EmbeddingIndex, Error> {
    load_index(path).map_err(|e| Error::at(path, e))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::at(path, e))
}

fn feature_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::at(input, e))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "mvft"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Usage("no feature files".into()));
    }
    Ok(files)
}

fn cmd_embed(args: &EmbedArgs, out: &mut dyn Write) -> Result<(), Error> {
    let config = args.config.resolve()?;
    let files = feature_files(&args.features)?;
    let results: Vec<Result<_, Error>> = files
        .par_iter()
        .map(|path| {
            let tensor = load_tensor(path).map_err(|e| Error::at(path, e))?;
            compute_embedding(&tensor, &config).map_err(|e| Error::at(path, e))
        })
        .collect();
    let mut embeddings = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => embeddings.push(e),
            Err(e) => failures.push(e),
        }
    }
    if let Some(first) = failures.first() {
        let listing: Vec<String> = failures.iter().map(Error::to_string).collect();
        let message = format!(
            "{} of {} files failed:\n{}",
            failures.len(),
            files.len(),
            listing.join("\n")
        );
        return Err(if first.is_io() {
            Error::Io(std::io::Error::other(message))
        } else {
            Error::Usage(message)
        });
    }
    let index = build_index(&embeddings)?;
    save_index(&index, &args.out).map_err(|e| Error::at(&args.out, e))?;
    writeln!(
        out,
        "indexed {} videos, dim {}, config {} ({})",
        index.len(),
        index.dim(),
        config.label(),
        index.config_digest()
    )?;
    Ok(())
}

fn cmd_index_info(args: &IndexInfoArgs, out: &mut dyn Write) -> Result<(), Error> {
    let index = open_index(&args.index)?;
    writeln!(out, "videos\t{}", index.len())?;
    writeln!(out, "dim\t{}", index.dim())?;
    writeln!(out, "config_digest\t{}", index.config_digest())?;
    if args.ids {
        for id in index.ids() {
            writeln!(out, "{id}")?;
        }
    }
    Ok(())
}

fn cmd_retrieve(args: &RetrieveArgs, out: &mut dyn Write) -> Result<(), Error> {
    let index = open_index(&args.index)?;
    let pool = match (&args.pool, &args.pool_file) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(path)) => Some(
            read_text(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        ),
        (None, None) => None,
    };
    let list = rank(&index, &args.query, pool.as_deref())?;
    let top = args.top.unwrap_or(usize::MAX);
    for (i, e) in list.entries.iter().take(top).enumerate() {
        writeln!(out, "{}\t{}\t{:.6}", i + 1, e.id, e.score)?;
    }
    Ok(())
}

fn cmd_heatmap(args: &HeatmapArgs, out: &mut dyn Write) -> Result<(), Error> {
    let index = open_index(&args.index)?;
    let matrix = similarity_heatmap(&index.embeddings())?;
    match &args.csv {
        Some(path) => fs::write(path, matrix.to_csv())?,
        None => out.write_all(matrix.to_csv().as_bytes())?,
    }
    if let Some(path) = &args.pgm {
        matrix.write_pgm(std::io::BufWriter::new(fs::File::create(path)?))?;
    }
    Ok(())
}

fn parse_frame_dirs(specs: &[String], base: &Path) -> Result<BTreeMap<usize, PathBuf>, Error> {
    specs
        .iter()
        .map(|s| {
            let (n, dir) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--frames-dir expects N=DIR, got {s:?}")))?;
            let n = n
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("bad frame count in {s:?}")))?;
            Ok((n, base.join(dir)))
        })
        .collect()
}

fn announce(out: &mut dyn Write, paths: &[PathBuf]) -> Result<(), Error> {
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), Error> {
    let manifest =
        bench::load_manifest(&args.manifest).map_err(|e| Error::at(&args.manifest, e))?;
    let config = args.config.resolve()?;
    let kind = manifest.kind;
    let mut harness = Harness::new(manifest);
    let dir = &args.out_dir;

    let sweep: Option<Vec<MomentConfig>> = if args.ablation {
        Some(table5_configs())
    } else if args.ablation_grid {
        Some(standard_ablation_configs())
    } else if let Some(path) = &args.sweep_configs {
        let text = read_text(path)?;
        Some(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(parse_config)
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };

    if kind == ManifestKind::LabeledKnn {
        if sweep.is_some() || args.sweep_frames.is_some() {
            return Err(Error::Usage("sweeps need a triplet manifest".into()));
        }
        let options = KnnOptions {
            k: args.knn,
            clamp_negative: !args.no_clamp,
        };
        let result = harness.run_knn(&config, options)?;
        let md = result.report.markdown(&result.label);
        let paths = report::write_report(dir, "knn", &result, &report::knn_csv(&result), &md)?;
        out.write_all(md.as_bytes())?;
        return announce(out, &paths);
    }

    if let Some(configs) = sweep {
        let rows = harness.ablation(&configs)?;
        let md = report::ablation_markdown(&rows);
        let paths =
            report::write_report(dir, "ablation", &rows, &report::ablation_csv(&rows), &md)?;
        out.write_all(md.as_bytes())?;
        return announce(out, &paths);
    }

    if let Some(counts) = &args.sweep_frames {
        let base = args.manifest.parent().unwrap_or(Path::new("."));
        let dirs = parse_frame_dirs(&args.frames_dir, base)?;
        let rows = harness.frame_sweep(&config, counts, &dirs)?;
        let md = report::frame_sweep_markdown(&config.label(), &rows);
        let paths =
            report::write_report(dir, "frames", &rows, &report::frame_sweep_csv(&rows), &md)?;
        out.write_all(md.as_bytes())?;
        return announce(out, &paths);
    }

    let result = harness.run_triplets(&config)?;
    let reports = [result];
    let md = report::triplet_markdown(&reports);
    let paths = report::write_report(
        dir,
        "triplet",
        &reports[0],
        &report::triplet_csv(&reports),
        &md,
    )?;
    out.write_all(md.as_bytes())?;
    if !reports[0].failures.is_empty() {
        writeln!(
            out,
            "{} videos failed and count as misses",
            reports[0].failures.len()
        )?;
    }
    announce(out, &paths)
}

fn cmd_gen_synth(args: &GenSynthArgs, seed: u64, out: &mut dyn Write) -> Result<(), Error> {
    let manifest = match args.kind {
        DatasetKind::Triplet => bench::generate_synthetic(
            &SyntheticParams {
                seed,
                groups: args.groups,
                per_group: args.per_group,
                frames: args.frames,
                patches: args.patches,
                dim: args.dim,
                appearance_confound: args.appearance,
                motion_signal: args.motion,
                noise: args.noise,
            },
            &args.out,
        )?,
        DatasetKind::Labeled => bench::generate_labeled(
            &LabeledParams {
                seed,
                classes: args.classes,
                per_class: args.per_class,
                queries_per_class: args.queries_per_class,
                frames: args.frames,
                patches: args.patches,
                dim: args.dim,
                appearance_confound: args.appearance,
                motion_signal: args.motion,
                jitter: args.jitter,
                noise: args.noise,
            },
            &args.out,
        )?,
    };
    writeln!(
        out,
        "wrote {} videos to {}",
        manifest.entries.len(),
        args.out.join("manifest.json").display()
    )?;
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs, seed: u64, out: &mut dyn Write) -> Result<bool, Error> {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("mean-only") => Some(Fault::MeanOnly),
        Some(other) => return Err(Error::Usage(format!("unknown fault {other:?}"))),
    };
    let report = run_selftest(seed, fault)?;
    let log = report.log();
    out.write_all(log.as_bytes())?;
    if let Some(path) = &args.log {
        fs::write(path, &log)?;
    }
    Ok(report.passed())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<bool, Error> {
    match &cli.command {
        Command::Embed(a) => cmd_embed(a, out).map(|_| true),
        Command::IndexInfo(a) => cmd_index_info(a, out).map(|_| true),
        Command::Retrieve(a) => cmd_retrieve(a, out).map(|_| true),
        Command::Heatmap(a) => cmd_heatmap(a, out).map(|_| true),
        Command::Eval(a) => cmd_eval(a, out).map(|_| true),
        Command::GenSynth(a) => cmd_gen_synth(a, cli.seed, out).map(|_| true),
        Command::Selftest(a) => cmd_selftest(a, cli.seed, out),
    }
}

fn report_error(err: &Error, json: bool, stderr: &mut dyn Write) {
    let written = if json {
        let body = serde_json::json!({
            "error": err.kind(),
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        });
        writeln!(stderr, "{body}")
    } else {
        writeln!(stderr, "error: {err}")
    };
    // nothing sensible left to do if stderr is gone
    let _ = written;
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            if json {
                report_error(&Error::Usage(e.to_string().trim().to_owned()), true, stderr);
            } else {
                let _ = write!(stderr, "{e}");
            }
            return 1;
        }
    };
    // buffered so the command can run inside a dedicated thread pool
    let mut buffer = Vec::new();
    let outcome = match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli, &mut buffer))),
        None => dispatch(&cli, &mut buffer),
    };
    let outcome =
        outcome.and_then(
            |ok| match stdout.write_all(&buffer).and_then(|_| stdout.flush()) {
                // a closed pipe (`| head`) is the reader's choice, not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(ok),
            },
        );
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            report_error(&e, cli.json_errors, stderr);
            e.exit_code()
        }
    }
}
