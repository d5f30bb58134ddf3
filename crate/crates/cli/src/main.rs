use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freqfuse::detector::{self, LinearScorer};
use freqfuse::eval::{self, Label, ScoreSet};
use freqfuse::features::FeatureKind;
use freqfuse::fusion::{self, CalibrationProtocol, FusionRule};
use freqfuse::harness::pipeline::{self, ExtractContext, RunConfig};
use freqfuse::harness::{self, report, DatasetManifest, FeatureCache, ManifestEntry, Split};

#[derive(Parser)]
#[command(name = "freqfuse", version, about = "Frequency-feature face manipulation detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute feature vectors for a manifest split and write them as CSV
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kind: FeatureKind,
        #[arg(long)]
        split: Option<Split>,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a scorer for one feature kind on the train split
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kind: FeatureKind,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a manifest split with a trained model
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Report D-EER and operating points of a score CSV
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Also write the DET curve as SVG
        #[arg(long)]
        det: Option<PathBuf>,
        /// BPCER targets at which to report APCER
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.05")]
        targets: Vec<f64>,
    },
    /// Fuse two or more score CSVs, optionally calibrating each first
    Fuse {
        /// Score CSVs to fuse (repeat the flag)
        #[arg(long = "scores", required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "min")]
        rule: FusionRule,
        #[arg(long, default_value = "default")]
        calibration: CalibrationProtocol,
        /// Development score CSVs, one per --scores, used for calibration
        #[arg(long = "dev", num_args = 1..)]
        dev: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic spliced-face corpus with a manifest
    Synth {
        #[arg(long, default_value_t = 200)]
        bonafide: usize,
        #[arg(long, default_value_t = 200)]
        attack: usize,
        /// Output directory (defaults to --out-dir)
        dir: Option<PathBuf>,
    },
    /// Full pipeline: extract, train, score, calibrate, fuse and report
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Lib(freqfuse::Error),
}

impl From<freqfuse::Error> for Failure {
    fn from(e: freqfuse::Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}

fn load_config(g: &Global) -> CliResult<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| io_error(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Lib(freqfuse::Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn split_entries(m: &DatasetManifest, split: Option<Split>) -> Vec<(usize, &ManifestEntry)> {
    m.entries
        .iter()
        .enumerate()
        .filter(|(_, e)| split.is_none_or(|s| e.split == s))
        .collect()
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli.global)?;
    let pool = pipeline::thread_pool(cfg.jobs)?;
    let cache = FeatureCache::new(cfg.cache_dir.clone());
    let ctx = ExtractContext {
        preprocess: &cfg.preprocess,
        dim_side: cfg.dim_side,
        cache: &cache,
    };

    match cli.command {
        Command::Extract {
            manifest,
            kind,
            split,
            output: out,
        } => {
            let m = harness::read_manifest(&manifest)?;
            let entries = split_entries(&m, split);
            let vectors = pool.install(|| ctx.vectors(&entries, &[kind], None))?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            let dim = vectors.first().map_or(0, |v| v[0].len());
            let mut header = vec!["sample_id".to_owned(), "label".into(), "split".into()];
            header.extend((0..dim).map(|i| format!("f{i}")));
            w.write_record(&header).map_err(freqfuse::Error::from)?;
            for ((_, e), v) in entries.iter().zip(&vectors) {
                let mut rec = vec![e.id.clone(), e.label.to_string(), e.split.to_string()];
                rec.extend(v[0].values.iter().map(f64::to_string));
                w.write_record(&rec).map_err(freqfuse::Error::from)?;
            }
            w.flush().map_err(|e| io_error(Path::new("<output>"), e))?;
            eprintln!(
                "extracted {} vectors ({} cached, {} computed)",
                vectors.len(),
                cache.hits(),
                cache.misses()
            );
        }
        Command::Train {
            manifest,
            kind,
            model,
        } => {
            kind.validate()?;
            let m = harness::read_manifest(&manifest)?;
            let train = split_entries(&m, Some(Split::Train));
            let mut samples: Vec<_> = pool
                .install(|| ctx.vectors(&train, &[kind], None))?
                .into_iter()
                .zip(&train)
                .map(|(mut v, (_, e))| (v.remove(0), e.label))
                .collect();
            if let Some(a) = cfg.augment_config() {
                let aug = pool.install(|| ctx.vectors(&train, &[kind], Some(&a)))?;
                samples.extend(aug.into_iter().zip(&train).map(|(mut v, (_, e))| (v.remove(0), e.label)));
            }
            let report = detector::train_with_report(&samples, &cfg.train_config())?;
            report.model.save(&model)?;
            eprintln!(
                "trained {kind} on {} samples, {} steps, final loss {:.6}",
                samples.len(),
                report.steps,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Score {
            manifest,
            model,
            split,
            output: out,
        } => {
            let m = harness::read_manifest(&manifest)?;
            let scorer = LinearScorer::load(&model)?;
            let entries = split_entries(&m, Some(split));
            let scores = pool.install(|| -> freqfuse::Result<ScoreSet> {
                let v = ctx.vectors(&entries, &[scorer.kind], None)?;
                let refs: Vec<_> = v.iter().map(|r| &r[0]).collect();
                pipeline::score_vectors(&scorer, &entries, &refs)
            })?;
            scores.write_csv(output(out.as_deref())?)?;
        }
        Command::Eval {
            scores,
            det,
            targets,
        } => {
            let s = ScoreSet::read_csv_file(&scores)?;
            let e = eval::d_eer(&s)?;
            println!(
                "samples: {} (bonafide {}, attack {})",
                s.len(),
                s.count(Label::Bonafide),
                s.count(Label::Attack)
            );
            println!("d_eer: {:.6}", e.eer);
            println!("eer_threshold: {:.6}", e.threshold);
            for t in targets {
                let th = eval::threshold_for_bpcer(&s, t)?;
                let (apcer, bpcer) = eval::rates_at(&s, th)?;
                println!("bpcer_target {t}: threshold {th:.6} apcer {apcer:.6} bpcer {bpcer:.6}");
            }
            if let Some(path) = det {
                let curve = eval::det_curve(&s)?;
                let title = scores.file_stem().map_or("scores".into(), |n| n.to_string_lossy());
                std::fs::write(&path, report::det_svg(&title, &curve, &e))
                    .map_err(|err| io_error(&path, err))?;
            }
        }
        Command::Fuse {
            scores,
            rule,
            calibration,
            dev,
            output: out,
        } => {
            if scores.len() < 2 {
                return Err(Failure::Usage("fuse needs at least two --scores files".into()));
            }
            let sets = scores
                .iter()
                .map(|p| ScoreSet::read_csv_file(p))
                .collect::<freqfuse::Result<Vec<_>>>()?;
            let sets = match calibration {
                CalibrationProtocol::Default if dev.is_empty() => sets,
                _ => {
                    if dev.len() != sets.len() {
                        return Err(Failure::Usage(format!(
                            "calibration needs one --dev file per --scores file ({} given, {} expected)",
                            dev.len(),
                            sets.len()
                        )));
                    }
                    sets.iter()
                        .zip(&dev)
                        .map(|(s, d)| {
                            let c = fusion::calibrate(&ScoreSet::read_csv_file(d)?, calibration)?;
                            Ok(fusion::apply_calibration(&c, s))
                        })
                        .collect::<freqfuse::Result<Vec<_>>>()?
                }
            };
            fusion::fuse(&sets, &rule)?.write_csv(output(out.as_deref())?)?;
        }
        Command::Synth {
            bonafide,
            attack,
            dir,
        } => {
            let dir = dir.unwrap_or(cfg.out_dir.clone());
            let m = pool.install(|| harness::generate_synthetic_corpus(bonafide, attack, cfg.seed, &dir))?;
            eprintln!(
                "wrote {} images and {}",
                m.len(),
                dir.join("manifest.jsonl").display()
            );
        }
        Command::Run { manifest } => {
            let m = harness::read_manifest(&manifest)?;
            let summary = pipeline::run_pipeline_with_cache(&m, &cfg, &cache)?;
            for s in summary.models.iter().chain(&summary.fused) {
                println!("{}: test D-EER {:.4}", s.name, s.test_d_eer);
            }
            let total = summary.cache_hits + summary.cache_misses;
            eprintln!(
                "feature cache: {} of {} vectors reused; outputs in {}",
                summary.cache_hits,
                total,
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}
