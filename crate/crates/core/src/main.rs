use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use attrgan::attr_denoise::{denoise_dataset, DenoiseParams};
use attrgan::attr_encoder::{tokenize_attributes, AttrEncoder};
use attrgan::attr_report::{audit_attribute, write_audit};
use attrgan::corpus::{
    corrupt_attributes, generate_synthetic_dataset, load_dataset, load_rgb_png, load_split_dir, write_relabelled,
    ShapeSpec, Split,
};
use attrgan::evalkit::{
    emit_grid, emit_metric_plot, inception_score, load_scorer, run_ablation, save_scorer, train_scorer,
    ClassifierConfig, DEFAULT_SPLITS,
};
use attrgan::rng::{stream, Purpose};
use attrgan::trainer::checkpoint::restore_module;
use attrgan::trainer::{train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "attrgan", version, about = "Attribute-conditioned multi-stage GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, corrupt or validate a synthetic corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Attribute encoder utilities.
    #[command(subcommand)]
    Attr(AttrCmd),
    /// Clean the training split's attribute labels.
    Denoise {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scoring, ablation tables and figures.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Before/after sheet and grid for one attribute.
    Audit {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        attr: usize,
        /// Clean labels to measure agreement against.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value = "audit")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Generate {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 15)]
        train_classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Flip training labels and write the corrupted copy plus its flip log.
    Corrupt {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        flip_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Validate {
        #[arg(long)]
        root: PathBuf,
    },
}

#[derive(Subcommand)]
enum AttrCmd {
    /// Print the global and local embeddings of a 0/1 attribute string.
    Encode {
        #[arg(long)]
        attrs: String,
        /// Training checkpoint to take the encoder weights from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ScorerArgs {
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    splits: usize,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Train the scoring classifier on a dataset root's test split.
    TrainScorer {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inception Score of every PNG in a directory.
    Score {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPLITS)]
        splits: usize,
    },
    /// Score the latest checkpoint of every `*.cfg` arm in a directory.
    Ablation {
        #[arg(long)]
        arms: PathBuf,
        #[command(flatten)]
        scoring: ScorerArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tile the PNGs of a directory into one grid.
    Grid {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Line plot of a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png") && !p.to_string_lossy().ends_with(".mask.png"))
        .collect();
    files.sort();
    Ok(files)
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => bail!("attribute string may only contain 0 and 1, found {c:?}"),
        })
        .collect()
}

fn corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Generate { root, seed, classes, train_classes, per_class, size } => {
            let corpus = generate_synthetic_dataset(&ShapeSpec::new(size, classes), per_class, train_classes, seed, &root)?;
            println!("wrote {} train and {} test samples to {}", corpus.train.len(), corpus.test.len(), root.display());
        }
        CorpusCmd::Corrupt { root, out, flip_rate, seed } => {
            let train = load_dataset(&root, Split::Train)?;
            let (noisy, log) = corrupt_attributes(&train, flip_rate, seed)?;
            write_relabelled(&noisy, &Split::Train.dir(&root), &Split::Train.dir(&out))?;
            let test = load_dataset(&root, Split::Test)?;
            write_relabelled(&test, &Split::Test.dir(&root), &Split::Test.dir(&out))?;
            fs::write(out.join("flips.csv"), log.to_csv())?;
            println!("flipped {} of {} bits", log.flips.len(), train.len() * train.num_attributes());
        }
        CorpusCmd::Validate { root } => {
            let train = load_dataset(&root, Split::Train)?;
            let test = load_dataset(&root, Split::Test)?;
            println!(
                "ok: {} train samples over {} classes, {} test samples over {} classes, {} attributes",
                train.len(),
                train.manifest.class_ids.len(),
                test.len(),
                test.manifest.class_ids.len(),
                train.num_attributes()
            );
        }
    }
    Ok(())
}

fn attr(cmd: AttrCmd) -> Result<()> {
    let AttrCmd::Encode { attrs, checkpoint, seed } = cmd;
    let bits = parse_bits(&attrs)?;
    let mut encoder = AttrEncoder::new(bits.len(), &mut stream(seed, Purpose::Init, 0));
    if let Some(path) = checkpoint {
        restore_module(&mut encoder, "attr_encoder", Checkpoint::load(&path)?.section("attr_encoder")?)?;
    }
    let emb = encoder.encode_attributes(&tokenize_attributes(&bits)?)?;
    let row = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    println!("global {}", row(emb.global_vec.data()));
    let d = emb.global_vec.len();
    for (i, id) in emb.token_ids.iter().enumerate() {
        println!("local {id} {}", row(&emb.local_mat.data()[i * d..(i + 1) * d]));
    }
    Ok(())
}

fn eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::TrainScorer { root, out, seed } => {
            let test = load_dataset(&root, Split::Test)?;
            let scorer = train_scorer(&test, &ClassifierConfig { seed, ..ClassifierConfig::default() })?;
            save_scorer(&scorer, &out)?;
            println!("scorer over {} classes, held-out accuracy {:.4}", scorer.class_ids.len(), scorer.holdout_accuracy);
        }
        EvalCmd::Score { images, scorer, splits } => {
            let scorer = load_scorer(&scorer)?;
            let imgs = pngs_in(&images)?.iter().map(|p| load_rgb_png(p)).collect::<attrgan::Result<Vec<_>>>()?;
            println!("IS {}", inception_score(&imgs.iter().collect::<Vec<_>>(), &scorer, splits)?);
        }
        EvalCmd::Ablation { arms, scoring, seed, out } => {
            let mut files: Vec<PathBuf> = fs::read_dir(&arms)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no *.cfg arm configs in {}", arms.display());
            }
            let configs: Vec<(String, TrainConfig)> = files
                .iter()
                .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), TrainConfig::load(p)?)))
                .collect::<Result<_>>()?;
            let test = load_dataset(&configs[0].1.dataset_root, Split::Test)?;
            let scorer = match scoring.scorer {
                Some(p) => load_scorer(&p)?,
                None => train_scorer(&test, &ClassifierConfig::default())?,
            };
            let table = run_ablation(&configs, &test, &scorer, scoring.splits, seed)?;
            print!("{}", table.to_csv());
            if table.is_partial() {
                eprintln!("warning: partial table, missing {}", table.missing.join(", "));
            }
            let (csv, png) = table.emit(&out.unwrap_or(arms))?;
            println!("wrote {} and {}", csv.display(), png.display());
        }
        EvalCmd::Grid { images, rows, cols, out } => {
            let files = pngs_in(&images)?;
            let imgs = files.iter().take(rows * cols).map(|p| load_rgb_png(p)).collect::<attrgan::Result<Vec<_>>>()?;
            emit_grid(&imgs, rows, cols, &out)?;
        }
        EvalCmd::Plot { metrics, out } => emit_metric_plot(&metrics, &out)?,
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Corpus(cmd) => corpus(cmd)?,
        Command::Attr(cmd) => attr(cmd)?,
        Command::Denoise { root, out, report, seed } => {
            let train_ds = load_dataset(&root, Split::Train)?;
            let params = DenoiseParams { seed, ..DenoiseParams::default() };
            let extractor = ClassifierConfig { seed, ..ClassifierConfig::default() };
            let (cleaned, rep) = denoise_dataset(&train_ds, &extractor, &params)?;
            write_relabelled(&cleaned, &Split::Train.dir(&root), &Split::Train.dir(&out))?;
            if let Ok(test) = load_dataset(&root, Split::Test) {
                write_relabelled(&test, &Split::Test.dir(&root), &Split::Test.dir(&out))?;
            }
            let names = &train_ds.manifest.attribute_names;
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&report, rep.to_text(names))?;
            fs::write(report.with_extension("csv"), rep.to_csv(names))?;
            print!("{}", rep.to_text(names));
        }
        Command::Train { config, resume } => {
            let cfg = TrainConfig::load(&config)?;
            let outcome = train(&cfg, resume.as_deref())?;
            if let Some(r) = outcome.last_report {
                println!("iteration {}: L_D {:.4} L_G {:.4}", outcome.trainer.iteration, r.l_d, r.l_g);
            }
            println!("metrics in {}", outcome.metrics.display());
        }
        Command::Eval(cmd) => eval(cmd)?,
        Command::Audit { before, after, attr, oracle, out } => {
            let b = load_split_dir(&before)?;
            let a = load_split_dir(&after)?;
            let o = oracle.map(|p| load_split_dir(&p)).transpose()?;
            let sheet = audit_attribute(&b, &a, attr, o.as_ref())?;
            write_audit(&sheet, &b, &out)?;
            println!("{}", sheet.summary());
        }
    }
    Ok(())
}
