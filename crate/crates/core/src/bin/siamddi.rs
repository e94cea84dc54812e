use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siamddi::config::RunConfig;
use siamddi::data::{
    build_pairs, read_interactions, read_manifest, write_pairs, FetchConfig, Fetcher,
    UreqTransport, PUBCHEM_BASE_URL,
};
use siamddi::eval::EvalReport;
use siamddi::pipeline::{
    cmd_baseline, cmd_eval, cmd_predict, resolve_config, restore_trainer, train, BaselineKind,
    Dataset, Overrides,
};
use siamddi::Error;

/// Siamese metric learning for drug-drug interaction prediction.
#[derive(Parser)]
#[command(name = "siamddi", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Shared {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Image directory.
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    /// Manifest CSV (`drug_id,name,image_path`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Interactions CSV (`drug_id_a,drug_id_b,label`).
    #[arg(long, global = true)]
    interactions: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Report output; `.json` selects the JSON form.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// euclidean, manhattan, hellinger or jaccard.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// adam, rmsprop, adadelta or nadam.
    #[arg(long, global = true)]
    optimizer: Option<String>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    /// Prepend the spatial transformer to both branches.
    #[arg(long, global = true)]
    stn: bool,
    /// Rotate evaluation images by 90 degrees.
    #[arg(long, global = true)]
    rotate_eval: bool,
    /// Decision threshold; a pair interacts when its distance is at or above it.
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

impl Shared {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [
            ("seed", self.seed.map(|v| v.to_string())),
            ("images", path(&self.images)),
            ("manifest", path(&self.manifest)),
            ("interactions", path(&self.interactions)),
            ("checkpoint", path(&self.checkpoint)),
            ("report", path(&self.report)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("metric", self.metric.clone()),
            ("optimizer", self.optimizer.clone()),
            ("lr", self.lr.map(|v| v.to_string())),
            ("margin", self.margin.map(|v| v.to_string())),
            ("stn", self.stn.then(|| "true".to_owned())),
            ("rotate_eval", self.rotate_eval.then(|| "true".to_owned())),
            ("threshold", self.threshold.map(|v| v.to_string())),
        ] {
            if let Some(v) = v {
                o.set(k, v);
            }
        }
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Download a PNG for every manifest drug id from PubChem.
    Fetch {
        #[arg(long, default_value = PUBCHEM_BASE_URL)]
        base_url: String,
        /// Requested size such as 500x500; defaults to the configured image size.
        #[arg(long)]
        image_size: Option<String>,
    },
    /// Canonicalize an interactions list into deduplicated pairs.
    BuildPairs {
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the Siamese network and write a checkpoint.
    Train {
        /// Probe a small learning-rate grid before training.
        #[arg(long)]
        line_search: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Distance and verdict for two images.
    Predict { image_a: PathBuf, image_b: PathBuf },
    /// Run the ssim or autoencoder baseline.
    Baseline {
        #[arg(long, default_value = "ssim")]
        kind: String,
        /// bce or cosine, for the autoencoder.
        #[arg(long)]
        criterion: Option<String>,
    },
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> siamddi::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn print_report(report: &EvalReport) {
    print!("{}", report.to_text());
    println!("report_json={}", report.to_json());
}

fn run(cli: Cli) -> siamddi::Result<()> {
    let overrides = cli.shared.overrides();
    let config_file = cli.shared.config.as_deref();
    match cli.command {
        Command::Fetch {
            base_url,
            image_size,
        } => {
            let cfg = resolve_config(config_file, &overrides)?;
            let manifest = read_manifest(required(&cfg.manifest, "manifest")?)?;
            let dir = required(&cfg.images, "images")?;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let fetch_cfg = FetchConfig {
                base_url,
                image_size: image_size.unwrap_or_else(|| format!("{0}x{0}", cfg.image_size)),
                ..FetchConfig::default()
            };
            let mut fetcher = Fetcher::new(UreqTransport::default(), fetch_cfg);
            let (mut fetched, mut skipped) = (0, 0);
            for rec in &manifest {
                let path = rec.resolve_image(dir);
                if path.exists() {
                    skipped += 1;
                    continue;
                }
                fetcher.fetch_to(&rec.drug_id, &path)?;
                println!("fetched cid={} path={}", rec.drug_id, path.display());
                fetched += 1;
            }
            println!(
                "fetched={fetched} skipped={skipped} requests={}",
                fetcher.requests()
            );
        }
        Command::BuildPairs { output } => {
            let cfg = resolve_config(config_file, &overrides)?;
            let manifest = read_manifest(required(&cfg.manifest, "manifest")?)?;
            let rows = read_interactions(required(&cfg.interactions, "interactions")?)?;
            let pairs = build_pairs(&manifest, &rows)?;
            write_pairs(&output, &pairs)?;
            let positives = pairs.iter().filter(|p| p.interacts()).count();
            println!(
                "pairs={} positives={positives} negatives={} output={}",
                pairs.len(),
                pairs.len() - positives,
                output.display()
            );
        }
        Command::Train { line_search } => {
            let mut overrides = overrides;
            if line_search {
                overrides.set("line_search", true);
            }
            let cfg = resolve_config(config_file, &overrides)?;
            let checkpoint = required(&cfg.checkpoint, "checkpoint")?.to_path_buf();
            let dataset = Dataset::load(&cfg)?;
            let outcome = train(cfg, &dataset, &mut |e| println!("{e}"))?;
            let t = &outcome.trainer;
            println!(
                "checkpoint={} threshold={} epochs={}",
                checkpoint.display(),
                t.threshold.unwrap_or(f64::NAN),
                t.epochs_done
            );
        }
        Command::Eval => {
            let ck = required(&cli.shared.checkpoint, "checkpoint")?;
            let mut trainer = restore_trainer(ck, config_file, &overrides)?;
            print_report(&cmd_eval(&mut trainer)?);
        }
        Command::Predict { image_a, image_b } => {
            let ck = required(&cli.shared.checkpoint, "checkpoint")?;
            let mut trainer = restore_trainer(ck, config_file, &overrides)?;
            println!("{}", cmd_predict(&mut trainer, &image_a, &image_b)?);
        }
        Command::Baseline { kind, criterion } => {
            let mut overrides = overrides;
            if let Some(c) = criterion {
                overrides.set("criterion", c);
            }
            let cfg: RunConfig = resolve_config(config_file, &overrides)?;
            print_report(&cmd_baseline(&cfg, kind.parse::<BaselineKind>()?)?);
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::Fetch(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: kind={} message={}",
                e.kind(),
                one_line(&e.to_string())
            );
            ExitCode::from(exit_code(&e))
        }
    }
}
